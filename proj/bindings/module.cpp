// Placeholder so the target exists before the real bindings land.
#include <pybind11/pybind11.h>
PYBIND11_MODULE(_core, m) { m.doc() = "wsod"; }
