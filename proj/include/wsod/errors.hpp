#pragma once

#include <stdexcept>
#include <string>

namespace wsod {

// Malformed or inconsistent input: unreadable files, schema violations,
// records that break dataset invariants. The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace wsod
