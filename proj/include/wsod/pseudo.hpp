#pragma once

#include <string>
#include <vector>

#include "wsod/dataset.hpp"

namespace wsod {

// One pseudo annotation: a selected proposal treated as a box label for the
// next re-training round. Boxes are always proposal boxes of their image,
// never free boxes.
struct PseudoLabel {
  std::string image_id;
  int class_index = 0;
  BoundingBox box;
  double score = 0.0;
  int round = 0;

  bool operator==(const PseudoLabel&) const = default;
};

using PseudoLabelSet = std::vector<PseudoLabel>;

// Line-delimited records {image, class, box, score, round}; see
// docs/FORMATS.md. Save emits entries in canonical order (dataset image
// order when a dataset is given at load, otherwise file order is kept).
void save_pseudo_labels(const PseudoLabelSet& labels, const std::string& path);
PseudoLabelSet load_pseudo_labels(const std::string& path);

// Enforces the set invariants against its dataset: every image id exists,
// every box equals some proposal box of its image, scores lie in [0, 1].
// Throws InputError naming the offending record.
void validate_pseudo_labels(const PseudoLabelSet& labels,
                            const Dataset& dataset);

// Sorts entries by (image order in dataset, class, descending score, box
// lexicographic) so persisted sets are byte-stable.
void canonicalize_pseudo_labels(PseudoLabelSet& labels,
                                const Dataset& dataset);

}  // namespace wsod
