#pragma once

#include <vector>

#include "wsod/dataset.hpp"
#include "wsod/model.hpp"
#include "wsod/pseudo.hpp"

namespace wsod {

struct MaskoutConfig {
  // Minimum unmasked classification score for a class to count as present.
  double score_threshold = 0.5;
  // Confident proposals kept per image per class.
  int top_m = 50;
  // A proposal is masked out together with region b when its IoU with b
  // exceeds this.
  double mask_threshold = 0.5;

  void validate() const;
};

struct MinedProposal {
  int proposal_index = 0;
  double drop = 0.0;  // f_c(image) - f_c(image with the proposal masked out)
};

// Per class: proposals ranked by descending score drop (ties broken by lower
// proposal index). Classes whose unmasked score stays below score_threshold
// get an empty list.
using ImageMaskoutResult = std::vector<std::vector<MinedProposal>>;

ImageMaskoutResult mine_confident(const LinearModel& model,
                                  const ImageRecord& image,
                                  const MaskoutConfig& cfg);

struct MaskoutResult {
  std::vector<ImageMaskoutResult> per_image;  // aligned with dataset order
};

MaskoutResult mine_dataset(const LinearModel& model, const Dataset& dataset,
                           const MaskoutConfig& cfg, int jobs = 1);

// The mined proposals as round-0 pseudo labels; drop values are clamped into
// [0, 1] to satisfy the pseudo-label score range.
PseudoLabelSet maskout_to_pseudo_labels(const MaskoutResult& result,
                                        const Dataset& dataset);

// Inverse mapping used by stages that consume a persisted P_0: boxes identify
// proposals by exact equality (first match wins). Drop values are the stored
// scores; ranking information beyond membership is not reconstructed.
MaskoutResult maskout_from_pseudo_labels(const PseudoLabelSet& labels,
                                         const Dataset& dataset,
                                         int num_classes);

}  // namespace wsod
