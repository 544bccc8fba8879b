#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wsod/dataset.hpp"
#include "wsod/maskout.hpp"
#include "wsod/model.hpp"

namespace wsod {

// An image viewed as a bag of candidate instances for one class. Positive
// bags carry the mask-out survivors; negative bags a seeded subsample of the
// image's proposals. Instance indices are proposal indices, sorted ascending.
struct Bag {
  std::string image_id;
  int image_index = 0;
  int label = 0;  // +1 or -1
  std::vector<int> instances;
};

struct MilModel {
  int class_index = 0;
  FeatureVector weights;
  double bias = 0.0;
};

struct MilConfig {
  int outer_iterations = 10;  // instance-selection / SGD alternations
  TrainConfig inner;          // step-B SGD settings
  double l2_coefficient = 1.0;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct BagBuildResult {
  std::vector<Bag> bags;
  // Images labeled with the class whose mask-out list was empty; they are
  // left out of the positive bags.
  std::vector<std::string> skipped_images;
};

// Builds the per-class bag collection from mask-out output. `top_m` bounds
// the negative-bag subsample size (mirroring the positive instance count).
// Throws when the class has no positive images.
BagBuildResult build_bags(const Dataset& dataset, const MaskoutResult& maskout,
                          int class_index, int top_m, std::uint64_t rng_seed);

// Alternating optimization of the multiple-instance objective
//   0.5 * l2 * |w|^2 - sum_i log sigma(y_i * (w . phi(x_i, z_i*) + bias))
// with z_i* = argmax over the bag's instances of w . phi (ties to the lowest
// proposal index). Step B runs minibatch SGD with the selections frozen.
// Deterministic given cfg.rng_seed; starts from w = 0.
MilModel train_mil(const std::vector<Bag>& bags, const Dataset& dataset,
                   int class_index, const MilConfig& cfg);

// The objective value at (w, bias) with fresh argmax selections.
double mil_objective(const std::vector<Bag>& bags, const Dataset& dataset,
                     const FeatureVector& weights, double bias,
                     double l2_coefficient);

// Step-B surrogate (selections fixed), exposed for gradient checks.
double mil_selected_loss(const std::vector<const FeatureVector*>& features,
                         const std::vector<int>& labels,
                         const FeatureVector& weights, double bias,
                         double l2_coefficient);

struct MilDetection {
  int proposal_index = 0;
  double score = 0.0;
};

// Highest-scoring proposal of the image under the MIL model; ties resolve to
// the lowest index.
MilDetection mil_detect(const MilModel& model, const ImageRecord& image);

}  // namespace wsod
