#include "wsod/mil.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "wsod/rng.hpp"

namespace wsod {
namespace {

double dot(const FeatureVector& w, const FeatureVector& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * x[i];
  return acc;
}

// Argmax instance under w; ties go to the lowest proposal index, which is the
// first entry because instances are sorted.
int select_instance(const Bag& bag, const Dataset& dataset,
                    const FeatureVector& w) {
  const auto& proposals =
      dataset.images[static_cast<std::size_t>(bag.image_index)].proposals;
  int best = bag.instances.front();
  double best_score =
      dot(w, proposals[static_cast<std::size_t>(best)].feature);
  for (std::size_t k = 1; k < bag.instances.size(); ++k) {
    const int idx = bag.instances[k];
    const double s = dot(w, proposals[static_cast<std::size_t>(idx)].feature);
    if (s > best_score) {
      best_score = s;
      best = idx;
    }
  }
  return best;
}

double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z))
                  : z - std::log1p(std::exp(z));
}

}  // namespace

void MilConfig::validate() const {
  if (outer_iterations < 1) {
    throw std::invalid_argument("mil config: outer_iterations must be >= 1");
  }
  if (l2_coefficient < 0.0) {
    throw std::invalid_argument("mil config: l2_coefficient must be >= 0");
  }
  inner.validate();
}

BagBuildResult build_bags(const Dataset& dataset, const MaskoutResult& maskout,
                          int class_index, int top_m,
                          std::uint64_t rng_seed) {
  if (maskout.per_image.size() != dataset.images.size()) {
    throw std::runtime_error("build_bags: mask-out result does not cover the "
                             "dataset");
  }
  BagBuildResult result;
  bool has_positive_image = false;
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    const auto& image = dataset.images[i];
    const bool positive = std::binary_search(image.labels.begin(),
                                             image.labels.end(), class_index);
    if (positive) {
      has_positive_image = true;
      const auto& per_class = maskout.per_image[i];
      const auto& mined =
          static_cast<std::size_t>(class_index) < per_class.size()
              ? per_class[static_cast<std::size_t>(class_index)]
              : std::vector<MinedProposal>{};
      if (mined.empty()) {
        result.skipped_images.push_back(image.id);
        continue;
      }
      Bag bag{image.id, static_cast<int>(i), +1, {}};
      for (const auto& m : mined) bag.instances.push_back(m.proposal_index);
      std::sort(bag.instances.begin(), bag.instances.end());
      result.bags.push_back(std::move(bag));
    } else {
      if (image.proposals.empty()) continue;
      Rng rng(derive_seed(rng_seed, "negative-bag",
                          static_cast<std::uint64_t>(class_index),
                          static_cast<std::uint64_t>(i)));
      Bag bag{image.id, static_cast<int>(i), -1,
              rng.sample_without_replacement(
                  static_cast<int>(image.proposals.size()), top_m)};
      result.bags.push_back(std::move(bag));
    }
  }
  if (!has_positive_image) {
    throw std::runtime_error("build_bags: class " +
                             std::to_string(class_index) +
                             " has no positive images; cannot train");
  }
  if (result.bags.empty() ||
      std::none_of(result.bags.begin(), result.bags.end(),
                   [](const Bag& b) { return b.label > 0; })) {
    throw std::runtime_error("build_bags: class " +
                             std::to_string(class_index) +
                             " has no usable positive bags; cannot train");
  }
  return result;
}

double mil_selected_loss(const std::vector<const FeatureVector*>& features,
                         const std::vector<int>& labels,
                         const FeatureVector& weights, double bias,
                         double l2_coefficient) {
  double loss = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const double z = dot(weights, *features[i]) + bias;
    loss -= log_sigmoid(labels[i] > 0 ? z : -z);
  }
  double sq = 0.0;
  for (double v : weights) sq += v * v;
  return loss + 0.5 * l2_coefficient * sq;
}

double mil_objective(const std::vector<Bag>& bags, const Dataset& dataset,
                     const FeatureVector& weights, double bias,
                     double l2_coefficient) {
  double loss = 0.0;
  for (const auto& bag : bags) {
    const int z = select_instance(bag, dataset, weights);
    const auto& f = dataset.images[static_cast<std::size_t>(bag.image_index)]
                        .proposals[static_cast<std::size_t>(z)]
                        .feature;
    const double score = dot(weights, f) + bias;
    loss -= log_sigmoid(bag.label > 0 ? score : -score);
  }
  double sq = 0.0;
  for (double v : weights) sq += v * v;
  return loss + 0.5 * l2_coefficient * sq;
}

MilModel train_mil(const std::vector<Bag>& bags, const Dataset& dataset,
                   int class_index, const MilConfig& cfg) {
  cfg.validate();
  if (bags.empty()) throw std::runtime_error("train_mil: no bags");
  const bool has_pos = std::any_of(bags.begin(), bags.end(),
                                   [](const Bag& b) { return b.label > 0; });
  const bool has_neg = std::any_of(bags.begin(), bags.end(),
                                   [](const Bag& b) { return b.label < 0; });
  if (!has_pos || !has_neg) {
    throw std::runtime_error(
        "train_mil: need at least one positive and one negative bag");
  }
  for (const auto& bag : bags) {
    if (bag.instances.empty()) {
      throw std::runtime_error("train_mil: bag for image '" + bag.image_id +
                               "' has no instances");
    }
  }

  MilModel model;
  model.class_index = class_index;
  model.weights.assign(static_cast<std::size_t>(dataset.feature_dim), 0.0);
  model.bias = 0.0;

  const int n = static_cast<int>(bags.size());
  Rng rng(derive_seed(cfg.rng_seed, "mil-train",
                      static_cast<std::uint64_t>(class_index)));

  std::vector<const FeatureVector*> selected(bags.size());
  std::vector<int> labels(bags.size());
  FeatureVector grad(model.weights.size());

  for (int outer = 0; outer < cfg.outer_iterations; ++outer) {
    // Step A: re-select the top instance of every bag under the current w.
    for (std::size_t i = 0; i < bags.size(); ++i) {
      const int z = select_instance(bags[i], dataset, model.weights);
      selected[i] =
          &dataset.images[static_cast<std::size_t>(bags[i].image_index)]
               .proposals[static_cast<std::size_t>(z)]
               .feature;
      labels[i] = bags[i].label;
    }
    // Step B: minibatch SGD on the selected instances. Gradients are scaled
    // to the sum-form objective.
    const int batch = std::max(1, std::min(cfg.inner.minibatch_size, n));
    for (int step = 0; step < cfg.inner.iterations; ++step) {
      std::fill(grad.begin(), grad.end(), 0.0);
      double grad_bias = 0.0;
      for (int s = 0; s < batch; ++s) {
        const int i = rng.uniform_int(0, n - 1);
        const FeatureVector& x = *selected[static_cast<std::size_t>(i)];
        const double y = labels[static_cast<std::size_t>(i)];
        const double z = dot(model.weights, x) + model.bias;
        // d/dz of -log sigma(y z) is -y * sigma(-y z).
        const double g = -y * sigmoid(-y * z);
        for (std::size_t d = 0; d < grad.size(); ++d) grad[d] += g * x[d];
        grad_bias += g;
      }
      const double scale =
          cfg.inner.learning_rate * static_cast<double>(n) / batch;
      for (std::size_t d = 0; d < grad.size(); ++d) {
        model.weights[d] -= scale * grad[d] +
                            cfg.inner.learning_rate * cfg.l2_coefficient *
                                model.weights[d];
      }
      model.bias -= scale * grad_bias;
    }
    const double objective = mil_objective(bags, dataset, model.weights,
                                           model.bias, cfg.l2_coefficient);
    if (!std::isfinite(objective)) {
      throw std::runtime_error(
          "train_mil: non-finite objective at outer iteration " +
          std::to_string(outer) + " for class " + std::to_string(class_index));
    }
  }
  return model;
}

MilDetection mil_detect(const MilModel& model, const ImageRecord& image) {
  if (image.proposals.empty()) {
    throw std::runtime_error("mil_detect: image has no proposals");
  }
  int best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < image.proposals.size(); ++i) {
    const double s =
        sigmoid(dot(model.weights, image.proposals[i].feature) + model.bias);
    if (s > best_score) {
      best_score = s;
      best = static_cast<int>(i);
    }
  }
  return {best, best_score};
}

}  // namespace wsod
