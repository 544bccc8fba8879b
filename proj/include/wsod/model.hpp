#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wsod/dataset.hpp"
#include "wsod/pseudo.hpp"

namespace wsod {

enum class ModelMode { classification, detection };

std::string to_string(ModelMode mode);
ModelMode model_mode_from_string(const std::string& s);

// Per-class linear scorer with a logistic output. Stands in for both the
// image classification network and the adapted detection network: the
// pipeline's logic is architecture-agnostic, and a linear layer keeps
// gradient checks exact and runtimes in seconds.
struct LinearModel {
  int feature_dim = 0;
  int num_classes = 0;
  ModelMode mode = ModelMode::classification;
  std::vector<FeatureVector> weights;  // num_classes x feature_dim
  std::vector<double> biases;          // num_classes

  static LinearModel zeros(int feature_dim, int num_classes, ModelMode mode);

  bool operator==(const LinearModel&) const = default;
};

struct TrainConfig {
  double learning_rate = 0.0001;
  int iterations = 2000;  // total minibatch SGD steps
  int minibatch_size = 32;
  double l2_coefficient = 0.0001;
  std::uint64_t rng_seed = 0;
  // Detector fine-tuning only: a proposal is a negative when its IoU with
  // every pseudo box of its image stays below this threshold, and negatives
  // are subsampled to neg_ratio per positive.
  double neg_iou_threshold = 0.3;
  int neg_ratio = 3;

  void validate() const;
};

double sigmoid(double z);

// Mean proposal feature of an image; proposals whose IoU with `exclude`
// exceeds mask_threshold are left out. With everything excluded the mean is
// the zero vector (the score of the empty image).
FeatureVector mean_feature(const ImageRecord& image,
                           const std::optional<BoundingBox>& exclude,
                           double mask_threshold);

// Image-level classification score sigma(w_c . g + b_c), where g is the mean
// proposal feature, optionally with region `exclude` masked out of the mean.
double image_score(const LinearModel& model, const ImageRecord& image,
                   int class_index,
                   const std::optional<BoundingBox>& exclude = std::nullopt,
                   double mask_threshold = 0.5);

// Trains a classification-mode model from image-level labels by minibatch
// SGD on the per-class binary cross-entropy of image_score, plus an L2 term.
// Deterministic given cfg.rng_seed; per-class streams are independent.
LinearModel train_classifier(const Dataset& dataset, const TrainConfig& cfg);

// Full-batch classifier objective for one class (used by descent sanity
// checks and the finite-difference gradient tests).
double classifier_loss(const std::vector<FeatureVector>& image_features,
                       const std::vector<int>& labels,
                       const FeatureVector& w, double bias,
                       double l2_coefficient);

struct ScoredProposal {
  int class_index = 0;
  int proposal_index = 0;
  double score = 0.0;
};

// Scores every (class, proposal) pair; no suppression, selection is the
// caller's job. The model must be in detection mode.
std::vector<ScoredProposal> detect(const LinearModel& model,
                                   const ImageRecord& image);

struct DetectorTrainResult {
  LinearModel model;
  std::vector<int> skipped_classes;  // classes with zero positives
};

// Fine-tunes `model` into a detection-mode model on pseudo-labeled proposals
// (adaptation, not re-initialization). Positives are the pseudo-labeled
// proposals per class, weighted by their pseudo score so re-weighted
// proposals enter re-training at their assigned confidence; negatives are
// proposals far from every pseudo box of their image, subsampled per cfg.
// Classes without positives keep their weights and are reported in
// skipped_classes.
DetectorTrainResult train_detector(const LinearModel& model,
                                   const PseudoLabelSet& pseudo_labels,
                                   const Dataset& dataset,
                                   const TrainConfig& cfg);

// Full-batch per-proposal objective: mean (optionally sample-weighted)
// binary cross-entropy over feature rows plus 0.5 * l2 * |w|^2.
double proposal_loss(const std::vector<const FeatureVector*>& features,
                     const std::vector<int>& labels,
                     const std::vector<double>* sample_weights,
                     const FeatureVector& w, double bias,
                     double l2_coefficient);

void save_model(const LinearModel& model, const std::string& path);
LinearModel load_model(const std::string& path);

}  // namespace wsod
