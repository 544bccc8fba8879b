#pragma once

#include <vector>

#include "wsod/geometry.hpp"

namespace wsod {

struct Detection {
  int proposal_index = 0;
  BoundingBox box;
  double score = 0.0;  // in [0, 1]
  int class_index = 0;
};

struct SubsetOptConfig {
  double lambda = 0.05;  // background affinity
  double beta = 1.0;     // score reward
  double gamma = 0.5;    // pairwise overlap penalty
  int top_n = 30;        // detections fed in per image per class
  // Weight rows with the row box's own score instead of the candidate
  // center's score (the literal form of the membership weights; row
  // normalization then mutes the score, so this is off by default and kept
  // only for comparison).
  bool self_score_variant = false;

  void validate() const;
};

// Greedy non-maximum suppression: keep the highest-scoring remaining
// detection, discard everything overlapping it with IoU >= threshold.
// Score ties resolve to the lower proposal index, then input position.
// Output is sorted by descending score.
std::vector<Detection> nms(const std::vector<Detection>& detections,
                           double iou_threshold);

// Row-normalized cluster membership mass: an n x (n+1) matrix where column 0
// is the background (lambda) and column j >= 1 is K(b_i, b_j) * s_j. Every
// row sums to 1; K(b_i, b_i) = 1, so a box can center its own cluster.
std::vector<std::vector<double>> membership_weights(
    const std::vector<Detection>& detections, const SubsetOptConfig& cfg);

struct MapAssignResult {
  // Per detection: 0 for background, j for cluster centered on detection
  // j - 1. Ties pick the smaller column, so background wins ties.
  std::vector<int> assignment;
  // Detection indices (0-based) that center at least one cluster, ascending.
  std::vector<int> centers;
  // Accumulated membership mass per center, normalized so the largest is 1.
  std::vector<double> masses;
};

// The MAP cluster assignment: the objective is separable, so each detection
// independently takes its argmax column.
MapAssignResult map_assign(const std::vector<std::vector<double>>& weights);

// Greedy maximization of beta * sum(masses) - gamma * sum_{j != k} K over the
// chosen centers; stops when the best marginal gain is <= 0. Tie on gain
// prefers the higher mass, then the lower index. Returns positions into
// `centers`.
std::vector<int> greedy_output(const std::vector<int>& centers,
                               const std::vector<double>& masses,
                               const std::vector<BoundingBox>& boxes,
                               const SubsetOptConfig& cfg);

// The selection objective, counting the overlap penalty over ordered pairs.
double output_set_objective(const std::vector<int>& chosen,
                            const std::vector<int>& centers,
                            const std::vector<double>& masses,
                            const std::vector<BoundingBox>& boxes,
                            const SubsetOptConfig& cfg);

// Full re-weighting pass: membership weights, MAP assignment, then greedy
// exemplar selection. Returns the chosen exemplars carrying their normalized
// cluster mass as the new score.
std::vector<Detection> subset_optimize(const std::vector<Detection>& dets,
                                       const SubsetOptConfig& cfg);

}  // namespace wsod
