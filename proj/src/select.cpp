#include "wsod/select.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace wsod {

void SubsetOptConfig::validate() const {
  if (!(lambda > 0.0)) {
    throw std::invalid_argument("subsetopt config: lambda must be > 0");
  }
  if (beta < 0.0 || gamma < 0.0) {
    throw std::invalid_argument("subsetopt config: beta/gamma must be >= 0");
  }
  if (top_n < 1) {
    throw std::invalid_argument("subsetopt config: top_n must be >= 1");
  }
}

std::vector<Detection> nms(const std::vector<Detection>& detections,
                           double iou_threshold) {
  if (!(iou_threshold > 0.0) || !(iou_threshold < 1.0)) {
    throw std::invalid_argument("nms: threshold must lie in (0, 1)");
  }
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (detections[a].score != detections[b].score) {
      return detections[a].score > detections[b].score;
    }
    if (detections[a].proposal_index != detections[b].proposal_index) {
      return detections[a].proposal_index < detections[b].proposal_index;
    }
    return a < b;
  });

  std::vector<Detection> kept;
  std::vector<bool> suppressed(detections.size(), false);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(detections[i]);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (suppressed[j]) continue;
      if (iou(detections[i].box, detections[j].box) >= iou_threshold) {
        suppressed[j] = true;
      }
    }
  }
  return kept;
}

std::vector<std::vector<double>> membership_weights(
    const std::vector<Detection>& detections, const SubsetOptConfig& cfg) {
  cfg.validate();
  const std::size_t n = detections.size();
  if (n == 0) {
    throw std::invalid_argument("membership_weights: no detections");
  }
  for (const auto& d : detections) {
    if (!(d.score >= 0.0) || !(d.score <= 1.0)) {
      throw std::invalid_argument(
          "membership_weights: scores must lie in [0, 1]");
    }
  }
  std::vector<std::vector<double>> weights(
      n, std::vector<double>(n + 1, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    auto& row = weights[i];
    row[0] = cfg.lambda;
    double z = cfg.lambda;
    for (std::size_t j = 0; j < n; ++j) {
      const double overlap =
          i == j ? 1.0 : iou(detections[i].box, detections[j].box);
      const double s =
          cfg.self_score_variant ? detections[i].score : detections[j].score;
      row[j + 1] = overlap * s;
      z += row[j + 1];
    }
    for (auto& v : row) v /= z;
  }
  return weights;
}

MapAssignResult map_assign(const std::vector<std::vector<double>>& weights) {
  MapAssignResult result;
  const std::size_t n = weights.size();
  result.assignment.resize(n);
  std::vector<double> mass(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = weights[i];
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    result.assignment[i] = static_cast<int>(best);
    mass[best] += row[best];
  }
  for (std::size_t j = 1; j <= n; ++j) {
    if (mass[j] > 0.0 &&
        std::any_of(result.assignment.begin(), result.assignment.end(),
                    [&](int a) { return a == static_cast<int>(j); })) {
      result.centers.push_back(static_cast<int>(j - 1));
      result.masses.push_back(mass[j]);
    }
  }
  const double top =
      result.masses.empty()
          ? 0.0
          : *std::max_element(result.masses.begin(), result.masses.end());
  if (top > 0.0) {
    for (auto& m : result.masses) m /= top;
  }
  return result;
}

double output_set_objective(const std::vector<int>& chosen,
                            const std::vector<int>& centers,
                            const std::vector<double>& masses,
                            const std::vector<BoundingBox>& boxes,
                            const SubsetOptConfig& cfg) {
  double value = 0.0;
  for (int k : chosen) value += cfg.beta * masses[static_cast<std::size_t>(k)];
  for (std::size_t a = 0; a < chosen.size(); ++a) {
    for (std::size_t b = a + 1; b < chosen.size(); ++b) {
      const auto& ba =
          boxes[static_cast<std::size_t>(centers[static_cast<std::size_t>(
              chosen[a])])];
      const auto& bb =
          boxes[static_cast<std::size_t>(centers[static_cast<std::size_t>(
              chosen[b])])];
      value -= 2.0 * cfg.gamma * iou(ba, bb);
    }
  }
  return value;
}

std::vector<int> greedy_output(const std::vector<int>& centers,
                               const std::vector<double>& masses,
                               const std::vector<BoundingBox>& boxes,
                               const SubsetOptConfig& cfg) {
  cfg.validate();
  if (centers.size() != masses.size()) {
    throw std::invalid_argument("greedy_output: centers/masses mismatch");
  }
  std::vector<int> chosen;
  std::vector<bool> used(centers.size(), false);
  while (chosen.size() < centers.size()) {
    int best = -1;
    double best_gain = 0.0;
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (used[k]) continue;
      double gain = cfg.beta * masses[k];
      for (int c : chosen) {
        const auto& a = boxes[static_cast<std::size_t>(centers[k])];
        const auto& b = boxes[static_cast<std::size_t>(
            centers[static_cast<std::size_t>(c)])];
        gain -= 2.0 * cfg.gamma * iou(a, b);
      }
      if (best < 0 || gain > best_gain ||
          (gain == best_gain &&
           (masses[k] > masses[static_cast<std::size_t>(best)] ||
            (masses[k] == masses[static_cast<std::size_t>(best)] &&
             static_cast<int>(k) < best)))) {
        best = static_cast<int>(k);
        best_gain = gain;
      }
    }
    if (best < 0 || best_gain <= 0.0) break;
    chosen.push_back(best);
    used[static_cast<std::size_t>(best)] = true;
  }
  return chosen;
}

std::vector<Detection> subset_optimize(const std::vector<Detection>& dets,
                                       const SubsetOptConfig& cfg) {
  cfg.validate();
  if (dets.empty()) return {};
  const auto weights = membership_weights(dets, cfg);
  const auto assign = map_assign(weights);
  if (assign.centers.empty()) return {};

  std::vector<BoundingBox> boxes;
  boxes.reserve(dets.size());
  for (const auto& d : dets) boxes.push_back(d.box);

  const auto chosen =
      greedy_output(assign.centers, assign.masses, boxes, cfg);
  std::vector<Detection> out;
  out.reserve(chosen.size());
  for (int k : chosen) {
    const int det_index = assign.centers[static_cast<std::size_t>(k)];
    Detection d = dets[static_cast<std::size_t>(det_index)];
    d.score = assign.masses[static_cast<std::size_t>(k)];
    out.push_back(d);
  }
  return out;
}

}  // namespace wsod
