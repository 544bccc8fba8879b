#include "wsod/maskout.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "wsod/errors.hpp"

#include "wsod/parallel.hpp"

namespace wsod {

void MaskoutConfig::validate() const {
  if (!(score_threshold > 0.0) || !(score_threshold < 1.0)) {
    throw std::invalid_argument("maskout config: score_threshold not in (0,1)");
  }
  if (top_m < 1) {
    throw std::invalid_argument("maskout config: top_m must be >= 1");
  }
  if (!(mask_threshold >= 0.0) || !(mask_threshold <= 1.0)) {
    throw std::invalid_argument("maskout config: mask_threshold not in [0,1]");
  }
}

// Drops are computed against the single original image: masking proposal b
// removes every proposal overlapping b beyond mask_threshold from the mean,
// and each candidate is scored independently (no sequential masking).
ImageMaskoutResult mine_confident(const LinearModel& model,
                                  const ImageRecord& image,
                                  const MaskoutConfig& cfg) {
  cfg.validate();
  if (model.mode != ModelMode::classification) {
    throw std::runtime_error("mine_confident needs a classification model");
  }
  const auto n = image.proposals.size();
  ImageMaskoutResult result(static_cast<std::size_t>(model.num_classes));
  if (n == 0) return result;

  // Exclusion sets depend only on geometry, not on the class.
  std::vector<std::vector<int>> excluded(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (iou(image.proposals[j].box, image.proposals[i].box) >
          cfg.mask_threshold) {
        excluded[i].push_back(static_cast<int>(j));
      }
    }
  }

  for (int c = 0; c < model.num_classes; ++c) {
    const auto& w = model.weights[static_cast<std::size_t>(c)];
    const double bias = model.biases[static_cast<std::size_t>(c)];

    // Per-proposal contributions to the image logit.
    std::vector<double> contrib(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      const auto& f = image.proposals[i].feature;
      for (std::size_t d = 0; d < f.size(); ++d) acc += w[d] * f[d];
      contrib[i] = acc;
      total += acc;
    }
    const double base = sigmoid(total / static_cast<double>(n) + bias);
    if (base < cfg.score_threshold) continue;

    std::vector<MinedProposal> mined(n);
    for (std::size_t i = 0; i < n; ++i) {
      double masked_total = total;
      for (int j : excluded[i]) {
        masked_total -= contrib[static_cast<std::size_t>(j)];
      }
      const auto kept = n - excluded[i].size();
      const double masked =
          kept == 0 ? sigmoid(bias)
                    : sigmoid(masked_total / static_cast<double>(kept) + bias);
      mined[i] = {static_cast<int>(i), base - masked};
    }
    std::stable_sort(mined.begin(), mined.end(),
                     [](const MinedProposal& a, const MinedProposal& b) {
                       if (a.drop != b.drop) return a.drop > b.drop;
                       return a.proposal_index < b.proposal_index;
                     });
    if (mined.size() > static_cast<std::size_t>(cfg.top_m)) {
      mined.resize(static_cast<std::size_t>(cfg.top_m));
    }
    result[static_cast<std::size_t>(c)] = std::move(mined);
  }
  return result;
}

MaskoutResult mine_dataset(const LinearModel& model, const Dataset& dataset,
                           const MaskoutConfig& cfg, int jobs) {
  MaskoutResult result;
  result.per_image.resize(dataset.images.size());
  parallel_for(dataset.images.size(), jobs, [&](std::size_t i) {
    result.per_image[i] = mine_confident(model, dataset.images[i], cfg);
  });
  return result;
}

MaskoutResult maskout_from_pseudo_labels(const PseudoLabelSet& labels,
                                         const Dataset& dataset,
                                         int num_classes) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    index[dataset.images[i].id] = i;
  }
  MaskoutResult result;
  result.per_image.assign(
      dataset.images.size(),
      ImageMaskoutResult(static_cast<std::size_t>(num_classes)));
  for (const auto& label : labels) {
    auto it = index.find(label.image_id);
    if (it == index.end()) {
      throw InputError("pseudo label references unknown image '" +
                       label.image_id + "'");
    }
    if (label.class_index < 0 || label.class_index >= num_classes) {
      throw InputError("pseudo label for image '" + label.image_id +
                       "' has class " + std::to_string(label.class_index) +
                       " outside [0, " + std::to_string(num_classes) + ")");
    }
    const auto& proposals = dataset.images[it->second].proposals;
    int proposal_index = -1;
    for (std::size_t p = 0; p < proposals.size(); ++p) {
      if (proposals[p].box == label.box) {
        proposal_index = static_cast<int>(p);
        break;
      }
    }
    if (proposal_index < 0) {
      throw InputError("pseudo label box for image '" + label.image_id +
                       "' does not match any proposal");
    }
    result.per_image[it->second][static_cast<std::size_t>(label.class_index)]
        .push_back({proposal_index, label.score});
  }
  return result;
}

PseudoLabelSet maskout_to_pseudo_labels(const MaskoutResult& result,
                                        const Dataset& dataset) {
  PseudoLabelSet labels;
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    const auto& image = dataset.images[i];
    const auto& per_class = result.per_image[i];
    for (std::size_t c = 0; c < per_class.size(); ++c) {
      for (const auto& mined : per_class[c]) {
        labels.push_back(
            {image.id, static_cast<int>(c),
             image.proposals[static_cast<std::size_t>(mined.proposal_index)]
                 .box,
             std::clamp(mined.drop, 0.0, 1.0), 0});
      }
    }
  }
  return labels;
}

}  // namespace wsod
