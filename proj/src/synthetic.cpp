#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "wsod/dataset.hpp"
#include "wsod/rng.hpp"

namespace wsod {
namespace {

constexpr double kMinExtent = 1.0;

// Clamps a 1-d interval into [0, limit] keeping at least kMinExtent of length.
void sanitize_interval(double& lo, double& hi, double limit) {
  if (lo > hi) std::swap(lo, hi);
  lo = std::clamp(lo, 0.0, limit);
  hi = std::clamp(hi, 0.0, limit);
  if (hi - lo < kMinExtent) {
    hi = lo + kMinExtent;
    if (hi > limit) {
      hi = limit;
      lo = limit - kMinExtent;
    }
  }
}

FeatureVector make_feature(const BoundingBox& box,
                           const std::vector<GtObject>& objects,
                           double noise_sigma, int feature_dim, Rng& rng) {
  // Noise direction is drawn for every proposal, before looking at overlaps,
  // to keep the draw order independent of geometry.
  FeatureVector noise(static_cast<std::size_t>(feature_dim));
  double norm = 0.0;
  for (auto& v : noise) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (auto& v : noise) v /= norm;
  }

  double m = 0.0;
  int best_class = -1;
  for (const auto& obj : objects) {
    const double overlap = iou(box, obj.box);
    if (overlap > m) {
      m = overlap;
      best_class = obj.class_index;
    }
  }

  FeatureVector feature(static_cast<std::size_t>(feature_dim), 0.0);
  for (int d = 0; d < feature_dim; ++d) {
    feature[static_cast<std::size_t>(d)] =
        (1.0 - m) * noise_sigma * noise[static_cast<std::size_t>(d)];
  }
  if (best_class >= 0) {
    feature[static_cast<std::size_t>(best_class)] += m;
  }
  double fnorm = 0.0;
  for (double v : feature) fnorm += v * v;
  fnorm = std::sqrt(fnorm);
  if (fnorm > 1.0) {
    for (auto& v : feature) v /= fnorm;
  }
  return feature;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_images < 1 || num_classes < 1 || objects_min < 1 ||
      objects_max < objects_min || proposals_per_image < 1 ||
      feature_dim < 1) {
    throw std::invalid_argument("synth config: all counts must be >= 1");
  }
  if (background_fraction < 0.0 || background_fraction > 1.0) {
    throw std::invalid_argument(
        "synth config: background_fraction must lie in [0, 1]");
  }
  if (jitter_sigma < 0.0 || feature_noise_sigma < 0.0) {
    throw std::invalid_argument("synth config: sigmas must be >= 0");
  }
  if (num_classes > feature_dim) {
    throw std::invalid_argument(
        "synth config: num_classes exceeds feature_dim; class signatures "
        "cannot be orthogonal");
  }
}

FeatureVector class_signature(int class_index, int feature_dim) {
  FeatureVector u(static_cast<std::size_t>(feature_dim), 0.0);
  u[static_cast<std::size_t>(class_index)] = 1.0;
  return u;
}

// Draw order per image (fixed contract, relied on by tests that replay the
// stream): (1) object count; (2) per object: class, width, height, x0, y0;
// (3) per proposal, boxes only, in block order jittered / parts / background;
// (4) per proposal: feature noise direction.
Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();

  Dataset dataset;
  dataset.feature_dim = cfg.feature_dim;
  dataset.num_classes = cfg.num_classes;
  dataset.images.reserve(static_cast<std::size_t>(cfg.num_images));

  const double canvas = kSynthCanvas;
  for (int i = 0; i < cfg.num_images; ++i) {
    Rng rng(derive_seed(cfg.rng_seed, "synth-image",
                        static_cast<std::uint64_t>(i)));

    ImageRecord rec;
    char id[32];
    std::snprintf(id, sizeof(id), "img_%05d", i);
    rec.id = id;
    rec.width = canvas;
    rec.height = canvas;

    const int n_obj = rng.uniform_int(cfg.objects_min, cfg.objects_max);
    std::vector<GtObject> objects;
    objects.reserve(static_cast<std::size_t>(n_obj));
    for (int t = 0; t < n_obj; ++t) {
      const int cls = rng.uniform_int(0, cfg.num_classes - 1);
      const double bw = rng.uniform(0.2, 0.5) * canvas;
      const double bh = rng.uniform(0.2, 0.5) * canvas;
      const double x0 = rng.uniform(0.0, canvas - bw);
      const double y0 = rng.uniform(0.0, canvas - bh);
      objects.push_back({cls, BoundingBox(x0, y0, x0 + bw, y0 + bh)});
    }
    rec.gt = objects;
    for (const auto& obj : objects) {
      if (!std::count(rec.labels.begin(), rec.labels.end(),
                      obj.class_index)) {
        rec.labels.push_back(obj.class_index);
      }
    }
    std::sort(rec.labels.begin(), rec.labels.end());

    const int n_total = cfg.proposals_per_image;
    const int n_bg = static_cast<int>(
        std::llround(cfg.background_fraction * n_total));
    const int n_fg = n_total - n_bg;
    const int n_part = n_fg / 3;
    const int n_jit = n_fg - n_part;

    std::vector<BoundingBox> boxes;
    boxes.reserve(static_cast<std::size_t>(n_total));

    // Jittered object copies: positives whose quality depends on the draw.
    for (int t = 0; t < n_jit; ++t) {
      const auto& obj = objects[static_cast<std::size_t>(t % n_obj)].box;
      const double ow = obj.width();
      const double oh = obj.height();
      double x0 = obj.x_min + rng.normal() * cfg.jitter_sigma * ow;
      double y0 = obj.y_min + rng.normal() * cfg.jitter_sigma * oh;
      double x1 = obj.x_max + rng.normal() * cfg.jitter_sigma * ow;
      double y1 = obj.y_max + rng.normal() * cfg.jitter_sigma * oh;
      sanitize_interval(x0, x1, canvas);
      sanitize_interval(y0, y1, canvas);
      boxes.emplace_back(x0, y0, x1, y1);
    }
    // Sub-boxes of objects: object-part distractors.
    for (int t = 0; t < n_part; ++t) {
      const auto& obj = objects[static_cast<std::size_t>(t % n_obj)].box;
      const double fx0 = rng.uniform(0.0, 0.5);
      const double fx1 = rng.uniform(0.5, 1.0);
      const double fy0 = rng.uniform(0.0, 0.5);
      const double fy1 = rng.uniform(0.5, 1.0);
      double x0 = obj.x_min + fx0 * obj.width();
      double x1 = obj.x_min + fx1 * obj.width();
      double y0 = obj.y_min + fy0 * obj.height();
      double y1 = obj.y_min + fy1 * obj.height();
      sanitize_interval(x0, x1, canvas);
      sanitize_interval(y0, y1, canvas);
      boxes.emplace_back(x0, y0, x1, y1);
    }
    // Uniform background boxes.
    for (int t = 0; t < n_bg; ++t) {
      double x0 = rng.uniform(0.0, canvas);
      double x1 = rng.uniform(0.0, canvas);
      double y0 = rng.uniform(0.0, canvas);
      double y1 = rng.uniform(0.0, canvas);
      sanitize_interval(x0, x1, canvas);
      sanitize_interval(y0, y1, canvas);
      boxes.emplace_back(x0, y0, x1, y1);
    }

    rec.proposals.reserve(boxes.size());
    for (const auto& box : boxes) {
      Proposal p{box, make_feature(box, objects, cfg.feature_noise_sigma,
                                   cfg.feature_dim, rng)};
      rec.proposals.push_back(std::move(p));
    }

    dataset.images.push_back(std::move(rec));
  }
  return dataset;
}

}  // namespace wsod
