#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wsod/geometry.hpp"

namespace wsod {

using FeatureVector = std::vector<double>;

// A candidate box with its feature vector. `score` is owned by whichever
// pipeline stage wrote it last; the synthetic generator initializes it to 0.
struct Proposal {
  BoundingBox box;
  FeatureVector feature;
  double score = 0.0;

  bool operator==(const Proposal&) const = default;
};

struct GtObject {
  int class_index = 0;
  BoundingBox box;

  bool operator==(const GtObject&) const = default;
};

// An image-level bag: proposals plus image-level class labels. Ground-truth
// boxes are carried only for evaluation and synthetic data; training stages
// never read them.
struct ImageRecord {
  std::string id;
  double width = 0.0;
  double height = 0.0;
  std::vector<int> labels;  // sorted ascending, unique
  std::vector<Proposal> proposals;
  std::optional<std::vector<GtObject>> gt;

  bool operator==(const ImageRecord&) const = default;
};

struct Dataset {
  std::vector<ImageRecord> images;
  int feature_dim = 0;
  int num_classes = 0;

  bool operator==(const Dataset&) const = default;
};

// Synthetic scene generator configuration. Stands in for a proposal generator
// plus an annotated photo corpus at desk scale; every knob is deterministic
// under rng_seed.
struct SynthConfig {
  int num_images = 100;
  int num_classes = 3;
  int objects_min = 1;
  int objects_max = 2;
  int proposals_per_image = 200;
  int feature_dim = 64;
  // Box-corner noise applied to object copies, as a fraction of object size.
  double jitter_sigma = 0.12;
  // Fraction of proposals sampled uniformly over the canvas.
  double background_fraction = 0.5;
  double feature_noise_sigma = 0.8;
  std::uint64_t rng_seed = 7;

  void validate() const;  // throws std::invalid_argument
};

// Canvas size used by the generator; proposals and objects live in
// [0, kSynthCanvas] x [0, kSynthCanvas].
inline constexpr double kSynthCanvas = 128.0;

// Generates `cfg.num_images` scenes. Per image i the RNG stream is
// derive_seed(cfg.rng_seed, "synth-image", i) and draws happen in a fixed,
// documented order (see synthetic.cpp) so results are reproducible and
// per-image generation can run on any thread layout.
//
// Each proposal's feature is m * u_c + (1 - m) * sigma_f * g_hat, where m is
// the proposal's best IoU against a ground-truth box, u_c the unit signature
// of that box's class, and g_hat a random unit direction; vectors longer than
// 1 are scaled back to the unit ball. Feature quality therefore degrades
// smoothly as localization degrades, which is the property the pipeline
// exploits.
Dataset generate_synthetic(const SynthConfig& cfg);

// Class signature used by the generator (the standard basis vector).
FeatureVector class_signature(int class_index, int feature_dim);

// One JSON object per line; schema documented in docs/FORMATS.md. Round-trips
// exactly: load(save(d)) == d field for field, scores included.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

// Validates a single record against the module invariants; throws InputError
// with `context` prefixed to the message.
void validate_record(const ImageRecord& rec, const std::string& context);

}  // namespace wsod
