#include "wsod/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "wsod/errors.hpp"
#include "wsod/parallel.hpp"
#include "wsod/rng.hpp"

#include "json.hpp"

namespace wsod {
namespace {

double dot(const FeatureVector& w, const FeatureVector& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * x[i];
  return acc;
}

void check_dim(const LinearModel& model, std::size_t dim,
               const char* what) {
  if (static_cast<std::size_t>(model.feature_dim) != dim) {
    throw std::runtime_error(
        std::string(what) + ": feature dimension mismatch (model " +
        std::to_string(model.feature_dim) + ", data " + std::to_string(dim) +
        ")");
  }
}

// One SGD run of (optionally sample-weighted) binary logistic regression
// over feature rows. The loss is the weighted mean cross-entropy over the
// minibatch plus 0.5 * l2 * |w|^2; sampling is with replacement from a
// dedicated stream.
void sgd_logistic(const std::vector<const FeatureVector*>& features,
                  const std::vector<int>& labels,
                  const std::vector<double>* sample_weights, FeatureVector& w,
                  double& bias, const TrainConfig& cfg, Rng& rng) {
  const int n = static_cast<int>(features.size());
  if (n == 0) return;
  const int batch = std::max(1, std::min(cfg.minibatch_size, n));
  FeatureVector grad(w.size());
  for (int step = 0; step < cfg.iterations; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_bias = 0.0;
    for (int s = 0; s < batch; ++s) {
      const int i = rng.uniform_int(0, n - 1);
      const FeatureVector& x = *features[static_cast<std::size_t>(i)];
      const double p = sigmoid(dot(w, x) + bias);
      double err = p - labels[static_cast<std::size_t>(i)];
      if (sample_weights != nullptr) {
        err *= (*sample_weights)[static_cast<std::size_t>(i)];
      }
      for (std::size_t d = 0; d < w.size(); ++d) grad[d] += err * x[d];
      grad_bias += err;
    }
    const double scale = cfg.learning_rate / batch;
    for (std::size_t d = 0; d < w.size(); ++d) {
      w[d] -= scale * grad[d] + cfg.learning_rate * cfg.l2_coefficient * w[d];
    }
    bias -= scale * grad_bias;
  }
}

}  // namespace

std::string to_string(ModelMode mode) {
  return mode == ModelMode::classification ? "classification" : "detection";
}

ModelMode model_mode_from_string(const std::string& s) {
  if (s == "classification") return ModelMode::classification;
  if (s == "detection") return ModelMode::detection;
  throw InputError("unknown model mode '" + s + "'");
}

LinearModel LinearModel::zeros(int feature_dim, int num_classes,
                               ModelMode mode) {
  LinearModel m;
  m.feature_dim = feature_dim;
  m.num_classes = num_classes;
  m.mode = mode;
  m.weights.assign(static_cast<std::size_t>(num_classes),
                   FeatureVector(static_cast<std::size_t>(feature_dim), 0.0));
  m.biases.assign(static_cast<std::size_t>(num_classes), 0.0);
  return m;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) {
    throw std::invalid_argument("train config: learning_rate must be >= 0");
  }
  if (iterations < 0 || minibatch_size < 1) {
    throw std::invalid_argument("train config: bad iteration/minibatch count");
  }
  if (l2_coefficient < 0.0 || neg_iou_threshold < 0.0 ||
      neg_iou_threshold > 1.0 || neg_ratio < 1) {
    throw std::invalid_argument("train config: bad regularizer/negative knobs");
  }
}

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

FeatureVector mean_feature(const ImageRecord& image,
                           const std::optional<BoundingBox>& exclude,
                           double mask_threshold) {
  std::size_t dim = 0;
  for (const auto& p : image.proposals) {
    dim = p.feature.size();
    break;
  }
  FeatureVector mean(dim, 0.0);
  int count = 0;
  for (const auto& p : image.proposals) {
    if (exclude && iou(p.box, *exclude) > mask_threshold) continue;
    for (std::size_t d = 0; d < dim; ++d) mean[d] += p.feature[d];
    ++count;
  }
  if (count > 0) {
    for (auto& v : mean) v /= count;
  }
  return mean;
}

double image_score(const LinearModel& model, const ImageRecord& image,
                   int class_index, const std::optional<BoundingBox>& exclude,
                   double mask_threshold) {
  if (model.mode != ModelMode::classification) {
    throw std::runtime_error("image_score needs a classification-mode model");
  }
  if (class_index < 0 || class_index >= model.num_classes) {
    throw std::runtime_error("image_score: class index out of range");
  }
  if (!image.proposals.empty()) {
    check_dim(model, image.proposals.front().feature.size(), "image_score");
  }
  const FeatureVector g = mean_feature(image, exclude, mask_threshold);
  const auto c = static_cast<std::size_t>(class_index);
  double z = model.biases[c];
  if (!g.empty()) z += dot(model.weights[c], g);
  return sigmoid(z);
}

double classifier_loss(const std::vector<FeatureVector>& image_features,
                       const std::vector<int>& labels, const FeatureVector& w,
                       double bias, double l2_coefficient) {
  double loss = 0.0;
  for (std::size_t i = 0; i < image_features.size(); ++i) {
    const double z = dot(w, image_features[i]) + bias;
    // -log p(y|x) written via log1p(exp(.)) for stability.
    const double margin = labels[i] ? z : -z;
    loss += margin >= 0.0 ? std::log1p(std::exp(-margin))
                          : -margin + std::log1p(std::exp(margin));
  }
  loss /= static_cast<double>(image_features.size());
  double sq = 0.0;
  for (double v : w) sq += v * v;
  return loss + 0.5 * l2_coefficient * sq;
}

LinearModel train_classifier(const Dataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.images.empty()) {
    throw std::runtime_error("train_classifier: empty dataset");
  }
  const int dim = dataset.feature_dim;
  const int classes = dataset.num_classes;

  std::vector<FeatureVector> means;
  means.reserve(dataset.images.size());
  for (const auto& image : dataset.images) {
    FeatureVector g = mean_feature(image, std::nullopt, 0.5);
    if (g.empty()) g.assign(static_cast<std::size_t>(dim), 0.0);
    means.push_back(std::move(g));
  }
  std::vector<const FeatureVector*> rows;
  rows.reserve(means.size());
  for (const auto& g : means) rows.push_back(&g);

  LinearModel model =
      LinearModel::zeros(dim, classes, ModelMode::classification);
  for (int c = 0; c < classes; ++c) {
    std::vector<int> labels;
    labels.reserve(dataset.images.size());
    for (const auto& image : dataset.images) {
      labels.push_back(std::binary_search(image.labels.begin(),
                                          image.labels.end(), c)
                           ? 1
                           : 0);
    }
    Rng rng(derive_seed(cfg.rng_seed, "train-classifier",
                        static_cast<std::uint64_t>(c)));
    sgd_logistic(rows, labels, nullptr,
                 model.weights[static_cast<std::size_t>(c)],
                 model.biases[static_cast<std::size_t>(c)], cfg, rng);
  }
  return model;
}

std::vector<ScoredProposal> detect(const LinearModel& model,
                                   const ImageRecord& image) {
  if (model.mode != ModelMode::detection) {
    throw std::runtime_error("detect needs a detection-mode model");
  }
  std::vector<ScoredProposal> out;
  out.reserve(image.proposals.size() *
              static_cast<std::size_t>(model.num_classes));
  for (int c = 0; c < model.num_classes; ++c) {
    const auto& w = model.weights[static_cast<std::size_t>(c)];
    const double b = model.biases[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < image.proposals.size(); ++i) {
      const auto& feature = image.proposals[i].feature;
      check_dim(model, feature.size(), "detect");
      out.push_back({c, static_cast<int>(i), sigmoid(dot(w, feature) + b)});
    }
  }
  return out;
}

double proposal_loss(const std::vector<const FeatureVector*>& features,
                     const std::vector<int>& labels,
                     const std::vector<double>* sample_weights,
                     const FeatureVector& w, double bias,
                     double l2_coefficient) {
  double loss = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const double z = dot(w, *features[i]) + bias;
    const double margin = labels[i] ? z : -z;
    double term = margin >= 0.0 ? std::log1p(std::exp(-margin))
                                : -margin + std::log1p(std::exp(margin));
    if (sample_weights != nullptr) term *= (*sample_weights)[i];
    loss += term;
  }
  loss /= static_cast<double>(features.size());
  double sq = 0.0;
  for (double v : w) sq += v * v;
  return loss + 0.5 * l2_coefficient * sq;
}

DetectorTrainResult train_detector(const LinearModel& model,
                                   const PseudoLabelSet& pseudo_labels,
                                   const Dataset& dataset,
                                   const TrainConfig& cfg) {
  cfg.validate();
  if (pseudo_labels.empty()) {
    throw std::runtime_error("train_detector: empty pseudo-label set");
  }
  validate_pseudo_labels(pseudo_labels, dataset);

  std::map<std::string, std::size_t> image_index;
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    image_index[dataset.images[i].id] = i;
  }

  // Pseudo boxes grouped by image, and per-class positive proposal lists.
  // Positives carry their pseudo score as a sample weight: re-weighted
  // proposals enter re-training at their assigned confidence.
  struct Positive {
    std::size_t image;
    int proposal;
    double weight;
  };
  std::vector<std::vector<BoundingBox>> pseudo_boxes(dataset.images.size());
  std::vector<std::vector<Positive>> positives(
      static_cast<std::size_t>(model.num_classes));
  for (const auto& label : pseudo_labels) {
    if (label.class_index < 0 || label.class_index >= model.num_classes) {
      throw std::runtime_error("train_detector: pseudo label class " +
                               std::to_string(label.class_index) +
                               " outside the model's range");
    }
    const std::size_t img = image_index.at(label.image_id);
    pseudo_boxes[img].push_back(label.box);
    const auto& proposals = dataset.images[img].proposals;
    for (std::size_t p = 0; p < proposals.size(); ++p) {
      if (proposals[p].box == label.box) {
        positives[static_cast<std::size_t>(label.class_index)].push_back(
            {img, static_cast<int>(p), label.score});
        break;
      }
    }
  }

  // Negative pool: proposals far from every pseudo box of their image
  // (vacuously, all proposals of images that received no pseudo labels).
  std::vector<std::pair<std::size_t, int>> negative_pool;
  for (std::size_t img = 0; img < dataset.images.size(); ++img) {
    const auto& proposals = dataset.images[img].proposals;
    for (std::size_t p = 0; p < proposals.size(); ++p) {
      bool far = true;
      for (const auto& b : pseudo_boxes[img]) {
        if (iou(proposals[p].box, b) >= cfg.neg_iou_threshold) {
          far = false;
          break;
        }
      }
      if (far) negative_pool.emplace_back(img, static_cast<int>(p));
    }
  }

  DetectorTrainResult result;
  result.model = model;
  result.model.mode = ModelMode::detection;

  for (int c = 0; c < model.num_classes; ++c) {
    const auto& pos = positives[static_cast<std::size_t>(c)];
    if (pos.empty()) {
      result.skipped_classes.push_back(c);
      continue;
    }
    std::vector<const FeatureVector*> rows;
    std::vector<int> labels;
    std::vector<double> weights;
    for (const auto& positive : pos) {
      rows.push_back(&dataset.images[positive.image]
                          .proposals[static_cast<std::size_t>(
                              positive.proposal)]
                          .feature);
      labels.push_back(1);
      weights.push_back(positive.weight);
    }
    Rng neg_rng(derive_seed(cfg.rng_seed, "detector-negatives",
                            static_cast<std::uint64_t>(c)));
    const int want = static_cast<int>(pos.size()) * cfg.neg_ratio;
    const auto picks = neg_rng.sample_without_replacement(
        static_cast<int>(negative_pool.size()), want);
    for (int k : picks) {
      const auto& [img, p] = negative_pool[static_cast<std::size_t>(k)];
      rows.push_back(
          &dataset.images[img].proposals[static_cast<std::size_t>(p)].feature);
      labels.push_back(0);
      weights.push_back(1.0);
    }
    if (!rows.empty()) check_dim(model, rows.front()->size(), "train_detector");
    Rng rng(derive_seed(cfg.rng_seed, "detector-sgd",
                        static_cast<std::uint64_t>(c)));
    sgd_logistic(rows, labels, &weights,
                 result.model.weights[static_cast<std::size_t>(c)],
                 result.model.biases[static_cast<std::size_t>(c)], cfg, rng);
  }
  return result;
}

void save_model(const LinearModel& model, const std::string& path) {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["D"] = model.feature_dim;
  j["C"] = model.num_classes;
  j["mode"] = to_string(model.mode);
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (int c = 0; c < model.num_classes; ++c) {
    nlohmann::ordered_json o;
    o["weights"] = model.weights[static_cast<std::size_t>(c)];
    o["bias"] = model.biases[static_cast<std::size_t>(c)];
    classes.push_back(std::move(o));
  }
  j["classes"] = std::move(classes);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw InputError("failed while writing '" + path + "'");
}

LinearModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open model file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("model file '" + path + "': " + e.what());
  }
  const std::string ctx = "model file '" + path + "'";
  if (!j.is_object() || !j.contains("format_version")) {
    throw InputError(ctx + ": missing field 'format_version'");
  }
  if (j["format_version"].get<int>() != 1) {
    throw InputError(ctx + ": unsupported format_version " +
                     j["format_version"].dump());
  }
  for (const char* field : {"D", "C", "mode", "classes"}) {
    if (!j.contains(field)) {
      throw InputError(ctx + ": missing field '" + field + "'");
    }
  }
  LinearModel model;
  model.feature_dim = j["D"].get<int>();
  model.num_classes = j["C"].get<int>();
  model.mode = model_mode_from_string(j["mode"].get<std::string>());
  if (model.feature_dim < 1 || model.num_classes < 1) {
    throw InputError(ctx + ": D and C must be positive");
  }
  const auto& classes = j["classes"];
  if (!classes.is_array() ||
      classes.size() != static_cast<std::size_t>(model.num_classes)) {
    throw InputError(ctx + ": field 'classes' must hold C entries");
  }
  for (const auto& o : classes) {
    if (!o.is_object() || !o.contains("weights") || !o.contains("bias")) {
      throw InputError(ctx + ": class entries need 'weights' and 'bias'");
    }
    FeatureVector w = o["weights"].get<FeatureVector>();
    if (w.size() != static_cast<std::size_t>(model.feature_dim)) {
      throw InputError(ctx + ": class weights must have D entries");
    }
    for (double v : w) {
      if (!std::isfinite(v)) throw InputError(ctx + ": non-finite weight");
    }
    model.weights.push_back(std::move(w));
    model.biases.push_back(o["bias"].get<double>());
  }
  return model;
}

}  // namespace wsod
