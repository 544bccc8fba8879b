#include "wsod/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wsod/errors.hpp"
#include "wsod/maskout.hpp"
#include "wsod/mil.hpp"
#include "wsod/parallel.hpp"
#include "wsod/rng.hpp"
#include "wsod/select.hpp"

#include "eval_json.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace wsod {
namespace {

std::string format_double(double v) { return nlohmann::json(v).dump(); }

template <typename Fn>
auto stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const InputError&) {
    throw;
  } catch (const std::exception& e) {
    throw std::runtime_error("pipeline stage '" + std::string(name) +
                             "' failed: " + e.what());
  }
}

std::vector<Detection> class_candidates(
    const std::vector<ScoredProposal>& scored, const ImageRecord& image,
    int class_index, int top_n) {
  std::vector<Detection> dets;
  for (const auto& s : scored) {
    if (s.class_index != class_index) continue;
    dets.push_back({s.proposal_index,
                    image.proposals[static_cast<std::size_t>(s.proposal_index)]
                        .box,
                    s.score, class_index});
  }
  std::sort(dets.begin(), dets.end(), [](const Detection& a,
                                         const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.proposal_index < b.proposal_index;
  });
  if (dets.size() > static_cast<std::size_t>(top_n)) {
    dets.erase(dets.begin() + top_n, dets.end());
  }
  return dets;
}

}  // namespace

PseudoLabelSet relabel_with_subset_opt(const LinearModel& model,
                                       const Dataset& train,
                                       const SubsetOptConfig& subsetopt,
                                       int next_round, int jobs) {
  std::vector<PseudoLabelSet> per_image(train.images.size());
  parallel_for(train.images.size(), jobs, [&](std::size_t i) {
    const auto& image = train.images[i];
    if (image.labels.empty() || image.proposals.empty()) return;
    const auto scored = detect(model, image);
    for (int c : image.labels) {
      const auto cands =
          class_candidates(scored, image, c, subsetopt.top_n);
      if (cands.empty()) continue;
      for (const auto& d : subset_optimize(cands, subsetopt)) {
        per_image[i].push_back({image.id, c, d.box, d.score, next_round});
      }
    }
  });
  PseudoLabelSet labels;
  for (auto& part : per_image) {
    labels.insert(labels.end(), part.begin(), part.end());
  }
  return labels;
}

std::vector<DetRecord> detect_dataset(const LinearModel& model,
                                      const Dataset& dataset,
                                      double nms_threshold, int jobs) {
  std::vector<std::vector<DetRecord>> per_image(dataset.images.size());
  parallel_for(dataset.images.size(), jobs, [&](std::size_t i) {
    const auto& image = dataset.images[i];
    if (image.proposals.empty()) return;
    const auto scored = detect(model, image);
    for (int c = 0; c < model.num_classes; ++c) {
      std::vector<Detection> cands;
      for (const auto& s : scored) {
        if (s.class_index != c) continue;
        cands.push_back(
            {s.proposal_index,
             image.proposals[static_cast<std::size_t>(s.proposal_index)].box,
             s.score, c});
      }
      for (const auto& d : nms(cands, nms_threshold)) {
        per_image[i].push_back({image.id, c, d.box, d.score});
      }
    }
  });
  std::vector<DetRecord> records;
  for (auto& part : per_image) {
    records.insert(records.end(), part.begin(), part.end());
  }
  return records;
}

PseudoLabelSet det_records_to_pseudo(const std::vector<DetRecord>& records,
                                     int round) {
  PseudoLabelSet labels;
  labels.reserve(records.size());
  for (const auto& r : records) {
    labels.push_back({r.image_id, r.class_index, r.box, r.score, round});
  }
  return labels;
}

PseudoLabelSet mil_stage(const Dataset& train, const PseudoLabelSet& p0,
                         const MaskoutConfig& maskout_cfg,
                         const MilConfig& mil_cfg, std::uint64_t seed,
                         int jobs, std::vector<std::string>* warnings) {
  const MaskoutResult mined =
      maskout_from_pseudo_labels(p0, train, train.num_classes);
  std::vector<MilModel> models(static_cast<std::size_t>(train.num_classes));
  std::vector<std::vector<std::string>> skipped(
      static_cast<std::size_t>(train.num_classes));
  parallel_for(static_cast<std::size_t>(train.num_classes), jobs,
               [&](std::size_t c) {
                 auto built = build_bags(train, mined, static_cast<int>(c),
                                         maskout_cfg.top_m,
                                         derive_seed(seed, "stage-mil-bags"));
                 skipped[c] = std::move(built.skipped_images);
                 MilConfig per_class = mil_cfg;
                 per_class.rng_seed = derive_seed(seed, "stage-mil");
                 models[c] =
                     train_mil(built.bags, train, static_cast<int>(c),
                               per_class);
               });
  if (warnings != nullptr) {
    for (std::size_t c = 0; c < skipped.size(); ++c) {
      for (const auto& id : skipped[c]) {
        warnings->push_back(
            "mil: image '" + id + "' labeled " + std::to_string(c) +
            " had no mask-out survivors and was left out of the positive "
            "bags");
      }
    }
  }
  PseudoLabelSet labels;
  for (const auto& image : train.images) {
    if (image.proposals.empty()) continue;
    for (int c : image.labels) {
      const auto det = mil_detect(models[static_cast<std::size_t>(c)], image);
      labels.push_back(
          {image.id, c,
           image.proposals[static_cast<std::size_t>(det.proposal_index)].box,
           det.score, 1});
    }
  }
  return labels;
}

namespace {

void write_summary(const std::string& run_dir,
                   const std::vector<RoundMetrics>& metrics) {
  const std::string path = run_dir + "/metrics_summary.csv";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << "round,train_corloc,train_map,test_map\n";
  for (const auto& m : metrics) {
    out << m.round << ',' << format_double(m.train_pseudo.mean_corloc) << ','
        << format_double(m.train_pseudo.map) << ',';
    if (m.test_detection) out << format_double(m.test_detection->map);
    out << '\n';
  }
  if (!out) throw InputError("failed while writing '" + path + "'");
}

struct PipelineIo {
  std::string run_dir;
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;  // may be null
};

// Rounds from_round..K given P_{from_round} and the model the round warm
// starts from. Appends to result.metrics / result.pseudo_sets.
void run_rounds(const PipelineIo& io, const RunConfig& cfg, int from_round,
                PseudoLabelSet pseudo, LinearModel warm_start,
                std::optional<double> prev_corloc, PipelineResult& result) {
  for (int k = from_round; k <= cfg.rounds; ++k) {
    LinearModel model = stage("adapt", [&] {
      TrainConfig det_cfg = cfg.detector_train;
      det_cfg.rng_seed = derive_seed(cfg.seed, "stage-adapt",
                                     static_cast<std::uint64_t>(k));
      auto trained = train_detector(warm_start, pseudo, *io.train, det_cfg);
      for (int c : trained.skipped_classes) {
        result.warnings.push_back("round " + std::to_string(k) + ": class " +
                                  std::to_string(c) +
                                  " has no pseudo positives; detector left "
                                  "unchanged");
      }
      return std::move(trained.model);
    });
    save_model(model, model_path(io.run_dir, k));

    RoundMetrics metrics;
    metrics.round = k;
    metrics.train_pseudo =
        stage("eval", [&] {
          return evaluate(to_det_records(pseudo), *io.train,
                          cfg.eval_iou_threshold, cfg.eval_interpolation);
        });
    if (io.test != nullptr) {
      const auto records = stage("detect", [&] {
        return detect_dataset(model, *io.test, cfg.nms_threshold, cfg.jobs);
      });
      auto dets = det_records_to_pseudo(records, k);
      canonicalize_pseudo_labels(dets, *io.test);
      save_pseudo_labels(dets, detections_path(io.run_dir, k));
      metrics.test_detection = stage("eval", [&] {
        return evaluate(to_det_records(dets), *io.test, cfg.eval_iou_threshold,
                        cfg.eval_interpolation);
      });
    }
    save_round_metrics(metrics, metrics_path(io.run_dir, k));
    result.metrics.push_back(metrics);
    result.completed_rounds = k;
    result.final_model = model;

    const double corloc_now = metrics.train_pseudo.mean_corloc;
    const bool stop_early = cfg.early_stop && prev_corloc &&
                            corloc_now - *prev_corloc < cfg.early_stop_delta;
    if (k < cfg.rounds && !stop_early) {
      pseudo = stage("select", [&] {
        return relabel_with_subset_opt(model, *io.train, cfg.subsetopt,
                                       k + 1, cfg.jobs);
      });
      canonicalize_pseudo_labels(pseudo, *io.train);
      validate_pseudo_labels(pseudo, *io.train);
      save_pseudo_labels(pseudo, pseudo_path(io.run_dir, k + 1));
      result.pseudo_sets.push_back(pseudo);
    }
    if (stop_early) {
      result.warnings.push_back("early stop after round " +
                                std::to_string(k) + ": CorLoc gain " +
                                format_double(corloc_now - *prev_corloc) +
                                " below " +
                                format_double(cfg.early_stop_delta));
      break;
    }
    prev_corloc = corloc_now;
    warm_start = std::move(model);
  }
  write_summary(io.run_dir, result.metrics);
}

}  // namespace

std::string pseudo_path(const std::string& run_dir, int round) {
  return run_dir + "/pseudo_round_" + std::to_string(round) + ".jsonl";
}
std::string model_path(const std::string& run_dir, int round) {
  return run_dir + "/model_round_" + std::to_string(round) + ".json";
}
std::string metrics_path(const std::string& run_dir, int round) {
  return run_dir + "/metrics_round_" + std::to_string(round) + ".json";
}
std::string detections_path(const std::string& run_dir, int round) {
  return run_dir + "/detections_round_" + std::to_string(round) + ".jsonl";
}

void save_round_metrics(const RoundMetrics& m, const std::string& path) {
  nlohmann::ordered_json j;
  j["round"] = m.round;
  j["train_pseudo"] = detail::eval_to_json(m.train_pseudo);
  if (m.test_detection) {
    j["test_detection"] = detail::eval_to_json(*m.test_detection);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw InputError("failed while writing '" + path + "'");
}

RoundMetrics load_round_metrics(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open metrics file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("metrics file '" + path + "': " + e.what());
  }
  RoundMetrics m;
  try {
    m.round = j.at("round").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("metrics file '" + path + "': " + e.what());
  }
  const std::string ctx = "metrics file '" + path + "'";
  m.train_pseudo = detail::eval_from_json(j.at("train_pseudo"), ctx);
  if (j.contains("test_detection")) {
    m.test_detection = detail::eval_from_json(j.at("test_detection"), ctx);
  }
  return m;
}

PipelineResult run_pipeline(const Dataset& train,
                            const std::optional<Dataset>& test,
                            const RunConfig& cfg, const std::string& run_dir) {
  if (cfg.rounds < 1) {
    throw std::invalid_argument("pipeline: rounds must be >= 1");
  }
  if (train.images.empty()) {
    throw std::invalid_argument("pipeline: empty training dataset");
  }
  fs::create_directories(run_dir);
  {
    std::ofstream out(run_dir + "/config.txt", std::ios::binary);
    if (!out) throw InputError("cannot write config snapshot");
    out << serialize_run_config(cfg);
  }
  save_dataset(train, run_dir + "/train.jsonl");
  if (test) save_dataset(*test, run_dir + "/test.jsonl");

  PipelineResult result;

  // Stage 0a: image-level classifier.
  result.classifier = stage("train-cls", [&] {
    TrainConfig cls_cfg = cfg.classifier_train;
    cls_cfg.rng_seed = derive_seed(cfg.seed, "stage-classifier");
    return train_classifier(train, cls_cfg);
  });
  save_model(result.classifier, run_dir + "/classifier.json");

  // Stage 0b: mask-out mining (P_0).
  const MaskoutResult mined = stage("mine", [&] {
    return mine_dataset(result.classifier, train, cfg.maskout, cfg.jobs);
  });
  PseudoLabelSet p0 = maskout_to_pseudo_labels(mined, train);
  canonicalize_pseudo_labels(p0, train);
  save_pseudo_labels(p0, pseudo_path(run_dir, 0));
  result.pseudo_sets.push_back(p0);

  // Stage 0c: per-class MIL (P_1), consuming the persisted form of P_0 so
  // that a stage-granular rerun from the file reproduces this bit for bit.
  PseudoLabelSet p1 = stage("mil", [&] {
    return mil_stage(train, p0, cfg.maskout, cfg.mil, cfg.seed, cfg.jobs,
                     &result.warnings);
  });
  canonicalize_pseudo_labels(p1, train);
  validate_pseudo_labels(p1, train);
  save_pseudo_labels(p1, pseudo_path(run_dir, 1));
  result.pseudo_sets.push_back(p1);

  PipelineIo io{run_dir, &train, test ? &*test : nullptr};
  run_rounds(io, cfg, 1, std::move(p1), result.classifier, std::nullopt,
             result);
  return result;
}

PipelineResult resume_pipeline(const std::string& run_dir, int from_round) {
  const std::string config_file = run_dir + "/config.txt";
  if (!fs::exists(config_file)) {
    throw InputError("resume: missing artifact '" + config_file + "'");
  }
  const RunConfig cfg = load_run_config(config_file);

  const std::string train_file = run_dir + "/train.jsonl";
  if (!fs::exists(train_file)) {
    throw InputError("resume: missing artifact '" + train_file + "'");
  }
  const Dataset train = load_dataset(train_file);
  std::optional<Dataset> test;
  if (fs::exists(run_dir + "/test.jsonl")) {
    test = load_dataset(run_dir + "/test.jsonl");
  }

  if (from_round <= 0) {
    return run_pipeline(train, test, cfg, run_dir);
  }
  if (from_round > cfg.rounds) from_round = cfg.rounds + 1;

  PipelineResult result;

  // Integrity: everything the remaining rounds depend on must load.
  const std::string classifier_file = run_dir + "/classifier.json";
  if (!fs::exists(classifier_file)) {
    throw InputError("resume: missing artifact '" + classifier_file + "'");
  }
  result.classifier = load_model(classifier_file);

  for (int r = 0; r <= from_round && r <= cfg.rounds; ++r) {
    const std::string path = pseudo_path(run_dir, r);
    if (!fs::exists(path)) {
      throw InputError("resume: missing artifact '" + path + "'");
    }
    auto labels = load_pseudo_labels(path);
    if (r >= 1) validate_pseudo_labels(labels, train);
    result.pseudo_sets.push_back(std::move(labels));
  }

  LinearModel warm_start = result.classifier;
  if (from_round > 1) {
    const std::string prev_model = model_path(run_dir, from_round - 1);
    if (!fs::exists(prev_model)) {
      throw InputError("resume: missing artifact '" + prev_model + "'");
    }
    warm_start = load_model(prev_model);
  }
  std::optional<double> prev_corloc;
  for (int r = 1; r < from_round && r <= cfg.rounds; ++r) {
    const std::string path = metrics_path(run_dir, r);
    if (!fs::exists(path)) {
      throw InputError("resume: missing artifact '" + path + "'");
    }
    const RoundMetrics m = load_round_metrics(path);
    result.metrics.push_back(m);
    result.completed_rounds = r;
    prev_corloc = m.train_pseudo.mean_corloc;
  }
  if (from_round > 1) {
    result.final_model = warm_start;
  }

  if (from_round <= cfg.rounds) {
    PipelineIo io{run_dir, &train, test ? &*test : nullptr};
    run_rounds(io, cfg, from_round,
               result.pseudo_sets[static_cast<std::size_t>(from_round)],
               std::move(warm_start), prev_corloc, result);
  } else {
    write_summary(run_dir, result.metrics);
  }
  return result;
}

}  // namespace wsod
