#include "wsod/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "wsod/errors.hpp"

#include "json.hpp"

namespace wsod {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

double parse_double(const std::string& v) {
  std::size_t pos = 0;
  const double x = std::stod(v, &pos);
  if (pos != v.size()) throw InputError("not a number: '" + v + "'");
  return x;
}

int parse_int(const std::string& v) {
  std::size_t pos = 0;
  const long x = std::stol(v, &pos);
  if (pos != v.size()) throw InputError("not an integer: '" + v + "'");
  return static_cast<int>(x);
}

std::uint64_t parse_u64(const std::string& v) {
  std::size_t pos = 0;
  const unsigned long long x = std::stoull(v, &pos);
  if (pos != v.size()) throw InputError("not an integer: '" + v + "'");
  return static_cast<std::uint64_t>(x);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InputError("not a boolean: '" + v + "' (use true/false)");
}

std::string format_double(double v) { return nlohmann::json(v).dump(); }

struct KeySpec {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  std::string description;
};

const std::map<std::string, KeySpec>& key_table() {
  static const std::map<std::string, KeySpec> table = [] {
    std::map<std::string, KeySpec> t;
    auto add_double = [&](const std::string& key, double RunConfig::*field,
                          const std::string& desc) {
      t[key] = {[field](RunConfig& c, const std::string& v) {
                  c.*field = parse_double(v);
                },
                [field](const RunConfig& c) {
                  return format_double(c.*field);
                },
                desc};
    };
    auto add = [&](const std::string& key,
                   std::function<void(RunConfig&, const std::string&)> set,
                   std::function<std::string(const RunConfig&)> get,
                   const std::string& desc) {
      t[key] = {std::move(set), std::move(get), desc};
    };

    add("seed",
        [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v); },
        [](const RunConfig& c) { return std::to_string(c.seed); },
        "base RNG seed; every stage derives its own stream from it");
    add("jobs",
        [](RunConfig& c, const std::string& v) { c.jobs = parse_int(v); },
        [](const RunConfig& c) { return std::to_string(c.jobs); },
        "max worker threads inside a stage (results are identical for any "
        "value)");

    // synth.*
    add("synth.num_images",
        [](RunConfig& c, const std::string& v) {
          c.synth.num_images = parse_int(v);
        },
        [](const RunConfig& c) { return std::to_string(c.synth.num_images); },
        "images to generate");
    add("synth.num_classes",
        [](RunConfig& c, const std::string& v) {
          c.synth.num_classes = parse_int(v);
        },
        [](const RunConfig& c) { return std::to_string(c.synth.num_classes); },
        "object classes");
    add("synth.objects_min",
        [](RunConfig& c, const std::string& v) {
          c.synth.objects_min = parse_int(v);
        },
        [](const RunConfig& c) { return std::to_string(c.synth.objects_min); },
        "minimum objects per image");
    add("synth.objects_max",
        [](RunConfig& c, const std::string& v) {
          c.synth.objects_max = parse_int(v);
        },
        [](const RunConfig& c) { return std::to_string(c.synth.objects_max); },
        "maximum objects per image");
    add("synth.proposals_per_image",
        [](RunConfig& c, const std::string& v) {
          c.synth.proposals_per_image = parse_int(v);
        },
        [](const RunConfig& c) {
          return std::to_string(c.synth.proposals_per_image);
        },
        "proposals per image");
    add("synth.feature_dim",
        [](RunConfig& c, const std::string& v) {
          c.synth.feature_dim = parse_int(v);
        },
        [](const RunConfig& c) { return std::to_string(c.synth.feature_dim); },
        "feature vector dimension");
    add("synth.jitter_sigma",
        [](RunConfig& c, const std::string& v) {
          c.synth.jitter_sigma = parse_double(v);
        },
        [](const RunConfig& c) { return format_double(c.synth.jitter_sigma); },
        "box-corner noise on object copies, fraction of object size");
    add("synth.background_fraction",
        [](RunConfig& c, const std::string& v) {
          c.synth.background_fraction = parse_double(v);
        },
        [](const RunConfig& c) {
          return format_double(c.synth.background_fraction);
        },
        "fraction of proposals sampled uniformly over the canvas");
    add("synth.feature_noise_sigma",
        [](RunConfig& c, const std::string& v) {
          c.synth.feature_noise_sigma = parse_double(v);
        },
        [](const RunConfig& c) {
          return format_double(c.synth.feature_noise_sigma);
        },
        "feature noise magnitude");

    // Shared TrainConfig sections.
    auto add_train = [&](const std::string& prefix,
                         TrainConfig RunConfig::*cfg,
                         const std::string& who) {
      add(prefix + ".learning_rate",
          [cfg](RunConfig& c, const std::string& v) {
            (c.*cfg).learning_rate = parse_double(v);
          },
          [cfg](const RunConfig& c) {
            return format_double((c.*cfg).learning_rate);
          },
          who + " SGD learning rate");
      add(prefix + ".iterations",
          [cfg](RunConfig& c, const std::string& v) {
            (c.*cfg).iterations = parse_int(v);
          },
          [cfg](const RunConfig& c) {
            return std::to_string((c.*cfg).iterations);
          },
          who + " SGD steps");
      add(prefix + ".minibatch_size",
          [cfg](RunConfig& c, const std::string& v) {
            (c.*cfg).minibatch_size = parse_int(v);
          },
          [cfg](const RunConfig& c) {
            return std::to_string((c.*cfg).minibatch_size);
          },
          who + " minibatch size");
      add(prefix + ".l2",
          [cfg](RunConfig& c, const std::string& v) {
            (c.*cfg).l2_coefficient = parse_double(v);
          },
          [cfg](const RunConfig& c) {
            return format_double((c.*cfg).l2_coefficient);
          },
          who + " L2 coefficient");
    };
    add_train("cls", &RunConfig::classifier_train, "classifier");
    add_train("det", &RunConfig::detector_train, "detector");
    add("det.neg_iou_threshold",
        [](RunConfig& c, const std::string& v) {
          c.detector_train.neg_iou_threshold = parse_double(v);
        },
        [](const RunConfig& c) {
          return format_double(c.detector_train.neg_iou_threshold);
        },
        "negatives must stay below this IoU to every pseudo box");
    add("det.neg_ratio",
        [](RunConfig& c, const std::string& v) {
          c.detector_train.neg_ratio = parse_int(v);
        },
        [](const RunConfig& c) {
          return std::to_string(c.detector_train.neg_ratio);
        },
        "negatives sampled per positive");

    // maskout.*
    add("maskout.score_threshold",
        [](RunConfig& c, const std::string& v) {
          c.maskout.score_threshold = parse_double(v);
        },
        [](const RunConfig& c) {
          return format_double(c.maskout.score_threshold);
        },
        "minimum classification score for a class to count as present");
    add("maskout.top_m",
        [](RunConfig& c, const std::string& v) {
          c.maskout.top_m = parse_int(v);
        },
        [](const RunConfig& c) { return std::to_string(c.maskout.top_m); },
        "confident proposals kept per image per class");
    add("maskout.mask_threshold",
        [](RunConfig& c, const std::string& v) {
          c.maskout.mask_threshold = parse_double(v);
        },
        [](const RunConfig& c) {
          return format_double(c.maskout.mask_threshold);
        },
        "IoU beyond which a proposal is masked out with a region");

    // mil.*
    add("mil.outer_iterations",
        [](RunConfig& c, const std::string& v) {
          c.mil.outer_iterations = parse_int(v);
        },
        [](const RunConfig& c) {
          return std::to_string(c.mil.outer_iterations);
        },
        "instance-selection / SGD alternations");
    add("mil.learning_rate",
        [](RunConfig& c, const std::string& v) {
          c.mil.inner.learning_rate = parse_double(v);
        },
        [](const RunConfig& c) {
          return format_double(c.mil.inner.learning_rate);
        },
        "MIL step-B SGD learning rate");
    add("mil.iterations",
        [](RunConfig& c, const std::string& v) {
          c.mil.inner.iterations = parse_int(v);
        },
        [](const RunConfig& c) {
          return std::to_string(c.mil.inner.iterations);
        },
        "MIL step-B SGD steps per alternation");
    add("mil.minibatch_size",
        [](RunConfig& c, const std::string& v) {
          c.mil.inner.minibatch_size = parse_int(v);
        },
        [](const RunConfig& c) {
          return std::to_string(c.mil.inner.minibatch_size);
        },
        "MIL step-B minibatch size");
    add("mil.l2",
        [](RunConfig& c, const std::string& v) {
          c.mil.l2_coefficient = parse_double(v);
        },
        [](const RunConfig& c) { return format_double(c.mil.l2_coefficient); },
        "MIL 0.5*|w|^2 coefficient");

    // subsetopt.*
    add("subsetopt.lambda",
        [](RunConfig& c, const std::string& v) {
          c.subsetopt.lambda = parse_double(v);
        },
        [](const RunConfig& c) { return format_double(c.subsetopt.lambda); },
        "background affinity");
    add("subsetopt.beta",
        [](RunConfig& c, const std::string& v) {
          c.subsetopt.beta = parse_double(v);
        },
        [](const RunConfig& c) { return format_double(c.subsetopt.beta); },
        "score reward in the output-set objective");
    add("subsetopt.gamma",
        [](RunConfig& c, const std::string& v) {
          c.subsetopt.gamma = parse_double(v);
        },
        [](const RunConfig& c) { return format_double(c.subsetopt.gamma); },
        "pairwise overlap penalty in the output-set objective");
    add("subsetopt.top_n",
        [](RunConfig& c, const std::string& v) {
          c.subsetopt.top_n = parse_int(v);
        },
        [](const RunConfig& c) { return std::to_string(c.subsetopt.top_n); },
        "detections fed in per image per class");
    add("subsetopt.self_score_variant",
        [](RunConfig& c, const std::string& v) {
          c.subsetopt.self_score_variant = parse_bool(v);
        },
        [](const RunConfig& c) {
          return c.subsetopt.self_score_variant ? std::string("true")
                                                : std::string("false");
        },
        "weight membership rows by the row's own score (comparison mode)");

    add("nms.threshold",
        [](RunConfig& c, const std::string& v) {
          c.nms_threshold = parse_double(v);
        },
        [](const RunConfig& c) { return format_double(c.nms_threshold); },
        "IoU threshold for greedy NMS");

    // pipeline.*
    add("pipeline.rounds",
        [](RunConfig& c, const std::string& v) { c.rounds = parse_int(v); },
        [](const RunConfig& c) { return std::to_string(c.rounds); },
        "re-training rounds K");
    add("pipeline.early_stop",
        [](RunConfig& c, const std::string& v) {
          c.early_stop = parse_bool(v);
        },
        [](const RunConfig& c) {
          return c.early_stop ? std::string("true") : std::string("false");
        },
        "stop when the per-round CorLoc gain falls below early_stop_delta");
    add("pipeline.early_stop_delta",
        [](RunConfig& c, const std::string& v) {
          c.early_stop_delta = parse_double(v);
        },
        [](const RunConfig& c) { return format_double(c.early_stop_delta); },
        "CorLoc gain below which --early-stop stops the loop");

    // eval.*
    add("eval.iou_threshold",
        [](RunConfig& c, const std::string& v) {
          c.eval_iou_threshold = parse_double(v);
        },
        [](const RunConfig& c) {
          return format_double(c.eval_iou_threshold);
        },
        "IoU threshold for CorLoc / AP matching");
    add("eval.interpolation",
        [](RunConfig& c, const std::string& v) {
          c.eval_interpolation = ap_interpolation_from_string(v);
        },
        [](const RunConfig& c) { return to_string(c.eval_interpolation); },
        "AP interpolation: all_point or eleven_point");

    (void)add_double;
    return t;
  }();
  return table;
}

}  // namespace

RunConfig default_run_config() {
  RunConfig cfg;
  // Stage SGD settings sized for the 2k-step desk-scale benchmark; the
  // TrainConfig defaults keep the reference learning rate, which pairs with
  // a 20x longer schedule.
  cfg.classifier_train.learning_rate = 0.5;
  cfg.classifier_train.iterations = 2000;
  cfg.classifier_train.minibatch_size = 32;
  cfg.classifier_train.l2_coefficient = 1e-4;

  cfg.mil.outer_iterations = 10;
  cfg.mil.inner.learning_rate = 0.002;
  cfg.mil.inner.iterations = 200;
  cfg.mil.inner.minibatch_size = 32;
  cfg.mil.l2_coefficient = 1.0;

  cfg.detector_train.learning_rate = 0.2;
  cfg.detector_train.iterations = 2000;
  cfg.detector_train.minibatch_size = 32;
  cfg.detector_train.l2_coefficient = 1e-4;
  return cfg;
}

void apply_config_entry(RunConfig& cfg, const std::string& key,
                        const std::string& value) {
  const auto& table = key_table();
  auto it = table.find(key);
  if (it == table.end()) {
    throw InputError("unknown config key '" + key + "'");
  }
  try {
    it->second.set(cfg, value);
  } catch (const InputError& e) {
    throw InputError("config key '" + key + "': " + e.what());
  } catch (const std::exception& e) {
    throw InputError("config key '" + key + "': bad value '" + value + "'");
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path + "'");
  RunConfig cfg = default_run_config();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InputError("config file '" + path + "' line " +
                       std::to_string(line_no) +
                       ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      apply_config_entry(cfg, key, value);
    } catch (const InputError& e) {
      throw InputError("config file '" + path + "' line " +
                       std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& [key, spec] : key_table()) {
    out << key << " = " << spec.get(cfg) << '\n';
  }
  return out.str();
}

std::vector<ConfigKeyDoc> describe_config_keys() {
  const RunConfig defaults = default_run_config();
  std::vector<ConfigKeyDoc> docs;
  for (const auto& [key, spec] : key_table()) {
    docs.push_back({key, spec.get(defaults), spec.description});
  }
  return docs;
}

}  // namespace wsod
