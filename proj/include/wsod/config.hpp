#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wsod/dataset.hpp"
#include "wsod/eval.hpp"
#include "wsod/maskout.hpp"
#include "wsod/mil.hpp"
#include "wsod/model.hpp"
#include "wsod/select.hpp"

namespace wsod {

// The union of all stage configurations, loadable from a flat
// `section.key = value` text file with command-line overrides. Unknown keys
// are rejected; every key has a documented default (see docs/FORMATS.md or
// describe_config_keys()).
struct RunConfig {
  std::uint64_t seed = 7;
  int jobs = 1;
  SynthConfig synth;
  TrainConfig classifier_train;
  MaskoutConfig maskout;
  MilConfig mil;
  TrainConfig detector_train;
  SubsetOptConfig subsetopt;
  double nms_threshold = 0.5;
  int rounds = 4;
  bool early_stop = false;
  double early_stop_delta = 0.002;
  double eval_iou_threshold = 0.5;
  ApInterpolation eval_interpolation = ApInterpolation::all_point;
};

// Defaults tuned for the built-in synthetic benchmark; this is what every
// subcommand starts from before config-file and flag overrides.
RunConfig default_run_config();

// Parses `path` on top of default_run_config(). Throws InputError naming the
// line for malformed syntax, unknown keys, or bad values.
RunConfig load_run_config(const std::string& path);

// Applies one `section.key = value` assignment.
void apply_config_entry(RunConfig& cfg, const std::string& key,
                        const std::string& value);

// Canonical snapshot: every key, sorted, one `key = value` line each.
// Parsing the output reproduces the config exactly.
std::string serialize_run_config(const RunConfig& cfg);

struct ConfigKeyDoc {
  std::string key;
  std::string default_value;
  std::string description;
};

std::vector<ConfigKeyDoc> describe_config_keys();

}  // namespace wsod
