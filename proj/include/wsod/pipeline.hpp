#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wsod/config.hpp"
#include "wsod/dataset.hpp"
#include "wsod/eval.hpp"
#include "wsod/model.hpp"
#include "wsod/pseudo.hpp"

namespace wsod {

struct RoundMetrics {
  int round = 0;
  // Quality of the round's training set: P_k matched against the train GT.
  EvalResult train_pseudo;
  // Detector A_k applied to the held-out split (post-NMS detections).
  std::optional<EvalResult> test_detection;
};

struct PipelineResult {
  LinearModel classifier;
  LinearModel final_model;
  std::vector<PseudoLabelSet> pseudo_sets;  // P_0 .. P_K
  std::vector<RoundMetrics> metrics;        // rounds 1 .. completed_rounds
  int completed_rounds = 0;
  std::vector<std::string> warnings;
};

// Stage helpers shared by run_pipeline and the stage-granular CLI commands;
// using the same entry points keeps the manual chain byte-identical to `run`.

// Per-class MIL training seeded from P_0, returning P_1 (the MIL detections
// on every labeled train image). Classes train concurrently.
PseudoLabelSet mil_stage(const Dataset& train, const PseudoLabelSet& p0,
                         const MaskoutConfig& maskout_cfg,
                         const MilConfig& mil_cfg, std::uint64_t seed,
                         int jobs, std::vector<std::string>* warnings);

// Re-weighted pseudo labels for round `next_round`: per positive class of
// each image, subset optimization over the detector's top_n detections.
PseudoLabelSet relabel_with_subset_opt(const LinearModel& model,
                                       const Dataset& train,
                                       const SubsetOptConfig& subsetopt,
                                       int next_round, int jobs);

// Post-NMS detections over every class of every image (test-time behaviour;
// image labels are not consulted).
std::vector<DetRecord> detect_dataset(const LinearModel& model,
                                      const Dataset& dataset,
                                      double nms_threshold, int jobs);

PseudoLabelSet det_records_to_pseudo(const std::vector<DetRecord>& records,
                                     int round);

// Algorithm: train the image classifier, mine confident proposals (P_0),
// train per-class MIL models and collect their detections (P_1), then for
// k = 1..K train detector A_k on P_k and, while k < K, re-weight its
// detections with subset optimization into P_{k+1}. Every model, pseudo-label
// set and metrics file is persisted under run_dir as it is produced, so a
// failed run keeps its partial artifacts. Deterministic given cfg.seed; the
// ground truth is touched only by evaluation.
PipelineResult run_pipeline(const Dataset& train,
                            const std::optional<Dataset>& test,
                            const RunConfig& cfg, const std::string& run_dir);

// Re-executes rounds >= from_round against the artifacts persisted in
// run_dir (config snapshot and dataset copies included). from_round <= 0
// re-runs everything. Outputs are byte-identical to an uninterrupted run;
// missing or corrupt artifacts raise InputError naming the file.
PipelineResult resume_pipeline(const std::string& run_dir, int from_round);

// Artifact names inside a run directory.
std::string pseudo_path(const std::string& run_dir, int round);
std::string model_path(const std::string& run_dir, int round);
std::string metrics_path(const std::string& run_dir, int round);
std::string detections_path(const std::string& run_dir, int round);

void save_round_metrics(const RoundMetrics& m, const std::string& path);
RoundMetrics load_round_metrics(const std::string& path);

}  // namespace wsod
