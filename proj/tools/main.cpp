#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "wsod/config.hpp"
#include "wsod/dataset.hpp"
#include "wsod/errors.hpp"
#include "wsod/eval.hpp"
#include "wsod/maskout.hpp"
#include "wsod/model.hpp"
#include "wsod/pipeline.hpp"
#include "wsod/pseudo.hpp"
#include "wsod/rng.hpp"

namespace {

std::string fd(double v) { return nlohmann::json(v).dump(); }

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "wsod: warning: " << w << '\n';
}

void print_eval(const wsod::EvalResult& r) {
  std::cout << "class  ap  corloc  images  gt  detections\n";
  for (const auto& ce : r.per_class) {
    std::cout << ce.class_index << "  "
              << (ce.ap ? fd(*ce.ap) : std::string("-")) << "  "
              << (ce.corloc ? fd(*ce.corloc) : std::string("-")) << "  "
              << ce.num_images << "  " << ce.num_gt << "  "
              << ce.num_detections << '\n';
  }
  std::cout << "mAP@" << fd(r.iou_threshold) << " = " << fd(r.map)
            << "  mean CorLoc = " << fd(r.mean_corloc) << '\n';
}

struct Cli {
  CLI::App app{"Weakly supervised object localization via adaptive proposal "
               "denoising: mask-out mining, per-class MIL, subset "
               "optimization and iterative re-training on a synthetic "
               "detection benchmark."};
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::function<int()> action;

  wsod::RunConfig config() const {
    wsod::RunConfig cfg = config_path.empty()
                              ? wsod::default_run_config()
                              : wsod::load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    return cfg;
  }
};

void add_common(Cli& cli, CLI::App* sub) {
  sub->add_option("--config", cli.config_path,
                  "config file (flat `section.key = value` lines)");
  sub->add_option("--seed", cli.seed, "override the base RNG seed");
  sub->add_option("--jobs", cli.jobs, "max worker threads inside a stage")
      ->check(CLI::PositiveNumber);
}

void setup_synth(Cli& cli) {
  auto* sub = cli.app.add_subcommand(
      "synth", "generate a synthetic detection dataset with ground truth");
  auto out = std::make_shared<std::string>();
  auto num_images = std::make_shared<std::optional<int>>();
  auto classes = std::make_shared<std::optional<int>>();
  auto objects_min = std::make_shared<std::optional<int>>();
  auto objects_max = std::make_shared<std::optional<int>>();
  auto proposals = std::make_shared<std::optional<int>>();
  auto feature_dim = std::make_shared<std::optional<int>>();
  auto jitter = std::make_shared<std::optional<double>>();
  auto background = std::make_shared<std::optional<double>>();
  auto noise = std::make_shared<std::optional<double>>();
  sub->add_option("--out", *out, "output dataset file (JSONL)")->required();
  sub->add_option("--num-images", *num_images, "images to generate");
  sub->add_option("--classes", *classes, "number of object classes");
  sub->add_option("--objects-min", *objects_min, "min objects per image");
  sub->add_option("--objects-max", *objects_max, "max objects per image");
  sub->add_option("--proposals", *proposals, "proposals per image");
  sub->add_option("--feature-dim", *feature_dim, "feature dimension");
  sub->add_option("--jitter-sigma", *jitter, "box-corner noise fraction");
  sub->add_option("--background-fraction", *background,
                  "fraction of uniform background proposals");
  sub->add_option("--feature-noise-sigma", *noise, "feature noise magnitude");
  add_common(cli, sub);
  sub->callback([&cli, out, num_images, classes, objects_min, objects_max,
                 proposals, feature_dim, jitter, background, noise] {
    cli.action = [=, &cli]() {
      wsod::RunConfig cfg = cli.config();
      wsod::SynthConfig synth = cfg.synth;
      if (*num_images) synth.num_images = **num_images;
      if (*classes) synth.num_classes = **classes;
      if (*objects_min) synth.objects_min = **objects_min;
      if (*objects_max) synth.objects_max = **objects_max;
      if (*proposals) synth.proposals_per_image = **proposals;
      if (*feature_dim) synth.feature_dim = **feature_dim;
      if (*jitter) synth.jitter_sigma = **jitter;
      if (*background) synth.background_fraction = **background;
      if (*noise) synth.feature_noise_sigma = **noise;
      synth.rng_seed = cfg.seed;
      const wsod::Dataset dataset = wsod::generate_synthetic(synth);
      wsod::save_dataset(dataset, *out);
      std::cout << "wrote " << dataset.images.size() << " images ("
                << synth.num_classes << " classes, "
                << synth.proposals_per_image << " proposals/image) to "
                << *out << '\n';
      return 0;
    };
  });
}

void setup_train_cls(Cli& cli) {
  auto* sub = cli.app.add_subcommand(
      "train-cls", "train the image-level classification model");
  auto data = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  sub->add_option("--data", *data, "training dataset (JSONL)")->required();
  sub->add_option("--out", *out, "output model file")->required();
  add_common(cli, sub);
  sub->callback([&cli, data, out] {
    cli.action = [=, &cli]() {
      wsod::RunConfig cfg = cli.config();
      const wsod::Dataset dataset = wsod::load_dataset(*data);
      wsod::TrainConfig train_cfg = cfg.classifier_train;
      train_cfg.rng_seed = wsod::derive_seed(cfg.seed, "stage-classifier");
      const wsod::LinearModel model = wsod::train_classifier(dataset,
                                                             train_cfg);
      wsod::save_model(model, *out);
      std::cout << "trained classifier (C=" << model.num_classes
                << ", D=" << model.feature_dim << ") -> " << *out << '\n';
      return 0;
    };
  });
}

void setup_mine(Cli& cli) {
  auto* sub = cli.app.add_subcommand(
      "mine", "mask-out confident-proposal mining (writes P_0)");
  auto data = std::make_shared<std::string>();
  auto model_path = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto tau = std::make_shared<std::optional<double>>();
  auto top_m = std::make_shared<std::optional<int>>();
  auto mask_thr = std::make_shared<std::optional<double>>();
  sub->add_option("--data", *data, "dataset (JSONL)")->required();
  sub->add_option("--model", *model_path, "classification model")->required();
  sub->add_option("--out", *out, "output pseudo-label file")->required();
  sub->add_option("--score-threshold", *tau,
                  "class-presence threshold on the image score");
  sub->add_option("--top-m", *top_m, "proposals kept per image per class");
  sub->add_option("--mask-threshold", *mask_thr,
                  "IoU beyond which proposals are masked with a region");
  add_common(cli, sub);
  sub->callback([&cli, data, model_path, out, tau, top_m, mask_thr] {
    cli.action = [=, &cli]() {
      wsod::RunConfig cfg = cli.config();
      if (*tau) cfg.maskout.score_threshold = **tau;
      if (*top_m) cfg.maskout.top_m = **top_m;
      if (*mask_thr) cfg.maskout.mask_threshold = **mask_thr;
      const wsod::Dataset dataset = wsod::load_dataset(*data);
      const wsod::LinearModel model = wsod::load_model(*model_path);
      const wsod::MaskoutResult mined =
          wsod::mine_dataset(model, dataset, cfg.maskout, cfg.jobs);
      wsod::PseudoLabelSet p0 =
          wsod::maskout_to_pseudo_labels(mined, dataset);
      wsod::canonicalize_pseudo_labels(p0, dataset);
      wsod::save_pseudo_labels(p0, *out);
      std::cout << "mined " << p0.size() << " confident proposals -> " << *out
                << '\n';
      return 0;
    };
  });
}

void setup_mil(Cli& cli) {
  auto* sub = cli.app.add_subcommand(
      "mil", "train per-class MIL models from P_0 and emit P_1");
  auto data = std::make_shared<std::string>();
  auto pseudo = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  sub->add_option("--data", *data, "dataset (JSONL)")->required();
  sub->add_option("--pseudo", *pseudo, "P_0 pseudo-label file")->required();
  sub->add_option("--out", *out, "output pseudo-label file (P_1)")
      ->required();
  add_common(cli, sub);
  sub->callback([&cli, data, pseudo, out] {
    cli.action = [=, &cli]() {
      wsod::RunConfig cfg = cli.config();
      const wsod::Dataset dataset = wsod::load_dataset(*data);
      const wsod::PseudoLabelSet p0 = wsod::load_pseudo_labels(*pseudo);
      std::vector<std::string> warnings;
      wsod::PseudoLabelSet p1 = wsod::mil_stage(
          dataset, p0, cfg.maskout, cfg.mil, cfg.seed, cfg.jobs, &warnings);
      wsod::canonicalize_pseudo_labels(p1, dataset);
      wsod::validate_pseudo_labels(p1, dataset);
      wsod::save_pseudo_labels(p1, *out);
      print_warnings(warnings);
      std::cout << "MIL selected " << p1.size() << " pseudo labels -> "
                << *out << '\n';
      return 0;
    };
  });
}

void setup_adapt(Cli& cli) {
  auto* sub = cli.app.add_subcommand(
      "adapt", "fine-tune a model into a detector on pseudo labels");
  auto data = std::make_shared<std::string>();
  auto pseudo = std::make_shared<std::string>();
  auto init = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto round = std::make_shared<int>(1);
  sub->add_option("--data", *data, "dataset (JSONL)")->required();
  sub->add_option("--pseudo", *pseudo, "pseudo-label file P_k")->required();
  sub->add_option("--init", *init, "model to warm-start from")->required();
  sub->add_option("--out", *out, "output detector model")->required();
  sub->add_option("--round", *round,
                  "re-training round k (seeds the SGD streams)")
      ->check(CLI::PositiveNumber);
  add_common(cli, sub);
  sub->callback([&cli, data, pseudo, init, out, round] {
    cli.action = [=, &cli]() {
      wsod::RunConfig cfg = cli.config();
      const wsod::Dataset dataset = wsod::load_dataset(*data);
      const wsod::PseudoLabelSet labels = wsod::load_pseudo_labels(*pseudo);
      const wsod::LinearModel start = wsod::load_model(*init);
      wsod::TrainConfig det_cfg = cfg.detector_train;
      det_cfg.rng_seed = wsod::derive_seed(
          cfg.seed, "stage-adapt", static_cast<std::uint64_t>(*round));
      auto trained = wsod::train_detector(start, labels, dataset, det_cfg);
      std::vector<std::string> warnings;
      for (int c : trained.skipped_classes) {
        warnings.push_back("class " + std::to_string(c) +
                           " has no pseudo positives; detector left "
                           "unchanged");
      }
      wsod::save_model(trained.model, *out);
      print_warnings(warnings);
      std::cout << "adapted detector (round " << *round << ") -> " << *out
                << '\n';
      return 0;
    };
  });
}

void setup_select(Cli& cli) {
  auto* sub = cli.app.add_subcommand(
      "select", "detection selection: greedy NMS or subset optimization");
  auto data = std::make_shared<std::string>();
  auto model_path = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto mode = std::make_shared<std::string>("subset-opt");
  auto nms_thr = std::make_shared<std::optional<double>>();
  auto lambda = std::make_shared<std::optional<double>>();
  auto beta = std::make_shared<std::optional<double>>();
  auto gamma = std::make_shared<std::optional<double>>();
  auto top_n = std::make_shared<std::optional<int>>();
  auto round = std::make_shared<int>(2);
  sub->add_option("--data", *data, "dataset (JSONL)")->required();
  sub->add_option("--model", *model_path, "detection model")->required();
  sub->add_option("--out", *out, "output file")->required();
  sub->add_option("--mode", *mode, "nms | subset-opt")
      ->check(CLI::IsMember({"nms", "subset-opt"}));
  sub->add_option("--nms-threshold", *nms_thr, "NMS IoU threshold");
  sub->add_option("--lambda", *lambda, "background affinity");
  sub->add_option("--beta", *beta, "score reward");
  sub->add_option("--gamma", *gamma, "overlap penalty");
  sub->add_option("--top-n", *top_n, "detections fed in per image per class");
  sub->add_option("--round", *round,
                  "round tag written into the output records");
  add_common(cli, sub);
  sub->callback([&cli, data, model_path, out, mode, nms_thr, lambda, beta,
                 gamma, top_n, round] {
    cli.action = [=, &cli]() {
      wsod::RunConfig cfg = cli.config();
      if (*nms_thr) cfg.nms_threshold = **nms_thr;
      if (*lambda) cfg.subsetopt.lambda = **lambda;
      if (*beta) cfg.subsetopt.beta = **beta;
      if (*gamma) cfg.subsetopt.gamma = **gamma;
      if (*top_n) cfg.subsetopt.top_n = **top_n;
      const wsod::Dataset dataset = wsod::load_dataset(*data);
      const wsod::LinearModel model = wsod::load_model(*model_path);
      wsod::PseudoLabelSet records;
      if (*mode == "nms") {
        // Test-time behaviour: every class, no label peeking.
        records = wsod::det_records_to_pseudo(
            wsod::detect_dataset(model, dataset, cfg.nms_threshold, cfg.jobs),
            *round);
      } else {
        // Pseudo-label generation: image labels gate the classes.
        records = wsod::relabel_with_subset_opt(model, dataset, cfg.subsetopt,
                                                *round, cfg.jobs);
      }
      wsod::canonicalize_pseudo_labels(records, dataset);
      wsod::save_pseudo_labels(records, *out);
      std::cout << "selected " << records.size() << " boxes (" << *mode
                << ") -> " << *out << '\n';
      return 0;
    };
  });
}

void setup_eval(Cli& cli) {
  auto* sub = cli.app.add_subcommand(
      "eval", "CorLoc / AP evaluation against ground truth");
  auto data = std::make_shared<std::string>();
  auto dets = std::make_shared<std::string>();
  auto iou_thr = std::make_shared<std::optional<double>>();
  auto interp = std::make_shared<std::optional<std::string>>();
  auto out = std::make_shared<std::string>();
  auto sweep = std::make_shared<std::string>();
  auto sweep_out = std::make_shared<std::string>();
  sub->add_option("--data", *data, "dataset with ground truth (JSONL)")
      ->required();
  sub->add_option("--detections", *dets,
                  "detections / pseudo-label file to score")
      ->required();
  sub->add_option("--iou-threshold", *iou_thr, "match threshold");
  sub->add_option("--interpolation", *interp, "all_point | eleven_point")
      ->check(CLI::IsMember({"all_point", "eleven_point"}));
  sub->add_option("--out", *out, "write the full result as JSON");
  sub->add_option("--sweep", *sweep,
                  "comma-separated IoU thresholds for an mAP sweep");
  sub->add_option("--sweep-out", *sweep_out, "write the sweep as CSV");
  add_common(cli, sub);
  sub->callback([&cli, data, dets, iou_thr, interp, out, sweep, sweep_out] {
    cli.action = [=, &cli]() {
      wsod::RunConfig cfg = cli.config();
      if (*iou_thr) cfg.eval_iou_threshold = **iou_thr;
      if (*interp) {
        cfg.eval_interpolation = wsod::ap_interpolation_from_string(**interp);
      }
      const wsod::Dataset dataset = wsod::load_dataset(*data);
      const auto records =
          wsod::to_det_records(wsod::load_pseudo_labels(*dets));
      const wsod::EvalResult result = wsod::evaluate(
          records, dataset, cfg.eval_iou_threshold, cfg.eval_interpolation);
      print_eval(result);
      if (!out->empty()) wsod::save_eval_result(result, *out);
      if (!sweep->empty()) {
        std::vector<double> thresholds;
        std::stringstream ss(*sweep);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
          try {
            thresholds.push_back(std::stod(tok));
          } catch (const std::exception&) {
            throw wsod::InputError("--sweep: bad threshold '" + tok + "'");
          }
        }
        const auto table = wsod::sweep_iou(records, dataset, thresholds,
                                           cfg.eval_interpolation);
        std::ostringstream csv;
        csv << "iou_threshold,map\n";
        for (const auto& [t, m] : table) csv << fd(t) << ',' << fd(m) << '\n';
        if (!sweep_out->empty()) {
          std::ofstream f(*sweep_out, std::ios::binary);
          if (!f) {
            throw wsod::InputError("cannot open '" + *sweep_out +
                                   "' for writing");
          }
          f << csv.str();
        } else {
          std::cout << csv.str();
        }
      }
      return 0;
    };
  });
}

void setup_report(Cli& cli) {
  auto* sub = cli.app.add_subcommand(
      "report", "format a stored evaluation result");
  auto in = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto format = std::make_shared<std::string>("csv");
  sub->add_option("--in", *in, "eval result JSON (from `eval --out`)")
      ->required();
  sub->add_option("--out", *out, "report file")->required();
  sub->add_option("--format", *format, "csv | structured-text")
      ->check(CLI::IsMember({"csv", "structured-text"}));
  add_common(cli, sub);
  sub->callback([&cli, in, out, format] {
    cli.action = [=]() {
      const wsod::EvalResult result = wsod::load_eval_result(*in);
      wsod::emit_report(result, *out,
                        *format == "csv" ? wsod::ReportFormat::csv
                                         : wsod::ReportFormat::structured_text);
      std::cout << "wrote " << *format << " report -> " << *out << '\n';
      return 0;
    };
  });
}

void setup_run(Cli& cli) {
  auto* sub = cli.app.add_subcommand(
      "run", "full pipeline: classifier, mask-out, MIL, re-train rounds");
  auto train = std::make_shared<std::string>();
  auto test = std::make_shared<std::string>();
  auto out_dir = std::make_shared<std::string>();
  auto rounds = std::make_shared<std::optional<int>>();
  auto early_stop = std::make_shared<bool>(false);
  auto resume_from = std::make_shared<std::optional<int>>();
  sub->add_option("--train", *train, "training dataset (JSONL)");
  sub->add_option("--test", *test, "held-out dataset for per-round mAP");
  sub->add_option("--out", *out_dir, "run directory")->required();
  sub->add_option("--rounds", *rounds, "re-training rounds K");
  sub->add_flag("--early-stop", *early_stop,
                "stop when the CorLoc gain falls below "
                "pipeline.early_stop_delta");
  sub->add_option("--resume-from", *resume_from,
                  "re-execute rounds >= this one from persisted artifacts");
  add_common(cli, sub);
  sub->callback([&cli, train, test, out_dir, rounds, early_stop,
                 resume_from] {
    cli.action = [=, &cli]() {
      wsod::PipelineResult result;
      if (*resume_from) {
        result = wsod::resume_pipeline(*out_dir, **resume_from);
      } else {
        if (train->empty()) {
          throw wsod::InputError("run: --train is required unless resuming");
        }
        wsod::RunConfig cfg = cli.config();
        if (*rounds) cfg.rounds = **rounds;
        if (*early_stop) cfg.early_stop = true;
        const wsod::Dataset train_data = wsod::load_dataset(*train);
        std::optional<wsod::Dataset> test_data;
        if (!test->empty()) test_data = wsod::load_dataset(*test);
        result = wsod::run_pipeline(train_data, test_data, cfg, *out_dir);
      }
      print_warnings(result.warnings);
      for (const auto& m : result.metrics) {
        std::cout << "round " << m.round << ": train CorLoc "
                  << fd(m.train_pseudo.mean_corloc) << ", train mAP "
                  << fd(m.train_pseudo.map);
        if (m.test_detection) {
          std::cout << ", test mAP " << fd(m.test_detection->map);
        }
        std::cout << '\n';
      }
      std::cout << "completed " << result.completed_rounds << " rounds -> "
                << *out_dir << '\n';
      return 0;
    };
  });
}

}  // namespace

int main(int argc, char** argv) {
  Cli cli;
  cli.app.require_subcommand(1);
  setup_synth(cli);
  setup_train_cls(cli);
  setup_mine(cli);
  setup_mil(cli);
  setup_adapt(cli);
  setup_select(cli);
  setup_eval(cli);
  setup_report(cli);
  setup_run(cli);

  try {
    cli.app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return cli.app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "wsod: error: usage: " << e.what() << '\n';
    return 1;
  }

  try {
    return cli.action ? cli.action() : 0;
  } catch (const wsod::InputError& e) {
    std::cerr << "wsod: error: input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "wsod: error: runtime: " << e.what() << '\n';
    return 3;
  }
}
