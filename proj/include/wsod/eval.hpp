#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wsod/dataset.hpp"
#include "wsod/pseudo.hpp"

namespace wsod {

// A scored box attributed to an image and class; the common currency of
// evaluation. Pseudo-label sets and detector outputs both convert to this.
struct DetRecord {
  std::string image_id;
  int class_index = 0;
  BoundingBox box;
  double score = 0.0;
};

std::vector<DetRecord> to_det_records(const PseudoLabelSet& labels);

enum class ApInterpolation { all_point, eleven_point };

std::string to_string(ApInterpolation interp);
ApInterpolation ap_interpolation_from_string(const std::string& s);

struct ClassEval {
  int class_index = 0;
  std::optional<double> ap;      // absent when the class has no GT boxes
  std::optional<double> corloc;  // absent when the class has no positive image
  int num_images = 0;            // images whose labels contain the class
  int num_gt = 0;                // GT boxes of the class
  int num_detections = 0;
};

struct EvalResult {
  double iou_threshold = 0.5;
  ApInterpolation interpolation = ApInterpolation::all_point;
  std::vector<ClassEval> per_class;
  double map = 0.0;          // mean over classes with >= 1 GT box
  double mean_corloc = 0.0;  // mean over classes with >= 1 positive image
  int total_images = 0;
  int total_gt = 0;
  int total_detections = 0;
};

struct CorlocResult {
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
  std::vector<int> skipped_classes;  // no positive images
};

// Fraction of images labeled with the class whose top-scoring box overlaps a
// ground-truth box of that class with IoU >= threshold.
CorlocResult corloc(const std::vector<DetRecord>& records,
                    const Dataset& dataset, double iou_threshold);

// PASCAL-style average precision: detections sorted by descending score (ties
// to the lower image id, then input order), matched greedily to the
// highest-IoU unmatched GT box of the class in their image.
std::optional<double> average_precision(const std::vector<DetRecord>& records,
                                        const Dataset& dataset,
                                        int class_index, double iou_threshold,
                                        ApInterpolation interpolation);

EvalResult evaluate(const std::vector<DetRecord>& records,
                    const Dataset& dataset, double iou_threshold,
                    ApInterpolation interpolation = ApInterpolation::all_point);

// mAP at each threshold, in input order.
std::vector<std::pair<double, double>> sweep_iou(
    const std::vector<DetRecord>& records, const Dataset& dataset,
    const std::vector<double>& thresholds,
    ApInterpolation interpolation = ApInterpolation::all_point);

enum class ReportFormat { csv, structured_text };

// Per-class rows plus a footer row of means; byte-stable across emissions.
void emit_report(const EvalResult& result, const std::string& path,
                 ReportFormat format);

void save_eval_result(const EvalResult& result, const std::string& path);
EvalResult load_eval_result(const std::string& path);

}  // namespace wsod
