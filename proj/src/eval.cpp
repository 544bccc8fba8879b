#include "wsod/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "wsod/errors.hpp"

#include "eval_json.hpp"
#include "json.hpp"

namespace wsod {
namespace {

// Shortest representation that parses back to the same double (nlohmann's
// serializer), so reports re-parse exactly.
std::string format_double(double v) { return nlohmann::json(v).dump(); }

struct ClassGt {
  // Per image id: GT boxes of the class.
  std::map<std::string, std::vector<BoundingBox>> boxes;
  int total = 0;
};

ClassGt collect_gt(const Dataset& dataset, int class_index) {
  ClassGt gt;
  for (const auto& image : dataset.images) {
    if (!image.gt) continue;
    for (const auto& obj : *image.gt) {
      if (obj.class_index == class_index) {
        gt.boxes[image.id].push_back(obj.box);
        ++gt.total;
      }
    }
  }
  return gt;
}

}  // namespace

std::vector<DetRecord> to_det_records(const PseudoLabelSet& labels) {
  std::vector<DetRecord> records;
  records.reserve(labels.size());
  for (const auto& label : labels) {
    records.push_back(
        {label.image_id, label.class_index, label.box, label.score});
  }
  return records;
}

std::string to_string(ApInterpolation interp) {
  return interp == ApInterpolation::all_point ? "all_point" : "eleven_point";
}

ApInterpolation ap_interpolation_from_string(const std::string& s) {
  if (s == "all_point") return ApInterpolation::all_point;
  if (s == "eleven_point") return ApInterpolation::eleven_point;
  throw InputError("unknown AP interpolation '" + s + "'");
}

CorlocResult corloc(const std::vector<DetRecord>& records,
                    const Dataset& dataset, double iou_threshold) {
  CorlocResult result;
  result.per_class.assign(static_cast<std::size_t>(dataset.num_classes),
                          std::nullopt);

  // Top-scoring box per (image, class); earlier records win score ties.
  std::map<std::pair<std::string, int>, const DetRecord*> top;
  for (const auto& r : records) {
    auto& slot = top[{r.image_id, r.class_index}];
    if (slot == nullptr || r.score > slot->score) slot = &r;
  }

  double sum = 0.0;
  int evaluated = 0;
  for (int c = 0; c < dataset.num_classes; ++c) {
    int positives = 0;
    int correct = 0;
    for (const auto& image : dataset.images) {
      if (!std::binary_search(image.labels.begin(), image.labels.end(), c)) {
        continue;
      }
      ++positives;
      auto it = top.find({image.id, c});
      if (it == top.end() || !image.gt) continue;
      const auto& box = it->second->box;
      for (const auto& obj : *image.gt) {
        if (obj.class_index == c && iou(box, obj.box) >= iou_threshold) {
          ++correct;
          break;
        }
      }
    }
    if (positives == 0) {
      result.skipped_classes.push_back(c);
      continue;
    }
    const double value = static_cast<double>(correct) / positives;
    result.per_class[static_cast<std::size_t>(c)] = value;
    sum += value;
    ++evaluated;
  }
  result.mean = evaluated > 0 ? sum / evaluated : 0.0;
  return result;
}

std::optional<double> average_precision(const std::vector<DetRecord>& records,
                                        const Dataset& dataset,
                                        int class_index, double iou_threshold,
                                        ApInterpolation interpolation) {
  const ClassGt gt = collect_gt(dataset, class_index);
  if (gt.total == 0) return std::nullopt;

  std::vector<const DetRecord*> dets;
  for (const auto& r : records) {
    if (r.class_index == class_index) dets.push_back(&r);
  }
  if (dets.empty()) return 0.0;
  std::stable_sort(dets.begin(), dets.end(),
                   [](const DetRecord* a, const DetRecord* b) {
                     if (a->score != b->score) return a->score > b->score;
                     return a->image_id < b->image_id;
                   });

  std::map<std::string, std::vector<bool>> matched;
  for (const auto& [id, boxes] : gt.boxes) {
    matched[id].assign(boxes.size(), false);
  }

  std::vector<int> is_tp;
  is_tp.reserve(dets.size());
  for (const DetRecord* d : dets) {
    auto it = gt.boxes.find(d->image_id);
    int best = -1;
    double best_iou = 0.0;
    if (it != gt.boxes.end()) {
      auto& used = matched[d->image_id];
      for (std::size_t g = 0; g < it->second.size(); ++g) {
        if (used[g]) continue;
        const double overlap = iou(d->box, it->second[g]);
        if (overlap >= iou_threshold && overlap > best_iou) {
          best_iou = overlap;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) used[static_cast<std::size_t>(best)] = true;
    }
    is_tp.push_back(best >= 0 ? 1 : 0);
  }

  const std::size_t n = is_tp.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += is_tp[i];
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / gt.total;
  }

  if (interpolation == ApInterpolation::eleven_point) {
    double sum = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double level = t / 10.0;
      double best = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (recall[i] >= level) best = std::max(best, precision[i]);
      }
      sum += best;
    }
    return sum / 11.0;
  }

  // All-point AP: integrate the precision envelope over recall.
  double ap = 0.0;
  double envelope = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    envelope = std::max(envelope, precision[i]);
    const double r_lo = i == 0 ? 0.0 : recall[i - 1];
    ap += (recall[i] - r_lo) * envelope;
  }
  return ap;
}

EvalResult evaluate(const std::vector<DetRecord>& records,
                    const Dataset& dataset, double iou_threshold,
                    ApInterpolation interpolation) {
  EvalResult result;
  result.iou_threshold = iou_threshold;
  result.interpolation = interpolation;
  result.total_images = static_cast<int>(dataset.images.size());

  const CorlocResult cl = corloc(records, dataset, iou_threshold);

  double ap_sum = 0.0;
  int ap_count = 0;
  for (int c = 0; c < dataset.num_classes; ++c) {
    ClassEval ce;
    ce.class_index = c;
    const ClassGt gt = collect_gt(dataset, c);
    ce.num_gt = gt.total;
    result.total_gt += gt.total;
    for (const auto& image : dataset.images) {
      if (std::binary_search(image.labels.begin(), image.labels.end(), c)) {
        ++ce.num_images;
      }
    }
    for (const auto& r : records) {
      if (r.class_index == c) ++ce.num_detections;
    }
    result.total_detections += ce.num_detections;
    ce.ap = average_precision(records, dataset, c, iou_threshold,
                              interpolation);
    if (ce.ap) {
      ap_sum += *ce.ap;
      ++ap_count;
    }
    ce.corloc = cl.per_class[static_cast<std::size_t>(c)];
    result.per_class.push_back(ce);
  }
  result.map = ap_count > 0 ? ap_sum / ap_count : 0.0;
  result.mean_corloc = cl.mean;
  return result;
}

std::vector<std::pair<double, double>> sweep_iou(
    const std::vector<DetRecord>& records, const Dataset& dataset,
    const std::vector<double>& thresholds, ApInterpolation interpolation) {
  std::vector<std::pair<double, double>> table;
  table.reserve(thresholds.size());
  for (double t : thresholds) {
    if (!(t > 0.0) || !(t < 1.0)) {
      throw std::invalid_argument("sweep_iou: thresholds must lie in (0, 1)");
    }
    table.emplace_back(t, evaluate(records, dataset, t, interpolation).map);
  }
  return table;
}

void save_eval_result(const EvalResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << detail::eval_to_json(result).dump(2) << '\n';
  if (!out) throw InputError("failed while writing '" + path + "'");
}

EvalResult load_eval_result(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open eval result '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("eval result '" + path + "': " + e.what());
  }
  return detail::eval_from_json(j, "eval result '" + path + "'");
}

void emit_report(const EvalResult& result, const std::string& path,
                 ReportFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  if (format == ReportFormat::csv) {
    out << "class,ap,corloc,num_images,num_gt,num_detections\n";
    for (const auto& ce : result.per_class) {
      out << ce.class_index << ','
          << (ce.ap ? format_double(*ce.ap) : "") << ','
          << (ce.corloc ? format_double(*ce.corloc) : "") << ','
          << ce.num_images << ',' << ce.num_gt << ',' << ce.num_detections
          << '\n';
    }
    out << "mean," << format_double(result.map) << ','
        << format_double(result.mean_corloc) << ',' << result.total_images
        << ',' << result.total_gt << ',' << result.total_detections << '\n';
  } else {
    for (const auto& ce : result.per_class) {
      nlohmann::ordered_json o;
      o["class"] = ce.class_index;
      o["ap"] = ce.ap ? nlohmann::ordered_json(*ce.ap)
                      : nlohmann::ordered_json(nullptr);
      o["corloc"] = ce.corloc ? nlohmann::ordered_json(*ce.corloc)
                              : nlohmann::ordered_json(nullptr);
      o["num_images"] = ce.num_images;
      o["num_gt"] = ce.num_gt;
      o["num_detections"] = ce.num_detections;
      out << o.dump() << '\n';
    }
    nlohmann::ordered_json footer;
    footer["class"] = "mean";
    footer["ap"] = result.map;
    footer["corloc"] = result.mean_corloc;
    footer["num_images"] = result.total_images;
    footer["num_gt"] = result.total_gt;
    footer["num_detections"] = result.total_detections;
    out << footer.dump() << '\n';
  }
  if (!out) throw InputError("failed while writing '" + path + "'");
}

}  // namespace wsod
