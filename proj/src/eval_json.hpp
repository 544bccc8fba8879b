#pragma once

// Internal: EvalResult <-> JSON, shared by the eval and pipeline serializers.

#include <string>

#include "wsod/errors.hpp"
#include "wsod/eval.hpp"

#include "json.hpp"

namespace wsod::detail {

inline nlohmann::ordered_json eval_to_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["iou_threshold"] = r.iou_threshold;
  j["interpolation"] = to_string(r.interpolation);
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (const auto& ce : r.per_class) {
    nlohmann::ordered_json o;
    o["class"] = ce.class_index;
    o["ap"] = ce.ap ? nlohmann::ordered_json(*ce.ap)
                    : nlohmann::ordered_json(nullptr);
    o["corloc"] = ce.corloc ? nlohmann::ordered_json(*ce.corloc)
                            : nlohmann::ordered_json(nullptr);
    o["num_images"] = ce.num_images;
    o["num_gt"] = ce.num_gt;
    o["num_detections"] = ce.num_detections;
    classes.push_back(std::move(o));
  }
  j["per_class"] = std::move(classes);
  j["map"] = r.map;
  j["mean_corloc"] = r.mean_corloc;
  j["total_images"] = r.total_images;
  j["total_gt"] = r.total_gt;
  j["total_detections"] = r.total_detections;
  return j;
}

inline EvalResult eval_from_json(const nlohmann::json& j,
                                 const std::string& ctx) {
  EvalResult r;
  try {
    r.iou_threshold = j.at("iou_threshold").get<double>();
    r.interpolation =
        ap_interpolation_from_string(j.at("interpolation").get<std::string>());
    for (const auto& o : j.at("per_class")) {
      ClassEval ce;
      ce.class_index = o.at("class").get<int>();
      if (!o.at("ap").is_null()) ce.ap = o.at("ap").get<double>();
      if (!o.at("corloc").is_null()) ce.corloc = o.at("corloc").get<double>();
      ce.num_images = o.at("num_images").get<int>();
      ce.num_gt = o.at("num_gt").get<int>();
      ce.num_detections = o.at("num_detections").get<int>();
      r.per_class.push_back(ce);
    }
    r.map = j.at("map").get<double>();
    r.mean_corloc = j.at("mean_corloc").get<double>();
    r.total_images = j.at("total_images").get<int>();
    r.total_gt = j.at("total_gt").get<int>();
    r.total_detections = j.at("total_detections").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(ctx + ": " + e.what());
  }
  return r;
}

}  // namespace wsod::detail
