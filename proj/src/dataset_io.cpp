#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "wsod/dataset.hpp"
#include "wsod/errors.hpp"

#include "json.hpp"

namespace wsod {
namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json box_to_json(const BoundingBox& b) {
  return ordered_json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

BoundingBox box_from_json(const nlohmann::json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 4) {
    throw InputError(ctx + ": field 'box' must be [x_min,y_min,x_max,y_max]");
  }
  for (const auto& v : j) {
    if (!v.is_number()) {
      throw InputError(ctx + ": field 'box' has a non-numeric entry");
    }
  }
  try {
    return BoundingBox(j[0].get<double>(), j[1].get<double>(),
                       j[2].get<double>(), j[3].get<double>());
  } catch (const std::invalid_argument& e) {
    throw InputError(ctx + ": field 'box': " + e.what());
  }
}

const nlohmann::json& require_field(const nlohmann::json& j,
                                    const char* name,
                                    const std::string& ctx) {
  auto it = j.find(name);
  if (it == j.end()) {
    throw InputError(ctx + ": missing field '" + name + "'");
  }
  return *it;
}

}  // namespace

void validate_record(const ImageRecord& rec, const std::string& context) {
  if (rec.id.empty()) throw InputError(context + ": field 'id' is empty");
  if (!(rec.width > 0.0) || !(rec.height > 0.0)) {
    throw InputError(context + ": width/height must be positive");
  }
  for (std::size_t i = 0; i < rec.proposals.size(); ++i) {
    const auto& b = rec.proposals[i].box;
    if (b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > rec.width ||
        b.y_max > rec.height) {
      throw InputError(context + ": proposal " + std::to_string(i) +
                       " box lies outside the image bounds");
    }
    for (double v : rec.proposals[i].feature) {
      if (!std::isfinite(v)) {
        throw InputError(context + ": proposal " + std::to_string(i) +
                         " feature has a non-finite entry");
      }
    }
    if (!std::isfinite(rec.proposals[i].score)) {
      throw InputError(context + ": proposal " + std::to_string(i) +
                       " score is non-finite");
    }
  }
  if (!std::is_sorted(rec.labels.begin(), rec.labels.end()) ||
      std::adjacent_find(rec.labels.begin(), rec.labels.end()) !=
          rec.labels.end()) {
    throw InputError(context + ": field 'labels' must be sorted and unique");
  }
  for (int c : rec.labels) {
    if (c < 0) throw InputError(context + ": negative class label");
  }
  if (rec.gt) {
    std::set<int> derived;
    for (const auto& obj : *rec.gt) {
      if (obj.class_index < 0) {
        throw InputError(context + ": field 'gt' has a negative class");
      }
      derived.insert(obj.class_index);
    }
    const std::vector<int> want(derived.begin(), derived.end());
    if (want != rec.labels) {
      throw InputError(context +
                       ": field 'labels' does not match the classes present "
                       "in 'gt'");
    }
  }
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  for (const auto& rec : dataset.images) {
    ordered_json j;
    j["id"] = rec.id;
    j["width"] = rec.width;
    j["height"] = rec.height;
    j["labels"] = rec.labels;
    if (rec.gt) {
      ordered_json gt = ordered_json::array();
      for (const auto& obj : *rec.gt) {
        ordered_json o;
        o["class"] = obj.class_index;
        o["box"] = box_to_json(obj.box);
        gt.push_back(std::move(o));
      }
      j["gt"] = std::move(gt);
    }
    ordered_json proposals = ordered_json::array();
    for (const auto& p : rec.proposals) {
      ordered_json o;
      o["box"] = box_to_json(p.box);
      o["score"] = p.score;
      o["feature"] = p.feature;
      proposals.push_back(std::move(o));
    }
    j["proposals"] = std::move(proposals);
    out << j.dump() << '\n';
  }
  if (!out) throw InputError("failed while writing '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open dataset file '" + path + "'");

  Dataset dataset;
  std::set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where =
        "dataset '" + path + "' line " + std::to_string(line_no);

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(where + ": " + e.what());
    }
    if (!j.is_object()) throw InputError(where + ": record is not an object");

    ImageRecord rec;
    try {
      rec.id = require_field(j, "id", where).get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw InputError(where + ": field 'id' must be a string");
    }
    const std::string ctx = where + " (record '" + rec.id + "')";
    try {
      rec.width = require_field(j, "width", ctx).get<double>();
      rec.height = require_field(j, "height", ctx).get<double>();
    } catch (const nlohmann::json::exception&) {
      throw InputError(ctx + ": fields 'width'/'height' must be numbers");
    }
    const auto& labels = require_field(j, "labels", ctx);
    if (!labels.is_array()) {
      throw InputError(ctx + ": field 'labels' must be an array");
    }
    for (const auto& v : labels) {
      if (!v.is_number_integer()) {
        throw InputError(ctx + ": field 'labels' must hold integers");
      }
      rec.labels.push_back(v.get<int>());
    }
    if (auto it = j.find("gt"); it != j.end()) {
      if (!it->is_array()) {
        throw InputError(ctx + ": field 'gt' must be an array");
      }
      std::vector<GtObject> gt;
      for (const auto& o : *it) {
        if (!o.is_object() || !o.contains("class") || !o.contains("box")) {
          throw InputError(ctx + ": field 'gt' entries need 'class', 'box'");
        }
        if (!o["class"].is_number_integer()) {
          throw InputError(ctx + ": field 'gt' class must be an integer");
        }
        gt.push_back(
            {o["class"].get<int>(), box_from_json(o["box"], ctx)});
      }
      rec.gt = std::move(gt);
    }
    const auto& proposals = require_field(j, "proposals", ctx);
    if (!proposals.is_array()) {
      throw InputError(ctx + ": field 'proposals' must be an array");
    }
    for (const auto& o : proposals) {
      if (!o.is_object() || !o.contains("box") || !o.contains("score") ||
          !o.contains("feature")) {
        throw InputError(ctx +
                         ": proposal entries need 'box', 'score', 'feature'");
      }
      Proposal p{box_from_json(o["box"], ctx), {}, 0.0};
      if (!o["score"].is_number()) {
        throw InputError(ctx + ": field 'score' must be a number");
      }
      p.score = o["score"].get<double>();
      if (!o["feature"].is_array()) {
        throw InputError(ctx + ": field 'feature' must be an array");
      }
      for (const auto& v : o["feature"]) {
        if (!v.is_number()) {
          throw InputError(ctx + ": field 'feature' has a non-numeric entry");
        }
        p.feature.push_back(v.get<double>());
      }
      rec.proposals.push_back(std::move(p));
    }

    validate_record(rec, ctx);

    if (!seen_ids.insert(rec.id).second) {
      throw InputError(ctx + ": duplicate image id");
    }
    for (const auto& p : rec.proposals) {
      const int dim = static_cast<int>(p.feature.size());
      if (dataset.feature_dim == 0) {
        dataset.feature_dim = dim;
      } else if (dim != dataset.feature_dim) {
        throw InputError(ctx + ": feature dimension " + std::to_string(dim) +
                         " differs from earlier records (" +
                         std::to_string(dataset.feature_dim) + ")");
      }
    }
    int max_class = -1;
    if (!rec.labels.empty()) max_class = rec.labels.back();
    dataset.num_classes = std::max(dataset.num_classes, max_class + 1);
    dataset.images.push_back(std::move(rec));
  }
  return dataset;
}

}  // namespace wsod
