#include "wsod/pseudo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <tuple>

#include "wsod/errors.hpp"

#include "json.hpp"

namespace wsod {
namespace {

nlohmann::ordered_json box_to_json(const BoundingBox& b) {
  return nlohmann::ordered_json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

}  // namespace

void save_pseudo_labels(const PseudoLabelSet& labels,
                        const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  for (const auto& label : labels) {
    nlohmann::ordered_json j;
    j["image"] = label.image_id;
    j["class"] = label.class_index;
    j["box"] = box_to_json(label.box);
    j["score"] = label.score;
    j["round"] = label.round;
    out << j.dump() << '\n';
  }
  if (!out) throw InputError("failed while writing '" + path + "'");
}

PseudoLabelSet load_pseudo_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open pseudo-label file '" + path + "'");
  PseudoLabelSet labels;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string ctx =
        "pseudo-label file '" + path + "' line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(ctx + ": " + e.what());
    }
    for (const char* field : {"image", "class", "box", "score", "round"}) {
      if (!j.contains(field)) {
        throw InputError(ctx + ": missing field '" + field + "'");
      }
    }
    const auto& b = j["box"];
    if (!b.is_array() || b.size() != 4) {
      throw InputError(ctx + ": field 'box' must hold four numbers");
    }
    try {
      labels.push_back({j["image"].get<std::string>(), j["class"].get<int>(),
                        BoundingBox(b[0].get<double>(), b[1].get<double>(),
                                    b[2].get<double>(), b[3].get<double>()),
                        j["score"].get<double>(), j["round"].get<int>()});
    } catch (const nlohmann::json::exception& e) {
      throw InputError(ctx + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw InputError(ctx + ": " + e.what());
    }
  }
  return labels;
}

void validate_pseudo_labels(const PseudoLabelSet& labels,
                            const Dataset& dataset) {
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& image : dataset.images) by_id[image.id] = &image;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& label = labels[i];
    const std::string ctx = "pseudo label " + std::to_string(i) +
                            " (image '" + label.image_id + "')";
    auto it = by_id.find(label.image_id);
    if (it == by_id.end()) {
      throw InputError(ctx + ": unknown image id");
    }
    if (!(label.score >= 0.0) || !(label.score <= 1.0)) {
      throw InputError(ctx + ": score must lie in [0, 1]");
    }
    if (label.class_index < 0) {
      throw InputError(ctx + ": negative class index");
    }
    const auto& proposals = it->second->proposals;
    const bool found =
        std::any_of(proposals.begin(), proposals.end(),
                    [&](const Proposal& p) { return p.box == label.box; });
    if (!found) {
      throw InputError(ctx + ": box does not match any proposal of the image");
    }
  }
}

void canonicalize_pseudo_labels(PseudoLabelSet& labels,
                                const Dataset& dataset) {
  std::map<std::string, std::size_t> order;
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    order[dataset.images[i].id] = i;
  }
  auto key = [&](const PseudoLabel& l) {
    auto it = order.find(l.image_id);
    const std::size_t rank =
        it == order.end() ? order.size() : it->second;
    return std::make_tuple(rank, l.class_index, -l.score, l.box.x_min,
                           l.box.y_min, l.box.x_max, l.box.y_max);
  };
  std::stable_sort(labels.begin(), labels.end(),
                   [&](const PseudoLabel& a, const PseudoLabel& b) {
                     return key(a) < key(b);
                   });
}

}  // namespace wsod
