#include "bevprompt/grouping.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace bevprompt::grouping {

const std::vector<std::string>& dair_vocabulary() {
  static const std::vector<std::string> vocab = {"truck",        "bus",        "car",         "van",       "bicyclist",
                                                 "tricyclist",   "motorcyclist", "barrowlist", "pedestrian"};
  return vocab;
}

ClassGrouping::ClassGrouping(std::string name, std::vector<std::string> vocabulary,
                             std::vector<Superclass> superclasses)
    : name_(std::move(name)), vocabulary_(std::move(vocabulary)), superclasses_(std::move(superclasses)) {
  if (superclasses_.empty()) throw ConfigError("grouping '" + name_ + "': no superclasses");
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
    if (!index_of_.emplace(vocabulary_[i], i).second) {
      throw ConfigError("grouping '" + name_ + "': duplicate vocabulary label '" + vocabulary_[i] + "'");
    }
  }
  std::set<std::string> names;
  for (std::size_t h = 0; h < superclasses_.size(); ++h) {
    const Superclass& s = superclasses_[h];
    if (!names.insert(s.name).second) throw ConfigError("grouping '" + name_ + "': duplicate superclass " + s.name);
    if (s.members.empty()) throw ConfigError("grouping '" + name_ + "': superclass " + s.name + " is empty");
    for (const std::string& m : s.members) {
      if (!index_of_.contains(m)) throw ConfigError("grouping '" + name_ + "': '" + m + "' is not in the vocabulary");
      if (!head_of_.emplace(m, h).second) {
        throw ConfigError("grouping '" + name_ + "': '" + m + "' belongs to two superclasses");
      }
    }
  }
  if (head_of_.size() != vocabulary_.size()) {
    throw ConfigError("grouping '" + name_ + "': some vocabulary labels have no superclass");
  }
}

bool ClassGrouping::contains(std::string_view fine_label) const {
  return head_of_.contains(std::string(fine_label));
}

Route ClassGrouping::route(std::string_view fine_label) const {
  const auto it = head_of_.find(std::string(fine_label));
  if (it == head_of_.end()) throw LabelError("unknown label '" + std::string(fine_label) + "'");
  return {superclasses_[it->second].name, it->second};
}

const std::string& ClassGrouping::superclass_of(std::string_view fine_label) const {
  const auto it = head_of_.find(std::string(fine_label));
  if (it == head_of_.end()) throw LabelError("unknown label '" + std::string(fine_label) + "'");
  return superclasses_[it->second].name;
}

std::size_t ClassGrouping::fine_index(std::string_view fine_label) const {
  const auto it = index_of_.find(std::string(fine_label));
  if (it == index_of_.end()) throw LabelError("unknown label '" + std::string(fine_label) + "'");
  return it->second;
}

std::size_t ClassGrouping::classifier_arity(std::size_t head) const {
  const Superclass& s = superclasses_.at(head);
  return s.arity == HeadArity::Superclass ? 1 : s.members.size();
}

ClassGrouping ClassGrouping::from_json(const nlohmann::json& j) {
  try {
    std::vector<Superclass> supers;
    std::vector<std::string> union_members;
    for (const auto& s : j.at("superclasses")) {
      Superclass sc;
      sc.name = s.at("name").get<std::string>();
      sc.members = s.at("members").get<std::vector<std::string>>();
      if (s.contains("arity")) {
        const auto& a = s.at("arity");
        if (a.is_string()) {
          const auto v = a.get<std::string>();
          if (v == "superclass") {
            sc.arity = HeadArity::Superclass;
          } else if (v == "fine") {
            sc.arity = HeadArity::FineClasses;
          } else {
            throw ConfigError("grouping: arity must be 'superclass' or 'fine'");
          }
        } else {
          sc.arity = a.get<int>() == 1 ? HeadArity::Superclass : HeadArity::FineClasses;
        }
      }
      union_members.insert(union_members.end(), sc.members.begin(), sc.members.end());
      supers.push_back(std::move(sc));
    }
    std::vector<std::string> vocab =
        j.contains("vocabulary") ? j.at("vocabulary").get<std::vector<std::string>>() : union_members;
    return ClassGrouping(j.at("name").get<std::string>(), std::move(vocab), std::move(supers));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("grouping definition: ") + e.what());
  }
}

nlohmann::json ClassGrouping::to_json() const {
  nlohmann::json supers = nlohmann::json::array();
  for (const Superclass& s : superclasses_) {
    supers.push_back({{"name", s.name},
                      {"members", s.members},
                      {"arity", s.arity == HeadArity::Superclass ? "superclass" : "fine"}});
  }
  return {{"name", name_}, {"vocabulary", vocabulary_}, {"superclasses", supers}};
}

ClassGrouping builtin_grouping(std::string_view name) {
  const auto& vocab = dair_vocabulary();
  const std::vector<std::string> cyclists = {"bicyclist", "tricyclist", "motorcyclist", "barrowlist"};
  if (name == "appearance") {
    return ClassGrouping("appearance", vocab,
                         {{"truck_bus", {"truck", "bus"}, HeadArity::FineClasses},
                          {"car_van", {"car", "van"}, HeadArity::FineClasses},
                          {"cyclist", cyclists, HeadArity::FineClasses},
                          {"pedestrian", {"pedestrian"}, HeadArity::Superclass}});
  }
  if (name == "functionality") {
    return ClassGrouping("functionality", vocab,
                         {{"vehicle", {"car", "van", "truck", "bus"}, HeadArity::Superclass},
                          {"cyclist", cyclists, HeadArity::Superclass},
                          {"pedestrian", {"pedestrian"}, HeadArity::Superclass}});
  }
  if (name == "entirety") {
    return ClassGrouping("entirety", vocab, {{"object", vocab, HeadArity::Superclass}});
  }
  throw ConfigError("unknown grouping strategy '" + std::string(name) + "'");
}

std::map<std::string, std::optional<double>> evaluate_grouping_consistency(const ClassGrouping& grouping,
                                                                           std::span<const Object3D> detections,
                                                                           std::span<const Object3D> ground_truth,
                                                                           double iou_threshold) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // agree, matched
  for (const Superclass& s : grouping.superclasses()) tally[s.name] = {0, 0};

  std::map<int, std::vector<const Object3D*>> dets_by_frame, gts_by_frame;
  for (const Object3D& d : detections) dets_by_frame[d.frame].push_back(&d);
  for (const Object3D& g : ground_truth) gts_by_frame[g.frame].push_back(&g);

  for (auto& [frame, gts] : gts_by_frame) {
    auto dit = dets_by_frame.find(frame);
    if (dit == dets_by_frame.end()) continue;
    auto dets = dit->second;
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Object3D* a, const Object3D* b) { return a->box.score > b->box.score; });
    std::vector<bool> used(gts.size(), false);
    for (const Object3D* d : dets) {
      const auto fd = geom::bev_footprint(d->box);
      double best = iou_threshold;
      std::optional<std::size_t> best_gt;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g]) continue;
        const double iou = geom::iou_rotated(fd, geom::bev_footprint(gts[g]->box));
        if (iou >= best && (!best_gt || iou > best)) {
          best = iou;
          best_gt = g;
        }
      }
      if (!best_gt) continue;
      used[*best_gt] = true;
      const std::string& truth = grouping.superclass_of(gts[*best_gt]->box.label);
      auto& [agree, matched] = tally[truth];
      ++matched;
      if (grouping.superclass_of(d->box.label) == truth) ++agree;
    }
  }

  std::map<std::string, std::optional<double>> out;
  for (const auto& [name, counts] : tally) {
    out[name] = counts.second == 0 ? std::nullopt
                                   : std::optional<double>(static_cast<double>(counts.first) / counts.second);
  }
  return out;
}

}  // namespace bevprompt::grouping
