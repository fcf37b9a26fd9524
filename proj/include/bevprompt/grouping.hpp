#ifndef BEVPROMPT_GROUPING_HPP
#define BEVPROMPT_GROUPING_HPP

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "bevprompt/io.hpp"

namespace bevprompt::grouping {

/// Fine labels of the DAIR-V2X-I benchmark, in the order used for class ids.
const std::vector<std::string>& dair_vocabulary();

/// What a superclass head classifies: the superclass itself (1-way) or each
/// of its member fine labels (K-way).
enum class HeadArity { Superclass, FineClasses };

struct Superclass {
  std::string name;
  std::vector<std::string> members;
  HeadArity arity = HeadArity::Superclass;
};

struct Route {
  std::string superclass;
  std::size_t head = 0;
};

/// A partition of a fine-label vocabulary into superclasses, one detector
/// head per superclass.
class ClassGrouping {
 public:
  /// Throws ConfigError unless every vocabulary label belongs to exactly one
  /// superclass and every member is in the vocabulary.
  ClassGrouping(std::string name, std::vector<std::string> vocabulary, std::vector<Superclass> superclasses);

  const std::string& name() const { return name_; }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  const std::vector<Superclass>& superclasses() const { return superclasses_; }
  std::size_t head_count() const { return superclasses_.size(); }

  bool contains(std::string_view fine_label) const;
  /// Throws LabelError for labels outside the vocabulary.
  Route route(std::string_view fine_label) const;
  const std::string& superclass_of(std::string_view fine_label) const;
  std::size_t fine_index(std::string_view fine_label) const;
  /// 1 for a superclass head, member count for a K-way head.
  std::size_t classifier_arity(std::size_t head) const;

  /// {name, vocabulary?, superclasses: [{name, members, arity}]}; arity is
  /// "superclass" / "fine" or the integer 1 / K. Without a vocabulary the
  /// union of members is used.
  static ClassGrouping from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

 private:
  std::string name_;
  std::vector<std::string> vocabulary_;
  std::vector<Superclass> superclasses_;
  std::unordered_map<std::string, std::size_t> head_of_;
  std::unordered_map<std::string, std::size_t> index_of_;
};

/// "appearance", "functionality" or "entirety"; ConfigError otherwise.
ClassGrouping builtin_grouping(std::string_view name);

/// Per superclass (of the ground truth): fraction of matched detections whose
/// superclass agrees. Matching is class-agnostic, per frame, greedy by
/// descending detection score on BEV IoU >= `iou_threshold`. Superclasses
/// with no matched detection map to nullopt.
std::map<std::string, std::optional<double>> evaluate_grouping_consistency(
    const ClassGrouping& grouping, std::span<const Object3D> detections, std::span<const Object3D> ground_truth,
    double iou_threshold = 0.5);

}  // namespace bevprompt::grouping

#endif  // BEVPROMPT_GROUPING_HPP
