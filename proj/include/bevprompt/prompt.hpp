#ifndef BEVPROMPT_PROMPT_HPP
#define BEVPROMPT_PROMPT_HPP

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "bevprompt/geometry.hpp"
#include "bevprompt/numerics/tape.hpp"

namespace bevprompt::prompt {

using nn::Tensor;

/// How the class id is written into the label row.
enum class LabelScale {
  Normalized,  // id / number of classes, so the row lies in [0, 1)
  Raw,         // the id itself
};

/// Which rows a prompt carries. BoxLabel is the full 3-row form.
enum class PromptForm { BoxLabel, Box, CenterLabel, Center };

struct PromptConfig {
  int d_model = 512;
  std::uint64_t seed = 17;
  LabelScale label_scale = LabelScale::Normalized;
  int num_classes = 9;
  bool learnable_b = false;
};

/// Random projection B (2 x d, standard Gaussian from `seed`) and learnable
/// offset C (2 x d, zero-initialized).
class PromptWeights {
 public:
  explicit PromptWeights(PromptConfig config);
  PromptWeights(PromptConfig config, Tensor b, Tensor c);

  const PromptConfig& config() const { return config_; }
  const Tensor& b() const { return b_; }
  const Tensor& c() const { return c_; }
  Tensor& c_mut() { return c_; }
  /// Only meaningful with config().learnable_b.
  Tensor& b_mut() { return b_; }

  /// Writes prompt_b.bptn, prompt_c.bptn and prompt.json into `dir`.
  void save(const std::filesystem::path& dir) const;
  static PromptWeights load(const std::filesystem::path& dir);

  nlohmann::json header() const;

 private:
  PromptConfig config_;
  Tensor b_;
  Tensor c_;
};

/// [[x_min/W, y_min/H], [x_max/W, y_max/H]]
Tensor normalize_box(const geom::Box2D& box, int image_width, int image_height);
/// [[cx/W, cy/H]]
Tensor normalize_center(const geom::Box2D& box, int image_width, int image_height);

double label_value(std::size_t label_index, const PromptConfig& config);

std::size_t tokens_per_prompt(PromptForm form);

struct PromptFeature {
  Tensor e;  // tokens_per_prompt(form) x d_model
  std::size_t detection = 0;
};

/// Rows 0-1: normalized box corners times B plus C. Row 2: the scaled class
/// id repeated d_model times. Other forms drop or shrink rows (see
/// PromptForm). Throws LabelError if `label_index` >= num_classes.
PromptFeature encode_prompt(const geom::Box2D& box, std::size_t label_index, const PromptWeights& weights,
                            int image_width, int image_height, PromptForm form = PromptForm::BoxLabel,
                            std::size_t detection = 0);

PromptFeature encode_center_prompt(const geom::Box2D& box, std::size_t label_index, const PromptWeights& weights,
                                   int image_width, int image_height, bool with_label = true,
                                   std::size_t detection = 0);

/// Taped encoding for training. `coords` is normalize_box (2 x 2) or
/// normalize_center (1 x 2) according to `form`.
nn::Var encode_prompt(const nn::Var& b, const nn::Var& c, const Tensor& coords, double label, PromptForm form);

}  // namespace bevprompt::prompt

#endif  // BEVPROMPT_PROMPT_HPP
