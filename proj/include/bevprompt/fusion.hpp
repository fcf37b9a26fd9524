#ifndef BEVPROMPT_FUSION_HPP
#define BEVPROMPT_FUSION_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bevprompt/numerics/tape.hpp"

namespace bevprompt::fusion {

using nn::Tensor;
using nn::Var;

/// Query of the last cross-attention. Image: image positions attend to the
/// prompt tokens and J keeps the image shape. Prompts: prompt tokens attend
/// to the image and J has one row per token.
enum class Step4Query { Image, Prompts };

struct FusionConfig {
  int d_model = 512;
  int input_channels = 512;
  int heads = 1;
  int hidden = 2048;
  bool residuals = true;
  Step4Query step4_query = Step4Query::Image;
  double eps = 1e-5;

  nlohmann::json to_json() const;
  static FusionConfig from_json(const nlohmann::json& j);
};

/// Image feature map flattened to S = grid_h * grid_w rows of raw channels.
struct ImageFeature {
  Tensor features;
  int grid_h = 0;
  int grid_w = 0;
};

struct FusionWeights {
  FusionConfig config;
  Tensor input_proj;                     // input_channels x d
  nn::AttentionWeights self_attn;        // step 1: prompts attend to prompts
  nn::AttentionWeights prompt_to_image;  // step 2: prompts attend to the image
  nn::MlpWeights mlp;                    // step 3
  nn::AttentionWeights final_attn;       // step 4
  std::array<Tensor, 4> norm_gain;       // 1 x d each, one per step
  std::array<Tensor, 4> norm_bias;

  /// Gaussian init scaled by 1/sqrt(fan_in); norms start at gain 1, bias 0.
  static FusionWeights random(const FusionConfig& config, std::uint64_t seed);
  /// All projections and MLP weights zero; norms at gain 1, bias 0.
  static FusionWeights zeros(const FusionConfig& config);

  std::vector<std::pair<std::string, Tensor*>> tensors();
  std::vector<std::pair<std::string, const Tensor*>> tensors() const;

  /// One `<name>.bptn` per tensor plus manifest.json.
  void save(const std::filesystem::path& dir) const;
  static FusionWeights load(const std::filesystem::path& dir);
};

/// Intermediate results of one fusion pass, in step order.
struct FusionTrace {
  Tensor i;  // projected image feature, S x d
  Tensor f, g, h, j;
};

struct FusedFeature {
  Tensor j;  // S x d (or T x d with Step4Query::Prompts)
  Tensor h;  // T x d, T = total prompt tokens
};

/// F = Norm(SelfAttn(E) [+E]); G = Norm(CrossAttn(F; I) [+F]);
/// H = Norm(MLP(G) [+G]); J = Norm(CrossAttn(I; H) [+I]).
/// E stacks every prompt's tokens (T x d). Throws EmptyPromptError for T = 0
/// and DimensionError on channel mismatches.
FusedFeature fuse(const Tensor& e_tokens, const ImageFeature& image, const FusionWeights& weights);
FusionTrace fuse_trace(const Tensor& e_tokens, const ImageFeature& image, const FusionWeights& weights);

/// Fusion weights recorded on a tape.
struct FusionVars {
  const FusionConfig* config = nullptr;
  Var input_proj;
  nn::AttentionVars self_attn, prompt_to_image, final_attn;
  nn::MlpVars mlp;
  std::array<nn::NormVars, 4> norms;
};

FusionVars bind(nn::Tape& tape, const FusionWeights& weights, bool trainable);

struct FusionTraceVars {
  Var i, f, g, h, j;
};

FusionTraceVars fuse(const FusionVars& w, const Var& e_tokens, const Var& image_raw);

/// Channel concatenation [feat2d | image_raw] followed by a learned
/// projection ((c + C_in) x d).
Tensor fuse_concat(const Tensor& feat2d, const Tensor& image_raw, const Tensor& projection);
Var fuse_concat(const Var& feat2d, const Var& image_raw, const Var& projection);

// ---------------------------------------------------------------------------
// Decode head

struct HeadConfig {
  int d_model = 512;
  int hidden = 64;
  int outputs = 5;
};

/// Per detection: mean-pool its token rows of H, attend over J with that
/// pooled vector (through `readout`), concatenate both, and regress through
/// a two-layer ReLU MLP.
struct HeadWeights {
  HeadConfig config;
  Tensor readout;  // d x d
  Tensor w1, b1;   // 2d x hidden, 1 x hidden
  Tensor w2, b2;   // hidden x outputs, 1 x outputs

  static HeadWeights random(const HeadConfig& config, std::uint64_t seed);
  static HeadWeights zeros(const HeadConfig& config);

  std::vector<std::pair<std::string, Tensor*>> tensors();
  std::vector<std::pair<std::string, const Tensor*>> tensors() const;
};

struct HeadVars {
  Var readout, w1, b1, w2, b2;
};

HeadVars bind(nn::Tape& tape, const HeadWeights& weights, bool trainable);

/// Contiguous token rows belonging to one detection.
struct TokenGroup {
  Eigen::Index start = 0;
  Eigen::Index count = 0;
};

std::vector<TokenGroup> uniform_groups(std::size_t prompts, std::size_t tokens_each);

/// N x outputs, one row per group. Throws std::logic_error on an empty group.
Tensor decode_head(const FusedFeature& fused, std::span<const TokenGroup> groups, const HeadWeights& weights);
Var decode_head(const Var& j, const Var& h, std::span<const TokenGroup> groups, const HeadVars& w);
/// Same head with the per-detection pooled vectors supplied directly (N x d).
Var decode_pooled(const Var& j, const Var& pooled, const HeadVars& w);

}  // namespace bevprompt::fusion

#endif  // BEVPROMPT_FUSION_HPP
