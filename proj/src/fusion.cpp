#include "bevprompt/fusion.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "bevprompt/errors.hpp"
#include "bevprompt/numerics/serialize.hpp"
#include "bevprompt/rng.hpp"

namespace bevprompt::fusion {

namespace {

Tensor gaussian(Eigen::Index rows, Eigen::Index cols, double sigma, Rng& rng) {
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = sigma * rng.normal();
  return t;
}

nn::AttentionWeights random_attention(Eigen::Index d, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  return {gaussian(d, d, s, rng), gaussian(d, d, s, rng), gaussian(d, d, s, rng), gaussian(d, d, s, rng)};
}

void add_attention(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix,
                   nn::AttentionWeights& a) {
  out.emplace_back(prefix + ".wq", &a.wq);
  out.emplace_back(prefix + ".wk", &a.wk);
  out.emplace_back(prefix + ".wv", &a.wv);
  out.emplace_back(prefix + ".wo", &a.wo);
}

nn::AttentionVars bind_attention(nn::Tape& t, const nn::AttentionWeights& a, bool trainable) {
  auto mk = [&](const Tensor& x) { return trainable ? t.variable(x) : t.constant(x); };
  return {mk(a.wq), mk(a.wk), mk(a.wv), mk(a.wo)};
}

const char* query_name(Step4Query q) { return q == Step4Query::Image ? "image" : "prompts"; }

}  // namespace

nlohmann::json FusionConfig::to_json() const {
  return {{"d_model", d_model}, {"input_channels", input_channels}, {"heads", heads},
          {"hidden", hidden},   {"residuals", residuals},           {"step4_query_mode", query_name(step4_query)},
          {"eps", eps}};
}

FusionConfig FusionConfig::from_json(const nlohmann::json& j) {
  try {
    FusionConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.input_channels = j.value("input_channels", c.d_model);
    c.heads = j.value("heads", 1);
    c.hidden = j.value("hidden", 4 * c.d_model);
    c.residuals = j.value("residuals", true);
    const std::string q = j.value("step4_query_mode", std::string("image"));
    if (q != "image" && q != "prompts") throw ConfigError("fusion: unknown step4_query_mode '" + q + "'");
    c.step4_query = q == "image" ? Step4Query::Image : Step4Query::Prompts;
    c.eps = j.value("eps", 1e-5);
    if (c.d_model <= 0 || c.input_channels <= 0 || c.hidden <= 0 || c.heads <= 0 || c.d_model % c.heads != 0) {
      throw ConfigError("fusion: inconsistent configuration");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("fusion manifest: ") + e.what());
  }
}

FusionWeights FusionWeights::random(const FusionConfig& config, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xf051));
  const Eigen::Index d = config.d_model;
  FusionWeights w;
  w.config = config;
  w.input_proj = gaussian(config.input_channels, d, 1.0 / std::sqrt(double(config.input_channels)), rng);
  w.self_attn = random_attention(d, rng);
  w.prompt_to_image = random_attention(d, rng);
  w.mlp = {gaussian(d, config.hidden, 1.0 / std::sqrt(double(d)), rng), Tensor::Zero(1, config.hidden),
           gaussian(config.hidden, d, 1.0 / std::sqrt(double(config.hidden)), rng), Tensor::Zero(1, d)};
  w.final_attn = random_attention(d, rng);
  for (int s = 0; s < 4; ++s) {
    w.norm_gain[s] = Tensor::Ones(1, d);
    w.norm_bias[s] = Tensor::Zero(1, d);
  }
  return w;
}

FusionWeights FusionWeights::zeros(const FusionConfig& config) {
  const Eigen::Index d = config.d_model;
  FusionWeights w;
  w.config = config;
  w.input_proj = Tensor::Zero(config.input_channels, d);
  w.self_attn = nn::AttentionWeights::zeros(d);
  w.prompt_to_image = nn::AttentionWeights::zeros(d);
  w.mlp = nn::MlpWeights::zeros(d, config.hidden);
  w.final_attn = nn::AttentionWeights::zeros(d);
  for (int s = 0; s < 4; ++s) {
    w.norm_gain[s] = Tensor::Ones(1, d);
    w.norm_bias[s] = Tensor::Zero(1, d);
  }
  return w;
}

std::vector<std::pair<std::string, Tensor*>> FusionWeights::tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("input_proj", &input_proj);
  add_attention(out, "self_attn", self_attn);
  add_attention(out, "prompt_to_image", prompt_to_image);
  out.emplace_back("mlp.w1", &mlp.w1);
  out.emplace_back("mlp.b1", &mlp.b1);
  out.emplace_back("mlp.w2", &mlp.w2);
  out.emplace_back("mlp.b2", &mlp.b2);
  add_attention(out, "final_attn", final_attn);
  for (int s = 0; s < 4; ++s) {
    out.emplace_back("norm" + std::to_string(s + 1) + ".gain", &norm_gain[s]);
    out.emplace_back("norm" + std::to_string(s + 1) + ".bias", &norm_bias[s]);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> FusionWeights::tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<FusionWeights*>(this)->tensors()) out.emplace_back(name, t);
  return out;
}

void FusionWeights::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [name, t] : tensors()) nn::save_tensor(dir / (name + ".bptn"), *t);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << config.to_json().dump(2) << '\n';
}

FusionWeights FusionWeights::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot read " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("fusion manifest: ") + e.what());
  }
  FusionWeights w = zeros(FusionConfig::from_json(manifest));
  for (auto& [name, t] : w.tensors()) {
    Tensor loaded = nn::load_tensor(dir / (name + ".bptn"));
    if (loaded.rows() != t->rows() || loaded.cols() != t->cols()) {
      throw DimensionError("fusion weights: " + name + " is " + nn::shape_string(loaded) + ", expected " +
                           nn::shape_string(*t));
    }
    *t = std::move(loaded);
  }
  return w;
}

FusionVars bind(nn::Tape& tape, const FusionWeights& w, bool trainable) {
  auto mk = [&](const Tensor& x) { return trainable ? tape.variable(x) : tape.constant(x); };
  FusionVars v;
  v.config = &w.config;
  v.input_proj = mk(w.input_proj);
  v.self_attn = bind_attention(tape, w.self_attn, trainable);
  v.prompt_to_image = bind_attention(tape, w.prompt_to_image, trainable);
  v.mlp = {mk(w.mlp.w1), mk(w.mlp.b1), mk(w.mlp.w2), mk(w.mlp.b2)};
  v.final_attn = bind_attention(tape, w.final_attn, trainable);
  for (int s = 0; s < 4; ++s) v.norms[s] = {mk(w.norm_gain[s]), mk(w.norm_bias[s])};
  return v;
}

FusionTraceVars fuse(const FusionVars& w, const Var& e_tokens, const Var& image_raw) {
  const FusionConfig& cfg = *w.config;
  if (e_tokens.rows() == 0) throw EmptyPromptError("fuse: no prompt tokens");
  if (e_tokens.cols() != cfg.d_model) {
    throw DimensionError("fuse: prompt tokens " + nn::shape_string(e_tokens.value()) + " do not match d_model=" +
                         std::to_string(cfg.d_model));
  }
  if (image_raw.cols() != cfg.input_channels) {
    throw DimensionError("fuse: image feature " + nn::shape_string(image_raw.value()) + " does not match " +
                         std::to_string(cfg.input_channels) + " input channels");
  }
  const int heads = cfg.heads;
  auto step = [&](const Var& update, const Var& residual, int s) {
    const Var x = cfg.residuals ? nn::add(update, residual) : update;
    return nn::layer_norm(x, w.norms[s].gain, w.norms[s].bias, cfg.eps);
  };

  FusionTraceVars out;
  out.i = nn::matmul(image_raw, w.input_proj);
  out.f = step(nn::scaled_dot_attention(e_tokens, e_tokens, e_tokens, w.self_attn, heads), e_tokens, 0);
  out.g = step(nn::scaled_dot_attention(out.f, out.i, out.i, w.prompt_to_image, heads), out.f, 1);
  out.h = step(nn::mlp_block(out.g, w.mlp), out.g, 2);
  if (cfg.step4_query == Step4Query::Image) {
    out.j = step(nn::scaled_dot_attention(out.i, out.h, out.h, w.final_attn, heads), out.i, 3);
  } else {
    out.j = step(nn::scaled_dot_attention(out.h, out.i, out.i, w.final_attn, heads), out.h, 3);
  }
  return out;
}

FusionTrace fuse_trace(const Tensor& e_tokens, const ImageFeature& image, const FusionWeights& weights) {
  if (image.features.rows() != static_cast<Eigen::Index>(image.grid_h) * image.grid_w) {
    throw DimensionError("fuse: image feature " + nn::shape_string(image.features) + " does not match grid " +
                         std::to_string(image.grid_h) + "x" + std::to_string(image.grid_w));
  }
  nn::Tape tape;
  const FusionVars w = bind(tape, weights, false);
  const FusionTraceVars v = fuse(w, tape.constant(e_tokens), tape.constant(image.features));
  return {v.i.value(), v.f.value(), v.g.value(), v.h.value(), v.j.value()};
}

FusedFeature fuse(const Tensor& e_tokens, const ImageFeature& image, const FusionWeights& weights) {
  FusionTrace t = fuse_trace(e_tokens, image, weights);
  return {std::move(t.j), std::move(t.h)};
}

Tensor fuse_concat(const Tensor& feat2d, const Tensor& image_raw, const Tensor& projection) {
  if (feat2d.rows() != image_raw.rows()) {
    throw DimensionError("fuse_concat: spatial extents differ, " + nn::shape_string(feat2d) + " vs " +
                         nn::shape_string(image_raw));
  }
  if (projection.rows() != feat2d.cols() + image_raw.cols()) {
    throw DimensionError("fuse_concat: projection " + nn::shape_string(projection) + " does not take " +
                         std::to_string(feat2d.cols() + image_raw.cols()) + " channels");
  }
  Tensor cat(feat2d.rows(), feat2d.cols() + image_raw.cols());
  cat << feat2d, image_raw;
  return cat * projection;
}

Var fuse_concat(const Var& feat2d, const Var& image_raw, const Var& projection) {
  if (feat2d.rows() != image_raw.rows()) {
    throw DimensionError("fuse_concat: spatial extents differ, " + nn::shape_string(feat2d.value()) + " vs " +
                         nn::shape_string(image_raw.value()));
  }
  const Var parts[] = {feat2d, image_raw};
  return nn::matmul(nn::concat_cols(parts), projection);
}

HeadWeights HeadWeights::random(const HeadConfig& config, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x4ead));
  const Eigen::Index d = config.d_model;
  HeadWeights w;
  w.config = config;
  w.readout = gaussian(d, d, 1.0 / std::sqrt(double(d)), rng);
  w.w1 = gaussian(2 * d, config.hidden, 1.0 / std::sqrt(double(2 * d)), rng);
  w.b1 = Tensor::Zero(1, config.hidden);
  w.w2 = gaussian(config.hidden, config.outputs, 1.0 / std::sqrt(double(config.hidden)), rng);
  w.b2 = Tensor::Zero(1, config.outputs);
  return w;
}

HeadWeights HeadWeights::zeros(const HeadConfig& config) {
  const Eigen::Index d = config.d_model;
  return {config,
          Tensor::Zero(d, d),
          Tensor::Zero(2 * d, config.hidden),
          Tensor::Zero(1, config.hidden),
          Tensor::Zero(config.hidden, config.outputs),
          Tensor::Zero(1, config.outputs)};
}

std::vector<std::pair<std::string, Tensor*>> HeadWeights::tensors() {
  return {{"head.readout", &readout}, {"head.w1", &w1}, {"head.b1", &b1}, {"head.w2", &w2}, {"head.b2", &b2}};
}

std::vector<std::pair<std::string, const Tensor*>> HeadWeights::tensors() const {
  return {{"head.readout", &readout}, {"head.w1", &w1}, {"head.b1", &b1}, {"head.w2", &w2}, {"head.b2", &b2}};
}

HeadVars bind(nn::Tape& tape, const HeadWeights& w, bool trainable) {
  auto mk = [&](const Tensor& x) { return trainable ? tape.variable(x) : tape.constant(x); };
  return {mk(w.readout), mk(w.w1), mk(w.b1), mk(w.w2), mk(w.b2)};
}

std::vector<TokenGroup> uniform_groups(std::size_t prompts, std::size_t tokens_each) {
  std::vector<TokenGroup> groups(prompts);
  for (std::size_t p = 0; p < prompts; ++p) {
    groups[p] = {static_cast<Eigen::Index>(p * tokens_each), static_cast<Eigen::Index>(tokens_each)};
  }
  return groups;
}

Var decode_pooled(const Var& j, const Var& pooled, const HeadVars& w) {
  const double s = 1.0 / std::sqrt(static_cast<double>(j.cols()));
  const Var query = nn::matmul(pooled, w.readout);
  const Var attn = nn::softmax_rows(nn::scale(nn::matmul(query, nn::transpose(j)), s));
  const Var parts[] = {pooled, nn::matmul(attn, j)};
  const Var x = nn::concat_cols(parts);
  return nn::add_row(nn::matmul(nn::relu(nn::add_row(nn::matmul(x, w.w1), w.b1)), w.w2), w.b2);
}

Var decode_head(const Var& j, const Var& h, std::span<const TokenGroup> groups, const HeadVars& w) {
  Tensor pool = Tensor::Zero(static_cast<Eigen::Index>(groups.size()), h.rows());
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const TokenGroup& g = groups[k];
    if (g.count <= 0) throw std::logic_error("decode_head: empty token group");
    if (g.start < 0 || g.start + g.count > h.rows()) throw std::logic_error("decode_head: token group out of range");
    pool.row(static_cast<Eigen::Index>(k)).segment(g.start, g.count).setConstant(1.0 / static_cast<double>(g.count));
  }
  return decode_pooled(j, nn::matmul(h.tape().constant(std::move(pool)), h), w);
}

Tensor decode_head(const FusedFeature& fused, std::span<const TokenGroup> groups, const HeadWeights& weights) {
  nn::Tape tape;
  const HeadVars w = bind(tape, weights, false);
  return decode_head(tape.constant(fused.j), tape.constant(fused.h), groups, w).value();
}

}  // namespace bevprompt::fusion
