#include "bevprompt/prompt.hpp"

#include <fstream>

#include "bevprompt/numerics/serialize.hpp"
#include "bevprompt/rng.hpp"

namespace bevprompt::prompt {

namespace {

bool has_label(PromptForm f) { return f == PromptForm::BoxLabel || f == PromptForm::CenterLabel; }
bool is_center(PromptForm f) { return f == PromptForm::CenterLabel || f == PromptForm::Center; }

void check_image(int w, int h) {
  if (w <= 0 || h <= 0) throw ConfigError("prompt: image dimensions must be positive");
}

const char* scale_name(LabelScale s) { return s == LabelScale::Normalized ? "normalized" : "raw"; }

}  // namespace

PromptWeights::PromptWeights(PromptConfig config) : config_(config) {
  if (config_.d_model <= 0) throw ConfigError("prompt: d_model must be positive");
  if (config_.num_classes <= 0) throw ConfigError("prompt: num_classes must be positive");
  Rng rng(config_.seed);
  b_.resize(2, config_.d_model);
  for (Eigen::Index i = 0; i < b_.size(); ++i) b_.data()[i] = rng.normal();
  c_ = Tensor::Zero(2, config_.d_model);
}

PromptWeights::PromptWeights(PromptConfig config, Tensor b, Tensor c)
    : config_(config), b_(std::move(b)), c_(std::move(c)) {
  if (b_.rows() != 2 || c_.rows() != 2 || b_.cols() != config_.d_model || c_.cols() != config_.d_model) {
    throw DimensionError("prompt weights: B " + nn::shape_string(b_) + " / C " + nn::shape_string(c_) +
                         " do not match d_model=" + std::to_string(config_.d_model));
  }
}

nlohmann::json PromptWeights::header() const {
  return {{"seed", config_.seed},
          {"d_model", config_.d_model},
          {"label_scale_mode", scale_name(config_.label_scale)},
          {"num_classes", config_.num_classes},
          {"learnable_b", config_.learnable_b}};
}

void PromptWeights::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nn::save_tensor(dir / "prompt_b.bptn", b_);
  nn::save_tensor(dir / "prompt_c.bptn", c_);
  std::ofstream out(dir / "prompt.json");
  if (!out) throw IoError("cannot write " + (dir / "prompt.json").string());
  out << header().dump(2) << '\n';
}

PromptWeights PromptWeights::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "prompt.json");
  if (!in) throw IoError("cannot read " + (dir / "prompt.json").string());
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(in);
    PromptConfig cfg;
    cfg.seed = h.at("seed").get<std::uint64_t>();
    cfg.d_model = h.at("d_model").get<int>();
    const auto mode = h.at("label_scale_mode").get<std::string>();
    if (mode != "normalized" && mode != "raw") throw ConfigError("prompt: unknown label_scale_mode " + mode);
    cfg.label_scale = mode == "raw" ? LabelScale::Raw : LabelScale::Normalized;
    cfg.num_classes = h.value("num_classes", 9);
    cfg.learnable_b = h.value("learnable_b", false);
    return PromptWeights(cfg, nn::load_tensor(dir / "prompt_b.bptn"), nn::load_tensor(dir / "prompt_c.bptn"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("prompt.json: ") + e.what());
  }
}

Tensor normalize_box(const geom::Box2D& box, int image_width, int image_height) {
  check_image(image_width, image_height);
  box.validate();
  if (!box.inside(image_width, image_height)) throw DataError("normalize_box: box extends outside the image");
  Tensor a(2, 2);
  a << box.x_min / image_width, box.y_min / image_height, box.x_max / image_width, box.y_max / image_height;
  return a;
}

Tensor normalize_center(const geom::Box2D& box, int image_width, int image_height) {
  const Tensor a = normalize_box(box, image_width, image_height);
  Tensor c(1, 2);
  c << (a(0, 0) + a(1, 0)) / 2, (a(0, 1) + a(1, 1)) / 2;
  return c;
}

double label_value(std::size_t label_index, const PromptConfig& config) {
  if (label_index >= static_cast<std::size_t>(config.num_classes)) {
    throw LabelError("prompt: label index " + std::to_string(label_index) + " outside [0, " +
                     std::to_string(config.num_classes) + ")");
  }
  const double id = static_cast<double>(label_index);
  return config.label_scale == LabelScale::Normalized ? id / config.num_classes : id;
}

std::size_t tokens_per_prompt(PromptForm form) {
  switch (form) {
    case PromptForm::BoxLabel: return 3;
    case PromptForm::Box: return 2;
    case PromptForm::CenterLabel: return 2;
    case PromptForm::Center: return 1;
  }
  return 0;
}

PromptFeature encode_prompt(const geom::Box2D& box, std::size_t label_index, const PromptWeights& weights,
                            int image_width, int image_height, PromptForm form, std::size_t detection) {
  const double label = label_value(label_index, weights.config());
  const Tensor coords =
      is_center(form) ? normalize_center(box, image_width, image_height) : normalize_box(box, image_width, image_height);
  const Eigen::Index d = weights.config().d_model;
  const Eigen::Index coord_rows = coords.rows();
  Tensor e(static_cast<Eigen::Index>(tokens_per_prompt(form)), d);
  e.topRows(coord_rows) = coords * weights.b() + weights.c().topRows(coord_rows);
  if (has_label(form)) e.row(coord_rows).setConstant(label);
  return {std::move(e), detection};
}

PromptFeature encode_center_prompt(const geom::Box2D& box, std::size_t label_index, const PromptWeights& weights,
                                   int image_width, int image_height, bool with_label, std::size_t detection) {
  return encode_prompt(box, label_index, weights, image_width, image_height,
                       with_label ? PromptForm::CenterLabel : PromptForm::Center, detection);
}

nn::Var encode_prompt(const nn::Var& b, const nn::Var& c, const Tensor& coords, double label, PromptForm form) {
  nn::Tape& tape = b.tape();
  const Eigen::Index rows = coords.rows();
  const nn::Var c_rows = rows == c.rows() ? c : nn::slice_rows(c, 0, rows);
  const nn::Var projected = nn::add(nn::matmul(tape.constant(coords), b), c_rows);
  if (!has_label(form)) return projected;
  const nn::Var parts[] = {projected, tape.constant(Tensor::Constant(1, b.cols(), label))};
  return nn::concat_rows(parts);
}

}  // namespace bevprompt::prompt
