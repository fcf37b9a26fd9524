#include "bevprompt/numerics/tape.hpp"

#include <cmath>
#include <string>

#include "bevprompt/errors.hpp"

namespace bevprompt::nn {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) needs = needs || in.requires_grad();
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var& v, const Tensor& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw DimensionError("backward: loss must be scalar, got " + shape_string(loss.value()));
  }
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[loss.id()].grad = Tensor::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad);
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Tensor::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

namespace {

void require(bool ok, const std::string& op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw DimensionError(op + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul", a.value(), b.value());
  const Var in[] = {a, b};
  return a.tape().record(a.value() * b.value(), in, [a, b](Tape& t, const Tensor& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.value(), b.value());
  const Var in[] = {a, b};
  return a.tape().record(a.value() + b.value(), in, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var add_row(const Var& x, const Var& row) {
  require(row.rows() == 1 && row.cols() == x.cols(), "add_row", x.value(), row.value());
  Tensor out = x.value();
  out.rowwise() += row.value().row(0);
  const Var in[] = {x, row};
  return x.tape().record(std::move(out), in, [x, row](Tape& t, const Tensor& g) {
    t.accumulate(x, g);
    if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
  });
}

Var scale(const Var& x, double s) {
  const Var in[] = {x};
  return x.tape().record(x.value() * s, in, [x, s](Tape& t, const Tensor& g) { t.accumulate(x, g * s); });
}

Var transpose(const Var& x) {
  const Var in[] = {x};
  return x.tape().record(x.value().transpose(), in,
                         [x](Tape& t, const Tensor& g) { t.accumulate(x, g.transpose()); });
}

Var relu(const Var& x) {
  const Var in[] = {x};
  return x.tape().record(relu(x.value()), in, [x](Tape& t, const Tensor& g) {
    t.accumulate(x, (x.value().array() > 0.0).select(g, 0.0));
  });
}

Var softmax_rows(const Var& x) {
  Tensor y = softmax_rows(x.value());
  const Var in[] = {x};
  return x.tape().record(y, in, [x, y](Tape& t, const Tensor& g) {
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(x, y.cwiseProduct(g - dots.replicate(1, g.cols())));
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Tensor y = layer_norm(x.value(), gain.value(), bias.value(), eps);
  const Eigen::Index rows = x.rows();
  const Eigen::Index d = x.cols();
  const double n = static_cast<double>(d);
  // Cache the normalized activations and inverse std-devs for the backward.
  Tensor xhat(rows, d);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.value().row(r).sum() / n;
    const Eigen::RowVectorXd centered = x.value().row(r).array() - mean;
    inv_std(r) = 1.0 / std::sqrt(centered.squaredNorm() / n + eps);
    xhat.row(r) = centered * inv_std(r);
  }
  const Var in[] = {x, gain, bias};
  return x.tape().record(y, in, [x, gain, bias, xhat, inv_std, n](Tape& t, const Tensor& g) {
    if (gain.requires_grad()) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
    if (bias.requires_grad()) t.accumulate(bias, g.colwise().sum());
    if (!x.requires_grad()) return;
    Tensor dx(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gain.value().row(0));
      const double mean_d = dxhat.sum() / n;
      const double mean_dx = dxhat.dot(xhat.row(r)) / n;
      dx.row(r) = inv_std(r) * (dxhat.array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
    }
    t.accumulate(x, dx);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows", parts[0].value(), p.value());
    rows += p.rows();
  }
  Tensor out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [keep](Tape& t, const Tensor& g) {
    Eigen::Index at = 0;
    for (const Var& p : keep) {
      if (p.requires_grad()) t.accumulate(p, g.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols", parts[0].value(), p.value());
    cols += p.cols();
  }
  Tensor out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [keep](Tape& t, const Tensor& g) {
    Eigen::Index at = 0;
    for (const Var& p : keep) {
      if (p.requires_grad()) t.accumulate(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count <= 0 || start + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_string(x.value()));
  }
  const Var in[] = {x};
  return x.tape().record(x.value().middleRows(start, count), in, [x, start, count](Tape& t, const Tensor& g) {
    Tensor full = Tensor::Zero(x.rows(), x.cols());
    full.middleRows(start, count) = g;
    t.accumulate(x, full);
  });
}

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count <= 0 || start + count > x.cols()) {
    throw DimensionError("slice_cols: cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_string(x.value()));
  }
  const Var in[] = {x};
  return x.tape().record(x.value().middleCols(start, count), in, [x, start, count](Tape& t, const Tensor& g) {
    Tensor full = Tensor::Zero(x.rows(), x.cols());
    full.middleCols(start, count) = g;
    t.accumulate(x, full);
  });
}

Var mean_rows(const Var& x) {
  if (x.rows() == 0) throw DimensionError("mean_rows: empty input");
  const double inv = 1.0 / static_cast<double>(x.rows());
  const Var in[] = {x};
  return x.tape().record(x.value().colwise().sum() * inv, in, [x, inv](Tape& t, const Tensor& g) {
    t.accumulate(x, g.replicate(x.rows(), 1) * inv);
  });
}

Var sum(const Var& x) {
  Tensor s(1, 1);
  s(0, 0) = x.value().sum();
  const Var in[] = {x};
  return x.tape().record(std::move(s), in, [x](Tape& t, const Tensor& g) {
    t.accumulate(x, Tensor::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  require(weights.rows() == x.rows() && weights.cols() == x.cols(), "weighted_sum", x.value(), weights);
  Tensor s(1, 1);
  s(0, 0) = x.value().cwiseProduct(weights).sum();
  const Var in[] = {x};
  return x.tape().record(std::move(s), in, [x, weights](Tape& t, const Tensor& g) {
    t.accumulate(x, weights * g(0, 0));
  });
}

Var smooth_l1(const Var& pred, const Tensor& target, const Tensor& mask, double beta) {
  require(target.rows() == pred.rows() && target.cols() == pred.cols(), "smooth_l1 target", pred.value(), target);
  require(mask.rows() == pred.rows() && mask.cols() == pred.cols(), "smooth_l1 mask", pred.value(), mask);
  const double count = (mask.array() != 0.0).count();
  const double inv = count > 0 ? 1.0 / count : 0.0;
  const Tensor diff = pred.value() - target;
  Tensor s(1, 1);
  s(0, 0) = 0.0;
  Tensor dloss = Tensor::Zero(diff.rows(), diff.cols());
  for (Eigen::Index r = 0; r < diff.rows(); ++r) {
    for (Eigen::Index c = 0; c < diff.cols(); ++c) {
      if (mask(r, c) == 0.0) continue;
      const double e = diff(r, c);
      const double a = std::abs(e);
      if (a < beta) {
        s(0, 0) += 0.5 * e * e / beta;
        dloss(r, c) = e / beta;
      } else {
        s(0, 0) += a - 0.5 * beta;
        dloss(r, c) = e > 0 ? 1.0 : -1.0;
      }
    }
  }
  s(0, 0) *= inv;
  dloss *= inv;
  const Var in[] = {pred};
  return pred.tape().record(std::move(s), in, [pred, dloss](Tape& t, const Tensor& g) {
    t.accumulate(pred, dloss * g(0, 0));
  });
}

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, const AttentionVars& w, int heads) {
  const Eigen::Index d = q.cols();
  if (d == 0) throw DimensionError("attention: zero feature dimension");
  require(k.cols() == d, "attention q/k", q.value(), k.value());
  require(v.cols() == d && v.rows() == k.rows(), "attention k/v", k.value(), v.value());
  for (const Var* p : {&w.wq, &w.wk, &w.wv, &w.wo}) {
    if (p->rows() != d || p->cols() != d) {
      throw DimensionError("attention: projection " + shape_string(p->value()) + " does not match d=" +
                           std::to_string(d));
    }
  }
  if (heads < 1 || d % heads != 0) {
    throw DimensionError("attention: " + std::to_string(heads) + " heads do not divide d=" + std::to_string(d));
  }
  const Var qp = matmul(q, w.wq);
  const Var kp = matmul(k, w.wk);
  const Var vp = matmul(v, w.wv);
  const Eigen::Index dh = d / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  if (heads == 1) {
    const Var attn = softmax_rows(scale(matmul(qp, transpose(kp)), s));
    return matmul(matmul(attn, vp), w.wo);
  }
  std::vector<Var> mixed;
  mixed.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const Var qh = slice_cols(qp, h * dh, dh);
    const Var kh = slice_cols(kp, h * dh, dh);
    const Var vh = slice_cols(vp, h * dh, dh);
    mixed.push_back(matmul(softmax_rows(scale(matmul(qh, transpose(kh)), s)), vh));
  }
  return matmul(concat_cols(mixed), w.wo);
}

Var mlp_block(const Var& x, const MlpVars& w) {
  require(x.cols() == w.w1.rows(), "mlp W1", x.value(), w.w1.value());
  require(w.w2.rows() == w.w1.cols(), "mlp W2", w.w1.value(), w.w2.value());
  return add_row(matmul(relu(add_row(matmul(x, w.w1), w.b1)), w.w2), w.b2);
}

}  // namespace bevprompt::nn
