#include "treeproj/autodiff.hpp"

#include <cmath>
#include <string>

#include "treeproj/error.hpp"
#include "treeproj/kernels.hpp"

namespace treeproj {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::MatMul: return "matmul";
    case OpKind::MatMulNT: return "matmul_nt";
    case OpKind::Add: return "add";
    case OpKind::AddRowBroadcast: return "add_row";
    case OpKind::Scale: return "scale";
    case OpKind::Gelu: return "gelu";
    case OpKind::MaskedSoftmax: return "masked_softmax";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Embedding: return "embedding";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::SelectRows: return "select_rows";
    case OpKind::Sum: return "sum";
    case OpKind::Dropout: return "dropout";
  }
  return "?";
}

const Matrix& Var::value() const { return tape_->value(id_); }

void Tape::enable_dropout(double rate, std::uint64_t seed) {
  expect(rate >= 0.0 && rate < 1.0, "dropout rate must lie in [0, 1)");
  dropout_rate_ = rate;
  dropout_rng_.emplace(seed);
}

Var Tape::constant(Matrix value) { return push(OpKind::Constant, std::move(value), {}, nullptr); }

Var Tape::parameter(const Parameter& p) {
  if (auto it = parameter_nodes_.find(&p); it != parameter_nodes_.end()) return Var(this, it->second);
  Node node;
  node.kind = OpKind::Parameter;
  node.alias = &p.value;
  nodes_.push_back(std::move(node));
  const std::size_t id = nodes_.size() - 1;
  parameter_nodes_.emplace(&p, id);
  return Var(this, id);
}

const Matrix& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.alias != nullptr ? *n.alias : n.owned;
}

Var Tape::push(OpKind kind, Matrix value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.kind = kind;
  node.owned = std::move(value);
  if (tracking_) {
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::adjoint(std::size_t id) {
  Node& n = nodes_[id];
  if (n.adjoint.empty() && !value(id).empty()) {
    const Matrix& v = value(id);
    n.adjoint = Matrix(v.rows(), v.cols());
  }
  return n.adjoint;
}

void Tape::backward(Var loss) {
  expect(loss.tape() == this, "backward: variable belongs to another tape");
  expect(tracking_, "backward: tape was created without gradient tracking");
  const Matrix& lv = value(loss.id());
  expect(lv.rows() == 1 && lv.cols() == 1, "backward: loss must be a 1 x 1 scalar");
  for (auto& n : nodes_) n.adjoint = Matrix();
  adjoint(loss.id())(0, 0) = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.adjoint.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

Matrix Tape::gradient(Var v) const {
  const Node& n = nodes_[v.id()];
  if (!n.adjoint.empty()) return n.adjoint;
  const Matrix& val = value(v.id());
  return Matrix(val.rows(), val.cols());
}

void Tape::accumulate_parameter_gradient(const Parameter& p, Matrix& into) const {
  auto it = parameter_nodes_.find(&p);
  if (it == parameter_nodes_.end()) return;
  const Matrix& g = nodes_[it->second].adjoint;
  if (g.empty()) return;
  expect(g.same_shape(into), "accumulate_parameter_gradient: shape mismatch for " + p.name);
  double* dst = into.data();
  const double* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

namespace ad {
namespace {

void add_into(Matrix& dst, const Matrix& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += s[i];
}

Tape& same_tape(Var a, Var b) {
  expect(a.tape() != nullptr && a.tape() == b.tape(), "autodiff: operands on different tapes");
  return *a.tape();
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Matrix out = kernels::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(OpKind::MatMul, std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.adjoint_of_output(self);
    add_into(tp.adjoint(ia), kernels::matmul_nt(g, tp.value(ib)));
    add_into(tp.adjoint(ib), kernels::matmul_tn(tp.value(ia), g));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Matrix out = kernels::matmul_nt(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(OpKind::MatMulNT, std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.adjoint_of_output(self);
    add_into(tp.adjoint(ia), kernels::matmul(g, tp.value(ib)));
    add_into(tp.adjoint(ib), kernels::matmul_tn(g, tp.value(ia)));
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  expect(a.value().same_shape(b.value()), "add: shape mismatch");
  Matrix out = a.value();
  add_into(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(OpKind::Add, std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.adjoint_of_output(self);
    add_into(tp.adjoint(ia), g);
    add_into(tp.adjoint(ib), g);
  });
}

Var add_row(Var x, Var bias) {
  Tape& t = same_tape(x, bias);
  const Matrix& xv = x.value();
  const Matrix& bv = bias.value();
  expect(bv.rows() == 1 && bv.cols() == xv.cols(), "add_row: bias must be 1 x cols");
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv(0, c);
  const std::size_t ix = x.id(), ib = bias.id();
  return t.push(OpKind::AddRowBroadcast, std::move(out), {ix, ib}, [ix, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.adjoint_of_output(self);
    add_into(tp.adjoint(ix), g);
    Matrix& gb = tp.adjoint(ib);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
  });
}

Var scale(Var x, double factor) {
  Tape& t = *x.tape();
  Matrix out = x.value();
  for (double& v : out.values()) v *= factor;
  const std::size_t ix = x.id();
  return t.push(OpKind::Scale, std::move(out), {ix}, [ix, factor](Tape& tp, std::size_t self) {
    const Matrix& g = tp.adjoint_of_output(self);
    Matrix& gx = tp.adjoint(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += factor * g.data()[i];
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var x) {
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double z = xv.data()[i];
    out.data()[i] = 0.5 * z * (1.0 + std::tanh(kGeluC * (z + kGeluA * z * z * z)));
  }
  const std::size_t ix = x.id();
  return t.push(OpKind::Gelu, std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const Matrix& g = tp.adjoint_of_output(self);
    const Matrix& xv2 = tp.value(ix);
    Matrix& gx = tp.adjoint(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double z = xv2.data()[i];
      const double u = kGeluC * (z + kGeluA * z * z * z);
      const double th = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * z * z);
      const double d = 0.5 * (1.0 + th) + 0.5 * z * (1.0 - th * th) * du;
      gx.data()[i] += g.data()[i] * d;
    }
  });
}

Var masked_softmax(Var x, const BoolMatrix* mask) {
  Tape& t = *x.tape();
  Matrix out = kernels::softmax_rows(x.value(), mask);
  const std::size_t ix = x.id();
  return t.push(OpKind::MaskedSoftmax, std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const Matrix& g = tp.adjoint_of_output(self);
    const Matrix& p = tp.value(self);
    Matrix& gx = tp.adjoint(ix);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double inner = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) inner += g(r, c) * p(r, c);
      for (std::size_t c = 0; c < p.cols(); ++c) gx(r, c) += p(r, c) * (g(r, c) - inner);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape(x, gain);
  same_tape(x, bias);
  const Matrix& xv = x.value();
  expect(gain.value().rows() == 1 && bias.value().rows() == 1, "layer_norm: gain/bias must be 1 x cols");
  Matrix out, normalized;
  std::vector<double> inv_std(xv.rows());
  kernels::parallel::layer_norm_rows(xv, gain.value().row(0), bias.value().row(0), eps, out,
                                     normalized, inv_std);
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  if (!t.tracking()) return t.push(OpKind::LayerNorm, std::move(out), {}, nullptr);
  return t.push(OpKind::LayerNorm, std::move(out), {ix, ig, ib},
                [ix, ig, ib, xh = std::move(normalized), inv = std::move(inv_std)](Tape& tp,
                                                                                  std::size_t self) {
                  const Matrix& g = tp.adjoint_of_output(self);
                  const Matrix& gain_v = tp.value(ig);
                  Matrix& gx = tp.adjoint(ix);
                  Matrix& gg = tp.adjoint(ig);
                  Matrix& gb = tp.adjoint(ib);
                  const std::size_t d = g.cols();
                  const double dn = static_cast<double>(d);
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                      const double dxh = g(r, c) * gain_v(0, c);
                      sum_dxh += dxh;
                      sum_dxh_xh += dxh * xh(r, c);
                      gg(0, c) += g(r, c) * xh(r, c);
                      gb(0, c) += g(r, c);
                    }
                    for (std::size_t c = 0; c < d; ++c) {
                      const double dxh = g(r, c) * gain_v(0, c);
                      gx(r, c) += inv[r] * (dxh - sum_dxh / dn - xh(r, c) * sum_dxh_xh / dn);
                    }
                  }
                });
}

Var embedding(Var table, std::span<const int> ids) {
  Tape& t = *table.tape();
  const Matrix& tv = table.value();
  Matrix out(ids.size(), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    expect(ids[r] >= 0 && static_cast<std::size_t>(ids[r]) < tv.rows(),
           "embedding: id " + std::to_string(ids[r]) + " out of range at position " + std::to_string(r));
    auto src = tv.row(static_cast<std::size_t>(ids[r]));
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  const std::size_t it = table.id();
  std::vector<int> keep(ids.begin(), ids.end());
  return t.push(OpKind::Embedding, std::move(out), {it}, [it, keep = std::move(keep)](Tape& tp, std::size_t self) {
    const Matrix& g = tp.adjoint_of_output(self);
    Matrix& gt = tp.adjoint(it);
    for (std::size_t r = 0; r < keep.size(); ++r) {
      auto dst = gt.row(static_cast<std::size_t>(keep[r]));
      auto src = g.row(r);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  Tape& t = *logits.tape();
  const Matrix& lv = logits.value();
  expect(targets.size() == lv.rows(), "cross_entropy: one target per row required");
  Matrix probs = kernels::softmax_rows(lv, nullptr);
  double loss = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (targets[r] < 0) continue;
    expect(static_cast<std::size_t>(targets[r]) < lv.cols(), "cross_entropy: target out of range");
    // log-sum-exp form for accuracy at extreme logits
    double mx = lv(r, 0);
    for (std::size_t c = 1; c < lv.cols(); ++c) mx = std::max(mx, lv(r, c));
    double total = 0.0;
    for (std::size_t c = 0; c < lv.cols(); ++c) total += std::exp(lv(r, c) - mx);
    loss += std::log(total) + mx - lv(r, static_cast<std::size_t>(targets[r]));
  }
  const std::size_t il = logits.id();
  std::vector<int> keep(targets.begin(), targets.end());
  return t.push(OpKind::CrossEntropy, Matrix(1, 1, loss), {il},
                [il, keep = std::move(keep), p = std::move(probs)](Tape& tp, std::size_t self) {
                  const double g = tp.adjoint_of_output(self)(0, 0);
                  Matrix& gl = tp.adjoint(il);
                  for (std::size_t r = 0; r < p.rows(); ++r) {
                    if (keep[r] < 0) continue;
                    for (std::size_t c = 0; c < p.cols(); ++c) gl(r, c) += g * p(r, c);
                    gl(r, static_cast<std::size_t>(keep[r])) -= g;
                  }
                });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  expect(begin <= end && end <= xv.cols(), "slice_cols: range out of bounds");
  Matrix out(xv.rows(), end - begin);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = xv(r, c);
  const std::size_t ix = x.id();
  return t.push(OpKind::SliceCols, std::move(out), {ix}, [ix, begin](Tape& tp, std::size_t self) {
    const Matrix& g = tp.adjoint_of_output(self);
    Matrix& gx = tp.adjoint(ix);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, begin + c) += g(r, c);
  });
}

Var concat_cols(std::span<const Var> parts) {
  expect(!parts.empty(), "concat_cols: no inputs");
  Tape& t = *parts[0].tape();
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    expect(p.tape() == &t && p.value().rows() == rows, "concat_cols: row mismatch");
    cols += p.value().cols();
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, offset + c) = pv(r, c);
    offset += pv.cols();
  }
  std::vector<std::size_t> inputs = ids;
  return t.push(OpKind::ConcatCols, std::move(out), std::move(inputs), [ids](Tape& tp, std::size_t self) {
    const Matrix& g = tp.adjoint_of_output(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      Matrix& gp = tp.adjoint(id);
      for (std::size_t r = 0; r < gp.rows(); ++r)
        for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(r, off + c);
      off += gp.cols();
    }
  });
}

Var select_rows(Var x, std::size_t begin, std::size_t end) {
  Tape& t = *x.tape();
  Matrix out = x.value().slice_rows(begin, end);
  const std::size_t ix = x.id();
  return t.push(OpKind::SelectRows, std::move(out), {ix}, [ix, begin](Tape& tp, std::size_t self) {
    const Matrix& g = tp.adjoint_of_output(self);
    Matrix& gx = tp.adjoint(ix);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gx(begin + r, c) += g(r, c);
  });
}

Var sum(Var x) {
  Tape& t = *x.tape();
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t ix = x.id();
  return t.push(OpKind::Sum, Matrix(1, 1, s), {ix}, [ix](Tape& tp, std::size_t self) {
    const double g = tp.adjoint_of_output(self)(0, 0);
    for (double& v : tp.adjoint(ix).values()) v += g;
  });
}

Var dropout(Var x) {
  Tape& t = *x.tape();
  const double rate = t.dropout_rate();
  if (rate == 0.0) return x;
  const double keep = 1.0 / (1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  for (double& m : mask.values()) m = uniform_real(t.dropout_rng()) < rate ? 0.0 : keep;
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= mask.data()[i];
  const std::size_t ix = x.id();
  return t.push(OpKind::Dropout, std::move(out), {ix}, [ix, mask = std::move(mask)](Tape& tp, std::size_t self) {
    const Matrix& g = tp.adjoint_of_output(self);
    Matrix& gx = tp.adjoint(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += mask.data()[i] * g.data()[i];
  });
}

}  // namespace ad

}  // namespace treeproj
