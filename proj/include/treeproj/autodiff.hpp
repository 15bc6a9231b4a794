#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "treeproj/matrix.hpp"
#include "treeproj/rng.hpp"

namespace treeproj {

// Named trainable tensor. Models own these; tapes only reference them.
struct Parameter {
  std::string name;
  Matrix value;
};

enum class OpKind {
  Constant,
  Parameter,
  MatMul,
  MatMulNT,
  Add,
  AddRowBroadcast,
  Scale,
  Gelu,
  MaskedSoftmax,
  LayerNorm,
  Embedding,
  CrossEntropy,
  SliceCols,
  ConcatCols,
  SelectRows,
  Sum,
  Dropout,
};

const char* op_name(OpKind kind);

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Single-threaded reverse-mode tape. Nodes are appended in evaluation order,
// which is a topological order, so backward() is one reverse sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool track_gradients = true) : tracking_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool tracking() const { return tracking_; }

  // Makes ad::dropout active on this tape, drawing its masks from `seed`.
  // Tapes start with dropout off, so inference paths never see it.
  void enable_dropout(double rate, std::uint64_t seed);
  double dropout_rate() const { return dropout_rate_; }
  Rng& dropout_rng() { return *dropout_rng_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix value);
  // The node aliases p.value; p must outlive the tape. Repeated calls with
  // the same parameter return the same node.
  Var parameter(const Parameter& p);

  const Matrix& value(std::size_t id) const;
  OpKind kind(std::size_t id) const { return nodes_[id].kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  // Seeds d(loss)/d(loss) = 1 and propagates adjoints. `loss` must be 1 x 1.
  void backward(Var loss);

  // Adjoint of a node; an all-zero matrix if nothing flowed into it.
  Matrix gradient(Var v) const;
  // Adds d(loss)/d(p) into `into` (no-op if p was never used or not reached).
  void accumulate_parameter_gradient(const Parameter& p, Matrix& into) const;

  // Op construction interface used by the functions below.
  Var push(OpKind kind, Matrix value, std::vector<std::size_t> inputs, BackwardFn backward);
  // Adjoint slot of `id`, zero-initialised on first access.
  Matrix& adjoint(std::size_t id);
  const Matrix& adjoint_of_output(std::size_t id) const { return nodes_[id].adjoint; }

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<std::size_t> inputs;
    Matrix owned;
    const Matrix* alias = nullptr;
    Matrix adjoint;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> parameter_nodes_;
  bool tracking_ = true;
  double dropout_rate_ = 0.0;
  std::optional<Rng> dropout_rng_;
};

namespace ad {

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
// x + bias broadcast over rows; bias is 1 x cols.
Var add_row(Var x, Var bias);
Var scale(Var x, double factor);
// tanh-approximation GELU.
Var gelu(Var x);
// Row softmax; positions where mask is false get exactly zero probability.
// A row with no allowed position is a contract violation.
Var masked_softmax(Var x, const BoolMatrix* mask);
// Row layer norm with 1 x cols gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Rows of `table` selected by ids.
Var embedding(Var table, std::span<const int> ids);
// Sum over rows of -log softmax(logits)[target]; 1 x 1. Rows with a
// negative target contribute nothing.
Var cross_entropy(Var logits, std::span<const int> targets);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
Var select_rows(Var x, std::size_t begin, std::size_t end);
// Sum of all entries; 1 x 1.
Var sum(Var x);
// Inverted dropout at the tape's rate; returns x itself when dropout is off.
Var dropout(Var x);

}  // namespace ad

}  // namespace treeproj
