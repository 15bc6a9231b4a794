#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treeproj/autodiff.hpp"
#include "treeproj/matrix.hpp"
#include "treeproj/rng.hpp"

namespace treeproj {

struct EncoderConfig {
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int vocab_size = 0;
  int max_len = 64;
  std::string positional = "sinusoidal";
  // Single feed-forward layer from encoder outputs to vocab logits (MLM).
  bool mlm_head = false;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Per-layer attention permissions: layers[l](q, k) is true when query q may
// attend to key k inside encoder block l.
struct LayerMask {
  std::vector<BoolMatrix> layers;

  static LayerMask all_true(std::size_t n, std::size_t num_layers);
  // Same permission matrix at every layer.
  static LayerMask uniform(const BoolMatrix& allow, std::size_t num_layers);
  // Throws ContractViolation unless the mask is num_layers matrices of n x n
  // with no empty rows.
  void validate(std::size_t n, std::size_t num_layers) const;
  LayerMask operator&(const LayerMask& other) const;
};

// Block-diagonal permission matrix: positions attend within their segment.
// `boundaries` are segment starts after 0, ascending.
BoolMatrix block_diagonal(std::size_t n, std::span<const std::size_t> boundaries);
BoolMatrix causal_mask(std::size_t n);

Matrix sinusoidal_positions(std::size_t length, std::size_t d_model);

struct LayerNormParams {
  Parameter gain;
  Parameter bias;
};

struct AttentionParams {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FeedForwardParams {
  Parameter w1, b1, w2, b2;
};

struct EncoderBlockParams {
  LayerNormParams ln1;
  AttentionParams attn;
  LayerNormParams ln2;
  FeedForwardParams ff;
};

struct DecoderBlockParams {
  LayerNormParams ln1;
  AttentionParams self_attn;
  LayerNormParams ln2;
  AttentionParams cross_attn;
  LayerNormParams ln3;
  FeedForwardParams ff;
};

// Hidden states of one encoder pass. states[0] is embeddings + positions,
// states[l + 1] the residual stream after block l; `output` is the final
// layer norm of states.back() and is what downstream analyses call the
// contextual vectors.
struct EncodeResult {
  std::vector<Matrix> states;
  Matrix output;
};

namespace nn {
Var attention(Tape& tape, const AttentionParams& p, Var queries, Var keys_values,
              const BoolMatrix* mask, int heads);
Var feed_forward(Tape& tape, const FeedForwardParams& p, Var x);
Var layer_norm(Tape& tape, const LayerNormParams& p, Var x);
}  // namespace nn

// Autoregressive transformer decoder that cross-attends to a memory matrix.
// Used both by the seq2seq model and by the structural probe.
class Decoder {
 public:
  struct Shape {
    int layers = 2;
    int heads = 4;
    int d_model = 64;
    int d_ff = 256;
    int vocab_size = 0;
    int max_len = 64;
  };

  Decoder() = default;
  Decoder(const Shape& shape, const std::string& prefix, Rng* init);

  const Shape& shape() const { return shape_; }
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

  // Logits (inputs x vocab) for next-token prediction at every input position.
  Var logits(Tape& tape, Var memory, std::span<const int> inputs) const;
  // Greedy decoding from `bos` until `eos` (excluded) or max_steps tokens.
  std::vector<int> greedy(const Matrix& memory, int bos, int eos, int max_steps) const;

 private:
  Shape shape_;
  Parameter embedding_;
  std::vector<DecoderBlockParams> blocks_;
  LayerNormParams final_ln_;
  Parameter out_w_, out_b_;
  Matrix positions_;
};

// Encoder (the analysed function) plus an optional decoder (seq2seq training)
// and an optional MLM head.
class TransformerModel {
 public:
  // Parameters drawn from `init`; pass nullptr for zero-initialised tensors
  // (used when loading checkpoints).
  TransformerModel(const EncoderConfig& config, Rng* init);

  const EncoderConfig& config() const { return config_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find_parameter(const std::string& name);

  int num_layers() const { return config_.enc_layers; }
  int d_model() const { return config_.d_model; }

  // Token embeddings + positions; token i gets position first_position + i.
  Var embed(Tape& tape, std::span<const int> tokens, std::size_t first_position = 0) const;
  Var encoder_block(Tape& tape, int layer, Var x, const BoolMatrix* mask) const;
  Var encoder_output(Tape& tape, Var x) const;

  // All intermediate states; mask == nullptr means full bidirectional
  // attention and is bit-identical to an all-true mask.
  EncodeResult encode(std::span<const int> tokens, const LayerMask* mask = nullptr) const;
  // Continues from a given layer-0 matrix (used for embedding perturbations).
  EncodeResult encode_from_embeddings(const Matrix& layer0, const LayerMask* mask = nullptr) const;
  // Differentiable encoder on a caller's tape; returns the final-layer output.
  Var encode_on_tape(Tape& tape, std::span<const int> tokens, const LayerMask* mask = nullptr) const;

  bool has_decoder() const { return decoder_.has_value(); }
  const Decoder& decoder() const;

  // Summed token cross-entropy for one (source, target) pair. `target`
  // carries BOS ... EOS; predictions are made for target[1..].
  Var seq2seq_example_loss(Tape& tape, std::span<const int> source, std::span<const int> target) const;
  // Mean token-level cross-entropy over a batch (no gradients).
  double seq2seq_loss(std::span<const std::vector<int>> sources,
                      std::span<const std::vector<int>> targets) const;
  std::vector<int> greedy_decode(std::span<const int> source, int bos, int eos, int max_steps) const;

  bool has_mlm_head() const { return config_.mlm_head; }
  Var mlm_logits(Tape& tape, Var encoder_out) const;

  void check_tokens(std::span<const int> tokens) const;

 private:
  EncoderConfig config_;
  Parameter embedding_;
  std::vector<EncoderBlockParams> blocks_;
  LayerNormParams final_ln_;
  std::optional<Decoder> decoder_;
  Parameter mlm_w_, mlm_b_;
  Matrix positions_;
};

}  // namespace treeproj
