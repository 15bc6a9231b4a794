#include "treeproj/model.hpp"

#include <cmath>
#include <string>

#include "treeproj/error.hpp"

namespace treeproj {

void EncoderConfig::validate() const {
  expect(enc_layers >= 1, "EncoderConfig: enc_layers must be >= 1");
  expect(dec_layers >= 0, "EncoderConfig: dec_layers must be >= 0");
  expect(heads >= 1 && d_model >= 1 && d_model % heads == 0, "EncoderConfig: heads must divide d_model");
  expect(d_ff >= 1, "EncoderConfig: d_ff must be >= 1");
  expect(vocab_size >= 1, "EncoderConfig: vocab_size must be >= 1");
  expect(max_len >= 1, "EncoderConfig: max_len must be >= 1");
  expect(positional == "sinusoidal", "EncoderConfig: only sinusoidal positions are supported");
}

LayerMask LayerMask::all_true(std::size_t n, std::size_t num_layers) {
  return LayerMask{std::vector<BoolMatrix>(num_layers, BoolMatrix(n, n, true))};
}

LayerMask LayerMask::uniform(const BoolMatrix& allow, std::size_t num_layers) {
  return LayerMask{std::vector<BoolMatrix>(num_layers, allow)};
}

void LayerMask::validate(std::size_t n, std::size_t num_layers) const {
  expect(layers.size() == num_layers, "LayerMask: expected one matrix per encoder layer");
  for (const auto& m : layers) {
    expect(m.rows() == n && m.cols() == n, "LayerMask: matrix must be n x n");
    expect(m.every_row_nonempty(), "LayerMask: every query row needs at least one permitted key");
  }
}

LayerMask LayerMask::operator&(const LayerMask& other) const {
  expect(layers.size() == other.layers.size(), "LayerMask: layer count mismatch");
  LayerMask out;
  for (std::size_t l = 0; l < layers.size(); ++l) out.layers.push_back(layers[l] & other.layers[l]);
  return out;
}

BoolMatrix block_diagonal(std::size_t n, std::span<const std::size_t> boundaries) {
  std::vector<std::size_t> segment(n, 0);
  std::size_t seg = 0, next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (next < boundaries.size() && boundaries[next] <= i) {
      ++seg;
      ++next;
    }
    segment[i] = seg;
  }
  BoolMatrix out(n, n, false);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k < n; ++k) out.set(q, k, segment[q] == segment[k]);
  return out;
}

BoolMatrix causal_mask(std::size_t n) {
  BoolMatrix out(n, n, false);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k <= q; ++k) out.set(q, k, true);
  return out;
}

Matrix sinusoidal_positions(std::size_t length, std::size_t d_model) {
  Matrix pe(length, d_model);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe(pos, i) = std::sin(angle);
      if (i + 1 < d_model) pe(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

namespace {

Parameter make_weight(const std::string& name, std::size_t rows, std::size_t cols, double stddev, Rng* init) {
  Parameter p{name, Matrix(rows, cols)};
  if (init != nullptr)
    for (double& v : p.value.values()) v = stddev * normal(*init);
  return p;
}

Parameter make_bias(const std::string& name, std::size_t cols, double fill = 0.0) {
  return Parameter{name, Matrix(1, cols, fill)};
}

LayerNormParams make_ln(const std::string& name, std::size_t d, Rng* init) {
  // loaded checkpoints overwrite these; only fresh models need gain = 1
  return LayerNormParams{make_bias(name + ".gain", d, init != nullptr ? 1.0 : 0.0), make_bias(name + ".bias", d)};
}

AttentionParams make_attention(const std::string& name, std::size_t d, Rng* init) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  return AttentionParams{make_weight(name + ".wq", d, d, s, init), make_bias(name + ".bq", d),
                         make_weight(name + ".wk", d, d, s, init), make_bias(name + ".bk", d),
                         make_weight(name + ".wv", d, d, s, init), make_bias(name + ".bv", d),
                         make_weight(name + ".wo", d, d, s, init), make_bias(name + ".bo", d)};
}

FeedForwardParams make_ff(const std::string& name, std::size_t d, std::size_t dff, Rng* init) {
  return FeedForwardParams{make_weight(name + ".w1", d, dff, 1.0 / std::sqrt(static_cast<double>(d)), init),
                           make_bias(name + ".b1", dff),
                           make_weight(name + ".w2", dff, d, 1.0 / std::sqrt(static_cast<double>(dff)), init),
                           make_bias(name + ".b2", d)};
}

void push_ln(std::vector<Parameter*>& out, LayerNormParams& p) {
  out.push_back(&p.gain);
  out.push_back(&p.bias);
}
void push_ln(std::vector<const Parameter*>& out, const LayerNormParams& p) {
  out.push_back(&p.gain);
  out.push_back(&p.bias);
}

template <typename Out, typename A>
void push_attention(Out& out, A& p) {
  for (auto* q : {&p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv, &p.wo, &p.bo}) out.push_back(q);
}

template <typename Out, typename F>
void push_ff(Out& out, F& p) {
  for (auto* q : {&p.w1, &p.b1, &p.w2, &p.b2}) out.push_back(q);
}

}  // namespace

namespace nn {

Var layer_norm(Tape& tape, const LayerNormParams& p, Var x) {
  return ad::layer_norm(x, tape.parameter(p.gain), tape.parameter(p.bias));
}

Var attention(Tape& tape, const AttentionParams& p, Var queries, Var keys_values, const BoolMatrix* mask,
              int heads) {
  const std::size_t d = queries.cols();
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  Var q = ad::add_row(ad::matmul(queries, tape.parameter(p.wq)), tape.parameter(p.bq));
  Var k = ad::add_row(ad::matmul(keys_values, tape.parameter(p.wk)), tape.parameter(p.bk));
  Var v = ad::add_row(ad::matmul(keys_values, tape.parameter(p.wv)), tape.parameter(p.bv));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    Var qh = heads == 1 ? q : ad::slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = heads == 1 ? k : ad::slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = heads == 1 ? v : ad::slice_cols(v, h * dh, (h + 1) * dh);
    Var probs = ad::masked_softmax(ad::scale(ad::matmul_nt(qh, kh), scale), mask);
    outs.push_back(ad::matmul(probs, vh));
  }
  Var joined = heads == 1 ? outs[0] : ad::concat_cols(outs);
  return ad::add_row(ad::matmul(joined, tape.parameter(p.wo)), tape.parameter(p.bo));
}

Var feed_forward(Tape& tape, const FeedForwardParams& p, Var x) {
  Var h = ad::gelu(ad::add_row(ad::matmul(x, tape.parameter(p.w1)), tape.parameter(p.b1)));
  return ad::add_row(ad::matmul(h, tape.parameter(p.w2)), tape.parameter(p.b2));
}

}  // namespace nn

// ---------------------------------------------------------------- Decoder

Decoder::Decoder(const Shape& shape, const std::string& prefix, Rng* init) : shape_(shape) {
  expect(shape.layers >= 0 && shape.heads >= 1 && shape.d_model % shape.heads == 0,
         "Decoder: heads must divide d_model");
  const auto d = static_cast<std::size_t>(shape.d_model);
  embedding_ = make_weight(prefix + ".emb", static_cast<std::size_t>(shape.vocab_size), d, 1.0, init);
  for (int l = 0; l < shape.layers; ++l) {
    const std::string n = prefix + ".l" + std::to_string(l);
    blocks_.push_back(DecoderBlockParams{make_ln(n + ".ln1", d, init), make_attention(n + ".self", d, init),
                                         make_ln(n + ".ln2", d, init), make_attention(n + ".cross", d, init),
                                         make_ln(n + ".ln3", d, init),
                                         make_ff(n + ".ff", d, static_cast<std::size_t>(shape.d_ff), init)});
  }
  final_ln_ = make_ln(prefix + ".ln_f", d, init);
  out_w_ = make_weight(prefix + ".out.w", d, static_cast<std::size_t>(shape.vocab_size),
                       1.0 / std::sqrt(static_cast<double>(d)), init);
  out_b_ = make_bias(prefix + ".out.b", static_cast<std::size_t>(shape.vocab_size));
  positions_ = sinusoidal_positions(static_cast<std::size_t>(shape.max_len), d);
}

void Decoder::collect(std::vector<Parameter*>& out) {
  out.push_back(&embedding_);
  for (auto& b : blocks_) {
    push_ln(out, b.ln1);
    push_attention(out, b.self_attn);
    push_ln(out, b.ln2);
    push_attention(out, b.cross_attn);
    push_ln(out, b.ln3);
    push_ff(out, b.ff);
  }
  push_ln(out, final_ln_);
  out.push_back(&out_w_);
  out.push_back(&out_b_);
}

void Decoder::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&embedding_);
  for (const auto& b : blocks_) {
    push_ln(out, b.ln1);
    push_attention(out, b.self_attn);
    push_ln(out, b.ln2);
    push_attention(out, b.cross_attn);
    push_ln(out, b.ln3);
    push_ff(out, b.ff);
  }
  push_ln(out, final_ln_);
  out.push_back(&out_w_);
  out.push_back(&out_b_);
}

Var Decoder::logits(Tape& tape, Var memory, std::span<const int> inputs) const {
  const std::size_t t = inputs.size();
  expect(t >= 1, "Decoder::logits: empty input");
  expect(t <= static_cast<std::size_t>(shape_.max_len), "Decoder::logits: input longer than max_len");
  for (std::size_t i = 0; i < t; ++i)
    expect(inputs[i] >= 0 && inputs[i] < shape_.vocab_size,
           "Decoder: token id out of vocabulary at position " + std::to_string(i));
  Var x = ad::dropout(
      ad::add(ad::embedding(tape.parameter(embedding_), inputs), tape.constant(positions_.slice_rows(0, t))));
  const BoolMatrix causal = causal_mask(t);
  for (const auto& b : blocks_) {
    Var h = nn::layer_norm(tape, b.ln1, x);
    x = ad::add(x, ad::dropout(nn::attention(tape, b.self_attn, h, h, &causal, shape_.heads)));
    h = nn::layer_norm(tape, b.ln2, x);
    x = ad::add(x, ad::dropout(nn::attention(tape, b.cross_attn, h, memory, nullptr, shape_.heads)));
    h = nn::layer_norm(tape, b.ln3, x);
    x = ad::add(x, ad::dropout(nn::feed_forward(tape, b.ff, h)));
  }
  x = nn::layer_norm(tape, final_ln_, x);
  return ad::add_row(ad::matmul(x, tape.parameter(out_w_)), tape.parameter(out_b_));
}

std::vector<int> Decoder::greedy(const Matrix& memory, int bos, int eos, int max_steps) const {
  std::vector<int> inputs{bos};
  std::vector<int> produced;
  const int limit = std::min(max_steps, shape_.max_len - 1);
  for (int step = 0; step < limit; ++step) {
    Tape tape(false);
    Var lg = logits(tape, tape.constant(memory), inputs);
    const Matrix& lv = lg.value();
    const std::size_t last = lv.rows() - 1;
    std::size_t best = 0;
    for (std::size_t c = 1; c < lv.cols(); ++c)
      if (lv(last, c) > lv(last, best)) best = c;
    const int token = static_cast<int>(best);
    if (token == eos) break;
    produced.push_back(token);
    inputs.push_back(token);
  }
  return produced;
}

// ------------------------------------------------------- TransformerModel

TransformerModel::TransformerModel(const EncoderConfig& config, Rng* init) : config_(config) {
  config_.validate();
  const auto d = static_cast<std::size_t>(config_.d_model);
  embedding_ = make_weight("enc.emb", static_cast<std::size_t>(config_.vocab_size), d, 1.0, init);
  for (int l = 0; l < config_.enc_layers; ++l) {
    const std::string n = "enc.l" + std::to_string(l);
    blocks_.push_back(EncoderBlockParams{make_ln(n + ".ln1", d, init), make_attention(n + ".attn", d, init),
                                         make_ln(n + ".ln2", d, init),
                                         make_ff(n + ".ff", d, static_cast<std::size_t>(config_.d_ff), init)});
  }
  final_ln_ = make_ln("enc.ln_f", d, init);
  if (config_.dec_layers > 0) {
    Decoder::Shape shape{config_.dec_layers, config_.heads, config_.d_model,
                         config_.d_ff, config_.vocab_size, config_.max_len};
    decoder_.emplace(shape, "dec", init);
  }
  if (config_.mlm_head) {
    mlm_w_ = make_weight("mlm.w", d, static_cast<std::size_t>(config_.vocab_size),
                         1.0 / std::sqrt(static_cast<double>(d)), init);
    mlm_b_ = make_bias("mlm.b", static_cast<std::size_t>(config_.vocab_size));
  }
  positions_ = sinusoidal_positions(static_cast<std::size_t>(config_.max_len), d);
}

std::vector<Parameter*> TransformerModel::parameters() {
  std::vector<Parameter*> out{&embedding_};
  for (auto& b : blocks_) {
    push_ln(out, b.ln1);
    push_attention(out, b.attn);
    push_ln(out, b.ln2);
    push_ff(out, b.ff);
  }
  push_ln(out, final_ln_);
  if (decoder_) decoder_->collect(out);
  if (config_.mlm_head) {
    out.push_back(&mlm_w_);
    out.push_back(&mlm_b_);
  }
  return out;
}

std::vector<const Parameter*> TransformerModel::parameters() const {
  std::vector<const Parameter*> out{&embedding_};
  for (const auto& b : blocks_) {
    push_ln(out, b.ln1);
    push_attention(out, b.attn);
    push_ln(out, b.ln2);
    push_ff(out, b.ff);
  }
  push_ln(out, final_ln_);
  if (decoder_) decoder_->collect(out);
  if (config_.mlm_head) {
    out.push_back(&mlm_w_);
    out.push_back(&mlm_b_);
  }
  return out;
}

Parameter* TransformerModel::find_parameter(const std::string& name) {
  for (Parameter* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

void TransformerModel::check_tokens(std::span<const int> tokens) const {
  expect(!tokens.empty(), "encode: empty input");
  expect(tokens.size() <= static_cast<std::size_t>(config_.max_len),
         "encode: input length " + std::to_string(tokens.size()) + " exceeds max_len " +
             std::to_string(config_.max_len));
  for (std::size_t i = 0; i < tokens.size(); ++i)
    expect(tokens[i] >= 0 && tokens[i] < config_.vocab_size,
           "encode: token id " + std::to_string(tokens[i]) + " out of vocabulary at position " + std::to_string(i));
}

Var TransformerModel::embed(Tape& tape, std::span<const int> tokens, std::size_t first_position) const {
  check_tokens(tokens);
  expect(first_position + tokens.size() <= static_cast<std::size_t>(config_.max_len), "embed: positions exceed max_len");
  return ad::dropout(ad::add(ad::embedding(tape.parameter(embedding_), tokens),
                             tape.constant(positions_.slice_rows(first_position, first_position + tokens.size()))));
}

Var TransformerModel::encoder_block(Tape& tape, int layer, Var x, const BoolMatrix* mask) const {
  const auto& b = blocks_.at(static_cast<std::size_t>(layer));
  Var h = nn::layer_norm(tape, b.ln1, x);
  x = ad::add(x, ad::dropout(nn::attention(tape, b.attn, h, h, mask, config_.heads)));
  h = nn::layer_norm(tape, b.ln2, x);
  return ad::add(x, ad::dropout(nn::feed_forward(tape, b.ff, h)));
}

Var TransformerModel::encoder_output(Tape& tape, Var x) const { return nn::layer_norm(tape, final_ln_, x); }

EncodeResult TransformerModel::encode(std::span<const int> tokens, const LayerMask* mask) const {
  Tape tape(false);
  Var x = embed(tape, tokens);
  return encode_from_embeddings(x.value(), mask);
}

EncodeResult TransformerModel::encode_from_embeddings(const Matrix& layer0, const LayerMask* mask) const {
  expect(layer0.cols() == static_cast<std::size_t>(config_.d_model), "encode: layer-0 width mismatch");
  if (mask != nullptr) mask->validate(layer0.rows(), blocks_.size());
  Tape tape(false);
  EncodeResult result;
  result.states.reserve(blocks_.size() + 1);
  result.states.push_back(layer0);
  Var x = tape.constant(layer0);
  for (int l = 0; l < config_.enc_layers; ++l) {
    x = encoder_block(tape, l, x, mask != nullptr ? &mask->layers[static_cast<std::size_t>(l)] : nullptr);
    result.states.push_back(x.value());
  }
  result.output = encoder_output(tape, x).value();
  return result;
}

Var TransformerModel::encode_on_tape(Tape& tape, std::span<const int> tokens, const LayerMask* mask) const {
  if (mask != nullptr) mask->validate(tokens.size(), blocks_.size());
  Var x = embed(tape, tokens);
  for (int l = 0; l < config_.enc_layers; ++l)
    x = encoder_block(tape, l, x, mask != nullptr ? &mask->layers[static_cast<std::size_t>(l)] : nullptr);
  return encoder_output(tape, x);
}

const Decoder& TransformerModel::decoder() const {
  expect(decoder_.has_value(), "model has no decoder");
  return *decoder_;
}

Var TransformerModel::seq2seq_example_loss(Tape& tape, std::span<const int> source,
                                           std::span<const int> target) const {
  expect(target.size() >= 2, "seq2seq loss: target must contain BOS and EOS sentinels");
  Var memory = encode_on_tape(tape, source);
  Var lg = decoder().logits(tape, memory, target.first(target.size() - 1));
  return ad::cross_entropy(lg, target.subspan(1));
}

double TransformerModel::seq2seq_loss(std::span<const std::vector<int>> sources,
                                      std::span<const std::vector<int>> targets) const {
  expect(!sources.empty(), "seq2seq_loss: empty batch");
  expect(sources.size() == targets.size(), "seq2seq_loss: sources/targets size mismatch");
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    Tape tape(false);
    total += seq2seq_example_loss(tape, sources[i], targets[i]).value()(0, 0);
    tokens += targets[i].size() - 1;
  }
  return total / static_cast<double>(tokens);
}

std::vector<int> TransformerModel::greedy_decode(std::span<const int> source, int bos, int eos,
                                                 int max_steps) const {
  Tape tape(false);
  const Matrix memory = encode_on_tape(tape, source).value();
  return decoder().greedy(memory, bos, eos, max_steps);
}

Var TransformerModel::mlm_logits(Tape& tape, Var encoder_out) const {
  expect(config_.mlm_head, "model has no MLM head");
  return ad::add_row(ad::matmul(encoder_out, tape.parameter(mlm_w_)), tape.parameter(mlm_b_));
}

}  // namespace treeproj
