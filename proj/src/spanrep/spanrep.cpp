#include "treeproj/spanrep.hpp"

#include <cstdint>

#include <json.hpp>

#include "treeproj/error.hpp"
#include "treeproj/parallel.hpp"

namespace treeproj {

void check_span(Span span, int n) {
  expect(0 <= span.start && span.start <= span.end && span.end < n,
         "span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
             "] out of range for length " + std::to_string(n));
}

SciChart::SciChart(int length, double fill)
    : n(length), values(static_cast<std::size_t>(length) * static_cast<std::size_t>(length), fill) {}

LayerMask build_t_mask(Span span, int threshold, int n, int num_layers) {
  expect(threshold >= 0 && threshold <= num_layers, "build_t_mask: threshold must lie in [0, layers]");
  check_span(span, n);
  LayerMask mask = LayerMask::all_true(static_cast<std::size_t>(n), static_cast<std::size_t>(num_layers));
  for (int l = threshold; l < num_layers; ++l) {
    BoolMatrix& m = mask.layers[static_cast<std::size_t>(l)];
    for (int q = span.start; q <= span.end; ++q)
      for (int k = 0; k < n; ++k)
        if (!span.contains(k)) m.set(static_cast<std::size_t>(q), static_cast<std::size_t>(k), false);
  }
  return mask;
}

std::vector<double> pool_rows(const Matrix& rows, std::size_t begin, std::size_t end, Pooling pooling) {
  expect(begin < end && end <= rows.rows(), "pool_rows: empty or out-of-range row range");
  std::vector<double> out(rows.cols(), 0.0);
  for (std::size_t r = begin; r < end; ++r) {
    auto row = rows.row(r);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
  }
  if (pooling == Pooling::Mean) {
    const double count = static_cast<double>(end - begin);
    for (double& v : out) v /= count;
  }
  return out;
}

std::vector<double> contextual_span_vector(const EncodeResult& states, Span span, Pooling pooling) {
  check_span(span, static_cast<int>(states.output.rows()));
  return pool_rows(states.output, static_cast<std::size_t>(span.start), static_cast<std::size_t>(span.end) + 1,
                   pooling);
}

Matrix masked_span_rows(const TransformerModel& model, const Matrix& state_at_threshold, Span span, int threshold,
                        const LayerMask* base_mask) {
  const int layers = model.num_layers();
  expect(threshold >= 0 && threshold <= layers, "threshold must lie in [0, layers]");
  check_span(span, static_cast<int>(state_at_threshold.rows()));
  const auto b = static_cast<std::size_t>(span.start);
  const auto e = static_cast<std::size_t>(span.end) + 1;
  Tape tape(false);
  Var x = tape.constant(state_at_threshold.slice_rows(b, e));
  for (int l = threshold; l < layers; ++l) {
    if (base_mask != nullptr) {
      const BoolMatrix local = base_mask->layers[static_cast<std::size_t>(l)].square_slice(b, e);
      expect(local.every_row_nonempty(), "base mask leaves a span position with nothing to attend to");
      x = model.encoder_block(tape, l, x, &local);
    } else {
      x = model.encoder_block(tape, l, x, nullptr);
    }
  }
  return model.encoder_output(tape, x).value();
}

namespace {

// Residual stream entering block `threshold` for the full sentence.
Matrix shared_prefix(const TransformerModel& model, std::span<const int> tokens, int threshold,
                     const LayerMask* base_mask, EncodeResult* contextual) {
  EncodeResult full = model.encode(tokens, base_mask);
  Matrix prefix = full.states[static_cast<std::size_t>(threshold)];
  if (contextual != nullptr) *contextual = std::move(full);
  return prefix;
}

}  // namespace

std::vector<double> context_free_vector(const TransformerModel& model, std::span<const int> tokens, Span span,
                                        int threshold, const ChartOptions& options) {
  expect(threshold >= 0 && threshold <= model.num_layers(), "threshold must lie in [0, layers]");
  const Matrix prefix = shared_prefix(model, tokens, threshold, options.base_mask, nullptr);
  const Matrix rows = masked_span_rows(model, prefix, span, threshold, options.base_mask);
  return pool_rows(rows, 0, rows.rows(), options.pooling);
}

SpanVectors compute_span_vectors(const TransformerModel& model, std::span<const int> tokens, int threshold,
                                 const ChartOptions& options) {
  expect(!tokens.empty(), "chart: sentence must have at least one token");
  expect(threshold >= 0 && threshold <= model.num_layers(), "threshold must lie in [0, layers]");
  const int n = static_cast<int>(tokens.size());
  EncodeResult full;
  const Matrix prefix = shared_prefix(model, tokens, threshold, options.base_mask, &full);

  SpanVectors out;
  out.n = n;
  out.threshold = threshold;
  out.contextual = std::move(full.output);
  out.context_free.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));

  std::vector<Span> spans;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) spans.push_back({i, j});
  const auto count = static_cast<std::int64_t>(spans.size());
  parallel_for(count, options.parallel, [&](std::int64_t s) {
    const Span sp = spans[static_cast<std::size_t>(s)];
    out.context_free[static_cast<std::size_t>(sp.start * n + sp.end)] =
        masked_span_rows(model, prefix, sp, threshold, options.base_mask);
  });
  return out;
}

SciChart chart_from_span_vectors(const SpanVectors& vectors, Pooling pooling) {
  SciChart chart(vectors.n);
  chart.threshold = vectors.threshold;
  for (int i = 0; i < vectors.n; ++i) {
    for (int j = i; j < vectors.n; ++j) {
      const auto ctx = pool_rows(vectors.contextual, static_cast<std::size_t>(i), static_cast<std::size_t>(j) + 1,
                                 pooling);
      const Matrix& rows = vectors.rows(i, j);
      const auto free = pool_rows(rows, 0, rows.rows(), pooling);
      chart.set(i, j, cosine_distance(ctx, free));
    }
  }
  return chart;
}

SciChart build_sci_chart(const TransformerModel& model, std::span<const int> tokens, int threshold,
                         const ChartOptions& options) {
  return chart_from_span_vectors(compute_span_vectors(model, tokens, threshold, options), options.pooling);
}

std::string chart_to_json(const SciChart& chart) {
  nlohmann::json j;
  j["n"] = chart.n;
  j["t"] = chart.threshold;
  j["checkpoint"] = chart.checkpoint;
  j["sentence"] = chart.sentence;
  nlohmann::json entries = nlohmann::json::array();
  for (int i = 0; i < chart.n; ++i)
    for (int k = i; k < chart.n; ++k) entries.push_back(nlohmann::json::array({i, k, chart.at(i, k)}));
  j["entries"] = entries;
  return j.dump();
}

SciChart chart_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SciChart chart(j.at("n").get<int>());
    chart.threshold = j.at("t").get<int>();
    chart.checkpoint = j.value("checkpoint", "");
    chart.sentence = j.value("sentence", "");
    for (const auto& e : j.at("entries")) {
      const int i = e.at(0).get<int>(), k = e.at(1).get<int>();
      check_span({i, k}, chart.n);
      chart.set(i, k, e.at(2).get<double>());
    }
    return chart;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed chart JSON: ") + e.what());
  }
}

}  // namespace treeproj
