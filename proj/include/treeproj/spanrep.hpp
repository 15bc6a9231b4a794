#pragma once

#include <span>
#include <string>
#include <vector>

#include "treeproj/matrix.hpp"
#include "treeproj/model.hpp"

namespace treeproj {

// Inclusive token span [start, end].
struct Span {
  int start = 0;
  int end = 0;

  int length() const { return end - start + 1; }
  bool contains(int i) const { return start <= i && i <= end; }
  auto operator<=>(const Span&) const = default;
};

void check_span(Span span, int n);

// SCI scores for every span of one sentence. Only entries with i <= j are
// meaningful.
struct SciChart {
  int n = 0;
  int threshold = 0;
  std::string checkpoint;
  std::string sentence;
  std::vector<double> values;  // n * n, row-major, upper triangle used

  SciChart() = default;
  SciChart(int length, double fill = 0.0);

  double at(int i, int j) const { return values[static_cast<std::size_t>(i * n + j)]; }
  void set(int i, int j, double v) { values[static_cast<std::size_t>(i * n + j)] = v; }
  double at(Span s) const { return at(s.start, s.end); }
};

enum class Pooling { Mean, Sum };

// T-shaped mask: layers below `threshold` unrestricted; from `threshold` on,
// positions inside `span` attend only inside it. Rows of outside positions
// stay unrestricted (they are never evaluated above the cut).
LayerMask build_t_mask(Span span, int threshold, int n, int num_layers);

std::vector<double> pool_rows(const Matrix& rows, std::size_t begin, std::size_t end, Pooling pooling);

// Pooled final-layer contextual vectors over the span.
std::vector<double> contextual_span_vector(const EncodeResult& states, Span span, Pooling pooling = Pooling::Mean);

struct ChartOptions {
  // Permissions of the analysed function itself (e.g. a block-diagonal
  // oracle encoder); intersected with the T-mask. nullptr = unrestricted.
  const LayerMask* base_mask = nullptr;
  Pooling pooling = Pooling::Mean;
  // Evaluate spans across OpenMP threads; results are identical either way.
  bool parallel = true;
};

// Final-layer rows of the span positions when only blocks >= threshold are
// masked. `state_at_threshold` is the unmasked residual stream entering
// block `threshold` for the whole sentence (the shared prefix).
Matrix masked_span_rows(const TransformerModel& model, const Matrix& state_at_threshold, Span span, int threshold,
                        const LayerMask* base_mask);

std::vector<double> context_free_vector(const TransformerModel& model, std::span<const int> tokens, Span span,
                                        int threshold, const ChartOptions& options = {});

// Raw material of a chart: contextual final-layer rows of the sentence and
// the masked final-layer rows for every span.
struct SpanVectors {
  int n = 0;
  int threshold = 0;
  Matrix contextual;               // n x d
  std::vector<Matrix> context_free;  // index i * n + j, |span| x d, i <= j

  const Matrix& rows(int i, int j) const { return context_free[static_cast<std::size_t>(i * n + j)]; }
};

SpanVectors compute_span_vectors(const TransformerModel& model, std::span<const int> tokens, int threshold,
                                 const ChartOptions& options = {});
SciChart chart_from_span_vectors(const SpanVectors& vectors, Pooling pooling);

// The layers below the threshold are evaluated once per sentence and shared
// by all spans.
SciChart build_sci_chart(const TransformerModel& model, std::span<const int> tokens, int threshold,
                         const ChartOptions& options = {});

// Chart dump: {"n", "t", "checkpoint", "sentence", "entries": [[i, j, sci], ...]}.
std::string chart_to_json(const SciChart& chart);
SciChart chart_from_json(const std::string& text);

}  // namespace treeproj
