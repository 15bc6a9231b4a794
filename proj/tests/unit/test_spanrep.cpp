#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "treeproj/error.hpp"
#include "treeproj/spanrep.hpp"

using namespace treeproj;

namespace {

std::vector<int> random_tokens(int n, int vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> out;
  for (int i = 0; i < n; ++i) out.push_back(static_cast<int>(uniform_int(rng, 5, vocab - 1)));
  return out;
}

}  // namespace

TEST_CASE("T-mask layout") {
  const LayerMask m = build_t_mask(Span{1, 2}, 1, 4, 2);
  REQUIRE(m.layers.size() == 2);
  for (std::size_t q = 0; q < 4; ++q)
    for (std::size_t k = 0; k < 4; ++k) CHECK(m.layers[0](q, k));
  for (std::size_t q = 0; q < 4; ++q)
    for (std::size_t k = 0; k < 4; ++k) {
      const bool inside_q = q == 1 || q == 2;
      const bool inside_k = k == 1 || k == 2;
      CHECK(m.layers[1](q, k) == (!inside_q || inside_k));
    }
  CHECK_THROWS_AS(build_t_mask(Span{2, 4}, 0, 4, 2), ContractViolation);
  CHECK_THROWS_AS(build_t_mask(Span{0, 1}, 3, 4, 2), ContractViolation);
}

TEST_CASE("prefix-cached charts equal naive recomputation bit-exact") {
  const TransformerModel model = oracle::tiny_model(3, 16, 2, 20, 11);
  for (int s = 0; s < 6; ++s) {
    const auto tokens = random_tokens(2 + s, 20, 100 + static_cast<std::uint64_t>(s));
    for (int t = 0; t <= 3; ++t) {
      const SciChart fast = build_sci_chart(model, tokens, t);
      const SciChart slow = oracle::naive_chart(model, tokens, t);
      CHECK(fast.values == slow.values);
    }
  }
}

TEST_CASE("serial and parallel chart construction agree") {
  const TransformerModel model = oracle::tiny_model(2, 16, 2, 20, 12);
  const auto tokens = random_tokens(7, 20, 5);
  ChartOptions serial;
  serial.parallel = false;
  CHECK(build_sci_chart(model, tokens, 1, serial).values == build_sci_chart(model, tokens, 1).values);
}

TEST_CASE("threshold L gives an all-zero chart") {
  const TransformerModel model = oracle::tiny_model(2, 16, 2, 20, 13);
  const auto tokens = random_tokens(6, 20, 6);
  const SciChart chart = build_sci_chart(model, tokens, 2);
  for (int i = 0; i < 6; ++i)
    for (int j = i; j < 6; ++j) CHECK(chart.at(i, j) == 0.0);
}

TEST_CASE("threshold 0 context-free vectors ignore outside tokens") {
  const TransformerModel model = oracle::tiny_model(2, 16, 2, 20, 14);
  const auto a = random_tokens(7, 20, 7);
  for (int i = 0; i < 7; ++i)
    for (int j = i; j < 7; ++j) {
      auto b = random_tokens(7, 20, 1000 + static_cast<std::uint64_t>(i * 7 + j));
      for (int p = i; p <= j; ++p) b[static_cast<std::size_t>(p)] = a[static_cast<std::size_t>(p)];
      CHECK(context_free_vector(model, a, Span{i, j}, 0) == context_free_vector(model, b, Span{i, j}, 0));
    }
}

TEST_CASE("full-sentence span has zero SCI at every threshold") {
  const TransformerModel model = oracle::tiny_model(2, 16, 2, 20, 15);
  const auto tokens = random_tokens(5, 20, 8);
  for (int t = 0; t <= 2; ++t) CHECK(build_sci_chart(model, tokens, t).at(0, 4) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("sum and mean pooling give the same chart") {
  const TransformerModel model = oracle::tiny_model(2, 16, 2, 20, 16);
  const auto tokens = random_tokens(8, 20, 9);
  const SpanVectors v = compute_span_vectors(model, tokens, 1);
  const SciChart mean = chart_from_span_vectors(v, Pooling::Mean);
  const SciChart sum = chart_from_span_vectors(v, Pooling::Sum);
  for (std::size_t k = 0; k < mean.values.size(); ++k) CHECK(std::abs(mean.values[k] - sum.values[k]) < 1e-12);
}

TEST_CASE("charts ignore positive rescaling of final-layer states") {
  const TransformerModel model = oracle::tiny_model(2, 16, 2, 20, 17);
  const auto tokens = random_tokens(8, 20, 10);
  const SpanVectors v = compute_span_vectors(model, tokens, 1);
  const SciChart base = chart_from_span_vectors(v, Pooling::Mean);
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    SpanVectors scaled = v;
    for (double& x : scaled.contextual.values()) x *= c;
    for (auto& m : scaled.context_free)
      for (double& x : m.values()) x *= c;
    const SciChart s = chart_from_span_vectors(scaled, Pooling::Mean);
    for (std::size_t k = 0; k < base.values.size(); ++k) CHECK(std::abs(base.values[k] - s.values[k]) < 1e-12);
  }
}

TEST_CASE("chart entries are cosine distances in [0, 2]") {
  const TransformerModel model = oracle::tiny_model(2, 16, 2, 20, 18);
  const auto tokens = random_tokens(9, 20, 11);
  const SciChart chart = build_sci_chart(model, tokens, 0);
  for (int i = 0; i < 9; ++i)
    for (int j = i; j < 9; ++j) {
      CHECK(chart.at(i, j) >= 0.0);
      CHECK(chart.at(i, j) <= 2.0);
    }
}

TEST_CASE("chart JSON round trip") {
  SciChart chart = oracle::random_chart(5, 3);
  chart.threshold = 1;
  chart.checkpoint = "step_000200";
  chart.sentence = "copy A B";
  const SciChart back = chart_from_json(chart_to_json(chart));
  CHECK(back.n == 5);
  CHECK(back.threshold == 1);
  CHECK(back.checkpoint == chart.checkpoint);
  CHECK(back.sentence == chart.sentence);
  for (int i = 0; i < 5; ++i)
    for (int j = i; j < 5; ++j) CHECK(back.at(i, j) == chart.at(i, j));
  CHECK_THROWS(chart_from_json("{\"n\": 2}"));
}
