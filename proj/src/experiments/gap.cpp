#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "batch.hpp"
#include "treeproj/error.hpp"
#include "treeproj/experiments.hpp"
#include "treeproj/parallel.hpp"
#include "treeproj/spanrep.hpp"

namespace treeproj {

std::vector<double> cosine_centroid(std::span<const std::vector<double>> vectors) {
  expect(!vectors.empty(), "cosine_centroid: no vectors");
  std::vector<double> out(vectors.front().size(), 0.0);
  for (const auto& v : vectors) {
    expect(v.size() == out.size(), "cosine_centroid: vector lengths differ");
    const double norm = std::sqrt(dot(v, v));
    expect(norm > 0.0, "cosine_centroid: zero vector");
    for (std::size_t k = 0; k < v.size(); ++k) out[k] += v[k] / norm;
  }
  for (double& x : out) x /= static_cast<double>(vectors.size());
  return out;
}

namespace {

struct Occurrence {
  std::size_t sentence;
  int start;
};

std::string span_key(std::span<const int> tokens, int start, int end) {
  std::string key;
  for (int p = start; p <= end; ++p) {
    if (p > start) key += ' ';
    key += std::to_string(tokens[static_cast<std::size_t>(p)]);
  }
  return key + "@" + std::to_string(start);
}

int key_length(const std::string& key) {
  const auto at = static_cast<std::ptrdiff_t>(key.find('@'));
  return static_cast<int>(std::count(key.begin(), key.begin() + at, ' ')) + 1;
}

}  // namespace

GapReport assumption_gap(const TransformerModel& model, std::span<const std::vector<int>> sentences,
                         const GapOptions& options) {
  expect(options.min_length >= 1 && options.max_length >= options.min_length,
         "assumption_gap: need 1 <= min_length <= max_length");
  expect(options.base_masks.empty() || options.base_masks.size() == sentences.size(),
         "assumption_gap: one base mask per sentence required");
  auto mask_of = [&](std::size_t s) -> const LayerMask* {
    return options.base_masks.empty() ? nullptr : &options.base_masks[s];
  };

  std::vector<EncodeResult> encoded(sentences.size());
  const auto ns = static_cast<std::int64_t>(sentences.size());
  parallel_for(ns, true, [&](std::int64_t s) {
    encoded[static_cast<std::size_t>(s)] = model.encode(sentences[static_cast<std::size_t>(s)], mask_of(static_cast<std::size_t>(s)));
  });

  std::map<std::string, std::vector<Occurrence>> groups;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const int n = static_cast<int>(sentences[s].size());
    for (int len = options.min_length; len <= std::min(n, options.max_length); ++len)
      for (int i = 0; i + len <= n; ++i) groups[span_key(sentences[s], i, i + len - 1)].push_back({s, i});
  }

  GapReport report;
  std::vector<std::map<std::string, std::vector<Occurrence>>::const_iterator> repeated;
  for (auto it = groups.cbegin(); it != groups.cend(); ++it) {
    if (it->second.size() >= 2)
      repeated.push_back(it);
    else
      ++report.single_occurrence_skipped;
  }

  Rng rng = make_rng(options.seed, "gap");
  // partial Fisher-Yates, then restore key order
  const std::size_t take = std::min(options.span_samples, repeated.size());
  std::vector<std::size_t> order(repeated.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < take; ++i)
    std::swap(order[i], order[static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                                   static_cast<std::int64_t>(order.size()) - 1))]);
  order.resize(take);
  std::sort(order.begin(), order.end());

  // control spans: an occurrence of a different span of the same length
  std::vector<std::pair<std::string, Occurrence>> controls;
  for (std::size_t idx : order) {
    const auto& [key, occ] = *repeated[idx];
    const int len = key_length(key);
    std::pair<std::string, Occurrence> pick{"", {0, -1}};
    for (int attempt = 0; attempt < 64; ++attempt) {
      const auto s = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(sentences.size()) - 1));
      const int n = static_cast<int>(sentences[s].size());
      if (n < len) continue;
      const int i = static_cast<int>(uniform_int(rng, 0, n - len));
      std::string other = span_key(sentences[s], i, i + len - 1);
      if (other == key) continue;
      pick = {std::move(other), {s, i}};
      break;
    }
    controls.push_back(std::move(pick));
  }

  report.entries.resize(order.size());
  const auto ne = static_cast<std::int64_t>(order.size());
  parallel_for(ne, true, [&](std::int64_t e) {
    const auto ue = static_cast<std::size_t>(e);
    const auto& [key, occ] = *repeated[order[ue]];
    const int len = key_length(key);
    GapEntry& entry = report.entries[ue];
    entry.span = key;
    entry.occurrences = occ.size();
    std::vector<std::vector<double>> contextual;
    for (const auto& o : occ)
      contextual.push_back(contextual_span_vector(encoded[o.sentence], Span{o.start, o.start + len - 1}));
    ChartOptions opts;
    opts.base_mask = mask_of(occ.front().sentence);
    opts.parallel = false;
    const auto v_tilde = context_free_vector(model, sentences[occ.front().sentence],
                                             Span{occ.front().start, occ.front().start + len - 1}, options.threshold, opts);
    entry.v_star = cosine_centroid(contextual);
    entry.gap = cosine_distance(entry.v_star, v_tilde);
    for (const auto& v : contextual) {
      entry.cost_optimal += cosine_distance(v, entry.v_star);
      entry.cost_context_free += cosine_distance(v, v_tilde);
    }
    const auto& [ckey, cocc] = controls[ue];
    if (cocc.start < 0) {
      entry.control_gap = std::numeric_limits<double>::quiet_NaN();
    } else {
      const auto cv = contextual_span_vector(encoded[cocc.sentence], Span{cocc.start, cocc.start + len - 1});
      entry.control_gap = cosine_distance(cv, v_tilde);
    }
  });
  return report;
}

void write_gap_csv(const std::filesystem::path& path, const GapReport& report) {
  std::FILE* f = detail::open_for_write(path);
  std::fprintf(f, "span,occurrences,gap,control_gap,cost_optimal,cost_context_free\n");
  for (const auto& e : report.entries)
    std::fprintf(f, "%s,%zu,%s,%s,%s,%s\n", e.span.c_str(), e.occurrences, format_double(e.gap).c_str(),
                 format_double(e.control_gap).c_str(), format_double(e.cost_optimal).c_str(),
                 format_double(e.cost_context_free).c_str());
  std::fclose(f);
}

}  // namespace treeproj
