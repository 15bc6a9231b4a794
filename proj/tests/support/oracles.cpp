#include "oracles.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "treeproj/matrix.hpp"

namespace oracle {

using namespace treeproj;

SciChart naive_chart(const TransformerModel& model, std::span<const int> tokens, int threshold, const LayerMask* base) {
  const int n = static_cast<int>(tokens.size());
  const int L = model.num_layers();
  const EncodeResult full = model.encode(tokens, base);
  SciChart chart(n);
  chart.threshold = threshold;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      LayerMask mask;
      for (int l = 0; l < L; ++l) {
        BoolMatrix m(static_cast<std::size_t>(n), static_cast<std::size_t>(n), true);
        for (int q = 0; q < n; ++q)
          for (int k = 0; k < n; ++k) {
            bool allow = true;
            if (l >= threshold && q >= i && q <= j) allow = k >= i && k <= j;
            if (base) allow = allow && base->layers[static_cast<std::size_t>(l)](static_cast<std::size_t>(q), static_cast<std::size_t>(k));
            m.set(static_cast<std::size_t>(q), static_cast<std::size_t>(k), allow);
          }
        mask.layers.push_back(m);
      }
      const EncodeResult masked = model.encode(tokens, &mask);
      const std::size_t d = masked.output.cols();
      std::vector<double> ctx(d, 0.0), cf(d, 0.0);
      for (int p = i; p <= j; ++p)
        for (std::size_t c = 0; c < d; ++c) {
          ctx[c] += full.output(static_cast<std::size_t>(p), c);
          cf[c] += masked.output(static_cast<std::size_t>(p), c);
        }
      const double len = j - i + 1;
      for (std::size_t c = 0; c < d; ++c) {
        ctx[c] /= len;
        cf[c] /= len;
      }
      chart.set(i, j, cosine_distance(ctx, cf));
    }
  }
  return chart;
}

namespace {

std::vector<BinaryTree> trees_of(int n) {
  if (n == 1) return {BinaryTree::leaf()};
  std::vector<BinaryTree> out;
  for (int left = 1; left < n; ++left)
    for (const auto& a : trees_of(left))
      for (const auto& b : trees_of(n - left)) out.push_back(BinaryTree::join(a, b));
  return out;
}

}  // namespace

std::vector<BinaryTree> all_trees(int n) { return trees_of(n); }

long long catalan(int k) {
  long long c = 1;
  for (int i = 0; i < k; ++i) c = c * 2 * (2 * i + 1) / (i + 2);
  return c;
}

double tree_cost(const SciChart& chart, const BinaryTree& tree) {
  double s = 0.0;
  for (const auto& node : tree.nodes())
    if (!node.is_leaf()) s += chart.at(node.span);
  return s;
}

Matrix finite_difference(const std::function<double(const Matrix&)>& f, const Matrix& x, double h) {
  // Ridders' extrapolation of central differences over steps h, h / 1.4, ...
  constexpr int kTable = 10;
  constexpr double kShrink = 1.4, kShrink2 = kShrink * kShrink;
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  auto central = [&](std::size_t r, std::size_t c, double step) {
    const double keep = probe(r, c);
    probe(r, c) = keep + step;
    const double up = f(probe);
    probe(r, c) = keep - step;
    const double down = f(probe);
    probe(r, c) = keep;
    return (up - down) / (2.0 * step);
  };
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      double a[kTable][kTable];
      double step = h, best_err = INFINITY, best = 0.0;
      a[0][0] = central(r, c, step);
      best = a[0][0];
      for (int i = 1; i < kTable; ++i) {
        step /= kShrink;
        a[0][i] = central(r, c, step);
        double fac = kShrink2;
        for (int j = 1; j <= i; ++j) {
          a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
          fac *= kShrink2;
          const double err = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
          if (err <= best_err) {
            best_err = err;
            best = a[j][i];
          }
        }
        if (std::abs(a[i][i] - a[i - 1][i - 1]) >= 2.0 * best_err) break;
      }
      g(r, c) = best;
    }
  return g;
}

std::vector<std::string> stack_evaluate(std::span<const std::string> tokens) {
  auto is_op = [](const std::string& t) {
    return t == "copy" || t == "reverse" || t == "shift" || t == "repeat" || t == "append" ||
           t == "interleave_first" || t == "interleave_second";
  };
  using List = std::vector<std::string>;
  std::vector<List> stack;  // back = leftmost pending value
  std::vector<std::string> symbols;
  auto flush = [&] {
    if (symbols.size() % 2 != 0) throw std::runtime_error("odd symbol run");
    // symbols were collected right to left
    for (std::size_t k = 0; k < symbols.size(); k += 2) stack.push_back({symbols[k + 1], symbols[k]});
    symbols.clear();
  };
  for (std::size_t r = tokens.size(); r-- > 0;) {
    const std::string& t = tokens[r];
    if (!is_op(t)) {
      symbols.push_back(t);
      continue;
    }
    flush();
    List x = stack.back();
    stack.pop_back();
    if (t == "copy") {
      stack.push_back(x);
    } else if (t == "reverse") {
      stack.push_back(List(x.rbegin(), x.rend()));
    } else if (t == "shift") {
      List y(x.begin() + 1, x.end());
      y.push_back(x.front());
      stack.push_back(y);
    } else if (t == "repeat") {
      List y = x;
      y.insert(y.end(), x.begin(), x.end());
      stack.push_back(y);
    } else {
      List y = stack.back();
      stack.pop_back();
      List out;
      if (t == "append") {
        out = x;
        out.insert(out.end(), y.begin(), y.end());
      } else {
        const List& first = t == "interleave_first" ? x : y;
        const List& second = t == "interleave_first" ? y : x;
        for (std::size_t i = 0; i < std::max(first.size(), second.size()); ++i) {
          if (i < first.size()) out.push_back(first[i]);
          if (i < second.size()) out.push_back(second[i]);
        }
      }
      stack.push_back(out);
    }
  }
  flush();
  if (stack.size() != 1) throw std::runtime_error("malformed expression");
  return stack.back();
}

double spearman_no_ties(std::span<const double> xs, std::span<const double> ys) {
  const std::size_t n = xs.size();
  auto rank = [n](std::span<const double> v) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t below = 0;
      for (std::size_t j = 0; j < n; ++j) below += v[j] < v[i] ? 1 : 0;
      r[i] = static_cast<double>(below + 1);
    }
    return r;
  };
  const auto rx = rank(xs), ry = rank(ys);
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double nn = static_cast<double>(n);
  return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    syy += ys[i] * ys[i];
    sxy += xs[i] * ys[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

double welch_t(std::span<const double> a, std::span<const double> b, double* dof) {
  auto moments = [](std::span<const double> v, double& mean, double& var) {
    double s = 0, ss = 0;
    for (double x : v) {
      s += x;
      ss += x * x;
    }
    const double n = static_cast<double>(v.size());
    mean = s / n;
    var = (ss - n * mean * mean) / (n - 1.0);
  };
  double ma, va, mb, vb;
  moments(a, ma, va);
  moments(b, mb, vb);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double qa = va / na, qb = vb / nb;
  if (dof) *dof = (qa + qb) * (qa + qb) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  return (ma - mb) / std::sqrt(qa + qb);
}

double t_two_sided_quadrature(double t, double dof) {
  const double c = std::exp(std::lgamma((dof + 1.0) / 2.0) - std::lgamma(dof / 2.0)) / std::sqrt(dof * M_PI);
  auto density = [&](double x) { return c * std::pow(1.0 + x * x / dof, -(dof + 1.0) / 2.0); };
  const double upper = std::fabs(t);
  const int steps = 200000;
  const double h = upper / steps;
  double s = density(0.0) + density(upper);
  for (int i = 1; i < steps; ++i) s += density(i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  const double central = s * h / 3.0;  // integral over [0, |t|]
  return std::max(0.0, 1.0 - 2.0 * central);
}

double expected_normalized_score(const SciChart& chart, const BinaryTree& tree) {
  double total = 0.0;
  for (const auto& node : tree.nodes()) {
    if (node.is_leaf()) continue;
    const int i = node.span.start, j = node.span.end;
    double mean = 0.0;
    for (int k = i; k < j; ++k) mean += chart.at(i, k) + chart.at(k + 1, j);
    mean /= (j - i);
    const int k = tree.node(node.left).span.end;
    total += mean - (chart.at(i, k) + chart.at(k + 1, j));
  }
  return total;
}

SciChart planted_chart(const BinaryTree& gold, double low, double high) {
  const int n = gold.leaves();
  SciChart chart(n, high);
  for (const auto& node : gold.nodes()) chart.set(node.span.start, node.span.end, low);
  return chart;
}

SciChart random_chart(int n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  SciChart chart(n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) chart.set(i, j, u(gen));
  return chart;
}

BinaryTree random_tree(int n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  return BinaryTree::from_splits(n, [&](int i, int j) {
    std::uniform_int_distribution<int> d(i, j - 1);
    return d(gen);
  });
}

TransformerModel tiny_model(int layers, int d_model, int heads, int vocab, std::uint64_t seed) {
  EncoderConfig cfg;
  cfg.enc_layers = layers;
  cfg.dec_layers = 0;
  cfg.heads = heads;
  cfg.d_model = d_model;
  cfg.d_ff = 2 * d_model;
  cfg.vocab_size = vocab;
  cfg.max_len = 32;
  Rng rng(seed);
  return TransformerModel(cfg, &rng);
}

}  // namespace oracle

namespace oracle {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = nd(gen);
  return m;
}

double gradient_error(const std::function<Var(Tape&, const std::vector<Var>&)>& f, const std::vector<Matrix>& inputs,
                      std::uint64_t seed) {
  std::vector<Parameter> params;
  for (std::size_t i = 0; i < inputs.size(); ++i) params.push_back(Parameter{"x" + std::to_string(i), inputs[i]});
  Matrix wrows, wcols;
  // scalar loss = w_r^T f(x) w_c with random weights, so every output entry matters
  auto loss_of = [&](Tape& tape) {
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    Var y = f(tape, vars);
    if (wrows.empty()) {
      wrows = random_matrix(1, y.rows(), seed ^ 0x51u);
      wcols = random_matrix(y.cols(), 1, seed ^ 0x77u);
    }
    return ad::matmul(tape.constant(wrows), ad::matmul(y, tape.constant(wcols)));
  };
  Tape tape;
  Var loss = loss_of(tape);
  tape.backward(loss);
  double worst = 0.0;
  for (auto& p : params) {
    Matrix g(p.value.rows(), p.value.cols(), 0.0);
    tape.accumulate_parameter_gradient(p, g);
    Matrix original = p.value;
    const Matrix fd = finite_difference(
        [&](const Matrix& x) {
          p.value = x;
          Tape t(false);
          const double v = loss_of(t).value()(0, 0);
          return v;
        },
        original);
    p.value = original;
    double diff = 0.0, ng = 0.0, nf = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      diff += (g.data()[k] - fd.data()[k]) * (g.data()[k] - fd.data()[k]);
      ng += g.data()[k] * g.data()[k];
      nf += fd.data()[k] * fd.data()[k];
    }
    const double denom = std::max(std::sqrt(std::max(ng, nf)), 1e-12);
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

std::vector<GradientCase> gradient_suite(int shapes, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  auto dim = [&](int lo, int hi) { return static_cast<std::size_t>(std::uniform_int_distribution<int>(lo, hi)(gen)); };
  std::vector<GradientCase> out;
  for (int s = 0; s < shapes; ++s) {
    const std::size_t r = dim(1, 5), k = dim(1, 5), c = dim(2, 6);
    const std::uint64_t base = gen();
    const std::string shape = std::to_string(r) + "x" + std::to_string(k) + "x" + std::to_string(c);
    auto M = [&](std::size_t rows, std::size_t cols, int salt) { return random_matrix(rows, cols, base + static_cast<std::uint64_t>(salt)); };
    auto record = [&](const std::string& name, double err) { out.push_back({name, shape, err}); };

    record("matmul", gradient_error([](Tape&, const std::vector<Var>& v) { return ad::matmul(v[0], v[1]); },
                                    {M(r, k, 1), M(k, c, 2)}, base));
    record("matmul_nt", gradient_error([](Tape&, const std::vector<Var>& v) { return ad::matmul_nt(v[0], v[1]); },
                                       {M(r, k, 3), M(c, k, 4)}, base));
    record("add", gradient_error([](Tape&, const std::vector<Var>& v) { return ad::add(v[0], v[1]); },
                                 {M(r, c, 5), M(r, c, 6)}, base));
    record("add_row", gradient_error([](Tape&, const std::vector<Var>& v) { return ad::add_row(v[0], v[1]); },
                                     {M(r, c, 7), M(1, c, 8)}, base));
    record("scale", gradient_error([](Tape&, const std::vector<Var>& v) { return ad::scale(v[0], -1.7); },
                                   {M(r, c, 9)}, base));
    record("gelu", gradient_error([](Tape&, const std::vector<Var>& v) { return ad::gelu(v[0]); }, {M(r, c, 10)}, base));

    BoolMatrix mask(r, c, false);
    for (std::size_t q = 0; q < r; ++q) {
      mask.set(q, static_cast<std::size_t>(gen() % c), true);
      for (std::size_t j = 0; j < c; ++j)
        if (gen() % 2) mask.set(q, j, true);
    }
    record("masked_softmax",
           gradient_error([&mask](Tape&, const std::vector<Var>& v) { return ad::masked_softmax(v[0], &mask); },
                          {M(r, c, 11)}, base));
    record("layer_norm",
           gradient_error([](Tape&, const std::vector<Var>& v) { return ad::layer_norm(v[0], v[1], v[2]); },
                          {M(r, c, 12), M(1, c, 13), M(1, c, 14)}, base));
    std::vector<int> ids;
    for (std::size_t q = 0; q < r + 2; ++q) ids.push_back(static_cast<int>(gen() % k));
    record("embedding", gradient_error([&ids](Tape&, const std::vector<Var>& v) { return ad::embedding(v[0], ids); },
                                       {M(k, c, 15)}, base));
    std::vector<int> targets;
    for (std::size_t q = 0; q < r; ++q) targets.push_back(static_cast<int>(gen() % c));
    if (r > 1) targets[0] = -1;  // ignored row
    record("cross_entropy",
           gradient_error([&targets](Tape&, const std::vector<Var>& v) { return ad::cross_entropy(v[0], targets); },
                          {M(r, c, 16)}, base));
    record("slice_cols", gradient_error([c](Tape&, const std::vector<Var>& v) { return ad::slice_cols(v[0], 1, c); },
                                        {M(r, c, 17)}, base));
    record("concat_cols", gradient_error(
                              [](Tape&, const std::vector<Var>& v) {
                                const std::vector<Var> parts{v[0], v[1]};
                                return ad::concat_cols(parts);
                              },
                              {M(r, k, 18), M(r, c, 19)}, base));
    record("select_rows", gradient_error([r](Tape&, const std::vector<Var>& v) { return ad::select_rows(v[0], r / 2, r); },
                                         {M(r + 1, c, 20)}, base));
    record("sum", gradient_error([](Tape&, const std::vector<Var>& v) { return ad::sum(v[0]); }, {M(r, c, 21)}, base));
    // Every tape is re-seeded identically, so the mask is fixed across the
    // finite-difference evaluations.
    record("dropout", gradient_error(
                          [](Tape& tape, const std::vector<Var>& v) {
                            tape.enable_dropout(0.3, 99);
                            return ad::dropout(v[0]);
                          },
                          {M(r, c, 26)}, base));
    record("composite", gradient_error(
                            [](Tape&, const std::vector<Var>& v) {
                              Var h = ad::layer_norm(ad::gelu(ad::matmul(v[0], v[1])), v[2], v[3]);
                              return ad::matmul(ad::masked_softmax(ad::matmul_nt(h, h), nullptr), h);
                            },
                            {M(r, k, 22), M(k, c, 23), M(1, c, 24), M(1, c, 25)}, base));
  }
  return out;
}

}  // namespace oracle
