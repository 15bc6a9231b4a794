#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "treeproj/autodiff.hpp"
#include "treeproj/error.hpp"
#include "treeproj/kernels.hpp"
#include "treeproj/matrix.hpp"
#include "treeproj/optimizer.hpp"

using namespace treeproj;

TEST_CASE("cosine distance fixed points") {
  const std::vector<double> x{0.3, -1.2, 4.0};
  CHECK(cosine_distance(x, x) == 0.0);
  CHECK(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 1.0);
  CHECK(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{-1, 0}) == 2.0);
  CHECK(cosine_distance(std::vector<double>{0, 0}, std::vector<double>{1, 2}) == 1.0);
  CHECK_THROWS_AS(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{1, 0, 0}), ContractViolation);
}

TEST_CASE("cosine distance is invariant to positive rescaling") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Matrix a = oracle::random_matrix(1, 7, s), b = oracle::random_matrix(1, 7, s + 100);
    std::vector<double> x(a.values().begin(), a.values().end()), y(b.values().begin(), b.values().end());
    const double d = cosine_distance(x, y);
    CHECK(d >= 0.0);
    CHECK(d <= 2.0);
    for (double& v : x) v *= 1e-3 + static_cast<double>(s);
    CHECK(std::fabs(cosine_distance(x, y) - d) < 1e-12);
  }
}

TEST_CASE("serial and parallel kernels are bit-identical") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t r = 3 + s * 7, k = 5 + s * 3, c = 4 + s * 11;
    const Matrix a = oracle::random_matrix(r, k, s), b = oracle::random_matrix(k, c, s + 1);
    const Matrix bt = oracle::random_matrix(c, k, s + 2), at = oracle::random_matrix(k, r, s + 3);
    Matrix o1(r, c), o2(r, c);
    kernels::serial::matmul(a, b, o1);
    kernels::parallel::matmul(a, b, o2);
    CHECK(o1 == o2);
    kernels::serial::matmul_nt(a, bt, o1);
    kernels::parallel::matmul_nt(a, bt, o2);
    CHECK(o1 == o2);
    kernels::serial::matmul_tn(at, b, o1);
    kernels::parallel::matmul_tn(at, b, o2);
    CHECK(o1 == o2);
    Matrix s1(r, k), s2(r, k);
    kernels::serial::softmax_rows(a, nullptr, s1);
    kernels::parallel::softmax_rows(a, nullptr, s2);
    CHECK(s1 == s2);
  }
}

TEST_CASE("matmul matches the triple loop") {
  const Matrix a{{1, 2}, {3, 4}, {5, 6}};
  const Matrix b{{1, 0, -1}, {2, 1, 0}};
  const Matrix c = kernels::matmul(a, b);
  CHECK(c == Matrix{{5, 2, -1}, {11, 4, -3}, {17, 6, -5}});
}

TEST_CASE("masked softmax: permitted rows sum to one, forbidden entries are exactly zero") {
  const Matrix x = oracle::random_matrix(4, 6, 9, 3.0);
  BoolMatrix mask(4, 6, true);
  mask.set(0, 0, false);
  mask.set(1, 5, false);
  mask.set(2, 2, false);
  mask.set(2, 3, false);
  const Matrix p = kernels::softmax_rows(x, &mask);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      if (!mask(r, c)) CHECK(p(r, c) == 0.0);
      s += p(r, c);
    }
    CHECK(std::fabs(s - 1.0) < 1e-15);
  }
  BoolMatrix empty_row(2, 3, true);
  for (std::size_t c = 0; c < 3; ++c) empty_row.set(1, c, false);
  CHECK_THROWS_AS(kernels::softmax_rows(oracle::random_matrix(2, 3, 1), &empty_row), ContractViolation);
}

TEST_CASE("reverse-mode gradients match central differences") {
  for (const auto& c : oracle::gradient_suite(8, 42)) {
    INFO(c.kernel << " " << c.shape);
    CHECK(c.relative_error < 1e-4);
  }
}

TEST_CASE("dropout is the identity on a plain tape and unbiased when active") {
  Tape plain;
  const Var x = plain.constant(Matrix(40, 50, 2.0));
  CHECK(ad::dropout(x).id() == x.id());

  Tape active;
  active.enable_dropout(0.25, 7);
  const Var y = ad::dropout(active.constant(Matrix(40, 50, 2.0)));
  std::size_t zeros = 0;
  double total = 0.0;
  for (double v : y.value().values()) {
    CHECK((v == 0.0 || v == 2.0 / 0.75));
    zeros += v == 0.0 ? 1 : 0;
    total += v;
  }
  CHECK(static_cast<double>(zeros) / 2000.0 == doctest::Approx(0.25).epsilon(0.15));
  CHECK(total / 2000.0 == doctest::Approx(2.0).epsilon(0.1));
  CHECK_THROWS_AS(active.enable_dropout(1.0, 1), ContractViolation);
}

TEST_CASE("sum(W x) gradient is the outer-product structure") {
  const Matrix w = oracle::random_matrix(3, 4, 1), x = oracle::random_matrix(4, 2, 2);
  Parameter pw{"w", w};
  Tape tape;
  Var loss = ad::sum(ad::matmul(tape.parameter(pw), tape.constant(x)));
  tape.backward(loss);
  Matrix g(3, 4, 0.0);
  tape.accumulate_parameter_gradient(pw, g);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(g(i, j) == doctest::Approx(x(j, 0) + x(j, 1)).epsilon(1e-14));
}

TEST_CASE("parameters off the loss path get zero gradient") {
  Parameter used{"used", oracle::random_matrix(2, 2, 3)};
  Parameter unused{"unused", oracle::random_matrix(2, 2, 4)};
  Tape tape;
  Var u = tape.parameter(unused);
  (void)ad::gelu(u);
  Var loss = ad::sum(tape.parameter(used));
  tape.backward(loss);
  Matrix g(2, 2, 0.0);
  tape.accumulate_parameter_gradient(unused, g);
  CHECK(g == Matrix(2, 2, 0.0));
}

TEST_CASE("backward requires a scalar loss on a tracking tape") {
  Parameter p{"p", oracle::random_matrix(2, 3, 5)};
  Tape tape;
  Var v = tape.parameter(p);
  CHECK_THROWS_AS(tape.backward(v), ContractViolation);
  Tape frozen(false);
  Var s = ad::sum(frozen.parameter(p));
  CHECK_THROWS_AS(frozen.backward(s), ContractViolation);
}

TEST_CASE("warmup schedule") {
  AdamWConfig cfg;
  cfg.base_lr = 1e-4;
  cfg.warmup_steps = 5000;
  CHECK(warmup_learning_rate(cfg, 0) == 0.0);
  CHECK(warmup_learning_rate(cfg, 2500) == doctest::Approx(5e-5).epsilon(1e-15));
  CHECK(warmup_learning_rate(cfg, 5000) == 1e-4);
  CHECK(warmup_learning_rate(cfg, 90000) == 1e-4);
}

TEST_CASE("AdamW: zero gradient without decay leaves parameters unchanged") {
  Parameter p{"p", oracle::random_matrix(3, 3, 6)};
  const Matrix before = p.value;
  AdamWConfig cfg;
  cfg.warmup_steps = 0;
  AdamW opt(cfg, {&p});
  const std::vector<Matrix> grads{Matrix(3, 3, 0.0)};
  for (int i = 0; i < 5; ++i) opt.step(grads);
  CHECK(p.value == before);
  CHECK(opt.state().step_count == 5);
}

TEST_CASE("AdamW update matches the closed form") {
  Parameter p{"p", Matrix{{1.0, -2.0}}};
  AdamWConfig cfg;
  cfg.base_lr = 0.1;
  cfg.warmup_steps = 2;
  cfg.weight_decay = 0.5;
  AdamW opt(cfg, {&p});
  const Matrix g{{0.3, -0.4}};
  opt.step(std::vector<Matrix>{g});  // lr = 0 at step 0
  CHECK(p.value == Matrix{{1.0, -2.0}});
  opt.step(std::vector<Matrix>{g});  // lr = 0.05, bias-corrected moments of two equal gradients
  for (std::size_t c = 0; c < 2; ++c) {
    const double x0 = c == 0 ? 1.0 : -2.0;
    const double gi = g(0, c);
    const double m = 0.1 * gi + 0.09 * gi, v = 0.001 * gi * gi + 0.000999 * gi * gi;
    const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
    const double expected = x0 - 0.05 * (mhat / (std::sqrt(vhat) + 1e-8) + 0.5 * x0);
    CHECK(p.value(0, c) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("AdamW: NaN gradient names the parameter") {
  Parameter p{"enc.l0.attn.wq", Matrix(1, 1, 0.0)};
  AdamW opt(AdamWConfig{}, {&p});
  const std::vector<Matrix> grads{Matrix(1, 1, std::numeric_limits<double>::quiet_NaN())};
  try {
    opt.step(grads);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("enc.l0.attn.wq") != std::string::npos);
  }
}
