#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gradsuite.hpp"
#include "optim.hpp"
#include "rng.hpp"

using namespace uvf;

TEST_CASE("tensor construction and reshape") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.at2(1, 2) == 1.5);
  Tensor r = t.reshaped({3, 2});
  CHECK(r.shape() == Shape{3, 2});
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("rng streams are reproducible and well ranged") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(c.bounded(13) < 13);
  }
  auto s = Rng(5).sample_without_replacement(10, 10);
  std::sort(s.begin(), s.end());
  for (int64_t i = 0; i < 10; ++i) CHECK(s[size_t(i)] == i);
}

TEST_CASE("backward accumulates sums correctly") {
  Var x = make_leaf(Tensor({3}, {1.0, 2.0, 3.0}), true);
  Var y = sum_all(mul(x, x));
  backward(y);
  CHECK(y->value[0] == doctest::Approx(14.0));
  CHECK(x->grad[0] == doctest::Approx(2.0));
  CHECK(x->grad[2] == doctest::Approx(6.0));
}

TEST_CASE("backward requires a scalar") {
  Var x = make_leaf(Tensor({3}, 1.0), true);
  CHECK_THROWS_AS(backward(add(x, x)), ContractError);
}

TEST_CASE("NoGradGuard suppresses taping") {
  Var x = make_leaf(Tensor({2}, 1.0), true);
  NoGradGuard ng;
  Var y = mul(x, x);
  CHECK(y->parents.empty());
  CHECK_FALSE(y->requires_grad);
}

TEST_CASE("op-level gradient suite stays under 1e-4") {
  for (const auto& rep : run_gradient_suite(false)) {
    INFO(rep.op_name, " worst ", rep.max_rel_error, " analytic ", rep.analytic, " numeric ",
         rep.numeric);
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.coords_checked > 0);
  }
}

TEST_CASE("adamw takes a descent step on a quadratic") {
  ParamRegistry reg;
  Var w = reg.add("w", Tensor({2}, {3.0, -2.0}));
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW opt(reg, cfg);
  for (int i = 0; i < 200; ++i) {
    opt.zero_grads();
    backward(sum_all(mul(w, w)));
    opt.step();
  }
  CHECK(std::abs(w->value[0]) < 1e-2);
  CHECK(std::abs(w->value[1]) < 1e-2);
}

TEST_CASE("lr schedule: warmup ramp, junction continuity, final zero") {
  double base = 2e-4;
  CHECK(lr_at(5, 10, 100, base) == doctest::Approx(1e-4));
  CHECK(lr_at(10, 10, 100, base) == doctest::Approx(base));
  CHECK(lr_at(99, 10, 100, base) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lr_at(0, 10, 100, base) == doctest::Approx(0.0));
  for (int64_t s = 1; s < 99; ++s) CHECK(lr_at(s, 10, 100, base) > 0.0);
  CHECK_THROWS_AS(lr_at(0, 100, 100, base), ConfigError);
}
