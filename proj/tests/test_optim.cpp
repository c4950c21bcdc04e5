#include <doctest.h>

#include <cmath>

#include "optim.hpp"

using namespace pctl;

TEST_SUITE_BEGIN("optim");

TEST_CASE("mu = 0, lr = 1 is one plain gradient step") {
  Tensor p = Tensor::scalar(1.0);
  Tensor g = Tensor::scalar(0.5);
  SgdMomentum opt(0.0, {SgdMomentum::Group{1.0, {0}}});
  opt.step({&p}, {&g});
  CHECK(p.item() == 0.5);
}

TEST_CASE("zero gradients leave parameters fixed while velocity decays geometrically") {
  Tensor p = Tensor::scalar(2.0);
  Tensor g = Tensor::scalar(1.0);
  SgdMomentum opt(0.5, {SgdMomentum::Group{0.0 + 1e-12, {0}}});
  // Prime the velocity with one real gradient, then feed zeros.
  opt.step({&p}, {&g});
  double v = opt.velocity(0).item();
  Tensor zero = Tensor::scalar(0.0);
  double before = p.item();
  for (int i = 1; i <= 5; ++i) {
    opt.step({&p}, {&zero});
    CHECK(opt.velocity(0).item() == doctest::Approx(v * std::pow(0.5, i)).epsilon(1e-12));
  }
  CHECK(p.item() == doctest::Approx(before).epsilon(1e-9));
}

TEST_CASE("two steps of the classic recurrence reach -0.29") {
  Tensor p = Tensor::scalar(0.0);
  Tensor g = Tensor::scalar(1.0);
  SgdMomentum opt(0.9, {SgdMomentum::Group{0.1, {0}}});
  opt.step({&p}, {&g});
  CHECK(p.item() == doctest::Approx(-0.1).epsilon(1e-15));
  opt.step({&p}, {&g});
  CHECK(p.item() == doctest::Approx(-0.29).epsilon(1e-15));
}

TEST_CASE("mu = 0 equals vanilla gradient descent exactly over many steps") {
  Rng rng(5);
  Tensor p1(2, 2), p2(2, 2);
  for (std::size_t i = 0; i < 4; ++i) p1[i] = p2[i] = rng.next_uniform(-1, 1);
  SgdMomentum opt(0.0, {SgdMomentum::Group{0.03, {0}}});
  for (int step = 0; step < 20; ++step) {
    Tensor g(2, 2);
    for (std::size_t i = 0; i < 4; ++i) g[i] = rng.next_uniform(-1, 1);
    opt.step({&p1}, {&g});
    for (std::size_t i = 0; i < 4; ++i) p2[i] -= 0.03 * g[i];
    for (std::size_t i = 0; i < 4; ++i) CHECK(p1[i] == p2[i]);
  }
}

TEST_CASE("a non-finite gradient refuses the whole step") {
  Tensor p = Tensor::scalar(1.0);
  Tensor q = Tensor::scalar(2.0);
  Tensor good = Tensor::scalar(0.5);
  Tensor bad = Tensor::scalar(std::nan(""));
  SgdMomentum opt(0.9, {SgdMomentum::Group{0.1, {0, 1}}});
  CHECK_THROWS_WITH_AS(opt.step({&p, &q}, {&good, &bad}), doctest::Contains("refused"), Error);
  CHECK(p.item() == 1.0);  // untouched
  CHECK(q.item() == 2.0);
}

TEST_CASE("groups must partition the parameter list") {
  CHECK_THROWS_AS(SgdMomentum(0.9, {SgdMomentum::Group{0.1, {0, 0}}}), Error);
  CHECK_THROWS_AS(SgdMomentum(1.0, {SgdMomentum::Group{0.1, {0}}}), Error);
  CHECK_THROWS_AS(SgdMomentum(0.9, {SgdMomentum::Group{-0.1, {0}}}), Error);
}

TEST_SUITE_END();
