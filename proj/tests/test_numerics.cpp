#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "poecf/grad_check.hpp"
#include "poecf/matrix.hpp"
#include "poecf/ops.hpp"
#include "poecf/rng.hpp"

using poecf::DenseMatrix;
using poecf::Rng;
using poecf::Vec;

TEST_CASE("log_softmax basics") {
  const Vec two = poecf::log_softmax(Vec{0.0, 0.0});
  CHECK(two[0] == Catch::Approx(std::log(0.5)).margin(1e-15));
  CHECK(two[1] == Catch::Approx(std::log(0.5)).margin(1e-15));

  // Large inputs must not overflow; shift invariance gives a uniform output.
  const Vec big = poecf::log_softmax(Vec{1000.0, 1000.0, 1000.0});
  for (double v : big) CHECK(v == Catch::Approx(std::log(1.0 / 3.0)).margin(1e-12));

  const Vec handmade = poecf::log_softmax(Vec{std::log(1.0), std::log(3.0)});
  CHECK(handmade[0] == Catch::Approx(-1.3862943611198906).margin(1e-12));
  CHECK(handmade[1] == Catch::Approx(-0.2876820724517809).margin(1e-12));

  CHECK_THROWS(poecf::log_softmax(Vec{}));
}

TEST_CASE("log_softmax exponentiates to a distribution for long vectors") {
  Rng rng(3);
  Vec logits(100000);
  for (double& v : logits) v = 10.0 * (rng.next_unit() - 0.5);
  const Vec ls = poecf::log_softmax(logits);
  double sum = 0.0;
  for (double v : ls) sum += std::exp(v);
  CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("affine forward hand cases") {
  DenseMatrix w(2, 2), b(1, 2);
  SECTION("zero weights give the zero vector through tanh") {
    const Vec y = poecf::affine_tanh_forward(w, b, Vec{0.3, -0.7});
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
  }
  SECTION("identity weights in the tanh linear regime") {
    w.at(0, 0) = 1.0;
    w.at(1, 1) = 1.0;
    const Vec y = poecf::affine_tanh_forward(w, b, Vec{1e-5, -2e-5});
    CHECK(y[0] == Catch::Approx(1e-5).epsilon(1e-6));
    CHECK(y[1] == Catch::Approx(-2e-5).epsilon(1e-6));
  }
  SECTION("2x2 hand multiplication, linear head") {
    w.at(0, 0) = 1.0;
    w.at(0, 1) = 2.0;
    w.at(1, 0) = -3.0;
    w.at(1, 1) = 0.5;
    b.at(0, 0) = 0.25;
    b.at(0, 1) = -1.0;
    const Vec y = poecf::affine_forward(w, b, Vec{2.0, -1.0});
    CHECK(y[0] == Catch::Approx(1.0 * 2.0 + 2.0 * -1.0 + 0.25).margin(1e-15));
    CHECK(y[1] == Catch::Approx(-3.0 * 2.0 + 0.5 * -1.0 - 1.0).margin(1e-15));
  }
  SECTION("shape mismatch throws") {
    CHECK_THROWS(poecf::affine_forward(w, b, Vec{1.0, 2.0, 3.0}));
  }
}

TEST_CASE("sample_gaussian") {
  Rng rng(11);
  SECTION("degenerate scale collapses to the mean") {
    const Vec z = poecf::sample_gaussian(Vec{1.5, -2.0}, Vec{1e-300, 1e-300}, rng);
    CHECK(z[0] == Catch::Approx(1.5).margin(1e-290));
    CHECK(z[1] == Catch::Approx(-2.0).margin(1e-290));
  }
  SECTION("fixed seed reproduces the draw") {
    Rng a(42), b(42);
    const Vec za = poecf::sample_gaussian(Vec{0.0}, Vec{2.0}, a);
    const Vec zb = poecf::sample_gaussian(Vec{0.0}, Vec{2.0}, b);
    CHECK(za[0] == zb[0]);
  }
  SECTION("nonpositive sigma throws") {
    CHECK_THROWS(poecf::sample_gaussian(Vec{0.0}, Vec{0.0}, rng));
    CHECK_THROWS(poecf::sample_gaussian(Vec{0.0}, Vec{-1.0}, rng));
  }
  SECTION("monte carlo moments") {
    Rng r(9);
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const Vec z = poecf::sample_gaussian(Vec{0.0}, Vec{1.0}, r);
      sum += z[0];
      sum2 += z[0] * z[0];
    }
    const double mean = sum / n;
    CHECK(std::abs(mean) < 0.02);
    const double var = sum2 / n - mean * mean;
    CHECK(var > 0.98);
    CHECK(var < 1.02);
  }
}

TEST_CASE("grad_check on elementary functions") {
  SECTION("x squared") {
    const auto f = [](const Vec& p) { return p[0] * p[0]; };
    const double err = poecf::grad_check(f, Vec{6.0}, Vec{3.0}, 1e-5);
    CHECK(err < 1e-8);
  }
  SECTION("constant function") {
    const auto f = [](const Vec&) { return 4.25; };
    const double err = poecf::grad_check(f, Vec{0.0, 0.0}, Vec{1.0, -2.0}, 1e-5);
    CHECK(err == 0.0);
  }
  SECTION("wrong gradient is caught") {
    const auto f = [](const Vec& p) { return p[0] * p[0]; };
    const double err = poecf::grad_check(f, Vec{5.0}, Vec{3.0}, 1e-5);
    CHECK(err > 0.1);
  }
  SECTION("non-finite probe throws") {
    const auto f = [](const Vec& p) { return std::log(p[0]); };
    CHECK_THROWS(poecf::grad_check(f, Vec{0.0}, Vec{1e-7}, 1e-5));
  }
}

TEST_CASE("layer primitives pass grad_check on random instances") {
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const int n_out = 3, n_in = 4;
    DenseMatrix w(n_out, n_in), b(1, n_out);
    for (double& v : w.data) v = rng.next_normal();
    for (double& v : b.data) v = rng.next_normal();
    Vec x(n_in);
    for (double& v : x) v = rng.next_normal();
    // Scalar wrapper: sum of tanh layer outputs, parameters flattened as
    // [w, b, x].
    Vec point = w.data;
    point.insert(point.end(), b.data.begin(), b.data.end());
    point.insert(point.end(), x.begin(), x.end());
    const auto f = [&](const Vec& p) {
      DenseMatrix wf(n_out, n_in), bf(1, n_out);
      std::copy(p.begin(), p.begin() + n_out * n_in, wf.data.begin());
      std::copy(p.begin() + n_out * n_in, p.begin() + n_out * n_in + n_out, bf.data.begin());
      Vec xf(p.end() - n_in, p.end());
      const Vec y = poecf::affine_tanh_forward(wf, bf, xf);
      double s = 0.0;
      for (double v : y) s += v;
      return s;
    };
    // Analytic gradient via the backward primitive with dy = ones.
    const Vec y = poecf::affine_tanh_forward(w, b, x);
    DenseMatrix dw(n_out, n_in), db(1, n_out);
    const Vec dx = poecf::affine_tanh_backward(w, x, y, Vec(n_out, 1.0), dw, db);
    Vec analytic = dw.data;
    analytic.insert(analytic.end(), db.data.begin(), db.data.end());
    analytic.insert(analytic.end(), dx.begin(), dx.end());
    const double err = poecf::grad_check(f, analytic, point, 1e-5);
    REQUIRE(err < 1e-4);
  }
}
