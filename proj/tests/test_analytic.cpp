#include <cmath>

#include "doctest.h"
#include "sbflow/analytic.hpp"

using namespace sbflow;

namespace {

const double kFixed = std::sqrt(2.0) - 1.0;

// y-coordinate of the relaxed iteration by direct summation of its linear
// recursion y_{k+1} = (1 - a) y_k + a x_k / 2 with x_k = x0 (1 - a/2)^k.
double y_by_summation(double x0, double y0, double a, int n) {
  double sum = 0.0;
  for (int k = 0; k < n; ++k) sum += std::pow(1 - a, k) * std::pow(1 - a / 2, n - 1 - k);
  return std::pow(1 - a, n) * y0 + 0.5 * a * x0 * sum;
}

}  // namespace

TEST_SUITE("analytic") {
  TEST_CASE("entropic OT cross-covariance matches Sinkhorn on a grid") {
    for (double s0 : {0.5, 1.0, 2.0})
      for (double s1 : {0.5, 1.0, 2.0})
        for (double eps : {0.1, 0.25, 1.0}) {
          const double hw = 6.0 * std::max(s0, s1);
          const double oracle = sinkhorn_1d_oracle(s0, s1, eps, hw, 600);
          CHECK_MESSAGE(std::abs(gaussian_eot_cross_cov(s0, s1, eps) - oracle) < 2e-3,
                        "s0=" << s0 << " s1=" << s1 << " eps=" << eps);
        }
    CHECK(gaussian_eot_cross_cov(1, 1, 0.25) == doctest::Approx(0.8827822185).epsilon(1e-9));
  }

  TEST_CASE("entropic OT limits") {
    double prev = 2.0;
    for (double eps : {1e-6, 0.01, 0.1, 1.0, 10.0, 1e3, 1e6}) {
      const double c = gaussian_eot_cross_cov(1, 1, eps);
      CHECK(c < prev);
      prev = c;
    }
    CHECK(gaussian_eot_cross_cov(1, 1, 1e-9) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(gaussian_eot_cross_cov(1, 1, 1e9) < 1e-8);
    CHECK_THROWS(gaussian_eot_cross_cov(0, 1, 1));
  }

  TEST_CASE("sinkhorn oracle self-consistency") {
    const double a = sinkhorn_1d_oracle(1, 1, 0.25, 6, 600);
    const double b = sinkhorn_1d_oracle(1, 1, 0.25, 6, 1200);
    CHECK(std::abs(a - b) < 5e-4);
    CHECK(std::abs(sinkhorn_1d_oracle(1, 1, 1e4, 6, 200)) < 1e-3);
    CHECK(sinkhorn_1d_oracle(0.5, 2, 0.25, 12, 400) == doctest::Approx(sinkhorn_1d_oracle(2, 0.5, 0.25, 12, 400)).epsilon(1e-8));
    CHECK_THROWS(sinkhorn_1d_oracle(1, 1, 0.25, 6, 50));
    CHECK_THROWS(sinkhorn_1d_oracle(1, 1, 0.25, 3, 200));
    CHECK_THROWS_AS(sinkhorn_1d_oracle(1, 1, 0.25, 6, 200, 2), NumericError);
  }

  TEST_CASE("drift coefficient hand values") {
    CHECK(gaussian_drift_coeff(0, 1, 1, 0) == -1.0);
    for (double c : {-0.5, 0.0, 0.3, 0.9}) CHECK(gaussian_drift_coeff(0, 1, 1, c) == doctest::Approx(c - 1));
    CHECK_THROWS_AS(gaussian_drift_coeff(0, 0, 1, 0), NumericError);
  }

  TEST_CASE("drift coefficient equals the conditional-expectation drift") {
    // (E[X1 | X_t = x] - x)/(1 - t) with Var X_t and Cov(X1, X_t) computed directly.
    for (double t : {0.1, 0.5, 0.8})
      for (double c01 : {-0.4, 0.2, 0.7}) {
        const double c00 = 1.3, c11 = 0.8;
        const double var_t = (1 - t) * (1 - t) * c00 + t * t * c11 + 2 * t * (1 - t) * c01 + 2 * t * (1 - t);
        const double cov_1t = (1 - t) * c01 + t * c11;
        const double expected = (cov_1t / var_t - 1) / (1 - t);
        CHECK(gaussian_drift_coeff(t, c00, c11, c01) == doctest::Approx(expected).epsilon(1e-13));
      }
  }

  TEST_CASE("the sqrt2 - 1 coupling is a fixed point") {
    GaussianIterState s = GaussianIterState::independent(IterMode::ForwardForward);
    s.forward = CouplingMoments{1, 1, kFixed};
    const GaussianIterState next = imf_gaussian_step(s, 0.0);
    CHECK(std::abs(next.forward.c01 - kFixed) < 1e-9);
    CHECK(std::abs(next.forward.c11 - 1.0) < 1e-9);
  }

  TEST_CASE("exact recursions keep the marginal and converge") {
    for (IterMode mode : {IterMode::ForwardForward, IterMode::ForwardBackward}) {
      GaussianIterState s = GaussianIterState::independent(mode);
      for (int n = 1; n <= 100; ++n) {
        s = imf_gaussian_step(s, 0.0);
        const CouplingMoments c = s.reported();
        CHECK(std::abs(c.c11 - 1.0) < 1e-9);
        CHECK(c.c01 * c.c01 <= c.c00 * c.c11 + 1e-12);
      }
      CHECK(std::abs(s.reported().c01 - kFixed) < 1e-3);
      CHECK(s.iteration == 100);
    }
  }

  TEST_CASE("cauchy-schwarz is preserved from many starts") {
    for (double c01 : {-0.9, -0.5, 0.0, 0.5, 0.95})
      for (double c11 : {0.5, 1.0, 2.0}) {
        GaussianIterState s = GaussianIterState::independent(IterMode::ForwardForward);
        s.forward = CouplingMoments{1.0, c11, c01 * std::sqrt(c11)};
        for (int n = 0; n < 5; ++n) {
          s = imf_gaussian_step(s, 0.0);
          CHECK(s.forward.c01 * s.forward.c01 <= s.forward.c00 * s.forward.c11 + 1e-12);
        }
      }
  }

  TEST_CASE("perturbed recursions: forward-forward explodes, forward-backward stays bounded") {
    const auto ff = gaussian_recursion(IterMode::ForwardForward, 0.2, 200);
    const auto fb = gaussian_recursion(IterMode::ForwardBackward, 0.2, 200);
    REQUIRE(ff.size() == 200);
    REQUIRE(fb.size() == 200);
    double fb_max = 0.0;
    for (const CouplingMoments& c : fb) fb_max = std::max(fb_max, std::abs(c.c11 - 1.0));
    CHECK(fb_max < 0.5);
    // Growth is monotone until the state overflows.
    for (int n = 1; n < 40; ++n) CHECK(ff[n].c11 > ff[n - 1].c11);
    CHECK(ff[30].c11 > 1e4);
    CHECK(std::isinf(ff.back().c11));
    CHECK_THROWS_AS(gaussian_recursion(IterMode::ForwardForward, 0.0, -1), std::invalid_argument);
  }

  TEST_CASE("recursion driver matches repeated steps") {
    const auto rows = gaussian_recursion(IterMode::ForwardBackward, 0.1, 10);
    GaussianIterState s = GaussianIterState::independent(IterMode::ForwardBackward);
    for (int n = 0; n < 10; ++n) {
      s = imf_gaussian_step(s, 0.1);
      CHECK(rows[n].c11 == s.reported().c11);
      CHECK(rows[n].c01 == s.reported().c01);
    }
  }

  TEST_CASE("toy flow closed form") {
    const ToyState p = toy_flow(2, 1, 0);
    CHECK(p.x == 2.0);
    CHECK(p.y == 1.0);
    CHECK_THROWS(toy_flow(1, 2, 0.5));
    CHECK_THROWS(toy_flow(1, -0.5, 0.5));
  }

  TEST_CASE("toy flow solves its projection ODE") {
    const double h = 1e-5;
    for (double t = 0.0; t <= 10.0; t += 0.5) {
      const ToyState a = toy_flow(1.5, 0.4, t + h);
      const ToyState b = toy_flow(1.5, 0.4, std::max(0.0, t - h));
      const double span = t + h - std::max(0.0, t - h);
      const ToyState mid = toy_flow(1.5, 0.4, t);
      const ToyState v = toy_drift(mid);
      CHECK(std::abs((a.x - b.x) / span - v.x) < 1e-4);
      CHECK(std::abs((a.y - b.y) / span - v.y) < 1e-4);
    }
  }

  TEST_CASE("toy iterates: halving at alpha = 1 and geometric sums") {
    for (int n = 0; n <= 60; ++n) {
      const ToyState p = toy_iterate(1.0, 0.75, 1.0, n);
      CHECK(p.x == std::ldexp(1.0, -n));
    }
    for (double a : {0.1, 0.5, 1.0})
      for (int n = 0; n <= 60; ++n) {
        const ToyState p = toy_iterate(1.0, 0.3, a, n);
        CHECK(std::abs(p.x - std::pow(1 - a / 2, n)) < 1e-12);
        CHECK(std::abs(p.y - y_by_summation(1.0, 0.3, a, n)) < 1e-12);
      }
    CHECK_THROWS(toy_iterate(1, 0.5, 0.0, 3));
    CHECK_THROWS(toy_iterate(1, 0.5, 1.5, 3));
    CHECK_THROWS(toy_iterate(0.5, 1, 0.5, 3));
  }

  TEST_CASE("toy iterates approach the flow as alpha shrinks") {
    const double t = 2.0;
    double prev = INFINITY;
    for (double a : {0.1, 0.05, 0.025, 0.0125}) {
      const int n = static_cast<int>(std::ceil(t / a));
      const ToyState it = toy_iterate(1.0, 0.5, a, n);
      const ToyState fl = toy_flow(1.0, 0.5, n * a);
      const double err = std::hypot(it.x - fl.x, it.y - fl.y);
      CHECK(err < 1.0 * a);
      CHECK(err < prev);
      prev = err;
    }
  }

  TEST_CASE("consistency residual vanishes for the exact drifts") {
    const CouplingMoments c{1.2, 0.9, 0.4};
    const double eps = 0.5;
    auto var = [&](double t) {
      return (1 - t) * (1 - t) * c.c00 + t * t * c.c11 + 2 * t * (1 - t) * c.c01 + eps * t * (1 - t);
    };
    // Conditional expectations of the endpoints given X_t = x are linear in x.
    VelocityFn exact = [&](Direction s, double u, const Batch& x) -> Batch {
      if (s == Direction::Forward) {
        const double k1 = ((1 - u) * c.c01 + u * c.c11) / var(u);
        return (k1 - 1) / (1 - u) * x;
      }
      const double t = 1 - u;
      const double k0 = ((1 - t) * c.c00 + t * c.c01) / var(t);
      return (k0 - 1) / t * x;
    };
    RngState rng{1, 0, 0};
    const Batch probes = sample_std_normal(rng, 100, 3);
    for (double t : {0.2, 0.5, 0.7}) CHECK(consistency_residual(exact, t, probes, eps, gaussian_bridge_score(c, eps)) < 1e-24);
    VelocityFn off = [&](Direction s, double u, const Batch& x) -> Batch { return exact(s, u, x) + 0.1 * x; };
    CHECK(consistency_residual(off, 0.5, probes, eps, gaussian_bridge_score(c, eps)) > 1e-3);
  }
}
