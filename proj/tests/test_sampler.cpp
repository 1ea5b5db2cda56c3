#include <cmath>

#include "doctest.h"
#include "sbflow/sampler.hpp"

using namespace sbflow;

namespace {

VelocityFn constant_field(double fwd, double bwd) {
  return [=](Direction s, double, const Batch& x) -> Batch {
    return Batch::Constant(x.rows(), x.cols(), s == Direction::Forward ? fwd : bwd);
  };
}

VelocityFn linear_field(double fwd_gain, double bwd_gain) {
  return [=](Direction s, double, const Batch& x) -> Batch { return (s == Direction::Forward ? fwd_gain : bwd_gain) * x; };
}

}  // namespace

TEST_SUITE("sampler") {
  TEST_CASE("zero drift without noise keeps the state") {
    RngState rng{1, 0, 0};
    const Batch x = sample_std_normal(rng, 5, 2);
    IntegratorOptions opts;
    opts.store_path = true;
    const Trajectory tr = euler_maruyama(constant_field(0, 0), Direction::Forward, x, 10, 0.0, rng, opts);
    CHECK(tr.states.size() == 11);
    CHECK(tr.times.front() == 0.0);
    CHECK(tr.times.back() == 1.0);
    for (const auto& s : tr.states) CHECK(s == x);
  }

  TEST_CASE("linear ODE decay") {
    RngState rng{2, 0, 0};
    const Batch x = Batch::Ones(1, 1);
    const Trajectory tr = euler_maruyama(linear_field(-1, -1), Direction::Forward, x, 10000, 0.0, rng);
    CHECK(std::abs(tr.terminal()(0, 0) - std::exp(-1.0)) < 1e-3);
  }

  TEST_CASE("pure noise has variance eps") {
    RngState rng{3, 0, 0};
    const int n = 100000;
    const Trajectory tr = euler_maruyama(constant_field(0, 0), Direction::Backward, Batch::Zero(n, 1), 100, 1.0, rng);
    const Batch& y = tr.terminal();
    const double mean = y.mean();
    const double var = (y.array() - mean).square().sum() / (n - 1);
    CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / n));
  }

  TEST_CASE("integrator clamps the last time and reports divergence") {
    double last_t = -1.0;
    VelocityFn probe = [&](Direction, double t, const Batch& x) -> Batch {
      last_t = t;
      return Batch::Zero(x.rows(), x.cols());
    };
    RngState rng{4, 0, 0};
    IntegratorOptions opts;
    opts.t_min = 0.2;
    euler_maruyama(probe, Direction::Forward, Batch::Zero(1, 1), 2, 0.0, rng, opts);
    CHECK(last_t == doctest::Approx(0.5));
    euler_maruyama(probe, Direction::Forward, Batch::Zero(1, 1), 10, 0.0, rng, opts);
    CHECK(last_t == doctest::Approx(0.8));

    try {
      euler_maruyama(linear_field(1e200, 1e200), Direction::Forward, Batch::Ones(1, 1), 5, 0.0, rng);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(e.index() >= 1);
    }
  }

  TEST_CASE("pf-ode with mirrored drifts has zero velocity") {
    RngState rng{5, 0, 0};
    const Batch x = sample_std_normal(rng, 4, 3);
    VelocityFn same = [](Direction, double, const Batch& y) -> Batch { return 0.3 * y; };
    CHECK(pf_ode(same, x, 20).terminal() == x);
  }

  TEST_CASE("pf-ode constant drift") {
    const Batch x = Batch::Constant(2, 2, 0.5);
    const Trajectory tr = pf_ode(constant_field(0.7, -0.7), x, 20);
    CHECK((tr.terminal().array() - 1.2).abs().maxCoeff() < 1e-12);
    const Trajectory a = pf_ode(linear_field(-1, 1), x, 20);
    const Trajectory b = pf_ode(linear_field(-1, 1), x, 20);
    CHECK(a.terminal() == b.terminal());
  }

  TEST_CASE("path energy closed forms") {
    const Batch x = Batch::Ones(3, 1);
    CHECK(path_energy(constant_field(0, 0), x, 50) == 0.0);
    CHECK(path_energy(constant_field(0.8, -0.8), x, 50) == doctest::Approx(0.64).epsilon(1e-12));
    CHECK(std::abs(path_energy(linear_field(-1, 1), x, 10000) - (1 - std::exp(-2.0)) / 2) < 1e-3);
  }

  TEST_CASE("model velocity routes directions to the right network") {
    NetSpec s;
    s.input_dim = 2;
    s.hidden_units = 4;
    s.depth = 2;
    s.time_embed_dim = 4;
    s.embed_hidden = 3;
    s.bidirectional = false;
    RngState rng{6, 0, 0};
    const VectorFieldParams f = init_vector_field(s, rng);
    const VectorFieldParams b = init_vector_field(s, rng);
    const VelocityFn field = model_velocity(f, &b);
    const Batch x = sample_std_normal(rng, 3, 2);
    CHECK(field(Direction::Forward, 0.2, x) == forward(f, Direction::Forward, 0.2, x));
    CHECK(field(Direction::Backward, 0.2, x) == forward(b, Direction::Backward, 0.2, x));
  }
}
