#include "sbflow/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace sbflow {

namespace {

double clamp_time(double t, double t_min) { return std::clamp(t, 0.0, 1.0 - t_min); }

void check_state(const Batch& x, int step) {
  if (!x.allFinite())
    throw NumericError("integrator: non-finite state at step " + std::to_string(step), step);
}

}  // namespace

VelocityFn model_velocity(const VectorFieldParams& forward_net, const VectorFieldParams* backward_net,
                          const PrecondSettings& precond) {
  return [&forward_net, backward_net, precond](Direction s, double t, const Batch& x) {
    const VectorFieldParams& net = (backward_net && s == Direction::Backward) ? *backward_net : forward_net;
    return velocity(net, s, t, x, precond);
  };
}

Trajectory euler_maruyama(const VelocityFn& field, Direction direction, const Batch& x_init, int n_steps,
                          double eps, RngState& rng, const IntegratorOptions& options) {
  if (n_steps < 1) throw std::invalid_argument("euler_maruyama: n_steps must be >= 1");
  if (eps < 0.0) throw std::invalid_argument("euler_maruyama: eps must be non-negative");
  const double h = 1.0 / n_steps;
  const double noise_scale = std::sqrt(eps * h);
  Trajectory traj;
  traj.times.push_back(0.0);
  traj.states.push_back(x_init);
  Batch x = x_init;
  for (int k = 0; k < n_steps; ++k) {
    const double t = clamp_time(k * h, options.t_min);
    Batch drift = field(direction, t, x);
    x += h * drift;
    if (noise_scale > 0.0) x += noise_scale * sample_std_normal(rng, x.rows(), x.cols());
    check_state(x, k + 1);
    if (options.store_path) {
      traj.times.push_back((k + 1) * h);
      traj.states.push_back(x);
    }
  }
  if (!options.store_path) {
    traj.times.push_back(1.0);
    traj.states.push_back(std::move(x));
  } else {
    traj.times.back() = 1.0;
  }
  return traj;
}

Batch pf_drift(const VelocityFn& field, double t, const Batch& x, double t_min) {
  const Batch v_fwd = field(Direction::Forward, clamp_time(t, t_min), x);
  const Batch v_bwd = field(Direction::Backward, clamp_time(1.0 - t, t_min), x);
  return 0.5 * (v_fwd - v_bwd);
}

Trajectory pf_ode(const VelocityFn& field, const Batch& x_init, int n_steps, const IntegratorOptions& options) {
  if (n_steps < 1) throw std::invalid_argument("pf_ode: n_steps must be >= 1");
  const double h = 1.0 / n_steps;
  Trajectory traj;
  traj.times.push_back(0.0);
  traj.states.push_back(x_init);
  Batch x = x_init;
  for (int k = 0; k < n_steps; ++k) {
    x += h * pf_drift(field, k * h, x, options.t_min);
    check_state(x, k + 1);
    if (options.store_path) {
      traj.times.push_back((k + 1) * h);
      traj.states.push_back(x);
    }
  }
  if (!options.store_path) {
    traj.times.push_back(1.0);
    traj.states.push_back(std::move(x));
  } else {
    traj.times.back() = 1.0;
  }
  return traj;
}

double path_energy(const VelocityFn& field, const Batch& x0, int n_steps, double t_min) {
  if (n_steps < 1) throw std::invalid_argument("path_energy: n_steps must be >= 1");
  const double h = 1.0 / n_steps;
  Batch x = x0;
  Vec energy = Vec::Zero(x.rows());
  for (int k = 0; k < n_steps; ++k) {
    const Batch drift = pf_drift(field, k * h, x, t_min);
    energy += h * drift.rowwise().squaredNorm();
    x += h * drift;
    check_state(x, k + 1);
  }
  return energy.mean();
}

}  // namespace sbflow
