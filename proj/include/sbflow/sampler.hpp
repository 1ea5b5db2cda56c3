#pragma once

#include <functional>
#include <vector>

#include "sbflow/bridge.hpp"
#include "sbflow/net.hpp"

namespace sbflow {

/// Drift v(s, t, x). t is the time of the process being integrated, so the
/// backward drift is evaluated in its own clock running from pi1.
using VelocityFn = std::function<Batch(Direction, double, const Batch&)>;

/// Wraps network parameters as a drift. backward == nullptr selects the
/// direction-conditioned single network. The referenced params must outlive
/// the returned function.
VelocityFn model_velocity(const VectorFieldParams& forward_net, const VectorFieldParams* backward_net = nullptr,
                          const PrecondSettings& precond = {});

struct Trajectory {
  std::vector<double> times;
  std::vector<Batch> states;

  const Batch& initial() const { return states.front(); }
  const Batch& terminal() const { return states.back(); }
};

struct IntegratorOptions {
  bool store_path = false;
  double t_min = 1e-4;
};

/// X_{k+1} = X_k + v(s, t_k, X_k) h + sqrt(eps h) Z_k, left-endpoint drift
/// with t_k clamped to 1 - t_min.
Trajectory euler_maruyama(const VelocityFn& field, Direction direction, const Batch& x_init, int n_steps,
                          double eps, RngState& rng, const IntegratorOptions& options = {});

/// Drift of the probability-flow ODE: (v(1, t, x) - v(0, 1 - t, x)) / 2.
Batch pf_drift(const VelocityFn& field, double t, const Batch& x, double t_min = 1e-4);

/// Explicit Euler on the probability-flow ODE from pi0.
Trajectory pf_ode(const VelocityFn& field, const Batch& x_init, int n_steps, const IntegratorOptions& options = {});

/// Batch mean of sum_k ||pf_drift(t_k, X_k)||^2 h along Euler PF-ODE paths.
double path_energy(const VelocityFn& field, const Batch& x0, int n_steps, double t_min = 1e-4);

}  // namespace sbflow
