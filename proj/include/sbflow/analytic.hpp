#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sbflow/numerics.hpp"
#include "sbflow/sampler.hpp"

namespace sbflow {

// Gaussian entropic OT --------------------------------------------------------

/// Cross-covariance of the entropic OT coupling between N(0, s0^2) and
/// N(0, s1^2) for cost |x - y|^2 / 2 and entropic weight eps (per coordinate).
double gaussian_eot_cross_cov(double sigma0, double sigma1, double eps);

/// Discrete Sinkhorn on an m-point grid over [-halfwidth, halfwidth].
/// Returns E[XY] under the converged plan.
double sinkhorn_1d_oracle(double sigma0, double sigma1, double eps, double grid_halfwidth, int m,
                          int max_iterations = 200000);

// Gaussian IMF recursions with a perturbed Markovian projection ---------------
//
// Reference process sqrt(2) B_t, marginals N(0, 1) per coordinate. Couplings
// are isotropic and described by three scalars.

struct CouplingMoments {
  double c00 = 1.0;  // E[X0 X0]
  double c11 = 1.0;  // E[X1 X1]
  double c01 = 0.0;  // E[X0 X1]
};

enum class IterMode { ForwardForward, ForwardBackward };

const char* to_string(IterMode mode);
IterMode parse_iter_mode(const std::string& name);

struct GaussianIterState {
  IterMode mode = IterMode::ForwardForward;
  CouplingMoments forward;   // coupling produced by the forward model (c00 = 1)
  CouplingMoments backward;  // coupling produced by the backward model (c11 = 1)
  long iteration = 0;

  /// Independent coupling of the two unit Gaussians.
  static GaussianIterState independent(IterMode mode);
  /// (c00, c11, c01) reported for the iteration: the forward coupling, with
  /// c00 taken from the backward coupling in forward_backward mode.
  CouplingMoments reported() const;
};

/// Drift coefficient a_t of the Markovian projection of the bridge over the
/// coupling (c00, c11, c01): (E[X1 | X_t = x] - x)/(1 - t) = a_t x.
double gaussian_drift_coeff(double t, double c00, double c11, double c01);

/// Default Simpson panel count for the recursion integrals.
inline constexpr int kRecursionPanels = 4096;

/// Runs the projected SDE dX = (a_t + eps_err) X dt + sqrt(2) dB from
/// X0 ~ N(0, 1). Returns the new (cross-covariance, terminal variance).
std::pair<double, double> perturbed_markov_projection(const CouplingMoments& coupling, double eps_err,
                                                      int panels = kRecursionPanels);

/// Reported moments for iterations 1..n_iters starting from the independent
/// coupling. Once the state overflows, that and every later entry is +inf.
std::vector<CouplingMoments> gaussian_recursion(IterMode mode, double eps_err, int n_iters,
                                                int panels = kRecursionPanels);

/// One reciprocal + perturbed Markovian projection iteration.
GaussianIterState imf_gaussian_step(const GaussianIterState& state, double eps_err,
                                    int panels = kRecursionPanels);

// Euclidean toy flow -----------------------------------------------------------

struct ToyState {
  double x = 0.0;
  double y = 0.0;
};

/// Projection onto {y >= x}.
ToyState toy_project_a1(ToyState p);
/// Projection onto {y <= 0}.
ToyState toy_project_a2(ToyState p);
/// proj_A1(proj_A2(p)) - p.
ToyState toy_drift(ToyState p);

/// Closed-form flow x_t = x0 e^{-t/2}, y_t = x_t + x_t^2 (y0 - x0)/x0^2.
ToyState toy_flow(double x0, double y0, double t);
/// n relaxed alternating-projection steps with stepsize alpha.
ToyState toy_iterate(double x0, double y0, double alpha, int n);

// Consistency of forward and backward drifts ---------------------------------

using ScoreFn = std::function<Batch(double, const Batch&)>;

/// Score of N(0, s_t^2 I), the time-t marginal of the eps-bridge over the
/// isotropic coupling (c00, c11, c01).
ScoreFn gaussian_bridge_score(const CouplingMoments& coupling, double eps);

/// Mean over probes of ||v(1, t, x) + v(0, 1 - t, x) - eps score(t, x)||^2.
double consistency_residual(const VelocityFn& field, double t, const Batch& x_probe, double eps,
                            const ScoreFn& score);

}  // namespace sbflow
