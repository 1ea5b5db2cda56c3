#pragma once

#include <functional>
#include <optional>

#include "sbflow/net.hpp"
#include "sbflow/numerics.hpp"

namespace sbflow {

/// Rowwise Brownian-bridge sample (1-t) x0 + t x1 + sqrt(eps t (1-t)) z.
Batch interp(const Batch& x0, const Batch& x1, const Batch& z, const Vec& t, double eps);

/// X_t = alpha_t X0 + beta_t X1 + gamma_t Z together with time derivatives.
struct InterpolantSchedule {
  std::function<double(double)> alpha;
  std::function<double(double)> beta;
  std::function<double(double)> gamma;
  std::function<double(double)> alpha_dot;
  std::function<double(double)> beta_dot;
  std::function<double(double)> gamma_dot;
};

/// Bridge of (sigma0 B_t): alpha = 1 - t, beta = t, gamma = sigma0 sqrt(t (1 - t)).
InterpolantSchedule brownian_schedule(double sigma0);
/// alpha = 1 - t, beta = t, gamma = 0.
InterpolantSchedule linear_schedule();

Batch interp_general(const Batch& x0, const Batch& x1, const Batch& z, const Vec& t,
                     const InterpolantSchedule& schedule);

/// Diffusivity minimising the KL between the exact and approximate
/// interpolant flows: sqrt(2 gamma gamma' - 2 gamma^2 alpha' / alpha).
double optimal_eps_star(const InterpolantSchedule& schedule, double t);

/// Bridge-matching regression targets: (x1 - x_t)/(1 - t) forward,
/// (x0 - x_t)/t backward. t is the interpolation time.
Batch targets(const Batch& x0, const Batch& x1, const Batch& x_t, const Vec& t, Direction direction);

struct PrecondCoeffs {
  double c_in_sq = 1.0;
  double c_skip = -1.0;
  double c_out_sq = 1.0;
};

/// Input/skip/output scalings making network inputs and regression targets
/// unit-variance for the independent coupling of two unit-variance laws.
PrecondCoeffs precond_coeffs(double t, double eps);

enum class LossWeighting {
  Unit,           // lambda_t = 1
  InverseOutput,  // lambda_t = 1 / c_out^2
};

struct PrecondSettings {
  bool enabled = false;
  double eps = 1.0;
  LossWeighting weighting = LossWeighting::Unit;

  bool operator==(const PrecondSettings&) const = default;
};

/// Rows for the raw network when training v = c_out nn(c_in x) + c_skip x
/// (identity mapping when preconditioning is off). net_t is network time.
RegressionBatch make_regression(const Vec& direction, const Vec& net_t, const Batch& x, const Batch& target,
                                const PrecondSettings& precond);

/// Evaluates the (optionally preconditioned) velocity at network time t.
Batch velocity(const VectorFieldParams& params, Direction direction, double t, const Batch& x,
               const PrecondSettings& precond);

/// Per-row randomness of one loss evaluation.
struct LossDraws {
  Vec t_fwd;
  Batch z_fwd;
  Vec t_bwd;
  Batch z_bwd;
};

LossDraws draw_loss_noise(RngState& rng, Eigen::Index n_fwd, Eigen::Index n_bwd, Eigen::Index d, double t_min);

struct BridgeLoss {
  double loss = 0.0;      // (loss_fwd + loss_bwd) / 2
  double loss_fwd = 0.0;
  double loss_bwd = 0.0;
  VectorFieldParams grads;                       // shared net, or the forward net
  std::optional<VectorFieldParams> grads_bwd;    // set for the two-network variant
};

/// Networks entering the bidirectional loss. backward == nullptr means the
/// forward params are a single direction-conditioned network.
struct LossNetworks {
  const VectorFieldParams* forward = nullptr;
  const VectorFieldParams* backward = nullptr;
};

/// 1/2 [l_fwd + l_bwd]: l_fwd regresses v(1, t, X_t) on (X1 - X_t)/(1 - t)
/// over coupling_fwd; l_bwd regresses v(0, 1 - t, X_t) on (X0 - X_t)/t over
/// coupling_bwd. Either coupling may be empty, which drops that term.
BridgeLoss bidirectional_empirical_loss(const LossNetworks& nets, const CouplingBatch& coupling_fwd,
                                        const CouplingBatch& coupling_bwd, const LossDraws& draws, double eps,
                                        const PrecondSettings& precond = {});

BridgeLoss bidirectional_empirical_loss(const LossNetworks& nets, const CouplingBatch& coupling_fwd,
                                        const CouplingBatch& coupling_bwd, RngState& rng, double eps,
                                        double t_min, const PrecondSettings& precond = {});

}  // namespace sbflow
