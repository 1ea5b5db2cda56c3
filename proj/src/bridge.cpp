#include "sbflow/bridge.hpp"

#include <cmath>

namespace sbflow {

namespace {

void check_pair(const Batch& a, const Batch& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

void scale_into(VectorFieldParams& dst, const VectorFieldParams& src, double factor) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
}

}  // namespace

Batch interp(const Batch& x0, const Batch& x1, const Batch& z, const Vec& t, double eps) {
  if (eps < 0.0) throw std::invalid_argument("interp: eps must be non-negative");
  check_pair(x0, x1, "interp");
  check_pair(x0, z, "interp");
  if (t.size() != x0.rows()) throw std::invalid_argument("interp: time length mismatch");
  Batch out(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const double ti = t[i];
    if (!(ti >= 0.0 && ti <= 1.0)) throw std::domain_error("interp: t outside [0, 1]");
    const double noise = std::sqrt(eps * ti * (1.0 - ti));
    out.row(i) = (1.0 - ti) * x0.row(i) + ti * x1.row(i) + noise * z.row(i);
  }
  return out;
}

InterpolantSchedule brownian_schedule(double sigma0) {
  InterpolantSchedule s;
  s.alpha = [](double t) { return 1.0 - t; };
  s.beta = [](double t) { return t; };
  s.gamma = [sigma0](double t) { return sigma0 * std::sqrt(t * (1.0 - t)); };
  s.alpha_dot = [](double) { return -1.0; };
  s.beta_dot = [](double) { return 1.0; };
  s.gamma_dot = [sigma0](double t) { return sigma0 * (1.0 - 2.0 * t) / (2.0 * std::sqrt(t * (1.0 - t))); };
  return s;
}

InterpolantSchedule linear_schedule() {
  InterpolantSchedule s;
  s.alpha = [](double t) { return 1.0 - t; };
  s.beta = [](double t) { return t; };
  s.gamma = [](double) { return 0.0; };
  s.alpha_dot = [](double) { return -1.0; };
  s.beta_dot = [](double) { return 1.0; };
  s.gamma_dot = [](double) { return 0.0; };
  return s;
}

Batch interp_general(const Batch& x0, const Batch& x1, const Batch& z, const Vec& t,
                     const InterpolantSchedule& schedule) {
  check_pair(x0, x1, "interp_general");
  check_pair(x0, z, "interp_general");
  if (t.size() != x0.rows()) throw std::invalid_argument("interp_general: time length mismatch");
  Batch out(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const double ti = t[i];
    out.row(i) = schedule.alpha(ti) * x0.row(i) + schedule.beta(ti) * x1.row(i) + schedule.gamma(ti) * z.row(i);
  }
  return out;
}

double optimal_eps_star(const InterpolantSchedule& schedule, double t) {
  const double a = schedule.alpha(t);
  if (a == 0.0) throw std::domain_error("optimal_eps_star: alpha vanishes at t");
  const double g = schedule.gamma(t);
  const double radicand = 2.0 * g * schedule.gamma_dot(t) - 2.0 * g * g * schedule.alpha_dot(t) / a;
  if (!std::isfinite(radicand) || radicand < 0.0)
    throw std::domain_error("schedule admits no valid diffusivity at t");
  return std::sqrt(radicand);
}

Batch targets(const Batch& x0, const Batch& x1, const Batch& x_t, const Vec& t, Direction direction) {
  check_pair(x0, x1, "targets");
  check_pair(x0, x_t, "targets");
  if (t.size() != x0.rows()) throw std::invalid_argument("targets: time length mismatch");
  Batch out(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const double ti = t[i];
    if (direction == Direction::Forward) {
      if (!(ti < 1.0)) throw std::domain_error("targets: forward target needs t < 1");
      out.row(i) = (x1.row(i) - x_t.row(i)) / (1.0 - ti);
    } else {
      if (!(ti > 0.0)) throw std::domain_error("targets: backward target needs t > 0");
      out.row(i) = (x0.row(i) - x_t.row(i)) / ti;
    }
  }
  return out;
}

PrecondCoeffs precond_coeffs(double t, double eps) {
  if (!(t >= 0.0 && t < 1.0)) throw std::domain_error("precond_coeffs: t outside [0, 1)");
  // Per-coordinate second moment of X_t under the independent coupling.
  const double second_moment = 1.0 + (eps - 2.0) * t * (1.0 - t);
  if (!(second_moment > 0.0)) throw std::domain_error("precond_coeffs: non-positive denominator");
  PrecondCoeffs c;
  c.c_in_sq = 1.0 / second_moment;
  c.c_skip = -(1.0 + (eps - 2.0) * t) / second_moment;
  c.c_out_sq = (1.0 - t + eps * t) / (second_moment * (1.0 - t));
  return c;
}

RegressionBatch make_regression(const Vec& direction, const Vec& net_t, const Batch& x, const Batch& target,
                                const PrecondSettings& precond) {
  RegressionBatch r;
  r.direction = direction;
  r.t = net_t;
  if (!precond.enabled) {
    r.x = x;
    r.target = target;
    return r;
  }
  r.x.resize(x.rows(), x.cols());
  r.target.resize(x.rows(), x.cols());
  r.weight.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const PrecondCoeffs c = precond_coeffs(net_t[i], precond.eps);
    const double c_out = std::sqrt(c.c_out_sq);
    r.x.row(i) = std::sqrt(c.c_in_sq) * x.row(i);
    r.target.row(i) = (target.row(i) - c.c_skip * x.row(i)) / c_out;
    r.weight[i] = precond.weighting == LossWeighting::Unit ? c.c_out_sq : 1.0;
  }
  return r;
}

Batch velocity(const VectorFieldParams& params, Direction direction, double t, const Batch& x,
               const PrecondSettings& precond) {
  if (!precond.enabled) return forward(params, direction, t, x);
  const PrecondCoeffs c = precond_coeffs(t, precond.eps);
  Batch nn = forward(params, direction, t, std::sqrt(c.c_in_sq) * x);
  return std::sqrt(c.c_out_sq) * nn + c.c_skip * x;
}

LossDraws draw_loss_noise(RngState& rng, Eigen::Index n_fwd, Eigen::Index n_bwd, Eigen::Index d, double t_min) {
  LossDraws draws;
  if (n_fwd > 0) {
    draws.t_fwd = sample_uniform(rng, n_fwd, t_min, 1.0 - t_min);
    draws.z_fwd = sample_std_normal(rng, n_fwd, d);
  }
  if (n_bwd > 0) {
    draws.t_bwd = sample_uniform(rng, n_bwd, t_min, 1.0 - t_min);
    draws.z_bwd = sample_std_normal(rng, n_bwd, d);
  }
  return draws;
}

BridgeLoss bidirectional_empirical_loss(const LossNetworks& nets, const CouplingBatch& coupling_fwd,
                                        const CouplingBatch& coupling_bwd, const LossDraws& draws, double eps,
                                        const PrecondSettings& precond) {
  if (!nets.forward) throw std::invalid_argument("bidirectional_empirical_loss: missing network");
  const bool shared = nets.backward == nullptr;
  if (shared && !nets.forward->spec().bidirectional)
    throw std::invalid_argument("bidirectional_empirical_loss: shared network must be bidirectional");

  BridgeLoss out;
  out.grads = VectorFieldParams(nets.forward->spec());
  if (!shared) out.grads_bwd = VectorFieldParams(nets.backward->spec());

  if (coupling_fwd.rows() > 0) {
    const Vec& t = draws.t_fwd;
    const Batch x_t = interp(coupling_fwd.x0, coupling_fwd.x1, draws.z_fwd, t, eps);
    const Batch tau = targets(coupling_fwd.x0, coupling_fwd.x1, x_t, t, Direction::Forward);
    const RegressionBatch reg = make_regression(Vec::Ones(t.size()), t, x_t, tau, precond);
    const LossAndGrad lg = loss_and_grad(*nets.forward, reg);
    out.loss_fwd = lg.loss;
    scale_into(out.grads, lg.grads, 0.5);
  }
  if (coupling_bwd.rows() > 0) {
    const Vec& t = draws.t_bwd;
    const Batch x_t = interp(coupling_bwd.x0, coupling_bwd.x1, draws.z_bwd, t, eps);
    const Batch tau = targets(coupling_bwd.x0, coupling_bwd.x1, x_t, t, Direction::Backward);
    const Vec net_t = Vec::Ones(t.size()) - t;
    const RegressionBatch reg = make_regression(Vec::Zero(t.size()), net_t, x_t, tau, precond);
    const LossAndGrad lg = loss_and_grad(shared ? *nets.forward : *nets.backward, reg);
    out.loss_bwd = lg.loss;
    scale_into(shared ? out.grads : *out.grads_bwd, lg.grads, 0.5);
  }
  out.loss = 0.5 * (out.loss_fwd + out.loss_bwd);
  return out;
}

BridgeLoss bidirectional_empirical_loss(const LossNetworks& nets, const CouplingBatch& coupling_fwd,
                                        const CouplingBatch& coupling_bwd, RngState& rng, double eps,
                                        double t_min, const PrecondSettings& precond) {
  const Eigen::Index d = coupling_fwd.rows() > 0 ? coupling_fwd.dim() : coupling_bwd.dim();
  const LossDraws draws = draw_loss_noise(rng, coupling_fwd.rows(), coupling_bwd.rows(), d, t_min);
  return bidirectional_empirical_loss(nets, coupling_fwd, coupling_bwd, draws, eps, precond);
}

}  // namespace sbflow
