#include "sbflow/analytic.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace sbflow {

double gaussian_eot_cross_cov(double sigma0, double sigma1, double eps) {
  if (!(sigma0 > 0.0 && sigma1 > 0.0 && eps > 0.0))
    throw std::invalid_argument("gaussian_eot_cross_cov: inputs must be positive");
  const double s = sigma0 * sigma0 * sigma1 * sigma1;
  // Positive root of c^2 + eps c - s0^2 s1^2 = 0, written to avoid cancellation.
  return 2.0 * s / (std::sqrt(4.0 * s + eps * eps) + eps);
}

double sinkhorn_1d_oracle(double sigma0, double sigma1, double eps, double grid_halfwidth, int m,
                          int max_iterations) {
  if (!(sigma0 > 0.0 && sigma1 > 0.0 && eps > 0.0)) throw std::invalid_argument("sinkhorn: inputs must be positive");
  if (m < 100) throw std::invalid_argument("sinkhorn: need at least 100 grid points");
  if (grid_halfwidth < 5.0 * std::max(sigma0, sigma1))
    throw std::invalid_argument("sinkhorn: grid must cover 5 standard deviations");

  const Vec x = Vec::LinSpaced(m, -grid_halfwidth, grid_halfwidth);
  Vec a = (-x.array().square() / (2.0 * sigma0 * sigma0)).exp();
  Vec b = (-x.array().square() / (2.0 * sigma1 * sigma1)).exp();
  a /= a.sum();
  b /= b.sum();
  Eigen::MatrixXd kernel(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) kernel(i, j) = std::exp(-0.5 * (x[i] - x[j]) * (x[i] - x[j]) / eps);

  Vec u = Vec::Ones(m);
  Vec v = Vec::Ones(m);
  for (int it = 0; it < max_iterations; ++it) {
    u = a.cwiseQuotient(kernel * v);
    v = b.cwiseQuotient(kernel.transpose() * u);
    // v-update makes the column marginal exact; check the row marginal.
    const double err = (u.cwiseProduct(kernel * v) - a).cwiseAbs().sum();
    if (!std::isfinite(err)) throw NumericError("sinkhorn: non-finite scaling");
    if (err < 1e-10) {
      double cross = 0.0;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) cross += u[i] * kernel(i, j) * v[j] * x[i] * x[j];
      return cross;
    }
  }
  throw NumericError("sinkhorn: no convergence within iteration cap");
}

const char* to_string(IterMode mode) {
  return mode == IterMode::ForwardForward ? "forward_forward" : "forward_backward";
}

IterMode parse_iter_mode(const std::string& name) {
  if (name == "forward_forward") return IterMode::ForwardForward;
  if (name == "forward_backward") return IterMode::ForwardBackward;
  throw std::invalid_argument("unknown mode: " + name);
}

GaussianIterState GaussianIterState::independent(IterMode mode) {
  GaussianIterState s;
  s.mode = mode;
  return s;
}

CouplingMoments GaussianIterState::reported() const {
  if (mode == IterMode::ForwardForward) return forward;
  return CouplingMoments{backward.c00, forward.c11, forward.c01};
}

double gaussian_drift_coeff(double t, double c00, double c11, double c01) {
  const double num = -(1.0 - t) * c00 + t * c11 + (1.0 - 2.0 * t) * c01 - 2.0 * t;
  const double den = (1.0 - t) * (1.0 - t) * c00 + t * t * c11 + 2.0 * t * (1.0 - t) * c01 + 2.0 * t * (1.0 - t);
  if (!(den > 0.0)) throw NumericError("covariance state left admissible region");
  return num / den;
}

std::pair<double, double> perturbed_markov_projection(const CouplingMoments& c, double eps_err, int panels) {
  if (panels < 1) throw std::invalid_argument("perturbed_markov_projection: panels must be >= 1");
  // F(s) = 2 int_0^s (a_u + eps_err) du on the nodes s_j = j / m, each
  // interval by Simpson, then X_1 = e^{F(1)/2} X_0 + noise.
  const int m = 2 * panels;
  const double h = 1.0 / m;
  auto rate = [&](double s) { return 2.0 * (gaussian_drift_coeff(s, c.c00, c.c11, c.c01) + eps_err); };
  std::vector<double> big_f(m + 1, 0.0);
  double left = rate(0.0);
  for (int j = 0; j < m; ++j) {
    const double right = rate((j + 1) * h);
    big_f[j + 1] = big_f[j] + h / 6.0 * (left + 4.0 * rate((j + 0.5) * h) + right);
    left = right;
  }
  double noise = 0.0;
  for (int j = 0; j <= m; ++j) {
    const double w = (j == 0 || j == m) ? 1.0 : (j % 2 ? 4.0 : 2.0);
    noise += w * std::exp(-big_f[j]);
  }
  noise *= h / 3.0;
  const double f1 = big_f[m];
  const double cross = std::exp(0.5 * f1);
  const double var = std::exp(f1) * (1.0 + 2.0 * noise);
  if (!std::isfinite(cross) || !std::isfinite(var)) throw NumericError("covariance state left admissible region");
  return {cross, var};
}

GaussianIterState imf_gaussian_step(const GaussianIterState& state, double eps_err, int panels) {
  GaussianIterState next = state;
  ++next.iteration;
  if (state.mode == IterMode::ForwardForward) {
    const auto [cross, var] = perturbed_markov_projection(state.forward, eps_err, panels);
    next.forward = CouplingMoments{1.0, var, cross};
    return next;
  }
  // Forward model fits the bridge over the backward model's coupling.
  const auto [f_cross, f_var] = perturbed_markov_projection(state.backward, eps_err, panels);
  // Backward model fits the time-reversed bridge over the forward coupling.
  const CouplingMoments mirrored{state.forward.c11, state.forward.c00, state.forward.c01};
  const auto [b_cross, b_var] = perturbed_markov_projection(mirrored, eps_err, panels);
  next.forward = CouplingMoments{1.0, f_var, f_cross};
  next.backward = CouplingMoments{b_var, 1.0, b_cross};
  return next;
}

std::vector<CouplingMoments> gaussian_recursion(IterMode mode, double eps_err, int n_iters, int panels) {
  if (n_iters < 0) throw std::invalid_argument("gaussian_recursion: n_iters must be non-negative");
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<CouplingMoments> out;
  out.reserve(n_iters);
  GaussianIterState s = GaussianIterState::independent(mode);
  bool diverged = false;
  for (int n = 1; n <= n_iters; ++n) {
    if (!diverged) {
      try {
        s = imf_gaussian_step(s, eps_err, panels);
      } catch (const NumericError&) {
        diverged = true;
      }
    }
    out.push_back(diverged ? CouplingMoments{inf, inf, inf} : s.reported());
  }
  return out;
}

ToyState toy_project_a1(ToyState p) {
  if (p.y >= p.x) return p;
  const double m = 0.5 * (p.x + p.y);
  return {m, m};
}

ToyState toy_project_a2(ToyState p) {
  if (p.y <= 0.0) return p;
  return {p.x, 0.0};
}

ToyState toy_drift(ToyState p) {
  const ToyState q = toy_project_a1(toy_project_a2(p));
  return {q.x - p.x, q.y - p.y};
}

namespace {
void check_toy_start(double x0, double y0) {
  if (!(0.0 < y0 && y0 < x0)) throw std::invalid_argument("toy: start must satisfy 0 < y0 < x0");
}
}  // namespace

ToyState toy_flow(double x0, double y0, double t) {
  check_toy_start(x0, y0);
  const double x = x0 * std::exp(-0.5 * t);
  return {x, x + x * x * (y0 - x0) / (x0 * x0)};
}

ToyState toy_iterate(double x0, double y0, double alpha, int n) {
  check_toy_start(x0, y0);
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("toy_iterate: alpha must lie in (0, 1]");
  if (n < 0) throw std::invalid_argument("toy_iterate: n must be non-negative");
  ToyState p{x0, y0};
  for (int k = 0; k < n; ++k) {
    const ToyState q = toy_project_a1(toy_project_a2(p));
    p = {(1.0 - alpha) * p.x + alpha * q.x, (1.0 - alpha) * p.y + alpha * q.y};
  }
  return p;
}

ScoreFn gaussian_bridge_score(const CouplingMoments& c, double eps) {
  return [c, eps](double t, const Batch& x) -> Batch {
    const double var = (1.0 - t) * (1.0 - t) * c.c00 + t * t * c.c11 + 2.0 * t * (1.0 - t) * c.c01 +
                       eps * t * (1.0 - t);
    return -x / var;
  };
}

double consistency_residual(const VelocityFn& field, double t, const Batch& x_probe, double eps,
                            const ScoreFn& score) {
  const Batch sum = field(Direction::Forward, t, x_probe) + field(Direction::Backward, 1.0 - t, x_probe);
  const Batch r = sum - eps * score(t, x_probe);
  return r.rowwise().squaredNorm().mean();
}

}  // namespace sbflow
