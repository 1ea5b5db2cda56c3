#include "sbflow/numerics.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace sbflow {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

std::array<std::uint32_t, 4> next_block(RngState& rng) {
  std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(rng.counter), static_cast<std::uint32_t>(rng.counter >> 32),
      static_cast<std::uint32_t>(rng.stream_id), static_cast<std::uint32_t>(rng.stream_id >> 32)};
  std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(rng.seed),
                                      static_cast<std::uint32_t>(rng.seed >> 32)};
  ++rng.counter;
  return philox4x32(ctr, key);
}

double to_open_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

RngState RngState::substream(std::uint64_t tag) const {
  return RngState{seed, splitmix64(stream_id ^ splitmix64(tag + 0x5851F42D4C957F2Dull)), 0};
}

std::uint64_t next_u64(RngState& rng) {
  const auto b = next_block(rng);
  return (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
}

double next_uniform(RngState& rng) { return to_open_unit(next_u64(rng)); }

Batch sample_std_normal(RngState& rng, Eigen::Index n, Eigen::Index d) {
  if (n < 1 || d < 1) throw std::invalid_argument("sample_std_normal: n and d must be >= 1");
  Batch out(n, d);
  double* data = out.data();
  const Eigen::Index total = n * d;
  // Box-Muller: one Philox block yields two 53-bit uniforms, hence two normals.
  for (Eigen::Index i = 0; i < total; i += 2) {
    const auto b = next_block(rng);
    const double u1 = to_open_unit((static_cast<std::uint64_t>(b[0]) << 32) | b[1]);
    const double u2 = to_open_unit((static_cast<std::uint64_t>(b[2]) << 32) | b[3]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    data[i] = r * std::cos(theta);
    if (i + 1 < total) data[i + 1] = r * std::sin(theta);
  }
  return out;
}

Vec sample_uniform(RngState& rng, Eigen::Index n, double lo, double hi) {
  Vec out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = lo + (hi - lo) * next_uniform(rng);
  return out;
}

std::vector<Eigen::Index> random_permutation(RngState& rng, Eigen::Index n) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(next_u64(rng) % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

double quadrature(const std::function<double(double)>& f, double a, double b, int n_panels) {
  if (n_panels < 2 || n_panels % 2 != 0)
    throw std::invalid_argument("quadrature: n_panels must be even and >= 2");
  const double h = (b - a) / n_panels;
  double odd = 0.0;
  double even = 0.0;
  auto eval = [&](double x) {
    const double v = f(x);
    if (!std::isfinite(v)) throw NumericError("integrand not finite");
    return v;
  };
  const double ends = eval(a) + eval(b);
  for (int i = 1; i < n_panels; ++i) {
    const double v = eval(a + i * h);
    if (i % 2 == 1)
      odd += v;
    else
      even += v;
  }
  return h / 3.0 * (ends + 4.0 * odd + 2.0 * even);
}

// Shortest augmenting path with row/column potentials (Jonker-Volgenant
// family). Rows are inserted one at a time; each insertion runs a Dijkstra
// over reduced costs and augments along the cheapest alternating path.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<int>(cost.rows());
  if (cost.rows() != cost.cols()) throw std::invalid_argument("solve_assignment: cost must be square");
  if (n > 4096) throw std::invalid_argument("solve_assignment: n exceeds 4096");
  if (!cost.allFinite()) throw std::invalid_argument("solve_assignment: cost must be finite");
  if (n == 0) return {};

  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based bookkeeping; column 0 is the virtual root.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> match_col(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);

  for (int i = 1; i <= n; ++i) {
    match_col[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = match_col[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != 0);
    do {
      const int j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> sigma(n);
  for (int j = 1; j <= n; ++j) sigma[match_col[j] - 1] = j - 1;
  return sigma;
}

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& sigma) {
  double total = 0.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) total += cost(static_cast<Eigen::Index>(i), sigma[i]);
  return total;
}

void require_finite(const Batch& b, const char* what) {
  for (Eigen::Index i = 0; i < b.rows(); ++i) {
    if (!b.row(i).allFinite())
      throw NumericError(std::string(what) + ": non-finite entry in row " + std::to_string(i), i);
  }
}

}  // namespace sbflow
