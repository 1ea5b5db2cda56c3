#include "sbflow/data_metrics.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sbflow {

namespace {

using std::numbers::pi;

// Population moments of the noiseless two-moons and S-curve (x, z)
// generators, used to standardise without depending on the batch.
constexpr double kMoonsMean[2] = {0.5, 0.25};
constexpr double kMoonsVar[2] = {0.75, 0.625 - 1.0 / pi - 0.0625};
constexpr double kSCurveMean[2] = {0.0, 0.0};
constexpr double kSCurveVar[2] = {0.5, 1.5 + 4.0 / (3.0 * pi)};

void check_same_shape(const Batch& a, const Batch& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

void standardise(Batch& x, const double mean[2], const double var[2], double noise) {
  for (int j = 0; j < 2; ++j) {
    const double sd = std::sqrt(var[j] + noise * noise);
    x.col(j) = (x.col(j).array() - mean[j]) / sd;
  }
}

}  // namespace

DatasetName parse_dataset_name(const std::string& name) {
  if (name == "gaussian") return DatasetName::Gaussian;
  if (name == "eight_gaussians" || name == "8gaussians") return DatasetName::EightGaussians;
  if (name == "moons") return DatasetName::Moons;
  if (name == "scurve") return DatasetName::SCurve;
  if (name == "antithetic_gaussian") return DatasetName::AntitheticGaussian;
  throw std::invalid_argument("unknown dataset: " + name);
}

std::string to_string(DatasetName name) {
  switch (name) {
    case DatasetName::Gaussian: return "gaussian";
    case DatasetName::EightGaussians: return "eight_gaussians";
    case DatasetName::Moons: return "moons";
    case DatasetName::SCurve: return "scurve";
    case DatasetName::AntitheticGaussian: return "antithetic_gaussian";
  }
  return "unknown";
}

void DatasetSpec::validate() const {
  if (dim < 1) throw std::invalid_argument("DatasetSpec: dim must be >= 1");
  switch (name) {
    case DatasetName::Gaussian:
    case DatasetName::AntitheticGaussian:
      if (!(sigma > 0.0)) throw std::invalid_argument("DatasetSpec: sigma must be positive");
      break;
    case DatasetName::Moons:
    case DatasetName::SCurve:
      if (dim != 2) throw std::invalid_argument("DatasetSpec: " + to_string(name) + " is two-dimensional");
      if (!(noise >= 0.0)) throw std::invalid_argument("DatasetSpec: noise must be non-negative");
      break;
    case DatasetName::EightGaussians:
      if (dim != 2) throw std::invalid_argument("DatasetSpec: eight_gaussians is two-dimensional");
      if (!(radius > 0.0) || !(component_sd > 0.0))
        throw std::invalid_argument("DatasetSpec: radius and component_sd must be positive");
      break;
  }
}

Batch make_batch(const DatasetSpec& spec, Eigen::Index n, RngState& rng) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("make_batch: n must be >= 1");
  switch (spec.name) {
    case DatasetName::Gaussian:
    case DatasetName::AntitheticGaussian:
      return spec.sigma * sample_std_normal(rng, n, spec.dim);
    case DatasetName::EightGaussians: {
      Batch x = spec.component_sd * sample_std_normal(rng, n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<int>(next_u64(rng) % 8);
        const double angle = k * pi / 4.0;
        x(i, 0) += spec.radius * std::cos(angle);
        x(i, 1) += spec.radius * std::sin(angle);
      }
      return x;
    }
    case DatasetName::Moons: {
      Batch x(n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        const bool inner = (next_u64(rng) & 1u) != 0;
        const double theta = pi * next_uniform(rng);
        x(i, 0) = inner ? 1.0 - std::cos(theta) : std::cos(theta);
        x(i, 1) = inner ? 0.5 - std::sin(theta) : std::sin(theta);
      }
      x += spec.noise * sample_std_normal(rng, n, 2);
      standardise(x, kMoonsMean, kMoonsVar, spec.noise);
      return x;
    }
    case DatasetName::SCurve: {
      Batch x(n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double t = 3.0 * pi * (next_uniform(rng) - 0.5);
        x(i, 0) = std::sin(t);
        x(i, 1) = (t > 0.0 ? 1.0 : -1.0) * (std::cos(t) - 1.0);
      }
      x += spec.noise * sample_std_normal(rng, n, 2);
      standardise(x, kSCurveMean, kSCurveVar, spec.noise);
      return x;
    }
  }
  throw std::invalid_argument("make_batch: unknown dataset");
}

CouplingBatch make_coupling(const DatasetSpec& spec, Eigen::Index n, RngState& rng) {
  CouplingBatch c;
  c.x0 = make_batch(spec, n, rng);
  c.x1 = spec.name == DatasetName::AntitheticGaussian ? Batch(-c.x0) : c.x0;
  return c;
}

double empirical_cov(const Batch& a, const Batch& b) {
  check_same_shape(a, b, "empirical_cov");
  if (a.size() == 0) throw std::invalid_argument("empirical_cov: empty batch");
  return a.cwiseProduct(b).sum() / static_cast<double>(a.size());
}

double wasserstein2(const Batch& a, const Batch& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("wasserstein2: point counts differ");
  if (a.cols() != b.cols()) throw std::invalid_argument("wasserstein2: dimensions differ");
  if (a.rows() > kW2MaxPoints) throw std::invalid_argument("wasserstein2: more than 1024 points");
  const Eigen::Index n = a.rows();
  if (n == 0) throw std::invalid_argument("wasserstein2: empty point cloud");
  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  const auto sigma = solve_assignment(cost);
  return std::sqrt(std::max(0.0, assignment_cost(cost, sigma)) / static_cast<double>(n));
}

double msd(const Batch& a, const Batch& b) {
  check_same_shape(a, b, "msd");
  if (a.size() == 0) throw std::invalid_argument("msd: empty batch");
  return (a - b).rowwise().squaredNorm().sum() / static_cast<double>(a.rows() * a.cols());
}

}  // namespace sbflow
