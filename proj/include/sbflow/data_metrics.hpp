#pragma once

#include <string>

#include "sbflow/numerics.hpp"

namespace sbflow {

enum class DatasetName { Gaussian, EightGaussians, Moons, SCurve, AntitheticGaussian };

DatasetName parse_dataset_name(const std::string& name);
std::string to_string(DatasetName name);

struct DatasetSpec {
  DatasetName name = DatasetName::Gaussian;
  int dim = 2;
  double sigma = 1.0;         // gaussian, antithetic_gaussian
  double noise = 0.05;        // moons, scurve (before standardisation)
  double radius = 5.0;        // eight_gaussians ring radius
  double component_sd = 0.316227766016838;  // eight_gaussians, sqrt(0.1)

  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

/// n i.i.d. samples. For antithetic_gaussian this is the X0 marginal.
Batch make_batch(const DatasetSpec& spec, Eigen::Index n, RngState& rng);

/// n coupled pairs. antithetic_gaussian gives (X0, -X0); any other family
/// gives (X, X) from a single draw and is rarely what you want.
CouplingBatch make_coupling(const DatasetSpec& spec, Eigen::Index n, RngState& rng);

/// (1/(n d)) sum over rows and coordinates of a * b.
double empirical_cov(const Batch& a, const Batch& b);

/// Largest point cloud accepted by wasserstein2.
inline constexpr Eigen::Index kW2MaxPoints = 1024;

/// Exact empirical 2-Wasserstein distance between equal-size clouds.
double wasserstein2(const Batch& a, const Batch& b);

/// (1/n) sum_i ||a_i - b_i||^2 / d.
double msd(const Batch& a, const Batch& b);

}  // namespace sbflow
