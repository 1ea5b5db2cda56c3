#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sbflow/analytic.hpp"
#include "sbflow/bridge.hpp"
#include "sbflow/data_metrics.hpp"
#include "sbflow/net.hpp"
#include "sbflow/train.hpp"

namespace sbflow {

struct EvalSettings {
  long eval_every = 500;   // 0 evaluates only at the end of each phase
  long log_every = 100;    // metrics row cadence; the last step is always written
  int n_eval = 2000;       // samples for covariance, path energy, MSD, residual
  int w2_repeats = 5;      // 0 disables W2
  int w2_points = 1000;
  int pf_steps = 20;
  int energy_steps = 100;  // path-energy quadrature
  int sde_steps = 100;
  double residual_t = 0.5;
  bool record_wallclock = false;

  void validate() const;
  bool operator==(const EvalSettings&) const = default;
};

struct AnalyticSettings {
  double sigma0 = 1.0;
  double sigma1 = 1.0;
  std::vector<double> eps_list{0.25};
  std::vector<IterMode> modes{IterMode::ForwardForward, IterMode::ForwardBackward};
  int n_iters = 200;
  std::vector<double> eps_err_list{0.0, 0.2};
  int sinkhorn_points = 600;

  bool operator==(const AnalyticSettings&) const = default;
};

struct ToySettings {
  double x0 = 1.0;
  double y0 = 0.5;
  std::vector<double> alpha_list{0.1, 0.5, 1.0};
  int n = 60;
  double dt = 0.01;
  double t_max = 10.0;

  bool operator==(const ToySettings&) const = default;
};

enum class FinetuneMode { Online, Iterative };

struct ExperimentConfig {
  std::string label = "run";
  std::string out_dir = "out";
  DatasetSpec source;
  DatasetSpec target;
  NetSpec net;
  bool two_networks = false;
  TrainConfig train;
  PrecondSettings precond;
  FinetuneMode finetune_mode = FinetuneMode::Online;
  long swap_every = 2500;
  EvalSettings eval;
  AnalyticSettings analytic;
  ToySettings toy;

  /// Checks every section and cross-section consistency.
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Flat "key = value" text with [section] headers; '#' starts a comment.
/// Unknown sections or keys are errors. Missing keys keep their defaults.
ExperimentConfig parse_config(std::istream& is);
ExperimentConfig load_config(const std::string& path);
/// Every key in a fixed order with round-trip-exact numbers.
std::string serialize_config(const ExperimentConfig& config);

}  // namespace sbflow
