#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

#include "sbflow/config.hpp"
#include "sbflow/train.hpp"

namespace sbflow {

inline constexpr const char* kMetricsHeader =
    "step,phase,loss_fwd,loss_bwd,cov_hat,w2_mean,w2_sd,path_energy,msd,consistency_residual,wallclock_s";

struct EvalMetrics {
  std::optional<double> cov_hat;
  std::optional<double> w2_mean;
  std::optional<double> w2_sd;
  std::optional<double> path_energy;
  std::optional<double> msd;
  std::optional<double> consistency_residual;
};

struct MetricsRow {
  long step = 0;
  std::string phase;
  std::optional<double> loss_fwd;
  std::optional<double> loss_bwd;
  EvalMetrics eval;
  std::optional<double> wallclock_s;
};

/// One CSV line in kMetricsHeader order; absent values are empty fields.
std::string format_metrics_row(const MetricsRow& row);

BatchSampler dataset_sampler(const DatasetSpec& spec);
/// Antithetic pairs when the source is antithetic_gaussian, independent otherwise.
CouplingSampler initial_coupling(const ExperimentConfig& config);

/// True when both endpoints are centred isotropic Gaussians, so the
/// covariance and consistency metrics have closed-form references.
bool gaussian_problem(const ExperimentConfig& config);

/// Evaluation metrics. All randomness comes from rng; the model is untouched.
EvalMetrics evaluate(const ExperimentConfig& config, const BridgeModel& model, bool use_ema, RngState rng);

/// Evaluation stream used during training and by the eval command.
RngState eval_rng(const ExperimentConfig& config, const BridgeModel& model);

/// Called with every evaluation; returning false stops the phase.
using EvalHook = std::function<bool(long step, const EvalMetrics&)>;

struct PhaseOptions {
  std::ostream* metrics = nullptr;  // receives rows (no header)
  EvalHook on_eval;
  std::optional<bool> use_ema;  // overrides train.sample_with_ema for evaluation
};

BridgeModel run_pretrain(const ExperimentConfig& config, BridgeModel model, const PhaseOptions& options = {});
/// Online or iterative finetuning per config.finetune_mode.
BridgeModel run_finetune(const ExperimentConfig& config, BridgeModel model, const PhaseOptions& options = {});

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> checkpoint;
  std::optional<bool> use_ema;
};

/// Loads the config and applies command-line overrides.
ExperimentConfig resolve_config(const CliOptions& options);

void cmd_pretrain(const CliOptions& options);
void cmd_finetune(const CliOptions& options);
void cmd_eval(const CliOptions& options);
void cmd_gaussian_analytic(const CliOptions& options);
void cmd_toy_flow(const CliOptions& options);

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumeric = 2;

/// Runs a subcommand by name, reporting failures on err. Numeric failures
/// map to kExitNumeric, everything else to kExitUsage.
int run_command(const std::string& name, const CliOptions& options, std::ostream& err);

}  // namespace sbflow
