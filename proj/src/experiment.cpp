#include "sbflow/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sbflow/analytic.hpp"

namespace sbflow {

namespace {

constexpr std::uint64_t kEvalStream = 0x6576616c;

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(10);
  os << *v;
  return os.str();
}

bool is_gaussian(const DatasetSpec& s) {
  return s.name == DatasetName::Gaussian || s.name == DatasetName::AntitheticGaussian;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open output file: " + path.string());
  os.imbue(std::locale::classic());
  return os;
}

std::filesystem::path ensure_out_dir(const ExperimentConfig& config) {
  const std::filesystem::path dir(config.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

using Clock = std::chrono::steady_clock;

// Wires step logging and periodic evaluation into a training phase.
StepHook make_step_hook(const ExperimentConfig& config, long n_steps, const PhaseOptions& options,
                        Clock::time_point start) {
  const bool use_ema = options.use_ema.value_or(config.train.sample_with_ema);
  auto local = std::make_shared<long>(0);
  return [&config, n_steps, &options, start, use_ema, local](const StepRecord& rec, const BridgeModel& model) {
    const long k = ++*local;  // steps completed in this phase
    const bool last = k == n_steps;
    const bool do_eval = last || (config.eval.eval_every > 0 && k % config.eval.eval_every == 0);
    const bool do_log = do_eval || last || k % config.eval.log_every == 0;
    MetricsRow row;
    if (do_eval) row.eval = evaluate(config, model, use_ema, eval_rng(config, model));
    if (do_log && options.metrics) {
      row.step = rec.step;
      row.phase = to_string(rec.phase);
      row.loss_fwd = rec.loss_fwd;
      row.loss_bwd = rec.loss_bwd;
      if (config.eval.record_wallclock)
        row.wallclock_s = std::chrono::duration<double>(Clock::now() - start).count();
      *options.metrics << format_metrics_row(row) << '\n';
    }
    if (do_eval && options.on_eval) return options.on_eval(rec.step, row.eval);
    return true;
  };
}

}  // namespace

std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream os;
  os << r.step << ',' << r.phase << ',' << fmt_opt(r.loss_fwd) << ',' << fmt_opt(r.loss_bwd) << ','
     << fmt_opt(r.eval.cov_hat) << ',' << fmt_opt(r.eval.w2_mean) << ',' << fmt_opt(r.eval.w2_sd) << ','
     << fmt_opt(r.eval.path_energy) << ',' << fmt_opt(r.eval.msd) << ',' << fmt_opt(r.eval.consistency_residual)
     << ',' << fmt_opt(r.wallclock_s);
  return os.str();
}

BatchSampler dataset_sampler(const DatasetSpec& spec) {
  spec.validate();
  return [spec](Eigen::Index n, RngState& rng) { return make_batch(spec, n, rng); };
}

CouplingSampler initial_coupling(const ExperimentConfig& config) {
  if (config.source.name == DatasetName::AntitheticGaussian) {
    const DatasetSpec spec = config.source;
    return [spec](Eigen::Index n, RngState& rng) { return make_coupling(spec, n, rng); };
  }
  return independent_coupling(dataset_sampler(config.source), dataset_sampler(config.target));
}

bool gaussian_problem(const ExperimentConfig& config) {
  return is_gaussian(config.source) && config.target.name == DatasetName::Gaussian;
}

RngState eval_rng(const ExperimentConfig& config, const BridgeModel& model) {
  return RngState{config.train.seed, kEvalStream, 0}.substream(static_cast<std::uint64_t>(model.step));
}

EvalMetrics evaluate(const ExperimentConfig& config, const BridgeModel& model, bool use_ema, RngState rng) {
  const EvalSettings& ev = config.eval;
  const VelocityFn field = model.field(use_ema);
  IntegratorOptions opts;
  opts.t_min = config.train.t_min;
  EvalMetrics m;

  RngState x0_rng = rng.substream(1);
  const Batch x0 = make_batch(config.source, ev.n_eval, x0_rng);
  const Batch x1_pf = pf_ode(field, x0, ev.pf_steps, opts).terminal();
  m.path_energy = path_energy(field, x0, ev.energy_steps, opts.t_min);
  m.msd = msd(x0, x1_pf);

  if (gaussian_problem(config)) {
    RngState sde_rng = rng.substream(2);
    const Batch x1_sde = euler_maruyama(field, Direction::Forward, x0, ev.sde_steps, config.train.eps, sde_rng, opts).terminal();
    m.cov_hat = empirical_cov(x0, x1_sde);

    const double s0 = config.source.sigma;
    const double s1 = config.target.sigma;
    const CouplingMoments eot{s0 * s0, s1 * s1, gaussian_eot_cross_cov(s0, s1, config.train.eps)};
    const double t = ev.residual_t;
    const double var_t = (1 - t) * (1 - t) * eot.c00 + t * t * eot.c11 + 2 * t * (1 - t) * eot.c01 +
                         config.train.eps * t * (1 - t);
    RngState probe_rng = rng.substream(3);
    const Batch probes = std::sqrt(var_t) * sample_std_normal(probe_rng, ev.n_eval, config.source.dim);
    m.consistency_residual =
        consistency_residual(field, t, probes, config.train.eps, gaussian_bridge_score(eot, config.train.eps));
  }

  if (ev.w2_repeats > 0) {
    std::vector<double> w;
    for (int r = 0; r < ev.w2_repeats; ++r) {
      RngState rr = rng.substream(100 + static_cast<std::uint64_t>(r));
      const Batch src = make_batch(config.source, ev.w2_points, rr);
      const Batch ref = make_batch(config.target, ev.w2_points, rr);
      w.push_back(wasserstein2(pf_ode(field, src, ev.pf_steps, opts).terminal(), ref));
    }
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (double v : w) var += (v - mean) * (v - mean);
    m.w2_mean = mean;
    m.w2_sd = w.size() > 1 ? std::sqrt(var / static_cast<double>(w.size() - 1)) : 0.0;
  }
  return m;
}

BridgeModel run_pretrain(const ExperimentConfig& config, BridgeModel model, const PhaseOptions& options) {
  config.validate();
  TrainHooks hooks;
  hooks.on_step = make_step_hook(config, config.train.n_pretrain, options, Clock::now());
  return pretrain(config.train, std::move(model), initial_coupling(config), hooks);
}

BridgeModel run_finetune(const ExperimentConfig& config, BridgeModel model, const PhaseOptions& options) {
  config.validate();
  TrainHooks hooks;
  hooks.on_step = make_step_hook(config, config.train.n_finetune, options, Clock::now());
  const BatchSampler pi0 = dataset_sampler(config.source);
  const BatchSampler pi1 = dataset_sampler(config.target);
  if (config.finetune_mode == FinetuneMode::Iterative)
    return finetune_iterative(config.train, std::move(model), config.swap_every, pi0, pi1, hooks);
  return finetune_online(config.train, std::move(model), pi0, pi1, hooks);
}

ExperimentConfig resolve_config(const CliOptions& options) {
  if (options.config_path.empty()) throw std::invalid_argument("--config is required");
  ExperimentConfig cfg = load_config(options.config_path);
  if (options.seed) cfg.train.seed = *options.seed;
  if (options.out_dir) cfg.out_dir = *options.out_dir;
  if (options.use_ema) cfg.train.sample_with_ema = *options.use_ema;
  cfg.validate();
  return cfg;
}

void cmd_pretrain(const CliOptions& options) {
  const ExperimentConfig cfg = resolve_config(options);
  const auto dir = ensure_out_dir(cfg);
  open_out(dir / "config.txt") << serialize_config(cfg);
  std::ofstream csv = open_out(dir / "metrics_pretrain.csv");
  csv << kMetricsHeader << '\n';
  PhaseOptions po;
  po.metrics = &csv;
  BridgeModel model = init_model(cfg.net, cfg.two_networks, cfg.train, cfg.precond);
  model = run_pretrain(cfg, std::move(model), po);
  save_model(options.checkpoint.value_or((dir / "pretrain.ckpt").string()), model);
}

void cmd_finetune(const CliOptions& options) {
  if (!options.checkpoint) throw std::invalid_argument("finetune requires --checkpoint (a pretrain checkpoint)");
  const ExperimentConfig cfg = resolve_config(options);
  BridgeModel model = load_model(*options.checkpoint);
  if (model.forward.params.spec().input_dim != cfg.source.dim || model.two_networks() != cfg.two_networks)
    throw std::invalid_argument("checkpoint does not match the configured network");
  const auto dir = ensure_out_dir(cfg);
  open_out(dir / "config.txt") << serialize_config(cfg);
  std::ofstream csv = open_out(dir / "metrics_finetune.csv");
  csv << kMetricsHeader << '\n';
  PhaseOptions po;
  po.metrics = &csv;
  model = run_finetune(cfg, std::move(model), po);
  save_model((dir / "finetune.ckpt").string(), model);
}

void cmd_eval(const CliOptions& options) {
  if (!options.checkpoint) throw std::invalid_argument("eval requires --checkpoint");
  const ExperimentConfig cfg = resolve_config(options);
  const BridgeModel model = load_model(*options.checkpoint);
  const auto dir = ensure_out_dir(cfg);
  std::ofstream csv = open_out(dir / "eval.csv");
  csv << kMetricsHeader << '\n';

  MetricsRow row;
  row.step = model.step;
  row.phase = "eval";
  row.eval = evaluate(cfg, model, cfg.train.sample_with_ema, eval_rng(cfg, model));
  csv << format_metrics_row(row) << '\n';

  // Metric self-check: W2 of a cloud with itself.
  RngState rng = eval_rng(cfg, model).substream(999);
  const Batch a = make_batch(cfg.target, std::min<Eigen::Index>(cfg.eval.w2_points, kW2MaxPoints), rng);
  MetricsRow self;
  self.step = model.step;
  self.phase = "w2_self_check";
  self.eval.w2_mean = wasserstein2(a, a);
  csv << format_metrics_row(self) << '\n';
}

void cmd_gaussian_analytic(const CliOptions& options) {
  const ExperimentConfig cfg = resolve_config(options);
  const AnalyticSettings& a = cfg.analytic;
  const auto dir = ensure_out_dir(cfg);

  std::ofstream eot = open_out(dir / "gaussian_eot.csv");
  eot.precision(12);
  eot << "sigma0,sigma1,eps,closed_form,sinkhorn\n";
  for (double eps : a.eps_list) {
    const double hw = 6.0 * std::max(a.sigma0, a.sigma1);
    eot << a.sigma0 << ',' << a.sigma1 << ',' << eps << ',' << gaussian_eot_cross_cov(a.sigma0, a.sigma1, eps) << ','
        << sinkhorn_1d_oracle(a.sigma0, a.sigma1, eps, hw, a.sinkhorn_points) << '\n';
  }

  std::ofstream rec = open_out(dir / "gaussian_recursion.csv");
  rec.precision(12);
  rec << "mode,eps_err,n,c00,c11,c01,abs_c11_minus_1,abs_c01_minus_fixed\n";
  const double fixed = std::sqrt(2.0) - 1.0;
  for (IterMode mode : a.modes) {
    for (double err : a.eps_err_list) {
      const std::vector<CouplingMoments> rows = gaussian_recursion(mode, err, a.n_iters);
      for (int n = 1; n <= a.n_iters; ++n) {
        const CouplingMoments& c = rows[n - 1];
        rec << to_string(mode) << ',' << err << ',' << n << ',' << c.c00 << ',' << c.c11 << ',' << c.c01 << ','
            << std::abs(c.c11 - 1.0) << ',' << std::abs(c.c01 - fixed) << '\n';
      }
    }
  }
}

void cmd_toy_flow(const CliOptions& options) {
  const ExperimentConfig cfg = resolve_config(options);
  const ToySettings& t = cfg.toy;
  const auto dir = ensure_out_dir(cfg);

  std::ofstream flow = open_out(dir / "toy_flow.csv");
  flow.precision(17);
  flow << "t,x,y\n";
  const long n_points = std::lround(t.t_max / t.dt);
  for (long k = 0; k <= n_points; ++k) {
    const double time = k * t.dt;
    const ToyState p = toy_flow(t.x0, t.y0, time);
    flow << time << ',' << p.x << ',' << p.y << '\n';
  }

  std::ofstream it = open_out(dir / "toy_iterates.csv");
  it.precision(17);
  it << "alpha,n,x,y\n";
  for (double alpha : t.alpha_list) {
    for (int n = 0; n <= t.n; ++n) {
      const ToyState p = toy_iterate(t.x0, t.y0, alpha, n);
      it << alpha << ',' << n << ',' << p.x << ',' << p.y << '\n';
    }
  }
}

int run_command(const std::string& name, const CliOptions& options, std::ostream& err) {
  try {
    if (name == "pretrain") cmd_pretrain(options);
    else if (name == "finetune") cmd_finetune(options);
    else if (name == "eval") cmd_eval(options);
    else if (name == "gaussian-analytic") cmd_gaussian_analytic(options);
    else if (name == "toy-flow") cmd_toy_flow(options);
    else throw std::invalid_argument("unknown command: " + name);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace sbflow
