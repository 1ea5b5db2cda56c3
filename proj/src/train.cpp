#include "sbflow/train.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace sbflow {

namespace {

constexpr std::uint64_t kTrainStream = 0x7472616e;  // per-model training stream id
constexpr std::uint64_t kPairTag = 1;
constexpr std::uint64_t kNoiseTag = 2;

double warmup_lr(double lr, long k, long warmup) {
  if (warmup <= 0 || k >= warmup) return lr;
  return lr * static_cast<double>(k + 1) / static_cast<double>(warmup);
}

Batch run_sde(const TrainConfig& config, const VelocityFn& field, Direction dir, const Batch& x, RngState rng) {
  IntegratorOptions opts;
  opts.t_min = config.t_min;
  return euler_maruyama(field, dir, x, config.n_em_steps, config.eps, rng, opts).terminal();
}

void scale_values(VectorFieldParams& p, double factor) {
  for (double& v : p.values()) v *= factor;
}

// Steps the phase loop shared by every training mode.
template <class SourceFor>
BridgeModel run_phase(const TrainConfig& config, BridgeModel model, long n_steps, double lr, const StepHook& hook,
                      SourceFor&& source_for) {
  for (long k = 0; k < n_steps; ++k) {
    const RngState step_rng = model.rng.substream(static_cast<std::uint64_t>(model.step));
    RngState pair_rng = step_rng.substream(kPairTag);
    RngState noise_rng = step_rng.substream(kNoiseTag);
    auto [phase, source] = source_for(k);
    StepPairs pairs;
    try {
      pairs = source(model, pair_rng);
    } catch (const NumericError& e) {
      throw NumericError("SDE sampling diverged at train step " + std::to_string(model.step) + ": " + e.what(),
                         model.step);
    }
    const StepRecord rec = train_step(config, model, pairs, warmup_lr(lr, k, config.warmup_steps), noise_rng, phase);
    if (hook && !hook(rec, model)) break;
  }
  return model;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(eps > 0.0)) throw std::invalid_argument("TrainConfig: eps must be positive");
  if (batch_size < 2 || batch_size % 2 != 0) throw std::invalid_argument("TrainConfig: batch_size must be even and >= 2");
  if (n_pretrain < 0 || n_finetune < 0) throw std::invalid_argument("TrainConfig: step counts must be non-negative");
  if (!(lr_pretrain > 0.0) || !(lr_finetune > 0.0)) throw std::invalid_argument("TrainConfig: learning rates must be positive");
  if (warmup_steps < 0) throw std::invalid_argument("TrainConfig: warmup_steps must be non-negative");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw std::invalid_argument("TrainConfig: ema_decay must lie in (0, 1)");
  if (n_em_steps < 1) throw std::invalid_argument("TrainConfig: n_em_steps must be >= 1");
  if (!(t_min > 0.0 && t_min < 0.5)) throw std::invalid_argument("TrainConfig: t_min must lie in (0, 0.5)");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("TrainConfig: grad_clip must be positive");
  if (replay_capacity < 0) throw std::invalid_argument("TrainConfig: replay_capacity must be non-negative");
  if (replay_capacity > 0 && replay_capacity < half_batch())
    throw std::invalid_argument("TrainConfig: replay_capacity must hold at least B/2 pairs");
}

LossNetworks BridgeModel::loss_networks() const {
  return LossNetworks{&forward.params, backward ? &backward->params : nullptr};
}

VelocityFn BridgeModel::field(bool use_ema) const {
  const VectorFieldParams& f = use_ema ? forward.ema_params : forward.params;
  const VectorFieldParams* b = nullptr;
  if (backward) b = use_ema ? &backward->ema_params : &backward->params;
  return model_velocity(f, b, precond);
}

BridgeModel init_model(const NetSpec& spec, bool two_networks, const TrainConfig& config,
                       const PrecondSettings& precond) {
  config.validate();
  BridgeModel model;
  model.rng = RngState{config.seed, kTrainStream, 0};
  model.precond = precond;
  RngState init_rng = model.rng.substream(0xf00d);
  if (two_networks) {
    NetSpec uni = spec;
    uni.bidirectional = false;
    model.forward = TrainState::from_params(init_vector_field(uni, init_rng), config.ema_decay);
    model.backward = TrainState::from_params(init_vector_field(uni, init_rng), config.ema_decay);
  } else {
    if (!spec.bidirectional) throw std::invalid_argument("init_model: a single network must be bidirectional");
    model.forward = TrainState::from_params(init_vector_field(spec, init_rng), config.ema_decay);
  }
  return model;
}

CouplingSampler independent_coupling(BatchSampler pi0, BatchSampler pi1) {
  return [pi0 = std::move(pi0), pi1 = std::move(pi1)](Eigen::Index n, RngState& rng) {
    CouplingBatch c;
    c.x0 = pi0(n, rng);
    c.x1 = pi1(n, rng);
    return c;
  };
}

PairSource pretrain_pairs(const TrainConfig& config, CouplingSampler initial) {
  const Eigen::Index b = config.half_batch();
  return [b, initial = std::move(initial)](const BridgeModel&, RngState& rng) {
    const CouplingBatch c = initial(2 * b, rng);
    if (c.rows() != 2 * b) throw std::invalid_argument("pretrain: coupling sampler returned wrong batch size");
    StepPairs p;
    p.fwd.x0 = c.x0.topRows(b);
    p.fwd.x1 = c.x1.topRows(b);
    p.bwd.x0 = c.x0.bottomRows(b);
    p.bwd.x1 = c.x1.bottomRows(b);
    return p;
  };
}

StepPairs pair_with_true_targets(const Batch& x0, const Batch& x1, Batch x0_hat, Batch x1_hat) {
  StepPairs p;
  p.fwd.x0 = std::move(x0_hat);
  p.fwd.x1 = x1;
  p.bwd.x0 = x0;
  p.bwd.x1 = std::move(x1_hat);
  return p;
}

PairSource online_pairs(const TrainConfig& config, BatchSampler pi0, BatchSampler pi1) {
  return [config, pi0 = std::move(pi0), pi1 = std::move(pi1)](const BridgeModel& m, RngState& rng) {
    const Eigen::Index b = config.half_batch();
    RngState r0 = rng.substream(10);
    RngState r1 = rng.substream(11);
    const Batch x0 = pi0(b, r0);
    const Batch x1 = pi1(b, r1);
    const VelocityFn field = m.field(config.sample_with_ema);
    Batch x1_hat = run_sde(config, field, Direction::Forward, x0, rng.substream(12));
    Batch x0_hat = run_sde(config, field, Direction::Backward, x1, rng.substream(13));
    return pair_with_true_targets(x0, x1, std::move(x0_hat), std::move(x1_hat));
  };
}

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::Pretrain: return "pretrain";
    case Phase::Finetune: return "finetune";
    case Phase::FinetuneForward: return "finetune_fwd";
    case Phase::FinetuneBackward: return "finetune_bwd";
  }
  return "unknown";
}

StepRecord train_step(const TrainConfig& config, BridgeModel& model, const StepPairs& pairs, double lr,
                      RngState& noise_rng, Phase phase) {
  const Eigen::Index d = pairs.fwd.rows() > 0 ? pairs.fwd.dim() : pairs.bwd.dim();
  const LossDraws draws = draw_loss_noise(noise_rng, pairs.fwd.rows(), pairs.bwd.rows(), d, config.t_min);
  BridgeLoss loss;
  try {
    loss = bidirectional_empirical_loss(model.loss_networks(), pairs.fwd, pairs.bwd, draws, config.eps, model.precond);
  } catch (const NumericError& e) {
    throw NumericError("non-finite loss at train step " + std::to_string(model.step) + ": " + e.what(), model.step);
  }
  if (!std::isfinite(loss.loss)) throw NumericError("non-finite loss at train step " + std::to_string(model.step), model.step);

  // Global-norm clipping across every trained array.
  double sq = global_norm(loss.grads);
  sq *= sq;
  if (loss.grads_bwd) sq += std::pow(global_norm(*loss.grads_bwd), 2);
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient at train step " + std::to_string(model.step), model.step);
  if (norm > config.grad_clip) {
    const double s = config.grad_clip / norm;
    scale_values(loss.grads, s);
    if (loss.grads_bwd) scale_values(*loss.grads_bwd, s);
  }

  const bool update_fwd = !model.two_networks() || pairs.fwd.rows() > 0;
  const bool update_bwd = model.two_networks() && pairs.bwd.rows() > 0;
  if (update_fwd) {
    adam_step(model.forward, loss.grads, lr);
    ema_update(model.forward);
  }
  if (update_bwd) {
    adam_step(*model.backward, *loss.grads_bwd, lr);
    ema_update(*model.backward);
  }

  StepRecord rec;
  rec.step = model.step++;
  rec.phase = phase;
  rec.loss_fwd = loss.loss_fwd;
  rec.loss_bwd = loss.loss_bwd;
  return rec;
}

BridgeModel pretrain(const TrainConfig& config, BridgeModel model, const CouplingSampler& initial,
                     const TrainHooks& hooks) {
  config.validate();
  const PairSource source = pretrain_pairs(config, initial);
  return run_phase(config, std::move(model), config.n_pretrain, config.lr_pretrain, hooks.on_step,
                   [&](long) { return std::pair<Phase, const PairSource&>(Phase::Pretrain, source); });
}

BridgeModel finetune_online(const TrainConfig& config, BridgeModel model, const BatchSampler& pi0,
                            const BatchSampler& pi1, const TrainHooks& hooks) {
  config.validate();
  if (config.n_finetune == 0) return model;
  model.forward.reset_optimizer();
  if (model.backward) model.backward->reset_optimizer();

  PairSource source = hooks.pair_override ? hooks.pair_override : online_pairs(config, pi0, pi1);
  if (config.replay_capacity > 0) {
    // Each direction keeps its own buffer of freshly generated pairs.
    const Eigen::Index dim = model.forward.params.spec().input_dim;
    auto fwd_buf = std::make_shared<ReplayBuffer>(config.replay_capacity, dim);
    auto bwd_buf = std::make_shared<ReplayBuffer>(config.replay_capacity, dim);
    const long b = config.half_batch();
    source = [inner = std::move(source), fwd_buf, bwd_buf, b](const BridgeModel& m, RngState& rng) {
      const StepPairs fresh = inner(m, rng);
      fwd_buf->add(fresh.fwd);
      bwd_buf->add(fresh.bwd);
      RngState sample_rng = rng.substream(20);
      StepPairs p;
      p.fwd = fwd_buf->sample(b, sample_rng);
      p.bwd = bwd_buf->sample(b, sample_rng);
      return p;
    };
  }
  return run_phase(config, std::move(model), config.n_finetune, config.lr_finetune, hooks.on_step,
                   [&](long) { return std::pair<Phase, const PairSource&>(Phase::Finetune, source); });
}

BridgeModel finetune_iterative(const TrainConfig& config, BridgeModel model, long swap_every,
                               const BatchSampler& pi0, const BatchSampler& pi1, const TrainHooks& hooks) {
  config.validate();
  if (swap_every < 1) throw std::invalid_argument("finetune_iterative: swap_every must be >= 1");
  if (config.n_finetune == 0) return model;
  model.forward.reset_optimizer();
  if (model.backward) model.backward->reset_optimizer();

  const Eigen::Index b = config.batch_size;  // the whole batch serves the active direction
  const PairSource forward_phase = [&](const BridgeModel& m, RngState& rng) {
    RngState r1 = rng.substream(11);
    const Batch x1 = pi1(b, r1);
    StepPairs p;
    p.fwd.x0 = run_sde(config, m.field(config.sample_with_ema), Direction::Backward, x1, rng.substream(13));
    p.fwd.x1 = x1;
    return p;
  };
  const PairSource backward_phase = [&](const BridgeModel& m, RngState& rng) {
    RngState r0 = rng.substream(10);
    const Batch x0 = pi0(b, r0);
    StepPairs p;
    p.bwd.x0 = x0;
    p.bwd.x1 = run_sde(config, m.field(config.sample_with_ema), Direction::Forward, x0, rng.substream(12));
    return p;
  };
  return run_phase(config, std::move(model), config.n_finetune, config.lr_finetune, hooks.on_step, [&](long k) {
    const bool fwd = (k / swap_every) % 2 == 0;
    return std::pair<Phase, const PairSource&>(fwd ? Phase::FinetuneForward : Phase::FinetuneBackward,
                                               fwd ? forward_phase : backward_phase);
  });
}

ReplayBuffer::ReplayBuffer(long capacity, Eigen::Index dim) : capacity_(capacity), x0_(capacity, dim), x1_(capacity, dim) {
  if (capacity < 1) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
  if (dim < 1) throw std::invalid_argument("ReplayBuffer: dim must be >= 1");
}

void ReplayBuffer::add(const CouplingBatch& pairs) {
  if (pairs.x0.rows() != pairs.x1.rows()) throw std::invalid_argument("ReplayBuffer: unpaired rows");
  if (pairs.rows() > 0 && (pairs.x0.cols() != dim() || pairs.x1.cols() != dim()))
    throw std::invalid_argument("ReplayBuffer: dimension mismatch");
  for (Eigen::Index i = 0; i < pairs.rows(); ++i) {
    x0_.row(head_) = pairs.x0.row(i);
    x1_.row(head_) = pairs.x1.row(i);
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }
}

CouplingBatch ReplayBuffer::sample(long k, RngState& rng) const {
  if (k < 0 || k > size_) throw std::invalid_argument("ReplayBuffer: not enough stored pairs to sample");
  const std::vector<Eigen::Index> perm = random_permutation(rng, size_);
  const long oldest = size_ < capacity_ ? 0 : head_;
  CouplingBatch out{Batch(k, dim()), Batch(k, dim())};
  for (long i = 0; i < k; ++i) {
    const long slot = (oldest + perm[i]) % capacity_;
    out.x0.row(i) = x0_.row(slot);
    out.x1.row(i) = x1_.row(slot);
  }
  return out;
}

CouplingBatch ReplayBuffer::contents() const {
  const long oldest = size_ < capacity_ ? 0 : head_;
  CouplingBatch out{Batch(size_, dim()), Batch(size_, dim())};
  for (long i = 0; i < size_; ++i) {
    out.x0.row(i) = x0_.row((oldest + i) % capacity_);
    out.x1.row(i) = x1_.row((oldest + i) % capacity_);
  }
  return out;
}

ReplayBuffer buffer_add(ReplayBuffer buf, const CouplingBatch& pairs, RngState&) {
  buf.add(pairs);
  return buf;
}

CouplingBatch buffer_sample(const ReplayBuffer& buf, long k, RngState& rng) { return buf.sample(k, rng); }

}  // namespace sbflow
