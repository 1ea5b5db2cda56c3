#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

#include "sbflow/bridge.hpp"
#include "sbflow/net.hpp"
#include "sbflow/sampler.hpp"

namespace sbflow {

struct TrainConfig {
  double eps = 0.25;
  int batch_size = 128;  // B; each loss direction sees B/2 rows
  long n_pretrain = 10000;
  long n_finetune = 20000;
  double lr_pretrain = 1e-3;
  double lr_finetune = 1e-4;
  long warmup_steps = 0;  // linear warmup at the start of each phase
  double ema_decay = 0.999;
  bool sample_with_ema = true;
  int n_em_steps = 100;
  double t_min = 1e-4;
  double grad_clip = 1.0;
  long replay_capacity = 0;  // 0 disables the replay buffer
  std::uint64_t seed = 0;

  void validate() const;
  int half_batch() const { return batch_size / 2; }
  bool operator==(const TrainConfig&) const = default;
};

/// Forward network (or the shared direction-conditioned network) plus an
/// optional separate backward network, with the training RNG position.
struct BridgeModel {
  TrainState forward;
  std::optional<TrainState> backward;
  PrecondSettings precond;
  RngState rng;
  long step = 0;  // training steps taken across all phases

  bool two_networks() const { return backward.has_value(); }
  LossNetworks loss_networks() const;
  /// Drift for sampling. The model must outlive the returned function.
  VelocityFn field(bool use_ema) const;
};

/// Freshly initialised model. two_networks selects separate unidirectional
/// forward and backward networks; otherwise spec.bidirectional must hold.
BridgeModel init_model(const NetSpec& spec, bool two_networks, const TrainConfig& config,
                       const PrecondSettings& precond = {});

using BatchSampler = std::function<Batch(Eigen::Index, RngState&)>;
using CouplingSampler = std::function<CouplingBatch(Eigen::Index, RngState&)>;

CouplingSampler independent_coupling(BatchSampler pi0, BatchSampler pi1);

/// Couplings feeding one gradient step: fwd trains l_fwd, bwd trains l_bwd.
struct StepPairs {
  CouplingBatch fwd;
  CouplingBatch bwd;
};

/// Produces the pairs of one step from a dedicated RNG stream.
using PairSource = std::function<StepPairs(const BridgeModel&, RngState&)>;

/// Pretraining pairs: B draws from the initial coupling, the first half for
/// l_fwd and the second half for l_bwd.
PairSource pretrain_pairs(const TrainConfig& config, CouplingSampler initial);

/// (X0^, X1) for l_fwd and (X0, X1^): the model-generated endpoint never
/// enters the target side of a loss.
StepPairs pair_with_true_targets(const Batch& x0, const Batch& x1, Batch x0_hat, Batch x1_hat);

/// Online finetuning pairs: b draws from each marginal, X1^ from the forward
/// SDE started at X0 and X0^ from the backward SDE started at X1.
PairSource online_pairs(const TrainConfig& config, BatchSampler pi0, BatchSampler pi1);

enum class Phase { Pretrain, Finetune, FinetuneForward, FinetuneBackward };
const char* to_string(Phase phase);

struct StepRecord {
  long step = 0;
  Phase phase = Phase::Pretrain;
  double loss_fwd = 0.0;
  double loss_bwd = 0.0;
};

/// Called after every step; returning false stops the phase early.
using StepHook = std::function<bool(const StepRecord&, const BridgeModel&)>;

struct TrainHooks {
  StepHook on_step;
  /// Replaces the pair source of a finetuning phase (test hook).
  PairSource pair_override;
};

BridgeModel pretrain(const TrainConfig& config, BridgeModel model, const CouplingSampler& initial,
                     const TrainHooks& hooks = {});

/// Online finetuning. Resets the optimizer state first.
BridgeModel finetune_online(const TrainConfig& config, BridgeModel model, const BatchSampler& pi0,
                            const BatchSampler& pi1, const TrainHooks& hooks = {});

/// Alternating finetuning: swap_every steps of l_fwd on backward-generated
/// pairs, then swap_every steps of l_bwd on forward-generated pairs, and so on.
BridgeModel finetune_iterative(const TrainConfig& config, BridgeModel model, long swap_every,
                               const BatchSampler& pi0, const BatchSampler& pi1, const TrainHooks& hooks = {});

/// One optimisation step on the given pairs; returns the loss record.
StepRecord train_step(const TrainConfig& config, BridgeModel& model, const StepPairs& pairs, double lr,
                      RngState& noise_rng, Phase phase);

// Replay buffer ---------------------------------------------------------------

class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  ReplayBuffer(long capacity, Eigen::Index dim);

  long capacity() const { return capacity_; }
  long size() const { return size_; }
  Eigen::Index dim() const { return x0_.cols(); }

  /// Inserts pairs in order, evicting the oldest when full.
  void add(const CouplingBatch& pairs);
  /// k stored pairs drawn uniformly without replacement.
  CouplingBatch sample(long k, RngState& rng) const;
  /// Stored pairs from oldest to newest.
  CouplingBatch contents() const;

 private:
  long capacity_ = 0;
  long size_ = 0;
  long head_ = 0;  // next write position
  Batch x0_;
  Batch x1_;
};

ReplayBuffer buffer_add(ReplayBuffer buf, const CouplingBatch& pairs, RngState& rng);
CouplingBatch buffer_sample(const ReplayBuffer& buf, long k, RngState& rng);

// Checkpoints -----------------------------------------------------------------

void save_model(std::ostream& os, const BridgeModel& model);
BridgeModel load_model(std::istream& is);
void save_model(const std::string& path, const BridgeModel& model);
BridgeModel load_model(const std::string& path);

}  // namespace sbflow
