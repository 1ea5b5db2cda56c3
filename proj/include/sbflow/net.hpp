#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sbflow/numerics.hpp"

namespace sbflow {

/// Direction input of the bidirectional field: 1 drives pi0 -> pi1, 0 drives pi1 -> pi0.
enum class Direction : int { Backward = 0, Forward = 1 };

inline double direction_value(Direction s) { return s == Direction::Forward ? 1.0 : 0.0; }

struct NetSpec {
  int input_dim = 2;
  int hidden_units = 64;
  /// Number of dense layers in the trunk (depth 1 is a single affine map).
  int depth = 3;
  /// Width of the sinusoidal feature vector; must be even.
  int time_embed_dim = 16;
  /// Hidden and output width of each embedding MLP.
  int embed_hidden = 32;
  bool bidirectional = true;

  void validate() const;
  int trunk_input_dim() const { return input_dim + embed_hidden * (bidirectional ? 2 : 1); }
  bool operator==(const NetSpec&) const = default;
};

// Dense layer slot inside the flat parameter vector: weights (out x in,
// row-major) followed by the bias.
struct DenseSlot {
  int in = 0;
  int out = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(in) * out + out; }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using WeightMap = Eigen::Map<RowMatrix>;
using ConstWeightMap = Eigen::Map<const RowMatrix>;

/// Weights of the direction- and time-conditioned MLP. All arrays live in a
/// single flat vector in declaration order: time embedding (2 layers),
/// direction embedding (2 layers, bidirectional only), trunk (depth layers).
/// The same type carries gradients and optimizer moments.
class VectorFieldParams {
 public:
  VectorFieldParams() = default;
  /// Zero-filled parameters shaped by spec.
  explicit VectorFieldParams(const NetSpec& spec);

  const NetSpec& spec() const { return spec_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  const std::vector<DenseSlot>& slots() const { return slots_; }
  std::size_t time_slot(int k) const { return static_cast<std::size_t>(k); }
  std::size_t direction_slot(int k) const { return 2 + static_cast<std::size_t>(k); }
  std::size_t trunk_slot(int k) const {
    return (spec_.bidirectional ? 4 : 2) + static_cast<std::size_t>(k);
  }

  WeightMap weight(std::size_t slot);
  ConstWeightMap weight(std::size_t slot) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t slot);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t slot) const;

  bool same_shape(const VectorFieldParams& other) const {
    return spec_ == other.spec_ && values_.size() == other.values_.size();
  }
  bool all_finite() const;
  void set_zero();

 private:
  NetSpec spec_;
  std::vector<DenseSlot> slots_;
  std::vector<double, Eigen::aligned_allocator<double>> values_;
};

/// Variance-scaled uniform fan-in initialisation, zero biases.
VectorFieldParams init_vector_field(const NetSpec& spec, RngState& rng);

/// Sinusoidal features of a scalar in [0, 1]: (sin, cos) pairs over
/// geometrically spaced frequencies.
Eigen::RowVectorXd sinusoidal_features(double t, int dim);

/// v(s, t, x) for a shared direction and time. t must lie in [0, 1).
Batch forward(const VectorFieldParams& params, Direction direction, double t, const Batch& x);

/// v(s_i, t_i, x_i) with per-row conditioning. Direction entries are 0 or 1.
Batch forward_rows(const VectorFieldParams& params, const Vec& direction, const Vec& t,
                   const Batch& x);

/// Rows of a weighted regression onto velocity targets.
struct RegressionBatch {
  Vec direction;  // 0 or 1 per row
  Vec t;          // network time per row
  Batch x;
  Batch target;
  Vec weight;  // optional per-row weight, empty means 1
};

struct LossAndGrad {
  double loss = 0.0;
  VectorFieldParams grads;
};

/// loss = (1/n) sum_i w_i ||v(s_i, t_i, x_i) - target_i||^2 with exact
/// reverse-mode gradients.
LossAndGrad loss_and_grad(const VectorFieldParams& params, const RegressionBatch& batch);

// Optimizer stack.

struct OptState {
  VectorFieldParams m;
  VectorFieldParams v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainState {
  VectorFieldParams params;
  VectorFieldParams ema_params;
  OptState opt;
  long step = 0;
  double ema_decay = 0.999;

  /// Fresh state at step 0 with ema == params and zero moments.
  static TrainState from_params(VectorFieldParams params, double ema_decay);
  void reset_optimizer();
};

/// Bias-corrected Adam update; increments both the optimizer and state step.
void adam_step(TrainState& state, const VectorFieldParams& grads, double lr);
/// ema <- gamma ema + (1 - gamma) params.
void ema_update(TrainState& state);
double global_norm(const VectorFieldParams& grads);
/// Rescales grads in place when their global L2 norm exceeds max_norm.
void clip_grad_global_norm(VectorFieldParams& grads, double max_norm);

// Checkpoint record for one network: NetSpec plus the flat weight array.
void write_params(std::ostream& os, const VectorFieldParams& params);
VectorFieldParams read_params(std::istream& is);

}  // namespace sbflow
