#include "sbflow/net.hpp"

#include <cmath>

namespace sbflow {

namespace {

// Highest sinusoid frequency; the lowest is 1.
constexpr double kMaxFrequency = 1.0e4;

RowMatrix sigmoid(const RowMatrix& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

RowMatrix silu(const RowMatrix& z) { return z.cwiseProduct(sigmoid(z)); }

RowMatrix silu_grad(const RowMatrix& z) {
  const RowMatrix s = sigmoid(z);
  return (s.array() * (1.0 + z.array() * (1.0 - s.array()))).matrix();
}

RowMatrix affine(const RowMatrix& in, const VectorFieldParams& p, std::size_t slot) {
  RowMatrix out = in * p.weight(slot).transpose();
  out.rowwise() += p.bias(slot).transpose();
  return out;
}

void check_time(double t) {
  if (!(t >= 0.0 && t < 1.0)) throw std::domain_error("time out of domain");
}

// Activations kept for the reverse pass.
struct EmbedCache {
  RowMatrix features;
  RowMatrix pre;     // first layer pre-activation
  RowMatrix hidden;  // silu(pre)
  RowMatrix out;
};

struct TrunkCache {
  std::vector<RowMatrix> inputs;  // H_l, l = 0..depth-1
  std::vector<RowMatrix> pre;     // Z_l
};

EmbedCache embed(const VectorFieldParams& p, std::size_t first_slot, const Vec& values) {
  const int dim = p.spec().time_embed_dim;
  EmbedCache c;
  c.features.resize(values.size(), dim);
  for (Eigen::Index i = 0; i < values.size(); ++i) c.features.row(i) = sinusoidal_features(values[i], dim);
  c.pre = affine(c.features, p, first_slot);
  c.hidden = silu(c.pre);
  c.out = affine(c.hidden, p, first_slot + 1);
  return c;
}

RowMatrix run_trunk(const VectorFieldParams& p, RowMatrix h, TrunkCache* cache) {
  const int depth = p.spec().depth;
  for (int l = 0; l < depth; ++l) {
    RowMatrix z = affine(h, p, p.trunk_slot(l));
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(z);
    }
    h = (l + 1 < depth) ? silu(z) : std::move(z);
  }
  return h;
}

RowMatrix assemble_input(const Batch& x, const RowMatrix& e_time, const RowMatrix* e_dir) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index eh = e_time.cols();
  RowMatrix h(n, d + eh * (e_dir ? 2 : 1));
  h.leftCols(d) = x;
  if (e_time.rows() == n) {
    h.middleCols(d, eh) = e_time;
  } else {
    h.middleCols(d, eh) = e_time.row(0).replicate(n, 1);
  }
  if (e_dir) {
    if (e_dir->rows() == n)
      h.rightCols(eh) = *e_dir;
    else
      h.rightCols(eh) = e_dir->row(0).replicate(n, 1);
  }
  return h;
}

void embed_backward(const VectorFieldParams& p, std::size_t first_slot, const EmbedCache& c,
                    const RowMatrix& g_out, VectorFieldParams& grads) {
  grads.weight(first_slot + 1) += g_out.transpose() * c.hidden;
  grads.bias(first_slot + 1) += g_out.colwise().sum().transpose();
  const RowMatrix g_hidden = (g_out * p.weight(first_slot + 1)).cwiseProduct(silu_grad(c.pre));
  grads.weight(first_slot) += g_hidden.transpose() * c.features;
  grads.bias(first_slot) += g_hidden.colwise().sum().transpose();
}

}  // namespace

void NetSpec::validate() const {
  if (input_dim < 1) throw std::invalid_argument("NetSpec: input_dim must be >= 1");
  if (hidden_units < 1) throw std::invalid_argument("NetSpec: hidden_units must be >= 1");
  if (depth < 1) throw std::invalid_argument("NetSpec: depth must be >= 1");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
    throw std::invalid_argument("NetSpec: time_embed_dim must be even and >= 2");
  if (embed_hidden < 1) throw std::invalid_argument("NetSpec: embed_hidden must be >= 1");
}

VectorFieldParams::VectorFieldParams(const NetSpec& spec) : spec_(spec) {
  spec_.validate();
  std::size_t offset = 0;
  auto push = [&](int in, int out) {
    slots_.push_back(DenseSlot{in, out, offset});
    offset += slots_.back().size();
  };
  push(spec.time_embed_dim, spec.embed_hidden);
  push(spec.embed_hidden, spec.embed_hidden);
  if (spec.bidirectional) {
    push(spec.time_embed_dim, spec.embed_hidden);
    push(spec.embed_hidden, spec.embed_hidden);
  }
  int in = spec.trunk_input_dim();
  for (int l = 0; l < spec.depth; ++l) {
    const int out = (l + 1 == spec.depth) ? spec.input_dim : spec.hidden_units;
    push(in, out);
    in = out;
  }
  values_.assign(offset, 0.0);
}

WeightMap VectorFieldParams::weight(std::size_t slot) {
  const auto& s = slots_.at(slot);
  return WeightMap(values_.data() + s.offset, s.out, s.in);
}

ConstWeightMap VectorFieldParams::weight(std::size_t slot) const {
  const auto& s = slots_.at(slot);
  return ConstWeightMap(values_.data() + s.offset, s.out, s.in);
}

Eigen::Map<Eigen::VectorXd> VectorFieldParams::bias(std::size_t slot) {
  const auto& s = slots_.at(slot);
  return Eigen::Map<Eigen::VectorXd>(values_.data() + s.offset + static_cast<std::size_t>(s.in) * s.out, s.out);
}

Eigen::Map<const Eigen::VectorXd> VectorFieldParams::bias(std::size_t slot) const {
  const auto& s = slots_.at(slot);
  return Eigen::Map<const Eigen::VectorXd>(values_.data() + s.offset + static_cast<std::size_t>(s.in) * s.out,
                                           s.out);
}

bool VectorFieldParams::all_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

void VectorFieldParams::set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

VectorFieldParams init_vector_field(const NetSpec& spec, RngState& rng) {
  VectorFieldParams p(spec);
  for (std::size_t k = 0; k < p.slots().size(); ++k) {
    const auto& slot = p.slots()[k];
    const double limit = std::sqrt(3.0 / slot.in);
    auto w = p.weight(k);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = limit * (2.0 * next_uniform(rng) - 1.0);
  }
  return p;
}

Eigen::RowVectorXd sinusoidal_features(double t, int dim) {
  const int half = dim / 2;
  Eigen::RowVectorXd f(dim);
  for (int k = 0; k < half; ++k) {
    const double freq = half == 1 ? 1.0 : std::pow(kMaxFrequency, static_cast<double>(k) / (half - 1));
    f[k] = std::sin(freq * t);
    f[half + k] = std::cos(freq * t);
  }
  return f;
}

Batch forward(const VectorFieldParams& params, Direction direction, double t, const Batch& x) {
  check_time(t);
  const auto& spec = params.spec();
  if (x.cols() != spec.input_dim) throw std::invalid_argument("forward: input dimension mismatch");
  const EmbedCache e_time = embed(params, params.time_slot(0), Vec::Constant(1, t));
  RowMatrix h;
  if (spec.bidirectional) {
    const EmbedCache e_dir = embed(params, params.direction_slot(0), Vec::Constant(1, direction_value(direction)));
    h = assemble_input(x, e_time.out, &e_dir.out);
  } else {
    h = assemble_input(x, e_time.out, nullptr);
  }
  return run_trunk(params, std::move(h), nullptr);
}

Batch forward_rows(const VectorFieldParams& params, const Vec& direction, const Vec& t, const Batch& x) {
  const auto& spec = params.spec();
  if (x.cols() != spec.input_dim) throw std::invalid_argument("forward: input dimension mismatch");
  if (t.size() != x.rows() || direction.size() != x.rows())
    throw std::invalid_argument("forward_rows: conditioning length mismatch");
  for (Eigen::Index i = 0; i < t.size(); ++i) check_time(t[i]);
  const EmbedCache e_time = embed(params, params.time_slot(0), t);
  RowMatrix h;
  if (spec.bidirectional) {
    const EmbedCache e_dir = embed(params, params.direction_slot(0), direction);
    h = assemble_input(x, e_time.out, &e_dir.out);
  } else {
    h = assemble_input(x, e_time.out, nullptr);
  }
  return run_trunk(params, std::move(h), nullptr);
}

LossAndGrad loss_and_grad(const VectorFieldParams& params, const RegressionBatch& batch) {
  const auto& spec = params.spec();
  const Eigen::Index n = batch.x.rows();
  const Eigen::Index d = spec.input_dim;
  if (n < 1) throw std::invalid_argument("loss_and_grad: empty batch");
  if (batch.x.cols() != d || batch.target.cols() != d || batch.target.rows() != n)
    throw std::invalid_argument("loss_and_grad: shape mismatch");
  if (batch.t.size() != n || batch.direction.size() != n)
    throw std::invalid_argument("loss_and_grad: conditioning length mismatch");
  if (batch.weight.size() != 0 && batch.weight.size() != n)
    throw std::invalid_argument("loss_and_grad: weight length mismatch");
  for (Eigen::Index i = 0; i < n; ++i) check_time(batch.t[i]);

  const EmbedCache e_time = embed(params, params.time_slot(0), batch.t);
  std::optional<EmbedCache> e_dir;
  if (spec.bidirectional) e_dir = embed(params, params.direction_slot(0), batch.direction);
  RowMatrix h0 = assemble_input(batch.x, e_time.out, e_dir ? &e_dir->out : nullptr);

  TrunkCache cache;
  const RowMatrix out = run_trunk(params, std::move(h0), &cache);
  const RowMatrix residual = out - batch.target;

  LossAndGrad result{0.0, VectorFieldParams(spec)};
  RowMatrix g(n, d);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = batch.weight.size() ? batch.weight[i] : 1.0;
    const double row_loss = w * residual.row(i).squaredNorm();
    if (!std::isfinite(row_loss))
      throw NumericError("loss_and_grad: non-finite loss at row " + std::to_string(i), i);
    total += row_loss;
    g.row(i) = (2.0 * w / static_cast<double>(n)) * residual.row(i);
  }
  result.loss = total / static_cast<double>(n);

  auto& grads = result.grads;
  for (int l = spec.depth - 1; l >= 0; --l) {
    const std::size_t slot = params.trunk_slot(l);
    grads.weight(slot) += g.transpose() * cache.inputs[l];
    grads.bias(slot) += g.colwise().sum().transpose();
    RowMatrix g_in = g * params.weight(slot);
    if (l > 0) g = g_in.cwiseProduct(silu_grad(cache.pre[l - 1]));
    else g = std::move(g_in);
  }
  const Eigen::Index eh = spec.embed_hidden;
  embed_backward(params, params.time_slot(0), e_time, g.middleCols(d, eh), grads);
  if (e_dir) embed_backward(params, params.direction_slot(0), *e_dir, g.rightCols(eh), grads);
  return result;
}

TrainState TrainState::from_params(VectorFieldParams params, double ema_decay) {
  TrainState s;
  s.ema_params = params;
  s.opt.m = VectorFieldParams(params.spec());
  s.opt.v = VectorFieldParams(params.spec());
  s.params = std::move(params);
  s.ema_decay = ema_decay;
  return s;
}

void TrainState::reset_optimizer() {
  opt.m.set_zero();
  opt.v.set_zero();
  opt.step = 0;
}

void adam_step(TrainState& state, const VectorFieldParams& grads, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: lr must be positive");
  if (!grads.same_shape(state.params)) throw std::invalid_argument("adam_step: gradient shape mismatch");
  auto& opt = state.opt;
  ++opt.step;
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  auto p = state.params.values();
  auto m = opt.m.values();
  auto v = opt.v.values();
  auto g = grads.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    p[i] -= lr * m_hat / (std::sqrt(v_hat) + opt.eps);
  }
}

void ema_update(TrainState& state) {
  const double gamma = state.ema_decay;
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("ema_update: decay must lie in [0, 1)");
  auto e = state.ema_params.values();
  auto p = state.params.values();
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = gamma * e[i] + (1.0 - gamma) * p[i];
}

double global_norm(const VectorFieldParams& grads) {
  double sq = 0.0;
  for (double g : grads.values()) sq += g * g;
  return std::sqrt(sq);
}

void clip_grad_global_norm(VectorFieldParams& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_global_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grads.values()) g *= scale;
  }
}

}  // namespace sbflow
