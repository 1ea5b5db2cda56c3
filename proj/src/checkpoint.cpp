#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "sbflow/net.hpp"
#include "sbflow/train.hpp"

namespace sbflow {

namespace {

constexpr char kParamsMagic[8] = {'S', 'B', 'F', 'P', 'A', 'R', 'M', '1'};
constexpr char kModelMagic[8] = {'S', 'B', 'F', 'M', 'O', 'D', 'L', '1'};

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated stream");
  return v;
}

void expect_magic(std::istream& is, const char (&magic)[8]) {
  char buf[8];
  is.read(buf, 8);
  if (!is || std::memcmp(buf, magic, 8) != 0) throw std::runtime_error("checkpoint: bad magic");
}

void write_state(std::ostream& os, const TrainState& s) {
  write_params(os, s.params);
  write_params(os, s.ema_params);
  write_params(os, s.opt.m);
  write_params(os, s.opt.v);
  put<std::int64_t>(os, s.opt.step);
  put<std::int64_t>(os, s.step);
  put<double>(os, s.ema_decay);
}

TrainState read_state(std::istream& is) {
  TrainState s;
  s.params = read_params(is);
  s.ema_params = read_params(is);
  s.opt.m = read_params(is);
  s.opt.v = read_params(is);
  if (!s.ema_params.same_shape(s.params) || !s.opt.m.same_shape(s.params) || !s.opt.v.same_shape(s.params))
    throw std::runtime_error("checkpoint: inconsistent network shapes");
  s.opt.step = get<std::int64_t>(is);
  s.step = get<std::int64_t>(is);
  s.ema_decay = get<double>(is);
  return s;
}

}  // namespace

void write_params(std::ostream& os, const VectorFieldParams& params) {
  os.write(kParamsMagic, 8);
  const NetSpec& s = params.spec();
  put<std::int32_t>(os, s.input_dim);
  put<std::int32_t>(os, s.hidden_units);
  put<std::int32_t>(os, s.depth);
  put<std::int32_t>(os, s.time_embed_dim);
  put<std::int32_t>(os, s.embed_hidden);
  put<std::uint8_t>(os, s.bidirectional ? 1 : 0);
  put<std::uint64_t>(os, params.size());
  os.write(reinterpret_cast<const char*>(params.values().data()),
           static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

VectorFieldParams read_params(std::istream& is) {
  expect_magic(is, kParamsMagic);
  NetSpec s;
  s.input_dim = get<std::int32_t>(is);
  s.hidden_units = get<std::int32_t>(is);
  s.depth = get<std::int32_t>(is);
  s.time_embed_dim = get<std::int32_t>(is);
  s.embed_hidden = get<std::int32_t>(is);
  s.bidirectional = get<std::uint8_t>(is) != 0;
  VectorFieldParams p(s);
  const auto n = get<std::uint64_t>(is);
  if (n != p.size()) throw std::runtime_error("checkpoint: parameter count does not match network spec");
  is.read(reinterpret_cast<char*>(p.values().data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint: truncated stream");
  return p;
}

void save_model(std::ostream& os, const BridgeModel& model) {
  os.write(kModelMagic, 8);
  put<std::uint8_t>(os, model.two_networks() ? 1 : 0);
  put<std::uint8_t>(os, model.precond.enabled ? 1 : 0);
  put<double>(os, model.precond.eps);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(model.precond.weighting));
  put<std::uint64_t>(os, model.rng.seed);
  put<std::uint64_t>(os, model.rng.stream_id);
  put<std::uint64_t>(os, model.rng.counter);
  put<std::int64_t>(os, model.step);
  write_state(os, model.forward);
  if (model.backward) write_state(os, *model.backward);
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

BridgeModel load_model(std::istream& is) {
  expect_magic(is, kModelMagic);
  BridgeModel m;
  const bool two = get<std::uint8_t>(is) != 0;
  m.precond.enabled = get<std::uint8_t>(is) != 0;
  m.precond.eps = get<double>(is);
  const auto w = get<std::uint8_t>(is);
  if (w > 1) throw std::runtime_error("checkpoint: unknown loss weighting");
  m.precond.weighting = static_cast<LossWeighting>(w);
  m.rng.seed = get<std::uint64_t>(is);
  m.rng.stream_id = get<std::uint64_t>(is);
  m.rng.counter = get<std::uint64_t>(is);
  m.step = get<std::int64_t>(is);
  m.forward = read_state(is);
  if (two) m.backward = read_state(is);
  return m;
}

void save_model(const std::string& path, const BridgeModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  save_model(os, model);
}

BridgeModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  return load_model(is);
}

}  // namespace sbflow
