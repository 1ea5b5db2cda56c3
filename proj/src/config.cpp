#include "sbflow/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace sbflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt(long v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

long parse_long(const std::string& s) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::invalid_argument("not an integer: '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::invalid_argument("not an unsigned integer: '" + s + "'");
  return v;
}

int parse_int(const std::string& s) {
  const long v = parse_long(s);
  if (v < INT32_MIN || v > INT32_MAX) throw std::invalid_argument("integer out of range: '" + s + "'");
  return static_cast<int>(v);
}

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("not a boolean: '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty list element in '" + s + "'");
    out.push_back(item);
  }
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += f(v[i]);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(parse_double(item));
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define SB_DOUBLE(sec, name, member) \
  Field{sec, name, [](const ExperimentConfig& c) { return fmt(c.member); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_double(v); }}
#define SB_INT(sec, name, member) \
  Field{sec, name, [](const ExperimentConfig& c) { return fmt(static_cast<long>(c.member)); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_int(v); }}
#define SB_LONG(sec, name, member) \
  Field{sec, name, [](const ExperimentConfig& c) { return fmt(static_cast<long>(c.member)); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_long(v); }}
#define SB_BOOL(sec, name, member) \
  Field{sec, name, [](const ExperimentConfig& c) { return fmt(c.member); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(v); }}
#define SB_STRING(sec, name, member) \
  Field{sec, name, [](const ExperimentConfig& c) { return c.member; }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = v; }}
#define SB_DATASET(sec, member)                                                                  \
  Field{sec, "name", [](const ExperimentConfig& c) { return to_string(c.member.name); },          \
        [](ExperimentConfig& c, const std::string& v) { c.member.name = parse_dataset_name(v); }}, \
      SB_INT(sec, "dim", member.dim), SB_DOUBLE(sec, "sigma", member.sigma),                      \
      SB_DOUBLE(sec, "noise", member.noise), SB_DOUBLE(sec, "radius", member.radius),             \
      SB_DOUBLE(sec, "component_sd", member.component_sd)

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SB_STRING("run", "label", label),
      SB_STRING("run", "out_dir", out_dir),
      SB_BOOL("run", "two_networks", two_networks),
      Field{"run", "finetune_mode",
            [](const ExperimentConfig& c) {
              return std::string(c.finetune_mode == FinetuneMode::Online ? "online" : "iterative");
            },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "online") c.finetune_mode = FinetuneMode::Online;
              else if (v == "iterative") c.finetune_mode = FinetuneMode::Iterative;
              else throw std::invalid_argument("unknown finetune_mode: " + v);
            }},
      SB_LONG("run", "swap_every", swap_every),

      SB_DATASET("source", source),
      SB_DATASET("target", target),

      SB_INT("net", "hidden_units", net.hidden_units),
      SB_INT("net", "depth", net.depth),
      SB_INT("net", "time_embed_dim", net.time_embed_dim),
      SB_INT("net", "embed_hidden", net.embed_hidden),

      SB_DOUBLE("train", "eps", train.eps),
      SB_INT("train", "batch_size", train.batch_size),
      SB_LONG("train", "n_pretrain", train.n_pretrain),
      SB_LONG("train", "n_finetune", train.n_finetune),
      SB_DOUBLE("train", "lr_pretrain", train.lr_pretrain),
      SB_DOUBLE("train", "lr_finetune", train.lr_finetune),
      SB_LONG("train", "warmup_steps", train.warmup_steps),
      SB_DOUBLE("train", "ema_decay", train.ema_decay),
      SB_BOOL("train", "sample_with_ema", train.sample_with_ema),
      SB_INT("train", "n_em_steps", train.n_em_steps),
      SB_DOUBLE("train", "t_min", train.t_min),
      SB_DOUBLE("train", "grad_clip", train.grad_clip),
      SB_LONG("train", "replay_capacity", train.replay_capacity),
      Field{"train", "seed", [](const ExperimentConfig& c) { return std::to_string(c.train.seed); },
            [](ExperimentConfig& c, const std::string& v) { c.train.seed = parse_u64(v); }},

      SB_BOOL("precond", "enabled", precond.enabled),
      Field{"precond", "weighting",
            [](const ExperimentConfig& c) {
              return std::string(c.precond.weighting == LossWeighting::Unit ? "unit" : "inverse_output");
            },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "unit") c.precond.weighting = LossWeighting::Unit;
              else if (v == "inverse_output") c.precond.weighting = LossWeighting::InverseOutput;
              else throw std::invalid_argument("unknown weighting: " + v);
            }},

      SB_LONG("eval", "eval_every", eval.eval_every),
      SB_LONG("eval", "log_every", eval.log_every),
      SB_INT("eval", "n_eval", eval.n_eval),
      SB_INT("eval", "w2_repeats", eval.w2_repeats),
      SB_INT("eval", "w2_points", eval.w2_points),
      SB_INT("eval", "pf_steps", eval.pf_steps),
      SB_INT("eval", "energy_steps", eval.energy_steps),
      SB_INT("eval", "sde_steps", eval.sde_steps),
      SB_DOUBLE("eval", "residual_t", eval.residual_t),
      SB_BOOL("eval", "record_wallclock", eval.record_wallclock),

      SB_DOUBLE("analytic", "sigma0", analytic.sigma0),
      SB_DOUBLE("analytic", "sigma1", analytic.sigma1),
      Field{"analytic", "eps_list", [](const ExperimentConfig& c) { return join(c.analytic.eps_list, [](double v) { return fmt(v); }); },
            [](ExperimentConfig& c, const std::string& v) { c.analytic.eps_list = parse_doubles(v); }},
      Field{"analytic", "modes",
            [](const ExperimentConfig& c) { return join(c.analytic.modes, [](IterMode m) { return std::string(to_string(m)); }); },
            [](ExperimentConfig& c, const std::string& v) {
              c.analytic.modes.clear();
              for (const auto& item : split_list(v)) c.analytic.modes.push_back(parse_iter_mode(item));
            }},
      SB_INT("analytic", "n_iters", analytic.n_iters),
      Field{"analytic", "eps_err_list",
            [](const ExperimentConfig& c) { return join(c.analytic.eps_err_list, [](double v) { return fmt(v); }); },
            [](ExperimentConfig& c, const std::string& v) { c.analytic.eps_err_list = parse_doubles(v); }},
      SB_INT("analytic", "sinkhorn_points", analytic.sinkhorn_points),

      SB_DOUBLE("toy", "x0", toy.x0),
      SB_DOUBLE("toy", "y0", toy.y0),
      Field{"toy", "alpha_list", [](const ExperimentConfig& c) { return join(c.toy.alpha_list, [](double v) { return fmt(v); }); },
            [](ExperimentConfig& c, const std::string& v) { c.toy.alpha_list = parse_doubles(v); }},
      SB_INT("toy", "n", toy.n),
      SB_DOUBLE("toy", "dt", toy.dt),
      SB_DOUBLE("toy", "t_max", toy.t_max),
  };
  return table;
}

#undef SB_DOUBLE
#undef SB_INT
#undef SB_LONG
#undef SB_BOOL
#undef SB_STRING
#undef SB_DATASET

// Values tied to other sections rather than set independently.
void sync_derived(ExperimentConfig& c) {
  c.net.input_dim = c.source.dim;
  c.net.bidirectional = !c.two_networks;
  c.precond.eps = c.train.eps;
}

}  // namespace

void EvalSettings::validate() const {
  if (eval_every < 0 || log_every < 1) throw std::invalid_argument("eval: eval_every >= 0 and log_every >= 1 required");
  if (n_eval < 1 || w2_repeats < 0 || pf_steps < 1 || energy_steps < 1 || sde_steps < 1)
    throw std::invalid_argument("eval: sample and step counts must be positive");
  if (w2_repeats > 0 && (w2_points < 1 || w2_points > kW2MaxPoints))
    throw std::invalid_argument("eval: w2_points must lie in [1, " + std::to_string(kW2MaxPoints) + "]");
  if (!(residual_t > 0.0 && residual_t < 1.0)) throw std::invalid_argument("eval: residual_t must lie in (0, 1)");
}

void ExperimentConfig::validate() const {
  source.validate();
  target.validate();
  if (source.dim != target.dim) throw std::invalid_argument("config: source and target dimensions differ");
  if (target.name == DatasetName::AntitheticGaussian)
    throw std::invalid_argument("config: antithetic_gaussian is only valid as a source");
  net.validate();
  if (net.input_dim != source.dim) throw std::invalid_argument("config: network input_dim must equal data dim");
  train.validate();
  if (swap_every < 1) throw std::invalid_argument("config: swap_every must be >= 1");
  eval.validate();
  if (toy.n < 0 || !(toy.dt > 0.0) || !(toy.t_max >= 0.0)) throw std::invalid_argument("config: bad toy settings");
  if (analytic.n_iters < 1) throw std::invalid_argument("config: analytic n_iters must be >= 1");
}

ExperimentConfig parse_config(std::istream& is) {
  std::map<std::pair<std::string, std::string>, const Field*> index;
  std::set<std::string> sections;
  for (const auto& f : fields()) {
    index[{f.section, f.key}] = &f;
    sections.insert(f.section);
  }
  ExperimentConfig cfg;
  std::set<std::pair<std::string, std::string>> seen;
  std::string section;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!sections.count(section)) throw std::invalid_argument(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw std::invalid_argument(where + "key outside any section");
    const auto it = index.find({section, key});
    if (it == index.end()) throw std::invalid_argument(where + "unknown key " + section + "." + key);
    if (!seen.insert({section, key}).second) throw std::invalid_argument(where + "duplicate key " + section + "." + key);
    try {
      it->second->set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + section + "." + key + ": " + e.what());
    }
  }
  sync_derived(cfg);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  try {
    return parse_config(is);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

}  // namespace sbflow
