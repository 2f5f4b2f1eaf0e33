#include "s2t/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "s2t/io.hpp"

namespace s2t::io {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// A double printed so that parsing it back gives the same value.
std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
T parse_integer(const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected an integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + v + "'");
}

Key integer(std::string name, std::function<Index&(RunConfig&)> ref) {
  return {name, [ref](RunConfig& c, const std::string& v) { ref(c) = parse_integer<Index>(v); },
          [ref](RunConfig c) { return std::to_string(ref(c)); }};
}

Key real(std::string name, std::function<double&(RunConfig&)> ref) {
  return {name, [ref](RunConfig& c, const std::string& v) { ref(c) = parse_real(v); },
          [ref](RunConfig c) { return exact(ref(c)); }};
}

Key boolean(std::string name, std::function<bool&(RunConfig&)> ref) {
  return {name, [ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(v); },
          [ref](RunConfig c) { return std::string(ref(c) ? "true" : "false"); }};
}

const std::vector<Key>& keys() {
  using objective::Mode;
  using objective::Reduction;
  static const std::vector<Key> k = {
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_integer<std::uint64_t>(v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      integer("network.K", [](RunConfig& c) -> Index& { return c.train.network.stages; }),
      integer("network.L", [](RunConfig& c) -> Index& { return c.train.network.blocks; }),
      integer("network.C", [](RunConfig& c) -> Index& { return c.train.network.channels; }),
      integer("network.T", [](RunConfig& c) -> Index& { return c.train.network.heads; }),
      integer("network.M", [](RunConfig& c) -> Index& { return c.train.network.window; }),
      integer("network.n_lambda", [](RunConfig& c) -> Index& { return c.train.network.n_lambda; }),
      integer("network.k_me", [](RunConfig& c) -> Index& { return c.train.network.k_me; }),
      integer("network.ffn_mult", [](RunConfig& c) -> Index& { return c.train.network.ffn_mult; }),
      {"network.variant",
       [](RunConfig& c, const std::string& v) {
         try {
           c.train.network.variant = attention::parse_variant(v);
         } catch (const ContractError& e) {
           throw std::invalid_argument(e.what());
         }
       },
       [](const RunConfig& c) { return attention::variant_name(c.train.network.variant); }},
      boolean("network.shift", [](RunConfig& c) -> bool& { return c.train.network.shift; }),
      {"loss.mode",
       [](RunConfig& c, const std::string& v) {
         try {
           c.train.loss.mode = objective::parse_mode(v);
         } catch (const ContractError& e) {
           throw std::invalid_argument(e.what());
         }
       },
       [](const RunConfig& c) { return std::string(c.train.loss.mode == Mode::ReconOnly ? "recon" : "mask_aware"); }},
      real("loss.alpha_me", [](RunConfig& c) -> double& { return c.train.schedule.alpha_me; }),
      real("loss.alpha_ma", [](RunConfig& c) -> double& { return c.train.schedule.alpha_ma; }),
      real("loss.beta_ma", [](RunConfig& c) -> double& { return c.train.loss.beta_ma; }),
      real("loss.eps_den", [](RunConfig& c) -> double& { return c.train.loss.eps_den; }),
      {"loss.reduction",
       [](RunConfig& c, const std::string& v) {
         try {
           c.train.loss.reduction = objective::parse_reduction(v);
         } catch (const ContractError& e) {
           throw std::invalid_argument(e.what());
         }
       },
       [](const RunConfig& c) {
         return std::string(c.train.loss.reduction == Reduction::Global ? "global" : "patchwise");
       }},
      integer("loss.patch", [](RunConfig& c) -> Index& { return c.train.loss.patch; }),
      boolean("loss.detach_weight", [](RunConfig& c) -> bool& { return c.train.loss.detach_weight; }),
      integer("schedule.epochs", [](RunConfig& c) -> Index& { return c.train.schedule.total_epochs; }),
      integer("schedule.phase_switch", [](RunConfig& c) -> Index& { return c.train.schedule.phase_switch; }),
      real("schedule.lr", [](RunConfig& c) -> double& { return c.train.schedule.base_lr; }),
      integer("schedule.lr_half_every", [](RunConfig& c) -> Index& { return c.train.schedule.lr_half_every; }),
      integer("schedule.batch_size", [](RunConfig& c) -> Index& { return c.train.schedule.batch_size; }),
      integer("train.crop", [](RunConfig& c) -> Index& { return c.train.crop; }),
      real("train.grad_clip", [](RunConfig& c) -> double& { return c.train.grad_clip; }),
      integer("optics.shear_step", [](RunConfig& c) -> Index& { return c.train.shear.step; }),
      real("optics.noise_sigma", [](RunConfig& c) -> double& { return c.train.noise_sigma; }),
  };
  return k;
}

struct Constraint {
  bool ok;
  const char* what;
  std::vector<const char*> keys;
};

void check_constraints(const RunConfig& c, const std::map<std::string, int>& lines) {
  const auto& n = c.train.network;
  const auto& l = c.train.loss;
  const auto& s = c.train.schedule;
  const bool mask_aware = l.mode == objective::Mode::MaskAware;
  const std::vector<Constraint> rules = {
      {n.stages >= 1, "network.K must be >= 1", {"network.K"}},
      {n.blocks >= 1, "network.L must be >= 1", {"network.L"}},
      {n.channels >= 1, "network.C must be >= 1", {"network.C"}},
      {n.heads >= 1 && n.heads <= n.channels, "network.T must lie in [1, C]", {"network.T", "network.C"}},
      {n.window >= 1, "network.M must be >= 1", {"network.M"}},
      {n.n_lambda >= 1, "network.n_lambda must be >= 1", {"network.n_lambda"}},
      {n.ffn_mult >= 1, "network.ffn_mult must be >= 1", {"network.ffn_mult"}},
      {!mask_aware || (n.k_me >= 1 && n.k_me < n.stages),
       "network.k_me must satisfy 1 <= k_me < K for the mask-aware objective",
       {"network.k_me", "network.K", "loss.mode"}},
      {s.alpha_me >= 0 && s.alpha_ma >= 0, "loss.alpha_me and loss.alpha_ma must be >= 0",
       {"loss.alpha_me", "loss.alpha_ma"}},
      {l.beta_ma >= 0, "loss.beta_ma must be >= 0", {"loss.beta_ma"}},
      {l.eps_den > 0, "loss.eps_den must be > 0", {"loss.eps_den"}},
      {l.patch >= 1, "loss.patch must be >= 1", {"loss.patch"}},
      {s.total_epochs >= 1, "schedule.epochs must be >= 1", {"schedule.epochs"}},
      {s.phase_switch >= 0 && s.phase_switch < s.total_epochs, "schedule.phase_switch must lie in [0, epochs)",
       {"schedule.phase_switch", "schedule.epochs"}},
      {s.base_lr > 0, "schedule.lr must be > 0", {"schedule.lr"}},
      {s.lr_half_every >= 1, "schedule.lr_half_every must be >= 1", {"schedule.lr_half_every"}},
      {s.batch_size >= 1, "schedule.batch_size must be >= 1", {"schedule.batch_size"}},
      {c.train.crop >= 0, "train.crop must be >= 0", {"train.crop"}},
      {c.train.grad_clip >= 0, "train.grad_clip must be >= 0", {"train.grad_clip"}},
      {c.train.shear.step >= 0, "optics.shear_step must be >= 0", {"optics.shear_step"}},
      {c.train.noise_sigma >= 0, "optics.noise_sigma must be >= 0", {"optics.noise_sigma"}},
  };
  for (const auto& r : rules) {
    if (r.ok) continue;
    int line = 0;
    for (const char* k : r.keys) {
      const auto it = lines.find(k);
      if (it != lines.end()) line = std::max(line, it->second);
    }
    throw ConfigError(r.what, line);
  }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  std::map<std::string, const Key*> index;
  for (const auto& k : keys()) index[k.name] = &k;

  RunConfig cfg;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + body + "'", line);
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown key '" + key + "'", line);
    if (seen.count(key)) {
      throw ConfigError("duplicate key '" + key + "' (first set on line " + std::to_string(seen[key]) + ")", line);
    }
    if (value.empty()) throw ConfigError("missing value for '" + key + "'", line);
    try {
      it->second->set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("bad value for '" + key + "': " + e.what(), line);
    }
    seen[key] = line;
  }
  check_constraints(cfg, seen);
  try {
    cfg.train.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what(), 0);
  }
  return cfg;
}

RunConfig read_config(const std::string& path) {
  const Bytes bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace s2t::io
