#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dag/data.hpp"
#include "dag/train_eval.hpp"

namespace dag {

struct DataConfig {
  std::string path;                     // CSV; empty when a synth.* block is given
  std::size_t endo_count = 1;           // last N columns
  std::vector<std::string> endo_names;  // overrides endo_count when non-empty
  SplitRatios split;
};

/// Everything one command needs: data source, model, training and output.
struct RunConfig {
  DataConfig data;
  std::optional<SyntheticSpec> synth;
  DagConfig model;
  TrainConfig train;
  std::string out_dir = "out";
};

inline ConfigEntries entries(const SyntheticSpec& s) {
  ConfigEntries e{{"synth.n_exo", std::to_string(s.n_exo)},
                  {"synth.n_endo", std::to_string(s.n_endo)},
                  {"synth.length", std::to_string(s.length)},
                  {"synth.season_period", format_double(s.season_period)},
                  {"synth.season_amplitude", format_double(s.season_amplitude)},
                  {"synth.endo_ar", format_double(s.endo_ar)},
                  {"synth.exo_noise", format_double(s.exo_noise)},
                  {"synth.endo_noise", format_double(s.endo_noise)},
                  {"synth.burn_in", std::to_string(s.burn_in)},
                  {"synth.seed", std::to_string(s.seed)}};
  if (!s.ar.empty()) {
    std::string v;
    for (std::size_t j = 0; j < s.ar.size(); ++j) {
      v += (j ? "," : "") + format_double(s.ar[j][0]) + "," + format_double(s.ar[j][1]);
    }
    e.emplace_back("synth.ar", v);
  }
  if (!s.mix.empty()) {
    std::string v;
    for (std::size_t k = 0; k < s.mix.size(); ++k) v += (k ? "," : "") + format_double(s.mix[k]);
    e.emplace_back("synth.mix", v);
  }
  return e;
}

inline ConfigEntries entries(const RunConfig& c) {
  ConfigEntries e;
  if (!c.data.path.empty()) e.emplace_back("data.path", c.data.path);
  e.emplace_back("data.endo_count", std::to_string(c.data.endo_count));
  if (!c.data.endo_names.empty()) {
    std::string v;
    for (std::size_t i = 0; i < c.data.endo_names.size(); ++i) v += (i ? "," : "") + c.data.endo_names[i];
    e.emplace_back("data.endo_names", v);
  }
  e.emplace_back("data.split", c.data.split.str());
  if (c.synth) {
    const auto s = entries(*c.synth);
    e.insert(e.end(), s.begin(), s.end());
  }
  for (const auto& group : {entries(c.model), entries(c.train)}) e.insert(e.end(), group.begin(), group.end());
  e.emplace_back("out.dir", c.out_dir);
  return e;
}

inline std::string to_text(const RunConfig& c) { return to_text(entries(c)); }

namespace detail {

inline std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto pos = v.find(',', start);
    const auto piece = trim(v.substr(start, pos == v.npos ? v.npos : pos - start));
    if (!piece.empty()) out.emplace_back(piece);
    if (pos == v.npos) break;
    start = pos + 1;
  }
  return out;
}

// Consumes typed values from parsed key/value pairs; every error names the key.
class KeyReader {
 public:
  explicit KeyReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  bool has_prefix(std::string_view prefix) const {
    for (const auto& [k, v] : kv_) {
      if (k.starts_with(prefix)) return true;
    }
    return false;
  }

  void str(const std::string& key, std::string& out) {
    if (auto v = take(key)) out = *v;
  }

  void size(const std::string& key, std::size_t& out) { integer(key, out); }
  void u64(const std::string& key, std::uint64_t& out) { integer(key, out); }

  void real(const std::string& key, double& out) {
    if (auto v = take(key)) out = parse_real(key, *v);
  }

  void opt_real(const std::string& key, std::optional<double>& out) {
    if (auto v = take(key)) out = parse_real(key, *v);
  }

  void flag(const std::string& key, bool& out) {
    if (auto v = take(key)) {
      if (*v == "true" || *v == "1") {
        out = true;
      } else if (*v == "false" || *v == "0") {
        out = false;
      } else {
        throw ConfigError(key + ": expected true or false, got '" + *v + "'");
      }
    }
  }

  void reals(const std::string& key, std::vector<double>& out) {
    if (auto v = take(key)) {
      out.clear();
      for (const auto& piece : split_list(*v)) out.push_back(parse_real(key, piece));
    }
  }

  void names(const std::string& key, std::vector<std::string>& out) {
    if (auto v = take(key)) out = split_list(*v);
  }

  void split(const std::string& key, SplitRatios& out) {
    if (auto v = take(key)) {
      try {
        out = SplitRatios::parse(*v);
      } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
      }
    }
  }

  void finish() const {
    if (!kv_.empty()) throw ConfigError(kv_.begin()->first + ": unknown key");
  }

 private:
  std::map<std::string, std::string> kv_;

  std::optional<std::string> take(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    std::string v = it->second;
    kv_.erase(it);
    return v;
  }

  template <class T>
  void integer(const std::string& key, T& out) {
    if (auto v = take(key)) {
      auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
      if (ec != std::errc() || ptr != v->data() + v->size()) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + *v + "'");
      }
    }
  }

  static double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    if (!parse_number(v, out) || !std::isfinite(out)) {
      throw ConfigError(key + ": expected a finite number, got '" + v + "'");
    }
    return out;
  }
};

}  // namespace detail

/// Parses `key = value` lines. Blank lines and `#` comments are ignored;
/// unknown or repeated keys are errors.
inline RunConfig parse_config(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (auto hash = s.find('#'); hash != s.npos) s = s.substr(0, hash);
    s = detail::trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == s.npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key(detail::trim(s.substr(0, eq)));
    std::string value(detail::trim(s.substr(eq + 1)));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) throw ConfigError(key + ": given more than once");
  }

  detail::KeyReader r(std::move(kv));
  RunConfig c;
  r.str("data.path", c.data.path);
  r.size("data.endo_count", c.data.endo_count);
  r.names("data.endo_names", c.data.endo_names);
  r.split("data.split", c.data.split);

  if (r.has_prefix("synth.")) {
    SyntheticSpec s;
    r.size("synth.n_exo", s.n_exo);
    r.size("synth.n_endo", s.n_endo);
    r.size("synth.length", s.length);
    r.real("synth.season_period", s.season_period);
    r.real("synth.season_amplitude", s.season_amplitude);
    r.real("synth.endo_ar", s.endo_ar);
    r.real("synth.exo_noise", s.exo_noise);
    r.real("synth.endo_noise", s.endo_noise);
    r.size("synth.burn_in", s.burn_in);
    r.u64("synth.seed", s.seed);
    std::vector<double> ar;
    r.reals("synth.ar", ar);
    if (ar.size() % 2 != 0) throw ConfigError("synth.ar: expected pairs a1,a2 per exogenous channel");
    for (std::size_t k = 0; k < ar.size(); k += 2) s.ar.push_back({ar[k], ar[k + 1]});
    r.reals("synth.mix", s.mix);
    try {
      s.validate();
    } catch (const SpecError& e) {
      throw ConfigError(std::string("synth: ") + e.what());
    }
    c.synth = s;
  }

  DagConfig& m = c.model;
  r.size("model.n_endo", m.n_endo);
  r.size("model.n_exo", m.n_exo);
  r.size("model.lookback", m.lookback);
  r.size("model.horizon", m.horizon);
  r.size("model.d_model", m.d_model);
  r.size("model.patch_len", m.patch_len);
  r.size("model.stride", m.stride);
  r.size("model.layers", m.layers);
  r.size("model.heads", m.heads);
  r.size("model.ff_width", m.ff_width);
  r.size("model.gate_width", m.gate_width);
  r.real("model.lambda1", m.lambda1);
  r.real("model.lambda2", m.lambda2);
  r.flag("model.double_softmax", m.double_softmax);
  r.flag("model.normalize", m.normalize);
  r.u64("model.seed", m.seed);
  r.flag("model.temporal_injection", m.wiring.temporal_injection);
  r.flag("model.channel_injection", m.wiring.channel_injection);
  r.flag("model.temporal_discovery", m.wiring.temporal_discovery);
  r.flag("model.channel_discovery", m.wiring.channel_discovery);
  r.opt_real("model.temporal_alpha", m.wiring.temporal_alpha);
  r.opt_real("model.channel_alpha", m.wiring.channel_alpha);

  TrainConfig& t = c.train;
  r.size("train.epochs", t.epochs);
  r.size("train.batch_size", t.batch_size);
  r.real("train.lr", t.optimizer.lr);
  r.real("train.beta1", t.optimizer.beta1);
  r.real("train.beta2", t.optimizer.beta2);
  r.real("train.eps", t.optimizer.eps);
  r.size("train.patience", t.patience);
  r.u64("train.seed", t.seed);
  r.opt_real("train.lambda1", t.lambda1);
  r.opt_real("train.lambda2", t.lambda2);
  r.flag("train.halve_batch_on_failure", t.halve_batch_on_failure);
  r.size("train.min_batch_size", t.min_batch_size);
  r.size("train.eval_batch_size", t.eval_batch_size);

  r.str("out.dir", c.out_dir);
  r.finish();

  if (c.data.path.empty() && !c.synth) throw ConfigError("data.path: required unless synth.* keys are given");
  m.validate();
  t.validate();
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

/// Reads a config file; a relative data.path is taken relative to the file.
inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  RunConfig c = parse_config(in);
  if (!c.data.path.empty()) {
    std::filesystem::path p(c.data.path);
    if (p.is_relative()) c.data.path = (std::filesystem::path(path).parent_path() / p).lexically_normal().string();
  }
  return c;
}

/// Loads or generates the dataset; the model's channel counts are taken from
/// it.
inline std::shared_ptr<const RawDataset> resolve_dataset(RunConfig& c) {
  RawDataset ds;
  if (!c.data.path.empty()) {
    ds = c.data.endo_names.empty() ? load_csv(c.data.path, c.data.endo_count) : load_csv(c.data.path, c.data.endo_names);
  } else {
    ds = gen_synthetic(*c.synth);
  }
  const std::size_t n = ds.endo_count, d = ds.exo_count();
  c.data.endo_count = n;
  c.model.n_endo = n;
  c.model.n_exo = d;
  c.model.validate();
  return std::make_shared<const RawDataset>(std::move(ds));
}

}  // namespace dag
