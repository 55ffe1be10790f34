#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dag/errors.hpp"
#include "dag/tensor.hpp"

namespace dag {

/// Channel-major observation matrix. The last `endo_count` channels are
/// endogenous; the rest are exogenous.
struct RawDataset {
  std::vector<std::string> names;
  std::size_t length = 0;
  std::vector<double> values;  // [C x L]
  std::size_t endo_count = 1;
  std::string metadata;

  std::size_t channels() const { return names.size(); }
  std::size_t exo_count() const { return channels() - endo_count; }
  double at(std::size_t channel, std::size_t t) const { return values[channel * length + t]; }
  std::span<const double> channel(std::size_t c) const { return {values.data() + c * length, length}; }

  void validate() const {
    const std::size_t c = channels();
    if (length == 0) throw ContractError("dataset has no time steps");
    if (values.size() != c * length) throw ContractError("dataset matrix size does not match channels x length");
    if (endo_count < 1 || endo_count >= c) {
      throw ContractError("endo_count " + std::to_string(endo_count) + " must satisfy 1 <= N < C=" + std::to_string(c));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw ContractError("dataset contains non-finite values");
    }
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

/// Locale-independent decimal or scientific number; whole field must parse.
inline bool parse_number(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    fields.push_back(trim(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

}  // namespace detail

/// Parses a comma-separated table: optional header row, optional leading
/// timestamp column (detected by a non-numeric first field), one row per
/// step. Missing or non-finite cells are rejected.
inline RawDataset parse_csv(std::istream& in, std::size_t endo_count) {
  std::string line;
  std::size_t line_no = 0;
  bool first_row = true;
  bool has_timestamp = false;
  std::size_t width = 0;
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;

  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_fields(line);
    double dummy = 0.0;
    if (first_row) {
      first_row = false;
      // Header: any non-numeric field past the (possible) timestamp column.
      bool header = fields.size() == 1 && !detail::parse_number(fields[0], dummy);
      for (std::size_t i = 1; i < fields.size(); ++i) header = header || !detail::parse_number(fields[i], dummy);
      if (header) {
        for (auto f : fields) names.emplace_back(f);
        continue;
      }
    }
    if (width == 0) {
      has_timestamp = !detail::parse_number(fields[0], dummy);
      width = fields.size();
      if (!names.empty() && names.size() != width) {
        throw ParseError("line " + std::to_string(line_no) + ": " + std::to_string(width) +
                         " fields but header has " + std::to_string(names.size()));
      }
    }
    if (fields.size() != width) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(width) + " fields, got " +
                       std::to_string(fields.size()));
    }
    std::vector<double> row;
    row.reserve(width);
    for (std::size_t i = has_timestamp ? 1 : 0; i < fields.size(); ++i) {
      double v = 0.0;
      if (!detail::parse_number(fields[i], v) || !std::isfinite(v)) {
        throw ParseError("line " + std::to_string(line_no) + ", column " + std::to_string(i + 1) +
                         ": non-numeric cell '" + std::string(fields[i]) + "'");
      }
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("no data rows");

  RawDataset ds;
  const std::size_t channels = rows[0].size();
  if (!names.empty()) {
    ds.names.assign(names.begin() + (has_timestamp ? 1 : 0), names.end());
  } else {
    for (std::size_t c = 0; c < channels; ++c) ds.names.push_back("c" + std::to_string(c));
  }
  if (endo_count >= channels || endo_count == 0) {
    throw ContractError("endo_count " + std::to_string(endo_count) + " must satisfy 1 <= N < C=" +
                        std::to_string(channels));
  }
  ds.length = rows.size();
  ds.endo_count = endo_count;
  ds.values.resize(channels * ds.length);
  for (std::size_t t = 0; t < ds.length; ++t)
    for (std::size_t c = 0; c < channels; ++c) ds.values[c * ds.length + t] = rows[t][c];
  return ds;
}

inline RawDataset load_csv(const std::string& path, std::size_t endo_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return parse_csv(in, endo_count);
}

/// Moves the named channels to the end (keeping their listed order) and marks
/// them endogenous.
inline RawDataset select_endogenous(RawDataset ds, const std::vector<std::string>& endo_names) {
  if (endo_names.empty()) throw ContractError("empty endogenous channel list");
  std::vector<std::size_t> order;
  std::vector<bool> is_endo(ds.channels(), false);
  std::vector<std::size_t> endo_idx;
  for (const auto& name : endo_names) {
    auto it = std::find(ds.names.begin(), ds.names.end(), name);
    if (it == ds.names.end()) throw ContractError("unknown channel '" + name + "'");
    auto idx = static_cast<std::size_t>(it - ds.names.begin());
    if (is_endo[idx]) throw ContractError("channel '" + name + "' listed twice");
    is_endo[idx] = true;
    endo_idx.push_back(idx);
  }
  for (std::size_t c = 0; c < ds.channels(); ++c)
    if (!is_endo[c]) order.push_back(c);
  order.insert(order.end(), endo_idx.begin(), endo_idx.end());
  RawDataset out;
  out.length = ds.length;
  out.metadata = ds.metadata;
  out.endo_count = endo_idx.size();
  for (auto c : order) {
    out.names.push_back(ds.names[c]);
    auto ch = ds.channel(c);
    out.values.insert(out.values.end(), ch.begin(), ch.end());
  }
  out.validate();
  return out;
}

inline RawDataset load_csv(const std::string& path, const std::vector<std::string>& endo_names) {
  return select_endogenous(load_csv(path, std::size_t{1}), endo_names);
}

inline void write_csv(std::ostream& out, const RawDataset& ds) {
  for (std::size_t c = 0; c < ds.channels(); ++c) out << (c ? "," : "") << ds.names[c];
  out << '\n';
  char buf[32];
  for (std::size_t t = 0; t < ds.length; ++t) {
    for (std::size_t c = 0; c < ds.channels(); ++c) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, ds.at(c, t));
      if (c) out << ',';
      out.write(buf, ptr - buf);
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splits and windows

struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct SplitRatios {
  std::array<std::size_t, 3> parts{7, 1, 2};

  static SplitRatios parse(std::string_view text) {
    SplitRatios r;
    std::size_t idx = 0, start = 0;
    while (idx < 3) {
      auto pos = text.find(':', start);
      auto piece = detail::trim(text.substr(start, pos == text.npos ? text.npos : pos - start));
      auto [ptr, ec] = std::from_chars(piece.data(), piece.data() + piece.size(), r.parts[idx]);
      if (ec != std::errc() || ptr != piece.data() + piece.size()) {
        throw ConfigError("split ratio '" + std::string(text) + "' is not of the form a:b:c");
      }
      ++idx;
      if (pos == text.npos) break;
      start = pos + 1;
      if (idx == 3) throw ConfigError("split ratio '" + std::string(text) + "' has more than three parts");
    }
    if (idx != 3) throw ConfigError("split ratio '" + std::string(text) + "' needs three parts");
    return r;
  }

  std::string str() const {
    return std::to_string(parts[0]) + ":" + std::to_string(parts[1]) + ":" + std::to_string(parts[2]);
  }
};

struct SplitRanges {
  Range train, val, test;
};

/// Chronological split with boundaries at floor(L * cumulative fraction).
inline SplitRanges split(std::size_t length, const SplitRatios& ratios) {
  const auto& p = ratios.parts;
  if (p[0] == 0 || p[1] == 0 || p[2] == 0) throw ContractError("split ratios must be positive");
  const std::size_t total = p[0] + p[1] + p[2];
  const std::size_t b1 = length * p[0] / total;
  const std::size_t b2 = length * (p[0] + p[1]) / total;
  SplitRanges s{{0, b1}, {b1, b2}, {b2, length}};
  if (s.train.size() == 0 || s.val.size() == 0 || s.test.size() == 0) {
    throw ContractError("split of length " + std::to_string(length) + " by " + ratios.str() +
                        " leaves an empty segment");
  }
  return s;
}

inline std::size_t window_count(std::size_t len, std::size_t lookback, std::size_t horizon) {
  return len + 1 >= lookback + horizon + 1 ? len + 1 - lookback - horizon : 0;
}

/// One aligned (history, future) sample; y immediately follows x in source time.
struct WindowedSample {
  Tensor x_endo;  // [N x T]
  Tensor x_exo;   // [D x T]
  Tensor y_endo;  // [N x F]
  Tensor y_exo;   // [D x F]
  std::size_t origin = 0;
};

/// Stacked samples: x_endo [B x N x T], x_exo [B x D x T], y_exo [B x D x F],
/// y_endo [B x N x F].
struct Batch {
  Tensor x_endo;
  Tensor x_exo;
  Tensor y_exo;
  Tensor y_endo;
  std::size_t size() const { return x_endo.dim(0); }
};

/// All windows of one contiguous range: origins o with o + T + F <= end.
class WindowSet {
 public:
  WindowSet() = default;
  WindowSet(std::shared_ptr<const RawDataset> data, Range range, std::size_t lookback, std::size_t horizon)
      : data_(std::move(data)), range_(range), lookback_(lookback), horizon_(horizon) {
    const std::size_t n = window_count(range.size(), lookback, horizon);
    short_range_ = n == 0;
    origins_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) origins_.push_back(range.begin + i);
  }

  std::size_t size() const { return origins_.size(); }
  bool empty() const { return origins_.empty(); }
  /// True when the range was too short for even one window.
  bool short_range() const { return short_range_; }
  std::size_t lookback() const { return lookback_; }
  std::size_t horizon() const { return horizon_; }
  const std::vector<std::size_t>& origins() const { return origins_; }
  const RawDataset& dataset() const { return *data_; }
  Range range() const { return range_; }

  WindowedSample sample(std::size_t i) const {
    Batch b = batch(std::vector<std::size_t>{i});
    auto strip = [](const Tensor& t) { return Tensor({t.dim(1), t.dim(2)}, t.vec()); };
    return {strip(b.x_endo), strip(b.x_exo), strip(b.y_endo), strip(b.y_exo), origins_.at(i)};
  }

  Batch batch(std::span<const std::size_t> indices) const {
    const auto& ds = *data_;
    const std::size_t n = ds.endo_count, d = ds.exo_count(), bsz = indices.size();
    if (bsz == 0) throw ContractError("empty batch");
    std::vector<double> xe(bsz * n * lookback_), xx(bsz * d * lookback_), ye(bsz * n * horizon_),
        yx(bsz * d * horizon_);
    for (std::size_t b = 0; b < bsz; ++b) {
      const std::size_t o = origins_.at(indices[b]);
      for (std::size_t c = 0; c < ds.channels(); ++c) {
        const double* src = ds.values.data() + c * ds.length + o;
        const bool endo = c >= d;
        const std::size_t ch = endo ? c - d : c;
        double* x = endo ? &xe[(b * n + ch) * lookback_] : &xx[(b * d + ch) * lookback_];
        double* y = endo ? &ye[(b * n + ch) * horizon_] : &yx[(b * d + ch) * horizon_];
        std::copy_n(src, lookback_, x);
        std::copy_n(src + lookback_, horizon_, y);
      }
    }
    return {Tensor({bsz, n, lookback_}, std::move(xe)), Tensor({bsz, d, lookback_}, std::move(xx)),
            Tensor({bsz, d, horizon_}, std::move(yx)), Tensor({bsz, n, horizon_}, std::move(ye))};
  }

  Batch batch(std::size_t first, std::size_t count) const {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = first + i;
    return batch(idx);
  }

 private:
  std::shared_ptr<const RawDataset> data_;
  Range range_;
  std::size_t lookback_ = 0;
  std::size_t horizon_ = 0;
  std::vector<std::size_t> origins_;
  bool short_range_ = false;
};

inline WindowSet window(std::shared_ptr<const RawDataset> data, Range range, std::size_t lookback,
                        std::size_t horizon) {
  return WindowSet(std::move(data), range, lookback, horizon);
}

/// Dataset plus its chronological split and window geometry.
struct DatasetBundle {
  std::shared_ptr<const RawDataset> data;
  SplitRanges splits;
  std::size_t lookback = 0;
  std::size_t horizon = 0;

  DatasetBundle() = default;
  DatasetBundle(std::shared_ptr<const RawDataset> d, const SplitRatios& ratios, std::size_t t, std::size_t f)
      : data(std::move(d)), splits(split(data->length, ratios)), lookback(t), horizon(f) {}

  WindowSet train() const { return window(data, splits.train, lookback, horizon); }
  WindowSet val() const { return window(data, splits.val, lookback, horizon); }
  WindowSet test() const { return window(data, splits.test, lookback, horizon); }

  WindowSet segment(std::string_view name) const {
    if (name == "train") return train();
    if (name == "val") return val();
    if (name == "test") return test();
    throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val or test)");
  }
};

// ---------------------------------------------------------------------------
// Synthetic data with planted temporal and channel structure

/// Exogenous channel j: AR(2) plus a sinusoid. Endogenous channel i:
/// endo_t = rho * endo_{t-1} + (B exo_t)_i + noise.
struct SyntheticSpec {
  std::size_t n_exo = 4;
  std::size_t n_endo = 1;
  std::size_t length = 5000;
  std::vector<std::array<double, 2>> ar;  // per exogenous channel; empty -> defaults
  double season_period = 24.0;
  double season_amplitude = 1.0;
  std::vector<double> mix;  // B, [N x D] row-major; empty -> defaults
  double endo_ar = 0.8;
  double exo_noise = 0.3;
  double endo_noise = 0.1;
  std::size_t burn_in = 100;
  std::uint64_t seed = 0;

  std::array<double, 2> ar_for(std::size_t j) const {
    if (!ar.empty()) return ar.at(j);
    return {0.4 + 0.2 * static_cast<double>(j % 2), 0.25};
  }

  double mix_at(std::size_t i, std::size_t j) const {
    if (!mix.empty()) return mix.at(i * n_exo + j);
    return (i + j) % 2 == 0 ? 0.8 : -0.4;
  }

  void validate() const {
    if (n_exo == 0 || n_endo == 0 || length == 0) throw SpecError("synthetic extents must be positive");
    if (!ar.empty() && ar.size() != n_exo) throw SpecError("need one AR pair per exogenous channel");
    if (!mix.empty() && mix.size() != n_endo * n_exo) throw SpecError("mixing matrix must be N x D");
    for (std::size_t j = 0; j < n_exo; ++j) {
      auto [a1, a2] = ar_for(j);
      // AR(2) stationarity triangle: all characteristic roots outside the unit circle.
      if (!(std::abs(a2) < 1.0 && a1 + a2 < 1.0 && a2 - a1 < 1.0)) {
        throw SpecError("AR coefficients of exogenous channel " + std::to_string(j) + " are not stationary");
      }
    }
    if (!(std::abs(endo_ar) < 1.0)) throw SpecError("endogenous AR coefficient must satisfy |rho| < 1");
    if (exo_noise < 0.0 || endo_noise < 0.0) throw SpecError("noise std must be >= 0");
    if (season_period <= 0.0) throw SpecError("season period must be positive");
  }
};

inline RawDataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t d = spec.n_exo, n = spec.n_endo, total = spec.length + spec.burn_in;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> exo(d * total, 0.0), endo(n * total, 0.0);
  for (std::size_t t = 0; t < total; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      auto [a1, a2] = spec.ar_for(j);
      const double prev1 = t >= 1 ? exo[j * total + t - 1] : 0.0;
      const double prev2 = t >= 2 ? exo[j * total + t - 2] : 0.0;
      const double phase = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(d);
      const double season =
          spec.season_amplitude *
          std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / spec.season_period + phase);
      exo[j * total + t] = a1 * prev1 + a2 * prev2 + season + spec.exo_noise * normal(rng);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double drive = 0.0;
      for (std::size_t j = 0; j < d; ++j) drive += spec.mix_at(i, j) * exo[j * total + t];
      const double prev = t >= 1 ? endo[i * total + t - 1] : 0.0;
      endo[i * total + t] = spec.endo_ar * prev + drive + spec.endo_noise * normal(rng);
    }
  }
  RawDataset ds;
  ds.length = spec.length;
  ds.endo_count = n;
  ds.metadata = "synthetic seed=" + std::to_string(spec.seed);
  for (std::size_t j = 0; j < d; ++j) {
    ds.names.push_back("exo" + std::to_string(j));
    ds.values.insert(ds.values.end(), exo.begin() + j * total + spec.burn_in, exo.begin() + (j + 1) * total);
  }
  for (std::size_t i = 0; i < n; ++i) {
    ds.names.push_back("endo" + std::to_string(i));
    ds.values.insert(ds.values.end(), endo.begin() + i * total + spec.burn_in, endo.begin() + (i + 1) * total);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Instance normalization

/// Per-row (channel, or sample-channel) location and scale.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Statistics over the last axis of x [..., L], one entry per leading row.
/// Variance below 1e-12 clamps the scale to 1 and anchors the location at the
/// first value so constant rows map to exact zeros.
inline NormStats normalize_stats(const Tensor& x) {
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.numel() / len;
  NormStats s{std::vector<double>(rows), std::vector<double>(rows)};
  const auto& v = x.vec();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = v.data() + r * len;
    double mu = 0.0;
    for (std::size_t i = 0; i < len; ++i) mu += p[i];
    mu /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t i = 0; i < len; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<double>(len);
    if (var < 1e-12) {
      s.mean[r] = p[0];
      s.std[r] = 1.0;
    } else {
      s.mean[r] = mu;
      s.std[r] = std::sqrt(var);
    }
  }
  return s;
}

namespace detail {
inline void check_rows(const Tensor& x, const NormStats& s) {
  if (x.numel() / x.shape().back() != s.mean.size()) {
    throw DimensionError("normalization statistics cover " + std::to_string(s.mean.size()) + " rows, tensor " +
                         shape_str(x.shape()) + " has " + std::to_string(x.numel() / x.shape().back()));
  }
}
}  // namespace detail

/// (x - mean) / std row-wise; returns a constant (graph-free) tensor.
inline Tensor normalize_apply(const Tensor& x, const NormStats& s) {
  detail::check_rows(x, s);
  const std::size_t len = x.shape().back();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x[i] - s.mean[i / len]) / s.std[i / len];
  return Tensor(x.shape(), std::move(out));
}

inline Tensor normalize_invert(const Tensor& x, const NormStats& s) {
  detail::check_rows(x, s);
  const std::size_t len = x.shape().back();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s.std[i / len] + s.mean[i / len];
  return Tensor(x.shape(), std::move(out));
}

/// Dataset matrix as a [C x L] tensor.
inline Tensor as_tensor(const RawDataset& ds) { return Tensor({ds.channels(), ds.length}, ds.values); }

}  // namespace dag
