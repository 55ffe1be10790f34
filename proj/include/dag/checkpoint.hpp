#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "dag/config.hpp"
#include "dag/dag_model.hpp"
#include "dag/hash.hpp"

namespace dag {

// Layout, all integers little-endian:
//   "DAGCKPT1" | u32 version | u64 n | n bytes config text
//   u64 count | count x (u32 len, name, u32 rank, rank x u64 dim, f64 values)
//   u64 FNV-1a of every preceding byte

inline constexpr char kCheckpointMagic[8] = {'D', 'A', 'G', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct CheckpointData {
  std::string config_text;
  std::vector<TensorRecord> records;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }

  std::string_view bytes(std::uint64_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;

  void need(std::uint64_t n) const {
    if (n > remaining()) throw ParseError("checkpoint is truncated");
  }

  std::uint64_t get(int n) {
    need(n);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += n;
    return v;
  }
};

}  // namespace detail

inline std::string encode_checkpoint(const CheckpointData& ck) {
  detail::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, sizeof kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.u64(ck.config_text.size());
  w.bytes(ck.config_text);
  w.u64(ck.records.size());
  for (const auto& r : ck.records) {
    if (numel_of(r.shape) != r.values.size()) throw ContractError("checkpoint record '" + r.name + "' is inconsistent");
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name);
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) w.u64(d);
    for (double v : r.values) w.f64(v);
  }
  std::string out = w.str();
  detail::ByteWriter tail;
  tail.u64(fnv1a(out));
  return out + tail.str();
}

inline CheckpointData decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof kCheckpointMagic + 8 ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw ParseError("not a checkpoint (bad magic)");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  detail::ByteReader trailer(bytes.substr(bytes.size() - 8));
  if (trailer.u64() != fnv1a(body)) throw ParseError("checkpoint checksum mismatch");

  detail::ByteReader r(body);
  r.bytes(sizeof kCheckpointMagic);
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(v));
  }
  CheckpointData ck;
  ck.config_text = std::string(r.bytes(r.u64()));
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorRecord rec;
    rec.name = std::string(r.bytes(r.u32()));
    const std::uint32_t rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) rec.shape.push_back(r.u64());
    const std::size_t n = numel_of(rec.shape);
    if (n > r.remaining() / 8) throw ParseError("checkpoint is truncated");
    rec.values.resize(n);
    for (auto& v : rec.values) v = r.f64();
    ck.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw ParseError("checkpoint has trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const CheckpointData& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  const std::string bytes = encode_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

inline std::vector<TensorRecord> records_of(const Parameters& params) {
  std::vector<TensorRecord> out;
  for (const auto& p : params) out.push_back({p.name, p.tensor.shape(), p.tensor.vec()});
  return out;
}

/// Copies record values into same-named parameters. Every parameter must be
/// present with a matching shape and no record may be left over.
inline void assign_records(const Parameters& params, const std::vector<TensorRecord>& records) {
  std::map<std::string, const TensorRecord*> by_name;
  for (const auto& r : records) {
    if (!by_name.emplace(r.name, &r).second) throw ParseError("checkpoint repeats '" + r.name + "'");
  }
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ParseError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second->shape != p.tensor.shape()) {
      throw ParseError("checkpoint shape " + shape_str(it->second->shape) + " for '" + p.name + "', model has " +
                       shape_str(p.tensor.shape()));
    }
    Tensor t = p.tensor;
    std::copy(it->second->values.begin(), it->second->values.end(), t.mutable_values().begin());
    by_name.erase(it);
  }
  if (!by_name.empty()) throw ParseError("checkpoint has unknown parameter '" + by_name.begin()->first + "'");
}

struct LoadedModel {
  RunConfig config;
  DagModel model;
};

inline void save_model(const std::string& path, const RunConfig& config, const DagModel& model) {
  save_checkpoint(path, {to_text(config), records_of(model.named_parameters())});
}

inline LoadedModel load_model(const std::string& path) {
  CheckpointData ck = read_checkpoint(path);
  RunConfig config = parse_config(ck.config_text);
  DagModel model(config.model);
  assign_records(model.named_parameters(), ck.records);
  return {std::move(config), std::move(model)};
}

}  // namespace dag
