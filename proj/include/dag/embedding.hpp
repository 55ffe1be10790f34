#pragma once

#include <random>
#include <string>

#include "dag/ops.hpp"
#include "dag/optim.hpp"

namespace dag {

/// Lookback split into `patch_count()` windows of `patch_len` every `stride`
/// steps; a trailing remainder that does not fill a patch is dropped.
struct PatchGeometry {
  std::size_t lookback = 96;
  std::size_t patch_len = 16;
  std::size_t stride = 16;

  void validate() const {
    if (lookback == 0 || patch_len == 0 || stride == 0) {
      throw GeometryError("patch geometry extents must be positive");
    }
    if (patch_len > lookback) {
      throw GeometryError("patch length " + std::to_string(patch_len) + " exceeds lookback " +
                          std::to_string(lookback));
    }
  }

  std::size_t patch_count() const {
    validate();
    return (lookback - patch_len) / stride + 1;
  }
};

/// series: [T] or [..., T] -> [M x P] or [..., M, P].
inline Tensor patchify(const Tensor& series, const PatchGeometry& geom) {
  geom.validate();
  if (series.shape().back() != geom.lookback) {
    throw DimensionError("patchify: series length " + std::to_string(series.shape().back()) +
                         " does not match lookback " + std::to_string(geom.lookback));
  }
  return unfold(series, geom.patch_len, geom.stride);
}

struct PatchEmbedParams {
  Tensor projection;  // [P x d]
  Tensor positional;  // [M x d], learned

  PatchEmbedParams() = default;
  PatchEmbedParams(const PatchGeometry& geom, std::size_t d_model, std::mt19937_64& rng)
      : projection(init_uniform({geom.patch_len, d_model}, geom.patch_len, rng)) {
    std::uniform_real_distribution<double> small(-0.02, 0.02);
    std::vector<double> pos(geom.patch_count() * d_model);
    for (auto& v : pos) v = small(rng);
    positional = Tensor::parameter({geom.patch_count(), d_model}, std::move(pos));
  }

  void collect(const std::string& prefix, Parameters& out) const {
    out.push_back({prefix + ".projection", projection});
    out.push_back({prefix + ".positional", positional});
  }
};

/// patches: [..., M, P] -> tokens [..., M, d] = patches * projection + positional.
inline Tensor patch_embed(const Tensor& patches, const PatchEmbedParams& params) {
  if (patches.rank() < 2) throw DimensionError("patch_embed expects [M x P], got " + shape_str(patches.shape()));
  const std::size_t m = patches.dim(patches.rank() - 2);
  if (m != params.positional.dim(0)) {
    throw DimensionError("patch_embed: " + std::to_string(m) + " patches vs positional table " +
                         shape_str(params.positional.shape()));
  }
  if (patches.shape().back() != params.projection.dim(0)) {
    throw DimensionError("patch_embed: patch length " + std::to_string(patches.shape().back()) +
                         " vs projection " + shape_str(params.projection.shape()));
  }
  return add(matmul(patches, params.projection), params.positional);
}

struct SeriesEmbedParams {
  Tensor projection;  // [L x d]

  SeriesEmbedParams() = default;
  SeriesEmbedParams(std::size_t length, std::size_t d_model, std::mt19937_64& rng)
      : projection(init_uniform({length, d_model}, length, rng)) {}

  void collect(const std::string& prefix, Parameters& out) const {
    out.push_back({prefix + ".projection", projection});
  }
};

/// series: [..., C, L] -> tokens [..., C, d], one token per channel.
inline Tensor series_embed(const Tensor& series, const SeriesEmbedParams& params) {
  if (series.rank() < 2 || series.shape().back() != params.projection.dim(0)) {
    throw DimensionError("series_embed: series " + shape_str(series.shape()) + " vs projection " +
                         shape_str(params.projection.shape()));
  }
  return matmul(series, params.projection);
}

}  // namespace dag
