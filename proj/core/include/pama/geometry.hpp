#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "pama/tensor.hpp"

namespace pama {

/// Patch position on the slide grid, in patch units. x = column, y = row.
struct GridPoint {
  std::int32_t col = 0;
  std::int32_t row = 0;

  friend bool operator==(const GridPoint&, const GridPoint&) = default;
  friend auto operator<=>(const GridPoint&, const GridPoint&) = default;
};

struct AnchorPoint {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const AnchorPoint&, const AnchorPoint&) = default;
};

struct GeometryConfig {
  std::uint32_t patches_per_anchor = 144;  // c
  std::uint32_t polar_bins = 8;            // N
  std::uint32_t max_distance = 32;         // D_max, also the reserved class-token bucket
  std::uint32_t kmeans_iters = 50;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const GeometryConfig&, const GeometryConfig&) = default;
};

/// One slide: patch coordinates and features plus the derived anchor geometry.
///
/// Anchors, `distance` (D, n_k x n_p) and `polar` (P, n_k x n_p) are derived
/// from coordinates and `geometry`; they are never stored on disk.
struct SlideBag {
  std::vector<GridPoint> coords;
  std::vector<float> features;  // n_p x feature_dim, row-major
  std::size_t feature_dim = 0;
  std::optional<std::uint32_t> label;
  GeometryConfig geometry;

  std::vector<AnchorPoint> anchors;
  IndexMatrix distance;
  IndexMatrix polar;

  std::size_t n_patches() const noexcept { return coords.size(); }
  std::size_t n_anchors() const noexcept { return anchors.size(); }
  Tensor feature_tensor() const;
};

/// n_k = max(1, floor(n_p / c)).
std::size_t anchor_count(std::size_t n_patches, std::uint32_t patches_per_anchor);

/// k-means over patch coordinates (k-means++ seeding, Lloyd iterations,
/// empty clusters re-seeded at the point farthest from its centre).
///
/// Centres are snapped to multiples of 1/1024 after every update so the
/// result is exactly equivariant under integer translations and quarter
/// turns of the input. Returned centres are ordered by distance from the
/// coordinate centroid (ties keep k-means order).
std::vector<AnchorPoint> cluster_anchors(std::span<const GridPoint> coords, std::uint32_t patches_per_anchor,
                                         std::uint64_t seed, std::uint32_t max_iters = 50);

/// D(i, j) = min(D_max, round(|coords[j] - anchors[i]|)).
IndexMatrix quantize_distance(std::span<const GridPoint> coords, std::span<const AnchorPoint> anchors,
                              std::uint32_t max_distance);

/// Polar sector of the offset (dx, dy) among `bins` equal sectors counted
/// counter-clockwise from the +x axis. A zero offset maps to bin 0. When
/// `bins` is a multiple of 4, a quarter turn of the offset adds exactly bins/4.
std::uint32_t polar_bin(double dx, double dy, std::uint32_t bins);

IndexMatrix polar_bins(std::span<const GridPoint> coords, std::span<const AnchorPoint> anchors, std::uint32_t bins);

/// Validates inputs and derives anchors, D and P.
SlideBag build_bag(std::vector<GridPoint> coords, std::vector<float> features, std::size_t feature_dim,
                   std::optional<std::uint32_t> label, const GeometryConfig& cfg);

// ---- PAMB file format ---------------------------------------------------
//
// Little-endian: "PAMB", u32 version (1), u32 n_p, u32 d_f, u32 label
// (0xFFFFFFFF = unlabeled), u32 c, u32 N, u32 D_max, u64 seed,
// n_p x (i32 col, i32 row), n_p * d_f f32 features. No padding.

inline constexpr std::uint32_t kBagVersion = 1;
inline constexpr std::uint32_t kUnlabeled = 0xFFFFFFFFu;

std::vector<std::uint8_t> encode_bag(const SlideBag& bag);
/// Parses a PAMB image and recomputes the derived geometry. Throws FormatError.
SlideBag decode_bag(std::span<const std::uint8_t> bytes);

void save_bag(const SlideBag& bag, const std::filesystem::path& path);
SlideBag load_bag(const std::filesystem::path& path);

}  // namespace pama
