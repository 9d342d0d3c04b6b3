#include "pama/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <string>

#include "pama/detail/bytes.hpp"
#include "pama/errors.hpp"
#include "pama/rng.hpp"

namespace pama {

namespace {

constexpr double kSnap = 1024.0;

double snap(double v) { return std::round(v * kSnap) / kSnap; }

double squared_distance(const GridPoint& p, const AnchorPoint& a) {
  const double dx = static_cast<double>(p.col) - a.x;
  const double dy = static_cast<double>(p.row) - a.y;
  return dx * dx + dy * dy;
}

std::size_t nearest(const GridPoint& p, std::span<const AnchorPoint> centers) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centers.size(); ++k) {
    const double d = squared_distance(p, centers[k]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

AnchorPoint as_anchor(const GridPoint& p) { return {static_cast<double>(p.col), static_cast<double>(p.row)}; }

std::vector<AnchorPoint> kmeans_plus_plus(std::span<const GridPoint> coords, std::size_t k, Rng& rng) {
  std::vector<AnchorPoint> centers;
  centers.reserve(k);
  centers.push_back(as_anchor(coords[rng.uniform_index(coords.size())]));
  std::vector<double> d2(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) d2[i] = squared_distance(coords[i], centers[0]);
  while (centers.size() < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = rng.uniform_index(coords.size());
    } else {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = coords.size() - 1;
      for (std::size_t i = 0; i < coords.size(); ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(as_anchor(coords[pick]));
    for (std::size_t i = 0; i < coords.size(); ++i) {
      d2[i] = std::min(d2[i], squared_distance(coords[i], centers.back()));
    }
  }
  return centers;
}

}  // namespace

void GeometryConfig::validate() const {
  if (patches_per_anchor < 1) throw ConfigError("geometry: patches_per_anchor (c) must be >= 1");
  if (polar_bins < 2) throw ConfigError("geometry: polar_bins (N) must be >= 2");
  if (max_distance < 1) throw ConfigError("geometry: max_distance (D_max) must be >= 1");
  if (kmeans_iters < 1) throw ConfigError("geometry: kmeans_iters must be >= 1");
}

Tensor SlideBag::feature_tensor() const {
  std::vector<double> data(features.begin(), features.end());
  return Tensor(n_patches(), feature_dim, std::move(data));
}

std::size_t anchor_count(std::size_t n_patches, std::uint32_t patches_per_anchor) {
  if (patches_per_anchor == 0) throw ConfigError("patches_per_anchor must be >= 1");
  return std::max<std::size_t>(1, n_patches / patches_per_anchor);
}

std::vector<AnchorPoint> cluster_anchors(std::span<const GridPoint> coords, std::uint32_t patches_per_anchor,
                                         std::uint64_t seed, std::uint32_t max_iters) {
  if (coords.empty()) throw DataError("cluster_anchors: bag has no patches");
  const std::size_t k = anchor_count(coords.size(), patches_per_anchor);
  Rng rng(seed);
  std::vector<AnchorPoint> centers = kmeans_plus_plus(coords, k, rng);

  std::vector<std::size_t> assign(coords.size(), k);
  for (std::uint32_t iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const std::size_t a = nearest(coords[i], centers);
      changed = changed || a != assign[i];
      assign[i] = a;
    }
    if (!changed && iter > 0) break;

    std::vector<std::int64_t> sx(k, 0), sy(k, 0), count(k, 0);
    for (std::size_t i = 0; i < coords.size(); ++i) {
      sx[assign[i]] += coords[i].col;
      sy[assign[i]] += coords[i].row;
      ++count[assign[i]];
    }
    // Points already used to re-seed an empty cluster in this round.
    std::set<std::size_t> used;
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) {
        centers[c] = {snap(static_cast<double>(sx[c]) / static_cast<double>(count[c])),
                      snap(static_cast<double>(sy[c]) / static_cast<double>(count[c]))};
        continue;
      }
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < coords.size(); ++i) {
        if (used.contains(i)) continue;
        const double d = squared_distance(coords[i], centers[assign[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      used.insert(far);
      centers[c] = as_anchor(coords[far]);
    }
  }

  // Pool rows bind to anchors by index, so order centres by distance from the
  // coordinate centroid rather than by where k-means++ happened to start.
  double mx = 0.0, my = 0.0;
  for (const GridPoint& p : coords) {
    mx += p.col;
    my += p.row;
  }
  mx /= static_cast<double>(coords.size());
  my /= static_cast<double>(coords.size());
  std::vector<double> radius(k);
  for (std::size_t c = 0; c < k; ++c) {
    radius[c] = (centers[c].x - mx) * (centers[c].x - mx) + (centers[c].y - my) * (centers[c].y - my);
  }
  std::vector<std::size_t> order(k);
  for (std::size_t c = 0; c < k; ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return radius[a] < radius[b]; });
  std::vector<AnchorPoint> sorted(k);
  for (std::size_t c = 0; c < k; ++c) sorted[c] = centers[order[c]];
  return sorted;
}

IndexMatrix quantize_distance(std::span<const GridPoint> coords, std::span<const AnchorPoint> anchors,
                              std::uint32_t max_distance) {
  IndexMatrix d(anchors.size(), coords.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    for (std::size_t j = 0; j < coords.size(); ++j) {
      const double r = std::round(std::sqrt(squared_distance(coords[j], anchors[i])));
      d(i, j) = r >= static_cast<double>(max_distance) ? max_distance : static_cast<std::uint32_t>(r);
    }
  }
  return d;
}

std::uint32_t polar_bin(double dx, double dy, std::uint32_t bins) {
  if (bins < 2) throw ConfigError("polar_bins must be >= 2");
  if (dx == 0.0 && dy == 0.0) return 0;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  if (bins % 4 == 0) {
    // Rotate into the first quadrant with exact sign swaps so quarter turns
    // shift the bin by exactly bins / 4.
    std::uint32_t quadrant = 0;
    double u = dx;
    double v = dy;
    if (dx > 0.0 && dy >= 0.0) {
      quadrant = 0;
    } else if (dx <= 0.0 && dy > 0.0) {
      quadrant = 1;
      u = dy;
      v = -dx;
    } else if (dx < 0.0 && dy <= 0.0) {
      quadrant = 2;
      u = -dx;
      v = -dy;
    } else {
      quadrant = 3;
      u = -dy;
      v = dx;
    }
    const std::uint32_t per_quadrant = bins / 4;
    const double angle = std::atan2(v, u);  // [0, pi/2)
    const auto within = static_cast<std::uint32_t>(std::floor(angle * bins / kTwoPi));
    return quadrant * per_quadrant + std::min(within, per_quadrant - 1);
  }
  double angle = std::atan2(dy, dx);
  if (angle < 0.0) angle += kTwoPi;
  const auto b = static_cast<std::uint32_t>(std::floor(angle * bins / kTwoPi));
  return std::min(b, bins - 1);
}

IndexMatrix polar_bins(std::span<const GridPoint> coords, std::span<const AnchorPoint> anchors, std::uint32_t bins) {
  IndexMatrix p(anchors.size(), coords.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    for (std::size_t j = 0; j < coords.size(); ++j) {
      p(i, j) = polar_bin(static_cast<double>(coords[j].col) - anchors[i].x,
                          static_cast<double>(coords[j].row) - anchors[i].y, bins);
    }
  }
  return p;
}

SlideBag build_bag(std::vector<GridPoint> coords, std::vector<float> features, std::size_t feature_dim,
                   std::optional<std::uint32_t> label, const GeometryConfig& cfg) {
  cfg.validate();
  if (coords.empty()) throw DataError("build_bag: a bag needs at least one patch");
  if (feature_dim == 0) throw DataError("build_bag: feature dimension must be >= 1");
  if (features.size() != coords.size() * feature_dim) {
    throw DimensionError("build_bag: " + std::to_string(coords.size()) + " coordinates but " +
                         std::to_string(features.size()) + " feature values for d_f=" +
                         std::to_string(feature_dim));
  }
  if (label && *label == kUnlabeled) throw DataError("build_bag: label 0xFFFFFFFF is reserved for unlabeled");
  {
    std::vector<GridPoint> sorted = coords;
    std::sort(sorted.begin(), sorted.end());
    auto dup = std::adjacent_find(sorted.begin(), sorted.end());
    if (dup != sorted.end()) {
      throw DataError("build_bag: duplicate patch coordinate (" + std::to_string(dup->col) + ", " +
                      std::to_string(dup->row) + ")");
    }
  }

  SlideBag bag;
  bag.coords = std::move(coords);
  bag.features = std::move(features);
  bag.feature_dim = feature_dim;
  bag.label = label;
  bag.geometry = cfg;
  bag.anchors = cluster_anchors(bag.coords, cfg.patches_per_anchor, cfg.seed, cfg.kmeans_iters);
  bag.distance = quantize_distance(bag.coords, bag.anchors, cfg.max_distance);
  bag.polar = polar_bins(bag.coords, bag.anchors, cfg.polar_bins);
  return bag;
}

std::vector<std::uint8_t> encode_bag(const SlideBag& bag) {
  detail::ByteWriter w;
  w.text("PAMB");
  w.u32(kBagVersion);
  w.u32(static_cast<std::uint32_t>(bag.n_patches()));
  w.u32(static_cast<std::uint32_t>(bag.feature_dim));
  w.u32(bag.label.value_or(kUnlabeled));
  w.u32(bag.geometry.patches_per_anchor);
  w.u32(bag.geometry.polar_bins);
  w.u32(bag.geometry.max_distance);
  w.u64(bag.geometry.seed);
  for (const GridPoint& p : bag.coords) {
    w.i32(p.col);
    w.i32(p.row);
  }
  for (float f : bag.features) w.f32(f);
  return std::move(w.bytes());
}

SlideBag decode_bag(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "PAMB");
  const auto magic = r.take(4);
  if (std::string(magic.begin(), magic.end()) != "PAMB") throw FormatError("PAMB: bad magic", 0);
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kBagVersion) {
    throw FormatError("PAMB: unsupported version " + std::to_string(version), version_at);
  }
  const std::uint32_t n_p = r.u32();
  const std::uint32_t d_f = r.u32();
  const std::uint32_t label = r.u32();
  GeometryConfig cfg;
  cfg.patches_per_anchor = r.u32();
  cfg.polar_bins = r.u32();
  cfg.max_distance = r.u32();
  cfg.seed = r.u64();
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("PAMB: invalid geometry header: ") + e.what(), 20);
  }

  const std::uint64_t need = static_cast<std::uint64_t>(n_p) * 8 + static_cast<std::uint64_t>(n_p) * d_f * 4;
  if (need > r.remaining()) {
    throw FormatError("PAMB: truncated payload, header declares n_p=" + std::to_string(n_p) + " d_f=" +
                          std::to_string(d_f) + " (" + std::to_string(need) + " bytes) but only " +
                          std::to_string(r.remaining()) + " bytes follow",
                      bytes.size());
  }
  if (need < r.remaining()) {
    throw FormatError("PAMB: " + std::to_string(r.remaining() - need) + " trailing bytes after payload",
                      r.offset() + need);
  }
  std::vector<GridPoint> coords(n_p);
  for (auto& p : coords) {
    p.col = r.i32();
    p.row = r.i32();
  }
  std::vector<float> features(static_cast<std::size_t>(n_p) * d_f);
  for (float& f : features) f = r.f32();

  std::optional<std::uint32_t> lab;
  if (label != kUnlabeled) lab = label;
  try {
    return build_bag(std::move(coords), std::move(features), d_f, lab, cfg);
  } catch (const DataError& e) {
    throw FormatError(std::string("PAMB: invalid payload: ") + e.what(), 40);
  }
}

void save_bag(const SlideBag& bag, const std::filesystem::path& path) { detail::write_file(path, encode_bag(bag)); }

SlideBag load_bag(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_bag(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

}  // namespace pama
