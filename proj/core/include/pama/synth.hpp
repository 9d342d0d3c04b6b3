#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pama/geometry.hpp"
#include "pama/rng.hpp"

namespace pama {

/// A disc of prototype `prototype` centred at (dx, dy) grid units from the motif centre.
struct MotifKernel {
  double dx = 0.0;
  double dy = 0.0;
  double radius = 4.0;
  std::uint32_t prototype = 1;
};

struct ClassMotif {
  std::vector<MotifKernel> kernels;
};

/// Generator for labeled bags whose classes differ by the arrangement of
/// feature motifs. Prototype 0 is the background.
struct SynthSpec {
  std::uint32_t n_classes = 4;
  std::size_t feature_dim = 32;
  std::size_t min_patches = 128;
  std::size_t max_patches = 512;
  std::int32_t grid = 36;             // bags live on a grid x grid lattice
  std::int32_t center_jitter = 1;     // motif centre offset, uniform in [-j, j] per axis
  std::uint32_t n_prototypes = 4;
  double noise = 0.1;                 // per-feature Gaussian sigma
  std::vector<ClassMotif> classes;    // one per class
  bool rotation_augment = true;       // test split spans every rotation
  std::uint32_t n_rotations = 4;      // rotation_k turns the layout by 2*pi*k/n_rotations
  std::array<std::uint32_t, 2> arrangement_pair{0, 1};  // classes that differ only in layout
  std::array<std::size_t, 3> split_counts{200, 50, 100};  // train, val, test
  GeometryConfig geometry{32, 8, 32, 50, 0};
  std::uint64_t seed = 0;

  /// 4 classes: A|B adjacent, A..B far apart, and A/B/C with C on either side.
  static SynthSpec defaults();
  void validate() const;
};

nlohmann::json to_json(const SynthSpec& spec);
/// Strict: unknown keys raise ConfigError. Missing keys keep their defaults.
SynthSpec synth_spec_from_json(const nlohmann::json& j);

/// Unit-norm prototype vectors, n_prototypes x feature_dim, fixed by the spec seed.
std::vector<std::vector<double>> synth_prototypes(const SynthSpec& spec);

struct SynthBag {
  SlideBag bag;
  std::vector<std::uint32_t> prototype;  // prototype id per patch
};

/// One bag of class `class_id`. The layout is sampled in the canonical frame,
/// every coordinate is turned by rotation_k steps about the grid centre, and
/// patches are then listed row-major in the rotated frame. The same rng state
/// gives the same patches and features for every rotation_k.
SynthBag gen_bag(const SynthSpec& spec, std::uint32_t class_id, std::uint32_t rotation_k, Rng& rng);

/// Quarter-turn map used by gen_bag: (col, row) -> (grid-1-row, col), applied k times.
GridPoint rotate_point(GridPoint p, std::uint32_t k, std::int32_t grid);

struct ManifestEntry {
  std::string file;  // relative to the dataset directory
  std::uint32_t label = 0;
  std::string split;  // "train", "val" or "test"
  std::uint32_t rotation_k = 0;
};

struct Manifest {
  SynthSpec spec;
  std::vector<ManifestEntry> entries;
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);

/// Writes split_counts bags per split under out_dir/bags plus out_dir/manifest.json.
/// Classes cycle within each split; train and val use rotation 0.
Manifest gen_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace pama
