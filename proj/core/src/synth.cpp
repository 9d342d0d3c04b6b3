#include "pama/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "pama/config.hpp"
#include "pama/detail/bytes.hpp"
#include "pama/detail/strict_json.hpp"
#include "pama/errors.hpp"

namespace pama {

namespace {

constexpr std::uint64_t kPrototypeStream = 0x70726f746fULL;
constexpr const char* kSplits[3] = {"train", "val", "test"};

}  // namespace

SynthSpec SynthSpec::defaults() {
  SynthSpec s;
  s.classes = {
      ClassMotif{{{-5, 0, 5, 1}, {5, 0, 5, 2}}},
      ClassMotif{{{-11, 0, 5, 1}, {11, 0, 5, 2}}},
      ClassMotif{{{-5, -3, 5, 1}, {5, -3, 5, 2}, {0, 8, 5, 3}}},
      ClassMotif{{{-5, 3, 5, 1}, {5, 3, 5, 2}, {0, -8, 5, 3}}},
  };
  return s;
}

void SynthSpec::validate() const {
  if (n_classes < 2) throw ConfigError("synth: n_classes must be >= 2");
  if (classes.size() != n_classes) {
    throw ConfigError("synth: " + std::to_string(classes.size()) + " class motifs for n_classes = " +
                      std::to_string(n_classes));
  }
  if (feature_dim < 1) throw ConfigError("synth: feature_dim must be >= 1");
  if (n_prototypes < 2) throw ConfigError("synth: n_prototypes must be >= 2 (background plus one motif)");
  if (grid < 2) throw ConfigError("synth: grid must be >= 2");
  const std::size_t cells = static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid);
  if (min_patches < 2 || min_patches > max_patches || max_patches > cells) {
    throw ConfigError("synth: need 2 <= min_patches <= max_patches <= grid^2");
  }
  if (center_jitter < 0) throw ConfigError("synth: center_jitter must be >= 0");
  if (!(noise >= 0.0)) throw ConfigError("synth: noise must be >= 0");
  if (n_rotations != 1 && n_rotations != 2 && n_rotations != 4) {
    throw ConfigError("synth: n_rotations must be 1, 2 or 4 (lattice-exact rotations)");
  }
  for (std::uint32_t c : arrangement_pair) {
    if (c >= n_classes) throw ConfigError("synth: arrangement_pair names a class >= n_classes");
  }
  geometry.validate();

  const double half = (grid - 1) / 2.0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (classes[c].kernels.empty()) throw ConfigError("synth: class " + std::to_string(c) + " has no motif kernels");
    for (const MotifKernel& k : classes[c].kernels) {
      if (k.prototype == 0 || k.prototype >= n_prototypes) {
        throw ConfigError("synth: class " + std::to_string(c) + " uses prototype " + std::to_string(k.prototype) +
                          " (valid: 1.." + std::to_string(n_prototypes - 1) + ")");
      }
      if (!(k.radius > 0.0)) throw ConfigError("synth: motif radius must be positive");
      const double reach = std::max(std::abs(k.dx), std::abs(k.dy)) + k.radius + center_jitter;
      if (reach > half) {
        throw ConfigError("synth: class " + std::to_string(c) + " motif extends out of grid bounds (reach " +
                          std::to_string(reach) + " > " + std::to_string(half) + ")");
      }
    }
  }
}

nlohmann::json to_json(const SynthSpec& s) {
  nlohmann::json classes = nlohmann::json::array();
  for (const ClassMotif& c : s.classes) {
    nlohmann::json kernels = nlohmann::json::array();
    for (const MotifKernel& k : c.kernels) {
      kernels.push_back({{"dx", k.dx}, {"dy", k.dy}, {"radius", k.radius}, {"prototype", k.prototype}});
    }
    classes.push_back(kernels);
  }
  return {{"n_classes", s.n_classes},
          {"feature_dim", s.feature_dim},
          {"min_patches", s.min_patches},
          {"max_patches", s.max_patches},
          {"grid", s.grid},
          {"center_jitter", s.center_jitter},
          {"n_prototypes", s.n_prototypes},
          {"noise", s.noise},
          {"classes", classes},
          {"rotation_augment", s.rotation_augment},
          {"n_rotations", s.n_rotations},
          {"arrangement_pair", s.arrangement_pair},
          {"split_counts", {{"train", s.split_counts[0]}, {"val", s.split_counts[1]}, {"test", s.split_counts[2]}}},
          {"geometry", to_json(s.geometry)},
          {"seed", s.seed}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s = SynthSpec::defaults();
  detail::StrictReader r(j, "synth");
  r.get("n_classes", s.n_classes);
  r.get("feature_dim", s.feature_dim);
  r.get("min_patches", s.min_patches);
  r.get("max_patches", s.max_patches);
  r.get("grid", s.grid);
  r.get("center_jitter", s.center_jitter);
  r.get("n_prototypes", s.n_prototypes);
  r.get("noise", s.noise);
  r.get("rotation_augment", s.rotation_augment);
  r.get("n_rotations", s.n_rotations);
  r.get("arrangement_pair", s.arrangement_pair);
  r.get("seed", s.seed);
  if (const auto* classes = r.child("classes")) {
    if (!classes->is_array()) throw ConfigError("synth.classes: expected an array of kernel lists");
    s.classes.clear();
    for (std::size_t c = 0; c < classes->size(); ++c) {
      const auto& list = (*classes)[c];
      if (!list.is_array()) throw ConfigError("synth.classes[" + std::to_string(c) + "]: expected an array");
      ClassMotif motif;
      for (std::size_t k = 0; k < list.size(); ++k) {
        MotifKernel kernel;
        detail::StrictReader kr(list[k], "synth.classes[" + std::to_string(c) + "][" + std::to_string(k) + "]");
        kr.get("dx", kernel.dx);
        kr.get("dy", kernel.dy);
        kr.get("radius", kernel.radius);
        kr.get("prototype", kernel.prototype);
        kr.finish();
        motif.kernels.push_back(kernel);
      }
      s.classes.push_back(std::move(motif));
    }
  }
  if (const auto* counts = r.child("split_counts")) {
    detail::StrictReader cr(*counts, "synth.split_counts");
    cr.get("train", s.split_counts[0]);
    cr.get("val", s.split_counts[1]);
    cr.get("test", s.split_counts[2]);
    cr.finish();
  }
  if (const auto* g = r.child("geometry")) s.geometry = geometry_config_from_json(*g, "synth.geometry");
  r.finish();
  s.validate();
  return s;
}

std::vector<std::vector<double>> synth_prototypes(const SynthSpec& spec) {
  Rng rng(Rng::derive(spec.seed, {kPrototypeStream}));
  std::vector<std::vector<double>> protos(spec.n_prototypes, std::vector<double>(spec.feature_dim));
  for (auto& p : protos) {
    double norm = 0.0;
    while (norm == 0.0) {
      for (double& v : p) v = rng.normal();
      norm = 0.0;
      for (double v : p) norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : p) v /= norm;
  }
  for (std::size_t a = 0; a < protos.size(); ++a) {
    for (std::size_t b = a + 1; b < protos.size(); ++b) {
      if (protos[a] == protos[b]) throw ConfigError("synth: prototypes are not pairwise distinct");
    }
  }
  return protos;
}

GridPoint rotate_point(GridPoint p, std::uint32_t k, std::int32_t grid) {
  for (std::uint32_t t = 0; t < k % 4; ++t) p = GridPoint{grid - 1 - p.row, p.col};
  return p;
}

SynthBag gen_bag(const SynthSpec& spec, std::uint32_t class_id, std::uint32_t rotation_k, Rng& rng) {
  spec.validate();
  if (class_id >= spec.n_classes) {
    throw ConfigError("gen_bag: class " + std::to_string(class_id) + " >= n_classes " + std::to_string(spec.n_classes));
  }
  if (rotation_k >= spec.n_rotations) {
    throw ConfigError("gen_bag: rotation_k " + std::to_string(rotation_k) + " >= n_rotations " +
                      std::to_string(spec.n_rotations));
  }
  const auto protos = synth_prototypes(spec);
  const std::size_t g = static_cast<std::size_t>(spec.grid);
  const std::size_t cells = g * g;
  const std::size_t n_p = spec.min_patches + rng.uniform_index(spec.max_patches - spec.min_patches + 1);

  std::vector<std::size_t> order(cells);
  for (std::size_t i = 0; i < cells; ++i) order[i] = i;
  for (std::size_t i = 0; i < n_p; ++i) std::swap(order[i], order[i + rng.uniform_index(cells - i)]);
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_p));

  const double half = (spec.grid - 1) / 2.0;
  const auto jitter = [&] {
    return static_cast<double>(static_cast<std::int64_t>(rng.uniform_index(2 * spec.center_jitter + 1)) -
                               spec.center_jitter);
  };
  const double cx = half + jitter();
  const double cy = half + jitter();

  // n_rotations = 2 means half turns, i.e. two quarter steps per unit.
  const std::uint32_t quarter_steps = rotation_k * (4 / spec.n_rotations);

  SynthBag out;
  std::vector<GridPoint> coords(n_p);
  std::vector<float> features(n_p * spec.feature_dim);
  out.prototype.resize(n_p);
  const ClassMotif& motif = spec.classes[class_id];
  for (std::size_t i = 0; i < n_p; ++i) {
    const auto col = static_cast<std::int32_t>(order[i] % g);
    const auto row = static_cast<std::int32_t>(order[i] / g);
    std::uint32_t proto = 0;
    for (const MotifKernel& k : motif.kernels) {
      const double ex = col - (cx + k.dx);
      const double ey = row - (cy + k.dy);
      if (ex * ex + ey * ey <= k.radius * k.radius) {
        proto = k.prototype;
        break;
      }
    }
    out.prototype[i] = proto;
    for (std::size_t f = 0; f < spec.feature_dim; ++f) {
      const double noise = spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0;
      features[i * spec.feature_dim + f] = static_cast<float>(protos[proto][f] + noise);
    }
    coords[i] = rotate_point(GridPoint{col, row}, quarter_steps, spec.grid);
  }
  // Row-major order in the rotated frame, so patch order does not reveal the
  // canonical orientation.
  std::vector<std::size_t> perm(n_p);
  for (std::size_t i = 0; i < n_p; ++i) perm[i] = i;
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return std::pair(coords[a].row, coords[a].col) < std::pair(coords[b].row, coords[b].col);
  });
  std::vector<GridPoint> sorted_coords(n_p);
  std::vector<float> sorted_features(features.size());
  std::vector<std::uint32_t> sorted_proto(n_p);
  for (std::size_t k = 0; k < n_p; ++k) {
    sorted_coords[k] = coords[perm[k]];
    sorted_proto[k] = out.prototype[perm[k]];
    std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(perm[k] * spec.feature_dim), spec.feature_dim,
                sorted_features.begin() + static_cast<std::ptrdiff_t>(k * spec.feature_dim));
  }
  out.prototype = std::move(sorted_proto);
  out.bag = build_bag(std::move(sorted_coords), std::move(sorted_features), spec.feature_dim, class_id, spec.geometry);
  return out;
}

nlohmann::json to_json(const Manifest& m) {
  nlohmann::json bags = nlohmann::json::array();
  for (const ManifestEntry& e : m.entries) {
    bags.push_back({{"file", e.file}, {"class", e.label}, {"split", e.split}, {"rotation_k", e.rotation_k}});
  }
  return {{"spec", to_json(m.spec)}, {"bags", bags}};
}

Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  detail::StrictReader r(j, "manifest");
  const auto* spec = r.child("spec");
  const auto* bags = r.child("bags");
  r.finish();
  if (!spec || !bags || !bags->is_array()) throw ConfigError("manifest: needs \"spec\" and a \"bags\" array");
  m.spec = synth_spec_from_json(*spec);
  for (std::size_t i = 0; i < bags->size(); ++i) {
    ManifestEntry e;
    detail::StrictReader er((*bags)[i], "manifest.bags[" + std::to_string(i) + "]");
    er.get("file", e.file);
    er.get("class", e.label);
    er.get("split", e.split);
    er.get("rotation_k", e.rotation_k);
    er.finish();
    if (e.split != "train" && e.split != "val" && e.split != "test") {
      throw ConfigError("manifest.bags[" + std::to_string(i) + "]: unknown split \"" + e.split + "\"");
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest gen_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  for (std::size_t s = 0; s < 3; ++s) {
    if (spec.split_counts[s] < spec.n_classes) {
      throw ConfigError(std::string("gen_dataset: split ") + kSplits[s] + " needs at least one bag per class");
    }
  }
  Manifest m;
  m.spec = spec;
  std::uint64_t bag_index = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < spec.split_counts[s]; ++i, ++bag_index) {
      ManifestEntry e;
      e.split = kSplits[s];
      e.label = static_cast<std::uint32_t>(i % spec.n_classes);
      const bool rotate = s == 2 && spec.rotation_augment;
      e.rotation_k = rotate ? static_cast<std::uint32_t>((i / spec.n_classes) % spec.n_rotations) : 0;
      char name[64];
      std::snprintf(name, sizeof name, "bags/%s_%04zu.pamb", kSplits[s], i);
      e.file = name;
      Rng rng(Rng::derive(spec.seed, {bag_index}));
      const SynthBag bag = gen_bag(spec, e.label, e.rotation_k, rng);
      save_bag(bag.bag, out_dir / e.file);
      m.entries.push_back(std::move(e));
    }
  }
  const std::string text = to_json(m).dump(2) + "\n";
  detail::write_file(out_dir / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return m;
}

}  // namespace pama
