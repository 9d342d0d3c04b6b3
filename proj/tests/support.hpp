#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "pama/rng.hpp"
#include "pama/synth.hpp"
#include "pama/tensor.hpp"

namespace pama::test {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("pama_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Small variant of the default spec: fast enough for unit-level training runs.
inline SynthSpec tiny_spec() {
  SynthSpec s = SynthSpec::defaults();
  s.feature_dim = 8;
  s.min_patches = 48;
  s.max_patches = 64;
  s.split_counts = {8, 4, 8};
  s.geometry.patches_per_anchor = 16;
  return s;
}

}  // namespace pama::test
