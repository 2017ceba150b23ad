#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include <Eigen/Dense>

#include "cue/rng.hpp"
#include "cue/synth.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "cue") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
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

// N x K rows on the simplex; `peaked` sharpens rows toward a random class.
inline Eigen::MatrixXd random_prob_samples(cue::Rng& rng, int n, int k, double peaked = 0.0) {
  Eigen::MatrixXd p(n, k);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < k; ++c) p(r, c) = -std::log(1.0 - rng.uniform());
    if (peaked > 0.0) p(r, static_cast<int>(rng.below(static_cast<std::uint64_t>(k)))) += peaked;
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

// Small synthetic dataset for tests that only need structure.
inline cue::SynthSpec small_spec(std::uint64_t seed, int n_items = 160) {
  return cue::default_synth_spec(n_items, 4, seed);
}

}  // namespace testing
