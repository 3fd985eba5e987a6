#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>

#include "cbr/dataset.hpp"
#include "cbr/numerics.hpp"
#include "cbr/rng.hpp"
#include "cbr/training.hpp"

namespace cbr::test {

inline DenseParams random_params(std::size_t in, std::size_t hidden, std::size_t out,
                                 std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  DenseParams p = DenseParams::zeros(in, hidden, out);
  for (auto block : p.blocks()) {
    for (double& v : block) {
      v = rng.uniform(-scale, scale);
    }
  }
  return p;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                            double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.flat()) {
    v = rng.uniform(lo, hi);
  }
  return m;
}

// Default planted generator at a size the unit tests can train quickly.
inline GeneratorSpec small_spec(std::size_t records = 600) {
  GeneratorSpec spec = default_generator_spec();
  spec.n_records = records;
  return spec;
}

inline TrainConfig fast_config() {
  TrainConfig c;
  c.concept_head.max_epochs = 12;
  c.concept_head.hidden_dim = 64;
  c.suitability_head.max_epochs = 12;
  c.suitability_head.hidden_dim = 48;
  c.blackbox_head.max_epochs = 8;
  c.blackbox_head.hidden_dim = 64;
  c.factorization_head.max_epochs = 8;
  c.factorization_head.hidden_dim = 64;
  c.model_embedding_dim = 16;
  return c;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cbr_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

}  // namespace cbr::test
