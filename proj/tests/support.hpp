#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "cpt/label_space.hpp"
#include "cpt/matrix.hpp"
#include "cpt/objectives.hpp"
#include "cpt/rng.hpp"

namespace cpt::testing {

inline LabelSpace make_space(const std::vector<std::pair<std::string, std::size_t>>& blocks) {
  LabelSpace space;
  for (const auto& [name, count] : blocks) {
    const ModalityId m = space.register_modality(name);
    std::vector<std::string> labels;
    for (std::size_t k = 0; k < count; ++k) labels.push_back(fmt::format("{}{}", name, k));
    space.add_labels(m, labels);
  }
  return space;
}

inline std::vector<double> random_unit(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  double n = 0.0;
  do {
    for (auto& x : v) x = rng.normal();
    n = std::sqrt(dot(std::span<const double>(v), std::span<const double>(v)));
  } while (n < 1e-6);
  for (auto& x : v) x /= n;
  return v;
}

inline MatrixD random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  MatrixD m(rows, cols);
  for (auto& x : m.flat()) x = scale * rng.normal();
  return m;
}

inline PoolParams random_pools(const LabelSpace& space, std::size_t d, Rng& rng, double scale = 1.0) {
  PoolParams pools;
  for (std::size_t m = 0; m < space.modality_count(); ++m) pools.push_back(random_matrix(space.size(), d, rng, scale));
  return pools;
}

/// One batch per modality with unit-norm rows and 1..2 positives from the block.
inline std::vector<IntraBatch> random_batches(const LabelSpace& space, std::size_t d, std::size_t batch, Rng& rng) {
  std::vector<IntraBatch> out;
  for (auto m : space.modalities()) {
    IntraBatch b;
    b.modality = m;
    const Block block = space.block(m);
    for (std::size_t k = 0; k < batch; ++k) {
      b.embeddings.push_row(random_unit(d, rng));
      std::vector<std::size_t> pos{block.start + rng.below(block.count)};
      if (block.count > 1 && rng.uniform() < 0.5) {
        std::size_t extra = block.start + rng.below(block.count);
        if (extra != pos[0]) pos.push_back(extra);
      }
      std::sort(pos.begin(), pos.end());
      b.positives.push_back(pos);
    }
    out.push_back(std::move(b));
  }
  return out;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / fmt::format("cpt-test-{}-{}", tag, counter()++);
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
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::filesystem::path path_;
};

}  // namespace cpt::testing
