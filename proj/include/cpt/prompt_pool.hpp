#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cpt/label_space.hpp"
#include "cpt/matrix.hpp"

namespace cpt {

/// Learnable N x d class-prompt matrix for one modality. Parameters are stored
/// in binary32 so that checkpoints round-trip bit-exactly; arithmetic on them
/// happens in binary64.
struct PromptPool {
  ModalityId modality;
  MatrixF params;
  std::vector<std::uint8_t> frozen;

  std::size_t rows() const noexcept { return params.rows(); }
  std::size_t dim() const noexcept { return params.cols(); }
  bool is_frozen(std::size_t row) const { return frozen.at(row) != 0; }
};

struct PoolInitConfig {
  enum class Kind { kGaussian, kFromEmbeddings };
  Kind kind = Kind::kGaussian;
  double mean = 0.0;
  double std = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr std::size_t kDefaultPromptDim = 512;

/// Entry (r, c) is mean + std * z where z is keyed on (seed, modality, r, c),
/// so the value of a cell never depends on how many rows the pool has.
PromptPool init_pool(const LabelSpace& space, ModalityId modality, const PoolInitConfig& cfg,
                     std::size_t dim = kDefaultPromptDim);

PromptPool init_pool_from_embeddings(const LabelSpace& space, ModalityId modality,
                                     const MatrixF& class_embeddings);

/// Moves surviving rows per `remap`, fills `new_rows` fresh rows from `cfg`.
/// With `freeze_old`, every pre-existing row is frozen and new rows are trainable.
PromptPool extend_pool(const PromptPool& pool, const std::vector<std::size_t>& remap, std::size_t new_rows,
                       const PoolInitConfig& cfg, bool freeze_old = false);

/// Row-wise L2 normalization in binary64. Throws on a zero-norm row.
MatrixD normalized_rows(const PromptPool& pool);
MatrixD normalized_rows(const MatrixD& rows);

/// CPTP checkpoint: "CPTP", u32 version, u32 modality, u32 N, u32 d,
/// N*d f32 row-major, N freeze bytes. All little-endian.
void write_pool(const PromptPool& pool, const std::filesystem::path& path);
PromptPool read_pool(const std::filesystem::path& path);
std::string encode_pool(const PromptPool& pool);
PromptPool decode_pool(std::string bytes, const std::string& origin = "<memory>");

}  // namespace cpt
