#include "cpt/prompt_pool.hpp"

#include <cmath>

#include "cpt/binary_io.hpp"
#include "cpt/error.hpp"
#include "cpt/rng.hpp"

namespace cpt {

namespace {

constexpr std::uint32_t kPoolVersion = 1;

float init_value(const PoolInitConfig& cfg, ModalityId modality, std::size_t row, std::size_t col) {
  const double z = keyed_normal({stream::kPoolInit, cfg.seed, modality.value, row, col});
  return static_cast<float>(cfg.mean + cfg.std * z);
}

}  // namespace

void PoolInitConfig::validate() const {
  if (kind == Kind::kGaussian && !(std > 0.0 && std::isfinite(std))) fail("pool init: std must be positive, got {}", std);
  if (!std::isfinite(mean)) fail("pool init: mean must be finite");
}

PromptPool init_pool(const LabelSpace& space, ModalityId modality, const PoolInitConfig& cfg, std::size_t dim) {
  if (dim < 2) fail("pool init: dimension must be >= 2, got {}", dim);
  if (cfg.kind != PoolInitConfig::Kind::kGaussian) fail("pool init: from_embeddings requires class embeddings");
  cfg.validate();
  space.modality_name(modality);

  PromptPool pool{modality, MatrixF(space.size(), dim), std::vector<std::uint8_t>(space.size(), 0)};
  for (std::size_t r = 0; r < pool.rows(); ++r) {
    for (std::size_t c = 0; c < dim; ++c) pool.params(r, c) = init_value(cfg, modality, r, c);
  }
  return pool;
}

PromptPool init_pool_from_embeddings(const LabelSpace& space, ModalityId modality, const MatrixF& class_embeddings) {
  space.modality_name(modality);
  if (class_embeddings.rows() != space.size()) {
    fail("pool init: {} class embeddings for {} labels", class_embeddings.rows(), space.size());
  }
  if (class_embeddings.cols() < 2) fail("pool init: dimension must be >= 2");
  for (std::size_t r = 0; r < class_embeddings.rows(); ++r) {
    for (float v : class_embeddings.row(r)) {
      if (!std::isfinite(v)) fail("pool init: non-finite value in class embedding row {}", r);
    }
  }
  return PromptPool{modality, class_embeddings, std::vector<std::uint8_t>(space.size(), 0)};
}

PromptPool extend_pool(const PromptPool& pool, const std::vector<std::size_t>& remap, std::size_t new_rows,
                       const PoolInitConfig& cfg, bool freeze_old) {
  if (remap.size() != pool.rows()) fail("extend_pool: remap covers {} rows, pool has {}", remap.size(), pool.rows());
  if (cfg.kind != PoolInitConfig::Kind::kGaussian) fail("extend_pool: new rows need a gaussian init config");
  cfg.validate();

  const std::size_t n = pool.rows() + new_rows;
  std::vector<std::uint8_t> taken(n, 0);
  for (std::size_t target : remap) {
    if (target >= n) fail("extend_pool: remap target {} out of range {}", target, n);
    if (taken[target]) fail("extend_pool: remap is not injective (row {})", target);
    taken[target] = 1;
  }

  PromptPool out{pool.modality, MatrixF(n, pool.dim()), std::vector<std::uint8_t>(n, 0)};
  for (std::size_t old = 0; old < remap.size(); ++old) {
    const std::size_t target = remap[old];
    std::copy(pool.params.row(old).begin(), pool.params.row(old).end(), out.params.row(target).begin());
    out.frozen[target] = freeze_old ? 1 : pool.frozen[old];
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (taken[r]) continue;
    for (std::size_t c = 0; c < pool.dim(); ++c) out.params(r, c) = init_value(cfg, pool.modality, r, c);
  }
  return out;
}

MatrixD normalized_rows(const MatrixD& rows) {
  MatrixD out(rows.rows(), rows.cols());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const double n = norm2(rows.row(r));
    if (!(n > 0.0)) fail("zero-norm prompt row {}", r);
    for (std::size_t c = 0; c < rows.cols(); ++c) out(r, c) = rows(r, c) / n;
  }
  return out;
}

MatrixD normalized_rows(const PromptPool& pool) { return normalized_rows(pool.params.cast<double>()); }

std::string encode_pool(const PromptPool& pool) {
  io::ByteWriter w;
  w.magic("CPTP");
  w.u32(kPoolVersion);
  w.u32(pool.modality.value);
  w.u32(static_cast<std::uint32_t>(pool.rows()));
  w.u32(static_cast<std::uint32_t>(pool.dim()));
  w.f32s(pool.params.flat());
  for (auto f : pool.frozen) w.u8(f ? 1 : 0);
  return w.bytes();
}

PromptPool decode_pool(std::string bytes, const std::string& origin) {
  io::ByteReader r(std::move(bytes), origin);
  r.expect_magic("CPTP");
  const std::uint32_t version = r.u32();
  if (version != kPoolVersion) fail("{}: unsupported pool version {}", origin, version);
  PromptPool pool;
  pool.modality = ModalityId{r.u32()};
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  pool.params = MatrixF(n, d);
  r.f32s(pool.params.flat());
  pool.frozen.resize(n);
  for (auto& f : pool.frozen) {
    f = r.u8();
    if (f > 1) fail("{}: invalid freeze flag {}", origin, f);
  }
  r.expect_end();
  return pool;
}

void write_pool(const PromptPool& pool, const std::filesystem::path& path) {
  io::write_text_file(path, encode_pool(pool));
}

PromptPool read_pool(const std::filesystem::path& path) {
  return decode_pool(io::read_text_file(path), path.string());
}

}  // namespace cpt
