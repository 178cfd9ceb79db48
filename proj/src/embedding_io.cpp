#include "cpt/embedding_io.hpp"

#include <cmath>

#include "cpt/binary_io.hpp"
#include "cpt/error.hpp"
#include "cpt/rng.hpp"

namespace cpt {

namespace {

constexpr std::uint32_t kEmbeddingVersion = 1;
constexpr std::uint64_t kEncodeClass = 0x656e636c;

std::vector<float> noisy_unit_mean(const MatrixD& anchors, const std::vector<std::size_t>& labels, double sigma,
                                   Rng& rng) {
  if (labels.empty()) fail("encode: empty label set");
  const std::size_t d = anchors.cols();
  std::vector<double> v(d, 0.0);
  for (std::size_t idx : labels) {
    if (idx >= anchors.rows()) fail("encode: label {} outside anchor table", idx);
    for (std::size_t c = 0; c < d; ++c) v[c] += anchors(idx, c);
  }
  const double inv = 1.0 / static_cast<double>(labels.size());
  for (auto& x : v) x *= inv;
  if (sigma > 0.0) {
    for (auto& x : v) x += sigma * rng.normal();
  }
  const double n = norm2(std::span<const double>(v));
  if (!(n > 0.0)) fail("encode: zero resultant vector");
  std::vector<float> out(d);
  for (std::size_t c = 0; c < d; ++c) out[c] = static_cast<float>(v[c] / n);
  return out;
}

void check_unit(const EmbeddingRecord& rec, const std::string& origin) {
  const double n = norm2(std::span<const float>(rec.vector));
  if (!(std::abs(n - 1.0) <= kUnitNormTolerance)) {
    fail("{}: record {} has norm {:.9f}, expected 1 +/- {}", origin, rec.ref_id, n, kUnitNormTolerance);
  }
}

}  // namespace

double SyntheticEncoderConfig::sigma(ModalityId modality) const {
  auto it = noise_sigma.find(modality);
  if (it == noise_sigma.end()) fail("encoder: no noise sigma for modality id {}", modality.value);
  return it->second;
}

void SyntheticEncoderConfig::validate() const {
  if (dim < 2) fail("encoder: dimension must be >= 2, got {}", dim);
  if (!(delta_sigma >= 0.0 && std::isfinite(delta_sigma))) fail("encoder: delta_sigma must be finite and >= 0");
  for (const auto& [m, s] : noise_sigma) {
    if (!(s >= 0.0 && std::isfinite(s))) fail("encoder: noise sigma for modality {} must be finite and >= 0", m.value);
  }
}

std::map<ModalityId, double> SyntheticEncoderConfig::uniform_noise(const LabelSpace& space, double sigma) {
  std::map<ModalityId, double> out;
  for (auto m : space.modalities()) out[m] = sigma;
  return out;
}

Anchors make_anchors(const LabelSpace& space, const SyntheticEncoderConfig& cfg) {
  cfg.validate();
  Anchors out;
  const std::size_t n = space.size();
  for (auto view : space.modalities()) {
    MatrixD table(n, cfg.dim);
    for (auto owner : space.modalities()) {
      const Block b = space.block(owner);
      for (std::size_t local = 0; local < b.count; ++local) {
        auto row = table.row(b.start + local);
        for (std::size_t c = 0; c < cfg.dim; ++c) {
          const double g = keyed_normal({stream::kAnchorShared, cfg.anchor_seed, owner.value, local, c});
          const double delta =
              cfg.delta_sigma * keyed_normal({stream::kAnchorDelta, cfg.anchor_seed, view.value, owner.value, local, c});
          row[c] = g + delta;
        }
        const double norm = norm2(std::span<const double>(row));
        for (auto& x : row) x /= norm;
      }
    }
    out.per_modality.push_back(std::move(table));
  }
  return out;
}

EmbeddingRecord encode_caption(const CaptionRecord& record, const Anchors& anchors, const SyntheticEncoderConfig& cfg) {
  Rng rng({stream::kEncodeCaption, cfg.anchor_seed, record.id});
  return EmbeddingRecord{record.id, record.modality,
                         noisy_unit_mean(anchors.of(record.modality), record.positives(), cfg.sigma(record.modality), rng)};
}

EmbeddingRecord encode_test_item(const LabelSpace& space, const std::vector<std::size_t>& labels, ModalityId modality,
                                 std::uint64_t item_id, const Anchors& anchors, const SyntheticEncoderConfig& cfg) {
  space.modality_name(modality);
  Rng rng({stream::kEncodeTest, cfg.anchor_seed, modality.value, item_id});
  return EmbeddingRecord{item_id, modality, noisy_unit_mean(anchors.of(modality), labels, cfg.sigma(modality), rng)};
}

MatrixF encode_class_prompts(const LabelSpace& space, ModalityId modality, const Anchors& anchors,
                             const SyntheticEncoderConfig& cfg) {
  MatrixF out(space.size(), anchors.dim());
  for (std::size_t c = 0; c < space.size(); ++c) {
    Rng rng({kEncodeClass, cfg.anchor_seed, modality.value, c});
    const auto v = noisy_unit_mean(anchors.of(modality), {c}, cfg.sigma(modality), rng);
    std::copy(v.begin(), v.end(), out.row(c).begin());
  }
  return out;
}

std::vector<EmbeddingRecord> encode_corpus(const std::vector<CaptionRecord>& corpus, const Anchors& anchors,
                                           const SyntheticEncoderConfig& cfg) {
  std::vector<EmbeddingRecord> out;
  out.reserve(corpus.size());
  for (const auto& rec : corpus) out.push_back(encode_caption(rec, anchors, cfg));
  return out;
}

std::string encode_embeddings(const std::vector<EmbeddingRecord>& records, std::size_t dim) {
  if (!records.empty()) dim = records.front().vector.size();
  for (const auto& r : records) {
    if (r.vector.size() != dim) fail("write_embeddings: mixed dimensions ({} vs {})", r.vector.size(), dim);
  }
  io::ByteWriter w;
  w.magic("CPTE");
  w.u32(kEmbeddingVersion);
  w.u32(static_cast<std::uint32_t>(dim));
  w.u64(records.size());
  for (const auto& r : records) {
    w.u64(r.ref_id);
    w.u32(r.modality.value);
    w.f32s(r.vector);
  }
  return w.bytes();
}

std::vector<EmbeddingRecord> decode_embeddings(std::string bytes, const std::string& origin, std::size_t* dim_out) {
  io::ByteReader r(std::move(bytes), origin);
  r.expect_magic("CPTE");
  const std::uint32_t version = r.u32();
  if (version != kEmbeddingVersion) fail("{}: unsupported embedding version {}", origin, version);
  const std::uint32_t dim = r.u32();
  const std::uint64_t count = r.u64();
  if (count > 0 && r.remaining() / (12 + 4ULL * dim) < count) fail("{}: truncated file ({} records declared)", origin, count);
  std::vector<EmbeddingRecord> out(count);
  for (auto& rec : out) {
    rec.ref_id = r.u64();
    rec.modality = ModalityId{r.u32()};
    rec.vector.resize(dim);
    r.f32s(rec.vector);
    check_unit(rec, origin);
  }
  r.expect_end();
  if (dim_out) *dim_out = dim;
  return out;
}

void write_embeddings(const std::vector<EmbeddingRecord>& records, const std::filesystem::path& path, std::size_t dim) {
  io::write_text_file(path, encode_embeddings(records, dim));
}

std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path, std::size_t* dim_out) {
  return decode_embeddings(io::read_text_file(path), path.string(), dim_out);
}

MatrixD to_matrix(const std::vector<EmbeddingRecord>& records) {
  MatrixD out;
  for (const auto& r : records) {
    std::vector<double> row(r.vector.begin(), r.vector.end());
    out.push_row(row);
  }
  return out;
}

}  // namespace cpt
