#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cpt/datagen.hpp"
#include "cpt/label_space.hpp"
#include "cpt/matrix.hpp"

namespace cpt {

/// Unit-norm d-dim vector tied to a caption id, test-item id or label index.
struct EmbeddingRecord {
  std::uint64_t ref_id = 0;
  ModalityId modality;
  std::vector<float> vector;

  bool operator==(const EmbeddingRecord&) const = default;
};

inline constexpr double kUnitNormTolerance = 1e-6;

/// Stand-in for a frozen, pre-aligned text/media encoder.
struct SyntheticEncoderConfig {
  std::uint64_t anchor_seed = 0;
  std::map<ModalityId, double> noise_sigma;
  std::size_t dim = 64;
  /// Per-coordinate std of the modality-specific anchor perturbation.
  double delta_sigma = 0.05;

  double sigma(ModalityId modality) const;
  void validate() const;
  /// Same sigma for every modality of `space`.
  static std::map<ModalityId, double> uniform_noise(const LabelSpace& space, double sigma);
};

/// anchors[m] is N x d; row c is modality m's view of label c.
struct Anchors {
  std::vector<MatrixD> per_modality;
  const MatrixD& of(ModalityId m) const { return per_modality.at(m.value); }
  std::size_t dim() const { return per_modality.empty() ? 0 : per_modality.front().cols(); }
};

/// u_c^m = normalize(g(c) + delta(m, c)). g is shared by all modalities and
/// keyed on the label's (owner modality, position in block), so a label keeps
/// its anchor when other blocks grow.
Anchors make_anchors(const LabelSpace& space, const SyntheticEncoderConfig& cfg);

/// normalize(mean of the modality's anchors at the truth labels + N(0, sigma^2) noise),
/// noise keyed on (anchor_seed, ref_id).
EmbeddingRecord encode_caption(const CaptionRecord& record, const Anchors& anchors, const SyntheticEncoderConfig& cfg);

/// Media-encoder stand-in for test items; `cfg` is usually a test-noise config.
/// Uses a noise stream disjoint from caption encoding.
EmbeddingRecord encode_test_item(const LabelSpace& space, const std::vector<std::size_t>& labels, ModalityId modality,
                                 std::uint64_t item_id, const Anchors& anchors, const SyntheticEncoderConfig& cfg);

/// One embedding per global label of a class-name template sentence, through
/// modality `m`'s text encoder. Row c feeds init_pool_from_embeddings.
MatrixF encode_class_prompts(const LabelSpace& space, ModalityId modality, const Anchors& anchors,
                             const SyntheticEncoderConfig& cfg);

std::vector<EmbeddingRecord> encode_corpus(const std::vector<CaptionRecord>& corpus, const Anchors& anchors,
                                           const SyntheticEncoderConfig& cfg);

/// CPTE: "CPTE", u32 version, u32 d, u64 count, then per record
/// u64 ref_id, u32 modality, d x f32. All little-endian.
std::string encode_embeddings(const std::vector<EmbeddingRecord>& records, std::size_t dim);
std::vector<EmbeddingRecord> decode_embeddings(std::string bytes, const std::string& origin = "<memory>",
                                               std::size_t* dim_out = nullptr);
void write_embeddings(const std::vector<EmbeddingRecord>& records, const std::filesystem::path& path,
                      std::size_t dim = 0);
std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path, std::size_t* dim_out = nullptr);

MatrixD to_matrix(const std::vector<EmbeddingRecord>& records);

}  // namespace cpt
