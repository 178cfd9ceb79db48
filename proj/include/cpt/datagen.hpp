#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cpt/label_space.hpp"
#include "cpt/rng.hpp"

namespace cpt {

/// One synthetic sentence with its exact multi-hot ground truth over the
/// global label space.
struct CaptionRecord {
  std::uint64_t id = 0;
  ModalityId modality;
  std::string text;
  std::vector<std::uint8_t> truth;

  std::vector<std::size_t> positives() const;
  bool operator==(const CaptionRecord&) const = default;
};

inline constexpr std::size_t kMaxCaptionWords = 25;

struct GenConfig {
  std::map<ModalityId, std::size_t> per_modality_count;
  /// Missing entries fall back to default_k_max() of the modality name.
  std::map<ModalityId, int> k_max;
  std::uint64_t seed = 0;
  /// Sentence frames; "{}" receives the label list, "{modality}" the modality name.
  std::vector<std::string> phrase_bank = default_phrase_bank();

  static std::vector<std::string> default_phrase_bank();
  /// 2 for "video", 3 otherwise.
  static int default_k_max(const std::string& modality_name);
  int k_max_for(const LabelSpace& space, ModalityId modality) const;
  void validate(const LabelSpace& space) const;
};

/// k uniform in [1, min(k_max, block size)], then k distinct labels from the block.
std::vector<std::size_t> sample_label_subset(const LabelSpace& space, ModalityId modality, int k_max, Rng& rng);

CaptionRecord render_caption(const LabelSpace& space, const std::vector<std::size_t>& labels, ModalityId modality,
                             const std::vector<std::string>& phrase_bank, Rng& rng);

/// Records are grouped by modality id; caption ids are dense from 0 and each
/// record draws from its own stream keyed on (seed, caption id).
std::vector<CaptionRecord> generate_corpus(const LabelSpace& space, const GenConfig& cfg);

std::size_t word_count(const std::string& text);

/// True iff, within the record's block, a label name occurs in the text exactly
/// when its truth bit is set.
bool truth_text_consistent(const CaptionRecord& record, const LabelSpace& space);

/// JSON Lines: {"id":..,"modality":..,"text":..,"labels":[..]} per record.
std::string corpus_to_jsonl(const std::vector<CaptionRecord>& corpus, const LabelSpace& space);
std::vector<CaptionRecord> corpus_from_jsonl(const std::string& text, const LabelSpace& space,
                                             const std::string& origin = "<corpus>");
void write_corpus(const std::vector<CaptionRecord>& corpus, const LabelSpace& space,
                  const std::filesystem::path& path);
std::vector<CaptionRecord> read_corpus(const std::filesystem::path& path, const LabelSpace& space);

}  // namespace cpt
