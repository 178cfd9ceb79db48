#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cpt {

/// Dense modality index, assigned in registration order.
struct ModalityId {
  std::uint32_t value = 0;
  auto operator<=>(const ModalityId&) const = default;
};

/// Contiguous range [start, start + count) of global label indices.
struct Block {
  std::size_t start = 0;
  std::size_t count = 0;
  std::size_t end() const noexcept { return start + count; }
  bool contains(std::size_t index) const noexcept { return index >= start && index < end(); }
};

/// Result of appending labels to one modality block.
struct LabelExtension {
  std::vector<std::size_t> new_indices;
  /// remap[old_index] == new_index for every label that existed before the call.
  std::vector<std::size_t> remap;
};

/// Global ordered label set, laid out as one contiguous block per modality in
/// registration order. All prompt pools share this indexing.
class LabelSpace {
 public:
  ModalityId register_modality(const std::string& name);
  LabelExtension add_labels(ModalityId modality, const std::vector<std::string>& names);

  std::size_t size() const noexcept { return total_; }
  std::size_t modality_count() const noexcept { return modalities_.size(); }
  std::vector<ModalityId> modalities() const;

  const std::string& modality_name(ModalityId modality) const;
  std::optional<ModalityId> find_modality(const std::string& name) const;
  ModalityId modality(const std::string& name) const;

  Block block(ModalityId modality) const;
  std::vector<std::uint8_t> block_mask(ModalityId modality) const;

  /// Owning modality of a global index.
  ModalityId owner(std::size_t index) const;
  const std::string& label_name(std::size_t index) const;
  std::optional<std::size_t> find_label(ModalityId modality, const std::string& name) const;
  std::size_t label_index(ModalityId modality, const std::string& name) const;
  const std::vector<std::string>& labels_of(ModalityId modality) const;

  /// Label manifest JSON: {"version":1,"modalities":[{"name":..,"labels":[..]},..]}.
  std::string to_manifest_json() const;
  static LabelSpace from_manifest_json(const std::string& text);
  static LabelSpace load_manifest(const std::filesystem::path& path);
  void save_manifest(const std::filesystem::path& path) const;

  bool operator==(const LabelSpace&) const = default;

 private:
  struct Entry {
    std::string name;
    std::vector<std::string> labels;
    bool operator==(const Entry&) const = default;
  };
  const Entry& entry(ModalityId modality) const;

  std::vector<Entry> modalities_;
  std::size_t total_ = 0;
};

}  // namespace cpt
