#include "cpt/label_space.hpp"

#include <algorithm>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "cpt/binary_io.hpp"
#include "cpt/error.hpp"

namespace cpt {

namespace {

bool valid_modality_name(const std::string& name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
           return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
         });
}

}  // namespace

ModalityId LabelSpace::register_modality(const std::string& name) {
  if (!valid_modality_name(name)) fail("invalid modality name '{}' (lowercase ASCII required)", name);
  if (find_modality(name)) fail("duplicate modality '{}'", name);
  modalities_.push_back(Entry{name, {}});
  return ModalityId{static_cast<std::uint32_t>(modalities_.size() - 1)};
}

LabelExtension LabelSpace::add_labels(ModalityId modality, const std::vector<std::string>& names) {
  entry(modality);
  Entry& target = modalities_[modality.value];
  std::unordered_set<std::string> seen(target.labels.begin(), target.labels.end());
  for (const auto& name : names) {
    if (name.empty()) fail("empty label name in modality '{}'", target.name);
    if (!seen.insert(name).second) fail("duplicate label '{}' in modality '{}'", name, target.name);
  }

  const Block before = block(modality);
  const std::size_t inserted = names.size();

  LabelExtension ext;
  ext.remap.resize(total_);
  for (std::size_t i = 0; i < total_; ++i) ext.remap[i] = i < before.end() ? i : i + inserted;
  for (std::size_t k = 0; k < inserted; ++k) ext.new_indices.push_back(before.end() + k);

  target.labels.insert(target.labels.end(), names.begin(), names.end());
  total_ += inserted;
  return ext;
}

std::vector<ModalityId> LabelSpace::modalities() const {
  std::vector<ModalityId> out;
  for (std::uint32_t i = 0; i < modalities_.size(); ++i) out.push_back(ModalityId{i});
  return out;
}

const LabelSpace::Entry& LabelSpace::entry(ModalityId modality) const {
  if (modality.value >= modalities_.size()) fail("unknown modality id {}", modality.value);
  return modalities_[modality.value];
}

const std::string& LabelSpace::modality_name(ModalityId modality) const { return entry(modality).name; }

std::optional<ModalityId> LabelSpace::find_modality(const std::string& name) const {
  for (std::uint32_t i = 0; i < modalities_.size(); ++i) {
    if (modalities_[i].name == name) return ModalityId{i};
  }
  return std::nullopt;
}

ModalityId LabelSpace::modality(const std::string& name) const {
  auto id = find_modality(name);
  if (!id) fail("unknown modality '{}'", name);
  return *id;
}

Block LabelSpace::block(ModalityId modality) const {
  entry(modality);
  std::size_t start = 0;
  for (std::uint32_t i = 0; i < modality.value; ++i) start += modalities_[i].labels.size();
  return Block{start, modalities_[modality.value].labels.size()};
}

std::vector<std::uint8_t> LabelSpace::block_mask(ModalityId modality) const {
  const Block b = block(modality);
  std::vector<std::uint8_t> mask(total_, 0);
  std::fill(mask.begin() + static_cast<std::ptrdiff_t>(b.start), mask.begin() + static_cast<std::ptrdiff_t>(b.end()), 1);
  return mask;
}

ModalityId LabelSpace::owner(std::size_t index) const {
  std::size_t start = 0;
  for (std::uint32_t i = 0; i < modalities_.size(); ++i) {
    start += modalities_[i].labels.size();
    if (index < start) return ModalityId{i};
  }
  fail("label index {} out of range (N={})", index, total_);
}

const std::string& LabelSpace::label_name(std::size_t index) const {
  const ModalityId m = owner(index);
  return modalities_[m.value].labels[index - block(m).start];
}

std::optional<std::size_t> LabelSpace::find_label(ModalityId modality, const std::string& name) const {
  const auto& labels = entry(modality).labels;
  auto it = std::find(labels.begin(), labels.end(), name);
  if (it == labels.end()) return std::nullopt;
  return block(modality).start + static_cast<std::size_t>(it - labels.begin());
}

std::size_t LabelSpace::label_index(ModalityId modality, const std::string& name) const {
  auto idx = find_label(modality, name);
  if (!idx) fail("unknown label '{}' in modality '{}'", name, modality_name(modality));
  return *idx;
}

const std::vector<std::string>& LabelSpace::labels_of(ModalityId modality) const { return entry(modality).labels; }

std::string LabelSpace::to_manifest_json() const {
  nlohmann::ordered_json doc;
  doc["version"] = 1;
  doc["modalities"] = nlohmann::ordered_json::array();
  for (const auto& m : modalities_) {
    nlohmann::ordered_json item;
    item["name"] = m.name;
    item["labels"] = m.labels;
    doc["modalities"].push_back(std::move(item));
  }
  return doc.dump(2) + "\n";
}

LabelSpace LabelSpace::from_manifest_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail("label manifest: {}", e.what());
  }
  if (!doc.is_object() || doc.value("version", 0) != 1) fail("label manifest: missing or unsupported version");
  if (!doc.contains("modalities") || !doc["modalities"].is_array()) fail("label manifest: 'modalities' must be an array");
  LabelSpace space;
  for (const auto& m : doc["modalities"]) {
    if (!m.contains("name") || !m["name"].is_string()) fail("label manifest: modality without name");
    const ModalityId id = space.register_modality(m["name"].get<std::string>());
    std::vector<std::string> labels;
    if (m.contains("labels")) {
      for (const auto& l : m["labels"]) {
        if (!l.is_string()) fail("label manifest: non-string label in '{}'", space.modality_name(id));
        labels.push_back(l.get<std::string>());
      }
    }
    space.add_labels(id, labels);
  }
  return space;
}

LabelSpace LabelSpace::load_manifest(const std::filesystem::path& path) {
  return from_manifest_json(io::read_text_file(path));
}

void LabelSpace::save_manifest(const std::filesystem::path& path) const { io::write_text_file(path, to_manifest_json()); }

}  // namespace cpt
