#include "cpt/datagen.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cpt/binary_io.hpp"
#include "cpt/error.hpp"

namespace cpt {

std::vector<std::size_t> CaptionRecord::positives() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::string> GenConfig::default_phrase_bank() {
  return {
      "A {modality} of {}.",
      "This {modality} clearly captures {}.",
      "In this short {modality} we can perceive {}.",
      "The {modality} is mostly about {}.",
      "Here is a {modality} featuring {}.",
      "Someone recorded a {modality} with {}.",
      "Watch closely, the {modality} contains {}.",
      "An everyday {modality} showing {} in detail.",
  };
}

int GenConfig::default_k_max(const std::string& modality_name) { return modality_name == "video" ? 2 : 3; }

int GenConfig::k_max_for(const LabelSpace& space, ModalityId modality) const {
  auto it = k_max.find(modality);
  return it != k_max.end() ? it->second : default_k_max(space.modality_name(modality));
}

void GenConfig::validate(const LabelSpace& space) const {
  for (const auto& [m, count] : per_modality_count) {
    space.modality_name(m);
    if (count == 0) fail("gen: count for modality '{}' must be positive", space.modality_name(m));
  }
  for (const auto& [m, k] : k_max) {
    space.modality_name(m);
    if (k < 1 || k > 3) fail("gen: k_max for '{}' must be in 1..3, got {}", space.modality_name(m), k);
  }
  if (!per_modality_count.empty() && phrase_bank.empty()) fail("gen: phrase bank is empty");
  for (const auto& frame : phrase_bank) {
    if (frame.find("{}") == std::string::npos) fail("gen: frame without '{{}}' placeholder: '{}'", frame);
  }
}

std::vector<std::size_t> sample_label_subset(const LabelSpace& space, ModalityId modality, int k_max, Rng& rng) {
  const Block b = space.block(modality);
  if (b.count == 0) fail("gen: modality '{}' has no labels", space.modality_name(modality));
  if (k_max < 1) fail("gen: k_max must be >= 1");
  const std::size_t upper = std::min<std::size_t>(static_cast<std::size_t>(k_max), b.count);
  const std::size_t k = 1 + rng.below(upper);

  std::vector<std::size_t> pool(b.count);
  std::iota(pool.begin(), pool.end(), b.start);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(b.count - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

namespace {

std::string join_labels(const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i > 0) out += (i + 1 == names.size()) ? " and " : ", ";
    out += names[i];
  }
  return out;
}

void replace_all(std::string& text, const std::string& from, const std::string& to) {
  for (std::size_t pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
    text.replace(pos, from.size(), to);
  }
}

}  // namespace

std::size_t word_count(const std::string& text) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

CaptionRecord render_caption(const LabelSpace& space, const std::vector<std::size_t>& labels, ModalityId modality,
                             const std::vector<std::string>& phrase_bank, Rng& rng) {
  if (labels.empty()) fail("render_caption: empty label set");
  if (phrase_bank.empty()) fail("render_caption: empty phrase bank");
  const Block b = space.block(modality);
  CaptionRecord rec;
  rec.modality = modality;
  rec.truth.assign(space.size(), 0);
  std::vector<std::string> names;
  for (std::size_t idx : labels) {
    if (!b.contains(idx)) fail("render_caption: label {} outside block of '{}'", idx, space.modality_name(modality));
    if (rec.truth[idx]) fail("render_caption: label {} given twice", idx);
    rec.truth[idx] = 1;
    names.push_back(space.label_name(idx));
  }

  std::string text = phrase_bank[rng.below(phrase_bank.size())];
  replace_all(text, "{modality}", space.modality_name(modality));
  const auto slot = text.find("{}");
  if (slot == std::string::npos) fail("render_caption: frame has no '{{}}' placeholder");
  text.replace(slot, 2, join_labels(names));
  if (word_count(text) >= kMaxCaptionWords) {
    fail("render_caption: '{}' has {} words (limit < {})", text, word_count(text), kMaxCaptionWords);
  }
  rec.text = std::move(text);
  return rec;
}

std::vector<CaptionRecord> generate_corpus(const LabelSpace& space, const GenConfig& cfg) {
  cfg.validate(space);
  std::vector<CaptionRecord> corpus;
  std::uint64_t next_id = 0;
  for (const auto& [modality, count] : cfg.per_modality_count) {
    const int k_max = cfg.k_max_for(space, modality);
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t id = next_id++;
      Rng rng({stream::kCaption, cfg.seed, id});
      auto labels = sample_label_subset(space, modality, k_max, rng);
      CaptionRecord rec = render_caption(space, labels, modality, cfg.phrase_bank, rng);
      rec.id = id;
      corpus.push_back(std::move(rec));
    }
  }
  return corpus;
}

bool truth_text_consistent(const CaptionRecord& record, const LabelSpace& space) {
  const Block b = space.block(record.modality);
  for (std::size_t i = b.start; i < b.end(); ++i) {
    const bool present = record.text.find(space.label_name(i)) != std::string::npos;
    if (present != (record.truth.at(i) != 0)) return false;
  }
  for (std::size_t i = 0; i < record.truth.size(); ++i) {
    if (record.truth[i] && !b.contains(i)) return false;
  }
  return true;
}

std::string corpus_to_jsonl(const std::vector<CaptionRecord>& corpus, const LabelSpace& space) {
  std::string out;
  for (const auto& rec : corpus) {
    nlohmann::ordered_json j;
    j["id"] = rec.id;
    j["modality"] = space.modality_name(rec.modality);
    j["text"] = rec.text;
    auto labels = nlohmann::ordered_json::array();
    for (std::size_t idx : rec.positives()) labels.push_back(space.label_name(idx));
    j["labels"] = std::move(labels);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<CaptionRecord> corpus_from_jsonl(const std::string& text, const LabelSpace& space,
                                             const std::string& origin) {
  std::vector<CaptionRecord> corpus;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CaptionRecord rec;
      rec.id = j.at("id").get<std::uint64_t>();
      rec.modality = space.modality(j.at("modality").get<std::string>());
      rec.text = j.at("text").get<std::string>();
      rec.truth.assign(space.size(), 0);
      for (const auto& l : j.at("labels")) rec.truth[space.label_index(rec.modality, l.get<std::string>())] = 1;
      if (rec.positives().empty()) fail("record has no labels");
      corpus.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      fail("{}:{}: {}", origin, line_no, e.what());
    } catch (const Error& e) {
      fail("{}:{}: {}", origin, line_no, e.what());
    }
  }
  return corpus;
}

void write_corpus(const std::vector<CaptionRecord>& corpus, const LabelSpace& space,
                  const std::filesystem::path& path) {
  io::write_text_file(path, corpus_to_jsonl(corpus, space));
}

std::vector<CaptionRecord> read_corpus(const std::filesystem::path& path, const LabelSpace& space) {
  return corpus_from_jsonl(io::read_text_file(path), space, path.string());
}

}  // namespace cpt
