#include "cpt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cpt/binary_io.hpp"
#include "cpt/error.hpp"

namespace cpt {

namespace {

constexpr double kSoftmaxSumTolerance = 1e-6;

/// Number of in-scope labels ranked strictly ahead of `label`.
std::size_t rank_of(const PredictionVector& p, std::size_t label) {
  const double s = p.scores[label];
  std::size_t ahead = 0;
  for (std::size_t j = p.scope.start; j < p.scope.end(); ++j) {
    if (p.scores[j] > s || (p.scores[j] == s && j < label)) ++ahead;
  }
  return ahead;
}

bool sums_to_one(const PredictionVector& p) {
  double total = 0.0;
  for (std::size_t j = p.scope.start; j < p.scope.end(); ++j) total += p.scores[j];
  return std::abs(total - 1.0) <= kSoftmaxSumTolerance;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace

std::size_t argmax(const PredictionVector& p) {
  if (p.scope.count == 0) fail("argmax over an empty scope");
  std::size_t best = p.scope.start;
  for (std::size_t j = p.scope.start + 1; j < p.scope.end(); ++j) {
    if (p.scores[j] > p.scores[best]) best = j;
  }
  return best;
}

PredictionVector classify(std::uint64_t item_id, ModalityId modality, std::span<const float> embedding,
                          const MatrixD& unit_prompts, const LabelSpace& space, bool restrict_to_block) {
  if (embedding.size() != unit_prompts.cols()) {
    fail("classify: item dim {} vs pool dim {}", embedding.size(), unit_prompts.cols());
  }
  PredictionVector p;
  p.item_id = item_id;
  p.modality = modality;
  p.scope = restrict_to_block ? space.block(modality) : Block{0, unit_prompts.rows()};
  p.scores.assign(unit_prompts.rows(), 0.0);
  for (std::size_t j = p.scope.start; j < p.scope.end(); ++j) p.scores[j] = dot(embedding, unit_prompts.row(j));
  return p;
}

PredictionVector classify(const EmbeddingRecord& item, const PromptPool& pool, const LabelSpace& space,
                          bool restrict_to_block) {
  return classify(item.ref_id, item.modality, item.vector, normalized_rows(pool), space, restrict_to_block);
}

std::vector<PredictionVector> classify_all(const std::vector<EmbeddingRecord>& items, const PromptPool& pool,
                                           const LabelSpace& space, bool restrict_to_block) {
  const MatrixD unit = normalized_rows(pool);
  std::vector<PredictionVector> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    out.push_back(classify(item.ref_id, item.modality, item.vector, unit, space, restrict_to_block));
  }
  return out;
}

double topk_accuracy(const std::vector<PredictionVector>& predictions, const std::vector<std::size_t>& truths,
                     std::size_t k) {
  if (k < 1) fail("top-k: k must be >= 1");
  if (predictions.size() != truths.size()) fail("top-k: {} predictions for {} truths", predictions.size(), truths.size());
  if (predictions.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    if (!p.scope.contains(truths[i])) continue;
    if (rank_of(p, truths[i]) < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

MapResult mean_average_precision(const std::vector<PredictionVector>& predictions,
                                 const std::vector<std::vector<std::uint8_t>>& truths) {
  if (predictions.size() != truths.size()) fail("mAP: {} predictions for {} truths", predictions.size(), truths.size());
  MapResult out;
  if (predictions.empty()) return out;
  const Block scope = predictions.front().scope;
  for (const auto& p : predictions) {
    if (p.scope.start != scope.start || p.scope.count != scope.count) fail("mAP: predictions with different scopes");
  }

  std::vector<std::size_t> order(predictions.size());
  double sum = 0.0;
  for (std::size_t c = scope.start; c < scope.end(); ++c) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double sa = predictions[a].scores[c];
      const double sb = predictions[b].scores[c];
      if (sa != sb) return sa > sb;
      return predictions[a].item_id < predictions[b].item_id;
    });
    std::size_t seen = 0;
    double precision_sum = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (truths[order[r]].at(c)) {
        ++seen;
        precision_sum += static_cast<double>(seen) / static_cast<double>(r + 1);
      }
    }
    if (seen == 0) {
      out.excluded.push_back(c);
      continue;
    }
    const double ap = precision_sum / static_cast<double>(seen);
    out.per_class.push_back({c, ap});
    sum += ap;
  }
  if (!out.per_class.empty()) out.map = sum / static_cast<double>(out.per_class.size());
  return out;
}

EvalReport evaluate(const std::vector<PredictionVector>& predictions,
                    const std::vector<std::vector<std::size_t>>& positives, std::size_t n_labels) {
  if (predictions.size() != positives.size()) fail("evaluate: {} predictions for {} truths", predictions.size(), positives.size());
  EvalReport report;
  report.count = predictions.size();
  if (predictions.empty()) return report;

  std::size_t hit1 = 0;
  std::size_t hit5 = 0;
  std::vector<std::vector<std::uint8_t>> truth_bits;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    std::size_t best = SIZE_MAX;
    std::vector<std::uint8_t> bits(n_labels, 0);
    for (std::size_t label : positives[i]) {
      bits.at(label) = 1;
      if (predictions[i].scope.contains(label)) best = std::min(best, rank_of(predictions[i], label));
    }
    if (best < 1) ++hit1;
    if (best < 5) ++hit5;
    truth_bits.push_back(std::move(bits));
  }
  report.top1 = static_cast<double>(hit1) / static_cast<double>(report.count);
  report.top5 = static_cast<double>(hit5) / static_cast<double>(report.count);
  MapResult m = mean_average_precision(predictions, truth_bits);
  report.map = m.map;
  report.per_class_ap = std::move(m.per_class);
  report.excluded_classes = std::move(m.excluded);
  return report;
}

EvalReport evaluate_pool(const PromptPool& pool, const LabelSpace& space, const std::vector<EmbeddingRecord>& items,
                         const std::vector<std::vector<std::size_t>>& positives, bool restrict_to_block) {
  return evaluate(classify_all(items, pool, space, restrict_to_block), positives, space.size());
}

EvalReport zero_shot_baseline(const MatrixF& class_embeddings, const LabelSpace& space, ModalityId modality,
                              const std::vector<EmbeddingRecord>& items,
                              const std::vector<std::vector<std::size_t>>& positives, bool restrict_to_block) {
  const PromptPool pool = init_pool_from_embeddings(space, modality, class_embeddings);
  return evaluate_pool(pool, space, items, positives, restrict_to_block);
}

PredictionVector softmax(const PredictionVector& p, double tau) {
  if (!(tau > 0.0)) fail("softmax: temperature must be positive");
  PredictionVector out = p;
  std::fill(out.scores.begin(), out.scores.end(), 0.0);
  if (p.scope.count == 0) return out;
  double peak = p.scores[p.scope.start];
  for (std::size_t j = p.scope.start; j < p.scope.end(); ++j) peak = std::max(peak, p.scores[j]);
  double z = 0.0;
  for (std::size_t j = p.scope.start; j < p.scope.end(); ++j) {
    out.scores[j] = std::exp((p.scores[j] - peak) / tau);
    z += out.scores[j];
  }
  for (std::size_t j = p.scope.start; j < p.scope.end(); ++j) out.scores[j] /= z;
  out.softmax = true;
  return out;
}

PredictionVector fuse(const PredictionVector& supervised, const PredictionVector& ours) {
  if (supervised.scores.size() != ours.scores.size()) {
    fail("fuse: score lengths differ ({} vs {})", supervised.scores.size(), ours.scores.size());
  }
  if (supervised.scope.start != ours.scope.start || supervised.scope.count != ours.scope.count) {
    fail("fuse: predictions cover different class sets");
  }
  if (!supervised.softmax || !ours.softmax) fail("fuse: both inputs must be softmax predictions");
  PredictionVector out = supervised;
  for (std::size_t j = 0; j < out.scores.size(); ++j) out.scores[j] += ours.scores[j];
  out.softmax = false;
  return out;
}

std::string predictions_to_jsonl(const std::vector<PredictionVector>& predictions) {
  std::string out;
  for (const auto& p : predictions) {
    nlohmann::ordered_json j;
    j["item_id"] = p.item_id;
    j["scores"] = std::vector<double>(p.scores.begin() + static_cast<std::ptrdiff_t>(p.scope.start),
                                      p.scores.begin() + static_cast<std::ptrdiff_t>(p.scope.end()));
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<PredictionVector> predictions_from_jsonl(const std::string& text, const std::string& origin) {
  std::vector<PredictionVector> out;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PredictionVector p;
      p.item_id = j.at("item_id").get<std::uint64_t>();
      p.scores = j.at("scores").get<std::vector<double>>();
      for (double s : p.scores) {
        if (!std::isfinite(s)) fail("non-finite score");
      }
      p.scope = Block{0, p.scores.size()};
      p.softmax = sums_to_one(p);
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      fail("{}:{}: {}", origin, line_no, e.what());
    } catch (const Error& e) {
      fail("{}:{}: {}", origin, line_no, e.what());
    }
  }
  return out;
}

std::string similarity_csv(std::int64_t step, const std::vector<std::string>& row_names,
                           const std::vector<std::string>& col_names, const MatrixD& values) {
  if (values.rows() != row_names.size() || (values.rows() > 0 && values.cols() != col_names.size())) {
    fail("similarity csv: name counts do not match matrix shape");
  }
  std::string out = "step,row";
  for (const auto& c : col_names) out += "," + csv_field(c);
  out += '\n';
  for (std::size_t r = 0; r < values.rows(); ++r) {
    out += fmt::format("{},{}", step, csv_field(row_names[r]));
    for (double v : values.row(r)) out += fmt::format(",{:.9g}", v);
    out += '\n';
  }
  return out;
}

MatrixD parse_similarity_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail("similarity csv: missing header");
  const std::size_t cols = split_csv_line(line).size() - 2;
  MatrixD out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != cols + 2) fail("similarity csv: row with {} fields, expected {}", fields.size(), cols + 2);
    std::vector<double> row;
    for (std::size_t c = 2; c < fields.size(); ++c) row.push_back(std::stod(fields[c]));
    out.push_row(row);
  }
  return out;
}

void dump_similarity_matrices(const MatrixD& rows, const std::vector<std::string>& row_names, const PromptPool& pool,
                              const LabelSpace& space, std::int64_t step, const std::filesystem::path& path) {
  if (pool.rows() == 0) {
    io::write_text_file(path, similarity_csv(step, {}, {}, MatrixD()));
    return;
  }
  std::vector<std::string> cols;
  for (std::size_t c = 0; c < pool.rows(); ++c) cols.push_back(c < space.size() ? space.label_name(c) : std::to_string(c));
  MatrixD sims(rows.rows(), pool.rows());
  if (rows.rows() > 0) {
    const MatrixD unit_rows = normalized_rows(rows);
    const MatrixD unit_pool = normalized_rows(pool);
    for (std::size_t r = 0; r < rows.rows(); ++r) {
      for (std::size_t c = 0; c < pool.rows(); ++c) sims(r, c) = dot(unit_rows.row(r), unit_pool.row(c));
    }
  }
  io::write_text_file(path, similarity_csv(step, row_names, cols, sims));
}

}  // namespace cpt
