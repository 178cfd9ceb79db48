#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cpt/embedding_io.hpp"
#include "cpt/label_space.hpp"
#include "cpt/matrix.hpp"
#include "cpt/prompt_pool.hpp"

namespace cpt {

struct PredictionVector {
  std::uint64_t item_id = 0;
  ModalityId modality;
  std::vector<double> scores;
  bool softmax = false;
  /// Indices eligible for ranking; scores outside it are zero.
  Block scope;
};

/// Highest score within scope; the lower index wins ties.
std::size_t argmax(const PredictionVector& p);

/// Cosine scores of one unit-norm item against a pool; when `restrict_to_block`
/// only the item's modality block is scored.
PredictionVector classify(std::uint64_t item_id, ModalityId modality, std::span<const float> embedding,
                          const MatrixD& unit_prompts, const LabelSpace& space, bool restrict_to_block);
PredictionVector classify(const EmbeddingRecord& item, const PromptPool& pool, const LabelSpace& space,
                          bool restrict_to_block);
std::vector<PredictionVector> classify_all(const std::vector<EmbeddingRecord>& items, const PromptPool& pool,
                                           const LabelSpace& space, bool restrict_to_block);

/// Fraction of items whose label ranks within the top k under the argmax tie rule.
double topk_accuracy(const std::vector<PredictionVector>& predictions, const std::vector<std::size_t>& truths,
                     std::size_t k);

struct ClassAp {
  std::size_t label = 0;
  double ap = 0.0;
};

struct MapResult {
  double map = 0.0;
  std::vector<ClassAp> per_class;
  /// Classes in scope with no positive item; left out of the mean.
  std::vector<std::size_t> excluded;
};

/// Per class: rank items by score descending (ties by item id ascending) and
/// average precision@r over the ranks r of positive items.
MapResult mean_average_precision(const std::vector<PredictionVector>& predictions,
                                 const std::vector<std::vector<std::uint8_t>>& truths);

struct EvalReport {
  double top1 = 0.0;
  double top5 = 0.0;
  double map = 0.0;
  std::vector<ClassAp> per_class_ap;
  std::vector<std::size_t> excluded_classes;
  std::size_t count = 0;
};

/// Full report for one modality's test items. Top-k counts an item as a hit
/// when any of its labels is within the top k.
EvalReport evaluate(const std::vector<PredictionVector>& predictions,
                    const std::vector<std::vector<std::size_t>>& positives, std::size_t n_labels);
EvalReport evaluate_pool(const PromptPool& pool, const LabelSpace& space, const std::vector<EmbeddingRecord>& items,
                         const std::vector<std::vector<std::size_t>>& positives, bool restrict_to_block = true);

/// Zero-shot encoder baseline: the class-name text embeddings act as the pool.
EvalReport zero_shot_baseline(const MatrixF& class_embeddings, const LabelSpace& space, ModalityId modality,
                              const std::vector<EmbeddingRecord>& items,
                              const std::vector<std::vector<std::size_t>>& positives, bool restrict_to_block = true);

/// Softmax of scores / tau over the scope.
PredictionVector softmax(const PredictionVector& p, double tau);

/// P_I = P_S + P_T; both inputs must be softmax outputs over the same classes.
PredictionVector fuse(const PredictionVector& supervised, const PredictionVector& ours);

/// External predictions: JSON Lines of {"item_id":u64,"scores":[...]}.
std::string predictions_to_jsonl(const std::vector<PredictionVector>& predictions);
/// Rows whose scores sum to 1 within 1e-6 are flagged softmax.
std::vector<PredictionVector> predictions_from_jsonl(const std::string& text, const std::string& origin = "<predictions>");

/// CSV "step,row,<col names>" then one line per row, values at 9 significant digits.
std::string similarity_csv(std::int64_t step, const std::vector<std::string>& row_names,
                           const std::vector<std::string>& col_names, const MatrixD& values);
MatrixD parse_similarity_csv(const std::string& text);

/// Cosine matrix of pool rows against `rows` (prompt x prompt or item x prompt) written as CSV.
void dump_similarity_matrices(const MatrixD& rows, const std::vector<std::string>& row_names, const PromptPool& pool,
                              const LabelSpace& space, std::int64_t step, const std::filesystem::path& path);

}  // namespace cpt
