#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpt/datagen.hpp"
#include "cpt/embedding_io.hpp"
#include "cpt/label_space.hpp"
#include "cpt/objectives.hpp"
#include "cpt/prompt_pool.hpp"

namespace cpt {

struct OptimizerConfig {
  enum class Kind { kSgd, kAdam };
  Kind kind = Kind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct WeakSelection {
  enum class Kind { kFixed, kAdaptive };
  Kind kind = Kind::kFixed;
  ModalityId fixed;
};

struct TrainConfig {
  std::uint64_t steps = 1000;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer;
  double lr = 1e-3;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double margin = 0.2;
  double tau = 0.07;
  std::uint64_t seed = 0;
  std::uint64_t eval_every = 0;
  WeakSelection weak;
  Direction direction = Direction::kUni;
  SimilarityMode similarity = SimilarityMode::kCosine;
  /// Modalities whose pools are trained; empty means all. A single entry
  /// gives an isolated intra-only run.
  std::vector<ModalityId> train_modalities;

  void validate(const LabelSpace& space) const;
  std::vector<ModalityId> active(const LabelSpace& space) const;
};

nlohmann::ordered_json to_json(const TrainConfig& cfg, const LabelSpace& space);
/// Missing keys keep the values already in `cfg`.
void update_from_json(TrainConfig& cfg, const nlohmann::json& j, const LabelSpace& space);

/// Embedded captions of one modality, row-aligned with their label sets.
struct ModalityData {
  MatrixD embeddings;
  std::vector<std::vector<std::size_t>> positives;
  std::vector<std::uint64_t> ids;
  std::size_t size() const noexcept { return embeddings.rows(); }
};

/// Indexed by modality id.
using TrainingSet = std::vector<ModalityData>;

/// Joins corpus records with their embeddings by id; both sides must match one to one.
TrainingSet build_training_set(const LabelSpace& space, const std::vector<CaptionRecord>& corpus,
                               const std::vector<EmbeddingRecord>& embeddings);

/// Held-out items per modality for validation and testing.
struct EvalSet {
  std::vector<std::vector<EmbeddingRecord>> items;
  std::vector<std::vector<std::vector<std::size_t>>> positives;
};

EvalSet build_eval_set(const LabelSpace& space, const std::vector<CaptionRecord>& truth,
                       const std::vector<EmbeddingRecord>& embeddings);

struct StepMetrics {
  std::uint64_t step = 0;
  double l_total = 0.0;
  double l_intra = 0.0;
  double l_inter = 0.0;
  std::vector<double> intra_per_modality;
  std::vector<std::pair<ModalityId, double>> inter_per_strong;
  std::optional<ModalityId> weak;
  /// Validation top-1 per modality id, when a validation pass ran at this step.
  std::optional<std::vector<double>> val_top1;
};

std::string metrics_to_jsonl(const std::vector<StepMetrics>& log, const LabelSpace& space);
std::vector<StepMetrics> metrics_from_jsonl(const std::string& text, const LabelSpace& space,
                                            const std::string& origin = "<metrics>");

struct TrainState {
  std::vector<PromptPool> pools;
  std::vector<MatrixF> first_moment;
  std::vector<MatrixF> second_moment;
  std::uint64_t step = 0;
  std::optional<ModalityId> weak;
  std::vector<StepMetrics> log;
};

/// Fresh gaussian pools for every modality with zeroed optimizer state.
TrainState init_state(const LabelSpace& space, const PoolInitConfig& init, std::size_t dim);

/// Batches for `step`: each modality walks a seeded permutation of its data,
/// reshuffled per epoch, B records at a time. The last batch of an epoch holds
/// the remainder, so each epoch visits every record exactly once.
std::vector<IntraBatch> make_batches(const TrainingSet& data, const std::vector<ModalityId>& modalities,
                                     std::size_t batch_size, std::uint64_t seed, std::uint64_t step);

/// Evaluates L_total on `batches`, updates unfrozen rows of the active pools and
/// appends one metrics entry. Throws on a non-finite loss or gradient.
void train_step(TrainState& state, const LabelSpace& space, const std::vector<IntraBatch>& batches,
                const TrainConfig& cfg);

/// Lowest validation top-1 wins; ties go to the lowest modality id.
ModalityId select_weak_modality(const std::map<ModalityId, double>& val_top1);

std::vector<double> validation_top1(const TrainState& state, const LabelSpace& space, const EvalSet& val);

struct RunOptions {
  const EvalSet* validation = nullptr;
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Written into the checkpoint manifest as-is.
  nlohmann::ordered_json extra_manifest;
  /// Called after every step with the entry just logged.
  std::function<void(const StepMetrics&)> on_step;
};

/// Trains until state.step == cfg.steps. Validation (and adaptive weak
/// re-selection) runs whenever step % eval_every == 0. With a checkpoint
/// directory, the same cadence writes checkpoint_dir/step_<n> and the final
/// state goes to checkpoint_dir itself.
void run(TrainState& state, const LabelSpace& space, const TrainingSet& data, const TrainConfig& cfg,
         const RunOptions& options = {});

// --- checkpoints ---------------------------------------------------------

std::filesystem::path intermediate_checkpoint(const std::filesystem::path& dir, std::uint64_t step);

/// CPTO: "CPTO", u32 version, u64 step, u32 pool count, then per pool
/// u32 modality, u32 N, u32 d, N*d f32 first moment, N*d f32 second moment.
std::string encode_optimizer_state(const TrainState& state);
void decode_optimizer_state(std::string bytes, TrainState& state, const std::string& origin = "<memory>");

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const LabelSpace& space,
                     const TrainConfig& cfg, const nlohmann::ordered_json& extra = {});

/// A checkpoint directory holds labels.json, one pool_<modality>.cptp per
/// modality, optimizer.cpto, metrics.jsonl and run.json.
struct Checkpoint {
  LabelSpace space;
  TrainState state;
  nlohmann::json manifest;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// --- continual extension -------------------------------------------------

struct LabelAddition {
  std::string modality;
  std::vector<std::string> labels;
};

enum class ExtendMode { kContinue, kFreezeOld };

/// Adds labels (and possibly new modalities) to the space and grows every
/// pool through extend_pool. New modalities get a fresh pool. In freeze-old
/// mode every row that existed before the call is frozen and its moments zeroed.
void continual_extend(TrainState& state, LabelSpace& space, const std::vector<LabelAddition>& additions,
                      ExtendMode mode, const PoolInitConfig& init);

}  // namespace cpt
