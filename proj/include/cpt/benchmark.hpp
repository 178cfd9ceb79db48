#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cpt/datagen.hpp"
#include "cpt/embedding_io.hpp"
#include "cpt/label_space.hpp"
#include "cpt/trainer.hpp"

namespace cpt {

/// Synthetic multi-modality benchmark: frozen "encoders" are noisy views of
/// shared label anchors; the weak modality gets noisier test items.
struct BenchmarkConfig {
  std::vector<std::string> modalities = {"video", "audio", "image"};
  std::size_t labels_per_modality = 20;
  std::size_t dim = 64;
  std::size_t captions_per_modality = 2000;
  std::size_t test_items_per_modality = 1000;
  std::size_t val_items_per_modality = 200;
  double caption_sigma = 0.1;
  double strong_test_sigma = 0.1;
  double weak_test_sigma = 0.3;
  std::string weak = "video";
  std::uint64_t seed = 0;
};

struct Benchmark {
  LabelSpace space;
  std::vector<CaptionRecord> corpus;
  std::vector<EmbeddingRecord> embeddings;
  TrainingSet train;
  EvalSet val;
  EvalSet test;
  Anchors anchors;
  SyntheticEncoderConfig caption_encoder;
  SyntheticEncoderConfig test_encoder;
  /// Class-name template embeddings per modality id (zero-shot baseline pools).
  std::vector<MatrixF> class_prompts;
};

/// Label names are "<modality>_<k>". Test and validation items carry one
/// label each, cycling through the block.
Benchmark make_benchmark(const BenchmarkConfig& cfg);

/// Single-label held-out items for `space`, ids starting at `first_id`.
EvalSet make_single_label_items(const LabelSpace& space, const Anchors& anchors, const SyntheticEncoderConfig& encoder,
                                std::size_t per_modality, std::uint64_t first_id);

/// Restricted top-1 per modality id on `set`.
std::vector<double> test_top1(const TrainState& state, const LabelSpace& space, const EvalSet& set);

}  // namespace cpt
