#include "cpt/benchmark.hpp"

#include <fmt/format.h>

#include "cpt/error.hpp"
#include "cpt/eval.hpp"

namespace cpt {

namespace {

constexpr std::uint64_t kValIdBase = 1ull << 40;
constexpr std::uint64_t kTestIdBase = 2ull << 40;

}  // namespace

EvalSet make_single_label_items(const LabelSpace& space, const Anchors& anchors, const SyntheticEncoderConfig& encoder,
                                std::size_t per_modality, std::uint64_t first_id) {
  EvalSet set;
  set.items.resize(space.modality_count());
  set.positives.resize(space.modality_count());
  std::uint64_t id = first_id;
  for (auto m : space.modalities()) {
    const Block b = space.block(m);
    if (b.count == 0) continue;
    for (std::size_t j = 0; j < per_modality; ++j) {
      const std::vector<std::size_t> labels{b.start + j % b.count};
      set.items[m.value].push_back(encode_test_item(space, labels, m, id++, anchors, encoder));
      set.positives[m.value].push_back(labels);
    }
  }
  return set;
}

Benchmark make_benchmark(const BenchmarkConfig& cfg) {
  if (cfg.modalities.empty() || cfg.labels_per_modality == 0) fail("benchmark: empty label space");
  Benchmark b;
  for (const auto& name : cfg.modalities) {
    const ModalityId m = b.space.register_modality(name);
    std::vector<std::string> labels;
    for (std::size_t k = 0; k < cfg.labels_per_modality; ++k) labels.push_back(fmt::format("{}_{}", name, k));
    b.space.add_labels(m, labels);
  }
  const ModalityId weak = b.space.modality(cfg.weak);

  b.caption_encoder.anchor_seed = cfg.seed;
  b.caption_encoder.dim = cfg.dim;
  b.caption_encoder.noise_sigma = SyntheticEncoderConfig::uniform_noise(b.space, cfg.caption_sigma);
  b.test_encoder = b.caption_encoder;
  b.test_encoder.noise_sigma = SyntheticEncoderConfig::uniform_noise(b.space, cfg.strong_test_sigma);
  b.test_encoder.noise_sigma[weak] = cfg.weak_test_sigma;

  b.anchors = make_anchors(b.space, b.caption_encoder);

  GenConfig gen;
  gen.seed = cfg.seed;
  for (auto m : b.space.modalities()) gen.per_modality_count[m] = cfg.captions_per_modality;
  b.corpus = generate_corpus(b.space, gen);
  b.embeddings = encode_corpus(b.corpus, b.anchors, b.caption_encoder);
  b.train = build_training_set(b.space, b.corpus, b.embeddings);

  b.val = make_single_label_items(b.space, b.anchors, b.test_encoder, cfg.val_items_per_modality, kValIdBase);
  b.test = make_single_label_items(b.space, b.anchors, b.test_encoder, cfg.test_items_per_modality, kTestIdBase);
  for (auto m : b.space.modalities()) {
    b.class_prompts.push_back(encode_class_prompts(b.space, m, b.anchors, b.caption_encoder));
  }
  return b;
}

std::vector<double> test_top1(const TrainState& state, const LabelSpace& space, const EvalSet& set) {
  return validation_top1(state, space, set);
}

}  // namespace cpt
