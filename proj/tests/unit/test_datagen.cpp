#include <algorithm>
#include <map>

#include "cpt/datagen.hpp"
#include "cpt/error.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cpt;

TEST_CASE("subset of a single-label block") {
  const LabelSpace s = testing::make_space({{"video", 3}, {"audio", 1}});
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    CHECK(sample_label_subset(s, s.modality("audio"), 3, rng) == std::vector<std::size_t>{3});
  }
}

TEST_CASE("subset sizes are uniform on 1..k_max") {
  const LabelSpace s = testing::make_space({{"audio", 4}, {"video", 6}});
  const ModalityId v = s.modality("video");
  const Block b = s.block(v);
  Rng rng(42);
  std::map<std::size_t, int> sizes;
  const int draws = 100000;
  bool in_block = true;
  for (int i = 0; i < draws; ++i) {
    const auto subset = sample_label_subset(s, v, GenConfig::default_k_max("video"), rng);
    ++sizes[subset.size()];
    for (auto idx : subset) in_block = in_block && b.contains(idx);
    CHECK(std::adjacent_find(subset.begin(), subset.end()) == subset.end());
  }
  CHECK(in_block);
  CHECK(sizes.size() == 2);
  CHECK(std::abs(sizes[1] / double(draws) - 0.5) < 0.02);
  CHECK(std::abs(sizes[2] / double(draws) - 0.5) < 0.02);
}

TEST_CASE("caption rendering") {
  LabelSpace s;
  const ModalityId i = s.register_modality("image");
  s.add_labels(i, {"dog", "cat", "horse"});
  Rng rng(0);
  const CaptionRecord one = render_caption(s, {0}, i, {"A photo of a {}."}, rng);
  CHECK(one.text == "A photo of a dog.");
  CHECK(one.truth == std::vector<std::uint8_t>{1, 0, 0});

  const CaptionRecord two = render_caption(s, {0, 1}, i, GenConfig::default_phrase_bank(), rng);
  CHECK(two.text.find("dog") != std::string::npos);
  CHECK(two.text.find("cat") != std::string::npos);
  CHECK(std::count(two.truth.begin(), two.truth.end(), 1) == 2);
  CHECK(truth_text_consistent(two, s));
  CHECK(word_count(two.text) < kMaxCaptionWords);

  const std::string long_frame = "one two three four five six seven eight nine ten eleven twelve thirteen fourteen "
                                 "fifteen sixteen seventeen eighteen nineteen twenty twenty-one twenty-two {}";
  CHECK_THROWS_AS(render_caption(s, {0, 1, 2}, i, {long_frame}, rng), Error);
}

TEST_CASE("corpus generation is deterministic and covers every label") {
  const LabelSpace s = testing::make_space({{"video", 5}, {"audio", 0}, {"image", 4}});
  GenConfig cfg;
  cfg.seed = 9;
  cfg.per_modality_count[s.modality("video")] = 100;
  cfg.per_modality_count[s.modality("image")] = 80;
  const auto a = generate_corpus(s, cfg);
  const auto b = generate_corpus(s, cfg);
  CHECK(corpus_to_jsonl(a, s) == corpus_to_jsonl(b, s));
  REQUIRE(a.size() == 180);

  std::vector<int> seen(s.size(), 0);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].id == k);
    CHECK(truth_text_consistent(a[k], s));
    for (auto p : a[k].positives()) {
      ++seen[p];
      CHECK(s.owner(p) == a[k].modality);
    }
  }
  for (auto count : seen) CHECK(count >= 1);
  CHECK(generate_corpus(s, GenConfig{}).empty());
}

TEST_CASE("corpus JSONL round trip and errors") {
  const LabelSpace s = testing::make_space({{"video", 3}, {"audio", 2}});
  GenConfig cfg;
  cfg.per_modality_count[s.modality("audio")] = 10;
  const auto corpus = generate_corpus(s, cfg);
  const std::string text = corpus_to_jsonl(corpus, s);
  CHECK(corpus_from_jsonl(text, s) == corpus);

  testing::TempDir dir("corpus");
  write_corpus(corpus, s, dir / "c.jsonl");
  CHECK(read_corpus(dir / "c.jsonl", s) == corpus);

  CHECK_THROWS_WITH_AS(corpus_from_jsonl("{\"id\":0,\"modality\":\"depth\",\"text\":\"x\",\"labels\":[]}\n", s),
                       doctest::Contains(":1:"), Error);
  CHECK_THROWS_AS(corpus_from_jsonl("{\"id\":0,\"modality\":\"audio\",\"text\":\"a video0\",\"labels\":[\"video0\"]}\n", s),
                  Error);
  CHECK_THROWS_AS(corpus_from_jsonl("{broken\n", s), Error);
}
