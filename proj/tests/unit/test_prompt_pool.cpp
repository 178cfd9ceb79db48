#include <cmath>

#include "cpt/error.hpp"
#include "cpt/eval.hpp"
#include "cpt/prompt_pool.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cpt;

TEST_CASE("gaussian init matches the configured moments") {
  const LabelSpace s = testing::make_space({{"video", 100}, {"audio", 100}});
  PoolInitConfig cfg;
  cfg.seed = 7;
  const PromptPool pool = init_pool(s, s.modality("video"), cfg, 512);
  REQUIRE(pool.rows() == 200);
  REQUIRE(pool.dim() == 512);
  const double n = static_cast<double>(pool.params.size());
  double sum = 0.0;
  for (float x : pool.params.flat()) sum += x;
  const double mean = sum / n;
  double var = 0.0;
  for (float x : pool.params.flat()) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / (n - 1));
  CHECK(std::abs(mean) < 3.0 * 0.02 / std::sqrt(n));
  CHECK(std::abs(sd - 0.02) < 0.05 * 0.02);
  for (auto f : pool.frozen) CHECK(f == 0);
}

TEST_CASE("init is deterministic and keyed per modality") {
  const LabelSpace s = testing::make_space({{"video", 3}, {"audio", 2}});
  PoolInitConfig cfg;
  cfg.seed = 3;
  const PromptPool a = init_pool(s, s.modality("video"), cfg, 8);
  const PromptPool b = init_pool(s, s.modality("video"), cfg, 8);
  const PromptPool c = init_pool(s, s.modality("audio"), cfg, 8);
  CHECK(bit_identical(a.params, b.params));
  CHECK_FALSE(bit_identical(a.params, c.params));
  CHECK_THROWS_AS(init_pool(s, s.modality("video"), cfg, 1), Error);
  cfg.std = 0.0;
  CHECK_THROWS_AS(init_pool(s, s.modality("video"), cfg, 8), Error);
}

TEST_CASE("init from embeddings copies rows verbatim") {
  const LabelSpace s = testing::make_space({{"video", 2}, {"audio", 1}});
  MatrixF e(3, 3, 0.0f);
  e(0, 0) = 2.0f;
  e(1, 1) = 0.5f;
  e(2, 2) = 3.0f;
  const PromptPool pool = init_pool_from_embeddings(s, s.modality("audio"), e);
  CHECK(bit_identical(pool.params, e));
  CHECK(pool.modality == s.modality("audio"));
  CHECK_THROWS_AS(init_pool_from_embeddings(s, s.modality("audio"), MatrixF(2, 3, 1.0f)), Error);
}

TEST_CASE("pool from class embeddings reproduces the zero-shot baseline") {
  const LabelSpace s = testing::make_space({{"video", 4}, {"audio", 3}});
  Rng rng(5);
  MatrixF classes(s.size(), 6);
  for (auto& x : classes.flat()) x = static_cast<float>(rng.normal());
  std::vector<EmbeddingRecord> items;
  std::vector<std::vector<std::size_t>> positives;
  for (std::uint64_t i = 0; i < 12; ++i) {
    const auto u = testing::random_unit(6, rng);
    items.push_back({i, s.modality("video"), std::vector<float>(u.begin(), u.end())});
    positives.push_back({i % 4});
  }
  const ModalityId v = s.modality("video");
  const EvalReport base = zero_shot_baseline(classes, s, v, items, positives);
  const EvalReport pool = evaluate_pool(init_pool_from_embeddings(s, v, classes), s, items, positives);
  CHECK(base.top1 == pool.top1);
  CHECK(base.top5 == pool.top5);
  CHECK(base.map == pool.map);
}

TEST_CASE("extension by zero rows is the identity") {
  const LabelSpace s = testing::make_space({{"video", 2}, {"audio", 2}});
  PoolInitConfig cfg;
  const PromptPool pool = init_pool(s, s.modality("video"), cfg, 4);
  const PromptPool same = extend_pool(pool, {0, 1, 2, 3}, 0, cfg);
  CHECK(bit_identical(same.params, pool.params));
  CHECK(same.frozen == pool.frozen);
}

TEST_CASE("extension moves rows by the remap and fills new rows") {
  LabelSpace s = testing::make_space({{"video", 2}, {"audio", 1}, {"image", 1}});
  PoolInitConfig cfg;
  cfg.seed = 11;
  PromptPool pool = init_pool(s, s.modality("video"), cfg, 5);
  pool.frozen[1] = 1;
  const LabelExtension ext = s.add_labels(s.modality("audio"), {"bark"});
  PoolInitConfig fresh = cfg;
  fresh.seed = 12;
  const PromptPool grown = extend_pool(pool, ext.remap, 1, fresh);
  REQUIRE(grown.rows() == 5);
  for (std::size_t r : {0u, 1u, 2u}) {
    const auto a = grown.params.row(r);
    const auto b = pool.params.row(r);
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  const auto moved = grown.params.row(4);
  const auto old = pool.params.row(3);
  CHECK(std::memcmp(moved.data(), old.data(), moved.size_bytes()) == 0);
  CHECK(grown.frozen == std::vector<std::uint8_t>{0, 1, 0, 0, 0});
  const auto row3 = grown.params.row(3);
  CHECK(std::memcmp(row3.data(), old.data(), row3.size_bytes()) != 0);

  const PromptPool frozen = extend_pool(pool, ext.remap, 1, fresh, true);
  CHECK(frozen.frozen == std::vector<std::uint8_t>{1, 1, 1, 0, 1});
  CHECK_THROWS_AS(extend_pool(pool, {0, 1, 2}, 1, fresh), Error);
  CHECK_THROWS_AS(extend_pool(pool, {0, 0, 2, 4}, 1, fresh), Error);
}

TEST_CASE("row normalization") {
  MatrixD m(2, 2);
  m(0, 0) = 3.0;
  m(0, 1) = 4.0;
  m(1, 0) = 0.6;
  m(1, 1) = 0.8;
  const MatrixD u = normalized_rows(m);
  CHECK(u(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(u(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(std::abs(u(1, 0) - 0.6) < 1e-15);
  CHECK(std::abs(u(1, 1) - 0.8) < 1e-15);
  m(1, 0) = 0.0;
  m(1, 1) = 0.0;
  CHECK_THROWS_AS(normalized_rows(m), Error);
}

TEST_CASE("CPTP round trip and corruption") {
  const LabelSpace s = testing::make_space({{"video", 3}, {"audio", 2}});
  PoolInitConfig cfg;
  PromptPool pool = init_pool(s, s.modality("audio"), cfg, 7);
  pool.frozen[4] = 1;
  const std::string bytes = encode_pool(pool);
  CHECK(bytes.size() == 20 + 5 * 7 * 4 + 5);
  const PromptPool back = decode_pool(bytes);
  CHECK(bit_identical(back.params, pool.params));
  CHECK(back.frozen == pool.frozen);
  CHECK(back.modality == pool.modality);

  testing::TempDir dir("pool");
  write_pool(pool, dir / "p.cptp");
  CHECK(encode_pool(read_pool(dir / "p.cptp")) == bytes);

  std::string bad = bytes;
  bad[1] = 'X';
  CHECK_THROWS_WITH_AS(decode_pool(bad), doctest::Contains("magic"), Error);
  CHECK_THROWS_WITH_AS(decode_pool(bytes.substr(0, bytes.size() - 1)), doctest::Contains("truncated"), Error);
  CHECK_THROWS_AS(decode_pool(bytes + "x"), Error);
  std::string version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(decode_pool(version), Error);
}
