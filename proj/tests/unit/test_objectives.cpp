#include <cmath>

#include "cpt/error.hpp"
#include "cpt/objectives.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cpt;

namespace {

MatrixD rows(std::initializer_list<std::initializer_list<double>> values) {
  MatrixD m;
  for (auto r : values) m.push_row(std::vector<double>(r));
  return m;
}

bool is_zero(const MatrixD& m) {
  return std::all_of(m.flat().begin(), m.flat().end(), [](double x) { return x == 0.0; });
}

}  // namespace

TEST_CASE("similarity kernels") {
  const MatrixD h = rows({{1.0, 0.0}});
  const MatrixD p = rows({{0.6, 0.8}, {0.0, 1.0}});
  const MatrixD dotted = similarity(h, p, SimilarityMode::kDot);
  CHECK(dotted(0, 0) == doctest::Approx(0.6));
  CHECK(dotted(0, 1) == 0.0);

  const MatrixD raw = rows({{3.0, 4.0}, {0.0, 2.0}});
  const MatrixD same = similarity(rows({{0.6, 0.8}}), raw, SimilarityMode::kCosine);
  CHECK(same(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  const MatrixD orth = similarity(h, rows({{0.0, 5.0}}), SimilarityMode::kCosine);
  CHECK(orth(0, 0) == 0.0);
}

TEST_CASE("ranking loss on hand-computed instances") {
  const RankingResult satisfied = ranking_loss({{0}}, rows({{1.0, 0.0}}), 0.2);
  CHECK(satisfied.loss == 0.0);
  CHECK(is_zero(satisfied.grad_sims));

  const RankingResult r = ranking_loss({{0}}, rows({{0.5, 0.3, 0.6}}), 0.2);
  CHECK(r.loss == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(r.grad_sims(0, 0) == -1.0);
  CHECK(r.grad_sims(0, 1) == 0.0);
  CHECK(r.grad_sims(0, 2) == 1.0);
  REQUIRE(r.slacks.size() == 2);

  const RankingResult batch = ranking_loss({{0}, {1}}, rows({{0.5, 0.3, 0.6}, {0.0, 0.0, 0.0}}), 0.2);
  CHECK(batch.loss == doctest::Approx((0.3 + 0.4) / 2.0).epsilon(1e-12));
  CHECK(batch.grad_sims(1, 1) == -1.0);
  CHECK(batch.grad_sims(1, 0) == 0.5);

  CHECK_THROWS_AS(ranking_loss({{0}}, rows({{0.5, 0.3}}), 0.0), Error);
  CHECK_THROWS_AS(ranking_loss({{}}, rows({{0.5, 0.3}}), 0.2), Error);
}

TEST_CASE("intra loss bookkeeping") {
  const LabelSpace s = testing::make_space({{"video", 3}, {"audio", 2}});
  Rng rng(1);
  const PoolParams pools = testing::random_pools(s, 4, rng);
  const auto batches = testing::random_batches(s, 4, 3, rng);
  const IntraResult both = intra_loss(s, batches, pools, 0.2, SimilarityMode::kCosine);
  const IntraResult only_audio = intra_loss(s, {batches[1]}, pools, 0.2, SimilarityMode::kCosine);
  CHECK(only_audio.per_modality[0] == 0.0);
  CHECK(only_audio.total == only_audio.per_modality[1]);
  CHECK(only_audio.per_modality[1] == both.per_modality[1]);
  CHECK(both.total == doctest::Approx(both.per_modality[0] + both.per_modality[1]));
  CHECK(is_zero(only_audio.grads[0]));

  // Prompts on top of each caption's single positive with a huge margin gap.
  IntraBatch easy;
  easy.modality = s.modality("video");
  MatrixD p(s.size(), 5, 0.0);
  for (std::size_t r = 0; r < s.size(); ++r) p(r, r) = 1.0;
  for (std::size_t r = 0; r < 3; ++r) {
    std::vector<double> e(5, 0.0);
    e[r] = 1.0;
    easy.embeddings.push_row(e);
    easy.positives.push_back({r});
  }
  const IntraResult zero = intra_loss(s, {easy}, {p, p}, 0.2, SimilarityMode::kCosine);
  CHECK(zero.total == 0.0);
  CHECK(is_zero(zero.grads[0]));
}

TEST_CASE("inter loss of uniform similarities is ln 2") {
  const LabelSpace s = testing::make_space({{"video", 1}, {"audio", 1}});
  const MatrixD same = rows({{1.0, 0.0}, {1.0, 0.0}});
  InterConfig cfg;
  cfg.weak = s.modality("video");
  cfg.strong = {s.modality("audio")};
  const InterResult r = inter_loss(s, {same, same}, cfg);
  CHECK(r.total == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("inter loss vanishes as tau goes to zero on matched pools") {
  const LabelSpace s = testing::make_space({{"video", 3}, {"audio", 3}});
  Rng rng(2);
  MatrixD pool = testing::random_matrix(6, 8, rng);
  InterConfig cfg;
  cfg.weak = s.modality("video");
  cfg.strong = {s.modality("audio")};
  cfg.tau = 1e-3;
  const InterResult r = inter_loss(s, {pool, pool}, cfg);
  CHECK(r.total < 1e-6);
  CHECK(std::isfinite(r.total));
}

TEST_CASE("uni mode gives strong pools exactly zero gradient") {
  const LabelSpace s = testing::make_space({{"video", 3}, {"audio", 2}, {"image", 2}});
  Rng rng(3);
  const PoolParams pools = testing::random_pools(s, 5, rng);
  InterConfig cfg;
  cfg.weak = s.modality("video");
  cfg.strong = {s.modality("audio"), s.modality("image")};
  const InterResult uni = inter_loss(s, pools, cfg);
  CHECK(is_zero(uni.grads[1]));
  CHECK(is_zero(uni.grads[2]));
  CHECK_FALSE(is_zero(uni.grads[0]));
  REQUIRE(uni.per_strong.size() == 2);
  CHECK(uni.strong == cfg.strong);

  cfg.strong = {s.modality("video")};
  CHECK_THROWS_AS(inter_loss(s, pools, cfg), Error);
  cfg.strong = {s.modality("audio")};
  cfg.tau = 0.0;
  CHECK_THROWS_AS(inter_loss(s, pools, cfg), Error);
}

TEST_CASE("loss weights") {
  const LabelSpace s = testing::make_space({{"video", 3}, {"audio", 2}});
  Rng rng(4);
  const PoolParams pools = testing::random_pools(s, 4, rng);
  const auto batches = testing::random_batches(s, 4, 4, rng);
  const IntraResult intra = intra_loss(s, batches, pools, 0.2, SimilarityMode::kCosine);
  InterConfig cfg;
  cfg.weak = s.modality("video");
  cfg.strong = {s.modality("audio")};
  const InterResult inter = inter_loss(s, pools, cfg);

  const GradientBundle none = total_loss(intra, inter, 0.0, 0.0, {});
  CHECK(none.l_total == 0.0);
  for (const auto& g : none.grads) CHECK(is_zero(g));

  const GradientBundle intra_only = total_loss(intra, inter, 1.0, 0.0, {});
  for (std::size_t p = 0; p < pools.size(); ++p) CHECK(bit_identical(intra_only.grads[p], intra.grads[p]));
  CHECK(intra_only.l_total == intra.total);

  const GradientBundle both = total_loss(intra, inter, 1.0, 1.0, {});
  CHECK(both.l_total == doctest::Approx(intra.total + inter.total));
  REQUIRE(both.inter_per_strong.size() == 1);
  CHECK(both.inter_per_strong[0].first == s.modality("audio"));

  std::vector<std::vector<std::uint8_t>> frozen(2, std::vector<std::uint8_t>(s.size(), 0));
  frozen[0][1] = 1;
  const GradientBundle masked = total_loss(intra, inter, 1.0, 1.0, frozen);
  for (double x : masked.grads[0].row(1)) CHECK(x == 0.0);
  CHECK_THROWS_AS(total_loss(intra, inter, -1.0, 1.0, {}), Error);
}

TEST_CASE("finite differences on a small instance") {
  const LabelSpace s = testing::make_space({{"video", 3}, {"audio", 3}});
  Rng rng(5);
  const PoolParams pools = testing::random_pools(s, 8, rng);
  const auto batches = testing::random_batches(s, 8, 4, rng);
  for (SimilarityMode mode : {SimilarityMode::kCosine, SimilarityMode::kDot}) {
    const IntraResult intra = intra_loss(s, batches, pools, 0.2, mode);
    const FdReport report = finite_difference_check(
        [&](const PoolParams& p) {
          const IntraResult r = intra_loss(s, batches, p, 0.2, mode);
          return LossProbe{r.total, r.slacks};
        },
        pools, intra.grads);
    CHECK(report.passed(1e-4));
    CHECK(report.checked + report.excluded == 2 * 6 * 8);
  }

  InterConfig cfg;
  cfg.weak = s.modality("video");
  cfg.strong = {s.modality("audio")};
  cfg.direction = Direction::kBi;
  const InterResult inter = inter_loss(s, pools, cfg);
  const FdReport report = finite_difference_check(
      [&](const PoolParams& p) { return LossProbe{inter_loss(s, p, cfg).total, {}}; }, pools, inter.grads);
  CHECK(report.passed(1e-4));
}

TEST_CASE("finite differences: zero gradients and hinge boundaries") {
  const LabelSpace s = testing::make_space({{"video", 2}});
  // Constant loss: analytic and numeric gradients are both zero.
  const PoolParams flat{MatrixD(2, 2, 1.0)};
  const FdReport zero = finite_difference_check([](const PoolParams&) { return LossProbe{1.5, {}}; }, flat,
                                                PoolParams{MatrixD(2, 2, 0.0)});
  CHECK(zero.passed(1e-4));
  CHECK(zero.max_abs_numeric < 1e-8);
  CHECK(zero.max_abs_analytic < 1e-8);

  // Hinge exactly at its kink: margin - s0 + s1 = 0 with dot similarity.
  IntraBatch b;
  b.modality = s.modality("video");
  b.embeddings.push_row(std::vector<double>{1.0, 0.0});
  b.positives.push_back({0});
  MatrixD p(2, 2, 0.0);
  p(0, 0) = 0.7;
  p(1, 0) = 0.5;
  p(0, 1) = 1.0;
  p(1, 1) = 1.0;
  const IntraResult at_kink = intra_loss(s, {b}, {p}, 0.2, SimilarityMode::kDot);
  const FdReport kink = finite_difference_check(
      [&](const PoolParams& q) {
        const IntraResult r = intra_loss(s, {b}, q, 0.2, SimilarityMode::kDot);
        return LossProbe{r.total, r.slacks};
      },
      {p}, at_kink.grads);
  CHECK(kink.excluded >= 2);
  bool flagged = false;
  for (const auto& c : kink.coordinates) flagged = flagged || (c.excluded && c.col == 0);
  CHECK(flagged);
  CHECK(kink.passed(1e-4));
}

TEST_CASE("permuting labels leaves the losses unchanged") {
  // Swap the two video labels: pools rows and positives permute together.
  const LabelSpace s = testing::make_space({{"video", 2}, {"audio", 2}});
  Rng rng(6);
  const PoolParams pools = testing::random_pools(s, 6, rng);
  auto batches = testing::random_batches(s, 6, 3, rng);
  const std::vector<std::size_t> perm{1, 0, 2, 3};
  PoolParams swapped = pools;
  for (auto& pool : swapped) {
    MatrixD out(pool.rows(), pool.cols());
    for (std::size_t r = 0; r < pool.rows(); ++r) std::copy(pool.row(r).begin(), pool.row(r).end(), out.row(perm[r]).begin());
    pool = out;
  }
  auto moved = batches;
  for (auto& b : moved) {
    for (auto& pos : b.positives) {
      for (auto& x : pos) x = perm[x];
      std::sort(pos.begin(), pos.end());
    }
  }
  const double a = intra_loss(s, batches, pools, 0.2, SimilarityMode::kCosine).total;
  const double b = intra_loss(s, moved, swapped, 0.2, SimilarityMode::kCosine).total;
  CHECK(a == doctest::Approx(b).epsilon(1e-12));

  InterConfig cfg;
  cfg.weak = s.modality("video");
  cfg.strong = {s.modality("audio")};
  CHECK(inter_loss(s, pools, cfg).total == doctest::Approx(inter_loss(s, swapped, cfg).total).epsilon(1e-12));
}
