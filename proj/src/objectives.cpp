#include "cpt/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cpt/error.hpp"
#include "cpt/prompt_pool.hpp"
#include "cpt/rng.hpp"

namespace cpt {

namespace {

/// grad wrt raw rows given grad wrt unit rows: (g - (g.u) u) / |raw|.
void backprop_row_normalization(const MatrixD& raw, const MatrixD& unit, const MatrixD& grad_unit, MatrixD& grad_raw) {
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    const double n = norm2(raw.row(r));
    const double proj = dot(grad_unit.row(r), unit.row(r));
    for (std::size_t c = 0; c < raw.cols(); ++c) grad_raw(r, c) += (grad_unit(r, c) - proj * unit(r, c)) / n;
  }
}

const MatrixD& pool_of(const PoolParams& pools, ModalityId m) {
  if (m.value >= pools.size()) fail("no pool for modality id {}", m.value);
  return pools[m.value];
}

PoolParams zeros_like(const PoolParams& pools) {
  PoolParams out;
  for (const auto& p : pools) out.emplace_back(p.rows(), p.cols(), 0.0);
  return out;
}

}  // namespace

void IntraBatch::validate(const LabelSpace& space) const {
  if (embeddings.rows() == 0) fail("intra batch for '{}' is empty", space.modality_name(modality));
  if (positives.size() != embeddings.rows()) fail("intra batch: {} truth rows for {} embeddings", positives.size(), embeddings.rows());
  const Block b = space.block(modality);
  for (std::size_t k = 0; k < positives.size(); ++k) {
    if (positives[k].empty()) fail("intra batch: row {} has no positive label", k);
    for (std::size_t i : positives[k]) {
      if (!b.contains(i)) fail("intra batch: positive {} of row {} outside '{}' block", i, k, space.modality_name(modality));
    }
  }
}

MatrixD similarity(const MatrixD& embeddings, const MatrixD& prompts, SimilarityMode mode) {
  if (embeddings.cols() != prompts.cols()) {
    fail("similarity: embedding dim {} vs prompt dim {}", embeddings.cols(), prompts.cols());
  }
  const MatrixD p = mode == SimilarityMode::kCosine ? normalized_rows(prompts) : prompts;
  MatrixD s(embeddings.rows(), prompts.rows());
  for (std::size_t k = 0; k < embeddings.rows(); ++k) {
    for (std::size_t j = 0; j < prompts.rows(); ++j) s(k, j) = dot(embeddings.row(k), p.row(j));
  }
  return s;
}

MatrixD similarity_backward(const MatrixD& embeddings, const MatrixD& prompts, const MatrixD& grad_sims,
                            SimilarityMode mode) {
  // dL/dp_hat_j = sum_k G_kj h_k
  MatrixD grad_unit(prompts.rows(), prompts.cols(), 0.0);
  for (std::size_t k = 0; k < embeddings.rows(); ++k) {
    for (std::size_t j = 0; j < prompts.rows(); ++j) {
      const double g = grad_sims(k, j);
      if (g == 0.0) continue;
      auto out = grad_unit.row(j);
      auto h = embeddings.row(k);
      for (std::size_t c = 0; c < out.size(); ++c) out[c] += g * h[c];
    }
  }
  if (mode == SimilarityMode::kDot) return grad_unit;
  MatrixD grad(prompts.rows(), prompts.cols(), 0.0);
  backprop_row_normalization(prompts, normalized_rows(prompts), grad_unit, grad);
  return grad;
}

RankingResult ranking_loss(const std::vector<std::vector<std::size_t>>& positives, const MatrixD& sims, double margin) {
  if (!(margin > 0.0)) fail("ranking loss: margin must be positive, got {}", margin);
  if (positives.size() != sims.rows()) fail("ranking loss: {} truth rows for {} similarity rows", positives.size(), sims.rows());
  const std::size_t batch = sims.rows();
  const std::size_t n = sims.cols();
  const double inv_b = 1.0 / static_cast<double>(batch);

  RankingResult out;
  out.grad_sims = MatrixD(batch, n, 0.0);
  std::vector<std::uint8_t> is_pos(n);
  for (std::size_t k = 0; k < batch; ++k) {
    if (positives[k].empty()) fail("ranking loss: row {} has no positive label", k);
    std::fill(is_pos.begin(), is_pos.end(), 0);
    for (std::size_t i : positives[k]) {
      if (i >= n) fail("ranking loss: positive index {} out of range {}", i, n);
      is_pos[i] = 1;
    }
    double row_loss = 0.0;
    for (std::size_t i : positives[k]) {
      for (std::size_t j = 0; j < n; ++j) {
        if (is_pos[j]) continue;
        const double slack = margin - sims(k, i) + sims(k, j);
        out.slacks.push_back(slack);
        if (slack > 0.0) {
          row_loss += slack;
          out.grad_sims(k, i) -= inv_b;
          out.grad_sims(k, j) += inv_b;
        }
      }
    }
    out.loss += row_loss;
  }
  out.loss *= inv_b;
  return out;
}

IntraResult intra_loss(const LabelSpace& space, const std::vector<IntraBatch>& batches, const PoolParams& pools,
                       double margin, SimilarityMode mode) {
  IntraResult out;
  out.per_modality.assign(pools.size(), 0.0);
  out.grads = zeros_like(pools);
  for (const auto& batch : batches) {
    batch.validate(space);
    const MatrixD& prompts = pool_of(pools, batch.modality);
    if (prompts.rows() != space.size()) fail("intra: pool has {} rows, label space {}", prompts.rows(), space.size());
    const MatrixD sims = similarity(batch.embeddings, prompts, mode);
    RankingResult r = ranking_loss(batch.positives, sims, margin);
    const MatrixD g = similarity_backward(batch.embeddings, prompts, r.grad_sims, mode);
    auto& acc = out.grads[batch.modality.value];
    for (std::size_t i = 0; i < g.size(); ++i) acc.flat()[i] += g.flat()[i];
    out.per_modality[batch.modality.value] += r.loss;
    out.total += r.loss;
    out.slacks.insert(out.slacks.end(), r.slacks.begin(), r.slacks.end());
  }
  return out;
}

void InterConfig::validate(const LabelSpace& space) const {
  if (!(tau > 0.0) || !std::isfinite(tau)) fail("inter: tau must be positive, got {}", tau);
  space.modality_name(weak);
  for (auto t : strong) {
    space.modality_name(t);
    if (t == weak) fail("inter: weak modality '{}' listed as strong", space.modality_name(weak));
  }
}

namespace {

/// -mean_{i in rows} log softmax(S[i, :] / tau)[i] where S = cos(query_i, key_k).
/// Accumulates dL/d(unit query) and dL/d(unit key); either target may be null.
double masked_contrastive(const MatrixD& query_unit, const MatrixD& key_unit, Block rows, double tau,
                          MatrixD* grad_query_unit, MatrixD* grad_key_unit) {
  if (rows.count == 0) return 0.0;
  const std::size_t n = key_unit.rows();
  const double inv_rows = 1.0 / static_cast<double>(rows.count);
  std::vector<double> logits(n);
  double loss = 0.0;
  for (std::size_t i = rows.start; i < rows.end(); ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      logits[k] = dot(query_unit.row(i), key_unit.row(k)) / tau;
      peak = std::max(peak, logits[k]);
    }
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += std::exp(logits[k] - peak);
    const double log_z = peak + std::log(z);
    loss += log_z - logits[i];

    for (std::size_t k = 0; k < n; ++k) {
      const double p = std::exp(logits[k] - log_z);
      const double d_sim = (p - (k == i ? 1.0 : 0.0)) * inv_rows / tau;
      if (grad_query_unit) {
        auto g = grad_query_unit->row(i);
        auto key = key_unit.row(k);
        for (std::size_t c = 0; c < g.size(); ++c) g[c] += d_sim * key[c];
      }
      if (grad_key_unit) {
        auto g = grad_key_unit->row(k);
        auto q = query_unit.row(i);
        for (std::size_t c = 0; c < g.size(); ++c) g[c] += d_sim * q[c];
      }
    }
  }
  return loss * inv_rows;
}

}  // namespace

InterResult inter_loss(const LabelSpace& space, const PoolParams& pools, const InterConfig& cfg) {
  cfg.validate(space);
  if (space.modality_count() < 2) fail("inter: needs at least two modalities");
  InterResult out;
  out.grads = zeros_like(pools);

  const MatrixD& weak = pool_of(pools, cfg.weak);
  const MatrixD weak_unit = normalized_rows(weak);
  MatrixD weak_grad_unit(weak.rows(), weak.cols(), 0.0);

  for (auto t : cfg.strong) {
    const MatrixD& strong = pool_of(pools, t);
    if (strong.rows() != weak.rows() || strong.cols() != weak.cols()) fail("inter: pool shape mismatch");
    const MatrixD strong_unit = normalized_rows(strong);
    const Block rows = space.block(t);
    double loss = 0.0;
    if (cfg.direction == Direction::kUni) {
      loss = masked_contrastive(weak_unit, strong_unit, rows, cfg.tau, &weak_grad_unit, nullptr);
    } else {
      MatrixD strong_grad_unit(strong.rows(), strong.cols(), 0.0);
      loss = masked_contrastive(weak_unit, strong_unit, rows, cfg.tau, &weak_grad_unit, &strong_grad_unit);
      loss += masked_contrastive(strong_unit, weak_unit, rows, cfg.tau, &strong_grad_unit, &weak_grad_unit);
      backprop_row_normalization(strong, strong_unit, strong_grad_unit, out.grads[t.value]);
    }
    out.per_strong.push_back(loss);
    out.strong.push_back(t);
    out.total += loss;
  }
  backprop_row_normalization(weak, weak_unit, weak_grad_unit, out.grads[cfg.weak.value]);
  return out;
}

GradientBundle total_loss(IntraResult intra, std::optional<InterResult> inter, double lambda1, double lambda2,
                          const std::vector<std::vector<std::uint8_t>>& frozen) {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) fail("loss weights must be non-negative ({}, {})", lambda1, lambda2);
  GradientBundle out;
  out.intra_per_modality = intra.per_modality;
  out.l_intra = intra.total;
  out.grads = zeros_like(intra.grads);
  if (lambda1 != 0.0) {
    for (std::size_t p = 0; p < out.grads.size(); ++p) {
      auto dst = out.grads[p].flat();
      auto src = intra.grads[p].flat();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = lambda1 * src[i];
    }
  }
  if (inter) {
    out.l_inter = inter->total;
    for (std::size_t i = 0; i < inter->per_strong.size(); ++i) {
      out.inter_per_strong.emplace_back(inter->strong[i], inter->per_strong[i]);
    }
    if (lambda2 != 0.0) {
      for (std::size_t p = 0; p < out.grads.size(); ++p) {
        auto dst = out.grads[p].flat();
        auto src = inter->grads.at(p).flat();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += lambda2 * src[i];
      }
    }
  }
  out.l_total = (lambda1 != 0.0 ? lambda1 * out.l_intra : 0.0) + (lambda2 != 0.0 ? lambda2 * out.l_inter : 0.0);

  for (std::size_t p = 0; p < out.grads.size() && p < frozen.size(); ++p) {
    for (std::size_t r = 0; r < out.grads[p].rows(); ++r) {
      if (r < frozen[p].size() && frozen[p][r]) std::fill(out.grads[p].row(r).begin(), out.grads[p].row(r).end(), 0.0);
    }
  }
  return out;
}

FdReport finite_difference_check(const LossEvaluator& evaluate, const PoolParams& pools, const PoolParams& analytic,
                                 const FdOptions& options) {
  FdReport report;
  if (!(options.step > 0.0)) return report;

  struct Coord {
    std::size_t pool, row, col;
  };
  std::vector<Coord> coords;
  for (std::size_t p = 0; p < pools.size(); ++p) {
    for (std::size_t r = 0; r < pools[p].rows(); ++r) {
      for (std::size_t c = 0; c < pools[p].cols(); ++c) coords.push_back({p, r, c});
    }
  }
  if (options.max_coordinates > 0 && options.max_coordinates < coords.size()) {
    Rng rng(options.sample_seed);
    for (std::size_t i = 0; i < options.max_coordinates; ++i) {
      std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    }
    coords.resize(options.max_coordinates);
  }

  const double h = options.step;
  const LossProbe base = evaluate(pools);
  PoolParams probe = pools;
  for (const auto& at : coords) {
    double& cell = probe[at.pool](at.row, at.col);
    const double original = cell;
    cell = original + h;
    const LossProbe plus = evaluate(probe);
    cell = original - h;
    const LossProbe minus = evaluate(probe);
    cell = original;

    FdCoordinate fc{at.pool, at.row, at.col};
    fc.analytic = analytic[at.pool](at.row, at.col);
    fc.numeric = (plus.loss - minus.loss) / (2.0 * h);
    for (std::size_t t = 0; t < base.slacks.size() && !fc.excluded; ++t) {
      const double s0 = base.slacks[t];
      const double sp = plus.slacks.at(t);
      const double sm = minus.slacks.at(t);
      const bool flips = (s0 > 0.0) != (sp > 0.0) || (s0 > 0.0) != (sm > 0.0);
      const bool near_and_moving = std::abs(s0) < 10.0 * h && (sp != s0 || sm != s0);
      fc.excluded = flips || near_and_moving;
    }
    const double scale = std::max({std::abs(fc.analytic), std::abs(fc.numeric), options.scale_floor});
    fc.rel_error = std::abs(fc.analytic - fc.numeric) / scale;
    if (fc.excluded) {
      ++report.excluded;
    } else {
      ++report.checked;
      report.max_rel_error = std::max(report.max_rel_error, fc.rel_error);
      report.max_abs_analytic = std::max(report.max_abs_analytic, std::abs(fc.analytic));
      report.max_abs_numeric = std::max(report.max_abs_numeric, std::abs(fc.numeric));
    }
    report.coordinates.push_back(fc);
  }
  return report;
}

}  // namespace cpt
