#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "cpt/label_space.hpp"
#include "cpt/matrix.hpp"

namespace cpt {

enum class SimilarityMode { kCosine, kDot };
enum class Direction { kUni, kBi };

/// Pool parameters in binary64, indexed by modality id.
using PoolParams = std::vector<MatrixD>;

/// One modality's mini-batch: unit-norm text embeddings and the sparse rows of
/// the B x N ground-truth matrix.
struct IntraBatch {
  ModalityId modality;
  MatrixD embeddings;
  std::vector<std::vector<std::size_t>> positives;

  std::size_t size() const noexcept { return embeddings.rows(); }
  void validate(const LabelSpace& space) const;
};

/// s[k][j] = <h_k, p_j / |p_j|> (cosine) or <h_k, p_j> (dot).
MatrixD similarity(const MatrixD& embeddings, const MatrixD& prompts, SimilarityMode mode);

/// Chains dL/ds back to dL/dprompts, including the normalization Jacobian in cosine mode.
MatrixD similarity_backward(const MatrixD& embeddings, const MatrixD& prompts, const MatrixD& grad_sims,
                            SimilarityMode mode);

struct RankingResult {
  double loss = 0.0;
  MatrixD grad_sims;
  /// margin - s_ki + s_kj for every (k, i in c+, j in c-) term, in loop order.
  std::vector<double> slacks;
};

/// L = 1/B sum_k sum_{i in c+} sum_{j in c-} max(0, margin - s_ki + s_kj), with
/// c- every global index that is not a positive of row k.
RankingResult ranking_loss(const std::vector<std::vector<std::size_t>>& positives, const MatrixD& sims, double margin);

struct IntraResult {
  /// Ranking loss per modality id; zero where no batch was given.
  std::vector<double> per_modality;
  double total = 0.0;
  PoolParams grads;
  std::vector<double> slacks;
};

IntraResult intra_loss(const LabelSpace& space, const std::vector<IntraBatch>& batches, const PoolParams& pools,
                       double margin, SimilarityMode mode);

struct InterConfig {
  ModalityId weak;
  std::vector<ModalityId> strong;
  double tau = 0.07;
  Direction direction = Direction::kUni;

  void validate(const LabelSpace& space) const;
};

struct InterResult {
  /// One entry per cfg.strong, same order (L_v2a, L_v2w, ...).
  std::vector<double> per_strong;
  std::vector<ModalityId> strong;
  double total = 0.0;
  PoolParams grads;
};

/// Masked weak-to-strong contrastive loss over full pools. For each strong
/// modality t, row i of softmax(cos(weak_i, strong_k) / tau) over k contributes
/// -log p_ii only when i lies in t's block; the mean is taken over those rows.
/// In uni mode strong pools are constants and receive exactly zero gradient.
InterResult inter_loss(const LabelSpace& space, const PoolParams& pools, const InterConfig& cfg);

/// Weighted combination of the intra and inter objectives.
struct GradientBundle {
  PoolParams grads;
  std::vector<double> intra_per_modality;
  std::vector<std::pair<ModalityId, double>> inter_per_strong;
  double l_intra = 0.0;
  double l_inter = 0.0;
  double l_total = 0.0;
};

/// L_total = lambda1 L_intra + lambda2 L_inter. A zero weight drops that
/// objective's gradient entirely. Rows flagged in `frozen` get zero gradient.
GradientBundle total_loss(IntraResult intra, std::optional<InterResult> inter, double lambda1, double lambda2,
                          const std::vector<std::vector<std::uint8_t>>& frozen);

// --- finite differences -------------------------------------------------

struct LossProbe {
  double loss = 0.0;
  /// Hinge slacks; a sign change or a near-zero slack that moves marks a kink.
  std::vector<double> slacks;
};

using LossEvaluator = std::function<LossProbe(const PoolParams&)>;

struct FdCoordinate {
  std::size_t pool = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool excluded = false;
};

struct FdOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error.
  double scale_floor = 1e-6;
  /// 0 checks every coordinate; otherwise a seeded sample of this size.
  std::size_t max_coordinates = 0;
  std::uint64_t sample_seed = 0;
};

struct FdReport {
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  std::vector<FdCoordinate> coordinates;
  bool passed(double tolerance) const { return checked > 0 && max_rel_error < tolerance; }
};

/// Central differences (L(p + h e) - L(p - h e)) / 2h against `analytic`.
FdReport finite_difference_check(const LossEvaluator& evaluate, const PoolParams& pools, const PoolParams& analytic,
                                 const FdOptions& options = {});

}  // namespace cpt
