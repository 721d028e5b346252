#pragma once

// Dice + digamma-form evidence loss over evidential segmentation outputs,
// with analytic gradients back to the raw per-phase evidence.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace evfuse {

struct LossWeights {
  double lambda_p = 0.5;
  double lambda_m = 1.0;
  double dice_smooth = 1e-5;
  /// Divide the evidence term by H*W inside L_gamma (pixel mean instead of sum).
  bool mean_evidence = true;

  void validate() const;
};

/// Pixel-major H x W x N field of reals (alphas, probabilities, evidence,
/// or gradients thereof).
class CategoryField {
 public:
  CategoryField() = default;
  CategoryField(std::size_t height, std::size_t width, std::size_t n_categories,
                double fill = 0.0);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t categories() const { return n_; }
  std::size_t pixels() const { return height_ * width_; }

  double& at(std::size_t pixel, std::size_t n) { return values_[pixel * n_ + n]; }
  double at(std::size_t pixel, std::size_t n) const { return values_[pixel * n_ + n]; }
  std::span<double> pixel(std::size_t p) { return {values_.data() + p * n_, n_}; }
  std::span<const double> pixel(std::size_t p) const { return {values_.data() + p * n_, n_}; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool same_shape(const CategoryField& other) const {
    return height_ == other.height_ && width_ == other.width_ && n_ == other.n_;
  }

 private:
  std::size_t height_ = 0, width_ = 0, n_ = 0;
  std::vector<double> values_;
};

/// One-hot ground truth stored as a label per pixel.
class GroundTruthGrid {
 public:
  GroundTruthGrid(std::size_t height, std::size_t width, std::size_t n_categories,
                  std::vector<std::uint8_t> labels);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t categories() const { return n_; }
  std::size_t pixels() const { return labels_.size(); }
  std::uint8_t label(std::size_t pixel) const { return labels_[pixel]; }
  double y(std::size_t pixel, std::size_t n) const { return labels_[pixel] == n ? 1.0 : 0.0; }
  const std::vector<std::uint8_t>& labels() const { return labels_; }

  void check_shape(const CategoryField& field) const;

 private:
  std::size_t height_, width_, n_;
  std::vector<std::uint8_t> labels_;
};

/// Sum over pixels of sum_n y^n [psi(S) - psi(alpha^n)].
double evidence_loss(const GroundTruthGrid& y, const CategoryField& alphas);
CategoryField evidence_loss_grad(const GroundTruthGrid& y, const CategoryField& alphas);

/// Smooth soft Dice, class-averaged: 1 - mean_n (2 I_n + eps) / (Y_n + P_n + eps).
double dice_loss(const GroundTruthGrid& y, const CategoryField& p, double smooth = 1e-5);
CategoryField dice_loss_grad(const GroundTruthGrid& y, const CategoryField& p,
                             double smooth = 1e-5);

/// L_gamma = dice_loss + evidence_scale * evidence_loss.
double combined_loss(const GroundTruthGrid& y, const CategoryField& p, const CategoryField& alphas,
                     double smooth = 1e-5, double evidence_scale = 1.0);

/// Evidence-term multiplier implied by weights for a grid of `pixels` pixels.
double evidence_scale(const LossWeights& weights, std::size_t pixels);

struct PhaseOutput {
  CategoryField probabilities;
  CategoryField alphas;
};

struct LossBreakdown {
  double total = 0.0;
  double phase_term = 0.0;    // (lambda_p / |S|) sum_s L_gamma
  double mixture_term = 0.0;  // lambda_m L_gamma on the fused output
};

LossBreakdown total_loss(const GroundTruthGrid& y, std::span<const PhaseOutput> per_phase,
                         const PhaseOutput& fused, const LossWeights& weights);

/// Per-phase evidence -> alphas, probabilities, opinions; fused by the
/// combination rule in list order. This is the differentiable head shared by
/// training and loss_gradients().
struct FusionForward {
  std::vector<PhaseOutput> per_phase;
  PhaseOutput fused;
  std::vector<double> fused_uncertainty;
};

FusionForward fuse_evidence(std::span<const CategoryField> evidence);

struct EvidenceGradients {
  LossBreakdown loss;
  std::vector<CategoryField> grad;  // one per input phase, same shape as evidence
};

/// Total loss and its analytic gradient w.r.t. every evidence value.
EvidenceGradients loss_gradients(const GroundTruthGrid& y, std::span<const CategoryField> evidence,
                                 const LossWeights& weights);

}  // namespace evfuse
