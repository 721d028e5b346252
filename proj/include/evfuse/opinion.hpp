#pragma once

// Subjective-logic opinion algebra: evidence -> Dirichlet -> opinion, and the
// reduced Dempster combination rule over {singletons, whole frame}.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace evfuse {

inline constexpr double kOpinionTolerance = 1e-9;
/// combine() refuses to renormalize once conflict reaches 1 - kConflictLimit.
inline constexpr double kConflictLimit = 1e-12;

struct CategorySet {
  std::vector<std::string> labels{"background", "HCC"};

  std::size_t size() const { return labels.size(); }
  static CategorySet with_count(std::size_t n);
};

/// Belief masses over N categories plus an uncertainty mass; sums to one.
class Opinion {
 public:
  Opinion(std::vector<double> beliefs, double uncertainty);

  /// Zero belief, u = 1. Two-sided identity of combine().
  static Opinion vacuous(std::size_t n_categories);

  std::span<const double> beliefs() const { return beliefs_; }
  double belief(std::size_t n) const { return beliefs_.at(n); }
  double uncertainty() const { return uncertainty_; }
  std::size_t categories() const { return beliefs_.size(); }

 private:
  std::vector<double> beliefs_;
  double uncertainty_;
};

/// Dirichlet parameters, every alpha >= 1.
class DirichletParams {
 public:
  explicit DirichletParams(std::vector<double> alphas);

  std::span<const double> alphas() const { return alphas_; }
  double alpha(std::size_t n) const { return alphas_.at(n); }
  double strength() const { return strength_; }
  std::size_t categories() const { return alphas_.size(); }

 private:
  std::vector<double> alphas_;
  double strength_;
};

DirichletParams evidence_to_alpha(std::span<const double> evidence);
Opinion alpha_to_opinion(const DirichletParams& params);
std::vector<double> expected_probability(const DirichletParams& params);
DirichletParams opinion_to_alpha(const Opinion& op, std::size_t n_categories);

/// p^n = b^n + u/N, the Dirichlet mean of the opinion's reconstructed alphas.
std::vector<double> fused_prediction(const Opinion& op, std::size_t n_categories);

double conflict(const Opinion& a, const Opinion& b);
Opinion combine(const Opinion& a, const Opinion& b);
/// Left fold of combine() in list order.
Opinion combine_many(std::span<const Opinion> opinions);

/// Arithmetic mean of beliefs and uncertainties, renormalized. Ablation
/// baseline for combine_many().
Opinion average_opinions(std::span<const Opinion> opinions);

namespace kernel {

// Allocation-free forms used on per-pixel hot paths. Beliefs are spans of
// length N; the return value is the output uncertainty.

double conflict(std::span<const double> b1, std::span<const double> b2);

double combine(std::span<const double> b1, double u1, std::span<const double> b2, double u2,
               std::span<double> out_b);

/// Reverse pass of combine(). Given upstream gradients (grad_b, grad_u) on the
/// fused opinion, accumulates gradients w.r.t. both inputs into the grad_b1,
/// grad_u1, grad_b2, grad_u2 outputs (overwritten, not added).
void combine_backward(std::span<const double> b1, double u1, std::span<const double> b2,
                      double u2, std::span<const double> grad_b, double grad_u,
                      std::span<double> grad_b1, double& grad_u1, std::span<double> grad_b2,
                      double& grad_u2);

}  // namespace kernel

/// H x W field of opinions sharing one category count.
class OpinionGrid {
 public:
  OpinionGrid(std::size_t height, std::size_t width, std::size_t n_categories);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t categories() const { return n_; }
  std::size_t pixels() const { return height_ * width_; }

  std::span<double> beliefs(std::size_t pixel) { return {beliefs_.data() + pixel * n_, n_}; }
  std::span<const double> beliefs(std::size_t pixel) const {
    return {beliefs_.data() + pixel * n_, n_};
  }
  double& uncertainty(std::size_t pixel) { return uncertainty_[pixel]; }
  double uncertainty(std::size_t pixel) const { return uncertainty_[pixel]; }

  Opinion at(std::size_t pixel) const;
  void set(std::size_t pixel, const Opinion& op);

  std::span<const double> uncertainties() const { return uncertainty_; }

 private:
  std::size_t height_, width_, n_;
  std::vector<double> beliefs_;
  std::vector<double> uncertainty_;
};

}  // namespace evfuse
