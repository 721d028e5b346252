#include "evfuse/opinion.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "evfuse/errors.hpp"

namespace evfuse {

CategorySet CategorySet::with_count(std::size_t n) {
  if (n < 2) throw ConfigError("need at least two categories");
  CategorySet set;
  if (n == 2) return set;
  set.labels.clear();
  for (std::size_t i = 0; i < n; ++i) set.labels.push_back("class" + std::to_string(i));
  return set;
}

Opinion::Opinion(std::vector<double> beliefs, double uncertainty)
    : beliefs_(std::move(beliefs)), uncertainty_(uncertainty) {
  if (beliefs_.empty()) throw DomainError("opinion needs at least one category");
  double total = uncertainty_;
  for (double b : beliefs_) {
    if (!(b >= 0.0) || !std::isfinite(b)) throw DomainError("belief mass must be finite and >= 0");
    total += b;
  }
  if (!(uncertainty_ >= 0.0) || !std::isfinite(uncertainty_))
    throw DomainError("uncertainty must be finite and >= 0");
  if (std::abs(total - 1.0) > kOpinionTolerance) {
    std::ostringstream os;
    os << "beliefs + uncertainty = " << total << ", expected 1";
    throw DomainError(os.str());
  }
}

Opinion Opinion::vacuous(std::size_t n_categories) {
  return Opinion(std::vector<double>(n_categories, 0.0), 1.0);
}

DirichletParams::DirichletParams(std::vector<double> alphas) : alphas_(std::move(alphas)) {
  if (alphas_.empty()) throw DomainError("empty Dirichlet parameter vector");
  for (double a : alphas_)
    if (!(a >= 1.0) || !std::isfinite(a)) throw DomainError("Dirichlet alpha must be >= 1");
  strength_ = std::accumulate(alphas_.begin(), alphas_.end(), 0.0);
}

DirichletParams evidence_to_alpha(std::span<const double> evidence) {
  std::vector<double> alphas;
  alphas.reserve(evidence.size());
  for (double e : evidence) {
    if (!std::isfinite(e) || e < 0.0) throw InvalidEvidence("evidence must be finite and >= 0");
    alphas.push_back(e + 1.0);
  }
  return DirichletParams(std::move(alphas));
}

Opinion alpha_to_opinion(const DirichletParams& params) {
  const double s = params.strength();
  std::vector<double> beliefs;
  beliefs.reserve(params.categories());
  for (double a : params.alphas()) beliefs.push_back((a - 1.0) / s);
  return Opinion(std::move(beliefs), static_cast<double>(params.categories()) / s);
}

std::vector<double> expected_probability(const DirichletParams& params) {
  std::vector<double> p;
  p.reserve(params.categories());
  for (double a : params.alphas()) p.push_back(a / params.strength());
  return p;
}

DirichletParams opinion_to_alpha(const Opinion& op, std::size_t n_categories) {
  if (op.categories() != n_categories) throw ShapeError("category count mismatch");
  if (op.uncertainty() <= 0.0)
    throw DegenerateOpinion("u = 0 corresponds to infinite evidence");
  const double s = static_cast<double>(n_categories) / op.uncertainty();
  std::vector<double> alphas;
  alphas.reserve(n_categories);
  for (double b : op.beliefs()) alphas.push_back(b * s + 1.0);
  return DirichletParams(std::move(alphas));
}

std::vector<double> fused_prediction(const Opinion& op, std::size_t n_categories) {
  if (op.categories() != n_categories) throw ShapeError("category count mismatch");
  if (op.uncertainty() <= 0.0)
    throw DegenerateOpinion("u = 0 corresponds to infinite evidence");
  const double share = op.uncertainty() / static_cast<double>(n_categories);
  std::vector<double> p;
  p.reserve(n_categories);
  for (double b : op.beliefs()) p.push_back(b + share);
  return p;
}

namespace kernel {

double conflict(std::span<const double> b1, std::span<const double> b2) {
  // sum_{i != j} b1_i b2_j = (sum b1)(sum b2) - sum_i b1_i b2_i
  double s1 = 0.0, s2 = 0.0, agree = 0.0;
  for (std::size_t i = 0; i < b1.size(); ++i) {
    s1 += b1[i];
    s2 += b2[i];
    agree += b1[i] * b2[i];
  }
  return s1 * s2 - agree;
}

double combine(std::span<const double> b1, double u1, std::span<const double> b2, double u2,
               std::span<double> out_b) {
  const double c = conflict(b1, b2);
  if (c >= 1.0 - kConflictLimit) throw TotalConflict("conflict coefficient reached 1");
  const double scale = 1.0 / (1.0 - c);
  for (std::size_t n = 0; n < b1.size(); ++n)
    out_b[n] = scale * (b1[n] * b2[n] + b1[n] * u2 + b2[n] * u1);
  return scale * u1 * u2;
}

void combine_backward(std::span<const double> b1, double u1, std::span<const double> b2,
                      double u2, std::span<const double> grad_b, double grad_u,
                      std::span<double> grad_b1, double& grad_u1, std::span<double> grad_b2,
                      double& grad_u2) {
  const std::size_t n_cat = b1.size();
  double s1 = 0.0, s2 = 0.0, agree = 0.0;
  for (std::size_t i = 0; i < n_cat; ++i) {
    s1 += b1[i];
    s2 += b2[i];
    agree += b1[i] * b2[i];
  }
  const double k = 1.0 - (s1 * s2 - agree);
  const double inv_k = 1.0 / k;

  // Outputs are numerator / k; dL/dk = -(sum_n g_n b_n + g_u u) / k.
  double weighted = grad_u * u1 * u2;
  for (std::size_t n = 0; n < n_cat; ++n)
    weighted += grad_b[n] * (b1[n] * b2[n] + b1[n] * u2 + b2[n] * u1);
  const double grad_k = -weighted * inv_k * inv_k;

  double gu1 = grad_u * u2 * inv_k;
  double gu2 = grad_u * u1 * inv_k;
  for (std::size_t n = 0; n < n_cat; ++n) {
    gu1 += grad_b[n] * b2[n] * inv_k;
    gu2 += grad_b[n] * b1[n] * inv_k;
  }
  for (std::size_t i = 0; i < n_cat; ++i) {
    // dk/db1_i = -(s2 - b2_i), dk/db2_i = -(s1 - b1_i)
    grad_b1[i] = grad_b[i] * (b2[i] + u2) * inv_k - grad_k * (s2 - b2[i]);
    grad_b2[i] = grad_b[i] * (b1[i] + u1) * inv_k - grad_k * (s1 - b1[i]);
  }
  grad_u1 = gu1;
  grad_u2 = gu2;
}

}  // namespace kernel

double conflict(const Opinion& a, const Opinion& b) {
  if (a.categories() != b.categories()) throw ShapeError("category count mismatch");
  return kernel::conflict(a.beliefs(), b.beliefs());
}

Opinion combine(const Opinion& a, const Opinion& b) {
  if (a.categories() != b.categories()) throw ShapeError("category count mismatch");
  std::vector<double> fused(a.categories());
  const double u = kernel::combine(a.beliefs(), a.uncertainty(), b.beliefs(), b.uncertainty(), fused);
  return Opinion(std::move(fused), u);
}

Opinion combine_many(std::span<const Opinion> opinions) {
  if (opinions.empty()) throw EmptyFusion("no opinions to combine");
  Opinion acc = opinions.front();
  for (std::size_t i = 1; i < opinions.size(); ++i) acc = combine(acc, opinions[i]);
  return acc;
}

Opinion average_opinions(std::span<const Opinion> opinions) {
  if (opinions.empty()) throw EmptyFusion("no opinions to average");
  const std::size_t n_cat = opinions.front().categories();
  std::vector<double> beliefs(n_cat, 0.0);
  double u = 0.0;
  for (const auto& op : opinions) {
    if (op.categories() != n_cat) throw ShapeError("category count mismatch");
    for (std::size_t n = 0; n < n_cat; ++n) beliefs[n] += op.belief(n);
    u += op.uncertainty();
  }
  double total = u;
  for (double b : beliefs) total += b;
  for (double& b : beliefs) b /= total;
  return Opinion(std::move(beliefs), u / total);
}

OpinionGrid::OpinionGrid(std::size_t height, std::size_t width, std::size_t n_categories)
    : height_(height),
      width_(width),
      n_(n_categories),
      beliefs_(height * width * n_categories, 0.0),
      uncertainty_(height * width, 1.0) {
  if (n_categories < 2) throw ConfigError("need at least two categories");
}

Opinion OpinionGrid::at(std::size_t pixel) const {
  auto b = beliefs(pixel);
  return Opinion(std::vector<double>(b.begin(), b.end()), uncertainty_[pixel]);
}

void OpinionGrid::set(std::size_t pixel, const Opinion& op) {
  if (op.categories() != n_) throw ShapeError("category count mismatch");
  auto dst = beliefs(pixel);
  for (std::size_t n = 0; n < n_; ++n) dst[n] = op.belief(n);
  uncertainty_[pixel] = op.uncertainty();
}

}  // namespace evfuse
