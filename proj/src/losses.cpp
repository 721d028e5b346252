#include "evfuse/losses.hpp"

#include <cmath>

#include "evfuse/errors.hpp"
#include "evfuse/opinion.hpp"
#include "evfuse/special.hpp"

namespace evfuse {

void LossWeights::validate() const {
  if (!(lambda_p >= 0.0) || !(lambda_m >= 0.0)) throw ConfigError("loss weights must be >= 0");
  if (!(dice_smooth > 0.0)) throw ConfigError("dice smoothing must be > 0");
}

CategoryField::CategoryField(std::size_t height, std::size_t width, std::size_t n_categories,
                             double fill)
    : height_(height), width_(width), n_(n_categories),
      values_(height * width * n_categories, fill) {}

GroundTruthGrid::GroundTruthGrid(std::size_t height, std::size_t width, std::size_t n_categories,
                                 std::vector<std::uint8_t> labels)
    : height_(height), width_(width), n_(n_categories), labels_(std::move(labels)) {
  if (labels_.size() != height * width) throw ShapeError("label count does not match H x W");
  for (auto l : labels_)
    if (l >= n_categories) throw ShapeError("label outside category range");
}

void GroundTruthGrid::check_shape(const CategoryField& field) const {
  if (field.height() != height_ || field.width() != width_ || field.categories() != n_)
    throw ShapeError("field shape does not match ground truth");
}

double evidence_loss(const GroundTruthGrid& y, const CategoryField& alphas) {
  y.check_shape(alphas);
  double total = 0.0;
  for (std::size_t p = 0; p < y.pixels(); ++p) {
    auto a = alphas.pixel(p);
    double s = 0.0;
    for (double v : a) s += v;
    total += digamma(s) - digamma(a[y.label(p)]);
  }
  return total;
}

CategoryField evidence_loss_grad(const GroundTruthGrid& y, const CategoryField& alphas) {
  y.check_shape(alphas);
  CategoryField grad(y.height(), y.width(), y.categories());
  for (std::size_t p = 0; p < y.pixels(); ++p) {
    auto a = alphas.pixel(p);
    double s = 0.0;
    for (double v : a) s += v;
    const double ts = trigamma(s);
    auto g = grad.pixel(p);
    for (std::size_t n = 0; n < a.size(); ++n) g[n] = ts;
    g[y.label(p)] -= trigamma(a[y.label(p)]);
  }
  return grad;
}

namespace {

struct DiceSums {
  std::vector<double> intersection, truth, predicted;
};

DiceSums dice_sums(const GroundTruthGrid& y, const CategoryField& p) {
  const std::size_t n_cat = y.categories();
  DiceSums sums{std::vector<double>(n_cat, 0.0), std::vector<double>(n_cat, 0.0),
                std::vector<double>(n_cat, 0.0)};
  for (std::size_t px = 0; px < y.pixels(); ++px) {
    const std::size_t t = y.label(px);
    for (std::size_t n = 0; n < n_cat; ++n) sums.predicted[n] += p.at(px, n);
    sums.intersection[t] += p.at(px, t);
    sums.truth[t] += 1.0;
  }
  return sums;
}

}  // namespace

double dice_loss(const GroundTruthGrid& y, const CategoryField& p, double smooth) {
  y.check_shape(p);
  const auto sums = dice_sums(y, p);
  const std::size_t n_cat = y.categories();
  double score = 0.0;
  for (std::size_t n = 0; n < n_cat; ++n)
    score += (2.0 * sums.intersection[n] + smooth) / (sums.truth[n] + sums.predicted[n] + smooth);
  return 1.0 - score / static_cast<double>(n_cat);
}

CategoryField dice_loss_grad(const GroundTruthGrid& y, const CategoryField& p, double smooth) {
  y.check_shape(p);
  const auto sums = dice_sums(y, p);
  const std::size_t n_cat = y.categories();
  const double inv_n = 1.0 / static_cast<double>(n_cat);
  std::vector<double> on_truth(n_cat), off_truth(n_cat);
  for (std::size_t n = 0; n < n_cat; ++n) {
    const double denom = sums.truth[n] + sums.predicted[n] + smooth;
    const double ratio = (2.0 * sums.intersection[n] + smooth) / (denom * denom);
    off_truth[n] = inv_n * ratio;
    on_truth[n] = -inv_n * (2.0 / denom - ratio);
  }
  CategoryField grad(y.height(), y.width(), n_cat);
  for (std::size_t px = 0; px < y.pixels(); ++px) {
    const std::size_t t = y.label(px);
    for (std::size_t n = 0; n < n_cat; ++n) grad.at(px, n) = (n == t) ? on_truth[n] : off_truth[n];
  }
  return grad;
}

double combined_loss(const GroundTruthGrid& y, const CategoryField& p, const CategoryField& alphas,
                     double smooth, double evidence_scale) {
  return dice_loss(y, p, smooth) + evidence_scale * evidence_loss(y, alphas);
}

double evidence_scale(const LossWeights& weights, std::size_t pixels) {
  return weights.mean_evidence ? 1.0 / static_cast<double>(pixels) : 1.0;
}

LossBreakdown total_loss(const GroundTruthGrid& y, std::span<const PhaseOutput> per_phase,
                         const PhaseOutput& fused, const LossWeights& weights) {
  if (per_phase.empty()) throw EmptyFusion("phase-wise loss needs at least one phase");
  weights.validate();
  LossBreakdown out;
  const double scale = evidence_scale(weights, y.pixels());
  double phase_sum = 0.0;
  for (const auto& ph : per_phase)
    phase_sum += combined_loss(y, ph.probabilities, ph.alphas, weights.dice_smooth, scale);
  out.phase_term = weights.lambda_p / static_cast<double>(per_phase.size()) * phase_sum;
  out.mixture_term = weights.lambda_m * combined_loss(y, fused.probabilities, fused.alphas,
                                                      weights.dice_smooth, scale);
  out.total = out.phase_term + out.mixture_term;
  return out;
}

namespace {

// Per-pixel scratch for the fold: opinions of each phase and the running
// combination after each step.
struct FoldTrace {
  std::size_t n_cat, n_phase;
  std::vector<double> phase_b, phase_u, phase_s;  // [phase][n], [phase], [phase]
  std::vector<double> acc_b, acc_u;               // [step][n], [step]

  FoldTrace(std::size_t phases, std::size_t categories)
      : n_cat(categories), n_phase(phases),
        phase_b(phases * categories), phase_u(phases), phase_s(phases),
        acc_b(phases * categories), acc_u(phases) {}

  std::span<double> pb(std::size_t s) { return {phase_b.data() + s * n_cat, n_cat}; }
  std::span<double> ab(std::size_t k) { return {acc_b.data() + k * n_cat, n_cat}; }

  void run(std::span<const CategoryField> evidence, std::size_t px) {
    const double nd = static_cast<double>(n_cat);
    for (std::size_t s = 0; s < n_phase; ++s) {
      auto e = evidence[s].pixel(px);
      double strength = nd;
      for (double v : e) strength += v;
      auto b = pb(s);
      for (std::size_t n = 0; n < n_cat; ++n) b[n] = e[n] / strength;
      phase_u[s] = nd / strength;
      phase_s[s] = strength;
    }
    std::copy(phase_b.begin(), phase_b.begin() + n_cat, acc_b.begin());
    acc_u[0] = phase_u[0];
    for (std::size_t k = 1; k < n_phase; ++k)
      acc_u[k] = kernel::combine(ab(k - 1), acc_u[k - 1], pb(k), phase_u[k], ab(k));
  }
};

void check_evidence(std::span<const CategoryField> evidence) {
  if (evidence.empty()) throw EmptyFusion("no phases present");
  for (const auto& e : evidence)
    if (!e.same_shape(evidence.front())) throw ShapeError("phase evidence shapes differ");
}

// d/de of p = alpha / S with alpha = e + 1: g_e_k = g_p_k / S - sum_n g_p_n alpha_n / S^2
void probability_backward(std::span<const double> alpha, double strength,
                          std::span<const double> grad_p, std::span<double> grad_alpha) {
  double dot = 0.0;
  for (std::size_t n = 0; n < alpha.size(); ++n) dot += grad_p[n] * alpha[n];
  for (std::size_t n = 0; n < alpha.size(); ++n)
    grad_alpha[n] = grad_p[n] / strength - dot / (strength * strength);
}

}  // namespace

FusionForward fuse_evidence(std::span<const CategoryField> evidence) {
  check_evidence(evidence);
  const auto& shape = evidence.front();
  const std::size_t n_cat = shape.categories();
  const std::size_t n_phase = evidence.size();
  const double nd = static_cast<double>(n_cat);

  FusionForward out;
  out.per_phase.reserve(n_phase);
  for (const auto& e : evidence) {
    PhaseOutput ph{CategoryField(e.height(), e.width(), n_cat),
                   CategoryField(e.height(), e.width(), n_cat)};
    for (std::size_t px = 0; px < e.pixels(); ++px) {
      double strength = nd;
      for (std::size_t n = 0; n < n_cat; ++n) {
        const double v = e.at(px, n);
        if (!std::isfinite(v) || v < 0.0) throw InvalidEvidence("evidence must be finite and >= 0");
        strength += v;
      }
      for (std::size_t n = 0; n < n_cat; ++n) {
        ph.alphas.at(px, n) = e.at(px, n) + 1.0;
        ph.probabilities.at(px, n) = (e.at(px, n) + 1.0) / strength;
      }
    }
    out.per_phase.push_back(std::move(ph));
  }

  out.fused = PhaseOutput{CategoryField(shape.height(), shape.width(), n_cat),
                          CategoryField(shape.height(), shape.width(), n_cat)};
  out.fused_uncertainty.resize(shape.pixels());
  FoldTrace trace(n_phase, n_cat);
  for (std::size_t px = 0; px < shape.pixels(); ++px) {
    trace.run(evidence, px);
    auto b = trace.ab(n_phase - 1);
    const double u = trace.acc_u[n_phase - 1];
    if (u <= 0.0) throw DegenerateOpinion("fused uncertainty vanished");
    const double strength = nd / u;
    for (std::size_t n = 0; n < n_cat; ++n) {
      out.fused.alphas.at(px, n) = b[n] * strength + 1.0;
      out.fused.probabilities.at(px, n) = b[n] + u / nd;
    }
    out.fused_uncertainty[px] = u;
  }
  return out;
}

EvidenceGradients loss_gradients(const GroundTruthGrid& y, std::span<const CategoryField> evidence,
                                 const LossWeights& weights) {
  weights.validate();
  auto fwd = fuse_evidence(evidence);
  const std::size_t n_phase = evidence.size();
  const std::size_t n_cat = y.categories();
  const double nd = static_cast<double>(n_cat);

  EvidenceGradients out;
  out.loss = total_loss(y, fwd.per_phase, fwd.fused, weights);

  const double phase_w = weights.lambda_p / static_cast<double>(n_phase);
  const double mix_w = weights.lambda_m;
  const double ev_scale = evidence_scale(weights, y.pixels());

  // Upstream gradients on (p, alpha) for every phase and for the fused output.
  std::vector<CategoryField> phase_gp, phase_ga;
  for (const auto& ph : fwd.per_phase) {
    phase_gp.push_back(dice_loss_grad(y, ph.probabilities, weights.dice_smooth));
    phase_ga.push_back(evidence_loss_grad(y, ph.alphas));
  }
  const auto fused_gp = dice_loss_grad(y, fwd.fused.probabilities, weights.dice_smooth);
  const auto fused_ga = evidence_loss_grad(y, fwd.fused.alphas);

  for (const auto& e : evidence) out.grad.emplace_back(e.height(), e.width(), n_cat);

  FoldTrace trace(n_phase, n_cat);
  std::vector<double> g_alpha(n_cat), g_tmp(n_cat), g_b(n_cat), g_b_left(n_cat),
      g_b_right(n_cat), g_phase_b(n_phase * n_cat);
  std::vector<double> g_phase_u(n_phase);
  for (std::size_t px = 0; px < y.pixels(); ++px) {
    trace.run(evidence, px);

    // Mixture term through p = alpha / S and alpha directly.
    auto fa = fwd.fused.alphas.pixel(px);
    double fs = 0.0;
    for (double v : fa) fs += v;
    probability_backward(fa, fs, fused_gp.pixel(px), g_tmp);
    for (std::size_t n = 0; n < n_cat; ++n)
      g_alpha[n] = mix_w * (g_tmp[n] + ev_scale * fused_ga.at(px, n));

    // alpha_n = b_n N / u + 1
    auto fb = trace.ab(n_phase - 1);
    const double fu = trace.acc_u[n_phase - 1];
    double g_u = 0.0;
    for (std::size_t n = 0; n < n_cat; ++n) {
      g_b[n] = g_alpha[n] * nd / fu;
      g_u -= g_alpha[n] * fb[n] * nd / (fu * fu);
    }

    // Unwind the fold: step k combined acc[k-1] with phase k.
    for (std::size_t k = n_phase - 1; k >= 1; --k) {
      double g_u_left = 0.0, g_u_right = 0.0;
      kernel::combine_backward(trace.ab(k - 1), trace.acc_u[k - 1], trace.pb(k),
                               trace.phase_u[k], g_b, g_u, g_b_left, g_u_left, g_b_right,
                               g_u_right);
      std::copy(g_b_right.begin(), g_b_right.end(), g_phase_b.begin() + k * n_cat);
      g_phase_u[k] = g_u_right;
      std::copy(g_b_left.begin(), g_b_left.end(), g_b.begin());
      g_u = g_u_left;
    }
    std::copy(g_b.begin(), g_b.end(), g_phase_b.begin());
    g_phase_u[0] = g_u;

    for (std::size_t s = 0; s < n_phase; ++s) {
      auto gb = std::span<const double>(g_phase_b.data() + s * n_cat, n_cat);
      auto b = trace.pb(s);
      const double strength = trace.phase_s[s];
      double dot = g_phase_u[s] * trace.phase_u[s];
      for (std::size_t n = 0; n < n_cat; ++n) dot += gb[n] * b[n];

      auto pa = fwd.per_phase[s].alphas.pixel(px);
      probability_backward(pa, strength, phase_gp[s].pixel(px), g_tmp);

      auto ge = out.grad[s].pixel(px);
      for (std::size_t n = 0; n < n_cat; ++n) {
        const double via_opinion = (gb[n] - dot) / strength;
        const double via_phase = phase_w * (g_tmp[n] + ev_scale * phase_ga[s].at(px, n));
        ge[n] = via_opinion + via_phase;
      }
    }
  }
  return out;
}

}  // namespace evfuse
