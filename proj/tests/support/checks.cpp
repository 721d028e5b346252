#include "checks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "evfuse/autodiff.hpp"
#include "evfuse/losses.hpp"
#include "evfuse/metrics.hpp"
#include "evfuse/network.hpp"
#include "evfuse/opinion.hpp"
#include "evfuse/special.hpp"
#include "oracles.hpp"

namespace evfuse::testing {

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[160];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

double max_abs_diff(const Opinion& a, const Opinion& b) {
  double d = std::abs(a.uncertainty() - b.uncertainty());
  for (std::size_t i = 0; i < a.categories(); ++i)
    d = std::max(d, std::abs(a.belief(i) - b.belief(i)));
  return d;
}

double mass_sum(const Opinion& op) {
  double s = op.uncertainty();
  for (double b : op.beliefs()) s += b;
  return s;
}

Opinion scaled_opinion(std::span<const double> q, double u) {
  std::vector<double> b(q.begin(), q.end());
  for (auto& v : b) v *= (1.0 - u);
  return Opinion(b, u);
}

}  // namespace

Check opinion_properties(std::size_t trials, std::uint64_t seed) {
  Check c;
  std::mt19937_64 rng(seed);
  double worst_closure = 0, worst_comm = 0, worst_assoc = 0, worst_ident = 0, worst_oracle = 0;
  double worst_dominant = 0, worst_drop = 0, worst_u_min = 0, worst_round = 0, worst_pred = 0;
  std::size_t dominant_cases = 0, argmax_violations = 0, monotone_violations = 0;

  for (std::size_t n : {2u, 3u, 5u}) {
    const Opinion vac = Opinion::vacuous(n);
    for (std::size_t t = 0; t < trials; ++t) {
      const Opinion o = random_opinion(n, rng);
      const Opinion a = random_opinion(n, rng);
      const Opinion x = random_opinion(n, rng);
      const Opinion oa = combine(o, a);

      worst_closure = std::max(worst_closure, std::abs(mass_sum(oa) - 1.0));
      worst_comm = std::max(worst_comm, max_abs_diff(oa, combine(a, o)));
      worst_assoc = std::max(worst_assoc, max_abs_diff(combine(oa, x), combine(o, combine(a, x))));
      worst_ident = std::max({worst_ident, max_abs_diff(combine(o, vac), o),
                              max_abs_diff(combine(vac, o), o)});
      if (t % 8 == 0) worst_oracle = std::max(worst_oracle, max_abs_diff(oa, dempster_oracle(o, a)));

      // Dominant target: a's top belief is at least every belief of o, so the
      // fused belief there cannot fall below o's.
      const auto bo = o.beliefs();
      const std::size_t target =
          static_cast<std::size_t>(std::max_element(a.beliefs().begin(), a.beliefs().end()) -
                                   a.beliefs().begin());
      if (a.belief(target) >= *std::max_element(bo.begin(), bo.end())) {
        ++dominant_cases;
        worst_dominant = std::max(worst_dominant, o.belief(target) - oa.belief(target));
      }
      // Bound on how far any fused belief can drop below o's.
      for (std::size_t k = 0; k < n; ++k) {
        const double drop = o.belief(k) - oa.belief(k);
        const double bound = o.belief(k) * (1.0 + o.uncertainty()) /
                             (1.0 / (1.0 - a.uncertainty()) + o.uncertainty());
        worst_drop = std::max(worst_drop, drop - bound);
      }
      // Fused uncertainty never exceeds either input's.
      worst_u_min = std::max(worst_u_min,
                          oa.uncertainty() - std::min(o.uncertainty(), a.uncertainty()));

      // Round trip and the prediction closed form.
      const auto alphas = opinion_to_alpha(o, n);
      worst_round = std::max(worst_round, max_abs_diff(alpha_to_opinion(alphas), o));
      const auto p = fused_prediction(oa, n);
      const auto q = expected_probability(opinion_to_alpha(oa, n));
      for (std::size_t k = 0; k < n; ++k) worst_pred = std::max(worst_pred, std::abs(p[k] - q[k]));

      // Fused prediction keeps the belief argmax when the top-two margin exceeds 1e-9.
      std::vector<double> sorted(oa.beliefs().begin(), oa.beliefs().end());
      std::sort(sorted.rbegin(), sorted.rend());
      if (sorted[0] - sorted[1] > 1e-9) {
        const auto ib = std::max_element(oa.beliefs().begin(), oa.beliefs().end()) - oa.beliefs().begin();
        const auto ip = std::max_element(p.begin(), p.end()) - p.begin();
        argmax_violations += ib != ip;
      }
    }

    // Fused u is non-decreasing in one input's u (beliefs scaled along a fixed
    // direction, u in {0.05, ..., 0.95}).
    for (std::size_t t = 0; t < std::max<std::size_t>(trials / 50, 20); ++t) {
      const Opinion other = random_opinion(n, rng);
      const Opinion qop = random_opinion(n, rng);
      std::vector<double> q(qop.beliefs().begin(), qop.beliefs().end());
      double qs = 0;
      for (double v : q) qs += v;
      for (auto& v : q) v /= qs;
      double prev_ao = -1.0, prev_oa = -1.0;
      for (int step = 1; step <= 19; ++step) {
        const Opinion varied = scaled_opinion(q, 0.05 * step);
        const double u_ao = combine(other, varied).uncertainty();
        const double u_oa = combine(varied, other).uncertainty();
        monotone_violations += (u_ao < prev_ao - 1e-12) + (u_oa < prev_oa - 1e-12);
        prev_ao = u_ao;
        prev_oa = u_oa;
      }
    }
  }

  c.expect(worst_closure <= 1e-9, fmt("closure error %.3g", worst_closure));
  c.expect(worst_comm <= 1e-9, fmt("commutativity error %.3g", worst_comm));
  c.expect(worst_assoc <= 1e-8, fmt("associativity error %.3g", worst_assoc));
  c.expect(worst_ident <= 1e-12, fmt("identity error %.3g", worst_ident));
  c.expect(worst_oracle <= 1e-12, fmt("Dempster oracle mismatch %.3g", worst_oracle));
  c.expect(dominant_cases > 0 && worst_dominant <= 1e-9, fmt("dominant-target belief dropped by %.3g", worst_dominant));
  c.expect(worst_drop <= 1e-9, fmt("belief drop bound exceeded by %.3g", worst_drop));
  c.expect(worst_u_min <= 1e-9, fmt("fused u above min input u by %.3g", worst_u_min));
  c.expect(monotone_violations == 0, fmt("fused u decreased in input u %.0f times", double(monotone_violations)));
  c.expect(worst_round <= 1e-9, fmt("round trip error %.3g", worst_round));
  c.expect(worst_pred <= 1e-12, fmt("prediction closed form error %.3g", worst_pred));
  c.expect(argmax_violations == 0, "argmax not preserved");
  if (c.pass) {
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "%zu trials/N, assoc err %.2g, P1 cases %zu, P2 slack %.2g, P3 slack %.2g",
                  trials, worst_assoc, dominant_cases, worst_drop, worst_u_min);
    c.detail = buf;
  }
  return c;
}

Check evidence_loss_monte_carlo(std::size_t n_alphas, std::size_t samples, std::uint64_t seed) {
  Check c;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> comp(1.0, 10.0);
  std::uniform_int_distribution<std::size_t> dim(2, 4);
  double worst_z = 0.0;
  for (std::size_t k = 0; k < n_alphas; ++k) {
    const std::size_t n = dim(rng);
    std::vector<double> alpha(n);
    for (auto& a : alpha) a = comp(rng);
    const std::size_t label = rng() % n;
    CategoryField field(1, 1, n);
    std::copy(alpha.begin(), alpha.end(), field.pixel(0).begin());
    const GroundTruthGrid y(1, 1, n, {static_cast<std::uint8_t>(label)});
    const double closed = evidence_loss(y, field);
    const auto mc = dirichlet_cross_entropy_mc(alpha, label, samples, seed + 1000 + k);
    worst_z = std::max(worst_z, std::abs(closed - mc.mean) / mc.standard_error);
  }
  c.expect(worst_z <= 3.0, fmt("closed form off by %.2f standard errors", worst_z));
  if (c.pass) c.detail = fmt("worst deviation %.2f standard errors", worst_z);
  return c;
}

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kFdFloor = 1e-7;

// Central differences of `loss` against each entry of `values`.
std::vector<double> numeric_gradient(std::span<double> values, const std::function<double()>& loss) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) g[i] = central_difference(values[i], loss, kFdStep);
  return g;
}

void fill_uniform(std::span<double> v, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& x : v) x = d(rng);
}

std::vector<std::uint8_t> random_labels(std::size_t count, std::size_t n, std::mt19937_64& rng) {
  std::vector<std::uint8_t> labels(count);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % n);
  return labels;
}

}  // namespace

Check gradient_suite(std::uint64_t seed) {
  Check c;
  std::mt19937_64 rng(seed);
  std::string summary;
  auto record = [&](const std::string& name, double err) {
    c.expect(err < 1e-4, fmt((name + " rel err %.3g").c_str(), err));
    summary += name + fmt(" %.1e ", err);
  };

  {  // trigamma as the derivative of digamma
    std::vector<double> xs{0.3, 1.0, 1.7, 4.2, 9.5, 33.0};
    std::vector<double> an, nu;
    for (double x0 : xs) {
      double x = x0;
      an.push_back(trigamma(x0));
      nu.push_back(central_difference(x, [&] { return digamma(x); }, kFdStep));
    }
    record("trigamma", max_relative_error(an, nu, kFdFloor));
  }
  {  // digamma evidence term
    const std::size_t h = 3, w = 3, n = 3;
    CategoryField alphas(h, w, n);
    fill_uniform(alphas.values(), 1.0, 5.0, rng);
    const GroundTruthGrid y(h, w, n, random_labels(h * w, n, rng));
    const auto an = evidence_loss_grad(y, alphas);
    const auto nu = numeric_gradient(alphas.values(), [&] { return evidence_loss(y, alphas); });
    record("evidence", max_relative_error(an.values(), nu, kFdFloor));
  }
  {  // soft dice
    const std::size_t h = 4, w = 4, n = 3;
    CategoryField p(h, w, n);
    fill_uniform(p.values(), 0.05, 0.95, rng);
    const GroundTruthGrid y(h, w, n, random_labels(h * w, n, rng));
    const auto an = dice_loss_grad(y, p);
    const auto nu = numeric_gradient(p.values(), [&] { return dice_loss(y, p); });
    record("dice", max_relative_error(an.values(), nu, kFdFloor));
  }
  {  // exp(tanh(x)) activation
    std::vector<double> an, nu;
    std::uniform_real_distribution<double> d(-4.0, 4.0);
    for (int k = 0; k < 64; ++k) {
      double x = d(rng);
      an.push_back(exp_tanh_derivative(x));
      nu.push_back(central_difference(x, [&] { return exp_tanh(x); }, kFdStep));
    }
    record("exp_tanh", max_relative_error(an, nu, kFdFloor));
  }
  // conv2d (two dilations), relu, exp_tanh, linear through the tape.
  for (std::size_t dilation : {1u, 2u}) {
    Tensor x({2, 6, 6});
    fill_uniform(x.values(), -1.0, 1.0, rng);
    Parameter wp("w", Tensor({3, 2, 3, 3}));
    Parameter bp("b", Tensor({3}));
    fill_uniform(wp.value.values(), -0.5, 0.5, rng);
    fill_uniform(bp.value.values(), -0.2, 0.2, rng);
    auto forward = [&](Graph& g, Var& xin) {
      xin = g.input(x);
      Var y = g.conv2d(xin, g.param(wp), g.param(bp), dilation);
      return g.sum_squares(g.exp_tanh(g.relu(y)));
    };
    auto loss = [&] {
      Graph g;
      Var xin{};
      return g.value(forward(g, xin))[0];
    };
    Graph g;
    Var xin{};
    g.backward(forward(g, xin));
    const std::vector<double> gx(g.grad(xin).values().begin(), g.grad(xin).values().end());
    const auto nx = numeric_gradient(x.values(), loss);
    const auto nw = numeric_gradient(wp.value.values(), loss);
    const auto nb = numeric_gradient(bp.value.values(), loss);
    const std::string tag = "conv d" + std::to_string(dilation);
    record(tag + " input", max_relative_error(gx, nx, kFdFloor));
    record(tag + " weight", max_relative_error(wp.grad.values(), nw, kFdFloor));
    record(tag + " bias", max_relative_error(bp.grad.values(), nb, kFdFloor));
  }
  {  // linear + quadratic loss, with the closed form 2 (W x) x^T as well
    Parameter wp("W", Tensor({3, 4}));
    Tensor x({4});
    fill_uniform(wp.value.values(), -1.0, 1.0, rng);
    fill_uniform(x.values(), -1.0, 1.0, rng);
    auto loss = [&] {
      Graph g;
      return g.value(g.sum_squares(g.linear(g.param(wp), g.input(x))))[0];
    };
    Graph g;
    g.backward(g.sum_squares(g.linear(g.param(wp), g.input(x))));
    const auto nw = numeric_gradient(wp.value.values(), loss);
    record("linear", max_relative_error(wp.grad.values(), nw, kFdFloor));
    std::vector<double> closed(12);
    for (std::size_t i = 0; i < 3; ++i) {
      double wx = 0.0;
      for (std::size_t j = 0; j < 4; ++j) wx += wp.value[i * 4 + j] * x[j];
      for (std::size_t j = 0; j < 4; ++j) closed[i * 4 + j] = 2.0 * wx * x[j];
    }
    record("linear closed form", max_relative_error(wp.grad.values(), closed, kFdFloor));
  }
  // Fusion path: evidence -> opinions -> combination fold -> total loss.
  struct FusionCase {
    std::size_t h, w, n, phases;
    bool mean;
  };
  for (const FusionCase fc : {FusionCase{3, 3, 2, 2, false}, FusionCase{4, 4, 3, 4, false},
                              FusionCase{3, 3, 2, 4, true}}) {
    std::vector<CategoryField> evidence(fc.phases, CategoryField(fc.h, fc.w, fc.n));
    for (auto& e : evidence) fill_uniform(e.values(), 0.0, 3.0, rng);
    const GroundTruthGrid y(fc.h, fc.w, fc.n, random_labels(fc.h * fc.w, fc.n, rng));
    LossWeights weights;
    weights.mean_evidence = fc.mean;
    const auto an = loss_gradients(y, evidence, weights);
    std::vector<double> a_all, n_all;
    for (auto& e : evidence) {
      const auto nu = numeric_gradient(e.values(), [&] { return loss_gradients(y, evidence, weights).loss.total; });
      n_all.insert(n_all.end(), nu.begin(), nu.end());
    }
    for (const auto& g : an.grad) a_all.insert(a_all.end(), g.values().begin(), g.values().end());
    record("fusion " + std::to_string(fc.phases) + "x" + std::to_string(fc.n),
           max_relative_error(a_all, n_all, kFdFloor));
  }
  {  // whole network on an 8x8 slice, every parameter tensor
    const std::size_t side = 8;
    PhaseStack sample(side, side);
    for (Phase p : kAllPhases) {
      Tensor img({side, side});
      fill_uniform(img.values(), 0.0, 1.0, rng);
      sample.set_image(p, img);
    }
    sample.set_mask(random_labels(side * side, 2, rng));
    NetworkConfig cfg;
    cfg.channels = 3;
    cfg.dilations = {1, 2};
    cfg.seed = seed;
    Network net(cfg);
    for (auto& p : net.parameters())
      if (p.name.ends_with("bias")) fill_uniform(p.value.values(), -0.3, 0.3, rng);
    LossWeights weights;
    net.zero_grad();
    accumulate_sample_gradients(net, sample, weights);
    std::vector<double> a_all, n_all;
    for (auto& p : net.parameters()) {
      for (std::size_t i = 0; i < p.value.size(); i += std::max<std::size_t>(1, p.value.size() / 6)) {
        a_all.push_back(p.grad[i]);
        n_all.push_back(central_difference(p.value.values()[i],
                                           [&] { return evaluate_loss(net, sample, weights).total; },
                                           kFdStep));
      }
    }
    record("network", max_relative_error(a_all, n_all, kFdFloor));
  }
  if (c.pass) c.detail = summary;
  return c;
}

Check evidence_bound(std::size_t passes, std::uint64_t seed) {
  Check c;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> feat(0.0, 2.0);
  const double e_lo = std::exp(-1.0), e_hi = std::numbers::e;
  const double u_lo = 1.0 / (1.0 + std::numbers::e), u_hi = 1.0 / (1.0 + std::exp(-1.0));
  double min_e = 1e9, max_e = -1e9, min_u = 1e9, max_u = -1e9;
  for (std::size_t k = 0; k < passes; ++k) {
    // A freshly initialized network per pass.
    NetworkConfig cfg;
    cfg.seed = seed + k;
    Network net(cfg);
    Tensor f({cfg.channels, 4, 4});
    for (auto& v : f.values()) v = feat(rng);
    Graph g;
    const std::size_t phase = k % cfg.n_phases;
    const Tensor& ev = g.value(net.expert_forward(g, g.input(f), phase));
    const auto field = to_field(ev);
    for (std::size_t px = 0; px < field.pixels(); ++px) {
      double s = 0.0;
      for (double e : field.pixel(px)) {
        min_e = std::min(min_e, e);
        max_e = std::max(max_e, e);
        s += e + 1.0;
      }
      const double u = 2.0 / s;
      min_u = std::min(min_u, u);
      max_u = std::max(max_u, u);
    }
  }
  c.expect(min_e > e_lo && max_e < e_hi, fmt("evidence escaped (1/e, e): min %.17g", min_e) +
                                             fmt(" max %.17g", max_e));
  c.expect(min_u > u_lo && max_u < u_hi, fmt("uncertainty escaped bounds: min %.17g", min_u) +
                                             fmt(" max %.17g", max_u));
  if (c.pass) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "evidence in [%.4f, %.4f], u in [%.4f, %.4f] over %zu passes",
                  min_e, max_e, min_u, max_u, passes);
    c.detail = buf;
  }
  return c;
}

Check metric_examples() {
  Check c;
  using Mask = std::vector<std::uint8_t>;
  auto near = [](double a, double b, double tol = 1e-12) { return std::abs(a - b) <= tol; };

  c.expect(dice_score(Mask{1, 1, 0}, Mask{1, 1, 0}) == 1.0, "dice identical != 1");
  c.expect(dice_score(Mask{1, 0, 0}, Mask{0, 1, 0}) == 0.0, "dice disjoint != 0");
  c.expect(near(dice_score(Mask{1, 0, 1, 0}, Mask{1, 1, 0, 0}), 0.5), "dice half example != 0.5");
  c.expect(dice_score(Mask{0, 0}, Mask{0, 0}) == 1.0, "dice both empty != 1");

  auto rec = [](std::string id, Mask pred, Mask truth) {
    EvalRecord r;
    r.case_id = std::move(id);
    r.uncertainty.assign(pred.size(), 0.5);
    r.confidence.assign(pred.size(), 0.9);
    r.prediction = std::move(pred);
    r.truth = std::move(truth);
    return r;
  };
  {
    std::vector<EvalRecord> perfect{rec("a", {1, 0}, {1, 0}), rec("b", {0, 1}, {0, 1})};
    c.expect(dgs(perfect) == 1.0 && dcs(perfect) == 1.0, "perfect slices not scored 1");
    std::vector<EvalRecord> half{rec("a", {1, 0}, {1, 0}), rec("a", {1, 0}, {0, 1})};
    c.expect(near(dgs(half), 0.5), "dgs of dice {1, 0} != 0.5");
    // One case: slice dice 1 and 0.5 (mean 0.75); pooled 2*2/(2+4) = 2/3.
    std::vector<EvalRecord> pooled{rec("c", {1, 0, 0, 0}, {1, 0, 0, 0}),
                                   rec("c", {1, 0, 0, 0}, {1, 1, 1, 0})};
    c.expect(near(dgs(pooled), 0.75), "dgs of constructed case != 0.75");
    c.expect(near(dcs(pooled), 2.0 / 3.0), "pooled dcs != 2/3");
  }
  {
    std::vector<double> conf(50, 1.0);
    std::vector<std::uint8_t> ok(50, 1);
    c.expect(ece(conf, ok) == 0.0, "perfect calibration ece != 0");
    c.expect(near(neg_log_ece(0.0), -std::log(1e-12)), "neg_log_ece floor");
    std::vector<double> c8(100, 0.8);
    std::vector<std::uint8_t> ok8(100, 0);
    std::fill(ok8.begin(), ok8.begin() + 80, 1);
    c.expect(near(ece(c8, ok8, 1), 0.0), "matched single bin ece != 0");
    std::vector<double> c2;
    std::vector<std::uint8_t> ok2;
    for (int i = 0; i < 100; ++i) c2.push_back(0.9), ok2.push_back(i < 70);
    for (int i = 0; i < 100; ++i) c2.push_back(0.6), ok2.push_back(i < 60);
    const double e = ece(c2, ok2, 10);
    c.expect(near(e, 0.1), fmt("two-bin ece %.15g != 0.1", e));
    c.expect(near(neg_log_ece(e), 2.302585092994046, 1e-9), "neg_log of 0.1 != 2.3026");
  }
  {
    std::vector<double> u{1, 0, 0, 1, 0, 0};
    Mask err{1, 0, 0, 1, 0, 0};
    c.expect(ueo(u, err) == 1.0, "ueo on exact error map != 1");
    std::vector<double> flat(6, 0.3);
    Mask none(6, 0);
    c.expect(ueo(flat, none) == ueo_sweep_oracle(flat, none) && ueo(flat, none) == 1.0,
             "ueo no-error case disagrees with sweep oracle");
    std::vector<double> ramp{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    c.expect(ueo(ramp, none) == ueo_sweep_oracle(ramp, none), "ueo no-error ramp vs sweep oracle");
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    std::vector<double> ur(4096);
    Mask er(4096);
    for (std::size_t i = 0; i < ur.size(); ++i) ur[i] = d(rng), er[i] = d(rng) < 0.2;
    c.expect(near(ueo(ur, er), ueo_sweep_oracle(ur, er)), "ueo random map vs sweep oracle");
  }
  {
    std::vector<double> t{1, 4, 2, 8, 5};
    std::vector<double> neg;
    for (double v : t) neg.push_back(10.0 - v);
    c.expect(near(volume_correlation(t, t), 1.0), "r(x, x) != 1");
    c.expect(near(volume_correlation(neg, t), -1.0), "r(c - x, x) != -1");
  }
  if (c.pass) c.detail = "dice, dgs/dcs, ece, ueo, correlation examples";
  return c;
}

}  // namespace evfuse::testing
