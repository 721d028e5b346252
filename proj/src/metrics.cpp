#include "evfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "evfuse/errors.hpp"

namespace evfuse {

void EvalRecord::validate() const {
  const std::size_t n = truth.size();
  if (prediction.size() != n || uncertainty.size() != n || confidence.size() != n)
    throw ShapeError("evaluation record grids differ in size");
  for (double u : uncertainty)
    if (!(u > 0.0 && u <= 1.0)) throw DomainError("uncertainty must lie in (0,1]");
  for (double c : confidence)
    if (!(c >= 0.0 && c <= 1.0)) throw DomainError("confidence must lie in [0,1]");
}

namespace {

struct Overlap {
  double intersection = 0.0, pred = 0.0, truth = 0.0;

  void add(std::span<const std::uint8_t> p, std::span<const std::uint8_t> t) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const bool a = p[i] != 0, b = t[i] != 0;
      intersection += (a && b) ? 1.0 : 0.0;
      pred += a ? 1.0 : 0.0;
      truth += b ? 1.0 : 0.0;
    }
  }
  double dice() const {
    if (pred + truth == 0.0) return 1.0;
    return 2.0 * intersection / (pred + truth);
  }
};

}  // namespace

double dice_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) throw ShapeError("dice inputs differ in size");
  Overlap o;
  o.add(pred, truth);
  return o.dice();
}

double dgs(std::span<const EvalRecord> records) {
  if (records.empty()) throw EmptyInput("no slices to score");
  double total = 0.0;
  for (const auto& r : records) total += dice_score(r.prediction, r.truth);
  return total / static_cast<double>(records.size());
}

double dcs(std::span<const EvalRecord> records) {
  if (records.empty()) throw EmptyInput("no slices to score");
  std::vector<std::string> order;
  std::map<std::string, Overlap> cases;
  for (const auto& r : records) {
    if (r.prediction.size() != r.truth.size()) throw ShapeError("dice inputs differ in size");
    auto [it, inserted] = cases.try_emplace(r.case_id);
    if (inserted) order.push_back(r.case_id);
    it->second.add(r.prediction, r.truth);
  }
  double total = 0.0;
  for (const auto& id : order) total += cases.at(id).dice();
  return total / static_cast<double>(order.size());
}

double ece(std::span<const double> confidence, std::span<const std::uint8_t> correct,
           std::size_t n_bins) {
  if (confidence.empty()) throw EmptyInput("no predictions for calibration");
  if (confidence.size() != correct.size()) throw ShapeError("confidence/correctness size mismatch");
  if (n_bins < 1) throw ConfigError("need at least one calibration bin");
  std::vector<double> count(n_bins, 0.0), conf_sum(n_bins, 0.0), hits(n_bins, 0.0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double c = confidence[i];
    if (!(c >= 0.0 && c <= 1.0)) throw DomainError("confidence outside [0,1]");
    const auto bin = std::min(static_cast<std::size_t>(c * static_cast<double>(n_bins)), n_bins - 1);
    count[bin] += 1.0;
    conf_sum[bin] += c;
    hits[bin] += correct[i] ? 1.0 : 0.0;
  }
  const double m = static_cast<double>(confidence.size());
  double total = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] == 0.0) continue;
    total += (count[b] / m) * std::abs(hits[b] / count[b] - conf_sum[b] / count[b]);
  }
  return total;
}

double ece(std::span<const EvalRecord> records, std::size_t n_bins) {
  std::vector<double> conf;
  std::vector<std::uint8_t> correct;
  for (const auto& r : records) {
    if (r.prediction.size() != r.truth.size() || r.confidence.size() != r.truth.size())
      throw ShapeError("evaluation record grids differ in size");
    conf.insert(conf.end(), r.confidence.begin(), r.confidence.end());
    for (std::size_t i = 0; i < r.truth.size(); ++i)
      correct.push_back(r.prediction[i] == r.truth[i] ? 1 : 0);
  }
  return ece(conf, correct, n_bins);
}

double neg_log_ece(double ece_value) { return -std::log(std::max(ece_value, kEceFloor)); }

double ueo(std::span<const double> uncertainty, std::span<const std::uint8_t> error_mask) {
  if (uncertainty.size() != error_mask.size()) throw ShapeError("uncertainty/error size mismatch");
  if (uncertainty.empty()) throw EmptyInput("empty uncertainty map");
  const auto [lo_it, hi_it] = std::minmax_element(uncertainty.begin(), uncertainty.end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  std::vector<double> norm(uncertainty.size(), 0.0);
  if (range > 0.0)
    for (std::size_t i = 0; i < norm.size(); ++i) norm[i] = (uncertainty[i] - lo) / range;

  std::vector<std::uint8_t> above(norm.size());
  double best = 0.0;
  for (int k = 1; k <= 99; ++k) {
    const double tau = static_cast<double>(k) / 100.0;
    for (std::size_t i = 0; i < norm.size(); ++i) above[i] = norm[i] > tau ? 1 : 0;
    best = std::max(best, dice_score(above, error_mask));
  }
  return best;
}

double mean_ueo(std::span<const EvalRecord> records) {
  if (records.empty()) throw EmptyInput("no slices to score");
  double total = 0.0;
  std::vector<std::uint8_t> errors;
  for (const auto& r : records) {
    if (r.prediction.size() != r.truth.size()) throw ShapeError("evaluation record grids differ");
    errors.resize(r.truth.size());
    for (std::size_t i = 0; i < r.truth.size(); ++i) errors[i] = r.prediction[i] != r.truth[i];
    total += ueo(r.uncertainty, errors);
  }
  return total / static_cast<double>(records.size());
}

double volume_correlation(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("volume vectors differ in length");
  if (predicted.size() < 2) throw DegenerateCorrelation("need at least two cases");
  const double n = static_cast<double>(predicted.size());
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    mp += predicted[i];
    mt += truth[i];
  }
  mp /= n;
  mt /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double dx = predicted[i] - mp, dy = truth[i] - mt;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateCorrelation("constant volume vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

nlohmann::ordered_json num(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

}  // namespace

std::string MetricsReport::csv_header() {
  return "run_id,fusion,perturb_kind,perturb_param,dgs,dcs,ece,neg_log_ece,ueo,mean_u_fused,"
         "mean_u_nc,mean_u_art,mean_u_pv,mean_u_de";
}

std::string MetricsReport::csv_row() const {
  std::ostringstream os;
  os << run_id << ',' << fusion << ',' << perturb_kind << ',' << perturb_param << ',' << fmt(dgs)
     << ',' << fmt(dcs) << ',' << fmt(ece) << ',' << fmt(neg_log_ece) << ',' << fmt(ueo) << ','
     << fmt(mean_u_fused);
  for (double u : mean_u_phase) os << ',' << fmt(u);
  return os.str();
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["run_id"] = run_id;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["fusion"] = fusion;
  j["perturbation"] = {{"kind", perturb_kind}, {"param", perturb_param}};
  j["dgs"] = num(dgs);
  j["dcs"] = num(dcs);
  j["ece"] = num(ece);
  j["neg_log_ece"] = num(neg_log_ece);
  j["ueo"] = num(ueo);
  j["pearson_r"] = num(pearson_r);
  j["mean_u_fused"] = num(mean_u_fused);
  j["mean_u_phase"] = {{"NC", num(mean_u_phase[0])},
                       {"ART", num(mean_u_phase[1])},
                       {"PV", num(mean_u_phase[2])},
                       {"DE", num(mean_u_phase[3])}};
  j["phase_present_count"] = {{"NC", phase_present_count[0]},
                              {"ART", phase_present_count[1]},
                              {"PV", phase_present_count[2]},
                              {"DE", phase_present_count[3]}};
  j["mean_present_phases"] = num(mean_present_phases);
  j["n_samples"] = n_samples;
  j["n_cases"] = n_cases;
  return j;
}

}  // namespace evfuse
