#pragma once

// Segmentation validity (Dice family) and reliability (ECE, UEO) metrics.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace evfuse {

/// One evaluated slice.
struct EvalRecord {
  std::string case_id;
  std::vector<std::uint8_t> prediction;  // hard labels
  std::vector<std::uint8_t> truth;
  std::vector<double> uncertainty;       // fused u per pixel, in (0,1]
  std::vector<double> confidence;        // probability of the predicted class

  void validate() const;
};

/// 2|P and T| / (|P| + |T|) over the foreground label (nonzero); 1 when both empty.
double dice_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

/// Mean of per-slice dice.
double dgs(std::span<const EvalRecord> records);
/// Mean over cases of the dice computed on each case's pooled pixels.
double dcs(std::span<const EvalRecord> records);

inline constexpr std::size_t kDefaultEceBins = 10;
inline constexpr double kEceFloor = 1e-12;

/// Equal-width confidence bins; sum_b |b|/M |acc(b) - conf(b)|.
double ece(std::span<const double> confidence, std::span<const std::uint8_t> correct,
           std::size_t n_bins = kDefaultEceBins);
double ece(std::span<const EvalRecord> records, std::size_t n_bins = kDefaultEceBins);
double neg_log_ece(double ece_value);

/// Best-threshold dice between min-max normalized uncertainty (> tau,
/// tau = 0.01 .. 0.99) and the error mask.
double ueo(std::span<const double> uncertainty, std::span<const std::uint8_t> error_mask);
/// Mean of per-slice UEO against each slice's prediction-error map.
double mean_ueo(std::span<const EvalRecord> records);

/// Pearson correlation coefficient.
double volume_correlation(std::span<const double> predicted, std::span<const double> truth);

struct MetricsReport {
  std::string run_id;
  std::string fusion;
  std::string perturb_kind = "none";
  std::string perturb_param = "0";
  double dgs = 0.0, dcs = 0.0, ece = 0.0, neg_log_ece = 0.0, ueo = 0.0;
  double mean_u_fused = 0.0;
  std::array<double, 4> mean_u_phase{};  // NC, ART, PV, DE; NaN when never present
  double pearson_r = 0.0;                // NaN when degenerate
  std::size_t n_samples = 0, n_cases = 0;
  std::array<std::size_t, 4> phase_present_count{};
  double mean_present_phases = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;

  static std::string csv_header();
  std::string csv_row() const;
  nlohmann::ordered_json to_json() const;
};

}  // namespace evfuse
