#pragma once

// Subcommand implementations behind the `evfuse` executable.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "evfuse/losses.hpp"
#include "evfuse/metrics.hpp"
#include "evfuse/network.hpp"
#include "evfuse/phantom.hpp"
#include "json.hpp"

namespace evfuse::cli {

/// Everything a run depends on. Serialized to JSON; the FNV-1a hash of that
/// JSON is the config hash embedded in every output.
struct RunConfig {
  std::uint64_t seed = 42;
  std::size_t count = 200;
  std::size_t size = 32;
  double train_fraction = 0.8;
  NetworkConfig network;
  TrainConfig train;
  LossWeights loss;
  PerturbSpec perturb;
  Fusion fusion = Fusion::Mems;
  std::string split = "test";  // train | test | all
  std::size_t ece_bins = kDefaultEceBins;

  /// Network/train/perturbation seeds derived from the run seed.
  void derive_seeds();
  void validate() const;
  nlohmann::ordered_json to_json() const;
  std::string hash() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Train/test partition: the first floor(train_fraction * n) samples train.
std::vector<PhaseStack> select_split(std::vector<PhaseStack> samples, const RunConfig& config);

void cmd_phantom(const RunConfig& config, const std::filesystem::path& out_dir);

struct TrainOutcome {
  TrainResult result;
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;
};
TrainOutcome cmd_train(const RunConfig& config, const std::filesystem::path& dataset,
                       const std::filesystem::path& out_dir, bool verbose = false);

/// Evaluation of an in-memory model; used by cmd_eval and by tests.
MetricsReport evaluate(Network& net, std::span<const PhaseStack> samples, const RunConfig& config);

MetricsReport cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint,
                       const std::filesystem::path& dataset, const std::filesystem::path& out_dir);

struct ReportOutcome {
  std::vector<std::filesystem::path> svgs;
  std::string summary;
};
inline const std::vector<std::string> kDefaultReportMetrics = {"dgs", "dcs", "ece",
                                                               "neg_log_ece", "ueo", "mean_u_fused"};
ReportOutcome cmd_report(std::span<const std::filesystem::path> csvs,
                         const std::filesystem::path& out_dir,
                         const std::vector<std::string>& metrics = kDefaultReportMetrics);

/// Entry point used by the executable; returns the process exit code.
int run(int argc, char** argv);

}  // namespace evfuse::cli
