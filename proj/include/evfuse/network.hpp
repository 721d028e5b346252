#pragma once

// Toy evidential segmentation network: a small convolutional feature
// extractor (shared across phases or one per phase), per-phase expert heads
// with the exp(tanh(.)) evidence activation, fusion, training and checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "evfuse/autodiff.hpp"
#include "evfuse/losses.hpp"
#include "evfuse/opinion.hpp"
#include "evfuse/phantom.hpp"
#include "json.hpp"

namespace evfuse {

struct NetworkConfig {
  std::size_t n_phases = kPhaseCount;
  std::size_t n_categories = 2;
  std::size_t channels = 8;
  bool shared_extractor = true;
  bool shared_experts = false;
  std::vector<std::size_t> dilations{1, 2, 4};  // one 3x3 conv level per entry
  std::size_t expert_kernel = 3;
  std::uint64_t seed = 42;
  // Images are fed as (x - input_shift) / input_scale.
  double input_shift = 0.3;
  double input_scale = 0.2;
  // Initial expert output bias: +prior_bias on background, -prior_bias elsewhere.
  double prior_bias = 1.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

class Network {
 public:
  explicit Network(NetworkConfig config);

  const NetworkConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);

  /// C x H x W features from a 1 x H x W phase image.
  Var extract_features(Graph& g, Var image, std::size_t phase);
  /// H x W image -> normalized 1 x H x W network input.
  Tensor input_tensor(const Tensor& image) const;
  /// N x H x W evidence, every value in (1/e, e).
  Var expert_forward(Graph& g, Var features, std::size_t phase);

  /// Parameter names used by phase `phase`'s extractor (for weight-tying checks).
  std::string extractor_prefix(std::size_t phase) const;
  std::string expert_prefix(std::size_t phase) const;

  void zero_grad();

 private:
  Parameter& add(const std::string& name, Tensor value);
  Var conv(Graph& g, const std::string& prefix, Var x, std::size_t dilation);

  NetworkConfig config_;
  std::vector<Parameter> params_;
};

/// Convenience no-grad evaluation of extract_features on an H x W image.
Tensor extract_features(Network& net, const Tensor& image, std::size_t phase);

enum class Fusion { Mems, Average };
Fusion parse_fusion(std::string_view name);
std::string_view fusion_name(Fusion f);

struct PipelineResult {
  std::vector<Phase> phases;                // present phases, fold order
  std::vector<CategoryField> evidence;      // per present phase, pixel-major
  std::vector<CategoryField> phase_alphas;
  std::vector<OpinionGrid> phase_opinions;
  OpinionGrid fused;
  CategoryField fused_alphas;
  CategoryField fused_probabilities;
};

PipelineResult forward_pipeline(Network& net, const PhaseStack& sample, Fusion fusion = Fusion::Mems);

/// N x H x W tensor <-> pixel-major field.
CategoryField to_field(const Tensor& chw);
Tensor to_tensor(const CategoryField& field);

struct TrainConfig {
  std::size_t epochs = 60;
  double learning_rate = 5e-4;
  double min_learning_rate = 0.0;
  double weight_decay = 1e-5;
  std::size_t batch_size = 4;
  std::size_t cosine_period = 20;
  std::uint64_t seed = 42;
  bool augment_rotation = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// eta_t = eta_min + (eta_0 - eta_min)(1 + cos(pi (t mod T) / T)) / 2
double cosine_learning_rate(std::size_t epoch, const TrainConfig& config);

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Applies one update from accumulated gradients (scaled by grad_scale) and
  /// zeroes them. Throws GraphError when no backward pass populated gradients.
  void step(std::vector<Parameter>& params, double lr, double weight_decay, double grad_scale = 1.0);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Records one sample's forward pass and loss, backpropagates into the
/// network's parameter gradients, and returns the loss.
LossBreakdown accumulate_sample_gradients(Network& net, const PhaseStack& sample,
                                          const LossWeights& weights);

LossBreakdown evaluate_loss(Network& net, const PhaseStack& sample, const LossWeights& weights);

struct EpochRecord {
  std::size_t epoch = 0;
  double total = 0.0, phase_term = 0.0, mixture_term = 0.0, learning_rate = 0.0;
};

struct TrainResult {
  double initial_loss = 0.0;
  std::vector<EpochRecord> curve;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(Network& net, std::span<const PhaseStack> dataset, const TrainConfig& config,
                  const LossWeights& weights, const EpochCallback& on_epoch = {});

/// Nearest-neighbour rotation about the image centre (augmentation).
PhaseStack rotate_sample(const PhaseStack& sample, double degrees);

// Checkpoint: "EVDF" | u32 version | u32 config length | config JSON |
// u32 tensor count | per tensor: u32 name length, name, u32 ndim, u64 dims,
// f64 values (little-endian).
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Network& net,
                     const nlohmann::json& extra = nlohmann::json::object());
struct LoadedCheckpoint {
  std::unique_ptr<Network> network;
  nlohmann::json config;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace evfuse
