#pragma once

// Synthetic multi-phase contrast-enhanced "CT-like" slices, the perturbation
// families used for robustness evaluation, and the on-disk dataset layout.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evfuse/tensor.hpp"

namespace evfuse {

enum class Phase : std::uint8_t { NC = 0, ART = 1, PV = 2, DE = 3 };

inline constexpr std::size_t kPhaseCount = 4;
inline constexpr std::array<Phase, kPhaseCount> kAllPhases = {Phase::NC, Phase::ART, Phase::PV,
                                                              Phase::DE};

std::string_view phase_name(Phase p);
Phase parse_phase(std::string_view name);

/// One slice: up to four co-registered phase images in [0,1] plus labels.
class PhaseStack {
 public:
  PhaseStack(std::size_t height, std::size_t width);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

  bool has(Phase p) const { return images_[static_cast<std::size_t>(p)].has_value(); }
  const Tensor& image(Phase p) const;
  void set_image(Phase p, Tensor image);
  void remove(Phase p);
  std::vector<Phase> present() const;

  const std::vector<std::uint8_t>& mask() const { return mask_; }
  void set_mask(std::vector<std::uint8_t> mask);

  std::string case_id;
  std::uint64_t seed = 0;

  /// Throws ShapeError / DomainError / EmptyFusion on invariant violations.
  void validate() const;

 private:
  std::size_t height_, width_;
  std::array<std::optional<Tensor>, kPhaseCount> images_;
  std::vector<std::uint8_t> mask_;
};

inline constexpr std::size_t kMinPhantomSize = 16;
inline constexpr std::size_t kSlicesPerCase = 4;
inline constexpr int kGeneratorVersion = 1;

/// Per-sample seed derived from the run seed (splitmix64 mixing).
std::uint64_t mix_seed(std::uint64_t run_seed, std::uint64_t index);

PhaseStack generate_sample(std::size_t size, std::uint64_t sample_seed, std::size_t index);
std::vector<PhaseStack> generate_phantom(std::size_t count, std::size_t size, std::uint64_t seed);

struct PerturbSpec {
  enum class Kind { None, Noise, Blur, Missing };
  Kind kind = Kind::None;
  double noise_variance = 0.0;
  double blur_variance = 0.0;
  std::size_t blur_kernel = 1;
  std::size_t missing = 0;
  std::uint64_t seed = 0;

  void validate() const;
  /// "none", "noise:<var>", "blur:<var>,<k>", "missing:<count>"
  static PerturbSpec parse(std::string_view text);
  std::string kind_name() const;
  /// Magnitude for plotting and CSV: variance for noise/blur, count for missing.
  double magnitude() const;
  std::string param_text() const;
};

/// Normalized 1-D Gaussian weights of odd length k and variance sigma2.
std::vector<double> gaussian_kernel(std::size_t k, double variance);

Tensor gaussian_blur(const Tensor& image, double variance, std::size_t k);

PhaseStack perturb(const PhaseStack& sample, const PerturbSpec& spec);

/// Window/level mapping from Hounsfield units into [0,1].
std::vector<double> hu_window(std::span<const double> raw, double level, double width);

struct DatasetMeta {
  std::size_t size = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// One directory per sample: mask.tns, <PHASE>.tns, meta.json; plus a
/// top-level manifest.json.
void write_dataset(const std::filesystem::path& dir, std::span<const PhaseStack> samples,
                   const DatasetMeta& meta);
std::vector<PhaseStack> read_dataset(const std::filesystem::path& dir);

}  // namespace evfuse
