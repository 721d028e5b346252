#include "evfuse/phantom.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "evfuse/binary_io.hpp"
#include "evfuse/errors.hpp"
#include "json.hpp"

namespace evfuse {

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::NC: return "NC";
    case Phase::ART: return "ART";
    case Phase::PV: return "PV";
    case Phase::DE: return "DE";
  }
  return "?";
}

Phase parse_phase(std::string_view name) {
  for (Phase p : kAllPhases)
    if (phase_name(p) == name) return p;
  throw ParseError("unknown phase '" + std::string(name) + "'");
}

PhaseStack::PhaseStack(std::size_t height, std::size_t width)
    : height_(height), width_(width), mask_(height * width, 0) {}

const Tensor& PhaseStack::image(Phase p) const {
  const auto& img = images_[static_cast<std::size_t>(p)];
  if (!img) throw EmptyFusion(std::string("phase ") + std::string(phase_name(p)) + " is absent");
  return *img;
}

void PhaseStack::set_image(Phase p, Tensor image) {
  if (image.rank() != 2 || image.dim(0) != height_ || image.dim(1) != width_)
    throw ShapeError("phase image must be H x W");
  images_[static_cast<std::size_t>(p)] = std::move(image);
}

void PhaseStack::remove(Phase p) { images_[static_cast<std::size_t>(p)].reset(); }

std::vector<Phase> PhaseStack::present() const {
  std::vector<Phase> out;
  for (Phase p : kAllPhases)
    if (has(p)) out.push_back(p);
  return out;
}

void PhaseStack::set_mask(std::vector<std::uint8_t> mask) {
  if (mask.size() != height_ * width_) throw ShapeError("mask must be H x W");
  mask_ = std::move(mask);
}

void PhaseStack::validate() const {
  if (present().empty()) throw EmptyFusion("sample has no phases");
  for (Phase p : present()) {
    const auto& img = image(p);
    if (img.rank() != 2 || img.dim(0) != height_ || img.dim(1) != width_)
      throw ShapeError("phase image shape differs from mask");
    for (double v : img.values())
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError("intensity outside [0,1]");
  }
  if (mask_.size() != height_ * width_) throw ShapeError("mask must be H x W");
}

std::uint64_t mix_seed(std::uint64_t run_seed, std::uint64_t index) {
  auto splitmix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return splitmix(run_seed ^ splitmix(index));
}

namespace {

struct Ellipse {
  double cy, cx, ry, rx, angle;

  // Normalized radius: <= 1 inside.
  double rho(double y, double x) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dy = y - cy, dx = x - cx;
    const double u = (c * dx + s * dy) / rx;
    const double v = (-s * dx + c * dy) / ry;
    return std::sqrt(u * u + v * v);
  }
};

// Organ and tumor intensities per phase. Tumor values are offsets from the
// organ: NC nearly iso, ART hyper, PV hypo, DE iso core with a bright rim.
constexpr std::array<double, kPhaseCount> kOrganLevel = {0.45, 0.55, 0.58, 0.52};
constexpr std::array<double, kPhaseCount> kTumorOffset = {-0.05, 0.28, -0.25, 0.0};
constexpr double kCapsuleOffset = 0.22;
constexpr double kCapsuleInner = 0.65;
constexpr double kBackgroundLevel = 0.08;
constexpr double kTextureSigma = 0.02;
constexpr double kJitter = 0.10;

}  // namespace

PhaseStack generate_sample(std::size_t size, std::uint64_t sample_seed, std::size_t index) {
  if (size < kMinPhantomSize)
    throw ConfigError("phantom size must be >= " + std::to_string(kMinPhantomSize));
  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double n = static_cast<double>(size);

  const Ellipse organ{n / 2.0 + uniform(-0.08, 0.08) * n, n / 2.0 + uniform(-0.08, 0.08) * n,
                      uniform(0.28, 0.40) * n, uniform(0.32, 0.44) * n,
                      uniform(0.0, std::numbers::pi)};

  std::uniform_int_distribution<int> tumor_count(0, 3);
  const int n_tumors = tumor_count(rng);
  std::vector<Ellipse> tumors;
  for (int t = 0; t < n_tumors; ++t) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      Ellipse e{uniform(0.0, n), uniform(0.0, n), uniform(0.09, 0.17) * n,
                uniform(0.09, 0.17) * n, uniform(0.0, std::numbers::pi)};
      // Keep the lesion well inside the organ.
      const double reach = std::max(e.ry, e.rx);
      const double margin = reach / std::min(organ.ry, organ.rx);
      if (organ.rho(e.cy, e.cx) + margin <= 0.95) {
        tumors.push_back(e);
        break;
      }
    }
  }

  std::array<double, kPhaseCount> tumor_offset{}, organ_level{};
  for (std::size_t s = 0; s < kPhaseCount; ++s) {
    organ_level[s] = kOrganLevel[s];
    tumor_offset[s] = kTumorOffset[s] * (1.0 + uniform(-kJitter, kJitter));
  }
  const double capsule = kCapsuleOffset * (1.0 + uniform(-kJitter, kJitter));
  const double gradient_dir = uniform(0.0, 2.0 * std::numbers::pi);

  PhaseStack sample(size, size);
  sample.seed = sample_seed;
  std::ostringstream case_name;
  case_name << "case" << index / kSlicesPerCase;
  sample.case_id = case_name.str();

  std::vector<std::uint8_t> mask(size * size, 0);
  std::vector<double> base(size * size), rim(size * size, 0.0), region(size * size, 0.0);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t px = y * size + x;
      const double fy = static_cast<double>(y) + 0.5, fx = static_cast<double>(x) + 0.5;
      base[px] = kBackgroundLevel +
                 0.04 * (std::cos(gradient_dir) * fx + std::sin(gradient_dir) * fy) / n;
      if (organ.rho(fy, fx) <= 1.0) region[px] = 1.0;
      double best = 2.0;
      for (const auto& t : tumors) best = std::min(best, t.rho(fy, fx));
      if (region[px] > 0.0 && best <= 1.0) {
        region[px] = 2.0;
        mask[px] = 1;
        if (best > kCapsuleInner) rim[px] = 1.0;
      }
    }
  sample.set_mask(std::move(mask));

  std::normal_distribution<double> texture(0.0, kTextureSigma);
  for (std::size_t s = 0; s < kPhaseCount; ++s) {
    Tensor img({size, size});
    for (std::size_t px = 0; px < size * size; ++px) {
      double v = base[px];
      if (region[px] >= 1.0) v = organ_level[s];
      if (region[px] >= 2.0) {
        v += tumor_offset[s];
        if (kAllPhases[s] == Phase::DE && rim[px] > 0.0) v += capsule;
      }
      img[px] = std::clamp(v + texture(rng), 0.0, 1.0);
    }
    sample.set_image(kAllPhases[s], std::move(img));
  }
  return sample;
}

std::vector<PhaseStack> generate_phantom(std::size_t count, std::size_t size, std::uint64_t seed) {
  if (count < 1) throw ConfigError("phantom count must be >= 1");
  if (size < kMinPhantomSize)
    throw ConfigError("phantom size must be >= " + std::to_string(kMinPhantomSize));
  std::vector<PhaseStack> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_sample(size, mix_seed(seed, i), i));
  return out;
}

// ---------------------------------------------------------------------------
// Perturbations

void PerturbSpec::validate() const {
  switch (kind) {
    case Kind::None: break;
    case Kind::Noise:
      if (!(noise_variance >= 0.0) || !std::isfinite(noise_variance))
        throw ConfigError("noise variance must be >= 0");
      break;
    case Kind::Blur:
      if (!(blur_variance > 0.0) || !std::isfinite(blur_variance))
        throw ConfigError("blur variance must be > 0");
      if (blur_kernel < 1 || blur_kernel % 2 == 0) throw ConfigError("blur kernel must be odd and >= 1");
      break;
    case Kind::Missing: break;
  }
}

namespace {

double parse_number(std::string_view text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("bad number '" + std::string(text) + "' in perturbation spec");
  return v;
}

std::size_t parse_count(std::string_view text) {
  std::size_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("bad integer '" + std::string(text) + "' in perturbation spec");
  return v;
}

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

PerturbSpec PerturbSpec::parse(std::string_view text) {
  PerturbSpec spec;
  if (text.empty() || text == "none") return spec;
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw ConfigError("perturbation must look like kind:params");
  const auto kind = text.substr(0, colon);
  const auto args = text.substr(colon + 1);
  if (kind == "noise") {
    spec.kind = Kind::Noise;
    spec.noise_variance = parse_number(args);
  } else if (kind == "blur") {
    const auto comma = args.find(',');
    if (comma == std::string_view::npos) throw ConfigError("blur needs <variance>,<kernel>");
    spec.kind = Kind::Blur;
    spec.blur_variance = parse_number(args.substr(0, comma));
    spec.blur_kernel = parse_count(args.substr(comma + 1));
  } else if (kind == "missing") {
    spec.kind = Kind::Missing;
    spec.missing = parse_count(args);
  } else {
    throw ConfigError("unknown perturbation kind '" + std::string(kind) + "'");
  }
  spec.validate();
  return spec;
}

std::string PerturbSpec::kind_name() const {
  switch (kind) {
    case Kind::None: return "none";
    case Kind::Noise: return "noise";
    case Kind::Blur: return "blur";
    case Kind::Missing: return "missing";
  }
  return "none";
}

double PerturbSpec::magnitude() const {
  switch (kind) {
    case Kind::None: return 0.0;
    case Kind::Noise: return noise_variance;
    case Kind::Blur: return blur_variance;
    case Kind::Missing: return static_cast<double>(missing);
  }
  return 0.0;
}

std::string PerturbSpec::param_text() const {
  switch (kind) {
    case Kind::None: return "0";
    case Kind::Noise: return format_number(noise_variance);
    // CSV-safe: variance and kernel joined by '/'
    case Kind::Blur: return format_number(blur_variance) + "/" + std::to_string(blur_kernel);
    case Kind::Missing: return std::to_string(missing);
  }
  return "0";
}

std::vector<double> gaussian_kernel(std::size_t k, double variance) {
  if (k < 1 || k % 2 == 0) throw ConfigError("kernel size must be odd and >= 1");
  if (!(variance > 0.0)) throw ConfigError("kernel variance must be > 0");
  std::vector<double> w(k);
  const long half = static_cast<long>(k / 2);
  double total = 0.0;
  for (long i = -half; i <= half; ++i) {
    const double v = std::exp(-static_cast<double>(i * i) / (2.0 * variance));
    w[static_cast<std::size_t>(i + half)] = v;
    total += v;
  }
  for (auto& v : w) v /= total;
  return w;
}

namespace {

// Mirror about the edge pixel without repeating it: (c b | a b c d | c b).
std::size_t reflect_index(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return static_cast<std::size_t>(i);
}

}  // namespace

Tensor gaussian_blur(const Tensor& image, double variance, std::size_t k) {
  if (image.rank() != 2) throw ShapeError("blur expects an H x W image");
  const auto w = gaussian_kernel(k, variance);
  const long h = static_cast<long>(image.dim(0)), wd = static_cast<long>(image.dim(1));
  const long half = static_cast<long>(k / 2);
  Tensor rows(image.shape()), out(image.shape());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < wd; ++x) {
      double acc = 0.0;
      for (long t = -half; t <= half; ++t)
        acc += w[static_cast<std::size_t>(t + half)] * image[y * wd + reflect_index(x + t, wd)];
      rows[y * wd + x] = acc;
    }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < wd; ++x) {
      double acc = 0.0;
      for (long t = -half; t <= half; ++t)
        acc += w[static_cast<std::size_t>(t + half)] * rows[reflect_index(y + t, h) * wd + x];
      out[y * wd + x] = std::clamp(acc, 0.0, 1.0);
    }
  return out;
}

PhaseStack perturb(const PhaseStack& sample, const PerturbSpec& spec) {
  spec.validate();
  PhaseStack out = sample;
  std::mt19937_64 rng(spec.seed);
  switch (spec.kind) {
    case PerturbSpec::Kind::None: break;
    case PerturbSpec::Kind::Noise: {
      if (spec.noise_variance == 0.0) break;
      std::normal_distribution<double> noise(0.0, std::sqrt(spec.noise_variance));
      for (Phase p : sample.present()) {
        Tensor img = sample.image(p);
        for (auto& v : img.values()) v = std::clamp(v + noise(rng), 0.0, 1.0);
        out.set_image(p, std::move(img));
      }
      break;
    }
    case PerturbSpec::Kind::Blur:
      for (Phase p : sample.present())
        out.set_image(p, gaussian_blur(sample.image(p), spec.blur_variance, spec.blur_kernel));
      break;
    case PerturbSpec::Kind::Missing: {
      auto present = sample.present();
      if (spec.missing >= present.size())
        throw ConfigError("cannot drop " + std::to_string(spec.missing) + " of " +
                          std::to_string(present.size()) + " present phases");
      std::shuffle(present.begin(), present.end(), rng);
      for (std::size_t i = 0; i < spec.missing; ++i) out.remove(present[i]);
      break;
    }
  }
  return out;
}

std::vector<double> hu_window(std::span<const double> raw, double level, double width) {
  if (!(width > 0.0)) throw ConfigError("window width must be > 0");
  const double lo = level - width / 2.0;
  std::vector<double> out;
  out.reserve(raw.size());
  for (double x : raw) out.push_back(std::clamp((x - lo) / width, 0.0, 1.0));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset layout

namespace {

std::string sample_dir_name(std::size_t i) {
  std::ostringstream os;
  os << "sample_" << std::setw(4) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, std::span<const PhaseStack> samples,
                   const DatasetMeta& meta) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IOError("cannot create directory " + dir.string());

  nlohmann::ordered_json manifest;
  manifest["generator_version"] = kGeneratorVersion;
  manifest["seed"] = meta.seed;
  manifest["size"] = meta.size;
  if (!meta.config_hash.empty()) manifest["config_hash"] = meta.config_hash;
  manifest["count"] = samples.size();
  auto& entries = manifest["samples"] = nlohmann::ordered_json::array();

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    s.validate();
    const auto name = sample_dir_name(i);
    const auto sdir = dir / name;
    fs::create_directories(sdir, ec);
    if (ec) throw IOError("cannot create directory " + sdir.string());

    Tensor mask({s.height(), s.width()});
    for (std::size_t px = 0; px < s.mask().size(); ++px) mask[px] = s.mask()[px];
    io::write_tensor_file(sdir / "mask.tns", mask);

    nlohmann::ordered_json sm;
    sm["index"] = i;
    sm["case_id"] = s.case_id;
    sm["seed"] = s.seed;
    sm["run_seed"] = meta.seed;
    sm["generator_version"] = kGeneratorVersion;
    sm["height"] = s.height();
    sm["width"] = s.width();
    auto& phases = sm["phases"] = nlohmann::ordered_json::array();
    for (Phase p : s.present()) {
      phases.push_back(std::string(phase_name(p)));
      io::write_tensor_file(sdir / (std::string(phase_name(p)) + ".tns"), s.image(p));
    }
    io::write_text_file(sdir / "meta.json", sm.dump(2) + "\n");
    entries.push_back(name);
  }
  io::write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<PhaseStack> read_dataset(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest.json: ") + e.what());
  }
  std::vector<PhaseStack> out;
  try {
    for (const auto& entry : manifest.at("samples")) {
      const auto sdir = dir / entry.get<std::string>();
      const auto meta = nlohmann::json::parse(io::read_text_file(sdir / "meta.json"));
      const auto h = meta.at("height").get<std::size_t>();
      const auto w = meta.at("width").get<std::size_t>();
      PhaseStack s(h, w);
      s.case_id = meta.at("case_id").get<std::string>();
      s.seed = meta.at("seed").get<std::uint64_t>();
      const Tensor mask = io::read_tensor_file(sdir / "mask.tns");
      if (mask.rank() != 2 || mask.dim(0) != h || mask.dim(1) != w)
        throw ShapeError(sdir.string() + ": mask shape does not match meta.json");
      std::vector<std::uint8_t> labels(mask.size());
      for (std::size_t px = 0; px < mask.size(); ++px) labels[px] = mask[px] > 0.5 ? 1 : 0;
      s.set_mask(std::move(labels));
      for (const auto& name : meta.at("phases")) {
        const Phase p = parse_phase(name.get<std::string>());
        s.set_image(p, io::read_tensor_file(sdir / (name.get<std::string>() + ".tns")));
      }
      s.validate();
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset metadata: ") + e.what());
  }
  if (out.empty()) throw EmptyInput("dataset " + dir.string() + " has no samples");
  return out;
}

}  // namespace evfuse
