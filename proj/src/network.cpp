#include "evfuse/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "evfuse/binary_io.hpp"
#include "evfuse/errors.hpp"

namespace evfuse {

void NetworkConfig::validate() const {
  if (n_phases < 1 || n_phases > kPhaseCount) throw ConfigError("n_phases must be in 1..4");
  if (n_categories < 2) throw ConfigError("n_categories must be >= 2");
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (dilations.empty()) throw ConfigError("extractor needs at least one conv level");
  for (auto d : dilations)
    if (d < 1) throw ConfigError("dilation must be >= 1");
  if (expert_kernel < 1 || expert_kernel % 2 == 0) throw ConfigError("expert kernel must be odd");
  if (!(input_scale > 0.0)) throw ConfigError("input_scale must be > 0");
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"n_phases", c.n_phases},
                     {"n_categories", c.n_categories},
                     {"channels", c.channels},
                     {"shared_extractor", c.shared_extractor},
                     {"shared_experts", c.shared_experts},
                     {"dilations", c.dilations},
                     {"expert_kernel", c.expert_kernel},
                     {"seed", c.seed},
                     {"input_shift", c.input_shift},
                     {"input_scale", c.input_scale},
                     {"prior_bias", c.prior_bias}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.n_phases = j.value("n_phases", d.n_phases);
  c.n_categories = j.value("n_categories", d.n_categories);
  c.channels = j.value("channels", d.channels);
  c.shared_extractor = j.value("shared_extractor", d.shared_extractor);
  c.shared_experts = j.value("shared_experts", d.shared_experts);
  c.dilations = j.value("dilations", d.dilations);
  c.expert_kernel = j.value("expert_kernel", d.expert_kernel);
  c.seed = j.value("seed", d.seed);
  c.input_shift = j.value("input_shift", d.input_shift);
  c.input_scale = j.value("input_scale", d.input_scale);
  c.prior_bias = j.value("prior_bias", d.prior_bias);
}

namespace {
// Small positive bias keeps ReLU units alive through the early phase where
// every output's evidence is being pushed down at once.
constexpr double kReluBiasInit = 0.1;
}  // namespace

Network::Network(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const std::size_t c = config_.channels;
  const std::size_t n_extractors = config_.shared_extractor ? 1 : config_.n_phases;
  const std::size_t n_experts = config_.shared_experts ? 1 : config_.n_phases;
  const std::size_t k = config_.expert_kernel;
  params_.reserve(2 * (n_extractors * config_.dilations.size() + 2 * n_experts));

  auto conv_param = [&](const std::string& prefix, std::size_t cout, std::size_t cin,
                        std::size_t kernel, double gain, double bias) {
    const double stddev = gain * std::sqrt(2.0 / static_cast<double>(cin * kernel * kernel));
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor w({cout, cin, kernel, kernel});
    for (auto& v : w.values()) v = dist(rng);
    add(prefix + ".weight", std::move(w));
    add(prefix + ".bias", Tensor({cout}, bias));
  };

  for (std::size_t e = 0; e < n_extractors; ++e)
    for (std::size_t l = 0; l < config_.dilations.size(); ++l)
      conv_param("F" + std::to_string(e) + ".conv" + std::to_string(l), c, l == 0 ? 1 : c, 3, 1.0,
                 kReluBiasInit);
  for (std::size_t e = 0; e < n_experts; ++e) {
    conv_param("E" + std::to_string(e) + ".conv0", c, c, k, 1.0, kReluBiasInit);
    conv_param("E" + std::to_string(e) + ".conv1", config_.n_categories, c, 1, 0.5,
               -config_.prior_bias);
    params_.back().value[0] = config_.prior_bias;
  }
}

Parameter& Network::add(const std::string& name, Tensor value) {
  if (params_.size() == params_.capacity()) throw GraphError("parameter storage must not reallocate");
  params_.emplace_back(name, std::move(value));
  return params_.back();
}

Parameter& Network::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ConfigError("no parameter named " + name);
}

std::string Network::extractor_prefix(std::size_t phase) const {
  return "F" + std::to_string(config_.shared_extractor ? 0 : phase);
}

std::string Network::expert_prefix(std::size_t phase) const {
  return "E" + std::to_string(config_.shared_experts ? 0 : phase);
}

Var Network::conv(Graph& g, const std::string& prefix, Var x, std::size_t dilation) {
  Var w = g.param(parameter(prefix + ".weight"));
  Var b = g.param(parameter(prefix + ".bias"));
  return g.conv2d(x, w, b, dilation);
}

Var Network::extract_features(Graph& g, Var image, std::size_t phase) {
  if (phase >= config_.n_phases) throw ShapeError("phase index out of range");
  const auto& in = g.value(image);
  if (in.rank() != 3 || in.dim(0) != 1) throw ShapeError("extractor expects a 1 x H x W image");
  const auto prefix = extractor_prefix(phase);
  Var h = image;
  for (std::size_t l = 0; l < config_.dilations.size(); ++l)
    h = g.relu(conv(g, prefix + ".conv" + std::to_string(l), h, config_.dilations[l]));
  return h;
}

Var Network::expert_forward(Graph& g, Var features, std::size_t phase) {
  if (phase >= config_.n_phases) throw ShapeError("phase index out of range");
  const auto& f = g.value(features);
  if (f.rank() != 3 || f.dim(0) != config_.channels)
    throw ShapeError("expert expects C x H x W features");
  const auto prefix = expert_prefix(phase);
  Var h = g.relu(conv(g, prefix + ".conv0", features, 1));
  return g.exp_tanh(conv(g, prefix + ".conv1", h, 1));
}

Tensor Network::input_tensor(const Tensor& image) const {
  if (image.rank() != 2) throw ShapeError("expected an H x W image");
  Tensor x({1, image.dim(0), image.dim(1)});
  for (std::size_t i = 0; i < image.size(); ++i)
    x[i] = (image[i] - config_.input_shift) / config_.input_scale;
  return x;
}

void Network::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Tensor extract_features(Network& net, const Tensor& image, std::size_t phase) {
  if (image.rank() != 2) throw ShapeError("expected an H x W image");
  Graph g;
  Var x = g.input(net.input_tensor(image));
  return g.value(net.extract_features(g, x, phase));
}

Fusion parse_fusion(std::string_view name) {
  if (name == "mems") return Fusion::Mems;
  if (name == "average") return Fusion::Average;
  throw ConfigError("fusion must be 'mems' or 'average', got '" + std::string(name) + "'");
}

std::string_view fusion_name(Fusion f) { return f == Fusion::Mems ? "mems" : "average"; }

CategoryField to_field(const Tensor& chw) {
  if (chw.rank() != 3) throw ShapeError("expected an N x H x W tensor");
  const std::size_t n = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  CategoryField field(h, w, n);
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t px = 0; px < h * w; ++px) field.at(px, c) = chw[c * h * w + px];
  return field;
}

Tensor to_tensor(const CategoryField& field) {
  const std::size_t n = field.categories(), hw = field.pixels();
  Tensor t({n, field.height(), field.width()});
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t px = 0; px < hw; ++px) t[c * hw + px] = field.at(px, c);
  return t;
}

namespace {

struct RecordedForward {
  Graph graph;
  std::vector<Phase> phases;
  std::vector<Var> evidence;
};

void record_forward(Network& net, const PhaseStack& sample, RecordedForward& rec) {
  rec.phases = sample.present();
  if (rec.phases.empty()) throw EmptyFusion("sample has no phases present");
  for (Phase p : rec.phases) {
    const auto s = static_cast<std::size_t>(p);
    Var x = rec.graph.input(net.input_tensor(sample.image(p)));
    Var f = net.extract_features(rec.graph, x, s);
    rec.evidence.push_back(net.expert_forward(rec.graph, f, s));
  }
}

GroundTruthGrid truth_of(const PhaseStack& sample, std::size_t n_categories) {
  return GroundTruthGrid(sample.height(), sample.width(), n_categories, sample.mask());
}

}  // namespace

PipelineResult forward_pipeline(Network& net, const PhaseStack& sample, Fusion fusion) {
  RecordedForward rec;
  record_forward(net, sample, rec);
  const std::size_t n = net.config().n_categories;
  const std::size_t h = sample.height(), w = sample.width();

  PipelineResult out{rec.phases, {}, {}, {}, OpinionGrid(h, w, n), CategoryField(h, w, n),
                     CategoryField(h, w, n)};
  for (Var v : rec.evidence) {
    auto field = to_field(rec.graph.value(v));
    CategoryField alphas(h, w, n);
    OpinionGrid ops(h, w, n);
    for (std::size_t px = 0; px < h * w; ++px) {
      const auto params = evidence_to_alpha(field.pixel(px));
      std::copy(params.alphas().begin(), params.alphas().end(), alphas.pixel(px).begin());
      ops.set(px, alpha_to_opinion(params));
    }
    out.evidence.push_back(std::move(field));
    out.phase_alphas.push_back(std::move(alphas));
    out.phase_opinions.push_back(std::move(ops));
  }

  std::vector<Opinion> pixel_ops;
  for (std::size_t px = 0; px < h * w; ++px) {
    pixel_ops.clear();
    for (const auto& g : out.phase_opinions) pixel_ops.push_back(g.at(px));
    const Opinion fused =
        fusion == Fusion::Mems ? combine_many(pixel_ops) : average_opinions(pixel_ops);
    out.fused.set(px, fused);
    const auto alphas = opinion_to_alpha(fused, n);
    std::copy(alphas.alphas().begin(), alphas.alphas().end(), out.fused_alphas.pixel(px).begin());
    const auto p = fused_prediction(fused, n);
    std::copy(p.begin(), p.end(), out.fused_probabilities.pixel(px).begin());
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(min_learning_rate >= 0.0) || min_learning_rate > learning_rate)
    throw ConfigError("min learning rate must be in [0, learning rate]");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (cosine_period < 1) throw ConfigError("cosine period must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"learning_rate", c.learning_rate},
                     {"min_learning_rate", c.min_learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"batch_size", c.batch_size},
                     {"cosine_period", c.cosine_period},
                     {"seed", c.seed},
                     {"augment_rotation", c.augment_rotation}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.min_learning_rate = j.value("min_learning_rate", d.min_learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.cosine_period = j.value("cosine_period", d.cosine_period);
  c.seed = j.value("seed", d.seed);
  c.augment_rotation = j.value("augment_rotation", d.augment_rotation);
}

double cosine_learning_rate(std::size_t epoch, const TrainConfig& config) {
  const double t = static_cast<double>(epoch % config.cosine_period);
  const double period = static_cast<double>(config.cosine_period);
  return config.min_learning_rate + 0.5 * (config.learning_rate - config.min_learning_rate) *
                                        (1.0 + std::cos(std::numbers::pi * t / period));
}

void AdamW::step(std::vector<Parameter>& params, double lr, double weight_decay,
                 double grad_scale) {
  const bool any = std::any_of(params.begin(), params.end(),
                               [](const Parameter& p) { return p.grad_ready; });
  if (!any) throw GraphError("optimizer step without a recorded backward pass");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw GraphError("optimizer bound to a different parameter set");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j] * grad_scale;
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      p.value[j] -= lr * (update + weight_decay * p.value[j]);
    }
    p.zero_grad();
  }
}

LossBreakdown accumulate_sample_gradients(Network& net, const PhaseStack& sample,
                                          const LossWeights& weights) {
  RecordedForward rec;
  record_forward(net, sample, rec);
  std::vector<CategoryField> fields;
  for (Var v : rec.evidence) fields.push_back(to_field(rec.graph.value(v)));
  const auto y = truth_of(sample, net.config().n_categories);
  auto result = loss_gradients(y, fields, weights);
  std::vector<Tensor> seeds;
  for (const auto& g : result.grad) seeds.push_back(to_tensor(g));
  rec.graph.backward(rec.evidence, seeds);
  return result.loss;
}

LossBreakdown evaluate_loss(Network& net, const PhaseStack& sample, const LossWeights& weights) {
  RecordedForward rec;
  record_forward(net, sample, rec);
  std::vector<CategoryField> fields;
  for (Var v : rec.evidence) fields.push_back(to_field(rec.graph.value(v)));
  const auto y = truth_of(sample, net.config().n_categories);
  const auto fwd = fuse_evidence(fields);
  return total_loss(y, fwd.per_phase, fwd.fused, weights);
}

PhaseStack rotate_sample(const PhaseStack& sample, double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const std::size_t h = sample.height(), w = sample.width();
  const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
  // Inverse map: destination pixel -> nearest source pixel (clamped to edge).
  std::vector<std::size_t> src(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sy = c * dy + s * dx + cy, sx = -s * dy + c * dx + cx;
      const auto iy = static_cast<long>(std::lround(std::clamp(sy, 0.0, static_cast<double>(h - 1))));
      const auto ix = static_cast<long>(std::lround(std::clamp(sx, 0.0, static_cast<double>(w - 1))));
      src[y * w + x] = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
    }
  PhaseStack out = sample;
  for (Phase p : sample.present()) {
    const auto& img = sample.image(p);
    Tensor rot(img.shape());
    for (std::size_t i = 0; i < h * w; ++i) rot[i] = img[src[i]];
    out.set_image(p, std::move(rot));
  }
  std::vector<std::uint8_t> mask(h * w);
  for (std::size_t i = 0; i < h * w; ++i) mask[i] = sample.mask()[src[i]];
  out.set_mask(std::move(mask));
  return out;
}

TrainResult train(Network& net, std::span<const PhaseStack> dataset, const TrainConfig& config,
                  const LossWeights& weights, const EpochCallback& on_epoch) {
  if (dataset.empty()) throw EmptyInput("training set is empty");
  config.validate();
  weights.validate();

  TrainResult result;
  for (const auto& s : dataset) result.initial_loss += evaluate_loss(net, s, weights).total;
  result.initial_loss /= static_cast<double>(dataset.size());

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> angle(-5.0, 5.0);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  AdamW optimizer;
  net.zero_grad();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cosine_learning_rate(epoch, config);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.learning_rate = lr;
    std::size_t in_batch = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const PhaseStack& sample = dataset[order[i]];
      LossBreakdown loss;
      if (config.augment_rotation) {
        loss = accumulate_sample_gradients(net, rotate_sample(sample, angle(rng)), weights);
      } else {
        loss = accumulate_sample_gradients(net, sample, weights);
      }
      rec.total += loss.total;
      rec.phase_term += loss.phase_term;
      rec.mixture_term += loss.mixture_term;
      if (++in_batch == config.batch_size || i + 1 == order.size()) {
        optimizer.step(net.parameters(), lr, config.weight_decay, 1.0 / static_cast<double>(in_batch));
        in_batch = 0;
      }
    }
    const double count = static_cast<double>(dataset.size());
    rec.total /= count;
    rec.phase_term /= count;
    rec.mixture_term /= count;
    result.curve.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net,
                     const nlohmann::json& extra) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IOError("cannot open " + path.string() + " for writing");
  nlohmann::json config = extra;
  config["network"] = net.config();
  const std::string text = config.dump();
  io::write_bytes(os, "EVDF");
  io::write_u32(os, kCheckpointVersion);
  io::write_u32(os, static_cast<std::uint32_t>(text.size()));
  io::write_bytes(os, text);
  io::write_u32(os, static_cast<std::uint32_t>(net.parameters().size()));
  for (const auto& p : net.parameters()) {
    io::write_u32(os, static_cast<std::uint32_t>(p.name.size()));
    io::write_bytes(os, p.name);
    io::write_tensor_block(os, p.value);
  }
  if (!os) throw IOError("write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOError("cannot open " + path.string());
  if (io::read_bytes(is, 4) != "EVDF") throw ParseError(path.string() + ": not an EVDF checkpoint");
  if (io::read_u32(is) != kCheckpointVersion)
    throw ParseError(path.string() + ": unsupported checkpoint version");
  LoadedCheckpoint out;
  try {
    out.config = nlohmann::json::parse(io::read_bytes(is, io::read_u32(is)));
    out.network = std::make_unique<Network>(out.config.at("network").get<NetworkConfig>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad config block: " + e.what());
  }
  const auto count = io::read_u32(is);
  if (count != out.network->parameters().size())
    throw ParseError(path.string() + ": parameter count does not match config");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = io::read_bytes(is, io::read_u32(is));
    Tensor value = io::read_tensor_block(is);
    Parameter& p = out.network->parameter(name);
    if (!p.value.same_shape(value)) throw ParseError("checkpoint tensor " + name + " has wrong shape");
    p.value = std::move(value);
  }
  return out;
}

}  // namespace evfuse
