#include "evfuse/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "evfuse/binary_io.hpp"
#include "evfuse/errors.hpp"

namespace evfuse::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::derive_seeds() {
  network.seed = mix_seed(seed, 1);
  train.seed = mix_seed(seed, 2);
  perturb.seed = mix_seed(seed, 3);
}

void RunConfig::validate() const {
  if (count < 1) throw ConfigError("count must be >= 1");
  if (size < kMinPhantomSize)
    throw ConfigError("size must be >= " + std::to_string(kMinPhantomSize));
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw ConfigError("train_fraction must be in (0, 1]");
  if (split != "train" && split != "test" && split != "all")
    throw ConfigError("split must be train, test or all");
  if (ece_bins < 1) throw ConfigError("ece_bins must be >= 1");
  network.validate();
  train.validate();
  loss.validate();
  perturb.validate();
}

namespace {

std::string perturb_text(const PerturbSpec& p) {
  switch (p.kind) {
    case PerturbSpec::Kind::None: return "none";
    case PerturbSpec::Kind::Blur: {
      std::ostringstream os;
      os << "blur:" << p.blur_variance << "," << p.blur_kernel;
      return os.str();
    }
    default: return p.kind_name() + ":" + p.param_text();
  }
}

}  // namespace

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["phantom"] = {{"count", count}, {"size", size}};
  j["train_fraction"] = train_fraction;
  json net = network;
  json tr = train;
  j["network"] = net;
  j["train"] = tr;
  j["loss"] = {{"lambda_p", loss.lambda_p},
               {"lambda_m", loss.lambda_m},
               {"dice_smooth", loss.dice_smooth},
               {"mean_evidence", loss.mean_evidence}};
  j["eval"] = {{"fusion", std::string(fusion_name(fusion))},
               {"perturb", perturb_text(perturb)},
               {"split", split},
               {"ece_bins", ece_bins}};
  return j;
}

std::string RunConfig::hash() const { return io::hex64(io::fnv1a(to_json().dump())); }

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("phantom")) {
      c.count = j["phantom"].value("count", c.count);
      c.size = j["phantom"].value("size", c.size);
    }
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    if (j.contains("network")) c.network = j["network"].get<NetworkConfig>();
    if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
    if (j.contains("loss")) {
      c.loss.lambda_p = j["loss"].value("lambda_p", c.loss.lambda_p);
      c.loss.lambda_m = j["loss"].value("lambda_m", c.loss.lambda_m);
      c.loss.dice_smooth = j["loss"].value("dice_smooth", c.loss.dice_smooth);
      c.loss.mean_evidence = j["loss"].value("mean_evidence", c.loss.mean_evidence);
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      c.fusion = parse_fusion(e.value("fusion", std::string("mems")));
      c.perturb = PerturbSpec::parse(e.value("perturb", std::string("none")));
      c.split = e.value("split", c.split);
      c.ece_bins = e.value("ece_bins", c.ece_bins);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.derive_seeds();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::vector<PhaseStack> select_split(std::vector<PhaseStack> samples, const RunConfig& config) {
  const auto n_train = static_cast<std::size_t>(
      std::floor(config.train_fraction * static_cast<double>(samples.size())));
  if (config.split == "all") return samples;
  std::vector<PhaseStack> out;
  if (config.split == "train") {
    out.assign(samples.begin(), samples.begin() + static_cast<long>(n_train));
  } else {
    out.assign(samples.begin() + static_cast<long>(n_train), samples.end());
  }
  if (out.empty()) throw EmptyInput("split '" + config.split + "' is empty");
  return out;
}

// ---------------------------------------------------------------------------
// phantom

void cmd_phantom(const RunConfig& config, const fs::path& out_dir) {
  if (config.size < kMinPhantomSize)
    throw ConfigError("size must be >= " + std::to_string(kMinPhantomSize));
  const auto samples = generate_phantom(config.count, config.size, config.seed);
  write_dataset(out_dir, samples, DatasetMeta{config.size, config.seed, config.hash()});
}

// ---------------------------------------------------------------------------
// train

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IOError("cannot create directory " + dir.string());
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

}  // namespace

TrainOutcome cmd_train(const RunConfig& config, const fs::path& dataset, const fs::path& out_dir,
                       bool verbose) {
  config.validate();
  RunConfig train_cfg = config;
  train_cfg.split = "train";
  const auto samples = select_split(read_dataset(dataset), train_cfg);
  ensure_dir(out_dir);

  Network net(config.network);
  const auto hash = config.hash();
  TrainOutcome out;
  out.result = train(net, samples, config.train, config.loss, [&](const EpochRecord& r) {
    if (verbose)
      std::cerr << "epoch " << r.epoch << " loss " << r.total << " lr " << r.learning_rate << "\n";
  });

  for (const auto& r : out.result.curve)
    if (!std::isfinite(r.total)) throw GraphError("training diverged (non-finite loss)");

  out.checkpoint = out_dir / "model.evdf";
  json meta;
  meta["seed"] = config.seed;
  meta["config_hash"] = hash;
  meta["run_config"] = config.to_json();
  save_checkpoint(out.checkpoint, net, meta);

  std::ostringstream csv;
  csv << "epoch,total_loss,phase_term,mixture_term,lr,seed,config_hash\n";
  for (const auto& r : out.result.curve)
    csv << r.epoch << ',' << fmt(r.total) << ',' << fmt(r.phase_term) << ','
        << fmt(r.mixture_term) << ',' << fmt(r.learning_rate) << ',' << config.seed << ',' << hash
        << '\n';
  out.loss_csv = out_dir / "loss.csv";
  io::write_text_file(out.loss_csv, csv.str());
  return out;
}

// ---------------------------------------------------------------------------
// eval

MetricsReport evaluate(Network& net, std::span<const PhaseStack> samples, const RunConfig& config) {
  if (samples.empty()) throw EmptyInput("nothing to evaluate");
  std::vector<EvalRecord> records;
  records.reserve(samples.size());

  MetricsReport report;
  std::array<double, kPhaseCount> u_sum{};
  std::array<double, kPhaseCount> u_count{};
  double fused_sum = 0.0, fused_count = 0.0, present_total = 0.0;
  std::vector<std::string> case_order;
  std::map<std::string, std::pair<double, double>> volumes;  // predicted, true

  for (std::size_t i = 0; i < samples.size(); ++i) {
    PerturbSpec spec = config.perturb;
    spec.seed = mix_seed(config.perturb.seed, i);
    const PhaseStack sample = perturb(samples[i], spec);
    const auto res = forward_pipeline(net, sample, config.fusion);

    EvalRecord rec;
    rec.case_id = sample.case_id;
    rec.truth = sample.mask();
    const std::size_t pixels = sample.height() * sample.width();
    rec.prediction.resize(pixels);
    rec.confidence.resize(pixels);
    rec.uncertainty.resize(pixels);
    for (std::size_t px = 0; px < pixels; ++px) {
      auto p = res.fused_probabilities.pixel(px);
      const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      rec.prediction[px] = static_cast<std::uint8_t>(best);
      rec.confidence[px] = std::clamp(p[best], 0.0, 1.0);
      rec.uncertainty[px] = res.fused.uncertainty(px);
      fused_sum += rec.uncertainty[px];
    }
    fused_count += static_cast<double>(pixels);

    for (std::size_t k = 0; k < res.phases.size(); ++k) {
      const auto s = static_cast<std::size_t>(res.phases[k]);
      for (double u : res.phase_opinions[k].uncertainties()) u_sum[s] += u;
      u_count[s] += static_cast<double>(pixels);
      report.phase_present_count[s] += 1;
    }
    present_total += static_cast<double>(res.phases.size());

    auto [it, inserted] = volumes.try_emplace(rec.case_id, 0.0, 0.0);
    if (inserted) case_order.push_back(rec.case_id);
    for (std::size_t px = 0; px < pixels; ++px) {
      it->second.first += rec.prediction[px] != 0 ? 1.0 : 0.0;
      it->second.second += rec.truth[px] != 0 ? 1.0 : 0.0;
    }
    records.push_back(std::move(rec));
  }

  report.fusion = std::string(fusion_name(config.fusion));
  report.perturb_kind = config.perturb.kind_name();
  report.perturb_param = config.perturb.param_text();
  report.dgs = dgs(records);
  report.dcs = dcs(records);
  report.ece = ece(records, config.ece_bins);
  report.neg_log_ece = neg_log_ece(report.ece);
  report.ueo = mean_ueo(records);
  report.mean_u_fused = fused_sum / fused_count;
  for (std::size_t s = 0; s < kPhaseCount; ++s)
    report.mean_u_phase[s] =
        u_count[s] > 0.0 ? u_sum[s] / u_count[s] : std::numeric_limits<double>::quiet_NaN();
  std::vector<double> pv, tv;
  for (const auto& id : case_order) {
    pv.push_back(volumes[id].first);
    tv.push_back(volumes[id].second);
  }
  try {
    report.pearson_r = volume_correlation(pv, tv);
  } catch (const DegenerateCorrelation&) {
    report.pearson_r = std::numeric_limits<double>::quiet_NaN();
  }
  report.n_samples = samples.size();
  report.n_cases = case_order.size();
  report.mean_present_phases = present_total / static_cast<double>(samples.size());
  report.seed = config.seed;
  report.config_hash = config.hash();
  report.run_id = report.config_hash.substr(0, 12);
  return report;
}

MetricsReport cmd_eval(const RunConfig& config, const fs::path& checkpoint, const fs::path& dataset,
                       const fs::path& out_dir) {
  config.validate();
  auto loaded = load_checkpoint(checkpoint);
  if (loaded.network->config().n_phases != kPhaseCount)
    throw ConfigError("checkpoint expects " + std::to_string(loaded.network->config().n_phases) +
                      " phases; phantom samples carry 4");
  const auto samples = select_split(read_dataset(dataset), config);
  const auto report = evaluate(*loaded.network, samples, config);

  ensure_dir(out_dir);
  io::write_text_file(out_dir / "metrics.csv", "# seed=" + std::to_string(report.seed) +
                                                   " config_hash=" + report.config_hash + "\n" +
                                                   MetricsReport::csv_header() + "\n" +
                                                   report.csv_row() + "\n");
  auto j = report.to_json();
  j["checkpoint_config_hash"] = loaded.config.value("config_hash", std::string());
  j["run_config"] = config.to_json();
  io::write_text_file(out_dir / "metrics.json", j.dump(2) + "\n");
  return report;
}

// ---------------------------------------------------------------------------
// report

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

CsvTable read_metrics_csv(const fs::path& path) {
  std::istringstream is(io::read_text_file(path));
  CsvTable t;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      if (t.header != split_csv_line(MetricsReport::csv_header()))
        throw ParseError(path.string() + ": unexpected header");
      continue;
    }
    if (cells.size() != t.header.size())
      throw ParseError(path.string() + ": row has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw ParseError(path.string() + ": empty CSV");
  if (t.rows.empty()) throw ParseError(path.string() + ": no data rows");
  return t;
}

double parse_cell(const std::string& text, const std::string& where) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ParseError("non-numeric value '" + text + "' in " + where);
  }
}

struct Point {
  double x, y;
};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string render_svg(const std::string& metric, const std::string& x_label,
                       const std::map<std::string, std::vector<Point>>& series,
                       const std::string& sources) {
  constexpr double kW = 560, kH = 360, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& [name, pts] : series)
    for (const auto& p : pts) {
      if (!std::isfinite(p.y)) continue;
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n";
  os << "<desc>" << xml_escape(sources) << "</desc>\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << xml_escape(metric) << "</text>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\""
     << kTop + ph << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
     << kTop + ph << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    os << "<text x=\"" << sx(xv) << "\" y=\"" << kTop + ph + 18
       << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(std::round(xv * 1e4) / 1e4)
       << "</text>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << sy(yv) + 4
       << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(std::round(yv * 1e4) / 1e4)
       << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10
     << "\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
     << "transform=\"rotate(-90 16 " << kTop + ph / 2 << ")\">" << xml_escape(metric)
     << "</text>\n";

  std::size_t idx = 0;
  for (const auto& [name, pts] : series) {
    const char* color = kColors[idx % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    bool first = true;
    for (const auto& p : pts) {
      if (!std::isfinite(p.y)) continue;
      os << (first ? "" : " ") << sx(p.x) << ',' << sy(p.y);
      first = false;
    }
    os << "\"/>\n";
    const double ly = kTop + 16.0 * static_cast<double>(idx);
    os << "<line x1=\"" << kLeft + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + pw + 32
       << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kLeft + pw + 38 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">"
       << xml_escape(name) << "</text>\n";
    ++idx;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace

ReportOutcome cmd_report(std::span<const fs::path> csvs, const fs::path& out_dir,
                         const std::vector<std::string>& metrics) {
  if (csvs.empty()) throw ConfigError("report needs at least one CSV");
  const auto header = split_csv_line(MetricsReport::csv_header());
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end() || it - header.begin() < 4)
      throw ConfigError("unknown metric column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  for (const auto& m : metrics) column(m);

  struct Row {
    std::string fusion, kind;
    double x;
    std::vector<std::string> cells;
  };
  std::vector<Row> rows;
  std::vector<std::string> run_ids;
  for (const auto& path : csvs) {
    const auto table = read_metrics_csv(path);
    for (const auto& cells : table.rows) {
      if (std::find(run_ids.begin(), run_ids.end(), cells[0]) == run_ids.end())
        run_ids.push_back(cells[0]);
      const auto& param = cells[3];
      const auto slash = param.find('/');
      const double x = parse_cell(param.substr(0, slash), path.string());
      for (std::size_t c = 4; c < cells.size(); ++c) parse_cell(cells[c], path.string());
      rows.push_back(Row{cells[1], cells[2], x, cells});
    }
  }

  std::set<std::string> kinds;
  for (const auto& r : rows)
    if (r.kind != "none") kinds.insert(r.kind);
  std::string x_label = "perturbation magnitude";
  if (kinds.size() == 1) {
    const auto& k = *kinds.begin();
    x_label = k == "noise" ? "noise variance" : k == "blur" ? "blur variance" : "missing phases";
  }
  // Unperturbed rows anchor every series of their fusion mode at x = 0.
  auto series_keys = [&](const Row& r) {
    std::vector<std::string> keys;
    if (kinds.size() <= 1) {
      keys.push_back(r.fusion);
    } else if (r.kind == "none") {
      for (const auto& k : kinds) keys.push_back(r.fusion + ":" + k);
    } else {
      keys.push_back(r.fusion + ":" + r.kind);
    }
    return keys;
  };

  std::string sources = "runs:";
  for (const auto& id : run_ids) sources += " " + id;

  ensure_dir(out_dir);
  ReportOutcome out;
  for (const auto& metric : metrics) {
    const auto col = column(metric);
    std::map<std::string, std::vector<Point>> series;
    for (const auto& r : rows)
      for (const auto& key : series_keys(r))
        series[key].push_back({r.x, parse_cell(r.cells[col], metric)});
    for (auto& [key, pts] : series)
      std::stable_sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
    const auto path = out_dir / (metric + ".svg");
    io::write_text_file(path, render_svg(metric, x_label, series, sources));
    out.svgs.push_back(path);
  }

  std::ostringstream table;
  table << sources << "\n";
  table << std::left << std::setw(9) << "fusion" << std::setw(9) << "perturb" << std::setw(10)
        << "param";
  for (const auto& m : metrics) table << std::setw(14) << m;
  table << "\n";
  for (const auto& r : rows) {
    table << std::setw(9) << r.fusion << std::setw(9) << r.kind << std::setw(10) << r.cells[3];
    for (const auto& m : metrics) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(4) << parse_cell(r.cells[column(m)], m);
      table << std::setw(14) << cell.str();
    }
    table << "\n";
  }
  out.summary = table.str();
  io::write_text_file(out_dir / "summary.txt", out.summary);
  return out;
}

// ---------------------------------------------------------------------------
// Entry point

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e)) return 2;
  if (dynamic_cast<const IOError*>(&e)) return 3;
  return 4;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Evidential multi-phase segmentation with reduced Dempster fusion"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", perturb_arg, fusion_arg;
  std::uint64_t seed = 0;
  bool seed_given = false;

  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic multi-phase dataset");
  std::size_t count = 0, size = 0;
  phantom->add_option("--count", count, "Number of samples");
  phantom->add_option("--size", size, "Image side length in pixels");

  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset");
  std::string data_dir;
  std::size_t epochs = 0;
  bool verbose = false;
  train_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  auto* epochs_opt = train_cmd->add_option("--epochs", epochs, "Training epochs");
  train_cmd->add_flag("--verbose", verbose, "Print per-epoch loss");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string checkpoint, split;
  eval_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--perturb", perturb_arg, "noise:<var> | blur:<var>,<k> | missing:<n>");
  eval_cmd->add_option("--fusion", fusion_arg, "mems | average");
  eval_cmd->add_option("--split", split, "train | test | all");

  auto* report_cmd = app.add_subcommand("report", "Plot metric CSVs");
  std::vector<std::string> csv_paths;
  std::string metric_list;
  report_cmd->add_option("csvs", csv_paths, "Metric CSV files")->required();
  report_cmd->add_option("--metrics", metric_list, "Comma-separated metric columns");

  for (auto* sub : {phantom, train_cmd, eval_cmd, report_cmd}) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--seed", seed, "Run seed (overrides config)");
    sub->add_option("--out", out_dir, "Output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  for (auto* sub : {phantom, train_cmd, eval_cmd, report_cmd})
    if (sub->get_option("--seed")->count() > 0) seed_given = true;

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed_given) config.seed = seed;
    if (count > 0) config.count = count;
    if (size > 0) config.size = size;
    if (epochs_opt->count() > 0) config.train.epochs = epochs;
    if (!perturb_arg.empty()) config.perturb = PerturbSpec::parse(perturb_arg);
    if (!fusion_arg.empty()) config.fusion = parse_fusion(fusion_arg);
    if (!split.empty()) config.split = split;
    config.derive_seeds();
    config.validate();

    if (phantom->parsed()) {
      cmd_phantom(config, out_dir);
      std::cout << "wrote " << config.count << " samples to " << out_dir << "\n";
    } else if (train_cmd->parsed()) {
      const auto res = cmd_train(config, data_dir, out_dir, verbose);
      const double last = res.result.curve.empty() ? res.result.initial_loss
                                                    : res.result.curve.back().total;
      std::cout << "initial loss " << res.result.initial_loss << ", final loss " << last
                << "\ncheckpoint " << res.checkpoint.string() << "\n";
    } else if (eval_cmd->parsed()) {
      const auto report = cmd_eval(config, checkpoint, data_dir, out_dir);
      std::cout << MetricsReport::csv_header() << "\n" << report.csv_row() << "\n";
    } else if (report_cmd->parsed()) {
      std::vector<std::string> metrics = kDefaultReportMetrics;
      if (!metric_list.empty()) {
        metrics.clear();
        std::istringstream is(metric_list);
        std::string m;
        while (std::getline(is, m, ',')) metrics.push_back(m);
      }
      std::vector<fs::path> paths(csv_paths.begin(), csv_paths.end());
      const auto res = cmd_report(paths, out_dir, metrics);
      std::cout << res.summary;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}

}  // namespace evfuse::cli
