#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "evfuse/errors.hpp"
#include "evfuse/metrics.hpp"
#include "support/checks.hpp"
#include "support/oracles.hpp"

using namespace evfuse;
using Mask = std::vector<std::uint8_t>;

namespace {

Mask random_mask(std::size_t n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  Mask m(n);
  for (auto& v : m) v = b(rng);
  return m;
}

// Bins assigned by explicit interval search, last bin closed.
double ece_oracle(const std::vector<double>& conf, const Mask& correct, std::size_t bins) {
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = double(b) / double(bins), hi = double(b + 1) / double(bins);
    double n = 0, acc = 0, c = 0;
    for (std::size_t i = 0; i < conf.size(); ++i) {
      const bool in = conf[i] >= lo && (conf[i] < hi || (b + 1 == bins && conf[i] <= hi));
      if (!in) continue;
      n += 1;
      acc += correct[i];
      c += conf[i];
    }
    if (n > 0) total += n / double(conf.size()) * std::abs(acc / n - c / n);
  }
  return total;
}

}  // namespace

TEST_CASE("metric examples") {
  const auto r = testing::metric_examples();
  INFO(r.detail);
  CHECK(r.pass);
}

TEST_CASE("dice is symmetric and bounded") {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 500; ++k) {
    const auto a = random_mask(40, 0.3, rng), b = random_mask(40, 0.3, rng);
    const double d = dice_score(a, b);
    CHECK(d == dice_score(b, a));
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    CHECK(dice_score(a, a) == 1.0);
  }
  CHECK_THROWS_AS(dice_score(Mask{1, 0}, Mask{1}), ShapeError);
}

TEST_CASE("dgs equals dcs when every case has one slice") {
  std::mt19937_64 rng(2);
  std::vector<EvalRecord> recs;
  for (int k = 0; k < 6; ++k) {
    EvalRecord r;
    r.case_id = "c" + std::to_string(k);
    r.prediction = random_mask(16, 0.4, rng);
    r.truth = random_mask(16, 0.4, rng);
    recs.push_back(r);
  }
  CHECK(dgs(recs) == doctest::Approx(dcs(recs)).epsilon(1e-15));
}

TEST_CASE("empty inputs") {
  const std::vector<EvalRecord> none;
  CHECK_THROWS_AS(dgs(none), EmptyInput);
  CHECK_THROWS_AS(dcs(none), EmptyInput);
  CHECK_THROWS_AS(mean_ueo(none), EmptyInput);
  CHECK_THROWS_AS(ece(std::vector<double>{}, Mask{}), EmptyInput);
  CHECK_THROWS_AS(ueo(std::vector<double>{}, Mask{}), EmptyInput);
  CHECK_THROWS_AS(ece(std::vector<double>{0.5}, Mask{1, 0}), ShapeError);
  CHECK_THROWS_AS(ece(std::vector<double>{1.5}, Mask{1}), DomainError);
  CHECK_THROWS_AS(ece(std::vector<double>{0.5}, Mask{1}, 0), ConfigError);
}

TEST_CASE("ece agrees with interval binning and ignores ordering") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> conf(60);
    for (auto& c : conf) c = u(rng);
    conf[0] = 1.0;
    conf[1] = 0.0;
    conf[2] = 0.3;
    const auto correct = random_mask(60, 0.6, rng);
    const double e = ece(conf, correct);
    CHECK(e == doctest::Approx(ece_oracle(conf, correct, 10)).epsilon(1e-12));
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);

    std::vector<std::size_t> idx(conf.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> c2;
    Mask k2;
    for (auto i : idx) {
      c2.push_back(conf[i]);
      k2.push_back(correct[i]);
    }
    CHECK(ece(c2, k2) == doctest::Approx(e).epsilon(1e-12));
    CHECK(ece(conf, correct, 15) == doctest::Approx(ece_oracle(conf, correct, 15)).epsilon(1e-12));
  }
}

TEST_CASE("negative log ece is decreasing and capped") {
  double prev = std::numeric_limits<double>::infinity();
  for (double e : {0.0, 1e-9, 1e-4, 0.01, 0.1, 0.5, 1.0}) {
    const double v = neg_log_ece(e);
    CHECK(v <= prev);
    prev = v;
  }
  CHECK(neg_log_ece(0.0) == doctest::Approx(-std::log(kEceFloor)));
  CHECK(neg_log_ece(1.0) == 0.0);
}

TEST_CASE("ueo matches the sweep oracle and is affine invariant") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> unc(64);
    for (auto& v : unc) v = u(rng);
    const auto err = random_mask(64, 0.2, rng);
    const double got = ueo(unc, err);
    CHECK(got == doctest::Approx(testing::ueo_sweep_oracle(unc, err)).epsilon(1e-12));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
    // Exact binary rescaling keeps the min-max normalization bit-identical.
    std::vector<double> scaled(unc);
    for (auto& v : scaled) v *= 4.0;
    CHECK(ueo(scaled, err) == got);
  }
  CHECK_THROWS_AS(ueo(std::vector<double>{0.1, 0.2}, Mask{1}), ShapeError);
}

TEST_CASE("mean ueo averages per-slice error maps") {
  EvalRecord a;
  a.case_id = "c0";
  a.truth = {1, 0, 0, 1};
  a.prediction = {1, 1, 0, 1};
  a.uncertainty = {0.1, 0.9, 0.1, 0.1};
  a.confidence = {0.9, 0.6, 0.9, 0.9};
  EvalRecord b = a;
  b.uncertainty = {0.9, 0.1, 0.1, 0.1};
  CHECK(mean_ueo(std::vector{a}) == 1.0);
  CHECK(mean_ueo(std::vector{a, b}) == doctest::Approx(0.5 * (1.0 + ueo(b.uncertainty, Mask{0, 1, 0, 0}))));
  CHECK_NOTHROW(a.validate());
  a.uncertainty[0] = 0.0;
  CHECK_THROWS_AS(a.validate(), DomainError);
}

TEST_CASE("volume correlation") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> x(10), y(10);
    for (std::size_t i = 0; i < 10; ++i) {
      x[i] = n(rng);
      y[i] = 0.5 * x[i] + n(rng);
    }
    double mx = 0, my = 0, mxy = 0, mxx = 0, myy = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      mx += x[i] / 10;
      my += y[i] / 10;
      mxy += x[i] * y[i] / 10;
      mxx += x[i] * x[i] / 10;
      myy += y[i] * y[i] / 10;
    }
    const double oracle = (mxy - mx * my) / std::sqrt((mxx - mx * mx) * (myy - my * my));
    const double r = volume_correlation(x, y);
    CHECK(r == doctest::Approx(oracle).epsilon(1e-10));
    CHECK(std::abs(r) <= 1.0);
    CHECK(volume_correlation(y, x) == doctest::Approx(r).epsilon(1e-14));
  }
  CHECK_THROWS_AS(volume_correlation(std::vector{1.0}, std::vector{2.0}), DegenerateCorrelation);
  CHECK_THROWS_AS(volume_correlation(std::vector{1.0, 1.0}, std::vector{2.0, 3.0}), DegenerateCorrelation);
  CHECK_THROWS_AS(volume_correlation(std::vector{1.0, 2.0}, std::vector{2.0}), ShapeError);
}

TEST_CASE("report csv layout") {
  CHECK(MetricsReport::csv_header() ==
        "run_id,fusion,perturb_kind,perturb_param,dgs,dcs,ece,neg_log_ece,ueo,mean_u_fused,"
        "mean_u_nc,mean_u_art,mean_u_pv,mean_u_de");
  MetricsReport r;
  r.run_id = "r1";
  r.fusion = "mems";
  r.perturb_kind = "noise";
  r.perturb_param = "0.1";
  r.dgs = 0.5;
  r.mean_u_phase = {0.1, 0.2, std::nan(""), 0.4};
  const auto row = r.csv_row();
  std::vector<std::string> cells;
  std::stringstream ss(row);
  for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
  REQUIRE(cells.size() == 14);
  CHECK(cells[0] == "r1");
  CHECK(cells[1] == "mems");
  CHECK(cells[2] == "noise");
  CHECK(cells[3] == "0.1");
  CHECK(cells[4] == "0.5");
  CHECK(cells[12] == "nan");
  const auto j = r.to_json();
  CHECK(j["dgs"] == 0.5);
}
