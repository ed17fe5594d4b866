#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>
#include <sstream>

#include "ecoroute/ingest.hpp"
#include "ecoroute/network.hpp"
#include "testutil.hpp"

using namespace ecoroute;

namespace {

const char* kTraversalHeader =
    "trip_id,seq,link_id,entry_time_s,exit_time_s,entry_speed_mps,exit_speed_mps,avg_speed_mps,"
    "fuel_kg\n";

RoadNetwork chain_network(int links, double length) {
  std::vector<Link> ls;
  std::vector<Movement> ms;
  for (int i = 0; i < links; ++i) {
    Link l;
    l.id = "L" + std::to_string(i);
    l.length_m = length;
    l.grade_rad = 0.0;
    l.speed_limit_mps = 15.65;
    ls.push_back(l);
    if (i > 0) ms.push_back({"L" + std::to_string(i - 1), "L" + std::to_string(i)});
  }
  return RoadNetwork::build(std::move(ls), ms);
}

std::string trip_rows(const std::string& id, int n_links, double seconds_per_link,
                      double speed = 10.0) {
  std::ostringstream out;
  for (int i = 0; i < n_links; ++i)
    out << id << ',' << i << ",L" << i << ',' << i * seconds_per_link << ','
        << (i + 1) * seconds_per_link << ',' << speed << ',' << speed << ',' << speed << ",\n";
  return out.str();
}

}  // namespace

TEST_CASE("trip filters: duration and distance boundaries") {
  testutil::TempDir dir;
  const auto path = dir.file("traversals.csv");
  // Network with 50 m links: a 10-link trip covers 500 m.
  const auto net = chain_network(12, 50.0);

  SECTION("duration 500 s is excluded") {
    testutil::write_file(path, kTraversalHeader + trip_rows("A", 10, 50.0));
    const auto result = load_trips(path, {}, &net);
    REQUIRE(result.trips.empty());
    REQUIRE(result.report.dropped_short_duration == 1);
  }
  SECTION("distance 200 m with duration 700 s is excluded") {
    const auto short_net = chain_network(12, 20.0);  // 10 links -> 200 m
    testutil::write_file(path, kTraversalHeader + trip_rows("A", 10, 70.0));
    const auto result = load_trips(path, {}, &short_net);
    REQUIRE(result.trips.empty());
    REQUIRE(result.report.dropped_short_distance == 1);
  }
  SECTION("duration 601 s and distance 301 m is retained") {
    std::vector<Link> ls(1);
    ls[0].id = "L0";
    ls[0].length_m = 301.0;
    ls[0].grade_rad = 0.0;
    ls[0].speed_limit_mps = 15.65;
    const auto one = RoadNetwork::build(std::move(ls), {});
    testutil::write_file(path, std::string(kTraversalHeader) + "A,0,L0,0,601,0.5,0.5,0.5,\n");
    const auto result = load_trips(path, {}, &one);
    REQUIRE(result.trips.size() == 1);
    REQUIRE(result.trips[0].total_duration_s == Catch::Approx(601.0));
    REQUIRE(result.trips[0].total_distance_m == Catch::Approx(301.0));
  }
}

TEST_CASE("trip rejection reasons") {
  testutil::TempDir dir;
  const auto path = dir.file("traversals.csv");
  const auto net = chain_network(5, 400.0);

  SECTION("non-monotone seq") {
    testutil::write_file(path, std::string(kTraversalHeader) +
                                   "A,0,L0,0,200,10,10,10,\n"
                                   "A,0,L1,200,400,10,10,10,\n");
    const auto result = load_trips(path, {}, &net);
    REQUIRE(result.trips.empty());
    REQUIRE(result.report.rejected_nonmonotone_seq == 1);
    REQUIRE(result.report.rejection_reasons.size() == 1);
    REQUIRE(result.report.rejection_reasons[0].find("non-monotone") != std::string::npos);
  }
  SECTION("exit before entry") {
    testutil::write_file(path, std::string(kTraversalHeader) + "A,0,L0,100,90,10,10,10,\n");
    const auto result = load_trips(path, {}, &net);
    REQUIRE(result.report.rejected_bad_times == 1);
  }
  SECTION("unknown link with a network supplied") {
    testutil::write_file(path, std::string(kTraversalHeader) + "A,0,NOPE,0,700,10,10,10,\n");
    const auto result = load_trips(path, {}, &net);
    REQUIRE(result.report.rejected_unknown_link == 1);
  }
  SECTION("consecutive links without a movement") {
    testutil::write_file(path, std::string(kTraversalHeader) +
                                   "A,0,L0,0,350,10,10,10,\n"
                                   "A,1,L2,350,700,10,10,10,\n");
    const auto result = load_trips(path, {}, &net);
    REQUIRE(result.report.rejected_disconnected == 1);
  }
  SECTION("malformed numeric field names file and line") {
    testutil::write_file(path, std::string(kTraversalHeader) + "A,0,L0,zero,700,10,10,10,\n");
    try {
      load_trips(path, {}, &net);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      REQUIRE(std::string(e.what()).find(":2") != std::string::npos);
    }
  }
}

TEST_CASE("compute_features definitions") {
  Link link;
  link.id = "L";
  link.length_m = 200.0;
  link.grade_rad = 0.015;
  link.speed_limit_mps = 15.65;

  LinkTraversal t;
  t.link_id = "L";
  t.entry_time_s = 0.0;
  t.exit_time_s = 20.0;

  SECTION("steady cruise has zero speed change") {
    t.entry_speed_mps = t.exit_speed_mps = 10.0;
    t.avg_speed_mps = 10.0;
    const MotionFeatures f = compute_features(t, link);
    REQUIRE(f.speed_change_mps == 0.0);
    REQUIRE(f.grade_rad == 0.015);
    REQUIRE(f.length_m == 200.0);
    REQUIRE(f.speed_limit_mps == 15.65);
  }
  SECTION("acceleration counts positive") {
    t.entry_speed_mps = 5.0;
    t.exit_speed_mps = 15.0;
    t.avg_speed_mps = 10.0;
    REQUIRE(compute_features(t, link).speed_change_mps == 10.0);
  }
  SECTION("missing average speed falls back to length over dwell") {
    t.entry_speed_mps = t.exit_speed_mps = 10.0;
    t.avg_speed_mps = 0.0;
    REQUIRE(compute_features(t, link).avg_speed_mps == Catch::Approx(10.0));
  }
  SECTION("zero dwell and no recorded average is an error") {
    t.exit_time_s = t.entry_time_s;
    t.avg_speed_mps = 0.0;
    REQUIRE_THROWS_AS(compute_features(t, link), ValidationError);
  }
  SECTION("wrong link pairing is an error") {
    Link other = link;
    other.id = "M";
    t.avg_speed_mps = 10.0;
    REQUIRE_THROWS_AS(compute_features(t, other), ValidationError);
  }
}

TEST_CASE("link speed model fitting") {
  SECTION("bimodal speeds recover two components") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> slow(8.0, 1.0), fast(16.0, 1.0);
    std::vector<double> samples;
    std::vector<int> labels;
    for (int i = 0; i < 1000; ++i) {
      const bool is_slow = i % 2 == 0;
      samples.push_back(is_slow ? slow(rng) : fast(rng));
      labels.push_back(is_slow ? 0 : 1);
    }
    const auto model = fit_link_speed_model("L", samples, 6, 3);
    REQUIRE(model.mixture.component_count() == 2);

    // Oracle: per-label sample means.
    double mean_slow = 0, mean_fast = 0;
    for (std::size_t i = 0; i < samples.size(); ++i)
      (labels[i] == 0 ? mean_slow : mean_fast) += samples[i] / 500.0;
    std::vector<double> fitted = {model.mixture.means[0][0], model.mixture.means[1][0]};
    std::sort(fitted.begin(), fitted.end());
    REQUIRE(std::abs(fitted[0] - 8.0) < 0.3);
    REQUIRE(std::abs(fitted[1] - 16.0) < 0.3);
    REQUIRE(std::abs(fitted[0] - mean_slow) < 0.3);
    REQUIRE(std::abs(fitted[1] - mean_fast) < 0.3);
  }
  SECTION("near-identical samples collapse to one floored component") {
    std::vector<double> samples(50, 12.0);
    const auto model = fit_link_speed_model("L", samples);
    REQUIRE(model.mixture.component_count() == 1);
    REQUIRE(model.mixture.means[0][0] == Catch::Approx(12.0));
    REQUIRE(model.mixture.covariances[0](0, 0) >= kSpeedVarianceFloor);
  }
  SECTION("small samples use the single-Gaussian fallback") {
    std::vector<double> samples = {9, 10, 11, 9.5, 10.5, 10, 9.8, 10.2, 10.1, 9.9};
    const auto model = fit_link_speed_model("L", samples);
    REQUIRE(model.mixture.component_count() == 1);
    REQUIRE(model.mixture.means[0][0] == Catch::Approx(10.0).margin(0.01));
  }
}

TEST_CASE("window-conditioned speed estimation") {
  LinkSpeedModel model;
  model.link_id = "L";
  model.mixture.dim = 1;
  model.mixture.weights = {0.5, 0.5};
  model.mixture.means = {VectorXd::Constant(1, 8.0), VectorXd::Constant(1, 16.0)};
  model.mixture.covariances = {MatrixXd::Constant(1, 1, 1.0), MatrixXd::Constant(1, 1, 1.0)};

  SECTION("single-component model returns its mean for any window") {
    LinkSpeedModel single;
    single.mixture.dim = 1;
    single.mixture.weights = {1.0};
    single.mixture.means = {VectorXd::Constant(1, 12.5)};
    single.mixture.covariances = {MatrixXd::Constant(1, 1, 2.0)};
    REQUIRE(estimate_window_speed(single, {3.0, 30.0}) == 12.5);
  }
  SECTION("window concentrated at one mode pulls the estimate there") {
    const std::vector<double> window(20, 16.0);
    const double v = estimate_window_speed(model, window);
    // Independent evaluation: at v=16 the posterior weight of the fast
    // component is 1/(1+exp(-32)), so the estimate sits at 16 - 8/(1+e^32).
    const double w_slow = 1.0 / (1.0 + std::exp(32.0));
    REQUIRE(v == Catch::Approx(16.0 - 8.0 * w_slow).margin(1e-9));
    REQUIRE(std::abs(v - 16.0) < 0.1);
  }
  SECTION("empty window returns the prior mean") {
    REQUIRE(estimate_window_speed(model, {}) == Catch::Approx(12.0));
  }
  SECTION("estimates stay within the component mean range") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> any(0.0, 30.0);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> window;
      const int n = 1 + static_cast<int>(any(rng));
      for (int i = 0; i < n; ++i) window.push_back(any(rng));
      const double v = estimate_window_speed(model, window);
      REQUIRE(v >= 8.0 - 1e-12);
      REQUIRE(v <= 16.0 + 1e-12);
    }
  }
}

TEST_CASE("speed samples group by link") {
  testutil::TempDir dir;
  const auto path = dir.file("traversals.csv");
  const auto net = chain_network(3, 400.0);
  testutil::write_file(path, std::string(kTraversalHeader) +
                                 "A,0,L0,0,350,9,9,9,\n"
                                 "A,1,L1,350,700,11,11,11,\n"
                                 "B,0,L0,0,400,8,8,8,\n"
                                 "B,1,L1,400,800,12,12,12,\n");
  const auto result = load_trips(path, {}, &net);
  REQUIRE(result.trips.size() == 2);
  const auto grouped = speed_samples_by_link(result.trips);
  REQUIRE(grouped.at("L0") == std::vector<double>{9.0, 8.0});
  REQUIRE(grouped.at("L1") == std::vector<double>{11.0, 12.0});
}
