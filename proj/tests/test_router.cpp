#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <map>
#include <random>

#include "ecoroute/router.hpp"
#include "ecoroute/synth.hpp"

using namespace ecoroute;

namespace {

RoadNetwork build_net(const std::vector<std::string>& ids,
                      const std::vector<std::pair<std::string, std::string>>& movements) {
  std::vector<Link> links;
  for (const auto& id : ids) {
    Link l;
    l.id = id;
    l.length_m = 100.0;
    l.grade_rad = 0.0;
    l.speed_limit_mps = 15.65;
    links.push_back(l);
  }
  std::vector<Movement> ms;
  for (const auto& [a, b] : movements) ms.push_back({a, b});
  return RoadNetwork::build(std::move(links), ms);
}

CostModel manual_costs(const RoadNetwork& net, const std::map<std::string, EdgeCost>& costs) {
  CostModel model;
  model.link_costs.resize(net.size());
  model.speed_imputed.assign(net.size(), false);
  for (const auto& [id, cost] : costs) model.link_costs[net.require_index(id)] = cost;
  return model;
}

/// Exhaustive simple-path enumeration. Path cost excludes the origin link and
/// includes the destination, matching the value-table convention.
double brute_force_value(const RoadNetwork& net, const CostModel& costs, LinkIndex origin,
                         LinkIndex destination, const CostSelector& selector) {
  if (origin == destination) return 0.0;
  double best = kInf;
  std::vector<bool> visited(net.size(), false);
  visited[origin] = true;
  auto dfs = [&](auto&& self, LinkIndex at, double acc) -> void {
    if (acc >= best) return;
    for (LinkIndex s : net.successors(at)) {
      const double cost = selector(costs.link_costs[s]);
      if (s == destination) {
        best = std::min(best, acc + cost);
        continue;
      }
      if (visited[s]) continue;
      visited[s] = true;
      self(self, s, acc + cost);
      visited[s] = false;
    }
  };
  dfs(dfs, origin, 0.0);
  return best;
}

struct RandomGraph {
  RoadNetwork net;
  CostModel costs;
};

RandomGraph random_graph(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size_pick(2, 12);
  const int n = size_pick(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> cost_pick(0.1, 10.0);
  const double p = std::min(0.35, 2.5 / n);

  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back("L" + std::to_string(i));
  std::vector<std::pair<std::string, std::string>> movements;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && u(rng) < p) movements.push_back({ids[i], ids[j]});

  RandomGraph g{build_net(ids, movements), {}};
  g.costs.link_costs.resize(g.net.size());
  g.costs.speed_imputed.assign(g.net.size(), false);
  for (auto& c : g.costs.link_costs) c = {cost_pick(rng), cost_pick(rng), cost_pick(rng)};
  return g;
}

RouteResult route_from_table(const RoadNetwork& net, const CostModel& costs,
                             const ValueTable& table, LinkIndex origin) {
  return extract_route(net, costs, table, origin, Strategy::kConstrainedEco);
}

/// Independent evaluation of the constrained blended cost along an explicit
/// path (ordered origin -> destination), using the same sigmoid definition.
double path_blended_value(const RoadNetwork& net, const CostModel& costs,
                          const std::vector<std::string>& path, const ValueTable& fastest,
                          double epsilon, double sharpness) {
  double fuel = 0.0, time = 0.0, blended = 0.0;
  for (std::size_t i = path.size(); i-- > 1;) {  // backward, excluding the origin
    const LinkIndex link = net.require_index(path[i]);
    const LinkIndex lands_on = net.require_index(path[i - 1]);
    const EdgeCost step = costs.link_costs[link];
    time += step.time_s;
    fuel += step.fuel_kg;
    const double budget = (1.0 + epsilon) * fastest.value[lands_on];
    const double w = time_weight(time, budget, sharpness);
    blended += (1.0 - w) * step.fuel_kg + w * step.time_s;
  }
  return blended;
}

}  // namespace

TEST_CASE("edge costs: historical speed and posted-limit imputation") {
  auto net = build_net({"A", "B"}, {{"A", "B"}});
  // Trivial fuel model: fuel equals travel time times a constant rate.
  struct RateModel : FuelModel {
    double predict(const MotionFeatures& f) const override {
      return 1e-4 * f.length_m / f.avg_speed_mps;
    }
    std::string name() const override { return "rate"; }
  } model;

  // Make the limits distinguishable: A at 20 m/s posted, B covered at 8 m/s.
  std::vector<Link> links;
  for (auto id : {"A", "B"}) {
    Link l;
    l.id = id;
    l.length_m = 400.0;
    l.speed_limit_mps = 20.0;
    links.push_back(l);
  }
  auto net2 = RoadNetwork::build(std::move(links), {Movement{"A", "B"}});

  EdgeCostOptions options;
  options.historical_speed_mps["B"] = 8.0;
  const CostModel costs = edge_costs(net2, model, options);
  const LinkIndex a = net2.require_index("A"), b = net2.require_index("B");
  REQUIRE(costs.link_costs[a].time_s == Catch::Approx(20.0));  // imputed from the limit
  REQUIRE(costs.speed_imputed[a]);
  REQUIRE(costs.link_costs[b].time_s == Catch::Approx(50.0));  // 400 / 8
  REQUIRE_FALSE(costs.speed_imputed[b]);
  REQUIRE(costs.link_costs[a].distance_m == 400.0);

  SECTION("nonpositive historical speed names the link") {
    options.historical_speed_mps["B"] = 0.0;
    try {
      edge_costs(net2, model, options);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      REQUIRE(std::string(e.what()).find("B") != std::string::npos);
    }
  }
}

TEST_CASE("all_to_one basics") {
  SECTION("destination entry is zero with an empty path") {
    auto net = build_net({"A", "B", "D"}, {{"A", "B"}, {"B", "D"}});
    auto costs = manual_costs(net, {{"A", {1, 1, 1}}, {"B", {1, 5, 1}}, {"D", {1, 7, 1}}});
    const auto table = all_to_one(net, costs, net.require_index("D"), CostSelector::time());
    REQUIRE(table.value[net.require_index("D")] == 0.0);
    REQUIRE(table.successor[net.require_index("D")] == kInvalidLink);

    // 3-link chain with time costs 5 and 7 on B and D.
    REQUIRE(table.value[net.require_index("A")] == 12.0);
    REQUIRE(table.successor[net.require_index("A")] == net.require_index("B"));
  }
  SECTION("unreachable links carry infinity, not an error") {
    auto net = build_net({"A", "B", "D"}, {{"A", "B"}});
    auto costs = manual_costs(net, {{"A", {1, 1, 1}}, {"B", {1, 1, 1}}, {"D", {1, 1, 1}}});
    const auto table = all_to_one(net, costs, net.require_index("D"), CostSelector::time());
    REQUIRE(!table.reachable(net.require_index("A")));
    const auto r = extract_route(net, costs, table, net.require_index("A"), Strategy::kFastest);
    REQUIRE_FALSE(r.reached);
  }
  SECTION("equal-cost ties resolve toward the smaller link id") {
    // Two parallel middles with identical costs.
    auto net = build_net({"A", "M1", "M2", "D"},
                         {{"A", "M1"}, {"A", "M2"}, {"M1", "D"}, {"M2", "D"}});
    auto costs = manual_costs(
        net, {{"A", {1, 1, 1}}, {"M1", {1, 3, 1}}, {"M2", {1, 3, 1}}, {"D", {1, 2, 1}}});
    const auto table = all_to_one(net, costs, net.require_index("D"), CostSelector::time());
    REQUIRE(table.successor[net.require_index("A")] == net.require_index("M1"));
  }
}

TEST_CASE("all_to_one equals exhaustive enumeration on random graphs") {
  const std::vector<CostSelector> selectors = {CostSelector::distance(), CostSelector::time(),
                                               CostSelector::fuel()};
  std::size_t compared = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const RandomGraph g = random_graph(seed);
    for (const auto& selector : selectors) {
      for (LinkIndex d = 0; d < g.net.size(); ++d) {
        const auto table = all_to_one(g.net, g.costs, d, selector);
        for (LinkIndex o = 0; o < g.net.size(); ++o) {
          const double expected = brute_force_value(g.net, g.costs, o, d, selector);
          if (std::isinf(expected)) {
            REQUIRE(!table.reachable(o));
          } else {
            REQUIRE(table.value[o] == Catch::Approx(expected).margin(1e-9));
            ++compared;
          }
        }
      }
    }
  }
  REQUIRE(compared > 1000);
}

TEST_CASE("extracted routes satisfy optimal substructure and consistent totals") {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const RandomGraph g = random_graph(seed);
    for (LinkIndex d = 0; d < g.net.size(); ++d) {
      const auto table = all_to_one(g.net, g.costs, d, CostSelector::time());
      for (LinkIndex o = 0; o < g.net.size(); ++o) {
        if (!table.reachable(o)) continue;
        const auto route = extract_route(g.net, g.costs, table, o, Strategy::kFastest);
        REQUIRE(route.reached);
        // Totals match the per-link breakdown.
        double fuel = 0, time = 0, dist = 0;
        for (const auto& step : route.per_link) {
          fuel += step.fuel_kg;
          time += step.time_s;
          dist += step.distance_m;
        }
        REQUIRE(route.total_fuel_kg == Catch::Approx(fuel).margin(1e-9));
        REQUIRE(route.total_time_s == Catch::Approx(time).margin(1e-9));
        REQUIRE(route.total_distance_m == Catch::Approx(dist).margin(1e-9));
        // Every suffix is optimal: value at each link equals the remaining
        // path cost.
        double remaining = route.total_time_s;
        for (std::size_t i = 0; i < route.links.size(); ++i) {
          const LinkIndex li = g.net.require_index(route.links[i]);
          remaining -= route.per_link[i].time_s;
          REQUIRE(table.value[li] == Catch::Approx(remaining + 0.0).margin(1e-9));
        }
        // Consecutive links joined by declared movements.
        for (std::size_t i = 1; i < route.links.size(); ++i)
          REQUIRE(g.net.has_movement(g.net.require_index(route.links[i - 1]),
                                     g.net.require_index(route.links[i])));
      }
    }
  }
}

TEST_CASE("origin equal to destination yields the single-link route") {
  auto net = build_net({"A", "B"}, {{"A", "B"}});
  auto costs = manual_costs(net, {{"A", {2, 3, 4}}, {"B", {1, 1, 1}}});
  const auto table = all_to_one(net, costs, net.require_index("A"), CostSelector::time());
  const auto route = extract_route(net, costs, table, net.require_index("A"), Strategy::kFastest);
  REQUIRE(route.reached);
  REQUIRE(route.links == std::vector<std::string>{"A"});
  REQUIRE(route.total_fuel_kg == 2.0);
  REQUIRE(route.total_time_s == 3.0);
  REQUIRE(route.total_distance_m == 4.0);
}

TEST_CASE("sigmoid time weight") {
  REQUIRE(time_weight(100.0, 100.0, 0.02) == 0.5);
  REQUIRE(time_weight(200.0, 100.0, 0.02) == 1.0);
  REQUIRE(time_weight(50.0, 100.0, 0.02) == 0.0);
  REQUIRE(time_weight(101.0, 100.0, 0.02) > 0.5);
  REQUIRE(time_weight(99.0, 100.0, 0.02) < 0.5);
  // zero budget saturates instead of dividing by zero
  REQUIRE(time_weight(10.0, 0.0, 0.02) == 1.0);
}

TEST_CASE("constrained eco: diamond network switches with epsilon") {
  auto net = build_net({"O", "A", "B", "D"}, {{"O", "A"}, {"O", "B"}, {"A", "D"}, {"B", "D"}});
  // Fast branch A: quick but thirsty. Eco branch B: slow but frugal. The eco
  // path takes 1.30x the fastest time.
  auto costs = manual_costs(net, {{"O", {1.0, 40, 100}},
                                  {"A", {2.0, 100, 100}},
                                  {"B", {0.5, 145, 100}},
                                  {"D", {1.0, 50, 100}}});
  const LinkIndex o = net.require_index("O"), d = net.require_index("D");
  const auto fastest = all_to_one(net, costs, d, CostSelector::time());
  REQUIRE(fastest.value[o] == Catch::Approx(150.0));

  const std::vector<std::string> fast_path = {"O", "A", "D"};
  const std::vector<std::string> eco_path = {"O", "B", "D"};

  for (double epsilon : {0.05, 0.50}) {
    ConstrainedOptions options;
    options.epsilon = epsilon;
    const auto table = constrained_eco(net, costs, d, fastest, options);
    const auto route = route_from_table(net, costs, table, o);

    // Oracle: evaluate both paths independently with the same definition.
    const double g_fast =
        path_blended_value(net, costs, fast_path, fastest, epsilon, options.sharpness);
    const double g_eco =
        path_blended_value(net, costs, eco_path, fastest, epsilon, options.sharpness);
    const auto& expected = g_fast <= g_eco ? fast_path : eco_path;
    REQUIRE(route.links == expected);
    REQUIRE(table.value[o] == Catch::Approx(std::min(g_fast, g_eco)).margin(1e-9));
  }

  // The switch itself: tight budget picks the fast branch, generous budget
  // the frugal one.
  ConstrainedOptions tight, loose;
  tight.epsilon = 0.05;
  loose.epsilon = 0.50;
  REQUIRE(route_from_table(net, costs, constrained_eco(net, costs, d, fastest, tight), o).links ==
          fast_path);
  REQUIRE(route_from_table(net, costs, constrained_eco(net, costs, d, fastest, loose), o).links ==
          eco_path);
}

TEST_CASE("constrained eco equals the others when eco and fastest agree") {
  auto net = build_net({"O", "A", "B", "D"}, {{"O", "A"}, {"O", "B"}, {"A", "D"}, {"B", "D"}});
  // Branch A dominates on both criteria.
  auto costs = manual_costs(net, {{"O", {1, 10, 1}},
                                  {"A", {0.5, 20, 1}},
                                  {"B", {2.0, 80, 1}},
                                  {"D", {1, 10, 1}}});
  const LinkIndex o = net.require_index("O"), d = net.require_index("D");
  const auto fastest = all_to_one(net, costs, d, CostSelector::time());
  const auto eco = all_to_one(net, costs, d, CostSelector::fuel());
  const auto constrained = constrained_eco(net, costs, d, fastest);
  const auto expected = std::vector<std::string>{"O", "A", "D"};
  REQUIRE(extract_route(net, costs, fastest, o, Strategy::kFastest).links == expected);
  REQUIRE(extract_route(net, costs, eco, o, Strategy::kEco).links == expected);
  REQUIRE(route_from_table(net, costs, constrained, o).links == expected);
}

TEST_CASE("constrained eco configuration errors") {
  auto net = build_net({"A", "D"}, {{"A", "D"}});
  auto costs = manual_costs(net, {{"A", {1, 1, 1}}, {"D", {1, 1, 1}}});
  const LinkIndex d = net.require_index("D");
  const auto fastest = all_to_one(net, costs, d, CostSelector::time());

  SECTION("missing or mismatched fastest table") {
    ValueTable empty;
    REQUIRE_THROWS_AS(constrained_eco(net, costs, d, empty), ConfigError);
    const auto other = all_to_one(net, costs, net.require_index("A"), CostSelector::time());
    REQUIRE_THROWS_AS(constrained_eco(net, costs, d, other), ConfigError);
  }
  SECTION("label budget must be positive") {
    ConstrainedOptions options;
    options.max_labels = 0;
    REQUIRE_THROWS_AS(constrained_eco(net, costs, d, fastest, options), ConfigError);
  }
}

TEST_CASE("retained labels are mutually nondominated") {
  for (std::uint64_t seed = 300; seed < 330; ++seed) {
    const RandomGraph g = random_graph(seed);
    for (LinkIndex d = 0; d < std::min<LinkIndex>(g.net.size(), 4); ++d) {
      const auto fastest = all_to_one(g.net, g.costs, d, CostSelector::time());
      ConstrainedDiagnostics diag;
      constrained_eco(g.net, g.costs, d, fastest, {}, &diag);
      for (const auto& labels : diag.labels) {
        for (std::size_t a = 0; a < labels.size(); ++a)
          for (std::size_t b = 0; b < labels.size(); ++b) {
            if (a == b) continue;
            const bool dominates = labels[a].fuel_kg <= labels[b].fuel_kg &&
                                   labels[a].time_s <= labels[b].time_s &&
                                   (labels[a].fuel_kg < labels[b].fuel_kg ||
                                    labels[a].time_s < labels[b].time_s);
            REQUIRE_FALSE(dominates);
          }
      }
    }
  }
}

TEST_CASE("per-movement speed-change costing mode") {
  auto net = generate_grid_network(4, 4, 77);
  struct SpeedChangeModel : FuelModel {
    double predict(const MotionFeatures& f) const override {
      return 1e-4 * f.length_m / f.avg_speed_mps + 1e-3 * std::abs(f.speed_change_mps);
    }
    std::string name() const override { return "dv"; }
  } model;
  EdgeCostOptions options;
  // Spread of historical speeds so movements carry distinct speed changes.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> s(4.0, 12.0);
  for (const Link& l : net.links()) options.historical_speed_mps[l.id] = s(rng);
  const CostModel costs = edge_costs(net, model, options);
  REQUIRE_FALSE(costs.per_movement());

  EdgeCostOptions with_dv = options;
  with_dv.per_movement_speed_change = true;
  const CostModel mv_costs = edge_costs(net, model, with_dv);
  REQUIRE(mv_costs.per_movement());
  REQUIRE(mv_costs.movement_fuel_kg.size() == net.movement_count());

  // Movement fuel differs from the zero-speed-change link fuel whenever the
  // entering speed differs.
  bool any_difference = false;
  for (LinkIndex from = 0; from < net.size(); ++from)
    for (LinkIndex to : net.successors(from)) {
      const auto idx = net.movement_index(from, to);
      any_difference |= std::abs(mv_costs.movement_fuel_kg[*idx] -
                                 mv_costs.link_costs[to].fuel_kg) > 1e-12;
    }
  REQUIRE(any_difference);

  // Both modes produce valid routes with consistent totals.
  const LinkIndex d = 3;
  const auto table = all_to_one(net, mv_costs, d, CostSelector::fuel());
  for (LinkIndex o = 0; o < net.size(); ++o) {
    if (!table.reachable(o)) continue;
    const auto route = extract_route(net, mv_costs, table, o, Strategy::kEco);
    double fuel = 0;
    for (const auto& step : route.per_link) fuel += step.fuel_kg;
    REQUIRE(route.total_fuel_kg == Catch::Approx(fuel).margin(1e-9));
  }
}

TEST_CASE("monotone epsilon trades fuel for time") {
  auto net = generate_grid_network(7, 7, 11);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> fuel_pick(0.005, 0.05);
  std::uniform_real_distribution<double> time_pick(8.0, 40.0);
  CostModel costs;
  costs.link_costs.resize(net.size());
  costs.speed_imputed.assign(net.size(), false);
  for (auto& c : costs.link_costs) c = {fuel_pick(rng), time_pick(rng), 200.0};

  std::uniform_int_distribution<LinkIndex> pick(0, static_cast<LinkIndex>(net.size() - 1));
  const std::vector<double> epsilons = {0.0, 0.05, 0.2, 1.0};
  std::size_t ordered_fuel = 0, ordered_time = 0, pairs = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const LinkIndex d = pick(rng);
    const LinkIndex o = pick(rng);
    const auto fastest = all_to_one(net, costs, d, CostSelector::time());
    if (!fastest.reachable(o)) continue;
    std::vector<double> fuels, times;
    for (double eps : epsilons) {
      ConstrainedOptions options;
      options.epsilon = eps;
      const auto table = constrained_eco(net, costs, d, fastest, options);
      const auto route = route_from_table(net, costs, table, o);
      fuels.push_back(route.total_fuel_kg);
      times.push_back(route.total_time_s);
    }
    ++pairs;
    bool fuel_ok = true, time_ok = true;
    for (std::size_t i = 1; i < epsilons.size(); ++i) {
      fuel_ok &= fuels[i] <= fuels[i - 1] + 1e-12;
      time_ok &= times[i] >= times[i - 1] - 1e-12;
    }
    ordered_fuel += fuel_ok;
    ordered_time += time_ok;
  }
  REQUIRE(pairs >= 30);
  REQUIRE(ordered_fuel >= static_cast<std::size_t>(0.95 * pairs));
  REQUIRE(ordered_time >= static_cast<std::size_t>(0.95 * pairs));
}
