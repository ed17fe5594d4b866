#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "ecoroute/errors.hpp"
#include "ecoroute/fuel.hpp"
#include "ecoroute/ingest.hpp"
#include "ecoroute/network.hpp"

namespace ecoroute {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct EdgeCost {
  double fuel_kg = 0.0;
  double time_s = 0.0;
  double distance_m = 0.0;

  EdgeCost& operator+=(const EdgeCost& o) {
    fuel_kg += o.fuel_kg;
    time_s += o.time_s;
    distance_m += o.distance_m;
    return *this;
  }
};

/// Nonnegative scalarization of an edge cost.
struct CostSelector {
  double fuel_weight = 0.0;
  double time_weight = 0.0;
  double distance_weight = 0.0;

  static CostSelector distance() { return {0.0, 0.0, 1.0}; }
  static CostSelector time() { return {0.0, 1.0, 0.0}; }
  static CostSelector fuel() { return {1.0, 0.0, 0.0}; }

  double operator()(const EdgeCost& c) const {
    return fuel_weight * c.fuel_kg + time_weight * c.time_s + distance_weight * c.distance_m;
  }
  void validate() const {
    if (fuel_weight < 0 || time_weight < 0 || distance_weight < 0)
      throw ConfigError("cost selector weights must be nonnegative");
    if (fuel_weight + time_weight + distance_weight <= 0)
      throw ConfigError("cost selector must weight at least one component");
  }
};

/// Per-link (and optionally per-movement) routing costs.
struct CostModel {
  std::vector<EdgeCost> link_costs;              // indexed by LinkIndex
  std::vector<double> movement_fuel_kg;          // optional, forward-CSR movement order
  std::vector<bool> speed_imputed;               // posted-limit fallback used

  bool per_movement() const { return !movement_fuel_kg.empty(); }

  /// Cost of entering link `to` (via forward movement index when available).
  EdgeCost entering(LinkIndex to, std::uint32_t movement_idx) const {
    EdgeCost c = link_costs[to];
    if (per_movement()) c.fuel_kg = movement_fuel_kg[movement_idx];
    return c;
  }
};

struct EdgeCostOptions {
  /// Map of estimated historical speeds; links absent here fall back to the
  /// posted speed limit.
  std::map<std::string, double> historical_speed_mps;
  /// When true, fuel is costed per movement with speed_change = successor
  /// link speed minus current link speed (default off: per-link expectation
  /// with speed_change = 0).
  bool per_movement_speed_change = false;
};

/// Builds routing costs per link: time = length / speed (historical when
/// known, posted limit otherwise), fuel from the model at that speed, and
/// distance = length.
inline CostModel edge_costs(const RoadNetwork& net, const FuelModel& model,
                            const EdgeCostOptions& options = {}) {
  CostModel costs;
  costs.link_costs.resize(net.size());
  costs.speed_imputed.assign(net.size(), false);
  std::vector<double> speeds(net.size());
  for (LinkIndex i = 0; i < net.size(); ++i) {
    const Link& link = net.link(i);
    auto it = options.historical_speed_mps.find(link.id);
    double speed;
    if (it != options.historical_speed_mps.end()) {
      speed = it->second;
    } else {
      speed = link.speed_limit_mps;
      costs.speed_imputed[i] = true;
    }
    if (!(speed > 0.0) || !std::isfinite(speed))
      throw ValidationError("edge_costs: nonpositive speed for link " + link.id);
    speeds[i] = speed;
  }
  parallel_for(net.size(), [&](std::size_t i) {
    const Link& link = net.link(static_cast<LinkIndex>(i));
    MotionFeatures f;
    f.avg_speed_mps = speeds[i];
    f.speed_change_mps = 0.0;
    f.grade_rad = link.grade_rad;
    f.length_m = link.length_m;
    f.speed_limit_mps = link.speed_limit_mps;
    EdgeCost c;
    c.time_s = link.length_m / speeds[i];
    c.fuel_kg = model.predict(f);
    c.distance_m = link.length_m;
    costs.link_costs[i] = c;
  });

  if (options.per_movement_speed_change) {
    costs.movement_fuel_kg.resize(net.movement_count());
    parallel_for(net.size(), [&](std::size_t from) {
      const auto succ = net.successors(static_cast<LinkIndex>(from));
      for (std::size_t j = 0; j < succ.size(); ++j) {
        const LinkIndex to = succ[j];
        const Link& link = net.link(to);
        MotionFeatures f;
        f.avg_speed_mps = speeds[to];
        f.speed_change_mps = speeds[to] - speeds[from];
        f.grade_rad = link.grade_rad;
        f.length_m = link.length_m;
        f.speed_limit_mps = link.speed_limit_mps;
        const auto idx = net.movement_index(static_cast<LinkIndex>(from), to);
        costs.movement_fuel_kg[*idx] = model.predict(f);
      }
    });
  }
  return costs;
}

// ---------------------------------------------------------------------------
// Value tables.
// ---------------------------------------------------------------------------

/// Optimal cost-to-destination for every link. The destination's own link
/// cost is excluded (its value is zero); entering a link x from anywhere
/// charges x's cost. Route totals re-include the origin link so that a
/// one-link route costs that link.
struct ValueTable {
  LinkIndex destination = kInvalidLink;
  std::vector<double> value;           // optimized scalar, +inf when unreachable
  std::vector<LinkIndex> successor;    // next link toward destination
  std::vector<EdgeCost> accumulated;   // costs along the chosen chain

  bool reachable(LinkIndex i) const { return std::isfinite(value[i]); }
};

/// Exact all-to-one value table by label setting (binary-heap Dijkstra) over
/// the reverse link graph. Equal-cost ties resolve toward the smaller
/// successor link id for determinism.
inline ValueTable all_to_one(const RoadNetwork& net, const CostModel& costs,
                             LinkIndex destination, const CostSelector& selector) {
  selector.validate();
  if (destination >= net.size()) throw NotFoundError("all_to_one: unknown destination link");
  ValueTable table;
  table.destination = destination;
  table.value.assign(net.size(), kInf);
  table.successor.assign(net.size(), kInvalidLink);
  table.accumulated.assign(net.size(), EdgeCost{});
  table.value[destination] = 0.0;

  using HeapItem = std::pair<double, LinkIndex>;
  std::priority_queue<HeapItem, std::vector<HeapItem>, std::greater<>> heap;
  heap.push({0.0, destination});
  std::vector<bool> settled(net.size(), false);

  while (!heap.empty()) {
    const auto [dist, x] = heap.top();
    heap.pop();
    if (settled[x]) continue;
    settled[x] = true;

    const auto preds = net.predecessors(x);
    const auto moves = net.predecessor_movements(x);
    for (std::size_t j = 0; j < preds.size(); ++j) {
      const LinkIndex p = preds[j];
      if (p == destination) continue;
      const EdgeCost step = costs.entering(x, moves[j]);
      const double cand = dist + selector(step);
      if (cand < table.value[p]) {
        table.value[p] = cand;
        table.successor[p] = x;
        table.accumulated[p] = table.accumulated[x];
        table.accumulated[p] += step;
        heap.push({cand, p});
      } else if (cand == table.value[p] && x < table.successor[p]) {
        table.successor[p] = x;
        table.accumulated[p] = table.accumulated[x];
        table.accumulated[p] += step;
      }
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Travel-time-constrained eco search.
// ---------------------------------------------------------------------------

/// Sigmoid weight on the time component. At accumulated time equal to the
/// budget the weight is exactly 0.5; sharpness scales the transition width
/// relative to the budget.
inline double time_weight(double accumulated_time_s, double budget_s, double sharpness) {
  const double denom = std::max(sharpness * budget_s, 1e-12);
  const double z = (accumulated_time_s - budget_s) / denom;
  if (z >= 40.0) return 1.0;
  if (z <= -40.0) return 0.0;
  return 1.0 / (1.0 + std::exp(-z));
}

struct ConstrainedOptions {
  double epsilon = 0.05;    // slack on the fastest-time budget
  double sharpness = 0.02;  // sigmoid width relative to the budget
  int max_labels = 8;       // Pareto labels kept per link
};

/// Final label sets per link, exposed for dominance-soundness checks.
struct ConstrainedDiagnostics {
  struct LabelView {
    double fuel_kg;
    double time_s;
    double blended;
  };
  std::vector<std::vector<LabelView>> labels;  // indexed by LinkIndex
};

/// Bi-criteria label-correcting search. Each label carries accumulated
/// (fuel F, time T) to the destination plus the blended value G accumulated
/// with the sigmoid time weight; extending a label across a movement adds the
/// entered link's cost, weighted against the budget (1+epsilon)*t* at the
/// link the new label lands on. Labels are pruned by Pareto dominance on
/// (F, T) with at most max_labels kept per link (smallest blended value
/// preferred). The returned table reports, per link, the label minimizing the
/// blended value.
inline ValueTable constrained_eco(const RoadNetwork& net, const CostModel& costs,
                                  LinkIndex destination, const ValueTable& fastest_time,
                                  const ConstrainedOptions& options = {},
                                  ConstrainedDiagnostics* diagnostics = nullptr) {
  if (destination >= net.size()) throw NotFoundError("constrained_eco: unknown destination");
  if (options.max_labels < 1) throw ConfigError("constrained_eco: max_labels must be >= 1");
  if (options.epsilon < 0) throw ConfigError("constrained_eco: epsilon must be >= 0");
  if (!(options.sharpness > 0)) throw ConfigError("constrained_eco: sharpness must be > 0");
  if (fastest_time.destination != destination || fastest_time.value.size() != net.size())
    throw ConfigError("constrained_eco: fastest-time table missing or for another destination");

  struct Label {
    double fuel;
    double time;
    double blended;
    LinkIndex link;
    std::uint32_t succ_label;  // index into the arena, kNoLabel at destination
    bool dead;
  };
  constexpr std::uint32_t kNoLabel = static_cast<std::uint32_t>(-1);

  std::vector<Label> arena;
  std::vector<std::vector<std::uint32_t>> frontier(net.size());
  std::deque<std::uint32_t> queue;

  arena.push_back({0.0, 0.0, 0.0, destination, kNoLabel, false});
  frontier[destination].push_back(0);
  queue.push_back(0);

  auto try_insert = [&](LinkIndex at, double fuel, double time, double blended,
                        std::uint32_t succ) -> std::optional<std::uint32_t> {
    auto& labels = frontier[at];
    for (std::uint32_t id : labels) {
      const Label& l = arena[id];
      if (l.dead) continue;
      if (l.fuel <= fuel && l.time <= time && (l.fuel < fuel || l.time < time))
        return std::nullopt;  // dominated
      if (l.fuel == fuel && l.time == time)
        return l.blended <= blended ? std::nullopt : std::make_optional(id);
    }
    return std::make_optional(kNoLabel);
  };

  while (!queue.empty()) {
    const std::uint32_t cur_id = queue.front();
    queue.pop_front();
    const Label cur = arena[cur_id];
    if (cur.dead) continue;
    // Extending adds the current label's link cost and lands at a predecessor.
    const LinkIndex x = cur.link;
    const auto preds = net.predecessors(x);
    const auto moves = net.predecessor_movements(x);
    for (std::size_t j = 0; j < preds.size(); ++j) {
      const LinkIndex p = preds[j];
      if (p == destination) continue;
      if (!std::isfinite(fastest_time.value[p])) continue;
      const EdgeCost step = costs.entering(x, moves[j]);
      const double new_time = cur.time + step.time_s;
      const double new_fuel = cur.fuel + step.fuel_kg;
      const double budget = (1.0 + options.epsilon) * fastest_time.value[p];
      const double wt = time_weight(new_time, budget, options.sharpness);
      const double new_blended = cur.blended + (1.0 - wt) * step.fuel_kg + wt * step.time_s;

      const auto slot = try_insert(p, new_fuel, new_time, new_blended, cur_id);
      if (!slot) continue;
      if (*slot != kNoLabel) {
        // Equal (F, T) with a better blended value: replace in place.
        arena[*slot].dead = true;
      }
      const std::uint32_t new_id = static_cast<std::uint32_t>(arena.size());
      arena.push_back({new_fuel, new_time, new_blended, p, cur_id, false});
      auto& labels = frontier[p];
      // Remove labels the new one dominates.
      for (std::uint32_t id : labels) {
        Label& l = arena[id];
        if (l.dead) continue;
        if (new_fuel <= l.fuel && new_time <= l.time && (new_fuel < l.fuel || new_time < l.time))
          l.dead = true;
      }
      labels.erase(std::remove_if(labels.begin(), labels.end(),
                                  [&](std::uint32_t id) { return arena[id].dead; }),
                   labels.end());
      labels.push_back(new_id);
      if (static_cast<int>(labels.size()) > options.max_labels) {
        // Keep the max_labels best by blended value (then time, then fuel).
        std::sort(labels.begin(), labels.end(), [&](std::uint32_t a, std::uint32_t b) {
          const Label& la = arena[a];
          const Label& lb = arena[b];
          if (la.blended != lb.blended) return la.blended < lb.blended;
          if (la.time != lb.time) return la.time < lb.time;
          if (la.fuel != lb.fuel) return la.fuel < lb.fuel;
          return a < b;
        });
        for (std::size_t i = options.max_labels; i < labels.size(); ++i)
          arena[labels[i]].dead = true;
        labels.resize(options.max_labels);
      }
      if (!arena[new_id].dead) queue.push_back(new_id);
    }
  }

  if (diagnostics) diagnostics->labels.assign(net.size(), {});
  ValueTable table;
  table.destination = destination;
  table.value.assign(net.size(), kInf);
  table.successor.assign(net.size(), kInvalidLink);
  table.accumulated.assign(net.size(), EdgeCost{});
  for (LinkIndex i = 0; i < net.size(); ++i) {
    const Label* best = nullptr;
    for (std::uint32_t id : frontier[i]) {
      const Label& l = arena[id];
      if (l.dead) continue;
      if (diagnostics) diagnostics->labels[i].push_back({l.fuel, l.time, l.blended});
      if (!best || l.blended < best->blended ||
          (l.blended == best->blended && l.time < best->time))
        best = &l;
    }
    if (!best) continue;
    table.value[i] = best->blended;
    table.accumulated[i].fuel_kg = best->fuel;
    table.accumulated[i].time_s = best->time;
    table.successor[i] =
        best->succ_label == static_cast<std::uint32_t>(-1) ? kInvalidLink
                                                           : arena[best->succ_label].link;
  }
  return table;
}

// ---------------------------------------------------------------------------
// Route extraction.
// ---------------------------------------------------------------------------

enum class Strategy { kShortest, kFastest, kEco, kConstrainedEco };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kShortest: return "shortest";
    case Strategy::kFastest: return "fastest";
    case Strategy::kEco: return "eco";
    case Strategy::kConstrainedEco: return "constrained_eco";
  }
  return "?";
}

inline std::optional<Strategy> strategy_from_name(const std::string& name) {
  if (name == "shortest") return Strategy::kShortest;
  if (name == "fastest") return Strategy::kFastest;
  if (name == "eco") return Strategy::kEco;
  if (name == "constrained_eco") return Strategy::kConstrainedEco;
  return std::nullopt;
}

struct RouteQuery {
  std::string origin;
  std::string destination;
  Strategy strategy = Strategy::kEco;
  double epsilon = 0.05;
  double sigmoid_sharpness = 0.02;
};

struct RouteResult {
  bool reached = false;
  Strategy strategy = Strategy::kEco;
  std::vector<std::string> links;
  std::vector<EdgeCost> per_link;
  double total_fuel_kg = 0.0;
  double total_time_s = 0.0;
  double total_distance_m = 0.0;
};

/// Extracts the route from a value table by walking successor pointers from
/// the origin. Totals include every link in the sequence, origin included, so
/// origin == destination yields that single link's costs.
inline RouteResult extract_route(const RoadNetwork& net, const CostModel& costs,
                                 const ValueTable& table, LinkIndex origin, Strategy strategy) {
  RouteResult r;
  r.strategy = strategy;
  if (!table.reachable(origin)) return r;
  r.reached = true;
  LinkIndex at = origin;
  LinkIndex prev = kInvalidLink;
  for (std::size_t guard = 0; guard <= net.size(); ++guard) {
    EdgeCost step = costs.link_costs[at];
    if (costs.per_movement() && prev != kInvalidLink) {
      const auto idx = net.movement_index(prev, at);
      if (idx) step.fuel_kg = costs.movement_fuel_kg[*idx];
    }
    r.links.push_back(net.link(at).id);
    r.per_link.push_back(step);
    r.total_fuel_kg += step.fuel_kg;
    r.total_time_s += step.time_s;
    r.total_distance_m += step.distance_m;
    if (at == table.destination) return r;
    prev = at;
    at = table.successor[at];
  }
  throw NumericalError("extract_route: successor chain does not terminate");
}

/// Precomputed tables for one destination.
struct DestinationTables {
  ValueTable shortest;
  ValueTable fastest;
  ValueTable eco;
  std::optional<ValueTable> constrained;
};

inline DestinationTables build_tables(const RoadNetwork& net, const CostModel& costs,
                                      LinkIndex destination, bool with_constrained,
                                      const ConstrainedOptions& options = {}) {
  DestinationTables t;
  t.shortest = all_to_one(net, costs, destination, CostSelector::distance());
  t.fastest = all_to_one(net, costs, destination, CostSelector::time());
  t.eco = all_to_one(net, costs, destination, CostSelector::fuel());
  if (with_constrained)
    t.constrained = constrained_eco(net, costs, destination, t.fastest, options);
  return t;
}

inline RouteResult route(const RoadNetwork& net, const CostModel& costs,
                         const DestinationTables& tables, const RouteQuery& query) {
  const LinkIndex origin = net.require_index(query.origin);
  switch (query.strategy) {
    case Strategy::kShortest:
      return extract_route(net, costs, tables.shortest, origin, query.strategy);
    case Strategy::kFastest:
      return extract_route(net, costs, tables.fastest, origin, query.strategy);
    case Strategy::kEco:
      return extract_route(net, costs, tables.eco, origin, query.strategy);
    case Strategy::kConstrainedEco:
      if (!tables.constrained)
        throw ConfigError("route: constrained table not built for this destination");
      return extract_route(net, costs, *tables.constrained, origin, query.strategy);
  }
  throw ConfigError("route: unknown strategy");
}

}  // namespace ecoroute
