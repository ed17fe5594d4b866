#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ecoroute/fuel.hpp"
#include "ecoroute/ingest.hpp"
#include "ecoroute/network.hpp"
#include "ecoroute/util.hpp"

namespace ecoroute {

/// 1 Hz speed trace, sample i covering [i, i+1) seconds.
struct SpeedProfile {
  std::vector<double> speeds_mps;

  double duration_s() const { return static_cast<double>(speeds_mps.size()); }
  double mean_speed() const {
    if (speeds_mps.empty()) return 0.0;
    double sum = 0.0;
    for (double v : speeds_mps) sum += v;
    return sum / static_cast<double>(speeds_mps.size());
  }
};

/// Willans-line fuel over a road-load power trace. Tractive power per step is
///   P = (m*a + m*g*sin(grade) + 0.5*rho*CdA*v^2 + Crr*m*g*cos(grade)) * v
/// and the rate is idle + slope * max(P, 0); braking power is clipped, never
/// refunded, so fuel is bounded below by idle consumption.
inline double fuel_oracle(const SpeedProfile& profile, const Link& link,
                          const VehicleParams& params = VehicleParams{}) {
  if (profile.speeds_mps.empty()) throw ValidationError("fuel_oracle: empty profile");
  params.validate();
  const double sin_g = std::sin(link.grade_rad);
  const double cos_g = std::cos(link.grade_rad);
  const std::size_t n = profile.speeds_mps.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = profile.speeds_mps[i];
    const double accel = i + 1 < n ? profile.speeds_mps[i + 1] - v : 0.0;
    const double force = params.mass_kg * accel + params.mass_kg * kStandardGravity * sin_g +
                         0.5 * params.air_density_kg_m3 * params.drag_area_m2 * v * v +
                         params.rolling_coeff * params.mass_kg * kStandardGravity * cos_g;
    const double power_w = force * v;
    total += params.idle_fuel_rate_kg_s +
             params.willans_slope_kg_per_mj * std::max(power_w, 0.0) * 1e-6;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Grid network generation.
// ---------------------------------------------------------------------------

/// Posted limits drawn for generated links: 25..65 mph in 10 mph steps.
inline const std::vector<double>& grid_speed_limits() {
  static const std::vector<double> limits = {11.18, 15.65, 20.12, 24.59, 29.06};
  return limits;
}

/// rows x cols rectangular grid. Every undirected street segment becomes two
/// directed links with mutual reverse_of and opposite grades; all legal
/// non-U-turn movements at shared intersections are present. Deterministic in
/// (rows, cols, seed).
inline RoadNetwork generate_grid_network(int rows, int cols, std::uint64_t seed) {
  if (rows < 2 || cols < 2) throw ConfigError("grid requires rows, cols >= 2");
  std::mt19937_64 rng(mix_seed(seed, 0x67726964));  // "grid"
  std::uniform_real_distribution<double> length_jitter(0.0, 1.0);
  std::uniform_int_distribution<int> limit_pick(0, static_cast<int>(grid_speed_limits().size()) - 1);
  std::normal_distribution<double> grade_draw(0.0, 0.02);
  const double spacing = 200.0;

  struct Segment {
    int node_a, node_b;
  };
  std::vector<Segment> segments;
  auto node = [cols](int r, int c) { return r * cols + c; };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (c + 1 < cols) segments.push_back({node(r, c), node(r, c + 1)});
      if (r + 1 < rows) segments.push_back({node(r, c), node(r + 1, c)});
    }

  auto link_name = [](std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "L%06zu", i);
    return std::string(buf);
  };

  std::vector<Link> links;
  links.reserve(segments.size() * 2);
  // Directed link i*2 runs a->b, i*2+1 runs b->a.
  std::vector<int> head_node(segments.size() * 2), tail_node(segments.size() * 2);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const double length = spacing * (1.0 + 0.15 * length_jitter(rng));
    const double limit = grid_speed_limits()[static_cast<std::size_t>(limit_pick(rng))];
    const double grade = std::clamp(grade_draw(rng), -0.08, 0.08);
    const int ra = segments[i].node_a / cols, ca = segments[i].node_a % cols;
    const int rb = segments[i].node_b / cols, cb = segments[i].node_b % cols;
    const double mid_x = spacing * 0.5 * (ca + cb);
    const double mid_y = spacing * 0.5 * (ra + rb);

    Link fwd, bwd;
    fwd.id = link_name(2 * i);
    bwd.id = link_name(2 * i + 1);
    fwd.length_m = bwd.length_m = length;
    fwd.speed_limit_mps = bwd.speed_limit_mps = limit;
    fwd.grade_rad = grade;
    bwd.grade_rad = -grade;
    fwd.reverse_of = bwd.id;
    bwd.reverse_of = fwd.id;
    fwd.x_m = bwd.x_m = mid_x;
    fwd.y_m = bwd.y_m = mid_y;
    links.push_back(fwd);
    links.push_back(bwd);
    tail_node[2 * i] = segments[i].node_a;
    head_node[2 * i] = segments[i].node_b;
    tail_node[2 * i + 1] = segments[i].node_b;
    head_node[2 * i + 1] = segments[i].node_a;
  }

  // Movements: any in-link/out-link pair at a shared node except U-turns.
  std::vector<std::vector<std::size_t>> out_links_at(static_cast<std::size_t>(rows * cols));
  for (std::size_t l = 0; l < links.size(); ++l)
    out_links_at[static_cast<std::size_t>(tail_node[l])].push_back(l);
  std::vector<Movement> movements;
  for (std::size_t l = 0; l < links.size(); ++l) {
    const std::size_t reverse = l ^ 1ULL;
    for (std::size_t out : out_links_at[static_cast<std::size_t>(head_node[l])]) {
      if (out == reverse) continue;
      movements.push_back({links[l].id, links[out].id});
    }
  }
  return RoadNetwork::build(std::move(links), movements);
}

// ---------------------------------------------------------------------------
// Traversal simulation.
// ---------------------------------------------------------------------------

/// Synthesizes a 1 Hz pass over one link. congestion in [0,1] scales the mean
/// down from near free flow (~0.93 * limit) to ~0.3 * limit and widens the
/// stop-and-go oscillation. Deterministic in (link, congestion, seed).
inline std::pair<SpeedProfile, LinkTraversal> simulate_traversal(const Link& link,
                                                                 double congestion,
                                                                 std::uint64_t seed) {
  congestion = std::clamp(congestion, 0.0, 1.0);
  std::mt19937_64 rng(seed);
  const double limit = link.speed_limit_mps;
  const double target = limit * (0.93 - 0.63 * congestion);
  const double amplitude = limit * (0.05 + 0.45 * congestion);
  // Period short enough that one traversal spans multiple stop-and-go cycles
  // even on the shortest links; otherwise a pass can ride a single favorable
  // phase and beat the congested mean.
  std::uniform_real_distribution<double> period_draw(8.0, 18.0);
  std::uniform_real_distribution<double> phase_draw(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 0.01 * limit * (1.0 + congestion));
  const double period = period_draw(rng);
  const double phase = phase_draw(rng);

  SpeedProfile profile;
  double distance = 0.0;
  double crossing_time = 0.0;
  const std::size_t max_steps = 4 + static_cast<std::size_t>(20.0 * link.length_m / target);
  for (std::size_t i = 0; i < max_steps; ++i) {
    const double v = std::max(
        0.0, target + amplitude * std::sin(2.0 * std::numbers::pi * i / period + phase) +
                 noise(rng));
    profile.speeds_mps.push_back(v);
    if (distance + v >= link.length_m && v > 0.0) {
      crossing_time = static_cast<double>(i) + (link.length_m - distance) / v;
      distance = link.length_m;
      break;
    }
    distance += v;
  }
  if (distance < link.length_m) {
    // Pathological stall; finish the link at the target pace.
    crossing_time = profile.duration_s() + (link.length_m - distance) / target;
    profile.speeds_mps.push_back(target);
  }
  if (profile.speeds_mps.size() < 2) profile.speeds_mps.push_back(profile.speeds_mps.back());
  if (crossing_time <= 0.0) crossing_time = profile.duration_s();

  LinkTraversal t;
  t.link_id = link.id;
  t.entry_time_s = 0.0;
  t.exit_time_s = crossing_time;
  t.entry_speed_mps = profile.speeds_mps.front();
  t.exit_speed_mps = profile.speeds_mps.back();
  t.avg_speed_mps = link.length_m / crossing_time;
  t.fuel_kg = fuel_oracle(profile, link);
  return {std::move(profile), t};
}

// ---------------------------------------------------------------------------
// Trip corpus generation: seeded random walks over the network with per-trip
// congestion. Lower speed-limit categories receive a wider congestion spread
// so low-speed links carry the most stop-and-go variation.
// ---------------------------------------------------------------------------

struct CorpusOptions {
  std::size_t trips = 500;
  int min_walk_links = 30;
  int max_walk_links = 70;
  double congestion_min = 0.0;
  double congestion_max = 0.85;
  // Extra per-link congestion sigma, interpolated from the highest speed
  // limit (base) to the lowest (base + low_limit_boost).
  double congestion_jitter_base = 0.08;
  double congestion_jitter_low_limit_boost = 0.25;
};

inline std::vector<Trip> make_trip_corpus(const RoadNetwork& net, const CorpusOptions& options,
                                          std::uint64_t seed) {
  if (net.size() == 0) throw ValidationError("make_trip_corpus: empty network");
  std::vector<double> categories = net.speed_limit_categories();
  auto jitter_for = [&](double limit) {
    if (categories.size() < 2) return options.congestion_jitter_base;
    const double lo = categories.front(), hi = categories.back();
    const double t = (hi - limit) / (hi - lo);  // 1 at the lowest limit
    return options.congestion_jitter_base + options.congestion_jitter_low_limit_boost * t;
  };

  std::vector<Trip> trips;
  trips.reserve(options.trips);
  for (std::size_t ti = 0; ti < options.trips; ++ti) {
    std::mt19937_64 rng(mix_seed(seed, 0x74726970, ti));  // "trip"
    std::uniform_int_distribution<std::uint32_t> start_pick(0,
                                                            static_cast<std::uint32_t>(net.size() - 1));
    std::uniform_int_distribution<int> len_pick(options.min_walk_links, options.max_walk_links);
    std::uniform_real_distribution<double> congestion_pick(options.congestion_min,
                                                           options.congestion_max);
    std::normal_distribution<double> jitter(0.0, 1.0);

    Trip trip;
    char name[32];
    std::snprintf(name, sizeof(name), "T%06zu", ti);
    trip.trip_id = name;
    const double base_congestion = congestion_pick(rng);
    LinkIndex current = start_pick(rng);
    const int walk_len = len_pick(rng);
    double clock = 0.0;

    for (int step = 0; step < walk_len; ++step) {
      const Link& link = net.link(current);
      const double c =
          std::clamp(base_congestion + jitter_for(link.speed_limit_mps) * jitter(rng), 0.0, 1.0);
      auto [profile, traversal] =
          simulate_traversal(link, c, mix_seed(seed, ti * 131 + 7, static_cast<std::uint64_t>(step)));
      traversal.trip_id = trip.trip_id;
      traversal.seq = step;
      traversal.entry_time_s += clock;
      traversal.exit_time_s += clock;
      clock = traversal.exit_time_s;
      trip.total_distance_m += link.length_m;
      trip.traversals.push_back(std::move(traversal));

      const auto succ = net.successors(current);
      if (succ.empty()) break;
      std::uniform_int_distribution<std::size_t> next_pick(0, succ.size() - 1);
      current = succ[next_pick(rng)];
    }
    trip.total_duration_s = clock;
    trips.push_back(std::move(trip));
  }
  return trips;
}

inline void write_traversals_csv(const std::string& path, const std::vector<Trip>& trips) {
  CsvWriter w(path, {"trip_id", "seq", "link_id", "entry_time_s", "exit_time_s",
                     "entry_speed_mps", "exit_speed_mps", "avg_speed_mps", "fuel_kg"});
  for (const Trip& trip : trips)
    for (const LinkTraversal& t : trip.traversals)
      w.row({t.trip_id, std::to_string(t.seq), t.link_id, format_double(t.entry_time_s),
             format_double(t.exit_time_s), format_double(t.entry_speed_mps),
             format_double(t.exit_speed_mps), format_double(t.avg_speed_mps),
             t.fuel_kg ? format_double(*t.fuel_kg) : ""});
}

}  // namespace ecoroute
