#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ecoroute/errors.hpp"
#include "ecoroute/ingest.hpp"
#include "ecoroute/network.hpp"

namespace ecoroute {

struct EndpointPoint {
  std::string trip_id;
  bool is_origin = true;
  double x_m = 0.0;
  double y_m = 0.0;
};

struct EndpointSet {
  std::vector<EndpointPoint> points;
};

/// OPTICS output entry in processing order.
struct ReachabilityEntry {
  std::size_t point = 0;
  double reachability_m = std::numeric_limits<double>::infinity();
  double core_distance_m = std::numeric_limits<double>::infinity();
};

using ReachabilityOrdering = std::vector<ReachabilityEntry>;

namespace detail {

inline double point_distance(const EndpointPoint& a, const EndpointPoint& b) {
  const double dx = a.x_m - b.x_m;
  const double dy = a.y_m - b.y_m;
  return std::hypot(dx, dy);
}

}  // namespace detail

/// OPTICS ordering. Core distance of p is the distance to its min_pts-th
/// neighbor counting p itself (infinite beyond eps_max); reachability of o
/// from p is max(core distance of p, d(p, o)). The next point processed is
/// always the unprocessed one with the smallest reachability, ties broken by
/// point index, so the ordering is input-order invariant.
inline ReachabilityOrdering optics_order(const EndpointSet& points, int min_pts, double eps_max) {
  if (min_pts < 2) throw ConfigError("optics_order: min_pts must be >= 2");
  if (!(eps_max > 0)) throw ConfigError("optics_order: eps_max must be > 0");
  const std::size_t n = points.points.size();
  ReachabilityOrdering ordering;
  if (n == 0) return ordering;
  for (const auto& p : points.points)
    if (!std::isfinite(p.x_m) || !std::isfinite(p.y_m))
      throw ValidationError("optics_order: non-finite coordinates");

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> core(n, inf);
  std::vector<std::vector<std::pair<double, std::size_t>>> neighbors(n);
  std::vector<double> dist_row(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& nb = neighbors[i];
    for (std::size_t j = 0; j < n; ++j) {
      const double d = detail::point_distance(points.points[i], points.points[j]);
      dist_row[j] = d;
      if (d <= eps_max) nb.emplace_back(d, j);
    }
    std::sort(nb.begin(), nb.end());
    if (nb.size() >= static_cast<std::size_t>(min_pts)) core[i] = nb[min_pts - 1].first;
  }

  std::vector<bool> processed(n, false);
  std::vector<double> reach(n, inf);
  ordering.reserve(n);
  for (std::size_t step = 0; step < n; ++step) {
    // Smallest (reachability, index) among unprocessed points.
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (processed[i]) continue;
      if (pick == n || reach[i] < reach[pick]) pick = i;
    }
    processed[pick] = true;
    ordering.push_back({pick, reach[pick], core[pick]});
    if (!std::isfinite(core[pick])) continue;
    for (const auto& [d, o] : neighbors[pick]) {
      if (processed[o]) continue;
      const double new_reach = std::max(core[pick], d);
      if (new_reach < reach[o]) reach[o] = new_reach;
    }
  }
  return ordering;
}

inline constexpr int kNoise = -1;

/// Threshold cut over the reachability plot: consecutive runs with
/// reachability below the threshold form clusters; a point at or above the
/// threshold starts a new cluster if its own core distance is below the
/// threshold, and is noise otherwise.
inline std::vector<int> extract_clusters(const ReachabilityOrdering& ordering,
                                         double reachability_threshold) {
  if (!(reachability_threshold > 0))
    throw ConfigError("extract_clusters: threshold must be > 0");
  std::vector<int> assignment(ordering.size(), kNoise);
  std::vector<int> by_point(ordering.size(), kNoise);
  int cluster = -1;
  bool open = false;
  for (std::size_t i = 0; i < ordering.size(); ++i) {
    const auto& e = ordering[i];
    if (e.reachability_m < reachability_threshold) {
      if (!open) {
        ++cluster;
        open = true;
      }
      assignment[i] = cluster;
    } else if (e.core_distance_m < reachability_threshold) {
      ++cluster;
      open = true;
      assignment[i] = cluster;
    } else {
      assignment[i] = kNoise;
      open = false;
    }
  }
  for (std::size_t i = 0; i < ordering.size(); ++i) by_point[ordering[i].point] = assignment[i];
  return by_point;
}

// ---------------------------------------------------------------------------
// OD pair identification.
// ---------------------------------------------------------------------------

struct OdPair {
  int origin_cluster = kNoise;
  int destination_cluster = kNoise;
  std::string origin_link;
  std::string dest_link;
  double weekly_frequency = 0.0;
  std::vector<std::string> trip_ids;
};

struct TripEndpoints {
  std::string trip_id;
  std::string first_link;
  std::string last_link;
  double origin_x = 0.0, origin_y = 0.0;
  double dest_x = 0.0, dest_y = 0.0;
};

/// Pulls trip endpoint coordinates from the first/last link midpoints. Trips
/// over links without coordinates are skipped with a count.
inline std::vector<TripEndpoints> trip_endpoints(const std::vector<Trip>& trips,
                                                 const RoadNetwork& net,
                                                 std::size_t* skipped = nullptr) {
  std::vector<TripEndpoints> out;
  std::size_t dropped = 0;
  for (const Trip& trip : trips) {
    if (trip.traversals.empty()) continue;
    const auto first = net.find_index(trip.traversals.front().link_id);
    const auto last = net.find_index(trip.traversals.back().link_id);
    if (!first || !last) {
      ++dropped;
      continue;
    }
    const Link& fl = net.link(*first);
    const Link& ll = net.link(*last);
    if (!fl.x_m || !fl.y_m || !ll.x_m || !ll.y_m) {
      ++dropped;
      continue;
    }
    out.push_back({trip.trip_id, fl.id, ll.id, *fl.x_m, *fl.y_m, *ll.x_m, *ll.y_m});
  }
  if (skipped) *skipped = dropped;
  return out;
}

struct OdClusterParams {
  int min_pts = 10;
  double eps_max_m = 300.0;
  double reachability_threshold_m = 150.0;
};

namespace detail {

/// Medoid = cluster member minimizing total distance to the others (smallest
/// index on ties).
inline std::size_t cluster_medoid(const std::vector<std::size_t>& members,
                                  const std::vector<EndpointPoint>& pts) {
  std::size_t best = members.front();
  double best_sum = std::numeric_limits<double>::infinity();
  for (std::size_t i : members) {
    double sum = 0.0;
    for (std::size_t j : members) sum += point_distance(pts[i], pts[j]);
    if (sum < best_sum) {
      best_sum = sum;
      best = i;
    }
  }
  return best;
}

inline std::string nearest_link_by_midpoint(const RoadNetwork& net, double x, double y) {
  std::string best;
  double best_d = std::numeric_limits<double>::infinity();
  for (const Link& l : net.links()) {
    if (!l.x_m || !l.y_m) continue;
    const double d = std::hypot(*l.x_m - x, *l.y_m - y);
    if (d < best_d || (d == best_d && l.id < best)) {
      best_d = d;
      best = l.id;
    }
  }
  return best;
}

}  // namespace detail

/// Clusters trip origins and destinations separately with OPTICS, groups
/// trips by (origin cluster, destination cluster), keeps pairs occurring at
/// least once per week over the study period, and snaps each cluster to the
/// link whose midpoint is closest to the cluster medoid.
inline std::vector<OdPair> identify_od_pairs(const std::vector<TripEndpoints>& trips,
                                             const RoadNetwork& net, int study_weeks,
                                             const OdClusterParams& params = {}) {
  if (study_weeks < 1) throw ConfigError("identify_od_pairs: study_weeks must be >= 1");
  EndpointSet origins, destinations;
  for (const auto& t : trips) {
    origins.points.push_back({t.trip_id, true, t.origin_x, t.origin_y});
    destinations.points.push_back({t.trip_id, false, t.dest_x, t.dest_y});
  }
  const auto origin_clusters =
      extract_clusters(optics_order(origins, params.min_pts, params.eps_max_m),
                       params.reachability_threshold_m);
  const auto dest_clusters =
      extract_clusters(optics_order(destinations, params.min_pts, params.eps_max_m),
                       params.reachability_threshold_m);

  std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < trips.size(); ++i) {
    if (origin_clusters[i] == kNoise || dest_clusters[i] == kNoise) continue;
    groups[{origin_clusters[i], dest_clusters[i]}].push_back(i);
  }

  std::vector<OdPair> pairs;
  for (const auto& [key, members] : groups) {
    if (members.size() < static_cast<std::size_t>(study_weeks)) continue;
    OdPair pair;
    pair.origin_cluster = key.first;
    pair.destination_cluster = key.second;
    pair.weekly_frequency =
        static_cast<double>(members.size()) / static_cast<double>(study_weeks);
    for (std::size_t i : members) pair.trip_ids.push_back(trips[i].trip_id);

    const std::size_t om = detail::cluster_medoid(members, origins.points);
    const std::size_t dm = detail::cluster_medoid(members, destinations.points);
    pair.origin_link =
        detail::nearest_link_by_midpoint(net, origins.points[om].x_m, origins.points[om].y_m);
    pair.dest_link = detail::nearest_link_by_midpoint(net, destinations.points[dm].x_m,
                                                      destinations.points[dm].y_m);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

inline void write_od_pairs_csv(const std::string& path, const std::vector<OdPair>& pairs) {
  CsvWriter w(path, {"origin_cluster", "destination_cluster", "origin_link", "dest_link",
                     "weekly_freq", "trip_count"});
  for (const OdPair& p : pairs)
    w.row({std::to_string(p.origin_cluster), std::to_string(p.destination_cluster), p.origin_link,
           p.dest_link, format_double(p.weekly_frequency), std::to_string(p.trip_ids.size())});
}

struct OdPairRow {
  std::string origin_link;
  std::string dest_link;
  double weight = 1.0;
};

/// Reads OD pairs back for routing; the CSV may be the full od_pairs.csv or
/// any file carrying at least origin_link and dest_link columns.
inline std::vector<OdPairRow> load_od_pairs_csv(const std::string& path) {
  CsvReader reader(path);
  // Locate columns by name so simpler origin/dest files also work.
  int origin_col = -1, dest_col = -1, weight_col = -1;
  const auto& cols = reader.columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] == "origin_link") origin_col = static_cast<int>(i);
    if (cols[i] == "dest_link") dest_col = static_cast<int>(i);
    if (cols[i] == "weekly_freq") weight_col = static_cast<int>(i);
  }
  if (origin_col < 0 || dest_col < 0)
    throw ParseError(path, 1, "need origin_link and dest_link columns");
  std::vector<OdPairRow> rows;
  std::vector<std::string> f;
  while (reader.next(f)) {
    OdPairRow row;
    row.origin_link = f[static_cast<std::size_t>(origin_col)];
    row.dest_link = f[static_cast<std::size_t>(dest_col)];
    if (weight_col >= 0) row.weight = reader.field_double(f, static_cast<std::size_t>(weight_col));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ecoroute
