#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecoroute/csv.hpp"
#include "ecoroute/errors.hpp"
#include "ecoroute/fuel.hpp"
#include "ecoroute/network.hpp"
#include "ecoroute/vbgmm.hpp"

namespace ecoroute {

/// One vehicle's passage over one link.
struct LinkTraversal {
  std::string trip_id;
  long long seq = 0;
  std::string link_id;
  double entry_time_s = 0.0;
  double exit_time_s = 0.0;
  double entry_speed_mps = 0.0;
  double exit_speed_mps = 0.0;
  double avg_speed_mps = 0.0;
  std::optional<double> fuel_kg;
};

struct Trip {
  std::string trip_id;
  std::vector<LinkTraversal> traversals;
  double total_duration_s = 0.0;
  double total_distance_m = 0.0;
};

struct TripFilters {
  double min_duration_s = 600.0;   // "longer than 10 minutes"
  double min_distance_m = 300.0;
};

struct IngestReport {
  std::size_t rows = 0;
  std::size_t trips_seen = 0;
  std::size_t trips_kept = 0;
  std::size_t dropped_short_duration = 0;
  std::size_t dropped_short_distance = 0;
  std::size_t rejected_nonmonotone_seq = 0;
  std::size_t rejected_bad_times = 0;
  std::size_t rejected_negative_speed = 0;
  std::size_t rejected_unknown_link = 0;
  std::size_t rejected_disconnected = 0;
  std::vector<std::string> rejection_reasons;  // "<trip_id>: <reason>"
};

struct LoadTripsResult {
  std::vector<Trip> trips;
  IngestReport report;
};

/// Parses traversals.csv, assembles trips in first-encounter order, validates
/// per-trip invariants, and applies the duration/distance filters. When a
/// network is supplied, link ids must exist, consecutive links must be joined
/// by a declared movement, and distances come from link lengths; otherwise
/// distance falls back to avg_speed * dwell.
inline LoadTripsResult load_trips(const std::string& path, const TripFilters& filters = {},
                                  const RoadNetwork* net = nullptr) {
  CsvReader reader(path, {"trip_id", "seq", "link_id", "entry_time_s", "exit_time_s",
                          "entry_speed_mps", "exit_speed_mps", "avg_speed_mps", "fuel_kg"},
                   /*min_required=*/7);
  const bool has_avg = reader.columns().size() >= 8;
  const bool has_fuel = reader.columns().size() >= 9;

  LoadTripsResult result;
  std::unordered_map<std::string, std::size_t> trip_slot;
  std::vector<Trip> raw;
  std::vector<std::string> f;
  while (reader.next(f)) {
    ++result.report.rows;
    LinkTraversal t;
    t.trip_id = f[0];
    t.seq = reader.field_long(f, 1);
    t.link_id = f[2];
    t.entry_time_s = reader.field_double(f, 3);
    t.exit_time_s = reader.field_double(f, 4);
    t.entry_speed_mps = reader.field_double(f, 5);
    t.exit_speed_mps = reader.field_double(f, 6);
    if (has_avg && !f[7].empty()) {
      t.avg_speed_mps = reader.field_double(f, 7);
    } else if (t.exit_time_s > t.entry_time_s) {
      t.avg_speed_mps = 0.0;  // filled from link length below when possible
    }
    if (has_fuel && !f[8].empty()) t.fuel_kg = reader.field_double(f, 8);

    auto [it, inserted] = trip_slot.emplace(t.trip_id, raw.size());
    if (inserted) {
      raw.emplace_back();
      raw.back().trip_id = t.trip_id;
    }
    raw[it->second].traversals.push_back(std::move(t));
  }
  result.report.trips_seen = raw.size();

  for (Trip& trip : raw) {
    bool ok = true;
    std::string reason;
    long long prev_seq = 0;
    for (std::size_t i = 0; i < trip.traversals.size() && ok; ++i) {
      LinkTraversal& t = trip.traversals[i];
      if (i > 0 && t.seq <= prev_seq) {
        ok = false;
        reason = "non-monotone seq";
        ++result.report.rejected_nonmonotone_seq;
        break;
      }
      prev_seq = t.seq;
      if (!(t.exit_time_s > t.entry_time_s)) {
        ok = false;
        reason = "exit time not after entry time";
        ++result.report.rejected_bad_times;
        break;
      }
      if (t.entry_speed_mps < 0 || t.exit_speed_mps < 0 || t.avg_speed_mps < 0 ||
          (t.fuel_kg && *t.fuel_kg < 0)) {
        ok = false;
        reason = "negative speed or fuel";
        ++result.report.rejected_negative_speed;
        break;
      }
      if (net) {
        const auto idx = net->find_index(t.link_id);
        if (!idx) {
          ok = false;
          reason = "unknown link " + t.link_id;
          ++result.report.rejected_unknown_link;
          break;
        }
        if (t.avg_speed_mps == 0.0)
          t.avg_speed_mps = net->link(*idx).length_m / (t.exit_time_s - t.entry_time_s);
        if (i > 0) {
          const auto prev_idx = net->find_index(trip.traversals[i - 1].link_id);
          if (!net->has_movement(*prev_idx, *idx)) {
            ok = false;
            reason = "links " + trip.traversals[i - 1].link_id + " -> " + t.link_id +
                     " not joined by a movement";
            ++result.report.rejected_disconnected;
            break;
          }
        }
      }
    }
    if (!ok) {
      result.report.rejection_reasons.push_back(trip.trip_id + ": " + reason);
      continue;
    }
    if (trip.traversals.empty()) continue;

    trip.total_duration_s =
        trip.traversals.back().exit_time_s - trip.traversals.front().entry_time_s;
    trip.total_distance_m = 0.0;
    for (const LinkTraversal& t : trip.traversals) {
      if (net) {
        trip.total_distance_m += net->link(*net->find_index(t.link_id)).length_m;
      } else {
        trip.total_distance_m += t.avg_speed_mps * (t.exit_time_s - t.entry_time_s);
      }
    }
    if (trip.total_duration_s <= filters.min_duration_s) {
      ++result.report.dropped_short_duration;
      continue;
    }
    if (trip.total_distance_m <= filters.min_distance_m) {
      ++result.report.dropped_short_distance;
      continue;
    }
    result.trips.push_back(std::move(trip));
  }
  result.report.trips_kept = result.trips.size();
  return result;
}

/// Motion features for one traversal of a known link. avg speed comes from
/// the record when present, else length over dwell time.
inline MotionFeatures compute_features(const LinkTraversal& traversal, const Link& link) {
  if (traversal.link_id != link.id)
    throw ValidationError("compute_features: traversal is for link " + traversal.link_id +
                          ", not " + link.id);
  MotionFeatures f;
  f.speed_change_mps = traversal.exit_speed_mps - traversal.entry_speed_mps;
  f.grade_rad = link.grade_rad;
  f.length_m = link.length_m;
  f.speed_limit_mps = link.speed_limit_mps;
  if (traversal.avg_speed_mps > 0.0) {
    f.avg_speed_mps = traversal.avg_speed_mps;
  } else {
    const double dwell = traversal.exit_time_s - traversal.entry_time_s;
    if (dwell <= 0.0)
      throw ValidationError("compute_features: zero dwell time and no recorded average speed");
    f.avg_speed_mps = link.length_m / dwell;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Per-link historical speed: a 1-D mixture over observed average speeds whose
// mixing coefficients are re-weighted against a sampled time window.
// ---------------------------------------------------------------------------

struct LinkSpeedModel {
  std::string link_id;
  GaussianMixture mixture;  // 1-D

  double prior_mean() const {
    double m = 0.0;
    for (int k = 0; k < mixture.component_count(); ++k)
      m += mixture.weights[k] * mixture.means[k][0];
    return m;
  }
};

inline constexpr double kSpeedVarianceFloor = 1e-4;  // (m/s)^2

/// Fits the per-link speed mixture. Below 20 samples (or for degenerate
/// all-identical samples) falls back to a single Gaussian with a floored
/// variance.
inline LinkSpeedModel fit_link_speed_model(const std::string& link_id,
                                           const std::vector<double>& samples_mps,
                                           int max_components = 5, std::uint64_t seed = 0) {
  if (samples_mps.empty()) throw InsufficientDataError("fit_link_speed_model: no samples");
  LinkSpeedModel model;
  model.link_id = link_id;
  model.mixture.dim = 1;

  const double n = static_cast<double>(samples_mps.size());
  double mean = 0.0;
  for (double v : samples_mps) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : samples_mps) var += (v - mean) * (v - mean);
  var /= n;

  if (samples_mps.size() < 20 || var < kSpeedVarianceFloor) {
    model.mixture.weights = {1.0};
    model.mixture.means = {VectorXd::Constant(1, mean)};
    model.mixture.covariances = {MatrixXd::Constant(1, 1, std::max(var, kSpeedVarianceFloor))};
    return model;
  }

  MatrixXd data(samples_mps.size(), 1);
  for (std::size_t i = 0; i < samples_mps.size(); ++i) data(static_cast<int>(i), 0) = samples_mps[i];
  VbHyperparams hyper;
  hyper.k_max = max_components;
  hyper.m0 = VectorXd::Constant(1, mean);
  hyper.w0 = MatrixXd::Constant(1, 1, 1.0 / std::max(var, kSpeedVarianceFloor));
  model.mixture = expected_mixture(fit(data, hyper, 1e-6, 500, seed), 0.01);
  for (auto& cov : model.mixture.covariances)
    cov(0, 0) = std::max(cov(0, 0), kSpeedVarianceFloor);
  return model;
}

/// Expected speed under mixing coefficients re-weighted by the window
/// samples: c_k ~ sum_n w_k(v_n) with w_k the posterior component
/// probability, then sum_k c_k mu_k. Empty window returns the prior mean.
inline double estimate_window_speed(const LinkSpeedModel& model,
                                    const std::vector<double>& window_samples_mps) {
  const int k_count = model.mixture.component_count();
  if (k_count == 0) throw ValidationError("estimate_window_speed: unfitted model");
  if (window_samples_mps.empty()) return model.prior_mean();

  std::vector<double> log_weight(k_count), log_norm(k_count);
  for (int k = 0; k < k_count; ++k) {
    log_weight[k] = std::log(model.mixture.weights[k]);
    log_norm[k] = -0.5 * std::log(2.0 * std::numbers::pi * model.mixture.covariances[k](0, 0));
  }
  std::vector<double> coeff(k_count, 0.0);
  std::vector<double> logp(k_count);
  for (double v : window_samples_mps) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < k_count; ++k) {
      const double d = v - model.mixture.means[k][0];
      logp[k] = log_weight[k] + log_norm[k] - 0.5 * d * d / model.mixture.covariances[k](0, 0);
      mx = std::max(mx, logp[k]);
    }
    double denom = 0.0;
    for (int k = 0; k < k_count; ++k) denom += std::exp(logp[k] - mx);
    for (int k = 0; k < k_count; ++k) coeff[k] += std::exp(logp[k] - mx) / denom;
  }
  double total = 0.0;
  for (double c : coeff) total += c;
  double speed = 0.0;
  for (int k = 0; k < k_count; ++k) speed += (coeff[k] / total) * model.mixture.means[k][0];
  return speed;
}

/// Groups observed average speeds by link id.
inline std::map<std::string, std::vector<double>> speed_samples_by_link(
    const std::vector<Trip>& trips) {
  std::map<std::string, std::vector<double>> out;
  for (const Trip& trip : trips)
    for (const LinkTraversal& t : trip.traversals) out[t.link_id].push_back(t.avg_speed_mps);
  return out;
}

}  // namespace ecoroute
