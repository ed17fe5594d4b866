#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecoroute/errors.hpp"
#include "ecoroute/fuel.hpp"
#include "ecoroute/gmr.hpp"
#include "ecoroute/ingest.hpp"
#include "ecoroute/network.hpp"
#include "ecoroute/router.hpp"
#include "ecoroute/util.hpp"
#include "ecoroute/vbgmm.hpp"

namespace ecoroute {

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

/// Coefficient of determination 1 - SS_res / SS_tot.
inline double r_squared(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw ValidationError("r_squared: length mismatch");
  if (truth.size() < 2) throw ValidationError("r_squared: need at least two samples");
  double mean = 0.0;
  for (double t : truth) mean += t;
  mean /= static_cast<double>(truth.size());
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
    ss_res += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  }
  if (ss_tot == 0.0) throw UndefinedMetricError("r_squared: constant truth");
  return 1.0 - ss_res / ss_tot;
}

/// Mean absolute percent error in percent. Entries with zero truth are
/// excluded; the count of exclusions is reported through excluded_out.
inline double mape(std::span<const double> pred, std::span<const double> truth,
                   std::size_t* excluded_out = nullptr) {
  if (pred.size() != truth.size()) throw ValidationError("mape: length mismatch");
  double sum = 0.0;
  std::size_t n = 0, excluded = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == 0.0) {
      ++excluded;
      continue;
    }
    sum += std::abs(pred[i] - truth[i]) / std::abs(truth[i]);
    ++n;
  }
  if (excluded_out) *excluded_out = excluded;
  if (n == 0) throw UndefinedMetricError("mape: no nonzero truth entries");
  return sum / static_cast<double>(n) * 100.0;
}

/// Inclusive linear-interpolation percentile (h = (n-1) * p / 100).
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("percentile: empty input");
  if (p < 0.0 || p > 100.0) throw ConfigError("percentile: p must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p / 100.0;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(h));
  if (lo == hi) return values[lo];
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline double weighted_mean(std::span<const double> values, std::span<const double> weights) {
  if (values.size() != weights.size()) throw ValidationError("weighted_mean: length mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (weights[i] < 0) throw ValidationError("weighted_mean: negative weight");
    num += weights[i] * values[i];
    den += weights[i];
  }
  if (den <= 0) throw ValidationError("weighted_mean: zero total weight");
  return num / den;
}

// ---------------------------------------------------------------------------
// Fuel model comparison harness (train/verify split by link, per-link
// conditional-expectation ground truth).
// ---------------------------------------------------------------------------

struct CategoryMetrics {
  double r_squared = 0.0;
  double mape_percent = 0.0;
  std::size_t n = 0;
};

struct MetricReport {
  std::string model;
  double r_squared = 0.0;
  double mape_percent = 0.0;
  std::size_t n = 0;
  std::map<double, CategoryMetrics> per_category;
};

/// Ground truth for one evaluation point: the conditional expectation of fuel
/// given (avg speed, speed change) under a per-link GMR.
class LinkTruthEstimator {
 public:
  LinkTruthEstimator() = default;

  /// Fits a small 3-D joint mixture (speed, speed change, fuel) per link.
  static LinkTruthEstimator fit_per_link(
      const std::map<std::string, std::vector<const LinkTraversal*>>& by_link,
      const RoadNetwork& net, std::size_t min_traversals, std::uint64_t seed, int k_max = 6) {
    LinkTruthEstimator est;
    std::vector<const std::pair<const std::string, std::vector<const LinkTraversal*>>*> rows;
    for (const auto& entry : by_link)
      if (entry.second.size() > min_traversals) rows.push_back(&entry);
    std::vector<GmrModel> fitted(rows.size());
    std::vector<std::pair<VectorXd, VectorXd>> scales(rows.size());
    parallel_for(rows.size(), [&](std::size_t i) {
      const auto& [link_id, traversals] = *rows[i];
      MatrixXd joint(traversals.size(), 3);
      for (std::size_t r = 0; r < traversals.size(); ++r) {
        joint(static_cast<int>(r), 0) = traversals[r]->avg_speed_mps;
        joint(static_cast<int>(r), 1) =
            traversals[r]->exit_speed_mps - traversals[r]->entry_speed_mps;
        joint(static_cast<int>(r), 2) = traversals[r]->fuel_kg.value_or(0.0);
      }
      // Standardized fit; queries translate back to fuel units.
      VbHyperparams hyper;
      hyper.k_max = k_max;
      MatrixXd z = joint;
      VectorXd mean = joint.colwise().mean();
      VectorXd scale(3);
      for (int c = 0; c < 3; ++c) {
        const double var =
            (joint.col(c).array() - mean[c]).square().sum() / static_cast<double>(joint.rows());
        scale[c] = std::sqrt(var) > 1e-9 ? std::sqrt(var) : 1.0;
        z.col(c) = (joint.col(c).array() - mean[c]) / scale[c];
      }
      const auto post = fit(z, hyper, 1e-6, 300, mix_seed(seed, fnv1a64(link_id)));
      fitted[i] = GmrModel(expected_mixture(post, 0.02), 2);
      scales[i] = {std::move(mean), std::move(scale)};
    });
    (void)net;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      est.models_.emplace(rows[i]->first, std::move(fitted[i]));
      est.scales_.emplace(rows[i]->first, std::move(scales[i]));
    }
    return est;
  }

  bool covers(const std::string& link_id) const { return models_.count(link_id) > 0; }
  std::size_t link_count() const { return models_.size(); }

  /// E[fuel | avg speed, speed change] for a covered link.
  double conditional_fuel(const std::string& link_id, double avg_speed_mps,
                          double speed_change_mps) const {
    const auto it = models_.find(link_id);
    if (it == models_.end()) throw NotFoundError("truth estimator does not cover " + link_id);
    const auto& [mean, scale] = scales_.at(link_id);
    VectorXd x(2);
    x[0] = (avg_speed_mps - mean[0]) / scale[0];
    x[1] = (speed_change_mps - mean[1]) / scale[1];
    return it->second.predict_mean(x) * scale[2] + mean[2];
  }

 private:
  std::map<std::string, GmrModel> models_;
  std::map<std::string, std::pair<VectorXd, VectorXd>> scales_;
};

struct EvaluationPoint {
  MotionFeatures features;
  double truth_fuel_kg = 0.0;
};

/// Evaluates each model against the truth values; points whose category a
/// model cannot serve raise, as predict does.
inline std::vector<MetricReport> compare_models(
    const std::vector<const FuelModel*>& models, const std::vector<EvaluationPoint>& points) {
  if (points.size() < 2) throw InsufficientDataError("compare_models: need at least two points");
  std::vector<MetricReport> reports;
  for (const FuelModel* model : models) {
    std::vector<double> pred(points.size()), truth(points.size());
    std::map<double, std::pair<std::vector<double>, std::vector<double>>> per_cat;
    for (std::size_t i = 0; i < points.size(); ++i) {
      pred[i] = model->predict(points[i].features);
      truth[i] = points[i].truth_fuel_kg;
      auto& bucket = per_cat[points[i].features.speed_limit_mps];
      bucket.first.push_back(pred[i]);
      bucket.second.push_back(truth[i]);
    }
    MetricReport rep;
    rep.model = model->name();
    rep.n = points.size();
    rep.r_squared = r_squared(pred, truth);
    rep.mape_percent = mape(pred, truth);
    for (const auto& [cat, bucket] : per_cat) {
      CategoryMetrics cm;
      cm.n = bucket.first.size();
      cm.mape_percent = mape(bucket.first, bucket.second);
      cm.r_squared = cm.n >= 2 ? r_squared(bucket.first, bucket.second) : 1.0;
      rep.per_category[cat] = cm;
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Routing strategy comparison (normalization, frequency-weighted expectation,
// percentile bands, coincidence rates).
// ---------------------------------------------------------------------------

struct OdStrategyResult {
  std::string od_id;
  double weight = 1.0;  // OD travel frequency
  std::map<Strategy, RouteResult> routes;
};

struct StrategyAggregate {
  double expected_fuel_kg = 0.0;
  double expected_time_s = 0.0;
  double expected_norm_fuel = 0.0;
  double expected_norm_time = 0.0;
  double norm_fuel_p10 = 0.0, norm_fuel_p90 = 0.0;
  double norm_time_p10 = 0.0, norm_time_p90 = 0.0;
};

struct StrategyComparison {
  std::size_t od_count = 0;
  std::map<Strategy, StrategyAggregate> aggregates;
  /// Fraction of OD pairs where the two strategies return the identical link
  /// sequence.
  std::map<std::pair<Strategy, Strategy>, double> coincidence;
  /// Per-OD normalized rows for export: (od, strategy, fuel, time, norm fuel,
  /// norm time, weight).
  struct Row {
    std::string od_id;
    Strategy strategy;
    double fuel_kg, time_s, norm_fuel, norm_time, weight;
  };
  std::vector<Row> rows;
};

inline const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> s = {Strategy::kShortest, Strategy::kFastest, Strategy::kEco,
                                          Strategy::kConstrainedEco};
  return s;
}

/// Normalizes each OD's strategies by the fastest route's time and the eco
/// route's fuel, then aggregates with OD-frequency weights and 10/90
/// percentile bands.
inline StrategyComparison compare_strategies(const std::vector<OdStrategyResult>& results) {
  if (results.empty()) throw InsufficientDataError("compare_strategies: no OD pairs");
  for (const auto& od : results) {
    std::vector<std::string> missing;
    for (Strategy s : all_strategies())
      if (!od.routes.count(s) || !od.routes.at(s).reached) missing.push_back(strategy_name(s));
    if (!missing.empty()) {
      std::string what = "compare_strategies: OD " + od.od_id + " missing strategies:";
      for (const auto& m : missing) what += " " + m;
      throw ValidationError(what);
    }
  }

  StrategyComparison cmp;
  cmp.od_count = results.size();
  std::map<Strategy, std::vector<double>> norm_fuel, norm_time, fuel, time;
  std::vector<double> weights;
  for (const auto& od : results) {
    const double eco_fuel = od.routes.at(Strategy::kEco).total_fuel_kg;
    const double fastest_time = od.routes.at(Strategy::kFastest).total_time_s;
    if (!(eco_fuel > 0) || !(fastest_time > 0))
      throw ValidationError("compare_strategies: nonpositive normalizer for OD " + od.od_id);
    weights.push_back(od.weight);
    for (Strategy s : all_strategies()) {
      const RouteResult& r = od.routes.at(s);
      fuel[s].push_back(r.total_fuel_kg);
      time[s].push_back(r.total_time_s);
      norm_fuel[s].push_back(r.total_fuel_kg / eco_fuel);
      norm_time[s].push_back(r.total_time_s / fastest_time);
      cmp.rows.push_back({od.od_id, s, r.total_fuel_kg, r.total_time_s,
                          r.total_fuel_kg / eco_fuel, r.total_time_s / fastest_time, od.weight});
    }
  }
  for (Strategy s : all_strategies()) {
    StrategyAggregate agg;
    agg.expected_fuel_kg = weighted_mean(fuel[s], weights);
    agg.expected_time_s = weighted_mean(time[s], weights);
    agg.expected_norm_fuel = weighted_mean(norm_fuel[s], weights);
    agg.expected_norm_time = weighted_mean(norm_time[s], weights);
    agg.norm_fuel_p10 = percentile(norm_fuel[s], 10.0);
    agg.norm_fuel_p90 = percentile(norm_fuel[s], 90.0);
    agg.norm_time_p10 = percentile(norm_time[s], 10.0);
    agg.norm_time_p90 = percentile(norm_time[s], 90.0);
    cmp.aggregates[s] = agg;
  }
  for (std::size_t a = 0; a < all_strategies().size(); ++a)
    for (std::size_t b = a + 1; b < all_strategies().size(); ++b) {
      const Strategy sa = all_strategies()[a];
      const Strategy sb = all_strategies()[b];
      std::size_t same = 0;
      for (const auto& od : results)
        if (od.routes.at(sa).links == od.routes.at(sb).links) ++same;
      cmp.coincidence[{sa, sb}] =
          static_cast<double>(same) / static_cast<double>(results.size());
    }
  return cmp;
}

inline void write_strategy_rows_csv(const std::string& path, const StrategyComparison& cmp) {
  CsvWriter w(path, {"strategy", "od_id", "fuel_kg", "time_s", "norm_fuel", "norm_time", "weight"});
  for (const auto& row : cmp.rows)
    w.row({strategy_name(row.strategy), row.od_id, format_double(row.fuel_kg),
           format_double(row.time_s), format_double(row.norm_fuel), format_double(row.norm_time),
           format_double(row.weight)});
}

}  // namespace ecoroute
