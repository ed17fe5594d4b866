#pragma once

#include <Eigen/Dense>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ecoroute/errors.hpp"
#include "ecoroute/gmr.hpp"
#include "ecoroute/util.hpp"
#include "ecoroute/vbgmm.hpp"

namespace ecoroute {

/// Per-traversal motion and link variables. speed_limit_mps is a categorical
/// key selecting the model, never a regression coordinate.
struct MotionFeatures {
  double avg_speed_mps = 0.0;
  double speed_change_mps = 0.0;
  double grade_rad = 0.0;
  double length_m = 0.0;
  double speed_limit_mps = 0.0;
};

inline constexpr int kExpandedDim = 14;
using ExpandedFeatures = std::array<double, kExpandedDim>;

/// Linear, quadratic, and cross terms of (avg speed, speed change, grade,
/// length), in this fixed order:
///   [v, dv, th, L, v^2, dv^2, th^2, L^2, v*dv, v*th, v*L, dv*th, dv*L, th*L]
/// The order is part of the serialized schema and must not change.
inline ExpandedFeatures expand(const MotionFeatures& f) {
  const double v = f.avg_speed_mps;
  const double dv = f.speed_change_mps;
  const double th = f.grade_rad;
  const double len = f.length_m;
  return {v,      dv,      th,      len,     v * v,  dv * dv, th * th,
          len * len, v * dv, v * th, v * len, dv * th, dv * len, th * len};
}

/// Common interface over the GMR, average-speed, and power-balance variants.
class FuelModel {
 public:
  virtual ~FuelModel() = default;
  virtual double predict(const MotionFeatures& features) const = 0;
  virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// GMR fuel model, one joint mixture per speed-limit category.
// ---------------------------------------------------------------------------

struct Standardization {
  VectorXd mean;   // kExpandedDim + 1 (fuel last)
  VectorXd scale;  // same layout, all > 0

  VectorXd standardize_inputs(const ExpandedFeatures& x) const {
    VectorXd out(kExpandedDim);
    for (int i = 0; i < kExpandedDim; ++i) out[i] = (x[i] - mean[i]) / scale[i];
    return out;
  }
  double destandardize_output(double y_std) const {
    return y_std * scale[kExpandedDim] + mean[kExpandedDim];
  }
  double standardize_output(double y) const {
    return (y - mean[kExpandedDim]) / scale[kExpandedDim];
  }
};

struct GmrFuelCategory {
  double speed_limit_mps = 0.0;
  Standardization standardization;
  GmrModel gmr;
};

struct FuelFitDiagnostics {
  std::vector<std::string> warnings;
  std::map<double, std::size_t> category_counts;      // post-merge
  std::map<double, double> merged_categories;         // merged -> target
  std::map<double, int> components_per_category;
};

class CategoricalGmrFuelModel : public FuelModel {
 public:
  CategoricalGmrFuelModel() = default;
  explicit CategoricalGmrFuelModel(std::map<double, GmrFuelCategory> categories)
      : categories_(std::move(categories)) {}

  double predict(const MotionFeatures& features) const override {
    const GmrFuelCategory& cat = require_category(features.speed_limit_mps);
    const VectorXd x = cat.standardization.standardize_inputs(expand(features));
    const double fuel = cat.standardization.destandardize_output(cat.gmr.predict_mean(x));
    if (fuel < 0.0) {
      clamped_.fetch_add(1, std::memory_order_relaxed);
      return 0.0;
    }
    return fuel;
  }

  /// Conditional (mean, variance) in fuel units.
  std::pair<double, double> predict_with_variance(const MotionFeatures& features) const {
    const GmrFuelCategory& cat = require_category(features.speed_limit_mps);
    const VectorXd x = cat.standardization.standardize_inputs(expand(features));
    auto [mean, var] = cat.gmr.predict(x);
    const double s = cat.standardization.scale[kExpandedDim];
    return {cat.standardization.destandardize_output(mean), var * s * s};
  }

  std::string name() const override { return "gmr"; }

  const std::map<double, GmrFuelCategory>& categories() const { return categories_; }
  bool has_category(double speed_limit) const { return categories_.count(speed_limit) > 0; }
  std::uint64_t clamped_predictions() const { return clamped_.load(std::memory_order_relaxed); }

  const GmrFuelCategory& require_category(double speed_limit) const {
    auto it = categories_.find(speed_limit);
    if (it == categories_.end())
      throw NotFoundError("no fuel model for speed-limit category " + format_double(speed_limit));
    return it->second;
  }

 private:
  std::map<double, GmrFuelCategory> categories_;
  mutable std::atomic<std::uint64_t> clamped_{0};
};

struct GmrFuelFitOptions {
  VbHyperparams hyper;
  double prune_below = 0.01;
  std::size_t min_category_samples = 200;
  double tol = 1e-6;
  int max_iter = 500;
  std::uint64_t seed = 0;
};

using FuelSample = std::pair<MotionFeatures, double>;  // features, fuel kg

namespace detail {

inline Standardization compute_standardization(const MatrixXd& joint) {
  Standardization st;
  st.mean = joint.colwise().mean();
  st.scale.resize(joint.cols());
  const double n = static_cast<double>(joint.rows());
  for (int j = 0; j < joint.cols(); ++j) {
    const double var = (joint.col(j).array() - st.mean[j]).square().sum() / n;
    const double sd = std::sqrt(var);
    st.scale[j] = sd > 1e-12 ? sd : 1.0;  // constant coordinates pass through
  }
  return st;
}

/// Reassigns categories with fewer than min_samples to the nearest surviving
/// speed-limit category (by absolute difference, ties toward the lower one).
inline std::map<double, double> plan_category_merges(
    const std::map<double, std::size_t>& counts, std::size_t min_samples,
    std::vector<std::string>* warnings) {
  std::vector<double> big;
  for (const auto& [cat, n] : counts)
    if (n >= min_samples) big.push_back(cat);
  std::map<double, double> merges;
  if (big.empty()) return merges;  // caller decides how to fail
  for (const auto& [cat, n] : counts) {
    if (n >= min_samples) continue;
    double best = big.front();
    for (double b : big)
      if (std::abs(b - cat) < std::abs(best - cat)) best = b;
    merges[cat] = best;
    if (warnings)
      warnings->push_back("category " + format_double(cat) + " (" + std::to_string(n) +
                          " samples) merged into category " + format_double(best));
  }
  return merges;
}

}  // namespace detail

/// Fits one joint (expanded features, fuel) mixture per speed-limit category.
/// Categories with fewer than min_category_samples samples are merged into
/// the nearest category first.
inline CategoricalGmrFuelModel fit_gmr_fuel(const std::vector<FuelSample>& samples,
                                            const GmrFuelFitOptions& options,
                                            FuelFitDiagnostics* diagnostics = nullptr) {
  std::map<double, std::size_t> counts;
  for (const auto& [f, fuel] : samples) ++counts[f.speed_limit_mps];
  if (counts.empty()) throw InsufficientDataError("fit_gmr_fuel: no samples");

  bool any_big = false;
  for (const auto& [cat, n] : counts) any_big |= n >= options.min_category_samples;
  if (!any_big)
    throw InsufficientDataError("fit_gmr_fuel: no category reaches " +
                                std::to_string(options.min_category_samples) + " samples");
  FuelFitDiagnostics diag;
  diag.merged_categories =
      detail::plan_category_merges(counts, options.min_category_samples, &diag.warnings);

  std::map<double, std::vector<const FuelSample*>> by_category;
  for (const auto& s : samples) {
    double cat = s.first.speed_limit_mps;
    auto merged = diag.merged_categories.find(cat);
    if (merged != diag.merged_categories.end()) cat = merged->second;
    by_category[cat].push_back(&s);
  }

  std::vector<double> cats;
  for (const auto& [cat, rows] : by_category) cats.push_back(cat);

  std::vector<GmrFuelCategory> fitted(cats.size());
  parallel_for(cats.size(), [&](std::size_t ci) {
    const double cat = cats[ci];
    const auto& rows = by_category.at(cat);
    MatrixXd joint(rows.size(), kExpandedDim + 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const ExpandedFeatures x = expand(rows[i]->first);
      for (int j = 0; j < kExpandedDim; ++j) joint(static_cast<int>(i), j) = x[j];
      joint(static_cast<int>(i), kExpandedDim) = rows[i]->second;
    }
    GmrFuelCategory out;
    out.speed_limit_mps = cat;
    out.standardization = detail::compute_standardization(joint);
    MatrixXd z = joint;
    for (int j = 0; j < joint.cols(); ++j)
      z.col(j) = (joint.col(j).array() - out.standardization.mean[j]) /
                 out.standardization.scale[j];
    const std::uint64_t cat_seed =
        mix_seed(options.seed, fnv1a64(format_double(cat)));
    const VbPosterior post = fit(z, options.hyper, options.tol, options.max_iter, cat_seed);
    out.gmr = GmrModel(expected_mixture(post, options.prune_below), kExpandedDim);
    fitted[ci] = std::move(out);
  });

  std::map<double, GmrFuelCategory> categories;
  for (std::size_t ci = 0; ci < cats.size(); ++ci) {
    diag.category_counts[cats[ci]] = by_category[cats[ci]].size();
    diag.components_per_category[cats[ci]] = fitted[ci].gmr.component_count();
    categories[cats[ci]] = std::move(fitted[ci]);
  }
  if (diagnostics) *diagnostics = std::move(diag);
  return CategoricalGmrFuelModel(std::move(categories));
}

// ---------------------------------------------------------------------------
// Benchmark models.
// ---------------------------------------------------------------------------

inline constexpr double kStandardGravity = 9.80665;  // m/s^2

/// Road-load vehicle description shared by the power-balance benchmark and
/// the synthetic fuel oracle.
struct VehicleParams {
  double mass_kg = 1246.0;
  double max_engine_power_kw = 178.7;
  double idle_engine_speed_rad_s = 62.8;
  double drag_area_m2 = 0.65;       // Cd * A
  double rolling_coeff = 0.009;
  double willans_slope_kg_per_mj = 0.07;
  double idle_fuel_rate_kg_s = 1.8e-4;
  double air_density_kg_m3 = 1.2;

  void validate() const {
    const double fields[] = {mass_kg,       max_engine_power_kw, idle_engine_speed_rad_s,
                             drag_area_m2,  rolling_coeff,       willans_slope_kg_per_mj,
                             idle_fuel_rate_kg_s, air_density_kg_m3};
    for (double v : fields)
      if (!(v > 0.0)) throw ValidationError("vehicle parameters must be strictly positive");
    // Peak efficiency 1/(willans * LHV) for gasoline LHV 44 MJ/kg must not
    // exceed 36%.
    if (willans_slope_kg_per_mj * 44.0 < 1.0 / 0.36)
      throw ValidationError("willans slope implies engine efficiency above 36%");
  }
};

/// Mean tractive power over a traversal from kinetic, potential, drag and
/// rolling terms, using the average speed as the representative speed.
inline double mean_tractive_power_w(const MotionFeatures& f, const VehicleParams& p) {
  const double v = f.avg_speed_mps;
  if (v <= 0.0) return 0.0;
  const double duration = f.length_m / v;
  const double accel = f.speed_change_mps / duration;
  const double force = p.mass_kg * accel + p.mass_kg * kStandardGravity * std::sin(f.grade_rad) +
                       0.5 * p.air_density_kg_m3 * p.drag_area_m2 * v * v +
                       p.rolling_coeff * p.mass_kg * kStandardGravity * std::cos(f.grade_rad);
  return force * v;
}

/// Fuel = alpha * duration + beta * positive mean tractive power * duration.
class PowerBalanceModel : public FuelModel {
 public:
  PowerBalanceModel() = default;
  PowerBalanceModel(VehicleParams params, double alpha, double beta)
      : params_(std::move(params)), alpha_(alpha), beta_(beta) {}

  double predict(const MotionFeatures& features) const override {
    if (features.avg_speed_mps <= 0.0)
      throw ValidationError("power-balance model: average speed must be positive");
    const double duration = features.length_m / features.avg_speed_mps;
    const double power = std::max(0.0, mean_tractive_power_w(features, params_));
    return std::max(0.0, alpha_ * duration + beta_ * power * duration);
  }

  std::string name() const override { return "power_balance"; }

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  const VehicleParams& params() const { return params_; }

 private:
  VehicleParams params_;
  double alpha_ = 0.0;  // idle rate, kg/s
  double beta_ = 0.0;   // kg per joule of positive tractive work
};

/// Degree-4 polynomial in average speed for fuel per meter, one coefficient
/// set per speed-limit category.
class AverageSpeedModel : public FuelModel {
 public:
  using Coefficients = std::array<double, 5>;

  AverageSpeedModel() = default;
  explicit AverageSpeedModel(std::map<double, Coefficients> coefficients)
      : coefficients_(std::move(coefficients)) {}

  double predict(const MotionFeatures& features) const override {
    auto it = coefficients_.find(features.speed_limit_mps);
    if (it == coefficients_.end())
      throw NotFoundError("no average-speed model for category " +
                          format_double(features.speed_limit_mps));
    const double v = features.avg_speed_mps;
    double per_meter = 0.0;
    double power = 1.0;
    for (double b : it->second) {
      per_meter += b * power;
      power *= v;
    }
    return std::max(0.0, per_meter * features.length_m);
  }

  std::string name() const override { return "average_speed"; }

  const std::map<double, Coefficients>& coefficients() const { return coefficients_; }

 private:
  std::map<double, Coefficients> coefficients_;
};

struct BenchmarkFitReport {
  bool avg_speed_ridge_fallback = false;
  bool power_balance_ridge_fallback = false;
  double avg_speed_rmse = 0.0;
  double power_balance_rmse = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {

/// Least squares with SVD-based rank check; falls back to ridge (lambda=1e-6)
/// when the design is rank deficient.
inline VectorXd least_squares_with_ridge_fallback(const MatrixXd& design, const VectorXd& target,
                                                  bool* used_ridge) {
  Eigen::JacobiSVD<MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const bool deficient =
      sv.size() == 0 || sv[sv.size() - 1] < 1e-10 * std::max(sv[0], 1e-300) ||
      design.rows() < design.cols();
  if (used_ridge) *used_ridge = deficient;
  if (!deficient) return svd.solve(target);
  const MatrixXd gram =
      design.transpose() * design + 1e-6 * MatrixXd::Identity(design.cols(), design.cols());
  return gram.ldlt().solve(design.transpose() * target);
}

}  // namespace detail

/// Fits both benchmark models from raw traversal samples.
inline std::pair<AverageSpeedModel, PowerBalanceModel> fit_benchmarks(
    const std::vector<FuelSample>& samples, const VehicleParams& params = VehicleParams{},
    BenchmarkFitReport* report = nullptr) {
  if (samples.empty()) throw InsufficientDataError("fit_benchmarks: no samples");
  params.validate();
  BenchmarkFitReport rep;

  // Average-speed model: per-category polynomial for fuel per meter. Small
  // categories merge into the nearest one before fitting.
  std::map<double, std::size_t> counts;
  for (const auto& [f, fuel] : samples) ++counts[f.speed_limit_mps];
  const std::size_t kMinAvgSpeedSamples = 50;
  auto merges = detail::plan_category_merges(counts, kMinAvgSpeedSamples, &rep.warnings);
  if (merges.size() == counts.size())
    merges.clear();  // nothing reaches the floor; fit each category as-is

  std::map<double, std::vector<const FuelSample*>> by_category;
  for (const auto& s : samples) {
    double cat = s.first.speed_limit_mps;
    auto it = merges.find(cat);
    if (it != merges.end()) cat = it->second;
    by_category[cat].push_back(&s);
  }

  std::map<double, AverageSpeedModel::Coefficients> coefficients;
  double ss_res = 0.0;
  std::size_t n_rows = 0;
  for (const auto& [cat, rows] : by_category) {
    MatrixXd design(rows.size(), 5);
    VectorXd target(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double v = rows[i]->first.avg_speed_mps;
      double power = 1.0;
      for (int j = 0; j < 5; ++j) {
        design(static_cast<int>(i), j) = power;
        power *= v;
      }
      target[static_cast<int>(i)] = rows[i]->second / rows[i]->first.length_m;
    }
    bool ridge = false;
    const VectorXd beta = detail::least_squares_with_ridge_fallback(design, target, &ridge);
    rep.avg_speed_ridge_fallback |= ridge;
    AverageSpeedModel::Coefficients c{};
    for (int j = 0; j < 5; ++j) c[j] = beta[j];
    coefficients[cat] = c;
    ss_res += (design * beta - target).squaredNorm();
    n_rows += rows.size();
  }
  rep.avg_speed_rmse = std::sqrt(ss_res / static_cast<double>(n_rows));

  // Power-balance model: fuel ~ alpha * T + beta * max(P,0) * T, global fit.
  MatrixXd design(samples.size(), 2);
  VectorXd target(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& [f, fuel] = samples[i];
    if (f.avg_speed_mps <= 0.0)
      throw ValidationError("fit_benchmarks: nonpositive average speed in sample");
    const double duration = f.length_m / f.avg_speed_mps;
    design(static_cast<int>(i), 0) = duration;
    design(static_cast<int>(i), 1) = std::max(0.0, mean_tractive_power_w(f, params)) * duration;
    target[static_cast<int>(i)] = fuel;
  }
  bool ridge = false;
  const VectorXd ab = detail::least_squares_with_ridge_fallback(design, target, &ridge);
  rep.power_balance_ridge_fallback = ridge;
  rep.power_balance_rmse =
      std::sqrt((design * ab - target).squaredNorm() / static_cast<double>(samples.size()));

  if (report) *report = rep;
  return {AverageSpeedModel(std::move(coefficients)), PowerBalanceModel(params, ab[0], ab[1])};
}

}  // namespace ecoroute
