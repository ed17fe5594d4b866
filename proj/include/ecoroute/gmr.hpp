#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ecoroute/errors.hpp"
#include "ecoroute/vbgmm.hpp"

namespace ecoroute {

// ---------------------------------------------------------------------------
// Gaussian Mixture Regression: condition a joint mixture over (X, Y) on the
// inputs X. The output Y is scalar and stored as the last coordinate of the
// joint. All per-component partitions and factorizations are cached at
// construction so queries run in O(K * P^2).
// ---------------------------------------------------------------------------

class GmrModel {
 public:
  GmrModel() = default;

  GmrModel(GaussianMixture joint, int input_dim) : joint_(std::move(joint)), p_(input_dim) {
    if (p_ < 1 || joint_.dim != p_ + 1)
      throw ValidationError("GmrModel: joint dimension " + std::to_string(joint_.dim) +
                            " does not match input dimension " + std::to_string(p_) +
                            " plus scalar output");
    const int k_count = joint_.component_count();
    comps_.resize(k_count);
    for (int k = 0; k < k_count; ++k) {
      Component& c = comps_[k];
      const VectorXd& mu = joint_.means[k];
      const MatrixXd& cov = joint_.covariances[k];
      c.mu_x = mu.head(p_);
      c.mu_y = mu[p_];
      const MatrixXd sigma_xx = cov.topLeftCorner(p_, p_);
      const VectorXd sigma_xy = cov.topRightCorner(p_, 1);
      const double sigma_yy = cov(p_, p_);
      c.xx_llt = detail::robust_llt(sigma_xx, "GmrModel Sigma_xx");
      c.gain = c.xx_llt.solve(sigma_xy);
      c.cond_var = std::max(0.0, sigma_yy - sigma_xy.dot(c.gain));
      c.log_weight = std::log(joint_.weights[k]);
      c.input_log_norm =
          -0.5 * (p_ * detail::kLn2Pi + detail::log_det_from_llt(c.xx_llt));
    }
  }

  int input_dim() const { return p_; }
  int component_count() const { return static_cast<int>(comps_.size()); }
  const GaussianMixture& joint() const { return joint_; }

  /// Posterior component probabilities w_k(x) given the inputs, computed in
  /// log space. Nonnegative, sums to one.
  VectorXd input_weights(const VectorXd& x) const {
    check_dim(x);
    const int k_count = component_count();
    VectorXd logw(k_count);
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < k_count; ++k) {
      const Component& c = comps_[k];
      const double maha = c.xx_llt.matrixL().solve(x - c.mu_x).squaredNorm();
      logw[k] = c.log_weight + c.input_log_norm - 0.5 * maha;
      mx = std::max(mx, logw[k]);
    }
    VectorXd w = (logw.array() - mx).exp();
    return w / w.sum();
  }

  /// Conditional mean E[Y | X = x].
  double predict_mean(const VectorXd& x) const {
    const VectorXd w = input_weights(x);
    double mean = 0.0;
    for (int k = 0; k < component_count(); ++k)
      mean += w[k] * component_conditional_mean(k, x);
    return mean;
  }

  /// Conditional variance Var[Y | X = x] by the law of total variance over
  /// components; clamped at zero against roundoff.
  double predict_variance(const VectorXd& x) const {
    const VectorXd w = input_weights(x);
    double mean = 0.0;
    double second = 0.0;
    for (int k = 0; k < component_count(); ++k) {
      const double mk = component_conditional_mean(k, x);
      mean += w[k] * mk;
      second += w[k] * (comps_[k].cond_var + mk * mk);
    }
    const double var = second - mean * mean;
    return var > -1e-12 ? std::max(0.0, var) : var;
  }

  /// Mean and variance in one pass.
  std::pair<double, double> predict(const VectorXd& x) const {
    const VectorXd w = input_weights(x);
    double mean = 0.0;
    double second = 0.0;
    for (int k = 0; k < component_count(); ++k) {
      const double mk = component_conditional_mean(k, x);
      mean += w[k] * mk;
      second += w[k] * (comps_[k].cond_var + mk * mk);
    }
    return {mean, std::max(0.0, second - mean * mean)};
  }

  double component_conditional_mean(int k, const VectorXd& x) const {
    const Component& c = comps_[k];
    return c.mu_y + c.gain.dot(x - c.mu_x);
  }

  double component_conditional_variance(int k) const { return comps_[k].cond_var; }

 private:
  struct Component {
    VectorXd mu_x;
    double mu_y = 0.0;
    Eigen::LLT<MatrixXd> xx_llt;
    VectorXd gain;        // Sigma_xx^-1 Sigma_xy
    double cond_var = 0.0;
    double log_weight = 0.0;
    double input_log_norm = 0.0;
  };

  void check_dim(const VectorXd& x) const {
    if (x.size() != p_)
      throw ValidationError("GmrModel: expected " + std::to_string(p_) +
                            "-dimensional input, got " + std::to_string(x.size()));
  }

  GaussianMixture joint_;
  int p_ = 0;
  std::vector<Component> comps_;
};

}  // namespace ecoroute
