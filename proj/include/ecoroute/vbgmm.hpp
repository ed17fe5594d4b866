#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ecoroute/errors.hpp"
#include "ecoroute/util.hpp"

namespace ecoroute {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Gaussian mixture over R^D.
// ---------------------------------------------------------------------------

struct GaussianMixture {
  int dim = 0;
  std::vector<double> weights;
  std::vector<VectorXd> means;
  std::vector<MatrixXd> covariances;

  int component_count() const { return static_cast<int>(weights.size()); }
};

namespace detail {

inline constexpr double kLn2Pi = 1.8378770664093453;  // ln(2*pi)

/// Cholesky with escalating jitter. Adds 1e-8*trace(A)/D to the diagonal on
/// failure, escalating tenfold up to three times, then raises NumericalError.
inline Eigen::LLT<MatrixXd> robust_llt(const MatrixXd& a, const char* what) {
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  const int d = static_cast<int>(a.rows());
  double jitter = 1e-8 * std::max(a.trace() / d, 1e-12);
  MatrixXd b = a;
  for (int attempt = 0; attempt < 3; ++attempt) {
    b.diagonal().array() += jitter;
    llt.compute(b);
    if (llt.info() == Eigen::Success) return llt;
    jitter *= 10.0;
  }
  throw NumericalError(std::string(what) + ": matrix not positive definite after jitter");
}

inline double log_det_from_llt(const Eigen::LLT<MatrixXd>& llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// ln B(W, nu), the log normalizer of the Wishart distribution.
inline double wishart_log_b(double log_det_w, double nu, int d) {
  double sum_lgamma = 0.0;
  for (int i = 0; i < d; ++i) sum_lgamma += std::lgamma(0.5 * (nu - i));
  return -0.5 * nu * log_det_w - 0.5 * nu * d * std::numbers::ln2 -
         0.25 * d * (d - 1) * std::log(std::numbers::pi) - sum_lgamma;
}

/// Seeded k-means++ center selection; returns row indices into data.
inline std::vector<int> kmeanspp_centers(const MatrixXd& data, int k, std::uint64_t seed) {
  const int n = static_cast<int>(data.rows());
  std::mt19937_64 rng(seed);
  std::vector<int> centers;
  centers.reserve(k);
  std::uniform_int_distribution<int> uniform(0, n - 1);
  centers.push_back(uniform(rng));
  VectorXd d2 = (data.rowwise() - data.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    const double total = d2.sum();
    int pick;
    if (total <= 0.0) {
      pick = uniform(rng);  // all remaining points coincide with a center
    } else {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        r -= d2[i];
        if (r <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(pick);
    d2 = d2.cwiseMin((data.rowwise() - data.row(pick)).rowwise().squaredNorm());
  }
  return centers;
}

}  // namespace detail

/// Evaluates log( sum_k pi_k N(x; mu_k, Sigma_k) ) with log-sum-exp
/// stabilization. Factorizations are computed per call; hot paths should cache
/// them (see GmrModel).
inline double log_density(const GaussianMixture& mixture, const VectorXd& x) {
  if (x.size() != mixture.dim)
    throw ValidationError("log_density: dimension mismatch: expected " +
                          std::to_string(mixture.dim) + ", got " + std::to_string(x.size()));
  const int k_count = mixture.component_count();
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(k_count);
  for (int k = 0; k < k_count; ++k) {
    const auto llt = detail::robust_llt(mixture.covariances[k], "log_density");
    const VectorXd diff = x - mixture.means[k];
    const double maha = llt.matrixL().solve(diff).squaredNorm();
    terms[k] = std::log(mixture.weights[k]) -
               0.5 * (mixture.dim * detail::kLn2Pi + detail::log_det_from_llt(llt) + maha);
    max_term = std::max(max_term, terms[k]);
  }
  if (!std::isfinite(max_term)) return -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - max_term);
  return max_term + std::log(sum);
}

// ---------------------------------------------------------------------------
// Variational Bayesian inference for a Gaussian mixture.
//
// Priors: Dirichlet(alpha0) on the mixing coefficients and Gaussian-Wishart
// (m0, beta0, W0, nu0) on component means and precisions. Coordinate updates
// alternate responsibilities and parameter posteriors until the evidence
// lower bound stops improving. A small alpha0 starves redundant components so
// the component count never has to be cross-validated.
// ---------------------------------------------------------------------------

struct VbHyperparams {
  double alpha0 = 1e-3;
  double beta0 = 1.0;
  VectorXd m0;    // empty -> data mean
  MatrixXd w0;    // empty -> diag(1 / per-coordinate data variance)
  double nu0 = 0; // <= 0 -> dimension + 2
  int k_max = 10;

  void validate(int dim) const {
    if (alpha0 <= 0.0) throw ConfigError("alpha0 must be > 0");
    if (beta0 <= 0.0) throw ConfigError("beta0 must be > 0");
    if (k_max < 1) throw ConfigError("k_max must be >= 1");
    if (m0.size() != 0 && m0.size() != dim) throw ConfigError("m0 dimension mismatch");
    if (w0.size() != 0) {
      if (w0.rows() != dim || w0.cols() != dim) throw ConfigError("W0 dimension mismatch");
      if (!w0.isApprox(w0.transpose(), 1e-12)) throw ConfigError("W0 must be symmetric");
      Eigen::LLT<MatrixXd> llt(w0);
      if (llt.info() != Eigen::Success) throw ConfigError("W0 must be positive definite");
    }
    const double nu = nu0 > 0 ? nu0 : dim + 2;
    if (!(nu > dim - 1)) throw ConfigError("nu0 must exceed dimension - 1");
  }
};

struct VbPosterior {
  int dim = 0;
  int k = 0;
  double n = 0;                 // total sample count
  double alpha0 = 0;            // prior concentration used for the fit
  VectorXd alpha;               // K
  VectorXd beta;                // K
  VectorXd nu;                  // K
  VectorXd nk;                  // K effective counts
  std::vector<VectorXd> m;      // K x D
  std::vector<MatrixXd> w;      // K x D x D scale matrices
  MatrixXd responsibilities;    // N x K
  /// ELBO after each coordinate-update cycle of the phase that produced the
  /// returned structure (structural removals between phases restart it).
  std::vector<double> elbo_trace;
  int iterations = 0;           // cycles in the final phase
  int removed_components = 0;   // structural removals accepted
  bool converged = false;
};

namespace detail {

struct VbState {
  VectorXd nk;
  std::vector<VectorXd> xbar;
  std::vector<MatrixXd> sk;
  VectorXd alpha, beta, nu;
  std::vector<VectorXd> m;
  std::vector<MatrixXd> w;
  std::vector<Eigen::LLT<MatrixXd>> w_llt;
  VectorXd log_det_w;     // per component
  VectorXd e_log_lambda;  // E[ln |Lambda_k|]
  VectorXd e_log_pi;      // E[ln pi_k]
};

inline void vb_m_step(const MatrixXd& data, const MatrixXd& resp, const VectorXd& m0,
                      const MatrixXd& w0_inv, double alpha0, double beta0, double nu0,
                      VbState& st) {
  const int n = static_cast<int>(data.rows());
  const int d = static_cast<int>(data.cols());
  const int k_count = static_cast<int>(resp.cols());

  st.nk = resp.colwise().sum();
  st.alpha = st.nk.array() + alpha0;
  st.beta = st.nk.array() + beta0;
  st.nu = st.nk.array() + nu0;

  st.xbar.resize(k_count);
  st.sk.resize(k_count);
  st.m.resize(k_count);
  st.w.resize(k_count);
  st.w_llt.resize(k_count);
  st.log_det_w.resize(k_count);
  st.e_log_lambda.resize(k_count);
  st.e_log_pi.resize(k_count);

  const double alpha_hat = st.alpha.sum();
  const double digamma_alpha_hat = boost::math::digamma(alpha_hat);

  for (int k = 0; k < k_count; ++k) {
    const double nk = st.nk[k];
    VectorXd xbar;
    MatrixXd sk;
    if (nk > 1e-12) {
      xbar = (resp.col(k).transpose() * data).transpose() / nk;
      MatrixXd centered = data.rowwise() - xbar.transpose();
      sk = (centered.transpose() * (centered.array().colwise() * resp.col(k).array()).matrix()) / nk;
    } else {
      xbar = m0;  // empty component falls back to its prior
      sk = MatrixXd::Zero(d, d);
    }
    st.xbar[k] = xbar;
    st.sk[k] = 0.5 * (sk + sk.transpose());  // enforce symmetry

    st.m[k] = (beta0 * m0 + nk * xbar) / st.beta[k];
    const VectorXd dm = xbar - m0;
    MatrixXd w_inv = w0_inv + nk * st.sk[k] + (beta0 * nk / (beta0 + nk)) * (dm * dm.transpose());
    w_inv = 0.5 * (w_inv + w_inv.transpose());
    const auto llt_inv = robust_llt(w_inv, "vbgmm W update");
    st.w[k] = llt_inv.solve(MatrixXd::Identity(d, d));
    st.w[k] = 0.5 * (st.w[k] + st.w[k].transpose());
    st.w_llt[k] = robust_llt(st.w[k], "vbgmm W factorization");
    st.log_det_w[k] = log_det_from_llt(st.w_llt[k]);

    double digamma_sum = 0.0;
    for (int i = 0; i < d; ++i) digamma_sum += boost::math::digamma(0.5 * (st.nu[k] - i));
    st.e_log_lambda[k] = digamma_sum + d * std::numbers::ln2 + st.log_det_w[k];
    st.e_log_pi[k] = boost::math::digamma(st.alpha[k]) - digamma_alpha_hat;
  }
  (void)n;
}

/// Responsibility update; returns the new N x K matrix.
inline MatrixXd vb_e_step(const MatrixXd& data, const VbState& st) {
  const int n = static_cast<int>(data.rows());
  const int d = static_cast<int>(data.cols());
  const int k_count = static_cast<int>(st.alpha.size());
  MatrixXd log_rho(n, k_count);
  for (int k = 0; k < k_count; ++k) {
    const MatrixXd centered = data.rowwise() - st.m[k].transpose();
    // nu_k * (x-m)^T W (x-m) computed row-wise.
    const VectorXd quad =
        (centered * st.w[k]).cwiseProduct(centered).rowwise().sum() * st.nu[k];
    const double base =
        st.e_log_pi[k] + 0.5 * st.e_log_lambda[k] - 0.5 * d * kLn2Pi - 0.5 * d / st.beta[k];
    log_rho.col(k) = VectorXd::Constant(n, base) - 0.5 * quad;
  }
  // Row-wise softmax with log-sum-exp.
  MatrixXd resp(n, k_count);
  for (int i = 0; i < n; ++i) {
    const double mx = log_rho.row(i).maxCoeff();
    Eigen::ArrayXd ex = (log_rho.row(i).array() - mx).exp();
    resp.row(i) = (ex / ex.sum()).matrix();
  }
  return resp;
}

inline double vb_elbo(const MatrixXd& data, const MatrixXd& resp, const VbState& st,
                      const VectorXd& m0, const MatrixXd& w0_inv, double log_det_w0,
                      double alpha0, double beta0, double nu0) {
  const int d = static_cast<int>(data.cols());
  const int k_count = static_cast<int>(st.alpha.size());

  double log_p_x = 0.0;       // E[ln p(X | Z, mu, Lambda)]
  double log_p_z = 0.0;       // E[ln p(Z | pi)]
  double log_p_mu_lam = 0.0;  // E[ln p(mu, Lambda)]
  double log_q_mu_lam = 0.0;  // E[ln q(mu, Lambda)]

  for (int k = 0; k < k_count; ++k) {
    const double nk = st.nk[k];
    const VectorXd dxm = st.xbar[k] - st.m[k];
    log_p_x += 0.5 * nk *
               (st.e_log_lambda[k] - d / st.beta[k] -
                st.nu[k] * (st.sk[k] * st.w[k]).trace() -
                st.nu[k] * dxm.dot(st.w[k] * dxm) - d * kLn2Pi);
    log_p_z += nk * st.e_log_pi[k];

    const VectorXd dmm = st.m[k] - m0;
    log_p_mu_lam += 0.5 * (d * std::log(beta0 / (2.0 * std::numbers::pi)) +
                           st.e_log_lambda[k] - d * beta0 / st.beta[k] -
                           beta0 * st.nu[k] * dmm.dot(st.w[k] * dmm));
    log_p_mu_lam += 0.5 * (nu0 - d - 1) * st.e_log_lambda[k] -
                    0.5 * st.nu[k] * (w0_inv * st.w[k]).trace();

    const double entropy_wishart = -wishart_log_b(st.log_det_w[k], st.nu[k], d) -
                                   0.5 * (st.nu[k] - d - 1) * st.e_log_lambda[k] +
                                   0.5 * st.nu[k] * d;
    log_q_mu_lam += 0.5 * st.e_log_lambda[k] +
                    0.5 * d * std::log(st.beta[k] / (2.0 * std::numbers::pi)) - 0.5 * d -
                    entropy_wishart;
  }
  log_p_mu_lam += k_count * wishart_log_b(log_det_w0, nu0, d);

  // Dirichlet prior, entropy of q(Z), and q(pi).
  const double e_log_pi_sum = st.e_log_pi.sum();
  const double log_c_alpha0 =
      std::lgamma(k_count * alpha0) - k_count * std::lgamma(alpha0);
  const double log_p_pi = log_c_alpha0 + (alpha0 - 1.0) * e_log_pi_sum;

  double log_q_z = 0.0;
  for (int i = 0; i < resp.rows(); ++i)
    for (int k = 0; k < k_count; ++k) {
      const double r = resp(i, k);
      if (r > 0.0) log_q_z += r * std::log(r);
    }

  double log_c_alpha = std::lgamma(st.alpha.sum());
  for (int k = 0; k < k_count; ++k) log_c_alpha -= std::lgamma(st.alpha[k]);
  double log_q_pi = log_c_alpha;
  for (int k = 0; k < k_count; ++k) log_q_pi += (st.alpha[k] - 1.0) * st.e_log_pi[k];

  return log_p_x + log_p_z + log_p_pi + log_p_mu_lam - log_q_z - log_q_pi - log_q_mu_lam;
}

}  // namespace detail

/// Fits the variational posterior. Initialization is hard assignment to
/// seeded k-means++ centers; convergence is relative ELBO change below tol.
/// After each converged phase the weakest component is tentatively removed
/// and the reduction kept while the evidence bound does not decrease.
inline VbPosterior fit(const MatrixXd& data, const VbHyperparams& hyper, double tol = 1e-6,
                       int max_iter = 500, std::uint64_t seed = 0) {
  const int n = static_cast<int>(data.rows());
  const int d = static_cast<int>(data.cols());
  if (d < 1) throw ValidationError("vbgmm: need at least one dimension");
  if (n <= d + 1)
    throw InsufficientDataError("vbgmm: need more than dim+1 = " + std::to_string(d + 1) +
                                " samples, got " + std::to_string(n));
  if (!data.allFinite()) throw ValidationError("vbgmm: non-finite input");
  hyper.validate(d);
  if (max_iter < 1) throw ConfigError("max_iter must be >= 1");

  // Data-scaled default priors: prior mean at the data mean and Wishart scale
  // from the per-coordinate variance, so an under-populated component relaxes
  // to a data-wide covariance and loses its responsibilities instead of
  // lingering as a narrow duplicate.
  const VectorXd data_mean = data.colwise().mean();
  const VectorXd m0 = hyper.m0.size() ? hyper.m0 : data_mean;
  MatrixXd w0;
  if (hyper.w0.size()) {
    w0 = hyper.w0;
  } else {
    w0 = MatrixXd::Zero(d, d);
    for (int j = 0; j < d; ++j) {
      const double var = (data.col(j).array() - data_mean[j]).square().sum() / n;
      w0(j, j) = 1.0 / std::max(var, 1e-12);
    }
  }
  const double nu0 = hyper.nu0 > 0 ? hyper.nu0 : d + 2;
  const auto w0_llt = detail::robust_llt(w0, "vbgmm W0");
  const MatrixXd w0_inv = w0_llt.solve(MatrixXd::Identity(d, d));
  const double log_det_w0 = detail::log_det_from_llt(w0_llt);

  const int k_count = std::min(hyper.k_max, n);

  // Hard assignment to k-means++ centers.
  const std::vector<int> centers = detail::kmeanspp_centers(data, k_count, seed);
  MatrixXd resp = MatrixXd::Zero(n, k_count);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int k = 0; k < k_count; ++k) {
      const double d2 = (data.row(i) - data.row(centers[k])).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = k;
      }
    }
    resp(i, best) = 1.0;
  }

  // One CAVI phase: alternate updates until the relative ELBO change drops
  // below tol. The trace is monotone up to roundoff by construction.
  struct Phase {
    std::vector<double> trace;
    int iterations = 0;
    bool converged = false;
  };
  detail::VbState st;
  auto run_cavi = [&](MatrixXd& r) {
    Phase phase;
    double prev_elbo = -std::numeric_limits<double>::infinity();
    detail::vb_m_step(data, r, m0, w0_inv, hyper.alpha0, hyper.beta0, nu0, st);
    for (; phase.iterations < max_iter;) {
      r = detail::vb_e_step(data, st);
      detail::vb_m_step(data, r, m0, w0_inv, hyper.alpha0, hyper.beta0, nu0, st);
      const double elbo = detail::vb_elbo(data, r, st, m0, w0_inv, log_det_w0, hyper.alpha0,
                                          hyper.beta0, nu0);
      phase.trace.push_back(elbo);
      ++phase.iterations;
      if (phase.iterations > 1 && std::abs(elbo - prev_elbo) <= tol * (std::abs(prev_elbo) + 1e-12)) {
        phase.converged = true;
        break;
      }
      prev_elbo = elbo;
    }
    return phase;
  };

  Phase phase = run_cavi(resp);

  // Structural pruning: tentatively drop the lowest-count component and
  // re-converge; keep the reduction while the evidence bound does not
  // decrease. This clears both starved components and duplicate local optima
  // that plain coordinate updates escape only asymptotically.
  int removed = 0;
  while (static_cast<int>(resp.cols()) > 1) {
    int weakest = 0;
    for (int k = 1; k < st.nk.size(); ++k)
      if (st.nk[k] < st.nk[weakest]) weakest = k;

    MatrixXd reduced(resp.rows(), resp.cols() - 1);
    for (int k = 0, out = 0; k < resp.cols(); ++k) {
      if (k == weakest) continue;
      reduced.col(out++) = resp.col(k);
    }
    for (int i = 0; i < reduced.rows(); ++i) {
      const double sum = reduced.row(i).sum();
      if (sum > 1e-12)
        reduced.row(i) /= sum;
      else
        reduced.row(i).setConstant(1.0 / static_cast<double>(reduced.cols()));
    }

    const detail::VbState saved_state = st;
    MatrixXd candidate = reduced;
    Phase candidate_phase = run_cavi(candidate);
    if (candidate_phase.trace.back() >= phase.trace.back() - 1e-9) {
      resp = std::move(candidate);
      phase = std::move(candidate_phase);
      ++removed;
    } else {
      st = saved_state;
      break;
    }
  }

  VbPosterior post;
  post.dim = d;
  post.k = static_cast<int>(resp.cols());
  post.n = n;
  post.alpha0 = hyper.alpha0;
  post.alpha = st.alpha;
  post.beta = st.beta;
  post.nu = st.nu;
  post.nk = st.nk;
  post.m = st.m;
  post.w = st.w;
  post.responsibilities = std::move(resp);
  post.elbo_trace = std::move(phase.trace);
  post.iterations = phase.iterations;
  post.removed_components = removed;
  post.converged = phase.converged;
  return post;
}

/// Collapses the posterior into a plain mixture. Weights follow the expected
/// mixing coefficient (alpha0 + N_k) / (K*alpha0 + N); components below
/// prune_below are removed and the rest renormalized. Covariance is the
/// inverse expected precision (nu_k W_k)^-1.
inline GaussianMixture expected_mixture(const VbPosterior& post, double prune_below = 0.01) {
  GaussianMixture mix;
  mix.dim = post.dim;
  const double denom = post.k * post.alpha0 + post.n;
  double kept_weight = 0.0;
  for (int k = 0; k < post.k; ++k) {
    const double weight = (post.alpha0 + post.nk[k]) / denom;
    if (weight < prune_below) continue;
    MatrixXd precision = post.nu[k] * post.w[k];
    const auto llt = detail::robust_llt(precision, "expected_mixture precision");
    MatrixXd cov = llt.solve(MatrixXd::Identity(post.dim, post.dim));
    cov = 0.5 * (cov + cov.transpose());
    mix.weights.push_back(weight);
    mix.means.push_back(post.m[k]);
    mix.covariances.push_back(std::move(cov));
    kept_weight += weight;
  }
  if (mix.weights.empty())
    throw ValidationError("expected_mixture: all components pruned (threshold too high)");
  for (double& w : mix.weights) w /= kept_weight;
  return mix;
}

}  // namespace ecoroute
