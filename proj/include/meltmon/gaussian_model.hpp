#pragma once

// Per-sample-index multivariate Gaussian process models.
//
// A ProcessModel stores one (mean, covariance) pair for every laser-on index
// k = 1..k_T (the transient) plus a single pooled pair for all k > k_T (the
// steady state). Covariance inverses and log-determinants are precomputed at
// construction so classification never factorizes in the hot path.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meltmon/errors.hpp"
#include "meltmon/sensor_stream.hpp"

namespace meltmon {

inline constexpr std::int32_t kDefaultTransientLength = 45;

struct FitOptions {
  double regularization_eps = 1e-6;  // relative to trace(Sigma)/S
  double absolute_eps = 1e-12;       // floor used when trace(Sigma) == 0
  std::size_t n_min = 30;            // minimum training samples per stored k
};

// One Gaussian law: N(mean, cov) with cached inverse, log|cov| and the
// normalization constant of its log-density.
class GaussianParams {
 public:
  GaussianParams() = default;

  GaussianParams(Eigen::VectorXd mean, Eigen::MatrixXd cov, std::size_t n_train)
      : mean_(std::move(mean)), cov_(std::move(cov)), n_train_(n_train) {
    const auto s = mean_.size();
    require(s >= 1, Errc::InvalidArgument, "empty mean vector");
    require(cov_.rows() == s && cov_.cols() == s, Errc::DimensionMismatch,
            "covariance shape does not match mean");
    const double asym = (cov_ - cov_.transpose()).cwiseAbs().maxCoeff();
    const double scale = std::max(1.0, cov_.cwiseAbs().maxCoeff());
    require(asym <= 1e-12 * scale, Errc::DegenerateCovariance,
            "covariance not symmetric");
    cov_ = ((cov_ + cov_.transpose()) / 2.0).eval();

    Eigen::LLT<Eigen::MatrixXd> llt(cov_);
    require(llt.info() == Eigen::Success, Errc::DegenerateCovariance,
            "covariance not positive definite");
    log_det_ = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    cov_inv_ = llt.solve(Eigen::MatrixXd::Identity(s, s));
    cov_inv_ = ((cov_inv_ + cov_inv_.transpose()) / 2.0).eval();
    log_norm_ = -0.5 * (static_cast<double>(s) * std::log(2.0 * std::numbers::pi) +
                        log_det_);
  }

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& cov() const { return cov_; }
  const Eigen::MatrixXd& cov_inverse() const { return cov_inv_; }
  double log_det() const { return log_det_; }
  std::size_t n_train() const { return n_train_; }
  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }

  double mahalanobis_sq(const double* x) const {
    const std::size_t s = dim();
    double q = 0.0;
    for (std::size_t i = 0; i < s; ++i) {
      const double di = x[i] - mean_(i);
      q += di * di * cov_inv_(i, i);
      for (std::size_t j = i + 1; j < s; ++j)
        q += 2.0 * di * cov_inv_(i, j) * (x[j] - mean_(j));
    }
    return q;
  }

  // log N(x; mean, cov)
  double log_density(const double* x) const { return log_norm_ - 0.5 * mahalanobis_sq(x); }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd cov_inv_;
  double log_det_ = 0.0;
  double log_norm_ = 0.0;
  std::size_t n_train_ = 0;
};

class ProcessModel {
 public:
  // Direct construction from explicit parameters (model files, analytic
  // models, tests). transient[k-1] is the law at index k; steady covers all
  // k > k_T. Covariances are validated SPD as given, no regularization.
  ProcessModel(std::string label, std::int32_t k_t, std::vector<GaussianParams> transient,
               GaussianParams steady)
      : label_(std::move(label)),
        k_t_(k_t),
        transient_(std::move(transient)),
        steady_(std::move(steady)) {
    require(!label_.empty(), Errc::InvalidArgument, "model label must be non-empty");
    require(label_.find_first_of(" \t\n\r") == std::string::npos, Errc::InvalidArgument,
            "model label must not contain whitespace");
    require(label_ != "UNKNOWN", Errc::InvalidArgument,
            "UNKNOWN is reserved for the unknown hypothesis");
    require(k_t_ >= 0, Errc::InvalidArgument, "k_T must be >= 0");
    require(transient_.size() == static_cast<std::size_t>(k_t_), Errc::InvalidArgument,
            "need exactly k_T transient entries");
    for (const auto& g : transient_)
      require(g.dim() == steady_.dim(), Errc::DimensionMismatch,
              "transient/steady dimension mismatch");
  }

  // Estimates a model from normalized training data: per-k sample mean and
  // covariance (n-1 denominator) for k <= k_T, pooled parameters for k > k_T.
  // Each covariance gets += eps*I with eps = regularization_eps*trace/S
  // (absolute_eps when the trace is exactly zero).
  static ProcessModel fit(const StrikeSegmentedStream& training, std::int32_t k_t,
                          std::string label, const FitOptions& opt = {});

  const std::string& label() const { return label_; }
  std::int32_t transient_length() const { return k_t_; }
  std::size_t sensor_count() const { return steady_.dim(); }

  // Total lookup: transient entry for k <= k_T, pooled steady entry beyond.
  const GaussianParams& params_at(std::int32_t k) const {
    return (k <= k_t_ && k >= 1) ? transient_[static_cast<std::size_t>(k) - 1] : steady_;
  }
  const std::vector<GaussianParams>& transient() const { return transient_; }
  const GaussianParams& steady() const { return steady_; }

  double log_likelihood(std::span<const double> x, std::int32_t k) const {
    if (x.size() != sensor_count()) {
      fail(Errc::DimensionMismatch,
           "x has " + std::to_string(x.size()) + " channels, model has " +
               std::to_string(sensor_count()));
    }
    return params_at(k).log_density(x.data());
  }

 private:
  std::string label_;
  std::int32_t k_t_ = kDefaultTransientLength;
  std::vector<GaussianParams> transient_;
  GaussianParams steady_;
};

namespace detail {

// Mean/covariance accumulator with extended-precision sums so the stored
// parameters are invariant (to ~1e-12) under permutation of the input order.
class MomentAccumulator {
 public:
  explicit MomentAccumulator(std::size_t dim)
      : dim_(dim), sum_(dim, 0.0L), cross_(dim * dim, 0.0L) {}

  void add(std::span<const double> x) {
    ++n_;
    for (std::size_t i = 0; i < dim_; ++i) sum_[i] += static_cast<long double>(x[i]);
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = i; j < dim_; ++j)
        cross_[i * dim_ + j] +=
            static_cast<long double>(x[i]) * static_cast<long double>(x[j]);
  }

  std::size_t count() const { return n_; }

  Eigen::VectorXd mean() const {
    Eigen::VectorXd m(dim_);
    for (std::size_t i = 0; i < dim_; ++i)
      m(i) = static_cast<double>(sum_[i] / static_cast<long double>(n_));
    return m;
  }

  // Sample covariance with n-1 denominator.
  Eigen::MatrixXd covariance() const {
    Eigen::MatrixXd c(dim_, dim_);
    const long double n = static_cast<long double>(n_);
    for (std::size_t i = 0; i < dim_; ++i) {
      for (std::size_t j = i; j < dim_; ++j) {
        const long double num = cross_[i * dim_ + j] - sum_[i] * sum_[j] / n;
        const double v = static_cast<double>(num / (n - 1.0L));
        c(i, j) = v;
        c(j, i) = v;
      }
    }
    return c;
  }

 private:
  std::size_t dim_;
  std::size_t n_ = 0;
  std::vector<long double> sum_;
  std::vector<long double> cross_;
};

inline Eigen::MatrixXd regularize(Eigen::MatrixXd cov, const FitOptions& opt) {
  const double trace = cov.trace();
  const double eps = trace == 0.0
                         ? opt.absolute_eps
                         : opt.regularization_eps * trace / static_cast<double>(cov.rows());
  cov.diagonal().array() += eps;
  return cov;
}

}  // namespace detail

inline ProcessModel ProcessModel::fit(const StrikeSegmentedStream& training,
                                      std::int32_t k_t, std::string label,
                                      const FitOptions& opt) {
  require(k_t >= 1, Errc::InvalidArgument, "k_T must be >= 1 for fitting");
  const std::size_t s = training.sensor_count();
  std::vector<detail::MomentAccumulator> transient(
      static_cast<std::size_t>(k_t), detail::MomentAccumulator(s));
  detail::MomentAccumulator steady(s);

  for (std::size_t i = 0; i < training.size(); ++i) {
    const std::int32_t k = training.k(i);
    if (k <= k_t) {
      transient[static_cast<std::size_t>(k) - 1].add(training.intensity(i));
    } else {
      steady.add(training.intensity(i));
    }
  }

  for (std::int32_t k = 1; k <= k_t; ++k) {
    const auto& acc = transient[static_cast<std::size_t>(k) - 1];
    if (acc.count() < opt.n_min) {
      fail(Errc::InsufficientSamplesAtIndex,
           "k=" + std::to_string(k) + ": " + std::to_string(acc.count()) +
               " samples, need >= " + std::to_string(opt.n_min));
    }
  }
  if (steady.count() < opt.n_min) {
    fail(Errc::InsufficientSamplesAtIndex,
         "steady state (k>" + std::to_string(k_t) + "): " +
             std::to_string(steady.count()) + " samples, need >= " +
             std::to_string(opt.n_min));
  }

  std::vector<GaussianParams> entries;
  entries.reserve(static_cast<std::size_t>(k_t));
  for (std::int32_t k = 1; k <= k_t; ++k) {
    const auto& acc = transient[static_cast<std::size_t>(k) - 1];
    entries.emplace_back(acc.mean(), detail::regularize(acc.covariance(), opt),
                         acc.count());
  }
  GaussianParams pooled(steady.mean(), detail::regularize(steady.covariance(), opt),
                        steady.count());
  return ProcessModel(std::move(label), k_t, std::move(entries), std::move(pooled));
}

// M process models plus the "unknown" hypothesis: priors over M+1 hypotheses
// (last entry is the unknown's) and the per-sample log-likelihood floor that
// defines the unknown model.
class ModelSet {
 public:
  ModelSet(std::vector<ProcessModel> models, std::vector<double> priors,
           double log_p_unk_per_sample)
      : models_(std::move(models)),
        priors_(std::move(priors)),
        log_p_unk_per_sample_(log_p_unk_per_sample) {
    require(!models_.empty(), Errc::InvalidArgument, "model set needs >= 1 model");
    require(priors_.size() == models_.size() + 1, Errc::LengthMismatch,
            "need M+1 priors (last = unknown)");
    const std::size_t s = models_.front().sensor_count();
    const std::int32_t kt = models_.front().transient_length();
    for (const auto& m : models_) {
      require(m.sensor_count() == s, Errc::DimensionMismatch,
              "models must share sensor count");
      require(m.transient_length() == kt, Errc::InvalidArgument,
              "models must share k_T");
    }
    for (std::size_t i = 0; i + 1 < models_.size(); ++i)
      for (std::size_t j = i + 1; j < models_.size(); ++j)
        require(models_[i].label() != models_[j].label(), Errc::InvalidArgument,
                "duplicate model label " + models_[i].label());
    double sum = 0.0;
    for (double p : priors_) {
      require(p > 0.0, Errc::InvalidArgument, "priors must be strictly positive");
      sum += p;
    }
    require(std::abs(sum - 1.0) <= 1e-12, Errc::InvalidArgument,
            "priors must sum to 1 within 1e-12");
  }

  static std::vector<double> uniform_priors(std::size_t model_count) {
    std::vector<double> p(model_count + 1);
    // Exact sum to 1: assign 1/(M+1) and put the closure in the last slot.
    const double u = 1.0 / static_cast<double>(model_count + 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < model_count; ++i) {
      p[i] = u;
      acc += u;
    }
    p[model_count] = 1.0 - acc;
    return p;
  }

  std::size_t model_count() const { return models_.size(); }
  std::size_t hypothesis_count() const { return models_.size() + 1; }
  std::size_t sensor_count() const { return models_.front().sensor_count(); }
  std::int32_t transient_length() const { return models_.front().transient_length(); }
  const std::vector<ProcessModel>& models() const { return models_; }
  const ProcessModel& model(std::size_t i) const { return models_[i]; }
  const std::vector<double>& priors() const { return priors_; }
  double log_p_unk_per_sample() const { return log_p_unk_per_sample_; }

  const ProcessModel* find(const std::string& label) const {
    for (const auto& m : models_)
      if (m.label() == label) return &m;
    return nullptr;
  }

  // Model labels followed by "UNKNOWN": the M+1 class labels in hypothesis order.
  std::vector<std::string> class_labels() const {
    std::vector<std::string> out;
    out.reserve(hypothesis_count());
    for (const auto& m : models_) out.push_back(m.label());
    out.emplace_back("UNKNOWN");
    return out;
  }

  ModelSet with_priors(std::vector<double> priors) const {
    return ModelSet(models_, std::move(priors), log_p_unk_per_sample_);
  }
  ModelSet with_unknown_floor(double log_floor) const {
    return ModelSet(models_, priors_, log_floor);
  }

 private:
  std::vector<ProcessModel> models_;
  std::vector<double> priors_;
  double log_p_unk_per_sample_;
};

}  // namespace meltmon
