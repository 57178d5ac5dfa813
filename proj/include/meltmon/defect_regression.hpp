#pragma once

// Part-level defect-severity regression.
//
// Eight candidate features per part — laser power p, scan speed s, focus f,
// linear energy density p/s, hatch spacing h, and three aggregated sensor
// statistics (part mean, part standard deviation, standard deviation of the
// layer-wise means) — feed a forward/backward stepwise OLS with partial-F
// p-value gates and a variance-inflation-factor cap on the selected set.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "meltmon/errors.hpp"
#include "meltmon/sensor_stream.hpp"

namespace meltmon {

inline constexpr std::array<const char*, 8> kFeatureNames = {
    "p", "s", "f", "eds", "h", "mu_part", "sigma_part", "sigma_mu_layer"};
inline constexpr std::size_t kFeatureCount = kFeatureNames.size();

inline std::size_t feature_index(const std::string& name) {
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    if (name == kFeatureNames[i]) return i;
  fail(Errc::InvalidArgument, "unknown feature name " + name);
}

struct PartFeatures {
  std::int32_t part_id = 0;
  double p = 0.0;   // laser power, W
  double s = 0.0;   // scan speed, mm/s
  double f = 0.0;   // focus, machine units
  double h = 0.0;   // hatch spacing, mm
  double mu_part = 0.0;
  double sigma_part = 0.0;
  double sigma_mu_layer = 0.0;

  double eds() const { return p / s; }  // linear energy density, J/mm

  void validate() const {
    require(p > 0.0 && s > 0.0 && h > 0.0, Errc::InvalidArgument,
            "p, s, h must be > 0");
    require(sigma_part >= 0.0 && sigma_mu_layer >= 0.0, Errc::InvalidArgument,
            "standard deviations must be >= 0");
  }

  std::array<double, kFeatureCount> feature_vector() const {
    return {p, s, f, eds(), h, mu_part, sigma_part, sigma_mu_layer};
  }
};

enum class DefectKind { Pore, LackOfFusion, Crack };

inline const char* defect_kind_name(DefectKind k) {
  switch (k) {
    case DefectKind::Pore: return "Pore";
    case DefectKind::LackOfFusion: return "LackOfFusion";
    case DefectKind::Crack: return "Crack";
  }
  return "?";
}

inline DefectKind parse_defect_kind(const std::string& s) {
  if (s == "Pore") return DefectKind::Pore;
  if (s == "LackOfFusion") return DefectKind::LackOfFusion;
  if (s == "Crack") return DefectKind::Crack;
  fail(Errc::InvalidArgument, "unknown defect kind " + s);
}

struct DefectRecord {
  std::int32_t part_id = 0;
  DefectKind kind = DefectKind::Pore;
  double score = 0.0;  // area fraction in [0, 1]

  void validate() const {
    require(score >= 0.0 && score <= 1.0, Errc::InvalidArgument,
            "defect score must be in [0, 1]");
  }
};

// Part-wise aggregation of one intensity channel: mean over all the part's
// samples, their standard deviation (n-1), and the standard deviation of
// the per-layer means.
inline PartFeatures extract_part_features(const StrikeSegmentedStream& part_samples,
                                          double p, double s, double f, double h,
                                          std::size_t channel = 0) {
  require(channel < part_samples.sensor_count(), Errc::ChannelCountMismatch,
          "designated channel does not exist");
  const auto layers = part_samples.distinct_layers();
  require(layers.size() >= 2, Errc::TooFewLayers,
          std::to_string(layers.size()) + " layers, need >= 2");

  std::map<std::int32_t, std::pair<long double, std::size_t>> layer_sums;
  long double sum = 0.0L;
  for (std::size_t i = 0; i < part_samples.size(); ++i) {
    const double v = part_samples.intensity(i, channel);
    sum += v;
    auto& [ls, ln] = layer_sums[part_samples.layer(i)];
    ls += v;
    ++ln;
  }
  for (const auto& [layer, agg] : layer_sums) {
    require(agg.second >= 2, Errc::TooFewSamples,
            "layer " + std::to_string(layer) + " has " + std::to_string(agg.second) +
                " samples, need >= 2");
  }

  const auto n = static_cast<long double>(part_samples.size());
  const long double mean = sum / n;
  long double ss = 0.0L;
  for (std::size_t i = 0; i < part_samples.size(); ++i) {
    const long double d = part_samples.intensity(i, channel) - mean;
    ss += d * d;
  }

  long double layer_mean_sum = 0.0L;
  for (const auto& [layer, agg] : layer_sums)
    layer_mean_sum += agg.first / static_cast<long double>(agg.second);
  const long double layer_mean = layer_mean_sum / static_cast<long double>(layer_sums.size());
  long double layer_ss = 0.0L;
  for (const auto& [layer, agg] : layer_sums) {
    const long double d = agg.first / static_cast<long double>(agg.second) - layer_mean;
    layer_ss += d * d;
  }

  PartFeatures out;
  out.part_id = part_samples.empty() ? 0 : part_samples.part_id(0);
  out.p = p;
  out.s = s;
  out.f = f;
  out.h = h;
  out.mu_part = static_cast<double>(mean);
  out.sigma_part = static_cast<double>(std::sqrt(ss / (n - 1.0L)));
  out.sigma_mu_layer = static_cast<double>(
      std::sqrt(layer_ss / (static_cast<long double>(layer_sums.size()) - 1.0L)));
  out.validate();
  return out;
}

// --- ordinary least squares -------------------------------------------------

namespace detail {

struct OlsFit {
  Eigen::VectorXd beta;      // includes trailing intercept coefficient
  Eigen::MatrixXd xtx_inv;   // (X^T X)^{-1}
  double ss_res = 0.0;
  double ss_tot = 0.0;
  double sigma2 = 0.0;       // residual variance, SS_res / dof
  std::ptrdiff_t dof = 0;    // n - #columns
  bool full_rank = true;

  double r_squared() const { return ss_tot == 0.0 ? 0.0 : 1.0 - ss_res / ss_tot; }
};

// X must already contain the intercept column. Rank deficiency is reported,
// not thrown; callers decide.
inline OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  OlsFit fit;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  fit.full_rank = qr.rank() == x.cols();
  fit.beta = qr.solve(y);
  const Eigen::VectorXd resid = y - x * fit.beta;
  fit.ss_res = resid.squaredNorm();
  const double mean = y.mean();
  fit.ss_tot = (y.array() - mean).matrix().squaredNorm();
  fit.dof = x.rows() - x.cols();
  fit.sigma2 = fit.dof > 0 ? fit.ss_res / static_cast<double>(fit.dof) : 0.0;
  if (fit.full_rank) {
    fit.xtx_inv = (x.transpose() * x)
                      .ldlt()
                      .solve(Eigen::MatrixXd::Identity(x.cols(), x.cols()));
  }
  return fit;
}

// Two-sided p-value of coefficient j from the t statistic beta_j / se_j
// (identical to the single-degree partial-F test).
inline double coefficient_p_value(const OlsFit& fit, Eigen::Index j) {
  if (fit.dof <= 0) return 1.0;
  const double se2 = fit.sigma2 * fit.xtx_inv(j, j);
  if (!(se2 > 0.0)) return 0.0;  // exact fit: the coefficient is pinned
  const double t = fit.beta(j) / std::sqrt(se2);
  if (!std::isfinite(t)) return 0.0;
  boost::math::students_t dist(static_cast<double>(fit.dof));
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setOnes();
  return out;
}

}  // namespace detail

// Variance inflation factor of design column j: 1 / (1 - R^2_j) where R^2_j
// regresses column j on the remaining columns plus an intercept. Perfect
// collinearity (R^2_j >= 1 - 1e-12) yields +inf rather than an error.
inline double vif(const Eigen::MatrixXd& design, Eigen::Index column) {
  require(design.cols() >= 2, Errc::InvalidArgument, "vif needs >= 2 columns");
  require(design.rows() > design.cols(), Errc::InsufficientSamples,
          "vif needs more rows than columns");
  require(column >= 0 && column < design.cols(), Errc::InvalidArgument,
          "vif column out of range");

  Eigen::MatrixXd others(design.rows(), design.cols() - 1);
  Eigen::Index c = 0;
  for (Eigen::Index j = 0; j < design.cols(); ++j)
    if (j != column) others.col(c++) = design.col(j);

  const Eigen::VectorXd target = design.col(column);
  const auto fit = detail::ols(detail::with_intercept(others), target);
  if (fit.ss_tot == 0.0) return std::numeric_limits<double>::infinity();
  const double r2 = 1.0 - fit.ss_res / fit.ss_tot;
  if (r2 >= 1.0 - 1e-12) return std::numeric_limits<double>::infinity();
  return 1.0 / (1.0 - r2);
}

struct StepwiseConfig {
  double p_enter = 0.05;
  double p_remove = 0.10;
  double vif_max = 10.0;
  bool standardize = false;  // fit on z-scored features; coefficients are
                             // reported back on raw scales
};

struct SelectedFeature {
  std::size_t index = 0;     // into kFeatureNames
  double coefficient = 0.0;
  double p_value = 1.0;
  double vif = 1.0;

  const char* name() const { return kFeatureNames[index]; }
};

struct DefectRegressor {
  DefectKind kind = DefectKind::Pore;
  std::vector<SelectedFeature> selected;  // in selection order
  double intercept = 0.0;
  double r_squared = 0.0;
  bool no_feature_selected = false;

  // Linear combination of the selected features, clamped to the physical
  // defect-fraction range.
  double predict(const PartFeatures& feats) const {
    const auto v = feats.feature_vector();
    double y = intercept;
    for (const auto& sf : selected) y += sf.coefficient * v[sf.index];
    return std::clamp(y, 0.0, 1.0);
  }
};

// Forward/backward stepwise OLS over the canonical feature set.
//
// Forward: among candidates whose inclusion keeps every selected VIF within
// vif_max (and the design full-rank), take the one with the smallest
// partial-F p-value; it enters if p * (#candidates evaluated) < p_enter
// (Bonferroni across the candidates tested this step — without it, pure
// noise enters a feature in roughly a third of runs). Backward: drop any
// selected feature whose p-value exceeds p_remove, worst first. Stops when
// no move is possible or the fit is already exact (R^2 within 1e-12 of 1),
// where further partial-F values are numerically meaningless.
inline DefectRegressor stepwise_ols(const std::vector<PartFeatures>& table,
                                    const std::vector<DefectRecord>& targets,
                                    const StepwiseConfig& config = {}) {
  require(targets.size() == table.size(), Errc::LengthMismatch,
          "feature rows and targets differ in length");
  require(!table.empty(), Errc::InsufficientSamples, "empty feature table");
  const std::size_t n = table.size();
  require(n >= kFeatureCount + 3, Errc::InsufficientSamples,
          std::to_string(n) + " rows; need >= candidate features + 3 = " +
              std::to_string(kFeatureCount + 3));
  const DefectKind kind = targets.front().kind;
  for (const auto& t : targets) {
    t.validate();
    require(t.kind == kind, Errc::InvalidArgument,
            "stepwise_ols fits one defect kind at a time");
  }
  for (const auto& row : table) row.validate();

  Eigen::MatrixXd all(n, kFeatureCount);
  Eigen::VectorXd y(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto v = table[r].feature_vector();
    for (std::size_t c = 0; c < kFeatureCount; ++c) all(r, c) = v[c];
    y(r) = targets[r].score;
  }

  // Optional z-scoring; selection and p-values are scale-invariant, this
  // only conditions the numerics. Coefficients are mapped back afterwards.
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(kFeatureCount);
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(kFeatureCount);
  if (config.standardize) {
    for (std::size_t c = 0; c < kFeatureCount; ++c) {
      offset(c) = all.col(c).mean();
      const double sd = std::sqrt((all.col(c).array() - offset(c)).square().sum() /
                                  static_cast<double>(n - 1));
      scale(c) = sd > 0.0 ? sd : 1.0;
      all.col(c) = (all.col(c).array() - offset(c)) / scale(c);
    }
  }

  std::vector<std::size_t> selected;
  auto design_for = [&](const std::vector<std::size_t>& cols) {
    Eigen::MatrixXd x(n, cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c) x.col(c) = all.col(cols[c]);
    return x;
  };

  auto fit_current = [&](const std::vector<std::size_t>& cols) {
    return detail::ols(detail::with_intercept(design_for(cols)), y);
  };

  const std::size_t max_rounds = 4 * kFeatureCount * kFeatureCount;
  for (std::size_t round = 0; round < max_rounds; ++round) {
    bool changed = false;

    // Forward step.
    const double current_r2 = selected.empty() ? 0.0 : fit_current(selected).r_squared();
    if (current_r2 < 1.0 - 1e-12) {
      std::size_t best_feature = kFeatureCount;
      double best_p = std::numeric_limits<double>::infinity();
      std::size_t evaluated = 0;
      for (std::size_t cand = 0; cand < kFeatureCount; ++cand) {
        if (std::find(selected.begin(), selected.end(), cand) != selected.end())
          continue;
        std::vector<std::size_t> trial = selected;
        trial.push_back(cand);
        const Eigen::MatrixXd xt = design_for(trial);
        const auto fit = detail::ols(detail::with_intercept(xt), y);
        if (!fit.full_rank) continue;
        if (trial.size() >= 2 && std::isfinite(config.vif_max)) {
          bool vif_ok = true;
          for (std::size_t c = 0; c < trial.size() && vif_ok; ++c)
            vif_ok = vif(xt, static_cast<Eigen::Index>(c)) <= config.vif_max;
          if (!vif_ok) continue;
        }
        ++evaluated;
        const double p = detail::coefficient_p_value(
            fit, static_cast<Eigen::Index>(trial.size() - 1));
        if (p < best_p) {
          best_p = p;
          best_feature = cand;
        }
      }
      if (best_feature < kFeatureCount &&
          best_p * static_cast<double>(evaluated) < config.p_enter) {
        selected.push_back(best_feature);
        changed = true;
      }
    }

    // Backward step: prune until everything selected is significant.
    while (!selected.empty()) {
      const auto fit = fit_current(selected);
      double worst_p = -1.0;
      std::size_t worst = selected.size();
      for (std::size_t c = 0; c < selected.size(); ++c) {
        const double p = detail::coefficient_p_value(fit, static_cast<Eigen::Index>(c));
        if (p > worst_p) {
          worst_p = p;
          worst = c;
        }
      }
      if (worst < selected.size() && worst_p > config.p_remove) {
        selected.erase(selected.begin() + static_cast<std::ptrdiff_t>(worst));
        changed = true;
      } else {
        break;
      }
    }

    if (!changed) break;
  }

  DefectRegressor reg;
  reg.kind = kind;
  if (selected.empty()) {
    reg.no_feature_selected = true;
    reg.intercept = y.mean();
    reg.r_squared = 0.0;
    return reg;
  }

  const Eigen::MatrixXd x = design_for(selected);
  const auto fit = detail::ols(detail::with_intercept(x), y);
  require(fit.full_rank, Errc::RankDeficient, "selected design is rank deficient");
  reg.r_squared = fit.r_squared();
  double intercept = fit.beta(static_cast<Eigen::Index>(selected.size()));
  for (std::size_t c = 0; c < selected.size(); ++c) {
    SelectedFeature sf;
    sf.index = selected[c];
    const double raw_coef = fit.beta(static_cast<Eigen::Index>(c));
    sf.coefficient = raw_coef / scale(selected[c]);
    intercept -= raw_coef * offset(selected[c]) / scale(selected[c]);
    sf.p_value = detail::coefficient_p_value(fit, static_cast<Eigen::Index>(c));
    sf.vif = selected.size() >= 2 ? vif(x, static_cast<Eigen::Index>(c)) : 1.0;
    reg.selected.push_back(sf);
  }
  reg.intercept = intercept;
  return reg;
}

inline double r_squared(std::span<const double> predicted,
                        std::span<const double> actual) {
  require(predicted.size() == actual.size(), Errc::LengthMismatch,
          "prediction/actual length mismatch");
  require(!actual.empty(), Errc::InvalidArgument, "empty inputs");
  long double mean = 0.0L;
  for (double a : actual) mean += a;
  mean /= static_cast<long double>(actual.size());
  long double ss_tot = 0.0L;
  long double ss_res = 0.0L;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const long double dt = actual[i] - mean;
    const long double dr = actual[i] - predicted[i];
    ss_tot += dt * dt;
    ss_res += dr * dr;
  }
  require(ss_tot > 0.0L, Errc::ConstantActual, "actual values are constant");
  return static_cast<double>(1.0L - ss_res / ss_tot);
}

}  // namespace meltmon
