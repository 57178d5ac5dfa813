#pragma once

// Plate-trend surface: a low-order bivariate polynomial per sensor channel
// capturing fixed intensity trends across the build plate (optic artifacts).
// Normalization divides each channel by trend/mean(trend) so the global
// signal scale is preserved.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "meltmon/errors.hpp"
#include "meltmon/sensor_stream.hpp"

namespace meltmon {

// Total-degree monomial basis {x^i y^j : i + j <= degree}, graded
// lexicographic: 1; x, y; x^2, xy, y^2; ...
inline std::vector<std::pair<int, int>> trend_basis(int degree) {
  std::vector<std::pair<int, int>> exps;
  for (int total = 0; total <= degree; ++total)
    for (int i = total; i >= 0; --i) exps.emplace_back(i, total - i);
  return exps;
}

class PlateTrendMap {
 public:
  // coeffs: one coefficient vector per channel, aligned with trend_basis(degree).
  // domain: {x_min, x_max, y_min, y_max} rectangle the fit is valid over.
  PlateTrendMap(int degree, std::vector<std::vector<double>> coeffs,
                std::array<double, 4> domain, std::vector<double> rms_residual)
      : degree_(degree),
        basis_(trend_basis(degree)),
        coeffs_(std::move(coeffs)),
        domain_(domain),
        rms_residual_(std::move(rms_residual)) {
    require(!coeffs_.empty(), Errc::InvalidArgument, "trend needs >= 1 channel");
    for (const auto& c : coeffs_)
      require(c.size() == basis_.size(), Errc::InvalidArgument,
              "coefficient count does not match basis");
  }

  int degree() const { return degree_; }
  std::size_t channel_count() const { return coeffs_.size(); }
  const std::vector<std::vector<double>>& coefficients() const { return coeffs_; }
  const std::array<double, 4>& domain() const { return domain_; }
  const std::vector<double>& rms_residual() const { return rms_residual_; }

  double evaluate(std::size_t channel, double x, double y) const {
    const auto& c = coeffs_[channel];
    double v = 0.0;
    for (std::size_t t = 0; t < basis_.size(); ++t)
      v += c[t] * powi(x, basis_[t].first) * powi(y, basis_[t].second);
    return v;
  }

  // Analytic mean of the surface over the domain rectangle. Mean of x^i over
  // [a,b] is (b^{i+1} - a^{i+1}) / ((i+1)(b-a)), degenerating to a^i when the
  // interval collapses.
  double domain_mean(std::size_t channel) const {
    const auto& c = coeffs_[channel];
    double m = 0.0;
    for (std::size_t t = 0; t < basis_.size(); ++t)
      m += c[t] * interval_moment(domain_[0], domain_[1], basis_[t].first) *
           interval_moment(domain_[2], domain_[3], basis_[t].second);
    return m;
  }

 private:
  static double powi(double v, int e) {
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= v;
    return r;
  }

  static double interval_moment(double a, double b, int e) {
    if (a == b) return powi(a, e);
    return (powi(b, e + 1) - powi(a, e + 1)) / ((e + 1) * (b - a));
  }

  int degree_;
  std::vector<std::pair<int, int>> basis_;
  std::vector<std::vector<double>> coeffs_;
  std::array<double, 4> domain_;
  std::vector<double> rms_residual_;
};

namespace detail {

inline void check_trend_positive(const PlateTrendMap& trend) {
  // Dense grid over the domain, corners included. Low-order surfaces cannot
  // dip between adjacent nodes without going near zero at one of them; every
  // normalize() evaluation re-checks pointwise regardless.
  constexpr int kGrid = 64;
  const auto& d = trend.domain();
  for (std::size_t ch = 0; ch < trend.channel_count(); ++ch) {
    for (int ix = 0; ix <= kGrid; ++ix) {
      const double x = d[0] + (d[1] - d[0]) * ix / kGrid;
      for (int iy = 0; iy <= kGrid; ++iy) {
        const double y = d[2] + (d[3] - d[2]) * iy / kGrid;
        if (!(trend.evaluate(ch, x, y) > 0.0)) {
          fail(Errc::NonPositiveTrend,
               "channel " + std::to_string(ch) + " trend <= 0 near (" +
                   std::to_string(x) + ", " + std::to_string(y) + ")");
        }
      }
    }
  }
}

}  // namespace detail

// Least-squares fit of the per-channel plate trend on steady-state samples
// (k > k_t). Requires at least (degree+1)^2 spatially distinct locations.
inline PlateTrendMap fit_plate_trend(const StrikeSegmentedStream& samples, int degree,
                                     std::int32_t k_t = 45) {
  require(degree >= 0, Errc::InvalidArgument, "degree must be >= 0");
  std::vector<std::size_t> rows;
  std::set<std::pair<double, double>> locations;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples.k(i) <= k_t) continue;
    rows.push_back(i);
    locations.emplace(samples.x_mm(i), samples.y_mm(i));
  }
  const std::size_t needed =
      static_cast<std::size_t>(degree + 1) * static_cast<std::size_t>(degree + 1);
  if (locations.size() < needed) {
    fail(Errc::InsufficientSpatialCoverage,
         std::to_string(locations.size()) + " distinct steady-state locations, need >= " +
             std::to_string(needed) + " for degree " + std::to_string(degree));
  }

  const auto basis = trend_basis(degree);
  Eigen::MatrixXd design(rows.size(), basis.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double x = samples.x_mm(rows[r]);
    const double y = samples.y_mm(rows[r]);
    for (std::size_t t = 0; t < basis.size(); ++t)
      design(r, t) = std::pow(x, basis[t].first) * std::pow(y, basis[t].second);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);

  std::vector<std::vector<double>> coeffs(samples.sensor_count());
  std::vector<double> rms(samples.sensor_count());
  Eigen::VectorXd rhs(rows.size());
  for (std::size_t ch = 0; ch < samples.sensor_count(); ++ch) {
    for (std::size_t r = 0; r < rows.size(); ++r)
      rhs(r) = samples.intensity(rows[r], ch);
    Eigen::VectorXd beta = qr.solve(rhs);
    coeffs[ch].assign(beta.data(), beta.data() + beta.size());
    rms[ch] = std::sqrt((design * beta - rhs).squaredNorm() / rows.size());
  }

  std::array<double, 4> domain{samples.x_mm(rows.front()), samples.x_mm(rows.front()),
                               samples.y_mm(rows.front()), samples.y_mm(rows.front())};
  for (std::size_t r : rows) {
    domain[0] = std::min(domain[0], samples.x_mm(r));
    domain[1] = std::max(domain[1], samples.x_mm(r));
    domain[2] = std::min(domain[2], samples.y_mm(r));
    domain[3] = std::max(domain[3], samples.y_mm(r));
  }

  PlateTrendMap trend(degree, std::move(coeffs), domain, std::move(rms));
  detail::check_trend_positive(trend);
  return trend;
}

// Divides each channel by trend(x,y)/mean(trend): multiplicative artifact
// removal that keeps the global scale. Structure (k, positions, ids) is
// untouched.
inline StrikeSegmentedStream normalize(const StrikeSegmentedStream& samples,
                                       const PlateTrendMap& trend) {
  if (trend.channel_count() != samples.sensor_count()) {
    fail(Errc::ChannelCountMismatch,
         "trend has " + std::to_string(trend.channel_count()) + " channels, stream has " +
             std::to_string(samples.sensor_count()));
  }
  std::vector<double> mean(trend.channel_count());
  for (std::size_t ch = 0; ch < trend.channel_count(); ++ch) {
    mean[ch] = trend.domain_mean(ch);
    require(mean[ch] > 0.0, Errc::NonPositiveTrend, "trend mean <= 0");
  }
  StrikeSegmentedStream out = samples;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t ch = 0; ch < samples.sensor_count(); ++ch) {
      const double t = trend.evaluate(ch, samples.x_mm(i), samples.y_mm(i));
      if (!(t > 0.0)) {
        fail(Errc::NonPositiveTrend, "trend <= 0 at sample " + std::to_string(i));
      }
      out.set_intensity(i, ch, samples.intensity(i, ch) * (mean[ch] / t));
    }
  }
  return out;
}

}  // namespace meltmon
