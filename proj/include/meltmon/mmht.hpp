#pragma once

// Multiple-model hypothesis test.
//
// Measurements are grouped into kernels (whole layer, spatial squares, or
// per part); each kernel's log-likelihood under every process model is the
// sum of per-sample Gaussian log-densities at the sample's own laser-on
// index, the "unknown" hypothesis puts a tunable per-sample floor under all
// of them, and a MAP rule over the resulting posteriors attributes the
// kernel to a model or to UNKNOWN. All probability math stays in the log
// domain; kernels of 1e5+ samples would underflow any direct product.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meltmon/errors.hpp"
#include "meltmon/gaussian_model.hpp"
#include "meltmon/parallel.hpp"
#include "meltmon/sensor_stream.hpp"

namespace meltmon {

inline constexpr double kDefaultSquareSideMm = 0.39;
inline constexpr double kDefaultUnknownQuantile = 0.001;
inline constexpr const char* kUnknownLabel = "UNKNOWN";

struct KernelSelection {
  enum class Kind { Layer, Square, Part };

  Kind kind = Kind::Layer;
  std::vector<std::size_t> indices;  // references into a StrikeSegmentedStream

  // Square descriptor
  std::int32_t grid_i = -1;
  std::int32_t grid_j = -1;
  double center_x_mm = 0.0;
  double center_y_mm = 0.0;
  double side_mm = 0.0;
  // Part descriptor
  std::int32_t part_id = kNoPart;

  std::size_t n() const { return indices.size(); }
};

inline const char* kernel_kind_name(KernelSelection::Kind k) {
  switch (k) {
    case KernelSelection::Kind::Layer: return "layer";
    case KernelSelection::Kind::Square: return "square";
    case KernelSelection::Kind::Part: return "part";
  }
  return "?";
}

// Kernel identity carried alongside a classification (without the index list).
struct KernelDescriptor {
  KernelSelection::Kind kind = KernelSelection::Kind::Layer;
  std::size_t n = 0;
  std::int32_t grid_i = -1;
  std::int32_t grid_j = -1;
  double center_x_mm = 0.0;
  double center_y_mm = 0.0;
  double side_mm = 0.0;
  std::int32_t part_id = kNoPart;

  static KernelDescriptor of(const KernelSelection& k) {
    return {k.kind,        k.n(),         k.grid_i,  k.grid_j,
            k.center_x_mm, k.center_y_mm, k.side_mm, k.part_id};
  }
};

struct Classification {
  std::vector<double> log_posteriors;  // normalized; size M+1, last = unknown
  std::size_t map_index = 0;           // == M means UNKNOWN
  std::string map_label;
  double margin = 0.0;  // gap between the top two log-posteriors
  KernelDescriptor kernel;

  bool is_unknown() const { return map_index + 1 == log_posteriors.size(); }
};

// --- likelihoods ------------------------------------------------------------

inline double log_likelihood_point(std::span<const double> x, const ProcessModel& model,
                                   std::int32_t k) {
  return model.log_likelihood(x, k);
}

inline double kernel_log_likelihood(const StrikeSegmentedStream& stream,
                                    const KernelSelection& kernel,
                                    const ProcessModel& model) {
  require(!kernel.indices.empty(), Errc::EmptyKernel, "kernel has no samples");
  require(stream.sensor_count() == model.sensor_count(), Errc::DimensionMismatch,
          "stream/model sensor count mismatch");
  long double sum = 0.0L;
  for (std::size_t idx : kernel.indices) {
    require(idx < stream.size(), Errc::InvalidArgument, "kernel index out of range");
    sum += model.params_at(stream.k(idx)).log_density(stream.intensity(idx).data());
  }
  return static_cast<double>(sum);
}

inline double unknown_log_likelihood(std::size_t n, double log_p_unk_per_sample) {
  require(n >= 1, Errc::EmptyKernel, "unknown likelihood needs N >= 1");
  return static_cast<double>(n) * log_p_unk_per_sample;
}

// MAP index over log-posteriors with the deterministic tie-break: strict
// improvement only, scanning models first and UNKNOWN last.
inline std::size_t map_index_of(std::span<const double> log_posteriors) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < log_posteriors.size(); ++i)
    if (log_posteriors[i] > log_posteriors[best]) best = i;
  return best;
}

namespace detail {

// Builds the Classification from per-model kernel log-likelihoods: applies
// priors and the unknown floor, normalizes via max-shifted log-sum-exp.
inline Classification classify_from_log_likelihoods(std::span<const double> model_loglik,
                                                    std::size_t n, const ModelSet& set,
                                                    KernelDescriptor descriptor) {
  const std::size_t m = set.model_count();
  std::vector<double> t(m + 1);
  for (std::size_t i = 0; i < m; ++i) t[i] = model_loglik[i] + std::log(set.priors()[i]);
  t[m] = unknown_log_likelihood(n, set.log_p_unk_per_sample()) +
         std::log(set.priors()[m]);

  const double shift = *std::max_element(t.begin(), t.end());
  long double acc = 0.0L;
  for (double v : t) acc += std::exp(static_cast<long double>(v - shift));
  const double lse = shift + static_cast<double>(std::log(acc));

  Classification c;
  c.log_posteriors.resize(m + 1);
  for (std::size_t i = 0; i <= m; ++i) c.log_posteriors[i] = t[i] - lse;
  c.map_index = map_index_of(c.log_posteriors);
  c.map_label = c.map_index == m ? kUnknownLabel : set.model(c.map_index).label();
  double top1 = c.log_posteriors[c.map_index];
  double top2 = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i <= m; ++i)
    if (i != c.map_index) top2 = std::max(top2, c.log_posteriors[i]);
  c.margin = top1 - top2;
  c.kernel = descriptor;
  return c;
}

}  // namespace detail

// Posterior probability of every hypothesis for one kernel, and the MAP call.
inline Classification posteriors(const StrikeSegmentedStream& stream,
                                 const KernelSelection& kernel, const ModelSet& set) {
  require(!kernel.indices.empty(), Errc::EmptyKernel, "kernel has no samples");
  std::vector<double> loglik(set.model_count());
  for (std::size_t i = 0; i < set.model_count(); ++i)
    loglik[i] = kernel_log_likelihood(stream, kernel, set.model(i));
  return detail::classify_from_log_likelihoods(loglik, kernel.n(), set,
                                               KernelDescriptor::of(kernel));
}

// --- kernel construction ----------------------------------------------------

inline KernelSelection build_layer_kernel(const StrikeSegmentedStream& layer) {
  KernelSelection k;
  k.kind = KernelSelection::Kind::Layer;
  k.indices.resize(layer.size());
  for (std::size_t i = 0; i < layer.size(); ++i) k.indices[i] = i;
  return k;
}

inline std::vector<KernelSelection> build_part_kernels(const StrikeSegmentedStream& layer) {
  require(layer.has_part_ids(), Errc::MissingPartIds,
          "part kernels need a part id on every sample");
  std::map<std::int32_t, KernelSelection> by_part;
  for (std::size_t i = 0; i < layer.size(); ++i) {
    auto& k = by_part[layer.part_id(i)];
    k.kind = KernelSelection::Kind::Part;
    k.part_id = layer.part_id(i);
    k.indices.push_back(i);
  }
  std::vector<KernelSelection> out;
  out.reserve(by_part.size());
  for (auto& [id, k] : by_part) out.push_back(std::move(k));
  return out;
}

// Axis-aligned square grid anchored at the bounding-box min corner. Cells are
// half-open: cell i owns x in [x0 + i*side, x0 + (i+1)*side); samples on the
// top/right boundary of the grid fall in the last cell.
struct SquareGrid {
  double x0 = 0.0;
  double y0 = 0.0;
  double side_mm = kDefaultSquareSideMm;
  std::int32_t nx = 0;
  std::int32_t ny = 0;

  static SquareGrid over(const StrikeSegmentedStream& layer, double side_mm) {
    require(side_mm > 0.0, Errc::InvalidArgument, "side_mm must be > 0");
    SquareGrid g;
    g.side_mm = side_mm;
    if (layer.empty()) return g;
    const auto bb = layer.bounding_box();
    g.x0 = bb[0];
    g.y0 = bb[2];
    g.nx = std::max<std::int32_t>(
        1, static_cast<std::int32_t>(std::ceil((bb[1] - bb[0]) / side_mm)));
    g.ny = std::max<std::int32_t>(
        1, static_cast<std::int32_t>(std::ceil((bb[3] - bb[2]) / side_mm)));
    return g;
  }

  std::pair<std::int32_t, std::int32_t> cell_of(double x, double y) const {
    auto clamp = [](std::int32_t v, std::int32_t n) {
      return std::min(std::max(v, 0), n - 1);
    };
    const auto i = static_cast<std::int32_t>(std::floor((x - x0) / side_mm));
    const auto j = static_cast<std::int32_t>(std::floor((y - y0) / side_mm));
    return {clamp(i, nx), clamp(j, ny)};
  }

  std::size_t cell_count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
  }
  std::size_t linear(std::int32_t i, std::int32_t j) const {
    return static_cast<std::size_t>(j) * static_cast<std::size_t>(nx) +
           static_cast<std::size_t>(i);
  }
  double x_center(std::int32_t i) const { return x0 + (i + 0.5) * side_mm; }
  double y_center(std::int32_t j) const { return y0 + (j + 0.5) * side_mm; }
};

// Non-empty cells only, ordered by linear cell index (row-major in j).
inline std::vector<KernelSelection> build_square_kernels(const StrikeSegmentedStream& layer,
                                                         double side_mm) {
  const SquareGrid grid = SquareGrid::over(layer, side_mm);
  if (layer.empty()) return {};
  std::map<std::size_t, KernelSelection> cells;
  for (std::size_t s = 0; s < layer.size(); ++s) {
    const auto [i, j] = grid.cell_of(layer.x_mm(s), layer.y_mm(s));
    auto& k = cells[grid.linear(i, j)];
    if (k.indices.empty()) {
      k.kind = KernelSelection::Kind::Square;
      k.grid_i = i;
      k.grid_j = j;
      k.center_x_mm = grid.x_center(i);
      k.center_y_mm = grid.y_center(j);
      k.side_mm = side_mm;
    }
    k.indices.push_back(s);
  }
  std::vector<KernelSelection> out;
  out.reserve(cells.size());
  for (auto& [lin, k] : cells) out.push_back(std::move(k));
  return out;
}

// --- layer classification ---------------------------------------------------

// Per-layer defect map over the square grid: one MAP label and posterior
// margin per cell, NO_DATA where the cell holds no samples.
struct DefectMap {
  SquareGrid grid;
  std::vector<std::string> class_labels;  // model labels + UNKNOWN
  std::vector<std::int32_t> cell_label;   // -1 = NO_DATA, 0..M-1 model, M = unknown
  std::vector<double> cell_margin;        // 0 where NO_DATA

  static constexpr std::int32_t kNoData = -1;

  std::int32_t label_at(std::int32_t i, std::int32_t j) const {
    return cell_label[grid.linear(i, j)];
  }
  double margin_at(std::int32_t i, std::int32_t j) const {
    return cell_margin[grid.linear(i, j)];
  }
};

struct KernelSpec {
  KernelSelection::Kind kind = KernelSelection::Kind::Layer;
  double side_mm = kDefaultSquareSideMm;
};

struct LayerClassification {
  std::vector<Classification> per_kernel;
  std::optional<DefectMap> map;  // present for square kernels
};

// Classifies each kernel against the shared immutable model set. Kernels are
// independent, so evaluation may run on several threads; results land in
// their kernel's slot and are identical for any thread count.
inline std::vector<Classification> classify_kernels(
    const StrikeSegmentedStream& stream, const ModelSet& set,
    const std::vector<KernelSelection>& kernels, unsigned threads = 1) {
  std::vector<Classification> out(kernels.size());
  parallel_for(kernels.size(), threads,
               [&](std::size_t i) { out[i] = posteriors(stream, kernels[i], set); });
  return out;
}

inline LayerClassification classify_layer(const StrikeSegmentedStream& layer,
                                          const ModelSet& set, const KernelSpec& spec,
                                          unsigned threads = 1) {
  require(layer.sensor_count() == set.sensor_count(), Errc::DimensionMismatch,
          "layer/model sensor count mismatch");
  LayerClassification result;
  switch (spec.kind) {
    case KernelSelection::Kind::Layer: {
      if (layer.empty()) return result;
      result.per_kernel = classify_kernels(layer, set, {build_layer_kernel(layer)}, 1);
      return result;
    }
    case KernelSelection::Kind::Part: {
      if (layer.empty()) return result;
      result.per_kernel =
          classify_kernels(layer, set, build_part_kernels(layer), threads);
      return result;
    }
    case KernelSelection::Kind::Square: {
      DefectMap map;
      map.grid = SquareGrid::over(layer, spec.side_mm);
      map.class_labels = set.class_labels();
      map.cell_label.assign(map.grid.cell_count(), DefectMap::kNoData);
      map.cell_margin.assign(map.grid.cell_count(), 0.0);
      if (!layer.empty()) {
        const auto kernels = build_square_kernels(layer, spec.side_mm);
        result.per_kernel = classify_kernels(layer, set, kernels, threads);
        for (const auto& c : result.per_kernel) {
          const std::size_t lin = map.grid.linear(c.kernel.grid_i, c.kernel.grid_j);
          map.cell_label[lin] = static_cast<std::int32_t>(c.map_index);
          map.cell_margin[lin] = c.margin;
        }
      }
      result.map = std::move(map);
      return result;
    }
  }
  fail(Errc::InvalidArgument, "unhandled kernel kind");
}

// --- unknown-floor calibration ----------------------------------------------

inline std::vector<double> per_sample_log_likelihoods(const StrikeSegmentedStream& stream,
                                                      const ProcessModel& model) {
  require(stream.sensor_count() == model.sensor_count(), Errc::DimensionMismatch,
          "stream/model sensor count mismatch");
  std::vector<double> ll(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i)
    ll[i] = model.params_at(stream.k(i)).log_density(stream.intensity(i).data());
  return ll;
}

// Lower quantile (linear interpolation between order statistics) of the
// training data's per-sample log-likelihood under its own model. The result
// is the per-sample floor defining the unknown hypothesis.
inline double calibrate_unknown_floor(const StrikeSegmentedStream& training,
                                      const ProcessModel& model,
                                      double quantile = kDefaultUnknownQuantile) {
  require(quantile > 0.0 && quantile <= 0.5, Errc::InvalidArgument,
          "quantile must be in (0, 0.5]");
  const std::size_t n = training.size();
  const auto needed =
      std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(1.0 / quantile)));
  if (n < needed) {
    fail(Errc::InsufficientSamples,
         std::to_string(n) + " samples, need >= " + std::to_string(needed) +
             " for quantile " + std::to_string(quantile));
  }
  std::vector<double> ll = per_sample_log_likelihoods(training, model);
  std::sort(ll.begin(), ll.end());
  const double pos = quantile * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= n) return ll[lo];
  return ll[lo] + frac * (ll[lo + 1] - ll[lo]);
}

// --- evaluation -------------------------------------------------------------

struct ConfusionMatrix {
  std::vector<std::string> labels;              // class order (rows and cols)
  std::vector<std::vector<std::size_t>> counts; // rows = truth, cols = predicted
  std::vector<std::vector<double>> rates;       // row-normalized counts
  std::vector<double> per_class_accuracy;       // diagonal of rates
  double overall_accuracy = 0.0;                // trace / total

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& row : counts)
      for (std::size_t c : row) t += c;
    return t;
  }
};

inline ConfusionMatrix confusion_matrix(std::span<const std::string> predicted,
                                        std::span<const std::string> truth,
                                        std::span<const std::string> class_labels) {
  require(predicted.size() == truth.size(), Errc::LengthMismatch,
          "predicted and truth label lists differ in length");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < class_labels.size(); ++i) index[class_labels[i]] = i;
  auto lookup = [&](const std::string& s) {
    auto it = index.find(s);
    if (it == index.end()) fail(Errc::UnknownLabelString, "label \"" + s + "\"");
    return it->second;
  };

  ConfusionMatrix cm;
  cm.labels.assign(class_labels.begin(), class_labels.end());
  const std::size_t r = class_labels.size();
  cm.counts.assign(r, std::vector<std::size_t>(r, 0));
  for (std::size_t i = 0; i < truth.size(); ++i)
    ++cm.counts[lookup(truth[i])][lookup(predicted[i])];

  cm.rates.assign(r, std::vector<double>(r, 0.0));
  cm.per_class_accuracy.assign(r, 0.0);
  std::size_t diag = 0;
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t row_total = 0;
    for (std::size_t j = 0; j < r; ++j) row_total += cm.counts[i][j];
    if (row_total > 0) {
      for (std::size_t j = 0; j < r; ++j)
        cm.rates[i][j] = static_cast<double>(cm.counts[i][j]) /
                         static_cast<double>(row_total);
    }
    cm.per_class_accuracy[i] = cm.rates[i][i];
    diag += cm.counts[i][i];
  }
  const std::size_t total = cm.total();
  cm.overall_accuracy = total == 0 ? 0.0 : static_cast<double>(diag) /
                                               static_cast<double>(total);
  return cm;
}

// Majority truth label over a kernel's samples; ties break to the
// lexicographically smallest label.
inline std::string majority_label(const KernelSelection& kernel,
                                  std::span<const std::string> sample_truth) {
  require(!kernel.indices.empty(), Errc::EmptyKernel, "kernel has no samples");
  std::map<std::string, std::size_t> votes;
  for (std::size_t idx : kernel.indices) {
    require(idx < sample_truth.size(), Errc::LengthMismatch,
            "truth labels shorter than stream");
    ++votes[sample_truth[idx]];
  }
  const std::string* best = nullptr;
  std::size_t best_count = 0;
  for (const auto& [label, count] : votes) {
    if (count > best_count) {
      best = &label;
      best_count = count;
    }
  }
  return *best;
}

}  // namespace meltmon
