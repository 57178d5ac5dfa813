#pragma once

// Canonical data model for strike-segmented photodiode streams.
//
// A strike is one continuous laser-on interval; samples within it carry a
// 1-based laser-on index k at the stream's sample rate. Storage is
// structure-of-arrays so the classification hot path walks contiguous
// memory; SensorSample is the materialized per-row view.

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meltmon/errors.hpp"

namespace meltmon {

inline constexpr std::int32_t kNoPart = -1;

struct Envelope {
  double x_min = 0.0;
  double x_max = 250.0;
  double y_min = 0.0;
  double y_max = 250.0;

  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
};

struct StreamMetadata {
  std::string machine;
  Envelope envelope;
};

struct SensorSample {
  std::int64_t strike_id = 0;
  std::int32_t k = 1;  // laser-on sample index, 1-based
  double x_mm = 0.0;
  double y_mm = 0.0;
  std::vector<double> intensity;
};

// One raw acquisition row prior to segmentation.
struct RawTraceSample {
  bool laser_trigger = false;
  double x_mm = 0.0;
  double y_mm = 0.0;
  std::vector<double> intensity;
};

class StrikeSegmentedStream {
 public:
  explicit StrikeSegmentedStream(std::size_t sensor_count,
                                 double sample_rate_hz = 60000.0,
                                 StreamMetadata metadata = {})
      : sensor_count_(sensor_count),
        sample_rate_hz_(sample_rate_hz),
        metadata_(std::move(metadata)) {
    require(sensor_count_ >= 1, Errc::InvalidArgument, "sensor_count must be >= 1");
    require(sample_rate_hz_ > 0.0, Errc::InvalidArgument, "sample_rate_hz must be > 0");
  }

  // Appends one sample, enforcing the stream invariants: k starts at 1 and
  // increments by exactly 1 within a strike, strike ids are non-decreasing,
  // positions stay inside the declared envelope.
  void append(std::int64_t strike_id, std::int32_t k, double x_mm, double y_mm,
              std::span<const double> intensity, std::int32_t part_id = kNoPart,
              std::int32_t layer = 0) {
    if (intensity.size() != sensor_count_) {
      fail(Errc::InconsistentVectorLength,
           "sample " + std::to_string(size()) + ": got " +
               std::to_string(intensity.size()) + " channels, stream declares " +
               std::to_string(sensor_count_));
    }
    require(k >= 1, Errc::InvalidArgument, "k must be >= 1");
    if (!metadata_.envelope.contains(x_mm, y_mm)) {
      fail(Errc::InvalidArgument,
           "sample " + std::to_string(size()) + " position (" + std::to_string(x_mm) +
               ", " + std::to_string(y_mm) + ") outside build envelope");
    }
    if (!strike_id_.empty()) {
      const std::int64_t last = strike_id_.back();
      require(strike_id >= last, Errc::InvalidArgument, "strike_id must be non-decreasing");
      if (strike_id == last) {
        require(k == k_.back() + 1, Errc::InvalidArgument,
                "k must increment by 1 within a strike");
      } else {
        require(k == 1, Errc::InvalidArgument, "new strike must start at k = 1");
      }
    } else {
      require(k == 1, Errc::InvalidArgument, "first strike must start at k = 1");
    }
    strike_id_.push_back(strike_id);
    k_.push_back(k);
    x_mm_.push_back(x_mm);
    y_mm_.push_back(y_mm);
    part_id_.push_back(part_id);
    layer_.push_back(layer);
    intensity_.insert(intensity_.end(), intensity.begin(), intensity.end());
  }

  std::size_t size() const { return k_.size(); }
  bool empty() const { return k_.empty(); }
  std::size_t sensor_count() const { return sensor_count_; }
  double sample_rate_hz() const { return sample_rate_hz_; }
  const StreamMetadata& metadata() const { return metadata_; }

  std::int64_t strike_id(std::size_t i) const { return strike_id_[i]; }
  std::int32_t k(std::size_t i) const { return k_[i]; }
  double x_mm(std::size_t i) const { return x_mm_[i]; }
  double y_mm(std::size_t i) const { return y_mm_[i]; }
  std::int32_t part_id(std::size_t i) const { return part_id_[i]; }
  std::int32_t layer(std::size_t i) const { return layer_[i]; }

  std::span<const double> intensity(std::size_t i) const {
    return {intensity_.data() + i * sensor_count_, sensor_count_};
  }
  double intensity(std::size_t i, std::size_t channel) const {
    return intensity_[i * sensor_count_ + channel];
  }
  // Used by operations that derive a new stream with resampled values
  // (normalization, anomaly injection); they copy first, then overwrite.
  void set_intensity(std::size_t i, std::size_t channel, double value) {
    intensity_[i * sensor_count_ + channel] = value;
  }

  SensorSample sample(std::size_t i) const {
    SensorSample s;
    s.strike_id = strike_id_[i];
    s.k = k_[i];
    s.x_mm = x_mm_[i];
    s.y_mm = y_mm_[i];
    auto row = intensity(i);
    s.intensity.assign(row.begin(), row.end());
    return s;
  }

  std::size_t strike_count() const {
    return static_cast<std::size_t>(std::count(k_.begin(), k_.end(), 1));
  }

  bool has_part_ids() const {
    return !empty() && std::all_of(part_id_.begin(), part_id_.end(),
                                   [](std::int32_t p) { return p != kNoPart; });
  }

  std::vector<std::int32_t> distinct_parts() const {
    std::set<std::int32_t> parts(part_id_.begin(), part_id_.end());
    return {parts.begin(), parts.end()};
  }

  std::vector<std::int32_t> distinct_layers() const {
    std::set<std::int32_t> layers(layer_.begin(), layer_.end());
    return {layers.begin(), layers.end()};
  }

  // Axis-aligned bounding box of sample positions: {x_min, x_max, y_min, y_max}.
  std::array<double, 4> bounding_box() const {
    require(!empty(), Errc::InvalidArgument, "bounding_box of empty stream");
    auto [xlo, xhi] = std::minmax_element(x_mm_.begin(), x_mm_.end());
    auto [ylo, yhi] = std::minmax_element(y_mm_.begin(), y_mm_.end());
    return {*xlo, *xhi, *ylo, *yhi};
  }

  // New stream holding only the given part's samples. Strikes must be
  // part-pure (true for segmented hatch data; each strike melts one part).
  StrikeSegmentedStream filter_part(std::int32_t part) const {
    StrikeSegmentedStream out(sensor_count_, sample_rate_hz_, metadata_);
    for (std::size_t i = 0; i < size(); ++i) {
      if (part_id_[i] != part) continue;
      if (k_[i] > 1 && (i == 0 || part_id_[i - 1] != part)) {
        fail(Errc::InvalidArgument,
             "strike " + std::to_string(strike_id_[i]) + " spans multiple parts");
      }
      out.append(strike_id_[i], k_[i], x_mm_[i], y_mm_[i], intensity(i), part_id_[i],
                 layer_[i]);
    }
    return out;
  }

 private:
  std::size_t sensor_count_;
  double sample_rate_hz_;
  StreamMetadata metadata_;
  std::vector<std::int64_t> strike_id_;
  std::vector<std::int32_t> k_;
  std::vector<double> x_mm_;
  std::vector<double> y_mm_;
  std::vector<std::int32_t> part_id_;
  std::vector<std::int32_t> layer_;
  std::vector<double> intensity_;  // size() * sensor_count(), sample-major
};

// Segments a raw trigger-synchronized trace into strikes: each maximal run
// of laser_trigger=true becomes one strike with k = 1, 2, ...; samples with
// the trigger low are discarded. Strike ids are assigned in encounter order
// starting at 0.
inline StrikeSegmentedStream segment_strikes(std::span<const RawTraceSample> raw_trace,
                                             double sample_rate_hz = 60000.0,
                                             StreamMetadata metadata = {}) {
  require(!raw_trace.empty(), Errc::EmptyTrace, "raw trace has no samples");
  const std::size_t sensors = raw_trace.front().intensity.size();
  require(sensors >= 1, Errc::InvalidArgument, "raw trace declares zero sensors");
  for (std::size_t i = 0; i < raw_trace.size(); ++i) {
    if (raw_trace[i].intensity.size() != sensors) {
      fail(Errc::InconsistentVectorLength,
           "raw sample " + std::to_string(i) + ": got " +
               std::to_string(raw_trace[i].intensity.size()) + " channels, expected " +
               std::to_string(sensors));
    }
  }

  StrikeSegmentedStream out(sensors, sample_rate_hz, std::move(metadata));
  std::int64_t strike = -1;
  std::int32_t k = 0;
  bool in_strike = false;
  for (const RawTraceSample& row : raw_trace) {
    if (!row.laser_trigger) {
      in_strike = false;
      continue;
    }
    if (!in_strike) {
      ++strike;
      k = 1;
      in_strike = true;
    } else {
      ++k;
    }
    out.append(strike, k, row.x_mm, row.y_mm, row.intensity);
  }
  return out;
}

}  // namespace meltmon
