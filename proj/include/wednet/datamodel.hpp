#pragma once

// Core domain types shared by ingestion, the model and the augmentation pipeline.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "wednet/errors.hpp"

namespace wednet {

// ---------------------------------------------------------------------------
// Time

/// Seconds since 1970-01-01T00:00:00 UTC.
using Timestamp = std::int64_t;

inline constexpr Timestamp kSecondsPerHour = 3600;

inline Timestamp floor_hour(Timestamp ts) {
  Timestamp h = ts / kSecondsPerHour;
  if (ts % kSecondsPerHour < 0) --h;
  return h * kSecondsPerHour;
}

inline Timestamp make_timestamp(int year, unsigned month, unsigned day, int hour = 0, int minute = 0, int second = 0) {
  using namespace std::chrono;
  const sys_days d = std::chrono::year{year} / std::chrono::month{month} / std::chrono::day{day};
  return d.time_since_epoch().count() * 86400LL + hour * 3600LL + minute * 60LL + second;
}

/// Accepts "YYYY-MM-DD HH:MM[:SS]" and "YYYY-MM-DDTHH:MM[:SS]", optionally suffixed with 'Z'.
inline Timestamp parse_timestamp(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  const int n = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &s);
  if (n < 3 || (n > 3 && n < 6) || (n >= 4 && sep != ' ' && sep != 'T')) {
    throw ValidationError("unparseable timestamp '" + text + "'");
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60) {
    throw ValidationError("timestamp field out of range in '" + text + "'");
  }
  return make_timestamp(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h, mi, s);
}

inline std::string format_timestamp(Timestamp ts) {
  using namespace std::chrono;
  const Timestamp day_index = (ts - ((ts % 86400 + 86400) % 86400)) / 86400;
  const Timestamp secs = ts - day_index * 86400;
  const year_month_day ymd{sys_days{days{day_index}}};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(secs / 3600),
                static_cast<int>(secs % 3600 / 60), static_cast<int>(secs % 60));
  return buf;
}

/// Hour slot 0..23.
inline int hour_of_day(Timestamp ts) { return static_cast<int>(((ts % 86400) + 86400) % 86400 / 3600); }

/// Monday = 0 ... Sunday = 6.
inline int day_of_week(Timestamp ts) {
  using namespace std::chrono;
  const Timestamp day_index = (ts - ((ts % 86400 + 86400) % 86400)) / 86400;
  return static_cast<int>(weekday{sys_days{days{day_index}}}.iso_encoding()) - 1;
}

inline bool is_weekend(int dow) { return dow >= 5; }

// ---------------------------------------------------------------------------
// Dense arrays

/// Row-major d0 x d1 x d2 array.
template <typename T>
class Array3 {
 public:
  Array3() = default;
  Array3(int d0, int d1, int d2, T fill = T{}) : dims_{d0, d1, d2}, data_(static_cast<std::size_t>(d0) * d1 * d2, fill) {
    if (d0 < 0 || d1 < 0 || d2 < 0) throw ValidationError("Array3: negative dimension");
  }

  int dim(int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
  std::array<int, 3> shape() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
  const T& operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k;
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Array3&) const = default;

 private:
  std::array<int, 3> dims_{0, 0, 0};
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Spatial substrate

struct LatLon {
  double lat = 0;
  double lon = 0;
};

inline double haversine_m(const LatLon& a, const LatLon& b) {
  constexpr double kEarthRadius = 6371008.8;
  const double to_rad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * to_rad;
  const double dlon = (b.lon - a.lon) * to_rad;
  const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * to_rad) * std::cos(b.lat * to_rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2 * kEarthRadius * std::asin(std::min(1.0, std::sqrt(h)));
}

/// Parcels within this distance of each other are adjacent.
inline constexpr double kAdjacencyThresholdM = 2000.0;

struct RegionGraph {
  std::vector<std::string> parcel_ids;
  std::vector<LatLon> centroids;
  Eigen::MatrixXd distances;  // meters, symmetric, zero diagonal
  std::vector<std::pair<int, int>> edges;

  int size() const { return static_cast<int>(parcel_ids.size()); }

  int index_of(const std::string& id) const {
    for (int i = 0; i < size(); ++i)
      if (parcel_ids[static_cast<std::size_t>(i)] == id) return i;
    return -1;
  }

  /// Distances from great-circle geometry, edges from the adjacency threshold.
  static RegionGraph from_centroids(std::vector<std::string> ids, std::vector<LatLon> centroids) {
    const auto n = static_cast<Eigen::Index>(ids.size());
    Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j)
        dist(i, j) = dist(j, i) = haversine_m(centroids[static_cast<std::size_t>(i)], centroids[static_cast<std::size_t>(j)]);
    return from_distances(std::move(ids), std::move(centroids), std::move(dist));
  }

  static RegionGraph from_distances(std::vector<std::string> ids, std::vector<LatLon> centroids, Eigen::MatrixXd dist) {
    RegionGraph g;
    g.parcel_ids = std::move(ids);
    g.centroids = std::move(centroids);
    g.distances = std::move(dist);
    for (int i = 0; i < g.size(); ++i)
      for (int j = i + 1; j < g.size(); ++j)
        if (g.distances(i, j) <= kAdjacencyThresholdM) g.edges.emplace_back(i, j);
    g.validate();
    return g;
  }

  void validate() const {
    const int n = size();
    if (n < 2) throw ValidationError("region graph needs at least 2 parcels, got " + std::to_string(n));
    if (static_cast<int>(centroids.size()) != n) throw ValidationError("region graph: centroid count != parcel count");
    if (distances.rows() != n || distances.cols() != n) throw ValidationError("region graph: distance matrix is not N x N");
    std::vector<std::string> sorted = parcel_ids;
    std::sort(sorted.begin(), sorted.end());
    if (auto dup = std::adjacent_find(sorted.begin(), sorted.end()); dup != sorted.end()) {
      throw ValidationError("region graph: duplicate parcel id '" + *dup + "'");
    }
    for (int i = 0; i < n; ++i) {
      if (distances(i, i) != 0.0) throw ValidationError("region graph: nonzero self distance at parcel " + std::to_string(i));
      for (int j = 0; j < n; ++j) {
        if (!std::isfinite(distances(i, j)) || distances(i, j) < 0) throw ValidationError("region graph: invalid distance");
        if (distances(i, j) != distances(j, i)) throw ValidationError("region graph: distance matrix not symmetric");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Spatio-temporal tensors

struct Feature {
  std::string name;
  std::string unit;
  bool operator==(const Feature&) const = default;
};

inline std::vector<Feature> flow_schema() { return {{"pickup_count", "trips/hr"}, {"dropoff_count", "trips/hr"}}; }
inline std::vector<Feature> weather_schema() { return {{"precip", "in/hr"}, {"temp", "degF"}, {"wind", "mph"}}; }

/// T x N x d values with a feature schema and an hourly time index.
struct STTensor {
  Array3<float> values;
  std::vector<Feature> schema;
  std::vector<Timestamp> time_index;

  int steps() const { return values.dim(0); }
  int parcels() const { return values.dim(1); }
  int features() const { return values.dim(2); }

  int feature_index(const std::string& name) const {
    for (std::size_t i = 0; i < schema.size(); ++i)
      if (schema[i].name == name) return static_cast<int>(i);
    throw ValidationError("feature '" + name + "' not in schema");
  }

  void validate() const {
    if (static_cast<int>(time_index.size()) != steps()) {
      throw ValidationError("STTensor: time index length " + std::to_string(time_index.size()) + " != T " +
                            std::to_string(steps()));
    }
    if (static_cast<int>(schema.size()) != features()) throw ValidationError("STTensor: schema length != feature count");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values.data()[i])) throw ValidationError("STTensor: non-finite value at flat index " + std::to_string(i));
    }
    for (std::size_t i = 1; i < time_index.size(); ++i) {
      if (time_index[i] != time_index[i - 1] + kSecondsPerHour) throw ValidationError("STTensor: time index is not hourly contiguous");
    }
  }
};

// ---------------------------------------------------------------------------
// Condition labels

enum class Condition : int { normal = 0, extreme = 1 };

inline const char* to_string(Condition c) { return c == Condition::extreme ? "extreme" : "normal"; }

/// Mean precipitation strictly above this (in/hr) marks a window extreme.
inline constexpr double kExtremePrecipThreshold = 0.1;

/// The threshold as stored: weather is float32, so a slice of 0.1 readings holds 0.1f, which is slightly above 0.1.
/// Comparing against the float-rounded value keeps such a slice normal.
inline constexpr double kExtremePrecipThresholdStored = static_cast<double>(static_cast<float>(kExtremePrecipThreshold));

struct ConditionLabel {
  Condition value = Condition::normal;
  double mean_precip = 0.0;
};

/// `precip` is a flattened T x N slice (step-major). Extreme iff its mean exceeds 0.1 in/hr.
inline ConditionLabel label_condition(std::span<const float> precip, int parcels) {
  if (parcels <= 0) throw ValidationError("label_condition: parcel count must be positive");
  if (precip.empty()) throw ValidationError("label_condition: empty precipitation slice");
  double sum = 0.0;
  for (std::size_t i = 0; i < precip.size(); ++i) {
    const float v = precip[i];
    if (!std::isfinite(v) || v < 0.0f) {
      throw ValidationError("label_condition: invalid precipitation " + std::to_string(v) + " at (t=" +
                            std::to_string(i / static_cast<std::size_t>(parcels)) +
                            ", n=" + std::to_string(i % static_cast<std::size_t>(parcels)) + ")");
    }
    sum += v;
  }
  const double mean = sum / static_cast<double>(precip.size());
  return {mean > kExtremePrecipThresholdStored ? Condition::extreme : Condition::normal, mean};
}

/// Extracts feature `feature` of a T x N x d array as a step-major slice.
inline std::vector<float> feature_slice(const Array3<float>& a, int feature) {
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(a.dim(0)) * a.dim(1));
  for (int t = 0; t < a.dim(0); ++t)
    for (int n = 0; n < a.dim(1); ++n) out.push_back(a(t, n, feature));
  return out;
}

// ---------------------------------------------------------------------------
// Samples

/// One example: a history of flow and weather and the flow that follows it.
struct SampleWindow {
  std::int64_t id = 0;
  Array3<float> flow_hist;     // T x N x d_f
  Array3<float> weather_hist;  // T x N x d_m
  Array3<float> flow_future;   // T' x N x d_f
  Timestamp start_time = 0;
  std::vector<int> time_of_day;  // per history step
  std::vector<int> day_of_week;  // per history step
  ConditionLabel condition;
  /// Id of the window this one was derived from by intervention, -1 for observed windows.
  std::int64_t derived_from = -1;

  int steps() const { return flow_hist.dim(0); }
  int horizon() const { return flow_future.dim(0); }
  int parcels() const { return flow_hist.dim(1); }
  bool augmented() const { return derived_from >= 0; }
  bool extreme() const { return condition.value == Condition::extreme; }
};

struct Split {
  std::vector<SampleWindow> train;
  std::vector<SampleWindow> valid;
  std::vector<SampleWindow> test;
};

/// Contiguous prefix / middle / suffix partition with sizes floor(r0 n), floor(r1 n) and the remainder.
inline Split chronological_split(std::vector<SampleWindow> windows, std::array<double, 3> ratios = {0.5, 0.25, 0.25}) {
  const std::size_t n = windows.size();
  if (n < 4) throw ValidationError("chronological_split: need at least 4 windows, got " + std::to_string(n));
  for (double r : ratios)
    if (!(r >= 0.0)) throw ValidationError("chronological_split: ratios must be non-negative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ValidationError("chronological_split: ratios must sum to 1");
  for (std::size_t i = 1; i < n; ++i) {
    if (windows[i].start_time < windows[i - 1].start_time) {
      throw ValidationError("chronological_split: windows not sorted by start time at position " + std::to_string(i));
    }
  }
  // The small epsilon keeps exact products such as 0.25 * 100 from rounding down.
  const auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(n) + 1e-9));
  const auto n_valid = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n) + 1e-9));
  Split s;
  auto first = std::make_move_iterator(windows.begin());
  s.train.assign(first, first + static_cast<std::ptrdiff_t>(n_train));
  s.valid.assign(first + static_cast<std::ptrdiff_t>(n_train), first + static_cast<std::ptrdiff_t>(n_train + n_valid));
  s.test.assign(first + static_cast<std::ptrdiff_t>(n_train + n_valid), std::make_move_iterator(windows.end()));
  return s;
}

/// Test windows bucketed for reporting: [normal, extreme].
inline std::array<std::vector<const SampleWindow*>, 2> partition_by_condition(const std::vector<SampleWindow>& windows) {
  std::array<std::vector<const SampleWindow*>, 2> out;
  for (const auto& w : windows) out[static_cast<std::size_t>(w.condition.value)].push_back(&w);
  return out;
}

}  // namespace wednet
