#pragma once

// Raw trip and station data to aligned parcel-hour tensors, and tensors to sample windows.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "wednet/datamodel.hpp"
#include "wednet/io.hpp"

namespace wednet {

struct TripRecord {
  Timestamp pickup_ts = 0;
  Timestamp dropoff_ts = 0;
  std::string pickup_parcel;
  std::string dropoff_parcel;
};

/// Missing attributes are NaN.
struct StationReading {
  std::string station_id;
  LatLon location;
  Timestamp ts = 0;
  double precip = std::numeric_limits<double>::quiet_NaN();
  double temp = std::numeric_limits<double>::quiet_NaN();
  double wind = std::numeric_limits<double>::quiet_NaN();
};

/// Half-open hourly span [start, end).
struct TimeSpan {
  Timestamp start = 0;
  Timestamp end = 0;
  int hours() const { return static_cast<int>((end - start) / kSecondsPerHour); }
};

inline std::vector<Timestamp> hourly_index(const TimeSpan& span) {
  std::vector<Timestamp> idx;
  for (Timestamp t = span.start; t < span.end; t += kSecondsPerHour) idx.push_back(t);
  return idx;
}

/// Smallest hour-aligned span covering every pickup and dropoff.
inline TimeSpan covering_span(const std::vector<TripRecord>& records) {
  if (records.empty()) throw ValidationError("aggregate_trips: empty record list");
  Timestamp lo = std::numeric_limits<Timestamp>::max(), hi = std::numeric_limits<Timestamp>::min();
  for (const auto& r : records) {
    lo = std::min({lo, r.pickup_ts, r.dropoff_ts});
    hi = std::max({hi, r.pickup_ts, r.dropoff_ts});
  }
  return {floor_hour(lo), floor_hour(hi) + kSecondsPerHour};
}

/// Pickup and dropoff counts per parcel-hour over `span`; a timestamp exactly on an
/// hour boundary belongs to the hour it begins.
inline STTensor aggregate_trips(const std::vector<TripRecord>& records, const RegionGraph& graph, const TimeSpan& span) {
  if (records.empty()) throw ValidationError("aggregate_trips: empty record list");
  if (span.end <= span.start || span.start % kSecondsPerHour != 0 || span.end % kSecondsPerHour != 0) {
    throw ValidationError("aggregate_trips: span must be a non-empty hour-aligned interval");
  }
  std::map<std::string, int> index;
  for (int i = 0; i < graph.size(); ++i) index.emplace(graph.parcel_ids[static_cast<std::size_t>(i)], i);
  std::set<std::string> unknown;
  for (const auto& r : records) {
    if (!index.count(r.pickup_parcel)) unknown.insert(r.pickup_parcel);
    if (!index.count(r.dropoff_parcel)) unknown.insert(r.dropoff_parcel);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
    throw ValidationError("aggregate_trips: unknown parcel ids: " + list);
  }
  STTensor out;
  out.schema = flow_schema();
  out.time_index = hourly_index(span);
  out.values = Array3<float>(span.hours(), graph.size(), 2, 0.0f);
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    if (r.pickup_ts > r.dropoff_ts) throw ValidationError("aggregate_trips: record " + std::to_string(k) + " drops off before pickup");
    if (r.pickup_ts < span.start || r.dropoff_ts >= span.end) {
      throw ValidationError("aggregate_trips: record " + std::to_string(k) + " lies outside the declared span");
    }
    const int tp = static_cast<int>((floor_hour(r.pickup_ts) - span.start) / kSecondsPerHour);
    const int td = static_cast<int>((floor_hour(r.dropoff_ts) - span.start) / kSecondsPerHour);
    out.values(tp, index.at(r.pickup_parcel), 0) += 1.0f;
    out.values(td, index.at(r.dropoff_parcel), 1) += 1.0f;
  }
  return out;
}

inline STTensor aggregate_trips(const std::vector<TripRecord>& records, const RegionGraph& graph) {
  return aggregate_trips(records, graph, covering_span(records));
}

/// A reading closer than this to a parcel centroid is taken verbatim.
inline constexpr double kCoincidentM = 1.0;

struct IdwOptions {
  double power = 2.0;
  bool forward_fill = false;
};

/// IDW estimate at `p` from (location, value) sources, in double precision. A source
/// within kCoincidentM of `p` is returned verbatim.
inline double idw_point(const LatLon& p, const std::vector<std::pair<LatLon, double>>& sources, double power) {
  if (sources.empty()) throw ValidationError("idw_point: no sources");
  double num = 0.0, den = 0.0;
  for (const auto& [loc, value] : sources) {
    const double d = haversine_m(p, loc);
    if (d < kCoincidentM) return value;
    const double w = std::pow(d, -power);
    num += w * value;
    den += w;
  }
  return num / den;
}

/// Inverse-distance-weighted weather per parcel-hour from every station reporting in that hour.
inline STTensor idw_interpolate(const std::vector<StationReading>& readings, const RegionGraph& graph,
                                const std::vector<Timestamp>& time_index, const IdwOptions& opt = {}) {
  if (!(opt.power > 0.0)) throw ValidationError("idw_interpolate: power must be positive");
  if (time_index.empty()) throw ValidationError("idw_interpolate: empty time index");
  for (const auto& r : readings) {
    if (!std::isnan(r.precip) && (r.precip < 0.0 || !std::isfinite(r.precip))) {
      throw ValidationError("idw_interpolate: invalid precipitation at station " + r.station_id);
    }
  }
  const auto schema = weather_schema();
  const int attrs = static_cast<int>(schema.size());
  const int n = graph.size();

  // hour -> station -> (location, per-attribute sum/count)
  struct Acc {
    LatLon loc;
    std::array<double, 3> sum{0, 0, 0};
    std::array<int, 3> count{0, 0, 0};
  };
  std::map<Timestamp, std::map<std::string, Acc>> by_hour;
  for (const auto& r : readings) {
    auto& acc = by_hour[floor_hour(r.ts)][r.station_id];
    acc.loc = r.location;
    const std::array<double, 3> v{r.precip, r.temp, r.wind};
    for (int a = 0; a < attrs; ++a) {
      if (std::isnan(v[static_cast<std::size_t>(a)])) continue;
      acc.sum[static_cast<std::size_t>(a)] += v[static_cast<std::size_t>(a)];
      acc.count[static_cast<std::size_t>(a)] += 1;
    }
  }

  STTensor out;
  out.schema = schema;
  out.time_index = time_index;
  out.values = Array3<float>(static_cast<int>(time_index.size()), n, attrs, 0.0f);
  std::vector<std::vector<double>> dist_cache;
  for (int t = 0; t < static_cast<int>(time_index.size()); ++t) {
    const auto hour_it = by_hour.find(time_index[static_cast<std::size_t>(t)]);
    for (int a = 0; a < attrs; ++a) {
      std::vector<std::pair<LatLon, double>> sources;
      if (hour_it != by_hour.end()) {
        for (const auto& [id, acc] : hour_it->second) {
          if (acc.count[static_cast<std::size_t>(a)] > 0) {
            sources.emplace_back(acc.loc, acc.sum[static_cast<std::size_t>(a)] / acc.count[static_cast<std::size_t>(a)]);
          }
        }
      }
      if (sources.empty()) {
        if (opt.forward_fill && t > 0) {
          for (int i = 0; i < n; ++i) out.values(t, i, a) = out.values(t - 1, i, a);
          continue;
        }
        throw GapError("idw_interpolate: no '" + schema[static_cast<std::size_t>(a)].name + "' reading for hour " +
                       format_timestamp(time_index[static_cast<std::size_t>(t)]) +
                       (opt.forward_fill ? " (nothing to carry forward)" : " (pass --ffill to carry the last value forward)"));
      }
      for (int i = 0; i < n; ++i) {
        out.values(t, i, a) = static_cast<float>(idw_point(graph.centroids[static_cast<std::size_t>(i)], sources, opt.power));
      }
    }
  }
  return out;
}

/// Overlapping windows of `steps` history and `horizon` future hours, one per valid start at `stride`.
inline std::vector<SampleWindow> make_windows(const STTensor& flow, const STTensor& weather, int steps = 12, int horizon = 12,
                                              int stride = 1) {
  if (steps <= 0 || horizon <= 0 || stride <= 0) throw ValidationError("make_windows: steps, horizon and stride must be positive");
  if (flow.time_index != weather.time_index) throw ValidationError("make_windows: flow and weather time indices differ");
  if (flow.parcels() != weather.parcels()) throw ValidationError("make_windows: flow and weather parcel counts differ");
  const int total = flow.steps();
  if (total < steps + horizon) {
    throw ValidationError("make_windows: series of " + std::to_string(total) + " steps is shorter than " +
                          std::to_string(steps + horizon));
  }
  const int precip = weather.feature_index("precip");
  const int n = flow.parcels(), df = flow.features(), dm = weather.features();
  std::vector<SampleWindow> out;
  for (int s = 0; s + steps + horizon <= total; s += stride) {
    SampleWindow w;
    w.id = static_cast<std::int64_t>(out.size());
    w.start_time = flow.time_index[static_cast<std::size_t>(s)];
    w.flow_hist = Array3<float>(steps, n, df);
    w.weather_hist = Array3<float>(steps, n, dm);
    w.flow_future = Array3<float>(horizon, n, df);
    for (int t = 0; t < steps; ++t) {
      const Timestamp ts = flow.time_index[static_cast<std::size_t>(s + t)];
      w.time_of_day.push_back(hour_of_day(ts));
      w.day_of_week.push_back(day_of_week(ts));
      for (int i = 0; i < n; ++i) {
        for (int f = 0; f < df; ++f) w.flow_hist(t, i, f) = flow.values(s + t, i, f);
        for (int f = 0; f < dm; ++f) w.weather_hist(t, i, f) = weather.values(s + t, i, f);
      }
    }
    for (int t = 0; t < horizon; ++t)
      for (int i = 0; i < n; ++i)
        for (int f = 0; f < df; ++f) w.flow_future(t, i, f) = flow.values(s + steps + t, i, f);
    const auto slice = feature_slice(w.weather_hist, precip);
    w.condition = label_condition(slice, n);
    out.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV inputs

inline std::vector<TripRecord> read_trips_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = detail::split_csv_line(line);
  const std::vector<std::string> expected{"pickup_ts", "dropoff_ts", "pickup_parcel", "dropoff_parcel"};
  if (header.size() < 4 || !std::equal(expected.begin(), expected.end(), header.begin())) {
    throw ValidationError(path.string() + ": expected header pickup_ts,dropoff_ts,pickup_parcel,dropoff_parcel");
  }
  std::vector<TripRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto c = detail::split_csv_line(line);
    if (c.size() < 4) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
    out.push_back({parse_timestamp(c[0]), parse_timestamp(c[1]), c[2], c[3]});
  }
  return out;
}

inline std::vector<StationReading> read_stations_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = detail::split_csv_line(line);
  const std::vector<std::string> expected{"station_id", "lat", "lon", "ts", "precip", "temp", "wind"};
  if (header.size() < 7 || !std::equal(expected.begin(), expected.end(), header.begin())) {
    throw ValidationError(path.string() + ": expected header station_id,lat,lon,ts,precip,temp,wind");
  }
  std::vector<StationReading> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto c = detail::split_csv_line(line);
    c.resize(7);
    const std::string ctx = path.string() + ":" + std::to_string(lineno);
    auto opt = [&](const std::string& s) {
      return s.empty() ? std::numeric_limits<double>::quiet_NaN() : detail::parse_double(s, ctx);
    };
    out.push_back({c[0], {detail::parse_double(c[1], ctx), detail::parse_double(c[2], ctx)}, parse_timestamp(c[3]), opt(c[4]),
                   opt(c[5]), opt(c[6])});
  }
  if (out.empty()) throw ValidationError(path.string() + ": no station readings");
  return out;
}

}  // namespace wednet
