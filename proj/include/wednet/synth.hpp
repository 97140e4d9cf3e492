#pragma once

// Synthetic weather-coupled city.
//
// Flow is a per-parcel daily/weekly profile with Poisson noise. Rain arrives as
// spatially localized events; while it rains, each parcel's expected flow is
// scaled by max(0.1, 1 - k_i * precip) with k_i drawn once per parcel, so the
// weather effect is causal and spatially heterogeneous.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <tuple>

#include "wednet/datamodel.hpp"

namespace wednet {

struct SynthConfig {
  int n_parcels = 20;
  int n_days = 60;
  double rain_event_rate = 0.25;         // events per day
  double rain_intensity_min = 0.15;      // in/hr at event peak
  double rain_intensity_max = 0.6;
  double rain_duration_min = 8.0;        // hours
  double rain_duration_max = 30.0;
  double suppression_min = 0.5;          // per in/hr
  double suppression_max = 2.5;
  double base_flow_min = 20.0;           // trips/hr
  double base_flow_max = 80.0;
  std::uint64_t seed = 7;

  void validate() const {
    if (n_parcels < 2) throw ValidationError("synth: n_parcels must be >= 2");
    if (n_days < 1) throw ValidationError("synth: n_days must be >= 1");
    if (rain_event_rate < 0) throw ValidationError("synth: rain_event_rate must be >= 0");
    if (!(rain_intensity_min > 0 && rain_intensity_max >= rain_intensity_min)) throw ValidationError("synth: bad rain intensity range");
    if (!(rain_duration_min > 0 && rain_duration_max >= rain_duration_min)) throw ValidationError("synth: bad rain duration range");
    if (!(suppression_min >= 0 && suppression_max >= suppression_min)) throw ValidationError("synth: bad suppression range");
    if (!(base_flow_min > 0 && base_flow_max >= base_flow_min)) throw ValidationError("synth: bad base flow range");
  }
};

struct SynthCity {
  RegionGraph graph;
  STTensor flow;
  STTensor weather;
  std::vector<double> suppression;  // k_i per parcel
};

/// Fixed calendar origin of synthetic cities (a Monday).
inline Timestamp synth_origin() { return make_timestamp(2024, 1, 1); }

inline SynthCity generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const int n = cfg.n_parcels;
  const int hours = cfg.n_days * 24;
  constexpr double kLat0 = 40.70, kLon0 = -74.02, kLatSpan = 0.09, kLonSpan = 0.12;

  std::vector<std::string> ids;
  std::vector<LatLon> centroids;
  for (int i = 0; i < n; ++i) {
    ids.push_back("P" + std::to_string(i));
    centroids.push_back({kLat0 + kLatSpan * unit(rng), kLon0 + kLonSpan * unit(rng)});
  }

  struct ParcelProfile {
    double base, amp1, phase1, amp2, phase2, weekend, dropoff_scale, k;
  };
  std::vector<ParcelProfile> prof;
  for (int i = 0; i < n; ++i) {
    prof.push_back({uniform(cfg.base_flow_min, cfg.base_flow_max), uniform(0.3, 0.7), uniform(6.0, 20.0), uniform(0.1, 0.3),
                    uniform(0.0, 12.0), uniform(0.6, 1.1), uniform(0.7, 1.3), uniform(cfg.suppression_min, cfg.suppression_max)});
  }

  // Rain events: count ~ Poisson(rate * days), smooth sin envelope in time, Gaussian footprint in space.
  struct RainEvent {
    double start, duration, peak, lat, lon, radius_m;
  };
  std::vector<RainEvent> events;
  if (cfg.rain_event_rate > 0) {
    std::poisson_distribution<int> count(cfg.rain_event_rate * cfg.n_days);
    const int k = count(rng);
    for (int e = 0; e < k; ++e) {
      events.push_back({uniform(0.0, hours), uniform(cfg.rain_duration_min, cfg.rain_duration_max),
                        uniform(cfg.rain_intensity_min, cfg.rain_intensity_max), kLat0 + kLatSpan * unit(rng),
                        kLon0 + kLonSpan * unit(rng), uniform(4000.0, 10000.0)});
    }
  }

  SynthCity city;
  city.graph = RegionGraph::from_centroids(ids, centroids);
  std::vector<Timestamp> index;
  for (int t = 0; t < hours; ++t) index.push_back(synth_origin() + t * kSecondsPerHour);
  city.weather.schema = weather_schema();
  city.weather.time_index = index;
  city.weather.values = Array3<float>(hours, n, 3, 0.0f);
  city.flow.schema = flow_schema();
  city.flow.time_index = index;
  city.flow.values = Array3<float>(hours, n, 2, 0.0f);
  for (const auto& p : prof) city.suppression.push_back(p.k);

  const double two_pi = 2.0 * std::numbers::pi;
  for (int t = 0; t < hours; ++t) {
    const int hod = t % 24;
    const bool weekend = is_weekend(day_of_week(index[static_cast<std::size_t>(t)]));
    const double gust = uniform(0.0, 3.0);
    for (int i = 0; i < n; ++i) {
      double precip = 0.0;
      for (const auto& ev : events) {
        const double rel = (t + 0.5 - ev.start) / ev.duration;
        if (rel <= 0.0 || rel >= 1.0) continue;
        const double d = haversine_m(centroids[static_cast<std::size_t>(i)], {ev.lat, ev.lon});
        precip += ev.peak * std::sin(std::numbers::pi * rel) * std::exp(-d * d / (2.0 * ev.radius_m * ev.radius_m));
      }
      const float precip_f = static_cast<float>(precip);
      city.weather.values(t, i, 0) = precip_f;
      city.weather.values(t, i, 1) = static_cast<float>(45.0 + 12.0 * std::cos(two_pi * (hod - 15) / 24.0) - 6.0 * precip);
      city.weather.values(t, i, 2) = static_cast<float>(5.0 + gust + 12.0 * precip);

      const auto& p = prof[static_cast<std::size_t>(i)];
      const double daily = 1.0 + p.amp1 * std::cos(two_pi * (hod - p.phase1) / 24.0) + p.amp2 * std::cos(2.0 * two_pi * (hod - p.phase2) / 24.0);
      const double level = p.base * std::max(0.05, daily) * (weekend ? p.weekend : 1.0);
      const double suppress = std::max(0.1, 1.0 - p.k * static_cast<double>(precip_f));
      std::poisson_distribution<int> pick(level * suppress);
      std::poisson_distribution<int> drop(level * p.dropoff_scale * suppress);
      city.flow.values(t, i, 0) = static_cast<float>(pick(rng));
      city.flow.values(t, i, 1) = static_cast<float>(drop(rng));
    }
  }
  city.flow.validate();
  city.weather.validate();
  return city;
}

}  // namespace wednet
