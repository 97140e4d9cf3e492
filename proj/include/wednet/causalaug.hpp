#pragma once

// Attention-driven causal identification and intervention.
//
// A pre-trained model's averaged attention maps rank, for each target parcel
// (or step), which source parcels (steps) it draws on. The top proportion r_A
// of sources is causal. Non-causal coordinates of an extreme window are then
// overwritten with those of a calendar-matched normal window, producing extra
// extreme-like training samples whose causal core is untouched.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "wednet/io.hpp"
#include "wednet/model.hpp"

namespace wednet {

/// Number of sources selected per target: ceil(r_a * n), at least 1.
inline int causal_count(double r_a, int n) {
  if (!(r_a > 0.0 && r_a <= 1.0)) throw ValidationError("causal proportion r_A must be in (0, 1], got " + std::to_string(r_a));
  const int k = static_cast<int>(std::ceil(r_a * n - 1e-9));
  return std::clamp(k, 1, n);
}

/// Indices of the k largest scores; ties go to the lower index. Result sorted ascending.
inline std::vector<int> top_k(const std::vector<double>& scores, int k) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });
  idx.resize(static_cast<std::size_t>(std::min<int>(k, static_cast<int>(idx.size()))));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::vector<int> complement(const std::vector<int>& members, int n) {
  std::vector<char> in(static_cast<std::size_t>(n), 0);
  for (int m : members) in[static_cast<std::size_t>(m)] = 1;
  std::vector<int> out;
  for (int i = 0; i < n; ++i)
    if (!in[static_cast<std::size_t>(i)]) out.push_back(i);
  return out;
}

/// Adds every index within `w` of a member, clipped to [0, n).
inline std::vector<int> expand_window(const std::vector<int>& members, int w, int n) {
  std::set<int> out;
  for (int m : members)
    for (int d = -w; d <= w; ++d)
      if (m + d >= 0 && m + d < n) out.insert(m + d);
  return {out.begin(), out.end()};
}

inline std::vector<int> set_union(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

struct SpatialSelection {
  std::vector<std::vector<int>> per_parcel;  // causal sources of each target parcel
  std::vector<int> causal;
  std::vector<int> noncausal;
  std::vector<std::vector<double>> score;   // score[i][j]: influence of j on target i, summed over self and cross maps
  bool fallback = false;
};

struct TemporalSelection {
  std::vector<std::vector<int>> per_step;  // causal source steps of each query step, window-expanded
  std::vector<int> causal;
  std::vector<int> noncausal;
  std::vector<double> aggregate;  // per source step, summed over query steps and maps
};

namespace detail {

// Maps are (outer x query x key); the score of key j for query i is the mean over the outer axis.
inline std::vector<std::vector<double>> mean_over_outer(const Array3<double>& a) {
  const int outer = a.dim(0), q = a.dim(1), k = a.dim(2);
  std::vector<std::vector<double>> s(static_cast<std::size_t>(q), std::vector<double>(static_cast<std::size_t>(k), 0.0));
  for (int o = 0; o < outer; ++o)
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < k; ++j) s[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] += a(o, i, j);
  for (auto& row : s)
    for (auto& v : row) v /= outer;
  return s;
}

inline void check_map(const Array3<double>& a, const char* what) {
  if (a.dim(1) != a.dim(2) || a.dim(0) <= 0 || a.dim(1) <= 0) throw ValidationError(std::string(what) + ": attention map must be non-empty and square");
}

}  // namespace detail

/// `self_map` and `cross_map` are T x N x N; `cross_map` may be empty (no weather branch).
inline SpatialSelection identify_spatial(const Array3<double>& self_map, const Array3<double>& cross_map, double r_a) {
  detail::check_map(self_map, "identify_spatial");
  const bool has_cross = cross_map.size() > 0;
  if (has_cross && (cross_map.dim(0) != self_map.dim(0) || cross_map.dim(1) != self_map.dim(1))) {
    throw ValidationError("identify_spatial: self and cross maps differ in shape");
  }
  const int N = self_map.dim(1);
  const int k = causal_count(r_a, N);
  const auto sf = detail::mean_over_outer(self_map);
  const auto sw = has_cross ? detail::mean_over_outer(cross_map) : std::vector<std::vector<double>>{};
  SpatialSelection out;
  out.score = sf;
  for (int i = 0; i < N; ++i) {
    auto sel = top_k(sf[static_cast<std::size_t>(i)], k);
    if (has_cross) {
      sel = set_union(sel, top_k(sw[static_cast<std::size_t>(i)], k));
      for (int j = 0; j < N; ++j) out.score[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] += sw[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    out.causal = set_union(out.causal, sel);
    out.per_parcel.push_back(std::move(sel));
  }
  out.noncausal = complement(out.causal, N);
  if (out.noncausal.empty()) {
    // Every parcel feeds some target: keep the strongest sources by aggregate score.
    const int m = static_cast<int>(std::floor((1.0 - r_a) * N + 1e-9));
    if (m > 0) {
      std::vector<double> agg(static_cast<std::size_t>(N), 0.0);
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) agg[static_cast<std::size_t>(j)] += out.score[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      out.causal = top_k(agg, N - m);
      out.noncausal = complement(out.causal, N);
      out.fallback = true;
    }
  }
  return out;
}

/// `self_map` and `cross_map` are N x T x T; `cross_map` may be empty.
inline TemporalSelection identify_temporal(const Array3<double>& self_map, const Array3<double>& cross_map, double r_a, int w) {
  detail::check_map(self_map, "identify_temporal");
  if (w < 0) throw ValidationError("identify_temporal: window must be >= 0");
  const bool has_cross = cross_map.size() > 0;
  if (has_cross && (cross_map.dim(0) != self_map.dim(0) || cross_map.dim(1) != self_map.dim(1))) {
    throw ValidationError("identify_temporal: self and cross maps differ in shape");
  }
  const int T = self_map.dim(1);
  const int k = causal_count(r_a, T);
  const auto sf = detail::mean_over_outer(self_map);
  const auto sw = has_cross ? detail::mean_over_outer(cross_map) : std::vector<std::vector<double>>{};
  TemporalSelection out;
  out.aggregate.assign(static_cast<std::size_t>(T), 0.0);
  for (int t = 0; t < T; ++t) {
    auto sel = top_k(sf[static_cast<std::size_t>(t)], k);
    if (has_cross) sel = set_union(sel, top_k(sw[static_cast<std::size_t>(t)], k));
    out.per_step.push_back(expand_window(sel, w, T));
    for (int tau = 0; tau < T; ++tau) {
      out.aggregate[static_cast<std::size_t>(tau)] += sf[static_cast<std::size_t>(t)][static_cast<std::size_t>(tau)];
      if (has_cross) out.aggregate[static_cast<std::size_t>(tau)] += sw[static_cast<std::size_t>(t)][static_cast<std::size_t>(tau)];
    }
  }
  out.causal = expand_window(top_k(out.aggregate, k), w, T);
  out.noncausal = complement(out.causal, T);
  return out;
}

struct CausalMask {
  std::vector<int> causal_parcels, noncausal_parcels;
  std::vector<int> causal_steps, noncausal_steps;
  std::vector<std::vector<int>> per_parcel_neighbors;
  std::vector<std::vector<int>> per_step_sources;
  double r_a = 0.2;
  int window = 1;
  bool spatial_fallback = false;

  json to_json() const {
    return {{"causal_parcels", causal_parcels}, {"noncausal_parcels", noncausal_parcels}, {"causal_steps", causal_steps},
            {"noncausal_steps", noncausal_steps}, {"r_a", r_a}, {"window", window}, {"spatial_fallback", spatial_fallback}};
  }
};

inline CausalMask causal_mask(const AttentionBundle& maps, double r_a, int w) {
  const auto s = identify_spatial(maps.self_spatial, maps.cross_spatial, r_a);
  const auto t = identify_temporal(maps.self_temporal, maps.cross_temporal, r_a, w);
  CausalMask m;
  m.causal_parcels = s.causal;
  m.noncausal_parcels = s.noncausal;
  m.causal_steps = t.causal;
  m.noncausal_steps = t.noncausal;
  m.per_parcel_neighbors = s.per_parcel;
  m.per_step_sources = t.per_step;
  m.r_a = r_a;
  m.window = w;
  m.spatial_fallback = s.fallback;
  return m;
}

// ---------------------------------------------------------------------------
// Attention extraction

/// Head- and block-averaged maps of each window, in eval mode.
template <typename S>
std::vector<AttentionBundle> extract_attention(const WedNet<S>& model, const Normalizer& nz, const std::vector<const SampleWindow*>& windows,
                                               int batch_size = 64) {
  std::vector<AttentionBundle> out;
  for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto last = std::min(windows.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const SampleWindow*> chunk(windows.begin() + static_cast<std::ptrdiff_t>(start), windows.begin() + static_cast<std::ptrdiff_t>(last));
    const auto batch = make_batch<S>(chunk, nz);
    ad::Tape<S> tape(false);
    auto r = model.forward(tape, batch, 0.0, true);
    for (auto& b : r.maps) out.push_back(std::move(b));
  }
  return out;
}

template <typename S>
AttentionBundle extract_attention(const WedNet<S>& model, const Normalizer& nz, const SampleWindow& window) {
  return extract_attention(model, nz, std::vector<const SampleWindow*>{&window}).front();
}

inline void save_attention(const std::filesystem::path& stem, const AttentionBundle& b) {
  Container c;
  c.meta = {{"kind", "attention"}};
  auto put = [&](const std::string& name, const Array3<double>& a) {
    if (a.size() == 0) return;
    Blob blob{name, {a.dim(0), a.dim(1), a.dim(2)}, {}};
    for (double v : a.data()) blob.data.push_back(static_cast<float>(v));
    c.blobs.push_back(std::move(blob));
  };
  put("self_temporal", b.self_temporal);
  put("self_spatial", b.self_spatial);
  put("cross_temporal", b.cross_temporal);
  put("cross_spatial", b.cross_spatial);
  write_container(stem, c);
}

inline AttentionBundle load_attention(const std::filesystem::path& stem) {
  const Container c = read_container(stem);
  if (c.meta.value("kind", "") != "attention") throw ValidationError(stem.string() + ": not an attention bundle");
  auto get = [&](const std::string& name) {
    if (!c.has(name)) return Array3<double>();
    const Blob& b = c.blob(name);
    Array3<double> a(static_cast<int>(b.shape.at(0)), static_cast<int>(b.shape.at(1)), static_cast<int>(b.shape.at(2)), 0.0);
    for (std::size_t i = 0; i < b.data.size(); ++i) a.data()[i] = b.data[i];
    return a;
  };
  return {get("self_temporal"), get("self_spatial"), get("cross_temporal"), get("cross_spatial")};
}

// ---------------------------------------------------------------------------
// Reference selection and intervention

inline std::string day_type(const SampleWindow& w) { return is_weekend(w.day_of_week.at(0)) ? "weekend" : "weekday"; }

/// Normal windows with the same day type and start hour as `extreme`, in pool order.
inline std::vector<const SampleWindow*> matching_references(const SampleWindow& extreme, const std::vector<const SampleWindow*>& pool) {
  std::vector<const SampleWindow*> out;
  const bool weekend = is_weekend(extreme.day_of_week.at(0));
  const int hour = extreme.time_of_day.at(0);
  for (const SampleWindow* p : pool) {
    if (p->extreme()) continue;
    if (is_weekend(p->day_of_week.at(0)) == weekend && p->time_of_day.at(0) == hour) out.push_back(p);
  }
  return out;
}

inline const SampleWindow& select_reference(const SampleWindow& extreme, const std::vector<const SampleWindow*>& pool, std::uint64_t seed) {
  if (pool.empty()) throw ValidationError("select_reference: empty reference pool");
  const auto matches = matching_references(extreme, pool);
  if (matches.empty()) throw NoReferenceMatch(day_type(extreme), extreme.time_of_day.at(0));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, matches.size() - 1);
  return *matches[pick(rng)];
}

/// Copies history entries from `reference` wherever the parcel or the step is non-causal.
inline SampleWindow intervene(const SampleWindow& extreme, const SampleWindow& reference, const CausalMask& mask, int precip_feature = 0) {
  if (extreme.flow_hist.dim(0) != reference.flow_hist.dim(0) || extreme.flow_hist.dim(1) != reference.flow_hist.dim(1) ||
      extreme.flow_hist.dim(2) != reference.flow_hist.dim(2) || extreme.weather_hist.dim(2) != reference.weather_hist.dim(2)) {
    throw ValidationError("intervene: extreme and reference windows differ in shape");
  }
  const int T = extreme.steps(), N = extreme.parcels();
  std::vector<char> swap_parcel(static_cast<std::size_t>(N), 0), swap_step(static_cast<std::size_t>(T), 0);
  for (int n : mask.noncausal_parcels) {
    if (n < 0 || n >= N) throw ValidationError("intervene: parcel index out of range");
    swap_parcel[static_cast<std::size_t>(n)] = 1;
  }
  for (int t : mask.noncausal_steps) {
    if (t < 0 || t >= T) throw ValidationError("intervene: step index out of range");
    swap_step[static_cast<std::size_t>(t)] = 1;
  }
  SampleWindow out = extreme;
  for (int t = 0; t < T; ++t)
    for (int n = 0; n < N; ++n) {
      if (!swap_step[static_cast<std::size_t>(t)] && !swap_parcel[static_cast<std::size_t>(n)]) continue;
      for (int f = 0; f < out.flow_hist.dim(2); ++f) out.flow_hist(t, n, f) = reference.flow_hist(t, n, f);
      for (int f = 0; f < out.weather_hist.dim(2); ++f) out.weather_hist(t, n, f) = reference.weather_hist(t, n, f);
    }
  const auto precip = feature_slice(out.weather_hist, precip_feature);
  out.condition = label_condition(precip, N);
  out.derived_from = extreme.id;
  return out;
}

// ---------------------------------------------------------------------------
// Dataset augmentation

struct AugmentOptions {
  int r = 2;
  double r_a = 0.2;
  int window = 1;
  std::uint64_t seed = 0;
  int precip_feature = 0;

  void validate() const {
    if (r < 0) throw ValidationError("augment: r must be >= 0");
    causal_count(r_a, 1);
    if (window < 0) throw ValidationError("augment: window must be >= 0");
  }
};

struct AugmentResult {
  std::vector<SampleWindow> windows;  // D followed by the augmented samples
  long extremes = 0;
  long matchable = 0;
  long augmented = 0;
  std::vector<std::string> warnings;
  json report;
};

/// Augments the extreme windows of `data`, each masked by its own attention maps.
template <typename S>
AugmentResult augment_dataset(const std::vector<SampleWindow>& data, const WedNet<S>& model, const Normalizer& nz, const AugmentOptions& opt) {
  opt.validate();
  AugmentResult res;
  res.windows = data;
  std::vector<const SampleWindow*> pool, extremes;
  std::vector<std::size_t> extreme_pos;
  std::int64_t next_id = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    next_id = std::max(next_id, data[i].id + 1);
    if (data[i].augmented()) continue;
    if (data[i].extreme()) {
      extremes.push_back(&data[i]);
      extreme_pos.push_back(i);
    } else {
      pool.push_back(&data[i]);
    }
  }
  res.extremes = static_cast<long>(extremes.size());
  json samples = json::array();
  json skipped = json::array();
  if (extremes.empty()) res.warnings.push_back("no extreme windows; dataset unchanged");
  if (!extremes.empty()) {
    const auto maps = opt.r > 0 ? extract_attention(model, nz, extremes) : std::vector<AttentionBundle>{};
    for (std::size_t e = 0; e < extremes.size(); ++e) {
      const SampleWindow& x = *extremes[e];
      const auto matches = matching_references(x, pool);
      if (matches.empty()) {
        res.warnings.push_back(NoReferenceMatch(day_type(x), x.time_of_day.at(0)).what() + std::string(" (window ") + std::to_string(x.id) + ")");
        skipped.push_back({{"id", x.id}, {"day_type", day_type(x)}, {"hour", x.time_of_day.at(0)}});
        continue;
      }
      ++res.matchable;
      if (opt.r == 0) continue;
      const CausalMask mask = causal_mask(maps[e], opt.r_a, opt.window);
      // Per-sample stream: the result does not depend on processing order.
      std::mt19937_64 rng(derive_seed(opt.seed, static_cast<std::uint64_t>(extreme_pos[e])));
      std::vector<std::size_t> picks;
      if (matches.size() >= static_cast<std::size_t>(opt.r)) {
        std::vector<std::size_t> idx(matches.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (int d = 0; d < opt.r; ++d) {
          std::uniform_int_distribution<std::size_t> u(static_cast<std::size_t>(d), idx.size() - 1);
          std::swap(idx[static_cast<std::size_t>(d)], idx[u(rng)]);
          picks.push_back(idx[static_cast<std::size_t>(d)]);
        }
      } else {
        std::uniform_int_distribution<std::size_t> u(0, matches.size() - 1);
        for (int d = 0; d < opt.r; ++d) picks.push_back(u(rng));
      }
      for (std::size_t p : picks) {
        SampleWindow aug = intervene(x, *matches[p], mask, opt.precip_feature);
        aug.id = next_id++;
        samples.push_back({{"id", aug.id},
                           {"base", x.id},
                           {"reference", matches[p]->id},
                           {"condition", to_string(aug.condition.value)},
                           {"mask", mask.to_json()}});
        res.windows.push_back(std::move(aug));
        ++res.augmented;
      }
    }
  }
  res.report = {{"input_windows", data.size()},
                {"output_windows", res.windows.size()},
                {"extremes", res.extremes},
                {"matchable", res.matchable},
                {"skipped", res.extremes - res.matchable},
                {"augmented", res.augmented},
                {"r", opt.r},
                {"r_a", opt.r_a},
                {"window", opt.window},
                {"seed", opt.seed},
                {"warnings", res.warnings},
                {"skipped_windows", skipped},
                {"samples", samples}};
  return res;
}

}  // namespace wednet
