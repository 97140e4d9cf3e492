#pragma once

// Plot artifacts: CSV tables plus binary PPM rasters.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "wednet/causalaug.hpp"
#include "wednet/model.hpp"

namespace wednet {

using Rgb = std::array<std::uint8_t, 3>;

class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {255, 255, 255})
      : w_(width), h_(height), px_(static_cast<std::size_t>(width) * height, background) {}

  int width() const { return w_; }
  int height() const { return h_; }

  void set(int x, int y, Rgb c) {
    if (x >= 0 && y >= 0 && x < w_ && y < h_) px_[static_cast<std::size_t>(y) * w_ + x] = c;
  }
  Rgb at(int x, int y) const { return px_[static_cast<std::size_t>(y) * w_ + x]; }

  void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::max(0, y0); y <= std::min(h_ - 1, y1); ++y)
      for (int x = std::max(0, x0); x <= std::min(w_ - 1, x1); ++x) set(x, y, c);
  }

  void line(int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void write_ppm(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P6\n" << w_ << ' ' << h_ << "\n255\n";
    for (const auto& p : px_) out.write(reinterpret_cast<const char*>(p.data()), 3);
  }

 private:
  int w_, h_;
  std::vector<Rgb> px_;
};

/// White-to-red ramp for v in [0, 1].
inline Rgb heat(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const auto g = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - v)));
  return {255, g, g};
}

inline std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(9);
  return out;
}

// ---------------------------------------------------------------------------
// causal_map

struct CausalMapRow {
  int parcel = 0;
  double intensity = 0;
  bool causal = false;
};

/// Influence of every parcel on `target`, as ranked by identify_spatial.
inline std::vector<CausalMapRow> causal_map(const AttentionBundle& maps, int target, double r_a) {
  const auto sel = identify_spatial(maps.self_spatial, maps.cross_spatial, r_a);
  const int N = static_cast<int>(sel.score.size());
  if (target < 0 || target >= N) throw ValidationError("causal_map: target parcel " + std::to_string(target) + " out of range");
  const auto& members = sel.per_parcel[static_cast<std::size_t>(target)];
  std::vector<CausalMapRow> rows;
  for (int j = 0; j < N; ++j) {
    rows.push_back({j, sel.score[static_cast<std::size_t>(target)][static_cast<std::size_t>(j)],
                    std::binary_search(members.begin(), members.end(), j)});
  }
  return rows;
}

inline void write_causal_map(const std::filesystem::path& stem, const std::vector<CausalMapRow>& rows, const RegionGraph* graph, int target) {
  auto csv = open_csv(stem.string() + ".csv");
  csv << "parcel,intensity,causal\n";
  double hi = 0;
  for (const auto& r : rows) {
    csv << r.parcel << ',' << r.intensity << ',' << (r.causal ? 1 : 0) << '\n';
    hi = std::max(hi, r.intensity);
  }
  const int N = static_cast<int>(rows.size());
  Canvas img(320, 320);
  // Parcels at their centroids when a graph is available, otherwise on a square grid.
  std::vector<std::pair<double, double>> pos;
  if (graph && static_cast<int>(graph->centroids.size()) == N) {
    for (const auto& c : graph->centroids) pos.emplace_back(c.lon, c.lat);
  } else {
    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(N))));
    for (int i = 0; i < N; ++i) pos.emplace_back(i % side, -(i / side));
  }
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (auto [x, y] : pos) {
    x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
  }
  const double sx = x1 > x0 ? 260.0 / (x1 - x0) : 0, sy = y1 > y0 ? 260.0 / (y1 - y0) : 0;
  for (int i = 0; i < N; ++i) {
    const int px = 30 + static_cast<int>((pos[static_cast<std::size_t>(i)].first - x0) * sx);
    const int py = 290 - static_cast<int>((pos[static_cast<std::size_t>(i)].second - y0) * sy);
    const Rgb c = heat(hi > 0 ? rows[static_cast<std::size_t>(i)].intensity / hi : 0);
    img.fill_rect(px - 9, py - 9, px + 9, py + 9, {0, 0, 0});
    img.fill_rect(px - 8, py - 8, px + 8, py + 8, c);
    if (i == target) img.fill_rect(px - 3, py - 3, px + 3, py + 3, {0, 0, 255});
  }
  img.write_ppm(stem.string() + ".ppm");
}

// ---------------------------------------------------------------------------
// pca

struct PcaRow {
  std::int64_t window = 0;
  double pc1 = 0, pc2 = 0;
  std::string branch;  // "intrinsic" or "weather"
  Condition condition = Condition::normal;
};

/// Rows of `x` projected on its two leading principal axes. Axis signs are fixed
/// so the largest-magnitude loading is positive.
inline Eigen::MatrixXd pca2(const Eigen::MatrixXd& x) {
  if (x.rows() < 2 || x.cols() < 2) throw ValidationError("pca: need at least 2 rows and 2 columns");
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  Eigen::MatrixXd axes(x.cols(), 2);
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd v = es.eigenvectors().col(x.cols() - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    axes.col(k) = v;
  }
  return centered * axes;
}

/// Joint projection of the mean-pooled intrinsic and weather representations of each window.
template <typename S>
std::vector<PcaRow> pca_projection(const WedNet<S>& model, const Normalizer& nz, const std::vector<SampleWindow>& windows, int batch_size = 64) {
  if (!model.config().uses_weather()) throw ValidationError("pca: the model has no weather branch");
  const int tokens = model.config().steps * model.config().parcels;
  const int W = model.config().width();
  Eigen::MatrixXd pooled(2 * static_cast<Eigen::Index>(windows.size()), W);
  for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<const SampleWindow*> chunk;
    for (std::size_t i = start; i < std::min(windows.size(), start + static_cast<std::size_t>(batch_size)); ++i) chunk.push_back(&windows[i]);
    ad::Tape<S> tape(false);
    const auto r = model.forward(tape, make_batch<S>(chunk, nz), 0.0);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const auto i = static_cast<Eigen::Index>(start + b);
      const auto first = static_cast<Eigen::Index>(b) * tokens;
      pooled.row(i) = r.h_intr.value().middleRows(first, tokens).colwise().mean().template cast<double>();
      pooled.row(static_cast<Eigen::Index>(windows.size()) + i) = r.h_weat.value().middleRows(first, tokens).colwise().mean().template cast<double>();
    }
  }
  const Eigen::MatrixXd proj = pca2(pooled);
  std::vector<PcaRow> rows;
  for (int branch = 0; branch < 2; ++branch)
    for (std::size_t i = 0; i < windows.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(branch) * static_cast<Eigen::Index>(windows.size()) + static_cast<Eigen::Index>(i);
      rows.push_back({windows[i].id, proj(r, 0), proj(r, 1), branch == 0 ? "intrinsic" : "weather", windows[i].condition.value});
    }
  return rows;
}

inline void write_pca(const std::filesystem::path& stem, const std::vector<PcaRow>& rows) {
  auto csv = open_csv(stem.string() + ".csv");
  csv << "pc1,pc2,branch,condition,window\n";
  double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
  for (const auto& r : rows) {
    csv << r.pc1 << ',' << r.pc2 << ',' << r.branch << ',' << to_string(r.condition) << ',' << r.window << '\n';
    lo[0] = std::min(lo[0], r.pc1), hi[0] = std::max(hi[0], r.pc1);
    lo[1] = std::min(lo[1], r.pc2), hi[1] = std::max(hi[1], r.pc2);
  }
  Canvas img(400, 400);
  for (const auto& r : rows) {
    const int x = 10 + static_cast<int>(hi[0] > lo[0] ? (r.pc1 - lo[0]) / (hi[0] - lo[0]) * 380 : 190);
    const int y = 390 - static_cast<int>(hi[1] > lo[1] ? (r.pc2 - lo[1]) / (hi[1] - lo[1]) * 380 : 190);
    // Intrinsic in blue shades, weather in orange shades; extreme windows darker.
    const bool ext = r.condition == Condition::extreme;
    const Rgb c = r.branch == "intrinsic" ? (ext ? Rgb{0, 0, 140} : Rgb{110, 160, 255}) : (ext ? Rgb{170, 60, 0} : Rgb{255, 180, 90});
    img.fill_rect(x - 2, y - 2, x + 2, y + 2, c);
  }
  img.write_ppm(stem.string() + ".ppm");
}

// ---------------------------------------------------------------------------
// pred_curve

struct CurvePoint {
  Timestamp time = 0;
  double truth = 0;
  double prediction = 0;
  double precip = 0;
};

/// One-step-ahead predictions of `feature` at `parcel` for consecutive windows.
template <typename S>
std::vector<CurvePoint> prediction_curve(const WedNet<S>& model, const Normalizer& nz, const std::vector<SampleWindow>& windows, int parcel,
                                         int feature = 0, int batch_size = 64) {
  const auto& mc = model.config();
  if (parcel < 0 || parcel >= mc.parcels) throw ValidationError("pred_curve: parcel out of range");
  if (feature < 0 || feature >= mc.flow_features) throw ValidationError("pred_curve: feature out of range");
  std::vector<CurvePoint> out;
  for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<const SampleWindow*> chunk;
    for (std::size_t i = start; i < std::min(windows.size(), start + static_cast<std::size_t>(batch_size)); ++i) chunk.push_back(&windows[i]);
    ad::Tape<S> tape(false);
    const auto r = model.forward(tape, make_batch<S>(chunk, nz), 0.0);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const SampleWindow& w = *chunk[b];
      const double z = static_cast<double>(r.pred.value()(static_cast<Eigen::Index>(b) * mc.parcels + parcel, feature));
      out.push_back({w.start_time + static_cast<Timestamp>(w.steps()) * kSecondsPerHour, w.flow_future(0, parcel, feature), nz.flow_out(z, feature),
                     w.weather_hist(w.steps() - 1, parcel, 0)});
    }
  }
  return out;
}

inline void write_pred_curve(const std::filesystem::path& stem, const std::vector<CurvePoint>& pts) {
  auto csv = open_csv(stem.string() + ".csv");
  csv << "time,truth,prediction,precip\n";
  double lo = 1e300, hi = -1e300;
  for (const auto& p : pts) {
    csv << format_timestamp(p.time) << ',' << p.truth << ',' << p.prediction << ',' << p.precip << '\n';
    lo = std::min({lo, p.truth, p.prediction});
    hi = std::max({hi, p.truth, p.prediction});
  }
  const int W = 600, H = 300;
  Canvas img(W, H);
  if (pts.size() >= 2 && hi > lo) {
    auto px = [&](std::size_t i) { return 10 + static_cast<int>(static_cast<double>(i) / static_cast<double>(pts.size() - 1) * (W - 20)); };
    auto py = [&](double v) { return H - 10 - static_cast<int>((v - lo) / (hi - lo) * (H - 20)); };
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (pts[i].precip > kExtremePrecipThreshold) img.fill_rect(px(i) - 1, 0, px(i) + 1, H - 1, {225, 235, 255});
    for (std::size_t i = 1; i < pts.size(); ++i) {
      img.line(px(i - 1), py(pts[i - 1].truth), px(i), py(pts[i].truth), {0, 0, 0});
      img.line(px(i - 1), py(pts[i - 1].prediction), px(i), py(pts[i].prediction), {220, 0, 0});
    }
  }
  img.write_ppm(stem.string() + ".ppm");
}

}  // namespace wednet
