#pragma once

// On-disk formats.
//
// Container: `<stem>.json` holds a header (format tag, byte order, dtype, user
// metadata and a blob directory); `<stem>.bin` holds the blobs back to back as
// row-major little-endian float32. Tensors, window sets, attention bundles and
// checkpoints all use it.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wednet/datamodel.hpp"

namespace wednet {

using json = nlohmann::json;

struct Blob {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

struct Container {
  json meta;
  std::vector<Blob> blobs;

  const Blob& blob(const std::string& name) const {
    for (const auto& b : blobs)
      if (b.name == name) return b;
    throw ValidationError("container has no blob named '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& b : blobs)
      if (b.name == name) return true;
    return false;
  }
};

inline constexpr const char* kContainerFormat = "wednet.container";

namespace detail {

inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
}

inline std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace detail

inline void write_container(const std::filesystem::path& stem, const Container& c) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  json header;
  header["format"] = kContainerFormat;
  header["version"] = 1;
  header["byte_order"] = "little";
  header["dtype"] = "float32";
  header["meta"] = c.meta;
  header["blobs"] = json::array();
  std::ofstream bin(detail::with_suffix(stem, ".bin"), std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("cannot write " + detail::with_suffix(stem, ".bin").string());
  std::int64_t offset = 0;
  for (const auto& b : c.blobs) {
    std::int64_t count = 1;
    for (auto d : b.shape) count *= d;
    if (count != static_cast<std::int64_t>(b.data.size())) throw ValidationError("blob '" + b.name + "' shape does not match data");
    header["blobs"].push_back({{"name", b.name}, {"shape", b.shape}, {"offset", offset}, {"count", count}});
    for (float f : b.data) {
      std::uint32_t u = 0;
      std::memcpy(&u, &f, sizeof(u));
      u = detail::to_little(u);
      bin.write(reinterpret_cast<const char*>(&u), sizeof(u));
    }
    offset += count * 4;
  }
  std::ofstream js(detail::with_suffix(stem, ".json"), std::ios::trunc);
  if (!js) throw std::runtime_error("cannot write " + detail::with_suffix(stem, ".json").string());
  js << header.dump(1) << "\n";
}

inline Container read_container(const std::filesystem::path& stem) {
  std::ifstream js(detail::with_suffix(stem, ".json"));
  if (!js) throw std::runtime_error("cannot open " + detail::with_suffix(stem, ".json").string());
  const json header = json::parse(js);
  if (header.value("format", "") != kContainerFormat) throw ValidationError(stem.string() + ": not a wednet container");
  if (header.value("dtype", "") != "float32" || header.value("byte_order", "") != "little") {
    throw ValidationError(stem.string() + ": unsupported dtype or byte order");
  }
  std::ifstream bin(detail::with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open " + detail::with_suffix(stem, ".bin").string());
  Container c;
  c.meta = header.value("meta", json::object());
  for (const auto& entry : header.at("blobs")) {
    Blob b;
    b.name = entry.at("name").get<std::string>();
    b.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto count = entry.at("count").get<std::int64_t>();
    bin.seekg(entry.at("offset").get<std::int64_t>());
    b.data.resize(static_cast<std::size_t>(count));
    for (auto& f : b.data) {
      std::uint32_t u = 0;
      bin.read(reinterpret_cast<char*>(&u), sizeof(u));
      u = detail::to_little(u);
      std::memcpy(&f, &u, sizeof(u));
    }
    if (!bin) throw ValidationError(stem.string() + ": truncated payload for blob '" + b.name + "'");
    c.blobs.push_back(std::move(b));
  }
  return c;
}

// ---------------------------------------------------------------------------
// STTensor

inline json schema_to_json(const std::vector<Feature>& schema) {
  json j = json::array();
  for (const auto& f : schema) j.push_back({{"name", f.name}, {"unit", f.unit}});
  return j;
}

inline std::vector<Feature> schema_from_json(const json& j) {
  std::vector<Feature> out;
  for (const auto& f : j) out.push_back({f.at("name").get<std::string>(), f.value("unit", "")});
  return out;
}

inline void save_tensor(const std::filesystem::path& stem, const STTensor& t) {
  Container c;
  c.meta = {{"kind", "sttensor"},
            {"shape", {t.steps(), t.parcels(), t.features()}},
            {"schema", schema_to_json(t.schema)},
            {"time_index", t.time_index},
            {"time_start", t.time_index.empty() ? std::string() : format_timestamp(t.time_index.front())}};
  c.blobs.push_back({"values", {t.steps(), t.parcels(), t.features()}, t.values.data()});
  write_container(stem, c);
}

inline STTensor load_tensor(const std::filesystem::path& stem) {
  const Container c = read_container(stem);
  if (c.meta.value("kind", "") != "sttensor") throw ValidationError(stem.string() + ": not an STTensor container");
  const auto shape = c.meta.at("shape").get<std::vector<int>>();
  if (shape.size() != 3) throw ValidationError(stem.string() + ": STTensor shape must have 3 axes");
  STTensor t;
  t.values = Array3<float>(shape[0], shape[1], shape[2]);
  t.values.data() = c.blob("values").data;
  if (t.values.data().size() != t.values.size()) throw ValidationError(stem.string() + ": payload size mismatch");
  t.schema = schema_from_json(c.meta.at("schema"));
  t.time_index = c.meta.at("time_index").get<std::vector<Timestamp>>();
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// RegionGraph CSV: header `parcel_id,lat,lon`; optional N x N distance matrix in meters.

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(context + ": cannot parse number '" + s + "'");
  }
}

}  // namespace detail

inline RegionGraph read_graph_csv(const std::filesystem::path& path, const std::filesystem::path& distance_path = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "parcel_id" || header[1] != "lat" || header[2] != "lon") {
    throw ValidationError(path.string() + ": expected header parcel_id,lat,lon");
  }
  std::vector<std::string> ids;
  std::vector<LatLon> centroids;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() < 3) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 3 columns");
    ids.push_back(cells[0]);
    const std::string ctx = path.string() + ":" + std::to_string(lineno);
    centroids.push_back({detail::parse_double(cells[1], ctx), detail::parse_double(cells[2], ctx)});
  }
  if (distance_path.empty() || !std::filesystem::exists(distance_path)) return RegionGraph::from_centroids(std::move(ids), std::move(centroids));
  std::ifstream din(distance_path);
  const auto n = static_cast<Eigen::Index>(ids.size());
  Eigen::MatrixXd dist(n, n);
  Eigen::Index r = 0;
  while (std::getline(din, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (r >= n || static_cast<Eigen::Index>(cells.size()) != n) throw ValidationError(distance_path.string() + ": expected an N x N matrix");
    for (Eigen::Index c = 0; c < n; ++c) dist(r, c) = detail::parse_double(cells[static_cast<std::size_t>(c)], distance_path.string());
    ++r;
  }
  if (r != n) throw ValidationError(distance_path.string() + ": expected " + std::to_string(n) + " rows");
  return RegionGraph::from_distances(std::move(ids), std::move(centroids), std::move(dist));
}

inline void write_graph_csv(const std::filesystem::path& path, const RegionGraph& g, const std::filesystem::path& distance_path = {}) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out.precision(10);
  out << "parcel_id,lat,lon\n";
  for (int i = 0; i < g.size(); ++i) out << g.parcel_ids[static_cast<std::size_t>(i)] << "," << g.centroids[static_cast<std::size_t>(i)].lat << "," << g.centroids[static_cast<std::size_t>(i)].lon << "\n";
  if (distance_path.empty()) return;
  std::ofstream d(distance_path);
  d.precision(17);
  for (int i = 0; i < g.size(); ++i) {
    for (int j = 0; j < g.size(); ++j) d << (j ? "," : "") << g.distances(i, j);
    d << "\n";
  }
}

// ---------------------------------------------------------------------------
// Window sets

struct WindowSet {
  std::vector<Feature> flow_schema;
  std::vector<Feature> weather_schema;
  std::vector<SampleWindow> windows;
};

inline void save_windows(const std::filesystem::path& stem, const WindowSet& set) {
  Container c;
  json entries = json::array();
  Blob flow{"flow_hist", {}, {}}, weather{"weather_hist", {}, {}}, future{"flow_future", {}, {}};
  int steps = 0, horizon = 0, parcels = 0;
  for (const auto& w : set.windows) {
    if (steps == 0) {
      steps = w.steps();
      horizon = w.horizon();
      parcels = w.parcels();
    } else if (w.steps() != steps || w.horizon() != horizon || w.parcels() != parcels) {
      throw ValidationError("save_windows: windows have inconsistent shapes");
    }
    entries.push_back({{"id", w.id},
                       {"start_time", w.start_time},
                       {"time_of_day", w.time_of_day},
                       {"day_of_week", w.day_of_week},
                       {"condition", to_string(w.condition.value)},
                       {"mean_precip", w.condition.mean_precip},
                       {"derived_from", w.derived_from}});
    flow.data.insert(flow.data.end(), w.flow_hist.data().begin(), w.flow_hist.data().end());
    weather.data.insert(weather.data.end(), w.weather_hist.data().begin(), w.weather_hist.data().end());
    future.data.insert(future.data.end(), w.flow_future.data().begin(), w.flow_future.data().end());
  }
  const auto count = static_cast<std::int64_t>(set.windows.size());
  const auto df = static_cast<std::int64_t>(set.flow_schema.size());
  const auto dm = static_cast<std::int64_t>(set.weather_schema.size());
  flow.shape = {count, steps, parcels, df};
  weather.shape = {count, steps, parcels, dm};
  future.shape = {count, horizon, parcels, df};
  c.meta = {{"kind", "windows"},
            {"count", count},
            {"steps", steps},
            {"horizon", horizon},
            {"parcels", parcels},
            {"flow_schema", schema_to_json(set.flow_schema)},
            {"weather_schema", schema_to_json(set.weather_schema)},
            {"windows", entries}};
  c.blobs = {std::move(flow), std::move(weather), std::move(future)};
  write_container(stem, c);
}

inline WindowSet load_windows(const std::filesystem::path& stem) {
  const Container c = read_container(stem);
  if (c.meta.value("kind", "") != "windows") throw ValidationError(stem.string() + ": not a window-set container");
  WindowSet set;
  set.flow_schema = schema_from_json(c.meta.at("flow_schema"));
  set.weather_schema = schema_from_json(c.meta.at("weather_schema"));
  const int steps = c.meta.at("steps"), horizon = c.meta.at("horizon"), parcels = c.meta.at("parcels");
  const int df = static_cast<int>(set.flow_schema.size()), dm = static_cast<int>(set.weather_schema.size());
  const auto& flow = c.blob("flow_hist").data;
  const auto& weather = c.blob("weather_hist").data;
  const auto& future = c.blob("flow_future").data;
  const std::size_t fs = static_cast<std::size_t>(steps) * parcels * df;
  const std::size_t ws = static_cast<std::size_t>(steps) * parcels * dm;
  const std::size_t us = static_cast<std::size_t>(horizon) * parcels * df;
  std::size_t i = 0;
  for (const auto& e : c.meta.at("windows")) {
    SampleWindow w;
    w.id = e.at("id");
    w.start_time = e.at("start_time");
    w.time_of_day = e.at("time_of_day").get<std::vector<int>>();
    w.day_of_week = e.at("day_of_week").get<std::vector<int>>();
    w.condition.value = e.at("condition").get<std::string>() == "extreme" ? Condition::extreme : Condition::normal;
    w.condition.mean_precip = e.at("mean_precip");
    w.derived_from = e.value("derived_from", std::int64_t{-1});
    w.flow_hist = Array3<float>(steps, parcels, df);
    w.weather_hist = Array3<float>(steps, parcels, dm);
    w.flow_future = Array3<float>(horizon, parcels, df);
    if ((i + 1) * fs > flow.size() || (i + 1) * ws > weather.size() || (i + 1) * us > future.size()) {
      throw ValidationError(stem.string() + ": payload shorter than window directory");
    }
    std::copy_n(flow.begin() + static_cast<std::ptrdiff_t>(i * fs), fs, w.flow_hist.data().begin());
    std::copy_n(weather.begin() + static_cast<std::ptrdiff_t>(i * ws), ws, w.weather_hist.data().begin());
    std::copy_n(future.begin() + static_cast<std::ptrdiff_t>(i * us), us, w.flow_future.data().begin());
    set.windows.push_back(std::move(w));
    ++i;
  }
  return set;
}

}  // namespace wednet
