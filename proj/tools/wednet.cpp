// Command-line front end: ingest, synth, train, augment, eval, ablate, viz.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wednet/wednet.hpp"

#ifndef WEDNET_GIT_REV
#define WEDNET_GIT_REV "unknown"
#endif

namespace fs = std::filesystem;
using namespace wednet;

namespace {

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string utc_now() {
  return format_timestamp(static_cast<Timestamp>(std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count()));
}

void write_manifest(const fs::path& dir, const std::string& verb, const std::string& config_hash, const json& seeds, const json& extra = json::object()) {
  json m = {{"verb", verb}, {"config_hash", config_hash}, {"git_revision", WEDNET_GIT_REV}, {"seeds", seeds}, {"created_utc", utc_now()}};
  m.update(extra);
  write_json(dir / "manifest.json", m);
}

/// Accepts either a container stem or its .json / .bin path.
fs::path stem_of(const fs::path& p) {
  if (p.extension() == ".json" || p.extension() == ".bin") return fs::path(p).replace_extension();
  return p;
}

std::string default_data_dir() {
  const char* env = std::getenv("WEDNET_DATA_DIR");
  return env ? env : "";
}

fs::path require_data(const std::string& data) {
  if (data.empty()) throw ValidationError("no data directory: pass --data or set WEDNET_DATA_DIR");
  return data;
}

struct Dataset {
  WindowSet train, valid, test;
};

Dataset load_dataset(const fs::path& dir) {
  return {load_windows(dir / "train"), load_windows(dir / "valid"), load_windows(dir / "test")};
}

long count_extreme(const std::vector<SampleWindow>& ws) {
  long n = 0;
  for (const auto& w : ws) n += w.extreme();
  return n;
}

/// Windows, chronological split, and the three window sets.
void write_dataset(const fs::path& out, const STTensor& flow, const STTensor& weather, int steps, int horizon) {
  auto split = chronological_split(make_windows(flow, weather, steps, horizon));
  for (auto [name, set] : {std::pair{"train", &split.train}, std::pair{"valid", &split.valid}, std::pair{"test", &split.test}}) {
    save_windows(out / name, {flow.schema, weather.schema, *set});
    std::cout << name << ": " << set->size() << " windows (" << count_extreme(*set) << " extreme)\n";
  }
}

void print_epoch(const EpochLog& e) {
  std::printf("epoch %3d  loss_pre %.5f  loss_dis %.5f  total %.5f  valid_mae %.4f  (%.1fs)\n", e.epoch, e.loss_pre, e.loss_dis, e.total, e.valid_mae,
              e.seconds);
  std::fflush(stdout);
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(std::stoull(trim(part)));
  if (out.empty()) throw ValidationError("no seeds given");
  return out;
}

std::vector<Variant> parse_variants(const std::string& s) {
  std::vector<Variant> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(parse_variant(trim(part)));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weather-effect disentanglement forecaster with causal augmentation"};
  app.require_subcommand(1);

  // ingest -----------------------------------------------------------------
  auto* ingest = app.add_subcommand("ingest", "Aggregate trip records and interpolate station weather into window sets");
  std::string trips_csv, stations_csv, graph_csv, dist_csv, ingest_out;
  bool ffill = false;
  double idw_power = 2.0;
  int steps = 12, horizon = 12;
  ingest->add_option("--trips", trips_csv, "Trip CSV: pickup_ts,dropoff_ts,pickup_parcel,dropoff_parcel")->required();
  ingest->add_option("--stations", stations_csv, "Station CSV: station_id,lat,lon,ts,precip,temp,wind")->required();
  ingest->add_option("--graph", graph_csv, "Parcel CSV: parcel_id,lat,lon")->required();
  ingest->add_option("--distances", dist_csv, "Optional parcel distance matrix CSV (meters)");
  ingest->add_flag("--ffill", ffill, "Forward-fill hours without station readings");
  ingest->add_option("--idw-power", idw_power, "Inverse-distance exponent");
  ingest->add_option("--steps", steps, "History length T");
  ingest->add_option("--horizon", horizon, "Forecast horizon T'");
  ingest->add_option("--out", ingest_out, "Output data directory")->required();

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic weather-coupled city");
  SynthConfig sc;
  std::string synth_out;
  synth->add_option("--parcels", sc.n_parcels, "Number of parcels");
  synth->add_option("--days", sc.n_days, "Number of days");
  synth->add_option("--seed", sc.seed, "Generator seed");
  synth->add_option("--rain-rate", sc.rain_event_rate, "Rain events per day");
  synth->add_option("--steps", steps, "History length T");
  synth->add_option("--horizon", horizon, "Forecast horizon T'");
  synth->add_option("--out", synth_out, "Output data directory")->required();

  // train ------------------------------------------------------------------
  auto* trainc = app.add_subcommand("train", "Train a model on a data directory");
  std::string data = default_data_dir(), config_path, run_out, variant_name;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> eta;
  trainc->add_option("--data", data, "Data directory with train/valid/test window sets (default $WEDNET_DATA_DIR)");
  trainc->add_option("--config", config_path, "key = value config file");
  trainc->add_option("--epochs", epochs, "Override epochs");
  trainc->add_option("--seed", seed, "Override seed");
  trainc->add_option("--eta", eta, "Override discriminator weight");
  trainc->add_option("--variant", variant_name, "full, no_weather, self_attn_weather, no_memory, no_discriminator");
  trainc->add_option("--out", run_out, "Run directory")->required();

  // augment ----------------------------------------------------------------
  auto* augment = app.add_subcommand("augment", "Causally augment the training split");
  std::string ckpt, aug_out;
  AugmentOptions ao;
  augment->add_option("--data", data, "Data directory (default $WEDNET_DATA_DIR)");
  augment->add_option("--ckpt", ckpt, "Checkpoint trained on the data")->required();
  augment->add_option("--r", ao.r, "Augmented samples per extreme window");
  augment->add_option("--ra", ao.r_a, "Causal proportion r_A in (0, 1]");
  augment->add_option("--window", ao.window, "Temporal expansion window w");
  augment->add_option("--seed", ao.seed, "Reference sampling seed");
  augment->add_option("--out", aug_out, "Output data directory")->required();

  // eval -------------------------------------------------------------------
  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint per condition");
  std::string split_name = "test", eval_out;
  evalc->add_option("--data", data, "Data directory (default $WEDNET_DATA_DIR)");
  evalc->add_option("--ckpt", ckpt, "Checkpoint")->required();
  evalc->add_option("--split", split_name, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  evalc->add_option("--out", eval_out, "Metrics JSON path");

  // ablate -----------------------------------------------------------------
  auto* ablate = app.add_subcommand("ablate", "Train variants over several seeds");
  std::string variants_arg = "full,no_weather,self_attn_weather,no_memory,no_discriminator", seeds_arg = "1,2,3";
  ablate->add_option("--data", data, "Data directory (default $WEDNET_DATA_DIR)");
  ablate->add_option("--config", config_path, "key = value config file");
  ablate->add_option("--epochs", epochs, "Override epochs");
  ablate->add_option("--variants", variants_arg, "Comma-separated variants");
  ablate->add_option("--seeds", seeds_arg, "Comma-separated seeds");
  ablate->add_option("--out", run_out, "Run directory")->required();

  // viz --------------------------------------------------------------------
  auto* viz = app.add_subcommand("viz", "Emit plot artifacts (CSV + PPM)");
  std::string kind, viz_out;
  int target = 0, window_index = 0, parcel = 0;
  double viz_ra = 0.2;
  viz->add_option("--data", data, "Data directory (default $WEDNET_DATA_DIR)");
  viz->add_option("--ckpt", ckpt, "Checkpoint")->required();
  viz->add_option("--kind", kind, "causal_map, pca or pred_curve")->required()->check(CLI::IsMember({"causal_map", "pca", "pred_curve"}));
  viz->add_option("--split", split_name, "Window split to draw from")->check(CLI::IsMember({"train", "valid", "test"}));
  viz->add_option("--target", target, "Target parcel (causal_map)");
  viz->add_option("--window-index", window_index, "Window within the split (causal_map)");
  viz->add_option("--parcel", parcel, "Parcel (pred_curve)");
  viz->add_option("--ra", viz_ra, "Causal proportion (causal_map)");
  viz->add_option("--out", viz_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      fs::create_directories(ingest_out);
      const RegionGraph graph = read_graph_csv(graph_csv, dist_csv);
      const auto trips = read_trips_csv(trips_csv);
      const STTensor flow = aggregate_trips(trips, graph);
      const STTensor weather = idw_interpolate(read_stations_csv(stations_csv), graph, flow.time_index, {idw_power, ffill});
      write_graph_csv(fs::path(ingest_out) / "graph.csv", graph, fs::path(ingest_out) / "distances.csv");
      save_tensor(fs::path(ingest_out) / "flow", flow);
      save_tensor(fs::path(ingest_out) / "weather", weather);
      write_dataset(ingest_out, flow, weather, steps, horizon);
      write_manifest(ingest_out, "ingest", "", json::array(), {{"trips", trips.size()}, {"hours", flow.steps()}, {"parcels", graph.size()}});
    } else if (*synth) {
      fs::create_directories(synth_out);
      const SynthCity city = generate_synthetic(sc);
      write_graph_csv(fs::path(synth_out) / "graph.csv", city.graph, fs::path(synth_out) / "distances.csv");
      save_tensor(fs::path(synth_out) / "flow", city.flow);
      save_tensor(fs::path(synth_out) / "weather", city.weather);
      write_dataset(synth_out, city.flow, city.weather, steps, horizon);
      write_manifest(synth_out, "synth", "", json::array({sc.seed}), {{"parcels", sc.n_parcels}, {"days", sc.n_days}, {"suppression", city.suppression}});
    } else if (*trainc) {
      TrainConfig cfg;
      if (!config_path.empty()) apply_config(cfg, read_key_values(config_path));
      if (epochs) cfg.epochs = *epochs;
      if (seed) cfg.seed = *seed;
      if (eta) cfg.eta = *eta;
      if (!variant_name.empty()) cfg.model.variant = parse_variant(variant_name);
      if (cfg.model.variant == Variant::no_discriminator) cfg.eta = 0.0;
      cfg.validate();
      const Dataset ds = load_dataset(require_data(data));
      fs::create_directories(run_out);
      std::cout << "config " << cfg.hash() << "  variant " << to_string(cfg.model.variant) << "  train " << ds.train.windows.size() << "  valid "
                << ds.valid.windows.size() << "\n";
      auto res = train<float>(cfg, ds.train.windows, ds.valid.windows, print_epoch);
      save_checkpoint(fs::path(run_out) / "checkpoint", *res.model, res.normalizer, {{"train", cfg.to_json()}, {"config_hash", cfg.hash()}});
      write_json(fs::path(run_out) / "train_log.json", res.log.to_json());
      const auto rep = evaluate(*res.model, res.normalizer, ds.test.windows, cfg.eval_batch_size, cfg.hash());
      write_json(fs::path(run_out) / "metrics.json", rep.to_json());
      write_manifest(run_out, "train", cfg.hash(), json::array({cfg.seed}), {{"config", cfg.to_json()}, {"data", data}});
      std::cout << rep.table() << "\n";
      if (res.log.diverged) {
        std::cerr << "training diverged (" << res.log.divergence << "); checkpoint holds the last finite parameters\n";
        return 2;
      }
    } else if (*augment) {
      const Dataset ds = load_dataset(require_data(data));
      auto loaded = load_checkpoint<float>(stem_of(ckpt));
      const auto res = augment_dataset(ds.train.windows, *loaded.model, loaded.normalizer, ao);
      for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
      fs::create_directories(aug_out);
      save_windows(fs::path(aug_out) / "train", {ds.train.flow_schema, ds.train.weather_schema, res.windows});
      save_windows(fs::path(aug_out) / "valid", ds.valid);
      save_windows(fs::path(aug_out) / "test", ds.test);
      write_json(fs::path(aug_out) / "augment_report.json", res.report);
      write_manifest(aug_out, "augment", loaded.extra.value("config_hash", ""), json::array({ao.seed}),
                     {{"source", data}, {"checkpoint", ckpt}, {"r", ao.r}, {"r_a", ao.r_a}, {"window", ao.window}});
      std::cout << "extremes " << res.extremes << ", matchable " << res.matchable << ", augmented " << res.augmented << "; train " << ds.train.windows.size()
                << " -> " << res.windows.size() << " windows\n";
    } else if (*evalc) {
      const Dataset ds = load_dataset(require_data(data));
      auto loaded = load_checkpoint<float>(stem_of(ckpt));
      const auto& windows = split_name == "train" ? ds.train.windows : split_name == "valid" ? ds.valid.windows : ds.test.windows;
      const auto rep = evaluate(*loaded.model, loaded.normalizer, windows, 64, loaded.extra.value("config_hash", ""));
      std::cout << rep.table() << "\n" << persistence_baseline(windows).table() << "\n";
      if (!eval_out.empty()) write_json(eval_out, rep.to_json());
    } else if (*ablate) {
      TrainConfig cfg;
      if (!config_path.empty()) apply_config(cfg, read_key_values(config_path));
      if (epochs) cfg.epochs = *epochs;
      const Dataset ds = load_dataset(require_data(data));
      const Split split{ds.train.windows, ds.valid.windows, ds.test.windows};
      const auto seeds = parse_seeds(seeds_arg);
      fs::create_directories(run_out);
      const auto rows = run_ablation(cfg, split, parse_variants(variants_arg), seeds, [](Variant v, std::uint64_t s, const MetricsReport& r) {
        std::cout << "seed " << s << "  " << r.table() << "\n";
        (void)v;
      });
      json out = json::array();
      std::cout << "\nvariant               extreme MAE (mean±std)   normal MAE (mean±std)\n";
      for (const auto& r : rows) {
        out.push_back(r.to_json());
        std::printf("%-20s  %8.4f ± %-8.4f        %8.4f ± %-8.4f\n", to_string(r.variant), r.extreme_mae_mean, r.extreme_mae_std, r.normal_mae_mean,
                    r.normal_mae_std);
      }
      write_json(fs::path(run_out) / "ablation.json", out);
      write_manifest(run_out, "ablate", cfg.hash(), seeds, {{"config", cfg.to_json()}, {"data", data}});
    } else if (*viz) {
      const fs::path dir = require_data(data);
      const Dataset ds = load_dataset(dir);
      auto loaded = load_checkpoint<float>(stem_of(ckpt));
      const auto& windows = split_name == "train" ? ds.train.windows : split_name == "valid" ? ds.valid.windows : ds.test.windows;
      fs::create_directories(viz_out);
      if (kind == "causal_map") {
        if (window_index < 0 || window_index >= static_cast<int>(windows.size())) throw ValidationError("viz: --window-index out of range");
        const auto maps = extract_attention(*loaded.model, loaded.normalizer, windows[static_cast<std::size_t>(window_index)]);
        std::optional<RegionGraph> graph;
        if (fs::exists(dir / "graph.csv")) graph = read_graph_csv(dir / "graph.csv", fs::exists(dir / "distances.csv") ? dir / "distances.csv" : fs::path{});
        write_causal_map(fs::path(viz_out) / "causal_map", causal_map(maps, target, viz_ra), graph ? &*graph : nullptr, target);
      } else if (kind == "pca") {
        write_pca(fs::path(viz_out) / "pca", pca_projection(*loaded.model, loaded.normalizer, windows));
      } else {
        write_pred_curve(fs::path(viz_out) / "pred_curve", prediction_curve(*loaded.model, loaded.normalizer, windows, parcel));
      }
      std::cout << "wrote " << (fs::path(viz_out) / kind).string() << ".{csv,ppm}\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
