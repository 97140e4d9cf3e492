#pragma once

// The assembled forecaster: embeddings, dual encoders, memory banks, weather
// discriminator, adaptive gate and predictor, with structural ablation variants.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wednet/adversarial.hpp"
#include "wednet/autodiff.hpp"
#include "wednet/datamodel.hpp"
#include "wednet/embed.hpp"
#include "wednet/encoders.hpp"
#include "wednet/fusion.hpp"
#include "wednet/io.hpp"
#include "wednet/memory.hpp"
#include "wednet/params.hpp"

namespace wednet {

enum class Variant { full, no_weather, self_attn_weather, no_memory, no_discriminator };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_weather: return "no_weather";
    case Variant::self_attn_weather: return "self_attn_weather";
    case Variant::no_memory: return "no_memory";
    case Variant::no_discriminator: return "no_discriminator";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::full, Variant::no_weather, Variant::self_attn_weather, Variant::no_memory, Variant::no_discriminator})
    if (s == to_string(v)) return v;
  throw ValidationError("unknown variant '" + s + "' (full, no_weather, self_attn_weather, no_memory, no_discriminator)");
}

struct ModelConfig {
  int steps = 12;
  int horizon = 12;
  int parcels = 0;
  int flow_features = 2;
  int weather_features = 3;
  EmbeddingDims embed;
  int heads = 4;
  int blocks = 4;
  int ffn_factor = 4;
  double dropout = 0.1;
  int memory_slots = 16;
  int predictor_hidden = 256;
  int disc_hidden = 64;
  double grl_lambda = 1.0;
  Variant variant = Variant::full;

  int width() const { return embed.total(); }
  bool uses_weather() const { return variant != Variant::no_weather; }
  bool uses_memory() const { return variant != Variant::no_memory; }
  bool uses_discriminator() const { return variant != Variant::no_discriminator; }

  EncoderDims encoder_dims() const { return {width(), heads, blocks, ffn_factor, dropout}; }

  /// Width-8, single-block, single-head model used for gradient checks.
  static ModelConfig reduced(int steps, int parcels, int horizon = 2) {
    ModelConfig c;
    c.steps = steps;
    c.horizon = horizon;
    c.parcels = parcels;
    c.embed = {2, 2, 2, 1, 1};
    c.heads = 1;
    c.blocks = 1;
    c.ffn_factor = 2;
    c.dropout = 0.0;
    c.memory_slots = 2;
    c.predictor_hidden = 6;
    c.disc_hidden = 4;
    return c;
  }

  void validate() const {
    if (steps <= 0 || horizon <= 0 || parcels <= 0) throw ValidationError("model config: steps, horizon and parcels must be positive");
    if (flow_features <= 0 || weather_features <= 0) throw ValidationError("model config: feature counts must be positive");
    if (heads <= 0 || width() % heads != 0) throw ValidationError("model config: hidden width must be divisible by heads");
    if (blocks <= 0 || ffn_factor <= 0 || memory_slots <= 0 || predictor_hidden <= 0 || disc_hidden <= 0) {
      throw ValidationError("model config: sizes must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("model config: dropout must be in [0, 1)");
    if (!(grl_lambda >= 0.0)) throw ValidationError("model config: grl_lambda must be >= 0");
  }

  json to_json() const {
    return {{"steps", steps},
            {"horizon", horizon},
            {"parcels", parcels},
            {"flow_features", flow_features},
            {"weather_features", weather_features},
            {"embed", {embed.feature, embed.temporal, embed.spatial, embed.time_of_day, embed.day_of_week}},
            {"heads", heads},
            {"blocks", blocks},
            {"ffn_factor", ffn_factor},
            {"dropout", dropout},
            {"memory_slots", memory_slots},
            {"predictor_hidden", predictor_hidden},
            {"disc_hidden", disc_hidden},
            {"grl_lambda", grl_lambda},
            {"variant", to_string(variant)}};
  }

  static ModelConfig from_json(const json& j) {
    ModelConfig c;
    c.steps = j.at("steps");
    c.horizon = j.at("horizon");
    c.parcels = j.at("parcels");
    c.flow_features = j.at("flow_features");
    c.weather_features = j.at("weather_features");
    const auto e = j.at("embed").get<std::vector<int>>();
    if (e.size() != 5) throw CheckpointMismatch("model config: embed must list 5 widths");
    c.embed = {e[0], e[1], e[2], e[3], e[4]};
    c.heads = j.at("heads");
    c.blocks = j.at("blocks");
    c.ffn_factor = j.at("ffn_factor");
    c.dropout = j.at("dropout");
    c.memory_slots = j.at("memory_slots");
    c.predictor_hidden = j.at("predictor_hidden");
    c.disc_hidden = j.at("disc_hidden");
    c.grl_lambda = j.at("grl_lambda");
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Normalization and batching

/// Flow is z-scored per feature; weather is min-max scaled per attribute to [0, 1].
/// Statistics come from observed (non-augmented) training windows only.
struct Normalizer {
  std::vector<double> flow_mean, flow_std, weather_min, weather_max;

  static Normalizer fit(const std::vector<SampleWindow>& windows) {
    Normalizer nz;
    const SampleWindow* first = nullptr;
    for (const auto& w : windows)
      if (!w.augmented()) {
        first = &w;
        break;
      }
    if (!first) throw ValidationError("normalizer: no observed windows to fit on");
    const int df = first->flow_hist.dim(2), dm = first->weather_hist.dim(2);
    std::vector<double> sum(df, 0.0), sq(df, 0.0);
    nz.weather_min.assign(dm, std::numeric_limits<double>::infinity());
    nz.weather_max.assign(dm, -std::numeric_limits<double>::infinity());
    double count = 0;
    for (const auto& w : windows) {
      if (w.augmented()) continue;
      for (int t = 0; t < w.steps(); ++t)
        for (int n = 0; n < w.parcels(); ++n) {
          for (int f = 0; f < df; ++f) {
            const double v = w.flow_hist(t, n, f);
            sum[f] += v;
            sq[f] += v * v;
          }
          for (int f = 0; f < dm; ++f) {
            nz.weather_min[f] = std::min(nz.weather_min[f], static_cast<double>(w.weather_hist(t, n, f)));
            nz.weather_max[f] = std::max(nz.weather_max[f], static_cast<double>(w.weather_hist(t, n, f)));
          }
        }
      count += w.steps() * w.parcels();
    }
    for (int f = 0; f < df; ++f) {
      const double mean = sum[f] / count;
      nz.flow_mean.push_back(mean);
      nz.flow_std.push_back(std::max(1e-6, std::sqrt(std::max(0.0, sq[f] / count - mean * mean))));
    }
    return nz;
  }

  double flow_in(double v, int f) const { return (v - flow_mean[f]) / flow_std[f]; }
  double flow_out(double z, int f) const { return z * flow_std[f] + flow_mean[f]; }
  double weather_in(double v, int f) const {
    const double range = weather_max[f] - weather_min[f];
    return range > 0 ? (v - weather_min[f]) / range : 0.0;
  }

  json to_json() const {
    return {{"flow_mean", flow_mean}, {"flow_std", flow_std}, {"weather_min", weather_min}, {"weather_max", weather_max}};
  }
  static Normalizer from_json(const json& j) {
    return {j.at("flow_mean").get<std::vector<double>>(), j.at("flow_std").get<std::vector<double>>(),
            j.at("weather_min").get<std::vector<double>>(), j.at("weather_max").get<std::vector<double>>()};
  }
};

template <typename S>
struct Batch {
  int size = 0;
  int steps = 0;
  int parcels = 0;
  int horizon = 0;
  Mat<S> flow;     // (B*T*N) x d_f, standardized
  Mat<S> weather;  // (B*T*N) x d_m, scaled
  Mat<S> target;   // (B*N) x (T'*d_f), standardized
  Calendar calendar;
  std::vector<int> labels;
};

template <typename S>
Batch<S> make_batch(const std::vector<const SampleWindow*>& windows, const Normalizer& nz) {
  if (windows.empty()) throw ValidationError("make_batch: empty batch");
  const SampleWindow& w0 = *windows.front();
  Batch<S> b;
  b.size = static_cast<int>(windows.size());
  b.steps = w0.steps();
  b.parcels = w0.parcels();
  b.horizon = w0.horizon();
  const int T = b.steps, N = b.parcels, H = b.horizon;
  const int df = w0.flow_hist.dim(2), dm = w0.weather_hist.dim(2);
  if (static_cast<int>(nz.flow_mean.size()) != df || static_cast<int>(nz.weather_min.size()) != dm) {
    throw ValidationError("make_batch: normalizer feature counts do not match windows");
  }
  b.flow.resize(static_cast<Eigen::Index>(b.size) * T * N, df);
  b.weather.resize(static_cast<Eigen::Index>(b.size) * T * N, dm);
  b.target.resize(static_cast<Eigen::Index>(b.size) * N, H * df);
  b.calendar.batch = b.size;
  b.calendar.steps = T;
  for (int i = 0; i < b.size; ++i) {
    const SampleWindow& w = *windows[static_cast<std::size_t>(i)];
    if (w.steps() != T || w.parcels() != N || w.horizon() != H) throw ValidationError("make_batch: windows have inconsistent shapes");
    for (int t = 0; t < T; ++t) {
      b.calendar.time_of_day.push_back(w.time_of_day[static_cast<std::size_t>(t)]);
      b.calendar.day_of_week.push_back(w.day_of_week[static_cast<std::size_t>(t)]);
      for (int n = 0; n < N; ++n) {
        const Eigen::Index r = (static_cast<Eigen::Index>(i) * T + t) * N + n;
        for (int f = 0; f < df; ++f) b.flow(r, f) = static_cast<S>(nz.flow_in(w.flow_hist(t, n, f), f));
        for (int f = 0; f < dm; ++f) b.weather(r, f) = static_cast<S>(nz.weather_in(w.weather_hist(t, n, f), f));
      }
    }
    for (int t = 0; t < H; ++t)
      for (int n = 0; n < N; ++n)
        for (int f = 0; f < df; ++f) b.target(i * N + n, t * df + f) = static_cast<S>(nz.flow_in(w.flow_future(t, n, f), f));
    b.labels.push_back(static_cast<int>(w.condition.value));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Model

template <typename S>
struct ForwardResult {
  ad::Var<S> pred;     // (B*N) x (T'*d_f), standardized
  ad::Var<S> h_intr;   // intrinsic encoder output
  ad::Var<S> h_weat;   // weather encoder output (invalid for no_weather)
  ad::Var<S> alpha;    // gate (invalid for no_weather)
  ad::Var<S> loss_pre;
  ad::Var<S> loss_dis;  // invalid without discriminator
  ad::Var<S> total;
  LossReport report;
  std::vector<AttentionBundle> maps;  // per sample, when requested
};

template <typename S>
class WedNet {
 public:
  WedNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
    cfg_.validate();
    const int w = cfg_.width();
    const EncoderDims dims = cfg_.encoder_dims();
    flow_embed_ = std::make_unique<Embedding<S>>(store_, "embed.flow", cfg_.flow_features, cfg_.steps, cfg_.parcels, cfg_.embed);
    intrinsic_ = std::make_unique<STEncoder<S>>(store_, "istenc", dims, EncoderMode::self_attention);
    if (cfg_.uses_weather()) {
      weather_embed_ = std::make_unique<Embedding<S>>(store_, "embed.weather", cfg_.weather_features, cfg_.steps, cfg_.parcels, cfg_.embed);
      if (cfg_.variant == Variant::self_attn_weather) {
        concat_w_ = &store_.create("wstenc.concat_proj.weight", 2 * w, w, Init::fan_in_uniform, 2 * w);
        concat_b_ = &store_.create("wstenc.concat_proj.bias", 1, w, Init::fan_in_uniform, 2 * w);
        weather_ = std::make_unique<STEncoder<S>>(store_, "wstenc", dims, EncoderMode::self_attention);
      } else {
        weather_ = std::make_unique<STEncoder<S>>(store_, "wstenc", dims, EncoderMode::cross_attention);
      }
    }
    if (cfg_.uses_memory()) {
      mem_intr_ = std::make_unique<MemoryBank<S>>(store_, "mem.intr", w, cfg_.memory_slots);
      if (cfg_.uses_weather()) mem_weat_ = std::make_unique<MemoryBank<S>>(store_, "mem.weat", w, cfg_.memory_slots);
    }
    if (cfg_.uses_discriminator()) disc_ = std::make_unique<Discriminator<S>>(store_, "disc", w, cfg_.disc_hidden, cfg_.grl_lambda);
    if (cfg_.uses_weather()) gate_ = std::make_unique<AdaptiveGate<S>>(store_, "gate", w);
    predictor_ = std::make_unique<Predictor<S>>(store_, "pred", cfg_.steps, w, cfg_.predictor_hidden, cfg_.horizon, cfg_.flow_features);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<S>& params() { return store_; }
  const ParameterStore<S>& params() const { return store_; }

  STEncoder<S>& intrinsic_encoder() { return *intrinsic_; }
  STEncoder<S>* weather_encoder() { return weather_.get(); }
  MemoryBank<S>* intrinsic_memory() { return mem_intr_.get(); }
  MemoryBank<S>* weather_memory() { return mem_weat_.get(); }
  AdaptiveGate<S>* gate() { return gate_.get(); }
  Predictor<S>& predictor() { return *predictor_; }
  Discriminator<S>* discriminator() { return disc_.get(); }

  /// Forward pass and loss. The tape's training flag controls dropout.
  ForwardResult<S> forward(ad::Tape<S>& tape, const Batch<S>& batch, double eta, bool want_maps = false) const {
    if (batch.steps != cfg_.steps || batch.parcels != cfg_.parcels || batch.horizon != cfg_.horizon) {
      throw ValidationError("forward: batch shape (T=" + std::to_string(batch.steps) + ", N=" + std::to_string(batch.parcels) +
                            ", T'=" + std::to_string(batch.horizon) + ") does not match model config");
    }
    const int B = batch.size, T = batch.steps, N = batch.parcels;
    ForwardResult<S> r;
    const auto h_f = (*flow_embed_)(tape, batch.flow, batch.calendar);
    auto intr = intrinsic_->forward(tape, h_f, {}, B, T, N, want_maps);
    r.h_intr = intr.hidden;

    EncoderOutput<S> weat;
    if (cfg_.uses_weather()) {
      const auto h_w = (*weather_embed_)(tape, batch.weather, batch.calendar);
      if (cfg_.variant == Variant::self_attn_weather) {
        const auto mixed = ad::linear(ad::concat_cols<S>({h_f, h_w}), tape.parameter(*concat_w_), tape.parameter(*concat_b_));
        weat = weather_->forward(tape, mixed, {}, B, T, N, want_maps);
      } else {
        weat = weather_->forward(tape, h_f, h_w, B, T, N, want_maps);
      }
      r.h_weat = weat.hidden;
    }

    auto a_intr = mem_intr_ ? mem_intr_->augment(tape, r.h_intr) : r.h_intr;
    ad::Var<S> fused = a_intr;
    if (cfg_.uses_weather()) {
      auto a_weat = mem_weat_ ? mem_weat_->augment(tape, r.h_weat) : r.h_weat;
      auto g = gate_->forward(tape, a_intr, a_weat);
      fused = g.fused;
      r.alpha = g.alpha;
    }
    r.pred = predictor_->forward(tape, fused, B, N);
    if (disc_) r.loss_dis = disc_->forward(tape, r.h_intr, static_cast<Eigen::Index>(T) * N, batch.labels).loss;
    auto loss = compute_loss(r.pred, batch.target, r.loss_dis, disc_ ? eta : 0.0);
    r.loss_pre = loss.loss_pre;
    r.total = loss.total;
    r.report = loss.report;

    if (want_maps) {
      for (int b = 0; b < B; ++b) {
        AttentionBundle bundle;
        bundle.self_temporal = intr.maps.temporal[static_cast<std::size_t>(b)];
        bundle.self_spatial = intr.maps.spatial[static_cast<std::size_t>(b)];
        if (cfg_.uses_weather()) {
          bundle.cross_temporal = weat.maps.temporal[static_cast<std::size_t>(b)];
          bundle.cross_spatial = weat.maps.spatial[static_cast<std::size_t>(b)];
        }
        r.maps.push_back(std::move(bundle));
      }
    }
    return r;
  }

 private:
  ModelConfig cfg_;
  ParameterStore<S> store_;
  std::unique_ptr<Embedding<S>> flow_embed_, weather_embed_;
  std::unique_ptr<STEncoder<S>> intrinsic_, weather_;
  Parameter<S>* concat_w_ = nullptr;
  Parameter<S>* concat_b_ = nullptr;
  std::unique_ptr<MemoryBank<S>> mem_intr_, mem_weat_;
  std::unique_ptr<Discriminator<S>> disc_;
  std::unique_ptr<AdaptiveGate<S>> gate_;
  std::unique_ptr<Predictor<S>> predictor_;
};

// ---------------------------------------------------------------------------
// Checkpoints: one blob per parameter (float32) plus model config and normalizer in the header.

template <typename S>
void save_checkpoint(const std::filesystem::path& stem, const WedNet<S>& model, const Normalizer& nz, const json& extra = json::object()) {
  Container c;
  c.meta = {{"kind", "checkpoint"}, {"model", model.config().to_json()}, {"normalizer", nz.to_json()}, {"extra", extra}};
  for (const auto& p : model.params().all()) {
    Blob b{p.name, {p.value.rows(), p.value.cols()}, {}};
    b.data.reserve(static_cast<std::size_t>(p.value.size()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) b.data.push_back(static_cast<float>(p.value.data()[i]));
    c.blobs.push_back(std::move(b));
  }
  write_container(stem, c);
}

template <typename S>
struct LoadedCheckpoint {
  std::unique_ptr<WedNet<S>> model;
  Normalizer normalizer;
  json extra;
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::filesystem::path& stem) {
  const Container c = read_container(stem);
  if (c.meta.value("kind", "") != "checkpoint") throw CheckpointMismatch(stem.string() + ": not a checkpoint");
  LoadedCheckpoint<S> out;
  out.model = std::make_unique<WedNet<S>>(ModelConfig::from_json(c.meta.at("model")), 0);
  out.normalizer = Normalizer::from_json(c.meta.at("normalizer"));
  out.extra = c.meta.value("extra", json::object());
  auto& params = out.model->params();
  if (params.all().size() != c.blobs.size()) {
    throw CheckpointMismatch(stem.string() + ": checkpoint has " + std::to_string(c.blobs.size()) + " tensors, model expects " +
                             std::to_string(params.all().size()));
  }
  for (auto& p : params.all()) {
    if (!c.has(p.name)) throw CheckpointMismatch(stem.string() + ": missing parameter '" + p.name + "'");
    const Blob& b = c.blob(p.name);
    if (b.shape.size() != 2 || b.shape[0] != p.value.rows() || b.shape[1] != p.value.cols()) {
      throw CheckpointMismatch(stem.string() + ": shape mismatch for '" + p.name + "'");
    }
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<S>(b.data[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace wednet
