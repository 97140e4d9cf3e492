#pragma once

// Spatio-temporal transformer encoders.
//
// A block is a temporal attention layer followed by a spatial attention layer.
// Each layer is post-norm: x1 = LN(q + W_o MHA(q, kv)), out = LN(x1 + FFN(x1)).
// The intrinsic encoder uses self-attention over flow hidden states; the
// weather encoder takes queries from the flow stream and keys/values from the
// weather hidden states, which stay fixed across blocks.

#include <memory>
#include <string>
#include <vector>

#include "wednet/attention.hpp"
#include "wednet/autodiff.hpp"
#include "wednet/datamodel.hpp"
#include "wednet/errors.hpp"
#include "wednet/params.hpp"

namespace wednet {

struct EncoderDims {
  int width = 72;
  int heads = 4;
  int blocks = 4;
  int ffn_factor = 4;
  double dropout = 0.1;
};

/// Head- and block-averaged attention maps of one sample.
struct AttentionBundle {
  Array3<double> self_temporal;   // N x T x T
  Array3<double> self_spatial;    // T x N x N
  Array3<double> cross_temporal;  // N x T x T (empty without a weather branch)
  Array3<double> cross_spatial;   // T x N x N
};

/// Running per-sample mean of layer attention maps.
struct MapAccumulator {
  int layers = 0;
  std::vector<Array3<double>> temporal;  // per sample N x T x T
  std::vector<Array3<double>> spatial;   // per sample T x N x N

  template <typename S>
  void add(const AttentionProbs<S>& probs, const AttentionLayout& layout) {
    const int B = layout.batch, T = layout.steps, N = layout.parcels;
    auto& maps = layout.axis == AttentionAxis::temporal ? temporal : spatial;
    if (maps.empty()) {
      for (int b = 0; b < B; ++b) {
        maps.push_back(layout.axis == AttentionAxis::temporal ? Array3<double>(N, T, T, 0.0) : Array3<double>(T, N, N, 0.0));
      }
    }
    const int L = layout.length();
    const int per_sample = layout.axis == AttentionAxis::temporal ? N : T;
    for (int g = 0; g < layout.groups(); ++g) {
      auto& m = maps[static_cast<std::size_t>(g / per_sample)];
      const int slot = g % per_sample;
      for (int h = 0; h < probs.heads; ++h)
        for (int i = 0; i < L; ++i)
          for (int j = 0; j < L; ++j) m(slot, i, j) += static_cast<double>(probs.at(g, h, i, j)) / probs.heads;
    }
  }

  void finish() {
    const int blocks = layers;
    if (blocks <= 0) return;
    for (auto* maps : {&temporal, &spatial})
      for (auto& m : *maps)
        for (auto& v : m.data()) v /= blocks;
  }
};

/// One attention sub-layer: multi-head attention + residual + norm, FFN + residual + norm.
template <typename S>
class AttentionLayer {
 public:
  AttentionLayer(ParameterStore<S>& store, const std::string& prefix, const EncoderDims& dims) : dims_(dims) {
    const int w = dims.width, f = dims.width * dims.ffn_factor;
    if (dims.heads <= 0 || w % dims.heads != 0) throw ValidationError("attention layer: width not divisible by heads");
    wq_ = &store.create(prefix + ".wq", w, w, Init::fan_in_uniform, w);
    wk_ = &store.create(prefix + ".wk", w, w, Init::fan_in_uniform, w);
    wv_ = &store.create(prefix + ".wv", w, w, Init::fan_in_uniform, w);
    wo_ = &store.create(prefix + ".wo", w, w, Init::fan_in_uniform, w);
    bo_ = &store.create(prefix + ".bo", 1, w, Init::fan_in_uniform, w);
    w1_ = &store.create(prefix + ".ffn.w1", w, f, Init::fan_in_uniform, w);
    b1_ = &store.create(prefix + ".ffn.b1", 1, f, Init::fan_in_uniform, w);
    w2_ = &store.create(prefix + ".ffn.w2", f, w, Init::fan_in_uniform, f);
    b2_ = &store.create(prefix + ".ffn.b2", 1, w, Init::fan_in_uniform, f);
    ln1g_ = &store.create(prefix + ".ln1.gain", 1, w, Init::ones);
    ln1b_ = &store.create(prefix + ".ln1.bias", 1, w, Init::zeros);
    ln2g_ = &store.create(prefix + ".ln2.gain", 1, w, Init::ones);
    ln2b_ = &store.create(prefix + ".ln2.bias", 1, w, Init::zeros);
  }

  AttentionOutput<S> forward(ad::Tape<S>& tape, const ad::Var<S>& q_src, const ad::Var<S>& kv_src, const AttentionLayout& layout) const {
    const auto q = ad::matmul(q_src, tape.parameter(*wq_));
    const auto k = ad::matmul(kv_src, tape.parameter(*wk_));
    const auto v = ad::matmul(kv_src, tape.parameter(*wv_));
    auto attn = ad::attention(q, k, v, dims_.heads, layout, dims_.dropout);
    const auto mixed = ad::linear(attn.out, tape.parameter(*wo_), tape.parameter(*bo_));
    const auto x1 = ad::layer_norm(ad::add(q_src, mixed), tape.parameter(*ln1g_), tape.parameter(*ln1b_));
    auto ff = ad::linear(ad::gelu(ad::linear(x1, tape.parameter(*w1_), tape.parameter(*b1_))), tape.parameter(*w2_), tape.parameter(*b2_));
    ff = ad::dropout(ff, dims_.dropout);
    const auto x2 = ad::layer_norm(ad::add(x1, ff), tape.parameter(*ln2g_), tape.parameter(*ln2b_));
    return {x2, attn.probs};
  }

  Parameter<S>& output_weight() { return *wo_; }
  Parameter<S>& output_bias() { return *bo_; }

 private:
  EncoderDims dims_;
  Parameter<S>*wq_, *wk_, *wv_, *wo_, *bo_, *w1_, *b1_, *w2_, *b2_, *ln1g_, *ln1b_, *ln2g_, *ln2b_;
};

/// Temporal attention of `q_src` over `kv_src` (mixes steps within each parcel).
template <typename S>
AttentionOutput<S> temporal_attention(ad::Tape<S>& tape, const ad::Var<S>& q_src, const ad::Var<S>& kv_src, const AttentionLayer<S>& layer,
                                      int batch, int steps, int parcels) {
  return layer.forward(tape, q_src, kv_src, {batch, steps, parcels, AttentionAxis::temporal});
}

/// Spatial attention of `q_src` over `kv_src` (mixes parcels within each step).
template <typename S>
AttentionOutput<S> spatial_attention(ad::Tape<S>& tape, const ad::Var<S>& q_src, const ad::Var<S>& kv_src, const AttentionLayer<S>& layer,
                                     int batch, int steps, int parcels) {
  return layer.forward(tape, q_src, kv_src, {batch, steps, parcels, AttentionAxis::spatial});
}

enum class EncoderMode { self_attention, cross_attention };

template <typename S>
struct EncoderOutput {
  ad::Var<S> hidden;
  MapAccumulator maps;  // populated only when requested
};

template <typename S>
class STEncoder {
 public:
  STEncoder(ParameterStore<S>& store, const std::string& prefix, const EncoderDims& dims, EncoderMode mode) : dims_(dims), mode_(mode) {
    for (int k = 0; k < dims.blocks; ++k) {
      const std::string p = prefix + ".block" + std::to_string(k);
      temporal_.push_back(std::make_unique<AttentionLayer<S>>(store, p + ".temporal", dims));
      spatial_.push_back(std::make_unique<AttentionLayer<S>>(store, p + ".spatial", dims));
    }
  }

  EncoderMode mode() const { return mode_; }
  int blocks() const { return dims_.blocks; }
  AttentionLayer<S>& temporal_layer(int k) { return *temporal_[static_cast<std::size_t>(k)]; }
  AttentionLayer<S>& spatial_layer(int k) { return *spatial_[static_cast<std::size_t>(k)]; }

  /// Self mode ignores `kv`. Cross mode draws keys/values from `kv` in every block.
  EncoderOutput<S> forward(ad::Tape<S>& tape, const ad::Var<S>& h, const ad::Var<S>& kv, int batch, int steps, int parcels,
                           bool want_maps) const {
    if (mode_ == EncoderMode::cross_attention) {
      if (!kv.valid()) throw ValidationError("cross-attention encoder needs a key/value stream");
      if (kv.rows() != h.rows() || kv.cols() != h.cols()) throw ValidationError("cross-attention: flow and weather hidden shapes differ");
    }
    EncoderOutput<S> out;
    ad::Var<S> x = h;
    for (int k = 0; k < dims_.blocks; ++k) {
      const AttentionLayout lt{batch, steps, parcels, AttentionAxis::temporal};
      const AttentionLayout ls{batch, steps, parcels, AttentionAxis::spatial};
      const auto& src_t = mode_ == EncoderMode::cross_attention ? kv : x;
      auto t = temporal_[static_cast<std::size_t>(k)]->forward(tape, x, src_t, lt);
      const auto& src_s = mode_ == EncoderMode::cross_attention ? kv : t.out;
      auto s = spatial_[static_cast<std::size_t>(k)]->forward(tape, t.out, src_s, ls);
      x = s.out;
      if (!x.value().allFinite()) throw NumericalError("encoder block " + std::to_string(k) + ": non-finite activation");
      if (want_maps) {
        out.maps.add(*t.probs, lt);
        out.maps.add(*s.probs, ls);
        ++out.maps.layers;
      }
    }
    if (want_maps) out.maps.finish();
    out.hidden = x;
    return out;
  }

 private:
  EncoderDims dims_;
  EncoderMode mode_;
  std::vector<std::unique_ptr<AttentionLayer<S>>> temporal_;
  std::vector<std::unique_ptr<AttentionLayer<S>>> spatial_;
};

}  // namespace wednet
