#pragma once

#include <cmath>
#include <string>

#include "wednet/autodiff.hpp"
#include "wednet/errors.hpp"
#include "wednet/params.hpp"

namespace wednet {

template <typename S>
struct FusionOutput {
  ad::Var<S> fused;
  ad::Var<S> alpha;
};

/// alpha = sigmoid([h_intr | h_weat] W + b), fused = alpha * h_intr + (1 - alpha) * h_weat, elementwise.
template <typename S>
class AdaptiveGate {
 public:
  AdaptiveGate(ParameterStore<S>& store, const std::string& prefix, int width) {
    weight_ = &store.create(prefix + ".weight", 2 * width, width, Init::fan_in_uniform, 2 * width);
    bias_ = &store.create(prefix + ".bias", 1, width, Init::fan_in_uniform, 2 * width);
  }

  Parameter<S>& weight() { return *weight_; }
  Parameter<S>& bias() { return *bias_; }

  FusionOutput<S> forward(ad::Tape<S>& tape, const ad::Var<S>& h_intr, const ad::Var<S>& h_weat) const {
    if (h_intr.rows() != h_weat.rows() || h_intr.cols() != h_weat.cols()) throw ValidationError("adaptive_fuse: branch shapes differ");
    const auto alpha = ad::sigmoid(ad::linear(ad::concat_cols<S>({h_intr, h_weat}), tape.parameter(*weight_), tape.parameter(*bias_)));
    const auto fused = ad::add(h_weat, ad::hadamard(alpha, ad::sub(h_intr, h_weat)));
    return {fused, alpha};
  }

 private:
  Parameter<S>*weight_, *bias_;
};

/// Per-parcel MLP over the flattened T x width history representation, shared by all parcels.
/// Output rows are (batch item, parcel); columns are (future step, flow feature).
template <typename S>
class Predictor {
 public:
  Predictor(ParameterStore<S>& store, const std::string& prefix, int steps, int width, int hidden, int horizon, int out_features)
      : steps_(steps) {
    const int in = steps * width;
    w1_ = &store.create(prefix + ".w1", in, hidden, Init::fan_in_uniform, in);
    b1_ = &store.create(prefix + ".b1", 1, hidden, Init::fan_in_uniform, in);
    w2_ = &store.create(prefix + ".w2", hidden, horizon * out_features, Init::fan_in_uniform, hidden);
    b2_ = &store.create(prefix + ".b2", 1, horizon * out_features, Init::fan_in_uniform, hidden);
  }

  Parameter<S>& output_weight() { return *w2_; }
  Parameter<S>& output_bias() { return *b2_; }

  ad::Var<S> forward(ad::Tape<S>& tape, const ad::Var<S>& fused, int batch, int parcels) const {
    const auto flat = ad::flatten_steps(fused, batch, steps_, parcels);
    const auto hidden = ad::gelu(ad::linear(flat, tape.parameter(*w1_), tape.parameter(*b1_)));
    return ad::linear(hidden, tape.parameter(*w2_), tape.parameter(*b2_));
  }

 private:
  int steps_;
  Parameter<S>*w1_, *b1_, *w2_, *b2_;
};

struct LossReport {
  double loss_pre = 0;  // MAE, standardized flow units during training
  double loss_dis = 0;  // nats
  double total = 0;
  double eta = 0;
};

template <typename S>
struct LossTerms {
  ad::Var<S> loss_pre;
  ad::Var<S> total;
  LossReport report;
};

/// total = MAE(pred, target) + eta * loss_dis. `loss_dis` may be invalid (no discriminator).
template <typename S>
LossTerms<S> compute_loss(const ad::Var<S>& pred, const Mat<S>& target, const ad::Var<S>& loss_dis, double eta) {
  if (!(eta >= 0.0)) throw ValidationError("compute_loss: eta must be >= 0");
  if (!pred.value().allFinite() || !target.allFinite()) throw NumericalError("compute_loss: NaN or Inf in prediction or target");
  LossTerms<S> out;
  out.loss_pre = ad::mae_loss(pred, target);
  out.report.eta = eta;
  out.report.loss_pre = static_cast<double>(out.loss_pre.value()(0, 0));
  if (loss_dis.valid()) {
    out.total = ad::add(out.loss_pre, ad::scale(loss_dis, static_cast<S>(eta)));
    out.report.loss_dis = static_cast<double>(loss_dis.value()(0, 0));
  } else {
    out.total = out.loss_pre;
  }
  out.report.total = static_cast<double>(out.total.value()(0, 0));
  return out;
}

}  // namespace wednet
