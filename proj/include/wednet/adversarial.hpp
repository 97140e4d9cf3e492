#pragma once

// Weather discriminator behind a gradient reversal layer. It reads the
// intrinsic-branch representation, mean-pools over steps and parcels, and
// classifies the window's condition label. The reversal pushes the encoder
// upstream of it toward weather-invariant features while the classifier itself
// trains normally.

#include <string>
#include <vector>

#include "wednet/autodiff.hpp"
#include "wednet/errors.hpp"
#include "wednet/params.hpp"

namespace wednet {

inline constexpr int kConditionClasses = 2;

template <typename S>
struct DiscriminatorOutput {
  ad::Var<S> loss;    // mean cross-entropy, nats
  ad::Var<S> logits;  // batch x 2
};

template <typename S>
class Discriminator {
 public:
  Discriminator(ParameterStore<S>& store, const std::string& prefix, int width, int hidden, double grl_lambda)
      : grl_lambda_(grl_lambda) {
    if (!(grl_lambda >= 0.0)) throw ValidationError("discriminator: grl_lambda must be >= 0");
    w1_ = &store.create(prefix + ".w1", width, hidden, Init::fan_in_uniform, width);
    b1_ = &store.create(prefix + ".b1", 1, hidden, Init::fan_in_uniform, width);
    w2_ = &store.create(prefix + ".w2", hidden, kConditionClasses, Init::fan_in_uniform, hidden);
    b2_ = &store.create(prefix + ".b2", 1, kConditionClasses, Init::fan_in_uniform, hidden);
  }

  double grl_lambda() const { return grl_lambda_; }

  /// `h_intr` holds `labels.size()` samples of tokens_per_sample rows each.
  DiscriminatorOutput<S> forward(ad::Tape<S>& tape, const ad::Var<S>& h_intr, Eigen::Index tokens_per_sample,
                                 const std::vector<int>& labels) const {
    for (int l : labels) {
      if (l < 0 || l >= kConditionClasses) throw ValidationError("discriminator: condition label " + std::to_string(l) + " is not normal/extreme");
    }
    const auto pooled = ad::group_mean_rows(ad::grl(h_intr, static_cast<S>(grl_lambda_)), tokens_per_sample);
    const auto hidden = ad::gelu(ad::linear(pooled, tape.parameter(*w1_), tape.parameter(*b1_)));
    const auto logits = ad::linear(hidden, tape.parameter(*w2_), tape.parameter(*b2_));
    return {ad::cross_entropy(logits, labels), logits};
  }

 private:
  double grl_lambda_;
  Parameter<S>*w1_, *b1_, *w2_, *b2_;
};

}  // namespace wednet
