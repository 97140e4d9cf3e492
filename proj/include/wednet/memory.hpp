#pragma once

// Learnable spatio-temporal memory bank. Each token projects to a query, attends
// over L_m slot rows with softmax(q . slots^T), and reads back the weighted slot
// mixture; the read-out is fused residually: LN(h + A . slots).

#include <string>

#include "wednet/autodiff.hpp"
#include "wednet/errors.hpp"
#include "wednet/params.hpp"

namespace wednet {

template <typename S>
struct MemoryReadout {
  ad::Var<S> retrieved;  // tokens x width
  ad::Var<S> weights;    // tokens x slots, row-stochastic
};

template <typename S>
class MemoryBank {
 public:
  MemoryBank(ParameterStore<S>& store, const std::string& prefix, int width, int slots) : width_(width) {
    if (slots <= 0) throw ValidationError("memory bank needs at least one slot");
    slots_ = &store.create(prefix + ".slots", slots, width, Init::fan_in_uniform, width);
    wq_ = &store.create(prefix + ".query.weight", width, width, Init::fan_in_uniform, width);
    bq_ = &store.create(prefix + ".query.bias", 1, width, Init::fan_in_uniform, width);
    gain_ = &store.create(prefix + ".norm.gain", 1, width, Init::ones);
    bias_ = &store.create(prefix + ".norm.bias", 1, width, Init::zeros);
  }

  Parameter<S>& slots() { return *slots_; }
  Parameter<S>& query_weight() { return *wq_; }
  Parameter<S>& query_bias() { return *bq_; }

  MemoryReadout<S> query(ad::Tape<S>& tape, const ad::Var<S>& h) const {
    if (h.cols() != width_) {
      throw ValidationError("memory: hidden width " + std::to_string(h.cols()) + " does not match bank width " + std::to_string(width_));
    }
    const auto slots = tape.parameter(*slots_);
    const auto q = ad::linear(h, tape.parameter(*wq_), tape.parameter(*bq_));
    const auto weights = ad::softmax_rows(ad::matmul_nt(q, slots));
    return {ad::matmul(weights, slots), weights};
  }

  ad::Var<S> augment(ad::Tape<S>& tape, const ad::Var<S>& h) const {
    const auto r = query(tape, h);
    return ad::layer_norm(ad::add(h, r.retrieved), tape.parameter(*gain_), tape.parameter(*bias_));
  }

 private:
  int width_;
  Parameter<S>*slots_, *wq_, *bq_, *gain_, *bias_;
};

}  // namespace wednet
