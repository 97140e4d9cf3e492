#pragma once

// Fused multi-head scaled dot-product attention over token groups.
//
// Tokens are rows ((b * T) + t) * N + n. Temporal attention groups the T rows
// of each (b, n) and mixes over steps; spatial attention groups the N rows of
// each (b, t) and mixes over parcels.

#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "wednet/autodiff.hpp"

namespace wednet {

enum class AttentionAxis { temporal, spatial };

struct AttentionLayout {
  int batch = 1;
  int steps = 1;
  int parcels = 1;
  AttentionAxis axis = AttentionAxis::temporal;

  int groups() const { return axis == AttentionAxis::temporal ? batch * parcels : batch * steps; }
  int length() const { return axis == AttentionAxis::temporal ? steps : parcels; }
  int tokens() const { return batch * steps * parcels; }

  /// Row index of member `m` of group `g`.
  int row(int g, int m) const {
    if (axis == AttentionAxis::temporal) {
      const int b = g / parcels, n = g % parcels;
      return (b * steps + m) * parcels + n;
    }
    const int b = g / steps, t = g % steps;
    return (b * steps + t) * parcels + m;
  }
};

/// Softmax probabilities (pre-dropout) of every (group, head), each a length x length
/// row-stochastic block stored contiguously.
template <typename S>
struct AttentionProbs {
  int groups = 0;
  int heads = 0;
  int length = 0;
  std::vector<S> data;

  const S* block(int g, int h) const { return data.data() + (static_cast<std::size_t>(g) * heads + h) * length * length; }
  S at(int g, int h, int query, int key) const { return block(g, h)[query * length + key]; }
};

template <typename S>
struct AttentionOutput {
  ad::Var<S> out;
  std::shared_ptr<const AttentionProbs<S>> probs;
};

namespace ad {

/// Per group and head: A = softmax(Q K^T / sqrt(head_dim)), out = A V. Heads are
/// contiguous column slices of q, k and v. Dropout (training tapes only) is
/// applied to A after normalization.
template <typename S>
AttentionOutput<S> attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, int heads, const AttentionLayout& layout,
                             double dropout_rate = 0.0) {
  const Eigen::Index width = q.cols();
  if (heads <= 0 || width % heads != 0) throw std::invalid_argument("attention: width not divisible by head count");
  if (k.cols() != width || v.cols() != width) throw std::invalid_argument("attention: q/k/v widths differ");
  if (q.rows() != layout.tokens() || k.rows() != layout.tokens() || v.rows() != layout.tokens()) {
    throw std::invalid_argument("attention: row count " + std::to_string(q.rows()) + " does not match layout tokens " +
                                std::to_string(layout.tokens()));
  }
  Tape<S>& tape = q.tape();
  const int hd = static_cast<int>(width / heads);
  const int len = layout.length();
  const int groups = layout.groups();
  const S inv_scale = S(1) / std::sqrt(S(hd));
  const bool drop = tape.training() && dropout_rate > 0.0;

  auto probs = std::make_shared<AttentionProbs<S>>();
  probs->groups = groups;
  probs->heads = heads;
  probs->length = len;
  probs->data.resize(static_cast<std::size_t>(groups) * heads * len * len);
  auto mask = std::make_shared<std::vector<S>>(drop ? probs->data.size() : 0);
  std::bernoulli_distribution keep(drop ? 1.0 - dropout_rate : 1.0);
  const S keep_scale = drop ? S(1.0 / (1.0 - dropout_rate)) : S(1);

  Mat<S> out(q.rows(), width);
  Mat<S> qg(len, hd), kg(len, hd), vg(len, hd), logits(len, len), pd(len, len), og(len, hd);
  for (int g = 0; g < groups; ++g) {
    for (int h = 0; h < heads; ++h) {
      for (int m = 0; m < len; ++m) {
        const int r = layout.row(g, m);
        qg.row(m) = q.value().block(r, h * hd, 1, hd);
        kg.row(m) = k.value().block(r, h * hd, 1, hd);
        vg.row(m) = v.value().block(r, h * hd, 1, hd);
      }
      logits.noalias() = qg * kg.transpose();
      logits *= inv_scale;
      Eigen::Map<Mat<S>> p(probs->data.data() + (static_cast<std::size_t>(g) * heads + h) * len * len, len, len);
      p = softmax_rows_value<S>(logits);
      if (drop) {
        Eigen::Map<Mat<S>> mk(mask->data() + (static_cast<std::size_t>(g) * heads + h) * len * len, len, len);
        for (Eigen::Index i = 0; i < mk.size(); ++i) mk.data()[i] = keep(tape.rng()) ? keep_scale : S(0);
        pd = p.cwiseProduct(mk);
      } else {
        pd = p;
      }
      og.noalias() = pd * vg;
      for (int m = 0; m < len; ++m) out.block(layout.row(g, m), h * hd, 1, hd) = og.row(m);
    }
  }

  const bool needs = detail::any_grad({q, k, v});
  Var<S> result = tape.push(std::move(out), needs, [q, k, v, heads, hd, len, groups, layout, inv_scale, drop, probs, mask,
                                                    &tape](const Mat<S>& gout) {
    Mat<S> dq = Mat<S>::Zero(q.rows(), q.cols());
    Mat<S> dk = Mat<S>::Zero(k.rows(), k.cols());
    Mat<S> dv = Mat<S>::Zero(v.rows(), v.cols());
    Mat<S> qg(len, hd), kg(len, hd), vg(len, hd), dog(len, hd), pd(len, len), dpd(len, len), dlog(len, len);
    for (int g = 0; g < groups; ++g) {
      for (int h = 0; h < heads; ++h) {
        for (int m = 0; m < len; ++m) {
          const int r = layout.row(g, m);
          qg.row(m) = q.value().block(r, h * hd, 1, hd);
          kg.row(m) = k.value().block(r, h * hd, 1, hd);
          vg.row(m) = v.value().block(r, h * hd, 1, hd);
          dog.row(m) = gout.block(r, h * hd, 1, hd);
        }
        const std::size_t off = (static_cast<std::size_t>(g) * heads + h) * len * len;
        Eigen::Map<const Mat<S>> p(probs->data.data() + off, len, len);
        if (drop) {
          Eigen::Map<const Mat<S>> mk(mask->data() + off, len, len);
          pd = p.cwiseProduct(mk);
        } else {
          pd = p;
        }
        dpd.noalias() = dog * vg.transpose();
        const Mat<S> dvg = pd.transpose() * dog;
        Mat<S> dp = dpd;
        if (drop) {
          Eigen::Map<const Mat<S>> mk(mask->data() + off, len, len);
          dp = dpd.cwiseProduct(mk);
        }
        for (int i = 0; i < len; ++i) {
          const S dot = dp.row(i).dot(p.row(i));
          dlog.row(i) = p.row(i).cwiseProduct((dp.row(i).array() - dot).matrix());
        }
        dlog *= inv_scale;
        const Mat<S> dqg = dlog * kg;
        const Mat<S> dkg = dlog.transpose() * qg;
        for (int m = 0; m < len; ++m) {
          const int r = layout.row(g, m);
          dq.block(r, h * hd, 1, hd) += dqg.row(m);
          dk.block(r, h * hd, 1, hd) += dkg.row(m);
          dv.block(r, h * hd, 1, hd) += dvg.row(m);
        }
      }
    }
    tape.accumulate(q, dq);
    tape.accumulate(k, dk);
    tape.accumulate(v, dv);
  });
  return {result, probs};
}

}  // namespace ad
}  // namespace wednet
