#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "wednet/autodiff.hpp"
#include "wednet/errors.hpp"
#include "wednet/params.hpp"

namespace wednet {

/// Adam with decoupled weight decay: p <- p - lr * wd * p, then the Adam step.
template <typename S>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-4;
  };

  AdamW(ParameterStore<S>& store, Options opt) : store_(store), opt_(opt) {
    if (!(opt.weight_decay >= 0.0)) throw ValidationError("AdamW: weight_decay must be >= 0");
    for (const auto& p : store.all()) {
      m_.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  long steps() const { return t_; }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const S b1 = static_cast<S>(opt_.beta1), b2 = static_cast<S>(opt_.beta2);
    const S step_size = static_cast<S>(lr / c1);
    const S inv_c2 = static_cast<S>(1.0 / c2);
    const S eps = static_cast<S>(opt_.eps);
    const S decay = static_cast<S>(1.0 - lr * opt_.weight_decay);
    std::size_t i = 0;
    for (auto& p : store_.all()) {
      auto& m = m_[i];
      auto& v = v_[i];
      ++i;
      m = b1 * m + (S(1) - b1) * p.grad;
      v = b2 * v + (S(1) - b2) * p.grad.cwiseAbs2();
      p.value *= decay;
      p.value.array() -= step_size * m.array() / ((v.array() * inv_c2).sqrt() + eps);
    }
  }

 private:
  ParameterStore<S>& store_;
  Options opt_;
  std::vector<Mat<S>> m_, v_;
  long t_ = 0;
};

/// One-cycle schedule with cosine phases: initial -> peak over the first
/// `warmup` fraction of steps, then peak -> final.
class OneCycle {
 public:
  OneCycle(double peak, long total_steps, double warmup = 0.3, double initial_div = 25.0, double final_div = 25.0)
      : peak_(peak), initial_(peak / initial_div), final_(peak / final_div), total_(total_steps) {
    if (!(peak > 0) || total_steps <= 0 || !(warmup > 0 && warmup < 1) || !(initial_div > 0) || !(final_div > 0)) {
      throw ValidationError("OneCycle: invalid schedule parameters");
    }
    up_ = std::max(1L, std::lround(warmup * static_cast<double>(total_steps)));
    if (up_ >= total_steps) up_ = std::max(1L, total_steps - 1);
  }

  long peak_step() const { return up_; }

  double operator()(long step) const {
    if (step <= up_) return anneal(initial_, peak_, static_cast<double>(step) / static_cast<double>(up_));
    const long down = std::max(1L, total_ - 1 - up_);
    return anneal(peak_, final_, std::min(1.0, static_cast<double>(step - up_) / static_cast<double>(down)));
  }

 private:
  static double anneal(double from, double to, double pct) { return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * pct)); }

  double peak_, initial_, final_;
  long total_;
  long up_ = 1;
};

}  // namespace wednet
