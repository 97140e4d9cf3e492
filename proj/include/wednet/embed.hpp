#pragma once

// Input embedding: a linear feature projection concatenated with learned
// tables indexed by window position, parcel, hour of day and day of week.
// Column order: [feature | temporal | spatial | time-of-day | day-of-week].

#include <memory>
#include <string>
#include <vector>

#include "wednet/autodiff.hpp"
#include "wednet/errors.hpp"
#include "wednet/params.hpp"

namespace wednet {

inline constexpr int kHoursPerDay = 24;
inline constexpr int kDaysPerWeek = 7;

struct EmbeddingDims {
  int feature = 12;
  int temporal = 18;
  int spatial = 18;
  int time_of_day = 12;
  int day_of_week = 12;

  int total() const { return feature + temporal + spatial + time_of_day + day_of_week; }
};

/// Calendar indices per (batch item, history step), item-major.
struct Calendar {
  int batch = 0;
  int steps = 0;
  std::vector<int> time_of_day;
  std::vector<int> day_of_week;
};

template <typename S>
class Embedding {
 public:
  Embedding(ParameterStore<S>& store, const std::string& prefix, int in_features, int steps, int parcels, const EmbeddingDims& dims)
      : in_features_(in_features), steps_(steps), parcels_(parcels), dims_(dims) {
    weight_ = &store.create(prefix + ".feature_proj.weight", in_features, dims.feature, Init::fan_in_uniform, in_features);
    bias_ = &store.create(prefix + ".feature_proj.bias", 1, dims.feature, Init::fan_in_uniform, in_features);
    temporal_ = &store.create(prefix + ".temporal", steps, dims.temporal, Init::fan_in_uniform, steps);
    spatial_ = &store.create(prefix + ".spatial", parcels, dims.spatial, Init::fan_in_uniform, parcels);
    tod_ = &store.create(prefix + ".time_of_day", kHoursPerDay, dims.time_of_day, Init::fan_in_uniform, kHoursPerDay);
    dow_ = &store.create(prefix + ".day_of_week", kDaysPerWeek, dims.day_of_week, Init::fan_in_uniform, kDaysPerWeek);
  }

  int width() const { return dims_.total(); }

  /// `features` has (batch * steps * parcels) token rows of `in_features` columns.
  ad::Var<S> operator()(ad::Tape<S>& tape, const Mat<S>& features, const Calendar& cal) const {
    if (features.cols() != in_features_) {
      throw ValidationError("embed: expected " + std::to_string(in_features_) + " input features, got " + std::to_string(features.cols()));
    }
    if (cal.steps != steps_) throw ValidationError("embed: calendar has " + std::to_string(cal.steps) + " steps, expected " + std::to_string(steps_));
    const int batch = cal.batch;
    const auto rows = static_cast<Eigen::Index>(batch) * steps_ * parcels_;
    if (features.rows() != rows) throw ValidationError("embed: token count does not match batch x steps x parcels");
    if (cal.time_of_day.size() != static_cast<std::size_t>(batch * steps_) || cal.day_of_week.size() != cal.time_of_day.size()) {
      throw ValidationError("embed: calendar index length mismatch");
    }
    auto t_idx = std::make_shared<std::vector<int>>();
    auto n_idx = std::make_shared<std::vector<int>>();
    auto tod_idx = std::make_shared<std::vector<int>>();
    auto dow_idx = std::make_shared<std::vector<int>>();
    for (int b = 0; b < batch; ++b) {
      for (int t = 0; t < steps_; ++t) {
        const int tod = cal.time_of_day[static_cast<std::size_t>(b * steps_ + t)];
        const int dow = cal.day_of_week[static_cast<std::size_t>(b * steps_ + t)];
        if (tod < 0 || tod >= kHoursPerDay) throw ValidationError("embed: time_of_day " + std::to_string(tod) + " outside 0..23");
        if (dow < 0 || dow >= kDaysPerWeek) throw ValidationError("embed: day_of_week " + std::to_string(dow) + " outside 0..6");
        for (int n = 0; n < parcels_; ++n) {
          t_idx->push_back(t);
          n_idx->push_back(n);
          tod_idx->push_back(tod);
          dow_idx->push_back(dow);
        }
      }
    }
    const auto x = tape.constant(features);
    return ad::concat_cols<S>({ad::linear(x, tape.parameter(*weight_), tape.parameter(*bias_)),
                               ad::gather_rows<S>(tape.parameter(*temporal_), t_idx),
                               ad::gather_rows<S>(tape.parameter(*spatial_), n_idx),
                               ad::gather_rows<S>(tape.parameter(*tod_), tod_idx),
                               ad::gather_rows<S>(tape.parameter(*dow_), dow_idx)});
  }

 private:
  int in_features_, steps_, parcels_;
  EmbeddingDims dims_;
  Parameter<S>* weight_;
  Parameter<S>* bias_;
  Parameter<S>* temporal_;
  Parameter<S>* spatial_;
  Parameter<S>* tod_;
  Parameter<S>* dow_;
};

}  // namespace wednet
