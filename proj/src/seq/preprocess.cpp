#include "seq/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "common/error.hpp"

namespace evseq::seq {

double signed_log1p(double x) { return std::copysign(std::log1p(std::abs(x)), x); }

Dataset preprocess_with(const Dataset& ds, const TimeScale& scale) {
  if (ds.preprocessed) return ds;
  const double range = scale.t_max - scale.t_min;
  if (!(range > 0.0)) throw Error("time scale has zero range");
  Dataset out = ds;
  for (auto& s : out.sequences) {
    for (auto& t : s.times) t = (t - scale.t_min) / range;
    for (std::size_t f = 0; f < s.numeric.size(); ++f) {
      const auto& spec = ds.schema.numeric[f];
      auto& vals = s.numeric[f];
      const auto& mask = s.mask[f];
      if (spec.log_transform)
        for (std::size_t i = 0; i < vals.size(); ++i)
          if (mask[i]) vals[i] = signed_log1p(vals[i]);
      if (spec.imputation == Imputation::kForwardFill) {
        double last = 0.0;
        bool seen = false;
        for (std::size_t i = 0; i < vals.size(); ++i) {
          if (mask[i]) {
            last = vals[i];
            seen = true;
          } else {
            vals[i] = seen ? last : 0.0;
          }
        }
      } else {
        for (std::size_t i = 0; i < vals.size(); ++i)
          if (!mask[i]) vals[i] = 0.0;
      }
    }
  }
  out.time_scale = scale;
  out.preprocessed = true;
  return out;
}

Dataset preprocess(const Dataset& ds, const IndexSet& fit_on) {
  if (ds.preprocessed) return ds;
  if (fit_on.empty()) throw Error("preprocessing fit split is empty");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (auto i : fit_on) {
    const auto& t = ds.sequences.at(i).times;
    if (t.empty()) continue;
    lo = std::min(lo, t.front());
    hi = std::max(hi, t.back());
  }
  if (!(hi > lo)) throw Error("fit split has zero time range");
  return preprocess_with(ds, TimeScale{lo, hi});
}

}  // namespace evseq::seq
