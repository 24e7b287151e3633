#include "models/batch.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"

namespace evseq::models {

std::size_t Batch::max_length() const {
  std::size_t m = 0;
  for (auto l : lengths) m = std::max(m, l);
  return m;
}

Batch make_batch(const seq::Dataset& ds, const std::vector<SequenceSlice>& slices) {
  Batch b;
  const std::size_t nf = ds.schema.numeric.size(), nc = ds.schema.categorical.size();
  std::size_t total = 0;
  b.offsets.push_back(0);
  for (const auto& s : slices) {
    if (s.index >= ds.size()) throw ShapeError("batch: sequence index " + std::to_string(s.index) + " out of range");
    const auto& sq = ds.sequences[s.index];
    if (s.end > sq.length() || s.begin >= s.end)
      throw ShapeError("batch: sequence '" + sq.id + "' has no valid events in slice [" + std::to_string(s.begin) +
                       ", " + std::to_string(s.end) + ")");
    b.indices.push_back(s.index);
    b.lengths.push_back(s.end - s.begin);
    total += s.end - s.begin;
    b.offsets.push_back(total);
  }
  b.numeric = ad::Tensor::matrix(total, nf);
  b.mask = ad::Tensor::matrix(total, nf);
  b.categorical.assign(nc, std::vector<int>(total, 0));
  b.times.resize(total);
  b.time_abs.resize(total);
  b.time_delta.resize(total);
  std::size_t row = 0;
  for (const auto& s : slices) {
    const auto& sq = ds.sequences[s.index];
    const bool travel = sq.traveling_time.has_value();
    for (std::size_t i = s.begin; i < s.end; ++i, ++row) {
      for (std::size_t f = 0; f < nf; ++f) {
        const double v = sq.numeric[f][i];
        b.numeric(row, f) = std::isfinite(v) ? v : 0.0;
        b.mask(row, f) = sq.mask[f][i];
      }
      for (std::size_t f = 0; f < nc; ++f) b.categorical[f][row] = sq.categorical[f][i];
      b.times[row] = sq.times[i];
      if (travel) {
        b.time_abs[row] = sq.traveling_time->absolute[i];
        b.time_delta[row] = sq.traveling_time->delta[i];
      } else {
        b.time_abs[row] = sq.times[i];
        b.time_delta[row] = i == 0 ? sq.times[0] : sq.times[i] - sq.times[i - 1];
      }
    }
  }
  return b;
}

Batch make_batch(const seq::Dataset& ds, const std::vector<std::size_t>& indices) {
  std::vector<SequenceSlice> slices;
  slices.reserve(indices.size());
  for (auto i : indices) {
    if (i >= ds.size()) throw ShapeError("batch: sequence index " + std::to_string(i) + " out of range");
    slices.push_back({i, 0, ds.sequences[i].length()});
  }
  return make_batch(ds, slices);
}

std::vector<std::vector<std::size_t>> bucket_batches(const seq::Dataset& ds, std::vector<std::size_t> order,
                                                     std::size_t batch_size, Rng& rng, std::size_t window) {
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t span = batch_size * std::max<std::size_t>(window, 1);
  for (std::size_t lo = 0; lo < order.size(); lo += span) {
    const auto hi = std::min(order.size(), lo + span);
    std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi),
                     [&](auto a, auto b) { return ds.sequences[a].length() < ds.sequences[b].length(); });
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t lo = 0; lo < order.size(); lo += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), lo + batch_size)));
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace evseq::models
