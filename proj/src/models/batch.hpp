#pragma once

#include <cstddef>
#include <vector>

#include "ad/tensor.hpp"
#include "common/rng.hpp"
#include "seq/dataset.hpp"

namespace evseq::models {

// Contiguous event range [begin, end) of one dataset sequence.
struct SequenceSlice {
  std::size_t index = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Packed events of a batch: sequence b owns rows [offsets[b], offsets[b + 1]).
struct Batch {
  std::vector<std::size_t> indices;
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> offsets;
  ad::Tensor numeric;  // events x numeric features, missing read as 0
  ad::Tensor mask;     // events x numeric features
  std::vector<std::vector<int>> categorical;  // per feature, one code per event
  std::vector<double> times;       // positional time axis
  std::vector<double> time_abs;    // time feature (travelling copy when present)
  std::vector<double> time_delta;  // t_i - t_{i-1}, first event: t_0

  std::size_t size() const { return lengths.size(); }
  std::size_t events() const { return offsets.empty() ? 0 : offsets.back(); }
  std::size_t max_length() const;
};

// Throws ShapeError naming the sequence when a slice is empty.
Batch make_batch(const seq::Dataset& ds, const std::vector<SequenceSlice>& slices);
Batch make_batch(const seq::Dataset& ds, const std::vector<std::size_t>& indices);

// Splits `order` into batches of at most batch_size. Sequences are sorted by
// length inside windows of `window` batches to limit padding, then the batch
// order is shuffled.
std::vector<std::vector<std::size_t>> bucket_batches(const seq::Dataset& ds, std::vector<std::size_t> order,
                                                     std::size_t batch_size, Rng& rng, std::size_t window = 32);

}  // namespace evseq::models
