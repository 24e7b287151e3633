#pragma once

#include <cstddef>
#include <vector>

#include "ad/tape.hpp"
#include "common/rng.hpp"

namespace evseq::ad {

// All ops take 2-D operands. Shape mismatches throw ShapeError naming the op.

Var matmul(Var a, Var b);
Var transpose(Var a);

// Elementwise with broadcasting of b as a full tensor, a 1 x cols row, or a
// rows x 1 column.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// k * a + c
Var affine(Var a, double k, double c = 0.0);

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var sin(Var a);

Var softmax_rows(Var a);

// Mean over rows of -log softmax(logits)[label].
Var softmax_cross_entropy(Var logits, const std::vector<int>& labels);
// Mean over all entries of the logistic loss against {0,1} targets.
Var bce_with_logits(Var logits, const Tensor& targets);
Var mse(Var pred, const Tensor& target);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, const std::vector<std::size_t>& rows);

// axis 0 -> 1 x cols, axis 1 -> rows x 1.
Var sum(Var a, int axis);
Var mean(Var a, int axis);
Var sum_all(Var a);

// Row i goes to output row segment[i]; each output row is the mean of its rows.
Var segment_mean(Var a, const std::vector<std::size_t>& segment, std::size_t n_segments);

// Rows of `table` selected by code; codes must be < table.rows().
Var embedding(Var table, const std::vector<int>& codes);

struct BatchNormConfig {
  double momentum = 0.1;
  double eps = 1e-10;
};

// Per-column normalisation. Training mode uses batch statistics and updates
// the running buffers; eval mode uses the frozen running statistics.
Var batchnorm(Var x, Var gamma, Var beta, Parameter& running_mean, Parameter& running_var, bool training,
              const BatchNormConfig& cfg = {});

// Inverted dropout; identity when !training or p == 0.
Var dropout(Var x, double p, bool training, Rng& rng);

// Scaled dot-product attention from shared queries to the events of each
// segment. Rows of keys/values are grouped by offsets (size B + 1); output row
// b * R + r attends from query r to the events of segment b. Optional
// `weights_out` receives the B * R x max_len attention matrix rows.
Var segment_attention(Var queries, Var keys, Var values, const std::vector<std::size_t>& offsets,
                      std::vector<std::vector<double>>* weights_out = nullptr);

// Rows (2i, 2i+1) are positive pairs; every other cross-pair is a negative.
// loss = mean over positive pairs of d^2 + mean over negative pairs of
// max(0, margin - d)^2, with d the Euclidean distance.
Var contrastive_margin_loss(Var embeddings, double margin);

Var l2_normalize_rows(Var a, double eps = 1e-12);

// Gated recurrent layer over a time-major padded batch: row t * B + b of `x`
// is step t of sequence b. Gate columns are ordered [reset | update | new]:
//   r = sigmoid(x W_ih_r + b_ih_r + h W_hh_r + b_hh_r)
//   z = sigmoid(x W_ih_z + b_ih_z + h W_hh_z + b_hh_z)
//   n = tanh(x W_ih_n + b_ih_n + r * (h W_hh_n + b_hh_n))
//   h' = (1 - z) * n + z * h
// Steps t >= lengths[b] carry the last valid state forward. Returns all
// states with the same row layout as `x`; h_0 = 0.
Var gru_sequence(Var x, Var w_ih, Var w_hh, Var b_ih, Var b_hh, const std::vector<std::size_t>& lengths);

}  // namespace evseq::ad
