#include "models/coles.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ad/adam.hpp"
#include "common/error.hpp"

namespace evseq::models {

std::pair<std::size_t, std::size_t> sample_subsequence(std::size_t n, const ColesConfig& cfg, Rng& rng) {
  if (n < 2) throw Error("subsequence sampling needs at least 2 events, got " + std::to_string(n));
  auto lo = static_cast<std::size_t>(std::ceil(cfg.min_fraction * static_cast<double>(n)));
  auto hi = static_cast<std::size_t>(std::floor(cfg.max_fraction * static_cast<double>(n)));
  lo = std::clamp<std::size_t>(lo, 1, n);
  hi = std::clamp<std::size_t>(hi, lo, n);
  const std::size_t len = lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
  const std::size_t begin = static_cast<std::size_t>(rng() % (n - len + 1));
  return {begin, begin + len};
}

namespace {

std::vector<SequenceSlice> pair_slices(const seq::Dataset& ds, const std::vector<std::size_t>& idx,
                                       const ColesConfig& cc, Rng& rng) {
  std::vector<SequenceSlice> slices;
  slices.reserve(2 * idx.size());
  for (auto i : idx) {
    const std::size_t n = ds.sequences[i].length();
    if (n < 2) throw Error("contrastive pretraining: sequence '" + ds.sequences[i].id + "' has fewer than 2 events");
    for (int k = 0; k < 2; ++k) {
      auto [b, e] = sample_subsequence(n, cc, rng);
      slices.push_back({i, b, e});
    }
  }
  return slices;
}

}  // namespace

TrainedModel coles_pretrain(const seq::Dataset& ds, const seq::IndexSet& train, const EncoderConfig& enc,
                            const TrainConfig& tc, const ColesConfig& cc) {
  if (enc.kind != EncoderKind::kGru) throw ValidationError("/encoder/kind", "contrastive pretraining needs a gru encoder");
  enc.validate("/encoder");
  tc.validate("/train");
  if (train.size() < 2 || tc.batch_size < 2) throw Error("contrastive pretraining: a batch needs at least 2 sequences");
  TrainedModel tm;
  tm.model = SequenceModel(ds.schema, enc, tc.seed);
  tm.train = tc;
  tm.metric = default_metric(ds.schema);
  tm.time_scale = ds.time_scale;
  Rng rng = make_rng(tc.seed, {sid(Stream::kColes)});
  ad::AdamState state;
  auto& params = tm.model.params();
  std::size_t iters = 0;
  for (std::size_t epoch = 1; epoch <= tc.max_epochs && iters < tc.max_iters; ++epoch) {
    auto batches = bucket_batches(ds, train, tc.batch_size, rng);
    double loss_sum = 0.0;
    std::size_t n = 0;
    for (std::size_t bi = 0; bi < batches.size() && iters < tc.max_iters; ++bi) {
      // A trailing singleton batch has no negatives.
      if (batches[bi].size() < 2) continue;
      const Batch batch = make_batch(ds, pair_slices(ds, batches[bi], cc, rng));
      ad::Tape tape;
      ad::Var loss = ad::contrastive_margin_loss(ad::l2_normalize_rows(tm.model.encode(tape, batch, true)), cc.margin);
      const double v = loss.value()[0];
      if (!std::isfinite(v)) {
        std::ostringstream msg;
        msg << "non-finite contrastive loss at epoch " << epoch << ", batch " << bi << " (lr=" << tc.lr << ")";
        throw TrainingError(msg.str());
      }
      params.zero_grad();
      tape.backward(loss);
      if (tc.grad_clip > 0.0) ad::clip_grad_norm(params, tc.grad_clip);
      ad::adam_step(params, state, ad::AdamConfig{tc.lr});
      loss_sum += v;
      ++n;
      ++iters;
    }
    const double mean_loss = n ? loss_sum / static_cast<double>(n) : 0.0;
    tm.history.push_back({epoch, mean_loss, -mean_loss, iters});
  }
  tm.best_epoch = tm.history.size();
  for (auto& p : params) p.grad = ad::Tensor();
  return tm;
}

PairDistances embedding_pair_distances(const TrainedModel& m, const seq::Dataset& ds, const seq::IndexSet& indices,
                                       std::uint64_t seed, const ColesConfig& cc) {
  if (indices.size() < 2) throw Error("pair distances need at least 2 sequences");
  Rng rng = make_rng(seed, {sid(Stream::kColes), 1});
  SequenceModel model = m.model;
  const Batch batch = make_batch(ds, pair_slices(ds, indices, cc, rng));
  ad::Tape tape(false);
  const ad::Tensor& e = ad::l2_normalize_rows(model.encode(tape, batch, false)).value();
  const std::size_t rows = e.rows(), d = e.cols();
  auto dist = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (e(a, j) - e(b, j)) * (e(a, j) - e(b, j));
    return std::sqrt(s);
  };
  PairDistances out;
  double pos = 0.0, neg = 0.0;
  std::size_t np = 0, nn = 0;
  for (std::size_t a = 0; a < rows; ++a)
    for (std::size_t b = a + 1; b < rows; ++b) {
      if (a / 2 == b / 2) {
        pos += dist(a, b);
        ++np;
      } else {
        neg += dist(a, b);
        ++nn;
      }
    }
  out.positive = pos / static_cast<double>(np);
  out.negative = neg / static_cast<double>(nn);
  return out;
}

}  // namespace evseq::models
