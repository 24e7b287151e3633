#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "common/error.hpp"
#include "models/coles.hpp"
#include "models/train.hpp"
#include "seq/preprocess.hpp"
#include "synth/pendulum.hpp"
#include "support/encoder_cases.hpp"

using namespace evseq;
namespace fs = std::filesystem;

namespace {

// Target = mean of observed values of feature "a"; learnable by every encoder.
seq::Dataset learnable(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  auto ds = testing::toy_dataset(n, rng, 8);
  for (auto& s : ds.sequences) {
    double sum = 0.0;
    for (double v : s.numeric[0]) sum += v;
    s.target = sum / static_cast<double>(s.length());
  }
  return ds;
}

seq::IndexSet range(std::size_t b, std::size_t e) {
  seq::IndexSet r;
  for (std::size_t i = b; i < e; ++i) r.push_back(i);
  return r;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("evseq_models_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("every encoder passes a finite-difference check on 100 random configurations") {
  for (const auto& c : testing::encoder_cases()) {
    Rng rng(derive_seed(23, {std::hash<std::string>{}(c.name)}));
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) worst = std::max(worst, c.run(rng));
    INFO(c.name << " worst relative error " << worst);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("make_batch packs offsets and time deltas") {
  Rng rng(1);
  auto ds = testing::toy_dataset(5, rng);
  const auto b = models::make_batch(ds, std::vector<std::size_t>{3, 0, 4});
  REQUIRE(b.size() == 3);
  CHECK(b.offsets.front() == 0);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& s = ds.sequences[b.indices[i]];
    CHECK(b.lengths[i] == s.length());
    CHECK(b.offsets[i + 1] - b.offsets[i] == s.length());
    for (std::size_t e = 0; e < s.length(); ++e) {
      const double expect = e == 0 ? s.times[0] : s.times[e] - s.times[e - 1];
      CHECK(b.time_delta[b.offsets[i] + e] == doctest::Approx(expect));
    }
  }
  CHECK(b.events() == b.offsets.back());
  CHECK_THROWS_AS(models::make_batch(ds, std::vector<models::SequenceSlice>{{0, 1, 1}}), ShapeError);
}

TEST_CASE("bucket_batches covers every index once and respects the batch size") {
  Rng rng(2);
  auto ds = testing::toy_dataset(103, rng, 20);
  auto order = range(0, 103);
  Rng brng(9);
  const auto batches = models::bucket_batches(ds, order, 8, brng);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    CHECK(!b.empty());
    CHECK(b.size() <= 8);
    seen.insert(b.begin(), b.end());
  }
  CHECK(seen.size() == 103);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 103);
}

TEST_CASE("training learns a simple target with each encoder") {
  auto ds = learnable(600, 4);
  const auto train = range(0, 400), val = range(400, 500), test = range(500, 600);
  for (auto kind : {models::EncoderKind::kMlp, models::EncoderKind::kGru, models::EncoderKind::kTimeAttention}) {
    models::EncoderConfig ec;
    ec.kind = kind;
    ec.hidden = 16;
    ec.aggregation = models::Aggregation::kMeanHidden;
    models::TrainConfig tc;
    tc.lr = 1e-2;
    tc.batch_size = 32;
    tc.max_epochs = 30;
    tc.seed = 5;
    const auto m = models::train_supervised(ds, train, val, ec, tc);
    INFO(models::to_string(kind));
    CHECK(models::evaluate(m, ds, test) > 0.5);
    CHECK(m.best_epoch >= 1);
    CHECK(m.best_epoch <= m.history.size());
  }
}

TEST_CASE("training is a pure function of its seed") {
  auto ds = learnable(120, 6);
  models::EncoderConfig ec;
  ec.hidden = 8;
  models::TrainConfig tc;
  tc.max_epochs = 3;
  tc.seed = 17;
  const auto a = models::train_supervised(ds, range(0, 80), range(80, 120), ec, tc);
  const auto b = models::train_supervised(ds, range(0, 80), range(80, 120), ec, tc);
  const auto pa = models::predict(a, ds, range(0, 120)), pb = models::predict(b, ds, range(0, 120));
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
  tc.seed = 18;
  const auto c = models::train_supervised(ds, range(0, 80), range(80, 120), ec, tc);
  const auto pc = models::predict(c, ds, range(0, 120));
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) differs |= pa[i] != pc[i];
  CHECK(differs);
}

TEST_CASE("checkpoints round-trip bit-identically and reject corruption") {
  auto ds = learnable(100, 7);
  models::EncoderConfig ec;
  ec.kind = models::EncoderKind::kTimeAttention;
  ec.hidden = 6;
  ec.input_batchnorm = true;
  models::TrainConfig tc;
  tc.max_epochs = 2;
  const auto m = models::train_supervised(ds, range(0, 70), range(70, 100), ec, tc);
  const auto dir = scratch("ckpt");
  const auto path = (dir / "m.evsm").string();
  models::save_checkpoint(m, path);
  const auto back = models::load_checkpoint(path);
  const auto p1 = models::predict(m, ds, range(0, 100)), p2 = models::predict(back, ds, range(0, 100));
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == p2[i]);
  CHECK(back.target_mean == m.target_mean);
  CHECK(back.target_std == m.target_std);

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& name, const std::string& content) {
    const auto p = (dir / name).string();
    std::ofstream(p, std::ios::binary) << content;
    return p;
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(models::load_checkpoint(write("magic.evsm", bad_magic)), Error);
  CHECK_THROWS_AS(models::load_checkpoint(write("short.evsm", bytes.substr(0, bytes.size() - 3))), Error);
  CHECK_THROWS_AS(models::load_checkpoint((dir / "missing.evsm").string()), IoError);
}

TEST_CASE("classification probabilities sum to one") {
  Rng rng(8);
  auto ds = testing::toy_dataset(60, rng);
  ds.schema.target_kind = seq::TargetKind::kClassification;
  ds.schema.num_targets = 3;
  for (std::size_t i = 0; i < ds.size(); ++i) ds.sequences[i].target = static_cast<int>(i % 3);
  models::EncoderConfig ec;
  ec.hidden = 4;
  models::TrainConfig tc;
  tc.max_epochs = 2;
  const auto m = models::train_supervised(ds, range(0, 40), range(40, 60), ec, tc);
  CHECK(m.metric == stats::MetricKind::kAccuracy);
  const auto p = models::predict(m, ds, range(0, 60));
  REQUIRE(p.cols() == 3);
  for (std::size_t r = 0; r < p.rows(); ++r) CHECK(p(r, 0) + p(r, 1) + p(r, 2) == doctest::Approx(1.0));
}

TEST_CASE("sampled subsequences stay within the fraction bounds") {
  Rng rng(3);
  models::ColesConfig cc;
  for (int k = 0; k < 2000; ++k) {
    const std::size_t n = testing::dim(rng, 2, 60);
    const auto [b, e] = models::sample_subsequence(n, cc, rng);
    const auto len = e - b;
    CHECK(e <= n);
    CHECK(len >= 1);
    const auto lo = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cc.min_fraction * n)));
    const auto hi = std::max<std::size_t>(lo, static_cast<std::size_t>(std::floor(cc.max_fraction * n)));
    CHECK(len >= lo);
    CHECK(len <= hi);
  }
  CHECK_THROWS(models::sample_subsequence(1, cc, rng));
}

TEST_CASE("contrastive pretraining pulls subsequences of one sequence together") {
  // Sequences differ by a per-sequence offset, so same-sequence slices share it.
  Rng rng(12);
  auto ds = testing::toy_dataset(200, rng, 20, 4);
  for (auto& s : ds.sequences) {
    const double offset = uniform(rng, -2, 2);
    for (auto& v : s.numeric[0]) v = offset + 0.05 * v;
  }
  models::EncoderConfig ec;
  ec.hidden = 8;
  models::TrainConfig tc;
  tc.max_epochs = 8;
  tc.lr = 5e-3;
  tc.batch_size = 32;
  const auto m = models::coles_pretrain(ds, range(0, 200), ec, tc);
  REQUIRE(m.history.size() == 8);
  CHECK(m.history.back().train_loss < m.history.front().train_loss);
  const auto d = models::embedding_pair_distances(m, ds, range(0, 200), 99);
  CHECK(d.positive < d.negative);
}

TEST_CASE("a separable two-class toy is fit to train accuracy of at least 0.99") {
  Rng rng(14);
  auto ds = testing::toy_dataset(200, rng, 8, 2);
  ds.schema.target_kind = seq::TargetKind::kClassification;
  ds.schema.num_targets = 2;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int label = static_cast<int>(i % 2);
    for (auto& v : ds.sequences[i].numeric[0]) v = (label ? 0.5 : -0.5) + 0.1 * v;
    ds.sequences[i].target = label;
  }
  models::EncoderConfig ec;
  ec.hidden = 8;
  models::TrainConfig tc;
  tc.lr = 1e-2;
  tc.batch_size = 32;
  tc.max_epochs = 30;
  const auto train = range(0, 200);
  auto accuracy = [&](const models::TrainedModel& m) {
    const auto p = models::predict(m, ds, train);
    double correct = 0.0;
    for (std::size_t r = 0; r < p.rows(); ++r)
      correct += (p(r, 1) > p(r, 0) ? 1 : 0) == std::get<int>(ds.sequences[r].target) ? 1.0 : 0.0;
    return correct / 200.0;
  };
  // The default binary metric (ROC AUC) saturates before the decision
  // threshold settles, so early stopping watches accuracy instead.
  models::TrainOptions opts;
  opts.validation = [&](const models::TrainedModel& m, std::size_t) { return accuracy(m); };
  const auto m = models::train_supervised(ds, train, train, ec, tc, opts);
  CHECK(accuracy(m) >= 0.99);
}

TEST_CASE("contrastive pretraining on pendulum sequences separates sequences and lowers the loss") {
  synth::SynthConfig sc;
  sc.n_sequences = 600;
  sc.seed = 21;
  const auto ds = seq::preprocess(synth::generate_pendulum_dataset(sc), range(0, 600));
  double first = 0.0, fifth = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    models::EncoderConfig ec;
    ec.hidden = 16;
    models::TrainConfig tc;
    tc.max_epochs = 5;
    tc.lr = 5e-3;
    tc.batch_size = 32;
    tc.seed = seed;
    const auto m = models::coles_pretrain(ds, range(0, 480), ec, tc);
    REQUIRE(m.history.size() == 5);
    first += m.history.front().train_loss;
    fifth += m.history.back().train_loss;
    const auto d = models::embedding_pair_distances(m, ds, range(480, 600), seed);
    INFO("seed " << seed << " positive " << d.positive << " negative " << d.negative);
    CHECK(d.positive < d.negative);
  }
  CHECK(fifth < first);
}
