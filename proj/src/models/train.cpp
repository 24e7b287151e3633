#include "models/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "ad/adam.hpp"
#include "common/error.hpp"
#include "common/log.hpp"
#include "seq/io.hpp"

namespace evseq::models {

using ad::Tensor;
using ad::Var;
using nlohmann::json;

stats::MetricKind default_metric(const seq::FeatureSchema& schema) {
  switch (schema.target_kind) {
    case seq::TargetKind::kRegression: return stats::MetricKind::kR2;
    case seq::TargetKind::kMultilabel: return stats::MetricKind::kMeanRocAuc;
    case seq::TargetKind::kClassification:
      return schema.num_targets == 2 ? stats::MetricKind::kRocAuc : stats::MetricKind::kAccuracy;
  }
  return stats::MetricKind::kR2;
}

namespace {

struct Targets {
  std::vector<int> classes;
  Tensor values;  // regression (n x 1, standardized) or multilabel (n x k)
};

Targets gather_targets(const TrainedModel& tm, const seq::Dataset& ds, const std::vector<std::size_t>& idx) {
  Targets t;
  const auto& schema = tm.model.schema();
  switch (schema.target_kind) {
    case seq::TargetKind::kClassification:
      for (auto i : idx) t.classes.push_back(std::get<int>(ds.target(i, "train")));
      break;
    case seq::TargetKind::kRegression:
      t.values = Tensor::matrix(idx.size(), 1);
      for (std::size_t r = 0; r < idx.size(); ++r)
        t.values[r] = (std::get<double>(ds.target(idx[r], "train")) - tm.target_mean) / tm.target_std;
      break;
    case seq::TargetKind::kMultilabel: {
      const auto k = static_cast<std::size_t>(schema.num_targets);
      t.values = Tensor::matrix(idx.size(), k);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto& labels = std::get<std::vector<int>>(ds.target(idx[r], "train"));
        for (std::size_t j = 0; j < k; ++j) t.values(r, j) = labels[j] ? 1.0 : 0.0;
      }
      break;
    }
  }
  return t;
}

Var task_loss(const seq::FeatureSchema& schema, Var out, const Targets& t) {
  switch (schema.target_kind) {
    case seq::TargetKind::kClassification: return ad::softmax_cross_entropy(out, t.classes);
    case seq::TargetKind::kRegression: return ad::mse(out, t.values);
    case seq::TargetKind::kMultilabel: return ad::bce_with_logits(out, t.values);
  }
  throw Error("unknown target kind");
}

std::string fmt(double v) {
  std::ostringstream o;
  o << v;
  return o.str();
}

void copy_encoder(SequenceModel& dst, const SequenceModel& src, bool freeze) {
  for (auto& p : dst.params()) {
    if (p.name.rfind("head.", 0) == 0) continue;
    const ad::Parameter* found = nullptr;
    for (const auto& q : src.params())
      if (q.name == p.name) found = &q;
    if (!found) throw Error("init: encoder parameter '" + p.name + "' missing from the initial model");
    if (!found->value.same_shape(p.value))
      throw ShapeError("init: parameter '" + p.name + "' has shape " + found->value.shape_str() + ", expected " +
                       p.value.shape_str());
    p.value = found->value;
    if (freeze) p.trainable = false;
  }
}

}  // namespace

TrainedModel train_supervised(const seq::Dataset& ds, const seq::IndexSet& train, const seq::IndexSet& train_val,
                              const EncoderConfig& enc, const TrainConfig& tc, const TrainOptions& opts) {
  enc.validate("/encoder");
  tc.validate("/train");
  if (train.empty()) throw Error("train_supervised: empty train split");
  if (train_val.empty() && !opts.validation) throw Error("train_supervised: empty train-val split");

  TrainedModel tm;
  tm.model = SequenceModel(ds.schema, enc, tc.seed);
  tm.train = tc;
  tm.metric = default_metric(ds.schema);
  tm.time_scale = ds.time_scale;
  if (ds.schema.target_kind == seq::TargetKind::kRegression) {
    double s = 0.0, s2 = 0.0;
    for (auto i : train) s += std::get<double>(ds.target(i, "train"));
    tm.target_mean = s / static_cast<double>(train.size());
    for (auto i : train) {
      const double d = std::get<double>(ds.target(i, "train")) - tm.target_mean;
      s2 += d * d;
    }
    const double sd = std::sqrt(s2 / static_cast<double>(train.size()));
    tm.target_std = sd > 0.0 ? sd : 1.0;
  }
  if (opts.init) copy_encoder(tm.model, opts.init->model, opts.freeze_encoder);

  Rng rng = make_rng(tc.seed, {sid(Stream::kTrain)});
  ad::AdamState state;
  const ad::AdamConfig adam{tc.lr};
  auto& params = tm.model.params();
  double best = -std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_values;
  std::size_t iters = 0, bad_epochs = 0;

  for (std::size_t epoch = 1; epoch <= tc.max_epochs && iters < tc.max_iters; ++epoch) {
    const auto batches = bucket_batches(ds, train, tc.batch_size, rng);
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (std::size_t bi = 0; bi < batches.size() && iters < tc.max_iters; ++bi) {
      const Batch batch = make_batch(ds, batches[bi]);
      const Targets targets = gather_targets(tm, ds, batches[bi]);
      ad::Tape tape;
      Var loss = task_loss(ds.schema, tm.model.forward(tape, batch, true, rng), targets);
      const double value = loss.value()[0];
      if (!std::isfinite(value))
        throw TrainingError("non-finite loss " + fmt(value) + " at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(bi) + " (lr=" + fmt(tc.lr) + ")");
      params.zero_grad();
      tape.backward(loss);
      if (tc.grad_clip > 0.0) ad::clip_grad_norm(params, tc.grad_clip);
      try {
        ad::adam_step(params, state, adam);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(bi) + " (lr=" + fmt(tc.lr) + ")");
      }
      loss_sum += value * static_cast<double>(batch.size());
      loss_n += batch.size();
      ++iters;
    }
    const double val = opts.validation ? opts.validation(tm, epoch) : evaluate(tm, ds, train_val, "train-val");
    tm.history.push_back({epoch, loss_sum / static_cast<double>(std::max<std::size_t>(loss_n, 1)), val, iters});
    log::debug("epoch " + std::to_string(epoch) + " loss " + fmt(tm.history.back().train_loss) + " train-val " +
               fmt(val));
    if (val > best) {
      best = val;
      tm.best_epoch = epoch;
      bad_epochs = 0;
      best_values.clear();
      for (const auto& p : params) best_values.push_back(p.value);
    } else if (++bad_epochs >= tc.patience) {
      break;
    }
  }
  if (best_values.empty()) {
    tm.best_epoch = tm.history.size();
  } else {
    for (std::size_t k = 0; k < params.size(); ++k) params[k].value = best_values[k];
  }
  for (auto& p : params) p.grad = Tensor();
  return tm;
}

Tensor predict(const TrainedModel& m, const seq::Dataset& ds, const seq::IndexSet& indices) {
  if (!(ds.schema == m.model.schema())) throw SchemaError("predict: dataset schema differs from the model's");
  if (m.time_scale && ds.time_scale && !(*m.time_scale == *ds.time_scale))
    throw SchemaError("predict: dataset time scale differs from the model's fitted reference");
  const auto& schema = m.model.schema();
  const std::size_t k = head_width(schema);
  Tensor out = Tensor::matrix(indices.size(), k);
  // Forward passes only read parameters; a copy keeps `m` const.
  SequenceModel model = m.model;
  Rng unused(0);
  constexpr std::size_t kChunk = 256;
  for (std::size_t lo = 0; lo < indices.size(); lo += kChunk) {
    const std::size_t hi = std::min(indices.size(), lo + kChunk);
    const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(lo),
                                         indices.begin() + static_cast<std::ptrdiff_t>(hi));
    ad::Tape tape(false);
    const Tensor& logits = model.forward(tape, make_batch(ds, chunk), false, unused).value();
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      double* o = out.data() + (lo + r) * k;
      const double* z = logits.data() + r * k;
      switch (schema.target_kind) {
        case seq::TargetKind::kRegression: o[0] = z[0] * m.target_std + m.target_mean; break;
        case seq::TargetKind::kMultilabel:
          for (std::size_t j = 0; j < k; ++j) o[j] = 1.0 / (1.0 + std::exp(-z[j]));
          break;
        case seq::TargetKind::kClassification: {
          const double mx = *std::max_element(z, z + k);
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) s += (o[j] = std::exp(z[j] - mx));
          for (std::size_t j = 0; j < k; ++j) o[j] /= s;
          break;
        }
      }
    }
  }
  return out;
}

double score_predictions(stats::MetricKind metric, const seq::FeatureSchema& schema, const Tensor& scores,
                         const seq::Dataset& ds, const seq::IndexSet& indices, const char* context) {
  const std::size_t n = indices.size(), k = scores.cols();
  switch (schema.target_kind) {
    case seq::TargetKind::kRegression: {
      if (metric != stats::MetricKind::kR2) throw Error("regression targets support only r2");
      std::vector<double> y(n), p(n);
      for (std::size_t i = 0; i < n; ++i) {
        y[i] = std::get<double>(ds.target(indices[i], context));
        p[i] = scores[i * k];
      }
      return stats::r2(p, y);
    }
    case seq::TargetKind::kClassification: {
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = std::get<int>(ds.target(indices[i], context));
      if (metric == stats::MetricKind::kRocAuc) {
        if (k != 2) throw Error("roc_auc needs a binary target");
        std::vector<double> s(n);
        for (std::size_t i = 0; i < n; ++i) s[i] = scores[i * k + 1];
        return stats::roc_auc(s, y);
      }
      if (metric != stats::MetricKind::kAccuracy) throw Error("unsupported metric for classification");
      std::vector<int> pred(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double* row = scores.data() + i * k;
        pred[i] = static_cast<int>(std::max_element(row, row + k) - row);
      }
      return stats::accuracy(pred, y);
    }
    case seq::TargetKind::kMultilabel: {
      if (metric != stats::MetricKind::kMeanRocAuc) throw Error("multilabel targets support only mean_roc_auc");
      std::vector<int> y(n * k);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& labels = std::get<std::vector<int>>(ds.target(indices[i], context));
        for (std::size_t j = 0; j < k; ++j) y[i * k + j] = labels[j] ? 1 : 0;
      }
      return stats::mean_roc_auc(scores.span(), y, k).value;
    }
  }
  throw Error("unknown target kind");
}

double evaluate(const TrainedModel& m, const seq::Dataset& ds, const seq::IndexSet& indices, const char* context) {
  if (indices.empty()) throw Error("evaluate: empty index set");
  return score_predictions(m.metric, m.model.schema(), predict(m, ds, indices), ds, indices, context);
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("checkpoint: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("checkpoint: truncated parameter data");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void save_checkpoint(const TrainedModel& m, const std::string& path) {
  json h;
  h["encoder"] = m.model.config().to_json();
  h["train"] = m.train.to_json();
  h["schema"] = json::parse(seq::schema_to_json(m.model.schema()));
  h["metric"] = stats::metric_name(m.metric);
  h["target_mean"] = m.target_mean;
  h["target_std"] = m.target_std;
  h["time_scale"] = m.time_scale ? json::array({m.time_scale->t_min, m.time_scale->t_max}) : json(nullptr);
  h["best_epoch"] = m.best_epoch;
  h["history"] = json::array();
  for (const auto& e : m.history)
    h["history"].push_back({{"epoch", e.epoch},
                            {"train_loss", e.train_loss},
                            {"train_val_metric", e.train_val_metric},
                            {"iterations", e.iterations}});
  h["params"] = json::array();
  for (const auto& p : m.model.params())
    h["params"].push_back({{"name", p.name}, {"shape", p.value.shape()}, {"trainable", p.trainable}});
  const std::string header = h.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write("EVSM", 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& p : m.model.params())
    for (double v : p.value.vec()) put_f64(out, v);
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "EVSM", 4) != 0) throw IoError("'" + path + "' is not a checkpoint");
  const auto version = get_u32(in);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto len = get_u32(in);
  std::string header(len, '\0');
  if (!in.read(header.data(), len)) throw IoError("checkpoint: truncated header");
  TrainedModel m;
  try {
    const json h = json::parse(header);
    const auto schema = seq::parse_schema(h.at("schema").dump());
    const auto enc = EncoderConfig::from_json(h.at("encoder"), "/encoder");
    m.train = TrainConfig::from_json(h.at("train"), "/train");
    m.model = SequenceModel(schema, enc, m.train.seed);
    m.metric = stats::parse_metric(h.at("metric").get<std::string>());
    m.target_mean = h.at("target_mean").get<double>();
    m.target_std = h.at("target_std").get<double>();
    if (!h.at("time_scale").is_null()) m.time_scale = seq::TimeScale{h["time_scale"][0], h["time_scale"][1]};
    m.best_epoch = h.at("best_epoch").get<std::size_t>();
    for (const auto& e : h.at("history"))
      m.history.push_back({e.at("epoch"), e.at("train_loss"), e.at("train_val_metric"), e.at("iterations")});
    const auto& manifest = h.at("params");
    if (manifest.size() != m.model.params().size()) throw IoError("checkpoint: parameter count mismatch");
    for (std::size_t k = 0; k < manifest.size(); ++k) {
      auto& p = m.model.params()[k];
      if (manifest[k].at("name") != p.name || manifest[k].at("shape").get<std::vector<std::size_t>>() != p.value.shape())
        throw IoError("checkpoint: parameter " + std::to_string(k) + " does not match '" + p.name + "'");
      p.trainable = manifest[k].at("trainable");
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: malformed header: ") + e.what());
  }
  for (auto& p : m.model.params())
    for (auto& v : p.value.vec()) v = get_f64(in);
  return m;
}

}  // namespace evseq::models
