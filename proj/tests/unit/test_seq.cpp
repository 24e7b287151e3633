#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "common/error.hpp"
#include "seq/io.hpp"
#include "seq/preprocess.hpp"
#include "seq/split.hpp"
#include "support/op_cases.hpp"

using namespace evseq;

namespace {

seq::FeatureSchema schema() {
  return seq::parse_schema(R"({"numeric": [{"name": "x", "imputation": "forward_fill"},
                                          {"name": "amount", "log_transform": true}],
                              "categorical": [{"name": "kind", "cardinality": 3}],
                              "target": {"kind": "classification", "classes": 3}})");
}

seq::Dataset parse(const std::string& text, const seq::FeatureSchema& s, seq::IngestStats* st = nullptr) {
  std::istringstream in(text);
  return seq::ingest_jsonl(in, s, st);
}

seq::Dataset classes(std::size_t n, int k, std::uint64_t seed) {
  Rng rng(seed);
  seq::Dataset ds;
  ds.schema.target_kind = seq::TargetKind::kClassification;
  ds.schema.num_targets = k;
  for (std::size_t i = 0; i < n; ++i) {
    seq::EventSequence s;
    s.times = {0.0, 1.0};
    // Skewed class sizes exercise the largest-remainder rounding.
    s.target = static_cast<int>(std::min<std::size_t>(testing::dim(rng, 0, 2 * k), k - 1));
    ds.sequences.push_back(s);
  }
  return ds;
}

seq::Dataset regression(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  seq::Dataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    seq::EventSequence s;
    s.times = {0.0};
    s.target = uniform(rng, -5, 5);
    ds.sequences.push_back(s);
  }
  return ds;
}

}  // namespace

TEST_CASE("ingest derives masks from nulls and stably sorts unsorted times") {
  seq::IngestStats st;
  auto ds = parse(R"({"id":"a","t":[2,1,3],"num":{"x":[20,null,30],"amount":[1,2,3]},"cat":{"kind":[1,2,0]},"target":2}
{"id":"b","t":[0.5],"target":0}
)",
                  schema(), &st);
  CHECK(st.records == 2);
  CHECK(st.resorted == 1);
  const auto& a = ds.sequences[0];
  CHECK(a.times == std::vector<double>{1, 2, 3});
  CHECK(a.mask[0] == std::vector<std::uint8_t>{0, 1, 1});
  CHECK(a.numeric[0][1] == 20);
  CHECK(a.categorical[0] == std::vector<int>{2, 1, 0});
  CHECK(std::get<int>(a.target) == 2);
  // Absent features are fully missing.
  const auto& b = ds.sequences[1];
  CHECK(b.mask[0] == std::vector<std::uint8_t>{0});
  CHECK(std::isnan(b.numeric[0][0]));
}

TEST_CASE("malformed records name their line") {
  const auto s = schema();
  CHECK_THROWS_WITH_AS(parse("{\"id\":\"a\",\"t\":[1],\"target\":0}\nnot json\n", s), doctest::Contains("line 2"),
                       ParseError);
  CHECK_THROWS_AS(parse(R"({"id":"a","t":[1],"target":1.5})", s), ParseError);
  CHECK_THROWS_AS(parse(R"({"id":"a","t":[1,2],"num":{"x":[1]},"target":0})", s), ParseError);
  CHECK_THROWS_AS(parse(R"({"id":"a","t":[1],"cat":{"kind":[3]},"target":0})", s), SchemaError);
  CHECK_THROWS_AS(parse(R"({"id":"a","t":[1],"num":{"nope":[1]},"target":0})", s), SchemaError);
  CHECK_THROWS_AS(parse(R"({"id":"a","t":[],"target":0})", s), SchemaError);
  CHECK_THROWS_AS(parse(R"({"id":"a","t":[1],"target":3})", s), SchemaError);
}

TEST_CASE("schema validation rejects collisions and degenerate cardinalities") {
  CHECK_THROWS_AS(seq::parse_schema(R"({"numeric":[{"name":"a"},{"name":"a"}],"target":{"kind":"regression"}})"),
                  SchemaError);
  CHECK_THROWS_AS(seq::parse_schema(R"({"categorical":[{"name":"c","cardinality":1}],"target":{"kind":"regression"}})"),
                  SchemaError);
  CHECK_THROWS_AS(seq::parse_schema(R"({"target":{"kind":"ordinal"}})"), SchemaError);
  const auto s = schema();
  CHECK(seq::parse_schema(seq::schema_to_json(s)) == s);
}

TEST_CASE("emit then ingest reproduces the dataset exactly") {
  auto ds = parse(R"({"id":"a","t":[0.1,0.30000000000000004],"num":{"x":[1e-300,null],"amount":[-2.5,3]},"cat":{"kind":[1,2]},"target":1}
{"id":"b\"q","t":[7],"num":{"x":[null]},"target":0}
)",
                  schema());
  std::ostringstream out;
  seq::emit_jsonl(ds, out);
  auto back = parse(out.str(), schema());
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& x = ds.sequences[i];
    const auto& y = back.sequences[i];
    CHECK(x.id == y.id);
    CHECK(x.times == y.times);
    CHECK(x.mask == y.mask);
    CHECK(x.categorical == y.categorical);
    for (std::size_t f = 0; f < x.numeric.size(); ++f)
      for (std::size_t e = 0; e < x.length(); ++e)
        if (x.mask[f][e]) CHECK(x.numeric[f][e] == y.numeric[f][e]);
  }
  std::ostringstream again;
  seq::emit_jsonl(back, again);
  CHECK(again.str() == out.str());
}

TEST_CASE("a custom time field name is read and written") {
  auto s = seq::parse_schema(R"({"time_field":"ts","target":{"kind":"regression"}})");
  auto ds = parse(R"({"id":"a","ts":[3,4],"target":1.0})", s);
  CHECK(ds.sequences[0].times == std::vector<double>{3, 4});
  std::ostringstream out;
  seq::emit_jsonl(ds, out);
  CHECK(out.str().find("\"ts\":[") != std::string::npos);
}

TEST_CASE("preprocessing rescales time, log-transforms and imputes") {
  auto ds = parse(R"({"id":"a","t":[10,20,30],"num":{"x":[null,5,null],"amount":[-9,null,99]},"target":0}
{"id":"b","t":[50],"target":1}
)",
                  schema());
  auto p = seq::preprocess(ds, {0});
  REQUIRE(p.time_scale);
  CHECK(p.time_scale->t_min == 10);
  CHECK(p.time_scale->t_max == 30);
  CHECK(p.sequences[0].times == std::vector<double>{0, 0.5, 1});
  // Sequences outside the fit split may leave [0, 1].
  CHECK(p.sequences[1].times[0] == 2.0);
  CHECK(p.sequences[0].numeric[0] == std::vector<double>{0, 5, 5});
  CHECK(p.sequences[0].numeric[1][0] == doctest::Approx(-std::log(10.0)));
  CHECK(p.sequences[0].numeric[1][1] == 0.0);
  CHECK(p.sequences[0].numeric[1][2] == doctest::Approx(std::log(100.0)));
  CHECK(p.sequences[0].mask == ds.sequences[0].mask);
  // Idempotent once flagged.
  auto q = seq::preprocess(p, {1});
  CHECK(q.sequences[0].times == p.sequences[0].times);
}

TEST_CASE("signed_log1p is odd and monotone") {
  Rng rng(4);
  for (int k = 0; k < 1000; ++k) {
    const double a = uniform(rng, -1e6, 1e6), b = uniform(rng, -1e6, 1e6);
    CHECK(seq::signed_log1p(-a) == -seq::signed_log1p(a));
    if (a < b) CHECK(seq::signed_log1p(a) < seq::signed_log1p(b));
  }
}

TEST_CASE("stratified splits are disjoint, complete, sized and deterministic") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const bool reg = seed % 2 == 0;
    const std::size_t n = testing::dim(rng, 40, 400);
    auto ds = reg ? regression(n, seed) : classes(n, static_cast<int>(testing::dim(rng, 2, 4)), seed);
    const double test = uniform(rng, 0.1, 0.3);
    const auto sp = seq::holdout_split(ds, test, 0.7, 0.15, 0.15, seed);
    std::vector<int> seen(n, 0);
    for (const auto* part : {&sp.train, &sp.train_val, &sp.hpo_val, &sp.test})
      for (auto i : *part) ++seen[i];
    CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    // Largest remainder per stratum: at most one extra per stratum.
    const double strata = reg ? 4.0 : 4.0;
    CHECK(std::abs(static_cast<double>(sp.test.size()) - test * n) <= strata);
    const double pool = static_cast<double>(n - sp.test.size());
    CHECK(std::abs(static_cast<double>(sp.train.size()) - 0.7 * pool) <= strata);
    const auto again = seq::holdout_split(ds, test, 0.7, 0.15, 0.15, seed);
    CHECK(again.train == sp.train);
    CHECK(again.test == sp.test);
  }
}

TEST_CASE("class proportions are preserved in every part") {
  auto ds = classes(3000, 3, 1);
  const auto sp = seq::holdout_split(ds, 0.2, 0.7, 0.15, 0.15, 3);
  std::map<int, double> overall;
  for (const auto& s : ds.sequences) overall[std::get<int>(s.target)] += 1.0 / 3000.0;
  for (const auto* part : {&sp.train, &sp.train_val, &sp.hpo_val, &sp.test}) {
    std::map<int, double> frac;
    for (auto i : *part) frac[std::get<int>(ds.sequences[i].target)] += 1.0 / static_cast<double>(part->size());
    for (const auto& [c, f] : overall) CHECK(std::abs(frac[c] - f) < 0.01);
  }
}

TEST_CASE("a stratum too small for the parts is reported") {
  auto ds = classes(30, 2, 5);
  ds.sequences[0].target = 1;
  for (std::size_t i = 1; i < ds.size(); ++i) ds.sequences[i].target = 0;
  CHECK_THROWS_WITH_AS(seq::stratified_split(ds, 0.5, 0.25, 0.25, 1), doctest::Contains("stratum"), Error);
}

TEST_CASE("subsample_indices draws exactly n distinct pool members") {
  auto ds = regression(500, 2);
  auto pool = seq::all_indices(ds);
  pool.resize(400);
  for (std::size_t n : {1, 37, 100, 400}) {
    const auto s = seq::subsample_indices(ds, pool, n, 9);
    CHECK(s.size() == n);
    CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == n);
    for (auto i : s) CHECK(i < 400);
  }
  CHECK_THROWS(seq::subsample_indices(ds, pool, 401, 9));
}

TEST_CASE("the target audit records protected reads only while scoring is closed") {
  auto ds = regression(10, 1);
  ds.audit = std::make_shared<seq::TargetAudit>(10, std::vector<std::size_t>{3, 4});
  ds.target(0, "train");
  CHECK(ds.audit->violations().empty());
  ds.target(3, "peek");
  REQUIRE(ds.audit->violations().size() == 1);
  CHECK(ds.audit->violations()[0] == "3:peek");
  ds.audit->open_scoring();
  ds.target(4, "score");
  CHECK(ds.audit->violations().size() == 1);
}

TEST_CASE("forward fill carries the last observed value and keeps the mask") {
  auto ds = parse(R"({"id":"a","t":[0,1,2,3],"num":{"x":[1,null,2,null]},"target":0}
)",
                  schema());
  const auto p = seq::preprocess(ds, {0});
  CHECK(p.sequences[0].numeric[0] == std::vector<double>{1, 1, 2, 2});
  CHECK(p.sequences[0].mask[0] == std::vector<std::uint8_t>{1, 0, 1, 0});
}
