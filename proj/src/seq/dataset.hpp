#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace evseq::seq {

enum class Imputation { kForwardFill, kConstant };

struct NumericFeature {
  std::string name;
  Imputation imputation = Imputation::kConstant;
  bool log_transform = false;
};

struct CategoricalFeature {
  std::string name;
  // Includes the reserved missing category (code 0).
  int cardinality = 2;
};

enum class TargetKind { kClassification, kRegression, kMultilabel };

struct FeatureSchema {
  std::vector<NumericFeature> numeric;
  std::vector<CategoricalFeature> categorical;
  std::string time_field = "t";
  TargetKind target_kind = TargetKind::kRegression;
  // Number of classes (classification) or labels (multilabel); 1 for regression.
  int num_targets = 1;

  // Throws SchemaError when names collide, cardinalities are < 2 or k < 1.
  void validate() const;
  int numeric_index(const std::string& name) const;
  int categorical_index(const std::string& name) const;
  bool operator==(const FeatureSchema&) const;
};

// Class index, regression value, or multilabel {0,1} vector.
using Target = std::variant<int, double, std::vector<int>>;

// Time feature materialized before an order perturbation. It travels with its
// event when events are shuffled, while `times` keeps the positional axis.
struct TravelingTime {
  std::vector<double> absolute;
  std::vector<double> delta;
};

struct EventSequence {
  std::string id;
  std::vector<double> times;
  // numeric[f][i]: value of numeric feature f at event i (NaN while missing).
  std::vector<std::vector<double>> numeric;
  // mask[f][i] = 1 iff numeric[f][i] was observed at ingestion.
  std::vector<std::vector<std::uint8_t>> mask;
  // categorical[f][i]: category code, 0 = missing.
  std::vector<std::vector<int>> categorical;
  Target target = 0.0;
  std::optional<TravelingTime> traveling_time;

  std::size_t length() const { return times.size(); }
  bool operator==(const EventSequence&) const;
};

struct TimeScale {
  double t_min = 0.0;
  double t_max = 1.0;
  bool operator==(const TimeScale&) const = default;
};

// Records reads of protected (test) targets while scoring is closed. Shared by
// every copy of the dataset it is attached to.
class TargetAudit {
 public:
  TargetAudit(std::size_t n, const std::vector<std::size_t>& protected_indices);
  void record(std::size_t index, const std::string& context);
  void open_scoring();
  bool scoring_open() const;
  // "index:context" entries for reads made before scoring opened.
  std::vector<std::string> violations() const;

 private:
  mutable std::mutex mu_;
  std::vector<bool> protected_;
  bool open_ = false;
  std::vector<std::string> violations_;
};

struct Dataset {
  FeatureSchema schema;
  std::vector<EventSequence> sequences;
  std::optional<TimeScale> time_scale;
  bool preprocessed = false;
  std::shared_ptr<TargetAudit> audit;

  std::size_t size() const { return sequences.size(); }
  // Audited target access; training and scoring code reads targets only here.
  const Target& target(std::size_t i, const char* context = "read") const {
    if (audit) audit->record(i, context);
    return sequences[i].target;
  }
  // Throws SchemaError when a sequence does not conform to the schema.
  void validate() const;
};

// Stratification key of a target: class index, quartile bin for regression
// (given the pool's quartile cut points), or the label pattern for multilabel.
std::string stratum_key(const Target& t, const std::vector<double>& quartile_cuts);
std::vector<double> quartile_cuts(const Dataset& ds, const std::vector<std::size_t>& pool);

double target_value(const Target& t);

}  // namespace evseq::seq
