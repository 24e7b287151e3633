#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>

#include "seq/dataset.hpp"

namespace evseq::seq {

struct IngestStats {
  std::size_t records = 0;
  // Sequences whose times arrived unsorted and were stably reordered.
  std::size_t resorted = 0;
};

FeatureSchema load_schema(const std::string& path);
FeatureSchema parse_schema(const std::string& json_text);
std::string schema_to_json(const FeatureSchema& schema);
void save_schema(const FeatureSchema& schema, const std::string& path);

// Reads the canonical one-record-per-line format. Masks are derived from
// nulls; unsorted times are stably sorted together with their payload.
Dataset ingest_jsonl(const std::string& path, const FeatureSchema& schema, IngestStats* stats = nullptr);
Dataset ingest_jsonl(std::istream& in, const FeatureSchema& schema, IngestStats* stats = nullptr);

// Writes numeric values with 17 significant digits; masked values as null.
void emit_jsonl(const Dataset& ds, std::ostream& out);
void emit_jsonl(const Dataset& ds, const std::string& path);

std::string format_double(double v);

}  // namespace evseq::seq
