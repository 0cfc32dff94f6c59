#pragma once

#include "postapprox/density.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace postapprox {

/// Header plus numeric rows.
struct Table {
  std::vector<std::string> names;
  Matrix values;

  /// Index of the named column, or -1.
  int column(const std::string& name) const;
};

Table read_csv(const std::string& path);
void write_csv(const std::string& path, const Table& table);
std::string format_csv(const Table& table);

/// Sample file: position columns, optional `log_post` and `weight` columns.
SampleSet read_samples_csv(const std::string& path);
void write_samples_csv(const std::string& path, const SampleSet& samples);

/// Decimal string with 17 significant digits ("inf", "-inf", "nan" for non-finite values).
/// Writes `content` via a temporary file and rename.
void write_text_file(const std::string& path, const std::string& content);

std::string format_double(double v);
double parse_double(const std::string& s);

inline constexpr int kModelSchemaVersion = 1;

/// Envelope {schema_version, method, bounds, transform, payload}. A
/// TransformedDensity stores its transform and the inner model's payload.
nlohmann::json serialize_model(const DensityModel& model, const Bounds& bounds);

struct LoadedModel {
  DensityPtr model;
  Bounds bounds;
};

LoadedModel deserialize_model(const nlohmann::json& j);

void save_model(const std::string& path, const DensityModel& model, const Bounds& bounds);
LoadedModel load_model(const std::string& path);

}  // namespace postapprox
