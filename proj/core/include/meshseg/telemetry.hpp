#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "meshseg/volume.hpp"

namespace meshseg {

/// Wall-clock phases recorded for every run, in pipeline order.
inline constexpr std::array<std::string_view, 5> kPhases{"preprocessing", "cropping", "inference", "merging",
                                                        "postprocessing"};

enum class RunStatus { OK, Fail };

/// One pipeline run. Holds no file names or user identifiers.
struct TelemetryRecord {
  std::string timestamp;
  std::string model_name;
  Extents input_shape{};
  bool cropped = false;
  bool tiled = false;
  std::optional<int> cube;
  std::optional<int> halo;
  std::map<std::string, double> phase_seconds;
  std::uint64_t peak_bytes = 0;
  RunStatus status = RunStatus::OK;
  std::string error_kind;

  TelemetryRecord();
};

std::string utc_timestamp();

nlohmann::json to_json(const TelemetryRecord& record);
TelemetryRecord record_from_json(const nlohmann::json& j);

/// Appends one line per record under an exclusive file lock, each line in a
/// single write. An empty span leaves the file untouched. Throws IoError.
void append_telemetry(std::span<const TelemetryRecord> records, const std::filesystem::path& path);
void append_telemetry(const TelemetryRecord& record, const std::filesystem::path& path);

/// One JSON object per non-empty line. Throws SchemaError on a malformed line.
std::vector<nlohmann::json> read_telemetry(const std::filesystem::path& path);
std::vector<nlohmann::json> parse_telemetry(std::string_view text);

/// Keep records whose `field` renders as `value` ("true", "OK", a model name...).
std::vector<nlohmann::json> filter_records(std::span<const nlohmann::json> records, std::string_view field,
                                           std::string_view value);

struct RateRow {
  std::string group;
  std::int64_t fail = 0;
  std::int64_t ok = 0;
  double rate = 0.0;  // ok / (ok + fail)
};

/// One row per distinct value of `field` (sorted) followed by an "overall"
/// row. "model" is accepted for "model_name". Throws UnknownField.
std::vector<RateRow> success_rates(std::span<const nlohmann::json> records, std::string_view field);

/// Status-by-treatment counts: rows are treatment levels, columns {Fail, OK}.
struct ContingencyTable {
  std::vector<std::string> rows;
  std::vector<std::string> cols{"Fail", "OK"};
  std::vector<std::vector<std::int64_t>> counts;
};

ContingencyTable contingency_from_rates(std::span<const RateRow> rows);

struct ChiSquareResult {
  double statistic = 0.0;
  int df = 0;
  double p = 1.0;
};

/// Pearson test of independence, E from the marginals, df = (r-1)(c-1).
/// `yates` applies the continuity correction (2x2 only). Throws ZeroMarginal.
ChiSquareResult chi_square(const ContingencyTable& table, bool yates = false);

}  // namespace meshseg
