#include "meshseg/telemetry.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <boost/math/special_functions/gamma.hpp>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

#include "meshseg/error.hpp"

namespace meshseg {

using nlohmann::json;

TelemetryRecord::TelemetryRecord() {
  for (auto phase : kPhases) phase_seconds[std::string(phase)] = 0.0;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json to_json(const TelemetryRecord& r) {
  json j;
  j["timestamp"] = r.timestamp;
  j["model_name"] = r.model_name;
  j["input_shape"] = {r.input_shape.x, r.input_shape.y, r.input_shape.z};
  j["cropped"] = r.cropped;
  j["tiled"] = r.tiled;
  j["cube"] = r.cube ? json(*r.cube) : json(nullptr);
  j["halo"] = r.halo ? json(*r.halo) : json(nullptr);
  json phases = json::object();
  for (auto phase : kPhases) {
    const auto it = r.phase_seconds.find(std::string(phase));
    phases[std::string(phase)] = it == r.phase_seconds.end() ? 0.0 : it->second;
  }
  j["phase_seconds"] = phases;
  j["peak_bytes"] = r.peak_bytes;
  j["status"] = r.status == RunStatus::OK ? "OK" : "Fail";
  j["error_kind"] = r.error_kind;
  return j;
}

TelemetryRecord record_from_json(const json& j) {
  TelemetryRecord r;
  try {
    r.timestamp = j.value("timestamp", std::string{});
    r.model_name = j.at("model_name").get<std::string>();
    const auto& shape = j.at("input_shape");
    r.input_shape = {shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>()};
    r.cropped = j.at("cropped").get<bool>();
    r.tiled = j.at("tiled").get<bool>();
    if (j.contains("cube") && !j.at("cube").is_null()) r.cube = j.at("cube").get<int>();
    if (j.contains("halo") && !j.at("halo").is_null()) r.halo = j.at("halo").get<int>();
    for (auto phase : kPhases) r.phase_seconds[std::string(phase)] = j.at("phase_seconds").at(std::string(phase)).get<double>();
    r.peak_bytes = j.value("peak_bytes", std::uint64_t{0});
    const std::string status = j.at("status").get<std::string>();
    if (status != "OK" && status != "Fail") fail(ErrorKind::SchemaError, "status must be OK or Fail");
    r.status = status == "OK" ? RunStatus::OK : RunStatus::Fail;
    r.error_kind = j.value("error_kind", std::string{});
  } catch (const json::exception& e) {
    fail(ErrorKind::SchemaError, std::string("telemetry record: ") + e.what());
  }
  if (r.status == RunStatus::Fail && r.error_kind.empty()) {
    fail(ErrorKind::SchemaError, "failed record without error_kind");
  }
  return r;
}

namespace {

class FileLock {
 public:
  explicit FileLock(int fd) : fd_(fd) { ok_ = ::flock(fd_, LOCK_EX) == 0; }
  ~FileLock() {
    if (ok_) ::flock(fd_, LOCK_UN);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;
  bool ok() const noexcept { return ok_; }

 private:
  int fd_;
  bool ok_ = false;
};

void write_all(int fd, const std::string& line) {
  std::size_t done = 0;
  while (done < line.size()) {
    const ssize_t n = ::write(fd, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(ErrorKind::IoError, std::string("telemetry write failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

}  // namespace

void append_telemetry(std::span<const TelemetryRecord> records, const std::filesystem::path& path) {
  if (records.empty()) return;
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) fail(ErrorKind::IoError, "cannot open telemetry file: " + std::string(std::strerror(errno)));
  try {
    FileLock lock(fd);
    if (!lock.ok()) fail(ErrorKind::IoError, "cannot lock telemetry file");
    for (const auto& r : records) write_all(fd, to_json(r).dump() + "\n");
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

void append_telemetry(const TelemetryRecord& record, const std::filesystem::path& path) {
  append_telemetry(std::span<const TelemetryRecord>(&record, 1), path);
}

std::vector<json> parse_telemetry(std::string_view text) {
  std::vector<json> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      fail(ErrorKind::SchemaError, "telemetry line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!out.back().is_object()) fail(ErrorKind::SchemaError, "telemetry line " + std::to_string(line_no) + " is not an object");
  }
  return out;
}

std::vector<json> read_telemetry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_telemetry(ss.str());
}

namespace {

std::string canonical_field(std::string_view field) {
  if (field == "model") return "model_name";
  return std::string(field);
}

std::string render(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace

std::vector<json> filter_records(std::span<const json> records, std::string_view field, std::string_view value) {
  const std::string key = canonical_field(field);
  std::vector<json> out;
  for (const auto& r : records) {
    if (!r.contains(key)) fail(ErrorKind::UnknownField, "records have no field '" + key + "'");
    if (render(r.at(key)) == value) out.push_back(r);
  }
  return out;
}

std::vector<RateRow> success_rates(std::span<const json> records, std::string_view field) {
  const std::string key = canonical_field(field);
  std::map<std::string, RateRow> groups;
  RateRow overall{"overall", 0, 0, 0.0};
  for (const auto& r : records) {
    if (!r.contains(key)) fail(ErrorKind::UnknownField, "records have no field '" + key + "'");
    if (!r.contains("status")) fail(ErrorKind::SchemaError, "record without status");
    const std::string group = render(r.at(key));
    const bool ok = r.at("status") == "OK";
    RateRow& row = groups.try_emplace(group, RateRow{group, 0, 0, 0.0}).first->second;
    (ok ? row.ok : row.fail) += 1;
    (ok ? overall.ok : overall.fail) += 1;
  }
  std::vector<RateRow> out;
  auto finish = [](RateRow row) {
    const auto total = row.ok + row.fail;
    row.rate = total == 0 ? 0.0 : static_cast<double>(row.ok) / static_cast<double>(total);
    return row;
  };
  for (auto& [_, row] : groups) out.push_back(finish(row));
  out.push_back(finish(overall));
  return out;
}

ContingencyTable contingency_from_rates(std::span<const RateRow> rows) {
  ContingencyTable t;
  for (const auto& r : rows) {
    if (r.group == "overall") continue;
    t.rows.push_back(r.group);
    t.counts.push_back({r.fail, r.ok});
  }
  return t;
}

ChiSquareResult chi_square(const ContingencyTable& table, bool yates) {
  const std::size_t r = table.counts.size();
  if (r < 2) fail(ErrorKind::InvalidArgument, "contingency table needs at least two rows");
  const std::size_t c = table.counts.front().size();
  if (c < 2) fail(ErrorKind::InvalidArgument, "contingency table needs at least two columns");
  std::vector<double> row_sum(r, 0.0);
  std::vector<double> col_sum(c, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (table.counts[i].size() != c) fail(ErrorKind::InvalidArgument, "ragged contingency table");
    for (std::size_t j = 0; j < c; ++j) {
      const auto v = table.counts[i][j];
      if (v < 0) fail(ErrorKind::InvalidArgument, "negative count");
      row_sum[i] += static_cast<double>(v);
      col_sum[j] += static_cast<double>(v);
      total += static_cast<double>(v);
    }
  }
  for (double s : row_sum)
    if (s == 0.0) fail(ErrorKind::ZeroMarginal, "a row of the contingency table is empty");
  for (double s : col_sum)
    if (s == 0.0) fail(ErrorKind::ZeroMarginal, "a column of the contingency table is empty");

  ChiSquareResult out;
  out.df = static_cast<int>((r - 1) * (c - 1));
  const bool correct = yates && out.df == 1;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double expected = row_sum[i] * col_sum[j] / total;
      double diff = std::abs(static_cast<double>(table.counts[i][j]) - expected);
      if (correct) diff = std::max(0.0, diff - 0.5);
      out.statistic += diff * diff / expected;
    }
  }
  out.p = out.df == 1 ? std::erfc(std::sqrt(out.statistic / 2.0))
                      : boost::math::gamma_q(out.df / 2.0, out.statistic / 2.0);
  return out;
}

}  // namespace meshseg
