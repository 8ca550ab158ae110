#pragma once

// JSON documents (plant/config input, schedule, monitor report, manifest),
// CSV exports and the gnuplot script over them.

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "ncs/designer.hpp"
#include "ncs/model.hpp"
#include "ncs/simulator.hpp"

namespace ncs {

using Json = nlohmann::ordered_json;

/// Malformed or inconsistent input document. The message names the line or
/// the offending field.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed 17-significant-digit rendering used by every CSV.
std::string format_double(double v);

Json plant_to_json(const TimeVaryingNetworkedPlant& plant);
TimeVaryingNetworkedPlant plant_from_json(const Json& j);

Json config_to_json(const DesignConfig& config);
/// `n` is the number of subsystems; scalar iota/omega broadcast to every link.
DesignConfig config_from_json(const Json& j, int n);

struct ProblemDocument {
  TimeVaryingNetworkedPlant plant;
  DesignConfig config;
};

/// {"plant": {...}, "config": {...}}. Throws IoError.
ProblemDocument parse_problem(const std::string& text);
ProblemDocument load_problem(const std::filesystem::path& path);

struct ScheduleDocument {
  TimeVaryingNetworkedPlant plant;
  DesignConfig config;
  SparsifyVariant variant = SparsifyVariant::kLinearSearch;
  double t_end = 0.0;
  bool complete = false;
  std::string diagnostic;
  double tmin_bound = 0.0;
  std::vector<GainScheduleEntry> entries;
};

std::string schedule_to_string(const ScheduleDocument& doc);
/// Validates the embedded plant and every entry against it. Throws IoError.
ScheduleDocument parse_schedule(const std::string& text);
ScheduleDocument load_schedule(const std::filesystem::path& path);

/// k, t, T, links, slack, solves, then per-subsystem ||K_i||, ||M_i||, per
/// plant link ||L_ij||, ||O_ij||, and per-subsystem ||P_i||, ||Phat_i||.
void write_summary_csv(std::ostream& os, const TimeVaryingNetworkedPlant& plant,
                       const std::vector<GainScheduleEntry>& entries);
void write_trace_csv(std::ostream& os, const SimulationTrace& trace);
void write_links_compare_csv(std::ostream& os, const std::vector<LinkComparisonRow>& rows);

Json lyapunov_to_json(const LyapunovReport& r);
Json theorem2_to_json(const Theorem2Report& r);

/// Gnuplot script drawing one PNG per figure quantity from summary.csv (and
/// links_compare.csv when `with_compare`). `summary_header` is the first line
/// of summary.csv.
std::string plot_script(const std::string& summary_header, bool with_compare);

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body);
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

}  // namespace ncs
