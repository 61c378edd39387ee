#pragma once

// Output plumbing: full-precision CSV, result JSON, run manifests and an
// output transaction that removes everything it wrote unless committed.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "additive_solver.hpp"
#include "cert.hpp"

namespace mmrssa {

inline constexpr const char* kToolVersion = "1.0.0";

/// Shortest text that round-trips: 17 significant digits.
inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : cols_(header.size()) { row_strings(header); }

  template <typename... Ts>
  CsvWriter& row(const Ts&... cells) {
    static_assert(sizeof...(Ts) > 0);
    if (sizeof...(Ts) != cols_) throw std::invalid_argument("CsvWriter: column count mismatch");
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(cells), first = false), ...);
    out_ << '\n';
    return *this;
  }
  CsvWriter& row_values(const std::vector<double>& cells) {
    if (cells.size() != cols_) throw std::invalid_argument("CsvWriter: column count mismatch");
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << fmt_double(cells[i]);
    out_ << '\n';
    return *this;
  }
  /// Pre-joined row; the caller owns the column count.
  CsvWriter& raw(const std::string& line) {
    out_ << line << '\n';
    return *this;
  }
  std::string str() const { return out_.str(); }

 private:
  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }
  static std::string cell(double v) { return fmt_double(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }
  template <typename I>
    requires std::is_integral_v<I>
  static std::string cell(I v) { return std::to_string(v); }

  std::size_t cols_;
  std::ostringstream out_;
};

inline nlohmann::json to_json(const SafeControlResult& r) {
  nlohmann::json j;
  j["u"] = r.u;
  j["status"] = to_string(r.status);
  j["objective"] = r.objective;
  j["achieved_probability"] = r.achieved_probability;
  j["slack"] = r.slack;
  j["history"] = r.history;
  if (!r.cause.empty()) j["cause"] = r.cause;
  nlohmann::json modes = nlohmann::json::array();
  for (const auto& a : r.allocation)
    modes.push_back({{"k", a.k}, {"p", a.p}, {"offset", a.offset}, {"enforced", a.enforced}});
  j["allocation"] = modes;
  return j;
}

inline nlohmann::json to_json(const FeasibilityCertificate& c) {
  std::ostringstream st;
  st << "P(q > " << fmt_double(c.z_target) << ") = " << fmt_double(c.confidence);
  return {{"n_feasible", c.n_feasible}, {"n_infeasible", c.n_infeasible}, {"z_target", c.z_target},
          {"prior_alpha", c.prior_alpha}, {"prior_beta", c.prior_beta}, {"confidence", c.confidence},
          {"statement", st.str()}};
}

/// Collects output files in memory and writes them on commit. Anything
/// written by a transaction that is destroyed uncommitted is deleted.
class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {}
  OutputSet(const OutputSet&) = delete;
  OutputSet& operator=(const OutputSet&) = delete;
  ~OutputSet() {
    if (!committed_) rollback();
  }

  void add(const std::string& name, std::string content) { files_.emplace_back(name, std::move(content)); }
  const std::filesystem::path& dir() const { return dir_; }

  void commit() {
    std::error_code ec;
    if (!std::filesystem::exists(dir_)) {
      std::filesystem::create_directories(dir_, ec);
      if (ec) throw std::runtime_error("cannot create output directory '" + dir_.string() + "': " + ec.message());
      created_dir_ = true;
    }
    for (const auto& [name, content] : files_) {
      const auto path = dir_ / name;
      std::ofstream out(path, std::ios::binary);
      written_.push_back(path);
      if (!(out << content)) throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    committed_ = true;
  }

 private:
  void rollback() noexcept {
    std::error_code ec;
    for (const auto& p : written_) std::filesystem::remove(p, ec);
    if (created_dir_) std::filesystem::remove(dir_, ec);  // only if still empty
  }

  std::filesystem::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
  std::vector<std::filesystem::path> written_;
  bool created_dir_ = false;
  bool committed_ = false;
};

/// Manifest accompanying every run. The timestamp lives only here so that
/// payload files stay byte-identical across reruns.
inline nlohmann::json make_manifest(const std::string& command, const std::string& config_text, std::uint64_t seed,
                                    const std::vector<std::string>& outputs, const nlohmann::json& effective) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ts;
  ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return {{"command", command},
          {"config_hash_fnv1a64", hex64(fnv1a64(config_text))},
          {"seed", seed},
          {"effective_settings", effective},
          {"outputs", outputs},
          {"versions",
           {{"tool", kToolVersion}, {"cxx_standard", static_cast<long>(__cplusplus)},
            {"nlohmann_json",
             std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                 std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
          {"timestamp_utc", ts.str()}};
}

}  // namespace mmrssa
