#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "timebin/config.hpp"
#include "timebin/experiments.hpp"
#include "timebin/version.hpp"

namespace timebin {

namespace detail {

inline std::string format_g12(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace detail

/// UTC timestamp, honoring SOURCE_DATE_EPOCH for reproducible runs.
inline std::string iso8601_timestamp() {
  std::time_t t = 0;
  if (const char* e = std::getenv("SOURCE_DATE_EPOCH"))
    t = static_cast<std::time_t>(std::strtoll(e, nullptr, 10));
  else
    t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Provenance record emitted next to every data file.
struct RunManifest {
  std::string command;
  std::uint64_t master_seed = 0;
  ConfigSnapshot config;
  std::vector<std::string> outputs;
  std::vector<std::string> warnings;
};

inline nlohmann::ordered_json manifest_to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["schema"] = "timebin/manifest/1";
  j["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  j["generated_at"] = iso8601_timestamp();
  j["command"] = m.command;
  j["master_seed"] = m.master_seed;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.config.keys) cfg[k] = v;
  j["config"] = cfg;
  j["outputs"] = m.outputs;
  j["warnings"] = m.warnings;
  return j;
}

// --- distance sweep ---------------------------------------------------------

inline std::string sweep_to_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream os;
  os << "length_km,p_analytic,p_mc,ci_low,ci_high,dark_floor\n";
  for (const SweepPoint& p : points) {
    os << detail::format_g12(p.length_km) << ',' << detail::format_g12(p.p_analytic) << ','
       << detail::format_g12(p.p_mc) << ',' << detail::format_g12(p.ci_low) << ','
       << detail::format_g12(p.ci_high) << ',' << detail::format_g12(p.dark_floor) << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json sweep_to_json(const std::vector<SweepPoint>& points) {
  nlohmann::ordered_json j;
  j["schema"] = "timebin/sweep/1";
  j["points"] = nlohmann::ordered_json::array();
  for (const SweepPoint& p : points) {
    j["points"].push_back({{"length_km", p.length_km},
                           {"p_analytic", p.p_analytic},
                           {"p_mc", p.p_mc},
                           {"ci_low", p.ci_low},
                           {"ci_high", p.ci_high},
                           {"dark_floor", p.dark_floor},
                           {"fires", p.fires},
                           {"gates", p.gates}});
  }
  return j;
}

// --- fringe scan -------------------------------------------------------------

inline std::string fringe_to_csv(const FringeResult& res) {
  std::ostringstream os;
  os << "temperature_C,phase_rad,counts_A,counts_B,gates\n";
  for (const FringePoint& p : res.points) {
    os << detail::format_g12(p.temperature_C) << ',' << detail::format_g12(p.phase_rad) << ','
       << p.counts_A << ',' << p.counts_B << ',' << p.gates << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json fringe_fit_to_json(const FringeResult& res) {
  auto fit = [](const ApdFringeFit& f) {
    return nlohmann::ordered_json{{"amplitude", f.amplitude},
                                  {"amplitude_se", f.amplitude_se},
                                  {"offset", f.offset},
                                  {"offset_se", f.offset_se},
                                  {"phase_rad", f.phase},
                                  {"phase_se", f.phase_se},
                                  {"visibility", f.visibility},
                                  {"visibility_se", f.visibility_se},
                                  {"clamped", f.clamped}};
  };
  nlohmann::ordered_json j;
  j["schema"] = "timebin/fringe-fit/1";
  j["status"] = res.fit_ok ? "ok" : "failed";
  j["message"] = res.fit_message;
  if (res.fit_ok) {
    j["fitted_period_C"] = res.fitted_period_C;
    j["apd_A"] = fit(res.fit_A);
    j["apd_B"] = fit(res.fit_B);
  }
  return j;
}

inline nlohmann::ordered_json fringe_points_to_json(const FringeResult& res) {
  nlohmann::ordered_json j;
  j["schema"] = "timebin/fringe/1";
  j["points"] = nlohmann::ordered_json::array();
  for (const FringePoint& p : res.points)
    j["points"].push_back({{"temperature_C", p.temperature_C},
                           {"phase_rad", p.phase_rad},
                           {"counts_A", p.counts_A},
                           {"counts_B", p.counts_B},
                           {"gates", p.gates}});
  return j;
}

// --- BB84 session -------------------------------------------------------------

inline nlohmann::ordered_json bb84_to_json(const Bb84Result& res) {
  nlohmann::ordered_json j;
  j["schema"] = "timebin/bb84/1";
  j["gates"] = res.n_gates;
  j["raw_click_rate_per_gate"] = res.report.raw_rate_per_gate;
  j["resolved_events"] = res.tally.resolved;
  j["sifted_count"] = res.report.sifted_count;
  j["error_count"] = res.report.error_count;
  j["sift_fraction"] = res.report.sift_fraction;
  j["qber_defined"] = res.report.qber.has_value();
  if (res.report.qber) {
    j["qber"] = *res.report.qber;
    j["qber_ci_low"] = res.report.qber_ci_low;
    j["qber_ci_high"] = res.report.qber_ci_high;
  } else {
    j["qber"] = nullptr;
  }
  j["qber_predicted_from_visibility"] = res.qber_predicted;
  j["analytic_visibility_A"] = res.analytic_v_A;
  j["analytic_visibility_B"] = res.analytic_v_B;
  j["outcome_counts"] = {{"none", res.outcome_counts[0]},
                         {"apd_A", res.outcome_counts[1]},
                         {"apd_B", res.outcome_counts[2]},
                         {"both", res.outcome_counts[3]}};
  std::string key;
  key.reserve(res.key_sample.size());
  for (std::uint8_t b : res.key_sample) key.push_back(b ? '1' : '0');
  j["key_sample_bits"] = key;
  return j;
}

}  // namespace timebin
