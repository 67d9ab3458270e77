#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "timebin/errors.hpp"
#include "timebin/experiments.hpp"
#include "timebin/polarization.hpp"

namespace timebin {

/// Scenario with the built-in defaults: the published link parameters
/// (mu = 0.2, 0.22 dB/km, eta = 0.1, dark 2.1e-7, 750 ps gate, 1 MHz, 5 ns
/// delay, 1.55 um, n = 1.5, 5 um/C, dn/n = 0.01, 2 dB receiver loss, DCF in
/// place, 150 km span). An empty config file reproduces this setup.
inline ScenarioConfig default_scenario() {
  ScenarioConfig cfg;
  cfg.link.bob.insertion_loss_dB = 2.0;
  return cfg;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& key, int line) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                          "' expects a number, got '" + s + "'",
                      line);
  }
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& key, int line) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                          "' expects an unsigned integer, got '" + s + "'",
                      line);
  }
}

inline bool parse_bool(const std::string& s, const std::string& key, int line) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                        "' expects a boolean, got '" + s + "'",
                    line);
}

inline std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Flat dotted-key snapshot of a scenario. The polarization unitary is
/// carried as the seed it is drawn from (0 = identity), so snapshots
/// round-trip exactly.
struct ConfigSnapshot {
  std::map<std::string, std::string> keys;
  std::uint64_t pol_seed = 0;
};

inline void amz_to_keys(const std::string& prefix, const AmzParams& p,
                        std::map<std::string, std::string>& keys) {
  using detail::format_double;
  keys[prefix + ".delay_slots"] = std::to_string(p.delay_slots);
  keys[prefix + ".phase_rad"] = format_double(p.phase_rad);
  keys[prefix + ".temperature_C"] = format_double(p.temperature_C);
  keys[prefix + ".temp_coeff_um_per_C"] = format_double(p.temp_coeff_um_per_C);
  keys[prefix + ".wavelength_um"] = format_double(p.wavelength_um);
  keys[prefix + ".refractive_index"] = format_double(p.refractive_index);
  keys[prefix + ".modal_birefringence"] = format_double(p.modal_birefringence);
  keys[prefix + ".path_length_diff_um"] = format_double(p.path_length_diff_um);
  keys[prefix + ".coupler_in_split"] = format_double(p.coupler_in_split);
  keys[prefix + ".coupler_out_split"] = format_double(p.coupler_out_split);
  keys[prefix + ".arm_loss_short_dB"] = format_double(p.arm_loss_short_dB);
  keys[prefix + ".arm_loss_long_dB"] = format_double(p.arm_loss_long_dB);
  keys[prefix + ".insertion_loss_dB"] = format_double(p.insertion_loss_dB);
  keys[prefix + ".pdl_dB"] = format_double(p.pdl_dB);
}

/// Resolved configuration -> dotted key/value map (all keys present).
inline ConfigSnapshot render_config(const ScenarioConfig& cfg, std::uint64_t pol_seed = 0) {
  using detail::format_double;
  ConfigSnapshot snap;
  auto& k = snap.keys;
  snap.pol_seed = pol_seed;

  k["source.wavelength_um"] = format_double(cfg.link.source.wavelength_um);
  k["source.pulse_fwhm_ps"] = format_double(cfg.link.source.pulse_fwhm_ps);
  k["source.spectral_width_nm"] = format_double(cfg.link.source.spectral_width_nm);
  k["source.mean_photons_mu"] = format_double(cfg.link.source.mean_photons_mu);
  k["source.input_pol"] = cfg.link.source.input_pol == Pol::H ? "H" : "V";
  k["source.slot_duration_ns"] = format_double(cfg.link.source.slot_duration_ns);

  amz_to_keys("alice", cfg.link.alice, k);
  amz_to_keys("bob", cfg.link.bob, k);

  k["fiber.length_km"] = format_double(cfg.link.fiber.length_km);
  k["fiber.atten_dB_per_km"] = format_double(cfg.link.fiber.atten_dB_per_km);
  k["fiber.dispersion_ps_nm_km"] = format_double(cfg.link.fiber.dispersion_ps_nm_km);
  k["fiber.dcf_enabled"] = cfg.link.fiber.dcf_enabled ? "true" : "false";
  k["fiber.pol_seed"] = std::to_string(pol_seed);
  k["fiber.pol_drift_time_s"] = format_double(cfg.link.fiber.pol_drift_time_s);

  k["apd.quantum_efficiency"] = format_double(cfg.link.apd.quantum_efficiency);
  k["apd.dark_prob_per_gate"] = format_double(cfg.link.apd.dark_prob_per_gate);
  k["apd.gate_width_ps"] = format_double(cfg.link.apd.gate_width_ps);
  k["apd.operating_temp_C"] = format_double(cfg.link.apd.operating_temp_C);
  k["apd.afterpulse_prob"] = format_double(cfg.link.apd.afterpulse_prob);
  k["apd.dark_prob_is_per_pair"] = cfg.link.apd.dark_prob_is_per_pair ? "true" : "false";

  k["clock.rep_rate_hz"] = format_double(cfg.link.clock.rep_rate_hz);
  k["clock.target_slot"] = std::to_string(cfg.link.clock.target_slot);

  k["policy.double_click"] =
      cfg.link.double_click_policy == BothClickPolicy::DiscardBoth ? "discard" : "random";
  k["bob.modulator_loss_dB"] = format_double(cfg.link.bob_modulator_loss_dB);

  k["drift.phase_jitter_sigma_rad"] = format_double(cfg.drift.phase_jitter_sigma_rad);
  k["drift.settle_drift_rad"] = format_double(cfg.drift.settle_drift_rad);
  k["drift.settle_tau_gates"] = format_double(cfg.drift.settle_tau_gates);

  k["run.gates"] = std::to_string(cfg.n_gates);
  k["run.seed"] = std::to_string(cfg.master_seed);
  k["run.threads"] = std::to_string(cfg.n_threads);
  return snap;
}

/// Render as a config file body (sorted keys, one `key = value` per line).
inline std::string render_config_text(const ScenarioConfig& cfg, std::uint64_t pol_seed = 0) {
  const ConfigSnapshot snap = render_config(cfg, pol_seed);
  std::ostringstream os;
  for (const auto& [key, value] : snap.keys) os << key << " = " << value << "\n";
  return os.str();
}

/// Parse config text (dotted keys, `#` comments) over the built-in defaults.
/// Unknown keys and malformed values raise ConfigError with the line number.
inline ScenarioConfig parse_config_text(const std::string& text,
                                        std::uint64_t* pol_seed_out = nullptr) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_u64;
  ScenarioConfig cfg = default_scenario();
  std::uint64_t pol_seed = 0;

  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string line = raw;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" +
                            detail::trim(raw) + "'",
                        line_no);
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": empty key or value", line_no);

    auto num = [&]() { return parse_double(value, key, line_no); };
    auto u64 = [&]() { return parse_u64(value, key, line_no); };
    auto boolean = [&]() { return parse_bool(value, key, line_no); };
    auto amz_key = [&](AmzParams& p, const std::string& sub) {
      if (sub == "delay_slots") p.delay_slots = static_cast<int>(u64());
      else if (sub == "phase_rad") p.phase_rad = num();
      else if (sub == "temperature_C") p.temperature_C = num();
      else if (sub == "temp_coeff_um_per_C") p.temp_coeff_um_per_C = num();
      else if (sub == "wavelength_um") p.wavelength_um = num();
      else if (sub == "refractive_index") p.refractive_index = num();
      else if (sub == "modal_birefringence") p.modal_birefringence = num();
      else if (sub == "path_length_diff_um") p.path_length_diff_um = num();
      else if (sub == "coupler_in_split") p.coupler_in_split = num();
      else if (sub == "coupler_out_split") p.coupler_out_split = num();
      else if (sub == "arm_loss_short_dB") p.arm_loss_short_dB = num();
      else if (sub == "arm_loss_long_dB") p.arm_loss_long_dB = num();
      else if (sub == "insertion_loss_dB") p.insertion_loss_dB = num();
      else if (sub == "pdl_dB") p.pdl_dB = num();
      else return false;
      return true;
    };

    if (key == "source.wavelength_um") cfg.link.source.wavelength_um = num();
    else if (key == "source.pulse_fwhm_ps") cfg.link.source.pulse_fwhm_ps = num();
    else if (key == "source.spectral_width_nm") cfg.link.source.spectral_width_nm = num();
    else if (key == "source.mean_photons_mu") cfg.link.source.mean_photons_mu = num();
    else if (key == "source.input_pol") {
      if (value == "H") cfg.link.source.input_pol = Pol::H;
      else if (value == "V") cfg.link.source.input_pol = Pol::V;
      else throw ConfigError("line " + std::to_string(line_no) +
                                 ": source.input_pol must be H or V",
                             line_no);
    } else if (key == "source.slot_duration_ns") cfg.link.source.slot_duration_ns = num();
    else if (key.rfind("alice.", 0) == 0 && amz_key(cfg.link.alice, key.substr(6))) {
    } else if (key == "bob.modulator_loss_dB") cfg.link.bob_modulator_loss_dB = num();
    else if (key.rfind("bob.", 0) == 0 && amz_key(cfg.link.bob, key.substr(4))) {
    } else if (key == "fiber.length_km") cfg.link.fiber.length_km = num();
    else if (key == "fiber.atten_dB_per_km") cfg.link.fiber.atten_dB_per_km = num();
    else if (key == "fiber.dispersion_ps_nm_km") cfg.link.fiber.dispersion_ps_nm_km = num();
    else if (key == "fiber.dcf_enabled") cfg.link.fiber.dcf_enabled = boolean();
    else if (key == "fiber.pol_seed") {
      pol_seed = u64();
      cfg.link.fiber.pol_unitary = polarization_unitary_from_seed(pol_seed);
    } else if (key == "fiber.pol_drift_time_s") cfg.link.fiber.pol_drift_time_s = num();
    else if (key == "apd.quantum_efficiency") cfg.link.apd.quantum_efficiency = num();
    else if (key == "apd.dark_prob_per_gate") cfg.link.apd.dark_prob_per_gate = num();
    else if (key == "apd.gate_width_ps") cfg.link.apd.gate_width_ps = num();
    else if (key == "apd.operating_temp_C") cfg.link.apd.operating_temp_C = num();
    else if (key == "apd.afterpulse_prob") cfg.link.apd.afterpulse_prob = num();
    else if (key == "apd.dark_prob_is_per_pair") cfg.link.apd.dark_prob_is_per_pair = boolean();
    else if (key == "clock.rep_rate_hz") cfg.link.clock.rep_rate_hz = num();
    else if (key == "clock.target_slot") cfg.link.clock.target_slot = u64();
    else if (key == "policy.double_click") {
      if (value == "discard") cfg.link.double_click_policy = BothClickPolicy::DiscardBoth;
      else if (value == "random") cfg.link.double_click_policy = BothClickPolicy::RandomBoth;
      else throw ConfigError("line " + std::to_string(line_no) +
                                 ": policy.double_click must be discard or random",
                             line_no);
    } else if (key == "drift.phase_jitter_sigma_rad")
      cfg.drift.phase_jitter_sigma_rad = num();
    else if (key == "drift.settle_drift_rad") cfg.drift.settle_drift_rad = num();
    else if (key == "drift.settle_tau_gates") cfg.drift.settle_tau_gates = num();
    else if (key == "run.gates") cfg.n_gates = u64();
    else if (key == "run.seed") cfg.master_seed = u64();
    else if (key == "run.threads") cfg.n_threads = static_cast<int>(u64());
    else
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'",
                        line_no);
  }
  if (pol_seed_out) *pol_seed_out = pol_seed;
  return cfg;
}

/// Load a config file; empty path yields the defaults.
inline ScenarioConfig load_config_file(const std::string& path,
                                       std::uint64_t* pol_seed_out = nullptr) {
  if (path.empty()) {
    if (pol_seed_out) *pol_seed_out = 0;
    return default_scenario();
  }
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream body;
  body << in.rdbuf();
  return parse_config_text(body.str(), pol_seed_out);
}

}  // namespace timebin
