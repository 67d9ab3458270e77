#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <utility>

#include "timebin/errors.hpp"
#include "timebin/optics.hpp"
#include "timebin/random.hpp"

namespace timebin {

/// Gated-mode InGaAs/InP APD pair (identical parameters for both detectors).
struct ApdParams {
  double quantum_efficiency = 0.10;
  double dark_prob_per_gate = 2.1e-7;
  double gate_width_ps = 750.0;
  double operating_temp_C = -108.0;  // informational
  double afterpulse_prob = 0.0;      // extra fire probability on the gate after a click
  bool dark_prob_is_per_pair = false;
};

struct ClockParams {
  double rep_rate_hz = 1e6;     // kept at 1 MHz to sidestep afterpulsing
  std::size_t target_slot = 1;  // gate timing selects the interfering middle slot
};

enum class ClickOutcome { None, ApdA, ApdB, Both };
enum class BothClickPolicy { DiscardBoth, RandomBoth };

inline void validate(const ApdParams& a) {
  if (!(a.quantum_efficiency >= 0.0 && a.quantum_efficiency <= 1.0))
    throw InvalidParameter("ApdParams: quantum_efficiency must be in [0,1]");
  if (!(a.dark_prob_per_gate >= 0.0 && a.dark_prob_per_gate < 1.0))
    throw InvalidParameter("ApdParams: dark_prob_per_gate must be in [0,1)");
  if (!(a.gate_width_ps > 0.0) || !std::isfinite(a.gate_width_ps))
    throw InvalidParameter("ApdParams: gate_width_ps must be > 0");
  if (!(a.afterpulse_prob >= 0.0 && a.afterpulse_prob < 1.0))
    throw InvalidParameter("ApdParams: afterpulse_prob must be in [0,1)");
}

inline void validate(const ClockParams& c) {
  if (!(c.rep_rate_hz > 0.0) || !std::isfinite(c.rep_rate_hz))
    throw InvalidParameter("ClockParams: rep_rate_hz must be > 0");
}

/// Dark probability per individual APD. When the configured figure is the
/// balanced-pair total, each APD gets 1 - sqrt(1 - p) so that the probability
/// of any dark fire across the pair equals the configured value.
inline double effective_dark_prob(const ApdParams& a) {
  if (!a.dark_prob_is_per_pair) return a.dark_prob_per_gate;
  return 1.0 - std::sqrt(1.0 - a.dark_prob_per_gate);
}

/// Fire probability of one gate with mean photon number mu at the APD:
///   P = 1 - (1 - p_dark) exp(-eta mu)
/// (Poisson weak-coherent statistics, independent dark events).
inline double click_probability(double mean_photons_at_apd, const ApdParams& apd) {
  validate(apd);
  if (!(mean_photons_at_apd >= 0.0) || !std::isfinite(mean_photons_at_apd))
    throw InvalidParameter("click_probability: mean photon number must be >= 0");
  const double pd = effective_dark_prob(apd);
  const double x = apd.quantum_efficiency * mean_photons_at_apd;
  // cubic expansion of expm1(-x) below 1e-4 is exact to double precision and
  // keeps the Monte Carlo hot loop off libm
  const double em1 = (x < 1e-4) ? -x * (1.0 - 0.5 * x + x * x / 6.0) : std::expm1(-x);
  return pd - (1.0 - pd) * em1;
}

inline ClickOutcome joint_outcome(bool a_fired, bool b_fired) {
  if (a_fired && b_fired) return ClickOutcome::Both;
  if (a_fired) return ClickOutcome::ApdA;
  if (b_fired) return ClickOutcome::ApdB;
  return ClickOutcome::None;
}

/// One balanced-pair gate: each APD fires independently with its
/// click_probability. Draw order is fixed (A then B) for reproducibility.
inline ClickOutcome gated_detect(double mu_A, double mu_B, const ApdParams& apd, GateRng& rng) {
  const double pa = click_probability(mu_A, apd);
  const double pb = click_probability(mu_B, apd);
  const bool a = rng.uniform() < pa;
  const bool b = rng.uniform() < pb;
  return joint_outcome(a, b);
}

/// As gated_detect, with the afterpulse hook: an APD that fired on the
/// previous gate adds `afterpulse_prob` to its fire probability.
inline ClickOutcome gated_detect_afterpulse(double mu_A, double mu_B, const ApdParams& apd,
                                            bool prev_a_fired, bool prev_b_fired, GateRng& rng) {
  const double ap = apd.afterpulse_prob;
  double pa = click_probability(mu_A, apd);
  double pb = click_probability(mu_B, apd);
  if (prev_a_fired) pa = 1.0 - (1.0 - pa) * (1.0 - ap);
  if (prev_b_fired) pb = 1.0 - (1.0 - pb) * (1.0 - ap);
  const bool a = rng.uniform() < pa;
  const bool b = rng.uniform() < pb;
  return joint_outcome(a, b);
}

/// Discriminator mapping behind the differential readout: APD A -> bit 0,
/// APD B -> bit 1. Simultaneous fires are discarded or assigned a fair random
/// bit depending on policy.
inline std::optional<int> balanced_discriminate(ClickOutcome outcome, BothClickPolicy policy,
                                                GateRng& rng) {
  switch (outcome) {
    case ClickOutcome::None:
      return std::nullopt;
    case ClickOutcome::ApdA:
      return 0;
    case ClickOutcome::ApdB:
      return 1;
    case ClickOutcome::Both:
      if (policy == BothClickPolicy::DiscardBoth) return std::nullopt;
      return rng.uniform() < 0.5 ? 0 : 1;
  }
  return std::nullopt;
}

/// Mean photon numbers presented to the two APDs for the gated slot,
/// including the gate-window capture fraction.
inline std::pair<double, double> apd_inputs_from_state(const TimeBinState& st,
                                                       const ClockParams& clock,
                                                       double capture_fraction) {
  validate(clock);
  if (clock.target_slot >= st.n_slots())
    throw InvalidParameter("apd_inputs_from_state: target_slot out of range");
  if (!(capture_fraction >= 0.0 && capture_fraction <= 1.0))
    throw InvalidParameter("apd_inputs_from_state: capture fraction must be in [0,1]");
  const double scale = st.mean_photons_total() * capture_fraction;
  return {scale * st.slot_probability(clock.target_slot, Port::A),
          scale * st.slot_probability(clock.target_slot, Port::B)};
}

}  // namespace timebin
