#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "timebin/channel.hpp"
#include "timebin/detection.hpp"
#include "timebin/optics.hpp"
#include "timebin/stats.hpp"
#include "timebin/units.hpp"

namespace timebin {

enum class Basis : int { Z = 0, X = 1 };

/// BB84 phase table for the pulse-pair encoding. The modulator shifts one
/// pulse of the propagating pair, so bit and basis land in the relative phase:
///   (0,Z)->0  (1,Z)->pi  (0,X)->pi/2  (1,X)->3pi/2
inline double alice_encode(int bit, Basis basis) {
  if (bit != 0 && bit != 1) throw InvalidParameter("alice_encode: bit must be 0 or 1");
  if (basis == Basis::Z) return bit == 0 ? 0.0 : kPi;
  return bit == 0 ? kPi / 2.0 : 3.0 * kPi / 2.0;
}

/// Receiver measurement phase: Z -> 0, X -> pi/2.
inline double bob_basis_phase(Basis basis) { return basis == Basis::Z ? 0.0 : kPi / 2.0; }

/// Everything fixed about the optical link for a run. Static `phase_rad`
/// values in the interferometer params act as alignment offsets on top of the
/// protocol phases (zero by default).
struct LinkConfig {
  SourceParams source;
  AmzParams alice;
  AmzParams bob;
  FiberParams fiber;
  ApdParams apd;
  ClockParams clock;
  BothClickPolicy double_click_policy = BothClickPolicy::DiscardBoth;
  // extra receiver loss when a phase modulator is inserted for BB84; applied
  // by the protocol paths only
  double bob_modulator_loss_dB = 0.0;
};

inline void validate(const LinkConfig& lc) {
  validate(lc.source);
  validate(lc.alice);
  validate(lc.bob);
  validate(lc.fiber);
  validate(lc.apd);
  validate(lc.clock);
  if (!(lc.bob_modulator_loss_dB >= 0.0))
    throw InvalidParameter("LinkConfig: bob_modulator_loss_dB must be >= 0");
}

/// Receiver interferometer as seen by the BB84 paths: modulator loss folded
/// into the insertion loss.
inline LinkConfig effective_bb84_link(LinkConfig lc) {
  lc.bob.insertion_loss_dB += lc.bob_modulator_loss_dB;
  lc.bob_modulator_loss_dB = 0.0;
  return lc;
}

struct TrialRecord {
  std::uint64_t gate_index = 0;
  int alice_bit = 0;
  Basis alice_basis = Basis::Z;
  Basis bob_basis = Basis::Z;
  ClickOutcome outcome = ClickOutcome::None;
  std::optional<int> inferred_bit;
};

/// One full gate: pulse pair -> fiber -> receiver AMZ -> balanced detection.
/// The caller supplies the protocol randomness (bit, bases) and any receiver
/// phase offset (temperature drift); the rng is consumed only by the detector
/// stage, in a fixed order (APD A uniform, APD B uniform, then the
/// double-click policy draw if needed).
inline TrialRecord run_trial(const LinkConfig& link, std::uint64_t gate_index, int alice_bit,
                             Basis alice_basis, Basis bob_basis, double bob_phase_offset_rad,
                             GateRng& rng) {
  const LinkConfig lc = effective_bb84_link(link);
  AmzParams alice = lc.alice;
  alice.phase_rad += alice_encode(alice_bit, alice_basis);
  AmzParams bob = lc.bob;
  bob.phase_rad += bob_basis_phase(bob_basis) + bob_phase_offset_rad;

  const TimeBinState pair = source_pulse_pair(lc.source, alice);
  const TimeBinState at_bob = fiber_transmit(pair, lc.fiber);
  const TimeBinState out = apply_amz(at_bob, bob);
  const double capture = window_capture_fraction(arrival_time_sigma_ps(lc.fiber, lc.source),
                                                 lc.apd.gate_width_ps);
  const auto [mu_a, mu_b] = apd_inputs_from_state(out, lc.clock, capture);

  TrialRecord rec;
  rec.gate_index = gate_index;
  rec.alice_bit = alice_bit;
  rec.alice_basis = alice_basis;
  rec.bob_basis = bob_basis;
  rec.outcome = gated_detect(mu_a, mu_b, lc.apd, rng);
  rec.inferred_bit = balanced_discriminate(rec.outcome, lc.double_click_policy, rng);
  return rec;
}

/// Basis reconciliation: keep records where the bases match and the detector
/// resolved a bit. Order preserved; bit values are never inspected.
inline std::vector<TrialRecord> sift(std::span<const TrialRecord> records) {
  std::vector<TrialRecord> kept;
  kept.reserve(records.size() / 2);
  for (const TrialRecord& r : records)
    if (r.alice_basis == r.bob_basis && r.inferred_bit.has_value()) kept.push_back(r);
  return kept;
}

/// Counters accumulated over a session, independent of basis choices.
struct SessionTally {
  std::uint64_t total_gates = 0;
  std::uint64_t clicked = 0;   // gates with any detector fire
  std::uint64_t resolved = 0;  // gates that resolved to a single bit
};

struct QberReport {
  std::uint64_t sifted_count = 0;
  std::uint64_t error_count = 0;
  std::optional<double> qber;  // empty when sifted_count == 0 (undefined, not 0)
  double qber_ci_low = 0.0;    // Wilson 95%
  double qber_ci_high = 1.0;
  double raw_rate_per_gate = 0.0;
  double sift_fraction = 0.0;  // kept fraction of resolved events
};

inline QberReport estimate_qber(std::span<const TrialRecord> sifted, const SessionTally& tally) {
  QberReport rep;
  rep.sifted_count = sifted.size();
  for (const TrialRecord& r : sifted)
    if (r.inferred_bit.value() != r.alice_bit) ++rep.error_count;
  if (rep.sifted_count > 0) {
    rep.qber = static_cast<double>(rep.error_count) / static_cast<double>(rep.sifted_count);
    const WilsonInterval ci = wilson_interval(rep.error_count, rep.sifted_count);
    rep.qber_ci_low = ci.low;
    rep.qber_ci_high = ci.high;
  }
  if (tally.total_gates > 0)
    rep.raw_rate_per_gate =
        static_cast<double>(tally.clicked) / static_cast<double>(tally.total_gates);
  if (tally.resolved > 0)
    rep.sift_fraction =
        static_cast<double>(rep.sifted_count) / static_cast<double>(tally.resolved);
  return rep;
}

/// QBER implied by a fringe visibility, (1 - V) / 2.
inline double qber_from_visibility(double v) {
  if (!(v >= 0.0 && v <= 1.0))
    throw InvalidParameter("qber_from_visibility: visibility must be in [0,1]");
  return (1.0 - v) / 2.0;
}

}  // namespace timebin
