#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "timebin/channel.hpp"
#include "timebin/detection.hpp"
#include "timebin/fringe_fit.hpp"
#include "timebin/optics.hpp"
#include "timebin/protocol.hpp"
#include "timebin/random.hpp"
#include "timebin/stats.hpp"

namespace timebin {

/// Phase-noise model for the temperature-stabilized receiver: white per-gate
/// jitter plus a deterministic exponential transient after each temperature
/// step. Calibrated against the observed fringe contrast, not claimed as
/// device physics.
struct DriftParams {
  double phase_jitter_sigma_rad = 0.0;
  double settle_drift_rad = 0.0;
  double settle_tau_gates = 0.0;
};

inline void validate(const DriftParams& d) {
  if (!(d.phase_jitter_sigma_rad >= 0.0) || !std::isfinite(d.phase_jitter_sigma_rad))
    throw InvalidParameter("DriftParams: invalid phase_jitter_sigma_rad");
  if (!(d.settle_drift_rad >= 0.0) || !std::isfinite(d.settle_drift_rad))
    throw InvalidParameter("DriftParams: invalid settle_drift_rad");
  if (!(d.settle_tau_gates >= 0.0) || !std::isfinite(d.settle_tau_gates))
    throw InvalidParameter("DriftParams: invalid settle_tau_gates");
}

/// Receiver phase error for one gate. Consumes one normal deviate iff the
/// jitter sigma is nonzero.
inline double phase_drift_sample(const DriftParams& d, std::uint64_t /*gate_index*/,
                                 std::uint64_t gates_since_step, GateRng& rng) {
  double phi = 0.0;
  if (d.phase_jitter_sigma_rad > 0.0) phi += d.phase_jitter_sigma_rad * rng.normal();
  if (d.settle_drift_rad > 0.0) {
    if (d.settle_tau_gates > 0.0)
      phi += d.settle_drift_rad *
             std::exp(-static_cast<double>(gates_since_step) / d.settle_tau_gates);
    else if (gates_since_step == 0)
      phi += d.settle_drift_rad;
  }
  return phi;
}

/// A complete simulated run: the link, its phase-noise model, and the Monte
/// Carlo budget. n_gates is per distance point (sweep), per temperature point
/// (fringe scan) or total (BB84 session).
struct ScenarioConfig {
  LinkConfig link;
  DriftParams drift;
  std::uint64_t n_gates = 1000000;
  std::uint64_t master_seed = 1;
  int n_threads = 0;  // 0 = automatic
};

inline void validate(const ScenarioConfig& cfg) {
  validate(cfg.link);
  validate(cfg.drift);
  if (cfg.n_gates < 1) throw InvalidParameter("ScenarioConfig: n_gates must be >= 1");
}

namespace detail {

// Mean photon numbers at the gated slot as a harmonic function of the
// transmitter-receiver phase difference:
//   mu_port(dphi) = base + c cos(dphi) + s sin(dphi).
// Built by evaluating the actual state pipeline at three phases; exact
// because the gated-slot means are single-harmonic in the phase difference.
struct MidSlotModel {
  double base_A = 0, cos_A = 0, sin_A = 0;
  double base_B = 0, cos_B = 0, sin_B = 0;

  double mu_A(double cos_dphi, double sin_dphi) const {
    return base_A + cos_A * cos_dphi + sin_A * sin_dphi;
  }
  double mu_B(double cos_dphi, double sin_dphi) const {
    return base_B + cos_B * cos_dphi + sin_B * sin_dphi;
  }
};

inline std::pair<double, double> pipeline_mid_means(const LinkConfig& lc, double alice_phase,
                                                    double bob_phase, double capture) {
  AmzParams alice = lc.alice;
  alice.phase_rad = alice_phase;
  AmzParams bob = lc.bob;
  bob.phase_rad = bob_phase;
  const TimeBinState pair = source_pulse_pair(lc.source, alice);
  const TimeBinState at_bob = fiber_transmit(pair, lc.fiber);
  const TimeBinState out = apply_amz(at_bob, bob);
  return apd_inputs_from_state(out, lc.clock, capture);
}

inline double capture_fraction(const LinkConfig& lc) {
  return window_capture_fraction(arrival_time_sigma_ps(lc.fiber, lc.source),
                                 lc.apd.gate_width_ps);
}

inline MidSlotModel build_mid_slot_model(const LinkConfig& lc) {
  const double capture = capture_fraction(lc);
  const auto [a0, b0] = pipeline_mid_means(lc, 0.0, 0.0, capture);
  const auto [a90, b90] = pipeline_mid_means(lc, kPi / 2.0, 0.0, capture);
  const auto [a180, b180] = pipeline_mid_means(lc, kPi, 0.0, capture);
  MidSlotModel m;
  m.base_A = 0.5 * (a0 + a180);
  m.cos_A = 0.5 * (a0 - a180);
  m.sin_A = a90 - m.base_A;
  m.base_B = 0.5 * (b0 + b180);
  m.cos_B = 0.5 * (b0 - b180);
  m.sin_B = b90 - m.base_B;
  return m;
}

// click probability with the parameters already validated/extracted
inline double click_prob_fast(double mu, double eta, double pd) {
  const double x = eta * mu;
  const double em1 = (x < 1e-4) ? -x * (1.0 - 0.5 * x + x * x / 6.0) : std::expm1(-x);
  return pd - (1.0 - pd) * em1;
}

inline int resolve_threads(int requested, std::uint64_t n_gates) {
  int t = requested;
  if (t <= 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    t = static_cast<int>(std::min(hw == 0 ? 1u : hw, 8u));
  }
  constexpr std::uint64_t kMinChunk = 4096;
  const std::uint64_t cap = std::max<std::uint64_t>(1, n_gates / kMinChunk);
  if (static_cast<std::uint64_t>(t) > cap) t = static_cast<int>(cap);
  return std::max(t, 1);
}

// Partition [0, n_gates) into contiguous chunks, run per_gate(g, tally) on
// each, merge tallies in chunk order. Per-gate random streams make the result
// independent of the partitioning.
template <typename Tally, typename PerGate>
Tally run_gates(std::uint64_t n_gates, int requested_threads, PerGate&& per_gate) {
  const int t = resolve_threads(requested_threads, n_gates);
  if (t == 1) {
    Tally tally;
    for (std::uint64_t g = 0; g < n_gates; ++g) per_gate(g, tally);
    return tally;
  }
  std::vector<Tally> parts(static_cast<std::size_t>(t));
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(t));
  const std::uint64_t chunk = n_gates / static_cast<std::uint64_t>(t);
  const std::uint64_t rem = n_gates % static_cast<std::uint64_t>(t);
  std::uint64_t lo = 0;
  for (int k = 0; k < t; ++k) {
    const std::uint64_t hi = lo + chunk + (static_cast<std::uint64_t>(k) < rem ? 1 : 0);
    workers.emplace_back([&per_gate, &parts, k, lo, hi]() {
      Tally& tally = parts[static_cast<std::size_t>(k)];
      for (std::uint64_t g = lo; g < hi; ++g) per_gate(g, tally);
    });
    lo = hi;
  }
  for (auto& w : workers) w.join();
  Tally total;
  for (const Tally& p : parts) total.merge(p);
  return total;
}

struct FireTally {
  std::uint64_t fires_A = 0;
  std::uint64_t fires_B = 0;
  void merge(const FireTally& o) {
    fires_A += o.fires_A;
    fires_B += o.fires_B;
  }
};

}  // namespace detail

/// Closed-form mean photon numbers at the gated slot, independent of the
/// state-evolution code; this is the oracle the Monte Carlo engines are
/// checked against. `washout` multiplies the interference term (phase-jitter
/// fringe reduction factor exp(-sigma^2/2)).
struct AnalyticMidSlot {
  double base_A = 0, cos_A = 0, sin_A = 0;
  double base_B = 0, cos_B = 0, sin_B = 0;
};

inline AnalyticMidSlot analytic_mid_slot(const LinkConfig& lc, double washout) {
  const double capture = detail::capture_fraction(lc);
  const double t_fiber = db_loss_to_power(lc.fiber.atten_dB_per_km * lc.fiber.length_km);
  const double ins = db_loss_to_power(lc.bob.insertion_loss_dB);
  const double scale = lc.source.mean_photons_mu * t_fiber * capture * ins;

  const double ls = db_loss_to_power(lc.bob.arm_loss_short_dB);
  const double ll = db_loss_to_power(lc.bob.arm_loss_long_dB);
  const double si = lc.bob.coupler_in_split;
  const double so = lc.bob.coupler_out_split;
  const double u2 = so * (1.0 - si) * ls;
  const double v2 = (1.0 - so) * si * ll;
  const double uv = std::sqrt(u2 * v2);
  const double p2 = (1.0 - si) * (1.0 - so) * ls;
  const double q2 = si * so * ll;
  const double pq = std::sqrt(p2 * q2);

  // launch polarization through the fiber unitary
  Complex h = lc.source.input_pol == Pol::H ? Complex{1, 0} : Complex{0, 0};
  Complex v = lc.source.input_pol == Pol::V ? Complex{1, 0} : Complex{0, 0};
  lc.fiber.pol_unitary.apply(h, v);
  const double wH = std::norm(h);
  const double wV = std::norm(v) * db_loss_to_power(lc.bob.pdl_dB);
  const double delta = birefringence_imbalance(lc.bob);
  const double wcos = wH + wV * std::cos(delta);
  const double wsin = wV * std::sin(delta);

  AnalyticMidSlot m;
  m.base_A = 0.5 * scale * (wH + wV) * (u2 + v2);
  m.cos_A = scale * uv * washout * wcos;
  m.sin_A = scale * uv * washout * wsin;
  m.base_B = 0.5 * scale * (wH + wV) * (p2 + q2);
  m.cos_B = -scale * pq * washout * wcos;
  m.sin_B = -scale * pq * washout * wsin;
  return m;
}

struct PortProbabilities {
  double p_A = 0.0;
  double p_B = 0.0;
};

/// Expected per-gate click probabilities at the configured static phases:
///   P = 1 - (1 - p_dark) exp(-eta mu_slot),
/// with the jitter washout folded into the interference term (first-order
/// accurate; the residual is far below Monte Carlo resolution at the photon
/// numbers of interest). Assumes the settling transient has decayed.
inline PortProbabilities analytic_click_probability(const ScenarioConfig& cfg) {
  validate(cfg);
  const double w = std::exp(-0.5 * cfg.drift.phase_jitter_sigma_rad *
                            cfg.drift.phase_jitter_sigma_rad);
  const AnalyticMidSlot m = analytic_mid_slot(cfg.link, w);
  const double dphi = cfg.link.alice.phase_rad - cfg.link.bob.phase_rad;
  const double c = std::cos(dphi), s = std::sin(dphi);
  PortProbabilities pp;
  pp.p_A = click_probability(m.base_A + m.cos_A * c + m.sin_A * s, cfg.link.apd);
  pp.p_B = click_probability(m.base_B + m.cos_B * c + m.sin_B * s, cfg.link.apd);
  return pp;
}

/// Predicted fitted visibility of a fringe scan at one port (dark counts and
/// jitter washout included).
inline double analytic_visibility(const ScenarioConfig& cfg, Port port) {
  const double w = std::exp(-0.5 * cfg.drift.phase_jitter_sigma_rad *
                            cfg.drift.phase_jitter_sigma_rad);
  const AnalyticMidSlot m = analytic_mid_slot(cfg.link, w);
  const double base = port == Port::A ? m.base_A : m.base_B;
  const double amp = port == Port::A ? std::hypot(m.cos_A, m.sin_A)
                                     : std::hypot(m.cos_B, m.sin_B);
  const double hi = click_probability(base + amp, cfg.link.apd);
  const double lo = click_probability(std::max(0.0, base - amp), cfg.link.apd);
  if (hi + lo <= 0.0) return 0.0;
  return (hi - lo) / (hi + lo);
}

/// The dark-count ceiling on visibility, s / (s + 2 d), with s the
/// jitter-free signal-only click probability at the port's fringe peak and d
/// the per-APD dark probability.
inline double visibility_ceiling(const ScenarioConfig& cfg, Port port) {
  const AnalyticMidSlot m = analytic_mid_slot(cfg.link, 1.0);
  const double base = port == Port::A ? m.base_A : m.base_B;
  const double amp = port == Port::A ? std::hypot(m.cos_A, m.sin_A)
                                     : std::hypot(m.cos_B, m.sin_B);
  ApdParams no_dark = cfg.link.apd;
  no_dark.dark_prob_per_gate = 0.0;
  const double s = click_probability(base + amp, no_dark);
  const double d = effective_dark_prob(cfg.link.apd);
  return s / (s + 2.0 * d);
}

/// Exact optical fringe visibility of the gated slot at one port, computed
/// through the state pipeline. The gated-slot probability is an exact single
/// harmonic in the phase difference, so four quadrature phases determine the
/// fringe without a fit.
inline double deterministic_visibility(const LinkConfig& lc, Port port) {
  validate(lc);
  const double capture = 1.0;  // optical visibility; gate windowing cancels
  auto prob = [&](double extra) {
    AmzParams alice = lc.alice;
    alice.phase_rad += extra;
    const TimeBinState pair = source_pulse_pair(lc.source, alice);
    const TimeBinState at_bob = fiber_transmit(pair, lc.fiber);
    const TimeBinState out = apply_amz(at_bob, lc.bob);
    (void)capture;
    return out.slot_probability(lc.clock.target_slot, port);
  };
  const double p0 = prob(0.0);
  const double p90 = prob(kPi / 2.0);
  const double p180 = prob(kPi);
  const double p270 = prob(3.0 * kPi / 2.0);
  const double offset = 0.5 * (p0 + p180);
  const double c = 0.5 * (p0 - p180);
  const double s = 0.5 * (p90 - p270);
  if (offset <= 0.0) throw InvalidFringe("deterministic_visibility: no light at the gated slot");
  return std::hypot(c, s) / offset;
}

// ---------------------------------------------------------------------------
// distance sweep

struct SweepPoint {
  double length_km = 0.0;
  double p_analytic = 0.0;
  double p_mc = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double dark_floor = 0.0;
  std::uint64_t fires = 0;
  std::uint64_t gates = 0;
};

/// Photon-counting probability versus transmission distance at the configured
/// (static) phase setting, Monte Carlo against the closed-form curve. Counts
/// discriminator-A fires per gate; n_gates applies per distance.
inline std::vector<SweepPoint> run_distance_sweep(const ScenarioConfig& cfg,
                                                  std::span<const double> distances_km) {
  validate(cfg);
  std::vector<SweepPoint> out;
  out.reserve(distances_km.size());
  const double eta = cfg.link.apd.quantum_efficiency;
  const double pd = effective_dark_prob(cfg.link.apd);
  const double ap = cfg.link.apd.afterpulse_prob;

  for (std::size_t i = 0; i < distances_km.size(); ++i) {
    ScenarioConfig c = cfg;
    c.link.fiber.length_km = distances_km[i];
    validate(c.link.fiber);
    const PortProbabilities analytic = analytic_click_probability(c);
    const detail::MidSlotModel model = detail::build_mid_slot_model(c.link);
    const double dphi0 = c.link.alice.phase_rad - c.link.bob.phase_rad;
    const bool noisy = c.drift.phase_jitter_sigma_rad > 0.0 || c.drift.settle_drift_rad > 0.0;
    const std::uint64_t master = c.master_seed;
    const std::uint64_t hi_key = i;

    detail::FireTally tally;
    if (!noisy && ap == 0.0) {
      const double pa =
          detail::click_prob_fast(model.mu_A(std::cos(dphi0), std::sin(dphi0)), eta, pd);
      const double pb =
          detail::click_prob_fast(model.mu_B(std::cos(dphi0), std::sin(dphi0)), eta, pd);
      tally = detail::run_gates<detail::FireTally>(
          c.n_gates, c.n_threads, [=](std::uint64_t g, detail::FireTally& t) {
            GateRng rng(master, hi_key, g);
            t.fires_A += rng.uniform() < pa;
            t.fires_B += rng.uniform() < pb;
          });
    } else {
      const DriftParams drift = c.drift;
      auto gate_body = [=](std::uint64_t g, detail::FireTally& t, bool& prev_a, bool& prev_b) {
        GateRng rng(master, hi_key, g);
        const double xi = phase_drift_sample(drift, g, g, rng);
        const double dphi = dphi0 - xi;
        const double cd = std::cos(dphi), sd = std::sin(dphi);
        double pa = detail::click_prob_fast(model.mu_A(cd, sd), eta, pd);
        double pb = detail::click_prob_fast(model.mu_B(cd, sd), eta, pd);
        if (prev_a) pa = 1.0 - (1.0 - pa) * (1.0 - ap);
        if (prev_b) pb = 1.0 - (1.0 - pb) * (1.0 - ap);
        prev_a = rng.uniform() < pa;
        prev_b = rng.uniform() < pb;
        t.fires_A += prev_a;
        t.fires_B += prev_b;
      };
      if (ap > 0.0) {
        // afterpulsing couples consecutive gates: run sequentially
        bool prev_a = false, prev_b = false;
        for (std::uint64_t g = 0; g < c.n_gates; ++g) gate_body(g, tally, prev_a, prev_b);
      } else {
        tally = detail::run_gates<detail::FireTally>(
            c.n_gates, c.n_threads, [=](std::uint64_t g, detail::FireTally& t) {
              bool pa = false, pb = false;
              gate_body(g, t, pa, pb);
            });
      }
    }

    SweepPoint pt;
    pt.length_km = distances_km[i];
    pt.p_analytic = analytic.p_A;
    pt.p_mc = static_cast<double>(tally.fires_A) / static_cast<double>(c.n_gates);
    const WilsonInterval ci = wilson_interval(tally.fires_A, c.n_gates);
    pt.ci_low = ci.low;
    pt.ci_high = ci.high;
    pt.dark_floor = pd;
    pt.fires = tally.fires_A;
    pt.gates = c.n_gates;
    out.push_back(pt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// temperature fringe scan

struct FringePoint {
  double temperature_C = 0.0;
  double phase_rad = 0.0;  // nominal receiver phase at this temperature
  std::uint64_t counts_A = 0;
  std::uint64_t counts_B = 0;
  std::uint64_t gates = 0;
};

struct ApdFringeFit {
  double amplitude = 0.0;
  double offset = 0.0;
  double phase = 0.0;
  double visibility = 0.0;
  double amplitude_se = 0.0;
  double offset_se = 0.0;
  double phase_se = 0.0;
  double visibility_se = 0.0;
  bool clamped = false;  // true when amplitude/offset exceeded 1 and was clamped
};

struct FringeResult {
  std::vector<FringePoint> points;
  bool fit_ok = false;
  std::string fit_message;
  ApdFringeFit fit_A;
  ApdFringeFit fit_B;
  double fitted_period_C = 0.0;  // from the free-frequency fit against temperature
};

namespace detail {

inline ApdFringeFit summarize_fit(const SinusoidFit& f) {
  ApdFringeFit out;
  out.amplitude = f.amplitude;
  out.offset = f.offset;
  out.phase = f.phase;
  out.amplitude_se = f.amplitude_se;
  out.offset_se = f.offset_se;
  out.phase_se = f.phase_se;
  if (f.offset > 0.0) {
    double v = f.amplitude / f.offset;
    if (v > 1.0) {
      v = 1.0;
      out.clamped = true;
    }
    out.visibility = v;
    const double ra = f.amplitude > 0.0 ? f.amplitude_se / f.amplitude : 0.0;
    const double ro = f.offset_se / f.offset;
    out.visibility_se = out.visibility * std::sqrt(ra * ra + ro * ro);
  }
  return out;
}

}  // namespace detail

/// Counts per APD while stepping the receiver temperature, then a
/// free-frequency sinusoid fit per APD against temperature. Each temperature
/// point restarts the settling transient; n_gates applies per point.
inline FringeResult run_fringe_scan(const ScenarioConfig& cfg,
                                    std::span<const double> temperatures_C) {
  validate(cfg);
  FringeResult res;
  if (temperatures_C.size() < 5) {
    res.fit_message = "need at least 5 temperature points";
    return res;
  }
  const detail::MidSlotModel model = detail::build_mid_slot_model(cfg.link);
  const double eta = cfg.link.apd.quantum_efficiency;
  const double pd = effective_dark_prob(cfg.link.apd);
  const double ap = cfg.link.apd.afterpulse_prob;
  const DriftParams drift = cfg.drift;
  const std::uint64_t master = cfg.master_seed;

  res.points.reserve(temperatures_C.size());
  for (std::size_t i = 0; i < temperatures_C.size(); ++i) {
    const double dT = temperatures_C[i] - cfg.link.bob.temperature_C;
    const double phi_T = phase_from_temperature(cfg.link.bob, dT);
    const double bob_phase = cfg.link.bob.phase_rad + phi_T;
    const double dphi0 = cfg.link.alice.phase_rad - bob_phase;
    const double c0 = std::cos(dphi0), s0 = std::sin(dphi0);
    const bool noisy = drift.phase_jitter_sigma_rad > 0.0 || drift.settle_drift_rad > 0.0;

    auto gate_body = [=](std::uint64_t g, detail::FireTally& t, bool& prev_a, bool& prev_b) {
      GateRng rng(master, i, g);
      double cd = c0, sd = s0;
      if (noisy) {
        const double xi = phase_drift_sample(drift, g, g, rng);
        // dphi = dphi0 - xi
        const double cx = std::cos(xi), sx = std::sin(xi);
        cd = c0 * cx + s0 * sx;
        sd = s0 * cx - c0 * sx;
      }
      double pa = detail::click_prob_fast(model.mu_A(cd, sd), eta, pd);
      double pb = detail::click_prob_fast(model.mu_B(cd, sd), eta, pd);
      if (prev_a) pa = 1.0 - (1.0 - pa) * (1.0 - ap);
      if (prev_b) pb = 1.0 - (1.0 - pb) * (1.0 - ap);
      prev_a = rng.uniform() < pa;
      prev_b = rng.uniform() < pb;
      t.fires_A += prev_a;
      t.fires_B += prev_b;
    };

    detail::FireTally tally;
    if (ap > 0.0) {
      bool prev_a = false, prev_b = false;
      for (std::uint64_t g = 0; g < cfg.n_gates; ++g) gate_body(g, tally, prev_a, prev_b);
    } else {
      tally = detail::run_gates<detail::FireTally>(
          cfg.n_gates, cfg.n_threads, [=](std::uint64_t g, detail::FireTally& t) {
            bool pa = false, pb = false;
            gate_body(g, t, pa, pb);
          });
    }

    FringePoint pt;
    pt.temperature_C = temperatures_C[i];
    pt.phase_rad = bob_phase;
    pt.counts_A = tally.fires_A;
    pt.counts_B = tally.fires_B;
    pt.gates = cfg.n_gates;
    res.points.push_back(pt);
  }

  std::vector<double> xs, ya, yb;
  xs.reserve(res.points.size());
  for (const FringePoint& p : res.points) {
    xs.push_back(p.temperature_C);
    ya.push_back(static_cast<double>(p.counts_A));
    yb.push_back(static_cast<double>(p.counts_B));
  }
  const SinusoidFit fa = fit_sinusoid(xs, ya);
  const SinusoidFit fb = fit_sinusoid(xs, yb);
  if (!fa.ok || !fb.ok) {
    res.fit_message = !fa.ok ? ("APD A fit failed: " + fa.message)
                             : ("APD B fit failed: " + fb.message);
    return res;
  }
  res.fit_A = detail::summarize_fit(fa);
  res.fit_B = detail::summarize_fit(fb);
  res.fitted_period_C = kTwoPi / fa.angular_freq;
  if (res.fit_A.offset <= 0.0 || res.fit_B.offset <= 0.0) {
    res.fit_message = "fitted offset is not positive";
    return res;
  }
  res.fit_ok = true;
  return res;
}

struct VisibilityEstimate {
  double v_A = 0.0;
  double v_B = 0.0;
  bool clamped_A = false;
  bool clamped_B = false;
};

/// Visibility per APD from a fitted fringe, amplitude / offset.
inline VisibilityEstimate estimate_visibility(const FringeResult& fringe) {
  if (fringe.fit_A.offset <= 0.0 || fringe.fit_B.offset <= 0.0)
    throw InvalidFringe("estimate_visibility: fitted offset must be positive");
  VisibilityEstimate v;
  v.v_A = fringe.fit_A.visibility;
  v.v_B = fringe.fit_B.visibility;
  v.clamped_A = fringe.fit_A.clamped;
  v.clamped_B = fringe.fit_B.clamped;
  return v;
}

// ---------------------------------------------------------------------------
// BB84 session

struct Bb84Result {
  QberReport report;
  SessionTally tally;
  std::array<std::uint64_t, 4> outcome_counts{};  // None, ApdA, ApdB, Both
  std::vector<std::uint8_t> key_sample;           // first sifted bits (receiver side)
  std::uint64_t n_gates = 0;
  double analytic_v_A = 0.0;
  double analytic_v_B = 0.0;
  double qber_predicted = 0.0;  // (1 - mean analytic visibility) / 2
};

inline constexpr std::size_t kKeySampleMax = 256;

namespace detail {

struct Bb84Tally {
  std::uint64_t clicked = 0;
  std::uint64_t resolved = 0;
  std::uint64_t sifted = 0;
  std::uint64_t errors = 0;
  std::array<std::uint64_t, 4> outcomes{};
  std::vector<std::uint8_t> key_bits;  // first sifted bits of this chunk

  void merge(const Bb84Tally& o) {
    clicked += o.clicked;
    resolved += o.resolved;
    sifted += o.sifted;
    errors += o.errors;
    for (std::size_t i = 0; i < outcomes.size(); ++i) outcomes[i] += o.outcomes[i];
    for (std::uint8_t b : o.key_bits)
      if (key_bits.size() < kKeySampleMax) key_bits.push_back(b);
  }
};

}  // namespace detail

/// Full BB84 session: per gate, random bit and bases, the optical pipeline,
/// balanced detection and discrimination; sifting and QBER on the fly.
/// n_gates is the session total. The per-gate draw order is bit, Alice basis,
/// Bob basis, drift deviate (iff jitter > 0), APD A, APD B, then the
/// double-click policy draw when needed.
inline Bb84Result run_bb84_session(const ScenarioConfig& cfg) {
  validate(cfg);
  const LinkConfig lc = effective_bb84_link(cfg.link);
  const detail::MidSlotModel model = detail::build_mid_slot_model(lc);
  const double eta = lc.apd.quantum_efficiency;
  const double pd = effective_dark_prob(lc.apd);
  const double ap = lc.apd.afterpulse_prob;
  const DriftParams drift = cfg.drift;
  const std::uint64_t master = cfg.master_seed;
  const BothClickPolicy policy = lc.double_click_policy;
  const double alice_static = lc.alice.phase_rad;
  const double bob_static = lc.bob.phase_rad;

  // phase tables for the 4 transmitter settings and 2 receiver bases
  std::array<double, 4> enc;  // index = bit * 2 + basis
  for (int bit = 0; bit < 2; ++bit)
    for (int basis = 0; basis < 2; ++basis)
      enc[static_cast<std::size_t>(bit * 2 + basis)] =
          alice_static + alice_encode(bit, static_cast<Basis>(basis));

  auto gate_body = [=](std::uint64_t g, detail::Bb84Tally& t, bool& prev_a, bool& prev_b) {
    GateRng rng(master, 0, g);
    const int bit = rng.uniform() < 0.5 ? 0 : 1;
    const Basis abasis = rng.uniform() < 0.5 ? Basis::Z : Basis::X;
    const Basis bbasis = rng.uniform() < 0.5 ? Basis::Z : Basis::X;
    const double xi = phase_drift_sample(drift, g, g, rng);
    const double dphi = enc[static_cast<std::size_t>(bit * 2 + static_cast<int>(abasis))] -
                        (bob_static + bob_basis_phase(bbasis) + xi);
    const double cd = std::cos(dphi), sd = std::sin(dphi);
    double pa = detail::click_prob_fast(model.mu_A(cd, sd), eta, pd);
    double pb = detail::click_prob_fast(model.mu_B(cd, sd), eta, pd);
    if (prev_a) pa = 1.0 - (1.0 - pa) * (1.0 - ap);
    if (prev_b) pb = 1.0 - (1.0 - pb) * (1.0 - ap);
    prev_a = rng.uniform() < pa;
    prev_b = rng.uniform() < pb;
    const ClickOutcome outcome = joint_outcome(prev_a, prev_b);
    ++t.outcomes[static_cast<std::size_t>(outcome)];
    if (outcome == ClickOutcome::None) return;
    ++t.clicked;
    const std::optional<int> inferred = balanced_discriminate(outcome, policy, rng);
    if (!inferred) return;
    ++t.resolved;
    if (abasis != bbasis) return;
    ++t.sifted;
    if (*inferred != bit) ++t.errors;
    if (t.key_bits.size() < kKeySampleMax)
      t.key_bits.push_back(static_cast<std::uint8_t>(*inferred));
  };

  detail::Bb84Tally tally;
  if (ap > 0.0) {
    bool prev_a = false, prev_b = false;
    for (std::uint64_t g = 0; g < cfg.n_gates; ++g) gate_body(g, tally, prev_a, prev_b);
  } else {
    tally = detail::run_gates<detail::Bb84Tally>(
        cfg.n_gates, cfg.n_threads, [=](std::uint64_t g, detail::Bb84Tally& t) {
          bool pa = false, pb = false;
          gate_body(g, t, pa, pb);
        });
  }

  Bb84Result res;
  res.n_gates = cfg.n_gates;
  res.tally = {cfg.n_gates, tally.clicked, tally.resolved};
  res.outcome_counts = tally.outcomes;
  res.key_sample = std::move(tally.key_bits);

  res.report.sifted_count = tally.sifted;
  res.report.error_count = tally.errors;
  if (tally.sifted > 0) {
    res.report.qber = static_cast<double>(tally.errors) / static_cast<double>(tally.sifted);
    const WilsonInterval ci = wilson_interval(tally.errors, tally.sifted);
    res.report.qber_ci_low = ci.low;
    res.report.qber_ci_high = ci.high;
  }
  res.report.raw_rate_per_gate =
      static_cast<double>(tally.clicked) / static_cast<double>(cfg.n_gates);
  if (tally.resolved > 0)
    res.report.sift_fraction =
        static_cast<double>(tally.sifted) / static_cast<double>(tally.resolved);

  ScenarioConfig eff = cfg;
  eff.link = lc;
  res.analytic_v_A = analytic_visibility(eff, Port::A);
  res.analytic_v_B = analytic_visibility(eff, Port::B);
  res.qber_predicted = qber_from_visibility(0.5 * (res.analytic_v_A + res.analytic_v_B));
  return res;
}

/// Record-collecting reference session over the unoptimized trial path; same
/// per-gate stream layout as run_bb84_session. For tests and small runs.
inline std::vector<TrialRecord> run_bb84_trials(const ScenarioConfig& cfg) {
  validate(cfg);
  std::vector<TrialRecord> records;
  records.reserve(cfg.n_gates);
  for (std::uint64_t g = 0; g < cfg.n_gates; ++g) {
    GateRng rng(cfg.master_seed, 0, g);
    const int bit = rng.uniform() < 0.5 ? 0 : 1;
    const Basis abasis = rng.uniform() < 0.5 ? Basis::Z : Basis::X;
    const Basis bbasis = rng.uniform() < 0.5 ? Basis::Z : Basis::X;
    const double xi = phase_drift_sample(cfg.drift, g, g, rng);
    records.push_back(run_trial(cfg.link, g, bit, abasis, bbasis, xi, rng));
  }
  return records;
}

// ---------------------------------------------------------------------------
// calibration and configuration checks

/// Solves for the receiver coupler asymmetry and phase-jitter sigma that
/// reproduce target fitted visibilities (port A, port B) at the configured
/// link, in the first-order click regime. Requires lossless arms, zero PDL
/// and balanced birefringence; throws InvalidParameter when the targets are
/// out of reach (above the dark-count ceiling).
inline ScenarioConfig with_calibrated_drift(ScenarioConfig cfg, double target_v_A,
                                            double target_v_B) {
  validate(cfg);
  if (!(target_v_A > 0.0 && target_v_A <= 1.0 && target_v_B > 0.0 && target_v_B <= 1.0))
    throw InvalidParameter("with_calibrated_drift: targets must be in (0,1]");
  if (cfg.link.bob.arm_loss_short_dB != 0.0 || cfg.link.bob.arm_loss_long_dB != 0.0 ||
      cfg.link.bob.pdl_dB != 0.0)
    throw InvalidParameter("with_calibrated_drift: requires lossless arms and zero PDL");
  if (std::abs(birefringence_imbalance(cfg.link.bob)) > 1e-6)
    throw InvalidParameter("with_calibrated_drift: receiver birefringence must be balanced");

  const double capture = detail::capture_fraction(cfg.link);
  const double t_fiber =
      db_loss_to_power(cfg.link.fiber.atten_dB_per_km * cfg.link.fiber.length_km);
  const double ins = db_loss_to_power(cfg.link.bob.insertion_loss_dB);
  const double scale = cfg.link.source.mean_photons_mu * t_fiber * capture * ins;
  const double eta = cfg.link.apd.quantum_efficiency;
  const double pd = effective_dark_prob(cfg.link.apd);
  if (!(scale > 0.0 && eta > 0.0))
    throw InvalidParameter("with_calibrated_drift: link delivers no signal");

  const double D = 2.0 * pd / (eta * scale);
  const double r = target_v_B / target_v_A;
  const double mA = (r * (1.0 + D) - D) / (1.0 + r);  // middle-slot power fraction at port A
  const double m = mA - 0.5;
  const double x = std::sqrt(std::abs(m) / 2.0);
  if (x >= 0.5)
    throw InvalidParameter("with_calibrated_drift: target visibility ratio is out of reach");
  const double c = 0.5 - 2.0 * x * x;  // interference amplitude 2uv
  const double w = target_v_A * (mA + D) / c;
  if (!(w > 0.0 && w <= 1.0))
    throw InvalidParameter("with_calibrated_drift: targets exceed the dark-count ceiling");

  cfg.link.bob.coupler_in_split = 0.5 + x;
  cfg.link.bob.coupler_out_split = (m >= 0.0) ? 0.5 - x : 0.5 + x;
  cfg.drift.phase_jitter_sigma_rad = (w < 1.0) ? std::sqrt(-2.0 * std::log(w)) : 0.0;
  cfg.drift.settle_drift_rad = 0.0;
  cfg.drift.settle_tau_gates = 0.0;
  return cfg;
}

/// Configuration sanity warnings (non-fatal).
inline std::vector<std::string> scenario_warnings(const ScenarioConfig& cfg) {
  std::vector<std::string> w;
  if (cfg.link.clock.rep_rate_hz > 1e6 && cfg.link.apd.afterpulse_prob == 0.0)
    w.push_back("repetition rate above 1 MHz: APD afterpulsing becomes significant and is "
                "not modeled (set apd.afterpulse_prob to include it)");
  if (cfg.link.alice.delay_slots != cfg.link.bob.delay_slots)
    w.push_back("transmitter and receiver delays differ: the pulse pairs cannot interfere");
  else if (cfg.link.clock.target_slot !=
           static_cast<std::size_t>(cfg.link.alice.delay_slots))
    w.push_back("clock.target_slot does not select the interfering middle slot");
  return w;
}

inline std::vector<std::string> sweep_warnings(const ScenarioConfig& cfg,
                                               std::span<const double> distances_km) {
  std::vector<std::string> w = scenario_warnings(cfg);
  double longest = 0.0;
  for (double d : distances_km) longest = std::max(longest, d);
  ScenarioConfig far = cfg;
  far.link.fiber.length_km = longest;
  const double expected = analytic_click_probability(far).p_A *
                          static_cast<double>(cfg.n_gates);
  if (expected < 100.0)
    w.push_back("expected signal counts at the longest distance are below 100; "
                "increase n_gates for a usable curve");
  return w;
}

inline std::vector<std::string> fringe_warnings(const ScenarioConfig& cfg,
                                                std::span<const double> temperatures_C) {
  std::vector<std::string> w = scenario_warnings(cfg);
  if (!temperatures_C.empty()) {
    const auto [lo, hi] = std::minmax_element(temperatures_C.begin(), temperatures_C.end());
    if (*hi - *lo < temperature_fringe_period_C(cfg.link.bob))
      w.push_back("temperature range spans less than one fringe period; the fit will be "
                  "poorly constrained");
  }
  return w;
}

}  // namespace timebin
