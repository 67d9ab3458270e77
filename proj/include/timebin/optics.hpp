#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "timebin/errors.hpp"
#include "timebin/units.hpp"

namespace timebin {

enum class Port : int { A = 0, B = 1 };
enum class Pol : int { H = 0, V = 1 };

inline constexpr int port_index(Port p) { return static_cast<int>(p); }
inline constexpr int pol_index(Pol p) { return static_cast<int>(p); }

/// Coherent amplitudes of a weak pulse train over discrete time slots.
///
/// Normalization convention: the amplitudes carry the pulse *shape* (sum of
/// |a|^2 is 1 for a lossless history and drops below 1 as device losses are
/// applied), while `mean_photons_total` carries the intensity scale. The mean
/// photon number arriving in slot s at port p is
///   mean_photons_total * sum_pol |amp(s, p, pol)|^2.
class TimeBinState {
 public:
  static constexpr std::size_t kHardMaxSlots = 16;
  static constexpr std::size_t kDefaultMaxSlots = 8;

  TimeBinState(std::size_t n_slots, double slot_duration_ns, double mean_photons_total,
               std::size_t max_slots = kDefaultMaxSlots)
      : n_slots_(n_slots),
        max_slots_(max_slots),
        slot_duration_ns_(slot_duration_ns),
        mean_photons_total_(mean_photons_total) {
    if (max_slots_ == 0 || max_slots_ > kHardMaxSlots)
      throw InvalidParameter("TimeBinState: max_slots must be in [1, " +
                             std::to_string(kHardMaxSlots) + "]");
    if (n_slots_ == 0 || n_slots_ > max_slots_)
      throw InvalidParameter("TimeBinState: slot count must be in [1, max_slots]");
    if (!(slot_duration_ns_ > 0.0) || !std::isfinite(slot_duration_ns_))
      throw InvalidParameter("TimeBinState: slot_duration_ns must be positive and finite");
    if (!(mean_photons_total_ >= 0.0) || !std::isfinite(mean_photons_total_))
      throw InvalidParameter("TimeBinState: mean_photons_total must be >= 0 and finite");
    amps_.fill(Complex{0.0, 0.0});
  }

  std::size_t n_slots() const { return n_slots_; }
  std::size_t max_slots() const { return max_slots_; }
  double slot_duration_ns() const { return slot_duration_ns_; }
  double mean_photons_total() const { return mean_photons_total_; }
  void set_mean_photons_total(double mu) {
    if (!(mu >= 0.0) || !std::isfinite(mu))
      throw InvalidParameter("TimeBinState: mean_photons_total must be >= 0 and finite");
    mean_photons_total_ = mu;
  }

  Complex& amp(std::size_t slot, Port port, Pol pol) { return amps_[index(slot, port, pol)]; }
  const Complex& amp(std::size_t slot, Port port, Pol pol) const {
    return amps_[index(slot, port, pol)];
  }

  /// sum over all slots/ports/pols of |amp|^2; 1 for a lossless history.
  double total_probability() const {
    double t = 0.0;
    for (std::size_t i = 0; i < n_slots_ * 4; ++i) t += std::norm(amps_[i]);
    return t;
  }

  /// |amp|^2 at (slot, port) summed over polarization.
  double slot_probability(std::size_t slot, Port port) const {
    return std::norm(amp(slot, port, Pol::H)) + std::norm(amp(slot, port, Pol::V));
  }

  double slot_mean_photons(std::size_t slot, Port port) const {
    return mean_photons_total_ * slot_probability(slot, port);
  }

 private:
  std::size_t index(std::size_t slot, Port port, Pol pol) const {
    return (slot * 2 + static_cast<std::size_t>(port)) * 2 + static_cast<std::size_t>(pol);
  }

  std::size_t n_slots_;
  std::size_t max_slots_;
  double slot_duration_ns_;
  double mean_photons_total_;
  std::array<Complex, kHardMaxSlots * 4> amps_;
};

/// Faint-pulse source feeding the transmitter interferometer.
struct SourceParams {
  double wavelength_um = 1.55;
  double pulse_fwhm_ps = 200.0;
  double spectral_width_nm = 0.5;
  double mean_photons_mu = 0.2;  // mean photon number of the attenuated pulse pair
  Pol input_pol = Pol::H;        // launch along one optic axis of the PMF pigtail
  double slot_duration_ns = 5.0;
};

/// Default arm path-length difference: an exact multiple of the beat length
/// for the default wavelength/birefringence, i.e. a balanced device (~1 m).
inline constexpr double kBalancedPathDiffUm = 9677.0 * (1.55 / 0.015);

/// One asymmetric Mach-Zehnder interferometer: geometry, couplers and losses.
///
/// `coupler_in_split` is the power fraction the input coupler crosses into
/// the long arm; `coupler_out_split` is the power fraction the output coupler
/// crosses from the short arm to port A. `phase_rad` is the extra phase of
/// the long arm for the H mode; the V mode additionally accumulates the
/// birefringence imbalance phase (zero when the path difference is a multiple
/// of the beat length).
struct AmzParams {
  int delay_slots = 1;  // physical delay = delay_slots * slot_duration
  double phase_rad = 0.0;
  double temperature_C = 25.0;
  double temp_coeff_um_per_C = 5.0;  // path-difference change per degree
  double wavelength_um = 1.55;
  double refractive_index = 1.5;
  double modal_birefringence = 0.015;
  double path_length_diff_um = kBalancedPathDiffUm;
  double coupler_in_split = 0.5;
  double coupler_out_split = 0.5;
  double arm_loss_short_dB = 0.0;
  double arm_loss_long_dB = 0.0;
  double insertion_loss_dB = 0.0;
  double pdl_dB = 0.0;  // extra loss on the V mode
};

inline void validate(const AmzParams& p) {
  auto bad = [](const std::string& field) {
    throw InvalidParameter("AmzParams: invalid " + field);
  };
  if (p.delay_slots < 1) bad("delay_slots (must be >= 1)");
  if (!std::isfinite(p.phase_rad)) bad("phase_rad");
  if (!std::isfinite(p.temperature_C)) bad("temperature_C");
  if (!std::isfinite(p.temp_coeff_um_per_C)) bad("temp_coeff_um_per_C");
  if (!(p.wavelength_um > 0.0) || !std::isfinite(p.wavelength_um)) bad("wavelength_um");
  if (!(p.refractive_index > 0.0) || !std::isfinite(p.refractive_index)) bad("refractive_index");
  if (!(p.modal_birefringence >= 0.0) || !std::isfinite(p.modal_birefringence))
    bad("modal_birefringence");
  if (!(p.path_length_diff_um > 0.0) || !std::isfinite(p.path_length_diff_um))
    bad("path_length_diff_um");
  if (!(p.coupler_in_split >= 0.0 && p.coupler_in_split <= 1.0)) bad("coupler_in_split");
  if (!(p.coupler_out_split >= 0.0 && p.coupler_out_split <= 1.0)) bad("coupler_out_split");
  if (!(p.arm_loss_short_dB >= 0.0) || !std::isfinite(p.arm_loss_short_dB))
    bad("arm_loss_short_dB");
  if (!(p.arm_loss_long_dB >= 0.0) || !std::isfinite(p.arm_loss_long_dB)) bad("arm_loss_long_dB");
  if (!(p.insertion_loss_dB >= 0.0) || !std::isfinite(p.insertion_loss_dB))
    bad("insertion_loss_dB");
  if (!(p.pdl_dB >= 0.0) || !std::isfinite(p.pdl_dB)) bad("pdl_dB");
}

inline void validate(const SourceParams& s) {
  auto bad = [](const std::string& field) {
    throw InvalidParameter("SourceParams: invalid " + field);
  };
  if (!(s.wavelength_um > 0.0) || !std::isfinite(s.wavelength_um)) bad("wavelength_um");
  if (!(s.pulse_fwhm_ps > 0.0) || !std::isfinite(s.pulse_fwhm_ps)) bad("pulse_fwhm_ps");
  if (!(s.spectral_width_nm >= 0.0) || !std::isfinite(s.spectral_width_nm))
    bad("spectral_width_nm");
  if (!(s.mean_photons_mu >= 0.0) || !std::isfinite(s.mean_photons_mu)) bad("mean_photons_mu");
  if (!(s.slot_duration_ns > 0.0) || !std::isfinite(s.slot_duration_ns)) bad("slot_duration_ns");
}

/// Beat length of the birefringent waveguide, lambda / dn.
inline double beat_length_um(const AmzParams& p) {
  if (!(p.modal_birefringence > 0.0))
    throw InvalidParameter("beat_length_um: modal_birefringence must be > 0");
  return p.wavelength_um / p.modal_birefringence;
}

/// Residual phase between the two polarization modes across the arm length
/// difference, reduced to (-pi, pi]. Zero exactly when the path difference is
/// an integer number of beat lengths (or the guide is not birefringent).
inline double birefringence_imbalance(const AmzParams& p) {
  validate(p);
  if (p.modal_birefringence == 0.0) return 0.0;
  const double turns = p.path_length_diff_um * p.modal_birefringence / p.wavelength_um;
  double frac = turns - std::round(turns);  // [-0.5, 0.5]
  if (frac == -0.5) frac = 0.5;
  return kTwoPi * frac;
}

inline bool is_balanced(const AmzParams& p, double tolerance_rad) {
  return std::abs(birefringence_imbalance(p)) <= tolerance_rad;
}

/// Interferometer phase increment from a device-temperature change:
///   dphi = 2 pi n kappa dT / lambda,
/// with kappa the path-difference thermal coefficient. Linear in dT.
inline double phase_from_temperature(const AmzParams& p, double delta_T_C) {
  validate(p);
  if (!std::isfinite(delta_T_C))
    throw InvalidParameter("phase_from_temperature: delta_T must be finite");
  return kTwoPi * p.refractive_index * p.temp_coeff_um_per_C * delta_T_C / p.wavelength_um;
}

/// Fringe period in device temperature, lambda / (n kappa).
inline double temperature_fringe_period_C(const AmzParams& p) {
  return p.wavelength_um / (p.refractive_index * p.temp_coeff_um_per_C);
}

/// Input-coupler split that compensates an arm-loss difference so both paths
/// reach the output coupler with equal amplitude.
inline double compensating_input_split(double arm_loss_short_dB, double arm_loss_long_dB) {
  const double ts = db_loss_to_power(arm_loss_short_dB);
  const double tl = db_loss_to_power(arm_loss_long_dB);
  return ts / (ts + tl);
}

/// Ideal double-pulse emitted by the transmitter: two coherent slots on port
/// A with amplitudes 1/sqrt(2) and e^{i phase}/sqrt(2), polarized along the
/// launch axis. The mean photon number is the source mu, i.e. the attenuator
/// defines the intensity reference plane at the transmitter output, so the
/// transmitter's internal losses are not applied separately.
inline TimeBinState source_pulse_pair(const SourceParams& src, const AmzParams& alice) {
  validate(src);
  validate(alice);
  const std::size_t n_slots = static_cast<std::size_t>(alice.delay_slots) + 1;
  TimeBinState st(n_slots, src.slot_duration_ns, src.mean_photons_mu);
  const double r = 1.0 / std::sqrt(2.0);
  st.amp(0, Port::A, src.input_pol) = Complex{r, 0.0};
  st.amp(static_cast<std::size_t>(alice.delay_slots), Port::A, src.input_pol) =
      std::polar(r, alice.phase_rad);
  return st;
}

/// Lossy AMZ transfer. Both state ports enter the input coupler; the output
/// slot count grows by `delay_slots`. Coupler convention (cross coupling
/// carries +90 degrees):
///
///   short = sqrt(1-s_in) A + i sqrt(s_in) B      A = i sqrt(s_out) short + sqrt(1-s_out) long
///   long  = i sqrt(s_in) A + sqrt(1-s_in) B      B = sqrt(1-s_out) short + i sqrt(s_out) long
///
/// The long arm delays by `delay_slots` and gains e^{i phase_rad} (H mode) or
/// e^{i (phase_rad + imbalance)} (V mode). With this labeling the interfering
/// middle slot of a transmitter/receiver cascade peaks at port A when the
/// phase difference is zero. Arm, insertion and polarization-dependent losses
/// scale the amplitudes; no probability is ever created.
inline TimeBinState apply_amz(const TimeBinState& in, const AmzParams& p) {
  validate(p);
  const std::size_t out_slots = in.n_slots() + static_cast<std::size_t>(p.delay_slots);
  if (out_slots > in.max_slots())
    throw CapacityError("apply_amz: output would need " + std::to_string(out_slots) +
                        " slots, max is " + std::to_string(in.max_slots()));

  TimeBinState out(out_slots, in.slot_duration_ns(), in.mean_photons_total(), in.max_slots());

  const double t_short = db_loss_to_amplitude(p.arm_loss_short_dB);
  const double t_long = db_loss_to_amplitude(p.arm_loss_long_dB);
  const double t_ins = db_loss_to_amplitude(p.insertion_loss_dB);
  const double t_pdl = db_loss_to_amplitude(p.pdl_dB);
  const double ci = std::sqrt(1.0 - p.coupler_in_split);
  const double xi = std::sqrt(p.coupler_in_split);
  const double co = std::sqrt(1.0 - p.coupler_out_split);
  const double xo = std::sqrt(p.coupler_out_split);
  const double imbalance = birefringence_imbalance(p);
  const Complex long_phase[2] = {std::polar(t_long, p.phase_rad),
                                 std::polar(t_long, p.phase_rad + imbalance)};
  const Complex j{0.0, 1.0};
  const std::size_t d = static_cast<std::size_t>(p.delay_slots);

  for (std::size_t t = 0; t < in.n_slots(); ++t) {
    for (Pol pol : {Pol::H, Pol::V}) {
      const Complex a = in.amp(t, Port::A, pol);
      const Complex b = in.amp(t, Port::B, pol);
      if (a == Complex{} && b == Complex{}) continue;
      const double g = t_ins * (pol == Pol::V ? t_pdl : 1.0);
      const Complex arm_short = (ci * a + j * (xi * b)) * t_short;
      const Complex arm_long = (j * (xi * a) + ci * b) * long_phase[pol_index(pol)];
      out.amp(t, Port::A, pol) += j * (xo * arm_short) * g;
      out.amp(t, Port::B, pol) += co * arm_short * g;
      out.amp(t + d, Port::A, pol) += co * arm_long * g;
      out.amp(t + d, Port::B, pol) += j * (xo * arm_long) * g;
    }
  }
  return out;
}

/// Per-(slot, port) detection probabilities, |amp|^2 summed over polarization.
inline std::vector<std::array<double, 2>> slot_probabilities(const TimeBinState& st) {
  std::vector<std::array<double, 2>> table(st.n_slots());
  for (std::size_t s = 0; s < st.n_slots(); ++s)
    table[s] = {st.slot_probability(s, Port::A), st.slot_probability(s, Port::B)};
  return table;
}

}  // namespace timebin
