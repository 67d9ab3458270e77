#pragma once

#include <cmath>

#include "timebin/errors.hpp"
#include "timebin/optics.hpp"
#include "timebin/polarization.hpp"
#include "timebin/units.hpp"

namespace timebin {

/// Fiber link between the two interferometers.
///
/// Both time bins of a pulse pair traverse the fiber within nanoseconds of
/// each other, far below the polarization fluctuation time scale, so a single
/// Jones unitary applies to every slot of a state.
struct FiberParams {
  double length_km = 150.0;
  double atten_dB_per_km = 0.22;
  double dispersion_ps_nm_km = 17.0;
  bool dcf_enabled = true;  // dispersion-compensating fiber in the link
  JonesMatrix pol_unitary = JonesMatrix::identity();
  double pol_drift_time_s = 1e-3;  // informational; >> pulse separation
};

inline void validate(const FiberParams& f) {
  if (!(f.length_km >= 0.0) || !std::isfinite(f.length_km))
    throw InvalidParameter("FiberParams: invalid length_km");
  if (!(f.atten_dB_per_km >= 0.0) || !std::isfinite(f.atten_dB_per_km))
    throw InvalidParameter("FiberParams: invalid atten_dB_per_km");
  if (!std::isfinite(f.dispersion_ps_nm_km))
    throw InvalidParameter("FiberParams: invalid dispersion_ps_nm_km");
  if (!(f.pol_drift_time_s > 0.0) || !std::isfinite(f.pol_drift_time_s))
    throw InvalidParameter("FiberParams: invalid pol_drift_time_s");
  if (!f.pol_unitary.is_unitary(1e-10))
    throw InvalidParameter("FiberParams: pol_unitary is not unitary to 1e-10");
}

/// Attenuates the intensity scale by 10^(-alpha L / 10) and applies the common
/// polarization unitary to every slot. Slot structure and relative phases are
/// untouched.
inline TimeBinState fiber_transmit(const TimeBinState& in, const FiberParams& f) {
  validate(f);
  TimeBinState out = in;
  out.set_mean_photons_total(in.mean_photons_total() *
                             db_loss_to_power(f.atten_dB_per_km * f.length_km));
  for (std::size_t s = 0; s < out.n_slots(); ++s) {
    for (Port port : {Port::A, Port::B}) {
      Complex h = out.amp(s, port, Pol::H);
      Complex v = out.amp(s, port, Pol::V);
      f.pol_unitary.apply(h, v);
      out.amp(s, port, Pol::H) = h;
      out.amp(s, port, Pol::V) = v;
    }
  }
  return out;
}

/// Arrival-time spread after the link: the source pulse width and the
/// chromatic broadening D * L * dlambda added in quadrature. The DCF removes
/// the chromatic term.
inline double arrival_time_sigma_ps(const FiberParams& f, const SourceParams& src) {
  validate(f);
  validate(src);
  const double sigma_in = fwhm_to_sigma(src.pulse_fwhm_ps);
  const double d_eff = f.dcf_enabled ? 0.0 : f.dispersion_ps_nm_km;
  const double chrom = d_eff * f.length_km * src.spectral_width_nm;
  return std::sqrt(sigma_in * sigma_in + chrom * chrom);
}

/// Fraction of a centered Gaussian arrival-time distribution that falls inside
/// the detector gate; monotone decreasing in sigma, 1 in the delta-pulse limit.
inline double window_capture_fraction(double sigma_ps, double gate_width_ps) {
  if (!(sigma_ps >= 0.0) || !std::isfinite(sigma_ps))
    throw InvalidParameter("window_capture_fraction: sigma must be >= 0");
  if (!(gate_width_ps > 0.0) || !std::isfinite(gate_width_ps))
    throw InvalidParameter("window_capture_fraction: gate width must be > 0");
  if (sigma_ps == 0.0) return 1.0;
  return std::erf(gate_width_ps / (2.0 * std::sqrt(2.0) * sigma_ps));
}

}  // namespace timebin
