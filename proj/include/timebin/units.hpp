#pragma once

#include <cmath>

namespace timebin {

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Attenuation in dB -> linear power transmission factor (<= 1 for loss_db >= 0).
inline double db_loss_to_power(double loss_db) { return std::pow(10.0, -loss_db / 10.0); }

/// Attenuation in dB -> linear field-amplitude factor.
inline double db_loss_to_amplitude(double loss_db) { return std::pow(10.0, -loss_db / 20.0); }

/// Gaussian FWHM -> standard deviation (FWHM = 2 sqrt(2 ln 2) sigma).
inline double fwhm_to_sigma(double fwhm) { return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0))); }

}  // namespace timebin
