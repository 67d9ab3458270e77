#pragma once

#include <cmath>
#include <complex>
#include <cstdint>

#include "timebin/random.hpp"

namespace timebin {

using Complex = std::complex<double>;

/// 2x2 Jones matrix acting on the (H, V) polarization vector.
struct JonesMatrix {
  Complex m00{1.0, 0.0}, m01{0.0, 0.0};
  Complex m10{0.0, 0.0}, m11{1.0, 0.0};

  static JonesMatrix identity() { return {}; }

  void apply(Complex& h, Complex& v) const {
    const Complex h2 = m00 * h + m01 * v;
    const Complex v2 = m10 * h + m11 * v;
    h = h2;
    v = v2;
  }

  /// Max abs deviation of U† U from the identity.
  double unitarity_defect() const {
    const Complex g00 = std::conj(m00) * m00 + std::conj(m10) * m10;
    const Complex g01 = std::conj(m00) * m01 + std::conj(m10) * m11;
    const Complex g11 = std::conj(m01) * m01 + std::conj(m11) * m11;
    double d = std::abs(g00 - Complex{1.0, 0.0});
    d = std::max(d, std::abs(g01));
    d = std::max(d, std::abs(g11 - Complex{1.0, 0.0}));
    return d;
  }

  bool is_unitary(double tol = 1e-10) const { return unitarity_defect() <= tol; }
};

/// Haar-distributed SU(2) element (uniform random polarization rotation).
inline JonesMatrix haar_random_unitary(GateRng& rng) {
  double q0, q1, q2, q3, n2;
  do {
    q0 = rng.normal();
    q1 = rng.normal();
    q2 = rng.normal();
    q3 = rng.normal();
    n2 = q0 * q0 + q1 * q1 + q2 * q2 + q3 * q3;
  } while (n2 < 1e-12);
  const double inv = 1.0 / std::sqrt(n2);
  const Complex a{q0 * inv, q1 * inv};
  const Complex b{q2 * inv, q3 * inv};
  JonesMatrix u;
  u.m00 = a;
  u.m01 = -std::conj(b);
  u.m10 = b;
  u.m11 = std::conj(a);
  return u;
}

/// Deterministic unitary keyed by a seed; seed 0 means the identity.
inline JonesMatrix polarization_unitary_from_seed(std::uint64_t seed) {
  if (seed == 0) return JonesMatrix::identity();
  GateRng rng(seed, 0x706f6cull);  // fixed stream tag for polarization draws
  return haar_random_unitary(rng);
}

}  // namespace timebin
