//! Physical constants and the unit conversions used at the configuration boundary.
//!
//! Everything inside the simulator is SI. Configuration files and CLI flags
//! carry ordinary frequencies in MHz; the factor 2π is applied exactly once,
//! by [`mhz_to_angular`].

use std::f64::consts::PI;

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K).
pub const KB: f64 = 1.380_649e-23;
/// Atomic mass unit (kg).
pub const AMU: f64 = 1.660_539_066_60e-27;
/// Mass of ⁸⁵Rb in atomic mass units.
pub const RB85_MASS_AMU: f64 = 84.911_789_738;
/// Standard gravity (m/s²), acting along −y.
pub const GRAVITY: f64 = 9.81;

/// Ordinary frequency in MHz to angular frequency in rad/s.
#[inline]
pub fn mhz_to_angular(mhz: f64) -> f64 {
    2.0 * PI * mhz * 1e6
}

/// Angular frequency in rad/s to ordinary frequency in MHz.
#[inline]
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e6)
}

/// Temperature-equivalent energy: millikelvin to joules.
#[inline]
pub fn mk_to_joule(mk: f64) -> f64 {
    KB * mk * 1e-3
}

#[inline]
pub fn joule_to_mk(energy: f64) -> f64 {
    energy / (KB * 1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mhz_round_trip_is_tight() {
        for &f in &[0.0, 1.4, 3.0, 16.0, -35.0, 123.456] {
            let back = angular_to_mhz(mhz_to_angular(f));
            assert!((back - f).abs() <= 1e-12 * f.abs().max(1.0));
        }
    }

    #[test]
    fn two_pi_applied_once() {
        assert_eq!(mhz_to_angular(1.0), 2.0 * PI * 1e6);
        assert!((mhz_to_angular(16.0) - 1.005_309_649_148_734e8).abs() < 1.0);
    }

    #[test]
    fn millikelvin_round_trip() {
        let e = mk_to_joule(1.6);
        assert!((joule_to_mk(e) - 1.6).abs() < 1e-14);
    }
}
