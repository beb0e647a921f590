//! Mode geometry, coupling, Stark shift, weak-drive response and light forces.
//!
//! Conventions: the cavity axis is `x`, gravity acts along `−y`, `z` is the
//! remaining transverse direction. The probe and trap standing waves share an
//! antinode at the origin (the cavity centre). All rates (`gamma`, `kappa`)
//! are amplitude decay rates. Detunings are probe minus resonance:
//! `delta_c = ωp − ωc` and `delta_a = ωp − ωa`.
//!
//! `delta_a0` is the probe–atom detuning when the probe sits on the cavity
//! resonance and no trap light is present, so for a probe at `delta_c` the
//! effective atomic detuning is `delta_a0 + delta_c − stark_shift(r)`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{mhz_to_angular, mk_to_joule, AMU, HBAR, RB85_MASS_AMU};

pub type Vec3 = Vector3<f64>;

/// Excitation above which the weak-excitation treatment is rejected outright.
pub const EXCITATION_VALIDITY_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Peak atom–cavity coupling at the central antinode (rad/s).
    pub g0: f64,
    /// Atomic dipole amplitude decay rate (rad/s).
    pub gamma: f64,
    /// Cavity field amplitude decay rate (rad/s).
    pub kappa: f64,
    pub lambda_probe: f64,
    pub lambda_trap: f64,
    /// Mode waist shared by probe and trap modes (m).
    pub waist: f64,
    /// Mirror separation (m). Metadata only.
    pub cavity_length: f64,
    /// Cavity finesse. Metadata only.
    pub finesse: f64,
    pub atom_mass: f64,
    /// ωc − ωa of the bare atom, i.e. probe–atom detuning for a probe on cavity resonance (rad/s).
    pub delta_a0: f64,
    /// Peak Stark shift (rad/s) per unit peak trap depth expressed as depth/ħ.
    pub stark_per_depth: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            g0: mhz_to_angular(16.0),
            gamma: mhz_to_angular(3.0),
            kappa: mhz_to_angular(1.4),
            lambda_probe: 780.2e-9,
            lambda_trap: 785.3e-9,
            waist: 29e-6,
            cavity_length: 122e-6,
            finesse: 4.4e5,
            atom_mass: RB85_MASS_AMU * AMU,
            delta_a0: mhz_to_angular(35.0),
            stark_per_depth: default_stark_per_depth(),
        }
    }
}

/// Stark calibration: a 1.6 mK deep trap shifts the atom at the coincident
/// antinode by 2π × 35 MHz.
pub fn default_stark_per_depth() -> f64 {
    mhz_to_angular(35.0) / (mk_to_joule(1.6) / HBAR)
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("g0", self.g0),
            ("gamma", self.gamma),
            ("kappa", self.kappa),
            ("lambda_probe", self.lambda_probe),
            ("lambda_trap", self.lambda_trap),
            ("waist", self.waist),
            ("cavity_length", self.cavity_length),
            ("finesse", self.finesse),
            ("atom_mass", self.atom_mass),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.stark_per_depth.is_finite() && self.stark_per_depth >= 0.0) {
            return Err(Error::invalid("stark_per_depth", "must be finite and >= 0"));
        }
        if !self.delta_a0.is_finite() {
            return Err(Error::invalid("delta_a0", "must be finite"));
        }
        if !(self.g0 > self.gamma && self.g0 > self.kappa) {
            return Err(Error::invalid("g0", "strong coupling requires g0 > gamma and g0 > kappa"));
        }
        if self.lambda_trap <= self.lambda_probe {
            return Err(Error::invalid("lambda_trap", "trap must be red detuned (lambda_trap > lambda_probe)"));
        }
        Ok(())
    }

    pub fn k_probe(&self) -> f64 {
        2.0 * PI / self.lambda_probe
    }

    pub fn k_trap(&self) -> f64 {
        2.0 * PI / self.lambda_trap
    }

    /// Single-photon recoil momentum ħk of the probe light.
    pub fn recoil_momentum(&self) -> f64 {
        HBAR * self.k_probe()
    }

    /// Peak Stark shift (rad/s) produced by a trap of the given peak depth (J).
    pub fn peak_stark_shift(&self, trap_depth: f64) -> f64 {
        self.stark_per_depth * trap_depth / HBAR
    }

    /// Peak trap depth (J) that produces the given peak Stark shift (rad/s).
    pub fn depth_for_stark_shift(&self, stark: f64) -> f64 {
        stark * HBAR / self.stark_per_depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldState {
    /// Intracavity amplitude in √photon units.
    pub a: Complex64,
    /// Atomic lowering-operator expectation.
    pub sigma: Complex64,
}

impl FieldState {
    pub const ZERO: FieldState = FieldState { a: Complex64::new(0.0, 0.0), sigma: Complex64::new(0.0, 0.0) };

    pub fn photon_number(&self) -> f64 {
        self.a.norm_sqr()
    }

    pub fn excitation(&self) -> f64 {
        self.sigma.norm_sqr()
    }

    /// Re(a* σ), the factor multiplying −2ħ∇g in the dipole force.
    pub fn interaction_real(&self) -> f64 {
        (self.a.conj() * self.sigma).re
    }

    pub fn check_validity(&self) -> Result<()> {
        let e = self.excitation();
        if e > EXCITATION_VALIDITY_LIMIT || !e.is_finite() {
            return Err(Error::ModelValidity { excitation: e, limit: EXCITATION_VALIDITY_LIMIT });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateResponse {
    pub field: FieldState,
    /// |a|² / |a_empty(Δc)|²: transmission relative to the empty cavity at the
    /// same probe detuning. Equals 1 for g = 0; can exceed 1 off cavity resonance.
    pub transmission_rel: f64,
    /// |a|² / |a_empty(0)|²: transmission relative to the resonant empty cavity, in [0, 1].
    pub transmission_resonant: f64,
    pub photon_number: f64,
    pub excitation: f64,
}

/// Probe standing-wave mode function ψp(r); 1 at the central antinode.
pub fn probe_mode_value(r: &Vec3, params: &PhysicalParams) -> f64 {
    let rho2 = r.y * r.y + r.z * r.z;
    (params.k_probe() * r.x).cos() * (-rho2 / (params.waist * params.waist)).exp()
}

/// Normalized trap intensity, cos²(k_t x)·exp(−2ρ²/w₀²).
pub fn trap_mode_intensity(r: &Vec3, params: &PhysicalParams) -> f64 {
    let rho2 = r.y * r.y + r.z * r.z;
    let c = (params.k_trap() * r.x).cos();
    c * c * (-2.0 * rho2 / (params.waist * params.waist)).exp()
}

/// |g(r)|, the magnitude of the local coupling.
pub fn coupling_at(r: &Vec3, params: &PhysicalParams) -> f64 {
    params.g0 * probe_mode_value(r, params).abs()
}

/// g0·ψp(r) with its sign; the field equations and gradients use this.
pub fn signed_coupling_at(r: &Vec3, params: &PhysicalParams) -> f64 {
    params.g0 * probe_mode_value(r, params)
}

pub fn coupling_gradient(r: &Vec3, params: &PhysicalParams) -> Vec3 {
    let w2 = params.waist * params.waist;
    let rho2 = r.y * r.y + r.z * r.z;
    let k = params.k_probe();
    let (s, c) = (k * r.x).sin_cos();
    let gauss = (-rho2 / w2).exp();
    let g = params.g0;
    Vec3::new(
        -g * k * s * gauss,
        g * c * gauss * (-2.0 * r.y / w2),
        g * c * gauss * (-2.0 * r.z / w2),
    )
}

/// Position-dependent Stark shift of the atomic resonance (rad/s).
pub fn stark_shift_at(r: &Vec3, trap_depth_peak: f64, params: &PhysicalParams) -> f64 {
    params.peak_stark_shift(trap_depth_peak) * trap_mode_intensity(r, params)
}

/// Effective probe–atom detuning at `r` for a probe at cavity detuning `delta_c`.
pub fn effective_atom_detuning(r: &Vec3, trap_depth_peak: f64, delta_c: f64, params: &PhysicalParams) -> f64 {
    params.delta_a0 + delta_c - stark_shift_at(r, trap_depth_peak, params)
}

/// Steady-state amplitudes of the linear (weak-excitation) atom–cavity system.
/// Accepts a signed coupling.
pub fn steady_field(g: f64, delta_c: f64, delta_a_eff: f64, eta: f64, params: &PhysicalParams) -> FieldState {
    let cav = Complex64::new(params.kappa, -delta_c);
    let atom = Complex64::new(params.gamma, -delta_a_eff);
    let denom = cav * atom + g * g;
    let a = eta * atom / denom;
    let sigma = Complex64::new(0.0, -g) * a / atom;
    FieldState { a, sigma }
}

/// |a|²/|a_empty(Δc)|², independent of the drive strength.
pub fn relative_transmission(g: f64, delta_c: f64, delta_a_eff: f64, params: &PhysicalParams) -> f64 {
    let cav = Complex64::new(params.kappa, -delta_c);
    let atom = Complex64::new(params.gamma, -delta_a_eff);
    let empty = cav * atom;
    let denom = empty + g * g;
    empty.norm_sqr() / denom.norm_sqr()
}

/// |a|²/|a_empty(0)|², independent of the drive strength.
pub fn resonant_transmission(g: f64, delta_c: f64, delta_a_eff: f64, params: &PhysicalParams) -> f64 {
    let cav = Complex64::new(params.kappa, -delta_c);
    let atom = Complex64::new(params.gamma, -delta_a_eff);
    let denom = cav * atom + g * g;
    (params.kappa * params.kappa * atom.norm_sqr() / denom.norm_sqr()).min(1.0)
}

pub fn weak_drive_steady_state(
    g: f64,
    delta_c: f64,
    delta_a_eff: f64,
    eta: f64,
    params: &PhysicalParams,
) -> Result<SteadyStateResponse> {
    if !(eta >= 0.0) {
        return Err(Error::invalid("eta", "drive amplitude must be >= 0"));
    }
    if !(g >= 0.0) {
        return Err(Error::invalid("g", "coupling magnitude must be >= 0"));
    }
    let field = steady_field(g, delta_c, delta_a_eff, eta, params);
    field.check_validity()?;
    Ok(SteadyStateResponse {
        field,
        transmission_rel: relative_transmission(g, delta_c, delta_a_eff, params),
        transmission_resonant: resonant_transmission(g, delta_c, delta_a_eff, params),
        photon_number: field.photon_number(),
        excitation: field.excitation(),
    })
}

/// Normal-mode frequencies relative to the mean of the atomic and cavity
/// frequencies, for atom–cavity detuning `delta_ac = ωa_eff − ωc`.
pub fn dressed_mode_frequencies(g: f64, delta_ac: f64) -> (f64, f64) {
    let half = (g * g + 0.25 * delta_ac * delta_ac).sqrt();
    (-half, half)
}

/// Normal-mode positions in probe–cavity detuning coordinates.
pub fn dressed_mode_detunings(g: f64, delta_ac: f64) -> (f64, f64) {
    let (lo, hi) = dressed_mode_frequencies(g, delta_ac);
    (0.5 * delta_ac + lo, 0.5 * delta_ac + hi)
}

/// Dipole force of the probe field, −2ħ Re(a*σ) ∇g.
pub fn probe_dipole_force(r: &Vec3, field: &FieldState, params: &PhysicalParams) -> Vec3 {
    coupling_gradient(r, params) * (-2.0 * HBAR * field.interaction_real())
}

pub fn trap_potential(r: &Vec3, trap_depth_peak: f64, params: &PhysicalParams) -> f64 {
    -trap_depth_peak * trap_mode_intensity(r, params)
}

/// −∇U for U = −U0·I(r).
pub fn trap_force(r: &Vec3, trap_depth_peak: f64, params: &PhysicalParams) -> Vec3 {
    let w2 = params.waist * params.waist;
    let rho2 = r.y * r.y + r.z * r.z;
    let k = params.k_trap();
    let (s, c) = (k * r.x).sin_cos();
    let gauss = (-2.0 * rho2 / w2).exp();
    let u = trap_depth_peak;
    Vec3::new(
        -u * 2.0 * k * s * c * gauss,
        u * c * c * gauss * (-4.0 * r.y / w2),
        u * c * c * gauss * (-4.0 * r.z / w2),
    )
}

/// Spontaneous photon scattering rate 2γ|σ|².
pub fn scattering_rate(field: &FieldState, params: &PhysicalParams) -> f64 {
    2.0 * params.gamma * field.excitation()
}

/// Axial momentum diffusion from dipole-force fluctuations,
/// 2ħ²|∇g|²|a|²γ/(γ² + Δa²).
pub fn dipole_diffusion(r: &Vec3, field: &FieldState, delta_a_eff: f64, params: &PhysicalParams) -> f64 {
    let grad = coupling_gradient(r, params);
    dipole_diffusion_from_gradient(grad.norm_squared(), field.photon_number(), delta_a_eff, params)
}

#[inline]
pub(crate) fn dipole_diffusion_from_gradient(grad_g_sq: f64, photons: f64, delta_a_eff: f64, params: &PhysicalParams) -> f64 {
    let gamma = params.gamma;
    2.0 * HBAR * HBAR * grad_g_sq * photons * gamma / (gamma * gamma + delta_a_eff * delta_a_eff)
}

/// Critical photon and atom numbers (n0, N0).
pub fn critical_numbers(params: &PhysicalParams) -> (f64, f64) {
    let g2 = params.g0 * params.g0;
    (params.gamma * params.gamma / (2.0 * g2), 2.0 * params.gamma * params.kappa / g2)
}

/// Everything the integrator needs from the mode geometry at one position.
#[derive(Debug, Clone, Copy)]
pub struct ModeSample {
    pub g: f64,
    pub grad_g: Vec3,
    pub intensity: f64,
    pub grad_intensity: Vec3,
}

/// Single-pass evaluation of both modes and their gradients.
#[inline]
pub fn sample_modes(r: &Vec3, params: &PhysicalParams) -> ModeSample {
    let inv_w2 = 1.0 / (params.waist * params.waist);
    let rho2 = r.y * r.y + r.z * r.z;
    let kp = params.k_probe();
    let kt = params.k_trap();
    let (sp, cp) = (kp * r.x).sin_cos();
    let (st, ct) = (kt * r.x).sin_cos();
    let gauss = (-rho2 * inv_w2).exp();
    let gauss2 = gauss * gauss;
    let g = params.g0 * cp * gauss;
    let intensity = ct * ct * gauss2;
    ModeSample {
        g,
        grad_g: Vec3::new(-params.g0 * kp * sp * gauss, -2.0 * r.y * inv_w2 * g, -2.0 * r.z * inv_w2 * g),
        intensity,
        grad_intensity: Vec3::new(
            -2.0 * kt * st * ct * gauss2,
            -4.0 * r.y * inv_w2 * intensity,
            -4.0 * r.z * inv_w2 * intensity,
        ),
    }
}
