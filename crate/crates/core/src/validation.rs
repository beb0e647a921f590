//! Grid comparison of the weak-drive model against the master-equation oracle.

use num_complex::Complex64;

use crate::error::Result;
use crate::oracle::{observables, steady_state, OracleConfig};
use crate::physics::{steady_field, PhysicalParams};

/// Values below this magnitude are treated as zero when forming relative errors.
const ZERO_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub g: f64,
    pub delta_c: f64,
    pub delta_a_eff: f64,
    pub eta: f64,
    pub analytic_photons: f64,
    pub oracle_photons: f64,
    pub analytic_excitation: f64,
    pub oracle_excitation: f64,
    pub analytic_interaction: f64,
    pub oracle_interaction: f64,
    pub err_mean_a: f64,
    pub err_mean_sigma: f64,
    pub err_photons: f64,
    pub err_excitation: f64,
    pub err_interaction: f64,
}

impl ComparisonRow {
    pub fn max_error(&self) -> f64 {
        [self.err_mean_a, self.err_mean_sigma, self.err_photons, self.err_excitation, self.err_interaction]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn rel(x: f64, reference: f64) -> f64 {
    let d = (x - reference).abs();
    if d == 0.0 {
        0.0
    } else {
        d / reference.abs().max(ZERO_FLOOR)
    }
}

fn rel_c(x: Complex64, reference: Complex64) -> f64 {
    let d = (x - reference).norm();
    if d == 0.0 {
        0.0
    } else {
        d / reference.norm().max(ZERO_FLOOR)
    }
}

pub fn compare_point(
    g: f64,
    delta_c: f64,
    delta_a_eff: f64,
    eta: f64,
    n_max: usize,
    params: &PhysicalParams,
) -> Result<ComparisonRow> {
    let cfg = OracleConfig { n_max, g, delta_c, delta_a_eff, eta, gamma: params.gamma, kappa: params.kappa };
    let rho = steady_state(&cfg)?;
    let o = observables(&rho);
    let f = steady_field(g, delta_c, delta_a_eff, eta, params);
    Ok(ComparisonRow {
        g,
        delta_c,
        delta_a_eff,
        eta,
        analytic_photons: f.photon_number(),
        oracle_photons: o.photon_number,
        analytic_excitation: f.excitation(),
        oracle_excitation: o.excitation,
        analytic_interaction: f.interaction_real(),
        oracle_interaction: o.interaction_real,
        err_mean_a: rel_c(f.a, o.mean_a),
        err_mean_sigma: rel_c(f.sigma, o.mean_sigma),
        err_photons: rel(f.photon_number(), o.photon_number),
        err_excitation: rel(f.excitation(), o.excitation),
        err_interaction: rel(f.interaction_real(), o.interaction_real),
    })
}

/// Evenly spaced grid including both endpoints.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Full (g, Δc, Δa) comparison grid.
pub fn comparison_grid(
    couplings: &[f64],
    detunings_c: &[f64],
    detunings_a: &[f64],
    eta: f64,
    n_max: usize,
    params: &PhysicalParams,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::with_capacity(couplings.len() * detunings_c.len() * detunings_a.len());
    for &g in couplings {
        for &dc in detunings_c {
            for &da in detunings_a {
                rows.push(compare_point(g, dc, da, eta, n_max, params)?);
            }
        }
    }
    Ok(rows)
}
