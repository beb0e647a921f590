//! Ensemble statistics over [`AtomRunResult`]s: spectra, loss rates,
//! coupling and position distributions, heating shares, peak fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{AxialHistogram, HeatingBudget, AXIAL_BINS};
use crate::error::{Error, Result};
use crate::protocol::{AtomRunResult, IntervalKind, IntervalRecord};
use crate::units::{joule_to_mk, mhz_to_angular};

/// Minimum number of position samples for a localization width.
pub const MIN_POSITION_SAMPLES: u64 = 1000;

/// Trap power giving the reference depth (nW per 1.6 mK).
const POWER_PER_REFERENCE_DEPTH_NW: f64 = 280.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub delta_c: f64,
    pub trap_depth_hold: f64,
    pub trap_power_nw: f64,
    pub mean_value: f64,
    pub std_error: f64,
    pub n_intervals: usize,
    pub n_atoms: usize,
}

pub fn trap_power_nw(depth: f64) -> f64 {
    POWER_PER_REFERENCE_DEPTH_NW * joule_to_mk(depth) / 1.6
}

/// Runs grouped by (depth, Δc), sorted by depth then Δc.
fn groups(runs: &[AtomRunResult]) -> Vec<((f64, f64), Vec<&AtomRunResult>)> {
    let mut sorted: Vec<&AtomRunResult> = runs.iter().collect();
    sorted.sort_by(|a, b| {
        a.trap_depth_hold
            .total_cmp(&b.trap_depth_hold)
            .then(a.probe_delta_c.total_cmp(&b.probe_delta_c))
            .then(a.atom_index.cmp(&b.atom_index))
    });
    let mut out: Vec<((f64, f64), Vec<&AtomRunResult>)> = Vec::new();
    for r in sorted {
        let key = (r.trap_depth_hold, r.probe_delta_c);
        match out.last_mut() {
            Some((k, v)) if k.0.to_bits() == key.0.to_bits() && k.1.to_bits() == key.1.to_bits() => v.push(r),
            _ => out.push((key, vec![r])),
        }
    }
    out
}

/// Probe intervals with the atom in the trap, optionally only qualified ones.
fn selected_probes(run: &AtomRunResult, qualified_only: bool) -> impl Iterator<Item = &IntervalRecord> {
    run.intervals
        .iter()
        .filter(move |r| r.kind == IntervalKind::Probe && r.atom_present && (!qualified_only || r.qualified))
}

fn mean_and_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean probe-interval transmission per (Δc, depth).
pub fn transmission_spectrum(runs: &[AtomRunResult], qualified_only: bool) -> Vec<SpectrumPoint> {
    let mut out = Vec::new();
    for ((depth, dc), group) in groups(runs) {
        let mut values = Vec::new();
        let mut atoms = 0;
        for run in &group {
            let before = values.len();
            values.extend(selected_probes(run, qualified_only).map(|r| r.mean_transmission_rel));
            if values.len() > before {
                atoms += 1;
            }
        }
        if values.is_empty() {
            continue;
        }
        let (mean, err) = mean_and_error(&values);
        out.push(SpectrumPoint {
            delta_c: dc,
            trap_depth_hold: depth,
            trap_power_nw: trap_power_nw(depth),
            mean_value: mean,
            std_error: err,
            n_intervals: values.len(),
            n_atoms: atoms,
        });
    }
    out
}

/// Probe-induced loss rate: losses per unit probe exposure minus the
/// loss hazard measured during cooling intervals.
pub fn loss_rate_spectrum(runs: &[AtomRunResult]) -> Vec<SpectrumPoint> {
    let mut out = Vec::new();
    for ((depth, dc), group) in groups(runs) {
        let (mut probe_losses, mut cool_losses) = (0.0, 0.0);
        let (mut probe_exposure, mut cool_exposure) = (0.0, 0.0);
        let mut n_intervals = 0;
        let mut atoms = 0;
        for run in group.iter().filter(|r| r.triggered) {
            atoms += 1;
            for r in &run.intervals {
                match r.kind {
                    IntervalKind::Probe => {
                        probe_exposure += r.exposure;
                        if r.exposure > 0.0 {
                            n_intervals += 1;
                        }
                    }
                    IntervalKind::Cooling => cool_exposure += r.exposure,
                }
            }
            if run.loss_time.is_some() {
                if run.loss_during_probe {
                    probe_losses += 1.0;
                } else {
                    cool_losses += 1.0;
                }
            }
        }
        if n_intervals == 0 {
            continue;
        }
        let probe_rate = probe_losses / probe_exposure;
        let (base, base_var) = if cool_exposure > 0.0 {
            (cool_losses / cool_exposure, cool_losses / (cool_exposure * cool_exposure))
        } else {
            (0.0, 0.0)
        };
        // A zero count still carries an uncertainty of about one event.
        let probe_var = probe_losses.max(1.0) / (probe_exposure * probe_exposure);
        out.push(SpectrumPoint {
            delta_c: dc,
            trap_depth_hold: depth,
            trap_power_nw: trap_power_nw(depth),
            mean_value: probe_rate - base,
            std_error: (probe_var + base_var).sqrt(),
            n_intervals,
            n_atoms: atoms,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingHistogram {
    /// Bin width (rad/s); bin i covers [i·w, (i+1)·w).
    pub bin_width: f64,
    /// Probability density (per rad/s); Σ density·bin_width = 1.
    pub density: Vec<f64>,
    pub mean: f64,
    pub n_intervals: usize,
}

impl CouplingHistogram {
    pub fn mass_below(&self, g: f64) -> f64 {
        let mut mass = 0.0;
        for (i, d) in self.density.iter().enumerate() {
            let lo = i as f64 * self.bin_width;
            let hi = lo + self.bin_width;
            if hi <= g {
                mass += d * self.bin_width;
            } else if lo < g {
                mass += d * (g - lo);
            }
        }
        mass
    }

    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width
    }
}

pub fn default_coupling_bin() -> f64 {
    mhz_to_angular(0.5)
}

/// Distribution of interval-mean couplings over probe intervals.
pub fn coupling_distribution(runs: &[AtomRunResult], qualified_only: bool, bin_width: f64) -> Result<CouplingHistogram> {
    if !(bin_width > 0.0) {
        return Err(Error::invalid("bin_width", "must be > 0"));
    }
    let values: Vec<f64> = runs.iter().flat_map(|r| selected_probes(r, qualified_only).map(|i| i.mean_coupling)).collect();
    if values.is_empty() {
        return Err(Error::InsufficientSamples { got: 0, needed: 1 });
    }
    let nbins = values.iter().map(|g| (g / bin_width).floor() as usize + 1).max().unwrap_or(1);
    let mut counts = vec![0u64; nbins];
    for g in &values {
        counts[(g / bin_width).floor() as usize] += 1;
    }
    let n = values.len() as f64;
    Ok(CouplingHistogram {
        bin_width,
        density: counts.iter().map(|&c| c as f64 / (n * bin_width)).collect(),
        mean: values.iter().sum::<f64>() / n,
        n_intervals: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub fwhm: f64,
    pub n_samples: u64,
    pub bin_width: f64,
    /// Bin centres relative to the antinode (m) and normalized density (1/m).
    pub centres: Vec<f64>,
    pub density: Vec<f64>,
}

/// FWHM of a sampled peak, interpolating linearly between bin centres.
pub fn histogram_fwhm(counts: &[u64], bin_width: f64) -> f64 {
    let (imax, &max) = counts.iter().enumerate().max_by_key(|(_, c)| **c).expect("non-empty");
    if max == 0 {
        return 0.0;
    }
    let half = max as f64 / 2.0;
    let mut left = 0.0;
    let mut i = imax;
    while i > 0 {
        let lo = counts[i - 1] as f64;
        if lo < half {
            let hi = counts[i] as f64;
            left = (imax - i) as f64 + (hi - half) / (hi - lo);
            break;
        }
        i -= 1;
        left = (imax - i) as f64;
    }
    let mut right = 0.0;
    let mut j = imax;
    while j + 1 < counts.len() {
        let lo = counts[j + 1] as f64;
        if lo < half {
            let hi = counts[j] as f64;
            right = (j - imax) as f64 + (hi - half) / (hi - lo);
            break;
        }
        j += 1;
        right = (j - imax) as f64;
    }
    (left + right) * bin_width
}

/// Width of the folded axial position distribution over probe intervals.
pub fn axial_localization(runs: &[AtomRunResult], qualified_only: bool, lambda_trap: f64) -> Result<Localization> {
    let mut h = AxialHistogram::default();
    for run in runs {
        for r in selected_probes(run, qualified_only) {
            if let Some(c) = &r.histogram {
                h.merge(&AxialHistogram { counts: c.clone() });
            }
        }
    }
    let n = h.total();
    if n < MIN_POSITION_SAMPLES {
        return Err(Error::InsufficientSamples { got: n, needed: MIN_POSITION_SAMPLES });
    }
    let w = AxialHistogram::bin_width(lambda_trap);
    let centres = (0..AXIAL_BINS).map(|i| -0.25 * lambda_trap + (i as f64 + 0.5) * w).collect();
    let density = h.counts.iter().map(|&c| c as f64 / (n as f64 * w)).collect();
    Ok(Localization { fwhm: histogram_fwhm(&h.counts, w), n_samples: n, bin_width: w, centres, density })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub delta_c: f64,
    pub trap_depth_hold: f64,
    pub budget: HeatingBudget,
    /// Share of spontaneous recoil in the probe-light heating; None without probe heating.
    pub spont_share: Option<f64>,
    pub dipole_share: Option<f64>,
    pub n_intervals: usize,
}

/// Probe-light heating split into its two channels, per (Δc, depth).
pub fn heating_attribution(runs: &[AtomRunResult]) -> Vec<Attribution> {
    let mut out = Vec::new();
    for ((depth, dc), group) in groups(runs) {
        let mut budget = HeatingBudget::default();
        let mut n = 0;
        for run in group {
            for r in run.intervals.iter().filter(|r| r.kind == IntervalKind::Probe && r.exposure > 0.0) {
                budget.accumulate(&r.budget);
                n += 1;
            }
        }
        let light = budget.spont_recoil + budget.dipole_fluct;
        let (spont_share, dipole_share) = if light > 0.0 {
            (Some(budget.spont_recoil / light), Some(budget.dipole_fluct / light))
        } else {
            (None, None)
        };
        out.push(Attribution { delta_c: dc, trap_depth_hold: depth, budget, spont_share, dipole_share, n_intervals: n });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub center: f64,
    pub fwhm: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakFitResult {
    pub left: Peak,
    pub right: Peak,
    pub background: f64,
    /// RMS residual relative to the largest data value.
    pub residual: f64,
}

impl PeakFitResult {
    pub fn splitting(&self) -> f64 {
        self.right.center - self.left.center
    }
}

/// Relative RMS residual above which a fit is rejected.
const FIT_RESIDUAL_LIMIT: f64 = 0.15;

fn lorentz(x: f64, c: f64, w: f64) -> f64 {
    let u = 2.0 * (x - c) / w;
    1.0 / (1.0 + u * u)
}

fn model(p: &[f64], x: f64) -> f64 {
    p[0] + p[1] * lorentz(x, p[2], p[3]) + p[4] * lorentz(x, p[5], p[6])
}

fn jacobian_row(p: &[f64], x: f64) -> [f64; 7] {
    let mut row = [0.0; 7];
    row[0] = 1.0;
    for base in [1usize, 4] {
        let (a, c, w) = (p[base], p[base + 1], p[base + 2]);
        let u = 2.0 * (x - c) / w;
        let l = 1.0 / (1.0 + u * u);
        // dL/du = −2u·L²
        let dl_du = -2.0 * u * l * l;
        row[base] = l;
        row[base + 1] = a * dl_du * (-2.0 / w);
        row[base + 2] = a * dl_du * (-u / w);
    }
    row
}

/// Least-squares double Lorentzian on a flat background.
pub fn fit_normal_modes(spectrum: &[SpectrumPoint]) -> Result<PeakFitResult> {
    let mut pts: Vec<(f64, f64)> = spectrum.iter().map(|s| (s.delta_c, s.mean_value)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    fit_double_lorentzian(&pts)
}

/// Keeps heights non-negative and widths at least `w_min`.
fn project(p: &mut [f64], w_min: f64) {
    for b in [1, 4] {
        p[b] = p[b].max(0.0);
        p[b + 2] = p[b + 2].abs().max(w_min);
    }
}

/// Projected Levenberg-Marquardt. Widths are bounded below by the median
/// sample spacing: narrower peaks are not resolved by the data.
pub fn fit_double_lorentzian(points: &[(f64, f64)]) -> Result<PeakFitResult> {
    if points.len() < 8 {
        return Err(Error::FitFailure(format!("need at least 8 points, got {}", points.len())));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();

    let mut maxima: Vec<usize> = (0..n)
        .filter(|&i| {
            let y = pts[i].1;
            (i == 0 || y > pts[i - 1].1) && (i + 1 == n || y >= pts[i + 1].1)
        })
        .collect();
    maxima.sort_by(|&a, &b| pts[b].1.total_cmp(&pts[a].1));
    if maxima.len() < 2 {
        return Err(Error::FitFailure("fewer than two local maxima".into()));
    }
    let (mut i1, mut i2) = (maxima[0], maxima[1]);
    if i1 > i2 {
        std::mem::swap(&mut i1, &mut i2);
    }
    let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let ymax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let span = pts[n - 1].0 - pts[0].0;
    let sep = pts[i2].0 - pts[i1].0;
    let mut gaps: Vec<f64> = pts.windows(2).map(|w| w[1].0 - w[0].0).collect();
    gaps.sort_by(f64::total_cmp);
    let w_min = gaps[gaps.len() / 2];
    let w0 = (0.5 * sep).max(span / n as f64).max(w_min);
    let mut p = vec![ymin, pts[i1].1 - ymin, pts[i1].0, w0, pts[i2].1 - ymin, pts[i2].0, w0];
    project(&mut p, w_min);

    let cost = |p: &[f64]| pts.iter().map(|&(x, y)| (model(p, x) - y).powi(2)).sum::<f64>();
    let mut c = cost(&p);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut jtj = DMatrix::<f64>::zeros(7, 7);
        let mut jtr = DVector::<f64>::zeros(7);
        for &(x, y) in &pts {
            let row = jacobian_row(&p, x);
            let r = y - model(&p, x);
            for a in 0..7 {
                jtr[a] += row[a] * r;
                for b in 0..7 {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut m = jtj.clone();
            for d in 0..7 {
                m[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let Some(step) = m.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial, w_min);
            let ct = cost(&trial);
            if ct.is_finite() && ct < c {
                let rel = (c - ct) / c.max(1e-300);
                p = trial;
                c = ct;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let mut left = Peak { center: p[2], fwhm: p[3].abs(), height: p[1] };
    let mut right = Peak { center: p[5], fwhm: p[6].abs(), height: p[4] };
    if left.center > right.center {
        std::mem::swap(&mut left, &mut right);
    }
    let residual = (c / n as f64).sqrt() / ymax.abs().max(1e-300);
    if !p.iter().all(|v| v.is_finite()) || residual > FIT_RESIDUAL_LIMIT {
        return Err(Error::FitFailure(format!("residual {residual:.3} too large")));
    }
    if left.height <= 0.0 || right.height <= 0.0 || left.fwhm == 0.0 || right.fwhm == 0.0 {
        return Err(Error::FitFailure("degenerate peak".into()));
    }
    if right.center - left.center < 0.25 * (left.fwhm + right.fwhm) {
        return Err(Error::FitFailure("peaks merged".into()));
    }
    Ok(PeakFitResult { left, right, background: p[0], residual })
}
