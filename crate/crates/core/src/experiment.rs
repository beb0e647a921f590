//! Ensembles over (probe detuning, trap depth, atom), storage time and calibration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::dynamics::Integrator;
use crate::error::{Error, Result};
use crate::physics::{effective_atom_detuning, sample_modes, steady_field, PhysicalParams, Vec3};
use crate::protocol::{run_atom, AtomRunResult};
use crate::units::{angular_to_mhz, mhz_to_angular, mk_to_joule};

/// Largest tolerated fraction of failed trajectories.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream per task. Depends only on the master seed and the task key,
/// never on scheduling.
pub fn task_rng(seed: u64, delta_c: f64, trap_depth: f64, atom_index: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(splitmix(delta_c.to_bits()) ^ trap_depth.to_bits()) ^ atom_index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    /// Probe detunings, rad/s.
    pub detunings: Vec<f64>,
    /// Hold depths, J.
    pub depths: Vec<f64>,
    pub atoms: u64,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn from_config(cfg: &SimConfig) -> Self {
        EnsembleSpec { detunings: cfg.detunings(), depths: cfg.depths(), atoms: cfg.atoms, seed: cfg.seed }
    }

    pub fn task_count(&self) -> usize {
        self.detunings.len() * self.depths.len() * self.atoms as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTask {
    pub delta_c: f64,
    pub trap_depth_hold: f64,
    pub atom_index: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct EnsembleOutput {
    pub runs: Vec<AtomRunResult>,
    pub failures: Vec<FailedTask>,
}

impl EnsembleOutput {
    pub fn total_steps(&self) -> u64 {
        self.runs.iter().map(|r| r.steps).sum()
    }
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))
}

/// Runs every (depth, detuning, atom) task. Trajectories that leave the model's
/// validity domain are recorded and dropped; more than 1% of them is an error.
pub fn run_ensemble(cfg: &SimConfig, spec: &EnsembleSpec, workers: usize) -> Result<EnsembleOutput> {
    cfg.validate()?;
    if spec.atoms == 0 || spec.detunings.is_empty() || spec.depths.is_empty() {
        return Err(Error::invalid("atoms", "ensemble needs at least one atom, detuning and depth"));
    }
    let integ = Integrator::new(cfg.physical_params(), cfg.integrator_config(spec.seed))?;
    let mut tasks = Vec::with_capacity(spec.task_count());
    for &depth in &spec.depths {
        for &dc in &spec.detunings {
            for i in 0..spec.atoms {
                tasks.push((depth, dc, i));
            }
        }
    }
    let pool = thread_pool(workers)?;
    let outcomes: Vec<Result<AtomRunResult>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(depth, dc, i)| {
                let proto = cfg.protocol_config(dc, depth);
                let mut rng = task_rng(spec.seed, dc, depth, i);
                run_atom(&integ, &proto, i, &mut rng)
            })
            .collect()
    });

    let mut out = EnsembleOutput::default();
    for (&(depth, dc, i), res) in tasks.iter().zip(outcomes) {
        match res {
            Ok(r) => out.runs.push(r),
            Err(e @ Error::ModelValidity { .. }) => out.failures.push(FailedTask {
                delta_c: dc,
                trap_depth_hold: depth,
                atom_index: i,
                message: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    if out.failures.len() as f64 > MAX_FAILURE_FRACTION * tasks.len() as f64 {
        return Err(Error::TooManyFailures { failed: out.failures.len(), total: tasks.len() });
    }
    Ok(out)
}

/// Exponential storage time from right-censored loss times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lifetime {
    /// Maximum-likelihood lifetime, s. Infinite when nothing was lost.
    pub tau: f64,
    pub std_error: f64,
    pub n_atoms: usize,
    pub n_lost: usize,
    /// Summed observation time, s.
    pub exposure: f64,
}

impl Lifetime {
    pub fn rate(&self) -> f64 {
        if self.exposure > 0.0 {
            self.n_lost as f64 / self.exposure
        } else {
            0.0
        }
    }
}

/// Uses triggered atoms only. Atoms still trapped at the end of their run are censored there.
pub fn storage_lifetime(runs: &[AtomRunResult]) -> Lifetime {
    let mut n_atoms = 0;
    let mut n_lost = 0;
    let mut exposure = 0.0;
    for r in runs.iter().filter(|r| r.triggered) {
        n_atoms += 1;
        match r.loss_time {
            Some(t) => {
                n_lost += 1;
                exposure += t;
            }
            None => exposure += r.intervals.last().map_or(0.0, |i| i.end()),
        }
    }
    let (tau, std_error) = if n_lost == 0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let tau = exposure / n_lost as f64;
        (tau, tau / (n_lost as f64).sqrt())
    };
    Lifetime { tau, std_error, n_atoms, n_lost, exposure }
}

/// Probe-free storage lifetime at a given trap-noise amplitude. The same seed
/// gives the same random streams for every amplitude.
pub fn probe_free_lifetime(cfg: &SimConfig, sigma_eps: f64, atoms: u64, workers: usize) -> Result<Lifetime> {
    let mut c = cfg.clone();
    c.sigma_eps = sigma_eps;
    c.probe_enabled = false;
    c.max_run_ms = cfg.calibration_run_ms;
    let spec = EnsembleSpec {
        detunings: vec![0.0],
        depths: vec![mk_to_joule(cfg.trap_depth_hold_mk)],
        atoms,
        seed: cfg.seed,
    };
    Ok(storage_lifetime(&run_ensemble(&c, &spec, workers)?.runs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub sigma_eps: f64,
    pub lifetime: Lifetime,
    /// Every (sigma_eps, lifetime) evaluated, in order.
    pub evaluations: Vec<(f64, Lifetime)>,
}

const SIGMA_START: f64 = 0.01;
const SIGMA_MIN: f64 = 1e-3;
const SIGMA_MAX: f64 = 0.64;
const MAX_REFINEMENTS: usize = 8;
/// Relative lifetime mismatch accepted by the search.
pub const SEARCH_TOLERANCE: f64 = 0.05;

/// Finds the trap-noise amplitude whose probe-free lifetime equals `target`.
///
/// Starts at `initial` (or a small default), brackets by doubling or halving,
/// then refines by false position on ln τ against ln σ. A start point that
/// already satisfies the target is returned unchanged. If refinement runs out,
/// the closest point is accepted when the target lies within its standard error.
pub fn calibrate_trap_noise_with<F>(target: f64, initial: f64, mut lifetime_at: F) -> Result<NoiseCalibration>
where
    F: FnMut(f64) -> Result<Lifetime>,
{
    if !(target > 0.0) {
        return Err(Error::invalid("target_lifetime", "must be > 0"));
    }
    let mut evaluations: Vec<(f64, Lifetime)> = Vec::new();
    let mut eval = |s: f64, ev: &mut Vec<(f64, Lifetime)>| -> Result<Lifetime> {
        let l = lifetime_at(s)?;
        ev.push((s, l));
        Ok(l)
    };
    let converged = |l: &Lifetime| l.tau.is_finite() && (l.tau / target - 1.0).abs() <= SEARCH_TOLERANCE;
    macro_rules! done {
        ($s:expr, $l:expr) => {
            return Ok(NoiseCalibration { sigma_eps: $s, lifetime: $l, evaluations })
        };
    }

    // lo keeps τ >= target, hi has τ < target.
    let start = if initial > 0.0 { initial.min(SIGMA_MAX) } else { SIGMA_START };
    let first = eval(start, &mut evaluations)?;
    if converged(&first) {
        done!(start, first);
    }
    let (mut lo, mut hi);
    if first.tau >= target {
        lo = (start, first);
        let mut s = start;
        hi = loop {
            s *= 2.0;
            if s > SIGMA_MAX {
                return Err(Error::Calibration(format!(
                    "no noise amplitude up to {SIGMA_MAX} shortens the lifetime to {target:.3e} s"
                )));
            }
            let l = eval(s, &mut evaluations)?;
            if converged(&l) {
                done!(s, l);
            }
            if l.tau < target {
                break (s, l);
            }
            lo = (s, l);
        };
    } else {
        hi = (start, first);
        let mut s = start;
        lo = loop {
            s *= 0.5;
            if s < SIGMA_MIN {
                let quiet = eval(0.0, &mut evaluations)?;
                if quiet.tau < target {
                    return Err(Error::Calibration(format!(
                        "noise-free lifetime {:.3e} s already below target {:.3e} s",
                        quiet.tau, target
                    )));
                }
                break (0.0, quiet);
            }
            let l = eval(s, &mut evaluations)?;
            if converged(&l) {
                done!(s, l);
            }
            if l.tau >= target {
                break (s, l);
            }
            hi = (s, l);
        };
    }

    let f = |l: &Lifetime| l.tau.ln() - target.ln();
    let mut best = hi;
    for _ in 0..MAX_REFINEMENTS {
        let next = if lo.0 > 0.0 && lo.1.tau.is_finite() {
            let (x0, x1) = (lo.0.ln(), hi.0.ln());
            let (f0, f1) = (f(&lo.1), f(&hi.1));
            let x = x1 - f1 * (x1 - x0) / (f1 - f0);
            // Keep the new point well inside the bracket.
            let margin = 0.1 * (x1 - x0);
            x.clamp(x0 + margin, x1 - margin).exp()
        } else if lo.0 > 0.0 {
            (lo.0 * hi.0).sqrt()
        } else {
            0.5 * hi.0
        };
        let l = eval(next, &mut evaluations)?;
        if (l.tau / target - 1.0).abs() < (best.1.tau / target - 1.0).abs() {
            best = (next, l);
        }
        if converged(&l) {
            done!(next, l);
        }
        if l.tau < target {
            hi = (next, l);
        } else {
            lo = (next, l);
        }
    }
    if (best.1.tau - target).abs() <= best.1.std_error {
        done!(best.0, best.1);
    }
    Err(Error::Calibration(format!(
        "trap-noise search did not converge; closest sigma_eps {:.4} gives {:.3e} s",
        best.0, best.1.tau
    )))
}

/// Probe-free calibration run. Lifetimes shorter than one cooling interval cannot
/// be resolved by the protocol and are rejected up front.
pub fn calibrate_trap_noise(cfg: &SimConfig, workers: usize) -> Result<NoiseCalibration> {
    let target = cfg.target_lifetime_ms * 1e-3;
    if target <= cfg.cooling_us * 1e-6 {
        return Err(Error::Calibration(format!(
            "target lifetime {target:.3e} s is unreachably short (one cooling interval is {:.3e} s)",
            cfg.cooling_us * 1e-6
        )));
    }
    if cfg.calibration_atoms == 0 {
        return Err(Error::invalid("calibration_atoms", "must be > 0"));
    }
    let atoms = cfg.calibration_atoms;
    calibrate_trap_noise_with(target, cfg.sigma_eps, |s| probe_free_lifetime(cfg, s, atoms, workers))
}

/// Steady-state excitation at the worst point over trap-well positions,
/// drive detunings and depths, for drive amplitude `eta`.
pub fn max_steady_excitation(params: &PhysicalParams, detunings: &[f64], depths: &[f64], eta: f64) -> f64 {
    const NX: usize = 121;
    const NR: usize = 13;
    let mut worst = 0.0f64;
    for ix in 0..NX {
        // One trap well around the mode centre.
        let x = params.lambda_trap * (ix as f64 / (NX - 1) as f64 - 0.5) * 0.5;
        for ir in 0..NR {
            let rho = params.waist * ir as f64 / (NR - 1) as f64;
            let r = Vec3::new(x, rho, 0.0);
            let g = sample_modes(&r, params).g;
            for &depth in depths {
                for &dc in detunings {
                    let da = effective_atom_detuning(&r, depth, dc, params);
                    worst = worst.max(steady_field(g, dc, da, eta, params).excitation());
                }
            }
        }
    }
    worst
}

/// Drive amplitude η/2π (MHz) that puts the worst steady-state excitation at
/// `excitation_target` over the configured sweep, cooling and trigger included.
pub fn calibrate_eta(cfg: &SimConfig) -> Result<f64> {
    let params = cfg.physical_params();
    let mut detunings = cfg.detunings();
    detunings.push(0.0);
    let mut depths = cfg.depths();
    depths.push(mk_to_joule(cfg.trap_depth_hold_mk));
    depths.push(mk_to_joule(cfg.trap_depth_guide_mk));
    let eta = cfg.eta();
    let worst = max_steady_excitation(&params, &detunings, &depths, eta);
    if !(worst > 0.0 && worst.is_finite()) {
        return Err(Error::Calibration(format!("degenerate excitation maximum {worst:e}")));
    }
    // Excitation scales as η² in the weak-drive model.
    Ok(angular_to_mhz(eta * (cfg.excitation_target / worst).sqrt()))
}

/// Largest excitation seen in any probe interval.
pub fn max_probe_excitation(runs: &[AtomRunResult]) -> f64 {
    runs.iter().flat_map(|r| r.probe_intervals()).map(|i| i.max_excitation).fold(0.0, f64::max)
}

const ETA_ITERATIONS: usize = 6;

/// Steady-state estimate, then lowered until a short simulated probe sweep over
/// the configured detunings and depths stays at or below the excitation target.
/// Field transients after each frequency switch overshoot the steady state.
/// Returns η/2π in MHz and the simulated maximum.
pub fn calibrate_eta_dynamic(cfg: &SimConfig, workers: usize) -> Result<(f64, f64)> {
    let mut c = cfg.clone();
    c.eta_mhz = calibrate_eta(cfg)?;
    c.eta_trigger_mhz = None;
    c.eta_probe_mhz = None;
    if cfg.eta_check_atoms == 0 {
        return Ok((c.eta_mhz, f64::NAN));
    }
    c.max_run_ms = cfg.eta_check_run_ms;
    // Noise-free, so the result does not depend on a previous noise calibration.
    c.sigma_eps = 0.0;
    let spec = EnsembleSpec { detunings: c.detunings(), depths: c.depths(), atoms: cfg.eta_check_atoms, seed: cfg.seed };
    let target = cfg.excitation_target;
    for _ in 0..ETA_ITERATIONS {
        let worst = max_probe_excitation(&run_ensemble(&c, &spec, workers)?.runs);
        if worst <= target {
            return Ok((c.eta_mhz, worst));
        }
        c.eta_mhz *= (target / worst).sqrt() * 0.99;
    }
    Err(Error::Calibration(format!(
        "simulated excitation stays above {target} after {ETA_ITERATIONS} reductions of eta"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub eta_mhz: f64,
    /// Largest probe-interval excitation in the check sweep.
    pub check_excitation: f64,
    pub noise: NoiseCalibration,
}

/// Both calibrations; returns the updated config.
pub fn calibrate(cfg: &SimConfig, workers: usize) -> Result<(SimConfig, Calibration)> {
    let mut out = cfg.clone();
    let (eta, check_excitation) = calibrate_eta_dynamic(cfg, workers)?;
    out.eta_mhz = eta;
    out.eta_trigger_mhz = None;
    out.eta_probe_mhz = None;
    let noise = calibrate_trap_noise(&out, workers)?;
    out.sigma_eps = noise.sigma_eps;
    Ok((out, Calibration { eta_mhz: eta, check_excitation, noise }))
}

/// Convenience for tests and tools: detunings in MHz to rad/s.
pub fn detunings_from_mhz(mhz: &[f64]) -> Vec<f64> {
    mhz.iter().map(|&d| mhz_to_angular(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::SCHEMA_VERSION;
    use crate::dynamics::HeatingBudget;

    fn run(loss: Option<f64>, end: f64) -> AtomRunResult {
        use crate::protocol::{IntervalKind, IntervalRecord};
        AtomRunResult {
            schema_version: SCHEMA_VERSION,
            atom_index: 0,
            probe_delta_c: 0.0,
            triggered: true,
            attempts: 1,
            intervals: vec![IntervalRecord {
                kind: IntervalKind::Cooling,
                start: 0.0,
                duration: end,
                delta_c: 0.0,
                mean_transmission_rel: 0.0,
                mean_coupling: 0.0,
                qualified: false,
                atom_present: true,
                exposure: end,
                max_excitation: 0.0,
                budget: HeatingBudget::default(),
                histogram: None,
            }],
            exit_time: 0.0,
            loss_time: loss,
            heating_budget: HeatingBudget::default(),
            loss_during_probe: false,
            stark_at_antinode: 0.0,
            trap_depth_hold: 0.0,
            steps: 0,
        }
    }

    #[test]
    fn task_streams_differ_and_repeat() {
        use rand::RngCore;
        let a = task_rng(1, 0.0, 1.0, 0).next_u64();
        assert_eq!(a, task_rng(1, 0.0, 1.0, 0).next_u64());
        assert_ne!(a, task_rng(1, 0.0, 1.0, 1).next_u64());
        assert_ne!(a, task_rng(1, -0.0, 1.0, 0).next_u64());
        assert_ne!(a, task_rng(2, 0.0, 1.0, 0).next_u64());
    }

    #[test]
    fn censored_lifetime() {
        let runs = vec![run(Some(0.01), 0.01), run(Some(0.03), 0.03), run(None, 0.06)];
        let l = storage_lifetime(&runs);
        assert_eq!(l.n_lost, 2);
        assert!((l.tau - 0.05).abs() < 1e-15);
        assert!(storage_lifetime(&[run(None, 0.02)]).tau.is_infinite());
    }

    fn model(target_sigma: f64) -> impl FnMut(f64) -> Result<Lifetime> {
        // τ = 0.03 s at target_sigma, falling as 1/σ².
        move |s: f64| {
            let tau = if s == 0.0 { f64::INFINITY } else { 0.03 * (target_sigma / s).powi(2) };
            Ok(Lifetime { tau, std_error: 0.0, n_atoms: 100, n_lost: 100, exposure: 0.0 })
        }
    }

    #[test]
    fn noise_search_finds_root() {
        for sig in [0.003, 0.013, 0.05, 0.2] {
            let c = calibrate_trap_noise_with(0.03, 0.0, model(sig)).unwrap();
            assert!((c.lifetime.tau / 0.03 - 1.0).abs() <= SEARCH_TOLERANCE, "{sig}: {c:?}");
            assert!(c.evaluations.len() < 16);
        }
    }

    #[test]
    fn converged_start_is_kept() {
        let c = calibrate_trap_noise_with(0.03, 0.013, model(0.013)).unwrap();
        assert_eq!(c.sigma_eps, 0.013);
        assert_eq!(c.evaluations.len(), 1);
        let c = calibrate_trap_noise_with(0.03, 0.3, model(0.013)).unwrap();
        assert!((c.lifetime.tau / 0.03 - 1.0).abs() <= SEARCH_TOLERANCE);
    }

    #[test]
    fn unreachable_target_fails_fast() {
        let mut cfg = SimConfig::default();
        cfg.target_lifetime_ms = 1e-3;
        assert!(matches!(calibrate_trap_noise(&cfg, 1), Err(Error::Calibration(_))));
    }

    #[test]
    fn noise_search_rejects_short_quiet_lifetime() {
        let f = |_s: f64| Ok(Lifetime { tau: 0.01, std_error: 0.0, n_atoms: 10, n_lost: 10, exposure: 0.1 });
        assert!(matches!(calibrate_trap_noise_with(0.03, 0.0, f), Err(Error::Calibration(_))));
    }

    #[test]
    fn noise_search_gives_up_when_noise_is_harmless() {
        let f = |_s: f64| Ok(Lifetime { tau: 1.0, std_error: 0.0, n_atoms: 10, n_lost: 1, exposure: 1.0 });
        assert!(matches!(calibrate_trap_noise_with(0.03, 0.0, f), Err(Error::Calibration(_))));
    }

    #[test]
    fn eta_calibration_hits_excitation_target() {
        let cfg = SimConfig::default();
        let eta = calibrate_eta(&cfg).unwrap();
        let mut c2 = cfg.clone();
        c2.eta_mhz = eta;
        let mut dets = c2.detunings();
        dets.push(0.0);
        let depths = [mk_to_joule(1.6), mk_to_joule(0.4)];
        let worst = max_steady_excitation(&c2.physical_params(), &dets, &depths, c2.eta());
        assert!((worst / cfg.excitation_target - 1.0).abs() < 1e-9);
    }
}
