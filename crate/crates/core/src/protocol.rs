//! The experimental sequence for one atom: injection from the fountain,
//! photon-counting trigger, capture, alternating cooling and probe intervals,
//! qualification of probe intervals and the transmission-based exit time.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Recorder, 
    AxialHistogram, DriveSettings, HeatingBudget, Integrator, ParticleState, Trajectory, TrapNoiseProcess,
};
use crate::error::{Error, Result};
use crate::physics::{
    effective_atom_detuning, resonant_transmission, signed_coupling_at, steady_field, PhysicalParams, Vec3,
};
use crate::units::mk_to_joule;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub bin_time: f64,
    pub threshold_rel: f64,
    pub quantum_efficiency: f64,
    pub use_shot_noise: bool,
    /// Consecutive bins below threshold required to fire.
    pub consecutive_bins: u32,
    /// Give up on an injected atom after this long without a trigger.
    pub max_fly_time: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            bin_time: 10e-6,
            threshold_rel: 0.3,
            quantum_efficiency: 0.32,
            use_shot_noise: true,
            consecutive_bins: 3,
            max_fly_time: 5e-3,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_time > 0.0) {
            return Err(Error::invalid("bin_time", "must be > 0"));
        }
        if !(self.threshold_rel > 0.0 && self.threshold_rel < 1.0) {
            return Err(Error::invalid("threshold_rel", "must lie in (0, 1)"));
        }
        if !(self.quantum_efficiency > 0.0 && self.quantum_efficiency <= 1.0) {
            return Err(Error::invalid("quantum_efficiency", "must lie in (0, 1]"));
        }
        if self.consecutive_bins == 0 {
            return Err(Error::invalid("consecutive_bins", "must be >= 1"));
        }
        if !(self.max_fly_time > 0.0) {
            return Err(Error::invalid("max_fly_time", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub cooling_duration: f64,
    pub probe_duration: f64,
    pub probe_delta_c: f64,
    pub trap_depth_guide: f64,
    pub trap_depth_hold: f64,
    pub qualification_threshold: f64,
    pub exit_threshold: f64,
    pub trigger: TriggerConfig,
    pub max_run_time: f64,
    pub eta_trigger: f64,
    pub eta_cooling: f64,
    pub eta_probe: f64,
    /// When false the probe intervals are dark.
    pub probe_enabled: bool,
    pub sigma_eps: f64,
    pub tau_noise: f64,
    /// Injections attempted per task before giving up on a trigger.
    pub max_attempts: u32,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let p = PhysicalParams::default();
        let eta = 0.118 * (p.kappa + p.gamma);
        ProtocolConfig {
            cooling_duration: 500e-6,
            probe_duration: 100e-6,
            probe_delta_c: 0.0,
            trap_depth_guide: mk_to_joule(0.4),
            trap_depth_hold: mk_to_joule(1.6),
            qualification_threshold: 0.02,
            exit_threshold: 0.8,
            trigger: TriggerConfig::default(),
            max_run_time: 20e-3,
            eta_trigger: eta,
            eta_cooling: eta,
            eta_probe: eta,
            probe_enabled: true,
            sigma_eps: 0.0,
            tau_noise: 1e-6,
            max_attempts: 2000,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        self.trigger.validate()?;
        if !(self.cooling_duration > 0.0 && self.probe_duration > 0.0 && self.max_run_time > 0.0) {
            return Err(Error::invalid("durations", "cooling, probe and run durations must be > 0"));
        }
        if !(0.0 < self.qualification_threshold
            && self.qualification_threshold < self.exit_threshold
            && self.exit_threshold < 1.0)
        {
            return Err(Error::invalid("thresholds", "need 0 < qualification < exit < 1"));
        }
        if !(self.trap_depth_guide >= 0.0 && self.trap_depth_hold >= 0.0) {
            return Err(Error::invalid("trap_depth", "must be >= 0"));
        }
        if !(self.eta_trigger > 0.0) {
            return Err(Error::invalid("eta_trigger", "trigger needs a nonzero drive"));
        }
        if !(self.eta_cooling >= 0.0 && self.eta_probe >= 0.0) {
            return Err(Error::invalid("eta", "must be >= 0"));
        }
        if !self.probe_delta_c.is_finite() {
            return Err(Error::invalid("probe_delta_c", "must be finite"));
        }
        if self.max_attempts == 0 {
            return Err(Error::invalid("max_attempts", "must be >= 1"));
        }
        TrapNoiseProcess::new(self.sigma_eps, self.tau_noise)?;
        Ok(())
    }

    fn noise(&self) -> TrapNoiseProcess {
        TrapNoiseProcess::new(self.sigma_eps, self.tau_noise).expect("validated noise parameters")
    }

    fn cooling_drive(&self) -> DriveSettings {
        DriveSettings::new(0.0, self.eta_cooling)
    }

    fn probe_drive(&self) -> DriveSettings {
        DriveSettings { delta_c: self.probe_delta_c, eta: self.eta_probe, enabled: self.probe_enabled }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Cooling,
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub kind: IntervalKind,
    /// Start time after the trigger (s).
    pub start: f64,
    pub duration: f64,
    pub delta_c: f64,
    /// Mean |a|² normalized to the empty cavity driven on resonance.
    pub mean_transmission_rel: f64,
    pub mean_coupling: f64,
    pub qualified: bool,
    pub atom_present: bool,
    /// Time the atom spent in the trap during this interval (s).
    pub exposure: f64,
    pub max_excitation: f64,
    pub budget: HeatingBudget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Vec<u64>>,
}

impl IntervalRecord {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomRunResult {
    pub schema_version: u32,
    pub atom_index: u64,
    pub probe_delta_c: f64,
    pub triggered: bool,
    /// Injections needed until one triggered.
    pub attempts: u32,
    pub intervals: Vec<IntervalRecord>,
    pub exit_time: f64,
    /// Time of the dynamical loss after the trigger, if it happened.
    pub loss_time: Option<f64>,
    pub heating_budget: HeatingBudget,
    pub loss_during_probe: bool,
    pub stark_at_antinode: f64,
    pub trap_depth_hold: f64,
    /// Integration steps spent on this atom, failed injections included.
    #[serde(default)]
    pub steps: u64,
}

impl AtomRunResult {
    pub fn probe_intervals(&self) -> impl Iterator<Item = &IntervalRecord> {
        self.intervals.iter().filter(|r| r.kind == IntervalKind::Probe)
    }
}

/// Fountain injection below the mode, guided trap active.
pub fn sample_initial_atom<R: Rng + ?Sized>(rng: &mut R, params: &PhysicalParams) -> ParticleState {
    let lp = params.lambda_probe;
    let w0 = params.waist;
    let x = rng.random_range(-5.0 * lp..5.0 * lp);
    let z = rng.random_range(-0.5 * w0..0.5 * w0);
    let thermal = Normal::new(0.0, 0.01).expect("valid sigma");
    let vx = thermal.sample(rng);
    let vy = rng.random_range(0.03..0.10);
    let vz = thermal.sample(rng);
    ParticleState {
        t: 0.0,
        r: Vec3::new(x, -2.0 * w0, z),
        p: Vec3::new(vx, vy, vz) * params.atom_mass,
        field: Default::default(),
    }
}

/// Mean detected counts for a given intracavity photon number.
pub fn expected_counts(mean_photon_number: f64, kappa: f64, quantum_efficiency: f64, bin_time: f64) -> f64 {
    quantum_efficiency * 2.0 * kappa * mean_photon_number * bin_time
}

pub fn detect_counts<R: Rng + ?Sized>(
    mean_photon_number: f64,
    kappa: f64,
    trigger: &TriggerConfig,
    rng: &mut R,
) -> u64 {
    let mean = expected_counts(mean_photon_number, kappa, trigger.quantum_efficiency, trigger.bin_time);
    if mean <= 0.0 {
        return 0;
    }
    if trigger.use_shot_noise {
        Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
    } else {
        mean.round() as u64
    }
}

#[derive(Debug, Clone)]
pub struct TriggerOutcome {
    pub triggered: bool,
    /// Time since injection when the phase ended.
    pub elapsed: f64,
    pub trajectory: Trajectory,
}

/// Starts a trajectory with the field at its local steady state.
pub fn start_trajectory<R: Rng + ?Sized>(
    mut state: ParticleState,
    cfg: &ProtocolConfig,
    params: &PhysicalParams,
    rng: &mut R,
) -> Trajectory {
    let g = signed_coupling_at(&state.r, params);
    let da = effective_atom_detuning(&state.r, cfg.trap_depth_guide, 0.0, params);
    state.field = steady_field(g, 0.0, da, cfg.eta_trigger, params);
    Trajectory::new(state, cfg.noise(), rng)
}

/// Runs the guide phase bin by bin until the count rate drops below threshold.
pub fn run_trigger_phase<R: Rng + ?Sized>(
    integ: &Integrator,
    cfg: &ProtocolConfig,
    mut traj: Trajectory,
    rng: &mut R,
) -> Result<TriggerOutcome> {
    let params = &integ.params;
    let trig = &cfg.trigger;
    let drive = DriveSettings::new(0.0, cfg.eta_trigger);
    let empty_photons = (cfg.eta_trigger / params.kappa).powi(2);
    let empty_counts = expected_counts(empty_photons, params.kappa, trig.quantum_efficiency, trig.bin_time);
    let bin_steps = integ.config.steps_for(trig.bin_time).max(1);
    let max_bins = (trig.max_fly_time / trig.bin_time).ceil() as u64;
    let t_start = traj.state.t;
    let mut streak = 0;
    for _ in 0..max_bins {
        let s = integ.simulate_segment(&mut traj, bin_steps, &drive, cfg.trap_depth_guide, rng, None)?;
        if s.exited {
            break;
        }
        let counts = detect_counts(s.mean_transmission * empty_photons, params.kappa, trig, rng);
        if (counts as f64) < trig.threshold_rel * empty_counts {
            streak += 1;
            if streak >= trig.consecutive_bins {
                traj.invalidate();
                return Ok(TriggerOutcome { triggered: true, elapsed: traj.state.t - t_start, trajectory: traj });
            }
        } else {
            streak = 0;
        }
    }
    Ok(TriggerOutcome { triggered: false, elapsed: traj.state.t - t_start, trajectory: traj })
}

/// End of the last cooling interval whose mean transmission is below the exit threshold.
pub fn exit_time_from_records(intervals: &[IntervalRecord], exit_threshold: f64) -> f64 {
    intervals
        .iter()
        .filter(|r| r.kind == IntervalKind::Cooling && r.mean_transmission_rel < exit_threshold)
        .map(IntervalRecord::end)
        .next_back()
        .unwrap_or(0.0)
}

/// Marks probe intervals whose two neighbouring cooling intervals are both below threshold.
pub fn qualify_intervals(intervals: &mut [IntervalRecord], threshold: f64) {
    let n = intervals.len();
    for i in 0..n {
        if intervals[i].kind != IntervalKind::Probe {
            continue;
        }
        let ok = |j: usize| intervals[j].kind == IntervalKind::Cooling && intervals[j].mean_transmission_rel < threshold;
        intervals[i].qualified = i > 0 && i + 1 < n && ok(i - 1) && ok(i + 1);
    }
}

fn empty_transmission(delta_c: f64, params: &PhysicalParams) -> f64 {
    resonant_transmission(0.0, delta_c, 0.0, params)
}

/// Alternates cooling and probe intervals from the trigger until loss or the run time limit.
pub fn run_trapping_sequence<R: Rng + ?Sized>(
    integ: &Integrator,
    cfg: &ProtocolConfig,
    traj: &mut Trajectory,
    rng: &mut R,
    mut recorder: Option<&mut Recorder<'_>>,
) -> Result<(Vec<IntervalRecord>, Option<f64>, bool)> {
    let params = &integ.params;
    let dt = integ.config.dt;
    let cool_steps = integ.config.steps_for(cfg.cooling_duration).max(1);
    let probe_steps = integ.config.steps_for(cfg.probe_duration).max(1);
    let max_steps = integ.config.steps_for(cfg.max_run_time);
    let depth = cfg.trap_depth_hold;

    let mut intervals = Vec::new();
    let mut start_step = 0u64;
    let mut kind = IntervalKind::Cooling;
    let mut loss_time = None;
    let mut loss_during_probe = false;

    while start_step + if kind == IntervalKind::Cooling { cool_steps } else { probe_steps } <= max_steps {
        let (steps, drive) = match kind {
            IntervalKind::Cooling => (cool_steps, cfg.cooling_drive()),
            IntervalKind::Probe => (probe_steps, cfg.probe_drive()),
        };
        let s = integ.simulate_segment(traj, steps, &drive, depth, rng, recorder.as_deref_mut())?;
        let absent = (steps - s.steps) as f64;
        let frac = s.steps as f64 / steps as f64;
        let mean_t = (s.mean_transmission * s.steps as f64 + empty_transmission(drive.delta_c, params) * absent)
            / steps as f64;
        intervals.push(IntervalRecord {
            kind,
            start: start_step as f64 * dt,
            duration: steps as f64 * dt,
            delta_c: drive.delta_c,
            mean_transmission_rel: mean_t.clamp(0.0, 1.0),
            mean_coupling: s.mean_coupling * frac,
            qualified: false,
            atom_present: true,
            exposure: s.steps as f64 * dt,
            max_excitation: s.max_excitation,
            budget: s.budget,
            histogram: (kind == IntervalKind::Probe).then(|| s.histogram.counts.clone()),
        });
        start_step += steps;
        if s.exited {
            loss_time = Some((start_step - steps + s.steps) as f64 * dt);
            loss_during_probe = kind == IntervalKind::Probe;
            // The cooling interval after a lost probe interval sees the empty cavity.
            if loss_during_probe && start_step + cool_steps <= max_steps {
                intervals.push(IntervalRecord {
                    kind: IntervalKind::Cooling,
                    start: start_step as f64 * dt,
                    duration: cool_steps as f64 * dt,
                    delta_c: 0.0,
                    mean_transmission_rel: 1.0,
                    mean_coupling: 0.0,
                    qualified: false,
                    atom_present: false,
                    exposure: 0.0,
                    max_excitation: 0.0,
                    budget: HeatingBudget::default(),
                    histogram: None,
                });
            }
            break;
        }
        kind = match kind {
            IntervalKind::Cooling => IntervalKind::Probe,
            IntervalKind::Probe => IntervalKind::Cooling,
        };
    }
    qualify_intervals(&mut intervals, cfg.qualification_threshold);
    Ok((intervals, loss_time, loss_during_probe))
}

/// Injects atoms until one triggers, then runs the trapping sequence.
pub fn run_atom<R: Rng + ?Sized>(
    integ: &Integrator,
    cfg: &ProtocolConfig,
    atom_index: u64,
    rng: &mut R,
) -> Result<AtomRunResult> {
    run_atom_recorded(integ, cfg, atom_index, rng, None)
}

/// As [`run_atom`], passing the recorder to the trapping sequence. Recording
/// does not touch the random stream.
pub fn run_atom_recorded<R: Rng + ?Sized>(
    integ: &Integrator,
    cfg: &ProtocolConfig,
    atom_index: u64,
    rng: &mut R,
    mut recorder: Option<&mut Recorder<'_>>,
) -> Result<AtomRunResult> {
    cfg.validate()?;
    let params = &integ.params;
    let mut result = AtomRunResult {
        schema_version: SCHEMA_VERSION,
        atom_index,
        probe_delta_c: cfg.probe_delta_c,
        triggered: false,
        attempts: 0,
        intervals: Vec::new(),
        exit_time: 0.0,
        loss_time: None,
        heating_budget: HeatingBudget::default(),
        loss_during_probe: false,
        stark_at_antinode: params.peak_stark_shift(cfg.trap_depth_hold),
        trap_depth_hold: cfg.trap_depth_hold,
        steps: 0,
    };
    for attempt in 1..=cfg.max_attempts {
        result.attempts = attempt;
        let start = start_trajectory(sample_initial_atom(rng, params), cfg, params, rng);
        let outcome = run_trigger_phase(integ, cfg, start, rng)?;
        if !outcome.triggered {
            result.steps += outcome.trajectory.step_count;
            continue;
        }
        let mut traj = outcome.trajectory;
        let before = traj.budget;
        let (intervals, loss_time, loss_during_probe) = run_trapping_sequence(integ, cfg, &mut traj, rng, recorder.as_deref_mut())?;
        result.triggered = true;
        result.exit_time = exit_time_from_records(&intervals, cfg.exit_threshold);
        result.intervals = intervals;
        result.loss_time = loss_time;
        result.loss_during_probe = loss_during_probe;
        result.heating_budget = traj.budget.delta_since(&before);
        result.steps += traj.step_count;
        break;
    }
    Ok(result)
}

/// Folded axial histogram accumulated over selected probe intervals.
pub fn merged_histogram<'a>(records: impl Iterator<Item = &'a IntervalRecord>) -> AxialHistogram {
    let mut h = AxialHistogram::default();
    for r in records {
        if let Some(c) = &r.histogram {
            h.merge(&AxialHistogram { counts: c.clone() });
        }
    }
    h
}
