//! Time evolution of one atom: exact linear field propagation, velocity-Verlet
//! motion, stochastic momentum kicks and a fluctuating trap depth.
//!
//! One step of length `dt` composes
//!
//! 1. half kick with the cached deterministic force,
//! 2. drift,
//! 3. field propagation over `dt` with coupling and Stark shift frozen at
//!    their mid-step values (the exact 2×2 matrix exponential),
//! 4. second half kick with the force re-evaluated at the new position and field,
//! 5. spontaneous-emission recoils and axial dipole-force noise,
//! 6. trap-depth resampling when the noise hold time elapses.
//!
//! Energy put into the motion is booked per channel in a [`HeatingBudget`].

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{
    dipole_diffusion_from_gradient, sample_modes, FieldState, ModeSample, PhysicalParams, Vec3,
};
use crate::units::{GRAVITY, HBAR};

/// Upper bound on dt·max(g0, κ, γ). Detunings enter the field propagator exactly
/// and are not part of the bound.
pub const DT_GUARD: f64 = 0.5;

/// Number of bins of the folded axial position histogram over one trap period.
pub const AXIAL_BINS: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub t: f64,
    pub r: Vec3,
    pub p: Vec3,
    pub field: FieldState,
}

impl ParticleState {
    pub fn at_rest(r: Vec3) -> Self {
        ParticleState { t: 0.0, r, p: Vec3::zeros(), field: FieldState::ZERO }
    }

    pub fn kinetic_energy(&self, mass: f64) -> f64 {
        self.p.norm_squared() / (2.0 * mass)
    }

    /// Kinetic plus trap potential energy (gravity excluded).
    pub fn trap_energy(&self, depth: f64, params: &PhysicalParams) -> f64 {
        self.kinetic_energy(params.atom_mass) - depth * sample_modes(&self.r, params).intensity
    }

    /// Kinetic, trap and gravitational energy; the quantity the heating budget balances.
    pub fn mechanical_energy(&self, depth: f64, params: &PhysicalParams) -> f64 {
        self.trap_energy(depth, params) + params.atom_mass * GRAVITY * self.r.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveSettings {
    pub delta_c: f64,
    pub eta: f64,
    pub enabled: bool,
}

impl DriveSettings {
    pub fn new(delta_c: f64, eta: f64) -> Self {
        DriveSettings { delta_c, eta, enabled: true }
    }

    pub fn off() -> Self {
        DriveSettings { delta_c: 0.0, eta: 0.0, enabled: false }
    }

    pub fn amplitude(&self) -> f64 {
        if self.enabled {
            self.eta
        } else {
            0.0
        }
    }
}

/// Piecewise-constant fractional fluctuation of the trap depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapNoiseProcess {
    pub sigma_eps: f64,
    pub tau_noise: f64,
    pub current_eps: f64,
    steps_left: u64,
}

impl TrapNoiseProcess {
    pub fn new(sigma_eps: f64, tau_noise: f64) -> Result<Self> {
        if !(sigma_eps >= 0.0 && sigma_eps.is_finite()) {
            return Err(Error::invalid("sigma_eps", "must be finite and >= 0"));
        }
        if !(tau_noise > 0.0 && tau_noise.is_finite()) {
            return Err(Error::invalid("tau_noise", "must be finite and > 0"));
        }
        Ok(TrapNoiseProcess { sigma_eps, tau_noise, current_eps: 0.0, steps_left: 0 })
    }

    pub fn hold_steps(&self, dt: f64) -> u64 {
        ((self.tau_noise / dt).round() as u64).max(1)
    }

    /// Instantaneous depth (1 + ε)·U0, clamped at zero.
    pub fn depth(&self, nominal: f64) -> f64 {
        (nominal * (1.0 + self.current_eps)).max(0.0)
    }

    /// Advances the process by one step; returns true when ε was resampled.
    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> bool {
        if self.steps_left == 0 {
            self.steps_left = self.hold_steps(dt);
            if self.sigma_eps > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                self.current_eps = self.sigma_eps * z;
                return true;
            }
        }
        self.steps_left -= 1;
        false
    }
}

/// Free-function form of [`TrapNoiseProcess::step`].
pub fn trap_noise_step<R: Rng + ?Sized>(proc: &TrapNoiseProcess, dt: f64, rng: &mut R) -> TrapNoiseProcess {
    let mut next = *proc;
    next.step(dt, rng);
    next
}

/// Cumulative energy (J) delivered to the atomic motion, per channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HeatingBudget {
    /// Σ |Δp|²/2m over spontaneous-emission recoils.
    pub spont_recoil: f64,
    /// Σ Δp_x²/2m over dipole-fluctuation kicks.
    pub dipole_fluct: f64,
    /// Work done on the atom by depth fluctuations. Grows on average, but
    /// individual resamplings can remove energy.
    pub trap_noise: f64,
    /// Work done by the mean probe dipole force (negative when it cools).
    pub probe_work: f64,
    /// Σ p·Δp/m over all kicks; zero mean, closes the energy balance.
    pub kick_cross: f64,
}

impl HeatingBudget {
    pub fn total_input(&self) -> f64 {
        self.spont_recoil + self.dipole_fluct + self.trap_noise + self.probe_work + self.kick_cross
    }

    pub fn delta_since(&self, earlier: &HeatingBudget) -> HeatingBudget {
        HeatingBudget {
            spont_recoil: self.spont_recoil - earlier.spont_recoil,
            dipole_fluct: self.dipole_fluct - earlier.dipole_fluct,
            trap_noise: self.trap_noise - earlier.trap_noise,
            probe_work: self.probe_work - earlier.probe_work,
            kick_cross: self.kick_cross - earlier.kick_cross,
        }
    }

    pub fn accumulate(&mut self, other: &HeatingBudget) {
        self.spont_recoil += other.spont_recoil;
        self.dipole_fluct += other.dipole_fluct;
        self.trap_noise += other.trap_noise;
        self.probe_work += other.probe_work;
        self.kick_cross += other.kick_cross;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    /// Steps between position-histogram samples and trajectory records.
    pub record_stride: u64,
    pub rng_seed: u64,
    /// Excitation above which a trajectory is rejected as outside the model.
    pub excitation_limit: f64,
    /// Spontaneous recoils and dipole-fluctuation kicks; off gives the mean-force dynamics.
    pub stochastic: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { dt: 1e-9, record_stride: 50, rng_seed: 0, excitation_limit: 0.05, stochastic: true }
    }
}

impl IntegratorConfig {
    pub fn validate(&self, params: &PhysicalParams) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        let fastest = params.g0.max(params.kappa).max(params.gamma);
        if self.dt * fastest > DT_GUARD {
            return Err(Error::invalid(
                "dt",
                format!("dt·max(g0, kappa, gamma) = {:.3} exceeds {DT_GUARD}", self.dt * fastest),
            ));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record_stride", "must be >= 1"));
        }
        if !(self.excitation_limit > 0.0 && self.excitation_limit <= crate::physics::EXCITATION_VALIDITY_LIMIT) {
            return Err(Error::invalid("excitation_limit", "must lie in (0, 0.5]"));
        }
        Ok(())
    }

    /// Number of whole steps covering `duration`.
    pub fn steps_for(&self, duration: f64) -> u64 {
        (duration / self.dt).round() as u64
    }
}

/// Exact propagation of the linear field equations
///
/// ȧ = (iΔc − κ)a − i g σ + η,  σ̇ = (iΔa − γ)σ − i g a
///
/// over `dt` with constant coefficients.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn propagate_field(
    field: &FieldState,
    g: f64,
    delta_a: f64,
    delta_c: f64,
    eta: f64,
    params: &PhysicalParams,
    dt: f64,
) -> FieldState {
    let m11 = Complex64::new(-params.kappa, delta_c);
    let m22 = Complex64::new(-params.gamma, delta_a);
    let off = Complex64::new(0.0, -g);
    let mean = 0.5 * (m11 + m22);
    let d = 0.5 * (m11 - m22);
    let s = csqrt(d * d + off * off);
    let z = s * dt;
    let (ch, sh_over_s) = if z.norm_sqr() < 1e-8 {
        let z2 = z * z;
        (1.0 + z2 * 0.5, dt * (1.0 + z2 / 6.0))
    } else {
        // exp(±z) share one sin_cos.
        let (sin, cos) = z.im.sin_cos();
        let ep = z.re.exp();
        let em = 1.0 / ep;
        let plus = Complex64::new(ep * cos, ep * sin);
        let minus = Complex64::new(em * cos, -em * sin);
        (0.5 * (plus + minus), 0.5 * (plus - minus) / s)
    };
    let em = (mean * dt).exp();
    let e11 = em * (ch + sh_over_s * d);
    let e22 = em * (ch - sh_over_s * d);
    let e12 = em * sh_over_s * off;

    let (a_ss, s_ss) = if eta != 0.0 {
        let det = m11 * m22 - off * off;
        (-eta * m22 / det, eta * off / det)
    } else {
        (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
    };
    let da = field.a - a_ss;
    let ds = field.sigma - s_ss;
    FieldState { a: a_ss + e11 * da + e12 * ds, sigma: s_ss + e12 * da + e22 * ds }
}

/// Principal square root without the polar round trip.
#[inline]
fn csqrt(w: Complex64) -> Complex64 {
    let r = w.norm();
    if r == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    if w.re >= 0.0 {
        let re = (0.5 * (r + w.re)).sqrt();
        Complex64::new(re, 0.5 * w.im / re)
    } else {
        let im = (0.5 * (r - w.re)).sqrt();
        let im = if w.im < 0.0 { -im } else { im };
        Complex64::new(0.5 * w.im / im, im)
    }
}

/// Advances the field of `state` by `dt` with the atom frozen at `state.r`.
pub fn field_update(
    state: &ParticleState,
    drive: &DriveSettings,
    trap_depth: f64,
    dt: f64,
    params: &PhysicalParams,
) -> Result<FieldState> {
    let m = sample_modes(&state.r, params);
    let da = params.delta_a0 + drive.delta_c - params.peak_stark_shift(trap_depth) * m.intensity;
    let f = propagate_field(&state.field, m.g, da, drive.delta_c, drive.amplitude(), params, dt);
    f.check_validity()?;
    Ok(f)
}

/// Poisson sample by inversion for the small means met per step.
#[inline]
fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean > 30.0 {
        return Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0);
    }
    let u: f64 = rng.random();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0u64;
    while u > cdf && k < 200 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

#[inline]
fn recoil<R: Rng + ?Sized>(p: &mut Vec3, params: &PhysicalParams, budget: &mut HeatingBudget, rng: &mut R) {
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let dp = Vec3::new(dir[0], dir[1], dir[2]) * params.recoil_momentum();
    budget.spont_recoil += dp.norm_squared() / (2.0 * params.atom_mass);
    budget.kick_cross += p.dot(&dp) / params.atom_mass;
    *p += dp;
}

#[inline]
fn dipole_kick<R: Rng + ?Sized>(
    p: &mut Vec3,
    photons: f64,
    grad_g_sq: f64,
    delta_a: f64,
    dt: f64,
    params: &PhysicalParams,
    budget: &mut HeatingBudget,
    rng: &mut R,
) {
    if photons > 0.0 && grad_g_sq > 0.0 {
        let diff = dipole_diffusion_from_gradient(grad_g_sq, photons, delta_a, params);
        let z: f64 = StandardNormal.sample(rng);
        let dpx = (2.0 * diff * dt).sqrt() * z;
        let mass = params.atom_mass;
        budget.dipole_fluct += dpx * dpx / (2.0 * mass);
        budget.kick_cross += p.x * dpx / mass;
        p.x += dpx;
    }
}

/// Public form of one stochastic kick at the current position and field.
pub fn stochastic_kick<R: Rng + ?Sized>(
    state: &ParticleState,
    trap_depth: f64,
    drive: &DriveSettings,
    dt: f64,
    params: &PhysicalParams,
    budget: &mut HeatingBudget,
    rng: &mut R,
) -> Vec3 {
    let m = sample_modes(&state.r, params);
    let da = params.delta_a0 + drive.delta_c - params.peak_stark_shift(trap_depth) * m.intensity;
    let mut p = state.p;
    let n = sample_poisson(2.0 * params.gamma * state.field.excitation() * dt, rng);
    for _ in 0..n {
        recoil(&mut p, params, budget, rng);
    }
    dipole_kick(&mut p, state.field.photon_number(), m.grad_g.norm_squared(), da, dt, params, budget, rng);
    p
}

/// Folded axial displacement histogram over one trap well, [−λt/4, λt/4).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxialHistogram {
    pub counts: Vec<u64>,
}

impl Default for AxialHistogram {
    fn default() -> Self {
        AxialHistogram { counts: vec![0; AXIAL_BINS] }
    }
}

impl AxialHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    pub fn merge(&mut self, other: &AxialHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn bin_width(lambda_trap: f64) -> f64 {
        0.5 * lambda_trap / AXIAL_BINS as f64
    }

    /// Displacement from the nearest trap antinode.
    pub fn fold(x: f64, lambda_trap: f64) -> f64 {
        let period = 0.5 * lambda_trap;
        x - period * (x / period).round()
    }

    pub fn record(&mut self, x: f64, lambda_trap: f64) {
        let folded = Self::fold(x, lambda_trap);
        let idx = ((folded / (0.5 * lambda_trap) + 0.5) * AXIAL_BINS as f64).floor() as isize;
        let idx = idx.clamp(0, AXIAL_BINS as isize - 1) as usize;
        self.counts[idx] += 1;
    }
}

/// Time-averaged observables of one simulated segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSummary {
    /// Steps actually integrated (fewer than requested when the atom exits).
    pub steps: u64,
    /// Mean of |a|²/|a_empty(Δc = 0)|² over the integrated steps.
    pub mean_transmission: f64,
    pub mean_coupling: f64,
    pub max_excitation: f64,
    pub budget: HeatingBudget,
    pub histogram: AxialHistogram,
    pub exited: bool,
}

/// Everything that persists between segments of one trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub state: ParticleState,
    pub noise: TrapNoiseProcess,
    pub budget: HeatingBudget,
    /// Steps taken since the trajectory's time origin.
    pub step_count: u64,
    pub t0: f64,
    /// Remaining integrated emission rate before the next spontaneous recoil.
    emission_clock: f64,
    cache: Option<ForceCache>,
}

#[derive(Debug, Clone, Copy)]
struct ForceCache {
    modes: ModeSample,
    depth: f64,
    trap_force: Vec3,
    probe_force: Vec3,
}

impl Trajectory {
    /// A fresh trajectory; `rng` draws the first emission threshold.
    pub fn new<R: Rng + ?Sized>(state: ParticleState, noise: TrapNoiseProcess, rng: &mut R) -> Self {
        Trajectory {
            t0: state.t,
            state,
            noise,
            budget: HeatingBudget::default(),
            step_count: 0,
            emission_clock: Exp1.sample(rng),
            cache: None,
        }
    }

    pub fn invalidate(&mut self) {
        self.cache = None;
    }
}

/// Hook invoked every `record_stride` steps with the current state and |g|.
pub type Recorder<'a> = dyn FnMut(&ParticleState, f64) + 'a;

/// Integrates trajectories for fixed physical parameters and step size.
#[derive(Debug, Clone)]
pub struct Integrator {
    pub params: PhysicalParams,
    pub config: IntegratorConfig,
}

impl Integrator {
    pub fn new(params: PhysicalParams, config: IntegratorConfig) -> Result<Self> {
        params.validate()?;
        config.validate(&params)?;
        Ok(Integrator { params, config })
    }

    fn refresh_cache(&self, traj: &mut Trajectory, depth: f64) -> ForceCache {
        let modes = sample_modes(&traj.state.r, &self.params);
        let c = ForceCache {
            modes,
            depth,
            trap_force: modes.grad_intensity * depth,
            probe_force: modes.grad_g * (-2.0 * HBAR * traj.state.field.interaction_real()),
        };
        traj.cache = Some(c);
        c
    }

    /// Runs `steps` steps at nominal trap depth `nominal_depth`.
    ///
    /// Stops early when the atom leaves the trap (see [`Integrator::has_exited`]).
    #[allow(clippy::too_many_arguments)]
    pub fn simulate_segment<R: Rng + ?Sized>(
        &self,
        traj: &mut Trajectory,
        steps: u64,
        drive: &DriveSettings,
        nominal_depth: f64,
        rng: &mut R,
        mut recorder: Option<&mut Recorder<'_>>,
    ) -> Result<SegmentSummary> {
        let params = &self.params;
        let dt = self.config.dt;
        let half = 0.5 * dt;
        let mass = params.atom_mass;
        let inv_mass = 1.0 / mass;
        let gravity = Vec3::new(0.0, -mass * GRAVITY, 0.0);
        let eta = drive.amplitude();
        let dc = drive.delta_c;
        let stark_per_joule = params.stark_per_depth / HBAR;
        let norm = if eta > 0.0 { (params.kappa / eta).powi(2) } else { 0.0 };
        let stride = self.config.record_stride;
        let stochastic = self.config.stochastic;
        let limit = self.config.excitation_limit;
        let lambda_trap = params.lambda_trap;
        let x_escape = 20.0 * params.lambda_probe;
        let rho_escape2 = (2.0 * params.waist).powi(2);

        let start_budget = traj.budget;
        let mut depth = traj.noise.depth(nominal_depth);
        let mut cache = match traj.cache {
            Some(c) if c.depth == depth => c,
            _ => self.refresh_cache(traj, depth),
        };

        let mut sum_t = 0.0;
        let mut sum_g = 0.0;
        let mut max_exc: f64 = traj.state.field.excitation();
        let mut histogram = AxialHistogram::default();
        let mut exited = false;
        let mut done = 0u64;

        while done < steps {
            let st = &mut traj.state;
            let r0 = st.r;
            let p_half = st.p + (cache.trap_force + cache.probe_force + gravity) * half;
            let r1 = r0 + p_half * (inv_mass * dt);
            let m1 = sample_modes(&r1, params);

            let field_idle = eta == 0.0 && st.field == FieldState::ZERO;
            let shift = stark_per_joule * depth;
            let da1 = params.delta_a0 + dc - shift * m1.intensity;
            if !field_idle {
                let g_mid = 0.5 * (cache.modes.g + m1.g);
                let da_mid = params.delta_a0 + dc - shift * 0.5 * (cache.modes.intensity + m1.intensity);
                let mut f = propagate_field(&st.field, g_mid, da_mid, dc, eta, params, dt);
                if eta == 0.0 && f.a.norm_sqr() + f.sigma.norm_sqr() < 1e-40 {
                    f = FieldState::ZERO;
                }
                st.field = f;
            }
            let exc = st.field.excitation();
            if exc > limit || !exc.is_finite() {
                return Err(Error::ModelValidity { excitation: exc, limit });
            }
            max_exc = max_exc.max(exc);

            let probe_force = m1.grad_g * (-2.0 * HBAR * st.field.interaction_real());
            let trap_force = m1.grad_intensity * depth;
            let mut p1 = p_half + (trap_force + probe_force + gravity) * half;
            traj.budget.probe_work += 0.5 * (cache.probe_force + probe_force).dot(&(r1 - r0));

            if stochastic && !field_idle {
                // Emissions fire when the integrated rate 2γ|σ|² crosses an Exp(1) threshold.
                traj.emission_clock -= 2.0 * params.gamma * exc * dt;
                while traj.emission_clock <= 0.0 {
                    recoil(&mut p1, params, &mut traj.budget, rng);
                    let e: f64 = Exp1.sample(rng);
                    traj.emission_clock += e;
                }
                dipole_kick(&mut p1, st.field.photon_number(), m1.grad_g.norm_squared(), da1, dt, params, &mut traj.budget, rng);
            }
            st.r = r1;
            st.p = p1;
            traj.step_count += 1;
            st.t = traj.t0 + traj.step_count as f64 * dt;
            done += 1;

            cache = ForceCache { modes: m1, depth, trap_force, probe_force };
            if traj.noise.step(dt, rng) {
                let new_depth = traj.noise.depth(nominal_depth);
                traj.budget.trap_noise -= (new_depth - depth) * m1.intensity;
                depth = new_depth;
                cache.depth = depth;
                cache.trap_force = m1.grad_intensity * depth;
            }

            sum_t += if eta > 0.0 {
                st.field.photon_number() * norm
            } else {
                crate::physics::resonant_transmission(m1.g, dc, da1, params)
            };
            sum_g += m1.g.abs();
            if traj.step_count % stride == 0 {
                histogram.record(r1.x, lambda_trap);
                if let Some(rec) = recorder.as_deref_mut() {
                    rec(st, m1.g.abs());
                }
            }

            // Lost: unbound and moving radially outward beyond 2 w0, or far along the axis.
            let rho2 = r1.y * r1.y + r1.z * r1.z;
            if r1.x.abs() > x_escape
                || (rho2 > rho_escape2
                    && r1.y * p1.y + r1.z * p1.z > 0.0
                    && p1.norm_squared() * 0.5 * inv_mass - depth * m1.intensity > 0.0)
            {
                exited = true;
                break;
            }
        }
        traj.cache = Some(cache);

        let n = done.max(1) as f64;
        Ok(SegmentSummary {
            steps: done,
            mean_transmission: if done > 0 { (sum_t / n).min(1.0) } else { 1.0 },
            mean_coupling: sum_g / n,
            max_excitation: max_exc,
            budget: traj.budget.delta_since(&start_budget),
            histogram,
            exited,
        })
    }

    /// The loss criterion applied by [`Integrator::simulate_segment`].
    pub fn has_exited(&self, state: &ParticleState, depth: f64) -> bool {
        let r = &state.r;
        let rho2 = r.y * r.y + r.z * r.z;
        r.x.abs() > 20.0 * self.params.lambda_probe
            || (rho2 > (2.0 * self.params.waist).powi(2)
                && r.y * state.p.y + r.z * state.p.z > 0.0
                && state.trap_energy(depth, &self.params) > 0.0)
    }
}

/// One deterministic velocity-Verlet step (trap, probe dipole force and
/// gravity; fields re-evaluated mid-step). Returns the new position and momentum.
pub fn motion_step(
    state: &ParticleState,
    trap_depth: f64,
    drive: &DriveSettings,
    dt: f64,
    params: &PhysicalParams,
) -> (Vec3, Vec3) {
    let mass = params.atom_mass;
    let gravity = Vec3::new(0.0, -mass * GRAVITY, 0.0);
    let m0 = sample_modes(&state.r, params);
    let f0 = m0.grad_intensity * trap_depth + m0.grad_g * (-2.0 * HBAR * state.field.interaction_real()) + gravity;
    let p_half = state.p + f0 * (0.5 * dt);
    let r1 = state.r + p_half * (dt / mass);
    let m1 = sample_modes(&r1, params);
    let shift = params.peak_stark_shift(trap_depth);
    let da_mid = params.delta_a0 + drive.delta_c - shift * 0.5 * (m0.intensity + m1.intensity);
    let field = propagate_field(
        &state.field,
        0.5 * (m0.g + m1.g),
        da_mid,
        drive.delta_c,
        drive.amplitude(),
        params,
        dt,
    );
    let f1 = m1.grad_intensity * trap_depth + m1.grad_g * (-2.0 * HBAR * field.interaction_real()) + gravity;
    (r1, p_half + f1 * (0.5 * dt))
}
