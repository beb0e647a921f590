use cavity_core::dynamics::{
    DriveSettings, HeatingBudget, Integrator, IntegratorConfig, ParticleState, Trajectory, TrapNoiseProcess,
};
use cavity_core::physics::{PhysicalParams, Vec3};
use cavity_core::units::mk_to_joule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn integrator(dt: f64, stochastic: bool) -> Integrator {
    let cfg = IntegratorConfig { dt, record_stride: 10, stochastic, ..Default::default() };
    Integrator::new(PhysicalParams::default(), cfg).unwrap()
}

fn quiet() -> TrapNoiseProcess {
    TrapNoiseProcess::new(0.0, 1e-6).unwrap()
}

fn cooling_eta(p: &PhysicalParams) -> f64 {
    0.118 * (p.kappa + p.gamma)
}

#[test]
fn small_amplitude_axial_frequency_is_harmonic() {
    let integ = integrator(1e-9, false);
    let p = integ.params;
    let depth = mk_to_joule(1.6);
    let x0 = p.lambda_trap / 200.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut traj = Trajectory::new(ParticleState::at_rest(Vec3::new(x0, 0.0, 0.0)), quiet(), &mut rng);

    // Upward zero crossings of x give the period.
    let mut crossings = Vec::new();
    let mut prev = traj.state.r.x;
    for _ in 0..30_000 {
        integ.simulate_segment(&mut traj, 1, &DriveSettings::off(), depth, &mut rng, None).unwrap();
        let x = traj.state.r.x;
        if prev < 0.0 && x >= 0.0 {
            let frac = prev / (prev - x);
            crossings.push(traj.state.t - (1.0 - frac) * 1e-9);
        }
        prev = x;
    }
    assert!(crossings.len() >= 10);
    let period = (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
    let omega = 2.0 * std::f64::consts::PI / period;
    let expected = p.k_trap() * (2.0 * depth / p.atom_mass).sqrt();
    assert!((omega / expected - 1.0).abs() < 0.01, "omega {omega:e} vs {expected:e}");
}

#[test]
fn conservative_energy_is_conserved_over_one_ms() {
    let integ = integrator(1e-9, false);
    let p = integ.params;
    let depth = mk_to_joule(1.6);
    let mut s = ParticleState::at_rest(Vec3::new(p.lambda_trap / 20.0, 2e-6, -1e-6));
    s.p = Vec3::new(0.0, 0.02, 0.01) * p.atom_mass;
    let e0 = s.mechanical_energy(depth, &p);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut traj = Trajectory::new(s, quiet(), &mut rng);
    let sum = integ.simulate_segment(&mut traj, 1_000_000, &DriveSettings::off(), depth, &mut rng, None).unwrap();
    assert!(!sum.exited);
    let e1 = traj.state.mechanical_energy(depth, &p);
    assert!(((e1 - e0) / e0).abs() < 1e-3, "relative drift {}", (e1 - e0) / e0);
}

#[test]
fn free_fall_momentum_change() {
    let integ = integrator(1e-9, false);
    let p = integ.params;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut traj = Trajectory::new(ParticleState::at_rest(Vec3::new(p.lambda_probe / 4.0, 0.0, 0.0)), quiet(), &mut rng);
    integ.simulate_segment(&mut traj, 1000, &DriveSettings::off(), 0.0, &mut rng, None).unwrap();
    let expected = -p.atom_mass * 9.81 * 1000.0 * 1e-9;
    assert!((traj.state.p.y / expected - 1.0).abs() < 1e-9);
    assert_eq!(traj.state.p.x, 0.0);
}

#[test]
fn halving_dt_keeps_noise_free_energy() {
    let p = PhysicalParams::default();
    let depth = mk_to_joule(1.6);
    let mut s = ParticleState::at_rest(Vec3::new(p.lambda_trap / 15.0, 3e-6, 0.0));
    s.p = Vec3::new(0.03, 0.0, 0.01) * p.atom_mass;
    let mut energies = Vec::new();
    for (dt, steps) in [(2e-9, 500_000u64), (1e-9, 1_000_000)] {
        let integ = integrator(dt, false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut traj = Trajectory::new(s, quiet(), &mut rng);
        integ.simulate_segment(&mut traj, steps, &DriveSettings::off(), depth, &mut rng, None).unwrap();
        energies.push(traj.state.mechanical_energy(depth, &p));
    }
    let rel = ((energies[0] - energies[1]) / energies[1]).abs();
    assert!(rel < 1e-4, "endpoint energy shift {rel:e}");
}

#[test]
fn same_seed_same_trajectory() {
    let integ = integrator(2e-9, true);
    let p = integ.params;
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = TrapNoiseProcess::new(0.05, 1e-6).unwrap();
        let mut traj = Trajectory::new(ParticleState::at_rest(Vec3::new(3e-8, 0.0, 0.0)), noise, &mut rng);
        let drive = DriveSettings::new(p.g0, cooling_eta(&p));
        let sum = integ.simulate_segment(&mut traj, 50_000, &drive, mk_to_joule(1.6), &mut rng, None).unwrap();
        (traj.state, sum.mean_transmission, traj.budget)
    };
    let a = run(9);
    let b = run(9);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.to_bits(), b.1.to_bits());
    assert_eq!(a.2, b.2);
    assert_ne!(run(10).0, a.0);
}

#[test]
fn budget_closes_energy_balance() {
    // ΔE_mech equals the sum of the channels over an ensemble of noisy segments.
    let integ = integrator(2e-9, true);
    let p = integ.params;
    let depth = mk_to_joule(1.6);
    let drive = DriveSettings::new(p.g0 * 0.9, cooling_eta(&p));
    let mut de = 0.0;
    let mut input = HeatingBudget::default();
    for k in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k);
        let noise = TrapNoiseProcess::new(0.05, 1e-6).unwrap();
        let mut s = ParticleState::at_rest(Vec3::new(2e-8, 1e-6, 0.0));
        s.p.x = 0.05 * p.atom_mass;
        let mut traj = Trajectory::new(s, noise, &mut rng);
        let e0 = s.mechanical_energy(depth, &p);
        integ.simulate_segment(&mut traj, 10_000, &drive, depth, &mut rng, None).unwrap();
        de += traj.state.mechanical_energy(traj.noise.depth(depth), &p) - e0;
        input.accumulate(&traj.budget);
    }
    let total = input.total_input();
    assert!(input.spont_recoil > 0.0 && input.dipole_fluct > 0.0);
    assert!(((total - de) / de).abs() < 0.01, "budget {total:e} vs energy change {de:e}");
}

fn mean_final_trap_energy(delta_c: f64, seeds: std::ops::Range<u64>) -> (f64, f64) {
    let integ = integrator(2e-9, true);
    let p = integ.params;
    let depth = mk_to_joule(1.6);
    let e0 = mk_to_joule(0.5);
    let n = seeds.end - seeds.start;
    let mut total = 0.0;
    for k in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let mut s = ParticleState::at_rest(Vec3::new(0.0, 1e-6, 0.0));
        s.p.x = (2.0 * p.atom_mass * e0).sqrt();
        let mut traj = Trajectory::new(s, quiet(), &mut rng);
        integ
            .simulate_segment(&mut traj, 250_000, &DriveSettings::new(delta_c, cooling_eta(&p)), depth, &mut rng, None)
            .unwrap();
        total += traj.state.trap_energy(depth, &p) + depth;
    }
    (total / n as f64, e0)
}

#[test]
fn drive_red_of_lower_normal_mode_cools() {
    let p = PhysicalParams::default();
    let (e, e0) = mean_final_trap_energy(-p.g0, 200..212);
    assert!(e < 0.6 * e0, "oscillation energy {e:e} vs initial {e0:e}");
}

#[test]
fn resonant_drive_keeps_energy_bounded() {
    // Between the normal modes the friction nearly cancels; only diffusion remains over 500 μs.
    let (e, e0) = mean_final_trap_energy(0.0, 200..212);
    assert!(e < 1.15 * e0 && e > 0.85 * e0, "oscillation energy {e:e} vs initial {e0:e}");
}

#[test]
fn on_resonance_probe_drives_dipole_channel_harder() {
    let integ = integrator(2e-9, true);
    let p = integ.params;
    let depth = mk_to_joule(1.6);
    let eta = cooling_eta(&p);
    let channel = |dc: f64| {
        let mut total = 0.0;
        for k in 0..8 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + k);
            let mut traj = Trajectory::new(ParticleState::at_rest(Vec3::new(2e-8, 0.0, 0.0)), quiet(), &mut rng);
            let sum = integ.simulate_segment(&mut traj, 50_000, &DriveSettings::new(dc, eta), depth, &mut rng, None).unwrap();
            total += sum.budget.dipole_fluct;
        }
        total
    };
    let on = channel(-p.g0 * 0.8);
    let off = channel(-p.g0 * 3.0);
    assert!(on > off, "on {on:e} off {off:e}");
}
