//! Times the integrator on one trapped, probed atom.

use std::time::Instant;

use cavity_core::dynamics::{DriveSettings, IntegratorConfig, Integrator, ParticleState, Trajectory, TrapNoiseProcess};
use cavity_core::physics::{PhysicalParams, Vec3};
use cavity_core::units::mk_to_joule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let p = PhysicalParams::default();
    let dt: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2e-9);
    let cfg = IntegratorConfig { dt, ..Default::default() };
    let integ = Integrator::new(p, cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (label, drive) in [("probe", DriveSettings::new(0.0, 0.118 * (p.kappa + p.gamma))), ("dark", DriveSettings::off())] {
        let mut s = ParticleState::at_rest(Vec3::new(2e-8, 1e-6, 0.0));
        s.p.x = p.atom_mass * 0.05;
        let mut traj = Trajectory::new(s, TrapNoiseProcess::new(0.015, 1e-6).unwrap(), &mut rng);
        let steps = 2_000_000;
        let t0 = Instant::now();
        let sum = integ.simulate_segment(&mut traj, steps, &drive, mk_to_joule(1.6), &mut rng, None).unwrap();
        let el = t0.elapsed().as_secs_f64();
        println!("{label}: {:.1} ns/step, T={:.4} g={:.2}MHz exc={:.4} exited={}", el / sum.steps as f64 * 1e9, sum.mean_transmission, sum.mean_coupling / 6.283e6, sum.max_excitation, sum.exited);
    }
}
