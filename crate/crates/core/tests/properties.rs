use cavity_core::analysis::{axial_localization, coupling_distribution, default_coupling_bin};
use cavity_core::config::SimConfig;
use cavity_core::dynamics::{AxialHistogram, HeatingBudget, AXIAL_BINS};
use cavity_core::physics::{
    coupling_gradient, dressed_mode_detunings, relative_transmission, resonant_transmission, sample_modes,
    signed_coupling_at, trap_force, trap_mode_intensity, trap_potential, PhysicalParams, Vec3,
};
use cavity_core::protocol::{AtomRunResult, IntervalKind, IntervalRecord, SCHEMA_VERSION};
use cavity_core::units::{angular_to_mhz, mhz_to_angular, mk_to_joule};
use proptest::prelude::*;

fn params() -> PhysicalParams {
    PhysicalParams::default()
}

fn position() -> impl Strategy<Value = Vec3> {
    let p = params();
    (-3.0..3.0f64, -1.5..1.5f64, -1.5..1.5f64)
        .prop_map(move |(x, y, z)| Vec3::new(x * p.lambda_probe, y * p.waist, z * p.waist))
}

fn mhz(range: std::ops::Range<f64>) -> impl Strategy<Value = f64> {
    range.prop_map(mhz_to_angular)
}

/// Central difference of a scalar field, step scaled per axis.
fn numeric_gradient(f: impl Fn(&Vec3) -> f64, r: &Vec3) -> Vec3 {
    let p = params();
    let h = [1e-4 / p.k_probe(), 1e-4 * p.waist, 1e-4 * p.waist];
    let mut g = Vec3::zeros();
    for i in 0..3 {
        let mut a = *r;
        let mut b = *r;
        a[i] += h[i];
        b[i] -= h[i];
        g[i] = (f(&a) - f(&b)) / (2.0 * h[i]);
    }
    g
}

fn close(a: &Vec3, b: &Vec3, scale: f64) -> bool {
    (a - b).norm() <= 1e-6 * b.norm() + 1e-9 * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn transmission_symmetric_under_detuning_flip(g in mhz(0.0..20.0), dc in mhz(-40.0..40.0), da in mhz(-40.0..40.0)) {
        let p = params();
        let a = relative_transmission(g, dc, da, &p);
        let b = relative_transmission(g, -dc, -da, &p);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        let a = resonant_transmission(g, dc, da, &p);
        let b = resonant_transmission(g, -dc, -da, &p);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
    }

    #[test]
    fn transmission_in_unit_interval(g in mhz(0.0..20.0), dc in mhz(-40.0..40.0), da in mhz(-40.0..40.0)) {
        let t = resonant_transmission(g, dc, da, &params());
        prop_assert!((0.0..=1.0).contains(&t));
    }

    #[test]
    fn resonant_transmission_falls_with_coupling(g1 in mhz(0.0..20.0), g2 in mhz(0.0..20.0)) {
        let p = params();
        let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
        prop_assert!(resonant_transmission(hi, 0.0, 0.0, &p) <= resonant_transmission(lo, 0.0, 0.0, &p));
    }

    #[test]
    fn splitting_at_least_two_g(g in mhz(0.0..20.0), d in mhz(-50.0..50.0)) {
        let (lo, hi) = dressed_mode_detunings(g, d);
        prop_assert!(hi - lo >= 2.0 * g * (1.0 - 1e-12));
    }

    #[test]
    fn coupling_gradient_matches_finite_difference(r in position()) {
        let p = params();
        let fd = numeric_gradient(|x| signed_coupling_at(x, &p), &r);
        prop_assert!(close(&coupling_gradient(&r, &p), &fd, p.g0 * p.k_probe()));
        let m = sample_modes(&r, &p);
        prop_assert!(close(&m.grad_g, &fd, p.g0 * p.k_probe()));
        let fd_i = numeric_gradient(|x| trap_mode_intensity(x, &p), &r);
        prop_assert!(close(&m.grad_intensity, &fd_i, p.k_trap()));
    }

    #[test]
    fn trap_force_is_minus_potential_gradient(r in position(), depth_mk in 0.1..2.0f64) {
        let p = params();
        let u0 = mk_to_joule(depth_mk);
        let fd = -numeric_gradient(|x| trap_potential(x, u0, &p), &r);
        prop_assert!(close(&trap_force(&r, u0, &p), &fd, u0 * p.k_trap()));
    }

    #[test]
    fn mhz_round_trip(f in -1e3..1e3f64) {
        let back = angular_to_mhz(mhz_to_angular(f));
        prop_assert!((back - f).abs() <= 1e-12 * f.abs().max(1e-300));
    }

    #[test]
    fn config_round_trip(sigma in 0.0..0.5f64, dets in prop::collection::vec(-40.0..40.0f64, 1..20), seed in any::<u64>(), atoms in 1u64..1000) {
        let mut c = SimConfig::default();
        c.sigma_eps = sigma;
        c.detunings_mhz = dets;
        c.seed = seed;
        c.atoms = atoms;
        prop_assert_eq!(SimConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn histograms_normalize(counts in prop::collection::vec(0u64..5000, AXIAL_BINS), couplings in prop::collection::vec(0.0..17.0f64, 1..200)) {
        let p = params();
        let total: u64 = counts.iter().sum();
        prop_assume!(total >= 1000);
        let mut runs = vec![run_with_probe(counts.clone(), 10.0)];
        for g in &couplings {
            runs.push(run_with_probe(vec![0; AXIAL_BINS], *g));
        }
        let loc = axial_localization(&runs, false, p.lambda_trap).unwrap();
        let mass: f64 = loc.density.iter().sum::<f64>() * loc.bin_width;
        prop_assert!((mass - 1.0).abs() < 1e-12);
        let h = coupling_distribution(&runs, false, default_coupling_bin()).unwrap();
        prop_assert!((h.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fold_stays_in_one_well(x in -1e-5..1e-5f64) {
        let lt = params().lambda_trap;
        let f = AxialHistogram::fold(x, lt);
        prop_assert!(f.abs() <= 0.25 * lt * (1.0 + 1e-12));
        let mut h = AxialHistogram::default();
        h.record(x, lt);
        prop_assert_eq!(h.total(), 1);
    }
}

fn run_with_probe(histogram: Vec<u64>, g_mhz: f64) -> AtomRunResult {
    let record = IntervalRecord {
        kind: IntervalKind::Probe,
        start: 0.0,
        duration: 1e-4,
        delta_c: 0.0,
        mean_transmission_rel: 0.1,
        mean_coupling: mhz_to_angular(g_mhz),
        qualified: false,
        atom_present: true,
        exposure: 1e-4,
        max_excitation: 0.0,
        budget: HeatingBudget::default(),
        histogram: Some(histogram),
    };
    AtomRunResult {
        schema_version: SCHEMA_VERSION,
        atom_index: 0,
        probe_delta_c: 0.0,
        triggered: true,
        attempts: 1,
        intervals: vec![record],
        exit_time: 0.0,
        loss_time: None,
        heating_budget: HeatingBudget::default(),
        loss_during_probe: false,
        stark_at_antinode: 0.0,
        trap_depth_hold: 0.0,
        steps: 0,
    }
}
