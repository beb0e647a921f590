//! Flat `key = value` configuration in user units (MHz, nm, μm, μs, ms, mK).
//!
//! Every key carries its unit in the suffix. Unknown or repeated keys are
//! rejected. Writing and re-reading a config is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::dynamics::IntegratorConfig;
use crate::error::{Error, Result};
use crate::physics::PhysicalParams;
use crate::protocol::{ProtocolConfig, TriggerConfig};
use crate::units::{mhz_to_angular, mk_to_joule, AMU};

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    /// None leaves the key out of the written file.
    fn render(&self) -> Option<String>;
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("expected a number, got `{s}`"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("must be finite".into())
        }
    }
    fn render(&self) -> Option<String> {
        Some(format!("{self:?}"))
    }
}

impl ConfigValue for u64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }
    fn render(&self) -> Option<String> {
        Some(self.to_string())
    }
}

impl ConfigValue for bool {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        parse_switch(s)
    }
    fn render(&self) -> Option<String> {
        Some(if *self { "on" } else { "off" }.into())
    }
}

impl ConfigValue for Option<f64> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        f64::parse_value(s).map(Some)
    }
    fn render(&self) -> Option<String> {
        self.as_ref().and_then(ConfigValue::render)
    }
}

impl ConfigValue for Vec<f64> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        parse_list(s)
    }
    fn render(&self) -> Option<String> {
        Some(self.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","))
    }
}

/// `on`/`off` (also `true`/`false`, `1`/`0`).
pub fn parse_switch(s: &str) -> std::result::Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        other => Err(format!("expected on|off, got `{other}`")),
    }
}

/// Comma-separated numbers.
pub fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| f64::parse_value(t.trim())).collect()
}

macro_rules! sim_config {
    ($( $(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct SimConfig {
            $( $(#[doc = $doc])* pub $name: $ty, )*
        }

        impl Default for SimConfig {
            fn default() -> Self {
                SimConfig { $( $name: $default, )* }
            }
        }

        impl SimConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($name) ),*];

            fn set(&mut self, key: &str, value: &str) -> Option<std::result::Result<(), String>> {
                match key {
                    $( stringify!($name) => Some(<$ty as ConfigValue>::parse_value(value).map(|v| self.$name = v)), )*
                    _ => None,
                }
            }

            fn entries(&self) -> Vec<(&'static str, Option<String>)> {
                vec![$( (stringify!($name), ConfigValue::render(&self.$name)) ),*]
            }
        }
    };
}

sim_config! {
    g0_mhz: f64 = 16.0,
    gamma_mhz: f64 = 3.0,
    kappa_mhz: f64 = 1.4,
    lambda_probe_nm: f64 = 780.2,
    lambda_trap_nm: f64 = 785.3,
    waist_um: f64 = 29.0,
    cavity_length_um: f64 = 122.0,
    finesse: f64 = 4.4e5,
    atom_mass_amu: f64 = crate::units::RB85_MASS_AMU,
    delta_a0_mhz: f64 = 35.0,
    /// Peak Stark shift per peak depth, both in angular-frequency units.
    stark_per_depth: f64 = crate::physics::default_stark_per_depth(),

    dt_ns: f64 = 2.0,
    record_stride: u64 = 50,
    excitation_limit: f64 = 0.05,

    /// Drive amplitude η/2π; empty-cavity photon number is (η/κ)².
    eta_mhz: f64 = 0.118 * (3.0 + 1.4),
    eta_trigger_mhz: Option<f64> = None,
    eta_probe_mhz: Option<f64> = None,

    cooling_us: f64 = 500.0,
    probe_us: f64 = 100.0,
    trap_depth_guide_mk: f64 = 0.4,
    trap_depth_hold_mk: f64 = 1.6,
    qualification_threshold: f64 = 0.02,
    exit_threshold: f64 = 0.8,
    max_run_ms: f64 = 20.0,
    probe_enabled: bool = true,
    max_attempts: u64 = 2000,

    trigger_bin_us: f64 = 10.0,
    trigger_threshold: f64 = 0.3,
    trigger_consecutive_bins: u64 = 3,
    quantum_efficiency: f64 = 0.32,
    shot_noise: bool = true,
    max_fly_ms: f64 = 5.0,

    sigma_eps: f64 = 0.0,
    tau_noise_us: f64 = 1.0,

    target_lifetime_ms: f64 = 30.0,
    calibration_atoms: u64 = 200,
    calibration_run_ms: f64 = 60.0,
    /// Largest excitation allowed in probe intervals.
    excitation_target: f64 = 0.014,
    /// Short simulated probe sweep that checks the dynamic excitation after the steady-state estimate.
    eta_check_atoms: u64 = 2,
    eta_check_run_ms: f64 = 5.0,

    detunings_mhz: Vec<f64> = (-7..=7).map(|i| i as f64 * 4.0).collect(),
    depths_mk: Vec<f64> = vec![1.6],
    atoms: u64 = 50,
    seed: u64 = 1,

    oracle_n_empty: f64 = 1e-4,
    oracle_n_max: u64 = 3,
    oracle_grid: u64 = 10,
    oracle_span_mhz: f64 = 40.0,
    oracle_tolerance: f64 = 1e-3,
}

fn config_error(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config { line, key: key.to_string(), message: message.into() }
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_error(line_no, line, "expected `key = value`"));
            };
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(config_error(line_no, key, "duplicate key"));
            }
            match cfg.set(key, value) {
                None => return Err(config_error(line_no, key, "unknown key")),
                Some(Err(msg)) => return Err(config_error(line_no, key, msg)),
                Some(Ok(())) => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            if let Some(v) = v {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Checks every derived structure.
    pub fn validate(&self) -> Result<()> {
        let params = self.physical_params();
        params.validate()?;
        self.integrator_config(0).validate(&params)?;
        self.protocol_config(0.0, mk_to_joule(self.trap_depth_hold_mk)).validate()?;
        if self.depths_mk.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::invalid("depths_mk", "depths must be >= 0"));
        }
        if !(self.target_lifetime_ms > 0.0 && self.calibration_run_ms > 0.0) {
            return Err(Error::invalid("target_lifetime_ms", "lifetime and calibration run time must be > 0"));
        }
        if !(self.excitation_target > 0.0 && self.excitation_target <= self.excitation_limit) {
            return Err(Error::invalid("excitation_target", "must lie in (0, excitation_limit]"));
        }
        if !(1..=8).contains(&self.oracle_n_max) || self.oracle_grid < 1 || !(self.oracle_n_empty > 0.0) {
            return Err(Error::invalid("oracle", "need 1 <= n_max <= 8, grid >= 1, n_empty > 0"));
        }
        Ok(())
    }

    pub fn physical_params(&self) -> PhysicalParams {
        PhysicalParams {
            g0: mhz_to_angular(self.g0_mhz),
            gamma: mhz_to_angular(self.gamma_mhz),
            kappa: mhz_to_angular(self.kappa_mhz),
            lambda_probe: self.lambda_probe_nm * 1e-9,
            lambda_trap: self.lambda_trap_nm * 1e-9,
            waist: self.waist_um * 1e-6,
            cavity_length: self.cavity_length_um * 1e-6,
            finesse: self.finesse,
            atom_mass: self.atom_mass_amu * AMU,
            delta_a0: mhz_to_angular(self.delta_a0_mhz),
            stark_per_depth: self.stark_per_depth,
        }
    }

    pub fn integrator_config(&self, rng_seed: u64) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.dt_ns * 1e-9,
            record_stride: self.record_stride,
            rng_seed,
            excitation_limit: self.excitation_limit,
            stochastic: true,
        }
    }

    pub fn eta(&self) -> f64 {
        mhz_to_angular(self.eta_mhz)
    }

    pub fn protocol_config(&self, probe_delta_c: f64, trap_depth_hold: f64) -> ProtocolConfig {
        let eta = self.eta();
        ProtocolConfig {
            cooling_duration: self.cooling_us * 1e-6,
            probe_duration: self.probe_us * 1e-6,
            probe_delta_c,
            trap_depth_guide: mk_to_joule(self.trap_depth_guide_mk),
            trap_depth_hold,
            qualification_threshold: self.qualification_threshold,
            exit_threshold: self.exit_threshold,
            trigger: TriggerConfig {
                bin_time: self.trigger_bin_us * 1e-6,
                threshold_rel: self.trigger_threshold,
                quantum_efficiency: self.quantum_efficiency,
                use_shot_noise: self.shot_noise,
                consecutive_bins: self.trigger_consecutive_bins as u32,
                max_fly_time: self.max_fly_ms * 1e-3,
            },
            max_run_time: self.max_run_ms * 1e-3,
            eta_trigger: self.eta_trigger_mhz.map(mhz_to_angular).unwrap_or(eta),
            eta_cooling: eta,
            eta_probe: self.eta_probe_mhz.map(mhz_to_angular).unwrap_or(eta),
            probe_enabled: self.probe_enabled,
            sigma_eps: self.sigma_eps,
            tau_noise: self.tau_noise_us * 1e-6,
            max_attempts: self.max_attempts as u32,
        }
    }

    pub fn detunings(&self) -> Vec<f64> {
        self.detunings_mhz.iter().map(|&d| mhz_to_angular(d)).collect()
    }

    pub fn depths(&self) -> Vec<f64> {
        self.depths_mk.iter().map(|&d| mk_to_joule(d)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_exactly() {
        let c = SimConfig::default();
        let back = SimConfig::parse(&c.to_text()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn awkward_values_round_trip() {
        let mut c = SimConfig::default();
        c.sigma_eps = 0.1 + 0.2;
        c.eta_probe_mhz = Some(1.0 / 3.0);
        c.detunings_mhz = vec![-1e-17, 0.1, 123456.789];
        c.shot_noise = false;
        assert_eq!(SimConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = SimConfig::parse("g0_mhz = 16\n\n# note\nfoo_mhz = 3\n").unwrap_err();
        match err {
            Error::Config { line, key, .. } => {
                assert_eq!(line, 4);
                assert_eq!(key, "foo_mhz");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(SimConfig::parse("g0_mhz 16"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(SimConfig::parse("g0_mhz = abc"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(SimConfig::parse("seed = 1\nseed = 2"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(SimConfig::parse("shot_noise = maybe"), Err(Error::Config { .. })));
    }

    #[test]
    fn invalid_physics_is_rejected() {
        assert!(SimConfig::parse("g0_mhz = 1").is_err());
        assert!(SimConfig::parse("lambda_trap_nm = 700").is_err());
        assert!(SimConfig::parse("dt_ns = 50").is_err());
    }

    #[test]
    fn frequencies_get_two_pi_once() {
        let c = SimConfig::parse("g0_mhz = 16\nkappa_mhz = 1.4").unwrap();
        let p = c.physical_params();
        assert_eq!(p.g0, 2.0 * std::f64::consts::PI * 16e6);
        assert_eq!(p.kappa, 2.0 * std::f64::consts::PI * 1.4e6);
        let proto = c.protocol_config(0.0, 0.0);
        assert_eq!(proto.eta_probe, c.eta());
    }

    #[test]
    fn comments_and_lists() {
        let c = SimConfig::parse("detunings_mhz = -10, 0 ,10  # three\ndepths_mk=1.3,1.9\n").unwrap();
        assert_eq!(c.detunings_mhz, vec![-10.0, 0.0, 10.0]);
        assert_eq!(c.depths_mk, vec![1.3, 1.9]);
    }
}
