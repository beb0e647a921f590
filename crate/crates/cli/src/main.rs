use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use cavity_core::analysis::{
    axial_localization, coupling_distribution, default_coupling_bin, fit_normal_modes, heating_attribution,
    loss_rate_spectrum, transmission_spectrum,
};
use cavity_core::config::{parse_list, parse_switch, SimConfig};
use cavity_core::dynamics::{Integrator, ParticleState};
use cavity_core::experiment::{calibrate, run_ensemble, task_rng, EnsembleOutput, EnsembleSpec};
use cavity_core::output::{self, TrajectoryDump};
use cavity_core::protocol::run_atom_recorded;
use cavity_core::units::{angular_to_mhz, joule_to_mk, mhz_to_angular};
use cavity_core::validation::{compare_point, linspace};
use cavity_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_TOLERANCE: u8 = 3;
const EXIT_CALIBRATION: u8 = 4;
const EXIT_RUNTIME: u8 = 1;

/// Relative change between photon truncations that triggers a convergence warning.
const CONVERGENCE_WARN: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "cavity-sim", version, about = "Monte Carlo simulation of an atom trapped in a high-finesse cavity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the weak-drive model against the master-equation steady state.
    OracleCheck(Common),
    /// Calibrate drive strength and trap noise; writes calibrated.cfg.
    Calibrate(Common),
    /// Transmission spectra, coupling distribution and localization.
    Spectrum(Common),
    /// Probe-induced loss rates and heating attribution.
    Lossrate(Common),
    /// Single-atom phase-space dump.
    Trajectory {
        #[command(flatten)]
        common: Common,
        /// Atom index within the (first detuning, first depth) point.
        #[arg(long, default_value_t = 0)]
        atom_index: u64,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    atoms: Option<u64>,
    /// Probe detunings, MHz, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    detunings: Option<String>,
    /// Hold depths, mK, comma separated.
    #[arg(long)]
    depths: Option<String>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// on|off
    #[arg(long)]
    shot_noise: Option<String>,
}

fn flag_error(flag: &str, msg: impl Into<String>) -> Error {
    Error::Config { line: 0, key: flag.to_string(), message: msg.into() }
}

impl Common {
    fn load(&self) -> Result<SimConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => SimConfig::load(p).map_err(|e| match e {
                Error::Io(io) => flag_error("--config", format!("{}: {io}", p.display())),
                e => e,
            })?,
            None => SimConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = self.atoms {
            if a == 0 {
                return Err(flag_error("--atoms", "must be at least 1"));
            }
            cfg.atoms = a;
        }
        if let Some(d) = &self.detunings {
            cfg.detunings_mhz = parse_list(d).map_err(|m| flag_error("--detunings", m))?;
        }
        if let Some(d) = &self.depths {
            cfg.depths_mk = parse_list(d).map_err(|m| flag_error("--depths", m))?;
        }
        if let Some(s) = &self.shot_noise {
            cfg.shot_noise = parse_switch(s).map_err(|m| flag_error("--shot-noise", m))?;
        }
        if self.workers == 0 {
            return Err(flag_error("--workers", "must be at least 1"));
        }
        if cfg.detunings_mhz.is_empty() || cfg.depths_mk.is_empty() {
            return Err(flag_error("--detunings/--depths", "lists must not be empty"));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

struct Session {
    name: &'static str,
    cfg: SimConfig,
    out_dir: PathBuf,
    workers: usize,
    started: Instant,
    outputs: Vec<String>,
    steps: u64,
    extra: serde_json::Map<String, Value>,
}

impl Session {
    fn new(name: &'static str, common: &Common) -> Result<Self, Error> {
        let cfg = common.load()?;
        std::fs::create_dir_all(&common.out_dir)?;
        Ok(Session {
            name,
            cfg,
            out_dir: common.out_dir.clone(),
            workers: common.workers,
            started: Instant::now(),
            outputs: Vec::new(),
            steps: 0,
            extra: Default::default(),
        })
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    fn write(&mut self, file: &str, text: &str) -> Result<(), Error> {
        output::write_csv(&self.path(file), text)?;
        self.outputs.push(file.to_string());
        Ok(())
    }

    /// Config snapshot plus manifest; running the same subcommand with
    /// `--config <snapshot>` reproduces every output.
    fn finish(mut self) -> Result<(), Error> {
        let snapshot = format!("{}.cfg", self.name);
        self.cfg.save(&self.path(&snapshot))?;
        let manifest = json!({
            "tool": "cavity-sim",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.name,
            "seed": self.cfg.seed,
            "config_file": snapshot,
            "config": self.cfg.to_text(),
            "outputs": self.outputs,
            "workers": self.workers,
            "wall_clock_s": self.started.elapsed().as_secs_f64(),
            "steps": self.steps,
            "extra": Value::Object(std::mem::take(&mut self.extra)),
        });
        std::fs::write(self.path(&format!("{}_manifest.json", self.name)), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

fn oracle_check(common: &Common) -> Result<bool, Error> {
    let mut s = Session::new("oracle-check", common)?;
    let cfg = &s.cfg;
    let params = cfg.physical_params();
    let eta = params.kappa * cfg.oracle_n_empty.sqrt();
    let n_max = cfg.oracle_n_max as usize;
    let span = mhz_to_angular(cfg.oracle_span_mhz);
    let grid = linspace(-span, span, cfg.oracle_grid as usize);
    let mut rows = Vec::new();
    let mut unconverged = 0usize;
    for g in [0.0, 0.5 * params.g0, params.g0] {
        for &dc in &grid {
            for &da in &grid {
                let row = compare_point(g, dc, da, eta, n_max, &params)?;
                if n_max < 8 {
                    let finer = compare_point(g, dc, da, eta, n_max + 1, &params)?;
                    let d = (finer.oracle_photons - row.oracle_photons).abs() / finer.oracle_photons.abs().max(1e-300);
                    if d > CONVERGENCE_WARN {
                        unconverged += 1;
                    }
                }
                rows.push(row);
            }
        }
    }
    let worst = rows.iter().map(|r| r.max_error()).fold(0.0, f64::max);
    let failing = rows.iter().filter(|r| r.max_error() > cfg.oracle_tolerance).count();
    let tol = cfg.oracle_tolerance;
    if unconverged > 0 {
        eprintln!("warning: {unconverged} grid points change by more than {CONVERGENCE_WARN:e} at n_max+1; raise oracle_n_max");
    }
    println!(
        "oracle-check: {} points, n_empty {:e}, max relative error {worst:.3e}, {failing} above {tol:e}",
        rows.len(),
        cfg.oracle_n_empty
    );
    let table = output::oracle_csv(&rows, angular_to_mhz(eta));
    s.write(output::ORACLE_CSV, &table)?;
    s.extra.insert("max_error".into(), json!(worst));
    s.extra.insert("points_above_tolerance".into(), json!(failing));
    s.extra.insert("unconverged_points".into(), json!(unconverged));
    s.finish()?;
    Ok(failing == 0)
}

fn calibrate_cmd(common: &Common) -> Result<(), Error> {
    let mut s = Session::new("calibrate", common)?;
    let (calibrated, cal) = calibrate(&s.cfg, s.workers)?;
    let noise = &cal.noise;
    println!(
        "calibrate: eta {:.4} MHz (check-sweep excitation {:.4}), sigma_eps {:.5}, probe-free lifetime {:.2} ms ({} of {} lost)",
        calibrated.eta_mhz,
        cal.check_excitation,
        noise.sigma_eps,
        noise.lifetime.tau * 1e3,
        noise.lifetime.n_lost,
        noise.lifetime.n_atoms
    );
    s.extra.insert("calibration".into(), serde_json::to_value(&cal)?);
    s.write("calibrated.cfg", &calibrated.to_text())?;
    s.finish()
}

fn ensemble(s: &mut Session) -> Result<EnsembleOutput, Error> {
    let spec = EnsembleSpec::from_config(&s.cfg);
    let out = run_ensemble(&s.cfg, &spec, s.workers)?;
    s.steps = out.total_steps();
    if !out.failures.is_empty() {
        eprintln!("warning: {} trajectories left the weak-excitation domain and were dropped", out.failures.len());
    }
    s.extra.insert("failures".into(), serde_json::to_value(&out.failures)?);
    output::write_jsonl(&s.path(output::RUNS_JSONL), &out.runs)?;
    s.outputs.push(output::RUNS_JSONL.into());
    Ok(out)
}

fn spectrum_cmd(common: &Common) -> Result<(), Error> {
    let mut s = Session::new("spectrum", common)?;
    let out = ensemble(&mut s)?;
    let all = transmission_spectrum(&out.runs, false);
    let qual = transmission_spectrum(&out.runs, true);
    s.write(output::SPECTRUM_CSV, &output::spectrum_csv(&all, &qual))?;

    let mut hists = Vec::new();
    let mut locs = Vec::new();
    let lambda_trap = s.cfg.lambda_trap_nm * 1e-9;
    for (name, q) in [("all", false), ("qualified", true)] {
        match coupling_distribution(&out.runs, q, default_coupling_bin()) {
            Ok(h) => hists.push((name, h)),
            Err(e) => eprintln!("warning: {name} coupling distribution: {e}"),
        }
        match axial_localization(&out.runs, q, lambda_trap) {
            Ok(l) => locs.push((name, l)),
            Err(e) => eprintln!("warning: {name} localization: {e}"),
        }
    }
    let h: Vec<_> = hists.iter().map(|(n, h)| (*n, h)).collect();
    s.write(output::COUPLING_CSV, &output::coupling_csv(&h))?;
    let l: Vec<_> = locs.iter().map(|(n, l)| (*n, l)).collect();
    s.write(output::LOCALIZATION_CSV, &output::localization_csv(&l, s.cfg.lambda_probe_nm * 1e-9))?;

    for depth in s.cfg.depths() {
        let pts: Vec<_> = all.iter().filter(|p| p.trap_depth_hold == depth).cloned().collect();
        match fit_normal_modes(&pts) {
            Ok(f) => println!(
                "depth {:.3} mK: peaks at {:.2} / {:.2} MHz, splitting {:.2} MHz",
                joule_to_mk(depth),
                angular_to_mhz(f.left.center),
                angular_to_mhz(f.right.center),
                angular_to_mhz(f.splitting())
            ),
            Err(e) => eprintln!("depth {:.3} mK: {e}", joule_to_mk(depth)),
        }
    }
    s.finish()
}

fn lossrate_cmd(common: &Common) -> Result<(), Error> {
    let mut s = Session::new("lossrate", common)?;
    let out = ensemble(&mut s)?;
    s.write(output::LOSSRATE_CSV, &output::lossrate_csv(&loss_rate_spectrum(&out.runs)))?;
    s.write(output::ATTRIBUTION_CSV, &output::attribution_csv(&heating_attribution(&out.runs)))?;
    s.finish()
}

fn trajectory_cmd(common: &Common, atom_index: u64) -> Result<(), Error> {
    let mut s = Session::new("trajectory", common)?;
    let cfg = &s.cfg;
    let dc = cfg.detunings()[0];
    let depth = cfg.depths()[0];
    let integ = Integrator::new(cfg.physical_params(), cfg.integrator_config(cfg.seed))?;
    let proto = cfg.protocol_config(dc, depth);
    let mut rng = task_rng(cfg.seed, dc, depth, atom_index);
    let mut dump = TrajectoryDump::new();
    let run = {
        let mut rec = |st: &ParticleState, g: f64| dump.push(st, g);
        run_atom_recorded(&integ, &proto, atom_index, &mut rng, Some(&mut rec))?
    };
    s.steps = run.steps;
    println!(
        "trajectory: atom {atom_index}, {} attempts, {} intervals, {} rows",
        run.attempts,
        run.intervals.len(),
        dump.rows()
    );
    dump.write(&s.path(output::TRAJECTORY_DAT))?;
    s.outputs.push(output::TRAJECTORY_DAT.into());
    output::write_jsonl(&s.path("trajectory_run.jsonl"), std::slice::from_ref(&run))?;
    s.outputs.push("trajectory_run.jsonl".into());
    s.finish()
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidParameter { .. } => EXIT_CONFIG,
        Error::Calibration(_) => EXIT_CALIBRATION,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::OracleCheck(c) => oracle_check(c).map(|ok| if ok { 0 } else { EXIT_TOLERANCE }),
        Command::Calibrate(c) => calibrate_cmd(c).map(|_| 0).map_err(|e| match e {
            Error::TooManyFailures { .. } => Error::Calibration(e.to_string()),
            e => e,
        }),
        Command::Spectrum(c) => spectrum_cmd(c).map(|_| 0),
        Command::Lossrate(c) => lossrate_cmd(c).map(|_| 0),
        Command::Trajectory { common, atom_index } => trajectory_cmd(common, *atom_index).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
