//! File emission: JSON-lines run records, per-figure CSVs, oracle table and trajectory dump.
//!
//! CSV columns carry their unit in the header suffix: `_mhz` ordinary frequency,
//! `_mk` trap depth as temperature, `_nw` trap power, `_per_s` rate, `_j` energy,
//! `_nm` length, `_per_mhz`/`_per_nm` probability densities.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::analysis::{Attribution, CouplingHistogram, Localization, SpectrumPoint};
use crate::dynamics::ParticleState;
use crate::error::Result;
use crate::protocol::AtomRunResult;
use crate::units::{angular_to_mhz, joule_to_mk};
use crate::validation::ComparisonRow;

pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const LOSSRATE_CSV: &str = "lossrate.csv";
pub const COUPLING_CSV: &str = "coupling_hist.csv";
pub const LOCALIZATION_CSV: &str = "localization.csv";
pub const ATTRIBUTION_CSV: &str = "attribution.csv";
pub const RUNS_JSONL: &str = "runs.jsonl";
pub const ORACLE_CSV: &str = "oracle_check.csv";
pub const TRAJECTORY_DAT: &str = "trajectory.dat";

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:?}"))
}

pub fn write_jsonl(path: &Path, runs: &[AtomRunResult]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    for r in runs {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<AtomRunResult>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// One row per (selection, depth, detuning).
pub fn spectrum_csv(all: &[SpectrumPoint], qualified: &[SpectrumPoint]) -> String {
    let mut s = String::from(
        "selection,delta_c_mhz,trap_depth_mk,trap_power_nw,mean_transmission_rel,std_error,n_intervals,n_atoms\n",
    );
    for (name, pts) in [("all", all), ("qualified", qualified)] {
        for p in pts {
            let _ = writeln!(
                s,
                "{name},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                angular_to_mhz(p.delta_c),
                joule_to_mk(p.trap_depth_hold),
                p.trap_power_nw,
                p.mean_value,
                p.std_error,
                p.n_intervals,
                p.n_atoms
            );
        }
    }
    s
}

pub fn lossrate_csv(points: &[SpectrumPoint]) -> String {
    let mut s =
        String::from("delta_c_mhz,trap_depth_mk,trap_power_nw,loss_rate_per_s,std_error_per_s,n_intervals,n_atoms\n");
    for p in points {
        let _ = writeln!(
            s,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            angular_to_mhz(p.delta_c),
            joule_to_mk(p.trap_depth_hold),
            p.trap_power_nw,
            p.mean_value,
            p.std_error,
            p.n_intervals,
            p.n_atoms
        );
    }
    s
}

/// Bin edges in MHz (g/2π), density per MHz.
pub fn coupling_csv(hists: &[(&str, &CouplingHistogram)]) -> String {
    let mut s = String::from("selection,g_lo_mhz,g_hi_mhz,density_per_mhz,mean_g_mhz,n_intervals\n");
    for (name, h) in hists {
        let w = angular_to_mhz(h.bin_width);
        for (i, d) in h.density.iter().enumerate() {
            let _ = writeln!(
                s,
                "{name},{:?},{:?},{:?},{:?},{:?}",
                i as f64 * w,
                (i + 1) as f64 * w,
                d * h.bin_width / w,
                angular_to_mhz(h.mean),
                h.n_intervals
            );
        }
    }
    s
}

/// Folded axial density; FWHM repeated on every row, also as a fraction of the probe wavelength.
pub fn localization_csv(entries: &[(&str, &Localization)], lambda_probe: f64) -> String {
    let mut s = String::from("selection,x_nm,density_per_nm,fwhm_nm,fwhm_over_lambda,n_samples\n");
    for (name, l) in entries {
        for (x, d) in l.centres.iter().zip(&l.density) {
            let _ = writeln!(
                s,
                "{name},{:?},{:?},{:?},{:?},{:?}",
                x * 1e9,
                d * 1e-9,
                l.fwhm * 1e9,
                l.fwhm / lambda_probe,
                l.n_samples
            );
        }
    }
    s
}

pub fn attribution_csv(rows: &[Attribution]) -> String {
    let mut s = String::from(
        "delta_c_mhz,trap_depth_mk,spont_recoil_j,dipole_fluct_j,trap_noise_j,probe_work_j,spont_share,dipole_share,n_intervals\n",
    );
    for a in rows {
        let _ = writeln!(
            s,
            "{:?},{:?},{:?},{:?},{:?},{:?},{},{},{:?}",
            angular_to_mhz(a.delta_c),
            joule_to_mk(a.trap_depth_hold),
            a.budget.spont_recoil,
            a.budget.dipole_fluct,
            a.budget.trap_noise,
            a.budget.probe_work,
            opt(a.spont_share),
            opt(a.dipole_share),
            a.n_intervals
        );
    }
    s
}

pub fn oracle_csv(rows: &[ComparisonRow], eta_mhz: f64) -> String {
    let mut s = String::from(
        "g_mhz,delta_c_mhz,delta_a_eff_mhz,eta_mhz,photons_analytic,photons_oracle,excitation_analytic,excitation_oracle,\
interaction_analytic,interaction_oracle,err_mean_a,err_mean_sigma,err_photons,err_excitation,err_interaction,max_error\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            angular_to_mhz(r.g),
            angular_to_mhz(r.delta_c),
            angular_to_mhz(r.delta_a_eff),
            eta_mhz,
            r.analytic_photons,
            r.oracle_photons,
            r.analytic_excitation,
            r.oracle_excitation,
            r.analytic_interaction,
            r.oracle_interaction,
            r.err_mean_a,
            r.err_mean_sigma,
            r.err_photons,
            r.err_excitation,
            r.err_interaction,
            r.max_error()
        );
    }
    s
}

pub fn write_csv(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}

/// Columnar single-atom dump, whitespace separated, one header line.
pub struct TrajectoryDump {
    text: String,
    rows: usize,
}

impl Default for TrajectoryDump {
    fn default() -> Self {
        Self::new()
    }
}

impl TrajectoryDump {
    pub const HEADER: &'static str = "# t_s x_m y_m z_m px_kgms py_kgms pz_kgms photons excitation g_mhz";

    pub fn new() -> Self {
        TrajectoryDump { text: format!("{}\n", Self::HEADER), rows: 0 }
    }

    pub fn push(&mut self, s: &ParticleState, g: f64) {
        let _ = writeln!(
            self.text,
            "{:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {}",
            s.t,
            s.r.x,
            s.r.y,
            s.r.z,
            s.p.x,
            s.p.y,
            s.p.z,
            s.field.photon_number(),
            s.field.excitation(),
            angular_to_mhz(g)
        );
        self.rows += 1;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.text)
    }
}
