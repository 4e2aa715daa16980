//! CSV tables and the run manifest.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value parses back to the identical `f64` and identical runs give
//! byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ConfigFile;
use crate::error::Result;
use crate::montecarlo::{CdfRow, Method, ProfileRow, SweepRow, TrialRecord};

pub const SWEEP_HEADER: &str = "method,sigma_x,outage_prob,ci_low,ci_high,n_samples";
pub const MARGIN_HEADER: &str = "method,sigma_x,sigma_delta_star,target_pout";
pub const CDF_HEADER: &str = "method,rate,cum_prob";
pub const PROFILE_HEADER: &str = "method,x1,mean,lower,upper,truth";
pub const RECORD_HEADER: &str = "trial_index,method,x1,x2,predicted_rate,true_capacity,outage,received_rate";

/// One row of the `sweep-margin` table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginRow {
    pub method: Method,
    pub sigma_x: f64,
    pub sigma_delta_star: f64,
    pub target_pout: f64,
}

/// Shortest decimal text that parses back to `v`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn table<T>(header: &str, rows: &[T], mut line: impl FnMut(&mut String, &T)) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(header);
    s.push('\n');
    for r in rows {
        line(&mut s, r);
        s.push('\n');
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    table(SWEEP_HEADER, rows, |s, r| {
        let e = &r.estimate;
        let _ = write!(
            s,
            "{},{},{},{},{},{}",
            e.method,
            fmt_f64(r.sigma_x),
            fmt_f64(e.outage_prob),
            fmt_f64(e.ci_low),
            fmt_f64(e.ci_high),
            e.n_samples
        );
    })
}

pub fn margin_csv(rows: &[MarginRow]) -> String {
    table(MARGIN_HEADER, rows, |s, r| {
        let _ = write!(
            s,
            "{},{},{},{}",
            r.method,
            fmt_f64(r.sigma_x),
            fmt_f64(r.sigma_delta_star),
            fmt_f64(r.target_pout)
        );
    })
}

pub fn cdf_csv(rows: &[CdfRow]) -> String {
    table(CDF_HEADER, rows, |s, r| {
        let _ = write!(s, "{},{},{}", r.method, fmt_f64(r.rate), fmt_f64(r.cum_prob));
    })
}

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    table(PROFILE_HEADER, rows, |s, r| {
        let _ = write!(
            s,
            "{},{},{},{},{},{}",
            r.method,
            fmt_f64(r.x1),
            fmt_f64(r.mean),
            fmt_f64(r.lower),
            fmt_f64(r.upper),
            fmt_f64(r.truth)
        );
    })
}

pub fn records_csv(rows: &[TrialRecord]) -> String {
    table(RECORD_HEADER, rows, |s, r| {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.trial_index,
            r.method,
            fmt_f64(r.test_point.x1),
            fmt_f64(r.test_point.x2),
            fmt_f64(r.predicted_rate),
            fmt_f64(r.true_capacity),
            r.outage as u8,
            fmt_f64(r.received_rate)
        );
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub master_seed: u64,
    pub config: ConfigFile,
    pub outputs: Vec<OutputFile>,
    pub duration_secs: f64,
    pub aborted_trials: usize,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes files into one directory and remembers their checksums.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)?;
        self.written.push(OutputFile {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
            bytes: contents.len(),
        });
        Ok(path)
    }

    /// Writes the manifest last, listing every file written before it.
    pub fn finish(
        self,
        command: &str,
        config: ConfigFile,
        master_seed: u64,
        duration_secs: f64,
        aborted_trials: usize,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            master_seed,
            config,
            outputs: self.written,
            duration_secs,
            aborted_trials,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| crate::error::Error::Config(e.to_string()))?;
        std::fs::write(self.dir.join(MANIFEST_NAME), json + "\n")?;
        Ok(manifest)
    }
}
