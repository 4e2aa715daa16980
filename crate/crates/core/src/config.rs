//! TOML run configuration.
//!
//! Every key is optional; missing keys take the defaults of
//! [`SimConfig::default`] and [`ExperimentConfig::default`]. Unknown keys are
//! rejected.
//!
//! ```toml
//! seed = 7
//! trials = 2000
//!
//! [channel]
//! sigma_db = 8.0
//!
//! [noise]
//! sigma_x = 10.0          # m² per axis under the default location_scale
//!
//! [experiment]
//! sigma_x_grid = [0.0, 10.0, 20.0]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, Point2};
use crate::error::{Error, Result};
use crate::gp::{FitOptions, LocationNoiseScale, NoiseParams};
use crate::kernel::{KernelHyper, DEFAULT_D_C};
use crate::montecarlo::{Method, SimConfig};
use crate::rate::RateConfig;

/// Parameters of the individual experiments, beyond the shared trial setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// σ_x values of `sweep-sigma-x`.
    pub sigma_x_grid: Vec<f64>,
    /// σ_x values of `sweep-margin`.
    pub margin_sigma_x: Vec<f64>,
    /// Search interval of the margin [dB].
    pub margin_bracket: [f64; 2],
    /// Outage target of the margin search; `p_out` when absent.
    pub margin_target: Option<f64>,
    /// σ_x of the `rate-cdf` run.
    pub cdf_sigma_x: f64,
    /// Spacing of the rate grid the CDF is evaluated on [bps/Hz].
    pub cdf_rate_step: f64,
    /// σ_x of `demo-1d`.
    pub demo_sigma_x: f64,
    /// Sensors placed on the demo line.
    pub demo_sensors: usize,
    /// Evaluation points on the demo line.
    pub demo_grid_points: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sigma_x_grid: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            margin_sigma_x: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            margin_bracket: [0.0, 3.0],
            margin_target: None,
            cdf_sigma_x: 10.0,
            cdf_rate_step: 0.05,
            demo_sigma_x: 10.0,
            demo_sensors: 20,
            demo_grid_points: 301,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("experiment.{field}: {why}")));
        for (field, grid) in [("sigma_x_grid", &self.sigma_x_grid), ("margin_sigma_x", &self.margin_sigma_x)]
        {
            if grid.is_empty() {
                return bad(field, "must not be empty".into());
            }
            if let Some(v) = grid.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return bad(field, format!("values must be >= 0, got {v}"));
            }
        }
        let [lo, hi] = self.margin_bracket;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return bad("margin_bracket", format!("need 0 <= low <= high, got [{lo}, {hi}]"));
        }
        if let Some(t) = self.margin_target {
            if !(t > 0.0 && t < 0.5) {
                return bad("margin_target", format!("must lie in (0, 0.5), got {t}"));
            }
        }
        for (field, v) in [("cdf_sigma_x", self.cdf_sigma_x), ("demo_sigma_x", self.demo_sigma_x)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(field, format!("must be >= 0, got {v}"));
            }
        }
        if !(self.cdf_rate_step > 0.0 && self.cdf_rate_step.is_finite()) {
            return bad("cdf_rate_step", format!("must be > 0, got {}", self.cdf_rate_step));
        }
        if self.demo_sensors == 0 {
            return bad("demo_sensors", "must be >= 1".into());
        }
        if self.demo_grid_points < 2 {
            return bad("demo_grid_points", "must be >= 2".into());
        }
        Ok(())
    }
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { sim: SimConfig::default(), experiment: ExperimentConfig::default() }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.experiment.validate()
    }

    /// Outage target of the margin search.
    pub fn margin_target(&self) -> f64 {
        self.experiment.margin_target.unwrap_or(self.sim.rate_cfg.p_out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ChannelSection {
    p_tx: f64,
    x_tx: [f64; 2],
    eta: f64,
    sigma_db: f64,
    d_cor: f64,
    n0: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection::from(&ChannelParams::default())
    }
}

impl From<&ChannelParams> for ChannelSection {
    fn from(c: &ChannelParams) -> Self {
        Self { p_tx: c.p_tx, x_tx: c.x_tx.into(), eta: c.eta, sigma_db: c.sigma_db, d_cor: c.d_cor, n0: c.n0 }
    }
}

impl From<&ChannelSection> for ChannelParams {
    fn from(c: &ChannelSection) -> Self {
        Self {
            p_tx: c.p_tx,
            x_tx: Point2::from(c.x_tx),
            eta: c.eta,
            sigma_db: c.sigma_db,
            d_cor: c.d_cor,
            n0: c.n0,
        }
    }
}

/// Absent `sigma_k` / `ell` are matched to the channel's shadowing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct KernelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ell: Option<f64>,
    d_c: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { sigma_k: None, ell: None, d_c: DEFAULT_D_C }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct NoiseSection {
    sigma_x: f64,
    sigma_y: f64,
    location_scale: LocationNoiseScale,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = SimConfig::default().noise;
        Self { sigma_x: n.sigma_x, sigma_y: n.sigma_y, location_scale: n.location_scale }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RateSection {
    p_out: f64,
    sigma_delta: f64,
}

impl Default for RateSection {
    fn default() -> Self {
        let r = RateConfig::default();
        Self { p_out: r.p_out, sigma_delta: r.sigma_delta }
    }
}

/// On-disk layout of a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    seed: u64,
    trials: usize,
    area_side: f64,
    n_sensors: usize,
    n_test_points: usize,
    methods: Vec<Method>,
    channel: ChannelSection,
    kernel: KernelSection,
    noise: NoiseSection,
    rate: RateSection,
    gp: FitOptions,
    experiment: ExperimentConfig,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            seed: s.master_seed,
            trials: s.n_trials,
            area_side: s.area_side,
            n_sensors: s.n_sensors,
            n_test_points: s.n_test_points,
            methods: s.methods,
            channel: ChannelSection::default(),
            kernel: KernelSection::default(),
            noise: NoiseSection::default(),
            rate: RateSection::default(),
            gp: FitOptions::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl ConfigFile {
    /// Resolves defaults and validates.
    pub fn resolve(&self) -> Result<RunConfig> {
        let channel = ChannelParams::from(&self.channel);
        channel.validate()?;
        let matched = KernelHyper::matched(&channel, self.kernel.d_c);
        let hyper = KernelHyper {
            sigma_k: self.kernel.sigma_k.unwrap_or(matched.sigma_k),
            ell: self.kernel.ell.unwrap_or(matched.ell),
            d_c: self.kernel.d_c,
        };
        let sim = SimConfig {
            area_side: self.area_side,
            channel,
            hyper,
            noise: NoiseParams {
                sigma_x: self.noise.sigma_x,
                sigma_y: self.noise.sigma_y,
                location_scale: self.noise.location_scale,
            },
            rate_cfg: RateConfig { p_out: self.rate.p_out, sigma_delta: self.rate.sigma_delta },
            fit: self.gp,
            n_sensors: self.n_sensors,
            n_test_points: self.n_test_points,
            n_trials: self.trials,
            master_seed: self.seed,
            methods: Vec::new(),
        }
        .with_methods(&self.methods);
        let run = RunConfig { sim, experiment: self.experiment.clone() };
        run.validate()?;
        Ok(run)
    }

    /// Snapshot of a resolved configuration, with every value explicit.
    pub fn snapshot(run: &RunConfig) -> Self {
        let s = &run.sim;
        Self {
            seed: s.master_seed,
            trials: s.n_trials,
            area_side: s.area_side,
            n_sensors: s.n_sensors,
            n_test_points: s.n_test_points,
            methods: s.methods.clone(),
            channel: ChannelSection::from(&s.channel),
            kernel: KernelSection {
                sigma_k: Some(s.hyper.sigma_k),
                ell: Some(s.hyper.ell),
                d_c: s.hyper.d_c,
            },
            noise: NoiseSection {
                sigma_x: s.noise.sigma_x,
                sigma_y: s.noise.sigma_y,
                location_scale: s.noise.location_scale,
            },
            rate: RateSection { p_out: s.rate_cfg.p_out, sigma_delta: s.rate_cfg.sigma_delta },
            gp: s.fit,
            experiment: run.experiment.clone(),
        }
    }
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    file.resolve()
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// TOML text that parses back to `run`.
pub fn serialize_config(run: &RunConfig) -> Result<String> {
    // TOML integers are signed 64-bit
    if run.sim.master_seed > i64::MAX as u64 {
        return Err(Error::Config(format!("seed: {} does not fit a TOML integer", run.sim.master_seed)));
    }
    toml::to_string(&ConfigFile::snapshot(run)).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let run = parse_config_str("").unwrap();
        assert_eq!(run, RunConfig::default());
        let c = &run.sim.channel;
        assert_eq!((c.p_tx, c.eta, c.sigma_db, c.d_cor, c.n0), (10.0, 3.0, 6.0, 50.0, -174.0));
        assert_eq!(c.x_tx, Point2::new(-10.0, 150.0));
        assert_eq!((run.sim.n_sensors, run.sim.n_test_points, run.sim.area_side), (100, 20, 300.0));
        assert_eq!(run.sim.rate_cfg.p_out, 1e-3);
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = parse_config_str("[rate]\np_out = 1.5\n").unwrap_err().to_string();
        assert!(err.contains("rate.p_out"), "{err}");
        let err = parse_config_str("[channel]\neta = -1.0\n").unwrap_err().to_string();
        assert!(err.contains("channel.eta"), "{err}");
        let err = parse_config_str("[experiment]\nsigma_x_grid = []\n").unwrap_err().to_string();
        assert!(err.contains("experiment.sigma_x_grid"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_config_str("[channel]\nsigma = 6.0\n").unwrap_err().to_string();
        assert!(err.contains("sigma"), "{err}");
        assert!(parse_config_str("bogus = 1\n").is_err());
        assert!(parse_config_str("[gp]\niterations = 2\nfoo = true\n").is_err());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let run = parse_config_str(
            "seed = 9\nmethods = [\"nigp2\", \"pure_gp\"]\n[noise]\nsigma_x = 20.0 # m²\n[kernel]\nd_c = 0.5\n",
        )
        .unwrap();
        assert_eq!(run.sim.master_seed, 9);
        assert_eq!(run.sim.methods, vec![Method::PureGp, Method::Nigp2]);
        assert_eq!(run.sim.noise.sigma_x, 20.0);
        assert_eq!(run.sim.noise.sigma_y, SimConfig::default().noise.sigma_y);
        assert_eq!(run.sim.hyper, KernelHyper::matched(&run.sim.channel, 0.5));
    }

    #[test]
    fn round_trip() {
        let mut run = RunConfig::default();
        run.sim.noise.sigma_x = 0.1 + 0.2;
        run.sim.noise.location_scale = LocationNoiseScale::StdDev;
        run.sim.hyper.sigma_k = 5.5;
        run.sim.fit.noisy_axes = [true, false];
        run.experiment.margin_target = Some(2e-3);
        let text = serialize_config(&run).unwrap();
        assert_eq!(parse_config_str(&text).unwrap(), run);
    }
}
