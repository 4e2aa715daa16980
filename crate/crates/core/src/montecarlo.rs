//! Monte-Carlo experiment protocol: per-trial channel generation, sensing,
//! fitting, rate selection and outage evaluation, plus the aggregations built
//! on top (outage estimates, σ_x sweeps, margin search, rate CDFs and the
//! one-dimensional profile demo).
//!
//! Every trial draws from its own stream derived from `(master_seed,
//! trial_index)`, and always consumes the same number of variates in the same
//! order. Changing σ_x, σ_y or the margin therefore reuses identical random
//! numbers (common random numbers), and results do not depend on how trials
//! are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{capacity, path_loss_mean, sample_shadow_field, ChannelParams, Point2};
use crate::error::{Error, Result};
use crate::gp::{
    fit_pure, predict, refit_noisy_input, FitOptions, GpMethod, NoiseParams, Posterior, SensingDataset,
};
use crate::kernel::KernelHyper;
use crate::rate::{pathloss_posterior, rate_for_posterior, RateConfig};

/// Resolution of the margin search [dB].
pub const MARGIN_STEP: f64 = 0.01;
/// z-value of the 95% Wilson interval.
pub const WILSON_Z: f64 = 1.959_963_984_540_054;
/// Observation noise of the default configuration [dB].
pub const DEFAULT_SIGMA_Y: f64 = 0.5;
/// Fraction of aborted trials above which a run fails.
pub const MAX_ABORTED_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PureGp,
    Nigp1,
    Nigp2,
    PathLoss,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::PureGp, Method::Nigp1, Method::Nigp2, Method::PathLoss];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::PureGp => "pure_gp",
            Method::Nigp1 => "nigp1",
            Method::Nigp2 => "nigp2",
            Method::PathLoss => "path_loss",
        }
    }

    pub fn gp(&self) -> Option<GpMethod> {
        match self {
            Method::PureGp => Some(GpMethod::PureGp),
            Method::Nigp1 => Some(GpMethod::Nigp1),
            Method::Nigp2 => Some(GpMethod::Nigp2),
            Method::PathLoss => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::Config(format!("unknown method '{s}' (expected pure_gp, nigp1, nigp2 or path_loss)"))
        })
    }
}

/// Everything needed to run trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Side of the square area `[0, side]²` [m].
    pub area_side: f64,
    pub channel: ChannelParams,
    pub hyper: KernelHyper,
    pub noise: NoiseParams,
    pub rate_cfg: RateConfig,
    pub fit: FitOptions,
    pub n_sensors: usize,
    pub n_test_points: usize,
    pub n_trials: usize,
    pub master_seed: u64,
    /// Sorted, without duplicates.
    pub methods: Vec<Method>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let channel = ChannelParams::default();
        Self {
            area_side: 300.0,
            channel,
            hyper: KernelHyper::matched(&channel, crate::kernel::DEFAULT_D_C),
            noise: NoiseParams::new(0.0, DEFAULT_SIGMA_Y),
            rate_cfg: RateConfig::default(),
            fit: FitOptions::default(),
            n_sensors: 100,
            n_test_points: 20,
            n_trials: 10_000,
            master_seed: 1,
            methods: Method::ALL.to_vec(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_side > 0.0 && self.area_side.is_finite()) {
            return Err(Error::Config(format!("area_side: must be > 0, got {}", self.area_side)));
        }
        for (name, v) in [
            ("n_sensors", self.n_sensors),
            ("n_test_points", self.n_test_points),
            ("n_trials", self.n_trials),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name}: must be >= 1")));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods: at least one method is required".into()));
        }
        self.channel.validate()?;
        self.hyper.validate()?;
        self.noise.validate()?;
        self.rate_cfg.validate()?;
        self.fit.validate()?;
        Ok(())
    }

    pub fn with_methods(mut self, methods: &[Method]) -> Self {
        let mut m = methods.to_vec();
        m.sort();
        m.dedup();
        self.methods = m;
        self
    }

    pub fn with_sigma_x(mut self, sigma_x: f64) -> Self {
        self.noise.sigma_x = sigma_x;
        self
    }

    fn needs_gp(&self) -> bool {
        self.methods.iter().any(|m| m.gp().is_some())
    }
}

/// Independent, replayable stream of one trial.
pub fn trial_rng(master_seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial_index);
    rng
}

/// Margin-independent outcome at one (trial, method, test point): the
/// predictive belief and the true received power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionSample {
    pub trial_index: u64,
    pub method: Method,
    pub test_point: Point2,
    pub posterior: Posterior,
    pub true_power: f64,
}

impl PredictionSample {
    pub fn record(&self, n0: f64, rate_cfg: &RateConfig) -> Result<TrialRecord> {
        let predicted_rate = rate_for_posterior(&self.posterior, n0, rate_cfg)?.rate;
        Ok(TrialRecord::new(
            self.trial_index,
            self.method,
            self.test_point,
            predicted_rate,
            capacity(self.true_power, n0),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    pub trial_index: u64,
    pub method: Method,
    pub test_point: Point2,
    pub predicted_rate: f64,
    pub true_capacity: f64,
    /// `predicted_rate > true_capacity`.
    pub outage: bool,
    /// `predicted_rate` without outage, zero otherwise.
    pub received_rate: f64,
}

impl TrialRecord {
    pub fn new(
        trial_index: u64,
        method: Method,
        test_point: Point2,
        predicted_rate: f64,
        true_capacity: f64,
    ) -> Self {
        let outage = predicted_rate > true_capacity;
        Self {
            trial_index,
            method,
            test_point,
            predicted_rate,
            true_capacity,
            outage,
            received_rate: if outage { 0.0 } else { predicted_rate },
        }
    }
}

/// Raw variates of one trial, before σ_x and σ_y are applied.
struct TrialDraw {
    sensors: Vec<Point2>,
    tests: Vec<Point2>,
    shadow: Vec<f64>,
    obs_noise: Vec<f64>,
    loc_noise: Vec<[f64; 2]>,
}

fn draw_trial(cfg: &SimConfig, trial_index: u64) -> Result<TrialDraw> {
    let mut rng = trial_rng(cfg.master_seed, trial_index);
    let side = cfg.area_side;
    let uniform_point = |rng: &mut ChaCha8Rng| Point2::new(rng.gen::<f64>() * side, rng.gen::<f64>() * side);
    let sensors: Vec<Point2> = (0..cfg.n_sensors).map(|_| uniform_point(&mut rng)).collect();
    let tests: Vec<Point2> = (0..cfg.n_test_points).map(|_| uniform_point(&mut rng)).collect();
    let all: Vec<Point2> = sensors.iter().chain(tests.iter()).copied().collect();
    let shadow = sample_shadow_field(&all, &cfg.channel, &mut rng)?.values;
    let obs_noise = (0..cfg.n_sensors).map(|_| rng.sample(StandardNormal)).collect();
    let loc_noise =
        (0..cfg.n_sensors).map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
    Ok(TrialDraw { sensors, tests, shadow, obs_noise, loc_noise })
}

/// Builds the estimator-visible dataset: observations at the true locations,
/// reported at the noisy ones.
fn sensing_dataset(
    channel: &ChannelParams,
    noise: &NoiseParams,
    noisy_axes: [bool; 2],
    sensors: &[Point2],
    shadow: &[f64],
    obs_noise: &[f64],
    loc_noise: &[[f64; 2]],
) -> Result<SensingDataset> {
    let mut noisy = Vec::with_capacity(sensors.len());
    let mut obs = Vec::with_capacity(sensors.len());
    let std_x = noise.location_std();
    for (i, x) in sensors.iter().enumerate() {
        obs.push(path_loss_mean(channel, x)? + shadow[i] + noise.sigma_y * obs_noise[i]);
        let e1 = if noisy_axes[0] { std_x * loc_noise[i][0] } else { 0.0 };
        let e2 = if noisy_axes[1] { std_x * loc_noise[i][1] } else { 0.0 };
        noisy.push(Point2::new(x.x1 + e1, x.x2 + e2));
    }
    SensingDataset::new(noisy, obs)
}

/// Posterior of every configured method at every query point.
fn evaluate_methods(
    cfg: &SimConfig,
    dataset: &SensingDataset,
    queries: &[Point2],
) -> Result<Vec<(Method, Vec<Posterior>)>> {
    let pure =
        if cfg.needs_gp() { Some(fit_pure(dataset, &cfg.channel, &cfg.hyper, &cfg.noise)?) } else { None };
    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let posts = match method.gp() {
            None => {
                queries.iter().map(|x| pathloss_posterior(&cfg.channel, x)).collect::<Result<Vec<_>>>()?
            }
            Some(gm) => {
                let pure = pure.as_ref().expect("fitted when a GP method is configured");
                let model = refit_noisy_input(pure, gm, &cfg.fit)?;
                queries.iter().map(|x| predict(&model, x)).collect::<Result<Vec<_>>>()?
            }
        };
        out.push((method, posts));
    }
    Ok(out)
}

/// Runs one trial and returns its margin-independent samples, method-major.
pub fn simulate_trial(cfg: &SimConfig, trial_index: u64) -> Result<Vec<PredictionSample>> {
    let draw = draw_trial(cfg, trial_index)?;
    let n = cfg.n_sensors;
    let dataset = sensing_dataset(
        &cfg.channel,
        &cfg.noise,
        cfg.fit.noisy_axes,
        &draw.sensors,
        &draw.shadow[..n],
        &draw.obs_noise,
        &draw.loc_noise,
    )?;
    let true_powers = draw
        .tests
        .iter()
        .zip(&draw.shadow[n..])
        .map(|(x, w)| Ok(path_loss_mean(&cfg.channel, x)? + w))
        .collect::<Result<Vec<f64>>>()?;
    let mut samples = Vec::with_capacity(cfg.methods.len() * draw.tests.len());
    for (method, posts) in evaluate_methods(cfg, &dataset, &draw.tests)? {
        for (j, post) in posts.into_iter().enumerate() {
            samples.push(PredictionSample {
                trial_index,
                method,
                test_point: draw.tests[j],
                posterior: post,
                true_power: true_powers[j],
            });
        }
    }
    Ok(samples)
}

/// One trial: channel generation, sensing, rate selection and outage evaluation.
pub fn run_trial(cfg: &SimConfig, trial_index: u64) -> Result<Vec<TrialRecord>> {
    simulate_trial(cfg, trial_index)?.iter().map(|s| s.record(cfg.channel.n0, &cfg.rate_cfg)).collect()
}

/// Samples of a whole run, in trial-index order.
#[derive(Debug, Clone)]
pub struct Batch {
    pub samples: Vec<PredictionSample>,
    pub aborted: Vec<u64>,
    pub n_trials: usize,
}

impl Batch {
    pub fn records(&self, n0: f64, rate_cfg: &RateConfig) -> Result<Vec<TrialRecord>> {
        self.samples.iter().map(|s| s.record(n0, rate_cfg)).collect()
    }

    /// Records with a per-method margin.
    pub fn records_with_margins(
        &self,
        n0: f64,
        p_out: f64,
        margin: impl Fn(Method) -> f64,
    ) -> Result<Vec<TrialRecord>> {
        self.samples
            .iter()
            .map(|s| s.record(n0, &RateConfig { p_out, sigma_delta: margin(s.method) }))
            .collect()
    }
}

/// Runs all trials of `cfg` on the current rayon pool.
pub fn run_batch(cfg: &SimConfig) -> Result<Batch> {
    cfg.validate()?;
    let results: Vec<(u64, Result<Vec<PredictionSample>>)> =
        (0..cfg.n_trials as u64).into_par_iter().map(|t| (t, simulate_trial(cfg, t))).collect();
    let mut samples = Vec::with_capacity(cfg.n_trials * cfg.n_test_points * cfg.methods.len());
    let mut aborted = Vec::new();
    for (t, r) in results {
        match r {
            Ok(s) => samples.extend(s),
            Err(e) => {
                log::warn!("trial {t} aborted: {e}");
                aborted.push(t);
            }
        }
    }
    if aborted.len() as f64 > MAX_ABORTED_FRACTION * cfg.n_trials as f64 {
        return Err(Error::TooManyAborted { aborted: aborted.len(), total: cfg.n_trials });
    }
    Ok(Batch { samples, aborted, n_trials: cfg.n_trials })
}

/// Outage probability of one method with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutageEstimate {
    pub method: Method,
    pub outage_prob: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
}

impl OutageEstimate {
    pub fn from_counts(method: Method, outages: usize, n: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(outages, n);
        Self { method, outage_prob: outages as f64 / n as f64, ci_low, ci_high, n_samples: n }
    }

    /// Half of the interval width.
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

/// 95% Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = WILSON_Z / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

/// Per-method outage counts over all (trial, test point) pairs.
pub fn estimate_outage(records: &[TrialRecord]) -> Vec<OutageEstimate> {
    let mut out = Vec::new();
    for method in Method::ALL {
        let (mut k, mut n) = (0usize, 0usize);
        for r in records.iter().filter(|r| r.method == method) {
            n += 1;
            k += r.outage as usize;
        }
        if n > 0 {
            out.push(OutageEstimate::from_counts(method, k, n));
        }
    }
    if out.is_empty() {
        log::warn!("no records to aggregate");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma_x: f64,
    pub estimate: OutageEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub aborted: usize,
}

/// Outage versus location noise, with the same trial streams at every σ_x.
pub fn sweep_sigma_x(cfg: &SimConfig, sigma_x_grid: &[f64]) -> Result<SweepTable> {
    if sigma_x_grid.is_empty() {
        return Err(Error::Config("sigma_x grid must not be empty".into()));
    }
    let mut rows = Vec::new();
    let mut aborted = 0;
    for &sx in sigma_x_grid {
        let c = cfg.clone().with_sigma_x(sx);
        let batch = run_batch(&c)?;
        aborted += batch.aborted.len();
        let records = batch.records(c.channel.n0, &c.rate_cfg)?;
        rows.extend(estimate_outage(&records).into_iter().map(|estimate| SweepRow { sigma_x: sx, estimate }));
    }
    Ok(SweepTable { rows, aborted })
}

/// Outage of `method` over `samples` at margin `sigma_delta`.
pub fn outage_at_margin(
    samples: &[PredictionSample],
    method: Method,
    n0: f64,
    p_out: f64,
    sigma_delta: f64,
) -> Result<OutageEstimate> {
    let cfg = RateConfig { p_out, sigma_delta };
    let (mut k, mut n) = (0usize, 0usize);
    for s in samples.iter().filter(|s| s.method == method) {
        n += 1;
        k += s.record(n0, &cfg)?.outage as usize;
    }
    if n == 0 {
        return Err(Error::Config(format!("no samples for method {method}")));
    }
    Ok(OutageEstimate::from_counts(method, k, n))
}

/// Smallest margin on the [`MARGIN_STEP`] grid inside `bracket` whose outage
/// over the fixed `samples` is at most `target`. When the lower end already
/// meets the target it is returned as is.
pub fn required_margin_from_samples(
    samples: &[PredictionSample],
    method: Method,
    n0: f64,
    p_out: f64,
    target: f64,
    bracket: [f64; 2],
) -> Result<f64> {
    let [low, high] = bracket;
    if !(p_out < 0.5) {
        return Err(Error::Config("margin search needs p_out < 0.5".into()));
    }
    if !(low >= 0.0 && high >= low && high.is_finite()) {
        return Err(Error::Config(format!("invalid margin bracket [{low}, {high}]")));
    }
    let mut lo = (low / MARGIN_STEP - 1e-9).ceil() as i64;
    let mut hi = (high / MARGIN_STEP + 1e-9).floor() as i64;
    let at = |i: i64| (i as f64) / (1.0 / MARGIN_STEP);
    let outage = |i: i64| outage_at_margin(samples, method, n0, p_out, at(i)).map(|e| e.outage_prob);
    let top = outage(hi)?;
    if top > target {
        return Err(Error::Bracket { low, high, target, outage_high: top });
    }
    if outage(lo)? <= target {
        return Ok(at(lo));
    }
    // invariant: outage(lo) > target >= outage(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if outage(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(at(hi))
}

/// Runs `cfg`'s trials once and searches the margin over that fixed set.
pub fn find_required_margin(cfg: &SimConfig, method: Method, target: f64, bracket: [f64; 2]) -> Result<f64> {
    let cfg = cfg.clone().with_methods(&[method]);
    let batch = run_batch(&cfg)?;
    required_margin_from_samples(&batch.samples, method, cfg.channel.n0, cfg.rate_cfg.p_out, target, bracket)
}

/// Sorted sample with CDF and quantile lookups.
#[derive(Debug, Clone)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| a.total_cmp(b));
        Self { sorted: values }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of values `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.sorted.len() as f64
    }

    /// Smallest value whose CDF reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.sorted.len();
        let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.sorted[idx]
    }

    pub fn max(&self) -> Option<f64> {
        self.sorted.last().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfRow {
    pub method: Method,
    pub rate: f64,
    pub cum_prob: f64,
}

/// Received-rate CDF per method, outage zeros included.
pub fn rate_cdf_by_method(records: &[TrialRecord]) -> Vec<(Method, EmpiricalCdf)> {
    Method::ALL
        .into_iter()
        .filter_map(|m| {
            let v: Vec<f64> = records.iter().filter(|r| r.method == m).map(|r| r.received_rate).collect();
            (!v.is_empty()).then(|| (m, EmpiricalCdf::new(v)))
        })
        .collect()
}

pub fn rate_cdf(records: &[TrialRecord], grid: &[f64]) -> Vec<CdfRow> {
    let mut rows = Vec::new();
    for (method, cdf) in rate_cdf_by_method(records) {
        rows.extend(grid.iter().map(|&rate| CdfRow { method, rate, cum_prob: cdf.cdf(rate) }));
    }
    rows
}

/// Evenly spaced rate grid from zero past the largest received rate.
pub fn default_rate_grid(records: &[TrialRecord], step: f64) -> Vec<f64> {
    let max = records.iter().map(|r| r.received_rate).fold(0.0, f64::max);
    let n = (max / step).ceil() as usize + 1;
    let per_unit = 1.0 / step;
    (0..=n).map(|k| k as f64 / per_unit).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileRow {
    pub method: Method,
    pub x1: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub truth: f64,
}

/// Half-width multiplier of the plotted 95% band.
pub const BAND_Z: f64 = 1.96;

/// One-dimensional demo: sensors and an evaluation grid on the line through
/// the transmitter (`x2 = x_tx.x2`), location noise on x1 only.
pub fn demo_1d(cfg: &SimConfig, n_grid: usize) -> Result<Vec<ProfileRow>> {
    cfg.validate()?;
    if n_grid < 2 {
        return Err(Error::Config("demo grid needs at least two points".into()));
    }
    let line = cfg.channel.x_tx.x2;
    let side = cfg.area_side;
    let mut rng = trial_rng(cfg.master_seed, 0);
    let sensors: Vec<Point2> =
        (0..cfg.n_sensors).map(|_| Point2::new(rng.gen::<f64>() * side, line)).collect();
    let grid: Vec<Point2> =
        (0..n_grid).map(|k| Point2::new(side * k as f64 / (n_grid - 1) as f64, line)).collect();
    let all: Vec<Point2> = sensors.iter().chain(grid.iter()).copied().collect();
    let shadow = sample_shadow_field(&all, &cfg.channel, &mut rng)?.values;
    let obs_noise: Vec<f64> = (0..cfg.n_sensors).map(|_| rng.sample(StandardNormal)).collect();
    let loc_noise: Vec<[f64; 2]> = (0..cfg.n_sensors).map(|_| [rng.sample(StandardNormal), 0.0]).collect();
    let mut cfg = cfg.clone();
    cfg.fit.noisy_axes = [true, false];
    let n = cfg.n_sensors;
    let dataset = sensing_dataset(
        &cfg.channel,
        &cfg.noise,
        cfg.fit.noisy_axes,
        &sensors,
        &shadow[..n],
        &obs_noise,
        &loc_noise,
    )?;
    let mut rows = Vec::new();
    for (method, posts) in evaluate_methods(&cfg, &dataset, &grid)? {
        for (k, post) in posts.iter().enumerate() {
            let truth = path_loss_mean(&cfg.channel, &grid[k])? + shadow[n + k];
            rows.push(ProfileRow {
                method,
                x1: grid[k].x1,
                mean: post.mean,
                lower: post.mean - BAND_Z * post.std,
                upper: post.mean + BAND_Z * post.std,
                truth,
            });
        }
    }
    Ok(rows)
}
