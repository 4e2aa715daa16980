//! Gaussian-process regression of received power around the path-loss mean,
//! with the noisy-input corrections that turn location noise into extra
//! per-observation output variance.
//!
//! All three models share the same predictor; they differ only in the
//! diagonal added to the kernel matrix before factorization:
//!
//! * pure GP: `K + σ_y² I`
//! * first order: `+ diag(∇f̄ᵀ Σ_x ∇f̄)`
//! * second order: `+ diag(½ tr[(∇²f̄ Σ_x)²])`
//!
//! where `f̄` is the posterior mean of the previous pass evaluated at the
//! reported (noisy) sensing locations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::channel::{path_loss_mean, ChannelParams, Point2};
use crate::error::{Error, Result};
use crate::kernel::{kernel, kernel_matrix, posterior_mean_grad, posterior_mean_hess, KernelHyper};
use crate::linalg::cholesky_with_jitter;

/// Relative jitter (in units of `sigma_k²`) always added to the diagonal.
pub const FIT_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GpMethod {
    PureGp,
    Nigp1,
    Nigp2,
}

impl GpMethod {
    pub const ALL: [GpMethod; 3] = [GpMethod::PureGp, GpMethod::Nigp1, GpMethod::Nigp2];
}

/// Reported sensing locations and the powers measured there.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingDataset {
    pub noisy_locations: Vec<Point2>,
    pub observations: Vec<f64>,
}

impl SensingDataset {
    pub fn new(noisy_locations: Vec<Point2>, observations: Vec<f64>) -> Result<Self> {
        if noisy_locations.is_empty() {
            return Err(Error::Domain("dataset must contain at least one sample".into()));
        }
        if noisy_locations.len() != observations.len() {
            return Err(Error::Domain(format!(
                "dataset has {} locations but {} observations",
                noisy_locations.len(),
                observations.len()
            )));
        }
        Ok(Self { noisy_locations, observations })
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }
}

/// How the configured `sigma_x` maps onto the per-axis location covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationNoiseScale {
    /// `Σ_x = diag(σ_x, σ_x)`: `sigma_x` is the per-axis variance [m²].
    #[default]
    Variance,
    /// `Σ_x = diag(σ_x², σ_x²)`: `sigma_x` is the per-axis standard deviation [m].
    StdDev,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Location noise level per axis, see [`LocationNoiseScale`].
    pub sigma_x: f64,
    /// Observation noise standard deviation [dB].
    pub sigma_y: f64,
    pub location_scale: LocationNoiseScale,
}

impl NoiseParams {
    pub fn new(sigma_x: f64, sigma_y: f64) -> Self {
        Self { sigma_x, sigma_y, location_scale: LocationNoiseScale::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_x", self.sigma_x), ("sigma_y", self.sigma_y)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("noise.{name}: must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Per-axis variance of the location error [m²].
    pub fn location_variance(&self) -> f64 {
        match self.location_scale {
            LocationNoiseScale::Variance => self.sigma_x,
            LocationNoiseScale::StdDev => self.sigma_x * self.sigma_x,
        }
    }

    /// Per-axis standard deviation of the location error [m].
    pub fn location_std(&self) -> f64 {
        match self.location_scale {
            LocationNoiseScale::Variance => self.sigma_x.sqrt(),
            LocationNoiseScale::StdDev => self.sigma_x,
        }
    }
}

/// Knobs of the noisy-input correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Number of correction passes; each pass differentiates the previous model.
    pub iterations: usize,
    /// Add the path-loss Hessian to the kernel-sum Hessian in the second-order term.
    pub include_mean_hessian: bool,
    /// Subtract `½ tr(∇²f̄ Σ_x)` from the observations in the second-order fit.
    pub apply_mean_shift: bool,
    /// Axes that carry location noise; `[true, false]` restricts it to x1.
    pub noisy_axes: [bool; 2],
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { iterations: 1, include_mean_hessian: false, apply_mean_shift: false, noisy_axes: [true, true] }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("gp.iterations: must be >= 1".into()));
        }
        Ok(())
    }

    fn location_variances(&self, noise: &NoiseParams) -> [f64; 2] {
        let v = noise.location_variance();
        [if self.noisy_axes[0] { v } else { 0.0 }, if self.noisy_axes[1] { v } else { 0.0 }]
    }
}

/// Trained GP state. Immutable once built.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub method: GpMethod,
    pub dataset: SensingDataset,
    pub channel: ChannelParams,
    pub hyper: KernelHyper,
    pub noise: NoiseParams,
    pub options: FitOptions,
    /// Kernel matrix of the sensing locations, without any diagonal terms.
    pub kernel_matrix: DMatrix<f64>,
    /// Path-loss mean at each sensing location.
    pub prior_mean: Vec<f64>,
    /// First-order correction per observation (zero for the pure GP).
    pub first_order: Vec<f64>,
    /// Second-order correction per observation (zero unless second order).
    pub second_order: Vec<f64>,
    /// Mean shift subtracted from the observations (zero unless enabled).
    pub mean_shift: Vec<f64>,
    /// Jitter that the factorization finally needed.
    pub jitter: f64,
    pub factor: Cholesky<f64, Dyn>,
    pub alpha: DVector<f64>,
}

/// Predictive distribution of the received power at one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    /// Mean [dBm].
    pub mean: f64,
    /// Standard deviation [dB].
    pub std: f64,
}

impl FittedModel {
    /// The effective covariance matrix `K'` (or its corrected variant) that
    /// was factorized, jitter included.
    pub fn effective_matrix(&self) -> DMatrix<f64> {
        let mut m = self.kernel_matrix.clone();
        let base = self.noise.sigma_y * self.noise.sigma_y + self.jitter;
        for i in 0..m.nrows() {
            m[(i, i)] += base + self.first_order[i] + self.second_order[i];
        }
        m
    }

    /// Residual targets `Y - P̄ - shift` that alpha was solved against.
    pub fn targets(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dataset.n(),
            (0..self.dataset.n())
                .map(|i| self.dataset.observations[i] - self.prior_mean[i] - self.mean_shift[i]),
        )
    }

    /// Posterior variance before clamping at zero.
    pub fn predict_raw(&self, x_star: &Point2) -> Result<(f64, f64)> {
        let prior = path_loss_mean(&self.channel, x_star)?;
        let kvec = DVector::from_iterator(
            self.dataset.n(),
            self.dataset.noisy_locations.iter().map(|xi| kernel(xi, x_star, &self.hyper)),
        );
        let mean = prior + kvec.dot(&self.alpha);
        let v = self
            .factor
            .l_dirty()
            .solve_lower_triangular(&kvec)
            .expect("cholesky factor has a positive diagonal");
        let var = kernel(x_star, x_star, &self.hyper) - v.norm_squared();
        Ok((mean, var))
    }

    pub fn predict(&self, x_star: &Point2) -> Result<Posterior> {
        predict(self, x_star)
    }
}

fn solve(
    method: GpMethod,
    dataset: &SensingDataset,
    channel: &ChannelParams,
    hyper: &KernelHyper,
    noise: &NoiseParams,
    options: &FitOptions,
    kmat: DMatrix<f64>,
    prior_mean: Vec<f64>,
    first_order: Vec<f64>,
    second_order: Vec<f64>,
    mean_shift: Vec<f64>,
) -> Result<FittedModel> {
    let n = dataset.n();
    let mut eff = kmat.clone();
    let base = noise.sigma_y * noise.sigma_y;
    for i in 0..n {
        eff[(i, i)] += base + first_order[i] + second_order[i];
    }
    let (factor, jitter) = cholesky_with_jitter(&eff, FIT_JITTER * hyper.variance(), "GP covariance")?;
    let targets =
        DVector::from_iterator(n, (0..n).map(|i| dataset.observations[i] - prior_mean[i] - mean_shift[i]));
    let alpha = factor.solve(&targets);
    Ok(FittedModel {
        method,
        dataset: dataset.clone(),
        channel: *channel,
        hyper: *hyper,
        noise: *noise,
        options: *options,
        kernel_matrix: kmat,
        prior_mean,
        first_order,
        second_order,
        mean_shift,
        jitter,
        factor,
        alpha,
    })
}

/// Pure GP: factorizes `K + σ_y² I` and solves for the weights.
pub fn fit_pure(
    dataset: &SensingDataset,
    channel: &ChannelParams,
    hyper: &KernelHyper,
    noise: &NoiseParams,
) -> Result<FittedModel> {
    let prior_mean =
        dataset.noisy_locations.iter().map(|x| path_loss_mean(channel, x)).collect::<Result<Vec<_>>>()?;
    let kmat = kernel_matrix(&dataset.noisy_locations, hyper);
    let n = dataset.n();
    solve(
        GpMethod::PureGp,
        dataset,
        channel,
        hyper,
        noise,
        &FitOptions::default(),
        kmat,
        prior_mean,
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    )
}

/// Per-observation noisy-input corrections derived from `model`'s posterior
/// mean: `(first order, second order, mean shift)`.
pub fn input_noise_terms(
    model: &FittedModel,
    second_order: bool,
    noise: &NoiseParams,
    options: &FitOptions,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = model.dataset.n();
    let [s1, s2] = options.location_variances(noise);
    let mut first = vec![0.0; n];
    let mut second = vec![0.0; n];
    let mut shift = vec![0.0; n];
    if s1 == 0.0 && s2 == 0.0 {
        return Ok((first, second, shift));
    }
    for (i, x) in model.dataset.noisy_locations.iter().enumerate() {
        let g = posterior_mean_grad(model, x)?;
        first[i] = s1 * g.g1 * g.g1 + s2 * g.g2 * g.g2;
        if second_order {
            let h = posterior_mean_hess(model, x, options.include_mean_hessian)?;
            // tr[(H Σ)²] with Σ = diag(s1, s2)
            let tr_sq = h.h11 * h.h11 * s1 * s1 + 2.0 * h.h12 * h.h21 * s1 * s2 + h.h22 * h.h22 * s2 * s2;
            second[i] = 0.5 * tr_sq;
            if options.apply_mean_shift {
                shift[i] = 0.5 * (h.h11 * s1 + h.h22 * s2);
            }
        }
    }
    Ok((first, second, shift))
}

/// Refits a pure-GP model with a noisy-input correction of the given order.
pub fn refit_noisy_input(pure: &FittedModel, method: GpMethod, options: &FitOptions) -> Result<FittedModel> {
    options.validate()?;
    let second = match method {
        GpMethod::PureGp => return Ok(pure.clone()),
        GpMethod::Nigp1 => false,
        GpMethod::Nigp2 => true,
    };
    let noise = pure.noise;
    let mut current: Option<FittedModel> = None;
    for _ in 0..options.iterations {
        let source = current.as_ref().unwrap_or(pure);
        let (first, second_terms, shift) = input_noise_terms(source, second, &noise, options)?;
        current = Some(solve(
            method,
            &pure.dataset,
            &pure.channel,
            &pure.hyper,
            &noise,
            options,
            pure.kernel_matrix.clone(),
            pure.prior_mean.clone(),
            first,
            second_terms,
            shift,
        )?);
    }
    Ok(current.expect("iterations >= 1"))
}

/// First-order noisy-input GP.
pub fn fit_nigp1(
    dataset: &SensingDataset,
    channel: &ChannelParams,
    hyper: &KernelHyper,
    noise: &NoiseParams,
    options: &FitOptions,
) -> Result<FittedModel> {
    let pure = fit_pure(dataset, channel, hyper, noise)?;
    refit_noisy_input(&pure, GpMethod::Nigp1, options)
}

/// Second-order noisy-input GP.
pub fn fit_nigp2(
    dataset: &SensingDataset,
    channel: &ChannelParams,
    hyper: &KernelHyper,
    noise: &NoiseParams,
    options: &FitOptions,
) -> Result<FittedModel> {
    let pure = fit_pure(dataset, channel, hyper, noise)?;
    refit_noisy_input(&pure, GpMethod::Nigp2, options)
}

pub fn fit(
    method: GpMethod,
    dataset: &SensingDataset,
    channel: &ChannelParams,
    hyper: &KernelHyper,
    noise: &NoiseParams,
    options: &FitOptions,
) -> Result<FittedModel> {
    match method {
        GpMethod::PureGp => fit_pure(dataset, channel, hyper, noise),
        GpMethod::Nigp1 => fit_nigp1(dataset, channel, hyper, noise, options),
        GpMethod::Nigp2 => fit_nigp2(dataset, channel, hyper, noise, options),
    }
}

/// Posterior mean and standard deviation at `x_star`; the variance is
/// clamped at zero.
pub fn predict(model: &FittedModel, x_star: &Point2) -> Result<Posterior> {
    let (mean, var) = model.predict_raw(x_star)?;
    if var < -1e-8 * model.hyper.variance() {
        log::warn!("negative predictive variance {var:e} at ({}, {}) clamped to zero", x_star.x1, x_star.x2);
    }
    Ok(Posterior { mean, std: var.max(0.0).sqrt() })
}
