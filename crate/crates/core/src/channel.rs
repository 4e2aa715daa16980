//! Ground-truth radio environment: log-distance path loss plus spatially
//! correlated shadowing (exponential correlation that halves every `d_cor`).
//!
//! Everything is expressed in dB/dBm; the shadowing is Gaussian in that
//! domain.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_with_jitter;

/// Relative jitter added to the shadowing covariance diagonal before sampling.
pub const SHADOW_JITTER: f64 = 1e-9;

/// A location in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x1: f64,
    pub x2: f64,
}

impl Point2 {
    pub const fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x1 - other.x1).hypot(self.x2 - other.x2)
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x1, p.x2]
    }
}

/// Transmitter and propagation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// Transmit power [dBm].
    pub p_tx: f64,
    pub x_tx: Point2,
    /// Path-loss exponent.
    pub eta: f64,
    /// Shadowing standard deviation [dB].
    pub sigma_db: f64,
    /// Correlation distance [m]: shadowing covariance halves at this separation.
    pub d_cor: f64,
    /// Noise power [dBm] per unit bandwidth.
    pub n0: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self { p_tx: 10.0, x_tx: Point2::new(-10.0, 150.0), eta: 3.0, sigma_db: 6.0, d_cor: 50.0, n0: -174.0 }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("channel.{field}: {why}")));
        if !self.p_tx.is_finite() {
            return bad("p_tx", "must be finite");
        }
        if !self.x_tx.is_finite() {
            return bad("x_tx", "must be finite");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", "must be > 0");
        }
        if !(self.sigma_db >= 0.0 && self.sigma_db.is_finite()) {
            return bad("sigma_db", "must be >= 0");
        }
        if !(self.d_cor > 0.0 && self.d_cor.is_finite()) {
            return bad("d_cor", "must be > 0");
        }
        if !self.n0.is_finite() {
            return bad("n0", "must be finite");
        }
        Ok(())
    }
}

/// Jointly sampled shadowing values, one per point.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowField {
    pub points: Vec<Point2>,
    pub values: Vec<f64>,
}

fn tx_distance(params: &ChannelParams, x: &Point2) -> Result<f64> {
    let d = params.x_tx.distance(x);
    if d > 0.0 && d.is_finite() {
        Ok(d)
    } else {
        Err(Error::Domain(format!("location ({}, {}) coincides with the transmitter", x.x1, x.x2)))
    }
}

/// Deterministic mean received power `P_tx - 10 eta log10 d` [dBm].
pub fn path_loss_mean(params: &ChannelParams, x: &Point2) -> Result<f64> {
    let d = tx_distance(params, x)?;
    Ok(params.p_tx - 10.0 * params.eta * d.log10())
}

/// Gradient of [`path_loss_mean`] with respect to the receiver location.
pub fn path_loss_grad(params: &ChannelParams, x: &Point2) -> Result<[f64; 2]> {
    let d = tx_distance(params, x)?;
    let c = -10.0 * params.eta / std::f64::consts::LN_10 / (d * d);
    Ok([c * (x.x1 - params.x_tx.x1), c * (x.x2 - params.x_tx.x2)])
}

/// Hessian of [`path_loss_mean`], row-major `[h11, h12, h21, h22]`.
pub fn path_loss_hess(params: &ChannelParams, x: &Point2) -> Result<[f64; 4]> {
    let d = tx_distance(params, x)?;
    let d2 = d * d;
    let c = -10.0 * params.eta / std::f64::consts::LN_10;
    let u = [x.x1 - params.x_tx.x1, x.x2 - params.x_tx.x2];
    let mut h = [0.0; 4];
    for m in 0..2 {
        for n in 0..2 {
            let delta = if m == n { 1.0 } else { 0.0 };
            h[2 * m + n] = c * (delta / d2 - 2.0 * u[m] * u[n] / (d2 * d2));
        }
    }
    Ok(h)
}

/// Shadowing covariance between two points `d` meters apart [dB²].
pub fn shadow_cov(d: f64, sigma_db: f64, d_cor: f64) -> f64 {
    sigma_db * sigma_db * (-(d / d_cor) * LN_2).exp()
}

/// Draws one realization of the shadowing at `points` from the zero-mean
/// Gaussian with covariance [`shadow_cov`].
pub fn sample_shadow_field<R: Rng + ?Sized>(
    points: &[Point2],
    params: &ChannelParams,
    rng: &mut R,
) -> Result<ShadowField> {
    if points.is_empty() {
        return Err(Error::Domain("shadow field needs at least one point".into()));
    }
    let n = points.len();
    // The normals are always drawn so the stream advances identically
    // regardless of sigma_db.
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    if params.sigma_db == 0.0 {
        return Ok(ShadowField { points: points.to_vec(), values: vec![0.0; n] });
    }
    let cov = DMatrix::from_fn(n, n, |i, j| {
        shadow_cov(points[i].distance(&points[j]), params.sigma_db, params.d_cor)
    });
    let jitter = SHADOW_JITTER * params.sigma_db * params.sigma_db;
    let (chol, _) = cholesky_with_jitter(&cov, jitter, "shadowing covariance")?;
    let values = chol.l() * z;
    Ok(ShadowField { points: points.to_vec(), values: values.iter().copied().collect() })
}

/// Received power `path_loss_mean + shadow_value` [dBm].
pub fn received_power(params: &ChannelParams, x: &Point2, shadow_value: f64) -> Result<f64> {
    Ok(path_loss_mean(params, x)? + shadow_value)
}

/// Shannon capacity `log2(1 + 10^((p_rx - n0)/10))` [bps/Hz].
pub fn capacity(p_rx: f64, n0: f64) -> f64 {
    crate::rate::rate_from_snr(p_rx - n0)
}
