//! Smoothed exponential kernel `sigma_k² exp(-(d + d_c)/L)` and its spatial
//! derivatives, plus derivatives of a fitted posterior mean.
//!
//! The derivatives use `r_c = d + d_c` in every denominator. For the Hessian
//! this keeps the value at `x = x_i` finite (`-k/(L d_c)` on the diagonal);
//! away from the data it agrees with the exact derivative of the kernel up to
//! a relative bias of order `d_c / d`.

use std::f64::consts::LN_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::{path_loss_grad, path_loss_hess, ChannelParams, Point2};
use crate::error::{Error, Result};
use crate::gp::FittedModel;

/// Default smoothing constant added to distances [m].
pub const DEFAULT_D_C: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    /// Kernel amplitude [dB].
    pub sigma_k: f64,
    /// Length scale `L` [m] of `exp(-r/L)`.
    pub ell: f64,
    /// Distance smoothing constant [m].
    pub d_c: f64,
}

impl KernelHyper {
    /// Hyperparameters that reproduce the generative shadowing covariance:
    /// `L = d_cor / ln 2`, and `sigma_k = sigma_dB e^{d_c / 2L}` so that the
    /// smoothing offset does not shrink the prior variance.
    pub fn matched(channel: &ChannelParams, d_c: f64) -> Self {
        let ell = channel.d_cor / LN_2;
        Self { sigma_k: channel.sigma_db * (d_c / (2.0 * ell)).exp(), ell, d_c }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_k", self.sigma_k), ("ell", self.ell), ("d_c", self.d_c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("kernel.{name}: must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.sigma_k * self.sigma_k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Grad2 {
    pub g1: f64,
    pub g2: f64,
}

impl Grad2 {
    pub fn norm_sq(&self) -> f64 {
        self.g1 * self.g1 + self.g2 * self.g2
    }
}

impl std::ops::AddAssign for Grad2 {
    fn add_assign(&mut self, rhs: Self) {
        self.g1 += rhs.g1;
        self.g2 += rhs.g2;
    }
}

impl std::ops::Mul<f64> for Grad2 {
    type Output = Grad2;
    fn mul(self, s: f64) -> Grad2 {
        Grad2 { g1: self.g1 * s, g2: self.g2 * s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Hess2 {
    pub h11: f64,
    pub h12: f64,
    pub h21: f64,
    pub h22: f64,
}

impl Hess2 {
    fn from_row_major(h: [f64; 4]) -> Self {
        Hess2 { h11: h[0], h12: h[1], h21: h[2], h22: h[3] }
    }

    pub fn trace(&self) -> f64 {
        self.h11 + self.h22
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        (self.h11 * self.h11 + self.h12 * self.h12 + self.h21 * self.h21 + self.h22 * self.h22).sqrt()
    }
}

impl std::ops::AddAssign for Hess2 {
    fn add_assign(&mut self, rhs: Self) {
        self.h11 += rhs.h11;
        self.h12 += rhs.h12;
        self.h21 += rhs.h21;
        self.h22 += rhs.h22;
    }
}

impl std::ops::Mul<f64> for Hess2 {
    type Output = Hess2;
    fn mul(self, s: f64) -> Hess2 {
        Hess2 { h11: self.h11 * s, h12: self.h12 * s, h21: self.h21 * s, h22: self.h22 * s }
    }
}

/// Covariance between two locations.
pub fn kernel(xi: &Point2, xj: &Point2, hyper: &KernelHyper) -> f64 {
    let r_c = xi.distance(xj) + hyper.d_c;
    hyper.variance() * (-r_c / hyper.ell).exp()
}

pub fn kernel_matrix(points: &[Point2], hyper: &KernelHyper) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = kernel(&points[i], &points[i], hyper);
        for j in 0..i {
            let v = kernel(&points[i], &points[j], hyper);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Gradient of `kernel(·, xi)` at `x`: `-k (x - xi) / (L r_c)`.
pub fn kernel_grad(x: &Point2, xi: &Point2, hyper: &KernelHyper) -> Grad2 {
    let u1 = x.x1 - xi.x1;
    let u2 = x.x2 - xi.x2;
    let r_c = u1.hypot(u2) + hyper.d_c;
    let k = hyper.variance() * (-r_c / hyper.ell).exp();
    let c = -k / (hyper.ell * r_c);
    Grad2 { g1: c * u1, g2: c * u2 }
}

/// Hessian of `kernel(·, xi)` at `x`:
/// `k [ -δ_mn/(L r_c) + u_m u_n / r_c² (1/L² + 1/(L r_c)) ]`.
pub fn kernel_hess(x: &Point2, xi: &Point2, hyper: &KernelHyper) -> Hess2 {
    let u = [x.x1 - xi.x1, x.x2 - xi.x2];
    let ell = hyper.ell;
    let r_c = u[0].hypot(u[1]) + hyper.d_c;
    let k = hyper.variance() * (-r_c / ell).exp();
    let diag = -1.0 / (ell * r_c);
    let outer = (1.0 / (ell * ell) + 1.0 / (ell * r_c)) / (r_c * r_c);
    let off = k * u[0] * u[1] * outer;
    Hess2 { h11: k * (diag + u[0] * u[0] * outer), h12: off, h21: off, h22: k * (diag + u[1] * u[1] * outer) }
}

/// Gradient of the posterior mean `P̄(x) + Σ α_i k(x, x̃_i)`.
pub fn posterior_mean_grad(model: &FittedModel, x: &Point2) -> Result<Grad2> {
    let pg = path_loss_grad(&model.channel, x)?;
    let mut g = Grad2 { g1: pg[0], g2: pg[1] };
    for (xi, a) in model.dataset.noisy_locations.iter().zip(model.alpha.iter()) {
        g += kernel_grad(x, xi, &model.hyper) * *a;
    }
    Ok(g)
}

/// Hessian of the posterior mean. The kernel-sum part is always included;
/// the path-loss Hessian only when `include_mean_hessian` is set.
pub fn posterior_mean_hess(model: &FittedModel, x: &Point2, include_mean_hessian: bool) -> Result<Hess2> {
    let mut h = if include_mean_hessian {
        Hess2::from_row_major(path_loss_hess(&model.channel, x)?)
    } else {
        Hess2::default()
    };
    for (xi, a) in model.dataset.noisy_locations.iter().zip(model.alpha.iter()) {
        h += kernel_hess(x, xi, &model.hyper) * *a;
    }
    Ok(h)
}
