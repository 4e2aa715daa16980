//! Helpers shared by the integration tests: finite differences, random
//! fixtures and dense-algebra oracles that do not go through the library's
//! own factorization.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use radiomap_nigp::channel::path_loss_mean;
use radiomap_nigp::{ChannelParams, KernelHyper, Point2, SensingDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_point(rng: &mut ChaCha8Rng, side: f64) -> Point2 {
    Point2::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side))
}

/// Hyperparameters with a smoothing constant small enough that the smoothed
/// derivative forms equal the exact ones to ~1e-8 at separations >= 1 m.
pub fn tiny_dc_hyper(rng: &mut ChaCha8Rng) -> KernelHyper {
    KernelHyper {
        sigma_k: rng.gen_range(1.0..10.0),
        ell: rng.gen_range(20.0..200.0),
        d_c: rng.gen_range(1e-10..1e-8),
    }
}

pub fn random_dataset(rng: &mut ChaCha8Rng, channel: &ChannelParams, n: usize) -> SensingDataset {
    let pts: Vec<Point2> = (0..n).map(|_| uniform_point(rng, 300.0)).collect();
    let obs = pts
        .iter()
        .map(|p| path_loss_mean(channel, p).unwrap() + 6.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    SensingDataset::new(pts, obs).unwrap()
}

/// Point at least `min_sep` from every location in `avoid`.
pub fn point_away(rng: &mut ChaCha8Rng, avoid: &[Point2], min_sep: f64) -> Point2 {
    loop {
        let x = uniform_point(rng, 300.0);
        if avoid.iter().all(|a| x.distance(a) >= min_sep) {
            return x;
        }
    }
}

pub fn fd_grad(f: impl Fn(&Point2) -> f64, x: &Point2, h: f64) -> [f64; 2] {
    [
        (f(&Point2::new(x.x1 + h, x.x2)) - f(&Point2::new(x.x1 - h, x.x2))) / (2.0 * h),
        (f(&Point2::new(x.x1, x.x2 + h)) - f(&Point2::new(x.x1, x.x2 - h))) / (2.0 * h),
    ]
}

/// Row-major central-difference Hessian.
pub fn fd_hess(f: impl Fn(&Point2) -> f64, x: &Point2, h: f64) -> [f64; 4] {
    let at = |a: f64, b: f64| f(&Point2::new(x.x1 + a, x.x2 + b));
    let f0 = at(0.0, 0.0);
    let h11 = (at(h, 0.0) - 2.0 * f0 + at(-h, 0.0)) / (h * h);
    let h22 = (at(0.0, h) - 2.0 * f0 + at(0.0, -h)) / (h * h);
    let h12 = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
    [h11, h12, h12, h22]
}

/// Max-norm relative error of `got` against `want`.
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Covariance from scratch, written out independently of the library.
pub fn oracle_kernel(a: &Point2, b: &Point2, h: &KernelHyper) -> f64 {
    let d = ((a.x1 - b.x1).powi(2) + (a.x2 - b.x2).powi(2)).sqrt();
    h.sigma_k * h.sigma_k * (-(d + h.d_c) / h.ell).exp()
}

/// Posterior mean and variance by explicit dense inversion of `matrix`.
pub fn dense_posterior(
    matrix: &DMatrix<f64>,
    points: &[Point2],
    targets: &DVector<f64>,
    prior_at_x: f64,
    x: &Point2,
    h: &KernelHyper,
) -> (f64, f64) {
    let inv = matrix.clone().try_inverse().expect("invertible");
    let kv = DVector::from_iterator(points.len(), points.iter().map(|p| oracle_kernel(p, x, h)));
    let mean = prior_at_x + (kv.transpose() * &inv * targets)[0];
    let var = oracle_kernel(x, x, h) - (kv.transpose() * &inv * &kv)[0];
    (mean, var)
}
