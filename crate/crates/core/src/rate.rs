//! Outage-constrained rate selection from a Gaussian belief over the received
//! power.
//!
//! With `P_rx ~ N(mean, std²)`, the largest rate whose outage probability
//! equals `p_out` follows from the `p_out` quantile of the SNR:
//! `Γ = mean - N0 + √2 (std + σ_δ) erfinv(2 p_out - 1)` and
//! `R = log2(1 + 10^(Γ/10))`.

use std::f64::consts::{LN_2, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::channel::{path_loss_mean, ChannelParams, Point2};
use crate::error::{Error, Result};
use crate::gp::{predict, FittedModel, Posterior};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    /// Target outage probability.
    pub p_out: f64,
    /// Margin added to the predictive standard deviation [dB].
    pub sigma_delta: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self { p_out: 1e-3, sigma_delta: 0.0 }
    }
}

impl RateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_out > 0.0 && self.p_out < 1.0) {
            return Err(Error::Config(format!("rate.p_out: must lie in (0, 1), got {}", self.p_out)));
        }
        if !(self.sigma_delta >= 0.0 && self.sigma_delta.is_finite()) {
            return Err(Error::Config(format!("rate.sigma_delta: must be >= 0, got {}", self.sigma_delta)));
        }
        Ok(())
    }

    /// `√2 erfinv(2 p_out - 1)`, the standard normal quantile at `p_out`.
    pub fn quantile(&self) -> Result<f64> {
        Ok(SQRT_2 * erfinv(2.0 * self.p_out - 1.0)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateDecision {
    /// Outage SNR [dB].
    pub gamma_db: f64,
    /// Selected rate [bps/Hz].
    pub rate: f64,
}

impl RateDecision {
    pub fn from_snr(gamma_db: f64) -> Self {
        Self { gamma_db, rate: rate_from_snr(gamma_db) }
    }
}

// Acklam's rational approximation of the standard normal quantile
// (relative error below 1.2e-9), refined below by a Newton step on erf.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_690e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] =
    [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];
const P_LOW: f64 = 0.02425;

/// Normal quantile for `0 < p <= 0.5`.
fn lower_normal_quantile(p: f64) -> f64 {
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Inverse error function on `(-1, 1)`.
pub fn erfinv(u: f64) -> Result<f64> {
    if !(u.abs() < 1.0) {
        return Err(Error::Domain(format!("erfinv argument {u} outside (-1, 1)")));
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    // Solve on the negative half, where 1 - |u| is exact and the tail keeps
    // full relative precision, then restore the sign.
    let a = u.abs();
    let tail = 1.0 - a;
    let x0 = lower_normal_quantile(0.5 * tail) / SQRT_2;
    let y = -x0;
    // erf(x0) - (-a) = erfc(y) - (1 - a)
    let residual = libm::erfc(y) - tail;
    let slope = std::f64::consts::FRAC_2_SQRT_PI * (-x0 * x0).exp();
    let x = x0 - residual / slope;
    Ok(if u > 0.0 { -x } else { x })
}

/// `log2(1 + 10^(gamma_db/10))`.
pub fn rate_from_snr(gamma_db: f64) -> f64 {
    10f64.powf(gamma_db / 10.0).ln_1p() / LN_2
}

/// Inverse of [`rate_from_snr`]: `10 log10(2^rate - 1)`.
pub fn snr_from_rate(rate: f64) -> f64 {
    10.0 * (rate * LN_2).exp_m1().log10()
}

/// SNR quantile at `p_out` with the margin added to the standard deviation.
pub fn outage_snr(posterior: &Posterior, n0: f64, cfg: &RateConfig) -> Result<f64> {
    Ok(posterior.mean - n0 + (posterior.std + cfg.sigma_delta) * cfg.quantile()?)
}

pub fn rate_for_posterior(posterior: &Posterior, n0: f64, cfg: &RateConfig) -> Result<RateDecision> {
    Ok(RateDecision::from_snr(outage_snr(posterior, n0, cfg)?))
}

/// Predict, take the outage SNR, convert to a rate.
pub fn select_rate(model: &FittedModel, x_star: &Point2, n0: f64, cfg: &RateConfig) -> Result<RateDecision> {
    let post = predict(model, x_star)?;
    rate_for_posterior(&post, n0, cfg)
}

/// Baseline that ignores the data: the prior mean with the shadowing
/// standard deviation as its uncertainty.
pub fn pathloss_posterior(channel: &ChannelParams, x_star: &Point2) -> Result<Posterior> {
    Ok(Posterior { mean: path_loss_mean(channel, x_star)?, std: channel.sigma_db })
}

pub fn pathloss_rate(channel: &ChannelParams, x_star: &Point2, cfg: &RateConfig) -> Result<RateDecision> {
    rate_for_posterior(&pathloss_posterior(channel, x_star)?, channel.n0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::capacity;

    // sqrt(2) * erfinv(-0.998), 40-digit arithmetic
    const Q_1E3: f64 = -3.090_232_306_167_813_5;

    #[test]
    fn erfinv_examples() {
        assert_eq!(erfinv(0.0).unwrap(), 0.0);
        let v = erfinv(-0.998).unwrap();
        assert!((v + 2.185_124_219_133_004_3).abs() < 1e-12, "{v}");
        assert!((SQRT_2 * v - Q_1E3).abs() < 1e-12);
    }

    #[test]
    fn erfinv_domain() {
        for u in [1.0, -1.0, 1.5, f64::NAN, f64::INFINITY] {
            assert!(matches!(erfinv(u), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn erfinv_is_odd() {
        for i in 0..50 {
            let u = (i as f64 * 0.6180339887).fract() * 1.999 - 0.9995;
            assert_eq!(erfinv(-u).unwrap(), -erfinv(u).unwrap());
        }
    }

    #[test]
    fn outage_snr_examples() {
        let post = Posterior { mean: -50.0, std: 6.0 };
        let half = RateConfig { p_out: 0.5, sigma_delta: 0.0 };
        assert_eq!(outage_snr(&post, -174.0, &half).unwrap(), 124.0);
        let cfg = RateConfig { p_out: 1e-3, sigma_delta: 0.0 };
        let g = outage_snr(&post, -174.0, &cfg).unwrap();
        assert!((g - 105.458_606_162_993_12).abs() < 1e-9, "{g}");
        let cfg = RateConfig { p_out: 1e-3, sigma_delta: 1.0 };
        let g = outage_snr(&post, -174.0, &cfg).unwrap();
        assert!((g - 102.368_373_856_825_3).abs() < 1e-9, "{g}");
    }

    #[test]
    fn rate_examples() {
        assert!((rate_from_snr(0.0) - 1.0).abs() < 1e-15);
        let r = rate_from_snr(105.458_606_162_993_12);
        assert!((r - 35.032_590_666_091_89).abs() < 1e-10, "{r}");
        assert!((snr_from_rate(r) - 105.458_606_162_993_12).abs() < 1e-9);
    }

    #[test]
    fn pathloss_rate_examples() {
        let ch = ChannelParams::default();
        let x = Point2::new(90.0, 150.0);
        let d = pathloss_rate(&ch, &x, &RateConfig::default()).unwrap();
        assert!((d.gamma_db - 105.458_606_162_993_12).abs() < 1e-9);
        assert!((d.rate - 35.032_590_666_091_89).abs() < 1e-9);
        let half = RateConfig { p_out: 0.5, sigma_delta: 0.0 };
        let d = pathloss_rate(&ch, &x, &half).unwrap();
        assert_eq!(d.rate, capacity(path_loss_mean(&ch, &x).unwrap(), ch.n0));
        assert!(pathloss_rate(&ch, &ch.x_tx, &half).is_err());
    }

    #[test]
    fn rate_config_validation() {
        assert!(RateConfig { p_out: 1.5, sigma_delta: 0.0 }.validate().is_err());
        assert!(RateConfig { p_out: 0.0, sigma_delta: 0.0 }.validate().is_err());
        assert!(RateConfig { p_out: 0.1, sigma_delta: -0.1 }.validate().is_err());
        assert!(RateConfig::default().validate().is_ok());
    }
}
