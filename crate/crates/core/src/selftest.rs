//! Invariant suite behind the `selftest` subcommand. Each check is
//! self-contained and fast (seconds on one core).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::{capacity, path_loss_mean, ChannelParams, Point2};
use crate::config::{parse_config_str, serialize_config, RunConfig};
use crate::gp::{fit, FitOptions, GpMethod, NoiseParams, Posterior, SensingDataset};
use crate::kernel::{
    kernel, kernel_grad, kernel_hess, posterior_mean_grad, posterior_mean_hess, KernelHyper,
};
use crate::montecarlo::{run_batch, run_trial, SimConfig};
use crate::rate::{erfinv, rate_for_posterior, RateConfig};

pub type CheckResult = std::result::Result<String, String>;

pub struct Check {
    pub name: &'static str,
    pub run: fn() -> CheckResult,
}

pub const CHECKS: &[Check] = &[
    Check { name: "erfinv round trip", run: erfinv_round_trip },
    Check { name: "kernel derivatives vs finite differences", run: kernel_derivatives },
    Check { name: "posterior-mean derivatives vs finite differences", run: posterior_derivatives },
    Check { name: "predictive variance ordering", run: variance_ordering },
    Check { name: "gaussian rate calibration", run: gaussian_rate_calibration },
    Check { name: "trial determinism across threads", run: determinism },
    Check { name: "config round trip", run: config_round_trip },
];

/// Runs every check; returns `(name, outcome)` pairs.
pub fn run_all() -> Vec<(&'static str, CheckResult)> {
    CHECKS.iter().map(|c| (c.name, (c.run)())).collect()
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x5e1f_7e57)
}

/// Relative error of `a` against `b` in the max norm of `b`.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn erfinv_round_trip() -> CheckResult {
    let n = 10_000;
    let edge = 1.0 - 1e-12;
    let mut worst = 0.0f64;
    for k in 0..n {
        let u = -edge + 2.0 * edge * k as f64 / (n - 1) as f64;
        let x = erfinv(u).map_err(|e| e.to_string())?;
        worst = worst.max((libm::erf(x) - u).abs());
    }
    if worst <= 1e-9 {
        Ok(format!("max |erf(erfinv(u)) - u| = {worst:.2e}"))
    } else {
        Err(format!("max error {worst:e} > 1e-9"))
    }
}

/// Random configuration with `x` at least 1 m from `xi` and a tiny smoothing
/// constant, so the smoothed forms coincide with the exact derivatives.
fn random_pair(rng: &mut ChaCha8Rng) -> (Point2, Point2, KernelHyper) {
    let hyper = KernelHyper {
        sigma_k: rng.gen_range(1.0..10.0),
        ell: rng.gen_range(20.0..200.0),
        d_c: rng.gen_range(1e-10..1e-8),
    };
    loop {
        let x = Point2::new(rng.gen_range(0.0..300.0), rng.gen_range(0.0..300.0));
        let xi = Point2::new(rng.gen_range(0.0..300.0), rng.gen_range(0.0..300.0));
        if x.distance(&xi) >= 1.0 {
            return (x, xi, hyper);
        }
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_grad(f: impl Fn(&Point2) -> f64, x: &Point2, h: f64) -> [f64; 2] {
    [
        (f(&Point2::new(x.x1 + h, x.x2)) - f(&Point2::new(x.x1 - h, x.x2))) / (2.0 * h),
        (f(&Point2::new(x.x1, x.x2 + h)) - f(&Point2::new(x.x1, x.x2 - h))) / (2.0 * h),
    ]
}

/// Central-difference Hessian of `f` at `x`, row-major.
pub fn fd_hess(f: impl Fn(&Point2) -> f64, x: &Point2, h: f64) -> [f64; 4] {
    let at = |a: f64, b: f64| f(&Point2::new(x.x1 + a, x.x2 + b));
    let f0 = at(0.0, 0.0);
    let h11 = (at(h, 0.0) - 2.0 * f0 + at(-h, 0.0)) / (h * h);
    let h22 = (at(0.0, h) - 2.0 * f0 + at(0.0, -h)) / (h * h);
    let h12 = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
    [h11, h12, h12, h22]
}

fn kernel_derivatives() -> CheckResult {
    let mut rng = rng();
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (x, xi, hyper) = random_pair(&mut rng);
        let f = |p: &Point2| kernel(p, &xi, &hyper);
        let g = kernel_grad(&x, &xi, &hyper);
        worst_g = worst_g.max(rel_err(&[g.g1, g.g2], &fd_grad(f, &x, 1e-4)));
        let h = kernel_hess(&x, &xi, &hyper);
        worst_h = worst_h.max(rel_err(&[h.h11, h.h12, h.h21, h.h22], &fd_hess(f, &x, 1e-3)));
    }
    if worst_g <= 1e-6 && worst_h <= 1e-4 {
        Ok(format!("worst relative error: gradient {worst_g:.2e}, Hessian {worst_h:.2e}"))
    } else {
        Err(format!("gradient {worst_g:e} (limit 1e-6), Hessian {worst_h:e} (limit 1e-4)"))
    }
}

/// Random dataset of `n` points in the 300 m square with plausible powers.
pub fn random_dataset(rng: &mut ChaCha8Rng, channel: &ChannelParams, n: usize) -> SensingDataset {
    let pts: Vec<Point2> =
        (0..n).map(|_| Point2::new(rng.gen_range(0.0..300.0), rng.gen_range(0.0..300.0))).collect();
    let obs = pts
        .iter()
        .map(|p| {
            path_loss_mean(channel, p).expect("inside the area") + 6.0 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    SensingDataset::new(pts, obs).expect("consistent lengths")
}

fn posterior_derivatives() -> CheckResult {
    let mut rng = rng();
    let channel = ChannelParams::default();
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (_, _, hyper) = random_pair(&mut rng);
        let n = rng.gen_range(2..12);
        let ds = random_dataset(&mut rng, &channel, n);
        let model =
            fit(GpMethod::PureGp, &ds, &channel, &hyper, &NoiseParams::new(0.0, 0.5), &FitOptions::default())
                .map_err(|e| e.to_string())?;
        let x = loop {
            let x = Point2::new(rng.gen_range(0.0..300.0), rng.gen_range(0.0..300.0));
            if ds.noisy_locations.iter().all(|xi| x.distance(xi) >= 1.0) {
                break x;
            }
        };
        let mean = |p: &Point2| model.predict_raw(p).expect("away from the transmitter").0;
        let g = posterior_mean_grad(&model, &x).map_err(|e| e.to_string())?;
        worst_g = worst_g.max(rel_err(&[g.g1, g.g2], &fd_grad(mean, &x, 1e-4)));
        let kernel_part = |p: &Point2| {
            ds.noisy_locations
                .iter()
                .zip(model.alpha.iter())
                .map(|(xi, a)| a * kernel(p, xi, &hyper))
                .sum::<f64>()
        };
        let h = posterior_mean_hess(&model, &x, false).map_err(|e| e.to_string())?;
        worst_h = worst_h.max(rel_err(&[h.h11, h.h12, h.h21, h.h22], &fd_hess(kernel_part, &x, 1e-3)));
    }
    if worst_g <= 1e-5 && worst_h <= 1e-4 {
        Ok(format!("worst relative error: gradient {worst_g:.2e}, Hessian {worst_h:.2e}"))
    } else {
        Err(format!("gradient {worst_g:e} (limit 1e-5), Hessian {worst_h:e} (limit 1e-4)"))
    }
}

fn variance_ordering() -> CheckResult {
    let mut rng = rng();
    let defaults = SimConfig::default();
    let channel = defaults.channel;
    let mut checked = 0;
    for fixture in 0..100 {
        let n = rng.gen_range(3..30);
        let ds = random_dataset(&mut rng, &channel, n);
        let noise = NoiseParams::new(rng.gen_range(0.5..20.0), rng.gen_range(0.0..1.0));
        let models =
            GpMethod::ALL.map(|m| fit(m, &ds, &channel, &defaults.hyper, &noise, &FitOptions::default()));
        let [eg, ng1, ng2] = match models {
            [Ok(a), Ok(b), Ok(c)] => [a, b, c],
            _ => return Err(format!("fixture {fixture}: fit failed")),
        };
        let slack = 1e-9 * defaults.hyper.variance();
        for _ in 0..10 {
            let x = Point2::new(rng.gen_range(0.0..300.0), rng.gen_range(0.0..300.0));
            let v = |m: &crate::gp::FittedModel| m.predict_raw(&x).expect("inside the area").1;
            let (v0, v1, v2) = (v(&eg), v(&ng1), v(&ng2));
            if !(v2 >= v1 - slack && v1 >= v0 - slack) {
                return Err(format!("fixture {fixture}: variances {v0:e}, {v1:e}, {v2:e} out of order"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} test points over 100 fixtures"))
}

fn gaussian_rate_calibration() -> CheckResult {
    let mut rng = rng();
    let cfg = RateConfig::default();
    let n0 = -174.0;
    let draws = 200_000;
    let se = (cfg.p_out * (1.0 - cfg.p_out) / draws as f64).sqrt();
    for case in 0..5 {
        let post = Posterior { mean: rng.gen_range(-90.0..-30.0), std: rng.gen_range(0.1..8.0) };
        let rate = rate_for_posterior(&post, n0, &cfg).map_err(|e| e.to_string())?.rate;
        let below = (0..draws)
            .filter(|_| capacity(post.mean + post.std * rng.sample::<f64, _>(StandardNormal), n0) < rate)
            .count();
        let frac = below as f64 / draws as f64;
        if (frac - cfg.p_out).abs() > 3.0 * se {
            return Err(format!("case {case}: outage {frac:e} vs target {:e}", cfg.p_out));
        }
    }
    Ok(format!("5 posteriors x {draws} draws within 3 standard errors"))
}

fn determinism() -> CheckResult {
    let cfg =
        SimConfig { n_sensors: 12, n_test_points: 3, n_trials: 6, ..SimConfig::default() }.with_sigma_x(10.0);
    let once = run_trial(&cfg, 2).map_err(|e| e.to_string())?;
    if once != run_trial(&cfg, 2).map_err(|e| e.to_string())? {
        return Err("repeated trial differs".into());
    }
    let batch = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?
            .install(|| run_batch(&cfg))
            .map_err(|e| e.to_string())
    };
    let (a, b) = (batch(1)?, batch(3)?);
    if a.samples != b.samples {
        return Err("batch differs between 1 and 3 threads".into());
    }
    Ok(format!("{} samples identical across thread counts", a.samples.len()))
}

fn config_round_trip() -> CheckResult {
    let run = RunConfig::default();
    let text = serialize_config(&run).map_err(|e| e.to_string())?;
    match parse_config_str(&text) {
        Ok(back) if back == run => Ok("default config survives serialize/parse".into()),
        Ok(_) => Err("parsed config differs".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for (name, outcome) in super::run_all() {
            assert!(outcome.is_ok(), "{name}: {outcome:?}");
        }
    }
}
