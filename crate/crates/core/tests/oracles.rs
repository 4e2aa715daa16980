//! Derived-value oracles: every expectation here is recomputed independently
//! (dense inverses, finite differences, manual chaining, recounting) rather
//! than read back from the code under test.

mod common;

use nalgebra::{DMatrix, DVector};
use radiomap_nigp::channel::{capacity, path_loss_mean, sample_shadow_field};
use radiomap_nigp::gp::{fit, fit_nigp1, fit_nigp2, fit_pure, predict, LocationNoiseScale};
use radiomap_nigp::kernel::kernel_matrix;
use radiomap_nigp::montecarlo::{
    estimate_outage, find_required_margin, outage_at_margin, rate_cdf, rate_cdf_by_method,
    required_margin_from_samples, run_batch, run_trial, trial_rng, OutageEstimate, TrialRecord,
};
use radiomap_nigp::rate::{pathloss_posterior, rate_for_posterior, select_rate};
use radiomap_nigp::{
    ChannelParams, Error, FitOptions, GpMethod, KernelHyper, Method, NoiseParams, Point2, Posterior,
    RateConfig, SensingDataset, SimConfig,
};
use rand::Rng;
use rand_distr::StandardNormal;

use common::*;

fn channel() -> ChannelParams {
    ChannelParams::default()
}

#[test]
fn kernel_matrix_matches_elementwise_oracle() {
    let mut r = rng(11);
    let h = SimConfig::default().hyper;
    let pts: Vec<Point2> = (0..5).map(|_| uniform_point(&mut r, 300.0)).collect();
    let k = kernel_matrix(&pts, &h);
    for i in 0..5 {
        for j in 0..5 {
            let want = oracle_kernel(&pts[i], &pts[j], &h);
            assert!((k[(i, j)] - want).abs() <= 1e-12 * want, "({i},{j})");
        }
    }
}

#[test]
fn alpha_matches_dense_inverse() {
    let mut r = rng(12);
    let ch = channel();
    for _ in 0..20 {
        let ds = random_dataset(&mut r, &ch, 5);
        let h = SimConfig::default().hyper;
        let noise = NoiseParams::new(0.0, r.gen_range(0.1..2.0));
        let m = fit_pure(&ds, &ch, &h, &noise).unwrap();
        let kp = DMatrix::from_fn(5, 5, |i, j| {
            oracle_kernel(&ds.noisy_locations[i], &ds.noisy_locations[j], &h)
                + if i == j { noise.sigma_y.powi(2) + m.jitter } else { 0.0 }
        });
        let y = DVector::from_fn(5, |i, _| {
            ds.observations[i] - path_loss_mean(&ch, &ds.noisy_locations[i]).unwrap()
        });
        let want = kp.try_inverse().unwrap() * y;
        for i in 0..5 {
            assert!((m.alpha[i] - want[i]).abs() <= 1e-8 * want.amax().max(1.0), "alpha[{i}]");
        }
    }
}

#[test]
fn predict_matches_dense_oracle() {
    let mut r = rng(13);
    let ch = channel();
    let h = SimConfig::default().hyper;
    for _ in 0..20 {
        let ds = random_dataset(&mut r, &ch, 3);
        let noise = NoiseParams::new(0.0, 0.5);
        let m = fit_pure(&ds, &ch, &h, &noise).unwrap();
        let kp = DMatrix::from_fn(3, 3, |i, j| {
            oracle_kernel(&ds.noisy_locations[i], &ds.noisy_locations[j], &h)
                + if i == j { 0.25 + m.jitter } else { 0.0 }
        });
        let y = DVector::from_fn(3, |i, _| {
            ds.observations[i] - path_loss_mean(&ch, &ds.noisy_locations[i]).unwrap()
        });
        let x = uniform_point(&mut r, 300.0);
        let (mean, var) =
            dense_posterior(&kp, &ds.noisy_locations, &y, path_loss_mean(&ch, &x).unwrap(), &x, &h);
        let p = predict(&m, &x).unwrap();
        assert!((p.mean - mean).abs() <= 1e-8 * mean.abs());
        assert!((p.std * p.std - var).abs() <= 1e-8 * h.variance());
    }
}

#[test]
fn single_point_alpha_closed_form() {
    // N = 1 at d = 100 from the transmitter, y = -44: alpha = 6 / k(x, x).
    let ch = channel();
    let h = KernelHyper::matched(&ch, 1e-3);
    let ds = SensingDataset::new(vec![Point2::new(90.0, 150.0)], vec![-44.0]).unwrap();
    let m = fit_pure(&ds, &ch, &h, &NoiseParams::default()).unwrap();
    let kxx = oracle_kernel(&ds.noisy_locations[0], &ds.noisy_locations[0], &h);
    assert!((m.alpha[0] - 6.0 / (kxx + m.jitter)).abs() < 1e-12);
    assert!((m.alpha[0] - 1.0 / 6.0).abs() < 1e-6);
}

#[test]
fn first_order_correction_matches_fd_gradients() {
    let mut r = rng(14);
    let ch = channel();
    for scale in [LocationNoiseScale::Variance, LocationNoiseScale::StdDev] {
        for _ in 0..20 {
            let h = tiny_dc_hyper(&mut r);
            let n = r.gen_range(3..15);
            let ds = random_dataset(&mut r, &ch, n);
            let noise = NoiseParams { sigma_x: r.gen_range(1.0..20.0), sigma_y: 0.5, location_scale: scale };
            let pure = fit_pure(&ds, &ch, &h, &noise).unwrap();
            let ng1 = fit_nigp1(&ds, &ch, &h, &noise, &FitOptions::default()).unwrap();
            let var = match scale {
                LocationNoiseScale::Variance => noise.sigma_x,
                LocationNoiseScale::StdDev => noise.sigma_x * noise.sigma_x,
            };
            for (i, xi) in ds.noisy_locations.iter().enumerate() {
                // The mean has a kink at each datum, so differentiate the
                // other terms numerically; the own term has zero gradient.
                let others = |p: &Point2| {
                    path_loss_mean(&ch, p).unwrap()
                        + ds.noisy_locations
                            .iter()
                            .zip(pure.alpha.iter())
                            .enumerate()
                            .filter(|(j, _)| *j != i)
                            .map(|(_, (xj, a))| a * oracle_kernel(p, xj, &h))
                            .sum::<f64>()
                };
                let g = fd_grad(others, xi, 1e-4);
                let want = var * (g[0] * g[0] + g[1] * g[1]);
                assert!((ng1.first_order[i] - want).abs() <= 1e-5 * want.max(1e-12), "{scale:?} i={i}");
            }
        }
    }
}

#[test]
fn second_order_term_matches_fd_hessian() {
    let mut r = rng(15);
    let ch = channel();
    let h = KernelHyper::matched(&ch, 1e-3);
    let mut checked = 0;
    while checked < 20 {
        let n = r.gen_range(3..12);
        let ds = random_dataset(&mut r, &ch, n);
        let pts = &ds.noisy_locations;
        // keep the smoothing bias d_c/d of neighbouring terms below 1e-4
        let separated = pts.iter().enumerate().all(|(i, a)| pts[..i].iter().all(|b| a.distance(b) >= 10.0));
        if !separated {
            continue;
        }
        checked += 1;
        let noise = NoiseParams::new(r.gen_range(1.0..20.0), 0.5);
        let pure = fit_pure(&ds, &ch, &h, &noise).unwrap();
        let ng2 = fit_nigp2(&ds, &ch, &h, &noise, &FitOptions::default()).unwrap();
        let s = noise.sigma_x;
        for (i, xi) in pts.iter().enumerate() {
            let others = |p: &Point2| {
                pts.iter()
                    .zip(pure.alpha.iter())
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, (xj, a))| a * oracle_kernel(p, xj, &h))
                    .sum::<f64>()
            };
            let fd = fd_hess(others, xi, 1e-3);
            // own term at its centre: -k(x, x) / (L d_c) on the diagonal
            let own = -pure.alpha[i] * oracle_kernel(xi, xi, &h) / (h.ell * h.d_c);
            let (h11, h12, h22) = (fd[0] + own, fd[1], fd[3] + own);
            let want = 0.5 * (h11 * h11 * s * s + 2.0 * h12 * h12 * s * s + h22 * h22 * s * s);
            assert!((ng2.second_order[i] - want).abs() <= 1e-3 * want, "i={i}");
        }
    }
}

#[test]
fn corrections_vanish_without_location_noise() {
    let mut r = rng(16);
    let ch = channel();
    let h = SimConfig::default().hyper;
    let ds = random_dataset(&mut r, &ch, 25);
    let noise = NoiseParams::new(0.0, 0.5);
    let pure = fit_pure(&ds, &ch, &h, &noise).unwrap();
    for m in [GpMethod::Nigp1, GpMethod::Nigp2] {
        let f = fit(m, &ds, &ch, &h, &noise, &FitOptions::default()).unwrap();
        assert_eq!(f.alpha, pure.alpha);
    }
}

#[test]
fn zero_residuals_make_second_order_inert() {
    // Y = P̄ gives alpha = 0, so the kernel-sum Hessian vanishes and the
    // second-order fit reduces to the first-order one.
    let mut r = rng(17);
    let ch = channel();
    let pts: Vec<Point2> = (0..10).map(|_| uniform_point(&mut r, 300.0)).collect();
    let y = pts.iter().map(|p| path_loss_mean(&ch, p).unwrap()).collect();
    let ds = SensingDataset::new(pts, y).unwrap();
    let noise = NoiseParams::new(10.0, 0.5);
    let h = SimConfig::default().hyper;
    let ng1 = fit_nigp1(&ds, &ch, &h, &noise, &FitOptions::default()).unwrap();
    let ng2 = fit_nigp2(&ds, &ch, &h, &noise, &FitOptions::default()).unwrap();
    assert!(ng2.second_order.iter().all(|v| *v == 0.0));
    assert_eq!(ng1.alpha, ng2.alpha);
}

#[test]
fn residual_of_alpha_solve_is_small() {
    let mut r = rng(18);
    let ch = channel();
    let h = SimConfig::default().hyper;
    for m in GpMethod::ALL {
        let ds = random_dataset(&mut r, &ch, 60);
        let f = fit(m, &ds, &ch, &h, &NoiseParams::new(10.0, 0.5), &FitOptions::default()).unwrap();
        let res = f.effective_matrix() * &f.alpha - f.targets();
        assert!(res.amax() <= 1e-8 * f.targets().amax(), "{m:?}");
    }
}

#[test]
fn interpolation_and_prior_bounds() {
    let mut r = rng(19);
    let ch = channel();
    let h = SimConfig::default().hyper;
    for _ in 0..20 {
        let ds = random_dataset(&mut r, &ch, 30);
        let m = fit_pure(&ds, &ch, &h, &NoiseParams::default()).unwrap();
        for (x, y) in ds.noisy_locations.iter().zip(&ds.observations) {
            let (mean, var) = m.predict_raw(x).unwrap();
            // (K + jI) alpha = y - P̄, so the mean misses y by exactly j alpha_i
            let i = ds.observations.iter().position(|v| v == y).unwrap();
            let want = y - m.jitter * m.alpha[i];
            assert!((mean - want).abs() < 1e-9, "datum {i}");
            if m.jitter * m.alpha[i].abs() < 1e-7 {
                assert!((mean - y).abs() < 1e-6);
            }
            assert!(var >= -1e-8 * h.variance());
            assert!(predict(&m, x).unwrap().std <= 1e-3 * h.sigma_k);
        }
        for _ in 0..10 {
            let x = uniform_point(&mut r, 300.0);
            assert!(predict(&m, &x).unwrap().std <= h.sigma_k * (1.0 + 1e-9));
        }
    }
}

#[test]
fn select_rate_composes_its_parts() {
    let ch = channel();
    let h = SimConfig::default().hyper;
    let ds = SensingDataset::new(vec![Point2::new(90.0, 150.0)], vec![-44.0]).unwrap();
    let m = fit_pure(&ds, &ch, &h, &NoiseParams::default()).unwrap();
    let x = Point2::new(120.0, 140.0);
    let cfg = RateConfig { p_out: 1e-3, sigma_delta: 0.2 };
    let post = predict(&m, &x).unwrap();
    // quantile of the standard normal at 1e-3, 40-digit value
    let gamma = post.mean - ch.n0 + (post.std + 0.2) * -3.090_232_306_167_813_5;
    let rate = (1.0 + 10f64.powf(gamma / 10.0)).log2();
    let got = select_rate(&m, &x, ch.n0, &cfg).unwrap();
    assert!((got.gamma_db - gamma).abs() < 1e-9);
    assert!((got.rate - rate).abs() < 1e-9 * rate);
}

#[test]
fn degenerate_posterior_rate_is_capacity() {
    let post = Posterior { mean: -61.5, std: 0.0 };
    for p_out in [1e-4, 1e-3, 0.3] {
        let d = rate_for_posterior(&post, -174.0, &RateConfig { p_out, sigma_delta: 0.0 }).unwrap();
        assert!((d.rate - capacity(-61.5, -174.0)).abs() < 1e-12);
    }
}

#[test]
fn run_trial_composition_oracle() {
    let cfg =
        SimConfig { n_sensors: 3, n_test_points: 1, n_trials: 1, master_seed: 99, ..SimConfig::default() }
            .with_sigma_x(10.0);
    let ch = cfg.channel;
    for t in [0u64, 5] {
        let mut rng = trial_rng(cfg.master_seed, t);
        let mut pt = || Point2::new(rng.gen::<f64>() * 300.0, rng.gen::<f64>() * 300.0);
        let sensors = [pt(), pt(), pt()];
        let test = pt();
        let all = [sensors[0], sensors[1], sensors[2], test];
        let shadow = sample_shadow_field(&all, &ch, &mut rng).unwrap().values;
        let eps_y: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let eps_x: Vec<[f64; 2]> =
            (0..3).map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
        let std_x = 10f64.sqrt();
        let noisy: Vec<Point2> = (0..3)
            .map(|i| Point2::new(sensors[i].x1 + std_x * eps_x[i][0], sensors[i].x2 + std_x * eps_x[i][1]))
            .collect();
        let obs: Vec<f64> = (0..3)
            .map(|i| path_loss_mean(&ch, &sensors[i]).unwrap() + shadow[i] + cfg.noise.sigma_y * eps_y[i])
            .collect();
        let ds = SensingDataset::new(noisy, obs).unwrap();
        let truth = capacity(path_loss_mean(&ch, &test).unwrap() + shadow[3], ch.n0);

        let records = run_trial(&cfg, t).unwrap();
        assert_eq!(records.len(), 4);
        for rec in &records {
            let post = match rec.method.gp() {
                Some(g) => {
                    predict(&fit(g, &ds, &ch, &cfg.hyper, &cfg.noise, &cfg.fit).unwrap(), &test).unwrap()
                }
                None => pathloss_posterior(&ch, &test).unwrap(),
            };
            let rate = rate_for_posterior(&post, ch.n0, &cfg.rate_cfg).unwrap().rate;
            assert_eq!(rec.test_point, test);
            assert_eq!(rec.predicted_rate, rate, "{}", rec.method);
            assert_eq!(rec.true_capacity, truth);
            assert_eq!(rec.outage, rate > truth);
        }
    }
}

fn synthetic_records(seed: u64, n: usize) -> Vec<TrialRecord> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let method = Method::ALL[r.gen_range(0..4)];
            let cap = r.gen_range(20.0..40.0);
            let pred = cap + r.gen_range(-5.0..0.2);
            TrialRecord::new(i as u64, method, Point2::new(0.0, 0.0), pred, cap)
        })
        .collect()
}

#[test]
fn estimate_outage_matches_recount() {
    let recs = synthetic_records(20, 5000);
    let est = estimate_outage(&recs);
    assert_eq!(est.len(), 4);
    for e in est {
        let mine: Vec<&TrialRecord> = recs.iter().filter(|r| r.method == e.method).collect();
        let k = mine.iter().filter(|r| r.predicted_rate > r.true_capacity).count();
        assert_eq!(e.n_samples, mine.len());
        assert_eq!(e.outage_prob, k as f64 / mine.len() as f64);
        assert!(e.ci_low <= e.outage_prob && e.outage_prob <= e.ci_high);
    }
    let e = OutageEstimate::from_counts(Method::PureGp, 10, 10_000);
    assert_eq!(e.outage_prob, 1e-3);
}

#[test]
fn rate_cdf_matches_sort_and_count() {
    let recs = synthetic_records(21, 3000);
    let grid: Vec<f64> = (0..=90).map(|k| k as f64 * 0.5).collect();
    let rows = rate_cdf(&recs, &grid);
    for row in &rows {
        let mut v: Vec<f64> =
            recs.iter().filter(|r| r.method == row.method).map(|r| r.received_rate).collect();
        v.sort_by(f64::total_cmp);
        let count = v.iter().take_while(|x| **x <= row.rate).count();
        assert_eq!(row.cum_prob, count as f64 / v.len() as f64);
    }
    for (m, cdf) in rate_cdf_by_method(&recs) {
        let outage = estimate_outage(&recs).into_iter().find(|e| e.method == m).unwrap().outage_prob;
        assert_eq!(cdf.cdf(0.0), outage);
        assert_eq!(cdf.cdf(-1e-300), 0.0);
        assert_eq!(cdf.cdf(f64::INFINITY), 1.0);
    }
}

#[test]
fn margin_search_agrees_with_a_fresh_run() {
    let cfg = SimConfig { n_sensors: 40, n_test_points: 10, n_trials: 300, ..SimConfig::default() }
        .with_sigma_x(20.0);
    let target = 5e-3;
    let batch = run_batch(&cfg).unwrap();
    for m in [Method::PureGp, Method::Nigp2] {
        let from_samples = required_margin_from_samples(
            &batch.samples,
            m,
            cfg.channel.n0,
            cfg.rate_cfg.p_out,
            target,
            [0.0, 5.0],
        )
        .unwrap();
        assert_eq!(find_required_margin(&cfg, m, target, [0.0, 5.0]).unwrap(), from_samples);
        // smallest grid value meeting the target
        let at = |d: f64| {
            outage_at_margin(&batch.samples, m, cfg.channel.n0, cfg.rate_cfg.p_out, d).unwrap().outage_prob
        };
        assert!(at(from_samples) <= target);
        if from_samples > 0.0 {
            assert!(at(from_samples - 0.01) > target);
        }
    }
    let err =
        required_margin_from_samples(&batch.samples, Method::PureGp, cfg.channel.n0, 1e-3, 1e-9, [0.0, 0.01]);
    assert!(matches!(err, Err(Error::Bracket { .. })));
}
