//! Acceptance criteria A1-A8. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use holobeam::ao::{ao_solve, grad_sum_rate_a, grad_sum_rate_ve, kkt_residuals, AoOptions};
use holobeam::beamform::{normalize_power, project_to_range, RangeProjector};
use holobeam::equivariance::{check_3dpe, check_kkt_pe, check_pepi_ggnn, check_projection_pe, PermTriple};
use holobeam::ggnn::{full_forward_with, ggnn_forward, GgnnParams};
use holobeam::holo::{
    assemble_channel, build_phase_pattern, generate_samples, noise_var_from_snr_db, sample_paths, sum_rate_equiv,
    transmit_power, ChannelSample, PhasePattern, SurfaceConfig, DEFAULT_PATH_VARIANCES,
};
use holobeam::linalg::CMatrix;
use holobeam::train::{grad_params, loss, mean_rate, train, TrainConfig};
use holobeam::C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Desk-scale problem shared by A1, A4, A7 and A8.
const NX: usize = 4;
const NY: usize = 4;
const USERS: usize = 3;
const RF: usize = 3;
const SNR_DB: f64 = 10.0;
const DESK_DIMS: [usize; 4] = [16, 32, 32, 16];

/// A4 training schedule.
const TRAIN_SAMPLES: usize = 2000;
const TEST_SAMPLES: usize = 200;
const EPOCHS: usize = 60;
const BATCH: usize = 32;
const LEARNING_RATE: f64 = 1e-3;
const TRAIN_SEED: u64 = 0;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn desk_surface() -> (SurfaceConfig<f64>, PhasePattern<f64>) {
    let cfg = SurfaceConfig::new(NX, NY, RF).unwrap();
    let m_p = build_phase_pattern(&cfg).unwrap();
    (cfg, m_p)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMatrix<f64> {
    CMatrix::from_fn(rows, cols, |_, _| {
        C::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    })
}

fn a1_equivariance() -> Verdict {
    let start = Instant::now();
    let (cfg, m_p) = desk_surface();
    let projector = RangeProjector::new(&m_p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let params = GgnnParams::random(&DESK_DIMS, &mut rng).unwrap();
    let sample = generate_samples(&cfg, USERS, &DEFAULT_PATH_VARIANCES, SNR_DB, 1, 102)
        .unwrap()
        .remove(0);
    let pipeline = |h: &CMatrix<f64>, mp: &PhasePattern<f64>| {
        let out = full_forward_with(h, &RangeProjector::new(mp)?, &params, 1.0)?;
        Ok((out.a, out.v))
    };
    let network = |h: &CMatrix<f64>, mp: &PhasePattern<f64>| ggnn_forward(h, mp.matrix(), &params);
    let base = full_forward_with(&sample.h, &projector, &params, 1.0).unwrap();
    let (mut e2e, mut net, mut proj) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let t = PermTriple::random(USERS, cfg.n_t(), RF, &mut rng);
        e2e = e2e.max(check_3dpe(pipeline, &sample.h, &m_p, &t, 1e-6).unwrap().max_discrepancy);
        net = net.max(
            check_pepi_ggnn(network, &sample.h, &m_p, &t, 1e-9)
                .unwrap()
                .max_discrepancy,
        );
        let p = check_projection_pe(&base.ve, &base.a, &m_p, 1.0, &t, 1e-9).unwrap();
        proj = proj.max(p.max_discrepancy());
    }
    let elapsed = start.elapsed();
    let ok = e2e <= 1e-6 && net <= 1e-9 && proj <= 1e-9 && elapsed < Duration::from_secs(60);
    verdict(
        ok,
        format!(
            "100 triples: pipeline {e2e:.2e} (<=1e-6), network {net:.2e} (<=1e-9), projection {proj:.2e} (<=1e-9), {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn a2_gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let step = 1e-6;
    let mut worst_rate = 0.0f64;
    for _ in 0..20 {
        let (n_t, k) = (4, 3);
        let h = random_matrix(n_t, k, &mut rng);
        let ve = random_matrix(n_t, k, &mut rng);
        let a: Vec<f64> = (0..n_t).map(|_| rng.gen_range(0.1..1.0)).collect();
        let noise = rng.gen_range(0.05..1.0);
        let g_ve = grad_sum_rate_ve(&h, &a, &ve, noise).unwrap();
        let g_a = grad_sum_rate_a(&h, &a, &ve, noise).unwrap();
        let f = |ve: &CMatrix<f64>, a: &[f64]| sum_rate_equiv(&h, a, ve, noise).unwrap();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for idx in 0..n_t * k {
            for unit in [C::new(step, 0.0), C::new(0.0, step)] {
                let (mut p, mut m) = (ve.clone(), ve.clone());
                p.as_mut_slice()[idx] += unit;
                m.as_mut_slice()[idx] -= unit;
                let fd = (f(&p, &a) - f(&m, &a)) / (2.0 * step);
                let an = if unit.re != 0.0 {
                    g_ve.as_slice()[idx].re
                } else {
                    g_ve.as_slice()[idx].im
                };
                num = num.max((fd - an).abs());
                den = den.max(an.abs());
            }
        }
        for n in 0..n_t {
            let (mut p, mut m) = (a.clone(), a.clone());
            p[n] += step;
            m[n] -= step;
            let fd = (f(&ve, &p) - f(&ve, &m)) / (2.0 * step);
            num = num.max((fd - g_a[n]).abs());
            den = den.max(g_a[n].abs());
        }
        worst_rate = worst_rate.max(num / den);
    }

    let cfg = SurfaceConfig::new(2, 2, 2).unwrap();
    let projector = RangeProjector::new(&build_phase_pattern(&cfg).unwrap()).unwrap();
    let mut worst_params = 0.0f64;
    for seed in 0..3 {
        let batch = generate_samples(&cfg, 2, &DEFAULT_PATH_VARIANCES, SNR_DB, 3, 210 + seed).unwrap();
        let params = GgnnParams::random(&[2, 2], &mut ChaCha8Rng::seed_from_u64(220 + seed)).unwrap();
        let (_, grads) = grad_params(&batch, &projector, &params).unwrap();
        let h = 1e-5;
        for t in 0..params.tensors().len() {
            for i in 0..params.tensors()[t].1.as_slice().len() {
                for unit in [C::new(h, 0.0), C::new(0.0, h)] {
                    let shifted = |sign: f64| {
                        let mut p = params.clone();
                        p.tensors_mut()[t].as_mut_slice()[i] += unit * sign;
                        loss(&batch, &projector, &p).unwrap()
                    };
                    let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
                    let g = grads.tensors()[t].1.as_slice()[i];
                    let an = if unit.re != 0.0 { g.re } else { g.im };
                    worst_params = worst_params.max((fd - an).abs() / fd.abs().max(1.0));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = worst_rate <= 1e-5 && worst_params <= 1e-4 && elapsed < Duration::from_secs(300);
    verdict(
        ok,
        format!(
            "sum-rate gradients {worst_rate:.2e} (<=1e-5), parameter gradients {worst_params:.2e} (<=1e-4), {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn a3_projection() -> Verdict {
    let (_, m_p) = desk_surface();
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let (mut recover, mut ortho, mut power) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let v0 = random_matrix(RF, USERS, &mut rng);
        let back = project_to_range(&m_p, &m_p.matrix().matmul(&v0)).unwrap();
        recover = recover.max(back.max_abs_diff(&v0));

        let ve = random_matrix(m_p.n_t(), USERS, &mut rng);
        let vt = project_to_range(&m_p, &ve).unwrap();
        let residual = ve.sub(&m_p.matrix().matmul(&vt));
        ortho = ortho.max(m_p.matrix().adjoint_matmul(&residual).max_abs() / ve.max_abs());

        let a: Vec<f64> = (0..m_p.n_t()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let p_max = rng.gen_range(0.1..10.0);
        let v = normalize_power(&vt, &a, m_p.matrix(), p_max).unwrap();
        power = power.max((transmit_power(&a, &m_p.matrix().matmul(&v)) - p_max).abs() / p_max);
    }
    verdict(
        recover <= 1e-10 && ortho <= 1e-9 && power <= 1e-10,
        format!("recovery {recover:.2e} (<=1e-10), orthogonality {ortho:.2e} (<=1e-9), power {power:.2e} (<=1e-10)"),
    )
}

fn ao_mean(data: &[ChannelSample<f64>], m_p: &PhasePattern<f64>) -> f64 {
    let opts = AoOptions::default();
    let total: f64 = data
        .iter()
        .map(|s| ao_solve(&s.h, m_p, s.p_max, s.noise_var, &opts).unwrap().se)
        .sum();
    total / data.len() as f64
}

fn a4_training(trained: &mut Option<GgnnParams<f64>>) -> Verdict {
    let (cfg, m_p) = desk_surface();
    let projector = RangeProjector::new(&m_p).unwrap();
    let train_set = generate_samples(&cfg, USERS, &DEFAULT_PATH_VARIANCES, SNR_DB, TRAIN_SAMPLES, 401).unwrap();
    let test_set = generate_samples(&cfg, USERS, &DEFAULT_PATH_VARIANCES, SNR_DB, TEST_SAMPLES, 402).unwrap();
    let mut tc = TrainConfig::new(DESK_DIMS.to_vec(), EPOCHS, TRAIN_SEED);
    tc.batch_size = BATCH;
    tc.adam.learning_rate = LEARNING_RATE;
    let start = Instant::now();
    let outcome = train(&tc, &train_set, &projector, |_| {}).unwrap();
    let train_time = start.elapsed();
    let net = mean_rate(&test_set, &projector, &outcome.params).unwrap();
    let ao = ao_mean(&test_set, &m_p);
    let ratio = net / ao;
    let losses: Vec<f64> = outcome.log.iter().map(|e| e.mean_loss).collect();
    let finite = losses.iter().all(|l| l.is_finite());
    let early_decrease = losses.len() < 3 || (losses[1] < losses[0] && losses[2] < losses[1]);
    *trained = Some(outcome.params);
    verdict(
        ratio >= 0.85 && train_time <= Duration::from_secs(1800) && finite && early_decrease,
        format!(
            "test SE {net:.3} vs AO {ao:.3}: ratio {ratio:.3} (>=0.85); {EPOCHS} epochs in {:.0}s (<=1800s); \
             epoch losses finite {finite}, first-3 decreasing {early_decrease}",
            train_time.as_secs_f64()
        ),
    )
}

fn a5_snr() -> Verdict {
    let (cfg, m_p) = desk_surface();
    let corpus = generate_samples(&cfg, USERS, &DEFAULT_PATH_VARIANCES, 0.0, 100, 501).unwrap();
    let means: Vec<f64> = [0.0, 10.0, 20.0]
        .iter()
        .map(|&snr| {
            let noise = noise_var_from_snr_db(snr);
            let data: Vec<_> = corpus
                .iter()
                .map(|s| ChannelSample::new(s.h.clone(), noise, 1.0).unwrap())
                .collect();
            ao_mean(&data, &m_p)
        })
        .collect();
    verdict(
        means[0] < means[1] && means[1] < means[2],
        format!(
            "AO mean SE at 0/10/20 dB: {:.3} / {:.3} / {:.3} (strictly increasing)",
            means[0], means[1], means[2]
        ),
    )
}

fn a6_antennas() -> Verdict {
    let small = SurfaceConfig::new(4, 4, RF).unwrap();
    let large = SurfaceConfig::new(6, 6, RF).unwrap();
    let (m_small, m_large) = (
        build_phase_pattern(&small).unwrap(),
        build_phase_pattern(&large).unwrap(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let noise = noise_var_from_snr_db(SNR_DB);
    let (mut d_small, mut d_large) = (Vec::new(), Vec::new());
    for _ in 0..60 {
        // Same users (gains and angles) seen by both surfaces.
        let paths = sample_paths(USERS, &DEFAULT_PATH_VARIANCES, &mut rng).unwrap();
        d_small.push(ChannelSample::new(assemble_channel(&small, &paths).unwrap(), noise, 1.0).unwrap());
        d_large.push(ChannelSample::new(assemble_channel(&large, &paths).unwrap(), noise, 1.0).unwrap());
    }
    let (s, l) = (ao_mean(&d_small, &m_small), ao_mean(&d_large, &m_large));
    verdict(l >= s, format!("AO mean SE 4x4 {s:.3} -> 6x6 {l:.3} (nondecreasing)"))
}

fn a7_latency(trained: Option<&GgnnParams<f64>>) -> Verdict {
    let (cfg, m_p) = desk_surface();
    let projector = RangeProjector::new(&m_p).unwrap();
    let random;
    let params = match trained {
        Some(p) => p,
        None => {
            random = GgnnParams::random(&DESK_DIMS, &mut ChaCha8Rng::seed_from_u64(701)).unwrap();
            &random
        }
    };
    let data = generate_samples(&cfg, USERS, &DEFAULT_PATH_VARIANCES, SNR_DB, 21, 702).unwrap();
    let opts = AoOptions::default();
    // The first sample is a warm-up for both methods.
    let _ = full_forward_with(&data[0].h, &projector, params, 1.0).unwrap();
    let _ = ao_solve(&data[0].h, &m_p, 1.0, data[0].noise_var, &opts).unwrap();
    let timed = &data[1..];
    let start = Instant::now();
    for s in timed {
        std::hint::black_box(full_forward_with(&s.h, &projector, params, s.p_max).unwrap());
    }
    let net = start.elapsed().as_secs_f64() / timed.len() as f64;
    let start = Instant::now();
    for s in timed {
        std::hint::black_box(ao_solve(&s.h, &m_p, s.p_max, s.noise_var, &opts).unwrap());
    }
    let ao = start.elapsed().as_secs_f64() / timed.len() as f64;
    verdict(
        ao >= 10.0 * net,
        format!(
            "per-sample network {:.3} ms vs AO {:.3} ms: {:.0}x (>=10x)",
            net * 1e3,
            ao * 1e3,
            ao / net
        ),
    )
}

fn a8_kkt() -> Verdict {
    let (cfg, m_p) = desk_surface();
    let data = generate_samples(&cfg, USERS, &DEFAULT_PATH_VARIANCES, SNR_DB, 5, 801).unwrap();
    let opts = AoOptions {
        max_outer_iters: 5000,
        tol: 1e-13,
        ..AoOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(802);
    let (mut worst, mut drift) = (0.0f64, 0.0f64);
    let mut all_converged = true;
    for s in &data {
        let r = ao_solve(&s.h, &m_p, s.p_max, s.noise_var, &opts).unwrap();
        all_converged &= r.converged;
        let b = &r.beamformers;
        let k = kkt_residuals(&s.h, &m_p, &b.a, &b.v, s.p_max, s.noise_var).unwrap();
        worst = worst.max(k.relative_stationarity());
        for _ in 0..10 {
            let t = PermTriple::random(USERS, cfg.n_t(), RF, &mut rng);
            drift = drift.max(
                check_kkt_pe(&s.h, &m_p, &b.a, &b.v, s.p_max, s.noise_var, &t, 1e-10)
                    .unwrap()
                    .max_discrepancy,
            );
        }
    }
    verdict(
        worst <= 1e-3 && drift <= 1e-10,
        format!(
            "relative stationarity {worst:.2e} (<=1e-3, AO converged on all: {all_converged}), \
             permutation drift {drift:.2e} (<=1e-10)"
        ),
    )
}

fn main() -> ExitCode {
    let mut trained = None;
    let mut results: Vec<(&str, &str, Verdict)> = Vec::new();
    let mut run = |id: &'static str, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let v = f();
        println!("{id} {} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };
    run("A1", "equivariance", &mut a1_equivariance);
    run("A2", "gradient oracles", &mut a2_gradients);
    run("A3", "projection exactness", &mut a3_projection);
    run("A4", "desk-scale training", &mut || a4_training(&mut trained));
    run("A5", "SNR monotonicity", &mut a5_snr);
    run("A6", "antenna monotonicity", &mut a6_antennas);
    run("A7", "latency ordering", &mut || a7_latency(trained.as_ref()));
    run("A8", "KKT stationarity", &mut a8_kkt);
    let failed: Vec<&str> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
