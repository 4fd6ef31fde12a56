use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use holobeam::ao::{ao_solve, zf_baseline, AoOptions};
use holobeam::beamform::RangeProjector;
use holobeam::equivariance::{check_3dpe, check_pepi_ggnn, check_projection_pe, PermTriple};
use holobeam::ggnn::{full_forward_with, ggnn_forward, GgnnParams};
use holobeam::holo::{build_phase_pattern, generate_samples, sum_rate, PhasePattern, SurfaceConfig};
use holobeam::io::{read_checkpoint, read_dataset, write_atomic, write_checkpoint, write_dataset, Dataset};
use holobeam::train::{mean_rate, pipeline_rate, train, AdamConfig, TrainConfig};

#[derive(Parser)]
#[command(
    name = "holobeam",
    version,
    about = "Holographic MIMO beamforming: data, training, baselines and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a channel dataset.
    GenData(GenDataArgs),
    /// Train the network on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Per-sample SE of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the alternating-optimisation baseline on a dataset.
    Ao(AoArgs),
    /// Check the permutation properties of a (trained or random) model.
    Verify(VerifyArgs),
    /// Time network inference against the AO baseline.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 12)]
    nx: usize,
    #[arg(long, default_value_t = 12)]
    ny: usize,
    /// Number of feeds (RF chains).
    #[arg(long, default_value_t = 6)]
    feeds: usize,
    #[arg(long, default_value_t = 6)]
    users: usize,
    /// Paths per user; the first is line-of-sight (variance 1), the rest
    /// scattered (variance 0.01).
    #[arg(long, default_value_t = 2)]
    paths: usize,
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 20.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Comma-separated layer widths C_0,...,C_D.
    #[arg(long, value_delimiter = ',', default_value = "64,128,512,512,128,64")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional CSV copy of the epoch log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Args)]
struct AoArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args)]
struct VerifyArgs {
    /// Checkpoint to check; a random model of `--dims` is used when absent.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Tolerance for the end-to-end and network checks.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Tolerance for the closed-form projection stages.
    #[arg(long, default_value_t = 1e-9)]
    projection_tol: f64,
    #[arg(long, default_value_t = 4)]
    nx: usize,
    #[arg(long, default_value_t = 4)]
    ny: usize,
    #[arg(long, default_value_t = 3)]
    feeds: usize,
    #[arg(long, default_value_t = 3)]
    users: usize,
    #[arg(long, value_delimiter = ',', default_value = "16,32,32,16")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// One dataset per problem size; may be repeated.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    csv: PathBuf,
    /// Timed repetitions after one discarded warm-up run.
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Samples per repetition (from the start of each dataset).
    #[arg(long, default_value_t = 5)]
    samples: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => eval(a),
        Command::Ao(a) => ao(a),
        Command::Verify(a) => verify(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("HMB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("HMB_THREADS={raw:?} is not a thread count"))?;
    if n == 0 {
        bail!("HMB_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker threads")?;
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<GgnnParams<f64>> {
    read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn pattern_for(data: &Dataset) -> Result<PhasePattern<f64>> {
    Ok(build_phase_pattern(&data.surface()?)?)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().context("flushing CSV")?;
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

fn path_variances(paths: usize) -> Vec<f64> {
    (0..paths).map(|i| if i == 0 { 1.0 } else { 0.01 }).collect()
}

fn gen_data(a: GenDataArgs) -> Result<bool> {
    if a.nx == 0 || a.ny == 0 {
        bail!("--nx and --ny must be positive");
    }
    if a.nx > u16::MAX as usize {
        bail!("--nx must be below 65536");
    }
    if a.feeds == 0 {
        bail!("--feeds must be positive");
    }
    if a.users == 0 {
        bail!("--users must be positive");
    }
    if a.paths == 0 {
        bail!("--paths must be positive");
    }
    if !a.snr_db.is_finite() {
        bail!("--snr-db must be finite");
    }
    if a.feeds > a.nx * a.ny {
        bail!(
            "--feeds ({}) cannot exceed the number of elements ({})",
            a.feeds,
            a.nx * a.ny
        );
    }
    let cfg = SurfaceConfig::new(a.nx, a.ny, a.feeds)?;
    let samples = generate_samples(&cfg, a.users, &path_variances(a.paths), a.snr_db, a.samples, a.seed)?;
    let samples = samples.into_iter().map(|mut s| {
        s.paths = None;
        s
    });
    let data = Dataset {
        n_x: a.nx,
        n_y: a.ny,
        n_rf: a.feeds,
        n_users: a.users,
        snr_db: a.snr_db,
        samples: samples.collect(),
    };
    write_dataset(&a.out, &data).with_context(|| format!("writing dataset {}", a.out.display()))?;
    println!(
        "wrote {} samples (N_t {}, K {}, L {}) to {}",
        data.samples.len(),
        data.n_t(),
        a.users,
        a.feeds,
        a.out.display()
    );
    Ok(true)
}

fn cmd_train(a: TrainArgs) -> Result<bool> {
    let data = load_dataset(&a.data)?;
    let m_p = pattern_for(&data)?;
    let projector = RangeProjector::new(&m_p)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        adam: AdamConfig::new(a.lr),
        seed: a.seed,
        layer_dims: a.dims,
    };
    println!("epoch,mean_loss,seconds");
    let outcome = train(&cfg, &data.samples, &projector, |e| {
        println!("{},{:.6},{:.3}", e.epoch, e.mean_loss, e.seconds);
    })?;
    write_checkpoint(&a.out, &outcome.params).with_context(|| format!("writing checkpoint {}", a.out.display()))?;
    if let Some(log) = a.log {
        let rows: Vec<Vec<String>> = outcome
            .log
            .iter()
            .map(|e| vec![e.epoch.to_string(), e.mean_loss.to_string(), e.seconds.to_string()])
            .collect();
        write_csv(&log, &["epoch", "mean_loss", "seconds"], &rows)?;
    }
    Ok(true)
}

fn eval(a: EvalArgs) -> Result<bool> {
    let params = load_checkpoint(&a.ckpt)?;
    let data = load_dataset(&a.data)?;
    let projector = RangeProjector::new(&pattern_for(&data)?)?;
    let rates: Vec<f64> = data
        .samples
        .par_iter()
        .map(|s| pipeline_rate(s, &projector, &params))
        .collect::<holobeam::Result<_>>()?;
    let rows: Vec<Vec<String>> = rates
        .iter()
        .enumerate()
        .map(|(i, r)| vec![i.to_string(), r.to_string()])
        .collect();
    write_csv(&a.csv, &["sample_index", "se_bits"], &rows)?;
    if !rates.is_empty() {
        println!("mean_se_bits {}", mean_rate(&data.samples, &projector, &params)?);
    }
    Ok(true)
}

fn ao(a: AoArgs) -> Result<bool> {
    let data = load_dataset(&a.data)?;
    let m_p = pattern_for(&data)?;
    let opts = AoOptions {
        max_outer_iters: a.max_iter,
        tol: a.tol,
        ..AoOptions::default()
    };
    let rows: Vec<Vec<String>> = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<Vec<String>> {
            let r = ao_solve(&s.h, &m_p, s.p_max, s.noise_var, &opts)?;
            let zf = match zf_baseline(&s.h, &m_p, s.p_max) {
                Ok(z) => sum_rate(&s.h, &z.a, &m_p, &z.v, s.noise_var)?.to_string(),
                Err(_) => String::new(),
            };
            Ok(vec![
                i.to_string(),
                r.se.to_string(),
                r.outer_iters.to_string(),
                r.converged.to_string(),
                zf,
            ])
        })
        .collect::<Result<_>>()?;
    write_csv(
        &a.csv,
        &["sample_index", "se_bits", "outer_iters", "converged", "zf_se_bits"],
        &rows,
    )?;
    if !rows.is_empty() {
        let mean = rows.iter().map(|r| r[1].parse::<f64>().unwrap()).sum::<f64>() / rows.len() as f64;
        println!("mean_se_bits {mean}");
    }
    Ok(true)
}

fn verify(a: VerifyArgs) -> Result<bool> {
    let params = match &a.ckpt {
        Some(p) => load_checkpoint(p)?,
        None => GgnnParams::random(&a.dims, &mut ChaCha8Rng::seed_from_u64(a.seed))?,
    };
    if a.trials == 0 {
        eprintln!("warning: --trials 0, nothing checked");
        println!("PASS (vacuous)");
        return Ok(true);
    }
    let cfg = SurfaceConfig::new(a.nx, a.ny, a.feeds)?;
    let m_p = build_phase_pattern(&cfg)?;
    let projector = RangeProjector::new(&m_p)?;
    let sample = generate_samples(&cfg, a.users, &path_variances(2), 10.0, 1, a.seed)?.remove(0);
    let (n_t, k, l) = (cfg.n_t(), a.users, a.feeds);

    let pipeline = |h: &holobeam::linalg::CMatrix<f64>, mp: &PhasePattern<f64>| {
        let proj = RangeProjector::new(mp)?;
        let out = full_forward_with(h, &proj, &params, sample.p_max)?;
        Ok((out.a, out.v))
    };
    let network = |h: &holobeam::linalg::CMatrix<f64>, mp: &PhasePattern<f64>| ggnn_forward(h, mp.matrix(), &params);
    let base = full_forward_with(&sample.h, &projector, &params, sample.p_max)?;

    let rows: Vec<(usize, f64, f64, f64)> = (0..a.trials)
        .into_par_iter()
        .map(|t| -> Result<(usize, f64, f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            rng.set_stream(t as u64 + 1);
            let perms = PermTriple::random(k, n_t, l, &mut rng);
            let e2e = check_3dpe(pipeline, &sample.h, &m_p, &perms, a.tol)?;
            let net = check_pepi_ggnn(network, &sample.h, &m_p, &perms, a.tol)?;
            let proj = check_projection_pe(&base.ve, &base.a, &m_p, sample.p_max, &perms, a.projection_tol)?;
            Ok((t, e2e.max_discrepancy, net.max_discrepancy, proj.max_discrepancy()))
        })
        .collect::<Result<_>>()?;

    let mut pass = true;
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|&(t, e, n, p)| {
            let ok = e <= a.tol && n <= a.tol && p <= a.projection_tol;
            pass &= ok;
            worst = (worst.0.max(e), worst.1.max(n), worst.2.max(p));
            vec![
                t.to_string(),
                e.to_string(),
                n.to_string(),
                p.to_string(),
                ok.to_string(),
            ]
        })
        .collect();
    if let Some(path) = &a.csv {
        write_csv(
            path,
            &[
                "trial",
                "pipeline_max_diff",
                "network_max_diff",
                "projection_max_diff",
                "passed",
            ],
            &csv_rows,
        )?;
    }
    println!(
        "{} trials: pipeline {:.3e}, network {:.3e}, projection {:.3e} -> {}",
        a.trials,
        worst.0,
        worst.1,
        worst.2,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn bench(a: BenchArgs) -> Result<bool> {
    if a.reps == 0 || a.samples == 0 {
        bail!("--reps and --samples must be positive");
    }
    let params = load_checkpoint(&a.ckpt)?;
    let mut rows = Vec::new();
    for path in &a.data {
        let data = load_dataset(path)?;
        let m_p = pattern_for(&data)?;
        let projector = RangeProjector::new(&m_p)?;
        let samples = &data.samples[..a.samples.min(data.samples.len())];
        if samples.is_empty() {
            bail!("dataset {} has no samples", path.display());
        }
        let n = samples.len() as f64;
        let opts = AoOptions::default();

        let mut ggnn_ms = Vec::with_capacity(a.reps);
        let mut ggnn_se = 0.0;
        for rep in 0..=a.reps {
            let start = Instant::now();
            let mut se = 0.0;
            for s in samples {
                let out = full_forward_with(&s.h, &projector, &params, s.p_max)?;
                se += sum_rate(&s.h, &out.a, &m_p, &out.v, s.noise_var)?;
            }
            if rep > 0 {
                ggnn_ms.push(start.elapsed().as_secs_f64() * 1e3 / n);
            }
            ggnn_se = se / n;
        }
        let mut ao_ms = Vec::with_capacity(a.reps);
        let mut ao_se = 0.0;
        for rep in 0..=a.reps {
            let start = Instant::now();
            let mut se = 0.0;
            for s in samples {
                se += ao_solve(&s.h, &m_p, s.p_max, s.noise_var, &opts)?.se;
            }
            if rep > 0 {
                ao_ms.push(start.elapsed().as_secs_f64() * 1e3 / n);
            }
            ao_se = se / n;
        }
        for (method, times, se) in [("ggnn", &ggnn_ms, ggnn_se), ("ao", &ao_ms, ao_se)] {
            let (mean, std) = mean_std(times);
            rows.push(vec![
                method.to_string(),
                data.n_t().to_string(),
                mean.to_string(),
                std.to_string(),
                se.to_string(),
            ]);
            println!(
                "{method:>5} N_t={:<4} {mean:10.3} ms  (sd {std:.3})  SE {se:.4}",
                data.n_t()
            );
        }
    }
    write_csv(&a.csv, &["method", "n_t", "mean_ms", "std_ms", "se"], &rows)?;
    Ok(true)
}
