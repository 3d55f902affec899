//! Command-line front end: single runs, sweeps, report emission, analytic
//! cost grids, and checkpoint evaluation.
//!
//! Exit codes: 0 ok, 2 config error, 3 diverged run, 4 io error.

use clap::{Parser, Subcommand, ValueEnum};
use sparse_evolve::error::Error;
use sparse_evolve::flops::{pf_total_flops, testing_flops, training_step_flops};
use sparse_evolve::gan::WeightSource;
use sparse_evolve::metrics;
use sparse_evolve::report::write_report;
use sparse_evolve::rng::{derive_key, derive_rng, Domain};
use sparse_evolve::sweep::{read_results, run_sweep, SweepSpec};
use sparse_evolve::topology::allocate;
use sparse_evolve::train::{sample_generator, train_to_dir, TrainConfig, Trainer};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "sparse-evolve",
    version,
    about = "Dynamic sparse GAN training on synthetic 2D tasks",
    after_help = "SPARSE_EVOLVE_SEED overrides the config seed for train and eval."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    Current,
    Averaged,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one training configuration into a run directory
    Train {
        /// JSON config; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// KEY=VALUE override, repeatable; dots reach nested fields
        /// (schedule.delta_t=50). s_G/s_D/lr_G/lr_D are accepted aliases.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Parent directory; the run lands in <out>/<config-hash>
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Run a (method, s_G, s_D, seed) grid and aggregate results
    Sweep {
        /// JSON sweep spec
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
        /// Parallel runs
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Render plots and a summary table from sweep results
    Report {
        /// results.csv from a sweep
        #[arg(long)]
        results: PathBuf,
        /// Output directory; defaults next to the results file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the analytic training/testing cost grid for a config
    Flops {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "s-g", value_delimiter = ',', default_value = "0.5,0.9,0.95")]
        s_g: Vec<f64>,
        #[arg(long = "s-d", value_delimiter = ',', default_value = "0.0,0.5")]
        s_d: Vec<f64>,
    },
    /// Re-evaluate a recorded run from its checkpoint
    Eval {
        /// Run directory containing checkpoint.bin
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Defaults to the run's seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "averaged")]
        source: SourceArg,
        /// Also write the generated samples as CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e);
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) => 3,
        Error::Io(_) | Error::Csv(_) => 4,
        _ => 2,
    }
}

fn run(cli: Cli) -> sparse_evolve::Result<i32> {
    match cli.cmd {
        Cmd::Train { config, sets, seed, out } => cmd_train(config, sets, seed, out),
        Cmd::Sweep { spec, out, jobs } => cmd_sweep(spec, out, jobs),
        Cmd::Report { results, out } => cmd_report(results, out),
        Cmd::Flops { config, s_g, s_d } => cmd_flops(config, s_g, s_d),
        Cmd::Eval { run, samples, seed, source, out } => cmd_eval(run, samples, seed, source, out),
    }
}

fn load_config(path: Option<&Path>) -> sparse_evolve::Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn alias(key: &str) -> &str {
    match key {
        "s_G" => "s_g",
        "s_D" => "s_d",
        "lr_G" => "lr_g",
        "lr_D" => "lr_d",
        _ => key,
    }
}

/// Applies KEY=VALUE overrides onto the full config tree, then re-validates
/// the result so unknown keys are rejected by name.
fn apply_sets(cfg: &TrainConfig, sets: &[String]) -> sparse_evolve::Result<TrainConfig> {
    let mut tree = serde_json::to_value(cfg)?;
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{}'", s)))?;
        let value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let parts: Vec<&str> = key.split('.').map(alias).collect();
        let (last, path) = parts.split_last().expect("split yields at least one part");
        let mut node = &mut tree;
        for part in path {
            node = node
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("unknown config section '{}'", part)))?;
        }
        node.as_object_mut()
            .ok_or_else(|| Error::Config(format!("'{}' is not a config section", key)))?
            .insert(last.to_string(), value);
    }
    Ok(serde_json::from_value(tree)?)
}

fn env_seed() -> sparse_evolve::Result<Option<u64>> {
    match std::env::var("SPARSE_EVOLVE_SEED") {
        Ok(s) => Ok(Some(s.parse().map_err(|_| {
            Error::Config(format!("SPARSE_EVOLVE_SEED must be an integer, got '{}'", s))
        })?)),
        Err(_) => Ok(None),
    }
}

fn cmd_train(
    config: Option<PathBuf>,
    sets: Vec<String>,
    seed: Option<u64>,
    out: PathBuf,
) -> sparse_evolve::Result<i32> {
    let mut cfg = apply_sets(&load_config(config.as_deref())?, &sets)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let dir = out.join(format!("{:016x}", cfg.hash()));
    let started = std::time::Instant::now();
    let result = train_to_dir(&cfg, Some(&dir))?;
    append_wall_secs(&dir.join("summary.json"), started.elapsed().as_secs_f64())?;
    println!("run dir: {}", dir.display());
    if let Some(row) = result.final_row() {
        println!(
            "final: step={} coverage={:.4} hq_ratio={:.4} w1={:.4} itop_rate={:.4}",
            row.step, row.coverage, row.hq_ratio, row.w1, row.itop_rate
        );
    }
    println!(
        "flops: training={:.4}x testing={:.4}x",
        result.training_flops_ratio, result.testing_flops_ratio
    );
    if result.diverged {
        eprintln!(
            "run diverged at step {} of {}",
            result.diverged_at.unwrap_or(0),
            cfg.steps
        );
        return Ok(3);
    }
    Ok(0)
}

/// Wall-clock is observational only, so it rides in summary.json without
/// touching the deterministic RunResult.
fn append_wall_secs(path: &Path, secs: f64) -> sparse_evolve::Result<()> {
    let text = std::fs::read_to_string(path)?;
    let mut v: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(obj) = v.as_object_mut() {
        obj.insert("wall_secs".into(), serde_json::json!(secs));
    }
    std::fs::write(path, serde_json::to_string_pretty(&v)?)?;
    Ok(())
}

fn cmd_sweep(spec_path: PathBuf, out: PathBuf, jobs: usize) -> sparse_evolve::Result<i32> {
    let text = std::fs::read_to_string(&spec_path)?;
    let spec: SweepSpec = serde_json::from_str(&text)?;
    let outcome = run_sweep(&spec, &out, jobs.max(1))?;
    let diverged = outcome.rows.iter().filter(|r| r.diverged).count();
    println!(
        "{} rows ({} executed, {} resumed, {} diverged)",
        outcome.rows.len(),
        outcome.executed,
        outcome.skipped,
        diverged
    );
    println!("results: {}", outcome.results_path.display());
    println!("aggregate: {}", out.join("aggregate.csv").display());
    Ok(0)
}

fn cmd_report(results: PathBuf, out: Option<PathBuf>) -> sparse_evolve::Result<i32> {
    let rows = read_results(&results)?;
    let out = match out {
        Some(d) => d,
        None => results
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    write_report(&rows, &out)?;
    for f in ["coverage.svg", "w1.svg", "summary.md"] {
        println!("wrote {}", out.join(f).display());
    }
    Ok(0)
}

fn cmd_flops(config: Option<PathBuf>, s_g: Vec<f64>, s_d: Vec<f64>) -> sparse_evolve::Result<i32> {
    let cfg = load_config(config.as_deref())?;
    cfg.validate()?;
    let spec = cfg.gan_spec();
    let ones_g = vec![1.0; spec.g_layers.len()];
    let ones_d = vec![1.0; spec.d_layers.len()];
    let dense_step = training_step_flops(
        &spec.g_layers,
        &ones_g,
        &spec.d_layers,
        &ones_d,
        cfg.batch,
        cfg.d_steps_per_g,
    );
    let test_dense = testing_flops(&spec.g_layers, &ones_g);
    println!("allocation={:?} steps={} batch={}", cfg.allocation, cfg.steps, cfg.batch);
    println!("{:>6} {:>6} {:>12} {:>10} {:>9}", "s_G", "s_D", "method", "train", "test");
    for &sg in &s_g {
        for &sd in &s_d {
            let g_plan = allocate(cfg.allocation, &spec.g_layers, sg)?;
            let d_plan = allocate(cfg.allocation, &spec.d_layers, sd)?;
            let sparse_step = training_step_flops(
                &spec.g_layers,
                &g_plan.densities,
                &spec.d_layers,
                &d_plan.densities,
                cfg.batch,
                cfg.d_steps_per_g,
            );
            let test_sparse = testing_flops(&spec.g_layers, &g_plan.densities);
            // stu and static share every ratio: exploration moves weights,
            // not cost
            for method in ["stu", "static"] {
                println!(
                    "{:>6.2} {:>6.2} {:>12} {:>9.4}x {:>8.4}x",
                    sg,
                    sd,
                    method,
                    sparse_step / dense_step,
                    test_sparse / test_dense
                );
            }
            let tuned_g: Vec<f64> = vec![1.0 - sg; spec.g_layers.len()];
            let tuned_d: Vec<f64> = vec![1.0 - sd; spec.d_layers.len()];
            let pf_total = pf_total_flops(
                &spec.g_layers,
                &tuned_g,
                &spec.d_layers,
                &tuned_d,
                cfg.batch,
                cfg.d_steps_per_g,
                cfg.steps,
            );
            println!(
                "{:>6.2} {:>6.2} {:>12} {:>9.4}x {:>8.4}x",
                sg,
                sd,
                "pf",
                pf_total / (cfg.steps as f64 * dense_step),
                testing_flops(&spec.g_layers, &tuned_g) / test_dense
            );
        }
    }
    Ok(0)
}

fn cmd_eval(
    run: PathBuf,
    samples: usize,
    seed: Option<u64>,
    source: SourceArg,
    out: Option<PathBuf>,
) -> sparse_evolve::Result<i32> {
    let tr = Trainer::load_checkpoint(&run.join("checkpoint.bin"))?;
    let cfg = tr.cfg.clone();
    let mut seed = seed.unwrap_or(cfg.seed);
    if let Some(s) = env_seed()? {
        seed = s;
    }
    let source = match source {
        SourceArg::Current => WeightSource::Current,
        SourceArg::Averaged => WeightSource::Averaged,
    };
    let pts = sample_generator(&tr.g, source, cfg.latent_dim, samples, seed)?;
    let reference = tr
        .sampler()
        .sample(samples, &mut derive_rng(seed, Domain::Eval, 1));
    let rep = metrics::report(
        &pts,
        &reference,
        tr.sampler().centers(),
        cfg.sigma,
        cfg.radius_mult,
        cfg.eval_projections,
        derive_key(seed, Domain::Eval, 2),
    )?;
    let payload = serde_json::json!({
        "run": run.display().to_string(),
        "steps_done": tr.steps_done(),
        "diverged": tr.diverged(),
        "samples": samples,
        "seed": seed,
        "mode_coverage": rep.mode_coverage,
        "hq_ratio": rep.hq_ratio,
        "w1": rep.w1,
    });
    println!("{}", serde_json::to_string_pretty(&payload)?);
    if let Some(out) = out {
        let mut w = csv::Writer::from_path(&out)?;
        w.write_record(["x", "y"])?;
        for i in 0..samples {
            w.write_record([
                format!("{}", pts.data()[2 * i]),
                format!("{}", pts.data()[2 * i + 1]),
            ])?;
        }
        w.flush()?;
    }
    Ok(0)
}
