use anyhow::{bail, Context, Result};
use bipartite_rmt::ensemble::SubsystemDims;
use bipartite_rmt::rng::{domain, SeedTag};
use bipartite_rmt::runner::{run_experiment, ExperimentConfig};
use bipartite_rmt::stats::{s2bar_density, Binning};
use bipartite_rmt::theory;
use bipartite_rmt::validation::standard_suite;
use clap::{Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bipartite-rmt", version, about = "Entanglement growth in coupled random-matrix systems")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "BRMT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a JSON experiment config.
    Simulate { config: PathBuf },
    /// Print a theory curve as CSV.
    Theory {
        curve: Curve,
        #[arg(long)]
        lambda: f64,
        /// Subset size; for ultraweak and weak_combined it applies to both sides.
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// C or R.
        #[arg(long, default_value = "C")]
        kind: String,
        #[arg(long, num_args = 2, default_values_t = [50, 50])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 4.0)]
        t_max: f64,
        #[arg(long, default_value_t = 81)]
        points: usize,
    },
    /// Monte Carlo checks of the ensemble moments; exits non-zero on failure.
    Validate {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Histogram of an s2bar.csv column.
    Density {
        input: PathBuf,
        #[arg(long, default_value_t = 30)]
        bins: usize,
        #[arg(long, conflicts_with = "linear")]
        log: bool,
        #[arg(long)]
        linear: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Curve {
    #[value(name = "ultraweak")]
    Ultraweak,
    #[value(name = "weak_EE")]
    WeakEe,
    #[value(name = "weak_EC")]
    WeakEc,
    #[value(name = "weak_combined")]
    WeakCombined,
    #[value(name = "intermediate")]
    Intermediate,
    #[value(name = "strong")]
    Strong,
    /// S̄₂ density for E⊗E states, x in (0, 1/3).
    #[value(name = "ee_density")]
    EeDensity,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate { config } => simulate(config),
        Command::Theory { curve, lambda, k, kind, dims, t_max, points } => {
            theory_csv(curve, lambda, k, &kind, &dims, t_max, points)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { samples, seed } => validate(samples, seed),
        Command::Density { input, bins, log: _, linear } => {
            density(input, bins, if linear { Binning::Linear } else { Binning::Log })?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn simulate(path: PathBuf) -> Result<ExitCode> {
    let config = ExperimentConfig::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let manifest = run_experiment(&config)?;
    let ok = manifest.tasks.iter().filter(|t| t.error.is_none()).count();
    println!("output: {}", manifest.output_dir.display());
    println!("config hash: {}", manifest.config_hash);
    println!("tasks: {ok} ok, {} failed ({:.1} s)", manifest.failures(), manifest.total_seconds);
    for t in manifest.tasks.iter().filter(|t| t.error.is_some()) {
        eprintln!("failed: {} realization {:?}: {}", t.cell, t.realization, t.error.as_deref().unwrap_or(""));
    }
    Ok(if manifest.failures() == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn theory_csv(curve: Curve, lambda: f64, k: usize, kind: &str, dims: &[usize], t_max: f64, points: usize) -> Result<()> {
    if points < 2 || !(t_max > 0.0) {
        bail!("need at least 2 points and a positive --t-max");
    }
    let dims = SubsystemDims::new(dims[0], dims[1])?;
    let c: f64 = kind.parse::<bipartite_rmt::states::StateKind>()?.mean_c2(k);
    let mut out = csv::Writer::from_writer(std::io::stdout().lock());
    if let Curve::EeDensity = curve {
        out.write_record(["x", "density"])?;
        for (x, d) in theory::ee_density_curve(lambda, 1e-6, 1.0 / 3.0 - 1e-9, points) {
            out.serialize((x, d))?;
        }
        out.flush()?;
        return Ok(());
    }
    out.write_record(["t", "theory"])?;
    for i in 0..points {
        let t = t_max * i as f64 / (points - 1) as f64;
        let v = match curve {
            Curve::Ultraweak => theory::ultraweak_curve(t, c, c),
            Curve::WeakEe => theory::ee_mean_curve(t, lambda),
            Curve::WeakEc => theory::ec_mean_curve(t, lambda, c)?,
            Curve::WeakCombined => theory::weak_combined_short(t, lambda, c, c),
            Curve::Intermediate => theory::intermediate_curve(t, lambda, dims),
            Curve::Strong => theory::strong_curve(t, lambda, dims),
            Curve::EeDensity => unreachable!(),
        };
        out.serialize((t, v))?;
    }
    out.flush()?;
    Ok(())
}

fn validate(samples: usize, seed: u64) -> Result<ExitCode> {
    let mut rng = SeedTag::new(seed, [domain::VALIDATION, 0, 0, 0]).rng();
    let (moments, exponential) = standard_suite(samples, &mut rng)?;
    let mut stdout = std::io::stdout().lock();
    let mut failed = 0;
    for r in &moments {
        writeln!(stdout, "{r}")?;
        failed += usize::from(!r.passes());
    }
    for e in &exponential {
        writeln!(
            stdout,
            "{:<40} KS {:.4} (threshold {:.4})  mean {:.4}  var {:.4}  {}",
            "off-diagonal |V|² exponential",
            e.ks_statistic,
            e.ks_threshold,
            e.mean,
            e.variance,
            if e.passes() { "PASS" } else { "FAIL" }
        )?;
        failed += usize::from(!e.passes());
    }
    writeln!(stdout, "{} checks, {failed} failed", moments.len() + exponential.len())?;
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn density(input: PathBuf, bins: usize, binning: Binning) -> Result<()> {
    let mut rdr = csv::Reader::from_path(&input).with_context(|| format!("reading {}", input.display()))?;
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "s2bar")
        .with_context(|| format!("{} has no s2bar column", input.display()))?;
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        samples.push(rec[col].parse::<f64>().with_context(|| format!("bad value {:?}", &rec[col]))?);
    }
    let hist = s2bar_density(&samples, binning, bins)?;
    let mut out = csv::Writer::from_writer(std::io::stdout().lock());
    out.write_record(["bin_lo", "bin_hi", "density", "count"])?;
    for ((e, d), c) in hist.bin_edges.windows(2).zip(&hist.density).zip(&hist.counts) {
        out.serialize((e[0], e[1], d, c))?;
    }
    out.flush()?;
    Ok(())
}
