use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use conjlab::config::ExperimentConfig;
use conjlab::harness::{exit_code, run, Stage};

#[derive(Parser)]
#[command(
    name = "conjlab",
    about = "Numerical conjugacies for semilinear difference equations and random dynamical systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Parser)]
struct CommonArgs {
    /// experiment configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// output directory; overrides [output] dir
    #[arg(long)]
    out: Option<PathBuf>,
    /// overrides every seed in the config (sampling, verification)
    #[arg(long)]
    seed: Option<u64>,
    /// overrides the verification sample count
    #[arg(long)]
    samples: Option<usize>,
    /// overrides the iterative solver tolerance
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Certify bounded growth and check the smallness conditions
    Check(CommonArgs),
    /// Build the conjugacy and report its contraction data
    Conjugate(CommonArgs),
    /// Build the conjugacy and exercise every conclusion on samples
    Verify(CommonArgs),
    /// Lyapunov spectrum of the driven linear part
    Spectrum(CommonArgs),
    /// Cutoff construction and local linearization
    Localize(CommonArgs),
    /// Full pipeline per the config's mode flags
    Report(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, stage) = match &cli.command {
        Command::Check(a) => (a, Stage::Check),
        Command::Conjugate(a) => (a, Stage::Conjugate),
        Command::Verify(a) => (a, Stage::Verify),
        Command::Spectrum(a) => (a, Stage::Spectrum),
        Command::Localize(a) => (a, Stage::Localize),
        Command::Report(a) => (a, Stage::Report),
    };

    let mut cfg = match ExperimentConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("conjlab: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.sampling.seed = seed;
        cfg.verify.seed = seed;
    }
    if let Some(n) = args.samples {
        cfg.verify.n_samples = n;
    }
    if let Some(tol) = args.tol {
        cfg.tolerances.solver_tol = tol;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("conjlab: {e}");
        return ExitCode::from(1);
    }

    let (report, timings) = run(&cfg, stage);
    if let Err(e) = report.emit(&cfg.output.dir, &timings) {
        eprintln!("conjlab: cannot write report: {e}");
        return ExitCode::from(1);
    }
    for (stage, msg) in &report.failures {
        eprintln!("conjlab: [{stage}] {msg}");
    }
    for v in &report.verdicts {
        println!(
            "{} {}: measured {:.3e}, threshold {:.3e}",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.measured,
            v.threshold
        );
    }
    if let Some(c) = &report.conditions {
        for cond in [Some(&c.topological), c.smooth.as_ref(), Some(&c.invertibility)]
            .into_iter()
            .flatten()
        {
            println!(
                "{} {}: {:.6} vs {:.6} (margin {:.3e})",
                if cond.pass { "PASS" } else { "FAIL" },
                cond.name,
                cond.lhs,
                cond.rhs,
                cond.margin
            );
        }
    }
    println!("report written to {}", cfg.output.dir.display());
    ExitCode::from(exit_code(&report) as u8)
}
