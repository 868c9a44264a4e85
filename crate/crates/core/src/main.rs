use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use boxopt::harness::{self, ExperimentConfig, Method};
use boxopt::Error;

#[derive(Parser)]
#[command(name = "boxopt", version, about = "Bounding-box refinement with Gaussian-process search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Oracle-scorer comparison of baseline, random search and FGS.
    OracleExp,
    /// Train per-category structured SVMs.
    Train,
    /// Refine test-split detections with the trained model.
    Refine,
    /// Evaluate a detections file.
    Eval,
    /// Fit GP hyperparameters on the train split.
    GpFit,
    /// Write a synthetic benchmark.
    SynthGen,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::OracleExp => {
            let report = harness::run_oracle_experiment(&cfg)?;
            for (method, results) in &report.results {
                for r in results {
                    println!("{:<14} IoU {:.2}  mAP {:.4}", method.name(), r.iou_threshold, r.map);
                }
            }
            for m in [Method::Fgs, Method::RandomSearch] {
                let added = report.added_per_image(m);
                if !added.is_empty() {
                    let mean = added.values().sum::<usize>() as f64 / added.len() as f64;
                    let max = added.values().max().copied().unwrap_or(0);
                    println!("{:<14} added boxes per image: mean {mean:.1}, max {max}", m.name());
                }
            }
            let bad = report.fgs.iter().filter(|s| !s.trace_is_monotone()).count();
            if bad > 0 {
                log::warn!("{bad} searches with a decreasing best-score trace");
            }
            println!("elapsed {:.1}s", report.elapsed.as_secs_f64());
        }
        Command::Train => {
            for s in harness::run_train(&cfg)? {
                println!(
                    "{:<12} examples {:>5}  objective {:.6}  mining updates {}{}",
                    s.category,
                    s.examples,
                    s.objective,
                    s.updates,
                    if s.converged { "" } else { "  (iteration cap)" }
                );
            }
        }
        Command::Refine => {
            let r = harness::run_refine(&cfg)?;
            let added: usize = r.stats.iter().map(|s| s.added).sum();
            println!("{} detections, {added} boxes proposed", r.detections.len());
        }
        Command::Eval => {
            for r in harness::run_eval(&cfg)? {
                println!("IoU {:.2}  mAP {:.4}", r.iou_threshold, r.map);
            }
        }
        Command::GpFit => {
            let p = harness::run_gp_fit(&cfg)?;
            for (cat, h) in &p.by_category {
                println!("{cat}: {h:?}");
            }
        }
        Command::SynthGen => {
            let d = harness::run_synth_gen(&cfg)?;
            println!("{} images written to {}", d.manifest.images.len(), cfg.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                Error::Data(_) => ExitCode::from(3),
            }
        }
    }
}
