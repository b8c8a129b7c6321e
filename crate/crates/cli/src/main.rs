use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fracrte::app::{self, Overrides, Reference};
use fracrte::config::SimulationConfig;
use fracrte::Error;

/// Monte Carlo transport with singular multifractional scattering.
#[derive(Parser)]
#[command(name = "fracrte", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral self-tests for a homogeneous configuration.
    Validate(Common),
    /// Monte Carlo run; writes CSV observables and a JSON report.
    Simulate(Common),
    /// Err of Monte Carlo estimates against the spectral solver or a profile.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Depth profile CSV to compare against instead of the spectral solver.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// With --reference: compare this profile CSV without running anything.
        #[arg(long, requires = "reference")]
        mc: Option<PathBuf>,
        /// Fail with exit code 2 when any Err exceeds this value.
        #[arg(long)]
        max_err: Option<f64>,
    },
    /// Sampler diagnostics.
    SampleTest {
        #[command(flatten)]
        common: Common,
        /// Number of draws per diagnostic.
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML file or preset name.
    #[arg(long, default_value = "test-case-u4")]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Drop the small-jump diffusion.
    #[arg(long)]
    no_correction: bool,
    #[arg(long)]
    n_particles: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<SimulationConfig, Error> {
        let mut cfg = SimulationConfig::resolve(&self.config)?;
        Overrides {
            seed: self.seed,
            workers: self.workers,
            out: self.out.clone(),
            no_correction: self.no_correction,
            n_particles: self.n_particles,
        }
        .apply(&mut cfg)?;
        Ok(cfg)
    }
}

enum Outcome {
    Ok,
    Failed(String),
}

fn write_json(dir: Option<&Path>, name: &str, value: &impl serde::Serialize) -> anyhow::Result<String> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    if let Some(d) = dir {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        fs::write(d.join(name), &text).with_context(|| format!("writing {name}"))?;
    }
    Ok(text)
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Validate(c) => {
            let cfg = c.load()?;
            let report = app::cmd_validate(&cfg)?;
            print!("{}", write_json(c.out.as_deref(), "validate.json", &report)?);
            Ok(if report.passed {
                Outcome::Ok
            } else {
                Outcome::Failed("spectral self-tests failed".into())
            })
        }
        Command::Simulate(c) => {
            let cfg = c.load()?;
            let out = app::output_dir(&cfg);
            let summary = app::cmd_simulate(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(Outcome::Ok)
        }
        Command::Compare {
            common,
            reference,
            mc,
            max_err,
        } => {
            let errs: Vec<f64> = if let (Some(mc), Some(r)) = (&mc, &reference) {
                let err = app::compare_profile_files(mc, r)?;
                println!("{}", serde_json::json!({ "err": err }));
                vec![err]
            } else {
                let cfg = common.load()?;
                let reference = match reference {
                    Some(p) => Reference::Profile(p),
                    None => Reference::Spectral,
                };
                let table = app::cmd_compare(&cfg, &reference)?;
                let out = app::output_dir(&cfg);
                fs::create_dir_all(&out)?;
                fs::write(out.join("compare.csv"), table.to_csv())?;
                print!("{}", write_json(Some(&out), "compare.json", &table)?);
                table.rows.iter().map(|r| r.err).collect()
            };
            match max_err {
                Some(m) if errs.iter().any(|e| e.is_nan() || *e > m) => Ok(Outcome::Failed(format!("Err above {m}"))),
                _ => Ok(Outcome::Ok),
            }
        }
        Command::SampleTest { common, samples } => {
            let cfg = common.load()?;
            let report = app::cmd_sample_test(&cfg, samples)?;
            print!("{}", write_json(common.out.as_deref(), "sample_test.json", &report)?);
            Ok(if report.passed {
                Outcome::Ok
            } else {
                Outcome::Failed("sampler diagnostics failed".into())
            })
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Invariant(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("fracrte: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("fracrte: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
