use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use nilab_cli::config::{Profile, RunConfig};
use nilab_cli::experiments::{agop_check, ext_compare, lm_shapes, run_double_descent, run_lm_sweep};
use nilab_cli::manifest::write_atomic;
use nilab_cli::verify::{run_all, Status};
use nilab_core::lmshape::write_shapes_csv;

#[derive(Parser)]
#[command(name = "nilab", version, about = "AGOP interaction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file layered over the profile defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to use: desk or full
    #[arg(long)]
    profile: Option<Profile>,
    /// Root directory for run outputs
    #[arg(long, env = "NILAB_OUT", default_value = "runs")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, Vec<String>)> {
        RunConfig::resolve(self.profile, self.config.as_deref())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the toy autoencoder over a grid of training-set sizes
    DoubleDescent {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds, replacing the configured ones
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Continue an interrupted run in the same directory
        #[arg(long)]
        resume: bool,
    },
    /// Train every solved shape of each budget and measure its interaction metrics
    LmSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        resume: bool,
        /// Directory holding train.txt, and optionally valid.txt and test.txt
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Print the solved shapes of the configured budgets as CSV
    Shapes {
        #[command(flatten)]
        common: Common,
    },
    /// Distances of external models to the efficiency interval and per-group trends
    ExtCompare {
        #[command(flatten)]
        common: Common,
    },
    /// Weight/AGOP alignment of a saved checkpoint
    AgopCheck {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path without extension, e.g. runs/lm-sweep/checkpoints/0.1M-4-s0
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Run the verification criteria
    Verify {
        #[command(flatten)]
        common: Common,
        /// Also run the training criteria
        #[arg(long)]
        heavy: bool,
        /// Only these criteria (comma-separated ids)
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        /// Check fixture tables from this directory instead of the bundled ones
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Print the resolved configuration as TOML
    Config {
        #[command(flatten)]
        common: Common,
    },
}

fn set_corpus(cfg: &mut RunConfig, dir: &Path) {
    let c = &mut cfg.lm_sweep.corpus;
    c.train = Some(dir.join("train.txt"));
    c.valid = Some(dir.join("valid.txt")).filter(|p| p.exists());
    c.test = Some(dir.join("test.txt")).filter(|p| p.exists());
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::DoubleDescent { common, seeds, resume } => {
            let (mut cfg, overrides) = common.load()?;
            if !seeds.is_empty() {
                cfg.double_descent.seeds = seeds;
            }
            let dir = common.out.join("double-descent");
            let out = run_double_descent(&cfg, &overrides, &dir, resume)?;
            for r in &out.rows {
                println!(
                    "n={:<6} test loss {:.4} AOFE {:.4e} AOFE-ratio {:.4}",
                    r.data_size, r.test_loss_mean, r.aofe_mean, r.aofe_ratio_mean
                );
            }
            println!("outputs in {}", out.dir.display());
            Ok(if out.failed > 0 {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::LmSweep {
            common,
            seeds,
            resume,
            corpus,
        } => {
            let (mut cfg, overrides) = common.load()?;
            if !seeds.is_empty() {
                cfg.lm_sweep.seeds = seeds;
            }
            if let Some(dir) = &corpus {
                set_corpus(&mut cfg, dir);
            }
            let dir = common.out.join("lm-sweep");
            let out = run_lm_sweep(&cfg, &overrides, &dir, resume)?;
            if let Some(s) = &out.summary {
                for b in &s.best {
                    println!(
                        "best {} alpha {:.4} test loss {:.4}",
                        b.id, b.depth_width_ratio, b.test_loss
                    );
                }
                if let Some(i) = &s.interval {
                    println!("interval [{:.4}, {:.4}]", i.lo, i.hi);
                }
                if let Some(r) = s.r_test_loss_aofe_ratio {
                    println!("r(test loss, AOFE-ratio) {r:.4}");
                }
            }
            println!("outputs in {}", out.dir.display());
            Ok(if out.failed > 0 {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Shapes { common } => {
            let (cfg, _) = common.load()?;
            write_shapes_csv(&lm_shapes(&cfg.lm_sweep), std::io::stdout().lock())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ExtCompare { common } => {
            let (cfg, _) = common.load()?;
            let report = ext_compare(&cfg, &common.out.join("ext-compare"))?;
            for (row, d) in report.table.rows.iter().zip(&report.distances) {
                println!(
                    "{:<28} alpha {:.5} delta {:.5} gap {:.1}",
                    row.model, d.alpha, d.delta_alpha, d.layer_gap
                );
            }
            for t in &report.trends {
                match t.r {
                    Some(r) => println!("group {} (n={}): r = {r:.3}", t.group, t.n),
                    None => println!("group {} (n={}): too few rows", t.group, t.n),
                }
            }
            for r in &report.table.rejected {
                eprintln!("rejected line {}: {}", r.line, r.reason);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::AgopCheck {
            common,
            checkpoint,
            corpus,
        } => {
            let (mut cfg, _) = common.load()?;
            if let Some(dir) = &corpus {
                set_corpus(&mut cfg, dir);
            }
            let check = agop_check(&cfg, &checkpoint)?;
            println!("{}", serde_json::to_string_pretty(&check)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            common,
            heavy,
            only,
            fixtures,
        } => {
            let (mut cfg, _) = common.load()?;
            cfg.verify.heavy |= heavy;
            if fixtures.is_some() {
                cfg.verify.fixtures = fixtures;
            }
            let work = common.out.join("verify");
            std::fs::create_dir_all(&work).with_context(|| format!("creating {}", work.display()))?;
            let results = run_all(&cfg, &work, &only);
            for r in &results {
                println!("{r}");
            }
            write_atomic(
                &work.join("results.json"),
                serde_json::to_string_pretty(&results)?.as_bytes(),
            )?;
            let failed = results.iter().any(|r| r.status == Status::Fail);
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Config { common } => {
            let (cfg, _) = common.load()?;
            print!("{}", cfg.to_toml()?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
