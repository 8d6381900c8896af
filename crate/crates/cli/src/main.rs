use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use gtl_cirl::gtl::io::parse_trace_file;
use gtl_cirl::gtl::{parse_formula, Monitor};
use gtl_cirl::harness::{self, emit_results, emit_summary, Method, RunConfig};

#[derive(Parser)]
#[command(
    name = "gtl-cirl",
    about = "Causal graph-temporal-logic reinforcement learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write its result files.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every method over a range of seeds and summarize.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `a..b` (half-open) or `a..=b`.
        #[arg(long)]
        seeds: String,
        /// Comma-separated subset of gtl_cirl,standard_rl,counterfactual_rl.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Robustness of a formula on a trace file.
    Monitor {
        #[arg(long)]
        formula: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Time index to evaluate at.
        #[arg(long, default_value_t = 0)]
        t: usize,
    },
    /// Print the version.
    Version,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        bail!("seed range must look like `a..b` or `a..=b`, got `{s}`");
    };
    let a: u64 = a
        .trim()
        .parse()
        .with_context(|| format!("bad seed `{a}`"))?;
    let b: u64 = b
        .trim()
        .parse()
        .with_context(|| format!("bad seed `{b}`"))?;
    let seeds: Vec<u64> = if inclusive {
        (a..=b).collect()
    } else {
        (a..b).collect()
    };
    if seeds.is_empty() {
        bail!("seed range `{s}` is empty");
    }
    Ok(seeds)
}

fn parse_methods(s: Option<&str>) -> Result<Vec<Method>> {
    let Some(s) = s else {
        return Ok(Method::ALL.to_vec());
    };
    s.split(',')
        .map(|m| Method::parse(m.trim()).with_context(|| format!("unknown method `{m}`")))
        .collect()
}

fn load(config: &Path, episodes: Option<usize>, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(k) = episodes {
        cfg.experiment.episodes = k;
    }
    if let Some(o) = out {
        cfg.experiment.output_dir = o;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            episodes,
            out,
        } => {
            let mut cfg = load(&config, episodes, out)?;
            if let Some(s) = seed {
                cfg.experiment.seed = s;
            }
            info!(
                "{} on {} (seed {}, {} episodes)",
                cfg.experiment.method.as_str(),
                cfg.experiment.env.as_str(),
                cfg.experiment.seed,
                cfg.experiment.episodes
            );
            let record = harness::run(&cfg)?;
            let dir = &cfg.experiment.output_dir;
            emit_results(&record, dir, cfg.counterexample.dump)?;
            println!("success rate {:.3}", record.success_rate());
            println!("mined formula {}", record.mined_formula);
            println!("results in {}", dir.display());
        }
        Command::Sweep {
            config,
            seeds,
            methods,
            episodes,
            out,
        } => {
            let cfg = load(&config, episodes, out)?;
            let seeds = parse_seeds(&seeds)?;
            let methods = parse_methods(methods.as_deref())?;
            info!("sweeping {} methods x {} seeds", methods.len(), seeds.len());
            let records = harness::sweep(&cfg, &methods, &seeds)?;
            let root = &cfg.experiment.output_dir;
            for r in &records {
                let dir = root
                    .join(r.method.as_str())
                    .join(format!("seed_{}", r.seed));
                emit_results(r, &dir, cfg.counterexample.dump)?;
            }
            emit_summary(&records, root)?;
            print!("{}", harness::summary_csv(&records));
        }
        Command::Monitor { formula, trace, t } => {
            let text = fs::read_to_string(&formula)
                .with_context(|| format!("reading {}", formula.display()))?;
            let phi = parse_formula(text.trim())
                .with_context(|| format!("parsing {}", formula.display()))?;
            let tr = fs::read_to_string(&trace)
                .with_context(|| format!("reading {}", trace.display()))?;
            let file =
                parse_trace_file(&tr).with_context(|| format!("parsing {}", trace.display()))?;
            let monitor = Monitor::new(&phi, file.trajectory.schema())?;
            let per_node = monitor.per_node(&file.trajectory, t)?;
            for (v, r) in per_node.iter().enumerate() {
                // + 0.0 turns -0.0 into 0.0
                println!("node {v} {:.6}", r + 0.0);
            }
            let best = per_node.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            println!("robustness {:.6}", best + 0.0);
            println!("{}", if best > 0.0 { "satisfied" } else { "violated" });
        }
        Command::Version => println!("gtl-cirl {}", env!("CARGO_PKG_VERSION")),
    }
    Ok(())
}
