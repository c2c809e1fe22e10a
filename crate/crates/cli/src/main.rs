//! Scenario runner: load a configuration (or a bundled scenario by name),
//! simulate, filter, and write the run artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use skidmode::imm::ProbabilityUpdate;
use skidmode::scenario::{self, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "skidmode",
    version,
    about = "Traction and slip mode identification runs for skid-steered robots"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and write trace.csv, weights.csv, and summary.json.
    Run {
        /// Scenario config files or bundled scenario names.
        #[arg(required = true)]
        configs: Vec<String>,
        /// Output root; defaults to $IMM_OUT_DIR, then ./out. A single
        /// scenario writes there directly, several into per-name subdirs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override every scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the mode-probability weighting variant.
        #[arg(long, value_enum)]
        probability_update: Option<UpdateArg>,
        /// Scenarios to run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check a config against every invariant without running it.
    Validate {
        /// Scenario config file or bundled scenario name.
        config: String,
    },
    /// List the bundled scenario names.
    ListScenarios,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpdateArg {
    /// Weight likelihoods by the previous posterior probabilities.
    Posterior,
    /// Weight likelihoods by the transition-predicted probabilities.
    Predicted,
}

impl From<UpdateArg> for ProbabilityUpdate {
    fn from(arg: UpdateArg) -> Self {
        match arg {
            UpdateArg::Posterior => ProbabilityUpdate::Posterior,
            UpdateArg::Predicted => ProbabilityUpdate::Predicted,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            configs,
            out,
            seed,
            probability_update,
            jobs,
        } => cmd_run(&configs, out, seed, probability_update.map(Into::into), jobs),
        Command::Validate { config } => cmd_validate(&config),
        Command::ListScenarios => {
            for name in scenario::BUNDLED_NAMES {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(spec: &str) -> anyhow::Result<ScenarioConfig> {
    scenario::load_or_bundled(spec).with_context(|| format!("loading scenario '{spec}'"))
}

fn cmd_run(
    specs: &[String],
    out: Option<PathBuf>,
    seed: Option<u64>,
    update: Option<ProbabilityUpdate>,
    jobs: usize,
) -> anyhow::Result<ExitCode> {
    let out_root = out
        .or_else(|| std::env::var_os("IMM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut work = Vec::new();
    for spec in specs {
        let mut cfg = load(spec)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(u) = update {
            cfg.probability_update = u;
        }
        let dir = if specs.len() == 1 {
            out_root.clone()
        } else {
            out_root.join(&cfg.name)
        };
        work.push((cfg, dir));
    }

    for chunk in work.chunks(jobs.max(1)) {
        let reports = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(cfg, dir)| s.spawn(move || run_one(cfg, dir)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("runner thread panicked"))
                .collect::<Vec<_>>()
        });
        for report in reports {
            println!("{}", report?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_one(cfg: &ScenarioConfig, dir: &PathBuf) -> anyhow::Result<String> {
    let output = scenario::run_scenario(cfg).with_context(|| format!("running '{}'", cfg.name))?;
    scenario::write_outputs(cfg, &output, dir)
        .with_context(|| format!("writing outputs for '{}' to {}", cfg.name, dir.display()))?;
    let m = &output.metrics;
    let latencies: Vec<String> = m
        .latencies
        .iter()
        .map(|l| match l.latency_s {
            Some(v) => format!("{v:.2}s"),
            None => "never".to_string(),
        })
        .collect();
    Ok(format!(
        "{}: accuracy {:.3}, mean max mu {:.3}, latency [{}] -> {}",
        cfg.name,
        m.mode_accuracy,
        m.mean_max_mu,
        latencies.join(", "),
        dir.display()
    ))
}

fn cmd_validate(spec: &str) -> anyhow::Result<ExitCode> {
    let cfg = load(spec)?;
    let issues = cfg.validate();
    if issues.is_empty() {
        println!("ok: {}", cfg.name);
        Ok(ExitCode::SUCCESS)
    } else {
        for issue in &issues {
            println!("{issue}");
        }
        Ok(ExitCode::FAILURE)
    }
}
