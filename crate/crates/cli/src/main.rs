use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use jpac::admission::{run_lqmd, run_nlpd, AdmissionConfig};
use jpac::harness::{run_experiment, write_outputs, Experiment, ExperimentConfig};
use jpac::kernel::SolverConfig;
use jpac::oracle::{default_q_grid, enumerate_l0, estimate_qbar, optimum_allocation};
use jpac::scenario::{generate, ScenarioConfig};
use jpac::{normalize, select_alpha, AlphaRule, NetworkInstance};

#[derive(Parser)]
#[command(name = "jpac", version, about = "Joint power and admission control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw random instances and write them as JSON.
    Generate {
        #[arg(short = 'k', long = "links")]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of instances; seeds run from `seed` upward.
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Scenario JSON; `K` and `seed` are taken from the flags.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        distance_scale: Option<f64>,
        /// Output file (one instance) or directory (several). Stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one deflation algorithm on one instance.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum)]
        algo: Algo,
        #[arg(long, default_value_t = 0.5)]
        q: f64,
        #[arg(short = 'n', long = "n", default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 1e-8)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exhaustive ℓ0 optimum of one instance.
    Enumerate {
        #[arg(long)]
        instance: PathBuf,
        /// Weight of the power term; chosen by the default α rule if absent.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Largest grid exponent whose ℓq solution recovers the ℓ0 optimum.
    RecoverQbar {
        #[arg(long)]
        instance: PathBuf,
        #[arg(short = 'n', long = "n", default_value_t = 100)]
        n: usize,
        /// Exponent grid; defaults to 0.01, 0.02, ..., 1.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1e-8)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a Monte-Carlo experiment and write rows and summary CSVs.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Experiment name; required without --config.
        #[arg(long)]
        experiment: Option<Experiment>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long = "k-list", value_delimiter = ',')]
        k_list: Option<Vec<usize>>,
        #[arg(long = "q-list", value_delimiter = ',')]
        q_list: Option<Vec<f64>>,
        #[arg(short = 'n', long = "n")]
        n: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Leave runtime_ms empty so reruns are byte-identical.
        #[arg(long)]
        no_runtime: bool,
        #[arg(long)]
        traces: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Nlpd,
    Lqmd,
}

/// Failure mapped to a process exit code.
enum Failure {
    Config(anyhow::Error),
    FailedRows(usize),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Config(e)
    }
}

impl From<jpac::JpacError> for Failure {
    fn from(e: jpac::JpacError) -> Self {
        Self::Config(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::FailedRows(n)) => {
            eprintln!("{n} row(s) failed; see the error column");
            ExitCode::from(2)
        }
    }
}

fn load_instance(path: &Path) -> anyhow::Result<NetworkInstance> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    NetworkInstance::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    print_text(serde_json::to_string_pretty(value)?)
}

fn print_text(mut text: String) -> anyhow::Result<()> {
    text.push('\n');
    match std::io::stdout().write_all(text.as_bytes()) {
        // A closed pipe (`| head`) is not an error.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate {
            k,
            seed,
            count,
            scenario,
            distance_scale,
            out,
        } => {
            let mut base = match scenario {
                Some(path) => serde_json::from_str::<ScenarioConfig>(&std::fs::read_to_string(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))?,
                None => ScenarioConfig::default(),
            };
            if let Some(s) = distance_scale {
                base.distance_scale = s;
            }
            if count == 0 {
                return Err(anyhow::anyhow!("--count must be at least 1").into());
            }
            if count > 1 && out.is_none() {
                return Err(anyhow::anyhow!("--out <dir> is required with --count > 1").into());
            }
            for s in seed..seed + count {
                let instance = generate(&ScenarioConfig { k, seed: s, ..base.clone() })?;
                let text = instance.to_json()?;
                match &out {
                    None => print_text(text)?,
                    Some(path) if count == 1 => std::fs::write(path, text + "\n")?,
                    Some(dir) => {
                        std::fs::create_dir_all(dir)?;
                        std::fs::write(dir.join(format!("instance-{s}.json")), text + "\n")?;
                    }
                }
            }
        }
        Command::Solve {
            instance,
            algo,
            q,
            n,
            epsilon,
            seed,
        } => {
            let problem = normalize(&load_instance(&instance)?)?;
            let config = AdmissionConfig {
                solver: SolverConfig {
                    epsilon,
                    ..SolverConfig::default()
                },
                alpha_rule: AlphaRule::default(),
                seed,
            };
            let result = match algo {
                Algo::Nlpd => {
                    let alpha = select_alpha(&problem, &config.alpha_rule)?;
                    run_nlpd(&problem.with_alpha(alpha)?, &config)?
                }
                Algo::Lqmd => run_lqmd(&problem, q, n, &config)?,
            };
            print_json(&result.to_document())?;
        }
        Command::Enumerate { instance, alpha } => {
            let problem = normalize(&load_instance(&instance)?)?;
            let alpha = match alpha {
                Some(a) => a,
                None => select_alpha(&problem, &AlphaRule::default())?,
            };
            let problem = problem.with_alpha(alpha)?;
            let result = enumerate_l0(&problem)?;
            let x = optimum_allocation(&problem, &result)?;
            let powers_mw: Vec<f64> = x.iter().zip(problem.budgets().iter()).map(|(x, p)| x * p * 1e3).collect();
            print_json(&serde_json::json!({
                "alpha": alpha,
                "result": result,
                "powers_mw": powers_mw,
            }))?;
        }
        Command::RecoverQbar {
            instance,
            n,
            grid,
            epsilon,
            seed,
        } => {
            let problem = normalize(&load_instance(&instance)?)?;
            let solver = SolverConfig {
                epsilon,
                ..SolverConfig::default()
            };
            let grid = grid.unwrap_or_else(default_q_grid);
            let estimate = estimate_qbar(&problem, n, &grid, &solver, &AlphaRule::default(), seed)?;
            print_json(&estimate)?;
        }
        Command::Experiment {
            config,
            experiment,
            seed,
            runs,
            k_list,
            q_list,
            n,
            epsilon,
            out,
            no_runtime,
            traces,
        } => {
            let mut cfg = match (&config, experiment) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<ExperimentConfig>(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                (None, Some(e)) => ExperimentConfig::new(e),
                (None, None) => bail_config("either --config or --experiment is required")?,
            };
            if let (Some(_), Some(e)) = (&config, experiment) {
                cfg.experiment = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = runs {
                cfg.runs = r;
            }
            if k_list.is_some() {
                cfg.k_list = k_list;
            }
            if q_list.is_some() {
                cfg.q_list = q_list;
            }
            if n.is_some() {
                cfg.n = n;
            }
            if let Some(e) = epsilon {
                cfg.epsilon = e;
            }
            if let Some(dir) = out {
                cfg.output_path = dir;
            }
            if no_runtime {
                cfg.record_runtime = false;
            }
            if traces {
                cfg.traces = true;
            }
            cfg.validate()?;
            let output = run_experiment(&cfg)?;
            let paths = write_outputs(&cfg.output_path, &output)?;
            eprintln!(
                "{}: {} rows -> {}, summary -> {}",
                cfg.experiment,
                output.rows.len(),
                paths.rows.display(),
                paths.summary.display()
            );
            let failed = output.failed_rows();
            if failed > 0 {
                return Err(Failure::FailedRows(failed));
            }
        }
    }
    Ok(())
}

fn bail_config<T>(msg: &str) -> anyhow::Result<T> {
    bail!("{msg}")
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Config(e.into())
    }
}
