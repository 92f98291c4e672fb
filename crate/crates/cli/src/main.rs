use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pseudopanel::pipeline::{self, Axis, EstimateRequest, ModelChoice, PipelineError, RunConfig, Stage};

#[derive(Parser, Debug)]
#[command(name = "pseudopanel", version, about = "Pseudo-panel health and education study")]
struct Cli {
    /// Study configuration (TOML). Without it, the built-in synthetic study runs.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse, deflate and trim the micro-data; writes rejects and cleaned records.
    Ingest,
    /// Build the cohort × year panel with descriptive statistics and education profiles.
    Panel,
    /// Estimate one model, optionally per subgroup.
    Estimate {
        #[arg(long, value_enum, default_value_t = ModelArg::Fe)]
        model: ModelArg,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        steps: u8,
        #[arg(long, default_value = "second")]
        iv_group: String,
        #[arg(long, value_enum)]
        subgroup: Option<AxisArg>,
    },
    /// Run the full study: static, dynamic and heterogeneity tables.
    Study,
    /// Monte Carlo replications on the configured synthetic process.
    Simulate {
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, value_enum, default_value_t = ModelArg::Fe)]
        model: ModelArg,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        steps: u8,
        #[arg(long, default_value = "second")]
        iv_group: String,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModelArg {
    Ols,
    Fe,
    Re,
    DiffGmm,
    SysGmm,
}

impl From<ModelArg> for ModelChoice {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Ols => ModelChoice::Ols,
            ModelArg::Fe => ModelChoice::Fe,
            ModelArg::Re => ModelChoice::Re,
            ModelArg::DiffGmm => ModelChoice::DiffGmm,
            ModelArg::SysGmm => ModelChoice::SysGmm,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AxisArg {
    Gender,
    Generation,
    Education,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Gender => Axis::Gender,
            AxisArg::Generation => Axis::Generation,
            AxisArg::Education => Axis::Education,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::synthetic_default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Ingest | Command::Panel | Command::Study => {
            match cli.command {
                Command::Ingest => cfg.stages = vec![Stage::Ingest],
                Command::Panel => cfg.stages = vec![Stage::Panel],
                _ => {}
            }
            let report = pipeline::run(&cfg)?;
            print!("{}", pipeline::render_report(&report));
            println!("artifacts written to {}", cfg.output_dir.display());
        }
        Command::Estimate {
            model,
            steps,
            iv_group,
            subgroup,
        } => {
            let req = EstimateRequest {
                model: (*model).into(),
                steps: *steps,
                iv_group: iv_group.clone(),
                subgroup: subgroup.map(Axis::from),
            };
            let outcomes = pipeline::estimate_one(&cfg, &req)?;
            print!("{}", pipeline::render_outcomes("Estimates", &outcomes));
        }
        Command::Simulate {
            reps,
            model,
            steps,
            iv_group,
        } => {
            let req = EstimateRequest {
                model: (*model).into(),
                steps: *steps,
                iv_group: iv_group.clone(),
                subgroup: None,
            };
            let reps = reps.unwrap_or(cfg.simulate.reps);
            let summary = pipeline::simulate(&cfg, reps, &req)?;
            print!("{}", pipeline::render_simulation(&summary));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(partial) = &e.partial {
                eprintln!(
                    "incomplete report written (stages: {})",
                    partial
                        .stages
                        .iter()
                        .map(|(s, st)| format!("{s} {st}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                );
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
