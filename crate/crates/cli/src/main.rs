use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use petaug_core::classifier::CellId;
use petaug_core::{Error, ExperimentConfig, Pipeline, StageOutcome};

/// Landmark-guided GAN data augmentation, one stage at a time.
///
/// Exit codes: 0 ok, 1 usage or configuration error, 2 missing or stale
/// upstream stage, 3 stage failure.
#[derive(Parser, Debug)]
#[command(name = "petaug", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "toy")]
    config: Option<PathBuf>,
    /// Desk-scale preset: 2 classes x 128 procedural 32x32 faces.
    #[arg(long, global = true)]
    toy: bool,
    /// Override the global seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Override the output root.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Restrict per-cell stages to one cell, e.g. `cropped-augmented:0.5`.
    #[arg(long, global = true, value_name = "VARIANT:FRACTION")]
    cell: Option<CellId>,
    /// Continue GAN training from the cell's latest checkpoint.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Build the corpus and one real-image manifest per matrix cell.
    Prepare,
    /// Train the landmark regressor.
    TrainLandmarks,
    /// Crop every prepared image around its predicted landmarks.
    Crop,
    /// Train the conditional GAN of each augmented cell.
    TrainGan,
    /// Sample generators and merge samples into training sets.
    Generate,
    /// Train one classifier per cell.
    TrainClassifier,
    /// Score classifiers on the real test split.
    Evaluate,
    /// FID curves per fraction and the summary table.
    Plot,
    /// Every stage in order.
    RunAll,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match (&cli.config, cli.toy) {
        (Some(path), _) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
        (None, true) => ExperimentConfig::toy(),
        (None, false) => return Err("either --config PATH or --toy is required".into()),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_root = out.clone();
    }
    Ok(cfg)
}

fn describe(o: &StageOutcome) -> String {
    match o {
        StageOutcome::Ran => "ran".into(),
        StageOutcome::UpToDate => "up to date".into(),
        StageOutcome::Skipped(why) => format!("skipped ({why})"),
    }
}

fn run(cli: &Cli, p: &Pipeline) -> petaug_core::Result<Vec<(String, StageOutcome)>> {
    let cells = match cli.cell {
        Some(c) => vec![c],
        None => p.cells(),
    };
    let per_cell = |name: &str, f: &dyn Fn(&CellId) -> petaug_core::Result<StageOutcome>| {
        cells
            .iter()
            .map(|c| Ok((format!("{name}[{c}]"), f(c)?)))
            .collect::<petaug_core::Result<Vec<_>>>()
    };
    Ok(match cli.command {
        Command::Prepare => vec![("prepare".into(), p.prepare()?)],
        Command::TrainLandmarks => vec![("train-landmarks".into(), p.train_landmarks()?)],
        Command::Crop => vec![("crop".into(), p.crop()?)],
        Command::TrainGan => per_cell("train-gan", &|c| p.train_gan(c, cli.resume))?,
        Command::Generate => per_cell("generate", &|c| p.generate(c))?,
        Command::TrainClassifier => per_cell("train-classifier", &|c| p.train_classifier(c))?,
        Command::Evaluate => per_cell("evaluate", &|c| p.evaluate(c))?,
        Command::Plot => vec![("plot".into(), p.plot()?)],
        Command::RunAll => p.run_all(cli.resume)?,
        Command::ShowConfig => unreachable!("handled before the pipeline is built"),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    if cli.command == Command::ShowConfig {
        return match cfg.to_toml_string() {
            Ok(s) => {
                print!("{s}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        };
    }
    let pipeline = match Pipeline::new(cfg) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, &pipeline) {
        Ok(outcomes) => {
            for (stage, o) in &outcomes {
                println!("{stage}: {}", describe(o));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::MissingStage { .. } | Error::StaleInput { .. } => 2,
                Error::InvalidConfig(_) => 1,
                _ => 3,
            })
        }
    }
}
