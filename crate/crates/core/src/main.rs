use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cleaneval::cli::{
    self, config::ProviderKind, config::ScorerKind, AblationAxis, CliError, Overrides, RunConfig,
};
use cleaneval::rewrite::CompositionOrder;
use cleaneval::score::SelectionPolicy;

#[derive(Parser)]
#[command(
    name = "cleaneval",
    version,
    about = "Benchmark decontamination and contamination-aware evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rewrite every sample and write the calibrated dataset.
    Calibrate(Common),
    /// Evaluate the contamination, clean and calibration settings and report the performance gap.
    Evaluate(Common),
    /// Compare pipeline variants along one axis.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: AblationAxis,
    },
    /// Export (instruction, input, output) records for fine-tuning.
    ExportFt(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// lowest | middle | highest
    #[arg(long)]
    policy: Option<SelectionPolicy>,
    /// para-bt | bt-para
    #[arg(long)]
    order: Option<CompositionOrder>,
    #[arg(long)]
    no_detector: bool,
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    #[arg(long, value_enum)]
    scorer: Option<ScorerKind>,
    /// Keep the original text of samples that fail instead of aborting.
    #[arg(long)]
    skip_errors: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        Overrides {
            seed: self.seed,
            policy: self.policy,
            order: self.order,
            no_detector: self.no_detector,
            provider: self.provider,
            scorer: self.scorer,
            skip_errors: self.skip_errors,
            output_dir: self.output_dir.clone(),
        }
        .apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calibrate(c) => {
            let out = cli::cmd_calibrate(&c.load()?)?;
            println!(
                "{} samples -> {}",
                out.run.dataset.len(),
                out.calibrated.display()
            );
            println!("{}", out.similarity.display());
        }
        Command::Evaluate(c) => {
            let out = cli::cmd_evaluate(&c.load()?)?;
            for s in &out.summaries {
                println!(
                    "{:<14} {:>7.2}  (n={}, errors={})",
                    s.setting.label(),
                    s.metric.headline(),
                    s.n,
                    s.errors
                );
            }
            println!("PG {:.2}", out.pg.pg);
            println!("{}", out.report.markdown.display());
        }
        Command::Ablate { common, axis } => {
            let report = cli::cmd_ablate(&common.load()?, axis)?;
            print!("{}", report.to_markdown());
        }
        Command::ExportFt(c) => {
            for (path, n) in cli::cmd_export_ft(&c.load()?)? {
                println!("{n} records -> {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
