//! Command-line experiment runner: data generation, training, evaluation,
//! filter sweeps, analysis and reporting over one output directory.

pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{ExperimentConfig, ModelVariant, RunGrid, Scale};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "emgpose", version, about = "Decode hand pose from surface EMG")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON). Without it the scale preset is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training seeds; repeat for several. Defaults to the config's list.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Preset for anything the config leaves out.
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
}

impl Common {
    pub fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, self.scale)?,
            None => ExperimentConfig::preset(self.scale.unwrap_or(Scale::Desk)),
        };
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus, split it and write the manifest.
    GenData(Common),
    /// Train every model variant for each seed.
    Train(Common),
    /// Metrics per user, condition and task, with static baselines.
    Eval(Common),
    /// Post-hoc filter sweep over beta.
    FilterSweep {
        #[command(flatten)]
        common: Common,
        /// Filter strengths; repeat for several. Defaults to the config's list.
        #[arg(long = "beta")]
        betas: Vec<f64>,
        /// Filter time step in seconds. Defaults to one EMG sample.
        #[arg(long)]
        te: Option<f64>,
    },
    /// Error-over-time curves and residual spectra.
    Analyze(Common),
    /// Summary tables from the outputs of the other stages.
    Report(Common),
    /// Print the fully resolved experiment config as JSON.
    ShowConfig(Common),
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(c) => {
            pipeline::gen_data(&c.load()?)?;
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            for r in pipeline::train(&cfg, &[])? {
                let flag = if r.collapsed { " (collapsed)" } else { "" };
                println!("seed {}: best epoch {}, final speed ratio {:.3}{flag}", r.seed, r.best_epoch, r.final_speed_ratio());
            }
        }
        Command::Eval(c) => {
            let cfg = c.load()?;
            let (test, val) = pipeline::eval(&cfg, &[])?;
            println!("{} test rows, {} validation rows -> {}", test.len(), val.len(), cfg.out_dir.join("eval").display());
        }
        Command::FilterSweep { common, betas, te } => {
            let cfg = common.load()?;
            let t = pipeline::filter_sweep(&cfg, &[], &betas, te)?;
            println!("{} frontier rows -> {}", t.len(), pipeline::Paths::new(&cfg.out_dir).frontier_csv().display());
        }
        Command::Analyze(c) => {
            let cfg = c.load()?;
            let files = pipeline::analyze(&cfg, &[])?;
            println!("{} analysis files -> {}", files.len(), cfg.out_dir.join("analyze").display());
        }
        Command::Report(c) => {
            let cfg = c.load()?;
            let dir = pipeline::report(&cfg, &[])?;
            println!("report -> {}", dir.display());
        }
        Command::ShowConfig(c) => {
            let cfg = c.load()?;
            println!("{}", serde_json::to_string_pretty(&cfg).map_err(|e| CliError::Core(e.into()))?);
        }
    }
    Ok(())
}
