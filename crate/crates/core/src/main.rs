use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fhenav::ckks::CkksParams;
use fhenav::harness::{self, BackendKind, NoisePreset, RunConfig, Tolerances};
use fhenav::layers::ArchConfig;
use fhenav::slot_engine::RotSumMode;
use fhenav::{Error, Result};

#[derive(Parser)]
#[command(name = "fhenav", about = "Encrypted inference parity harness for a convolutional actor network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write seeded weights and input files.
    Genfix {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `default`, `reduced`, or a path to an architecture JSON file.
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate blocks encrypted and report parity against the plaintext references.
    Run(RunArgs),
    /// Count operations per block under both rotate-sum modes.
    Bench(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CkksPreset {
    Default,
    N13,
    Harness,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Simulator)]
    backend: BackendKind,
    #[arg(long, value_enum, default_value_t = NoisePreset::Off)]
    noise: NoisePreset,
    /// Weights JSON; generated from the seed when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Directory of input text files; generated from the seed when omitted.
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// Comma-separated block names, or `all`.
    #[arg(long, default_value = "all")]
    blocks: String,
    #[arg(long, value_enum, default_value_t = RotSumMode::Naive)]
    rotsum: RotSumMode,
    /// Where to write the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `default`, `reduced`, or a path to an architecture JSON file; used when generating weights.
    #[arg(long, default_value = "default")]
    config: String,
    /// Simulator level budget.
    #[arg(long)]
    levels: Option<usize>,
    /// Number of generated inputs.
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// Encrypt every block's input afresh instead of chaining blocks.
    #[arg(long)]
    isolate: bool,
    /// Evaluate with identity activations.
    #[arg(long)]
    bypass_activations: bool,
    #[arg(long, value_enum, default_value_t = CkksPreset::Harness)]
    ckks_preset: CkksPreset,
}

fn arch_from(config: &str) -> Result<ArchConfig> {
    match config {
        "default" => Ok(ArchConfig::default()),
        "reduced" => Ok(ArchConfig::reduced()),
        path => {
            let arch: ArchConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            arch.validate()?;
            Ok(arch)
        }
    }
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let blocks = if self.blocks == "all" {
            Vec::new()
        } else {
            self.blocks.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
        };
        Ok(RunConfig {
            backend: self.backend,
            noise: self.noise,
            weights: self.weights.clone(),
            inputs: self.inputs.clone(),
            arch: arch_from(&self.config)?,
            seed: self.seed,
            n_inputs: self.count,
            blocks,
            rotsum: self.rotsum,
            levels: self.levels,
            isolate: self.isolate,
            bypass_activations: self.bypass_activations,
            ckks: match self.ckks_preset {
                CkksPreset::Default => CkksParams::default(),
                CkksPreset::N13 => CkksParams::n13(),
                CkksPreset::Harness => CkksParams::harness(),
            },
            tolerances: Tolerances::for_backend(self.backend),
        })
    }
}

fn write_out(path: &Option<PathBuf>, json: String) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, json)?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Genfix { seed, config, count, out } => {
            for p in harness::genfix(seed, &arch_from(&config)?, count, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Run(args) => {
            let report = harness::run(&args.config()?)?;
            print!("{}", report.render_table());
            write_out(&args.out, report.to_json()?)?;
            Ok(report.passed)
        }
        Command::Bench(args) => {
            let report = harness::bench(&args.config()?)?;
            print!("{}", report.render_table());
            write_out(&args.out, serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
