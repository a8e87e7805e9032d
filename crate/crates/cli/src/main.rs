use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use homoflow::commands::{self, VerifyKind};
use homoflow::config::{ExperimentConfig, GenParams, Labeler};

#[derive(Parser)]
#[command(
    name = "homoflow",
    version,
    about = "Gradient-flow laboratory for homogeneous classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelerArg {
    Mlp,
    Linear,
    Conic,
}

impl From<LabelerArg> for Labeler {
    fn from(l: LabelerArg) -> Self {
        match l {
            LabelerArg::Mlp => Labeler::Mlp,
            LabelerArg::Linear => Labeler::Linear,
            LabelerArg::Conic => Labeler::Conic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyArg {
    DeepLinear,
    TwoHomo,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planar dataset.
    GenData {
        #[arg(long)]
        seed: u64,
        /// Number of raw points sampled before the margin filter.
        #[arg(long)]
        n: usize,
        /// Delete points with |score| below this fraction of the maximum.
        #[arg(long)]
        margin_floor: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "mlp")]
        labeler: LabelerArg,
        /// Skip appending the constant-1 coordinate.
        #[arg(long)]
        no_bias: bool,
    },
    /// Run the flow and write trajectory.csv and margins.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the flow and write the normalized prediction surface grid.csv.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = -1.0)]
        min: f64,
        #[arg(long, default_value_t = 1.0)]
        max: f64,
    },
    /// Run a verification suite and write verify.json; exits nonzero if any
    /// check fails.
    Verify {
        #[arg(value_enum)]
        which: VerifyArg,
        #[arg(long)]
        config: PathBuf,
        /// Verify untrained random weights instead of a run (expected to
        /// fail).
        #[arg(long)]
        negative_control: bool,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenData {
            seed,
            n,
            margin_floor,
            out,
            labeler,
            no_bias,
        } => {
            let params = GenParams {
                seed,
                n_raw: n,
                margin_floor,
                labeler: labeler.into(),
                append_bias: !no_bias,
            };
            commands::cmd_gen_data(&params, &out).map(|()| true)
        }
        Command::Run { config } => {
            ExperimentConfig::load(&config).and_then(|c| commands::cmd_run(&c).map(|()| true))
        }
        Command::Grid {
            config,
            resolution,
            min,
            max,
        } => ExperimentConfig::load(&config)
            .and_then(|c| commands::cmd_grid(&c, resolution, (min, max)).map(|()| true)),
        Command::Verify {
            which,
            config,
            negative_control,
        } => {
            let kind = match which {
                VerifyArg::DeepLinear => VerifyKind::DeepLinear,
                VerifyArg::TwoHomo => VerifyKind::TwoHomo,
            };
            ExperimentConfig::load(&config)
                .and_then(|c| commands::cmd_verify(&c, kind, negative_control))
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
