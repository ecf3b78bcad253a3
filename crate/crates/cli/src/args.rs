use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use qmap_core::maps::FrMethod;
use qmap_core::models::FusionMode;

use crate::settings::Overrides;

#[derive(Debug, Parser)]
#[command(name = "qmap", version, about = "Blind image quality from predicted similarity maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat key=value config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Run directory shared by all stages
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Map method; repeat to fuse several
    #[arg(long = "method", global = true)]
    pub methods: Vec<FrMethod>,
    /// How several maps reach the pooler: single or multi
    #[arg(long, global = true)]
    pub fusion: Option<FusionMode>,
    /// Override one config key
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Print the resolved config and plan without running
    #[arg(long, global = true)]
    pub dry_run: bool,
}

impl GlobalArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            methods: self.methods.clone(),
            fusion: self.fusion,
            sets: self.sets.clone(),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("qmap-run"))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full-reference similarity map of one image pair
    Map { dist: PathBuf, reference: PathBuf },
    /// Generate the synthetic distorted dataset
    Synth,
    /// Materialize map labels for every manifest entry
    Labels,
    /// Train one map generator per method
    TrainGen,
    /// Train the pooling network
    TrainPool,
    /// Score one image and write its predicted maps
    Predict { image: PathBuf },
    /// Held-out correlations of the trained pipeline
    Eval,
    /// Patch-averaging study over block sizes
    Study,
}

impl Command {
    pub fn stage(&self) -> &'static str {
        match self {
            Command::Map { .. } => "map",
            Command::Synth => "synth",
            Command::Labels => "labels",
            Command::TrainGen => "train-gen",
            Command::TrainPool => "train-pool",
            Command::Predict { .. } => "predict",
            Command::Eval => "eval",
            Command::Study => "study",
        }
    }
}
