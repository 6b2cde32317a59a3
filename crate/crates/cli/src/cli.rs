use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::MethodName;

#[derive(Debug, Parser)]
#[command(name = "lrcs", version, about = "Hierarchical low-rank reconstruction of undersampled dynamic MRI")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskScheme {
    Radial,
    Cartesian,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Table1Gaussian,
    Table1Fourier,
    PhantomRadial,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: truth, k-space, masks and coil maps.
    GenData {
        /// JSON data spec.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate sampling masks only.
    GenMask {
        #[arg(long, value_enum)]
        scheme: MaskScheme,
        #[arg(long)]
        n1: usize,
        #[arg(long)]
        n2: usize,
        #[arg(long)]
        q: usize,
        /// Spokes per frame (radial).
        #[arg(long, default_value_t = 8)]
        lines: usize,
        /// Acceleration factor (cartesian).
        #[arg(long, default_value_t = 4.0)]
        reduction: f64,
        /// Sampled cells per frame (uniform); defaults to a tenth of the grid.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output container file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a dataset directory.
    Recon {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Option<MethodName>,
        #[arg(long)]
        alpha: Option<usize>,
        #[arg(long)]
        alpha1: Option<usize>,
        /// JSON run config; command-line flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Zero wall-clock fields so repeated runs give identical reports.
        #[arg(long)]
        reproducible: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark suite and print a results table.
    Bench {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the N-S-MSE between two image-sequence containers.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        recon: PathBuf,
    },
}
