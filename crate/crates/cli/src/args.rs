use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lifp_bench::{Precision, SuiteConfig};
use lifp_core::dit::ModelConfig;
use lifp_core::latent_io::{MotionKind, SynthConfig};
use lifp_core::pruning::{L1Norm, PruneConfig, DEFAULT_CHUNK_SIZE, DEFAULT_THETA, DEFAULT_THETA2};
use lifp_core::rope_attention::DuplicationMode;
use lifp_core::verify::Faults;

#[derive(Debug, Parser)]
#[command(name = "lifp", version, about = "Latent inter-frame pruning for chunked video diffusion")]
pub struct Cli {
    /// Root seed; synthesis, weights and noise use seeds derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for attention rows.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic latent video (LIFP).
    Gen(GenArgs),
    /// Compute a prune map (LIFM) and per-frame stats.
    Mask(MaskArgs),
    /// Denoise in baseline and pruned mode and compare.
    Run(RunArgs),
    /// Run the self-check suites.
    Verify(VerifyArgs),
    /// Time baseline vs. pruned denoising across redundancy levels.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MotionArg {
    ExactDuplicates,
    PerFrameNoise,
    MovingBlock,
}

impl From<MotionArg> for MotionKind {
    fn from(m: MotionArg) -> Self {
        match m {
            MotionArg::ExactDuplicates => MotionKind::ExactDuplicates,
            MotionArg::PerFrameNoise => MotionKind::PerFrameNoise,
            MotionArg::MovingBlock => MotionKind::StaticBackgroundMovingBlock,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DuplicationArg {
    ChainResolved,
    CacheOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F64,
    F32,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F64 => Precision::F64,
            PrecisionArg::F32 => Precision::F32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    /// Flip the sign of one rotation term.
    FlipRopeSign,
    /// Skip the substitute-frame pruning test.
    DisableNoiseAware,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    pub frames: usize,
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub patch: usize,
    /// Fraction of non-anchor tokens that copy their predecessor.
    #[arg(long, default_value_t = 0.31)]
    pub redundancy: f64,
    #[arg(long, value_enum, default_value_t = MotionArg::ExactDuplicates)]
    pub motion: MotionArg,
    #[arg(long, default_value_t = 0.02)]
    pub noise_scale: f64,
    #[arg(long, default_value_t = 2)]
    pub block_cells: usize,
}

impl SynthArgs {
    pub fn config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            frames: self.frames,
            channels: self.channels,
            height: self.height,
            width: self.width,
            patch: self.patch,
            redundancy: self.redundancy,
            motion: self.motion.into(),
            noise_scale: self.noise_scale,
            block_cells: self.block_cells,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PruneArgs {
    /// Consecutive-frame L1 threshold.
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    /// Substitute-frame L1 threshold.
    #[arg(long, default_value_t = DEFAULT_THETA2)]
    pub theta2: f64,
    /// Frames per denoising chunk.
    #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
    pub chunk_size: usize,
    #[arg(long, value_enum, default_value_t = NormArg::Mean)]
    pub l1_norm: NormArg,
}

impl PruneArgs {
    pub fn config(&self) -> PruneConfig {
        PruneConfig {
            theta: self.theta,
            theta2: self.theta2,
            chunk_size: self.chunk_size,
            anchor_first_frame: true,
            l1_norm: match self.l1_norm {
                NormArg::Mean => L1Norm::Mean,
                NormArg::Sum => L1Norm::Sum,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 32)]
    pub model_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub head_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub n_heads: usize,
    #[arg(long, default_value_t = 2)]
    pub n_layers: usize,
    #[arg(long, default_value_t = 64)]
    pub ffn_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub denoise_steps: usize,
    #[arg(long, default_value_t = 4)]
    pub context_len: usize,
    #[arg(long, default_value_t = 0.8)]
    pub initial_noise: f64,
    #[arg(long, value_enum, default_value_t = DuplicationArg::ChainResolved)]
    pub duplication: DuplicationArg,
}

impl ModelArgs {
    pub fn config(&self, chunk_size: usize, weight_seed: u64, noise_seed: u64) -> ModelConfig {
        ModelConfig {
            model_dim: self.model_dim,
            head_dim: self.head_dim,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            ffn_dim: self.ffn_dim,
            chunk_size,
            denoise_steps: self.denoise_steps,
            context_len: self.context_len,
            weight_seed,
            noise_seed,
            initial_noise: self.initial_noise,
            duplication: match self.duplication {
                DuplicationArg::ChainResolved => DuplicationMode::ChainResolved,
                DuplicationArg::CacheOnly => DuplicationMode::CacheOnly,
            },
            ..ModelConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output LIFP file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Input LIFP file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output LIFM file.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-frame stats CSV.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[command(flatten)]
    pub prune: PruneArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Input LIFP file.
    #[arg(long)]
    pub input: PathBuf,
    /// Prune map (LIFM); computed from the prune flags when absent.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Directory for baseline.lifp and pruned.lifp.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
    pub precision: PrecisionArg,
    #[command(flatten)]
    pub prune: PruneArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Inject a defect; the matching suite should fail.
    #[arg(long, value_enum)]
    pub fault: Vec<FaultArg>,
}

impl VerifyArgs {
    pub fn faults(&self) -> Faults {
        Faults {
            flip_rope_sign: self.fault.contains(&FaultArg::FlipRopeSign),
            disable_noise_aware: self.fault.contains(&FaultArg::DisableNoiseAware),
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Duplicate ratios to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.31, 0.5, 0.75])]
    pub redundancies: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 2)]
    pub warmups: usize,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
    pub precision: PrecisionArg,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 6)]
    pub frames: usize,
    #[command(flatten)]
    pub prune: PruneArgs,
    #[arg(long, default_value_t = 64)]
    pub model_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub head_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub n_heads: usize,
    #[arg(long, default_value_t = 2)]
    pub n_layers: usize,
    #[arg(long, default_value_t = 128)]
    pub ffn_dim: usize,
}

impl BenchArgs {
    pub fn suite(&self, synth_seed: u64, weight_seed: u64, noise_seed: u64, threads: usize) -> SuiteConfig {
        let base = SuiteConfig::default();
        let prune = self.prune.config();
        SuiteConfig {
            synth: SynthConfig {
                frames: self.frames,
                height: self.height,
                width: self.width,
                seed: synth_seed,
                ..base.synth
            },
            redundancies: self.redundancies.clone(),
            model: ModelConfig {
                model_dim: self.model_dim,
                head_dim: self.head_dim,
                n_heads: self.n_heads,
                n_layers: self.n_layers,
                ffn_dim: self.ffn_dim,
                chunk_size: prune.chunk_size,
                weight_seed,
                noise_seed,
                ..base.model
            },
            prune,
            repeats: self.repeats,
            warmups: self.warmups,
            threads,
            precision: self.precision.into(),
            ..base
        }
    }
}
