//! Wall-clock comparison of baseline and pruned denoising.

use std::time::{Duration, Instant};

use lifp_core::dit::{denoise_chunked, DenoiseOutput, DitModel, ModelConfig, NoiseSchedule};
use lifp_core::latent_io::{generate_synthetic, LatentVideo, MotionKind, SynthConfig};
use lifp_core::pruning::{compute_prune_map, PruneConfig};
use lifp_core::{PruneMap, Real};
use serde::Serialize;

use crate::flops::predict_speedup;
use crate::report::{BenchReport, BenchRow};
use crate::BenchError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteConfig {
    /// Video shape and motion; `redundancy` is replaced per row.
    pub synth: SynthConfig,
    /// Duplicate ratios, one report row each.
    pub redundancies: Vec<f64>,
    pub model: ModelConfig,
    pub prune: PruneConfig,
    pub repeats: usize,
    pub warmups: usize,
    pub threads: usize,
    pub precision: Precision,
    /// Runs shorter than this many timer ticks are flagged invalid.
    pub min_ticks: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig {
                frames: 6,
                channels: 4,
                height: 16,
                width: 16,
                patch: 2,
                motion: MotionKind::ExactDuplicates,
                ..SynthConfig::default()
            },
            redundancies: vec![0.0, 0.25, 0.31, 0.5, 0.75],
            model: ModelConfig {
                model_dim: 64,
                head_dim: 16,
                n_heads: 4,
                ffn_dim: 128,
                ..ModelConfig::default()
            },
            prune: PruneConfig::default(),
            repeats: 5,
            warmups: 2,
            threads: 1,
            precision: Precision::F64,
            min_ticks: 1000.0,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.repeats == 0 || self.threads == 0 {
            return Err(BenchError::Config("repeats and threads must be positive".into()));
        }
        if self.redundancies.is_empty() {
            return Err(BenchError::Config("at least one redundancy level is required".into()));
        }
        if self.model.chunk_size != self.prune.chunk_size {
            return Err(BenchError::Config(format!(
                "model chunk {} differs from prune chunk {}",
                self.model.chunk_size, self.prune.chunk_size
            )));
        }
        self.model.validate()?;
        self.prune.validate()?;
        Ok(())
    }
}

/// Smallest nonzero step of the monotonic clock, sampled.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::from_secs(1);
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

struct Timed<T> {
    median: f64,
    first: DenoiseOutput<T>,
    last: DenoiseOutput<T>,
}

/// Times both modes, alternating baseline and pruned runs so slow drift in
/// machine speed hits both evenly.
fn time_both<T: Real>(
    model: &DitModel<T>,
    video: &LatentVideo,
    sched: &NoiseSchedule,
    map: &PruneMap,
    cfg: &SuiteConfig,
) -> Result<[Timed<T>; 2], BenchError> {
    let modes = [None, Some(map)];
    let mut first = Vec::with_capacity(2);
    for m in modes {
        first.push(denoise_chunked(model, video, sched, m)?);
    }
    for _ in 1..cfg.warmups {
        for m in modes {
            denoise_chunked(model, video, sched, m)?;
        }
    }
    let mut times = [Vec::new(), Vec::new()];
    let mut last = [None, None];
    for _ in 0..cfg.repeats {
        for (i, m) in modes.into_iter().enumerate() {
            let start = Instant::now();
            let out = denoise_chunked(model, video, sched, m)?;
            times[i].push(start.elapsed().as_secs_f64());
            last[i] = Some(out);
        }
    }
    let [t0, t1] = times;
    let [l0, l1] = last;
    let mut first = first.into_iter();
    Ok([
        Timed { median: median(t0), first: first.next().unwrap(), last: l0.expect("repeats > 0") },
        Timed { median: median(t1), first: first.next().unwrap(), last: l1.expect("repeats > 0") },
    ])
}

fn run_row<T: Real>(cfg: &SuiteConfig, redundancy: f64, tick: f64, threads: usize) -> Result<BenchRow, BenchError> {
    let synth = SynthConfig { redundancy, ..cfg.synth.clone() };
    let video = generate_synthetic(&synth)?;
    let map = compute_prune_map(&video, &cfg.prune)?;
    let model: DitModel<T> = DitModel::new(&cfg.model, video.token_dim())?;
    let sched = NoiseSchedule::for_config(&cfg.model)?;

    let [base, pruned] = time_both(&model, &video, &sched, &map, cfg)?;
    for t in [&base, &pruned] {
        if t.first.grid != t.last.grid {
            return Err(BenchError::Nondeterministic(redundancy));
        }
    }
    let total = video.grid().total();
    let shortest = base.median.min(pruned.median);
    Ok(BenchRow {
        prune_ratio: map.pruned_count() as f64 / total as f64,
        predicted_speedup: predict_speedup(&cfg.model, video.token_dim(), &map),
        measured_wall_speedup: base.median / pruned.median,
        baseline_tokens: total,
        kept_tokens: map.kept_count(),
        cache_sizes: (base.last.caches[0].len(), pruned.last.caches[0].len()),
        thread_count: threads,
        precision: T::NAME,
        valid: shortest > 0.0 && shortest >= cfg.min_ticks * tick,
        median_secs: (base.median, pruned.median),
    })
}

/// One row per redundancy level, run on a dedicated pool of
/// `cfg.threads` threads.
pub fn run_benchmark(cfg: &SuiteConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build()?;
    let tick = timer_resolution().as_secs_f64();
    pool.install(|| {
        let threads = rayon::current_num_threads();
        let rows = cfg
            .redundancies
            .iter()
            .map(|&r| match cfg.precision {
                Precision::F64 => run_row::<f64>(cfg, r, tick, threads),
                Precision::F32 => run_row::<f32>(cfg, r, tick, threads),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BenchReport { rows })
    })
}
