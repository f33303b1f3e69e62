use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use lifp_bench::{run_benchmark, BenchError};
use lifp_core::dit::{denoise_chunked, max_abs_diff_at, DitModel, ModelConfig, NoiseSchedule};
use lifp_core::latent_io::{generate_synthetic, read_latent, read_prune_map, write_latent, write_prune_map};
use lifp_core::numerics::derive_seed;
use lifp_core::pruning::{compute_prune_map, prune_stats};
use lifp_core::verify::run_suites;
use lifp_core::{LatentVideo, PruneMap, Real};
use serde::Serialize;

use crate::args::{BenchArgs, Cli, Command, GenArgs, MaskArgs, PrecisionArg, RunArgs, VerifyArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] lifp_core::Error),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    At { path: String, source: lifp_core::Error },
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("{0}")]
    Input(String),
}

pub enum Outcome {
    Success,
    VerificationFailed,
}

/// Component seeds, each `derive_seed(seed, name)`.
#[derive(Clone, Copy, Debug, Serialize)]
struct Seeds {
    root: u64,
    synth: u64,
    weights: u64,
    noise: u64,
    verify: u64,
}

impl Seeds {
    fn new(root: u64) -> Self {
        Self {
            root,
            synth: derive_seed(root, "synth"),
            weights: derive_seed(root, "weights"),
            noise: derive_seed(root, "noise"),
            verify: derive_seed(root, "verify"),
        }
    }
}

fn print_config(command: &str, seeds: Seeds, threads: usize, body: impl Serialize) {
    #[derive(Serialize)]
    struct Resolved<'a, B> {
        command: &'a str,
        seeds: Seeds,
        threads: usize,
        config: B,
    }
    let json = serde_json::to_string(&Resolved { command, seeds, threads, config: body }).expect("config serializes");
    println!("config {json}");
}

fn at<T>(path: &Path, r: lifp_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|source| CliError::At { path: path.display().to_string(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::File { path: path.display().to_string(), source })
}

pub fn dispatch(cli: Cli) -> Result<Outcome, CliError> {
    if cli.threads == 0 {
        return Err(CliError::Input("--threads must be at least 1".into()));
    }
    let seeds = Seeds::new(cli.seed);
    if let Command::Bench(args) = &cli.command {
        return bench(args, seeds, cli.threads);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build()?;
    pool.install(|| match &cli.command {
        Command::Gen(args) => gen(args, seeds, cli.threads),
        Command::Mask(args) => mask(args, seeds, cli.threads),
        Command::Run(args) => run(args, seeds, cli.threads),
        Command::Verify(args) => verify(args, seeds, cli.threads),
        Command::Bench(_) => unreachable!("handled above"),
    })
}

fn gen(args: &GenArgs, seeds: Seeds, threads: usize) -> Result<Outcome, CliError> {
    let cfg = args.synth.config(seeds.synth);
    print_config("gen", seeds, threads, &cfg);
    let video = generate_synthetic(&cfg)?;
    at(&args.out, write_latent(&video, &args.out))?;
    let g = video.grid();
    println!(
        "wrote {} ({} frames, {}x{} grid, {} duplicates)",
        args.out.display(),
        g.frames,
        g.gx,
        g.gy,
        cfg.duplicate_count()
    );
    Ok(Outcome::Success)
}

fn mask(args: &MaskArgs, seeds: Seeds, threads: usize) -> Result<Outcome, CliError> {
    let cfg = args.prune.config();
    print_config("mask", seeds, threads, &cfg);
    let video = at(&args.input, read_latent(&args.input))?;
    let map = compute_prune_map(&video, &cfg)?;
    at(&args.out, write_prune_map(&map, &args.out))?;
    let stats = prune_stats(&map);
    if let Some(path) = &args.stats {
        let mut w = create(path)?;
        stats
            .write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|source| CliError::File { path: path.display().to_string(), source })?;
    }
    println!(
        "pruned {} of {} tokens (ratio {:.6}); kept per frame {:?}",
        map.pruned_count(),
        stats.total_tokens,
        stats.prune_ratio,
        stats.per_frame_kept
    );
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct RunConfig<'a> {
    input: &'a Path,
    map: Option<&'a Path>,
    prune: lifp_core::PruneConfig,
    model: &'a ModelConfig,
    precision: &'static str,
}

fn run(args: &RunArgs, seeds: Seeds, threads: usize) -> Result<Outcome, CliError> {
    let prune = args.prune.config();
    let model_cfg = args.model.config(prune.chunk_size, seeds.weights, seeds.noise);
    print_config(
        "run",
        seeds,
        threads,
        RunConfig {
            input: &args.input,
            map: args.map.as_deref(),
            prune: prune.clone(),
            model: &model_cfg,
            precision: match args.precision {
                PrecisionArg::F64 => "f64",
                PrecisionArg::F32 => "f32",
            },
        },
    );
    let video = at(&args.input, read_latent(&args.input))?;
    let map = match &args.map {
        Some(path) => at(path, read_prune_map(path))?,
        None => compute_prune_map(&video, &prune)?,
    };
    if map.dims() != video.grid() {
        return Err(CliError::Input(format!(
            "map grid {:?} does not match video grid {:?}",
            map.dims(),
            video.grid()
        )));
    }
    fs::create_dir_all(&args.out_dir)
        .map_err(|source| CliError::File { path: args.out_dir.display().to_string(), source })?;
    match args.precision {
        PrecisionArg::F64 => run_in::<f64>(args, &video, &map, &model_cfg),
        PrecisionArg::F32 => run_in::<f32>(args, &video, &map, &model_cfg),
    }
}

fn run_in<T: Real>(args: &RunArgs, video: &LatentVideo, map: &PruneMap, cfg: &ModelConfig) -> Result<Outcome, CliError> {
    let model: DitModel<T> = DitModel::new(cfg, video.token_dim())?;
    let sched = NoiseSchedule::for_config(cfg)?;
    let base = denoise_chunked(&model, video, &sched, None)?;
    let pruned = denoise_chunked(&model, video, &sched, Some(map))?;
    for (name, out) in [("baseline.lifp", &base.grid), ("pruned.lifp", &pruned.grid)] {
        let v = LatentVideo::from_tokens(out, video.channels(), video.patch_size())?;
        let path = args.out_dir.join(name);
        at(&path, write_latent(&v, &path))?;
    }
    let all: Vec<usize> = (0..map.dims().total()).collect();
    let kept: Vec<usize> = map.kept_ids().collect();
    println!("tokens {} kept {} pruned {}", all.len(), kept.len(), map.pruned_count());
    println!("cache sizes baseline {} pruned {}", base.caches[0].len(), pruned.caches[0].len());
    println!("max_abs_diff_kept {:e}", max_abs_diff_at(&base.grid, &pruned.grid, &kept)?);
    println!("max_abs_diff_all {:e}", max_abs_diff_at(&base.grid, &pruned.grid, &all)?);
    Ok(Outcome::Success)
}

fn verify(args: &VerifyArgs, seeds: Seeds, threads: usize) -> Result<Outcome, CliError> {
    let faults = args.faults();
    print_config("verify", seeds, threads, faults);
    let reports = run_suites(seeds.verify, faults);
    for r in &reports {
        println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} of {} suites passed", reports.len() - failed, reports.len());
    Ok(if failed == 0 { Outcome::Success } else { Outcome::VerificationFailed })
}

fn bench(args: &BenchArgs, seeds: Seeds, threads: usize) -> Result<Outcome, CliError> {
    let suite = args.suite(seeds.synth, seeds.weights, seeds.noise, threads);
    print_config("bench", seeds, threads, &suite);
    let report = run_benchmark(&suite)?;
    let mut w = create(&args.out)?;
    report
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|source| CliError::File { path: args.out.display().to_string(), source })?;
    print!("{}", report.to_csv());
    Ok(Outcome::Success)
}
