//! A toy chunked-causal diffusion transformer with seeded random weights.
//!
//! Chunks of `chunk_size` frames are denoised in temporal order. Each chunk
//! runs `denoise_steps` passes of the model (which predicts the clean
//! latent), re-noising between passes, then one extra pass at noise level
//! zero whose keys and values are appended to a per-layer cache. Later
//! chunks attend to that cache.
//!
//! Self-attention is the only layer that mixes tokens. In pruned mode only
//! kept tokens are queried and the cache stores kept tokens only; pruned
//! positions are reached through coverage sets and filled back in at the
//! end by [`restore_tokens`].

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::grid::{GridDims, TokenGrid, TokenPos, TokenSequence};
use crate::latent_io::LatentVideo;
use crate::numerics::{
    derive_seed, derive_seed_indexed, dot, gaussian_matrix, layer_norm_rows, matmul, softmax_in_place, Matrix, Real,
    SeededRng,
};
use crate::pruning::{restore_tokens, PruneMap};
use crate::rope_attention::{
    duplication_source, full_attention_oracle, recovered_attention_aggregated, AttentionInputs, CacheChunk,
    CausalMask, CoverageSet, DuplicationMode, KvCache, PositionDomain, RopeParams, DEFAULT_ROPE_BASE,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_dim: usize,
    pub head_dim: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub chunk_size: usize,
    pub denoise_steps: usize,
    /// Rows of the fixed cross-attention context.
    pub context_len: usize,
    pub weight_seed: u64,
    pub noise_seed: u64,
    pub rope_base: f64,
    /// Noise level of the first denoising pass.
    pub initial_noise: f64,
    pub duplication: DuplicationMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_dim: 32,
            head_dim: 8,
            n_heads: 4,
            n_layers: 2,
            ffn_dim: 64,
            chunk_size: 3,
            denoise_steps: 4,
            context_len: 4,
            weight_seed: 0,
            noise_seed: 1,
            rope_base: DEFAULT_ROPE_BASE,
            initial_noise: 0.8,
            duplication: DuplicationMode::ChainResolved,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_heads > 0 && self.head_dim > 0 && self.model_dim == self.n_heads * self.head_dim,
            InvalidInput,
            "model_dim {} must equal n_heads {} x head_dim {}",
            self.model_dim,
            self.n_heads,
            self.head_dim
        );
        ensure!(self.n_layers > 0 && self.ffn_dim > 0, InvalidInput, "need at least one layer and a non-empty FFN");
        ensure!(self.chunk_size > 0, InvalidInput, "chunk_size must be positive");
        ensure!(self.denoise_steps > 0, InvalidInput, "denoise_steps must be positive");
        ensure!(self.context_len > 0, InvalidInput, "context_len must be positive");
        ensure!(
            self.initial_noise > 0.0 && self.initial_noise <= 1.0,
            InvalidInput,
            "initial noise {} must lie in (0, 1]",
            self.initial_noise
        );
        self.rope().validate()
    }

    pub fn rope(&self) -> RopeParams {
        RopeParams {
            head_dim: self.head_dim,
            base: self.rope_base,
            domain: PositionDomain::Frame,
        }
    }
}

/// Noise levels for each denoising pass plus the final cache-forming pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    levels: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        ensure!(levels.len() >= 2, InvalidInput, "schedule needs at least one step and the zero level");
        ensure!(
            levels.iter().all(|l| l.is_finite() && *l >= 0.0 && *l <= 1.0),
            InvalidInput,
            "noise levels must lie in [0, 1]: {levels:?}"
        );
        ensure!(
            levels.windows(2).all(|w| w[0] > w[1]),
            InvalidInput,
            "noise levels must strictly decrease: {levels:?}"
        );
        ensure!(*levels.last().unwrap() == 0.0, InvalidInput, "last noise level must be 0");
        Ok(Self { levels })
    }

    /// `start * (1 - k / steps)` for `k = 0..=steps`.
    pub fn linear(steps: usize, start: f64) -> Result<Self> {
        ensure!(steps > 0, InvalidInput, "steps must be positive");
        Self::new((0..=steps).map(|k| start * (1.0 - k as f64 / steps as f64)).collect())
    }

    pub fn for_config(cfg: &ModelConfig) -> Result<Self> {
        Self::linear(cfg.denoise_steps, cfg.initial_noise)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn steps(&self) -> usize {
        self.levels.len() - 1
    }
}

#[derive(Clone, Debug)]
pub struct LayerWeights<T = f64> {
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
    pub cross_q: Matrix<T>,
    pub cross_o: Matrix<T>,
    /// Context keys and values, projected once.
    pub context_keys: Matrix<T>,
    pub context_values: Matrix<T>,
    pub w1: Matrix<T>,
    pub w2: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct DitModel<T = f64> {
    cfg: ModelConfig,
    token_dim: usize,
    rope: RopeParams,
    embed: Matrix<T>,
    /// Added to every embedded token, scaled by the noise level.
    noise_embed: Vec<T>,
    layers: Vec<LayerWeights<T>>,
    unembed: Matrix<T>,
}

/// Which self-attention a block runs.
#[derive(Clone, Copy, Debug)]
pub enum SelfAttention<'a> {
    /// Reference attention over every cached and current key.
    Full,
    /// Recovery over kept keys; one coverage set per key (cache first).
    Recovered(&'a [CoverageSet]),
}

/// Block output plus the block's pre-RoPE keys and values for its inputs.
#[derive(Clone, Debug)]
pub struct BlockOutput<T> {
    pub hidden: Matrix<T>,
    pub keys: Matrix<T>,
    pub values: Matrix<T>,
}

fn init<T: Real>(root: u64, label: &str, rows: usize, cols: usize) -> Matrix<T> {
    let mut rng = SeededRng::new(derive_seed(root, label));
    gaussian_matrix(&mut rng, rows, cols, 1.0 / (rows as f64).sqrt())
}

fn silu<T: Real>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

impl<T: Real> DitModel<T> {
    pub fn new(cfg: &ModelConfig, token_dim: usize) -> Result<Self> {
        cfg.validate()?;
        ensure!(token_dim > 0, InvalidInput, "token_dim must be positive");
        let d = cfg.model_dim;
        let seed = cfg.weight_seed;
        let context: Matrix<T> = {
            let mut rng = SeededRng::new(derive_seed(seed, "context"));
            gaussian_matrix(&mut rng, cfg.context_len, d, 1.0)
        };
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let w = |name: &str, r, c| init::<T>(seed, &format!("layer{l}.{name}"), r, c);
            let cross_k = w("cross_k", d, d);
            let cross_v = w("cross_v", d, d);
            layers.push(LayerWeights {
                wq: w("wq", d, d),
                wk: w("wk", d, d),
                wv: w("wv", d, d),
                wo: w("wo", d, d),
                cross_q: w("cross_q", d, d),
                cross_o: w("cross_o", d, d),
                context_keys: matmul(&context, &cross_k)?,
                context_values: matmul(&context, &cross_v)?,
                w1: w("w1", d, cfg.ffn_dim),
                w2: w("w2", cfg.ffn_dim, d),
            });
        }
        Ok(Self {
            cfg: cfg.clone(),
            token_dim,
            rope: cfg.rope(),
            embed: init(seed, "embed", token_dim, d),
            noise_embed: init::<T>(seed, "noise_embed", 1, d).into_data(),
            layers,
            unembed: init(seed, "unembed", d, token_dim),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    pub fn layers(&self) -> &[LayerWeights<T>] {
        &self.layers
    }

    /// Silences self-attention by zeroing every output projection. The model
    /// is then point-wise in the tokens.
    pub fn zero_self_attention(&mut self) {
        for l in &mut self.layers {
            l.wo.scale(T::zero());
        }
    }

    /// One denoising pass: embed at noise level `sigma`, run every block
    /// against its layer cache, and unembed. Returns the prediction and each
    /// layer's keys and values for the input rows.
    pub fn forward(
        &self,
        x: &Matrix<T>,
        positions: &[TokenPos],
        sigma: f64,
        caches: &[KvCache<T>],
        attention: SelfAttention<'_>,
    ) -> Result<(Matrix<T>, Vec<(Matrix<T>, Matrix<T>)>)> {
        ensure!(
            x.cols() == self.token_dim,
            DimensionMismatch,
            "tokens have {} values, model expects {}",
            x.cols(),
            self.token_dim
        );
        ensure!(caches.len() == self.layers.len(), DimensionMismatch, "{} caches for {} layers", caches.len(), self.layers.len());
        let mut h = matmul(x, &self.embed)?;
        let s = T::cast(sigma);
        for r in 0..h.rows() {
            for (v, &e) in h.row_mut(r).iter_mut().zip(&self.noise_embed) {
                *v = *v + s * e;
            }
        }
        let mut kv = Vec::with_capacity(self.layers.len());
        for (layer, cache) in self.layers.iter().zip(caches) {
            let out = block_forward(&h, positions, cache, layer, &self.rope, self.cfg.n_heads, attention)?;
            h = out.hidden;
            kv.push((out.keys, out.values));
        }
        Ok((matmul(&layer_norm_rows(&h), &self.unembed)?, kv))
    }
}

/// Pre-LN transformer block: self-attention, cross-attention to the fixed
/// context, and a SiLU FFN, each added to the residual stream.
pub fn block_forward<T: Real>(
    h: &Matrix<T>,
    positions: &[TokenPos],
    cache: &KvCache<T>,
    layer: &LayerWeights<T>,
    rope: &RopeParams,
    n_heads: usize,
    attention: SelfAttention<'_>,
) -> Result<BlockOutput<T>> {
    ensure!(
        h.cols() == layer.wq.rows(),
        DimensionMismatch,
        "hidden width {} vs model_dim {}",
        h.cols(),
        layer.wq.rows()
    );
    ensure!(h.rows() == positions.len(), DimensionMismatch, "{} rows with {} positions", h.rows(), positions.len());

    let a = layer_norm_rows(h);
    let q = matmul(&a, &layer.wq)?;
    let k = matmul(&a, &layer.wk)?;
    let v = matmul(&a, &layer.wv)?;
    let keys = Matrix::vstack(cache.keys(), &k)?;
    let values = Matrix::vstack(cache.values(), &v)?;
    let key_pos: Vec<TokenPos> = cache.positions().iter().chain(positions).copied().collect();
    let inputs = AttentionInputs {
        queries: &q,
        query_pos: positions,
        keys: &keys,
        values: &values,
        key_pos: &key_pos,
        n_heads,
    };
    // the cache only holds earlier chunks, so every key is visible
    let attn = match attention {
        SelfAttention::Full => full_attention_oracle(&inputs, rope, CausalMask::None)?,
        SelfAttention::Recovered(coverage) => recovered_attention_aggregated(&inputs, coverage, rope, CausalMask::None)?,
    };
    let mut hidden = h.clone();
    hidden.add_assign(&matmul(&attn, &layer.wo)?)?;

    let b = layer_norm_rows(&hidden);
    let cross = cross_attention(&matmul(&b, &layer.cross_q)?, &layer.context_keys, &layer.context_values, n_heads);
    hidden.add_assign(&matmul(&cross, &layer.cross_o)?)?;

    let f = layer_norm_rows(&hidden);
    let inner = matmul(&f, &layer.w1)?.map(silu);
    hidden.add_assign(&matmul(&inner, &layer.w2)?)?;

    Ok(BlockOutput { hidden, keys: k, values: v })
}

/// Per-token softmax attention to a fixed context, no positions.
fn cross_attention<T: Real>(q: &Matrix<T>, keys: &Matrix<T>, values: &Matrix<T>, n_heads: usize) -> Matrix<T> {
    let d = q.cols() / n_heads;
    let scale = T::cast(1.0 / (d as f64).sqrt());
    let mut out = Matrix::zeros(q.rows(), q.cols());
    let mut w = vec![T::zero(); keys.rows()];
    for i in 0..q.rows() {
        for h in 0..n_heads {
            let span = h * d..(h + 1) * d;
            for (j, wj) in w.iter_mut().enumerate() {
                *wj = dot(&q.row(i)[span.clone()], &keys.row(j)[span.clone()]) * scale;
            }
            softmax_in_place(&mut w);
            let o = &mut out.row_mut(i)[span.clone()];
            for (j, &p) in w.iter().enumerate() {
                for (o, &x) in o.iter_mut().zip(&values.row(j)[span.clone()]) {
                    *o = *o + p * x;
                }
            }
        }
    }
    out
}

/// Bits of a full denoising run beyond the output grid.
#[derive(Clone, Debug)]
pub struct DenoiseOutput<T = f64> {
    pub grid: TokenGrid<T>,
    /// Layer caches after the last chunk.
    pub caches: Vec<KvCache<T>>,
    /// The map actually applied (`None` in baseline mode). With cache-only
    /// duplication, positions lacking a cached source are promoted to kept.
    pub applied_map: Option<PruneMap>,
    /// Cache length after each chunk.
    pub cache_sizes: Vec<usize>,
    /// Query rows per model pass, summed over the run.
    pub query_rows: usize,
}

/// Gaussian noise for one token at one step, keyed by its absolute position
/// so that both modes draw the same noise wherever they both compute.
pub fn position_noise<T: Real>(noise_seed: u64, step: usize, id: usize, token_dim: usize) -> Vec<T> {
    let mut rng = SeededRng::new(derive_seed_indexed(noise_seed, &[step as u64, id as u64]));
    (0..token_dim).map(|_| T::cast(rng.next_normal())).collect()
}

fn blend<T: Real>(x: &mut Matrix<T>, sigma: f64, ids: &[usize], seed: u64, step: usize) {
    if sigma == 0.0 {
        return;
    }
    let (keep, s) = (T::cast(1.0 - sigma), T::cast(sigma));
    for (r, &id) in ids.iter().enumerate() {
        let eps = position_noise::<T>(seed, step, id, x.cols());
        for (v, e) in x.row_mut(r).iter_mut().zip(eps) {
            *v = keep * *v + s * e;
        }
    }
}

/// Denoises `video` chunk by chunk. `map = None` runs the baseline over
/// every token; otherwise only kept tokens are computed and the result is
/// restored to the full grid.
pub fn denoise_chunked<T: Real>(
    model: &DitModel<T>,
    video: &LatentVideo,
    sched: &NoiseSchedule,
    map: Option<&PruneMap>,
) -> Result<DenoiseOutput<T>> {
    let cfg = model.config();
    let dims = video.grid();
    ensure!(
        video.token_dim() == model.token_dim(),
        DimensionMismatch,
        "video tokens have {} values, model expects {}",
        video.token_dim(),
        model.token_dim()
    );
    ensure!(
        sched.steps() == cfg.denoise_steps,
        InvalidInput,
        "schedule has {} steps, config {}",
        sched.steps(),
        cfg.denoise_steps
    );
    if let Some(m) = map {
        ensure!(m.dims() == dims, DimensionMismatch, "map grid {:?} vs video grid {:?}", m.dims(), dims);
    }
    let tokens: TokenGrid<T> = video.to_tokens();
    let levels = sched.levels();
    let mut caches: Vec<KvCache<T>> = (0..cfg.n_layers)
        .map(|_| KvCache::new(dims, cfg.chunk_size, cfg.model_dim))
        .collect();
    let n = dims.total();
    let mut kept = vec![true; n];
    let mut reference: Vec<usize> = (0..n).collect();
    let mut outputs: Vec<Option<Vec<T>>> = vec![None; n];
    let mut cache_sizes = Vec::new();
    let mut query_rows = 0;

    for start in (0..dims.frames).step_by(cfg.chunk_size) {
        let end = (start + cfg.chunk_size).min(dims.frames);
        let chunk: Vec<usize> = dims.frame_range(start, end).collect();
        if let Some(m) = map {
            for &id in &chunk {
                if m.is_kept(id) {
                    continue;
                }
                match duplication_source(dims.pos(id), m, &caches[0], cfg.duplication) {
                    Ok(src) => {
                        kept[id] = false;
                        reference[id] = src;
                    }
                    Err(_) if cfg.duplication == DuplicationMode::CacheOnly => {}
                    Err(e) => return Err(e),
                }
            }
        }
        let ids: Vec<usize> = chunk.iter().copied().filter(|&id| kept[id]).collect();
        let positions: Vec<TokenPos> = ids.iter().map(|&id| dims.pos(id)).collect();
        let (cache_cov, chunk_cov) = chunk_coverage(dims, &caches[0], &chunk, &positions, &reference);
        let full_cov: Vec<CoverageSet> = caches[0]
            .coverage_sets()
            .into_iter()
            .zip(&cache_cov)
            .map(|(mut set, extra)| {
                set.covers.extend_from_slice(extra);
                set
            })
            .chain(chunk_cov.iter().cloned())
            .collect();
        let attention = match map {
            None => SelfAttention::Full,
            Some(_) => SelfAttention::Recovered(&full_cov),
        };

        let mut x = tokens.values.select_rows(&ids)?;
        blend(&mut x, levels[0], &ids, cfg.noise_seed, 0);
        for k in 0..sched.steps() {
            let (pred, _) = model.forward(&x, &positions, levels[k], &caches, attention)?;
            x = pred;
            blend(&mut x, levels[k + 1], &ids, cfg.noise_seed, k + 1);
        }
        // zero-noise pass on the final prediction forms the clean cache
        let (_, kv) = model.forward(&x, &positions, 0.0, &caches, attention)?;
        query_rows += ids.len() * (sched.steps() + 1);

        let extensions: Vec<CoverageSet> = cache_cov
            .iter()
            .enumerate()
            .filter(|(_, extra)| !extra.is_empty())
            .map(|(i, extra)| CoverageSet { token: caches[0].positions()[i], covers: extra.clone() })
            .collect();
        for (cache, (keys, values)) in caches.iter_mut().zip(kv) {
            let coverage = chunk_cov.iter().cloned().chain(extensions.iter().cloned()).collect();
            cache.append(CacheChunk { keys, values, positions: positions.clone(), coverage })?;
        }
        cache_sizes.push(caches[0].len());
        for (r, &id) in ids.iter().enumerate() {
            outputs[id] = Some(x.row(r).to_vec());
        }
    }

    let kept_ids: Vec<usize> = (0..n).filter(|&id| kept[id]).collect();
    let mut values = Matrix::with_cols(model.token_dim());
    for &id in &kept_ids {
        let row = outputs[id].as_ref().ok_or_else(|| Error::InvalidInput(format!("token {id} never computed")))?;
        values.push_row(row)?;
    }
    let (grid, applied_map) = match map {
        None => (TokenGrid::new(dims, values)?, None),
        Some(_) => {
            let applied = PruneMap::from_parts(dims, kept, reference)?;
            let seq = TokenSequence {
                values,
                positions: kept_ids.iter().map(|&id| dims.pos(id)).collect(),
            };
            (restore_tokens(&seq, &applied)?, Some(applied))
        }
    };
    Ok(DenoiseOutput { grid, caches, applied_map, cache_sizes, query_rows })
}

/// Coverage for one chunk: positions added to each existing cache token,
/// and a set per kept chunk token (itself plus the chunk positions that
/// resolve to it).
fn chunk_coverage<T: Real>(
    dims: GridDims,
    cache: &KvCache<T>,
    chunk: &[usize],
    kept_positions: &[TokenPos],
    reference: &[usize],
) -> (Vec<Vec<TokenPos>>, Vec<CoverageSet>) {
    let mut cache_extra = vec![Vec::new(); cache.len()];
    let mut sets: Vec<CoverageSet> = kept_positions.iter().map(|&p| CoverageSet::singleton(p)).collect();
    for &id in chunk {
        let src = reference[id];
        if src == id {
            continue;
        }
        let pos = dims.pos(id);
        let src_pos = dims.pos(src);
        if let Some(k) = kept_positions.iter().position(|&p| p == src_pos) {
            sets[k].covers.push(pos);
        } else if let Some(i) = cache.index_of(src_pos) {
            cache_extra[i].push(pos);
        }
    }
    (cache_extra, sets)
}

/// Largest absolute difference over the rows whose ids are listed.
pub fn max_abs_diff_at<T: Real>(a: &TokenGrid<T>, b: &TokenGrid<T>, ids: &[usize]) -> Result<f64> {
    ensure!(a.dims == b.dims, DimensionMismatch, "grids {:?} and {:?}", a.dims, b.dims);
    let mut worst = 0.0f64;
    for &id in ids {
        for (x, y) in a.values.row(id).iter().zip(b.values.row(id)) {
            worst = worst.max((x.widen() - y.widen()).abs());
        }
    }
    Ok(worst)
}
