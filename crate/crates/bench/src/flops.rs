//! Operation counts for one chunked denoising run, baseline vs. pruned.
//!
//! Every model pass over a chunk costs, per layer:
//!
//! * a token-linear part (projections, cross-attention, FFN, norms, embed)
//!   for each query row;
//! * for each (query, stored key) pair, the value accumulation;
//! * for each (query, key position) pair, the score and its exponential. In
//!   pruned mode key positions are the rotated copies, one per covered
//!   position, so this term shrinks only with the query count;
//! * a rotation per key position.
//!
//! With only the token-linear part the speedup is `N_total / N_kept`.

use lifp_core::dit::ModelConfig;
use lifp_core::PruneMap;
use serde::Serialize;

/// Rough cost of one `exp` in multiply-add units.
pub const EXP_COST: f64 = 12.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlopModel {
    pub per_token: f64,
    pub per_pair: f64,
    pub per_copy: f64,
    pub per_key_position: f64,
    /// Model passes per chunk (denoising steps plus the cache pass).
    pub passes: usize,
}

/// Query and key counts for one chunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ChunkLoad {
    pub queries: usize,
    pub keys: usize,
    pub key_positions: usize,
}

impl FlopModel {
    pub fn from_config(cfg: &ModelConfig, token_dim: usize) -> Self {
        let (dm, f, h, d, l) = (
            cfg.model_dim as f64,
            cfg.ffn_dim as f64,
            cfg.n_heads as f64,
            cfg.head_dim as f64,
            cfg.n_layers as f64,
        );
        let ctx = cfg.context_len as f64;
        let norm = 5.0 * dm;
        let layer_token = 2.0 * dm * dm * 6.0 // q, k, v, o, cross q, cross o
            + h * ctx * (4.0 * d + EXP_COST) // cross-attention over the context
            + 4.0 * dm * f + f * EXP_COST // FFN with SiLU
            + 3.0 * norm
            + 3.0 * dm // query rotation
            + 3.0 * dm; // residual adds
        let per_token = l * layer_token + 4.0 * token_dim as f64 * dm + norm;
        Self {
            per_token,
            per_pair: l * h * 2.0 * d,
            per_copy: l * h * (2.0 * d + EXP_COST),
            per_key_position: l * 3.0 * dm,
            passes: cfg.denoise_steps + 1,
        }
    }

    /// Only the token-linear coefficient left.
    pub fn token_linear_only(self) -> Self {
        Self { per_pair: 0.0, per_copy: 0.0, per_key_position: 0.0, ..self }
    }

    /// Only the query-by-stored-key term left.
    pub fn pair_only(self) -> Self {
        Self { per_token: 0.0, per_copy: 0.0, per_key_position: 0.0, ..self }
    }

    pub fn chunk_flops(&self, load: ChunkLoad) -> f64 {
        let (q, k, p) = (load.queries as f64, load.keys as f64, load.key_positions as f64);
        self.passes as f64 * (q * self.per_token + q * k * self.per_pair + q * p * self.per_copy + p * self.per_key_position)
    }

    pub fn run_flops(&self, loads: &[ChunkLoad]) -> f64 {
        loads.iter().map(|&l| self.chunk_flops(l)).sum()
    }
}

/// Per-chunk loads. `pruned = false` counts the baseline, which queries and
/// stores every token.
pub fn chunk_loads(map: &PruneMap, chunk_size: usize, pruned: bool) -> Vec<ChunkLoad> {
    let dims = map.dims();
    let mut loads = Vec::new();
    let mut stored = 0;
    for start in (0..dims.frames).step_by(chunk_size.max(1)) {
        let end = (start + chunk_size).min(dims.frames);
        let ids = dims.frame_range(start, end);
        let queries = if pruned { ids.filter(|&i| map.is_kept(i)).count() } else { ids.len() };
        stored += queries;
        loads.push(ChunkLoad { queries, keys: stored, key_positions: end * dims.sites() });
    }
    loads
}

/// Modeled baseline cost over pruned cost.
pub fn predict_speedup(cfg: &ModelConfig, token_dim: usize, map: &PruneMap) -> f64 {
    predict_speedup_with(&FlopModel::from_config(cfg, token_dim), cfg.chunk_size, map)
}

pub fn predict_speedup_with(model: &FlopModel, chunk_size: usize, map: &PruneMap) -> f64 {
    let base = model.run_flops(&chunk_loads(map, chunk_size, false));
    let pruned = model.run_flops(&chunk_loads(map, chunk_size, true));
    base / pruned
}

#[cfg(test)]
mod tests {
    use super::*;
    use lifp_core::grid::{FlagGrid, GridDims};
    use lifp_core::pruning::resolve_references;

    fn map_with(dims: GridDims, pruned: impl Fn(usize) -> bool) -> PruneMap {
        let flags = (0..dims.total()).map(|i| dims.pos(i).t > 0 && pruned(i)).collect();
        resolve_references(&FlagGrid::from_flags(dims, flags).unwrap()).unwrap()
    }

    #[test]
    fn nothing_pruned_is_one() {
        let dims = GridDims::new(6, 4, 4);
        let s = predict_speedup(&ModelConfig::default(), 16, &PruneMap::all_kept(dims));
        assert_eq!(s, 1.0);
    }

    #[test]
    fn token_linear_speedup_is_total_over_kept() {
        // 100 sites x 10 frames, 310 of the 900 non-anchor tokens pruned
        let dims = GridDims::new(10, 10, 10);
        let map = map_with(dims, |i| i >= 100 && (i - 100) % 900 < 310);
        assert_eq!(map.pruned_count(), 310);
        let m = FlopModel::from_config(&ModelConfig::default(), 16).token_linear_only();
        let s = predict_speedup_with(&m, 3, &map);
        let want = 1000.0 / 690.0;
        assert!((s - want).abs() < 1e-12, "{s}");
        assert!((s - 1.449).abs() < 1e-3);
    }

    #[test]
    fn half_pruned_pairs_give_four() {
        // odd frames duplicate the even frame before them, so each two-frame
        // chunk keeps half its queries and the cache keeps half the keys
        let dims = GridDims::new(8, 3, 3);
        let map = map_with(dims, |i| dims.pos(i).t % 2 == 1);
        let m = FlopModel::from_config(&ModelConfig::default(), 16).pair_only();
        let s = predict_speedup_with(&m, 2, &map);
        assert!((s - 4.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn more_pruning_never_slows_the_model() {
        let dims = GridDims::new(6, 4, 4);
        let cfg = ModelConfig::default();
        let mut last = 1.0;
        for cut in [0, 10, 30, 50, 70, 80] {
            let s = predict_speedup(&cfg, 16, &map_with(dims, |i| i % 80 < cut));
            assert!(s >= last - 1e-12, "{cut}: {s} < {last}");
            assert!(s >= 1.0);
            last = s;
        }
    }

    #[test]
    fn loads_count_the_compressed_cache() {
        let dims = GridDims::new(6, 1, 1);
        let map = map_with(dims, |i| [1, 2, 4].contains(&i));
        let loads = chunk_loads(&map, 3, true);
        assert_eq!(loads[0], ChunkLoad { queries: 1, keys: 1, key_positions: 3 });
        assert_eq!(loads[1], ChunkLoad { queries: 2, keys: 3, key_positions: 6 });
    }
}
