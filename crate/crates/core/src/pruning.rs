//! Inter-frame pruning: the consecutive-frame L1 test, the noise-aware
//! second test against the substitute frame `t*`, reference resolution,
//! and token restoration after denoising.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::grid::{FlagGrid, GridDims, TokenGrid, TokenPos, TokenSequence};
use crate::latent_io::{LatentPatch, LatentVideo};
use crate::numerics::{Matrix, Real};

pub const DEFAULT_THETA: f64 = 0.15;
pub const DEFAULT_THETA2: f64 = 0.3;
pub const DEFAULT_CHUNK_SIZE: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Norm {
    Sum,
    /// Divide the sum by `C * p^2`, making thresholds patch-size independent.
    #[default]
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Consecutive-frame threshold.
    pub theta: f64,
    /// Threshold between a token and its substitute at frame `t*`.
    pub theta2: f64,
    pub chunk_size: usize,
    pub anchor_first_frame: bool,
    pub l1_norm: L1Norm,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            theta2: DEFAULT_THETA2,
            chunk_size: DEFAULT_CHUNK_SIZE,
            anchor_first_frame: true,
            l1_norm: L1Norm::Mean,
        }
    }
}

impl PruneConfig {
    /// Thresholds may be zero (nothing passes the strict test) or `+inf`.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.theta >= 0.0 && self.theta2 >= 0.0,
            InvalidInput,
            "thresholds must be non-negative (theta={}, theta2={})",
            self.theta,
            self.theta2
        );
        ensure!(self.chunk_size >= 1, InvalidInput, "chunk size must be at least 1");
        ensure!(
            self.anchor_first_frame,
            InvalidInput,
            "frame 0 has no temporal reference and must stay anchored"
        );
        Ok(())
    }
}

/// L1 distance between two equally shaped value slices, accumulated in f64.
pub fn l1_distance(a: &[f32], b: &[f32], norm: L1Norm) -> Result<f64> {
    ensure!(
        a.len() == b.len(),
        DimensionMismatch,
        "patches of {} and {} values",
        a.len(),
        b.len()
    );
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(match norm {
        L1Norm::Sum => sum,
        L1Norm::Mean if a.is_empty() => 0.0,
        L1Norm::Mean => sum / a.len() as f64,
    })
}

pub fn l1_patch_distance(a: &LatentPatch, b: &LatentPatch, norm: L1Norm) -> Result<f64> {
    l1_distance(&a.values, &b.values, norm)
}

/// Substitute frame for a token at frame `t` (0-indexed, `t >= 1`): chunk
/// leaders look back to the previous chunk's last frame, other frames to
/// their own chunk leader.
pub fn t_star(t: usize, chunk_size: usize) -> Result<usize> {
    ensure!(t >= 1, InvalidInput, "frame 0 is the anchor and has no substitute");
    ensure!(chunk_size >= 1, InvalidInput, "chunk size must be at least 1");
    Ok(if t % chunk_size == 0 {
        t - 1
    } else {
        chunk_size * (t / chunk_size)
    })
}

fn site_distance(v: &LatentVideo, a: TokenPos, b: TokenPos, norm: L1Norm) -> f64 {
    let pa = v.patch_at(a.t, a.x, a.y).expect("position inside grid");
    let pb = v.patch_at(b.t, b.x, b.y).expect("position inside grid");
    l1_distance(&pa.values, &pb.values, norm).expect("patches share a shape")
}

/// Tokens at `t >= 1` whose patch is within `theta` (strictly) of the patch
/// at the same site in the previous frame.
pub fn candidate_mask(v: &LatentVideo, cfg: &PruneConfig) -> FlagGrid {
    let dims = v.grid();
    let mut mask = FlagGrid::filled(dims, false);
    for id in dims.frame_range(1, dims.frames) {
        let p = dims.pos(id);
        let prev = TokenPos::new(p.t - 1, p.x, p.y);
        if site_distance(v, p, prev, cfg.l1_norm) < cfg.theta {
            mask.set(p, true);
        }
    }
    mask
}

/// Keeps a candidate pruned only if it is also within `theta2` of the patch at
/// frame `t*`.
pub fn noise_aware_mask(v: &LatentVideo, candidates: &FlagGrid, cfg: &PruneConfig) -> Result<FlagGrid> {
    let dims = v.grid();
    ensure!(
        candidates.dims() == dims,
        DimensionMismatch,
        "candidate grid {:?} vs video grid {:?}",
        candidates.dims(),
        dims
    );
    let mut mask = candidates.clone();
    for p in candidates.positions().collect::<Vec<_>>() {
        let sub = TokenPos::new(t_star(p.t, cfg.chunk_size)?, p.x, p.y);
        if !(site_distance(v, p, sub, cfg.l1_norm) < cfg.theta2) {
            mask.set(p, false);
        }
    }
    Ok(mask)
}

/// Per-token keep/prune decisions with references collapsed onto kept tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneMap {
    dims: GridDims,
    kept: Vec<bool>,
    reference: Vec<usize>,
    multiplicity: Vec<usize>,
}

impl PruneMap {
    pub fn all_kept(dims: GridDims) -> Self {
        Self {
            dims,
            kept: vec![true; dims.total()],
            reference: (0..dims.total()).collect(),
            multiplicity: vec![1; dims.total()],
        }
    }

    /// Builds a map from explicit records, checking every invariant.
    pub fn from_parts(dims: GridDims, kept: Vec<bool>, reference: Vec<usize>) -> Result<Self> {
        let n = dims.total();
        ensure!(
            kept.len() == n && reference.len() == n,
            DimensionMismatch,
            "{} flags and {} references for {n} tokens",
            kept.len(),
            reference.len()
        );
        let mut multiplicity = vec![0; n];
        for id in 0..n {
            let p = dims.pos(id);
            let r = reference[id];
            if kept[id] {
                ensure!(r == id, InvalidInput, "kept token {id} references {r}");
            } else {
                ensure!(p.t > 0, InvalidInput, "frame-0 token {id} is pruned");
                ensure!(r < n, OutOfRange, "token {id} references {r} outside the grid");
                let rp = dims.pos(r);
                ensure!(
                    kept[r] && rp.same_site(&p) && rp.t < p.t,
                    InvalidInput,
                    "pruned token {id} must reference an earlier kept token at its site, got {r}"
                );
            }
            multiplicity[r] += 1;
        }
        Ok(Self {
            dims,
            kept,
            reference,
            multiplicity,
        })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    #[inline]
    pub fn is_kept(&self, id: usize) -> bool {
        self.kept[id]
    }

    #[inline]
    pub fn reference(&self, id: usize) -> usize {
        self.reference[id]
    }

    /// Positions a kept token stands for, itself included; zero for pruned ids.
    #[inline]
    pub fn multiplicity(&self, id: usize) -> usize {
        self.multiplicity[id]
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn pruned_count(&self) -> usize {
        self.dims.total() - self.kept_count()
    }

    pub fn kept_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dims.total()).filter(|&i| self.kept[i])
    }

    pub fn kept_mask(&self) -> FlagGrid {
        FlagGrid::from_flags(self.dims, self.kept.clone()).expect("sized by dims")
    }

    /// Linear ids each kept token covers (self first, then pruned ids in
    /// raster order), for every kept token in raster order.
    pub fn coverage_lists(&self) -> Vec<(usize, Vec<usize>)> {
        let mut slot = vec![usize::MAX; self.dims.total()];
        let mut lists: Vec<(usize, Vec<usize>)> = Vec::with_capacity(self.kept_count());
        for id in self.kept_ids() {
            slot[id] = lists.len();
            lists.push((id, vec![id]));
        }
        for id in 0..self.dims.total() {
            if !self.kept[id] {
                lists[slot[self.reference[id]]].1.push(id);
            }
        }
        lists
    }
}

/// Resolves each pruned token onto the nearest preceding kept token at its
/// site. `pruned` flags tokens to remove; frame 0 must be unflagged.
pub fn resolve_references(pruned: &FlagGrid) -> Result<PruneMap> {
    let dims = pruned.dims();
    let n = dims.total();
    if let Some(p) = pruned.positions().find(|p| p.t == 0) {
        return Err(Error::InvalidInput(format!(
            "frame-0 token at ({}, {}) is flagged for pruning",
            p.x, p.y
        )));
    }
    let mut kept = vec![true; n];
    let mut reference: Vec<usize> = (0..n).collect();
    let mut multiplicity = vec![1; n];
    for site in 0..dims.sites() {
        let mut last_kept = site;
        for t in 1..dims.frames {
            let id = t * dims.sites() + site;
            if pruned.flags()[id] {
                kept[id] = false;
                reference[id] = last_kept;
                multiplicity[id] = 0;
                multiplicity[last_kept] += 1;
            } else {
                last_kept = id;
            }
        }
    }
    Ok(PruneMap {
        dims,
        kept,
        reference,
        multiplicity,
    })
}

/// Candidate test, noise-aware test and resolution in one pass.
pub fn compute_prune_map(v: &LatentVideo, cfg: &PruneConfig) -> Result<PruneMap> {
    cfg.validate()?;
    let candidates = candidate_mask(v, cfg);
    let pruned = noise_aware_mask(v, &candidates, cfg)?;
    resolve_references(&pruned)
}

pub fn prune_tokens<T: Real>(tokens: &TokenGrid<T>, map: &PruneMap) -> Result<TokenSequence<T>> {
    ensure!(
        tokens.dims == map.dims(),
        DimensionMismatch,
        "token grid {:?} vs map {:?}",
        tokens.dims,
        map.dims()
    );
    let ids: Vec<usize> = map.kept_ids().collect();
    Ok(TokenSequence {
        values: tokens.values.select_rows(&ids)?,
        positions: ids.iter().map(|&i| map.dims().pos(i)).collect(),
    })
}

/// Expands kept outputs back to the full grid; pruned positions receive a
/// bit-exact copy of their reference's vector.
pub fn restore_tokens<T: Real>(out: &TokenSequence<T>, map: &PruneMap) -> Result<TokenGrid<T>> {
    let dims = map.dims();
    ensure!(
        out.len() == map.kept_count() && out.values.rows() == out.len(),
        DimensionMismatch,
        "{} outputs for {} kept tokens",
        out.values.rows(),
        map.kept_count()
    );
    let mut slot = vec![usize::MAX; dims.total()];
    for (k, (id, pos)) in map.kept_ids().zip(&out.positions).enumerate() {
        ensure!(
            dims.linear(*pos) == id,
            InvalidInput,
            "output {k} is at {pos:?}, expected kept token {id}"
        );
        slot[id] = k;
    }
    let mut values = Matrix::with_cols(out.values.cols());
    for id in 0..dims.total() {
        values.push_row(out.values.row(slot[map.reference(id)]))?;
    }
    TokenGrid::new(dims, values)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PruneStats {
    pub total_tokens: usize,
    pub kept_tokens: usize,
    pub prune_ratio: f64,
    pub per_frame_kept: Vec<usize>,
    pub tokens_per_frame: usize,
}

pub fn prune_stats(map: &PruneMap) -> PruneStats {
    let dims = map.dims();
    let per_frame_kept = (0..dims.frames)
        .map(|t| dims.frame_range(t, t + 1).filter(|&i| map.is_kept(i)).count())
        .collect();
    let kept = map.kept_count();
    PruneStats {
        total_tokens: dims.total(),
        kept_tokens: kept,
        prune_ratio: if dims.total() == 0 {
            0.0
        } else {
            1.0 - kept as f64 / dims.total() as f64
        },
        per_frame_kept,
        tokens_per_frame: dims.sites(),
    }
}

impl PruneStats {
    /// `frame,total,kept,ratio` with one row per frame; `ratio` is the pruned
    /// fraction of that frame.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "frame,total,kept,ratio")?;
        for (t, &k) in self.per_frame_kept.iter().enumerate() {
            let total = self.tokens_per_frame;
            let ratio = if total == 0 { 0.0 } else { 1.0 - k as f64 / total as f64 };
            writeln!(w, "{t},{total},{k},{ratio}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_io::{generate_synthetic, MotionKind, SynthConfig};
    use crate::numerics::Matrix;
    use proptest::prelude::*;

    /// One site, `frames.len()` frames, patch values given per frame.
    fn single_site(frames: &[Vec<f32>]) -> LatentVideo {
        let data = frames.concat();
        let c = frames[0].len() / 4;
        LatentVideo::new(frames.len(), c, 2, 2, 2, data).unwrap()
    }

    fn patch(vals: &[f32]) -> LatentPatch {
        LatentPatch { t: 0, x: 0, y: 0, values: vals.to_vec() }
    }

    /// The 6-frame, single-site pattern: frames 1, 2 and 4 pruned.
    fn fig2_mask() -> FlagGrid {
        let dims = GridDims::new(6, 1, 1);
        FlagGrid::from_flags(dims, vec![false, true, true, false, true, false]).unwrap()
    }

    #[test]
    fn distance_examples() {
        let a = patch(&[0.1, 0.2]);
        let b = patch(&[0.15, 0.25]);
        assert_eq!(l1_patch_distance(&a, &a, L1Norm::Sum).unwrap(), 0.0);
        let direct = (0.1f32 as f64 - 0.15f32 as f64).abs() + (0.2f32 as f64 - 0.25f32 as f64).abs();
        let d = l1_patch_distance(&a, &b, L1Norm::Sum).unwrap();
        assert_eq!(d, direct);
        assert!((d - 0.1).abs() < 1e-7);
        assert_eq!(l1_patch_distance(&a, &b, L1Norm::Mean).unwrap(), direct / 2.0);
        assert_eq!(d, l1_patch_distance(&b, &a, L1Norm::Sum).unwrap());
        assert!(l1_patch_distance(&a, &patch(&[0.0]), L1Norm::Sum).is_err());
    }

    #[test]
    fn t_star_table() {
        let want = [(1, 0), (2, 0), (3, 2), (4, 3), (5, 3), (6, 5), (7, 6)];
        for (t, s) in want {
            assert_eq!(t_star(t, 3).unwrap(), s, "t={t}");
        }
        assert!(t_star(0, 3).is_err());
    }

    #[test]
    fn exact_duplicates_are_all_candidates() {
        let cfg = SynthConfig { redundancy: 1.0, ..SynthConfig::default() };
        let v = generate_synthetic(&cfg).unwrap();
        let c = candidate_mask(&v, &PruneConfig::default());
        assert_eq!(c.count(), v.grid().total() - v.grid().sites());
        assert!(c.positions().all(|p| p.t > 0));
        let n = noise_aware_mask(&v, &c, &PruneConfig::default()).unwrap();
        assert_eq!(n, c);
    }

    #[test]
    fn iid_noise_has_no_candidates() {
        let cfg = SynthConfig {
            motion: MotionKind::PerFrameNoise,
            redundancy: 0.0,
            noise_scale: 1.0,
            seed: 3,
            ..SynthConfig::default()
        };
        let v = generate_synthetic(&cfg).unwrap();
        assert_eq!(candidate_mask(&v, &PruneConfig::default()).count(), 0);
    }

    #[test]
    fn single_duplicated_frame() {
        let cfg = SynthConfig { redundancy: 0.0, frames: 4, seed: 11, ..SynthConfig::default() };
        let v = generate_synthetic(&cfg).unwrap();
        let mut data = v.data().to_vec();
        let frame = data.len() / 4;
        let (head, tail) = data.split_at_mut(2 * frame);
        tail[..frame].copy_from_slice(&head[frame..]);
        let v = LatentVideo::new(4, v.channels(), v.height(), v.width(), 2, data).unwrap();
        let c = candidate_mask(&v, &PruneConfig::default());
        assert_eq!(c.count(), v.grid().sites());
        assert!(c.positions().all(|p| p.t == 2));
    }

    #[test]
    fn noise_aware_rejects_far_substitute() {
        let base: Vec<f32> = (0..16).map(|i| i as f32 * 0.37).collect();
        let shifted = |d: f32| base.iter().map(|v| v + d).collect::<Vec<f32>>();
        // P3 = base, P4 = base + 2, P5 = P4 + 0.01; frames 0..2 unrelated
        let frames = vec![shifted(-9.0), shifted(-6.0), shifted(-3.0), shifted(0.0), shifted(2.0), shifted(2.01)];
        let v = single_site(&frames);
        let cfg = PruneConfig::default();
        let c = candidate_mask(&v, &cfg);
        assert!(c.get(TokenPos::new(5, 0, 0)));
        assert_eq!(c.count(), 1);
        let n = noise_aware_mask(&v, &c, &cfg).unwrap();
        assert_eq!(n.count(), 0);

        let lax = PruneConfig { theta2: f64::INFINITY, ..cfg };
        assert_eq!(noise_aware_mask(&v, &c, &lax).unwrap(), c);
    }

    #[test]
    fn zero_thresholds_prune_nothing() {
        let v = generate_synthetic(&SynthConfig { redundancy: 1.0, ..SynthConfig::default() }).unwrap();
        for cfg in [
            PruneConfig { theta: 0.0, ..PruneConfig::default() },
            PruneConfig { theta2: 0.0, theta: 10.0, ..PruneConfig::default() },
        ] {
            assert_eq!(compute_prune_map(&v, &cfg).unwrap().pruned_count(), 0);
        }
    }

    #[test]
    fn config_validation() {
        assert!(PruneConfig { theta: -1.0, ..PruneConfig::default() }.validate().is_err());
        assert!(PruneConfig { theta2: f64::NAN, ..PruneConfig::default() }.validate().is_err());
        assert!(PruneConfig { chunk_size: 0, ..PruneConfig::default() }.validate().is_err());
        assert!(PruneConfig { anchor_first_frame: false, ..PruneConfig::default() }.validate().is_err());
    }

    #[test]
    fn fig2_references_and_multiplicities() {
        let map = resolve_references(&fig2_mask()).unwrap();
        let refs: Vec<usize> = (0..6).map(|i| map.reference(i)).collect();
        assert_eq!(refs, [0, 0, 0, 3, 3, 5]);
        assert_eq!(map.multiplicity(0), 3);
        assert_eq!(map.multiplicity(3), 2);
        assert_eq!(map.multiplicity(5), 1);
        assert_eq!(map.coverage_lists(), vec![(0, vec![0, 1, 2]), (3, vec![3, 4]), (5, vec![5])]);
        let stats = prune_stats(&map);
        assert_eq!(stats.prune_ratio, 0.5);
        assert_eq!(stats.kept_tokens, 3);
    }

    #[test]
    fn chain_collapses_to_anchor() {
        let dims = GridDims::new(5, 1, 1);
        let mask = FlagGrid::from_flags(dims, vec![false, true, true, true, true]).unwrap();
        let map = resolve_references(&mask).unwrap();
        assert!((1..5).all(|i| map.reference(i) == 0));
        assert_eq!(map.multiplicity(0), 5);
    }

    #[test]
    fn all_kept_is_identity() {
        let dims = GridDims::new(3, 2, 2);
        let map = resolve_references(&FlagGrid::filled(dims, false)).unwrap();
        assert_eq!(map, PruneMap::all_kept(dims));
        assert_eq!(prune_stats(&map).prune_ratio, 0.0);
        let grid = TokenGrid::new(dims, Matrix::new(12, 1, (0..12).map(f64::from).collect()).unwrap()).unwrap();
        let seq = prune_tokens(&grid, &map).unwrap();
        assert_eq!(seq.values, grid.values);
        assert_eq!(restore_tokens(&seq, &map).unwrap(), grid);
    }

    #[test]
    fn anchor_frame_cannot_be_pruned() {
        let dims = GridDims::new(2, 1, 1);
        let mask = FlagGrid::from_flags(dims, vec![true, false]).unwrap();
        assert!(resolve_references(&mask).is_err());
    }

    #[test]
    fn fig2_prune_and_restore() {
        let map = resolve_references(&fig2_mask()).unwrap();
        let grid = TokenGrid::new(
            map.dims(),
            Matrix::new(6, 2, (0..12).map(f64::from).collect()).unwrap(),
        )
        .unwrap();
        let seq = prune_tokens(&grid, &map).unwrap();
        let frames: Vec<usize> = seq.positions.iter().map(|p| p.t).collect();
        assert_eq!(frames, [0, 3, 5]);

        let outputs = TokenSequence {
            values: Matrix::from_rows(&[[1.0, 1.5], [4.0, 4.5], [6.0, 6.5]]).unwrap(),
            positions: seq.positions.clone(),
        };
        let full = restore_tokens(&outputs, &map).unwrap();
        let col: Vec<f64> = full.values.iter_rows().map(|r| r[0]).collect();
        assert_eq!(col, [1.0, 1.0, 1.0, 4.0, 4.0, 6.0]);

        let short = TokenSequence { values: outputs.values.select_rows(&[0, 1]).unwrap(), positions: outputs.positions[..2].to_vec() };
        assert!(matches!(restore_tokens(&short, &map), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn stats_match_construction_bookkeeping() {
        let cfg = SynthConfig { frames: 6, redundancy: 0.31, seed: 21, ..SynthConfig::default() };
        let v = generate_synthetic(&cfg).unwrap();
        let pc = PruneConfig::default();
        let map = compute_prune_map(&v, &pc).unwrap();
        let g = v.grid();
        // a duplicate survives the second test iff every frame in (t*, t] at its
        // site is a duplicate, i.e. its patch equals the one at t*
        let mut expected = 0;
        for id in g.frame_range(1, g.frames) {
            let p = g.pos(id);
            let ts = t_star(p.t, pc.chunk_size).unwrap();
            let chain = (ts + 1..=p.t).all(|t| {
                v.patch_at(t, p.x, p.y).unwrap() .values == v.patch_at(t - 1, p.x, p.y).unwrap().values
            });
            if chain {
                expected += 1;
            }
        }
        let stats = prune_stats(&map);
        assert_eq!(stats.total_tokens - stats.kept_tokens, expected);
        assert_eq!(stats.per_frame_kept.iter().sum::<usize>(), stats.kept_tokens);
        assert!((stats.prune_ratio - (1.0 - stats.kept_tokens as f64 / stats.total_tokens as f64)).abs() == 0.0);
    }

    #[test]
    fn stats_csv() {
        let map = resolve_references(&fig2_mask()).unwrap();
        let mut buf = Vec::new();
        prune_stats(&map).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "frame,total,kept,ratio\n0,1,1,0\n1,1,0,1\n2,1,0,1\n3,1,1,0\n4,1,0,1\n5,1,1,0\n");
    }

    #[test]
    fn from_parts_rejects_bad_references() {
        let dims = GridDims::new(2, 2, 1);
        // pruned token referencing another site
        assert!(PruneMap::from_parts(dims, vec![true, true, false, true], vec![0, 1, 1, 3]).is_err());
        // pruned token referencing a pruned token
        let dims = GridDims::new(3, 1, 1);
        assert!(PruneMap::from_parts(dims, vec![true, false, false], vec![0, 0, 1]).is_err());
        assert!(PruneMap::from_parts(dims, vec![true, false, false], vec![0, 0, 0]).is_ok());
    }

    fn arb_video() -> impl Strategy<Value = LatentVideo> {
        (2usize..6, 1usize..3, 1usize..3).prop_flat_map(|(t, gx, gy)| {
            let n = t * (2 * gy) * (2 * gx);
            prop::collection::vec(prop_oneof![Just(0.0f32), Just(0.125), Just(0.25), Just(1.0)], n)
                .prop_map(move |data| LatentVideo::new(t, 1, 2 * gy, 2 * gx, 2, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pruned_set_grows_with_theta(v in arb_video(), a in 0.0f64..0.6, b in 0.0f64..0.6) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let m_lo = compute_prune_map(&v, &PruneConfig { theta: lo, ..PruneConfig::default() }).unwrap();
            let m_hi = compute_prune_map(&v, &PruneConfig { theta: hi, ..PruneConfig::default() }).unwrap();
            for id in 0..v.grid().total() {
                prop_assert!(m_lo.is_kept(id) || !m_hi.is_kept(id));
            }
        }

        #[test]
        fn tiny_theta_prunes_only_exact_copies(v in arb_video()) {
            let cfg = PruneConfig { theta: 1e-300, theta2: f64::INFINITY, ..PruneConfig::default() };
            let map = compute_prune_map(&v, &cfg).unwrap();
            let g = v.grid();
            for id in 0..g.total() {
                if !map.is_kept(id) {
                    let p = g.pos(id);
                    prop_assert_eq!(v.patch_at(p.t, p.x, p.y).unwrap().values, v.patch_at(p.t - 1, p.x, p.y).unwrap().values);
                }
            }
        }

        #[test]
        fn map_invariants_hold(v in arb_video(), theta in 0.0f64..0.6, theta2 in 0.0f64..0.6, chunk in 1usize..4) {
            let cfg = PruneConfig { theta, theta2, chunk_size: chunk, ..PruneConfig::default() };
            let map = compute_prune_map(&v, &cfg).unwrap();
            let g = map.dims();
            let mut total = 0;
            for id in 0..g.total() {
                let p = g.pos(id);
                if p.t == 0 {
                    prop_assert!(map.is_kept(id));
                }
                if map.is_kept(id) {
                    total += map.multiplicity(id);
                } else {
                    let r = g.pos(map.reference(id));
                    prop_assert!(r.t < p.t && r.same_site(&p));
                    prop_assert!(map.is_kept(map.reference(id)));
                }
            }
            prop_assert_eq!(total, g.total());
            let rebuilt = PruneMap::from_parts(g, (0..g.total()).map(|i| map.is_kept(i)).collect(), (0..g.total()).map(|i| map.reference(i)).collect()).unwrap();
            prop_assert_eq!(rebuilt, map);
        }

        #[test]
        fn restore_inverts_prune_on_exact_copies(v in arb_video()) {
            let cfg = PruneConfig { theta: 1e-300, theta2: 1e-300, ..PruneConfig::default() };
            let map = compute_prune_map(&v, &cfg).unwrap();
            let grid = v.to_tokens::<f64>();
            let seq = prune_tokens(&grid, &map).unwrap();
            prop_assert_eq!(seq.len(), prune_stats(&map).kept_tokens);
            prop_assert_eq!(restore_tokens(&seq, &map).unwrap(), grid);
        }
    }
}
