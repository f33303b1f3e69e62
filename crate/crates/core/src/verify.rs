//! Self-check suites over every stage, with optional fault injection for
//! negative controls. Also hosts the seeded attention instances the suites,
//! tests and acceptance runs share.

use serde::Serialize;

use crate::error::Result;
use crate::grid::{FlagGrid, GridDims, TokenPos};
use crate::latent_io::{generate_synthetic, LatentVideo, MotionKind, SynthConfig};
use crate::numerics::{dot, gaussian_matrix, Matrix, SeededRng};
use crate::pruning::{
    candidate_mask, compute_prune_map, l1_distance, noise_aware_mask, prune_tokens, resolve_references, restore_tokens,
    t_star, PruneConfig, PruneMap,
};
use crate::rope_attention::{
    full_attention_oracle, recovered_attention_aggregated, recovered_attention_materialized, rope_apply_with,
    AttentionInputs, CausalMask, CoverageSet, RopeParams,
};

/// Deliberate defects for checking that the suites can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Faults {
    /// Flip the sign of one term in the 2-D rotation.
    pub flip_rope_sign: bool,
    /// Skip the second (substitute-frame) pruning test.
    pub disable_noise_aware: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// How pruned tokens relate to their references in the full sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Perturbation {
    /// Bit-equal pre-RoPE key and value.
    Exact,
    /// Independent random key and value.
    Random,
}

/// A pruned attention problem together with the full sequence it stands for.
#[derive(Clone, Debug)]
pub struct AttentionInstance {
    pub dims: GridDims,
    pub map: PruneMap,
    pub n_heads: usize,
    pub rope: RopeParams,
    pub mask: CausalMask,
    /// One query per kept token.
    pub queries: Matrix,
    pub query_pos: Vec<TokenPos>,
    pub kept_keys: Matrix,
    pub kept_values: Matrix,
    pub kept_pos: Vec<TokenPos>,
    pub coverage: Vec<CoverageSet>,
    /// Every position, raster order.
    pub full_keys: Matrix,
    pub full_values: Matrix,
    pub full_pos: Vec<TokenPos>,
}

impl AttentionInstance {
    /// Builds the instance from a map and full-sequence keys/values; the
    /// kept rows are taken from the full ones.
    pub fn from_full(
        map: PruneMap,
        n_heads: usize,
        rope: RopeParams,
        mask: CausalMask,
        queries: Matrix,
        full_keys: Matrix,
        full_values: Matrix,
    ) -> Result<Self> {
        let dims = map.dims();
        let kept: Vec<usize> = map.kept_ids().collect();
        let kept_pos: Vec<TokenPos> = kept.iter().map(|&i| dims.pos(i)).collect();
        let coverage = map
            .coverage_lists()
            .into_iter()
            .map(|(k, ids)| CoverageSet {
                token: dims.pos(k),
                covers: ids.into_iter().map(|i| dims.pos(i)).collect(),
            })
            .collect();
        Ok(Self {
            dims,
            n_heads,
            rope,
            mask,
            queries,
            query_pos: kept_pos.clone(),
            kept_keys: full_keys.select_rows(&kept)?,
            kept_values: full_values.select_rows(&kept)?,
            kept_pos,
            coverage,
            full_pos: (0..dims.total()).map(|i| dims.pos(i)).collect(),
            full_keys,
            full_values,
            map,
        })
    }

    pub fn kept_inputs(&self) -> AttentionInputs<'_> {
        AttentionInputs {
            queries: &self.queries,
            query_pos: &self.query_pos,
            keys: &self.kept_keys,
            values: &self.kept_values,
            key_pos: &self.kept_pos,
            n_heads: self.n_heads,
        }
    }

    pub fn full_inputs(&self) -> AttentionInputs<'_> {
        AttentionInputs {
            keys: &self.full_keys,
            values: &self.full_values,
            key_pos: &self.full_pos,
            ..self.kept_inputs()
        }
    }

    pub fn oracle(&self) -> Result<Matrix> {
        full_attention_oracle(&self.full_inputs(), &self.rope, self.mask)
    }

    pub fn materialized(&self) -> Result<Matrix> {
        recovered_attention_materialized(&self.kept_inputs(), &self.coverage, &self.rope, self.mask)
    }

    pub fn aggregated(&self) -> Result<Matrix> {
        recovered_attention_aggregated(&self.kept_inputs(), &self.coverage, &self.rope, self.mask)
    }
}

/// A random instance with at most 24 tokens and 4 heads.
pub fn random_instance(seed: u64, perturbation: Perturbation) -> Result<AttentionInstance> {
    let mut rng = SeededRng::new(seed);
    let dims = GridDims::new(2 + rng.next_below(5), 1 + rng.next_below(2), 1 + rng.next_below(2));
    let n_heads = 1 + rng.next_below(4);
    let head_dim = [2, 4, 8][rng.next_below(3)];
    let mask = [CausalMask::None, CausalMask::Frame, CausalMask::Chunk(3)][rng.next_below(3)];
    let mut pruned = FlagGrid::filled(dims, false);
    for id in dims.frame_range(1, dims.frames) {
        if rng.next_f64() < 0.45 {
            pruned.set(dims.pos(id), true);
        }
    }
    let map = resolve_references(&pruned)?;
    let width = n_heads * head_dim;
    let mut keys = gaussian_matrix(&mut rng, dims.total(), width, 1.0);
    let mut values = gaussian_matrix(&mut rng, dims.total(), width, 1.0);
    if perturbation == Perturbation::Exact {
        for id in 0..dims.total() {
            let r = map.reference(id);
            if r != id {
                let (k, v) = (keys.row(r).to_vec(), values.row(r).to_vec());
                keys.row_mut(id).copy_from_slice(&k);
                values.row_mut(id).copy_from_slice(&v);
            }
        }
    }
    let queries = gaussian_matrix(&mut rng, map.kept_count(), width, 1.0);
    AttentionInstance::from_full(map, n_heads, RopeParams::new(head_dim)?, mask, queries, keys, values)
}

/// The six-token, single-site layout with frames 1 and 2 resolving to 0 and
/// frame 4 to 3. Frame 1's key and value are moved `eps` away from frame 0's
/// along unit directions; every other pruned token is exact.
pub fn fig2_instance(seed: u64, eps: f64) -> Result<AttentionInstance> {
    let dims = GridDims::new(6, 1, 1);
    let pruned = FlagGrid::from_flags(dims, vec![false, true, true, false, true, false])?;
    let map = resolve_references(&pruned)?;
    let (n_heads, head_dim) = (2, 4);
    let width = n_heads * head_dim;
    let mut rng = SeededRng::new(seed);
    let mut keys: Matrix = gaussian_matrix(&mut rng, 6, width, 1.0);
    let mut values: Matrix = gaussian_matrix(&mut rng, 6, width, 1.0);
    for id in [1, 2, 4] {
        let r = map.reference(id);
        let (k, v) = (keys.row(r).to_vec(), values.row(r).to_vec());
        keys.row_mut(id).copy_from_slice(&k);
        values.row_mut(id).copy_from_slice(&v);
    }
    for m in [&mut keys, &mut values] {
        let u = unit(&mut rng, width);
        for (x, du) in m.row_mut(1).iter_mut().zip(&u) {
            *x += eps * du;
        }
    }
    let queries = gaussian_matrix(&mut rng, 3, width, 1.0);
    AttentionInstance::from_full(map, n_heads, RopeParams::new(head_dim)?, CausalMask::None, queries, keys, values)
}

fn unit(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    let u: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
    let norm = dot(&u, &u).sqrt();
    u.into_iter().map(|v| v / norm).collect()
}

/// Recovery error against the full oracle for each `eps`, largest first.
pub fn error_ladder(seed: u64, eps: &[f64]) -> Result<Vec<f64>> {
    eps.iter()
        .map(|&e| {
            let inst = fig2_instance(seed, e)?;
            inst.materialized()?.max_abs_diff(&inst.oracle()?)
        })
        .collect()
}

/// `t*` for frames 1..=12 with three-frame chunks.
pub const T_STAR_TABLE: [(usize, usize); 12] = [
    (1, 0),
    (2, 0),
    (3, 2),
    (4, 3),
    (5, 3),
    (6, 5),
    (7, 6),
    (8, 6),
    (9, 8),
    (10, 9),
    (11, 9),
    (12, 11),
];

/// Worst `|<R(a)q, R(b)k> - <q, R(b-a)k>|` over `trials` random draws.
pub fn rope_relative_error(seed: u64, trials: usize, flip_sign: bool) -> Result<f64> {
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let d = 2 * (1 + rng.next_below(8));
        let p = RopeParams::new(d)?;
        let q: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
        let k: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
        let a = rng.next_below(17) as i64;
        let b = rng.next_below(17) as i64;
        let lhs = dot(&rope_apply_with(&q, a, &p, flip_sign)?, &rope_apply_with(&k, b, &p, flip_sign)?);
        let rhs = dot(&q, &rope_apply_with(&k, b - a, &p, flip_sign)?);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

fn report(name: &'static str, passed: bool, detail: String) -> SuiteReport {
    SuiteReport { name, passed, detail }
}

fn failed(name: &'static str, e: crate::Error) -> SuiteReport {
    report(name, false, format!("error: {e}"))
}

fn oracle_suite(seed: u64) -> Result<SuiteReport> {
    let mut worst = 0.0f64;
    for i in 0..50 {
        let inst = random_instance(seed.wrapping_add(i), Perturbation::Exact)?;
        let full = inst.oracle()?;
        worst = worst.max(inst.materialized()?.max_abs_diff(&full)?);
        worst = worst.max(inst.aggregated()?.max_abs_diff(&full)?);
    }
    Ok(report("oracle_equivalence", worst <= 1e-10, format!("max error {worst:.3e} over 50 instances")))
}

fn agreement_suite(seed: u64) -> Result<SuiteReport> {
    let mut worst = 0.0f64;
    for i in 0..100 {
        let p = if i < 50 { Perturbation::Exact } else { Perturbation::Random };
        let inst = random_instance(seed.wrapping_add(i % 50 + (i / 50) * 1000), p)?;
        worst = worst.max(inst.aggregated()?.max_abs_diff(&inst.materialized()?)?);
    }
    Ok(report(
        "aggregated_vs_materialized",
        worst <= 1e-10,
        format!("max difference {worst:.3e} over 100 instances"),
    ))
}

fn rope_suite(seed: u64, faults: Faults) -> Result<SuiteReport> {
    let worst = rope_relative_error(seed, 1000, faults.flip_rope_sign)?;
    Ok(report("rope_relative_position", worst <= 1e-10, format!("max error {worst:.3e} over 1000 draws")))
}

fn restoration_suite(seed: u64) -> Result<SuiteReport> {
    let mut ok = true;
    let mut checked = 0;
    for (i, rho) in [0.0, 0.31, 0.75, 1.0].into_iter().enumerate() {
        let v = generate_synthetic(&SynthConfig {
            redundancy: rho,
            motion: MotionKind::ExactDuplicates,
            seed: seed.wrapping_add(i as u64),
            ..SynthConfig::default()
        })?;
        let map = compute_prune_map(&v, &PruneConfig::default())?;
        let tokens = v.to_tokens::<f64>();
        let restored = restore_tokens(&prune_tokens(&tokens, &map)?, &map)?;
        ok &= restored == tokens && restored.values.rows() == v.grid().total();
        checked += map.pruned_count();
    }
    Ok(report("restoration_round_trip", ok, format!("{checked} pruned tokens restored")))
}

fn t_star_suite() -> Result<SuiteReport> {
    let mut bad = Vec::new();
    for (t, want) in T_STAR_TABLE {
        let got = t_star(t, 3)?;
        if got != want {
            bad.push(format!("t={t}: {got} != {want}"));
        }
    }
    Ok(report("t_star_table", bad.is_empty(), if bad.is_empty() { "12/12 frames".into() } else { bad.join("; ") }))
}

fn single_site(frames: &[Vec<f32>]) -> Result<LatentVideo> {
    LatentVideo::new(frames.len(), frames[0].len() / 4, 2, 2, 2, frames.concat())
}

fn noise_aware_suite(seed: u64, faults: Faults) -> Result<SuiteReport> {
    let cfg = PruneConfig::default();
    let mask = |v: &LatentVideo| -> Result<FlagGrid> {
        let c = candidate_mask(v, &cfg);
        if faults.disable_noise_aware {
            Ok(c)
        } else {
            noise_aware_mask(v, &c, &cfg)
        }
    };
    // frame 5 is a near copy of frame 4, but its substitute (frame 3) is far
    let base: Vec<f32> = (0..16).map(|i| i as f32 * 0.37).collect();
    let shift = |d: f32| base.iter().map(|v| v + d).collect::<Vec<f32>>();
    let far = single_site(&[shift(-9.0), shift(-6.0), shift(-3.0), shift(0.0), shift(2.0), shift(2.01)])?;
    let far_pruned = mask(&far)?.count();

    // every pruned token of a noisy video sits within theta2 of its substitute
    let v = generate_synthetic(&SynthConfig {
        motion: MotionKind::PerFrameNoise,
        noise_scale: 0.05,
        redundancy: 0.5,
        seed,
        ..SynthConfig::default()
    })?;
    let mut violations = 0;
    for p in mask(&v)?.positions() {
        let sub = v.patch_at(t_star(p.t, cfg.chunk_size)?, p.x, p.y)?;
        let own = v.patch_at(p.t, p.x, p.y)?;
        if !(l1_distance(&own.values, &sub.values, cfg.l1_norm)? < cfg.theta2) {
            violations += 1;
        }
    }
    Ok(report(
        "noise_aware",
        far_pruned == 0 && violations == 0,
        format!("far-substitute case pruned {far_pruned} (want 0); {violations} substitute violations"),
    ))
}

fn ladder_suite(seed: u64) -> Result<SuiteReport> {
    let errs = error_ladder(seed, &[1e-1, 1e-2, 1e-3])?;
    let ok = errs.windows(2).all(|w| w[1] < w[0]);
    Ok(report("error_ladder", ok, format!("errors {:.3e} > {:.3e} > {:.3e}", errs[0], errs[1], errs[2])))
}

/// Runs every suite; a suite that errors counts as failed.
pub fn run_suites(seed: u64, faults: Faults) -> Vec<SuiteReport> {
    let named: [(&'static str, Box<dyn Fn() -> Result<SuiteReport>>); 7] = [
        ("oracle_equivalence", Box::new(move || oracle_suite(seed))),
        ("aggregated_vs_materialized", Box::new(move || agreement_suite(seed))),
        ("rope_relative_position", Box::new(move || rope_suite(seed, faults))),
        ("restoration_round_trip", Box::new(move || restoration_suite(seed))),
        ("t_star_table", Box::new(t_star_suite)),
        ("noise_aware", Box::new(move || noise_aware_suite(seed, faults))),
        ("error_ladder", Box::new(move || ladder_suite(seed))),
    ];
    named
        .into_iter()
        .map(|(name, f)| f().unwrap_or_else(|e| failed(name, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stock_build_passes_everything() {
        for r in run_suites(7, Faults::default()) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn flipped_rotation_fails_rope_suite() {
        let reports = run_suites(7, Faults { flip_rope_sign: true, ..Faults::default() });
        let rope = reports.iter().find(|r| r.name == "rope_relative_position").unwrap();
        assert!(!rope.passed);
    }

    #[test]
    fn disabled_second_test_fails_noise_suite() {
        let reports = run_suites(7, Faults { disable_noise_aware: true, ..Faults::default() });
        let noise = reports.iter().find(|r| r.name == "noise_aware").unwrap();
        assert!(!noise.passed, "{}", noise.detail);
        assert!(reports.iter().filter(|r| r.name != "noise_aware").all(|r| r.passed));
    }

    #[test]
    fn instances_respect_size_limits() {
        for s in 0..50 {
            let inst = random_instance(s, Perturbation::Exact).unwrap();
            assert!(inst.dims.total() <= 24 && inst.n_heads <= 4);
            assert_eq!(inst.kept_keys.rows(), inst.map.kept_count());
        }
    }
}
