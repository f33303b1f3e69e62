use lifp_core::grid::TokenPos;
use lifp_core::rope_attention::{aggregated_scores, materialized_scores, CausalMask, CoverageSet};
use lifp_core::verify::{error_ladder, fig2_instance, random_instance, AttentionInstance, Perturbation};
use lifp_core::Matrix;

/// Rotation written as complex multiplication by `exp(i * pos * freq)`.
fn rotate(v: &[f64], pos: f64, base: f64) -> Vec<f64> {
    let d = v.len();
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let theta = pos / base.powf(2.0 * i as f64 / d as f64);
        let (re, im) = (v[2 * i], v[2 * i + 1]);
        out[2 * i] = re * theta.cos() - im * theta.sin();
        out[2 * i + 1] = re * theta.sin() + im * theta.cos();
    }
    out
}

fn visible(mask: CausalMask, q: TokenPos, k: TokenPos) -> bool {
    match mask {
        CausalMask::None => true,
        CausalMask::Frame => k.t <= q.t,
        CausalMask::Chunk(s) => k.t / s <= q.t / s,
    }
}

/// Naive softmax attention over the full sequence, one head at a time.
fn naive_full(inst: &AttentionInstance) -> Matrix {
    let d = inst.rope.head_dim;
    let nq = inst.queries.rows();
    let mut out = vec![0.0; nq * inst.n_heads * d];
    for i in 0..nq {
        let qp = inst.query_pos[i];
        for h in 0..inst.n_heads {
            let span = h * d..(h + 1) * d;
            let q = rotate(&inst.queries.row(i)[span.clone()], qp.t as f64, inst.rope.base);
            let mut scores = Vec::new();
            for j in 0..inst.full_pos.len() {
                if visible(inst.mask, qp, inst.full_pos[j]) {
                    let k = rotate(&inst.full_keys.row(j)[span.clone()], inst.full_pos[j].t as f64, inst.rope.base);
                    let s: f64 = q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt();
                    scores.push((j, s));
                }
            }
            let z: f64 = scores.iter().map(|(_, s)| s.exp()).sum();
            for (j, s) in scores {
                for e in 0..d {
                    out[(i * inst.n_heads + h) * d + e] += s.exp() / z * inst.full_values.get(j, h * d + e);
                }
            }
        }
    }
    Matrix::new(nq, inst.n_heads * d, out).unwrap()
}

#[test]
fn fig2_layout_is_exact() {
    let inst = fig2_instance(11, 0.0).unwrap();
    assert_eq!(inst.kept_pos.iter().map(|p| p.t).collect::<Vec<_>>(), vec![0, 3, 5]);
    assert_eq!(inst.coverage.iter().map(CoverageSet::multiplicity).collect::<Vec<_>>(), vec![3, 2, 1]);
    let naive = naive_full(&inst);
    assert!(inst.oracle().unwrap().max_abs_diff(&naive).unwrap() < 1e-12);
    assert!(inst.materialized().unwrap().max_abs_diff(&naive).unwrap() < 1e-12);
    assert!(inst.aggregated().unwrap().max_abs_diff(&naive).unwrap() < 1e-12);
}

#[test]
fn oracle_matches_naive_loop_on_random_instances() {
    for s in 0..50 {
        let inst = random_instance(500 + s, Perturbation::Random).unwrap();
        let err = inst.oracle().unwrap().max_abs_diff(&naive_full(&inst)).unwrap();
        assert!(err < 1e-12, "seed {s}: {err:e}");
    }
}

#[test]
fn exact_duplicates_recover_the_full_sequence() {
    for s in 0..50 {
        let inst = random_instance(s, Perturbation::Exact).unwrap();
        let naive = naive_full(&inst);
        assert!(inst.materialized().unwrap().max_abs_diff(&naive).unwrap() < 1e-10, "seed {s}");
        assert!(inst.aggregated().unwrap().max_abs_diff(&naive).unwrap() < 1e-10, "seed {s}");
    }
}

#[test]
fn both_recovery_forms_agree_without_duplicates() {
    for s in 0..50 {
        let inst = random_instance(2000 + s, Perturbation::Random).unwrap();
        let diff = inst.aggregated().unwrap().max_abs_diff(&inst.materialized().unwrap()).unwrap();
        assert!(diff < 1e-10, "seed {s}: {diff:e}");
    }
}

#[test]
fn aggregated_scores_sum_copy_exponentials() {
    let inst = fig2_instance(3, 0.0).unwrap();
    let mat = materialized_scores(&inst.kept_inputs(), &inst.coverage, &inst.rope, inst.mask).unwrap();
    let agg = aggregated_scores(&inst.kept_inputs(), &inst.coverage, &inst.rope, inst.mask).unwrap();
    // copy rows are laid out owner by owner: 3 copies of key 0, 2 of key 1, 1 of key 2
    let owner = |key: usize| match key {
        0..=2 => 0,
        3 | 4 => 1,
        _ => 2,
    };
    assert_eq!(agg.len(), 3 * 2 * 3);
    for a in &agg {
        let total: f64 = mat
            .iter()
            .filter(|m| m.query == a.query && m.head == a.head && owner(m.key) == a.key)
            .map(|m| m.score.exp())
            .sum();
        assert!((a.score.exp() - total).abs() < 1e-12 * total.max(1.0), "{a:?}");
    }
}

#[test]
fn error_shrinks_with_perturbation() {
    let errs = error_ladder(5, &[1e-1, 1e-2, 1e-3]).unwrap();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    assert!(errs[2] > 0.0);
    assert!(error_ladder(5, &[0.0]).unwrap()[0] < 1e-12);
}

#[test]
fn attention_rows_are_convex_combinations() {
    // with all values equal to one, every output entry is the weight sum
    let mut inst = random_instance(77, Perturbation::Random).unwrap();
    let ones = |m: &Matrix| Matrix::new(m.rows(), m.cols(), vec![1.0; m.rows() * m.cols()]).unwrap();
    inst.full_values = ones(&inst.full_values);
    inst.kept_values = ones(&inst.kept_values);
    for out in [inst.oracle().unwrap(), inst.aggregated().unwrap(), inst.materialized().unwrap()] {
        assert!(out.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }
}
