//! Softmax self-attention over RoPE'd queries and keys: the full-sequence
//! reference and two forms of attention recovery over kept tokens.
//!
//! Recovery treats each kept key as standing for every position in its
//! coverage set: the pre-RoPE key is rotated to each covered position, and
//! the value is reused unrotated. The materialized form builds those copies
//! explicitly and calls the reference; the aggregated form keeps one value
//! per kept key and sums the exponentiated scores of its copies.

use std::collections::HashSet;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rope::{rotate_rows, AngleCache, RopeParams};
use crate::error::{ensure, Error, Result};
use crate::grid::TokenPos;
use crate::numerics::{dot, Matrix, Real};

/// Which keys a query may see.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CausalMask {
    /// Every key is visible.
    #[default]
    None,
    /// Keys at frames up to the query's frame.
    Frame,
    /// Keys in the query's chunk or earlier chunks of this many frames:
    /// bidirectional inside a chunk, causal across chunks.
    Chunk(usize),
}

impl CausalMask {
    #[inline]
    pub fn visible(&self, query: TokenPos, key: TokenPos) -> bool {
        match *self {
            CausalMask::None => true,
            CausalMask::Frame => key.t <= query.t,
            CausalMask::Chunk(s) => key.t / s <= query.t / s,
        }
    }
}

/// Query, key and value rows with their absolute positions. All three
/// matrices are `n_heads * head_dim` wide; keys are pre-RoPE.
#[derive(Clone, Copy, Debug)]
pub struct AttentionInputs<'a, T = f64> {
    pub queries: &'a Matrix<T>,
    pub query_pos: &'a [TokenPos],
    pub keys: &'a Matrix<T>,
    pub values: &'a Matrix<T>,
    pub key_pos: &'a [TokenPos],
    pub n_heads: usize,
}

impl<T: Real> AttentionInputs<'_, T> {
    fn validate(&self, rope: &RopeParams) -> Result<()> {
        rope.validate()?;
        let width = self.n_heads * rope.head_dim;
        ensure!(self.n_heads > 0, InvalidInput, "at least one head required");
        for (name, m) in [("queries", self.queries), ("keys", self.keys), ("values", self.values)] {
            ensure!(
                m.cols() == width,
                DimensionMismatch,
                "{name} have {} columns, expected {} heads x {}",
                m.cols(),
                self.n_heads,
                rope.head_dim
            );
        }
        ensure!(
            self.queries.rows() == self.query_pos.len(),
            DimensionMismatch,
            "{} queries with {} positions",
            self.queries.rows(),
            self.query_pos.len()
        );
        ensure!(
            self.keys.rows() == self.values.rows() && self.keys.rows() == self.key_pos.len(),
            DimensionMismatch,
            "{} keys, {} values, {} key positions",
            self.keys.rows(),
            self.values.rows(),
            self.key_pos.len()
        );
        Ok(())
    }
}

/// Positions a kept key stands for, its own position included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoverageSet {
    pub token: TokenPos,
    pub covers: Vec<TokenPos>,
}

impl CoverageSet {
    pub fn singleton(token: TokenPos) -> Self {
        Self {
            token,
            covers: vec![token],
        }
    }

    pub fn multiplicity(&self) -> usize {
        self.covers.len()
    }
}

/// Checks that `coverage[i]` describes key row `i` and that no position is
/// claimed twice.
pub fn validate_coverage(key_pos: &[TokenPos], coverage: &[CoverageSet]) -> Result<()> {
    if coverage.len() != key_pos.len() {
        return Err(Error::Coverage(format!(
            "{} coverage sets for {} keys",
            coverage.len(),
            key_pos.len()
        )));
    }
    let mut seen = HashSet::new();
    for (i, (set, &pos)) in coverage.iter().zip(key_pos).enumerate() {
        if set.token != pos {
            return Err(Error::Coverage(format!(
                "set {i} belongs to {:?} but key {i} sits at {pos:?}",
                set.token
            )));
        }
        if !set.covers.contains(&set.token) {
            return Err(Error::Coverage(format!("set {i} does not cover its own token")));
        }
        for &c in &set.covers {
            if !seen.insert(c) {
                return Err(Error::Coverage(format!("position {c:?} covered twice")));
            }
        }
    }
    Ok(())
}

/// Runs `f` for every output row; rows are independent, so the result does
/// not depend on the thread count.
fn fill_rows<T: Real>(out: &mut Matrix<T>, f: impl Fn(usize, &mut [T]) + Sync + Send) {
    let cols = out.cols();
    if cols == 0 {
        return;
    }
    let data = out.data_mut();
    if rayon::current_num_threads() > 1 {
        data.par_chunks_mut(cols).enumerate().for_each(|(i, r)| f(i, r));
    } else {
        data.chunks_mut(cols).enumerate().for_each(|(i, r)| f(i, r));
    }
}

/// Exact softmax attention over every visible key.
pub fn full_attention_oracle<T: Real>(
    inputs: &AttentionInputs<'_, T>,
    rope: &RopeParams,
    mask: CausalMask,
) -> Result<Matrix<T>> {
    inputs.validate(rope)?;
    let mut angles = AngleCache::new(*rope);
    let q = rotate_rows(inputs.queries, inputs.query_pos, inputs.n_heads, &mut angles);
    let k = rotate_rows(inputs.keys, inputs.key_pos, inputs.n_heads, &mut angles);
    let visible = visible_lists(inputs.query_pos, inputs.key_pos, mask)?;
    let d = rope.head_dim;
    let scale = T::cast(1.0 / (d as f64).sqrt());
    let v = inputs.values;
    let mut out = Matrix::zeros(q.rows(), q.cols());
    fill_rows(&mut out, |i, row| {
        let keys = &visible[i];
        let mut w = vec![T::zero(); keys.len()];
        for h in 0..inputs.n_heads {
            let qh = &q.row(i)[h * d..(h + 1) * d];
            for (wj, &j) in w.iter_mut().zip(keys) {
                *wj = dot(qh, &k.row(j)[h * d..(h + 1) * d]) * scale;
            }
            let max = w.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for wj in w.iter_mut() {
                *wj = (*wj - max).exp();
                z = z + *wj;
            }
            let oh = &mut row[h * d..(h + 1) * d];
            for (&wj, &j) in w.iter().zip(keys) {
                let p = wj / z;
                for (o, &x) in oh.iter_mut().zip(&v.row(j)[h * d..(h + 1) * d]) {
                    *o = *o + p * x;
                }
            }
        }
    });
    Ok(out)
}

fn visible_lists(query_pos: &[TokenPos], key_pos: &[TokenPos], mask: CausalMask) -> Result<Vec<Vec<usize>>> {
    query_pos
        .iter()
        .map(|&qp| {
            let v: Vec<usize> = (0..key_pos.len()).filter(|&j| mask.visible(qp, key_pos[j])).collect();
            if v.is_empty() {
                Err(Error::InvalidInput(format!("query at {qp:?} sees no keys")))
            } else {
                Ok(v)
            }
        })
        .collect()
}

/// Every covered position becomes its own key/value row.
struct Expanded<T> {
    keys: Matrix<T>,
    values: Matrix<T>,
    positions: Vec<TokenPos>,
    owner: Vec<usize>,
}

fn expand<T: Real>(inputs: &AttentionInputs<'_, T>, coverage: &[CoverageSet]) -> Result<Expanded<T>> {
    validate_coverage(inputs.key_pos, coverage)?;
    let width = inputs.keys.cols();
    let mut ex = Expanded {
        keys: Matrix::with_cols(width),
        values: Matrix::with_cols(width),
        positions: Vec::new(),
        owner: Vec::new(),
    };
    for (i, set) in coverage.iter().enumerate() {
        for &c in &set.covers {
            ex.keys.push_row(inputs.keys.row(i))?;
            ex.values.push_row(inputs.values.row(i))?;
            ex.positions.push(c);
            ex.owner.push(i);
        }
    }
    Ok(ex)
}

/// Duplicates every kept key/value to each position it covers and runs the
/// reference on the expanded sequence.
pub fn recovered_attention_materialized<T: Real>(
    inputs: &AttentionInputs<'_, T>,
    coverage: &[CoverageSet],
    rope: &RopeParams,
    mask: CausalMask,
) -> Result<Matrix<T>> {
    inputs.validate(rope)?;
    let ex = expand(inputs, coverage)?;
    let expanded = AttentionInputs {
        keys: &ex.keys,
        values: &ex.values,
        key_pos: &ex.positions,
        ..*inputs
    };
    full_attention_oracle(&expanded, rope, mask)
}

/// RoPE'd copies of the kept keys, one row per covered position.
struct Copies<T> {
    keys: Matrix<T>,
    positions: Vec<TokenPos>,
    owner: Vec<usize>,
}

fn rotated_copies<T: Real>(
    inputs: &AttentionInputs<'_, T>,
    coverage: &[CoverageSet],
    angles: &mut AngleCache<T>,
) -> Result<Copies<T>> {
    validate_coverage(inputs.key_pos, coverage)?;
    let width = inputs.keys.cols();
    let total: usize = coverage.iter().map(CoverageSet::multiplicity).sum();
    let mut data = Vec::with_capacity(total * width);
    let mut positions = Vec::with_capacity(total);
    let mut owner = Vec::with_capacity(total);
    for (i, set) in coverage.iter().enumerate() {
        for &c in &set.covers {
            data.extend_from_slice(inputs.keys.row(i));
            positions.push(c);
            owner.push(i);
        }
    }
    let raw = Matrix::new(total, width, data)?;
    Ok(Copies {
        keys: rotate_rows(&raw, &positions, inputs.n_heads, angles),
        positions,
        owner,
    })
}

struct Aggregator<T> {
    q: Matrix<T>,
    copies: Copies<T>,
    visible: Vec<Vec<usize>>,
    head_dim: usize,
    scale: T,
}

impl<T: Real> Aggregator<T> {
    fn new(
        inputs: &AttentionInputs<'_, T>,
        coverage: &[CoverageSet],
        rope: &RopeParams,
        mask: CausalMask,
    ) -> Result<Self> {
        inputs.validate(rope)?;
        let mut angles = AngleCache::new(*rope);
        let copies = rotated_copies(inputs, coverage, &mut angles)?;
        let q = rotate_rows(inputs.queries, inputs.query_pos, inputs.n_heads, &mut angles);
        let visible = visible_lists(inputs.query_pos, &copies.positions, mask)?;
        Ok(Self {
            q,
            copies,
            visible,
            head_dim: rope.head_dim,
            scale: T::cast(1.0 / (rope.head_dim as f64).sqrt()),
        })
    }

    /// Fills `weights` with `(key, sum_c exp(s_ic - max))` over the visible
    /// copies `c` of each kept key `i`, in key order, and returns `max`.
    ///
    /// Copies are laid out owner by owner and visible lists are ascending, so
    /// one pass over the visible copies groups them by key.
    fn weights(&self, query: usize, head: usize, scores: &mut Vec<T>, weights: &mut Vec<(usize, T)>) -> T {
        let d = self.head_dim;
        let qh = &self.q.row(query)[head * d..(head + 1) * d];
        let copies = &self.visible[query];
        scores.clear();
        scores.extend(
            copies
                .iter()
                .map(|&c| dot(qh, &self.copies.keys.row(c)[head * d..(head + 1) * d]) * self.scale),
        );
        let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
        weights.clear();
        for (&c, &s) in copies.iter().zip(scores.iter()) {
            let k = self.copies.owner[c];
            let e = (s - max).exp();
            match weights.last_mut() {
                Some((owner, w)) if *owner == k => *w = *w + e,
                _ => weights.push((k, e)),
            }
        }
        max
    }
}

/// One value per kept key, weighted by the summed exponentials of that key's
/// rotated copies; equal to the materialized form up to rounding.
pub fn recovered_attention_aggregated<T: Real>(
    inputs: &AttentionInputs<'_, T>,
    coverage: &[CoverageSet],
    rope: &RopeParams,
    mask: CausalMask,
) -> Result<Matrix<T>> {
    let agg = Aggregator::new(inputs, coverage, rope, mask)?;
    let d = rope.head_dim;
    let v = inputs.values;
    let mut out = Matrix::zeros(inputs.queries.rows(), inputs.queries.cols());
    fill_rows(&mut out, |i, row| {
        let mut scores = Vec::new();
        let mut weights = Vec::new();
        for h in 0..inputs.n_heads {
            agg.weights(i, h, &mut scores, &mut weights);
            let z = weights.iter().fold(T::zero(), |z, &(_, w)| z + w);
            let oh = &mut row[h * d..(h + 1) * d];
            for &(k, w) in &weights {
                let p = w / z;
                for (o, &x) in oh.iter_mut().zip(&v.row(k)[h * d..(h + 1) * d]) {
                    *o = *o + p * x;
                }
            }
        }
    });
    Ok(out)
}

/// One pre-softmax score, for diffing the two recovery paths.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreRow {
    pub query: usize,
    pub head: usize,
    /// Key row (materialized: expanded copy; aggregated: kept key).
    pub key: usize,
    pub position: TokenPos,
    /// Materialized: `q.k / sqrt(d)` per copy. Aggregated: the log of the
    /// summed exponentials over that key's visible copies.
    pub score: f64,
}

/// Scaled dot-product scores of the materialized path, visible copies only.
pub fn materialized_scores(
    inputs: &AttentionInputs<'_, f64>,
    coverage: &[CoverageSet],
    rope: &RopeParams,
    mask: CausalMask,
) -> Result<Vec<ScoreRow>> {
    inputs.validate(rope)?;
    let ex = expand(inputs, coverage)?;
    let mut angles = AngleCache::new(*rope);
    let q = rotate_rows(inputs.queries, inputs.query_pos, inputs.n_heads, &mut angles);
    let k = rotate_rows(&ex.keys, &ex.positions, inputs.n_heads, &mut angles);
    let d = rope.head_dim;
    let scale = 1.0 / (d as f64).sqrt();
    let mut rows = Vec::new();
    for i in 0..q.rows() {
        for h in 0..inputs.n_heads {
            for j in 0..k.rows() {
                if mask.visible(inputs.query_pos[i], ex.positions[j]) {
                    rows.push(ScoreRow {
                        query: i,
                        head: h,
                        key: j,
                        position: ex.positions[j],
                        score: dot(&q.row(i)[h * d..(h + 1) * d], &k.row(j)[h * d..(h + 1) * d]) * scale,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Owner key of every expanded copy, in materialized key order.
pub fn copy_owners(coverage: &[CoverageSet]) -> Vec<usize> {
    coverage
        .iter()
        .enumerate()
        .flat_map(|(i, s)| std::iter::repeat_n(i, s.covers.len()))
        .collect()
}

/// Per-key aggregated log-scores, from the same weights the aggregated
/// forward pass uses.
pub fn aggregated_scores(
    inputs: &AttentionInputs<'_, f64>,
    coverage: &[CoverageSet],
    rope: &RopeParams,
    mask: CausalMask,
) -> Result<Vec<ScoreRow>> {
    let agg = Aggregator::new(inputs, coverage, rope, mask)?;
    let mut rows = Vec::new();
    let mut scores = Vec::new();
    let mut weights = Vec::new();
    for i in 0..inputs.queries.rows() {
        for h in 0..inputs.n_heads {
            let max = agg.weights(i, h, &mut scores, &mut weights);
            for &(k, w) in &weights {
                rows.push(ScoreRow {
                    query: i,
                    head: h,
                    key: k,
                    position: inputs.key_pos[k],
                    score: max + w.ln(),
                });
            }
        }
    }
    Ok(rows)
}

/// `query,head,key,t,x,y,score`, LF line endings.
pub fn write_scores_csv<W: Write>(mut w: W, rows: &[ScoreRow]) -> io::Result<()> {
    writeln!(w, "query,head,key,t,x,y,score")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{:e}",
            r.query, r.head, r.key, r.position.t, r.position.x, r.position.y, r.score
        )?;
    }
    Ok(())
}
