//! Rotary position embedding on interleaved pairs `(2i, 2i + 1)` with band
//! frequency `base^(-2i / head_dim)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::grid::TokenPos;
use crate::numerics::{Matrix, Real};

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

/// Which index of a token drives its rotation angle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionDomain {
    /// Frame index `t`; temporal duplicates at one site differ only here.
    #[default]
    Frame,
    /// Raster linear id over a `gx x gy` grid.
    Flattened { gx: usize, gy: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RopeParams {
    pub head_dim: usize,
    pub base: f64,
    pub domain: PositionDomain,
}

impl RopeParams {
    pub fn new(head_dim: usize) -> Result<Self> {
        let p = Self {
            head_dim,
            base: DEFAULT_ROPE_BASE,
            domain: PositionDomain::Frame,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.head_dim > 0 && self.head_dim % 2 == 0,
            InvalidInput,
            "head_dim {} must be positive and even",
            self.head_dim
        );
        ensure!(
            self.base.is_finite() && self.base > 0.0,
            InvalidInput,
            "base frequency {} must be positive",
            self.base
        );
        Ok(())
    }

    pub fn position_of(&self, p: TokenPos) -> i64 {
        match self.domain {
            PositionDomain::Frame => p.t as i64,
            PositionDomain::Flattened { gx, gy } => ((p.t * gy + p.y) * gx + p.x) as i64,
        }
    }

    /// `(cos, sin)` per frequency band at `position`.
    pub fn angles<T: Real>(&self, position: i64) -> Vec<(T, T)> {
        let d = self.head_dim as f64;
        (0..self.head_dim / 2)
            .map(|i| {
                let freq = self.base.powf(-2.0 * i as f64 / d);
                let a = position as f64 * freq;
                (T::cast(a.cos()), T::cast(a.sin()))
            })
            .collect()
    }
}

#[inline]
pub(crate) fn rotate_with<T: Real>(v: &mut [T], angles: &[(T, T)], flip_sign: bool) {
    for (pair, &(c, s)) in v.chunks_exact_mut(2).zip(angles) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = if flip_sign { a * c + b * s } else { a * c - b * s };
        pair[1] = a * s + b * c;
    }
}

pub fn rope_apply<T: Real>(vec: &[T], position: i64, params: &RopeParams) -> Result<Vec<T>> {
    rope_apply_with(vec, position, params, false)
}

pub(crate) fn rope_apply_with<T: Real>(
    vec: &[T],
    position: i64,
    params: &RopeParams,
    flip_sign: bool,
) -> Result<Vec<T>> {
    params.validate()?;
    ensure!(
        vec.len() == params.head_dim,
        DimensionMismatch,
        "vector of length {} for head_dim {}",
        vec.len(),
        params.head_dim
    );
    let mut out = vec.to_vec();
    rotate_with(&mut out, &params.angles(position), flip_sign);
    Ok(out)
}

/// Memoized angle tables keyed by position.
pub(crate) struct AngleCache<T> {
    params: RopeParams,
    tables: HashMap<i64, Vec<(T, T)>>,
}

impl<T: Real> AngleCache<T> {
    pub(crate) fn new(params: RopeParams) -> Self {
        Self {
            params,
            tables: HashMap::new(),
        }
    }

    pub(crate) fn get(&mut self, pos: TokenPos) -> &[(T, T)] {
        let key = self.params.position_of(pos);
        let params = self.params;
        self.tables.entry(key).or_insert_with(|| params.angles(key))
    }
}

/// Rotates each head slice of every row at that row's position.
pub(crate) fn rotate_rows<T: Real>(
    m: &Matrix<T>,
    positions: &[TokenPos],
    n_heads: usize,
    angles: &mut AngleCache<T>,
) -> Matrix<T> {
    let mut out = m.clone();
    let d = m.cols() / n_heads;
    for (r, &pos) in positions.iter().enumerate() {
        let table = angles.get(pos);
        for head in out.row_mut(r).chunks_exact_mut(d) {
            rotate_with(head, table, false);
        }
    }
    out
}
