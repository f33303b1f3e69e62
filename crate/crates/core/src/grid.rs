//! Token-grid geometry shared by pruning, attention and the model.
//!
//! Tokens are addressed by `(t, x, y)` where `x` indexes columns of the patch
//! grid (along the latent width) and `y` indexes rows. Linear ids follow
//! raster order: `(t * gy + y) * gx + x`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{Matrix, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub frames: usize,
    pub gx: usize,
    pub gy: usize,
}

impl GridDims {
    pub fn new(frames: usize, gx: usize, gy: usize) -> Self {
        Self { frames, gx, gy }
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.gx * self.gy
    }

    #[inline]
    pub fn total(&self) -> usize {
        self.frames * self.sites()
    }

    #[inline]
    pub fn linear(&self, p: TokenPos) -> usize {
        (p.t * self.gy + p.y) * self.gx + p.x
    }

    #[inline]
    pub fn pos(&self, id: usize) -> TokenPos {
        let sites = self.sites();
        let t = id / sites;
        let rem = id % sites;
        TokenPos {
            t,
            x: rem % self.gx,
            y: rem / self.gx,
        }
    }

    pub fn contains(&self, p: TokenPos) -> bool {
        p.t < self.frames && p.x < self.gx && p.y < self.gy
    }

    /// Linear ids of every token in frames `[start, end)`, raster order.
    pub fn frame_range(&self, start: usize, end: usize) -> std::ops::Range<usize> {
        start * self.sites()..end.min(self.frames) * self.sites()
    }
}

/// Absolute position of a token in the video grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenPos {
    pub t: usize,
    pub x: usize,
    pub y: usize,
}

impl TokenPos {
    pub const fn new(t: usize, x: usize, y: usize) -> Self {
        Self { t, x, y }
    }

    #[inline]
    pub fn same_site(&self, other: &TokenPos) -> bool {
        self.x == other.x && self.y == other.y
    }
}

/// One flag per token, raster order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlagGrid {
    dims: GridDims,
    flags: Vec<bool>,
}

impl FlagGrid {
    pub fn filled(dims: GridDims, value: bool) -> Self {
        Self {
            dims,
            flags: vec![value; dims.total()],
        }
    }

    pub fn from_flags(dims: GridDims, flags: Vec<bool>) -> Result<Self> {
        ensure!(
            flags.len() == dims.total(),
            DimensionMismatch,
            "{} flags for a grid of {} tokens",
            flags.len(),
            dims.total()
        );
        Ok(Self { dims, flags })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    #[inline]
    pub fn get(&self, p: TokenPos) -> bool {
        self.flags[self.dims.linear(p)]
    }

    #[inline]
    pub fn set(&mut self, p: TokenPos, v: bool) {
        let i = self.dims.linear(p);
        self.flags[i] = v;
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Positions whose flag is set, raster order.
    pub fn positions(&self) -> impl Iterator<Item = TokenPos> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| self.dims.pos(i))
    }
}

/// A full grid of token vectors, one row per linear id.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid<T = f64> {
    pub dims: GridDims,
    pub values: Matrix<T>,
}

impl<T: Real> TokenGrid<T> {
    pub fn new(dims: GridDims, values: Matrix<T>) -> Result<Self> {
        ensure!(
            values.rows() == dims.total(),
            DimensionMismatch,
            "{} rows for a grid of {} tokens",
            values.rows(),
            dims.total()
        );
        Ok(Self { dims, values })
    }

    pub fn token(&self, p: TokenPos) -> &[T] {
        self.values.row(self.dims.linear(p))
    }
}

/// Kept tokens in raster order, each tagged with its absolute position.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence<T = f64> {
    pub values: Matrix<T>,
    pub positions: Vec<TokenPos>,
}

impl<T: Real> TokenSequence<T> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_ids_round_trip() {
        let d = GridDims::new(3, 4, 2);
        for id in 0..d.total() {
            assert_eq!(d.linear(d.pos(id)), id);
        }
        assert_eq!(d.linear(TokenPos::new(1, 3, 0)), 11);
        assert_eq!(d.frame_range(1, 2), 8..16);
    }
}
