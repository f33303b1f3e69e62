//! Compressed key/value history of past chunks.
//!
//! Only kept tokens are stored. Each stored token carries the list of
//! positions it stands for; across the cache those lists partition every
//! position of every appended chunk.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::attention::CoverageSet;
use crate::error::{ensure, Error, Result};
use crate::grid::{GridDims, TokenPos};
use crate::numerics::{Matrix, Real};
use crate::pruning::PruneMap;

/// One chunk worth of cache entries. `coverage` may name tokens already in
/// the cache (extending what they stand for) as well as the new rows.
#[derive(Clone, Debug)]
pub struct CacheChunk<T = f64> {
    pub keys: Matrix<T>,
    pub values: Matrix<T>,
    pub positions: Vec<TokenPos>,
    pub coverage: Vec<CoverageSet>,
}

#[derive(Clone, Debug)]
pub struct KvCache<T = f64> {
    dims: GridDims,
    chunk_size: usize,
    keys: Matrix<T>,
    values: Matrix<T>,
    positions: Vec<TokenPos>,
    coverage: Vec<Vec<TokenPos>>,
    /// Number of cached tokens after each appended chunk.
    chunk_ends: Vec<usize>,
}

impl<T: Real> KvCache<T> {
    pub fn new(dims: GridDims, chunk_size: usize, width: usize) -> Self {
        Self {
            dims,
            chunk_size: chunk_size.max(1),
            keys: Matrix::with_cols(width),
            values: Matrix::with_cols(width),
            positions: Vec::new(),
            coverage: Vec::new(),
            chunk_ends: Vec::new(),
        }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn keys(&self) -> &Matrix<T> {
        &self.keys
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn positions(&self) -> &[TokenPos] {
        &self.positions
    }

    pub fn chunks(&self) -> usize {
        self.chunk_ends.len()
    }

    /// First frame not yet in the cache.
    pub fn next_frame(&self) -> usize {
        (self.chunks() * self.chunk_size).min(self.dims.frames)
    }

    pub fn coverage(&self, i: usize) -> &[TokenPos] {
        &self.coverage[i]
    }

    pub fn coverage_sets(&self) -> Vec<CoverageSet> {
        self.positions
            .iter()
            .zip(&self.coverage)
            .map(|(&token, covers)| CoverageSet {
                token,
                covers: covers.clone(),
            })
            .collect()
    }

    pub fn covered_positions(&self) -> usize {
        self.coverage.iter().map(Vec::len).sum()
    }

    /// Nearest cached token at `site`'s `(x, y)` with frame below `before`.
    pub fn nearest_at_site(&self, site: TokenPos, before: usize) -> Option<usize> {
        (0..self.len())
            .filter(|&i| self.positions[i].same_site(&site) && self.positions[i].t < before)
            .max_by_key(|&i| self.positions[i].t)
    }

    pub fn index_of(&self, pos: TokenPos) -> Option<usize> {
        self.positions.iter().position(|&p| p == pos)
    }

    /// Appends the next chunk of frames. The chunk's coverage must account
    /// for every position in those frames exactly once.
    pub fn append(&mut self, chunk: CacheChunk<T>) -> Result<()> {
        let start = self.next_frame();
        let end = (start + self.chunk_size).min(self.dims.frames);
        ensure!(start < end, InvalidInput, "cache already holds all {} frames", self.dims.frames);
        ensure!(
            chunk.keys.rows() == chunk.positions.len() && chunk.values.rows() == chunk.positions.len(),
            DimensionMismatch,
            "{} keys, {} values, {} positions",
            chunk.keys.rows(),
            chunk.values.rows(),
            chunk.positions.len()
        );
        let in_chunk = |p: &TokenPos| p.t >= start && p.t < end && self.dims.contains(*p);
        let new_tokens: HashSet<TokenPos> = chunk.positions.iter().copied().collect();
        ensure!(
            new_tokens.len() == chunk.positions.len() && chunk.positions.iter().all(in_chunk),
            InvalidInput,
            "new cache rows must be distinct positions in frames {start}..{end}"
        );

        let mut claimed = HashSet::new();
        let mut extend: Vec<(usize, Vec<TokenPos>)> = Vec::new();
        let mut fresh: Vec<Option<Vec<TokenPos>>> = vec![None; chunk.positions.len()];
        for set in &chunk.coverage {
            for c in &set.covers {
                let ok = in_chunk(c) && c.same_site(&set.token) && c.t >= set.token.t && claimed.insert(*c);
                if !ok {
                    return Err(Error::Coverage(format!(
                        "{:?} cannot cover {c:?} in chunk frames {start}..{end}",
                        set.token
                    )));
                }
            }
            if let Some(k) = chunk.positions.iter().position(|&p| p == set.token) {
                if fresh[k].is_some() || !set.covers.contains(&set.token) {
                    return Err(Error::Coverage(format!("bad coverage for new token {:?}", set.token)));
                }
                fresh[k] = Some(set.covers.clone());
            } else if let Some(i) = self.index_of(set.token) {
                if set.covers.contains(&set.token) {
                    return Err(Error::Coverage(format!("{:?} already covers itself", set.token)));
                }
                extend.push((i, set.covers.clone()));
            } else {
                return Err(Error::Coverage(format!("{:?} is neither cached nor appended", set.token)));
            }
        }
        let expected = (end - start) * self.dims.sites();
        if claimed.len() != expected || fresh.iter().any(Option::is_none) {
            return Err(Error::Coverage(format!(
                "chunk coverage claims {} of {expected} positions",
                claimed.len()
            )));
        }

        self.keys.append_rows(&chunk.keys)?;
        self.values.append_rows(&chunk.values)?;
        self.positions.extend_from_slice(&chunk.positions);
        self.coverage.extend(fresh.into_iter().flatten());
        for (i, covers) in extend {
            self.coverage[i].extend(covers);
        }
        self.chunk_ends.push(self.positions.len());
        Ok(())
    }
}

/// Functional form of [`KvCache::append`].
pub fn cache_append<T: Real>(mut cache: KvCache<T>, chunk: CacheChunk<T>) -> Result<KvCache<T>> {
    cache.append(chunk)?;
    Ok(cache)
}

/// Where a pruned position takes its key and value from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicationMode {
    /// The prune map's reference (nearest preceding kept token).
    #[default]
    ChainResolved,
    /// The nearest clean cache entry at the same site from an earlier chunk.
    CacheOnly,
}

/// Linear id of the kept token whose key/value stands in for pruned `pos`.
pub fn duplication_source<T: Real>(
    pos: TokenPos,
    map: &PruneMap,
    cache: &KvCache<T>,
    mode: DuplicationMode,
) -> Result<usize> {
    let dims = map.dims();
    ensure!(dims.contains(pos), OutOfRange, "{pos:?} outside grid");
    let id = dims.linear(pos);
    ensure!(!map.is_kept(id), InvalidInput, "{pos:?} is kept and needs no source");
    match mode {
        DuplicationMode::ChainResolved => Ok(map.reference(id)),
        DuplicationMode::CacheOnly => {
            let chunk_start = cache.chunk_size() * (pos.t / cache.chunk_size());
            cache
                .nearest_at_site(pos, chunk_start)
                .map(|i| dims.linear(cache.positions()[i]))
                .ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "no cached token at site ({}, {}) before frame {chunk_start}; keep {pos:?} instead",
                        pos.x, pos.y
                    ))
                })
        }
    }
}
