//! Synthetic latent videos and the binary containers they travel in.
//!
//! `LIFP` (latent video), little-endian:
//!
//! ```text
//! "LIFP" | u32 version=1 | u32 T | u32 C | u32 H | u32 W | u32 p | f32[T*C*H*W] (t, c, h, w)
//! ```
//!
//! `LIFM` (prune map), little-endian:
//!
//! ```text
//! "LIFM" | u32 version=1 | u32 T | u32 Gx | u32 Gy | T*Gx*Gy records of (u8 kept, u32 reference)
//! ```
//!
//! Map records are in raster order of [`GridDims::linear`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::grid::{GridDims, TokenGrid, TokenPos};
use crate::numerics::{Matrix, Real, SeededRng};
use crate::pruning::PruneMap;

pub const LATENT_MAGIC: [u8; 4] = *b"LIFP";
pub const MAP_MAGIC: [u8; 4] = *b"LIFM";
pub const FORMAT_VERSION: u32 = 1;

const LATENT_HEADER_BYTES: usize = 4 + 4 * 6;
const MAP_HEADER_BYTES: usize = 4 + 4 * 4;
const MAP_RECORD_BYTES: usize = 5;

/// A `T x C x H x W` latent video, split into `p x p` patches per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    patch: usize,
    data: Vec<f32>,
}

/// The `C x p x p` block at grid site `(x, y)` of frame `t`, ordered `(c, dy, dx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPatch {
    pub t: usize,
    pub x: usize,
    pub y: usize,
    pub values: Vec<f32>,
}

impl LatentVideo {
    pub fn new(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        patch: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        check_shape(frames, channels, height, width, patch)?;
        let expected = frames * channels * height * width;
        ensure!(
            data.len() == expected,
            DimensionMismatch,
            "{} values for a {frames}x{channels}x{height}x{width} video",
            data.len()
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            InvalidInput,
            "latent values must be finite"
        );
        Ok(Self {
            frames,
            channels,
            height,
            width,
            patch,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn grid(&self) -> GridDims {
        GridDims::new(self.frames, self.width / self.patch, self.height / self.patch)
    }

    /// Elements per patch, `C * p^2`.
    pub fn token_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    #[inline]
    fn index(&self, t: usize, c: usize, h: usize, w: usize) -> usize {
        ((t * self.channels + c) * self.height + h) * self.width + w
    }

    pub fn value(&self, t: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.index(t, c, h, w)]
    }

    pub fn patch_at(&self, t: usize, x: usize, y: usize) -> Result<LatentPatch> {
        let g = self.grid();
        ensure!(
            g.contains(TokenPos::new(t, x, y)),
            OutOfRange,
            "patch ({t}, {x}, {y}) outside grid {}x{}x{}",
            g.frames,
            g.gx,
            g.gy
        );
        let mut values = Vec::with_capacity(self.token_dim());
        self.extend_patch(t, x, y, &mut values);
        Ok(LatentPatch { t, x, y, values })
    }

    fn extend_patch(&self, t: usize, x: usize, y: usize, out: &mut Vec<f32>) {
        let p = self.patch;
        for c in 0..self.channels {
            for dy in 0..p {
                let start = self.index(t, c, y * p + dy, x * p);
                out.extend_from_slice(&self.data[start..start + p]);
            }
        }
    }

    /// Patch-major token grid, one row per patch.
    pub fn to_tokens<T: Real>(&self) -> TokenGrid<T> {
        let g = self.grid();
        let mut buf = Vec::with_capacity(g.total() * self.token_dim());
        for id in 0..g.total() {
            let p = g.pos(id);
            self.extend_patch(p.t, p.x, p.y, &mut buf);
        }
        let data = buf.into_iter().map(|v| T::cast(v as f64)).collect();
        TokenGrid {
            dims: g,
            values: Matrix::new(g.total(), self.token_dim(), data)
                .expect("finite by construction"),
        }
    }

    /// Inverse of [`to_tokens`](Self::to_tokens); values are narrowed to f32.
    pub fn from_tokens<T: Real>(grid: &TokenGrid<T>, channels: usize, patch: usize) -> Result<Self> {
        let dims = grid.dims;
        ensure!(
            grid.values.cols() == channels * patch * patch,
            DimensionMismatch,
            "token width {} vs C*p^2 = {}",
            grid.values.cols(),
            channels * patch * patch
        );
        let height = dims.gy * patch;
        let width = dims.gx * patch;
        let mut data = vec![0f32; dims.frames * channels * height * width];
        for id in 0..dims.total() {
            let pos = dims.pos(id);
            let row = grid.values.row(id);
            let mut k = 0;
            for c in 0..channels {
                for dy in 0..patch {
                    for dx in 0..patch {
                        let h = pos.y * patch + dy;
                        let w = pos.x * patch + dx;
                        data[((pos.t * channels + c) * height + h) * width + w] = row[k].widen() as f32;
                        k += 1;
                    }
                }
            }
        }
        Self::new(dims.frames, channels, height, width, patch, data)
    }
}

fn check_shape(frames: usize, channels: usize, height: usize, width: usize, patch: usize) -> Result<()> {
    ensure!(
        frames > 0 && channels > 0 && height > 0 && width > 0 && patch > 0,
        DimensionMismatch,
        "all dimensions must be positive (T={frames}, C={channels}, H={height}, W={width}, p={patch})"
    );
    ensure!(
        height % patch == 0 && width % patch == 0,
        DimensionMismatch,
        "H={height} and W={width} must be multiples of p={patch}"
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    /// A `k x k` block of grid cells moves one cell per frame along `x` over a
    /// static background; every element receives noise of scale `sigma`.
    StaticBackgroundMovingBlock,
    /// Static background plus fresh per-frame noise of scale `sigma`; a
    /// `redundancy` fraction of patches are exact copies of their predecessor.
    PerFrameNoise,
    /// Fresh standard-normal patches; a `redundancy` fraction are exact copies
    /// of their predecessor.
    ExactDuplicates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub redundancy: f64,
    pub motion: MotionKind,
    pub noise_scale: f64,
    /// Side of the moving block in grid cells.
    pub block_cells: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 6,
            channels: 4,
            height: 16,
            width: 16,
            patch: 2,
            redundancy: 0.31,
            motion: MotionKind::ExactDuplicates,
            noise_scale: 0.02,
            block_cells: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn grid(&self) -> GridDims {
        GridDims::new(self.frames, self.width / self.patch.max(1), self.height / self.patch.max(1))
    }

    /// Number of patches in frames `1..T` that duplicate their predecessor:
    /// `ceil(redundancy * (T - 1) * Gx * Gy)`.
    pub fn duplicate_count(&self) -> usize {
        let g = self.grid();
        let slots = (g.frames.saturating_sub(1) * g.sites()) as f64;
        let x = self.redundancy * slots;
        // products such as 0.3 * 10 land just above an integer
        let nearest = x.round();
        let n = if (x - nearest).abs() < 1e-9 { nearest } else { x.ceil() };
        n as usize
    }

    pub fn validate(&self) -> Result<()> {
        check_shape(self.frames, self.channels, self.height, self.width, self.patch)?;
        ensure!(
            self.redundancy.is_finite() && (0.0..=1.0).contains(&self.redundancy),
            InvalidInput,
            "redundancy {} outside [0, 1]",
            self.redundancy
        );
        ensure!(
            self.noise_scale.is_finite() && self.noise_scale >= 0.0,
            InvalidInput,
            "noise scale {} must be finite and non-negative",
            self.noise_scale
        );
        if self.motion != MotionKind::StaticBackgroundMovingBlock {
            ensure!(
                self.redundancy == 0.0 || self.frames >= 2,
                InvalidInput,
                "redundancy {} impossible with a single frame",
                self.redundancy
            );
        } else {
            let g = self.grid();
            ensure!(
                self.block_cells >= 1 && self.block_cells <= g.gx.min(g.gy),
                InvalidInput,
                "block of {} cells does not fit a {}x{} grid",
                self.block_cells,
                g.gx,
                g.gy
            );
        }
        Ok(())
    }
}

/// Builds a synthetic latent video; a pure function of `cfg`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<LatentVideo> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let (t_n, c_n, h_n, w_n, p) = (cfg.frames, cfg.channels, cfg.height, cfg.width, cfg.patch);
    let mut data = vec![0f32; t_n * c_n * h_n * w_n];
    let idx = |t: usize, c: usize, h: usize, w: usize| ((t * c_n + c) * h_n + h) * w_n + w;

    match cfg.motion {
        MotionKind::ExactDuplicates | MotionKind::PerFrameNoise => {
            let g = cfg.grid();
            let mut slots: Vec<usize> = g.frame_range(1, t_n).collect();
            rng.shuffle(&mut slots);
            let mut duplicate = vec![false; g.total()];
            for &s in &slots[..cfg.duplicate_count()] {
                duplicate[s] = true;
            }
            let background: Vec<f64> = if cfg.motion == MotionKind::PerFrameNoise {
                (0..c_n * h_n * w_n).map(|_| rng.next_normal()).collect()
            } else {
                Vec::new()
            };
            for id in 0..g.total() {
                let pos = g.pos(id);
                for c in 0..c_n {
                    for dy in 0..p {
                        for dx in 0..p {
                            let (h, w) = (pos.y * p + dy, pos.x * p + dx);
                            let dst = idx(pos.t, c, h, w);
                            data[dst] = if duplicate[id] {
                                data[idx(pos.t - 1, c, h, w)]
                            } else if background.is_empty() {
                                rng.next_normal() as f32
                            } else {
                                let b = background[(c * h_n + h) * w_n + w];
                                (b + cfg.noise_scale * rng.next_normal()) as f32
                            };
                        }
                    }
                }
            }
        }
        MotionKind::StaticBackgroundMovingBlock => {
            let g = cfg.grid();
            let k = cfg.block_cells;
            let background: Vec<f64> = (0..c_n * h_n * w_n).map(|_| rng.next_normal()).collect();
            let block: Vec<f64> = (0..c_n * k * p * k * p).map(|_| rng.next_normal()).collect();
            for t in 0..t_n {
                for c in 0..c_n {
                    for h in 0..h_n {
                        for w in 0..w_n {
                            let (gx, gy) = (w / p, h / p);
                            // block occupies columns t..t+k (mod Gx) and rows 0..k
                            let bx = (gx + g.gx - t % g.gx) % g.gx;
                            let base = if bx < k && gy < k {
                                let (bh, bw) = (h, bx * p + w % p);
                                block[(c * k * p + bh) * k * p + bw]
                            } else {
                                background[(c * h_n + h) * w_n + w]
                            };
                            data[idx(t, c, h, w)] = (base + cfg.noise_scale * rng.next_normal()) as f32;
                        }
                    }
                }
            }
        }
    }
    LatentVideo::new(t_n, c_n, h_n, w_n, p, data)
}

pub fn encode_latent(v: &LatentVideo) -> Vec<u8> {
    let mut out = Vec::with_capacity(LATENT_HEADER_BYTES + v.data.len() * 4);
    out.extend_from_slice(&LATENT_MAGIC);
    for field in [
        FORMAT_VERSION,
        v.frames as u32,
        v.channels as u32,
        v.height as u32,
        v.width as u32,
        v.patch as u32,
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    for x in &v.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_latent(bytes: &[u8]) -> Result<LatentVideo> {
    let fields = read_header(bytes, LATENT_MAGIC, 5)?;
    let [t, c, h, w, p] = [fields[0], fields[1], fields[2], fields[3], fields[4]];
    check_shape(t, c, h, w, p)?;
    let n = t
        .checked_mul(c)
        .and_then(|x| x.checked_mul(h))
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| Error::DimensionMismatch("declared size overflows".into()))?;
    let payload = &bytes[LATENT_HEADER_BYTES..];
    check_payload(payload.len(), n.saturating_mul(4))?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    LatentVideo::new(t, c, h, w, p, data)
}

pub fn write_latent(v: &LatentVideo, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_latent(v))?;
    Ok(())
}

pub fn read_latent(path: impl AsRef<Path>) -> Result<LatentVideo> {
    decode_latent(&fs::read(path)?)
}

pub fn encode_prune_map(map: &PruneMap) -> Vec<u8> {
    let d = map.dims();
    let mut out = Vec::with_capacity(MAP_HEADER_BYTES + d.total() * MAP_RECORD_BYTES);
    out.extend_from_slice(&MAP_MAGIC);
    for field in [FORMAT_VERSION, d.frames as u32, d.gx as u32, d.gy as u32] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    for id in 0..d.total() {
        out.push(map.is_kept(id) as u8);
        out.extend_from_slice(&(map.reference(id) as u32).to_le_bytes());
    }
    out
}

pub fn decode_prune_map(bytes: &[u8]) -> Result<PruneMap> {
    let fields = read_header(bytes, MAP_MAGIC, 3)?;
    let dims = GridDims::new(fields[0], fields[1], fields[2]);
    let payload = &bytes[MAP_HEADER_BYTES..];
    check_payload(payload.len(), dims.total().saturating_mul(MAP_RECORD_BYTES))?;
    let mut kept = Vec::with_capacity(dims.total());
    let mut reference = Vec::with_capacity(dims.total());
    for rec in payload.chunks_exact(MAP_RECORD_BYTES) {
        ensure!(rec[0] <= 1, InvalidInput, "kept flag {} is not 0 or 1", rec[0]);
        kept.push(rec[0] == 1);
        reference.push(u32::from_le_bytes([rec[1], rec[2], rec[3], rec[4]]) as usize);
    }
    PruneMap::from_parts(dims, kept, reference)
}

pub fn write_prune_map(map: &PruneMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_prune_map(map))?;
    Ok(())
}

pub fn read_prune_map(path: impl AsRef<Path>) -> Result<PruneMap> {
    decode_prune_map(&fs::read(path)?)
}

/// Validates magic and version, returning the `n` u32 fields that follow.
fn read_header(bytes: &[u8], magic: [u8; 4], n: usize) -> Result<Vec<usize>> {
    let header = 8 + 4 * n;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let found = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(Error::Truncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    Ok((0..n).map(|k| word(8 + 4 * k) as usize).collect())
}

fn check_payload(found: usize, expected: usize) -> Result<()> {
    if found < expected {
        Err(Error::Truncated { expected, found })
    } else if found > expected {
        Err(Error::TrailingData(found - expected))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn formula_video(t: usize, c: usize, h: usize, w: usize, p: usize) -> LatentVideo {
        let mut data = Vec::new();
        for ti in 0..t {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        data.push((ti * 1000 + ci * 100 + hi * 10 + wi) as f32);
                    }
                }
            }
        }
        LatentVideo::new(t, c, h, w, p, data).unwrap()
    }

    #[test]
    fn full_duplication_copies_frame() {
        let cfg = SynthConfig {
            frames: 2,
            height: 4,
            width: 4,
            redundancy: 1.0,
            ..SynthConfig::default()
        };
        let v = generate_synthetic(&cfg).unwrap();
        let half = v.data().len() / 2;
        assert_eq!(v.data()[..half], v.data()[half..]);
    }

    #[test]
    fn duplicate_count_is_exact() {
        let cfg = SynthConfig {
            frames: 6,
            height: 16,
            width: 16,
            redundancy: 0.31,
            seed: 5,
            ..SynthConfig::default()
        };
        let v = generate_synthetic(&cfg).unwrap();
        let g = v.grid();
        let mut identical = 0;
        for id in g.frame_range(1, g.frames) {
            let p = g.pos(id);
            let a = v.patch_at(p.t, p.x, p.y).unwrap();
            let b = v.patch_at(p.t - 1, p.x, p.y).unwrap();
            if a.values == b.values {
                identical += 1;
            }
        }
        // ceil(0.31 * 5 * 64) = ceil(99.2)
        assert_eq!(identical, 100);
        assert_eq!(cfg.duplicate_count(), 100);
    }

    #[test]
    fn duplicate_count_tolerates_representation_error() {
        let cfg = SynthConfig {
            frames: 11,
            height: 2,
            width: 2,
            patch: 2,
            redundancy: 0.3,
            ..SynthConfig::default()
        };
        assert_eq!(cfg.duplicate_count(), 3);
    }

    #[test]
    fn rejects_impossible_configs() {
        let bad = [
            SynthConfig { redundancy: 1.5, ..SynthConfig::default() },
            SynthConfig { redundancy: f64::NAN, ..SynthConfig::default() },
            SynthConfig { frames: 1, redundancy: 0.5, ..SynthConfig::default() },
            SynthConfig { height: 15, ..SynthConfig::default() },
            SynthConfig { noise_scale: -1.0, ..SynthConfig::default() },
            SynthConfig {
                motion: MotionKind::StaticBackgroundMovingBlock,
                block_cells: 9,
                ..SynthConfig::default()
            },
        ];
        for cfg in bad {
            assert!(generate_synthetic(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn moving_block_leaves_background_static() {
        let cfg = SynthConfig {
            motion: MotionKind::StaticBackgroundMovingBlock,
            noise_scale: 0.0,
            frames: 3,
            ..SynthConfig::default()
        };
        let v = generate_synthetic(&cfg).unwrap();
        // far from the block's path (rows >= k) nothing moves
        let a = v.patch_at(1, 5, 5).unwrap();
        let b = v.patch_at(0, 5, 5).unwrap();
        assert_eq!(a.values, b.values);
        // the block's leading edge changes the cell it enters
        assert_ne!(v.patch_at(1, 2, 0).unwrap().values, v.patch_at(0, 2, 0).unwrap().values);
        // the block content is carried along x
        assert_eq!(v.patch_at(1, 1, 0).unwrap().values, v.patch_at(0, 0, 0).unwrap().values);
    }

    #[test]
    fn patch_of_degenerate_grid_is_whole_frame() {
        let v = formula_video(2, 2, 4, 4, 4);
        let patch = v.patch_at(1, 0, 0).unwrap();
        let frame = &v.data()[32..64];
        assert_eq!(patch.values, frame);
    }

    #[test]
    fn patch_index_arithmetic() {
        let v = formula_video(2, 2, 4, 4, 2);
        let patch = v.patch_at(0, 1, 0).unwrap();
        // x = 1 selects columns 2..4, y = 0 selects rows 0..2
        let mut want = Vec::new();
        for c in 0..2 {
            for h in 0..2 {
                for w in 2..4 {
                    want.push((c * 100 + h * 10 + w) as f32);
                }
            }
        }
        assert_eq!(patch.values, want);
        assert!(matches!(v.patch_at(0, 2, 0), Err(Error::OutOfRange(_))));
        assert!(matches!(v.patch_at(2, 0, 0), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn patches_tile_frames() {
        let v = generate_synthetic(&SynthConfig::default()).unwrap();
        let grid = v.to_tokens::<f64>();
        let back = LatentVideo::from_tokens(&grid, v.channels(), v.patch_size()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode_latent(&formula_video(1, 1, 2, 2, 2));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_latent(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = encode_latent(&formula_video(2, 1, 2, 2, 2));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_latent(cut), Err(Error::Truncated { .. })));
        assert!(matches!(decode_latent(&bytes[..10]), Err(Error::Truncated { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_latent(&long), Err(Error::TrailingData(1))));
    }

    #[test]
    fn bad_version_and_shape_rejected() {
        let mut bytes = encode_latent(&formula_video(1, 1, 2, 2, 2));
        bytes[4] = 2;
        assert!(matches!(decode_latent(&bytes), Err(Error::UnsupportedVersion(2))));
        let mut bytes = encode_latent(&formula_video(1, 1, 2, 2, 2));
        bytes[24] = 3; // p = 3 does not divide H = 2
        assert!(matches!(decode_latent(&bytes), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn header_layout() {
        let bytes = encode_latent(&formula_video(2, 3, 4, 6, 2));
        assert_eq!(&bytes[..4], b"LIFP");
        let words: Vec<u32> = bytes[4..28]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        assert_eq!(words, [1, 2, 3, 4, 6, 2]);
        assert_eq!(bytes.len(), 28 + 2 * 3 * 4 * 6 * 4);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.lifp");
        let v = generate_synthetic(&SynthConfig::default()).unwrap();
        write_latent(&v, &path).unwrap();
        assert_eq!(read_latent(&path).unwrap(), v);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn latent_round_trip_is_bit_exact(
            frames in 1usize..4,
            gx in 1usize..4,
            gy in 1usize..4,
            seed in any::<u64>(),
            kind in prop_oneof![
                Just(MotionKind::ExactDuplicates),
                Just(MotionKind::PerFrameNoise),
                Just(MotionKind::StaticBackgroundMovingBlock),
            ],
        ) {
            let cfg = SynthConfig {
                frames,
                channels: 2,
                height: gy * 2,
                width: gx * 2,
                patch: 2,
                redundancy: if frames > 1 { 0.5 } else { 0.0 },
                motion: kind,
                block_cells: 1,
                seed,
                ..SynthConfig::default()
            };
            let v = generate_synthetic(&cfg).unwrap();
            prop_assert_eq!(&v, &generate_synthetic(&cfg).unwrap());
            let back = decode_latent(&encode_latent(&v)).unwrap();
            prop_assert!(back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back, v);
        }
    }
}
