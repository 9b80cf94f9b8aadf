use netmae_autograd::Tensor;
use rand::seq::index;
use rand::Rng;

use super::atlas::NetworkAtlas;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentSpec {
    /// Timesteps per segment.
    pub length: usize,
    pub patch_time: usize,
    pub patch_parcels: usize,
    pub segments_per_recording: usize,
}

impl Default for SegmentSpec {
    fn default() -> Self {
        Self {
            length: 64,
            patch_time: 16,
            patch_parcels: 16,
            segments_per_recording: 10,
        }
    }
}

impl SegmentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.patch_time == 0 || self.patch_parcels == 0 {
            return Err(Error::Invalid("segment sizes must be positive".into()));
        }
        if !self.length.is_multiple_of(self.patch_time) {
            return Err(Error::Invalid(format!(
                "segment length {} is not a multiple of the temporal patch {}",
                self.length, self.patch_time
            )));
        }
        if self.segments_per_recording == 0 {
            return Err(Error::Invalid("segments_per_recording must be >= 1".into()));
        }
        Ok(())
    }

    pub fn token_dim(&self) -> usize {
        self.patch_time * self.patch_parcels
    }

    pub fn token_rows(&self) -> usize {
        self.length / self.patch_time
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub offset: usize,
    /// `length × C′`, z-scored per column.
    pub values: Tensor,
}

/// Per-column standardization; constant columns (including pads) map to 0.
pub fn zscore_columns(x: &Tensor) -> Tensor {
    let (t, c) = (x.rows(), x.cols());
    let src = x.data();
    let mut out = vec![0.0; t * c];
    for j in 0..c {
        let mean = (0..t).map(|i| src[i * c + j]).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (src[i * c + j] - mean).powi(2)).sum::<f64>() / t as f64;
        let sd = var.sqrt();
        if sd > 1e-12 * mean.abs().max(1.0) {
            for i in 0..t {
                out[i * c + j] = (src[i * c + j] - mean) / sd;
            }
        }
    }
    Tensor::new(&[t, c], out).expect("same shape")
}

/// Draws `segments_per_recording` windows from an aligned `T_total × C′`
/// matrix. Start offsets are distinct when the recording has enough of them
/// and are drawn with replacement otherwise.
pub fn sample_segments<R: Rng + ?Sized>(aligned: &Tensor, spec: &SegmentSpec, rng: &mut R) -> Result<Vec<Segment>> {
    let total = aligned.rows();
    if total < spec.length {
        return Err(Error::Invalid(format!(
            "recording has {total} timepoints, segments need {}",
            spec.length
        )));
    }
    let choices = total - spec.length + 1;
    let count = spec.segments_per_recording;
    let offsets: Vec<usize> = if choices >= count {
        index::sample(rng, choices, count).into_vec()
    } else {
        (0..count).map(|_| rng.gen_range(0..choices)).collect()
    };
    let c = aligned.cols();
    Ok(offsets
        .into_iter()
        .map(|offset| {
            let rows = aligned.data()[offset * c..(offset + spec.length) * c].to_vec();
            let window = Tensor::new(&[spec.length, c], rows).expect("window shape");
            Segment {
                offset,
                values: zscore_columns(&window),
            }
        })
        .collect())
}

/// A segment cut into a `(T/P_t) × (C′/P_c)` lattice of flattened patches.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch_time: usize,
    pub patch_parcels: usize,
    /// `(rows·cols) × (P_t·P_c)`; token `(r, c)` is row `r·cols + c`.
    pub tokens: Tensor,
    pub column_network: Vec<usize>,
    /// `(rows·cols) × (P_t·P_c)` with 1 for real parcels and 0 for padding.
    pub valid: Tensor,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token_dim(&self) -> usize {
        self.patch_time * self.patch_parcels
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn token(&self, idx: usize) -> &[f64] {
        self.tokens.row(idx)
    }

    pub fn network_of(&self, idx: usize) -> usize {
        self.column_network[idx % self.cols]
    }
}

/// Cuts an aligned `T × C′` segment into non-overlapping `(P_t, P_c)` patches.
pub fn tokenize(segment: &Tensor, spec: &SegmentSpec, atlas: &NetworkAtlas) -> Result<TokenGrid> {
    let (t, w) = segment.dims2("tokenize").map_err(|e| Error::Dimension(e.to_string()))?;
    let (pt, pc) = (spec.patch_time, spec.patch_parcels);
    if t % pt != 0 || w % pc != 0 {
        return Err(Error::Dimension(format!(
            "segment {t}×{w} is not divisible into {pt}×{pc} patches"
        )));
    }
    if w != atlas.padded_width() || pc != atlas.patch_parcels() {
        return Err(Error::Dimension(format!(
            "segment width {w} / patch {pc} does not match atlas layout {} / {}",
            atlas.padded_width(),
            atlas.patch_parcels()
        )));
    }
    let (rows, cols) = (t / pt, w / pc);
    let dim = pt * pc;
    let src = segment.data();
    let mut data = vec![0.0; rows * cols * dim];
    let mut valid = vec![0.0; rows * cols * dim];
    for r in 0..rows {
        for c in 0..cols {
            let base = (r * cols + c) * dim;
            for dt in 0..pt {
                let s = (r * pt + dt) * w + c * pc;
                data[base + dt * pc..base + (dt + 1) * pc].copy_from_slice(&src[s..s + pc]);
                for dc in 0..pc {
                    if !atlas.is_pad_column(c * pc + dc) {
                        valid[base + dt * pc + dc] = 1.0;
                    }
                }
            }
        }
    }
    Ok(TokenGrid {
        rows,
        cols,
        patch_time: pt,
        patch_parcels: pc,
        tokens: Tensor::new(&[rows * cols, dim], data)?,
        column_network: atlas.column_networks(),
        valid: Tensor::new(&[rows * cols, dim], valid)?,
    })
}

/// Reassembles the `T × C′` segment from its tokens.
pub fn untokenize(grid: &TokenGrid) -> Tensor {
    let (pt, pc) = (grid.patch_time, grid.patch_parcels);
    let w = grid.cols * pc;
    let t = grid.rows * pt;
    let dim = pt * pc;
    let mut out = vec![0.0; t * w];
    let src = grid.tokens.data();
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let base = (r * grid.cols + c) * dim;
            for dt in 0..pt {
                let d = (r * pt + dt) * w + c * pc;
                out[d..d + pc].copy_from_slice(&src[base + dt * pc..base + (dt + 1) * pc]);
            }
        }
    }
    Tensor::new(&[t, w], out).expect("grid shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(t: usize, c: usize) -> Tensor {
        Tensor::new(&[t, c], (0..t * c).map(|i| ((i * 7919) % 1013) as f64).collect()).unwrap()
    }

    #[test]
    fn full_size_grid_has_256_tokens() {
        let atlas = NetworkAtlas::from_sizes(&[1024], 16).unwrap();
        let spec = SegmentSpec::default();
        let x = ramp(64, 1024);
        let grid = tokenize(&x, &spec, &atlas).unwrap();
        assert_eq!((grid.rows, grid.cols, grid.len()), (4, 64, 256));
        assert_eq!(grid.token(0)[0], x.get2(0, 0));
        assert_eq!(grid.token(grid.index(1, 2))[16 + 3], x.get2(17, 35));
        assert_eq!(untokenize(&grid), x);
    }

    #[test]
    fn misaligned_segment_is_rejected() {
        let atlas = NetworkAtlas::from_sizes(&[32], 16).unwrap();
        let spec = SegmentSpec::default();
        assert!(tokenize(&ramp(60, 32), &spec, &atlas).is_err());
        assert!(tokenize(&ramp(64, 30), &spec, &atlas).is_err());
    }

    #[test]
    fn short_recording_gives_identical_segments_at_offset_zero() {
        let spec = SegmentSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let segs = sample_segments(&ramp(64, 16), &spec, &mut rng).unwrap();
        assert_eq!(segs.len(), 10);
        assert!(segs.iter().all(|s| s.offset == 0 && s.values == segs[0].values));
    }

    #[test]
    fn offsets_repeat_under_the_same_seed() {
        let spec = SegmentSpec::default();
        let x = ramp(300, 16);
        let a = sample_segments(&x, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_segments(&x, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let oa: Vec<_> = a.iter().map(|s| s.offset).collect();
        let ob: Vec<_> = b.iter().map(|s| s.offset).collect();
        assert_eq!(oa, ob);
        let mut dedup = oa.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 10);
    }

    #[test]
    fn too_short_recording_is_an_error() {
        let spec = SegmentSpec::default();
        assert!(sample_segments(&ramp(63, 16), &spec, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn zscored_columns_have_unit_moments() {
        let spec = SegmentSpec::default();
        let mut x = ramp(100, 16);
        for i in 0..100 {
            x.data_mut()[i * 16 + 5] = 3.0;
        }
        let segs = sample_segments(&x, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for s in &segs {
            for j in 0..16 {
                let col: Vec<f64> = (0..64).map(|i| s.values.get2(i, j)).collect();
                let mean = col.iter().sum::<f64>() / 64.0;
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0).sqrt();
                assert!(mean.abs() < 1e-6);
                if j == 5 {
                    assert!(col.iter().all(|&v| v == 0.0));
                } else {
                    assert!((sd - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn valid_mask_marks_pad_elements() {
        let atlas = NetworkAtlas::from_sizes(&[17, 16], 16).unwrap();
        let spec = SegmentSpec::default();
        let grid = tokenize(&ramp(64, 48), &spec, &atlas).unwrap();
        let v = grid.valid.row(grid.index(0, 1));
        assert_eq!(v[0], 1.0);
        assert!(v[1..16].iter().all(|&x| x == 0.0));
        assert!(grid.valid.row(grid.index(2, 2)).iter().all(|&x| x == 1.0));
        assert_eq!(grid.network_of(grid.index(3, 2)), 1);
    }
}
