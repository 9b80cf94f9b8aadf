use rand::seq::index;
use rand::Rng;

use super::atlas::NetworkAtlas;
use super::tokens::TokenGrid;
use crate::error::{Error, Result};

/// Which tokens the encoder sees and which the decoder must reconstruct.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    /// Network whose tokens are hidden; `None` for random or empty plans.
    pub target_network: Option<usize>,
    /// Ascending flat token indices.
    pub masked: Vec<usize>,
    /// Ascending flat token indices, complement of `masked`.
    pub unmasked: Vec<usize>,
}

impl MaskPlan {
    fn from_masked(target: Option<usize>, total: usize, mut masked: Vec<usize>) -> Self {
        masked.sort_unstable();
        let mut is_masked = vec![false; total];
        for &i in &masked {
            is_masked[i] = true;
        }
        let unmasked = (0..total).filter(|&i| !is_masked[i]).collect();
        Self {
            target_network: target,
            masked,
            unmasked,
        }
    }

    /// Everything visible; used for classification and embedding summaries.
    pub fn visible(total: usize) -> Self {
        Self {
            target_network: None,
            masked: Vec::new(),
            unmasked: (0..total).collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.masked.len() + self.unmasked.len()
    }

    pub fn unmasked_count(&self) -> usize {
        self.unmasked.len()
    }

    pub fn masked_count(&self) -> usize {
        self.masked.len()
    }
}

/// Masks every token whose spatial column belongs to `target`.
pub fn make_mask_plan(atlas: &NetworkAtlas, grid: &TokenGrid, target: usize) -> Result<MaskPlan> {
    if target >= atlas.network_count() {
        return Err(Error::Invalid(format!(
            "unknown network {target}; atlas has {}",
            atlas.network_count()
        )));
    }
    let cols = atlas.token_columns(target);
    let masked = (0..grid.rows)
        .flat_map(|r| cols.clone().map(move |c| r * grid.cols + c))
        .collect();
    Ok(MaskPlan::from_masked(Some(target), grid.len(), masked))
}

/// Masks a uniformly random set of `count` tokens.
pub fn make_random_mask_plan<R: Rng + ?Sized>(grid: &TokenGrid, count: usize, rng: &mut R) -> Result<MaskPlan> {
    let total = grid.len();
    if count == 0 || count >= total {
        return Err(Error::Invalid(format!(
            "random mask size {count} must be in 1..{total}"
        )));
    }
    let masked = index::sample(rng, total, count).into_vec();
    Ok(MaskPlan::from_masked(None, total, masked))
}

/// Mean number of tokens hidden by a network mask, rounded; the default size
/// for random masking.
pub fn mean_network_mask_size(atlas: &NetworkAtlas, token_rows: usize) -> usize {
    let total: usize = (0..atlas.network_count())
        .map(|n| atlas.token_columns(n).len() * token_rows)
        .sum();
    ((total as f64 / atlas.network_count() as f64).round() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokens::{tokenize, SegmentSpec};
    use netmae_autograd::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(sizes: &[usize]) -> (NetworkAtlas, TokenGrid) {
        let atlas = NetworkAtlas::from_sizes(sizes, 16).unwrap();
        let x = Tensor::zeros(&[64, atlas.padded_width()]);
        let g = tokenize(&x, &SegmentSpec::default(), &atlas).unwrap();
        (atlas, g)
    }

    #[test]
    fn forty_eight_parcel_network_masks_twelve_tokens() {
        let (atlas, g) = grid(&[48, 976]);
        assert_eq!(g.len(), 256);
        let plan = make_mask_plan(&atlas, &g, 0).unwrap();
        assert_eq!(plan.masked_count(), 12);
        assert_eq!(plan.unmasked_count(), 244);
    }

    #[test]
    fn single_column_network_masks_four_tokens() {
        let (atlas, g) = grid(&[16, 32]);
        let plan = make_mask_plan(&atlas, &g, 0).unwrap();
        assert_eq!(plan.masked, vec![0, 3, 6, 9]);
        assert!(make_mask_plan(&atlas, &g, 2).is_err());
    }

    #[test]
    fn plans_partition_the_tokens() {
        let (atlas, g) = grid(&[16, 32, 48, 16, 32, 16, 32]);
        for net in 0..7 {
            let plan = make_mask_plan(&atlas, &g, net).unwrap();
            let mut all: Vec<_> = plan.masked.iter().chain(&plan.unmasked).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..g.len()).collect::<Vec<_>>());
            assert!(plan.masked.iter().all(|&i| g.network_of(i) == net));
        }
    }

    #[test]
    fn random_plans() {
        let (_, g) = grid(&[16, 32, 48, 16, 32, 16, 32]);
        let n = g.len();
        let edge = make_random_mask_plan(&g, n - 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(edge.unmasked_count(), 1);
        let a = make_random_mask_plan(&g, 7, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = make_random_mask_plan(&g, 7, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let mut d = a.masked.clone();
        d.dedup();
        assert_eq!(d.len(), 7);
        assert!(make_random_mask_plan(&g, 0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(make_random_mask_plan(&g, n, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn default_random_mask_size() {
        let atlas = NetworkAtlas::from_sizes(&[16, 32, 48, 16, 32, 16, 32], 16).unwrap();
        // 12 columns × 4 rows over 7 networks.
        assert_eq!(mean_network_mask_size(&atlas, 4), 7);
    }
}
