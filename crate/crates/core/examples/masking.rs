//! Network-guided versus random masking on the same grid.

use netmae::data::{make_mask_plan, make_random_mask_plan, tokenize, NetworkAtlas, SegmentSpec};
use netmae_autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> netmae::Result<()> {
    let atlas = NetworkAtlas::from_sizes(&[16, 32, 48, 16, 32, 16, 32], 16)?;
    let spec = SegmentSpec {
        length: 32,
        ..SegmentSpec::default()
    };
    let grid = tokenize(&Tensor::zeros(&[32, atlas.padded_width()]), &spec, &atlas)?;
    let show = |masked: &[usize]| {
        (0..grid.rows)
            .map(|r| {
                (0..grid.cols)
                    .map(|c| if masked.contains(&grid.index(r, c)) { '#' } else { '.' })
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join(" / ")
    };
    for net in [2, 5] {
        let plan = make_mask_plan(&atlas, &grid, net)?;
        println!(
            "network {net}: {}  ({} masked)",
            show(&plan.masked),
            plan.masked_count()
        );
    }
    let plan = make_random_mask_plan(&grid, 6, &mut ChaCha8Rng::seed_from_u64(1))?;
    println!("random:    {}  ({} masked)", show(&plan.masked), plan.masked_count());
    Ok(())
}
