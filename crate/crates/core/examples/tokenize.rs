//! Network-aligned tokenization of one recording-sized segment.

use netmae::data::{tokenize, untokenize, NetworkAtlas, SegmentSpec};
use netmae_autograd::Tensor;

fn main() -> netmae::Result<()> {
    let sizes = [16, 32, 48, 16, 32, 16, 32];
    let atlas = NetworkAtlas::from_sizes(&sizes, 16)?;
    let spec = SegmentSpec {
        length: 64,
        ..SegmentSpec::default()
    };
    let c = atlas.parcel_count();
    let x = Tensor::new(&[64, c], (0..64 * c).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let grid = tokenize(&atlas.align(&x)?, &spec, &atlas)?;
    println!(
        "{} parcels -> {} padded columns -> {}x{} grid of {}-dim tokens",
        c,
        atlas.padded_width(),
        grid.rows,
        grid.cols,
        grid.token_dim()
    );
    for net in 0..atlas.network_count() {
        println!(
            "  {:<5} {:>2} parcels, {} pad, token columns {:?}",
            atlas.network_name(net),
            atlas.parcels_in(net),
            atlas.pad_per_network()[net],
            atlas.token_columns(net)
        );
    }
    let back = atlas.unalign(&untokenize(&grid))?;
    println!("round trip exact: {}", back == x);
    Ok(())
}
