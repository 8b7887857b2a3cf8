//! Blank random feature positions the way training does: independent
//! element hits on the spatial stream, one contiguous column band on the
//! temporal stream.

use sempos::autodiff::Tensor;
use sempos::masking::{mask_spatial, mask_temporal_chunk, MaskConfig};
use sempos::rng::named_stream;

fn grid(mask: &sempos::masking::Mask, rows: usize, cols: usize) -> String {
    let mut out = String::new();
    for r in 0..rows {
        for c in 0..cols {
            out.push(if mask.is_hit(r, c) { '#' } else { '.' });
        }
        out.push('\n');
    }
    out
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = MaskConfig::default();
    let mut rng = named_stream(3, "masking-demo");

    let spatial = Tensor::ones(vec![6, 16]);
    let (masked, mask) = mask_spatial(&spatial, cfg.spatial_ratio, &mut rng)?;
    println!(
        "spatial: {} of {} elements blanked ({:.0}% requested)",
        mask.count(),
        spatial.numel(),
        cfg.spatial_ratio * 100.0
    );
    print!("{}", grid(&mask, 6, 16));
    assert_eq!(
        masked.data().iter().filter(|v| **v == 0.0).count(),
        mask.count()
    );

    let temporal = Tensor::ones(vec![6, 16]);
    let (_, band) = mask_temporal_chunk(&temporal, cfg.temporal_ratio, &mut rng)?;
    println!(
        "\ntemporal: one contiguous band of {} columns ({:.0}% requested)",
        band.count() / 6,
        cfg.temporal_ratio * 100.0
    );
    print!("{}", grid(&band, 6, 16));

    // Same seed, same masks — the trainer relies on this for reproducible
    // runs.
    let mut replay = named_stream(3, "masking-demo");
    let (_, again) = mask_spatial(&spatial, cfg.spatial_ratio, &mut replay)?;
    assert_eq!(again.count(), mask.count());
    println!("\nreplaying the stream reproduces the same masks");
    Ok(())
}
