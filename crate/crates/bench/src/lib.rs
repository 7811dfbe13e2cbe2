//! Seeded input generators shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wnn_core::dataset::LabeledDataset;
use wnn_core::image::{Image, NUM_CLASSES, SIDE};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A digit-like image: a noisy filled blob in the central 20×20 area.
pub fn blob_image(rng: &mut ChaCha8Rng) -> Image {
    let (cx, cy) = (rng.gen_range(10.0..18.0), rng.gen_range(10.0..18.0));
    let (rx, ry) = (rng.gen_range(3.0..7.0), rng.gen_range(4.0..9.0));
    Image::from_fn(|x, y| {
        let dx = (x as f64 - cx) / rx;
        let dy = (y as f64 - cy) / ry;
        let r = dx * dx + dy * dy;
        if r < 1.0 && x > 1 && y > 1 && x < SIDE - 2 && y < SIDE - 2 {
            (255.0 * (1.0 - r)).round() as u8 | rng.gen_range(0..8)
        } else {
            0
        }
    })
}

pub fn dataset(rng: &mut ChaCha8Rng, per_class: usize) -> LabeledDataset {
    let mut ds = LabeledDataset::new("bench", None);
    for d in 0..NUM_CLASSES {
        for _ in 0..per_class {
            ds.push(d, blob_image(rng));
        }
    }
    ds
}
