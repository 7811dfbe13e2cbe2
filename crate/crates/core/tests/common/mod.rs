//! Toy data generators and brute-force oracles shared by the integration
//! suites. Nothing here calls the integral-image engine.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wnn_core::dataset::{load_idx, LabeledDataset};
use wnn_core::image::{Image, NUM_CLASSES, PIXELS, SIDE};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A noisy rectangle-ish stroke pattern per digit so that classes differ.
pub fn prototype_image(rng: &mut ChaCha8Rng, digit: usize) -> Image {
    let x0 = 5 + digit % 5 * 2 + rng.gen_range(0..3);
    let y0 = 4 + digit / 5 * 5 + rng.gen_range(0..3);
    let w = 6 + rng.gen_range(0..6);
    let h = 8 + rng.gen_range(0..6);
    Image::from_fn(|x, y| {
        let inside = (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y);
        let edge = inside
            && (x == x0
                || x == x0 + w - 1
                || y == y0
                || y == y0 + h - 1
                || (x + y + digit).is_multiple_of(4));
        if edge {
            rng.gen_range(120..=255)
        } else if rng.gen_bool(0.02) {
            rng.gen_range(1..80)
        } else {
            0
        }
    })
}

pub fn random_image(rng: &mut ChaCha8Rng, density: f64) -> Image {
    Image::from_fn(|_, _| if rng.gen_bool(density) { rng.gen() } else { 0 })
}

pub fn toy_dataset(rng: &mut ChaCha8Rng, per_class: usize, name: &str) -> LabeledDataset {
    let mut ds = LabeledDataset::new(name, None);
    for d in 0..NUM_CLASSES {
        for _ in 0..per_class {
            ds.push(d, prototype_image(rng, d));
        }
    }
    ds
}

/// `(label, image)` test images drawn from the same generator.
pub fn toy_tests(rng: &mut ChaCha8Rng, n: usize) -> Vec<(u8, Image)> {
    (0..n)
        .map(|_| {
            let d = rng.gen_range(0..NUM_CLASSES);
            (d as u8, prototype_image(rng, d))
        })
        .collect()
}

/// Window sum of squared differences by direct enumeration of the `S×S`
/// slots; off-screen slots are zero in both images.
pub fn naive_window_sq(b: &Image, a: &Image, center: usize, size: usize) -> u64 {
    let half = size as i64 / 2;
    let (cx, cy) = ((center % SIDE) as i64, (center / SIDE) as i64);
    let mut s = 0u64;
    for dy in -half..=half {
        for dx in -half..=half {
            let (x, y) = (cx + dx, cy + dy);
            let on = x >= 0 && y >= 0 && x < SIDE as i64 && y < SIDE as i64;
            let (pb, pa) = if on {
                (
                    b.get(x as usize, y as usize) as i64,
                    a.get(x as usize, y as usize) as i64,
                )
            } else {
                (0, 0)
            };
            s += ((pb - pa) * (pb - pa)) as u64;
        }
    }
    s
}

/// `[class][window]` minimal squared window distances, by brute force.
pub fn naive_minima(b: &Image, classes: &[Vec<Image>], size: usize) -> Vec<Vec<u64>> {
    classes
        .iter()
        .map(|class| {
            (0..PIXELS)
                .map(|w| {
                    class
                        .iter()
                        .map(|a| naive_window_sq(b, a, w, size))
                        .min()
                        .unwrap()
                })
                .collect()
        })
        .collect()
}

pub fn first_argmin(v: &[u64]) -> usize {
    let m = *v.iter().min().unwrap();
    v.iter().position(|&x| x == m).unwrap()
}

/// Class distances and prediction from a brute-force minima table.
pub fn naive_classify(minima: &[Vec<u64>], excluded: &[usize]) -> (usize, Vec<u64>) {
    let totals: Vec<u64> = minima
        .iter()
        .map(|row| {
            (0..PIXELS)
                .filter(|w| !excluded.contains(w))
                .map(|w| row[w])
                .sum()
        })
        .collect();
    (first_argmin(&totals), totals)
}

/// Bilinear inverse-map rotation written out with explicit neighbour
/// weights and a rotation matrix, independent of the library code.
pub fn naive_rotate(img: &Image, degrees: f64) -> Image {
    let t = degrees.to_radians();
    let c = 13.5;
    // inverse of the on-screen counter-clockwise rotation
    let m = [[t.cos(), -t.sin()], [t.sin(), t.cos()]];
    let mut out = Image::zeros();
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (u, v) = (x as f64 - c, y as f64 - c);
            let sx = m[0][0] * u + m[0][1] * v + c;
            let sy = m[1][0] * u + m[1][1] * v + c;
            let (ix, iy) = (sx.floor() as i64, sy.floor() as i64);
            let (ax, ay) = (sx - ix as f64, sy - iy as f64);
            let mut acc = 0.0;
            for (ox, wx) in [(0, 1.0 - ax), (1, ax)] {
                for (oy, wy) in [(0, 1.0 - ay), (1, ay)] {
                    let (px, py) = (ix + ox, iy + oy);
                    if px >= 0 && py >= 0 && px < 28 && py < 28 {
                        acc += wx * wy * img.get(px as usize, py as usize) as f64;
                    }
                }
            }
            let r = (acc + 0.5).floor();
            out.set(x, y, r.clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Linear resampling of a 1-D signal of length `n` to length `m` using
/// pixel-centre alignment, zero outside the signal.
pub fn naive_resample(signal: &[f64], m: usize) -> Vec<f64> {
    let n = signal.len();
    let at = |i: i64| {
        if i >= 0 && (i as usize) < n {
            signal[i as usize]
        } else {
            0.0
        }
    };
    (0..m)
        .map(|k| {
            let s = (k as f64 + 0.5) * n as f64 / m as f64 - 0.5;
            let i = s.floor() as i64;
            let f = s - i as f64;
            at(i) * (1.0 - f) + at(i + 1) * f
        })
        .collect()
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/mnist-sample")
}

/// The bundled 10 000-digit MNIST sample (863–1127 images per digit).
pub fn mnist_sample() -> LabeledDataset {
    let dir = data_dir();
    load_idx(
        dir.join("images-idx3-ubyte.gz"),
        dir.join("labels-idx1-ubyte.gz"),
    )
    .expect("bundled MNIST sample")
}
