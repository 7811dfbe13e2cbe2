//! The 28×28 greyscale image type shared by every module.

use std::fmt;

/// Pixels per image side.
pub const SIDE: usize = 28;
/// Pixels per image.
pub const PIXELS: usize = SIDE * SIDE;
/// Digit classes 0..=9.
pub const NUM_CLASSES: usize = 10;

/// A 28×28 greyscale image stored row-major; 0 is background.
///
/// Pixel `(x, y)` is column `x`, row `y`. Reads outside the screen return 0.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image([u8; PIXELS]);

impl Image {
    pub const fn zeros() -> Self {
        Image([0; PIXELS])
    }

    pub fn from_pixels(pixels: [u8; PIXELS]) -> Self {
        Image(pixels)
    }

    /// Builds an image from a slice of exactly 784 bytes.
    pub fn from_slice(pixels: &[u8]) -> Option<Self> {
        let arr: [u8; PIXELS] = pixels.try_into().ok()?;
        Some(Image(arr))
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut px = [0u8; PIXELS];
        for y in 0..SIDE {
            for x in 0..SIDE {
                px[y * SIDE + x] = f(x, y);
            }
        }
        Image(px)
    }

    #[inline]
    pub fn pixels(&self) -> &[u8; PIXELS] {
        &self.0
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [u8; PIXELS] {
        &mut self.0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.0[y * SIDE + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.0[y * SIDE + x] = v;
    }

    /// Zero-padded read: any coordinate off the screen is background.
    #[inline]
    pub fn get_padded(&self, x: isize, y: isize) -> u8 {
        if x < 0 || y < 0 || x >= SIDE as isize || y >= SIDE as isize {
            0
        } else {
            self.0[y as usize * SIDE + x as usize]
        }
    }

    /// Sum of all intensities.
    pub fn mass(&self) -> u64 {
        self.0.iter().map(|&p| p as u64).sum()
    }

    /// Squared Euclidean distance over the whole screen.
    pub fn squared_distance(&self, other: &Image) -> u64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(&a, &b)| {
                let d = a as i32 - b as i32;
                (d * d) as u64
            })
            .sum()
    }

    /// The image with rows and columns swapped, for display of EMNIST data.
    pub fn transposed(&self) -> Image {
        Image::from_fn(|x, y| self.get(y, x))
    }

    /// Coarse ASCII rendering for debugging.
    pub fn to_ascii(&self) -> String {
        const RAMP: &[u8] = b" .:-=+*#%@";
        let mut s = String::with_capacity(PIXELS + SIDE);
        for y in 0..SIDE {
            for x in 0..SIDE {
                let v = self.get(x, y) as usize;
                s.push(RAMP[v * (RAMP.len() - 1) / 255] as char);
            }
            s.push('\n');
        }
        s
    }
}

impl Default for Image {
    fn default() -> Self {
        Image::zeros()
    }
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Image(mass={})", self.mass())
    }
}

impl AsRef<[u8]> for Image {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}
