//! Fixtures shared by the benchmarks.

use pds_core::oracle::power_law_spectrum;
use pds_core::rng::gaussian_noise;
use pds_core::*;

pub fn shape(c: usize, h: usize, w: usize) -> Shape {
    Shape::new(c, h, w).expect("nonzero dims")
}

/// Matched power-law frequency mask (condition 10³) and a random pixel mask in `[0.5, 1]`.
pub fn masks(sh: Shape, seed: u64) -> (SpectralMask, PixelMask) {
    let f = SpectralMask::matched_to_variances(&power_law_spectrum(sh, 1e3).expect("valid condition")).expect("positive spectrum");
    let mut rng = RngStream::new(seed, 1);
    let p = PixelMask::new(Tensor::from_fn(sh, |_, _, _| 0.5 + 0.5 * rng.uniform()), 1.0).expect("mask in range");
    (f, p)
}

pub fn noise(sh: Shape, seed: u64, stream: u64) -> Tensor {
    gaussian_noise(sh, &mut RngStream::new(seed, stream))
}
