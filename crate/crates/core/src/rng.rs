//! Seeded, independently addressable random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Shape, Tensor};

/// A ChaCha8 keystream selected by `(seed, stream_id)`.
///
/// The same pair always yields the same draws; distinct stream ids give
/// non-overlapping keystreams under the same seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream for sub-task `index` (e.g. chain number). Depends only on
    /// `(seed, stream_id, index)`, never on how much of `self` was consumed.
    pub fn derive(&self, index: u64) -> RngStream {
        let child_seed = splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0xA5A5_5A5A)));
        RngStream::new(child_seed, index)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }
}

/// Tensor of i.i.d. standard normal entries drawn from `rng`.
pub fn gaussian_noise(shape: Shape, rng: &mut RngStream) -> Tensor {
    let data = (0..shape.len()).map(|_| rng.standard_normal()).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Source of the `z ~ N(0, I)` draws consumed by sampler steps.
pub trait NoiseSource {
    fn noise(&mut self, shape: Shape) -> Tensor;
}

impl NoiseSource for RngStream {
    fn noise(&mut self, shape: Shape) -> Tensor {
        gaussian_noise(shape, self)
    }
}

/// Wraps a noise source and reorders each draw, `out[i] = z[perm[i]]`.
/// Used to couple a sampler with its coordinate-permuted twin.
#[derive(Debug, Clone)]
pub struct PermutedNoise<N> {
    inner: N,
    perm: Vec<usize>,
}

impl<N: NoiseSource> PermutedNoise<N> {
    pub fn new(inner: N, perm: Vec<usize>) -> Self {
        PermutedNoise { inner, perm }
    }
}

impl<N: NoiseSource> NoiseSource for PermutedNoise<N> {
    fn noise(&mut self, shape: Shape) -> Tensor {
        self.inner.noise(shape).permute(&self.perm).expect("permutation length matches shape")
    }
}
