//! Per-channel 2D discrete Fourier transform.
//!
//! Forward transform is unnormalized, `S(k, l) = Σ x(h, w) exp(-2πi(hk/H + wl/W))`;
//! the inverse carries the `1/(HW)` factor. Any `H`, `W` is supported (rustfft
//! picks mixed-radix or Bluestein plans as needed).

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::tensor::{Shape, Tensor};

/// Complex spectrum with the same `C×H×W` layout as the tensor it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    shape: Shape,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn from_vec(shape: Shape, data: Vec<Complex64>) -> crate::Result<Self> {
        if data.len() != shape.len() {
            return Err(crate::PdsError::InvalidArgument(format!(
                "spectrum length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Spectrum { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, h: usize, w: usize) -> Complex64 {
        self.data[self.shape.index(c, h, w)]
    }

    /// Largest `|S(k) - conj(S(-k))|`; zero for spectra of real tensors.
    pub fn conjugate_asymmetry(&self) -> f64 {
        (0..self.data.len())
            .map(|i| (self.data[i] - self.data[self.shape.reflect(i)].conj()).norm())
            .fold(0.0, f64::max)
    }
}

struct Plan {
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    real_fwd: Arc<dyn RealToComplex<f64>>,
    real_inv: Arc<dyn ComplexToReal<f64>>,
}

struct Planners {
    complex: FftPlanner<f64>,
    real: RealFftPlanner<f64>,
    cache: HashMap<(usize, usize), Arc<Plan>>,
}

thread_local! {
    static PLANS: RefCell<Planners> = RefCell::new(Planners {
        complex: FftPlanner::new(),
        real: RealFftPlanner::new(),
        cache: HashMap::new(),
    });
    static FILTER_BUFFERS: RefCell<[Vec<Complex64>; 3]> = const { RefCell::new([Vec::new(), Vec::new(), Vec::new()]) };
}

fn plan_for(height: usize, width: usize) -> Arc<Plan> {
    PLANS.with(|cell| {
        let p = &mut *cell.borrow_mut();
        if let Some(plan) = p.cache.get(&(height, width)) {
            return plan.clone();
        }
        let plan = Arc::new(Plan {
            row_fwd: p.complex.plan_fft_forward(width),
            col_fwd: p.complex.plan_fft_forward(height),
            row_inv: p.complex.plan_fft_inverse(width),
            col_inv: p.complex.plan_fft_inverse(height),
            real_fwd: p.real.plan_fft_forward(width),
            real_inv: p.real.plan_fft_inverse(width),
        });
        p.cache.insert((height, width), plan.clone());
        plan
    })
}

/// In-place unnormalized 2D transform of every channel plane.
pub(crate) fn transform_in_place(shape: Shape, buf: &mut [Complex64], inverse: bool) {
    let (h, w) = (shape.height, shape.width);
    let plan = plan_for(h, w);
    let (row, col) = if inverse { (&plan.row_inv, &plan.col_inv) } else { (&plan.row_fwd, &plan.col_fwd) };
    let scratch_len = row.get_inplace_scratch_len().max(col.get_inplace_scratch_len());
    let mut scratch = vec![Complex64::default(); scratch_len];
    let mut transposed = vec![Complex64::default(); shape.plane()];

    // Rows of all channels are contiguous, so one call handles them.
    row.process_with_scratch(buf, &mut scratch[..row.get_inplace_scratch_len()]);
    for plane in buf.chunks_exact_mut(shape.plane()) {
        transpose::transpose(plane, &mut transposed, w, h);
        col.process_with_scratch(&mut transposed, &mut scratch[..col.get_inplace_scratch_len()]);
        transpose::transpose(&transposed, plane, h, w);
    }
}

pub fn dft2(x: &Tensor) -> Spectrum {
    let shape = x.shape();
    let mut data: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_in_place(shape, &mut data, false);
    Spectrum { shape, data }
}

/// Direct double-sum evaluation of [`dft2`], `O((HW)²)` per channel.
pub fn dft2_direct(x: &Tensor) -> Spectrum {
    let shape = x.shape();
    let (h, w) = (shape.height, shape.width);
    let mut data = vec![Complex64::default(); shape.len()];
    for (plane, out) in x.data().chunks_exact(shape.plane()).zip(data.chunks_exact_mut(shape.plane())) {
        for k in 0..h {
            for l in 0..w {
                let mut acc = Complex64::default();
                for a in 0..h {
                    for b in 0..w {
                        let turns = ((a * k) % h) as f64 / h as f64 + ((b * l) % w) as f64 / w as f64;
                        acc += plane[a * w + b] * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * turns);
                    }
                }
                out[k * w + l] = acc;
            }
        }
    }
    Spectrum { shape, data }
}

/// Inverse transform plus the max-norm of the imaginary part that was dropped.
pub fn idft2_with_residue(s: &Spectrum) -> (Tensor, f64) {
    let shape = s.shape;
    let mut data = s.data.clone();
    transform_in_place(shape, &mut data, true);
    let norm = 1.0 / shape.plane() as f64;
    let mut residue = 0.0f64;
    let real = data
        .iter()
        .map(|z| {
            residue = residue.max((z.im * norm).abs());
            z.re * norm
        })
        .collect();
    (Tensor::from_vec(shape, real).expect("shape preserved"), residue)
}

/// Inverse of [`dft2`], keeping the real part. A residue above `1e-10` relative
/// to the output scale is logged as a warning.
pub fn idft2(s: &Spectrum) -> Tensor {
    let (x, residue) = idft2_with_residue(s);
    let scale = x.max_abs().max(1.0);
    if residue > 1e-10 * scale {
        log::warn!("idft2 discarded imaginary residue {residue:.3e} (input not conjugate-symmetric)");
    }
    x
}

/// A real per-frequency multiplier, symmetric under `(h, w) → (−h, −w)`,
/// pre-arranged in the transposed half-spectrum layout used by [`filter_with`].
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Multiplier {
    shape: Shape,
    half: Vec<f64>,
}

impl Multiplier {
    pub(crate) fn new(shape: Shape, values: &[f64]) -> Self {
        assert_eq!(values.len(), shape.len(), "multiplier length");
        let (h, w) = (shape.height, shape.width);
        let cols = w / 2 + 1;
        let norm = 1.0 / shape.plane() as f64;
        let mut half = Vec::with_capacity(shape.channels * cols * h);
        for c in 0..shape.channels {
            for l in 0..cols {
                for k in 0..h {
                    half.push(values[shape.index(c, k, l)] * norm);
                }
            }
        }
        Multiplier { shape, half }
    }
}

/// Applies a real per-frequency multiplier: `Re(F⁻¹(F(x) ⊙ m))`.
///
/// `multiplier` has the tensor's shape and must be symmetric under
/// `(h, w) → (−h, −w)`.
pub(crate) fn filter(x: &Tensor, multiplier: &[f64]) -> Tensor {
    filter_with(x, &Multiplier::new(x.shape(), multiplier))
}

/// [`filter`] with a prepared multiplier. Uses real-input transforms over the
/// half spectrum.
pub(crate) fn filter_with(x: &Tensor, m: &Multiplier) -> Tensor {
    let mut out = x.clone();
    filter_in_place(&mut out, m);
    out
}

/// [`filter_with`] overwriting its input.
pub(crate) fn filter_in_place(x: &mut Tensor, m: &Multiplier) {
    let shape = x.shape();
    assert_eq!(shape, m.shape, "multiplier shape");
    let (h, w) = (shape.height, shape.width);
    let half = w / 2 + 1;
    let plan = plan_for(h, w);
    let scratch_len = plan
        .real_fwd
        .get_scratch_len()
        .max(plan.real_inv.get_scratch_len())
        .max(plan.col_fwd.get_inplace_scratch_len())
        .max(plan.col_inv.get_inplace_scratch_len());
    FILTER_BUFFERS.with(|cell| {
        let [scratch, rows, cols] = &mut *cell.borrow_mut();
        scratch.resize(scratch_len, Complex64::default());
        rows.resize(h * half, Complex64::default());
        cols.resize(h * half, Complex64::default());
        for (plane, mc) in x.data_mut().chunks_exact_mut(shape.plane()).zip(m.half.chunks_exact(h * half)) {
            for (line, spec) in plane.chunks_exact_mut(w).zip(rows.chunks_exact_mut(half)) {
                plan.real_fwd.process_with_scratch(line, spec, scratch).expect("buffer sizes match plan");
            }
            transpose::transpose(rows, cols, half, h);
            plan.col_fwd.process_with_scratch(cols, &mut scratch[..plan.col_fwd.get_inplace_scratch_len()]);
            for (z, f) in cols.iter_mut().zip(mc) {
                *z *= *f;
            }
            plan.col_inv.process_with_scratch(cols, &mut scratch[..plan.col_inv.get_inplace_scratch_len()]);
            transpose::transpose(cols, rows, h, half);
            for (line, spec) in plane.chunks_exact_mut(w).zip(rows.chunks_exact_mut(half)) {
                // DC and Nyquist bins of a real row are real; drop rounding residue
                spec[0].im = 0.0;
                if w % 2 == 0 {
                    spec[half - 1].im = 0.0;
                }
                plan.real_inv.process_with_scratch(spec, line, scratch).expect("buffer sizes match plan");
            }
        }
    });
}
