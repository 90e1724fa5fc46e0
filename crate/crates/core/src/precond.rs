//! Frequency and pixel preconditioners, their composition `M = M_f ∘ M_p`,
//! and the skew-symmetric solenoidal operators.
//!
//! Both masks act by element-wise division: `M_f[x] = Re F⁻¹(F[x] / R_f)` and
//! `M_p[x] = x / R_p`. Each factor is self-adjoint, so `Mᵀ = M_p ∘ M_f`.

use serde::{Deserialize, Serialize};

use crate::error::{PdsError, Result};
use crate::fourier::{dft2, filter_in_place, filter_with, transform_in_place, Multiplier};
use crate::tensor::{Shape, Tensor};
use num_complex::Complex64;

/// Entries below this are raised to it before any division.
pub const MASK_FLOOR: f64 = 1e-6;

/// Result of building a mask from data, with any degenerate-input warning.
#[derive(Debug, Clone)]
pub struct BuiltMask<M> {
    pub mask: M,
    pub warning: Option<String>,
}

/// `R ← (R / max R + α − 1) / α`, then floored at [`MASK_FLOOR`].
fn normalize(raw: &mut [f64], alpha: f64) -> Option<String> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        raw.iter_mut().for_each(|r| *r = 1.0);
        return Some("dataset has zero energy (max R = 0); using identity mask".to_string());
    }
    for r in raw.iter_mut() {
        *r = ((*r / max + alpha - 1.0) / alpha).max(MASK_FLOOR);
    }
    None
}

fn check_dataset(dataset: &[Tensor], alpha: f64) -> Result<Shape> {
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(PdsError::InvalidArgument(format!("alpha must be a finite value >= 1, got {alpha}")));
    }
    let first = dataset.first().ok_or(PdsError::EmptyDataset)?;
    let shape = first.shape();
    for x in dataset {
        shape.ensure_eq(&x.shape())?;
    }
    Ok(shape)
}

fn check_positive(values: &Tensor) -> Result<()> {
    match values.data().iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        Some(v) => Err(PdsError::InvalidArgument(format!("mask entries must be finite and positive, found {v}"))),
        None => Ok(()),
    }
}

/// Averages every entry with its point reflection `(c, -h, -w)`.
fn symmetrize(values: &mut Tensor) {
    let shape = values.shape();
    let src = values.data().to_vec();
    for (i, v) in values.data_mut().iter_mut().enumerate() {
        *v = 0.5 * (src[i] + src[shape.reflect(i)]);
    }
}

/// Frequency mask `R_f`, stored in unshifted DFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMask {
    values: Tensor,
    reciprocal: Vec<f64>,
    divide: Multiplier,
    multiply: Multiplier,
    alpha: f64,
    identity: bool,
}

impl SpectralMask {
    /// Wraps arbitrary positive mask values. Values are symmetrized so the
    /// operator maps real tensors to real tensors.
    pub fn new(mut values: Tensor, alpha: f64) -> Result<Self> {
        check_positive(&values)?;
        symmetrize(&mut values);
        let identity = values.data().iter().all(|&v| v == 1.0);
        let reciprocal: Vec<f64> = values.data().iter().map(|v| 1.0 / v).collect();
        let divide = Multiplier::new(values.shape(), &reciprocal);
        let multiply = Multiplier::new(values.shape(), values.data());
        Ok(SpectralMask { values, reciprocal, divide, multiply, alpha, identity })
    }

    pub fn identity(shape: Shape) -> Self {
        SpectralMask::new(Tensor::filled(shape, 1.0), f64::INFINITY).expect("ones are valid")
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn shape(&self) -> Shape {
        self.values.shape()
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// Mask whose division equalizes per-frequency contraction rates of a
    /// Gaussian with per-frequency variances `variances`:
    /// `R(k) = sqrt(min v / v(k))`, so `MMᵀ` scales each frequency by `v(k) / min v`.
    pub fn matched_to_variances(variances: &Tensor) -> Result<Self> {
        check_positive(variances)?;
        let vmin = variances.min();
        SpectralMask::new(variances.map(|v| (vmin / v).sqrt()), 1.0)
    }
}

/// Pixel mask `R_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    values: Tensor,
    reciprocal: Vec<f64>,
    alpha: f64,
    identity: bool,
}

impl PixelMask {
    pub fn new(values: Tensor, alpha: f64) -> Result<Self> {
        check_positive(&values)?;
        let identity = values.data().iter().all(|&v| v == 1.0);
        let reciprocal = values.data().iter().map(|v| 1.0 / v).collect();
        Ok(PixelMask { values, reciprocal, alpha, identity })
    }

    pub fn identity(shape: Shape) -> Self {
        PixelMask::new(Tensor::filled(shape, 1.0), f64::INFINITY).expect("ones are valid")
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn shape(&self) -> Shape {
        self.values.shape()
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }
}

/// `R_f = log(mean |F x|² + 1)`, normalized with `alpha`.
pub fn build_frequency_mask(dataset: &[Tensor], alpha: f64) -> Result<BuiltMask<SpectralMask>> {
    let shape = check_dataset(dataset, alpha)?;
    let mut power = vec![0.0; shape.len()];
    for x in dataset {
        for (p, z) in power.iter_mut().zip(dft2(x).data()) {
            *p += z.norm_sqr();
        }
    }
    let n = dataset.len() as f64;
    let mut raw = Tensor::from_vec(shape, power.iter().map(|p| (p / n + 1.0).ln()).collect())?;
    symmetrize(&mut raw);
    let mut values = raw.into_vec();
    let warning = normalize(&mut values, alpha);
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let mask = SpectralMask::new(Tensor::from_vec(shape, values)?, alpha)?;
    Ok(BuiltMask { mask, warning })
}

/// `R_p = log(mean x ⊙ x + 1)`, normalized with `alpha`.
pub fn build_pixel_mask(dataset: &[Tensor], alpha: f64) -> Result<BuiltMask<PixelMask>> {
    let shape = check_dataset(dataset, alpha)?;
    let mut second = vec![0.0; shape.len()];
    for x in dataset {
        for (s, v) in second.iter_mut().zip(x.data()) {
            *s += v * v;
        }
    }
    let n = dataset.len() as f64;
    let mut values: Vec<f64> = second.iter().map(|s| (s / n + 1.0).ln()).collect();
    let warning = normalize(&mut values, alpha);
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let mask = PixelMask::new(Tensor::from_vec(shape, values)?, alpha)?;
    Ok(BuiltMask { mask, warning })
}

/// Position of storage index `i` on the fftshifted grid of length `n`.
fn shifted_position(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// Two-level radial mask: 1 inside `(h − H/2)² + (w − W/2)² ≤ 2r²` on the
/// centered spectrum, `lambda` outside. Not normalized.
pub fn build_radial_mask(shape: Shape, r: f64, lambda: f64) -> Result<SpectralMask> {
    if !(r > 0.0) || !(lambda > 0.0) {
        return Err(PdsError::InvalidArgument(format!("radial mask needs r > 0 and lambda > 0, got r={r}, lambda={lambda}")));
    }
    let (hh, ww) = (shape.height as f64, shape.width as f64);
    let values = Tensor::from_fn(shape, |_, h, w| {
        let ph = shifted_position(h, shape.height) as f64 - 0.5 * hh;
        let pw = shifted_position(w, shape.width) as f64 - 0.5 * ww;
        if ph * ph + pw * pw <= 2.0 * r * r {
            1.0
        } else {
            lambda
        }
    });
    SpectralMask::new(values, 1.0)
}

pub fn apply_frequency(mask: &SpectralMask, x: &Tensor) -> Result<Tensor> {
    mask.shape().ensure_eq(&x.shape())?;
    if mask.identity {
        return Ok(x.clone());
    }
    Ok(filter_with(x, &mask.divide))
}

pub fn apply_pixel(mask: &PixelMask, x: &Tensor) -> Result<Tensor> {
    mask.shape().ensure_eq(&x.shape())?;
    if mask.identity {
        return Ok(x.clone());
    }
    let data = x.data().iter().zip(&mask.reciprocal).map(|(v, r)| v * r).collect();
    Tensor::from_vec(x.shape(), data)
}

fn pixel_multiply(x: &Tensor, factors: &[f64]) -> Tensor {
    let data = x.data().iter().zip(factors).map(|(v, r)| v * r).collect();
    Tensor::from_vec(x.shape(), data).expect("shape preserved")
}

/// Which composition `apply_gradient_transform` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientOrder {
    /// `M[Mᵀ[g]] = M_f[M_p[M_p[M_f[g]]]]`
    #[default]
    MtThenM,
    /// `M_p[M_f[M_f[M_p[g]]]]`
    MpMf2Mp,
}

/// The composed linear operator `M = M_f ∘ M_p`. Absent masks act as identity.
#[derive(Debug, Clone, Default)]
pub struct Preconditioner {
    frequency: Option<SpectralMask>,
    pixel: Option<PixelMask>,
    order: GradientOrder,
    // cached squared reciprocals for the fused double applications
    freq_sq: Option<Multiplier>,
    pixel_sq: Option<Vec<f64>>,
}

impl Preconditioner {
    pub fn new(frequency: Option<SpectralMask>, pixel: Option<PixelMask>, order: GradientOrder) -> Result<Self> {
        if let (Some(f), Some(p)) = (&frequency, &pixel) {
            f.shape().ensure_eq(&p.shape())?;
        }
        let frequency = frequency.filter(|m| !m.is_identity());
        let pixel = pixel.filter(|m| !m.is_identity());
        let freq_sq = frequency.as_ref().map(|m| {
            let sq: Vec<f64> = m.reciprocal.iter().map(|r| r * r).collect();
            Multiplier::new(m.shape(), &sq)
        });
        let pixel_sq = pixel.as_ref().map(|m| m.reciprocal.iter().map(|r| r * r).collect());
        Ok(Preconditioner { frequency, pixel, order, freq_sq, pixel_sq })
    }

    pub fn identity() -> Self {
        Preconditioner::default()
    }

    pub fn frequency(&self) -> Option<&SpectralMask> {
        self.frequency.as_ref()
    }

    pub fn pixel(&self) -> Option<&PixelMask> {
        self.pixel.as_ref()
    }

    pub fn order(&self) -> GradientOrder {
        self.order
    }

    pub fn with_order(mut self, order: GradientOrder) -> Self {
        self.order = order;
        self
    }

    pub fn is_identity(&self) -> bool {
        self.frequency.is_none() && self.pixel.is_none()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if let Some(f) = &self.frequency {
            f.shape().ensure_eq(&x.shape())?;
        }
        if let Some(p) = &self.pixel {
            p.shape().ensure_eq(&x.shape())?;
        }
        Ok(())
    }

    fn mf(&self, x: Tensor) -> Tensor {
        match &self.frequency {
            Some(m) => filter_with(&x, &m.divide),
            None => x,
        }
    }

    fn mp(&self, x: Tensor) -> Tensor {
        match &self.pixel {
            Some(m) => pixel_multiply(&x, &m.reciprocal),
            None => x,
        }
    }

    /// `M[x] = M_f[M_p[x]]`
    pub fn apply_m(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        Ok(self.mf(self.mp(x.clone())))
    }

    /// `Mᵀ[x] = M_p[M_f[x]]`
    pub fn apply_adjoint(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        Ok(self.mp(self.mf(x.clone())))
    }

    /// `M⁻¹[x] = M_p⁻¹[M_f⁻¹[x]]` (multiply by the masks instead of dividing).
    pub fn apply_inverse(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut y = match &self.frequency {
            Some(m) => filter_with(x, &m.multiply),
            None => x.clone(),
        };
        if let Some(p) = &self.pixel {
            y = pixel_multiply(&y, p.values.data());
        }
        Ok(y)
    }

    /// Drift transform applied to the score, per [`GradientOrder`].
    pub fn apply_gradient_transform(&self, g: &Tensor) -> Result<Tensor> {
        self.check(g)?;
        let g = g.clone();
        Ok(match self.order {
            GradientOrder::MtThenM => {
                let y = self.mf(g);
                let y = match &self.pixel_sq {
                    Some(sq) => pixel_multiply(&y, sq),
                    None => y,
                };
                self.mf(y)
            }
            GradientOrder::MpMf2Mp => {
                let y = self.mp(g);
                let y = match &self.freq_sq {
                    Some(sq) => filter_with(&y, sq),
                    None => y,
                };
                self.mp(y)
            }
        })
    }

    /// `h·G + e·M[z]` where `G` is the gradient transform of `g`. Under the
    /// default order this needs two Fourier round trips instead of three:
    /// `M_f[h·M_p²[M_f[g]] + e·M_p[z]]`.
    pub fn increment(&self, g: &Tensor, z: &Tensor, h: f64, e: f64) -> Result<Tensor> {
        self.check(g)?;
        self.check(z)?;
        g.shape().ensure_eq(&z.shape())?;
        if self.order == GradientOrder::MpMf2Mp {
            let drift = self.apply_gradient_transform(g)?;
            let mz = self.apply_m(z)?;
            return drift.zip_map(&mz, |a, b| h * a + e * b);
        }
        let mut v = g.clone();
        if let Some(m) = &self.frequency {
            filter_in_place(&mut v, &m.divide);
        }
        match (&self.pixel, &self.pixel_sq) {
            (Some(p), Some(sq)) => {
                for (((a, b), q), r) in v.data_mut().iter_mut().zip(z.data()).zip(sq).zip(&p.reciprocal) {
                    *a = h * *a * q + e * b * r;
                }
            }
            _ => {
                for (a, b) in v.data_mut().iter_mut().zip(z.data()) {
                    *a = h * *a + e * b;
                }
            }
        }
        if let Some(m) = &self.frequency {
            filter_in_place(&mut v, &m.divide);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SolenoidalKind {
    /// `K − Kᵀ` with `K = Re F_c`, `F_c` the unitary DFT with centered
    /// (fftshifted) output.
    FourierAntisym,
    /// `P_{m,n} − P_{m,n}ᵀ` with `P` the circular roll by `(m, n)`.
    Shift { m: isize, n: isize },
    /// `Re F[(P_{m,n} − P_{m,n}ᵀ)[F⁻¹[x]]]`
    FourierShift { m: isize, n: isize },
}

/// A skew-symmetric operator `S` and the weight `ω` applied at the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolenoidalOp {
    pub kind: SolenoidalKind,
    pub omega: f64,
}

impl SolenoidalOp {
    pub fn new(kind: SolenoidalKind, omega: f64) -> Result<Self> {
        if !(omega >= 0.0) || !omega.is_finite() {
            return Err(PdsError::InvalidArgument(format!("omega must be finite and >= 0, got {omega}")));
        }
        Ok(SolenoidalOp { kind, omega })
    }

    /// The seven operators exercised by the steady-state checks: the six
    /// shift-based forms with offsets 1, 10, 100 and the centered-Fourier form.
    pub fn standard_kinds() -> Vec<SolenoidalKind> {
        let mut kinds: Vec<SolenoidalKind> =
            [1, 10, 100].iter().map(|&k| SolenoidalKind::Shift { m: k, n: k }).collect();
        kinds.extend([1, 10, 100].iter().map(|&k| SolenoidalKind::FourierShift { m: k, n: k }));
        kinds.push(SolenoidalKind::FourierAntisym);
        kinds
    }
}

fn complex_roll(shape: Shape, src: &[Complex64], dh: isize, dw: isize) -> Vec<Complex64> {
    let sh = dh.rem_euclid(shape.height as isize) as usize;
    let sw = dw.rem_euclid(shape.width as isize) as usize;
    let mut out = vec![Complex64::default(); src.len()];
    for c in 0..shape.channels {
        for h in 0..shape.height {
            let src_h = (h + shape.height - sh) % shape.height;
            for w in 0..shape.width {
                let src_w = (w + shape.width - sw) % shape.width;
                out[shape.index(c, h, w)] = src[shape.index(c, src_h, src_w)];
            }
        }
    }
    out
}

fn to_complex(x: &Tensor) -> Vec<Complex64> {
    x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// `S[x]` without the `ω` weight.
pub fn apply_solenoidal(kind: SolenoidalKind, x: &Tensor) -> Result<Tensor> {
    let shape = x.shape();
    match kind {
        SolenoidalKind::Shift { m, n } => x.roll(m, n).sub(&x.roll(-m, -n)),
        SolenoidalKind::FourierAntisym => {
            let (ch, cw) = ((shape.height / 2) as isize, (shape.width / 2) as isize);
            let unitary = 1.0 / (shape.plane() as f64).sqrt();
            // K x = Re(shift(F x))
            let mut fx = to_complex(x);
            transform_in_place(shape, &mut fx, false);
            let kx = complex_roll(shape, &fx, ch, cw);
            // Kᵀ x = Re(F(shift⁻¹ x))
            let mut fs = to_complex(&x.roll(-ch, -cw));
            transform_in_place(shape, &mut fs, false);
            let data = kx.iter().zip(&fs).map(|(a, b)| (a.re - b.re) * unitary).collect();
            Tensor::from_vec(shape, data)
        }
        SolenoidalKind::FourierShift { m, n } => {
            let plane = shape.plane() as f64;
            let mut y = to_complex(x);
            transform_in_place(shape, &mut y, true);
            y.iter_mut().for_each(|z| *z /= plane);
            let fwd = complex_roll(shape, &y, m, n);
            let back = complex_roll(shape, &y, -m, -n);
            let mut diff: Vec<Complex64> = fwd.iter().zip(&back).map(|(a, b)| a - b).collect();
            transform_in_place(shape, &mut diff, false);
            Tensor::from_vec(shape, diff.iter().map(|z| z.re).collect())
        }
    }
}
