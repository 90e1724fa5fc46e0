//! Closed-form targets exposing exact scores and exact noised scores.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use crate::error::{PdsError, Result};
use crate::fourier::filter;
use crate::rng::{gaussian_noise, RngStream};
use crate::tensor::{Shape, Tensor};

/// A target density standing in for a trained score network.
pub trait ScoreOracle: Send + Sync {
    fn shape(&self) -> Shape;

    /// Normalized `log p(x)` of the target convolved with `N(0, σ²I)`.
    fn noised_log_density(&self, x: &Tensor, sigma: f64) -> Result<f64>;

    /// `∇ log p_σ(x)`. `sigma = 0` gives the clean score.
    fn noised_score(&self, x: &Tensor, sigma: f64) -> Result<Tensor>;

    /// Exact draw from the clean target.
    fn sample_exact(&self, rng: &mut RngStream) -> Tensor;

    /// Exact draw from the noised target.
    fn sample_noised(&self, sigma: f64, rng: &mut RngStream) -> Result<Tensor> {
        check_sigma(sigma)?;
        let mut x = self.sample_exact(rng);
        x.axpy(sigma, &gaussian_noise(self.shape(), rng))?;
        Ok(x)
    }

    fn log_density(&self, x: &Tensor) -> Result<f64> {
        self.noised_log_density(x, 0.0)
    }

    fn score(&self, x: &Tensor) -> Result<Tensor> {
        self.noised_score(x, 0.0)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(PdsError::NonPositiveSigma(sigma))
    }
}

/// Public entry points require `σ > 0`; the trait's `σ = 0` path is the clean score.
pub fn noised_score(oracle: &dyn ScoreOracle, x: &Tensor, sigma: f64) -> Result<Tensor> {
    if !(sigma > 0.0) {
        return Err(PdsError::NonPositiveSigma(sigma));
    }
    oracle.noised_score(x, sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Isotropic(f64),
    /// Per-coordinate variances.
    Diagonal(Tensor),
    /// Per-frequency variances: `Σ = F⁻¹ diag(v) F`, the eigenvalues of `Σ` are `v`.
    FrequencyDiagonal(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    mean: Tensor,
    cov: Covariance,
}

fn check_variances(v: &Tensor) -> Result<()> {
    if v.data().iter().all(|x| *x > 0.0 && x.is_finite()) {
        Ok(())
    } else {
        Err(PdsError::InvalidArgument("variances must be finite and strictly positive".into()))
    }
}

impl GaussianTarget {
    pub fn new(mean: Tensor, cov: Covariance) -> Result<Self> {
        let cov = match cov {
            Covariance::Isotropic(v) => {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(PdsError::InvalidArgument(format!("isotropic variance must be positive, got {v}")));
                }
                Covariance::Isotropic(v)
            }
            Covariance::Diagonal(v) => {
                mean.shape().ensure_eq(&v.shape())?;
                check_variances(&v)?;
                Covariance::Diagonal(v)
            }
            Covariance::FrequencyDiagonal(v) => {
                mean.shape().ensure_eq(&v.shape())?;
                check_variances(&v)?;
                let shape = v.shape();
                let sym = Tensor::from_fn(shape, |c, h, w| {
                    let i = shape.index(c, h, w);
                    0.5 * (v.data()[i] + v.data()[shape.reflect(i)])
                });
                Covariance::FrequencyDiagonal(sym)
            }
        };
        Ok(GaussianTarget { mean, cov })
    }

    pub fn isotropic(mean: Tensor, v: f64) -> Result<Self> {
        GaussianTarget::new(mean, Covariance::Isotropic(v))
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    /// Per-coordinate marginal variances of `N(μ, Σ + σ²I)`.
    pub fn marginal_variances(&self, sigma: f64) -> Tensor {
        let s2 = sigma * sigma;
        let shape = self.mean.shape();
        match &self.cov {
            Covariance::Isotropic(v) => Tensor::filled(shape, v + s2),
            Covariance::Diagonal(v) => v.map(|x| x + s2),
            // Σ_ii = mean over frequencies of v within the channel
            Covariance::FrequencyDiagonal(v) => {
                let plane = shape.plane();
                let per_channel: Vec<f64> =
                    v.data().chunks_exact(plane).map(|c| c.iter().sum::<f64>() / plane as f64).collect();
                Tensor::from_fn(shape, |c, _, _| per_channel[c] + s2)
            }
        }
    }

    /// `(Σ + σ²I)⁻¹ r`
    fn precision_apply(&self, r: &Tensor, s2: f64) -> Tensor {
        match &self.cov {
            Covariance::Isotropic(v) => r.scale(1.0 / (v + s2)),
            Covariance::Diagonal(v) => r.zip_map(v, |a, b| a / (b + s2)).expect("shape checked"),
            Covariance::FrequencyDiagonal(v) => {
                let inv: Vec<f64> = v.data().iter().map(|x| 1.0 / (x + s2)).collect();
                filter(r, &inv)
            }
        }
    }

    fn log_det(&self, s2: f64) -> f64 {
        let d = self.mean.len() as f64;
        match &self.cov {
            Covariance::Isotropic(v) => d * (v + s2).ln(),
            Covariance::Diagonal(v) | Covariance::FrequencyDiagonal(v) => v.data().iter().map(|x| (x + s2).ln()).sum(),
        }
    }
}

impl ScoreOracle for GaussianTarget {
    fn shape(&self) -> Shape {
        self.mean.shape()
    }

    fn noised_log_density(&self, x: &Tensor, sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        let r = x.sub(&self.mean)?;
        let s2 = sigma * sigma;
        let quad = r.dot(&self.precision_apply(&r, s2))?;
        let d = self.mean.len() as f64;
        Ok(-0.5 * (quad + self.log_det(s2) + d * (2.0 * PI).ln()))
    }

    fn noised_score(&self, x: &Tensor, sigma: f64) -> Result<Tensor> {
        check_sigma(sigma)?;
        let r = self.mean.sub(x)?;
        Ok(self.precision_apply(&r, sigma * sigma))
    }

    fn sample_exact(&self, rng: &mut RngStream) -> Tensor {
        let z = gaussian_noise(self.shape(), rng);
        let dev = match &self.cov {
            Covariance::Isotropic(v) => z.scale(v.sqrt()),
            Covariance::Diagonal(v) => z.zip_map(v, |a, b| a * b.sqrt()).expect("shape checked"),
            Covariance::FrequencyDiagonal(v) => {
                let sd: Vec<f64> = v.data().iter().map(|x| x.sqrt()).collect();
                filter(&z, &sd)
            }
        };
        self.mean.add(&dev).expect("shape checked")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTarget {
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    components: Vec<GaussianTarget>,
}

impl MixtureTarget {
    pub fn new(components: Vec<(f64, GaussianTarget)>) -> Result<Self> {
        let first = components.first().ok_or_else(|| PdsError::InvalidArgument("mixture needs a component".into()))?;
        let shape = first.1.shape();
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(PdsError::InvalidArgument(format!("mixture weights sum to {total}, expected 1")));
        }
        for (w, g) in &components {
            shape.ensure_eq(&g.shape())?;
            if !(*w > 0.0) {
                return Err(PdsError::InvalidArgument(format!("mixture weight {w} is not positive")));
            }
        }
        let weights: Vec<f64> = components.iter().map(|(w, _)| *w).collect();
        Ok(MixtureTarget {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            components: components.into_iter().map(|(_, g)| g).collect(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianTarget] {
        &self.components
    }

    /// Component index first, then the draw.
    pub fn sample_labeled(&self, rng: &mut RngStream) -> (usize, Tensor) {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        (k, self.components[k].sample_exact(rng))
    }

    fn component_logs(&self, x: &Tensor, sigma: f64) -> Result<Vec<f64>> {
        self.components
            .iter()
            .zip(&self.log_weights)
            .map(|(g, lw)| Ok(lw + g.noised_log_density(x, sigma)?))
            .collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl ScoreOracle for MixtureTarget {
    fn shape(&self) -> Shape {
        self.components[0].shape()
    }

    fn noised_log_density(&self, x: &Tensor, sigma: f64) -> Result<f64> {
        Ok(log_sum_exp(&self.component_logs(x, sigma)?))
    }

    fn noised_score(&self, x: &Tensor, sigma: f64) -> Result<Tensor> {
        let logs = self.component_logs(x, sigma)?;
        let total = log_sum_exp(&logs);
        let mut out = Tensor::zeros(self.shape());
        for (g, l) in self.components.iter().zip(&logs) {
            let r = (l - total).exp();
            if r > 0.0 {
                out.axpy(r, &g.noised_score(x, sigma)?)?;
            }
        }
        Ok(out)
    }

    fn sample_exact(&self, rng: &mut RngStream) -> Tensor {
        self.sample_labeled(rng).1
    }
}

/// Gaussian with frequency-diagonal covariance whose noising process is
/// `dx = M dw` for a frequency-only preconditioner `M`: the law at level `σ`
/// is `N(μ, Σ + σ² M Mᵀ)`. Per frequency, `MMᵀ` scales by `1 / R(k)²`.
///
/// Equivalently `y = M⁻¹x` follows the plain variance-exploding process
/// started from the pushforward of the target, so the preconditioned reverse
/// pass driven by this oracle ends at `x_T = M[y_T]`.
#[derive(Debug, Clone)]
pub struct TransformedGaussian {
    base: GaussianTarget,
    variances: Tensor,
    noise_scale: Vec<f64>,
}

impl TransformedGaussian {
    pub fn new(base: GaussianTarget, mask: &crate::precond::SpectralMask) -> Result<Self> {
        base.shape().ensure_eq(&mask.shape())?;
        let variances = match base.covariance() {
            Covariance::FrequencyDiagonal(v) => v.clone(),
            Covariance::Isotropic(v) => Tensor::filled(base.shape(), *v),
            Covariance::Diagonal(_) => {
                return Err(PdsError::InvalidArgument(
                    "transformed oracle needs a covariance that is diagonal in frequency".into(),
                ))
            }
        };
        let noise_scale = mask.values().data().iter().map(|r| 1.0 / (r * r)).collect();
        Ok(TransformedGaussian { base, variances, noise_scale })
    }

    pub fn base(&self) -> &GaussianTarget {
        &self.base
    }

    fn level_variances(&self, sigma: f64) -> Vec<f64> {
        let s2 = sigma * sigma;
        self.variances.data().iter().zip(&self.noise_scale).map(|(v, m)| v + s2 * m).collect()
    }
}

impl ScoreOracle for TransformedGaussian {
    fn shape(&self) -> Shape {
        self.base.shape()
    }

    fn noised_log_density(&self, x: &Tensor, sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        let var = self.level_variances(sigma);
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / v).collect();
        let r = x.sub(self.base.mean())?;
        let quad = r.dot(&filter(&r, &inv))?;
        let log_det: f64 = var.iter().map(|v| v.ln()).sum();
        Ok(-0.5 * (quad + log_det + r.len() as f64 * (2.0 * PI).ln()))
    }

    fn noised_score(&self, x: &Tensor, sigma: f64) -> Result<Tensor> {
        check_sigma(sigma)?;
        let inv: Vec<f64> = self.level_variances(sigma).iter().map(|v| 1.0 / v).collect();
        Ok(filter(&self.base.mean().sub(x)?, &inv))
    }

    fn sample_exact(&self, rng: &mut RngStream) -> Tensor {
        self.base.sample_exact(rng)
    }

    fn sample_noised(&self, sigma: f64, rng: &mut RngStream) -> Result<Tensor> {
        check_sigma(sigma)?;
        let sd: Vec<f64> = self.level_variances(sigma).iter().map(|v| v.sqrt()).collect();
        let z = gaussian_noise(self.shape(), rng);
        self.base.mean().add(&filter(&z, &sd))
    }
}

/// Per-frequency variances `(1 + ρ²)^(−p)`, `ρ` the distance to the zero
/// frequency, with `p` set so that the largest over the smallest is `condition`.
pub fn power_law_spectrum(shape: Shape, condition: f64) -> Result<Tensor> {
    if !(condition >= 1.0) || !condition.is_finite() {
        return Err(PdsError::InvalidArgument(format!("condition number must be >= 1, got {condition}")));
    }
    let fold = |i: usize, n: usize| i.min(n - i) as f64;
    let rho2 = |h: usize, w: usize| fold(h, shape.height).powi(2) + fold(w, shape.width).powi(2);
    let top = rho2(shape.height / 2, shape.width / 2);
    if top == 0.0 {
        return Ok(Tensor::filled(shape, 1.0));
    }
    let p = condition.ln() / (1.0 + top).ln();
    Ok(Tensor::from_fn(shape, |_, h, w| (1.0 + rho2(h, w)).powf(-p)))
}

/// Score `-x` at a fixed wall-clock cost per evaluation. Stands in for a
/// network forward pass when timing sampler overhead.
#[derive(Debug, Clone)]
pub struct DummyOracle {
    shape: Shape,
    cost: Duration,
}

impl DummyOracle {
    pub fn new(shape: Shape, cost: Duration) -> Self {
        DummyOracle { shape, cost }
    }

    pub fn cost(&self) -> Duration {
        self.cost
    }
}

impl ScoreOracle for DummyOracle {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn noised_log_density(&self, x: &Tensor, sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        Ok(-0.5 * x.norm_sq())
    }

    fn noised_score(&self, x: &Tensor, sigma: f64) -> Result<Tensor> {
        check_sigma(sigma)?;
        self.shape.ensure_eq(&x.shape())?;
        let start = Instant::now();
        let out = x.scale(-1.0);
        while start.elapsed() < self.cost {
            std::hint::spin_loop();
        }
        Ok(out)
    }

    fn sample_exact(&self, rng: &mut RngStream) -> Tensor {
        gaussian_noise(self.shape, rng)
    }
}

/// `s'(x) = Π s(Πᵀ x)` where `(Π x)[i] = x[perm[i]]`.
pub struct PermutedOracle<'a> {
    inner: &'a dyn ScoreOracle,
    perm: Vec<usize>,
    inverse: Vec<usize>,
}

impl<'a> PermutedOracle<'a> {
    pub fn new(inner: &'a dyn ScoreOracle, perm: Vec<usize>) -> Result<Self> {
        let n = inner.shape().len();
        let mut inverse = vec![usize::MAX; n];
        if perm.len() != n {
            return Err(PdsError::InvalidArgument(format!("permutation length {} for dimension {n}", perm.len())));
        }
        for (i, &p) in perm.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(PdsError::InvalidArgument("not a permutation".into()));
            }
            inverse[p] = i;
        }
        Ok(PermutedOracle { inner, perm, inverse })
    }
}

impl ScoreOracle for PermutedOracle<'_> {
    fn shape(&self) -> Shape {
        self.inner.shape()
    }

    fn noised_log_density(&self, x: &Tensor, sigma: f64) -> Result<f64> {
        self.inner.noised_log_density(&x.permute(&self.inverse)?, sigma)
    }

    fn noised_score(&self, x: &Tensor, sigma: f64) -> Result<Tensor> {
        self.inner.noised_score(&x.permute(&self.inverse)?, sigma)?.permute(&self.perm)
    }

    fn sample_exact(&self, rng: &mut RngStream) -> Tensor {
        self.inner.sample_exact(rng).permute(&self.perm).expect("length checked")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_spans_condition_number() {
        let v = power_law_spectrum(Shape::new(2, 16, 12).unwrap(), 1e3).unwrap();
        assert!((v.max() - 1.0).abs() < 1e-12);
        assert!((v.max() / v.min() - 1e3).abs() < 1e-6);
        assert_eq!(v.get(1, 3, 2), v.get(1, 13, 10));
        assert_eq!(power_law_spectrum(Shape::new(1, 1, 1).unwrap(), 1e3).unwrap().data(), &[1.0]);
        assert!(power_law_spectrum(Shape::new(1, 4, 4).unwrap(), 0.5).is_err());
    }

    fn shape(c: usize, h: usize, w: usize) -> Shape {
        Shape::new(c, h, w).unwrap()
    }

    fn random(sh: Shape, seed: u64) -> Tensor {
        gaussian_noise(sh, &mut RngStream::new(seed, 0))
    }

    fn positive(sh: Shape, seed: u64) -> Tensor {
        let mut rng = RngStream::new(seed, 1);
        Tensor::from_fn(sh, |_, _, _| 0.2 + rng.uniform())
    }

    /// Central finite differences of `f` at every coordinate.
    fn fd_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, step: f64) -> Tensor {
        let mut g = Tensor::zeros(x.shape());
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data_mut()[i] += step;
            xm.data_mut()[i] -= step;
            g.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * step);
        }
        g
    }

    fn assert_rel(a: &Tensor, b: &Tensor, tol: f64) {
        let err = a.sub(b).unwrap().norm() / b.norm().max(1e-300);
        assert!(err < tol, "relative error {err:e}");
    }

    #[test]
    fn score_vanishes_at_mean_and_unit_case() {
        let sh = shape(2, 4, 4);
        let mu = random(sh, 1);
        for cov in [
            Covariance::Isotropic(2.0),
            Covariance::Diagonal(positive(sh, 2)),
            Covariance::FrequencyDiagonal(positive(sh, 3)),
        ] {
            let g = GaussianTarget::new(mu.clone(), cov).unwrap();
            assert!(g.score(&mu).unwrap().max_abs() < 1e-12);
        }
        let g = GaussianTarget::isotropic(mu.clone(), 1.0).unwrap();
        let x = random(sh, 4);
        assert_eq!(g.score(&x).unwrap(), mu.sub(&x).unwrap());
        let s = noised_score(&g, &x, 0.5).unwrap();
        assert!(s.max_abs_diff(&mu.sub(&x).unwrap().scale(1.0 / 1.25)).unwrap() < 1e-14);
    }

    #[test]
    fn noised_score_rejects_nonpositive_sigma() {
        let g = GaussianTarget::isotropic(Tensor::zeros(shape(1, 2, 2)), 1.0).unwrap();
        let x = Tensor::zeros(shape(1, 2, 2));
        assert!(matches!(noised_score(&g, &x, 0.0), Err(PdsError::NonPositiveSigma(_))));
        assert!(noised_score(&g, &x, -1.0).is_err());
        assert!(g.score(&Tensor::zeros(shape(1, 2, 3))).is_err());
    }

    #[test]
    fn mixture_score_matches_finite_differences() {
        let sh = shape(1, 3, 3);
        let a = GaussianTarget::isotropic(random(sh, 1), 0.8).unwrap();
        let b = GaussianTarget::new(random(sh, 2), Covariance::Diagonal(positive(sh, 3))).unwrap();
        let m = MixtureTarget::new(vec![(0.4, a), (0.6, b)]).unwrap();
        let x = random(sh, 5).scale(0.5);
        let fd = fd_gradient(|y| m.log_density(y).unwrap(), &x, 1e-5);
        assert_rel(&m.score(&x).unwrap(), &fd, 1e-6);
    }

    #[test]
    fn frequency_diagonal_noised_score_matches_finite_differences() {
        let sh = shape(2, 4, 6);
        let g = GaussianTarget::new(random(sh, 7), Covariance::FrequencyDiagonal(positive(sh, 8))).unwrap();
        let x = random(sh, 9);
        let fd = fd_gradient(|y| g.noised_log_density(y, 0.5).unwrap(), &x, 1e-5);
        assert_rel(&g.noised_score(&x, 0.5).unwrap(), &fd, 1e-6);
    }

    #[test]
    fn small_sigma_limit() {
        let sh = shape(1, 4, 4);
        let g = GaussianTarget::new(random(sh, 1), Covariance::Diagonal(positive(sh, 2))).unwrap();
        let x = random(sh, 3);
        assert_rel(&noised_score(&g, &x, 1e-4).unwrap(), &g.score(&x).unwrap(), 1e-6);
    }

    #[test]
    fn tiny_variance_sample_is_the_mean() {
        let mu = random(shape(1, 3, 3), 2);
        let g = GaussianTarget::isotropic(mu.clone(), 1e-12).unwrap();
        let x = g.sample_exact(&mut RngStream::new(5, 0));
        assert!(x.max_abs_diff(&mu).unwrap() < 1e-5);
        assert!(GaussianTarget::isotropic(mu, 0.0).is_err());
    }

    #[test]
    fn diagonal_sample_variances() {
        let sh = shape(1, 2, 3);
        let v = positive(sh, 4);
        let g = GaussianTarget::new(Tensor::zeros(sh), Covariance::Diagonal(v.clone())).unwrap();
        let mut rng = RngStream::new(8, 0);
        let n = 100_000;
        let mut sq = vec![0.0; sh.len()];
        for _ in 0..n {
            for (s, x) in sq.iter_mut().zip(g.sample_exact(&mut rng).data()) {
                *s += x * x;
            }
        }
        for (s, vv) in sq.iter().zip(v.data()) {
            assert!((s / n as f64 - vv).abs() / vv < 0.03);
        }
    }

    #[test]
    fn mixture_occupancy() {
        let sh = shape(1, 1, 1);
        let a = GaussianTarget::isotropic(Tensor::filled(sh, -5.0), 1.0).unwrap();
        let b = GaussianTarget::isotropic(Tensor::filled(sh, 5.0), 1.0).unwrap();
        let m = MixtureTarget::new(vec![(0.3, a), (0.7, b)]).unwrap();
        let mut rng = RngStream::new(3, 0);
        let n = 100_000;
        let first = (0..n).filter(|_| m.sample_labeled(&mut rng).0 == 0).count();
        assert!((first as f64 / n as f64 - 0.3).abs() < 0.01);
        assert!(MixtureTarget::new(vec![]).is_err());
        let c = GaussianTarget::isotropic(Tensor::zeros(sh), 1.0).unwrap();
        assert!(MixtureTarget::new(vec![(0.5, c)]).is_err());
    }

    #[test]
    fn noised_score_is_convolved_score() {
        let sh = shape(1, 4, 4);
        let v = positive(sh, 1);
        let sigma = 0.7;
        let mu = random(sh, 2);
        let g = GaussianTarget::new(mu.clone(), Covariance::Diagonal(v.clone())).unwrap();
        let conv = GaussianTarget::new(mu, Covariance::Diagonal(v.map(|x| x + sigma * sigma))).unwrap();
        let x = random(sh, 3);
        let d = g.noised_score(&x, sigma).unwrap().max_abs_diff(&conv.score(&x).unwrap()).unwrap();
        assert!(d < 1e-10);
    }

    #[test]
    fn gradient_step_lowers_energy() {
        let sh = shape(1, 4, 4);
        let g = GaussianTarget::new(Tensor::zeros(sh), Covariance::FrequencyDiagonal(positive(sh, 4))).unwrap();
        let mut rng = RngStream::new(6, 0);
        for _ in 0..100 {
            let x = gaussian_noise(sh, &mut rng).scale(2.0);
            let mut y = x.clone();
            y.axpy(1e-3, &g.score(&x).unwrap()).unwrap();
            assert!(-g.log_density(&y).unwrap() < -g.log_density(&x).unwrap());
        }
    }

    #[test]
    fn permuted_oracle_conjugates() {
        let sh = shape(1, 2, 3);
        let g = GaussianTarget::new(random(sh, 1), Covariance::Diagonal(positive(sh, 2))).unwrap();
        let perm = vec![3, 0, 5, 1, 4, 2];
        let p = PermutedOracle::new(&g, perm.clone()).unwrap();
        let x = random(sh, 3);
        let px = x.permute(&perm).unwrap();
        let lhs = p.score(&px).unwrap();
        let rhs = g.score(&x).unwrap().permute(&perm).unwrap();
        assert_eq!(lhs, rhs);
        assert!(PermutedOracle::new(&g, vec![0, 0, 1, 2, 3, 4]).is_err());
    }

    #[test]
    fn transformed_gaussian_identity_mask_matches_base() {
        let sh = shape(1, 4, 4);
        let g = GaussianTarget::new(random(sh, 1), Covariance::FrequencyDiagonal(positive(sh, 2))).unwrap();
        let t = TransformedGaussian::new(g.clone(), &crate::precond::SpectralMask::identity(sh)).unwrap();
        let x = random(sh, 3);
        let d = t.noised_score(&x, 0.3).unwrap().max_abs_diff(&g.noised_score(&x, 0.3).unwrap()).unwrap();
        assert!(d < 1e-12);
        let fd = fd_gradient(|y| t.noised_log_density(y, 0.3).unwrap(), &x, 1e-5);
        assert_rel(&t.noised_score(&x, 0.3).unwrap(), &fd, 1e-6);
    }
}
