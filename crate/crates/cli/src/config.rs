//! Experiment configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use pds_core::oracle::{power_law_spectrum, DummyOracle};
use pds_core::precond::{build_frequency_mask, build_pixel_mask};
use pds_core::ingest::{load_mask, Mask};
use pds_core::*;
use std::result::Result;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    pub schedule: ScheduleSpec,
    pub sampler: SamplerSpec,
    pub run: RunSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// `N(mean·1, variance·I)`
    Isotropic { shape: [usize; 3], mean: f64, variance: f64 },
    /// Frequency-diagonal Gaussian with per-coordinate means and per-frequency
    /// variances drawn uniformly from the given ranges.
    Spectral { shape: [usize; 3], mean: [f64; 2], variance: [f64; 2], seed: u64 },
    /// Frequency-diagonal Gaussian with a power-law spectrum of the given condition number.
    PowerLaw { shape: [usize; 3], mean: f64, condition: f64 },
    /// Two isotropic components at `±offset` with weights `weight`, `1 − weight`.
    Mixture { shape: [usize; 3], offset: f64, variance: f64, weight: f64 },
    /// Score `−x` at a fixed cost per evaluation.
    Dummy { shape: [usize; 3], cost_ms: f64 },
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Isotropic { shape: [1, 8, 8], mean: 0.0, variance: 1.0 }
    }
}

pub enum Target {
    Gaussian(GaussianTarget),
    Mixture(MixtureTarget),
    Dummy(DummyOracle),
}

impl Target {
    pub fn oracle(&self) -> &dyn ScoreOracle {
        match self {
            Target::Gaussian(g) => g,
            Target::Mixture(m) => m,
            Target::Dummy(d) => d,
        }
    }

    pub fn gaussian(&self) -> Option<&GaussianTarget> {
        match self {
            Target::Gaussian(g) => Some(g),
            _ => None,
        }
    }

    pub fn has_exact_sampler(&self) -> bool {
        !matches!(self, Target::Dummy(_))
    }
}

pub fn parse_shape(s: [usize; 3]) -> Result<Shape, CliError> {
    Ok(Shape::new(s[0], s[1], s[2])?)
}

impl TargetSpec {
    pub fn shape(&self) -> Result<Shape, CliError> {
        match *self {
            TargetSpec::Isotropic { shape, .. }
            | TargetSpec::Spectral { shape, .. }
            | TargetSpec::PowerLaw { shape, .. }
            | TargetSpec::Mixture { shape, .. }
            | TargetSpec::Dummy { shape, .. } => parse_shape(shape),
        }
    }

    pub fn build(&self) -> Result<Target, CliError> {
        let shape = self.shape()?;
        Ok(match *self {
            TargetSpec::Isotropic { mean, variance, .. } => {
                Target::Gaussian(GaussianTarget::isotropic(Tensor::filled(shape, mean), variance)?)
            }
            TargetSpec::Spectral { mean, variance, seed, .. } => {
                let mut rng = RngStream::new(seed, 0);
                let mu = Tensor::from_fn(shape, |_, _, _| mean[0] + (mean[1] - mean[0]) * rng.uniform());
                let v = Tensor::from_fn(shape, |_, _, _| variance[0] + (variance[1] - variance[0]) * rng.uniform());
                Target::Gaussian(GaussianTarget::new(mu, Covariance::FrequencyDiagonal(v))?)
            }
            TargetSpec::PowerLaw { mean, condition, .. } => Target::Gaussian(GaussianTarget::new(
                Tensor::filled(shape, mean),
                Covariance::FrequencyDiagonal(power_law_spectrum(shape, condition)?),
            )?),
            TargetSpec::Mixture { offset, variance, weight, .. } => Target::Mixture(MixtureTarget::new(vec![
                (weight, GaussianTarget::isotropic(Tensor::filled(shape, offset), variance)?),
                (1.0 - weight, GaussianTarget::isotropic(Tensor::filled(shape, -offset), variance)?),
            ])?),
            TargetSpec::Dummy { cost_ms, .. } => {
                if !(cost_ms >= 0.0) || !cost_ms.is_finite() {
                    return Err(CliError::Usage(format!("dummy cost must be >= 0 ms, got {cost_ms}")));
                }
                Target::Dummy(DummyOracle::new(shape, Duration::from_secs_f64(cost_ms / 1000.0)))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub t: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub kind: ScheduleKind,
    /// Base of the quadratic step-size rule; defaults to `0.16·sigma_min`.
    pub eps_base: Option<f64>,
    /// Constant corrector step size; overrides `eps_base`.
    pub eps: Option<f64>,
    pub accel: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec { t: 1000, sigma_min: 0.01, sigma_max: 50.0, kind: ScheduleKind::Geometric, eps_base: None, eps: None, accel: 1.0 }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<Schedule, CliError> {
        if self.kind == ScheduleKind::Custom {
            return Err(CliError::Usage("custom schedules are not configurable from a file".into()));
        }
        let rule = match (self.eps, self.eps_base) {
            (Some(eps), _) => EpsilonRule::Constant { eps },
            (None, Some(base)) => EpsilonRule::Quadratic { base },
            (None, None) => EpsilonRule::default_for(self.sigma_min),
        };
        let base = if self.t == 0 {
            Schedule::custom(Vec::new(), Vec::new())?
        } else {
            Schedule::new(self.t, self.sigma_min, self.sigma_max, self.kind, rule)?
        };
        if self.accel == 1.0 || self.t == 0 {
            return Ok(base);
        }
        Ok(base.accelerate(self.accel)?)
    }
}

/// `mmt` applies `M Mᵀ` to the score, `mtm` the `M_p M_f² M_p` form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OrderArg {
    #[default]
    Mmt,
    Mtm,
}

impl From<OrderArg> for GradientOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Mmt => GradientOrder::MtThenM,
            OrderArg::Mtm => GradientOrder::MpMf2Mp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LawArg {
    Ve,
    Unit,
    Exact,
}

impl From<LawArg> for InitialLaw {
    fn from(l: LawArg) -> Self {
        match l {
            LawArg::Ve => InitialLaw::Ve,
            LawArg::Unit => InitialLaw::Unit,
            LawArg::Exact => InitialLaw::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskSpec {
    None,
    /// PDSM files written by `build-masks`.
    Files { frequency: Option<PathBuf>, pixel: Option<PathBuf> },
    /// Built from exact samples of the target.
    Target {
        alpha: f64,
        #[serde(default = "default_mask_samples")]
        samples: usize,
        #[serde(default = "yes")]
        frequency: bool,
        #[serde(default = "yes")]
        pixel: bool,
    },
    /// Frequency mask `R = sqrt(v_min / v)` from the target's own spectrum.
    Matched,
}

fn default_mask_samples() -> usize {
    200
}

fn yes() -> bool {
    true
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSpec {
    pub mode: Mode,
    pub gradient_order: OrderArg,
    pub omega: f64,
    pub solenoidal: Option<SolenoidalKind>,
    pub initial_law: Option<LawArg>,
    pub masks: MaskSpec,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec {
            mode: Mode::PredictorCorrector,
            gradient_order: OrderArg::Mmt,
            omega: 0.0,
            solenoidal: None,
            initial_law: None,
            masks: MaskSpec::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub chains: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub trace: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec { chains: 16, seed: 0, out: None, trace: false }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Checks that referenced files exist and that both mask files agree on α.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.run.chains == 0 {
            return Err(CliError::Usage("chains must be >= 1".into()));
        }
        if let MaskSpec::Files { frequency, pixel } = &self.sampler.masks {
            for p in frequency.iter().chain(pixel) {
                if !p.is_file() {
                    return Err(CliError::Usage(format!("{}: mask file not found", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn preconditioner(&self, target: &Target) -> Result<Preconditioner, CliError> {
        let order = self.sampler.gradient_order.into();
        let shape = target.oracle().shape();
        match &self.sampler.masks {
            MaskSpec::None => Ok(Preconditioner::identity().with_order(order)),
            MaskSpec::Files { frequency, pixel } => {
                let f = match frequency {
                    Some(p) => match load_mask(p)? {
                        Mask::Frequency(m) => Some(m),
                        Mask::Pixel(_) => return Err(CliError::Usage(format!("{}: expected a frequency mask", p.display()))),
                    },
                    None => None,
                };
                let px = match pixel {
                    Some(p) => match load_mask(p)? {
                        Mask::Pixel(m) => Some(m),
                        Mask::Frequency(_) => return Err(CliError::Usage(format!("{}: expected a pixel mask", p.display()))),
                    },
                    None => None,
                };
                if let (Some(a), Some(b)) = (&f, &px) {
                    if a.alpha() != b.alpha() {
                        return Err(CliError::Usage(format!(
                            "frequency and pixel masks disagree on alpha ({} vs {})",
                            a.alpha(),
                            b.alpha()
                        )));
                    }
                }
                for s in f.iter().map(|m| m.shape()).chain(px.iter().map(|m| m.shape())) {
                    if s != shape {
                        return Err(CliError::Usage(format!("mask shape {s} does not match target shape {shape}")));
                    }
                }
                Ok(Preconditioner::new(f, px, order)?)
            }
            MaskSpec::Target { alpha, samples, frequency, pixel } => {
                if !target.has_exact_sampler() {
                    return Err(CliError::Usage("masks from target need a target with exact samples".into()));
                }
                let mut rng = RngStream::new(self.run.seed, u64::MAX);
                let data: Vec<Tensor> = (0..*samples).map(|_| target.oracle().sample_exact(&mut rng)).collect();
                let f = if *frequency { Some(build_frequency_mask(&data, *alpha)?.mask) } else { None };
                let px = if *pixel { Some(build_pixel_mask(&data, *alpha)?.mask) } else { None };
                Ok(Preconditioner::new(f, px, order)?)
            }
            MaskSpec::Matched => {
                let g = target.gaussian().ok_or_else(|| CliError::Usage("matched masks need a Gaussian target".into()))?;
                let v = pds_core::diagnostics::frequency_variances(g)
                    .ok_or_else(|| CliError::Usage("matched masks need a covariance diagonal in frequency".into()))?;
                Ok(Preconditioner::new(Some(SpectralMask::matched_to_variances(&v)?), None, order)?)
            }
        }
    }

    pub fn sampler_config(&self, target: &Target) -> Result<SamplerConfig, CliError> {
        let solenoidal = match (self.sampler.solenoidal, self.sampler.omega) {
            (Some(kind), omega) => Some(SolenoidalOp::new(kind, omega)?),
            (None, omega) if omega != 0.0 => {
                return Err(CliError::Usage("omega is set but no solenoidal kind is configured".into()))
            }
            (None, _) => None,
        };
        Ok(SamplerConfig {
            mode: self.sampler.mode,
            preconditioner: self.preconditioner(target)?,
            solenoidal,
            initial_law: self.sampler.initial_law.map(Into::into),
        })
    }
}

/// `shift:M:N`, `fourier_shift:M:N` or `fourier_antisym`.
pub fn parse_solenoidal(s: &str) -> Result<SolenoidalKind, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let offsets = |p: &[&str]| -> Result<(isize, isize), String> {
        match p {
            [m, n] => Ok((m.parse().map_err(|e| format!("{s}: {e}"))?, n.parse().map_err(|e| format!("{s}: {e}"))?)),
            _ => Err(format!("{s}: expected KIND:M:N")),
        }
    };
    match parts[0] {
        "fourier_antisym" if parts.len() == 1 => Ok(SolenoidalKind::FourierAntisym),
        "shift" => offsets(&parts[1..]).map(|(m, n)| SolenoidalKind::Shift { m, n }),
        "fourier_shift" => offsets(&parts[1..]).map(|(m, n)| SolenoidalKind::FourierShift { m, n }),
        _ => Err(format!("unknown solenoidal operator {s:?}")),
    }
}
