//! Linear α–T law: least squares of a transformed `y(α)` against `1/T`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PdsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaObservation {
    pub t: usize,
    pub alpha: f64,
}

impl AlphaObservation {
    pub fn new(t: usize, alpha: f64) -> Result<Self> {
        if t == 0 || !(alpha >= 1.0) || !alpha.is_finite() {
            return Err(PdsError::InvalidArgument(format!("observation needs T >= 1 and alpha >= 1, got ({t}, {alpha})")));
        }
        Ok(AlphaObservation { t, alpha })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitVariant {
    /// `y = (1 + 1/α)² − 1`, frequency and pixel masks together.
    BothMasks,
    /// `y = 1/α`, frequency mask alone.
    FreqOnly,
}

impl FitVariant {
    pub fn transform(self, alpha: f64) -> f64 {
        match self {
            FitVariant::BothMasks => (1.0 + 1.0 / alpha).powi(2) - 1.0,
            FitVariant::FreqOnly => 1.0 / alpha,
        }
    }

    /// Inverse of [`transform`](Self::transform) for `y > 0`.
    pub fn invert(self, y: f64) -> f64 {
        match self {
            FitVariant::BothMasks => 1.0 / ((1.0 + y).sqrt() - 1.0),
            FitVariant::FreqOnly => 1.0 / y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub variant: FitVariant,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub t_min: usize,
    pub t_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPrediction {
    pub t: usize,
    pub alpha: f64,
    /// `T` lies outside the range of the fitted observations.
    pub extrapolated: bool,
}

pub fn fit(observations: &[AlphaObservation], variant: FitVariant) -> Result<AlphaFit> {
    if observations.len() < 2 {
        return Err(PdsError::InvalidArgument(format!("need at least 2 observations, got {}", observations.len())));
    }
    let xs: Vec<f64> = observations.iter().map(|o| 1.0 / o.t as f64).collect();
    let ys: Vec<f64> = observations.iter().map(|o| variant.transform(o.alpha)).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(PdsError::InvalidArgument("all observations share the same T".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(AlphaFit {
        variant,
        slope,
        intercept,
        r_squared,
        t_min: observations.iter().map(|o| o.t).min().expect("nonempty"),
        t_max: observations.iter().map(|o| o.t).max().expect("nonempty"),
    })
}

pub fn predict_alpha(fit: &AlphaFit, t: usize) -> Result<AlphaPrediction> {
    if t == 0 {
        return Err(PdsError::InvalidArgument("T must be >= 1".into()));
    }
    let y = fit.slope / t as f64 + fit.intercept;
    if !(y > 0.0) {
        return Err(PdsError::AlphaOutOfRange { t, y });
    }
    Ok(AlphaPrediction {
        t,
        alpha: fit.variant.invert(y).max(1.0),
        extrapolated: t < fit.t_min || t > fit.t_max,
    })
}

pub fn slope_ratio(a: &AlphaFit, b: &AlphaFit) -> f64 {
    a.slope / b.slope
}

/// Two whitespace- or comma-separated columns `T alpha`; `#` starts a comment.
pub fn parse_observations(text: &str) -> Result<Vec<AlphaObservation>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|f| !f.is_empty()).collect();
        let bad = || PdsError::InvalidArgument(format!("line {}: expected `T alpha`, got {raw:?}", lineno + 1));
        if fields.len() != 2 {
            return Err(bad());
        }
        let t: usize = fields[0].parse().map_err(|_| bad())?;
        let alpha: f64 = fields[1].parse().map_err(|_| bad())?;
        out.push(AlphaObservation::new(t, alpha)?);
    }
    Ok(out)
}

pub fn load_observations(path: &Path) -> Result<Vec<AlphaObservation>> {
    let text = std::fs::read_to_string(path).map_err(|e| PdsError::io(path, e))?;
    parse_observations(&text).map_err(|e| PdsError::Format { path: path.to_path_buf(), message: e.to_string() })
}
