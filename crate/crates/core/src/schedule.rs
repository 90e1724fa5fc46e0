//! Noise-level schedules, corrector step sizes and the iteration-reduction rule.

use serde::{Deserialize, Serialize};

use crate::error::{PdsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Geometric,
    Linear,
    Custom,
}

/// How corrector step sizes follow the noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    /// `ε_t = base · (σ_t / σ_T)²`
    Quadratic { base: f64 },
    /// `ε_t = eps` at every level.
    Constant { eps: f64 },
}

impl EpsilonRule {
    /// Default quadratic rule with `base = 0.16 σ_min`.
    pub fn default_for(sigma_min: f64) -> Self {
        EpsilonRule::Quadratic { base: 0.16 * sigma_min }
    }

    fn eval(&self, sigma: f64, sigma_top: f64) -> f64 {
        match *self {
            EpsilonRule::Quadratic { base } => base * (sigma / sigma_top).powi(2),
            EpsilonRule::Constant { eps } => eps,
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            EpsilonRule::Quadratic { base } => base,
            EpsilonRule::Constant { eps } => eps,
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(PdsError::InvalidArgument(format!("corrector step size must be positive, got {v}")))
        }
    }
}

/// Levels `σ_1 ≤ … ≤ σ_T`, increments `g_t = sqrt(σ_t² − σ_{t−1}²)` with
/// `σ_0 = 0`, and corrector step sizes `ε_t`, all indexed by level.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    kind: ScheduleKind,
    sigmas: Vec<f64>,
    g: Vec<f64>,
    epsilons: Vec<f64>,
    rule: Option<EpsilonRule>,
    accel: f64,
}

fn spacing(kind: ScheduleKind, t: usize, lo: f64, hi: f64) -> Vec<f64> {
    if t == 1 {
        return vec![lo];
    }
    (0..t)
        .map(|i| {
            let f = i as f64 / (t - 1) as f64;
            match kind {
                ScheduleKind::Linear => lo + (hi - lo) * f,
                _ => lo * (hi / lo).powf(f),
            }
        })
        .collect()
}

fn increments(sigmas: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    sigmas
        .iter()
        .map(|&s| {
            let g = (s * s - prev * prev).max(0.0).sqrt();
            prev = s;
            g
        })
        .collect()
}

impl Schedule {
    pub fn new(t: usize, sigma_min: f64, sigma_max: f64, kind: ScheduleKind, rule: EpsilonRule) -> Result<Self> {
        if t == 0 {
            return Err(PdsError::InvalidArgument("schedule needs T >= 1".into()));
        }
        if !(sigma_min > 0.0) || !(sigma_max > sigma_min) || !sigma_max.is_finite() {
            return Err(PdsError::InvalidArgument(format!(
                "need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
            )));
        }
        if kind == ScheduleKind::Custom {
            return Err(PdsError::InvalidArgument("use Schedule::custom for explicit levels".into()));
        }
        rule.validate()?;
        let sigmas = spacing(kind, t, sigma_min, sigma_max);
        let top = *sigmas.last().expect("t >= 1");
        let epsilons = sigmas.iter().map(|&s| rule.eval(s, top)).collect();
        Ok(Schedule { kind, g: increments(&sigmas), sigmas, epsilons, rule: Some(rule), accel: 1.0 })
    }

    /// Explicit levels and step sizes. Levels may repeat, which gives `g_t = 0`.
    /// An empty schedule (`T = 0`) is allowed and leaves the initial state untouched.
    pub fn custom(sigmas: Vec<f64>, epsilons: Vec<f64>) -> Result<Self> {
        if sigmas.len() != epsilons.len() {
            return Err(PdsError::InvalidArgument("sigmas and epsilons differ in length".into()));
        }
        if sigmas.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || sigmas.windows(2).any(|w| w[1] < w[0]) {
            return Err(PdsError::InvalidArgument("levels must be positive and non-decreasing".into()));
        }
        if epsilons.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(PdsError::InvalidArgument("step sizes must be positive".into()));
        }
        Ok(Schedule { kind: ScheduleKind::Custom, g: increments(&sigmas), sigmas, epsilons, rule: None, accel: 1.0 })
    }

    /// `T` copies of a single level with a constant step size.
    pub fn constant(t: usize, sigma: f64, eps: f64) -> Result<Self> {
        Schedule::custom(vec![sigma; t], vec![eps; t])
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn increments(&self) -> &[f64] {
        &self.g
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn accel_factor(&self) -> f64 {
        self.accel
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas.last().copied().unwrap_or(0.0)
    }

    /// Level index used at reverse iteration `t ∈ 1..=T` (0-based into the level arrays).
    fn reverse_index(&self, t: usize) -> usize {
        assert!(t >= 1 && t <= self.len(), "iteration {t} outside 1..={}", self.len());
        self.len() - t
    }

    /// `σ_{T−t+1}`
    pub fn reverse_sigma(&self, t: usize) -> f64 {
        self.sigmas[self.reverse_index(t)]
    }

    /// `ḡ_t = g_{T−t+1}`
    pub fn reverse_increment(&self, t: usize) -> f64 {
        self.g[self.reverse_index(t)]
    }

    /// `ε_{T−t+1}`
    pub fn reverse_epsilon(&self, t: usize) -> f64 {
        self.epsilons[self.reverse_index(t)]
    }

    /// `T' = max(1, round(T / c))` levels with the same spacing and endpoints;
    /// step sizes are re-evaluated on the new grid and scaled by `√c`.
    pub fn accelerate(&self, c: f64) -> Result<Schedule> {
        if !(c >= 1.0) || !c.is_finite() {
            return Err(PdsError::InvalidArgument(format!("acceleration factor must be >= 1, got {c}")));
        }
        if c == 1.0 {
            return Ok(self.clone());
        }
        let rule = self
            .rule
            .ok_or_else(|| PdsError::InvalidArgument("custom schedules cannot be re-spaced".into()))?;
        let t = ((self.len() as f64 / c).round() as usize).max(1);
        let lo = self.sigmas[0];
        let hi = self.sigma_max();
        let sigmas = spacing(self.kind, t, lo, hi);
        let top = *sigmas.last().expect("t >= 1");
        let root = c.sqrt();
        let epsilons = sigmas.iter().map(|&s| root * rule.eval(s, top)).collect();
        Ok(Schedule { kind: self.kind, g: increments(&sigmas), sigmas, epsilons, rule: Some(rule), accel: self.accel * c })
    }
}
