//! Langevin corrector and reverse-diffusion predictor updates, vanilla and
//! preconditioned, composed into predictor-corrector sampling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{coordinate_range, coordinate_variation};
use crate::error::{PdsError, Result};
use crate::oracle::ScoreOracle;
use crate::precond::{apply_solenoidal, Preconditioner, SolenoidalOp};
use crate::rng::{gaussian_noise, NoiseSource, RngStream};
use crate::schedule::Schedule;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    CorrectorOnly,
    PredictorOnly,
    #[default]
    PredictorCorrector,
}

impl Mode {
    fn has_predictor(self) -> bool {
        self != Mode::CorrectorOnly
    }

    fn has_corrector(self) -> bool {
        self != Mode::PredictorOnly
    }
}

/// Law of the chain's starting state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLaw {
    /// `N(0, σ_T² I)`
    Ve,
    /// `N(0, I)`
    Unit,
    /// The oracle's own noised law at `σ_T`.
    Exact,
}

#[derive(Debug, Clone, Default)]
pub struct SamplerConfig {
    pub mode: Mode,
    pub preconditioner: Preconditioner,
    pub solenoidal: Option<SolenoidalOp>,
    /// `None` picks `Ve` for predictor modes and `Unit` for corrector-only.
    pub initial_law: Option<InitialLaw>,
}

impl SamplerConfig {
    pub fn vanilla(mode: Mode) -> Self {
        SamplerConfig { mode, ..Default::default() }
    }

    pub fn initial_law(&self) -> InitialLaw {
        self.initial_law.unwrap_or(if self.mode.has_predictor() { InitialLaw::Ve } else { InitialLaw::Unit })
    }

    fn active_solenoidal(&self) -> Option<SolenoidalOp> {
        self.solenoidal.filter(|s| s.omega != 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substep {
    Initial,
    Predictor,
    Corrector,
}

/// `x ← x + h·drift + e·noise`, then a finiteness check.
fn update(x: &mut Tensor, h: f64, drift: &Tensor, e: f64, noise: &Tensor, iteration: usize) -> Result<()> {
    x.shape().ensure_eq(&drift.shape())?;
    for ((v, d), z) in x.data_mut().iter_mut().zip(drift.data()).zip(noise.data()) {
        *v = *v + h * d + e * z;
    }
    if x.is_finite() {
        Ok(())
    } else {
        Err(PdsError::Divergence { chain: 0, iteration })
    }
}

/// `x ← x + (ε²/2)·s(x, σ) + ε·z`
pub fn langevin_step(
    x: &mut Tensor,
    oracle: &dyn ScoreOracle,
    sigma: f64,
    epsilon: f64,
    noise: &mut dyn NoiseSource,
    iteration: usize,
) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(PdsError::InvalidArgument(format!("step size must be positive, got {epsilon}")));
    }
    let g = oracle.noised_score(x, sigma)?;
    let z = noise.noise(x.shape());
    update(x, 0.5 * epsilon * epsilon, &g, epsilon, &z, iteration)
}

/// `x ← x + (ε²/2)·(MMᵀ s + ω S s) + ε·M z`
pub fn precond_langevin_step(
    x: &mut Tensor,
    oracle: &dyn ScoreOracle,
    sigma: f64,
    epsilon: f64,
    precond: &Preconditioner,
    solenoidal: Option<SolenoidalOp>,
    noise: &mut dyn NoiseSource,
    iteration: usize,
) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(PdsError::InvalidArgument(format!("step size must be positive, got {epsilon}")));
    }
    let g = oracle.noised_score(x, sigma)?;
    let h = 0.5 * epsilon * epsilon;
    let active = solenoidal.filter(|s| s.omega != 0.0);
    let z = noise.noise(x.shape());
    if precond.is_identity() {
        let mut drift = g.clone();
        if let Some(s) = active {
            drift.axpy(s.omega, &apply_solenoidal(s.kind, &g)?)?;
        }
        return update(x, h, &drift, epsilon, &z, iteration);
    }
    let mut incr = precond.increment(&g, &z, h, epsilon)?;
    if let Some(s) = active {
        incr.axpy(h * s.omega, &apply_solenoidal(s.kind, &g)?)?;
    }
    add_increment(x, &incr, iteration)
}

fn add_increment(x: &mut Tensor, incr: &Tensor, iteration: usize) -> Result<()> {
    x.shape().ensure_eq(&incr.shape())?;
    for (v, d) in x.data_mut().iter_mut().zip(incr.data()) {
        *v += d;
    }
    if x.is_finite() {
        Ok(())
    } else {
        Err(PdsError::Divergence { chain: 0, iteration })
    }
}

/// `x ← x + ḡ_t²·s(x, σ_{T−t+1}) + ḡ_t·z`. Skipped entirely when `ḡ_t = 0`.
pub fn reverse_diffusion_step(
    x: &mut Tensor,
    oracle: &dyn ScoreOracle,
    schedule: &Schedule,
    t: usize,
    noise: &mut dyn NoiseSource,
) -> Result<()> {
    let gbar = schedule.reverse_increment(t);
    if gbar == 0.0 {
        return Ok(());
    }
    let g = oracle.noised_score(x, schedule.reverse_sigma(t))?;
    let z = noise.noise(x.shape());
    update(x, gbar * gbar, &g, gbar, &z, t)
}

/// `x ← x + ḡ_t²·MMᵀ s + ḡ_t·M z`
pub fn precond_reverse_step(
    x: &mut Tensor,
    oracle: &dyn ScoreOracle,
    schedule: &Schedule,
    t: usize,
    precond: &Preconditioner,
    noise: &mut dyn NoiseSource,
) -> Result<()> {
    let gbar = schedule.reverse_increment(t);
    if gbar == 0.0 {
        return Ok(());
    }
    let g = oracle.noised_score(x, schedule.reverse_sigma(t))?;
    let z = noise.noise(x.shape());
    if precond.is_identity() {
        return update(x, gbar * gbar, &g, gbar, &z, t);
    }
    let incr = precond.increment(&g, &z, gbar * gbar, gbar)?;
    add_increment(x, &incr, t)
}

/// Draws the starting state from the configured law.
pub fn initial_state(
    cfg: &SamplerConfig,
    oracle: &dyn ScoreOracle,
    schedule: &Schedule,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let shape = oracle.shape();
    Ok(match cfg.initial_law() {
        InitialLaw::Unit => gaussian_noise(shape, rng),
        InitialLaw::Ve => gaussian_noise(shape, rng).scale(schedule.sigma_max()),
        InitialLaw::Exact if schedule.is_empty() => oracle.sample_exact(rng),
        InitialLaw::Exact => oracle.sample_noised(schedule.sigma_max(), rng)?,
    })
}

/// Runs one chain from `x0` through every iteration of `schedule`.
/// `observe` sees the state after each sub-step (iteration 0 is the start).
pub fn run_chain(
    cfg: &SamplerConfig,
    oracle: &dyn ScoreOracle,
    schedule: &Schedule,
    x0: Tensor,
    noise: &mut dyn NoiseSource,
    observe: &mut dyn FnMut(usize, Substep, &Tensor),
) -> Result<Tensor> {
    oracle.shape().ensure_eq(&x0.shape())?;
    let mut x = x0;
    observe(0, Substep::Initial, &x);
    let sol = cfg.active_solenoidal();
    let vanilla = cfg.preconditioner.is_identity() && sol.is_none();
    for t in 1..=schedule.len() {
        if cfg.mode.has_predictor() {
            if vanilla {
                reverse_diffusion_step(&mut x, oracle, schedule, t, noise)?;
            } else {
                precond_reverse_step(&mut x, oracle, schedule, t, &cfg.preconditioner, noise)?;
            }
            observe(t, Substep::Predictor, &x);
        }
        if cfg.mode.has_corrector() {
            let (sigma, eps) = (schedule.reverse_sigma(t), schedule.reverse_epsilon(t));
            if vanilla {
                langevin_step(&mut x, oracle, sigma, eps, noise, t)?;
            } else {
                precond_langevin_step(&mut x, oracle, sigma, eps, &cfg.preconditioner, sol, noise, t)?;
            }
            observe(t, Substep::Corrector, &x);
        }
    }
    Ok(x)
}

fn with_chain(err: PdsError, chain: usize) -> PdsError {
    match err {
        PdsError::Divergence { iteration, .. } => PdsError::Divergence { chain, iteration },
        other => other,
    }
}

/// Chain-averaged `V_coo` and `R_coo` after one sub-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub substep: Substep,
    pub v_coo: f64,
    pub r_coo: f64,
    pub chains: usize,
}

#[derive(Debug)]
pub struct SampleRun {
    /// Final state per chain; `None` for chains that diverged.
    pub samples: Vec<Option<Tensor>>,
    /// Divergence errors in chain order.
    pub failures: Vec<PdsError>,
    /// Empty unless tracing was requested.
    pub trace: Vec<TracePoint>,
}

impl SampleRun {
    pub fn survivors(&self) -> Vec<Tensor> {
        self.samples.iter().flatten().cloned().collect()
    }
}

/// Runs `n_chains` chains in parallel; chain `i` draws from `rng.derive(i)`.
/// Divergent chains are reported, not fatal.
pub fn run_sampler(
    cfg: &SamplerConfig,
    oracle: &dyn ScoreOracle,
    schedule: &Schedule,
    n_chains: usize,
    rng: &RngStream,
    trace: bool,
) -> Result<SampleRun> {
    if n_chains == 0 {
        return Err(PdsError::InvalidArgument("n_chains must be >= 1".into()));
    }
    let per_chain: Vec<(Result<Tensor>, Vec<(usize, Substep, f64, f64)>)> = (0..n_chains)
        .into_par_iter()
        .map(|i| {
            let mut stream = rng.derive(i as u64);
            let mut points = Vec::new();
            let result = initial_state(cfg, oracle, schedule, &mut stream).and_then(|x0| {
                run_chain(cfg, oracle, schedule, x0, &mut stream, &mut |t, sub, x| {
                    if trace {
                        points.push((t, sub, coordinate_variation(x), coordinate_range(x)));
                    }
                })
            });
            (result.map_err(|e| with_chain(e, i)), points)
        })
        .collect();

    let mut samples = Vec::with_capacity(n_chains);
    let mut failures = Vec::new();
    let mut sums: Vec<(usize, Substep, f64, f64, usize)> = Vec::new();
    for (result, points) in per_chain {
        match result {
            Ok(x) => samples.push(Some(x)),
            Err(e @ PdsError::Divergence { .. }) => {
                failures.push(e);
                samples.push(None);
            }
            Err(e) => return Err(e),
        }
        for (k, (t, sub, v, r)) in points.into_iter().enumerate() {
            if k == sums.len() {
                sums.push((t, sub, 0.0, 0.0, 0));
            }
            let s = &mut sums[k];
            s.2 += v;
            s.3 += r;
            s.4 += 1;
        }
    }
    let trace = sums
        .into_iter()
        .map(|(iteration, substep, v, r, n)| TracePoint {
            iteration,
            substep,
            v_coo: v / n as f64,
            r_coo: r / n as f64,
            chains: n,
        })
        .collect();
    Ok(SampleRun { samples, failures, trace })
}

/// Final states of all chains; the first divergence (lowest chain index) is an error.
pub fn pds_sample(
    cfg: &SamplerConfig,
    oracle: &dyn ScoreOracle,
    schedule: &Schedule,
    n_chains: usize,
    rng: &RngStream,
) -> Result<Vec<Tensor>> {
    let run = run_sampler(cfg, oracle, schedule, n_chains, rng, false)?;
    if let Some(e) = run.failures.into_iter().next() {
        return Err(e);
    }
    Ok(run.samples.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Covariance, GaussianTarget};
    use crate::precond::{PixelMask, SolenoidalKind, SpectralMask};
    use crate::schedule::{EpsilonRule, ScheduleKind};
    use crate::tensor::Shape;
    use crate::GradientOrder;

    fn shape(c: usize, h: usize, w: usize) -> Shape {
        Shape::new(c, h, w).unwrap()
    }

    /// Replays a fixed list of noise tensors.
    struct Frozen(Vec<Tensor>);

    impl NoiseSource for Frozen {
        fn noise(&mut self, _shape: Shape) -> Tensor {
            self.0.remove(0)
        }
    }

    #[test]
    fn reverse_step_by_hand() {
        let sh = shape(1, 1, 1);
        let oracle = GaussianTarget::isotropic(Tensor::filled(sh, 1.0), 2.0).unwrap();
        let schedule = Schedule::custom(vec![0.5, 1.5], vec![1.0, 1.0]).unwrap();
        let mut x = Tensor::filled(sh, 3.0);
        let mut noise = Frozen(vec![Tensor::filled(sh, 0.25)]);
        reverse_diffusion_step(&mut x, &oracle, &schedule, 1, &mut noise).unwrap();
        // σ = 1.5, ḡ² = 1.5² − 0.5² = 2, score = (1 − 3)/(2 + 2.25)
        let expected = 3.0 + 2.0 * (-2.0 / 4.25) + 2f64.sqrt() * 0.25;
        assert!((x.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_increment_leaves_state() {
        let sh = shape(1, 2, 2);
        let oracle = GaussianTarget::isotropic(Tensor::zeros(sh), 1.0).unwrap();
        let s2 =Schedule::custom(vec![1e-3, 1e-3, 1e-3], vec![1.0; 3]).unwrap();
        let x0 = Tensor::filled(sh, 2.0);
        let mut x = x0.clone();
        let mut rng = RngStream::new(1, 0);
        reverse_diffusion_step(&mut x, &oracle, &s2, 1, &mut rng).unwrap();
        assert_eq!(x, x0);
        let cfg = SamplerConfig::vanilla(Mode::PredictorOnly);
        let out = run_chain(&cfg, &oracle, &s2, x0.clone(), &mut rng, &mut |_, _, _| {}).unwrap();
        // only the first (lowest) level has a nonzero increment
        assert_ne!(out, x0);
    }

    #[test]
    fn tiny_step_keeps_state() {
        let sh = shape(1, 2, 2);
        let oracle = GaussianTarget::isotropic(Tensor::zeros(sh), 1.0).unwrap();
        let mut x = Tensor::filled(sh, 0.5);
        langevin_step(&mut x, &oracle, 0.1, 1e-14, &mut RngStream::new(3, 0), 1).unwrap();
        assert!(x.max_abs_diff(&Tensor::filled(sh, 0.5)).unwrap() < 1e-12);
        assert!(langevin_step(&mut x, &oracle, 0.1, 0.0, &mut RngStream::new(3, 0), 1).is_err());
    }

    #[test]
    fn flat_score_is_random_walk() {
        let sh = shape(1, 1, 1);
        let oracle = GaussianTarget::isotropic(Tensor::zeros(sh), 1e12).unwrap();
        let mut x = Tensor::zeros(sh);
        let mut rng = RngStream::new(11, 0);
        let n = 10_000;
        let mut prev = 0.0;
        let mut sq = 0.0;
        for t in 1..=n {
            langevin_step(&mut x, &oracle, 0.01, 1.0, &mut rng, t).unwrap();
            sq += (x.data()[0] - prev).powi(2);
            prev = x.data()[0];
        }
        assert!((sq / n as f64 - 1.0).abs() < 0.05);
    }

    #[test]
    fn identity_preconditioner_is_bit_identical() {
        let sh = shape(2, 4, 4);
        let oracle = GaussianTarget::new(
            Tensor::filled(sh, 0.3),
            Covariance::FrequencyDiagonal(Tensor::from_fn(sh, |c, h, w| 0.1 + 0.01 * (c + h + w) as f64)),
        )
        .unwrap();
        let schedule = Schedule::new(20, 0.01, 5.0, ScheduleKind::Geometric, EpsilonRule::Constant { eps: 0.02 }).unwrap();
        let vanilla = SamplerConfig::vanilla(Mode::PredictorCorrector);
        let ident = Preconditioner::new(
            Some(SpectralMask::identity(sh)),
            Some(PixelMask::identity(sh)),
            GradientOrder::MpMf2Mp,
        )
        .unwrap();
        let pds = SamplerConfig {
            preconditioner: ident,
            solenoidal: Some(SolenoidalOp::new(SolenoidalKind::FourierAntisym, 0.0).unwrap()),
            ..vanilla.clone()
        };
        let rng = RngStream::new(5, 0);
        let a = pds_sample(&vanilla, &oracle, &schedule, 4, &rng).unwrap();
        let b = pds_sample(&pds, &oracle, &schedule, 4, &rng).unwrap();
        assert_eq!(a, b);

        // the explicit preconditioned step with identity masks agrees as well
        let mut x = Tensor::filled(sh, 1.0);
        let mut y = x.clone();
        langevin_step(&mut x, &oracle, 0.1, 0.05, &mut RngStream::new(2, 2), 1).unwrap();
        precond_langevin_step(&mut y, &oracle, 0.1, 0.05, &Preconditioner::identity(), None, &mut RngStream::new(2, 2), 1)
            .unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn empty_schedule_returns_initial_draws() {
        let sh = shape(1, 2, 2);
        let oracle = GaussianTarget::isotropic(Tensor::zeros(sh), 1.0).unwrap();
        let schedule = Schedule::custom(vec![], vec![]).unwrap();
        let cfg = SamplerConfig { initial_law: Some(InitialLaw::Unit), ..Default::default() };
        let rng = RngStream::new(9, 0);
        let out = pds_sample(&cfg, &oracle, &schedule, 3, &rng).unwrap();
        for (i, x) in out.iter().enumerate() {
            assert_eq!(*x, gaussian_noise(sh, &mut rng.derive(i as u64)));
        }
    }

    #[test]
    fn divergence_names_chain_and_iteration() {
        let sh = shape(1, 1, 1);
        let oracle = GaussianTarget::isotropic(Tensor::zeros(sh), 1e-6).unwrap();
        let schedule = Schedule::constant(50, 1e-6, 10.0).unwrap();
        let cfg = SamplerConfig::vanilla(Mode::CorrectorOnly);
        let run = run_sampler(&cfg, &oracle, &schedule, 3, &RngStream::new(1, 0), false).unwrap();
        assert_eq!(run.failures.len(), 3);
        assert!(matches!(run.failures[1], PdsError::Divergence { chain: 1, .. }));
        assert!(matches!(
            pds_sample(&cfg, &oracle, &schedule, 3, &RngStream::new(1, 0)),
            Err(PdsError::Divergence { chain: 0, .. })
        ));
    }

    #[test]
    fn variance_accounting_of_reverse_pass() {
        let sh = shape(1, 1, 4);
        let oracle = GaussianTarget::isotropic(Tensor::zeros(sh), 1e12).unwrap();
        let schedule = Schedule::new(50, 0.1, 3.0, ScheduleKind::Geometric, EpsilonRule::Constant { eps: 1.0 }).unwrap();
        let cfg = SamplerConfig { initial_law: Some(InitialLaw::Unit), ..SamplerConfig::vanilla(Mode::PredictorOnly) };
        let rng = RngStream::new(4, 0);
        let n = 10_000;
        let finals = pds_sample(&cfg, &oracle, &schedule, n, &rng).unwrap();
        let mut sq = 0.0;
        for (i, x) in finals.iter().enumerate() {
            let x0 = gaussian_noise(sh, &mut rng.derive(i as u64));
            sq += x.sub(&x0).unwrap().norm_sq();
        }
        let var = sq / (n * sh.len()) as f64;
        assert!((var - 9.0).abs() / 9.0 < 0.03, "{var}");
    }

    #[test]
    fn trace_records_every_substep() {
        let sh = shape(1, 2, 2);
        let oracle = GaussianTarget::isotropic(Tensor::zeros(sh), 1.0).unwrap();
        let schedule = Schedule::new(3, 0.1, 1.0, ScheduleKind::Linear, EpsilonRule::Constant { eps: 0.1 }).unwrap();
        let run = run_sampler(&SamplerConfig::default(), &oracle, &schedule, 2, &RngStream::new(1, 1), true).unwrap();
        assert_eq!(run.trace.len(), 7);
        assert_eq!(run.trace[0].substep, Substep::Initial);
        assert!(run.trace.iter().all(|p| p.chains == 2 && p.v_coo >= 0.0));
    }
}
