//! Fixed-seed verification suites with one machine-readable line per check.

use pds_core::diagnostics::{frequency_variances, invariance_harness, moment_check, moment_report, stationary_moments};
use pds_core::fourier::{dft2, dft2_direct, idft2};
use pds_core::oracle::TransformedGaussian;
use pds_core::precond::{apply_solenoidal, build_frequency_mask, build_pixel_mask};
use pds_core::rng::gaussian_noise;
use pds_core::*;
use std::result::Result;

use crate::commands::resolve;
use crate::{CliError, Suite, VerifyArgs};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// `value` must exceed `bound` instead of staying at or below it.
    pub lower: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, lower: false }
    }

    fn above(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, lower: true }
    }

    pub fn passed(&self) -> bool {
        if self.lower {
            self.value > self.bound
        } else {
            self.value <= self.bound
        }
    }
}

fn shape(c: usize, h: usize, w: usize) -> Shape {
    Shape::new(c, h, w).expect("nonzero dims")
}

fn random_masks(sh: Shape, rng: &mut RngStream, order: GradientOrder) -> Result<Preconditioner, CliError> {
    let mut draw = || Tensor::from_fn(sh, |_, _, _| 0.2 + 0.8 * rng.uniform());
    let f = SpectralMask::new(draw(), 1.0)?;
    let p = PixelMask::new(draw(), 1.0)?;
    Ok(Preconditioner::new(Some(f), Some(p), order)?)
}

fn spectral_target(sh: Shape, seed: u64, var: [f64; 2]) -> Result<GaussianTarget, CliError> {
    let mut rng = RngStream::new(seed, 0);
    let mean = Tensor::from_fn(sh, |_, _, _| 0.2 + 0.6 * rng.uniform());
    let v = Tensor::from_fn(sh, |_, _, _| var[0] + (var[1] - var[0]) * rng.uniform());
    Ok(GaussianTarget::new(mean, Covariance::FrequencyDiagonal(v))?)
}

fn adjoint(seed: u64) -> Result<Vec<Check>, CliError> {
    let sh = shape(3, 8, 8);
    let mut rng = RngStream::new(seed, 0);
    let mut out = Vec::new();
    for (name, order) in [("mmt", GradientOrder::MtThenM), ("mtm", GradientOrder::MpMf2Mp)] {
        let mut adj: f64 = 0.0;
        let mut inv: f64 = 0.0;
        for _ in 0..100 {
            let pre = random_masks(sh, &mut rng, order)?;
            let x = gaussian_noise(sh, &mut rng);
            let y = gaussian_noise(sh, &mut rng);
            let lhs = pre.apply_m(&x)?.dot(&y)?;
            let rhs = x.dot(&pre.apply_adjoint(&y)?)?;
            adj = adj.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
            inv = inv.max(pre.apply_inverse(&pre.apply_m(&x)?)?.max_abs_diff(&x)?);
        }
        out.push(Check::at_most(format!("adjoint_rel_{name}"), adj, 1e-10));
        out.push(Check::at_most(format!("inverse_roundtrip_{name}"), inv, 1e-10));
    }
    Ok(out)
}

pub fn kind_label(kind: SolenoidalKind) -> String {
    match kind {
        SolenoidalKind::FourierAntisym => "fourier_antisym".into(),
        SolenoidalKind::Shift { m, n } => format!("shift_{m}_{n}"),
        SolenoidalKind::FourierShift { m, n } => format!("fourier_shift_{m}_{n}"),
    }
}

fn skew(seed: u64) -> Result<Vec<Check>, CliError> {
    let sh = shape(3, 16, 16);
    let mut out = Vec::new();
    for kind in SolenoidalOp::standard_kinds() {
        let mut rng = RngStream::new(seed, 1);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = gaussian_noise(sh, &mut rng);
            worst = worst.max(x.dot(&apply_solenoidal(kind, &x)?)?.abs() / x.norm_sq());
        }
        out.push(Check::at_most(format!("skew_{}", kind_label(kind)), worst, 1e-10));
    }
    Ok(out)
}

fn invariance(seed: u64) -> Result<Vec<Check>, CliError> {
    let sh = shape(3, 8, 8);
    let target = spectral_target(sh, seed, [0.5, 1.0])?;
    let schedule = Schedule::new(25, 0.01, 5.0, ScheduleKind::Geometric, EpsilonRule::default_for(0.01))?;
    let mut rng = RngStream::new(seed, 2);
    let x0 = gaussian_noise(sh, &mut rng).scale(5.0);
    let mut perm: Vec<usize> = (0..sh.len()).collect();
    rng.shuffle(&mut perm);
    let vanilla = invariance_harness(&perm, &SamplerConfig::vanilla(Mode::PredictorCorrector), &target, &schedule, &x0, seed)?;
    let checker = Tensor::from_fn(sh, |c, h, w| if (c + h + w) % 2 == 0 { 1.0 } else { 0.8 });
    let cfg = SamplerConfig {
        preconditioner: Preconditioner::new(None, Some(PixelMask::new(checker, 1.0)?), GradientOrder::MtThenM)?,
        ..SamplerConfig::vanilla(Mode::PredictorCorrector)
    };
    let masked = invariance_harness(&perm, &cfg, &target, &schedule, &x0, seed)?;
    Ok(vec![
        Check::at_most("vanilla_max_difference", vanilla.max_difference, 1e-10),
        Check::above("pixel_mask_max_difference", masked.max_difference, 1e-3),
    ])
}

fn steady_state(seed: u64) -> Result<Vec<Check>, CliError> {
    let sh = shape(2, 8, 8);
    let target = spectral_target(sh, seed, [0.5, 1.0])?;
    let mut rng = RngStream::new(seed, 3);
    let data: Vec<Tensor> = (0..200).map(|_| target.sample_exact(&mut rng)).collect();
    let pre = Preconditioner::new(
        Some(build_frequency_mask(&data, 2.0)?.mask),
        Some(build_pixel_mask(&data, 2.0)?.mask),
        GradientOrder::MtThenM,
    )?;
    let schedule = Schedule::constant(2000, 1e-6, 0.2)?;
    let fv = frequency_variances(&target).expect("frequency-diagonal target");
    let mut out = Vec::new();
    for sol in [None, Some(SolenoidalOp::new(SolenoidalKind::Shift { m: 1, n: 1 }, 1.0)?)] {
        let cfg = SamplerConfig { mode: Mode::CorrectorOnly, preconditioner: pre.clone(), solenoidal: sol, initial_law: None };
        let acc = stationary_moments(&cfg, &target, &schedule, 512, &RngStream::new(seed, 4), 1000, 10)?;
        let r = moment_report(&acc, target.mean(), &target.marginal_variances(0.0), Some(&fv))?;
        let tag = if sol.is_some() { "omega1_shift_1_1" } else { "omega0" };
        out.push(Check::at_most(format!("{tag}_mean_max_error"), r.mean_max_error, 0.05));
        out.push(Check::at_most(
            format!("{tag}_frequency_variance_rel_error"),
            r.frequency_variance_max_rel_error.unwrap_or(f64::INFINITY),
            0.10,
        ));
    }
    Ok(out)
}

fn final_state(seed: u64) -> Result<Vec<Check>, CliError> {
    let sh = shape(1, 8, 8);
    let target = spectral_target(sh, seed, [0.05, 0.1])?;
    let mut rng = RngStream::new(seed, 5);
    let data: Vec<Tensor> = (0..200).map(|_| target.sample_exact(&mut rng)).collect();
    let mask = build_frequency_mask(&data, 2.0)?.mask;
    let oracle = TransformedGaussian::new(target.clone(), &mask)?;
    let cfg = SamplerConfig {
        mode: Mode::PredictorOnly,
        preconditioner: Preconditioner::new(Some(mask), None, GradientOrder::MtThenM)?,
        solenoidal: None,
        initial_law: Some(InitialLaw::Exact),
    };
    let schedule = Schedule::new(500, 0.01, 10.0, ScheduleKind::Geometric, EpsilonRule::default_for(0.01))?;
    let samples = pds_sample(&cfg, &oracle, &schedule, 2000, &RngStream::new(seed, 6))?;
    let r = moment_check(&samples, &target)?;
    Ok(vec![
        Check::at_most("mean_max_error", r.mean_max_error, 0.05),
        Check::at_most("pooled_variance_rel_error", r.pooled_variance_max_rel_error, 0.05),
    ])
}

fn oracle_dft(seed: u64) -> Result<Vec<Check>, CliError> {
    let sh = shape(3, 8, 8);
    let mut rng = RngStream::new(seed, 7);
    let (mut direct, mut parseval, mut round, mut sym): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..20 {
        let x = gaussian_noise(sh, &mut rng);
        let s = dft2(&x);
        let d = dft2_direct(&x);
        for (a, b) in s.data().iter().zip(d.data()) {
            direct = direct.max((a - b).norm());
        }
        let energy: f64 = s.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / sh.plane() as f64;
        parseval = parseval.max((energy - x.norm_sq()).abs() / x.norm_sq());
        round = round.max(idft2(&s).max_abs_diff(&x)?);
        sym = sym.max(s.conjugate_asymmetry());
    }
    Ok(vec![
        Check::at_most("direct_dft_max_error", direct, 1e-8),
        Check::at_most("parseval_rel_error", parseval, 1e-10),
        Check::at_most("roundtrip_max_error", round, 1e-10),
        Check::at_most("conjugate_asymmetry", sym, 1e-10),
    ])
}

pub fn suite_name(suite: Suite) -> &'static str {
    match suite {
        Suite::Adjoint => "adjoint",
        Suite::Skew => "skew",
        Suite::Invariance => "invariance",
        Suite::SteadyState => "steady_state",
        Suite::FinalState => "final_state",
        Suite::OracleDft => "oracle_dft",
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<Check>, CliError> {
    match suite {
        Suite::Adjoint => adjoint(seed),
        Suite::Skew => skew(seed),
        Suite::Invariance => invariance(seed),
        Suite::SteadyState => steady_state(seed),
        Suite::FinalState => final_state(seed),
        Suite::OracleDft => oracle_dft(seed),
    }
}

pub fn run(a: &VerifyArgs) -> Result<(), CliError> {
    let seed = resolve(&a.common)?.run.seed;
    let checks = run_suite(a.suite, seed)?;
    let name = suite_name(a.suite);
    for c in &checks {
        let op = if c.lower { ">" } else { "<=" };
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        println!("suite={name} check={} value={:e} bound={op}{:e} result={verdict}", c.name, c.value, c.bound);
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::VerificationFailed(failed))
    }
}
