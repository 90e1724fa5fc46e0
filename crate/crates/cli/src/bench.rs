//! Per-iteration timing of vanilla against preconditioned sampling.

use std::time::{Duration, Instant};

use pds_core::diagnostics::to_key_value;
use pds_core::oracle::{power_law_spectrum, DummyOracle};
use pds_core::sampler::{run_chain, Substep};
use pds_core::*;
use std::result::Result;
use serde::Serialize;

use crate::commands::resolve;
use crate::config::parse_shape;
use crate::{BenchArgs, CliError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub shape: String,
    pub cost_ms: f64,
    pub iterations: usize,
    pub vanilla_median_ms: f64,
    pub pds_median_ms: f64,
    pub pds_identity_median_ms: f64,
    /// `pds / vanilla`
    pub overhead_ratio: f64,
    /// `pds_identity / vanilla`
    pub identity_overhead_ratio: f64,
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Wall time of each predictor-corrector iteration of one chain.
pub fn iteration_times(
    cfg: &SamplerConfig,
    oracle: &dyn ScoreOracle,
    schedule: &Schedule,
    seed: u64,
) -> Result<Vec<Duration>, CliError> {
    let mut rng = RngStream::new(seed, 0);
    let x0 = pds_core::rng::gaussian_noise(oracle.shape(), &mut rng).scale(schedule.sigma_max());
    let mut last = Instant::now();
    let mut times = Vec::with_capacity(schedule.len());
    run_chain(cfg, oracle, schedule, x0, &mut rng, &mut |_, sub, _| match sub {
        Substep::Initial => last = Instant::now(),
        Substep::Corrector => {
            let now = Instant::now();
            times.push(now - last);
            last = now;
        }
        Substep::Predictor => {}
    })?;
    Ok(times)
}

/// Preconditioner with a power-law frequency mask and a random pixel mask.
pub fn bench_preconditioner(shape: Shape, seed: u64) -> Result<Preconditioner, CliError> {
    let f = SpectralMask::matched_to_variances(&power_law_spectrum(shape, 1e3)?)?;
    let mut rng = RngStream::new(seed, 1);
    let p = PixelMask::new(Tensor::from_fn(shape, |_, _, _| 0.5 + 0.5 * rng.uniform()), 1.0)?;
    Ok(Preconditioner::new(Some(f), Some(p), GradientOrder::MtThenM)?)
}

pub fn measure(shape: Shape, cost: Duration, iterations: usize, seed: u64) -> Result<BenchReport, CliError> {
    if iterations == 0 {
        return Err(CliError::Usage("bench needs at least one iteration".into()));
    }
    let oracle = DummyOracle::new(shape, cost);
    let single = Schedule::new(1, 0.01, 50.0, ScheduleKind::Geometric, EpsilonRule::default_for(0.01))?;
    let vanilla = SamplerConfig::vanilla(Mode::PredictorCorrector);
    let pds = SamplerConfig { preconditioner: bench_preconditioner(shape, seed)?, ..vanilla.clone() };
    let identity = SamplerConfig { preconditioner: Preconditioner::identity(), ..vanilla.clone() };
    let configs = [&vanilla, &pds, &identity];
    // warm the transform plans before timing
    iteration_times(&pds, &DummyOracle::new(shape, Duration::ZERO), &single, seed)?;
    // interleave the configurations so slow drift in machine speed hits all alike
    let mut times: [Vec<Duration>; 3] = Default::default();
    for round in 0..iterations {
        for (cfg, out) in configs.iter().zip(times.iter_mut()) {
            out.extend(iteration_times(cfg, &oracle, &single, seed.wrapping_add(round as u64))?);
        }
    }
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let [v, p, i] = times.map(|t| ms(median(t)));
    Ok(BenchReport {
        shape: shape.to_string(),
        cost_ms: ms(cost),
        iterations,
        vanilla_median_ms: v,
        pds_median_ms: p,
        pds_identity_median_ms: i,
        overhead_ratio: p / v,
        identity_overhead_ratio: i / v,
    })
}

pub fn run(a: &BenchArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.common)?;
    if !(a.cost_ms >= 0.0) || !a.cost_ms.is_finite() {
        return Err(CliError::Usage(format!("--cost-ms must be >= 0, got {}", a.cost_ms)));
    }
    let iterations = a.common.t.unwrap_or(a.iterations);
    let report = measure(parse_shape(a.shape)?, Duration::from_secs_f64(a.cost_ms / 1e3), iterations, cfg.run.seed)?;
    print!("{}", to_key_value(&report));
    Ok(())
}
