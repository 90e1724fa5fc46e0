//! Ill-conditioning metrics, moment checks, energy distance with permutation
//! calibration, and the coupled-noise invariance harness.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PdsError, Result};
use crate::fourier::dft2;
use crate::oracle::{Covariance, GaussianTarget, PermutedOracle, ScoreOracle};
use crate::rng::{PermutedNoise, RngStream};
use crate::sampler::{initial_state, run_chain, Mode, SampleRun, SamplerConfig, Substep, TracePoint};
use crate::schedule::Schedule;
use crate::tensor::{Shape, Tensor};

/// `Σ_i (x_i − mean(x))²`
pub fn coordinate_variation(x: &Tensor) -> f64 {
    let m = x.mean();
    x.data().iter().map(|v| (v - m) * (v - m)).sum()
}

/// `max_i x_i − min_i x_i`
pub fn coordinate_range(x: &Tensor) -> f64 {
    x.max() - x.min()
}

/// Which sub-states enter the trace averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceAggregation {
    #[default]
    Both,
    PredictorOnly,
    CorrectorOnly,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IllConditioning {
    pub v_coo: f64,
    pub r_coo: f64,
    pub points: usize,
}

/// Averages of `V_coo` and `R_coo` over the selected sub-steps of a trace.
/// The initial state is excluded unless it is the only point.
pub fn trace_ill_conditioning(trace: &[TracePoint], agg: TraceAggregation) -> IllConditioning {
    let keep = |p: &&TracePoint| match (agg, p.substep) {
        (_, Substep::Initial) => false,
        (TraceAggregation::Both, _) => true,
        (TraceAggregation::PredictorOnly, s) => s == Substep::Predictor,
        (TraceAggregation::CorrectorOnly, s) => s == Substep::Corrector,
    };
    let mut selected: Vec<&TracePoint> = trace.iter().filter(keep).collect();
    if selected.is_empty() {
        selected = trace.iter().take(1).collect();
    }
    let n = selected.len();
    if n == 0 {
        return IllConditioning::default();
    }
    IllConditioning {
        v_coo: selected.iter().map(|p| p.v_coo).sum::<f64>() / n as f64,
        r_coo: selected.iter().map(|p| p.r_coo).sum::<f64>() / n as f64,
        points: n,
    }
}

/// Streaming first and second moments, per coordinate and per frequency.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    shape: Shape,
    n: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    freq_sum: Vec<Complex64>,
    freq_sum_sq: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(shape: Shape) -> Self {
        let d = shape.len();
        MomentAccumulator {
            shape,
            n: 0,
            sum: vec![0.0; d],
            sum_sq: vec![0.0; d],
            freq_sum: vec![Complex64::default(); d],
            freq_sum_sq: vec![0.0; d],
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, x: &Tensor) -> Result<()> {
        self.shape.ensure_eq(&x.shape())?;
        self.n += 1;
        for (i, v) in x.data().iter().enumerate() {
            self.sum[i] += v;
            self.sum_sq[i] += v * v;
        }
        for (i, z) in dft2(x).data().iter().enumerate() {
            self.freq_sum[i] += z;
            self.freq_sum_sq[i] += z.norm_sqr();
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        self.shape.ensure_eq(&other.shape)?;
        self.n += other.n;
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
            self.freq_sum[i] += other.freq_sum[i];
            self.freq_sum_sq[i] += other.freq_sum_sq[i];
        }
        Ok(())
    }

    fn check(&self) -> Result<()> {
        if self.n < 2 {
            return Err(PdsError::InvalidArgument(format!("moment estimates need at least 2 samples, got {}", self.n)));
        }
        Ok(())
    }

    pub fn mean(&self) -> Result<Tensor> {
        self.check()?;
        let n = self.n as f64;
        Tensor::from_vec(self.shape, self.sum.iter().map(|s| s / n).collect())
    }

    /// Unbiased per-coordinate variance.
    pub fn variance(&self) -> Result<Tensor> {
        self.check()?;
        let n = self.n as f64;
        let data = self.sum.iter().zip(&self.sum_sq).map(|(s, q)| ((q - s * s / n) / (n - 1.0)).max(0.0)).collect();
        Tensor::from_vec(self.shape, data)
    }

    /// Unbiased `Var(F x)(k) / (HW)`, the per-frequency eigenvalue estimate.
    pub fn frequency_variance(&self) -> Result<Tensor> {
        self.check()?;
        let n = self.n as f64;
        let plane = self.shape.plane() as f64;
        let data = self
            .freq_sum
            .iter()
            .zip(&self.freq_sum_sq)
            .map(|(s, q)| ((q - s.norm_sqr() / n) / (n - 1.0) / plane).max(0.0))
            .collect();
        Tensor::from_vec(self.shape, data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub samples: usize,
    /// `max_i |mean_i − μ_i|`
    pub mean_max_error: f64,
    /// `max_i |var_i − v_i| / v_i`
    pub variance_max_rel_error: f64,
    /// Same, per frequency; only for targets diagonal in frequency.
    pub frequency_variance_max_rel_error: Option<f64>,
    /// `max_c |mean_i var_i − mean_i v_i| / mean_i v_i` over the pixels of each channel.
    pub pooled_variance_max_rel_error: f64,
}

impl MomentReport {
    pub fn passes(&self, mean_tol: f64, var_tol: f64) -> bool {
        self.mean_max_error < mean_tol
            && self.variance_max_rel_error < var_tol
            && self.frequency_variance_max_rel_error.is_none_or(|e| e < var_tol)
    }

    /// Mean bound per coordinate, variance bound on the channel-pooled variances.
    pub fn passes_pooled(&self, mean_tol: f64, var_tol: f64) -> bool {
        self.mean_max_error < mean_tol && self.pooled_variance_max_rel_error < var_tol
    }
}

fn pooled_rel_error(est: &Tensor, truth: &Tensor) -> f64 {
    let plane = est.shape().plane();
    est.data()
        .chunks_exact(plane)
        .zip(truth.data().chunks_exact(plane))
        .map(|(e, t)| {
            let (se, st): (f64, f64) = (e.iter().sum(), t.iter().sum());
            (se - st).abs() / st
        })
        .fold(0.0, f64::max)
}

fn max_rel_error(est: &Tensor, truth: &Tensor) -> f64 {
    est.data().iter().zip(truth.data()).map(|(e, t)| (e - t).abs() / t).fold(0.0, f64::max)
}

/// Compares accumulated moments against explicit reference moments.
pub fn moment_report(
    acc: &MomentAccumulator,
    mean: &Tensor,
    variances: &Tensor,
    frequency_variances: Option<&Tensor>,
) -> Result<MomentReport> {
    let m = acc.mean()?;
    let var = acc.variance()?;
    var.shape().ensure_eq(&variances.shape())?;
    Ok(MomentReport {
        samples: acc.count(),
        mean_max_error: m.max_abs_diff(mean)?,
        variance_max_rel_error: max_rel_error(&var, variances),
        pooled_variance_max_rel_error: pooled_rel_error(&var, variances),
        frequency_variance_max_rel_error: match frequency_variances {
            Some(fv) => Some(max_rel_error(&acc.frequency_variance()?, fv)),
            None => None,
        },
    })
}

/// Per-frequency eigenvalues of the target covariance, when it is diagonal in frequency.
pub fn frequency_variances(target: &GaussianTarget) -> Option<Tensor> {
    match target.covariance() {
        Covariance::FrequencyDiagonal(v) => Some(v.clone()),
        Covariance::Isotropic(v) => Some(Tensor::filled(target.shape(), *v)),
        Covariance::Diagonal(_) => None,
    }
}

pub fn moment_check(samples: &[Tensor], target: &GaussianTarget) -> Result<MomentReport> {
    let mut acc = MomentAccumulator::new(target.shape());
    for x in samples {
        acc.push(x)?;
    }
    let fv = frequency_variances(target);
    moment_report(&acc, target.mean(), &target.marginal_variances(0.0), fv.as_ref())
}

/// Time-averaged moments of running chains: after `burn_in` iterations every
/// `thin`-th end-of-iteration state of every chain is accumulated.
pub fn stationary_moments(
    cfg: &SamplerConfig,
    oracle: &dyn ScoreOracle,
    schedule: &Schedule,
    n_chains: usize,
    rng: &RngStream,
    burn_in: usize,
    thin: usize,
) -> Result<MomentAccumulator> {
    if n_chains == 0 || thin == 0 {
        return Err(PdsError::InvalidArgument("stationary moments need n_chains >= 1 and thin >= 1".into()));
    }
    let last = if cfg.mode == Mode::PredictorOnly { Substep::Predictor } else { Substep::Corrector };
    let shape = oracle.shape();
    let parts: Vec<Result<MomentAccumulator>> = (0..n_chains)
        .into_par_iter()
        .map(|i| {
            let mut stream = rng.derive(i as u64);
            let mut acc = MomentAccumulator::new(shape);
            let x0 = initial_state(cfg, oracle, schedule, &mut stream)?;
            run_chain(cfg, oracle, schedule, x0, &mut stream, &mut |t, sub, x| {
                if sub == last && t > burn_in && (t - burn_in) % thin == 0 {
                    acc.push(x).expect("shape checked");
                }
            })
            .map_err(|e| match e {
                PdsError::Divergence { iteration, .. } => PdsError::Divergence { chain: i, iteration },
                other => other,
            })?;
            Ok(acc)
        })
        .collect();
    let mut total = MomentAccumulator::new(shape);
    for part in parts {
        total.merge(&part?)?;
    }
    Ok(total)
}

fn euclid(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Pairwise distances of the pooled sample, row-major `N×N`.
fn pooled_distances(pool: &[&Tensor]) -> Vec<f64> {
    let n = pool.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| if j > i { euclid(pool[i], pool[j]) } else { 0.0 }).collect())
        .collect();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            d[i * n + j] = rows[i][j];
            d[j * n + i] = rows[i][j];
        }
    }
    d
}

/// Energy distance between index sets `a` and `b` of the pooled sample.
fn energy_from(d: &[f64], n: usize, a: &[usize], b: &[usize]) -> f64 {
    let within = |s: &[usize]| {
        let mut t = 0.0;
        for (k, &i) in s.iter().enumerate() {
            for &j in &s[k + 1..] {
                t += d[i * n + j];
            }
        }
        2.0 * t / (s.len() * (s.len() - 1)) as f64
    };
    let paired = a.len() == b.len();
    let mut cross = 0.0;
    if paired {
        // same traversal order as `within`, so identical sets cancel exactly
        for p in 0..a.len() {
            for q in p + 1..a.len() {
                cross += d[a[p] * n + b[q]] + d[a[q] * n + b[p]];
            }
        }
    } else {
        for &i in a {
            for &j in b {
                cross += d[i * n + j];
            }
        }
    }
    let pairs = if paired { a.len() * (a.len() - 1) } else { a.len() * b.len() };
    2.0 * cross / pairs as f64 - within(a) - within(b)
}

fn check_samples(a: &[Tensor], b: &[Tensor]) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        return Err(PdsError::InvalidArgument("energy distance needs at least 2 samples per set".into()));
    }
    let shape = a[0].shape();
    for x in a.iter().chain(b) {
        shape.ensure_eq(&x.shape())?;
    }
    Ok(())
}

/// `2 E‖A−B‖ − E‖A−A'‖ − E‖B−B'‖` with U-statistics for the within-set terms.
/// For equally sized sets the cross term skips index-paired terms, so that
/// `energy_distance(A, A) = 0` exactly.
pub fn energy_distance(a: &[Tensor], b: &[Tensor]) -> Result<f64> {
    check_samples(a, b)?;
    let pool: Vec<&Tensor> = a.iter().chain(b).collect();
    let d = pooled_distances(&pool);
    let ia: Vec<usize> = (0..a.len()).collect();
    let ib: Vec<usize> = (a.len()..pool.len()).collect();
    Ok(energy_from(&d, pool.len(), &ia, &ib))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub statistic: f64,
    /// 95% quantile of the permutation distribution.
    pub threshold: f64,
    pub p_value: f64,
    pub permutations: usize,
}

impl PermutationTest {
    pub fn rejects(&self) -> bool {
        self.statistic > self.threshold
    }
}

/// Energy-distance two-sample test calibrated by random relabelling.
pub fn energy_permutation_test(a: &[Tensor], b: &[Tensor], permutations: usize, rng: &mut RngStream) -> Result<PermutationTest> {
    check_samples(a, b)?;
    if permutations == 0 {
        return Err(PdsError::InvalidArgument("need at least one permutation".into()));
    }
    let pool: Vec<&Tensor> = a.iter().chain(b).collect();
    let n = pool.len();
    let d = pooled_distances(&pool);
    let ia: Vec<usize> = (0..a.len()).collect();
    let ib: Vec<usize> = (a.len()..n).collect();
    let statistic = energy_from(&d, n, &ia, &ib);

    let labels: Vec<Vec<usize>> = (0..permutations)
        .map(|_| {
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            idx
        })
        .collect();
    let mut null: Vec<f64> =
        labels.par_iter().map(|idx| energy_from(&d, n, &idx[..a.len()], &idx[a.len()..])).collect();
    let exceed = null.iter().filter(|&&s| s >= statistic).count();
    null.sort_by(f64::total_cmp);
    let k = ((0.95 * permutations as f64).ceil() as usize).clamp(1, permutations) - 1;
    Ok(PermutationTest {
        statistic,
        threshold: null[k],
        p_value: (exceed + 1) as f64 / (permutations + 1) as f64,
        permutations,
    })
}

/// Summary of one sampler run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub chains: usize,
    /// Indices of chains that diverged.
    pub diverged: Vec<usize>,
    pub v_coo: f64,
    pub r_coo: f64,
    pub moments: Option<MomentReport>,
    /// Energy distance from the survivors to as many exact target samples.
    pub energy_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TracePoint>,
}

/// `V_coo`/`R_coo` come from the trace when it was recorded, otherwise from
/// the final states. Moments need a Gaussian target and two survivors.
pub fn diagnose(
    run: &SampleRun,
    oracle: &dyn ScoreOracle,
    gaussian: Option<&GaussianTarget>,
    agg: TraceAggregation,
    reference: Option<&mut RngStream>,
) -> Result<DiagnosticReport> {
    let survivors = run.survivors();
    let diverged = run.samples.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i).collect();
    let (v_coo, r_coo) = if run.trace.is_empty() {
        let n = survivors.len().max(1) as f64;
        (
            survivors.iter().map(coordinate_variation).sum::<f64>() / n,
            survivors.iter().map(coordinate_range).sum::<f64>() / n,
        )
    } else {
        let ill = trace_ill_conditioning(&run.trace, agg);
        (ill.v_coo, ill.r_coo)
    };
    let moments = match gaussian {
        Some(g) if survivors.len() >= 2 => Some(moment_check(&survivors, g)?),
        _ => None,
    };
    let energy_distance = match reference {
        Some(rng) if survivors.len() >= 2 => {
            let exact: Vec<Tensor> = (0..survivors.len()).map(|_| oracle.sample_exact(rng)).collect();
            Some(energy_distance(&survivors, &exact)?)
        }
        _ => None,
    };
    Ok(DiagnosticReport { chains: run.samples.len(), diverged, v_coo, r_coo, moments, energy_distance, trace: run.trace.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub steps: usize,
    /// `max_t ‖Π x_t − x'_t‖_∞` between the original and the permuted run.
    pub max_difference: f64,
}

/// Runs `cfg` from `x0` with noise stream `(seed, 0)`, and again with the
/// conjugated score `Π s(Πᵀ·)`, start `Π x0` and noise `Π z_t`. Masks in
/// `cfg` are not permuted, so only permutations commuting with them stay
/// equivariant.
pub fn invariance_harness(
    perm: &[usize],
    cfg: &SamplerConfig,
    oracle: &dyn ScoreOracle,
    schedule: &Schedule,
    x0: &Tensor,
    seed: u64,
) -> Result<InvarianceReport> {
    let mut original = Vec::new();
    run_chain(cfg, oracle, schedule, x0.clone(), &mut RngStream::new(seed, 0), &mut |_, _, x| {
        original.push(x.clone())
    })?;
    let permuted_oracle = PermutedOracle::new(oracle, perm.to_vec())?;
    let mut noise = PermutedNoise::new(RngStream::new(seed, 0), perm.to_vec());
    let mut twin = Vec::new();
    run_chain(cfg, &permuted_oracle, schedule, x0.permute(perm)?, &mut noise, &mut |_, _, x| twin.push(x.clone()))?;
    let mut max_difference: f64 = 0.0;
    for (a, b) in original.iter().zip(&twin) {
        max_difference = max_difference.max(a.permute(perm)?.max_abs_diff(b)?);
    }
    Ok(InvarianceReport { steps: original.len().saturating_sub(1), max_difference })
}

/// Serializes a flat report as `key=value` lines.
pub fn to_key_value<T: Serialize>(report: &T) -> String {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut String) {
        match v {
            serde_json::Value::Object(map) => {
                for (k, val) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, val, out);
                }
            }
            serde_json::Value::Array(items) => {
                for (i, val) in items.iter().enumerate() {
                    walk(&format!("{prefix}.{i}"), val, out);
                }
            }
            serde_json::Value::Null => out.push_str(&format!("{prefix}=none\n")),
            serde_json::Value::String(s) => out.push_str(&format!("{prefix}={s}\n")),
            other => out.push_str(&format!("{prefix}={other}\n")),
        }
    }
    let mut out = String::new();
    walk("", &serde_json::to_value(report).expect("reports serialize"), &mut out);
    out
}
