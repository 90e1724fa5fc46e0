//! `build-masks`, `sample` and `fit-alpha`.

use std::fs;
use std::path::{Path, PathBuf};

use pds_core::alpha::{fit, load_observations, predict_alpha, FitVariant};
use pds_core::diagnostics::{diagnose, to_key_value, TraceAggregation};
use pds_core::ingest::{load_dataset, save_mask, subsample, write_pgm, write_tensor, DatasetSource, Mask};
use pds_core::precond::{build_frequency_mask, build_pixel_mask};
use pds_core::*;
use std::result::Result;

use crate::config::{ExperimentConfig, MaskSpec};
use crate::{BuildMasksArgs, CliError, Common, FitAlphaArgs, MaskKinds, SampleArgs};

/// Loads `--config` (or the defaults) and applies the flags shared by all commands.
pub fn resolve(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.run.out = Some(o.clone());
    }
    if let Some(c) = common.chains {
        cfg.run.chains = c;
    }
    if let Some(t) = common.t {
        cfg.schedule.t = t;
    }
    if let Some(c) = common.accel {
        cfg.schedule.accel = c;
    }
    if let Some(w) = common.omega {
        cfg.sampler.omega = w;
    }
    if let Some(o) = common.gradient_order {
        cfg.sampler.gradient_order = o;
    }
    if let Some(l) = common.initial_law {
        cfg.sampler.initial_law = Some(l);
    }
    if let Some(alpha) = common.alpha {
        cfg.sampler.masks = match cfg.sampler.masks {
            MaskSpec::None => MaskSpec::Target { alpha, samples: 200, frequency: true, pixel: true },
            MaskSpec::Target { samples, frequency, pixel, .. } => MaskSpec::Target { alpha, samples, frequency, pixel },
            _ => return Err(CliError::Usage("--alpha only applies to masks built from the target".into())),
        };
    }
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Shannon entropy of the mask entries normalized to sum to one.
pub fn mask_entropy(values: &Tensor) -> f64 {
    let total = values.sum();
    values.data().iter().map(|v| v / total).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum()
}

fn alpha_for_masks(a: &BuildMasksArgs, cfg: &ExperimentConfig) -> Result<f64, CliError> {
    if let Some(alpha) = a.common.alpha {
        return Ok(alpha);
    }
    let Some(path) = &a.alpha_fit else {
        return match cfg.sampler.masks {
            MaskSpec::Target { alpha, .. } => Ok(alpha),
            _ => Err(CliError::Usage("either --alpha or --alpha-fit with --T is required".into())),
        };
    };
    let t = a.common.t.ok_or_else(|| CliError::Usage("--alpha-fit needs --T".into()))?;
    let variant = a.variant.map(FitVariant::from).unwrap_or(match a.kind {
        MaskKinds::Frequency => FitVariant::FreqOnly,
        _ => FitVariant::BothMasks,
    });
    let f = fit(&load_observations(path)?, variant)?;
    let p = predict_alpha(&f, t)?;
    if p.extrapolated {
        log::warn!("T={t} lies outside the fitted range {}..={}", f.t_min, f.t_max);
    }
    Ok(p.alpha)
}

pub fn build_masks(a: &BuildMasksArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.common)?;
    let alpha = alpha_for_masks(a, &cfg)?;
    if !a.dataset.exists() {
        return Err(CliError::Usage(format!("{}: dataset not found", a.dataset.display())));
    }
    let mut source = DatasetSource::new(&a.dataset, a.format.into());
    source.scaling = a.scaling.into();
    let all = load_dataset(&source)?;
    let data = subsample(&all, a.subsample, &mut RngStream::new(cfg.run.seed, 0));
    let out = cfg.run.out.clone().unwrap_or_else(|| PathBuf::from("."));
    create_dir(&out)?;

    let mut lines = format!("alpha={alpha}\nimages={}\ndataset_size={}\n", data.len(), all.len());
    let mut emit = |name: &str, mask: Mask, warning: Option<String>| -> Result<(), CliError> {
        let path = out.join(format!("{name}.pdsm"));
        let v = mask.values();
        lines.push_str(&format!(
            "{name}.path={}\n{name}.min={}\n{name}.max={}\n{name}.entropy={}\n",
            path.display(),
            v.min(),
            v.max(),
            mask_entropy(v)
        ));
        if let Some(w) = warning {
            lines.push_str(&format!("{name}.warning={w}\n"));
        }
        save_mask(&path, &mask)?;
        Ok(())
    };
    if a.kind != MaskKinds::Pixel {
        let b = build_frequency_mask(&data, alpha)?;
        emit("frequency", Mask::Frequency(b.mask), b.warning)?;
    }
    if a.kind != MaskKinds::Frequency {
        let b = build_pixel_mask(&data, alpha)?;
        emit("pixel", Mask::Pixel(b.mask), b.warning)?;
    }
    print!("{lines}");
    Ok(())
}

pub fn sample(a: &SampleArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&a.common)?;
    if let Some(kind) = a.solenoidal {
        cfg.sampler.solenoidal = Some(kind);
    }
    cfg.run.trace |= a.trace;
    cfg.validate()?;

    let target = cfg.target.build()?;
    let schedule = cfg.schedule.build()?;
    let sc = cfg.sampler_config(&target)?;
    let rng = RngStream::new(cfg.run.seed, 0);
    let run = run_sampler(&sc, target.oracle(), &schedule, cfg.run.chains, &rng, cfg.run.trace)?;
    let mut reference = RngStream::new(cfg.run.seed, 1);
    let report = diagnose(
        &run,
        target.oracle(),
        target.gaussian(),
        TraceAggregation::Both,
        target.has_exact_sampler().then_some(&mut reference),
    )?;

    let out = cfg.run.out.clone().unwrap_or_else(|| PathBuf::from("pds-out"));
    create_dir(&out)?;
    for (i, x) in run.samples.iter().enumerate() {
        let Some(x) = x else { continue };
        write_tensor(&out.join(format!("chain_{i:05}.pdst")), x)?;
        if a.pgm {
            for c in 0..x.shape().channels {
                write_pgm(&out.join(format!("chain_{i:05}_c{c}.pgm")), x, c)?;
            }
        }
    }
    if !report.trace.is_empty() {
        let mut csv = String::from("iteration,substep,v_coo,r_coo,chains\n");
        for p in &report.trace {
            let sub = serde_json::to_value(p.substep).expect("substep serializes");
            csv.push_str(&format!("{},{},{},{},{}\n", p.iteration, sub.as_str().unwrap_or(""), p.v_coo, p.r_coo, p.chains));
        }
        write_text(&out.join("trace.csv"), &csv)?;
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&out.join("report.json"), &(json + "\n"))?;
    // the record leaves out where it was written so reruns elsewhere match
    let mut record = cfg.clone();
    record.run.out = None;
    let config_text = toml::to_string(&record).map_err(|e| CliError::Usage(e.to_string()))?;
    write_text(&out.join("config.toml"), &config_text)?;

    let summary = pds_core::diagnostics::DiagnosticReport { trace: Vec::new(), ..report };
    print!("iterations={}\n{}", schedule.len(), to_key_value(&summary));
    for e in &run.failures {
        log::warn!("{e}");
    }
    if run.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Diverged(run.failures.len()))
    }
}

pub fn fit_alpha(a: &FitAlphaArgs) -> Result<(), CliError> {
    let observations = load_observations(&a.observations)?;
    let f = fit(&observations, a.variant.into())?;
    print!("{}", to_key_value(&f));
    for &t in &a.predict_t {
        let p = predict_alpha(&f, t)?;
        println!("predict.{t}.alpha={}\npredict.{t}.extrapolated={}", p.alpha, p.extrapolated);
    }
    Ok(())
}
