//! Seeded Monte Carlo experiments: the normalised intercept statistic and
//! the two-sample test over repeated simulated datasets.

use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::MultiIndex;
use crate::dataset::{
    generate_sites_with, DensityConfig, PointSet, Region, SamplingDensity, SpatialDataset,
};
use crate::error::{Error, Result};
use crate::inference::{
    default_order, default_tau, two_sample_test, two_sample_variance, Analyzer, Decision,
    InferenceConfig, InferenceSettings,
};
use crate::kernels::{KernelConfig, TaperConfig};
use crate::lpfit::{LocalPolyEstimator, LocalPolyFitter};
use crate::randfield::{
    apply_error_model_with, draw_errors, simulate_bivariate, FieldConfig, FieldModel, NoiseConfig,
    NoiseModel,
};
use crate::rng::{child_rng, mix, stream, GENERATOR_ID};
use crate::surface::{Surface, SurfaceConfig};

pub const HIST_BINS: usize = 30;
pub const HIST_RANGE: (f64, f64) = (-5.0, 5.0);

/// Error process: optional moving-average field plus measurement noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_eps: Option<SurfaceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<SurfaceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldConfig>,
}

impl ErrorConfig {
    pub fn build(&self, d: usize) -> Result<(Option<FieldModel>, NoiseModel)> {
        let noise = NoiseConfig {
            eta: self.eta.clone(),
            sigma_eps: self.sigma_eps.clone(),
            sigma2: self.sigma2,
        }
        .build(d)?;
        let field = self.field.as_ref().map(FieldConfig::build).transpose()?;
        Ok((field, noise))
    }
}

fn default_outlier() -> Option<f64> {
    Some(-10.0)
}

fn default_failure_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub reps: usize,
    pub n: usize,
    pub region: Region,
    #[serde(default)]
    pub density: DensityConfig,
    pub mean: SurfaceConfig,
    pub error: ErrorConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default = "default_order")]
    pub p: usize,
    pub h: Vec<f64>,
    pub pilot_h: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_h: Option<Vec<f64>>,
    pub taper: TaperConfig,
    pub z: Vec<f64>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub master_seed: u64,
    /// Statistics below this value are left out of mean and variance.
    #[serde(default = "default_outlier")]
    pub outlier_below: Option<f64>,
    /// Failure fraction above which a run counts as failed.
    #[serde(default = "default_failure_fraction")]
    pub max_failure_fraction: f64,
}

impl ExperimentSpec {
    pub fn d(&self) -> usize {
        self.region.d()
    }

    pub fn inference_settings(&self) -> InferenceSettings {
        InferenceSettings {
            p: self.p,
            kernel: self.kernel.clone(),
            h: self.h.clone(),
            pilot_h: Some(self.pilot_h.clone()),
            variance_h: self.variance_h.clone(),
            residual_h: self.residual_h.clone(),
            taper: Some(self.taper.clone()),
            tau: self.tau,
            ridge_eps: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be >= 1".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return Err(Error::InvalidConfig(
                "max_failure_fraction must lie in [0, 1]".into(),
            ));
        }
        crate::lpfit::check_interior(&self.z, self.d())?;
        Ok(())
    }
}

/// Objects built once from a spec and shared by all replications.
struct Prepared {
    density: SamplingDensity,
    mean: Arc<dyn Surface>,
    field: Option<FieldModel>,
    noise: NoiseModel,
    inference: InferenceConfig,
}

impl Prepared {
    fn new(spec: &ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.d();
        let (field, noise) = spec.error.build(d)?;
        Ok(Self {
            density: spec.density.build(d)?,
            mean: spec.mean.build(d)?,
            field,
            noise,
            inference: spec.inference_settings().build(d)?,
        })
    }
}

/// One replication's contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub rep: usize,
    pub seed: u64,
    pub t_hat: f64,
    pub covered: bool,
    pub estimate: f64,
    pub bias: f64,
    pub w_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    pub fn new(values: &[f64]) -> Self {
        let (lo, hi) = HIST_RANGE;
        let width = (hi - lo) / HIST_BINS as f64;
        let edges = (0..=HIST_BINS).map(|k| lo + k as f64 * width).collect();
        let mut counts = vec![0; HIST_BINS];
        let (mut underflow, mut overflow) = (0, 0);
        for &v in values {
            if v < lo {
                underflow += 1;
            } else if v >= hi {
                overflow += 1;
            } else {
                let k = (((v - lo) / width) as usize).min(HIST_BINS - 1);
                counts[k] += 1;
            }
        }
        Self {
            edges,
            counts,
            underflow,
            overflow,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }

    /// `(left, right, count)` rows including the two open-ended bins.
    pub fn rows(&self) -> Vec<(f64, f64, usize)> {
        let mut rows = vec![(f64::NEG_INFINITY, self.edges[0], self.underflow)];
        for (k, &c) in self.counts.iter().enumerate() {
            rows.push((self.edges[k], self.edges[k + 1], c));
        }
        rows.push((self.edges[HIST_BINS], f64::INFINITY, self.overflow));
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub variance: Option<f64>,
    pub coverage: f64,
    pub retained: usize,
    pub excluded: usize,
}

/// Mean and unbiased variance of the values at or above `outlier_below`,
/// and the fraction of `covered` flags that are set.
pub fn summarize(
    values: &[f64],
    covered: &[bool],
    outlier_below: Option<f64>,
) -> Result<Aggregate> {
    let kept: Vec<f64> = values
        .iter()
        .copied()
        .filter(|&v| outlier_below.is_none_or(|c| v >= c))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptySummary);
    }
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let variance =
        (kept.len() > 1).then(|| kept.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0));
    let coverage = if covered.is_empty() {
        0.0
    } else {
        covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64
    };
    Ok(Aggregate {
        mean,
        variance,
        coverage,
        retained: kept.len(),
        excluded: values.len() - kept.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub generator_id: String,
    pub master_seed: u64,
    pub reps: usize,
    pub failures: usize,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub replications: Vec<Replication>,
    pub failures: Vec<Failure>,
    /// `None` when no replication was retained.
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub coverage: Option<f64>,
    pub retained: usize,
    pub excluded: usize,
    pub histogram: Histogram,
    pub metadata: RunMetadata,
    pub config: ExperimentSpec,
}

impl ExperimentSummary {
    pub fn failure_fraction(&self) -> f64 {
        self.failures.len() as f64 / self.metadata.reps as f64
    }

    pub fn exceeds_failure_limit(&self) -> bool {
        self.failure_fraction() > self.config.max_failure_fraction
    }
}

/// Sites and responses for replication seed `seed`.
pub fn simulate_dataset(spec: &ExperimentSpec, seed: u64) -> Result<SpatialDataset> {
    let prep = Prepared::new(spec)?;
    simulate_with(spec, &prep, seed)
}

fn simulate_with(spec: &ExperimentSpec, prep: &Prepared, seed: u64) -> Result<SpatialDataset> {
    let mut rng = child_rng(seed, stream::SITES);
    let sites = generate_sites_with(&spec.region, &prep.density, spec.n, &mut rng)?;
    let errors = draw_errors(prep.field.as_ref(), &prep.noise, &spec.region, &sites, seed)?;
    let y = responses(&spec.region, &sites, prep.mean.as_ref(), &errors);
    SpatialDataset::new(spec.region.clone(), sites, y)
}

fn responses(region: &Region, sites: &PointSet, mean: &dyn Surface, errors: &[f64]) -> Vec<f64> {
    sites
        .iter()
        .zip(errors)
        .map(|(x, e)| mean.eval(&region.rescale_unchecked(x)) + e)
        .collect()
}

fn replicate(
    spec: &ExperimentSpec,
    prep: &Prepared,
    rep: usize,
    truth: f64,
) -> Result<Replication> {
    let seed = mix(spec.master_seed, rep as u64);
    let data = simulate_with(spec, prep, seed)?;
    let analyzer = Analyzer::new(&data, &prep.inference)?;
    let fit = analyzer.analyze(&spec.z)?;
    let layout = analyzer.layout();
    let bias = fit.derivative_bias(layout, 0).unwrap_or(0.0);
    let variance = analyzer
        .estimate_variance(&fit, 0)
        .ok_or(Error::DegenerateWindow)?;
    let estimate = fit.derivatives[0];
    let t_hat = (estimate - bias - truth) / variance.sqrt();
    let (lo, hi) = fit
        .ci
        .as_ref()
        .map(|ci| ci[0])
        .ok_or(Error::DegenerateWindow)?;
    Ok(Replication {
        rep,
        seed,
        t_hat,
        covered: lo <= truth && truth <= hi,
        estimate,
        bias,
        w_hat: fit.wn_hat.unwrap_or(f64::NAN),
    })
}

/// Runs all replications in parallel on the current rayon pool. Results
/// are ordered by replication id, so the summary does not depend on the
/// number of worker threads.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentSummary> {
    let prep = Prepared::new(spec)?;
    let truth = prep.mean.eval(&spec.z);
    let outcomes: Vec<(usize, Result<Replication>)> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| (rep, replicate(spec, &prep, rep, truth)))
        .collect();
    let mut replications = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(r) => replications.push(r),
            Err(e) => {
                warn!("replication {rep} failed: {e}");
                failures.push(Failure {
                    rep,
                    message: e.to_string(),
                });
            }
        }
    }
    let values: Vec<f64> = replications.iter().map(|r| r.t_hat).collect();
    let covered: Vec<bool> = replications.iter().map(|r| r.covered).collect();
    let agg = match summarize(&values, &covered, spec.outlier_below) {
        Ok(a) => Some(a),
        Err(Error::EmptySummary) => None,
        Err(e) => return Err(e),
    };
    let retained: Vec<f64> = values
        .iter()
        .copied()
        .filter(|&v| spec.outlier_below.is_none_or(|c| v >= c))
        .collect();
    Ok(ExperimentSummary {
        histogram: Histogram::new(&retained),
        mean: agg.map(|a| a.mean),
        variance: agg.and_then(|a| a.variance),
        coverage: agg.map(|a| a.coverage),
        retained: agg.map_or(0, |a| a.retained),
        excluded: agg.map_or(values.len(), |a| a.excluded),
        metadata: RunMetadata {
            version: env!("CARGO_PKG_VERSION").into(),
            generator_id: GENERATOR_ID.into(),
            master_seed: spec.master_seed,
            reps: spec.reps,
            failures: failures.len(),
            truth,
        },
        replications,
        failures,
        config: spec.clone(),
    })
}

/// Repeated two-sample tests on independently simulated sample pairs. When
/// the field has a second component both samples share one random measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoSampleSpec {
    pub reps: usize,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
    pub region: Region,
    #[serde(default)]
    pub density: DensityConfig,
    pub mean1: SurfaceConfig,
    pub mean2: SurfaceConfig,
    pub error: ErrorConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default = "default_order")]
    pub p: usize,
    pub h: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_h: Option<Vec<f64>>,
    pub taper: TaperConfig,
    pub z: Vec<f64>,
    #[serde(default)]
    pub idx: String,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleSummary {
    pub reps: usize,
    pub completed: usize,
    pub rejections: usize,
    pub inconclusive: usize,
    pub rejection_rate: f64,
    pub statistics: Vec<Option<f64>>,
    pub failures: Vec<Failure>,
}

/// One sample pair drawn from the spec at replication seed `seed`.
pub fn simulate_pair(spec: &TwoSampleSpec, seed: u64) -> Result<(SpatialDataset, SpatialDataset)> {
    let d = spec.region.d();
    let density = spec.density.build(d)?;
    let (field, noise) = spec.error.build(d)?;
    let m1 = spec.mean1.build(d)?;
    let m2 = spec.mean2.build(d)?;
    let region = &spec.region;
    let sites1 = generate_sites_with(
        region,
        &density,
        spec.n,
        &mut child_rng(seed, stream::SITES),
    )?;
    let sites2 = generate_sites_with(
        region,
        &density,
        spec.n2.unwrap_or(spec.n),
        &mut child_rng(seed, stream::SITES_2),
    )?;
    let (e1, e2) = match &field {
        Some(model) if model.components() == 2 => {
            let (f1, f2) =
                simulate_bivariate(model, region, &sites1, &sites2, mix(seed, stream::FIELD))?;
            (
                apply_error_model_with(
                    &sites1,
                    &f1,
                    &noise,
                    region,
                    &mut child_rng(seed, stream::NOISE),
                )?,
                apply_error_model_with(
                    &sites2,
                    &f2,
                    &noise,
                    region,
                    &mut child_rng(seed, stream::NOISE_2),
                )?,
            )
        }
        _ => (
            draw_errors(field.as_ref(), &noise, region, &sites1, seed)?,
            draw_errors(
                field.as_ref(),
                &noise,
                region,
                &sites2,
                mix(seed, stream::FIELD_2),
            )?,
        ),
    };
    let y1 = responses(region, &sites1, m1.as_ref(), &e1);
    let y2 = responses(region, &sites2, m2.as_ref(), &e2);
    Ok((
        SpatialDataset::new(region.clone(), sites1, y1)?,
        SpatialDataset::new(region.clone(), sites2, y2)?,
    ))
}

/// Test settings shared by the CLI and the Monte Carlo driver.
#[derive(Debug, Clone)]
pub struct TwoSampleSettings {
    pub inference: InferenceConfig,
    pub idx: MultiIndex,
}

impl TwoSampleSettings {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        p: usize,
        kernel: &KernelConfig,
        h: &[f64],
        variance_h: Option<&[f64]>,
        residual_h: Option<&[f64]>,
        taper: &TaperConfig,
        idx: &str,
        tau: f64,
    ) -> Result<Self> {
        let settings = InferenceSettings {
            p,
            kernel: kernel.clone(),
            h: h.to_vec(),
            pilot_h: None,
            variance_h: variance_h.map(<[f64]>::to_vec),
            residual_h: residual_h.map(<[f64]>::to_vec),
            taper: Some(taper.clone()),
            tau,
            ridge_eps: 0.0,
        };
        Ok(Self {
            inference: settings.build(d)?,
            idx: MultiIndex::parse_digits(d, idx)?,
        })
    }
}

/// Runs the test at `z` on one pair of datasets.
pub fn run_two_sample(
    data1: &SpatialDataset,
    data2: &SpatialDataset,
    settings: &TwoSampleSettings,
    z: &[f64],
) -> Result<crate::inference::TestReport> {
    let cfg = &settings.inference;
    let taper = cfg
        .taper
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("two-sample test needs a taper".into()))?;
    let e1 = LocalPolyEstimator::new(data1, &cfg.fit)?;
    let e2 = LocalPolyEstimator::new(data2, &cfg.fit)?;
    let fit1 = e1.fit_at(z)?;
    let fit2 = e2.fit_at(z)?;
    let fk = &cfg.fit;
    let r1 = LocalPolyFitter::new(data1, &fk.kernel, fk.p, &cfg.residual_h, fk.ridge_eps)?;
    let r2 = LocalPolyFitter::new(data2, &fk.kernel, fk.p, &cfg.residual_h, fk.ridge_eps)?;
    let v = two_sample_variance(
        data1,
        data2,
        &fk.kernel,
        &cfg.variance_h,
        taper,
        z,
        &r1,
        &r2,
    )?;
    two_sample_test(
        &fit1,
        &fit2,
        v.value,
        e1.moments(),
        e1.layout(),
        &settings.idx,
        cfg.tau,
    )
}

pub fn run_two_sample_experiment(spec: &TwoSampleSpec) -> Result<TwoSampleSummary> {
    if spec.reps == 0 {
        return Err(Error::InvalidConfig("reps must be >= 1".into()));
    }
    let settings = TwoSampleSettings::new(
        spec.region.d(),
        spec.p,
        &spec.kernel,
        &spec.h,
        spec.variance_h.as_deref().or(Some(&spec.h)),
        spec.residual_h.as_deref().or(Some(&spec.h)),
        &spec.taper,
        &spec.idx,
        spec.tau,
    )?;
    let outcomes: Vec<(usize, Result<crate::inference::TestReport>)> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = mix(spec.master_seed, rep as u64);
            let out = simulate_pair(spec, seed)
                .and_then(|(a, b)| run_two_sample(&a, &b, &settings, &spec.z));
            (rep, out)
        })
        .collect();
    let mut statistics = Vec::new();
    let mut failures = Vec::new();
    let (mut rejections, mut inconclusive) = (0, 0);
    for (rep, out) in outcomes {
        match out {
            Ok(report) => {
                match report.decision {
                    Decision::Reject => rejections += 1,
                    Decision::Inconclusive => inconclusive += 1,
                    Decision::Retain => {}
                }
                statistics.push(report.t);
            }
            Err(e) => failures.push(Failure {
                rep,
                message: e.to_string(),
            }),
        }
    }
    let completed = statistics.len();
    Ok(TwoSampleSummary {
        reps: spec.reps,
        completed,
        rejections,
        inconclusive,
        rejection_rate: if completed == 0 {
            0.0
        } else {
            rejections as f64 / completed as f64
        },
        statistics,
        failures,
    })
}
