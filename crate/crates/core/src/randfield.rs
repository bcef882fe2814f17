//! Levy-driven moving-average random fields `e(x) = int phi(x - u) L(du)`
//! and the additive error model built on them.
//!
//! A compound-Poisson measure puts i.i.d. centred normal jumps `Z_k` at
//! uniformly scattered knots `a_k`, so a realisation is the superposition
//! `e(x) = sum_k Z_k phi(x - a_k)`. Knots are drawn on an enlarged window
//! around the sampling region so that sites near the boundary see
//! (almost) the full kernel mass. A Gaussian measure is either sampled
//! exactly from its covariance (small site counts) or approximated by a
//! dense superposition with matched jump variance.
//!
//! Bivariate fields share one knot/jump set and differ only in their
//! per-component kernels, which induces cross-correlation between the
//! components.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{PointSet, Region};
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::{child_rng, rng_from_seed, stream};
use crate::surface::{Constant, Surface, SurfaceConfig};

/// Truncation level for the automatic knot buffer.
const AUTO_BUFFER_TAIL: f64 = 1e-8;

/// Largest site count sampled exactly from a Gaussian covariance.
pub const GAUSSIAN_EXACT_MAX: usize = 4000;

/// Radial moving-average kernel `phi(x) = f(||x||)`.
pub trait MaKernel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn eval(&self, r: f64) -> f64;

    /// Exponential tail rate, used to size the knot buffer.
    fn decay_rate(&self) -> f64;

    /// `int phi(x - u) phi(u) du` at `||x|| = lag` in dimension `d`.
    fn self_convolution(&self, lag: f64, d: usize) -> Result<f64>;
}

/// `phi(x) = scale * exp(-rate * ||x||)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponential {
    pub scale: f64,
    pub rate: f64,
}

impl Exponential {
    pub fn new(scale: f64, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) || !scale.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "exponential kernel needs rate > 0, got scale={scale}, rate={rate}"
            )));
        }
        Ok(Self { scale, rate })
    }

    /// CAR(1) kernel `exp(-lambda ||x||)`.
    pub fn car1(lambda: f64) -> Result<Self> {
        Self::new(1.0, lambda)
    }
}

impl MaKernel for Exponential {
    fn name(&self) -> &'static str {
        "exponential"
    }

    fn eval(&self, r: f64) -> f64 {
        self.scale * (-self.rate * r).exp()
    }

    fn decay_rate(&self) -> f64 {
        self.rate
    }

    fn self_convolution(&self, lag: f64, d: usize) -> Result<f64> {
        let s = lag.abs();
        let l = self.rate;
        let c2 = self.scale * self.scale;
        match d {
            1 => Ok(c2 * (1.0 + l * s) * (-l * s).exp() / l),
            // (pi/4) s^2 K_2(lambda s), tending to pi / (2 lambda^2) at 0
            2 => {
                let z = l * s;
                let z2k2 = if z < 1e-4 {
                    2.0 - z * z / 2.0
                } else {
                    z * z * bessel_k(2.0, z)
                };
                Ok(c2 * PI / 4.0 * z2k2 / (l * l))
            }
            _ => Err(Error::InvalidConfig(format!(
                "exponential covariance implemented for d in {{1, 2}}, got d={d}"
            ))),
        }
    }
}

/// Modified Bessel function of the second kind, `K_nu(z) = int_0^inf
/// exp(-z cosh t) cosh(nu t) dt`, by the trapezoidal rule (the integrand
/// is analytic and decays doubly exponentially).
pub fn bessel_k(nu: f64, z: f64) -> f64 {
    assert!(z > 0.0, "bessel_k needs z > 0");
    let t_max = (750.0 / z).max(1.0).acosh() + 1.0;
    let step = 0.01;
    let n = (t_max / step).ceil() as usize;
    let f = |t: f64| (-z * t.cosh()).exp() * (nu * t).cosh();
    let mut sum = 0.5 * f(0.0);
    for k in 1..=n {
        sum += f(k as f64 * step);
    }
    sum * step
}

/// Knot locations (row-major) with one jump per knot.
#[derive(Debug, Clone)]
pub struct KnotSet {
    pub locations: PointSet,
    pub jumps: Vec<f64>,
}

impl KnotSet {
    /// `sum_k Z_k phi(x - a_k)` at every site.
    pub fn evaluate(&self, kernel: &dyn MaKernel, sites: &PointSet) -> Vec<f64> {
        sites
            .iter()
            .map(|x| {
                self.locations
                    .iter()
                    .zip(&self.jumps)
                    .map(|(a, z)| {
                        let r2: f64 = x.iter().zip(a).map(|(p, q)| (p - q) * (p - q)).sum();
                        z * kernel.eval(r2.sqrt())
                    })
                    .sum()
            })
            .collect()
    }
}

/// Axis-aligned box `prod_j [lo_j, hi_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Window {
    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> PointSet {
        let d = self.lo.len();
        let mut coords = Vec::with_capacity(count * d);
        for _ in 0..count {
            for j in 0..d {
                let u: f64 = rng.random();
                coords.push(self.lo[j] + u * (self.hi[j] - self.lo[j]));
            }
        }
        PointSet::new(d, coords).expect("d >= 1")
    }
}

/// How far knots extend beyond the sampling region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Buffer {
    /// Knots on `prod_j [-f A_j / 2, f A_j / 2]`.
    Factor(f64),
    /// Margin chosen so the kernel tail beyond it is below 1e-8.
    #[serde(with = "auto_tag")]
    Auto,
}

mod auto_tag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!(
                "expected \"auto\" or a number, got {s:?}"
            )))
        }
    }
}

impl Default for Buffer {
    fn default() -> Self {
        Buffer::Factor(2.0)
    }
}

impl Buffer {
    pub fn window(&self, region: &Region, decay_rate: f64) -> Result<Window> {
        let half: Vec<f64> = match *self {
            Buffer::Factor(f) => {
                if !(f >= 1.0 && f.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "knot buffer factor must be >= 1, got {f}"
                    )));
                }
                region.sides().iter().map(|a| f * a / 2.0).collect()
            }
            Buffer::Auto => {
                let margin = -AUTO_BUFFER_TAIL.ln() / decay_rate;
                region.sides().iter().map(|a| a / 2.0 + margin).collect()
            }
        };
        Ok(Window {
            lo: half.iter().map(|h| -h).collect(),
            hi: half,
        })
    }
}

/// An independently scattered random measure realised as knots and jumps.
pub trait RandomMeasure: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// `Var L(A) / |A|`.
    fn variance_per_unit(&self, window: &Window) -> f64;

    fn draw_knots(&self, window: &Window, rng: &mut dyn rand::RngCore) -> Result<KnotSet>;

    /// Variance of a single jump.
    fn jump_variance(&self) -> f64;

    /// Jump variance per unit volume when the measure is Gaussian.
    fn gaussian_variance(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnotCount {
    Poisson { intensity: f64 },
    Fixed(usize),
}

/// Compound-Poisson measure with `N(0, tau2)` jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundPoisson {
    pub count: KnotCount,
    pub jump_variance: f64,
}

impl RandomMeasure for CompoundPoisson {
    fn name(&self) -> &'static str {
        "compound_poisson"
    }

    fn variance_per_unit(&self, window: &Window) -> f64 {
        let rho = match self.count {
            KnotCount::Poisson { intensity } => intensity,
            KnotCount::Fixed(k) => k as f64 / window.volume(),
        };
        rho * self.jump_variance
    }

    fn draw_knots(&self, window: &Window, rng: &mut dyn rand::RngCore) -> Result<KnotSet> {
        let count = match self.count {
            KnotCount::Fixed(k) => k,
            KnotCount::Poisson { intensity } => {
                let mean = intensity * window.volume();
                Poisson::new(mean)
                    .map_err(|e| Error::InvalidConfig(format!("knot count: {e}")))?
                    .sample(rng) as usize
            }
        };
        let locations = window.sample(count, rng);
        let sd = self.jump_variance.sqrt();
        let jumps = (0..count)
            .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        Ok(KnotSet { locations, jumps })
    }

    fn jump_variance(&self) -> f64 {
        self.jump_variance
    }
}

/// Gaussian white-noise measure with variance `tau2` per unit volume.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    pub variance: f64,
    /// Knot intensity of the superposition approximation.
    pub knot_intensity: f64,
}

impl RandomMeasure for GaussianMeasure {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn variance_per_unit(&self, _window: &Window) -> f64 {
        self.variance
    }

    fn draw_knots(&self, window: &Window, rng: &mut dyn rand::RngCore) -> Result<KnotSet> {
        CompoundPoisson {
            count: KnotCount::Poisson {
                intensity: self.knot_intensity,
            },
            jump_variance: self.variance / self.knot_intensity,
        }
        .draw_knots(window, rng)
    }

    fn jump_variance(&self) -> f64 {
        self.variance / self.knot_intensity
    }

    fn gaussian_variance(&self) -> Option<f64> {
        Some(self.variance)
    }
}

/// Kernels, driving measure and knot buffer of a (uni- or bivariate) field.
#[derive(Debug, Clone)]
pub struct FieldModel {
    pub kernels: Vec<Arc<dyn MaKernel>>,
    pub measure: Arc<dyn RandomMeasure>,
    pub buffer: Buffer,
    pub gaussian_exact_max: usize,
    /// When set, knot locations come from this seed in every realisation
    /// and only the jumps are redrawn.
    pub knot_seed: Option<u64>,
}

impl FieldModel {
    /// CAR(1) field driven by `n_knots` fixed knots with `N(0, tau2)` jumps.
    pub fn car1_fixed(lambda: f64, tau2: f64, n_knots: usize) -> Result<Self> {
        Self::new(
            vec![Arc::new(Exponential::car1(lambda)?)],
            Arc::new(CompoundPoisson {
                count: KnotCount::Fixed(n_knots),
                jump_variance: tau2,
            }),
            Buffer::default(),
        )
    }

    /// CAR(1) field driven by a compound-Poisson measure of intensity `rho`.
    pub fn car1_poisson(lambda: f64, tau2: f64, rho: f64) -> Result<Self> {
        Self::new(
            vec![Arc::new(Exponential::car1(lambda)?)],
            Arc::new(CompoundPoisson {
                count: KnotCount::Poisson { intensity: rho },
                jump_variance: tau2,
            }),
            Buffer::default(),
        )
    }

    pub fn new(
        kernels: Vec<Arc<dyn MaKernel>>,
        measure: Arc<dyn RandomMeasure>,
        buffer: Buffer,
    ) -> Result<Self> {
        if kernels.is_empty() || kernels.len() > 2 {
            return Err(Error::InvalidConfig(format!(
                "field needs 1 or 2 component kernels, got {}",
                kernels.len()
            )));
        }
        Ok(Self {
            kernels,
            measure,
            buffer,
            gaussian_exact_max: GAUSSIAN_EXACT_MAX,
            knot_seed: None,
        })
    }

    pub fn components(&self) -> usize {
        self.kernels.len()
    }

    pub fn knot_window(&self, region: &Region) -> Result<Window> {
        let rate = self
            .kernels
            .iter()
            .map(|k| k.decay_rate())
            .fold(f64::INFINITY, f64::min);
        self.buffer.window(region, rate)
    }

    pub fn draw_knots(&self, region: &Region, rng: &mut dyn rand::RngCore) -> Result<KnotSet> {
        let window = self.knot_window(region)?;
        match self.knot_seed {
            None => self.measure.draw_knots(&window, rng),
            Some(seed) => {
                let mut knots = self.measure.draw_knots(&window, &mut rng_from_seed(seed))?;
                let sd = self.measure.jump_variance().sqrt();
                for z in &mut knots.jumps {
                    *z = sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
                }
                Ok(knots)
            }
        }
    }
}

/// Analytic `Cov(e(0), e(x)) / (variance per unit)` for an exponential
/// kernel: the self-convolution `int phi(x - u) phi(u) du`.
pub fn covariance_exponential(kernel: &dyn MaKernel, x: &[f64]) -> Result<f64> {
    if kernel.name() != "exponential" {
        return Err(Error::InvalidConfig(format!(
            "analytic covariance unavailable for kernel {:?}",
            kernel.name()
        )));
    }
    let lag = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    kernel.self_convolution(lag, x.len())
}

/// One realisation of the first field component at every site.
pub fn simulate_field(
    model: &FieldModel,
    region: &Region,
    sites: &PointSet,
    seed: u64,
) -> Result<Vec<f64>> {
    region.check_sites(sites)?;
    let mut rng = rng_from_seed(seed);
    let kernel = model.kernels[0].as_ref();
    if let Some(variance) = model.measure.gaussian_variance() {
        if sites.len() <= model.gaussian_exact_max && model.knot_seed.is_none() {
            return gaussian_exact(kernel, variance, sites, &mut rng);
        }
    }
    let knots = model.draw_knots(region, &mut rng)?;
    Ok(knots.evaluate(kernel, sites))
}

/// Both components of a shared-measure bivariate field, the first at
/// `sites1` and the second at `sites2`.
pub fn simulate_bivariate(
    model: &FieldModel,
    region: &Region,
    sites1: &PointSet,
    sites2: &PointSet,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if model.components() != 2 {
        return Err(Error::InvalidConfig(
            "bivariate simulation needs 2 kernels".into(),
        ));
    }
    region.check_sites(sites1)?;
    region.check_sites(sites2)?;
    let mut rng = rng_from_seed(seed);
    let knots = model.draw_knots(region, &mut rng)?;
    Ok((
        knots.evaluate(model.kernels[0].as_ref(), sites1),
        knots.evaluate(model.kernels[1].as_ref(), sites2),
    ))
}

fn gaussian_exact<R: Rng>(
    kernel: &dyn MaKernel,
    variance: f64,
    sites: &PointSet,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = sites.len();
    let d = sites.d();
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let lag: f64 = sites
                .get(i)
                .iter()
                .zip(sites.get(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let c = variance * kernel.self_convolution(lag, d)?;
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let jitter = 1e-10 * cov.diagonal().max().max(f64::MIN_POSITIVE);
    for i in 0..n {
        cov[(i, i)] += jitter;
    }
    let chol = cov.cholesky().ok_or_else(|| {
        Error::InvalidConfig("Gaussian field covariance is not positive definite".into())
    })?;
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok((chol.l() * z).iter().copied().collect())
}

/// Serializable field description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    #[serde(default = "default_measure")]
    pub measure: String,
    #[serde(default = "default_kernel")]
    pub kernel: String,
    pub lambda: f64,
    #[serde(default = "unit")]
    pub scale: f64,
    pub tau2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_knots: Option<usize>,
    #[serde(default)]
    pub buffer: Buffer,
    /// Kernel of the second component for shared-measure bivariate fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<ComponentConfig>,
    /// Knot intensity of the Gaussian superposition fallback.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knot_intensity: Option<f64>,
    /// Keep knot locations fixed across realisations (see
    /// [`FieldModel::knot_seed`]).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knot_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    #[serde(default = "default_kernel")]
    pub kernel: String,
    pub lambda: f64,
    #[serde(default = "unit")]
    pub scale: f64,
}

fn default_measure() -> String {
    "compound_poisson".into()
}

fn default_kernel() -> String {
    "car1".into()
}

fn unit() -> f64 {
    1.0
}

type MaKernelBuilder = fn(f64, f64) -> Result<Arc<dyn MaKernel>>;
type MeasureBuilder = fn(&FieldConfig) -> Result<Arc<dyn RandomMeasure>>;

pub fn ma_kernel_registry() -> &'static Registry<MaKernelBuilder> {
    static REG: OnceLock<Registry<MaKernelBuilder>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::new("moving-average kernel")
            .with(
                "car1",
                (|lambda, _| Ok(Arc::new(Exponential::car1(lambda)?) as Arc<dyn MaKernel>))
                    as MaKernelBuilder,
            )
            .with("exponential", |lambda, scale| {
                Ok(Arc::new(Exponential::new(scale, lambda)?) as Arc<dyn MaKernel>)
            })
    })
}

pub fn measure_registry() -> &'static Registry<MeasureBuilder> {
    static REG: OnceLock<Registry<MeasureBuilder>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::new("random measure")
            .with(
                "compound_poisson",
                (|cfg: &FieldConfig| {
                    let count = match (cfg.rho, cfg.n_knots) {
                        (Some(rho), None) if rho > 0.0 => KnotCount::Poisson { intensity: rho },
                        (None, Some(k)) if k > 0 => KnotCount::Fixed(k),
                        _ => {
                            return Err(Error::InvalidConfig(
                                "compound_poisson needs exactly one of rho > 0 or n_knots > 0"
                                    .into(),
                            ))
                        }
                    };
                    Ok(Arc::new(CompoundPoisson {
                        count,
                        jump_variance: cfg.tau2,
                    }) as Arc<dyn RandomMeasure>)
                }) as MeasureBuilder,
            )
            .with("gaussian", |cfg| {
                let knot_intensity = cfg.knot_intensity.unwrap_or(16.0);
                if !(knot_intensity > 0.0) {
                    return Err(Error::InvalidConfig(
                        "knot_intensity must be positive".into(),
                    ));
                }
                Ok(Arc::new(GaussianMeasure {
                    variance: cfg.tau2,
                    knot_intensity,
                }) as Arc<dyn RandomMeasure>)
            })
    })
}

impl FieldConfig {
    pub fn build(&self) -> Result<FieldModel> {
        if !(self.tau2 >= 0.0 && self.tau2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tau2 must be >= 0, got {}",
                self.tau2
            )));
        }
        let mut kernels = vec![(ma_kernel_registry().get(&self.kernel)?)(
            self.lambda,
            self.scale,
        )?];
        if let Some(c) = &self.second {
            kernels.push((ma_kernel_registry().get(&c.kernel)?)(c.lambda, c.scale)?);
        }
        let measure = (measure_registry().get(&self.measure)?)(self)?;
        let mut model = FieldModel::new(kernels, measure, self.buffer)?;
        model.knot_seed = self.knot_seed;
        Ok(model)
    }
}

/// `eta(z) e(x) + sigma_eps(z) eps` with `z = x / A` and `eps ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub eta: Arc<dyn Surface>,
    pub sigma_eps: Arc<dyn Surface>,
}

impl NoiseModel {
    pub fn constant(eta: f64, sigma_eps: f64) -> Self {
        Self {
            eta: Arc::new(Constant(eta)),
            sigma_eps: Arc::new(Constant(sigma_eps)),
        }
    }
}

/// JSON form of the noise scales; `sigma2` is shorthand for a constant
/// `sigma_eps = sqrt(sigma2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<SurfaceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_eps: Option<SurfaceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
}

impl NoiseConfig {
    pub fn build(&self, d: usize) -> Result<NoiseModel> {
        let eta = match &self.eta {
            Some(c) => c.build(d)?,
            None => Arc::new(Constant(1.0)),
        };
        let sigma_eps = match (&self.sigma_eps, self.sigma2) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "give sigma_eps or sigma2, not both".into(),
                ))
            }
            (Some(c), None) => c.build(d)?,
            (None, Some(s2)) if s2 >= 0.0 => Arc::new(Constant(s2.sqrt())),
            (None, Some(s2)) => {
                return Err(Error::InvalidConfig(format!(
                    "sigma2 must be >= 0, got {s2}"
                )))
            }
            (None, None) => Arc::new(Constant(0.0)),
        };
        Ok(NoiseModel { eta, sigma_eps })
    }
}

/// Error contribution at each site given field values `e`.
pub fn apply_error_model(
    sites: &PointSet,
    field: &[f64],
    noise: &NoiseModel,
    region: &Region,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    apply_error_model_with(sites, field, noise, region, &mut rng)
}

pub fn apply_error_model_with<R: Rng + ?Sized>(
    sites: &PointSet,
    field: &[f64],
    noise: &NoiseModel,
    region: &Region,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if field.len() != sites.len() {
        return Err(Error::InvalidConfig(format!(
            "{} field values for {} sites",
            field.len(),
            sites.len()
        )));
    }
    Ok(sites
        .iter()
        .zip(field)
        .map(|(x, &e)| {
            let z = region.rescale_unchecked(x);
            let eps: f64 = rng.sample(StandardNormal);
            noise.eta.eval(&z) * e + noise.sigma_eps.eval(&z) * eps
        })
        .collect())
}

/// Full error draw for one sample: field (if any) plus measurement noise,
/// using the `FIELD` and `NOISE` sub-streams of `seed`.
pub fn draw_errors(
    field: Option<&FieldModel>,
    noise: &NoiseModel,
    region: &Region,
    sites: &PointSet,
    seed: u64,
) -> Result<Vec<f64>> {
    let e = match field {
        Some(model) => simulate_field(model, region, sites, crate::rng::mix(seed, stream::FIELD))?,
        None => vec![0.0; sites.len()],
    };
    let mut rng = child_rng(seed, stream::NOISE);
    apply_error_model_with(sites, &e, noise, region, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_k_reference_values() {
        // K_0(1), K_1(1), K_2(1), K_2(0.1) from standard tables
        assert!((bessel_k(0.0, 1.0) - 0.421_024_438_240_708_3).abs() < 1e-13);
        assert!((bessel_k(1.0, 1.0) - 0.601_907_230_197_234_6).abs() < 1e-13);
        assert!((bessel_k(2.0, 1.0) - 1.624_838_898_635_177_5).abs() < 1e-12);
        assert!((bessel_k(2.0, 0.1) - 199.503_964_642_114_1).abs() < 1e-9);
    }

    #[test]
    fn covariance_at_zero_and_scaling() {
        let k1 = Exponential::car1(1.0).unwrap();
        let c0 = covariance_exponential(&k1, &[0.0, 0.0]).unwrap();
        assert!((c0 - PI / 2.0).abs() < 1e-12);
        let k05 = Exponential::car1(0.5).unwrap();
        let ratio = covariance_exponential(&k05, &[0.0, 0.0]).unwrap() / c0;
        assert!((ratio - 4.0).abs() < 1e-12);
        // continuity across the small-argument switch
        let a = covariance_exponential(&k1, &[0.99e-4, 0.0]).unwrap();
        let b = covariance_exponential(&k1, &[1.01e-4, 0.0]).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn covariance_decreases_to_zero() {
        let k = Exponential::car1(1.0).unwrap();
        let mut prev = f64::INFINITY;
        for lag in [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0] {
            let c = covariance_exponential(&k, &[lag, 0.0]).unwrap();
            assert!(c < prev && c > 0.0);
            prev = c;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn zero_jump_variance_gives_zero_field() {
        let region = Region::new(vec![10.0, 10.0]).unwrap();
        let model = FieldModel::car1_fixed(1.0, 0.0, 800).unwrap();
        let sites = PointSet::from_points(2, &[[0.0, 0.0], [1.0, -2.0]]).unwrap();
        let e = simulate_field(&model, &region, &sites, 3).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coincident_sites_share_values() {
        let region = Region::new(vec![10.0, 10.0]).unwrap();
        let model = FieldModel::car1_fixed(1.0, 0.01, 800).unwrap();
        let sites = PointSet::from_points(2, &[[1.5, 2.0], [1.5, 2.0]]).unwrap();
        let e = simulate_field(&model, &region, &sites, 3).unwrap();
        assert_eq!(e[0], e[1]);
    }

    #[test]
    fn buffer_windows() {
        let region = Region::new(vec![10.0, 4.0]).unwrap();
        let w = Buffer::Factor(2.0).window(&region, 1.0).unwrap();
        assert_eq!(w.lo, vec![-10.0, -4.0]);
        assert_eq!(w.volume(), 20.0 * 8.0);
        let w = Buffer::Auto.window(&region, 1.0).unwrap();
        assert!((w.hi[0] - (5.0 + 1e8f64.ln())).abs() < 1e-12);
        assert!(Buffer::Factor(0.5).window(&region, 1.0).is_err());
        let b: Buffer = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(b, Buffer::Auto);
        let b: Buffer = serde_json::from_str("3").unwrap();
        assert_eq!(b, Buffer::Factor(3.0));
    }

    #[test]
    fn rejects_bad_parameters_and_outside_sites() {
        assert!(Exponential::car1(0.0).is_err());
        let cfg: FieldConfig =
            serde_json::from_str(r#"{"lambda": 1, "tau2": 0.01, "rho": 2, "n_knots": 10}"#)
                .unwrap();
        assert!(cfg.build().is_err());
        let cfg: FieldConfig =
            serde_json::from_str(r#"{"lambda": 1, "tau2": -1, "rho": 2}"#).unwrap();
        assert!(cfg.build().is_err());
        let region = Region::new(vec![2.0, 2.0]).unwrap();
        let model = FieldModel::car1_fixed(1.0, 0.01, 10).unwrap();
        let sites = PointSet::from_points(2, &[[1.5, 0.0]]).unwrap();
        assert!(simulate_field(&model, &region, &sites, 0).is_err());
    }

    #[test]
    fn error_model_cases() {
        let region = Region::new(vec![10.0, 10.0]).unwrap();
        let sites = PointSet::from_points(2, &[[0.0, 0.0], [1.0, 1.0], [-2.0, 3.0]]).unwrap();
        let zero = apply_error_model(
            &sites,
            &[0.0; 3],
            &NoiseModel::constant(1.0, 0.0),
            &region,
            1,
        )
        .unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let field = [5.0, 5.0, 5.0];
        let iid =
            apply_error_model(&sites, &field, &NoiseModel::constant(0.0, 1.0), &region, 1).unwrap();
        let iid2 = apply_error_model(
            &sites,
            &[0.0; 3],
            &NoiseModel::constant(0.0, 1.0),
            &region,
            1,
        )
        .unwrap();
        assert_eq!(iid, iid2);
        assert!(apply_error_model(
            &sites,
            &[0.0; 2],
            &NoiseModel::constant(0.0, 1.0),
            &region,
            1
        )
        .is_err());
    }

    #[test]
    fn gaussian_exact_has_target_variance() {
        let region = Region::new(vec![10.0, 10.0]).unwrap();
        let cfg: FieldConfig =
            serde_json::from_str(r#"{"measure": "gaussian", "lambda": 1, "tau2": 0.5}"#).unwrap();
        let model = cfg.build().unwrap();
        let sites = PointSet::from_points(2, &[[0.0, 0.0], [3.0, 3.0]]).unwrap();
        let target = 0.5 * PI / 2.0;
        let reps = 4000;
        let mut acc = 0.0;
        for s in 0..reps {
            let e = simulate_field(&model, &region, &sites, s).unwrap();
            acc += e[0] * e[0];
        }
        let var = acc / reps as f64;
        // sd of the mean of squares is target*sqrt(2/reps)
        assert!(
            (var - target).abs() < 4.0 * target * (2.0 / reps as f64).sqrt(),
            "{var}"
        );
    }

    #[test]
    fn fixed_knot_locations() {
        let cfg: FieldConfig = serde_json::from_value(serde_json::json!({
            "lambda": 1.0, "tau2": 0.01, "n_knots": 50, "knot_seed": 9
        }))
        .unwrap();
        let model = cfg.build().unwrap();
        let region = Region::new(vec![10.0, 10.0]).unwrap();
        let a = model.draw_knots(&region, &mut rng_from_seed(1)).unwrap();
        let b = model.draw_knots(&region, &mut rng_from_seed(2)).unwrap();
        assert_eq!(a.locations.coords(), b.locations.coords());
        assert_ne!(a.jumps, b.jumps);
    }
}
