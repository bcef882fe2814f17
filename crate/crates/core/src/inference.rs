//! Variance estimation, confidence intervals and the two-sample test.

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::{BasisLayout, MultiIndex};
use crate::dataset::SpatialDataset;
use crate::error::{Error, Result};
use crate::index::GridIndex;
use crate::kernels::{KernelConfig, KernelSpec, MomentMatrices, TaperConfig, TaperSpec};
use crate::lpfit::{
    check_interior, variance_term, FitConfig, FitResult, KernelWindow, LocalPolyEstimator,
    LocalPolyFitter, MeanPredictor,
};

fn standard_normal() -> Normal {
    Normal::standard()
}

/// `Phi(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

/// `Phi^{-1}(u)` for `u` in `(0, 1)`.
pub fn normal_quantile(u: f64) -> f64 {
    standard_normal().inverse_cdf(u)
}

fn check_level(tau: f64, upper: f64) -> Result<()> {
    if !(tau > 0.0 && tau < upper) {
        return Err(Error::InvalidConfig(format!(
            "level tau must lie in (0, {upper}), got {tau}"
        )));
    }
    Ok(())
}

/// `(n prod h)^{-1} sum_i K_Ah(X_i - A z)`.
pub fn density_hat(
    data: &SpatialDataset,
    kernel: &KernelSpec,
    h: &[f64],
    z: &[f64],
) -> Result<f64> {
    check_interior(z, data.d())?;
    let window = KernelWindow::new(data, kernel, h)?;
    Ok(window_density(&window, z))
}

fn window_density(window: &KernelWindow<'_>, z: &[f64]) -> f64 {
    let n = window.data().len();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    window.for_each(z, |_, _, w| total += w);
    let hprod: f64 = window.h().iter().product();
    total / (n as f64 * hprod)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub g_hat: f64,
    pub w1_hat: f64,
    pub w_hat: f64,
    pub residual_bandwidth: Vec<f64>,
}

/// Sites with positive weight at `z`, with weight times residual.
struct WeightedResiduals {
    sites: Vec<usize>,
    values: Vec<f64>,
}

fn weighted_residuals(
    window: &KernelWindow<'_>,
    z: &[f64],
    mean: &dyn MeanPredictor,
) -> Result<WeightedResiduals> {
    let data = window.data();
    let weights = window.weights(z);
    let mut sites = Vec::with_capacity(weights.len());
    let mut values = Vec::with_capacity(weights.len());
    for (i, w) in weights {
        let zi = data.region().rescale_unchecked(data.site(i));
        let r = data.responses()[i] - mean.predict(&zi)?;
        sites.push(i);
        values.push(w * r);
    }
    Ok(WeightedResiduals { sites, values })
}

/// `sum_{i in a, j in b} v_i v_j Kbar_b(X_i - X_j)` visiting only pairs
/// within taper range.
fn taper_pair_sum(
    a_data: &SpatialDataset,
    a: &WeightedResiduals,
    b_data: &SpatialDataset,
    b: &WeightedResiduals,
    taper: &TaperSpec,
) -> Result<f64> {
    let d = a_data.d();
    if taper.widths().len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: taper.widths().len(),
        });
    }
    if a.sites.is_empty() || b.sites.is_empty() {
        return Ok(0.0);
    }
    let reach = taper.reach();
    let mut b_coords = Vec::with_capacity(b.sites.len() * d);
    for &j in &b.sites {
        b_coords.extend_from_slice(b_data.site(j));
    }
    let b_points = crate::dataset::PointSet::new(d, b_coords)?;
    let grid = GridIndex::new(&b_points, vec![reach; d]);
    let radius = vec![reach; d];
    let mut w = vec![0.0; d];
    let mut total = 0.0;
    for (k, &i) in a.sites.iter().enumerate() {
        let xi = a_data.site(i);
        let mut row = 0.0;
        for m in grid.candidates(xi, &radius) {
            let xj = b_points.get(m);
            for t in 0..d {
                w[t] = xi[t] - xj[t];
            }
            let kb = taper.eval(&w);
            if kb != 0.0 {
                row += kb * b.values[m];
            }
        }
        total += a.values[k] * row;
    }
    Ok(total)
}

/// Estimates `W_n(z)`. `h` is the window of the kernel weights and of the
/// density estimate; `residual_mean` supplies `m_hat` for the residuals.
pub fn variance_hat(
    data: &SpatialDataset,
    residual_mean: &dyn MeanPredictor,
    residual_bandwidth: &[f64],
    kernel: &KernelSpec,
    h: &[f64],
    taper: &TaperSpec,
    z: &[f64],
) -> Result<VarianceEstimate> {
    check_interior(z, data.d())?;
    let window = KernelWindow::new(data, kernel, h)?;
    let g_hat = window_density(&window, z);
    if !(g_hat > 0.0) {
        return Err(Error::DegenerateWindow);
    }
    let res = weighted_residuals(&window, z, residual_mean)?;
    let n = data.len() as f64;
    let hprod: f64 = h.iter().product();
    let sum = taper_pair_sum(data, &res, data, &res, taper)?;
    let w1_hat = data.region().volume() / (n * n * hprod) * sum;
    let kappa = kernel.kappa_moment(&vec![0; data.d()], 2);
    Ok(VarianceEstimate {
        g_hat,
        w1_hat,
        w_hat: w1_hat / kappa / (g_hat * g_hat),
        residual_bandwidth: residual_bandwidth.to_vec(),
    })
}

/// Interval for the derivative at basis position of `idx`, centred at the
/// bias-corrected estimate. Needs `fit.bias_hat`.
pub fn confidence_interval(
    fit: &FitResult,
    var: &VarianceEstimate,
    moments: &MomentMatrices,
    layout: &BasisLayout,
    idx: &MultiIndex,
    tau: f64,
) -> Result<(f64, f64)> {
    check_level(tau, 1.0)?;
    let pos = layout.require_position(idx)?;
    let bias = fit
        .derivative_bias(layout, pos)
        .ok_or_else(|| Error::InvalidConfig("confidence interval needs a bias estimate".into()))?;
    let center = fit.derivatives[pos] - bias;
    let half =
        normal_quantile(1.0 - tau / 2.0) * standard_error(fit, var.w_hat, moments, layout, pos);
    Ok((center - half, center + half))
}

fn standard_error(
    fit: &FitResult,
    w_hat: f64,
    moments: &MomentMatrices,
    layout: &BasisLayout,
    pos: usize,
) -> f64 {
    variance_term(
        layout.s_factorials()[pos] as f64,
        moments.sandwich()[(pos, pos)],
        w_hat,
        fit.volume,
        &fit.h,
        &layout.indices()[pos],
    )
    .sqrt()
}

/// Bias, variance and interval settings around one local polynomial fit.
#[derive(Debug, Clone)]
pub struct InferenceConfig {
    pub fit: FitConfig,
    /// Window of the kernel weights and density estimate inside `W_n`.
    pub variance_h: Vec<f64>,
    /// Bandwidth of the order-`p` fit whose residuals enter `W_n`.
    pub residual_h: Vec<f64>,
    pub taper: Option<TaperSpec>,
    pub tau: f64,
}

/// JSON form of [`InferenceConfig`]. Without `pilot_h` no bias is
/// estimated; without `taper` no variance or interval is computed.
/// `variance_h` and `residual_h` default to `pilot_h`, then to `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSettings {
    #[serde(default = "default_order")]
    pub p: usize,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub h: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taper: Option<TaperConfig>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub ridge_eps: f64,
}

pub fn default_order() -> usize {
    1
}

pub fn default_tau() -> f64 {
    0.05
}

impl InferenceSettings {
    pub fn build(&self, d: usize) -> Result<InferenceConfig> {
        let mut fit = FitConfig::new(self.p, self.kernel.build(d)?, self.h.clone());
        fit.ridge_eps = self.ridge_eps;
        fit.pilot_h = self.pilot_h.clone();
        let fallback = self.pilot_h.as_ref().unwrap_or(&self.h);
        let cfg = InferenceConfig {
            fit,
            variance_h: self.variance_h.clone().unwrap_or_else(|| fallback.clone()),
            residual_h: self.residual_h.clone().unwrap_or_else(|| fallback.clone()),
            taper: self.taper.as_ref().map(TaperConfig::build).transpose()?,
            tau: self.tau,
        };
        cfg.validate(d)?;
        Ok(cfg)
    }
}

impl InferenceConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        check_level(self.tau, 1.0)?;
        for (what, h) in [
            ("variance_h", &self.variance_h),
            ("residual_h", &self.residual_h),
        ] {
            if h.len() != d || h.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidConfig(format!(
                    "{what} must be {d} positive numbers, got {h:?}"
                )));
            }
        }
        if let Some(t) = &self.taper {
            if t.widths().len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: t.widths().len(),
                });
            }
        }
        Ok(())
    }
}

/// Fit, bias, variance factor and intervals at points of one dataset.
#[derive(Debug, Clone)]
pub struct Analyzer<'a> {
    config: InferenceConfig,
    estimator: LocalPolyEstimator<'a>,
    residual: LocalPolyFitter<'a>,
}

impl<'a> Analyzer<'a> {
    pub fn new(data: &'a SpatialDataset, config: &InferenceConfig) -> Result<Self> {
        config.validate(data.d())?;
        let fit = &config.fit;
        Ok(Self {
            config: config.clone(),
            estimator: LocalPolyEstimator::new(data, fit)?,
            residual: LocalPolyFitter::new(
                data,
                &fit.kernel,
                fit.p,
                &config.residual_h,
                fit.ridge_eps,
            )?,
        })
    }

    pub fn estimator(&self) -> &LocalPolyEstimator<'a> {
        &self.estimator
    }

    pub fn layout(&self) -> &BasisLayout {
        self.estimator.layout()
    }

    pub fn moments(&self) -> &MomentMatrices {
        self.estimator.moments()
    }

    pub fn residual_fitter(&self) -> &LocalPolyFitter<'a> {
        &self.residual
    }

    pub fn config(&self) -> &InferenceConfig {
        &self.config
    }

    /// `W_n(z)`; needs a taper.
    pub fn variance(&self, z: &[f64]) -> Result<VarianceEstimate> {
        let taper = self
            .config
            .taper
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("variance estimation needs a taper".into()))?;
        variance_hat(
            self.residual.data(),
            &self.residual,
            &self.config.residual_h,
            &self.config.fit.kernel,
            &self.config.variance_h,
            taper,
            z,
        )
    }

    /// Fit at `z` plus whatever the configuration allows: bias with a
    /// pilot, `W_n` with a taper, intervals with both.
    pub fn analyze(&self, z: &[f64]) -> Result<FitResult> {
        let mut fit = self.estimator.fit_at(z)?;
        if self.config.fit.pilot_h.is_some() {
            fit.bias_hat = Some(self.estimator.estimate_bias(z)?);
        }
        if self.config.taper.is_some() {
            let var = self.variance(z)?;
            fit.wn_hat = Some(var.w_hat);
            if fit.bias_hat.is_some() {
                let layout = self.layout();
                fit.ci = Some(
                    layout
                        .indices()
                        .iter()
                        .map(|idx| {
                            confidence_interval(
                                &fit,
                                &var,
                                self.moments(),
                                layout,
                                idx,
                                self.config.tau,
                            )
                        })
                        .collect::<Result<_>>()?,
                );
            }
        }
        Ok(fit)
    }

    /// Variance of the derivative estimate at basis position `pos`.
    pub fn estimate_variance(&self, fit: &FitResult, pos: usize) -> Option<f64> {
        let w = fit.wn_hat?;
        Some(standard_error(fit, w, self.moments(), self.layout(), pos).powi(2))
    }
}

/// Pooled variance of the difference of two estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleVariance {
    /// `V_check`, clamped at zero.
    pub value: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub g1: f64,
    pub g2: f64,
    pub clamped: bool,
}

/// `V_check_n(z)` from the within- and cross-sample taper sums.
#[allow(clippy::too_many_arguments)]
pub fn two_sample_variance(
    data1: &SpatialDataset,
    data2: &SpatialDataset,
    kernel: &KernelSpec,
    h: &[f64],
    taper: &TaperSpec,
    z: &[f64],
    mean1: &dyn MeanPredictor,
    mean2: &dyn MeanPredictor,
) -> Result<TwoSampleVariance> {
    if data1.region() != data2.region() {
        return Err(Error::InvalidConfig(format!(
            "samples must share a region, got {:?} and {:?}",
            data1.region().sides(),
            data2.region().sides()
        )));
    }
    check_interior(z, data1.d())?;
    let w1 = KernelWindow::new(data1, kernel, h)?;
    let w2 = KernelWindow::new(data2, kernel, h)?;
    let g1 = window_density(&w1, z);
    let g2 = window_density(&w2, z);
    if !(g1 > 0.0 && g2 > 0.0) {
        return Err(Error::DegenerateWindow);
    }
    let r1 = weighted_residuals(&w1, z, mean1)?;
    let r2 = weighted_residuals(&w2, z, mean2)?;
    let volume = data1.region().volume();
    let hprod: f64 = h.iter().product();
    let (n1, n2) = (data1.len() as f64, data2.len() as f64);
    let v1 = volume / (n1 * n1 * hprod) * taper_pair_sum(data1, &r1, data1, &r1, taper)?;
    let v2 = volume / (n2 * n2 * hprod) * taper_pair_sum(data2, &r2, data2, &r2, taper)?;
    let v3 = volume / (n1 * n2 * hprod) * taper_pair_sum(data1, &r1, data2, &r2, taper)?;
    let kappa = kernel.kappa_moment(&vec![0; data1.d()], 2);
    let raw = v1 / kappa / (g1 * g1) + v2 / kappa / (g2 * g2) - 2.0 * (v3 / kappa) / (g1 * g2);
    let clamped = raw < 0.0;
    if clamped {
        warn!("pooled two-sample variance {raw:.3e} is negative, clamped to 0");
    }
    Ok(TwoSampleVariance {
        value: raw.max(0.0),
        v1,
        v2,
        v3,
        g1,
        g2,
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Reject,
    Retain,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    /// Digit string of the tested multi-index (empty for the intercept).
    pub idx: String,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    #[serde(rename = "V_check")]
    pub v_check: f64,
    pub p_value: f64,
    pub decision: Decision,
    pub tau: f64,
    pub difference: f64,
}

/// Normal-reference test of equal derivatives at `z`.
pub fn two_sample_test(
    fit1: &FitResult,
    fit2: &FitResult,
    v_check: f64,
    moments: &MomentMatrices,
    layout: &BasisLayout,
    idx: &MultiIndex,
    tau: f64,
) -> Result<TestReport> {
    check_level(tau, 0.5)?;
    if fit1.z != fit2.z || fit1.h != fit2.h {
        return Err(Error::InvalidConfig("fits must share z and h".into()));
    }
    let pos = layout.require_position(idx)?;
    let difference = fit1.derivatives[pos] - fit2.derivatives[pos];
    let report = |t: Option<f64>, p_value: f64, decision| TestReport {
        idx: idx.digits(),
        t,
        v_check,
        p_value,
        decision,
        tau,
        difference,
    };
    if difference == 0.0 {
        return Ok(report(Some(0.0), 1.0, Decision::Retain));
    }
    if !(v_check > 0.0) {
        return Ok(report(None, f64::NAN, Decision::Inconclusive));
    }
    let se = standard_error(fit1, v_check, moments, layout, pos);
    let t = difference / se;
    let p_value = (2.0 * (1.0 - normal_cdf(t.abs()))).clamp(0.0, 1.0);
    let decision = if t.abs() >= normal_quantile(1.0 - tau / 2.0) {
        Decision::Reject
    } else {
        Decision::Retain
    };
    Ok(report(Some(t), p_value, decision))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_sites, Region, SamplingDensity};
    use crate::lpfit::{FitConfig, LocalPolyEstimator, LocalPolyFitter};
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    fn iid_dataset(n: usize, side: f64, seed: u64, sigma: f64) -> SpatialDataset {
        let region = Region::new(vec![side, side]).unwrap();
        let sites = generate_sites(&region, &SamplingDensity::uniform(2), n, seed).unwrap();
        let mut rng = rng_from_seed(seed ^ 0xabcdef);
        let y = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                sigma * e
            })
            .collect();
        SpatialDataset::new(region, sites, y).unwrap()
    }

    fn bisect_quantile(u: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if normal_cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn normal_quantile_matches_bisection() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-8);
        for &u in &[
            1e-6,
            1e-4,
            0.01,
            0.1,
            0.3,
            0.5,
            0.7,
            0.9,
            0.99,
            1.0 - 1e-4,
            1.0 - 1e-6,
        ] {
            assert!(
                (normal_quantile(u) - bisect_quantile(u)).abs() < 1e-8,
                "{u}"
            );
            assert!((normal_cdf(normal_quantile(u)) - u).abs() < 1e-8, "{u}");
        }
    }

    #[test]
    fn density_near_one_for_uniform_sites() {
        let k = KernelSpec::triangular(2);
        let mut vals: Vec<f64> = (0..40)
            .map(|s| {
                density_hat(
                    &iid_dataset(1000, 10.0, s, 1.0),
                    &k,
                    &[0.25, 0.25],
                    &[0.0, 0.0],
                )
                .unwrap()
            })
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[20] - 1.0).abs() < 0.1, "{}", vals[20]);
        assert!(vals.iter().all(|v| (v - 1.0).abs() < 0.5));
    }

    #[test]
    fn empty_window_density_is_zero() {
        let region = Region::new(vec![10.0, 10.0]).unwrap();
        let sites = crate::dataset::PointSet::from_points(2, &[[4.5, 4.5]]).unwrap();
        let ds = SpatialDataset::new(region, sites, vec![0.0]).unwrap();
        let g = density_hat(&ds, &KernelSpec::triangular(2), &[0.1, 0.1], &[0.0, 0.0]).unwrap();
        assert_eq!(g, 0.0);
    }

    struct Zero;
    impl MeanPredictor for Zero {
        fn predict(&self, _z: &[f64]) -> Result<f64> {
            Ok(0.0)
        }
    }

    #[test]
    fn tiny_taper_gives_diagonal_sum() {
        let ds = iid_dataset(500, 10.0, 3, 1.0);
        let k = KernelSpec::triangular(2);
        let h = [0.25, 0.25];
        let taper = TaperSpec::bartlett(vec![1e-9, 1e-9]).unwrap();
        let est = variance_hat(&ds, &Zero, &[0.25, 0.25], &k, &h, &taper, &[0.0, 0.0]).unwrap();
        let window = KernelWindow::new(&ds, &k, &h).unwrap();
        let diag: f64 = window
            .weights(&[0.0, 0.0])
            .iter()
            .map(|&(i, w)| (w * ds.responses()[i]).powi(2))
            .sum();
        let expected = 100.0 / (500.0 * 500.0 * 0.0625) * diag;
        assert!((est.w1_hat - expected).abs() < 1e-12 * expected);
        assert!((est.w_hat - est.w1_hat / (4.0 / 9.0) / est.g_hat.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn zero_residuals_give_zero_variance() {
        let region = Region::new(vec![10.0, 10.0]).unwrap();
        let sites = generate_sites(&region, &SamplingDensity::uniform(2), 400, 1).unwrap();
        let y = sites
            .iter()
            .map(|x| 1.0 + 0.3 * x[0] - 0.2 * x[1])
            .collect();
        let ds = SpatialDataset::new(region, sites, y).unwrap();
        let k = KernelSpec::triangular(2);
        let fitter = LocalPolyFitter::new(&ds, &k, 1, &[0.25, 0.25], 0.0).unwrap();
        let taper = TaperSpec::bartlett(vec![8.0, 8.0]).unwrap();
        let est = variance_hat(
            &ds,
            &fitter,
            &[0.25, 0.25],
            &k,
            &[0.25, 0.25],
            &taper,
            &[0.0, 0.0],
        )
        .unwrap();
        assert!(est.w1_hat.abs() < 1e-18, "{}", est.w1_hat);
    }

    #[test]
    fn variance_permutation_invariant() {
        let ds = iid_dataset(300, 10.0, 5, 1.0);
        let k = KernelSpec::triangular(2);
        let taper = TaperSpec::bartlett(vec![3.0, 3.0]).unwrap();
        let order: Vec<usize> = (0..300).rev().collect();
        let perm = ds.permuted(&order);
        let a = variance_hat(
            &ds,
            &Zero,
            &[0.25, 0.25],
            &k,
            &[0.25, 0.25],
            &taper,
            &[0.1, 0.0],
        )
        .unwrap();
        let b = variance_hat(
            &perm,
            &Zero,
            &[0.25, 0.25],
            &k,
            &[0.25, 0.25],
            &taper,
            &[0.1, 0.0],
        )
        .unwrap();
        assert!((a.w1_hat - b.w1_hat).abs() < 1e-12 * a.w1_hat.abs().max(1e-300));
    }

    #[test]
    fn pair_sum_matches_brute_force() {
        let ds = iid_dataset(200, 10.0, 9, 1.0);
        let k = KernelSpec::triangular(2);
        let window = KernelWindow::new(&ds, &k, &[0.3, 0.3]).unwrap();
        let res = weighted_residuals(&window, &[0.0, 0.0], &Zero).unwrap();
        let taper = TaperSpec::bartlett(vec![1.5, 2.5]).unwrap();
        let fast = taper_pair_sum(&ds, &res, &ds, &res, &taper).unwrap();
        let mut brute = 0.0;
        for (a, &i) in res.sites.iter().enumerate() {
            for (b, &j) in res.sites.iter().enumerate() {
                let w = [ds.site(i)[0] - ds.site(j)[0], ds.site(i)[1] - ds.site(j)[1]];
                brute += res.values[a] * res.values[b] * taper.eval(&w);
            }
        }
        assert!((fast - brute).abs() < 1e-10 * brute.abs().max(1.0));
    }

    #[test]
    fn degenerate_window_errors() {
        let region = Region::new(vec![10.0, 10.0]).unwrap();
        let sites = crate::dataset::PointSet::from_points(2, &[[4.5, 4.5]]).unwrap();
        let ds = SpatialDataset::new(region, sites, vec![0.0]).unwrap();
        let taper = TaperSpec::bartlett(vec![8.0, 8.0]).unwrap();
        let r = variance_hat(
            &ds,
            &Zero,
            &[0.25, 0.25],
            &KernelSpec::triangular(2),
            &[0.1, 0.1],
            &taper,
            &[0.0, 0.0],
        );
        assert!(matches!(r, Err(Error::DegenerateWindow)));
    }

    fn fit_with_bias(ds: &SpatialDataset) -> (FitResult, LocalPolyEstimator<'_>) {
        let cfg = FitConfig::new(1, KernelSpec::triangular(2), vec![0.2, 0.2])
            .with_pilot(vec![0.25, 0.25]);
        let est = LocalPolyEstimator::new(ds, &cfg).unwrap();
        (est.fit_with_bias(&[0.0, 0.0]).unwrap(), est)
    }

    #[test]
    fn ci_zero_variance_and_scaling() {
        let ds = iid_dataset(1000, 10.0, 11, 1.0);
        let (fit, est) = fit_with_bias(&ds);
        let idx = MultiIndex::intercept(2);
        let zero = VarianceEstimate {
            g_hat: 1.0,
            w1_hat: 0.0,
            w_hat: 0.0,
            residual_bandwidth: vec![0.25, 0.25],
        };
        let (lo, hi) =
            confidence_interval(&fit, &zero, est.moments(), est.layout(), &idx, 0.05).unwrap();
        assert_eq!(lo, hi);
        assert!(
            (lo - (fit.derivatives[0] - fit.derivative_bias(est.layout(), 0).unwrap())).abs()
                < 1e-15
        );

        let var = VarianceEstimate {
            w_hat: 0.1,
            ..zero.clone()
        };
        let (lo, hi) =
            confidence_interval(&fit, &var, est.moments(), est.layout(), &idx, 0.05).unwrap();
        let expected = 1.959963984540054 * (0.1 * (4.0 / 9.0) / (100.0 * 0.04f64)).sqrt();
        assert!(((hi - lo) / 2.0 - expected).abs() < 1e-8);

        let mut doubled = fit.clone();
        doubled.volume *= 2.0;
        let (lo2, hi2) =
            confidence_interval(&doubled, &var, est.moments(), est.layout(), &idx, 0.05).unwrap();
        assert!((((hi2 - lo2) / (hi - lo)).powi(2) - 0.5).abs() < 1e-12);
        assert!(confidence_interval(&fit, &var, est.moments(), est.layout(), &idx, 1.5).is_err());
    }

    #[test]
    fn identical_fits_give_zero_statistic() {
        let ds = iid_dataset(1000, 10.0, 12, 1.0);
        let (fit, est) = fit_with_bias(&ds);
        let idx = MultiIndex::intercept(2);
        let r = two_sample_test(&fit, &fit, 0.0, est.moments(), est.layout(), &idx, 0.05).unwrap();
        assert_eq!(r.t, Some(0.0));
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.decision, Decision::Retain);
    }

    #[test]
    fn test_decisions() {
        let ds = iid_dataset(1000, 10.0, 13, 1.0);
        let (fit, est) = fit_with_bias(&ds);
        let idx = MultiIndex::intercept(2);
        let mut shifted = fit.clone();
        shifted.derivatives[0] += 5.0;
        let r =
            two_sample_test(&shifted, &fit, 0.2, est.moments(), est.layout(), &idx, 0.05).unwrap();
        assert_eq!(r.decision, Decision::Reject);
        assert!(r.p_value < 1e-6);
        let r =
            two_sample_test(&shifted, &fit, 0.0, est.moments(), est.layout(), &idx, 0.05).unwrap();
        assert_eq!(r.decision, Decision::Inconclusive);
        assert!(r.t.is_none());
        let json = serde_json::to_string(&r).unwrap();
        assert!(
            json.contains("\"T\":null") && json.contains("\"decision\":\"inconclusive\""),
            "{json}"
        );
        assert!(
            two_sample_test(&shifted, &fit, 0.2, est.moments(), est.layout(), &idx, 0.6).is_err()
        );
    }

    #[test]
    fn identical_samples_pool_to_zero() {
        let ds = iid_dataset(800, 10.0, 14, 1.0);
        let k = KernelSpec::triangular(2);
        let fitter = LocalPolyFitter::new(&ds, &k, 1, &[0.25, 0.25], 0.0).unwrap();
        let taper = TaperSpec::bartlett(vec![8.0, 8.0]).unwrap();
        let v = two_sample_variance(
            &ds,
            &ds,
            &k,
            &[0.25, 0.25],
            &taper,
            &[0.0, 0.0],
            &fitter,
            &fitter,
        )
        .unwrap();
        assert!(v.value.abs() < 1e-12 * v.v1.abs().max(1e-12), "{v:?}");
    }

    #[test]
    fn mismatched_regions_rejected() {
        let a = iid_dataset(100, 10.0, 1, 1.0);
        let b = iid_dataset(100, 12.0, 2, 1.0);
        let k = KernelSpec::triangular(2);
        let taper = TaperSpec::bartlett(vec![8.0, 8.0]).unwrap();
        assert!(
            two_sample_variance(&a, &b, &k, &[0.25, 0.25], &taper, &[0.0, 0.0], &Zero, &Zero)
                .is_err()
        );
    }
}
