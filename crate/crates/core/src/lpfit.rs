//! The order-`p` local polynomial estimator.
//!
//! At an evaluation point `z` in the unit cube the estimator solves the
//! kernel-weighted least-squares problem with regressors
//! `prod_l (X_{i,j_l} - A_{j_l} z_{j_l}) / A_{j_l}` (basis layout order)
//! and weights `K((X_i - A z) / (A h))`. Coefficient `beta[idx]` estimates
//! `d_idx m(z) / s_idx!`, so derivative estimates are `s_idx! beta[idx]`.
//!
//! Internally the regressors are divided by the bandwidths before the
//! normal equations are formed (and the coefficients rescaled after), which
//! keeps the Gram matrix well conditioned for higher orders without
//! changing the estimate.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::basis::{BasisLayout, MultiIndex};
use crate::dataset::SpatialDataset;
use crate::error::{Error, Result};
use crate::index::GridIndex;
use crate::kernels::{KernelSpec, MomentMatrices};

/// Condition number above which the ridge fallback kicks in.
pub const RIDGE_CONDITION: f64 = 1e12;
/// Condition number at which the local design counts as singular.
pub const SINGULAR_CONDITION: f64 = 1e16;
/// Relative size of the fallback ridge.
pub const FALLBACK_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub p: usize,
    pub kernel: KernelSpec,
    /// Bandwidths in rescaled units; the window on axis `j` of the unit
    /// cube is `h_j * C_K`.
    pub h: Vec<f64>,
    /// Relative ridge added to the Gram diagonal (times its mean trace).
    pub ridge_eps: f64,
    /// Bandwidths of the order-`p+1` pilot fit used for bias estimation.
    pub pilot_h: Option<Vec<f64>>,
}

impl FitConfig {
    pub fn new(p: usize, kernel: KernelSpec, h: Vec<f64>) -> Self {
        Self {
            p,
            kernel,
            h,
            ridge_eps: 0.0,
            pilot_h: None,
        }
    }

    pub fn with_pilot(mut self, pilot_h: Vec<f64>) -> Self {
        self.pilot_h = Some(pilot_h);
        self
    }

    pub fn pilot_bandwidth(&self) -> &[f64] {
        self.pilot_h.as_deref().unwrap_or(&self.h)
    }

    fn validate(&self, d: usize) -> Result<()> {
        check_bandwidth(&self.h, d, "h")?;
        if let Some(ph) = &self.pilot_h {
            check_bandwidth(ph, d, "pilot_h")?;
        }
        if self.kernel.d() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.kernel.d(),
            });
        }
        if !(self.ridge_eps >= 0.0) {
            return Err(Error::InvalidConfig("ridge_eps must be >= 0".into()));
        }
        Ok(())
    }
}

fn check_bandwidth(h: &[f64], d: usize, what: &str) -> Result<()> {
    if h.len() != d {
        return Err(Error::InvalidConfig(format!(
            "{what} has {} entries, expected {d}",
            h.len()
        )));
    }
    if h.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidConfig(format!(
            "{what} must be positive, got {h:?}"
        )));
    }
    Ok(())
}

/// Coefficients of one local fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub beta: Vec<f64>,
    pub n_eff: usize,
    pub ridged: bool,
}

/// Result of a fit at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub z: Vec<f64>,
    pub h: Vec<f64>,
    pub p: usize,
    /// `A_n`, the region volume.
    pub volume: f64,
    pub beta_hat: Vec<f64>,
    pub derivatives: Vec<f64>,
    pub n_eff: usize,
    /// `S^{-1} B M_n(z)`, in bandwidth-scaled units.
    pub bias_hat: Option<Vec<f64>>,
    pub wn_hat: Option<f64>,
    pub ci: Option<Vec<(f64, f64)>>,
    pub boundary_flag: bool,
}

impl FitResult {
    /// Bias of the derivative estimate for the basis entry at `pos`:
    /// `s! bias[pos] / prod_l h_{j_l}`.
    pub fn derivative_bias(&self, layout: &BasisLayout, pos: usize) -> Option<f64> {
        let bias = self.bias_hat.as_ref()?;
        let idx = &layout.indices()[pos];
        Some(layout.s_factorials()[pos] as f64 * bias[pos] / idx.bandwidth_product(&self.h))
    }
}

/// Kernel weights `K_Ah(X_i - A z)` over one dataset at a fixed bandwidth.
#[derive(Debug, Clone)]
pub struct KernelWindow<'a> {
    data: &'a SpatialDataset,
    kernel: KernelSpec,
    h: Vec<f64>,
    /// Window half-widths in original units, `A_j h_j C_K`.
    reach: Vec<f64>,
    index: GridIndex,
}

impl<'a> KernelWindow<'a> {
    pub fn new(data: &'a SpatialDataset, kernel: &KernelSpec, h: &[f64]) -> Result<Self> {
        let d = data.d();
        check_bandwidth(h, d, "h")?;
        if kernel.d() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: kernel.d(),
            });
        }
        let reach: Vec<f64> = data
            .region()
            .sides()
            .iter()
            .zip(h)
            .map(|(a, hj)| a * hj * kernel.support_halfwidth())
            .collect();
        let index = GridIndex::new(data.sites(), reach.clone());
        Ok(Self {
            data,
            kernel: kernel.clone(),
            h: h.to_vec(),
            reach,
            index,
        })
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn data(&self) -> &'a SpatialDataset {
        self.data
    }

    /// Calls `f(i, u, w)` for every site with positive weight `w`, where
    /// `u = (X_i - A z) / (A h)`, in ascending site order.
    pub fn for_each(&self, z: &[f64], mut f: impl FnMut(usize, &[f64], f64)) {
        let center = self.data.region().scale_up(z);
        let sides = self.data.region().sides();
        let mut u = vec![0.0; z.len()];
        for i in self.index.candidates(&center, &self.reach) {
            let x = self.data.site(i);
            for j in 0..u.len() {
                u[j] = (x[j] - center[j]) / (sides[j] * self.h[j]);
            }
            let w = self.kernel.eval(&u);
            if w > 0.0 {
                f(i, &u, w);
            }
        }
    }

    /// `(i, K_Ah(X_i - A z))` for every site with positive weight.
    pub fn weights(&self, z: &[f64]) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.for_each(z, |i, _, w| out.push((i, w)));
        out
    }
}

/// Local polynomial fits of a fixed order and bandwidth over one dataset.
#[derive(Debug, Clone)]
pub struct LocalPolyFitter<'a> {
    window: KernelWindow<'a>,
    layout: BasisLayout,
    ridge_eps: f64,
}

impl<'a> LocalPolyFitter<'a> {
    pub fn new(
        data: &'a SpatialDataset,
        kernel: &KernelSpec,
        p: usize,
        h: &[f64],
        ridge_eps: f64,
    ) -> Result<Self> {
        let layout = BasisLayout::new(data.d(), p)?;
        Ok(Self {
            window: KernelWindow::new(data, kernel, h)?,
            layout,
            ridge_eps,
        })
    }

    pub fn layout(&self) -> &BasisLayout {
        &self.layout
    }

    pub fn h(&self) -> &[f64] {
        self.window.h()
    }

    pub fn data(&self) -> &'a SpatialDataset {
        self.window.data()
    }

    pub fn window(&self) -> &KernelWindow<'a> {
        &self.window
    }

    /// Solves the weighted least-squares problem at `z` (no domain check).
    pub fn solve(&self, z: &[f64]) -> Result<LocalSolution> {
        self.solve_with(z, self.data().responses())
    }

    /// Same as [`LocalPolyFitter::solve`] with substitute responses.
    pub fn solve_with(&self, z: &[f64], y: &[f64]) -> Result<LocalSolution> {
        let d = self.data().d();
        if z.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: z.len(),
            });
        }
        let dd = self.layout.len();
        let mut gram = DMatrix::<f64>::zeros(dd, dd);
        let mut rhs = DVector::<f64>::zeros(dd);
        let mut phi = vec![0.0; dd];
        let mut n_eff = 0;
        self.window.for_each(z, |i, u, w| {
            n_eff += 1;
            self.layout.fill_monomials(u, &mut phi);
            for a in 0..dd {
                let wa = w * phi[a];
                rhs[a] += wa * y[i];
                for b in 0..=a {
                    gram[(a, b)] += wa * phi[b];
                }
            }
        });
        if n_eff < dd {
            return Err(Error::NoLocalData {
                n_eff,
                required: dd,
            });
        }
        for a in 0..dd {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        let (scaled, ridged) = solve_normal_equations(gram, rhs, self.ridge_eps)?;
        let h = self.h();
        let beta = self
            .layout
            .indices()
            .iter()
            .zip(scaled.iter())
            .map(|(idx, b)| b / idx.bandwidth_product(h))
            .collect();
        Ok(LocalSolution {
            beta,
            n_eff,
            ridged,
        })
    }

    /// Fit at `z` in the open unit cube.
    pub fn fit_at(&self, z: &[f64]) -> Result<FitResult> {
        check_interior(z, self.data().d())?;
        let sol = self.solve(z)?;
        let derivatives = sol
            .beta
            .iter()
            .zip(self.layout.s_factorials())
            .map(|(b, &s)| b * s as f64)
            .collect();
        Ok(FitResult {
            z: z.to_vec(),
            h: self.h().to_vec(),
            p: self.layout.p(),
            volume: self.data().region().volume(),
            beta_hat: sol.beta,
            derivatives,
            n_eff: sol.n_eff,
            bias_hat: None,
            wn_hat: None,
            ci: None,
            boundary_flag: is_boundary(z, self.h(), self.window.kernel().support_halfwidth()),
        })
    }
}

/// Mean surface predictions used for residuals.
pub trait MeanPredictor {
    fn predict(&self, z: &[f64]) -> Result<f64>;
}

impl MeanPredictor for LocalPolyFitter<'_> {
    fn predict(&self, z: &[f64]) -> Result<f64> {
        Ok(self.solve(z)?.beta[0])
    }
}

/// Cholesky solve with the ridge fallback; returns whether a ridge was used.
fn solve_normal_equations(
    mut gram: DMatrix<f64>,
    rhs: DVector<f64>,
    ridge_eps: f64,
) -> Result<(DVector<f64>, bool)> {
    let dd = gram.nrows();
    let mean_diag = gram.trace() / dd as f64;
    if ridge_eps > 0.0 {
        for a in 0..dd {
            gram[(a, a)] += ridge_eps * mean_diag;
        }
    }
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
        (lo.min(v), hi.max(v.abs()))
    });
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let mut ridged = ridge_eps > 0.0;
    if condition > RIDGE_CONDITION {
        if condition > SINGULAR_CONDITION || mean_diag <= 0.0 {
            return Err(Error::RankDeficient { condition });
        }
        debug!("local Gram matrix condition {condition:.3e}, adding fallback ridge");
        for a in 0..dd {
            gram[(a, a)] += FALLBACK_RIDGE * mean_diag;
        }
        ridged = true;
    }
    let chol = gram.cholesky().ok_or(Error::RankDeficient { condition })?;
    Ok((chol.solve(&rhs), ridged))
}

pub fn check_interior(z: &[f64], d: usize) -> Result<()> {
    if z.len() != d || z.iter().any(|v| !(v.abs() < 0.5)) {
        return Err(Error::OutOfDomain(z.to_vec()));
    }
    Ok(())
}

/// True when the kernel window around `z` leaves the unit cube.
pub fn is_boundary(z: &[f64], h: &[f64], support_halfwidth: f64) -> bool {
    z.iter()
        .zip(h)
        .any(|(zj, hj)| zj.abs() + support_halfwidth * hj > 0.5)
}

/// Order-`p` fit at `z`.
pub fn fit_at(data: &SpatialDataset, config: &FitConfig, z: &[f64]) -> Result<FitResult> {
    config.validate(data.d())?;
    LocalPolyFitter::new(data, &config.kernel, config.p, &config.h, config.ridge_eps)?.fit_at(z)
}

/// Main fit plus the pilot fit and moment matrices needed for bias and
/// MSE estimates.
#[derive(Debug, Clone)]
pub struct LocalPolyEstimator<'a> {
    config: FitConfig,
    main: LocalPolyFitter<'a>,
    pilot: LocalPolyFitter<'a>,
    moments: MomentMatrices,
}

impl<'a> LocalPolyEstimator<'a> {
    pub fn new(data: &'a SpatialDataset, config: &FitConfig) -> Result<Self> {
        config.validate(data.d())?;
        let main =
            LocalPolyFitter::new(data, &config.kernel, config.p, &config.h, config.ridge_eps)?;
        let pilot = LocalPolyFitter::new(
            data,
            &config.kernel,
            config.p + 1,
            config.pilot_bandwidth(),
            config.ridge_eps,
        )?;
        let moments = MomentMatrices::new(&config.kernel, main.layout())?;
        Ok(Self {
            config: config.clone(),
            main,
            pilot,
            moments,
        })
    }

    pub fn layout(&self) -> &BasisLayout {
        self.main.layout()
    }

    pub fn moments(&self) -> &MomentMatrices {
        &self.moments
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn fitter(&self) -> &LocalPolyFitter<'a> {
        &self.main
    }

    pub fn fit_at(&self, z: &[f64]) -> Result<FitResult> {
        self.main.fit_at(z)
    }

    /// `M_n(z)`: pilot order-`(p+1)` coefficients times `prod_l h_{j_l}`
    /// over the top indices.
    pub fn top_derivative_vector(&self, z: &[f64]) -> Result<DVector<f64>> {
        let pilot = self.pilot.solve(z)?;
        let top = self.layout().top_indices();
        let pl = self.pilot.layout();
        let mut m = DVector::zeros(top.len());
        for (k, idx) in top.iter().enumerate() {
            let pos = pl.require_position(idx)?;
            m[k] = pilot.beta[pos] * idx.bandwidth_product(&self.config.h);
        }
        Ok(m)
    }

    /// `S^{-1} B M_n(z)` with `M_n` from the pilot fit.
    pub fn estimate_bias(&self, z: &[f64]) -> Result<Vec<f64>> {
        let m = self.top_derivative_vector(z)?;
        Ok(self.moments.bias_vector(&m).iter().copied().collect())
    }

    /// Fit at `z` with `bias_hat` filled in.
    pub fn fit_with_bias(&self, z: &[f64]) -> Result<FitResult> {
        let mut fit = self.fit_at(z)?;
        fit.bias_hat = Some(self.estimate_bias(z)?);
        Ok(fit)
    }

    /// Squared bias plus variance of the derivative estimate for `idx`,
    /// given the variance factor `w_hat`.
    pub fn mse_estimate(&self, z: &[f64], idx: &MultiIndex, w_hat: f64) -> Result<f64> {
        if !(w_hat >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "variance factor must be >= 0, got {w_hat}"
            )));
        }
        let pos = self.layout().require_position(idx)?;
        check_interior(z, self.layout().d())?;
        self.main.solve(z)?;
        let bias = self.estimate_bias(z)?;
        Ok(mse_from_parts(
            bias[pos],
            self.layout().s_factorials()[pos] as f64,
            self.moments.sandwich()[(pos, pos)],
            w_hat,
            self.main.data().region().volume(),
            &self.config.h,
            idx,
        ))
    }
}

/// `{s! b / prod h_idx}^2 + W (s!)^2 V / (A_n prod h (prod h_idx)^2)`.
pub fn mse_from_parts(
    bias_component: f64,
    s_factorial: f64,
    sandwich_entry: f64,
    w_hat: f64,
    volume: f64,
    h: &[f64],
    idx: &MultiIndex,
) -> f64 {
    let hidx = idx.bandwidth_product(h);
    let bias_term = (s_factorial * bias_component / hidx).powi(2);
    bias_term + variance_term(s_factorial, sandwich_entry, w_hat, volume, h, idx)
}

/// `W (s!)^2 V / (A_n prod h (prod h_idx)^2)`.
pub fn variance_term(
    s_factorial: f64,
    sandwich_entry: f64,
    w_hat: f64,
    volume: f64,
    h: &[f64],
    idx: &MultiIndex,
) -> f64 {
    let hidx = idx.bandwidth_product(h);
    let hprod: f64 = h.iter().product();
    w_hat * s_factorial * s_factorial * sandwich_entry / (volume * hprod * hidx * hidx)
}

pub fn estimate_bias(data: &SpatialDataset, config: &FitConfig, z: &[f64]) -> Result<Vec<f64>> {
    LocalPolyEstimator::new(data, config)?.estimate_bias(z)
}

pub fn mse_estimate(
    data: &SpatialDataset,
    config: &FitConfig,
    z: &[f64],
    idx: &MultiIndex,
    w_hat: f64,
) -> Result<f64> {
    LocalPolyEstimator::new(data, config)?.mse_estimate(z, idx, w_hat)
}

/// Grid search for the bandwidth vector minimising the plug-in MSE of the
/// derivative estimate for `idx`. Ties go to the larger bandwidth.
pub fn select_bandwidth(
    data: &SpatialDataset,
    template: &FitConfig,
    z: &[f64],
    idx: &MultiIndex,
    candidates: &[Vec<f64>],
    w_hat: f64,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("bandwidth grid is empty".into()));
    }
    let mut best: Option<(f64, &Vec<f64>)> = None;
    let mut failures = Vec::new();
    for h in candidates {
        let mut cfg = template.clone();
        cfg.h = h.clone();
        match mse_estimate(data, &cfg, z, idx, w_hat) {
            Ok(mse) => {
                let better = match best {
                    None => true,
                    Some((b, bh)) => {
                        let tie = (mse - b).abs() <= 1e-12 * b.abs().max(f64::MIN_POSITIVE);
                        if tie {
                            h.iter().product::<f64>() > bh.iter().product::<f64>()
                        } else {
                            mse < b
                        }
                    }
                };
                if better {
                    best = Some((mse, h));
                }
            }
            Err(e) => {
                warn!("bandwidth candidate {h:?} skipped: {e}");
                failures.push(format!("{h:?}: {e}"));
            }
        }
    }
    best.map(|(_, h)| h.clone())
        .ok_or_else(|| Error::NoFeasibleBandwidth(failures.join("; ")))
}
