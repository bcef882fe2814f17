//! Product smoothing kernels, radial covariance tapers, and the kernel
//! moment matrices used by the bias and variance formulas.
//!
//! A product kernel is `K(v) = prod_j k(v_j / C_K) / C_K` for a univariate
//! density `k` on `[-1, 1]`. Because every moment of a product kernel
//! factorises over axes, each entry of `S`, `Kcal` and `B` is a product of
//! 1-D moments `int u^a k(u)^r du`, and those have closed forms for every
//! registered family.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisLayout, MultiIndex};
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Condition number above which `S` is rejected.
pub const MAX_MOMENT_CONDITION: f64 = 1e12;

/// A univariate kernel density supported on `[-1, 1]`.
pub trait UnivariateKernel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn eval(&self, t: f64) -> f64;

    /// Exact `int_{-1}^{1} t^a k(t)^r dt`.
    fn moment(&self, a: u32, r: u32) -> f64;

    /// Points in `[-1, 1]` between which `k` is a single polynomial piece.
    fn breakpoints(&self) -> &'static [f64];

    fn is_lipschitz(&self) -> bool;
}

#[derive(Debug)]
pub struct Triangular;

#[derive(Debug)]
pub struct Epanechnikov;

#[derive(Debug)]
pub struct Uniform;

impl UnivariateKernel for Triangular {
    fn name(&self) -> &'static str {
        "triangular"
    }

    fn eval(&self, t: f64) -> f64 {
        (1.0 - t.abs()).max(0.0)
    }

    // 2 * B(a+1, r+1) = 2 a! r! / (a+r+1)!
    fn moment(&self, a: u32, r: u32) -> f64 {
        if a % 2 == 1 {
            return 0.0;
        }
        let mut v = 2.0;
        for i in 1..=r {
            v *= i as f64 / (a + i) as f64;
        }
        v / (a + r + 1) as f64
    }

    fn breakpoints(&self) -> &'static [f64] {
        &[-1.0, 0.0, 1.0]
    }

    fn is_lipschitz(&self) -> bool {
        true
    }
}

impl UnivariateKernel for Epanechnikov {
    fn name(&self) -> &'static str {
        "epanechnikov"
    }

    fn eval(&self, t: f64) -> f64 {
        if t.abs() <= 1.0 {
            0.75 * (1.0 - t * t)
        } else {
            0.0
        }
    }

    // (3/4)^r sum_j C(r,j) (-1)^j 2 / (a + 2j + 1)
    fn moment(&self, a: u32, r: u32) -> f64 {
        if a % 2 == 1 {
            return 0.0;
        }
        let mut sum = 0.0;
        let mut binom = 1.0;
        for j in 0..=r {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * binom * 2.0 / (a + 2 * j + 1) as f64;
            binom = binom * (r - j) as f64 / (j + 1) as f64;
        }
        0.75f64.powi(r as i32) * sum
    }

    fn breakpoints(&self) -> &'static [f64] {
        &[-1.0, 1.0]
    }

    fn is_lipschitz(&self) -> bool {
        true
    }
}

impl UnivariateKernel for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn eval(&self, t: f64) -> f64 {
        if t.abs() <= 1.0 {
            0.5
        } else {
            0.0
        }
    }

    fn moment(&self, a: u32, r: u32) -> f64 {
        if a % 2 == 1 {
            return 0.0;
        }
        0.5f64.powi(r as i32) * 2.0 / (a + 1) as f64
    }

    fn breakpoints(&self) -> &'static [f64] {
        &[-1.0, 1.0]
    }

    fn is_lipschitz(&self) -> bool {
        false
    }
}

pub fn kernel_registry() -> &'static Registry<Arc<dyn UnivariateKernel>> {
    static REG: OnceLock<Registry<Arc<dyn UnivariateKernel>>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::new("kernel family")
            .with(
                "triangular",
                Arc::new(Triangular) as Arc<dyn UnivariateKernel>,
            )
            .with("epanechnikov", Arc::new(Epanechnikov))
            .with("uniform", Arc::new(Uniform))
    })
}

/// A product kernel on `R^d` with per-axis support `[-C_K, C_K]`.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    family: Arc<dyn UnivariateKernel>,
    support_halfwidth: f64,
    d: usize,
}

impl KernelSpec {
    pub fn new(family: &str, support_halfwidth: f64, d: usize) -> Result<Self> {
        let name = family.strip_prefix("product-").unwrap_or(family);
        let family = kernel_registry().get(name)?.clone();
        Self::from_family(family, support_halfwidth, d)
    }

    pub fn from_family(
        family: Arc<dyn UnivariateKernel>,
        support_halfwidth: f64,
        d: usize,
    ) -> Result<Self> {
        if !(support_halfwidth > 0.0 && support_halfwidth.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "kernel support half-width must be positive, got {support_halfwidth}"
            )));
        }
        if d == 0 {
            return Err(Error::InvalidConfig("kernel dimension must be >= 1".into()));
        }
        Ok(Self {
            family,
            support_halfwidth,
            d,
        })
    }

    /// The triangular product kernel on `[-1, 1]^d`.
    pub fn triangular(d: usize) -> Self {
        Self::new("triangular", 1.0, d).expect("valid builtin kernel")
    }

    pub fn family(&self) -> &dyn UnivariateKernel {
        self.family.as_ref()
    }

    pub fn family_name(&self) -> &'static str {
        self.family.name()
    }

    pub fn support_halfwidth(&self) -> f64 {
        self.support_halfwidth
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `K(v)`.
    pub fn eval(&self, v: &[f64]) -> f64 {
        let c = self.support_halfwidth;
        let mut prod = 1.0;
        for &x in v {
            let k = self.family.eval(x / c);
            if k == 0.0 {
                return 0.0;
            }
            prod *= k / c;
        }
        prod
    }

    /// `int u^a K_1(u)^r du` for one axis, including the support scaling.
    pub fn axis_moment(&self, a: u32, r: u32) -> f64 {
        let c = self.support_halfwidth;
        c.powi(a as i32 + 1 - r as i32) * self.family.moment(a, r)
    }

    /// `int prod_j z_j^{a_j} K(z)^r dz`.
    pub fn kappa_moment(&self, powers: &[u32], r: u32) -> f64 {
        powers.iter().map(|&a| self.axis_moment(a, r)).product()
    }
}

/// Free-function form of [`KernelSpec::eval`].
pub fn eval_kernel(spec: &KernelSpec, v: &[f64]) -> f64 {
    spec.eval(v)
}

/// Free-function form of [`KernelSpec::kappa_moment`].
pub fn kappa_moment(spec: &KernelSpec, powers: &[u32], r: u32) -> f64 {
    spec.kappa_moment(powers, r)
}

/// Radial taper profile `w -> Kbar(w)` on `||w|| <= 1`.
pub trait RadialTaper: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Weight at normalised radius `r >= 0`.
    fn eval(&self, r: f64) -> f64;
}

#[derive(Debug)]
pub struct Bartlett;

impl RadialTaper for Bartlett {
    fn name(&self) -> &'static str {
        "bartlett"
    }

    fn eval(&self, r: f64) -> f64 {
        (1.0 - r).max(0.0)
    }
}

pub fn taper_registry() -> &'static Registry<Arc<dyn RadialTaper>> {
    static REG: OnceLock<Registry<Arc<dyn RadialTaper>>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::new("taper family").with("bartlett", Arc::new(Bartlett) as Arc<dyn RadialTaper>)
    })
}

/// A radial taper rescaled per axis by widths `b` (original units).
#[derive(Debug, Clone)]
pub struct TaperSpec {
    family: Arc<dyn RadialTaper>,
    widths: Vec<f64>,
}

impl TaperSpec {
    pub fn new(family: &str, widths: Vec<f64>) -> Result<Self> {
        let name = family.strip_suffix("-radial").unwrap_or(family);
        let family = taper_registry().get(name)?.clone();
        if widths.is_empty() || widths.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "taper widths must be positive, got {widths:?}"
            )));
        }
        Ok(Self { family, widths })
    }

    pub fn bartlett(widths: Vec<f64>) -> Result<Self> {
        Self::new("bartlett", widths)
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn family_name(&self) -> &'static str {
        self.family.name()
    }

    /// `Kbar_b(w)` for a displacement `w` in original coordinates.
    pub fn eval(&self, w: &[f64]) -> f64 {
        let r2: f64 = w
            .iter()
            .zip(&self.widths)
            .map(|(x, b)| (x / b) * (x / b))
            .sum();
        if r2 > 1.0 {
            return 0.0;
        }
        self.family.eval(r2.sqrt())
    }

    /// Largest per-axis reach of the taper support.
    pub fn reach(&self) -> f64 {
        self.widths.iter().copied().fold(0.0, f64::max)
    }
}

pub fn eval_taper(spec: &TaperSpec, w: &[f64]) -> f64 {
    spec.eval(w)
}

/// `S`, `Kcal`, `B` and `kappa_0^(2)` for one kernel and basis layout.
#[derive(Debug, Clone)]
pub struct MomentMatrices {
    pub s: DMatrix<f64>,
    pub kcal: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub kappa0_r2: f64,
    s_inv: DMatrix<f64>,
    sandwich: DMatrix<f64>,
}

impl MomentMatrices {
    pub fn new(spec: &KernelSpec, layout: &BasisLayout) -> Result<Self> {
        if spec.d() != layout.d() {
            return Err(Error::DimensionMismatch {
                expected: layout.d(),
                got: spec.d(),
            });
        }
        let rows = layout.indices();
        let entry =
            |a: &MultiIndex, b: &MultiIndex, r: u32| spec.kappa_moment(a.join(b).counts(), r);
        let dd = layout.len();
        let s = DMatrix::from_fn(dd, dd, |i, j| entry(&rows[i], &rows[j], 1));
        let kcal = DMatrix::from_fn(dd, dd, |i, j| entry(&rows[i], &rows[j], 2));
        let top = layout.top_indices();
        let b = DMatrix::from_fn(dd, top.len(), |i, j| entry(&rows[i], &top[j], 1));

        let sv = s.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        };
        if condition > MAX_MOMENT_CONDITION {
            return Err(Error::SingularMoments { condition });
        }
        let s_inv = s
            .clone()
            .cholesky()
            .ok_or(Error::SingularMoments { condition })?
            .inverse();
        let sandwich = &s_inv * &kcal * &s_inv;
        Ok(Self {
            s,
            kcal,
            b,
            kappa0_r2: spec.kappa_moment(&vec![0; spec.d()], 2),
            s_inv,
            sandwich,
        })
    }

    pub fn s_inv(&self) -> &DMatrix<f64> {
        &self.s_inv
    }

    /// `S^{-1} Kcal S^{-1}`.
    pub fn sandwich(&self) -> &DMatrix<f64> {
        &self.sandwich
    }

    /// `S^{-1} B m` for a `D_bar` vector `m`.
    pub fn bias_vector(&self, m: &DVector<f64>) -> DVector<f64> {
        &self.s_inv * (&self.b * m)
    }
}

pub fn moment_matrices(spec: &KernelSpec, layout: &BasisLayout) -> Result<MomentMatrices> {
    MomentMatrices::new(spec, layout)
}

/// Row-major copy of a matrix, for serialization.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Serializable kernel selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: String,
    #[serde(default = "one")]
    pub support_halfwidth: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            family: "triangular".into(),
            support_halfwidth: 1.0,
        }
    }
}

impl KernelConfig {
    pub fn build(&self, d: usize) -> Result<KernelSpec> {
        KernelSpec::new(&self.family, self.support_halfwidth, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaperConfig {
    #[serde(default = "bartlett_name")]
    pub family: String,
    pub widths: Vec<f64>,
}

fn bartlett_name() -> String {
    "bartlett".into()
}

impl TaperConfig {
    pub fn build(&self) -> Result<TaperSpec> {
        TaperSpec::new(&self.family, self.widths.clone())
    }
}
