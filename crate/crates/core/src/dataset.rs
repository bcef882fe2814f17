//! Observation model for irregularly spaced data: the rectangular sampling
//! region, stochastic site generation, rescaling to the unit cube, and CSV
//! input/output.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous, ContinuousCDF};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::{rng_from_seed, GENERATOR_ID};

/// Per-axis tolerance for "inside the region" checks.
pub const REGION_TOL: f64 = 1e-9;

/// A flat, row-major list of points in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    d: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(d: usize, coords: Vec<f64>) -> Result<Self> {
        if d == 0 || !coords.len().is_multiple_of(d) {
            return Err(Error::InvalidConfig(format!(
                "{} coordinates do not split into points of dimension {d}",
                coords.len()
            )));
        }
        Ok(Self { d, coords })
    }

    pub fn from_points<P: AsRef<[f64]>>(d: usize, points: &[P]) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * d);
        for p in points {
            let p = p.as_ref();
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Ok(Self { d, coords })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.d)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Points in the order given by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(self.coords.len());
        for &i in order {
            coords.extend_from_slice(self.get(i));
        }
        Self { d: self.d, coords }
    }
}

/// The sampling region `prod_j [-A_j/2, A_j/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region {
    sides: Vec<f64>,
}

impl Region {
    pub fn new(sides: Vec<f64>) -> Result<Self> {
        if sides.is_empty() || sides.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "region sides must be positive, got {sides:?}"
            )));
        }
        Ok(Self { sides })
    }

    pub fn d(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[f64] {
        &self.sides
    }

    /// `A_n = prod_j A_j`.
    pub fn volume(&self) -> f64 {
        self.sides.iter().product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.d()
            && x.iter()
                .zip(&self.sides)
                .all(|(v, a)| v.abs() <= a / 2.0 + REGION_TOL)
    }

    /// `x -> x / A`, rejecting sites outside the region.
    pub fn rescale(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: x.len(),
            });
        }
        if !self.contains(x) {
            return Err(Error::SiteOutsideRegion {
                index: 0,
                site: x.to_vec(),
            });
        }
        Ok(self.rescale_unchecked(x))
    }

    pub fn rescale_unchecked(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.sides).map(|(v, a)| v / a).collect()
    }

    /// `z -> A * z`.
    pub fn scale_up(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.sides).map(|(v, a)| v * a).collect()
    }

    pub fn check_sites(&self, sites: &PointSet) -> Result<()> {
        if sites.d() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: sites.d(),
            });
        }
        for (index, x) in sites.iter().enumerate() {
            if !self.contains(x) {
                return Err(Error::SiteOutsideRegion {
                    index,
                    site: x.to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// A 1-D density on `[-1/2, 1/2]` with an invertible CDF.
pub trait AxisDensity: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn pdf(&self, z: f64) -> f64;
    fn cdf(&self, z: f64) -> f64;
    fn inverse_cdf(&self, u: f64) -> f64;
}

#[derive(Debug)]
pub struct UniformAxis;

impl AxisDensity for UniformAxis {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn pdf(&self, z: f64) -> f64 {
        if z.abs() <= 0.5 {
            1.0
        } else {
            0.0
        }
    }

    fn cdf(&self, z: f64) -> f64 {
        (z + 0.5).clamp(0.0, 1.0)
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        u - 0.5
    }
}

/// `Beta(alpha, beta)` shifted onto `[-1/2, 1/2]`.
#[derive(Debug)]
pub struct BetaAxis {
    inner: Beta,
}

impl BetaAxis {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        // positivity on the closed interval needs alpha, beta <= 1 at the ends;
        // interior positivity holds for any positive shape.
        let inner = Beta::new(alpha, beta)
            .map_err(|e| Error::InvalidConfig(format!("beta density: {e}")))?;
        Ok(Self { inner })
    }
}

impl AxisDensity for BetaAxis {
    fn name(&self) -> &'static str {
        "product-beta"
    }

    fn pdf(&self, z: f64) -> f64 {
        if z.abs() > 0.5 {
            return 0.0;
        }
        self.inner.pdf(z + 0.5)
    }

    fn cdf(&self, z: f64) -> f64 {
        self.inner.cdf((z + 0.5).clamp(0.0, 1.0))
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        self.inner.inverse_cdf(u) - 0.5
    }
}

/// Piecewise-constant density on equal-width bins of `[-1/2, 1/2]`.
#[derive(Debug)]
pub struct GridAxis {
    heights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl GridAxis {
    pub fn new(heights: Vec<f64>) -> Result<Self> {
        if heights.is_empty() || heights.iter().any(|&h| !(h >= 0.0 && h.is_finite())) {
            return Err(Error::InvalidConfig(
                "custom-grid density needs non-negative finite bin heights".into(),
            ));
        }
        let width = 1.0 / heights.len() as f64;
        let mut cumulative = Vec::with_capacity(heights.len() + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for h in &heights {
            acc += h * width;
            cumulative.push(acc);
        }
        if (acc - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "custom-grid density integrates to {acc}, not 1"
            )));
        }
        Ok(Self {
            heights,
            cumulative,
        })
    }

    fn width(&self) -> f64 {
        1.0 / self.heights.len() as f64
    }
}

impl AxisDensity for GridAxis {
    fn name(&self) -> &'static str {
        "custom-grid"
    }

    fn pdf(&self, z: f64) -> f64 {
        if z.abs() > 0.5 {
            return 0.0;
        }
        let k = (((z + 0.5) / self.width()) as usize).min(self.heights.len() - 1);
        self.heights[k]
    }

    fn cdf(&self, z: f64) -> f64 {
        let t = (z + 0.5).clamp(0.0, 1.0);
        let k = ((t / self.width()) as usize).min(self.heights.len() - 1);
        self.cumulative[k] + (t - k as f64 * self.width()) * self.heights[k]
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        // first bin whose upper cumulative mass reaches u and has positive height
        let k = self.cumulative[1..]
            .iter()
            .position(|&c| c >= u)
            .unwrap_or(self.heights.len() - 1);
        let mut k = k;
        while self.heights[k] == 0.0 && k + 1 < self.heights.len() {
            k += 1;
        }
        let t = k as f64 * self.width() + (u - self.cumulative[k]) / self.heights[k];
        t.clamp(0.0, 1.0) - 0.5
    }
}

/// A product sampling density `g(z) = prod_j g_j(z_j)` on `[-1/2, 1/2]^d`.
#[derive(Debug, Clone)]
pub struct SamplingDensity {
    axes: Vec<Arc<dyn AxisDensity>>,
}

impl SamplingDensity {
    pub fn new(axes: Vec<Arc<dyn AxisDensity>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidConfig(
                "sampling density needs >= 1 axis".into(),
            ));
        }
        Ok(Self { axes })
    }

    pub fn uniform(d: usize) -> Self {
        Self {
            axes: (0..d)
                .map(|_| Arc::new(UniformAxis) as Arc<dyn AxisDensity>)
                .collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.axes.len()
    }

    pub fn pdf(&self, z: &[f64]) -> f64 {
        self.axes.iter().zip(z).map(|(g, &v)| g.pdf(v)).product()
    }

    /// One draw on `[-1/2, 1/2]^d` by per-axis inverse CDF.
    pub fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        for g in &self.axes {
            let u: f64 = rng.random();
            out.push(g.inverse_cdf(u));
        }
    }
}

/// JSON description of a sampling density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub kind: String,
    /// Per-axis shape parameters for `product-beta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    /// Per-axis bin heights for `custom-grid`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<Vec<Vec<f64>>>,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            kind: "uniform".into(),
            alpha: None,
            beta: None,
            bins: None,
        }
    }
}

type DensityBuilder = fn(&DensityConfig, usize) -> Result<SamplingDensity>;

fn per_axis<'a, T>(v: &'a Option<Vec<T>>, d: usize, what: &str) -> Result<&'a [T]> {
    let v = v
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("density needs `{what}`")))?;
    if v.len() != d {
        return Err(Error::InvalidConfig(format!(
            "density `{what}` has {} entries, expected {d}",
            v.len()
        )));
    }
    Ok(v)
}

pub fn density_registry() -> &'static Registry<DensityBuilder> {
    static REG: OnceLock<Registry<DensityBuilder>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::new("sampling density")
            .with(
                "uniform",
                (|_, d| Ok(SamplingDensity::uniform(d))) as DensityBuilder,
            )
            .with("product-beta", |cfg, d| {
                let a = per_axis(&cfg.alpha, d, "alpha")?;
                let b = per_axis(&cfg.beta, d, "beta")?;
                let axes = a
                    .iter()
                    .zip(b)
                    .map(|(&a, &b)| Ok(Arc::new(BetaAxis::new(a, b)?) as Arc<dyn AxisDensity>))
                    .collect::<Result<_>>()?;
                SamplingDensity::new(axes)
            })
            .with("custom-grid", |cfg, d| {
                let bins = per_axis(&cfg.bins, d, "bins")?;
                let axes = bins
                    .iter()
                    .map(|h| Ok(Arc::new(GridAxis::new(h.clone())?) as Arc<dyn AxisDensity>))
                    .collect::<Result<_>>()?;
                SamplingDensity::new(axes)
            })
    })
}

impl DensityConfig {
    pub fn build(&self, d: usize) -> Result<SamplingDensity> {
        (density_registry().get(&self.kind)?)(self, d)
    }
}

/// Draws `n` i.i.d. sites with density `A^{-1} g(x / A)` on the region.
pub fn generate_sites(
    region: &Region,
    density: &SamplingDensity,
    n: usize,
    seed: u64,
) -> Result<PointSet> {
    let mut rng = rng_from_seed(seed);
    generate_sites_with(region, density, n, &mut rng)
}

pub fn generate_sites_with<R: Rng + ?Sized>(
    region: &Region,
    density: &SamplingDensity,
    n: usize,
    rng: &mut R,
) -> Result<PointSet> {
    if n == 0 {
        return Err(Error::InvalidConfig("site count n must be >= 1".into()));
    }
    if density.d() != region.d() {
        return Err(Error::DimensionMismatch {
            expected: region.d(),
            got: density.d(),
        });
    }
    let d = region.d();
    let mut coords = Vec::with_capacity(n * d);
    for _ in 0..n {
        let start = coords.len();
        density.sample_unit(rng, &mut coords);
        for (v, a) in coords[start..].iter_mut().zip(region.sides()) {
            *v *= a;
        }
    }
    PointSet::new(d, coords)
}

/// Sites, responses and optional group labels on a region.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    region: Region,
    sites: PointSet,
    responses: Vec<f64>,
    groups: Option<Vec<String>>,
}

impl SpatialDataset {
    pub fn new(region: Region, sites: PointSet, responses: Vec<f64>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidConfig(
                "dataset needs at least one site".into(),
            ));
        }
        if sites.len() != responses.len() {
            return Err(Error::InvalidConfig(format!(
                "{} sites but {} responses",
                sites.len(),
                responses.len()
            )));
        }
        region.check_sites(&sites)?;
        Ok(Self {
            region,
            sites,
            responses,
            groups: None,
        })
    }

    pub fn with_groups(mut self, groups: Vec<String>) -> Result<Self> {
        if groups.len() != self.len() {
            return Err(Error::InvalidConfig(format!(
                "{} group labels for {} sites",
                groups.len(),
                self.len()
            )));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn sites(&self) -> &PointSet {
        &self.sites
    }

    pub fn site(&self, i: usize) -> &[f64] {
        self.sites.get(i)
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn groups(&self) -> Option<&[String]> {
        self.groups.as_deref()
    }

    pub fn d(&self) -> usize {
        self.region.d()
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn rescale(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.region.rescale(x)
    }

    /// Rows reordered by `order` (a permutation of `0..n`).
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            region: self.region.clone(),
            sites: self.sites.permuted(order),
            responses: order.iter().map(|&i| self.responses[i]).collect(),
            groups: self
                .groups
                .as_ref()
                .map(|g| order.iter().map(|&i| g[i].clone()).collect()),
        }
    }

    /// Keeps rows whose group label equals `label`.
    pub fn select_group(&self, label: &str) -> Result<Self> {
        let groups = self
            .groups
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("dataset has no group column".into()))?;
        let order: Vec<usize> = (0..self.len()).filter(|&i| groups[i] == label).collect();
        if order.is_empty() {
            return Err(Error::InvalidConfig(format!("no rows in group {label:?}")));
        }
        Ok(self.permuted(&order))
    }
}

/// Decimal text with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads `x1,...,xd,y[,group]` rows. Region sides come from a leading
/// `# A=a1,a2,...` comment line or from `region` when given.
pub fn load_csv(path: impl AsRef<Path>, region: Option<&Region>) -> Result<SpatialDataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, region)
}

pub fn parse_csv(text: &str, region: Option<&Region>) -> Result<SpatialDataset> {
    let mut header_region = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(list) = rest.trim().strip_prefix("A=") {
                let sides = list
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Parse {
                        line: lineno as u64 + 1,
                        message: format!("bad region line: {e}"),
                    })?;
                header_region = Some(Region::new(sides)?);
            }
        } else if !line.is_empty() {
            break;
        }
    }
    let region = match (region, header_region) {
        (Some(r), _) => r.clone(),
        (None, Some(r)) => r,
        (None, None) => {
            return Err(Error::InvalidConfig(
                "region sides missing: add a `# A=...` line or supply them in the config".into(),
            ))
        }
    };

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let d = names.iter().take_while(|h| h.starts_with('x')).count();
    let header_line = reader.position().line();
    let expected: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    if d == 0 || names[..d] != expected.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        return Err(Error::Parse {
            line: header_line,
            message: format!("header must start with x1,...,xd, got {names:?}"),
        });
    }
    let has_group = match &names[d..] {
        ["y"] => false,
        ["y", "group"] => true,
        other => {
            return Err(Error::Parse {
                line: header_line,
                message: format!("expected `y[,group]` after coordinates, got {other:?}"),
            })
        }
    };
    if d != region.d() {
        return Err(Error::DimensionMismatch {
            expected: region.d(),
            got: d,
        });
    }

    let width = d + 1 + has_group as usize;
    let mut coords = Vec::new();
    let mut responses = Vec::new();
    let mut groups = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let num = |k: usize| {
            record[k].parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("field {} ({:?}): {e}", k + 1, &record[k]),
            })
        };
        let start = coords.len();
        for k in 0..d {
            coords.push(num(k)?);
        }
        if !region.contains(&coords[start..]) {
            return Err(Error::Parse {
                line,
                message: format!(
                    "site {:?} outside region {:?}",
                    &coords[start..],
                    region.sides()
                ),
            });
        }
        responses.push(num(d)?);
        if has_group {
            groups.push(record[d + 1].to_string());
        }
    }
    let data = SpatialDataset::new(region, PointSet::new(d, coords)?, responses)?;
    if has_group {
        data.with_groups(groups)
    } else {
        Ok(data)
    }
}

pub fn save_csv(dataset: &SpatialDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = fs::File::create(path)?;
    out.write_all(to_csv_string(dataset).as_bytes())?;
    Ok(())
}

pub fn to_csv_string(dataset: &SpatialDataset) -> String {
    let d = dataset.d();
    let mut s = String::new();
    let sides: Vec<String> = dataset
        .region()
        .sides()
        .iter()
        .map(|&a| fmt_f64(a))
        .collect();
    s.push_str(&format!("# A={}\n", sides.join(",")));
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    if dataset.groups().is_some() {
        header.push("group".into());
    }
    s.push_str(&header.join(","));
    s.push('\n');
    for i in 0..dataset.len() {
        let mut row: Vec<String> = dataset.site(i).iter().map(|&v| fmt_f64(v)).collect();
        row.push(fmt_f64(dataset.responses()[i]));
        if let Some(g) = dataset.groups() {
            row.push(g[i].clone());
        }
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Sidecar metadata written next to generated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    #[serde(rename = "A")]
    pub sides: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    pub density: DensityConfig,
    pub generator_id: String,
}

impl DatasetMetadata {
    pub fn new(region: &Region, n: usize, seed: u64, density: DensityConfig) -> Self {
        Self {
            sides: region.sides().to_vec(),
            n,
            seed,
            density,
            generator_id: GENERATOR_ID.to_string(),
        }
    }
}
