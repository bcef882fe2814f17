//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a gating criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use spatial_lp::basis::BasisLayout;
use spatial_lp::dataset::{generate_sites, PointSet, Region, SamplingDensity, SpatialDataset};
use spatial_lp::inference::{Analyzer, InferenceSettings};
use spatial_lp::kernels::{kernel_registry, KernelSpec, MomentMatrices};
use spatial_lp::lpfit::{fit_at, FitConfig};
use spatial_lp::mc::{run_two_sample_experiment, simulate_dataset, ExperimentSpec, TwoSampleSpec};
use spatial_lp::randfield::{covariance_exponential, simulate_field, Exponential, FieldModel};
use spatial_lp::rng::rng_from_seed;
use spatial_lp::surface::{BenchmarkMean, Surface};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

// 1. Monte Carlo table for the three bundled configurations.

fn table_reproduction() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut pass = true;
    let mut parts = Vec::new();
    for (case, var_band) in [("i", (0.85, 1.20)), ("ii", (1.1, 1.9)), ("iii", (1.1, 1.9))] {
        let out = dir.path().join(case);
        let status = Command::new(env!("CARGO_BIN_EXE_spatial-lp"))
            .args(["mc", "--config"])
            .arg(configs.join(format!("table1_case_{case}.json")))
            .arg("--out")
            .arg(&out)
            .status()
            .expect("spawn spatial-lp");
        if !status.success() {
            return outcome(false, format!("case ({case}): mc exited with {status}"));
        }
        let s: Value =
            serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        let mean = s["mean"].as_f64().unwrap_or(f64::NAN);
        let var = s["variance"].as_f64().unwrap_or(f64::NAN);
        let cov = s["coverage"].as_f64().unwrap_or(f64::NAN);
        let ok =
            within(cov, 0.91, 0.97) && within(var, var_band.0, var_band.1) && mean.abs() <= 0.45;
        pass &= ok;
        parts.push(format!(
            "case ({case}) mean {mean:.3} var {var:.3} [{}, {}] coverage {cov:.3}{}",
            var_band.0,
            var_band.1,
            if ok { "" } else { " <- out of band" }
        ));
    }
    outcome(pass, parts.join("; "))
}

// 2. Exact recovery of noiseless polynomials.

fn polynomial_recovery() -> Outcome {
    let mut rng = rng_from_seed(2);
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for d in 1..=2 {
        for p in 1..=3 {
            let layout = BasisLayout::new(d, p).unwrap();
            let region = Region::new(vec![10.0; d]).unwrap();
            for k in 0..20 {
                let z: Vec<f64> = (0..d).map(|_| rng.random_range(-0.2..0.2)).collect();
                let h: Vec<f64> = (0..d).map(|_| rng.random_range(0.15..0.3)).collect();
                let coefs: Vec<f64> = (0..layout.len())
                    .map(|_| rng.random_range(-3.0..3.0))
                    .collect();
                let sites =
                    generate_sites(&region, &SamplingDensity::uniform(d), 600, 100 + k).unwrap();
                let y = sites
                    .iter()
                    .map(|x| {
                        let u: Vec<f64> = region
                            .rescale_unchecked(x)
                            .iter()
                            .zip(&z)
                            .map(|(a, b)| a - b)
                            .collect();
                        layout
                            .indices()
                            .iter()
                            .zip(&coefs)
                            .map(|(i, c)| c * i.monomial(&u))
                            .sum()
                    })
                    .collect();
                let data = SpatialDataset::new(region.clone(), sites, y).unwrap();
                let fit =
                    fit_at(&data, &FitConfig::new(p, KernelSpec::triangular(d), h), &z).unwrap();
                for (b, c) in fit.beta_hat.iter().zip(&coefs) {
                    worst = worst.max((b - c).abs());
                }
                runs += 1;
            }
        }
    }
    outcome(
        worst < 1e-8,
        format!("{runs} fits, max coefficient error {worst:.2e} (tol 1e-8)"),
    )
}

// 3. Kernel moments against closed forms and quadrature.

fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn axis_integral(gl: &[(f64, f64)], spec: &KernelSpec, a: u32, r: u32) -> f64 {
    let c = spec.support_halfwidth();
    let k = spec.family();
    let bps: Vec<f64> = k.breakpoints().iter().map(|b| b * c).collect();
    bps.windows(2)
        .map(|w| {
            let (half, mid) = (0.5 * (w[1] - w[0]), 0.5 * (w[1] + w[0]));
            gl.iter()
                .map(|&(x, wt)| {
                    let u = mid + half * x;
                    wt * half * u.powi(a as i32) * (k.eval(u / c) / c).powi(r as i32)
                })
                .sum::<f64>()
        })
        .sum()
}

fn exponents(idx: &spatial_lp::basis::MultiIndex, d: usize) -> Vec<u32> {
    let mut e = vec![0u32; d];
    for j in idx.entries() {
        e[j - 1] += 1;
    }
    e
}

fn moment_oracle() -> Outcome {
    let mm =
        MomentMatrices::new(&KernelSpec::triangular(2), &BasisLayout::new(2, 1).unwrap()).unwrap();
    let s = [1.0, 1.0 / 6.0, 1.0 / 6.0];
    let k = [4.0 / 9.0, 2.0 / 45.0, 2.0 / 45.0];
    let mut closed: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let (es, ek) = if i == j { (s[i], k[i]) } else { (0.0, 0.0) };
            closed = closed
                .max((mm.s[(i, j)] - es).abs())
                .max((mm.kcal[(i, j)] - ek).abs());
        }
    }
    for (t, want) in [1.0 / 6.0, 0.0, 1.0 / 6.0].iter().enumerate() {
        closed = closed.max((mm.b[(0, t)] - want).abs());
    }

    let gl = gauss_legendre(64);
    let mut quad: f64 = 0.0;
    let mut checked = 0;
    for name in kernel_registry().names() {
        for c in [1.0, 0.5] {
            for d in 1..=3 {
                for p in 1..=3 {
                    let spec = KernelSpec::new(name, c, d).unwrap();
                    let layout = BasisLayout::new(d, p).unwrap();
                    let mm = MomentMatrices::new(&spec, &layout).unwrap();
                    let q = |e: Vec<u32>, r: u32| -> f64 {
                        e.iter().map(|&a| axis_integral(&gl, &spec, a, r)).product()
                    };
                    let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1.0);
                    for (i, a) in layout.indices().iter().enumerate() {
                        let ea = exponents(a, d);
                        for (j, b) in layout.indices().iter().enumerate() {
                            let e: Vec<u32> =
                                ea.iter().zip(exponents(b, d)).map(|(x, y)| x + y).collect();
                            quad = quad
                                .max(rel(mm.s[(i, j)], q(e.clone(), 1)))
                                .max(rel(mm.kcal[(i, j)], q(e, 2)));
                        }
                        for (t, b) in layout.top_indices().iter().enumerate() {
                            let e: Vec<u32> =
                                ea.iter().zip(exponents(b, d)).map(|(x, y)| x + y).collect();
                            quad = quad.max(rel(mm.b[(i, t)], q(e, 1)));
                        }
                    }
                    quad = quad.max(rel(mm.kappa0_r2, q(vec![0; d], 2)));
                    checked += 1;
                }
            }
        }
    }
    outcome(
        closed < 1e-10 && quad < 1e-9,
        format!("closed-form error {closed:.1e} (tol 1e-10); quadrature error {quad:.1e} over {checked} layouts (tol 1e-9)"),
    )
}

// 4. Field covariance at fixed lags.

fn field_covariance() -> Outcome {
    let region = Region::new(vec![10.0, 10.0]).unwrap();
    let (rho, tau2, reps) = (2.0, 0.01, 200);
    let lags = [0.0, 0.5, 1.0, 2.0];
    let anchors: Vec<[f64; 2]> = [-4.0, -1.0, 2.0]
        .iter()
        .flat_map(|&x| [-3.0, 0.0, 3.0].map(|y| [x, y]))
        .collect();
    let mut points = Vec::new();
    for a in &anchors {
        for &s in &lags {
            points.push(vec![a[0] + s, a[1]]);
        }
    }
    let sites = PointSet::from_points(2, &points).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for lambda in [0.5, 1.0] {
        let model = FieldModel::car1_poisson(lambda, tau2, rho).unwrap();
        let kernel = Exponential::car1(lambda).unwrap();
        let mut per_rep = vec![Vec::with_capacity(reps); lags.len()];
        for rep in 0..reps {
            let e = simulate_field(&model, &region, &sites, 9000 + rep as u64).unwrap();
            for (l, acc) in per_rep.iter_mut().enumerate() {
                let v: f64 = (0..anchors.len())
                    .map(|a| e[a * lags.len()] * e[a * lags.len() + l])
                    .sum::<f64>()
                    / anchors.len() as f64;
                acc.push(v);
            }
        }
        for (l, &s) in lags.iter().enumerate() {
            let v = &per_rep[l];
            let mean = v.iter().sum::<f64>() / reps as f64;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
            let se = sd / (reps as f64).sqrt();
            let want = rho * tau2 * covariance_exponential(&kernel, &[s, 0.0]).unwrap();
            let ok = (mean - want).abs() <= 3.0 * se;
            pass &= ok;
            parts.push(format!(
                "lambda {lambda} lag {s}: {mean:.4} vs {want:.4} (se {se:.4}){}",
                if ok { "" } else { " <- outside 3 se" }
            ));
        }
    }
    outcome(pass, parts.join("; "))
}

// 5. Variance estimator under iid noise, A / n = 0.1.

const SMALL_TAPER: f64 = 1e-3;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

/// Median of `W_hat(0)` and median of `|W_hat(0) - 0.1|` over `seeds` datasets.
fn w_hat_spread(n: usize, seeds: u64) -> (f64, f64) {
    let side = (0.1 * n as f64).sqrt();
    let spec: ExperimentSpec = serde_json::from_value(json!({
        "reps": 1, "n": n, "region": [side, side], "mean": "paper_mean",
        "error": {"sigma2": 1.0}, "h": [0.2, 0.2], "pilot_h": [0.25, 0.25],
        "taper": {"widths": [SMALL_TAPER, SMALL_TAPER]}, "z": [0.0, 0.0], "master_seed": 0
    }))
    .unwrap();
    let settings: InferenceSettings = serde_json::from_value(json!({
        "h": [0.2, 0.2], "variance_h": [0.25, 0.25], "residual_h": [0.25, 0.25],
        "taper": {"widths": [SMALL_TAPER, SMALL_TAPER]}
    }))
    .unwrap();
    let cfg = settings.build(2).unwrap();
    let w: Vec<f64> = (0..seeds)
        .map(|s| {
            let data = simulate_dataset(&spec, 5000 + s).unwrap();
            Analyzer::new(&data, &cfg)
                .unwrap()
                .variance(&[0.0, 0.0])
                .unwrap()
                .w_hat
        })
        .collect();
    let dev = w.iter().map(|v| (v - 0.1).abs()).collect();
    (median(w), median(dev))
}

fn variance_consistency() -> Outcome {
    let (m1, d1) = w_hat_spread(1000, 200);
    let (m2, d2) = w_hat_spread(2000, 200);
    outcome(
        (m1 - 0.1).abs() <= 0.025 && d2 < d1,
        format!(
            "median W_hat n=1000: {m1:.4} (tol 0.1 +- 0.025), median |W_hat - 0.1| {d1:.4}; \
             n=2000: {m2:.4}, median |W_hat - 0.1| {d2:.4}"
        ),
    )
}

// 6. Two-sample test size and power.

fn two_sample_spec(n: usize, gap: f64, reps: usize, seed: u64) -> TwoSampleSpec {
    let mean2 = if gap == 0.0 {
        json!("paper_mean")
    } else {
        json!({"builtin": "paper_mean", "shift": gap})
    };
    serde_json::from_value(json!({
        "reps": reps, "n": n, "region": [10.0, 10.0], "mean1": "paper_mean", "mean2": mean2,
        "error": {"sigma2": 1.0}, "h": [0.2, 0.2], "variance_h": [0.25, 0.25], "residual_h": [0.25, 0.25],
        "taper": {"widths": [SMALL_TAPER, SMALL_TAPER]}, "z": [0.0, 0.0], "idx": "", "tau": 0.05,
        "master_seed": seed
    }))
    .unwrap()
}

fn two_sample_size_power() -> Outcome {
    let size = run_two_sample_experiment(&two_sample_spec(1000, 0.0, 500, 31)).unwrap();
    let power = run_two_sample_experiment(&two_sample_spec(2000, 1.0, 200, 32)).unwrap();
    let ok = within(size.rejection_rate, 0.02, 0.08)
        && power.rejection_rate >= 0.95
        && size.failures.is_empty()
        && power.failures.is_empty();
    outcome(
        ok,
        format!(
            "size {:.3} over {} reps [0.02, 0.08]; power {:.3} over {} reps at n=2000 (>= 0.95)",
            size.rejection_rate, size.completed, power.rejection_rate, power.completed
        ),
    )
}

// 7. Uniform error on an interior grid (informative).

fn uniform_rate() -> Outcome {
    let region = Region::new(vec![10.0, 10.0]).unwrap();
    let grid: Vec<[f64; 2]> = (0..9)
        .flat_map(|i| (0..9).map(move |j| [-0.3 + 0.075 * i as f64, -0.3 + 0.075 * j as f64]))
        .collect();
    let mut medians = Vec::new();
    for n in [500usize, 1000, 2000, 4000] {
        let h = 0.2 * (n as f64 / 1000.0).powf(-1.0 / 6.0);
        let cfg = FitConfig::new(1, KernelSpec::triangular(2), vec![h, h]);
        let sups = (0..50u64)
            .map(|s| {
                let sites =
                    generate_sites(&region, &SamplingDensity::uniform(2), n, 700 + s).unwrap();
                let mut rng = rng_from_seed(800 + s);
                let y = sites
                    .iter()
                    .map(|x| {
                        let e: f64 = rng.sample(StandardNormal);
                        BenchmarkMean.eval(&region.rescale_unchecked(x)) + e
                    })
                    .collect();
                let data = SpatialDataset::new(region.clone(), sites, y).unwrap();
                grid.iter()
                    .map(|z| {
                        (fit_at(&data, &cfg, z).unwrap().beta_hat[0] - BenchmarkMean.eval(z)).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        medians.push((n, median(sups)));
    }
    let monotone = medians.windows(2).all(|w| w[1].1 < w[0].1);
    let text: Vec<String> = medians
        .iter()
        .map(|(n, m)| format!("n={n}: {m:.3}"))
        .collect();
    outcome(monotone, format!("median sup-error {}", text.join(", ")))
}

type Criterion = (&'static str, bool, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("1 Monte Carlo table", true, table_reproduction),
        ("2 polynomial recovery", true, polynomial_recovery),
        ("3 kernel moment oracle", true, moment_oracle),
        ("4 field covariance", true, field_covariance),
        (
            "5 variance estimator consistency",
            true,
            variance_consistency,
        ),
        ("6 two-sample size and power", true, two_sample_size_power),
        ("7 uniform rate (informative)", false, uniform_rate),
    ];
    let mut failed = 0;
    for (name, gating, run) in criteria {
        let start = Instant::now();
        let o = run();
        let verdict = match (o.pass, gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (informative)",
        };
        if !o.pass && gating {
            failed += 1;
        }
        println!(
            "criterion {name}: {verdict} [{:.1}s] {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} of 6 gating criteria passed", 6 - failed);
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
