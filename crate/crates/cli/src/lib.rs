//! Command-line front end: simulate data, fit surfaces, run Monte Carlo
//! experiments and two-sample tests, and print kernel moment matrices.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use spatial_lp::basis::BasisLayout;
use spatial_lp::dataset::{
    fmt_f64, generate_sites_with, load_csv, save_csv, DatasetMetadata, SpatialDataset,
};
use spatial_lp::inference::Analyzer;
use spatial_lp::kernels::{matrix_rows, MomentMatrices};
use spatial_lp::mc::{
    run_experiment, run_two_sample, simulate_pair, ExperimentSpec, TwoSampleSettings, TwoSampleSpec,
};
use spatial_lp::rng::{child_rng, stream, GENERATOR_ID};

use config::{FitCommandConfig, MomentsConfig, SimulateConfig, TwoSampleCommandConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit status when too many Monte Carlo replications fail.
pub const EXIT_REPLICATION_FAILURES: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "spatial-lp",
    version,
    about = "Local polynomial regression for spatial data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate sites and responses; writes data.csv and metadata.json.
    Simulate(Common),
    /// Local polynomial fit at z or on a grid; writes fit.csv.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Data file with `x1..xd,y` columns.
        #[arg(long)]
        data: PathBuf,
    },
    /// Monte Carlo study; writes summary.json, that.csv and hist.csv.
    Mc(Common),
    /// Two-sample test of equal derivatives; writes test.json.
    TwoSample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data1: PathBuf,
        #[arg(long)]
        data2: PathBuf,
    },
    /// Kernel moment matrices; writes moments.json.
    Moments(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c) | Command::Mc(c) | Command::Moments(c) => c,
            Command::Fit { common, .. } | Command::TwoSample { common, .. } => common,
        }
    }
}

/// Runs a parsed command and returns the process exit status.
pub fn run(cli: Cli) -> Result<u8> {
    let common = cli.command.common();
    if let Some(t) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Fit { common, data } => fit(common, data),
        Command::Mc(c) => mc(c),
        Command::TwoSample {
            common,
            data1,
            data2,
        } => two_sample(common, data1, data2),
        Command::Moments(c) => moments(c),
    }
}

fn provenance_line(config: &Value) -> String {
    format!("# spatial-lp {VERSION} config={config}\n")
}

fn write_json(path: &Path, config: &Value, body: impl Serialize) -> Result<()> {
    let mut value = serde_json::to_value(body)?;
    if let Value::Object(map) = &mut value {
        map.insert("version".into(), json!(VERSION));
        map.insert("config".into(), config.clone());
    }
    fs::write(path, serde_json::to_string_pretty(&value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// Writes CSV rows after a provenance comment line.
fn write_csv(path: &Path, config: &Value, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    file.write_all(provenance_line(config).as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn prepend_provenance(path: &Path, config: &Value) -> Result<()> {
    let body = fs::read_to_string(path)?;
    fs::write(path, provenance_line(config) + &body)?;
    Ok(())
}

fn simulate(c: &Common) -> Result<u8> {
    let (mut cfg, mut echo): (SimulateConfig, Value) = config::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
        echo["seed"] = json!(s);
    }
    let d = cfg.region.d();
    let spec = TwoSampleSpec {
        reps: 1,
        n: cfg.n,
        n2: cfg.n2,
        region: cfg.region.clone(),
        density: cfg.density.clone(),
        mean1: cfg.mean.clone(),
        mean2: cfg.mean2.clone().unwrap_or_else(|| cfg.mean.clone()),
        error: cfg.error.clone(),
        kernel: Default::default(),
        p: 1,
        h: vec![0.1; d],
        variance_h: None,
        residual_h: None,
        taper: spatial_lp::kernels::TaperConfig {
            family: "bartlett".into(),
            widths: vec![1.0; d],
        },
        z: vec![0.0; d],
        idx: String::new(),
        tau: 0.05,
        master_seed: cfg.seed,
    };
    let written: Vec<(&str, SpatialDataset)> = if cfg.mean2.is_some() {
        let (a, b) = simulate_pair(&spec, cfg.seed)?;
        vec![("data.csv", a), ("data2.csv", b)]
    } else {
        let density = cfg.density.build(d)?;
        let (field, noise) = cfg.error.build(d)?;
        let mean = cfg.mean.build(d)?;
        let sites = generate_sites_with(
            &cfg.region,
            &density,
            cfg.n,
            &mut child_rng(cfg.seed, stream::SITES),
        )?;
        let errors = spatial_lp::randfield::draw_errors(
            field.as_ref(),
            &noise,
            &cfg.region,
            &sites,
            cfg.seed,
        )?;
        let y = sites
            .iter()
            .zip(&errors)
            .map(|(x, e)| mean.eval(&cfg.region.rescale_unchecked(x)) + e)
            .collect();
        vec![(
            "data.csv",
            SpatialDataset::new(cfg.region.clone(), sites, y)?,
        )]
    };
    for (name, data) in &written {
        let path = c.out.join(name);
        save_csv(data, &path)?;
        prepend_provenance(&path, &echo)?;
    }
    let meta = DatasetMetadata::new(&cfg.region, cfg.n, cfg.seed, cfg.density.clone());
    write_json(&c.out.join("metadata.json"), &echo, meta)?;
    Ok(0)
}

fn load_data(path: &Path, region: Option<&spatial_lp::dataset::Region>) -> Result<SpatialDataset> {
    load_csv(path, region).with_context(|| format!("reading {}", path.display()))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn fit(c: &Common, data_path: &Path) -> Result<u8> {
    let (cfg, echo): (FitCommandConfig, Value) = config::load(&c.config)?;
    let data = load_data(data_path, cfg.region.as_ref())?;
    let d = data.d();
    let inference = cfg.inference().build(d)?;
    let analyzer = Analyzer::new(&data, &inference)?;
    let layout = analyzer.layout();
    let mut header: Vec<String> = (1..=d).map(|j| format!("z{j}")).collect();
    for h in [
        "idx",
        "estimate",
        "bias",
        "variance",
        "ci_lo",
        "ci_hi",
        "boundary_flag",
        "n_eff",
        "error",
    ] {
        header.push(h.into());
    }
    let mut rows = Vec::new();
    for z in cfg.evaluation_points()? {
        let zcols: Vec<String> = z.iter().map(|&v| fmt_f64(v)).collect();
        match analyzer.analyze(&z) {
            Ok(f) => {
                for (pos, idx) in layout.indices().iter().enumerate() {
                    let mut row = zcols.clone();
                    row.push(idx.digits());
                    row.push(fmt_f64(f.derivatives[pos]));
                    row.push(opt(f.derivative_bias(layout, pos)));
                    row.push(opt(analyzer.estimate_variance(&f, pos)));
                    let ci = f.ci.as_ref().map(|ci| ci[pos]);
                    row.push(opt(ci.map(|c| c.0)));
                    row.push(opt(ci.map(|c| c.1)));
                    row.push(f.boundary_flag.to_string());
                    row.push(f.n_eff.to_string());
                    row.push(String::new());
                    rows.push(row);
                }
            }
            Err(e) => {
                let mut row = zcols;
                row.extend(std::iter::repeat_n(String::new(), header.len() - d - 1));
                row.push(e.to_string());
                rows.push(row);
            }
        }
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&c.out.join("fit.csv"), &echo, &header, &rows)?;
    Ok(0)
}

fn mc(c: &Common) -> Result<u8> {
    let (mut spec, mut echo): (ExperimentSpec, Value) = config::load(&c.config)?;
    if let Some(s) = c.seed {
        spec.master_seed = s;
        echo["master_seed"] = json!(s);
    }
    let summary = run_experiment(&spec)?;
    write_json(&c.out.join("summary.json"), &echo, &summary)?;
    let rows: Vec<Vec<String>> = summary
        .replications
        .iter()
        .map(|r| vec![r.rep.to_string(), fmt_f64(r.t_hat), r.covered.to_string()])
        .collect();
    write_csv(
        &c.out.join("that.csv"),
        &echo,
        &["rep", "t_hat", "covered"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = summary
        .histogram
        .rows()
        .into_iter()
        .map(|(l, r, n)| vec![fmt_f64(l), fmt_f64(r), n.to_string()])
        .collect();
    write_csv(
        &c.out.join("hist.csv"),
        &echo,
        &["bin_left", "bin_right", "count"],
        &rows,
    )?;
    if summary.exceeds_failure_limit() {
        log::error!(
            "{} of {} replications failed (limit {})",
            summary.failures.len(),
            spec.reps,
            spec.max_failure_fraction
        );
        return Ok(EXIT_REPLICATION_FAILURES);
    }
    Ok(0)
}

fn two_sample(c: &Common, path1: &Path, path2: &Path) -> Result<u8> {
    let (cfg, echo): (TwoSampleCommandConfig, Value) = config::load(&c.config)?;
    let data1 = load_data(path1, cfg.region.as_ref())?;
    let data2 = load_data(path2, cfg.region.as_ref())?;
    if data1.region() != data2.region() {
        return Err(anyhow!(
            "data files have different regions: {:?} and {:?}",
            data1.region().sides(),
            data2.region().sides()
        ));
    }
    let settings = TwoSampleSettings::new(
        data1.d(),
        cfg.p,
        &cfg.kernel,
        &cfg.h,
        Some(cfg.variance_h.as_deref().unwrap_or(&cfg.h)),
        Some(cfg.residual_h.as_deref().unwrap_or(&cfg.h)),
        &cfg.taper,
        &cfg.idx,
        cfg.tau,
    )?;
    let report = run_two_sample(&data1, &data2, &settings, &cfg.z)?;
    write_json(&c.out.join("test.json"), &echo, &report)?;
    Ok(0)
}

fn moments(c: &Common) -> Result<u8> {
    let (cfg, echo): (MomentsConfig, Value) = config::load(&c.config)?;
    let spec = cfg.kernel.build(cfg.d)?;
    let layout = BasisLayout::new(cfg.d, cfg.p)?;
    let mm = MomentMatrices::new(&spec, &layout)?;
    let body = json!({
        "indices": layout.indices().iter().map(|i| i.digits()).collect::<Vec<_>>(),
        "top_indices": layout.top_indices().iter().map(|i| i.digits()).collect::<Vec<_>>(),
        "S": matrix_rows(&mm.s),
        "Kcal": matrix_rows(&mm.kcal),
        "B": matrix_rows(&mm.b),
        "kappa0_r2": mm.kappa0_r2,
        "sandwich": matrix_rows(mm.sandwich()),
        "generator_id": GENERATOR_ID,
    });
    write_json(&c.out.join("moments.json"), &echo, body)?;
    Ok(0)
}
