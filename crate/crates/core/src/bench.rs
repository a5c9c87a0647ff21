//! Experiment harness: sweeps over stage count, SNR, SIR and sparsity, the
//! two-scatterer image demo, runtime comparisons, and report emission.
//!
//! Every method at a sweep point sees the same test set; the report records
//! its content hash next to the dictionary hash.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, ArrayView1};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{
    admm_solve, admm_solve_single_penalty, lin_to_db, nmse_linear, AdmmCache, SolverParams, StoppingRule,
};
use crate::error::{domain, Error, Result};
use crate::io::{self, db_value};
use crate::net::Network;
use crate::radar::{Dictionary, Setup};
use crate::scene::{
    calibrate_interference, calibrate_noise, complete_measurement, generate_dataset, interference_support,
    sample_seed, Dataset, SceneSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Sweep over K: ADMM after K iterations against K-stage networks.
    Stages,
    Snr,
    Sir,
    WSparsity,
    BSparsity,
    ImageDemo,
    /// Per-sample wall clock across an SNR sweep.
    Runtime,
}

impl ExperimentKind {
    pub fn parse(verb: &str) -> Result<Self> {
        Ok(match verb {
            "stages" => Self::Stages,
            "snr" => Self::Snr,
            "sir" => Self::Sir,
            "sparsity-w" | "w_sparsity" => Self::WSparsity,
            "sparsity-b" | "b_sparsity" => Self::BSparsity,
            "image" | "image_demo" => Self::ImageDemo,
            "time" | "runtime" => Self::Runtime,
            other => return Err(Error::Config(format!("unknown experiment {other:?}"))),
        })
    }
}

/// A trained network used in a sweep. With `sweep` set it is the network
/// matched to that sweep value; without, it is evaluated at every point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetRef {
    pub label: String,
    pub path: PathBuf,
    #[serde(default)]
    pub sweep: Option<f64>,
}

/// Acceptance bounds checked against a finished table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum Bound {
    /// `nmse(method) ≤ nmse(baseline) − margin_db` at every sweep point.
    Beats {
        method: String,
        baseline: String,
        margin_db: f64,
    },
    /// `|nmse(method) − nmse(baseline)| ≤ tol_db` at every sweep point.
    Near {
        method: String,
        baseline: String,
        tol_db: f64,
    },
    AtMost {
        method: String,
        nmse_db: f64,
    },
    AtLeast {
        method: String,
        nmse_db: f64,
    },
    /// NMSE never rises by more than `tol_db` from one sweep point to the next.
    Nonincreasing {
        method: String,
        tol_db: f64,
    },
    /// `min ≤ runtime(method) / runtime(baseline) ≤ max` at every point.
    RuntimeRatio {
        method: String,
        baseline: String,
        #[serde(default)]
        min: Option<f64>,
        #[serde(default)]
        max: Option<f64>,
    },
    /// `(max − min) / min` of the method's runtime across the sweep.
    RuntimeSpread {
        method: String,
        max_rel: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundOutcome {
    pub bound: Bound,
    pub passed: bool,
    pub detail: String,
}

fn default_n_test() -> usize {
    1000
}

fn default_max_iters() -> usize {
    20_000
}

fn default_rounds() -> usize {
    5
}

fn default_fixed() -> Vec<usize> {
    vec![5]
}

fn default_single() -> SolverParams {
    SolverParams::single_penalty()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Radar constants and grid sizes.
    #[serde(default)]
    pub setup: Setup,
    /// Swept values: K, SNR (dB), SIR (dB), ‖w‖₀ or ‖b‖₀ depending on `kind`.
    #[serde(default)]
    pub sweep: Vec<f64>,
    /// Scene template; the swept field is overwritten per point.
    pub scene: SceneSpec,
    #[serde(default)]
    pub solver: SolverParams,
    /// Also report the single-penalty baseline.
    #[serde(default)]
    pub single_penalty: bool,
    #[serde(default = "default_single")]
    pub single_penalty_params: SolverParams,
    #[serde(default)]
    pub nets: Vec<NetRef>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
    /// Iteration cap for converged ADMM.
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Runtime experiment: iteration counts of the fixed-K ADMM rows.
    #[serde(default = "default_fixed")]
    pub fixed_iters: Vec<usize>,
    /// Runtime experiment: interleaved timing rounds for the networks and
    /// fixed-K ADMM; each reports its median round.
    #[serde(default = "default_rounds")]
    pub timing_rounds: usize,
    #[serde(default)]
    pub image: Option<ImageDemoConfig>,
    #[serde(default)]
    pub bounds: Vec<Bound>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != ExperimentKind::ImageDemo && self.sweep.is_empty() {
            return Err(Error::Config("sweep must not be empty".into()));
        }
        if self.n_test == 0 {
            return Err(Error::Config("n_test must be ≥ 1".into()));
        }
        let integral = matches!(
            self.kind,
            ExperimentKind::Stages | ExperimentKind::WSparsity | ExperimentKind::BSparsity
        );
        for v in &self.sweep {
            if !v.is_finite() && !(self.kind == ExperimentKind::Snr || self.kind == ExperimentKind::Runtime) {
                return Err(Error::Config(format!("sweep value {v} must be finite")));
            }
            if integral && (v.fract() != 0.0 || *v < 0.0) {
                return Err(Error::Config(format!("sweep value {v} must be a non-negative integer")));
            }
        }
        if self.kind == ExperimentKind::ImageDemo && self.image.is_none() {
            return Err(Error::Config("image experiment needs an [image] table".into()));
        }
        self.solver.validate()?;
        self.single_penalty_params.validate()?;
        Ok(())
    }

    /// Scene spec at one sweep point.
    pub fn point_spec(&self, v: f64) -> SceneSpec {
        let mut s = self.scene.clone();
        match self.kind {
            ExperimentKind::Snr | ExperimentKind::Runtime => s.snr_db = v,
            ExperimentKind::Sir => s.sir_db = v,
            ExperimentKind::WSparsity => s.w_nnz = v as usize,
            ExperimentKind::BSparsity => s.b_nnz = v as usize,
            ExperimentKind::Stages | ExperimentKind::ImageDemo => {}
        }
        s
    }

    fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep: f64,
    pub method: String,
    pub nmse_db: Option<f64>,
    pub runtime_ms: Option<f64>,
    /// Mean iterations (ADMM) or stage count (networks).
    pub iters: Option<f64>,
    /// Set when the row carries no measurement (errors, unimplemented methods).
    pub note: Option<String>,
}

impl ResultRow {
    fn measured(sweep: f64, method: &str, nmse_db: f64, runtime_ms: Option<f64>, iters: f64) -> Self {
        Self {
            sweep,
            method: method.into(),
            nmse_db: Some(nmse_db),
            runtime_ms,
            iters: Some(iters),
            note: None,
        }
    }

    fn noted(sweep: f64, method: &str, note: impl Into<String>) -> Self {
        Self {
            sweep,
            method: method.into(),
            nmse_db: None,
            runtime_ms: None,
            iters: None,
            note: Some(note.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSetInfo {
    /// `None` when one test set is shared by every sweep point.
    pub sweep: Option<f64>,
    pub n: usize,
    pub master_seed: u64,
    pub content_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub dict_hash: String,
    pub test_sets: Vec<TestSetInfo>,
    pub threads: usize,
    /// Filled by callers that want wall-clock provenance; left empty by the
    /// library so that identical runs give identical tables.
    #[serde(default)]
    pub generated_at: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub meta: ReportMeta,
    #[serde(default)]
    pub bounds: Vec<BoundOutcome>,
}

impl ResultTable {
    pub fn row(&self, sweep: f64, method: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.sweep == sweep)
    }

    pub fn nmse(&self, sweep: f64, method: &str) -> Option<f64> {
        self.row(sweep, method).and_then(|r| r.nmse_db)
    }

    /// Sweep values in first-appearance order.
    pub fn sweeps(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.sweep) {
                out.push(r.sweep);
            }
        }
        out
    }

    pub fn all_passed(&self) -> bool {
        self.bounds.iter().all(|b| b.passed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const CSV_HEADER: &str = "sweep,method,nmse_db,runtime_ms,iters";

fn cell(v: Option<f64>, note: &Option<String>) -> String {
    match (v, note) {
        (Some(x), _) => x.to_string(),
        (None, Some(n)) => n.replace([',', '\n'], ";"),
        (None, None) => String::new(),
    }
}

/// CSV with the fixed header; rows without a measurement carry their note in
/// the numeric cells.
pub fn write_csv(table: &ResultTable, mut w: impl Write) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in &table.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.sweep,
            r.method,
            cell(r.nmse_db, &r.note),
            cell(r.runtime_ms, &r.note),
            r.iters.map(|v| v.to_string()).unwrap_or_default()
        )?;
    }
    Ok(())
}

/// Writes `table` to `path`. CSV output gets a `<path>.meta.json` sidecar
/// with the configuration, hashes and bound outcomes.
pub fn emit_report(table: &ResultTable, format: ReportFormat, path: &Path) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let f = std::io::BufWriter::new(std::fs::File::create(path)?);
            serde_json::to_writer_pretty(f, table)?;
        }
        ReportFormat::Csv => {
            write_csv(table, std::io::BufWriter::new(std::fs::File::create(path)?))?;
            let mut side = path.as_os_str().to_owned();
            side.push(".meta.json");
            #[derive(Serialize)]
            struct Side<'a> {
                meta: &'a ReportMeta,
                bounds: &'a [BoundOutcome],
            }
            let f = std::io::BufWriter::new(std::fs::File::create(PathBuf::from(side))?);
            serde_json::to_writer_pretty(
                f,
                &Side {
                    meta: &table.meta,
                    bounds: &table.bounds,
                },
            )?;
        }
    }
    Ok(())
}

pub fn read_json_report(path: &Path) -> Result<ResultTable> {
    Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
}

/// Evaluates `bounds` against the rows of `table`.
pub fn check_bounds(table: &ResultTable, bounds: &[Bound]) -> Vec<BoundOutcome> {
    let sweeps = table.sweeps();
    bounds
        .iter()
        .map(|b| {
            let (passed, detail) = check_one(table, &sweeps, b);
            BoundOutcome {
                bound: b.clone(),
                passed,
                detail,
            }
        })
        .collect()
}

fn check_one(t: &ResultTable, sweeps: &[f64], b: &Bound) -> (bool, String) {
    let mut fails = Vec::new();
    let mut seen = 0usize;
    let mut pairwise = |m: &str, base: &str, f: &dyn Fn(f64, f64) -> bool, get: &dyn Fn(&ResultRow) -> Option<f64>| {
        for &s in sweeps {
            let a = t.row(s, m).and_then(get);
            let c = t.row(s, base).and_then(get);
            match (a, c) {
                (Some(a), Some(c)) => {
                    seen += 1;
                    if !f(a, c) {
                        fails.push(format!("{s}: {a:.3} vs {c:.3}"));
                    }
                }
                (None, _) if t.row(s, m).is_none() => {}
                _ => fails.push(format!("{s}: missing value")),
            }
        }
    };
    let nm = |r: &ResultRow| r.nmse_db;
    let rt = |r: &ResultRow| r.runtime_ms;
    match b {
        Bound::Beats {
            method,
            baseline,
            margin_db,
        } => pairwise(method, baseline, &|a, c| a <= c - margin_db, &nm),
        Bound::Near {
            method,
            baseline,
            tol_db,
        } => pairwise(method, baseline, &|a, c| (a - c).abs() <= *tol_db, &nm),
        Bound::AtMost { method, nmse_db } => pairwise(method, method, &|a, _| a <= *nmse_db, &nm),
        Bound::AtLeast { method, nmse_db } => pairwise(method, method, &|a, _| a >= *nmse_db, &nm),
        Bound::RuntimeRatio {
            method,
            baseline,
            min,
            max,
        } => pairwise(
            method,
            baseline,
            &|a, c| {
                let r = a / c;
                min.is_none_or(|m| r >= m) && max.is_none_or(|m| r <= m)
            },
            &rt,
        ),
        Bound::Nonincreasing { method, tol_db } => {
            let vals: Vec<f64> = sweeps.iter().filter_map(|&s| t.nmse(s, method)).collect();
            seen = vals.len();
            for w in vals.windows(2) {
                if w[1] > w[0] + tol_db {
                    fails.push(format!("{:.3} → {:.3}", w[0], w[1]));
                }
            }
        }
        Bound::RuntimeSpread { method, max_rel } => {
            let vals: Vec<f64> = sweeps
                .iter()
                .filter_map(|&s| t.row(s, method).and_then(|r| r.runtime_ms))
                .collect();
            seen = vals.len();
            if let (Some(lo), Some(hi)) = (
                vals.iter().cloned().reduce(f64::min),
                vals.iter().cloned().reduce(f64::max),
            ) {
                let spread = (hi - lo) / lo;
                if spread > *max_rel {
                    fails.push(format!("spread {spread:.3}"));
                }
            }
        }
    }
    if seen == 0 {
        return (false, "no matching rows".into());
    }
    if fails.is_empty() {
        (true, format!("{seen} comparisons ok"))
    } else {
        (false, fails.join("; "))
    }
}

/// Per-sample results of one method on one test set.
#[derive(Clone)]
struct MethodResult {
    nmse_lin: Vec<f64>,
    iters: Vec<usize>,
    seconds: f64,
}

impl MethodResult {
    fn row(&self, sweep: f64, method: &str, timed: bool) -> ResultRow {
        let n = self.nmse_lin.len() as f64;
        ResultRow::measured(
            sweep,
            method,
            lin_to_db(self.nmse_lin.iter().sum::<f64>() / n),
            timed.then(|| self.seconds * 1e3 / n),
            self.iters.iter().sum::<usize>() as f64 / n,
        )
    }
}

/// Two-penalty ADMM on every sample. Sequential when `timed`, so that the
/// reported wall clock is per-sample single-threaded time.
fn run_admm(cache: &AdmmCache, data: &Dataset, params: &SolverParams, stop: &StoppingRule, timed: bool) -> Result<MethodResult> {
    let one = |s: &crate::scene::SceneSample| -> Result<(f64, usize)> {
        let x = s.x();
        let sol = admm_solve(cache, s.y.view(), params, stop, Some(x.view()))?;
        Ok((nmse_linear(sol.x_hat.view(), x.view())?, sol.iters))
    };
    let t0 = Instant::now();
    let res: Vec<(f64, usize)> = if timed {
        data.samples.iter().map(one).collect::<Result<_>>()?
    } else {
        data.samples.par_iter().map(one).collect::<Result<_>>()?
    };
    let seconds = t0.elapsed().as_secs_f64();
    Ok(MethodResult {
        nmse_lin: res.iter().map(|r| r.0).collect(),
        iters: res.iter().map(|r| r.1).collect(),
        seconds,
    })
}

/// Single-penalty ADMM on `Φ`; the interference estimate is zero and the
/// error is measured on the full `x = [w; b]`.
fn run_single(cache: &AdmmCache, data: &Dataset, params: &SolverParams, stop: &StoppingRule) -> Result<MethodResult> {
    let res: Vec<(f64, usize)> = data
        .samples
        .par_iter()
        .map(|s| {
            let sol = admm_solve_single_penalty(cache, s.y.view(), params, stop, Some(s.w.view()))?;
            let x_hat = pad_image(&sol.x_hat, s.b.len());
            Ok((nmse_linear(x_hat.view(), s.x().view())?, sol.iters))
        })
        .collect::<Result<_>>()?;
    Ok(MethodResult {
        nmse_lin: res.iter().map(|r| r.0).collect(),
        iters: res.iter().map(|r| r.1).collect(),
        seconds: 0.0,
    })
}

fn pad_image(w: &Array1<Complex64>, d: usize) -> Array1<Complex64> {
    let mut x = Array1::zeros(w.len() + d);
    x.slice_mut(ndarray::s![..w.len()]).assign(w);
    x
}

fn run_net(net: &Network, data: &Dataset, timed: bool) -> Result<MethodResult> {
    let t0 = Instant::now();
    let outs: Vec<Array1<Complex64>> = if timed {
        data.samples.iter().map(|s| net.infer(s.y.view())).collect::<Result<_>>()?
    } else {
        let idx: Vec<usize> = (0..data.len()).collect();
        let out = net.infer_batch(data.stacked_measurements(&idx).view())?;
        (0..data.len())
            .map(|b| crate::stacking::unstack(out.column(b)))
            .collect::<Result<_>>()?
    };
    let seconds = t0.elapsed().as_secs_f64();
    let nmse_lin = outs
        .iter()
        .zip(&data.samples)
        .map(|(o, s)| nmse_linear(o.view(), s.x().view()))
        .collect::<Result<_>>()?;
    Ok(MethodResult {
        nmse_lin,
        iters: vec![net.n_stages(); data.len()],
        seconds,
    })
}

/// Everything `run_experiment` needs that is not in the config file.
pub struct Context<'a> {
    pub dict: &'a Dictionary,
    /// Directory that relative network paths are resolved against.
    pub base_dir: PathBuf,
}

fn test_set(cfg: &ExperimentConfig, dict: &Dictionary, point: usize, v: f64) -> Result<Dataset> {
    generate_dataset(dict, &cfg.point_spec(v), cfg.n_test, sample_seed(cfg.seed, point as u64))
}

fn base_meta(cfg: &ExperimentConfig, dict: &Dictionary) -> ReportMeta {
    ReportMeta {
        kind: cfg.kind,
        config: cfg.clone(),
        config_hash: io::json_hash(cfg),
        dict_hash: dict.hash().to_string(),
        test_sets: Vec::new(),
        threads: rayon::current_num_threads(),
        generated_at: None,
    }
}

struct NetCache {
    loaded: HashMap<PathBuf, std::result::Result<Network, String>>,
}

impl NetCache {
    fn get(&mut self, path: &Path, dict: &Dictionary) -> std::result::Result<&Network, String> {
        self.loaded
            .entry(path.to_path_buf())
            .or_insert_with(|| {
                Network::load(path)
                    .and_then(|n| n.check_dictionary(dict).map(|_| n))
                    .map_err(|e| format!("error: {}: {e}", path.display()))
            })
            .as_ref()
            .map_err(|e| e.clone())
    }
}

/// Runs a sweep experiment (every kind except the image demo). Networks that
/// fail to load produce an error row and the run continues.
pub fn run_experiment(cfg: &ExperimentConfig, ctx: &Context) -> Result<ResultTable> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::ImageDemo => {
            let demo = image_demo(cfg, ctx)?;
            return Ok(demo.table);
        }
        ExperimentKind::Runtime => return time_methods(cfg, ctx),
        _ => {}
    }
    let dict = ctx.dict;
    let cache = AdmmCache::two_penalty(dict, cfg.solver.rho)?;
    let single = if cfg.single_penalty {
        Some(AdmmCache::single_penalty(dict, cfg.single_penalty_params.rho)?)
    } else {
        None
    };
    let mut nets = NetCache {
        loaded: HashMap::new(),
    };
    let mut meta = base_meta(cfg, dict);
    let mut rows = Vec::new();
    let converged = StoppingRule {
        max_iters: cfg.max_iters,
        ..StoppingRule::oracle()
    };
    // the stage sweep shares one test set across K
    let shared = if cfg.kind == ExperimentKind::Stages {
        Some(test_set(cfg, dict, 0, 0.0)?)
    } else {
        None
    };

    for (i, &v) in cfg.sweep.iter().enumerate() {
        let owned;
        let data = match &shared {
            Some(d) => d,
            None => {
                owned = test_set(cfg, dict, i, v)?;
                &owned
            }
        };
        if shared.is_none() || i == 0 {
            meta.test_sets.push(TestSetInfo {
                sweep: shared.is_none().then_some(v),
                n: data.len(),
                master_seed: data.master_seed,
                content_hash: data.content_hash(),
            });
        }
        if cfg.kind == ExperimentKind::Stages {
            let k = v as usize;
            let r = run_admm(&cache, data, &cfg.solver, &StoppingRule::fixed(k.max(1)), false)?;
            rows.push(r.row(v, "admm", false));
        } else {
            let r = run_admm(&cache, data, &cfg.solver, &converged, false)?;
            rows.push(r.row(v, "admm", false));
            if let Some(c) = &single {
                let r = run_single(c, data, &cfg.single_penalty_params, &converged)?;
                rows.push(r.row(v, "admm_single_penalty", false));
            }
        }
        for nr in &cfg.nets {
            if nr.sweep.is_some_and(|s| s != v) {
                continue;
            }
            let path = cfg.resolve(&ctx.base_dir, &nr.path);
            match nets.get(&path, dict) {
                Ok(net) => rows.push(run_net(net, data, false)?.row(v, &nr.label, false)),
                Err(e) => rows.push(ResultRow::noted(v, &nr.label, e)),
            }
        }
        if cfg.kind != ExperimentKind::Stages {
            rows.push(ResultRow::noted(v, "cvx", "not implemented"));
        }
    }
    let mut table = ResultTable {
        rows,
        meta,
        bounds: Vec::new(),
    };
    table.bounds = check_bounds(&table, &cfg.bounds);
    Ok(table)
}

/// Mean single-threaded wall clock per sample for each network, converged
/// ADMM and fixed-K ADMM, over an SNR sweep. A warm-up pass precedes timing.
/// Networks and fixed-K ADMM are timed in `timing_rounds` interleaved rounds
/// and report the median, so slow drift of the machine hits all of them
/// alike; converged ADMM is timed once.
pub fn time_methods(cfg: &ExperimentConfig, ctx: &Context) -> Result<ResultTable> {
    let dict = ctx.dict;
    let cache = AdmmCache::two_penalty(dict, cfg.solver.rho)?;
    let mut nets = NetCache {
        loaded: HashMap::new(),
    };
    let mut meta = base_meta(cfg, dict);
    meta.threads = 1;
    let mut rows = Vec::new();
    let converged = StoppingRule {
        max_iters: cfg.max_iters,
        ..StoppingRule::oracle()
    };
    let rounds = cfg.timing_rounds.max(1);
    for (i, &v) in cfg.sweep.iter().enumerate() {
        let data = test_set(cfg, dict, i, v)?;
        meta.test_sets.push(TestSetInfo {
            sweep: Some(v),
            n: data.len(),
            master_seed: data.master_seed,
            content_hash: data.content_hash(),
        });
        let warm = Dataset {
            samples: data.samples.iter().take(20).cloned().collect(),
            ..data.clone()
        };
        let mut net_rows = Vec::new();
        let mut loaded = Vec::new();
        for nr in &cfg.nets {
            if nr.sweep.is_some_and(|s| s != v) {
                continue;
            }
            let path = cfg.resolve(&ctx.base_dir, &nr.path);
            match nets.get(&path, dict) {
                Ok(net) => {
                    net_rows.push(None);
                    loaded.push((net_rows.len() - 1, nr.label.clone(), net.clone()));
                }
                Err(e) => net_rows.push(Some(ResultRow::noted(v, &nr.label, e))),
            }
        }
        let fixed: Vec<StoppingRule> = cfg.fixed_iters.iter().map(|&k| StoppingRule::fixed(k.max(1))).collect();
        for (_, _, net) in &loaded {
            run_net(net, &warm, true)?;
        }
        for stop in &fixed {
            run_admm(&cache, &warm, &cfg.solver, stop, true)?;
        }
        let mut net_runs: Vec<Vec<MethodResult>> = vec![Vec::new(); loaded.len()];
        let mut fixed_runs: Vec<Vec<MethodResult>> = vec![Vec::new(); fixed.len()];
        for _ in 0..rounds {
            for ((_, _, net), runs) in loaded.iter().zip(&mut net_runs) {
                runs.push(run_net(net, &data, true)?);
            }
            for (stop, runs) in fixed.iter().zip(&mut fixed_runs) {
                runs.push(run_admm(&cache, &data, &cfg.solver, stop, true)?);
            }
        }
        for ((slot, label, _), runs) in loaded.iter().zip(net_runs) {
            net_rows[*slot] = Some(median_run(runs).row(v, label, true));
        }
        rows.extend(net_rows.into_iter().flatten());
        run_admm(&cache, &warm, &cfg.solver, &converged, true)?;
        rows.push(run_admm(&cache, &data, &cfg.solver, &converged, true)?.row(v, "admm", true));
        for (k, runs) in cfg.fixed_iters.iter().zip(fixed_runs) {
            rows.push(median_run(runs).row(v, &format!("admm_fixed_{k}"), true));
        }
        rows.push(ResultRow::noted(v, "cvx", "not implemented"));
    }
    let mut table = ResultTable {
        rows,
        meta,
        bounds: Vec::new(),
    };
    table.bounds = check_bounds(&table, &cfg.bounds);
    Ok(table)
}

/// The run with the median wall clock (upper median for even counts).
fn median_run(mut runs: Vec<MethodResult>) -> MethodResult {
    runs.sort_by(|a, b| a.seconds.total_cmp(&b.seconds));
    runs.swap_remove(runs.len() / 2)
}

fn default_magnitudes() -> [f64; 2] {
    [2.4, 0.3]
}

fn default_realizations() -> usize {
    200
}

/// Two scatterers at adjacent delay grid points sharing velocity and angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDemoConfig {
    #[serde(default = "default_magnitudes")]
    pub magnitudes: [f64; 2],
    /// Delay index of the first scatterer; the second sits at the next index.
    pub tau_index: usize,
    pub vel_index: usize,
    pub theta1_index: usize,
    pub theta2_index: usize,
    #[serde(with = "db_value")]
    pub snr_db: f64,
    #[serde(with = "db_value")]
    pub sir_db: f64,
    pub b_nnz: usize,
    /// Scenes (random phases, interference and noise) averaged into the NMSE.
    #[serde(default = "default_realizations")]
    pub n_realizations: usize,
    /// Network evaluated next to the two ADMM variants.
    #[serde(default)]
    pub net: Option<PathBuf>,
}

/// One method's delay × velocity slice at the scatterers' angles (first
/// realization), row-major with delay fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSlice {
    pub method: String,
    pub n_tau: usize,
    pub n_vel: usize,
    pub values: Vec<Complex64>,
}

impl ImageSlice {
    fn extract(method: &str, dict: &Dictionary, w: ArrayView1<Complex64>, t1: usize, t2: usize) -> Self {
        let g = dict.grid();
        let (n_tau, n_vel) = (g.taus.len(), g.vels.len());
        let mut values = Vec::with_capacity(n_tau * n_vel);
        for iv in 0..n_vel {
            for it in 0..n_tau {
                values.push(w[g.column(it, iv, t1, t2)]);
            }
        }
        Self {
            method: method.into(),
            n_tau,
            n_vel,
            values,
        }
    }

    pub fn at(&self, i_tau: usize, i_vel: usize) -> Complex64 {
        self.values[i_vel * self.n_tau + i_tau]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageDemoResult {
    pub table: ResultTable,
    /// Ground truth first, then one slice per method.
    pub slices: Vec<ImageSlice>,
}

/// Scene generator for the demo: random phases on the fixed magnitudes,
/// interference and noise calibrated against the actual signal power.
pub fn image_demo_scene(dict: &Dictionary, demo: &ImageDemoConfig, seed: u64) -> Result<crate::scene::SceneSample> {
    let g = dict.grid();
    if demo.tau_index + 1 >= g.taus.len()
        || demo.vel_index >= g.vels.len()
        || demo.theta1_index >= g.theta1s.len()
        || demo.theta2_index >= g.theta2s.len()
    {
        return Err(domain("image demo indices fall outside the grid"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Array1::<Complex64>::zeros(dict.n_atoms());
    for (j, &mag) in demo.magnitudes.iter().enumerate() {
        let col = g.column(demo.tau_index + j, demo.vel_index, demo.theta1_index, demo.theta2_index);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        w[col] = Complex64::from_polar(mag, phase);
    }
    let power: f64 = demo.magnitudes.iter().map(|m| m * m).sum();
    let support = interference_support(demo.b_nnz, dict.config(), &mut rng)?;
    let beta = calibrate_interference(demo.sir_db, power, demo.b_nnz as f64)?;
    let sigma2 = calibrate_noise(demo.snr_db, power, dict.n_meas());
    let (b, y) = complete_measurement(dict, &w, &support, beta, sigma2, &mut rng);
    Ok(crate::scene::SceneSample {
        w,
        b,
        y,
        e_sigma2: sigma2,
        beta,
        snr_db: demo.snr_db,
        sir_db: demo.sir_db,
        seed,
    })
}

/// Recovers the two-scatterer scene with two-penalty ADMM, single-penalty
/// ADMM and (if configured) a network; reports total-x NMSE averaged over
/// the realizations and the image slices of the first realization.
pub fn image_demo(cfg: &ExperimentConfig, ctx: &Context) -> Result<ImageDemoResult> {
    let demo = cfg
        .image
        .as_ref()
        .ok_or_else(|| Error::Config("image experiment needs an [image] table".into()))?;
    let dict = ctx.dict;
    let samples: Vec<_> = (0..demo.n_realizations.max(1) as u64)
        .map(|i| image_demo_scene(dict, demo, sample_seed(cfg.seed, i)))
        .collect::<Result<_>>()?;
    let data = Dataset {
        samples,
        spec: cfg.scene.clone(),
        master_seed: cfg.seed,
        dict_hash: dict.hash().to_string(),
    };
    let converged = StoppingRule {
        max_iters: cfg.max_iters,
        ..StoppingRule::oracle()
    };
    let (t1, t2) = (demo.theta1_index, demo.theta2_index);
    let first = &data.samples[0];
    let mut slices = vec![ImageSlice::extract("truth", dict, first.w.view(), t1, t2)];
    let mut rows = Vec::new();

    let cache = AdmmCache::two_penalty(dict, cfg.solver.rho)?;
    rows.push(run_admm(&cache, &data, &cfg.solver, &converged, false)?.row(0.0, "admm", false));
    let sol = admm_solve(&cache, first.y.view(), &cfg.solver, &converged, Some(first.x().view()))?;
    slices.push(ImageSlice::extract("admm", dict, sol.x_hat.view(), t1, t2));

    let sp = &cfg.single_penalty_params;
    let scache = AdmmCache::single_penalty(dict, sp.rho)?;
    rows.push(run_single(&scache, &data, sp, &converged)?.row(0.0, "admm_single_penalty", false));
    let sol = admm_solve_single_penalty(&scache, first.y.view(), sp, &converged, Some(first.w.view()))?;
    slices.push(ImageSlice::extract("admm_single_penalty", dict, sol.x_hat.view(), t1, t2));

    if let Some(p) = &demo.net {
        let path = cfg.resolve(&ctx.base_dir, p);
        let mut nets = NetCache {
            loaded: HashMap::new(),
        };
        match nets.get(&path, dict) {
            Ok(net) => {
                rows.push(run_net(net, &data, false)?.row(0.0, "net", false));
                let out = net.infer(first.y.view())?;
                slices.push(ImageSlice::extract("net", dict, out.view(), t1, t2));
            }
            Err(e) => rows.push(ResultRow::noted(0.0, "net", e)),
        }
    }
    rows.push(ResultRow::noted(0.0, "cvx", "not implemented"));

    let mut meta = base_meta(cfg, dict);
    meta.test_sets.push(TestSetInfo {
        sweep: None,
        n: data.len(),
        master_seed: cfg.seed,
        content_hash: data.content_hash(),
    });
    let mut table = ResultTable {
        rows,
        meta,
        bounds: Vec::new(),
    };
    table.bounds = check_bounds(&table, &cfg.bounds);
    Ok(ImageDemoResult { table, slices })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: Vec<ResultRow>) -> ResultTable {
        let cfg = ExperimentConfig::from_toml(
            "kind = \"snr\"\nsweep = [5.0]\n[scene]\nw_nnz = 2\nb_nnz = 16\nsnr_db = 15.0\nsir_db = 0.0\n",
        )
        .unwrap();
        let dict = Dictionary::standard();
        ResultTable {
            rows,
            meta: base_meta(&cfg, &dict),
            bounds: Vec::new(),
        }
    }

    #[test]
    fn csv_header_and_notes() {
        let t = table(vec![
            ResultRow::measured(5.0, "admm", -20.5, None, 190.0),
            ResultRow::noted(5.0, "cvx", "not implemented"),
        ]);
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "5,admm,-20.5,,190");
        assert_eq!(lines[2], "5,cvx,not implemented,not implemented,");
    }

    #[test]
    fn json_roundtrip_is_identity() {
        let t = table(vec![ResultRow::measured(5.0, "net", -22.25, Some(0.4), 5.0)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        emit_report(&t, ReportFormat::Json, &p).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back = read_json_report(&p).unwrap();
        assert_eq!(back, t);
        emit_report(&back, ReportFormat::Json, &p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn bounds_evaluate() {
        let t = table(vec![
            ResultRow::measured(5.0, "admm", -10.0, Some(10.0), 200.0),
            ResultRow::measured(5.0, "net", -12.5, Some(0.2), 5.0),
            ResultRow::measured(10.0, "admm", -15.0, Some(11.0), 200.0),
            ResultRow::measured(10.0, "net", -15.5, Some(0.21), 5.0),
        ]);
        let out = check_bounds(
            &t,
            &[
                Bound::Beats {
                    method: "net".into(),
                    baseline: "admm".into(),
                    margin_db: 1.0,
                },
                Bound::Nonincreasing {
                    method: "net".into(),
                    tol_db: 0.5,
                },
                Bound::RuntimeRatio {
                    method: "net".into(),
                    baseline: "admm".into(),
                    min: None,
                    max: Some(0.05),
                },
                Bound::RuntimeSpread {
                    method: "net".into(),
                    max_rel: 0.1,
                },
                Bound::AtMost {
                    method: "missing".into(),
                    nmse_db: 0.0,
                },
            ],
        );
        let passed: Vec<bool> = out.iter().map(|o| o.passed).collect();
        assert_eq!(passed, [false, true, true, true, false]);
    }

    #[test]
    fn median_run_picks_middle_time() {
        let run = |s: f64| MethodResult {
            nmse_lin: vec![s],
            iters: vec![1],
            seconds: s,
        };
        let m = median_run(vec![run(5.0), run(1.0), run(3.0), run(100.0), run(2.0)]);
        assert_eq!(m.seconds, 3.0);
        assert_eq!(median_run(vec![run(4.0), run(2.0)]).seconds, 4.0);
    }

    #[test]
    fn experiment_kinds_parse() {
        assert_eq!(ExperimentKind::parse("sparsity-w").unwrap(), ExperimentKind::WSparsity);
        assert_eq!(ExperimentKind::parse("time").unwrap(), ExperimentKind::Runtime);
        assert!(ExperimentKind::parse("bogus").is_err());
    }

    #[test]
    fn empty_sweep_rejected() {
        let r = ExperimentConfig::from_toml(
            "kind = \"sir\"\nsweep = []\n[scene]\nw_nnz = 2\nb_nnz = 16\nsnr_db = 15.0\nsir_db = 0.0\n",
        );
        assert!(r.is_err());
    }

    #[test]
    fn demo_scene_has_calibrated_power() {
        let dict = Dictionary::standard();
        let demo = ImageDemoConfig {
            magnitudes: [2.4, 0.3],
            tau_index: 1,
            vel_index: 2,
            theta1_index: 1,
            theta2_index: 0,
            snr_db: f64::INFINITY,
            sir_db: 0.0,
            b_nnz: 16,
            n_realizations: 1,
            net: None,
        };
        let s = image_demo_scene(&dict, &demo, 4).unwrap();
        assert_eq!(s.w_nnz(), 2);
        assert!((s.beta - 5.85 / 16.0).abs() < 1e-12);
        let mags: Vec<f64> = s.w.iter().filter(|c| c.norm() > 0.0).map(|c| c.norm()).collect();
        assert!((mags[0] - 2.4).abs() < 1e-12 && (mags[1] - 0.3).abs() < 1e-12);
        let bad = ImageDemoConfig {
            tau_index: 4,
            ..demo
        };
        assert!(image_demo_scene(&dict, &bad, 4).is_err());
    }
}
