//! The unfolded network: K stages of ADMM with per-stage learnable
//! `{M1, M2, α, η, λ₁, λ₂}`, computed in real-stacked coordinates.
//!
//! Stage k maps `(z̃, ũ)` to
//!
//! ```text
//! x̃ = M1·g(y) + M2·(z̃ − ũ)
//! ξ̃ = α x̃ + (1 − α) z̃
//! z̃ = g(S_λ(g⁻¹(ξ̃ + ũ)))     λ₁ on the image, λ₂ on the interference
//! ũ = ũ + η (ξ̃ − z̃)
//! ```
//!
//! and the output is `g⁻¹(z̃ᴷ)`. Initialized with `M1 = g(P·Aᴴ)`,
//! `M2 = g(ρP)` and thresholds `λ/ρ`, the network computes exactly K ADMM
//! iterations.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::admm::{AdmmCache, SolverParams};
use crate::error::{dim, domain, Error, Result};
use crate::io;
use crate::radar::Dictionary;
use crate::stacking::{stack, stack_matrix, unstack};

const FORMAT_VERSION: u32 = 1;

/// Learnable parameters of one stage. The thresholds are the effective
/// shrinkage amounts (ADMM's `λ/ρ`) and are clamped at zero when used.
#[derive(Clone, Debug, PartialEq)]
pub struct StageParams {
    /// 2P × 2D.
    pub m1: Array2<f64>,
    /// 2P × 2P.
    pub m2: Array2<f64>,
    pub alpha: f64,
    pub eta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl StageParams {
    pub fn zeros_like(other: &StageParams) -> Self {
        Self {
            m1: Array2::zeros(other.m1.dim()),
            m2: Array2::zeros(other.m2.dim()),
            alpha: 0.0,
            eta: 0.0,
            lambda1: 0.0,
            lambda2: 0.0,
        }
    }

    pub fn scalars(&self) -> [f64; 4] {
        [self.alpha, self.eta, self.lambda1, self.lambda2]
    }

    pub fn scalars_mut(&mut self) -> [&mut f64; 4] {
        [&mut self.alpha, &mut self.eta, &mut self.lambda1, &mut self.lambda2]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dict_hash: String,
    /// Hash of the stage count and solver parameters used at initialization.
    pub init_hash: String,
    pub init_params: Option<SolverParams>,
    /// Free-form training metadata (config, dataset hash, final loss).
    #[serde(default)]
    pub training: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub stages: Vec<StageParams>,
    n_meas: usize,
    n_unknowns: usize,
    split: usize,
    pub provenance: Provenance,
}

/// Per-stage intermediate values of one forward pass, in stacked coordinates.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub x: Vec<Array1<f64>>,
    pub xi: Vec<Array1<f64>>,
    pub z: Vec<Array1<f64>>,
    pub u: Vec<Array1<f64>>,
    pub output: Array1<Complex64>,
}

/// Batched counterpart of [`ForwardTrace`]: one column per sample.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    pub x: Vec<Array2<f64>>,
    pub xi: Vec<Array2<f64>>,
    pub z: Vec<Array2<f64>>,
    pub u: Vec<Array2<f64>>,
}

impl BatchTrace {
    /// Final stacked estimates, 2P × B.
    pub fn output(&self) -> &Array2<f64> {
        self.z.last().expect("at least one stage")
    }
}

/// `K` identical stages reproducing K iterations of ADMM with `params`.
pub fn init_network(k: usize, dict: &Dictionary, params: &SolverParams) -> Result<Network> {
    params.validate()?;
    let cache = AdmmCache::two_penalty(dict, params.rho)?;
    let mut net = init_from_cache(k, &cache, params)?;
    net.provenance.dict_hash = dict.hash().to_string();
    Ok(net)
}

/// As [`init_network`] for an arbitrary `A` (any [`AdmmCache`]).
pub fn init_from_cache(k: usize, cache: &AdmmCache, params: &SolverParams) -> Result<Network> {
    if k == 0 {
        return Err(domain("a network needs at least one stage"));
    }
    if params.rho != cache.rho() {
        return Err(domain("params and cache disagree on rho"));
    }
    let rho = params.rho;
    let stage = StageParams {
        m1: stack_matrix(cache.p_ah().view()),
        m2: stack_matrix(cache.p_mat().mapv(|c| c * rho).view()),
        alpha: params.alpha,
        eta: params.eta,
        lambda1: params.lambda1 / rho,
        lambda2: params.lambda2 / rho,
    };
    #[derive(Serialize)]
    struct InitKey<'a> {
        k: usize,
        params: &'a SolverParams,
        n_meas: usize,
        n_unknowns: usize,
    }
    let init_hash = io::json_hash(&InitKey {
        k,
        params,
        n_meas: cache.n_meas(),
        n_unknowns: cache.n_unknowns(),
    });
    Ok(Network {
        stages: vec![stage; k],
        n_meas: cache.n_meas(),
        n_unknowns: cache.n_unknowns(),
        split: cache.split(),
        provenance: Provenance {
            dict_hash: String::new(),
            init_hash,
            init_params: Some(*params),
            training: None,
        },
    })
}

/// Stacked soft threshold: coordinate `i` pairs rows `i` and `P + i`.
/// Rows before `split` use `k1`, the rest `k2`.
pub(crate) fn shrink_stacked(a: ArrayView2<f64>, split: usize, k1: f64, k2: f64) -> Array2<f64> {
    let p = a.nrows() / 2;
    let mut out = Array2::zeros(a.raw_dim());
    for i in 0..p {
        let kappa = if i < split { k1 } else { k2 };
        for b in 0..a.ncols() {
            let re = a[[i, b]];
            let im = a[[p + i, b]];
            let m = re.hypot(im);
            if m > kappa {
                let f = (m - kappa) / m;
                out[[i, b]] = f * re;
                out[[p + i, b]] = f * im;
            } else if m.is_nan() {
                out[[i, b]] = f64::NAN;
                out[[p + i, b]] = f64::NAN;
            }
        }
    }
    out
}

impl Network {
    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// Measurement dimension D.
    pub fn n_meas(&self) -> usize {
        self.n_meas
    }

    /// Unknowns P = M + D.
    pub fn n_unknowns(&self) -> usize {
        self.n_unknowns
    }

    /// Number of image coordinates M (thresholded by λ₁).
    pub fn split(&self) -> usize {
        self.split
    }

    pub fn n_params(&self) -> usize {
        self.stages.iter().map(|s| s.m1.len() + s.m2.len() + 4).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(domain("a network needs at least one stage"));
        }
        let (p2, d2) = (2 * self.n_unknowns, 2 * self.n_meas);
        for (k, s) in self.stages.iter().enumerate() {
            if s.m1.dim() != (p2, d2) || s.m2.dim() != (p2, p2) {
                return Err(dim(format!(
                    "stage {k}: M1 {:?}, M2 {:?}, expected ({p2}, {d2}) and ({p2}, {p2})",
                    s.m1.dim(),
                    s.m2.dim()
                )));
            }
        }
        Ok(())
    }

    fn check_batch(&self, y: ArrayView2<f64>) -> Result<()> {
        if y.nrows() != 2 * self.n_meas {
            return Err(dim(format!(
                "stacked measurements have {} rows, expected {}",
                y.nrows(),
                2 * self.n_meas
            )));
        }
        Ok(())
    }

    /// Runs all stages on stacked measurements (2D × B), keeping every
    /// intermediate for the backward pass.
    pub fn forward_batch(&self, y: ArrayView2<f64>) -> Result<BatchTrace> {
        self.check_batch(y)?;
        let k = self.n_stages();
        let mut tr = BatchTrace {
            x: Vec::with_capacity(k),
            xi: Vec::with_capacity(k),
            z: Vec::with_capacity(k),
            u: Vec::with_capacity(k),
        };
        let zero = Array2::zeros((2 * self.n_unknowns, y.ncols()));
        for (i, st) in self.stages.iter().enumerate() {
            let (z_prev, u_prev) = if i == 0 {
                (&zero, &zero)
            } else {
                (&tr.z[i - 1], &tr.u[i - 1])
            };
            let (x, xi, z, u) = self.stage_batch(st, y, z_prev, u_prev);
            tr.x.push(x);
            tr.xi.push(xi);
            tr.z.push(z);
            tr.u.push(u);
        }
        Ok(tr)
    }

    fn stage_batch(
        &self,
        st: &StageParams,
        y: ArrayView2<f64>,
        z_prev: &Array2<f64>,
        u_prev: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
        let v = z_prev - u_prev;
        let mut x = st.m1.dot(&y);
        ndarray::linalg::general_mat_mul(1.0, &st.m2, &v, 1.0, &mut x);
        let a = st.alpha;
        let mut xi = Array2::zeros(x.raw_dim());
        Zip::from(&mut xi)
            .and(&x)
            .and(z_prev)
            .for_each(|o, &x, &z| *o = a * x + (1.0 - a) * z);
        let pre = &xi + u_prev;
        let z = shrink_stacked(pre.view(), self.split, st.lambda1.max(0.0), st.lambda2.max(0.0));
        let mut u = u_prev.clone();
        let e = st.eta;
        Zip::from(&mut u)
            .and(&xi)
            .and(&z)
            .for_each(|o, &xi, &z| *o += e * (xi - z));
        (x, xi, z, u)
    }

    /// Final stacked estimates only (2P × B), in chunks to bound memory.
    pub fn infer_batch(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(y)?;
        let mut out = Array2::zeros((2 * self.n_unknowns, y.ncols()));
        let chunk = 256;
        for (c, yc) in y.axis_chunks_iter(Axis(1), chunk).enumerate() {
            let mut z = Array2::zeros((2 * self.n_unknowns, yc.ncols()));
            let mut u = Array2::zeros(z.raw_dim());
            for st in &self.stages {
                let (_, _, zn, un) = self.stage_batch(st, yc, &z, &u);
                z = zn;
                u = un;
            }
            out.slice_mut(s![.., c * chunk..c * chunk + yc.ncols()]).assign(&z);
        }
        Ok(out)
    }

    /// Forward pass for one complex measurement, with the per-stage trace.
    pub fn forward(&self, y: ArrayView1<Complex64>) -> Result<ForwardTrace> {
        if y.len() != self.n_meas {
            return Err(dim(format!("measurement has length {}, expected {}", y.len(), self.n_meas)));
        }
        let yc = stack(y).insert_axis(Axis(1));
        let tr = self.forward_batch(yc.view())?;
        let col = |v: Vec<Array2<f64>>| v.into_iter().map(|m| m.column(0).to_owned()).collect::<Vec<_>>();
        let output = unstack(tr.output().column(0))?;
        Ok(ForwardTrace {
            x: col(tr.x),
            xi: col(tr.xi),
            z: col(tr.z),
            u: col(tr.u),
            output,
        })
    }

    /// Single-sample inference without a trace: the latency-critical path.
    pub fn infer(&self, y: ArrayView1<Complex64>) -> Result<Array1<Complex64>> {
        if y.len() != self.n_meas {
            return Err(dim(format!("measurement has length {}, expected {}", y.len(), self.n_meas)));
        }
        let n = 2 * self.n_unknowns;
        let p = self.n_unknowns;
        let yg = stack(y);
        let mut z = Array1::<f64>::zeros(n);
        let mut u = Array1::<f64>::zeros(n);
        let mut v = Array1::<f64>::zeros(n);
        let mut x = Array1::<f64>::zeros(n);
        for st in &self.stages {
            Zip::from(&mut v).and(&z).and(&u).for_each(|v, &z, &u| *v = z - u);
            ndarray::linalg::general_mat_vec_mul(1.0, &st.m1, &yg, 0.0, &mut x);
            ndarray::linalg::general_mat_vec_mul(1.0, &st.m2, &v, 1.0, &mut x);
            let (a, e) = (st.alpha, st.eta);
            let (k1, k2) = (st.lambda1.max(0.0), st.lambda2.max(0.0));
            for i in 0..p {
                let kappa = if i < self.split { k1 } else { k2 };
                let xr = a * x[i] + (1.0 - a) * z[i];
                let xm = a * x[p + i] + (1.0 - a) * z[p + i];
                let re = xr + u[i];
                let im = xm + u[p + i];
                let m = re.hypot(im);
                let (zr, zm) = if m > kappa {
                    let f = (m - kappa) / m;
                    (f * re, f * im)
                } else if m.is_nan() {
                    (f64::NAN, f64::NAN)
                } else {
                    (0.0, 0.0)
                };
                z[i] = zr;
                z[p + i] = zm;
                u[i] += e * (xr - zr);
                u[p + i] += e * (xm - zm);
            }
        }
        unstack(z.view())
    }

    /// Writes the matrices (per stage: M1 then M2, row-major little-endian
    /// f64) and a JSON sidecar with dimensions, scalars and provenance.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut blob = Vec::with_capacity(self.n_params() * 8);
        for st in &self.stages {
            for v in st.m1.iter().chain(st.m2.iter()) {
                io::push_f64(&mut blob, *v);
            }
        }
        let meta = CheckpointMeta {
            format_version: FORMAT_VERSION,
            layout: "per stage: M1 (2P x 2D) then M2 (2P x 2P), row-major, little-endian f64".into(),
            n_stages: self.n_stages(),
            n_meas: self.n_meas,
            n_unknowns: self.n_unknowns,
            split: self.split,
            stages: self
                .stages
                .iter()
                .map(|s| StageScalars {
                    alpha: s.alpha,
                    eta: s.eta,
                    lambda1: s.lambda1,
                    lambda2: s.lambda2,
                })
                .collect(),
            provenance: self.provenance.clone(),
            content_hash: io::sha256_hex(&blob),
        };
        io::write_pair(path, &blob, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (blob, meta): (Vec<u8>, CheckpointMeta) = io::read_pair(path)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint format version {}",
                meta.format_version
            )));
        }
        if io::sha256_hex(&blob) != meta.content_hash {
            return Err(Error::Format("checkpoint blob hash mismatch".into()));
        }
        if meta.stages.len() != meta.n_stages {
            return Err(Error::Format("stage count mismatch".into()));
        }
        let (p2, d2) = (2 * meta.n_unknowns, 2 * meta.n_meas);
        let mut r = io::BlobReader::new(&blob);
        let mut stages = Vec::with_capacity(meta.n_stages);
        for sc in &meta.stages {
            let m1 = Array2::from_shape_vec((p2, d2), r.f64s(p2 * d2)?).map_err(|e| Error::Format(e.to_string()))?;
            let m2 = Array2::from_shape_vec((p2, p2), r.f64s(p2 * p2)?).map_err(|e| Error::Format(e.to_string()))?;
            stages.push(StageParams {
                m1,
                m2,
                alpha: sc.alpha,
                eta: sc.eta,
                lambda1: sc.lambda1,
                lambda2: sc.lambda2,
            });
        }
        r.finish()?;
        let net = Self {
            stages,
            n_meas: meta.n_meas,
            n_unknowns: meta.n_unknowns,
            split: meta.split,
            provenance: meta.provenance,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn check_dictionary(&self, dict: &Dictionary) -> Result<()> {
        if self.n_meas != dict.n_meas() || self.n_unknowns != dict.n_unknowns() || self.split != dict.n_atoms() {
            return Err(dim("network dimensions do not match the dictionary"));
        }
        if !self.provenance.dict_hash.is_empty() && self.provenance.dict_hash != dict.hash() {
            return Err(Error::Format("network was initialized from a different dictionary".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct StageScalars {
    alpha: f64,
    eta: f64,
    lambda1: f64,
    lambda2: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format_version: u32,
    layout: String,
    n_stages: usize,
    n_meas: usize,
    n_unknowns: usize,
    split: usize,
    stages: Vec<StageScalars>,
    provenance: Provenance,
    content_hash: String,
}

/// Input of the `train` command's `--net-init`: setup, stage count and
/// the ADMM parameters the stages start from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetInitConfig {
    #[serde(default)]
    pub setup: crate::radar::Setup,
    pub stages: usize,
    #[serde(default)]
    pub solver: SolverParams,
}

impl NetInitConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.setup.radar.validate()?;
        c.solver.validate()?;
        if c.stages == 0 {
            return Err(Error::Config("stages must be ≥ 1".into()));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn build(&self, dict: &Dictionary) -> Result<Network> {
        init_network(self.stages, dict, &self.solver)
    }
}
