//! Relaxed two-penalty complex ADMM for
//! `min_x ½‖y − A x‖² + λ₁‖x₁‖₁ + λ₂‖x₂‖₁`, where `x₁` is the first `split`
//! coordinates (the image) and `x₂` the rest (the interference).
//!
//! One iteration:
//!
//! ```text
//! x ← P (Aᴴy + ρ(z − u))        P = (AᴴA + ρI)⁻¹
//! ξ ← α x + (1 − α) z
//! z ← [S_{λ₁/ρ}(ξ₁ + u₁); S_{λ₂/ρ}(ξ₂ + u₂)]
//! u ← u + η (ξ − z)
//! ```

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim, domain, Error, Result};
use crate::radar::Dictionary;

/// NMSE reported for exact recovery.
pub const NMSE_FLOOR_DB: f64 = -120.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverParams {
    pub rho: f64,
    pub alpha: f64,
    pub eta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for SolverParams {
    /// Cross-validated values for the standard setup.
    fn default() -> Self {
        Self {
            rho: 0.01,
            alpha: 1.5,
            eta: 1.0,
            lambda1: 0.01,
            lambda2: 0.005,
        }
    }
}

impl SolverParams {
    /// Parameters of the single-penalty baseline; `lambda2` is unused there.
    pub fn single_penalty() -> Self {
        Self {
            rho: 0.5,
            alpha: 1.5,
            eta: 1.0,
            lambda1: 0.5,
            lambda2: 0.5,
        }
    }

    /// Plain ADMM: no relaxation, unit dual step.
    pub fn vanilla(self) -> Self {
        Self {
            alpha: 1.0,
            eta: 1.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(domain(format!("{name} must be positive, got {v}")))
            }
        };
        pos("rho", self.rho)?;
        pos("eta", self.eta)?;
        pos("lambda1", self.lambda1)?;
        pos("lambda2", self.lambda2)?;
        if !(0.0..=2.0).contains(&self.alpha) {
            return Err(domain(format!("alpha must lie in [0, 2], got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let p: Self = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

/// Factorization-dependent data shared by every solve with the same `A` and ρ.
#[derive(Clone, Debug)]
pub struct AdmmCache {
    p_mat: Array2<Complex64>,
    a: Array2<Complex64>,
    a_h: Array2<Complex64>,
    p_ah: Array2<Complex64>,
    rho: f64,
    split: usize,
}

/// Builds `P = (AᴴA + ρI)⁻¹` by Cholesky factorization. Coordinates before
/// `split` are penalized by λ₁, the rest by λ₂.
pub fn precompute(a: ArrayView2<Complex64>, rho: f64, split: usize) -> Result<AdmmCache> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(domain(format!("rho must be positive, got {rho}")));
    }
    let (d, p) = a.dim();
    if split > p {
        return Err(dim(format!("split {split} exceeds {p} unknowns")));
    }
    let a_h = a.t().mapv(|z| z.conj());
    let mut gram = a_h.dot(&a);
    for i in 0..p {
        gram[[i, i]] += rho;
    }
    let g = DMatrix::from_fn(p, p, |i, j| gram[[i, j]]);
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Internal("AᴴA + ρI is not positive definite".into()))?;
    let inv = chol.inverse();
    // symmetrize away roundoff so P is exactly Hermitian
    let p_mat = Array2::from_shape_fn((p, p), |(i, j)| 0.5 * (inv[(i, j)] + inv[(j, i)].conj()));
    let p_ah = p_mat.dot(&a_h);
    debug_assert_eq!(p_ah.dim(), (p, d));
    Ok(AdmmCache {
        p_mat,
        a: a.to_owned(),
        a_h,
        p_ah,
        rho,
        split,
    })
}

impl AdmmCache {
    /// Cache for the two-penalty problem on `A = [Φ | I]`.
    pub fn two_penalty(dict: &Dictionary, rho: f64) -> Result<Self> {
        precompute(dict.a_aug().view(), rho, dict.n_atoms())
    }

    /// Cache for the single-penalty problem on `Φ` alone.
    pub fn single_penalty(dict: &Dictionary, rho: f64) -> Result<Self> {
        precompute(dict.phi().view(), rho, dict.n_atoms())
    }

    pub fn p_mat(&self) -> &Array2<Complex64> {
        &self.p_mat
    }

    pub fn a(&self) -> &Array2<Complex64> {
        &self.a
    }

    pub fn a_h(&self) -> &Array2<Complex64> {
        &self.a_h
    }

    /// `P·Aᴴ`, the measurement-to-estimate map of the x-update.
    pub fn p_ah(&self) -> &Array2<Complex64> {
        &self.p_ah
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn n_unknowns(&self) -> usize {
        self.p_mat.nrows()
    }

    pub fn n_meas(&self) -> usize {
        self.a.nrows()
    }

    fn check(&self, params: &SolverParams, y: ArrayView1<Complex64>) -> Result<()> {
        if y.len() != self.n_meas() {
            return Err(dim(format!(
                "measurement has length {}, expected {}",
                y.len(),
                self.n_meas()
            )));
        }
        if params.rho != self.rho {
            return Err(domain(format!(
                "cache was factored for rho = {}, params ask for {}",
                self.rho, params.rho
            )));
        }
        Ok(())
    }
}

/// ADMM iterates. `z` and `u` start at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub x: Array1<Complex64>,
    pub xi: Array1<Complex64>,
    pub z: Array1<Complex64>,
    pub u: Array1<Complex64>,
    pub iter: usize,
}

impl AdmmState {
    pub fn zeros(p: usize) -> Self {
        Self {
            x: Array1::zeros(p),
            xi: Array1::zeros(p),
            z: Array1::zeros(p),
            u: Array1::zeros(p),
            iter: 0,
        }
    }
}

/// Elementwise complex soft thresholding `a·max(|a| − κ, 0)/|a|`, with 0 at 0.
/// NaN inputs stay NaN.
pub fn soft_threshold(a: ArrayView1<Complex64>, kappa: f64) -> Array1<Complex64> {
    a.mapv(|z| shrink(z, kappa))
}

#[inline]
pub fn shrink(z: Complex64, kappa: f64) -> Complex64 {
    let m = z.norm();
    if m > kappa {
        z * ((m - kappa) / m)
    } else if m.is_nan() {
        Complex64::new(f64::NAN, f64::NAN)
    } else {
        Complex64::ZERO
    }
}

/// One relaxed ADMM iteration for measurement `y`.
pub fn admm_step(state: &mut AdmmState, y: ArrayView1<Complex64>, params: &SolverParams, cache: &AdmmCache) -> Result<()> {
    cache.check(params, y)?;
    let pay = cache.p_ah.dot(&y);
    step(state, &pay, params, cache);
    Ok(())
}

/// The iteration with `P·Aᴴ·y` already applied.
fn step(state: &mut AdmmState, pay: &Array1<Complex64>, params: &SolverParams, cache: &AdmmCache) {
    let rho = cache.rho;
    let v = &state.z - &state.u;
    state.x = cache.p_mat.dot(&v);
    Zip::from(&mut state.x).and(pay).for_each(|x, &q| *x = q + rho * *x);
    let alpha = params.alpha;
    Zip::from(&mut state.xi)
        .and(&state.x)
        .and(&state.z)
        .for_each(|xi, &x, &z| *xi = alpha * x + (1.0 - alpha) * z);
    let k1 = params.lambda1 / rho;
    let k2 = params.lambda2 / rho;
    let split = cache.split;
    let eta = params.eta;
    for i in 0..state.z.len() {
        let kappa = if i < split { k1 } else { k2 };
        let z = shrink(state.xi[i] + state.u[i], kappa);
        state.z[i] = z;
        state.u[i] += eta * (state.xi[i] - z);
    }
    state.iter += 1;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    /// Relative change of the linear NMSE against the ground truth.
    OracleNmse,
    FixedIters,
    /// Primal and dual residuals relative to the iterate norms.
    Residual,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub mode: StopMode,
    pub tol: f64,
    pub max_iters: usize,
}

impl StoppingRule {
    /// `|NMSE(k+1) − NMSE(k)| / NMSE(k) < 1e-6` on the linear scale.
    pub fn oracle() -> Self {
        Self {
            mode: StopMode::OracleNmse,
            tol: 1e-6,
            max_iters: 20_000,
        }
    }

    pub fn fixed(iters: usize) -> Self {
        Self {
            mode: StopMode::FixedIters,
            tol: 1.0,
            max_iters: iters,
        }
    }

    pub fn residual(tol: f64) -> Self {
        Self {
            mode: StopMode::Residual,
            tol,
            max_iters: 20_000,
        }
    }

    /// Parses `oracle`, `residual`, `residual:<tol>` or `fixed:<K>`.
    pub fn parse(text: &str) -> Result<Self> {
        let (head, arg) = match text.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (text, None),
        };
        let bad = || Error::Config(format!("bad stopping rule {text:?}; expected oracle, residual[:tol] or fixed:K"));
        match (head, arg) {
            ("oracle", None) => Ok(Self::oracle()),
            ("residual", None) => Ok(Self::residual(1e-6)),
            ("residual", Some(t)) => Ok(Self::residual(t.parse().map_err(|_| bad())?)),
            ("fixed", Some(k)) => {
                let k: usize = k.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                Ok(Self::fixed(k))
            }
            _ => Err(bad()),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(domain("stopping tolerance must be positive"));
        }
        if self.max_iters == 0 {
            return Err(domain("max_iters must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// NMSE of `z` against the ground truth, when it was supplied.
    pub nmse_db: Option<f64>,
    /// `½‖y − A z‖² + λ₁‖z₁‖₁ + λ₂‖z₂‖₁`, when requested.
    pub objective: Option<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Clone, Debug)]
pub struct Solution {
    /// The sparse iterate `z` at termination.
    pub x_hat: Array1<Complex64>,
    pub iters: usize,
    /// False when `max_iters` ran out before the rule fired.
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

/// Runs ADMM from the zero state until `stop` fires. Oracle stopping needs
/// `truth`; the criterion is only tested once `z` has left zero, since the
/// NMSE is pinned at 1 while every coordinate is still thresholded away.
pub fn admm_solve(
    cache: &AdmmCache,
    y: ArrayView1<Complex64>,
    params: &SolverParams,
    stop: &StoppingRule,
    truth: Option<ArrayView1<Complex64>>,
) -> Result<Solution> {
    solve_impl(cache, y, params, stop, truth, false)
}

/// [`admm_solve`] that also records the objective at every iteration.
pub fn admm_solve_traced(
    cache: &AdmmCache,
    y: ArrayView1<Complex64>,
    params: &SolverParams,
    stop: &StoppingRule,
    truth: Option<ArrayView1<Complex64>>,
) -> Result<Solution> {
    solve_impl(cache, y, params, stop, truth, true)
}

fn solve_impl(
    cache: &AdmmCache,
    y: ArrayView1<Complex64>,
    params: &SolverParams,
    stop: &StoppingRule,
    truth: Option<ArrayView1<Complex64>>,
    with_objective: bool,
) -> Result<Solution> {
    params.validate()?;
    stop.validate()?;
    cache.check(params, y)?;
    if let Some(t) = truth {
        if t.len() != cache.n_unknowns() {
            return Err(dim(format!(
                "truth has length {}, expected {}",
                t.len(),
                cache.n_unknowns()
            )));
        }
    }
    let truth_energy = truth.map(|t| energy(t));
    if stop.mode == StopMode::OracleNmse && truth_energy.is_none_or(|e| e == 0.0) {
        return Err(domain("oracle stopping needs a nonzero ground truth"));
    }

    let pay = cache.p_ah.dot(&y);
    let mut state = AdmmState::zeros(cache.n_unknowns());
    let mut trace = Vec::new();
    let mut prev_nmse: Option<f64> = None;
    let mut converged = false;
    while state.iter < stop.max_iters {
        let z_prev = state.z.clone();
        step(&mut state, &pay, params, cache);

        let nmse_lin = truth.map(|t| dist2(state.z.view(), t) / truth_energy.unwrap());
        let primal = dist2(state.xi.view(), state.z.view()).sqrt();
        let dual = cache.rho * dist2(state.z.view(), z_prev.view()).sqrt();
        trace.push(TraceRow {
            iter: state.iter,
            nmse_db: nmse_lin.map(lin_to_db),
            objective: with_objective.then(|| objective(cache, y, params, state.z.view())),
            primal_residual: primal,
            dual_residual: dual,
        });

        let z_zero = state.z.iter().all(|c| *c == Complex64::ZERO);
        let fired = match stop.mode {
            StopMode::FixedIters => false,
            StopMode::OracleNmse => {
                let cur = nmse_lin.unwrap();
                let f = match prev_nmse {
                    Some(prev) if !z_zero => (cur - prev).abs() < stop.tol * prev,
                    _ => false,
                };
                prev_nmse = Some(cur);
                f
            }
            StopMode::Residual => {
                let scale_p = energy(state.xi.view()).sqrt().max(energy(state.z.view()).sqrt());
                let scale_d = cache.rho * energy(state.u.view()).sqrt();
                !z_zero && primal <= stop.tol * scale_p && dual <= stop.tol * scale_d
            }
        };
        if fired {
            converged = true;
            break;
        }
    }
    if stop.mode == StopMode::FixedIters {
        converged = true;
    }
    Ok(Solution {
        x_hat: state.z,
        iters: state.iter,
        converged,
        trace,
    })
}

/// Single-penalty baseline `min ½‖y − Φw‖² + λ₁‖w‖₁`; `cache` must come from
/// [`AdmmCache::single_penalty`]. `truth` is the image `w` alone.
pub fn admm_solve_single_penalty(
    cache: &AdmmCache,
    y: ArrayView1<Complex64>,
    params: &SolverParams,
    stop: &StoppingRule,
    truth: Option<ArrayView1<Complex64>>,
) -> Result<Solution> {
    if cache.split != cache.n_unknowns() {
        return Err(domain("single-penalty solve needs a cache built on Φ alone"));
    }
    admm_solve(cache, y, params, stop, truth)
}

/// Solves every column of `ys` independently in parallel.
pub fn admm_solve_batch(
    cache: &AdmmCache,
    ys: &[ArrayView1<Complex64>],
    params: &SolverParams,
    stop: &StoppingRule,
    truths: Option<&[ArrayView1<Complex64>]>,
) -> Result<Vec<Solution>> {
    if let Some(t) = truths {
        if t.len() != ys.len() {
            return Err(dim("one truth per measurement required"));
        }
    }
    ys.par_iter()
        .enumerate()
        .map(|(i, y)| admm_solve(cache, *y, params, stop, truths.map(|t| t[i])))
        .collect()
}

/// `½‖y − A z‖² + λ₁‖z₁‖₁ + λ₂‖z₂‖₁`, the problem the iteration minimizes.
pub fn objective(cache: &AdmmCache, y: ArrayView1<Complex64>, params: &SolverParams, z: ArrayView1<Complex64>) -> f64 {
    let r = &y - &cache.a.dot(&z);
    let l1 = |v: ArrayView1<Complex64>| v.iter().map(|c| c.norm()).sum::<f64>();
    0.5 * energy(r.view())
        + params.lambda1 * l1(z.slice(s![..cache.split]))
        + params.lambda2 * l1(z.slice(s![cache.split..]))
}

fn energy(v: ArrayView1<Complex64>) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

fn dist2(a: ArrayView1<Complex64>, b: ArrayView1<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q).norm_sqr()).sum()
}

/// dB with the exact-recovery floor applied.
pub fn lin_to_db(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        NMSE_FLOOR_DB
    } else {
        (10.0 * ratio.log10()).max(NMSE_FLOOR_DB)
    }
}

/// `‖x − x̂‖² / ‖x‖²` on the linear scale.
pub fn nmse_linear(x_hat: ArrayView1<Complex64>, x_true: ArrayView1<Complex64>) -> Result<f64> {
    if x_hat.len() != x_true.len() {
        return Err(dim(format!("{} vs {}", x_hat.len(), x_true.len())));
    }
    let e = energy(x_true);
    if e == 0.0 {
        return Err(domain("NMSE is undefined for a zero ground truth"));
    }
    Ok(dist2(x_hat, x_true) / e)
}

/// `10·log₁₀(‖x − x̂‖² / ‖x‖²)`, floored at [`NMSE_FLOOR_DB`].
pub fn nmse(x_hat: ArrayView1<Complex64>, x_true: ArrayView1<Complex64>) -> Result<f64> {
    nmse_linear(x_hat, x_true).map(lin_to_db)
}

/// Test-set NMSE: the per-sample ratios are averaged before taking dB.
pub fn nmse_batch<'a>(
    pairs: impl IntoIterator<Item = (ArrayView1<'a, Complex64>, ArrayView1<'a, Complex64>)>,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x_hat, x_true) in pairs {
        sum += nmse_linear(x_hat, x_true)?;
        n += 1;
    }
    if n == 0 {
        return Err(domain("NMSE of an empty batch"));
    }
    Ok(lin_to_db(sum / n as f64))
}
