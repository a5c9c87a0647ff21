//! Supervised training: batch-mean squared error, exact reverse-mode
//! gradients through every stage, and Adam with a step learning-rate schedule.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admm::lin_to_db;
use crate::error::{dim, domain, Error, Result};
use crate::net::{BatchTrace, Network, StageParams};
use crate::scene::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_period: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 45,
            batch_size: 500,
            lr0: 1e-3,
            lr_decay: 0.1,
            lr_period: 15,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr_period == 0 {
            return Err(Error::Config("epochs, batch_size and lr_period must be ≥ 1".into()));
        }
        if self.lr_period > self.epochs {
            return Err(Error::Config("lr_period must not exceed epochs".into()));
        }
        for (name, v) in [
            ("lr0", self.lr0),
            ("lr_decay", self.lr_decay),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.adam_beta1 >= 1.0 || self.adam_beta2 >= 1.0 {
            return Err(Error::Config("Adam betas must be < 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Learning rate during 1-based `epoch`: `lr0·decay^⌊(epoch−1)/period⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = epoch.saturating_sub(1) / self.lr_period;
        self.lr0 * self.lr_decay.powi(drops as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the mini-batch losses seen during the epoch.
    pub loss: f64,
    pub val_nmse_db: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned.
    pub selected_epoch: usize,
}

impl TrainHistory {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epoch,loss,val_nmse_db,lr,seconds")?;
        for r in &self.epochs {
            let val = r.val_nmse_db.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{}", r.epoch, r.loss, val, r.lr, r.seconds)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }
}

/// `(1/B)·Σ‖x̂ᵢ − xᵢ‖²` over a batch of complex vectors.
pub fn loss(outputs: &[Array1<Complex64>], truths: &[Array1<Complex64>]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(domain("loss of an empty batch"));
    }
    if outputs.len() != truths.len() {
        return Err(dim("outputs and truths differ in batch size"));
    }
    let mut sum = 0.0;
    for (o, t) in outputs.iter().zip(truths) {
        if o.len() != t.len() {
            return Err(dim("output and truth lengths differ"));
        }
        sum += o.iter().zip(t.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
    }
    Ok(sum / outputs.len() as f64)
}

/// Stacked form of [`loss`]: columns of `out` and `truth` are samples.
pub fn loss_stacked(out: ArrayView2<f64>, truth: ArrayView2<f64>) -> f64 {
    let b = out.ncols() as f64;
    Zip::from(out).and(truth).fold(0.0, |acc, &o, &t| acc + (o - t) * (o - t)) / b
}

/// Gradients of the batch loss with respect to every stage parameter, given
/// the trace of a forward pass on the same stacked measurements `y`.
///
/// The threshold's Jacobian at an active coordinate `a` (|a| = m > κ) is
/// `(1 − κ/m)·I + (κ/m³)·a aᵀ` on the (re, im) pair; inactive coordinates,
/// including the kink |a| = κ, get the zero branch.
pub fn backward(net: &Network, y: ArrayView2<f64>, truth: ArrayView2<f64>, tr: &BatchTrace) -> Result<Vec<StageParams>> {
    let k = net.n_stages();
    if tr.z.len() != k || tr.z[0].ncols() != y.ncols() || truth.dim() != tr.z[0].dim() {
        return Err(dim("trace, measurements and truths are inconsistent"));
    }
    let n = 2 * net.n_unknowns();
    let p = net.n_unknowns();
    let bsz = y.ncols();
    let zero = Array2::<f64>::zeros((n, bsz));
    let mut g_z = (&tr.z[k - 1] - &truth) * (2.0 / bsz as f64);
    let mut g_u = Array2::<f64>::zeros((n, bsz));
    let mut grads: Vec<StageParams> = Vec::with_capacity(k);

    for i in (0..k).rev() {
        let st = &net.stages[i];
        let (z_prev, u_prev) = if i == 0 {
            (&zero, &zero)
        } else {
            (&tr.z[i - 1], &tr.u[i - 1])
        };
        let (x, xi, z) = (&tr.x[i], &tr.xi[i], &tr.z[i]);
        let mut g = StageParams::zeros_like(st);

        // dual update u = u_prev + η(ξ − z)
        g.eta = Zip::from(&g_u).and(xi).and(z).fold(0.0, |acc, &gu, &xi, &z| acc + gu * (xi - z));
        let mut g_xi = &g_u * st.eta;
        g_z.scaled_add(-st.eta, &g_u);
        let mut g_up = g_u;

        // shrinkage z = S(ξ + u_prev)
        let k1 = st.lambda1.max(0.0);
        let k2 = st.lambda2.max(0.0);
        let mut g_a = Array2::<f64>::zeros((n, bsz));
        let (mut g_k1, mut g_k2) = (0.0, 0.0);
        for c in 0..p {
            let kappa = if c < net.split() { k1 } else { k2 };
            let mut g_kappa = 0.0;
            for b in 0..bsz {
                let ar = xi[[c, b]] + u_prev[[c, b]];
                let ai = xi[[p + c, b]] + u_prev[[p + c, b]];
                let m = ar.hypot(ai);
                if m > kappa {
                    let (gr, gi) = (g_z[[c, b]], g_z[[p + c, b]]);
                    let dot = ar * gr + ai * gi;
                    let s = 1.0 - kappa / m;
                    let t = kappa / (m * m * m) * dot;
                    g_a[[c, b]] = s * gr + t * ar;
                    g_a[[p + c, b]] = s * gi + t * ai;
                    g_kappa -= dot / m;
                }
            }
            if c < net.split() {
                g_k1 += g_kappa;
            } else {
                g_k2 += g_kappa;
            }
        }
        g.lambda1 = if st.lambda1 > 0.0 { g_k1 } else { 0.0 };
        g.lambda2 = if st.lambda2 > 0.0 { g_k2 } else { 0.0 };
        g_xi += &g_a;
        g_up += &g_a;

        // relaxation ξ = αx + (1 − α)z_prev
        g.alpha = Zip::from(&g_xi).and(x).and(z_prev).fold(0.0, |acc, &g, &x, &z| acc + g * (x - z));
        let g_x = &g_xi * st.alpha;
        let mut g_zp = g_xi * (1.0 - st.alpha);

        // reconstruction x = M1 y + M2 (z_prev − u_prev)
        let v = z_prev - u_prev;
        ndarray::linalg::general_mat_mul(1.0, &g_x, &y.t(), 0.0, &mut g.m1);
        ndarray::linalg::general_mat_mul(1.0, &g_x, &v.t(), 0.0, &mut g.m2);
        let g_v = st.m2.t().dot(&g_x);
        g_zp += &g_v;
        g_up -= &g_v;

        grads.push(g);
        g_z = g_zp;
        g_u = g_up;
    }
    grads.reverse();
    Ok(grads)
}

/// Loss and gradients for one stacked batch.
pub fn loss_and_grad(net: &Network, y: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<(f64, Vec<StageParams>)> {
    let tr = net.forward_batch(y)?;
    let l = loss_stacked(tr.output().view(), truth);
    let g = backward(net, y, truth, &tr)?;
    Ok((l, g))
}

/// First and second moment estimates mirroring the network's parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<StageParams>,
    pub v: Vec<StageParams>,
    pub t: u64,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        let z: Vec<_> = net.stages.iter().map(StageParams::zeros_like).collect();
        Self {
            m: z.clone(),
            v: z,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update with learning rate `lr`.
pub fn adam_step(net: &mut Network, grads: &[StageParams], state: &mut AdamState, cfg: &TrainConfig, lr: f64) -> Result<()> {
    if grads.len() != net.n_stages() || state.m.len() != net.n_stages() {
        return Err(dim("gradient / optimizer state do not match the network"));
    }
    state.t += 1;
    let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let upd = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p -= lr * mh / (vh.sqrt() + eps);
    };
    for (((st, g), m), v) in net
        .stages
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        Zip::from(&mut st.m1)
            .and(&g.m1)
            .and(&mut m.m1)
            .and(&mut v.m1)
            .for_each(|p, &g, m, v| upd(p, g, m, v));
        Zip::from(&mut st.m2)
            .and(&g.m2)
            .and(&mut m.m2)
            .and(&mut v.m2)
            .for_each(|p, &g, m, v| upd(p, g, m, v));
        let gs = g.scalars();
        for (((p, g), m), v) in st
            .scalars_mut()
            .into_iter()
            .zip(gs)
            .zip(m.scalars_mut())
            .zip(v.scalars_mut())
        {
            upd(p, g, m, v);
        }
    }
    Ok(())
}

/// Test-set NMSE (dB) of a network on a dataset.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut sum = 0.0;
    for chunk in idx.chunks(1000) {
        let y = data.stacked_measurements(chunk);
        let x = data.stacked_truths(chunk);
        let out = net.infer_batch(y.view())?;
        for b in 0..chunk.len() {
            let (num, den) = Zip::from(out.column(b))
                .and(x.column(b))
                .fold((0.0, 0.0), |(n, d), &o, &t| (n + (o - t) * (o - t), d + t * t));
            if den == 0.0 {
                return Err(domain("NMSE is undefined for a zero ground truth"));
            }
            sum += num / den;
        }
    }
    Ok(lin_to_db(sum / data.len() as f64))
}

/// Mini-batch Adam over seeded shuffles. With a validation set the weights of
/// the best validation epoch are returned, otherwise the final ones. A
/// non-finite batch loss aborts with [`Error::Diverged`].
pub fn train(net: Network, data: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<(Network, TrainHistory)> {
    train_with_progress(net, data, val, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    mut net: Network,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    net.validate()?;
    if data.is_empty() {
        return Err(domain("empty training set"));
    }
    let n_meas = data.samples[0].y.len();
    let n_unknowns = data.samples[0].w.len() + data.samples[0].b.len();
    if n_meas != net.n_meas() || n_unknowns != net.n_unknowns() {
        return Err(dim("dataset dimensions do not match the network"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam = AdamState::new(&net);
    let mut hist = TrainHistory::default();
    let mut best: Option<(f64, Network)> = None;

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let y = data.stacked_measurements(idx);
            let x = data.stacked_truths(idx);
            let (l, g) = loss_and_grad(&net, y.view(), x.view())?;
            if !l.is_finite() {
                hist.epochs.push(EpochRecord {
                    epoch,
                    loss: l,
                    val_nmse_db: None,
                    lr,
                    seconds: t0.elapsed().as_secs_f64(),
                });
                return Err(Error::Diverged {
                    epoch,
                    history: Box::new(hist),
                });
            }
            adam_step(&mut net, &g, &mut adam, cfg, lr)?;
            loss_sum += l;
            batches += 1;
        }
        let val_nmse_db = val.map(|v| evaluate(&net, v)).transpose()?;
        let rec = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            val_nmse_db,
            lr,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        hist.epochs.push(rec);
        if let Some(v) = val_nmse_db {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, net.clone()));
                hist.selected_epoch = epoch;
            }
        } else {
            hist.selected_epoch = epoch;
        }
    }
    let net = match best {
        Some((_, b)) => b,
        None => net,
    };
    Ok((net, hist))
}

/// Which parameter a gradient-check entry perturbed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRef {
    M1(usize, usize, usize),
    M2(usize, usize, usize),
    Alpha(usize),
    Eta(usize),
    Lambda1(usize),
    Lambda2(usize),
}

impl ParamRef {
    fn get_mut(self, net: &mut Network) -> &mut f64 {
        match self {
            ParamRef::M1(k, i, j) => &mut net.stages[k].m1[[i, j]],
            ParamRef::M2(k, i, j) => &mut net.stages[k].m2[[i, j]],
            ParamRef::Alpha(k) => &mut net.stages[k].alpha,
            ParamRef::Eta(k) => &mut net.stages[k].eta,
            ParamRef::Lambda1(k) => &mut net.stages[k].lambda1,
            ParamRef::Lambda2(k) => &mut net.stages[k].lambda2,
        }
    }

    fn get(self, grads: &[StageParams]) -> f64 {
        match self {
            ParamRef::M1(k, i, j) => grads[k].m1[[i, j]],
            ParamRef::M2(k, i, j) => grads[k].m2[[i, j]],
            ParamRef::Alpha(k) => grads[k].alpha,
            ParamRef::Eta(k) => grads[k].eta,
            ParamRef::Lambda1(k) => grads[k].lambda1,
            ParamRef::Lambda2(k) => grads[k].lambda2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: ParamRef,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub entries: Vec<GradCheckEntry>,
    /// Parameters skipped because a ±eps perturbation moved a coordinate
    /// across its threshold, where the loss has a kink.
    pub excluded: Vec<ParamRef>,
}

/// Compares [`backward`] with central differences of step `eps`.
///
/// Checked parameters: all four scalars of every stage plus `per_matrix`
/// entries drawn uniformly (seeded) from each stage's M1 and M2. The error of
/// one entry is `|g − ĝ| / max(|g|, |ĝ|, floor)` where `floor = 1e-6·(1 + max|g|)`
/// keeps gradients at roundoff level from dominating.
pub fn grad_check(
    net: &Network,
    y: ArrayView2<f64>,
    truth: ArrayView2<f64>,
    eps: f64,
    per_matrix: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grad(net, y, truth)?;
    let base_pattern = active_pattern(net, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for (k, st) in net.stages.iter().enumerate() {
        params.extend([ParamRef::Alpha(k), ParamRef::Eta(k), ParamRef::Lambda1(k), ParamRef::Lambda2(k)]);
        for _ in 0..per_matrix {
            params.push(ParamRef::M1(k, rng.random_range(0..st.m1.nrows()), rng.random_range(0..st.m1.ncols())));
            params.push(ParamRef::M2(k, rng.random_range(0..st.m2.nrows()), rng.random_range(0..st.m2.ncols())));
        }
    }
    let gmax = params.iter().map(|p| p.get(&grads).abs()).fold(0.0, f64::max);
    let floor = 1e-6 * (1.0 + gmax);
    let mut work = net.clone();
    let mut entries = Vec::new();
    let mut excluded = Vec::new();
    for p in params {
        let orig = *p.get_mut(&mut work);
        *p.get_mut(&mut work) = orig + eps;
        let tr_plus = work.forward_batch(y)?;
        let same_plus = active_pattern_of(&work, &tr_plus) == base_pattern;
        let lp = loss_stacked(tr_plus.output().view(), truth);
        *p.get_mut(&mut work) = orig - eps;
        let tr_minus = work.forward_batch(y)?;
        let same_minus = active_pattern_of(&work, &tr_minus) == base_pattern;
        let lm = loss_stacked(tr_minus.output().view(), truth);
        *p.get_mut(&mut work) = orig;
        if !(same_plus && same_minus) {
            excluded.push(p);
            continue;
        }
        let numeric = (lp - lm) / (2.0 * eps);
        let analytic = p.get(&grads);
        let rel_err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        entries.push(GradCheckEntry {
            param: p,
            analytic,
            numeric,
            rel_err,
        });
    }
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_err,
        entries,
        excluded,
    })
}

fn active_pattern(net: &Network, y: ArrayView2<f64>) -> Result<Vec<bool>> {
    let tr = net.forward_batch(y)?;
    Ok(active_pattern_of(net, &tr))
}

/// Which (stage, coordinate, sample) entries survive thresholding.
fn active_pattern_of(net: &Network, tr: &BatchTrace) -> Vec<bool> {
    let p = net.n_unknowns();
    let mut out = Vec::new();
    for z in &tr.z {
        for c in 0..p {
            for b in 0..z.ncols() {
                out.push(z[[c, b]] != 0.0 || z[[p + c, b]] != 0.0);
            }
        }
    }
    out
}
