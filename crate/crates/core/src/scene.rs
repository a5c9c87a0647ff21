//! Synthetic scenes: sparse image `w`, sparse interference `b`, and the
//! measurement `y = Φ w + b + e`.
//!
//! Every sample is a pure function of `(dictionary, spec, seed)`. Datasets
//! derive per-sample seeds from a master seed with [`sample_seed`], so a
//! dataset can be generated in parallel and still be bit-identical to a
//! sequential run.

use std::path::Path;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::io::{self, db_value};
use crate::radar::{Dictionary, RadarConfig};
use crate::stacking::stack_columns;

const FORMAT_VERSION: u32 = 1;

fn one() -> f64 {
    1.0
}

/// Per-carrier Bernoulli activity model for the interference support.
///
/// `n_carriers` communication channels tile the sweep band evenly, so each
/// radar pulse overlaps `n_carriers / N` of them. A fresh activity pattern is
/// drawn every pulse; a pulse is hit when any overlapping carrier is active.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityModel {
    pub epsilon: f64,
    pub n_carriers: usize,
}

impl ActivityModel {
    fn carriers_per_pulse(&self, cfg: &RadarConfig) -> Result<usize> {
        if self.n_carriers == 0 || self.n_carriers % cfg.n_freq != 0 {
            return Err(domain(format!(
                "{} carriers cannot tile {} frequency steps evenly",
                self.n_carriers, cfg.n_freq
            )));
        }
        Ok(self.n_carriers / cfg.n_freq)
    }

    /// Probability that a given pulse is interfered.
    pub fn hit_probability(&self, cfg: &RadarConfig) -> Result<f64> {
        let l = self.carriers_per_pulse(cfg)?;
        Ok(1.0 - (1.0 - self.epsilon).powi(l as i32))
    }

    /// Expected ‖b‖₀ under the model.
    pub fn expected_nnz(&self, cfg: &RadarConfig) -> Result<f64> {
        Ok(self.hit_probability(cfg)? * cfg.meas_dim() as f64)
    }
}

/// Per-sample uniform draws. Integer ranges are inclusive; `b_nnz` draws are
/// restricted to multiples of the channel count.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Randomize {
    #[serde(default)]
    pub snr_db: Option<[f64; 2]>,
    #[serde(default)]
    pub sir_db: Option<[f64; 2]>,
    #[serde(default)]
    pub w_nnz: Option<[usize; 2]>,
    #[serde(default)]
    pub b_nnz: Option<[usize; 2]>,
}

/// What to generate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// Number of scatterers, ‖w‖₀.
    pub w_nnz: usize,
    /// Number of interfered measurements, ‖b‖₀ (ignored with an activity model).
    pub b_nnz: usize,
    /// Signal-to-noise ratio; `inf` means noise-free.
    #[serde(with = "db_value")]
    pub snr_db: f64,
    /// Signal-to-interference ratio; `inf` means no interference.
    #[serde(with = "db_value")]
    pub sir_db: f64,
    /// Scattering coefficient variance σ_x².
    #[serde(default = "one")]
    pub sigma_x2: f64,
    #[serde(default)]
    pub activity: Option<ActivityModel>,
    #[serde(default)]
    pub randomize: Option<Randomize>,
}

impl SceneSpec {
    pub fn new(w_nnz: usize, b_nnz: usize, snr_db: f64, sir_db: f64) -> Self {
        Self {
            w_nnz,
            b_nnz,
            snr_db,
            sir_db,
            sigma_x2: 1.0,
            activity: None,
            randomize: None,
        }
    }

    pub fn validate(&self, dict: &Dictionary) -> Result<()> {
        let cfg = dict.config();
        let check_w = |w: usize| {
            if w > dict.n_atoms() {
                Err(domain(format!("w_nnz {w} exceeds {} grid points", dict.n_atoms())))
            } else {
                Ok(())
            }
        };
        let check_b = |b: usize| {
            if b % cfg.n_channels() != 0 {
                Err(domain(format!(
                    "b_nnz {b} must be a multiple of N_T·N_R = {}",
                    cfg.n_channels()
                )))
            } else if b > cfg.meas_dim() {
                Err(domain(format!("b_nnz {b} exceeds D = {}", cfg.meas_dim())))
            } else {
                Ok(())
            }
        };
        check_w(self.w_nnz)?;
        if self.activity.is_none() {
            check_b(self.b_nnz)?;
        }
        if self.snr_db.is_nan() || self.sir_db.is_nan() {
            return Err(domain("SNR/SIR must not be NaN"));
        }
        if !(self.sigma_x2.is_finite() && self.sigma_x2 > 0.0) {
            return Err(domain("sigma_x2 must be positive"));
        }
        if let Some(act) = &self.activity {
            if !(0.0..=1.0).contains(&act.epsilon) {
                return Err(domain("activity epsilon must lie in [0, 1]"));
            }
            act.carriers_per_pulse(cfg)?;
        }
        if let Some(r) = &self.randomize {
            for range in [r.snr_db, r.sir_db].into_iter().flatten() {
                if !(range[0].is_finite() && range[1].is_finite() && range[0] <= range[1]) {
                    return Err(domain(format!("bad dB range {range:?}")));
                }
            }
            if let Some([lo, hi]) = r.w_nnz {
                if lo > hi {
                    return Err(domain("w_nnz range is empty"));
                }
                check_w(hi)?;
            }
            if let Some([lo, hi]) = r.b_nnz {
                if self.activity.is_some() {
                    return Err(domain("b_nnz randomization conflicts with the activity model"));
                }
                if lo > hi {
                    return Err(domain("b_nnz range is empty"));
                }
                check_b(lo)?;
                check_b(hi)?;
            }
        }
        Ok(())
    }

    fn realize<R: Rng>(&self, cfg: &RadarConfig, rng: &mut R) -> Realized {
        let mut out = Realized {
            w_nnz: self.w_nnz,
            b_nnz: self.b_nnz,
            snr_db: self.snr_db,
            sir_db: self.sir_db,
        };
        if let Some(r) = &self.randomize {
            if let Some([lo, hi]) = r.snr_db {
                out.snr_db = rng.random_range(lo..=hi);
            }
            if let Some([lo, hi]) = r.sir_db {
                out.sir_db = rng.random_range(lo..=hi);
            }
            if let Some([lo, hi]) = r.w_nnz {
                out.w_nnz = rng.random_range(lo..=hi);
            }
            if let Some([lo, hi]) = r.b_nnz {
                let ch = cfg.n_channels();
                out.b_nnz = rng.random_range(lo / ch..=hi / ch) * ch;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
struct Realized {
    w_nnz: usize,
    b_nnz: usize,
    snr_db: f64,
    sir_db: f64,
}

/// One ground-truth scene and its measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    /// Vectorized angle-range-Doppler image, length M.
    pub w: Array1<Complex64>,
    /// Interference, length D.
    pub b: Array1<Complex64>,
    /// Measurement, length D.
    pub y: Array1<Complex64>,
    /// Noise variance σ² used for `e`.
    pub e_sigma2: f64,
    /// Interference variance β used for the nonzeros of `b`.
    pub beta: f64,
    pub snr_db: f64,
    pub sir_db: f64,
    pub seed: u64,
}

impl SceneSample {
    /// The joint unknown `x = [w; b]`.
    pub fn x(&self) -> Array1<Complex64> {
        let mut x = Array1::zeros(self.w.len() + self.b.len());
        x.slice_mut(ndarray::s![..self.w.len()]).assign(&self.w);
        x.slice_mut(ndarray::s![self.w.len()..]).assign(&self.b);
        x
    }

    pub fn w_nnz(&self) -> usize {
        self.w.iter().filter(|z| **z != Complex64::ZERO).count()
    }

    pub fn b_nnz(&self) -> usize {
        self.b.iter().filter(|z| **z != Complex64::ZERO).count()
    }
}

/// Noise variance σ² such that `E‖Φw‖² / E‖e‖² = 10^(snr/10)`, where
/// `signal_power = E‖Φw‖² = ‖w‖₀·σ_x²` for unit-norm atoms.
pub fn calibrate_noise(snr_db: f64, signal_power: f64, d: usize) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    signal_power / (d as f64 * 10f64.powf(snr_db / 10.0))
}

/// Interference variance β such that `E‖Φw‖² / E‖b‖² = 10^(sir/10)`.
pub fn calibrate_interference(sir_db: f64, signal_power: f64, b_nnz: f64) -> Result<f64> {
    if signal_power == 0.0 || sir_db == f64::INFINITY {
        return Ok(0.0);
    }
    if b_nnz <= 0.0 {
        return Err(domain(format!(
            "finite SIR {sir_db} dB requested with an empty interference support"
        )));
    }
    Ok(signal_power / (b_nnz * 10f64.powf(sir_db / 10.0)))
}

/// Draws the interference support: `b_nnz / (N_T·N_R)` distinct
/// (sweep, pulse) pairs spread as evenly as possible over the sweeps, each
/// expanded to every MIMO channel. Returned indices are sorted.
pub fn interference_support<R: Rng>(b_nnz: usize, cfg: &RadarConfig, rng: &mut R) -> Result<Vec<usize>> {
    let ch = cfg.n_channels();
    if b_nnz % ch != 0 {
        return Err(domain(format!(
            "b_nnz {b_nnz} must be divisible by N_T·N_R = {ch} so that every hit spans all MIMO channels"
        )));
    }
    let pairs = b_nnz / ch;
    if pairs > cfg.n_pulses() {
        return Err(domain(format!("b_nnz {b_nnz} exceeds D = {}", cfg.meas_dim())));
    }
    let base = pairs / cfg.n_sweeps;
    let extra = pairs % cfg.n_sweeps;
    let mut per_sweep = vec![base; cfg.n_sweeps];
    for m in index::sample(rng, cfg.n_sweeps, extra) {
        per_sweep[m] += 1;
    }
    let mut hits = Vec::with_capacity(pairs);
    for (m, &count) in per_sweep.iter().enumerate() {
        for n in index::sample(rng, cfg.n_freq, count) {
            hits.push((m, n));
        }
    }
    Ok(expand_hits(&hits, cfg))
}

fn expand_hits(hits: &[(usize, usize)], cfg: &RadarConfig) -> Vec<usize> {
    let mut support = Vec::with_capacity(hits.len() * cfg.n_channels());
    for q in 0..cfg.n_rx {
        for p in 0..cfg.n_tx {
            for &(m, n) in hits {
                support.push(cfg.flat_index(q, p, m, n));
            }
        }
    }
    support.sort_unstable();
    support
}

fn activity_support<R: Rng>(model: &ActivityModel, cfg: &RadarConfig, rng: &mut R) -> Result<Vec<usize>> {
    let l = model.carriers_per_pulse(cfg)?;
    let mut hits = Vec::new();
    for m in 0..cfg.n_sweeps {
        for n in 0..cfg.n_freq {
            // draw every overlapping carrier so the stream position is support-independent
            let mut hit = false;
            for _ in 0..l {
                hit |= rng.random_bool(model.epsilon);
            }
            if hit {
                hits.push((m, n));
            }
        }
    }
    Ok(expand_hits(&hits, cfg))
}

/// Circular complex Gaussian CN(0, var).
pub fn complex_normal<R: Rng>(rng: &mut R, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Counter-based per-sample seed: SplitMix64 of `master + index·γ`, where γ
/// is the 64-bit golden-ratio increment.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one scene. Identical `(dict, spec, seed)` give bit-identical samples.
pub fn sample_scene(dict: &Dictionary, spec: &SceneSpec, seed: u64) -> Result<SceneSample> {
    spec.validate(dict)?;
    let cfg = dict.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = spec.realize(cfg, &mut rng);

    let m = dict.n_atoms();
    let mut w = Array1::<Complex64>::zeros(m);
    let mut support = index::sample(&mut rng, m, real.w_nnz).into_vec();
    support.sort_unstable();
    for &i in &support {
        w[i] = complex_normal(&mut rng, spec.sigma_x2);
    }

    let (b_support, expected_b_nnz) = match &spec.activity {
        Some(act) => (activity_support(act, cfg, &mut rng)?, act.expected_nnz(cfg)?),
        None => (
            interference_support(real.b_nnz, cfg, &mut rng)?,
            real.b_nnz as f64,
        ),
    };
    let signal_power = real.w_nnz as f64 * spec.sigma_x2;
    let beta = if b_support.is_empty() && real.sir_db != f64::INFINITY && spec.activity.is_some() {
        0.0
    } else {
        calibrate_interference(real.sir_db, signal_power, expected_b_nnz)?
    };
    let sigma2 = calibrate_noise(real.snr_db, signal_power, dict.n_meas());
    let (b, y) = complete_measurement(dict, &w, &b_support, beta, sigma2, &mut rng);
    Ok(SceneSample {
        w,
        b,
        y,
        e_sigma2: sigma2,
        beta,
        snr_db: real.snr_db,
        sir_db: real.sir_db,
        seed,
    })
}

/// Fills the interference on `b_support` with CN(0, β) draws, adds CN(0, σ²)
/// noise, and returns `(b, y = Φ w + b + e)`.
pub fn complete_measurement<R: Rng>(
    dict: &Dictionary,
    w: &Array1<Complex64>,
    b_support: &[usize],
    beta: f64,
    sigma2: f64,
    rng: &mut R,
) -> (Array1<Complex64>, Array1<Complex64>) {
    let d = dict.n_meas();
    let mut b = Array1::<Complex64>::zeros(d);
    if beta > 0.0 {
        for &i in b_support {
            b[i] = complex_normal(rng, beta);
        }
    }
    let mut y = b.clone();
    for (j, wj) in w.iter().enumerate() {
        if *wj != Complex64::ZERO {
            y.scaled_add(*wj, &dict.phi().column(j));
        }
    }
    if sigma2 > 0.0 {
        for yi in y.iter_mut() {
            *yi += complex_normal(rng, sigma2);
        }
    }
    (b, y)
}

/// An ordered collection of samples drawn against one dictionary.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SceneSample>,
    pub spec: SceneSpec,
    pub master_seed: u64,
    pub dict_hash: String,
}

#[derive(Serialize, Deserialize)]
struct SampleMeta {
    seed: u64,
    e_sigma2: f64,
    beta: f64,
    #[serde(with = "db_value")]
    snr_db: f64,
    #[serde(with = "db_value")]
    sir_db: f64,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    format_version: u32,
    layout: String,
    n: usize,
    n_atoms: usize,
    n_meas: usize,
    master_seed: u64,
    dict_hash: String,
    spec: SceneSpec,
    samples: Vec<SampleMeta>,
}

/// Generates `n` samples with seeds `sample_seed(master_seed, i)`.
pub fn generate_dataset(dict: &Dictionary, spec: &SceneSpec, n: usize, master_seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(domain("dataset size must be ≥ 1"));
    }
    spec.validate(dict)?;
    let samples = (0..n as u64)
        .into_par_iter()
        .map(|i| sample_scene(dict, spec, sample_seed(master_seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        spec: spec.clone(),
        master_seed,
        dict_hash: dict.hash().to_string(),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn check_dictionary(&self, dict: &Dictionary) -> Result<()> {
        if self.dict_hash != dict.hash() {
            return Err(Error::Format(format!(
                "dataset was generated against dictionary {}, not {}",
                self.dict_hash,
                dict.hash()
            )));
        }
        Ok(())
    }

    /// Measurements of the selected samples stacked as columns (2D × B).
    pub fn stacked_measurements(&self, idx: &[usize]) -> Array2<f64> {
        let d = self.samples[idx[0]].y.len();
        stack_columns(d, idx.iter().map(|&i| self.samples[i].y.view()))
    }

    /// Ground truths `[w; b]` of the selected samples stacked as columns (2P × B).
    pub fn stacked_truths(&self, idx: &[usize]) -> Array2<f64> {
        let xs: Vec<_> = idx.iter().map(|&i| self.samples[i].x()).collect();
        let p = xs[0].len();
        stack_columns(p, xs.iter().map(|x| x.view()))
    }

    /// Splits off the trailing `n_tail` samples.
    pub fn split_tail(mut self, n_tail: usize) -> (Dataset, Dataset) {
        let cut = self.samples.len().saturating_sub(n_tail);
        let tail = self.samples.split_off(cut);
        let other = Dataset {
            samples: tail,
            spec: self.spec.clone(),
            master_seed: self.master_seed,
            dict_hash: self.dict_hash.clone(),
        };
        (self, other)
    }

    /// SHA-256 over the persisted blob; identifies a test set in reports.
    pub fn content_hash(&self) -> String {
        io::sha256_hex(&self.blob())
    }

    fn blob(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        for s in &self.samples {
            io::push_c64s(&mut buf, s.w.iter());
            io::push_c64s(&mut buf, s.b.iter());
            io::push_c64s(&mut buf, s.y.iter());
        }
        buf
    }

    /// Writes the samples (per sample: w, b, y as interleaved little-endian
    /// f64) and a JSON sidecar with the spec and per-sample metadata.
    pub fn save(&self, path: &Path) -> Result<()> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| domain("cannot save an empty dataset"))?;
        let meta = DatasetMeta {
            format_version: FORMAT_VERSION,
            layout: "per sample: w[M], b[D], y[D]; complex interleaved re/im; little-endian f64".into(),
            n: self.samples.len(),
            n_atoms: first.w.len(),
            n_meas: first.y.len(),
            master_seed: self.master_seed,
            dict_hash: self.dict_hash.clone(),
            spec: self.spec.clone(),
            samples: self
                .samples
                .iter()
                .map(|s| SampleMeta {
                    seed: s.seed,
                    e_sigma2: s.e_sigma2,
                    beta: s.beta,
                    snr_db: s.snr_db,
                    sir_db: s.sir_db,
                })
                .collect(),
        };
        io::write_pair(path, &self.blob(), &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (blob, meta): (Vec<u8>, DatasetMeta) = io::read_pair(path)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset format version {}",
                meta.format_version
            )));
        }
        if meta.samples.len() != meta.n {
            return Err(Error::Format("sample metadata count mismatch".into()));
        }
        let mut r = io::BlobReader::new(&blob);
        let mut samples = Vec::with_capacity(meta.n);
        for sm in meta.samples {
            let w = Array1::from(r.c64s(meta.n_atoms)?);
            let b = Array1::from(r.c64s(meta.n_meas)?);
            let y = Array1::from(r.c64s(meta.n_meas)?);
            samples.push(SceneSample {
                w,
                b,
                y,
                e_sigma2: sm.e_sigma2,
                beta: sm.beta,
                snr_db: sm.snr_db,
                sir_db: sm.sir_db,
                seed: sm.seed,
            });
        }
        r.finish()?;
        Ok(Self {
            samples,
            spec: meta.spec,
            master_seed: meta.master_seed,
            dict_hash: meta.dict_hash,
        })
    }
}

/// Input of the `gen` command: a setup and the scene to draw.
///
/// ```toml
/// [setup.grid]
/// n_tau = 3
/// n_vel = 5
/// n_theta1 = 3
/// n_theta2 = 2
///
/// [scene]
/// w_nnz = 2
/// b_nnz = 16
/// snr_db = "inf"
/// sir_db = 0.0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default)]
    pub setup: crate::radar::Setup,
    pub scene: SceneSpec,
}

impl GenConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.setup.radar.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn dict() -> Dictionary {
        Dictionary::standard()
    }

    #[test]
    fn noise_calibration_values() {
        assert_eq!(calibrate_noise(f64::INFINITY, 2.0, 64), 0.0);
        assert!((calibrate_noise(0.0, 2.0, 64) - 0.03125).abs() < 1e-15);
        assert!((calibrate_noise(15.0, 2.0, 64) - 9.882e-4).abs() < 1e-7);
    }

    #[test]
    fn interference_calibration_values() {
        assert!((calibrate_interference(0.0, 2.0, 16.0).unwrap() - 0.125).abs() < 1e-15);
        assert!((calibrate_interference(-5.0, 2.0, 16.0).unwrap() - 0.3953).abs() < 1e-4);
        assert_eq!(calibrate_interference(3.0, 0.0, 16.0).unwrap(), 0.0);
        assert!(matches!(
            calibrate_interference(0.0, 2.0, 0.0),
            Err(Error::Domain(_))
        ));
        assert_eq!(calibrate_interference(f64::INFINITY, 2.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn support_one_pulse_per_sweep_at_25_percent() {
        let cfg = RadarConfig::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = interference_support(16, &cfg, &mut rng).unwrap();
            assert_eq!(s.len(), 16);
            let mut per_sweep = [0usize; 4];
            for &l in s.iter().filter(|&&l| l < cfg.n_pulses()) {
                per_sweep[(l % cfg.n_pulses()) / cfg.n_freq] += 1;
            }
            assert_eq!(per_sweep, [1, 1, 1, 1]);
        }
    }

    #[test]
    fn support_empty_and_invalid() {
        let cfg = RadarConfig::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(interference_support(0, &cfg, &mut rng).unwrap().is_empty());
        let err = interference_support(6, &cfg, &mut rng).unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
        assert!(interference_support(68, &cfg, &mut rng).is_err());
    }

    #[test]
    fn support_eight_spreads_over_two_distinct_sweeps() {
        let cfg = RadarConfig::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sweeps_used = [0usize; 4];
        for _ in 0..1000 {
            let s = interference_support(8, &cfg, &mut rng).unwrap();
            assert_eq!(s.len(), 8);
            let sweeps: Vec<usize> = s
                .iter()
                .filter(|&&l| l < cfg.n_pulses())
                .map(|&l| l / cfg.n_freq)
                .collect();
            assert_eq!(sweeps.len(), 2);
            assert_ne!(sweeps[0], sweeps[1]);
            for m in sweeps {
                sweeps_used[m] += 1;
            }
        }
        // each sweep is picked with probability 1/2: 500 ± 3·√250
        for c in sweeps_used {
            assert!((c as f64 - 500.0).abs() < 3.0 * 250f64.sqrt(), "{sweeps_used:?}");
        }
    }

    #[test]
    fn sample_has_exact_sparsity_and_channel_structure() {
        let d = dict();
        let cfg = d.config();
        let spec = SceneSpec::new(3, 16, 15.0, 0.0);
        for seed in 0..50 {
            let s = sample_scene(&d, &spec, seed).unwrap();
            assert_eq!(s.w_nnz(), 3);
            assert_eq!(s.b_nnz(), 16);
            let support: HashSet<usize> = s
                .b
                .iter()
                .enumerate()
                .filter(|(_, z)| **z != Complex64::ZERO)
                .map(|(i, _)| i)
                .collect();
            for &l in &support {
                let pulse = l % cfg.n_pulses();
                for ch in 0..cfg.n_channels() {
                    assert!(support.contains(&(ch * cfg.n_pulses() + pulse)));
                }
            }
        }
    }

    #[test]
    fn noise_free_measurement_is_exact() {
        let d = dict();
        let s = sample_scene(&d, &SceneSpec::new(2, 16, f64::INFINITY, 0.0), 5).unwrap();
        assert_eq!(s.e_sigma2, 0.0);
        let recon = d.a_aug().dot(&s.x());
        for (a, b) in recon.iter().zip(s.y.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn seeded_samples_are_deterministic() {
        let d = dict();
        let spec = SceneSpec::new(2, 16, 15.0, 0.0);
        assert_eq!(sample_scene(&d, &spec, 9).unwrap(), sample_scene(&d, &spec, 9).unwrap());
        assert_ne!(sample_scene(&d, &spec, 9).unwrap(), sample_scene(&d, &spec, 10).unwrap());
    }

    #[test]
    fn single_sample_dataset_matches_seed_zero() {
        let d = dict();
        let spec = SceneSpec::new(2, 16, 10.0, 0.0);
        let ds = generate_dataset(&d, &spec, 1, 77).unwrap();
        assert_eq!(ds.samples[0], sample_scene(&d, &spec, sample_seed(77, 0)).unwrap());
        assert!(generate_dataset(&d, &spec, 0, 77).is_err());
    }

    #[test]
    fn dataset_roundtrip_is_bit_exact() {
        let d = dict();
        let mut spec = SceneSpec::new(2, 16, f64::INFINITY, 0.0);
        spec.randomize = Some(Randomize {
            sir_db: Some([-5.0, 5.0]),
            ..Default::default()
        });
        let ds = generate_dataset(&d, &spec, 20, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.bin");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.content_hash(), ds.content_hash());
    }

    #[test]
    fn randomized_b_nnz_stays_on_channel_multiples() {
        let d = dict();
        let mut spec = SceneSpec::new(2, 16, 15.0, 0.0);
        spec.randomize = Some(Randomize {
            b_nnz: Some([8, 32]),
            w_nnz: Some([2, 6]),
            ..Default::default()
        });
        let ds = generate_dataset(&d, &spec, 200, 4).unwrap();
        let mut seen_b = HashSet::new();
        let mut seen_w = HashSet::new();
        for s in &ds.samples {
            assert_eq!(s.b_nnz() % 4, 0);
            assert!((8..=32).contains(&s.b_nnz()));
            seen_b.insert(s.b_nnz());
            seen_w.insert(s.w_nnz());
        }
        assert_eq!(seen_b.len(), 7);
        assert_eq!(seen_w.len(), 5);
    }

    #[test]
    fn activity_model_support() {
        let d = dict();
        let mut spec = SceneSpec::new(2, 0, 15.0, 0.0);
        spec.activity = Some(ActivityModel {
            epsilon: 0.1,
            n_carriers: 8,
        });
        let p_hit = spec.activity.as_ref().unwrap().hit_probability(d.config()).unwrap();
        assert!((p_hit - 0.19).abs() < 1e-12);
        let ds = generate_dataset(&d, &spec, 2000, 8).unwrap();
        let mean_nnz = ds.samples.iter().map(|s| s.b_nnz()).sum::<usize>() as f64 / 2000.0;
        // 64 · 0.19 = 12.16; per-sample std ≤ 4·√(16·0.19·0.81) ≈ 6.3
        assert!((mean_nnz - 12.16).abs() < 0.5, "{mean_nnz}");
        for s in &ds.samples {
            assert_eq!(s.b_nnz() % 4, 0);
        }
    }

    #[test]
    fn spec_validation() {
        let d = dict();
        assert!(SceneSpec::new(151, 16, 15.0, 0.0).validate(&d).is_err());
        assert!(SceneSpec::new(2, 6, 15.0, 0.0).validate(&d).is_err());
        assert!(SceneSpec::new(2, 68, 15.0, 0.0).validate(&d).is_err());
        assert!(SceneSpec::new(2, 0, 15.0, 0.0).validate(&d).is_ok());
        assert!(sample_scene(&d, &SceneSpec::new(2, 0, 15.0, 0.0), 1).is_err());
        assert!(sample_scene(&d, &SceneSpec::new(2, 0, 15.0, f64::INFINITY), 1).is_ok());
    }

    #[test]
    fn spec_toml_accepts_infinite_snr() {
        let spec: SceneSpec = toml::from_str("w_nnz = 2\nb_nnz = 16\nsnr_db = inf\nsir_db = 0.0\n").unwrap();
        assert_eq!(spec.snr_db, f64::INFINITY);
        let spec: SceneSpec = toml::from_str("w_nnz = 2\nb_nnz = 16\nsnr_db = \"inf\"\nsir_db = 0.0\n").unwrap();
        assert_eq!(spec.snr_db, f64::INFINITY);
    }
}
