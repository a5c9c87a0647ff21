//! Stepped-frequency MIMO radar measurement model for a single range cell.
//!
//! A scatterer at angular coordinates `(theta1, theta2)`, delay offset `tau`
//! and radial velocity `v` produces the measurement signature
//!
//! ```text
//! atom = h(theta1, theta2) ⊗ [ (v_steer(v) ⊗ r_steer(tau, v)) ⊙ c(v) ]
//! ```
//!
//! Flat measurement index for receiver `q`, transmitter `p`, sweep `m` and
//! pulse `n` (all zero-based) is `(q·N_T + p)·(N·N_d) + m·N + n`.

use std::path::Path;

use ndarray::{s, Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::io;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Slack on closed-interval domain checks, relative to the bound.
const DOMAIN_SLACK: f64 = 1e-12;

#[inline]
fn phasor(cycles: f64) -> Complex64 {
    Complex64::cis(-TWO_PI * cycles)
}

/// Physical constants of the radar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarConfig {
    /// Frequency steps per sweep (N).
    pub n_freq: usize,
    /// Number of sweeps (N_d).
    pub n_sweeps: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    /// Start frequency in Hz.
    pub f0: f64,
    /// Frequency step in Hz.
    pub delta_f: f64,
    /// Pulse duration T in seconds.
    pub pulse_dur: f64,
    /// Pulse repetition interval T_r in seconds.
    pub pri: f64,
    /// Tx element spacing, in start-carrier wavelengths.
    pub d_tx: f64,
    /// Rx element spacing, in start-carrier wavelengths.
    pub d_rx: f64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl RadarConfig {
    /// The desk-scale 2×2 MIMO, 4-step, 4-sweep radar (D = 64).
    pub fn standard() -> Self {
        Self {
            n_freq: 4,
            n_sweeps: 4,
            n_tx: 2,
            n_rx: 2,
            f0: 2e9,
            delta_f: 1e6,
            pulse_dur: 1e-6,
            pri: 66e-6,
            d_tx: 1.0,
            d_rx: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_freq == 0 || self.n_sweeps == 0 || self.n_tx == 0 || self.n_rx == 0 {
            return Err(Error::Config("all antenna/pulse counts must be ≥ 1".into()));
        }
        for (name, v) in [
            ("f0", self.f0),
            ("delta_f", self.delta_f),
            ("pulse_dur", self.pulse_dur),
            ("pri", self.pri),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.pri < 2.0 * self.pulse_dur {
            return Err(Error::Config(format!(
                "pri ({}) must be at least twice the pulse duration ({})",
                self.pri, self.pulse_dur
            )));
        }
        if !(self.d_tx.is_finite() && self.d_rx.is_finite()) {
            return Err(Error::Config("array spacings must be finite".into()));
        }
        Ok(())
    }

    /// Largest unambiguous radial speed, `c / (4 f0 N T_r)`.
    pub fn v_max(&self) -> f64 {
        SPEED_OF_LIGHT / (4.0 * self.f0 * self.n_freq as f64 * self.pri)
    }

    /// Number of virtual MIMO channels, `N_T·N_R`.
    pub fn n_channels(&self) -> usize {
        self.n_tx * self.n_rx
    }

    /// Pulses per channel, `N·N_d`.
    pub fn n_pulses(&self) -> usize {
        self.n_freq * self.n_sweeps
    }

    /// Measurement dimension D = N_T·N_R·N·N_d.
    pub fn meas_dim(&self) -> usize {
        self.n_channels() * self.n_pulses()
    }

    /// Flat measurement index of (receiver q, transmitter p, sweep m, pulse n).
    pub fn flat_index(&self, q: usize, p: usize, m: usize, n: usize) -> usize {
        (q * self.n_tx + p) * self.n_pulses() + m * self.n_freq + n
    }

    pub fn hash(&self) -> String {
        io::json_hash(self)
    }

    fn check_tau(&self, tau: f64) -> Result<()> {
        let half = 0.5 * self.pulse_dur;
        if !(tau.is_finite() && tau.abs() <= half * (1.0 + DOMAIN_SLACK)) {
            return Err(domain(format!("delay offset {tau} outside [-T/2, T/2]")));
        }
        Ok(())
    }

    fn check_vel(&self, v: f64) -> Result<()> {
        let vmax = self.v_max();
        if !(v.is_finite() && v.abs() <= vmax * (1.0 + DOMAIN_SLACK)) {
            return Err(domain(format!("velocity {v} outside ±v_max = ±{vmax}")));
        }
        Ok(())
    }

    fn check_theta(theta: f64) -> Result<()> {
        if !(0.0..1.0).contains(&theta) {
            return Err(domain(format!("angle coordinate {theta} outside [0, 1)")));
        }
        Ok(())
    }
}

/// Intra-sweep (range) steering vector, length N.
pub fn range_steering(tau: f64, v: f64, cfg: &RadarConfig) -> Result<Array1<Complex64>> {
    cfg.check_tau(tau)?;
    cfg.check_vel(v)?;
    let beta = 2.0 * v / SPEED_OF_LIGHT;
    Ok(Array1::from_shape_fn(cfg.n_freq, |n| {
        let n = n as f64;
        let f_n = cfg.f0 + n * cfg.delta_f;
        phasor(n * cfg.delta_f * tau + f_n * beta * n * cfg.pri)
    }))
}

/// Inter-sweep (Doppler) steering vector, length N_d.
pub fn velocity_steering(v: f64, cfg: &RadarConfig) -> Result<Array1<Complex64>> {
    cfg.check_vel(v)?;
    let beta = 2.0 * v / SPEED_OF_LIGHT;
    let sweep = cfg.n_freq as f64 * cfg.pri;
    Ok(Array1::from_shape_fn(cfg.n_sweeps, |m| {
        phasor(cfg.f0 * beta * m as f64 * sweep)
    }))
}

/// Range-Doppler coupling terms, length N·N_d, indexed `n + m·N`.
pub fn distortion_vector(v: f64, cfg: &RadarConfig) -> Result<Array1<Complex64>> {
    cfg.check_vel(v)?;
    let beta = 2.0 * v / SPEED_OF_LIGHT;
    let sweep = cfg.n_freq as f64 * cfg.pri;
    Ok(Array1::from_shape_fn(cfg.n_pulses(), |idx| {
        let n = (idx % cfg.n_freq) as f64;
        let m = (idx / cfg.n_freq) as f64;
        phasor(n * cfg.delta_f * beta * m * sweep)
    }))
}

/// Cross-array response `h_R(theta1) ⊗ h_T(theta2)`, length N_T·N_R with the
/// transmitter index varying fastest.
pub fn array_response(theta1: f64, theta2: f64, cfg: &RadarConfig) -> Result<Array1<Complex64>> {
    RadarConfig::check_theta(theta1)?;
    RadarConfig::check_theta(theta2)?;
    Ok(Array1::from_shape_fn(cfg.n_channels(), |idx| {
        let p = (idx % cfg.n_tx) as f64;
        let q = (idx / cfg.n_tx) as f64;
        phasor(cfg.d_rx * theta1 * q) * phasor(cfg.d_tx * theta2 * p)
    }))
}

/// Unnormalized dictionary atom for one scatterer, length D.
pub fn atom(
    theta1: f64,
    theta2: f64,
    tau: f64,
    v: f64,
    cfg: &RadarConfig,
) -> Result<Array1<Complex64>> {
    let h = array_response(theta1, theta2, cfg)?;
    let r = range_steering(tau, v, cfg)?;
    let vs = velocity_steering(v, cfg)?;
    let c = distortion_vector(v, cfg)?;
    let np = cfg.n_pulses();
    // (v ⊗ r) ⊙ c, pulse index n fastest
    let inner = Array1::from_shape_fn(np, |idx| vs[idx / cfg.n_freq] * r[idx % cfg.n_freq] * c[idx]);
    Ok(Array1::from_shape_fn(cfg.meas_dim(), |l| h[l / np] * inner[l % np]))
}

/// Number of points along each grid axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSizes {
    pub n_tau: usize,
    pub n_vel: usize,
    pub n_theta1: usize,
    pub n_theta2: usize,
}

impl Default for GridSizes {
    fn default() -> Self {
        Self {
            n_tau: 5,
            n_vel: 5,
            n_theta1: 3,
            n_theta2: 2,
        }
    }
}

impl GridSizes {
    pub fn total(&self) -> usize {
        self.n_tau * self.n_vel * self.n_theta1 * self.n_theta2
    }
}

/// Order in which grid points map to dictionary columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnOrder {
    /// Delay varies fastest, then velocity, then theta1, then theta2.
    TauVelTheta1Theta2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub tau: f64,
    pub vel: f64,
    pub theta1: f64,
    pub theta2: f64,
}

/// The on-grid parameter set indexing the dictionary columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub taus: Vec<f64>,
    pub vels: Vec<f64>,
    pub theta1s: Vec<f64>,
    pub theta2s: Vec<f64>,
    pub order: ColumnOrder,
}

/// Integer offsets of a grid axis centered on zero: `-M/2 .. M/2-1` for even
/// `M`, symmetric `-(M-1)/2 ..= (M-1)/2` for odd `M`.
fn centered_window(size: usize) -> impl Iterator<Item = i64> {
    let half = (size / 2) as i64;
    let lo = -half;
    (0..size as i64).map(move |k| lo + k)
}

impl Grid {
    pub fn build(cfg: &RadarConfig, sizes: GridSizes) -> Result<Self> {
        if sizes.n_tau == 0 || sizes.n_vel == 0 || sizes.n_theta1 == 0 || sizes.n_theta2 == 0 {
            return Err(Error::Config("grid sizes must be ≥ 1".into()));
        }
        let t = cfg.pulse_dur;
        let vmax = cfg.v_max();
        let taus = centered_window(sizes.n_tau)
            .map(|m| t * m as f64 / sizes.n_tau as f64)
            .collect();
        let vels = centered_window(sizes.n_vel)
            .map(|m| vmax * m as f64 / sizes.n_vel as f64)
            .collect();
        let angles = |n: usize| (0..n).map(|m| m as f64 / n as f64).collect();
        Ok(Self {
            taus,
            vels,
            theta1s: angles(sizes.n_theta1),
            theta2s: angles(sizes.n_theta2),
            order: ColumnOrder::TauVelTheta1Theta2,
        })
    }

    pub fn sizes(&self) -> GridSizes {
        GridSizes {
            n_tau: self.taus.len(),
            n_vel: self.vels.len(),
            n_theta1: self.theta1s.len(),
            n_theta2: self.theta2s.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.sizes().total()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column index of the grid point with the given per-axis indices.
    pub fn column(&self, i_tau: usize, i_vel: usize, i_theta1: usize, i_theta2: usize) -> usize {
        let s = self.sizes();
        debug_assert!(i_tau < s.n_tau && i_vel < s.n_vel);
        debug_assert!(i_theta1 < s.n_theta1 && i_theta2 < s.n_theta2);
        i_tau + s.n_tau * (i_vel + s.n_vel * (i_theta1 + s.n_theta1 * i_theta2))
    }

    /// Per-axis indices `(tau, vel, theta1, theta2)` of a column.
    pub fn axes_of(&self, col: usize) -> (usize, usize, usize, usize) {
        let s = self.sizes();
        let i_tau = col % s.n_tau;
        let rest = col / s.n_tau;
        let i_vel = rest % s.n_vel;
        let rest = rest / s.n_vel;
        (i_tau, i_vel, rest % s.n_theta1, rest / s.n_theta1)
    }

    pub fn point(&self, col: usize) -> GridPoint {
        let (a, b, c, d) = self.axes_of(col);
        GridPoint {
            tau: self.taus[a],
            vel: self.vels[b],
            theta1: self.theta1s[c],
            theta2: self.theta2s[d],
        }
    }
}

/// Radar constants plus grid sizes, as read from a setup file.
///
/// ```toml
/// [radar]
/// n_freq = 4
/// n_sweeps = 4
/// n_tx = 2
/// n_rx = 2
/// f0 = 2e9
/// delta_f = 1e6
/// pulse_dur = 1e-6
/// pri = 66e-6
/// d_tx = 1.0
/// d_rx = 1.0
///
/// [grid]
/// n_tau = 5
/// n_vel = 5
/// n_theta1 = 3
/// n_theta2 = 2
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    #[serde(default)]
    pub radar: RadarConfig,
    #[serde(default)]
    pub grid: GridSizes,
}

impl Setup {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Setup = toml::from_str(text)?;
        s.radar.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn dictionary(&self) -> Result<Dictionary> {
        let grid = Grid::build(&self.radar, self.grid)?;
        Dictionary::build(&self.radar, grid)
    }
}

/// Unit-norm dictionary Φ (D × M) and the augmented matrix A = [Φ | I_D].
#[derive(Clone, Debug)]
pub struct Dictionary {
    phi: Array2<Complex64>,
    a_aug: Array2<Complex64>,
    column_norms: Array1<f64>,
    grid: Grid,
    config: RadarConfig,
    hash: String,
}

#[derive(Serialize, Deserialize)]
struct DictionaryMeta {
    format_version: u32,
    rows: usize,
    cols: usize,
    layout: String,
    config: RadarConfig,
    config_hash: String,
    grid: Grid,
    column_norms: Vec<f64>,
    content_hash: String,
}

impl Dictionary {
    pub fn build(cfg: &RadarConfig, grid: Grid) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.meas_dim();
        let m = grid.len();
        let mut phi = Array2::<Complex64>::zeros((d, m));
        let mut column_norms = Array1::<f64>::zeros(m);
        for col in 0..m {
            let pt = grid.point(col);
            let a = atom(pt.theta1, pt.theta2, pt.tau, pt.vel, cfg)?;
            let norm = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            column_norms[col] = norm;
            phi.column_mut(col).assign(&a.mapv(|c| c / norm));
        }
        let mut a_aug = Array2::<Complex64>::zeros((d, m + d));
        a_aug.slice_mut(s![.., ..m]).assign(&phi);
        for i in 0..d {
            a_aug[[i, m + i]] = Complex64::new(1.0, 0.0);
        }
        let hash = io::sha256_hex(&Self::blob(&phi));
        Ok(Self {
            phi,
            a_aug,
            column_norms,
            grid,
            config: cfg.clone(),
            hash,
        })
    }

    /// The standard radar on the 5×5×3×2 grid (Φ is 64 × 150).
    pub fn standard() -> Self {
        Setup::default()
            .dictionary()
            .expect("built-in setup is valid")
    }

    pub fn phi(&self) -> &Array2<Complex64> {
        &self.phi
    }

    pub fn a_aug(&self) -> &Array2<Complex64> {
        &self.a_aug
    }

    pub fn column_norms(&self) -> &Array1<f64> {
        &self.column_norms
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn config(&self) -> &RadarConfig {
        &self.config
    }

    /// Measurement dimension D.
    pub fn n_meas(&self) -> usize {
        self.phi.nrows()
    }

    /// Number of image grid points M.
    pub fn n_atoms(&self) -> usize {
        self.phi.ncols()
    }

    /// Number of unknowns in the joint problem, P = M + D.
    pub fn n_unknowns(&self) -> usize {
        self.a_aug.ncols()
    }

    /// SHA-256 of the exported Φ blob; ties datasets and checkpoints to a dictionary.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn blob(phi: &Array2<Complex64>) -> Vec<u8> {
        let mut buf = Vec::with_capacity(phi.len() * 16);
        io::push_c64s(&mut buf, phi.iter());
        buf
    }

    /// Writes Φ as row-major interleaved little-endian f64 plus a JSON sidecar.
    pub fn export(&self, path: &Path) -> Result<()> {
        let meta = DictionaryMeta {
            format_version: 1,
            rows: self.n_meas(),
            cols: self.n_atoms(),
            layout: "row-major, complex interleaved re/im, little-endian f64".into(),
            config: self.config.clone(),
            config_hash: self.config.hash(),
            grid: self.grid.clone(),
            column_norms: self.column_norms.to_vec(),
            content_hash: self.hash.clone(),
        };
        io::write_pair(path, &Self::blob(&self.phi), &meta)
    }

    /// Reads an exported dictionary, checking it against a rebuild from the sidecar.
    pub fn import(path: &Path) -> Result<Self> {
        let (blob, meta): (Vec<u8>, DictionaryMeta) = io::read_pair(path)?;
        let mut r = io::BlobReader::new(&blob);
        let vals = r.c64s(meta.rows * meta.cols)?;
        r.finish()?;
        let phi = Array2::from_shape_vec((meta.rows, meta.cols), vals)
            .map_err(|e| Error::Format(e.to_string()))?;
        let rebuilt = Self::build(&meta.config, meta.grid)?;
        if rebuilt.phi != phi || rebuilt.hash != meta.content_hash {
            return Err(Error::Format(
                "dictionary blob does not match its configuration".into(),
            ));
        }
        Ok(rebuilt)
    }
}
