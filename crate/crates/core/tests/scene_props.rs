use admmnet::radar::{Dictionary, Grid, GridSizes, RadarConfig};
use admmnet::scene::{calibrate_interference, calibrate_noise, sample_scene, Randomize, SceneSpec};
use ndarray::Array1;
use num_complex::Complex64;
use proptest::prelude::*;
use std::sync::OnceLock;

fn dict() -> &'static Dictionary {
    static D: OnceLock<Dictionary> = OnceLock::new();
    D.get_or_init(Dictionary::standard)
}

fn energy(v: &Array1<Complex64>) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sparsity_and_channel_structure(w_nnz in 1usize..10, hits in 0usize..16, seed in any::<u64>()) {
        let d = dict();
        let cfg = d.config();
        let b_nnz = hits * cfg.n_channels();
        let sir = if hits == 0 { f64::INFINITY } else { 3.0 };
        let spec = SceneSpec::new(w_nnz, b_nnz, f64::INFINITY, sir);
        let s = sample_scene(d, &spec, seed).unwrap();
        prop_assert_eq!(s.w_nnz(), w_nnz);
        prop_assert_eq!(s.b_nnz(), b_nnz);
        let np = cfg.n_pulses();
        for l in 0..cfg.meas_dim() {
            if s.b[l] != Complex64::ZERO {
                let pulse = l % np;
                for ch in 0..cfg.n_channels() {
                    prop_assert!(s.b[ch * np + pulse] != Complex64::ZERO);
                }
            }
        }
        // noise-free: y = Φw + b exactly up to rounding
        let r = &s.y - &(d.phi().dot(&s.w) + &s.b);
        prop_assert!(energy(&r) < 1e-24 * (1.0 + energy(&s.y)));
        let again = sample_scene(d, &spec, seed).unwrap();
        prop_assert_eq!(again, s);
    }
}

#[test]
fn calibrated_noise_matches_monte_carlo() {
    let d = dict();
    for snr in [0.0, 15.0] {
        let spec = SceneSpec::new(2, 16, snr, 0.0);
        let (mut sig, mut noise) = (0.0, 0.0);
        for seed in 0..20_000 {
            let s = sample_scene(d, &spec, seed).unwrap();
            let clean = d.phi().dot(&s.w);
            sig += energy(&clean);
            noise += energy(&(&s.y - &clean - &s.b));
        }
        let ratio = sig / noise / 10f64.powf(snr / 10.0);
        assert!((ratio - 1.0).abs() < 0.02, "snr {snr}: ratio {ratio}");
    }
    assert!((calibrate_noise(0.0, 2.0, 64) - 0.03125).abs() < 1e-15);
    assert!((calibrate_noise(15.0, 2.0, 64) - 9.882e-4).abs() < 1e-7);
}

#[test]
fn calibrated_interference_matches_monte_carlo() {
    let d = dict();
    let spec = SceneSpec::new(2, 16, f64::INFINITY, -5.0);
    let (mut sig, mut intf) = (0.0, 0.0);
    for seed in 0..20_000 {
        let s = sample_scene(d, &spec, seed).unwrap();
        sig += energy(&d.phi().dot(&s.w));
        intf += energy(&s.b);
    }
    let ratio = sig / intf / 10f64.powf(-0.5);
    assert!((ratio - 1.0).abs() < 0.03, "ratio {ratio}");
    assert!((calibrate_interference(-5.0, 2.0, 16.0).unwrap() - 0.3953).abs() < 1e-4);
}

#[test]
fn randomized_snr_is_uniform() {
    let d = dict();
    let mut spec = SceneSpec::new(2, 16, 10.0, 0.0);
    spec.randomize = Some(Randomize {
        snr_db: Some([5.0, 20.0]),
        ..Randomize::default()
    });
    let n = 10_000;
    let bins = 10;
    let mut counts = vec![0usize; bins];
    for seed in 0..n as u64 {
        let s = sample_scene(d, &spec, seed).unwrap();
        assert!((5.0..=20.0).contains(&s.snr_db));
        let b = (((s.snr_db - 5.0) / 15.0) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let p = 1.0 / bins as f64;
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    for (i, c) in counts.iter().enumerate() {
        assert!((*c as f64 - mean).abs() <= 3.0 * sd, "bin {i}: {c}");
    }
}

#[test]
fn small_grid_scenes_work() {
    let cfg = RadarConfig::standard();
    let grid = Grid::build(
        &cfg,
        GridSizes {
            n_tau: 2,
            n_vel: 2,
            n_theta1: 1,
            n_theta2: 1,
        },
    )
    .unwrap();
    let d = Dictionary::build(&cfg, grid).unwrap();
    let s = sample_scene(&d, &SceneSpec::new(4, 4, 10.0, 0.0), 1).unwrap();
    assert_eq!(s.w_nnz(), 4);
    assert!(sample_scene(&d, &SceneSpec::new(5, 4, 10.0, 0.0), 1).is_err());
}
