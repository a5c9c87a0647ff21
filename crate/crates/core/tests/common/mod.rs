#![allow(dead_code)]

use admmnet::admm::{precompute, AdmmCache, SolverParams};
use admmnet::net::{init_from_cache, Network};
use admmnet::scene::{Dataset, SceneSample, SceneSpec};
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TINY_PARAMS: SolverParams = SolverParams {
    rho: 0.5,
    alpha: 1.5,
    eta: 1.0,
    lambda1: 0.05,
    lambda2: 0.05,
};

pub fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// Random `A = [Φ | I]` with `Φ` of size d × m and unit-norm columns.
pub fn tiny_a(seed: u64, d: usize, m: usize) -> Array2<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Array2::zeros((d, m + d));
    for j in 0..m {
        let col = Array1::from_shape_fn(d, |_| cn(&mut rng));
        let n = col.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        a.column_mut(j).assign(&col.mapv(|c| c / n));
    }
    for i in 0..d {
        a[[i, m + i]] = Complex64::ONE;
    }
    a
}

pub fn tiny_cache(seed: u64, d: usize, m: usize) -> (Array2<Complex64>, AdmmCache) {
    let a = tiny_a(seed, d, m);
    let cache = precompute(a.view(), TINY_PARAMS.rho, m).unwrap();
    (a, cache)
}

pub fn tiny_net(k: usize, cache: &AdmmCache) -> Network {
    init_from_cache(k, cache, &TINY_PARAMS).unwrap()
}

/// Samples with 2 image and 2 interference nonzeros plus light noise.
pub fn tiny_dataset(a: &Array2<Complex64>, m: usize, n: usize, seed: u64) -> Dataset {
    let d = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let mut w = Array1::zeros(m);
            for j in index::sample(&mut rng, m, 2) {
                w[j] = cn(&mut rng);
            }
            let mut b = Array1::zeros(d);
            for j in index::sample(&mut rng, d, 2) {
                b[j] = cn(&mut rng) * 0.5;
            }
            let mut x = Array1::zeros(m + d);
            x.slice_mut(ndarray::s![..m]).assign(&w);
            x.slice_mut(ndarray::s![m..]).assign(&b);
            let y = a.dot(&x) + Array1::from_shape_fn(d, |_| cn(&mut rng) * 0.01);
            SceneSample {
                w,
                b,
                y,
                e_sigma2: 0.0,
                beta: 0.0,
                snr_db: f64::INFINITY,
                sir_db: 0.0,
                seed: i as u64,
            }
        })
        .collect();
    Dataset {
        samples,
        spec: SceneSpec::new(2, 2, f64::INFINITY, 0.0),
        master_seed: seed,
        dict_hash: String::new(),
    }
}
