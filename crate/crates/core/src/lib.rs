//! Joint sparse radar imaging and interference removal.
//!
//! A stepped-frequency MIMO radar observes `y = Φw + b + e`: a sparse
//! angle-range-Doppler image `w` seen through a steering dictionary `Φ`, plus
//! sparse communication interference `b` and noise. This crate recovers both
//! `w` and `b` with a relaxed two-penalty complex ADMM solver, or with an
//! unfolded network whose stages are trainable copies of that iteration.
//!
//! ```
//! use admmnet::{admm, radar::Dictionary, scene};
//!
//! let dict = Dictionary::standard();
//! let spec = scene::SceneSpec::new(2, 16, f64::INFINITY, 0.0);
//! let sample = scene::sample_scene(&dict, &spec, 7).unwrap();
//!
//! let params = admm::SolverParams::default();
//! let cache = admm::AdmmCache::two_penalty(&dict, params.rho).unwrap();
//! let sol = admm::admm_solve(&cache, sample.y.view(), &params, &admm::StoppingRule::fixed(200), None).unwrap();
//! let err = admm::nmse(sol.x_hat.view(), sample.x().view()).unwrap();
//! assert!(err < -10.0);
//! ```

pub mod admm;
pub mod bench;
pub mod error;
pub mod io;
pub mod net;
pub mod radar;
pub mod scene;
pub mod stacking;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod booktest {
    macro_rules! book_chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $path))]
            mod $name {}
        };
    }
    book_chapter!(intro, "introduction.md");
    book_chapter!(radar_model, "radar-model.md");
    book_chapter!(scenes, "scenes.md");
    book_chapter!(admm, "admm.md");
    book_chapter!(network, "network.md");
    book_chapter!(training, "training.md");
    book_chapter!(experiments, "experiments.md");
}
