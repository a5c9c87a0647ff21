//! Real stacking of complex vectors and matrices.
//!
//! `stack(v) = [Re v; Im v]` is an isometry from `C^n` onto `R^{2n}`, and
//! `stack_matrix(C) = [[Re C, -Im C], [Im C, Re C]]` is the matching ring
//! homomorphism: `stack(C z) = stack_matrix(C) · stack(z)`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;

use crate::error::{domain, Result};

pub fn stack(v: ArrayView1<Complex64>) -> Array1<f64> {
    let n = v.len();
    let mut out = Array1::zeros(2 * n);
    for (i, z) in v.iter().enumerate() {
        out[i] = z.re;
        out[n + i] = z.im;
    }
    out
}

/// Inverse of [`stack`]: the top half becomes the real part, the bottom half
/// the imaginary part.
pub fn unstack(r: ArrayView1<f64>) -> Result<Array1<Complex64>> {
    if r.len() % 2 != 0 {
        return Err(domain(format!("cannot unstack odd length {}", r.len())));
    }
    let n = r.len() / 2;
    Ok(Array1::from_shape_fn(n, |i| Complex64::new(r[i], r[n + i])))
}

pub fn stack_matrix(c: ArrayView2<Complex64>) -> Array2<f64> {
    let (m, n) = c.dim();
    let mut out = Array2::zeros((2 * m, 2 * n));
    let re = c.mapv(|z| z.re);
    let im = c.mapv(|z| z.im);
    out.slice_mut(s![..m, ..n]).assign(&re);
    out.slice_mut(s![..m, n..]).assign(&im.mapv(|x| -x));
    out.slice_mut(s![m.., ..n]).assign(&im);
    out.slice_mut(s![m.., n..]).assign(&re);
    out
}

/// Stacks a batch of complex vectors into the columns of a `2n × B` matrix.
pub fn stack_columns<'a>(n: usize, cols: impl ExactSizeIterator<Item = ArrayView1<'a, Complex64>>) -> Array2<f64> {
    let mut out = Array2::zeros((2 * n, cols.len()));
    for (j, v) in cols.enumerate() {
        assert_eq!(v.len(), n, "column {j} has the wrong length");
        for (i, z) in v.iter().enumerate() {
            out[[i, j]] = z.re;
            out[[n + i, j]] = z.im;
        }
    }
    out
}
