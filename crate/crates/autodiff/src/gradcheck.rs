//! Central finite differences, used to validate analytic gradients.

use crate::Mat;

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn central_difference(mut f: impl FnMut(&Mat) -> f64, x: &Mat, h: f64) -> Mat {
    let mut probe = x.clone();
    let mut out = Mat::zeros(x.dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + h;
        let up = f(&probe);
        probe[[r, c]] = orig - h;
        let down = f(&probe);
        probe[[r, c]] = orig;
        out[[r, c]] = (up - down) / (2.0 * h);
    }
    out
}

/// Below this norm a gradient counts as zero, and differences are compared
/// absolutely; finite differences of an exactly-zero gradient are roundoff.
pub const ZERO_GRAD_NORM: f64 = 1e-8;

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, or the absolute difference norm when both are
/// below [`ZERO_GRAD_NORM`].
pub fn relative_error(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let scale = a
        .mapv(|v| v * v)
        .sum()
        .sqrt()
        .max(b.mapv(|v| v * v).sum().sqrt());
    if scale < ZERO_GRAD_NORM {
        diff
    } else {
        diff / scale
    }
}
