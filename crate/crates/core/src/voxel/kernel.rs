//! Cubic B-spline transfer kernel.

use nalgebra::Vector3;

/// `(3|x|^3 - 6x^2 + 4) / 6` on `[-1, 1]`, zero outside.
#[inline]
pub fn cubic_kernel_1d(x: f64) -> f64 {
    let a = x.abs();
    if a > 1.0 {
        0.0
    } else {
        (3.0 * a * a * a - 6.0 * a * a + 4.0) / 6.0
    }
}

/// Separable kernel of an offset measured against per-axis spacings `h`.
pub fn cubic_kernel(offset: &Vector3<f64>, h: &Vector3<f64>) -> f64 {
    cubic_kernel_1d(offset.x / h.x) * cubic_kernel_1d(offset.y / h.y) * cubic_kernel_1d(offset.z / h.z)
}
