//! Least-squares closest point to a bundle of rays.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

/// Smallest accepted eigenvalue ratio of the normal matrix.
pub const MIN_CONDITION: f64 = 1e-8;

fn normal_system(origins: &[Vector3<f64>], dirs: &[Vector3<f64>], visible: &[bool], shift: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>, usize) {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    let mut n = 0;
    for ((o, d), &g) in origins.iter().zip(dirs).zip(visible) {
        if !g {
            continue;
        }
        let p = Matrix3::identity() - d * d.transpose();
        a += p;
        b += p * (o - shift);
        n += 1;
    }
    (a, b, n)
}

/// Solves `(sum_i g_i (I - d_i d_i^T)) x = sum_i g_i (I - d_i d_i^T) o_i`.
///
/// Directions must be unit length. Fails with fewer than two visible rays or when the
/// rays are (nearly) parallel.
pub fn triangulate(origins: &[Vector3<f64>], dirs: &[Vector3<f64>], visible: &[bool]) -> Result<Vector3<f64>> {
    if origins.len() != dirs.len() || dirs.len() != visible.len() {
        return Err(Error::Shape(format!(
            "{} origins, {} directions, {} visibility flags",
            origins.len(),
            dirs.len(),
            visible.len()
        )));
    }
    let count = visible.iter().filter(|&&g| g).count();
    if count < 2 {
        return Err(Error::Numeric(format!("triangulation needs 2 visible rays, got {count}")));
    }
    // Work relative to the mean visible origin to keep the right-hand side small.
    let shift = origins
        .iter()
        .zip(visible)
        .filter(|(_, &g)| g)
        .fold(Vector3::zeros(), |s, (o, _)| s + o)
        / count as f64;
    let (a, b, _) = normal_system(origins, dirs, visible, &shift);
    let eig = SymmetricEigen::new(a).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo >= MIN_CONDITION * hi) {
        return Err(Error::Numeric("degenerate ray configuration (near-parallel rays)".into()));
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("degenerate ray configuration".into()))?;
    let mut x = chol.solve(&b);
    let r = b - a * x;
    x += chol.solve(&r);
    Ok(x + shift)
}

/// `||A x - b||` of the normal equations, with the right-hand side norm.
pub fn triangulation_residual(origins: &[Vector3<f64>], dirs: &[Vector3<f64>], visible: &[bool], x: &Vector3<f64>) -> (f64, f64) {
    let (a, b, _) = normal_system(origins, dirs, visible, &Vector3::zeros());
    ((a * x - b).norm(), b.norm())
}
