//! Farthest point sampling.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Greedy max-min selection of `n` indices starting at `start`; ties go to the lower index.
/// Indices are returned in selection order.
pub fn fps_sample(points: &[Vector3<f64>], n: usize, start: usize) -> Result<Vec<usize>> {
    if n > points.len() {
        return Err(Error::Invalid(format!("cannot sample {n} of {} points", points.len())));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if start >= points.len() {
        return Err(Error::Invalid(format!("start index {start} out of range")));
    }
    let mut chosen = Vec::with_capacity(n);
    let mut min_d2 = vec![f64::INFINITY; points.len()];
    let mut cur = start;
    for _ in 0..n {
        chosen.push(cur);
        let c = points[cur];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, (p, d)) in points.iter().zip(min_d2.iter_mut()).enumerate() {
            *d = d.min((p - c).norm_squared());
            if *d > best.0 {
                best = (*d, i);
            }
        }
        cur = best.1;
    }
    Ok(chosen)
}
