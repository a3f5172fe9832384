//! Dense f32 kernels: token matrices, linear maps, LayerNorm, GeLU and fast `exp`.
//!
//! Hot loops are written with explicit independent accumulators so LLVM vectorizes them
//! without reassociating floating-point sums; the same code is compiled once for the
//! baseline target and once with AVX2 enabled, selected at run time. Both builds perform
//! identical operations in identical order.

use crate::error::{Error, Result};
use crate::io::Tensor;

/// Compiles `$body` twice (baseline and AVX2) and dispatches at run time.
macro_rules! multiversion {
    ($(#[$m:meta])* $vis:vis fn $name:ident($($arg:ident : $ty:ty),* $(,)?) $(-> $ret:ty)? $body:block) => {
        $(#[$m])* $vis fn $name($($arg: $ty),*) $(-> $ret)? {
            #[inline(always)]
            fn imp($($arg: $ty),*) $(-> $ret)? $body
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                unsafe fn avx2($($arg: $ty),*) $(-> $ret)? {
                    imp($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the CPU supports AVX2.
                    return unsafe { avx2($($arg),*) };
                }
            }
            imp($($arg),*)
        }
    };
}


/// Row-major `rows x cols` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl TokenMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        TokenMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_data(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "token data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(TokenMatrix { rows, cols, data })
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Rows at `order`, in that order.
    pub fn gather_rows(&self, order: &[usize]) -> TokenMatrix {
        let mut out = TokenMatrix::zeros(order.len(), self.cols);
        for (i, &r) in order.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(r));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &TokenMatrix) {
        debug_assert_eq!(self.data.len(), other.data.len());
        add_in_place(&mut self.data, &other.data);
    }
}

const LANES: usize = 16;

#[inline(always)]
fn dot_inline(a: &[f32], b: &[f32]) -> f32 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f32; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    // Fixed pairwise reduction of the lanes.
    let mut w = LANES;
    while w > 1 {
        w /= 2;
        for l in 0..w {
            acc[l] += acc[l + w];
        }
    }
    acc[0] + tail
}

#[inline(always)]
fn axpy_inline(y: &mut [f32], a: f32, x: &[f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

multiversion! {
    /// Inner product with a fixed 16-lane summation order.
    pub fn dot(a: &[f32], b: &[f32]) -> f32 {
        dot_inline(a, b)
    }
}

multiversion! {
    /// `y += a * x`.
    pub fn axpy(y: &mut [f32], a: f32, x: &[f32]) {
        axpy_inline(y, a, x)
    }
}

multiversion! {
    fn add_in_place(y: &mut [f32], x: &[f32]) {
        for (a, b) in y.iter_mut().zip(x) {
            *a += b;
        }
    }
}

multiversion! {
    fn linear_kernel(x: &[f32], rows: usize, cols_in: usize, w: &[f32], cols_out: usize, out: &mut [f32]) {
        for r in 0..rows {
            let xr = &x[r * cols_in..(r + 1) * cols_in];
            let yr = &mut out[r * cols_out..(r + 1) * cols_out];
            for (o, y) in yr.iter_mut().enumerate() {
                *y = dot_inline(xr, &w[o * cols_in..(o + 1) * cols_in]);
            }
        }
    }
}

/// `y = x W^T` for a weight tensor of dims `[out, in]`.
pub fn linear(x: &TokenMatrix, w: &Tensor) -> Result<TokenMatrix> {
    if w.dims.len() != 2 || w.dims[1] != x.cols {
        return Err(Error::Shape(format!(
            "linear weight dims {:?} incompatible with input width {}",
            w.dims, x.cols
        )));
    }
    let out = w.dims[0];
    let mut y = TokenMatrix::zeros(x.rows, out);
    linear_kernel(&x.data, x.rows, x.cols, &w.data, out, &mut y.data);
    Ok(y)
}

/// Gain-only LayerNorm, `eps = 1e-6`.
pub fn layer_norm(x: &TokenMatrix, gain: &[f32]) -> TokenMatrix {
    let mut y = x.clone();
    for r in 0..x.rows {
        layer_norm_row(y.row_mut(r), gain);
    }
    y
}

pub(crate) fn layer_norm_row(v: &mut [f32], gain: &[f32]) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&a| a as f64).sum::<f64>() / n;
    let var = v.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-6).sqrt();
    for (a, g) in v.iter_mut().zip(gain) {
        *a = ((*a as f64 - mean) * inv) as f32 * g;
    }
}

multiversion! {
    /// In-place `exp` with ~2 ulp accuracy for arguments in `[-87, 88]`; smaller
    /// arguments flush to zero.
    pub fn exp_in_place(xs: &mut [f32]) {
        for x in xs.iter_mut() {
            *x = exp_approx(*x);
        }
    }
}

#[inline(always)]
fn exp_approx(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    const ROUND: f32 = 12_582_912.0; // 1.5 * 2^23
    let under = x < -87.0;
    let x = x.clamp(-87.0, 88.0);
    let m = x * LOG2E + ROUND;
    let n = m - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let p = 1.987_569_1e-4;
    let p = p * r + 1.398_199_9e-3;
    let p = p * r + 8.333_452e-3;
    let p = p * r + 4.166_579_6e-2;
    let p = p * r + 1.666_666_5e-1;
    let p = p * r + 0.5;
    let e = p * r * r + r + 1.0;
    // The low mantissa bits of `m` hold `n` as an integer.
    let ni = (m.to_bits() as i32).wrapping_sub(ROUND.to_bits() as i32);
    let scale = f32::from_bits((ni.wrapping_add(127) as u32) << 23);
    if under {
        0.0
    } else {
        e * scale
    }
}

multiversion! {
    /// Numerically stable softmax of one row.
    pub fn softmax_in_place(v: &mut [f32]) {
        let mut mx = [f32::NEG_INFINITY; LANES];
        let mut c = v.chunks_exact(LANES);
        for x in &mut c {
            for l in 0..LANES {
                mx[l] = mx[l].max(x[l]);
            }
        }
        let m = c.remainder().iter().chain(&mx).fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        for x in v.iter_mut() {
            *x = exp_approx(*x - m);
        }
        let inv = 1.0 / sum(v);
        for x in v.iter_mut() {
            *x *= inv;
        }
    }
}

/// Queries per attention block.
pub(crate) const QB: usize = 4;
/// Keys (and value columns) per register block.
pub(crate) const KB: usize = 16;
/// Keys per partial sum in [`pv_block`].
const PB: usize = 64;

multiversion! {
    /// Logits of `QB` queries (`q`: `QB x dh`) against keys `kt` (`dh x tp`, `tp` a
    /// multiple of `KB`) into `scores` (`QB x tp`). Each logit accumulates over `d` in order.
    pub(crate) fn qk_block(q: &[f32], kt: &[f32], dh: usize, tp: usize, scores: &mut [f32]) {
        for j0 in (0..tp).step_by(KB) {
            let mut acc = [[0.0f32; KB]; QB];
            for d in 0..dh {
                let k: &[f32; KB] = kt[d * tp + j0..d * tp + j0 + KB].try_into().unwrap();
                for (qi, a) in acc.iter_mut().enumerate() {
                    let s = q[qi * dh + d];
                    for l in 0..KB {
                        a[l] += s * k[l];
                    }
                }
            }
            for (qi, a) in acc.iter().enumerate() {
                scores[qi * tp + j0..qi * tp + j0 + KB].copy_from_slice(a);
            }
        }
    }
}

multiversion! {
    /// `out = P V` for `QB` probability rows of `p` (stride `tp`) over the first `t` keys;
    /// `v` is `tp x dhp` and `out` is `QB x dhp`, `dhp` a multiple of `KB`.
    pub(crate) fn pv_block(p: &[f32], tp: usize, t: usize, v: &[f32], dhp: usize, out: &mut [f32]) {
        for c0 in (0..dhp).step_by(KB) {
            let mut tot = [[0.0f32; KB]; QB];
            for j0 in (0..t).step_by(PB) {
                let mut acc = [[0.0f32; KB]; QB];
                for j in j0..(j0 + PB).min(t) {
                    let vr: &[f32; KB] = v[j * dhp + c0..j * dhp + c0 + KB].try_into().unwrap();
                    for (qi, a) in acc.iter_mut().enumerate() {
                        let s = p[qi * tp + j];
                        for l in 0..KB {
                            a[l] += s * vr[l];
                        }
                    }
                }
                for (tq, a) in tot.iter_mut().zip(&acc) {
                    for l in 0..KB {
                        tq[l] += a[l];
                    }
                }
            }
            for (qi, tq) in tot.iter().enumerate() {
                out[qi * dhp + c0..qi * dhp + c0 + KB].copy_from_slice(tq);
            }
        }
    }
}

/// Sum with the same fixed lane order as [`dot`].
#[inline(always)]
pub fn sum(v: &[f32]) -> f32 {
    let mut acc = [0.0f32; LANES];
    let mut c = v.chunks_exact(LANES);
    for x in &mut c {
        for l in 0..LANES {
            acc[l] += x[l];
        }
    }
    let tail: f32 = c.remainder().iter().sum();
    let mut w = LANES;
    while w > 1 {
        w /= 2;
        for l in 0..w {
            acc[l] += acc[l + w];
        }
    }
    acc[0] + tail
}

multiversion! {
    /// Tanh-approximated GeLU, in place.
    pub fn gelu_in_place(xs: &mut [f32]) {
        const C: f32 = 0.797_884_6; // sqrt(2 / pi)
        for x in xs.iter_mut() {
            let u = C * (*x + 0.044_715 * *x * *x * *x);
            // tanh(u) = 1 - 2 / (exp(2u) + 1)
            let t = 1.0 - 2.0 / (exp_approx(2.0 * u) + 1.0);
            *x = 0.5 * *x * (1.0 + t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dot_matches_f64_reference() {
        let a: Vec<f32> = (0..131).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..131).map(|i| (i as f32 * 0.11).cos()).collect();
        let want: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
        assert!((dot(&a, &b) as f64 - want).abs() < 1e-4);
    }

    #[test]
    fn dispatch_paths_agree_bitwise() {
        let a: Vec<f32> = (0..77).map(|i| (i as f32 * 0.7).sin()).collect();
        let b: Vec<f32> = (0..77).map(|i| (i as f32 * 0.3).cos()).collect();
        assert_eq!(dot(&a, &b).to_bits(), dot_inline(&a, &b).to_bits());
    }

    #[test]
    fn linear_applies_out_in_layout() {
        let x = TokenMatrix::from_data(1, 2, vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(linear(&x, &w).unwrap().data, vec![1.0, 2.0, 3.0]);
        assert!(linear(&x, &Tensor::zeros(vec![2, 3])).is_err());
    }

    #[test]
    fn layer_norm_normalizes() {
        let x = TokenMatrix::from_data(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = layer_norm(&x, &[1.0; 4]);
        let m: f32 = y.data.iter().sum::<f32>() / 4.0;
        let v: f32 = y.data.iter().map(|a| (a - m) * (a - m)).sum::<f32>() / 4.0;
        assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-4);
        assert_eq!(layer_norm(&TokenMatrix::zeros(1, 4), &[1.0; 4]).data, vec![0.0; 4]);
    }

    #[test]
    fn gelu_reference_points() {
        let mut v = vec![0.0, 1.0, -1.0, 3.0, -10.0];
        gelu_in_place(&mut v);
        let want = [0.0, 0.841_192, -0.158_808, 2.996_363, 0.0];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut v = vec![1e6, -1e6, 3.0, 0.0];
        softmax_in_place(&mut v);
        assert!((v.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        let mut single = vec![42.0];
        softmax_in_place(&mut single);
        assert_eq!(single, vec![1.0]);
    }

    proptest! {
        #[test]
        fn exp_is_accurate(x in -87.0f32..88.0) {
            let mut v = [x];
            exp_in_place(&mut v);
            let want = (x as f64).exp();
            prop_assert!(((v[0] as f64 - want) / want).abs() < 5e-7, "{} vs {}", v[0], want);
        }
    }
}
