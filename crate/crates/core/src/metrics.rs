//! Image quality and temporal coherence: PSNR, SSIM, flicker and the photometric loss.

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// PSNR reported in JSON when the images are identical.
pub const PSNR_CAP: f64 = 99.0;

fn check_same(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "image {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

pub fn mse(pred: &ImageBuffer, gt: &ImageBuffer) -> Result<f64> {
    check_same(pred, gt)?;
    let s: f64 = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
        .sum();
    Ok(s / pred.data.len().max(1) as f64)
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`; `+inf` when they are identical.
pub fn psnr(pred: &ImageBuffer, gt: &ImageBuffer) -> Result<f64> {
    let m = mse(pred, gt)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// PSNR clamped to [`PSNR_CAP`] for reports.
pub fn capped(psnr: f64) -> f64 {
    psnr.min(PSNR_CAP)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable valid-region filtering of a `w x h` plane.
fn filter_valid(x: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..SSIM_WINDOW).map(|k| g[k] * x[y * w + ox + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(oy + k) * ow + ox]).sum();
        }
    }
    out
}

/// Mean SSIM on luma (channel mean), 11x11 Gaussian window with sigma 1.5, valid region.
pub fn ssim(pred: &ImageBuffer, gt: &ImageBuffer) -> Result<f64> {
    check_same(pred, gt)?;
    let (w, h) = (pred.width as usize, pred.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!("ssim needs at least 11x11 pixels, got {w}x{h}")));
    }
    let a = pred.luma();
    let b = gt.luma();
    let g = gaussian_window();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&a, w, h, &g);
    let mu_b = filter_valid(&b, w, h, &g);
    let aa = filter_valid(&prod(&a, &a), w, h, &g);
    let bb = filter_valid(&prod(&b, &b), w, h, &g);
    let ab = filter_valid(&prod(&a, &b), w, h, &g);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Image to feature vector, a stand-in for a pretrained perceptual network.
pub trait FeatureExtractor {
    fn extract(&self, img: &ImageBuffer) -> Result<Vec<f64>>;
}

/// The pixel values themselves.
#[derive(Debug, Clone, Copy, Default)]
pub struct RawPixels;

impl FeatureExtractor for RawPixels {
    fn extract(&self, img: &ImageBuffer) -> Result<Vec<f64>> {
        Ok(img.data.iter().map(|&v| v as f64).collect())
    }
}

/// Two levels of seeded random 3x3 convolutions (8 channels, ReLU, 2x2 average pooling);
/// each level is average-pooled to a 4x4 grid, giving 256 features.
#[derive(Debug, Clone)]
pub struct FixedConvBank {
    /// `[out, in, 3, 3]` per level.
    levels: Vec<(usize, usize, Vec<f64>)>,
}

pub const CONV_CHANNELS: usize = 8;
const POOL_GRID: usize = 4;

impl FixedConvBank {
    pub fn new(seed: u64) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut levels = Vec::new();
        let mut cin = 3;
        for _ in 0..2 {
            let bound = 1.0 / ((cin * 9) as f64).sqrt();
            let w = (0..CONV_CHANNELS * cin * 9).map(|_| rng.gen_range(-bound..bound)).collect();
            levels.push((CONV_CHANNELS, cin, w));
            cin = CONV_CHANNELS;
        }
        FixedConvBank { levels }
    }

    pub fn dim(&self) -> usize {
        self.levels.len() * CONV_CHANNELS * POOL_GRID * POOL_GRID
    }
}

impl Default for FixedConvBank {
    fn default() -> Self {
        Self::new(0)
    }
}

/// Channel-major planes.
struct Planes {
    c: usize,
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Planes {
    fn at(&self, c: usize, x: isize, y: isize) -> f64 {
        if x < 0 || y < 0 || x >= self.w as isize || y >= self.h as isize {
            return 0.0;
        }
        self.data[(c * self.h + y as usize) * self.w + x as usize]
    }

    fn conv_relu(&self, cout: usize, w: &[f64]) -> Planes {
        let mut data = vec![0.0; cout * self.w * self.h];
        for o in 0..cout {
            for y in 0..self.h {
                for x in 0..self.w {
                    let mut s = 0.0;
                    for i in 0..self.c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let wt = w[((o * self.c + i) * 3 + ky) * 3 + kx];
                                s += wt * self.at(i, x as isize + kx as isize - 1, y as isize + ky as isize - 1);
                            }
                        }
                    }
                    data[(o * self.h + y) * self.w + x] = s.max(0.0);
                }
            }
        }
        Planes {
            c: cout,
            w: self.w,
            h: self.h,
            data,
        }
    }

    /// Mean over the cells of an `nx x ny` partition (bin edges by integer division).
    fn adaptive_pool(&self, nx: usize, ny: usize) -> Planes {
        let mut data = Vec::with_capacity(self.c * nx * ny);
        for c in 0..self.c {
            for by in 0..ny {
                let (y0, y1) = (by * self.h / ny, ((by + 1) * self.h).div_ceil(ny));
                for bx in 0..nx {
                    let (x0, x1) = (bx * self.w / nx, ((bx + 1) * self.w).div_ceil(nx));
                    let mut s = 0.0;
                    for y in y0..y1.max(y0 + 1).min(self.h) {
                        for x in x0..x1.max(x0 + 1).min(self.w) {
                            s += self.data[(c * self.h + y) * self.w + x];
                        }
                    }
                    let n = ((y1.max(y0 + 1).min(self.h) - y0) * (x1.max(x0 + 1).min(self.w) - x0)).max(1);
                    data.push(s / n as f64);
                }
            }
        }
        Planes { c: self.c, w: nx, h: ny, data }
    }
}

impl FeatureExtractor for FixedConvBank {
    fn extract(&self, img: &ImageBuffer) -> Result<Vec<f64>> {
        if img.channels != 3 {
            return Err(Error::Shape(format!("conv features need RGB, got {} channels", img.channels)));
        }
        let (w, h) = (img.width as usize, img.height as usize);
        if w < 2 * POOL_GRID || h < 2 * POOL_GRID {
            return Err(Error::Shape(format!("conv features need at least 8x8 pixels, got {w}x{h}")));
        }
        let mut data = vec![0.0; 3 * w * h];
        for (i, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = px[c] as f64;
            }
        }
        let mut x = Planes { c: 3, w, h, data };
        let mut out = Vec::with_capacity(self.dim());
        for (cout, _, wts) in &self.levels {
            let y = x.conv_relu(*cout, wts);
            let pooled = y.adaptive_pool((y.w / 2).max(1), (y.h / 2).max(1));
            out.extend(pooled.adaptive_pool(POOL_GRID, POOL_GRID).data);
            x = pooled;
        }
        Ok(out)
    }
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `|D_t - D*_t|` for `t = 1..T-1`, with `D_t = ||phi(I_t) - phi(I_{t-1})||`.
pub fn flicker_per_frame(pred: &[ImageBuffer], gt: &[ImageBuffer], phi: &dyn FeatureExtractor) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    if pred.len() < 2 {
        return Err(Error::Invalid("flicker needs at least two frames".into()));
    }
    for (p, g) in pred.iter().zip(gt) {
        check_same(p, g)?;
    }
    let fp = pred.iter().map(|i| phi.extract(i)).collect::<Result<Vec<_>>>()?;
    let fg = gt.iter().map(|i| phi.extract(i)).collect::<Result<Vec<_>>>()?;
    Ok((1..pred.len())
        .map(|t| (l2_dist(&fp[t], &fp[t - 1]) - l2_dist(&fg[t], &fg[t - 1])).abs())
        .collect())
}

/// Mean of [`flicker_per_frame`].
pub fn flicker_score(pred: &[ImageBuffer], gt: &[ImageBuffer], phi: &dyn FeatureExtractor) -> Result<f64> {
    let f = flicker_per_frame(pred, gt, phi)?;
    Ok(f.iter().sum::<f64>() / f.len() as f64)
}

/// `MSE + lambda ||phi(pred) - phi(gt)||`.
pub fn photometric_loss(pred: &ImageBuffer, gt: &ImageBuffer, lambda: f64, phi: &dyn FeatureExtractor) -> Result<f64> {
    let m = mse(pred, gt)?;
    if lambda == 0.0 {
        return Ok(m);
    }
    Ok(m + lambda * l2_dist(&phi.extract(pred)?, &phi.extract(gt)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(seed: u64, w: u32, h: u32) -> ImageBuffer {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * 3).map(|_| rng.gen::<f32>()).collect();
        ImageBuffer::from_data(w, h, 3, data).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = ImageBuffer::filled(8, 8, 3, 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(capped(f64::INFINITY), 99.0);
        let b = ImageBuffer::filled(8, 8, 3, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        let z = ImageBuffer::filled(8, 8, 3, 0.0);
        let o = ImageBuffer::filled(8, 8, 3, 1.0);
        assert_eq!(psnr(&z, &o).unwrap(), 0.0);
        assert!(psnr(&a, &ImageBuffer::new(4, 8, 3)).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = random(1, 24, 20);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let mut bin = ImageBuffer::new(24, 24, 3);
        for y in 0..24 {
            for x in 0..24 {
                let v = if (x / 3 + y / 3) % 2 == 0 { 1.0 } else { 0.0 };
                bin.pixel_mut(x, y).fill(v);
            }
        }
        let mut inv = bin.clone();
        inv.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        assert!(ssim(&inv, &bin).unwrap() < -0.5);
        assert!(ssim(&ImageBuffer::new(10, 10, 3), &ImageBuffer::new(10, 10, 3)).is_err());
    }

    /// Direct evaluation of one SSIM window centered in a 11x11 image.
    #[test]
    fn ssim_single_window_oracle() {
        let a = random(3, 11, 11);
        let b = random(4, 11, 11);
        let (la, lb) = (a.luma(), b.luma());
        let g1 = gaussian_window();
        let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for y in 0..11 {
            for x in 0..11 {
                let w = g1[x] * g1[y];
                let (p, q) = (la[y * 11 + x], lb[y * 11 + x]);
                ma += w * p;
                mb += w * q;
                saa += w * p * p;
                sbb += w * q * q;
                sab += w * p * q;
            }
        }
        let (va, vb, cv) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
        let (c1, c2) = (1e-4, 9e-4);
        let want = ((2.0 * ma * mb + c1) * (2.0 * cv + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn flicker_examples() {
        let f0 = ImageBuffer::filled(8, 8, 3, 0.2);
        let f1 = ImageBuffer::filled(8, 8, 3, 0.3);
        let seq = vec![f0.clone(), f1.clone(), f0.clone()];
        assert_eq!(flicker_score(&seq, &seq, &RawPixels).unwrap(), 0.0);
        let still = vec![f1.clone(); 3];
        assert_eq!(flicker_score(&vec![f0.clone(); 3], &still, &RawPixels).unwrap(), 0.0);
        let alt: Vec<_> = (0..6).map(|t| if t % 2 == 0 { f0.clone() } else { f1.clone() }).collect();
        let delta = (8.0 * 8.0 * 3.0 * 0.01f64).sqrt();
        let got = flicker_score(&alt, &vec![f0.clone(); 6], &RawPixels).unwrap();
        assert!((got - delta).abs() < 1e-6, "{got} vs {delta}");
        assert!(flicker_score(&seq[..1], &seq[..1], &RawPixels).is_err());
        assert!(flicker_score(&seq, &seq[..2], &RawPixels).is_err());
    }

    #[test]
    fn conv_bank_shape_and_determinism() {
        let bank = FixedConvBank::new(5);
        let img = random(2, 32, 24);
        let f = bank.extract(&img).unwrap();
        assert_eq!(f.len(), 256);
        assert_eq!(f, FixedConvBank::new(5).extract(&img).unwrap());
        assert_ne!(f, bank.extract(&random(3, 32, 24)).unwrap());
    }

    #[test]
    fn loss_examples() {
        let a = random(7, 16, 16);
        let b = random(8, 16, 16);
        let bank = FixedConvBank::default();
        assert_eq!(photometric_loss(&a, &a, 0.5, &bank).unwrap(), 0.0);
        assert_eq!(photometric_loss(&a, &b, 0.0, &bank).unwrap(), mse(&a, &b).unwrap());
        assert!(photometric_loss(&a, &b, 0.5, &bank).unwrap() > mse(&a, &b).unwrap());
    }

    proptest! {
        #[test]
        fn symmetric_metrics(s1 in 0u64..1000, s2 in 0u64..1000) {
            let a = random(s1, 12, 12);
            let b = random(s2 + 1000, 12, 12);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn flicker_is_nonnegative_and_shift_invariant(seed in 0u64..500, shift in -0.3f32..0.3) {
            let p: Vec<_> = (0..4).map(|i| random(seed * 8 + i, 6, 6)).collect();
            let g: Vec<_> = (0..4).map(|i| random(seed * 8 + 4 + i, 6, 6)).collect();
            let base = flicker_score(&p, &g, &RawPixels).unwrap();
            prop_assert!(base >= 0.0);
            // The same additive perturbation on every frame of both sequences.
            let same_shift = |s: &[ImageBuffer]| -> Vec<ImageBuffer> {
                s.iter().map(|im| {
                    let mut o = im.clone();
                    o.data.iter_mut().for_each(|v| *v += shift);
                    o
                }).collect()
            };
            let moved = flicker_score(&same_shift(&p), &same_shift(&g), &RawPixels).unwrap();
            prop_assert!((moved - base).abs() < 1e-5);
        }
    }
}
