//! Pixel-aligned multi-view predictor: patch embedding, transformer and an unpatchifying
//! linear head that emits one splat (plus features) per input pixel.
//!
//! Each pixel contributes `[r, g, b, d(3), m(3)]` (color and Plücker ray). Its raw head
//! output is `[t, opacity, quaternion(4), log_scale(3), sh(3S), features]`, and the splat
//! sits at `o + (near + softplus(t)) d` on the pixel ray.

use super::ops::{linear, TokenMatrix};
use super::transformer::transformer_forward;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::plucker_embedding;
use crate::image::ImageBuffer;
use crate::io::{RunConfig, TensorStore};
use crate::primitives::{layout, softplus, PrimitiveSet};

pub const PIXEL_CHANNELS: usize = 9;

/// Raw head outputs per pixel.
pub fn raw_width(cfg: &RunConfig) -> usize {
    1 + 1 + 4 + 3 + 3 * layout::sh_per_channel(cfg.sh_degree) + cfg.feature_dim
}

fn check_inputs(images: &[ImageBuffer], cams: &[Camera], cfg: &RunConfig) -> Result<(u32, u32)> {
    let first = images
        .first()
        .ok_or_else(|| Error::Invalid("multiview forward needs at least one view".into()))?;
    if images.len() != cams.len() {
        return Err(Error::Shape(format!("{} images for {} cameras", images.len(), cams.len())));
    }
    let (w, h) = (first.width, first.height);
    for (i, (img, cam)) in images.iter().zip(cams).enumerate() {
        if img.width != w || img.height != h || img.channels != 3 {
            return Err(Error::Shape(format!(
                "view {i}: image {}x{}x{} differs from {w}x{h}x3",
                img.width, img.height, img.channels
            )));
        }
        if cam.width != w || cam.height != h {
            return Err(Error::Shape(format!(
                "view {i}: camera resolution {}x{} differs from image {w}x{h}",
                cam.width, cam.height
            )));
        }
    }
    cfg.check_patch(w, h)?;
    Ok((w, h))
}

/// Patch tokens of all views, view-major then patch row-major; each token lists its
/// pixels row-major with nine channels per pixel.
pub fn patch_tokens(images: &[ImageBuffer], cams: &[Camera], p: usize) -> TokenMatrix {
    let (w, h) = (images[0].width as usize, images[0].height as usize);
    let (pw, ph) = (w / p, h / p);
    let mut x = TokenMatrix::zeros(images.len() * pw * ph, PIXEL_CHANNELS * p * p);
    for (v, (img, cam)) in images.iter().zip(cams).enumerate() {
        for ty in 0..ph {
            for tx in 0..pw {
                let row = x.row_mut((v * ph + ty) * pw + tx);
                for iy in 0..p {
                    for ix in 0..p {
                        let (px, py) = ((tx * p + ix) as u32, (ty * p + iy) as u32);
                        let ray = plucker_embedding(cam, px, py).to_array();
                        let o = (iy * p + ix) * PIXEL_CHANNELS;
                        row[o..o + 3].copy_from_slice(img.pixel(px, py));
                        for (d, r) in row[o + 3..o + 9].iter_mut().zip(ray) {
                            *d = r as f32;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Predicts one splat per pixel of every view, ordered view-major then row-major.
pub fn multiview_forward(images: &[ImageBuffer], cams: &[Camera], store: &TensorStore, cfg: &RunConfig) -> Result<PrimitiveSet> {
    let (w, h) = check_inputs(images, cams, cfg)?;
    let p = cfg.patch_size;
    let c = cfg.multiview.hidden;
    let k = raw_width(cfg);
    let embed = store.expect("mv.embed", &[c, PIXEL_CHANNELS * p * p])?;
    let head = store.expect("head.out", &[p * p * k, c])?;

    let x = linear(&patch_tokens(images, cams, p), embed)?;
    let z = transformer_forward(&x, store, "mv", &cfg.multiview)?;
    let raw = linear(&z, head)?;

    let (w, h) = (w as usize, h as usize);
    let (pw, ph) = (w / p, h / p);
    let fdim = cfg.feature_dim;
    let n_sh = 3 * layout::sh_per_channel(cfg.sh_degree);
    let mut out = PrimitiveSet::new(cfg.sh_degree, (fdim > 0).then_some(fdim));
    let mut g = vec![0.0; layout::gaussian_dim(cfg.sh_degree)];
    let mut feat = vec![0.0; fdim];
    for (v, cam) in cams.iter().enumerate() {
        for y in 0..h {
            for xp in 0..w {
                let token = (v * ph + y / p) * pw + xp / p;
                let slot = (y % p) * p + xp % p;
                let r = &raw.row(token)[slot * k..(slot + 1) * k];
                let (o, d) = cam.pixel_ray(xp as u32, y as u32);
                let pos = o + (cam.near + softplus(r[0] as f64)) * d;
                g[layout::POSITION..layout::POSITION + 3].copy_from_slice(&[pos.x, pos.y, pos.z]);
                g[layout::OPACITY] = r[1] as f64;
                for i in 0..4 {
                    g[layout::ROTATION + i] = r[2 + i] as f64;
                }
                for i in 0..3 {
                    g[layout::LOG_SCALE + i] =
                        (r[6 + i] as f64).clamp(super::head::MIN_LOG_SCALE, super::head::MAX_LOG_SCALE);
                }
                for i in 0..n_sh {
                    g[layout::SH + i] = r[9 + i] as f64;
                }
                for (f, v) in feat.iter_mut().zip(&r[9 + n_sh..]) {
                    *f = *v as f64;
                }
                out.push_gaussian(&g, &feat);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::multiview_weights;
    use crate::TransformerConfig;
    use nalgebra::Vector3;

    fn small_cfg() -> RunConfig {
        RunConfig {
            feature_dim: 4,
            patch_size: 8,
            multiview: TransformerConfig {
                layers: 1,
                hidden: 16,
                heads: 2,
                ffn_mult: 2,
                qk_norm: true,
            },
            ..RunConfig::default()
        }
    }

    fn views() -> (Vec<ImageBuffer>, Vec<Camera>) {
        let cams: Vec<Camera> = (0..2)
            .map(|i| {
                Camera::look_at(
                    Vector3::new(i as f64 * 0.5 - 0.25, 0.1, -3.0),
                    Vector3::zeros(),
                    Vector3::new(0.0, 1.0, 0.0),
                    30.0,
                    30.0,
                    32,
                    32,
                    0.5,
                    f64::INFINITY,
                )
            })
            .collect();
        let imgs = (0..2)
            .map(|i| {
                let mut im = ImageBuffer::new(32, 32, 3);
                for (k, v) in im.data.iter_mut().enumerate() {
                    *v = ((k * (i + 3)) % 17) as f32 / 16.0;
                }
                im
            })
            .collect();
        (imgs, cams)
    }

    #[test]
    fn shape_arithmetic() {
        let cfg = small_cfg();
        let (imgs, cams) = views();
        assert_eq!(patch_tokens(&imgs, &cams, 8).rows, 32);
        let out = multiview_forward(&imgs, &cams, &multiview_weights(&cfg, 1), &cfg).unwrap();
        assert_eq!(out.len(), 2048);
        assert_eq!(out.feature_dim(), 4);
    }

    #[test]
    fn splats_lie_on_their_pixel_rays() {
        let cfg = small_cfg();
        let (imgs, cams) = views();
        let out = multiview_forward(&imgs, &cams, &multiview_weights(&cfg, 2), &cfg).unwrap();
        for (i, p) in out.positions.iter().enumerate() {
            let (v, pix) = (i / 1024, i % 1024);
            let (o, d) = cams[v].pixel_ray((pix % 32) as u32, (pix / 32) as u32);
            let t = (p - o).dot(&d);
            assert!((o + t * d - p).norm() < 1e-5);
            assert!(t >= cams[v].near);
        }
    }

    #[test]
    fn zero_weights_give_identical_raw_parameters() {
        let cfg = small_cfg();
        let (imgs, cams) = views();
        let mut store = multiview_weights(&cfg, 3);
        store.zero_prefix("");
        let out = multiview_forward(&imgs, &cams, &store, &cfg).unwrap();
        let first = out.splat(0);
        for i in 1..out.len() {
            let s = out.splat(i);
            assert_eq!(s.opacity, first.opacity);
            assert_eq!(s.rotation, [1.0, 0.0, 0.0, 0.0]);
            assert_eq!(s.log_scale, first.log_scale);
            assert_eq!(s.sh, first.sh);
            assert_eq!(s.features, first.features);
        }
    }

    #[test]
    fn patch_must_divide_resolution() {
        let mut cfg = small_cfg();
        cfg.patch_size = 6;
        let (imgs, cams) = views();
        assert!(multiview_forward(&imgs, &cams, &multiview_weights(&cfg, 1), &cfg).is_err());
    }
}
