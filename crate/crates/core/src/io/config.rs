//! Run configuration: model sizes, grid layout, streaming and loss settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size of a bias-free pre-norm transformer stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    #[serde(default = "yes")]
    pub qk_norm: bool,
}

fn yes() -> bool {
    true
}

impl TransformerConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.hidden * self.ffn_mult
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.ffn_mult == 0 {
            return Err(Error::Config(format!("{what}: hidden, heads and ffn_mult must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "{what}: hidden dim {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sh_degree: u8,
    /// Per-splat latent feature width `C_feat`.
    pub feature_dim: usize,
    pub patch_size: usize,
    pub multiview: TransformerConfig,
    pub voxel: TransformerConfig,
    pub mlp_coarse_hidden: usize,
    pub mlp_fine_hidden: usize,
    pub fine_depth: usize,
    /// Fine grid height and width; `None` uses the target image size.
    pub fine_hw: Option<[usize; 2]>,
    pub coarse_factors: [usize; 3],
    pub keep_fraction: f64,
    pub keyframe_spacing: usize,
    pub keyframe_lifetime: usize,
    pub keyframe_capacity: usize,
    pub anchor_count: usize,
    pub knn_k: usize,
    pub graph_lambda: f64,
    /// Optical-flow magnitude (pixels) above which a view counts as moving.
    pub flow_threshold: f64,
    /// Depth-visibility slack as a fraction of the scene extent.
    pub occlusion_slack: f64,
    pub loss_lambda_multiview: f64,
    pub loss_lambda_voxel: f64,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sh_degree: 0,
            feature_dim: 8,
            patch_size: 8,
            multiview: TransformerConfig {
                layers: 2,
                hidden: 64,
                heads: 4,
                ffn_mult: 4,
                qk_norm: true,
            },
            voxel: TransformerConfig {
                layers: 6,
                hidden: 128,
                heads: 8,
                ffn_mult: 4,
                qk_norm: true,
            },
            mlp_coarse_hidden: 128,
            mlp_fine_hidden: 64,
            fine_depth: 64,
            fine_hw: None,
            coarse_factors: [2, 8, 8],
            keep_fraction: 0.2,
            keyframe_spacing: 5,
            keyframe_lifetime: 10,
            keyframe_capacity: 2,
            anchor_count: 512,
            knn_k: 4,
            graph_lambda: 0.35,
            flow_threshold: 0.2,
            occlusion_slack: 0.01,
            loss_lambda_multiview: 0.5,
            loss_lambda_voxel: 4.0,
            background: [0.0; 3],
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Length of a voxel attribute vector `[F ; G]`.
    pub fn attr_dim(&self) -> usize {
        self.feature_dim + crate::primitives::layout::gaussian_dim(self.sh_degree)
    }

    /// Fine grid dims `[D, H, W]` for a target image of `width x height`.
    pub fn fine_dims(&self, width: u32, height: u32) -> [usize; 3] {
        let [h, w] = self.fine_hw.unwrap_or([height as usize, width as usize]);
        [self.fine_depth, h, w]
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > 1 {
            return Err(Error::Config(format!("sh_degree must be 0 or 1, got {}", self.sh_degree)));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "keep_fraction must be in (0, 1], got {}",
                self.keep_fraction
            )));
        }
        if self.patch_size == 0 || self.fine_depth == 0 {
            return Err(Error::Config("patch_size and fine_depth must be positive".into()));
        }
        if self.coarse_factors.contains(&0) {
            return Err(Error::Config("coarse_factors must be positive".into()));
        }
        if self.fine_depth % self.coarse_factors[0] != 0 {
            return Err(Error::Config(format!(
                "coarse factor {} does not divide fine depth {}",
                self.coarse_factors[0], self.fine_depth
            )));
        }
        if let Some([h, w]) = self.fine_hw {
            self.check_hw(h, w)?;
        }
        self.multiview.validate("multiview")?;
        self.voxel.validate("voxel")?;
        if self.mlp_coarse_hidden == 0 || self.mlp_fine_hidden == 0 {
            return Err(Error::Config("mlp hidden dims must be positive".into()));
        }
        if self.keyframe_spacing == 0 || self.keyframe_lifetime == 0 || self.keyframe_capacity == 0 {
            return Err(Error::Config("keyframe spacing, lifetime and capacity must be positive".into()));
        }
        if self.anchor_count == 0 || self.knn_k == 0 {
            return Err(Error::Config("anchor_count and knn_k must be positive".into()));
        }
        if !(self.graph_lambda > 0.0) || !(self.flow_threshold >= 0.0) || !(self.occlusion_slack >= 0.0) {
            return Err(Error::Config(
                "graph_lambda must be positive; flow_threshold and occlusion_slack non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Checks that the coarse factors divide a fine grid of `h x w`.
    pub fn check_hw(&self, h: usize, w: usize) -> Result<()> {
        let [_, fh, fw] = self.coarse_factors;
        if h == 0 || w == 0 || h % fh != 0 || w % fw != 0 {
            return Err(Error::Config(format!(
                "coarse factors [{fh}, {fw}] do not divide fine grid {h}x{w}"
            )));
        }
        Ok(())
    }

    /// Checks that the patch size divides an image of `width x height`.
    pub fn check_patch(&self, width: u32, height: u32) -> Result<()> {
        let p = self.patch_size as u32;
        if width % p != 0 || height % p != 0 {
            return Err(Error::Config(format!(
                "patch size {p} does not divide image {width}x{height}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(cfg.attr_dim(), 8 + 14);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = RunConfig::parse(r#"{"keep_fraction": 0.5, "fine_depth": 32}"#).unwrap();
        assert_eq!(cfg.keep_fraction, 0.5);
        assert_eq!(cfg.fine_depth, 32);
        assert_eq!(cfg.coarse_factors, [2, 8, 8]);
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(RunConfig::parse(r#"{"keep_fraction": 0.0}"#).is_err());
        assert!(RunConfig::parse(r#"{"keep_fraction": 1.5}"#).is_err());
        assert!(RunConfig::parse(r#"{"fine_depth": 63}"#).is_err());
        assert!(RunConfig::parse(r#"{"fine_hw": [20, 64]}"#).is_err());
        assert!(RunConfig::parse(r#"{"sh_degree": 2}"#).is_err());
        assert!(RunConfig::parse(r#"{"unknown_key": 1}"#).is_err());
        let bad_heads = r#"{"voxel": {"layers": 1, "hidden": 10, "heads": 3, "ffn_mult": 2}}"#;
        assert!(RunConfig::parse(bad_heads).is_err());
    }

    #[test]
    fn patch_and_fine_dims() {
        let cfg = RunConfig::default();
        assert!(cfg.check_patch(64, 32).is_ok());
        assert!(cfg.check_patch(60, 32).is_err());
        assert_eq!(cfg.fine_dims(384, 216), [64, 216, 384]);
    }
}
