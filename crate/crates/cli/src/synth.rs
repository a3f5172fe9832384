use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde_json::json;
use splatvox::synthetic::{MotionKind, SceneKind, SyntheticScene, SyntheticSpec};

use crate::common::{create_dir, print_json, usage, write_json};

#[derive(Args, Debug)]
pub struct GenArgs {
    /// blobs | checker | orbit
    #[arg(long, default_value = "blobs")]
    scene: SceneKind,
    #[arg(long, default_value_t = 100)]
    n_splats: usize,
    #[arg(long, default_value_t = 4)]
    n_views: usize,
    #[arg(long, default_value_t = 1)]
    n_frames: usize,
    /// none | translate | swirl
    #[arg(long, default_value = "none")]
    motion: MotionKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    width: u32,
    #[arg(long, default_value_t = 64)]
    height: u32,
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run(args: GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        scene: args.scene,
        n_splats: args.n_splats,
        n_views: args.n_views,
        n_frames: args.n_frames,
        motion: args.motion,
        seed: args.seed,
        width: args.width,
        height: args.height,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let scene = SyntheticScene::generate(&spec)?;
    create_dir(&args.out_dir)?;
    scene.write(&args.out_dir)?;

    let summary = json!({
        "scene": format!("{:?}", spec.scene).to_lowercase(),
        "n_splats": scene.prims.len(),
        "n_views": spec.n_views,
        "n_frames": spec.n_frames,
        "motion": format!("{:?}", spec.motion).to_lowercase(),
        "seed": spec.seed,
        "width": spec.width,
        "height": spec.height,
    });
    write_json(&args.out_dir.join("synthetic.json"), &summary)?;
    eprintln!("wrote synthetic scene to {}", args.out_dir.display());
    print_json(&summary)
}
