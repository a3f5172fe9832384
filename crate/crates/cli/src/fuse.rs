use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use clap::Args;
use splatvox::io::{load_primitives, save_primitives};
use splatvox::nn::init::voxel_weights;
use splatvox::pipeline::{fuse, FuseOptions};
use splatvox::raster::render;
use splatvox::voxel::VoxelGridConfig;
use splatvox::{PrimitiveSet, TensorStore};

use crate::common::{create_dir, echo_config, load_target, parent_dir, print_json, usage, write_json, ConfigArgs};

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// Input splat PLY; repeat for several sets.
    #[arg(long, required = true)]
    prims: Vec<PathBuf>,
    /// Feature sidecar for the `--prims` at the same position.
    #[arg(long)]
    features: Vec<PathBuf>,
    /// Camera JSON whose first camera defines the voxel frustum.
    #[arg(long)]
    target_camera: PathBuf,
    /// Tensor store with `mlp_coarse.*`, `vox.*` and `mlp_fine.*`; seeded init when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out_prims: PathBuf,
    /// Summary JSON path; defaults to `<out-prims>.summary.json`.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// PNG of the refined splats seen from the target camera.
    #[arg(long)]
    render_out: Option<PathBuf>,
    /// Zero the fine head so output splats equal the fused voxel Gaussians.
    #[arg(long)]
    identity_head: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

pub fn run(args: FuseArgs) -> Result<()> {
    if !args.features.is_empty() && args.features.len() != args.prims.len() {
        return Err(usage(format!(
            "{} --features given for {} --prims; pass one per set or none",
            args.features.len(),
            args.prims.len()
        )));
    }
    let cfg = args.config.resolve()?;
    let target = load_target(&args.target_camera)?;

    let sets = args
        .prims
        .iter()
        .enumerate()
        .map(|(i, p)| load_primitives(p, args.features.get(i).map(PathBuf::as_path)))
        .collect::<splatvox::Result<Vec<PrimitiveSet>>>()?;
    let refs: Vec<&PrimitiveSet> = sets.iter().collect();
    let prims = PrimitiveSet::concat(&refs)?;

    let store = match &args.weights {
        Some(p) => TensorStore::load(p)?,
        None => voxel_weights(&cfg, prims.feature_dim(), cfg.seed),
    };
    let grid = VoxelGridConfig::from_run_config(&target, &cfg)?;
    let opts = FuseOptions {
        identity_head: args.identity_head,
        keep_fraction: None,
    };
    let mut out = fuse(&prims, None, &grid, &cfg, &store, &opts)?;

    let out_dir = parent_dir(&args.out_prims);
    create_dir(out_dir)?;
    echo_config(out_dir, &cfg)?;
    save_primitives(&args.out_prims, &out.prims, Some(&args.out_prims.with_extension("features.bin")))?;
    if let Some(path) = &args.render_out {
        let t = Instant::now();
        let img = render(&out.prims, &target, cfg.background).rgb;
        out.summary.timings.render = t.elapsed().as_secs_f64();
        create_dir(parent_dir(path))?;
        img.save_png(path)?;
    }
    eprintln!(
        "fused {} splats into {} tokens, {} splats out",
        out.summary.splats_in, out.summary.tokens, out.summary.splats_out
    );
    let summary_path = args.summary.clone().unwrap_or_else(|| args.out_prims.with_extension("summary.json"));
    write_json(&summary_path, &out.summary)?;
    print_json(&out.summary)
}
