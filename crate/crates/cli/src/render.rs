use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use splatvox::camera::load_camera_set;
use splatvox::io::load_primitives;
use splatvox::metrics::{capped, psnr, ssim};
use splatvox::raster::render;
use splatvox::ImageBuffer;

use crate::common::{create_dir, echo_config, mean, print_json, write_json, ConfigArgs};

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Splat PLY.
    #[arg(long)]
    prims: PathBuf,
    /// Camera JSON array.
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Directory of ground-truth `view_{i}.png` images.
    #[arg(long)]
    gt_dir: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Serialize)]
struct ViewReport {
    view: usize,
    file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ssim: Option<f64>,
}

#[derive(Serialize)]
struct RenderReport {
    splats: usize,
    views: Vec<ViewReport>,
    /// Mean over views; identical images report the 99 dB cap.
    #[serde(skip_serializing_if = "Option::is_none")]
    psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ssim: Option<f64>,
}

pub fn run(args: RenderArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let prims = load_primitives(&args.prims, None)?;
    let cams = load_camera_set(&args.cameras)?;
    create_dir(&args.out_dir)?;
    echo_config(&args.out_dir, &cfg)?;

    let mut views = Vec::with_capacity(cams.len());
    for (i, cam) in cams.iter().enumerate() {
        let file = format!("view_{i}.png");
        let img = render(&prims, cam, cfg.background).rgb;
        img.save_png(args.out_dir.join(&file))?;
        let (mut p, mut s) = (None, None);
        if let Some(gt_dir) = &args.gt_dir {
            // Ground truth is 8-bit.
            let gt = ImageBuffer::load_png(gt_dir.join(&file))?;
            let q = img.quantized();
            p = Some(capped(psnr(&q, &gt)?));
            s = Some(ssim(&q, &gt)?);
        }
        eprintln!("rendered {file}");
        views.push(ViewReport {
            view: i,
            file,
            psnr: p,
            ssim: s,
        });
    }

    let gather = |f: fn(&ViewReport) -> Option<f64>| {
        let v: Vec<f64> = views.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| mean(&v))
    };
    let report = RenderReport {
        splats: prims.len(),
        psnr: gather(|v| v.psnr),
        ssim: gather(|v| v.ssim),
        views,
    };
    write_json(&args.out_dir.join("render_summary.json"), &report)?;
    print_json(&report)
}
