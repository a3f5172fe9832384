use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use splatvox::metrics::{capped, flicker_per_frame, psnr, ssim, FeatureExtractor, FixedConvBank, RawPixels};
use splatvox::{Error, ImageBuffer};

use crate::common::{create_dir, mean, parent_dir, print_json, write_json};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Extractor {
    Raw,
    Conv,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of predicted PNG frames.
    #[arg(long)]
    pred_dir: PathBuf,
    /// Directory of ground-truth PNG frames with the same file names.
    #[arg(long)]
    gt_dir: PathBuf,
    /// Feature extractor for flicker.
    #[arg(long, value_enum, default_value = "raw")]
    features: Extractor,
    /// Seed of the convolution bank extractor.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct FrameReport {
    file: String,
    psnr: f64,
    ssim: f64,
    /// Times 1e3; absent on the first frame.
    flicker_t: Option<f64>,
}

#[derive(Serialize)]
struct EvalReport {
    psnr: f64,
    ssim: f64,
    /// Mean flicker times 1e3; absent for a single frame.
    flicker: Option<f64>,
    per_frame: Vec<FrameReport>,
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

pub fn run(args: EvalArgs) -> Result<()> {
    let names = png_names(&args.pred_dir)?;
    if names.is_empty() {
        return Err(Error::Format(format!("no PNG frames in {}", args.pred_dir.display())).into());
    }
    let mut pred = Vec::with_capacity(names.len());
    let mut gt = Vec::with_capacity(names.len());
    for n in &names {
        pred.push(ImageBuffer::load_png(args.pred_dir.join(n))?);
        gt.push(ImageBuffer::load_png(args.gt_dir.join(n))?);
    }

    let phi: Box<dyn FeatureExtractor> = match args.features {
        Extractor::Raw => Box::new(RawPixels),
        Extractor::Conv => Box::new(FixedConvBank::new(args.seed)),
    };
    let flicker = if names.len() >= 2 {
        flicker_per_frame(&pred, &gt, phi.as_ref())?.iter().map(|f| f * 1e3).collect()
    } else {
        Vec::new()
    };

    let mut per_frame = Vec::with_capacity(names.len());
    for (t, n) in names.iter().enumerate() {
        per_frame.push(FrameReport {
            file: n.clone(),
            psnr: capped(psnr(&pred[t], &gt[t])?),
            ssim: ssim(&pred[t], &gt[t])?,
            flicker_t: t.checked_sub(1).map(|i| flicker[i]),
        });
    }
    let report = EvalReport {
        psnr: mean(&per_frame.iter().map(|f| f.psnr).collect::<Vec<_>>()),
        ssim: mean(&per_frame.iter().map(|f| f.ssim).collect::<Vec<_>>()),
        flicker: (!flicker.is_empty()).then(|| mean(&flicker)),
        per_frame,
    };
    if let Some(out) = &args.out {
        create_dir(parent_dir(out))?;
        write_json(out, &report)?;
    }
    print_json(&report)
}
