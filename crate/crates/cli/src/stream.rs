use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use splatvox::camera::load_camera_set;
use splatvox::metrics::{capped, flicker_per_frame, psnr, ssim, RawPixels};
use splatvox::nn::init::{all_weights, voxel_weights};
use splatvox::pipeline::{FuseOptions, StageTimings};
use splatvox::stream::{
    stream_step, FileTracker, GroundTruthTracker, IdentityTracker, KeyframeSchedule, MotionFile, MultiviewPredictor,
    OraclePredictor, SplatPredictor, StepSummary, StreamContext, StreamState, Tracker,
};
use splatvox::voxel::VoxelGridConfig;
use splatvox::{Error, ImageBuffer, TensorStore};

use crate::common::{create_dir, echo_config, load_target, mean, print_line, write_json, ConfigArgs};

/// Flicker values are logged multiplied by this.
const FLICKER_SCALE: f64 = 1e3;

#[derive(Debug, Clone)]
pub enum TrackerSpec {
    Identity,
    GroundTruth(PathBuf),
    File(PathBuf),
}

impl FromStr for TrackerSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once(':') {
            None if s == "identity" => Ok(TrackerSpec::Identity),
            Some(("groundtruth", p)) if !p.is_empty() => Ok(TrackerSpec::GroundTruth(p.into())),
            Some(("file", p)) if !p.is_empty() => Ok(TrackerSpec::File(p.into())),
            _ => Err(format!("expected identity | groundtruth:<motion.json> | file:<csv>, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum PredictorSpec {
    Multiview,
    Oracle(PathBuf),
}

impl FromStr for PredictorSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once(':') {
            None if s == "multiview" => Ok(PredictorSpec::Multiview),
            Some(("oracle", p)) if !p.is_empty() => Ok(PredictorSpec::Oracle(p.into())),
            _ => Err(format!("expected multiview | oracle:<dir>, got '{s}'")),
        }
    }
}

#[derive(Args, Debug)]
pub struct StreamArgs {
    /// Directory with `view_{i}/frame_{t:04}.png` per input camera.
    #[arg(long)]
    frames_dir: PathBuf,
    /// Input camera JSON array, one per view directory.
    #[arg(long)]
    cameras: PathBuf,
    /// Camera JSON whose first camera is the render and voxel frustum.
    #[arg(long)]
    target_camera: PathBuf,
    /// Tensor store; seeded init when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value = "identity")]
    tracker: TrackerSpec,
    /// Splat source per frame: the multi-view network, or precomputed `frame_{t:04}.ply` files.
    #[arg(long, default_value = "multiview")]
    predictor: PredictorSpec,
    /// Target-view ground truth `frame_{t:04}.png`; defaults to `<frames-dir>/target` if present.
    #[arg(long)]
    gt_dir: Option<PathBuf>,
    /// Number of frames; defaults to all frames in `view_0`.
    #[arg(long)]
    n_frames: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Serialize)]
struct FrameLog {
    frame: usize,
    psnr: Option<f64>,
    ssim: Option<f64>,
    /// `|D_t - D*_t|` on raw pixels, times 1e3; absent on the first frame.
    flicker_t: Option<f64>,
    n_splats: usize,
    n_tokens: usize,
    timings: FrameTimings,
    summary: StepSummary,
}

#[derive(Serialize)]
struct FrameTimings {
    #[serde(flatten)]
    stages: StageTimings,
    warp: f64,
    fusion_weights: f64,
}

#[derive(Serialize)]
struct StreamReport {
    frames: usize,
    psnr: Option<f64>,
    ssim: Option<f64>,
    /// Mean flicker over frames 1.., times 1e3.
    flicker: Option<f64>,
}

fn frame_name(t: usize) -> String {
    format!("frame_{t:04}.png")
}

fn count_frames(dir: &Path) -> Result<usize> {
    let mut n = 0;
    while dir.join(frame_name(n)).exists() {
        n += 1;
    }
    if n == 0 {
        return Err(Error::Format(format!("no frame_0000.png in {}", dir.display())).into());
    }
    Ok(n)
}

fn load_views(view_dirs: &[PathBuf], t: usize) -> Result<Vec<ImageBuffer>> {
    Ok(view_dirs
        .iter()
        .map(|d| ImageBuffer::load_png(d.join(frame_name(t))))
        .collect::<splatvox::Result<Vec<_>>>()?)
}

fn build_tracker(spec: &TrackerSpec) -> Result<Box<dyn Tracker>> {
    Ok(match spec {
        TrackerSpec::Identity => Box::new(IdentityTracker),
        TrackerSpec::GroundTruth(p) => Box::new(GroundTruthTracker {
            motion: MotionFile::load(p)?.motion,
        }),
        TrackerSpec::File(p) => Box::new(FileTracker::load(p)?),
    })
}

pub fn run(args: StreamArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let cams = load_camera_set(&args.cameras)?;
    let target = load_target(&args.target_camera)?;

    let view_dirs: Vec<PathBuf> = (0..cams.len()).map(|v| args.frames_dir.join(format!("view_{v}"))).collect();
    for (v, d) in view_dirs.iter().enumerate() {
        if !d.is_dir() {
            return Err(Error::Format(format!("missing view directory view_{v} ({})", d.display())).into());
        }
    }
    let n_frames = match args.n_frames {
        Some(n) => n,
        None => count_frames(&view_dirs[0])?,
    };
    let gt_dir = args.gt_dir.clone().or_else(|| {
        let d = args.frames_dir.join("target");
        d.is_dir().then_some(d)
    });

    let tracker = build_tracker(&args.tracker)?;
    let loaded = args.weights.as_ref().map(TensorStore::load).transpose()?;
    let (predictor, store): (Box<dyn SplatPredictor>, TensorStore) = match &args.predictor {
        PredictorSpec::Multiview => {
            let store = loaded.unwrap_or_else(|| all_weights(&cfg, cfg.seed));
            let p = MultiviewPredictor {
                store: store.clone(),
                cfg: cfg.clone(),
            };
            (Box::new(p), store)
        }
        PredictorSpec::Oracle(dir) => {
            let p = OraclePredictor { dir: dir.clone() };
            let store = match loaded {
                Some(s) => s,
                None => {
                    let fd = p.predict(0, &[], &[])?.feature_dim();
                    voxel_weights(&cfg, fd, cfg.seed.wrapping_add(1))
                }
            };
            (Box::new(p), store)
        }
    };

    let grid = VoxelGridConfig::from_run_config(&target, &cfg)?;
    let ctx = StreamContext {
        run: &cfg,
        grid: &grid,
        cams: &cams,
        target: &target,
        voxel_store: &store,
        tracker: tracker.as_ref(),
        predictor: predictor.as_ref(),
        options: FuseOptions::default(),
    };

    create_dir(&args.out_dir)?;
    echo_config(&args.out_dir, &cfg)?;
    let mut state = StreamState::new(KeyframeSchedule::from_config(&cfg));
    let mut log = String::new();
    let mut logs = Vec::with_capacity(n_frames);
    let mut prev: Option<(ImageBuffer, ImageBuffer)> = None;
    for t in 0..n_frames {
        let images = load_views(&view_dirs, t)?;
        let out = stream_step(&mut state, &ctx, &images)?;
        let render = out.render.quantized();
        render.save_png(args.out_dir.join(frame_name(t)))?;

        let gt = gt_dir.as_ref().map(|d| ImageBuffer::load_png(d.join(frame_name(t)))).transpose()?;
        let (mut p, mut s, mut flicker) = (None, None, None);
        if let Some(gt) = &gt {
            p = Some(capped(psnr(&render, gt)?));
            s = Some(ssim(&render, gt)?);
            if let Some((pr, pg)) = &prev {
                let f = flicker_per_frame(&[pr.clone(), render.clone()], &[pg.clone(), gt.clone()], &RawPixels)?;
                flicker = Some(f[0] * FLICKER_SCALE);
            }
        }
        let sm = out.summary;
        let entry = FrameLog {
            frame: t,
            psnr: p,
            ssim: s,
            flicker_t: flicker,
            n_splats: sm.fuse.splats_out,
            n_tokens: sm.fuse.tokens,
            timings: FrameTimings {
                stages: sm.fuse.timings.clone(),
                warp: sm.warp_seconds,
                fusion_weights: sm.fusion_weight_seconds,
            },
            summary: sm,
        };
        let line = serde_json::to_string(&entry)?;
        print_line(&line)?;
        log.push_str(&line);
        log.push('\n');
        eprintln!(
            "frame {t}: {} splats, {} tokens, {} anchors",
            entry.n_splats, entry.n_tokens, entry.summary.anchors
        );
        logs.push(entry);
        prev = gt.map(|g| (render, g));
    }
    std::fs::write(args.out_dir.join("metrics.jsonl"), log)?;

    let collect = |f: fn(&FrameLog) -> Option<f64>| {
        let v: Vec<f64> = logs.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| mean(&v))
    };
    let report = StreamReport {
        frames: n_frames,
        psnr: collect(|l| l.psnr),
        ssim: collect(|l| l.ssim),
        flicker: collect(|l| l.flicker_t),
    };
    write_json(&args.out_dir.join("stream_summary.json"), &report)?;
    Ok(())
}
