use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use splatvox::camera::load_camera_set;
use splatvox::{Camera, RunConfig};

/// Invalid argument combination detected after parsing (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Run configuration sources. Flags override the file, the file overrides defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Background colour as `r,g,b` in [0, 1].
    #[arg(long, value_parser = parse_rgb)]
    pub background: Option<[f64; 3]>,
    /// Fraction of coarse blocks kept after sparsification.
    #[arg(long)]
    pub keep_fraction: Option<f64>,
    /// Fine grid depth bins.
    #[arg(long)]
    pub fine_depth: Option<usize>,
    /// Fine grid height and width as `HxW`.
    #[arg(long, value_parser = parse_hw)]
    pub fine_hw: Option<[usize; 2]>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = self.background {
            cfg.background = b;
        }
        if let Some(k) = self.keep_fraction {
            cfg.keep_fraction = k;
        }
        if let Some(d) = self.fine_depth {
            cfg.fine_depth = d;
        }
        if let Some(hw) = self.fine_hw {
            cfg.fine_hw = Some(hw);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_rgb(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected r,g,b, got '{s}'"));
    }
    let mut rgb = [0.0; 3];
    for (c, p) in rgb.iter_mut().zip(&parts) {
        *c = p.parse().map_err(|_| format!("bad colour component '{p}'"))?;
        if !(0.0..=1.0).contains(c) {
            return Err(format!("colour component {c} outside [0, 1]"));
        }
    }
    Ok(rgb)
}

pub fn parse_hw(s: &str) -> std::result::Result<[usize; 2], String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height '{h}'"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width '{w}'"))?;
    Ok([h, w])
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes `effective_config.json` into `dir`.
pub fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    cfg.save(dir.join("effective_config.json"))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn print_json(value: &impl Serialize) -> Result<()> {
    print_line(&serde_json::to_string_pretty(value)?)
}

/// Writes a line to stdout; a closed pipe is not an error.
pub fn print_line(line: &str) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{line}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// First camera of a camera file.
pub fn load_target(path: &Path) -> Result<Camera> {
    let cams = load_camera_set(path)?;
    cams.into_iter()
        .next()
        .ok_or_else(|| splatvox::Error::Format(format!("{}: no cameras", path.display())).into())
}

pub fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
