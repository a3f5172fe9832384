//! 2D point tracking interface and the built-in trackers.
//!
//! File exchange uses CSV. Queries: `src_frame,view,src_u,src_v,frame`. Tracks:
//! `src_frame,view,src_u,src_v,frame,u,v,occluded`. Tracks are matched to queries by frame
//! pair, view and the integer pixel containing the source point.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::motion::Motion;
use crate::camera::Camera;
use crate::error::{Error, Result};

/// A pixel in view `view` of frame `from` to be followed to another frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackQuery {
    pub view: usize,
    pub pixel: (f64, f64),
    /// World point behind the pixel, when known; only analytic trackers use it.
    pub point: Option<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackResult {
    pub pixel: (f64, f64),
    /// Occluded results carry no position guarantee.
    pub occluded: bool,
}

pub trait Tracker: Send + Sync {
    fn track(&self, queries: &[TrackQuery], from: usize, to: usize, cams: &[Camera]) -> Result<Vec<TrackResult>>;
}

/// Every point stays where it is.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTracker;

impl Tracker for IdentityTracker {
    fn track(&self, queries: &[TrackQuery], _from: usize, _to: usize, _cams: &[Camera]) -> Result<Vec<TrackResult>> {
        Ok(queries
            .iter()
            .map(|q| TrackResult {
                pixel: q.pixel,
                occluded: false,
            })
            .collect())
    }
}

/// Moves query points with a known motion field and reprojects them.
#[derive(Debug, Clone)]
pub struct GroundTruthTracker {
    pub motion: Motion,
}

impl Tracker for GroundTruthTracker {
    fn track(&self, queries: &[TrackQuery], from: usize, to: usize, cams: &[Camera]) -> Result<Vec<TrackResult>> {
        queries
            .iter()
            .map(|q| {
                let cam = cams
                    .get(q.view)
                    .ok_or_else(|| Error::Invalid(format!("track query for unknown view {}", q.view)))?;
                let Some(p) = q.point else {
                    return Ok(TrackResult {
                        pixel: q.pixel,
                        occluded: true,
                    });
                };
                let moved = self.motion.transfer(&p, from, to);
                Ok(match cam.project(&moved) {
                    Some((u, v, _)) if cam.contains_pixel(u, v) => TrackResult {
                        pixel: (u, v),
                        occluded: false,
                    },
                    _ => TrackResult {
                        pixel: q.pixel,
                        occluded: true,
                    },
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub src_frame: usize,
    pub view: usize,
    pub src_u: f64,
    pub src_v: f64,
    pub frame: usize,
    pub u: f64,
    pub v: f64,
    pub occluded: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub src_frame: usize,
    pub view: usize,
    pub src_u: f64,
    pub src_v: f64,
    pub frame: usize,
}

type TrackKey = (usize, usize, i64, i64, usize);

fn key(src_frame: usize, view: usize, u: f64, v: f64, frame: usize) -> TrackKey {
    (src_frame, view, u.floor() as i64, v.floor() as i64, frame)
}

/// Tracks precomputed by an external tool; unmatched queries come back occluded.
#[derive(Debug, Clone, Default)]
pub struct FileTracker {
    tracks: HashMap<TrackKey, TrackResult>,
}

impl FileTracker {
    pub fn from_records(records: impl IntoIterator<Item = TrackRecord>) -> Self {
        let tracks = records
            .into_iter()
            .map(|r| {
                (
                    key(r.src_frame, r.view, r.src_u, r.src_v, r.frame),
                    TrackResult {
                        pixel: (r.u, r.v),
                        occluded: r.occluded != 0,
                    },
                )
            })
            .collect();
        FileTracker { tracks }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let records = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<TrackRecord>, _>>()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

impl Tracker for FileTracker {
    fn track(&self, queries: &[TrackQuery], from: usize, to: usize, _cams: &[Camera]) -> Result<Vec<TrackResult>> {
        Ok(queries
            .iter()
            .map(|q| {
                self.tracks
                    .get(&key(from, q.view, q.pixel.0, q.pixel.1, to))
                    .copied()
                    .unwrap_or(TrackResult {
                        pixel: q.pixel,
                        occluded: true,
                    })
            })
            .collect())
    }
}

/// Writes queries for an external tracker.
pub fn write_track_queries(path: impl AsRef<Path>, queries: &[TrackQuery], from: usize, to: usize) -> Result<()> {
    let path = path.as_ref();
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    for q in queries {
        w.serialize(QueryRecord {
            src_frame: from,
            view: q.view,
            src_u: q.pixel.0,
            src_v: q.pixel.1,
            frame: to,
        })
        .map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes tracks in the format [`FileTracker::load`] reads.
pub fn write_tracks(path: impl AsRef<Path>, records: &[TrackRecord]) -> Result<()> {
    let path = path.as_ref();
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    for r in records {
        w.serialize(r).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
