//! Projection of 2D gaze samples onto the surfel map.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{apply_homography, CameraIntrinsics, Homography};
use crate::surfel_map::{IndexMap, InstanceId, SurfelId, SurfelMap};

/// Half-width of the search window used when the gaze pixel has no surfel.
pub const FALLBACK_WINDOW: usize = 5;
/// Gaps between consecutive samples longer than this do not count as dwell.
pub const DWELL_GAP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub timestamp: f64,
    /// Eye-tracker scene-camera pixel.
    pub pixel: Vector2<f64>,
    pub valid: bool,
}

impl GazeSample {
    pub fn new(timestamp: f64, x: f64, y: f64) -> Self {
        GazeSample {
            timestamp,
            pixel: Vector2::new(x, y),
            valid: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitSource {
    Direct,
    WindowFallback,
    Miss,
}

impl HitSource {
    pub fn as_str(self) -> &'static str {
        match self {
            HitSource::Direct => "direct",
            HitSource::WindowFallback => "window",
            HitSource::Miss => "miss",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "direct" => Some(HitSource::Direct),
            "window" => Some(HitSource::WindowFallback),
            "miss" => Some(HitSource::Miss),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeHit {
    pub timestamp: f64,
    /// Gaze location in RGB-D pixels; `None` if the sample could not be mapped.
    pub pixel: Option<Vector2<f64>>,
    pub point: Option<Vector3<f64>>,
    pub surfel: Option<SurfelId>,
    pub class: Option<usize>,
    pub instance: Option<InstanceId>,
    pub source: HitSource,
}

impl GazeHit {
    pub fn miss(timestamp: f64, pixel: Option<Vector2<f64>>) -> Self {
        GazeHit {
            timestamp,
            pixel,
            point: None,
            surfel: None,
            class: None,
            instance: None,
            source: HitSource::Miss,
        }
    }
}

/// Transfers a gaze sample into the RGB-D image.
pub fn map_gaze_pixel(sample: &GazeSample, h: &Homography, k: &CameraIntrinsics) -> Result<Vector2<f64>> {
    if !sample.valid {
        return Err(Error::InvalidSample);
    }
    let px = apply_homography(&sample.pixel, h)?;
    let (ur, vr) = (px.x.round(), px.y.round());
    if !(ur >= 0.0 && vr >= 0.0 && ur < k.width as f64 && vr < k.height as f64) {
        return Err(Error::OutOfFrame(px.x, px.y));
    }
    Ok(px)
}

/// Looks up the surfel under an RGB-D pixel, searching a small window when
/// the pixel itself is empty.
pub fn locate_gaze(timestamp: f64, px: &Vector2<f64>, index_map: &IndexMap, map: &SurfelMap) -> GazeHit {
    locate_gaze_with(timestamp, px, index_map, map, FALLBACK_WINDOW)
}

/// [`locate_gaze`] with a configurable fallback half-width.
pub fn locate_gaze_with(timestamp: f64, px: &Vector2<f64>, index_map: &IndexMap, map: &SurfelMap, window: usize) -> GazeHit {
    let u = (px.x.round().max(0.0) as usize).min(index_map.width.saturating_sub(1));
    let v = (px.y.round().max(0.0) as usize).min(index_map.height.saturating_sub(1));

    let hit = |id: SurfelId, source| {
        let s = map.get(id)?;
        Some(GazeHit {
            timestamp,
            pixel: Some(*px),
            point: Some(s.position),
            surfel: Some(id),
            class: Some(s.classes.argmax().0),
            instance: s.instance,
            source,
        })
    };
    if let Some(h) = index_map.id(u, v).and_then(|id| hit(id, HitSource::Direct)) {
        return h;
    }
    fallback_candidate(index_map, u, v, window)
        .and_then(|id| hit(id, HitSource::WindowFallback))
        .unwrap_or_else(|| GazeHit::miss(timestamp, Some(*px)))
}

/// Nearest occupied pixel in the `(2w+1)²` window, ties broken by smaller
/// rendered depth and then smaller surfel id.
pub fn fallback_candidate(index_map: &IndexMap, u: usize, v: usize, w: usize) -> Option<SurfelId> {
    let u0 = u.saturating_sub(w);
    let v0 = v.saturating_sub(w);
    let u1 = (u + w).min(index_map.width - 1);
    let v1 = (v + w).min(index_map.height - 1);
    let mut best: Option<(usize, f32, SurfelId)> = None;
    for y in v0..=v1 {
        for x in u0..=u1 {
            let Some(id) = index_map.id(x, y) else { continue };
            let d2 = x.abs_diff(u).pow(2) + y.abs_diff(v).pow(2);
            let depth = index_map.depth(x, y);
            let better = best.is_none_or(|(bd, bz, bid)| {
                d2.cmp(&bd).then(depth.total_cmp(&bz)).then(id.cmp(&bid)).is_lt()
            });
            if better {
                best = Some((d2, depth, id));
            }
        }
    }
    best.map(|b| b.2)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dwell {
    pub seconds: f64,
    /// Maximal same-instance runs beyond the first.
    pub revisits: usize,
    pub samples: usize,
}

pub type DwellTable = BTreeMap<InstanceId, Dwell>;

/// Folds a time-ordered hit sequence into per-instance dwell and revisits.
pub fn accumulate_dwell(hits: &[GazeHit]) -> Result<DwellTable> {
    let mut table = DwellTable::new();
    let mut prev: Option<(f64, Option<InstanceId>)> = None;
    for (i, hit) in hits.iter().enumerate() {
        if let Some((t, _)) = prev {
            if hit.timestamp < t {
                return Err(Error::NonMonotonicTimestamps(i));
            }
        }
        if let Some(id) = hit.instance {
            let entry = table.entry(id).or_default();
            entry.samples += 1;
            let continues = match prev {
                Some((t, Some(p))) => p == id && hit.timestamp - t <= DWELL_GAP,
                _ => false,
            };
            if continues {
                entry.seconds += hit.timestamp - prev.unwrap().0;
            } else if entry.samples > 1 {
                entry.revisits += 1;
            }
        }
        prev = Some((hit.timestamp, hit.instance));
    }
    Ok(table)
}
