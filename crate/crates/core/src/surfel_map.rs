//! The global surfel map: creation, confidence-weighted fusion, index-map
//! rendering and pruning.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::frame::{DepthImage, Frame, GrayImage};
use crate::geometry::{backproject_metric, compute_normals, CameraIntrinsics, Pose};
use crate::semantic::{default_class_names, ClassDistribution};
use crate::spatial::VoxelGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SurfelId(pub u64);

impl fmt::Display for SurfelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Object instance identifier; ids start at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceId(pub u32);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    /// Association gate on the distance along the viewing ray, meters.
    pub max_ray_distance: f64,
    /// Association gate on the normal angle, degrees.
    pub max_normal_angle: f64,
    /// Width of the radial sample-weight Gaussian in normalized image radius.
    pub weight_sigma: f64,
    pub min_radius: f64,
    pub max_radius: f64,
    pub cell_size: f64,
    /// Confidence at which a surfel counts as stable.
    pub stable_confidence: f64,
    /// Frames an unstable surfel may survive.
    pub probation_frames: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            max_ray_distance: 0.05,
            max_normal_angle: 20.0,
            weight_sigma: 0.6,
            min_radius: 0.001,
            max_radius: 0.05,
            cell_size: 0.1,
            stable_confidence: 10.0,
            probation_frames: 20,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_ray_distance > 0.0
            && self.max_normal_angle > 0.0
            && self.max_normal_angle <= 180.0
            && self.weight_sigma > 0.0
            && self.min_radius > 0.0
            && self.max_radius >= self.min_radius
            && self.cell_size > 0.0
            && self.stable_confidence >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid map configuration {self:?}")))
        }
    }

    pub fn cos_max_normal_angle(&self) -> f64 {
        self.max_normal_angle.to_radians().cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surfel {
    pub id: SurfelId,
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub radius: f64,
    pub color: [u8; 3],
    pub confidence: f64,
    pub classes: ClassDistribution,
    pub instance: Option<InstanceId>,
    pub created_at: usize,
    pub updated_at: usize,
}

impl Surfel {
    /// A surfel with a uniform class prior; the id is assigned on insertion.
    pub fn new(
        position: Vector3<f64>,
        normal: Vector3<f64>,
        radius: f64,
        color: [u8; 3],
        confidence: f64,
        classes: usize,
        frame: usize,
    ) -> Self {
        Surfel {
            id: SurfelId(u64::MAX),
            position,
            normal: normal.normalize(),
            radius,
            color,
            confidence,
            classes: ClassDistribution::uniform(classes),
            instance: None,
            created_at: frame,
            updated_at: frame,
        }
    }

    pub fn is_stable(&self, cfg: &MapConfig) -> bool {
        self.confidence >= cfg.stable_confidence
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationReport {
    pub created: usize,
    pub updated: usize,
    /// Pixels with depth that neither created nor updated a surfel.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct SurfelMap {
    slots: Vec<Option<Surfel>>,
    grid: VoxelGrid,
    live: usize,
    classes: usize,
    class_names: Arc<[String]>,
    config: MapConfig,
    /// Index of the most recently integrated frame.
    pub frame: usize,
}

impl SurfelMap {
    pub fn new(classes: usize, config: MapConfig) -> Self {
        SurfelMap {
            slots: Vec::new(),
            grid: VoxelGrid::new(config.cell_size),
            live: 0,
            classes,
            class_names: default_class_names(classes),
            config,
            frame: 0,
        }
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn class_names(&self) -> &Arc<[String]> {
        &self.class_names
    }

    pub fn set_class_names(&mut self, names: Arc<[String]>) -> Result<()> {
        if names.len() != self.classes {
            return Err(Error::dims(self.classes, names.len()));
        }
        self.class_names = names;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    /// Ids are never reused, so this is also the next id to be assigned.
    pub fn id_bound(&self) -> u64 {
        self.slots.len() as u64
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn insert(&mut self, mut surfel: Surfel) -> SurfelId {
        assert_eq!(surfel.classes.classes(), self.classes, "class count mismatch");
        let id = SurfelId(self.slots.len() as u64);
        surfel.id = id;
        self.grid.insert(id.0, &surfel.position);
        self.slots.push(Some(surfel));
        self.live += 1;
        id
    }

    pub fn remove(&mut self, id: SurfelId) -> Option<Surfel> {
        let s = self.slots.get_mut(id.0 as usize)?.take()?;
        self.grid.remove(id.0, &s.position);
        self.live -= 1;
        Some(s)
    }

    #[inline]
    pub fn get(&self, id: SurfelId) -> Option<&Surfel> {
        self.slots.get(id.0 as usize)?.as_ref()
    }

    #[inline]
    pub fn get_mut(&mut self, id: SurfelId) -> Option<&mut Surfel> {
        self.slots.get_mut(id.0 as usize)?.as_mut()
    }

    /// Moves a surfel, keeping the spatial index in sync.
    pub fn set_position(&mut self, id: SurfelId, position: Vector3<f64>) {
        if let Some(s) = self.slots.get_mut(id.0 as usize).and_then(|s| s.as_mut()) {
            self.grid.relocate(id.0, &s.position, &position);
            s.position = position;
        }
    }

    /// Live surfels in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Surfel> {
        self.slots.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Surfel> {
        self.slots.iter_mut().flatten()
    }

    /// Ids of all surfels within `r` of `center`, ascending.
    pub fn query_radius(&self, center: &Vector3<f64>, r: f64) -> Vec<SurfelId> {
        let r2 = r * r;
        let mut out: Vec<SurfelId> = self
            .grid
            .candidates(center, r)
            .filter(|&id| {
                self.get(SurfelId(id))
                    .is_some_and(|s| (s.position - center).norm_squared() <= r2)
            })
            .map(SurfelId)
            .collect();
        out.sort_unstable();
        out
    }

    /// Removes unstable surfels whose probation has expired.
    pub fn prune(&mut self, current_frame: usize) -> usize {
        let cfg = self.config;
        let doomed: Vec<SurfelId> = self
            .iter()
            .filter(|s| !s.is_stable(&cfg) && current_frame.saturating_sub(s.created_at) > cfg.probation_frames)
            .map(|s| s.id)
            .collect();
        for &id in &doomed {
            self.remove(id);
        }
        doomed.len()
    }

    /// Checks that the spatial index and the surfel collection agree.
    pub fn check_index(&self) -> bool {
        if self.grid.len() != self.live {
            return false;
        }
        self.grid.iter().all(|(key, ids)| {
            ids.iter()
                .all(|&id| self.get(SurfelId(id)).is_some_and(|s| self.grid.key(&s.position) == *key))
        })
    }
}

pub fn query_radius(map: &SurfelMap, center: &Vector3<f64>, r: f64) -> Vec<SurfelId> {
    map.query_radius(center, r)
}

pub fn prune(map: &mut SurfelMap, current_frame: usize) -> usize {
    map.prune(current_frame)
}

/// Per-pixel surfel association rendered from a camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMap {
    pub width: usize,
    pub height: usize,
    ids: Vec<Option<SurfelId>>,
    /// Camera-frame depth where the pixel ray meets the winning surfel; 0 where empty.
    depth: Vec<f32>,
}

impl IndexMap {
    pub fn empty(width: usize, height: usize) -> Self {
        IndexMap {
            width,
            height,
            ids: vec![None; width * height],
            depth: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn id(&self, u: usize, v: usize) -> Option<SurfelId> {
        self.ids[v * self.width + u]
    }

    #[inline]
    pub fn depth(&self, u: usize, v: usize) -> f32 {
        self.depth[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, id: SurfelId, depth: f32) {
        let i = v * self.width + u;
        self.ids[i] = Some(id);
        self.depth[i] = depth;
    }

    pub fn occupied(&self) -> usize {
        self.ids.iter().filter(|i| i.is_some()).count()
    }

    /// Grayscale rendering of the winning surfels' colors; NaN where empty.
    pub fn intensity(&self, map: &SurfelMap) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .ids
                .iter()
                .map(|id| {
                    id.and_then(|id| map.get(id))
                        .map_or(f32::NAN, |s| crate::frame::intensity(s.color))
                })
                .collect(),
        }
    }
}

struct Splat {
    id: SurfelId,
    center: Vector2<f64>,
    depth: f64,
    radius: f64,
    point: Vector3<f64>,
    normal: Vector3<f64>,
    extent: f64,
}

impl Splat {
    /// Depth where the ray through pixel (u, v) meets the surfel disc, or
    /// `None` when it misses.
    fn hit(&self, u: usize, v: usize, k: &CameraIntrinsics) -> Option<f64> {
        let (z, ray) = self.plane_depth(u, v, k)?;
        ((ray * z - self.point).norm() <= self.extent).then_some(z)
    }

    /// Depth where the ray through pixel (u, v) meets the surfel plane.
    fn plane_depth(&self, u: usize, v: usize, k: &CameraIntrinsics) -> Option<(f64, Vector3<f64>)> {
        let ray = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
        let z = self.normal.dot(&self.point) / self.normal.dot(&ray);
        (z.is_finite() && z > 0.5 * self.depth && z < 2.0 * self.depth).then_some((z, ray))
    }
}

fn visible_splats(map: &SurfelMap, pose: &Pose, k: &CameraIntrinsics) -> Vec<Splat> {
    let world_to_cam = pose.inverse();
    let (w, h) = (k.width as f64, k.height as f64);
    map.iter()
        .filter_map(|s| {
            let p = world_to_cam.transform_point(&s.position);
            if p.z <= 0.0 {
                return None;
            }
            let n = world_to_cam.transform_vector(&s.normal);
            if n.dot(&p) >= 0.0 {
                return None;
            }
            let c = k.project_unchecked(&p);
            let (ur, vr) = (c.x.round(), c.y.round());
            if !(ur >= 0.0 && vr >= 0.0 && ur < w && vr < h) {
                return None;
            }
            Some(Splat {
                id: s.id,
                center: c,
                depth: p.z,
                radius: (k.fx * s.radius / p.z).max(1.0),
                point: p,
                normal: n,
                extent: s.radius,
            })
        })
        .collect()
}

fn for_each_covered(s: &Splat, k: &CameraIntrinsics, mut f: impl FnMut(usize, usize, f64)) {
    let r2 = s.radius * s.radius;
    let u0 = (s.center.x - s.radius).ceil().max(0.0) as usize;
    let v0 = (s.center.y - s.radius).ceil().max(0.0) as usize;
    let u1 = ((s.center.x + s.radius).floor() as isize).min(k.width as isize - 1);
    let v1 = ((s.center.y + s.radius).floor() as isize).min(k.height as isize - 1);
    // Always include the pixel containing the center.
    let (uc, vc) = (s.center.x.round() as usize, s.center.y.round() as usize);
    let mut center_seen = false;
    if u1 >= 0 && v1 >= 0 {
        for v in v0..=v1 as usize {
            for u in u0..=u1 as usize {
                let du = u as f64 - s.center.x;
                let dv = v as f64 - s.center.y;
                if du * du + dv * dv <= r2 || (u == uc && v == vc) {
                    center_seen |= u == uc && v == vc;
                    f(u, v, du.abs().max(dv.abs()));
                }
            }
        }
    }
    if !center_seen {
        let du = uc as f64 - s.center.x;
        let dv = vc as f64 - s.center.y;
        f(uc, vc, du.abs().max(dv.abs()));
    }
}

/// Renders the map from `pose` into a per-pixel surfel association.
///
/// Every visible, front-facing surfel splats a disc of its projected radius
/// (at least 1 px). Per pixel, the nearest disc hit by the pixel ray defines
/// the front surface (the nearest splat center when no disc is hit), and
/// candidates within the association depth band of it compete. The surfel
/// whose center lies closest to the pixel (max-norm, quantized to 1e-6 px)
/// wins, then the smaller center depth, then the smaller id. Reported depth is
/// where the ray meets the winner's plane. The outcome does not depend on
/// surfel order.
pub fn render_index_map(map: &SurfelMap, pose: &Pose, k: &CameraIntrinsics) -> IndexMap {
    let mut out = IndexMap::empty(k.width, k.height);
    if map.is_empty() {
        return out;
    }
    let splats = visible_splats(map, pose, k);
    let band = map.config.max_ray_distance;
    let mut front = vec![f64::INFINITY; k.pixel_count()];
    let mut fallback = vec![f64::INFINITY; k.pixel_count()];
    for s in &splats {
        for_each_covered(s, k, |u, v, _| {
            let i = v * k.width + u;
            if let Some(d) = s.hit(u, v, k) {
                front[i] = front[i].min(d);
            }
            fallback[i] = fallback[i].min(s.depth);
        });
    }
    for (f, b) in front.iter_mut().zip(&fallback) {
        if f.is_infinite() {
            *f = *b;
        }
    }
    let mut best = vec![(u64::MAX, f64::INFINITY, u64::MAX, f64::INFINITY); k.pixel_count()];
    for s in &splats {
        for_each_covered(s, k, |u, v, dist| {
            let i = v * k.width + u;
            let d = s.hit(u, v, k).unwrap_or(s.depth);
            if d > front[i] + band {
                return;
            }
            let surface = s.plane_depth(u, v, k).map_or(s.depth, |(z, _)| z);
            let key = ((dist * 1e6).round() as u64, s.depth, s.id.0, surface);
            if key < best[i] {
                best[i] = key;
            }
        });
    }
    for (i, &(_, _, id, depth)) in best.iter().enumerate() {
        if id != u64::MAX {
            out.ids[i] = Some(SurfelId(id));
            out.depth[i] = depth as f32;
        }
    }
    out
}

/// Radial confidence of a pixel: trusts the image center more than the rim.
pub fn sample_weight(u: f64, v: f64, k: &CameraIntrinsics, sigma: f64) -> f64 {
    let corners = [
        (0.0, 0.0),
        (k.width as f64 - 1.0, 0.0),
        (0.0, k.height as f64 - 1.0),
        (k.width as f64 - 1.0, k.height as f64 - 1.0),
    ];
    let max_dist = corners
        .iter()
        .map(|&(x, y)| ((x - k.cx).powi(2) + (y - k.cy).powi(2)).sqrt())
        .fold(0.0, f64::max);
    let gamma = ((u - k.cx).powi(2) + (v - k.cy).powi(2)).sqrt() / max_dist;
    (-gamma * gamma / (2.0 * sigma * sigma)).exp()
}

/// Disc radius covering one pixel's footprint on a surface with camera-frame
/// normal `n` at depth `z`.
pub fn footprint_radius(z: f64, n: &Vector3<f64>, k: &CameraIntrinsics, cfg: &MapConfig) -> f64 {
    let r = z * std::f64::consts::SQRT_2 / (k.fx * n.z.abs());
    if r.is_finite() {
        r.clamp(cfg.min_radius, cfg.max_radius)
    } else {
        cfg.max_radius
    }
}

/// Distance along the pixel ray between a measured point and a surfel center,
/// both in the camera frame.
#[inline]
pub fn ray_distance(point: &Vector3<f64>, surfel: &Vector3<f64>) -> f64 {
    let range = point.norm();
    (range - surfel.dot(&(point / range))).abs()
}

/// Fuses one depth frame into the map at a known camera pose.
pub fn integrate(map: &mut SurfelMap, frame: &Frame, pose: &Pose, k: &CameraIntrinsics) -> Result<IntegrationReport> {
    if !pose.is_finite() {
        return Err(Error::PoseNotFinite);
    }
    let depth: &DepthImage = &frame.depth;
    if (frame.rgb.width, frame.rgb.height) != (depth.width, depth.height) {
        return Err(Error::dims(
            format!("{}x{}", depth.width, depth.height),
            format!("{}x{}", frame.rgb.width, frame.rgb.height),
        ));
    }
    let normals = compute_normals(depth, k)?;
    let index = render_index_map(map, pose, k);
    let world_to_cam = pose.inverse();
    let cfg = map.config;
    let cos_gate = cfg.cos_max_normal_angle();
    let classes = map.classes;
    let mut report = IntegrationReport::default();
    map.frame = frame.index;

    for v in 0..k.height {
        for u in 0..k.width {
            let z = depth.get(u, v) as f64;
            if z <= 0.0 {
                continue;
            }
            let Some(n_cam) = normals.get(u, v) else {
                report.skipped += 1;
                continue;
            };
            let p_cam = backproject_metric(&Vector2::new(u as f64, v as f64), z, k);
            let weight = sample_weight(u as f64, v as f64, k, cfg.weight_sigma);
            let radius = footprint_radius(z, &n_cam, k, &cfg);
            let position = pose.transform_point(&p_cam);
            let normal = pose.transform_vector(&n_cam);
            let color = frame.rgb.get(u, v);

            let associated = index.id(u, v).filter(|&id| {
                let s = map.get(id).expect("index map refers to a live surfel");
                ray_distance(&p_cam, &world_to_cam.transform_point(&s.position)) <= cfg.max_ray_distance
                    && s.normal.dot(&normal) >= cos_gate
            });
            match associated {
                Some(id) => {
                    let s = map.get_mut(id).expect("live surfel");
                    let total = s.confidence + weight;
                    let new_position = (s.position * s.confidence + position * weight) / total;
                    s.normal = (s.normal * s.confidence + normal * weight).normalize();
                    for (c, &x) in s.color.iter_mut().zip(&color) {
                        *c = ((*c as f64 * s.confidence + x as f64 * weight) / total).round() as u8;
                    }
                    s.radius = s.radius.min(radius);
                    s.confidence = total;
                    s.updated_at = frame.index;
                    map.set_position(id, new_position);
                    report.updated += 1;
                }
                None => {
                    map.insert(Surfel::new(position, normal, radius, color, weight, classes, frame.index));
                    report.created += 1;
                }
            }
        }
    }
    Ok(report)
}
