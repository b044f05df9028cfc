//! Frame-to-model camera tracking by joint point-to-plane ICP and photometric
//! alignment, solved with Gauss-Newton over an image pyramid.
//!
//! Pose increments are right-multiplied (`T ← T·exp(δ)`), so the normal
//! equations are expressed in the camera frame and do not depend on where
//! the map origin lies.

use nalgebra::{Matrix2x3, Matrix6, RowVector6, SymmetricEigen, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::frame::{Frame, GrayImage};
use crate::geometry::{backproject_metric, compute_normals, skew, CameraIntrinsics, Pose};
use crate::surfel_map::{ray_distance, render_index_map, SurfelMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingConfig {
    pub levels: usize,
    pub max_iterations: usize,
    /// Weight of the geometric term; the photometric term gets `1 - λ`.
    pub geometric_weight: f64,
    /// Point-to-plane residuals are divided by this, in meters, so they are
    /// commensurate with intensities in `[0, 1]`.
    pub geometric_scale: f64,
    /// Stop once the increment norm falls below this.
    pub convergence: f64,
    pub min_inliers: usize,
    pub huber: f64,
    /// Normal equations worse conditioned than this mean the view is degenerate.
    pub max_condition: f64,
    pub max_halvings: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            levels: 3,
            max_iterations: 10,
            geometric_weight: 0.9,
            geometric_scale: 1e-3,
            convergence: 1e-7,
            min_inliers: 200,
            huber: 0.1,
            max_condition: 1e8,
            max_halvings: 8,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.levels >= 1
            && self.max_iterations >= 1
            && (0.0..=1.0).contains(&self.geometric_weight)
            && self.geometric_scale > 0.0
            && self.convergence > 0.0
            && self.huber > 0.0
            && self.max_condition > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid tracking configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackingStatus {
    Converged,
    MaxIterations,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingResult {
    pub pose: Pose,
    pub inliers: usize,
    /// Joint energy at the returned pose.
    pub residual: f64,
    pub status: TrackingStatus,
    /// Gauss-Newton iterations summed over all levels.
    pub iterations: usize,
}

/// Point-to-plane residual of a camera-frame point against a model surfel,
/// and its Jacobian with respect to a right increment of `pose`.
pub fn icp_residual(
    pose: &Pose,
    frame_point: &Vector3<f64>,
    model_point: &Vector3<f64>,
    model_normal: &Vector3<f64>,
) -> (f64, RowVector6<f64>) {
    let x = pose.transform_point(frame_point);
    let r = (x - model_point).dot(model_normal);
    let n_cam = pose.rotation.transpose() * model_normal;
    let w = frame_point.cross(&n_cam);
    (r, RowVector6::new(n_cam.x, n_cam.y, n_cam.z, w.x, w.y, w.z))
}

/// Intensity residual of a frame pixel against the model image rendered at
/// `reference`, with its Jacobian. `None` if the point leaves the model image.
pub fn photometric_residual(
    pose: &Pose,
    reference_inv: &Pose,
    frame_point: &Vector3<f64>,
    frame_intensity: f64,
    model: &GrayImage,
    k: &CameraIntrinsics,
) -> Option<(f64, RowVector6<f64>)> {
    let x = pose.transform_point(frame_point);
    let q = reference_inv.transform_point(&x);
    if q.z <= 0.0 {
        return None;
    }
    let px = k.project_unchecked(&q);
    let (value, gu, gv) = model.sample(px.x, px.y)?;
    let r = frame_intensity - value;
    let iz = 1.0 / q.z;
    let dpi = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * q.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * q.y * iz * iz,
    );
    let grad = Vector2::new(gu, gv).transpose() * dpi * reference_inv.rotation * pose.rotation;
    let jt = -grad;
    let jr = grad * skew(frame_point);
    Some((r, RowVector6::new(jt[0], jt[1], jt[2], jr[0], jr[1], jr[2])))
}

#[derive(Clone, Copy)]
struct ModelPoint {
    /// Position and normal in the reference camera frame.
    position: Vector3<f64>,
    normal: Vector3<f64>,
}

/// The map rendered once from the initial estimate.
struct ModelView {
    k: CameraIntrinsics,
    surfels: Vec<Option<ModelPoint>>,
    gray: GrayImage,
}

impl ModelView {
    fn render(map: &SurfelMap, reference: &Pose, k: &CameraIntrinsics) -> Self {
        let index = render_index_map(map, reference, k);
        let reference_inv = reference.inverse();
        let mut surfels = Vec::with_capacity(k.pixel_count());
        for v in 0..k.height {
            for u in 0..k.width {
                surfels.push(index.id(u, v).and_then(|id| map.get(id)).map(|s| ModelPoint {
                    position: reference_inv.transform_point(&s.position),
                    normal: reference_inv.transform_vector(&s.normal),
                }));
            }
        }
        ModelView {
            k: *k,
            surfels,
            gray: index.intensity(map),
        }
    }

    fn lookup(&self, q: &Vector3<f64>) -> Option<ModelPoint> {
        if q.z <= 0.0 {
            return None;
        }
        let px = self.k.project_unchecked(q);
        let (u, v) = (px.x.round(), px.y.round());
        if !(u >= 0.0 && v >= 0.0 && u < self.k.width as f64 && v < self.k.height as f64) {
            return None;
        }
        self.surfels[v as usize * self.k.width + u as usize]
    }
}

struct Sample {
    point: Vector3<f64>,
    normal: Vector3<f64>,
    intensity: f64,
}

struct Level {
    /// Pixels with depth and a valid normal, in raster order.
    samples: Vec<Sample>,
}

fn pyramid(frame: &Frame, k: &CameraIntrinsics, levels: usize) -> Result<Vec<Level>> {
    let mut out: Vec<Level> = Vec::with_capacity(levels);
    let mut depth = frame.depth.clone();
    let mut gray = frame.rgb.to_gray();
    for l in 0..levels {
        if l > 0 {
            depth = depth.downsample_min();
            gray = gray.downsample_box();
        }
        let kl = k.downsampled(l);
        let normals = compute_normals(&depth, &kl)?;
        let mut samples = Vec::new();
        for v in 0..kl.height {
            for u in 0..kl.width {
                let z = depth.get(u, v) as f64;
                let Some(normal) = normals.get(u, v).filter(|_| z > 0.0) else { continue };
                samples.push(Sample {
                    point: backproject_metric(&Vector2::new(u as f64, v as f64), z, &kl),
                    normal,
                    intensity: gray.get(u, v) as f64,
                });
            }
        }
        out.push(Level { samples });
    }
    Ok(out)
}

const CHUNK: usize = 1024;

#[derive(Default)]
struct Accum {
    h: Matrix6<f64>,
    b: Vector6<f64>,
    energy: f64,
    inliers: usize,
}

impl Accum {
    fn add(&mut self, other: &Self) {
        self.h += other.h;
        self.b += other.b;
        self.energy += other.energy;
        self.inliers += other.inliers;
    }
}

struct Problem<'a> {
    model: &'a ModelView,
    cfg: &'a TrackingConfig,
    cos_gate: f64,
    max_ray_distance: f64,
}

impl Problem<'_> {
    fn huber(&self, r: f64) -> (f64, f64) {
        let a = r.abs();
        if a <= self.cfg.huber {
            (r * r, 1.0)
        } else {
            (2.0 * self.cfg.huber * a - self.cfg.huber * self.cfg.huber, self.cfg.huber / a)
        }
    }

    /// Energy, and when `jacobians` is set the weighted normal equations.
    /// Partial sums are reduced in a fixed order so results are reproducible.
    /// `pose` maps the current camera into the reference camera.
    fn accumulate(&self, level: &Level, pose: &Pose, jacobians: bool) -> Accum {
        let lambda = self.cfg.geometric_weight;
        let scale = self.cfg.geometric_scale;
        let identity = Pose::identity();
        let mut total = Accum::default();
        for chunk in level.samples.chunks(CHUNK) {
            let mut part = Accum::default();
            for s in chunk {
                let q = pose.transform_point(&s.point);
                let Some(m) = self.model.lookup(&q) else { continue };
                if ray_distance(&q, &m.position) > self.max_ray_distance
                    || pose.transform_vector(&s.normal).dot(&m.normal) < self.cos_gate
                {
                    continue;
                }
                let (r, j) = icp_residual(pose, &s.point, &m.position, &m.normal);
                let (r, j) = (r / scale, j.transpose() / scale);
                part.energy += lambda * r * r;
                part.inliers += 1;
                if jacobians {
                    part.h.ger(lambda, &j, &j, 1.0);
                    part.b.axpy(lambda * r, &j, 1.0);
                }
                if lambda < 1.0 {
                    if let Some((r, j)) = photometric_residual(
                        pose,
                        &identity,
                        &s.point,
                        s.intensity,
                        &self.model.gray,
                        &self.model.k,
                    ) {
                        let (rho, w) = self.huber(r);
                        part.energy += (1.0 - lambda) * rho;
                        if jacobians {
                            let j = j.transpose();
                            let c = (1.0 - lambda) * w;
                            part.h.ger(c, &j, &j, 1.0);
                            part.b.axpy(c * r, &j, 1.0);
                        }
                    }
                }
            }
            total.add(&part);
        }
        total
    }
}

fn condition_number(h: &Matrix6<f64>) -> f64 {
    let eig = SymmetricEigen::new(*h);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Estimates the camera pose of `frame` against the map, starting at `init`.
pub fn estimate_pose(
    frame: &Frame,
    map: &SurfelMap,
    init: &Pose,
    k: &CameraIntrinsics,
    cfg: &TrackingConfig,
) -> Result<TrackingResult> {
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    if !init.is_finite() {
        return Err(Error::PoseNotFinite);
    }
    cfg.validate()?;
    let lost = |inliers| TrackingResult {
        pose: *init,
        inliers,
        residual: f64::INFINITY,
        status: TrackingStatus::Lost,
        iterations: 0,
    };

    let model = ModelView::render(map, init, k);
    let levels = pyramid(frame, k, cfg.levels)?;
    let problem = Problem {
        model: &model,
        cfg,
        cos_gate: map.config().cos_max_normal_angle(),
        max_ray_distance: map.config().max_ray_distance,
    };

    // Solved relative to the reference camera; the map frame never enters.
    let mut pose = Pose::identity();
    let mut iterations = 0;
    let mut converged = false;
    for (l, level) in levels.iter().enumerate().rev() {
        let finest = l == 0;
        converged = false;
        for _ in 0..cfg.max_iterations {
            let acc = problem.accumulate(level, &pose, true);
            let degenerate = acc.inliers < cfg.min_inliers.max(6) || condition_number(&acc.h) > cfg.max_condition;
            if degenerate {
                if finest {
                    return Ok(lost(acc.inliers));
                }
                break;
            }
            iterations += 1;
            let Some(step) = acc.h.cholesky().map(|c| -c.solve(&acc.b)) else {
                if finest {
                    return Ok(lost(acc.inliers));
                }
                break;
            };
            let mut delta = step;
            let mut accepted = None;
            for _ in 0..=cfg.max_halvings {
                let candidate = pose.compose(&Pose::exp(&delta));
                let e = problem.accumulate(level, &candidate, false).energy;
                if e <= acc.energy {
                    accepted = Some(candidate);
                    break;
                }
                delta *= 0.5;
            }
            let Some(candidate) = accepted else {
                converged = true;
                break;
            };
            pose = candidate;
            if delta.norm() < cfg.convergence {
                converged = true;
                break;
            }
        }
    }
    let last = problem.accumulate(&levels[0], &pose, false);
    if last.inliers < cfg.min_inliers {
        return Ok(lost(last.inliers));
    }
    Ok(TrackingResult {
        pose: init.compose(&pose).orthonormalized(),
        inliers: last.inliers,
        residual: last.energy,
        status: if converged {
            TrackingStatus::Converged
        } else {
            TrackingStatus::MaxIterations
        },
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    pub timestamp: f64,
    pub pose: Pose,
    pub lost: bool,
}

/// Turns per-frame results into a head trajectory; lost frames hold the last
/// good pose.
pub fn head_trajectory(results: &[(f64, TrackingResult)]) -> Vec<TrajectoryEntry> {
    let mut held: Option<Pose> = None;
    results
        .iter()
        .map(|(t, r)| {
            let lost = r.status == TrackingStatus::Lost;
            let pose = if lost { held.unwrap_or(r.pose) } else { r.pose };
            if !lost {
                held = Some(r.pose);
            }
            TrajectoryEntry {
                timestamp: *t,
                pose,
                lost,
            }
        })
        .collect()
}

/// Copy of the map with every surfel moved by the rigid transform `g`.
pub fn transform_map(map: &SurfelMap, g: &Pose) -> SurfelMap {
    let mut out = map.clone();
    let ids: Vec<_> = map.iter().map(|s| s.id).collect();
    for id in ids {
        let s = map.get(id).expect("live");
        out.set_position(id, g.transform_point(&s.position));
        out.get_mut(id).expect("live").normal = g.transform_vector(&s.normal);
    }
    out
}
