//! Synthetic scenes with exact ground truth: ray-cast RGB-D frames, noisy
//! class probability maps, camera orbits and gaze scanpaths.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frame::{DepthImage, Frame, RgbImage};
use crate::gaze::GazeSample;
use crate::geometry::{apply_homography, CameraIntrinsics, Homography, Pose};
use crate::semantic::ProbabilityFrame;

const FLOOR: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Axis-aligned box.
    Box { center: Vector3<f64>, size: Vector3<f64> },
    /// Infinite plane through `point` with unit `normal`.
    Plane { point: Vector3<f64>, normal: Vector3<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub class: usize,
    pub color: [u8; 3],
}

impl Primitive {
    /// Ray parameter of the first intersection with `t > 0`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self.shape {
            Shape::Plane { point, normal } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = normal.dot(&(point - origin)) / denom;
                (t > 0.0).then_some(t)
            }
            Shape::Box { center, size } => {
                let lo = center - size / 2.0;
                let hi = center + size / 2.0;
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for i in 0..3 {
                    if dir[i].abs() < 1e-15 {
                        if origin[i] < lo[i] || origin[i] > hi[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (lo[i] - origin[i]) / dir[i];
                    let b = (hi[i] - origin[i]) / dir[i];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 || t1 <= 0.0 {
                    None
                } else if t0 > 0.0 {
                    Some(t0)
                } else {
                    Some(t1)
                }
            }
        }
    }

    /// Distance from a point to the primitive's surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        match self.shape {
            Shape::Plane { point, normal } => normal.dot(&(p - point)).abs(),
            Shape::Box { center, size } => {
                let q = (p - center).abs() - size / 2.0;
                let outside = q.sup(&Vector3::zeros()).norm();
                let inside = q.max().min(0.0);
                (outside + inside).abs()
            }
        }
    }

    /// Point fixated when looking at this primitive.
    pub fn center(&self) -> Vector3<f64> {
        match self.shape {
            Shape::Box { center, .. } => center,
            Shape::Plane { point, .. } => point,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub bounds: (Vector3<f64>, Vector3<f64>),
}

impl SyntheticScene {
    /// A 6 m × 6 m room (y up) with four walls and three boxes resting at
    /// `y = -1`; classes 1–7.
    pub fn room() -> Self {
        let wall = |point: Vector3<f64>, normal: Vector3<f64>, class, color| Primitive {
            shape: Shape::Plane { point, normal },
            class,
            color,
        };
        let block = |angle: f64, dist: f64, size: Vector3<f64>, class, color| Primitive {
            shape: Shape::Box {
                center: Vector3::new(dist * angle.to_radians().sin(), FLOOR + size.y / 2.0, dist * angle.to_radians().cos()),
                size,
            },
            class,
            color,
        };
        SyntheticScene {
            primitives: vec![
                wall(Vector3::new(0.0, 0.0, 3.0), Vector3::new(0.0, 0.0, -1.0), 1, [200, 180, 160]),
                wall(Vector3::new(3.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0), 2, [160, 190, 210]),
                wall(Vector3::new(0.0, 0.0, -3.0), Vector3::new(0.0, 0.0, 1.0), 3, [170, 200, 150]),
                wall(Vector3::new(-3.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), 4, [210, 170, 190]),
                block(-30.0, 2.0, Vector3::new(0.6, 0.8, 0.6), 5, [220, 60, 60]),
                block(5.0, 2.2, Vector3::new(0.7, 0.6, 0.5), 6, [60, 160, 60]),
                block(35.0, 1.8, Vector3::new(0.5, 0.9, 0.7), 7, [60, 80, 220]),
            ],
            bounds: (Vector3::new(-3.0, -1.5, -3.0), Vector3::new(3.0, 1.5, 3.0)),
        }
    }

    pub fn max_class(&self) -> usize {
        self.primitives.iter().map(|p| p.class).max().unwrap_or(0)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let (lo, hi) = &self.bounds;
        (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
    }

    /// Nearest primitive along a ray: `(t, primitive index)`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(origin, dir).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
    }

    /// Parses one primitive per line:
    ///
    /// ```text
    /// box   cx cy cz sx sy sz class r g b
    /// plane px py pz nx ny nz class r g b
    /// bounds minx miny minz maxx maxy maxz
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut primitives = Vec::new();
        let mut bounds = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let kind = tokens.next().unwrap_or_default();
            let values: Vec<f64> = tokens
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse("scene", format!("line {}: {e}", n + 1)))?;
            let bad = |msg: &str| Error::parse("scene", format!("line {}: {msg}", n + 1));
            let v3 = |i: usize| Vector3::new(values[i], values[i + 1], values[i + 2]);
            match kind {
                "bounds" => {
                    if values.len() != 6 {
                        return Err(bad("bounds needs 6 values"));
                    }
                    bounds = Some((v3(0), v3(3)));
                }
                "box" | "plane" => {
                    if values.len() != 10 {
                        return Err(bad("primitive needs 10 values"));
                    }
                    if values[6] < 0.0 || values[6].fract() != 0.0 {
                        return Err(bad("class must be a nonnegative integer"));
                    }
                    let color = [values[7], values[8], values[9]].map(|c| c.clamp(0.0, 255.0) as u8);
                    let shape = if kind == "box" {
                        if v3(3).min() <= 0.0 {
                            return Err(bad("box size must be positive"));
                        }
                        Shape::Box { center: v3(0), size: v3(3) }
                    } else {
                        let normal = v3(3);
                        if normal.norm() < 1e-12 {
                            return Err(bad("plane normal must be nonzero"));
                        }
                        Shape::Plane { point: v3(0), normal: normal.normalize() }
                    };
                    primitives.push(Primitive {
                        shape,
                        class: values[6] as usize,
                        color,
                    });
                }
                other => return Err(bad(&format!("unknown primitive `{other}`"))),
            }
        }
        if primitives.is_empty() {
            return Err(Error::parse("scene", "no primitives"));
        }
        let bounds = bounds.unwrap_or_else(|| {
            let mut lo = Vector3::repeat(f64::INFINITY);
            let mut hi = Vector3::repeat(f64::NEG_INFINITY);
            for p in &primitives {
                let (a, b) = match p.shape {
                    Shape::Box { center, size } => (center - size / 2.0, center + size / 2.0),
                    Shape::Plane { point, .. } => (point, point),
                };
                lo = lo.inf(&a);
                hi = hi.sup(&b);
            }
            (lo, hi)
        });
        Ok(SyntheticScene { primitives, bounds })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "bounds {} {} {} {} {} {}\n",
            self.bounds.0.x, self.bounds.0.y, self.bounds.0.z, self.bounds.1.x, self.bounds.1.y, self.bounds.1.z
        );
        for p in &self.primitives {
            let (kind, a, b) = match p.shape {
                Shape::Box { center, size } => ("box", center, size),
                Shape::Plane { point, normal } => ("plane", point, normal),
            };
            out += &format!(
                "{kind} {} {} {} {} {} {} {} {} {} {}\n",
                a.x, a.y, a.z, b.x, b.y, b.z, p.class, p.color[0], p.color[1], p.color[2]
            );
        }
        out
    }
}

/// A rendered frame plus per-pixel ground truth.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub frame: Frame,
    pub true_class: Vec<Option<usize>>,
    pub primitive: Vec<Option<usize>>,
}

/// Ray-casts the scene from `pose`. Depth is the camera-frame z of the first hit.
pub fn render_frame(scene: &SyntheticScene, pose: &Pose, k: &CameraIntrinsics, index: usize, timestamp: f64) -> RenderedFrame {
    let n = k.pixel_count();
    let mut depth = DepthImage::new(k.width, k.height);
    let mut rgb = RgbImage::new(k.width, k.height);
    let mut true_class = vec![None; n];
    let mut primitive = vec![None; n];
    let origin = pose.translation;
    for v in 0..k.height {
        for u in 0..k.width {
            // Camera-frame ray with z = 1, so the hit parameter is the depth.
            let dir = pose.rotation * k.ray(u as f64, v as f64);
            if let Some((t, i)) = scene.cast(&origin, &dir) {
                let p = &scene.primitives[i];
                let idx = v * k.width + u;
                depth.data[idx] = t as f32;
                rgb.data[idx] = p.color;
                true_class[idx] = Some(p.class);
                primitive[idx] = Some(i);
            }
        }
    }
    RenderedFrame {
        frame: Frame::new(index, timestamp, rgb, depth),
        true_class,
        primitive,
    }
}

/// Class probability maps with a known accuracy and label-flip rate.
///
/// Each labelled pixel puts `accuracy` on its peak class and spreads the rest
/// evenly; with probability `flip_rate` the peak moves to a random wrong
/// class. Unlabelled pixels are uniform.
pub fn noisy_probmap(
    true_class: &[Option<usize>],
    width: usize,
    height: usize,
    classes: usize,
    accuracy: f64,
    flip_rate: f64,
    seed: u64,
) -> Result<ProbabilityFrame> {
    if classes < 2 || !(accuracy > 1.0 / classes as f64 && accuracy <= 1.0) {
        return Err(Error::InvalidAccuracy { accuracy, classes });
    }
    if !(0.0..=1.0).contains(&flip_rate) {
        return Err(Error::Config(format!("flip rate {flip_rate} outside [0, 1]")));
    }
    if true_class.len() != width * height {
        return Err(Error::dims(width * height, true_class.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest = ((1.0 - accuracy) / (classes - 1) as f64) as f32;
    let mut data = Vec::with_capacity(width * height * classes);
    for t in true_class {
        match *t {
            Some(c) if c < classes => {
                let mut peak = c;
                if flip_rate > 0.0 && rng.random_bool(flip_rate) {
                    let r = rng.random_range(0..classes - 1);
                    peak = if r >= c { r + 1 } else { r };
                }
                data.extend((0..classes).map(|i| if i == peak { accuracy as f32 } else { rest }));
            }
            _ => data.extend(std::iter::repeat_n(1.0 / classes as f32, classes)),
        }
    }
    ProbabilityFrame::new(width, height, classes, data)
}

/// Orbit of radius `radius` around the vertical axis at eye level `height`
/// (y up), looking outward and pitched up by `pitch` degrees, sweeping yaw
/// from `start` by `step` degrees per frame.
pub fn orbit(frames: usize, radius: f64, height: f64, start: f64, step: f64, pitch: f64) -> Vec<Pose> {
    (0..frames)
        .map(|i| {
            let yaw = (start + step * i as f64).to_radians();
            let forward_flat = Vector3::new(yaw.sin(), 0.0, yaw.cos());
            let eye = forward_flat * radius + Vector3::new(0.0, height, 0.0);
            let p = pitch.to_radians();
            let forward = forward_flat * p.cos() + Vector3::new(0.0, p.sin(), 0.0);
            Pose::look_at(eye, eye + forward, Vector3::new(0.0, -1.0, 0.0))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanpathConfig {
    pub samples_per_frame: usize,
    pub frame_interval: f64,
    /// Pixel noise standard deviation.
    pub jitter: f64,
    /// Mean fixation length in samples.
    pub fixation_samples: usize,
    /// Minimum distance of a fixation target from the image border, px.
    pub margin: f64,
}

impl Default for ScanpathConfig {
    fn default() -> Self {
        ScanpathConfig {
            samples_per_frame: 3,
            frame_interval: 1.0 / 30.0,
            jitter: 2.0,
            fixation_samples: 12,
            margin: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSample {
    pub sample: GazeSample,
    pub frame: usize,
    /// Index of the fixated primitive.
    pub target: usize,
}

/// Primitives whose fixation point is unoccluded and inside the image.
pub fn visible_targets(scene: &SyntheticScene, pose: &Pose, k: &CameraIntrinsics, margin: f64) -> Vec<(usize, Vector2<f64>)> {
    let inv = pose.inverse();
    scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let c = inv.transform_point(&p.center());
            if c.z <= 0.0 {
                return None;
            }
            let px = k.project_unchecked(&c);
            let inside = px.x >= margin
                && px.y >= margin
                && px.x < k.width as f64 - margin
                && px.y < k.height as f64 - margin;
            if !inside {
                return None;
            }
            let dir = pose.rotation * k.ray(px.x, px.y);
            let (_, hit) = scene.cast(&pose.translation, &dir)?;
            (hit == i).then_some((i, px))
        })
        .collect()
}

/// Simulated gaze: fixations on random visible primitives, one timestamped
/// sample set per frame, mapped into eye-tracker pixels with `h⁻¹`.
pub fn scanpath(
    scene: &SyntheticScene,
    trajectory: &[(f64, Pose)],
    k: &CameraIntrinsics,
    h: &Homography,
    cfg: &ScanpathConfig,
    seed: u64,
) -> Result<Vec<ScanSample>> {
    if trajectory.is_empty() {
        return Err(Error::Config("scanpath needs a nonempty trajectory".into()));
    }
    let to_tracker = Homography::new(
        h.matrix()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateConfiguration("singular homography".into()))?,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut target: Option<usize> = None;
    let mut remaining = 0usize;
    let mut out = Vec::new();
    for (f, (t, pose)) in trajectory.iter().enumerate() {
        let visible = visible_targets(scene, pose, k, cfg.margin);
        if visible.is_empty() {
            continue;
        }
        let dt = cfg.frame_interval / cfg.samples_per_frame as f64;
        for s in 0..cfg.samples_per_frame {
            let still_visible = target.and_then(|i| visible.iter().find(|v| v.0 == i));
            let (idx, px) = match still_visible {
                Some(&v) if remaining > 0 => v,
                _ => {
                    let v = visible[rng.random_range(0..visible.len())];
                    remaining = 1 + rng.random_range(0..2 * cfg.fixation_samples.max(1));
                    v
                }
            };
            target = Some(idx);
            remaining = remaining.saturating_sub(1);
            let jittered = if cfg.jitter > 0.0 {
                px + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                px
            };
            let eye = apply_homography(&jittered, &to_tracker)?;
            out.push(ScanSample {
                sample: GazeSample::new(t + s as f64 * dt, eye.x, eye.y),
                frame: f,
                target: idx,
            });
        }
    }
    Ok(out)
}

/// Everything needed to write or replay a synthetic sequence.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub scene: SyntheticScene,
    pub intrinsics: CameraIntrinsics,
    pub homography: Homography,
    pub classes: usize,
    pub frames: Vec<RenderedFrame>,
    pub poses: Vec<Pose>,
    pub gaze: Vec<ScanSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceConfig {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub accuracy: f64,
    pub flip_rate: f64,
    pub orbit_radius: f64,
    /// Camera height above the origin; the floor is 1 m below it.
    pub eye_height: f64,
    pub yaw_start: f64,
    pub yaw_step: f64,
    pub pitch: f64,
    pub scanpath: ScanpathConfig,
    pub seed: u64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            frames: 50,
            width: 320,
            height: 240,
            classes: 10,
            accuracy: 0.4,
            flip_rate: 0.2,
            orbit_radius: 0.5,
            eye_height: 0.5,
            yaw_start: -40.0,
            yaw_step: 0.8,
            pitch: -20.0,
            scanpath: ScanpathConfig::default(),
            seed: 1,
        }
    }
}

impl SequenceConfig {
    /// Intrinsics with a Kinect-like field of view at the configured size.
    pub fn intrinsics(&self) -> CameraIntrinsics {
        let f = 525.0 * self.width as f64 / 640.0;
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: self.width as f64 / 2.0 - 0.5,
            cy: self.height as f64 / 2.0 - 0.5,
            width: self.width,
            height: self.height,
            depth_scale: 1e-4,
        }
    }
}

/// Renders a full synthetic sequence deterministically from `cfg.seed`.
pub fn generate_sequence(scene: &SyntheticScene, cfg: &SequenceConfig) -> Result<SyntheticSequence> {
    let poses = orbit(cfg.frames, cfg.orbit_radius, cfg.eye_height, cfg.yaw_start, cfg.yaw_step, cfg.pitch);
    sequence_along(scene, cfg, poses)
}

/// Like [`generate_sequence`] but along the given camera poses; the orbit
/// settings and frame count of `cfg` are ignored.
pub fn sequence_along(scene: &SyntheticScene, cfg: &SequenceConfig, poses: Vec<Pose>) -> Result<SyntheticSequence> {
    if scene.max_class() >= cfg.classes {
        return Err(Error::Config(format!(
            "scene uses class {} but only {} classes are configured",
            scene.max_class(),
            cfg.classes
        )));
    }
    if poses.is_empty() {
        return Err(Error::Config("a sequence needs at least one pose".into()));
    }
    let k = cfg.intrinsics();
    let mut frames = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let t = i as f64 * cfg.scanpath.frame_interval;
        let mut r = render_frame(scene, pose, &k, i, t);
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        r.frame.probabilities = Some(noisy_probmap(
            &r.true_class,
            k.width,
            k.height,
            cfg.classes,
            cfg.accuracy,
            cfg.flip_rate,
            seed,
        )?);
        frames.push(r);
    }
    let timed: Vec<(f64, Pose)> = frames.iter().map(|f| f.frame.timestamp).zip(poses.iter().copied()).collect();
    let homography = Homography::identity();
    let gaze = scanpath(scene, &timed, &k, &homography, &cfg.scanpath, cfg.seed ^ 0x5eed)?;
    for g in &gaze {
        frames[g.frame].frame.gaze.push(g.sample);
    }
    Ok(SyntheticSequence {
        scene: scene.clone(),
        intrinsics: k,
        homography,
        classes: cfg.classes,
        frames,
        poses,
        gaze,
    })
}

/// Names for the classes used by [`SyntheticScene::room`], padded with
/// generic names up to `classes`.
pub fn room_class_names(classes: usize) -> Vec<String> {
    const NAMES: [&str; 8] = [
        "background",
        "wall_north",
        "wall_east",
        "wall_south",
        "wall_west",
        "furniture",
        "objects",
        "books",
    ];
    (0..classes)
        .map(|c| NAMES.get(c).map_or_else(|| format!("class{c}"), |n| n.to_string()))
        .collect()
}

/// Yaw of a pose's viewing direction in the horizontal plane, degrees.
pub fn heading(pose: &Pose) -> f64 {
    let f = pose.rotation.column(2);
    f.x.atan2(f.z) * 180.0 / PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::backproject_metric;

    fn small() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 39.5, 29.5, 80, 60, 1e-4).unwrap()
    }

    fn wall_scene() -> SyntheticScene {
        SyntheticScene::parse("plane 0 0 2 0 0 -1 3 100 100 100\n").unwrap()
    }

    #[test]
    fn planar_render_has_constant_depth() {
        let r = render_frame(&wall_scene(), &Pose::identity(), &small(), 0, 0.0);
        assert!(r.frame.depth.data.iter().all(|&z| (z - 2.0).abs() < 1e-6));
        assert!(r.true_class.iter().all(|&c| c == Some(3)));
    }

    #[test]
    fn box_pixels_carry_box_class() {
        let scene = SyntheticScene::parse("plane 0 0 3 0 0 -1 1 0 0 0\nbox 0 0 2 0.5 0.5 0.5 4 255 0 0\n").unwrap();
        let k = small();
        let r = render_frame(&scene, &Pose::identity(), &k, 0, 0.0);
        assert_eq!(r.true_class[30 * 80 + 40], Some(4));
        assert!((r.frame.depth.get(40, 30) - 1.75).abs() < 1e-6);
        assert_eq!(r.true_class[0], Some(1));
    }

    #[test]
    fn backprojected_pixels_lie_on_surfaces() {
        let scene = SyntheticScene::room();
        let k = small();
        for pose in orbit(5, 0.5, 0.0, -40.0, 20.0, -10.0) {
            let r = render_frame(&scene, &pose, &k, 0, 0.0);
            for v in 0..k.height {
                for u in 0..k.width {
                    let i = v * k.width + u;
                    let z = r.frame.depth.data[i] as f64;
                    let p = pose.transform_point(&backproject_metric(&Vector2::new(u as f64, v as f64), z, &k));
                    let prim = &scene.primitives[r.primitive[i].unwrap()];
                    assert!(prim.surface_distance(&p) < 1e-5);
                }
            }
        }
    }

    #[test]
    fn depth_is_nearest_ray_hit() {
        let scene = SyntheticScene::room();
        let k = small();
        let pose = orbit(1, 0.5, 0.0, 10.0, 0.0, -10.0)[0];
        let r = render_frame(&scene, &pose, &k, 0, 0.0);
        for v in (0..k.height).step_by(7) {
            for u in (0..k.width).step_by(7) {
                let dir = pose.rotation * k.ray(u as f64, v as f64);
                let nearest = scene
                    .primitives
                    .iter()
                    .filter_map(|p| p.intersect(&pose.translation, &dir))
                    .fold(f64::INFINITY, f64::min);
                assert!((r.frame.depth.get(u, v) as f64 - nearest).abs() < 1e-6 * nearest);
            }
        }
    }

    #[test]
    fn probmap_noiseless_is_one_hot() {
        let truth = vec![Some(0), Some(2), None];
        let p = noisy_probmap(&truth, 3, 1, 3, 1.0, 0.0, 1).unwrap();
        assert_eq!(p.pixel(0, 0), &[1.0, 0.0, 0.0]);
        assert_eq!(p.pixel(1, 0), &[0.0, 0.0, 1.0]);
        p.validate(1e-4).unwrap();
    }

    #[test]
    fn probmap_rejects_chance_accuracy() {
        let truth = vec![Some(0); 4];
        assert!(matches!(
            noisy_probmap(&truth, 2, 2, 4, 0.25, 0.0, 1),
            Err(Error::InvalidAccuracy { .. })
        ));
        assert!(noisy_probmap(&truth, 2, 2, 4, 1.5, 0.0, 1).is_err());
    }

    #[test]
    fn probmap_is_seeded() {
        let truth: Vec<_> = (0..100).map(|i| Some(i % 5)).collect();
        let a = noisy_probmap(&truth, 10, 10, 5, 0.4, 0.3, 9).unwrap();
        let b = noisy_probmap(&truth, 10, 10, 5, 0.4, 0.3, 9).unwrap();
        let c = noisy_probmap(&truth, 10, 10, 5, 0.4, 0.3, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.validate(1e-4).unwrap();
    }

    #[test]
    fn scanpath_single_primitive() {
        let k = small();
        let scene = wall_scene();
        let traj: Vec<_> = (0..5).map(|i| (i as f64, Pose::identity())).collect();
        let cfg = ScanpathConfig {
            jitter: 0.0,
            ..Default::default()
        };
        let s = scanpath(&scene, &traj, &k, &Homography::identity(), &cfg, 3).unwrap();
        assert_eq!(s.len(), 15);
        assert!(s.iter().all(|x| x.target == 0));
        // The wall's anchor point projects to the principal point.
        assert!(s.iter().all(|x| (x.sample.pixel - Vector2::new(k.cx, k.cy)).norm() < 1e-9));
    }

    #[test]
    fn scanpath_is_seeded() {
        let k = small();
        let scene = SyntheticScene::room();
        let traj: Vec<_> = orbit(10, 0.5, 0.0, -40.0, 5.0, -10.0).into_iter().enumerate().map(|(i, p)| (i as f64, p)).collect();
        let cfg = ScanpathConfig { margin: 5.0, ..Default::default() };
        let a = scanpath(&scene, &traj, &k, &Homography::identity(), &cfg, 5).unwrap();
        let b = scanpath(&scene, &traj, &k, &Homography::identity(), &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn scene_text_round_trip() {
        let scene = SyntheticScene::room();
        assert_eq!(SyntheticScene::parse(&scene.to_text()).unwrap(), scene);
        assert!(SyntheticScene::parse("sphere 0 0 0 1 1 1 1 0 0 0").is_err());
        assert!(SyntheticScene::parse("box 0 0 0 1 1").is_err());
    }

    #[test]
    fn orbit_step_limits() {
        let poses = orbit(10, 0.5, 0.0, -40.0, 0.8, -10.0);
        for w in poses.windows(2) {
            assert!(w[0].distance_to(&w[1]) <= 0.01);
            assert!(w[0].angle_to(&w[1]).to_degrees() <= 1.0);
        }
    }
}
