//! Pinhole camera model, rigid transforms and planar homographies.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::frame::DepthImage;

/// Relative depth jump between neighbours above which a normal is rejected.
pub const NORMAL_DISCONTINUITY: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Meters per raw depth unit.
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        depth_scale: f64,
    ) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            depth_scale,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64
            && self.depth_scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Intrinsics of an image downsampled by `2^level`.
    pub fn downsampled(&self, level: usize) -> Self {
        let mut k = *self;
        for _ in 0..level {
            k.fx /= 2.0;
            k.fy /= 2.0;
            k.cx = (k.cx + 0.5) / 2.0 - 0.5;
            k.cy = (k.cy + 0.5) / 2.0 - 0.5;
            k.width /= 2;
            k.height /= 2;
        }
        k
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Projection without bounds or depth checks.
    #[inline]
    pub fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }

    #[inline]
    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }

    /// Unit-depth ray through a pixel.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Parses the `key=value` intrinsics format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut fx = None;
        let mut fy = None;
        let mut cx = None;
        let mut cy = None;
        let mut width = None;
        let mut height = None;
        let mut depth_scale = None;
        for (key, value) in crate::io::key_values(text, "intrinsics")? {
            let num = || {
                value
                    .parse::<f64>()
                    .map_err(|e| Error::parse("intrinsics", format!("{key}: {e}")))
            };
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|e| Error::parse("intrinsics", format!("{key}: {e}")))
            };
            match key.as_str() {
                "fx" => fx = Some(num()?),
                "fy" => fy = Some(num()?),
                "cx" => cx = Some(num()?),
                "cy" => cy = Some(num()?),
                "width" => width = Some(int()?),
                "height" => height = Some(int()?),
                "depth_scale" => depth_scale = Some(num()?),
                _ => return Err(Error::parse("intrinsics", format!("unknown key `{key}`"))),
            }
        }
        let missing = |name: &str| Error::parse("intrinsics", format!("missing key `{name}`"));
        Self::new(
            fx.ok_or_else(|| missing("fx"))?,
            fy.ok_or_else(|| missing("fy"))?,
            cx.ok_or_else(|| missing("cx"))?,
            cy.ok_or_else(|| missing("cy"))?,
            width.ok_or_else(|| missing("width"))?,
            height.ok_or_else(|| missing("height"))?,
            depth_scale.ok_or_else(|| missing("depth_scale"))?,
        )
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "fx={}\nfy={}\ncx={}\ncy={}\nwidth={}\nheight={}\ndepth_scale={}\n",
            self.fx, self.fy, self.cx, self.cy, self.width, self.height, self.depth_scale
        )
    }
}

/// Projects a camera-frame point to subpixel image coordinates.
pub fn project(point_cam: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Vector2<f64>> {
    if point_cam.z <= 0.0 {
        return Err(Error::BehindCamera(point_cam.z));
    }
    let px = k.project_unchecked(point_cam);
    if !k.contains(&px) {
        return Err(Error::OutOfFrame(px.x, px.y));
    }
    Ok(px)
}

/// Lifts a pixel with a raw sensor depth to a camera-frame point in meters.
pub fn backproject(pixel: &Vector2<f64>, raw_depth: u16, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if raw_depth == 0 {
        return Err(Error::InvalidDepth);
    }
    Ok(backproject_metric(pixel, raw_depth as f64 * k.depth_scale, k))
}

#[inline]
pub fn backproject_metric(pixel: &Vector2<f64>, z: f64, k: &CameraIntrinsics) -> Vector3<f64> {
    k.ray(pixel.x, pixel.y) * z
}

/// Per-pixel unit normals, `None` where no normal could be estimated.
#[derive(Debug, Clone)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Option<Vector3<f64>>>,
}

impl NormalMap {
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<Vector3<f64>> {
        self.normals[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.normals.iter().filter(|n| n.is_some()).count()
    }
}

/// Estimates normals from central differences of back-projected neighbours,
/// oriented toward the camera.
pub fn compute_normals(depth: &DepthImage, k: &CameraIntrinsics) -> Result<NormalMap> {
    if depth.width != k.width || depth.height != k.height {
        return Err(Error::dims(
            format!("{}x{}", k.width, k.height),
            format!("{}x{}", depth.width, depth.height),
        ));
    }
    let (w, h) = (depth.width, depth.height);
    let mut normals = vec![None; w * h];
    if w < 3 || h < 3 {
        return Ok(NormalMap { width: w, height: h, normals });
    }
    let point = |u: usize, v: usize| backproject_metric(&Vector2::new(u as f64, v as f64), depth.get(u, v) as f64, k);
    for v in 1..h - 1 {
        for u in 1..w - 1 {
            let zc = depth.get(u, v);
            if zc <= 0.0 {
                continue;
            }
            let neighbours = [
                depth.get(u - 1, v),
                depth.get(u + 1, v),
                depth.get(u, v - 1),
                depth.get(u, v + 1),
            ];
            let limit = NORMAL_DISCONTINUITY * zc as f64;
            if neighbours.iter().any(|&z| z <= 0.0 || ((z - zc) as f64).abs() > limit) {
                continue;
            }
            let du = point(u + 1, v) - point(u - 1, v);
            let dv = point(u, v + 1) - point(u, v - 1);
            let n = du.cross(&dv);
            let norm = n.norm();
            if norm <= f64::EPSILON {
                continue;
            }
            let mut n = n / norm;
            if n.dot(&point(u, v)) > 0.0 {
                n = -n;
            }
            normals[v * w + u] = Some(n);
        }
    }
    Ok(NormalMap { width: w, height: h, normals })
}

/// Rigid transform taking camera-frame coordinates into the map frame.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.quaternion();
        write!(
            f,
            "Pose(t=[{:.6}, {:.6}, {:.6}], q=[{:.6}, {:.6}, {:.6}, {:.6}])",
            self.translation.x, self.translation.y, self.translation.z, q.i, q.j, q.k, q.w
        )
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose::new(Matrix3::identity(), t)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Pose::new(*q.to_rotation_matrix().matrix(), t)
    }

    /// Camera at `eye` looking at `target`, image y axis aligned with `down`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, down: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        Pose::new(Matrix3::from_columns(&[x, y, z]), eye)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|x| x.is_finite()) && self.translation.iter().all(|x| x.is_finite())
    }

    /// Exponential map of a twist `(v, ω)` onto the rigid-motion group.
    pub fn exp(twist: &Vector6<f64>) -> Pose {
        let v = Vector3::new(twist[0], twist[1], twist[2]);
        let w = Vector3::new(twist[3], twist[4], twist[5]);
        let theta2 = w.norm_squared();
        let theta = theta2.sqrt();
        let wx = skew(&w);
        let wx2 = wx * wx;
        let (a, b, c) = if theta < 1e-6 {
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
        } else {
            (
                theta.sin() / theta,
                (1.0 - theta.cos()) / theta2,
                (theta - theta.sin()) / (theta2 * theta),
            )
        };
        let rotation = Matrix3::identity() + wx * a + wx2 * b;
        let jacobian = Matrix3::identity() + wx * b + wx2 * c;
        Pose::new(rotation, jacobian * v)
    }

    /// Inverse of [`Pose::exp`].
    pub fn log(&self) -> Vector6<f64> {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let w = rot.scaled_axis();
        let theta2 = w.norm_squared();
        let theta = theta2.sqrt();
        let wx = skew(&w);
        let coeff = if theta < 1e-6 {
            1.0 / 12.0 + theta2 / 720.0
        } else {
            (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2
        };
        let v_inv = Matrix3::identity() - wx * 0.5 + wx * wx * coeff;
        let v = v_inv * self.translation;
        Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
    }

    /// Rotation angle of `self⁻¹ ∘ other` in radians.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        let r = self.rotation.transpose() * other.rotation;
        ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Re-orthonormalizes the rotation after long composition chains.
    pub fn orthonormalized(&self) -> Pose {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        Pose::new(r, self.translation)
    }
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Planar projective map, normalized so the bottom-right entry is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let s = m[(2, 2)];
        if s.abs() < 1e-12 || !m.iter().all(|x| x.is_finite()) {
            return Err(Error::DegenerateConfiguration(
                "homography bottom-right entry is zero".into(),
            ));
        }
        let m = m / s;
        if m.determinant().abs() < 1e-12 {
            return Err(Error::DegenerateConfiguration("singular homography".into()));
        }
        Ok(Homography(m))
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Homography(Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Parses nine whitespace-separated values in row-major order.
    pub fn parse(text: &str) -> Result<Self> {
        let values = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::parse("homography", format!("`{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 9 {
            return Err(Error::parse("homography", format!("expected 9 values, found {}", values.len())));
        }
        Homography::new(Matrix3::from_row_slice(&values))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let m = &self.0;
        (0..3)
            .map(|r| format!("{:.12e} {:.12e} {:.12e}\n", m[(r, 0)], m[(r, 1)], m[(r, 2)]))
            .collect()
    }
}

pub fn apply_homography(px: &Vector2<f64>, h: &Homography) -> Result<Vector2<f64>> {
    let p = h.0 * Vector3::new(px.x, px.y, 1.0);
    if p.z.abs() < 1e-12 {
        return Err(Error::DegeneratePoint(px.x, px.y));
    }
    Ok(Vector2::new(p.x / p.z, p.y / p.z))
}

#[derive(Debug, Clone, Copy)]
pub struct Calibration {
    pub homography: Homography,
    /// Root-mean-square reprojection error in target pixels.
    pub rms: f64,
}

fn hartley(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    let s = if mean_dist > 1e-12 { 2f64.sqrt() / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0)
}

fn collinear(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> bool {
    let ab = b - a;
    let ac = c - a;
    let area = (ab.x * ac.y - ab.y * ac.x).abs();
    area <= 1e-9 * (ab.norm_squared() + ac.norm_squared()).max(1e-300)
}

/// Least-squares homography from `(source, target)` pixel pairs by the
/// normalized direct linear transform.
pub fn calibrate_homography(pairs: &[(Vector2<f64>, Vector2<f64>)]) -> Result<Calibration> {
    if pairs.len() < 4 {
        return Err(Error::DegenerateConfiguration(format!(
            "need at least 4 point pairs, got {}",
            pairs.len()
        )));
    }
    let src: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<_> = pairs.iter().map(|p| p.1).collect();
    if pairs.len() == 4 {
        for (i, j, l) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
            if collinear(&src[i], &src[j], &src[l]) {
                return Err(Error::DegenerateConfiguration("three source points are collinear".into()));
            }
        }
    }
    let ts = hartley(&src);
    let td = hartley(&dst);
    let norm = |t: &Matrix3<f64>, p: &Vector2<f64>| {
        let q = t * Vector3::new(p.x, p.y, 1.0);
        Vector2::new(q.x, q.y)
    };

    // Padded to at least 9 rows so the SVD always yields a full V.
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let s = norm(&ts, s);
        let d = norm(&td, d);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::DegenerateConfiguration("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let (smallest, second) = (order[0], order[1]);
    if svd.singular_values[second] <= 1e-10 * svd.singular_values[order[8]] {
        return Err(Error::DegenerateConfiguration(
            "point configuration does not determine a unique homography".into(),
        ));
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::from_row_slice(&[h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("target points coincide".into()))?;
    let homography = Homography::new(td_inv * hn * ts)?;

    let mut sq = 0.0;
    for (s, d) in src.iter().zip(&dst) {
        let p = apply_homography(s, &homography)?;
        sq += (p - d).norm_squared();
    }
    Ok(Calibration {
        homography,
        rms: (sq / pairs.len() as f64).sqrt(),
    })
}

/// Reads calibration pairs, one `sx sy tx ty` line each; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(Vector2<f64>, Vector2<f64>)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse("pairs", format!("line {}: {e}", n + 1)))?;
        if v.len() != 4 {
            return Err(Error::parse("pairs", format!("line {}: expected 4 values", n + 1)));
        }
        pairs.push((Vector2::new(v[0], v[1]), Vector2::new(v[2], v[3])));
    }
    Ok(pairs)
}
