//! Image containers and the per-timestep frame bundle.

use crate::gaze::GazeSample;
use crate::semantic::ProbabilityFrame;

/// Metric depth in meters; `0.0` marks a missing measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        DepthImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Converts raw sensor units (`0` = no measurement) to meters.
    pub fn from_raw(width: usize, height: usize, raw: &[u16], depth_scale: f64) -> Self {
        assert_eq!(raw.len(), width * height);
        DepthImage {
            width,
            height,
            data: raw.iter().map(|&d| (d as f64 * depth_scale) as f32).collect(),
        }
    }

    /// Quantizes to raw sensor units, saturating at `u16::MAX`.
    pub fn to_raw(&self, depth_scale: f64) -> Vec<u16> {
        self.data
            .iter()
            .map(|&z| {
                if z > 0.0 {
                    (z as f64 / depth_scale).round().clamp(1.0, u16::MAX as f64) as u16
                } else {
                    0
                }
            })
            .collect()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, z: f32) {
        self.data[v * self.width + u] = z;
    }

    /// Half-resolution image keeping the nearest valid depth of each 2×2 block.
    pub fn downsample_min(&self) -> DepthImage {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = DepthImage::new(w, h);
        for v in 0..h {
            for u in 0..w {
                let mut best = f32::INFINITY;
                for (du, dv) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let z = self.get(2 * u + du, 2 * v + dv);
                    if z > 0.0 && z < best {
                        best = z;
                    }
                }
                out.set(u, v, if best.is_finite() { best } else { 0.0 });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![[0; 3]; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> [u8; 3] {
        self.data[v * self.width + u]
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&c| intensity(c)).collect(),
        }
    }
}

/// Luma in `[0, 1]`.
#[inline]
pub fn intensity(c: [u8; 3]) -> f32 {
    (0.299 * c[0] as f32 + 0.587 * c[1] as f32 + 0.114 * c[2] as f32) / 255.0
}

/// Single-channel intensity image; NaN marks pixels without a value.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    /// 2×2 box-filtered half-resolution image.
    pub fn downsample_box(&self) -> GrayImage {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                let s = self.get(2 * u, 2 * v)
                    + self.get(2 * u + 1, 2 * v)
                    + self.get(2 * u, 2 * v + 1)
                    + self.get(2 * u + 1, 2 * v + 1);
                data.push(s * 0.25);
            }
        }
        GrayImage { width: w, height: h, data }
    }

    /// Bilinear sample and its analytic gradient `(value, d/du, d/dv)`.
    ///
    /// Returns `None` outside the image or when any of the four taps is NaN.
    pub fn sample(&self, u: f64, v: f64) -> Option<(f64, f64, f64)> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (u0, v0) = (u.floor() as usize, v.floor() as usize);
        if u0 + 1 >= self.width || v0 + 1 >= self.height {
            return None;
        }
        let (a, b) = (u - u0 as f64, v - v0 as f64);
        let i00 = self.get(u0, v0) as f64;
        let i10 = self.get(u0 + 1, v0) as f64;
        let i01 = self.get(u0, v0 + 1) as f64;
        let i11 = self.get(u0 + 1, v0 + 1) as f64;
        if i00.is_nan() || i10.is_nan() || i01.is_nan() || i11.is_nan() {
            return None;
        }
        let value = (1.0 - a) * (1.0 - b) * i00 + a * (1.0 - b) * i10 + (1.0 - a) * b * i01 + a * b * i11;
        let du = (1.0 - b) * (i10 - i00) + b * (i11 - i01);
        let dv = (1.0 - a) * (i01 - i00) + a * (i11 - i10);
        Some((value, du, dv))
    }
}

/// One time step of a recorded sequence.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    pub timestamp: f64,
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub probabilities: Option<ProbabilityFrame>,
    pub gaze: Vec<GazeSample>,
}

impl Frame {
    pub fn new(index: usize, timestamp: f64, rgb: RgbImage, depth: DepthImage) -> Self {
        Frame {
            index,
            timestamp,
            rgb,
            depth,
            probabilities: None,
            gaze: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_depth_round_trip() {
        let raw = vec![0u16, 1, 1000, 65535];
        let d = DepthImage::from_raw(2, 2, &raw, 0.001);
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.to_raw(0.001), raw);
    }

    #[test]
    fn min_pooling_ignores_missing() {
        let d = DepthImage {
            width: 2,
            height: 2,
            data: vec![0.0, 3.0, 2.0, 0.0],
        };
        assert_eq!(d.downsample_min().data, vec![2.0]);
        let empty = DepthImage::new(2, 2);
        assert_eq!(empty.downsample_min().data, vec![0.0]);
    }

    #[test]
    fn gray_weights() {
        assert!((intensity([255, 255, 255]) - 1.0).abs() < 1e-6);
        assert_eq!(intensity([0, 0, 0]), 0.0);
    }

    #[test]
    fn bilinear_gradient_matches_finite_difference() {
        let g = GrayImage {
            width: 3,
            height: 3,
            data: vec![0.0, 0.2, 0.9, 0.4, 0.1, 0.3, 0.8, 0.5, 0.7],
        };
        let (u, v) = (0.37, 1.21);
        let (_, du, dv) = g.sample(u, v).unwrap();
        let h = 1e-6;
        let fu = (g.sample(u + h, v).unwrap().0 - g.sample(u - h, v).unwrap().0) / (2.0 * h);
        let fv = (g.sample(u, v + h).unwrap().0 - g.sample(u, v - h).unwrap().0) / (2.0 * h);
        assert!((du - fu).abs() < 1e-8 && (dv - fv).abs() < 1e-8);
        assert!(g.sample(2.5, 0.0).is_none());
        assert!(g.sample(-0.1, 0.0).is_none());
    }
}
