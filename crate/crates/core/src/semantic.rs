//! Recursive Bayesian fusion of per-pixel class probabilities into surfels.

use std::collections::HashSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::surfel_map::{IndexMap, Surfel, SurfelMap};

/// Observations are floored at this value before entering the product.
pub const OBSERVATION_FLOOR: f64 = 1e-6;

/// Per-pixel class probabilities as produced by an external segmentation
/// network.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityFrame {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    /// Row-major pixels, classes innermost.
    pub data: Vec<f32>,
    pub class_names: Arc<[String]>,
}

impl ProbabilityFrame {
    pub fn new(width: usize, height: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::dims("at least 2 classes", classes));
        }
        if data.len() != width * height * classes {
            return Err(Error::dims(width * height * classes, data.len()));
        }
        Ok(ProbabilityFrame {
            width,
            height,
            classes,
            data,
            class_names: default_class_names(classes),
        })
    }

    pub fn with_class_names(mut self, names: Arc<[String]>) -> Result<Self> {
        if names.len() != self.classes {
            return Err(Error::dims(self.classes, names.len()));
        }
        self.class_names = names;
        Ok(self)
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> &[f32] {
        let start = (v * self.width + u) * self.classes;
        &self.data[start..start + self.classes]
    }

    /// Checks that every pixel is a distribution within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for (i, p) in self.data.chunks_exact(self.classes).enumerate() {
            let sum: f64 = p.iter().map(|&x| x as f64).sum();
            if p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > tol {
                return Err(Error::parse(
                    "probability frame",
                    format!("pixel {i} is not a distribution (sum {sum})"),
                ));
            }
        }
        Ok(())
    }
}

pub fn default_class_names(classes: usize) -> Arc<[String]> {
    (0..classes).map(|c| format!("class{c}")).collect()
}

/// Log-probabilities over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn uniform(classes: usize) -> Self {
        ClassDistribution(vec![-(classes as f64).ln(); classes])
    }

    /// Builds a distribution from (not necessarily normalized) probabilities.
    pub fn from_probabilities(p: &[f64]) -> Self {
        let mut d = ClassDistribution(p.iter().map(|x| x.ln()).collect());
        d.normalize();
        d
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.0
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.0.iter().map(|l| l.exp()).collect()
    }

    fn normalize(&mut self) {
        let max = self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + self.0.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        for l in &mut self.0 {
            *l -= lse;
        }
    }

    /// In-place posterior update with one observation vector.
    pub fn update<T: Copy + Into<f64>>(&mut self, obs: &[T]) -> Result<()> {
        if obs.len() != self.0.len() {
            return Err(Error::dims(self.0.len(), obs.len()));
        }
        let sum: f64 = obs.iter().map(|&x| x.into().max(OBSERVATION_FLOOR)).sum();
        for (l, &o) in self.0.iter_mut().zip(obs) {
            *l += (o.into().max(OBSERVATION_FLOOR) / sum).ln();
        }
        self.normalize();
        Ok(())
    }

    /// Most probable class and its probability; ties go to the smaller index.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = 0;
        for (c, &l) in self.0.iter().enumerate().skip(1) {
            if l > self.0[best] {
                best = c;
            }
        }
        (best, self.0[best].exp())
    }
}

pub fn bayes_update<T: Copy + Into<f64>>(prior: &ClassDistribution, obs: &[T]) -> Result<ClassDistribution> {
    let mut post = prior.clone();
    post.update(obs)?;
    Ok(post)
}

pub fn surfel_class(s: &Surfel) -> (usize, f64) {
    s.classes.argmax()
}

/// Applies every pixel's observation to the surfel rendered there, in raster
/// order. Returns the number of distinct surfels touched.
pub fn fuse_frame(map: &mut SurfelMap, index_map: &IndexMap, probs: &ProbabilityFrame) -> Result<usize> {
    if index_map.width != probs.width || index_map.height != probs.height {
        return Err(Error::dims(
            format!("{}x{}", index_map.width, index_map.height),
            format!("{}x{}", probs.width, probs.height),
        ));
    }
    if probs.classes != map.classes() {
        return Err(Error::dims(format!("{} classes", map.classes()), format!("{} classes", probs.classes)));
    }
    let mut touched = HashSet::new();
    for v in 0..index_map.height {
        for u in 0..index_map.width {
            let Some(id) = index_map.id(u, v) else { continue };
            if let Some(s) = map.get_mut(id) {
                s.classes.update(probs.pixel(u, v))?;
                touched.insert(id);
            }
        }
    }
    Ok(touched.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose};
    use crate::surfel_map::{render_index_map, MapConfig};
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn uniform_prior_passes_observation_through() {
        let post = bayes_update(&ClassDistribution::uniform(3), &[0.5, 0.25, 0.25]).unwrap();
        assert!(close(&post.probabilities(), &[0.5, 0.25, 0.25], 1e-12));
    }

    #[test]
    fn product_normalize_arithmetic() {
        let prior = ClassDistribution::from_probabilities(&[0.5, 0.25, 0.25]);
        let post = bayes_update(&prior, &[0.5, 0.25, 0.25]).unwrap();
        assert!(close(&post.probabilities(), &[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1e-12));
    }

    #[test]
    fn dimension_mismatch() {
        let r = bayes_update(&ClassDistribution::uniform(3), &[0.5, 0.5]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_observation_does_not_veto() {
        let mut d = ClassDistribution::uniform(2);
        d.update(&[1.0, 0.0]).unwrap();
        for _ in 0..10 {
            d.update(&[0.1, 0.9]).unwrap();
        }
        assert_eq!(d.argmax().0, 1);
    }

    #[test]
    fn argmax_examples() {
        let (c, p) = ClassDistribution::uniform(151).argmax();
        assert_eq!(c, 0);
        assert!((p - 1.0 / 151.0).abs() < 1e-12);
        let mut probs = vec![0.1 / 9.0; 10];
        probs[7] = 0.9;
        let (c, p) = ClassDistribution::from_probabilities(&probs).argmax();
        assert_eq!(c, 7);
        assert!((p - 0.9).abs() < 1e-12);
        let (c, p) = ClassDistribution::from_probabilities(&[0.0, 0.0, 0.5, 0.0, 0.0, 0.5]).argmax();
        assert_eq!((c, p), (2, 0.5));
    }

    fn one_surfel_map() -> (SurfelMap, IndexMap) {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480, 0.001).unwrap();
        let mut map = SurfelMap::new(3, MapConfig::default());
        map.insert(Surfel::new(Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, -1.0), 0.001, [0; 3], 1.0, 3, 0));
        let index = render_index_map(&map, &Pose::identity(), &k);
        (map, index)
    }

    #[test]
    fn fuse_empty_index_map_is_noop() {
        let (mut map, index) = one_surfel_map();
        let empty = IndexMap::empty(index.width, index.height);
        let probs = ProbabilityFrame::new(640, 480, 3, [0.6f32, 0.2, 0.2].repeat(640 * 480)).unwrap();
        let before = map.get(crate::surfel_map::SurfelId(0)).unwrap().classes.clone();
        assert_eq!(fuse_frame(&mut map, &empty, &probs).unwrap(), 0);
        assert_eq!(map.get(crate::surfel_map::SurfelId(0)).unwrap().classes, before);
    }

    #[test]
    fn repeated_observations_converge() {
        // Closed form: odds of class 0 against each other class grow as 3^20.
        let (mut map, rendered) = one_surfel_map();
        let probs = ProbabilityFrame::new(640, 480, 3, [0.6f32, 0.2, 0.2].repeat(640 * 480)).unwrap();
        let id = rendered.id(320, 240).unwrap();
        let mut index = IndexMap::empty(640, 480);
        index.set(320, 240, id, 2.0);
        for _ in 0..20 {
            assert_eq!(fuse_frame(&mut map, &index, &probs).unwrap(), 1);
        }
        let (c, p) = map.get(id).unwrap().classes.argmax();
        let expected = 1.0 / (1.0 + 2.0 * 3f64.powi(-20));
        assert_eq!(c, 0);
        assert!(p > 0.999);
        assert!((p - expected).abs() < 1e-9);
    }

    #[test]
    fn fuse_rejects_mismatched_shapes() {
        let (mut map, index) = one_surfel_map();
        let small = ProbabilityFrame::new(10, 10, 3, vec![1.0 / 3.0; 300]).unwrap();
        assert!(matches!(fuse_frame(&mut map, &index, &small), Err(Error::DimensionMismatch { .. })));
        let wrong_k = ProbabilityFrame::new(640, 480, 2, vec![0.5; 640 * 480 * 2]).unwrap();
        assert!(matches!(fuse_frame(&mut map, &index, &wrong_k), Err(Error::DimensionMismatch { .. })));
    }

    fn arb_dist(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, k).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn uniform_evidence_is_uninformative(prior in arb_dist(5), n in 1usize..20) {
            let prior = ClassDistribution::from_probabilities(&prior);
            let mut d = prior.clone();
            for _ in 0..n {
                d.update(&[0.2f64; 5]).unwrap();
            }
            prop_assert!(close(&d.probabilities(), &prior.probabilities(), 1e-9));
        }

        #[test]
        fn update_order_does_not_matter(obs in proptest::collection::vec(arb_dist(4), 1..10)) {
            let mut fwd = ClassDistribution::uniform(4);
            let mut rev = ClassDistribution::uniform(4);
            for o in &obs { fwd.update(o).unwrap(); }
            for o in obs.iter().rev() { rev.update(o).unwrap(); }
            prop_assert!(close(&fwd.probabilities(), &rev.probabilities(), 1e-9));
            prop_assert!((fwd.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
