//! Shared fixtures for the benchmarks.

use gazefusion::synth::{generate_sequence, SequenceConfig, SyntheticScene, SyntheticSequence};
use gazefusion::{integrate, MapConfig, SurfelMap};

/// A short synthetic orbit at the given resolution.
pub fn sequence(width: usize, height: usize, frames: usize) -> SyntheticSequence {
    let cfg = SequenceConfig {
        frames,
        width,
        height,
        ..SequenceConfig::default()
    };
    generate_sequence(&SyntheticScene::room(), &cfg).expect("synthetic sequence")
}

/// The map after integrating the first `n` frames at their true poses.
pub fn map_after(seq: &SyntheticSequence, n: usize) -> SurfelMap {
    let mut map = SurfelMap::new(seq.classes, MapConfig::default());
    for (r, pose) in seq.frames.iter().zip(&seq.poses).take(n) {
        integrate(&mut map, &r.frame, pose, &seq.intrinsics).expect("integrate");
    }
    map
}
