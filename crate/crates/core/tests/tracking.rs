use gazefusion::synth::{generate_sequence, render_frame, SequenceConfig, SyntheticScene, SyntheticSequence};
use gazefusion::tracking::transform_map;
use gazefusion::{
    estimate_pose, integrate, render_index_map, CameraIntrinsics, DepthImage, Frame, MapConfig, Pose, RgbImage, SurfelMap,
    TrackingConfig, TrackingStatus,
};
use nalgebra::Vector6;

fn small_sequence(frames: usize) -> SyntheticSequence {
    let cfg = SequenceConfig {
        frames,
        width: 160,
        height: 120,
        ..SequenceConfig::default()
    };
    generate_sequence(&SyntheticScene::room(), &cfg).unwrap()
}

fn map_from_first(seq: &SyntheticSequence) -> SurfelMap {
    let mut map = SurfelMap::new(seq.classes, MapConfig::default());
    integrate(&mut map, &seq.frames[0].frame, &seq.poses[0], &seq.intrinsics).unwrap();
    map
}

/// Depth and color of the map as seen from `pose`.
fn model_frame(map: &SurfelMap, pose: &Pose, k: &CameraIntrinsics) -> Frame {
    let index = render_index_map(map, pose, k);
    let mut rgb = RgbImage::new(k.width, k.height);
    let mut depth = DepthImage::new(k.width, k.height);
    for v in 0..k.height {
        for u in 0..k.width {
            if let Some(s) = index.id(u, v).and_then(|id| map.get(id)) {
                rgb.data[v * k.width + u] = s.color;
                depth.set(u, v, index.depth(u, v));
            }
        }
    }
    Frame::new(0, 0.0, rgb, depth)
}

fn tracking_config() -> TrackingConfig {
    TrackingConfig {
        min_inliers: 100,
        ..TrackingConfig::default()
    }
}

#[test]
fn zero_motion_is_a_fixed_point() {
    let seq = small_sequence(1);
    let map = map_from_first(&seq);
    let frame = model_frame(&map, &seq.poses[0], &seq.intrinsics);
    let r = estimate_pose(&frame, &map, &seq.poses[0], &seq.intrinsics, &tracking_config()).unwrap();
    assert_ne!(r.status, TrackingStatus::Lost, "{r:?}");
    assert!(r.pose.distance_to(&seq.poses[0]) < 1e-6, "{} {r:?}", r.pose.distance_to(&seq.poses[0]));
    assert!(r.pose.angle_to(&seq.poses[0]) < 1e-6);
}

#[test]
fn recovers_next_frame_pose() {
    let seq = small_sequence(4);
    let map = map_from_first(&seq);
    for i in 1..4 {
        let r = estimate_pose(&seq.frames[i].frame, &map, &seq.poses[0], &seq.intrinsics, &tracking_config()).unwrap();
        assert_ne!(r.status, TrackingStatus::Lost);
        assert!(r.pose.distance_to(&seq.poses[i]) < 1e-3, "frame {i}: {}", r.pose.distance_to(&seq.poses[i]));
        assert!(r.pose.angle_to(&seq.poses[i]).to_degrees() < 0.05);
    }
}

#[test]
fn recovers_a_synthetic_perturbation() {
    let seq = small_sequence(1);
    let map = map_from_first(&seq);
    let delta = Pose::exp(&Vector6::new(0.004, -0.003, 0.005, 0.004, -0.006, 0.003));
    let truth = seq.poses[0].compose(&delta);
    let frame = render_frame(&seq.scene, &truth, &seq.intrinsics, 1, 0.1).frame;
    let r = estimate_pose(&frame, &map, &seq.poses[0], &seq.intrinsics, &tracking_config()).unwrap();
    assert!(r.pose.distance_to(&truth) < 1e-3);
    assert!(r.pose.angle_to(&truth).to_degrees() < 0.05);
}

#[test]
fn left_invariance() {
    let seq = small_sequence(2);
    let map = map_from_first(&seq);
    let cfg = tracking_config();
    let frame = &seq.frames[1].frame;
    let base = estimate_pose(frame, &map, &seq.poses[0], &seq.intrinsics, &cfg).unwrap();
    let g = Pose::exp(&Vector6::new(0.7, -0.2, 1.3, 0.3, -0.5, 0.2));
    let moved = transform_map(&map, &g);
    let r = estimate_pose(frame, &moved, &g.compose(&seq.poses[0]), &seq.intrinsics, &cfg).unwrap();
    let expected = g.compose(&base.pose);
    assert!(r.pose.distance_to(&expected) < 1e-6, "{} {:?} {:?}", r.pose.distance_to(&expected), r, base);
    assert!(r.pose.angle_to(&expected) < 1e-6);
}

#[test]
fn featureless_view_is_lost() {
    let seq = small_sequence(1);
    let map = map_from_first(&seq);
    let mut frame = seq.frames[0].frame.clone();
    frame.depth.data.fill(0.0);
    let r = estimate_pose(&frame, &map, &seq.poses[0], &seq.intrinsics, &tracking_config()).unwrap();
    assert_eq!(r.status, TrackingStatus::Lost);
    assert_eq!(r.pose, seq.poses[0]);
}
