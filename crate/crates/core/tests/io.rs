use std::path::Path;

use gazefusion::io::exports::{export_gaze_events, format_trajectory, parse_trajectory, tum_line};
use gazefusion::io::{export_ply, load_sequence, read_ply, write_sequence, Palette};
use gazefusion::synth::{generate_sequence, room_class_names, SequenceConfig, SyntheticScene};
use gazefusion::tracking::TrajectoryEntry;
use gazefusion::{ClassDistribution, Error, MapConfig, Pose, Surfel, SurfelMap};
use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_map(rng: &mut ChaCha8Rng, n: usize) -> SurfelMap {
    let mut map = SurfelMap::new(4, MapConfig::default());
    for _ in 0..n {
        let p = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let normal = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        let color = [rng.random(), rng.random(), rng.random()];
        let mut s = Surfel::new(p, normal, rng.random_range(0.001..0.05), color, rng.random_range(0.0..20.0), 4, 0);
        s.classes = ClassDistribution::from_probabilities(&[
            rng.random_range(0.1..1.0),
            rng.random_range(0.1..1.0),
            rng.random_range(0.1..1.0),
            rng.random_range(0.1..1.0),
        ]);
        map.insert(s);
    }
    map
}

#[test]
fn ply_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let map = random_map(&mut rng, 100);
    let dir = tempfile::tempdir().unwrap();
    for palette in [Palette::Rgb, Palette::Class] {
        let path = dir.path().join("map.ply");
        export_ply(&map, palette, &path).unwrap();
        let back = read_ply(&path).unwrap();
        let expected = gazefusion::io::ply::vertices(&map, palette);
        assert_eq!(back.len(), 100);
        assert_eq!(back, expected);
        for (v, s) in back.iter().zip(map.iter()) {
            assert_eq!(v.position, s.position.cast::<f32>());
            assert_eq!(v.normal, s.normal.cast::<f32>());
            if palette == Palette::Rgb {
                assert_eq!(v.color, s.color);
            }
        }
    }
}

#[test]
fn ply_header_and_class_palette() {
    let mut map = SurfelMap::new(3, MapConfig::default());
    map.insert(Surfel::new(Vector3::zeros(), Vector3::z(), 0.01, [1, 2, 3], 1.0, 3, 0));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.ply");
    export_ply(&map, Palette::Class, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header = String::from_utf8_lossy(&bytes[..200]);
    assert!(header.starts_with("ply\nformat binary_little_endian 1.0\n"));
    assert!(header.contains("element vertex 1\n"));
    let v = read_ply(&path).unwrap();
    assert_eq!(v[0].class, 0);
    assert_eq!(v[0].color, gazefusion::io::ply::class_color(0, &map.class_names()[0]));

    let empty = SurfelMap::new(3, MapConfig::default());
    assert!(matches!(export_ply(&empty, Palette::Rgb, &path), Err(Error::EmptyMap)));
}

#[test]
fn trajectory_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let entries: Vec<TrajectoryEntry> = (0..200)
        .map(|i| TrajectoryEntry {
            timestamp: i as f64 / 30.0,
            pose: Pose::exp(&Vector6::from_fn(|_, _| rng.random_range(-3.0..3.0))),
            lost: false,
        })
        .collect();
    let parsed = parse_trajectory(&format_trajectory(&entries)).unwrap();
    assert_eq!(parsed.len(), entries.len());
    for (e, (t, p)) in entries.iter().zip(&parsed) {
        assert!((e.timestamp - t).abs() <= 1e-6);
        assert!(p.distance_to(&e.pose) <= 1e-6);
        let (a, b) = (e.pose.quaternion(), p.quaternion());
        let dq = (a.coords - b.coords).norm().min((a.coords + b.coords).norm());
        assert!(dq <= 2e-6, "{dq}");
    }
    assert_eq!(tum_line(1.5, &Pose::identity()), "1.500000 0.000000 0.000000 0.000000 0.000000 0.000000 0.000000 1.000000");
}

#[test]
fn empty_gaze_export_creates_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gaze.jsonl");
    export_gaze_events(&[], &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"");
}

fn small_sequence(root: &Path) {
    let cfg = SequenceConfig {
        frames: 3,
        width: 64,
        height: 48,
        ..SequenceConfig::default()
    };
    let seq = generate_sequence(&SyntheticScene::room(), &cfg).unwrap();
    write_sequence(&seq, &room_class_names(cfg.classes), root).unwrap();
}

#[test]
fn synthetic_sequence_loads() {
    let dir = tempfile::tempdir().unwrap();
    small_sequence(dir.path());
    let m = load_sequence(dir.path()).unwrap();
    assert_eq!(m.len(), 3);
    assert_eq!((m.intrinsics.width, m.intrinsics.height), (64, 48));
    let f = m.load_frame(1).unwrap();
    assert_eq!(f.index, 1);
    assert!(f.probabilities.is_some());
    assert_eq!(m.load_groundtruth().unwrap().unwrap().len(), 3);
}

fn edit(root: &Path, file: &str, f: impl Fn(String) -> String) {
    let p = root.join(file);
    std::fs::write(&p, f(std::fs::read_to_string(&p).unwrap())).unwrap();
}

#[test]
fn malformed_manifests_are_rejected() {
    let check = |mutate: &dyn Fn(&Path), expect: fn(&Error) -> bool| {
        let dir = tempfile::tempdir().unwrap();
        small_sequence(dir.path());
        mutate(dir.path());
        let err = load_sequence(dir.path()).unwrap_err();
        assert!(expect(&err), "{err:?}");
        assert_eq!(err.exit_code(), 3);
    };
    check(
        &|r| std::fs::remove_file(r.join("manifest.txt")).unwrap(),
        |e| matches!(e, Error::MalformedManifest(_)),
    );
    check(
        &|r| edit(r, "associations.txt", |t| t.lines().rev().map(|l| l.to_string() + "\n").collect()),
        |e| matches!(e, Error::NonMonotonicTimestamps(_)),
    );
    check(
        &|r| std::fs::remove_file(r.join("prob/000001.pfrm")).unwrap(),
        |e| matches!(e, Error::MissingFile(_)),
    );
    check(
        &|r| edit(r, "manifest.txt", |t| t.replace("gaze=gaze.csv", "gaze=../gaze.csv")),
        |e| matches!(e, Error::MalformedManifest(_)),
    );
    check(
        &|r| edit(r, "manifest.txt", |t| t.replace("gaze=gaze.csv", "gaze=/etc/passwd")),
        |e| matches!(e, Error::MalformedManifest(_)),
    );
    check(
        &|r| edit(r, "manifest.txt", |t| t + "colour=blue\n"),
        |e| matches!(e, Error::MalformedManifest(_)),
    );
    check(
        &|r| edit(r, "manifest.txt", |t| t.replace("fx=", "fx=abc")),
        |e| matches!(e, Error::MalformedManifest(_)),
    );
}
