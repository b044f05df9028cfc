use std::collections::BTreeSet;

use gazefusion::instances::extract_instances_with;
use gazefusion::{
    extract_instances, match_instances, ClassDistribution, InstanceRegistry, MapConfig, ObjectInstance, Surfel, SurfelId,
    SurfelMap,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: usize = 3;

fn labelled(position: Vector3<f64>, class: usize, confidence: f64) -> Surfel {
    let mut s = Surfel::new(position, Vector3::z(), 0.01, [0; 3], confidence, CLASSES, 0);
    let mut p = vec![0.1; CLASSES];
    p[class] = 0.8;
    s.classes = ClassDistribution::from_probabilities(&p);
    s
}

fn random_map(rng: &mut ChaCha8Rng) -> SurfelMap {
    let mut map = SurfelMap::new(CLASSES, MapConfig::default());
    let stable = map.config().stable_confidence;
    let n = rng.random_range(0..=500);
    let extent = rng.random_range(0.2..1.5);
    for _ in 0..n {
        let p = Vector3::from_fn(|_, _| rng.random_range(0.0..extent));
        let confidence = if rng.random_bool(0.8) { stable + 1.0 } else { stable * 0.5 };
        map.insert(labelled(p, rng.random_range(0..CLASSES), confidence));
    }
    map
}

/// Components by flood fill over every pair of stable surfels.
fn oracle(map: &SurfelMap, min_size: usize, link: f64) -> Vec<Vec<SurfelId>> {
    let cfg = *map.config();
    let nodes: Vec<&Surfel> = map.iter().filter(|s| s.is_stable(&cfg)).collect();
    let class = |s: &Surfel| s.classes.argmax().0;
    let mut seen = vec![false; nodes.len()];
    let mut out = Vec::new();
    for start in 0..nodes.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            members.push(nodes[i].id);
            for j in 0..nodes.len() {
                if !seen[j]
                    && class(nodes[i]) == class(nodes[j])
                    && (nodes[i].position - nodes[j].position).norm() <= link
                {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if members.len() >= min_size {
            members.sort();
            out.push(members);
        }
    }
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    out
}

#[test]
fn components_match_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let map = random_map(&mut rng);
        let min_size = rng.random_range(1..12);
        let found = extract_instances_with(&map, min_size, 0.1);
        let expected = oracle(&map, min_size, 0.1);
        let members: Vec<Vec<SurfelId>> = found.iter().map(|i| i.members.clone()).collect();
        assert_eq!(members, expected, "case {case}");
        let mut covered = BTreeSet::new();
        for inst in &found {
            let mean = inst.members.iter().map(|&m| map.get(m).unwrap().position).sum::<Vector3<f64>>()
                / inst.size() as f64;
            assert!((inst.centroid - mean).norm() <= 1e-9);
            for &m in &inst.members {
                assert_eq!(map.get(m).unwrap().classes.argmax().0, inst.class);
                assert!(covered.insert(m), "surfel {m:?} in two instances");
            }
        }
    }
}

fn two_clusters(gap: f64, second_class: usize) -> SurfelMap {
    let mut map = SurfelMap::new(CLASSES, MapConfig::default());
    let stable = map.config().stable_confidence + 1.0;
    for i in 0..40 {
        let offset = Vector3::new((i % 8) as f64 * 0.02, (i / 8) as f64 * 0.02, 0.0);
        map.insert(labelled(offset, 1, stable));
        map.insert(labelled(offset + Vector3::new(gap, 0.0, 0.0), second_class, stable));
    }
    map
}

#[test]
fn separated_by_distance_or_class() {
    assert_eq!(extract_instances(&two_clusters(1.0, 1), 30).len(), 2);
    assert_eq!(extract_instances(&two_clusters(0.05, 2), 30).len(), 2);
    assert_eq!(extract_instances(&two_clusters(0.05, 1), 30).len(), 1);
}

#[test]
fn re_extraction_keeps_ids() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let map = random_map(&mut rng);
    let mut registry = InstanceRegistry::default();
    let mut first = extract_instances(&map, 5);
    registry.update(&mut first, 0);
    let mut second = extract_instances(&map, 5);
    let assignment = registry.update(&mut second, 10);
    assert!(assignment.fresh.is_empty());
    let ids = |v: &[ObjectInstance]| v.iter().map(|i| i.id).collect::<Vec<_>>();
    assert_eq!(ids(&first), ids(&second));
}

#[test]
fn identical_lists_match_one_to_one() {
    let map = two_clusters(1.0, 1);
    let mut next = 1;
    let current = extract_instances(&map, 30);
    let first = match_instances(&[], &current, &mut next);
    assert_eq!(first.fresh.len(), 2);
    let mut previous = current.clone();
    for &(i, id) in &first.fresh {
        previous[i].id = Some(id);
    }
    let again = match_instances(&previous, &current, &mut next);
    assert!(again.fresh.is_empty());
    assert_eq!(again.inherited.len(), 2);
    assert_eq!(next, 3);
}

#[test]
fn absent_instance_reclaims_its_id() {
    let mut map = two_clusters(1.0, 1);
    let stable = map.config().stable_confidence;
    let mut registry = InstanceRegistry::default();
    let mut before = extract_instances(&map, 30);
    registry.update(&mut before, 0);
    let far = before.iter().find(|i| i.centroid.x > 0.5).unwrap().clone();

    // The far cluster drops below stability and leaves the extraction.
    for &m in &far.members {
        map.get_mut(m).unwrap().confidence = stable * 0.5;
    }
    let mut absent = extract_instances(&map, 30);
    registry.update(&mut absent, 10);
    assert_eq!(absent.len(), 1);
    assert!(registry.dormant().any(|i| i.id == far.id));

    for &m in &far.members {
        map.get_mut(m).unwrap().confidence = stable + 1.0;
    }
    let mut back = extract_instances(&map, 30);
    registry.update(&mut back, 40);
    let returned = back.iter().find(|i| i.centroid.x > 0.5).unwrap();
    assert_eq!(returned.id, far.id);
    assert_eq!(returned.first_seen, 0);
    assert_eq!(returned.last_seen, 40);
}
