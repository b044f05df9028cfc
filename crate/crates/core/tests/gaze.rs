use gazefusion::gaze::{fallback_candidate, locate_gaze_with};
use gazefusion::surfel_map::{IndexMap, SurfelId};
use gazefusion::{locate_gaze, HitSource, MapConfig, Surfel, SurfelMap};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exhaustive scan: every occupied pixel of the clipped window, sorted by
/// squared distance, depth, id.
fn brute_force(index: &IndexMap, u: usize, v: usize, w: usize) -> Option<SurfelId> {
    let mut candidates = Vec::new();
    for y in 0..index.height {
        for x in 0..index.width {
            if x.abs_diff(u) > w || y.abs_diff(v) > w {
                continue;
            }
            if let Some(id) = index.id(x, y) {
                let d2 = (x as i64 - u as i64).pow(2) + (y as i64 - v as i64).pow(2);
                candidates.push((d2, index.depth(x, y), id));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    candidates.first().map(|c| c.2)
}

#[test]
fn fallback_matches_exhaustive_window_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..1000 {
        let (w, h) = (rng.random_range(1..24), rng.random_range(1..24));
        let mut index = IndexMap::empty(w, h);
        let fill = rng.random_range(0.0..0.3);
        for v in 0..h {
            for u in 0..w {
                if rng.random_bool(fill) {
                    // Few distinct depths and ids so both tie-breaks get exercised.
                    let depth = rng.random_range(1..4) as f32 * 0.5;
                    index.set(u, v, SurfelId(rng.random_range(0..20)), depth);
                }
            }
        }
        let (u, v) = (rng.random_range(0..w), rng.random_range(0..h));
        let window = rng.random_range(0..6);
        assert_eq!(
            fallback_candidate(&index, u, v, window),
            brute_force(&index, u, v, window),
            "case {case}"
        );
    }
}

fn one_surfel_map() -> (SurfelMap, SurfelId) {
    let mut map = SurfelMap::new(3, MapConfig::default());
    let id = map.insert(Surfel::new(
        Vector3::new(0.0, 0.0, 2.0),
        Vector3::new(0.0, 0.0, -1.0),
        0.01,
        [255, 0, 0],
        1.0,
        3,
        0,
    ));
    (map, id)
}

#[test]
fn direct_hit_and_window_fallback() {
    let (map, id) = one_surfel_map();
    let mut index = IndexMap::empty(40, 30);
    index.set(20, 15, id, 2.0);
    let direct = locate_gaze(0.5, &Vector2::new(20.2, 14.8), &index, &map);
    assert_eq!(direct.source, HitSource::Direct);
    assert_eq!(direct.surfel, Some(id));
    assert_eq!(direct.point, Some(Vector3::new(0.0, 0.0, 2.0)));

    let near = locate_gaze(0.5, &Vector2::new(23.0, 15.0), &index, &map);
    assert_eq!(near.source, HitSource::WindowFallback);
    assert_eq!(near.surfel, Some(id));

    let far = locate_gaze_with(0.5, &Vector2::new(23.0, 15.0), &index, &map, 2);
    assert_eq!(far.source, HitSource::Miss);
    assert_eq!(far.surfel, None);
}

#[test]
fn empty_index_is_a_miss() {
    let (map, _) = one_surfel_map();
    let index = IndexMap::empty(8, 8);
    let hit = locate_gaze(1.0, &Vector2::new(4.0, 4.0), &index, &map);
    assert_eq!(hit.source, HitSource::Miss);
    assert_eq!(hit.class, None);
}
