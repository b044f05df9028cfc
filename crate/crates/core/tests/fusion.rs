use gazefusion::semantic::OBSERVATION_FLOOR;
use gazefusion::{bayes_update, ClassDistribution};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Product of prior and floored likelihoods in linear space, normalized once.
fn product_normalize(prior: &[f64], observations: &[Vec<f64>]) -> Vec<f64> {
    let mut p = prior.to_vec();
    for obs in observations {
        for (x, &o) in p.iter_mut().zip(obs) {
            *x *= o.max(OBSERVATION_FLOOR);
        }
    }
    let sum: f64 = p.iter().sum();
    p.iter().map(|x| x / sum).collect()
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|x| x / sum).collect()
}

#[test]
fn matches_product_normalize_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let k = rng.random_range(2..=5);
        let prior = random_simplex(&mut rng, k);
        let n = rng.random_range(0..=10);
        let observations: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut o = random_simplex(&mut rng, k);
                if rng.random_bool(0.1) {
                    o[rng.random_range(0..k)] = 0.0;
                }
                o
            })
            .collect();
        let mut d = ClassDistribution::from_probabilities(&prior);
        for o in &observations {
            d = bayes_update(&d, o).unwrap();
        }
        let expected = product_normalize(&prior, &observations);
        for (a, b) in d.probabilities().iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-9, "case {case}: {:?} vs {expected:?}", d.probabilities());
        }
    }
}

#[test]
fn twenty_weak_observations_are_decisive() {
    let mut d = ClassDistribution::uniform(3);
    for _ in 0..20 {
        d.update(&[0.6, 0.2, 0.2]).unwrap();
    }
    let (class, p) = d.argmax();
    assert_eq!(class, 0);
    // Odds against each other class are 3^20.
    let expected = 1.0 / (1.0 + 2.0 * 3f64.powi(-20));
    assert!((p - expected).abs() < 1e-12);
    assert!(p > 0.999);
}

#[test]
fn wrong_length_is_rejected() {
    let d = ClassDistribution::uniform(3);
    assert!(bayes_update(&d, &[0.5, 0.5]).is_err());
}

fn distribution(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k)
}

proptest! {
    #[test]
    fn order_does_not_matter(
        prior in distribution(4),
        obs in prop::collection::vec(distribution(4), 1..8),
        seed in any::<u64>(),
    ) {
        let mut shuffled = obs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let mut a = ClassDistribution::from_probabilities(&prior);
        let mut b = a.clone();
        for o in &obs {
            a.update(o).unwrap();
        }
        for o in &shuffled {
            b.update(o).unwrap();
        }
        for (x, y) in a.probabilities().iter().zip(b.probabilities()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn uniform_evidence_is_uninformative(prior in distribution(5), times in 1usize..50) {
        let start = ClassDistribution::from_probabilities(&prior);
        let mut d = start.clone();
        for _ in 0..times {
            d.update(&[0.2f32; 5]).unwrap();
        }
        for (x, y) in d.probabilities().iter().zip(start.probabilities()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }
}
