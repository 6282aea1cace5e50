mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simuser_core::fingerprint::{extract_fingerprint, FeatureConfig, LexiconSet, BOUNDED_FEATURES, N_FEATURES};

fn fixture_rows() -> Vec<(String, [f64; N_FEATURES])> {
    let lex = LexiconSet::default_set();
    common::fixture()
        .iter()
        .map(|e| (e.episode_id.clone(), extract_fingerprint(e, &lex, &FeatureConfig::default()).unwrap().0))
        .collect()
}

fn row(id: &str) -> [f64; N_FEATURES] {
    fixture_rows().into_iter().find(|(i, _)| i == id).unwrap().1
}

#[test]
fn fixture_matches_naive_counter() {
    let naive = common::NaiveLexicon::default_set();
    for (e, (_, got)) in common::fixture().iter().zip(fixture_rows()) {
        let want = common::naive_fingerprint(e, &naive);
        for k in 0..N_FEATURES {
            assert!((got[k] - want[k]).abs() <= 1e-12, "{} feature {k}: {} vs {}", e.episode_id, got[k], want[k]);
        }
    }
}

#[test]
fn hand_counted_episodes() {
    let f = row("f01");
    assert_eq!((f[0], f[1], f[2], f[8], f[9], f[10]), (4.5, 0.5, 1.0, 1.0, 0.5, 8.0));

    let f = row("f03");
    assert_eq!((f[2], f[4]), (0.0, 0.0), "pleased/okapi/book must not fire");

    let f = row("f04");
    assert_eq!((f[8], f[9]), (0.5, 2.0));

    let f = row("f08");
    assert_eq!(f[6], 0.5);

    let f = row("f09");
    assert_eq!((f[0], f[1], f[5], f[6], f[8], f[10]), (0.0, 1.0, 0.0, 0.0, 1.0, 0.0));

    // Counts per turn: 4, 1, 4.
    let f = row("f20");
    assert!((f[8] - 4.0 / 9.0).abs() < 1e-15);
    assert_eq!(f[9], 3.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_transcripts_match_oracle_and_stay_bounded(seed in any::<u64>()) {
        let lex = LexiconSet::default_set();
        let naive = common::NaiveLexicon::default_set();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..8 {
            let e = common::random_episode(i, &mut rng);
            let got = extract_fingerprint(&e, &lex, &FeatureConfig::default()).unwrap().0;
            let want = common::naive_fingerprint(&e, &naive);
            for k in BOUNDED_FEATURES {
                prop_assert!((0.0..=1.0).contains(&got[k]));
            }
            for k in 0..N_FEATURES {
                prop_assert!((got[k] - want[k]).abs() <= 1e-12, "feature {} {} vs {}", k, got[k], want[k]);
            }
        }
    }
}
