use ppls_core::distcmp::{comparison_keygen, judge, make_threshold_ct, oracle_compare, zero_index, ComparisonParams, Responder};
use num_bigint::BigUint;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[test]
fn exhaustive_small_range_matches_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(40);
    let (pk, sk) = comparison_keygen(64, &mut rng);
    let params = ComparisonParams::with_i_max(40).unwrap();
    let responder = Responder::new(&pk, &params, &mut rng).unwrap();
    for d_t in 1..=40 {
        let c = make_threshold_ct(&pk, d_t, &params, &mut rng).unwrap();
        for d_a in 0..=80 {
            let batch = responder.respond(&c, d_a, &mut rng).unwrap();
            assert_eq!(batch.items.len(), 40);
            assert_eq!(judge(&sk, &batch).unwrap(), oracle_compare(d_t, d_a), "({d_t}, {d_a})");
        }
    }
}

#[test]
fn non_unit_generator_gives_same_verdicts() {
    let mut rng = ChaCha20Rng::seed_from_u64(41);
    let (pk, sk) = comparison_keygen(64, &mut rng);
    let params = ComparisonParams::new(BigUint::from(7u32), 30).unwrap();
    for (d_t, d_a) in [(30, 0), (30, 29), (30, 30), (1, 0), (1, 1), (15, 40)] {
        let c = make_threshold_ct(&pk, d_t, &params, &mut rng).unwrap();
        let batch = Responder::new(&pk, &params, &mut rng).unwrap().respond(&c, d_a, &mut rng).unwrap();
        assert_eq!(judge(&sk, &batch).unwrap(), oracle_compare(d_t, d_a), "({d_t}, {d_a})");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn verdict_and_zero_position_match_oracle(d_t in 1u32..=1000, delta in -20i64..=20, seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (pk, sk) = comparison_keygen(256, &mut rng);
        let params = ComparisonParams::with_i_max(1000).unwrap();
        let d_a = (d_t as i64 + delta).max(0) as u32;
        let c = make_threshold_ct(&pk, d_t, &params, &mut rng).unwrap();
        let batch = Responder::new(&pk, &params, &mut rng).unwrap().respond(&c, d_a, &mut rng).unwrap();
        let expect = oracle_compare(d_t, d_a);
        prop_assert_eq!(judge(&sk, &batch).unwrap(), expect);
        prop_assert_eq!(zero_index(&sk, &batch).unwrap(), expect.then(|| d_t - d_a));
    }
}
