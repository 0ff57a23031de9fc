use num_bigint::{BigInt, BigUint, RandBigInt};
use ppls_core::paillier::{keygen, keygen_random_generator, PaillierPrivateKey, PaillierPublicKey};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::sync::OnceLock;

fn key(bits: u64) -> &'static (PaillierPublicKey, PaillierPrivateKey) {
    static K64: OnceLock<(PaillierPublicKey, PaillierPrivateKey)> = OnceLock::new();
    static K512: OnceLock<(PaillierPublicKey, PaillierPrivateKey)> = OnceLock::new();
    static K1024: OnceLock<(PaillierPublicKey, PaillierPrivateKey)> = OnceLock::new();
    let cell = match bits {
        64 => &K64,
        512 => &K512,
        1024 => &K1024,
        _ => unreachable!(),
    };
    cell.get_or_init(|| keygen(bits, &mut ChaCha20Rng::seed_from_u64(bits)))
}

fn below(n: &BigUint, seed: u64) -> BigUint {
    ChaCha20Rng::seed_from_u64(seed).gen_biguint_below(n)
}

fn check_all(bits: u64, seed: u64) {
    let (pk, sk) = key(bits);
    let n = pk.n();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (a, b, k) = (below(n, seed), below(n, seed ^ 1), below(n, seed ^ 2));
    let ca = pk.encrypt(&a, &mut rng).unwrap();
    let cb = pk.encrypt(&b, &mut rng).unwrap();
    assert_eq!(sk.decrypt(&ca).unwrap(), a);
    assert_eq!(sk.decrypt(&pk.add(&ca, &cb)).unwrap(), (&a + &b) % n);
    assert_eq!(sk.decrypt(&pk.scale(&ca, &k)).unwrap(), (&a * &k) % n);
    assert_eq!(sk.decrypt(&pk.rerandomize(&ca, &mut rng)).unwrap(), a);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn homomorphisms_hold_at_64_bits(seed in any::<u64>()) {
        check_all(64, seed);
    }

    #[test]
    fn homomorphisms_hold_at_512_bits(seed in any::<u64>()) {
        check_all(512, seed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn homomorphisms_hold_at_1024_bits(seed in any::<u64>()) {
        check_all(1024, seed);
    }

    #[test]
    fn signed_values_round_trip(v in -1_000_000i64..1_000_000) {
        let (pk, sk) = key(64);
        let m = pk.encode_signed(&BigInt::from(v)).unwrap();
        let c = pk.encrypt(&m, &mut ChaCha20Rng::seed_from_u64(v as u64)).unwrap();
        prop_assert_eq!(pk.decode_signed(&sk.decrypt(&c).unwrap()), BigInt::from(v));
    }
}

#[test]
fn random_generator_keys_decrypt() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let (pk, sk) = keygen_random_generator(256, &mut rng);
    for seed in 0..20 {
        let m = below(pk.n(), seed);
        let c = pk.encrypt(&m, &mut rng).unwrap();
        assert_eq!(sk.decrypt(&c).unwrap(), m);
    }
}
