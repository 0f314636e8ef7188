use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream keyed by a seed and a tuple of labels.
pub(crate) fn stream(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    let mut h = mix(seed);
    for &l in labels {
        h = mix(h ^ l);
    }
    ChaCha8Rng::seed_from_u64(h)
}
