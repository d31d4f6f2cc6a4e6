use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream for work unit `unit` under `seed`.
///
/// Streams depend only on `(seed, unit)`, so parallel results do not
/// depend on scheduling or thread count.
pub fn stream(seed: u64, unit: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(unit);
    rng
}

/// Derives a child seed for a named stage of a seeded run.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
