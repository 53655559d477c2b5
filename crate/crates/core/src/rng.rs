//! Deterministic random streams.
//!
//! Every random decision in the engine is drawn from a [`SplitMix64`] stream.
//! SplitMix64 is counter based: the `i`-th output is a fixed mixing function
//! of `seed + i * GOLDEN_GAMMA`, so a stream is fully described by its seed.
//! Streams for independent purposes are derived with [`derive_seed`] from
//! `(master_seed, step_index, purpose)`, which means adding a step or a new
//! purpose never changes the numbers drawn by existing ones.
//!
//! Constants (Steele, Lea & Flood, 2014):
//!
//! * increment `GOLDEN_GAMMA = 0x9E37_79B9_7F4A_7C15`
//! * mix multipliers `0xBF58_476D_1CE4_E5B9` and `0x94D0_49BB_1331_11EB`
//! * shifts 30, 27, 31

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_MUL_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_MUL_2: u64 = 0x94D0_49BB_1331_11EB;

/// The SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_MUL_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_MUL_2);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a over the purpose tag; only used to fold names into seeds.
fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for the stream identified by `(master, step, purpose)`.
pub fn derive_seed(master: u64, step: u64, purpose: &str) -> u64 {
    let a = mix64(master ^ GOLDEN_GAMMA);
    let b = mix64(a ^ mix64(step.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)));
    mix64(b ^ fnv1a(purpose))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Stream for `(master, step, purpose)`; see [`derive_seed`].
    pub fn stream(master: u64, step: u64, purpose: &str) -> Self {
        Self::new(derive_seed(master, step, purpose))
    }

    /// An independent child stream, keyed by `purpose`, that does not advance `self`.
    pub fn fork(&self, purpose: &str) -> Self {
        Self::new(derive_seed(self.state, 0, purpose))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`; unbiased (Lemire's multiply-and-reject).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    pub fn range_i64(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi);
        let span = (hi - lo) as u64 + 1;
        lo + self.below(span) as i64
    }

    /// Uniform real in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller (one draw per call, the pair's twin is discarded).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `k` distinct elements of `pool`, in draw order (partial Fisher-Yates on a copy).
    pub fn sample_without_replacement(&mut self, pool: &[usize], k: usize) -> Vec<usize> {
        assert!(k <= pool.len());
        let mut work = pool.to_vec();
        for i in 0..k {
            let j = i + self.below((work.len() - i) as u64) as usize;
            work.swap(i, j);
        }
        work.truncate(k);
        work
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_outputs() {
        // Reference values of SplitMix64 seeded with 0 (matches the published C code).
        let mut r = SplitMix64::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(r.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn derived_streams_are_independent_of_other_purposes() {
        let a = derive_seed(7, 3, "draw");
        assert_eq!(a, derive_seed(7, 3, "draw"));
        assert_ne!(a, derive_seed(7, 3, "split"));
        assert_ne!(a, derive_seed(7, 4, "draw"));
        assert_ne!(a, derive_seed(8, 3, "draw"));
    }

    #[test]
    fn below_stays_in_range_and_covers_it() {
        let mut r = SplitMix64::new(42);
        let mut seen = [false; 6];
        for _ in 0..1000 {
            let v = r.below(6) as usize;
            seen[v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn sample_without_replacement_is_distinct() {
        let mut r = SplitMix64::new(1);
        let pool: Vec<usize> = (0..50).collect();
        let mut s = r.sample_without_replacement(&pool, 20);
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 20);
    }
}
