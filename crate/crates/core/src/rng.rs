//! Counter-based pseudo-random numbers.
//!
//! Output `i` of a stream is a pure function of `(key, i)` — the SplitMix64
//! construction: mix the key plus the counter times the 64-bit golden ratio
//! through an avalanching finalizer. The constants live here, in the repo,
//! so the same seed yields the same stream on every platform and a
//! reimplementation in another language can agree bit for bit. Not
//! cryptographic; good enough statistically for sampling experiments.

use std::f64::consts::TAU;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_A: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_B: u64 = 0x94D0_49BB_1331_11EB;
const SPLIT_SALT: u64 = 0x5851_F42D_4C95_7F2D;

/// SplitMix64 finalizer: a bijective avalanche on 64 bits.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_A);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_B);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes; used only to derive child stream keys.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Deterministic counter-based generator with labeled substreams.
#[derive(Debug, Clone)]
pub struct Rng {
    key: u64,
    counter: u64,
    /// Second Box–Muller output, cached between normal draws.
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng { key: seed, counter: 0, spare_normal: None }
    }

    /// Derives an independent stream for a named purpose ("data", "noise",
    /// ...). Children depend only on `(seed, label)`, never on how much of
    /// this stream has been consumed.
    pub fn split(&self, label: &str) -> Rng {
        Rng::new(mix(self.key ^ SPLIT_SALT ^ mix(fnv1a(label.as_bytes()))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw via Box–Muller; pairs are cached, so draws come
    /// two radians at a time but the stream stays deterministic.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // Shift into (0, 1] so the log never sees zero.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = TAU * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// `n` standard normal draws.
    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Unbiased-enough index draw in `[0, n)`; the modulo bias is below
    /// 2⁻⁵⁹ for the component counts used here.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is meaningless");
        (self.next_u64() % n as u64) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_diverge() {
        let mut a = Rng::new(1);
        let mut b = Rng::new(2);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn stream_is_frozen() {
        // Regression pin: these exact outputs are part of the format
        // contract, since seeds in configs promise reproducible runs.
        let mut rng = Rng::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        let mut rng7 = Rng::new(7);
        assert_eq!(rng7.next_u64(), 0x63CB_E1E4_5932_0DD7);
    }

    #[test]
    fn split_is_independent_of_consumption() {
        let mut parent = Rng::new(123);
        let child_before = parent.split("noise");
        for _ in 0..100 {
            parent.next_u64();
        }
        let mut child_after = parent.split("noise");
        let mut child_ref = child_before;
        for _ in 0..32 {
            assert_eq!(child_ref.next_u64(), child_after.next_u64());
        }
    }

    #[test]
    fn split_labels_distinguish_streams() {
        let parent = Rng::new(9);
        let mut a = parent.split("data");
        let mut b = parent.split("noise");
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_is_in_unit_interval() {
        let mut rng = Rng::new(5);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_match() {
        let mut rng = Rng::new(77);
        let n = 200_000;
        let draws = rng.normal_vec(n);
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn below_covers_range() {
        let mut rng = Rng::new(3);
        let mut seen = [false; 8];
        for _ in 0..10_000 {
            seen[rng.below(8)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
