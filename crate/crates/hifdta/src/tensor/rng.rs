//! Counter-based random numbers.
//!
//! Every consumer addresses the generator with an explicit (stream, counter)
//! pair instead of pulling from shared mutable state, so any value can be
//! regenerated later (dropout masks in the backward pass, stub embeddings on
//! a second run) and the order of calls never changes the result.

/// splitmix64 finalizer; bijective, good avalanche.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over bytes. Used both for naming RNG streams and for stable
/// cluster-type hashing, so it must never change.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy)]
pub struct StreamRng {
    seed: u64,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        StreamRng { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive a generator whose streams are all offset by `tag`; handy for
    /// scoping (per-fold, per-epoch) without threading strings everywhere.
    pub fn child(&self, tag: u64) -> Self {
        StreamRng { seed: mix(self.seed ^ mix(tag)) }
    }

    #[inline]
    pub fn u64(&self, stream: u64, counter: u64) -> u64 {
        mix(self.seed ^ mix(stream) ^ counter.wrapping_mul(0xd6e8_feb8_6659_fd93))
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    #[inline]
    pub fn uniform(&self, stream: u64, counter: u64) -> f64 {
        (self.u64(stream, counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform_in(&self, stream: u64, counter: u64, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform(stream, counter)
    }

    /// Standard normal via Box-Muller. Consumes counters 2i and 2i+1 for
    /// index i, so sequential indices never reuse uniforms.
    pub fn normal(&self, stream: u64, index: u64) -> f64 {
        let u1 = self.uniform(stream, index.wrapping_mul(2));
        let u2 = self.uniform(stream, index.wrapping_mul(2).wrapping_add(1));
        // Guard the log; u1 == 0 has probability 2^-53 but would give -inf.
        let u1 = u1.max(1e-300);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&self, stream: u64, items: &mut [T]) {
        let n = items.len();
        for i in (1..n).rev() {
            let j = (self.u64(stream, i as u64) % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }
}

/// Stream id from a human-readable label.
pub fn stream(label: &str) -> u64 {
    fnv1a(label.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_value() {
        let r = StreamRng::new(42);
        assert_eq!(r.u64(7, 1000), r.u64(7, 1000));
        assert_eq!(r.normal(3, 9).to_bits(), r.normal(3, 9).to_bits());
    }

    #[test]
    fn streams_do_not_collide() {
        let r = StreamRng::new(42);
        assert_ne!(r.u64(stream("a"), 0), r.u64(stream("b"), 0));
        assert_ne!(r.u64(stream("a"), 0), r.u64(stream("a"), 1));
    }

    #[test]
    fn uniform_range_and_mean() {
        let r = StreamRng::new(7);
        let mut sum = 0.0;
        let n = 20_000;
        for i in 0..n {
            let u = r.uniform(1, i);
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "uniform mean {mean}");
    }

    #[test]
    fn normal_moments() {
        let r = StreamRng::new(11);
        let n = 40_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let z = r.normal(5, i);
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "normal mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "normal var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation_and_seed_sensitive() {
        let r = StreamRng::new(1);
        let mut a: Vec<u32> = (0..100).collect();
        let mut b: Vec<u32> = (0..100).collect();
        r.shuffle(stream("s"), &mut a);
        r.shuffle(stream("s"), &mut b);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());

        let mut c: Vec<u32> = (0..100).collect();
        StreamRng::new(2).shuffle(stream("s"), &mut c);
        assert_ne!(a, c);
    }
}
