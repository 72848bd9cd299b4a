//! Deterministic random number generation.
//!
//! Every run derives all of its randomness from one `u64` seed, so identical
//! configs produce bit-identical results regardless of platform or thread
//! count. Streams are split off with [`Rng::derive`] so that independent
//! consumers (model init, data generation, shuffles, prune/grow events)
//! never interleave draws.

/// xoshiro256** seeded through SplitMix64.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: [u64; 4],
    /// Cached second output of the Box-Muller transform.
    spare_normal: Option<u64>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut s = seed;
        let state = [
            splitmix64(&mut s),
            splitmix64(&mut s),
            splitmix64(&mut s),
            splitmix64(&mut s),
        ];
        Rng {
            state,
            spare_normal: None,
        }
    }

    /// Split off an independent stream tagged by a label and an index.
    ///
    /// The tag is hashed into the parent seed, so `derive("init", 0)` and
    /// `derive("shuffle", 0)` never collide even for the same parent.
    pub fn derive(&self, label: &str, index: u64) -> Rng {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in label.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= index.wrapping_mul(0x9e3779b97f4a7c15);
        let mut s = self.state[0] ^ h;
        Rng::new(splitmix64(&mut s))
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller; the second draw is cached bit-exactly.
    pub fn normal(&mut self) -> f64 {
        if let Some(bits) = self.spare_normal.take() {
            return f64::from_bits(bits);
        }
        // Reject u1 == 0 to keep ln finite.
        let mut u1 = self.uniform();
        while u1 == 0.0 {
            u1 = self.uniform();
        }
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some((r * theta.sin()).to_bits());
        r * theta.cos()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift; bias is negligible for the desk-scale n used here.
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Choose `k` distinct indices from [0, n) via partial Fisher-Yates.
    /// The result is sorted ascending so downstream masking is deterministic.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        let n = items.len();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// State words for checkpointing (spare normal draw included).
    pub fn snapshot(&self) -> [u64; 6] {
        [
            self.state[0],
            self.state[1],
            self.state[2],
            self.state[3],
            u64::from(self.spare_normal.is_some()),
            self.spare_normal.unwrap_or(0),
        ]
    }

    pub fn restore(words: [u64; 6]) -> Rng {
        Rng {
            state: [words[0], words[1], words[2], words[3]],
            spare_normal: if words[4] == 0 { None } else { Some(words[5]) },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derived_streams_differ() {
        let root = Rng::new(7);
        let mut a = root.derive("init", 0);
        let mut b = root.derive("init", 1);
        let mut c = root.derive("shuffle", 0);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_ne!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::new(1);
        for _ in 0..1000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_roughly_standard() {
        let mut rng = Rng::new(3);
        let n = 20_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x = rng.normal();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn choose_indices_distinct_and_sorted() {
        let mut rng = Rng::new(9);
        let picked = rng.choose_indices(100, 30);
        assert_eq!(picked.len(), 30);
        for w in picked.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn snapshot_restore_resumes_stream() {
        let mut a = Rng::new(11);
        for _ in 0..17 {
            a.normal();
        }
        let words = a.snapshot();
        let mut b = Rng::restore(words);
        for _ in 0..50 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
