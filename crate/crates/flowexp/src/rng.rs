//! Small deterministic PRNG for the seeded property suites.
//!
//! SplitMix64; every randomized test owns its seed so failures replay.

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in `0..n`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        self.next_u64() % n
    }

    /// Uniform signed integer in `[-m, m]`.
    pub fn int_in(&mut self, m: i64) -> i64 {
        (self.below((2 * m + 1) as u64) as i64) - m
    }

    /// Small nonzero rational with numerator in `[-m, m]` and denominator in `[1, d]`.
    pub fn rational(&mut self, m: i64, d: i64) -> crate::rat::Q {
        loop {
            let num = self.int_in(m);
            if num != 0 {
                return crate::rat::q(num, 1 + self.below(d as u64) as i64);
            }
        }
    }

    /// Rational in `[-m, m]`, zero allowed.
    pub fn rational_or_zero(&mut self, m: i64, d: i64) -> crate::rat::Q {
        let num = self.int_in(m);
        crate::rat::q(num, 1 + self.below(d as u64) as i64)
    }

    pub fn f64_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}
