//! Reproducible pseudo-random numbers.
//!
//! The generator is SplitMix64 (Steele, Lea and Flood): a 64-bit counter
//! advanced by the golden-ratio increment `0x9E3779B97F4A7C15` and passed
//! through a two-round xor-shift-multiply finalizer. Uniform doubles take the
//! top 53 bits of each output. Normal deviates use the basic Box-Muller
//! transform; both deviates of a pair are used, cosine branch first.
//!
//! Every step is integer arithmetic or a correctly-rounded IEEE operation
//! (`ln`, `sqrt`, `cos`, `sin` aside), so sequences are easy to reproduce in
//! other languages.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derive an independent stream from a parent seed and a stream index.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut parent = SplitMix64::new(seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
        SplitMix64::new(parent.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by rejection of the biased tail.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Fisher-Yates shuffle, iterating from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n` (all of them when `k >= n`), in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

/// Standard normal deviates via Box-Muller on a [`SplitMix64`] stream.
#[derive(Debug, Clone)]
pub struct NormalSampler {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl NormalSampler {
    pub fn new(seed: u64) -> Self {
        Self::from_rng(SplitMix64::new(seed))
    }

    pub fn from_rng(rng: SplitMix64) -> Self {
        Self { rng, spare: None }
    }

    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.rng.next_f64();
        let u2 = self.rng.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(radius * theta.sin());
        radius * theta.cos()
    }

    pub fn next(&mut self, mean: f64, stddev: f64) -> f64 {
        mean + stddev * self.next_standard()
    }
}
