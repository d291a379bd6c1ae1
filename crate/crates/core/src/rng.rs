//! Counter-based normal variates keyed by `(seed, path, step, component)`.
//!
//! Every draw is a pure function of its key, so paths can be simulated in
//! any order or in parallel and still reproduce bit for bit.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn mix(h: u64, v: u64) -> u64 {
    splitmix64(h ^ v.wrapping_mul(GOLDEN))
}

/// Hashes an arbitrary list of words into a 64-bit stream seed.
pub fn hash_words(words: impl IntoIterator<Item = u64>) -> u64 {
    words.into_iter().fold(0x6A09_E667_F3BC_C908, mix)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Raw 64 random bits for a key and a lane.
    #[inline]
    pub fn bits(&self, path: u64, step: u64, component: u64, lane: u64) -> u64 {
        let h = mix(splitmix64(self.seed), path);
        let h = mix(h, step);
        let h = mix(h, component);
        mix(h, lane)
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&self, path: u64, step: u64, component: u64, lane: u64) -> f64 {
        ((self.bits(path, step, component, lane) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by Box-Muller.
    #[inline]
    pub fn normal(&self, path: u64, step: u64, component: u64) -> f64 {
        let u1 = self.uniform(path, step, component, 0);
        let u2 = self.uniform(path, step, component, 1);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_pure_functions_of_key() {
        let rng = CounterRng::new(7);
        assert_eq!(rng.normal(3, 10, 1).to_bits(), CounterRng::new(7).normal(3, 10, 1).to_bits());
        assert_ne!(rng.normal(3, 10, 1), rng.normal(3, 10, 2));
        assert_ne!(rng.normal(3, 10, 1), rng.normal(4, 10, 1));
        assert_ne!(rng.normal(3, 10, 1), CounterRng::new(8).normal(3, 10, 1));
    }

    #[test]
    fn normal_moments() {
        let rng = CounterRng::new(42);
        let n = 200_000u64;
        let xs: Vec<f64> = (0..n).map(|i| rng.normal(i, 0, 0)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let kurt = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64 / (var * var);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
        assert!((kurt - 3.0).abs() < 0.05, "kurtosis {kurt}");
    }

    #[test]
    fn uniform_in_open_unit_interval() {
        let rng = CounterRng::new(0);
        assert!((0..10_000).map(|i| rng.uniform(i, 1, 2, 3)).all(|u| u > 0.0 && u < 1.0));
    }
}
