//! Splitmix64 generator with a fixed consumption schedule.
//!
//! The u64 stream is pure integer arithmetic, so it is bit-exact on every
//! platform. Uniform doubles take the top 53 bits; Gaussians are Box-Muller
//! on consecutive uniform pairs, always returning the cosine branch, so each
//! Gaussian consumes exactly two uniforms and the stream position is a
//! function of the number of draws alone (no cached second branch).

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_NEG_53
    }

    /// Standard normal draw; consumes exactly two uniforms.
    pub fn next_gaussian(&mut self) -> f64 {
        let mut u1 = self.next_f64();
        let u2 = self.next_f64();
        if u1 == 0.0 {
            // ln(0) guard; probability 2^-53 per draw
            u1 = TWO_NEG_53;
        }
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn fill_gaussian(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_gaussian()).collect()
    }

    /// Uniform integer in [0, bound). `bound` must be positive.
    pub fn next_below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        (self.next_u64() % bound as u64) as usize
    }

    /// In-place Fisher-Yates shuffle, high index down.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i + 1);
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Same update written differently, so the stream test does not share a
    // code path with the implementation under test.
    fn reference_stream(seed: u64, n: usize) -> Vec<u64> {
        let mut out = Vec::with_capacity(n);
        let mut s = seed;
        for _ in 0..n {
            s = s.wrapping_add(0x9E3779B97F4A7C15);
            let a = s ^ (s >> 30);
            let b = a.wrapping_mul(0xBF58476D1CE4E5B9);
            let c = (b ^ (b >> 27)).wrapping_mul(0x94D049BB133111EB);
            out.push(c ^ (c >> 31));
        }
        out
    }

    #[test]
    fn seed_zero_first_output_matches_published_value() {
        let mut rng = Rng::new(0);
        assert_eq!(rng.next_u64(), 0xE220A8397B1DCDAF);
    }

    #[test]
    fn stream_matches_independent_reference() {
        for seed in [0u64, 1, 42, u64::MAX, 0xDEADBEEF] {
            let mut rng = Rng::new(seed);
            let got: Vec<u64> = (0..64).map(|_| rng.next_u64()).collect();
            assert_eq!(got, reference_stream(seed, 64));
        }
    }

    #[test]
    fn uniform_is_top_53_bits() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            let u = a.next_f64();
            let w = b.next_u64();
            assert_eq!(u, (w >> 11) as f64 * TWO_NEG_53);
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn gaussian_consumes_two_uniforms() {
        let mut a = Rng::new(9);
        let _ = a.next_gaussian();
        let mut b = Rng::new(9);
        let _ = b.next_u64();
        let _ = b.next_u64();
        // streams must now coincide
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn gaussian_is_cosine_branch_of_the_pair() {
        let mut a = Rng::new(1234);
        let g = a.next_gaussian();
        let mut b = Rng::new(1234);
        let u1 = b.next_f64();
        let u2 = b.next_f64();
        let want = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        assert_eq!(g, want);
    }

    #[test]
    fn gaussian_moments_are_sane() {
        let mut rng = Rng::new(2024);
        let n = 200_000;
        let xs = rng.fill_gaussian(n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation_and_deterministic() {
        let mut v: Vec<usize> = (0..100).collect();
        Rng::new(5).shuffle(&mut v);
        let mut w: Vec<usize> = (0..100).collect();
        Rng::new(5).shuffle(&mut w);
        assert_eq!(v, w);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, (0..100).collect::<Vec<_>>());
    }
}
