//! Per-path random streams and truncated Brownian increments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Generator for path `index` of an ensemble seeded with `seed`.
///
/// ChaCha is counter based: every path owns a distinct stream of the same
/// key, so the draws of a path depend only on `(seed, index)`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw `ΔW ~ N(0, h)` conditioned on `|ΔW| ≤ bound·√h`.
///
/// Exact rejection sampling: a normal proposal for wide bounds, a uniform
/// proposal accepted with probability `exp(−z²/2)` for narrow ones.
pub fn sample_truncated_gaussian<R: Rng + ?Sized>(h: f64, bound: f64, rng: &mut R) -> f64 {
    debug_assert!(h > 0.0 && bound > 0.0);
    let z = if bound >= 1.0 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= bound {
                break z;
            }
        }
    } else {
        loop {
            let z = rng.random_range(-bound..=bound);
            if rng.random::<f64>() <= (-0.5 * z * z).exp() {
                break z;
            }
        }
    };
    z * h.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_respect_the_bound() {
        let mut rng = path_rng(1, 0);
        for _ in 0..100_000 {
            let w = sample_truncated_gaussian(0.01, 4.0, &mut rng);
            assert!(w.abs() <= 0.4);
        }
    }

    #[test]
    fn moments_match_truncated_normal() {
        // Var of N(0,1) truncated to [-4, 4]: 1 - 2·4·φ(4)/(2Φ(4) - 1).
        const TRUNCATED_VARIANCE: f64 = 0.998_929_290_372_473_8;
        let (h, n) = (0.01, 1_000_000);
        let mut rng = path_rng(2024, 3);
        let (mut s, mut ss) = (0.0, 0.0);
        for _ in 0..n {
            let w = sample_truncated_gaussian(h, 4.0, &mut rng);
            s += w;
            ss += w * w;
        }
        let mean = s / n as f64;
        let var = ss / n as f64 - mean * mean;
        assert!(mean.abs() <= 3.0 * (h / n as f64).sqrt(), "mean {mean}");
        let expected = TRUNCATED_VARIANCE * h;
        assert!((var - expected).abs() / expected < 0.01, "var {var}");
    }

    #[test]
    fn heavy_truncation_shrinks_variance() {
        let h = 0.01;
        let mut rng = path_rng(9, 0);
        let n = 100_000;
        let var: f64 = (0..n)
            .map(|_| sample_truncated_gaussian(h, 0.01, &mut rng).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!(var < 1e-3 * h);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = {
            let mut r = path_rng(7, 1);
            (0..5).map(|_| sample_truncated_gaussian(1.0, 4.0, &mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = path_rng(7, 1);
            (0..5).map(|_| sample_truncated_gaussian(1.0, 4.0, &mut r)).collect()
        };
        let c: Vec<f64> = {
            let mut r = path_rng(7, 2);
            (0..5).map(|_| sample_truncated_gaussian(1.0, 4.0, &mut r)).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
