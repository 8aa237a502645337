//! Seeded random draws on the simplex, used by multistart and the probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::types::{CostVector, Distribution, StrategyMatrix};

pub type ProbeRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> ProbeRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw from the simplex (normalized exponentials).
pub fn uniform_simplex<R: Rng>(rng: &mut R, s: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..s).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Simplex draw mixed with the uniform vector so every entry is at least
/// `floor`. `floor` must be below `1 / s`.
pub fn interior_simplex<R: Rng>(rng: &mut R, s: usize, floor: f64) -> Vec<f64> {
    let mix = floor * s as f64;
    uniform_simplex(rng, s)
        .into_iter()
        .map(|x| (1.0 - mix) * x + floor)
        .collect()
}

pub fn random_distribution<S: Scalar, R: Rng>(
    rng: &mut R,
    s: usize,
    floor: f64,
) -> Distribution<S> {
    let v = interior_simplex(rng, s, floor);
    Distribution::new(v.into_iter().map(S::lit).collect()).expect("draw lies on the simplex")
}

pub fn random_strategy<S: Scalar, R: Rng>(rng: &mut R, s: usize, floor: f64) -> StrategyMatrix<S> {
    let rows = (0..s)
        .map(|_| {
            interior_simplex(rng, s, floor)
                .into_iter()
                .map(S::lit)
                .collect()
        })
        .collect();
    StrategyMatrix::new(rows).expect("rows lie on the simplex")
}

/// Entries uniform in `[lo, hi)`.
pub fn random_costs<S: Scalar, R: Rng>(rng: &mut R, s: usize, lo: f64, hi: f64) -> CostVector<S> {
    CostVector::new((0..s).map(|_| S::lit(rng.gen_range(lo..hi))).collect()).expect("finite draws")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_respect_floor_and_seed() {
        let mut a = seeded(7);
        let mut b = seeded(7);
        for _ in 0..50 {
            let x = interior_simplex(&mut a, 3, 0.05);
            assert_eq!(x, interior_simplex(&mut b, 3, 0.05));
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(x.iter().all(|&v| v >= 0.05));
        }
    }
}
