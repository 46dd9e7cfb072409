//! Seeded inputs shared by the benchmarks in `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use speaq_core::CostMatrix;

/// Dense `n x n` matrix with uniform costs in `[0, 1)`.
pub fn uniform_matrix(n: usize, seed: u64) -> CostMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..n * n).map(|_| rng.random::<f64>()).collect();
    CostMatrix::new(n, entries).expect("finite entries")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_seeded() {
        assert_eq!(uniform_matrix(4, 1), uniform_matrix(4, 1));
        assert_ne!(uniform_matrix(4, 1), uniform_matrix(4, 2));
    }
}
