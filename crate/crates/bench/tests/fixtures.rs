use speaq_bench::uniform_matrix;
use speaq_core::{brute_force_assignment, hungarian};

#[test]
fn benchmark_inputs_are_solvable() {
    for seed in 0..20 {
        let m = uniform_matrix(6, seed);
        let fast = hungarian(&m).unwrap();
        let slow = brute_force_assignment(&m).unwrap();
        assert!((fast.total_cost - slow.total_cost).abs() < 1e-12);
    }
}
