//! Instance generators shared by the benchmarks.

use chiplet_dse::StageOption;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `p` stages of `m` options whose latencies are drawn from `q` distinct values.
pub fn random_stages(seed: u64, p: usize, m: usize, q: usize) -> Vec<Vec<StageOption>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels: Vec<f64> = (1..=q).map(|i| i as f64 * 1e-3).collect();
    (0..p)
        .map(|_| {
            (0..m)
                .map(|_| StageOption {
                    t_cmp: levels[rng.gen_range(0..q)],
                    e_dyn: rng.gen_range(0.1..10.0),
                    p_static: rng.gen_range(0.0..5.0),
                    dollar_cost: rng.gen_range(1.0..100.0),
                })
                .collect()
        })
        .collect()
}
