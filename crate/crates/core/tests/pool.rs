use chiplet_dse::config::{ChipletSpace, SaParams};
use chiplet_dse::fixtures;
use chiplet_dse::perfmodel::{ChipletKey, Dataflow};
use chiplet_dse::pool::{
    anneal, apply_move, exhaustive_pool_search, neighbor_pool, pool_score, pool_size_sweep, pools_of_size,
    space_menu, ChipletPool, InnerSearch, NetworkTask, PoolMove, PoolScorer,
};
use chiplet_dse::workload::parse_network;
use chiplet_dse::{Config, ObjectiveKind};
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn key(d: Dataflow, pe: u32, glb: u32) -> ChipletKey {
    ChipletKey { dataflow: d, pe_scale: pe, glb_scale: glb }
}

fn toy_tasks() -> Vec<NetworkTask> {
    vec![
        NetworkTask::new(fixtures::graph("toy").unwrap()),
        NetworkTask::new(fixtures::graph("compute_heavy").unwrap()),
    ]
}

fn six_point_space() -> ChipletSpace {
    ChipletSpace { dataflows: Dataflow::ALL.to_vec(), pe_scales: vec![1, 2], glb_scales: vec![4] }
}

/// Number of attributes that differ between two keys.
fn attr_diff(a: &ChipletKey, b: &ChipletKey) -> usize {
    (a.dataflow != b.dataflow) as usize + (a.pe_scale != b.pe_scale) as usize + (a.glb_scale != b.glb_scale) as usize
}

proptest! {
    #[test]
    fn neighbor_changes_one_attribute_of_one_member(seed in any::<u64>(), size in 1usize..5) {
        let space = ChipletSpace::default();
        let menu = space_menu(&space);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks: Vec<ChipletKey> = rand::seq::index::sample(&mut rng, menu.len(), size).into_iter().map(|i| menu[i]).collect();
        let pool = ChipletPool::new(picks).unwrap();
        let next = neighbor_pool(&pool, &space, &mut rng);
        prop_assert_eq!(next.len(), pool.len());
        let removed: Vec<_> = pool.members().iter().filter(|k| !next.contains(k)).collect();
        let added: Vec<_> = next.members().iter().filter(|k| !pool.contains(k)).collect();
        prop_assert_eq!(removed.len(), 1);
        prop_assert_eq!(added.len(), 1);
        prop_assert_eq!(attr_diff(removed[0], added[0]), 1);
        let k = added[0];
        prop_assert!(space.pe_scales.contains(&k.pe_scale) && space.glb_scales.contains(&k.glb_scale));
    }

    #[test]
    fn pe_and_glb_steps_are_adjacent_menu_entries(seed in any::<u64>(), pe in 1u32..=4, gi in 0usize..4) {
        let space = ChipletSpace::default();
        let glb = space.glb_scales[gi];
        let pool = ChipletPool::new(vec![key(Dataflow::RS, pe, glb)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = apply_move(&pool, 0, PoolMove::PeScale, &space, &mut rng).unwrap().members()[0];
        prop_assert_eq!((p.pe_scale as i64 - pe as i64).abs(), 1);
        let g = apply_move(&pool, 0, PoolMove::GlbScale, &space, &mut rng).unwrap().members()[0];
        let gj = space.glb_scales.iter().position(|&v| v == g.glb_scale).unwrap();
        prop_assert_eq!((gj as i64 - gi as i64).abs(), 1);
    }
}

#[test]
fn single_network_score_is_ratio_to_reference() {
    let cfg = Config::default();
    let tasks = vec![NetworkTask::new(fixtures::graph("toy").unwrap())];
    let pool = ChipletPool::new(vec![key(Dataflow::WS, 1, 4)]).unwrap();
    let inner = InnerSearch::Exhaustive;
    let one = pool_score(&pool, &tasks, ObjectiveKind::Edp, &cfg, &inner, &[1.0], cfg.sa.aggregation, 0).unwrap();
    let three = pool_score(&pool, &tasks, ObjectiveKind::Edp, &cfg, &inner, &[3.0], cfg.sa.aggregation, 0).unwrap();
    assert_eq!(one.score, one.objectives[0]);
    assert!((three.score - one.objectives[0] / 3.0).abs() <= 1e-12 * one.score);
}

#[test]
fn superset_pool_never_scores_worse() {
    let cfg = Config::default();
    let tasks = toy_tasks();
    let menu = space_menu(&six_point_space());
    let mut scorer = PoolScorer::new(&tasks, &cfg, ObjectiveKind::Ec, InnerSearch::Exhaustive, vec![1.0, 1.0], 0);
    for k in 1..menu.len() {
        for small in pools_of_size(&menu, k) {
            let s = scorer.score(&small).unwrap().score;
            for extra in menu.iter().filter(|m| !small.contains(m)) {
                let mut big = small.members().to_vec();
                big.push(*extra);
                let b = scorer.score(&ChipletPool::new(big).unwrap()).unwrap().score;
                assert!(b <= s, "{small} -> +{extra}: {b} > {s}");
            }
        }
    }
}

#[test]
fn pool_that_cannot_hold_an_operator_scores_infinite() {
    // 80 GB of weights fit no memory module
    let text = "node huge matmul m=1 k=200000 n=200000\nnode tail elementwise elements=1000\nedge huge tail bytes=400000\n";
    let g = parse_network(text, "huge").unwrap();
    let cfg = Config::default();
    let tasks = vec![NetworkTask::new(g), NetworkTask::new(fixtures::graph("toy").unwrap())];
    let pool = ChipletPool::new(vec![key(Dataflow::WS, 1, 1)]).unwrap();
    let e = pool_score(&pool, &tasks, ObjectiveKind::Energy, &cfg, &InnerSearch::Exhaustive, &[1.0, 1.0], cfg.sa.aggregation, 0)
        .unwrap();
    assert_eq!(e.score, f64::INFINITY);
    assert!(e.objectives[1].is_finite());
}

#[test]
fn annealing_finds_the_enumerated_optimum() {
    let cfg = Config { space: six_point_space(), ..Config::default() };
    let tasks = toy_tasks();
    let menu = space_menu(&cfg.space);
    assert_eq!(menu.len(), 6);
    let params = SaParams { max_evaluations: 200, ..SaParams::default() };
    for obj in [ObjectiveKind::Energy, ObjectiveKind::Edpc] {
        let mut scorer = PoolScorer::new(&tasks, &cfg, obj, InnerSearch::Exhaustive, vec![1.0, 1.0], 0);
        let opt = exhaustive_pool_search(&menu, 2, &mut scorer).unwrap();
        let mut hits = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let init: Vec<ChipletKey> = rand::seq::index::sample(&mut rng, menu.len(), 2).into_iter().map(|i| menu[i]).collect();
            let r = anneal(&mut scorer, &ChipletPool::new(init).unwrap(), &cfg.space, &params, seed).unwrap();
            assert!(r.evaluations <= 200);
            // the running best never gets worse
            assert!(r.trace.windows(2).all(|w| w[1].best_score <= w[0].best_score));
            if r.best.score == opt.score {
                hits += 1;
            }
        }
        assert!(hits >= 90, "{obj}: {hits}/100");
    }
}

#[test]
fn hill_climbing_never_accepts_uphill() {
    let cfg = Config { space: six_point_space(), ..Config::default() };
    let tasks = toy_tasks();
    let params = SaParams { floor: 1.0, init_temp: 1.0, max_evaluations: 40, ..SaParams::default() };
    let mut scorer = PoolScorer::new(&tasks, &cfg, ObjectiveKind::Edp, InnerSearch::Exhaustive, vec![1.0, 1.0], 0);
    let init = ChipletPool::new(vec![key(Dataflow::RS, 1, 4)]).unwrap();
    let r = anneal(&mut scorer, &init, &cfg.space, &params, 5).unwrap();
    assert_eq!(r.evaluations, 40);
    let mut current = r.trace[0].score;
    for row in &r.trace[1..] {
        assert_eq!(row.accepted, row.score <= current, "{row:?}");
        if row.accepted {
            current = row.score;
        }
    }
}

#[test]
fn annealing_is_deterministic_per_seed() {
    let cfg = Config { space: six_point_space(), ..Config::default() };
    let tasks = toy_tasks();
    let params = SaParams { max_evaluations: 30, ..SaParams::default() };
    let init = ChipletPool::new(vec![key(Dataflow::RS, 1, 4), key(Dataflow::OS, 2, 4)]).unwrap();
    let run = || {
        let r = chiplet_dse::pool::sa_search(&init, &tasks, ObjectiveKind::Ec, &cfg, &params, None, 11).unwrap();
        (r.trace_csv(), r.best.objectives)
    };
    assert_eq!(run(), run());
}

#[test]
fn sweep_is_nonincreasing_in_budget() {
    let cfg = Config::default();
    let tasks = toy_tasks();
    let menu = space_menu(&six_point_space());
    let mut scorer = PoolScorer::new(&tasks, &cfg, ObjectiveKind::Edp, InnerSearch::Exhaustive, vec![1.0, 1.0], 0);
    let sweep = pool_size_sweep(&menu, &[1, 2, 3, 4, 5, 6], &mut scorer).unwrap();
    assert_eq!(sweep.len(), 6);
    assert!(sweep.windows(2).all(|w| w[1].score <= w[0].score), "{sweep:?}");
}
