use chiplet_dse::config::GaParams;
use chiplet_dse::fixtures;
use chiplet_dse::fusion::{
    exhaustive_fusion_search, ga_search, genome_stages, legalize_genome, roofline_memory, seed_population,
    solve_plan, CandidateCache, FusionGenome, SearchContext,
};
use chiplet_dse::perfmodel::{ChipletConfig, Dataflow, GroupSpan, MemoryKind, TechParams};
use chiplet_dse::workload::parse_network;
use chiplet_dse::{Config, ObjectiveKind};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn chip(df: Dataflow, pe: u32, glb: u32) -> ChipletConfig {
    ChipletConfig::from_scales(df, pe, glb, &TechParams::default()).unwrap()
}

fn toy_pool() -> Vec<ChipletConfig> {
    vec![chip(Dataflow::WS, 1, 1), chip(Dataflow::OS, 2, 4), chip(Dataflow::RS, 1, 4)]
}

#[test]
fn three_seeds_are_none_max_and_early() {
    let g = fixtures::graph("toy").unwrap();
    let pool = toy_pool();
    let cfg = Config::default();
    let ctx = SearchContext { graph: &g, pool: &pool, cfg: &cfg, objective: ObjectiveKind::Energy, constraints: &[] };
    let cache = CandidateCache::new();
    let pop = seed_population(&ctx, &cache, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(pop.len(), 3);
    assert!(pop[0].cuts.iter().all(|&c| c));
    // the toy chain fits entirely in one group
    assert!(pop[1].cuts.iter().all(|&c| !c));
    assert_eq!(pop[2].cuts, pop[1].cuts);
    let again = seed_population(&ctx, &cache, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let twice = seed_population(&ctx, &cache, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(again, twice);
}

#[test]
fn legalize_fixed_point_and_oversized_intermediates() {
    let g = fixtures::graph("toy").unwrap();
    let pool = toy_pool();
    let cfg = Config::default();
    let ctx = SearchContext { graph: &g, pool: &pool, cfg: &cfg, objective: ObjectiveKind::Energy, constraints: &[] };
    let cache = CandidateCache::new();
    let legal = FusionGenome::from_cuts(vec![true, false, true, false, true], 2, 0);
    assert_eq!(legalize_genome(&legal, &ctx, &cache).unwrap(), legal);

    // VGG-like chain: 64x224x224 activations (6.4 MB) exceed half of every GLB,
    // the 512x14x14 ones (200 KB) fit.
    let vgg = "\
node c1 conv k=64 c=3 r=3 s=3 p=224 q=224
node c2 conv k=64 c=64 r=3 s=3 p=224 q=224
node c3 conv k=512 c=64 r=3 s=3 p=14 q=14 stride=16
node c4 conv k=512 c=512 r=3 s=3 p=14 q=14
node c5 conv k=512 c=512 r=3 s=3 p=14 q=14
edge c1 c2 bytes=6422528
edge c2 c3 bytes=6422528
edge c3 c4 bytes=200704
edge c4 c5 bytes=200704
";
    let g = parse_network(vgg, "vgg").unwrap();
    let pool = vec![chip(Dataflow::RS, 1, 1), chip(Dataflow::RS, 2, 1)];
    let ctx = SearchContext { graph: &g, pool: &pool, cfg: &cfg, objective: ObjectiveKind::Energy, constraints: &[] };
    let fused = FusionGenome::from_cuts(vec![false; 4], 3, 0);
    let legal = legalize_genome(&fused, &ctx, &cache).unwrap();
    assert_eq!(legal.cuts, vec![true, true, false, false]);
    // feasibility oracle: every group enumerates at least one candidate
    for stage in genome_stages(&ctx, &cache, &legal).unwrap() {
        assert!(!stage.is_empty());
    }
}

#[test]
fn compute_bound_group_seeds_ddr5() {
    let g = parse_network("node a conv k=256 c=256 r=3 s=3 p=28 q=28\n", "c").unwrap();
    let pool = vec![chip(Dataflow::RS, 1, 1)];
    let cfg = Config::parse("memories kinds=DDR5,HBM3\n").unwrap();
    let ctx = SearchContext { graph: &g, pool: &pool, cfg: &cfg, objective: ObjectiveKind::Energy, constraints: &[] };
    let cache = CandidateCache::new();
    let m = roofline_memory(&ctx, &cache, GroupSpan::new(0, 1), 1).unwrap().unwrap();
    assert_eq!(cfg.memories[m].kind, MemoryKind::Ddr5);
}

#[test]
fn seeded_memory_is_cheapest_preserving_latency() {
    let cfg = Config::default();
    let pool = vec![chip(Dataflow::WS, 2, 4), chip(Dataflow::RS, 1, 16)];
    for name in ["resnet50", "vit_b16", "mobilenetv3", "compute_heavy"] {
        let g = fixtures::graph(name).unwrap();
        let ctx = SearchContext { graph: &g, pool: &pool, cfg: &cfg, objective: ObjectiveKind::Energy, constraints: &[] };
        let cache = CandidateCache::new();
        for i in 0..g.len() {
            let span = GroupSpan::new(i, i + 1);
            let Some(m) = roofline_memory(&ctx, &cache, span, 1).unwrap() else { continue };
            let all = cache.get(&ctx, span, None, Some(1)).unwrap();
            let hbm = cfg.memories.iter().position(|x| x.kind == MemoryKind::Hbm3).unwrap();
            let reference = cache.get(&ctx, span, Some(hbm), Some(1)).unwrap();
            let best = reference.iter().filter(|c| c.tp == 1).min_by(|a, b| a.compute_time.total_cmp(&b.compute_time)).unwrap();
            let preserving = all
                .iter()
                .filter(|c| c.tp == 1 && c.chiplet.key == best.chiplet.key && c.t_cmp == best.t_cmp)
                .map(|c| c.memory.dollar_cost())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(cfg.memories[m].dollar_cost(), preserving, "{name} node {i}");
        }
    }
}

fn toy_ctx<'a>(g: &'a chiplet_dse::OperatorGraph, pool: &'a [ChipletConfig], cfg: &'a Config, objective: ObjectiveKind) -> SearchContext<'a> {
    SearchContext { graph: g, pool, cfg, objective, constraints: &[] }
}

#[test]
fn single_generation_returns_best_seed() {
    let g = fixtures::graph("toy").unwrap();
    let pool = toy_pool();
    let cfg = Config::default();
    let ctx = toy_ctx(&g, &pool, &cfg, ObjectiveKind::Edp);
    let params = GaParams { population: 3, generations: 1, ..GaParams::default() };
    let r = ga_search(&ctx, &params, 5).unwrap();
    let cache = CandidateCache::new();
    let seeds = seed_population(&ctx, &cache, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let best = seeds
        .iter()
        .map(|s| solve_plan(&ctx, &genome_stages(&ctx, &cache, s).unwrap()).unwrap().1.objective)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(r.design.objective, best);
}

#[test]
fn elitism_and_determinism() {
    let g = fixtures::graph("mobilenetv3").unwrap();
    let pool = toy_pool();
    let cfg = Config::default();
    for obj in ObjectiveKind::ALL {
        let ctx = toy_ctx(&g, &pool, &cfg, obj);
        let a = ga_search(&ctx, &cfg.ga, 11).unwrap();
        let b = ga_search(&ctx, &cfg.ga, 11).unwrap();
        assert_eq!(a.design, b.design);
        assert!(a.history.windows(2).all(|w| w[1].best_objective <= w[0].best_objective));
        assert_eq!(a.history.last().unwrap().best_objective, a.design.objective);
        assert_eq!(a.design.recompute_objective(), a.design.objective);
    }
}

#[test]
fn ga_within_five_percent_of_exhaustive_on_toy_chain() {
    let g = fixtures::graph("toy").unwrap();
    let pool = vec![chip(Dataflow::WS, 1, 1), chip(Dataflow::OS, 1, 4)];
    let cfg = Config::default();
    for obj in ObjectiveKind::ALL {
        let ctx = toy_ctx(&g, &pool, &cfg, obj);
        let cache = CandidateCache::new();
        let (_, opt) = exhaustive_fusion_search(&ctx, &cache).unwrap();
        for seed in 0..5 {
            let r = ga_search(&ctx, &cfg.ga, seed).unwrap();
            assert!(r.design.objective >= opt.objective);
            assert!(r.design.objective <= 1.05 * opt.objective, "{obj} seed {seed}: {} vs {}", r.design.objective, opt.objective);
        }
    }
}
