use chiplet_dse::config::{GaParams, PnrParams};
use chiplet_dse::costmodel::design_re_cost;
use chiplet_dse::fixtures;
use chiplet_dse::fusion::{ga_search, SearchContext};
use chiplet_dse::perfmodel::{ChipletConfig, Dataflow, TechParams};
use chiplet_dse::pnr::{
    edge_bandwidth, manhattan_lower_bound, minimize_footprint, minimize_footprint_blocks, perimeter_scaling,
    place_and_route_blocks, validate_placement, Block, Placement,
};
use chiplet_dse::{Config, ObjectiveKind};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random_blocks(rng: &mut ChaCha8Rng) -> Vec<Block> {
    let stages = rng.gen_range(1..=8);
    let mut out = Vec::new();
    for stage in 0..stages {
        let tp = rng.gen_range(1..=2);
        let w = rng.gen_range(5..=60);
        let h = if rng.gen_bool(0.5) { w } else { rng.gen_range(5..=60) };
        for instance in 0..tp {
            out.push(Block { stage, instance, w, h });
        }
    }
    out
}

fn check_layout(p: &Placement, blocks: &[Block], params: &PnrParams) {
    validate_placement(p).unwrap();
    let area: u64 = blocks.iter().map(|b| b.w as u64 * b.h as u64).sum();
    assert!(p.width as u64 * p.height as u64 >= area);
    for r in &p.routes {
        assert!(r.length() as u32 >= manhattan_lower_bound(p, r.net));
    }
    let smaller = place_and_route_blocks(blocks, p.width - 1, params);
    assert!(smaller.unwrap_err().is_infeasible(), "side {} - 1 should not fit", p.width);
}

#[test]
fn random_designs_are_valid_and_minimal() {
    let params = PnrParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let blocks = random_blocks(&mut rng);
        let p = minimize_footprint_blocks(&blocks, &params).unwrap();
        assert_eq!(p.rects.len(), blocks.len());
        check_layout(&p, &blocks, &params);
    }
}

#[test]
fn tight_capacity_still_valid_when_it_routes() {
    let params = PnrParams { edge_capacity: 1, ..PnrParams::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let blocks = random_blocks(&mut rng);
        let p = minimize_footprint_blocks(&blocks, &params).unwrap();
        check_layout(&p, &blocks, &params);
    }
}

#[test]
fn single_chiplet_side_is_its_longer_edge() {
    let params = PnrParams::default();
    let p = minimize_footprint_blocks(&[Block { stage: 0, instance: 0, w: 30, h: 20 }], &params).unwrap();
    assert_eq!(p.width, 30);
}

#[test]
fn oversized_chiplet_is_infeasible() {
    let params = PnrParams { max_side: 50, ..PnrParams::default() };
    let e = minimize_footprint_blocks(&[Block { stage: 0, instance: 0, w: 60, h: 60 }], &params).unwrap_err();
    assert!(e.is_infeasible());
}

#[test]
fn layout_leaves_metrics_untouched_and_feeds_packaging_cost() {
    let cfg = Config::default();
    let g = fixtures::graph("mobilenetv3").unwrap();
    let pool: Vec<ChipletConfig> = [(Dataflow::RS, 2, 4), (Dataflow::WS, 1, 1)]
        .iter()
        .map(|&(d, p, b)| ChipletConfig::from_scales(d, p, b, &TechParams::default()).unwrap())
        .collect();
    let ctx = SearchContext { graph: &g, pool: &pool, cfg: &cfg, objective: ObjectiveKind::Edp, constraints: &[] };
    let design = ga_search(&ctx, &GaParams { population: 6, generations: 3, ..GaParams::default() }, 1).unwrap().design;
    let before = design.clone();
    let p = minimize_footprint(&design, &cfg.pnr).unwrap();
    assert_eq!(design, before);
    validate_placement(&p).unwrap();
    let chip_area: f64 = design.stages.iter().map(|s| s.chiplet.area * s.tp as f64).sum();
    assert!(p.area_mm2() >= chip_area);
    let small = design_re_cost(&design, chip_area, &cfg.cost);
    let placed = design_re_cost(&design, p.area_mm2(), &cfg.cost);
    assert!(placed >= small);
    let json: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
    assert_eq!(json["rects"].as_array().unwrap().len(), p.rects.len());
    assert!(p.to_text().lines().count() > 1);
}

#[test]
fn split_perimeter_matches_geometry() {
    let area = 400.0f64;
    let one = 4.0 * area.sqrt();
    for n in 1..=16u32 {
        let side = (area / n as f64).sqrt();
        let total = n as f64 * 4.0 * side;
        let f = perimeter_scaling(n).unwrap();
        assert!((total - f * one).abs() <= 1e-12 * total, "n={n}");
        assert_eq!(f, (n as f64).sqrt());
    }
    let params = PnrParams::default();
    let bw = edge_bandwidth(area, 4, &params).unwrap();
    assert!((bw - 2.0 * one * params.edge_bandwidth_per_mm).abs() <= 1e-6 * bw);
}
