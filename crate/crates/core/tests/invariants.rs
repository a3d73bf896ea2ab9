use chiplet_dse::costmodel::{die_cost, die_yield, CostParams};
use chiplet_dse::fixtures;
use chiplet_dse::perfmodel::{candidate_eval, validate_memory_menu, ChipletConfig, Dataflow, GroupSpan, MemoryModule, TechParams};
use chiplet_dse::workload::{operator_footprint, BatchClass, OpKind};
use chiplet_dse::Config;
use proptest::prelude::*;

fn dataflow() -> impl Strategy<Value = Dataflow> {
    prop_oneof![Just(Dataflow::RS), Just(Dataflow::OS), Just(Dataflow::WS)]
}

#[test]
fn fixture_graphs_are_well_formed() {
    for name in fixtures::NAMES {
        let g = fixtures::graph(name).unwrap();
        assert!(!g.is_empty(), "{name}");
        for e in g.edges() {
            assert!(e.src < e.dst, "{name}: edge {}→{} against the stored order", e.src, e.dst);
            assert!(e.bytes > 0, "{name}");
        }
        for n in g.nodes() {
            let attention = matches!(n.kind, OpKind::AttentionScore | OpKind::AttentionContext);
            if attention {
                assert_eq!(n.batch_class(), BatchClass::Agnostic, "{name}: {}", n.id);
            }
        }
    }
}

// Leakage share of the candidate each group would run on when energy is the
// goal. Arbitrary menu points can be far worse: a large chiplet stalled on slow
// memory leaks for the whole stall.
#[test]
fn static_share_stays_under_thirty_percent() {
    let cfg = Config::default();
    let tech = TechParams::default();
    let mut worst: f64 = 0.0;
    for name in fixtures::NAMES {
        let g = fixtures::graph(name).unwrap();
        for i in 0..g.len() {
            let mut best: Option<(f64, f64)> = None;
            for df in [Dataflow::RS, Dataflow::OS, Dataflow::WS] {
                for pe in 1..=4 {
                    for glb in [1, 4, 9, 16] {
                        let chip = ChipletConfig::from_scales(df, pe, glb, &tech).unwrap();
                        for m in &cfg.memories {
                            for &tp in &cfg.search.tp {
                                if let Ok(c) = candidate_eval(&g, GroupSpan::new(i, i + 1), 0, &chip, m, 1, tp, &cfg) {
                                    let e = c.energy_at(c.t_cmp).unwrap();
                                    if best.is_none_or(|(b, _)| e < b) {
                                        best = Some((e, c.static_share()));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            worst = worst.max(best.expect("every group has a feasible candidate").1);
        }
    }
    assert!(worst <= 0.30, "worst static share {worst}");
}

#[test]
fn default_memory_menu_is_ordered() {
    validate_memory_menu(&MemoryModule::default_menu()).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn footprint_intensity_recomputes(fixture in 0usize..12, node in any::<prop::sample::Index>(), batch in 1u64..64) {
        let g = fixtures::graph(fixtures::NAMES[fixture]).unwrap();
        let op = &g.nodes()[node.index(g.len())];
        let s = operator_footprint(op, batch).unwrap();
        let bytes = s.weight_bytes + s.input_bytes + s.output_bytes;
        prop_assert_eq!(s.total_bytes(), bytes);
        prop_assert_eq!(s.arithmetic_intensity(), s.flops as f64 / bytes as f64);
    }

    #[test]
    fn candidates_respect_their_invariants(
        fixture in 0usize..12,
        a in any::<prop::sample::Index>(),
        len in 1usize..4,
        df in dataflow(),
        pe in 1u32..=4,
        glb in prop::sample::select(vec![1u32, 4, 9, 16]),
        mem in 0usize..4,
        batch in prop::sample::select(vec![1u64, 2, 8, 32]),
        tp in 1u32..=2,
    ) {
        let cfg = Config::default();
        let g = fixtures::graph(fixtures::NAMES[fixture]).unwrap();
        let start = a.index(g.len());
        let span = GroupSpan::new(start, (start + len).min(g.len()));
        let chip = ChipletConfig::from_scales(df, pe, glb, &TechParams::default()).unwrap();
        prop_assert!(chip.area > 0.0 && chip.glb_bytes > 0);
        prop_assert!((64..=512).contains(&chip.pe_rows) && (64..=512).contains(&chip.pe_cols));
        let memory = &cfg.memories[mem.min(cfg.memories.len() - 1)];
        match candidate_eval(&g, span, 0, &chip, memory, batch, tp, &cfg) {
            Ok(c) => {
                prop_assert!(c.t_cmp > 0.0 && c.t_cmp.is_finite());
                prop_assert!(c.e_dyn >= 0.0 && c.p_static >= 0.0 && c.dollar_cost > 0.0);
                prop_assert_eq!(c.t_cmp, c.compute_time.max(c.memory_time) / batch as f64);
                prop_assert!(c.energy_at(c.t_cmp).is_some() && c.energy_at(c.t_cmp.next_down()).is_none());
            }
            Err(e) => prop_assert!(e.is_infeasible(), "{}", e),
        }
    }

    #[test]
    fn roofline_tp_and_memory_downgrade(
        fixture in 0usize..12,
        a in any::<prop::sample::Index>(),
        df in dataflow(),
        pe in 1u32..=4,
        batch in prop::sample::select(vec![1u64, 4, 16]),
    ) {
        let cfg = Config::default();
        let g = fixtures::graph(fixtures::NAMES[fixture]).unwrap();
        let i = a.index(g.len());
        let span = GroupSpan::new(i, i + 1);
        let chip = ChipletConfig::from_scales(df, pe, 16, &TechParams::default()).unwrap();
        let eval = |m: &MemoryModule, tp| candidate_eval(&g, span, 0, &chip, m, batch, tp, &cfg);
        let mut menu = cfg.memories.clone();
        menu.sort_by_key(|m| m.kind);
        let Ok(best) = eval(menu.last().unwrap(), 1) else { return Ok(()) };
        let b = batch as f64;
        let fp = chiplet_dse::perfmodel::group_footprint(&g, span, batch).unwrap();
        prop_assert!(best.t_cmp * b >= fp.flops() as f64 / chip.peak_flops() * (1.0 - 1e-12));
        prop_assert!(best.t_cmp * b >= best.traffic_bytes / best.memory.bandwidth * (1.0 - 1e-12));
        prop_assert!(best.t_cmp * b == best.compute_time || best.t_cmp * b == best.memory_time);

        let two = eval(menu.last().unwrap(), 2).unwrap();
        prop_assert!((two.compute_time - best.compute_time / 2.0).abs() <= 1e-9 * best.compute_time);
        prop_assert!(two.e_dyn >= best.e_dyn);

        for cheap in &menu[..menu.len() - 1] {
            let Ok(c) = eval(cheap, 1) else { continue };
            if c.compute_time >= c.memory_time {
                prop_assert_eq!(c.t_cmp, best.t_cmp);
                prop_assert!(c.dollar_cost < best.dollar_cost);
            }
        }
    }

    #[test]
    fn yield_falls_and_cost_rises_with_area(a in 1.0f64..400.0, grow in 1.01f64..2.0) {
        let p = CostParams::default();
        let b = (a * grow).min(p.reticle_limit_mm2);
        prop_assume!(b > a);
        let (ya, yb) = (die_yield(a, &p), die_yield(b, &p));
        prop_assert!(ya <= 1.0 && yb > 0.0 && yb < ya);
        prop_assert!(die_cost(b, &p).unwrap() > die_cost(a, &p).unwrap());
    }
}
