use chiplet_dse::compare::{compare_paradigms, CompareParams, Paradigm};
use chiplet_dse::pool::{best_design, ChipletPool, InnerSearch, NetworkTask};
use chiplet_dse::report::{cost_csv, cost_table, ecosystem_size, run_dse_with, NreStrategy, RunManifest, BREAKDOWN_VOLUMES};
use chiplet_dse::report::NetworkSource;
use chiplet_dse::{fixtures, Config, ObjectiveKind};

fn toy_tasks() -> Vec<NetworkTask> {
    fixtures::TOY_SUITE.iter().map(|n| NetworkTask::new(fixtures::graph(n).unwrap())).collect()
}

#[test]
fn paradigms_nest_on_every_metric() {
    let cfg = Config::default();
    let tasks = toy_tasks();
    let menu = fixtures::toy_menu();
    let params = CompareParams {
        menu: menu.clone(),
        budget: tasks.len(),
        inner: InnerSearch::Exhaustive,
        seed: 0,
    };
    let c = compare_paradigms(&tasks, &cfg, &params, &Paradigm::ALL).unwrap();
    for m in ObjectiveKind::ALL {
        let asic = c.get(Paradigm::AsicAll, m).unwrap();
        let nsic = c.get(Paradigm::Nsic, m).unwrap();
        let pool = c.get(Paradigm::Pool, m).unwrap();
        let free = c.get(Paradigm::Unconstrained, m).unwrap();
        assert!(asic.normalized.iter().all(|&v| v == 1.0));
        assert_eq!(asic.aggregate, 1.0);
        for i in 0..tasks.len() {
            assert!(free.objectives[i] <= pool.objectives[i], "{m} network {i}");
            assert!(nsic.objectives[i] <= asic.objectives[i], "{m} network {i}");
            assert!(free.objectives[i] <= nsic.objectives[i], "{m} network {i}");
        }
        assert!(free.aggregate <= pool.aggregate, "{m}");
        assert!(pool.aggregate <= nsic.aggregate, "{m}");
        assert!(nsic.aggregate <= asic.aggregate, "{m}");

        // independent oracle: plain exhaustive fusion search per pool
        let chips = |keys: Vec<_>| ChipletPool::new(keys).unwrap().configs(&cfg).unwrap();
        let full = chips(menu.clone());
        for (i, t) in tasks.iter().enumerate() {
            let d = best_design(t, &full, &cfg, m, &InnerSearch::Exhaustive, 0).unwrap();
            assert_eq!(d.objective, free.objectives[i]);
            let single = menu
                .iter()
                .filter_map(|k| best_design(t, &chips(vec![*k]), &cfg, m, &InnerSearch::Exhaustive, 0).ok())
                .map(|d| d.objective)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(single, nsic.objectives[i]);
        }

        let gap = c.pool_gap(m).unwrap();
        for (i, g) in gap.iter().enumerate() {
            assert_eq!(*g, pool.objectives[i] / free.objectives[i]);
            assert!(*g >= 1.0);
        }
    }
    let csv = c.to_csv();
    assert!(csv.starts_with("paradigm,metric,network,pool,objective,normalized\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 4 * (tasks.len() + 1));
    assert!(c.gap_csv().lines().count() == 1 + 4 * tasks.len());
}

#[test]
fn unrequested_paradigms_are_omitted_but_normalization_kept() {
    let cfg = Config::default();
    let tasks = toy_tasks()[..2].to_vec();
    let params = CompareParams {
        menu: fixtures::toy_menu(),
        budget: 2,
        inner: InnerSearch::Exhaustive,
        seed: 0,
    };
    let c = compare_paradigms(&tasks, &cfg, &params, &[Paradigm::Unconstrained]).unwrap();
    assert!(c.get(Paradigm::Pool, ObjectiveKind::Edp).is_none());
    assert!(c.get(Paradigm::AsicAll, ObjectiveKind::Edp).is_some());
    assert!(c.pool_gap(ObjectiveKind::Edp).is_none());
    for o in &c.outcomes {
        assert!(o.normalized.iter().all(|&v| v <= 1.0));
    }
}

fn small_cfg() -> Config {
    let mut cfg = Config::default();
    cfg.sa.max_evaluations = 12;
    cfg.sa.inner_population = 4;
    cfg.sa.inner_generations = 2;
    cfg.ga.population = 4;
    cfg.ga.generations = 2;
    cfg.search.pool_budget = 3;
    cfg
}

fn toy_manifest() -> RunManifest {
    RunManifest {
        networks: vec![NetworkSource::Fixture("toy".into()), NetworkSource::Fixture("toy_mobile".into())],
        seed: 11,
        ..RunManifest::default()
    }
}

#[test]
fn cost_breakdown_amortizes_only_nre() {
    let cfg = small_cfg();
    let run = run_dse_with(&toy_manifest(), &cfg).unwrap();
    let rows = cost_table(&run, &cfg, &BREAKDOWN_VOLUMES);
    assert_eq!(rows.len(), run.networks.len() * 2 * 3);
    for chunk in rows.chunks(3) {
        for w in chunk.windows(2) {
            let (a, b) = (&w[0].breakdown, &w[1].breakdown);
            assert!(b.volume > a.volume);
            assert!(b.nre < a.nre);
            assert_eq!((a.die, a.memory, a.packaging), (b.die, b.memory, b.packaging));
        }
    }
    for pair in rows.chunks(6) {
        for v in 0..3 {
            let pooled = &pair[v].breakdown;
            let unique = &pair[3 + v].breakdown;
            assert_eq!(pair[v].strategy, NreStrategy::SharedPool);
            assert!(pooled.nre <= unique.nre);
        }
    }
    let designs: Vec<_> = run.networks.iter().map(|n| &n.design).collect();
    assert!(ecosystem_size(&designs, NreStrategy::SharedPool) <= run.pool.len());
    assert!(cost_csv(&rows).starts_with("network,strategy,volume,die,memory,packaging,nre,total\n"));
}

#[test]
fn dse_bundle_is_reproducible_and_complete() {
    let cfg = small_cfg();
    let m = toy_manifest();
    let a = run_dse_with(&m, &cfg).unwrap();
    let b = run_dse_with(&m, &cfg).unwrap();
    let (ba, bb) = (a.bundle(), b.bundle());
    assert_eq!(ba, bb);
    for f in ["manifest.txt", "pool.txt", "metrics.csv", "sa_trace.csv", "report.json", "designs/toy.json", "layouts/toy_mobile.json", "layouts/toy.txt"] {
        assert!(ba.files.contains_key(f), "{f}");
    }
    for (name, text) in &ba.files {
        if name.ends_with(".csv") {
            assert!(text.starts_with("seed,"), "{name}");
            assert!(text.lines().skip(1).all(|l| l.starts_with("11,")), "{name}");
        }
    }
    let report: serde_json::Value = serde_json::from_str(&ba.files["report.json"]).unwrap();
    assert_eq!(report["seed"], 11);
    // reported metrics recompute from the design files
    for n in &a.networks {
        let d: chiplet_dse::AcceleratorDesign = serde_json::from_str(&ba.files[&format!("designs/{}.json", n.network)]).unwrap();
        assert_eq!(d, n.design);
        assert_eq!(d.recompute_objective(), d.objective);
        assert!((n.metrics.energy - d.energy()).abs() <= 1e-12 * d.energy());
    }
}
