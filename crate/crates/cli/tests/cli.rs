use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chiplet_dse::Config;
use tempfile::TempDir;

const SMALL: &str = "sa max_evals=10 inner_population=4 inner_generations=2\nga population=4 generations=2\nsearch pool_budget=2\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chiplet-dse"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn workspace(manifest: &str) -> TempDir {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("small.cfg"), SMALL).unwrap();
    fs::write(d.path().join("m.txt"), manifest).unwrap();
    d
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn defaults_dump_parses_back() {
    let out = bin().arg("defaults").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(Config::parse(&text).unwrap(), Config::default());
}

#[test]
fn impossible_ttft_names_the_constraint_filter() {
    let d = workspace("config path=small.cfg\nscenario chatbot ttft=1e-6\nseed 3\n");
    let out = run(d.path(), &["--manifest", "m.txt", "dse"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("constraint") && err.contains("TTFT"), "{err}");
}

#[test]
fn dse_bundle_is_identical_across_thread_counts() {
    let d = workspace("config path=small.cfg\nnetwork toy\nnetwork toy_decode\nseed 5\n");
    let a = run(d.path(), &["--manifest", "m.txt", "--threads", "1", "--out", "one", "dse"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(d.path(), &["--manifest", "m.txt", "--threads", "4", "--out", "four", "dse"]);
    assert!(b.status.success());
    let (ta, tb) = (read_tree(&d.path().join("one")), read_tree(&d.path().join("four")));
    assert!(ta.contains_key("metrics.csv") && ta.contains_key("layouts/toy_decode.json"));
    assert_eq!(ta, tb);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn flags_override_the_manifest() {
    let d = workspace("config path=small.cfg\nnetwork toy\nseed 5\nobjective energy\n");
    let out = run(d.path(), &["--manifest", "m.txt", "--seed", "8", "--objective", "edpc", "--cost-mode", "amortized", "--out", "r", "dse"]);
    assert!(out.status.success());
    let m = fs::read_to_string(d.path().join("r/manifest.txt")).unwrap();
    assert!(m.contains("seed 8") && m.contains("objective edpc") && m.contains("cost_mode amortized"), "{m}");
}

#[test]
fn compare_normalizes_to_the_shared_asic() {
    let d = workspace("network toy\nnetwork toy_mobile\nmenu toy\ninner exhaustive\n");
    let out = run(d.path(), &["--manifest", "m.txt", "--out", "cmp", "compare"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.path().join("cmp/comparison.csv")).unwrap();
    let mut asic = 0;
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[1] == "homogeneous-asic-all" {
            assert_eq!(f[6], "1");
            asic += 1;
        }
    }
    assert_eq!(asic, 4 * 3);
    assert!(d.path().join("cmp/pool_gap.csv").exists());
    let bad = run(d.path(), &["--manifest", "m.txt", "compare", "--paradigms", "gpu"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn cost_table_covers_three_volumes() {
    let d = workspace("config path=small.cfg\nnetwork toy\nnetwork toy_mobile\nseed 2\n");
    let out = run(d.path(), &["--manifest", "m.txt", "--out", "c", "cost"]);
    assert!(out.status.success());
    let csv = fs::read_to_string(d.path().join("c/cost.csv")).unwrap();
    assert!(csv.starts_with("seed,network,strategy,volume,die,memory,packaging,nre,total\n"));
    let volumes: std::collections::BTreeSet<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(volumes.len(), 3);
}

#[test]
fn solve_stages_agrees_across_solvers() {
    let d = workspace("");
    let table = "stage,t_cmp,e_dyn,p_static,dollar_cost\n0,1e-3,2,1,10\n0,2e-3,1,0.5,5\n1,1.5e-3,3,2,8\n1,4e-3,0.5,0.1,4\n2,1e-3,1,1,1\n";
    fs::write(d.path().join("s.csv"), table).unwrap();
    let solve = |solver: &str| {
        let o = run(d.path(), &["--objective", "edp", "solve-stages", "s.csv", "--solver", solver]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    let cht = solve("cht");
    assert_eq!(cht.lines().count(), 4);
    assert_eq!(cht, solve("naive"));
    assert_eq!(cht, solve("iso"));
    let o = run(d.path(), &["solve-stages", "s.csv", "--period-limit", "1e-4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("period-limit"));
}

#[test]
fn simulate_and_pnr_dump() {
    let d = workspace("config path=small.cfg\nnetwork toy\npool RS-pe2-glb4 WS-pe1-glb1\n");
    let s = run(d.path(), &["--manifest", "m.txt", "--out", "o", "simulate", "--trace"]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let text = String::from_utf8(s.stdout).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!((row[1] - row[0]).abs() <= 0.01 * row[0]);
    let trace = fs::read_to_string(d.path().join("o/sim/toy_trace.csv")).unwrap();
    assert!(trace.starts_with("seed,time,stage,event\n"), "{trace}");
    assert!(fs::read_to_string(d.path().join("o/manifest.txt")).unwrap().contains("seed "));
    let p = run(d.path(), &["--manifest", "m.txt", "--out", "o", "pnr", "--dump"]);
    assert!(p.status.success());
    let layout: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("o/layouts/toy.json")).unwrap()).unwrap();
    assert!(!layout["rects"].as_array().unwrap().is_empty());
}

#[test]
fn unknown_config_keys_are_errors() {
    let d = workspace("config path=bad.cfg\nnetwork toy\n");
    fs::write(d.path().join("bad.cfg"), "ga populaton=4\n").unwrap();
    let out = run(d.path(), &["--manifest", "m.txt", "dse"]);
    assert_eq!(out.status.code(), Some(1));
}
