//! Run manifests, end-to-end runs and deterministic result bundles.
//!
//! A bundle is a map from relative path to file contents. Every number in it
//! is produced from the manifest alone, so two runs of one manifest give
//! byte-identical bundles whatever the thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::cht::{AcceleratorDesign, LatencyConstraint, LatencyKind, ObjectiveKind};
use crate::compare::{compare_paradigms, CompareParams, Comparison, Paradigm};
use crate::config::{Config, GaParams};
use crate::costmodel::{cost_breakdown, metrics, CostBreakdown, CostContext, CostMode, DelayMode, MetricSet};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::perfmodel::ChipletKey;
use crate::pnr::{minimize_footprint, Placement};
use crate::pool::{best_design, sa_search, space_menu, ChipletPool, InnerSearch, NetworkTask, SaResult};
use crate::records::parse_records;
use crate::scenarios::{build_scenario, check_constraints, ScenarioKind, ScenarioParams, Verdict};
use crate::workload::{load_network, OperatorGraph};

/// Production volumes of the cost breakdown table.
pub const BREAKDOWN_VOLUMES: [f64; 3] = [1e6, 2e6, 3e6];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum NetworkSource {
    Fixture(String),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InnerKind {
    Ga,
    Exhaustive,
}

/// Everything a run depends on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config: Option<PathBuf>,
    pub networks: Vec<NetworkSource>,
    pub objective: ObjectiveKind,
    pub scenario: Option<ScenarioKind>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub cost_mode: CostMode,
    /// Starting pool for annealing; evenly spread over the space if absent.
    pub pool: Option<Vec<ChipletKey>>,
    /// Chiplet menu for paradigm comparison; the whole space if absent.
    pub menu: Option<Vec<ChipletKey>>,
    pub inner: InnerKind,
    pub scenario_params: ScenarioParams,
    /// Latency caps attached to listed networks by name.
    pub constraints: Vec<(String, LatencyConstraint)>,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            config: None,
            networks: Vec::new(),
            objective: ObjectiveKind::Edp,
            scenario: None,
            seed: 0,
            out: None,
            cost_mode: CostMode::ReOnly,
            pool: None,
            menu: None,
            inner: InnerKind::Ga,
            scenario_params: ScenarioParams::default(),
            constraints: Vec::new(),
        }
    }
}

fn chiplets(rec: &crate::records::Record) -> Result<Vec<ChipletKey>> {
    if rec.positional.is_empty() {
        return Err(Error::parse(rec.line, format!("`{}` needs chiplets", rec.keyword)));
    }
    rec.positional.iter().map(|s| s.parse()).collect()
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        RunManifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses a manifest; relative paths resolve against `base`.
    ///
    /// ```text
    /// config path=params.cfg
    /// network resnet50
    /// network path=my.graph
    /// objective edp
    /// scenario chatbot
    /// seed 7
    /// cost_mode amortized
    /// pool RS-pe4-glb16 WS-pe1-glb1
    /// menu toy
    /// inner exhaustive
    /// out results
    /// ```
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut m = RunManifest::default();
        let one = |rec: &crate::records::Record| -> Result<String> {
            rec.expect_positional(1)?;
            Ok(rec.positional[0].clone())
        };
        for mut rec in parse_records(text)? {
            match rec.keyword.as_str() {
                "config" => {
                    rec.expect_positional(0)?;
                    m.config = Some(base.join(rec.require::<String>("path")?));
                }
                "network" => {
                    if let Some(p) = rec.take::<String>("path")? {
                        rec.expect_positional(0)?;
                        m.networks.push(NetworkSource::File(base.join(p)));
                    } else {
                        m.networks.push(NetworkSource::Fixture(one(&rec)?));
                    }
                }
                "objective" => m.objective = one(&rec)?.parse()?,
                "scenario" => {
                    m.scenario = Some(one(&rec)?.parse()?);
                    let p = &mut m.scenario_params;
                    p.ttft = rec.take("ttft")?;
                    p.tpot = rec.take("tpot")?;
                    if let Some(d) = rec.take("deadline")? {
                        p.av_deadline = d;
                    }
                    if let Some(b) = rec.take("backbone")? {
                        p.av_backbone = b;
                    }
                }
                "constraint" => {
                    rec.expect_positional(0)?;
                    let network: String = rec.require("network")?;
                    let name: String = rec.require("name")?;
                    let limit: f64 = rec.require("limit")?;
                    let c = match rec.require::<String>("kind")?.as_str() {
                        "period" => LatencyConstraint::period(name, limit),
                        "e2e" => LatencyConstraint::end_to_end(name, limit),
                        other => return Err(Error::unknown("constraint kind", other)),
                    };
                    if !(limit > 0.0) {
                        return Err(Error::parse(rec.line, "constraint limit must be positive"));
                    }
                    m.constraints.push((network, c));
                }
                "seed" => {
                    let v = one(&rec)?;
                    m.seed = v.parse().map_err(|_| Error::parse(rec.line, format!("invalid seed `{v}`")))?;
                }
                "cost_mode" => m.cost_mode = one(&rec)?.parse()?,
                "pool" => m.pool = Some(chiplets(&rec)?),
                "menu" => {
                    m.menu = Some(if rec.positional.len() == 1 && rec.positional[0] == "toy" {
                        fixtures::toy_menu()
                    } else {
                        chiplets(&rec)?
                    })
                }
                "inner" => {
                    m.inner = match one(&rec)?.as_str() {
                        "ga" => InnerKind::Ga,
                        "exhaustive" => InnerKind::Exhaustive,
                        other => return Err(Error::unknown("inner search", other)),
                    }
                }
                "out" => m.out = Some(base.join(one(&rec)?)),
                other => return Err(Error::parse(rec.line, format!("unknown manifest keyword `{other}`"))),
            }
            rec.finish()?;
        }
        Ok(m)
    }

    /// Canonical text form; echoed into every bundle.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(c) = &self.config {
            let _ = writeln!(s, "config path={}", c.display());
        }
        for n in &self.networks {
            match n {
                NetworkSource::Fixture(f) => {
                    let _ = writeln!(s, "network {f}");
                }
                NetworkSource::File(p) => {
                    let _ = writeln!(s, "network path={}", p.display());
                }
            }
        }
        let _ = writeln!(s, "objective {}", self.objective);
        if let Some(k) = self.scenario {
            let p = &self.scenario_params;
            let _ = write!(s, "scenario {k} deadline={} backbone={}", p.av_deadline, p.av_backbone);
            if let Some(v) = p.ttft {
                let _ = write!(s, " ttft={v}");
            }
            if let Some(v) = p.tpot {
                let _ = write!(s, " tpot={v}");
            }
            s.push('\n');
        }
        for (n, c) in &self.constraints {
            let kind = match c.kind {
                LatencyKind::Period => "period",
                LatencyKind::EndToEnd { .. } => "e2e",
            };
            let _ = writeln!(s, "constraint network={n} name={} kind={kind} limit={}", c.name, c.limit);
        }
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(
            s,
            "cost_mode {}",
            match self.cost_mode {
                CostMode::ReOnly => "re",
                CostMode::Amortized => "amortized",
            }
        );
        let join = |v: &[ChipletKey]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        if let Some(p) = &self.pool {
            let _ = writeln!(s, "pool {}", join(p));
        }
        if let Some(p) = &self.menu {
            let _ = writeln!(s, "menu {}", join(p));
        }
        let _ = writeln!(
            s,
            "inner {}",
            match self.inner {
                InnerKind::Ga => "ga",
                InnerKind::Exhaustive => "exhaustive",
            }
        );
        s
    }

    pub fn load_config(&self) -> Result<Config> {
        let cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Listed networks (unconstrained) followed by the scenario's networks.
    pub fn tasks(&self) -> Result<Vec<NetworkTask>> {
        let mut tasks = Vec::new();
        for n in &self.networks {
            let g: OperatorGraph = match n {
                NetworkSource::Fixture(f) => fixtures::graph(f)?,
                NetworkSource::File(p) => load_network(p)?,
            };
            tasks.push(NetworkTask::new(g));
        }
        if let Some(kind) = self.scenario {
            tasks.extend(build_scenario(kind, &self.scenario_params)?.tasks());
        }
        for (n, c) in &self.constraints {
            let t = tasks
                .iter_mut()
                .find(|t| &t.graph.name == n)
                .ok_or_else(|| Error::unknown("constrained network", n.clone()))?;
            t.constraints.push(c.clone());
        }
        if tasks.is_empty() {
            return Err(Error::Validation("manifest names no network or scenario".into()));
        }
        let mut names = BTreeSet::new();
        for t in &tasks {
            if !names.insert(t.graph.name.clone()) {
                return Err(Error::Validation(format!("network `{}` listed twice", t.graph.name)));
            }
        }
        Ok(tasks)
    }

    pub fn inner_search(&self) -> Option<InnerSearch> {
        match self.inner {
            InnerKind::Ga => None,
            InnerKind::Exhaustive => Some(InnerSearch::Exhaustive),
        }
    }
}

/// `k` members spread evenly over the chiplet space.
pub fn default_initial_pool(cfg: &Config) -> Result<ChipletPool> {
    let menu = space_menu(&cfg.space);
    let k = cfg.search.pool_budget.clamp(1, menu.len());
    ChipletPool::new((0..k).map(|i| menu[i * menu.len() / k]).collect())
}

/// Relative path to contents, written in path order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bundle {
    pub files: BTreeMap<String, String>,
}

impl Bundle {
    pub fn insert(&mut self, path: impl Into<String>, contents: impl Into<String>) {
        self.files.insert(path.into(), contents.into());
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (rel, contents) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, contents)?;
        }
        Ok(())
    }
}

/// Prepends a `seed` column to a CSV document.
pub fn with_seed_column(csv: &str, seed: u64) -> String {
    let mut out = String::with_capacity(csv.len() + 16 * csv.lines().count());
    for (i, line) in csv.lines().enumerate() {
        if i == 0 {
            let _ = writeln!(out, "seed,{line}");
        } else {
            let _ = writeln!(out, "{seed},{line}");
        }
    }
    out
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn file_name(network: &str) -> String {
    network
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct NetworkResult {
    pub network: String,
    pub design: AcceleratorDesign,
    pub placement: Placement,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone)]
pub struct DseRun {
    pub manifest: RunManifest,
    pub pool: ChipletPool,
    pub score: f64,
    pub networks: Vec<NetworkResult>,
    pub annealing: SaResult,
    pub verdict: Option<Verdict>,
}

/// Names why network `i` has no design on the final pool.
fn diagnose(task: &NetworkTask, pool: &ChipletPool, cfg: &Config, objective: ObjectiveKind, seed: u64) -> Error {
    let chips = match pool.configs(cfg) {
        Ok(c) => c,
        Err(e) => return e,
    };
    let inner = InnerSearch::Ga(cfg.ga.clone());
    match best_design(task, &chips, cfg, objective, &inner, seed) {
        Err(Error::ConstraintFilter(names)) => Error::ConstraintFilter(format!("{names} (network `{}`, pool {pool})", task.graph.name)),
        Err(e) if e.is_infeasible() => {
            let free = NetworkTask { constraints: Vec::new(), ..task.clone() };
            if !task.constraints.is_empty() && best_design(&free, &chips, cfg, objective, &inner, seed).is_ok() {
                let names: Vec<&str> = task.constraints.iter().map(|c| c.name.as_str()).collect();
                Error::ConstraintFilter(format!("{} (network `{}`, pool {pool})", names.join(", "), task.graph.name))
            } else {
                Error::Infeasible(format!("fusion search: network `{}` has no design on pool {pool}: {e}", task.graph.name))
            }
        }
        Err(e) => e,
        Ok(_) => Error::Infeasible(format!(
            "pool search: network `{}` has no design on pool {pool} within the annealing budget",
            task.graph.name
        )),
    }
}

/// Pool annealing, fusion search, stage assignment and place and route.
pub fn run_dse(manifest: &RunManifest) -> Result<DseRun> {
    run_dse_with(manifest, &manifest.load_config()?)
}

/// As [`run_dse`] with an already loaded config.
pub fn run_dse_with(manifest: &RunManifest, cfg: &Config) -> Result<DseRun> {
    let tasks = manifest.tasks()?;
    let initial = match &manifest.pool {
        Some(p) => ChipletPool::new(p.clone())?,
        None => default_initial_pool(cfg)?,
    };
    let sa = sa_search(&initial, &tasks, manifest.objective, cfg, &cfg.sa, manifest.inner_search(), manifest.seed)?;
    let pool = sa.best.pool.clone();
    let ecosystem: BTreeSet<ChipletKey> = pool.members().iter().copied().collect();
    let mut networks = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let Some(design) = sa.best.designs[i].clone() else {
            return Err(diagnose(task, &pool, cfg, manifest.objective, manifest.seed));
        };
        let placement = minimize_footprint(&design, &cfg.pnr).map_err(|e| match e {
            Error::Infeasible(m) => Error::Infeasible(format!("place and route: network `{}`: {m}", task.graph.name)),
            e => e,
        })?;
        let ctx = CostContext {
            params: &cfg.cost,
            interposer_area: placement.area_mm2(),
            ecosystem: &ecosystem,
        };
        let m = metrics(&design, DelayMode::Period, manifest.cost_mode, &ctx)?;
        networks.push(NetworkResult {
            network: task.graph.name.clone(),
            design,
            placement,
            metrics: m,
        });
    }
    let verdict = match manifest.scenario {
        Some(kind) => {
            let scenario = build_scenario(kind, &manifest.scenario_params)?;
            let designs: Vec<AcceleratorDesign> = networks.iter().map(|n| n.design.clone()).collect();
            Some(check_constraints(&designs, &scenario))
        }
        None => None,
    };
    Ok(DseRun {
        manifest: manifest.clone(),
        pool,
        score: sa.best.score,
        networks,
        annealing: sa,
        verdict,
    })
}

#[derive(Serialize)]
struct DseReport<'a> {
    seed: u64,
    objective: ObjectiveKind,
    cost_mode: CostMode,
    /// Dollar cost includes memory modules and the interposer package.
    cost_includes: &'static str,
    pool: String,
    score: f64,
    evaluations: usize,
    networks: Vec<NetworkSummary<'a>>,
    verdict: Option<&'a Verdict>,
}

#[derive(Serialize)]
struct NetworkSummary<'a> {
    network: &'a str,
    stages: usize,
    period: f64,
    objective: f64,
    interposer_mm2: f64,
    metrics: &'a MetricSet,
}

pub const METRICS_HEADER: &str = "network,stages,period,energy,delay,dollar_cost,ec,edp,edpc,objective,interposer_mm2";

impl DseRun {
    pub fn metrics_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for n in &self.networks {
            let m = &n.metrics;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                n.network,
                n.design.stages.len(),
                n.design.period,
                m.energy,
                m.delay,
                m.dollar_cost,
                m.ec(),
                m.edp(),
                m.edpc(),
                n.design.objective,
                n.placement.area_mm2()
            );
        }
        s
    }

    pub fn bundle(&self) -> Bundle {
        let seed = self.manifest.seed;
        let mut b = Bundle::default();
        b.insert("manifest.txt", self.manifest.to_text());
        b.insert("pool.txt", format!("seed {seed}\npool {}\nscore {}\n", self.pool, self.score));
        b.insert("metrics.csv", with_seed_column(&self.metrics_csv(), seed));
        b.insert("sa_trace.csv", with_seed_column(&self.annealing.trace_csv(), seed));
        for n in &self.networks {
            let f = file_name(&n.network);
            b.insert(format!("designs/{f}.json"), json(&n.design));
            b.insert(format!("layouts/{f}.json"), n.placement.to_json());
            b.insert(format!("layouts/{f}.txt"), n.placement.to_text());
        }
        let report = DseReport {
            seed,
            objective: self.manifest.objective,
            cost_mode: self.manifest.cost_mode,
            cost_includes: "dies,memory,package",
            pool: self.pool.to_string(),
            score: self.score,
            evaluations: self.annealing.evaluations,
            networks: self
                .networks
                .iter()
                .map(|n| NetworkSummary {
                    network: &n.network,
                    stages: n.design.stages.len(),
                    period: n.design.period,
                    objective: n.design.objective,
                    interposer_mm2: n.placement.area_mm2(),
                    metrics: &n.metrics,
                })
                .collect(),
            verdict: self.verdict.as_ref(),
        };
        b.insert("report.json", json(&report));
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NreStrategy {
    /// NRE charged once per chiplet of the shared pool.
    SharedPool,
    /// Every network tapes out its own chiplets.
    PerNetwork,
}

impl NreStrategy {
    pub fn name(self) -> &'static str {
        match self {
            NreStrategy::SharedPool => "pool",
            NreStrategy::PerNetwork => "per-network",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CostRow {
    pub network: String,
    pub strategy: NreStrategy,
    pub breakdown: CostBreakdown,
}

/// Chiplet designs to pay for: the union of chiplets the designs use when
/// shared, one set per network otherwise.
pub fn ecosystem_size(designs: &[&AcceleratorDesign], strategy: NreStrategy) -> usize {
    let used = |d: &AcceleratorDesign| d.stages.iter().map(|s| s.chiplet.key).collect::<BTreeSet<_>>();
    match strategy {
        NreStrategy::SharedPool => designs.iter().flat_map(|d| used(d)).collect::<BTreeSet<_>>().len(),
        NreStrategy::PerNetwork => designs.iter().map(|d| used(d).len()).sum(),
    }
}

/// Die / memory / packaging / NRE rows per network, strategy and volume.
pub fn cost_table(run: &DseRun, cfg: &Config, volumes: &[f64]) -> Vec<CostRow> {
    let designs: Vec<&AcceleratorDesign> = run.networks.iter().map(|n| &n.design).collect();
    let mut rows = Vec::new();
    for n in &run.networks {
        for strategy in [NreStrategy::SharedPool, NreStrategy::PerNetwork] {
            let eco = ecosystem_size(&designs, strategy);
            for &v in volumes {
                rows.push(CostRow {
                    network: n.network.clone(),
                    strategy,
                    breakdown: cost_breakdown(&n.design, n.placement.area_mm2(), eco, v, &cfg.cost),
                });
            }
        }
    }
    rows
}

pub fn cost_csv(rows: &[CostRow]) -> String {
    let mut s = String::from("network,strategy,volume,die,memory,packaging,nre,total\n");
    for r in rows {
        let b = &r.breakdown;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.network,
            r.strategy.name(),
            b.volume,
            b.die,
            b.memory,
            b.packaging,
            b.nre,
            b.total()
        );
    }
    s
}

/// Paradigm comparison over the manifest's networks.
pub fn run_compare(manifest: &RunManifest, paradigms: &[Paradigm]) -> Result<(Comparison, Bundle)> {
    run_compare_with(manifest, &manifest.load_config()?, paradigms)
}

pub fn run_compare_with(manifest: &RunManifest, cfg: &Config, paradigms: &[Paradigm]) -> Result<(Comparison, Bundle)> {
    let tasks = manifest.tasks()?;
    let inner = match manifest.inner {
        InnerKind::Exhaustive => InnerSearch::Exhaustive,
        InnerKind::Ga => InnerSearch::Ga(GaParams {
            population: cfg.sa.inner_population,
            generations: cfg.sa.inner_generations,
            ..cfg.ga.clone()
        }),
    };
    let params = CompareParams {
        menu: manifest.menu.clone().unwrap_or_else(|| space_menu(&cfg.space)),
        budget: cfg.search.pool_budget,
        inner,
        seed: manifest.seed,
    };
    let c = compare_paradigms(&tasks, cfg, &params, paradigms)?;
    let seed = manifest.seed;
    let mut b = Bundle::default();
    b.insert("manifest.txt", manifest.to_text());
    b.insert("comparison.csv", with_seed_column(&c.to_csv(), seed));
    b.insert("pool_gap.csv", with_seed_column(&c.gap_csv(), seed));
    b.insert("comparison.json", json(&(seed, &c)));
    Ok((c, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let text = "network toy\nnetwork path=x.graph\nconstraint network=toy name=TTFT kind=e2e limit=0.5\nobjective edpc\nscenario chatbot ttft=1e-6\nseed 9\ncost_mode amortized\npool RS-pe1-glb1 WS-pe2-glb4\ninner exhaustive\n";
        let m = RunManifest::parse(text, Path::new("/base")).unwrap();
        assert_eq!(m.networks[1], NetworkSource::File(PathBuf::from("/base/x.graph")));
        assert_eq!(m.objective, ObjectiveKind::Edpc);
        assert_eq!(m.seed, 9);
        assert_eq!(m.pool.as_ref().unwrap().len(), 2);
        let again = RunManifest::parse(&m.to_text(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn unknown_manifest_keys_are_errors() {
        assert!(RunManifest::parse("seed 1 extra=2\n", Path::new(".")).is_err());
        assert!(RunManifest::parse("colour blue\n", Path::new(".")).is_err());
        assert!(RunManifest::parse("pool RS-pe9\n", Path::new(".")).is_err());
    }

    #[test]
    fn seed_column() {
        assert_eq!(with_seed_column("a,b\n1,2\n", 5), "seed,a,b\n5,1,2\n");
    }
}
