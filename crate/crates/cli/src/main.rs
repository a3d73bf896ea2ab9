use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use chiplet_dse::cht::{solve, LatencyConstraint, SolverKind, StageOption};
use chiplet_dse::compare::Paradigm;
use chiplet_dse::pipesim::{analytical_timing, simulate, SimConfig};
use chiplet_dse::pnr::minimize_footprint;
use chiplet_dse::pool::{best_design, ChipletPool, InnerSearch};
use chiplet_dse::report::{
    cost_csv, cost_table, default_initial_pool, run_compare_with, run_dse_with, with_seed_column, Bundle, NetworkSource,
    RunManifest, BREAKDOWN_VOLUMES,
};
use chiplet_dse::scenarios::ScenarioKind;
use chiplet_dse::{AcceleratorDesign, ChipletKey, Config, CostMode, Error, ObjectiveKind};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "chiplet-dse", version, about = "Chiplet-pool and accelerator codesign")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Run manifest; flags below override its entries.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Parameter file (see `defaults`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Fixture name or graph file; repeatable.
    #[arg(long = "network", global = true)]
    networks: Vec<String>,
    #[arg(long, global = true)]
    scenario: Option<ScenarioKind>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    objective: Option<ObjectiveKind>,
    #[arg(long = "cost-mode", global = true)]
    cost_mode: Option<CostMode>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pool annealing, fusion search, stage assignment and place and route.
    Dse,
    /// Compare architectural paradigms.
    Compare {
        /// Comma-separated subset; all four by default.
        #[arg(long, value_delimiter = ',')]
        paradigms: Vec<Paradigm>,
    },
    /// Die / packaging / NRE breakdown at 1M, 2M and 3M units.
    Cost,
    /// Solve a stage table (`stage,t_cmp,e_dyn,p_static,dollar_cost`).
    SolveStages {
        input: PathBuf,
        #[arg(long, default_value = "cht")]
        solver: SolverKind,
        /// Cap on the pipeline period, seconds.
        #[arg(long)]
        period_limit: Option<f64>,
        /// Cap on stages × period, seconds.
        #[arg(long)]
        latency_limit: Option<f64>,
    },
    /// Simulate the designs built on a pool.
    Simulate {
        /// Pool members, e.g. `WS-pe2-glb4`.
        #[arg(long, value_delimiter = ',')]
        pool: Vec<ChipletKey>,
        #[arg(long, default_value_t = 16)]
        inputs: usize,
        /// Put every stage on one memory bus.
        #[arg(long)]
        shared: bool,
        #[arg(long)]
        trace: bool,
    },
    /// Place and route the designs built on a pool.
    Pnr {
        #[arg(long, value_delimiter = ',')]
        pool: Vec<ChipletKey>,
        /// Write JSON and text layouts under the output directory.
        #[arg(long)]
        dump: bool,
    },
    /// Print the default parameter file.
    Defaults,
}

fn manifest(g: &Global) -> anyhow::Result<RunManifest> {
    let mut m = match &g.manifest {
        Some(p) => RunManifest::load(p).with_context(|| format!("reading manifest {}", p.display()))?,
        None => RunManifest::default(),
    };
    if let Some(c) = &g.config {
        m.config = Some(c.clone());
    }
    for n in &g.networks {
        let src = if Path::new(n).exists() {
            NetworkSource::File(PathBuf::from(n))
        } else {
            NetworkSource::Fixture(n.clone())
        };
        m.networks.push(src);
    }
    if g.scenario.is_some() {
        m.scenario = g.scenario;
    }
    if let Some(s) = g.seed {
        m.seed = s;
    }
    if let Some(o) = g.objective {
        m.objective = o;
    }
    if let Some(c) = g.cost_mode {
        m.cost_mode = c;
    }
    if let Some(o) = &g.out {
        m.out = Some(o.clone());
    }
    Ok(m)
}

fn out_dir(m: &RunManifest) -> PathBuf {
    m.out.clone().unwrap_or_else(|| PathBuf::from("results"))
}

fn write_bundle(b: &Bundle, m: &RunManifest) -> anyhow::Result<()> {
    let dir = out_dir(m);
    let mut b = b.clone();
    // the manifest carries the seed and everything else needed to rerun
    b.files.entry("manifest.txt".into()).or_insert_with(|| m.to_text());
    b.write_to(&dir).with_context(|| format!("writing {}", dir.display()))?;
    eprintln!("wrote {} files to {}", b.files.len(), dir.display());
    Ok(())
}

/// Full-budget fusion search per network on a fixed pool.
fn designs_on_pool(m: &RunManifest, cfg: &Config, pool: &[ChipletKey]) -> anyhow::Result<Vec<AcceleratorDesign>> {
    let pool = if pool.is_empty() {
        match &m.pool {
            Some(p) => ChipletPool::new(p.clone())?,
            None => default_initial_pool(cfg)?,
        }
    } else {
        ChipletPool::new(pool.to_vec())?
    };
    let chips = pool.configs(cfg)?;
    let inner = InnerSearch::Ga(cfg.ga.clone());
    let mut out = Vec::new();
    for (i, t) in m.tasks()?.iter().enumerate() {
        out.push(best_design(t, &chips, cfg, m.objective, &inner, m.seed.wrapping_add(i as u64))?);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct StageRow {
    stage: usize,
    t_cmp: f64,
    e_dyn: f64,
    p_static: f64,
    dollar_cost: f64,
}

fn solve_stages(
    input: &Path,
    solver: SolverKind,
    objective: ObjectiveKind,
    period_limit: Option<f64>,
    latency_limit: Option<f64>,
    cfg: &Config,
) -> anyhow::Result<String> {
    let mut reader = csv::Reader::from_path(input).with_context(|| format!("reading {}", input.display()))?;
    let mut stages: Vec<Vec<StageOption>> = Vec::new();
    for row in reader.deserialize() {
        let r: StageRow = row?;
        if r.stage >= stages.len() {
            stages.resize(r.stage + 1, Vec::new());
        }
        stages[r.stage].push(StageOption {
            t_cmp: r.t_cmp,
            e_dyn: r.e_dyn,
            p_static: r.p_static,
            dollar_cost: r.dollar_cost,
        });
    }
    let mut constraints = Vec::new();
    if let Some(l) = period_limit {
        constraints.push(LatencyConstraint::period("period-limit", l));
    }
    if let Some(l) = latency_limit {
        constraints.push(LatencyConstraint::end_to_end("latency-limit", l));
    }
    let sol = solve(solver, &stages, objective, &constraints, cfg.search.naive_guard)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stage", "choice", "t_cmp", "e_dyn", "p_static", "dollar_cost", "period", "objective"])?;
    for (s, &c) in sol.choice.iter().enumerate() {
        let o = &stages[s][c];
        w.serialize((s, c, o.t_cmp, o.e_dyn, o.p_static, o.dollar_cost, sol.period, sol.objective))?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let m = manifest(&cli.global)?;
    match cli.cmd {
        Cmd::Defaults => print!("{}", Config::default().dump()),
        Cmd::Dse => {
            let cfg = m.load_config()?;
            let r = run_dse_with(&m, &cfg)?;
            print!("{}", r.metrics_csv());
            write_bundle(&r.bundle(), &m)?;
            if let Some(v) = &r.verdict {
                if v.violations() > 0 {
                    bail!(Error::ConstraintFilter(format!("{} scenario check(s) failed", v.violations())));
                }
            }
        }
        Cmd::Compare { paradigms } => {
            let cfg = m.load_config()?;
            let paradigms = if paradigms.is_empty() { Paradigm::ALL.to_vec() } else { paradigms };
            let (c, b) = run_compare_with(&m, &cfg, &paradigms)?;
            print!("{}", c.to_csv());
            write_bundle(&b, &m)?;
        }
        Cmd::Cost => {
            let cfg = m.load_config()?;
            let r = run_dse_with(&m, &cfg)?;
            let table = cost_csv(&cost_table(&r, &cfg, &BREAKDOWN_VOLUMES));
            print!("{table}");
            let mut b = r.bundle();
            b.insert("cost.csv", with_seed_column(&table, m.seed));
            write_bundle(&b, &m)?;
        }
        Cmd::SolveStages {
            input,
            solver,
            period_limit,
            latency_limit,
        } => {
            let cfg = m.load_config()?;
            let csv = solve_stages(&input, solver, m.objective, period_limit, latency_limit, &cfg)?;
            print!("{csv}");
            if m.out.is_some() {
                let mut b = Bundle::default();
                b.insert("solution.csv", with_seed_column(&csv, m.seed));
                write_bundle(&b, &m)?;
            }
        }
        Cmd::Simulate {
            pool,
            inputs,
            shared,
            trace,
        } => {
            let cfg = m.load_config()?;
            let mut b = Bundle::default();
            println!("network,analytical_period,simulated_period,analytical_latency,first_output_latency,energy");
            for d in designs_on_pool(&m, &cfg, &pool)? {
                let mut sc = if shared {
                    SimConfig::shared(&d, inputs, cfg.sim.tile_bytes)
                } else {
                    SimConfig::private(&d, inputs, cfg.sim.tile_bytes)
                };
                sc.trace = trace;
                let r = simulate(&d, &sc)?;
                let (period, latency) = analytical_timing(&d);
                println!("{},{period},{},{latency},{},{}", d.network, r.period, r.first_output_latency, r.energy);
                if trace {
                    b.insert(format!("sim/{}_trace.csv", d.network), with_seed_column(&r.trace_csv(), m.seed));
                }
                b.insert(format!("sim/{}.json", d.network), serde_json::to_string_pretty(&SimSummary::from(&r))? + "\n");
            }
            if m.out.is_some() {
                write_bundle(&b, &m)?;
            }
        }
        Cmd::Pnr { pool, dump } => {
            let cfg = m.load_config()?;
            let mut b = Bundle::default();
            println!("network,side,interposer_mm2,routes");
            for d in designs_on_pool(&m, &cfg, &pool)? {
                let p = minimize_footprint(&d, &cfg.pnr)?;
                println!("{},{},{},{}", d.network, p.width, p.area_mm2(), p.routes.len());
                b.insert(format!("layouts/{}.json", d.network), p.to_json());
                b.insert(format!("layouts/{}.txt", d.network), p.to_text());
            }
            if dump {
                write_bundle(&b, &m)?;
            }
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct SimSummary<'a> {
    period: f64,
    first_output_latency: f64,
    total_time: f64,
    energy: f64,
    stages: &'a [chiplet_dse::pipesim::StageStats],
}

impl<'a> From<&'a chiplet_dse::pipesim::SimReport> for SimSummary<'a> {
    fn from(r: &'a chiplet_dse::pipesim::SimReport) -> Self {
        SimSummary {
            period: r.period,
            first_output_latency: r.first_output_latency,
            total_time: r.total_time,
            energy: r.energy,
            stages: &r.stages,
        }
    }
}

fn main() -> ExitCode {
    // usage errors exit 1; 2 is reserved for infeasible runs
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(err) if err.is_infeasible() => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
