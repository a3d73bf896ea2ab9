//! Chiplet-pool search: simulated annealing over pool compositions, each pool
//! scored by the best designs its members can build for every target network.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cht::{AcceleratorDesign, LatencyConstraint, ObjectiveKind};
use crate::config::{Aggregation, ChipletSpace, Config, GaParams, SaParams};
use crate::error::{Error, Result};
use crate::fusion::{exhaustive_fusion_search, ga_search, genome_stages, solve_plan, CandidateCache, FusionGenome, SearchContext};
use crate::perfmodel::{ChipletConfig, ChipletKey};
use crate::workload::OperatorGraph;

/// A set of distinct chiplet designs, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ChipletPool {
    members: Vec<ChipletKey>,
}

impl ChipletPool {
    pub fn new(mut members: Vec<ChipletKey>) -> Result<Self> {
        members.sort();
        members.dedup();
        if members.is_empty() {
            return Err(Error::Validation("chiplet pool is empty".into()));
        }
        Ok(ChipletPool { members })
    }

    pub fn members(&self) -> &[ChipletKey] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, key: &ChipletKey) -> bool {
        self.members.binary_search(key).is_ok()
    }

    pub fn configs(&self, cfg: &Config) -> Result<Vec<ChipletConfig>> {
        self.members.iter().map(|k| ChipletConfig::from_key(*k, &cfg.tech)).collect()
    }
}

impl fmt::Display for ChipletPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.members.iter().map(ToString::to_string).collect();
        f.write_str(&names.join("+"))
    }
}

/// Every design point of a chiplet space, in key order.
pub fn space_menu(space: &ChipletSpace) -> Vec<ChipletKey> {
    let mut out = Vec::with_capacity(space.size());
    for &dataflow in &space.dataflows {
        for &pe_scale in &space.pe_scales {
            for &glb_scale in &space.glb_scales {
                out.push(ChipletKey {
                    dataflow,
                    pe_scale,
                    glb_scale,
                });
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMove {
    Dataflow,
    PeScale,
    GlbScale,
}

const NEIGHBOR_RETRIES: usize = 16;

fn step_in_menu(menu: &[u32], current: u32, rng: &mut ChaCha8Rng) -> Option<u32> {
    if menu.len() < 2 {
        return None;
    }
    let i = menu.iter().position(|&v| v == current)?;
    let up = rng.gen_bool(0.5);
    // reflect at the menu ends
    let j = match (up, i) {
        (true, i) if i + 1 < menu.len() => i + 1,
        (true, i) => i - 1,
        (false, 0) => 1,
        (false, i) => i - 1,
    };
    Some(menu[j])
}

/// Applies one move to one member; `None` if the move is a no-op or would
/// duplicate another member.
pub fn apply_move(
    pool: &ChipletPool,
    member: usize,
    mv: PoolMove,
    space: &ChipletSpace,
    rng: &mut ChaCha8Rng,
) -> Option<ChipletPool> {
    let old = pool.members[member];
    let mut key = old;
    match mv {
        PoolMove::Dataflow => {
            let others: Vec<_> = space.dataflows.iter().copied().filter(|&d| d != old.dataflow).collect();
            key.dataflow = *others.choose(rng)?;
        }
        PoolMove::PeScale => key.pe_scale = step_in_menu(&space.pe_scales, old.pe_scale, rng)?,
        PoolMove::GlbScale => key.glb_scale = step_in_menu(&space.glb_scales, old.glb_scale, rng)?,
    }
    if key == old || pool.contains(&key) {
        return None;
    }
    let mut members = pool.members.clone();
    members[member] = key;
    ChipletPool::new(members).ok()
}

/// One member changed by one move; retries a bounded number of times and
/// returns the input when every attempt is a no-op.
pub fn neighbor_pool(pool: &ChipletPool, space: &ChipletSpace, rng: &mut ChaCha8Rng) -> ChipletPool {
    const MOVES: [PoolMove; 3] = [PoolMove::Dataflow, PoolMove::PeScale, PoolMove::GlbScale];
    for _ in 0..NEIGHBOR_RETRIES {
        let member = rng.gen_range(0..pool.len());
        let mv = MOVES[rng.gen_range(0..MOVES.len())];
        if let Some(p) = apply_move(pool, member, mv, space, rng) {
            return p;
        }
    }
    pool.clone()
}

/// A target network and its deployment constraints.
#[derive(Debug, Clone)]
pub struct NetworkTask {
    pub graph: OperatorGraph,
    pub constraints: Vec<LatencyConstraint>,
    /// Overrides the configured batch menu.
    pub batches: Option<Vec<u64>>,
}

impl NetworkTask {
    pub fn new(graph: OperatorGraph) -> Self {
        NetworkTask {
            graph,
            constraints: Vec::new(),
            batches: None,
        }
    }

    pub fn with_constraints(mut self, constraints: Vec<LatencyConstraint>) -> Self {
        self.constraints = constraints;
        self
    }

    pub fn with_batches(mut self, batches: Vec<u64>) -> Self {
        self.batches = Some(batches);
        self
    }

    pub fn config(&self, cfg: &Config) -> Config {
        let mut c = cfg.clone();
        if let Some(b) = &self.batches {
            c.search.batches = b.clone();
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InnerSearch {
    Ga(GaParams),
    /// Every cut set with free memory/batch menus.
    Exhaustive,
}

/// Per-network seed so that scores do not depend on evaluation order.
fn network_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Best design for one network on one pool.
pub fn best_design(
    task: &NetworkTask,
    pool: &[ChipletConfig],
    cfg: &Config,
    objective: ObjectiveKind,
    inner: &InnerSearch,
    seed: u64,
) -> Result<AcceleratorDesign> {
    let cfg = task.config(cfg);
    let ctx = SearchContext {
        graph: &task.graph,
        pool,
        cfg: &cfg,
        objective,
        constraints: &task.constraints,
    };
    match inner {
        InnerSearch::Ga(p) => Ok(ga_search(&ctx, p, seed)?.design),
        InnerSearch::Exhaustive => Ok(exhaustive_fusion_search(&ctx, &CandidateCache::new())?.1),
    }
}

/// Objective of the unfused plan on `pool`, used to normalize scores; 1.0
/// when that plan is infeasible.
pub fn reference_objectives(tasks: &[NetworkTask], pool: &ChipletPool, cfg: &Config, objective: ObjectiveKind) -> Result<Vec<f64>> {
    let chips = pool.configs(cfg)?;
    tasks
        .iter()
        .map(|t| {
            let tcfg = t.config(cfg);
            let ctx = SearchContext {
                graph: &t.graph,
                pool: &chips,
                cfg: &tcfg,
                objective,
                constraints: &t.constraints,
            };
            let cache = CandidateCache::new();
            let spans = FusionGenome::no_fusion(t.graph.len()).groups();
            let mut stages = Vec::with_capacity(spans.len());
            for (g, s) in spans.iter().enumerate() {
                let list = cache.get(&ctx, *s, None, None)?;
                stages.push(list.iter().map(|c| crate::perfmodel::StageCandidate { group_id: g, ..c.clone() }).collect());
            }
            match solve_plan(&ctx, &stages) {
                Ok((_, d)) if d.objective > 0.0 => Ok(d.objective),
                Ok(_) => Ok(1.0),
                Err(e) if e.is_infeasible() => Ok(1.0),
                Err(e) => Err(e),
            }
        })
        .collect()
}

pub fn aggregate(ratios: &[f64], how: Aggregation) -> f64 {
    if ratios.iter().any(|r| !r.is_finite()) {
        return f64::INFINITY;
    }
    match how {
        Aggregation::GeoMean if ratios.len() == 1 => ratios[0],
        Aggregation::GeoMean => (ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp(),
        Aggregation::WorstCase => ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PoolEvaluation {
    pub pool: ChipletPool,
    pub score: f64,
    /// Best objective per network (`inf` when infeasible).
    pub objectives: Vec<f64>,
    #[serde(skip)]
    pub designs: Vec<Option<AcceleratorDesign>>,
}

/// Exhaustive inner search with candidates enumerated once over a whole
/// menu: each network's stage lists for every cut set, filtered per pool.
struct MenuPlans {
    menu: Vec<ChipletKey>,
    /// [network][cut set][stage] -> candidates over the full menu
    plans: Vec<Vec<Vec<Vec<crate::perfmodel::StageCandidate>>>>,
}

impl MenuPlans {
    fn build(tasks: &[NetworkTask], cfg: &Config, objective: ObjectiveKind, menu: &[ChipletKey]) -> Result<Self> {
        let chips: Vec<ChipletConfig> = menu.iter().map(|k| ChipletConfig::from_key(*k, &cfg.tech)).collect::<Result<_>>()?;
        let plans = tasks
            .par_iter()
            .map(|t| {
                let n = t.graph.len();
                if n > 20 {
                    return Err(Error::GuardExceeded {
                        size: 1u128 << (n - 1),
                        guard: 1 << 19,
                    });
                }
                let tcfg = t.config(cfg);
                let ctx = SearchContext {
                    graph: &t.graph,
                    pool: &chips,
                    cfg: &tcfg,
                    objective,
                    constraints: &t.constraints,
                };
                let cache = CandidateCache::new();
                (0u64..1 << (n - 1))
                    .map(|mask| {
                        let cuts: Vec<bool> = (0..n - 1).map(|i| mask >> i & 1 == 1).collect();
                        crate::fusion::spans_from_cuts(&cuts)
                            .iter()
                            .enumerate()
                            .map(|(g, sp)| {
                                Ok(cache
                                    .get(&ctx, *sp, None, None)?
                                    .iter()
                                    .map(|c| crate::perfmodel::StageCandidate { group_id: g, ..c.clone() })
                                    .collect())
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MenuPlans {
            menu: menu.to_vec(),
            plans,
        })
    }

    fn covers(&self, pool: &ChipletPool) -> bool {
        pool.members().iter().all(|k| self.menu.contains(k))
    }

    /// Same result as `exhaustive_fusion_search` on the pool.
    fn best(&self, network: usize, task: &NetworkTask, pool: &ChipletPool, cfg: &Config, objective: ObjectiveKind) -> Result<AcceleratorDesign> {
        let tcfg = task.config(cfg);
        let ctx = SearchContext {
            graph: &task.graph,
            pool: &[],
            cfg: &tcfg,
            objective,
            constraints: &task.constraints,
        };
        let mut best: Option<AcceleratorDesign> = None;
        let mut first_error: Option<Error> = None;
        for plan in &self.plans[network] {
            let stages: Vec<Vec<_>> = plan
                .iter()
                .map(|l| l.iter().filter(|c| pool.contains(&c.chiplet.key)).cloned().collect())
                .collect();
            if stages.iter().any(|l: &Vec<_>| l.is_empty()) {
                first_error.get_or_insert_with(|| Error::Infeasible("a fused group fits no pool chiplet".into()));
                continue;
            }
            match solve_plan(&ctx, &stages) {
                Ok((_, d)) => {
                    if best.as_ref().is_none_or(|b| d.objective < b.objective) {
                        best = Some(d);
                    }
                }
                Err(e) if e.is_infeasible() => {
                    first_error.get_or_insert(e);
                }
                Err(e) => return Err(e),
            }
        }
        best.ok_or_else(|| first_error.unwrap_or_else(|| Error::Infeasible("no feasible fusion plan".into())))
    }
}

/// Scores pools, memoizing by composition.
pub struct PoolScorer<'a> {
    pub tasks: &'a [NetworkTask],
    pub cfg: &'a Config,
    pub objective: ObjectiveKind,
    pub inner: InnerSearch,
    pub references: Vec<f64>,
    pub aggregation: Aggregation,
    pub seed: u64,
    memo: HashMap<ChipletPool, PoolEvaluation>,
    plans: Option<MenuPlans>,
}

impl<'a> PoolScorer<'a> {
    pub fn new(
        tasks: &'a [NetworkTask],
        cfg: &'a Config,
        objective: ObjectiveKind,
        inner: InnerSearch,
        references: Vec<f64>,
        seed: u64,
    ) -> Self {
        PoolScorer {
            tasks,
            cfg,
            objective,
            inner,
            references,
            aggregation: cfg.sa.aggregation,
            seed,
            memo: HashMap::new(),
            plans: None,
        }
    }

    /// Exhaustive scorer with candidates precomputed over `menu`; pools
    /// drawn from the menu skip per-pool candidate enumeration.
    pub fn exhaustive_over(
        tasks: &'a [NetworkTask],
        cfg: &'a Config,
        objective: ObjectiveKind,
        menu: &[ChipletKey],
        references: Vec<f64>,
    ) -> Result<Self> {
        let mut s = PoolScorer::new(tasks, cfg, objective, InnerSearch::Exhaustive, references, 0);
        s.plans = Some(MenuPlans::build(tasks, cfg, objective, menu)?);
        Ok(s)
    }

    /// Swaps the normalization; memoized scores are dropped, precomputed
    /// candidates kept.
    pub fn set_references(&mut self, references: Vec<f64>) {
        self.references = references;
        self.memo.clear();
    }

    pub fn distinct_pools(&self) -> usize {
        self.memo.len()
    }

    pub fn score(&mut self, pool: &ChipletPool) -> Result<PoolEvaluation> {
        if let Some(e) = self.memo.get(pool) {
            return Ok(e.clone());
        }
        if let Some(plans) = self.plans.as_ref().filter(|p| p.covers(pool)) {
            let results: Vec<Result<Option<AcceleratorDesign>>> = self
                .tasks
                .par_iter()
                .enumerate()
                .map(|(i, t)| match plans.best(i, t, pool, self.cfg, self.objective) {
                    Ok(d) => Ok(Some(d)),
                    Err(e) if e.is_infeasible() => Ok(None),
                    Err(e) => Err(e),
                })
                .collect();
            let designs = results.into_iter().collect::<Result<Vec<_>>>()?;
            let e = evaluation(pool, designs, &self.references, self.aggregation);
            self.memo.insert(pool.clone(), e.clone());
            return Ok(e);
        }
        let e = pool_score(
            pool,
            self.tasks,
            self.objective,
            self.cfg,
            &self.inner,
            &self.references,
            self.aggregation,
            self.seed,
        )?;
        self.memo.insert(pool.clone(), e.clone());
        Ok(e)
    }
}

/// Aggregated normalized best objective over all networks; `+inf` if any
/// network has no feasible design on this pool.
#[allow(clippy::too_many_arguments)]
pub fn pool_score(
    pool: &ChipletPool,
    tasks: &[NetworkTask],
    objective: ObjectiveKind,
    cfg: &Config,
    inner: &InnerSearch,
    references: &[f64],
    aggregation: Aggregation,
    seed: u64,
) -> Result<PoolEvaluation> {
    if tasks.is_empty() {
        return Err(Error::Validation("no target networks".into()));
    }
    let chips = pool.configs(cfg)?;
    let results: Vec<Result<Option<AcceleratorDesign>>> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| match best_design(t, &chips, cfg, objective, inner, network_seed(seed, i)) {
            Ok(d) => Ok(Some(d)),
            Err(e) if e.is_infeasible() => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let designs: Vec<Option<AcceleratorDesign>> = results.into_iter().collect::<Result<_>>()?;
    Ok(evaluation(pool, designs, references, aggregation))
}

fn evaluation(pool: &ChipletPool, designs: Vec<Option<AcceleratorDesign>>, references: &[f64], aggregation: Aggregation) -> PoolEvaluation {
    let objectives: Vec<f64> = designs
        .iter()
        .map(|d| d.as_ref().map_or(f64::INFINITY, |d| d.objective))
        .collect();
    let ratios: Vec<f64> = objectives
        .iter()
        .enumerate()
        .map(|(i, o)| o / references.get(i).copied().unwrap_or(1.0))
        .collect();
    PoolEvaluation {
        pool: pool.clone(),
        score: aggregate(&ratios, aggregation),
        objectives,
        designs,
    }
}

/// Metropolis rule: downhill and flat moves always pass; at zero temperature
/// uphill moves never do.
pub fn metropolis_accept(delta: f64, temperature: f64, rng: &mut ChaCha8Rng) -> bool {
    if delta <= 0.0 {
        return true;
    }
    if temperature <= 0.0 || !delta.is_finite() {
        return false;
    }
    rng.gen::<f64>() < (-delta / temperature).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub level: usize,
    pub temperature: f64,
    pub pool: String,
    pub score: f64,
    pub accepted: bool,
    pub best_score: f64,
}

#[derive(Debug, Clone)]
pub struct SaResult {
    pub best: PoolEvaluation,
    pub trace: Vec<TraceRow>,
    /// Pool-score requests, memo hits included.
    pub evaluations: usize,
    pub references: Vec<f64>,
}

impl SaResult {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("level,temperature,pool,score,accepted,best_score\n");
        for r in &self.trace {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.level, r.temperature, r.pool, r.score, r.accepted as u8, r.best_score
            );
        }
        s
    }
}

/// Anneals from `initial`. Inner searches during annealing use the reduced GA
/// budget (or exhaustive search if requested); the best pool's designs are
/// re-polished at full budget.
pub fn sa_search(
    initial: &ChipletPool,
    tasks: &[NetworkTask],
    objective: ObjectiveKind,
    cfg: &Config,
    params: &SaParams,
    inner: Option<InnerSearch>,
    seed: u64,
) -> Result<SaResult> {
    let references = reference_objectives(tasks, initial, cfg, objective)?;
    let inner = inner.unwrap_or_else(|| {
        InnerSearch::Ga(GaParams {
            population: params.inner_population,
            generations: params.inner_generations,
            ..cfg.ga.clone()
        })
    });
    let polish = match &inner {
        InnerSearch::Exhaustive => InnerSearch::Exhaustive,
        InnerSearch::Ga(_) => InnerSearch::Ga(cfg.ga.clone()),
    };
    let mut scorer = PoolScorer::new(tasks, cfg, objective, inner, references.clone(), seed);
    scorer.aggregation = params.aggregation;
    let mut result = anneal(&mut scorer, initial, &cfg.space, params, seed)?;
    if polish != scorer.inner {
        result.best = pool_score(&result.best.pool, tasks, objective, cfg, &polish, &references, params.aggregation, seed)?;
    }
    Ok(result)
}

/// The annealing chain proper; `scorer` may be shared between runs.
pub fn anneal(
    scorer: &mut PoolScorer<'_>,
    initial: &ChipletPool,
    space: &ChipletSpace,
    params: &SaParams,
    seed: u64,
) -> Result<SaResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = scorer.score(initial)?;
    let mut best = current.clone();
    let mut evaluations = 1usize;
    let mut trace = vec![TraceRow {
        level: 0,
        temperature: params.init_temp,
        pool: current.pool.to_string(),
        score: current.score,
        accepted: true,
        best_score: best.score,
    }];
    // floor at or above the start temperature means pure hill climbing
    let hill_climb = params.floor >= params.init_temp;
    let mut temperature = if hill_climb { 0.0 } else { params.init_temp };
    let mut level = 0usize;
    'levels: while (hill_climb || temperature > params.floor) && evaluations < params.max_evaluations {
        for _ in 0..params.iters_per_level {
            if evaluations >= params.max_evaluations {
                break 'levels;
            }
            let cand_pool = neighbor_pool(&current.pool, space, &mut rng);
            let cand = scorer.score(&cand_pool)?;
            evaluations += 1;
            let delta = if cand.score.is_infinite() && current.score.is_infinite() {
                0.0
            } else {
                cand.score - current.score
            };
            let accepted = metropolis_accept(delta, temperature, &mut rng);
            if cand.score < best.score {
                best = cand.clone();
            }
            trace.push(TraceRow {
                level,
                temperature,
                pool: cand.pool.to_string(),
                score: cand.score,
                accepted,
                best_score: best.score,
            });
            if accepted {
                current = cand;
            }
        }
        level += 1;
        if !hill_climb {
            temperature *= params.cooling;
        }
    }
    Ok(SaResult {
        best,
        trace,
        evaluations,
        references: scorer.references.clone(),
    })
}

/// All `k`-subsets of `menu` in lexicographic order.
pub fn pools_of_size(menu: &[ChipletKey], k: usize) -> Vec<ChipletPool> {
    fn rec(menu: &[ChipletKey], k: usize, start: usize, cur: &mut Vec<ChipletKey>, out: &mut Vec<ChipletPool>) {
        if cur.len() == k {
            out.push(ChipletPool::new(cur.clone()).expect("nonempty"));
            return;
        }
        for i in start..menu.len() {
            cur.push(menu[i]);
            rec(menu, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k >= 1 && k <= menu.len() {
        rec(menu, k, 0, &mut Vec::new(), &mut out);
    }
    out
}

/// Best pool of exactly `k` members by exhaustive enumeration. Ties go to the
/// lexicographically first pool.
pub fn exhaustive_pool_search(menu: &[ChipletKey], k: usize, scorer: &mut PoolScorer<'_>) -> Result<PoolEvaluation> {
    let mut best: Option<PoolEvaluation> = None;
    for p in pools_of_size(menu, k) {
        let e = scorer.score(&p)?;
        if best.as_ref().is_none_or(|b| e.score < b.score) {
            best = Some(e);
        }
    }
    best.ok_or_else(|| Error::Validation(format!("no pool of size {k} in a menu of {}", menu.len())))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub budget: usize,
    pub pool: String,
    pub score: f64,
}

/// Optimal score per pool budget; budgets beyond the menu size are skipped.
pub fn pool_size_sweep(menu: &[ChipletKey], budgets: &[usize], scorer: &mut PoolScorer<'_>) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for &b in budgets.iter().filter(|&&b| b >= 1 && b <= menu.len()) {
        let e = exhaustive_pool_search(menu, b, scorer)?;
        out.push(SweepPoint {
            budget: b,
            pool: e.pool.to_string(),
            score: e.score,
        });
    }
    Ok(out)
}

/// Re-runs the GA-scored designs for a fixed genome set; used by reports.
pub fn design_for_genome(
    task: &NetworkTask,
    pool: &[ChipletConfig],
    cfg: &Config,
    objective: ObjectiveKind,
    genome: &FusionGenome,
) -> Result<AcceleratorDesign> {
    let cfg = task.config(cfg);
    let ctx = SearchContext {
        graph: &task.graph,
        pool,
        cfg: &cfg,
        objective,
        constraints: &task.constraints,
    };
    let cache = CandidateCache::new();
    let stages = genome_stages(&ctx, &cache, genome)?;
    Ok(solve_plan(&ctx, &stages)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perfmodel::Dataflow;

    fn key(d: Dataflow, pe: u32, glb: u32) -> ChipletKey {
        ChipletKey {
            dataflow: d,
            pe_scale: pe,
            glb_scale: glb,
        }
    }

    #[test]
    fn forced_dataflow_move() {
        let pool = ChipletPool::new(vec![key(Dataflow::RS, 2, 4)]).unwrap();
        let space = ChipletSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = apply_move(&pool, 0, PoolMove::Dataflow, &space, &mut rng).unwrap();
            let k = n.members()[0];
            assert_ne!(k.dataflow, Dataflow::RS);
            assert_eq!((k.pe_scale, k.glb_scale), (2, 4));
        }
    }

    #[test]
    fn pe_step_reflects_at_menu_end() {
        let pool = ChipletPool::new(vec![key(Dataflow::WS, 4, 1)]).unwrap();
        let space = ChipletSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = apply_move(&pool, 0, PoolMove::PeScale, &space, &mut rng).unwrap();
            assert_eq!(n.members()[0].pe_scale, 3);
        }
        let glb = ChipletPool::new(vec![key(Dataflow::WS, 1, 1)]).unwrap();
        let n = apply_move(&glb, 0, PoolMove::GlbScale, &space, &mut rng).unwrap();
        assert_eq!(n.members()[0].glb_scale, 4);
    }

    #[test]
    fn metropolis_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(metropolis_accept(0.0, 1.0, &mut rng));
        assert!(metropolis_accept(-1.0, 0.0, &mut rng));
        assert!(metropolis_accept(0.0, 0.0, &mut rng));
        assert!(!metropolis_accept(1e-12, 0.0, &mut rng));
    }

    #[test]
    fn subsets_count() {
        let menu: Vec<ChipletKey> = (1..=4).map(|p| key(Dataflow::RS, p, 1)).collect();
        assert_eq!(pools_of_size(&menu, 2).len(), 6);
        assert_eq!(pools_of_size(&menu, 4).len(), 1);
        assert!(pools_of_size(&menu, 5).is_empty());
    }

    #[test]
    fn geomean_and_worst() {
        assert!((aggregate(&[1.0, 4.0], Aggregation::GeoMean) - 2.0).abs() < 1e-12);
        assert_eq!(aggregate(&[1.0, 4.0], Aggregation::WorstCase), 4.0);
        assert_eq!(aggregate(&[1.0, f64::INFINITY], Aggregation::GeoMean), f64::INFINITY);
    }
}
