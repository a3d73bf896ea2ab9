//! Fusion search: a genetic algorithm over contiguous operator groupings and
//! per-group memory/batch genes, scored by exact stage assignment.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cht::{cht_search, AcceleratorDesign, LatencyConstraint, ObjectiveKind, StageSolution};
use crate::config::{Config, GaParams};
use crate::error::{Error, Result};
use crate::perfmodel::{enumerate_candidates, CandidateMenu, ChipletConfig, GroupSpan, StageCandidate};
use crate::workload::OperatorGraph;

/// Everything a fusion-plan evaluation needs.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub graph: &'a OperatorGraph,
    pub pool: &'a [ChipletConfig],
    pub cfg: &'a Config,
    pub objective: ObjectiveKind,
    pub constraints: &'a [LatencyConstraint],
}

type CacheKey = (usize, usize, Option<usize>, Option<u64>);

/// Memoizes candidate lists per (span, memory, batch); shared across threads.
#[derive(Default)]
pub struct CandidateCache {
    map: Mutex<HashMap<CacheKey, Arc<Vec<StageCandidate>>>>,
}

impl CandidateCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Candidates of `span` restricted to one memory and/or batch (`None` = full menu).
    pub fn get(
        &self,
        ctx: &SearchContext<'_>,
        span: GroupSpan,
        memory: Option<usize>,
        batch: Option<u64>,
    ) -> Result<Arc<Vec<StageCandidate>>> {
        let key = (span.start, span.end, memory, batch);
        if let Some(v) = self.map.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let mut menu = CandidateMenu::from_config(ctx.cfg);
        if let Some(m) = memory {
            menu.memories = vec![ctx.cfg.memories[m].clone()];
        }
        if let Some(b) = batch {
            menu.batches = vec![b];
        }
        let list = Arc::new(enumerate_candidates(ctx.graph, span, 0, ctx.pool, &menu, ctx.cfg)?);
        self.map.lock().expect("cache lock").insert(key, list.clone());
        Ok(list)
    }
}

/// Cut set over the topological order plus per-group memory and batch genes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct FusionGenome {
    /// `cuts[i]` separates node `i` from node `i + 1`.
    pub cuts: Vec<bool>,
    /// Per-group index into the memory menu.
    pub memory: Vec<usize>,
    /// Per-group index into the batch menu.
    pub batch: Vec<usize>,
}

impl FusionGenome {
    pub fn from_cuts(cuts: Vec<bool>, memory: usize, batch: usize) -> Self {
        let groups = cuts.iter().filter(|&&c| c).count() + 1;
        FusionGenome {
            cuts,
            memory: vec![memory; groups],
            batch: vec![batch; groups],
        }
    }

    pub fn no_fusion(nodes: usize) -> Self {
        Self::from_cuts(vec![true; nodes.saturating_sub(1)], 0, 0)
    }

    pub fn nodes(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn groups(&self) -> Vec<GroupSpan> {
        spans_from_cuts(&self.cuts)
    }

    pub fn group_of(&self, node: usize) -> usize {
        self.cuts[..node].iter().filter(|&&c| c).count()
    }

    /// Replaces the cut set; each new group inherits the genes of the old group
    /// holding its first node.
    pub fn with_cuts(&self, cuts: Vec<bool>) -> Self {
        let spans = spans_from_cuts(&cuts);
        let memory = spans.iter().map(|s| self.memory[self.group_of(s.start)]).collect();
        let batch = spans.iter().map(|s| self.batch[self.group_of(s.start)]).collect();
        FusionGenome { cuts, memory, batch }
    }

    fn check(&self, graph: &OperatorGraph, cfg: &Config) -> Result<()> {
        let groups = self.groups().len();
        let ok = self.nodes() == graph.len()
            && self.memory.len() == groups
            && self.batch.len() == groups
            && self.memory.iter().all(|&m| m < cfg.memories.len())
            && self.batch.iter().all(|&b| b < cfg.search.batches.len());
        if ok {
            Ok(())
        } else {
            Err(Error::Validation("genome does not match the graph or menus".into()))
        }
    }
}

pub fn spans_from_cuts(cuts: &[bool]) -> Vec<GroupSpan> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &c) in cuts.iter().enumerate() {
        if c {
            out.push(GroupSpan::new(start, i + 1));
            start = i + 1;
        }
    }
    out.push(GroupSpan::new(start, cuts.len() + 1));
    out
}

pub fn cuts_from_spans(spans: &[GroupSpan], nodes: usize) -> Vec<bool> {
    let mut cuts = vec![false; nodes.saturating_sub(1)];
    for s in &spans[..spans.len().saturating_sub(1)] {
        cuts[s.end - 1] = true;
    }
    cuts
}

fn group_feasible(
    ctx: &SearchContext<'_>,
    cache: &CandidateCache,
    span: GroupSpan,
    memory: usize,
    batch: u64,
) -> Result<bool> {
    Ok(!cache.get(ctx, span, Some(memory), Some(batch))?.is_empty())
}

/// Splits every group into its longest feasible prefixes, leftmost first. A
/// node infeasible under its group's memory switches to the first memory that
/// fits; a node no memory can host makes the genome infeasible.
pub fn legalize_genome(genome: &FusionGenome, ctx: &SearchContext<'_>, cache: &CandidateCache) -> Result<FusionGenome> {
    genome.check(ctx.graph, ctx.cfg)?;
    let batches = &ctx.cfg.search.batches;
    let mut spans = Vec::new();
    let mut memory = Vec::new();
    let mut batch = Vec::new();
    for (g, span) in genome.groups().into_iter().enumerate() {
        let b = batches[genome.batch[g]];
        let mut start = span.start;
        while start < span.end {
            let mut mem = genome.memory[g];
            if !group_feasible(ctx, cache, GroupSpan::new(start, start + 1), mem, b)? {
                mem = (0..ctx.cfg.memories.len())
                    .find(|&m| group_feasible(ctx, cache, GroupSpan::new(start, start + 1), m, b).unwrap_or(false))
                    .ok_or_else(|| {
                        Error::Infeasible(format!(
                            "operator `{}` fits no chiplet/memory in the pool",
                            ctx.graph.nodes()[start].id
                        ))
                    })?;
            }
            let mut end = start + 1;
            while end < span.end && group_feasible(ctx, cache, GroupSpan::new(start, end + 1), mem, b)? {
                end += 1;
            }
            spans.push(GroupSpan::new(start, end));
            memory.push(mem);
            batch.push(genome.batch[g]);
            start = end;
        }
    }
    Ok(FusionGenome {
        cuts: cuts_from_spans(&spans, ctx.graph.len()),
        memory,
        batch,
    })
}

/// Fastest-memory latency reference for the roofline memory seed: the cheapest
/// memory that keeps the group's `T_cmp` equal to its `T_cmp` under the
/// highest-bandwidth memory, on the pool chiplet that computes it fastest.
pub fn roofline_memory(ctx: &SearchContext<'_>, cache: &CandidateCache, span: GroupSpan, batch: u64) -> Result<Option<usize>> {
    let mems = &ctx.cfg.memories;
    let fastest = (0..mems.len())
        .max_by(|&a, &b| mems[a].bandwidth.total_cmp(&mems[b].bandwidth).then(b.cmp(&a)))
        .expect("memory menu is nonempty");
    let reference = cache.get(ctx, span, Some(fastest), Some(batch))?;
    let Some(best_chip) = reference
        .iter()
        .filter(|c| c.tp == 1)
        .min_by(|a, b| a.compute_time.total_cmp(&b.compute_time))
    else {
        return Ok(None);
    };
    let target = best_chip.t_cmp;
    let mut best: Option<(f64, usize)> = None;
    for (m, mem) in mems.iter().enumerate() {
        let list = cache.get(ctx, span, Some(m), Some(batch))?;
        let same = list
            .iter()
            .find(|c| c.tp == 1 && c.chiplet.key == best_chip.chiplet.key);
        if let Some(c) = same {
            if c.t_cmp == target && best.is_none_or(|(cost, _)| mem.dollar_cost() < cost) {
                best = Some((mem.dollar_cost(), m));
            }
        }
    }
    Ok(best.map(|(_, m)| m).or(Some(fastest)))
}

fn with_roofline_memory(genome: FusionGenome, ctx: &SearchContext<'_>, cache: &CandidateCache) -> Result<FusionGenome> {
    let mut g = genome;
    for (i, span) in g.groups().into_iter().enumerate() {
        let b = ctx.cfg.search.batches[g.batch[i]];
        if let Some(m) = roofline_memory(ctx, cache, span, b)? {
            g.memory[i] = m;
        }
    }
    legalize_genome(&g, ctx, cache)
}

/// Seeds: no fusion, maximal legal fusion, early-prefix fusion (all with
/// roofline memory choices), then random legal genomes.
pub fn seed_population(
    ctx: &SearchContext<'_>,
    cache: &CandidateCache,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FusionGenome>> {
    if size < 3 {
        return Err(Error::Validation("population must be >= 3".into()));
    }
    let n = ctx.graph.len();
    let none = legalize_genome(&FusionGenome::no_fusion(n), ctx, cache)?;
    let max = legalize_genome(&FusionGenome::from_cuts(vec![false; n - 1], 0, 0), ctx, cache)?;
    let early = {
        let first = max.groups()[0];
        let mut cuts = vec![true; n - 1];
        for c in cuts.iter_mut().take(first.end - 1) {
            *c = false;
        }
        legalize_genome(&FusionGenome::from_cuts(cuts, 0, 0), ctx, cache)?
    };
    let mut pop = vec![
        with_roofline_memory(none, ctx, cache)?,
        with_roofline_memory(max, ctx, cache)?,
        with_roofline_memory(early, ctx, cache)?,
    ];
    while pop.len() < size {
        let cuts: Vec<bool> = (0..n - 1).map(|_| rng.gen_bool(0.5)).collect();
        let groups = spans_from_cuts(&cuts).len();
        let g = FusionGenome {
            cuts,
            memory: (0..groups).map(|_| rng.gen_range(0..ctx.cfg.memories.len())).collect(),
            batch: (0..groups).map(|_| rng.gen_range(0..ctx.cfg.search.batches.len())).collect(),
        };
        pop.push(legalize_genome(&g, ctx, cache)?);
    }
    Ok(pop)
}

/// Stage candidates for a genome: the chiplet and tp remain free.
pub fn genome_stages(ctx: &SearchContext<'_>, cache: &CandidateCache, genome: &FusionGenome) -> Result<Vec<Vec<StageCandidate>>> {
    genome
        .groups()
        .iter()
        .enumerate()
        .map(|(g, span)| {
            let b = ctx.cfg.search.batches[genome.batch[g]];
            let list = cache.get(ctx, *span, Some(genome.memory[g]), Some(b))?;
            if list.is_empty() {
                return Err(Error::Infeasible(format!("illegal genome: group {g} has no candidate")));
            }
            Ok(relabel(&list, g))
        })
        .collect()
}

fn relabel(list: &[StageCandidate], group: usize) -> Vec<StageCandidate> {
    list.iter()
        .map(|c| StageCandidate {
            group_id: group,
            ..c.clone()
        })
        .collect()
}

/// Solves stage assignment for a plan and packages the design.
pub fn solve_plan(
    ctx: &SearchContext<'_>,
    stages: &[Vec<StageCandidate>],
) -> Result<(StageSolution, AcceleratorDesign)> {
    let sol = cht_search(stages, ctx.objective, ctx.constraints)?;
    let design = AcceleratorDesign::from_solution(ctx.graph.name.clone(), stages, &sol, ctx.objective);
    Ok((sol, design))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub best_objective: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct GaResult {
    pub genome: FusionGenome,
    pub design: AcceleratorDesign,
    pub history: Vec<GenerationLog>,
    /// Distinct genomes scored.
    pub evaluations: usize,
}

impl GaResult {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("generation,best_objective,evaluations\n");
        for h in &self.history {
            let _ = writeln!(s, "{},{},{}", h.generation, h.best_objective, h.evaluations);
        }
        s
    }
}

type Fitness = std::result::Result<f64, Error>;

const DUPLICATE_RETRIES: usize = 4;

fn tournament<'p>(pop: &'p [(FusionGenome, f64)], rng: &mut ChaCha8Rng) -> &'p FusionGenome {
    let a = rng.gen_range(0..pop.len());
    let b = rng.gen_range(0..pop.len());
    // lower fitness wins; equal fitness goes to the earlier slot
    if pop[b].1 < pop[a].1 || (pop[b].1 == pop[a].1 && b < a) {
        &pop[b].0
    } else {
        &pop[a].0
    }
}

fn crossover(a: &FusionGenome, b: &FusionGenome, rng: &mut ChaCha8Rng) -> FusionGenome {
    if a.cuts.is_empty() {
        return a.clone();
    }
    let x = rng.gen_range(0..=a.cuts.len());
    let cuts: Vec<bool> = a.cuts[..x].iter().chain(&b.cuts[x..]).copied().collect();
    let spans = spans_from_cuts(&cuts);
    let pick = |s: &GroupSpan| if s.start <= x { a } else { b };
    let memory = spans.iter().map(|s| pick(s).memory[pick(s).group_of(s.start)]).collect();
    let batch = spans.iter().map(|s| pick(s).batch[pick(s).group_of(s.start)]).collect();
    FusionGenome { cuts, memory, batch }
}

fn mutate(g: &FusionGenome, memories: usize, batches: usize, rng: &mut ChaCha8Rng) -> FusionGenome {
    if !g.cuts.is_empty() && rng.gen_bool(0.5) {
        let mut cuts = g.cuts.clone();
        let i = rng.gen_range(0..cuts.len());
        cuts[i] = !cuts[i];
        return g.with_cuts(cuts);
    }
    let mut out = g.clone();
    let group = rng.gen_range(0..out.memory.len());
    if batches > 1 && rng.gen_bool(0.5) {
        out.batch[group] = rng.gen_range(0..batches);
    } else {
        out.memory[group] = rng.gen_range(0..memories);
    }
    out
}

/// Scores genomes not yet cached, in parallel, in a fixed order.
fn score_all(
    ctx: &SearchContext<'_>,
    cache: &CandidateCache,
    fitness: &mut HashMap<FusionGenome, Fitness>,
    genomes: &[FusionGenome],
) {
    let mut fresh: Vec<&FusionGenome> = Vec::new();
    for g in genomes {
        if !fitness.contains_key(g) && !fresh.contains(&g) {
            fresh.push(g);
        }
    }
    let scored: Vec<Fitness> = fresh
        .par_iter()
        .map(|g| {
            let stages = genome_stages(ctx, cache, g)?;
            Ok(solve_plan(ctx, &stages)?.0.objective)
        })
        .collect();
    for (g, f) in fresh.into_iter().zip(scored) {
        fitness.insert(g.clone(), f);
    }
}

fn value(f: &Fitness) -> Result<f64> {
    match f {
        Ok(v) => Ok(*v),
        Err(e) if e.is_infeasible() => Ok(f64::INFINITY),
        Err(e) => Err(e.clone()),
    }
}

pub fn ga_search(ctx: &SearchContext<'_>, params: &GaParams, seed: u64) -> Result<GaResult> {
    let cache = CandidateCache::new();
    ga_search_cached(ctx, params, seed, &cache)
}

pub fn ga_search_cached(ctx: &SearchContext<'_>, params: &GaParams, seed: u64, cache: &CandidateCache) -> Result<GaResult> {
    if params.generations == 0 {
        return Err(Error::Validation("GA needs at least one generation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fitness: HashMap<FusionGenome, Fitness> = HashMap::new();
    let mut pop = seed_population(ctx, cache, params.population, &mut rng)?;
    let mut history = Vec::new();
    let mut best: Option<(FusionGenome, f64)> = None;
    let mut first_error: Option<Error> = None;
    for generation in 0..params.generations {
        if generation > 0 {
            let scored: Vec<(FusionGenome, f64)> = pop
                .iter()
                .map(|g| Ok((g.clone(), value(&fitness[g])?)))
                .collect::<Result<_>>()?;
            let mut next = vec![best.as_ref().expect("scored").0.clone()];
            while next.len() < params.population {
                let a = tournament(&scored, &mut rng).clone();
                let mut child = if rng.gen_bool(params.crossover_rate) {
                    let b = tournament(&scored, &mut rng);
                    crossover(&a, b, &mut rng)
                } else {
                    a
                };
                let (mems, batches) = (ctx.cfg.memories.len(), ctx.cfg.search.batches.len());
                if rng.gen_bool(params.mutation_rate) {
                    child = mutate(&child, mems, batches, &mut rng);
                }
                let mut child = legalize_genome(&child, ctx, cache)?;
                // clones of scored genomes waste a slot; push them elsewhere
                for _ in 0..DUPLICATE_RETRIES {
                    if !fitness.contains_key(&child) && !next.contains(&child) {
                        break;
                    }
                    child = legalize_genome(&mutate(&child, mems, batches, &mut rng), ctx, cache)?;
                }
                next.push(child);
            }
            pop = next;
        }
        score_all(ctx, cache, &mut fitness, &pop);
        for g in &pop {
            let f = &fitness[g];
            if let Err(e) = f {
                if !e.is_infeasible() {
                    return Err(e.clone());
                }
                first_error.get_or_insert_with(|| e.clone());
            }
            let v = value(f)?;
            if v.is_finite() && best.as_ref().is_none_or(|(_, b)| v < *b) {
                best = Some((g.clone(), v));
            }
        }
        if best.is_none() {
            // keep evolving from an all-infeasible population
            best = Some((pop[0].clone(), f64::INFINITY));
        }
        history.push(GenerationLog {
            generation,
            best_objective: best.as_ref().map_or(f64::INFINITY, |b| b.1),
            evaluations: fitness.len(),
        });
    }
    let (genome, v) = best.expect("at least one generation");
    if !v.is_finite() {
        return Err(first_error.unwrap_or_else(|| Error::Infeasible("no feasible fusion plan".into())));
    }
    let stages = genome_stages(ctx, cache, &genome)?;
    let (_, design) = solve_plan(ctx, &stages)?;
    Ok(GaResult {
        genome,
        design,
        history,
        evaluations: fitness.len(),
    })
}

/// The design with every stage moved to memory `memory`, keeping group,
/// chiplet, tensor parallelism and batch, evaluated at the original period.
pub fn with_memory(ctx: &SearchContext<'_>, cache: &CandidateCache, design: &AcceleratorDesign, memory: usize) -> Result<AcceleratorDesign> {
    let mut stages = Vec::with_capacity(design.stages.len());
    for s in &design.stages {
        let list = cache.get(ctx, s.span, Some(memory), Some(s.batch))?;
        let c = list
            .iter()
            .find(|c| c.chiplet.key == s.chiplet.key && c.tp == s.tp)
            .ok_or_else(|| Error::Infeasible(format!("group {} has no {} variant", s.group_id, ctx.cfg.memories[memory].kind)))?;
        if c.t_cmp > design.period {
            return Err(Error::Infeasible(format!(
                "group {} on {} is slower than the period",
                s.group_id, ctx.cfg.memories[memory].kind
            )));
        }
        stages.push(StageCandidate { group_id: s.group_id, ..c.clone() });
    }
    let mut d = AcceleratorDesign { stages, ..design.clone() };
    d.objective = d.recompute_objective();
    Ok(d)
}

/// Every cut set, each solved with free memory and batch menus. Exponential in
/// the node count; intended for small graphs.
pub fn exhaustive_fusion_search(ctx: &SearchContext<'_>, cache: &CandidateCache) -> Result<(Vec<GroupSpan>, AcceleratorDesign)> {
    let n = ctx.graph.len();
    if n > 20 {
        return Err(Error::GuardExceeded {
            size: 1u128 << (n - 1),
            guard: 1 << 19,
        });
    }
    let mut best: Option<(Vec<GroupSpan>, AcceleratorDesign)> = None;
    let mut first_error: Option<Error> = None;
    for mask in 0u64..(1u64 << (n - 1)) {
        let cuts: Vec<bool> = (0..n - 1).map(|i| mask >> i & 1 == 1).collect();
        let spans = spans_from_cuts(&cuts);
        let mut stages = Vec::with_capacity(spans.len());
        for (g, s) in spans.iter().enumerate() {
            stages.push(relabel(&cache.get(ctx, *s, None, None)?, g));
        }
        match solve_plan(ctx, &stages) {
            Ok((_, d)) => {
                if best.as_ref().is_none_or(|(_, b)| d.objective < b.objective) {
                    best = Some((spans, d));
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
