//! Serving scenarios: LLM chat and summarization (TTFT/TPOT), vision
//! deadlines, per-stage batching, and speculative decoding.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::cht::{cht_search, AcceleratorDesign, LatencyConstraint, LatencyKind, ObjectiveKind};
use crate::config::{Config, GaParams};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::fusion::{ga_search, CandidateCache, SearchContext};
use crate::perfmodel::{group_footprint, ChipletConfig, GroupSpan, StageCandidate};
use crate::pool::NetworkTask;
use crate::workload::OperatorGraph;

pub const CHATBOT_TTFT: f64 = 2.5;
pub const CHATBOT_TPOT: f64 = 0.15;
pub const SUMMARIZATION_TTFT: f64 = 15.0;
pub const SUMMARIZATION_TPOT: f64 = 0.15;
pub const AV_DEADLINES: [f64; 2] = [0.010, 0.033];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScenarioKind {
    Chatbot,
    Summarization,
    SpecDecode,
    AvPerception,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Chatbot,
        ScenarioKind::Summarization,
        ScenarioKind::SpecDecode,
        ScenarioKind::AvPerception,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Chatbot => "chatbot",
            ScenarioKind::Summarization => "summarization",
            ScenarioKind::SpecDecode => "spec-decode",
            ScenarioKind::AvPerception => "av-perception",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::unknown("scenario", s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpecDecodeConfig {
    /// Draft tokens proposed per iteration.
    pub k: u32,
    /// Expected accepted tokens per iteration, bonus token included.
    pub tar: f64,
    pub speedup_cap: f64,
}

impl Default for SpecDecodeConfig {
    fn default() -> Self {
        SpecDecodeConfig {
            k: 5,
            tar: 5.6,
            speedup_cap: 2.0,
        }
    }
}

impl SpecDecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 5 {
            return Err(Error::Validation(format!("speculation depth k = {} must be at least 5", self.k)));
        }
        if !(self.tar >= 1.0) || !(self.speedup_cap > 0.0) {
            return Err(Error::Validation("TAR must be >= 1 and the speedup cap positive".into()));
        }
        Ok(())
    }

    pub fn tokens_per_iteration(&self) -> f64 {
        self.tar.min(self.k as f64 + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioParams {
    /// AV end-to-end deadline, seconds.
    pub av_deadline: f64,
    /// Fixture name of the AV backbone.
    pub av_backbone: String,
    pub spec: SpecDecodeConfig,
    /// Overrides the scenario's time-to-first-token limit, seconds.
    pub ttft: Option<f64>,
    /// Overrides the scenario's time-per-output-token limit, seconds.
    pub tpot: Option<f64>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            av_deadline: 0.033,
            av_backbone: "resnet50".into(),
            spec: SpecDecodeConfig::default(),
            ttft: None,
            tpot: None,
        }
    }
}

/// One graph of a scenario and how its latency is judged.
#[derive(Debug, Clone)]
pub struct ScenarioGraph {
    /// prefill, decode, draft, target or backbone.
    pub role: &'static str,
    pub graph: OperatorGraph,
    pub constraint: Option<LatencyConstraint>,
    pub batches: Option<Vec<u64>>,
}

impl ScenarioGraph {
    pub fn task(&self) -> NetworkTask {
        NetworkTask {
            graph: self.graph.clone(),
            constraints: self.constraint.iter().cloned().collect(),
            batches: self.batches.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub graphs: Vec<ScenarioGraph>,
    pub spec: Option<SpecDecodeConfig>,
}

impl Scenario {
    pub fn tasks(&self) -> Vec<NetworkTask> {
        self.graphs.iter().map(ScenarioGraph::task).collect()
    }

    pub fn graph(&self, role: &str) -> Option<&ScenarioGraph> {
        self.graphs.iter().find(|g| g.role == role)
    }
}

fn llm(prefill: &str, ttft: f64, tpot: f64) -> Result<Vec<ScenarioGraph>> {
    Ok(vec![
        ScenarioGraph {
            role: "prefill",
            graph: fixtures::graph(prefill)?,
            constraint: Some(LatencyConstraint::end_to_end("TTFT", ttft)),
            batches: None,
        },
        ScenarioGraph {
            role: "decode",
            graph: fixtures::graph("opt66b_decode")?,
            constraint: Some(LatencyConstraint::period("TPOT", tpot)),
            batches: None,
        },
    ])
}

pub fn build_scenario(kind: ScenarioKind, params: &ScenarioParams) -> Result<Scenario> {
    for v in [params.ttft, params.tpot].into_iter().flatten() {
        if !(v > 0.0) {
            return Err(Error::Validation("latency limits must be positive".into()));
        }
    }
    let ttft = |d: f64| params.ttft.unwrap_or(d);
    let tpot = params.tpot.unwrap_or(CHATBOT_TPOT);
    let (graphs, spec) = match kind {
        // the chat prompt is short; summarization ingests a full 2048-token context
        ScenarioKind::Chatbot => (llm("opt66b_prefill_512", ttft(CHATBOT_TTFT), tpot)?, None),
        ScenarioKind::Summarization => (llm("opt66b_prefill", ttft(SUMMARIZATION_TTFT), params.tpot.unwrap_or(SUMMARIZATION_TPOT))?, None),
        ScenarioKind::AvPerception => {
            if !(params.av_deadline > 0.0) {
                return Err(Error::Validation("AV deadline must be positive".into()));
            }
            let g = ScenarioGraph {
                role: "backbone",
                graph: fixtures::resolve(&params.av_backbone)?,
                constraint: Some(LatencyConstraint::end_to_end("E2E", params.av_deadline)),
                batches: Some(vec![1]),
            };
            (vec![g], None)
        }
        ScenarioKind::SpecDecode => {
            params.spec.validate()?;
            let target = ScenarioGraph {
                role: "target",
                graph: fixtures::graph("opt66b_decode")?,
                constraint: Some(LatencyConstraint::period("TPOT", tpot)),
                batches: None,
            };
            let draft = ScenarioGraph {
                role: "draft",
                graph: fixtures::graph("opt1.3b_decode")?,
                // tightened to the draft-rate limit once the target is known
                constraint: Some(LatencyConstraint::period("draft-rate", tpot / params.spec.k as f64)),
                batches: None,
            };
            (vec![target, draft], Some(params.spec))
        }
    };
    Ok(Scenario { kind, graphs, spec })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintCheck {
    pub network: String,
    pub constraint: String,
    pub latency: f64,
    pub limit: f64,
    pub slack: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub passed: bool,
    pub checks: Vec<ConstraintCheck>,
}

impl Verdict {
    pub fn violations(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

/// Checks one design against one constraint (inclusive limits).
pub fn check_design(design: &AcceleratorDesign, constraint: &LatencyConstraint) -> ConstraintCheck {
    let p = design.stages.len();
    ConstraintCheck {
        network: design.network.clone(),
        constraint: constraint.name.clone(),
        latency: constraint.latency(design.period, p),
        limit: constraint.limit,
        slack: constraint.slack(design.period, p),
        passed: constraint.satisfied(design.period, p) && design.period >= design.max_t_cmp(),
    }
}

/// Checks each design against the scenario graph of the same network.
pub fn check_constraints(designs: &[AcceleratorDesign], scenario: &Scenario) -> Verdict {
    let mut checks = Vec::new();
    for d in designs {
        for g in scenario.graphs.iter().filter(|g| g.graph.name == d.network) {
            if let Some(c) = &g.constraint {
                checks.push(check_design(d, c));
            }
        }
    }
    Verdict {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

/// Searches every scenario graph on one pool. For speculative decoding the
/// draft is searched under the draft-rate limit derived from the target.
pub fn run_scenario(
    scenario: &Scenario,
    pool: &[ChipletConfig],
    cfg: &Config,
    objective: ObjectiveKind,
    params: &GaParams,
    seed: u64,
) -> Result<Vec<AcceleratorDesign>> {
    let mut designs: Vec<AcceleratorDesign> = Vec::new();
    for (i, g) in scenario.graphs.iter().enumerate() {
        let mut task = g.task();
        if g.role == "draft" {
            let (Some(spec), Some(target)) = (scenario.spec, designs.iter().find(|d| d.network != g.graph.name)) else {
                return Err(Error::Validation("draft graph without a target design".into()));
            };
            task.constraints = vec![LatencyConstraint::period("draft-rate", target.period / spec.k as f64)];
        }
        let tcfg = task.config(cfg);
        let ctx = SearchContext {
            graph: &task.graph,
            pool,
            cfg: &tcfg,
            objective,
            constraints: &task.constraints,
        };
        designs.push(ga_search(&ctx, params, seed.wrapping_add(i as u64))?.design);
    }
    Ok(designs)
}

/// Extra pipeline periods charged for regrouping samples between stages of
/// different batch: one per doubling of the batch ratio at each boundary.
pub fn reaccumulation_periods(batches: &[u64]) -> u32 {
    batches
        .windows(2)
        .map(|w| {
            let (lo, hi) = (w[0].min(w[1]), w[0].max(w[1]));
            let ratio = hi.div_ceil(lo);
            if ratio <= 1 {
                0
            } else {
                u64::BITS - (ratio - 1).leading_zeros()
            }
        })
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct NonuniformPlan {
    pub design: AcceleratorDesign,
    pub batches: Vec<u64>,
    pub tps: Vec<u32>,
    pub extra_periods: u32,
    /// Accumulation buffer per stage boundary: per-sample boundary bytes
    /// times the larger batch on either side.
    pub boundary_buffer_bytes: Vec<u64>,
    pub uniform_objective: f64,
    pub uniform_batch: u64,
}

fn charged(constraints: &[LatencyConstraint], extra: u32) -> Vec<LatencyConstraint> {
    constraints.iter().map(|c| c.clone().with_extra_periods(extra)).collect()
}

/// Per-stage batch and TP over fixed fusion `spans`. Uniform-batch plans are
/// part of the search space, so the result never loses to the best of them.
pub fn nonuniform_batch_search(ctx: &SearchContext<'_>, spans: &[GroupSpan], batches: &[u64]) -> Result<NonuniformPlan> {
    if batches.is_empty() || spans.is_empty() {
        return Err(Error::Validation("empty batch menu or fusion plan".into()));
    }
    let mut cfg = ctx.cfg.clone();
    cfg.search.batches = batches.to_vec();
    let ctx = SearchContext { cfg: &cfg, ..*ctx };
    let cache = CandidateCache::new();
    let lists: Vec<Vec<StageCandidate>> = spans
        .iter()
        .enumerate()
        .map(|(g, s)| {
            Ok(cache
                .get(&ctx, *s, None, None)?
                .iter()
                .map(|c| StageCandidate { group_id: g, ..c.clone() })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut uniform: Option<(AcceleratorDesign, u64)> = None;
    let mut first_error = None;
    for &b in batches {
        let stages: Vec<Vec<StageCandidate>> = lists.iter().map(|l| l.iter().filter(|c| c.batch == b).cloned().collect()).collect();
        match cht_search(&stages, ctx.objective, ctx.constraints) {
            Ok(sol) => {
                let d = AcceleratorDesign::from_solution(ctx.graph.name.clone(), &stages, &sol, ctx.objective);
                if uniform.as_ref().is_none_or(|(u, _)| d.objective < u.objective) {
                    uniform = Some((d, b));
                }
            }
            Err(e) if e.is_infeasible() => {
                first_error.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }

    // the regrouping charge depends on the chosen batches: raise it until the
    // solution pays no more than it was charged
    let has_e2e = ctx.constraints.iter().any(|c| matches!(c.kind, LatencyKind::EndToEnd { .. }));
    let mut extra = 0u32;
    let mixed = loop {
        let cons = charged(ctx.constraints, extra);
        match cht_search(&lists, ctx.objective, &cons) {
            Ok(sol) => {
                let d = AcceleratorDesign::from_solution(ctx.graph.name.clone(), &lists, &sol, ctx.objective);
                let need = reaccumulation_periods(&d.stages.iter().map(|s| s.batch).collect::<Vec<_>>());
                if !has_e2e || need <= extra {
                    break Some((d, need));
                }
                extra = need;
            }
            Err(e) if e.is_infeasible() => {
                first_error.get_or_insert(e);
                break None;
            }
            Err(e) => return Err(e),
        }
    };

    let (uniform_objective, uniform_batch) = uniform.as_ref().map_or((f64::INFINITY, 0), |(d, b)| (d.objective, *b));
    let (design, extra_periods) = match (mixed, uniform) {
        (Some((d, _)), Some((u, _))) if u.objective < d.objective => (u, 0),
        (Some((d, e)), _) => (d, e),
        (None, Some((u, _))) => (u, 0),
        (None, None) => return Err(first_error.unwrap_or_else(|| Error::Infeasible("no batch plan".into()))),
    };
    let batches: Vec<u64> = design.stages.iter().map(|s| s.batch).collect();
    let mut boundary_buffer_bytes = Vec::new();
    for (i, w) in batches.windows(2).enumerate() {
        let per_sample = group_footprint(ctx.graph, spans[i], 1)?.output_bytes;
        boundary_buffer_bytes.push(per_sample * w[0].max(w[1]));
    }
    Ok(NonuniformPlan {
        tps: design.stages.iter().map(|s| s.tp).collect(),
        batches,
        extra_periods,
        boundary_buffer_bytes,
        uniform_objective,
        uniform_batch,
        design,
    })
}

/// Latency checks of a non-uniform plan including its regrouping charge.
pub fn check_plan(plan: &NonuniformPlan, constraints: &[LatencyConstraint]) -> Verdict {
    let checks: Vec<ConstraintCheck> = charged(constraints, plan.extra_periods)
        .iter()
        .map(|c| check_design(&plan.design, c))
        .collect();
    Verdict {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpecDecodeReport {
    pub tokens_per_iteration: f64,
    pub iteration_time: f64,
    pub raw_speedup: f64,
    pub speedup: f64,
    pub energy_per_token: f64,
    /// Target-only decoding, for reference.
    pub baseline_energy_per_token: f64,
}

/// Scalar model from per-step draft and target timings and energies.
pub fn spec_decode_model(t_draft: f64, e_draft: f64, t_target: f64, e_target: f64, cfg: &SpecDecodeConfig) -> Result<SpecDecodeReport> {
    cfg.validate()?;
    let k = cfg.k as f64;
    if t_draft > t_target / k {
        return Err(Error::Infeasible(format!(
            "draft-rate condition violated: draft period {t_draft:.3e} s > target period / k = {:.3e} s",
            t_target / k
        )));
    }
    let tokens = cfg.tokens_per_iteration();
    let iteration_time = k * t_draft + t_target;
    let raw = tokens * t_target / iteration_time;
    Ok(SpecDecodeReport {
        tokens_per_iteration: tokens,
        iteration_time,
        raw_speedup: raw,
        speedup: raw.min(cfg.speedup_cap),
        energy_per_token: (k * e_draft + e_target) / tokens,
        baseline_energy_per_token: e_target,
    })
}

/// Verification is one batched target pass over the k drafted tokens, costed
/// as one target step.
pub fn spec_decode_eval(draft: &AcceleratorDesign, target: &AcceleratorDesign, cfg: &SpecDecodeConfig) -> Result<SpecDecodeReport> {
    spec_decode_model(draft.period, draft.energy(), target.period, target.energy(), cfg)
}

/// How many tokens an iteration yields in [`simulate_spec_iterations`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Acceptance {
    /// The scalar TAR model: `min(TAR, k+1)` every iteration.
    Scalar,
    /// Each draft token independently accepted with probability `p` until
    /// the first rejection, plus the target's bonus token.
    Bernoulli(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationStats {
    pub iterations: usize,
    pub tokens: f64,
    pub time: f64,
    pub energy: f64,
    pub tokens_per_iteration: f64,
    pub energy_per_token: f64,
    pub speedup: f64,
}

/// Steps through draft and verify phases one at a time.
#[allow(clippy::too_many_arguments)]
pub fn simulate_spec_iterations(
    t_draft: f64,
    e_draft: f64,
    t_target: f64,
    e_target: f64,
    cfg: &SpecDecodeConfig,
    iterations: usize,
    acceptance: Acceptance,
    rng: &mut impl Rng,
) -> IterationStats {
    let (mut time, mut energy, mut tokens) = (0.0, 0.0, 0.0);
    for _ in 0..iterations {
        for _ in 0..cfg.k {
            time += t_draft;
            energy += e_draft;
        }
        time += t_target;
        energy += e_target;
        tokens += match acceptance {
            Acceptance::Scalar => cfg.tokens_per_iteration(),
            Acceptance::Bernoulli(p) => {
                let accepted = (0..cfg.k).take_while(|_| rng.gen_bool(p)).count();
                accepted as f64 + 1.0
            }
        };
    }
    let raw = tokens * t_target / time;
    IterationStats {
        iterations,
        tokens,
        time,
        energy,
        tokens_per_iteration: tokens / iterations as f64,
        energy_per_token: energy / tokens,
        speedup: raw.min(cfg.speedup_cap),
    }
}

/// Expected tokens per iteration under Bernoulli acceptance.
pub fn bernoulli_expected_tokens(p: f64, k: u32) -> f64 {
    if p >= 1.0 {
        return k as f64 + 1.0;
    }
    (1.0 - p.powi(k as i32 + 1)) / (1.0 - p)
}
