//! Stage assignment for a fixed fusion plan.
//!
//! Every candidate contributes an affine stage value `intercept + slope·T`
//! that is finite only once `T ≥ t_cmp`. Three exact solvers share that value
//! definition so their objectives agree bit for bit:
//!
//! * [`naive_search`] enumerates every stage tuple,
//! * [`iso_latency_search`] fixes `T` and scans each stage independently,
//! * [`cht_search`] answers the per-stage minima from persistent lower hulls
//!   keyed by activation threshold.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use im::Vector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perfmodel::StageCandidate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectiveKind {
    Energy,
    Ec,
    Edp,
    Edpc,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] = [
        ObjectiveKind::Energy,
        ObjectiveKind::Ec,
        ObjectiveKind::Edp,
        ObjectiveKind::Edpc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Energy => "energy",
            ObjectiveKind::Ec => "ec",
            ObjectiveKind::Edp => "edp",
            ObjectiveKind::Edpc => "edpc",
        }
    }

    /// Stage values are scaled by the candidate's own dollar cost.
    pub fn cost_aware(self) -> bool {
        matches!(self, ObjectiveKind::Ec | ObjectiveKind::Edpc)
    }

    /// The summed stage values are multiplied by the period.
    pub fn delay_scaled(self) -> bool {
        matches!(self, ObjectiveKind::Edp | ObjectiveKind::Edpc)
    }

    /// Applies the global factor to a summed stage value.
    pub fn finish(self, sum: f64, period: f64) -> f64 {
        if self.delay_scaled() {
            sum * period
        } else {
            sum
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::unknown("objective", s))
    }
}

/// The quantities a solver needs from a stage candidate.
pub trait StageCost {
    fn t_cmp(&self) -> f64;
    fn e_dyn(&self) -> f64;
    fn p_static(&self) -> f64;
    fn dollar_cost(&self) -> f64;

    fn slope(&self, objective: ObjectiveKind) -> f64 {
        if objective.cost_aware() {
            self.p_static() * self.dollar_cost()
        } else {
            self.p_static()
        }
    }

    fn intercept(&self, objective: ObjectiveKind) -> f64 {
        if objective.cost_aware() {
            self.e_dyn() * self.dollar_cost()
        } else {
            self.e_dyn()
        }
    }

    /// Stage value at `period`, `None` below activation.
    fn value_at(&self, objective: ObjectiveKind, period: f64) -> Option<f64> {
        (period >= self.t_cmp()).then(|| self.intercept(objective) + self.slope(objective) * period)
    }
}

impl StageCost for StageCandidate {
    fn t_cmp(&self) -> f64 {
        self.t_cmp
    }
    fn e_dyn(&self) -> f64 {
        self.e_dyn
    }
    fn p_static(&self) -> f64 {
        self.p_static
    }
    fn dollar_cost(&self) -> f64 {
        self.dollar_cost
    }
}

/// A bare stage option, used by the table-driven CLI solver and in tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageOption {
    pub t_cmp: f64,
    pub e_dyn: f64,
    pub p_static: f64,
    pub dollar_cost: f64,
}

impl StageCost for StageOption {
    fn t_cmp(&self) -> f64 {
        self.t_cmp
    }
    fn e_dyn(&self) -> f64 {
        self.e_dyn
    }
    fn p_static(&self) -> f64 {
        self.p_static
    }
    fn dollar_cost(&self) -> f64 {
        self.dollar_cost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LatencyKind {
    /// `T ≤ limit` (e.g. time per output token).
    Period,
    /// `(P + extra_periods)·T ≤ limit` (e.g. time to first token).
    EndToEnd { extra_periods: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyConstraint {
    pub name: String,
    pub kind: LatencyKind,
    /// Seconds.
    pub limit: f64,
}

impl LatencyConstraint {
    pub fn period(name: impl Into<String>, limit: f64) -> Self {
        LatencyConstraint {
            name: name.into(),
            kind: LatencyKind::Period,
            limit,
        }
    }

    pub fn end_to_end(name: impl Into<String>, limit: f64) -> Self {
        LatencyConstraint {
            name: name.into(),
            kind: LatencyKind::EndToEnd { extra_periods: 0 },
            limit,
        }
    }

    pub fn with_extra_periods(mut self, extra: u32) -> Self {
        if let LatencyKind::EndToEnd { extra_periods } = &mut self.kind {
            *extra_periods = extra;
        }
        self
    }

    /// The constrained latency of a `stages`-deep pipeline at `period`.
    pub fn latency(&self, period: f64, stages: usize) -> f64 {
        match self.kind {
            LatencyKind::Period => period,
            LatencyKind::EndToEnd { extra_periods } => (stages as f64 + extra_periods as f64) * period,
        }
    }

    pub fn satisfied(&self, period: f64, stages: usize) -> bool {
        self.latency(period, stages) <= self.limit
    }

    pub fn slack(&self, period: f64, stages: usize) -> f64 {
        self.limit - self.latency(period, stages)
    }
}

fn all_satisfied(constraints: &[LatencyConstraint], period: f64, stages: usize) -> bool {
    constraints.iter().all(|c| c.satisfied(period, stages))
}

/// Operation counters for complexity measurements.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SearchCounters {
    /// Ordering comparisons (sorting, binary searches, hull tests, minima).
    pub comparisons: u64,
    /// Stage-value evaluations.
    pub evaluations: u64,
    /// Stage tuples visited by the exhaustive solver.
    pub tuples: u64,
}

/// Result of a stage-assignment solve: one candidate index per stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSolution {
    pub period: f64,
    pub objective: f64,
    pub choice: Vec<usize>,
    pub counters: SearchCounters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverKind {
    Naive,
    Iso,
    Cht,
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(SolverKind::Naive),
            "iso" => Ok(SolverKind::Iso),
            "cht" => Ok(SolverKind::Cht),
            other => Err(Error::unknown("solver", other)),
        }
    }
}

pub fn solve<C: StageCost>(
    kind: SolverKind,
    stages: &[Vec<C>],
    objective: ObjectiveKind,
    constraints: &[LatencyConstraint],
    naive_guard: u128,
) -> Result<StageSolution> {
    match kind {
        SolverKind::Naive => naive_search(stages, objective, constraints, naive_guard),
        SolverKind::Iso => iso_latency_search(stages, objective, constraints),
        SolverKind::Cht => cht_search(stages, objective, constraints),
    }
}

fn check_stages<C: StageCost>(stages: &[Vec<C>]) -> Result<()> {
    if stages.is_empty() {
        return Err(Error::Validation("pipeline has no stages".into()));
    }
    if let Some(i) = stages.iter().position(|s| s.is_empty()) {
        return Err(Error::Infeasible(format!("stage {i} has no feasible candidate")));
    }
    for s in stages {
        for c in s {
            let ok = c.t_cmp() > 0.0
                && c.t_cmp().is_finite()
                && c.e_dyn() >= 0.0
                && c.p_static() >= 0.0
                && c.dollar_cost() >= 0.0;
            if !ok {
                return Err(Error::Validation(
                    "stage candidates need T_cmp > 0 and nonnegative energy, power and cost".into(),
                ));
            }
        }
    }
    Ok(())
}

fn filtered_error(constraints: &[LatencyConstraint]) -> Error {
    let names: Vec<&str> = constraints.iter().map(|c| c.name.as_str()).collect();
    Error::ConstraintFilter(names.join(", "))
}

/// Sorted distinct `T_cmp` values that satisfy every latency cap.
pub fn candidate_latencies<C: StageCost>(stages: &[Vec<C>], constraints: &[LatencyConstraint]) -> Vec<f64> {
    let mut q: Vec<f64> = stages.iter().flatten().map(StageCost::t_cmp).collect();
    q.sort_by(f64::total_cmp);
    q.dedup();
    q.retain(|&t| all_satisfied(constraints, t, stages.len()));
    q
}

/// Exhaustive `O(M^P)` enumeration. Ties prefer the smaller period, then the
/// lexicographically smaller tuple.
pub fn naive_search<C: StageCost>(
    stages: &[Vec<C>],
    objective: ObjectiveKind,
    constraints: &[LatencyConstraint],
    guard: u128,
) -> Result<StageSolution> {
    check_stages(stages)?;
    let size = stages
        .iter()
        .try_fold(1u128, |acc, s| acc.checked_mul(s.len() as u128))
        .unwrap_or(u128::MAX);
    if size > guard {
        return Err(Error::GuardExceeded { size, guard });
    }
    let p = stages.len();
    let mut counters = SearchCounters::default();
    let mut idx = vec![0usize; p];
    let mut best: Option<(f64, f64, Vec<usize>)> = None;
    loop {
        counters.tuples += 1;
        let period = idx
            .iter()
            .zip(stages)
            .map(|(&i, s)| s[i].t_cmp())
            .fold(f64::NEG_INFINITY, f64::max);
        if all_satisfied(constraints, period, p) {
            let mut sum = 0.0;
            for (&i, s) in idx.iter().zip(stages) {
                counters.evaluations += 1;
                sum += s[i].intercept(objective) + s[i].slope(objective) * period;
            }
            let obj = objective.finish(sum, period);
            let better = match &best {
                None => true,
                Some((bo, bt, _)) => obj < *bo || (obj == *bo && period < *bt),
            };
            if better {
                best = Some((obj, period, idx.clone()));
            }
        }
        // odometer increment, last stage fastest
        let mut k = p;
        loop {
            if k == 0 {
                let (objective, period, choice) = best.ok_or_else(|| filtered_error(constraints))?;
                return Ok(StageSolution {
                    period,
                    objective,
                    choice,
                    counters,
                });
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < stages[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Fixed-period decomposition: for every `T` in the candidate latencies each
/// stage independently takes its cheapest active candidate.
pub fn iso_latency_search<C: StageCost>(
    stages: &[Vec<C>],
    objective: ObjectiveKind,
    constraints: &[LatencyConstraint],
) -> Result<StageSolution> {
    check_stages(stages)?;
    let q = candidate_latencies(stages, constraints);
    let mut counters = SearchCounters::default();
    let mut best: Option<(f64, f64, Vec<usize>)> = None;
    for &t in &q {
        let mut sum = 0.0;
        let mut choice = Vec::with_capacity(stages.len());
        let mut feasible = true;
        for s in stages {
            let mut stage_best: Option<(usize, f64)> = None;
            for (i, c) in s.iter().enumerate() {
                counters.evaluations += 1;
                if let Some(v) = c.value_at(objective, t) {
                    counters.comparisons += 1;
                    if stage_best.is_none_or(|(_, bv)| v < bv) {
                        stage_best = Some((i, v));
                    }
                }
            }
            match stage_best {
                Some((i, v)) => {
                    sum += v;
                    choice.push(i);
                }
                None => {
                    feasible = false;
                }
            }
        }
        if !feasible {
            continue;
        }
        let obj = objective.finish(sum, t);
        counters.comparisons += 1;
        if best.as_ref().is_none_or(|(bo, _, _)| obj < *bo) {
            best = Some((obj, t, choice));
        }
    }
    let (objective, period, choice) = best.ok_or_else(|| filtered_error(constraints))?;
    Ok(StageSolution {
        period,
        objective,
        choice,
        counters,
    })
}

/// One affine piece of a stage's energy function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineSegment {
    pub slope: f64,
    pub intercept: f64,
    pub activation: f64,
    /// Index of the candidate in its stage list.
    pub key: usize,
}

impl AffineSegment {
    pub fn at(&self, t: f64) -> f64 {
        self.intercept + self.slope * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HullEntry {
    seg: AffineSegment,
    /// Abscissa where this segment becomes the minimum (−∞ for the first).
    from: f64,
}

/// Lower envelope of lines, slopes strictly decreasing left to right.
#[derive(Debug, Clone, Default)]
pub struct Hull {
    entries: Vector<HullEntry>,
}

/// `true` when `b` never lies strictly below both `a` and `c`
/// (slopes `a > b > c`). Cross-multiplied to avoid division.
fn irrelevant(a: &AffineSegment, b: &AffineSegment, c: &AffineSegment) -> bool {
    (b.intercept - a.intercept) * (a.slope - c.slope) >= (c.intercept - a.intercept) * (a.slope - b.slope)
}

fn crossover(a: &AffineSegment, b: &AffineSegment) -> f64 {
    (b.intercept - a.intercept) / (a.slope - b.slope)
}

impl Hull {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn segments(&self) -> Vec<AffineSegment> {
        self.entries.iter().map(|e| e.seg).collect()
    }

    /// Crossover abscissae between consecutive segments.
    pub fn crossovers(&self) -> Vec<f64> {
        self.entries.iter().skip(1).map(|e| e.from).collect()
    }

    fn refresh_from(&mut self, i: usize) {
        if i >= self.entries.len() {
            return;
        }
        let from = if i == 0 {
            f64::NEG_INFINITY
        } else {
            crossover(&self.entries[i - 1].seg, &self.entries[i].seg)
        };
        self.entries[i].from = from;
    }

    fn insert(&mut self, seg: AffineSegment, counters: &mut SearchCounters) {
        // first position whose slope is <= the new slope
        let (mut lo, mut hi) = (0usize, self.entries.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            counters.comparisons += 1;
            if self.entries[mid].seg.slope > seg.slope {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let mut pos = lo;
        let mut replaced = false;
        if pos < self.entries.len() {
            counters.comparisons += 1;
            let cur = self.entries[pos].seg;
            if cur.slope == seg.slope {
                counters.comparisons += 1;
                let keep_old = cur.intercept < seg.intercept || (cur.intercept == seg.intercept && cur.key < seg.key);
                if keep_old {
                    return;
                }
                self.entries.remove(pos);
                replaced = true;
            }
        }
        if pos > 0 && pos < self.entries.len() {
            counters.comparisons += 1;
            if irrelevant(&self.entries[pos - 1].seg, &seg, &self.entries[pos].seg) {
                if replaced {
                    self.refresh_from(pos);
                }
                return;
            }
        }
        self.entries.insert(
            pos,
            HullEntry {
                seg,
                from: f64::NEG_INFINITY,
            },
        );
        while pos >= 2 {
            counters.comparisons += 1;
            if irrelevant(&self.entries[pos - 2].seg, &self.entries[pos - 1].seg, &seg) {
                self.entries.remove(pos - 1);
                pos -= 1;
            } else {
                break;
            }
        }
        while pos + 2 < self.entries.len() {
            counters.comparisons += 1;
            if irrelevant(&seg, &self.entries[pos + 1].seg, &self.entries[pos + 2].seg) {
                self.entries.remove(pos + 1);
            } else {
                break;
            }
        }
        self.refresh_from(pos);
        self.refresh_from(pos + 1);
    }

    /// Minimum over the hull at `t`, ties toward the smaller key.
    pub fn query(&self, t: f64, counters: &mut SearchCounters) -> Option<(usize, f64)> {
        if self.entries.is_empty() {
            return None;
        }
        // last entry whose `from` is <= t
        let (mut lo, mut hi) = (0usize, self.entries.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            counters.comparisons += 1;
            if self.entries[mid].from <= t {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let at = lo.saturating_sub(1);
        // the crossover is computed in floating point; confirm against neighbours
        let first = at.saturating_sub(1);
        let last = (at + 1).min(self.entries.len() - 1);
        let mut best: Option<(usize, f64)> = None;
        for e in self.entries.iter().skip(first).take(last - first + 1) {
            counters.evaluations += 1;
            let v = e.seg.at(t);
            counters.comparisons += 1;
            let better = match best {
                None => true,
                Some((bk, bv)) => v < bv || (v == bv && e.seg.key < bk),
            };
            if better {
                best = Some((e.seg.key, v));
            }
        }
        best
    }
}

/// Persistent lower hulls: `hulls[i]` covers every segment whose activation
/// is at most `thresholds[i]`.
#[derive(Debug, Clone)]
pub struct ThresholdHulls {
    thresholds: Vec<f64>,
    hulls: Vec<Hull>,
}

impl ThresholdHulls {
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn hull(&self, i: usize) -> &Hull {
        &self.hulls[i]
    }

    /// `None` when `t` lies below every activation.
    pub fn query(&self, t: f64, counters: &mut SearchCounters) -> Option<(usize, f64)> {
        let (mut lo, mut hi) = (0usize, self.thresholds.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            counters.comparisons += 1;
            if self.thresholds[mid] <= t {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo == 0 {
            return None;
        }
        self.hulls[lo - 1].query(t, counters)
    }
}

pub fn build_threshold_hulls<C: StageCost>(
    candidates: &[C],
    objective: ObjectiveKind,
    counters: &mut SearchCounters,
) -> ThresholdHulls {
    let mut segs: Vec<AffineSegment> = candidates
        .iter()
        .enumerate()
        .map(|(key, c)| AffineSegment {
            slope: c.slope(objective),
            intercept: c.intercept(objective),
            activation: c.t_cmp(),
            key,
        })
        .collect();
    segs.sort_by(|a, b| {
        counters.comparisons += 1;
        a.activation.total_cmp(&b.activation).then(a.key.cmp(&b.key))
    });
    let mut thresholds = Vec::new();
    let mut hulls: Vec<Hull> = Vec::new();
    let mut current = Hull::default();
    for (i, seg) in segs.iter().enumerate() {
        current.insert(*seg, counters);
        let last_of_threshold = segs.get(i + 1).is_none_or(|n| n.activation != seg.activation);
        if last_of_threshold {
            thresholds.push(seg.activation);
            hulls.push(current.clone());
        }
    }
    ThresholdHulls { thresholds, hulls }
}

/// Iso-latency search with per-stage minima answered by threshold hulls.
pub fn cht_search<C: StageCost>(
    stages: &[Vec<C>],
    objective: ObjectiveKind,
    constraints: &[LatencyConstraint],
) -> Result<StageSolution> {
    check_stages(stages)?;
    let mut counters = SearchCounters::default();
    let hulls: Vec<ThresholdHulls> = stages
        .iter()
        .map(|s| build_threshold_hulls(s, objective, &mut counters))
        .collect();
    let q = candidate_latencies(stages, constraints);
    let mut best: Option<(f64, f64, Vec<usize>)> = None;
    'periods: for &t in &q {
        let mut sum = 0.0;
        let mut choice = Vec::with_capacity(stages.len());
        for h in &hulls {
            match h.query(t, &mut counters) {
                Some((key, v)) => {
                    sum += v;
                    choice.push(key);
                }
                None => continue 'periods,
            }
        }
        let obj = objective.finish(sum, t);
        counters.comparisons += 1;
        if best.as_ref().is_none_or(|(bo, _, _)| obj < *bo) {
            best = Some((obj, t, choice));
        }
    }
    let (objective, period, choice) = best.ok_or_else(|| filtered_error(constraints))?;
    Ok(StageSolution {
        period,
        objective,
        choice,
        counters,
    })
}

/// An evaluated pipeline: one candidate per fusion group at a common period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceleratorDesign {
    pub network: String,
    pub stages: Vec<StageCandidate>,
    /// Pipeline period, seconds per sample.
    pub period: f64,
    pub objective: f64,
    pub objective_kind: ObjectiveKind,
}

impl AcceleratorDesign {
    pub fn from_solution(
        network: impl Into<String>,
        stages: &[Vec<StageCandidate>],
        solution: &StageSolution,
        objective_kind: ObjectiveKind,
    ) -> Self {
        AcceleratorDesign {
            network: network.into(),
            stages: solution
                .choice
                .iter()
                .zip(stages)
                .map(|(&i, s)| s[i].clone())
                .collect(),
            period: solution.period,
            objective: solution.objective,
            objective_kind,
        }
    }

    pub fn max_t_cmp(&self) -> f64 {
        self.stages.iter().map(|s| s.t_cmp).fold(0.0, f64::max)
    }

    /// Σ stage energies at the design period (per sample).
    pub fn energy(&self) -> f64 {
        self.stages.iter().filter_map(|s| s.energy_at(self.period)).sum()
    }

    /// Dollar cost of the attached memory modules.
    pub fn memory_cost(&self) -> f64 {
        self.stages.iter().map(|s| s.memory.dollar_cost()).sum()
    }

    pub fn stage_cost(&self) -> f64 {
        self.stages.iter().map(|s| s.dollar_cost).sum()
    }

    /// Recomputes the optimized objective from the stage list.
    pub fn recompute_objective(&self) -> f64 {
        let sum: f64 = self
            .stages
            .iter()
            .map(|s| s.intercept(self.objective_kind) + s.slope(self.objective_kind) * self.period)
            .sum();
        self.objective_kind.finish(sum, self.period)
    }

    /// The `(ΣE)·(ΣC)` reading of cost-aware objectives, for reports.
    pub fn product_convention(&self) -> f64 {
        let e = self.energy();
        let v = if self.objective_kind.cost_aware() { e * self.stage_cost() } else { e };
        self.objective_kind.finish(v, self.period)
    }

    pub fn satisfies(&self, constraints: &[LatencyConstraint]) -> bool {
        self.period >= self.max_t_cmp() && all_satisfied(constraints, self.period, self.stages.len())
    }
}

/// Deterministic min for (value, key) pairs.
pub fn cmp_value_key(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opt(t: f64, e: f64, p: f64) -> StageOption {
        StageOption {
            t_cmp: t,
            e_dyn: e,
            p_static: p,
            dollar_cost: 1.0,
        }
    }

    fn hand_instance() -> Vec<Vec<StageOption>> {
        vec![vec![opt(1.0, 5.0, 1.0), opt(2.0, 1.0, 1.0)], vec![opt(2.0, 1.0, 1.0)]]
    }

    #[test]
    fn hand_instance_all_solvers() {
        let st = hand_instance();
        for sol in [
            naive_search(&st, ObjectiveKind::Energy, &[], 1_000).unwrap(),
            iso_latency_search(&st, ObjectiveKind::Energy, &[]).unwrap(),
            cht_search(&st, ObjectiveKind::Energy, &[]).unwrap(),
        ] {
            assert_eq!(sol.objective, 6.0);
            assert_eq!(sol.period, 2.0);
            assert_eq!(sol.choice, vec![1, 0]);
        }
    }

    #[test]
    fn single_stage_picks_own_minimum() {
        let st = vec![vec![opt(1.0, 5.0, 1.0), opt(3.0, 1.0, 0.1), opt(2.0, 4.0, 0.0)]];
        let s = naive_search(&st, ObjectiveKind::Energy, &[], 100).unwrap();
        assert_eq!(s.choice, vec![1]);
        assert!((s.objective - 1.3).abs() < 1e-12);
    }

    #[test]
    fn tuple_count_and_guard() {
        let st = vec![vec![opt(1.0, 1.0, 1.0); 3]; 4];
        let s = naive_search(&st, ObjectiveKind::Energy, &[], 81).unwrap();
        assert_eq!(s.counters.tuples, 81);
        assert!(matches!(
            naive_search(&st, ObjectiveKind::Energy, &[], 80),
            Err(Error::GuardExceeded { size: 81, guard: 80 })
        ));
    }

    #[test]
    fn constraint_filter_is_named() {
        let st = hand_instance();
        let c = [LatencyConstraint::period("TPOT", 0.5)];
        for r in [
            naive_search(&st, ObjectiveKind::Energy, &c, 100),
            iso_latency_search(&st, ObjectiveKind::Energy, &c),
            cht_search(&st, ObjectiveKind::Energy, &c),
        ] {
            match r {
                Err(Error::ConstraintFilter(n)) => assert_eq!(n, "TPOT"),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn latencies_union() {
        let st = vec![vec![opt(1.0, 0.0, 0.0), opt(3.0, 0.0, 0.0)], vec![opt(2.0, 0.0, 0.0), opt(3.0, 0.0, 0.0)]];
        assert_eq!(candidate_latencies(&st, &[]), vec![1.0, 2.0, 3.0]);
        let same = vec![vec![opt(0.5, 0.0, 0.0); 3]];
        assert_eq!(candidate_latencies(&same, &[]), vec![0.5]);
    }

    #[test]
    fn iso_evaluation_count() {
        let st = vec![
            vec![opt(1.0, 1.0, 1.0), opt(2.0, 1.0, 1.0), opt(3.0, 1.0, 1.0)],
            vec![opt(1.5, 1.0, 1.0), opt(2.0, 2.0, 1.0), opt(4.0, 1.0, 1.0)],
        ];
        let s = iso_latency_search(&st, ObjectiveKind::Edp, &[]).unwrap();
        let q = candidate_latencies(&st, &[]).len() as u64;
        assert_eq!(s.counters.evaluations, 3 * 2 * q);
    }

    #[test]
    fn parallel_segment_with_higher_intercept_dropped() {
        let cands = [opt(1.0, 1.0, 2.0), opt(1.0, 3.0, 2.0)];
        let mut c = SearchCounters::default();
        let h = build_threshold_hulls(&cands, ObjectiveKind::Energy, &mut c);
        assert_eq!(h.thresholds(), &[1.0]);
        assert_eq!(h.hull(0).len(), 1);
        assert_eq!(h.hull(0).segments()[0].key, 0);
    }

    #[test]
    fn query_boundaries() {
        let cands = [opt(2.0, 1.0, 1.0), opt(3.0, 0.0, 0.5)];
        let mut c = SearchCounters::default();
        let h = build_threshold_hulls(&cands, ObjectiveKind::Energy, &mut c);
        assert_eq!(h.query(1.9, &mut c), None);
        assert_eq!(h.query(2.0, &mut c), Some((0, 3.0)));
        // at exactly 3.0 the second hull is used: 0 + 1.5 < 1 + 3
        assert_eq!(h.query(3.0, &mut c), Some((1, 1.5)));
    }

    #[test]
    fn hull_invariants_hold() {
        let cands: Vec<StageOption> = (0..40)
            .map(|i| {
                let x = i as f64;
                opt(1.0 + (i % 5) as f64, (x * 7.3) % 11.0, (x * 3.1) % 5.0)
            })
            .collect();
        let mut c = SearchCounters::default();
        let h = build_threshold_hulls(&cands, ObjectiveKind::Energy, &mut c);
        for i in 0..h.thresholds().len() {
            let segs = h.hull(i).segments();
            assert!(segs.windows(2).all(|w| w[0].slope > w[1].slope));
            assert!(segs.iter().all(|s| s.activation <= h.thresholds()[i]));
            let xs = h.hull(i).crossovers();
            assert!(xs.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn end_to_end_uses_stage_count() {
        let c = LatencyConstraint::end_to_end("TTFT", 2.5);
        assert!(c.satisfied(0.2, 10));
        assert!((c.slack(0.2, 10) - 0.5).abs() < 1e-12);
        assert!(!c.with_extra_periods(3).satisfied(0.2, 10));
        assert!(LatencyConstraint::period("TPOT", 0.15).satisfied(0.15, 4));
    }
}
