//! Architectural paradigm comparison: one chiplet for everything, one chiplet
//! per network, a budgeted shared pool, and an unbudgeted menu per network.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;

use crate::cht::{AcceleratorDesign, ObjectiveKind};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::perfmodel::ChipletKey;
use crate::pool::{aggregate, anneal, exhaustive_pool_search, pools_of_size, ChipletPool, InnerSearch, NetworkTask, PoolEvaluation, PoolScorer};

/// Above this many candidate pools the budgeted pool is annealed instead of
/// enumerated.
pub const POOL_ENUMERATION_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Paradigm {
    AsicAll,
    Nsic,
    Pool,
    Unconstrained,
}

impl Paradigm {
    pub const ALL: [Paradigm; 4] = [Paradigm::AsicAll, Paradigm::Nsic, Paradigm::Pool, Paradigm::Unconstrained];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::AsicAll => "homogeneous-asic-all",
            Paradigm::Nsic => "homogeneous-nsic",
            Paradigm::Pool => "heterogeneous-pool",
            Paradigm::Unconstrained => "heterogeneous-unconstrained",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Paradigm::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::unknown("paradigm", s))
    }
}

#[derive(Debug, Clone)]
pub struct CompareParams {
    /// Chiplets every paradigm draws from.
    pub menu: Vec<ChipletKey>,
    /// Size of the shared heterogeneous pool.
    pub budget: usize,
    pub inner: InnerSearch,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParadigmOutcome {
    pub paradigm: Paradigm,
    pub metric: ObjectiveKind,
    /// Pool each network was built from.
    pub pools: Vec<String>,
    pub objectives: Vec<f64>,
    /// Per network, relative to homogeneous-asic-all.
    pub normalized: Vec<f64>,
    /// Aggregate of `normalized` under the configured aggregation.
    pub aggregate: f64,
    #[serde(skip)]
    pub designs: Vec<Option<AcceleratorDesign>>,
}

impl ParadigmOutcome {
    /// Distinct chiplets the designs actually use.
    pub fn chiplets_used(&self) -> BTreeSet<ChipletKey> {
        self.designs
            .iter()
            .flatten()
            .flat_map(|d| d.stages.iter().map(|s| s.chiplet.key))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub networks: Vec<String>,
    pub outcomes: Vec<ParadigmOutcome>,
}

impl Comparison {
    pub fn get(&self, paradigm: Paradigm, metric: ObjectiveKind) -> Option<&ParadigmOutcome> {
        self.outcomes.iter().find(|o| o.paradigm == paradigm && o.metric == metric)
    }

    /// Pool over unconstrained objective per network, when both ran.
    pub fn pool_gap(&self, metric: ObjectiveKind) -> Option<Vec<f64>> {
        let p = self.get(Paradigm::Pool, metric)?;
        let u = self.get(Paradigm::Unconstrained, metric)?;
        Some(p.objectives.iter().zip(&u.objectives).map(|(a, b)| a / b).collect())
    }

    /// `paradigm,metric,network,pool,objective,normalized`, one row per
    /// network plus an `aggregate` row per paradigm and metric.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("paradigm,metric,network,pool,objective,normalized\n");
        for o in &self.outcomes {
            for (i, n) in self.networks.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{},{},{}", o.paradigm, o.metric, n, o.pools[i], o.objectives[i], o.normalized[i]);
            }
            let _ = writeln!(s, "{},{},aggregate,,,{}", o.paradigm, o.metric, o.aggregate);
        }
        s
    }

    /// `metric,network,ratio`: heterogeneous-pool over unconstrained.
    pub fn gap_csv(&self) -> String {
        let mut s = String::from("metric,network,ratio\n");
        for m in ObjectiveKind::ALL {
            if let Some(g) = self.pool_gap(m) {
                for (n, r) in self.networks.iter().zip(g) {
                    let _ = writeln!(s, "{m},{n},{r}");
                }
            }
        }
        s
    }
}

fn outcome(paradigm: Paradigm, metric: ObjectiveKind, e: &PoolEvaluation, scorer: &PoolScorer<'_>) -> ParadigmOutcome {
    let normalized: Vec<f64> = e.objectives.iter().zip(&scorer.references).map(|(o, r)| o / r).collect();
    ParadigmOutcome {
        paradigm,
        metric,
        pools: vec![e.pool.to_string(); e.objectives.len()],
        aggregate: aggregate(&normalized, scorer.aggregation),
        objectives: e.objectives.clone(),
        normalized,
        designs: e.designs.clone(),
    }
}

/// Runs the requested paradigms under every metric. homogeneous-asic-all is
/// always evaluated since it anchors the normalization.
pub fn compare_paradigms(tasks: &[NetworkTask], cfg: &Config, params: &CompareParams, paradigms: &[Paradigm]) -> Result<Comparison> {
    if tasks.is_empty() {
        return Err(Error::Validation("no target networks".into()));
    }
    let menu: Vec<ChipletKey> = ChipletPool::new(params.menu.clone())?.members().to_vec();
    let wanted: BTreeSet<Paradigm> = paradigms.iter().copied().collect();
    let n = tasks.len();
    let mut outcomes = Vec::new();
    for metric in ObjectiveKind::ALL {
        let ones = vec![1.0; n];
        let mut scorer = match &params.inner {
            InnerSearch::Exhaustive => PoolScorer::exhaustive_over(tasks, cfg, metric, &menu, ones)?,
            inner => PoolScorer::new(tasks, cfg, metric, inner.clone(), ones, params.seed),
        };
        let asic = exhaustive_pool_search(&menu, 1, &mut scorer)?;
        if asic.objectives.iter().any(|o| !o.is_finite()) {
            return Err(Error::Infeasible(format!(
                "{}: no single chiplet serves every network under {metric}",
                Paradigm::AsicAll
            )));
        }
        scorer.set_references(asic.objectives.clone());
        let asic = scorer.score(&asic.pool)?;
        let mut rows = vec![outcome(Paradigm::AsicAll, metric, &asic, &scorer)];

        if wanted.contains(&Paradigm::Nsic) || wanted.contains(&Paradigm::Pool) {
            let singles: Vec<PoolEvaluation> = pools_of_size(&menu, 1)
                .iter()
                .map(|p| scorer.score(p))
                .collect::<Result<_>>()?;
            let mut nsic = outcome(Paradigm::Nsic, metric, &asic, &scorer);
            for i in 0..n {
                // first chiplet on ties
                let best = singles
                    .iter()
                    .min_by(|a, b| a.objectives[i].total_cmp(&b.objectives[i]))
                    .expect("menu is nonempty");
                nsic.pools[i] = best.pool.to_string();
                nsic.objectives[i] = best.objectives[i];
                nsic.normalized[i] = best.objectives[i] / scorer.references[i];
                nsic.designs[i] = best.designs[i].clone();
            }
            nsic.aggregate = aggregate(&nsic.normalized, scorer.aggregation);
            let nsic_chips: BTreeSet<ChipletKey> = nsic.chiplets_used();
            if wanted.contains(&Paradigm::Nsic) {
                rows.push(nsic);
            }
            if wanted.contains(&Paradigm::Pool) {
                let k = params.budget.clamp(1, menu.len());
                let e = if pools_of_size_count(menu.len(), k) <= POOL_ENUMERATION_LIMIT {
                    exhaustive_pool_search(&menu, k, &mut scorer)?
                } else {
                    let initial = seed_pool(&menu, &nsic_chips, k)?;
                    anneal(&mut scorer, &initial, &cfg.space, &cfg.sa, params.seed)?.best
                };
                rows.push(outcome(Paradigm::Pool, metric, &e, &scorer));
            }
        }
        if wanted.contains(&Paradigm::Unconstrained) {
            let e = scorer.score(&ChipletPool::new(menu.clone())?)?;
            rows.push(outcome(Paradigm::Unconstrained, metric, &e, &scorer));
        }
        outcomes.extend(rows.into_iter().filter(|r| wanted.contains(&r.paradigm) || r.paradigm == Paradigm::AsicAll));
    }
    Ok(Comparison {
        networks: tasks.iter().map(|t| t.graph.name.clone()).collect(),
        outcomes,
    })
}

fn pools_of_size_count(m: usize, k: usize) -> usize {
    let mut c: u128 = 1;
    for i in 0..k as u128 {
        c = c * (m as u128 - i) / (i + 1);
        if c > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    c as usize
}

/// Per-network favourites first, then menu order, truncated to `k`.
fn seed_pool(menu: &[ChipletKey], favourites: &BTreeSet<ChipletKey>, k: usize) -> Result<ChipletPool> {
    let mut members: Vec<ChipletKey> = favourites.iter().copied().take(k).collect();
    for m in menu {
        if members.len() >= k {
            break;
        }
        if !members.contains(m) {
            members.push(*m);
        }
    }
    ChipletPool::new(members)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_counts() {
        assert_eq!(pools_of_size_count(8, 3), 56);
        assert_eq!(pools_of_size_count(48, 8), 377_348_994);
        assert_eq!(pools_of_size_count(5, 0), 1);
    }

    #[test]
    fn paradigm_names_round_trip() {
        for p in Paradigm::ALL {
            assert_eq!(p.name().parse::<Paradigm>().unwrap(), p);
        }
        assert!("gpu".parse::<Paradigm>().is_err());
    }
}
