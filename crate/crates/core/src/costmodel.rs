//! Manufacturing cost: yield-scaled die cost, packaging, NRE amortization and
//! the composite energy/cost/delay metrics.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cht::{AcceleratorDesign, ObjectiveKind};
use crate::error::{Error, Result};
use crate::perfmodel::ChipletKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bonding {
    TwoD,
    TwoPointFiveD,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Dollars per 300 mm wafer.
    pub wafer_cost: f64,
    pub wafer_diameter_mm: f64,
    /// Defects per mm².
    pub defect_density: f64,
    /// Negative-binomial clustering parameter.
    pub clustering: f64,
    pub reticle_limit_mm2: f64,
    pub package_base: f64,
    pub package_per_mm2: f64,
    pub bonding: Bonding,
    pub bonding_2d_multiplier: f64,
    pub bonding_25d_multiplier: f64,
    pub nre_per_chiplet_design: f64,
    pub nre_per_package_design: f64,
    pub volume: f64,
    pub networks_sharing_pool: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            wafer_cost: 6500.0,
            wafer_diameter_mm: 300.0,
            defect_density: 0.001,
            clustering: 3.0,
            reticle_limit_mm2: 858.0,
            package_base: 10.0,
            package_per_mm2: 0.02,
            bonding: Bonding::TwoPointFiveD,
            bonding_2d_multiplier: 1.0,
            bonding_25d_multiplier: 1.6,
            nre_per_chiplet_design: 30.0e6,
            nre_per_package_design: 5.0e6,
            volume: 1.0e6,
            networks_sharing_pool: 200.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wafer_cost", self.wafer_cost),
            ("wafer_diameter", self.wafer_diameter_mm),
            ("reticle_limit", self.reticle_limit_mm2),
            ("volume", self.volume),
            ("networks_sharing_pool", self.networks_sharing_pool),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("cost parameter {name} must be positive")));
            }
        }
        let nonneg = [
            ("defect_density", self.defect_density),
            ("package_base", self.package_base),
            ("package_per_mm2", self.package_per_mm2),
            ("nre_per_chiplet_design", self.nre_per_chiplet_design),
            ("nre_per_package_design", self.nre_per_package_design),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("cost parameter {name} must be >= 0")));
            }
        }
        if self.clustering < 1.0 {
            return Err(Error::Validation("clustering must be >= 1".into()));
        }
        Ok(())
    }

    fn bonding_multiplier(&self) -> f64 {
        match self.bonding {
            Bonding::TwoD => self.bonding_2d_multiplier,
            Bonding::TwoPointFiveD => self.bonding_25d_multiplier,
        }
    }
}

/// Negative-binomial die yield `(1 + A·D0/α)^(−α)`.
pub fn die_yield(area: f64, params: &CostParams) -> f64 {
    (1.0 + area * params.defect_density / params.clustering).powf(-params.clustering)
}

/// Gross dies per wafer, `π(d/2)²/A − πd/√(2A)`, floored.
pub fn gross_dies(area: f64, params: &CostParams) -> f64 {
    let d = params.wafer_diameter_mm;
    let r = d / 2.0;
    (PI * r * r / area - PI * d / (2.0 * area).sqrt()).floor()
}

pub fn die_cost(area: f64, params: &CostParams) -> Result<f64> {
    if !(area > 0.0) {
        return Err(Error::Validation("die area must be positive".into()));
    }
    if area > params.reticle_limit_mm2 {
        return Err(Error::Infeasible(format!(
            "die area {area:.1} mm² exceeds reticle limit {:.1} mm²",
            params.reticle_limit_mm2
        )));
    }
    let dies = gross_dies(area, params);
    if dies < 1.0 {
        return Err(Error::Infeasible(format!("no whole die of {area:.1} mm² fits a wafer")));
    }
    let k_die = params.wafer_cost / dies;
    Ok(k_die / die_yield(area, params))
}

pub fn packaging_cost(interposer_area: f64, params: &CostParams) -> f64 {
    params.package_base + params.package_per_mm2 * interposer_area * params.bonding_multiplier()
}

/// Recurring cost of one accelerator: replicated dies, memory modules and the
/// package sized by `interposer_area` (mm²).
pub fn design_re_cost(design: &AcceleratorDesign, interposer_area: f64, params: &CostParams) -> f64 {
    let stages: f64 = design.stages.iter().map(|s| s.dollar_cost).sum();
    stages + packaging_cost(interposer_area, params)
}

pub fn nre_per_unit(ecosystem_size: usize, params: &CostParams) -> f64 {
    (params.nre_per_chiplet_design * ecosystem_size as f64 + params.nre_per_package_design)
        / (params.volume * params.networks_sharing_pool)
}

pub fn amortized_unit_cost(re_cost: f64, ecosystem: &BTreeSet<ChipletKey>, params: &CostParams) -> f64 {
    re_cost + nre_per_unit(ecosystem.len(), params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostMode {
    ReOnly,
    Amortized,
}

impl std::str::FromStr for CostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "re" | "re-only" => Ok(CostMode::ReOnly),
            "amortized" => Ok(CostMode::Amortized),
            other => Err(Error::unknown("cost mode", other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelayMode {
    /// Delay is the pipeline period.
    Period,
    /// Delay is a single input's trip through every stage.
    EndToEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub energy: f64,
    pub delay: f64,
    pub dollar_cost: f64,
}

impl MetricSet {
    pub fn ec(&self) -> f64 {
        self.energy * self.dollar_cost
    }

    pub fn edp(&self) -> f64 {
        self.energy * self.delay
    }

    pub fn edpc(&self) -> f64 {
        self.edp() * self.dollar_cost
    }

    pub fn get(&self, kind: ObjectiveKind) -> f64 {
        match kind {
            ObjectiveKind::Energy => self.energy,
            ObjectiveKind::Ec => self.ec(),
            ObjectiveKind::Edp => self.edp(),
            ObjectiveKind::Edpc => self.edpc(),
        }
    }
}

/// Context needed to price a design beyond its stage list.
#[derive(Debug, Clone)]
pub struct CostContext<'a> {
    pub params: &'a CostParams,
    pub interposer_area: f64,
    pub ecosystem: &'a BTreeSet<ChipletKey>,
}

pub fn metrics(
    design: &AcceleratorDesign,
    delay_mode: DelayMode,
    cost_mode: CostMode,
    ctx: &CostContext<'_>,
) -> Result<MetricSet> {
    let t = design.period;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Validation("design has no evaluated pipeline period".into()));
    }
    let mut energy = 0.0;
    for s in &design.stages {
        energy += s
            .energy_at(t)
            .ok_or_else(|| Error::Validation("period below a stage's minimal latency".into()))?;
    }
    let delay = match delay_mode {
        DelayMode::Period => t,
        DelayMode::EndToEnd => design.stages.len() as f64 * t,
    };
    let re = design_re_cost(design, ctx.interposer_area, ctx.params);
    let dollar_cost = match cost_mode {
        CostMode::ReOnly => re,
        CostMode::Amortized => amortized_unit_cost(re, ctx.ecosystem, ctx.params),
    };
    Ok(MetricSet {
        energy,
        delay,
        dollar_cost,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub volume: f64,
    pub die: f64,
    pub memory: f64,
    pub packaging: f64,
    pub nre: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.die + self.memory + self.packaging + self.nre
    }
}

/// Die / memory / packaging / amortized-NRE split at one production volume.
pub fn cost_breakdown(
    design: &AcceleratorDesign,
    interposer_area: f64,
    ecosystem_size: usize,
    volume: f64,
    params: &CostParams,
) -> CostBreakdown {
    let die = design
        .stages
        .iter()
        .map(|s| s.dollar_cost - s.memory.dollar_cost())
        .sum();
    let memory = design.stages.iter().map(|s| s.memory.dollar_cost()).sum();
    let p = CostParams {
        volume,
        ..params.clone()
    };
    CostBreakdown {
        volume,
        die,
        memory,
        packaging: packaging_cost(interposer_area, params),
        nre: nre_per_unit(ecosystem_size, &p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yield_limits_and_hand_value() {
        let p = CostParams {
            defect_density: 0.001,
            clustering: 3.0,
            ..CostParams::default()
        };
        assert!((die_yield(1e-9, &p) - 1.0).abs() < 1e-9);
        // (1 + 0.1/3)^-3
        let expected = (1.0f64 + 0.1 / 3.0).powi(-3);
        assert!((die_yield(100.0, &p) - expected).abs() < 1e-12);
        assert!((die_yield(100.0, &p) - 0.9063).abs() < 5e-5);
        assert!(die_yield(200.0, &p) < die_yield(100.0, &p));
    }

    #[test]
    fn perfect_yield_cost_is_wafer_over_dies() {
        let p = CostParams {
            defect_density: 0.0,
            ..CostParams::default()
        };
        for a in [10.0, 50.0, 123.0] {
            let c = die_cost(a, &p).unwrap();
            assert_eq!(c, p.wafer_cost / gross_dies(a, &p));
        }
    }

    #[test]
    fn reticle_limit_enforced() {
        let p = CostParams::default();
        assert!(die_cost(p.reticle_limit_mm2 + 1.0, &p).is_err());
    }

    #[test]
    fn partitioning_reduces_die_cost() {
        let p = CostParams::default();
        let mono = die_cost(400.0, &p).unwrap();
        let split = 4.0 * die_cost(100.0, &p).unwrap();
        assert!(split < mono, "{split} !< {mono}");
    }

    #[test]
    fn nre_amortization() {
        let p = CostParams {
            volume: 1.0,
            networks_sharing_pool: 1.0,
            ..CostParams::default()
        };
        let eco: BTreeSet<ChipletKey> = BTreeSet::new();
        let c = amortized_unit_cost(100.0, &eco, &p);
        assert_eq!(c, 100.0 + p.nre_per_package_design);
        let big = CostParams {
            volume: 1e15,
            ..p.clone()
        };
        assert!((amortized_unit_cost(100.0, &eco, &big) - 100.0).abs() < 1e-6);
    }

    #[test]
    fn pool_nre_much_smaller_than_per_network() {
        let p = CostParams::default();
        let pooled = nre_per_unit(8, &p);
        let unique = nre_per_unit(8 * p.networks_sharing_pool as usize, &p);
        assert!(unique / pooled > 0.5 * p.networks_sharing_pool);
    }

    #[test]
    fn metric_products() {
        let m = MetricSet {
            energy: 2.0,
            delay: 3.0,
            dollar_cost: 5.0,
        };
        assert_eq!(m.ec(), 10.0);
        assert_eq!(m.edp(), 6.0);
        assert_eq!(m.edpc(), 30.0);
    }
}
