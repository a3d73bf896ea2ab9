//! Toolkit configuration: technology coefficients, menus, cost parameters and
//! search budgets. Defaults are embedded; a config file in the record format
//! overrides individual keys.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costmodel::{Bonding, CostParams};
use crate::error::{Error, Result};
use crate::perfmodel::{validate_memory_menu, AffinityTable, Dataflow, MemoryKind, MemoryModule, TechParams};
use crate::records::{parse_records, Record};
use crate::workload::OpKind;

pub const PE_SCALES: [u32; 4] = [1, 2, 3, 4];
pub const GLB_SCALES: [u32; 4] = [1, 4, 9, 16];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub tp: Vec<u32>,
    pub batches: Vec<u64>,
    pub pool_budget: usize,
    pub naive_guard: u128,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            tp: vec![1, 2],
            batches: vec![1],
            pool_budget: 8,
            naive_guard: 10_000_000,
        }
    }
}

/// Menus the pool annealer may move through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipletSpace {
    pub dataflows: Vec<Dataflow>,
    pub pe_scales: Vec<u32>,
    pub glb_scales: Vec<u32>,
}

impl Default for ChipletSpace {
    fn default() -> Self {
        ChipletSpace {
            dataflows: Dataflow::ALL.to_vec(),
            pe_scales: PE_SCALES.to_vec(),
            glb_scales: GLB_SCALES.to_vec(),
        }
    }
}

impl ChipletSpace {
    pub fn size(&self) -> usize {
        self.dataflows.len() * self.pe_scales.len() * self.glb_scales.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population: 10,
            generations: 10,
            mutation_rate: 0.2,
            crossover_rate: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    GeoMean,
    WorstCase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaParams {
    pub init_temp: f64,
    pub cooling: f64,
    pub iters_per_level: usize,
    pub floor: f64,
    pub max_evaluations: usize,
    /// Reduced GA budget used while scoring pools.
    pub inner_population: usize,
    pub inner_generations: usize,
    pub aggregation: Aggregation,
}

impl Default for SaParams {
    fn default() -> Self {
        SaParams {
            init_temp: 1.0,
            cooling: 0.95,
            iters_per_level: 5,
            floor: 1e-3,
            max_evaluations: 1000,
            inner_population: 6,
            inner_generations: 4,
            aggregation: Aggregation::GeoMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnrParams {
    /// Routing tracks per grid edge.
    pub edge_capacity: u32,
    /// Largest interposer side tried, in grid units.
    pub max_side: u32,
    /// Grid pitch in mm.
    pub grid_mm: f64,
    /// Interface bandwidth per mm of chiplet edge (bytes/s), for reports.
    pub edge_bandwidth_per_mm: f64,
}

impl Default for PnrParams {
    fn default() -> Self {
        PnrParams {
            edge_capacity: 4,
            max_side: 2000,
            grid_mm: 0.1,
            edge_bandwidth_per_mm: 100.0e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub tile_bytes: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams { tile_bytes: 64 * 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub tech: TechParams,
    pub memories: Vec<MemoryModule>,
    pub affinity: AffinityTable,
    pub cost: CostParams,
    pub search: SearchOptions,
    pub space: ChipletSpace,
    pub ga: GaParams,
    pub sa: SaParams,
    pub pnr: PnrParams,
    pub sim: SimParams,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            tech: TechParams::default(),
            memories: MemoryModule::default_menu(),
            affinity: AffinityTable::default(),
            cost: CostParams::default(),
            search: SearchOptions::default(),
            space: ChipletSpace::default(),
            ga: GaParams::default(),
            sa: SaParams::default(),
            pnr: PnrParams::default(),
            sim: SimParams::default(),
        }
    }
}

fn set<T: std::str::FromStr>(rec: &mut Record, key: &str, slot: &mut T) -> Result<()> {
    if let Some(v) = rec.take(key)? {
        *slot = v;
    }
    Ok(())
}

fn set_list<T: std::str::FromStr>(rec: &mut Record, key: &str, slot: &mut Vec<T>) -> Result<()> {
    if let Some(v) = rec.take_list(key)? {
        if v.is_empty() {
            return Err(Error::parse(rec.line, format!("`{key}` must not be empty")));
        }
        *slot = v;
    }
    Ok(())
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for mut rec in parse_records(text)? {
            match rec.keyword.as_str() {
                "tech" => {
                    rec.expect_positional(0)?;
                    let t = &mut cfg.tech;
                    set(&mut rec, "frequency", &mut t.frequency)?;
                    set(&mut rec, "base_pe", &mut t.base_pe)?;
                    set(&mut rec, "base_glb", &mut t.base_glb_bytes)?;
                    set(&mut rec, "e_mac", &mut t.e_mac_pj)?;
                    set(&mut rec, "static_density", &mut t.static_power_density)?;
                    set(&mut rec, "pe_area", &mut t.pe_area_mm2)?;
                    set(&mut rec, "glb_area_per_mib", &mut t.glb_area_mm2_per_mib)?;
                    set(&mut rec, "interchip", &mut t.interchip_pj_per_bit)?;
                }
                "memory" => {
                    rec.expect_positional(1)?;
                    let kind: MemoryKind = rec.positional[0].parse()?;
                    let idx = match cfg.memories.iter().position(|m| m.kind == kind) {
                        Some(i) => i,
                        None => {
                            cfg.memories.push(MemoryModule::default_for(kind));
                            cfg.memories.len() - 1
                        }
                    };
                    let m = &mut cfg.memories[idx];
                    set(&mut rec, "bandwidth", &mut m.bandwidth)?;
                    set(&mut rec, "e_bit", &mut m.e_bit_pj)?;
                    set(&mut rec, "capacity", &mut m.capacity)?;
                    set(&mut rec, "cost_per_gb", &mut m.dollar_cost_per_gb)?;
                    set(&mut rec, "static", &mut m.static_power)?;
                }
                "memories" => {
                    // restricts the menu to the listed kinds
                    rec.expect_positional(0)?;
                    let kinds: Vec<MemoryKind> = rec.take_list("kinds")?.unwrap_or_default();
                    if kinds.is_empty() {
                        return Err(Error::parse(rec.line, "`memories` needs kinds=..."));
                    }
                    cfg.memories.retain(|m| kinds.contains(&m.kind));
                    for k in kinds {
                        if !cfg.memories.iter().any(|m| m.kind == k) {
                            cfg.memories.push(MemoryModule::default_for(k));
                        }
                    }
                    cfg.memories.sort_by_key(|m| m.kind);
                }
                "affinity" => {
                    rec.expect_positional(1)?;
                    let kind: OpKind = rec.positional[0].parse()?;
                    for (k, v) in rec.drain() {
                        let df: Dataflow = k.parse()?;
                        let val: f64 = v
                            .parse()
                            .map_err(|_| Error::parse(rec.line, format!("invalid affinity `{v}`")))?;
                        cfg.affinity.set(kind, df, val)?;
                    }
                }
                "cost" => {
                    rec.expect_positional(0)?;
                    let c = &mut cfg.cost;
                    set(&mut rec, "wafer", &mut c.wafer_cost)?;
                    set(&mut rec, "diameter", &mut c.wafer_diameter_mm)?;
                    set(&mut rec, "d0", &mut c.defect_density)?;
                    set(&mut rec, "alpha", &mut c.clustering)?;
                    set(&mut rec, "reticle", &mut c.reticle_limit_mm2)?;
                    set(&mut rec, "package_base", &mut c.package_base)?;
                    set(&mut rec, "package_per_mm2", &mut c.package_per_mm2)?;
                    if let Some(b) = rec.take::<String>("bonding")? {
                        c.bonding = match b.as_str() {
                            "2D" => Bonding::TwoD,
                            "2.5D" => Bonding::TwoPointFiveD,
                            other => return Err(Error::unknown("bonding", other)),
                        };
                    }
                    set(&mut rec, "mult_2d", &mut c.bonding_2d_multiplier)?;
                    set(&mut rec, "mult_25d", &mut c.bonding_25d_multiplier)?;
                    set(&mut rec, "nre_chiplet", &mut c.nre_per_chiplet_design)?;
                    set(&mut rec, "nre_package", &mut c.nre_per_package_design)?;
                    set(&mut rec, "volume", &mut c.volume)?;
                    set(&mut rec, "networks", &mut c.networks_sharing_pool)?;
                }
                "search" => {
                    rec.expect_positional(0)?;
                    let s = &mut cfg.search;
                    set_list(&mut rec, "tp", &mut s.tp)?;
                    set_list(&mut rec, "batches", &mut s.batches)?;
                    set(&mut rec, "pool_budget", &mut s.pool_budget)?;
                    set(&mut rec, "naive_guard", &mut s.naive_guard)?;
                }
                "space" => {
                    rec.expect_positional(0)?;
                    let s = &mut cfg.space;
                    set_list(&mut rec, "dataflows", &mut s.dataflows)?;
                    set_list(&mut rec, "pe_scales", &mut s.pe_scales)?;
                    set_list(&mut rec, "glb_scales", &mut s.glb_scales)?;
                }
                "ga" => {
                    rec.expect_positional(0)?;
                    let g = &mut cfg.ga;
                    set(&mut rec, "population", &mut g.population)?;
                    set(&mut rec, "generations", &mut g.generations)?;
                    set(&mut rec, "mutation", &mut g.mutation_rate)?;
                    set(&mut rec, "crossover", &mut g.crossover_rate)?;
                }
                "sa" => {
                    rec.expect_positional(0)?;
                    let s = &mut cfg.sa;
                    set(&mut rec, "init_temp", &mut s.init_temp)?;
                    set(&mut rec, "cooling", &mut s.cooling)?;
                    set(&mut rec, "iters_per_level", &mut s.iters_per_level)?;
                    set(&mut rec, "floor", &mut s.floor)?;
                    set(&mut rec, "max_evals", &mut s.max_evaluations)?;
                    set(&mut rec, "inner_population", &mut s.inner_population)?;
                    set(&mut rec, "inner_generations", &mut s.inner_generations)?;
                    if let Some(a) = rec.take::<String>("aggregate")? {
                        s.aggregation = match a.as_str() {
                            "geomean" => Aggregation::GeoMean,
                            "worst" => Aggregation::WorstCase,
                            other => return Err(Error::unknown("aggregation", other)),
                        };
                    }
                }
                "pnr" => {
                    rec.expect_positional(0)?;
                    let p = &mut cfg.pnr;
                    set(&mut rec, "capacity", &mut p.edge_capacity)?;
                    set(&mut rec, "max_side", &mut p.max_side)?;
                    set(&mut rec, "grid_mm", &mut p.grid_mm)?;
                    set(&mut rec, "edge_bandwidth_per_mm", &mut p.edge_bandwidth_per_mm)?;
                }
                "sim" => {
                    rec.expect_positional(0)?;
                    set(&mut rec, "tile_bytes", &mut cfg.sim.tile_bytes)?;
                }
                other => {
                    return Err(Error::parse(rec.line, format!("unknown config record `{other}`")));
                }
            }
            rec.finish()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        validate_memory_menu(&self.memories)?;
        if self.memories.is_empty() {
            return Err(Error::Validation("memory menu is empty".into()));
        }
        if self.search.tp.contains(&0) || self.search.batches.contains(&0) {
            return Err(Error::Validation("tp and batch menus must be positive".into()));
        }
        if self.search.pool_budget == 0 {
            return Err(Error::Validation("pool budget must be >= 1".into()));
        }
        if self.ga.population < 3 || self.ga.generations == 0 {
            return Err(Error::Validation("GA needs population >= 3 and generations >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ga.mutation_rate) || !(0.0..=1.0).contains(&self.ga.crossover_rate) {
            return Err(Error::Validation("GA rates must lie in [0, 1]".into()));
        }
        if !(self.sa.cooling > 0.0 && self.sa.cooling < 1.0) || self.sa.iters_per_level == 0 {
            return Err(Error::Validation("SA cooling must be in (0,1) and iterations >= 1".into()));
        }
        if self.pnr.edge_capacity == 0 || self.sim.tile_bytes == 0 {
            return Err(Error::Validation("edge capacity and tile size must be positive".into()));
        }
        for (k, d) in OpKind::ALL
            .iter()
            .flat_map(|&k| self.space.dataflows.iter().map(move |&d| (k, d)))
        {
            crate::perfmodel::dataflow_affinity(&self.affinity, k, d)?;
        }
        Ok(())
    }

    /// Renders every parameter in the config file format.
    pub fn dump(&self) -> String {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        }
        let mut s = String::new();
        let t = &self.tech;
        let _ = writeln!(
            s,
            "tech frequency={} base_pe={} base_glb={} e_mac={} static_density={} pe_area={} glb_area_per_mib={} interchip={}",
            t.frequency, t.base_pe, t.base_glb_bytes, t.e_mac_pj, t.static_power_density, t.pe_area_mm2,
            t.glb_area_mm2_per_mib, t.interchip_pj_per_bit
        );
        let kinds: Vec<_> = self.memories.iter().map(|m| m.kind.name()).collect();
        let _ = writeln!(s, "memories kinds={}", kinds.join(","));
        for m in &self.memories {
            let _ = writeln!(
                s,
                "memory {} bandwidth={} e_bit={} capacity={} cost_per_gb={} static={}",
                m.kind, m.bandwidth, m.e_bit_pj, m.capacity, m.dollar_cost_per_gb, m.static_power
            );
        }
        for kind in OpKind::ALL {
            let vals: Vec<String> = self
                .affinity
                .iter()
                .filter(|(k, _, _)| *k == kind)
                .map(|(_, d, v)| format!("{d}={v}"))
                .collect();
            let _ = writeln!(s, "affinity {kind} {}", vals.join(" "));
        }
        let c = &self.cost;
        let bonding = match c.bonding {
            Bonding::TwoD => "2D",
            Bonding::TwoPointFiveD => "2.5D",
        };
        let _ = writeln!(
            s,
            "cost wafer={} diameter={} d0={} alpha={} reticle={} package_base={} package_per_mm2={} bonding={} mult_2d={} mult_25d={} nre_chiplet={} nre_package={} volume={} networks={}",
            c.wafer_cost, c.wafer_diameter_mm, c.defect_density, c.clustering, c.reticle_limit_mm2,
            c.package_base, c.package_per_mm2, bonding, c.bonding_2d_multiplier, c.bonding_25d_multiplier,
            c.nre_per_chiplet_design, c.nre_per_package_design, c.volume, c.networks_sharing_pool
        );
        let _ = writeln!(
            s,
            "search tp={} batches={} pool_budget={} naive_guard={}",
            join(&self.search.tp),
            join(&self.search.batches),
            self.search.pool_budget,
            self.search.naive_guard
        );
        let _ = writeln!(
            s,
            "space dataflows={} pe_scales={} glb_scales={}",
            join(&self.space.dataflows),
            join(&self.space.pe_scales),
            join(&self.space.glb_scales)
        );
        let g = &self.ga;
        let _ = writeln!(
            s,
            "ga population={} generations={} mutation={} crossover={}",
            g.population, g.generations, g.mutation_rate, g.crossover_rate
        );
        let a = &self.sa;
        let agg = match a.aggregation {
            Aggregation::GeoMean => "geomean",
            Aggregation::WorstCase => "worst",
        };
        let _ = writeln!(
            s,
            "sa init_temp={} cooling={} iters_per_level={} floor={} max_evals={} inner_population={} inner_generations={} aggregate={}",
            a.init_temp, a.cooling, a.iters_per_level, a.floor, a.max_evaluations, a.inner_population,
            a.inner_generations, agg
        );
        let p = &self.pnr;
        let _ = writeln!(
            s,
            "pnr capacity={} max_side={} grid_mm={} edge_bandwidth_per_mm={}",
            p.edge_capacity, p.max_side, p.grid_mm, p.edge_bandwidth_per_mm
        );
        let _ = writeln!(s, "sim tile_bytes={}", self.sim.tile_bytes);
        s
    }
}
