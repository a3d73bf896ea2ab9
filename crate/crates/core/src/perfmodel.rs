//! Analytical stage model: roofline latency with a dataflow-affinity
//! multiplier, dynamic/static energy split, and candidate enumeration over the
//! chiplet, memory, tensor-parallel and batch menus.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::costmodel::die_cost;
use crate::error::{Error, Result};
use crate::workload::{operator_footprint, OpKind, OperatorGraph};

const MIB: f64 = 1024.0 * 1024.0;
const GIB: f64 = 1024.0 * 1024.0 * 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataflow {
    RS,
    OS,
    WS,
}

impl Dataflow {
    pub const ALL: [Dataflow; 3] = [Dataflow::RS, Dataflow::OS, Dataflow::WS];

    pub fn name(self) -> &'static str {
        match self {
            Dataflow::RS => "RS",
            Dataflow::OS => "OS",
            Dataflow::WS => "WS",
        }
    }
}

impl fmt::Display for Dataflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataflow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Dataflow::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::unknown("dataflow", s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechParams {
    pub frequency: f64,
    pub base_pe: u32,
    pub base_glb_bytes: u64,
    /// pJ per multiply-accumulate.
    pub e_mac_pj: f64,
    /// W/mm² of leakage.
    pub static_power_density: f64,
    pub pe_area_mm2: f64,
    pub glb_area_mm2_per_mib: f64,
    pub interchip_pj_per_bit: f64,
}

impl Default for TechParams {
    fn default() -> Self {
        TechParams {
            frequency: 1.0e9,
            base_pe: 64,
            base_glb_bytes: 512 * 1024,
            e_mac_pj: 0.5,
            static_power_density: 0.015,
            pe_area_mm2: 0.006,
            glb_area_mm2_per_mib: 0.5,
            interchip_pj_per_bit: 1.3,
        }
    }
}

/// Identity of a chiplet design in a pool: two chiplets with the same key are
/// the same design (one NRE charge).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChipletKey {
    pub dataflow: Dataflow,
    pub pe_scale: u32,
    pub glb_scale: u32,
}

impl fmt::Display for ChipletKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-pe{}-glb{}", self.dataflow, self.pe_scale, self.glb_scale)
    }
}

/// Parses the display form, e.g. `WS-pe2-glb4`.
impl FromStr for ChipletKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::unknown("chiplet", s);
        let mut parts = s.split('-');
        let (Some(d), Some(pe), Some(glb), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        Ok(ChipletKey {
            dataflow: d.parse()?,
            pe_scale: pe.strip_prefix("pe").and_then(|v| v.parse().ok()).ok_or_else(bad)?,
            glb_scale: glb.strip_prefix("glb").and_then(|v| v.parse().ok()).ok_or_else(bad)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipletConfig {
    pub id: String,
    pub key: ChipletKey,
    pub pe_rows: u32,
    pub pe_cols: u32,
    pub glb_bytes: u64,
    pub frequency: f64,
    /// Joules per MAC.
    pub e_mac: f64,
    pub static_power_density: f64,
    /// mm².
    pub area: f64,
}

impl ChipletConfig {
    /// PE scaling multiplies each array side; GLB scaling multiplies capacity.
    pub fn from_scales(dataflow: Dataflow, pe_scale: u32, glb_scale: u32, tech: &TechParams) -> Result<Self> {
        let side = tech.base_pe * pe_scale;
        if !(64..=512).contains(&side) {
            return Err(Error::Validation(format!("PE side {side} outside 64..=512")));
        }
        if glb_scale == 0 {
            return Err(Error::Validation("GLB scale must be positive".into()));
        }
        let glb_bytes = tech.base_glb_bytes * glb_scale as u64;
        let pes = side as f64 * side as f64;
        let area = tech.pe_area_mm2 * pes + tech.glb_area_mm2_per_mib * glb_bytes as f64 / MIB;
        let key = ChipletKey {
            dataflow,
            pe_scale,
            glb_scale,
        };
        Ok(ChipletConfig {
            id: key.to_string(),
            key,
            pe_rows: side,
            pe_cols: side,
            glb_bytes,
            frequency: tech.frequency,
            e_mac: tech.e_mac_pj * 1e-12,
            static_power_density: tech.static_power_density,
            area,
        })
    }

    pub fn from_key(key: ChipletKey, tech: &TechParams) -> Result<Self> {
        Self::from_scales(key.dataflow, key.pe_scale, key.glb_scale, tech)
    }

    pub fn dataflow(&self) -> Dataflow {
        self.key.dataflow
    }

    pub fn pe_count(&self) -> f64 {
        self.pe_rows as f64 * self.pe_cols as f64
    }

    /// Flops per second with every PE busy.
    pub fn peak_flops(&self) -> f64 {
        2.0 * self.pe_count() * self.frequency
    }

    pub fn static_power(&self) -> f64 {
        self.static_power_density * self.area
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MemoryKind {
    Lpddr5,
    Ddr5,
    Gddr7,
    Hbm3,
}

impl MemoryKind {
    pub const ALL: [MemoryKind; 4] = [
        MemoryKind::Lpddr5,
        MemoryKind::Ddr5,
        MemoryKind::Gddr7,
        MemoryKind::Hbm3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MemoryKind::Lpddr5 => "LPDDR5",
            MemoryKind::Ddr5 => "DDR5",
            MemoryKind::Gddr7 => "GDDR7",
            MemoryKind::Hbm3 => "HBM3",
        }
    }
}

impl fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MemoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MemoryKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::unknown("memory kind", s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryModule {
    pub kind: MemoryKind,
    /// Bytes per second.
    pub bandwidth: f64,
    /// pJ per bit accessed.
    pub e_bit_pj: f64,
    /// Bytes.
    pub capacity: u64,
    pub dollar_cost_per_gb: f64,
    /// Watts drawn while powered.
    pub static_power: f64,
}

impl MemoryModule {
    pub fn default_for(kind: MemoryKind) -> Self {
        let (bandwidth, e_bit_pj, per_gb, static_power) = match kind {
            MemoryKind::Lpddr5 => (51.2e9, 5.0, 3.0, 0.05),
            MemoryKind::Ddr5 => (64.0e9, 12.0, 3.5, 0.1),
            MemoryKind::Gddr7 => (128.0e9, 7.0, 8.0, 0.3),
            MemoryKind::Hbm3 => (819.2e9, 3.9, 20.0, 0.6),
        };
        MemoryModule {
            kind,
            bandwidth,
            e_bit_pj,
            capacity: 16 * 1024 * 1024 * 1024,
            dollar_cost_per_gb: per_gb,
            static_power,
        }
    }

    pub fn default_menu() -> Vec<MemoryModule> {
        MemoryKind::ALL.into_iter().map(Self::default_for).collect()
    }

    pub fn dollar_cost(&self) -> f64 {
        self.dollar_cost_per_gb * self.capacity as f64 / GIB
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || self.capacity == 0 || !(self.dollar_cost_per_gb > 0.0) {
            return Err(Error::Validation(format!(
                "memory {}: bandwidth, capacity and cost must be positive",
                self.kind
            )));
        }
        if self.e_bit_pj < 0.0 || self.static_power < 0.0 {
            return Err(Error::Validation(format!(
                "memory {}: energy and static power must be >= 0",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Checks the bandwidth and price orderings across a memory menu sorted by kind.
pub fn validate_memory_menu(menu: &[MemoryModule]) -> Result<()> {
    for m in menu {
        m.validate()?;
    }
    let mut sorted: Vec<&MemoryModule> = menu.iter().collect();
    sorted.sort_by_key(|m| m.kind);
    for w in sorted.windows(2) {
        if w[0].kind == w[1].kind {
            return Err(Error::Validation(format!("memory {} declared twice", w[0].kind)));
        }
        if w[0].bandwidth > w[1].bandwidth || w[0].dollar_cost() > w[1].dollar_cost() {
            return Err(Error::Validation(format!(
                "memory ordering violated between {} and {}",
                w[0].kind, w[1].kind
            )));
        }
    }
    Ok(())
}

/// Utilization of a PE array for an operator kind under a dataflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityTable {
    entries: BTreeMap<(OpKind, Dataflow), f64>,
}

impl Default for AffinityTable {
    fn default() -> Self {
        use Dataflow::*;
        use OpKind::*;
        let rows: [(OpKind, [f64; 3]); 7] = [
            //                  RS    OS    WS
            (Conv, [1.0, 0.85, 0.8]),
            (DepthwiseConv, [0.85, 0.8, 0.5]),
            (Matmul, [0.75, 0.8, 1.0]),
            (AttentionScore, [0.6, 0.8, 0.85]),
            (AttentionContext, [0.6, 0.8, 0.85]),
            (Elementwise, [0.7, 1.0, 0.7]),
            (Normalization, [0.7, 0.85, 0.7]),
        ];
        let mut entries = BTreeMap::new();
        for (kind, vals) in rows {
            for (df, v) in [RS, OS, WS].into_iter().zip(vals) {
                entries.insert((kind, df), v);
            }
        }
        AffinityTable { entries }
    }
}

impl AffinityTable {
    pub fn set(&mut self, kind: OpKind, dataflow: Dataflow, value: f64) -> Result<()> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::Validation(format!(
                "affinity for ({kind}, {dataflow}) must be in (0, 1]"
            )));
        }
        self.entries.insert((kind, dataflow), value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (OpKind, Dataflow, f64)> + '_ {
        self.entries.iter().map(|(&(k, d), &v)| (k, d, v))
    }
}

pub fn dataflow_affinity(table: &AffinityTable, kind: OpKind, dataflow: Dataflow) -> Result<f64> {
    table
        .entries
        .get(&(kind, dataflow))
        .copied()
        .ok_or_else(|| Error::unknown("affinity pair", format!("({kind}, {dataflow})")))
}

/// Contiguous node range `[start, end)` in topological order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupSpan {
    pub start: usize,
    pub end: usize,
}

impl GroupSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end);
        GroupSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, node: usize) -> bool {
        (self.start..self.end).contains(&node)
    }
}

/// Off-chip footprint of a fused group for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFootprint {
    pub flops_by_kind: Vec<(OpKind, u64)>,
    pub weight_bytes: u64,
    /// Inputs not produced inside the group.
    pub input_bytes: u64,
    /// Outputs consumed outside the group (or graph outputs).
    pub output_bytes: u64,
    /// Largest fused intermediate, per sample.
    pub max_intermediate: u64,
    pub batch: u64,
}

impl GroupFootprint {
    pub fn flops(&self) -> u64 {
        self.flops_by_kind.iter().map(|&(_, f)| f).sum()
    }

    pub fn traffic_bytes(&self) -> u64 {
        self.weight_bytes + self.input_bytes + self.output_bytes
    }
}

pub fn group_footprint(graph: &OperatorGraph, span: GroupSpan, batch: u64) -> Result<GroupFootprint> {
    if span.is_empty() || span.end > graph.len() {
        return Err(Error::Validation(format!("invalid group span {span:?}")));
    }
    let mut flops_by_kind: Vec<(OpKind, u64)> = Vec::new();
    let mut weight_bytes = 0u64;
    let mut input_bytes = 0u64;
    let mut output_bytes = 0u64;
    let mut max_intermediate = 0u64;
    let overflow = || Error::Overflow("group footprint".into());
    for idx in span.start..span.end {
        let node = &graph.nodes()[idx];
        let fp = operator_footprint(node, batch)?;
        match flops_by_kind.iter_mut().find(|(k, _)| *k == node.kind) {
            Some((_, f)) => *f = f.checked_add(fp.flops).ok_or_else(overflow)?,
            None => flops_by_kind.push((node.kind, fp.flops)),
        }
        weight_bytes = weight_bytes.checked_add(fp.weight_bytes).ok_or_else(overflow)?;

        let mut fused_in = 0u64;
        for e in graph.edges().iter().filter(|e| e.dst == idx && span.contains(e.src)) {
            fused_in = fused_in.saturating_add(e.bytes.saturating_mul(batch).saturating_mul(node.repeat));
            max_intermediate = max_intermediate.max(e.bytes);
        }
        input_bytes = input_bytes
            .checked_add(fp.input_bytes.saturating_sub(fused_in))
            .ok_or_else(overflow)?;

        let consumers = graph.consumers(idx);
        let all_internal = !consumers.is_empty() && consumers.iter().all(|&c| span.contains(c));
        if !all_internal {
            output_bytes = output_bytes.checked_add(fp.output_bytes).ok_or_else(overflow)?;
        }
    }
    Ok(GroupFootprint {
        flops_by_kind,
        weight_bytes,
        input_bytes,
        output_bytes,
        max_intermediate,
        batch,
    })
}

/// One evaluated (group, chiplet, memory, batch, tp) point. Latency and
/// energy are normalized per sample so candidates with different batches
/// share one pipeline period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCandidate {
    pub group_id: usize,
    pub span: GroupSpan,
    pub chiplet: ChipletConfig,
    pub memory: MemoryModule,
    pub tp: u32,
    pub batch: u64,
    /// Seconds to compute one batch.
    pub compute_time: f64,
    /// Seconds to move one batch's off-chip traffic.
    pub memory_time: f64,
    /// Off-chip bytes per batch.
    pub traffic_bytes: f64,
    /// Inter-chiplet bytes per batch.
    pub interchip_bytes: f64,
    /// Minimal per-sample stage occupancy, seconds.
    pub t_cmp: f64,
    /// Per-sample dynamic energy, joules.
    pub e_dyn: f64,
    pub p_static: f64,
    pub dollar_cost: f64,
}

impl StageCandidate {
    pub fn batch_latency(&self) -> f64 {
        self.compute_time.max(self.memory_time)
    }

    pub fn energy_at(&self, period: f64) -> Option<f64> {
        stage_energy_at(self, period)
    }

    /// Leakage share of total energy when run at its own minimal latency.
    pub fn static_share(&self) -> f64 {
        let s = self.p_static * self.t_cmp;
        s / (self.e_dyn + s)
    }
}

/// Piecewise-affine stage energy: `E_dyn + P_static·T` for `T ≥ T_cmp`,
/// `None` (infinite) below.
pub fn stage_energy_at(c: &StageCandidate, period: f64) -> Option<f64> {
    if period >= c.t_cmp {
        Some(c.e_dyn + c.p_static * period)
    } else {
        None
    }
}

/// Evaluates a precomputed footprint; used directly by tests and by
/// [`candidate_eval`].
#[allow(clippy::too_many_arguments)]
pub fn evaluate_footprint(
    fp: &GroupFootprint,
    group_id: usize,
    span: GroupSpan,
    chiplet: &ChipletConfig,
    memory: &MemoryModule,
    tp: u32,
    cfg: &Config,
) -> Result<StageCandidate> {
    if tp == 0 || fp.batch == 0 {
        return Err(Error::Validation("tp and batch must be positive".into()));
    }
    if fp.max_intermediate as f64 > chiplet.glb_bytes as f64 / 2.0 {
        return Err(Error::Infeasible(format!(
            "fused intermediate of {} B exceeds half of {} GLB",
            fp.max_intermediate, chiplet.id
        )));
    }
    if fp.weight_bytes > memory.capacity {
        return Err(Error::Infeasible(format!(
            "group weights of {} B exceed {} capacity",
            fp.weight_bytes, memory.kind
        )));
    }
    let tpf = tp as f64;
    let peak = chiplet.peak_flops();
    let mut compute_time = 0.0;
    for &(kind, flops) in &fp.flops_by_kind {
        let aff = dataflow_affinity(&cfg.affinity, kind, chiplet.dataflow())?;
        compute_time += flops as f64 / (peak * aff * tpf);
    }
    let traffic = fp.traffic_bytes() as f64;
    let memory_time = traffic / memory.bandwidth;
    let batch_latency = compute_time.max(memory_time);

    let out = fp.output_bytes as f64;
    let interchip = out + (tpf - 1.0) / tpf * out;
    let macs = fp.flops() as f64 / 2.0;
    let energy = macs * chiplet.e_mac
        + 8.0 * traffic * memory.e_bit_pj * 1e-12
        + 8.0 * interchip * cfg.tech.interchip_pj_per_bit * 1e-12;
    let p_static = chiplet.static_power() * tpf + memory.static_power;
    let dollar_cost = tpf * die_cost(chiplet.area, &cfg.cost)? + memory.dollar_cost();

    let b = fp.batch as f64;
    Ok(StageCandidate {
        group_id,
        span,
        chiplet: chiplet.clone(),
        memory: memory.clone(),
        tp,
        batch: fp.batch,
        compute_time,
        memory_time,
        traffic_bytes: traffic,
        interchip_bytes: interchip,
        t_cmp: batch_latency / b,
        e_dyn: energy / b,
        p_static,
        dollar_cost,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn candidate_eval(
    graph: &OperatorGraph,
    span: GroupSpan,
    group_id: usize,
    chiplet: &ChipletConfig,
    memory: &MemoryModule,
    batch: u64,
    tp: u32,
    cfg: &Config,
) -> Result<StageCandidate> {
    let fp = group_footprint(graph, span, batch)?;
    evaluate_footprint(&fp, group_id, span, chiplet, memory, tp, cfg)
}

/// Memory / tensor-parallel / batch choices offered to one group.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMenu {
    pub memories: Vec<MemoryModule>,
    pub tps: Vec<u32>,
    pub batches: Vec<u64>,
}

impl CandidateMenu {
    pub fn from_config(cfg: &Config) -> Self {
        CandidateMenu {
            memories: cfg.memories.clone(),
            tps: cfg.search.tp.clone(),
            batches: cfg.search.batches.clone(),
        }
    }
}

/// Feasible candidates of the cross product, ordered by
/// (pool position, memory position, tp, batch).
pub fn enumerate_candidates(
    graph: &OperatorGraph,
    span: GroupSpan,
    group_id: usize,
    pool: &[ChipletConfig],
    menu: &CandidateMenu,
    cfg: &Config,
) -> Result<Vec<StageCandidate>> {
    if pool.is_empty() {
        return Err(Error::Validation("chiplet pool is empty".into()));
    }
    let mut out = Vec::new();
    for &batch in &menu.batches {
        // footprints depend only on the batch
        let fp = group_footprint(graph, span, batch)?;
        for (ci, chiplet) in pool.iter().enumerate() {
            for (mi, memory) in menu.memories.iter().enumerate() {
                for &tp in &menu.tps {
                    match evaluate_footprint(&fp, group_id, span, chiplet, memory, tp, cfg) {
                        Ok(c) => out.push(((ci, mi, tp, batch), c)),
                        Err(e) if e.is_infeasible() => {}
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    out.sort_by_key(|(k, _)| *k);
    Ok(out.into_iter().map(|(_, c)| c).collect())
}
