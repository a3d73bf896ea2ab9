//! Discrete-event simulation of a stage pipeline with double-buffered
//! boundaries and token-arbitrated memory buses.
//!
//! Work is simulated one sample at a time using the per-sample compute time
//! and traffic of each stage, so an uncontended run reproduces the analytical
//! period (slowest stage) and first-output latency (sum of stages).

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::cht::AcceleratorDesign;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub inputs: usize,
    /// Bus id per stage.
    pub bus_map: Vec<usize>,
    /// Bandwidth per bus (bytes/s); defaults to the slowest attached memory.
    pub bus_bandwidth: Option<Vec<f64>>,
    pub tile_bytes: u64,
    pub trace: bool,
}

impl SimConfig {
    /// One private bus per stage.
    pub fn private(design: &AcceleratorDesign, inputs: usize, tile_bytes: u64) -> Self {
        SimConfig {
            inputs,
            bus_map: (0..design.stages.len()).collect(),
            bus_bandwidth: None,
            tile_bytes,
            trace: false,
        }
    }

    /// Every stage on bus 0.
    pub fn shared(design: &AcceleratorDesign, inputs: usize, tile_bytes: u64) -> Self {
        SimConfig {
            bus_map: vec![0; design.stages.len()],
            ..SimConfig::private(design, inputs, tile_bytes)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageStats {
    pub busy: f64,
    pub idle: f64,
    pub tiles: u64,
    pub bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub time: f64,
    pub stage: usize,
    pub event: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub stages: Vec<StageStats>,
    /// Mean spacing of outputs over the middle half of the run.
    pub period: f64,
    pub first_output_latency: f64,
    pub total_time: f64,
    pub energy: f64,
    pub output_times: Vec<f64>,
    /// Stage served by each grant, per shared bus, in grant order; buses
    /// with a single stage log nothing.
    pub grants: Vec<Vec<usize>>,
    pub trace: Vec<TraceEvent>,
}

impl SimReport {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("time,stage,event\n");
        for e in &self.trace {
            let _ = writeln!(s, "{},{},{}", e.time, e.stage, e.event);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    ComputeDone(usize),
    TileDone { bus: usize, stage: usize, tiles: u64 },
}

impl Event {
    fn stage(self) -> usize {
        match self {
            Event::ComputeDone(s) | Event::TileDone { stage: s, .. } => s,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct StageState {
    started: usize,
    finished: usize,
    active: bool,
    computing: bool,
    tiles_left: u64,
    bytes_left: f64,
    began: f64,
    busy: f64,
    tiles: u64,
    bytes: f64,
}

struct BusState {
    stages: Vec<usize>,
    bandwidth: f64,
    busy: bool,
    /// Position in `stages` holding the token.
    token: usize,
}

pub fn simulate(design: &AcceleratorDesign, cfg: &SimConfig) -> Result<SimReport> {
    let p = design.stages.len();
    if p == 0 || cfg.inputs == 0 {
        return Err(Error::Validation("simulation needs at least one stage and one input".into()));
    }
    if cfg.bus_map.len() != p {
        return Err(Error::Validation(format!("bus map covers {} of {p} stages", cfg.bus_map.len())));
    }
    if cfg.tile_bytes == 0 {
        return Err(Error::Validation("tile size must be positive".into()));
    }
    let compute: Vec<f64> = design.stages.iter().map(|s| s.compute_time / s.batch as f64).collect();
    let traffic: Vec<f64> = design.stages.iter().map(|s| s.traffic_bytes / s.batch as f64).collect();
    let n_bus = cfg.bus_map.iter().max().map_or(0, |m| m + 1);
    let mut buses: Vec<BusState> = (0..n_bus)
        .map(|b| {
            let stages: Vec<usize> = (0..p).filter(|&s| cfg.bus_map[s] == b).collect();
            let bandwidth = match &cfg.bus_bandwidth {
                Some(v) => v.get(b).copied().unwrap_or(0.0),
                None => stages
                    .iter()
                    .map(|&s| design.stages[s].memory.bandwidth)
                    .fold(f64::INFINITY, f64::min),
            };
            BusState {
                stages,
                bandwidth,
                busy: false,
                token: 0,
            }
        })
        .collect();

    let mut st = vec![StageState::default(); p];
    let mut heap: BinaryHeap<Reverse<(Time, Event)>> = BinaryHeap::new();
    let mut grants = vec![Vec::new(); n_bus];
    let mut trace = Vec::new();
    let mut outputs = Vec::with_capacity(cfg.inputs);
    let mut now = 0.0f64;
    let tile = cfg.tile_bytes as f64;
    let log = |trace: &mut Vec<TraceEvent>, time: f64, stage: usize, event: &'static str| {
        if cfg.trace {
            trace.push(TraceEvent { time, stage, event });
        }
    };

    loop {
        // start and finish everything possible at `now`, then hand out tokens
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..p {
                let s = &st[i];
                if s.active && !s.computing && s.tiles_left == 0 {
                    let s = &mut st[i];
                    s.active = false;
                    s.finished += 1;
                    s.busy += now - s.began;
                    log(&mut trace, now, i, "finish");
                    if i + 1 == p {
                        outputs.push(now);
                    }
                    changed = true;
                    continue;
                }
                let k = s.started;
                let input_ready = i == 0 || st[i - 1].finished > k;
                // the output half written by sample k is freed when the
                // consumer finishes sample k-2
                let output_free = i + 1 == p || k < 2 || st[i + 1].finished >= k - 1;
                if !s.active && k < cfg.inputs && input_ready && output_free {
                    let tiles = (traffic[i] / tile).ceil() as u64;
                    let s = &mut st[i];
                    s.started += 1;
                    s.active = true;
                    s.computing = true;
                    s.tiles_left = tiles;
                    s.bytes_left = traffic[i];
                    s.began = now;
                    heap.push(Reverse((Time(now + compute[i]), Event::ComputeDone(i))));
                    log(&mut trace, now, i, "start");
                    changed = true;
                }
            }
        }
        for (b, bus) in buses.iter_mut().enumerate() {
            if bus.busy || !(bus.bandwidth > 0.0) {
                continue;
            }
            let n = bus.stages.len();
            // the token skips stages without pending tiles in zero time
            if let Some(off) = (0..n).find(|o| {
                let s = &st[bus.stages[(bus.token + o) % n]];
                s.active && s.tiles_left > 0
            }) {
                let pos = (bus.token + off) % n;
                let stage = bus.stages[pos];
                // with no competitor the grants run back to back: one event
                let (tiles, bytes) = if n == 1 {
                    (st[stage].tiles_left, st[stage].bytes_left)
                } else {
                    grants[b].push(stage);
                    (1, st[stage].bytes_left.min(tile))
                };
                bus.busy = true;
                bus.token = (pos + 1) % n;
                heap.push(Reverse((Time(now + bytes / bus.bandwidth), Event::TileDone { bus: b, stage, tiles })));
                log(&mut trace, now, stage, "grant");
            }
        }

        let Some(Reverse((Time(t), ev))) = heap.pop() else {
            break;
        };
        now = t;
        match ev {
            Event::ComputeDone(i) => st[i].computing = false,
            Event::TileDone { bus, stage, tiles } => {
                let s = &mut st[stage];
                let bytes = if tiles == s.tiles_left { s.bytes_left } else { tiles as f64 * tile };
                s.bytes_left -= bytes;
                s.tiles_left -= tiles;
                s.tiles += tiles;
                s.bytes += bytes;
                buses[bus].busy = false;
            }
        }
        log(&mut trace, now, ev.stage(), match ev {
            Event::ComputeDone(_) => "compute_done",
            Event::TileDone { .. } => "tile_done",
        });
    }

    let blocked: Vec<usize> = (0..p).filter(|&i| st[i].finished < cfg.inputs).collect();
    if !blocked.is_empty() {
        return Err(Error::Deadlock(blocked));
    }
    let total_time = now;
    // middle half of the outputs: past the fill, before the drain frees
    // shared buses
    let n = cfg.inputs;
    let period = if n >= 2 {
        let from = n / 4;
        let to = (n - 1 - n / 4).max(from + 1);
        (outputs[to] - outputs[from]) / (to - from) as f64
    } else {
        outputs[0]
    };
    let energy = design
        .stages
        .iter()
        .map(|s| s.e_dyn * cfg.inputs as f64 + s.p_static * total_time)
        .sum();
    Ok(SimReport {
        stages: st
            .iter()
            .map(|s| StageStats {
                busy: s.busy,
                idle: total_time - s.busy,
                tiles: s.tiles,
                bytes: s.bytes,
            })
            .collect(),
        period,
        first_output_latency: outputs[0],
        total_time,
        energy,
        output_times: outputs,
        grants,
        trace,
    })
}

/// Analytical (period, first-output latency) of a design: slowest stage and
/// sum of stage occupancies.
pub fn analytical_timing(design: &AcceleratorDesign) -> (f64, f64) {
    let period = design.stages.iter().map(|s| s.t_cmp).fold(0.0, f64::max);
    let latency = design.stages.iter().map(|s| s.t_cmp).sum();
    (period, latency)
}
