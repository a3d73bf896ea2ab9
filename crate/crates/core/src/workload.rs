//! Operator-level network representation, loop-nest footprints and roofline
//! classification.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perfmodel::{ChipletConfig, MemoryModule};
use crate::records::{parse_records, Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Conv,
    DepthwiseConv,
    Matmul,
    AttentionScore,
    AttentionContext,
    Elementwise,
    Normalization,
}

impl OpKind {
    pub const ALL: [OpKind; 7] = [
        OpKind::Conv,
        OpKind::DepthwiseConv,
        OpKind::Matmul,
        OpKind::AttentionScore,
        OpKind::AttentionContext,
        OpKind::Elementwise,
        OpKind::Normalization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv => "conv",
            OpKind::DepthwiseConv => "depthwise-conv",
            OpKind::Matmul => "matmul",
            OpKind::AttentionScore => "attention-score",
            OpKind::AttentionContext => "attention-context",
            OpKind::Elementwise => "elementwise",
            OpKind::Normalization => "normalization",
        }
    }

    /// Operators whose weights are shared across the samples of a batch.
    pub fn batch_class(self) -> BatchClass {
        match self {
            OpKind::AttentionScore | OpKind::AttentionContext | OpKind::Elementwise => {
                BatchClass::Agnostic
            }
            OpKind::Conv | OpKind::DepthwiseConv | OpKind::Matmul | OpKind::Normalization => {
                BatchClass::Sensitive
            }
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::unknown("operator kind", s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BatchClass {
    Agnostic,
    Sensitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundClass {
    ComputeBound,
    MemoryBound,
}

/// Loop bounds of one operator, per sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpShape {
    Conv {
        n: u64,
        k: u64,
        c: u64,
        r: u64,
        s: u64,
        p: u64,
        q: u64,
        stride: u64,
    },
    DepthwiseConv {
        n: u64,
        c: u64,
        r: u64,
        s: u64,
        p: u64,
        q: u64,
        stride: u64,
    },
    Matmul {
        m: u64,
        k: u64,
        n: u64,
    },
    Attention {
        heads: u64,
        q: u64,
        kv: u64,
        d: u64,
    },
    Elementwise {
        elements: u64,
        inputs: u64,
    },
    Normalization {
        elements: u64,
        channels: u64,
    },
}

impl OpShape {
    fn bounds(&self) -> Vec<u64> {
        match *self {
            OpShape::Conv {
                n,
                k,
                c,
                r,
                s,
                p,
                q,
                stride,
            } => vec![n, k, c, r, s, p, q, stride],
            OpShape::DepthwiseConv {
                n,
                c,
                r,
                s,
                p,
                q,
                stride,
            } => vec![n, c, r, s, p, q, stride],
            OpShape::Matmul { m, k, n } => vec![m, k, n],
            OpShape::Attention { heads, q, kv, d } => vec![heads, q, kv, d],
            OpShape::Elementwise { elements, inputs } => vec![elements, inputs],
            OpShape::Normalization { elements, channels } => vec![elements, channels],
        }
    }

    fn fits(&self, kind: OpKind) -> bool {
        matches!(
            (kind, self),
            (OpKind::Conv, OpShape::Conv { .. })
                | (OpKind::DepthwiseConv, OpShape::DepthwiseConv { .. })
                | (OpKind::Matmul, OpShape::Matmul { .. })
                | (OpKind::AttentionScore, OpShape::Attention { .. })
                | (OpKind::AttentionContext, OpShape::Attention { .. })
                | (OpKind::Elementwise, OpShape::Elementwise { .. })
                | (OpKind::Normalization, OpShape::Normalization { .. })
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorNode {
    pub id: String,
    pub kind: OpKind,
    pub shape: OpShape,
    pub bytes_per_element: u64,
    /// Number of times this operator repeats in the full network.
    pub repeat: u64,
}

impl OperatorNode {
    pub fn new(id: impl Into<String>, kind: OpKind, shape: OpShape) -> Result<Self> {
        let node = OperatorNode {
            id: id.into(),
            kind,
            shape,
            bytes_per_element: 2,
            repeat: 1,
        };
        node.validate()?;
        Ok(node)
    }

    pub fn with_bytes_per_element(mut self, bpe: u64) -> Self {
        self.bytes_per_element = bpe;
        self
    }

    pub fn with_repeat(mut self, repeat: u64) -> Self {
        self.repeat = repeat;
        self
    }

    pub fn batch_class(&self) -> BatchClass {
        self.kind.batch_class()
    }

    fn validate(&self) -> Result<()> {
        if !self.shape.fits(self.kind) {
            return Err(Error::Validation(format!(
                "node `{}`: shape does not match kind {}",
                self.id, self.kind
            )));
        }
        if self.shape.bounds().iter().any(|&b| b < 1) {
            return Err(Error::Validation(format!(
                "node `{}`: loop bounds must be >= 1",
                self.id
            )));
        }
        if self.bytes_per_element < 1 || self.repeat < 1 {
            return Err(Error::Validation(format!(
                "node `{}`: bpe and repeat must be >= 1",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    /// Per-sample tensor size.
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorGraph {
    pub name: String,
    nodes: Vec<OperatorNode>,
    edges: Vec<Edge>,
    #[serde(skip)]
    consumers: Vec<Vec<usize>>,
    #[serde(skip)]
    producers: Vec<Vec<usize>>,
}

impl OperatorGraph {
    /// Builds a graph; `edges` reference node positions. The node order must
    /// already be topological.
    pub fn new(name: impl Into<String>, nodes: Vec<OperatorNode>, edges: Vec<Edge>) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::Validation("graph has no nodes".into()));
        }
        let mut seen = HashMap::new();
        for (i, node) in nodes.iter().enumerate() {
            node.validate()?;
            if seen.insert(node.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate node id `{}`", node.id)));
            }
        }
        let mut consumers = vec![Vec::new(); n];
        let mut producers = vec![Vec::new(); n];
        for e in &edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::Validation("edge references a missing node".into()));
            }
            if e.bytes == 0 {
                return Err(Error::Validation(format!(
                    "edge {} -> {} has zero bytes",
                    nodes[e.src].id, nodes[e.dst].id
                )));
            }
            consumers[e.src].push(e.dst);
            producers[e.dst].push(e.src);
        }
        if has_cycle(&consumers) {
            return Err(Error::Validation("graph contains a cycle".into()));
        }
        if let Some(e) = edges.iter().find(|e| e.src >= e.dst) {
            return Err(Error::Validation(format!(
                "node order is not topological: `{}` listed before its producer `{}`",
                nodes[e.dst].id, nodes[e.src].id
            )));
        }
        Ok(OperatorGraph {
            name: name.into(),
            nodes,
            edges,
            consumers,
            producers,
        })
    }

    pub fn nodes(&self) -> &[OperatorNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn consumers(&self, node: usize) -> &[usize] {
        &self.consumers[node]
    }

    pub fn producers(&self, node: usize) -> &[usize] {
        &self.producers[node]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }
}

fn has_cycle(consumers: &[Vec<usize>]) -> bool {
    let n = consumers.len();
    let mut indeg = vec![0usize; n];
    for outs in consumers {
        for &d in outs {
            indeg[d] += 1;
        }
    }
    let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut visited = 0;
    while let Some(i) = stack.pop() {
        visited += 1;
        for &d in &consumers[i] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                stack.push(d);
            }
        }
    }
    visited != n
}

pub fn load_network(path: impl AsRef<Path>) -> Result<OperatorGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "network".to_string());
    parse_network(&text, &name)
}

pub fn parse_network(text: &str, name: &str) -> Result<OperatorGraph> {
    let mut nodes = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut pending_edges = Vec::new();
    for mut rec in parse_records(text)? {
        match rec.keyword.as_str() {
            "node" => {
                let node = parse_node(&mut rec)?;
                if ids.insert(node.id.clone(), nodes.len()).is_some() {
                    return Err(Error::Validation(format!("duplicate node id `{}`", node.id)));
                }
                nodes.push(node);
            }
            "edge" => {
                rec.expect_positional(2)?;
                let src = rec.positional[0].clone();
                let dst = rec.positional[1].clone();
                let bytes: u64 = rec.require("bytes")?;
                rec.finish()?;
                pending_edges.push((rec.line, src, dst, bytes));
            }
            other => return Err(Error::parse(rec.line, format!("unknown record `{other}`"))),
        }
    }
    let mut edges = Vec::with_capacity(pending_edges.len());
    for (line, src, dst, bytes) in pending_edges {
        let lookup = |id: &str| {
            ids.get(id).copied().ok_or_else(|| {
                Error::Validation(format!("edge at line {line} references missing node `{id}`"))
            })
        };
        edges.push(Edge {
            src: lookup(&src)?,
            dst: lookup(&dst)?,
            bytes,
        });
    }
    OperatorGraph::new(name, nodes, edges)
}

fn parse_node(rec: &mut Record) -> Result<OperatorNode> {
    rec.expect_positional(2)?;
    let id = rec.positional[0].clone();
    let kind: OpKind = rec.positional[1]
        .parse()
        .map_err(|_| Error::parse(rec.line, format!("unknown operator kind `{}`", rec.positional[1])))?;
    let shape = match kind {
        OpKind::Conv => OpShape::Conv {
            n: rec.take("n")?.unwrap_or(1),
            k: rec.require("k")?,
            c: rec.require("c")?,
            r: rec.require("r")?,
            s: rec.require("s")?,
            p: rec.require("p")?,
            q: rec.require("q")?,
            stride: rec.take("stride")?.unwrap_or(1),
        },
        OpKind::DepthwiseConv => OpShape::DepthwiseConv {
            n: rec.take("n")?.unwrap_or(1),
            c: rec.require("c")?,
            r: rec.require("r")?,
            s: rec.require("s")?,
            p: rec.require("p")?,
            q: rec.require("q")?,
            stride: rec.take("stride")?.unwrap_or(1),
        },
        OpKind::Matmul => OpShape::Matmul {
            m: rec.require("m")?,
            k: rec.require("k")?,
            n: rec.require("n")?,
        },
        OpKind::AttentionScore | OpKind::AttentionContext => OpShape::Attention {
            heads: rec.require("heads")?,
            q: rec.require("q")?,
            kv: rec.require("kv")?,
            d: rec.require("d")?,
        },
        OpKind::Elementwise => OpShape::Elementwise {
            elements: rec.require("elements")?,
            inputs: rec.take("inputs")?.unwrap_or(1),
        },
        OpKind::Normalization => OpShape::Normalization {
            elements: rec.require("elements")?,
            channels: rec.require("channels")?,
        },
    };
    let bpe = rec.take("bpe")?.unwrap_or(2);
    let repeat = rec.take("repeat")?.unwrap_or(1);
    rec.finish()?;
    let node = OperatorNode {
        id,
        kind,
        shape,
        bytes_per_element: bpe,
        repeat,
    };
    node.validate()?;
    Ok(node)
}

/// Footprint of an operator (or a fused group) for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadStats {
    /// Two flops per multiply-accumulate.
    pub flops: u64,
    pub weight_bytes: u64,
    pub input_bytes: u64,
    pub output_bytes: u64,
}

impl WorkloadStats {
    pub fn total_bytes(&self) -> u64 {
        self.weight_bytes + self.input_bytes + self.output_bytes
    }

    /// Flops per off-chip byte; infinite for a byte-free footprint.
    pub fn arithmetic_intensity(&self) -> f64 {
        let bytes = self.total_bytes();
        if bytes == 0 {
            f64::INFINITY
        } else {
            self.flops as f64 / bytes as f64
        }
    }
}

fn product(label: &str, factors: &[u64]) -> Result<u64> {
    factors
        .iter()
        .try_fold(1u64, |acc, &f| acc.checked_mul(f))
        .ok_or_else(|| Error::Overflow(label.to_string()))
}

fn sum(label: &str, terms: &[u64]) -> Result<u64> {
    terms
        .iter()
        .try_fold(0u64, |acc, &t| acc.checked_add(t))
        .ok_or_else(|| Error::Overflow(label.to_string()))
}

pub fn operator_footprint(op: &OperatorNode, batch: u64) -> Result<WorkloadStats> {
    if batch < 1 {
        return Err(Error::Validation("batch must be >= 1".into()));
    }
    let b = batch;
    let (macs, weights, inputs, outputs) = match op.shape {
        OpShape::Conv {
            n,
            k,
            c,
            r,
            s,
            p,
            q,
            stride,
        } => {
            let h = sum("conv input height", &[product("conv input height", &[p - 1, stride])?, r])?;
            let w = sum("conv input width", &[product("conv input width", &[q - 1, stride])?, s])?;
            (
                product("conv macs", &[n, b, k, c, r, s, p, q])?,
                product("conv weights", &[k, c, r, s])?,
                product("conv inputs", &[n, b, c, h, w])?,
                product("conv outputs", &[n, b, k, p, q])?,
            )
        }
        OpShape::DepthwiseConv {
            n,
            c,
            r,
            s,
            p,
            q,
            stride,
        } => {
            let h = sum("dwconv input height", &[product("dwconv", &[p - 1, stride])?, r])?;
            let w = sum("dwconv input width", &[product("dwconv", &[q - 1, stride])?, s])?;
            (
                product("dwconv macs", &[n, b, c, r, s, p, q])?,
                product("dwconv weights", &[c, r, s])?,
                product("dwconv inputs", &[n, b, c, h, w])?,
                product("dwconv outputs", &[n, b, c, p, q])?,
            )
        }
        OpShape::Matmul { m, k, n } => (
            product("matmul macs", &[b, m, k, n])?,
            product("matmul weights", &[k, n])?,
            product("matmul inputs", &[b, m, k])?,
            product("matmul outputs", &[b, m, n])?,
        ),
        OpShape::Attention { heads, q, kv, d } => {
            let macs = product("attention macs", &[b, heads, q, kv, d])?;
            let qk = product("attention", &[q, d])?;
            let kvd = product("attention", &[kv, d])?;
            let qkv = product("attention", &[q, kv])?;
            let (ins, outs) = if op.kind == OpKind::AttentionScore {
                (sum("attention inputs", &[qk, kvd])?, qkv)
            } else {
                (sum("attention inputs", &[qkv, kvd])?, qk)
            };
            (
                macs,
                0,
                product("attention inputs", &[b, heads, ins])?,
                product("attention outputs", &[b, heads, outs])?,
            )
        }
        OpShape::Elementwise { elements, inputs } => (
            product("elementwise ops", &[b, elements])?,
            0,
            product("elementwise inputs", &[b, inputs, elements])?,
            product("elementwise outputs", &[b, elements])?,
        ),
        OpShape::Normalization { elements, channels } => (
            product("normalization ops", &[b, elements])?,
            product("normalization params", &[2, channels])?,
            product("normalization inputs", &[b, elements])?,
            product("normalization outputs", &[b, elements])?,
        ),
    };
    let bpe = op.bytes_per_element;
    let rep = op.repeat;
    Ok(WorkloadStats {
        flops: product("flops", &[2, macs, rep])?,
        weight_bytes: product("weight bytes", &[weights, bpe, rep])?,
        input_bytes: product("input bytes", &[inputs, bpe, rep])?,
        output_bytes: product("output bytes", &[outputs, bpe, rep])?,
    })
}

/// Roofline classification against the chiplet's peak and the memory's
/// bandwidth. Exactly at the ridge point counts as memory-bound.
pub fn classify_boundedness(
    stats: &WorkloadStats,
    chiplet: &ChipletConfig,
    memory: &MemoryModule,
) -> BoundClass {
    if stats.arithmetic_intensity() * memory.bandwidth > chiplet.peak_flops() {
        BoundClass::ComputeBound
    } else {
        BoundClass::MemoryBound
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchPoint {
    pub batch: u64,
    pub latency: f64,
    /// Samples per second.
    pub throughput: f64,
    pub bound: BoundClass,
}

/// Roofline latency/throughput of one operator across a batch sweep.
pub fn batch_response(
    op: &OperatorNode,
    chiplet: &ChipletConfig,
    memory: &MemoryModule,
    batches: &[u64],
) -> Result<Vec<BatchPoint>> {
    if batches.is_empty() || batches.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation(
            "batches must be nonempty and strictly increasing".into(),
        ));
    }
    batches
        .iter()
        .map(|&b| {
            let stats = operator_footprint(op, b)?;
            let compute = stats.flops as f64 / chiplet.peak_flops();
            let memory_time = stats.total_bytes() as f64 / memory.bandwidth;
            let latency = compute.max(memory_time);
            Ok(BatchPoint {
                batch: b,
                latency,
                throughput: b as f64 / latency,
                bound: classify_boundedness(&stats, chiplet, memory),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perfmodel::{ChipletConfig, Dataflow, MemoryKind, MemoryModule, TechParams};

    fn matmul(m: u64, k: u64, n: u64) -> OperatorNode {
        OperatorNode::new("mm", OpKind::Matmul, OpShape::Matmul { m, k, n }).unwrap()
    }

    #[test]
    fn matmul_footprint_matches_hand_count() {
        let op = matmul(2, 3, 4);
        let s = operator_footprint(&op, 1).unwrap();
        assert_eq!(s.flops, 48);
        assert_eq!(s.weight_bytes, 24);
        assert_eq!(s.input_bytes, 12);
        assert_eq!(s.output_bytes, 16);
        let s2 = operator_footprint(&op, 2).unwrap();
        assert_eq!(s2.flops, 96);
        assert_eq!(s2.weight_bytes, 24);
    }

    #[test]
    fn unit_conv_is_two_flops() {
        let op = OperatorNode::new(
            "c",
            OpKind::Conv,
            OpShape::Conv {
                n: 1,
                k: 1,
                c: 1,
                r: 1,
                s: 1,
                p: 1,
                q: 1,
                stride: 1,
            },
        )
        .unwrap();
        assert_eq!(operator_footprint(&op, 1).unwrap().flops, 2);
    }

    #[test]
    fn overflow_is_an_error() {
        let op = matmul(u64::MAX / 2, 4, 4);
        assert!(matches!(operator_footprint(&op, 1), Err(Error::Overflow(_))));
    }

    #[test]
    fn zero_bound_rejected() {
        assert!(OperatorNode::new("x", OpKind::Matmul, OpShape::Matmul { m: 0, k: 1, n: 1 }).is_err());
    }

    #[test]
    fn single_node_file() {
        let g = parse_network("node a matmul m=64 k=64 n=64\n", "t").unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn dangling_edge_rejected() {
        let err = parse_network("node a matmul m=1 k=1 n=1\nedge a b bytes=4\n", "t").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(parse_network("node a pooling m=1\n", "t").is_err());
    }

    #[test]
    fn cycle_rejected() {
        let text = "node a elementwise elements=4\nnode b elementwise elements=4\n\
                    edge a b bytes=8\nedge b a bytes=8\n";
        let err = parse_network(text, "t").unwrap_err();
        assert!(err.to_string().contains("cycle"));
    }

    #[test]
    fn back_edge_without_cycle_rejected() {
        let text = "node a elementwise elements=4\nnode b elementwise elements=4\nedge b a bytes=8\n";
        assert!(parse_network(text, "t").is_err());
    }

    #[test]
    fn malformed_file_is_parse_error() {
        let err = parse_network("node a matmul m=1 k=x n=1\n", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn attention_is_batch_agnostic() {
        assert_eq!(OpKind::AttentionScore.batch_class(), BatchClass::Agnostic);
        assert_eq!(OpKind::AttentionContext.batch_class(), BatchClass::Agnostic);
        assert_eq!(OpKind::Matmul.batch_class(), BatchClass::Sensitive);
        assert_eq!(OpKind::Conv.batch_class(), BatchClass::Sensitive);
    }

    fn base_chiplet() -> ChipletConfig {
        ChipletConfig::from_scales(Dataflow::WS, 1, 1, &TechParams::default()).unwrap()
    }

    #[test]
    fn boundedness_tie_is_memory_bound() {
        let c = base_chiplet();
        let mut m = MemoryModule::default_for(MemoryKind::Hbm3);
        // intensity 1000 flops/B; bandwidth chosen to land exactly on the ridge
        let stats = WorkloadStats {
            flops: 1000,
            weight_bytes: 1,
            input_bytes: 0,
            output_bytes: 0,
        };
        m.bandwidth = c.peak_flops() / 1000.0;
        assert_eq!(classify_boundedness(&stats, &c, &m), BoundClass::MemoryBound);
        m.bandwidth = c.peak_flops() / 10.0;
        assert_eq!(classify_boundedness(&stats, &c, &m), BoundClass::ComputeBound);
    }

    #[test]
    fn attention_batch_response_is_linear() {
        let op = OperatorNode::new(
            "s",
            OpKind::AttentionScore,
            OpShape::Attention {
                heads: 8,
                q: 1,
                kv: 512,
                d: 64,
            },
        )
        .unwrap();
        let pts = batch_response(&op, &base_chiplet(), &MemoryModule::default_for(MemoryKind::Ddr5), &[1, 2, 4]).unwrap();
        for p in &pts {
            let lat_ratio = p.latency / pts[0].latency;
            assert!((lat_ratio - p.batch as f64).abs() <= 1e-6 * p.batch as f64);
            assert!((p.throughput / pts[0].throughput - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn batch_response_rejects_unsorted() {
        let op = matmul(1, 8, 8);
        let r = batch_response(&op, &base_chiplet(), &MemoryModule::default_for(MemoryKind::Ddr5), &[2, 1]);
        assert!(r.is_err());
    }
}
