//! Workload graphs bundled with the crate.

use crate::error::Result;
use crate::perfmodel::{ChipletKey, Dataflow};
use crate::workload::{parse_network, OperatorGraph};

pub const NAMES: [&str; 12] = [
    "toy",
    "toy_mobile",
    "toy_decode",
    "compute_heavy",
    "resnet50",
    "mobilenetv3",
    "replknet31",
    "vit_b16",
    "opt66b_decode",
    "opt66b_prefill",
    "opt66b_prefill_512",
    "opt1.3b_decode",
];

/// Small networks that exhaustive pool and fusion search can enumerate.
pub const TOY_SUITE: [&str; 4] = ["toy", "toy_mobile", "toy_decode", "compute_heavy"];

/// Eight-point chiplet menu used for pool-budget sweeps over [`TOY_SUITE`].
pub fn toy_menu() -> Vec<ChipletKey> {
    let mut out = Vec::new();
    for dataflow in [Dataflow::RS, Dataflow::WS] {
        for pe_scale in [1, 4] {
            for glb_scale in [1, 16] {
                out.push(ChipletKey {
                    dataflow,
                    pe_scale,
                    glb_scale,
                });
            }
        }
    }
    out
}

pub fn source(name: &str) -> Option<&'static str> {
    Some(match name {
        "toy" => include_str!("../fixtures/toy.graph"),
        "toy_mobile" => include_str!("../fixtures/toy_mobile.graph"),
        "toy_decode" => include_str!("../fixtures/toy_decode.graph"),
        "compute_heavy" => include_str!("../fixtures/compute_heavy.graph"),
        "resnet50" => include_str!("../fixtures/resnet50.graph"),
        "mobilenetv3" => include_str!("../fixtures/mobilenetv3.graph"),
        "replknet31" => include_str!("../fixtures/replknet31.graph"),
        "vit_b16" => include_str!("../fixtures/vit_b16.graph"),
        "opt66b_decode" => include_str!("../fixtures/opt66b_decode.graph"),
        "opt66b_prefill" => include_str!("../fixtures/opt66b_prefill.graph"),
        "opt66b_prefill_512" => include_str!("../fixtures/opt66b_prefill_512.graph"),
        "opt1.3b_decode" => include_str!("../fixtures/opt1.3b_decode.graph"),
        _ => return None,
    })
}

/// Parses a bundled graph by name.
pub fn graph(name: &str) -> Result<OperatorGraph> {
    let text = source(name).ok_or_else(|| crate::error::Error::unknown("fixture", name))?;
    parse_network(text, name)
}

/// A bundled graph name, or else a path on disk.
pub fn resolve(name_or_path: &str) -> Result<OperatorGraph> {
    match source(name_or_path) {
        Some(_) => graph(name_or_path),
        None => crate::workload::load_network(name_or_path),
    }
}
