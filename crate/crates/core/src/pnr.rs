//! Interposer place and route: shelf packing in pipeline order, BFS routing
//! over a capacity-limited track grid, and footprint minimization.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::Serialize;

use crate::cht::AcceleratorDesign;
use crate::config::PnrParams;
use crate::error::{Error, Result};

/// A chiplet instance to be placed; sizes in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Block {
    pub stage: usize,
    pub instance: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Rect {
    pub stage: usize,
    pub instance: u32,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub rotated: bool,
}

impl Rect {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Edge midpoints: bottom, top, left, right.
    pub fn ports(&self) -> [(u32, u32); 4] {
        let (mx, my) = (self.x + self.w / 2, self.y + self.h / 2);
        [(mx, self.y), (mx, self.y + self.h), (self.x, my), (self.x + self.w, my)]
    }

    fn strictly_contains(&self, x2: u64, y2: u64) -> bool {
        // doubled coordinates so edge midpoints are integral
        let (x0, y0) = (2 * self.x as u64, 2 * self.y as u64);
        let (x1, y1) = (x0 + 2 * self.w as u64, y0 + 2 * self.h as u64);
        x0 < x2 && x2 < x1 && y0 < y2 && y2 < y1
    }
}

/// A connection between two placed rectangles (indices into `rects`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Net {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Route {
    pub net: Net,
    /// Grid points from a port of `from` to a port of `to`.
    pub path: Vec<(u32, u32)>,
}

impl Route {
    pub fn length(&self) -> usize {
        self.path.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Placement {
    pub width: u32,
    pub height: u32,
    pub grid_mm: f64,
    pub edge_capacity: u32,
    pub rects: Vec<Rect>,
    pub routes: Vec<Route>,
}

impl Placement {
    pub fn area_mm2(&self) -> f64 {
        self.width as f64 * self.height as f64 * self.grid_mm * self.grid_mm
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("placement serializes")
    }

    /// Character map of the layout, downsampled to at most 80 columns.
    /// Chiplets show their stage index (base 36), routes `*`.
    pub fn to_text(&self) -> String {
        let scale = self.width.max(self.height).div_ceil(80).max(1);
        let (cols, rows) = (self.width.div_ceil(scale).max(1), self.height.div_ceil(scale).max(1));
        let mut grid = vec![vec!['.'; cols as usize]; rows as usize];
        for r in &self.rects {
            let ch = std::char::from_digit((r.stage % 36) as u32, 36).unwrap_or('#');
            for y in r.y / scale..(r.y + r.h).div_ceil(scale).min(rows) {
                for x in r.x / scale..(r.x + r.w).div_ceil(scale).min(cols) {
                    grid[y as usize][x as usize] = ch;
                }
            }
        }
        for route in &self.routes {
            for &(x, y) in &route.path {
                let (cx, cy) = ((x / scale).min(cols - 1), (y / scale).min(rows - 1));
                grid[cy as usize][cx as usize] = '*';
            }
        }
        let mut s = format!(
            "interposer {}x{} grid ({:.1}x{:.1} mm), {} chiplets, {} nets, 1 char = {} units\n",
            self.width,
            self.height,
            self.width as f64 * self.grid_mm,
            self.height as f64 * self.grid_mm,
            self.rects.len(),
            self.routes.len(),
            scale
        );
        // y grows upward
        for row in grid.iter().rev() {
            s.extend(row.iter());
            s.push('\n');
        }
        for (i, r) in self.routes.iter().enumerate() {
            let _ = writeln!(s, "net {i}: {} -> {} length {}", r.net.from, r.net.to, r.length());
        }
        s
    }
}

/// One square block per chiplet instance (`tp` per stage), in pipeline order.
pub fn design_blocks(design: &AcceleratorDesign, grid_mm: f64) -> Vec<Block> {
    let mut out = Vec::new();
    for (stage, c) in design.stages.iter().enumerate() {
        let side = ((c.chiplet.area.sqrt() / grid_mm).ceil() as u32).max(1);
        for instance in 0..c.tp {
            out.push(Block {
                stage,
                instance,
                w: side,
                h: side,
            });
        }
    }
    out
}

/// Shelf packing left to right, bottom to top, in the given order; a block
/// that overruns the shelf is tried rotated before opening a new shelf.
pub fn place_blocks(blocks: &[Block], width: u32, height: u32) -> Result<Vec<Rect>> {
    let total: u64 = blocks.iter().map(|b| b.w as u64 * b.h as u64).sum();
    if total > width as u64 * height as u64 {
        return Err(Error::Infeasible(format!(
            "chiplet area {total} exceeds interposer {width}x{height}"
        )));
    }
    let (mut x, mut shelf_y, mut shelf_h) = (0u32, 0u32, 0u32);
    let mut rects = Vec::with_capacity(blocks.len());
    for b in blocks {
        if b.w.min(b.h) > width.min(height) || b.w.max(b.h) > width.max(height) {
            return Err(Error::Infeasible(format!("{}x{} chiplet exceeds interposer", b.w, b.h)));
        }
        let mut dims = [(b.w, b.h, false), (b.h, b.w, true)].into_iter().filter(|&(w, _, _)| x + w <= width);
        let (w, h, rotated) = match dims.next() {
            Some(d) => d,
            None => {
                shelf_y += shelf_h;
                x = 0;
                shelf_h = 0;
                if b.w <= width { (b.w, b.h, false) } else { (b.h, b.w, true) }
            }
        };
        if shelf_y + h > height {
            return Err(Error::Infeasible(format!("shelf packing overflows height {height}")));
        }
        rects.push(Rect {
            stage: b.stage,
            instance: b.instance,
            x,
            y: shelf_y,
            w,
            h,
            rotated,
        });
        x += w;
        shelf_h = shelf_h.max(h);
    }
    Ok(rects)
}

pub fn place(design: &AcceleratorDesign, width: u32, height: u32, params: &PnrParams) -> Result<Placement> {
    let rects = place_blocks(&design_blocks(design, params.grid_mm), width, height)?;
    Ok(Placement {
        width,
        height,
        grid_mm: params.grid_mm,
        edge_capacity: params.edge_capacity,
        rects,
        routes: Vec::new(),
    })
}

/// Nets in pipeline order: tensor-parallel instances of a stage are chained,
/// then each stage's first instance connects to the next stage's.
pub fn pipeline_nets(rects: &[Rect]) -> Vec<Net> {
    let mut order: Vec<usize> = (0..rects.len()).collect();
    order.sort_by_key(|&i| (rects[i].stage, rects[i].instance));
    let mut nets = Vec::new();
    let mut stage_head: Option<usize> = None;
    for w in 0..order.len() {
        let i = order[w];
        if rects[i].instance == 0 {
            if let Some(h) = stage_head {
                nets.push(Net { from: h, to: i });
            }
            stage_head = Some(i);
        } else if w > 0 && rects[order[w - 1]].stage == rects[i].stage {
            nets.push(Net { from: order[w - 1], to: i });
        }
    }
    nets
}

/// Walkable points and edges of the track grid plus remaining capacities.
struct TrackGrid {
    w: u32,
    h: u32,
    blocked: Vec<bool>,
    /// Horizontal edge (x,y)-(x+1,y) at y*w + x.
    cap_h: Vec<u32>,
    /// Vertical edge (x,y)-(x,y+1) at y*(w+1) + x.
    cap_v: Vec<u32>,
}

impl TrackGrid {
    fn new(p: &Placement) -> Self {
        let (w, h) = (p.width, p.height);
        let mut blocked = vec![false; ((w + 1) * (h + 1)) as usize];
        let mut cap_h = vec![p.edge_capacity; (w * (h + 1)) as usize];
        let mut cap_v = vec![p.edge_capacity; ((w + 1) * h) as usize];
        for r in &p.rects {
            for y in r.y + 1..r.y + r.h {
                for x in r.x + 1..r.x + r.w {
                    blocked[(y * (w + 1) + x) as usize] = true;
                }
                for x in r.x..r.x + r.w {
                    cap_h[(y * w + x) as usize] = 0;
                }
            }
            for x in r.x + 1..r.x + r.w {
                for y in r.y..r.y + r.h {
                    cap_v[(y * (w + 1) + x) as usize] = 0;
                }
            }
        }
        TrackGrid {
            w,
            h,
            blocked,
            cap_h,
            cap_v,
        }
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        (y * (self.w + 1) + x) as usize
    }

    /// Neighbours reachable over an edge with spare capacity, in a fixed order.
    fn neighbours(&self, x: u32, y: u32) -> impl Iterator<Item = (u32, u32)> + '_ {
        let right = (x < self.w && self.cap_h[(y * self.w + x) as usize] > 0).then(|| (x + 1, y));
        let left = (x > 0 && self.cap_h[(y * self.w + x - 1) as usize] > 0).then(|| (x - 1, y));
        let up = (y < self.h && self.cap_v[(y * (self.w + 1) + x) as usize] > 0).then(|| (x, y + 1));
        let down = (y > 0 && self.cap_v[((y - 1) * (self.w + 1) + x) as usize] > 0).then(|| (x, y - 1));
        [right, left, up, down]
            .into_iter()
            .flatten()
            .filter(|&(nx, ny)| !self.blocked[self.idx(nx, ny)])
    }

    fn consume(&mut self, a: (u32, u32), b: (u32, u32)) {
        if a.1 == b.1 {
            let x = a.0.min(b.0);
            self.cap_h[(a.1 * self.w + x) as usize] -= 1;
        } else {
            let y = a.1.min(b.1);
            self.cap_v[(y * (self.w + 1) + a.0) as usize] -= 1;
        }
    }

    fn shortest_path(&self, sources: &[(u32, u32)], targets: &[(u32, u32)]) -> Option<Vec<(u32, u32)>> {
        const UNSEEN: usize = usize::MAX;
        let mut parent = vec![UNSEEN; self.blocked.len()];
        let mut queue = VecDeque::new();
        for &s in sources {
            let i = self.idx(s.0, s.1);
            if parent[i] == UNSEEN {
                parent[i] = i;
                queue.push_back(s);
            }
        }
        while let Some((x, y)) = queue.pop_front() {
            if targets.contains(&(x, y)) {
                let mut path = vec![(x, y)];
                let mut i = self.idx(x, y);
                while parent[i] != i {
                    i = parent[i];
                    let w1 = self.w + 1;
                    path.push(((i as u32) % w1, (i as u32) / w1));
                }
                path.reverse();
                return Some(path);
            }
            let here = self.idx(x, y);
            for (nx, ny) in self.neighbours(x, y) {
                let j = self.idx(nx, ny);
                if parent[j] == UNSEEN {
                    parent[j] = here;
                    queue.push_back((nx, ny));
                }
            }
        }
        None
    }
}

/// Routes every pipeline net, shortest path first-come in net order.
pub fn route(mut placement: Placement) -> Result<Placement> {
    let mut grid = TrackGrid::new(&placement);
    let mut routes = Vec::new();
    for net in pipeline_nets(&placement.rects) {
        let src = placement.rects[net.from].ports();
        let dst = placement.rects[net.to].ports();
        let path = grid
            .shortest_path(&src, &dst)
            .ok_or_else(|| Error::Infeasible(format!("net {} -> {} cannot be routed", net.from, net.to)))?;
        for w in path.windows(2) {
            grid.consume(w[0], w[1]);
        }
        routes.push(Route { net, path });
    }
    placement.routes = routes;
    Ok(placement)
}

pub fn place_and_route(design: &AcceleratorDesign, side: u32, params: &PnrParams) -> Result<Placement> {
    place_and_route_blocks(&design_blocks(design, params.grid_mm), side, params)
}

pub fn place_and_route_blocks(blocks: &[Block], side: u32, params: &PnrParams) -> Result<Placement> {
    route(Placement {
        width: side,
        height: side,
        grid_mm: params.grid_mm,
        edge_capacity: params.edge_capacity,
        rects: place_blocks(blocks, side, side)?,
        routes: Vec::new(),
    })
}

/// Smallest square interposer (grid resolution) that places and routes.
pub fn minimize_footprint(design: &AcceleratorDesign, params: &PnrParams) -> Result<Placement> {
    minimize_footprint_blocks(&design_blocks(design, params.grid_mm), params)
}

pub fn minimize_footprint_blocks(blocks: &[Block], params: &PnrParams) -> Result<Placement> {
    let area: u64 = blocks.iter().map(|b| b.w as u64 * b.h as u64).sum();
    let widest = blocks.iter().map(|b| b.w.max(b.h)).max().unwrap_or(1);
    let mut lo = widest.max((area as f64).sqrt().ceil() as u32);
    if lo > params.max_side {
        return Err(Error::Infeasible(format!(
            "chiplets need side >= {lo}, above the {} limit",
            params.max_side
        )));
    }
    // grow geometrically from the area bound; routing cost scales with side²
    let mut hi = lo;
    let mut best = loop {
        match place_and_route_blocks(blocks, hi, params) {
            Ok(p) => break p,
            Err(e) if e.is_infeasible() => {
                if hi == params.max_side {
                    return Err(Error::Infeasible(format!("no layout at the maximum side {hi}: {e}")));
                }
                lo = hi + 1;
                hi = hi.saturating_mul(2).min(params.max_side);
            }
            Err(e) => return Err(e),
        }
    };
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        match place_and_route_blocks(blocks, mid, params) {
            Ok(p) => {
                best = p;
                hi = mid;
            }
            Err(e) if e.is_infeasible() => lo = mid + 1,
            Err(e) => return Err(e),
        }
    }
    // shelf packing is not monotone in the side; walk down to a true edge
    while best.width > 1 {
        match place_and_route_blocks(blocks, best.width - 1, params) {
            Ok(p) => best = p,
            Err(e) if e.is_infeasible() => break,
            Err(e) => return Err(e),
        }
    }
    Ok(best)
}

/// Perimeter growth from splitting one die into `n` equal square chiplets of
/// the same total area.
pub fn perimeter_scaling(n: u32) -> Result<f64> {
    if n == 0 {
        return Err(Error::Validation("chiplet count must be positive".into()));
    }
    Ok((n as f64).sqrt())
}

/// Aggregate edge bandwidth (bytes/s) of `n` square chiplets sharing
/// `total_area_mm2`.
pub fn edge_bandwidth(total_area_mm2: f64, n: u32, params: &PnrParams) -> Result<f64> {
    Ok(4.0 * total_area_mm2.sqrt() * perimeter_scaling(n)? * params.edge_bandwidth_per_mm)
}

/// Independent geometric check of a routed placement.
pub fn validate_placement(p: &Placement) -> Result<()> {
    let bad = |m: String| Err(Error::Validation(m));
    for (i, r) in p.rects.iter().enumerate() {
        if r.w == 0 || r.h == 0 || r.x + r.w > p.width || r.y + r.h > p.height {
            return bad(format!("rect {i} out of bounds"));
        }
        for (j, o) in p.rects.iter().enumerate().skip(i + 1) {
            let overlap_x = r.x < o.x + o.w && o.x < r.x + r.w;
            let overlap_y = r.y < o.y + o.h && o.y < r.y + r.h;
            if overlap_x && overlap_y {
                return bad(format!("rects {i} and {j} overlap"));
            }
        }
    }
    let expected = pipeline_nets(&p.rects);
    if p.routes.iter().map(|r| r.net).collect::<Vec<_>>() != expected {
        return bad("routed nets differ from the pipeline nets".into());
    }
    let mut usage = std::collections::HashMap::new();
    for (k, route) in p.routes.iter().enumerate() {
        let (Some(first), Some(last)) = (route.path.first(), route.path.last()) else {
            return bad(format!("route {k} is empty"));
        };
        if !p.rects[route.net.from].ports().contains(first) || !p.rects[route.net.to].ports().contains(last) {
            return bad(format!("route {k} does not join its ports"));
        }
        for &(x, y) in &route.path {
            if x > p.width || y > p.height {
                return bad(format!("route {k} leaves the interposer"));
            }
            if p.rects.iter().any(|r| r.strictly_contains(2 * x as u64, 2 * y as u64)) {
                return bad(format!("route {k} crosses a chiplet interior"));
            }
        }
        for w in route.path.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a.0.abs_diff(b.0) + a.1.abs_diff(b.1) != 1 {
                return bad(format!("route {k} is not a unit Manhattan path"));
            }
            let (mx, my) = (a.0 as u64 + b.0 as u64, a.1 as u64 + b.1 as u64);
            if p.rects.iter().any(|r| r.strictly_contains(mx, my)) {
                return bad(format!("route {k} cuts through a chiplet"));
            }
            let e = (a.min(b), a.max(b));
            let n = usage.entry(e).or_insert(0u32);
            *n += 1;
            if *n > p.edge_capacity {
                return bad(format!("edge {e:?} over capacity"));
            }
        }
    }
    Ok(())
}

/// Smallest Manhattan distance between any port pair of a net.
pub fn manhattan_lower_bound(p: &Placement, net: Net) -> u32 {
    let a = p.rects[net.from].ports();
    let b = p.rects[net.to].ports();
    a.iter()
        .flat_map(|pa| b.iter().map(move |pb| pa.0.abs_diff(pb.0) + pa.1.abs_diff(pb.1)))
        .min()
        .unwrap_or(0)
}
