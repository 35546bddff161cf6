//! Subgradient cells and the Alexandrov Monge–Ampère operator on nodal functions.
//!
//! The cell of node `i` is `{p : p·(x_j − x_i) <= u_j − u_i for all j}`.
//! Cells are first built from a local neighbour list, then refined against
//! every node that could still cut them.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{HalfSpace, Polygon, Polyhedron, BOX_TAG};
use crate::lattice::{ConvexNodalFunction, GradientBox, Lattice, Layout, NodeKind};
use crate::measure::QuadraticAsymptote;

/// Half-width of the stand-in box for cells without a gradient box.
const FAR: f64 = 1e9;

#[derive(Clone, Debug)]
pub enum Cell {
    Plane(Polygon),
    Space(Polyhedron),
}

impl Cell {
    fn from_box(n: usize, lo: [f64; 3], hi: [f64; 3], tags: [i64; 6]) -> Self {
        if n == 2 {
            // rect edges: bottom(-y), right(+x), top(+y), left(-x)
            Cell::Plane(Polygon::rect([lo[0], lo[1]], [hi[0], hi[1]], [tags[2], tags[1], tags[3], tags[0]]))
        } else {
            Cell::Space(Polyhedron::cuboid(lo, hi, tags))
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Cell::Plane(p) => p.is_empty(),
            Cell::Space(p) => p.is_empty(),
        }
    }

    pub fn clip(&mut self, h: &HalfSpace) {
        match self {
            Cell::Plane(p) => p.clip(h),
            Cell::Space(p) => p.clip(h),
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Cell::Plane(p) => p.area(),
            Cell::Space(p) => p.volume(),
        }
    }

    pub fn centroid(&self) -> [f64; 3] {
        match self {
            Cell::Plane(p) => {
                let c = p.centroid();
                [c[0], c[1], 0.0]
            }
            Cell::Space(p) => p.centroid(),
        }
    }

    /// `(constraint tag, facet measure)` pairs.
    pub fn facets(&self) -> Vec<(i64, f64)> {
        match self {
            Cell::Plane(p) => p.facets(),
            Cell::Space(p) => p.facets(),
        }
    }

    pub fn vertices(&self) -> Vec<[f64; 3]> {
        match self {
            Cell::Plane(p) => p.verts.iter().map(|v| [v[0], v[1], 0.0]).collect(),
            Cell::Space(p) => p.vertices().to_vec(),
        }
    }
}

/// A cell in coordinates relative to `shift`.
#[derive(Clone, Debug)]
pub struct NodeCell {
    pub cell: Cell,
    pub shift: [f64; 3],
}

impl NodeCell {
    pub fn volume(&self) -> f64 {
        self.cell.volume()
    }

    /// Centroid in absolute coordinates (a subgradient of the envelope).
    pub fn centroid(&self) -> [f64; 3] {
        let c = self.cell.centroid();
        [c[0] + self.shift[0], c[1] + self.shift[1], c[2] + self.shift[2]]
    }

    pub fn vertices(&self) -> Vec<[f64; 3]> {
        self.cell
            .vertices()
            .into_iter()
            .map(|v| [v[0] + self.shift[0], v[1] + self.shift[1], v[2] + self.shift[2]])
            .collect()
    }
}

/// Cell volume and `∂vol_i/∂u_j` for each neighbour `j` with a facet.
#[derive(Clone, Debug, Default)]
pub struct CellEval {
    pub volume: f64,
    pub couplings: Vec<(usize, f64)>,
}

impl CellEval {
    /// `∂vol_i/∂u_i`.
    pub fn diagonal(&self) -> f64 {
        -self.couplings.iter().map(|c| c.1).sum::<f64>()
    }
}

/// Bound on how far a cutting neighbour can be: values stay within `w_i − min w`
/// of a quadratic with smallest eigenvalue `lambda`.
#[derive(Clone, Debug)]
pub struct SearchBound {
    q: QuadraticAsymptote,
    ainv: [[f64; 3]; 3],
    lambda: f64,
    w: Vec<f64>,
    min_w: f64,
    blocks: Vec<Block>,
}

/// Lattice nodes grouped in small boxes, with the smallest `w = u − q` of each.
#[derive(Clone, Debug)]
struct Block {
    lo: [f64; 3],
    hi: [f64; 3],
    min_w: f64,
    nodes: Vec<usize>,
}

const BLOCK: i64 = 4;

impl SearchBound {
    fn new(q: &QuadraticAsymptote, layout: &Layout, values: &[f64]) -> Self {
        let n = layout.n();
        let lambda = q.matrix().clone().symmetric_eigen().eigenvalues.min();
        let inv = q.matrix().clone().try_inverse().expect("positive definite");
        let mut ainv = [[0.0; 3]; 3];
        for r in 0..n {
            for c in 0..n {
                ainv[r][c] = inv[(r, c)];
            }
        }
        let w: Vec<f64> = (0..values.len()).map(|i| values[i] - q.eval(&layout.position3(i)[..n])).collect();
        let min_w = w.iter().copied().fold(f64::INFINITY, f64::min);
        let mut blocks: Vec<Block> = Vec::new();
        if let Layout::Lattice(l) = layout {
            let mut index = std::collections::HashMap::new();
            for i in 0..l.len() {
                let k = l.multi_index(i);
                let key = [k[0].div_euclid(BLOCK), k[1].div_euclid(BLOCK), k[2].div_euclid(BLOCK)];
                let b = *index.entry(key).or_insert_with(|| {
                    blocks.push(Block { lo: [f64::INFINITY; 3], hi: [f64::NEG_INFINITY; 3], min_w: f64::INFINITY, nodes: Vec::new() });
                    blocks.len() - 1
                });
                let x = l.position3(i);
                let blk = &mut blocks[b];
                for d in 0..3 {
                    blk.lo[d] = blk.lo[d].min(x[d]);
                    blk.hi[d] = blk.hi[d].max(x[d]);
                }
                blk.min_w = blk.min_w.min(w[i]);
                blk.nodes.push(i);
            }
        }
        Self { q: q.clone(), ainv, lambda, w, min_w, blocks }
    }

    /// Radius beyond which no node can cut a cell whose vertices are all within
    /// `reach` of `∇q(x_i)`.
    fn radius(&self, i: usize, reach: f64) -> f64 {
        let osc = (self.w[i] - self.min_w).max(0.0);
        let r = (reach + (reach * reach + 2.0 * self.lambda * osc).sqrt()) / self.lambda;
        r * (1.0 + 1e-9) + 1e-12
    }

    /// Minimiser `A⁻¹(p − b)` of `q(x) − p·x` and the value of `q(x) − p·(x − x_i)` there.
    fn support_point(&self, n: usize, p: &[f64; 3], xi: &[f64; 3]) -> ([f64; 3], f64) {
        let b = self.q.linear();
        let mut xs = [0.0; 3];
        for r in 0..n {
            xs[r] = (0..n).map(|c| self.ainv[r][c] * (p[c] - b[c])).sum();
        }
        let f = self.q.eval(&xs[..n]) - (0..n).map(|k| p[k] * (xs[k] - xi[k])).sum::<f64>();
        (xs, f)
    }
}

fn box_distance(n: usize, x: &[f64; 3], lo: &[f64; 3], hi: &[f64; 3]) -> f64 {
    (0..n).map(|k| (lo[k] - x[k]).max(x[k] - hi[k]).max(0.0).powi(2)).sum::<f64>().sqrt()
}

/// Neighbour lists and cell construction for one node layout.
#[derive(Clone, Debug)]
pub struct CellSystem {
    layout: Layout,
    neighbors: Vec<Vec<usize>>,
    gradient_box: Option<GradientBox>,
    reference: Option<QuadraticAsymptote>,
}

fn tol_for(off: f64, vk: f64) -> f64 {
    1e-11 * (off.abs() + vk.abs()) + 1e-300
}

impl CellSystem {
    pub fn new(u: &ConvexNodalFunction) -> Self {
        let neighbors = match &u.layout {
            Layout::Lattice(l) => (0..l.len())
                .map(|i| l.stencil().iter().filter_map(|o| l.neighbor(i, *o)).collect())
                .collect(),
            Layout::Explicit { points, .. } => {
                let m = points.len();
                (0..m).map(|i| (0..m).filter(|&j| j != i).collect()).collect()
            }
        };
        Self { layout: u.layout.clone(), neighbors, gradient_box: u.gradient_box, reference: u.reference.clone() }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn n_links(&self) -> usize {
        self.neighbors.iter().map(|v| v.len()).sum()
    }

    /// Constraint from node `j` on the cell of `i`, as `(normal, offset, |x_j − x_i|)`
    /// with the offset relative to `shift`.
    fn constraint(&self, i: usize, j: usize, values: &[f64], shift: &[f64; 3]) -> ([f64; 3], f64, f64) {
        match &self.layout {
            Layout::Lattice(l) => {
                let (ki, kj) = (l.multi_index(i), l.multi_index(j));
                let k = [(kj[0] - ki[0]) as f64, (kj[1] - ki[1]) as f64, (kj[2] - ki[2]) as f64];
                let h = l.spacing();
                let off = (values[j] - values[i]) / h - (k[0] * shift[0] + k[1] * shift[1] + k[2] * shift[2]);
                let len = h * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
                (k, off, len)
            }
            Layout::Explicit { points, .. } => {
                let (xi, xj) = (points[i], points[j]);
                let d = [xj[0] - xi[0], xj[1] - xi[1], xj[2] - xi[2]];
                let off = values[j] - values[i] - (d[0] * shift[0] + d[1] * shift[1] + d[2] * shift[2]);
                (d, off, (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
            }
        }
    }

    fn starting_cell(&self, i: usize, values: &[f64], used: &mut Vec<usize>) -> Result<NodeCell> {
        if let Layout::Lattice(l) = &self.layout {
            if l.kind(i) == NodeKind::Interior {
                return Ok(axis_box(l, i, values, used));
            }
        }
        let (lo, hi) = match (&self.gradient_box, self.layout.is_boundary(i)) {
            (Some(g), _) => (g.lo, g.hi),
            (None, false) => ([-FAR; 3], [FAR; 3]),
            (None, true) => {
                return Err(Error::InvalidInput(
                    "boundary cell is unbounded: set gradient_box from the boundary data".into(),
                ))
            }
        };
        Ok(self.box_cell(&GradientBox { lo, hi }))
    }

    fn box_cell(&self, b: &GradientBox) -> NodeCell {
        let n = self.layout.n();
        let mut shift = [0.0; 3];
        let mut l3 = [0.0; 3];
        let mut h3 = [0.0; 3];
        for k in 0..n {
            shift[k] = 0.5 * (b.lo[k] + b.hi[k]);
            l3[k] = b.lo[k] - shift[k];
            h3[k] = b.hi[k] - shift[k];
        }
        NodeCell { cell: Cell::from_box(n, l3, h3, [BOX_TAG; 6]), shift }
    }

    /// Cell from the current neighbour list only.
    pub fn local_cell(&self, i: usize, values: &[f64]) -> Result<(NodeCell, Vec<usize>)> {
        let (c, used) = self.clip_list(i, values, None)?;
        let unboxed = self.gradient_box.is_none() && !self.layout.is_boundary(i) && self.layout.lattice().is_none();
        if !unboxed || c.cell.is_empty() {
            return Ok((c, used));
        }
        if c.cell.facets().iter().any(|f| f.0 == BOX_TAG && f.1 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "cell of node {i} is unbounded: set gradient_box from the boundary data"
            )));
        }
        // redo inside a tight box so clipping tolerances follow the cell size
        let v = c.vertices();
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for k in 0..self.layout.n() {
            let a = v.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let b = v.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            let pad = 0.5 * (b - a) + 1e-300;
            lo[k] = a - pad;
            hi[k] = b + pad;
        }
        self.clip_list(i, values, Some(GradientBox { lo, hi }))
    }

    fn clip_list(&self, i: usize, values: &[f64], tight: Option<GradientBox>) -> Result<(NodeCell, Vec<usize>)> {
        let mut used = Vec::new();
        let mut c = match tight {
            Some(b) => self.box_cell(&b),
            None => self.starting_cell(i, values, &mut used)?,
        };
        for &j in &self.neighbors[i] {
            if used.contains(&j) {
                continue;
            }
            let (normal, offset, _) = self.constraint(i, j, values, &c.shift);
            c.cell.clip(&HalfSpace { normal, offset, tag: j as i64 });
            used.push(j);
            if c.cell.is_empty() {
                break;
            }
        }
        Ok((c, used))
    }

    /// Exact cell: the local cell cut by every node that still violates one of its vertices.
    /// Returns the cell and the nodes newly found to cut it.
    pub fn exact_cell(&self, i: usize, values: &[f64], bound: Option<&SearchBound>) -> Result<(NodeCell, Vec<usize>)> {
        let (mut c, mut used) = self.local_cell(i, values)?;
        let mut added = Vec::new();
        loop {
            if c.cell.is_empty() {
                break;
            }
            let verts = c.cell.vertices();
            let m = verts.len() as f64;
            let mut ctr = [0.0; 3];
            for v in &verts {
                for k in 0..3 {
                    ctr[k] += v[k] / m;
                }
            }
            let rad = verts
                .iter()
                .map(|v| ((v[0] - ctr[0]).powi(2) + (v[1] - ctr[1]).powi(2) + (v[2] - ctr[2]).powi(2)).sqrt())
                .fold(0.0, f64::max);
            let mut violators: Vec<(usize, [f64; 3], f64)> = Vec::new();
            let mut test = |j: usize| {
                if j == i || used.contains(&j) {
                    return;
                }
                let (normal, off, _) = self.constraint(i, j, values, &c.shift);
                let nn = (normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]).sqrt();
                let cc = normal[0] * ctr[0] + normal[1] * ctr[1] + normal[2] * ctr[2];
                if cc + rad * nn <= off {
                    return;
                }
                for v in &verts {
                    let vk = normal[0] * v[0] + normal[1] * v[1] + normal[2] * v[2];
                    if vk - off > tol_for(off, vk) {
                        violators.push((j, normal, off));
                        return;
                    }
                }
            };
            match (&self.layout, bound) {
                (Layout::Lattice(l), Some(b)) => {
                    let n = l.n();
                    let x = l.position3(i);
                    let g = b.q.gradient(&x[..n]);
                    let reach = verts
                        .iter()
                        .map(|v| {
                            (0..n).map(|k| (v[k] + c.shift[k] - g[k]).powi(2)).sum::<f64>().sqrt()
                        })
                        .fold(0.0, f64::max);
                    let r = b.radius(i, reach);
                    // u_j − u_i − p·(x_j − x_i) >= min_x [q(x) − p·(x − x_i)] + min_w(block) − u_i,
                    // and min_x over a block is at least f(x*) + λ/2 dist(x*, block)²
                    let slopes: Vec<[f64; 3]> =
                        verts.iter().map(|v| [v[0] + c.shift[0], v[1] + c.shift[1], v[2] + c.shift[2]]).collect();
                    let support: Vec<([f64; 3], f64)> = slopes.iter().map(|p| b.support_point(n, p, &x)).collect();
                    let fmin = support.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
                    let mut sc = [0.0; 3];
                    for s in &support {
                        for k in 0..n {
                            sc[k] += s.0[k] / support.len() as f64;
                        }
                    }
                    let srad = support
                        .iter()
                        .map(|s| (0..n).map(|k| (s.0[k] - sc[k]).powi(2)).sum::<f64>().sqrt())
                        .fold(0.0, f64::max);
                    let ui = values[i];
                    for blk in &b.blocks {
                        if box_distance(n, &x, &blk.lo, &blk.hi) > r {
                            continue;
                        }
                        let lower = |f: f64, d: f64| f + 0.5 * b.lambda * d * d + blk.min_w - ui;
                        let dc = (box_distance(n, &sc, &blk.lo, &blk.hi) - srad).max(0.0);
                        if lower(fmin, dc) > 0.0 {
                            continue;
                        }
                        if support.iter().all(|s| lower(s.1, box_distance(n, &s.0, &blk.lo, &blk.hi)) > 0.0) {
                            continue;
                        }
                        for &j in &blk.nodes {
                            test(j);
                        }
                    }
                }
                _ => {
                    for j in 0..self.layout.len() {
                        test(j);
                    }
                }
            }
            if violators.is_empty() {
                break;
            }
            for (j, normal, offset) in violators {
                c.cell.clip(&HalfSpace { normal, offset, tag: j as i64 });
                used.push(j);
                added.push(j);
            }
        }
        Ok((c, added))
    }

    /// Neighbour-search bound for `values`, when a reference quadratic is known.
    pub fn bound(&self, values: &[f64]) -> Option<SearchBound> {
        self.reference.as_ref().map(|q| SearchBound::new(q, &self.layout, values))
    }

    fn link_length(&self, i: usize, j: usize) -> f64 {
        match &self.layout {
            Layout::Lattice(l) => {
                let (ki, kj) = (l.multi_index(i), l.multi_index(j));
                let d2: i64 = (0..3).map(|k| (kj[k] - ki[k]).pow(2)).sum();
                l.spacing() * (d2 as f64).sqrt()
            }
            Layout::Explicit { points, .. } => {
                (0..3).map(|k| (points[j][k] - points[i][k]).powi(2)).sum::<f64>().sqrt()
            }
        }
    }

    fn eval_from(&self, i: usize, c: &NodeCell) -> CellEval {
        let mut couplings: Vec<(usize, f64)> = Vec::new();
        for (tag, area) in c.cell.facets() {
            if tag < 0 || area <= 0.0 {
                continue;
            }
            let j = tag as usize;
            let len = self.link_length(i, j);
            match couplings.iter_mut().find(|e| e.0 == j) {
                Some(e) => e.1 += area / len,
                None => couplings.push((j, area / len)),
            }
        }
        CellEval { volume: c.volume(), couplings }
    }

    /// Volumes and Jacobian rows from the neighbour lists, for `nodes`.
    pub fn evaluate(&self, values: &[f64], nodes: &[usize]) -> Result<Vec<CellEval>> {
        nodes
            .par_iter()
            .map(|&i| {
                let (c, _) = self.local_cell(i, values)?;
                Ok(self.eval_from(i, &c))
            })
            .collect()
    }

    /// Finds nodes beyond the lists that cut the cells of `nodes`; records
    /// them symmetrically and returns how many links were added.
    pub fn refine(&mut self, values: &[f64], nodes: &[usize]) -> Result<usize> {
        if matches!(self.layout, Layout::Explicit { .. }) {
            return Ok(0);
        }
        let bound = self.bound(values);
        let found: Vec<(usize, Vec<usize>)> = nodes
            .par_iter()
            .map(|&i| self.exact_cell(i, values, bound.as_ref()).map(|(_, a)| (i, a)))
            .collect::<Result<_>>()?;
        let mut count = 0;
        for (i, added) in found {
            for j in added {
                if !self.neighbors[i].contains(&j) {
                    self.neighbors[i].push(j);
                    count += 1;
                }
                if !self.neighbors[j].contains(&i) {
                    self.neighbors[j].push(i);
                }
            }
        }
        Ok(count)
    }

    /// Exact cells for `nodes`.
    pub fn exact_cells(&self, values: &[f64], nodes: &[usize]) -> Result<Vec<NodeCell>> {
        let bound = self.bound(values);
        nodes.par_iter().map(|&i| self.exact_cell(i, values, bound.as_ref()).map(|(c, _)| c)).collect()
    }
}

/// Cell of an interior lattice node started from its axis neighbours.
fn axis_box(l: &Lattice, i: usize, values: &[f64], used: &mut Vec<usize>) -> NodeCell {
    let n = l.n();
    let h = l.spacing();
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    let mut tags = [BOX_TAG; 6];
    let mut shift = [0.0; 3];
    for k in 0..n {
        let mut e = [0i64; 3];
        e[k] = 1;
        let jp = l.neighbor(i, e).expect("interior node has axis neighbours");
        e[k] = -1;
        let jm = l.neighbor(i, e).expect("interior node has axis neighbours");
        let up = (values[jp] - values[i]) / h;
        let dn = (values[i] - values[jm]) / h;
        shift[k] = 0.5 * (up + dn);
        hi[k] = up - shift[k];
        lo[k] = dn - shift[k];
        tags[2 * k] = jm as i64;
        tags[2 * k + 1] = jp as i64;
        used.push(jm);
        used.push(jp);
    }
    if n == 2 {
        lo[2] = 0.0;
        hi[2] = 0.0;
    }
    NodeCell { cell: Cell::from_box(n, lo, hi, tags), shift }
}

/// Discrete Monge–Ampère measure of a nodal function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MAReport {
    /// Cell volume per node (boundary entries are 0 unless `boundary_clipped`).
    pub masses: Vec<f64>,
    pub boundary: Vec<bool>,
    pub interior_total: f64,
    /// Whether boundary cells were computed (needs a gradient box).
    pub boundary_clipped: bool,
    pub total: f64,
    pub gradient_box_volume: Option<f64>,
    /// `max_i |ω(u, x_i) − m_i|` over interior nodes, when targets were given.
    pub residual: Option<f64>,
}

impl MAReport {
    pub fn with_targets(mut self, targets: &[f64]) -> Self {
        let r = (0..self.masses.len())
            .filter(|&i| !self.boundary[i])
            .map(|i| (self.masses[i] - targets[i]).abs())
            .fold(0.0, f64::max);
        self.residual = Some(r);
        self
    }

    /// CSV with columns `node, x1.., mass, boundary`.
    pub fn write_csv<W: Write>(&self, u: &ConvexNodalFunction, w: W) -> Result<()> {
        let n = u.n();
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["node".to_string()];
        header.extend((1..=n).map(|k| format!("x{k}")));
        header.push("mass".into());
        header.push("boundary".into());
        wr.write_record(&header)?;
        for i in 0..self.masses.len() {
            let x = u.layout.position3(i);
            let mut rec = vec![i.to_string()];
            rec.extend(x[..n].iter().map(|v| format!("{v:e}")));
            rec.push(format!("{:e}", self.masses[i]));
            rec.push(self.boundary[i].to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, u: &ConvexNodalFunction, path: &Path) -> Result<()> {
        self.write_csv(u, std::fs::File::create(path)?)
    }
}

/// Exact cell volumes at every node.
pub fn ma_measure(u: &ConvexNodalFunction) -> Result<MAReport> {
    let sys = CellSystem::new(u);
    let m = u.len();
    let boundary: Vec<bool> = (0..m).map(|i| u.layout.is_boundary(i)).collect();
    let clip = u.gradient_box.is_some();
    let nodes: Vec<usize> = (0..m).filter(|&i| clip || !boundary[i]).collect();
    let cells = sys.exact_cells(&u.values, &nodes)?;
    let mut masses = vec![0.0; m];
    for (&i, c) in nodes.iter().zip(&cells) {
        masses[i] = c.volume();
    }
    let interior_total = (0..m).filter(|&i| !boundary[i]).map(|i| masses[i]).sum();
    let total = masses.iter().sum();
    Ok(MAReport {
        masses,
        boundary,
        interior_total,
        boundary_clipped: clip,
        total,
        gradient_box_volume: u.gradient_box.map(|g| g.volume(u.n())),
        residual: None,
    })
}

/// The exact cell of one node.
pub fn node_cell(u: &ConvexNodalFunction, i: usize) -> Result<NodeCell> {
    let sys = CellSystem::new(u);
    let bound = sys.bound(&u.values);
    sys.exact_cell(i, &u.values, bound.as_ref()).map(|(c, _)| c)
}

/// Lattice lines along direction `o`: maximal runs of nodes `x, x + o h, ...`.
pub fn lattice_lines(l: &Lattice, o: [i64; 3]) -> Vec<Vec<usize>> {
    let back = [-o[0], -o[1], -o[2]];
    let mut lines = Vec::new();
    for s in 0..l.len() {
        if l.neighbor(s, back).is_some() {
            continue;
        }
        let mut line = vec![s];
        let mut cur = s;
        while let Some(nx) = l.neighbor(cur, o) {
            line.push(nx);
            cur = nx;
        }
        if line.len() >= 3 {
            lines.push(line);
        }
    }
    lines
}

/// One representative of each `±` stencil pair.
fn half_stencil(l: &Lattice) -> Vec<[i64; 3]> {
    l.stencil().iter().copied().filter(|k| *k > [0, 0, 0]).collect()
}

/// Lower envelope along every stencil line, iterated to a fixed point (at most
/// 50 sweeps). Boundary values are kept. Returns the sweeps used.
pub fn convexify(u: &ConvexNodalFunction) -> Result<(ConvexNodalFunction, usize)> {
    let l = u
        .lattice()
        .ok_or_else(|| Error::InvalidInput("convexify needs a lattice layout".into()))?
        .clone();
    let dirs = half_stencil(&l);
    let lines: Vec<Vec<Vec<usize>>> = dirs.iter().map(|o| lattice_lines(&l, *o)).collect();
    let mut v = u.values.clone();
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let mut sweeps = 0;
    for _ in 0..50 {
        sweeps += 1;
        let mut change = 0.0f64;
        for set in &lines {
            for line in set {
                let env = lower_hull_values(line.iter().map(|&i| v[i]).collect::<Vec<_>>().as_slice());
                for (t, &i) in line.iter().enumerate() {
                    if l.kind(i) == NodeKind::Interior && env[t] < v[i] - 1e-14 * scale {
                        change = change.max(v[i] - env[t]);
                        v[i] = env[t];
                    }
                }
            }
        }
        if change <= 1e-15 * scale {
            break;
        }
    }
    Ok((u.with_values(v), sweeps))
}

/// Lower convex envelope of equally spaced samples.
fn lower_hull_values(y: &[f64]) -> Vec<f64> {
    let m = y.len();
    let mut hull: Vec<usize> = Vec::with_capacity(m);
    for t in 0..m {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b if it lies on or above the chord a..t
            let lhs = (y[b] - y[a]) * (t - a) as f64;
            let rhs = (y[t] - y[a]) * (b - a) as f64;
            if lhs >= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(t);
    }
    let mut out = vec![0.0; m];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        for t in a..=b {
            let s = (t - a) as f64 / (b - a) as f64;
            out[t] = y[a] + s * (y[b] - y[a]);
        }
        out[a] = y[a];
        out[b] = y[b];
    }
    if hull.len() == 1 {
        out[0] = y[0];
    }
    out
}

/// Largest `u_j − (u_{j−1} + u_{j+1})/2` over consecutive triples on stencil lines
/// whose middle node is interior (`<= 0` means convex along lines).
pub fn chord_violation(u: &ConvexNodalFunction) -> Result<f64> {
    let l = u.lattice().ok_or_else(|| Error::InvalidInput("chord test needs a lattice layout".into()))?;
    let mut worst = f64::NEG_INFINITY;
    for o in half_stencil(l) {
        for line in lattice_lines(l, o) {
            for w in line.windows(3) {
                if l.kind(w[1]) == NodeKind::Interior {
                    worst = worst.max(u.values[w[1]] - 0.5 * (u.values[w[0]] + u.values[w[2]]));
                }
            }
        }
    }
    Ok(worst)
}

/// Discrete section `{x : u(x) < u(x₀) + p·(x − x₀) + h}` over interior nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub subgradient: Vec<f64>,
    pub nodes: Vec<usize>,
    pub volume: f64,
}

/// Section at interior node `x0` with the cell centroid as subgradient.
pub fn section(u: &ConvexNodalFunction, x0: usize, height: f64) -> Result<Section> {
    let p = node_cell(u, x0)?.centroid();
    section_with(u, x0, &p[..u.n()], height)
}

/// Section with a prescribed subgradient `p`.
pub fn section_with(u: &ConvexNodalFunction, x0: usize, p: &[f64], height: f64) -> Result<Section> {
    if !(height > 0.0) {
        return Err(Error::InvalidInput("section height must be positive".into()));
    }
    let l = u.lattice().ok_or_else(|| Error::InvalidInput("section needs a lattice layout".into()))?;
    if l.kind(x0) != NodeKind::Interior {
        return Err(Error::InvalidInput("section base point must be interior".into()));
    }
    let n = l.n();
    let y0 = l.position3(x0);
    let nodes: Vec<usize> = (0..l.n_interior())
        .filter(|&i| {
            let x = l.position3(i);
            let lin: f64 = (0..n).map(|k| p[k] * (x[k] - y0[k])).sum();
            u.values[i] < u.values[x0] + lin + height
        })
        .collect();
    let volume = nodes.len() as f64 * l.cell_volume();
    Ok(Section { subgradient: p.to_vec(), nodes, volume })
}

/// Maximal run of lattice-collinear nodes with small second differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatSegment {
    pub direction: [i64; 3],
    pub nodes: Vec<usize>,
    pub length: f64,
    pub max_second_difference: f64,
}

fn flat_runs(u: &ConvexNodalFunction, l: &Lattice, o: [i64; 3], line: &[usize], tol: f64, min_nodes: usize) -> Vec<FlatSegment> {
    let step = l.spacing() * ((o[0] * o[0] + o[1] * o[1] + o[2] * o[2]) as f64).sqrt();
    let mut out = Vec::new();
    let mut t = 1;
    while t + 1 < line.len() {
        let sd = |t: usize| u.values[line[t - 1]] - 2.0 * u.values[line[t]] + u.values[line[t + 1]];
        let flat = |t: usize| l.kind(line[t]) == NodeKind::Interior && sd(t) <= tol;
        if !flat(t) {
            t += 1;
            continue;
        }
        let start = t;
        let mut worst = sd(t);
        while t + 1 < line.len() && flat(t) {
            worst = worst.max(sd(t));
            t += 1;
        }
        let nodes: Vec<usize> = line[start - 1..=t].to_vec();
        if nodes.len() >= min_nodes {
            out.push(FlatSegment { direction: o, length: step * (nodes.len() - 1) as f64, nodes, max_second_difference: worst });
        }
    }
    out
}

/// Flat segments along every stencil direction.
pub fn detect_flat_segments(u: &ConvexNodalFunction, tol: f64, min_nodes: usize) -> Result<Vec<FlatSegment>> {
    let l = u.lattice().ok_or_else(|| Error::InvalidInput("flat detection needs a lattice layout".into()))?;
    let mut out = Vec::new();
    for o in half_stencil(l) {
        for line in lattice_lines(l, o) {
            out.extend(flat_runs(u, l, o, &line, tol, min_nodes));
        }
    }
    Ok(out)
}

/// Flat segments on the lattice line through nodes `a` and `b` (any rational direction).
pub fn flat_segments_between(u: &ConvexNodalFunction, a: usize, b: usize, tol: f64, min_nodes: usize) -> Result<Vec<FlatSegment>> {
    let l = u.lattice().ok_or_else(|| Error::InvalidInput("flat detection needs a lattice layout".into()))?;
    let (ka, kb) = (l.multi_index(a), l.multi_index(b));
    let d = [kb[0] - ka[0], kb[1] - ka[1], kb[2] - ka[2]];
    let g = gcd3(d);
    if g == 0 {
        return Err(Error::InvalidInput("flat detection needs two distinct nodes".into()));
    }
    let o = [d[0] / g, d[1] / g, d[2] / g];
    let line: Vec<usize> = (0..=g)
        .map(|t| l.lookup([ka[0] + t * o[0], ka[1] + t * o[1], ka[2] + t * o[2]]))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidInput("segment leaves the lattice".into()))?;
    Ok(flat_runs(u, l, o, &line, tol, min_nodes))
}

fn gcd3(d: [i64; 3]) -> i64 {
    fn g(a: i64, b: i64) -> i64 {
        if b == 0 {
            a.abs()
        } else {
            g(b, a % b)
        }
    }
    g(g(d[0], d[1]), d[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_samples() {
        let y = [0.0, 5.0, 1.0, 3.0, 2.0];
        let e = lower_hull_values(&y);
        assert_eq!(e[0], 0.0);
        assert!((e[1] - 0.5).abs() < 1e-15);
        assert_eq!(e[2], 1.0);
        assert!((e[3] - 1.5).abs() < 1e-15);
        assert_eq!(e[4], 2.0);
    }
}
