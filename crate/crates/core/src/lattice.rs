//! Rasterized ellipsoid lattices and convex nodal functions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{EllipsoidDomain, QuadraticAsymptote};

/// Default cap on lattice size.
pub const DEFAULT_MAX_NODES: usize = 400_000;

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Primitive offsets with `|k|∞ <= r`, sorted by length then lexicographically.
pub fn primitive_offsets(n: usize, r: usize) -> Vec<[i64; 3]> {
    let r = r as i64;
    let zr = if n == 3 { r } else { 0 };
    let mut out = Vec::new();
    for a in -r..=r {
        for b in -r..=r {
            for c in -zr..=zr {
                if (a, b, c) == (0, 0, 0) {
                    continue;
                }
                if gcd(gcd(a, b), c) == 1 {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1] + k[2] * k[2], *k));
    out
}

/// Default stencil radius: 2 in the plane, 1 in space.
pub fn default_stencil_radius(n: usize) -> usize {
    if n == 2 {
        2
    } else {
        1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Boundary,
}

/// Lattice `x₀ + h·ℤ^n` restricted to an ellipsoid, plus a ghost layer of
/// boundary nodes covering every stencil neighbour of an interior node.
/// Interior nodes come first, in lexicographic order.
#[derive(Clone, Debug)]
pub struct Lattice {
    n: usize,
    spacing: f64,
    domain: EllipsoidDomain,
    stencil_radius: usize,
    stencil: Vec<[i64; 3]>,
    lo: [i64; 3],
    dims: [usize; 3],
    slot: Vec<u32>,
    index: Vec<[i64; 3]>,
    positions: Vec<[f64; 3]>,
    n_interior: usize,
}

const NONE: u32 = u32::MAX;

impl Lattice {
    pub fn new(domain: EllipsoidDomain, spacing: f64, stencil_radius: usize, max_nodes: usize) -> Result<Self> {
        let n = domain.dim();
        if !(2..=3).contains(&n) {
            return Err(Error::InvalidInput(format!("lattice solves support n in {{2,3}}, got {n}")));
        }
        if !(spacing > 0.0) || !spacing.is_finite() || stencil_radius == 0 {
            return Err(Error::InvalidInput("lattice spacing must be positive, stencil radius >= 1".into()));
        }
        let w = domain.half_widths();
        let r = stencil_radius as i64;
        let mut lo = [0i64; 3];
        let mut dims = [1usize; 3];
        let mut estimate = 1.0;
        for k in 0..n {
            let m = (w[k] / spacing).ceil() as i64 + r;
            lo[k] = -m;
            dims[k] = (2 * m + 1) as usize;
            estimate *= dims[k] as f64;
        }
        let interior_estimate = estimate * domain.volume() / w.iter().map(|x| 2.0 * x).product::<f64>();
        if interior_estimate > max_nodes as f64 * 1.05 {
            return Err(Error::Budget(format!(
                "lattice would hold about {interior_estimate:.0} nodes (cap {max_nodes})"
            )));
        }
        let total = dims[0] * dims[1] * dims[2];
        let mut slot = vec![NONE; total];
        let center = domain.center().to_vec();
        let pos = |k: &[i64; 3]| -> [f64; 3] {
            let mut x = [0.0; 3];
            for d in 0..n {
                x[d] = center[d] + spacing * k[d] as f64;
            }
            x
        };
        let lin = |k: &[i64; 3]| -> usize {
            ((k[0] - lo[0]) as usize * dims[1] + (k[1] - lo[1]) as usize) * dims[2] + (k[2] - lo[2]) as usize
        };
        let mut index = Vec::new();
        let mut positions = Vec::new();
        for a in 0..dims[0] as i64 {
            for b in 0..dims[1] as i64 {
                for c in 0..dims[2] as i64 {
                    let k = [a + lo[0], b + lo[1], c + lo[2]];
                    let x = pos(&k);
                    if domain.contains(&x[..n]) {
                        slot[lin(&k)] = index.len() as u32;
                        index.push(k);
                        positions.push(x);
                    }
                }
            }
        }
        let n_interior = index.len();
        if n_interior == 0 {
            return Err(Error::InvalidInput("lattice has no interior nodes; refine the spacing".into()));
        }
        if n_interior > max_nodes {
            return Err(Error::Budget(format!("lattice holds {n_interior} interior nodes (cap {max_nodes})")));
        }
        let stencil = primitive_offsets(n, stencil_radius);
        let mut ghosts = Vec::new();
        for i in 0..n_interior {
            let k = index[i];
            for o in &stencil {
                let g = [k[0] + o[0], k[1] + o[1], k[2] + o[2]];
                let s = lin(&g);
                if slot[s] == NONE {
                    slot[s] = NONE - 1;
                    ghosts.push(g);
                }
            }
        }
        ghosts.sort();
        for g in ghosts {
            slot[lin(&g)] = index.len() as u32;
            positions.push(pos(&g));
            index.push(g);
        }
        Ok(Self { n, spacing, domain, stencil_radius, stencil, lo, dims, slot, index, positions, n_interior })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn domain(&self) -> &EllipsoidDomain {
        &self.domain
    }

    pub fn stencil_radius(&self) -> usize {
        self.stencil_radius
    }

    pub fn stencil(&self) -> &[[i64; 3]] {
        &self.stencil
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn kind(&self, i: usize) -> NodeKind {
        if i < self.n_interior {
            NodeKind::Interior
        } else {
            NodeKind::Boundary
        }
    }

    /// Volume of one lattice cell, `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.n as i32)
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i][..self.n]
    }

    pub fn position3(&self, i: usize) -> [f64; 3] {
        self.positions[i]
    }

    pub fn multi_index(&self, i: usize) -> [i64; 3] {
        self.index[i]
    }

    /// Node at integer coordinates `k`, if present.
    pub fn lookup(&self, k: [i64; 3]) -> Option<usize> {
        for d in 0..3 {
            if k[d] < self.lo[d] || k[d] >= self.lo[d] + self.dims[d] as i64 {
                return None;
            }
        }
        let s = ((k[0] - self.lo[0]) as usize * self.dims[1] + (k[1] - self.lo[1]) as usize) * self.dims[2]
            + (k[2] - self.lo[2]) as usize;
        match self.slot[s] {
            NONE => None,
            v => Some(v as usize),
        }
    }

    pub fn neighbor(&self, i: usize, o: [i64; 3]) -> Option<usize> {
        let k = self.index[i];
        self.lookup([k[0] + o[0], k[1] + o[1], k[2] + o[2]])
    }

    /// Node nearest to `y` (any kind) and its distance.
    pub fn nearest(&self, y: &[f64]) -> Option<(usize, f64)> {
        let c = self.domain.center();
        let mut k = [0i64; 3];
        for d in 0..self.n {
            k[d] = ((y[d] - c[d]) / self.spacing).round() as i64;
        }
        let i = self.lookup(k)?;
        let x = self.position(i);
        let dist = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        Some((i, dist))
    }

    pub fn spec(&self) -> LatticeSpec {
        LatticeSpec { domain: self.domain.clone(), spacing: self.spacing, stencil_radius: self.stencil_radius }
    }
}

/// Serializable description from which a [`Lattice`] is rebuilt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub domain: EllipsoidDomain,
    pub spacing: f64,
    pub stencil_radius: usize,
}

/// Axis-aligned box of admissible subgradients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl GradientBox {
    /// `∇q(Ω)`'s bounding box with half-widths inflated by `1 + inflate`.
    pub fn from_quadratic(q: &QuadraticAsymptote, domain: &EllipsoidDomain, inflate: f64) -> Self {
        let n = q.dim();
        let a = q.matrix();
        let dinv = domain.matrix().clone().try_inverse().expect("positive definite");
        let m = a * dinv * a;
        let g0 = q.gradient(domain.center());
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for k in 0..n {
            let w = domain.radius() * m[(k, k)].sqrt() * (1.0 + inflate);
            lo[k] = g0[k] - w;
            hi[k] = g0[k] + w;
        }
        Self { lo, hi }
    }

    pub fn volume(&self, n: usize) -> f64 {
        (0..n).map(|k| self.hi[k] - self.lo[k]).product()
    }
}

#[derive(Clone, Debug)]
pub enum Layout {
    Lattice(Arc<Lattice>),
    /// Arbitrary node set; cells are computed against every other node.
    Explicit { n: usize, points: Vec<[f64; 3]>, boundary: Vec<bool> },
}

impl Layout {
    pub fn n(&self) -> usize {
        match self {
            Layout::Lattice(l) => l.n(),
            Layout::Explicit { n, .. } => *n,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Layout::Lattice(l) => l.len(),
            Layout::Explicit { points, .. } => points.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        match self {
            Layout::Lattice(l) => l.kind(i) == NodeKind::Boundary,
            Layout::Explicit { boundary, .. } => boundary[i],
        }
    }

    pub fn position3(&self, i: usize) -> [f64; 3] {
        match self {
            Layout::Lattice(l) => l.position3(i),
            Layout::Explicit { points, .. } => points[i],
        }
    }

    pub fn lattice(&self) -> Option<&Arc<Lattice>> {
        match self {
            Layout::Lattice(l) => Some(l),
            Layout::Explicit { .. } => None,
        }
    }
}

/// Piecewise-linear convex function given by nodal values.
#[derive(Clone, Debug)]
pub struct ConvexNodalFunction {
    pub layout: Layout,
    pub values: Vec<f64>,
    /// Clips otherwise unbounded boundary cells.
    pub gradient_box: Option<GradientBox>,
    /// Quadratic the values stay close to; used to bound the cell-neighbour search.
    pub reference: Option<QuadraticAsymptote>,
}

impl ConvexNodalFunction {
    /// Samples `q` on a lattice; the gradient box is `∇q(Ω)` inflated by 10%.
    pub fn from_quadratic(lattice: Arc<Lattice>, q: &QuadraticAsymptote) -> Self {
        let values = (0..lattice.len()).map(|i| q.eval(lattice.position(i))).collect();
        let gradient_box = Some(GradientBox::from_quadratic(q, lattice.domain(), 0.1));
        Self { layout: Layout::Lattice(lattice), values, gradient_box, reference: Some(q.clone()) }
    }

    pub fn on_lattice(lattice: Arc<Lattice>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..lattice.len()).map(|i| f(lattice.position(i))).collect();
        Self { layout: Layout::Lattice(lattice), values, gradient_box: None, reference: None }
    }

    pub fn explicit(n: usize, points: Vec<Vec<f64>>, values: Vec<f64>, boundary: Vec<bool>) -> Result<Self> {
        if points.len() != values.len() || points.len() != boundary.len() {
            return Err(Error::InvalidInput("explicit nodes: length mismatch".into()));
        }
        if !(2..=3).contains(&n) || points.iter().any(|p| p.len() != n) {
            return Err(Error::InvalidInput("explicit nodes: dimension must be 2 or 3".into()));
        }
        let pts = points
            .iter()
            .map(|p| {
                let mut x = [0.0; 3];
                x[..n].copy_from_slice(p);
                x
            })
            .collect();
        Ok(Self { layout: Layout::Explicit { n, points: pts, boundary }, values, gradient_box: None, reference: None })
    }

    pub fn n(&self) -> usize {
        self.layout.n()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn lattice(&self) -> Option<&Arc<Lattice>> {
        self.layout.lattice()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self { values, ..self.clone() }
    }

    /// Value at a node nearest to `y` (lattice layouts).
    pub fn value_near(&self, y: &[f64]) -> Option<f64> {
        let l = self.lattice()?;
        l.nearest(y).map(|(i, _)| self.values[i])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&NodalRaw::from(self))?)
    }

    pub fn from_json(s: &str, max_nodes: usize) -> Result<Self> {
        let raw: NodalRaw = serde_json::from_str(s)?;
        raw.build(max_nodes)
    }
}

#[derive(Serialize, Deserialize)]
struct NodalRaw {
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lattice: Option<LatticeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nodes: Option<Vec<Vec<f64>>>,
    values: Vec<f64>,
    boundary: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gradient_box: Option<GradientBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<QuadraticAsymptote>,
}

impl From<&ConvexNodalFunction> for NodalRaw {
    fn from(u: &ConvexNodalFunction) -> Self {
        let n = u.n();
        let boundary = (0..u.len()).map(|i| u.layout.is_boundary(i)).collect();
        let (lattice, nodes) = match &u.layout {
            Layout::Lattice(l) => (Some(l.spec()), None),
            Layout::Explicit { points, .. } => (None, Some(points.iter().map(|p| p[..n].to_vec()).collect())),
        };
        Self {
            n,
            lattice,
            nodes,
            values: u.values.clone(),
            boundary,
            gradient_box: u.gradient_box,
            reference: u.reference.clone(),
        }
    }
}

impl NodalRaw {
    fn build(self, max_nodes: usize) -> Result<ConvexNodalFunction> {
        let mut u = match (self.lattice, self.nodes) {
            (Some(spec), None) => {
                if spec.domain.dim() != self.n {
                    return Err(Error::Schema("lattice domain dimension differs from n".into()));
                }
                let l = Lattice::new(spec.domain, spec.spacing, spec.stencil_radius, max_nodes)?;
                if l.len() != self.values.len() {
                    return Err(Error::Schema(format!("expected {} values, got {}", l.len(), self.values.len())));
                }
                let ok = (0..l.len()).all(|i| (l.kind(i) == NodeKind::Boundary) == self.boundary[i]);
                if !ok || self.boundary.len() != l.len() {
                    return Err(Error::Schema("boundary flags do not match the lattice".into()));
                }
                ConvexNodalFunction::on_lattice(Arc::new(l), |_| 0.0).with_values(self.values)
            }
            (None, Some(nodes)) => ConvexNodalFunction::explicit(self.n, nodes, self.values, self.boundary)?,
            _ => return Err(Error::Schema("exactly one of `lattice` or `nodes` is required".into())),
        };
        if u.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("values must be finite".into()));
        }
        u.gradient_box = self.gradient_box;
        u.reference = self.reference;
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stencils() {
        assert_eq!(primitive_offsets(2, 2).len(), 16);
        assert_eq!(primitive_offsets(3, 1).len(), 26);
        assert_eq!(primitive_offsets(2, 1).len(), 8);
    }

    #[test]
    fn ghost_layer_covers_stencil() {
        let d = EllipsoidDomain::ball(vec![0.0; 3], 1.0).unwrap();
        let l = Lattice::new(d, 0.25, 1, 10_000).unwrap();
        for i in 0..l.n_interior() {
            for o in l.stencil() {
                assert!(l.neighbor(i, *o).is_some());
            }
        }
        assert_eq!(l.lookup([0, 0, 0]), Some(l.nearest(&[0.01, 0.0, 0.0]).unwrap().0));
        // (0,0,±4) lies on the sphere, so it is a ghost
        let g = l.lookup([0, 0, 4]).unwrap();
        assert_eq!(l.kind(g), NodeKind::Boundary);
    }

    #[test]
    fn budget_is_enforced() {
        let d = EllipsoidDomain::ball(vec![0.0; 3], 10.0).unwrap();
        assert!(matches!(Lattice::new(d, 0.1, 1, 1000), Err(Error::Budget(_))));
    }

    #[test]
    fn json_round_trip() {
        let d = EllipsoidDomain::ball(vec![0.0; 2], 1.0).unwrap();
        let l = Arc::new(Lattice::new(d, 0.25, 2, 10_000).unwrap());
        let u = ConvexNodalFunction::from_quadratic(l, &QuadraticAsymptote::standard(2));
        let back = ConvexNodalFunction::from_json(&u.to_json().unwrap(), 10_000).unwrap();
        assert_eq!(back.values, u.values);
        assert_eq!(back.gradient_box, u.gradient_box);
    }
}
