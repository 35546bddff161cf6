//! Signed defect measures, ellipsoid domains and quadratic asymptotes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radial::RadialMass;
use crate::specialfn::{dn0, omega, Dimension};

fn check_unimodular(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidInput(format!("{what}: matrix must be square and non-empty")));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{what}: matrix has non-finite entries")));
    }
    let scale = a.amax().max(1e-300);
    if (a - a.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidInput(format!("{what}: matrix must be symmetric")));
    }
    let sym = (a + a.transpose()) * 0.5;
    if sym.clone().cholesky().is_none() {
        return Err(Error::InvalidInput(format!("{what}: matrix must be positive definite")));
    }
    let det = sym.determinant();
    let factor = det.powf(-1.0 / n as f64);
    if (factor - 1.0).abs() > 1e-8 {
        log::info!("{what}: rescaling matrix by {factor:.6e} to unit determinant");
    }
    if (factor - 1.0).abs() > 1e-15 {
        Ok(sym * factor)
    } else {
        Ok(sym)
    }
}

fn row_major(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    (0..n * n).map(|k| a[(k / n, k % n)]).collect()
}

fn from_row_major(v: &[f64], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if v.len() != n * n {
        return Err(Error::Schema(format!("{what}: expected {} matrix entries, got {}", n * n, v.len())));
    }
    Ok(DMatrix::from_row_slice(n, n, v))
}

/// `E_A(x₀, ρ) = { y : (y − x₀)ᵀA(y − x₀) < ρ² }` with `det A = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EllipsoidRaw", into = "EllipsoidRaw")]
pub struct EllipsoidDomain {
    a: DMatrix<f64>,
    center: Vec<f64>,
    radius: f64,
}

#[derive(Serialize, Deserialize)]
struct EllipsoidRaw {
    #[serde(rename = "A")]
    a: Vec<f64>,
    center: Vec<f64>,
    radius: f64,
}

impl TryFrom<EllipsoidRaw> for EllipsoidDomain {
    type Error = Error;
    fn try_from(r: EllipsoidRaw) -> Result<Self> {
        let n = r.center.len();
        Self::new(from_row_major(&r.a, n, "ellipsoid")?, r.center, r.radius)
    }
}

impl From<EllipsoidDomain> for EllipsoidRaw {
    fn from(e: EllipsoidDomain) -> Self {
        Self { a: row_major(&e.a), center: e.center, radius: e.radius }
    }
}

impl EllipsoidDomain {
    pub fn new(a: DMatrix<f64>, center: Vec<f64>, radius: f64) -> Result<Self> {
        if a.nrows() != center.len() {
            return Err(Error::InvalidInput("ellipsoid: matrix and center dimensions differ".into()));
        }
        if !(radius > 0.0) || !radius.is_finite() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("ellipsoid: radius must be positive and finite".into()));
        }
        Ok(Self { a: check_unimodular(&a, "ellipsoid")?, center, radius })
    }

    /// Euclidean ball.
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let n = center.len();
        Self::new(DMatrix::identity(n, n), center, radius)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `(y − x₀)ᵀA(y − x₀)`.
    pub fn quad_form(&self, y: &[f64]) -> f64 {
        let n = self.dim();
        let mut s = 0.0;
        for i in 0..n {
            let di = y[i] - self.center[i];
            for j in 0..n {
                s += di * self.a[(i, j)] * (y[j] - self.center[j]);
            }
        }
        s
    }

    /// Strict membership.
    pub fn contains(&self, y: &[f64]) -> bool {
        self.quad_form(y) < self.radius * self.radius
    }

    /// Lebesgue measure `ω_n ρ^n`.
    pub fn volume(&self) -> f64 {
        omega(self.dim()) * self.radius.powi(self.dim() as i32)
    }

    /// Half-widths of the bounding box, `ρ·sqrt((A⁻¹)_kk)`.
    pub fn half_widths(&self) -> Vec<f64> {
        let inv = self.a.clone().try_inverse().expect("positive definite");
        (0..self.dim()).map(|k| self.radius * inv[(k, k)].sqrt()).collect()
    }
}

/// `q(x) = ½xᵀAx + b·x + c` with `det A = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuadraticRaw", into = "QuadraticRaw")]
pub struct QuadraticAsymptote {
    a: DMatrix<f64>,
    b: Vec<f64>,
    c: f64,
}

#[derive(Serialize, Deserialize)]
struct QuadraticRaw {
    #[serde(rename = "A")]
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
}

impl TryFrom<QuadraticRaw> for QuadraticAsymptote {
    type Error = Error;
    fn try_from(r: QuadraticRaw) -> Result<Self> {
        let n = r.b.len();
        Self::new(from_row_major(&r.a, n, "quadratic")?, r.b, r.c)
    }
}

impl From<QuadraticAsymptote> for QuadraticRaw {
    fn from(q: QuadraticAsymptote) -> Self {
        Self { a: row_major(&q.a), b: q.b, c: q.c }
    }
}

impl QuadraticAsymptote {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::InvalidInput("quadratic: matrix and b dimensions differ".into()));
        }
        Ok(Self { a: check_unimodular(&a, "quadratic")?, b, c })
    }

    /// `½|x|²`.
    pub fn standard(n: usize) -> Self {
        Self { a: DMatrix::identity(n, n), b: vec![0.0; n], c: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn linear(&self) -> &[f64] {
        &self.b
    }

    pub fn constant(&self) -> f64 {
        self.c
    }

    pub fn with_constant(&self, c: f64) -> Self {
        Self { c, ..self.clone() }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut s = self.c;
        for i in 0..n {
            s += self.b[i] * x[i];
            for j in 0..n {
                s += 0.5 * x[i] * self.a[(i, j)] * x[j];
            }
        }
        s
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.b[i] + (0..n).map(|j| self.a[(i, j)] * x[j]).sum::<f64>()).collect()
    }

    /// Minimizer `−A⁻¹b`.
    pub fn vertex(&self) -> Vec<f64> {
        let inv = self.a.clone().try_inverse().expect("positive definite");
        let v = -(inv * DVector::from_column_slice(&self.b));
        v.iter().copied().collect()
    }
}

/// Dirac mass `mass` at `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub y: Vec<f64>,
    pub mass: f64,
}

impl Atom {
    /// Atom of mass `ω_n a^n`.
    pub fn with_radius(y: Vec<f64>, a: f64) -> Self {
        let n = y.len();
        Self { y, mass: omega(n) * a.powi(n as i32) }
    }

    /// `a` with `ω_n a^n = mass`.
    pub fn radius(&self) -> f64 {
        (self.mass / omega(self.y.len())).powf(1.0 / self.y.len() as f64)
    }
}

/// Nodal samples on a regular grid (row-major, last index fastest); looked up
/// at the nearest node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl GridField {
    fn validate(&self, n: usize, what: &str) -> Result<()> {
        if self.origin.len() != n || self.shape.len() != n {
            return Err(Error::Schema(format!("{what}: dimension mismatch")));
        }
        if !(self.spacing > 0.0) || self.shape.iter().product::<usize>() != self.values.len() {
            return Err(Error::Schema(format!("{what}: spacing/shape/values inconsistent")));
        }
        if self.values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("{what}: samples must be finite and >= 0")));
        }
        Ok(())
    }

    pub fn sample(&self, x: &[f64]) -> Option<f64> {
        let mut idx = 0usize;
        for k in 0..self.shape.len() {
            let t = ((x[k] - self.origin[k]) / self.spacing).round();
            if t < 0.0 || t >= self.shape[k] as f64 {
                return None;
            }
            idx = idx * self.shape[k] + t as usize;
        }
        Some(self.values[idx])
    }

    fn bbox(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = self.origin.iter().map(|o| o - 0.5 * self.spacing).collect();
        let hi = self
            .origin
            .iter()
            .zip(&self.shape)
            .map(|(o, &s)| o + (s as f64 - 0.5) * self.spacing)
            .collect();
        (lo, hi)
    }
}

/// Constant density change `delta` on an ellipsoid (characteristic-function densities).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityPatch {
    pub domain: EllipsoidDomain,
    pub delta: f64,
}

/// Where a total variation is evaluated.
#[derive(Clone, Copy, Debug)]
pub enum Region<'a> {
    All,
    Inside(&'a EllipsoidDomain),
    Outside(&'a EllipsoidDomain),
}

impl Region<'_> {
    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            Region::All => true,
            Region::Inside(e) => e.contains(y),
            Region::Outside(e) => !e.contains(y),
        }
    }
}

/// Node lattice `anchor + h·ℤ^n` used to integrate densities by the cell rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampling {
    pub spacing: f64,
    pub anchor: Vec<f64>,
}

/// `1 + μ`: Lebesgue measure plus atoms plus a bounded density perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureData {
    pub n: usize,
    #[serde(default)]
    pub atoms: Vec<Atom>,
    /// Density of the absolutely continuous part of `1 + μ₊` (defaults to 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_grid: Option<GridField>,
    /// Density of `μ₋` (defaults to 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_density_grid: Option<GridField>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub patches: Vec<DensityPatch>,
    /// The density perturbation is switched off outside any of these.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clips: Vec<EllipsoidDomain>,
    /// Mass of atoms dropped by [`MeasureData::truncate_atoms`].
    #[serde(default)]
    pub truncated_tail_mass: f64,
}

impl MeasureData {
    /// `μ = 0`.
    pub fn lebesgue(n: usize) -> Self {
        Self {
            n,
            atoms: Vec::new(),
            density_grid: None,
            negative_density_grid: None,
            patches: Vec::new(),
            clips: Vec::new(),
            truncated_tail_mass: 0.0,
        }
    }

    pub fn with_atoms(n: usize, atoms: Vec<Atom>) -> Self {
        Self { atoms, ..Self::lebesgue(n) }
    }

    pub fn validate(&self) -> Result<()> {
        Dimension::new(self.n)?;
        for a in &self.atoms {
            if a.y.len() != self.n {
                return Err(Error::Schema("atom location has wrong dimension".into()));
            }
            if !(a.mass > 0.0) || !a.mass.is_finite() || a.y.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("atoms need finite location and mass > 0".into()));
            }
        }
        if let Some(g) = &self.density_grid {
            g.validate(self.n, "density_grid")?;
        }
        if let Some(g) = &self.negative_density_grid {
            g.validate(self.n, "negative_density_grid")?;
        }
        for p in &self.patches {
            if p.domain.dim() != self.n || !p.delta.is_finite() || p.delta < -1.0 {
                return Err(Error::InvalidInput("patch: wrong dimension or delta < -1".into()));
            }
        }
        if self.clips.iter().any(|c| c.dim() != self.n) {
            return Err(Error::Schema("clip has wrong dimension".into()));
        }
        Ok(())
    }

    pub fn has_density_perturbation(&self) -> bool {
        self.density_grid.is_some() || self.negative_density_grid.is_some() || !self.patches.is_empty()
    }

    /// Density of the absolutely continuous part of `1 + μ` at `x`.
    pub fn density_at(&self, x: &[f64]) -> f64 {
        if !self.clips.iter().all(|c| c.contains(x)) {
            return 1.0;
        }
        let mut f = self.density_grid.as_ref().and_then(|g| g.sample(x)).unwrap_or(1.0);
        f -= self.negative_density_grid.as_ref().and_then(|g| g.sample(x)).unwrap_or(0.0);
        for p in &self.patches {
            if p.domain.contains(x) {
                f += p.delta;
            }
        }
        f
    }

    /// Bounding box of where the density may differ from 1.
    fn perturbation_bbox(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut lo = vec![f64::INFINITY; self.n];
        let mut hi = vec![f64::NEG_INFINITY; self.n];
        let mut any = false;
        let mut grow = |l: &[f64], h: &[f64]| {
            for k in 0..l.len() {
                lo[k] = lo[k].min(l[k]);
                hi[k] = hi[k].max(h[k]);
            }
        };
        for g in [&self.density_grid, &self.negative_density_grid].into_iter().flatten() {
            let (l, h) = g.bbox();
            grow(&l, &h);
            any = true;
        }
        for p in &self.patches {
            let w = p.domain.half_widths();
            let c = p.domain.center();
            let l: Vec<f64> = c.iter().zip(&w).map(|(c, w)| c - w).collect();
            let h: Vec<f64> = c.iter().zip(&w).map(|(c, w)| c + w).collect();
            grow(&l, &h);
            any = true;
        }
        any.then_some((lo, hi))
    }

    /// Calls `f(x)` for every sampling node in the box `[lo, hi]`.
    fn for_nodes_in(s: &Sampling, lo: &[f64], hi: &[f64], mut f: impl FnMut(&[f64])) {
        let n = lo.len();
        let kl: Vec<i64> = (0..n).map(|k| ((lo[k] - s.anchor[k]) / s.spacing).floor() as i64).collect();
        let kh: Vec<i64> = (0..n).map(|k| ((hi[k] - s.anchor[k]) / s.spacing).ceil() as i64).collect();
        let mut idx = kl.clone();
        let mut x = vec![0.0; n];
        loop {
            for k in 0..n {
                x[k] = s.anchor[k] + idx[k] as f64 * s.spacing;
            }
            f(&x);
            let mut k = n;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] <= kh[k] {
                    break;
                }
                idx[k] = kl[k];
            }
        }
    }

    /// `|μ|(region)`: atoms inside plus the cell-rule integral of `|f − 1|`.
    pub fn total_variation(&self, region: Region<'_>, sampling: &Sampling) -> f64 {
        let atoms: f64 = self.atoms.iter().filter(|a| region.contains(&a.y)).map(|a| a.mass).sum();
        let Some((mut lo, mut hi)) = self.perturbation_bbox() else {
            return atoms;
        };
        if let Region::Inside(e) = region {
            let w = e.half_widths();
            for k in 0..self.n {
                lo[k] = lo[k].max(e.center()[k] - w[k]);
                hi[k] = hi[k].min(e.center()[k] + w[k]);
            }
            if (0..self.n).any(|k| lo[k] > hi[k]) {
                return atoms;
            }
        }
        let cell = sampling.spacing.powi(self.n as i32);
        let mut ac = 0.0;
        Self::for_nodes_in(sampling, &lo, &hi, |x| {
            if region.contains(x) {
                ac += (self.density_at(x) - 1.0).abs();
            }
        });
        atoms + ac * cell
    }

    /// Smallest density value at sampling nodes inside the perturbation box.
    pub fn min_density(&self, sampling: &Sampling) -> f64 {
        let Some((lo, hi)) = self.perturbation_bbox() else {
            return 1.0;
        };
        let mut m = 1.0f64;
        Self::for_nodes_in(sampling, &lo, &hi, |x| m = m.min(self.density_at(x)));
        m
    }

    /// Keeps atoms inside `region` and switches the density perturbation off outside it.
    pub fn restrict(&self, region: &EllipsoidDomain) -> Self {
        let mut out = self.clone();
        out.atoms.retain(|a| region.contains(&a.y));
        if out.has_density_perturbation() {
            out.clips.push(region.clone());
        }
        out
    }

    /// Keeps the `k` heaviest atoms and records the dropped mass.
    pub fn truncate_atoms(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.atoms.sort_by(|a, b| b.mass.total_cmp(&a.mass));
        let dropped: f64 = out.atoms.iter().skip(k).map(|a| a.mass).sum();
        out.atoms.truncate(k);
        out.truncated_tail_mass += dropped;
        out
    }

    /// Radial description about a common center, when one exists.
    ///
    /// Requires all atoms at one point and every patch a Euclidean ball about it
    /// (no grids, no clips).
    pub fn radial_form(&self) -> Option<(Vec<f64>, RadialMass)> {
        if self.density_grid.is_some() || self.negative_density_grid.is_some() || !self.clips.is_empty() {
            return None;
        }
        let center = match (self.atoms.first(), self.patches.first()) {
            (Some(a), _) => a.y.clone(),
            (None, Some(p)) => p.domain.center().to_vec(),
            (None, None) => vec![0.0; self.n],
        };
        let same = |y: &[f64]| y.iter().zip(&center).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        if !self.atoms.iter().all(|a| same(&a.y)) {
            return None;
        }
        let id = DMatrix::<f64>::identity(self.n, self.n);
        if !self.patches.iter().all(|p| same(p.domain.center()) && (p.domain.matrix() - &id).amax() < 1e-12) {
            return None;
        }
        let n = Dimension::new(self.n).ok()?;
        let mut breaks: Vec<f64> = vec![0.0];
        breaks.extend(self.patches.iter().map(|p| p.domain.radius()));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let densities: Vec<f64> = breaks
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                // density on the shell [b, next)
                let probe = match breaks.get(j + 1) {
                    Some(&e) => 0.5 * (b + e),
                    None => b + 1.0,
                };
                1.0 + self.patches.iter().filter(|p| probe < p.domain.radius()).map(|p| p.delta).sum::<f64>()
            })
            .collect();
        if densities.iter().any(|d| *d < 0.0) {
            return None;
        }
        let atom = self.atoms.iter().map(|a| a.mass).sum();
        Some((center, RadialMass::Piecewise { n, atom, breaks, densities }))
    }
}

/// `a = (|μ|/ω_n)^{1/n}`.
pub fn variation_radius(n: usize, total_variation: f64) -> f64 {
    (total_variation / omega(n)).powf(1.0 / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub satisfied: bool,
    /// `lhs / rhs`; the criterion holds iff `margin < 1`.
    pub margin: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Mass-separation test `Σ a_i^n < (8 d_{n,0})^{n/2} inf_{i≠j} |(y_i − y_j)ᵀA(y_i − y_j)|^{n/2}`.
pub fn strict_convexity_criterion(atoms: &[Atom], a: &DMatrix<f64>) -> Result<CriterionOutcome> {
    if atoms.len() < 2 {
        return Err(Error::InvalidInput("criterion needs at least two atoms".into()));
    }
    let n = atoms[0].y.len();
    if a.nrows() != n || atoms.iter().any(|x| x.y.len() != n) {
        return Err(Error::InvalidInput("criterion: dimension mismatch".into()));
    }
    let d = dn0(n)?;
    let lhs: f64 = atoms.iter().map(|x| x.mass / omega(n)).sum();
    let mut inf = f64::INFINITY;
    for i in 0..atoms.len() {
        for j in i + 1..atoms.len() {
            let diff: Vec<f64> = (0..n).map(|k| atoms[i].y[k] - atoms[j].y[k]).collect();
            let mut q = 0.0;
            for r in 0..n {
                for c in 0..n {
                    q += diff[r] * a[(r, c)] * diff[c];
                }
            }
            inf = inf.min(q.abs());
        }
    }
    if inf == 0.0 {
        return Err(Error::InvalidInput("criterion: coincident atom locations".into()));
    }
    let rhs = (8.0 * d).powf(n as f64 / 2.0) * inf.powf(n as f64 / 2.0);
    Ok(CriterionOutcome { satisfied: lhs < rhs, margin: lhs / rhs, lhs, rhs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinant_is_normalized() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let e = EllipsoidDomain::new(a, vec![0.0, 0.0], 1.0).unwrap();
        assert!((e.matrix().determinant() - 1.0).abs() < 1e-12);
        assert!(EllipsoidDomain::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), vec![0.0; 2], 1.0).is_err());
        assert!(EllipsoidDomain::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), vec![0.0; 2], 1.0).is_err());
    }

    #[test]
    fn boundary_point_is_outside() {
        let e = EllipsoidDomain::ball(vec![0.0; 3], 2.0).unwrap();
        assert!(!e.contains(&[2.0, 0.0, 0.0]));
        assert!(e.contains(&[1.999, 0.0, 0.0]));
    }

    #[test]
    fn json_shapes() {
        let q = QuadraticAsymptote::standard(2);
        let s = serde_json::to_string(&q).unwrap();
        assert_eq!(s, r#"{"A":[1.0,0.0,0.0,1.0],"b":[0.0,0.0],"c":0.0}"#);
        let e = EllipsoidDomain::ball(vec![1.0, 2.0], 3.0).unwrap();
        let s = serde_json::to_string(&e).unwrap();
        let back: EllipsoidDomain = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }
}
