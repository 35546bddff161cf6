//! Entire solutions of `det D²u = 1 + μ` approximated on expanding ellipsoids,
//! deviations from the quadratic asymptote, and the extremal experiments.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dirichlet::{DirichletProblem, Solution, SolverOptions};
use crate::discrete::{flat_segments_between, section_with, FlatSegment};
use crate::error::{Error, Result};
use crate::lattice::{ConvexNodalFunction, Lattice};
use crate::measure::{
    strict_convexity_criterion, variation_radius, Atom, CriterionOutcome, DensityPatch, EllipsoidDomain, MeasureData,
    QuadraticAsymptote, Region, Sampling,
};
use crate::obstacle::ObstacleProblem;
use crate::radial::{asymptote_gap, eval_w, solve_radial, RadialMass, RadialSolution};
use crate::specialfn::{dn0, omega, Dimension};

/// Radii `R_1 < … < R_m` with a lattice spacing per level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionSchedule {
    pub radii: Vec<f64>,
    pub spacings: Vec<f64>,
    /// `μ` is restricted to `E_{fR}` on the level of radius `R`.
    #[serde(default = "default_inner_fraction")]
    pub inner_fraction: f64,
}

fn default_inner_fraction() -> f64 {
    1.0 / 32.0
}

impl ExpansionSchedule {
    /// One spacing is shared by all levels.
    pub fn new(radii: Vec<f64>, spacings: Vec<f64>) -> Result<Self> {
        let s = Self { radii, spacings, inner_fraction: default_inner_fraction() };
        s.validate()?;
        Ok(s)
    }

    pub fn uniform(radii: Vec<f64>, spacing: f64) -> Result<Self> {
        Self::new(radii, vec![spacing])
    }

    pub fn with_inner_fraction(mut self, f: f64) -> Result<Self> {
        self.inner_fraction = f;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidInput("schedule radii must be positive".into()));
        }
        if self.radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("schedule radii must increase".into()));
        }
        if !(self.spacings.len() == 1 || self.spacings.len() == self.radii.len())
            || self.spacings.iter().any(|h| !(*h > 0.0))
        {
            return Err(Error::InvalidInput("need one spacing or one per level".into()));
        }
        if !(self.inner_fraction > 0.0 && self.inner_fraction <= 1.0) {
            return Err(Error::InvalidInput("inner fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn spacing(&self, level: usize) -> f64 {
        if self.spacings.len() == 1 {
            self.spacings[0]
        } else {
            self.spacings[level]
        }
    }

    pub fn last_radius(&self) -> f64 {
        *self.radii.last().expect("validated")
    }
}

/// `y = A^{1/2}(x − x₀)` turns `q` into `½|y|² + q(x₀)`.
#[derive(Clone, Debug)]
pub struct AffineNormalization {
    root: DMatrix<f64>,
    root_inv: DMatrix<f64>,
    vertex: Vec<f64>,
    offset: f64,
}

impl AffineNormalization {
    pub fn from_quadratic(q: &QuadraticAsymptote) -> Self {
        let eig = q.matrix().clone().symmetric_eigen();
        let s = eig.eigenvalues.map(f64::sqrt);
        let v = &eig.eigenvectors;
        let root = v * DMatrix::from_diagonal(&s) * v.transpose();
        let root_inv = v * DMatrix::from_diagonal(&s.map(|x| 1.0 / x)) * v.transpose();
        let vertex = q.vertex();
        let offset = q.eval(&vertex);
        Self { root, root_inv, vertex, offset }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = self.vertex.len();
        (0..n).map(|i| (0..n).map(|j| self.root[(i, j)] * (x[j] - self.vertex[j])).sum()).collect()
    }

    pub fn inverse(&self, y: &[f64]) -> Vec<f64> {
        let n = self.vertex.len();
        (0..n).map(|i| self.vertex[i] + (0..n).map(|j| self.root_inv[(i, j)] * y[j]).sum::<f64>()).collect()
    }

    /// `√((x − x₀)ᵀA(x − x₀))`.
    pub fn radius(&self, x: &[f64]) -> f64 {
        self.forward(x).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }
}

/// `sup(u − q)`, `inf(u − q)` and the ratio of `(sup − inf)/2` to `2^{-2/n} d_{n,0} a²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub sup_plus: f64,
    pub sup_minus: f64,
    pub deviation: f64,
    pub bound: f64,
    pub a: f64,
    pub ratio: f64,
}

pub fn deviation_bound(n: usize, a: f64) -> f64 {
    2f64.powf(-2.0 / n as f64) * dn0(n).expect("n >= 3") * a * a
}

impl DeviationReport {
    pub fn new(n: usize, sup_plus: f64, sup_minus: f64, a: f64) -> Self {
        let deviation = 0.5 * (sup_plus - sup_minus);
        let bound = deviation_bound(n, a);
        let ratio = if bound > 0.0 {
            deviation / bound
        } else if deviation == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Self { sup_plus, sup_minus, deviation, bound, a, ratio }
    }
}

/// Deviation of nodal values from `q`; the boundary data count.
pub fn deviation(u: &ConvexNodalFunction, q: &QuadraticAsymptote, a: f64) -> DeviationReport {
    let n = u.n();
    let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..u.len() {
        let w = u.values[i] - q.eval(&u.layout.position3(i)[..n]);
        hi = hi.max(w);
        lo = lo.min(w);
    }
    DeviationReport::new(n, hi, lo, a)
}

/// Deviation of a radial entire solution normalised to vanish at infinity.
pub fn radial_deviation(sol: &RadialSolution, a: f64) -> Option<DeviationReport> {
    sol.deviation_extrema().map(|(hi, lo)| DeviationReport::new(sol.profile.n.get(), hi, lo, a))
}

/// `Σ_i |m_i − h^n|` over interior nodes: the discrete `|μ|` seen by the solver.
pub fn discrete_total_variation(sol: &Solution) -> f64 {
    let hn = sol.lattice().cell_volume();
    sol.masses.iter().map(|m| (m - hn).abs()).sum()
}

fn radial_total_variation(mass: &RadialMass) -> f64 {
    match mass {
        RadialMass::Piecewise { n, atom, breaks, densities } => {
            let w = omega(n.get());
            let nn = n.get() as i32;
            let mut tv = *atom;
            for j in 0..breaks.len() {
                let dev = (densities[j] - 1.0).abs();
                if dev > 0.0 {
                    match breaks.get(j + 1) {
                        Some(e) => tv += dev * w * (e.powi(nn) - breaks[j].powi(nn)),
                        None => return f64::INFINITY,
                    }
                }
            }
            tv
        }
        RadialMass::Tabulated { .. } => f64::NAN,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathChoice {
    #[default]
    Auto,
    Radial,
    Grid,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EntireOptions {
    pub solver: SolverOptions,
    pub path: PathChoice,
    pub radial_intervals: usize,
}

impl Default for EntireOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), path: PathChoice::Auto, radial_intervals: 4000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntirePath {
    Radial,
    Grid,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelResult {
    pub radius: f64,
    pub spacing: f64,
    pub nodes: usize,
    /// `u − q` at the probes (nearest node on the grid path).
    pub probe_values: Vec<f64>,
    /// Distance from each probe to the node used.
    pub probe_offsets: Vec<f64>,
    pub deviation: DeviationReport,
    pub converged: bool,
    pub captured_atoms: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct EntireApproximation {
    pub path: EntirePath,
    pub probes: Vec<Vec<f64>>,
    pub levels: Vec<LevelResult>,
    /// Two-point extrapolation of the probe values in `R^{-(n-2)}`.
    pub extrapolated: Vec<f64>,
    /// Entire radial solution at the probes, when the radial path ran.
    pub exact: Option<Vec<f64>>,
    pub total_variation: f64,
    pub a: f64,
    pub truncated_tail_mass: f64,
    /// Deviation of the entire radial solution (radial path only).
    pub entire_deviation: Option<DeviationReport>,
    #[serde(skip)]
    pub radial: Option<(Vec<f64>, RadialSolution)>,
    #[serde(skip)]
    pub final_solution: Option<Solution>,
}

/// `(w_m t_{m−1} − w_{m−1} t_m)/(t_{m−1} − t_m)` with `t = R^{-(n-2)}`.
pub fn richardson(n: usize, r1: f64, w1: f64, r2: f64, w2: f64) -> f64 {
    let p = n as i32 - 2;
    if p <= 0 {
        return w2;
    }
    let (t1, t2) = (r1.powi(-p), r2.powi(-p));
    (w2 * t1 - w1 * t2) / (t1 - t2)
}

fn radial_candidate(mu: &MeasureData, q: &QuadraticAsymptote) -> Option<(Vec<f64>, RadialMass)> {
    let (center, mass) = mu.radial_form()?;
    let n = mu.n;
    let id = DMatrix::<f64>::identity(n, n);
    if !mu.patches.is_empty() && (q.matrix() - &id).amax() > 1e-12 {
        return None;
    }
    Some((center, mass))
}

/// Approximates the entire solution with asymptote `q` on the levels of `schedule`.
pub fn entire_approximate(
    mu: &MeasureData,
    q: &QuadraticAsymptote,
    schedule: &ExpansionSchedule,
    probes: &[Vec<f64>],
    opts: &EntireOptions,
) -> Result<EntireApproximation> {
    mu.validate()?;
    schedule.validate()?;
    let n = mu.n;
    if q.dim() != n || probes.iter().any(|p| p.len() != n) {
        return Err(Error::InvalidInput("measure, asymptote and probes must share a dimension".into()));
    }
    if (q.matrix().determinant() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("the asymptote of an entire solution needs det A = 1".into()));
    }
    let norm = AffineNormalization::from_quadratic(q);
    let radial = match opts.path {
        PathChoice::Grid => None,
        _ if n < 3 => None,
        _ => radial_candidate(mu, q),
    };
    if opts.path == PathChoice::Radial && radial.is_none() {
        return Err(Error::InvalidInput("measure is not radial about one center".into()));
    }
    match radial {
        Some((center, mass)) => radial_path(mu, &norm, &center, &mass, schedule, probes, opts),
        None => grid_path(mu, q, schedule, probes, opts),
    }
}

fn radial_path(
    mu: &MeasureData,
    norm: &AffineNormalization,
    center: &[f64],
    mass: &RadialMass,
    schedule: &ExpansionSchedule,
    probes: &[Vec<f64>],
    opts: &EntireOptions,
) -> Result<EntireApproximation> {
    let n = mu.n;
    let yc = norm.forward(center);
    let dist = |x: &[f64]| -> f64 { norm.forward(x).iter().zip(&yc).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() };
    let far = probes.iter().map(|p| dist(p)).fold(schedule.last_radius(), f64::max);
    let sol = solve_radial(mass, opts.radial_intervals, 1.05 * far + 1.0)?;
    let c = sol
        .asymptote
        .ok_or_else(|| Error::InvalidInput("radial measure has no finite asymptote".into()))?;
    let g = |r: f64| sol.profile.eval(r) - 0.5 * r * r;
    let tv = radial_total_variation(mass);
    let a = variation_radius(n, tv);
    let mut levels = Vec::new();
    for (k, &big_r) in schedule.radii.iter().enumerate() {
        let shift = g(big_r);
        let vals: Vec<f64> = probes.iter().map(|p| g(dist(p)) - shift).collect();
        let (mut hi, mut lo) = (0.0f64, 0.0f64);
        for (r, v) in sol.profile.radii.iter().zip(&sol.profile.values) {
            if *r <= big_r {
                let w = v - 0.5 * r * r - shift;
                hi = hi.max(w);
                lo = lo.min(w);
            }
        }
        levels.push(LevelResult {
            radius: big_r,
            spacing: schedule.spacing(k),
            nodes: 0,
            probe_values: vals,
            probe_offsets: vec![0.0; probes.len()],
            deviation: DeviationReport::new(n, hi, lo, a),
            converged: true,
            captured_atoms: mu.atoms.len(),
        });
    }
    let extrapolated = extrapolate(n, &levels);
    let exact: Vec<f64> = probes.iter().map(|p| g(dist(p)) - c).collect();
    let entire_deviation = radial_deviation(&sol, a);
    Ok(EntireApproximation {
        path: EntirePath::Radial,
        probes: probes.to_vec(),
        levels,
        extrapolated,
        exact: Some(exact),
        total_variation: tv,
        a,
        truncated_tail_mass: mu.truncated_tail_mass,
        entire_deviation,
        radial: Some((center.to_vec(), sol)),
        final_solution: None,
    })
}

fn extrapolate(n: usize, levels: &[LevelResult]) -> Vec<f64> {
    let m = levels.len();
    if m < 2 {
        return levels[m - 1].probe_values.clone();
    }
    let (l1, l2) = (&levels[m - 2], &levels[m - 1]);
    l1.probe_values
        .iter()
        .zip(&l2.probe_values)
        .map(|(w1, w2)| richardson(n, l1.radius, *w1, l2.radius, *w2))
        .collect()
}

fn grid_path(
    mu: &MeasureData,
    q: &QuadraticAsymptote,
    schedule: &ExpansionSchedule,
    probes: &[Vec<f64>],
    opts: &EntireOptions,
) -> Result<EntireApproximation> {
    let n = mu.n;
    if !(2..=3).contains(&n) {
        return Err(Error::InvalidInput("grid path needs n = 2 or 3".into()));
    }
    let a_mat = q.matrix().clone();
    let x0 = q.vertex();
    let last = schedule.radii.len() - 1;
    let inner_last = EllipsoidDomain::new(a_mat.clone(), x0.clone(), schedule.last_radius() * schedule.inner_fraction)?;
    if mu.atoms.iter().any(|a| !inner_last.contains(&a.y)) {
        return Err(Error::InvalidInput(format!(
            "schedule too small: atoms lie outside E_(R/{})",
            (1.0 / schedule.inner_fraction).round()
        )));
    }
    let mut levels = Vec::new();
    let mut final_solution = None;
    for (k, &big_r) in schedule.radii.iter().enumerate() {
        let h = schedule.spacing(k);
        let inner = EllipsoidDomain::new(a_mat.clone(), x0.clone(), big_r * schedule.inner_fraction)?;
        let target = mu.restrict(&inner);
        let captured = target.atoms.len();
        if captured < mu.atoms.len() {
            log::info!("level R = {big_r}: {} atoms outside the inner ellipsoid", mu.atoms.len() - captured);
        }
        let problem = DirichletProblem {
            domain: EllipsoidDomain::new(a_mat.clone(), x0.clone(), big_r)?,
            spacing: h,
            boundary: q.clone(),
            target,
            options: opts.solver.clone(),
        };
        let sol = problem.solve()?;
        let l = sol.lattice().clone();
        let mut vals = Vec::with_capacity(probes.len());
        let mut offs = Vec::with_capacity(probes.len());
        for p in probes {
            match l.nearest(p) {
                Some((i, d)) => {
                    vals.push(sol.u.values[i] - q.eval(l.position(i)));
                    offs.push(d);
                }
                None => {
                    vals.push(f64::NAN);
                    offs.push(f64::INFINITY);
                }
            }
        }
        let a = variation_radius(n, discrete_total_variation(&sol));
        levels.push(LevelResult {
            radius: big_r,
            spacing: h,
            nodes: l.len(),
            probe_values: vals,
            probe_offsets: offs,
            deviation: deviation(&sol.u, q, a),
            converged: sol.report.converged,
            captured_atoms: captured,
        });
        if k == last {
            final_solution = Some(sol);
        }
    }
    let extrapolated = extrapolate(n, &levels);
    let sampling = Sampling { spacing: schedule.spacing(last), anchor: x0 };
    let tv = mu.total_variation(Region::All, &sampling);
    Ok(EntireApproximation {
        path: EntirePath::Grid,
        probes: probes.to_vec(),
        levels,
        extrapolated,
        exact: None,
        total_variation: tv,
        a: variation_radius(n, tv),
        truncated_tail_mass: mu.truncated_tail_mass,
        entire_deviation: None,
        radial: None,
        final_solution,
    })
}

/// Calibration constant `Ĉ(n)` of the decay estimate, fit on `W₁`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub n: usize,
    pub c_hat: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub source: String,
    pub constants: Vec<CalibrationEntry>,
}

const FROZEN_CALIBRATION: &str = include_str!("../fixtures/calibration.json");

impl Calibration {
    pub fn frozen() -> Result<Self> {
        Ok(serde_json::from_str(FROZEN_CALIBRATION)?)
    }

    pub fn c_hat(&self, n: usize) -> Result<f64> {
        self.constants
            .iter()
            .find(|e| e.n == n)
            .map(|e| e.c_hat)
            .ok_or_else(|| Error::InvalidInput(format!("no calibration constant for n = {n}")))
    }
}

/// `sup_r |W₁(r) − r²/2 − d_{n,0}| (r/2)^{n−2} / ω_n` over log-spaced `r`.
pub fn fit_c_hat(n: usize, r_min: f64, r_max: f64, samples: usize) -> Result<f64> {
    let dim = Dimension::new(n)?;
    if n < 3 || !(r_max > r_min && r_min > 0.0) || samples < 2 {
        return Err(Error::InvalidInput("calibration needs n >= 3 and 0 < r_min < r_max".into()));
    }
    let d = dn0(n)?;
    let w = omega(n);
    let mut best = 0.0f64;
    for k in 0..samples {
        let r = r_min * (r_max / r_min).powf(k as f64 / (samples - 1) as f64);
        let lhs = (asymptote_gap(dim, 1.0, r) - d).abs();
        best = best.max(lhs * (0.5 * r).powi(n as i32 - 2) / w);
    }
    Ok(best)
}

/// Constant of the sharpness anchors: the decay term on `∂B_ρ` plus the tail of `W_ã`.
pub fn anchor_constant(n: usize, c_hat: f64) -> f64 {
    1.5 * 2f64.powi(n as i32 - 2) * omega(n) * c_hat
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub x: Vec<f64>,
    /// `√((x − x₀)ᵀA(x − x₀))`.
    pub radius: f64,
    pub rho: f64,
    pub lhs: f64,
    pub local: f64,
    pub tail: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayProfile {
    pub rows: Vec<DecayRow>,
    /// Least-squares slope of `log lhs` against `log radius`.
    pub slope: Option<f64>,
}

/// Rows `|u − q|(x) <= d_{n,0}(ω_n^{-1}|μ|(E_A(x,ρ)))^{2/n} + Ĉ|μ|(ℝⁿ)/ρ^{n−2}`.
///
/// `values[k]` is `u − q` at `probes[k].0`.
pub fn decay_profile(
    values: &[f64],
    probes: &[(Vec<f64>, f64)],
    mu: &MeasureData,
    q: &QuadraticAsymptote,
    c_hat: f64,
    sampling: &Sampling,
) -> Result<DecayProfile> {
    let n = mu.n;
    if values.len() != probes.len() {
        return Err(Error::InvalidInput("one value per probe".into()));
    }
    let d = dn0(n)?;
    let w = omega(n);
    let total = mu.total_variation(Region::All, sampling);
    let norm = AffineNormalization::from_quadratic(q);
    let mut rows = Vec::with_capacity(probes.len());
    for (v, (x, rho)) in values.iter().zip(probes) {
        let ball = EllipsoidDomain::new(q.matrix().clone(), x.clone(), *rho)?;
        let local_mass = mu.total_variation(Region::Inside(&ball), sampling);
        let local = d * (local_mass / w).powf(2.0 / n as f64);
        let tail = c_hat * total / rho.powi(n as i32 - 2);
        let lhs = v.abs();
        rows.push(DecayRow {
            x: x.clone(),
            radius: norm.radius(x),
            rho: *rho,
            lhs,
            local,
            tail,
            rhs: local + tail,
            holds: lhs <= local + tail,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.lhs > 0.0).map(|r| (r.radius, r.lhs)).unzip();
    Ok(DecayProfile { slope: loglog_slope(&xs, &ys), rows })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |s, p| (s.0 + p.0, s.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (a, b) in &pts {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Seeded random measure on the interior nodes of `l` with `|ν| <= budget`
/// and `1 + ν >= 0`.
///
/// Draw order from `ChaCha8Rng`: fraction of the budget, atom count, then per
/// atom (node, weight), then the negative patch (node, radius, depth), then a
/// coin for the positive patch and its (node, radius, height).
pub fn sample_measure(rng: &mut ChaCha8Rng, l: &Lattice, budget: f64) -> Result<MeasureData> {
    let n = l.n();
    let h = l.spacing();
    let ni = l.n_interior();
    if budget <= 0.0 {
        return Ok(MeasureData::lebesgue(n));
    }
    if ni == 0 {
        return Err(Error::InvalidInput("lattice has no interior nodes".into()));
    }
    let sampling = Sampling { spacing: h, anchor: l.position(0).to_vec() };
    let fraction: f64 = rng.random_range(0.2..1.0);
    let k: usize = rng.random_range(0..3);
    let mut atoms = Vec::with_capacity(k);
    for _ in 0..k {
        let i = rng.random_range(0..ni);
        let w: f64 = rng.random_range(0.1..1.0);
        atoms.push(Atom { y: l.position(i).to_vec(), mass: w });
    }
    let patch = |rng: &mut ChaCha8Rng, sign: f64| -> Result<(DensityPatch, f64)> {
        let i = rng.random_range(0..ni);
        let r: f64 = rng.random_range(1.5..3.0) * h;
        let depth: f64 = rng.random_range(0.2..1.0);
        let domain = EllipsoidDomain::ball(l.position(i).to_vec(), r)?;
        let p = DensityPatch { domain, delta: sign * depth };
        // same cell rule as the total variation, ghost nodes included
        let mut one = MeasureData::lebesgue(n);
        one.patches.push(p.clone());
        Ok((p, one.total_variation(Region::All, &sampling)))
    };
    let (neg, neg_mass) = patch(rng, -1.0)?;
    let mut patches = vec![neg];
    let mut total = atoms.iter().map(|a| a.mass).sum::<f64>() + neg_mass;
    if rng.random_bool(0.5) {
        let (pos, pos_mass) = patch(rng, 1.0)?;
        patches.push(pos);
        total += pos_mass;
    }
    let max_depth = patches.iter().filter(|p| p.delta < 0.0).map(|p| -p.delta).fold(0.0, f64::max);
    let mut scale = if total > 0.0 { fraction * budget / total } else { 0.0 };
    if max_depth > 0.0 {
        scale = scale.min(1.0 / max_depth);
    }
    for a in &mut atoms {
        a.mass *= scale;
    }
    for p in &mut patches {
        p.delta *= scale;
    }
    let mut mu = MeasureData::with_atoms(n, atoms);
    mu.patches = patches;
    mu.validate()?;
    Ok(mu)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SandwichConfig {
    pub domain: EllipsoidDomain,
    pub spacing: f64,
    pub phi: QuadraticAsymptote,
    pub a: f64,
    pub probes: Vec<Vec<f64>>,
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub options: SolverOptions,
    /// Obstacle solves allowed per probe in the slope search.
    #[serde(default = "default_slope_evaluations")]
    pub slope_evaluations: usize,
}

fn default_slope_evaluations() -> usize {
    40
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeBounds {
    pub y: Vec<f64>,
    pub node: usize,
    pub phi: f64,
    pub lower: f64,
    pub upper: f64,
    pub best_slope: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub index: usize,
    pub total_variation: f64,
    pub values: Vec<f64>,
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub probes: Vec<ProbeBounds>,
    pub samples: Vec<SampleOutcome>,
    pub tol: f64,
    pub all_within: bool,
}

/// Lower bound `u_a(y, y)`, upper bound `sup_p v_a(y, p)` over a compass
/// search in `p`, and seeded members of `D_{a,φ}` checked against both.
pub fn extremal_sandwich(cfg: &SandwichConfig) -> Result<SandwichReport> {
    let n = cfg.domain.dim();
    if cfg.phi.dim() != n || cfg.probes.iter().any(|y| y.len() != n) {
        return Err(Error::InvalidInput("sandwich: dimensions differ".into()));
    }
    if !(cfg.a >= 0.0) {
        return Err(Error::InvalidInput("sandwich: a must be nonnegative".into()));
    }
    let base = DirichletProblem {
        domain: cfg.domain.clone(),
        spacing: cfg.spacing,
        boundary: cfg.phi.clone(),
        target: MeasureData::lebesgue(n),
        options: cfg.options.clone(),
    };
    let l = base.lattice()?;
    let budget = omega(n) * cfg.a.powi(n as i32);
    let h = l.spacing();
    let tol = 10.0 * (cfg.options.tol_mass_factor * l.cell_volume()).powf(1.0 / n as f64) * h;
    let mut bounds = Vec::with_capacity(cfg.probes.len());
    for y in &cfg.probes {
        let (node, _) = l.nearest(y).ok_or_else(|| Error::InvalidInput("probe outside the lattice".into()))?;
        if node >= l.n_interior() {
            return Err(Error::InvalidInput("probe must snap to an interior node".into()));
        }
        let yn = l.position(node).to_vec();
        let phi = cfg.phi.eval(&yn);
        if cfg.a == 0.0 {
            let best_slope = cfg.phi.gradient(&yn);
            bounds.push(ProbeBounds { y: yn, node, phi, lower: phi, upper: phi, best_slope, evaluations: 0 });
            continue;
        }
        let lower_problem = DirichletProblem {
            target: MeasureData::with_atoms(n, vec![Atom { y: yn.clone(), mass: budget }]),
            ..base.clone()
        };
        let lower = lower_problem.solve_on(l.clone(), None)?.into_result()?.u.values[node];
        let (upper, best_slope, evaluations) = upper_bound(cfg, &l, node, budget)?;
        bounds.push(ProbeBounds { y: yn, node, phi, lower, upper, best_slope, evaluations });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.samples);
    for index in 0..cfg.samples {
        let mu = sample_measure(&mut rng, &l, budget)?;
        let sol = DirichletProblem { target: mu, ..base.clone() }.solve_on(l.clone(), None)?.into_result()?;
        let tv = discrete_total_variation(&sol);
        let values: Vec<f64> = bounds.iter().map(|b| sol.u.values[b.node]).collect();
        let within = tv <= budget * (1.0 + 1e-12)
            && values.iter().zip(&bounds).all(|(v, b)| *v >= b.lower - tol && *v <= b.upper + tol);
        samples.push(SampleOutcome { index, total_variation: tv, values, within });
    }
    let all_within = samples.iter().all(|s| s.within);
    Ok(SandwichReport { probes: bounds, samples, tol, all_within })
}

fn upper_bound(cfg: &SandwichConfig, l: &Arc<Lattice>, node: usize, budget: f64) -> Result<(f64, Vec<f64>, usize)> {
    let n = l.n();
    let y = l.position(node).to_vec();
    let eval = |p: &[f64]| -> Result<Option<f64>> {
        let ainv = cfg.phi.matrix().clone().try_inverse().expect("positive definite");
        let xp: Vec<f64> =
            (0..n).map(|i| (0..n).map(|j| ainv[(i, j)] * (p[j] - cfg.phi.linear()[j])).sum()).collect();
        if !cfg.domain.contains(&xp) {
            return Ok(None);
        }
        let prob = ObstacleProblem {
            domain: cfg.domain.clone(),
            spacing: cfg.spacing,
            boundary: cfg.phi.clone(),
            slope: p.to_vec(),
            target: MeasureData::lebesgue(n),
            options: cfg.options.clone(),
        };
        Ok(Some(prob.solve_mass_matched(budget)?.u().values[node]))
    };
    let mut p = cfg.phi.gradient(&y);
    let mut best = eval(&p)?.ok_or_else(|| Error::InvalidInput("probe outside the domain".into()))?;
    let mut evals = 1;
    let mut step = cfg.a.max(l.spacing());
    let min_step = step / 16.0;
    while step >= min_step && evals < cfg.slope_evaluations {
        let mut improved = false;
        'dirs: for k in 0..n {
            for s in [1.0, -1.0] {
                if evals >= cfg.slope_evaluations {
                    break 'dirs;
                }
                let mut cand = p.clone();
                cand[k] += s * step;
                evals += 1;
                if let Some(v) = eval(&cand)? {
                    if v > best {
                        best = v;
                        p = cand;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((best, p, evals))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SharpnessConfig {
    pub n: usize,
    pub a: f64,
    pub rhos: Vec<f64>,
    pub spacing: f64,
    /// Distance from the farther feature to `∂B_M`.
    pub margin: f64,
    #[serde(default)]
    pub options: SolverOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessRow {
    pub rho: f64,
    pub domain_center: Vec<f64>,
    pub domain_radius: f64,
    pub nodes: usize,
    pub height: f64,
    pub coincidence_volume: f64,
    pub deficit: f64,
    pub deviation: DeviationReport,
    /// `u(0)`.
    pub origin_value: f64,
    /// `u(ρ²e_n) − ρ⁴/2`.
    pub plane_value: f64,
    pub lower_anchor: f64,
    pub upper_anchor: f64,
    pub anchors_hold: bool,
    pub converged: bool,
    pub endpoint_capped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    pub rows: Vec<SharpnessRow>,
    pub increasing: bool,
    pub allowance: f64,
    pub within_allowance: bool,
    pub anchor_constant: f64,
}

/// Dirac `½ω_n aⁿ δ₀` plus a mass-matched obstacle `ρ²x_n + h` with `|K| = ½ω_n aⁿ`.
pub fn sharpness_experiment(cfg: &SharpnessConfig, c_hat: f64, allowance: f64) -> Result<SharpnessReport> {
    let n = cfg.n;
    Dimension::new(n)?;
    if n < 3 || !(cfg.a > 0.0) || cfg.rhos.is_empty() {
        return Err(Error::InvalidInput("sharpness needs n >= 3, a > 0 and at least one ρ".into()));
    }
    let d = dn0(n)?;
    let half = 0.5 * omega(n) * cfg.a.powi(n as i32);
    let at = 2f64.powf(-1.0 / n as f64) * cfg.a;
    let ca = anchor_constant(n, c_hat);
    let h = cfg.spacing;
    let q = QuadraticAsymptote::standard(n);
    let mut rows = Vec::with_capacity(cfg.rhos.len());
    for &rho in &cfg.rhos {
        let top = rho * rho;
        let mut center = vec![0.0; n];
        center[n - 1] = (0.5 * top / h).round() * h;
        let radius = 0.5 * top + cfg.margin;
        let mut slope = vec![0.0; n];
        slope[n - 1] = top;
        let prob = ObstacleProblem {
            domain: EllipsoidDomain::ball(center.clone(), radius)?,
            spacing: h,
            boundary: q.clone(),
            slope,
            target: MeasureData::with_atoms(n, vec![Atom { y: vec![0.0; n], mass: half }]),
            options: cfg.options.clone(),
        };
        let s = prob.solve_mass_matched(half)?;
        let u = s.u();
        let l = u.lattice().expect("lattice").clone();
        let origin_value = u.value_near(&vec![0.0; n]).expect("origin inside");
        let mut tip = vec![0.0; n];
        tip[n - 1] = top;
        let plane_value = u.value_near(&tip).expect("plane point inside") - 0.5 * top * top;
        let tail = ca * cfg.a.powi(n as i32) / rho.powi(n as i32 - 2);
        let lower_anchor = -d * at * at + tail;
        let upper_anchor = d * at * at - tail;
        rows.push(SharpnessRow {
            rho,
            domain_center: center,
            domain_radius: radius,
            nodes: l.len(),
            height: s.height,
            coincidence_volume: s.coincidence.volume,
            deficit: s.deficit,
            deviation: deviation(u, &q, cfg.a),
            origin_value,
            plane_value,
            lower_anchor,
            upper_anchor,
            anchors_hold: origin_value <= lower_anchor && plane_value >= upper_anchor,
            converged: s.solution.report.converged,
            endpoint_capped: s.endpoint_capped,
        });
    }
    let increasing = rows.windows(2).all(|w| w[1].deviation.ratio > w[0].deviation.ratio);
    let within_allowance = rows.iter().all(|r| r.deviation.ratio <= 1.0 + allowance);
    Ok(SharpnessReport { rows, increasing, allowance, within_allowance, anchor_constant: ca })
}

/// Grid-versus-radial error of the two extremal instances, relative to the bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allowance {
    pub spacing: f64,
    pub radius: f64,
    pub a: f64,
    pub dirac: f64,
    pub obstacle: f64,
    pub epsilon: f64,
}

/// Solves the Dirac and mass-matched obstacle instances on `B_R` and compares
/// their deviations with the bounded radial solutions.
pub fn measure_allowance(n: usize, a: f64, spacing: f64, radius: f64, options: &SolverOptions) -> Result<Allowance> {
    let dim = Dimension::new(n)?;
    let q = QuadraticAsymptote::standard(n);
    let domain = EllipsoidDomain::ball(vec![0.0; n], radius)?;
    let bound = deviation_bound(n, a);
    let mass = omega(n) * a.powi(n as i32);
    let dirac = DirichletProblem {
        domain: domain.clone(),
        spacing,
        boundary: q.clone(),
        target: MeasureData::with_atoms(n, vec![Atom { y: vec![0.0; n], mass }]),
        options: options.clone(),
    }
    .solve()?
    .into_result()?;
    // the bounded radial solutions are monotone in r, so u − q sweeps [u(0) − q(0), 0]
    let dirac_oracle = 0.5 * asymptote_gap(dim, a, radius);
    let dirac_grid = deviation(&dirac.u, &q, a).deviation;
    let obstacle = ObstacleProblem {
        domain,
        spacing,
        boundary: q.clone(),
        slope: vec![0.0; n],
        target: MeasureData::lebesgue(n),
        options: options.clone(),
    }
    .solve_mass_matched(mass)?;
    let star_gap = 0.5 * radius * radius - crate::radial::eval_w_star(dim, a, radius);
    let obstacle_oracle = 0.5 * star_gap;
    let obstacle_grid = deviation(obstacle.u(), &q, a).deviation;
    let e_dirac = (dirac_grid - dirac_oracle).abs() / bound;
    let e_obstacle = (obstacle_grid - obstacle_oracle).abs() / bound;
    Ok(Allowance { spacing, radius, a, dirac: e_dirac, obstacle: e_obstacle, epsilon: e_dirac.max(e_obstacle) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditVerdict {
    /// Criterion holds and no flat segment was found.
    StrictlyConvex,
    /// Criterion holds but a flat segment was found.
    Contradiction,
    /// Criterion fails; it is only sufficient.
    Inconclusive,
    /// Fewer than two atoms.
    Vacuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub criterion: Option<CriterionOutcome>,
    pub flats: Vec<FlatSegment>,
    pub verdict: AuditVerdict,
    pub converged: bool,
}

/// Cross-tabulates the mass-separation criterion with flat segments between
/// atom pairs of the grid approximant.
pub fn strict_convexity_audit(
    mu: &MeasureData,
    q: &QuadraticAsymptote,
    schedule: &ExpansionSchedule,
    opts: &EntireOptions,
    flat_tol: f64,
    min_nodes: usize,
) -> Result<AuditReport> {
    let grid = EntireOptions { path: PathChoice::Grid, ..opts.clone() };
    let approx = entire_approximate(mu, q, schedule, &[], &grid)?;
    let sol = approx.final_solution.expect("grid path keeps its last level");
    if mu.atoms.len() < 2 {
        return Ok(AuditReport { criterion: None, flats: Vec::new(), verdict: AuditVerdict::Vacuous, converged: sol.report.converged });
    }
    let criterion = strict_convexity_criterion(&mu.atoms, q.matrix())?;
    let l = sol.lattice().clone();
    let nodes: Vec<usize> = mu.atoms.iter().map(|a| l.nearest(&a.y).map(|x| x.0)).collect::<Option<_>>().ok_or_else(|| {
        Error::InvalidInput("atom outside the lattice".into())
    })?;
    let mut flats = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if nodes[i] != nodes[j] {
                flats.extend(flat_segments_between(&sol.u, nodes[i], nodes[j], flat_tol, min_nodes)?);
            }
        }
    }
    let verdict = match (criterion.satisfied, flats.is_empty()) {
        (true, true) => AuditVerdict::StrictlyConvex,
        (true, false) => AuditVerdict::Contradiction,
        (false, _) => AuditVerdict::Inconclusive,
    };
    Ok(AuditReport { criterion: Some(criterion), flats, verdict, converged: sol.report.converged })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionGrowth {
    pub spacing: f64,
    pub heights: Vec<f64>,
    pub volumes: Vec<f64>,
    pub exponent: f64,
    /// `exp(mean(log|S_h| − (n/2) log h))`.
    pub constant: f64,
}

/// Sublevel sets `{W_a < h}` of lattice samples of `W_a` around its minimum.
pub fn section_growth(n: usize, a: f64, spacing: f64, heights: &[f64], max_nodes: usize) -> Result<SectionGrowth> {
    let dim = Dimension::new(n)?;
    if heights.len() < 2 || heights.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidInput("need at least two positive heights".into()));
    }
    let top = heights.iter().copied().fold(0.0, f64::max);
    // W_a(r) >= r²/2, so {W_a < h} ⊂ B_{√(2h)}
    let radius = (2.0 * top).sqrt() + 3.0 * spacing;
    let l = Arc::new(Lattice::new(EllipsoidDomain::ball(vec![0.0; n], radius)?, spacing, 1, max_nodes)?);
    let u = ConvexNodalFunction::on_lattice(l.clone(), |x| eval_w(dim, a, x.iter().map(|v| v * v).sum::<f64>().sqrt()));
    let (origin, _) = l.nearest(&vec![0.0; n]).expect("origin node");
    let flat = vec![0.0; n];
    let mut volumes = Vec::with_capacity(heights.len());
    for &h in heights {
        volumes.push(section_with(&u, origin, &flat, h)?.volume);
    }
    let exponent = loglog_slope(heights, &volumes).ok_or_else(|| Error::InvalidInput("degenerate section fit".into()))?;
    let half = 0.5 * n as f64;
    let m = heights.len() as f64;
    let log_c = heights.iter().zip(&volumes).map(|(h, v)| v.ln() - half * h.ln()).sum::<f64>() / m;
    Ok(SectionGrowth { spacing, heights: heights.to_vec(), volumes, exponent, constant: log_c.exp() })
}
