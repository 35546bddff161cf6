//! Discrete Dirichlet problem `𝓜u = m` in Ω, `u = φ` on the ghost layer.
//!
//! The default method is a damped Newton iteration on cell volumes (with an
//! active-set treatment of plane obstacles). Neighbour lists start from the
//! lattice stencil and are widened until every cell is exact. The damped
//! Jacobi node-lifting iteration is available as an option and is used
//! automatically when some free node has zero target mass.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::discrete::{convexify, CellEval, CellSystem};
use crate::error::{Error, Result};
use crate::lattice::{default_stencil_radius, ConvexNodalFunction, Lattice, DEFAULT_MAX_NODES};
use crate::measure::{EllipsoidDomain, MeasureData, QuadraticAsymptote};
use crate::sparse::{bicgstab, Csr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Newton,
    Jacobi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub method: Method,
    /// Jacobi damping `λ ∈ (0, 1]`.
    pub damping: f64,
    pub max_sweeps: usize,
    pub max_newton: usize,
    /// `tol_mass = tol_mass_factor · h^n`.
    pub tol_mass_factor: f64,
    pub tol_change: f64,
    pub max_nodes: usize,
    pub stencil_radius: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: Method::Newton,
            damping: 0.7,
            max_sweeps: 20_000,
            max_newton: 200,
            tol_mass_factor: 1e-8,
            tol_change: 1e-10,
            max_nodes: DEFAULT_MAX_NODES,
            stencil_radius: None,
        }
    }
}

/// Where an atom was placed on the lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomSnap {
    pub atom: usize,
    pub node: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: Method,
    /// Newton steps or Jacobi sweeps.
    pub iterations: usize,
    /// Neighbour links added to reach exact cells.
    pub links_added: usize,
    pub max_mass_residual: f64,
    pub sup_change: f64,
    pub tol_mass: f64,
    pub converged: bool,
    pub total_mass: f64,
    pub total_target: f64,
    pub contact_nodes: usize,
    pub atom_snaps: Vec<AtomSnap>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub u: ConvexNodalFunction,
    /// Target mass per interior node.
    pub masses: Vec<f64>,
    /// Final cell volume per interior node.
    pub volumes: Vec<f64>,
    pub report: SolveReport,
}

impl Solution {
    /// `Err(NonConvergence)` unless the solve converged.
    pub fn into_result(self) -> Result<Self> {
        if self.report.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence { iterations: self.report.iterations, residual: self.report.max_mass_residual })
        }
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        self.u.lattice().expect("solutions live on lattices")
    }
}

/// Target mass per interior node: density at the node times `h^n`, plus atoms
/// snapped to their nearest node.
pub fn node_masses(l: &Lattice, mu: &MeasureData) -> Result<(Vec<f64>, Vec<AtomSnap>)> {
    mu.validate()?;
    if mu.n != l.n() {
        return Err(Error::InvalidInput("measure and lattice dimensions differ".into()));
    }
    let cell = l.cell_volume();
    let mut m = Vec::with_capacity(l.n_interior());
    for i in 0..l.n_interior() {
        let f = mu.density_at(l.position(i));
        if !(f >= 0.0) {
            return Err(Error::InvalidInput(format!("density {f} < 0 at node {i}: 1 + μ must be nonnegative")));
        }
        m.push(f * cell);
    }
    let mut snaps = Vec::new();
    for (k, a) in mu.atoms.iter().enumerate() {
        match l.nearest(&a.y) {
            Some((i, d)) if i < l.n_interior() => {
                m[i] += a.mass;
                snaps.push(AtomSnap { atom: k, node: i, distance: d });
            }
            _ => return Err(Error::InvalidInput(format!("atom {k} lies outside the lattice domain"))),
        }
    }
    Ok((m, snaps))
}

#[derive(Clone, Debug)]
pub struct DirichletProblem {
    pub domain: EllipsoidDomain,
    pub spacing: f64,
    pub boundary: QuadraticAsymptote,
    pub target: MeasureData,
    pub options: SolverOptions,
}

impl DirichletProblem {
    pub fn lattice(&self) -> Result<Arc<Lattice>> {
        let r = self.options.stencil_radius.unwrap_or_else(|| default_stencil_radius(self.domain.dim()));
        Ok(Arc::new(Lattice::new(self.domain.clone(), self.spacing, r, self.options.max_nodes)?))
    }

    pub fn solve(&self) -> Result<Solution> {
        let l = self.lattice()?;
        self.solve_on(l, None)
    }

    /// Solve on a given lattice, optionally warm-started from `init` (interior values).
    pub fn solve_on(&self, l: Arc<Lattice>, init: Option<&[f64]>) -> Result<Solution> {
        if self.boundary.dim() != self.domain.dim() {
            return Err(Error::InvalidInput("boundary quadratic and domain dimensions differ".into()));
        }
        let (masses, snaps) = node_masses(&l, &self.target)?;
        let mut u = ConvexNodalFunction::from_quadratic(l, &self.boundary);
        if let Some(v) = init {
            u.values[..v.len()].copy_from_slice(v);
        }
        solve_nodes(u, &masses, None, snaps, &self.options)
    }
}

/// `true` iff `u1 <= u2 + tol` at every node.
pub fn comparison_check(u1: &ConvexNodalFunction, u2: &ConvexNodalFunction, tol: f64) -> Result<bool> {
    if u1.len() != u2.len() {
        return Err(Error::InvalidInput("comparison needs matching node sets".into()));
    }
    Ok(u1.values.iter().zip(&u2.values).all(|(a, b)| *a <= b + tol))
}

/// Shared engine: interior values of `u` are unknown, ghost values fixed.
/// `obstacle[i]` (interior) is a lower bound with complementarity.
pub(crate) fn solve_nodes(
    mut u: ConvexNodalFunction,
    masses: &[f64],
    obstacle: Option<&[f64]>,
    atom_snaps: Vec<AtomSnap>,
    opts: &SolverOptions,
) -> Result<Solution> {
    let start = Instant::now();
    let l = u.lattice().ok_or_else(|| Error::InvalidInput("solver needs a lattice".into()))?.clone();
    let ni = l.n_interior();
    if masses.len() != ni || masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
        return Err(Error::Infeasible { mass: masses.iter().sum(), budget: f64::NAN });
    }
    if let Some(psi) = obstacle {
        for i in 0..ni {
            u.values[i] = u.values[i].max(psi[i]);
        }
    }
    let ctx = Ctx::new(&l, masses, obstacle, opts, &u);
    let zero_free = masses.iter().any(|m| *m == 0.0);
    let mut method = opts.method;
    let mut sys = CellSystem::new(&u);
    let out = match method {
        Method::Newton if zero_free => {
            // Newton rows degenerate where the target mass vanishes: solve a
            // nearby problem whose residual stays inside the tolerance
            let floor = 0.25 * ctx.tol_mass;
            let lifted: Vec<f64> = masses.iter().map(|m| m.max(floor)).collect();
            let mut reg = Ctx::new(&l, &lifted, obstacle, opts, &u);
            reg.tol_mass = 0.5 * ctx.tol_mass;
            let initial = u.values.clone();
            let out = newton(&reg, &mut sys, &mut u.values);
            match out {
                Ok(o) if o.converged => o,
                _ => {
                    log::info!("regularised Newton failed: falling back to the Jacobi iteration");
                    method = Method::Jacobi;
                    u.values = initial;
                    sys = CellSystem::new(&u);
                    jacobi(&ctx, &mut sys, &mut u)?
                }
            }
        }
        Method::Newton => newton(&ctx, &mut sys, &mut u.values)?,
        Method::Jacobi => jacobi(&ctx, &mut sys, &mut u)?,
    };
    let evals = sys.evaluate(&u.values, &ctx.interior)?;
    let volumes: Vec<f64> = evals.iter().map(|e| e.volume).collect();
    let (res, contact) = ctx.residual(&u.values, &volumes);
    let converged = out.converged && res <= ctx.tol_mass;
    let report = SolveReport {
        method,
        iterations: out.iterations,
        links_added: out.links,
        max_mass_residual: res,
        sup_change: out.change,
        tol_mass: ctx.tol_mass,
        converged,
        total_mass: volumes.iter().sum(),
        total_target: masses.iter().sum(),
        contact_nodes: contact,
        atom_snaps,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    if !converged {
        log::warn!("solver stopped after {} iterations, residual {:.3e}", out.iterations, res);
    }
    Ok(Solution { u, masses: masses.to_vec(), volumes, report })
}

struct Ctx<'a> {
    masses: &'a [f64],
    obstacle: Option<&'a [f64]>,
    opts: &'a SolverOptions,
    interior: Vec<usize>,
    tol_mass: f64,
    tol_contact: f64,
    /// Converts mass residuals to value units in the complementarity function.
    scale: f64,
    h: f64,
}

struct Outcome {
    iterations: usize,
    links: usize,
    change: f64,
    converged: bool,
}

impl<'a> Ctx<'a> {
    fn new(l: &Lattice, masses: &'a [f64], obstacle: Option<&'a [f64]>, opts: &'a SolverOptions, u: &ConvexNodalFunction) -> Self {
        let n = l.n() as i32;
        let h = l.spacing();
        let (lo, hi) = u.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        Self {
            masses,
            obstacle,
            opts,
            interior: (0..l.n_interior()).collect(),
            tol_mass: opts.tol_mass_factor * h.powi(n),
            tol_contact: 1e-9 * (hi - lo).max(1.0),
            scale: 2.0 * n as f64 * h.powi(n - 2),
            h,
        }
    }

    fn in_contact(&self, i: usize, v: f64) -> bool {
        self.obstacle.is_some_and(|psi| v - psi[i] <= self.tol_contact)
    }

    /// Largest violation of the equation / complementarity conditions, in mass units.
    fn residual(&self, values: &[f64], vols: &[f64]) -> (f64, usize) {
        let mut worst = 0.0f64;
        let mut contact = 0;
        for &i in &self.interior {
            let r = vols[i] - self.masses[i];
            if self.in_contact(i, values[i]) {
                contact += 1;
                worst = worst.max(r.max(0.0));
            } else {
                worst = worst.max(r.abs());
            }
        }
        (worst, contact)
    }

    /// Complementarity function `min(u − ψ, (m − vol)/s)`.
    fn phi(&self, values: &[f64], vols: &[f64]) -> Vec<f64> {
        self.interior
            .iter()
            .map(|&i| {
                let eq = (self.masses[i] - vols[i]) / self.scale;
                match self.obstacle {
                    Some(psi) => (values[i] - psi[i]).min(eq),
                    None => eq,
                }
            })
            .collect()
    }

    fn feasible(&self, values: &[f64], vols: &[f64]) -> bool {
        self.interior.iter().all(|&i| vols[i] > 0.0 || self.masses[i] == 0.0 || self.in_contact(i, values[i]))
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn volumes(evals: &[CellEval]) -> Vec<f64> {
    evals.iter().map(|e| e.volume).collect()
}

fn newton(ctx: &Ctx<'_>, sys: &mut CellSystem, values: &mut [f64]) -> Result<Outcome> {
    let ni = ctx.interior.len();
    let mut iterations = 0;
    let mut links = 0;
    let mut change = f64::INFINITY;
    let mut evals = repair(ctx, sys, values)?;
    loop {
        let mut converged = false;
        while iterations < ctx.opts.max_newton {
            let vols = volumes(&evals);
            let phi = ctx.phi(values, &vols);
            let (res, _) = ctx.residual(values, &vols);
            let active: Vec<bool> = match ctx.obstacle {
                Some(psi) => (0..ni)
                    .map(|i| values[i] - psi[i] <= (ctx.masses[i] - vols[i]) / ctx.scale)
                    .collect(),
                None => vec![false; ni],
            };
            // Newton direction
            let mut delta = vec![0.0; ni];
            if let Some(psi) = ctx.obstacle {
                for i in 0..ni {
                    if active[i] {
                        delta[i] = psi[i] - values[i];
                    }
                }
            }
            let free: Vec<usize> = (0..ni).filter(|&i| !active[i]).collect();
            let mut pos = vec![usize::MAX; ni];
            for (k, &i) in free.iter().enumerate() {
                pos[i] = k;
            }
            let mut rows = Vec::with_capacity(free.len());
            let mut rhs = Vec::with_capacity(free.len());
            for &i in &free {
                let e = &evals[i];
                let mut row = vec![(pos[i], e.diagonal())];
                let mut b = ctx.masses[i] - e.volume;
                for &(j, c) in &e.couplings {
                    if j < ni {
                        if active[j] {
                            b -= c * delta[j];
                        } else {
                            row.push((pos[j], c));
                        }
                    }
                }
                rows.push(row);
                rhs.push(b);
            }
            if !free.is_empty() {
                let a = Csr::from_rows(rows);
                let mut x = vec![0.0; free.len()];
                let st = bicgstab(&a, &rhs, &mut x, 1e-10, 4000);
                if !st.converged {
                    log::debug!("inner solve stopped at relative residual {:.2e}", st.relative_residual);
                }
                for (k, &i) in free.iter().enumerate() {
                    delta[i] = x[k];
                }
            }
            let step = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            if res <= ctx.tol_mass && step <= ctx.opts.tol_change {
                change = step;
                converged = true;
                break;
            }
            // damped step on the merit |Φ|
            let m0 = norm2(&phi);
            let mut t = 1.0;
            let mut accepted = false;
            let mut trial = values.to_vec();
            for _ in 0..40 {
                for i in 0..ni {
                    trial[i] = values[i] + t * delta[i];
                }
                let ev = sys.evaluate(&trial, &ctx.interior)?;
                let vt = volumes(&ev);
                if ctx.feasible(&trial, &vt) && norm2(&ctx.phi(&trial, &vt)) <= (1.0 - 1e-4 * t) * m0 {
                    values[..ni].copy_from_slice(&trial[..ni]);
                    evals = ev;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            iterations += 1;
            change = t * step;
            if !accepted {
                log::warn!("line search failed at iteration {iterations}");
                return Ok(Outcome { iterations, links, change, converged: false });
            }
        }
        if !converged {
            return Ok(Outcome { iterations, links, change, converged: false });
        }
        let added = sys.refine(values, &ctx.interior)?;
        if added == 0 {
            return Ok(Outcome { iterations, links, change, converged: true });
        }
        links += added;
        log::debug!("added {added} neighbour links");
        evals = repair(ctx, sys, values)?;
    }
}

/// Lowers free nodes whose exact cell is empty (they sit above the convex
/// envelope once more neighbours are linked) until the Newton rows are regular.
fn repair(ctx: &Ctx<'_>, sys: &mut CellSystem, values: &mut [f64]) -> Result<Vec<CellEval>> {
    for _ in 0..8 {
        let evals = sys.evaluate(values, &ctx.interior)?;
        let empty: Vec<usize> = ctx
            .interior
            .iter()
            .copied()
            .filter(|&i| evals[i].volume <= 0.0 && ctx.masses[i] > 0.0 && !ctx.in_contact(i, values[i]))
            .collect();
        if empty.is_empty() {
            return Ok(evals);
        }
        log::debug!("lowering {} nodes with empty cells", empty.len());
        for i in empty {
            let d = lift(ctx, sys, values, i)?;
            values[i] += d;
            if let Some(psi) = ctx.obstacle {
                values[i] = values[i].max(psi[i]);
            }
        }
    }
    sys.evaluate(values, &ctx.interior)
}

/// Value change `δ` with `vol_i(u_i + δ) = m_i`, by bracketing and bisection.
fn lift(ctx: &Ctx<'_>, sys: &CellSystem, values: &[f64], i: usize) -> Result<f64> {
    let mut v = values.to_vec();
    let mut g = |d: f64| -> Result<f64> {
        v[i] = values[i] + d;
        Ok(sys.local_cell(i, &v)?.0.volume() - ctx.masses[i])
    };
    let g0 = g(0.0)?;
    let target_tol = 1e-3 * ctx.tol_mass;
    if g0.abs() <= target_tol && ctx.masses[i] > 0.0 {
        return Ok(0.0);
    }
    let step0 = ctx.h * ctx.h;
    let (mut lo, mut hi) = if g0 > 0.0 || (ctx.masses[i] == 0.0 && g0 >= 0.0) {
        let mut s = step0;
        while g(s)? > 0.0 {
            s *= 2.0;
            if s > 1e12 {
                return Err(Error::NonConvergence { iterations: 0, residual: g0 });
            }
        }
        (0.0, s)
    } else {
        let mut s = -step0;
        while g(s)? < 0.0 {
            s *= 2.0;
            if s < -1e12 {
                return Err(Error::NonConvergence { iterations: 0, residual: g0 });
            }
        }
        (s, 0.0)
    };
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid)?;
        if ctx.masses[i] > 0.0 && gm.abs() <= target_tol {
            return Ok(mid);
        }
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + values[i].abs()) {
            break;
        }
    }
    Ok(hi)
}

fn jacobi(ctx: &Ctx<'_>, sys: &mut CellSystem, u: &mut ConvexNodalFunction) -> Result<Outcome> {
    use rayon::prelude::*;
    let ni = ctx.interior.len();
    let lam = ctx.opts.damping;
    if !(lam > 0.0 && lam <= 1.0) {
        return Err(Error::InvalidInput("damping must lie in (0, 1]".into()));
    }
    let mut links = 0;
    let mut change = f64::INFINITY;
    for sweep in 1..=ctx.opts.max_sweeps {
        let snapshot = u.values.clone();
        let deltas: Vec<f64> = {
            let s: &CellSystem = sys;
            ctx.interior.par_iter().map(|&i| lift(ctx, s, &snapshot, i)).collect::<Result<_>>()?
        };
        change = 0.0;
        for i in 0..ni {
            let mut nv = snapshot[i] + lam * deltas[i];
            if let Some(psi) = ctx.obstacle {
                nv = nv.max(psi[i]);
            }
            change = change.max((nv - snapshot[i]).abs());
            u.values[i] = nv;
        }
        let (cv, _) = convexify(u)?;
        u.values = cv.values;
        if let Some(psi) = ctx.obstacle {
            for i in 0..ni {
                u.values[i] = u.values[i].max(psi[i]);
            }
        }
        if change <= ctx.opts.tol_change || sweep % 25 == 0 {
            let vols = volumes(&sys.evaluate(&u.values, &ctx.interior)?);
            let (res, _) = ctx.residual(&u.values, &vols);
            if res <= ctx.tol_mass && change <= ctx.opts.tol_change {
                let added = sys.refine(&u.values, &ctx.interior)?;
                links += added;
                if added == 0 {
                    return Ok(Outcome { iterations: sweep, links, change, converged: true });
                }
            } else if sweep % 25 == 0 {
                links += sys.refine(&u.values, &ctx.interior)?;
            }
        }
    }
    Ok(Outcome { iterations: ctx.opts.max_sweeps, links, change, converged: false })
}
