//! Hyperplane obstacle problem `v >= ℓ_p + h`, `𝓜v = target·χ_{v > ℓ_p + h}`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dirichlet::{node_masses, solve_nodes, Solution, SolverOptions};
use crate::error::{Error, Result};
use crate::lattice::{default_stencil_radius, ConvexNodalFunction, Lattice};
use crate::measure::{EllipsoidDomain, MeasureData, QuadraticAsymptote};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceSet {
    pub nodes: Vec<usize>,
    /// `#nodes · h^n`.
    pub volume: f64,
    /// Half a cell for every contact node with a free axis neighbour.
    pub boundary_layer: f64,
    pub height: f64,
}

#[derive(Clone, Debug)]
pub struct ObstacleSolution {
    pub solution: Solution,
    pub coincidence: CoincidenceSet,
    pub height: f64,
    /// Slope and value at the origin of the obstacle plane `ℓ_p + h`.
    pub slope: Vec<f64>,
    pub plane_at_origin: f64,
    /// `|𝓜v − target|(Ω)` over interior nodes.
    pub deficit: f64,
    /// Mass matching stopped at `inf_∂Ω(φ − ℓ_p)`.
    pub endpoint_capped: bool,
    pub outer_steps: usize,
}

impl ObstacleSolution {
    pub fn u(&self) -> &ConvexNodalFunction {
        &self.solution.u
    }
}

#[derive(Clone, Debug)]
pub struct ObstacleProblem {
    pub domain: EllipsoidDomain,
    pub spacing: f64,
    pub boundary: QuadraticAsymptote,
    /// Slope `p` of the supporting plane `ℓ_p` of the boundary quadratic.
    pub slope: Vec<f64>,
    pub target: MeasureData,
    pub options: SolverOptions,
}

impl ObstacleProblem {
    pub fn lattice(&self) -> Result<Arc<Lattice>> {
        let r = self.options.stencil_radius.unwrap_or_else(|| default_stencil_radius(self.domain.dim()));
        Ok(Arc::new(Lattice::new(self.domain.clone(), self.spacing, r, self.options.max_nodes)?))
    }

    /// `ℓ_p(x) = φ(x_p) + p·(x − x_p)` with `∇φ(x_p) = p`.
    pub fn support_plane(&self) -> impl Fn(&[f64]) -> f64 + '_ {
        let q = &self.boundary;
        let ainv = q.matrix().clone().try_inverse().expect("positive definite");
        let n = q.dim();
        let xp: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| ainv[(i, j)] * (self.slope[j] - q.linear()[j])).sum())
            .collect();
        let base = q.eval(&xp);
        move |x: &[f64]| base + (0..n).map(|k| self.slope[k] * (x[k] - xp[k])).sum::<f64>()
    }

    /// `inf_∂Ω(φ − ℓ_p)` over the ghost layer.
    pub fn max_height(&self, l: &Lattice) -> f64 {
        let ell = self.support_plane();
        (l.n_interior()..l.len())
            .map(|i| self.boundary.eval(l.position(i)) - ell(l.position(i)))
            .fold(f64::INFINITY, f64::min)
    }

    fn check(&self) -> Result<()> {
        if self.slope.len() != self.domain.dim() || self.boundary.dim() != self.domain.dim() {
            return Err(Error::InvalidInput("obstacle: slope, boundary and domain dimensions differ".into()));
        }
        Ok(())
    }

    pub fn solve_fixed_height(&self, height: f64) -> Result<ObstacleSolution> {
        self.check()?;
        let l = self.lattice()?;
        let (masses, snaps) = node_masses(&l, &self.target)?;
        let hmax = self.max_height(&l);
        if height > hmax {
            return Err(Error::InvalidInput(format!(
                "obstacle height {height} exceeds inf over the boundary of φ − ℓ_p = {hmax}"
            )));
        }
        self.run(&l, &masses, snaps, height, None)
    }

    fn run(
        &self,
        l: &Arc<Lattice>,
        masses: &[f64],
        snaps: Vec<crate::dirichlet::AtomSnap>,
        height: f64,
        warm: Option<&[f64]>,
    ) -> Result<ObstacleSolution> {
        let ell = self.support_plane();
        let psi: Vec<f64> = (0..l.n_interior()).map(|i| ell(l.position(i)) + height).collect();
        let mut u = ConvexNodalFunction::from_quadratic(l.clone(), &self.boundary);
        if let Some(w) = warm {
            u.values[..w.len()].copy_from_slice(w);
        }
        let sol = solve_nodes(u, masses, Some(&psi), snaps, &self.options)?;
        let tol_contact = 1e-9 * sol.u.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let contact: Vec<usize> =
            (0..l.n_interior()).filter(|&i| sol.u.values[i] - psi[i] <= tol_contact).collect();
        let deficit = (0..l.n_interior()).map(|i| (sol.volumes[i] - masses[i]).abs()).sum();
        let coincidence = coincidence_set(l, &contact, height);
        let plane_at_origin = ell(&vec![0.0; l.n()]) + height;
        Ok(ObstacleSolution {
            solution: sol,
            coincidence,
            height,
            slope: self.slope.clone(),
            plane_at_origin,
            deficit,
            endpoint_capped: false,
            outer_steps: 0,
        })
    }

    /// Chooses `h ∈ [0, inf_∂Ω(φ − ℓ_p)]` with `|𝓜v − target|(Ω) = mass`
    /// (Illinois iteration, at most 60 steps, warm-started).
    pub fn solve_mass_matched(&self, mass: f64) -> Result<ObstacleSolution> {
        self.check()?;
        if !(mass > 0.0) {
            return Err(Error::InvalidInput("matched mass must be positive".into()));
        }
        let l = self.lattice()?;
        let (masses, snaps) = node_masses(&l, &self.target)?;
        let tol = self.options.tol_mass_factor * l.cell_volume() * l.n_interior() as f64;
        let hmax = self.max_height(&l);
        if !(hmax > 0.0) {
            return Err(Error::InvalidInput("supporting plane does not lie below the boundary data".into()));
        }
        // {φ − ℓ_p < h} is an ellipsoid of volume ω (2h)^{n/2} / sqrt(det A)
        let n = self.domain.dim() as f64;
        let det = self.boundary.matrix().determinant();
        let guess = (0.5 * (mass * det.sqrt() / crate::omega(self.domain.dim())).powf(2.0 / n)).min(hmax);
        let (mut a, mut fa) = (0.0, f64::NAN);
        let (mut b, mut fb) = (f64::NAN, f64::NAN);
        let mut lo_sol: Option<ObstacleSolution> = None;
        let mut probe = guess;
        loop {
            let warm = lo_sol.as_ref().map(|s| s.solution.u.values[..l.n_interior()].to_vec());
            let s = self.run(&l, &masses, snaps.clone(), probe, warm.as_deref())?;
            let f = s.deficit - mass;
            if f.abs() <= tol {
                return Ok(s);
            }
            if f < 0.0 {
                if probe >= hmax {
                    log::info!("mass matching capped at the endpoint h = {hmax}");
                    let mut s = s;
                    s.endpoint_capped = true;
                    return Ok(s);
                }
                (a, fa) = (probe, f);
                lo_sol = Some(s);
                probe = if b.is_nan() { (2.0 * probe).max(1e-3 * hmax).min(hmax) } else { break };
            } else {
                (b, fb) = (probe, f);
                if lo_sol.is_some() {
                    break;
                }
                probe = 0.5 * probe;
                if probe <= 1e-12 * hmax.max(1.0) {
                    return Ok(s);
                }
            }
        }
        let mut lo_sol = lo_sol.expect("lower bracket");
        let mut side = 0i32;
        let mut best: Option<ObstacleSolution> = None;
        for step in 1..=60 {
            let c = (a * fb - b * fa) / (fb - fa);
            let c = if c > a && c < b { c } else { 0.5 * (a + b) };
            // solutions increase with h, so only the lower bracket is a safe start
            let warm = lo_sol.solution.u.values[..l.n_interior()].to_vec();
            let mut s = self.run(&l, &masses, snaps.clone(), c, Some(&warm))?;
            if !s.solution.report.converged {
                s = self.run(&l, &masses, snaps.clone(), c, None)?;
            }
            s.outer_steps = step;
            let fc = s.deficit - mass;
            if fc.abs() <= tol || (b - a) <= 1e-14 * hmax.max(1.0) {
                return Ok(s);
            }
            if fc < 0.0 {
                a = c;
                fa = fc;
                lo_sol = s.clone();
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = c;
                fb = fc;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
            best = Some(s);
        }
        let mut s = best.expect("at least one step");
        s.solution.report.converged = false;
        Ok(s)
    }
}

fn coincidence_set(l: &Lattice, contact: &[usize], height: f64) -> CoincidenceSet {
    let n = l.n();
    let mut flag = vec![false; l.len()];
    for &i in contact {
        flag[i] = true;
    }
    let mut layer = 0usize;
    for &i in contact {
        let mut edge = false;
        for k in 0..n {
            for s in [-1, 1] {
                let mut o = [0i64; 3];
                o[k] = s;
                if l.neighbor(i, o).is_none_or(|j| !flag[j]) {
                    edge = true;
                }
            }
        }
        if edge {
            layer += 1;
        }
    }
    CoincidenceSet {
        nodes: contact.to_vec(),
        volume: contact.len() as f64 * l.cell_volume(),
        boundary_layer: 0.5 * layer as f64 * l.cell_volume(),
        height,
    }
}

/// Obstacle planes ordered (`ℓ + h >= ℓ̃ + h̃ − tol`) and `w >= w̃ − tol` at every node.
pub fn obstacle_comparison(w: &ObstacleSolution, wt: &ObstacleSolution, tol: f64) -> Result<bool> {
    if w.u().len() != wt.u().len() {
        return Err(Error::InvalidInput("comparison needs matching node sets".into()));
    }
    if w.slope.iter().zip(&wt.slope).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs())) {
        return Err(Error::InvalidInput("comparison needs parallel obstacle planes".into()));
    }
    Ok(w.plane_at_origin >= wt.plane_at_origin - tol
        && w.u().values.iter().zip(&wt.u().values).all(|(a, b)| *a >= b - tol))
}
