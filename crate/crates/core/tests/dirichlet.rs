use ma_sharp::dirichlet::{comparison_check, DirichletProblem, Method, SolverOptions};
use ma_sharp::measure::{Atom, EllipsoidDomain, MeasureData, QuadraticAsymptote};
use ma_sharp::dn0;

fn problem(radius: f64, h: f64, target: MeasureData) -> DirichletProblem {
    DirichletProblem {
        domain: EllipsoidDomain::ball(vec![0.0; 3], radius).unwrap(),
        spacing: h,
        boundary: QuadraticAsymptote::standard(3),
        target,
        options: SolverOptions::default(),
    }
}

#[test]
fn lebesgue_target_returns_the_quadratic() {
    let p = problem(1.0, 0.125, MeasureData::lebesgue(3));
    let s = p.solve().unwrap().into_result().unwrap();
    let l = s.lattice().clone();
    let h = 0.125;
    for i in 0..l.len() {
        let x = l.position(i);
        let q = 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
        assert!((s.u.values[i] - q).abs() <= 5.0 * h * h);
    }
}

#[test]
fn atom_lowers_the_center_within_the_sharp_window() {
    let a = 0.5;
    let p = problem(1.5, 0.125, MeasureData::with_atoms(3, vec![Atom::with_radius(vec![0.0; 3], a)]));
    let s = p.solve().unwrap().into_result().unwrap();
    let u0 = s.u.value_near(&[0.0; 3]).unwrap();
    let d = dn0(3).unwrap();
    assert!(u0 <= 0.0 && u0 >= -d * a * a);
    let plain = problem(1.5, 0.125, MeasureData::lebesgue(3)).solve().unwrap();
    assert!(comparison_check(&s.u, &plain.u, 1e-9).unwrap());
}

#[test]
fn jacobi_matches_newton_on_a_small_instance() {
    let a = 0.2;
    let mut p = problem(0.5, 0.125, MeasureData::with_atoms(3, vec![Atom::with_radius(vec![0.0; 3], a)]));
    let newton = p.solve().unwrap().into_result().unwrap();
    p.options.method = Method::Jacobi;
    p.options.tol_mass_factor = 1e-6;
    p.options.tol_change = 1e-8;
    let jac = p.solve().unwrap().into_result().unwrap();
    let gap = newton.u.values.iter().zip(&jac.u.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-6, "{gap:e}");
}

#[test]
fn different_starting_guesses_reach_the_same_solution() {
    let (radius, h) = (1.0, 0.125);
    let mut mu = MeasureData::with_atoms(3, vec![Atom { y: vec![0.25, -0.125, 0.0], mass: 0.2 }]);
    mu.patches.push(ma_sharp::measure::DensityPatch {
        domain: EllipsoidDomain::ball(vec![-0.25, 0.25, 0.125], 0.3).unwrap(),
        delta: -0.5,
    });
    let p = problem(radius, h, mu);
    let l = p.lattice().unwrap();
    // convex guesses matching the data on the boundary sphere, with different curvature
    let guess = |t: f64| -> Vec<f64> {
        (0..l.n_interior())
            .map(|i| {
                let r2: f64 = l.position(i).iter().map(|v| v * v).sum();
                0.5 * r2 + t * (r2 - radius * radius)
            })
            .collect()
    };
    let a = p.solve_on(l.clone(), Some(&guess(0.2))).unwrap().into_result().unwrap();
    let b = p.solve_on(l.clone(), Some(&guess(1.5))).unwrap().into_result().unwrap();
    let tol = 10.0 * a.report.tol_mass;
    let gap = a.u.values.iter().zip(&b.u.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap <= tol.max(1e-9), "{gap:e}");
}
