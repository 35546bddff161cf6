use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use ma_sharp::dirichlet::{comparison_check, DirichletProblem, SolverOptions};
use ma_sharp::discrete::ma_measure;
use ma_sharp::lattice::{default_stencil_radius, ConvexNodalFunction, Lattice};
use ma_sharp::measure::{
    strict_convexity_criterion, Atom, DensityPatch, EllipsoidDomain, MeasureData, QuadraticAsymptote, Region,
    Sampling,
};
use ma_sharp::obstacle::{obstacle_comparison, ObstacleProblem};
use ma_sharp::radial::eval_w;
use ma_sharp::{log_gamma, Dimension};

fn ball_lattice(n: usize, radius: f64, h: f64) -> Arc<Lattice> {
    let d = EllipsoidDomain::ball(vec![0.0; n], radius).unwrap();
    Arc::new(Lattice::new(d, h, default_stencil_radius(n), 1_000_000).unwrap())
}

fn point(n: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, n)
}

prop_compose! {
    fn signed_measure(n: usize)(
        atoms in prop::collection::vec((point(n, 1.2), 0.01f64..0.5), 0..4),
        patches in prop::collection::vec((point(n, 1.0), 0.1f64..0.6, -1.0f64..2.0), 0..3),
    ) -> MeasureData {
        let mut mu = MeasureData::with_atoms(n, atoms.into_iter().map(|(y, mass)| Atom { y, mass }).collect());
        for (c, r, delta) in patches {
            mu.patches.push(DensityPatch { domain: EllipsoidDomain::ball(c, r).unwrap(), delta });
        }
        mu
    }
}

/// Symmetric positive definite 2×2 matrix with eigenvalue ratio at most `spread`.
fn spd2(angle: f64, ratio: f64) -> DMatrix<f64> {
    let (c, s) = (angle.cos(), angle.sin());
    let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![ratio.sqrt(), 1.0 / ratio.sqrt()]));
    &rot * d * rot.transpose()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_gamma_recurrence(x in 0.05f64..150.0) {
        let lhs = log_gamma(x + 1.0).unwrap();
        let rhs = log_gamma(x).unwrap() + x.ln();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn w_scaling_law(n in 3usize..6, a in 0.1f64..4.0, r in 0.0f64..40.0) {
        let d = Dimension::new(n).unwrap();
        let lhs = eval_w(d, a, r);
        let rhs = a * a * eval_w(d, 1.0, r / a);
        prop_assert!(close(lhs, rhs, 1e-10), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn total_variation_is_additive_and_monotone(
        mu in signed_measure(2),
        c in point(2, 0.5),
        r in 0.2f64..1.0,
        grow in 0.0f64..0.8,
    ) {
        let s = Sampling { spacing: 0.05, anchor: vec![0.0; 2] };
        let e = EllipsoidDomain::ball(c.clone(), r).unwrap();
        let big = EllipsoidDomain::ball(c, r + grow).unwrap();
        let all = mu.total_variation(Region::All, &s);
        let inside = mu.total_variation(Region::Inside(&e), &s);
        let outside = mu.total_variation(Region::Outside(&e), &s);
        prop_assert!(close(inside + outside, all, 1e-12));
        prop_assert!(inside <= mu.total_variation(Region::Inside(&big), &s) + 1e-14);
        prop_assert!(inside <= all + 1e-14);
    }

    #[test]
    fn restrict_keeps_the_variation_inside(mu in signed_measure(3), c in point(3, 0.5), r in 0.2f64..1.2) {
        let s = Sampling { spacing: 0.1, anchor: vec![0.0; 3] };
        let e = EllipsoidDomain::ball(c, r).unwrap();
        let kept = mu.restrict(&e);
        prop_assert_eq!(
            kept.total_variation(Region::Inside(&e), &s),
            mu.total_variation(Region::Inside(&e), &s)
        );
        prop_assert!(kept.total_variation(Region::Outside(&e), &s) == 0.0);
    }

    #[test]
    fn criterion_is_unimodular_invariant(
        ys in prop::collection::vec(point(3, 2.0), 2..5),
        masses in prop::collection::vec(0.01f64..1.0, 5),
        t in prop::collection::vec(-1.0f64..1.0, 9),
        angle in 0.0f64..6.3,
        ratio in 1.0f64..3.0,
    ) {
        let mut tm = DMatrix::from_row_slice(3, 3, &t) + DMatrix::<f64>::identity(3, 3) * 2.0;
        let det = tm.determinant();
        prop_assume!(det.abs() > 1e-3);
        if det < 0.0 {
            tm.row_mut(0).neg_mut();
        }
        let tm = &tm / tm.determinant().cbrt();
        let mut a = DMatrix::<f64>::identity(3, 3);
        a.view_mut((0, 0), (2, 2)).copy_from(&spd2(angle, ratio));
        let atoms: Vec<Atom> = ys.iter().zip(&masses).map(|(y, m)| Atom { y: y.clone(), mass: *m }).collect();
        let tinv = tm.clone().try_inverse().unwrap();
        let moved: Vec<Atom> = atoms
            .iter()
            .map(|x| Atom { y: (&tm * nalgebra::DVector::from_column_slice(&x.y)).as_slice().to_vec(), mass: x.mass })
            .collect();
        let at = tinv.transpose() * &a * &tinv;
        let (Ok(before), Ok(after)) = (strict_convexity_criterion(&atoms, &a), strict_convexity_criterion(&moved, &at))
        else {
            return Err(TestCaseError::reject("coincident atoms"));
        };
        prop_assert_eq!(before.satisfied, after.satisfied);
        prop_assert!(close(before.margin, after.margin, 1e-10), "{} vs {}", before.margin, after.margin);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cells_ignore_affine_addition(
        n in 2usize..4,
        apex in point(3, 0.3),
        cone in 0.05f64..0.3,
        b in point(3, 1.5),
        c in -1.0f64..1.0,
    ) {
        let l = ball_lattice(n, 0.6, if n == 2 { 1.0 / 16.0 } else { 0.125 });
        let u = ConvexNodalFunction::on_lattice(l.clone(), |x| {
            let r = x.iter().zip(&apex).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            0.5 * x.iter().map(|v| v * v).sum::<f64>() + cone * r
        });
        let base = ma_measure(&u).unwrap();
        let mut w = u.clone();
        for i in 0..l.len() {
            w.values[i] += l.position(i).iter().zip(&b).map(|(x, s)| x * s).sum::<f64>() + c;
        }
        if let Some(g) = w.gradient_box.as_mut() {
            for k in 0..n {
                g.lo[k] += b[k];
                g.hi[k] += b[k];
            }
        }
        let moved = ma_measure(&w).unwrap();
        for i in 0..l.n_interior() {
            prop_assert!((base.masses[i] - moved.masses[i]).abs() <= 1e-12, "node {}", i);
        }
    }

    #[test]
    fn raising_a_value_moves_mass_to_the_others(seed in 0usize..10_000, bump in 1e-4f64..1e-2) {
        let l = ball_lattice(2, 0.75, 0.125);
        let u = ConvexNodalFunction::from_quadratic(l.clone(), &QuadraticAsymptote::standard(2));
        let i = seed % l.n_interior();
        let base = ma_measure(&u).unwrap();
        let mut w = u.clone();
        w.values[i] += bump;
        let up = ma_measure(&w).unwrap();
        prop_assert!(up.masses[i] <= base.masses[i]);
        for j in 0..l.n_interior() {
            if j != i {
                prop_assert!(up.masses[j] >= base.masses[j] - 1e-15);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn dirichlet_solutions_are_ordered(
        atom in point(2, 0.5),
        mass in 0.05f64..0.4,
        centre in point(2, 0.4),
        radius in 0.2f64..0.4,
        depth in 0.2f64..0.9,
    ) {
        let base = DirichletProblem {
            domain: EllipsoidDomain::ball(vec![0.0; 2], 1.0).unwrap(),
            spacing: 0.125,
            boundary: QuadraticAsymptote::standard(2),
            target: MeasureData::lebesgue(2),
            options: SolverOptions::default(),
        };
        let l = base.lattice().unwrap();
        let plus = MeasureData::with_atoms(2, vec![Atom { y: atom, mass }]);
        let neg = DensityPatch { domain: EllipsoidDomain::ball(centre, radius).unwrap(), delta: -depth };
        let mut minus = MeasureData::lebesgue(2);
        minus.patches.push(neg.clone());
        let mut mixed = plus.clone();
        mixed.patches.push(neg);
        let solve = |mu: MeasureData| {
            let s = DirichletProblem { target: mu, ..base.clone() }.solve_on(l.clone(), None).unwrap();
            assert!(s.report.converged);
            s.u
        };
        let (up, u, um) = (solve(plus), solve(mixed), solve(minus));
        prop_assert!(comparison_check(&up, &u, 1e-9).unwrap());
        prop_assert!(comparison_check(&u, &um, 1e-9).unwrap());
    }

    #[test]
    fn obstacle_solutions_are_ordered(
        angle in 0.0f64..3.2,
        ratio in 1.0f64..1.8,
        lift in 0.0f64..0.15,
        p in point(2, 0.15),
        m in 0.1f64..0.5,
        shrink in 0.3f64..1.0,
    ) {
        let prob = |bnd: QuadraticAsymptote| ObstacleProblem {
            domain: EllipsoidDomain::new(spd2(angle, ratio), vec![0.0; 2], 1.0).unwrap(),
            spacing: 0.125,
            boundary: bnd,
            slope: p.clone(),
            target: MeasureData::lebesgue(2),
            options: SolverOptions::default(),
        };
        let phi = QuadraticAsymptote::standard(2);
        let w = prob(phi.with_constant(lift)).solve_mass_matched(m).unwrap();
        let wt = prob(phi).solve_mass_matched(m * shrink).unwrap();
        prop_assume!(!w.coincidence.nodes.is_empty() && w.deficit >= wt.deficit);
        prop_assert!(obstacle_comparison(&w, &wt, 1e-9).unwrap());
    }
}
