use ma_sharp::dirichlet::SolverOptions;
use ma_sharp::measure::{EllipsoidDomain, MeasureData, QuadraticAsymptote};
use ma_sharp::obstacle::{obstacle_comparison, ObstacleProblem};
use ma_sharp::radial::eval_w_star;
use ma_sharp::{omega, Dimension};

fn problem(n: usize, radius: f64, h: f64) -> ObstacleProblem {
    ObstacleProblem {
        domain: EllipsoidDomain::ball(vec![0.0; n], radius).unwrap(),
        spacing: h,
        boundary: QuadraticAsymptote::standard(n),
        slope: vec![0.0; n],
        target: MeasureData::lebesgue(n),
        options: SolverOptions::default(),
    }
}

#[test]
fn mass_matched_obstacle_follows_the_radial_profile() {
    let (n, big_r, h, a) = (3usize, 4.0, 0.25, 1.0);
    let dim = Dimension::new(n).unwrap();
    let p = problem(n, big_r, h);
    let s = p.solve_mass_matched(omega(n) * a * a * a).unwrap();
    assert!(s.solution.report.converged && !s.endpoint_capped);
    let c = 0.5 * big_r * big_r - eval_w_star(dim, a, big_r);
    let l = s.solution.lattice().clone();
    let mut gap = 0.0f64;
    for i in 0..l.len() {
        let x = l.position(i);
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        gap = gap.max((s.u().values[i] - c - eval_w_star(dim, a, r)).abs());
    }
    assert!(gap <= 10.0 * h * h, "gap {gap}");
    assert!((s.height - c).abs() <= 10.0 * h * h);
}

#[test]
fn coincidence_volume_matches_the_removed_mass() {
    let (n, h, a) = (3usize, 0.125, 0.75);
    let p = problem(n, 1.25, h);
    let mass = omega(n) * a * a * a;
    let s = p.solve_mass_matched(mass).unwrap();
    let layer = 4.0 * std::f64::consts::PI * a * a * h;
    assert!((s.coincidence.volume - mass).abs() <= layer, "{} vs {mass}", s.coincidence.volume);
    assert!((s.deficit - mass).abs() <= 1e-6);
}

#[test]
fn higher_obstacle_lies_above() {
    let p = problem(2, 1.0, 0.0625);
    let lo = p.solve_fixed_height(0.1).unwrap();
    let hi = p.solve_fixed_height(0.3).unwrap();
    assert!(obstacle_comparison(&hi, &lo, 1e-9).unwrap());
    assert!(hi.coincidence.volume >= lo.coincidence.volume);
    assert!(p.solve_fixed_height(0.6).is_err());
}
