//! Frozen high-precision reference values (40-digit arithmetic, computed
//! independently of this crate) and slow in-test oracles.

use ma_sharp::quadrature::integrate;
use ma_sharp::radial::{
    asymptote_gap, eval_w, eval_w_star, excess, legendre_transform, solve_radial, RadialMass, RadialProfile,
};
use ma_sharp::{dn0, log_gamma, omega, Dimension};

const LN_GAMMA: [(f64, f64); 6] = [
    (1.0 / 3.0, 0.985_420_646_927_767_069_187_17),
    (0.1, 2.252_712_651_734_205_959_869_7),
    (2.5, 0.284_682_870_472_919_159_632_49),
    (7.3, 7.147_892_523_022_249_032_777_1),
    (100.0, 359.134_205_369_575_398_776_04),
    (0.5, 0.572_364_942_924_700_087_071_71),
];

const SHARP: [(usize, f64); 8] = [
    (3, 0.883_319_375_142_724_978_656_84),
    (4, 0.655_514_388_573_029_952_616_21),
    (5, 0.587_225_080_310_290_539_485_16),
    (6, 0.556_456_337_261_152_692_281_00),
    (7, 0.539_721_026_471_557_939_610_20),
    (8, 0.529_539_180_986_965_797_126_26),
    (9, 0.522_859_056_773_167_273_473_62),
    (10, 0.518_229_967_180_306_470_439_17),
];

fn dim(n: usize) -> Dimension {
    Dimension::new(n).unwrap()
}

/// Stirling series after shifting the argument above 25.
fn ln_gamma_stirling(x: f64) -> f64 {
    let mut shift = 0.0;
    let mut y = x;
    while y < 25.0 {
        shift += y.ln();
        y += 1.0;
    }
    let b = [1.0 / 12.0, -1.0 / 360.0, 1.0 / 1260.0, -1.0 / 1680.0, 1.0 / 1188.0];
    let mut s = (y - 0.5) * y.ln() - y + 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut p = y;
    for c in b {
        s += c / p;
        p *= y * y;
    }
    s - shift
}

#[test]
fn log_gamma_matches_frozen_values() {
    for (x, want) in LN_GAMMA {
        let got = log_gamma(x).unwrap();
        assert!(((got - want) / want).abs() < 1e-13, "x={x}: {got} vs {want}");
    }
}

#[test]
fn log_gamma_relative_error_on_range() {
    let mut x = 0.1;
    while x <= 100.0 {
        let got = log_gamma(x).unwrap();
        let want = ln_gamma_stirling(x);
        // the shifted series loses ~1e-14 absolute to cancellation, so it only
        // certifies relative accuracy away from the zeros at 1 and 2
        if want.abs() > 0.2 {
            assert!(((got - want) / want).abs() < 1e-12, "x={x}: {got} vs {want}");
        }
        x += 0.0137;
    }
    for (x, want) in NEAR_ZEROS {
        let got = log_gamma(x).unwrap();
        assert!(((got - want) / want).abs() < 1e-12, "x={x}: {got} vs {want}");
    }
}

const NEAR_ZEROS: [(f64, f64); 16] = [
    (0.75, 0.203280951431295371481433),
    (0.8, 0.1520596783998375887782926),
    (0.9, 0.06637623973474297118871674),
    (0.9768, 0.01383917131932786199741002),
    (0.99, 0.005854806764709776179306575),
    (1.01, -0.005690307946069645522037498),
    (1.1, -0.04987244125983972414828981),
    (1.25, -0.0982718364218131614638538),
    (1.5, -0.1207822376352452223455184),
    (1.75, -0.08440112102048555595778603),
    (1.9, -0.03898427592308333003878424),
    (1.99, -0.004195529088791665004242283),
    (2.01, 0.004260022907098437326177859),
    (2.1, 0.04543773854448513589566231),
    (2.25, 0.1248717148923965943024413),
    (3.0, 0.6931471805599453094172321),
];

#[test]
fn log_gamma_recurrence() {
    let mut x = 0.1;
    while x < 99.0 {
        let lhs = log_gamma(x + 1.0).unwrap();
        let rhs = log_gamma(x).unwrap() + x.ln();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "x={x}");
        x += 0.173;
    }
}

#[test]
fn sharp_constants_match_frozen_values() {
    for (n, want) in SHARP {
        let got = dn0(n).unwrap();
        assert!(((got - want) / want).abs() < 1e-13, "n={n}: {got}");
    }
}

#[test]
fn sharp_constant_is_positive_and_decreasing() {
    let v: Vec<f64> = (3..=10).map(|n| dn0(n).unwrap()).collect();
    assert!(v.iter().all(|&d| d > 0.0));
    assert!(v.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn sharp_constant_equals_improper_integral() {
    for n in [3, 4, 5, 6, 8] {
        let head = integrate(|s| excess(n, 1.0, s), 0.0, 1e3, 1e-15, 1e-15).value;
        // the integrand is s^{1-n}/n + O(s^{1-2n}) beyond 1e3
        let tail = 1e3f64.powi(2 - n as i32) / (n as f64 * (n as f64 - 2.0));
        let d = dn0(n).unwrap();
        assert!(((head + tail - d) / d).abs() < 1e-8, "n={n}");
    }
}

#[test]
fn w_values_match_frozen_values() {
    let cases = [
        (3, 1.0, 2.0, 2.718_323_682_323_761_764_0),
        (3, 2.0, 3.0, 7.164_517_207_562_663_877_8),
        (4, 1.0, 3.0, 5.141_646_841_098_356_765_2),
        (3, 1.0, 50.0, 1_250.876_652_712_920_491_469_0),
    ];
    for (n, a, r, want) in cases {
        assert!((eval_w(dim(n), a, r) - want).abs() < 1e-10, "W n={n} a={a} r={r}");
    }
    assert!((eval_w_star(dim(3), 1.0, 2.0) - 1.285_156_622_565_589_958_1).abs() < 1e-10);
    assert!((eval_w_star(dim(3), 1.0, 1.5) - 0.469_992_033_276_277_261_85).abs() < 1e-10);
}

#[test]
fn gap_at_50_and_200() {
    let d = dn0(3).unwrap();
    let g50 = asymptote_gap(dim(3), 1.0, 50.0);
    assert!((g50 - 0.876_652_712_920_491_469_00).abs() < 1e-11);
    let delta = d - g50;
    assert!(delta > 0.0 && delta < 0.01);
    let g200 = asymptote_gap(dim(3), 1.0, 200.0);
    assert!((g200 - 0.881_652_708_493_419_422_41).abs() < 1e-11);
}

#[test]
fn scaling_identity() {
    for r in [0.3, 1.0, 4.0, 17.0, 60.0] {
        let lhs = asymptote_gap(dim(3), 2.0, r);
        let rhs = 4.0 * asymptote_gap(dim(3), 1.0, r / 2.0);
        assert!((lhs - rhs).abs() < 1e-10, "r={r}");
    }
}

#[test]
fn decay_exponent_of_gap() {
    for n in [3usize, 4, 5] {
        let d = dn0(n).unwrap();
        let rs: Vec<f64> = (0..40).map(|i| 10.0 * 20f64.powf(i as f64 / 39.0)).collect();
        let pts: Vec<(f64, f64)> = rs
            .iter()
            .map(|&r| (r.ln(), (d - asymptote_gap(dim(n), 1.0, r)).abs().ln()))
            .collect();
        let slope = ls_slope(&pts);
        let want = 2.0 - n as f64;
        assert!(((slope - want) / want).abs() < 0.02, "n={n} slope={slope}");
    }
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn radial_solver_exact_on_canonical_masses() {
    let n = dim(3);
    for a in [0.5, 1.0] {
        let sol = solve_radial(&RadialMass::dirac(n, a), 10_000, 20.0).unwrap();
        let p = &sol.profile;
        for i in (0..p.radii.len()).step_by(37) {
            assert!((p.values[i] - eval_w(n, a, p.radii[i])).abs() < 1e-6);
        }
        let c = sol.asymptote.unwrap();
        assert!((c - dn0(3).unwrap() * a * a).abs() < 1e-9);

        let sol = solve_radial(&RadialMass::obstacle(n, a), 10_000, 20.0).unwrap();
        let p = &sol.profile;
        for i in (0..p.radii.len()).step_by(37) {
            assert!((p.values[i] - eval_w_star(n, a, p.radii[i])).abs() < 1e-6);
        }
        assert!((sol.asymptote.unwrap() + dn0(3).unwrap() * a * a).abs() < 1e-9);
    }
    let sol = solve_radial(&RadialMass::lebesgue(n), 10_000, 5.0).unwrap();
    for (r, g) in sol.profile.radii.iter().zip(&sol.profile.values) {
        assert!((g - 0.5 * r * r).abs() < 1e-12);
    }
}

#[test]
fn tabulated_mass_converges_second_order() {
    let n = dim(3);
    let err = |k: usize| {
        let radii: Vec<f64> = (0..=k).map(|i| 3.0 * i as f64 / k as f64).collect();
        let mass: Vec<f64> = radii.iter().map(|r| omega(3) * (r.powi(3) + 1.0)).collect();
        let m = RadialMass::Tabulated { n, radii, mass };
        let sol = solve_radial(&m, k, 3.0).unwrap();
        let p = &sol.profile;
        let i = p.radii.len() - 1;
        (p.values[i] - eval_w(n, 1.0, p.radii[i])).abs()
    };
    let (e1, e2) = (err(100), err(200));
    let order = (e1 / e2).log2();
    assert!(order > 1.7, "order {order}");
}

#[test]
fn legendre_of_quadratic_is_quadratic() {
    let n = dim(3);
    let radii: Vec<f64> = (0..=200).map(|i| i as f64 * 0.02).collect();
    let p = RadialProfile {
        n,
        values: radii.iter().map(|r| 0.5 * r * r).collect(),
        slopes: radii.clone(),
        radii,
    };
    let q = legendre_transform(&p).unwrap();
    for (s, v) in q.radii.iter().zip(&q.values) {
        assert!((v - 0.5 * s * s).abs() < 1e-12);
    }
}

#[test]
fn legendre_duality_between_w_and_w_star() {
    let n = dim(3);
    let sol = solve_radial(&RadialMass::dirac(n, 1.0), 4000, 8.0).unwrap();
    let dual = legendre_transform(&sol.profile).unwrap();
    let tol = 2.0 * sol.profile.grid_modulus();
    for (s, v) in dual.radii.iter().zip(&dual.values) {
        assert!((v - eval_w_star(n, 1.0, *s)).abs() <= tol, "s={s}");
    }
    // coincidence plateau {W_1* = 0} has radius 1
    assert_eq!(dual.values[0], 0.0);
    assert!((dual.radii[1] - 1.0).abs() < 1e-12);

    let back = legendre_transform(&dual).unwrap();
    for (r, v) in back.radii.iter().zip(&back.values) {
        assert!((v - eval_w(n, 1.0, *r)).abs() < 1e-8, "r={r}");
    }
    // the cone slope W_1'(0) = 1 reappears just right of the origin
    assert!((back.slopes[1] - 1.0).abs() < 1e-6);
}

#[test]
fn profile_json_and_csv_round_trip() {
    let sol = solve_radial(&RadialMass::dirac(dim(3), 1.0), 50, 4.0).unwrap();
    let s = sol.profile.to_json().unwrap();
    let back = RadialProfile::from_json(&s).unwrap();
    assert_eq!(back, sol.profile);
    let mut buf = Vec::new();
    sol.profile.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("r,g,dg\n"));
    assert_eq!(text.lines().count(), sol.profile.radii.len() + 1);
}
