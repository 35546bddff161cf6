use std::f64::consts::PI;
use std::sync::Arc;

use ma_sharp::discrete::{
    chord_violation, convexify, detect_flat_segments, ma_measure, node_cell, section, CellSystem,
};
use ma_sharp::lattice::{ConvexNodalFunction, Lattice};
use ma_sharp::measure::{EllipsoidDomain, QuadraticAsymptote};
use ma_sharp::omega;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Volume of `{p : a_k·p <= c_k}` by vertex enumeration (independent of the clipping kernel).
fn brute_volume_3d(planes: &[([f64; 3], f64)]) -> f64 {
    let m = planes.len();
    let mut verts: Vec<[f64; 3]> = Vec::new();
    let scale = planes.iter().fold(1.0f64, |s, p| s.max(p.1.abs()));
    let tol = 1e-10 * scale;
    for a in 0..m {
        for b in a + 1..m {
            for c in b + 1..m {
                let (n1, n2, n3) = (planes[a].0, planes[b].0, planes[c].0);
                let det = n1[0] * (n2[1] * n3[2] - n2[2] * n3[1]) - n1[1] * (n2[0] * n3[2] - n2[2] * n3[0])
                    + n1[2] * (n2[0] * n3[1] - n2[1] * n3[0]);
                if det.abs() < 1e-12 {
                    continue;
                }
                let rhs = [planes[a].1, planes[b].1, planes[c].1];
                let solve = |col: usize| {
                    let mut mm = [n1, n2, n3];
                    for r in 0..3 {
                        mm[r][col] = rhs[r];
                    }
                    (mm[0][0] * (mm[1][1] * mm[2][2] - mm[1][2] * mm[2][1])
                        - mm[0][1] * (mm[1][0] * mm[2][2] - mm[1][2] * mm[2][0])
                        + mm[0][2] * (mm[1][0] * mm[2][1] - mm[1][1] * mm[2][0]))
                        / det
                };
                let p = [solve(0), solve(1), solve(2)];
                if planes.iter().all(|(nn, cc)| nn[0] * p[0] + nn[1] * p[1] + nn[2] * p[2] <= cc + tol) {
                    if !verts.iter().any(|v| (0..3).all(|k| (v[k] - p[k]).abs() < 1e-9 * scale)) {
                        verts.push(p);
                    }
                }
            }
        }
    }
    if verts.len() < 4 {
        return 0.0;
    }
    let ctr = verts.iter().fold([0.0; 3], |s, v| [s[0] + v[0], s[1] + v[1], s[2] + v[2]]);
    let ctr = [ctr[0] / verts.len() as f64, ctr[1] / verts.len() as f64, ctr[2] / verts.len() as f64];
    let mut vol = 0.0;
    let mut seen: Vec<[f64; 4]> = Vec::new();
    for (nn, cc) in planes {
        let len = (nn[0] * nn[0] + nn[1] * nn[1] + nn[2] * nn[2]).sqrt();
        let key = [nn[0] / len, nn[1] / len, nn[2] / len, cc / len];
        if seen.iter().any(|s| (0..4).all(|k| (s[k] - key[k]).abs() < 1e-12)) {
            continue;
        }
        seen.push(key);
        let on: Vec<[f64; 3]> = verts
            .iter()
            .copied()
            .filter(|p| (nn[0] * p[0] + nn[1] * p[1] + nn[2] * p[2] - cc).abs() <= tol * 10.0)
            .collect();
        if on.len() < 3 {
            continue;
        }
        let fc = on.iter().fold([0.0; 3], |s, v| [s[0] + v[0], s[1] + v[1], s[2] + v[2]]);
        let fc = [fc[0] / on.len() as f64, fc[1] / on.len() as f64, fc[2] / on.len() as f64];
        let u = [key[0], key[1], key[2]];
        // orthonormal frame in the face plane
        let t = if u[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let e1 = {
            let d = t[0] * u[0] + t[1] * u[1] + t[2] * u[2];
            let v = [t[0] - d * u[0], t[1] - d * u[1], t[2] - d * u[2]];
            let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / l, v[1] / l, v[2] / l]
        };
        let e2 = [u[1] * e1[2] - u[2] * e1[1], u[2] * e1[0] - u[0] * e1[2], u[0] * e1[1] - u[1] * e1[0]];
        let mut pts: Vec<(f64, f64)> = on
            .iter()
            .map(|p| {
                let d = [p[0] - fc[0], p[1] - fc[1], p[2] - fc[2]];
                (d[0] * e1[0] + d[1] * e1[1] + d[2] * e1[2], d[0] * e2[0] + d[1] * e2[1] + d[2] * e2[2])
            })
            .collect();
        pts.sort_by(|a, b| a.1.atan2(a.0).total_cmp(&b.1.atan2(b.0)));
        let mut area = 0.0;
        for k in 0..pts.len() {
            let (a, b) = (pts[k], pts[(k + 1) % pts.len()]);
            area += a.0 * b.1 - b.0 * a.1;
        }
        let area = 0.5 * area.abs();
        let h = key[3] - (u[0] * ctr[0] + u[1] * ctr[1] + u[2] * ctr[2]);
        vol += area * h / 3.0;
    }
    vol
}

fn brute_area_2d(planes: &[([f64; 3], f64)]) -> f64 {
    let m = planes.len();
    let scale = planes.iter().fold(1.0f64, |s, p| s.max(p.1.abs()));
    let tol = 1e-10 * scale;
    let mut verts: Vec<[f64; 2]> = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            let (n1, n2) = (planes[a].0, planes[b].0);
            let det = n1[0] * n2[1] - n1[1] * n2[0];
            if det.abs() < 1e-12 {
                continue;
            }
            let p = [
                (planes[a].1 * n2[1] - planes[b].1 * n1[1]) / det,
                (n1[0] * planes[b].1 - n2[0] * planes[a].1) / det,
            ];
            if planes.iter().all(|(nn, cc)| nn[0] * p[0] + nn[1] * p[1] <= cc + tol)
                && !verts.iter().any(|v| (v[0] - p[0]).abs() < 1e-9 * scale && (v[1] - p[1]).abs() < 1e-9 * scale)
            {
                verts.push(p);
            }
        }
    }
    if verts.len() < 3 {
        return 0.0;
    }
    let c = verts.iter().fold([0.0; 2], |s, v| [s[0] + v[0], s[1] + v[1]]);
    let c = [c[0] / verts.len() as f64, c[1] / verts.len() as f64];
    verts.sort_by(|a, b| (a[1] - c[1]).atan2(a[0] - c[0]).total_cmp(&(b[1] - c[1]).atan2(b[0] - c[0])));
    let mut s = 0.0;
    for k in 0..verts.len() {
        let (a, b) = (verts[k], verts[(k + 1) % verts.len()]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s.abs()
}

/// All-node halfspaces for the cell of node `i`, plus the gradient box for boundary nodes.
fn all_planes(u: &ConvexNodalFunction, i: usize, with_box: bool) -> Vec<([f64; 3], f64)> {
    let n = u.n();
    let xi = u.layout.position3(i);
    let mut planes = Vec::new();
    for j in 0..u.len() {
        if j == i {
            continue;
        }
        let xj = u.layout.position3(j);
        let d = [xj[0] - xi[0], xj[1] - xi[1], xj[2] - xi[2]];
        planes.push((d, u.values[j] - u.values[i]));
    }
    if with_box {
        let g = u.gradient_box.unwrap();
        for k in 0..n {
            let mut e = [0.0; 3];
            e[k] = 1.0;
            planes.push((e, g.hi[k]));
            e[k] = -1.0;
            planes.push((e, -g.lo[k]));
        }
    }
    planes
}

fn ball_lattice(n: usize, radius: f64, h: f64) -> Arc<Lattice> {
    let d = EllipsoidDomain::ball(vec![0.0; n], radius).unwrap();
    Arc::new(Lattice::new(d, h, ma_sharp::lattice::default_stencil_radius(n), 1_000_000).unwrap())
}

/// Convex test data: ½|x|² plus a cone and a max of random planes.
fn random_convex(l: &Arc<Lattice>, seed: u64) -> ConvexNodalFunction {
    let n = l.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planes: Vec<(Vec<f64>, f64)> =
        (0..4).map(|_| ((0..n).map(|_| rng.random_range(-0.6..0.6)).collect(), rng.random_range(-0.2..0.0))).collect();
    let apex: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
    let a = rng.random_range(0.05..0.3);
    let mut u = ConvexNodalFunction::from_quadratic(l.clone(), &QuadraticAsymptote::standard(n));
    for i in 0..l.len() {
        let x = l.position(i);
        let r = x.iter().zip(&apex).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let pl = planes.iter().map(|(g, c)| g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c).fold(0.0, f64::max);
        u.values[i] += a * r + pl;
    }
    u
}

#[test]
fn quadratic_cells_are_lattice_cubes_and_total_mass_is_conserved() {
    for (n, h) in [(2usize, 1.0 / 16.0), (3, 1.0 / 8.0)] {
        let l = ball_lattice(n, 1.0, h);
        let u = ConvexNodalFunction::from_quadratic(l.clone(), &QuadraticAsymptote::standard(n));
        let rep = ma_measure(&u).unwrap();
        let cell = h.powi(n as i32);
        for i in 0..l.n_interior() {
            assert!((rep.masses[i] - cell).abs() < 1e-12 * cell, "n={n} node {i}: {}", rep.masses[i]);
        }
        let lebesgue = l.n_interior() as f64 * cell;
        assert!((rep.interior_total - lebesgue).abs() < 1e-6 * lebesgue);
        let g = rep.gradient_box_volume.unwrap();
        assert!((rep.total - g).abs() < 1e-6 * g, "n={n}: total {} vs box {g}", rep.total);
    }
}

#[test]
fn exact_cells_match_brute_force_oracle() {
    for (n, seed) in [(3usize, 1u64), (3, 2), (2, 3), (2, 4)] {
        let l = if n == 3 { ball_lattice(3, 0.5, 0.25) } else { ball_lattice(2, 0.5, 0.125) };
        let u = random_convex(&l, seed);
        let rep = ma_measure(&u).unwrap();
        for i in 0..u.len() {
            let boundary = i >= l.n_interior();
            let planes = all_planes(&u, i, boundary);
            let want = if n == 3 { brute_volume_3d(&planes) } else { brute_area_2d(&planes) };
            let scale = want.max(1e-3);
            assert!(
                (rep.masses[i] - want).abs() <= 1e-9 * scale,
                "n={n} seed={seed} node {i} boundary={boundary}: {} vs {want}",
                rep.masses[i]
            );
        }
    }
}

#[test]
fn cone_cell_on_star_mesh() {
    // planar K-gon star: cell is the circumscribed K-gon, area K a² tan(π/K)
    let a = 0.7;
    for k in [6usize, 12, 64] {
        let mut pts = vec![vec![0.0, 0.0]];
        let mut vals = vec![0.0];
        let mut bnd = vec![false];
        for j in 0..k {
            let t = 2.0 * PI * j as f64 / k as f64;
            pts.push(vec![t.cos(), t.sin()]);
            vals.push(a);
            bnd.push(true);
        }
        let u = ConvexNodalFunction::explicit(2, pts, vals, bnd).unwrap();
        let v = node_cell(&u, 0).unwrap().volume();
        let exact = k as f64 * a * a * (PI / k as f64).tan();
        assert!((v - exact).abs() < 1e-10 * exact, "K={k}: {v} vs {exact}");
        assert!(v >= omega(2) * a * a);
    }
    // octahedral star in space: cell is the cube [-a, a]³
    let mut pts = vec![vec![0.0; 3]];
    let mut vals = vec![0.0];
    let mut bnd = vec![false];
    for k in 0..3 {
        for s in [-1.0, 1.0] {
            let mut x = vec![0.0; 3];
            x[k] = s;
            pts.push(x);
            vals.push(a);
            bnd.push(true);
        }
    }
    let u = ConvexNodalFunction::explicit(3, pts, vals, bnd).unwrap();
    assert!((node_cell(&u, 0).unwrap().volume() - 8.0 * a * a * a).abs() < 1e-12);
    // icosahedral star against the brute-force oracle
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut pts = vec![vec![0.0; 3]];
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            pts.push(vec![0.0, s1, s2 * phi]);
            pts.push(vec![s1, s2 * phi, 0.0]);
            pts.push(vec![s2 * phi, 0.0, s1]);
        }
    }
    let m = pts.len();
    let vals: Vec<f64> = pts.iter().map(|p| a * p.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let bnd = (0..m).map(|i| i > 0).collect();
    let u = ConvexNodalFunction::explicit(3, pts, vals, bnd).unwrap();
    let v = node_cell(&u, 0).unwrap().volume();
    let want = brute_volume_3d(&all_planes(&u, 0, false));
    assert!((v - want).abs() < 1e-10 * want, "{v} vs {want}");
    assert!(v > omega(3) * a * a * a);
}

#[test]
fn unbounded_cell_without_box_is_an_error() {
    let l = ball_lattice(2, 1.0, 0.25);
    let u = ConvexNodalFunction::on_lattice(l, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
    assert!(ma_measure(&u).unwrap().boundary_clipped == false);
    let u = ConvexNodalFunction::explicit(2, vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![0.0, 1.0], vec![false, true]).unwrap();
    assert!(ma_measure(&u).is_err());
}

#[test]
fn affine_addition_leaves_cells_unchanged() {
    let l = ball_lattice(3, 0.75, 0.125);
    let u = random_convex(&l, 7);
    let base = ma_measure(&u).unwrap();
    let b = [0.37, -1.21, 0.58];
    let mut w = u.clone();
    for i in 0..l.len() {
        let x = l.position(i);
        w.values[i] += b[0] * x[0] + b[1] * x[1] + b[2] * x[2] - 0.9;
    }
    if let Some(g) = w.gradient_box.as_mut() {
        for k in 0..3 {
            g.lo[k] += b[k];
            g.hi[k] += b[k];
        }
    }
    let moved = ma_measure(&w).unwrap();
    for i in 0..l.n_interior() {
        assert!((base.masses[i] - moved.masses[i]).abs() <= 1e-12, "node {i}");
    }
    let lin = ConvexNodalFunction::on_lattice(l.clone(), |x| 0.3 * x[0] - 2.0 * x[2] + 1.0);
    let rep = ma_measure(&lin).unwrap();
    assert!(rep.masses[..l.n_interior()].iter().all(|m| *m == 0.0));
}

#[test]
fn raising_one_value_shrinks_its_cell_and_grows_the_others() {
    let l = ball_lattice(3, 0.5, 0.125);
    let u = random_convex(&l, 11);
    let base = ma_measure(&u).unwrap();
    let i = l.nearest(&[0.0, 0.0, 0.0]).unwrap().0;
    let mut w = u.clone();
    w.values[i] += 0.002;
    let up = ma_measure(&w).unwrap();
    assert!(up.masses[i] <= base.masses[i]);
    for j in 0..l.n_interior() {
        if j != i {
            assert!(up.masses[j] >= base.masses[j] - 1e-15, "node {j}");
        }
    }
}

#[test]
fn local_lists_grow_to_the_exact_cells() {
    let l = ball_lattice(3, 0.5, 0.125);
    let u = random_convex(&l, 5);
    let mut sys = CellSystem::new(&u);
    let nodes: Vec<usize> = (0..l.n_interior()).collect();
    sys.refine(&u.values, &nodes).unwrap();
    assert_eq!(sys.refine(&u.values, &nodes).unwrap(), 0);
    let evals = sys.evaluate(&u.values, &nodes).unwrap();
    let rep = ma_measure(&u).unwrap();
    for (k, &i) in nodes.iter().enumerate() {
        assert!((evals[k].volume - rep.masses[i]).abs() < 1e-14);
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let l = ball_lattice(3, 0.5, 0.125);
    let u = random_convex(&l, 9);
    let mut sys = CellSystem::new(&u);
    let nodes: Vec<usize> = (0..l.n_interior()).collect();
    sys.refine(&u.values, &nodes).unwrap();
    let i = l.nearest(&[0.125, 0.0, 0.0]).unwrap().0;
    let ev = &sys.evaluate(&u.values, &[i]).unwrap()[0];
    let eps = 1e-7;
    for &(j, c) in ev.couplings.iter().take(6) {
        let mut v = u.values.clone();
        v[j] += eps;
        let plus = sys.evaluate(&v, &[i]).unwrap()[0].volume;
        v[j] -= 2.0 * eps;
        let minus = sys.evaluate(&v, &[i]).unwrap()[0].volume;
        let fd = (plus - minus) / (2.0 * eps);
        assert!((fd - c).abs() < 1e-5 * c.abs().max(1e-3), "j={j}: {fd} vs {c}");
    }
    let mut v = u.values.clone();
    v[i] += eps;
    let plus = sys.evaluate(&v, &[i]).unwrap()[0].volume;
    v[i] -= 2.0 * eps;
    let minus = sys.evaluate(&v, &[i]).unwrap()[0].volume;
    let fd = (plus - minus) / (2.0 * eps);
    assert!((fd - ev.diagonal()).abs() < 1e-5 * ev.diagonal().abs());
}

#[test]
fn convexify_behaviour() {
    let l = ball_lattice(2, 1.0, 0.125);
    let q = ConvexNodalFunction::from_quadratic(l.clone(), &QuadraticAsymptote::standard(2));
    let (same, _) = convexify(&q).unwrap();
    assert_eq!(same.values, q.values);

    let i = l.nearest(&[0.25, 0.0]).unwrap().0;
    let mut bumped = q.clone();
    bumped.values[i] += 0.5;
    let (fixed, _) = convexify(&bumped).unwrap();
    let h = l.spacing();
    for j in 0..l.len() {
        if j == i {
            // lowered onto the axis chord of its neighbours
            assert!((fixed.values[j] - (q.values[j] + 0.5 * h * h)).abs() < 1e-12);
        } else {
            assert_eq!(fixed.values[j], q.values[j]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut noisy = q.clone();
    for i in 0..l.n_interior() {
        noisy.values[i] += rng.random_range(-0.05..0.05);
    }
    let (c1, _) = convexify(&noisy).unwrap();
    assert!(chord_violation(&c1).unwrap() <= 1e-12);
    let (c2, _) = convexify(&c1).unwrap();
    assert_eq!(c1.values, c2.values);
}

#[test]
fn quadratic_sections_are_balls() {
    let n = 3;
    let h = 1.0 / 16.0;
    let l = ball_lattice(n, 1.6, h);
    let u = ConvexNodalFunction::from_quadratic(l.clone(), &QuadraticAsymptote::standard(n));
    let o = l.nearest(&[0.0; 3]).unwrap().0;
    let s = section(&u, o, 1.0).unwrap();
    let exact = omega(3) * 2f64.powf(1.5);
    assert!((s.volume - exact).abs() < 0.02 * exact, "{} vs {exact}", s.volume);
    let tiny = section(&u, o, 1e-6).unwrap();
    assert_eq!(tiny.nodes, vec![o]);
}

#[test]
fn flat_segment_detection() {
    let h = 1.0 / 8.0;
    let l = ball_lattice(3, 2.0, h);
    let q = ConvexNodalFunction::from_quadratic(l.clone(), &QuadraticAsymptote::standard(3));
    assert!(detect_flat_segments(&q, h * h / 10.0, 3).unwrap().is_empty());

    let trough = ConvexNodalFunction::on_lattice(l.clone(), |x| {
        (x[0].abs() - 1.0).max(0.0).powi(2) + x[1] * x[1] + x[2] * x[2]
    });
    let segs = detect_flat_segments(&trough, h * h / 10.0, 3).unwrap();
    // flat along every line parallel to the x₁-axis, for |x₁| <= 1
    assert!(!segs.is_empty());
    for s in &segs {
        assert_eq!(s.direction, [1, 0, 0]);
        for &i in &s.nodes {
            assert!(l.position(i)[0].abs() <= 1.0 + 1e-12);
        }
    }
    let axis = segs
        .iter()
        .find(|s| s.nodes.iter().all(|&i| l.position(i)[1] == 0.0 && l.position(i)[2] == 0.0))
        .expect("segment on the axis");
    assert!((axis.length - 2.0).abs() < 1e-12);

    let affine = ConvexNodalFunction::on_lattice(l.clone(), |x| x[0] - x[2]);
    let segs = detect_flat_segments(&affine, h * h / 10.0, 3).unwrap();
    let longest = segs.iter().filter(|s| s.direction == [1, 0, 0]).map(|s| s.length).fold(0.0, f64::max);
    assert!(longest >= 4.0 - 1e-12);
}
