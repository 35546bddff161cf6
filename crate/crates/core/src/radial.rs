//! Radial Monge–Ampère problems and the extremal profiles `W_a`, `W_a*`.
//!
//! For radial data `u(x) = g(|x|)` the subgradient image of the ball of radius
//! `r` is the ball of radius `g'(r)`, so `ω_n g'(r)^n = M(r)` where `M` is the
//! cumulative mass of the target measure.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate;
use crate::specialfn::{omega, Dimension};

/// Generalized binomial coefficient `binom(alpha, k)`.
fn binom(alpha: f64, k: usize) -> f64 {
    let mut c = 1.0;
    for j in 0..k {
        c *= (alpha - j as f64) / (j as f64 + 1.0);
    }
    c
}

/// `∫_r^∞ s((1 + c/s^n)^{1/n} − 1) ds` by its convergent series; needs `|c| < r^n`.
pub fn tail_excess(n: usize, c: f64, r: f64) -> f64 {
    let nf = n as f64;
    debug_assert!(n >= 3);
    let x = c / r.powi(n as i32);
    debug_assert!(x.abs() < 1.0);
    let mut sum = 0.0;
    let mut xk = 1.0;
    for k in 1..200 {
        xk *= x;
        let term = binom(1.0 / nf, k) * xk * r * r / (nf * k as f64 - 2.0);
        sum += term;
        if term.abs() <= 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// `(s^n + a^n)^{1/n} − s` without cancellation.
pub fn excess(n: usize, a: f64, s: f64) -> f64 {
    if s <= a {
        (s.powi(n as i32) + a.powi(n as i32)).powf(1.0 / n as f64) - s
    } else {
        s * ((a / s).powi(n as i32).ln_1p() / n as f64).exp_m1()
    }
}

/// `W_a'(r) = (r^n + a^n)^{1/n}`.
pub fn w_slope(n: usize, a: f64, r: f64) -> f64 {
    r + excess(n, a, r)
}

/// `W_a*'(r) = max(r^n − a^n, 0)^{1/n}`.
pub fn w_star_slope(n: usize, a: f64, r: f64) -> f64 {
    if r <= a {
        0.0
    } else {
        r * ((-(a / r).powi(n as i32)).ln_1p() / n as f64).exp()
    }
}

const ABS_TOL: f64 = 1e-14;

/// `∫_0^r ((s^n + a^n)^{1/n} − s) ds`, i.e. `W_a(r) − r²/2`.
pub fn excess_integral(n: usize, a: f64, r: f64) -> f64 {
    if a == 0.0 || r == 0.0 {
        return 0.0;
    }
    let scale = a * a;
    let r0 = 10.0 * a;
    if r <= r0 || n < 3 {
        return integrate(|s| excess(n, a, s), 0.0, r, ABS_TOL * scale, 1e-15).value;
    }
    let head = integrate(|s| excess(n, a, s), 0.0, r0, ABS_TOL * scale, 1e-15).value;
    let c = a.powi(n as i32);
    head + tail_excess(n, c, r0) - tail_excess(n, c, r)
}

/// `W_a(r) = ∫_0^r (s^n + a^n)^{1/n} ds`.
pub fn eval_w(n: Dimension, a: f64, r: f64) -> f64 {
    assert!(a >= 0.0 && r >= 0.0, "eval_w requires a >= 0 and r >= 0");
    0.5 * r * r + excess_integral(n.get(), a, r)
}

/// `W_a*(r) = ∫_0^r max(s^n − a^n, 0)^{1/n} ds`.
pub fn eval_w_star(n: Dimension, a: f64, r: f64) -> f64 {
    assert!(a >= 0.0 && r >= 0.0, "eval_w_star requires a >= 0 and r >= 0");
    let nn = n.get();
    if a == 0.0 {
        return 0.5 * r * r;
    }
    if r <= a {
        return 0.0;
    }
    let r0 = 10.0 * a;
    if r <= r0 || nn < 3 {
        return w_star_head(nn, a, r);
    }
    // r²/2 − W* = ∫_0^r (s − W*'(s)) ds, split at r0 with the series tail.
    let d0 = 0.5 * r0 * r0 - w_star_head(nn, a, r0);
    let c = -a.powi(nn as i32);
    let deficit = d0 - tail_excess(nn, c, r0) + tail_excess(nn, c, r);
    0.5 * r * r - deficit
}

/// `W_a*(r)` for `r > a` by the substitution `s = a + t^n`, which removes the
/// derivative singularity at `s = a`.
fn w_star_head(n: usize, a: f64, r: f64) -> f64 {
    let nf = n as f64;
    let t_max = (r - a).powf(1.0 / nf);
    let f = |t: f64| {
        let s = a + t.powi(n as i32);
        // (s^n − a^n)/t^n = Σ_j s^{n−1−j} a^j
        let mut poly = 0.0;
        for j in 0..n {
            poly += s.powi((n - 1 - j) as i32) * a.powi(j as i32);
        }
        nf * t.powi(n as i32) * poly.powf(1.0 / nf)
    };
    integrate(f, 0.0, t_max, ABS_TOL * a * a, 1e-15).value
}

/// `W_a(r) − r²/2`; tends to `d_{n,0} a²`.
pub fn asymptote_gap(n: Dimension, a: f64, r: f64) -> f64 {
    assert!(a >= 0.0 && r > 0.0, "asymptote_gap requires a >= 0 and r > 0");
    excess_integral(n.get(), a, r)
}

/// Cumulative radial mass `M(r)` of `𝓛 + μ` on balls centered at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadialMass {
    /// Point mass `atom` at the origin plus a density that equals `densities[j]`
    /// on `breaks[j] <= |x| < breaks[j+1]` (the last shell is unbounded).
    Piecewise {
        n: Dimension,
        atom: f64,
        breaks: Vec<f64>,
        densities: Vec<f64>,
    },
    /// Samples of `M` on increasing radii starting at 0; linearly interpolated.
    Tabulated {
        n: Dimension,
        radii: Vec<f64>,
        mass: Vec<f64>,
    },
}

impl RadialMass {
    /// Lebesgue measure.
    pub fn lebesgue(n: Dimension) -> Self {
        Self::Piecewise { n, atom: 0.0, breaks: vec![0.0], densities: vec![1.0] }
    }

    /// Lebesgue plus a Dirac of mass `ω_n a^n` at the origin.
    pub fn dirac(n: Dimension, a: f64) -> Self {
        Self::Piecewise {
            n,
            atom: omega(n.get()) * a.powi(n.get() as i32),
            breaks: vec![0.0],
            densities: vec![1.0],
        }
    }

    /// Lebesgue with the ball of radius `a` removed (the `W_a*` data).
    pub fn obstacle(n: Dimension, a: f64) -> Self {
        if a == 0.0 {
            return Self::lebesgue(n);
        }
        Self::Piecewise { n, atom: 0.0, breaks: vec![0.0, a], densities: vec![0.0, 1.0] }
    }

    pub fn n(&self) -> Dimension {
        match self {
            Self::Piecewise { n, .. } | Self::Tabulated { n, .. } => *n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Piecewise { atom, breaks, densities, .. } => {
                if !(*atom >= 0.0) || !atom.is_finite() {
                    return Err(Error::InvalidInput(format!("atom mass must be >= 0, got {atom}")));
                }
                if breaks.is_empty() || breaks[0] != 0.0 || breaks.len() != densities.len() {
                    return Err(Error::InvalidInput(
                        "breaks must start at 0 and match densities in length".into(),
                    ));
                }
                if breaks.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidInput("breaks must be strictly increasing".into()));
                }
                if densities.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
                    return Err(Error::InvalidInput(
                        "densities must be finite and >= 0 (mass would be nonmonotone)".into(),
                    ));
                }
                Ok(())
            }
            Self::Tabulated { radii, mass, .. } => {
                if radii.len() < 2 || radii.len() != mass.len() || radii[0] != 0.0 {
                    return Err(Error::InvalidInput(
                        "tabulated mass needs >= 2 samples starting at r = 0".into(),
                    ));
                }
                if radii.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidInput("radii must be strictly increasing".into()));
                }
                if mass[0] < 0.0 || mass.iter().any(|m| !m.is_finite()) {
                    return Err(Error::InvalidInput("mass must be finite and M(0) >= 0".into()));
                }
                if mass.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::InvalidInput("mass M(r) must be nondecreasing".into()));
                }
                Ok(())
            }
        }
    }

    /// `M(r)`.
    pub fn mass_at(&self, r: f64) -> f64 {
        match self {
            Self::Piecewise { n, atom, breaks, densities } => {
                let k = n.get() as i32;
                let mut m = *atom;
                for (j, (&b, &rho)) in breaks.iter().zip(densities).enumerate() {
                    if r <= b {
                        break;
                    }
                    let hi = breaks.get(j + 1).map_or(r, |&e| e.min(r));
                    m += omega(n.get()) * rho * (hi.powi(k) - b.powi(k));
                }
                m
            }
            Self::Tabulated { radii, mass, .. } => {
                let i = radii.partition_point(|&x| x <= r);
                if i == 0 {
                    mass[0]
                } else if i >= radii.len() {
                    mass[radii.len() - 1]
                } else {
                    let t = (r - radii[i - 1]) / (radii[i] - radii[i - 1]);
                    mass[i - 1] + t * (mass[i] - mass[i - 1])
                }
            }
        }
    }

    /// Slope `g'(r) = (M(r)/ω_n)^{1/n}`.
    pub fn slope_at(&self, r: f64) -> f64 {
        let n = self.n().get();
        (self.mass_at(r) / omega(n)).max(0.0).powf(1.0 / n as f64)
    }

    /// `M(r)/ω_n − r^n` for `r` beyond the last break, when the outer density is 1.
    pub fn asymptotic_excess(&self) -> Option<f64> {
        match self {
            Self::Piecewise { n, atom, breaks, densities } => {
                if *densities.last()? != 1.0 {
                    return None;
                }
                let k = n.get() as i32;
                let mut c = atom / omega(n.get());
                for j in 0..breaks.len() - 1 {
                    c += (densities[j] - 1.0) * (breaks[j + 1].powi(k) - breaks[j].powi(k));
                }
                Some(c)
            }
            Self::Tabulated { .. } => None,
        }
    }

    /// Natural length scale used to refine the grid near the origin.
    fn length_scale(&self) -> Option<f64> {
        match self {
            Self::Piecewise { n, atom, breaks, .. } => {
                let from_atom = (*atom > 0.0)
                    .then(|| (atom / omega(n.get())).powf(1.0 / n.as_f64()));
                let from_break = breaks.get(1).copied();
                match (from_atom, from_break) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (x, y) => x.or(y),
                }
            }
            Self::Tabulated { .. } => None,
        }
    }
}

/// Convex radial profile `g` sampled on `0 = r_0 < r_1 < … < r_K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub n: Dimension,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl RadialProfile {
    /// Checks shape, monotone nonnegative slopes and the chord test.
    pub fn validate(&self) -> Result<()> {
        let k = self.radii.len();
        if k < 2 || self.values.len() != k || self.slopes.len() != k {
            return Err(Error::InvalidInput("profile arrays must have equal length >= 2".into()));
        }
        if self.radii[0] != 0.0 || self.radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("radii must start at 0 and increase strictly".into()));
        }
        if !self.values[0].is_finite() || self.slopes[0] < 0.0 {
            return Err(Error::InvalidInput("g(0) must be finite and g'(0) >= 0".into()));
        }
        let scale = self.slopes[k - 1].abs().max(1.0);
        if self.slopes.windows(2).any(|w| w[1] < w[0] - 1e-12 * scale) {
            return Err(Error::InvalidInput("slopes must be nondecreasing".into()));
        }
        if !self.is_convex() {
            return Err(Error::InvalidInput("profile fails the chord test".into()));
        }
        Ok(())
    }

    /// Consecutive difference quotients are nondecreasing (up to rounding).
    pub fn is_convex(&self) -> bool {
        let q: Vec<f64> = (1..self.radii.len())
            .map(|i| (self.values[i] - self.values[i - 1]) / (self.radii[i] - self.radii[i - 1]))
            .collect();
        let vscale = self.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        q.windows(2).enumerate().all(|(i, w)| {
            let h = (self.radii[i + 2] - self.radii[i + 1]).min(self.radii[i + 1] - self.radii[i]);
            w[1] >= w[0] - 1e-12 * vscale / h
        })
    }

    pub fn r_max(&self) -> f64 {
        *self.radii.last().expect("non-empty profile")
    }

    /// Piecewise-cubic Hermite evaluation from values and slopes.
    pub fn eval(&self, r: f64) -> f64 {
        let k = self.radii.len();
        if r <= 0.0 {
            return self.values[0];
        }
        if r >= self.radii[k - 1] {
            return self.values[k - 1] + self.slopes[k - 1] * (r - self.radii[k - 1]);
        }
        let i = self.radii.partition_point(|&x| x <= r) - 1;
        let (r0, r1) = (self.radii[i], self.radii[i + 1]);
        let h = r1 - r0;
        let t = (r - r0) / h;
        let (y0, y1, m0, m1) = (self.values[i], self.values[i + 1], self.slopes[i] * h, self.slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1
    }

    /// Largest spacing of the grid.
    pub fn grid_modulus(&self) -> f64 {
        self.radii.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    /// CSV with columns `r, g, dg`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r", "g", "dg"])?;
        for i in 0..self.radii.len() {
            wr.write_record(&[
                format!("{:.17e}", self.radii[i]),
                format!("{:.17e}", self.values[i]),
                format!("{:.17e}", self.slopes[i]),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Radial solution with its asymptote constant `C = lim (g(r) − r²/2)` when it exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialSolution {
    pub profile: RadialProfile,
    pub asymptote: Option<f64>,
}

impl RadialSolution {
    /// `(sup, inf)` of `g − r²/2 − C` over the grid and the limit point at infinity.
    pub fn deviation_extrema(&self) -> Option<(f64, f64)> {
        let c = self.asymptote?;
        let p = &self.profile;
        let mut hi: f64 = 0.0;
        let mut lo: f64 = 0.0;
        for (r, g) in p.radii.iter().zip(&p.values) {
            let d = g - 0.5 * r * r - c;
            hi = hi.max(d);
            lo = lo.min(d);
        }
        Some((hi, lo))
    }

    /// `sup |u − q|` against the quadratic asymptote.
    pub fn sup_abs_deviation(&self) -> Option<f64> {
        self.deviation_extrema().map(|(hi, lo)| hi.max(-lo))
    }

    /// `(sup(u − q) − inf(u − q))/2`.
    pub fn offset_deviation(&self) -> Option<f64> {
        self.deviation_extrema().map(|(hi, lo)| 0.5 * (hi - lo))
    }
}

fn build_grid(mass: &RadialMass, k: usize, r_max: f64) -> Vec<f64> {
    let mut grid = vec![0.0];
    let ell = mass.length_scale().filter(|&l| l < r_max);
    match ell {
        Some(l) => {
            let kg = (k / 10).max(10);
            let ku = k.saturating_sub(kg).max(1);
            let lo = l * 1e-8;
            let q = (l / lo).powf(1.0 / (kg - 1) as f64);
            let mut x = lo;
            for _ in 0..kg - 1 {
                grid.push(x);
                x *= q;
            }
            for i in 0..=ku {
                grid.push(l + (r_max - l) * i as f64 / ku as f64);
            }
        }
        None => {
            for i in 1..=k.max(1) {
                grid.push(r_max * i as f64 / k.max(1) as f64);
            }
        }
    }
    if let RadialMass::Piecewise { breaks, .. } = mass {
        grid.extend(breaks.iter().copied().filter(|&b| b > 0.0 && b < r_max));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1e-300));
    grid
}

/// Solves `ω_n g'(r)^n = M(r)`, `g(0) = 0`, on `[0, r_max]` with about `k` intervals.
pub fn solve_radial(mass: &RadialMass, k: usize, r_max: f64) -> Result<RadialSolution> {
    mass.validate()?;
    if !(r_max > 0.0) || !r_max.is_finite() || k < 2 {
        return Err(Error::InvalidInput("need r_max > 0 and at least 2 intervals".into()));
    }
    let n = mass.n();
    let grid = build_grid(mass, k, r_max);
    let slopes: Vec<f64> = grid.iter().map(|&r| mass.slope_at(r)).collect();
    let mut values = Vec::with_capacity(grid.len());
    values.push(0.0);
    // running ∫(g' − r) keeps the asymptote free of r²/2 cancellation
    let mut excess = 0.0;
    let mut excess_last = 0.0;
    for i in 1..grid.len() {
        let (a, b) = (grid[i - 1], grid[i]);
        let inc = match mass {
            RadialMass::Piecewise { .. } => {
                let scale = slopes[i].max(1e-300) * (b - a);
                integrate(|s| mass.slope_at(s) - s, a, b, 1e-15 * scale, 1e-14).value
            }
            RadialMass::Tabulated { .. } => 0.5 * (slopes[i - 1] + slopes[i]) * (b - a) - 0.5 * (b * b - a * a),
        };
        excess += inc;
        excess_last = excess;
        values.push(0.5 * b * b + excess);
    }
    let profile = RadialProfile { n, radii: grid, values, slopes };
    let asymptote = match (mass.asymptotic_excess(), n.get() >= 3) {
        (Some(c), true) => {
            let last_break = match mass {
                RadialMass::Piecewise { breaks, .. } => *breaks.last().unwrap_or(&0.0),
                RadialMass::Tabulated { .. } => 0.0,
            };
            let rm = profile.r_max();
            if rm > last_break && c.abs() < 0.5 * rm.powi(n.get() as i32) {
                Some(excess_last + tail_excess(n.get(), c, rm))
            } else {
                None
            }
        }
        _ => None,
    };
    Ok(RadialSolution { profile, asymptote })
}

/// Discrete Legendre transform `g*(s) = sup_r (r s − g(r))` on the slope grid.
///
/// Uses `g*(g'(r_k)) = r_k g'(r_k) − g(r_k)`; where `g'(0) > 0` the dual has a
/// flat piece `g* = −g(0)` on `[0, g'(0)]`.
pub fn legendre_transform(p: &RadialProfile) -> Result<RadialProfile> {
    p.validate()?;
    let mut radii: Vec<f64> = Vec::with_capacity(p.radii.len() + 1);
    let mut values: Vec<f64> = Vec::with_capacity(p.radii.len() + 1);
    let mut slopes: Vec<f64> = Vec::with_capacity(p.radii.len() + 1);
    if p.slopes[0] > 0.0 {
        radii.push(0.0);
        values.push(-p.values[0]);
        slopes.push(0.0);
    }
    for i in 0..p.radii.len() {
        let s = p.slopes[i];
        let v = p.radii[i] * s - p.values[i];
        if let Some(&last) = radii.last() {
            if s <= last {
                // repeated slope: keep the outermost contact radius
                let j = radii.len() - 1;
                values[j] = v;
                slopes[j] = p.radii[i];
                continue;
            }
        }
        radii.push(s);
        values.push(v);
        slopes.push(p.radii[i]);
    }
    let out = RadialProfile { n: p.n, radii, values, slopes };
    if out.radii.len() < 2 {
        return Err(Error::InvalidInput("profile has a single slope; dual is degenerate".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d3() -> Dimension {
        Dimension::new(3).unwrap()
    }

    #[test]
    fn trivial_evaluations() {
        assert_eq!(eval_w(d3(), 1.0, 0.0), 0.0);
        assert!((eval_w(d3(), 0.0, 2.0) - 2.0).abs() < 1e-15);
        assert_eq!(asymptote_gap(d3(), 0.0, 5.0), 0.0);
        assert_eq!(eval_w_star(d3(), 1.0, 0.7), 0.0);
    }

    #[test]
    fn slope_helpers() {
        assert!((w_slope(3, 1.0, 2.0) - 9f64.cbrt()).abs() < 1e-15);
        assert!((w_star_slope(3, 1.0, 2.0) - 7f64.cbrt()).abs() < 1e-15);
        assert_eq!(w_star_slope(3, 1.0, 0.5), 0.0);
    }

    #[test]
    fn tail_series_matches_quadrature() {
        let q = integrate(|s| excess(3, 1.0, s), 10.0, 2000.0, 1e-15, 1e-15).value
            + tail_excess(3, 1.0, 2000.0);
        assert!((q - tail_excess(3, 1.0, 10.0)).abs() < 1e-13);
    }

    #[test]
    fn rejects_nonmonotone_table() {
        let m = RadialMass::Tabulated { n: d3(), radii: vec![0.0, 1.0, 2.0], mass: vec![0.0, 2.0, 1.0] };
        assert!(solve_radial(&m, 10, 2.0).is_err());
    }

    #[test]
    fn legendre_rejects_nonconvex() {
        let p = RadialProfile {
            n: d3(),
            radii: vec![0.0, 1.0, 2.0],
            values: vec![0.0, 1.0, 1.5],
            slopes: vec![0.0, 1.0, 1.0],
        };
        assert!(legendre_transform(&p).is_err());
    }
}
