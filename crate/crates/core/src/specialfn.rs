//! Gamma function, the sharp constant `d_{n,0}` and unit-ball volumes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial dimension. `n = 2` is only accepted by the discrete operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Dimension(usize);

impl Dimension {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("dimension must be >= 2, got {n}")));
        }
        Ok(Self(n))
    }

    /// Dimension for theorem-grade computations (`n >= 3`).
    pub fn theorem(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Domain(format!(
                "dimension must be >= 3 for this computation, got {n}"
            )));
        }
        Ok(Self(n))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

impl TryFrom<usize> for Dimension {
    type Error = Error;
    fn try_from(n: usize) -> Result<Self> {
        Self::new(n)
    }
}

impl From<Dimension> for usize {
    fn from(d: Dimension) -> usize {
        d.0
    }
}

impl std::fmt::Display for Dimension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpConstant {
    pub value: f64,
    pub n: Dimension,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitBallVolume {
    pub value: f64,
    pub n: usize,
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_606_512_090_082;

// zeta(k) for k = 2..=30
const ZETA: [f64; 29] = [
    1.644934066848226436472,
    1.2020569031595942854,
    1.082323233711138191516,
    1.036927755143369926331,
    1.017343061984449139715,
    1.00834927738192282684,
    1.004077356197944339379,
    1.002008392826082214418,
    1.000994575127818085337,
    1.000494188604119464559,
    1.000246086553308048299,
    1.000122713347578489147,
    1.000061248135058704829,
    1.000030588236307020494,
    1.000015282259408651872,
    1.000007637197637899762,
    1.00000381729326499984,
    1.000001908212716553939,
    1.000000953962033872796,
    1.000000476932986787806,
    1.000000238450502727733,
    1.000000119219925965311,
    1.000000059608189051259,
    1.000000029803503514652,
    1.000000014901554828365,
    1.000000007450711789835,
    1.000000003725334024788,
    1.000000001862659723513,
    1.00000000093132743242,
];

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(1 + z)` for `|z| <= 0.25` by its Maclaurin series.
fn ln_gamma_1p_series(z: f64) -> f64 {
    let mut acc = 0.0;
    let mut zk = z;
    let mut sign = 1.0;
    for (i, zeta) in ZETA.iter().enumerate() {
        let k = (i + 2) as f64;
        zk *= z;
        acc += sign * zeta * zk / k;
        sign = -sign;
    }
    -EULER_GAMMA * z + acc
}

fn ln_gamma_lanczos(x: f64) -> f64 {
    let z = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + a.ln()
}

/// Natural logarithm of the gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("log_gamma requires finite x > 0, got {x}")));
    }
    Ok(log_gamma_unchecked(x))
}

fn log_gamma_unchecked(x: f64) -> f64 {
    if x < 0.75 {
        // Γ(x) = Γ(x + 1) / x
        return log_gamma_unchecked(x + 1.0) - x.ln();
    }
    if (x - 1.0).abs() <= 0.25 {
        return ln_gamma_1p_series(x - 1.0);
    }
    if (x - 2.0).abs() <= 0.25 {
        let z = x - 2.0;
        return z.ln_1p() + ln_gamma_1p_series(z);
    }
    ln_gamma_lanczos(x)
}

/// `d_{n,0} = Γ(1/n) Γ((n-2)/n) / (2n Γ((n-1)/n))`.
pub fn sharp_constant(n: Dimension) -> Result<SharpConstant> {
    let n = Dimension::theorem(n.get())?;
    let nf = n.as_f64();
    let lg = log_gamma_unchecked(1.0 / nf) + log_gamma_unchecked((nf - 2.0) / nf)
        - log_gamma_unchecked((nf - 1.0) / nf);
    Ok(SharpConstant {
        value: lg.exp() / (2.0 * nf),
        n,
    })
}

/// Shorthand for `sharp_constant(n).value` with `n` given as an integer.
pub fn dn0(n: usize) -> Result<f64> {
    Ok(sharp_constant(Dimension::new(n)?)?.value)
}

/// `ω_n = π^{n/2} / Γ(n/2 + 1)`, via `ω_n = ω_{n-2}·2π/n`.
pub fn unit_ball_volume(n: usize) -> UnitBallVolume {
    let mut w = if n % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if n % 2 == 0 { 2 } else { 3 };
    while k <= n {
        w *= 2.0 * PI / k as f64;
        k += 2;
    }
    UnitBallVolume { value: w, n }
}

/// Shorthand for `unit_ball_volume(n).value`.
pub fn omega(n: usize) -> f64 {
    unit_ball_volume(n).value
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_values() {
        assert_eq!(log_gamma(1.0).unwrap(), 0.0);
        assert!((log_gamma(2.0).unwrap()).abs() < 1e-16);
        assert!((log_gamma(0.5).unwrap() - PI.sqrt().ln()).abs() < 1e-15);
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.0).is_err());
        assert!(log_gamma(f64::NAN).is_err());
    }

    #[test]
    fn ball_volumes() {
        assert_eq!(omega(1), 2.0);
        assert!((omega(2) - PI).abs() < 1e-15);
        assert!((omega(3) - 4.0 * PI / 3.0).abs() < 1e-14);
        for n in 1..12 {
            let direct = (n as f64 / 2.0 * PI.ln() - log_gamma(n as f64 / 2.0 + 1.0).unwrap()).exp();
            assert!((omega(n) - direct).abs() < 1e-13 * direct);
        }
    }

    #[test]
    fn rejects_low_dimension() {
        assert!(Dimension::new(1).is_err());
        assert!(sharp_constant(Dimension::new(2).unwrap()).is_err());
    }
}
