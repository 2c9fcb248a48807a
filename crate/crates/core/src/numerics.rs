//! Regression, summation and power-series helpers shared by the other modules.

use serde::Serialize;

use crate::error::{Error, Result};

/// Ordinary least-squares line `y = intercept + slope x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

pub fn ols(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("regression inputs differ in length"));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::invalid(format!("regression needs 2 points, got {n}")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::invalid("regression abscissae are all equal"));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
        points: n,
    })
}

/// Fit `log y = c + slope log x` over the points with `x, y > 0`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .unzip();
    ols(&lx, &ly)
}

/// Indices of the points in the largest decade `[x_max / 10, x_max]`.
pub fn largest_decade(xs: &[f64]) -> Vec<usize> {
    let top = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    xs.iter()
        .enumerate()
        .filter(|(_, x)| **x >= top / 10.0)
        .map(|(i, _)| i)
        .collect()
}

/// Log-log fit restricted to the largest decade of `xs`; returns the fit and the window.
pub fn loglog_fit_last_decade(xs: &[f64], ys: &[f64]) -> Result<(LinearFit, (f64, f64))> {
    let idx = largest_decade(xs);
    let sx: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
    let sy: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
    let lo = sx.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sx.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((loglog_fit(&sx, &sy)?, (lo, hi)))
}

/// Neumaier compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Crude bound `sum_{m > M} m^-s <= M^(1-s) / (s-1)`.
pub fn power_tail_bound(s: f64, m: usize) -> f64 {
    assert!(s > 1.0);
    (m.max(1) as f64).powf(1.0 - s) / (s - 1.0)
}

/// `sum_{m > M} m^-s` by Euler-Maclaurin, with an estimate of the truncation error.
pub fn power_tail(s: f64, m: usize) -> (f64, f64) {
    assert!(s > 1.0 && m >= 1);
    let x = m as f64;
    let f = x.powf(-s);
    let rising = |k: i32| (0..k).map(|i| s + i as f64).product::<f64>();
    let value = x * f / (s - 1.0) - 0.5 * f + rising(1) * f / (12.0 * x) - rising(3) * f / (720.0 * x.powi(3))
        + rising(5) * f / (30240.0 * x.powi(5));
    let err = rising(7) * f / (1209600.0 * x.powi(7));
    (value, err)
}
