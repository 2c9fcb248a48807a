//! Pointwise-in-k solution of the convolution recursion, the Hessian at the origin,
//! the critical-point sequence, limit constants and the susceptibility.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::FourierPoint;
use crate::model::{ModelCoefficients, TailKind};
use crate::numerics::{loglog_fit, CompensatedSum};

/// Denominators below this are treated as zero in ratio extraction.
pub const RATIO_FLOOR: f64 = 1e-300;

/// Default number of explicit terms in the infinite m-sums at `k = 0`.
pub const DEFAULT_M_MAX: usize = 1 << 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Neumaier summation for the m-sums (worth it for N > 10^4).
    #[serde(default)]
    pub compensated: bool,
}

/// `f_n(k;z)` for `n = 0..=N` at every point of a k-set, plus the k = 0 sequences.
#[derive(Clone, Debug, Serialize)]
pub struct RecursionTrace {
    pub z: f64,
    pub n_max: usize,
    pub sigma2: f64,
    pub kset: Vec<FourierPoint>,
    /// `a(k)` per k-set entry.
    pub gaps: Vec<f64>,
    /// `values[i][n] = f_n(k_i)`.
    pub values: Vec<Vec<f64>>,
    /// Index of `k = 0` in the k-set.
    pub origin: usize,
    /// `lap[n] = grad^2 f_n(0)`.
    pub lap: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub v: Vec<f64>,
    /// `zeta[n] = sum_{m<=n} g_m(0;z) - 1`.
    pub zeta: Vec<f64>,
    /// `z_0..z_N`, independent of `z`.
    pub zn: Vec<f64>,
}

impl RecursionTrace {
    pub fn len(&self) -> usize {
        self.kset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kset.is_empty()
    }

    pub fn f(&self, k_index: usize, n: usize) -> f64 {
        self.values[k_index][n]
    }

    pub fn f0(&self, n: usize) -> f64 {
        self.values[self.origin][n]
    }

    pub fn series(&self, k_index: usize) -> &[f64] {
        &self.values[k_index]
    }

    /// Writes one row per `(n, k)`: `n,k_index,f,b,c,v,z_n,zeta,lap_f`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "k_index", "f", "b", "c", "v", "z_n", "zeta", "lap_f"])?;
        for n in 0..=self.n_max {
            for ki in 0..self.kset.len() {
                w.write_record([
                    n.to_string(),
                    ki.to_string(),
                    self.values[ki][n].to_string(),
                    self.b[n].to_string(),
                    self.c[n].to_string(),
                    self.v[n].to_string(),
                    self.zn[n].to_string(),
                    self.zeta[n].to_string(),
                    self.lap[n].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("trace.csv", e))?;
        Ok(())
    }

    /// Writes the k-set: `k_index,a,k_1..k_d`.
    pub fn write_kset_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.kset.first().map_or(0, |k| k.dim());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k_index".to_string(), "a".to_string()];
        header.extend((1..=d).map(|l| format!("k{l}")));
        w.write_record(&header)?;
        for (i, k) in self.kset.iter().enumerate() {
            let mut row = vec![i.to_string(), self.gaps[i].to_string()];
            row.extend(k.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("kset.csv", e))?;
        Ok(())
    }
}

fn recurse(g: &[f64], e: &[f64], n_max: usize, compensated: bool) -> Vec<f64> {
    let nonzero: Vec<(usize, f64)> = g
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, v)| **v != 0.0)
        .map(|(m, v)| (m, *v))
        .collect();
    let mut f = Vec::with_capacity(n_max + 1);
    f.push(1.0);
    for t in 1..=n_max {
        let terms = nonzero
            .iter()
            .take_while(|(m, _)| *m <= t)
            .map(|&(m, gm)| gm * f[t - m]);
        let sum = if compensated {
            terms.collect::<CompensatedSum>().value()
        } else {
            terms.sum::<f64>()
        };
        f.push(sum + e.get(t).copied().unwrap_or(0.0));
    }
    f
}

fn check_order(model: &ModelCoefficients, n_max: usize) -> Result<()> {
    if n_max >= 1 {
        model.require_order(n_max - 1)?;
    }
    Ok(())
}

/// `f_0(k)..f_N(k)` at a single wave vector.
pub fn evolve_point(model: &ModelCoefficients, z: f64, k: &[f64], n_max: usize) -> Result<Vec<f64>> {
    evolve_point_with(model, z, k, n_max, EvolveOptions::default())
}

pub fn evolve_point_with(
    model: &ModelCoefficients,
    z: f64,
    k: &[f64],
    n_max: usize,
    opts: EvolveOptions,
) -> Result<Vec<f64>> {
    check_order(model, n_max)?;
    let upto = model.last_nonzero_order().map_or(n_max, |m| m.min(n_max));
    let g = model.g_series(k, z, upto);
    let e = model.e_series(k, z, upto);
    Ok(recurse(&g, &e, n_max, opts.compensated))
}

/// Solves the recursion at every point of `kset` (k = 0 is added when missing).
pub fn evolve(model: &ModelCoefficients, z: f64, kset: &[FourierPoint], n_max: usize) -> Result<RecursionTrace> {
    evolve_with(model, z, kset, n_max, EvolveOptions::default())
}

pub fn evolve_with(
    model: &ModelCoefficients,
    z: f64,
    kset: &[FourierPoint],
    n_max: usize,
    opts: EvolveOptions,
) -> Result<RecursionTrace> {
    if n_max < 1 {
        return Err(Error::invalid("evolve needs N >= 1"));
    }
    let kernel = model.kernel();
    let d = kernel.dim();
    if let Some(k) = kset.iter().find(|k| k.dim() != d) {
        return Err(Error::invalid(format!(
            "wave vector {:?} has dimension {}, kernel has {d}",
            k.as_slice(),
            k.dim()
        )));
    }
    check_order(model, n_max)?;
    let mut kset = kset.to_vec();
    let origin = match kset.iter().position(|k| k.is_origin()) {
        Some(i) => i,
        None => {
            kset.insert(0, FourierPoint::origin(d));
            0
        }
    };
    let values = kset
        .par_iter()
        .map(|k| evolve_point_with(model, z, k, n_max, opts))
        .collect::<Result<Vec<_>>>()?;
    let gaps = kset.iter().map(|k| kernel.gap(k)).collect();
    let lap = hessian_from(model, z, &values[origin], n_max, opts);

    let sigma2 = kernel.sigma2();
    let mut b = vec![1.0; n_max + 1];
    let mut c = vec![0.0; n_max + 1];
    let mut v = vec![1.0; n_max + 1];
    let mut zeta = vec![-1.0; n_max + 1];
    let (mut lap_sum, mut c_sum, mut g_sum) = (0.0, 0.0, 0.0);
    for m in 1..=n_max {
        let g0 = model.g0(m, z);
        lap_sum += model.g_lap(m, z);
        c_sum += (m as f64 - 1.0) * g0;
        g_sum += g0;
        b[m] = -lap_sum / sigma2;
        c[m] = c_sum;
        v[m] = b[m] / (1.0 + c[m]);
        zeta[m] = g_sum - 1.0;
    }
    let zn = zn_sequence(model, n_max)?;
    Ok(RecursionTrace {
        z,
        n_max,
        sigma2,
        kset,
        gaps,
        values,
        origin,
        lap,
        b,
        c,
        v,
        zeta,
        zn,
    })
}

fn hessian_from(model: &ModelCoefficients, z: f64, f0: &[f64], n_max: usize, opts: EvolveOptions) -> Vec<f64> {
    let upto = model.last_nonzero_order().map_or(n_max, |m| m.min(n_max));
    let g0: Vec<f64> = (0..=upto).map(|m| model.g0(m, z)).collect();
    let gl: Vec<f64> = (0..=upto).map(|m| model.g_lap(m, z)).collect();
    let mut lap = Vec::with_capacity(n_max + 1);
    lap.push(0.0);
    for t in 1..=n_max {
        let terms = (1..=t.min(upto)).map(|m| gl[m] * f0[t - m] + g0[m] * lap[t - m]);
        let sum = if opts.compensated {
            terms.collect::<CompensatedSum>().value()
        } else {
            terms.sum::<f64>()
        };
        let el = if t <= upto { model.e_lap(t, z) } else { 0.0 };
        lap.push(sum + el);
    }
    lap
}

/// `grad^2 f_n(0;z)` for `n = 0..=N`, differentiating the recursion twice at the origin.
pub fn evolve_hessian(model: &ModelCoefficients, z: f64, n_max: usize) -> Result<Vec<f64>> {
    let d = model.kernel().dim();
    let f0 = evolve_point(model, z, &vec![0.0; d], n_max)?;
    Ok(hessian_from(model, z, &f0, n_max, EvolveOptions::default()))
}

/// `z_0 = z_1 = 1`, `z_{n+1} = 1 - sum_{m=2}^{n+1} g_m(0; z_n)`.
pub fn zn_sequence(model: &ModelCoefficients, n_max: usize) -> Result<Vec<f64>> {
    let mut zn = vec![1.0; n_max.max(1) + 1];
    let top = model.last_nonzero_order();
    for n in 1..n_max {
        if top.is_some_and(|m| n + 1 > m) {
            model.require_order(n)?;
        }
        let upto = top.map_or(n + 1, |m| m.min(n + 1));
        let zc = zn[n];
        let s: f64 = (2..=upto).map(|m| model.g0(m, zc)).sum();
        zn[n + 1] = 1.0 - s;
    }
    zn.truncate(n_max + 1);
    Ok(zn)
}

/// `I_n = [z_n - K_1 beta n^(1-theta), z_n + K_1 beta n^(1-theta)]`; `I_0` is the real line.
pub fn intervals(zn: &[f64], k1: f64, beta: f64, theta: f64) -> Vec<(f64, f64)> {
    zn.iter()
        .enumerate()
        .map(|(n, &z)| {
            if n == 0 {
                (f64::NEG_INFINITY, f64::INFINITY)
            } else {
                let w = k1 * beta * (n as f64).powf(1.0 - theta);
                (z - w, z + w)
            }
        })
        .collect()
}

/// `zeta_n = sum_{m=1}^n g_m(0;z) - 1` (`zeta_0 = -1`).
pub fn zeta(model: &ModelCoefficients, z: f64, n: usize) -> f64 {
    (1..=n).map(|m| model.g0(m, z)).sum::<f64>() - 1.0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticalPoint {
    /// `z_N`.
    pub z_c: f64,
    /// Bound on `|z_c - z_N|` from the fitted increment decay.
    pub error_bound: f64,
    /// `z_N` plus the fitted power-law tail of the increments.
    pub extrapolated: f64,
    /// Fitted `alpha` in `|z_j - z_{j-1}| ~ j^-alpha`.
    pub decay_exponent: Option<f64>,
    pub fit_window: Option<(usize, usize)>,
    pub n: usize,
    pub tol: f64,
    pub converged: bool,
}

/// `z_N` with an error bound `sum_{j>N} C j^-alpha` fitted on the observed increments.
pub fn critical_point(model: &ModelCoefficients, n_max: usize, tol: f64) -> Result<CriticalPoint> {
    if n_max < 2 {
        return Err(Error::invalid("critical_point needs N >= 2"));
    }
    let zn = zn_sequence(model, n_max)?;
    let z_n = zn[n_max];
    let inc: Vec<f64> = (0..=n_max)
        .map(|j| if j < 2 { 0.0 } else { (zn[j] - zn[j - 1]).abs() })
        .collect();
    let rounding = 8.0 * f64::EPSILON * z_n.abs().max(1.0);
    let resolved = |j: usize| inc[j] > 1e4 * f64::EPSILON * zn[j].abs().max(1.0);
    let Some(j_hi) = (2..=n_max).rev().find(|&j| resolved(j)) else {
        // Increments vanish or sit at rounding level throughout.
        let bound = if inc.iter().all(|&x| x == 0.0) { 0.0 } else { rounding };
        return Ok(CriticalPoint {
            z_c: z_n,
            error_bound: bound,
            extrapolated: z_n,
            decay_exponent: None,
            fit_window: None,
            n: n_max,
            tol,
            converged: bound < tol || bound == 0.0,
        });
    };
    let j_lo = (j_hi / 10).max(2);
    let window: Vec<usize> = (j_lo..=j_hi).filter(|&j| inc[j] > 0.0).collect();
    if window.len() < 3 {
        return Err(Error::NoConvergence(format!(
            "too few nonzero increments in [{j_lo}, {j_hi}] to fit a decay rate"
        )));
    }
    let xs: Vec<f64> = window.iter().map(|&j| j as f64).collect();
    let ys: Vec<f64> = window.iter().map(|&j| inc[j]).collect();
    let alpha = -loglog_fit(&xs, &ys)?.slope;
    if !(alpha > 1.0) {
        return Err(Error::NoConvergence(format!(
            "increments |z_j - z_(j-1)| decay like j^-{alpha:.3} on [{j_lo}, {j_hi}]; need an exponent above 1"
        )));
    }
    let c = window
        .iter()
        .map(|&j| inc[j] * (j as f64).powf(alpha))
        .fold(0.0, f64::max);
    // Increments past j_hi are below resolution but still part of z_N; only j > N is tail.
    let tail = c * (n_max as f64).powf(1.0 - alpha) / (alpha - 1.0);
    let bound = tail + rounding;
    let sign = (zn[j_hi] - zn[j_hi - 1]).signum();
    let extrapolated = z_n + sign * tail;
    Ok(CriticalPoint {
        z_c: z_n,
        error_bound: bound,
        extrapolated,
        decay_exponent: Some(alpha),
        fit_window: Some((j_lo, j_hi)),
        n: n_max,
        tol,
        converged: bound < tol,
    })
}

/// A truncated m-sum at `k = 0` together with the uncertainty of its tail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SeriesValue {
    pub value: f64,
    pub tail_error: f64,
}

/// Infinite m-sums at `k = 0`, truncated at `m_max` with tail estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OriginSums {
    pub z: f64,
    pub m_max: usize,
    /// `sum_{m>=1} g_m(0;z)`
    pub g: SeriesValue,
    /// `sum_{m>=1} m g_m(0;z)`
    pub mg: SeriesValue,
    /// `sum_{m>=1} grad^2 g_m(0;z)`
    pub lap: SeriesValue,
    /// `sum_{m>=2} e_m(0;z)`
    pub e: SeriesValue,
}

impl OriginSums {
    pub fn worst_tail(&self) -> f64 {
        [self.g, self.mg, self.lap, self.e]
            .iter()
            .map(|s| s.tail_error)
            .fold(0.0, f64::max)
    }
}

pub fn origin_sums(model: &ModelCoefficients, z: f64, m_max: usize, compensated: bool) -> OriginSums {
    let upto = model.last_nonzero_order().map_or(m_max, |m| m.min(m_max));
    let mut acc = [CompensatedSum::new(); 4];
    let mut plain = [0.0f64; 4];
    for m in 1..=upto {
        let g0 = model.g0(m, z);
        let terms = [g0, m as f64 * g0, model.g_lap(m, z), model.e0(m, z)];
        for i in 0..4 {
            if compensated {
                acc[i].add(terms[i]);
            } else {
                plain[i] += terms[i];
            }
        }
    }
    let head = |i: usize| if compensated { acc[i].value() } else { plain[i] };
    let with_tail = |i: usize, kind: TailKind| {
        let (value, err) = model
            .tail_estimate(kind, z, m_max)
            .unwrap_or_else(|| (0.0, model.tail_bound(kind, z, m_max)));
        SeriesValue {
            value: head(i) + value,
            tail_error: err,
        }
    };
    OriginSums {
        z,
        m_max,
        g: with_tail(0, TailKind::G),
        mg: with_tail(1, TailKind::MG),
        lap: with_tail(2, TailKind::LapG),
        e: with_tail(3, TailKind::E),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Residuals {
    /// `1 - sum_m g_m(0;z_c)`.
    pub criticality: f64,
    /// `A sum_m m g_m(0;z_c) - (1 + sum_m e_m(0;z_c))`.
    pub amplitude: f64,
    /// `v sigma^2 sum_m m g_m(0;z_c) + sum_m grad^2 g_m(0;z_c)`.
    pub diffusion: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailErrors {
    pub g: f64,
    pub mg: f64,
    pub lap: f64,
    pub e: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitConstants {
    pub z_c: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub v: f64,
    pub residuals: Residuals,
    pub tail_errors: TailErrors,
    /// Propagated uncertainty of `A` and `v` from the tails.
    pub a_uncertainty: f64,
    pub v_uncertainty: f64,
    pub tail_tol: f64,
    #[serde(rename = "M_max")]
    pub m_max: usize,
    /// `prod_{i<=n} [1 + r_i(0)] = f_n(0;z_c)`, when computed.
    pub a_product: Option<f64>,
    pub a_product_n: Option<usize>,
    pub a_difference: Option<f64>,
}

impl LimitConstants {
    /// Adds the product form of `A` at depth `n` and its difference from the ratio form.
    pub fn with_product_form(mut self, model: &ModelCoefficients, n: usize) -> Result<Self> {
        let d = model.kernel().dim();
        let f = evolve_point(model, self.z_c, &vec![0.0; d], n)?;
        self.a_product = Some(f[n]);
        self.a_product_n = Some(n);
        self.a_difference = Some(f[n] - self.a);
        Ok(self)
    }
}

/// `A` and `v` from the m-sums at `z_c`.
pub fn constants_av(model: &ModelCoefficients, z_c: f64, m_max: usize, tail_tol: f64) -> Result<LimitConstants> {
    constants_av_with(model, z_c, m_max, tail_tol, false)
}

pub fn constants_av_with(
    model: &ModelCoefficients,
    z_c: f64,
    m_max: usize,
    tail_tol: f64,
    compensated: bool,
) -> Result<LimitConstants> {
    let sums = origin_sums(model, z_c, m_max, compensated);
    let worst = sums.worst_tail();
    if !(worst <= tail_tol) {
        return Err(Error::TailTooLarge {
            bound: worst,
            tol: tail_tol,
            m_max,
        });
    }
    let denom = sums.mg.value;
    if denom.abs() <= tail_tol {
        return Err(Error::DegenerateModel(format!(
            "sum_m m g_m(0;z_c) = {denom:e} is within the tail tolerance of 0"
        )));
    }
    let sigma2 = model.kernel().sigma2();
    let numer = 1.0 + sums.e.value;
    let a = numer / denom;
    let v = -sums.lap.value / (sigma2 * denom);
    Ok(LimitConstants {
        z_c,
        a,
        v,
        residuals: Residuals {
            criticality: 1.0 - sums.g.value,
            amplitude: a * denom - numer,
            diffusion: v * sigma2 * denom + sums.lap.value,
        },
        tail_errors: TailErrors {
            g: sums.g.tail_error,
            mg: sums.mg.tail_error,
            lap: sums.lap.tail_error,
            e: sums.e.tail_error,
        },
        a_uncertainty: (sums.e.tail_error + a.abs() * sums.mg.tail_error) / denom.abs(),
        v_uncertainty: (sums.lap.tail_error / sigma2 + v.abs() * sums.mg.tail_error) / denom.abs(),
        tail_tol,
        m_max,
        a_product: None,
        a_product_n: None,
        a_difference: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Susceptibility {
    pub z: f64,
    /// `chi_n = sum_{j<=n} f_j(0;z)`.
    pub partial: Vec<f64>,
    /// `(1 + E(z)) / (1 - z - G(z))`.
    pub closed_form: f64,
    /// Tail uncertainty of `E` and `G` in the closed form.
    pub closed_form_tail: f64,
}

impl Susceptibility {
    pub fn last(&self) -> f64 {
        *self.partial.last().unwrap_or(&0.0)
    }

    pub fn relative_gap(&self) -> f64 {
        ((self.last() - self.closed_form) / self.closed_form).abs()
    }
}

pub fn susceptibility(model: &ModelCoefficients, z: f64, n_max: usize) -> Result<Susceptibility> {
    let d = model.kernel().dim();
    let f = evolve_point(model, z, &vec![0.0; d], n_max)?;
    let mut partial = Vec::with_capacity(f.len());
    let mut acc = CompensatedSum::new();
    for x in &f {
        acc.add(*x);
        partial.push(acc.value());
    }
    let sums = origin_sums(model, z, DEFAULT_M_MAX, true);
    // sums.g includes g_1 = z, so 1 - z - G = 1 - sums.g.
    let denom = 1.0 - sums.g.value;
    let numer = 1.0 + sums.e.value;
    let closed_form = numer / denom;
    let closed_form_tail = (sums.e.tail_error + closed_form.abs() * sums.g.tail_error) / denom.abs();
    Ok(Susceptibility {
        z,
        partial,
        closed_form,
        closed_form_tail,
    })
}

fn require_k(trace: &RecursionTrace, k_index: usize) -> Result<()> {
    if k_index >= trace.kset.len() {
        return Err(Error::invalid(format!(
            "k index {k_index} outside a k-set of {}",
            trace.kset.len()
        )));
    }
    Ok(())
}

/// `r[n] = f_n(k)/f_{n-1}(k) - 1 + v_n a(k)` for `n = 1..=N`; `r[0] = 0`.
pub fn extract_r(trace: &RecursionTrace, k_index: usize) -> Result<Vec<f64>> {
    require_k(trace, k_index)?;
    let f = &trace.values[k_index];
    let a = trace.gaps[k_index];
    let mut r = vec![0.0; trace.n_max + 1];
    for n in 1..=trace.n_max {
        let prev = f[n - 1];
        if !(prev.abs() >= RATIO_FLOOR) {
            return Err(Error::RatioBreakdown { n: n - 1, value: prev });
        }
        r[n] = f[n] / prev - 1.0 + trace.v[n] * a;
    }
    Ok(r)
}

/// `s[i] = [v_i a r_i(0) + r_i(k) - r_i(0)] / [1 + r_i(0)]` for `i = 1..=N`; `s[0] = 0`.
pub fn extract_s(trace: &RecursionTrace, k_index: usize) -> Result<Vec<f64>> {
    let r0 = extract_r(trace, trace.origin)?;
    let rk = extract_r(trace, k_index)?;
    s_from_r(trace, k_index, &r0, &rk)
}

pub(crate) fn s_from_r(trace: &RecursionTrace, k_index: usize, r0: &[f64], rk: &[f64]) -> Result<Vec<f64>> {
    let a = trace.gaps[k_index];
    let len = r0.len().min(rk.len()).min(trace.n_max + 1);
    let mut s = vec![0.0; len];
    for i in 1..len {
        let denom = 1.0 + r0[i];
        if denom.abs() < 1e-12 {
            return Err(Error::DegenerateFactor { i, value: denom });
        }
        s[i] = (trace.v[i] * a * r0[i] + (rk[i] - r0[i])) / denom;
    }
    Ok(s)
}

/// `f_j(0) prod_{i<=j} [1 - v_i a(k) + s_i(k)]` for `j = 0..=N`.
pub fn reconstruct(trace: &RecursionTrace, k_index: usize, s: &[f64]) -> Vec<f64> {
    let a = trace.gaps[k_index];
    let mut out = Vec::with_capacity(trace.n_max + 1);
    let mut prod = 1.0;
    out.push(trace.f0(0));
    for j in 1..=trace.n_max {
        prod *= 1.0 - trace.v[j] * a + s[j];
        out.push(trace.f0(j) * prod);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::StepKernel;
    use crate::model::{pure_random_walk, synthetic_theta, SyntheticFamilySpec};

    fn rw(d: usize, l: u32) -> ModelCoefficients {
        pure_random_walk(StepKernel::uniform_box(d, l, false).unwrap())
    }

    fn synth(beta0: f64, beta_e: f64, theta: f64, d: usize, l: u32) -> ModelCoefficients {
        synthetic_theta(
            SyntheticFamilySpec::new(beta0, beta_e, theta),
            StepKernel::uniform_box(d, l, false).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn pure_rw_geometric() {
        let m = rw(1, 1);
        let t = evolve(&m, 0.9, &[FourierPoint::origin(1)], 5).unwrap();
        for n in 0..=5 {
            assert!((t.f0(n) - 0.9f64.powi(n as i32)).abs() < 1e-15);
        }
        let k = FourierPoint::new(vec![std::f64::consts::FRAC_PI_2]).unwrap();
        let t = evolve(&m, 1.0, &[k], 4).unwrap();
        assert_eq!(t.origin, 0);
        for n in 1..=4 {
            assert!(t.f(1, n).abs() < 1e-15);
        }
    }

    #[test]
    fn synthetic_hand_unrolled() {
        let m = synth(0.01, 0.0, 3.0, 1, 1);
        let t = evolve(&m, 1.0, &[FourierPoint::origin(1)], 3).unwrap();
        assert!((t.f0(2) - 1.00125).abs() < 1e-15);
        let f3 = t.f0(2) + 0.00125 * t.f0(1) + 0.01 / 27.0;
        assert!((t.f0(3) - f3).abs() < 1e-15);
    }

    #[test]
    fn first_sequence_values() {
        let m = synth(0.01, 0.002, 2.5, 2, 1);
        let t = evolve(&m, 0.97, &[FourierPoint::origin(2)], 10).unwrap();
        assert!((t.b[1] - 0.97).abs() < 1e-15);
        assert_eq!(t.c[1], 0.0);
        assert!((t.v[1] - 0.97).abs() < 1e-15);
        for n in 0..=10 {
            assert_eq!(t.v[n], t.b[n] / (1.0 + t.c[n]));
            assert!((t.zeta[n] - zeta(&m, 0.97, n)).abs() < 1e-15);
        }
        assert_eq!(t.zn[0], 1.0);
        assert_eq!(t.zn[1], 1.0);
    }

    #[test]
    fn hessian_pure_rw() {
        let lap = evolve_hessian(&rw(1, 1), 1.0, 20).unwrap();
        for (n, l) in lap.iter().enumerate() {
            assert!((l + n as f64).abs() < 1e-12);
        }
        let lap = evolve_hessian(&rw(1, 2), 1.0, 20).unwrap();
        for (n, l) in lap.iter().enumerate() {
            assert!((l + 2.5 * n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn zn_synthetic_first_step() {
        let zn = zn_sequence(&synth(0.01, 0.0, 3.0, 1, 1), 5).unwrap();
        assert!((zn[2] - 0.99875).abs() < 1e-15);
        let zn = zn_sequence(&rw(2, 1), 50).unwrap();
        assert!(zn.iter().all(|&z| z == 1.0));
    }

    #[test]
    fn critical_point_pure_rw_is_exact() {
        let cp = critical_point(&rw(1, 1), 100, 1e-12).unwrap();
        assert_eq!(cp.z_c, 1.0);
        assert_eq!(cp.error_bound, 0.0);
        assert!(cp.converged);
    }

    #[test]
    fn critical_point_synthetic() {
        // Fixed point of 1 = z + 0.01 z (zeta(3) - 1).
        let zeta3 = 1.202_056_903_159_594_2;
        let expect = 1.0 / (1.0 + 0.01 * (zeta3 - 1.0));
        let cp = critical_point(&synth(0.01, 0.0, 3.0, 1, 1), 4000, 1e-10).unwrap();
        assert!((cp.z_c - expect).abs() <= cp.error_bound, "{cp:?}");
        assert!(cp.error_bound < 1e-9);
        assert!((cp.extrapolated - expect).abs() < 1e-12);
        assert!((cp.decay_exponent.unwrap() - 3.0).abs() < 0.05);
        let neg = critical_point(&synth(-0.01, 0.0, 3.0, 1, 1), 4000, 1e-10).unwrap();
        assert!(neg.z_c > 1.0);
    }

    #[test]
    fn constants_pure_rw() {
        let c = constants_av(&rw(2, 3), 1.0, 100, 1e-12).unwrap();
        assert_eq!((c.a, c.v, c.residuals.criticality), (1.0, 1.0, 0.0));
    }

    #[test]
    fn constants_synthetic_closed_form() {
        let m = synth(0.01, 0.005, 3.0, 1, 2);
        let zc = critical_point(&m, 4000, 1e-10).unwrap().extrapolated;
        let c = constants_av(&m, zc, 10_000, 1e-12).unwrap();
        let zeta3 = 1.202_056_903_159_594_2;
        let zeta2 = std::f64::consts::PI.powi(2) / 6.0;
        let mg = zc + 0.01 * zc * (zeta2 - 1.0);
        let v = (zc + 2.0 * 0.01 * zc * (zeta3 - 1.0)) / mg;
        let a = (1.0 + 0.005 * zc * (zeta3 - 1.0)) / mg;
        assert!((c.v - v).abs() < 1e-12);
        assert!((c.a - a).abs() < 1e-12);
        assert!(c.residuals.criticality.abs() < 1e-11);
    }

    #[test]
    fn tail_too_large() {
        let m = synthetic_theta(
            SyntheticFamilySpec::new(0.01, 0.0, 2.5)
                .with_z_power(crate::model::ZPower::Order(crate::model::OrderTag::M)),
            StepKernel::uniform_box(1, 1, false).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            constants_av(&m, 0.999, 100, 1e-12),
            Err(Error::TailTooLarge { .. })
        ));
    }

    #[test]
    fn susceptibility_geometric() {
        let s = susceptibility(&rw(1, 1), 0.5, 200).unwrap();
        assert!((s.last() - 2.0).abs() < 1e-14);
        assert_eq!(s.closed_form, 2.0);
        let s = susceptibility(&rw(1, 1), 0.99, 2000).unwrap();
        assert!((s.last() - 100.0).abs() < 1e-6);
    }

    #[test]
    fn r_and_s_pure_rw() {
        let m = rw(1, 2);
        let ks = vec![
            FourierPoint::origin(1),
            FourierPoint::new(vec![0.3]).unwrap(),
            FourierPoint::new(vec![1.1]).unwrap(),
        ];
        let t = evolve(&m, 1.0, &ks, 30).unwrap();
        for ki in 0..3 {
            let r = extract_r(&t, ki).unwrap();
            assert!(r.iter().all(|x| x.abs() < 1e-14));
            let s = extract_s(&t, ki).unwrap();
            assert!(s.iter().all(|x| x.abs() < 1e-14));
        }
        let t = evolve(&m, 0.9, &ks, 10).unwrap();
        let r = extract_r(&t, 0).unwrap();
        assert!(r[1..].iter().all(|x| (x + 0.1).abs() < 1e-14));
    }

    #[test]
    fn ratio_breakdown() {
        // D(pi) = (cos pi + cos 2pi) / 2 = 0 exactly for d=1, L=2.
        let k = FourierPoint::new(vec![std::f64::consts::PI]).unwrap();
        let t = evolve(&rw(1, 2), 1.0, &[k], 4).unwrap();
        assert_eq!(t.f(1, 1), 0.0);
        assert!(matches!(extract_r(&t, 1), Err(Error::RatioBreakdown { n: 1, .. })));
    }

    #[test]
    fn reconstruction_identity() {
        let m = synth(0.05, 0.01, 2.5, 2, 2);
        let ks: Vec<FourierPoint> = [0.0, 0.05, 0.2, 0.4]
            .iter()
            .map(|&t| FourierPoint::new(vec![t, t / 2.0]).unwrap())
            .collect();
        let t = evolve(&m, 0.98, &ks, 60).unwrap();
        for ki in 0..t.len() {
            let s = extract_s(&t, ki).unwrap();
            let rebuilt = reconstruct(&t, ki, &s);
            for n in 0..=60 {
                let f = t.f(ki, n);
                assert!((rebuilt[n] - f).abs() <= 1e-10 * f.abs(), "k{ki} n{n}");
            }
        }
    }

    #[test]
    fn truncation_reports_failing_order() {
        use crate::model::{LatticeTable, TabulatedModel, TailConvention};
        let tab = TabulatedModel::new(
            StepKernel::uniform_box(1, 1, false).unwrap(),
            vec![1, 1],
            vec![
                LatticeTable::new(vec![vec![0]], vec![0.01]),
                LatticeTable::new(vec![vec![0]], vec![0.001]),
            ],
            vec![],
            TailConvention::Unknown,
        )
        .unwrap();
        let m = ModelCoefficients::Tabulated(tab);
        assert!(evolve(&m, 1.0, &[], 3).is_ok());
        assert!(matches!(
            evolve(&m, 1.0, &[], 4),
            Err(Error::Truncation { order: 3, .. })
        ));
    }

    #[test]
    fn compensated_matches_plain() {
        let m = synth(0.01, 0.0, 2.5, 1, 1);
        let k = [0.2];
        let a = evolve_point(&m, 0.99, &k, 300).unwrap();
        let b = evolve_point_with(&m, 0.99, &k, 300, EvolveOptions { compensated: true }).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-13 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn csv_has_row_per_n_and_k() {
        let t = evolve(&rw(1, 1), 1.0, &[FourierPoint::new(vec![0.5]).unwrap()], 3).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * 2);
        assert!(text.starts_with("n,k_index,f,b,c,v,z_n,zeta,lap_f\n"));
    }
}
