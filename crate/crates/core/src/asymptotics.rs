//! Checks of the large-n conclusions on computed traces: the Gaussian profile at `z_c`,
//! growth of the Hessian, the susceptibility root and the closed form of `chi`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{evolve_hessian, evolve_point, origin_sums, zn_sequence, LimitConstants, DEFAULT_M_MAX};
use crate::error::{Error, Result};
use crate::model::ModelCoefficients;
use crate::numerics::{loglog_fit, loglog_fit_last_decade, ols, LinearFit};

/// Admissible region for the scaled profile: `a(k) <= gamma ln(n) / n`.
pub fn in_profile_region(a: f64, n: usize, gamma: f64) -> bool {
    n >= 2 && a <= gamma * (n as f64).ln() / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfilePoint {
    /// Index into the scaled k-grid.
    pub k_index: usize,
    /// `|kappa|^2` of the scaled point.
    pub kappa_sq: f64,
    pub f_scaled: f64,
    pub gaussian: f64,
    /// `f_n / (A exp(-kappa^2 / 2d)) - 1`.
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianCheckResult {
    pub n: usize,
    /// `gamma ln(n) / n`.
    pub region_bound: f64,
    pub points: Vec<ProfilePoint>,
    /// Scaled points dropped because they leave the region (or the torus).
    pub excluded: usize,
    pub max_deviation: f64,
    /// Deviation at `kappa = 0`, i.e. `f_n(0;z_c)/A - 1`.
    pub origin_deviation: Option<f64>,
}

/// Least-squares split `|dev| ~ c_k kappa^2 n^-delta + c_0 n^(2-theta)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvelopeSplit {
    pub c_k: f64,
    pub c_0: f64,
    pub delta: f64,
    pub theta: f64,
    pub rms_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianProfile {
    pub z_c: f64,
    pub a: f64,
    pub v: f64,
    pub gamma: f64,
    pub results: Vec<GaussianCheckResult>,
    /// Log-log slope of `max_deviation` over the largest decade of `n`.
    pub envelope_fit: Option<LinearFit>,
    pub envelope_window: Option<(f64, f64)>,
    /// Log-log slope of the `kappa = 0` deviation.
    pub origin_fit: Option<LinearFit>,
    pub split: Option<EnvelopeSplit>,
}

impl GaussianProfile {
    pub fn envelope_slope(&self) -> Option<f64> {
        self.envelope_fit.map(|f| f.slope)
    }

    /// Rows `n,k_index,kappa_sq,f_scaled,gaussian,deviation`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "k_index", "kappa_sq", "f_scaled", "gaussian", "deviation"])?;
        for r in &self.results {
            for p in &r.points {
                w.write_record([
                    r.n.to_string(),
                    p.k_index.to_string(),
                    p.kappa_sq.to_string(),
                    p.f_scaled.to_string(),
                    p.gaussian.to_string(),
                    p.deviation.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("gaussian.csv", e))?;
        Ok(())
    }
}

/// Evolves `f_n(kappa / sqrt(v sigma^2 n); z_c)` for each `n` and scaled point and compares
/// it with `A exp(-kappa^2 / 2d)`. `delta` enables the envelope split.
pub fn gaussian_profile(
    model: &ModelCoefficients,
    constants: &LimitConstants,
    n_list: &[usize],
    kgrid_scaled: &[Vec<f64>],
    gamma: f64,
    delta: Option<f64>,
) -> Result<GaussianProfile> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("n_list must be non-empty and strictly ascending"));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma = {gamma} must be positive")));
    }
    if !(constants.v > 0.0) || constants.a == 0.0 {
        return Err(Error::invalid(format!(
            "limit constants A = {}, v = {} cannot scale a profile",
            constants.a, constants.v
        )));
    }
    let kernel = model.kernel();
    let d = kernel.dim();
    if let Some(bad) = kgrid_scaled.iter().find(|k| k.len() != d) {
        return Err(Error::invalid(format!("scaled point {bad:?} is not {d}-dimensional")));
    }
    let sigma2 = kernel.sigma2();
    let (z_c, a_lim, v) = (constants.z_c, constants.a, constants.v);

    let results = n_list
        .par_iter()
        .map(|&n| -> Result<GaussianCheckResult> {
            let scale = (v * sigma2 * n as f64).sqrt();
            let bound = if n >= 2 {
                gamma * (n as f64).ln() / n as f64
            } else {
                0.0
            };
            let mut points = Vec::new();
            let mut excluded = 0;
            for (i, kappa) in kgrid_scaled.iter().enumerate() {
                let k: Vec<f64> = kappa.iter().map(|x| x / scale).collect();
                let on_torus = k.iter().all(|x| x.abs() <= std::f64::consts::PI);
                if !on_torus || !in_profile_region(kernel.gap(&k), n, gamma) {
                    excluded += 1;
                    continue;
                }
                let f = evolve_point(model, z_c, &k, n)?[n];
                let kappa_sq: f64 = kappa.iter().map(|x| x * x).sum();
                let gaussian = a_lim * (-kappa_sq / (2.0 * d as f64)).exp();
                points.push(ProfilePoint {
                    k_index: i,
                    kappa_sq,
                    f_scaled: f,
                    gaussian,
                    deviation: f / gaussian - 1.0,
                });
            }
            let max_deviation = points.iter().map(|p| p.deviation.abs()).fold(0.0, f64::max);
            let origin_deviation = points.iter().find(|p| p.kappa_sq == 0.0).map(|p| p.deviation);
            Ok(GaussianCheckResult {
                n,
                region_bound: bound,
                points,
                excluded,
                max_deviation,
                origin_deviation,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let covered: Vec<&GaussianCheckResult> = results.iter().filter(|r| !r.points.is_empty()).collect();
    let xs: Vec<f64> = covered.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = covered.iter().map(|r| r.max_deviation).collect();
    let (envelope_fit, envelope_window) = match loglog_fit_last_decade(&xs, &ys) {
        Ok((fit, window)) => (Some(fit), Some(window)),
        Err(_) => (None, None),
    };
    let (ox, oy): (Vec<f64>, Vec<f64>) = covered
        .iter()
        .filter_map(|r| r.origin_deviation.map(|dev| (r.n as f64, dev.abs())))
        .unzip();
    let origin_fit = loglog_fit(&ox, &oy).ok();
    let split = match (delta, model.theta()) {
        (Some(delta), Some(theta)) => envelope_split(&results, delta, theta),
        _ => None,
    };
    Ok(GaussianProfile {
        z_c,
        a: a_lim,
        v,
        gamma,
        results,
        envelope_fit,
        envelope_window,
        origin_fit,
        split,
    })
}

fn envelope_split(results: &[GaussianCheckResult], delta: f64, theta: f64) -> Option<EnvelopeSplit> {
    // Normal equations for two non-orthogonal regressors, no intercept.
    let (mut s11, mut s12, mut s22, mut t1, mut t2, mut count) = (0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
    let mut rows = Vec::new();
    for r in results {
        let nf = r.n as f64;
        for p in &r.points {
            let x1 = p.kappa_sq * nf.powf(-delta);
            let x2 = nf.powf(2.0 - theta);
            let y = p.deviation.abs();
            s11 += x1 * x1;
            s12 += x1 * x2;
            s22 += x2 * x2;
            t1 += x1 * y;
            t2 += x2 * y;
            count += 1;
            rows.push((x1, x2, y));
        }
    }
    let det = s11 * s22 - s12 * s12;
    if count < 2 || det.abs() <= 1e-14 * (s11 * s22).abs() {
        return None;
    }
    let c_k = (t1 * s22 - t2 * s12) / det;
    let c_0 = (s11 * t2 - s12 * t1) / det;
    let ss: f64 = rows.iter().map(|(x1, x2, y)| (y - c_k * x1 - c_0 * x2).powi(2)).sum();
    Some(EnvelopeSplit {
        c_k,
        c_0,
        delta,
        theta,
        rms_residual: (ss / count as f64).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HessianRatio {
    pub z_c: f64,
    pub n: Vec<usize>,
    /// `-grad^2 f_n(0) / (f_n(0) v sigma^2 n)`.
    pub ratio: Vec<f64>,
    /// Log-log slope of `|ratio - 1|` over the largest decade, when resolvable.
    pub fit: Option<LinearFit>,
    pub fit_window: Option<(f64, f64)>,
}

impl HessianRatio {
    pub fn max_deviation(&self) -> f64 {
        self.ratio.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max)
    }
}

pub fn hessian_ratio(model: &ModelCoefficients, constants: &LimitConstants, n_list: &[usize]) -> Result<HessianRatio> {
    let Some(&n_max) = n_list.iter().max() else {
        return Err(Error::invalid("n_list is empty"));
    };
    if n_list.contains(&0) {
        return Err(Error::invalid("the Hessian ratio is undefined at n = 0"));
    }
    let d = model.kernel().dim();
    let sigma2 = model.kernel().sigma2();
    let z = constants.z_c;
    let (lap, f0) = rayon::join(
        || evolve_hessian(model, z, n_max),
        || evolve_point(model, z, &vec![0.0; d], n_max),
    );
    let (lap, f0) = (lap?, f0?);
    let ratio: Vec<f64> = n_list
        .iter()
        .map(|&n| -lap[n] / (f0[n] * constants.v * sigma2 * n as f64))
        .collect();
    let xs: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = ratio.iter().map(|r| (r - 1.0).abs()).collect();
    let (fit, fit_window) = match loglog_fit_last_decade(&xs, &ys) {
        Ok((fit, w)) => (Some(fit), Some(w)),
        Err(_) => (None, None),
    };
    Ok(HessianRatio {
        z_c: z,
        n: n_list.to_vec(),
        ratio,
        fit,
        fit_window,
    })
}

/// Root of `1 - z - G(z)`, `G(z) = sum_{m>=2} g_m(0;z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SusceptibilityRoot {
    pub z_c: f64,
    pub residual: f64,
    /// Tail uncertainty of `G` at the root.
    pub tail_error: f64,
    pub iterations: usize,
    pub m_max: usize,
}

impl SusceptibilityRoot {
    pub fn difference(&self, other: f64) -> f64 {
        (self.z_c - other).abs()
    }
}

/// Bisection on `1 - z - G(z)` using the infinite-sum tails, independent of the `z_n` sequence.
pub fn zc_from_susceptibility(model: &ModelCoefficients, z_lo: f64, z_hi: f64, tol: f64) -> Result<SusceptibilityRoot> {
    zc_from_susceptibility_with(model, z_lo, z_hi, tol, DEFAULT_M_MAX)
}

pub fn zc_from_susceptibility_with(
    model: &ModelCoefficients,
    z_lo: f64,
    z_hi: f64,
    tol: f64,
    m_max: usize,
) -> Result<SusceptibilityRoot> {
    if !(z_lo < z_hi) || !(tol > 0.0) {
        return Err(Error::invalid(format!(
            "need z_lo < z_hi and tol > 0, got [{z_lo}, {z_hi}], tol = {tol}"
        )));
    }
    // origin_sums.g includes g_1 = z.
    let phi = |z: f64| {
        let s = origin_sums(model, z, m_max, true);
        (1.0 - s.g.value, s.g.tail_error)
    };
    let (mut lo, mut hi) = (z_lo, z_hi);
    let (f_lo, _) = phi(lo);
    let (f_hi, _) = phi(hi);
    if f_lo == 0.0 {
        return finish(lo, phi(lo), 0, m_max, tol);
    }
    if f_hi == 0.0 {
        return finish(hi, phi(hi), 0, m_max, tol);
    }
    if f_lo.signum() == f_hi.signum() || !f_lo.is_finite() || !f_hi.is_finite() {
        return Err(Error::Bracket { lo: z_lo, hi: z_hi });
    }
    let lo_sign = f_lo.signum();
    let mut iterations = 0;
    while iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let (f, _) = phi(mid);
        if f == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if f.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let z = 0.5 * (lo + hi);
    finish(z, phi(z), iterations, m_max, tol)
}

fn finish(
    z: f64,
    (residual, tail_error): (f64, f64),
    iterations: usize,
    m_max: usize,
    tol: f64,
) -> Result<SusceptibilityRoot> {
    if !(residual.abs() < tol) {
        return Err(Error::NoConvergence(format!(
            "bisection stopped at z = {z} with residual {residual:e} above {tol:e}"
        )));
    }
    Ok(SusceptibilityRoot {
        z_c: z,
        residual,
        tail_error,
        iterations,
        m_max,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChiRecord {
    pub z: f64,
    pub chi_n: f64,
    /// `chi_{N/2}`, to show the gap shrinking with `N`.
    pub chi_half: f64,
    pub closed_form: f64,
    pub closed_form_tail: f64,
    pub gap: f64,
    pub gap_half: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiIdentityReport {
    pub z_c: f64,
    pub n: usize,
    pub records: Vec<ChiRecord>,
    /// Slope of `ln chi` against `ln(z_c - z)` from the closed form, when at least two `z`.
    pub divergence_fit: Option<LinearFit>,
}

impl ChiIdentityReport {
    pub fn divergence_exponent(&self) -> Option<f64> {
        self.divergence_fit.map(|f| f.slope)
    }

    /// Rows `z,chi_N,closed_form,gap`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["z", "chi_N", "closed_form", "gap"])?;
        for r in &self.records {
            w.write_record([
                r.z.to_string(),
                r.chi_n.to_string(),
                r.closed_form.to_string(),
                r.gap.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("chi.csv", e))?;
        Ok(())
    }
}

/// Compares `chi_N(z)` with `(1 + E(z)) / (1 - z - G(z))` at each `z < z_c'`.
pub fn chi_identity_check(
    model: &ModelCoefficients,
    z_list: &[f64],
    n_max: usize,
    z_c: f64,
) -> Result<ChiIdentityReport> {
    if n_max < 2 {
        return Err(Error::invalid("chi_identity_check needs N >= 2"));
    }
    if let Some(&z) = z_list.iter().find(|&&z| !(z < z_c)) {
        return Err(Error::OutOfDomain(format!(
            "z = {z} is not below the susceptibility root z_c' = {z_c}"
        )));
    }
    let records = z_list
        .par_iter()
        .map(|&z| -> Result<ChiRecord> {
            let s = crate::engine::susceptibility(model, z, n_max)?;
            let chi_half = s.partial[n_max / 2];
            let rel = |x: f64| ((x - s.closed_form) / s.closed_form).abs();
            Ok(ChiRecord {
                z,
                chi_n: s.last(),
                chi_half,
                closed_form: s.closed_form,
                closed_form_tail: s.closed_form_tail,
                gap: rel(s.last()),
                gap_half: rel(chi_half),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = records
        .iter()
        .map(|r| ((z_c - r.z).ln(), r.closed_form.abs().ln()))
        .unzip();
    let divergence_fit = ols(&xs, &ys).ok();
    Ok(ChiIdentityReport {
        z_c,
        n: n_max,
        records,
        divergence_fit,
    })
}

/// OLS slope of `|zeta_n(z)| n^(theta-1)` against `ln n` on `[n_lo, n_hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZetaScaling {
    /// Fixed activity, or `z_{n_hi}` when evaluated along the sequence.
    pub z: f64,
    /// `zeta_n` taken at `z_n` (the centre of `I_n`) instead of a fixed `z`.
    pub along_sequence: bool,
    pub theta: f64,
    pub window: (usize, usize),
    pub fit: LinearFit,
    /// Largest value of the scaled quantity in the window.
    pub max_scaled: f64,
}

pub fn zeta_scaling(model: &ModelCoefficients, z: f64, n_lo: usize, n_hi: usize) -> Result<ZetaScaling> {
    let theta = model
        .theta()
        .ok_or_else(|| Error::invalid(format!("the {} model has no decay exponent", model.name())))?;
    if !(1 <= n_lo && n_lo < n_hi) {
        return Err(Error::invalid(format!("bad window [{n_lo}, {n_hi}]")));
    }
    let mut acc = crate::numerics::CompensatedSum::new();
    acc.add(-1.0);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for n in 1..=n_hi {
        acc.add(model.g0(n, z));
        if n >= n_lo {
            xs.push(n as f64);
            ys.push(acc.value().abs() * (n as f64).powf(theta - 1.0));
        }
    }
    let max_scaled = ys.iter().copied().fold(0.0, f64::max);
    let fit = loglog_fit(&xs, &ys)?;
    Ok(ZetaScaling {
        z,
        along_sequence: false,
        theta,
        window: (n_lo, n_hi),
        fit,
        max_scaled,
    })
}

/// As [`zeta_scaling`], with `zeta_n` evaluated at `z_n` for each `n`.
pub fn zeta_scaling_along_sequence(model: &ModelCoefficients, n_lo: usize, n_hi: usize) -> Result<ZetaScaling> {
    let theta = model
        .theta()
        .ok_or_else(|| Error::invalid(format!("the {} model has no decay exponent", model.name())))?;
    if !(1 <= n_lo && n_lo < n_hi) {
        return Err(Error::invalid(format!("bad window [{n_lo}, {n_hi}]")));
    }
    let zn = zn_sequence(model, n_hi)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = (n_lo..=n_hi)
        .into_par_iter()
        .map(|n| {
            // zeta_n(z_n) = z_n - 1 + sum_{m=2}^n g_m(0;z_n) is a small difference; sum compensated.
            let z = zn[n];
            let mut acc = crate::numerics::CompensatedSum::new();
            acc.add(z);
            acc.add(-1.0);
            for m in 2..=n {
                acc.add(model.g0(m, z));
            }
            (n as f64, acc.value().abs() * (n as f64).powf(theta - 1.0))
        })
        .unzip();
    let max_scaled = ys.iter().copied().fold(0.0, f64::max);
    let fit = loglog_fit(&xs, &ys)?;
    Ok(ZetaScaling {
        z: zn[n_hi],
        along_sequence: true,
        theta,
        window: (n_lo, n_hi),
        fit,
        max_scaled,
    })
}

/// `chi_n(z_c)` grows like `n A`: the OLS slope of `chi_n` against `n` over the last decade.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChiGrowth {
    pub slope: f64,
    pub a: f64,
    pub relative_gap: f64,
    pub window: (usize, usize),
}

pub fn chi_growth(model: &ModelCoefficients, constants: &LimitConstants, n_max: usize) -> Result<ChiGrowth> {
    if n_max < 20 {
        return Err(Error::invalid("chi_growth needs N >= 20"));
    }
    let d = model.kernel().dim();
    let f = evolve_point(model, constants.z_c, &vec![0.0; d], n_max)?;
    let mut chi = Vec::with_capacity(f.len());
    let mut acc = crate::numerics::CompensatedSum::new();
    for x in &f {
        acc.add(*x);
        chi.push(acc.value());
    }
    let lo = n_max / 10;
    let xs: Vec<f64> = (lo..=n_max).map(|n| n as f64).collect();
    let fit = ols(&xs, &chi[lo..=n_max])?;
    Ok(ChiGrowth {
        slope: fit.slope,
        a: constants.a,
        relative_gap: ((fit.slope - constants.a) / constants.a).abs(),
        window: (lo, n_max),
    })
}
