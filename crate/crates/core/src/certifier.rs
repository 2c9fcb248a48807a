//! Margin reports for the bounds the induction relies on, evaluated on concrete
//! traces: assumptions on the coefficients, hypotheses H1–H4, and their consequences.
//!
//! Nothing here proves anything. Every check is a floating-point comparison of an
//! observed quantity against a stated bound, recorded with its margin.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{s_from_r, RecursionTrace};
use crate::error::{Error, Result};
use crate::kernel::FourierPoint;
use crate::model::ModelCoefficients;
use crate::numerics::loglog_fit;
use crate::quadrature::NormRecord;

/// Relative slack when comparing an observed value against its bound.
pub const REL_SLACK: f64 = 1e-12;
/// Absolute slack when comparing an observed value against its bound.
pub const ABS_SLACK: f64 = 1e-300;

/// `beta = L^(-d/p*)`.
pub fn compute_beta(range: u32, d: usize, pstar: f64) -> f64 {
    (range as f64).powf(-(d as f64) / pstar)
}

fn default_c() -> f64 {
    1.0
}

fn default_ratio() -> f64 {
    10.0
}

/// Exponents and constants of the inductive argument.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InductionConfig {
    pub d: usize,
    #[serde(rename = "L")]
    pub range: u32,
    pub theta: f64,
    pub epsilon: f64,
    pub pstar: f64,
    pub p_list: Vec<f64>,
    pub gamma: f64,
    pub delta: f64,
    pub lambda: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    #[serde(rename = "K3")]
    pub k3: f64,
    #[serde(rename = "K4")]
    pub k4: f64,
    #[serde(rename = "K5")]
    pub k5: f64,
    /// Constant scaling `K_4` inside `C_e`, `C_g`.
    #[serde(default = "default_c")]
    pub c: f64,
    /// `C_e(c K_4)`, supplied as a constant.
    #[serde(default)]
    pub c_e: f64,
    /// `C_g(c K_4)`, supplied as a constant.
    #[serde(default)]
    pub c_g: f64,
    /// Ratio standing in for `>>`.
    #[serde(default = "default_ratio")]
    pub ratio_threshold: f64,
}

impl InductionConfig {
    pub fn beta(&self) -> f64 {
        compute_beta(self.range, self.d, self.pstar)
    }

    /// `K_4' = max(C_e, C_g, K_4)`.
    pub fn k4_prime(&self) -> f64 {
        self.c_e.max(self.c_g).max(self.k4)
    }

    /// Errors on violated exponent constraints; ordering constraints on the K's are
    /// left to [`validate_config`] as records.
    pub fn validate(&self) -> Result<()> {
        let report = validate_config(self);
        let hard: Vec<String> = report
            .records
            .iter()
            .filter(|r| !r.pass && !r.check.starts_with("Kcond"))
            .map(|r| format!("{} (value {}, limit {})", r.check, r.actual, r.bound))
            .collect();
        if hard.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("induction config violates {}", hard.join(", "))))
        }
    }
}

/// One comparison `actual <= bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub check: String,
    pub index: Option<usize>,
    pub k_index: Option<usize>,
    pub k: Option<Vec<f64>>,
    pub bound: f64,
    pub actual: f64,
    pub margin: f64,
    pub pass: bool,
    /// Bound per unit of the family's constant, for fit mode.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub unit: Option<f64>,
}

impl Record {
    pub fn new(check: impl Into<String>, index: Option<usize>, bound: f64, actual: f64) -> Self {
        let pass = actual <= bound * (1.0 + REL_SLACK) + ABS_SLACK;
        Self {
            check: check.into(),
            index,
            k_index: None,
            k: None,
            bound,
            actual,
            margin: bound - actual,
            pass,
            unit: None,
        }
    }

    /// `actual < bound` without slack.
    pub fn strict(check: impl Into<String>, bound: f64, actual: f64) -> Self {
        let mut r = Self::new(check, None, bound, actual);
        r.pass = actual < bound;
        r
    }

    pub fn at_k(mut self, k_index: usize, k: &FourierPoint) -> Self {
        self.k_index = Some(k_index);
        self.k = Some(k.to_vec());
        self
    }

    pub fn with_unit(mut self, unit: f64) -> Self {
        self.unit = Some(unit);
        self
    }

    pub fn relative_margin(&self) -> f64 {
        if self.bound == 0.0 {
            if self.actual == 0.0 {
                0.0
            } else {
                -f64::INFINITY
            }
        } else {
            self.margin / self.bound.abs()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub h3_pairs: usize,
    pub h4_pairs: usize,
    pub origin_pairs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub records: usize,
    pub failures: usize,
    pub first_failure: Option<Record>,
    pub worst: Option<Record>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub records: Vec<Record>,
    pub warnings: Vec<String>,
    pub coverage: Option<Coverage>,
    /// Minimal constants per family, filled in fit mode.
    #[serde(default)]
    pub fitted: BTreeMap<String, f64>,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| !r.pass)
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records.iter().filter(move |r| r.check.starts_with(prefix))
    }

    pub fn merge(&mut self, other: CertificateReport) {
        self.records.extend(other.records);
        self.warnings.extend(other.warnings);
        if other.coverage.is_some() {
            self.coverage = other.coverage;
        }
        self.fitted.extend(other.fitted);
    }

    pub fn summary(&self) -> Summary {
        let worst = self
            .records
            .iter()
            .min_by(|a, b| a.relative_margin().total_cmp(&b.relative_margin()))
            .cloned();
        Summary {
            records: self.records.len(),
            failures: self.failures().count(),
            first_failure: self.failures().next().cloned(),
            worst,
        }
    }

    /// For each family with unit-scaled bounds, the smallest constant making all its
    /// records pass: `max(actual / unit)`.
    pub fn fit_linear_constants(&mut self) {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for r in &self.records {
            if let Some(unit) = r.unit {
                let need = if unit > 0.0 {
                    r.actual / unit
                } else if r.actual > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                let e = out.entry(r.check.clone()).or_insert(0.0);
                *e = e.max(need);
            }
        }
        self.fitted.extend(out);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check", "index", "k_index", "k", "bound", "actual", "margin", "pass"])?;
        let opt = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let k =
                r.k.as_ref()
                    .map(|k| k.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "))
                    .unwrap_or_default();
            w.write_record([
                r.check.clone(),
                opt(r.index),
                opt(r.k_index),
                k,
                r.bound.to_string(),
                r.actual.to_string(),
                r.margin.to_string(),
                r.pass.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("certificate.csv", e))?;
        Ok(())
    }
}

/// One record per inequality on the exponents and the K ordering.
pub fn validate_config(cfg: &InductionConfig) -> CertificateReport {
    let mut rs = Vec::new();
    let one_eps = cfg.epsilon.min(1.0);
    rs.push(Record::strict("theta.gt2", cfg.theta, 2.0));
    rs.push(Record::strict("epsilon.pos", cfg.epsilon, 0.0));
    rs.push(Record::strict("epsilon.upper", cfg.theta - 2.0, cfg.epsilon));
    rs.push(Record::strict("gamma.pos", cfg.gamma, 0.0));
    rs.push(Record::strict("gamma.upper", one_eps, cfg.gamma));
    rs.push(Record::strict("delta.pos", cfg.delta, 0.0));
    rs.push(Record::strict("delta.upper", one_eps - cfg.gamma, cfg.delta));
    rs.push(Record::strict("lambda.lower", cfg.lambda, cfg.theta - cfg.gamma));
    rs.push(Record::strict("lambda.upper", cfg.theta, cfg.lambda));
    rs.push(Record::strict("lambda.gt2", cfg.lambda, 2.0));
    rs.push(Record::new("pstar.ge1", None, cfg.pstar, 1.0));
    rs.push(Record::new("p_list.nonempty", None, cfg.p_list.len() as f64, 1.0));
    for (i, &p) in cfg.p_list.iter().enumerate() {
        rs.push(Record::new("p_list.ge1", Some(i), p, 1.0));
        rs.push(Record::new("p_list.le_pstar", Some(i), cfg.pstar, p));
    }
    rs.push(Record::strict("range.pos", cfg.range as f64, 0.0));

    let t = cfg.ratio_threshold;
    let k4p = cfg.k4_prime();
    rs.push(Record::new("Kcond.K3>>K1", None, cfg.k3, t * cfg.k1));
    rs.push(Record::strict("Kcond.K1>K4'", cfg.k1, k4p));
    rs.push(Record::new("Kcond.K4'>=K4", None, k4p, cfg.k4));
    rs.push(Record::new("Kcond.K4>>1", None, cfg.k4, t));
    rs.push(Record::new("Kcond.K2>=K1", None, cfg.k2, cfg.k1));
    rs.push(Record::new("Kcond.K2>=3K4'", None, cfg.k2, 3.0 * k4p));
    rs.push(Record::new("Kcond.K5>>K4", None, cfg.k5, t * cfg.k4));
    CertificateReport {
        records: rs,
        ..Default::default()
    }
}

/// A priori bounds on `f_m`: the norms `||D^2 f_m||_p`, `|f_m(0)|`, and `|grad^2 f_m(0)|`.
pub fn check_fbdsp(
    trace: &RecursionTrace,
    cfg: &InductionConfig,
    k_const: f64,
    n: usize,
    norms: &[NormRecord],
) -> Result<CertificateReport> {
    if trace.n_max < n || trace.lap.len() < n + 1 {
        return Err(Error::IncompleteTrace(format!(
            "need Hessians up to n={n}, trace has {}",
            trace.lap.len().saturating_sub(1)
        )));
    }
    let l = cfg.range as f64;
    let d = cfg.d as f64;
    let mut rs = Vec::new();
    for &p in &cfg.p_list {
        for m in 1..=n {
            let rec = norms
                .iter()
                .find(|r| r.n == m && r.p == p)
                .ok_or_else(|| Error::IncompleteTrace(format!("no L^{p} norm for m={m}")))?;
            let unit = l.powf(-d / p) * (m as f64).powf(-(d / (2.0 * p)).min(cfg.theta));
            rs.push(Record::new(format!("fbdsp.p={p}"), Some(m), k_const * unit, rec.norm + rec.error).with_unit(unit));
        }
    }
    for m in 1..=n {
        rs.push(Record::new("fbdsp.f0", Some(m), k_const, trace.f0(m).abs()).with_unit(1.0));
        let unit = trace.sigma2 * m as f64;
        rs.push(Record::new("fbdsp.lap", Some(m), k_const * unit, trace.lap[m].abs()).with_unit(unit));
    }
    Ok(CertificateReport {
        records: rs,
        ..Default::default()
    })
}

/// Step for the centred z-difference when the model has no exact derivative.
fn dz_step(z: f64) -> f64 {
    1e-6 * z.abs().max(1.0)
}

/// The bounds on `e_m`, `g_m` for `2 <= m <= n+1` at every z in `z_list`. Each record is
/// the worst case over the k-grid for one (family, m, z).
#[allow(clippy::too_many_arguments)]
pub fn check_assumptions_eg(
    model: &ModelCoefficients,
    z_list: &[f64],
    cfg: &InductionConfig,
    c_e: f64,
    c_g: f64,
    n: usize,
    kgrid: &[FourierPoint],
    eps_primes: &[f64],
) -> Result<CertificateReport> {
    if let Some(&e) = eps_primes.iter().find(|&&e| !(0.0..=cfg.epsilon).contains(&e)) {
        return Err(Error::invalid(format!("eps' = {e} outside [0, {}]", cfg.epsilon)));
    }
    let kernel = model.kernel();
    let sigma2 = kernel.sigma2();
    let beta = cfg.beta();
    let theta = cfg.theta;
    let gaps: Vec<f64> = kgrid.iter().map(|k| kernel.gap(k)).collect();

    let per_m: Vec<Vec<Record>> = (2..=n + 1)
        .into_par_iter()
        .map(|m| {
            let mf = m as f64;
            let decay = mf.powf(-theta);
            let decay1 = mf.powf(1.0 - theta);
            let mut out = Vec::new();
            for &z in z_list {
                let e0 = model.e0(m, z);
                let g0 = model.g0(m, z);
                let glap = model.g_lap(m, z);
                // Worst (actual/bound) over the grid, per family.
                let mut worst: BTreeMap<String, Record> = BTreeMap::new();
                let mut keep = |r: Record| {
                    let key = r.check.clone();
                    let ratio = |r: &Record| {
                        if r.bound > 0.0 {
                            r.actual / r.bound
                        } else if r.actual > 0.0 {
                            f64::INFINITY
                        } else {
                            0.0
                        }
                    };
                    match worst.get(&key) {
                        Some(old) if ratio(old) >= ratio(&r) => {}
                        _ => {
                            worst.insert(key, r);
                        }
                    }
                };
                for (ki, k) in kgrid.iter().enumerate() {
                    let a = gaps[ki];
                    let ek = model.e(m, k, z);
                    let gk = model.g(m, k, z);
                    let unit = beta * decay;
                    keep(
                        Record::new("E.i", Some(m), c_e * unit, ek.abs())
                            .with_unit(unit)
                            .at_k(ki, k),
                    );
                    let unit = a * beta * decay1;
                    keep(
                        Record::new("E.ii", Some(m), c_e * unit, (ek - e0).abs())
                            .with_unit(unit)
                            .at_k(ki, k),
                    );
                    let unit = beta * decay;
                    keep(
                        Record::new("G.i", Some(m), c_g * unit, gk.abs())
                            .with_unit(unit)
                            .at_k(ki, k),
                    );
                    let rem = (gk - g0 - a / sigma2 * glap).abs();
                    for &ep in eps_primes {
                        let unit = beta * a.powf(1.0 + ep) * mf.powf(1.0 - theta + ep);
                        keep(
                            Record::new(format!("G.iv.eps={ep}"), Some(m), c_g * unit, rem)
                                .with_unit(unit)
                                .at_k(ki, k),
                        );
                    }
                }
                out.extend(worst.into_values());
                let unit = sigma2 * beta * decay1;
                out.push(Record::new("G.ii", Some(m), c_g * unit, glap.abs()).with_unit(unit));
                let dz = model.g_dz(m, z).unwrap_or_else(|| {
                    let h = dz_step(z);
                    (model.g0(m, z + h) - model.g0(m, z - h)) / (2.0 * h)
                });
                let unit = beta * decay1;
                out.push(Record::new("G.iii", Some(m), c_g * unit, dz.abs()).with_unit(unit));
            }
            out
        })
        .collect();
    let mut report = CertificateReport {
        records: per_m.into_iter().flatten().collect(),
        ..Default::default()
    };
    if z_list.is_empty() {
        report.warnings.push("no z values supplied; nothing checked".into());
    }
    Ok(report)
}

/// Whether `(j, a)` lies in the near-critical regime `a <= gamma log(j) / j`.
pub fn in_h3_region(a: f64, j: usize, gamma: f64) -> bool {
    let jf = j as f64;
    a <= gamma * jf.ln() / jf
}

/// Largest `j <= n` with `k` in the near-critical regime, if any.
fn last_h3_index(a: f64, n: usize, gamma: f64) -> Option<usize> {
    (1..=n).rev().find(|&j| in_h3_region(a, j, gamma))
}

fn ratios(f: &[f64], v: &[f64], a: f64, upto: usize) -> Result<Vec<f64>> {
    let mut r = vec![0.0; upto + 1];
    for i in 1..=upto {
        let prev = f[i - 1];
        if !(prev.abs() >= crate::engine::RATIO_FLOOR) {
            return Err(Error::RatioBreakdown { n: i - 1, value: prev });
        }
        r[i] = f[i] / prev - 1.0 + v[i] * a;
    }
    Ok(r)
}

/// H1–H4 at every index `j <= n` and every stored k.
pub fn check_h1_h4(trace: &RecursionTrace, cfg: &InductionConfig, n: usize) -> Result<CertificateReport> {
    if trace.n_max < n {
        return Err(Error::IncompleteTrace(format!(
            "trace stops at n={}, certification asked for n={n}",
            trace.n_max
        )));
    }
    let beta = cfg.beta();
    let theta = cfg.theta;
    let mut rs = Vec::new();
    let mut warnings = Vec::new();

    for j in 1..=n {
        let jf = j as f64;
        let unit = beta * jf.powf(-theta);
        let dz = (trace.zn[j] - trace.zn[j - 1]).abs();
        rs.push(Record::new("H1", Some(j), cfg.k1 * unit, dz).with_unit(unit));
        let unit = beta * jf.powf(1.0 - theta);
        let dv = (trace.v[j] - trace.v[j - 1]).abs();
        rs.push(Record::new("H2", Some(j), cfg.k2 * unit, dv).with_unit(unit));
    }
    // Nested intervals I_1 ⊃ I_2 ⊃ ... follow from H1.
    let iv = crate::engine::intervals(&trace.zn[..=n], cfg.k1, beta, theta);
    for j in 2..=n {
        let (lo0, hi0) = iv[j - 1];
        let (lo, hi) = iv[j];
        rs.push(Record::new("I.nested", Some(j), 0.0, (lo0 - lo).max(hi - hi0).max(0.0)));
    }
    let (lo, hi) = iv[n];
    if !(lo..=hi).contains(&trace.z) {
        warnings.push(format!("z = {} lies outside I_{n} = [{lo}, {hi}]", trace.z));
    }

    let r0 = ratios(trace.series(trace.origin), &trace.v, 0.0, n)?;
    for (i, r) in r0.iter().enumerate().skip(1) {
        let unit = beta * (i as f64).powf(1.0 - theta);
        rs.push(Record::new("H3.r0", Some(i), cfg.k3 * unit, r.abs()).with_unit(unit));
    }

    let mut coverage = Coverage {
        origin_pairs: n,
        ..Default::default()
    };
    let per_k: Vec<Result<(Vec<Record>, usize, usize)>> = (0..trace.len())
        .into_par_iter()
        .filter(|&ki| ki != trace.origin)
        .map(|ki| {
            let k = &trace.kset[ki];
            let a = trace.gaps[ki];
            let f = trace.series(ki);
            let mut out = Vec::new();
            let (mut h3, mut h4) = (0, 0);
            if let Some(jk) = last_h3_index(a, n, cfg.gamma) {
                let rk = ratios(f, &trace.v, a, jk)?;
                for i in 1..=jk {
                    let unit = beta * a * (i as f64).powf(-cfg.delta);
                    out.push(
                        Record::new("H3.dr", Some(i), cfg.k3 * unit, (rk[i] - r0[i]).abs())
                            .with_unit(unit)
                            .at_k(ki, k),
                    );
                }
                // Product form f_j = f_j(0) prod [1 - v_i a + s_i] at the last H3 index.
                let s = s_from_r(trace, ki, &r0[..=jk], &rk)?;
                let rebuilt = reconstruct_upto(trace, ki, &s, jk);
                out.push(Record::new("H3.fs", Some(jk), 1e-10 * f[jk].abs(), (rebuilt - f[jk]).abs()).at_k(ki, k));
            }
            for j in 1..=n {
                if in_h3_region(a, j, cfg.gamma) {
                    h3 += 1;
                    continue;
                }
                h4 += 1;
                let jf = j as f64;
                let unit = a.powf(-cfg.lambda) * jf.powf(-theta);
                out.push(
                    Record::new("H4.f", Some(j), cfg.k4 * unit, f[j].abs())
                        .with_unit(unit)
                        .at_k(ki, k),
                );
                let unit = a.powf(1.0 - cfg.lambda) * jf.powf(-theta);
                out.push(
                    Record::new("H4.df", Some(j), cfg.k5 * unit, (f[j] - f[j - 1]).abs())
                        .with_unit(unit)
                        .at_k(ki, k),
                );
            }
            Ok((out, h3, h4))
        })
        .collect();
    for item in per_k {
        let (out, h3, h4) = item?;
        rs.extend(out);
        coverage.h3_pairs += h3;
        coverage.h4_pairs += h4;
    }
    if coverage.h3_pairs == 0 {
        warnings.push("no nonzero k falls in the H3 regime; only r_i(0) was checked there".into());
    }
    if coverage.h4_pairs == 0 {
        warnings.push("no k falls in the H4 regime".into());
    }
    Ok(CertificateReport {
        records: rs,
        warnings,
        coverage: Some(coverage),
        fitted: BTreeMap::new(),
    })
}

fn reconstruct_upto(trace: &RecursionTrace, ki: usize, s: &[f64], j: usize) -> f64 {
    let a = trace.gaps[ki];
    let prod: f64 = (1..=j).map(|i| 1.0 - trace.v[i] * a + s[i]).product();
    trace.f0(j) * prod
}

/// `|f_j(k)| <= e^(C K3 beta) e^(-(1 - C (K2+K3) beta) j a(k))` in the H3 regime.
pub fn check_lemma_ca(trace: &RecursionTrace, cfg: &InductionConfig, c: f64, n: usize) -> Result<CertificateReport> {
    if trace.n_max < n {
        return Err(Error::IncompleteTrace(format!("trace stops at n={}", trace.n_max)));
    }
    let beta = cfg.beta();
    let mut rs = Vec::new();
    let mut c_fit: f64 = 0.0;
    for (ki, k) in trace.kset.iter().enumerate() {
        let a = trace.gaps[ki];
        for j in 1..=n {
            if !in_h3_region(a, j, cfg.gamma) {
                continue;
            }
            let ja = j as f64 * a;
            let log_bound = c * cfg.k3 * beta - (1.0 - c * (cfg.k2 + cfg.k3) * beta) * ja;
            let f = trace.f(ki, j).abs();
            rs.push(Record::new("cA", Some(j), log_bound.exp(), f).at_k(ki, k));
            let need = (f.ln() + ja) / (beta * (cfg.k3 + (cfg.k2 + cfg.k3) * ja));
            c_fit = c_fit.max(need);
        }
    }
    let mut fitted = BTreeMap::new();
    fitted.insert("cA".to_string(), c_fit);
    Ok(CertificateReport {
        records: rs,
        fitted,
        ..Default::default()
    })
}

/// `|grad^2 f_j(0)| <= (1 + C (K2+K3) beta) sigma^2 j`.
pub fn check_lemma_fder(trace: &RecursionTrace, cfg: &InductionConfig, c: f64, n: usize) -> Result<CertificateReport> {
    if trace.lap.len() < n + 1 {
        return Err(Error::IncompleteTrace(format!(
            "no Hessian beyond n={}",
            trace.lap.len() - 1
        )));
    }
    let beta = cfg.beta();
    let scale = (cfg.k2 + cfg.k3) * beta;
    let mut rs = Vec::new();
    let mut c_fit: f64 = 0.0;
    for j in 1..=n {
        let base = trace.sigma2 * j as f64;
        let actual = trace.lap[j].abs();
        rs.push(Record::new("fder", Some(j), (1.0 + c * scale) * base, actual));
        c_fit = c_fit.max((actual / base - 1.0) / scale);
    }
    let mut fitted = BTreeMap::new();
    fitted.insert("fder".to_string(), c_fit.max(0.0));
    Ok(CertificateReport {
        records: rs,
        fitted,
        ..Default::default()
    })
}

/// Result of the brute-force check of the convolution bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvLemmaResult {
    pub a: f64,
    pub b: f64,
    pub rate: f64,
    pub case: &'static str,
    pub n_max: usize,
    /// `S(n) n^rate` for `n = 2..=n_max` (index `n - 2`).
    pub scaled: Vec<f64>,
    pub sup: f64,
    pub sup_at: usize,
    pub slope: f64,
    pub window: (usize, usize),
}

/// Largest decay rate guaranteed by the applicable cases of the convolution bound.
pub fn conv_rate(a: f64, b: f64) -> Result<(f64, &'static str)> {
    let mut best: Option<(f64, &'static str)> = None;
    let mut consider = |ok: bool, rate: f64, case: &'static str| {
        if ok && best.is_none_or(|(r, _)| rate > r) {
            best = Some((rate, case));
        }
    };
    consider(a > 1.0 && b > 1.0, a.min(b) - 1.0, "a,b>1");
    consider(a > 2.0 && b > 0.0, (a - 2.0).min(b), "a>2,b>0");
    consider(a > 2.0 && b > 1.0, (a - 1.0).min(b), "a>2,b>1");
    consider(a > 2.0 && b > 2.0, a.min(b), "a,b>2");
    best.ok_or_else(|| Error::invalid(format!("exponents (a={a}, b={b}) fit no case of the convolution bound")))
}

/// `S(n) = sum_{m=2}^n m^-a sum_{j=n-m+1}^n j^-b` for `n = 0..=n_max`.
pub fn conv_sums(a: f64, b: f64, n_max: usize) -> Vec<f64> {
    let ma: Vec<f64> = (0..=n_max)
        .map(|m| if m == 0 { 0.0 } else { (m as f64).powf(-a) })
        .collect();
    let jb: Vec<f64> = (0..=n_max)
        .map(|j| if j == 0 { 0.0 } else { (j as f64).powf(-b) })
        .collect();
    (0..=n_max)
        .into_par_iter()
        .map(|n| {
            // Inner sum grown one term per m; prefix-sum differences would cancel.
            let mut inner = if n >= 1 { jb[n] } else { 0.0 };
            let mut s = 0.0;
            for m in 2..=n {
                inner += jb[n - m + 1];
                s += ma[m] * inner;
            }
            s
        })
        .collect()
}

/// Brute-force check that `S(n) n^rate` stays bounded: its log-log slope over the last
/// decade must not exceed `slope_tol`.
pub fn check_conv_lemma(a: f64, b: f64, n_max: usize, slope_tol: f64) -> Result<(ConvLemmaResult, CertificateReport)> {
    let (rate, case) = conv_rate(a, b)?;
    if n_max < 20 {
        return Err(Error::invalid("convolution check needs n_max >= 20"));
    }
    let s = conv_sums(a, b, n_max);
    let scaled: Vec<f64> = (2..=n_max).map(|n| s[n] * (n as f64).powf(rate)).collect();
    let (sup_at, sup) =
        scaled.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &x)| if x > acc.1 { (i + 2, x) } else { acc },
        );
    let lo = (n_max / 10).max(2);
    let xs: Vec<f64> = (lo..=n_max).map(|n| n as f64).collect();
    let ys: Vec<f64> = (lo..=n_max).map(|n| scaled[n - 2]).collect();
    let slope = loglog_fit(&xs, &ys)?.slope;
    let result = ConvLemmaResult {
        a,
        b,
        rate,
        case,
        n_max,
        scaled,
        sup,
        sup_at,
        slope,
        window: (lo, n_max),
    };
    let mut report = CertificateReport::default();
    report.records.push(Record::new(
        format!("conv.slope.a={a}.b={b}"),
        Some(n_max),
        slope_tol,
        slope,
    ));
    report.records.push(Record::new(
        format!("conv.sup.a={a}.b={b}"),
        Some(sup_at),
        f64::MAX,
        sup,
    ));
    Ok((result, report))
}
