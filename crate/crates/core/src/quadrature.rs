//! Integrals over the torus `[-pi, pi]^d` with the normalised measure `d^dk / (2 pi)^d`,
//! and the `L^p` norms of `D^2 f_n` with their region decomposition.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::engine::evolve_point;
use crate::error::{Error, Result};
use crate::model::ModelCoefficients;

const MC_CHUNK: usize = 4096;
const MAX_GRID_NODES: usize = 1 << 31;
/// Share of Monte Carlo samples drawn uniformly on the torus.
const UNIFORM_SHARE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuadratureSpec {
    /// Periodic trapezoid rule on `n` nodes per axis (`n` even).
    TensorGrid {
        nodes_per_axis: usize,
        #[serde(default)]
        target_rel: Option<f64>,
    },
    /// Seeded importance-sampled Monte Carlo.
    MonteCarlo {
        samples: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        target_rel: Option<f64>,
    },
    /// One-dimensional rules multiplied together; separable integrands only.
    ProductFactorized {
        nodes_per_axis: usize,
        #[serde(default)]
        target_rel: Option<f64>,
    },
}

impl QuadratureSpec {
    /// Tensor grid for `d <= 3`, Monte Carlo above.
    pub fn auto(d: usize, range: u32, seed: u64) -> Self {
        if d <= 3 {
            let per_axis = [256, 128, 64][d - 1];
            let nodes = per_axis.max(8 * range as usize);
            QuadratureSpec::TensorGrid {
                nodes_per_axis: nodes + nodes % 2,
                target_rel: None,
            }
        } else {
            QuadratureSpec::MonteCarlo {
                samples: 1 << 16,
                seed,
                target_rel: None,
            }
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            QuadratureSpec::TensorGrid { .. } => "tensor_grid",
            QuadratureSpec::MonteCarlo { .. } => "monte_carlo",
            QuadratureSpec::ProductFactorized { .. } => "product_factorized",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            QuadratureSpec::MonteCarlo { seed, .. } => Some(*seed),
            _ => None,
        }
    }

    pub fn with_seed(mut self, new_seed: u64) -> Self {
        if let QuadratureSpec::MonteCarlo { seed, .. } = &mut self {
            *seed = new_seed;
        }
        self
    }

    fn target_rel(&self) -> Option<f64> {
        match self {
            QuadratureSpec::TensorGrid { target_rel, .. }
            | QuadratureSpec::MonteCarlo { target_rel, .. }
            | QuadratureSpec::ProductFactorized { target_rel, .. } => *target_rel,
        }
    }

    /// Tensor-grid node count must resolve the kernel's oscillation.
    pub fn check_for(&self, d: usize, range: u32) -> Result<()> {
        match self {
            QuadratureSpec::TensorGrid { nodes_per_axis: n, .. }
            | QuadratureSpec::ProductFactorized { nodes_per_axis: n, .. } => {
                if *n < 2 || n % 2 != 0 {
                    return Err(Error::invalid(format!("nodes per axis must be even and >= 2, got {n}")));
                }
                if *n < 4 * range as usize {
                    return Err(Error::invalid(format!(
                        "{n} nodes per axis cannot resolve a range-{range} kernel (need >= {})",
                        4 * range
                    )));
                }
                if matches!(self, QuadratureSpec::TensorGrid { .. })
                    && (*n as f64).powi(d as i32) > MAX_GRID_NODES as f64
                {
                    return Err(Error::invalid(format!("{n}^{d} grid nodes exceed the budget")));
                }
                Ok(())
            }
            QuadratureSpec::MonteCarlo { samples, .. } => {
                if *samples < 2 {
                    return Err(Error::invalid("Monte Carlo needs at least 2 samples"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub method: &'static str,
    pub warning: Option<String>,
}

/// Gaussian components of the Monte Carlo proposal: per-axis standard deviations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Proposal {
    pub scales: Vec<f64>,
}

impl Proposal {
    pub fn uniform() -> Self {
        Self::default()
    }

    /// Scales `sqrt(d / (p sigma^2 n))` over geometric `n` up to `n_max`, matching the
    /// widths of `|f_n|^p` near the origin.
    pub fn diffusive(d: usize, sigma2: f64, p: f64, n_max: usize) -> Self {
        let mut scales = Vec::new();
        let mut n = 1usize;
        while n <= n_max.max(1) {
            scales.push((d as f64 / (p * sigma2 * n as f64)).sqrt().min(PI));
            n *= 4;
        }
        Self { scales }
    }
}

struct Mixture {
    scales: Vec<f64>,
    norms: Vec<f64>,
    w_uniform: f64,
    w_gauss: f64,
}

impl Mixture {
    fn new(proposal: &Proposal) -> Self {
        let scales = proposal.scales.clone();
        let norms = scales
            .iter()
            .map(|s| erf(PI / (s * std::f64::consts::SQRT_2)))
            .collect();
        let (w_uniform, w_gauss) = if scales.is_empty() {
            (1.0, 0.0)
        } else {
            (UNIFORM_SHARE, (1.0 - UNIFORM_SHARE) / scales.len() as f64)
        };
        Self {
            scales,
            norms,
            w_uniform,
            w_gauss,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, k: &mut [f64]) {
        let u: f64 = rng.random();
        let comp = if u < self.w_uniform || self.scales.is_empty() {
            None
        } else {
            let idx = ((u - self.w_uniform) / self.w_gauss) as usize;
            Some(idx.min(self.scales.len() - 1))
        };
        for x in k.iter_mut() {
            *x = match comp {
                None => rng.random_range(-PI..PI),
                Some(c) => loop {
                    let g: f64 = StandardNormal.sample(rng);
                    let t = g * self.scales[c];
                    if t.abs() <= PI {
                        break t;
                    }
                },
            };
        }
    }

    /// Proposal density times `(2 pi)^d`, i.e. relative to the normalised measure.
    fn relative_density(&self, k: &[f64]) -> f64 {
        let mut q = self.w_uniform;
        let two_pi = 2.0 * PI;
        for (s, z) in self.scales.iter().zip(&self.norms) {
            let mut dens = 1.0;
            for &t in k {
                dens *= two_pi * (-0.5 * (t / s).powi(2)).exp() / (s * (2.0 * PI).sqrt() * z);
            }
            q += self.w_gauss * dens;
        }
        q
    }
}

/// Integrates several functions at once; `f(k, out)` fills `out`.
pub fn integrate_many<F>(
    d: usize,
    outputs: usize,
    spec: &QuadratureSpec,
    proposal: &Proposal,
    f: F,
) -> Result<Vec<QuadResult>>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    spec.check_for(d, 0)?;
    let results = match spec {
        QuadratureSpec::TensorGrid { nodes_per_axis, .. } => tensor_grid(d, outputs, *nodes_per_axis, &f),
        QuadratureSpec::MonteCarlo { samples, seed, .. } => monte_carlo(d, outputs, *samples, *seed, proposal, &f),
        QuadratureSpec::ProductFactorized { .. } => {
            return Err(Error::invalid(
                "product-factorized quadrature needs a separable integrand; use integrate_separable",
            ))
        }
    };
    Ok(with_warnings(results, spec))
}

fn with_warnings(mut results: Vec<QuadResult>, spec: &QuadratureSpec) -> Vec<QuadResult> {
    if let Some(target) = spec.target_rel() {
        for r in &mut results {
            if r.error > target * r.value.abs() {
                r.warning = Some(format!(
                    "relative error {:.3e} above target {target:e}",
                    r.error / r.value.abs()
                ));
            }
        }
    }
    results
}

/// `int f d^dk / (2 pi)^d` over the torus.
pub fn torus_integrate<F>(f: F, d: usize, spec: &QuadratureSpec) -> Result<QuadResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut out = integrate_many(d, 1, spec, &Proposal::uniform(), |k, o| o[0] = f(k))?;
    Ok(out.remove(0))
}

/// `(int h(t) dt / 2 pi)^d` for a separable integrand `prod_i h(k_i)`.
pub fn integrate_separable<F>(h: F, d: usize, nodes: usize) -> Result<QuadResult>
where
    F: Fn(f64) -> f64 + Sync,
{
    let spec = QuadratureSpec::ProductFactorized {
        nodes_per_axis: nodes,
        target_rel: None,
    };
    spec.check_for(1, 0)?;
    let h_step = 2.0 * PI / nodes as f64;
    let vals: Vec<f64> = (0..nodes).map(|i| h(-PI + i as f64 * h_step)).collect();
    let fine = vals.iter().sum::<f64>() / nodes as f64;
    let coarse = vals.iter().step_by(2).sum::<f64>() / (nodes / 2) as f64;
    let value = fine.powi(d as i32);
    Ok(QuadResult {
        value,
        error: (value - coarse.powi(d as i32)).abs(),
        evaluations: nodes,
        method: "product_factorized",
        warning: None,
    })
}

fn tensor_grid<F>(d: usize, outputs: usize, n: usize, f: &F) -> Vec<QuadResult>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let h = 2.0 * PI / n as f64;
    let node = |i: usize| -PI + i as f64 * h;
    // Parallel over the first axis; partial sums are combined in index order.
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i0| {
            let mut full = vec![0.0; outputs];
            let mut half = vec![0.0; outputs];
            let mut out = vec![0.0; outputs];
            let mut idx = vec![0usize; d];
            idx[0] = i0;
            let mut k = vec![0.0; d];
            loop {
                for (x, &i) in k.iter_mut().zip(&idx) {
                    *x = node(i);
                }
                f(&k, &mut out);
                let even = idx.iter().all(|i| i % 2 == 0);
                for o in 0..outputs {
                    full[o] += out[o];
                    if even {
                        half[o] += out[o];
                    }
                }
                // Odometer over axes 1..d.
                let mut ax = 1;
                while ax < d {
                    idx[ax] += 1;
                    if idx[ax] < n {
                        break;
                    }
                    idx[ax] = 0;
                    ax += 1;
                }
                if ax >= d {
                    break;
                }
            }
            (full, half)
        })
        .collect();
    let mut full = vec![0.0; outputs];
    let mut half = vec![0.0; outputs];
    for (fp, hp) in &partials {
        for o in 0..outputs {
            full[o] += fp[o];
            half[o] += hp[o];
        }
    }
    let total = (n as f64).powi(d as i32);
    let total_half = ((n / 2) as f64).powi(d as i32);
    (0..outputs)
        .map(|o| {
            let value = full[o] / total;
            let coarse = half[o] / total_half;
            QuadResult {
                value,
                error: (value - coarse).abs(),
                evaluations: total as usize,
                method: "tensor_grid",
                warning: None,
            }
        })
        .collect()
}

fn monte_carlo<F>(d: usize, outputs: usize, samples: usize, seed: u64, proposal: &Proposal, f: &F) -> Vec<QuadResult>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let mix = Mixture::new(proposal);
    let chunks = samples.div_ceil(MC_CHUNK);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut sum = vec![0.0; outputs];
            let mut sq = vec![0.0; outputs];
            let mut out = vec![0.0; outputs];
            let mut k = vec![0.0; d];
            for _ in 0..count {
                mix.sample(&mut rng, &mut k);
                let w = 1.0 / mix.relative_density(&k);
                f(&k, &mut out);
                for o in 0..outputs {
                    let x = out[o] * w;
                    sum[o] += x;
                    sq[o] += x * x;
                }
            }
            (sum, sq)
        })
        .collect();
    let mut sum = vec![0.0; outputs];
    let mut sq = vec![0.0; outputs];
    for (s, q) in &partials {
        for o in 0..outputs {
            sum[o] += s[o];
            sq[o] += q[o];
        }
    }
    let nf = samples as f64;
    (0..outputs)
        .map(|o| {
            let mean = sum[o] / nf;
            let var = (sq[o] / nf - mean * mean).max(0.0);
            QuadResult {
                value: mean,
                error: (var / (nf - 1.0)).sqrt(),
                evaluations: samples,
                method: "monte_carlo",
                warning: None,
            }
        })
        .collect()
}

/// `||D^2 f_n||_p` for one `(n, p)`, with the split of `||.||_p^p` over the regions
/// `R_1..R_4` (from `n = 3` on).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormRecord {
    pub n: usize,
    pub p: f64,
    pub norm: f64,
    /// Error estimate of `norm`.
    pub error: f64,
    /// `int |D^2 f_n|^p` and its error estimate.
    pub integral: f64,
    pub integral_error: f64,
    /// `int_{R_i} |D^2 f_n|^p`, `i = 1..4`.
    pub regions: Option<[f64; 4]>,
    pub warning: Option<String>,
}

/// Region index (0-based) of `k` at stage `j >= 3`.
pub fn region_of(a: f64, k_sup: f64, j: usize, gamma: f64, range: u32) -> usize {
    let jf = j as f64;
    let near = a <= gamma * jf.ln() / jf;
    let small = k_sup <= 1.0 / range as f64;
    match (near, small) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    }
}

/// Norms `||D^2 f_n(.;z)||_p` for `n = 0..=n_max` and every `p`, re-evolving the
/// recursion at each quadrature node.
pub fn lp_norm_d2f(
    model: &ModelCoefficients,
    z: f64,
    n_max: usize,
    p_list: &[f64],
    spec: &QuadratureSpec,
    gamma: Option<f64>,
) -> Result<Vec<NormRecord>> {
    if let Some(&p) = p_list.iter().find(|&&p| !(p >= 1.0)) {
        return Err(Error::invalid(format!("norm exponent p={p} must be >= 1")));
    }
    if p_list.is_empty() {
        return Err(Error::invalid("empty p-list"));
    }
    let kernel = model.kernel();
    let d = kernel.dim();
    let range = kernel.range();
    spec.check_for(d, range)?;
    // Make sure the model supports the depth before spawning node evaluations.
    evolve_point(model, z, &vec![0.0; d], n_max)?;

    if let QuadratureSpec::ProductFactorized { nodes_per_axis, .. } = spec {
        return product_norms(model, z, n_max, p_list, *nodes_per_axis);
    }

    let np = p_list.len();
    let regions = gamma.is_some();
    let per = if regions { 5 } else { 1 };
    let outputs = (n_max + 1) * np * per;
    let p_min = p_list.iter().copied().fold(f64::INFINITY, f64::min);
    let proposal = Proposal::diffusive(d, kernel.sigma2(), p_min, n_max);
    let results = integrate_many(d, outputs, spec, &proposal, |k, out| {
        // Nodes are model evaluations only; errors were ruled out above.
        let f = evolve_point(model, z, k, n_max).expect("depth checked");
        let dk = kernel.fourier(k);
        let a = kernel.gap(k);
        let sup = k.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (n, fnk) in f.iter().enumerate() {
            let base = (dk * dk * fnk).abs();
            let region = match gamma {
                Some(g) if n >= 3 => Some(region_of(a, sup, n, g, range)),
                _ => None,
            };
            for (pi, &p) in p_list.iter().enumerate() {
                let v = base.powf(p);
                let at = (n * np + pi) * per;
                out[at] = v;
                if regions {
                    for r in 0..4 {
                        out[at + 1 + r] = if region == Some(r) { v } else { 0.0 };
                    }
                }
            }
        }
    })?;
    let mut records = Vec::with_capacity((n_max + 1) * np);
    for n in 0..=n_max {
        for (pi, &p) in p_list.iter().enumerate() {
            let at = (n * np + pi) * per;
            let total = &results[at];
            let regions = (regions && n >= 3).then(|| {
                [
                    results[at + 1].value,
                    results[at + 2].value,
                    results[at + 3].value,
                    results[at + 4].value,
                ]
            });
            records.push(norm_record(n, p, total, regions));
        }
    }
    Ok(records)
}

fn norm_record(n: usize, p: f64, total: &QuadResult, regions: Option<[f64; 4]>) -> NormRecord {
    let integral = total.value.max(0.0);
    let norm = integral.powf(1.0 / p);
    // d(I^(1/p)) = I^(1/p - 1) dI / p
    let error = if integral > 0.0 {
        norm * total.error / (p * integral)
    } else {
        total.error.powf(1.0 / p)
    };
    NormRecord {
        n,
        p,
        norm,
        error,
        integral,
        integral_error: total.error,
        regions,
        warning: total.warning.clone(),
    }
}

/// Pure random walk on a separable kernel: `D^2 f_n = z^n prod_i h(k_i)^(n+2)`.
fn product_norms(
    model: &ModelCoefficients,
    z: f64,
    n_max: usize,
    p_list: &[f64],
    nodes: usize,
) -> Result<Vec<NormRecord>> {
    let kernel = model.kernel();
    if !matches!(model, ModelCoefficients::PureRandomWalk { .. }) || !kernel.is_separable() {
        return Err(Error::invalid(
            "product-factorized norms need a pure random walk on a full-box kernel",
        ));
    }
    let d = kernel.dim();
    let mut records = Vec::new();
    for n in 0..=n_max {
        for &p in p_list {
            let expo = (n + 2) as f64 * p;
            let r = integrate_separable(|t| kernel.axis_factor(t).expect("separable").abs().powf(expo), d, nodes)?;
            let scale = z.abs().powf(n as f64 * p);
            let total = QuadResult {
                value: r.value * scale,
                error: r.error * scale,
                ..r
            };
            records.push(norm_record(n, p, &total, None));
        }
    }
    Ok(records)
}

/// `n,p,norm,error,r1,r2,r3,r4`.
pub fn write_norms_csv<W: Write>(records: &[NormRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "p", "norm", "error", "r1", "r2", "r3", "r4"])?;
    for r in records {
        let mut row = vec![
            r.n.to_string(),
            r.p.to_string(),
            r.norm.to_string(),
            r.error.to_string(),
        ];
        match r.regions {
            Some(reg) => row.extend(reg.iter().map(|x| x.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), 4)),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("norms.csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::StepKernel;
    use crate::model::{pure_random_walk, synthetic_theta, SyntheticFamilySpec};

    fn grid(n: usize) -> QuadratureSpec {
        QuadratureSpec::TensorGrid {
            nodes_per_axis: n,
            target_rel: None,
        }
    }

    #[test]
    fn constant_integrates_to_one() {
        for d in 1..=3 {
            let r = torus_integrate(|_| 1.0, d, &grid(16)).unwrap();
            assert!((r.value - 1.0).abs() < 1e-14);
        }
        let mc = QuadratureSpec::MonteCarlo {
            samples: 10_000,
            seed: 3,
            target_rel: None,
        };
        let r = torus_integrate(|_| 1.0, 4, &mc).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_squared_parseval() {
        let k1 = StepKernel::uniform_box(1, 1, false).unwrap();
        let r = torus_integrate(|k| k1.fourier(k).powi(2), 1, &grid(32)).unwrap();
        assert!((r.value - 0.5).abs() < 1e-14);
        let k2 = StepKernel::uniform_box(2, 1, false).unwrap();
        let r = torus_integrate(|k| k2.fourier(k).powi(2), 2, &grid(32)).unwrap();
        assert!((r.value - 0.125).abs() < 1e-14);
    }

    #[test]
    fn wallis_oracle() {
        let m = pure_random_walk(StepKernel::uniform_box(1, 1, false).unwrap());
        let recs = lp_norm_d2f(&m, 1.0, 2, &[1.0, 2.0], &grid(64), None).unwrap();
        let at = |n: usize, p: f64| recs.iter().find(|r| r.n == n && r.p == p).unwrap().norm;
        assert!((at(0, 1.0) - 0.5).abs() < 1e-14);
        assert!((at(2, 2.0) - (35.0f64 / 128.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn monte_carlo_is_reproducible_and_accurate() {
        let kern = StepKernel::uniform_box(4, 1, false).unwrap();
        let spec = QuadratureSpec::MonteCarlo {
            samples: 40_000,
            seed: 11,
            target_rel: None,
        };
        let a = torus_integrate(|k| kern.fourier(k).powi(2), 4, &spec).unwrap();
        let b = torus_integrate(|k| kern.fourier(k).powi(2), 4, &spec).unwrap();
        assert_eq!(a, b);
        // Parseval: sum_x D(x)^2 = 1/80.
        assert!((a.value - 1.0 / 80.0).abs() < 5.0 * a.error, "{a:?}");
    }

    #[test]
    fn importance_sampling_peaked_integrand() {
        let m = pure_random_walk(StepKernel::uniform_box(5, 1, false).unwrap());
        let spec = QuadratureSpec::MonteCarlo {
            samples: 1 << 15,
            seed: 5,
            target_rel: None,
        };
        let recs = lp_norm_d2f(&m, 1.0, 40, &[2.0], &spec, None).unwrap();
        // Exact: ||D^(n+2)||_2^2 = P(walk of 2(n+2) steps returns) -- compare with a grid in
        // reduced form via separable full-box kernel is not available here, so check
        // relative error estimates are small and the norms decrease.
        for w in recs.windows(2) {
            assert!(w[1].norm <= w[0].norm * (1.0 + 1e-9) + w[0].error + w[1].error);
        }
        assert!(recs[40].error < 0.05 * recs[40].norm, "{:?}", recs[40]);
    }

    #[test]
    fn product_factorized_matches_grid() {
        let kern = StepKernel::uniform_box(2, 1, true).unwrap();
        let m = pure_random_walk(kern);
        let pf = QuadratureSpec::ProductFactorized {
            nodes_per_axis: 64,
            target_rel: None,
        };
        let a = lp_norm_d2f(&m, 0.95, 10, &[1.0, 2.0], &pf, None).unwrap();
        let b = lp_norm_d2f(&m, 0.95, 10, &[1.0, 2.0], &grid(64), None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.norm - y.norm).abs() < 1e-12 * y.norm, "{x:?} {y:?}");
        }
        let other = pure_random_walk(StepKernel::uniform_box(2, 1, false).unwrap());
        assert!(lp_norm_d2f(&other, 1.0, 3, &[1.0], &pf, None).is_err());
    }

    #[test]
    fn regions_add_up() {
        let m = synthetic_theta(
            SyntheticFamilySpec::new(0.01, 0.0, 2.5),
            StepKernel::uniform_box(2, 2, false).unwrap(),
        )
        .unwrap();
        let recs = lp_norm_d2f(&m, 0.99, 30, &[1.0, 1.5], &grid(64), Some(0.2)).unwrap();
        for r in recs.iter().filter(|r| r.n >= 3) {
            let reg = r.regions.unwrap();
            let s: f64 = reg.iter().sum();
            assert!((s - r.integral).abs() <= 1e-12 * r.integral);
        }
        assert!(recs.iter().filter(|r| r.n < 3).all(|r| r.regions.is_none()));
    }

    #[test]
    fn rejects_bad_specs() {
        let m = pure_random_walk(StepKernel::uniform_box(1, 4, false).unwrap());
        assert!(lp_norm_d2f(&m, 1.0, 3, &[1.0], &grid(8), None).is_err());
        assert!(lp_norm_d2f(&m, 1.0, 3, &[1.0], &grid(33), None).is_err());
        assert!(lp_norm_d2f(&m, 1.0, 3, &[0.5], &grid(64), None).is_err());
    }

    #[test]
    fn spec_serde() {
        let s: QuadratureSpec =
            serde_json::from_str(r#"{"method": "monte_carlo", "samples": 100, "seed": 4}"#).unwrap();
        assert_eq!(s.seed(), Some(4));
        let bad = serde_json::from_str::<QuadratureSpec>(r#"{"method": "tensor_grid", "nodes": 8}"#);
        assert!(bad.is_err());
    }
}
