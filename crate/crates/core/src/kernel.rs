//! Step distributions `D` on `Z^d`: Fourier transform, spectral gap `a(k) = 1 - D(k)`,
//! moments, and grid certification of the spread-out bounds.
//!
//! Uniform-box kernels are evaluated through the per-axis factorization of their
//! characteristic function, so `d = 5, L = 3` costs `O(d L)` per wave vector rather
//! than a sum over all 16806 support points.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use num_rational::Ratio;
use num_traits::CheckedAdd;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|k_i| <= pi` when validating wave vectors.
const TORUS_SLACK: f64 = 1e-12;

/// A wave vector on the torus `[-pi, pi]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FourierPoint(Vec<f64>);

impl FourierPoint {
    pub fn new(k: Vec<f64>) -> Result<Self> {
        if k.is_empty() {
            return Err(Error::invalid("wave vector must have at least one component"));
        }
        if let Some(bad) = k.iter().find(|x| !x.is_finite() || x.abs() > PI + TORUS_SLACK) {
            return Err(Error::invalid(format!(
                "wave vector component {bad} lies outside [-pi, pi]"
            )));
        }
        Ok(Self(k))
    }

    pub fn origin(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    /// `t` times the first unit vector.
    pub fn on_axis(d: usize, t: f64) -> Result<Self> {
        let mut k = vec![0.0; d];
        k[0] = t;
        Self::new(k)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Representative under the lattice symmetries: absolute values, sorted descending.
    pub fn canonical(&self) -> Vec<f64> {
        let mut c: Vec<f64> = self.0.iter().map(|x| x.abs()).collect();
        c.sort_by(|a, b| b.total_cmp(a));
        c
    }
}

impl std::ops::Deref for FourierPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A probability weight, exact when it was given as a rational.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Weight {
    Exact(Ratio<i64>),
    Float(f64),
}

impl Weight {
    pub fn value(&self) -> f64 {
        match *self {
            Weight::Exact(r) => *r.numer() as f64 / *r.denom() as f64,
            Weight::Float(x) => x,
        }
    }

    /// Parses `"num/den"`, an integer, or a decimal literal.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad numerator in weight `{s}`")))?;
            let d: i64 = d
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad denominator in weight `{s}`")))?;
            if d == 0 {
                return Err(Error::Parse(format!("zero denominator in weight `{s}`")));
            }
            return Ok(Weight::Exact(Ratio::new(n, d)));
        }
        if let Ok(n) = s.parse::<i64>() {
            return Ok(Weight::Exact(Ratio::from_integer(n)));
        }
        s.parse::<f64>()
            .map(Weight::Float)
            .map_err(|_| Error::Parse(format!("unreadable weight `{s}`")))
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Weight::Exact(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            Weight::Float(x) => write!(f, "{x}"),
        }
    }
}

impl Serialize for Weight {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Weight::Exact(_) => s.serialize_str(&self.to_string()),
            Weight::Float(x) => s.serialize_f64(*x),
        }
    }
}

impl<'de> Deserialize<'de> for Weight {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(x) => Ok(Weight::Float(x)),
            Repr::Text(s) => Weight::parse(&s).map_err(serde::de::Error::custom),
        }
    }
}

/// One lattice point with its weight, as it appears in kernel and model files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeEntry {
    pub x: Vec<i64>,
    pub weight: Weight,
}

/// On-disk kernel definition.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelDefinition {
    pub d: usize,
    #[serde(rename = "L")]
    pub range: u32,
    pub entries: Vec<LatticeEntry>,
}

#[derive(Clone, Debug)]
enum Shape {
    UniformBox { include_origin: bool, count: u64 },
    Table(Arc<Table>),
}

#[derive(Debug)]
struct Table {
    points: Vec<Vec<i64>>,
    weights: Vec<Weight>,
    values: Vec<f64>,
}

/// The single-step distribution of the underlying random walk.
#[derive(Clone, Debug)]
pub struct StepKernel {
    dim: usize,
    range: u32,
    shape: Shape,
    sigma2: f64,
    max_weight: f64,
}

impl StepKernel {
    /// Uniform distribution on `{x : 0 < |x|_inf <= L}`, or on the full box when
    /// `include_origin` is set.
    pub fn uniform_box(d: usize, range: u32, include_origin: bool) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension d must be positive"));
        }
        if range == 0 {
            return Err(Error::invalid("range L must be positive"));
        }
        let side = 2 * range as u64 + 1;
        let full = u32::try_from(d)
            .ok()
            .and_then(|d| side.checked_pow(d))
            .ok_or_else(|| Error::invalid(format!("box (2L+1)^d too large for d={d}, L={range}")))?;
        let count = if include_origin { full } else { full - 1 };
        let l = range as f64;
        let axis_sq_sum = l * (l + 1.0) * (2.0 * l + 1.0) / 3.0;
        let sigma2 = d as f64 * axis_sq_sum * (side as f64).powi(d as i32 - 1) / count as f64;
        Ok(Self {
            dim: d,
            range,
            shape: Shape::UniformBox { include_origin, count },
            sigma2,
            max_weight: 1.0 / count as f64,
        })
    }

    /// Kernel with an explicit finite support. Weights must be nonnegative, sum to one
    /// and respect sign flips and coordinate permutations.
    pub fn from_entries(d: usize, range: u32, entries: Vec<LatticeEntry>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension d must be positive"));
        }
        if range == 0 {
            return Err(Error::invalid("range L must be positive"));
        }
        if entries.is_empty() {
            return Err(Error::invalid("kernel support is empty"));
        }
        let mut points = Vec::with_capacity(entries.len());
        let mut weights = Vec::with_capacity(entries.len());
        for e in entries {
            if e.x.len() != d {
                return Err(Error::invalid(format!(
                    "support point {:?} does not have {d} coordinates",
                    e.x
                )));
            }
            if e.weight.value() < 0.0 {
                return Err(Error::invalid(format!("negative weight at {:?}", e.x)));
            }
            points.push(e.x);
            weights.push(e.weight);
        }
        check_normalised(&weights)?;
        let values: Vec<f64> = weights.iter().map(Weight::value).collect();
        check_lattice_symmetry("kernel", &points, &values)?;
        let sigma2 = points.iter().zip(&values).map(|(x, w)| norm_sq_i(x) * w).sum();
        let max_weight = values.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            dim: d,
            range,
            shape: Shape::Table(Arc::new(Table {
                points,
                weights,
                values,
            })),
            sigma2,
            max_weight,
        })
    }

    pub fn from_definition(def: KernelDefinition) -> Result<Self> {
        Self::from_entries(def.d, def.range, def.entries)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_definition(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Explicit definition listing every support point.
    pub fn definition(&self) -> KernelDefinition {
        let entries = match &self.shape {
            Shape::Table(t) => t
                .points
                .iter()
                .zip(&t.weights)
                .map(|(x, w)| LatticeEntry {
                    x: x.clone(),
                    weight: *w,
                })
                .collect(),
            Shape::UniformBox { count, .. } => {
                let w = Weight::Exact(Ratio::new(1, *count as i64));
                self.support().map(|(x, _)| LatticeEntry { x, weight: w }).collect()
            }
        };
        KernelDefinition {
            d: self.dim,
            range: self.range,
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn range(&self) -> u32 {
        self.range
    }

    /// `sigma^2 = sum_x |x|^2 D(x)`.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `||D||_inf`.
    pub fn max_weight(&self) -> f64 {
        self.max_weight
    }

    pub fn support_size(&self) -> usize {
        match &self.shape {
            Shape::UniformBox { count, .. } => *count as usize,
            Shape::Table(t) => t.points.len(),
        }
    }

    /// Support points with their weights.
    pub fn support(&self) -> Box<dyn Iterator<Item = (Vec<i64>, f64)> + '_> {
        match &self.shape {
            Shape::UniformBox { include_origin, count } => {
                let w = 1.0 / *count as f64;
                let keep_origin = *include_origin;
                Box::new(
                    BoxPoints::new(self.dim, self.range as i64)
                        .filter(move |x| keep_origin || x.iter().any(|&c| c != 0))
                        .map(move |x| (x, w)),
                )
            }
            Shape::Table(t) => Box::new(t.points.iter().cloned().zip(t.values.iter().cloned())),
        }
    }

    /// Whether `D(k)` factorises as `prod_i h(k_i)` (full uniform box).
    pub fn is_separable(&self) -> bool {
        matches!(
            self.shape,
            Shape::UniformBox {
                include_origin: true,
                ..
            }
        )
    }

    /// The one-axis factor `h(t)` of a separable kernel.
    pub fn axis_factor(&self, t: f64) -> Option<f64> {
        if !self.is_separable() {
            return None;
        }
        let l = self.range as i64;
        let s = 1.0 + 2.0 * (1..=l).map(|x| (t * x as f64).cos()).sum::<f64>();
        Some(s / (2 * l + 1) as f64)
    }

    /// `D(k) = sum_x cos(k.x) D(x)`; the sine part cancels by symmetry.
    pub fn fourier(&self, k: &[f64]) -> f64 {
        debug_assert_eq!(k.len(), self.dim);
        match &self.shape {
            Shape::UniformBox { include_origin, count } => {
                let l = self.range as i64;
                let prod: f64 = k
                    .iter()
                    .map(|&t| 1.0 + 2.0 * (1..=l).map(|x| (t * x as f64).cos()).sum::<f64>())
                    .product();
                let shift = if *include_origin { 0.0 } else { 1.0 };
                (prod - shift) / *count as f64
            }
            Shape::Table(t) => t.points.iter().zip(&t.values).map(|(x, w)| dot_i(k, x).cos() * w).sum(),
        }
    }

    /// `a(k) = 1 - D(k)`, evaluated through `1 - cos t = 2 sin^2(t/2)` so that it keeps
    /// full relative accuracy for small `k`.
    pub fn gap(&self, k: &[f64]) -> f64 {
        debug_assert_eq!(k.len(), self.dim);
        match &self.shape {
            Shape::UniformBox { include_origin, count } => {
                let l = self.range as i64;
                let side = (2 * l + 1) as f64;
                // 1 - prod_i (1 - u_i), accumulated without cancellation.
                let q = k.iter().fold(0.0, |q, &t| {
                    let u = 4.0 * (1..=l).map(|x| (0.5 * t * x as f64).sin().powi(2)).sum::<f64>() / side;
                    q + u - q * u
                });
                if *include_origin {
                    q
                } else {
                    let full = (*count + 1) as f64;
                    full * q / *count as f64
                }
            }
            Shape::Table(t) => t
                .points
                .iter()
                .zip(&t.values)
                .map(|(x, w)| 2.0 * (0.5 * dot_i(k, x)).sin().powi(2) * w)
                .sum(),
        }
    }

    /// `sum_x |x|^r D(x)`.
    pub fn moment(&self, r: f64) -> f64 {
        self.support().map(|(x, w)| norm_sq_i(&x).powf(0.5 * r) * w).sum()
    }
}

fn dot_i(k: &[f64], x: &[i64]) -> f64 {
    k.iter().zip(x).map(|(a, &b)| a * b as f64).sum()
}

pub(crate) fn norm_sq_i(x: &[i64]) -> f64 {
    x.iter().map(|&c| (c * c) as f64).sum()
}

fn check_normalised(weights: &[Weight]) -> Result<()> {
    let exact: Option<Vec<Ratio<i64>>> = weights
        .iter()
        .map(|w| match w {
            Weight::Exact(r) => Some(*r),
            Weight::Float(_) => None,
        })
        .collect();
    match exact {
        Some(rs) => {
            let total = rs
                .iter()
                .try_fold(Ratio::from_integer(0i64), |acc, r| acc.checked_add(r))
                .ok_or_else(|| Error::invalid("rational weight sum overflows i64"))?;
            if total != Ratio::from_integer(1) {
                return Err(Error::invalid(format!("weights sum to {total}, not 1")));
            }
        }
        None => {
            let total: f64 = weights.iter().map(Weight::value).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("weights sum to {total}, not 1")));
            }
        }
    }
    Ok(())
}

/// Checks invariance of a lattice table under each coordinate sign flip and each
/// transposition of coordinates (these generate the hyperoctahedral group).
pub(crate) fn check_lattice_symmetry(name: &str, points: &[Vec<i64>], values: &[f64]) -> Result<()> {
    let mut map: HashMap<&[i64], f64> = HashMap::with_capacity(points.len());
    for (x, &w) in points.iter().zip(values) {
        if map.insert(x.as_slice(), w).is_some() {
            return Err(Error::invalid(format!("{name}: duplicate point {x:?}")));
        }
    }
    let scale = values.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mismatch = |x: &Vec<i64>, y: Vec<i64>, w: f64| -> Result<()> {
        let other = map.get(y.as_slice()).copied().unwrap_or(0.0);
        if (other - w).abs() > tol {
            return Err(Error::SymmetryViolation {
                table: name.to_string(),
                x: x.clone(),
                y,
            });
        }
        Ok(())
    };
    for (x, &w) in points.iter().zip(values) {
        for i in 0..x.len() {
            if x[i] != 0 {
                let mut y = x.clone();
                y[i] = -y[i];
                mismatch(x, y, w)?;
            }
            for j in i + 1..x.len() {
                if x[i] != x[j] {
                    let mut y = x.clone();
                    y.swap(i, j);
                    mismatch(x, y, w)?;
                }
            }
        }
    }
    Ok(())
}

/// Odometer over `[-l, l]^d`.
struct BoxPoints {
    cur: Option<Vec<i64>>,
    l: i64,
}

impl BoxPoints {
    fn new(d: usize, l: i64) -> Self {
        Self {
            cur: Some(vec![-l; d]),
            l,
        }
    }
}

impl Iterator for BoxPoints {
    type Item = Vec<i64>;
    fn next(&mut self) -> Option<Vec<i64>> {
        let out = self.cur.clone()?;
        let cur = self.cur.as_mut().unwrap();
        let mut i = 0;
        loop {
            if i == cur.len() {
                self.cur = None;
                break;
            }
            if cur[i] < self.l {
                cur[i] += 1;
                break;
            }
            cur[i] = -self.l;
            i += 1;
        }
        Some(out)
    }
}

/// Candidate constants for the spread-out bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConstants {
    /// `C` in `||D||_inf <= C L^-d` and `sigma^2 <= C L^2`.
    pub c: f64,
    pub eta: f64,
    pub c1: f64,
    pub c2: f64,
    pub epsilon: f64,
}

impl Default for KernelConstants {
    fn default() -> Self {
        Self {
            c: 4.0,
            eta: 0.1,
            c1: 0.05,
            c2: 1.0,
            epsilon: 0.5,
        }
    }
}

/// One certified inequality, reported at its worst grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelCheck {
    pub name: String,
    pub constant: f64,
    /// The tested quantity at the worst point (or the global quantity).
    pub value: f64,
    pub worst_k: Option<Vec<f64>>,
    /// Smallest slack over the grid; absent for the moment check.
    pub margin: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelCertificate {
    pub d: usize,
    #[serde(rename = "L")]
    pub range: u32,
    pub grid_points: usize,
    pub small_k_points: usize,
    pub note: String,
    pub checks: Vec<KernelCheck>,
}

impl KernelCertificate {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&KernelCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Tightest constants observed on a grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedKernelConstants {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub eta: f64,
}

#[derive(Clone, Copy)]
struct Extreme {
    value: f64,
    at: usize,
}

impl Extreme {
    fn new() -> Self {
        Self {
            value: f64::INFINITY,
            at: usize::MAX,
        }
    }
    fn offer(&mut self, value: f64, at: usize) {
        if value < self.value {
            self.value = value;
            self.at = at;
        }
    }
}

struct GridScan {
    lower: Extreme,
    upper: Extreme,
    ratio_min: f64,
    ratio_max: f64,
    outer: Extreme,
    top: Extreme,
    small_points: usize,
}

fn scan_grid(kernel: &StepKernel, grid: &[FourierPoint], c1: f64, c2: f64, eta: f64) -> GridScan {
    let l = kernel.range() as f64;
    let inv_l = 1.0 / l;
    let mut s = GridScan {
        lower: Extreme::new(),
        upper: Extreme::new(),
        ratio_min: f64::INFINITY,
        ratio_max: f64::NEG_INFINITY,
        outer: Extreme::new(),
        top: Extreme::new(),
        small_points: 0,
    };
    for (i, k) in grid.iter().enumerate() {
        let a = kernel.gap(k);
        let sup = k.sup_norm();
        if sup <= inv_l && !k.is_origin() {
            let scale = l * l * k.norm_sq();
            s.small_points += 1;
            s.lower.offer(a - c1 * scale, i);
            s.upper.offer(c2 * scale - a, i);
            s.ratio_min = s.ratio_min.min(a / scale);
            s.ratio_max = s.ratio_max.max(a / scale);
        }
        if sup >= inv_l {
            s.outer.offer(a - eta, i);
        }
        s.top.offer(2.0 - eta - a, i);
    }
    s
}

/// Grid certification of the moment, sup-norm, variance and gap bounds on `D`.
///
/// A grid check certifies only up to grid resolution; the certificate says so.
pub fn certify_assumption_d(
    kernel: &StepKernel,
    constants: &KernelConstants,
    grid: &[FourierPoint],
) -> Result<KernelCertificate> {
    if grid.is_empty() {
        return Err(Error::invalid("empty k-grid"));
    }
    if let Some(k) = grid.iter().find(|k| k.dim() != kernel.dim()) {
        return Err(Error::invalid(format!(
            "grid point of dimension {} for a d={} kernel",
            k.dim(),
            kernel.dim()
        )));
    }
    let KernelConstants {
        c,
        eta,
        c1,
        c2,
        epsilon,
    } = *constants;
    if !(c > 0.0 && eta > 0.0 && c1 > 0.0 && c2 > 0.0 && epsilon > 0.0) {
        return Err(Error::invalid("candidate constants must be positive"));
    }
    let d = kernel.dim();
    let l = kernel.range() as f64;
    let scan = scan_grid(kernel, grid, c1, c2, eta);
    let witness = |e: &Extreme| (e.at != usize::MAX).then(|| grid[e.at].canonical());
    let gap_at = |e: &Extreme| {
        if e.at == usize::MAX {
            f64::NAN
        } else {
            kernel.gap(&grid[e.at])
        }
    };

    let mut checks = Vec::new();
    let moment = kernel.moment(2.0 + 2.0 * epsilon);
    checks.push(KernelCheck {
        name: "momentD".into(),
        constant: epsilon,
        value: moment,
        worst_k: None,
        margin: None,
        pass: moment.is_finite(),
    });
    let dinf_bound = c * l.powi(-(d as i32));
    checks.push(KernelCheck {
        name: "Dinf".into(),
        constant: c,
        value: kernel.max_weight(),
        worst_k: None,
        margin: Some(dinf_bound - kernel.max_weight()),
        pass: kernel.max_weight() <= dinf_bound,
    });
    let sigma_bound = c * l * l;
    checks.push(KernelCheck {
        name: "sigma2".into(),
        constant: c,
        value: kernel.sigma2(),
        worst_k: None,
        margin: Some(sigma_bound - kernel.sigma2()),
        pass: kernel.sigma2() <= sigma_bound,
    });
    let covered = scan.small_points > 0;
    for (name, constant, e) in [("Dbound1.lower", c1, &scan.lower), ("Dbound1.upper", c2, &scan.upper)] {
        checks.push(KernelCheck {
            name: name.into(),
            constant,
            value: gap_at(e),
            worst_k: witness(e),
            margin: covered.then_some(e.value),
            pass: covered && e.value >= 0.0,
        });
    }
    let outer_covered = scan.outer.at != usize::MAX;
    checks.push(KernelCheck {
        name: "Dbound2".into(),
        constant: eta,
        value: gap_at(&scan.outer),
        worst_k: witness(&scan.outer),
        margin: outer_covered.then_some(scan.outer.value),
        pass: outer_covered && scan.outer.value > 0.0,
    });
    checks.push(KernelCheck {
        name: "Dbound3".into(),
        constant: eta,
        value: gap_at(&scan.top),
        worst_k: witness(&scan.top),
        margin: Some(scan.top.value),
        pass: scan.top.value > 0.0,
    });

    Ok(KernelCertificate {
        d,
        range: kernel.range(),
        grid_points: grid.len(),
        small_k_points: scan.small_points,
        note: "grid certificate: inequalities verified at the listed grid points only".into(),
        checks,
    })
}

/// Tightest constants for which every grid inequality holds (the strict gap bounds hold
/// for any `eta` strictly below the reported value).
pub fn fit_assumption_d(kernel: &StepKernel, grid: &[FourierPoint]) -> Result<FittedKernelConstants> {
    if grid.is_empty() {
        return Err(Error::invalid("empty k-grid"));
    }
    let d = kernel.dim() as i32;
    let l = kernel.range() as f64;
    let scan = scan_grid(kernel, grid, 0.0, 0.0, 0.0);
    let eta_outer = scan.outer.value;
    let eta_top = scan.top.value;
    Ok(FittedKernelConstants {
        c: (kernel.max_weight() * l.powi(d)).max(kernel.sigma2() / (l * l)),
        c1: scan.ratio_min,
        c2: scan.ratio_max,
        eta: eta_outer.min(eta_top),
    })
}

/// Tensor grid over `[-pi, pi]^d` (endpoints included), a tensor grid over the
/// small-`k` cube `|k|_inf <= 1/L`, and `fill` points of the additive `R_d`
/// low-discrepancy sequence.
pub fn assumption_d_grid(d: usize, range: u32, per_axis: usize, fill: usize) -> Vec<FourierPoint> {
    let per_axis = per_axis.max(2);
    let inv_l = 1.0 / range as f64;
    let full = linspace(-PI, PI, per_axis);
    let small = linspace(-inv_l, inv_l, per_axis);
    let mut out = tensor(&full, d);
    out.extend(tensor(&small, d).into_iter().filter(|k| !k.is_origin()));
    out.extend(
        low_discrepancy(d, fill)
            .into_iter()
            .map(|u| FourierPoint(u.into_iter().map(|x| PI * (2.0 * x - 1.0)).collect())),
    );
    out
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

fn tensor(axis: &[f64], d: usize) -> Vec<FourierPoint> {
    let n = axis.len();
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut k = Vec::with_capacity(d);
            for _ in 0..d {
                k.push(axis[idx % n]);
                idx /= n;
            }
            FourierPoint(k)
        })
        .collect()
}

/// First `n` points of the `R_d` sequence in `[0, 1)^d`.
pub fn low_discrepancy(d: usize, n: usize) -> Vec<Vec<f64>> {
    // phi_d is the positive root of x^{d+1} = x + 1.
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
    }
    let alpha: Vec<f64> = (1..=d).map(|i| phi.powi(-(i as i32)).fract()).collect();
    (1..=n)
        .map(|j| alpha.iter().map(|a| (0.5 + a * j as f64).fract()).collect())
        .collect()
}
