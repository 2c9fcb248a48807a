//! The given data of the recursion: `g_m(k;z)`, `e_m(k;z)` and their exact
//! derivatives at `k = 0`.
//!
//! Three families are provided. The pure random walk is exactly solvable. The
//! synthetic family has power-law coefficients with closed-form bound constants. The
//! tabulated family reads finite lattice tables `g_m(x)`, `e_m(x)` and transforms them
//! by direct summation, so every derivative at the origin is an exact lattice sum.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{check_lattice_symmetry, norm_sq_i, LatticeEntry, StepKernel};
use crate::numerics::{power_tail, power_tail_bound};

/// Orders below this use a precomputed `m^-theta` table.
const DECAY_CACHE: usize = 1 << 16;

/// Behaviour of a model beyond its highest declared order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailConvention {
    /// `g_m = e_m = 0` for `m > M`.
    Zero,
    /// Coefficients beyond `M` are unknown; evolving past them is an error.
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelOrder {
    Unbounded,
    Finite { order: usize, tail: TailConvention },
}

/// How the synthetic coefficients of order `m >= 2` depend on `z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZPower {
    /// `z^q` for every order.
    Fixed(u32),
    /// `z^m`.
    Order(OrderTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderTag {
    #[serde(rename = "m")]
    M,
}

impl Default for ZPower {
    fn default() -> Self {
        ZPower::Fixed(1)
    }
}

/// Parameters of the synthetic power-law family
/// `g_m(k;z) = beta0 z^p m^-theta D(k)^2`, `e_m(k;z) = beta_e z^p m^-theta D(k)^2` (m >= 2),
/// with `p` fixed or equal to `m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticFamilySpec {
    pub beta0: f64,
    #[serde(default)]
    pub beta_e: f64,
    pub theta: f64,
    #[serde(default)]
    pub z_power: ZPower,
}

impl SyntheticFamilySpec {
    pub fn new(beta0: f64, beta_e: f64, theta: f64) -> Self {
        Self {
            beta0,
            beta_e,
            theta,
            z_power: ZPower::Fixed(1),
        }
    }

    pub fn with_z_power(mut self, z_power: ZPower) -> Self {
        self.z_power = z_power;
        self
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticModel {
    spec: SyntheticFamilySpec,
    kernel: StepKernel,
    decay: Arc<[f64]>,
}

impl SyntheticModel {
    pub fn spec(&self) -> &SyntheticFamilySpec {
        &self.spec
    }

    #[inline]
    fn decay(&self, m: usize) -> f64 {
        if m < self.decay.len() {
            self.decay[m]
        } else {
            (m as f64).powf(-self.spec.theta)
        }
    }

    #[inline]
    fn power(&self, m: usize) -> i32 {
        match self.spec.z_power {
            ZPower::Fixed(q) => q as i32,
            ZPower::Order(_) => m as i32,
        }
    }

    #[inline]
    fn zq(&self, m: usize, z: f64) -> f64 {
        z.powi(self.power(m))
    }

    fn dzq(&self, m: usize, z: f64) -> f64 {
        let q = self.power(m);
        if q == 0 {
            0.0
        } else {
            q as f64 * z.powi(q - 1)
        }
    }
}

/// A finite symmetric lattice table `h(x)`.
#[derive(Clone, Debug, Default)]
pub struct LatticeTable {
    points: Vec<Vec<i64>>,
    weights: Vec<f64>,
}

impl LatticeTable {
    pub fn new(points: Vec<Vec<i64>>, weights: Vec<f64>) -> Self {
        assert_eq!(points.len(), weights.len());
        Self { points, weights }
    }

    fn from_entries(entries: &[LatticeEntry]) -> Self {
        Self {
            points: entries.iter().map(|e| e.x.clone()).collect(),
            weights: entries.iter().map(|e| e.weight.value()).collect(),
        }
    }

    pub fn points(&self) -> &[Vec<i64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `sum_x cos(k.x) h(x)`.
    pub fn fourier(&self, k: &[f64]) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| {
                let phase: f64 = k.iter().zip(x).map(|(a, &b)| a * b as f64).sum();
                phase.cos() * w
            })
            .sum()
    }

    /// `sum_x h(x)`.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `-sum_x |x|^2 h(x)`, the Laplacian of the transform at the origin.
    pub fn laplacian(&self) -> f64 {
        -self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| norm_sq_i(x) * w)
            .sum::<f64>()
    }
}

#[derive(Clone, Debug)]
pub struct TabulatedModel {
    kernel: StepKernel,
    order: usize,
    tail: TailConvention,
    /// Indexed by `m`; entries 0 and 1 unused.
    z_powers: Vec<i32>,
    g: Vec<LatticeTable>,
    e: Vec<LatticeTable>,
}

impl TabulatedModel {
    /// Builds a model from tables for orders `2..=M` (`g[m-2]`, `e[m-2]`); `g_1 = z D`.
    pub fn new(
        kernel: StepKernel,
        z_powers: Vec<i32>,
        g: Vec<LatticeTable>,
        e: Vec<LatticeTable>,
        tail: TailConvention,
    ) -> Result<Self> {
        let order = z_powers.len() + 1;
        if g.len() != z_powers.len() || e.len() > z_powers.len() {
            return Err(Error::invalid(format!(
                "tables for orders 2..={order} expected: {} g tables, {} e tables, {} z powers",
                g.len(),
                e.len(),
                z_powers.len()
            )));
        }
        let d = kernel.dim();
        let mut all_g = vec![LatticeTable::default(), LatticeTable::default()];
        let mut all_e = vec![LatticeTable::default(), LatticeTable::default()];
        for (i, t) in g.into_iter().enumerate() {
            validate_table(&format!("g_{}", i + 2), d, &t)?;
            all_g.push(t);
        }
        let mut e = e;
        e.resize(z_powers.len(), LatticeTable::default());
        for (i, t) in e.into_iter().enumerate() {
            validate_table(&format!("e_{}", i + 2), d, &t)?;
            all_e.push(t);
        }
        let mut powers = vec![0, 1];
        powers.extend(z_powers);
        Ok(Self {
            kernel,
            order,
            tail,
            z_powers: powers,
            g: all_g,
            e: all_e,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn g_table(&self, m: usize) -> Option<&LatticeTable> {
        (2..=self.order).contains(&m).then(|| &self.g[m])
    }

    pub fn e_table(&self, m: usize) -> Option<&LatticeTable> {
        (2..=self.order).contains(&m).then(|| &self.e[m])
    }

    pub fn z_power(&self, m: usize) -> i32 {
        self.z_powers.get(m).copied().unwrap_or(0)
    }
}

fn validate_table(name: &str, d: usize, t: &LatticeTable) -> Result<()> {
    if let Some(x) = t.points.iter().find(|x| x.len() != d) {
        return Err(Error::invalid(format!(
            "{name}: point {x:?} does not have {d} coordinates"
        )));
    }
    check_lattice_symmetry(name, &t.points, &t.weights)
}

/// On-disk tabulated model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedModelFile {
    #[serde(rename = "M")]
    pub order: usize,
    /// `p(m)` for `m = 2..=M`.
    pub z_powers: Vec<i32>,
    #[serde(default = "default_tail")]
    pub tail: TailConvention,
    pub tables: Vec<OrderTables>,
}

fn default_tail() -> TailConvention {
    TailConvention::Zero
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderTables {
    pub m: usize,
    #[serde(default)]
    pub g: Vec<LatticeEntry>,
    #[serde(default)]
    pub e: Vec<LatticeEntry>,
}

/// Provider of the recursion coefficients.
#[derive(Clone, Debug)]
pub enum ModelCoefficients {
    PureRandomWalk { kernel: StepKernel },
    Synthetic(SyntheticModel),
    Tabulated(TabulatedModel),
}

/// `g_1 = z D`, all other coefficients zero.
pub fn pure_random_walk(kernel: StepKernel) -> ModelCoefficients {
    ModelCoefficients::PureRandomWalk { kernel }
}

pub fn synthetic_theta(spec: SyntheticFamilySpec, kernel: StepKernel) -> Result<ModelCoefficients> {
    if !(spec.theta > 2.0) {
        return Err(Error::invalid(format!(
            "synthetic family needs theta > 2, got {}",
            spec.theta
        )));
    }
    if !spec.beta0.is_finite() || !spec.beta_e.is_finite() {
        return Err(Error::invalid("synthetic amplitudes must be finite"));
    }
    let decay: Arc<[f64]> = (0..DECAY_CACHE)
        .map(|m| if m == 0 { 0.0 } else { (m as f64).powf(-spec.theta) })
        .collect();
    Ok(ModelCoefficients::Synthetic(SyntheticModel { spec, kernel, decay }))
}

/// Parses a tabulated model file for the given kernel.
pub fn tabulated_from_json(text: &str, kernel: StepKernel) -> Result<ModelCoefficients> {
    let file: TabulatedModelFile = serde_json::from_str(text)?;
    tabulated_from_file(file, kernel)
}

pub fn load_xspace_model(path: &Path, kernel: StepKernel) -> Result<ModelCoefficients> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    tabulated_from_json(&text, kernel)
}

pub fn tabulated_from_file(file: TabulatedModelFile, kernel: StepKernel) -> Result<ModelCoefficients> {
    if file.order < 1 {
        return Err(Error::invalid("tabulated model needs M >= 1"));
    }
    if file.z_powers.len() + 1 != file.order {
        return Err(Error::invalid(format!(
            "z_powers lists {} powers but M={} needs {}",
            file.z_powers.len(),
            file.order,
            file.order - 1
        )));
    }
    let mut by_order: BTreeMap<usize, &OrderTables> = BTreeMap::new();
    for t in &file.tables {
        if t.m == 0 || t.m > file.order {
            return Err(Error::invalid(format!("table for order m={} outside 1..=M", t.m)));
        }
        if by_order.insert(t.m, t).is_some() {
            return Err(Error::invalid(format!("duplicate tables for order m={}", t.m)));
        }
    }
    if let Some(first) = by_order.get(&1) {
        check_first_order(first, &kernel)?;
    }
    let mut g = Vec::new();
    let mut e = Vec::new();
    for m in 2..=file.order {
        let (gt, et) = by_order
            .get(&m)
            .map(|t| (LatticeTable::from_entries(&t.g), LatticeTable::from_entries(&t.e)))
            .unwrap_or_default();
        g.push(gt);
        e.push(et);
    }
    Ok(ModelCoefficients::Tabulated(TabulatedModel::new(
        kernel,
        file.z_powers,
        g,
        e,
        file.tail,
    )?))
}

fn check_first_order(t: &OrderTables, kernel: &StepKernel) -> Result<()> {
    if t.e.iter().any(|e| e.weight.value() != 0.0) {
        return Err(Error::InconsistentFirstOrder("e_1 must vanish".into()));
    }
    let mut table: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for e in &t.g {
        *table.entry(e.x.clone()).or_default() += e.weight.value();
    }
    let mut expected: BTreeMap<Vec<i64>, f64> = kernel.support().collect();
    for (x, w) in &table {
        let d = expected.remove(x).unwrap_or(0.0);
        if (d - w).abs() > 1e-12 {
            return Err(Error::InconsistentFirstOrder(format!(
                "g_1({x:?}) = {w} but D({x:?}) = {d}"
            )));
        }
    }
    if let Some((x, w)) = expected.into_iter().find(|(_, w)| *w != 0.0) {
        return Err(Error::InconsistentFirstOrder(format!(
            "g_1 table is missing {x:?} where D = {w}"
        )));
    }
    Ok(())
}

/// Bound on the tail `sum_{m > M} |t_m|` of an m-sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TailKind {
    /// `g_m(0;z)`
    G,
    /// `m g_m(0;z)`
    MG,
    /// `(m-1) g_m(0;z)`
    M1G,
    /// `grad^2 g_m(0;z)`
    LapG,
    /// `e_m(0;z)`
    E,
}

impl ModelCoefficients {
    pub fn kernel(&self) -> &StepKernel {
        match self {
            ModelCoefficients::PureRandomWalk { kernel } => kernel,
            ModelCoefficients::Synthetic(s) => &s.kernel,
            ModelCoefficients::Tabulated(t) => &t.kernel,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelCoefficients::PureRandomWalk { .. } => "pure_random_walk",
            ModelCoefficients::Synthetic(_) => "synthetic",
            ModelCoefficients::Tabulated(_) => "tabulated",
        }
    }

    /// Model-intrinsic decay exponent, when the model has one.
    pub fn theta(&self) -> Option<f64> {
        match self {
            ModelCoefficients::Synthetic(s) => Some(s.spec.theta),
            _ => None,
        }
    }

    pub fn order(&self) -> ModelOrder {
        match self {
            ModelCoefficients::PureRandomWalk { .. } => ModelOrder::Finite {
                order: 1,
                tail: TailConvention::Zero,
            },
            ModelCoefficients::Synthetic(_) => ModelOrder::Unbounded,
            ModelCoefficients::Tabulated(t) => ModelOrder::Finite {
                order: t.order,
                tail: t.tail,
            },
        }
    }

    /// Highest order whose coefficients may be nonzero, if finite.
    pub fn last_nonzero_order(&self) -> Option<usize> {
        match self.order() {
            ModelOrder::Unbounded => None,
            ModelOrder::Finite { order, .. } => Some(order),
        }
    }

    /// Errors when step `n -> n+1` needs a coefficient the model does not define.
    pub fn require_order(&self, n: usize) -> Result<()> {
        if let ModelOrder::Finite {
            order,
            tail: TailConvention::Unknown,
        } = self.order()
        {
            if n + 1 > order {
                return Err(Error::Truncation { n: order, order });
            }
        }
        Ok(())
    }

    pub fn g(&self, m: usize, k: &[f64], z: f64) -> f64 {
        if m == 0 {
            return 0.0;
        }
        if m == 1 {
            return z * self.kernel().fourier(k);
        }
        match self {
            ModelCoefficients::PureRandomWalk { .. } => 0.0,
            ModelCoefficients::Synthetic(s) => {
                let dk = s.kernel.fourier(k);
                s.spec.beta0 * s.zq(m, z) * s.decay(m) * dk * dk
            }
            ModelCoefficients::Tabulated(t) => match t.g_table(m) {
                Some(tab) => z.powi(t.z_power(m)) * tab.fourier(k),
                None => 0.0,
            },
        }
    }

    pub fn e(&self, m: usize, k: &[f64], z: f64) -> f64 {
        if m <= 1 {
            return 0.0;
        }
        match self {
            ModelCoefficients::PureRandomWalk { .. } => 0.0,
            ModelCoefficients::Synthetic(s) => {
                if s.spec.beta_e == 0.0 {
                    return 0.0;
                }
                let dk = s.kernel.fourier(k);
                s.spec.beta_e * s.zq(m, z) * s.decay(m) * dk * dk
            }
            ModelCoefficients::Tabulated(t) => match t.e_table(m) {
                Some(tab) if !tab.is_empty() => z.powi(t.z_power(m)) * tab.fourier(k),
                _ => 0.0,
            },
        }
    }

    /// `[g_0, g_1, ..., g_upto]` at one wave vector (`g_0 = 0`), sharing the kernel
    /// evaluation across orders.
    pub fn g_series(&self, k: &[f64], z: f64, upto: usize) -> Vec<f64> {
        let mut out = vec![0.0; upto + 1];
        if upto == 0 {
            return out;
        }
        let dk = self.kernel().fourier(k);
        out[1] = z * dk;
        match self {
            ModelCoefficients::PureRandomWalk { .. } => {}
            ModelCoefficients::Synthetic(s) => {
                let amp = s.spec.beta0 * dk * dk;
                for (m, slot) in out.iter_mut().enumerate().skip(2) {
                    *slot = amp * s.zq(m, z) * s.decay(m);
                }
            }
            ModelCoefficients::Tabulated(t) => {
                for m in 2..=upto.min(t.order) {
                    out[m] = self.g(m, k, z);
                }
            }
        }
        out
    }

    /// `[e_0, ..., e_upto]` at one wave vector.
    pub fn e_series(&self, k: &[f64], z: f64, upto: usize) -> Vec<f64> {
        let mut out = vec![0.0; upto + 1];
        match self {
            ModelCoefficients::PureRandomWalk { .. } => {}
            ModelCoefficients::Synthetic(s) => {
                if s.spec.beta_e != 0.0 && upto >= 2 {
                    let dk = s.kernel.fourier(k);
                    let amp = s.spec.beta_e * dk * dk;
                    for (m, slot) in out.iter_mut().enumerate().skip(2) {
                        *slot = amp * s.zq(m, z) * s.decay(m);
                    }
                }
            }
            ModelCoefficients::Tabulated(t) => {
                for m in 2..=upto.min(t.order) {
                    out[m] = self.e(m, k, z);
                }
            }
        }
        out
    }

    /// `g_m(0;z)`.
    pub fn g0(&self, m: usize, z: f64) -> f64 {
        match (self, m) {
            (_, 0) => 0.0,
            (_, 1) => z,
            (ModelCoefficients::PureRandomWalk { .. }, _) => 0.0,
            (ModelCoefficients::Synthetic(s), _) => s.spec.beta0 * s.zq(m, z) * s.decay(m),
            (ModelCoefficients::Tabulated(t), _) => t.g_table(m).map_or(0.0, |tab| z.powi(t.z_power(m)) * tab.mass()),
        }
    }

    /// `e_m(0;z)`.
    pub fn e0(&self, m: usize, z: f64) -> f64 {
        match (self, m) {
            (_, 0 | 1) => 0.0,
            (ModelCoefficients::PureRandomWalk { .. }, _) => 0.0,
            (ModelCoefficients::Synthetic(s), _) => s.spec.beta_e * s.zq(m, z) * s.decay(m),
            (ModelCoefficients::Tabulated(t), _) => t.e_table(m).map_or(0.0, |tab| z.powi(t.z_power(m)) * tab.mass()),
        }
    }

    /// `grad^2 g_m(0;z)`.
    pub fn g_lap(&self, m: usize, z: f64) -> f64 {
        let sigma2 = self.kernel().sigma2();
        match (self, m) {
            (_, 0) => 0.0,
            (_, 1) => -z * sigma2,
            (ModelCoefficients::PureRandomWalk { .. }, _) => 0.0,
            // grad^2 (D^2)(0) = 2 D grad^2 D + 2 |grad D|^2 = -2 sigma^2
            (ModelCoefficients::Synthetic(s), _) => -2.0 * sigma2 * s.spec.beta0 * s.zq(m, z) * s.decay(m),
            (ModelCoefficients::Tabulated(t), _) => {
                t.g_table(m).map_or(0.0, |tab| z.powi(t.z_power(m)) * tab.laplacian())
            }
        }
    }

    /// `grad^2 e_m(0;z)`.
    pub fn e_lap(&self, m: usize, z: f64) -> f64 {
        let sigma2 = self.kernel().sigma2();
        match (self, m) {
            (_, 0 | 1) => 0.0,
            (ModelCoefficients::PureRandomWalk { .. }, _) => 0.0,
            (ModelCoefficients::Synthetic(s), _) => -2.0 * sigma2 * s.spec.beta_e * s.zq(m, z) * s.decay(m),
            (ModelCoefficients::Tabulated(t), _) => {
                t.e_table(m).map_or(0.0, |tab| z.powi(t.z_power(m)) * tab.laplacian())
            }
        }
    }

    /// Exact `d/dz g_m(0;z)`, when the model provides it.
    pub fn g_dz(&self, m: usize, z: f64) -> Option<f64> {
        Some(match (self, m) {
            (_, 0) => 0.0,
            (_, 1) => 1.0,
            (ModelCoefficients::PureRandomWalk { .. }, _) => 0.0,
            (ModelCoefficients::Synthetic(s), _) => s.spec.beta0 * s.dzq(m, z) * s.decay(m),
            (ModelCoefficients::Tabulated(t), _) => match t.g_table(m) {
                Some(tab) => {
                    let p = t.z_power(m);
                    if p == 0 {
                        0.0
                    } else {
                        p as f64 * z.powi(p - 1) * tab.mass()
                    }
                }
                None => 0.0,
            },
        })
    }

    /// Signed estimate of `sum_{m > m_max} t_m` at `k = 0` with its own error, when the
    /// model's tail is known in closed form.
    pub fn tail_estimate(&self, kind: TailKind, z: f64, m_max: usize) -> Option<(f64, f64)> {
        match self {
            ModelCoefficients::PureRandomWalk { .. } => Some((0.0, 0.0)),
            ModelCoefficients::Tabulated(t) => {
                (m_max >= t.order || t.tail == TailConvention::Zero).then_some((0.0, 0.0))
            }
            ModelCoefficients::Synthetic(s) => {
                let q = match s.spec.z_power {
                    ZPower::Fixed(q) => q as i32,
                    ZPower::Order(_) => return None,
                };
                let zq = z.powi(q);
                let theta = s.spec.theta;
                let m = m_max.max(1);
                let (g_val, g_err) = power_tail(theta, m);
                let (mg_val, mg_err) = power_tail(theta - 1.0, m);
                let b = s.spec.beta0 * zq;
                let (value, err) = match kind {
                    TailKind::G => (b * g_val, b.abs() * g_err),
                    TailKind::MG => (b * mg_val, b.abs() * mg_err),
                    TailKind::M1G => (b * (mg_val - g_val), b.abs() * (mg_err + g_err)),
                    TailKind::LapG => {
                        let c = -2.0 * s.kernel.sigma2() * b;
                        (c * g_val, c.abs() * g_err)
                    }
                    TailKind::E => {
                        let c = s.spec.beta_e * zq;
                        (c * g_val, c.abs() * g_err)
                    }
                };
                // Account for rounding in the closed-form evaluation itself.
                Some((value, err + 4.0 * f64::EPSILON * value.abs()))
            }
        }
    }

    /// Upper bound on `sum_{m > m_max} |t_m|` at `k = 0`, from the model's power-law
    /// envelope (zero beyond a finite order, infinite when unknown).
    pub fn tail_bound(&self, kind: TailKind, z: f64, m_max: usize) -> f64 {
        match self {
            ModelCoefficients::PureRandomWalk { .. } => 0.0,
            ModelCoefficients::Tabulated(t) => {
                if m_max >= t.order || t.tail == TailConvention::Zero {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ModelCoefficients::Synthetic(s) => {
                let theta = s.spec.theta;
                // z^m <= 1 on |z| <= 1; otherwise the per-order family has no power-law tail.
                let zq = match s.spec.z_power {
                    ZPower::Fixed(q) => z.abs().powi(q as i32),
                    ZPower::Order(_) if z.abs() <= 1.0 => 1.0,
                    ZPower::Order(_) => return f64::INFINITY,
                };
                let sigma2 = s.kernel.sigma2();
                let (amp, weight_power) = match kind {
                    TailKind::G => (s.spec.beta0.abs() * zq, 0.0),
                    TailKind::MG | TailKind::M1G => (s.spec.beta0.abs() * zq, 1.0),
                    TailKind::LapG => (2.0 * sigma2 * s.spec.beta0.abs() * zq, 0.0),
                    TailKind::E => (s.spec.beta_e.abs() * zq, 0.0),
                };
                amp * power_tail_bound(theta - weight_power, m_max)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Weight;

    fn d1l1() -> StepKernel {
        StepKernel::uniform_box(1, 1, false).unwrap()
    }

    fn d1l2() -> StepKernel {
        StepKernel::uniform_box(1, 2, false).unwrap()
    }

    fn synth(beta0: f64, theta: f64, kernel: StepKernel) -> ModelCoefficients {
        synthetic_theta(SyntheticFamilySpec::new(beta0, 0.0, theta), kernel).unwrap()
    }

    fn fd_laplacian(f: impl Fn(&[f64]) -> f64, d: usize, h: f64) -> f64 {
        let mut total = 0.0;
        let f0 = f(&vec![0.0; d]);
        for l in 0..d {
            let at = |t: f64| {
                let mut k = vec![0.0; d];
                k[l] = t;
                f(&k)
            };
            total += (-at(2.0 * h) + 16.0 * at(h) - 30.0 * f0 + 16.0 * at(-h) - at(-2.0 * h)) / (12.0 * h * h);
        }
        total
    }

    #[test]
    fn pure_rw_coefficients() {
        let m = pure_random_walk(d1l1());
        assert_eq!(m.g(1, &[0.0], 0.9), 0.9);
        assert_eq!(m.g(2, &[0.7], 0.3), 0.0);
        assert_eq!(m.e(3, &[0.7], 0.3), 0.0);
        assert_eq!(m.g_lap(1, 1.0), -1.0);
        assert_eq!(m.g_dz(1, 0.4), Some(1.0));
    }

    #[test]
    fn synthetic_values() {
        let m = synth(0.01, 3.0, d1l2());
        assert!((m.g(2, &[0.0], 1.0) - 0.00125).abs() < 1e-16);
        assert!((m.g_lap(2, 1.0) + 0.00625).abs() < 1e-16);
        let fd = fd_laplacian(|k| m.g(2, k, 1.0), 1, 1e-2);
        assert!((fd / m.g_lap(2, 1.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn synthetic_taylor_remainder_is_a_squared() {
        let m = synth(0.01, 3.0, d1l2());
        let kernel = m.kernel().clone();
        // Find k with a(k) = 0.1 on the axis by bisection.
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if kernel.gap(&[mid]) < 0.1 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let k = [0.5 * (lo + hi)];
        let a = kernel.gap(&k);
        let rem = m.g(2, &k, 1.0) - m.g(2, &[0.0], 1.0) - a / kernel.sigma2() * m.g_lap(2, 1.0);
        assert!((rem - 1.25e-5).abs() < 1e-12, "{rem}");
    }

    #[test]
    fn synthetic_rejects_small_theta() {
        let r = synthetic_theta(SyntheticFamilySpec::new(0.01, 0.0, 2.0), d1l1());
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn series_match_pointwise() {
        let m = synthetic_theta(SyntheticFamilySpec::new(-0.02, 0.005, 2.5), d1l2()).unwrap();
        let k = [0.37];
        let gs = m.g_series(&k, 0.97, 12);
        let es = m.e_series(&k, 0.97, 12);
        for i in 0..=12 {
            assert!((gs[i] - m.g(i, &k, 0.97)).abs() < 1e-16);
            assert!((es[i] - m.e(i, &k, 0.97)).abs() < 1e-16);
        }
    }

    #[test]
    fn exact_z_derivative_matches_difference() {
        let m = synth(0.01, 3.0, d1l2());
        for order in 1..6 {
            let h = 1e-6;
            let fd = (m.g0(order, 0.9 + h) - m.g0(order, 0.9 - h)) / (2.0 * h);
            assert!((fd - m.g_dz(order, 0.9).unwrap()).abs() < 1e-9);
        }
    }

    fn tabulated_text(g2: &str) -> String {
        format!(
            r#"{{"M": 2, "z_powers": [2], "tables": [
                {{"m": 1, "g": [{{"x": [1], "weight": "1/2"}}, {{"x": [-1], "weight": "1/2"}}]}},
                {{"m": 2, "g": {g2}}}
            ]}}"#
        )
    }

    #[test]
    fn tabulated_pure_rw_matches() {
        let text = r#"{"M": 1, "z_powers": [], "tables": [
            {"m": 1, "g": [{"x": [1], "weight": "1/2"}, {"x": [-1], "weight": "1/2"}]}]}"#;
        let tab = tabulated_from_json(text, d1l1()).unwrap();
        let rw = pure_random_walk(d1l1());
        for k in [0.0, 0.3, 2.0, -3.0] {
            for order in 0..4 {
                assert!((tab.g(order, &[k], 0.8) - rw.g(order, &[k], 0.8)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tabulated_rejects_asymmetric_table() {
        let text = tabulated_text(r#"[{"x": [1], "weight": 0.01}, {"x": [-1], "weight": 0.02}]"#);
        let err = tabulated_from_json(&text, d1l1()).unwrap_err();
        match err {
            Error::SymmetryViolation { table, x, y } => {
                assert_eq!(table, "g_2");
                assert_eq!((x, y), (vec![1], vec![-1]));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn tabulated_rejects_wrong_first_order() {
        let text = r#"{"M": 1, "z_powers": [], "tables": [
            {"m": 1, "g": [{"x": [1], "weight": "1/3"}, {"x": [-1], "weight": "2/3"}]}]}"#;
        assert!(matches!(
            tabulated_from_json(text, d1l1()),
            Err(Error::InconsistentFirstOrder(_))
        ));
    }

    #[test]
    fn tabulated_convolution_table() {
        // g_2(x) = c (D * D)(x) for D uniform on {-1, +1}: weights 1/4, 1/2, 1/4 at -2, 0, 2.
        let c = 0.01 * 2f64.powi(-3);
        let g2 = format!(
            r#"[{{"x": [-2], "weight": {}}}, {{"x": [0], "weight": {}}}, {{"x": [2], "weight": {}}}]"#,
            c / 4.0,
            c / 2.0,
            c / 4.0
        );
        let tab = tabulated_from_json(&tabulated_text(&g2), d1l1()).unwrap();
        for k in [0.0f64, 0.4, 1.9, 3.1] {
            let expect = c * k.cos().powi(2);
            assert!((tab.g(2, &[k], 1.0) - expect).abs() < 1e-16);
        }
        assert!((tab.g_lap(2, 1.0) + 2.0 * c).abs() < 1e-16);
        // z power 2 declared for m = 2.
        assert!((tab.g0(2, 0.5) - 0.25 * c).abs() < 1e-16);
        assert!((tab.g_dz(2, 0.5).unwrap() - c).abs() < 1e-16);
    }

    #[test]
    fn unknown_tail_truncates() {
        let k = d1l1();
        let tab = TabulatedModel::new(
            k,
            vec![2],
            vec![LatticeTable::new(vec![vec![0]], vec![0.01])],
            vec![],
            TailConvention::Unknown,
        )
        .unwrap();
        let m = ModelCoefficients::Tabulated(tab);
        assert!(m.require_order(1).is_ok());
        assert!(matches!(m.require_order(2), Err(Error::Truncation { n: 2, order: 2 })));
    }

    #[test]
    fn per_order_z_power() {
        let spec: SyntheticFamilySpec = serde_json::from_str(r#"{"beta0": 0.01, "theta": 3, "z_power": "m"}"#).unwrap();
        assert_eq!(spec.z_power, ZPower::Order(OrderTag::M));
        let m = synthetic_theta(spec, d1l2()).unwrap();
        assert!((m.g0(3, 0.5) - 0.01 * 0.125 / 27.0).abs() < 1e-18);
        // d/dz beta0 z^m m^-theta = beta0 m z^(m-1) m^-theta
        assert!((m.g_dz(3, 0.5).unwrap() - 0.01 * 3.0 * 0.25 / 27.0).abs() < 1e-18);
        assert!(m.tail_bound(TailKind::G, 1.01, 100).is_infinite());
        let linear: SyntheticFamilySpec = serde_json::from_str(r#"{"beta0": 0.01, "theta": 3}"#).unwrap();
        assert_eq!(linear.z_power, ZPower::Fixed(1));
    }

    #[test]
    fn tail_estimate_within_bound() {
        let m = synth(-0.02, 2.5, d1l2());
        for kind in [TailKind::G, TailKind::MG, TailKind::M1G, TailKind::LapG] {
            let (value, err) = m.tail_estimate(kind, 0.9, 200).unwrap();
            assert!(value.abs() <= m.tail_bound(kind, 0.9, 200) + err);
        }
        let direct: f64 = (201..2_000_000).map(|j| m.g0(j, 0.9)).sum();
        let (value, _) = m.tail_estimate(TailKind::G, 0.9, 200).unwrap();
        assert!((value - direct).abs() < 1e-10 * value.abs() + 1e-11);
    }

    #[test]
    fn weight_parse_forms() {
        assert_eq!(Weight::parse("3/4").unwrap().value(), 0.75);
        assert_eq!(Weight::parse("2").unwrap().value(), 2.0);
        assert_eq!(Weight::parse("0.125").unwrap().value(), 0.125);
        assert!(Weight::parse("1/0").is_err());
    }
}
