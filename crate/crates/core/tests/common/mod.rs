//! Independent reference computations used by the integration tests. Nothing here calls
//! the solver it is meant to check.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lacerec::kernel::{LatticeEntry, Weight};
use lacerec::model::{OrderTables, TabulatedModelFile, TailConvention};

/// Every point of `{-r..r}^d`.
pub fn box_points(d: usize, r: i64) -> Vec<Vec<i64>> {
    let side = (2 * r + 1) as usize;
    (0..side.pow(d as u32))
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let c = (idx % side) as i64 - r;
                    idx /= side;
                    c
                })
                .collect()
        })
        .collect()
}

/// `D(k)` of the uniform box kernel, written as a product of 1-d Dirichlet kernels.
pub fn box_dhat(k: &[f64], l: u32, include_origin: bool) -> f64 {
    let side = (2 * l + 1) as f64;
    let full: f64 = k
        .iter()
        .map(|&t| 1.0 + 2.0 * (1..=l).map(|j| (j as f64 * t).cos()).sum::<f64>())
        .product();
    let count = side.powi(k.len() as i32);
    if include_origin {
        full / count
    } else {
        (full - 1.0) / (count - 1.0)
    }
}

/// Sparse lattice function.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub points: Vec<Vec<i64>>,
    pub weights: Vec<f64>,
}

impl Table {
    pub fn fourier(&self, k: &[f64]) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * x.iter().zip(k).map(|(&a, b)| a as f64 * b).sum::<f64>().cos())
            .sum()
    }

    pub fn range(&self) -> i64 {
        self.points.iter().flatten().map(|c| c.abs()).max().unwrap_or(0)
    }

    fn entries(&self) -> Vec<LatticeEntry> {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(x, &w)| LatticeEntry {
                x: x.clone(),
                weight: Weight::Float(w),
            })
            .collect()
    }
}

pub fn box_kernel_table(d: usize, l: u32, include_origin: bool) -> Table {
    let pts: Vec<Vec<i64>> = box_points(d, l as i64)
        .into_iter()
        .filter(|x| include_origin || x.iter().any(|&c| c != 0))
        .collect();
    let w = 1.0 / pts.len() as f64;
    Table {
        weights: vec![w; pts.len()],
        points: pts,
    }
}

/// A random model with hyperoctahedrally symmetric tables of range `r` for orders `2..=M`.
pub struct RandomModel {
    pub d: usize,
    pub g: Vec<Table>,
    pub e: Vec<Table>,
    pub z_powers: Vec<i32>,
}

impl RandomModel {
    pub fn new(d: usize, r: i64, order: usize, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| {
            // Weight depends on the sorted |x_i| only, so every lattice symmetry holds.
            let mut by_shape = std::collections::BTreeMap::new();
            let pts = box_points(d, r);
            let mut weights = Vec::with_capacity(pts.len());
            for x in &pts {
                let mut shape: Vec<i64> = x.iter().map(|c| c.abs()).collect();
                shape.sort_unstable();
                let w = *by_shape
                    .entry(shape)
                    .or_insert_with(|| scale * (rng.random::<f64>() - 0.5) / pts.len() as f64);
                weights.push(w);
            }
            Table { points: pts, weights }
        };
        let g = (2..=order).map(|_| draw(&mut rng)).collect();
        let e = (2..=order).map(|_| draw(&mut rng)).collect();
        let z_powers = (2..=order).map(|m| if m % 2 == 0 { 1 } else { m as i32 }).collect();
        Self { d, g, e, z_powers }
    }

    pub fn order(&self) -> usize {
        self.g.len() + 1
    }

    pub fn file(&self) -> TabulatedModelFile {
        TabulatedModelFile {
            order: self.order(),
            z_powers: self.z_powers.clone(),
            tail: TailConvention::Zero,
            tables: (2..=self.order())
                .map(|m| OrderTables {
                    m,
                    g: self.g[m - 2].entries(),
                    e: self.e[m - 2].entries(),
                })
                .collect(),
        }
    }
}

/// Dense x-space solution of the recursion on a box large enough to hold `f_0..f_N`.
pub struct XSpaceSolution {
    pub d: usize,
    pub radius: i64,
    side: usize,
    coords: Vec<Vec<i64>>,
    /// `f[n]` flattened over `{-R..R}^d`.
    pub f: Vec<Vec<f64>>,
}

impl XSpaceSolution {
    fn index(&self, x: &[i64]) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for &c in x {
            if c.abs() > self.radius {
                return None;
            }
            idx += (c + self.radius) as usize * stride;
            stride *= self.side;
        }
        Some(idx)
    }

    /// Flat offset of a displacement; valid whenever the target stays in the box.
    fn offset(&self, y: &[i64]) -> isize {
        let mut off = 0isize;
        let mut stride = 1isize;
        for &c in y {
            off += c as isize * stride;
            stride *= self.side as isize;
        }
        off
    }

    /// `(sum_x f_n(x) cos(k.x), sum_x |f_n(x)|)`.
    pub fn fourier(&self, n: usize, k: &[f64]) -> (f64, f64) {
        let mut value = 0.0;
        let mut l1 = 0.0;
        for (i, &v) in self.f[n].iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let x = &self.coords[i];
            let phase: f64 = x.iter().zip(k).map(|(&a, b)| a as f64 * b).sum();
            value += v * phase.cos();
            l1 += v.abs();
        }
        (value, l1)
    }
}

/// `f_{n+1}(x) = sum_m (h_m * f_{n+1-m})(x) + e_{n+1}(x)` with `h_1 = z D`,
/// `h_m = z^p(m) g_m`, by direct convolution.
pub fn xspace_solve(kernel: &Table, model: &RandomModel, z: f64, n_max: usize) -> XSpaceSolution {
    let d = model.d;
    let order = model.order();
    let reach = model.g.iter().map(Table::range).chain([kernel.range()]).max().unwrap();
    let radius = reach * n_max as i64;
    let side = (2 * radius + 1) as usize;
    let cells = side.pow(d as u32);
    let mut sol = XSpaceSolution {
        d,
        radius,
        side,
        coords: box_points(d, radius),
        f: Vec::with_capacity(n_max + 1),
    };
    let mut f0 = vec![0.0; cells];
    f0[sol.index(&vec![0; d]).unwrap()] = 1.0;
    sol.f.push(f0);
    let mut steps: Vec<Table> = vec![Table::default(), scaled(kernel, z)];
    for m in 2..=order {
        steps.push(scaled(&model.g[m - 2], z.powi(model.z_powers[m - 2])));
    }
    for n in 0..n_max {
        let mut next = vec![0.0; cells];
        for m in 1..=order.min(n + 1) {
            let src = &sol.f[n + 1 - m];
            // supp f_{n+1-m} has radius <= reach (n+1-m), so every target stays in the box.
            for (y, w) in steps[m].points.iter().zip(&steps[m].weights) {
                if *w == 0.0 {
                    continue;
                }
                let off = sol.offset(y);
                for (i, &v) in src.iter().enumerate() {
                    if v != 0.0 {
                        next[(i as isize + off) as usize] += w * v;
                    }
                }
            }
        }
        if n + 1 >= 2 && n + 1 <= order {
            let e = &model.e[n + 1 - 2];
            let p = z.powi(model.z_powers[n + 1 - 2]);
            for (x, w) in e.points.iter().zip(&e.weights) {
                next[sol.index(x).unwrap()] += p * w;
            }
        }
        sol.f.push(next);
    }
    sol
}

fn scaled(t: &Table, c: f64) -> Table {
    Table {
        points: t.points.clone(),
        weights: t.weights.iter().map(|w| w * c).collect(),
    }
}

/// `zeta(s) - 1 = sum_{m>=2} m^-s`: direct sum to `M` plus a four-term Euler-Maclaurin tail.
pub fn riemann_zeta_minus_one(s: f64) -> f64 {
    let m = 2000usize;
    // Sum small terms first.
    let head: f64 = (2..=m).rev().map(|j| (j as f64).powf(-s)).sum();
    let x = m as f64;
    let tail = x.powf(1.0 - s) / (s - 1.0) - 0.5 * x.powf(-s) + s / 12.0 * x.powf(-s - 1.0)
        - s * (s + 1.0) * (s + 2.0) / 720.0 * x.powf(-s - 3.0);
    head + tail
}

/// Critical point of the synthetic family with `g_m(0;z) = beta0 z m^-theta` for `m >= 2`:
/// `1 - z - beta0 z (zeta(theta) - 1) = 0`.
pub fn synthetic_zc_linear(beta0: f64, theta: f64) -> f64 {
    1.0 / (1.0 + beta0 * riemann_zeta_minus_one(theta))
}

/// Five-point finite-difference Laplacian of `f` at the origin of `R^d`.
pub fn fd_laplacian(f: impl Fn(&[f64]) -> f64, d: usize, h: f64) -> f64 {
    let f0 = f(&vec![0.0; d]);
    let mut lap = 0.0;
    for i in 0..d {
        let at = |t: f64| {
            let mut k = vec![0.0; d];
            k[i] = t;
            f(&k)
        };
        lap += (-at(2.0 * h) + 16.0 * at(h) - 30.0 * f0 + 16.0 * at(-h) - at(-2.0 * h)) / (12.0 * h * h);
    }
    lap
}

/// `S(n) = sum_{m=2}^n m^-a sum_{j=n-m+1}^n j^-b` as a literal double loop.
pub fn conv_double_sum(a: f64, b: f64, n: usize) -> f64 {
    let mut s = 0.0;
    for m in 2..=n {
        let mut inner = 0.0;
        for j in (n - m + 1)..=n {
            inner += (j as f64).powf(-b);
        }
        s += (m as f64).powf(-a) * inner;
    }
    s
}

/// `count` uniform points of `[-pi, pi]^d`.
pub fn random_k(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..d).map(|_| PI * (2.0 * rng.random::<f64>() - 1.0)).collect())
        .collect()
}

/// OLS slope of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
