//! Truncated and maximal singular integrals against discrete measures, the
//! centred maximal function, weak (1,1) constants, operator norms, the
//! gluing lemma and the two tail bounds.
//!
//! Every integral here is a finite sum over atoms. Suprema over the
//! truncation radius are exact on supports of at most [`EXACT_SHELL_MAX`]
//! points: `eps -> T_eps f(x)` only changes at the distances `d(x, y)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{power_iteration_norm, Kernel, POWER_MAX_STEPS, POWER_TOL};
use crate::rng::{self, Rng};
use crate::space::{log_radius_grid, upper_regularity_exact, DiscreteMeasure, Metric, Support};

pub const EXACT_SHELL_MAX: usize = 2048;
pub const GRID_PER_OCTAVE: usize = 64;

/// Singular integral operator of a kernel against a discrete measure.
/// Evaluation points are all points of the support, including zero-weight ones.
pub struct SioOperator<'a> {
    kernel: &'a Kernel,
    support: &'a Support,
    weights: Vec<f64>,
}

/// Distances from one point to every weighted atom, sorted by (distance, index).
struct Row {
    dist: Vec<f64>,
    idx: Vec<u32>,
}

impl<'a> SioOperator<'a> {
    pub fn new(kernel: &'a Kernel, mu: &'a DiscreteMeasure) -> Result<Self> {
        match mu.support() {
            Support::Metric(_) if !kernel.is_radial() => {
                return Err(Error::invalid(format!(
                    "kernel {} needs coordinates; on an abstract metric space only kernels of the distance apply",
                    kernel.name()
                )))
            }
            Support::Cloud(c) if c.space() != &kernel.space => {
                return Err(Error::invalid(format!(
                    "kernel lives on a {}-dimensional space with {:?}, support on {}-dimensional {:?}",
                    kernel.space.dim,
                    kernel.space.norm,
                    c.space().dim,
                    c.space().norm
                )))
            }
            _ => {}
        }
        Ok(SioOperator {
            kernel,
            support: mu.support(),
            weights: mu.weights().to_vec(),
        })
    }

    /// Same kernel and support, weights zeroed off `keep`.
    pub fn restricted(&self, keep: &[bool]) -> Self {
        SioOperator {
            kernel: self.kernel,
            support: self.support,
            weights: self
                .weights
                .iter()
                .zip(keep)
                .map(|(w, k)| if *k { *w } else { 0.0 })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kernel(&self) -> &Kernel {
        self.kernel
    }

    /// True when maximal values are exact suprema over all `eps > 0`.
    pub fn is_exact(&self) -> bool {
        self.len() <= EXACT_SHELL_MAX
    }

    /// Two-point kernel `K(x_i, x_j)`; the caller guarantees `i != j` in distance.
    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        match self.support {
            Support::Cloud(c) => {
                let (a, b) = (c.point(i), c.point(j));
                let mut d = [0.0f64; 8];
                if a.len() <= 8 {
                    for k in 0..a.len() {
                        d[k] = a[k] - b[k];
                    }
                    self.kernel.eval(&d[..a.len()])
                } else {
                    let v: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                    self.kernel.eval(&v)
                }
            }
            Support::Metric(m) => self.kernel.eval_radial(m.dist(i, j)).unwrap_or(f64::NAN),
        }
    }

    fn row(&self, i: usize) -> Row {
        let mut v: Vec<(f64, u32)> = (0..self.len())
            .filter(|&j| self.weights[j] > 0.0)
            .map(|j| (self.support.dist(i, j), j as u32))
            .collect();
        v.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Row {
            dist: v.iter().map(|p| p.0).collect(),
            idx: v.iter().map(|p| p.1).collect(),
        }
    }

    /// `T_eps f(x_i) = sum_{d(x_i, y) > eps} K(x_i, y) f(y) w(y)`.
    pub fn truncated(&self, f: &[f64], eps: f64, i: usize) -> Result<f64> {
        check_eps(eps)?;
        self.check_f(f)?;
        Ok((0..self.len())
            .filter(|&j| self.weights[j] > 0.0 && self.support.dist(i, j) > eps)
            .map(|j| self.pair(i, j) * f[j] * self.weights[j])
            .sum())
    }

    pub fn truncated_all(&self, f: &[f64], eps: f64) -> Result<Vec<f64>> {
        check_eps(eps)?;
        self.check_f(f)?;
        (0..self.len()).into_par_iter().map(|i| self.truncated(f, eps, i)).collect()
    }

    fn check_f(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::invalid(format!("f has {} values for {} points", f.len(), self.len())));
        }
        Ok(())
    }

    /// Truncation radii realizing every distinct value of `eps -> T_eps f(x_i)`:
    /// half the smallest positive distance, then each distinct positive distance.
    pub fn shell_grid(&self, i: usize) -> Vec<f64> {
        let row = self.row(i);
        let mut grid = Vec::new();
        for &d in row.dist.iter().filter(|d| **d > 0.0) {
            if grid.is_empty() {
                grid.push(d / 2.0);
            }
            if grid.last() != Some(&d) {
                grid.push(d);
            }
        }
        grid
    }

    /// Default grid for large supports: 64 radii per octave from half the
    /// smallest positive distance up to the diameter.
    pub fn default_grid(&self) -> Result<Vec<f64>> {
        let n = self.len();
        let (lo, hi) = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n).fold((f64::INFINITY, 0.0f64), |(lo, hi), j| {
                    let d = self.support.dist(i, j);
                    (if d > 0.0 { lo.min(d) } else { lo }, hi.max(d))
                })
            })
            .reduce(|| (f64::INFINITY, 0.0), |a, b| (a.0.min(b.0), a.1.max(b.1)));
        if !lo.is_finite() {
            return Ok(vec![1.0]);
        }
        log_radius_grid(lo / 2.0, hi, GRID_PER_OCTAVE)
    }

    /// `max_{eps in grid} |T_eps f(x)|` for every point and every function.
    pub fn maximal_on_grid(&self, fs: &[Vec<f64>], grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        if grid.is_empty() {
            return Err(Error::invalid("empty truncation grid"));
        }
        for &e in grid {
            check_eps(e)?;
        }
        for f in fs {
            self.check_f(f)?;
        }
        let mut g = grid.to_vec();
        g.sort_by(f64::total_cmp);
        let per_point: Vec<Vec<f64>> = (0..self.len())
            .into_par_iter()
            .map(|i| self.grid_sup(i, fs, &g))
            .collect();
        Ok(transpose(per_point, fs.len()))
    }

    /// `max_{eps in g} |T_eps f(x_i)|` for a sorted grid.
    fn grid_sup(&self, i: usize, fs: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
        // bucket b_j = #{grid radii < d_j}; atom j enters T_eps for the first b_j radii
        let mut buckets = vec![vec![0.0; g.len() + 1]; fs.len()];
        for j in 0..self.len() {
            let w = self.weights[j];
            if w == 0.0 {
                continue;
            }
            let d = self.support.dist(i, j);
            let b = g.partition_point(|e| *e < d);
            if b == 0 {
                continue;
            }
            let kv = self.pair(i, j) * w;
            for (bk, f) in buckets.iter_mut().zip(fs) {
                bk[b] += kv * f[j];
            }
        }
        buckets
            .iter()
            .map(|bk| {
                let mut acc = 0.0;
                let mut best: f64 = 0.0;
                for b in (1..=g.len()).rev() {
                    acc += bk[b];
                    best = best.max(acc.abs());
                }
                best
            })
            .collect()
    }

    /// `T_* f(x_i)` at one point, computed as [`SioOperator::evaluate`] does:
    /// over all shells on exact supports, otherwise over `grid`.
    pub fn t_star_at(&self, f: &[f64], i: usize, grid: Option<&[f64]>) -> Result<f64> {
        self.check_f(f)?;
        let fs = [f.to_vec()];
        if self.is_exact() {
            return Ok(self.exact_sup(&self.row(i), i, &fs)[0]);
        }
        let g = match grid {
            Some(g) if !g.is_empty() => {
                let mut g = g.to_vec();
                g.sort_by(f64::total_cmp);
                g
            }
            _ => return Err(Error::invalid("inexact regime needs a truncation grid")),
        };
        Ok(self.grid_sup(i, &fs, &g)[0])
    }

    /// `T_* f` and `M_mu f` at every point, for every function.
    ///
    /// Exact over all radii when the support has at most [`EXACT_SHELL_MAX`]
    /// points; above that, `T_*` is taken over [`SioOperator::default_grid`]
    /// and the result is flagged inexact. `M_mu f` is always exact.
    pub fn evaluate(&self, fs: &[Vec<f64>]) -> Result<Evaluation> {
        for f in fs {
            self.check_f(f)?;
        }
        let exact = self.is_exact();
        let (t_star, grid) = if exact {
            let per_point: Vec<Vec<f64>> = (0..self.len())
                .into_par_iter()
                .map(|i| self.exact_sup(&self.row(i), i, fs))
                .collect();
            (transpose(per_point, fs.len()), None)
        } else {
            let g = self.default_grid()?;
            (self.maximal_on_grid(fs, &g)?, Some(g))
        };
        let maximal_fn = self.maximal_function(fs)?;
        Ok(Evaluation {
            t_star,
            maximal_fn,
            exact,
            grid,
        })
    }

    /// `max_eps |T_eps f(x_i)|` by walking the shells from the outside in.
    fn exact_sup(&self, row: &Row, i: usize, fs: &[Vec<f64>]) -> Vec<f64> {
        let mut acc = vec![0.0; fs.len()];
        let mut best = vec![0.0f64; fs.len()];
        let mut k = row.dist.len();
        while k > 0 {
            let d = row.dist[k - 1];
            if d == 0.0 {
                break;
            }
            while k > 0 && row.dist[k - 1] == d {
                let j = row.idx[k - 1] as usize;
                let kv = self.pair(i, j) * self.weights[j];
                for (a, f) in acc.iter_mut().zip(fs) {
                    *a += kv * f[j];
                }
                k -= 1;
            }
            for (b, a) in best.iter_mut().zip(&acc) {
                *b = b.max(a.abs());
            }
        }
        best
    }

    /// `M_mu f` at every point: the largest average of `|f|` over the open
    /// balls centred there, taken over every distinct ball.
    pub fn maximal_function(&self, fs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for f in fs {
            self.check_f(f)?;
        }
        let per_point: Vec<Vec<f64>> = (0..self.len())
            .into_par_iter()
            .map(|i| {
                let row = self.row(i);
                let mut mass = 0.0;
                let mut acc = vec![0.0; fs.len()];
                let mut best = vec![0.0f64; fs.len()];
                let mut k = 0;
                while k < row.dist.len() {
                    let d = row.dist[k];
                    while k < row.dist.len() && row.dist[k] == d {
                        let j = row.idx[k] as usize;
                        mass += self.weights[j];
                        for (a, f) in acc.iter_mut().zip(fs) {
                            *a += f[j].abs() * self.weights[j];
                        }
                        k += 1;
                    }
                    if mass > 0.0 {
                        for (b, a) in best.iter_mut().zip(&acc) {
                            *b = b.max(a / mass);
                        }
                    }
                }
                best
            })
            .collect();
        Ok(transpose(per_point, fs.len()))
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("truncation radius must be positive, got {eps}")));
    }
    Ok(())
}

fn transpose(per_point: Vec<Vec<f64>>, nf: usize) -> Vec<Vec<f64>> {
    (0..nf).map(|k| per_point.iter().map(|row| row[k]).collect()).collect()
}

/// Output of [`SioOperator::evaluate`], indexed `[function][point]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub t_star: Vec<Vec<f64>>,
    pub maximal_fn: Vec<Vec<f64>>,
    pub exact: bool,
    pub grid: Option<Vec<f64>>,
}

/// `||f||_{L^1(mu)}`.
pub fn l1_norm(f: &[f64], weights: &[f64]) -> f64 {
    f.iter().zip(weights).map(|(a, w)| a.abs() * w).sum()
}

/// `(sum |f|^p w)^(1/p)`.
pub fn lp_norm(f: &[f64], weights: &[f64], p: f64) -> f64 {
    f.iter().zip(weights).map(|(a, w)| a.abs().powf(p) * w).sum::<f64>().powf(1.0 / p)
}

/// Smallest `C` with `mu{ values > lambda } <= C ||f||_1 / lambda` for all
/// `lambda > 0`: the supremum is `max_v v mu{values >= v}` over distinct values.
pub fn weak11_constant(values: &[f64], weights: &[f64], f_l1: f64) -> Result<f64> {
    if !(f_l1 > 0.0) {
        return Err(Error::invalid("weak (1,1) constant needs ||f||_1 > 0"));
    }
    let mut v: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(x, w)| **w > 0.0 && x.abs() > 0.0)
        .map(|(x, w)| (x.abs(), *w))
        .collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut mass = 0.0;
    let mut best: f64 = 0.0;
    let mut k = 0;
    while k < v.len() {
        let level = v[k].0;
        while k < v.len() && v[k].0 == level {
            mass += v[k].1;
            k += 1;
        }
        best = best.max(level * mass);
    }
    Ok(best / f_l1)
}

/// `sup_{x, r} mu(B(x, factor r)) / mu(B(x, r))` over centres in the support, exact.
///
/// With `factor = 3` this bounds the weak (1,1) constant of `M_mu` by the
/// finite Vitali covering argument.
pub fn dilation_constant(mu: &DiscreteMeasure, factor: f64) -> f64 {
    let sup = mu.support();
    let w = mu.weights();
    mu.support_indices()
        .par_iter()
        .map(|&i| {
            let mut row: Vec<(f64, f64)> = (0..mu.len())
                .filter(|&j| w[j] > 0.0)
                .map(|j| (sup.dist(i, j), w[j]))
                .collect();
            row.sort_by(|a, b| a.0.total_cmp(&b.0));
            let dists: Vec<f64> = row.iter().map(|r| r.0).collect();
            let mut prefix = Vec::with_capacity(row.len() + 1);
            prefix.push(0.0);
            for r in &row {
                prefix.push(prefix.last().unwrap() + r.1);
            }
            let mut best: f64 = 1.0;
            let mut k = 0;
            // for r in (d_k, d_next]: inner mass = mass(d <= d_k), outer largest at r = d_next
            while k < dists.len() {
                let d = dists[k];
                while k < dists.len() && dists[k] == d {
                    k += 1;
                }
                if k == dists.len() {
                    break;
                }
                let inner = prefix[k];
                let outer_r = factor * dists[k];
                let outer = prefix[dists.partition_point(|x| *x < outer_r)];
                best = best.max(outer / inner);
            }
            best
        })
        .reduce(|| 1.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpNormReport {
    pub p: f64,
    pub eps: f64,
    /// Certified norm for `p = 2`, ensemble lower bound otherwise.
    pub value: f64,
    pub certified: bool,
    pub ensemble_lower_bound: f64,
    pub ensemble_size: usize,
    pub iterations: usize,
    pub note: String,
}

/// `||T_eps||_{L^p(mu) -> L^p(mu)}`: the weighted-matrix singular value for
/// `p = 2`, and the best ratio over a seeded Gaussian ensemble for any `p`.
pub fn lp_operator_norm_estimate(
    op: &SioOperator,
    p: f64,
    eps: f64,
    ensemble: usize,
    seed: u64,
) -> Result<LpNormReport> {
    check_eps(eps)?;
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid("p must lie in (1, inf)"));
    }
    let w = op.weights();
    let mut lower: f64 = 0.0;
    for k in 0..ensemble {
        let mut r = rng::substream(seed, "lp-ensemble", k as u64);
        let f: Vec<f64> = (0..op.len())
            .map(|_| {
                let (u, v): (f64, f64) = (r.random(), r.random());
                (-2.0 * (1.0 - u).ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
            })
            .collect();
        let nf = lp_norm(&f, w, p);
        if nf > 0.0 {
            let tf = op.truncated_all(&f, eps)?;
            lower = lower.max(lp_norm(&tf, w, p) / nf);
        }
    }
    if p == 2.0 {
        let idx: Vec<usize> = (0..op.len()).filter(|&j| w[j] > 0.0).collect();
        let n = idx.len();
        let mut m = vec![0.0; n * n];
        m.par_chunks_mut(n.max(1)).enumerate().for_each(|(a, row)| {
            let i = idx[a];
            for (b, slot) in row.iter_mut().enumerate() {
                let j = idx[b];
                if op.support.dist(i, j) > eps {
                    *slot = (w[i] * w[j]).sqrt() * op.pair(i, j);
                }
            }
        });
        let (norm, iterations) = power_iteration_norm(&m, n, POWER_TOL, POWER_MAX_STEPS)?;
        return Ok(LpNormReport {
            p,
            eps,
            value: norm,
            certified: true,
            ensemble_lower_bound: lower,
            ensemble_size: ensemble,
            iterations,
            note: "largest singular value of the weighted kernel matrix".into(),
        });
    }
    Ok(LpNormReport {
        p,
        eps,
        value: lower,
        certified: false,
        ensemble_lower_bound: lower,
        ensemble_size: ensemble,
        iterations: 0,
        note: "ensemble lower bound only; interpolating the p = 2 norm with an endpoint bound would be needed for an upper bound"
            .into(),
    })
}

/// Growth constant actually realized by the kernel on the given pairs:
/// `max d(x, y)^n |K(x, y)|`, never below the declared `B`.
fn pair_growth(op: &SioOperator, pairs: impl Iterator<Item = (usize, usize)>, n: u32) -> f64 {
    let mut c: f64 = op.kernel.b;
    for (i, j) in pairs {
        let d = op.support.dist(i, j);
        if d > 0.0 {
            c = c.max(d.powi(n as i32) * op.pair(i, j).abs());
        }
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlueLevel {
    pub lambda: f64,
    /// `mu{T_{mu,*} f > 2 lambda}`.
    pub total: f64,
    pub m_a1: f64,
    pub m_a2: f64,
    pub m_b1: f64,
    pub m_b2: f64,
    pub bound: f64,
    pub decomposition_holds: bool,
    pub m_a1_holds: bool,
    pub m_b2_holds: bool,
    /// `m_{B,1} <= C_1 ||f||_1 mu(B) / (lambda rho) <= C_1 reg ||f||_1 / lambda`.
    pub m_b1_holds: bool,
    /// `m_{A,2} <= mu{M f > lambda / (2 C_1 reg)} <= C_2 ||f||_1 / lambda`.
    pub m_a2_holds: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlueReport {
    pub dist_ab: f64,
    pub diam_b: f64,
    /// Scale used in the `m_{B,1}` chain: `diam(B)`, or `d(A, B)` for a single atom.
    pub rho: f64,
    pub c: f64,
    pub c_measured: bool,
    pub c1: f64,
    pub reg: f64,
    pub weak_maximal: f64,
    pub c2: f64,
    pub big_c: f64,
    pub f_l1: f64,
    /// Pointwise `T_{mu_1,*} f <= C_1 ||f||_1 / rho` on `B`.
    pub pointwise_b1_holds: bool,
    /// Pointwise `T_{mu_2,*} f <= 2 C_1 reg M_mu f` on `A`.
    pub pointwise_a2_holds: bool,
    pub levels: Vec<GlueLevel>,
    pub pass: bool,
}

fn level_mass(values: &[f64], weights: &[f64], on: &[bool], lambda: f64) -> f64 {
    values
        .iter()
        .zip(weights)
        .zip(on)
        .filter(|((v, _), o)| **o && **v > lambda)
        .map(|((_, w), _)| *w)
        .sum()
}

/// Checks the gluing lemma term by term for `supp mu = A ∪ B`.
///
/// `c` is the weak constant of the two restricted operators on their own
/// pieces; when absent it is measured from `f`. `C_1` is the realized growth
/// constant over `A x B`, `reg` the exact upper regularity of `mu` at scales
/// `>= rho`, and `C_2 = 2 C_1 reg c_M` with `c_M` the measured weak constant of
/// `M_mu f`. The tracked constant is `C = 2c + C_1 reg + C_2`.
pub fn glue_check(
    op: &SioOperator,
    mu: &DiscreteMeasure,
    in_b: &[bool],
    f: &[f64],
    lambdas: &[f64],
    c: Option<f64>,
) -> Result<GlueReport> {
    let n = op.len();
    if in_b.len() != n || mu.len() != n {
        return Err(Error::invalid("piece mask has the wrong length"));
    }
    let w = op.weights().to_vec();
    let a_idx: Vec<usize> = (0..n).filter(|&i| !in_b[i] && w[i] > 0.0).collect();
    let b_idx: Vec<usize> = (0..n).filter(|&i| in_b[i] && w[i] > 0.0).collect();
    if a_idx.is_empty() || b_idx.is_empty() {
        return Err(Error::HypothesisViolated("both pieces need positive mass".into()));
    }
    let sup = op.support;
    let mut dist_ab = f64::INFINITY;
    let mut closest = (0, 0);
    for &i in &a_idx {
        for &j in &b_idx {
            let d = sup.dist(i, j);
            if d < dist_ab {
                dist_ab = d;
                closest = (i, j);
            }
        }
    }
    let mut diam_b: f64 = 0.0;
    let mut far = (b_idx[0], b_idx[0]);
    for &i in &b_idx {
        for &j in &b_idx {
            let d = sup.dist(i, j);
            if d > diam_b {
                diam_b = d;
                far = (i, j);
            }
        }
    }
    if dist_ab <= diam_b {
        return Err(Error::HypothesisViolated(format!(
            "d(A, B) = d({}, {}) = {dist_ab} does not exceed diam(B) = d({}, {}) = {diam_b}",
            closest.0, closest.1, far.0, far.1
        )));
    }
    let f_l1 = l1_norm(f, &w);
    if !(f_l1 > 0.0) {
        return Err(Error::invalid("f must have positive L^1 norm"));
    }
    let rho = if diam_b > 0.0 { diam_b } else { dist_ab };
    let on_a: Vec<bool> = (0..n).map(|i| !in_b[i]).collect();
    let on_b: Vec<bool> = in_b.to_vec();
    let op1 = op.restricted(&on_a);
    let op2 = op.restricted(&on_b);
    let fs = vec![f.to_vec()];
    let t = op.evaluate(&fs)?.t_star.remove(0);
    let t1 = op1.evaluate(&fs)?.t_star.remove(0);
    let t2 = op2.evaluate(&fs)?.t_star.remove(0);
    let mf = op.maximal_function(&fs)?.remove(0);

    let c1 = pair_growth(
        op,
        a_idx.iter().flat_map(|&i| b_idx.iter().flat_map(move |&j| [(i, j), (j, i)])),
        1,
    );
    let reg = upper_regularity_exact(mu, 1, rho)?.max(1.0);
    let weak_maximal = weak11_constant(&mf, &w, f_l1)?;
    let c2 = 2.0 * c1 * reg * weak_maximal;
    let (c, c_measured) = match c {
        Some(c) => (c, false),
        None => {
            let wa: Vec<f64> = (0..n).map(|i| if on_a[i] { w[i] } else { 0.0 }).collect();
            let wb: Vec<f64> = (0..n).map(|i| if on_b[i] { w[i] } else { 0.0 }).collect();
            (
                weak11_constant(&t1, &wa, f_l1)?.max(weak11_constant(&t2, &wb, f_l1)?),
                true,
            )
        }
    };
    let big_c = 2.0 * c + c1 * reg + c2;
    let tol = |x: f64| x * (1.0 + 1e-12);
    let pointwise_b1_holds = b_idx.iter().all(|&x| t1[x] <= tol(c1 * f_l1 / rho));
    let pointwise_a2_holds = a_idx.iter().all(|&x| t2[x] <= tol(2.0 * c1 * reg * mf[x]));
    let mass_b = mu.mass_of(b_idx.iter().copied());
    let all = vec![true; n];
    let levels: Vec<GlueLevel> = lambdas
        .iter()
        .map(|&lambda| {
            let total = level_mass(&t, &w, &all, 2.0 * lambda);
            let m_a1 = level_mass(&t1, &w, &on_a, lambda);
            let m_a2 = level_mass(&t2, &w, &on_a, lambda);
            let m_b1 = level_mass(&t1, &w, &on_b, lambda);
            let m_b2 = level_mass(&t2, &w, &on_b, lambda);
            let unit = f_l1 / lambda;
            let decomposition_holds = total <= tol(m_a1 + m_a2 + m_b1 + m_b2);
            let m_a1_holds = m_a1 <= tol(c * unit);
            let m_b2_holds = m_b2 <= tol(c * unit);
            let integral_b: f64 = b_idx.iter().map(|&x| t1[x] * w[x]).sum::<f64>() / lambda;
            let m_b1_holds = m_b1 <= tol(integral_b)
                && integral_b <= tol(c1 * unit * mass_b / rho)
                && mass_b / rho <= tol(reg);
            let maximal_level = level_mass(&mf, &w, &on_a, lambda / (2.0 * c1 * reg));
            let m_a2_holds = m_a2 <= tol(maximal_level) && maximal_level <= tol(c2 * unit);
            let bound = big_c * unit;
            let pass = total <= tol(bound)
                && decomposition_holds
                && m_a1_holds
                && m_b2_holds
                && m_b1_holds
                && m_a2_holds;
            GlueLevel {
                lambda,
                total,
                m_a1,
                m_a2,
                m_b1,
                m_b2,
                bound,
                decomposition_holds,
                m_a1_holds,
                m_b2_holds,
                m_b1_holds,
                m_a2_holds,
                pass,
            }
        })
        .collect();
    let pass = pointwise_a2_holds && pointwise_b1_holds && levels.iter().all(|l| l.pass);
    Ok(GlueReport {
        dist_ab,
        diam_b,
        rho,
        c,
        c_measured,
        c1,
        reg,
        weak_maximal,
        c2,
        big_c,
        f_l1,
        pointwise_b1_holds,
        pointwise_a2_holds,
        levels,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub x: usize,
    pub r: f64,
    pub lhs: f64,
    pub maximal: f64,
    pub c_nu: f64,
    /// `C_nu 2^(n+beta) / (2^beta - 1)`.
    pub proof_constant: f64,
    /// `2^(n+beta) / (C_nu (2^beta - 1))`, as printed in the lemma statement.
    pub statement_constant: f64,
    pub rhs: f64,
    pub rhs_statement: f64,
    pub pass: bool,
    pub statement_pass: bool,
    pub slack: f64,
}

/// `∫_{d(x,y) >= R} |f(y)| / d(x,y)^(n+beta) dmu` against
/// `C_nu 2^(n+beta)/(2^beta - 1) R^-beta M_mu f(x)`.
///
/// `c_nu` defaults to the exact upper regularity of `mu` over radii `>= 2R`,
/// which is every radius the dyadic-annulus argument touches.
pub fn tail_bound_check(
    mu: &DiscreteMeasure,
    n: u32,
    beta: f64,
    c_nu: Option<f64>,
    f: &[f64],
    x: usize,
    r: f64,
) -> Result<TailReport> {
    if !(r > 0.0) || !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid("need R > 0 and beta in (0, 1]"));
    }
    if x >= mu.len() || mu.weights()[x] <= 0.0 {
        return Err(Error::invalid("x must be a support point"));
    }
    let w = mu.weights();
    let sup = mu.support();
    let lhs: f64 = (0..mu.len())
        .filter(|&j| w[j] > 0.0)
        .map(|j| (j, sup.dist(x, j)))
        .filter(|(_, d)| *d >= r)
        .map(|(j, d)| f[j].abs() * w[j] / d.powf(n as f64 + beta))
        .sum();
    let maximal = point_maximal(mu, f, x);
    let c_nu = match c_nu {
        Some(c) => c,
        None => upper_regularity_exact(mu, n, 2.0 * r)?,
    };
    let two_b = 2f64.powf(beta);
    let proof_constant = c_nu * 2f64.powf(n as f64 + beta) / (two_b - 1.0);
    let statement_constant = 2f64.powf(n as f64 + beta) / (c_nu * (two_b - 1.0));
    let scale = r.powf(-beta) * maximal;
    let rhs = proof_constant * scale;
    let rhs_statement = statement_constant * scale;
    Ok(TailReport {
        x,
        r,
        lhs,
        maximal,
        c_nu,
        proof_constant,
        statement_constant,
        rhs,
        rhs_statement,
        pass: lhs <= rhs * (1.0 + 1e-12),
        statement_pass: lhs <= rhs_statement * (1.0 + 1e-12),
        slack: rhs - lhs,
    })
}

/// `M_mu f(x)` at a single point, exact over shells.
pub fn point_maximal(mu: &DiscreteMeasure, f: &[f64], x: usize) -> f64 {
    let w = mu.weights();
    let sup = mu.support();
    let mut row: Vec<(f64, usize)> = (0..mu.len())
        .filter(|&j| w[j] > 0.0)
        .map(|j| (sup.dist(x, j), j))
        .collect();
    row.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut mass, mut acc, mut best) = (0.0, 0.0, 0.0f64);
    let mut k = 0;
    while k < row.len() {
        let d = row[k].0;
        while k < row.len() && row[k].0 == d {
            mass += w[row[k].1];
            acc += f[row[k].1].abs() * w[row[k].1];
            k += 1;
        }
        if mass > 0.0 {
            best = best.max(acc / mass);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportTailReport {
    pub p: f64,
    pub far_points: usize,
    pub lhs: f64,
    pub majorant: f64,
    pub c_k: f64,
    pub c_nu: f64,
    pub diam_z: f64,
    pub nu_z: f64,
    pub f_p: f64,
    pub pass: bool,
    /// `majorant / lhs` (infinite when the left side vanishes).
    pub slack_ratio: f64,
}

/// `∫_{d(x,Z) >= 1} |T_{nu,*} f|^p dnu` against the annulus majorant
/// `C_K^p ||f||_p^p nu(Z)^(p-1) C_nu 2^n [2^n/(1 - 2^(n(1-p))) + D^n/(1 - 2^(-np))]`
/// with `Z = {f != 0}`, `D = diam Z`, and `C_nu` the exact upper regularity at
/// radii `>= 2 + D`.
pub fn support_tail_check(op: &SioOperator, nu: &DiscreteMeasure, f: &[f64], p: f64) -> Result<SupportTailReport> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid("p must lie in (1, inf)"));
    }
    op.check_f(f)?;
    let w = nu.weights();
    let sup = nu.support();
    let z: Vec<usize> = (0..nu.len()).filter(|&j| f[j] != 0.0 && w[j] > 0.0).collect();
    let n = 1u32;
    let nf = n as f64;
    let far: Vec<usize> = (0..nu.len())
        .filter(|&x| w[x] > 0.0 && z.iter().all(|&j| sup.dist(x, j) >= 1.0))
        .collect();
    let mut diam_z: f64 = 0.0;
    for &a in &z {
        for &b in &z {
            diam_z = diam_z.max(sup.dist(a, b));
        }
    }
    let nu_z = nu.mass_of(z.iter().copied());
    let f_p = lp_norm(f, w, p);
    let c_k = pair_growth(op, far.iter().flat_map(|&x| z.iter().map(move |&j| (x, j))), n);
    let c_nu = if z.is_empty() {
        0.0
    } else {
        upper_regularity_exact(nu, n, 2.0 + diam_z)?
    };
    let lhs = if far.is_empty() || z.is_empty() {
        0.0
    } else {
        let t = op.evaluate(&[f.to_vec()])?.t_star.remove(0);
        far.iter().map(|&x| t[x].abs().powf(p) * w[x]).sum()
    };
    let series = 2f64.powf(nf) / (1.0 - 2f64.powf(nf * (1.0 - p))) + diam_z.powf(nf) / (1.0 - 2f64.powf(-nf * p));
    let majorant = c_k.powf(p) * f_p.powf(p) * nu_z.powf(p - 1.0) * c_nu * 2f64.powf(nf) * series;
    Ok(SupportTailReport {
        p,
        far_points: far.len(),
        lhs,
        majorant,
        c_k,
        c_nu,
        diam_z,
        nu_z,
        f_p,
        pass: lhs <= majorant * (1.0 + 1e-12),
        slack_ratio: if lhs > 0.0 { majorant / lhs } else { f64::INFINITY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{hilbert_kernel, zero_kernel};
    use crate::space::{NormedSpace, PointCloud};

    fn line_measure(xs: &[f64], w: &[f64]) -> DiscreteMeasure {
        let cloud = PointCloud::new(NormedSpace::euclidean(1), xs.iter().map(|x| vec![*x]).collect()).unwrap();
        DiscreteMeasure::new(Support::Cloud(cloud), w.to_vec()).unwrap()
    }

    #[test]
    fn two_atom_truncation() {
        let mu = line_measure(&[0.0, 1.0], &[1.0, 1.0]);
        let k = hilbert_kernel();
        let op = SioOperator::new(&k, &mu).unwrap();
        let f = [0.0, 1.0];
        assert_eq!(op.truncated(&f, 0.5, 0).unwrap(), -1.0);
        assert_eq!(op.truncated(&[0.0, 0.0], 0.5, 0).unwrap(), 0.0);
        assert_eq!(op.truncated(&f, 2.0, 0).unwrap(), 0.0);
        assert!(op.truncated(&f, 0.0, 0).is_err());
    }

    #[test]
    fn single_shell_and_cancellation() {
        let mu = line_measure(&[0.0, 1.0], &[0.0, 1.0]);
        let k = hilbert_kernel();
        let op = SioOperator::new(&k, &mu).unwrap();
        let ev = op.evaluate(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(ev.t_star[0][0], 1.0);
        let mu = line_measure(&[-1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]);
        let op = SioOperator::new(&k, &mu).unwrap();
        let ev = op.evaluate(&[vec![1.0; 3]]).unwrap();
        assert_eq!(ev.t_star[0][1], 0.0);
        let ev = op.evaluate(&[vec![0.0; 3]]).unwrap();
        assert!(ev.t_star[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn maximal_function_examples() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mu = line_measure(&xs, &[1.0; 10]);
        let k = zero_kernel(NormedSpace::euclidean(1));
        let op = SioOperator::new(&k, &mu).unwrap();
        let m = op.maximal_function(&[vec![-2.5; 10]]).unwrap();
        assert!(m[0].iter().all(|v| *v == 2.5));
        let mut spike = vec![0.0; 10];
        spike[3] = 4.0;
        let m = op.maximal_function(&[spike]).unwrap();
        assert_eq!(m[0][3], 4.0);
        assert_eq!(m[0][0], 1.0);
    }

    #[test]
    fn weak_constant_examples() {
        assert_eq!(weak11_constant(&[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap(), 0.0);
        let (v, m) = (3.0, 0.5);
        assert_eq!(weak11_constant(&[v], &[m], m * v).unwrap(), 1.0);
        assert!(weak11_constant(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn grid_and_exact_agree_on_shell_grid() {
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.1).collect();
        let mu = line_measure(&xs, &vec![0.025; 40]);
        let k = hilbert_kernel();
        let op = SioOperator::new(&k, &mu).unwrap();
        let f: Vec<f64> = (0..40).map(|i| (i as f64).cos()).collect();
        let ev = op.evaluate(std::slice::from_ref(&f)).unwrap();
        for i in 0..40 {
            let g = op.shell_grid(i);
            let direct = g.iter().map(|e| op.truncated(&f, *e, i).unwrap().abs()).fold(0.0, f64::max);
            assert!((ev.t_star[0][i] - direct).abs() <= 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn zero_kernel_and_single_atom_norms() {
        let mu = line_measure(&[0.0, 0.5, 2.0], &[1.0, 1.0, 1.0]);
        let z = zero_kernel(NormedSpace::euclidean(1));
        let op = SioOperator::new(&z, &mu).unwrap();
        assert_eq!(lp_operator_norm_estimate(&op, 2.0, 0.1, 4, 1).unwrap().value, 0.0);
        let mu = line_measure(&[0.0], &[1.0]);
        let h = hilbert_kernel();
        let op = SioOperator::new(&h, &mu).unwrap();
        assert_eq!(lp_operator_norm_estimate(&op, 2.0, 0.1, 4, 1).unwrap().value, 0.0);
        assert!(lp_operator_norm_estimate(&op, 2.0, 0.0, 4, 1).is_err());
    }

    #[test]
    fn tail_bound_one_atom() {
        let (r, m) = (0.5, 0.3);
        let mu = line_measure(&[0.0, 2.0 * r], &[1.0, m]);
        let f = [0.0, 1.0];
        let rep = tail_bound_check(&mu, 1, 1.0, None, &f, 0, r).unwrap();
        assert!((rep.lhs - m / (2.0 * r).powi(2)).abs() < 1e-15);
        assert!(rep.pass && rep.lhs < rep.rhs);
        let rep = tail_bound_check(&mu, 1, 1.0, None, &[0.0, 0.0], 0, r).unwrap();
        assert_eq!((rep.lhs, rep.rhs), (0.0, 0.0));
    }

    #[test]
    fn dilation_constant_of_uniform_line() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let mu = line_measure(&xs, &[1.0; 50]);
        let d = dilation_constant(&mu, 3.0);
        assert!((1.0..=9.0).contains(&d), "{d}");
    }
}
