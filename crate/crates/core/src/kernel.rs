//! Calderón–Zygmund kernels on finite-dimensional normed spaces.
//!
//! Kernels are stored in convolution form `K(x)`; the two-point form used by
//! the singular integrals is `K(x_i - x_j)`. Expression kernels that only
//! reference the norm can also act on abstract metric spaces, where the norm
//! of the difference is replaced by the distance.

pub mod expr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::space::{NormKind, NormedSpace};
pub use expr::Expr;

/// Number of dyadic scales in the probe set.
pub const PROBE_SCALES: usize = 4;
/// Directions per scale in the standard probe set.
pub const PROBE_DIRECTIONS: usize = 64;
/// Offsets per direction in the standard probe set.
pub const PROBE_OFFSETS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub enum KernelForm {
    /// `1/x` on the real line.
    Hilbert,
    /// `1/|x|`.
    InverseNorm,
    Zero,
    /// `x_coord / |x|^2`, coordinate 0-based.
    Riesz { coord: usize },
    /// `<x, y> / |x|^2` with `|y|` = 1 in the conjugate norm.
    DualRiesz { y: Vec<f64> },
    Expr { expr: Expr, source: String },
}

/// Kernel with its declared homogeneity dimension, Hölder exponent and constant.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub form: KernelForm,
    pub space: NormedSpace,
    pub n: u32,
    pub beta: f64,
    /// Growth and Hölder constant `B`.
    pub b: f64,
}

impl Kernel {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.form {
            KernelForm::Hilbert => 1.0 / x[0],
            KernelForm::InverseNorm => 1.0 / self.space.norm(x),
            KernelForm::Zero => 0.0,
            KernelForm::Riesz { coord } => {
                let n = self.space.norm(x);
                x[*coord] / (n * n)
            }
            KernelForm::DualRiesz { y } => {
                let n = self.space.norm(x);
                x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / (n * n)
            }
            KernelForm::Expr { expr, .. } => expr.eval(x, self.space.norm(x)),
        }
    }

    /// Value as a function of distance alone, for kernels that only see the norm.
    pub fn eval_radial(&self, d: f64) -> Option<f64> {
        match &self.form {
            KernelForm::InverseNorm => Some(1.0 / d),
            KernelForm::Zero => Some(0.0),
            KernelForm::Expr { expr, .. } if expr.max_coord() == 0 => Some(expr.eval(&[], d)),
            _ => None,
        }
    }

    pub fn is_radial(&self) -> bool {
        self.eval_radial(1.0).is_some()
    }

    pub fn name(&self) -> String {
        match &self.form {
            KernelForm::Hilbert => "hilbert".into(),
            KernelForm::InverseNorm => "inverse_norm".into(),
            KernelForm::Zero => "zero".into(),
            KernelForm::Riesz { coord } => format!("riesz_{}", coord + 1),
            KernelForm::DualRiesz { .. } => "dual_riesz".into(),
            KernelForm::Expr { source, .. } => format!("expr({source})"),
        }
    }
}

fn default_p() -> f64 {
    2.0
}

fn default_dim() -> usize {
    2
}

fn default_beta() -> f64 {
    1.0
}

/// Configuration form of a kernel. `p` selects the `l^p` norm; `p = inf`
/// (or any non-finite value) selects the sup-norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Hilbert,
    InverseNorm {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_p")]
        p: f64,
    },
    Zero {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Riesz {
        coord: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_p")]
        p: f64,
    },
    DualRiesz {
        y: Vec<f64>,
        #[serde(default = "default_p")]
        p: f64,
    },
    Expr {
        expr: String,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_p")]
        p: f64,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default)]
        b: Option<f64>,
    },
}

fn norm_of(p: f64) -> NormKind {
    if p.is_finite() {
        NormKind::P { p }
    } else {
        NormKind::Sup
    }
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel> {
        match self {
            KernelSpec::Hilbert => Ok(hilbert_kernel()),
            KernelSpec::InverseNorm { dim, p } => {
                let space = NormedSpace::new(*dim, norm_of(*p))?;
                Ok(Kernel {
                    form: KernelForm::InverseNorm,
                    space,
                    n: 1,
                    beta: 1.0,
                    b: 2.0,
                })
            }
            KernelSpec::Zero { dim } => Ok(zero_kernel(NormedSpace::euclidean((*dim).max(1)))),
            KernelSpec::Riesz { coord, dim, p } => {
                if *coord == 0 {
                    return Err(Error::invalid("Riesz coordinates are 1-based"));
                }
                riesz_kernel(*coord - 1, NormedSpace::new(*dim, norm_of(*p))?)
            }
            KernelSpec::DualRiesz { y, p } => dual_riesz_kernel(y.clone(), NormedSpace::new(y.len(), norm_of(*p))?),
            KernelSpec::Expr { expr, dim, p, beta, b } => {
                expr_kernel(expr, NormedSpace::new(*dim, norm_of(*p))?, *beta, *b)
            }
        }
    }
}

pub fn hilbert_kernel() -> Kernel {
    Kernel {
        form: KernelForm::Hilbert,
        space: NormedSpace::euclidean(1),
        n: 1,
        beta: 1.0,
        b: 2.0,
    }
}

pub fn zero_kernel(space: NormedSpace) -> Kernel {
    Kernel {
        form: KernelForm::Zero,
        space,
        n: 1,
        beta: 1.0,
        b: 0.0,
    }
}

fn certify(mut k: Kernel, floor: f64) -> Result<Kernel> {
    let probes = ProbeSet::standard(&k.space, 0);
    let g = verify_growth(&k, &probes)?;
    let h = verify_holder(&k, &probes)?;
    k.b = floor.max(g.fitted).max(h.fitted);
    Ok(k)
}

/// `R_n(x) = x_n / |x|^2` with `B` certified on the standard probe set.
pub fn riesz_kernel(coord: usize, space: NormedSpace) -> Result<Kernel> {
    if space.norm == NormKind::Sup {
        return Err(Error::NormNotC1("the sup-norm is not C1 away from the origin".into()));
    }
    space.norm.validate()?;
    if coord >= space.dim {
        return Err(Error::invalid(format!("coordinate {} exceeds dimension {}", coord + 1, space.dim)));
    }
    certify(
        Kernel {
            form: KernelForm::Riesz { coord },
            space,
            n: 1,
            beta: 1.0,
            b: f64::NAN,
        },
        0.0,
    )
}

/// `R*(x) = <x, y> / |x|^2`; `y` must have unit conjugate norm.
pub fn dual_riesz_kernel(y: Vec<f64>, space: NormedSpace) -> Result<Kernel> {
    if space.norm == NormKind::Sup {
        return Err(Error::NormNotC1("the sup-norm is not C1 away from the origin".into()));
    }
    space.norm.validate()?;
    if y.len() != space.dim {
        return Err(Error::invalid("y has the wrong dimension"));
    }
    let dn = space.norm.dual_norm(&y);
    if (dn - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("y has conjugate norm {dn}, expected 1")));
    }
    certify(
        Kernel {
            form: KernelForm::DualRiesz { y },
            space,
            n: 1,
            beta: 1.0,
            b: f64::NAN,
        },
        1.0,
    )
}

/// Kernel from an expression; `b` is certified on the probe set when absent.
pub fn expr_kernel(source: &str, space: NormedSpace, beta: f64, b: Option<f64>) -> Result<Kernel> {
    let expr = Expr::parse(source)?;
    if expr.max_coord() > space.dim {
        return Err(Error::invalid(format!(
            "expression uses x{} but the space has dimension {}",
            expr.max_coord(),
            space.dim
        )));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid("beta must lie in (0, 1]"));
    }
    let k = Kernel {
        form: KernelForm::Expr {
            expr,
            source: source.to_string(),
        },
        space,
        n: 1,
        beta,
        b: b.unwrap_or(f64::NAN),
    };
    match b {
        Some(_) => Ok(k),
        None => certify(k, 0.0),
    }
}

/// Fixed-seed probe points and Hölder pairs.
///
/// Points: `PROBE_SCALES` dyadic radii `2^-1 .. 2^2` times `64 d`
/// quasi-uniform unit directions (rotated by the seed). Pairs: each point
/// gets `8 d` offsets `h` whose directions and relative lengths in
/// `[1/8, 1/2)·|x|` follow a Kronecker sequence, so the pairs fill the
/// (direction, offset) torus evenly. `d` is the density multiplier.
#[derive(Clone, Debug)]
pub struct ProbeSet {
    pub points: Vec<Vec<f64>>,
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub density: usize,
}

const G1: f64 = 0.618_033_988_749_894_8;
const G2: f64 = 0.414_213_562_373_095_05;
const G3: f64 = 0.324_717_957_244_746;

fn frac(x: f64) -> f64 {
    x - x.floor()
}

/// Direction from two numbers in `[0,1)`; equal-area on the sphere in 3D.
fn direction(dim: usize, a: f64, b: f64, rng: &mut rng::StreamRng) -> Vec<f64> {
    let tau = 2.0 * std::f64::consts::PI;
    match dim {
        1 => vec![if a < 0.5 { 1.0 } else { -1.0 }],
        2 => vec![(tau * a).cos(), (tau * a).sin()],
        3 => {
            let z = 1.0 - 2.0 * b;
            let s = (1.0 - z * z).max(0.0).sqrt();
            vec![s * (tau * a).cos(), s * (tau * a).sin(), z]
        }
        _ => {
            let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
            v
        }
    }
}

impl ProbeSet {
    pub fn standard(space: &NormedSpace, seed: u64) -> Self {
        Self::with_density(space, seed, 1)
    }

    pub fn with_density(space: &NormedSpace, seed: u64, density: usize) -> Self {
        let density = density.max(1);
        let mut r = rng::stream(seed, "kernel-probes");
        let (phi, psi, chi) = (r.random::<f64>(), r.random::<f64>(), r.random::<f64>());
        let nd = PROBE_DIRECTIONS * density;
        let no = PROBE_OFFSETS * density;
        let unit = |v: Vec<f64>| {
            let n = space.norm(&v);
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let mut dirs = Vec::with_capacity(nd);
        for k in 0..nd {
            let a = frac((k as f64 + phi) / nd as f64);
            let b = (k as f64 + 0.5) / nd as f64;
            // pair the azimuth with a scrambled height so the 3D set is a Fibonacci-type lattice
            let a = if space.dim == 3 { frac(k as f64 * G1 + phi) } else { a };
            dirs.push(unit(direction(space.dim, a, b, &mut r)));
        }
        let mut points = Vec::new();
        let mut pairs = Vec::new();
        for s in 0..PROBE_SCALES {
            let scale = 2f64.powi(s as i32 - 1);
            for (k, d) in dirs.iter().enumerate() {
                let x: Vec<f64> = d.iter().map(|v| v * scale).collect();
                let xn = space.norm(&x);
                for j in 0..no {
                    let m = (s * nd + k) * no + j;
                    let mf = m as f64;
                    let hd = unit(direction(space.dim, frac(mf * G1 + psi), frac(mf * G2 + chi), &mut r));
                    let rel = 0.125 + 0.375 * (1.0 - frac(mf * G3 + phi));
                    let len = rel * xn * (1.0 - 2f64.powi(-20));
                    pairs.push((x.clone(), hd.iter().map(|v| v * len).collect()));
                }
                points.push(x);
            }
        }
        ProbeSet {
            points,
            pairs,
            density,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantReport {
    pub fitted: f64,
    pub declared: f64,
    pub pass: bool,
    pub probes: usize,
    /// Pairs skipped because `h = 0` or `|h| > |x|/2` after rounding.
    pub skipped: usize,
}

fn within(fitted: f64, declared: f64) -> bool {
    fitted <= declared + 1e-12 * declared.max(1.0)
}

/// `max |x| |K(x)|` over the probe points.
pub fn verify_growth(k: &Kernel, probes: &ProbeSet) -> Result<ConstantReport> {
    let mut fitted: f64 = 0.0;
    for x in &probes.points {
        let v = k.eval(x);
        if !v.is_finite() {
            return Err(Error::NonFiniteKernel { probe: x.clone() });
        }
        fitted = fitted.max(k.space.norm(x) * v.abs());
    }
    Ok(ConstantReport {
        fitted,
        declared: k.b,
        pass: within(fitted, k.b),
        probes: probes.points.len(),
        skipped: 0,
    })
}

/// `max |K(x) - K(x+h)| |x|^(1+beta) / |h|^beta` over the probe pairs.
pub fn verify_holder(k: &Kernel, probes: &ProbeSet) -> Result<ConstantReport> {
    let mut fitted: f64 = 0.0;
    let mut skipped = 0;
    let mut xh = vec![0.0; k.space.dim];
    for (x, h) in &probes.pairs {
        let xn = k.space.norm(x);
        let hn = k.space.norm(h);
        if hn == 0.0 || hn > xn / 2.0 {
            skipped += 1;
            continue;
        }
        for (slot, (a, b)) in xh.iter_mut().zip(x.iter().zip(h)) {
            *slot = a + b;
        }
        let (kx, kxh) = (k.eval(x), k.eval(&xh));
        if !kx.is_finite() {
            return Err(Error::NonFiniteKernel { probe: x.clone() });
        }
        if !kxh.is_finite() {
            return Err(Error::NonFiniteKernel { probe: xh.clone() });
        }
        fitted = fitted.max((kx - kxh).abs() * xn.powf(1.0 + k.beta) / hn.powf(k.beta));
    }
    Ok(ConstantReport {
        fitted,
        declared: k.b,
        pass: within(fitted, k.b),
        probes: probes.pairs.len() - skipped,
        skipped,
    })
}

/// Worst relative defect of `K(rx) = K(x)/r` over probe points and the given ratios.
pub fn homogeneity_defect(k: &Kernel, probes: &ProbeSet, ratios: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for x in &probes.points {
        let kx = k.eval(x);
        for &r in ratios {
            let rx: Vec<f64> = x.iter().map(|v| v * r).collect();
            let defect = (k.eval(&rx) - kx / r).abs();
            let scale = kx.abs() * 1f64.max(1.0 / r);
            if defect > 0.0 {
                worst = worst.max(if scale > 0.0 { defect / scale } else { f64::INFINITY });
            }
        }
    }
    worst
}

/// Radial bump profile: 1 on `[0, 1/2]`, 0 on `[2, inf)`, and
/// `1 - S(u)` in between with `u = (log2 s + 1) / 2` and the quintic
/// smoothstep `S(u) = 6u^5 - 15u^4 + 10u^3`.
pub fn bump(s: f64) -> f64 {
    if s <= 0.5 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let u = (s.log2() + 1.0) / 2.0;
        1.0 - u * u * u * (u * (6.0 * u - 15.0) + 10.0)
    }
}

/// Line `{ q + s u }` with `|u| = 1` in the ambient norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub q: Vec<f64>,
    pub u: Vec<f64>,
}

impl Line {
    pub fn new(space: &NormedSpace, q: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        if q.len() != space.dim || u.len() != space.dim {
            return Err(Error::invalid("line has the wrong dimension"));
        }
        if (space.norm(&u) - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("line direction must have unit norm"));
        }
        Ok(Line { q, u })
    }

    pub fn at(&self, s: f64) -> Vec<f64> {
        self.q.iter().zip(&self.u).map(|(q, u)| q + s * u).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub nodes: usize,
}

const ROMBERG_START: usize = 64;
const ROMBERG_MAX_LEVEL: usize = 14;

/// Trapezoid sums on `[a, b]` starting at 64 intervals and doubling, with
/// Richardson extrapolation of the sequence. The error estimate is the last
/// extrapolation change, floored at `64 eps sum|f w|`.
pub fn romberg(f: &(dyn Fn(f64) -> f64 + Sync), a: f64, b: f64, rel_tol: f64) -> Quadrature {
    if b <= a {
        return Quadrature {
            value: 0.0,
            error: 0.0,
            nodes: 0,
        };
    }
    let mut n = ROMBERG_START;
    let h0 = (b - a) / n as f64;
    let vals: Vec<f64> = (0..=n).into_par_iter().map(|i| f(a + h0 * i as f64)).collect();
    let mut sum_inner: f64 = vals[1..n].iter().sum();
    let mut abs_sum: f64 = vals.iter().map(|v| v.abs()).sum::<f64>() * h0;
    let ends = (vals[0] + vals[n]) / 2.0;
    let mut rows: Vec<Vec<f64>> = vec![vec![h0 * (ends + sum_inner)]];
    let mut last_change = f64::INFINITY;
    for level in 1..=ROMBERG_MAX_LEVEL {
        let h = (b - a) / (2 * n) as f64;
        // collect first so the summation order is fixed
        let vals: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| f(a + h * (2 * i + 1) as f64))
            .collect();
        let mids: f64 = vals.iter().sum();
        let mids_abs: f64 = vals.iter().map(|v| v.abs()).sum();
        sum_inner += mids;
        abs_sum = abs_sum / 2.0 + mids_abs * h;
        n *= 2;
        let mut row = vec![h * (ends + sum_inner)];
        for j in 1..=level.min(6) {
            let prev = &rows[level - 1];
            if j > prev.len() {
                break;
            }
            let c = 4f64.powi(j as i32);
            row.push((c * row[j - 1] - prev[j - 1]) / (c - 1.0));
        }
        let best = *row.last().unwrap();
        let prev_best = *rows[level - 1].last().unwrap();
        last_change = (best - prev_best).abs();
        rows.push(row);
        let floor = 64.0 * f64::EPSILON * abs_sum;
        if level >= 2 && last_change <= (rel_tol * best.abs()).max(floor) {
            break;
        }
    }
    let value = *rows.last().unwrap().last().unwrap();
    Quadrature {
        value,
        error: last_change.max(64.0 * f64::EPSILON * abs_sum),
        nodes: n + 1,
    }
}

/// Minimizer of the convex map `s -> |q + s u|` by golden-section search.
fn closest_parameter(space: &NormedSpace, line: &Line, lo: f64, hi: f64) -> f64 {
    let f = |s: f64| space.norm(&line.at(s));
    let (mut a, mut b) = (lo, hi);
    let g = G1;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Parameter on the monotone branch `[from, to]` where `|q + s u| = rho`.
fn bisect_level(space: &NormedSpace, line: &Line, from: f64, to: f64, rho: f64) -> f64 {
    let (mut a, mut b) = (from, to);
    for _ in 0..200 {
        let m = (a + b) / 2.0;
        if m == a || m == b {
            break;
        }
        if space.norm(&line.at(m)) < rho {
            a = m;
        } else {
            b = m;
        }
    }
    (a + b) / 2.0
}

/// `∫_L [psi_R(y) - psi_r(y)] K(y) dH^1(y)` with `psi_t(y) = bump(t |y|)`.
///
/// The integrand vanishes outside `1/(2R) <= |y| <= 2/r`. The window is
/// split at the bump transition radii and at dyadic radii, and each piece
/// is integrated by [`romberg`].
pub fn annular_integral(k: &Kernel, line: &Line, r: f64, big_r: f64) -> Result<Quadrature> {
    if !(r > 0.0 && r < big_r) {
        return Err(Error::invalid(format!("need 0 < r < R, got r = {r}, R = {big_r}")));
    }
    let space = &k.space;
    if line.q.len() != space.dim {
        return Err(Error::invalid("line dimension does not match the kernel"));
    }
    let qn = space.norm(&line.q);
    let half = qn + 2.0 / r;
    let s_star = closest_parameter(space, line, -half, half);
    let dmin = space.norm(&line.at(s_star));
    let (inner, outer) = (1.0 / (2.0 * big_r), 2.0 / r);
    let mut radii = vec![inner, 2.0 / big_r, 1.0 / (2.0 * r), outer];
    let mut j = inner.log2().ceil() as i32;
    while 2f64.powi(j) < outer {
        radii.push(2f64.powi(j));
        j += 1;
    }
    radii.retain(|&rho| rho > dmin && rho >= inner && rho <= outer);
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let mut cuts = vec![-half, s_star, half];
    for &rho in &radii {
        cuts.push(bisect_level(space, line, s_star, half, rho));
        cuts.push(bisect_level(space, line, s_star, -half, rho));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let integrand = |s: f64| -> f64 {
        let y = line.at(s);
        let n = space.norm(&y);
        let w = bump(big_r * n) - bump(r * n);
        if w == 0.0 {
            0.0
        } else {
            w * k.eval(&y)
        }
    };
    let mut total = Quadrature {
        value: 0.0,
        error: 0.0,
        nodes: 0,
    };
    for w in cuts.windows(2) {
        let q = romberg(&integrand, w[0], w[1], 1e-13);
        if !q.value.is_finite() {
            return Err(Error::NonFiniteKernel { probe: line.at((w[0] + w[1]) / 2.0) });
        }
        total.value += q.value;
        total.error += q.error;
        total.nodes += q.nodes;
    }
    Ok(total)
}

/// Largest singular value of a dense row-major `n x n` matrix by power
/// iteration on `B^T B`. Stops when successive estimates agree to
/// `rel_tol`; errors after `max_steps`.
pub fn power_iteration_norm(b: &[f64], n: usize, rel_tol: f64, max_steps: usize) -> Result<(f64, usize)> {
    if n == 0 {
        return Ok((0.0, 0));
    }
    let bt: Vec<f64> = {
        let mut t = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                t[j * n + i] = b[i * n + j];
            }
        }
        t
    };
    let matvec = |m: &[f64], v: &[f64]| -> Vec<f64> {
        m.par_chunks(n)
            .map(|row| row.iter().zip(v).map(|(a, x)| a * x).sum())
            .collect()
    };
    let mut r = rng::stream(0x5eed, "power-iteration");
    let mut v: Vec<f64> = (0..n).map(|_| r.random::<f64>() + 0.5).collect();
    let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut sigma_prev = f64::NAN;
    for step in 1..=max_steps {
        let w = matvec(b, &v);
        let sigma = norm2(&w);
        if sigma == 0.0 {
            return Ok((0.0, step));
        }
        let z = matvec(&bt, &w);
        let nz = norm2(&z);
        if nz == 0.0 {
            return Ok((sigma, step));
        }
        v = z.into_iter().map(|x| x / nz).collect();
        if (sigma - sigma_prev).abs() <= rel_tol * sigma {
            return Ok((sigma, step));
        }
        sigma_prev = sigma;
    }
    Err(Error::NonConvergence(max_steps))
}

/// Weighted matrix `sqrt(w_i w_j) 1{|x_i - x_j| > eps} K(x_i - x_j)` on
/// midpoint nodes of the segment `{ q + s u : |s| <= len/2 }`. Its spectral
/// norm equals the `L^2(w)` operator norm of the discretized truncation.
pub fn segment_matrix(k: &Kernel, line: &Line, len: f64, nodes: usize, eps: f64) -> Vec<f64> {
    let h = len / nodes as f64;
    let pts: Vec<Vec<f64>> = (0..nodes)
        .map(|i| line.at(-len / 2.0 + h * (i as f64 + 0.5)))
        .collect();
    let mut m = vec![0.0; nodes * nodes];
    m.par_chunks_mut(nodes).enumerate().for_each(|(i, row)| {
        let mut d = vec![0.0; pts[i].len()];
        for (j, slot) in row.iter_mut().enumerate() {
            for (c, (a, b)) in d.iter_mut().zip(pts[i].iter().zip(&pts[j])) {
                *c = a - b;
            }
            if k.space.norm(&d) > eps {
                *slot = h * k.eval(&d);
            }
        }
    });
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UblEntry {
    pub eps: f64,
    pub norm_l: f64,
    pub norm_2l: f64,
    /// `norm_2l / norm_l - 1`.
    pub growth: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UblReport {
    pub len: f64,
    pub nodes: usize,
    pub entries: Vec<UblEntry>,
    pub sup: f64,
}

pub const POWER_TOL: f64 = 1e-8;
pub const POWER_MAX_STEPS: usize = 10_000;

/// Discrete `L^2` norms of `T_eps` on the segment of length `len` and on the
/// segment of length `2 len` (at the same node spacing).
pub fn ubl_estimate(k: &Kernel, line: &Line, len: f64, nodes: usize, eps_grid: &[f64]) -> Result<UblReport> {
    if nodes < 64 {
        return Err(Error::invalid("need at least 64 nodes"));
    }
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::invalid("eps grid must be nonempty and positive"));
    }
    let mut entries = Vec::new();
    for &eps in eps_grid {
        let a = segment_matrix(k, line, len, nodes, eps);
        let (n1, it1) = power_iteration_norm(&a, nodes, POWER_TOL, POWER_MAX_STEPS)?;
        let b = segment_matrix(k, line, 2.0 * len, 2 * nodes, eps);
        let (n2, it2) = power_iteration_norm(&b, 2 * nodes, POWER_TOL, POWER_MAX_STEPS)?;
        entries.push(UblEntry {
            eps,
            norm_l: n1,
            norm_2l: n2,
            growth: if n1 > 0.0 { n2 / n1 - 1.0 } else { 0.0 },
            iterations: it1.max(it2),
        });
    }
    let sup = entries.iter().map(|e| e.norm_l.max(e.norm_2l)).fold(0.0, f64::max);
    Ok(UblReport {
        len,
        nodes,
        entries,
        sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e2() -> NormedSpace {
        NormedSpace::euclidean(2)
    }

    #[test]
    fn riesz_values() {
        let k = riesz_kernel(0, e2()).unwrap();
        assert_eq!(k.eval(&[1.0, 0.0]), 1.0);
        assert_eq!(k.eval(&[0.0, 1.0]), 0.0);
        assert_eq!(k.eval(&[3.0, 4.0]), 0.12);
        assert!(matches!(riesz_kernel(0, NormedSpace::sup(2)), Err(Error::NormNotC1(_))));
        assert!(riesz_kernel(2, e2()).is_err());
    }

    #[test]
    fn dual_riesz_values() {
        let k = dual_riesz_kernel(vec![1.0, 0.0], e2()).unwrap();
        assert_eq!(k.eval(&[2.0, 0.0]), 0.5);
        assert_eq!(k.eval(&[0.0, 3.0]), 0.0);
        assert_eq!(k.eval(&[4.0, 2.0]), k.eval(&[2.0, 1.0]) / 2.0);
        assert!(dual_riesz_kernel(vec![1.0, 1.0], e2()).is_err());
        // l^3 space: y normalized in l^{3/2}
        let s3 = NormedSpace::new(2, NormKind::P { p: 3.0 }).unwrap();
        let c = 2f64.powf(-2.0 / 3.0);
        let k = dual_riesz_kernel(vec![c, c], s3).unwrap();
        let g = verify_growth(&k, &ProbeSet::standard(&s3, 1)).unwrap();
        assert!(g.fitted <= 1.0 + 1e-12);
    }

    #[test]
    fn growth_constants() {
        let h = hilbert_kernel();
        let probes = ProbeSet::standard(&h.space, 0);
        let g = verify_growth(&h, &probes).unwrap();
        assert_eq!(g.fitted, 1.0);
        let k = riesz_kernel(0, e2()).unwrap();
        let g = verify_growth(&k, &ProbeSet::standard(&k.space, 0)).unwrap();
        assert!(g.fitted <= 1.0 + 1e-12 && g.fitted > 0.99);
        let z = zero_kernel(e2());
        assert_eq!(verify_growth(&z, &ProbeSet::standard(&z.space, 0)).unwrap().fitted, 0.0);
    }

    #[test]
    fn holder_constants() {
        let h = hilbert_kernel();
        let rep = verify_holder(&h, &ProbeSet::standard(&h.space, 0)).unwrap();
        assert!(rep.fitted <= 2.0 && rep.pass);
        let inv = KernelSpec::InverseNorm { dim: 2, p: 2.0 }.build().unwrap();
        let rep = verify_holder(&inv, &ProbeSet::standard(&inv.space, 0)).unwrap();
        assert!(rep.fitted <= 2.0);
        let z = zero_kernel(e2());
        assert_eq!(verify_holder(&z, &ProbeSet::standard(&z.space, 0)).unwrap().fitted, 0.0);
    }

    #[test]
    fn probes_respect_half_norm_constraint() {
        for dim in 1..=4 {
            let s = NormedSpace::euclidean(dim);
            let p = ProbeSet::standard(&s, 3);
            assert_eq!(p.points.len(), PROBE_SCALES * PROBE_DIRECTIONS);
            assert_eq!(p.pairs.len(), PROBE_SCALES * PROBE_DIRECTIONS * PROBE_OFFSETS);
            assert!(p.pairs.iter().all(|(x, h)| s.norm(h) <= s.norm(x) / 2.0));
        }
    }

    #[test]
    fn nonfinite_kernel_reports_probe() {
        let k = expr_kernel("log(x1)", e2(), 1.0, Some(1.0)).unwrap();
        assert!(matches!(
            verify_growth(&k, &ProbeSet::standard(&k.space, 0)),
            Err(Error::NonFiniteKernel { .. })
        ));
    }

    #[test]
    fn expression_kernel_matches_builtin() {
        let e = expr_kernel("x1/norm^2", e2(), 1.0, None).unwrap();
        let k = riesz_kernel(0, e2()).unwrap();
        for x in &ProbeSet::standard(&e2(), 5).points {
            assert_eq!(e.eval(x), k.eval(x));
        }
        assert!((e.b - k.b).abs() < 1e-12);
        assert!(expr_kernel("x3", e2(), 1.0, None).is_err());
    }

    #[test]
    fn bump_profile() {
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(0.5), 1.0);
        assert_eq!(bump(2.0), 0.0);
        assert!((bump(1.0) - 0.5).abs() < 1e-15);
        let mut prev = 1.0;
        for i in 0..10_000 {
            let s = 3.0 * i as f64 / 9999.0;
            let v = bump(s);
            assert!(v <= prev && (0.0..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn annular_odd_symmetry_and_zero() {
        let h = hilbert_kernel();
        let line = Line::new(&h.space, vec![0.0], vec![1.0]).unwrap();
        let q = annular_integral(&h, &line, 0.1, 10.0).unwrap();
        assert!(q.value.abs() <= 1e-10, "{q:?}");
        let z = zero_kernel(e2());
        let line = Line::new(&z.space, vec![0.3, 1.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(annular_integral(&z, &line, 0.5, 2.0).unwrap().value, 0.0);
        assert!(annular_integral(&h, &Line::new(&h.space, vec![0.0], vec![1.0]).unwrap(), 1.0, 1.0).is_err());
    }

    #[test]
    fn annular_refinement_is_stable() {
        let k = riesz_kernel(0, e2()).unwrap();
        let u = [0.6, 0.8];
        let line = Line::new(&k.space, vec![0.0, 1.0], u.to_vec()).unwrap();
        let q = annular_integral(&k, &line, 0.25, 16.0).unwrap();
        assert!(q.value.is_finite());
        assert!(q.error < 1e-9, "{q:?}");
    }

    #[test]
    fn romberg_on_polynomial_and_smooth() {
        let q = romberg(&|x: f64| x * x, 0.0, 3.0, 1e-14);
        assert!((q.value - 9.0).abs() < 1e-12);
        let q = romberg(&|x: f64| x.exp(), 0.0, 1.0, 1e-14);
        assert!((q.value - (1f64.exp() - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let b = vec![3.0, 0.0, 0.0, 0.0, -5.0, 0.0, 0.0, 0.0, 1.0];
        let (s, _) = power_iteration_norm(&b, 3, 1e-12, 10_000).unwrap();
        assert!((s - 5.0).abs() < 1e-9);
        let z = vec![0.0; 9];
        assert_eq!(power_iteration_norm(&z, 3, 1e-8, 10).unwrap().0, 0.0);
    }

    #[test]
    fn zero_kernel_ubl() {
        let z = zero_kernel(NormedSpace::euclidean(1));
        let line = Line::new(&z.space, vec![0.0], vec![1.0]).unwrap();
        let rep = ubl_estimate(&z, &line, 2.0, 64, &[0.1]).unwrap();
        assert_eq!(rep.sup, 0.0);
        assert!(ubl_estimate(&z, &line, 2.0, 32, &[0.1]).is_err());
    }
}
