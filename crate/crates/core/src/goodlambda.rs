//! Level sets, the good-lambda inequality, the localization step behind it,
//! the passage to `L^p` bounds, and the end-to-end pipeline from a curve and
//! a kernel to a certified instance report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{self, BigPieceSelector, CurveMetadata, CurveSpec};
use crate::error::{Error, Result};
use crate::kernel::{verify_growth, verify_holder, Kernel, KernelSpec, ProbeSet};
use crate::rng::{self, Rng};
use crate::sio::{self, SioOperator};
use crate::space::{upper_regularity_exact, DiscreteMeasure, Metric, NormKind};
use crate::whitney::{self, scale, WhitneyPiece};

const REL_TOL: f64 = 1e-10;

fn le(a: f64, b: f64) -> bool {
    a <= b + REL_TOL * a.abs().max(b.abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub lambda: f64,
    pub members: Vec<usize>,
    pub mass: f64,
}

/// `{x in supp(nu) : value(x) > lambda}` and its mass.
pub fn level_set(values: &[f64], weights: &[f64], lambda: f64) -> LevelSet {
    let members: Vec<usize> = (0..values.len())
        .filter(|&i| weights[i] > 0.0 && values[i] > lambda)
        .collect();
    let mass = members.iter().map(|&i| weights[i]).fold(0.0, |a, w| a + w);
    LevelSet { lambda, members, mass }
}

/// `min(0.99 eps / (4 C), eps theta / (8 c C_D))`.
pub fn delta_from_epsilon(eps: f64, theta: f64, c: f64, c_d: f64, c_pointwise: f64) -> Result<f64> {
    for (name, v) in [("eps", eps), ("theta", theta), ("c", c), ("C_D", c_d), ("C", c_pointwise)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
        }
    }
    Ok((0.99 * eps / (4.0 * c_pointwise)).min(eps * theta / (8.0 * c * c_d)))
}

/// Constants of the three pointwise estimates in the localization step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseConstants {
    pub c_k: f64,
    pub c_nu: f64,
    pub n: u32,
    pub beta: f64,
    /// Near annulus: `486^n C_K C_nu`.
    pub near: f64,
    /// Smoothness transfer: `C_K C_nu (4^n / (2^beta - 1) + 8^n)`.
    pub transfer: f64,
    /// `max(near, transfer)`, the constant fed to [`delta_from_epsilon`].
    pub c: f64,
    /// The printed constants `162^n C_K C_nu` and `C_K C_nu 2^n / (2^beta - 1)`.
    pub printed_near: f64,
    pub printed_transfer: f64,
}

pub fn pointwise_constant(c_k: f64, c_nu: f64, n: u32, beta: f64) -> PointwiseConstants {
    let nn = n as i32;
    let kn = c_k * c_nu;
    let denom = 2f64.powf(beta) - 1.0;
    let near = 486f64.powi(nn) * kn;
    let transfer = kn * (4f64.powi(nn) / denom + 8f64.powi(nn));
    PointwiseConstants {
        c_k,
        c_nu,
        n,
        beta,
        near,
        transfer,
        c: near.max(transfer),
        printed_near: 162f64.powi(nn) * kn,
        printed_transfer: kn * 2f64.powi(nn) / denom,
    }
}

/// `max(162^n, 2^n/(2^beta - 1)) C_K C_nu`, the constant as printed.
pub fn stated_pointwise_constant(c_k: f64, c_nu: f64, n: u32, beta: f64) -> f64 {
    let p = pointwise_constant(c_k, c_nu, n, beta);
    p.printed_near.max(p.printed_transfer)
}

/// Everything the localization step needs about one `(f, lambda)` instance.
pub struct LocalContext<'a> {
    pub op: &'a SioOperator<'a>,
    pub mu: &'a DiscreteMeasure,
    pub f: &'a [f64],
    pub t_star: &'a [f64],
    pub maximal: &'a [f64],
    pub in_omega: &'a [bool],
    pub lambda: f64,
    /// Truncation grid used when the operator is not shell-exact.
    pub grid: Option<&'a [f64]>,
    pub constants: &'a PointwiseConstants,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub x: usize,
    pub center: usize,
    pub k: i32,
    /// `T_* f(x) > (1 + eps) lambda` and `M f(x) <= delta lambda`.
    pub qualifies: bool,
    pub t_star: f64,
    pub maximal: f64,
    /// `T_*(chi_{B(x_i, 4 8^-k)} f)(x)`.
    pub local: f64,
    /// `T_*(chi_{S \ B(x_i, 4 8^-k)} f)(x)`.
    pub outer: f64,
    /// Nearest point outside the level set, within `322 8^-k` of the centre.
    pub witness: Option<usize>,
    pub near_term: f64,
    pub near_bound: f64,
    pub far_at_witness: f64,
    pub witness_t_star: f64,
    pub transfer_term: f64,
    pub transfer_bound: f64,
    /// `outer <= near + far(x)` and `far(x) <= far(z) + transfer`.
    pub chain_holds: bool,
    /// `local >= T_* f(x) - lambda - 2 C M f(x)`.
    pub delta_free_holds: bool,
    /// `local > eps lambda / 2` when the instance qualifies.
    pub conclusion: Option<bool>,
    pub hypothesis_violation: bool,
    pub pass: bool,
}

/// Checks the localization step at `x` in `piece`.
pub fn localization_check(
    ctx: &LocalContext,
    piece: &WhitneyPiece,
    x: usize,
    eps: f64,
    delta: f64,
) -> Result<LocalizationReport> {
    let sup = ctx.mu.support();
    let w = ctx.mu.weights();
    let n = ctx.mu.len();
    let (x0, k) = (piece.center, piece.k);
    let r = scale(k);
    let lambda = ctx.lambda;
    let t_x = ctx.t_star[x];
    let m_x = ctx.maximal[x];
    let masked = |keep: &dyn Fn(usize) -> bool| -> Vec<f64> {
        (0..n).map(|j| if keep(j) { ctx.f[j] } else { 0.0 }).collect()
    };
    let t_at = |g: &[f64], p: usize| ctx.op.t_star_at(g, p, ctx.grid);
    let in_2b2 = |j: usize| sup.dist(x0, j) < 4.0 * r;
    let local = t_at(&masked(&in_2b2), x)?;
    let outer = t_at(&masked(&|j| !in_2b2(j)), x)?;
    let qualifies = t_x > (1.0 + eps) * lambda && m_x <= delta * lambda;
    let delta_free_holds = local >= t_x - lambda - 2.0 * ctx.constants.c * m_x - REL_TOL * t_x.abs().max(local.abs());
    let conclusion = qualifies.then_some(local > eps * lambda / 2.0);
    let witness = (0..n)
        .filter(|&j| w[j] > 0.0 && !ctx.in_omega[j])
        .map(|j| (sup.dist(x0, j), j))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .filter(|(d, _)| *d < 322.0 * r)
        .map(|(_, j)| j);
    let mut rep = LocalizationReport {
        x,
        center: x0,
        k,
        qualifies,
        t_star: t_x,
        maximal: m_x,
        local,
        outer,
        witness,
        near_term: f64::NAN,
        near_bound: f64::NAN,
        far_at_witness: f64::NAN,
        witness_t_star: f64::NAN,
        transfer_term: f64::NAN,
        transfer_bound: f64::NAN,
        chain_holds: false,
        delta_free_holds,
        conclusion,
        hypothesis_violation: witness.is_none(),
        pass: false,
    };
    if let Some(z) = witness {
        let in_2b = |j: usize| sup.dist(z, j) < 648.0 * r;
        let near = t_at(&masked(&|j| in_2b(j) && !in_2b2(j)), x)?;
        let f_far = masked(&|j| !in_2b(j));
        let far_z = t_at(&f_far, z)?;
        let far_x = t_at(&f_far, x)?;
        rep.near_term = near;
        rep.near_bound = ctx.constants.near * m_x;
        rep.far_at_witness = far_z;
        rep.witness_t_star = ctx.t_star[z];
        rep.transfer_term = (far_x - far_z).abs();
        rep.transfer_bound = ctx.constants.transfer * m_x;
        rep.chain_holds = le(outer, near + far_x) && le(far_x, far_z + rep.transfer_term);
        rep.pass = le(near, rep.near_bound)
            && le(far_z, rep.witness_t_star)
            && rep.witness_t_star <= lambda
            && le(rep.transfer_term, rep.transfer_bound)
            && rep.chain_holds
            && delta_free_holds
            && conclusion != Some(false);
    }
    Ok(rep)
}

/// One `(lambda, eps)` entry of the good-lambda sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodLambdaRow {
    pub function: usize,
    pub lambda: f64,
    pub eps: f64,
    pub delta: f64,
    /// `nu(Omega_lambda)`.
    pub omega_mass: f64,
    /// `nu{T_* > (1 + eps) lambda, M f <= delta lambda}`.
    pub bad_mass: f64,
    /// `(1 - theta/4) nu(Omega_lambda)`.
    pub bound: f64,
    pub pass: bool,
}

/// Exact mass comparison of the good-lambda inequality.
pub fn goodlambda_check(
    weights: &[f64],
    t_star: &[f64],
    maximal: &[f64],
    lambda: f64,
    eps: f64,
    delta: f64,
    theta: f64,
) -> GoodLambdaRow {
    let omega_mass = level_set(t_star, weights, lambda).mass;
    let bad_mass = (0..weights.len())
        .filter(|&i| weights[i] > 0.0 && t_star[i] > (1.0 + eps) * lambda && maximal[i] <= delta * lambda)
        .map(|i| weights[i])
        .fold(0.0, |a, w| a + w);
    let bound = (1.0 - theta / 4.0) * omega_mass;
    GoodLambdaRow {
        function: 0,
        lambda,
        eps,
        delta,
        omega_mass,
        bad_mass,
        bound,
        pass: bad_mass <= bound,
    }
}

/// Midpoint quantiles `(j + 1/2) / q` of `T_* f` over the atoms with
/// positive weight, positive and deduplicated, in ascending order.
pub fn lambda_grid(weights: &[f64], t_star: &[f64], q: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = (0..weights.len()).filter(|&i| weights[i] > 0.0).map(|i| t_star[i]).collect();
    if sorted.is_empty() {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let mut lambdas: Vec<f64> = (0..q)
        .map(|j| quantile(&sorted, (j as f64 + 0.5) / q as f64))
        .filter(|l| *l > 0.0)
        .collect();
    lambdas.dedup();
    lambdas
}

/// [`goodlambda_check`] over `lambdas` x `(eps, delta)` pairs, rows ordered
/// by `lambda` and then by pair.
pub fn goodlambda_sweep(
    weights: &[f64],
    t_star: &[f64],
    maximal: &[f64],
    lambdas: &[f64],
    pairs: &[(f64, f64)],
    theta: f64,
) -> Vec<GoodLambdaRow> {
    lambdas
        .iter()
        .flat_map(|&l| pairs.iter().map(move |&(e, d)| goodlambda_check(weights, t_star, maximal, l, e, d, theta)))
        .collect()
}

/// Good-lambda inequality at every `lambda > 0` at once.
///
/// The bad set at `lambda` is `{i : M_i / delta <= lambda < T_i / (1 + eps)}`
/// and `Omega_lambda = {i : lambda < T_i}`, so both masses are step
/// functions whose jumps sit at finitely many event points.
pub fn goodlambda_holds_everywhere(
    weights: &[f64],
    t_star: &[f64],
    maximal: &[f64],
    eps: f64,
    delta: f64,
    theta: f64,
) -> bool {
    let eta = 1.0 - theta / 4.0;
    let mut events: Vec<(f64, f64, f64)> = Vec::with_capacity(3 * weights.len());
    let mut omega = 0.0;
    for i in 0..weights.len() {
        let w = weights[i];
        if w <= 0.0 || t_star[i] <= 0.0 {
            continue;
        }
        omega += w;
        events.push((t_star[i], 0.0, -w));
        let (a, b) = (maximal[i] / delta, t_star[i] / (1.0 + eps));
        if a < b {
            events.push((a, w, 0.0));
            events.push((b, -w, 0.0));
        }
    }
    events.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total = omega;
    let mut bad = 0.0;
    let mut k = 0;
    while k < events.len() {
        let pos = events[k].0;
        while k < events.len() && events[k].0 == pos {
            bad += events[k].1;
            omega += events[k].2;
            k += 1;
        }
        if pos > 0.0 && bad > eta * omega + 1e-12 * total {
            return false;
        }
    }
    true
}

/// Largest `delta` (to relative precision `1e-12`) for which
/// [`goodlambda_holds_everywhere`] holds, searched upward from `start`.
/// Returns `None` when `start` itself fails.
pub fn certified_delta(weights: &[f64], t_star: &[f64], maximal: &[f64], eps: f64, theta: f64, start: f64) -> Option<f64> {
    let holds = |d: f64| goodlambda_holds_everywhere(weights, t_star, maximal, eps, d, theta);
    if !holds(start) {
        return None;
    }
    let (mut lo, mut hi) = (start, start * 2.0);
    while holds(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > start * 2f64.powi(200) {
            return Some(f64::INFINITY);
        }
    }
    while hi / lo > 1.0 + 1e-12 {
        let mid = (lo * hi).sqrt();
        if holds(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// Largest `eps` with `(1 + eps)^-p > 1 - theta/4`; the condition is strict.
pub fn feasibility_threshold(p: f64, theta: f64) -> f64 {
    (1.0 - theta / 4.0).powf(-1.0 / p) - 1.0
}

/// Minimizer over `(0, threshold)` of `eps^-p / ((1 + eps)^-p - eta)`, the
/// shape of the bound when `delta` is linear in `eps`.
pub fn optimal_epsilon(p: f64, theta: f64) -> f64 {
    let eta = 1.0 - theta / 4.0;
    let hi = feasibility_threshold(p, theta);
    let phi = |e: f64| -p * e.ln() - ((1.0 + e).powf(-p) - eta).ln();
    let (mut a, mut b) = (hi * 1e-6, hi * (1.0 - 1e-9));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if phi(c) <= phi(d) {
            b = d;
        } else {
            a = c;
        }
    }
    (a + b) / 2.0
}

/// `||g||_p^p` by the layer-cake sum over the distinct values of `g`.
pub fn layer_cake(values: &[f64], weights: &[f64], p: f64) -> f64 {
    let mut v: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(a, w)| (a.abs(), *w))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut tail: f64 = v.iter().map(|x| x.1).sum();
    let mut prev = 0.0f64;
    let mut total = 0.0;
    let mut k = 0;
    while k < v.len() {
        let level = v[k].0;
        total += (level.powf(p) - prev.powf(p)) * tail;
        while k < v.len() && v[k].0 == level {
            tail -= v[k].1;
            k += 1;
        }
        prev = level;
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpReport {
    pub p: f64,
    pub theta: f64,
    pub eta: f64,
    /// `(1 - theta/4)^(-1/p) - 1`.
    pub threshold: f64,
    pub feasible: bool,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    /// `||T_* f||_p / ||f||_p` for the run.
    pub realized: f64,
    pub maximal_ratio: f64,
    /// `[delta^-p / ((1+eps)^-p - eta)]^(1/p) ||M f||_p / ||f||_p`.
    pub a_p: Option<f64>,
    pub layer_cake_ok: bool,
    pub truncation_ok: bool,
    pub bound_holds: bool,
}

/// `A_p` from the good-lambda chain for one function. `candidates` lists
/// `(eps, delta)` pairs for which the good-lambda sweep passed.
pub fn lp_from_goodlambda(
    weights: &[f64],
    f: &[f64],
    t_star: &[f64],
    maximal: &[f64],
    p: f64,
    theta: f64,
    candidates: &[(f64, f64)],
) -> Result<LpReport> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid("p must lie in (1, inf)"));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid("theta must lie in (0, 1)"));
    }
    let eta = 1.0 - theta / 4.0;
    let threshold = feasibility_threshold(p, theta);
    let f_p = sio::lp_norm(f, weights, p);
    let t_pp: f64 = t_star.iter().zip(weights).map(|(v, w)| v.abs().powf(p) * w).sum();
    let m_p = sio::lp_norm(maximal, weights, p);
    let (realized, maximal_ratio) = if f_p > 0.0 {
        (t_pp.powf(1.0 / p) / f_p, m_p / f_p)
    } else {
        (0.0, 0.0)
    };
    // truncations g_m at the value quantiles and beyond the maximum
    let mut sorted: Vec<f64> = t_star.to_vec();
    sorted.sort_by(f64::total_cmp);
    let top = sorted.last().copied().unwrap_or(0.0);
    let caps: Vec<f64> = [0.25, 0.5, 0.75]
        .iter()
        .map(|q| sorted.get(((sorted.len() as f64 * q) as usize).min(sorted.len().saturating_sub(1))).copied().unwrap_or(0.0))
        .chain([top, 2.0 * top + 1.0])
        .collect();
    let gs: Vec<Vec<f64>> = caps.iter().map(|&m| t_star.iter().map(|v| v.min(m)).collect()).collect();
    let mut truncation_ok = gs.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| a <= b));
    for g in &gs[3..] {
        truncation_ok &= g.iter().zip(t_star).all(|(a, b)| a == b);
    }
    let layer_cake_ok = gs.iter().chain(std::iter::once(&t_star.to_vec())).all(|g| {
        let direct: f64 = g.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(v, w)| v.abs().powf(p) * w).sum();
        let lc = layer_cake(g, weights, p);
        (lc - direct).abs() <= 1e-12 * direct.max(f64::MIN_POSITIVE)
    });
    let best = candidates
        .iter()
        .filter(|(e, d)| *e > 0.0 && *d > 0.0 && (1.0 + e).powf(-p) - eta > 0.0)
        .map(|&(e, d)| (e, d, (d.powf(-p) / ((1.0 + e).powf(-p) - eta)).powf(1.0 / p)))
        .min_by(|a, b| a.2.total_cmp(&b.2));
    let (eps, delta, a_p) = match best {
        Some((e, d, factor)) => (Some(e), Some(d), Some(if realized == 0.0 { 0.0 } else { factor * maximal_ratio })),
        None => (None, None, None),
    };
    let bound_holds = a_p.is_none_or(|a| realized <= a * (1.0 + REL_TOL));
    Ok(LpReport {
        p,
        theta,
        eta,
        threshold,
        feasible: best.is_some(),
        eps,
        delta,
        realized,
        maximal_ratio,
        a_p,
        layer_cake_ok,
        truncation_ok,
        bound_holds,
    })
}

fn default_samples() -> usize {
    1024
}
fn default_norm_p() -> f64 {
    2.0
}
fn default_alpha() -> f64 {
    1.0
}
fn default_s_max() -> f64 {
    4.0
}
fn default_ensemble_size() -> usize {
    10
}
fn default_p() -> Vec<f64> {
    vec![2.0]
}
fn default_eps_grid() -> Vec<f64> {
    (0..7).map(|k| 0.5f64.powi(k)).collect()
}
fn default_quantiles() -> usize {
    50
}
fn default_whitney_quantiles() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}
fn default_l2_eps() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    #[serde(flatten)]
    pub shape: CurveSpec,
    /// Number of parameter intervals `K`.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// `l^p` exponent of the ambient norm; non-finite means the sup-norm.
    #[serde(default = "default_norm_p")]
    pub norm_p: f64,
    /// Hölder exponent of the derivative.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    /// The appended ray runs over `s in [3, s_max]`.
    #[serde(default = "default_s_max")]
    pub s_max: f64,
    /// Ray direction; the first basis vector when absent.
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            s_max: default_s_max(),
            direction: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    #[serde(default = "default_ensemble_size")]
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            size: default_ensemble_size(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub curve: CurveConfig,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default = "default_p")]
    pub p: Vec<f64>,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_quantiles")]
    pub lambda_quantiles: usize,
    /// Quantiles of `T_* f_0` at which `Omega_lambda` is decomposed.
    #[serde(default = "default_whitney_quantiles")]
    pub whitney_quantiles: Vec<f64>,
    /// Truncation radius of the `L^2` operator norm.
    #[serde(default = "default_l2_eps")]
    pub l2_eps: f64,
    /// Weak constant supplied directly instead of measured.
    #[serde(default)]
    pub c: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantEntry {
    pub symbol: String,
    pub value: f64,
    pub stage: String,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveStage {
    pub samples: usize,
    pub closed: bool,
    pub metadata: CurveMetadata,
    pub bilipschitz_violations: usize,
    pub flatness_pass: bool,
    pub length_after_normalization: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BigPieceStage {
    pub theta: f64,
    pub reg: f64,
    pub r_min: f64,
    pub selections: usize,
    /// Selections whose piece is shorter than the parameter spacing.
    pub skipped: usize,
    pub failures: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SioStage {
    pub support_points: usize,
    pub ray: curve::RayReport,
    pub exact: bool,
    pub c_k: f64,
    pub growth_fitted: f64,
    pub holder_fitted: f64,
    pub c_nu: f64,
    /// Weak (1,1) constant of `T_*`, max over the ensemble.
    pub weak_t: f64,
    /// Weak (1,1) constant of `M`, max over the ensemble, and its Vitali bound.
    pub weak_m: f64,
    pub weak_m_bound: f64,
    pub l2_norm: f64,
    pub l2_eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitneyStage {
    pub lambda: f64,
    pub omega_points: usize,
    pub pieces: usize,
    pub overlap: usize,
    pub cover_bound: usize,
    pub properties_pass: bool,
    pub b: f64,
    pub i1: usize,
    pub half_mass: bool,
    pub localization_points: usize,
    pub localization_qualifying: usize,
    pub localization_failures: usize,
    pub hypothesis_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodLambdaReport {
    pub theta: f64,
    pub eta: f64,
    /// Weak constant used for `delta` and whether it was measured or supplied.
    pub c: f64,
    pub c_route: String,
    pub c_d: f64,
    pub pointwise: PointwiseConstants,
    pub stated_pointwise: f64,
    pub eps: Vec<f64>,
    pub delta: Vec<f64>,
    pub rows: Vec<GoodLambdaRow>,
    pub violations: usize,
    /// `(function, eps)` pairs failing at some `lambda` off the quantile grid.
    pub everywhere_violations: usize,
    pub monotone: bool,
    pub lp: Vec<LpSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSummary {
    pub p: f64,
    pub threshold: f64,
    pub feasible: bool,
    /// Max over the ensemble.
    pub a_p: Option<f64>,
    /// Same chain with the largest `delta` for which the good-lambda
    /// inequality holds at every `lambda`; minimised over `eps`.
    pub a_p_certified: Option<f64>,
    pub realized: f64,
    pub all_checks: bool,
    pub per_function: Vec<LpReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub curve: CurveStage,
    pub big_pieces: BigPieceStage,
    pub sio: SioStage,
    pub whitney: Vec<WhitneyStage>,
    pub goodlambda: GoodLambdaReport,
    pub constants: Vec<ConstantEntry>,
    pub pass: bool,
}

fn norm_of(p: f64) -> NormKind {
    if p.is_finite() {
        NormKind::P { p }
    } else {
        NormKind::Sup
    }
}

/// Smooth random functions of position on the curve atoms, zero on the ray.
pub fn ensemble(mu: &DiscreteMeasure, curve_atoms: usize, size: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let cloud = mu
        .support()
        .cloud()
        .ok_or_else(|| Error::invalid("the ensemble needs a point cloud"))?;
    let dim = cloud.space().dim;
    Ok((0..size)
        .map(|k| {
            let mut r = rng::substream(seed, "f-ensemble", k as u64);
            let modes: Vec<(f64, Vec<f64>, f64)> = (0..3)
                .map(|_| {
                    let a = r.random_range(-1.0..1.0);
                    let om: Vec<f64> = (0..dim).map(|_| r.random_range(-40.0..40.0)).collect();
                    (a, om, r.random_range(0.0..std::f64::consts::TAU))
                })
                .collect();
            (0..mu.len())
                .map(|i| {
                    if i >= curve_atoms {
                        return 0.0;
                    }
                    let x = cloud.point(i);
                    1.0 + modes
                        .iter()
                        .map(|(a, om, ph)| a * (om.iter().zip(x).map(|(o, v)| o * v).sum::<f64>() + ph).cos())
                        .sum::<f64>()
                        / 2.0
                })
                .collect()
        })
        .collect())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() as f64 * q) as usize).min(sorted.len() - 1);
    sorted[i]
}

fn positive_floor(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        1.0
    }
}

/// Curve, big pieces, ray, kernel and operator, Whitney, good lambda, `A_p`.
pub fn run_theorem_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let mut constants = Vec::new();
    let mut note = |symbol: &str, value: f64, stage: &str, source: &str| {
        constants.push(ConstantEntry {
            symbol: symbol.into(),
            value,
            stage: stage.into(),
            source: source.into(),
        })
    };
    // curve
    let curve_stage = (|| -> Result<_> {
        let raw = cfg.curve.shape.sample(cfg.curve.samples, norm_of(cfg.curve.norm_p))?;
        raw.check_injective()?;
        let c = raw.normalized(0)?;
        let meta = CurveMetadata::fit(&c, cfg.curve.alpha)?;
        let audit = curve::bilipschitz_audit(&c, &meta);
        let flat = curve::flatness_check(&c, &meta);
        let length = curve::curve_integral(&c, |_| 1.0)?;
        let violations = audit.lower_violations + audit.upper_violations;
        let stage = CurveStage {
            samples: c.len(),
            closed: c.is_closed(),
            metadata: meta.clone(),
            bilipschitz_violations: violations,
            flatness_pass: flat.pass,
            length_after_normalization: length,
            pass: violations == 0 && flat.pass,
        };
        Ok((c, meta, stage))
    })()
    .map_err(|e| e.at_stage("curve"))?;
    let (c, meta, curve_stage) = curve_stage;
    note("m", meta.m, "curve", "inf of sampled speeds");
    note("M", meta.big_m, "curve", "sup of speeds and chord quotients");
    note("delta_window", meta.delta, "curve", "bilipschitz window");
    // big pieces
    let r_min = c.max_spacing() * meta.big_m_clamped();
    let selector = BigPieceSelector::new(&c, &meta, r_min).map_err(|e| e.at_stage("big-pieces"))?;
    let theta = selector.theta();
    let (selections, skipped, failures) = {
        let centers: Vec<usize> = (0..8).map(|j| j * (c.len() - 1) / 8).collect();
        let (mut count, mut skipped, mut fails) = (0, 0, 0);
        for &ctr in &centers {
            for r in [0.05, 0.2, 1.0] {
                match selector.select(ctr, r) {
                    Ok(piece) => {
                        count += 1;
                        if !piece.passes() {
                            fails += 1;
                        }
                    }
                    Err(Error::ResolutionTooCoarse(_)) => skipped += 1,
                    Err(e) => return Err(e.at_stage("big-pieces")),
                }
            }
        }
        (count, skipped, fails)
    };
    let bp_stage = BigPieceStage {
        theta,
        reg: selector.reg(),
        r_min,
        selections,
        skipped,
        failures,
        pass: failures == 0 && theta > 0.0 && theta < 1.0,
    };
    note("reg", selector.reg(), "big-pieces", "exact upper regularity of the curve measure");
    note("theta", theta, "big-pieces", "m delta / (4 M reg)");
    // ray
    let dim = c.space().dim;
    let v0 = match &cfg.measure.direction {
        Some(v) => {
            let nv = c.space().norm(v);
            v.iter().map(|x| x / nv).collect()
        }
        None => {
            let mut v = vec![0.0; dim];
            v[0] = 1.0;
            v
        }
    };
    let curve_atoms = selector.measure().len();
    let (nu, ray) = curve::append_ray(selector.measure(), &v0, cfg.measure.s_max).map_err(|e| e.at_stage("ray"))?;
    drop(selector);
    // kernel and operator
    let kernel: Kernel = cfg.kernel.build().map_err(|e| e.at_stage("kernel"))?;
    let probes = ProbeSet::standard(&kernel.space, 0);
    let growth = verify_growth(&kernel, &probes).map_err(|e| e.at_stage("kernel"))?;
    let holder = verify_holder(&kernel, &probes).map_err(|e| e.at_stage("kernel"))?;
    let c_k = kernel.b.max(growth.fitted).max(holder.fitted);
    note("C_K", c_k, "kernel", "max of certified B and fitted growth and Hölder constants");
    let op = SioOperator::new(&kernel, &nu).map_err(|e| e.at_stage("sio"))?;
    let fs = ensemble(&nu, curve_atoms, cfg.ensemble.size, cfg.ensemble.seed)?;
    let ev = op.evaluate(&fs).map_err(|e| e.at_stage("sio"))?;
    let w = nu.weights();
    let spacing = {
        let sup = nu.support();
        (0..nu.len())
            .into_par_iter()
            .map(|i| (0..nu.len()).filter(|&j| j != i).map(|j| sup.dist(i, j)).fold(f64::INFINITY, f64::min))
            .reduce(|| f64::INFINITY, f64::min)
    };
    let c_nu = upper_regularity_exact(&nu, kernel.n, spacing).map_err(|e| e.at_stage("sio"))?;
    note("C_nu", c_nu, "sio", "exact upper regularity of nu over radii >= the smallest spacing");
    let mut weak_t: f64 = 0.0;
    let mut weak_m: f64 = 0.0;
    for (k, f) in fs.iter().enumerate() {
        let l1 = sio::l1_norm(f, w);
        if l1 > 0.0 {
            weak_t = weak_t.max(sio::weak11_constant(&ev.t_star[k], w, l1).map_err(|e| e.at_stage("sio"))?);
            weak_m = weak_m.max(sio::weak11_constant(&ev.maximal_fn[k], w, l1).map_err(|e| e.at_stage("sio"))?);
        }
    }
    let weak_m_bound = sio::dilation_constant(&nu, 3.0);
    let l2 = sio::lp_operator_norm_estimate(&op, 2.0, cfg.l2_eps, 0, cfg.ensemble.seed).map_err(|e| e.at_stage("sio"))?;
    let (c_used, c_route) = match cfg.c {
        Some(v) => (v, "supplied".to_string()),
        None => (weak_t, "measured weak (1,1) constant of T_* over the support".to_string()),
    };
    note("c", c_used, "sio", &c_route);
    note("L2", l2.value, "sio", "largest singular value of the truncated kernel matrix");
    let sio_stage = SioStage {
        support_points: nu.len(),
        ray,
        exact: ev.exact,
        c_k,
        growth_fitted: growth.fitted,
        holder_fitted: holder.fitted,
        c_nu,
        weak_t,
        weak_m,
        weak_m_bound,
        l2_norm: l2.value,
        l2_eps: cfg.l2_eps,
    };
    let pw = pointwise_constant(c_k, c_nu, kernel.n, kernel.beta);
    note("C", pw.c, "goodlambda", "max of the near-annulus and transfer constants");
    // Whitney decompositions of level sets of the first function
    let tree = {
        let (a, b) = whitney::default_scale_range(nu.support());
        whitney::christ_cubes(nu.support(), a, b).map_err(|e| e.at_stage("whitney"))?
    };
    let mut wstages = Vec::new();
    let mut c_d: usize = 1;
    if let Some(t0) = ev.t_star.first() {
        let mut sorted = t0.clone();
        sorted.sort_by(f64::total_cmp);
        for &q in &cfg.whitney_quantiles {
            let lambda = quantile(&sorted, q);
            let ls = level_set(t0, w, lambda);
            if !(lambda > 0.0) || ls.members.is_empty() || ls.members.len() == nu.len() {
                continue;
            }
            let mut in_omega = vec![false; nu.len()];
            for &i in &ls.members {
                in_omega[i] = true;
            }
            let wd = whitney::whitney_decompose(&tree, &in_omega).map_err(|e| e.at_stage("whitney"))?;
            let cls = whitney::classify_doubling(&wd, &nu, None).map_err(|e| e.at_stage("whitney"))?;
            c_d = c_d.max(wd.overlap);
            wstages.push((lambda, in_omega, wd, cls));
        }
    }
    note("C_D", c_d as f64, "whitney", "max measured overlap of the 16 8^-k balls");
    let eps_list: Vec<f64> = {
        let mut e = cfg.eps_grid.clone();
        for &p in &cfg.p {
            e.push(optimal_epsilon(p, theta));
        }
        e.sort_by(|a, b| b.total_cmp(a));
        e.dedup();
        e
    };
    let delta_of = |eps: f64| {
        delta_from_epsilon(eps, theta, positive_floor(c_used), c_d as f64, positive_floor(pw.c))
    };
    let deltas: Vec<f64> = eps_list.iter().map(|&e| delta_of(e)).collect::<Result<_>>().map_err(|e| e.at_stage("goodlambda"))?;
    let whitney_stages: Vec<WhitneyStage> = wstages
        .iter()
        .map(|(lambda, in_omega, wd, cls)| -> Result<WhitneyStage> {
            let eps = *eps_list.last().unwrap();
            let delta = delta_of(eps)?;
            let ctx = LocalContext {
                op: &op,
                mu: &nu,
                f: &fs[0],
                t_star: &ev.t_star[0],
                maximal: &ev.maximal_fn[0],
                in_omega,
                lambda: *lambda,
                grid: ev.grid.as_deref(),
                constants: &pw,
            };
            let reps: Vec<LocalizationReport> = wd
                .pieces
                .par_iter()
                .flat_map_iter(|p| p.members.iter().map(move |&x| (p, x)))
                .map(|(p, x)| localization_check(&ctx, p, x, eps, delta))
                .collect::<Result<_>>()?;
            Ok(WhitneyStage {
                lambda: *lambda,
                omega_points: wd.omega.len(),
                pieces: wd.pieces.len(),
                overlap: wd.overlap,
                cover_bound: wd.cover_bound,
                properties_pass: wd.pass(),
                b: cls.b,
                i1: cls.i1.len(),
                half_mass: cls.half_mass,
                localization_points: reps.len(),
                localization_qualifying: reps.iter().filter(|r| r.qualifies).count(),
                localization_failures: reps.iter().filter(|r| !r.hypothesis_violation && !r.pass).count(),
                hypothesis_violations: reps.iter().filter(|r| r.hypothesis_violation).count(),
            })
        })
        .collect::<Result<_>>()
        .map_err(|e| e.at_stage("whitney"))?;
    // good-lambda sweep
    let q = cfg.lambda_quantiles;
    let pairs: Vec<(f64, f64)> = eps_list.iter().cloned().zip(deltas.iter().cloned()).collect();
    let rows: Vec<GoodLambdaRow> = (0..fs.len())
        .into_par_iter()
        .map(|k| {
            let lambdas = lambda_grid(w, &ev.t_star[k], q);
            let mut rows = goodlambda_sweep(w, &ev.t_star[k], &ev.maximal_fn[k], &lambdas, &pairs, theta);
            rows.iter_mut().for_each(|r| r.function = k);
            rows
        })
        .flatten_iter()
        .collect();
    // the same pairs at every lambda, not only the quantiles
    let everywhere_violations = (0..fs.len())
        .flat_map(|k| pairs.iter().map(move |&(e, d)| (k, e, d)))
        .filter(|&(k, e, d)| !goodlambda_holds_everywhere(w, &ev.t_star[k], &ev.maximal_fn[k], e, d, theta))
        .count();
    let violations = rows.iter().filter(|r| !r.pass).count();
    let monotone = {
        let mut ok = true;
        for k in 0..fs.len() {
            for &eps in &eps_list {
                let sel: Vec<&GoodLambdaRow> = rows.iter().filter(|r| r.function == k && r.eps == eps).collect();
                ok &= sel.windows(2).all(|p| {
                    p[1].lambda < p[0].lambda || (p[1].omega_mass <= p[0].omega_mass && p[1].bad_mass <= p[0].bad_mass)
                });
            }
        }
        ok
    };
    let passing: Vec<(f64, f64)> = eps_list
        .iter()
        .zip(&deltas)
        .filter(|(e, _)| rows.iter().all(|r| r.eps != **e || r.pass))
        .map(|(e, d)| (*e, *d))
        .collect();
    // (eps, delta*) with delta* the ensemble minimum of the certified delta
    let certified: Vec<(f64, f64)> = passing
        .iter()
        .filter_map(|&(eps, d0)| {
            (0..fs.len())
                .map(|k| certified_delta(w, &ev.t_star[k], &ev.maximal_fn[k], eps, theta, d0))
                .try_fold(f64::INFINITY, |a, d| d.map(|d| a.min(d)))
                .map(|d| (eps, d))
        })
        .collect();
    let mut lp = Vec::new();
    for &p in &cfg.p {
        let per: Vec<LpReport> = (0..fs.len())
            .map(|k| lp_from_goodlambda(w, &fs[k], &ev.t_star[k], &ev.maximal_fn[k], p, theta, &passing))
            .collect::<Result<_>>()
            .map_err(|e| e.at_stage("lp"))?;
        let feasible = per.iter().all(|r| r.feasible);
        let a_p = if feasible {
            Some(per.iter().map(|r| r.a_p.unwrap()).fold(0.0f64, f64::max))
        } else {
            None
        };
        if let Some(a) = a_p {
            note(&format!("A_{p}"), a, "lp", "good-lambda chain, max over the ensemble");
        }
        let eta = 1.0 - theta / 4.0;
        let a_p_certified = certified
            .iter()
            .filter(|(e, d)| (1.0 + e).powf(-p) > eta && d.is_finite())
            .map(|&(e, d)| {
                let a = (d.powf(-p) / ((1.0 + e).powf(-p) - eta)).powf(1.0 / p);
                per.iter().map(|r| a * r.maximal_ratio).fold(0.0, f64::max)
            })
            .min_by(f64::total_cmp);
        if let Some(a) = a_p_certified {
            note(&format!("A_{p} certified"), a, "lp", "largest delta valid at every lambda");
        }
        lp.push(LpSummary {
            p,
            threshold: feasibility_threshold(p, theta),
            feasible,
            a_p,
            a_p_certified,
            realized: per.iter().map(|r| r.realized).fold(0.0, f64::max),
            all_checks: per.iter().all(|r| r.layer_cake_ok && r.truncation_ok && r.bound_holds),
            per_function: per,
        });
    }
    note("eta", 1.0 - theta / 4.0, "goodlambda", "1 - theta/4");
    let gl = GoodLambdaReport {
        theta,
        eta: 1.0 - theta / 4.0,
        c: c_used,
        c_route,
        c_d: c_d as f64,
        stated_pointwise: stated_pointwise_constant(c_k, c_nu, kernel.n, kernel.beta),
        pointwise: pw,
        eps: eps_list,
        delta: deltas,
        rows,
        violations,
        everywhere_violations,
        monotone,
        lp,
    };
    let pass = curve_stage.pass
        && bp_stage.pass
        && whitney_stages.iter().all(|s| s.properties_pass && s.half_mass && s.localization_failures == 0)
        && gl.violations == 0
        && gl.everywhere_violations == 0
        && gl.monotone
        && gl.lp.iter().all(|l| l.feasible && l.all_checks);
    Ok(PipelineReport {
        config: cfg.clone(),
        curve: curve_stage,
        big_pieces: bp_stage,
        sio: sio_stage,
        whitney: whitney_stages,
        goodlambda: gl,
        constants,
        pass,
    })
}
