//! Sampled curves in a normed space.
//!
//! A [`SampledCurve`] stores a strictly increasing parameter grid, positions
//! and derivative samples. Closed curves (first and last positions equal)
//! are supported: the repeated endpoint is exempt from the injectivity test
//! and its atom is merged into the first one when building the length measure.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::space::{DiscreteMeasure, Metric, NormKind, NormedSpace, PointCloud, ShellIndex, Support};

/// Distance below which two samples count as the same point.
pub const INJECTIVITY_TOL: f64 = 1e-12;

/// Above this many nodes the Hölder fit uses a pair subsample.
pub const HOLDER_EXHAUSTIVE_MAX: usize = 4097;

#[derive(Clone, Debug, PartialEq)]
pub struct SampledCurve {
    params: Vec<f64>,
    positions: PointCloud,
    derivs: Vec<Vec<f64>>,
    analytic_derivs: bool,
}

/// On-disk curve format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveFile {
    pub params: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub derivs: Option<Vec<Vec<f64>>>,
    pub norm: NormKind,
}

impl SampledCurve {
    /// Builds a curve; missing derivatives are estimated by [`wstar_derivative`].
    pub fn new(
        params: Vec<f64>,
        positions: Vec<Vec<f64>>,
        derivs: Option<Vec<Vec<f64>>>,
        norm: NormKind,
    ) -> Result<Self> {
        if params.len() < 2 {
            return Err(Error::invalid("a curve needs at least two samples"));
        }
        if params.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        if let Some(i) = params.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(format!("parameters not strictly increasing at index {i}")));
        }
        if positions.len() != params.len() {
            return Err(Error::invalid("positions and params differ in length"));
        }
        let dim = positions[0].len();
        let space = NormedSpace::new(dim, norm)?;
        let cloud = PointCloud::new(space, positions)?;
        let (derivs, analytic) = match derivs {
            Some(d) => {
                if d.len() != params.len() || d.iter().any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite())) {
                    return Err(Error::invalid("derivs must match positions in shape and be finite"));
                }
                (d, true)
            }
            None => (wstar_derivative(&cloud, &params)?, false),
        };
        Ok(SampledCurve {
            params,
            positions: cloud,
            derivs,
            analytic_derivs: analytic,
        })
    }

    pub fn from_file(f: CurveFile) -> Result<Self> {
        SampledCurve::new(f.params, f.positions, f.derivs, f.norm)
    }

    pub fn load(path: &Path) -> Result<Self> {
        SampledCurve::from_file(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_file(&self) -> CurveFile {
        CurveFile {
            params: self.params.clone(),
            positions: self.positions.points().map(<[f64]>::to_vec).collect(),
            derivs: self.analytic_derivs.then(|| self.derivs.clone()),
            norm: self.space().norm,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn positions(&self) -> &PointCloud {
        &self.positions
    }

    pub fn derivs(&self) -> &[Vec<f64>] {
        &self.derivs
    }

    pub fn has_analytic_derivs(&self) -> bool {
        self.analytic_derivs
    }

    pub fn space(&self) -> &NormedSpace {
        self.positions.space()
    }

    /// Number of samples (K + 1).
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        self.positions.point(i)
    }

    pub fn speed(&self, i: usize) -> f64 {
        self.space().norm(&self.derivs[i])
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.params[0], *self.params.last().unwrap())
    }

    pub fn max_spacing(&self) -> f64 {
        self.params.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// First and last samples coincide.
    pub fn is_closed(&self) -> bool {
        self.len() > 2 && self.positions.dist(0, self.len() - 1) <= INJECTIVITY_TOL
    }

    /// Trapezoid weights of the arc-length quadrature, one per node.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let k = self.len() - 1;
        (0..=k)
            .map(|i| {
                let lo = if i == 0 { self.params[0] } else { self.params[i - 1] };
                let hi = if i == k { self.params[k] } else { self.params[i + 1] };
                self.speed(i) * (hi - lo) / 2.0
            })
            .collect()
    }

    /// Rejects curves that revisit a point at parameter distance beyond the
    /// largest grid spacing. The closing pair of a closed curve is exempt.
    pub fn check_injective(&self) -> Result<()> {
        let n = self.len();
        let guard = self.max_spacing();
        let closed = self.is_closed();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| self.position(a)[0].total_cmp(&self.position(b)[0]).then(a.cmp(&b)));
        for (k, &i) in idx.iter().enumerate() {
            let xi = self.position(i)[0];
            for &j in &idx[k + 1..] {
                // every supported norm dominates a single coordinate
                if self.position(j)[0] - xi > INJECTIVITY_TOL {
                    break;
                }
                let (a, b) = (i.min(j), i.max(j));
                if closed && a == 0 && b == n - 1 {
                    continue;
                }
                if (self.params[b] - self.params[a]) > guard {
                    let dist = self.positions.dist(a, b);
                    if dist <= INJECTIVITY_TOL {
                        return Err(Error::NotInjective { i: a, j: b, dist });
                    }
                }
            }
        }
        Ok(())
    }

    /// Translates so that sample `anchor` sits at the origin and rescales so
    /// the arc length is one.
    pub fn normalized(&self, anchor: usize) -> Result<SampledCurve> {
        if anchor >= self.len() {
            return Err(Error::invalid("anchor index out of range"));
        }
        let length = curve_integral(self, |_| 1.0)?;
        if !(length > 0.0) {
            return Err(Error::DegenerateSpeed("curve has zero length".into()));
        }
        let origin = self.position(anchor).to_vec();
        let positions = self
            .positions
            .points()
            .map(|p| p.iter().zip(&origin).map(|(x, o)| (x - o) / length).collect())
            .collect();
        let derivs = self
            .derivs
            .iter()
            .map(|d| d.iter().map(|x| x / length).collect())
            .collect();
        Ok(SampledCurve {
            params: self.params.clone(),
            positions: PointCloud::new(*self.space(), positions)?,
            derivs,
            analytic_derivs: self.analytic_derivs,
        })
    }
}

/// Coordinatewise derivative by second-order finite differences: the
/// three-point centred formula inside, one-sided three-point formulas at the ends.
pub fn wstar_derivative(positions: &PointCloud, params: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = params.len();
    if n < 3 || positions.len() != n {
        return Err(Error::invalid("finite differences need K >= 2 (three samples)"));
    }
    let dim = positions.space().dim;
    let combo = |i: [usize; 3], c: [f64; 3]| -> Vec<f64> {
        (0..dim)
            .map(|d| {
                let base = positions.point(i[1])[d];
                c[0] * (positions.point(i[0])[d] - base) + c[2] * (positions.point(i[2])[d] - base)
            })
            .collect()
    };
    let mut out = Vec::with_capacity(n);
    {
        let (h1, h2) = (params[1] - params[0], params[2] - params[1]);
        out.push(combo(
            [0, 1, 2],
            [
                -(2.0 * h1 + h2) / (h1 * (h1 + h2)),
                (h1 + h2) / (h1 * h2),
                -h1 / (h2 * (h1 + h2)),
            ],
        ));
    }
    for i in 1..n - 1 {
        let (h1, h2) = (params[i] - params[i - 1], params[i + 1] - params[i]);
        if h1 == h2 {
            let v = (0..dim)
                .map(|d| (positions.point(i + 1)[d] - positions.point(i - 1)[d]) / (2.0 * h1))
                .collect();
            out.push(v);
        } else {
            out.push(combo(
                [i - 1, i, i + 1],
                [
                    -h2 / (h1 * (h1 + h2)),
                    (h2 - h1) / (h1 * h2),
                    h1 / (h2 * (h1 + h2)),
                ],
            ));
        }
    }
    {
        let k = n - 1;
        let (h1, h2) = (params[k - 1] - params[k - 2], params[k] - params[k - 1]);
        out.push(combo(
            [k - 2, k - 1, k],
            [
                h2 / (h1 * (h1 + h2)),
                -(h1 + h2) / (h1 * h2),
                (2.0 * h2 + h1) / (h2 * (h1 + h2)),
            ],
        ));
    }
    Ok(out)
}

/// Symmetric difference quotient of the norm at sample `i`; one-sided at the ends.
pub fn metric_derivative(curve: &SampledCurve, i: usize) -> Result<f64> {
    let n = curve.len();
    if i >= n {
        return Err(Error::invalid(format!("index {i} out of range")));
    }
    let lo = i.saturating_sub(1);
    let hi = (i + 1).min(n - 1);
    Ok(curve.positions.dist(lo, hi) / (curve.params[hi] - curve.params[lo]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub c: f64,
    pub alpha: f64,
    /// False when only a pair subsample was searched.
    pub exhaustive: bool,
}

/// Smallest `c` with `|g(t_i) - g(t_j)| <= c |t_i - t_j|^alpha` over sample pairs.
///
/// Up to [`HOLDER_EXHAUSTIVE_MAX`] samples every pair is checked; beyond that
/// the search covers all pairs with index gap at most 256 plus all pairs of
/// a strided subgrid of at most 4096 nodes.
pub fn holder_fit(values: &[Vec<f64>], params: &[f64], alpha: f64, norm: NormKind) -> Result<HolderFit> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if values.len() != params.len() {
        return Err(Error::invalid("values and params differ in length"));
    }
    let n = params.len();
    let diff = |i: usize, j: usize| -> f64 {
        let d: Vec<f64> = values[i].iter().zip(&values[j]).map(|(a, b)| a - b).collect();
        norm.norm(&d) / (params[j] - params[i]).abs().powf(alpha)
    };
    let exhaustive = n <= HOLDER_EXHAUSTIVE_MAX;
    let c = if exhaustive {
        (0..n)
            .into_par_iter()
            .map(|i| (i + 1..n).map(|j| diff(i, j)).fold(0.0, f64::max))
            .reduce(|| 0.0, f64::max)
    } else {
        let local = (0..n)
            .into_par_iter()
            .map(|i| (i + 1..(i + 257).min(n)).map(|j| diff(i, j)).fold(0.0, f64::max))
            .reduce(|| 0.0, f64::max);
        let stride = n.div_ceil(4096);
        let sub: Vec<usize> = (0..n).step_by(stride).collect();
        let global = (0..sub.len())
            .into_par_iter()
            .map(|a| (a + 1..sub.len()).map(|b| diff(sub[a], sub[b])).fold(0.0, f64::max))
            .reduce(|| 0.0, f64::max);
        local.max(global)
    };
    Ok(HolderFit { c, alpha, exhaustive })
}

/// Fitted regularity data of a sampled curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveMetadata {
    pub alpha: f64,
    pub c: f64,
    /// Infimum of the sampled speeds.
    pub m: f64,
    /// Supremum of the sampled speeds and adjacent chord quotients.
    #[serde(rename = "M")]
    pub big_m: f64,
    pub delta: f64,
    pub holder_exhaustive: bool,
}

impl CurveMetadata {
    pub fn fit(curve: &SampledCurve, alpha: f64) -> Result<Self> {
        let holder = holder_fit(&curve.derivs, &curve.params, alpha, curve.space().norm)?;
        let m = (0..curve.len()).map(|i| curve.speed(i)).fold(f64::INFINITY, f64::min);
        let chord_max = curve
            .params
            .windows(2)
            .enumerate()
            .map(|(i, w)| curve.positions.dist(i, i + 1) / (w[1] - w[0]))
            .fold(0.0, f64::max);
        let big_m = (0..curve.len()).map(|i| curve.speed(i)).fold(chord_max, f64::max);
        let mut meta = CurveMetadata {
            alpha,
            c: holder.c,
            m,
            big_m,
            delta: f64::NAN,
            holder_exhaustive: holder.exhaustive,
        };
        meta.delta = bilipschitz_window(curve, &meta)?;
        Ok(meta)
    }

    /// `min{1, m}`.
    pub fn m_clamped(&self) -> f64 {
        self.m.min(1.0)
    }

    /// `max{1, M}`.
    pub fn big_m_clamped(&self) -> f64 {
        self.big_m.max(1.0)
    }
}

/// Largest grid-representable `delta` such that samples with
/// `|t_i - t_j| < delta` have `|g'(t_i) - g'(t_j)| < m/2`. Equals the whole
/// parameter length when no pair violates the criterion.
pub fn bilipschitz_window(curve: &SampledCurve, meta: &CurveMetadata) -> Result<f64> {
    if !(meta.m > 0.0) {
        return Err(Error::DegenerateSpeed(format!("inf speed is {}", meta.m)));
    }
    let n = curve.len();
    let half = meta.m / 2.0;
    let norm = curve.space().norm;
    let (a, b) = curve.domain();
    let closest = (0..n)
        .into_par_iter()
        .filter_map(|i| {
            (i + 1..n).find_map(|j| {
                let d: Vec<f64> = curve.derivs[i]
                    .iter()
                    .zip(&curve.derivs[j])
                    .map(|(x, y)| x - y)
                    .collect();
                (norm.norm(&d) >= half).then(|| curve.params[j] - curve.params[i])
            })
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(closest.min(b - a))
}

/// Counts of sample pairs breaking the two-sided bilipschitz bounds within the window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilipschitzAudit {
    pub pairs_checked: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
}

/// Checks `(m/2)|dt| <= |g(t_i) - g(t_j)| <= M |dt|` for all pairs with `|dt| < delta`.
/// The upper bound allows relative rounding slack of 1e-12.
pub fn bilipschitz_audit(curve: &SampledCurve, meta: &CurveMetadata) -> BilipschitzAudit {
    let n = curve.len();
    let (checked, lo, hi) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = (0usize, 0usize, 0usize);
            for j in i + 1..n {
                let dt = curve.params[j] - curve.params[i];
                if dt >= meta.delta {
                    break;
                }
                let d = curve.positions.dist(i, j);
                acc.0 += 1;
                if d < meta.m / 2.0 * dt {
                    acc.1 += 1;
                }
                if d > meta.big_m * dt * (1.0 + 1e-12) {
                    acc.2 += 1;
                }
            }
            acc
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    BilipschitzAudit {
        pairs_checked: checked,
        lower_violations: lo,
        upper_violations: hi,
    }
}

/// `L_{t_{i0}}(t) = g(t_{i0}) + (t - t_{i0}) g'(t_{i0})`.
pub fn linear_approx(curve: &SampledCurve, i0: usize, t: f64) -> Result<Vec<f64>> {
    if i0 >= curve.len() {
        return Err(Error::invalid(format!("index {i0} out of range")));
    }
    let dt = t - curve.params[i0];
    Ok(curve
        .position(i0)
        .iter()
        .zip(&curve.derivs[i0])
        .map(|(p, d)| p + dt * d)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub ratio: f64,
    pub c: f64,
    pub pass: bool,
}

/// `max |g(t_i) - L_{t_{i0}}(t_i)| / |t_i - t_{i0}|^(1+alpha)` over all ordered pairs.
pub fn flatness_check(curve: &SampledCurve, meta: &CurveMetadata) -> FlatnessReport {
    let n = curve.len();
    let space = *curve.space();
    let ratio = (0..n)
        .into_par_iter()
        .map(|i0| {
            let p0 = curve.position(i0);
            let d0 = &curve.derivs[i0];
            let mut best: f64 = 0.0;
            let mut buf = vec![0.0; space.dim];
            for i in (0..n).filter(|&i| i != i0) {
                let dt = curve.params[i] - curve.params[i0];
                for (k, slot) in buf.iter_mut().enumerate() {
                    *slot = curve.position(i)[k] - (p0[k] + dt * d0[k]);
                }
                best = best.max(space.norm(&buf) / dt.abs().powf(1.0 + meta.alpha));
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    FlatnessReport {
        ratio,
        c: meta.c,
        pass: ratio <= meta.c,
    }
}

/// Trapezoid approximation of `∫ f(g(t)) |g'(t)| dt` over the grid.
pub fn curve_integral(curve: &SampledCurve, f: impl Fn(&[f64]) -> f64) -> Result<f64> {
    curve.check_injective()?;
    Ok(curve
        .quadrature_weights()
        .iter()
        .enumerate()
        .map(|(i, w)| w * f(curve.position(i)))
        .sum())
}

/// Length measure on the samples, weights equal to the trapezoid weights.
/// For closed curves the repeated endpoint is folded into the first atom.
pub fn discretize_h1(curve: &SampledCurve) -> Result<DiscreteMeasure> {
    curve.check_injective()?;
    let mut weights = curve.quadrature_weights();
    let mut points: Vec<Vec<f64>> = curve.positions.points().map(<[f64]>::to_vec).collect();
    if curve.is_closed() {
        let last = weights.pop().unwrap();
        points.pop();
        weights[0] += last;
    }
    let cloud = PointCloud::new(*curve.space(), points)?;
    DiscreteMeasure::new(Support::Cloud(cloud), weights)
}

/// Atom index in [`discretize_h1`]'s output for curve sample `i`.
pub fn atom_of_sample(curve: &SampledCurve, i: usize) -> usize {
    if curve.is_closed() && i == curve.len() - 1 {
        0
    } else {
        i
    }
}

/// Outcome of the big-piece selection inside one ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BigPiece {
    pub center_index: usize,
    pub radius: f64,
    pub a: f64,
    pub b: f64,
    /// Sample indices with parameter in `[a, b]`.
    pub samples: Vec<usize>,
    pub ball_mass: f64,
    pub piece_mass: f64,
    pub theta: f64,
    pub reg: f64,
    pub contained: bool,
    pub mass_bound_holds: bool,
    /// Worst ratio of preimage diameter to `s / inf|g'|` over sampled `(y, s)`.
    pub preimage_ratio: f64,
    /// Pairs `(y, s)` exceeding `4 s / inf|g'|`, the bound the bilipschitz window certifies.
    pub preimage_violations: usize,
    /// Pairs `(y, s)` exceeding the sharper `2 s / inf|g'|`.
    pub preimage_sharp_violations: usize,
}

impl BigPiece {
    pub fn passes(&self) -> bool {
        self.contained && self.mass_bound_holds && self.preimage_violations == 0
    }
}

/// Shared data for repeated big-piece selections on one curve.
pub struct BigPieceSelector<'a> {
    curve: &'a SampledCurve,
    meta: &'a CurveMetadata,
    measure: DiscreteMeasure,
    shells: ShellIndex,
    reg: f64,
    r_min: f64,
}

impl<'a> BigPieceSelector<'a> {
    /// `reg` is `max(1, sup nu(B(x, r)) / r)` over support points and `r >= r_min`.
    pub fn new(curve: &'a SampledCurve, meta: &'a CurveMetadata, r_min: f64) -> Result<Self> {
        let length = curve_integral(curve, |_| 1.0)?;
        if length > 1.0 + 1e-9 {
            return Err(Error::invalid(format!(
                "curve length {length} exceeds 1; normalize first"
            )));
        }
        if !(meta.m > 0.0) {
            return Err(Error::DegenerateSpeed(format!("inf speed is {}", meta.m)));
        }
        let measure = discretize_h1(curve)?;
        let shells = ShellIndex::build(measure.support());
        let reg = crate::space::upper_regularity_exact_with(&measure, &shells, 1, r_min).max(1.0);
        Ok(BigPieceSelector {
            curve,
            meta,
            measure,
            shells,
            reg,
            r_min,
        })
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn measure(&self) -> &DiscreteMeasure {
        &self.measure
    }

    pub fn theta(&self) -> f64 {
        self.meta.m_clamped() * self.meta.delta / (4.0 * self.meta.big_m_clamped() * self.reg)
    }

    pub fn select(&self, center: usize, r: f64) -> Result<BigPiece> {
        let curve = self.curve;
        let n = curve.len();
        if center >= n {
            return Err(Error::invalid("center is not a grid sample"));
        }
        if !(r >= self.r_min) {
            return Err(Error::invalid(format!("radius {r} below r_min {}", self.r_min)));
        }
        let atom = atom_of_sample(curve, center);
        let ball_mass: f64 = {
            let order = self.shells.order(atom);
            let cnt = self.shells.count_within(atom, r);
            order[..cnt].iter().map(|&j| self.measure.weights()[j as usize]).sum()
        };
        let len_raw = self.meta.delta * ball_mass / (2.0 * self.meta.big_m_clamped() * self.reg);
        let a = curve.params[center];
        let (t0, t1) = curve.domain();
        // snap toward zero: the farthest sample within len_raw of a
        let forward = if a + len_raw <= t1 {
            let j = curve.params.partition_point(|&t| t <= a + len_raw) - 1;
            Some((center, j))
        } else {
            None
        };
        let (lo, hi) = match forward {
            Some(p) => p,
            None if a - len_raw >= t0 => {
                let j = curve.params.partition_point(|&t| t < a - len_raw);
                (j, center)
            }
            None => return Err(Error::invalid("interval exceeds the parameter domain on both sides")),
        };
        if lo == hi {
            return Err(Error::ResolutionTooCoarse(format!(
                "|b - a| = {len_raw:e} is below the grid spacing at t = {a}"
            )));
        }
        let samples: Vec<usize> = (lo..=hi).collect();
        let mut atoms: Vec<usize> = samples.iter().map(|&i| atom_of_sample(curve, i)).collect();
        atoms.sort_unstable();
        atoms.dedup();
        let piece_mass = self.measure.mass_of(atoms.iter().copied());
        let cloud = curve.positions();
        let contained = samples.iter().all(|&i| cloud.dist(center, i) < r);
        let theta = self.theta();
        let mass_bound_holds = piece_mass >= theta * ball_mass;

        // preimage diameters: for each y in G, grow s through the distance shells
        let inf_speed = self.meta.m;
        let (ratio, viol, sharp) = samples
            .par_iter()
            .map(|&y| {
                let mut by_dist: Vec<(f64, f64)> = samples
                    .iter()
                    .map(|&i| (cloud.dist(y, i), curve.params[i]))
                    .collect();
                by_dist.sort_by(|p, q| p.0.total_cmp(&q.0));
                let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
                let mut worst: f64 = 0.0;
                let (mut v, mut sv) = (0usize, 0usize);
                let mut k = 0;
                while k < by_dist.len() {
                    let s = by_dist[k].0;
                    while k < by_dist.len() && by_dist[k].0 == s {
                        tmin = tmin.min(by_dist[k].1);
                        tmax = tmax.max(by_dist[k].1);
                        k += 1;
                    }
                    if s > 0.0 {
                        // the ball of radius s+ contains exactly these samples
                        let diam = tmax - tmin;
                        worst = worst.max(diam * inf_speed / s);
                        if diam > 4.0 * s / inf_speed * (1.0 + 1e-12) {
                            v += 1;
                        }
                        if diam > 2.0 * s / inf_speed * (1.0 + 1e-12) {
                            sv += 1;
                        }
                    }
                }
                (worst, v, sv)
            })
            .reduce(|| (0.0, 0, 0), |x, y| (x.0.max(y.0), x.1 + y.1, x.2 + y.2));

        Ok(BigPiece {
            center_index: center,
            radius: r,
            a: curve.params[lo.min(hi)],
            b: curve.params[hi],
            samples,
            ball_mass,
            piece_mass,
            theta,
            reg: self.reg,
            contained,
            mass_bound_holds,
            preimage_ratio: ratio,
            preimage_violations: viol,
            preimage_sharp_violations: sharp,
        })
    }
}

/// One-shot big-piece selection with `reg` measured over radii `>= r`.
pub fn choose_big_piece(curve: &SampledCurve, meta: &CurveMetadata, center: usize, r: f64) -> Result<BigPiece> {
    BigPieceSelector::new(curve, meta, r)?.select(center, r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayReport {
    pub ray_mass: f64,
    pub ray_atoms: usize,
    pub spacing: f64,
    pub min_separation: f64,
}

/// Appends the segment `{ s v0 : 3 <= s <= s_max }` to a normalized curve
/// measure (unit mass, origin on the curve), sampled at the curve's median
/// nearest-neighbour spacing with trapezoid weights.
pub fn append_ray(curve_measure: &DiscreteMeasure, v0: &[f64], s_max: f64) -> Result<(DiscreteMeasure, RayReport)> {
    let cloud = curve_measure
        .support()
        .cloud()
        .ok_or_else(|| Error::invalid("ray appending needs a point cloud in a normed space"))?;
    let space = *cloud.space();
    if v0.len() != space.dim {
        return Err(Error::invalid("direction has the wrong dimension"));
    }
    if (space.norm(v0) - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("direction has norm {}, expected 1", space.norm(v0))));
    }
    if !(s_max >= 3.0) || !s_max.is_finite() {
        return Err(Error::invalid("s_max must be a finite number >= 3"));
    }
    let mass = curve_measure.total_mass();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("curve measure has mass {mass}; normalize first")));
    }
    if !cloud.points().any(|p| space.norm(p) <= 1e-12) {
        return Err(Error::invalid("the origin is not a support point; normalize first"));
    }
    let n = cloud.len();
    let mut nn: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| cloud.dist(i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let spacing = nn[n / 2];
    let length = s_max - 3.0;
    if length == 0.0 {
        return Ok((
            curve_measure.clone(),
            RayReport {
                ray_mass: 0.0,
                ray_atoms: 0,
                spacing,
                min_separation: f64::INFINITY,
            },
        ));
    }
    let segs = (length / spacing).ceil().max(1.0) as usize;
    let h = length / segs as f64;
    let ray: Vec<Vec<f64>> = (0..=segs)
        .map(|k| {
            let s = 3.0 + h * k as f64;
            v0.iter().map(|v| s * v).collect()
        })
        .collect();
    let ray_cloud = PointCloud::new(space, ray)?;
    let min_separation = (0..ray_cloud.len())
        .into_par_iter()
        .map(|i| cloud.points().map(|p| space.dist(p, ray_cloud.point(i))).fold(f64::INFINITY, f64::min))
        .reduce(|| f64::INFINITY, f64::min);
    let mut weights = curve_measure.weights().to_vec();
    weights.extend((0..=segs).map(|k| if k == 0 || k == segs { h / 2.0 } else { h }));
    let joined = cloud.concat(&ray_cloud)?;
    let measure = DiscreteMeasure::new(Support::Cloud(joined), weights)?;
    Ok((
        measure,
        RayReport {
            ray_mass: length,
            ray_atoms: segs + 1,
            spacing: h,
            min_separation,
        },
    ))
}

/// Built-in test curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveSpec {
    /// `t -> t v` on `[0, 1]`.
    Line { direction: Vec<f64> },
    /// `t -> R (cos t, sin t)` on `[0, 2 pi]`.
    Circle { radius: f64 },
    /// `t -> (cos t, sin t, pitch t / 2pi)` on `[0, 2 pi turns]`.
    Helix { pitch: f64, turns: f64 },
    /// `t -> (t, eps sum_j a_j sin(2 pi j t + phi_j) / j^2)` on `[0, 1]`,
    /// coefficients drawn from the seed.
    PerturbedGraph { eps: f64, modes: usize, seed: u64 },
    /// `t -> (sin 2t, sin t)` on `[0, 2 pi]`; crosses itself at the origin.
    FigureEight,
}

impl CurveSpec {
    /// Samples the curve on `k + 1` uniform nodes with analytic derivatives.
    pub fn sample(&self, k: usize, norm: NormKind) -> Result<SampledCurve> {
        if k < 2 {
            return Err(Error::invalid("need K >= 2"));
        }
        let (t0, t1) = match self {
            CurveSpec::Line { .. } | CurveSpec::PerturbedGraph { .. } => (0.0, 1.0),
            CurveSpec::Circle { .. } | CurveSpec::FigureEight => (0.0, 2.0 * std::f64::consts::PI),
            CurveSpec::Helix { turns, .. } => (0.0, 2.0 * std::f64::consts::PI * turns),
        };
        let params: Vec<f64> = (0..=k).map(|i| t0 + (t1 - t0) * i as f64 / k as f64).collect();
        let tau = 2.0 * std::f64::consts::PI;
        let (pos, der): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match self {
            CurveSpec::Line { direction } => {
                if direction.is_empty() {
                    return Err(Error::invalid("line direction is empty"));
                }
                params
                    .iter()
                    .map(|&t| (direction.iter().map(|v| t * v).collect(), direction.clone()))
                    .unzip()
            }
            CurveSpec::Circle { radius } => params
                .iter()
                .map(|&t| {
                    (
                        vec![radius * t.cos(), radius * t.sin()],
                        vec![-radius * t.sin(), radius * t.cos()],
                    )
                })
                .unzip(),
            CurveSpec::Helix { pitch, .. } => params
                .iter()
                .map(|&t| {
                    (
                        vec![t.cos(), t.sin(), pitch * t / tau],
                        vec![-t.sin(), t.cos(), pitch / tau],
                    )
                })
                .unzip(),
            CurveSpec::PerturbedGraph { eps, modes, seed } => {
                let mut r = rng::stream(*seed, "perturbed-graph");
                let coef: Vec<(f64, f64)> = (0..*modes)
                    .map(|_| (r.random_range(-1.0..1.0), r.random_range(0.0..tau)))
                    .collect();
                params
                    .iter()
                    .map(|&t| {
                        let (mut w, mut dw) = (0.0, 0.0);
                        for (j, (a, phi)) in coef.iter().enumerate() {
                            let j = (j + 1) as f64;
                            w += a * (tau * j * t + phi).sin() / (j * j);
                            dw += a * tau * (tau * j * t + phi).cos() / j;
                        }
                        (vec![t, eps * w], vec![1.0, eps * dw])
                    })
                    .unzip()
            }
            CurveSpec::FigureEight => params
                .iter()
                .map(|&t| (vec![(2.0 * t).sin(), t.sin()], vec![2.0 * (2.0 * t).cos(), t.cos()]))
                .unzip(),
        };
        SampledCurve::new(params, pos, Some(der), norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circle(k: usize) -> SampledCurve {
        CurveSpec::Circle { radius: 1.0 }.sample(k, NormKind::euclidean()).unwrap()
    }

    #[test]
    fn derivative_of_line_is_exact() {
        let v = vec![2.0, -1.0];
        let params = vec![0.0, 1.0, 2.0];
        let pos: Vec<Vec<f64>> = params.iter().map(|t| v.iter().map(|x| t * x).collect()).collect();
        let c = SampledCurve::new(params, pos, None, NormKind::euclidean()).unwrap();
        for d in c.derivs() {
            assert_eq!(d, &v);
        }
        assert_eq!(metric_derivative(&c, 1).unwrap(), 5f64.sqrt());
    }

    #[test]
    fn derivative_needs_three_samples() {
        let cloud = PointCloud::new(NormedSpace::euclidean(1), vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(wstar_derivative(&cloud, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn constant_curve_has_zero_derivative() {
        let pos = vec![vec![1.0, 1.0]; 4];
        let c = SampledCurve::new(vec![0.0, 0.5, 1.0, 2.0], pos, None, NormKind::euclidean()).unwrap();
        assert!(c.derivs().iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn circle_fd_derivative() {
        let k = (2.0 * PI / 1e-3).round() as usize;
        let exact = circle(k);
        let fd = SampledCurve::new(
            exact.params().to_vec(),
            exact.positions().points().map(<[f64]>::to_vec).collect(),
            None,
            NormKind::euclidean(),
        )
        .unwrap();
        let err = fd
            .derivs()
            .iter()
            .zip(exact.derivs())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn reparametrized_segment_speed() {
        let params: Vec<f64> = (0..=1000).map(|i| 1.0 + i as f64 / 1000.0).collect();
        let pos = params.iter().map(|t| vec![t * t, 0.0]).collect();
        let c = SampledCurve::new(params.clone(), pos, None, NormKind::euclidean()).unwrap();
        for i in 1..c.len() - 1 {
            assert!((metric_derivative(&c, i).unwrap() - 2.0 * params[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn holder_of_line_and_circle() {
        let line = CurveSpec::Line { direction: vec![1.0, 0.0] }
            .sample(64, NormKind::euclidean())
            .unwrap();
        assert_eq!(holder_fit(line.derivs(), line.params(), 1.0, NormKind::euclidean()).unwrap().c, 0.0);
        let c = circle(2048);
        let fit = holder_fit(c.derivs(), c.params(), 1.0, NormKind::euclidean()).unwrap();
        assert!((0.99..=1.01).contains(&fit.c), "{}", fit.c);
        assert!(fit.exhaustive);
        assert!(holder_fit(c.derivs(), c.params(), 0.0, NormKind::euclidean()).is_err());
    }

    #[test]
    fn holder_of_square_root_profile() {
        let params: Vec<f64> = (0..=400).map(|i| -1.0 + i as f64 / 200.0).collect();
        let vals: Vec<Vec<f64>> = params.iter().map(|t: &f64| vec![t.abs().sqrt(), 0.0]).collect();
        let fit = holder_fit(&vals, &params, 0.5, NormKind::euclidean()).unwrap();
        // brute-force oracle over the same pairs
        let mut oracle: f64 = 0.0;
        for i in 0..params.len() {
            for j in i + 1..params.len() {
                oracle = oracle.max((vals[i][0] - vals[j][0]).abs() / (params[j] - params[i]).sqrt());
            }
        }
        assert_eq!(fit.c, oracle);
        assert!((1.0..=2f64.sqrt()).contains(&fit.c));
    }

    #[test]
    fn window_of_line_and_circle() {
        let line = CurveSpec::Line { direction: vec![0.0, 3.0] }
            .sample(32, NormKind::euclidean())
            .unwrap();
        let meta = CurveMetadata::fit(&line, 1.0).unwrap();
        assert_eq!(meta.delta, 1.0);
        let c = circle(4096);
        let meta = CurveMetadata::fit(&c, 1.0).unwrap();
        let oracle = 2.0 * (0.25f64).asin();
        assert!(meta.delta >= 0.5 && (meta.delta - oracle).abs() < 2.0 * PI / 4096.0 + 1e-12);
        let audit = bilipschitz_audit(&c, &meta);
        assert_eq!((audit.lower_violations, audit.upper_violations), (0, 0));
        assert!(meta.delta >= meta.m / (2.0 * meta.c) - 2.0 * PI / 4096.0);
    }

    #[test]
    fn degenerate_speed_rejected() {
        let pos = vec![vec![0.0, 0.0]; 3];
        let c = SampledCurve::new(vec![0.0, 1.0, 2.0], pos, None, NormKind::euclidean()).unwrap();
        assert!(matches!(CurveMetadata::fit(&c, 1.0), Err(Error::DegenerateSpeed(_))));
    }

    #[test]
    fn linear_approximation() {
        let c = circle(512);
        assert_eq!(linear_approx(&c, 7, c.params()[7]).unwrap(), c.position(7));
        let l = linear_approx(&c, 0, 0.1).unwrap();
        let truth = [0.1f64.cos(), 0.1f64.sin()];
        let err = ((l[0] - truth[0]).powi(2) + (l[1] - truth[1]).powi(2)).sqrt();
        assert!(err <= 0.01 / 2.0 + 1e-3);
    }

    #[test]
    fn flatness_on_circle_and_line() {
        let c = circle(512);
        let meta = CurveMetadata::fit(&c, 1.0).unwrap();
        assert!(flatness_check(&c, &meta).pass);
        let line = CurveSpec::Line { direction: vec![1.0, 1.0] }
            .sample(16, NormKind::euclidean())
            .unwrap();
        let meta = CurveMetadata::fit(&line, 1.0).unwrap();
        let rep = flatness_check(&line, &meta);
        assert!(rep.ratio < 1e-12 && rep.pass == (rep.ratio <= rep.c));
    }

    #[test]
    fn arc_length_and_symmetry() {
        let c = circle(10_000);
        assert!((curve_integral(&c, |_| 1.0).unwrap() - 2.0 * PI).abs() < 1e-8);
        assert!(curve_integral(&c, |p| p[0]).unwrap().abs() < 1e-8);
        let seg = CurveSpec::Line { direction: vec![0.6, 0.8] }
            .sample(10, NormKind::euclidean())
            .unwrap();
        let mu = discretize_h1(&seg).unwrap();
        assert_eq!(mu.total_mass(), curve_integral(&seg, |_| 1.0).unwrap());
        assert!((mu.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn closed_circle_measure_merges_endpoint() {
        let c = circle(1024);
        assert!(c.is_closed());
        let mu = discretize_h1(&c).unwrap();
        assert_eq!(mu.len(), 1024);
        assert!((mu.total_mass() - 2.0 * PI).abs() < 1e-4);
    }

    #[test]
    fn two_node_interval_has_half_weights() {
        let c = SampledCurve::new(
            vec![0.0, 1.0, 2.0],
            vec![vec![0.0], vec![1.0], vec![2.0]],
            None,
            NormKind::euclidean(),
        )
        .unwrap();
        assert_eq!(c.quadrature_weights(), vec![0.5, 1.0, 0.5]);
    }

    #[test]
    fn figure_eight_is_rejected() {
        let c = CurveSpec::FigureEight.sample(64, NormKind::euclidean()).unwrap();
        assert!(matches!(curve_integral(&c, |_| 1.0), Err(Error::NotInjective { .. })));
    }

    #[test]
    fn big_piece_on_segment_and_circle() {
        let seg = CurveSpec::Line { direction: vec![1.0, 0.0] }
            .sample(200, NormKind::euclidean())
            .unwrap();
        let meta = CurveMetadata::fit(&seg, 1.0).unwrap();
        let piece = choose_big_piece(&seg, &meta, 0, 5.0).unwrap();
        assert!(piece.passes(), "{piece:?}");
        let c = circle(1024).normalized(0).unwrap();
        let meta = CurveMetadata::fit(&c, 1.0).unwrap();
        let sel = BigPieceSelector::new(&c, &meta, 0.05).unwrap();
        for center in [0, 100, 512, 1000] {
            let piece = sel.select(center, 0.3).unwrap();
            assert!(piece.passes(), "{piece:?}");
            assert!(piece.piece_mass >= piece.theta * piece.ball_mass);
        }
        assert!(sel.select(5, 0.01).is_err());
    }

    #[test]
    fn unnormalized_curve_rejected_for_big_pieces() {
        let c = circle(128);
        let meta = CurveMetadata::fit(&c, 1.0).unwrap();
        assert!(choose_big_piece(&c, &meta, 0, 0.3).is_err());
    }

    #[test]
    fn ray_appending() {
        let c = circle(256).normalized(0).unwrap();
        let mu = discretize_h1(&c).unwrap();
        let (nu, rep) = append_ray(&mu, &[1.0, 0.0], 10.0).unwrap();
        assert!((rep.ray_mass - 7.0).abs() < 1e-15);
        assert!((nu.total_mass() - 8.0).abs() < 1e-9);
        assert!(rep.min_separation >= 2.0);
        let (same, rep) = append_ray(&mu, &[1.0, 0.0], 3.0).unwrap();
        assert_eq!(same, mu);
        assert_eq!(rep.ray_atoms, 0);
        assert!(append_ray(&mu, &[2.0, 0.0], 10.0).is_err());
    }
}
