//! Finite metric spaces, finite-dimensional normed spaces, discrete measures,
//! and the constants (doubling, regularity) measured on them.
//!
//! Balls are open throughout: `B(x, r) = { y : d(x, y) < r }`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed in the triangle inequality when validating a distance table.
pub const TRIANGLE_SLACK: f64 = 1e-12;

/// Radii per octave of the logarithmic grids standing in for suprema over `r`.
pub const RADII_PER_OCTAVE: usize = 16;

/// Largest ball for which covering numbers are computed exactly.
pub const EXACT_COVER_MAX_POINTS: usize = 20;

/// Anything that can report pairwise distances between indexed points.
pub trait Metric: Sync {
    fn len(&self) -> usize;
    fn dist(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn row(&self, i: usize) -> Vec<f64> {
        (0..self.len()).map(|j| self.dist(i, j)).collect()
    }
}

/// Norm on `R^N`: the sup-norm or an `l^p` norm with `1 < p < inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NormKind {
    Sup,
    P { p: f64 },
}

impl NormKind {
    pub fn euclidean() -> Self {
        NormKind::P { p: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NormKind::Sup => Ok(()),
            NormKind::P { p } if p.is_finite() && p > 1.0 => Ok(()),
            NormKind::P { p } => Err(Error::invalid(format!("p-norm needs 1 < p < inf, got {p}"))),
        }
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        match *self {
            NormKind::Sup => x.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            NormKind::P { p } if p == 2.0 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormKind::P { p } => x.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }

    /// Norm of the predual/conjugate space: `l^1` for the sup-norm, `l^{p'}` otherwise.
    pub fn dual_norm(&self, y: &[f64]) -> f64 {
        match *self {
            NormKind::Sup => y.iter().map(|v| v.abs()).sum(),
            NormKind::P { p } => NormKind::P { p: p / (p - 1.0) }.norm(y),
        }
    }
}

/// `R^N` with a chosen norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormedSpace {
    pub dim: usize,
    pub norm: NormKind,
}

impl NormedSpace {
    pub fn new(dim: usize, norm: NormKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        norm.validate()?;
        Ok(NormedSpace { dim, norm })
    }

    pub fn euclidean(dim: usize) -> Self {
        NormedSpace {
            dim,
            norm: NormKind::euclidean(),
        }
    }

    pub fn sup(dim: usize) -> Self {
        NormedSpace {
            dim,
            norm: NormKind::Sup,
        }
    }

    #[inline]
    pub fn norm(&self, x: &[f64]) -> f64 {
        self.norm.norm(x)
    }

    #[inline]
    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.norm {
            NormKind::Sup => a
                .iter()
                .zip(b)
                .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())),
            NormKind::P { p } if p == 2.0 => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            NormKind::P { p } => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs().powf(p))
                .sum::<f64>()
                .powf(1.0 / p),
        }
    }
}

/// Opaque identifier of a point in a [`FiniteMetricSpace`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointId {
    Int(i64),
    Str(String),
}

/// Dense symmetric distance table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_metric<M: Metric + ?Sized>(m: &M) -> Self {
        let n = m.len();
        let mut data = vec![0.0; n * n];
        data.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = m.dist(i, j);
            }
        });
        DistanceMatrix { n, data }
    }

    #[inline]
    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

impl Metric for DistanceMatrix {
    fn len(&self) -> usize {
        self.n
    }

    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.row_slice(i).to_vec()
    }
}

/// Finite metric space given by an explicit, validated distance table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MetricSpaceFile", into = "MetricSpaceFile")]
pub struct FiniteMetricSpace {
    ids: Vec<PointId>,
    table: DistanceMatrix,
}

#[derive(Serialize, Deserialize)]
struct MetricSpaceFile {
    points: Vec<PointId>,
    dist: Vec<Vec<f64>>,
}

impl TryFrom<MetricSpaceFile> for FiniteMetricSpace {
    type Error = Error;

    fn try_from(f: MetricSpaceFile) -> Result<Self> {
        FiniteMetricSpace::new(f.points, f.dist)
    }
}

impl From<FiniteMetricSpace> for MetricSpaceFile {
    fn from(m: FiniteMetricSpace) -> Self {
        let n = m.ids.len();
        MetricSpaceFile {
            dist: (0..n).map(|i| m.table.row(i)).collect(),
            points: m.ids,
        }
    }
}

impl FiniteMetricSpace {
    /// Validates zero diagonal, symmetry, nonnegativity and the triangle
    /// inequality (with [`TRIANGLE_SLACK`]).
    pub fn new(ids: Vec<PointId>, dist: Vec<Vec<f64>>) -> Result<Self> {
        let n = ids.len();
        if dist.len() != n || dist.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidMetric(format!(
                "distance table must be {n}x{n}"
            )));
        }
        for i in 0..n {
            if dist[i][i] != 0.0 {
                return Err(Error::InvalidMetric(format!("dist({i},{i}) = {} != 0", dist[i][i])));
            }
            for j in 0..n {
                let d = dist[i][j];
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::InvalidMetric(format!("dist({i},{j}) = {d}")));
                }
                if d != dist[j][i] {
                    return Err(Error::InvalidMetric(format!("dist({i},{j}) != dist({j},{i})")));
                }
            }
        }
        let table = DistanceMatrix {
            n,
            data: dist.into_iter().flatten().collect(),
        };
        let violation = (0..n).into_par_iter().find_map_any(|i| {
            for j in 0..n {
                let dij = table.dist(i, j);
                for k in 0..n {
                    if table.dist(i, k) > dij + table.dist(j, k) + TRIANGLE_SLACK {
                        return Some((i, j, k));
                    }
                }
            }
            None
        });
        if let Some((i, j, k)) = violation {
            return Err(Error::InvalidMetric(format!(
                "triangle inequality fails for ({i},{j},{k})"
            )));
        }
        Ok(FiniteMetricSpace { ids, table })
    }

    /// Metric induced by a norm on a point cloud; a metric by construction,
    /// so the cubic triangle check is skipped.
    pub fn from_cloud(cloud: &PointCloud) -> Self {
        FiniteMetricSpace {
            ids: (0..cloud.len() as i64).map(PointId::Int).collect(),
            table: DistanceMatrix::from_metric(cloud),
        }
    }

    pub fn ids(&self) -> &[PointId] {
        &self.ids
    }

    pub fn table(&self) -> &DistanceMatrix {
        &self.table
    }

    pub fn diameter(&self) -> f64 {
        self.table.data.iter().cloned().fold(0.0, f64::max)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

impl Metric for FiniteMetricSpace {
    fn len(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.table.dist(i, j)
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.table.row(i)
    }
}

/// Points of `R^N` under a chosen norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CloudFile", into = "CloudFile")]
pub struct PointCloud {
    space: NormedSpace,
    coords: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CloudFile {
    norm: NormKind,
    positions: Vec<Vec<f64>>,
}

impl TryFrom<CloudFile> for PointCloud {
    type Error = Error;

    fn try_from(f: CloudFile) -> Result<Self> {
        let dim = f.positions.first().map_or(1, Vec::len);
        PointCloud::new(NormedSpace::new(dim, f.norm)?, f.positions)
    }
}

impl From<PointCloud> for CloudFile {
    fn from(c: PointCloud) -> Self {
        CloudFile {
            norm: c.space.norm,
            positions: c.points().map(<[f64]>::to_vec).collect(),
        }
    }
}

impl PointCloud {
    pub fn new(space: NormedSpace, points: Vec<Vec<f64>>) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * space.dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != space.dim {
                return Err(Error::invalid(format!(
                    "point {i} has dimension {}, expected {}",
                    p.len(),
                    space.dim
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("point {i} is not finite")));
            }
            coords.extend_from_slice(p);
        }
        Ok(PointCloud { space, coords })
    }

    pub fn space(&self) -> &NormedSpace {
        &self.space
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.space.dim..(i + 1) * self.space.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.space.dim)
    }

    /// Concatenates two clouds living in the same normed space.
    pub fn concat(&self, other: &PointCloud) -> Result<PointCloud> {
        if self.space != other.space {
            return Err(Error::invalid("cannot concatenate clouds from different spaces"));
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Ok(PointCloud {
            space: self.space,
            coords,
        })
    }
}

impl Metric for PointCloud {
    fn len(&self) -> usize {
        self.coords.len() / self.space.dim
    }

    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.space.dist(self.point(i), self.point(j))
    }
}

/// The universe a discrete measure lives on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Support {
    Metric(FiniteMetricSpace),
    Cloud(PointCloud),
}

impl Support {
    pub fn cloud(&self) -> Option<&PointCloud> {
        match self {
            Support::Cloud(c) => Some(c),
            Support::Metric(_) => None,
        }
    }

    pub fn distance_matrix(&self) -> DistanceMatrix {
        match self {
            Support::Metric(m) => m.table.clone(),
            Support::Cloud(c) => DistanceMatrix::from_metric(c),
        }
    }
}

impl Metric for Support {
    fn len(&self) -> usize {
        match self {
            Support::Metric(m) => m.len(),
            Support::Cloud(c) => c.len(),
        }
    }

    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        match self {
            Support::Metric(m) => m.dist(i, j),
            Support::Cloud(c) => c.dist(i, j),
        }
    }
}

/// Weighted point masses on a [`Support`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    support: Support,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: Support, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != support.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} points",
                weights.len(),
                support.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!("weight {i} = {} is not a finite nonnegative mass", weights[i])));
        }
        Ok(DiscreteMeasure { support, weights })
    }

    pub fn counting(support: Support) -> Self {
        let n = support.len();
        DiscreteMeasure {
            support,
            weights: vec![1.0; n],
        }
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Indices carrying positive mass.
    pub fn support_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    pub fn mass_of(&self, indices: impl IntoIterator<Item = usize>) -> f64 {
        indices.into_iter().map(|i| self.weights[i]).fold(0.0, |a, w| a + w)
    }

    /// Mass of the open ball `B(x_i, r)`.
    pub fn ball_mass(&self, i: usize, r: f64) -> f64 {
        (0..self.len())
            .filter(|&j| self.support.dist(i, j) < r)
            .map(|j| self.weights[j])
            .sum()
    }

    /// Same support, weights zeroed where `keep` is false.
    pub fn restrict(&self, keep: impl Fn(usize) -> bool) -> Self {
        DiscreteMeasure {
            support: self.support.clone(),
            weights: self
                .weights
                .iter()
                .enumerate()
                .map(|(i, &w)| if keep(i) { w } else { 0.0 })
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        DiscreteMeasure {
            support: self.support.clone(),
            weights: self.weights.iter().map(|w| w * s).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: MeasureFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let support = match file.space {
            SpaceRef::Inline(s) => s,
            SpaceRef::Path(p) => {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                serde_json::from_str(&std::fs::read_to_string(base.join(p))?)?
            }
        };
        DiscreteMeasure::new(support, file.weights)
    }

    pub fn to_file(&self) -> MeasureFile {
        MeasureFile {
            space: SpaceRef::Inline(self.support.clone()),
            weights: self.weights.clone(),
        }
    }
}

/// On-disk form of a measure: `{"space": <inline space | path>, "weights": [...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureFile {
    pub space: SpaceRef,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceRef {
    Path(String),
    Inline(Support),
}

/// Per-point distance orderings: `order[i]` lists all points sorted by
/// distance from `i` (ties by index), `sorted[i]` holds those distances.
///
/// Every shell-exact supremum in the crate walks these rows.
#[derive(Clone, Debug)]
pub struct ShellIndex {
    n: usize,
    order: Vec<u32>,
    sorted: Vec<f64>,
}

impl ShellIndex {
    pub fn build<M: Metric + ?Sized>(m: &M) -> Self {
        let n = m.len();
        let mut order = vec![0u32; n * n];
        let mut sorted = vec![0.0; n * n];
        order
            .par_chunks_mut(n.max(1))
            .zip(sorted.par_chunks_mut(n.max(1)))
            .enumerate()
            .for_each(|(i, (ord, dst))| {
                let row = m.row(i);
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| {
                    row[a as usize]
                        .total_cmp(&row[b as usize])
                        .then(a.cmp(&b))
                });
                for (k, &j) in idx.iter().enumerate() {
                    ord[k] = j;
                    dst[k] = row[j as usize];
                }
            });
        ShellIndex { n, order, sorted }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn order(&self, i: usize) -> &[u32] {
        &self.order[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn distances(&self, i: usize) -> &[f64] {
        &self.sorted[i * self.n..(i + 1) * self.n]
    }

    /// Number of points with `d(x_i, y) < r`.
    #[inline]
    pub fn count_within(&self, i: usize, r: f64) -> usize {
        self.distances(i).partition_point(|&d| d < r)
    }

    /// Number of points with `d(x_i, y) <= r`.
    #[inline]
    pub fn count_within_closed(&self, i: usize, r: f64) -> usize {
        self.distances(i).partition_point(|&d| d <= r)
    }
}

/// Kuratowski embedding `x_i -> (d(x_i, x_j))_j` into `(R^n, sup-norm)`.
pub fn kuratowski_embed(m: &FiniteMetricSpace) -> PointCloud {
    let n = m.len();
    PointCloud {
        space: NormedSpace::sup(n.max(1)),
        coords: if n == 0 { Vec::new() } else { m.table.data.clone() },
    }
}

/// Geometric grid `r_min * 2^(j / per_octave)` up to `r_max` inclusive.
pub fn log_radius_grid(r_min: f64, r_max: f64, per_octave: usize) -> Result<Vec<f64>> {
    if !(r_min > 0.0 && r_max >= r_min && r_max.is_finite()) || per_octave == 0 {
        return Err(Error::invalid(format!("bad scale range ({r_min}, {r_max})")));
    }
    let mut grid = Vec::new();
    let mut j = 0;
    loop {
        let r = r_min * 2f64.powf(j as f64 / per_octave as f64);
        if r > r_max * (1.0 + 1e-12) {
            break;
        }
        grid.push(r);
        j += 1;
    }
    if *grid.last().unwrap() < r_max * (1.0 - 1e-12) {
        grid.push(r_max);
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    /// Max over (center, r) of the covering number of `B(center, r)` by
    /// balls of radius `r/2` centred at points of the space.
    pub value: usize,
    /// False when some maximizing ball was too large for exhaustive search,
    /// so `value` is a greedy upper bound.
    pub exact: bool,
    pub argmax_center: usize,
    pub argmax_radius: f64,
    pub radius_grid: Vec<f64>,
}

/// Doubling constant measured over all centers and the given radii.
pub fn doubling_constant<M: Metric + ?Sized>(m: &M, radius_grid: &[f64]) -> Result<DoublingReport> {
    let n = m.len();
    if n == 0 {
        return Err(Error::EmptySpace);
    }
    if radius_grid.is_empty() || radius_grid.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::invalid("radius grid must be nonempty and positive"));
    }
    let table = DistanceMatrix::from_metric(m);
    let best = (0..n)
        .into_par_iter()
        .flat_map_iter(|c| radius_grid.iter().map(move |&r| (c, r)))
        .map(|(c, r)| {
            let (count, exact) = ball_cover_number(&table, c, r);
            (count, exact, c, r)
        })
        .reduce(
            || (0, true, usize::MAX, f64::NAN),
            |a, b| {
                // deterministic: larger count, then exactness flag merged, then lowest (center, r)
                let pick = if b.0 > a.0 || (b.0 == a.0 && (b.2, b.3.to_bits()) < (a.2, a.3.to_bits())) {
                    b
                } else {
                    a
                };
                (pick.0, a.1 && b.1, pick.2, pick.3)
            },
        );
    Ok(DoublingReport {
        value: best.0,
        exact: best.1,
        argmax_center: best.2,
        argmax_radius: best.3,
        radius_grid: radius_grid.to_vec(),
    })
}

/// Covering number of `B(x_c, r)` by radius-`r/2` balls centred in the space.
/// Returns `(count, exact)`.
pub fn ball_cover_number(table: &DistanceMatrix, c: usize, r: f64) -> (usize, bool) {
    let n = table.len();
    let ball: Vec<usize> = (0..n).filter(|&y| table.dist(c, y) < r).collect();
    let half = r / 2.0;
    // any useful cover center lies within 1.5 r of c
    let candidates: Vec<Vec<usize>> = (0..n)
        .filter(|&p| table.dist(c, p) < 1.5 * r)
        .map(|p| {
            (0..ball.len())
                .filter(|&k| table.dist(p, ball[k]) < half)
                .collect::<Vec<_>>()
        })
        .filter(|s: &Vec<usize>| !s.is_empty())
        .collect();
    if ball.len() <= EXACT_COVER_MAX_POINTS {
        let masks: Vec<u32> = candidates
            .iter()
            .map(|s| s.iter().fold(0u32, |m, &k| m | (1 << k)))
            .collect();
        (exact_set_cover(ball.len(), &masks), true)
    } else {
        (greedy_set_cover(ball.len(), &candidates), false)
    }
}

fn greedy_set_cover(universe: usize, sets: &[Vec<usize>]) -> usize {
    let mut covered = vec![false; universe];
    let mut remaining = universe;
    let mut count = 0;
    while remaining > 0 {
        let (best, gain) = sets
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.iter().filter(|&&k| !covered[k]).count()))
            .fold((usize::MAX, 0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if gain == 0 {
            // unreachable for balls: every point covers itself
            break;
        }
        for &k in &sets[best] {
            if !covered[k] {
                covered[k] = true;
                remaining -= 1;
            }
        }
        count += 1;
    }
    count
}

fn exact_set_cover(universe: usize, masks: &[u32]) -> usize {
    if universe == 0 {
        return 0;
    }
    let full: u32 = if universe == 32 { u32::MAX } else { (1u32 << universe) - 1 };
    // drop duplicates and dominated sets
    let mut sets: Vec<u32> = masks.to_vec();
    sets.sort_unstable_by(|a, b| b.count_ones().cmp(&a.count_ones()).then(a.cmp(b)));
    sets.dedup();
    let mut kept: Vec<u32> = Vec::new();
    for &s in &sets {
        if !kept.iter().any(|&k| k & s == s) {
            kept.push(s);
        }
    }
    let greedy = {
        let mut covered = 0u32;
        let mut c = 0;
        while covered != full {
            let best = kept
                .iter()
                .max_by_key(|&&s| (s & !covered).count_ones())
                .copied()
                .unwrap_or(0);
            if best & !covered == 0 {
                break;
            }
            covered |= best;
            c += 1;
        }
        c
    };
    let mut best = greedy;
    fn search(covered: u32, full: u32, depth: usize, best: &mut usize, sets: &[u32]) {
        if covered == full {
            *best = (*best).min(depth);
            return;
        }
        if depth + 1 >= *best {
            return;
        }
        let target = (!covered & full).trailing_zeros();
        for &s in sets.iter().filter(|&&s| s & (1 << target) != 0) {
            search(covered | s, full, depth + 1, best, sets);
        }
    }
    search(0, full, 0, &mut best, &kept);
    best
}

/// Result of a grid-based supremum over centers and radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperRegularity {
    pub value: f64,
    pub n: u32,
    pub argmax_center: usize,
    pub argmax_radius: f64,
    pub radius_grid: Vec<f64>,
}

fn ball_masses(mu: &DiscreteMeasure, shells: &ShellIndex, i: usize, grid: &[f64]) -> Vec<f64> {
    let order = shells.order(i);
    let mut prefix = Vec::with_capacity(order.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &j in order {
        acc += mu.weights[j as usize];
        prefix.push(acc);
    }
    grid.iter().map(|&r| prefix[shells.count_within(i, r)]).collect()
}

/// `sup nu(B(x, r)) / r^n` over support points and a logarithmic radius grid
/// with [`RADII_PER_OCTAVE`] radii per octave on `[r_min, r_max]`.
pub fn upper_regularity_constant(
    mu: &DiscreteMeasure,
    n: u32,
    scale_range: (f64, f64),
) -> Result<UpperRegularity> {
    let centers = mu.support_indices();
    if centers.is_empty() {
        return Err(Error::invalid("measure has empty support"));
    }
    let grid = log_radius_grid(scale_range.0, scale_range.1, RADII_PER_OCTAVE)?;
    let shells = ShellIndex::build(mu.support());
    let (value, c, r) = centers
        .par_iter()
        .map(|&i| {
            let masses = ball_masses(mu, &shells, i, &grid);
            masses
                .iter()
                .zip(&grid)
                .map(|(m, &r)| (m / r.powi(n as i32), i, r))
                .fold((f64::NEG_INFINITY, i, f64::NAN), |a, b| if b.0 > a.0 { b } else { a })
        })
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX, f64::NAN),
            |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );
    Ok(UpperRegularity {
        value,
        n,
        argmax_center: c,
        argmax_radius: r,
        radius_grid: grid,
    })
}

/// Exact `sup_{x in supp, r >= r_min} nu(B(x, r)) / r^n`.
///
/// Between consecutive distance shells the ball mass is constant while `r^n`
/// grows, so the supremum is approached just above a shell (or at `r_min`).
pub fn upper_regularity_exact(mu: &DiscreteMeasure, n: u32, r_min: f64) -> Result<f64> {
    if !(r_min > 0.0) {
        return Err(Error::invalid("r_min must be positive"));
    }
    let centers = mu.support_indices();
    if centers.is_empty() {
        return Err(Error::invalid("measure has empty support"));
    }
    let shells = ShellIndex::build(mu.support());
    Ok(upper_regularity_exact_with(mu, &shells, n, r_min))
}

pub(crate) fn upper_regularity_exact_with(
    mu: &DiscreteMeasure,
    shells: &ShellIndex,
    n: u32,
    r_min: f64,
) -> f64 {
    mu.support_indices()
        .par_iter()
        .map(|&i| {
            let order = shells.order(i);
            let dist = shells.distances(i);
            let mut best: f64 = 0.0;
            let mut acc = 0.0;
            let mut k = 0;
            let len = order.len();
            // mass strictly inside r_min
            while k < len && dist[k] < r_min {
                acc += mu.weights[order[k] as usize];
                k += 1;
            }
            best = best.max(acc / r_min.powi(n as i32));
            while k < len {
                let d = dist[k];
                while k < len && dist[k] == d {
                    acc += mu.weights[order[k] as usize];
                    k += 1;
                }
                best = best.max(acc / d.powi(n as i32));
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub c_lower: f64,
    pub c_upper: f64,
    /// `max(c_upper, 1 / c_lower)`.
    pub reg: f64,
    pub radius_grid: Vec<f64>,
}

impl RegularityReport {
    /// Whether the two-sided bound holds with constant at most `threshold`.
    pub fn is_regular_within(&self, threshold: f64) -> bool {
        self.c_lower > 0.0 && self.reg <= threshold
    }
}

/// Two-sided 1-regularity constants `C_lower <= nu(B(x,r))/r <= C_upper` over
/// support points and the logarithmic radius grid.
pub fn regularity_constants(mu: &DiscreteMeasure, scale_range: (f64, f64)) -> Result<RegularityReport> {
    if !(mu.total_mass() > 0.0) {
        return Err(Error::invalid("zero total mass"));
    }
    let grid = log_radius_grid(scale_range.0, scale_range.1, RADII_PER_OCTAVE)?;
    let shells = ShellIndex::build(mu.support());
    let (lo, hi) = mu
        .support_indices()
        .par_iter()
        .map(|&i| {
            let masses = ball_masses(mu, &shells, i, &grid);
            masses.iter().zip(&grid).fold((f64::INFINITY, 0.0_f64), |(lo, hi), (m, r)| {
                let q = m / r;
                (lo.min(q), hi.max(q))
            })
        })
        .reduce(|| (f64::INFINITY, 0.0), |a, b| (a.0.min(b.0), a.1.max(b.1)));
    Ok(RegularityReport {
        c_lower: lo,
        c_upper: hi,
        reg: hi.max(1.0 / lo),
        radius_grid: grid,
    })
}
