//! Christ cubes and Christ–Whitney decompositions of finite metric spaces.
//!
//! Cubes at scale `k` have size about `8^-k`. Nets are greedy maximal
//! `(1/2) 8^-k`-separated sets, nested across scales; every net point picks
//! its nearest coarser net point as parent (ties to the lowest index), and a
//! cube is the set of leaves whose ancestor chain passes through its centre.
//! All properties are verified exactly after construction.

use rayon::prelude::*;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::space::{DiscreteMeasure, DistanceMatrix, Metric};

/// Orderings tried before giving up on roundness.
pub const MAX_ORDERINGS: usize = 8;
pub const INNER_RADIUS: f64 = 1.0 / 16.0;
pub const OUTER_RADIUS: f64 = 2.0;
/// Sharper radii of the cited construction; reported, not required.
pub const SHARP_INNER_RADIUS: f64 = 5.0 / 14.0;
pub const SHARP_OUTER_RADIUS: f64 = 8.0 / 7.0;

pub fn scale(k: i32) -> f64 {
    8f64.powi(-k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeLevel {
    pub k: i32,
    pub centers: Vec<usize>,
    /// Cube index of every point.
    pub cube_of: Vec<u32>,
    /// Index of the parent cube one level up (itself at the top level).
    pub parent: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeChecks {
    pub partition: bool,
    pub nesting: bool,
    pub roundness: bool,
    /// `B(x, (5/14) 8^-k) ⊂ Q ⊂ closed B(x, (8/7) 8^-k)` on every cube.
    pub sharp_roundness: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChristCubeTree {
    pub k_min: i32,
    pub k_max: i32,
    pub levels: Vec<CubeLevel>,
    /// 0 for index order, otherwise the seeded shuffle that succeeded.
    pub ordering: usize,
    pub checks: TreeChecks,
    #[serde(skip)]
    table: DistanceMatrix,
}

/// Scale range whose coarsest cubes exceed the diameter and whose finest
/// net separation is below the smallest positive distance.
pub fn default_scale_range<M: Metric + ?Sized>(m: &M) -> (i32, i32) {
    let n = m.len();
    let (lo, hi) = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n).fold((f64::INFINITY, 0.0f64), |(lo, hi), j| {
                let d = m.dist(i, j);
                (if d > 0.0 { lo.min(d) } else { lo }, hi.max(d))
            })
        })
        .reduce(|| (f64::INFINITY, 0.0), |a, b| (a.0.min(b.0), a.1.max(b.1)));
    if hi == 0.0 {
        return (0, 0);
    }
    let mut k_min = (-hi.log(8.0)).floor() as i32;
    while scale(k_min) <= hi {
        k_min -= 1;
    }
    let mut k_max = (-lo.log(8.0)).ceil() as i32;
    while scale(k_max) >= lo {
        k_max += 1;
    }
    (k_min, k_max.max(k_min))
}

impl ChristCubeTree {
    pub fn table(&self) -> &DistanceMatrix {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Level for scale `k`; scales finer than `k_max` reuse the leaf partition.
    pub fn level(&self, k: i32) -> Option<&CubeLevel> {
        if k < self.k_min {
            return None;
        }
        let k = k.min(self.k_max);
        self.levels.get((k - self.k_min) as usize)
    }

    /// `(cube index, centre)` of the scale-`k` cube containing `p`.
    pub fn cube(&self, k: i32, p: usize) -> Option<(u32, usize)> {
        self.level(k).map(|l| {
            let c = l.cube_of[p];
            (c, l.centers[c as usize])
        })
    }

    pub fn members(&self, k: i32, cube: u32) -> Vec<usize> {
        match self.level(k) {
            Some(l) => (0..self.len()).filter(|&p| l.cube_of[p] == cube).collect(),
            None => Vec::new(),
        }
    }
}

/// Builds and verifies the cube hierarchy for scales `k_min ..= k_max`.
pub fn christ_cubes<M: Metric + ?Sized>(m: &M, k_min: i32, k_max: i32) -> Result<ChristCubeTree> {
    let n = m.len();
    if n == 0 {
        return Err(Error::EmptySpace);
    }
    if k_max < k_min {
        return Err(Error::invalid("k_max must be at least k_min"));
    }
    let mut table = DistanceMatrix::from_metric(m);
    let (lo, hi) = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), (i, j)| {
            let d = table.dist(i, j);
            (if d > 0.0 { lo.min(d) } else { lo }, hi.max(d))
        });
    if hi > 0.0 && scale(k_min) <= hi {
        return Err(Error::invalid(format!(
            "8^-k_min = {} must exceed the diameter {hi}",
            scale(k_min)
        )));
    }
    if lo.is_finite() && scale(k_max) >= lo {
        return Err(Error::invalid(format!(
            "8^-k_max = {} must be below the smallest distance {lo}",
            scale(k_max)
        )));
    }
    let mut witness = (0usize, k_min);
    for attempt in 0..MAX_ORDERINGS {
        let mut order: Vec<usize> = (0..n).collect();
        if attempt > 0 {
            order.shuffle(&mut rng::substream(0, "christ-ordering", attempt as u64));
        }
        let levels = build_levels(&table, &order, k_min, k_max);
        let mut tree = ChristCubeTree {
            k_min,
            k_max,
            levels,
            ordering: attempt,
            checks: TreeChecks {
                partition: false,
                nesting: false,
                roundness: false,
                sharp_roundness: false,
            },
            table,
        };
        let (checks, bad) = verify_tree(&tree);
        tree.checks = checks;
        match bad {
            None if tree.checks.partition && tree.checks.nesting => return Ok(tree),
            None => return Err(Error::invalid("cube construction broke partition or nesting")),
            Some(w) => witness = w,
        }
        table = tree.table;
    }
    Err(Error::RoundnessFailure {
        attempts: MAX_ORDERINGS,
        witness: witness.0,
        level: witness.1,
    })
}

fn nearest(table: &DistanceMatrix, p: usize, among: &[usize]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (a, &c) in among.iter().enumerate() {
        let d = table.dist(p, c);
        if d < bd || (d == bd && c < among[best]) {
            bd = d;
            best = a;
        }
    }
    best
}

fn build_levels(table: &DistanceMatrix, order: &[usize], k_min: i32, k_max: i32) -> Vec<CubeLevel> {
    let n = table.len();
    // nested nets, coarse to fine
    let mut nets: Vec<Vec<usize>> = Vec::new();
    let mut in_net = vec![false; n];
    let mut net: Vec<usize> = Vec::new();
    for k in k_min..=k_max {
        let sep = 0.5 * scale(k);
        for &p in order {
            if !in_net[p] && net.iter().all(|&q| table.dist(p, q) >= sep) {
                in_net[p] = true;
                net.push(p);
            }
        }
        nets.push(net.clone());
    }
    // cube index of each net point at its own level, then parents
    let depth = nets.len();
    let mut parent: Vec<Vec<u32>> = vec![Vec::new(); depth];
    for l in 0..depth {
        parent[l] = if l == 0 {
            (0..nets[0].len() as u32).collect()
        } else {
            let coarse = &nets[l - 1];
            nets[l]
                .par_iter()
                .enumerate()
                .map(|(a, &c)| {
                    if a < coarse.len() {
                        a as u32
                    } else {
                        nearest(table, c, coarse) as u32
                    }
                })
                .collect()
        };
    }
    // leaves: every point joins its nearest finest-net point
    let finest = &nets[depth - 1];
    let mut cube_of: Vec<u32> = (0..n)
        .into_par_iter()
        .map(|p| nearest(table, p, finest) as u32)
        .collect();
    let mut levels = vec![None; depth];
    for l in (0..depth).rev() {
        if l + 1 < depth {
            let up = &parent[l + 1];
            cube_of = cube_of.iter().map(|&c| up[c as usize]).collect();
        }
        levels[l] = Some(CubeLevel {
            k: k_min + l as i32,
            centers: nets[l].clone(),
            cube_of: cube_of.clone(),
            parent: parent[l].clone(),
        });
    }
    levels.into_iter().map(Option::unwrap).collect()
}

/// Exact checks; the second value names a roundness witness `(point, level)`.
fn verify_tree(tree: &ChristCubeTree) -> (TreeChecks, Option<(usize, i32)>) {
    let n = tree.len();
    let t = &tree.table;
    let mut partition = true;
    let mut nesting = true;
    let mut sharp = true;
    let mut witness = None;
    for (l, level) in tree.levels.iter().enumerate() {
        let r = scale(level.k);
        if level.cube_of.len() != n || level.cube_of.iter().any(|&c| c as usize >= level.centers.len()) {
            partition = false;
            continue;
        }
        for (c, &x) in level.centers.iter().enumerate() {
            if level.cube_of[x] as usize != c {
                partition = false;
            }
        }
        if l > 0 {
            let up = &tree.levels[l - 1];
            for p in 0..n {
                if level.parent[level.cube_of[p] as usize] != up.cube_of[p] {
                    nesting = false;
                }
            }
        }
        let bad: Vec<(usize, bool, bool)> = (0..n)
            .into_par_iter()
            .map(|p| {
                let c = level.cube_of[p] as usize;
                let x = level.centers[c];
                let d = t.dist(x, p);
                let mut round = d < OUTER_RADIUS * r;
                let mut sharp_ok = d <= SHARP_OUTER_RADIUS * r;
                // p must lie in the cube of every centre whose inner ball holds it
                for (c2, &x2) in level.centers.iter().enumerate() {
                    if c2 != c {
                        let d2 = t.dist(x2, p);
                        if d2 < INNER_RADIUS * r {
                            round = false;
                        }
                        if d2 < SHARP_INNER_RADIUS * r {
                            sharp_ok = false;
                        }
                    }
                }
                (p, round, sharp_ok)
            })
            .collect();
        for (p, round, sharp_ok) in bad {
            sharp &= sharp_ok;
            if !round && witness.is_none() {
                witness = Some((p, level.k));
            }
        }
    }
    (
        TreeChecks {
            partition,
            nesting,
            roundness: witness.is_none(),
            sharp_roundness: sharp,
        },
        witness,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceCertificate {
    /// `min_{y not in U} d(x, y) - (1/16) 8^-k`.
    pub inner_slack: f64,
    /// `2 8^-k - max_{y in U} d(x, y)`.
    pub outer_slack: f64,
    pub dist_to_complement: f64,
    /// `d(U, M \ Omega) - 32 8^-k`.
    pub lower_slack: f64,
    /// `320 8^-k - d(U, M \ Omega)`.
    pub upper_slack: f64,
    pub diam: f64,
    /// `d(U, M \ Omega) >= 40 8^-k - diam(U)` and `40 - diam 8^k > 32`.
    pub chain_holds: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitneyPiece {
    pub members: Vec<usize>,
    pub center: usize,
    pub k: i32,
    pub certificate: PieceCertificate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitneyProperties {
    /// Pieces are disjoint and cover `Omega` exactly.
    pub partition: bool,
    /// Every piece passes its round-and-distance certificate.
    pub round_and_distance: bool,
    /// Every centre sees at most `cover_bound` intersecting `16 8^-k` balls.
    pub overlap: bool,
    /// Hit centres lie within `640 8^-k_i` and are `(1/480) 8^-k_i` apart.
    pub overlap_chain: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitneyDecomposition {
    pub pieces: Vec<WhitneyPiece>,
    pub omega: Vec<usize>,
    pub complement: Vec<usize>,
    /// `max_i #{j : B(x_i, 16 8^-k_i) ∩ B(x_j, 16 8^-k_j) ≠ ∅}`.
    pub overlap: usize,
    /// Largest number of balls `B(x_i, 16 8^-k_i)` containing one point.
    pub multiplicity: usize,
    /// Cover of `B(x_i, 1024 8^-k_i)` by `8^-k_i / 1024` balls, maximized over `i`.
    pub cover_bound: usize,
    pub properties: WhitneyProperties,
}

impl WhitneyDecomposition {
    pub fn pass(&self) -> bool {
        let p = &self.properties;
        p.partition && p.round_and_distance && p.overlap && p.overlap_chain
    }
}

/// Band index `k` with `40 8^-k < d <= 320 8^-k`.
pub fn band(d: f64) -> i32 {
    let mut k = (320.0 / d).log(8.0).floor() as i32;
    while 320.0 * scale(k) < d {
        k -= 1;
    }
    while 40.0 * scale(k) >= d {
        k += 1;
    }
    k
}

/// Whitney decomposition of `Omega` (a point set) from the cube tree.
pub fn whitney_decompose(tree: &ChristCubeTree, in_omega: &[bool]) -> Result<WhitneyDecomposition> {
    let n = tree.len();
    if in_omega.len() != n {
        return Err(Error::invalid("omega mask has the wrong length"));
    }
    let omega: Vec<usize> = (0..n).filter(|&p| in_omega[p]).collect();
    let complement: Vec<usize> = (0..n).filter(|&p| !in_omega[p]).collect();
    if complement.is_empty() {
        return Err(Error::EmptyComplement);
    }
    if omega.is_empty() {
        return Err(Error::invalid("omega is empty"));
    }
    let t = tree.table();
    let dist_c: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|p| complement.iter().map(|&q| t.dist(p, q)).fold(f64::INFINITY, f64::min))
        .collect();
    let bands: Vec<i32> = omega.iter().map(|&p| band(dist_c[p])).collect();
    let k_lo = *bands.iter().min().unwrap();
    if tree.level(k_lo).is_none() {
        return Err(Error::invalid(format!("cube tree starts at scale {} but omega needs {k_lo}", tree.k_min)));
    }
    // selected cubes per scale: (k, cube)
    let mut selected = std::collections::BTreeSet::new();
    for (&p, &k) in omega.iter().zip(&bands) {
        selected.insert((k, tree.cube(k, p).unwrap().0));
    }
    let mut pieces = Vec::new();
    let mut owner = vec![usize::MAX; n];
    let mut partition = true;
    for &(k, c) in &selected {
        let (_, x) = (c, tree.level(k).unwrap().centers[c as usize]);
        let maximal = (k_lo..k).all(|k2| !selected.contains(&(k2, tree.cube(k2, x).unwrap().0)));
        if !maximal {
            continue;
        }
        let members = tree.members(k, c);
        for &p in &members {
            if owner[p] != usize::MAX || !in_omega[p] {
                partition = false;
            }
            owner[p] = pieces.len();
        }
        let certificate = certify_piece(t, &members, x, k, &dist_c, in_omega);
        pieces.push(WhitneyPiece {
            members,
            center: x,
            k,
            certificate,
        });
    }
    partition &= omega.iter().all(|&p| owner[p] != usize::MAX);
    let (overlap, multiplicity, cover_bound, overlap_ok, chain_ok) = overlap_stats(t, &pieces);
    let round_and_distance = pieces.iter().all(|p| p.certificate.pass);
    Ok(WhitneyDecomposition {
        pieces,
        omega,
        complement,
        overlap,
        multiplicity,
        cover_bound,
        properties: WhitneyProperties {
            partition,
            round_and_distance,
            overlap: overlap_ok,
            overlap_chain: chain_ok,
        },
    })
}

fn certify_piece(
    t: &DistanceMatrix,
    members: &[usize],
    x: usize,
    k: i32,
    dist_c: &[f64],
    in_omega: &[bool],
) -> PieceCertificate {
    let r = scale(k);
    let n = t.len();
    let mut is_member = vec![false; n];
    for &p in members {
        is_member[p] = true;
    }
    let nearest_out = (0..n)
        .filter(|&p| !is_member[p])
        .map(|p| t.dist(x, p))
        .fold(f64::INFINITY, f64::min);
    let farthest_in = members.iter().map(|&p| t.dist(x, p)).fold(0.0, f64::max);
    let dist_u = members.iter().map(|&p| dist_c[p]).fold(f64::INFINITY, f64::min);
    let mut diam: f64 = 0.0;
    for &a in members {
        for &b in members {
            diam = diam.max(t.dist(a, b));
        }
    }
    let inner_slack = nearest_out - INNER_RADIUS * r;
    let outer_slack = OUTER_RADIUS * r - farthest_in;
    let lower_slack = dist_u - 32.0 * r;
    let upper_slack = 320.0 * r - dist_u;
    let chain_holds = dist_u >= 40.0 * r - diam && 40.0 * r - diam > 32.0 * r;
    let inside = members.iter().all(|&p| in_omega[p]) && is_member[x];
    PieceCertificate {
        inner_slack,
        outer_slack,
        dist_to_complement: dist_u,
        lower_slack,
        upper_slack,
        diam,
        chain_holds,
        pass: inside && inner_slack >= 0.0 && outer_slack > 0.0 && lower_slack >= 0.0 && upper_slack >= 0.0 && chain_holds,
    }
}

type Bits = Vec<u64>;

fn ball_bits(t: &DistanceMatrix, x: usize, r: f64) -> Bits {
    let n = t.len();
    let mut b = vec![0u64; n.div_ceil(64)];
    for (p, d) in t.row_slice(x).iter().enumerate() {
        if *d < r {
            b[p / 64] |= 1 << (p % 64);
        }
    }
    b
}

/// Greedy cover of `B(x, 1024 r)` by balls of radius `r / 1024` centred at its points.
fn lemma_cover(t: &DistanceMatrix, x: usize, r: f64, dmin: f64) -> usize {
    let big: Vec<usize> = (0..t.len()).filter(|&p| t.dist(x, p) < 1024.0 * r).collect();
    let small = r / 1024.0;
    if small <= dmin {
        return big.len();
    }
    let mut covered = vec![false; big.len()];
    let mut count = 0;
    for a in 0..big.len() {
        if covered[a] {
            continue;
        }
        count += 1;
        for b in a..big.len() {
            if !covered[b] && t.dist(big[a], big[b]) < small {
                covered[b] = true;
            }
        }
    }
    count
}

fn overlap_stats(t: &DistanceMatrix, pieces: &[WhitneyPiece]) -> (usize, usize, usize, bool, bool) {
    let dmin = (0..t.len())
        .into_par_iter()
        .map(|i| t.row_slice(i).iter().filter(|d| **d > 0.0).fold(f64::INFINITY, |a, b| a.min(*b)))
        .reduce(|| f64::INFINITY, f64::min);
    let balls: Vec<Bits> = pieces
        .par_iter()
        .map(|p| ball_bits(t, p.center, 16.0 * scale(p.k)))
        .collect();
    let per: Vec<(usize, usize, bool, bool)> = (0..pieces.len())
        .into_par_iter()
        .map(|i| {
            let hits: Vec<usize> = (0..pieces.len())
                .filter(|&j| balls[i].iter().zip(&balls[j]).any(|(a, b)| a & b != 0))
                .collect();
            let r = scale(pieces[i].k);
            let xi = pieces[i].center;
            let mut chain = hits.iter().all(|&j| t.dist(xi, pieces[j].center) <= 640.0 * r);
            for (a, &j) in hits.iter().enumerate() {
                for &l in &hits[a + 1..] {
                    if t.dist(pieces[j].center, pieces[l].center) < r / 480.0 {
                        chain = false;
                    }
                }
            }
            let cover = lemma_cover(t, xi, r, dmin);
            (hits.len(), cover, hits.len() <= cover, chain)
        })
        .collect();
    let n = t.len();
    let mut mult = vec![0usize; n];
    for b in &balls {
        for (w, word) in b.iter().enumerate() {
            let mut bits = *word;
            while bits != 0 {
                let k = bits.trailing_zeros() as usize;
                mult[w * 64 + k] += 1;
                bits &= bits - 1;
            }
        }
    }
    (
        per.iter().map(|p| p.0).max().unwrap_or(0),
        mult.into_iter().max().unwrap_or(0),
        per.iter().map(|p| p.1).max().unwrap_or(0),
        per.iter().all(|p| p.2),
        per.iter().all(|p| p.3),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub b: f64,
    /// Pieces with `nu(B(x_i, 16 8^-k_i)) <= b nu(B(x_i, 2 8^-k_i))`.
    pub i1: Vec<usize>,
    pub i2: Vec<usize>,
    pub mass_i1: f64,
    pub mass_omega: f64,
    /// `sum_{I_1} nu(U_i) >= nu(Omega) / 2`.
    pub half_mass: bool,
}

/// Splits the pieces into doubling (`I_1`) and non-doubling (`I_2`) ones.
/// `b` defaults to twice the measured overlap.
pub fn classify_doubling(w: &WhitneyDecomposition, nu: &DiscreteMeasure, b: Option<f64>) -> Result<Classification> {
    let b = b.unwrap_or(2.0 * w.overlap as f64);
    if !(b > 0.0) {
        return Err(Error::invalid("b must be positive"));
    }
    let mut i1 = Vec::new();
    let mut i2 = Vec::new();
    let mut mass_i1 = 0.0;
    for (i, p) in w.pieces.iter().enumerate() {
        let r = scale(p.k);
        if nu.ball_mass(p.center, 16.0 * r) <= b * nu.ball_mass(p.center, 2.0 * r) {
            i1.push(i);
            mass_i1 += nu.mass_of(p.members.iter().copied());
        } else {
            i2.push(i);
        }
    }
    let mass_omega = nu.mass_of(w.omega.iter().copied());
    Ok(Classification {
        b,
        i1,
        i2,
        mass_i1,
        mass_omega,
        half_mass: mass_i1 >= 0.5 * mass_omega,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{FiniteMetricSpace, NormedSpace, PointCloud, PointId, Support};

    fn segment(n: usize) -> PointCloud {
        PointCloud::new(
            NormedSpace::euclidean(1),
            (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect(),
        )
        .unwrap()
    }

    fn grid(side: usize) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..side {
            for j in 0..side {
                pts.push(vec![i as f64, j as f64]);
            }
        }
        PointCloud::new(NormedSpace::euclidean(2), pts).unwrap()
    }

    #[test]
    fn band_brackets() {
        for &d in &[1e-6, 0.01, 0.3, 1.0, 39.9, 40.0, 40.1, 320.0, 321.0, 1e5] {
            let k = band(d);
            assert!(40.0 * scale(k) < d && d <= 320.0 * scale(k), "{d} {k}");
        }
    }

    #[test]
    fn one_point_space() {
        let m = FiniteMetricSpace::new(vec![PointId::Int(0)], vec![vec![0.0]]).unwrap();
        let t = christ_cubes(&m, -1, 2).unwrap();
        assert!(t.levels.iter().all(|l| l.centers == vec![0]));
    }

    #[test]
    fn two_points_nest() {
        let m = FiniteMetricSpace::new(
            vec![PointId::Int(0), PointId::Int(1)],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let t = christ_cubes(&m, -1, 1).unwrap();
        assert_eq!(t.level(-1).unwrap().centers.len(), 1);
        assert_eq!(t.level(1).unwrap().centers.len(), 2);
        assert!(t.checks.nesting && t.checks.partition && t.checks.roundness);
        assert!(christ_cubes(&m, 0, 1).is_err());
        assert!(christ_cubes(&m, -1, 0).is_err());
    }

    #[test]
    fn planar_grid_tree() {
        let g = grid(16);
        let (a, b) = default_scale_range(&g);
        let t = christ_cubes(&g, a, b).unwrap();
        assert!(t.checks.partition && t.checks.nesting && t.checks.roundness);
        assert_eq!(t.ordering, 0);
    }

    #[test]
    fn segment_minus_endpoint() {
        let s = segment(64);
        let (a, b) = default_scale_range(&s);
        let t = christ_cubes(&s, a, b).unwrap();
        let mut omega = vec![true; 64];
        omega[63] = false;
        let w = whitney_decompose(&t, &omega).unwrap();
        assert!(w.pass(), "{:?}", w.properties);
        // pieces nearer the removed point sit at finer scales
        let piece_of = |p: usize| w.pieces.iter().find(|q| q.members.contains(&p)).unwrap().k;
        assert!(piece_of(62) >= piece_of(0));
        let err = whitney_decompose(&t, &[true; 64]).unwrap_err();
        assert!(matches!(err, Error::EmptyComplement));
    }

    #[test]
    fn single_point_omega() {
        let m = FiniteMetricSpace::new(
            vec![PointId::Int(0), PointId::Int(1)],
            vec![vec![0.0, 5.0], vec![5.0, 0.0]],
        )
        .unwrap();
        let (a, b) = default_scale_range(&m);
        let t = christ_cubes(&m, a, b).unwrap();
        let w = whitney_decompose(&t, &[true, false]).unwrap();
        assert_eq!(w.pieces.len(), 1);
        assert_eq!(w.pieces[0].members, vec![0]);
        let k = w.pieces[0].k;
        assert!(32.0 * scale(k) <= 5.0 && 5.0 <= 320.0 * scale(k));
        assert!(w.pass());
        let nu = DiscreteMeasure::counting(Support::Metric(m));
        let c = classify_doubling(&w, &nu, Some(1.0)).unwrap();
        assert_eq!(c.i1, vec![0]);
        assert!(c.half_mass);
    }

    #[test]
    fn grid_classification_and_half_mass() {
        let g = grid(12);
        let (a, b) = default_scale_range(&g);
        let t = christ_cubes(&g, a, b).unwrap();
        let omega: Vec<bool> = (0..144).map(|p| p % 12 < 7).collect();
        let w = whitney_decompose(&t, &omega).unwrap();
        assert!(w.pass(), "{:?}", w.properties);
        let nu = DiscreteMeasure::counting(Support::Cloud(g));
        let c = classify_doubling(&w, &nu, None).unwrap();
        assert!(c.half_mass);
    }

    #[test]
    fn mass_just_outside_inner_ball_is_non_doubling() {
        let g = grid(12);
        let (a, b) = default_scale_range(&g);
        let t = christ_cubes(&g, a, b).unwrap();
        let omega: Vec<bool> = (0..144).map(|p| p % 12 < 7).collect();
        let w = whitney_decompose(&t, &omega).unwrap();
        let (idx, y) = w
            .pieces
            .iter()
            .enumerate()
            .find_map(|(i, p)| {
                let r = scale(p.k);
                (0..144)
                    .find(|&y| {
                        let d = g.dist(p.center, y);
                        d > 2.0 * r && d < 16.0 * r
                    })
                    .map(|y| (i, y))
            })
            .unwrap();
        let mut weights = vec![1.0; 144];
        weights[y] = 1e9;
        let nu = DiscreteMeasure::new(Support::Cloud(g), weights).unwrap();
        let c = classify_doubling(&w, &nu, None).unwrap();
        assert!(c.i2.contains(&idx));
        assert!(!c.i1.contains(&idx));
    }
}
