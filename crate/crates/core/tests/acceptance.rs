//! Acceptance suite: every criterion runs at its stated tolerance and
//! prints one `PASS`/`FAIL` line with its wall time. Exits nonzero when any
//! criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use czcurve::curve::{self, CurveSpec, SampledCurve};
use czcurve::goodlambda::{self, CurveConfig, PipelineConfig, PipelineReport};
use czcurve::harness::{self, Formats};
use czcurve::kernel::{self, KernelSpec, Line, ProbeSet};
use czcurve::rng::{self, Rng};
use czcurve::sio::{self, SioOperator};
use czcurve::space::{self, DiscreteMeasure, FiniteMetricSpace, Metric, NormKind, NormedSpace, PointCloud, PointId, Support};
use czcurve::whitney;

type Outcome = Result<String, String>;

struct Suite {
    failed: Vec<u32>,
}

impl Suite {
    fn run(&mut self, id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let out = f();
        let dt = t.elapsed();
        let (ok, detail) = match out {
            Ok(d) => match limit {
                Some(l) if dt > l => (false, format!("{d}; over the {:.0} s limit", l.as_secs_f64())),
                _ => (true, d),
            },
            Err(d) => (false, d),
        };
        println!(
            "[{}] {id:>2} {name} ({:.2} s): {detail}",
            if ok { "PASS" } else { "FAIL" },
            dt.as_secs_f64()
        );
        if !ok {
            self.failed.push(id);
        }
    }
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn circle(k: usize) -> SampledCurve {
    CurveSpec::Circle { radius: 1.0 }.sample(k, NormKind::P { p: 2.0 }).unwrap()
}

fn random_space(seed: u64, idx: u64) -> FiniteMetricSpace {
    let mut r = rng::substream(seed, "acceptance-spaces", idx);
    let n = r.random_range(2..=200usize);
    if idx.is_multiple_of(2) {
        let dim = r.random_range(1..=4usize);
        let norm = match r.random_range(0..3) {
            0 => NormKind::Sup,
            1 => NormKind::P { p: 2.0 },
            _ => NormKind::P { p: r.random_range(1.2..4.0) },
        };
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
        FiniteMetricSpace::from_cloud(&PointCloud::new(NormedSpace::new(dim, norm).unwrap(), pts).unwrap())
    } else {
        // shortest-path metric of a random weighted graph on a spanning path plus chords
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        let edge = |d: &mut Vec<Vec<f64>>, i: usize, j: usize, w: f64| {
            if w < d[i][j] {
                d[i][j] = w;
                d[j][i] = w;
            }
        };
        for i in 1..n {
            let w = r.random_range(0.1..3.0);
            edge(&mut d, i - 1, i, w);
        }
        for _ in 0..2 * n {
            let (i, j) = (r.random_range(0..n), r.random_range(0..n));
            if i != j {
                let w = r.random_range(0.1..3.0);
                edge(&mut d, i, j, w);
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let v = d[i][k] + d[k][j];
                    if v < d[i][j] {
                        d[i][j] = v;
                    }
                }
            }
        }
        FiniteMetricSpace::new((0..n as i64).map(PointId::Int).collect(), d).unwrap()
    }
}

fn c1_kuratowski() -> Outcome {
    let mut worst: f64 = 0.0;
    for idx in 0..50 {
        let m = random_space(1, idx);
        let e = space::kuratowski_embed(&m);
        for i in 0..m.len() {
            for j in 0..m.len() {
                worst = worst.max((e.dist(i, j) - m.dist(i, j)).abs());
            }
        }
    }
    check(worst <= 1e-12, format!("max error {worst:e} over 50 spaces"))
}

fn c2_arc_length() -> Outcome {
    let e1 = (curve::curve_integral(&circle(10_000), |_| 1.0).unwrap() - 2.0 * PI).abs();
    let e2 = (curve::curve_integral(&circle(512), |_| 1.0).unwrap() - 2.0 * PI).abs();
    check(e1 <= 1e-8 && e2 <= 1e-4, format!("|L - 2π| = {e1:e} at K=10^4, {e2:e} at K=512"))
}

fn c3_metric_derivative() -> Outcome {
    let err = |k: usize| {
        let c = circle(k);
        (0..c.len())
            .map(|i| (c.speed(i) - curve::metric_derivative(&c, i).unwrap()).abs())
            .fold(0.0, f64::max)
    };
    let errs: Vec<f64> = [64, 128, 256, 512, 1024].iter().map(|&k| err(k)).collect();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = ratios.iter().all(|r| *r >= 1.5);
    check(ok, format!("error ratios per halving {ratios:.3?}"))
}

fn c4_bilipschitz_flatness() -> Outcome {
    let norm = NormKind::P { p: 2.0 };
    let curves = [
        ("circle", circle(512)),
        (
            "graph seed 1",
            CurveSpec::PerturbedGraph {
                eps: 0.1,
                modes: 4,
                seed: 1,
            }
            .sample(512, norm)
            .unwrap(),
        ),
        (
            "graph seed 2",
            CurveSpec::PerturbedGraph {
                eps: 0.2,
                modes: 6,
                seed: 2,
            }
            .sample(512, norm)
            .unwrap(),
        ),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, c) in &curves {
        let meta = curve::CurveMetadata::fit(c, 1.0).unwrap();
        let a = curve::bilipschitz_audit(c, &meta);
        let f = curve::flatness_check(c, &meta);
        ok &= a.lower_violations == 0 && a.upper_violations == 0 && f.pass && a.pairs_checked > 0;
        parts.push(format!(
            "{name}: {} pairs, {}+{} violations, flatness {:.4}/{:.4}",
            a.pairs_checked, a.lower_violations, a.upper_violations, f.ratio, f.c
        ));
    }
    check(ok, parts.join("; "))
}

fn c5_kernel_certification() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for dim in [2, 3] {
        let k = kernel::riesz_kernel(0, NormedSpace::euclidean(dim)).unwrap();
        let probes = ProbeSet::standard(&k.space, 0);
        let dense = ProbeSet::with_density(&k.space, 0, 2);
        let g = kernel::verify_growth(&k, &probes).unwrap();
        let h1 = kernel::verify_holder(&k, &probes).unwrap().fitted;
        let h2 = kernel::verify_holder(&k, &dense).unwrap().fitted;
        let hom = kernel::homogeneity_defect(&k, &probes, &[0.5, 2.0, 10.0]);
        let drift = (h2 / h1 - 1.0).abs();
        ok &= g.fitted <= 1.0 + 1e-12 && h1.is_finite() && drift < 0.05 && hom <= 1e-12;
        parts.push(format!(
            "R^{dim}: B_g={:.12}, B_h={h1:.4} -> {h2:.4} ({:.2}%), homogeneity {hom:e}",
            g.fitted,
            100.0 * drift
        ));
    }
    check(ok, parts.join("; "))
}

fn c6_annular() -> Outcome {
    let h = kernel::hilbert_kernel();
    let r1 = kernel::riesz_kernel(0, NormedSpace::euclidean(2)).unwrap();
    // odd kernel, line through the origin
    let through = Line::new(&r1.space, vec![0.0, 0.0], vec![0.6, 0.8]).unwrap();
    let hl = Line::new(&h.space, vec![0.0], vec![1.0]).unwrap();
    let mut odd: f64 = 0.0;
    for (r, big) in [(0.1, 10.0), (0.5, 2.0), (1e-3, 1e3)] {
        odd = odd.max(kernel::annular_integral(&r1, &through, r, big).unwrap().value.abs());
        odd = odd.max(kernel::annular_integral(&h, &hl, r, big).unwrap().value.abs());
    }
    // telescoping on seeded triples along an offset line
    let mut rr = rng::stream(6, "telescoping");
    let mut tele_ok = true;
    let mut worst_excess: f64 = f64::NEG_INFINITY;
    for _ in 0..20 {
        let mut v: Vec<f64> = (0..3).map(|_| 10f64.powf(rr.random_range(-2.0..2.0))).collect();
        v.sort_by(f64::total_cmp);
        let (r, mid, big) = (v[0], v[1], v[2]);
        let a = rr.random_range(0.0..PI);
        let q = rr.random_range(0.0..2.0);
        let line = Line::new(&r1.space, vec![-q * a.sin(), q * a.cos()], vec![a.cos(), a.sin()]).unwrap();
        let whole = kernel::annular_integral(&r1, &line, r, big).unwrap();
        let lo = kernel::annular_integral(&r1, &line, r, mid).unwrap();
        let hi = kernel::annular_integral(&r1, &line, mid, big).unwrap();
        let gap = (whole.value - lo.value - hi.value).abs();
        let rounding = 4.0 * f64::EPSILON * (whole.value.abs() + lo.value.abs() + hi.value.abs());
        let allowed = whole.error + lo.error + hi.error + rounding;
        worst_excess = worst_excess.max(gap - allowed);
        tele_ok &= gap <= allowed;
    }
    // frozen sweep bounds: pi for R_1 on lines in the plane, quadrature noise for H on R
    const RIESZ_SWEEP_BOUND: f64 = PI;
    const HILBERT_SWEEP_BOUND: f64 = 1e-10;
    let radii: Vec<f64> = (-4..=4).map(|j| 2f64.powi(j)).collect();
    let (mut sweep_h, mut sweep_r): (f64, f64) = (0.0, 0.0);
    for &q in &[0.0, 0.3, 1.0] {
        let lh = Line::new(&h.space, vec![q], vec![1.0]).unwrap();
        for th in 0..4 {
            let a = th as f64 * PI / 4.0;
            let lr = Line::new(&r1.space, vec![-q * a.sin(), q * a.cos()], vec![a.cos(), a.sin()]).unwrap();
            for (i, &r) in radii.iter().enumerate() {
                for &big in &radii[i + 1..] {
                    if th == 0 {
                        sweep_h = sweep_h.max(kernel::annular_integral(&h, &lh, r, big).unwrap().value.abs());
                    }
                    sweep_r = sweep_r.max(kernel::annular_integral(&r1, &lr, r, big).unwrap().value.abs());
                }
            }
        }
    }
    let ok = odd <= 1e-10 && tele_ok && sweep_h <= HILBERT_SWEEP_BOUND && sweep_r <= RIESZ_SWEEP_BOUND;
    check(
        ok,
        format!(
            "odd-line max {odd:e}; telescoping worst excess over error {worst_excess:e}; sweeps H {sweep_h:e}, R_1 {sweep_r:.6} <= π"
        ),
    )
}

fn c7_ubl() -> Outcome {
    let h = kernel::hilbert_kernel();
    let line = Line::new(&h.space, vec![0.0], vec![1.0]).unwrap();
    // per-eps change depends only on L/eps; the grid sits at eps <= L/50
    let grid = [0.02, 0.01, 0.005];
    let a = kernel::ubl_estimate(&h, &line, 1.0, 512, &grid).unwrap();
    let b = kernel::ubl_estimate(&h, &line, 1.0, 1024, &grid).unwrap();
    let mut worst_l: f64 = 0.0;
    let mut worst_n: f64 = 0.0;
    for (ea, eb) in a.entries.iter().zip(&b.entries) {
        worst_l = worst_l.max(ea.growth.abs());
        worst_n = worst_n.max((eb.norm_l / ea.norm_l - 1.0).abs());
    }
    check(
        worst_l < 0.05 && worst_n < 0.05,
        format!(
            "max change L=1->2 {:.2}%, N=512->1024 {:.2}%, sup norm {:.4}",
            100.0 * worst_l,
            100.0 * worst_n,
            a.sup
        ),
    )
}

/// Point sets for the decomposition suite: grids, jittered grids and curve samples.
fn whitney_instance(idx: u64) -> (PointCloud, Vec<bool>) {
    let mut r = rng::substream(8, "whitney-instances", idx);
    let e2 = NormedSpace::euclidean(2);
    let pts: Vec<Vec<f64>> = match idx % 3 {
        0 => {
            let side = r.random_range(4..=40usize);
            (0..side * side).map(|p| vec![(p / side) as f64, (p % side) as f64]).collect()
        }
        1 => {
            let side = r.random_range(4..=40usize);
            let jitter = r.random_range(0.0..0.3);
            (0..side * side)
                .map(|p| {
                    vec![
                        (p / side) as f64 + jitter * r.random_range(-1.0..1.0),
                        (p % side) as f64 + jitter * r.random_range(-1.0..1.0),
                    ]
                })
                .collect()
        }
        _ => {
            let k = r.random_range(16..=1999usize);
            let spec = if r.random_bool(0.5) {
                CurveSpec::Circle { radius: 1.0 }
            } else {
                CurveSpec::PerturbedGraph {
                    eps: 0.2,
                    modes: 5,
                    seed: idx,
                }
            };
            let c = spec.sample(k, NormKind::P { p: 2.0 }).unwrap();
            let n = if c.is_closed() { c.len() - 1 } else { c.len() };
            (0..n).map(|i| c.position(i).to_vec()).collect()
        }
    };
    let cloud = PointCloud::new(e2, pts).unwrap();
    let n = cloud.len();
    let centre = r.random_range(0..n);
    let diam = (0..n).map(|j| cloud.dist(centre, j)).fold(0.0, f64::max);
    let rho = r.random_range(0.05..0.6) * diam;
    let outside: Vec<bool> = (0..n).map(|j| cloud.dist(centre, j) > rho).collect();
    let inside: Vec<bool> = (0..n).map(|j| cloud.dist(centre, j) < rho && j != centre).collect();
    let omega = if r.random_bool(0.5) || !inside.contains(&true) { outside } else { inside };
    (cloud, omega)
}

struct WhitneyRun {
    decompositions: usize,
    pieces: usize,
    failures: Vec<u64>,
    half_mass_failures: Vec<u64>,
}

fn whitney_suite() -> WhitneyRun {
    let mut out = WhitneyRun {
        decompositions: 0,
        pieces: 0,
        failures: Vec::new(),
        half_mass_failures: Vec::new(),
    };
    for idx in 0..100 {
        let (cloud, omega) = whitney_instance(idx);
        let (a, b) = whitney::default_scale_range(&cloud);
        let tree = whitney::christ_cubes(&cloud, a, b).unwrap();
        let wd = whitney::whitney_decompose(&tree, &omega).unwrap();
        let tree_ok = tree.checks.partition && tree.checks.nesting && tree.checks.roundness;
        let certs_ok = wd
            .pieces
            .iter()
            .all(|p| p.certificate.pass && p.certificate.lower_slack >= 0.0 && p.certificate.upper_slack >= 0.0);
        if !(tree_ok && wd.pass() && certs_ok) {
            out.failures.push(idx);
        }
        let nu = DiscreteMeasure::counting(Support::Cloud(cloud));
        if !whitney::classify_doubling(&wd, &nu, None).unwrap().half_mass {
            out.half_mass_failures.push(idx);
        }
        out.decompositions += 1;
        out.pieces += wd.pieces.len();
    }
    out
}

fn pipeline_config(samples: usize) -> PipelineConfig {
    serde_json::from_value(serde_json::json!({
        "curve": serde_json::to_value(CurveConfig {
            shape: CurveSpec::Circle { radius: 1.0 },
            samples,
            norm_p: 2.0,
            alpha: 1.0,
        })
        .unwrap(),
        "kernel": serde_json::to_value(KernelSpec::Riesz { coord: 1, dim: 2, p: 2.0 }).unwrap(),
        "ensemble": { "size": 10, "seed": 2024 },
        "eps_grid": [0.25, 0.0625],
        "lambda_quantiles": 50,
    }))
    .unwrap()
}

fn c10_goodlambda(r: &PipelineReport) -> Outcome {
    let gl = &r.goodlambda;
    let grid_rows: Vec<_> = gl.rows.iter().filter(|x| x.eps == 0.25 || x.eps == 0.0625).collect();
    let bad = grid_rows.iter().filter(|x| !x.pass).count();
    let lambdas = {
        let mut l: Vec<(usize, u64)> = grid_rows.iter().map(|x| (x.function, x.lambda.to_bits())).collect();
        l.sort();
        l.dedup();
        l.len()
    };
    check(
        bad == 0 && gl.everywhere_violations == 0 && r.sio.support_points >= 4096,
        format!(
            "{} rows ({} (f, λ) pairs, ε ∈ {{1/4, 1/16}}), {bad} violations, {} off-grid; θ={:.5}, C_D={}, δ={:?}",
            grid_rows.len(),
            lambdas,
            gl.everywhere_violations,
            gl.theta,
            gl.c_d,
            gl.delta
        ),
    )
}

fn c11_lp(coarse: &PipelineReport, fine: &PipelineReport) -> Outcome {
    let th = goodlambda::feasibility_threshold(2.0, 0.5);
    let exact = (8.0f64 / 7.0).sqrt() - 1.0;
    let th_ok = (th - exact).abs() <= 1e-15;
    let (a, b) = (&coarse.goodlambda.lp[0], &fine.goodlambda.lp[0]);
    let (ca, cb) = (a.a_p_certified, b.a_p_certified);
    let ratio = match (ca, cb) {
        (Some(x), Some(y)) => y / x,
        _ => f64::NAN,
    };
    let stable = (ratio - 1.0).abs() <= 0.15;
    let finite = a.a_p.is_some_and(f64::is_finite) && b.a_p.is_some_and(f64::is_finite);
    check(
        th_ok && stable && finite,
        format!(
            "ε_max(2, 1/2) = {th:.15} (√(8/7)-1 = {exact:.15}); A_2 certified {:?} -> {:?} (ratio {ratio:.4}); proof-δ A_2 {:?} -> {:?}",
            ca, cb, a.a_p, b.a_p
        ),
    )
}

fn normalized_circle_measure(k: usize) -> DiscreteMeasure {
    let c = circle(k).normalized(0).unwrap();
    curve::discretize_h1(&c).unwrap()
}

fn c12_tails() -> Outcome {
    let mu = normalized_circle_measure(256);
    let n = mu.len();
    let mut r = rng::stream(12, "l-tech");
    let mut tech_fail = 0;
    let mut statement_fail = 0;
    let mut ratio: f64 = 0.0;
    for _ in 0..100 {
        let f: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let x = r.random_range(0..n);
        let rad = 10f64.powf(r.random_range(-2.0..-0.5));
        let t = sio::tail_bound_check(&mu, 1, 1.0, None, &f, x, rad).unwrap();
        tech_fail += usize::from(!t.pass);
        statement_fail += usize::from(!t.statement_pass);
        ratio = ratio.max(t.proof_constant / t.statement_constant);
    }
    let (nu, _) = curve::append_ray(&mu, &[1.0, 0.0], 4.0).unwrap();
    let k = kernel::riesz_kernel(0, NormedSpace::euclidean(2)).unwrap();
    let op = SioOperator::new(&k, &nu).unwrap();
    let mut rs = rng::stream(12, "l-supp");
    let mut supp_fail = 0;
    for _ in 0..100 {
        let a = rs.random_range(0..n);
        let len = rs.random_range(1..n / 2);
        let p = [1.5, 2.0, 3.0][rs.random_range(0..3)];
        let f: Vec<f64> = (0..nu.len())
            .map(|j| {
                if j < n && (j + n - a) % n < len {
                    rs.random_range(-1.0..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let s = sio::support_tail_check(&op, &nu, &f, p).unwrap();
        supp_fail += usize::from(!s.pass || s.far_points == 0);
    }
    check(
        tech_fail == 0 && supp_fail == 0,
        format!(
            "l-tech proof constant: {tech_fail}/100 violations (printed statement constant: {statement_fail}/100, off by up to C_ν² = {ratio:.3}); l-supp: {supp_fail}/100 violations"
        ),
    )
}

fn c13_glue() -> Outcome {
    let mut fails = Vec::new();
    let mut terms = 0;
    for idx in 0..20 {
        let mut r = rng::substream(13, "glue", idx);
        let na = r.random_range(20..120usize);
        let nb = r.random_range(1..40usize);
        let diam_b = r.random_range(0.05..0.5);
        let gap = diam_b * r.random_range(1.1..4.0);
        let mut pts: Vec<Vec<f64>> = (0..na).map(|i| vec![i as f64 / na as f64, 0.0]).collect();
        let b0 = 1.0 + gap;
        pts.extend((0..nb).map(|i| vec![b0 + diam_b * i as f64 / nb.max(2).saturating_sub(1).max(1) as f64, 0.0]));
        let cloud = PointCloud::new(NormedSpace::euclidean(2), pts).unwrap();
        let weights: Vec<f64> = (0..na + nb).map(|_| r.random_range(0.2..1.0) / na as f64).collect();
        let mu = DiscreteMeasure::new(Support::Cloud(cloud), weights).unwrap();
        let k = kernel::riesz_kernel(0, NormedSpace::euclidean(2)).unwrap();
        let op = SioOperator::new(&k, &mu).unwrap();
        let in_b: Vec<bool> = (0..na + nb).map(|i| i >= na).collect();
        let f: Vec<f64> = (0..na + nb).map(|_| r.random_range(-1.0..1.0)).collect();
        let lambdas: Vec<f64> = (0..12).map(|j| 10f64.powf(-2.0 + j as f64 * 0.4)).collect();
        let g = sio::glue_check(&op, &mu, &in_b, &f, &lambdas, None).unwrap();
        let intermediate = g.pointwise_b1_holds
            && g.pointwise_a2_holds
            && g.levels
                .iter()
                .all(|l| l.decomposition_holds && l.m_a1_holds && l.m_b2_holds && l.m_b1_holds && l.m_a2_holds);
        terms += g.levels.len() * 4;
        if !(g.pass && intermediate && g.dist_ab > g.diam_b) {
            fails.push(idx);
        }
    }
    check(fails.is_empty(), format!("20 configurations, {terms} term bounds, failures {fails:?}"))
}

fn c14_determinism() -> Outcome {
    let cfg = pipeline_config(128);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut digests = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let report = goodlambda::run_theorem_pipeline(&cfg).map_err(|e| e.to_string())?;
        let files = harness::emit_report(&report, &out, cfg.ensemble.seed, &Formats::default()).map_err(|e| e.to_string())?;
        let mut bytes = Vec::new();
        for f in &files {
            bytes.push((f.file_name().unwrap().to_owned(), std::fs::read(f).map_err(|e| e.to_string())?));
        }
        digests.push(bytes);
    }
    let same = digests[0] == digests[1];
    check(same, format!("{} files compared byte for byte", digests[0].len()))
}

fn main() {
    let mut s = Suite { failed: Vec::new() };
    let secs = Duration::from_secs;
    s.run(1, "Kuratowski isometry", Some(secs(5)), c1_kuratowski);
    s.run(2, "arc length by change of variables", Some(secs(1)), c2_arc_length);
    s.run(3, "metric derivative convergence", Some(secs(1)), c3_metric_derivative);
    s.run(4, "bilipschitz window and flatness", Some(secs(10)), c4_bilipschitz_flatness);
    s.run(5, "kernel certification", Some(secs(5)), c5_kernel_certification);
    s.run(6, "annular boundedness", Some(secs(10)), c6_annular);
    s.run(7, "UBL stability", Some(secs(60)), c7_ubl);
    let mut whitney_run = None;
    s.run(8, "Whitney exactness", Some(secs(120)), || {
        let wr = whitney_suite();
        let out = check(
            wr.failures.is_empty(),
            format!("{} decompositions, {} pieces, failures {:?}", wr.decompositions, wr.pieces, wr.failures),
        );
        whitney_run = Some(wr);
        out
    });
    let wr = whitney_run.expect("criterion 8 ran");
    s.run(9, "half-mass bound", None, || {
        check(
            wr.half_mass_failures.is_empty(),
            format!("{}/{} instances hold", wr.decompositions - wr.half_mass_failures.len(), wr.decompositions),
        )
    });
    let mut fine = None;
    s.run(10, "good-lambda inequality", Some(secs(300)), || {
        let r = goodlambda::run_theorem_pipeline(&pipeline_config(2048)).map_err(|e| e.to_string())?;
        let out = c10_goodlambda(&r);
        fine = Some(r);
        out
    });
    s.run(11, "L^p chain", None, || {
        let fine = fine.as_ref().ok_or("no N=2048 report")?;
        let coarse = goodlambda::run_theorem_pipeline(&pipeline_config(1024)).map_err(|e| e.to_string())?;
        c11_lp(&coarse, fine)
    });
    s.run(12, "tail bounds", None, c12_tails);
    s.run(13, "gluing", None, c13_glue);
    s.run(14, "determinism", None, c14_determinism);
    if s.failed.is_empty() {
        println!("acceptance: all 14 criteria pass");
    } else {
        println!("acceptance: failing criteria {:?}", s.failed);
        std::process::exit(1);
    }
}
