//! Experiment configuration, report emission and the command-line front end.
//!
//! Output conventions:
//! - JSON is UTF-8 with keys sorted at every level and a trailing newline.
//! - CSV follows RFC 4180 with LF line endings; floats use the shortest
//!   round-trip decimal form. Each table's first column is the run seed.
//! - Plot data is whitespace-separated two-column text headed by `# seed:`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::curve::{self, CurveSpec, SampledCurve};
use crate::error::{Error, Result};
use crate::goodlambda::{self, GoodLambdaRow, PipelineConfig, PipelineReport};
use crate::kernel::{self, KernelSpec, ProbeSet};
use crate::sio::{self, SioOperator};
use crate::space::{self, DiscreteMeasure, FiniteMetricSpace, Metric, NormKind, Support};
use crate::whitney;

/// Which files a run writes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formats {
    #[serde(default = "yes")]
    pub json: bool,
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub dat: bool,
}

fn yes() -> bool {
    true
}

impl Default for Formats {
    fn default() -> Self {
        Formats {
            json: true,
            csv: true,
            dat: true,
        }
    }
}

fn default_name() -> String {
    "pipeline".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A named pipeline run. The pipeline fields sit at the top level, so a bare
/// pipeline config is also a valid experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Overrides `ensemble.seed` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub formats: Formats,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(self.pipeline.ensemble.seed)
    }

    /// Pipeline config with the experiment seed applied.
    pub fn resolved(&self) -> PipelineConfig {
        let mut p = self.pipeline.clone();
        p.ensemble.seed = self.effective_seed();
        p
    }
}

/// Reads and parses a JSON input; unreadable or malformed inputs are
/// validation errors, not internal ones.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// JSON with sorted keys, two-space indent and a trailing newline.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// RFC 4180 CSV with LF line endings.
pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

/// Two-column gnuplot data with a seed and a column header comment.
pub fn dat_string(seed: u64, columns: (&str, &str), points: &[(f64, f64)]) -> String {
    let mut s = format!("# seed: {seed}\n# {} {}\n", columns.0, columns.1);
    for (x, y) in points {
        s.push_str(&format!("{} {}\n", num(*x), num(*y)));
    }
    s
}

fn num(v: f64) -> String {
    // normalizes -0
    format!("{}", if v == 0.0 { 0.0 } else { v })
}

pub const SWEEP_HEADER: [&str; 10] = ["seed", "f", "λ", "ε", "δ", "θ", "ν(Ω_λ)", "ν(bad)", "(1-θ/4)ν(Ω_λ)", "pass"];

/// Sweep rows sorted ascending in `lambda`, then by function and `eps`.
pub fn sweep_csv(seed: u64, theta: f64, rows: &[GoodLambdaRow]) -> Result<String> {
    let mut sorted: Vec<&GoodLambdaRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.lambda
            .total_cmp(&b.lambda)
            .then(a.function.cmp(&b.function))
            .then(b.eps.total_cmp(&a.eps))
    });
    let out: Vec<Vec<String>> = sorted
        .iter()
        .map(|r| {
            vec![
                seed.to_string(),
                r.function.to_string(),
                num(r.lambda),
                num(r.eps),
                num(r.delta),
                num(theta),
                num(r.omega_mass),
                num(r.bad_mass),
                num(r.bound),
                r.pass.to_string(),
            ]
        })
        .collect();
    csv_string(&SWEEP_HEADER, &out)
}

fn write(dir: &Path, name: &str, body: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body)?;
    written.push(path);
    Ok(())
}

/// Writes the pipeline report into `dir` and returns the written paths.
pub fn emit_report(report: &PipelineReport, dir: &Path, seed: u64, formats: &Formats) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let gl = &report.goodlambda;
    if formats.json {
        write(dir, "report.json", &to_sorted_json(report)?, &mut written)?;
    }
    if formats.csv {
        write(dir, "goodlambda.csv", &sweep_csv(seed, gl.theta, &gl.rows)?, &mut written)?;
        let lp: Vec<Vec<String>> = gl
            .lp
            .iter()
            .map(|l| {
                let opt = |v: Option<f64>| v.map_or(String::new(), num);
                vec![
                    seed.to_string(),
                    num(l.p),
                    num(gl.theta),
                    num(l.threshold),
                    l.feasible.to_string(),
                    opt(l.a_p),
                    opt(l.a_p_certified),
                    num(l.realized),
                ]
            })
            .collect();
        write(
            dir,
            "lp.csv",
            &csv_string(&["seed", "p", "θ", "ε_max", "feasible", "A_p", "A_p certified", "‖T_*f‖_p/‖f‖_p"], &lp)?,
            &mut written,
        )?;
        let wh: Vec<Vec<String>> = report
            .whitney
            .iter()
            .map(|s| {
                vec![
                    seed.to_string(),
                    num(s.lambda),
                    s.omega_points.to_string(),
                    s.pieces.to_string(),
                    s.overlap.to_string(),
                    num(s.b),
                    s.i1.to_string(),
                    s.half_mass.to_string(),
                    s.properties_pass.to_string(),
                ]
            })
            .collect();
        write(
            dir,
            "whitney.csv",
            &csv_string(&["seed", "λ", "#Ω_λ", "#U_i", "C_D", "b", "#I₁", "half mass", "properties"], &wh)?,
            &mut written,
        )?;
        let cs: Vec<Vec<String>> = report
            .constants
            .iter()
            .map(|c| vec![seed.to_string(), c.symbol.clone(), num(c.value), c.stage.clone(), c.source.clone()])
            .collect();
        write(dir, "constants.csv", &csv_string(&["seed", "symbol", "value", "stage", "source"], &cs)?, &mut written)?;
    }
    if formats.dat {
        let mut f0: Vec<&GoodLambdaRow> = gl.rows.iter().filter(|r| r.function == 0).collect();
        f0.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        let mut level: Vec<(f64, f64)> = f0.iter().map(|r| (r.lambda, r.omega_mass)).collect();
        level.dedup();
        write(dir, "level_mass.dat", &dat_string(seed, ("λ", "ν(Ω_λ)"), &level), &mut written)?;
        for (j, &eps) in gl.eps.iter().enumerate() {
            let pts: Vec<(f64, f64)> = f0.iter().filter(|r| r.eps == eps).map(|r| (r.lambda, r.bad_mass)).collect();
            write(
                dir,
                &format!("bad_mass_{j}.dat"),
                &dat_string(seed, ("λ", &format!("ν(bad), ε={eps}")), &pts),
                &mut written,
            )?;
        }
    }
    Ok(written)
}

/// Applies `CZCURVE_THREADS` to the global rayon pool (`0` or unset = auto).
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("CZCURVE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("CZCURVE_THREADS must be a nonnegative integer, got {v:?}")))?;
    if n > 0 {
        // a pool that is already built keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "czcurve", version, about = "Singular integrals on curves and metric spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Kuratowski embedding of a finite metric space into l^inf.
    Embed {
        /// Metric space JSON: {"points": [...], "dist": [[...]]}.
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Injectivity, derivative metadata, bilipschitz window and flatness of a curve.
    CurveCheck {
        #[command(flatten)]
        curve: CurveArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Growth, Hölder and homogeneity certificate of a kernel.
    KernelCheck {
        #[command(flatten)]
        kernel: KernelArgs,
        /// Probe seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Truncated and maximal singular integrals of f on a curve or measure.
    SioEval {
        #[command(flatten)]
        curve: CurveArgs,
        /// Measure JSON; replaces the curve when given.
        #[arg(long)]
        measure: Option<PathBuf>,
        #[command(flatten)]
        kernel: KernelArgs,
        /// JSON array of samples of f on the support; f = 1 when absent.
        #[arg(long)]
        f: Option<PathBuf>,
        /// Truncation radii for the per-ε columns.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.1, 0.02])]
        eps: Vec<f64>,
        /// Output directory for sio.csv and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Christ cubes and the Whitney decomposition of an open subset.
    Whitney {
        /// Metric space or point cloud JSON.
        #[arg(long)]
        space: PathBuf,
        /// JSON array of point indices, or of booleans, marking Omega.
        #[arg(long)]
        omega: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Good-lambda sweep over the quantiles of T_* f.
    Goodlambda {
        /// JSON {"weights": [...], "t_star": [...], "maximal": [...]}.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.0625])]
        eps: Vec<f64>,
        #[arg(long)]
        theta: f64,
        /// Fixed delta; otherwise derived from --c, --cd and --cp.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        cd: Option<f64>,
        #[arg(long)]
        cp: Option<f64>,
        #[arg(long, default_value_t = 50)]
        quantiles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for goodlambda.csv and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// End-to-end run from an experiment config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary of a pipeline report directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct CurveArgs {
    /// Curve JSON file.
    #[arg(long, conflicts_with = "shape")]
    curve: Option<PathBuf>,
    /// Built-in curve: a name (line, circle, helix, figure_eight,
    /// perturbed_graph) or an inline JSON spec.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long, default_value_t = 512)]
    samples: usize,
    /// l^p exponent of the ambient norm; `inf` for the sup-norm.
    #[arg(long, default_value_t = 2.0)]
    norm_p: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

impl CurveArgs {
    fn load(&self) -> Result<SampledCurve> {
        if let Some(p) = &self.curve {
            let f: curve::CurveFile = read_json(p)?;
            return SampledCurve::from_file(f);
        }
        let shape = self.shape.as_deref().unwrap_or("circle");
        let spec: CurveSpec = if shape.trim_start().starts_with('{') {
            serde_json::from_str(shape).map_err(|e| Error::invalid(format!("--shape: {e}")))?
        } else {
            match shape {
                "line" => CurveSpec::Line {
                    direction: vec![1.0, 0.0],
                },
                "circle" => CurveSpec::Circle { radius: 1.0 },
                "helix" => CurveSpec::Helix { pitch: 1.0, turns: 1.0 },
                "figure_eight" => CurveSpec::FigureEight,
                "perturbed_graph" => CurveSpec::PerturbedGraph {
                    eps: 0.1,
                    modes: 4,
                    seed: 0,
                },
                other => return Err(Error::invalid(format!("unknown curve {other:?}"))),
            }
        };
        let norm = if self.norm_p.is_finite() {
            NormKind::P { p: self.norm_p }
        } else {
            NormKind::Sup
        };
        spec.sample(self.samples, norm)
    }
}

#[derive(Debug, Args)]
struct KernelArgs {
    /// hilbert, riesz, dual_riesz, inverse_norm, zero or expr.
    #[arg(long, default_value = "riesz")]
    kind: String,
    /// 1-based coordinate of the Riesz kernel.
    #[arg(long, default_value_t = 1)]
    coord: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// l^p exponent of the kernel's norm; `inf` for the sup-norm.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Dual vector of the dual Riesz kernel.
    #[arg(long, value_delimiter = ',')]
    y: Vec<f64>,
    /// Expression source for `--kind expr`.
    #[arg(long)]
    expr: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Declared size constant of an expression kernel.
    #[arg(long)]
    b: Option<f64>,
}

impl KernelArgs {
    fn spec(&self) -> Result<KernelSpec> {
        Ok(match self.kind.as_str() {
            "hilbert" => KernelSpec::Hilbert,
            "riesz" => KernelSpec::Riesz {
                coord: self.coord,
                dim: self.dim,
                p: self.p,
            },
            "dual_riesz" => KernelSpec::DualRiesz {
                y: self.y.clone(),
                p: self.p,
            },
            "inverse_norm" => KernelSpec::InverseNorm { dim: self.dim, p: self.p },
            "zero" => KernelSpec::Zero { dim: self.dim },
            "expr" => KernelSpec::Expr {
                expr: self.expr.clone().ok_or_else(|| Error::invalid("--kind expr needs --expr"))?,
                dim: self.dim,
                p: self.p,
                beta: self.beta,
                b: self.b,
            },
            other => return Err(Error::invalid(format!("unknown kernel kind {other:?}"))),
        })
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OmegaFile {
    Indices(Vec<usize>),
    Mask(Vec<bool>),
}

#[derive(Deserialize)]
struct LevelInput {
    weights: Vec<f64>,
    t_star: Vec<f64>,
    maximal: Vec<f64>,
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let s = to_sorted_json(value)?;
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, s)?;
        }
        None => print!("{s}"),
    }
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Embed { space, out } => {
            let m: FiniteMetricSpace = read_json(&space)?;
            let cloud = space::kuratowski_embed(&m);
            let err = (0..m.len())
                .flat_map(|i| (0..m.len()).map(move |j| (i, j)))
                .map(|(i, j)| (cloud.dist(i, j) - m.dist(i, j)).abs())
                .fold(0.0, f64::max);
            emit_json(
                &serde_json::json!({ "embedding": cloud, "max_distance_error": err }),
                out.as_deref(),
            )
        }
        Command::CurveCheck { curve: args, out } => {
            let c = args.load()?;
            c.check_injective()?;
            let meta = curve::CurveMetadata::fit(&c, args.alpha)?;
            let audit = curve::bilipschitz_audit(&c, &meta);
            let flat = curve::flatness_check(&c, &meta);
            let length = curve::curve_integral(&c, |_| 1.0)?;
            emit_json(
                &serde_json::json!({
                    "samples": c.len(),
                    "closed": c.is_closed(),
                    "length": length,
                    "metadata": meta,
                    "bilipschitz": audit,
                    "flatness": flat,
                }),
                out.as_deref(),
            )
        }
        Command::KernelCheck { kernel: args, seed, out } => {
            let spec = args.spec()?;
            let k = spec.build()?;
            let probes = ProbeSet::standard(&k.space, seed);
            let growth = kernel::verify_growth(&k, &probes)?;
            let holder = kernel::verify_holder(&k, &probes)?;
            let homogeneity = kernel::homogeneity_defect(&k, &probes, &[0.5, 2.0, 10.0]);
            emit_json(
                &serde_json::json!({
                    "kernel": spec,
                    "name": k.name(),
                    "seed": seed,
                    "n": k.n,
                    "beta": k.beta,
                    "b": k.b,
                    "growth": growth,
                    "holder": holder,
                    "homogeneity_defect": homogeneity,
                    "pass": growth.pass && holder.pass,
                }),
                out.as_deref(),
            )
        }
        Command::SioEval {
            curve: cargs,
            measure,
            kernel: kargs,
            f,
            eps,
            out,
        } => {
            let mu = match &measure {
                Some(p) => DiscreteMeasure::load(p).map_err(input_error)?,
                None => curve::discretize_h1(&cargs.load()?)?,
            };
            let k = kargs.spec()?.build()?;
            let op = SioOperator::new(&k, &mu)?;
            let f: Vec<f64> = match &f {
                Some(p) => read_json(p)?,
                None => vec![1.0; mu.len()],
            };
            if f.len() != mu.len() {
                return Err(Error::invalid(format!("f has {} samples, support has {}", f.len(), mu.len())));
            }
            let ev = op.evaluate(std::slice::from_ref(&f))?;
            let mf = op.maximal_function(std::slice::from_ref(&f))?.remove(0);
            let cols: Vec<Vec<f64>> = eps.iter().map(|&e| op.truncated_all(&f, e)).collect::<Result<_>>()?;
            let mut rows = Vec::with_capacity(mu.len() * eps.len());
            for i in 0..mu.len() {
                for (j, &e) in eps.iter().enumerate() {
                    rows.push(vec![
                        i.to_string(),
                        num(e),
                        num(cols[j][i]),
                        num(ev.t_star[0][i]),
                        num(mf[i]),
                    ]);
                }
            }
            fs::create_dir_all(&out)?;
            fs::write(out.join("sio.csv"), csv_string(&["x", "ε", "T_ε f", "T_* f", "M f"], &rows)?)?;
            let w = mu.weights();
            let l1 = sio::l1_norm(&f, w);
            let weak = |v: &[f64]| if l1 > 0.0 { sio::weak11_constant(v, w, l1).ok() } else { None };
            emit_json(
                &serde_json::json!({
                    "support_points": mu.len(),
                    "exact": ev.exact,
                    "f_l1": l1,
                    "weak11_t_star": weak(&ev.t_star[0]),
                    "weak11_maximal": weak(&mf),
                    "eps": eps,
                }),
                Some(&out.join("summary.json")),
            )
        }
        Command::Whitney { space, omega, out } => {
            let support: Support = read_json(&space)?;
            let n = support.len();
            let mask = match read_json::<OmegaFile>(&omega)? {
                OmegaFile::Mask(m) => m,
                OmegaFile::Indices(ix) => {
                    let mut m = vec![false; n];
                    for i in ix {
                        *m.get_mut(i).ok_or_else(|| Error::invalid(format!("omega index {i} out of range")))? = true;
                    }
                    m
                }
            };
            if mask.len() != n {
                return Err(Error::invalid(format!("omega mask has {} entries, space has {n}", mask.len())));
            }
            let (k_min, k_max) = whitney::default_scale_range(&support);
            let tree = whitney::christ_cubes(&support, k_min, k_max)?;
            let wd = whitney::whitney_decompose(&tree, &mask)?;
            let nu = DiscreteMeasure::counting(support);
            let cls = whitney::classify_doubling(&wd, &nu, None)?;
            emit_json(
                &serde_json::json!({
                    "cubes": {
                        "k_min": tree.k_min,
                        "k_max": tree.k_max,
                        "ordering": tree.ordering,
                        "checks": tree.checks,
                        "per_level": tree.levels.iter().map(|l| l.centers.len()).collect::<Vec<_>>(),
                    },
                    "decomposition": wd,
                    "classification": cls,
                    "pass": wd.pass() && cls.half_mass,
                }),
                out.as_deref(),
            )
        }
        Command::Goodlambda {
            input,
            eps,
            theta,
            delta,
            c,
            cd,
            cp,
            quantiles,
            seed,
            out,
        } => {
            let li: LevelInput = read_json(&input)?;
            let n = li.weights.len();
            if li.t_star.len() != n || li.maximal.len() != n {
                return Err(Error::invalid("weights, t_star and maximal must have equal length"));
            }
            if !(theta > 0.0 && theta < 1.0) {
                return Err(Error::invalid("theta must lie in (0, 1)"));
            }
            let pairs: Vec<(f64, f64)> = eps
                .iter()
                .map(|&e| match (delta, c, cd, cp) {
                    (Some(d), ..) => Ok((e, d)),
                    (None, Some(c), Some(cd), Some(cp)) => Ok((e, goodlambda::delta_from_epsilon(e, theta, c, cd, cp)?)),
                    _ => Err(Error::invalid("give --delta or all of --c, --cd, --cp")),
                })
                .collect::<Result<_>>()?;
            let lambdas = goodlambda::lambda_grid(&li.weights, &li.t_star, quantiles);
            let rows = goodlambda::goodlambda_sweep(&li.weights, &li.t_star, &li.maximal, &lambdas, &pairs, theta);
            fs::create_dir_all(&out)?;
            fs::write(out.join("goodlambda.csv"), sweep_csv(seed, theta, &rows)?)?;
            let everywhere: Vec<bool> = pairs
                .iter()
                .map(|&(e, d)| goodlambda::goodlambda_holds_everywhere(&li.weights, &li.t_star, &li.maximal, e, d, theta))
                .collect();
            emit_json(
                &serde_json::json!({
                    "seed": seed,
                    "theta": theta,
                    "eps": eps,
                    "delta": pairs.iter().map(|p| p.1).collect::<Vec<_>>(),
                    "rows": rows.len(),
                    "violations": rows.iter().filter(|r| !r.pass).count(),
                    "holds_everywhere": everywhere,
                }),
                Some(&out.join("summary.json")),
            )
        }
        Command::Pipeline { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = goodlambda::run_theorem_pipeline(&cfg.resolved())?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let written = emit_report(&report, &dir, cfg.effective_seed(), &cfg.formats)?;
            for p in written {
                println!("{}", p.display());
            }
            if report.pass {
                Ok(())
            } else {
                Err(Error::HypothesisViolated(format!(
                    "pipeline checks failed; see {}",
                    dir.join("report.json").display()
                )))
            }
        }
        Command::Report { dir } => {
            let r: PipelineReport = read_json(&dir.join("report.json"))?;
            print!("{}", summary(&r));
            Ok(())
        }
    }
}

fn input_error(e: Error) -> Error {
    match e {
        Error::Io(e) => Error::invalid(e.to_string()),
        Error::Json(e) => Error::invalid(e.to_string()),
        other => other,
    }
}

/// Plain-text digest of a pipeline report.
pub fn summary(r: &PipelineReport) -> String {
    let gl = &r.goodlambda;
    let mut s = String::new();
    let ok = |b: bool| if b { "pass" } else { "FAIL" };
    s.push_str(&format!("pipeline: {}\n", ok(r.pass)));
    s.push_str(&format!(
        "curve: {} samples, closed={}, {}\n",
        r.curve.samples,
        r.curve.closed,
        ok(r.curve.pass)
    ));
    s.push_str(&format!(
        "big pieces: θ={} over {} selections, {}\n",
        r.big_pieces.theta,
        r.big_pieces.selections,
        ok(r.big_pieces.pass)
    ));
    s.push_str(&format!(
        "sio: {} points, C_K={}, C_ν={}, weak(1,1) of T_* {}\n",
        r.sio.support_points, r.sio.c_k, r.sio.c_nu, r.sio.weak_t
    ));
    for w in &r.whitney {
        s.push_str(&format!(
            "whitney λ={}: {} pieces, C_D={}, half mass {}\n",
            w.lambda,
            w.pieces,
            w.overlap,
            ok(w.half_mass)
        ));
    }
    s.push_str(&format!(
        "good lambda: {} rows, {} violations, {} off-grid\n",
        gl.rows.len(),
        gl.violations,
        gl.everywhere_violations
    ));
    for l in &gl.lp {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), num);
        s.push_str(&format!(
            "L^{}: ε_max={}, A_p={}, certified A_p={}\n",
            l.p,
            l.threshold,
            opt(l.a_p),
            opt(l.a_p_certified)
        ));
    }
    s
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return 1;
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_internal() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_lf_and_quotes() {
        let s = csv_string(&["a", "b"], &[vec!["1".into(), "x,y".into()]]).unwrap();
        assert_eq!(s, "a,b\n1,\"x,y\"\n");
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let s = sweep_csv(3, 0.5, &[]).unwrap();
        assert_eq!(s.lines().count(), 1);
        assert!(s.starts_with("seed,f,λ,ε,δ,θ,ν(Ω_λ)"));
    }

    #[test]
    fn json_keys_sorted() {
        let v = serde_json::json!({"b": 1, "a": {"d": 2, "c": 3}});
        let s = to_sorted_json(&v).unwrap();
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        assert!(s.find("\"c\"").unwrap() < s.find("\"d\"").unwrap());
        assert!(s.ends_with('\n'));
    }

    #[test]
    fn dat_header_carries_seed() {
        let s = dat_string(42, ("λ", "m"), &[(1.0, 0.5)]);
        assert_eq!(s, "# seed: 42\n# λ m\n1 0.5\n");
    }
}
