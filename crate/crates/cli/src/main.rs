use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use symgeo::geodesic::{refine_closed, ClosedGeodesic, GeodesicOptions};
use symgeo::iteration::{iterate_analysis, morse_relations_check, nullity_partition};
use symgeo::linalg::Mat;
use symgeo::manifold::ManifoldSpec;
use symgeo::morse::{MorseContext, MorseOptions};
use symgeo::report::{self, InvariantCheck, Report};
use symgeo::selftest::{self, SelftestConfig};
use symgeo::transport::{jacobi_transfer, periodic_trivialization, PoincareMap, TrivializationOptions};

const DEFAULT_SEED: u64 = 20_240_917;

/// Maslov, Conley–Zehnder and Morse indices of closed geodesics.
///
/// Thread count follows RAYON_NUM_THREADS.
#[derive(Parser, Debug)]
#[command(name = "symgeo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Write the JSON report here (atomically) instead of stdout.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Print a human-readable rendering of the report to stderr.
    #[arg(long, global = true)]
    table: bool,
    /// Include wall-clock timings (makes reports non-reproducible).
    #[arg(long, global = true)]
    timings: bool,
}

#[derive(Args, Debug, Clone)]
struct Orbit {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    geodesic: String,
    /// Closing tolerance for the shooting refinement.
    #[arg(long, default_value_t = 1e-9)]
    closure_tol: f64,
    /// Relative zero band for Galerkin eigenvalues.
    #[arg(long, default_value_t = 1e-7)]
    zero_band: f64,
    /// Use finite-difference metric derivatives with this step.
    #[arg(long)]
    fd_step: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Randomized suites over forms and symplectic paths.
    Selftest {
        /// Smaller instance counts.
        #[arg(long)]
        quick: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Maslov index i_M of the N-th iterate.
    Maslov {
        #[command(flatten)]
        orbit: Orbit,
        #[arg(short = 'n', long, default_value_t = 1)]
        iterate: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Conley–Zehnder index of the linearized flow on the N-th iterate.
    Cz {
        #[command(flatten)]
        orbit: Orbit,
        #[arg(short = 'n', long, default_value_t = 1)]
        iterate: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Refine a closed geodesic and report closure, conservation and frame data.
    Geodesic {
        #[command(flatten)]
        orbit: Orbit,
        #[command(flatten)]
        common: Common,
    },
    /// Morse index, nullity and the index-theorem terms for the N-th iterate.
    Index {
        #[command(flatten)]
        orbit: Orbit,
        #[arg(short = 'n', long, default_value_t = 1)]
        iterate: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Index table for N = 1..N_max with iteration bounds and growth class.
    Iterate {
        #[command(flatten)]
        orbit: Orbit,
        #[arg(long, default_value_t = 16)]
        nmax: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Partition of the iterates by nullity from the Poincaré spectrum.
    Partition {
        #[arg(long, required_unless_present = "poincare")]
        spec: Option<PathBuf>,
        #[arg(long, required_unless_present = "poincare")]
        geodesic: Option<String>,
        /// JSON file {"rows": [[...], ...]} with a 2n×2n symplectic matrix.
        #[arg(long, conflicts_with_all = ["spec", "geodesic"])]
        poincare: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        nmax: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Check the Morse relations for index counts μ_k against Betti numbers β_k.
    MorseRelations {
        #[arg(long, value_delimiter = ',', required = true)]
        mu: Vec<u64>,
        #[arg(long, value_delimiter = ',', required = true)]
        beta: Vec<u64>,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_orbit(o: &Orbit) -> Result<(Arc<ManifoldSpec>, ClosedGeodesic)> {
    if !(o.closure_tol > 0.0 && o.zero_band > 0.0 && o.fd_step.map_or(true, |h| h > 0.0)) {
        bail!("tolerances must be positive");
    }
    let mut spec = ManifoldSpec::from_file(&o.spec).with_context(|| format!("reading {}", o.spec.display()))?;
    if let Some(h) = o.fd_step {
        spec = spec.with_finite_differences(h);
    }
    spec.validate(32).context("spec validation")?;
    let spec = Arc::new(spec);
    let guess = spec
        .geodesic(&o.geodesic)
        .with_context(|| format!("no geodesic named {:?} in {}", o.geodesic, o.spec.display()))?
        .clone();
    let opts = GeodesicOptions { closure_tol: o.closure_tol, ..GeodesicOptions::default() };
    let g = refine_closed(spec.clone(), &guess.x0, &guess.v0, &opts).context("geodesic: refining the closed orbit")?;
    Ok((spec, g))
}

fn orbit_inputs(o: &Orbit) -> Value {
    json!({
        "spec": o.spec.display().to_string(),
        "geodesic": o.geodesic,
        "closure_tol": o.closure_tol,
        "zero_band": o.zero_band,
        "fd_step": o.fd_step,
    })
}

fn morse_context(o: &Orbit, g: &ClosedGeodesic) -> Result<MorseContext> {
    let opts = MorseOptions { zero_band: o.zero_band, ..MorseOptions::default() };
    MorseContext::new(g, opts).context("morse: building the periodic frame")
}

fn run(command: Command) -> Result<bool> {
    let start = Instant::now();
    let (mut rep, common) = match command {
        Command::Selftest { quick, common } => {
            let cfg = if quick { SelftestConfig::quick(common.seed) } else { SelftestConfig::full(common.seed) };
            let r = selftest::run(cfg);
            let checks = r.checks();
            (Report::new("selftest", json!({ "quick": quick }), serde_json::to_value(&r)?, checks, common.seed), common)
        }
        Command::Maslov { orbit, iterate, common } => {
            let (_, g) = load_orbit(&orbit)?;
            let t = jacobi_transfer(periodic_trivialization(&g, TrivializationOptions::default())?)
                .context("transport: integrating the Jacobi flow")?;
            let m = t.maslov_iterate(iterate).context("symplectic: Maslov index")?;
            let checks = vec![
                InvariantCheck::exact("not-marginal", !m.detail.marginal),
                InvariantCheck::residual("symplectic-residual", t.symplectic_residual, 1e-8),
                InvariantCheck::residual("lagrangian-residual", t.lagrangian_residual, 1e-8),
            ];
            let mut inputs = orbit_inputs(&orbit);
            inputs["iterate"] = json!(iterate);
            (Report::new("maslov", inputs, serde_json::to_value(&m)?, checks, common.seed), common)
        }
        Command::Cz { orbit, iterate, common } => {
            let (_, g) = load_orbit(&orbit)?;
            let t = jacobi_transfer(periodic_trivialization(&g, TrivializationOptions::default())?)
                .context("transport: integrating the Jacobi flow")?;
            let d = t.cz_iterate(iterate).context("symplectic: Conley–Zehnder index")?;
            let checks = vec![
                InvariantCheck::exact("not-marginal", !d.marginal),
                InvariantCheck::residual("symplectic-residual", t.symplectic_residual, 1e-8),
            ];
            let mut inputs = orbit_inputs(&orbit);
            inputs["iterate"] = json!(iterate);
            (Report::new("cz", inputs, serde_json::to_value(&d)?, checks, common.seed), common)
        }
        Command::Geodesic { orbit, common } => {
            let (spec, g) = load_orbit(&orbit)?;
            let validation = spec.validate(32)?;
            let t = jacobi_transfer(periodic_trivialization(&g, TrivializationOptions::default())?)
                .context("transport: integrating the Jacobi flow")?;
            let s = g.summary();
            let mut checks = vec![
                InvariantCheck::residual("closure", s.closure_residual, orbit.closure_tol),
                InvariantCheck::residual("energy-drift", s.energy_drift, 1e-8),
                InvariantCheck::residual("poincare-symplectic", t.symplectic_residual, 1e-8),
            ];
            if let Some(k) = s.killing_drift {
                checks.push(InvariantCheck::residual("killing-drift", k, 1e-8));
            }
            for (name, r) in &t.fixed_vector_residuals {
                checks.push(InvariantCheck::residual(format!("fixed-vector:{name}"), *r, 1e-7));
            }
            let results = json!({
                "geodesic": s,
                "frame": t.frame.summary(),
                "poincare": t.poincare.rows(),
                "validation": validation,
                "derivative_route": spec.derivative_route(),
            });
            (Report::new("geodesic", orbit_inputs(&orbit), results, checks, common.seed), common)
        }
        Command::Index { orbit, iterate, common } => {
            let (_, g) = load_orbit(&orbit)?;
            let ctx = morse_context(&orbit, &g)?;
            let r = ctx.index_report(iterate).context("morse: index report")?;
            let checks = report::index_checks(&r, ctx.dim());
            let mut inputs = orbit_inputs(&orbit);
            inputs["iterate"] = json!(iterate);
            (Report::new("index", inputs, serde_json::to_value(&r)?, checks, common.seed), common)
        }
        Command::Iterate { orbit, nmax, common } => {
            let (_, g) = load_orbit(&orbit)?;
            let ctx = morse_context(&orbit, &g)?;
            let t = iterate_analysis(&ctx, nmax, common.timings).context("iteration: index table")?;
            let checks = report::iteration_checks(&t);
            let mut inputs = orbit_inputs(&orbit);
            inputs["nmax"] = json!(nmax);
            (Report::new("iterate", inputs, serde_json::to_value(&t)?, checks, common.seed), common)
        }
        Command::Partition { spec, geodesic, poincare, nmax, common } => {
            let (p, dim_m, inputs) = match poincare {
                Some(path) => {
                    let p = read_matrix(&path)?;
                    let n = p.dim();
                    (p, n, json!({ "poincare": path.display().to_string(), "nmax": nmax }))
                }
                None => {
                    let orbit = Orbit {
                        spec: spec.expect("clap enforces --spec"),
                        geodesic: geodesic.expect("clap enforces --geodesic"),
                        closure_tol: 1e-9,
                        zero_band: 1e-7,
                        fd_step: None,
                    };
                    let (_, g) = load_orbit(&orbit)?;
                    let t = jacobi_transfer(periodic_trivialization(&g, TrivializationOptions::default())?)?;
                    let mut inputs = orbit_inputs(&orbit);
                    inputs["nmax"] = json!(nmax);
                    (t.poincare.clone(), g.dim(), inputs)
                }
            };
            let part = nullity_partition(&p, dim_m, nmax).context("iteration: nullity partition")?;
            let checks = report::partition_checks(&part, p.symplectic_residual());
            (Report::new("partition", inputs, serde_json::to_value(&part)?, checks, common.seed), common)
        }
        Command::MorseRelations { mu, beta, common } => {
            let r = morse_relations_check(&mu, &beta);
            let checks = report::morse_relations_checks(&r);
            let inputs = json!({ "mu": mu, "beta": beta });
            (Report::new("morse-relations", inputs, serde_json::to_value(&r)?, checks, common.seed), common)
        }
    };
    if common.timings {
        rep.timings = Some(json!({ "wall_seconds": start.elapsed().as_secs_f64() }));
    }
    let text = rep.to_json();
    match &common.output {
        Some(path) => write_atomic(path, &text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    if common.table {
        eprint!("{}", render_table(&serde_json::from_str(&text)?));
    }
    Ok(rep.all_hold())
}

fn read_matrix(path: &Path) -> Result<PoincareMap> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let rows: Vec<Vec<f64>> = serde_json::from_value(v["rows"].clone()).context("expected {\"rows\": [[...]]}")?;
    let n = rows.len();
    if n == 0 || n % 2 != 0 || rows.iter().any(|r| r.len() != n) {
        bail!("Poincaré map must be a square matrix of even size, got {n} rows");
    }
    Ok(PoincareMap::new(Mat::from_fn(n, n, |i, j| rows[i][j])))
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

/// Flattened key/value view of the report, derived only from its JSON.
fn render_table(v: &Value) -> String {
    let mut out = String::new();
    out.push_str(&format!("command: {}\n", v["command"].as_str().unwrap_or("?")));
    let mut rows = Vec::new();
    flatten("", &v["results"], &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0).min(48);
    for (k, val) in rows {
        out.push_str(&format!("  {k:width$}  {val}\n"));
    }
    out.push_str("checks:\n");
    for c in v["invariant_checks"].as_array().into_iter().flatten() {
        let mark = if c["holds"].as_bool() == Some(true) { "ok  " } else { "FAIL" };
        let margin = c["margin"].as_f64().map(|m| format!(" (margin {m:.2})")).unwrap_or_default();
        out.push_str(&format!("  {mark} {}{margin}\n", c["name"].as_str().unwrap_or("?")));
    }
    out
}

fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, rows);
            }
        }
        Value::Array(a) if a.iter().any(|x| x.is_object()) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), x, rows);
            }
        }
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}
