//! Semi-Riemannian metrics on a single chart with periodic coordinates.
//!
//! Spec file format:
//!
//! ```text
//! [manifold]
//! name = s2xr
//! coords = theta, phi, t
//! periods = phi: 2*pi
//! metric_index = 1          # number of negative directions
//! flip = phi: theta         # crossing a phi period negates theta (optional)
//!
//! [metric]
//! g.theta.theta = 1
//! g.phi.phi = sin(theta)^2
//! g.t.t = -1
//!
//! [killing]
//! t = 1
//!
//! [geodesic.equator]
//! x0 = pi/2, 0, 0
//! v0 = 0, 2*pi, 0
//! ```
//!
//! Metric entries not listed are zero; `g.i.j` and `g.j.i` denote the same
//! entry. Indices may be coordinate names or 0-based integers.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::{self, Mat};

/// How metric derivatives are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeRoute {
    Symbolic,
    FiniteDifference,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeodesicGuess {
    pub name: String,
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ManifoldSpec {
    pub name: String,
    pub coords: Vec<String>,
    pub periods: Vec<Option<f64>>,
    /// For each coordinate, the coordinates negated when it crosses one period.
    pub flips: Vec<Vec<usize>>,
    pub metric_index: Option<usize>,
    pub geodesics: Vec<GeodesicGuess>,
    metric: Vec<Vec<Expr>>,
    dmetric: Vec<Vec<Vec<Expr>>>,
    ddmetric: Vec<Vec<Vec<Vec<Expr>>>>,
    killing: Option<Vec<Expr>>,
    dkilling: Option<Vec<Vec<Expr>>>,
    route: DerivativeRoute,
    fd_step: f64,
}

/// Christoffel symbols Γ^k_ij (as `gamma[k][(i, j)]`) and their first
/// derivatives ∂_l Γ^k_ij (as `dgamma[l][k][(i, j)]`).
#[derive(Debug, Clone)]
pub struct Christoffel {
    pub gamma: Vec<Mat>,
    pub dgamma: Vec<Vec<Mat>>,
}

impl Christoffel {
    /// Γ(u, w)^k = Γ^k_ij uⁱ wʲ.
    pub fn contract(&self, u: &[f64], w: &[f64]) -> Vec<f64> {
        self.gamma
            .iter()
            .map(|g| {
                let mut s = 0.0;
                for i in 0..u.len() {
                    for j in 0..w.len() {
                        s += g[(i, j)] * u[i] * w[j];
                    }
                }
                s
            })
            .collect()
    }

    /// Matrix of w ↦ Γ(u, w).
    pub fn along(&self, u: &[f64]) -> Mat {
        let n = u.len();
        Mat::from_fn(n, n, |k, j| (0..n).map(|i| self.gamma[k][(i, j)] * u[i]).sum())
    }

    /// Riemann tensor R^a_{bcd} = ∂_c Γ^a_{db} − ∂_d Γ^a_{cb} + Γ^a_{ce}Γ^e_{db} − Γ^a_{de}Γ^e_{cb},
    /// flattened as index ((a·n + b)·n + c)·n + d.
    pub fn riemann(&self) -> Vec<f64> {
        let n = self.gamma.len();
        let mut r = vec![0.0; n * n * n * n];
        for a in 0..n {
            for bb in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let mut v = self.dgamma[c][a][(d, bb)] - self.dgamma[d][a][(c, bb)];
                        for e in 0..n {
                            v += self.gamma[a][(c, e)] * self.gamma[e][(d, bb)]
                                - self.gamma[a][(d, e)] * self.gamma[e][(c, bb)];
                        }
                        r[((a * n + bb) * n + c) * n + d] = v;
                    }
                }
            }
        }
        r
    }

    /// Tidal operator V ↦ R(V, v)v as a matrix: T^a_c = R^a_{bcd} v^b v^d.
    pub fn tidal(&self, v: &[f64]) -> Mat {
        let n = v.len();
        let r = self.riemann();
        Mat::from_fn(n, n, |a, c| {
            let mut s = 0.0;
            for bb in 0..n {
                for d in 0..n {
                    s += r[((a * n + bb) * n + c) * n + d] * v[bb] * v[d];
                }
            }
            s
        })
    }
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, column, message: message.into() }
}

/// A `key = value` line with positions.
struct Entry {
    key: String,
    value: String,
    line: usize,
    value_col: usize,
}

impl ManifoldSpec {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<(String, usize, Vec<Entry>)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let trimmed = content.trim();
            if trimmed.is_empty() {
                continue;
            }
            if trimmed.starts_with('[') {
                if !trimmed.ends_with(']') {
                    let col = raw.find('[').unwrap() + 1;
                    return Err(parse_err(line, col, "unterminated section header"));
                }
                let name = trimmed[1..trimmed.len() - 1].trim().to_string();
                sections.push((name, line, Vec::new()));
                continue;
            }
            let eq = content.find('=').ok_or_else(|| {
                parse_err(line, raw.len() - raw.trim_start().len() + 1, "expected 'key = value'")
            })?;
            let key = content[..eq].trim().to_string();
            let value_raw = &content[eq + 1..];
            let lead = value_raw.len() - value_raw.trim_start().len();
            let value_col = content[..eq + 1 + lead].chars().count() + 1;
            let entry = Entry { key, value: value_raw.trim().to_string(), line, value_col };
            match sections.last_mut() {
                Some(s) => s.2.push(entry),
                None => return Err(parse_err(line, 1, "entry outside of any section")),
            }
        }

        let manifold = sections
            .iter()
            .find(|s| s.0 == "manifold")
            .ok_or_else(|| parse_err(1, 1, "missing [manifold] section"))?;
        let mut name = String::from("unnamed");
        let mut coords: Option<Vec<String>> = None;
        let mut dim: Option<(usize, usize)> = None;
        let mut periods_entry: Option<&Entry> = None;
        let mut flip_entries: Vec<&Entry> = Vec::new();
        let mut metric_index = None;
        for e in &manifold.2 {
            match e.key.as_str() {
                "name" => name = e.value.clone(),
                "coords" => {
                    let c: Vec<String> = e.value.split(',').map(|s| s.trim().to_string()).collect();
                    for (i, cname) in c.iter().enumerate() {
                        let ok = cname.chars().next().map_or(false, |ch| ch.is_alphabetic() || ch == '_')
                            && cname.chars().all(|ch| ch.is_alphanumeric() || ch == '_');
                        if !ok || cname == "pi" {
                            return Err(parse_err(e.line, e.value_col, format!("invalid coordinate name #{i} '{cname}'")));
                        }
                    }
                    coords = Some(c);
                }
                "dim" => {
                    let d = e.value.parse::<usize>().map_err(|_| parse_err(e.line, e.value_col, "dim must be a positive integer"))?;
                    dim = Some((d, e.line));
                }
                "periods" => periods_entry = Some(e),
                "flip" => flip_entries.push(e),
                "metric_index" => {
                    metric_index = Some(
                        e.value
                            .parse::<usize>()
                            .map_err(|_| parse_err(e.line, e.value_col, "metric_index must be a nonnegative integer"))?,
                    )
                }
                other => return Err(parse_err(e.line, 1, format!("unknown key '{other}' in [manifold]"))),
            }
        }
        let coords = coords.ok_or_else(|| parse_err(manifold.1, 1, "[manifold] needs 'coords'"))?;
        let n = coords.len();
        if let Some((d, line)) = dim {
            if d != n {
                return Err(parse_err(line, 1, format!("dim = {d} but {n} coordinates declared")));
            }
        }
        let coord_index = |s: &str, line: usize, col: usize| -> Result<usize> {
            if let Some(i) = coords.iter().position(|c| c == s) {
                return Ok(i);
            }
            match s.parse::<usize>() {
                Ok(i) if i < n => Ok(i),
                _ => Err(parse_err(line, col, format!("unknown coordinate '{s}'"))),
            }
        };
        let constant = |src: &str, line: usize, col: usize| -> Result<f64> {
            let e = Expr::parse_at(src, &[], line, col)?;
            Ok(e.eval(&[]))
        };

        let mut periods = vec![None; n];
        if let Some(e) = periods_entry {
            for part in e.value.split(',') {
                let part = part.trim();
                if part.is_empty() {
                    continue;
                }
                let col = e.value_col + e.value.find(part).unwrap_or(0);
                let (c, p) = part
                    .split_once(':')
                    .ok_or_else(|| parse_err(e.line, col, "expected 'coord: period'"))?;
                let i = coord_index(c.trim(), e.line, col)?;
                let pv = constant(p.trim(), e.line, col + c.len() + 1)?;
                if !(pv > 0.0) {
                    return Err(parse_err(e.line, col, "period must be positive"));
                }
                periods[i] = Some(pv);
            }
        }
        let mut flips = vec![Vec::new(); n];
        for e in flip_entries {
            let (c, rest) = e
                .value
                .split_once(':')
                .ok_or_else(|| parse_err(e.line, e.value_col, "expected 'coord: flipped, coords'"))?;
            let i = coord_index(c.trim(), e.line, e.value_col)?;
            if periods[i].is_none() {
                return Err(parse_err(e.line, e.value_col, "flip requires a periodic coordinate"));
            }
            for f in rest.split(',') {
                flips[i].push(coord_index(f.trim(), e.line, e.value_col)?);
            }
        }

        let mut metric = vec![vec![Expr::Num(0.0); n]; n];
        let mut seen = vec![vec![false; n]; n];
        let metric_section = sections
            .iter()
            .find(|s| s.0 == "metric")
            .ok_or_else(|| parse_err(1, 1, "missing [metric] section"))?;
        for e in &metric_section.2 {
            let parts: Vec<&str> = e.key.split('.').collect();
            if parts.len() != 3 || parts[0] != "g" {
                return Err(parse_err(e.line, 1, format!("metric keys look like g.i.j, got '{}'", e.key)));
            }
            let i = coord_index(parts[1], e.line, 3)?;
            let j = coord_index(parts[2], e.line, 4 + parts[1].len())?;
            if seen[i][j] {
                return Err(parse_err(e.line, 1, format!("metric entry ({}, {}) given twice", coords[i], coords[j])));
            }
            let ex = Expr::parse_at(&e.value, &coords, e.line, e.value_col)?;
            metric[i][j] = ex.clone();
            metric[j][i] = ex;
            seen[i][j] = true;
            seen[j][i] = true;
        }

        let killing = match sections.iter().find(|s| s.0 == "killing") {
            None => None,
            Some(sec) => {
                let mut y = vec![Expr::Num(0.0); n];
                for e in &sec.2 {
                    let i = coord_index(&e.key, e.line, 1)?;
                    y[i] = Expr::parse_at(&e.value, &coords, e.line, e.value_col)?;
                }
                Some(y)
            }
        };

        let mut geodesics = Vec::new();
        for (sname, line, entries) in &sections {
            if let Some(gname) = sname.strip_prefix("geodesic.") {
                let mut x0 = None;
                let mut v0 = None;
                for e in entries {
                    let vals: Result<Vec<f64>> = {
                        let mut out = Vec::new();
                        let mut offset = 0;
                        for part in e.value.split(',') {
                            out.push(constant(part.trim(), e.line, e.value_col + offset)?);
                            offset += part.len() + 1;
                        }
                        Ok(out)
                    };
                    let vals = vals?;
                    if vals.len() != n {
                        return Err(parse_err(e.line, e.value_col, format!("expected {n} components, got {}", vals.len())));
                    }
                    match e.key.as_str() {
                        "x0" => x0 = Some(vals),
                        "v0" => v0 = Some(vals),
                        other => return Err(parse_err(e.line, 1, format!("unknown key '{other}' in [{sname}]"))),
                    }
                }
                let x0 = x0.ok_or_else(|| parse_err(*line, 1, format!("[{sname}] needs x0")))?;
                let v0 = v0.ok_or_else(|| parse_err(*line, 1, format!("[{sname}] needs v0")))?;
                geodesics.push(GeodesicGuess { name: gname.to_string(), x0, v0 });
            } else if !matches!(sname.as_str(), "manifold" | "metric" | "killing") {
                return Err(parse_err(*line, 1, format!("unknown section [{sname}]")));
            }
        }

        let mut spec = ManifoldSpec {
            name,
            coords,
            periods,
            flips,
            metric_index,
            geodesics,
            metric: Vec::new(),
            dmetric: Vec::new(),
            ddmetric: Vec::new(),
            killing: None,
            dkilling: None,
            route: DerivativeRoute::Symbolic,
            fd_step: 1e-6,
        };
        spec.set_metric(metric);
        spec.set_killing(killing);
        Ok(spec)
    }

    fn set_metric(&mut self, metric: Vec<Vec<Expr>>) {
        let n = metric.len();
        self.dmetric = (0..n)
            .map(|k| (0..n).map(|i| (0..n).map(|j| metric[i][j].diff(k)).collect()).collect())
            .collect();
        self.ddmetric = (0..n)
            .map(|l| {
                (0..n)
                    .map(|k| (0..n).map(|i| (0..n).map(|j| self.dmetric[k][i][j].diff(l)).collect()).collect())
                    .collect()
            })
            .collect();
        self.metric = metric;
    }

    fn set_killing(&mut self, killing: Option<Vec<Expr>>) {
        let n = self.dim();
        self.dkilling = killing
            .as_ref()
            .map(|y| (0..n).map(|i| (0..n).map(|k| y[i].diff(k)).collect()).collect());
        self.killing = killing;
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn has_killing(&self) -> bool {
        self.killing.is_some()
    }

    pub fn derivative_route(&self) -> DerivativeRoute {
        self.route
    }

    /// Same metric with derivatives taken by central differences of relative
    /// step `h` (1e-6 is the usual choice).
    pub fn with_finite_differences(&self, h: f64) -> Self {
        let mut s = self.clone();
        s.route = DerivativeRoute::FiniteDifference;
        s.fd_step = h;
        s
    }

    pub fn metric_expr(&self, i: usize, j: usize) -> &Expr {
        &self.metric[i][j]
    }

    pub fn metric(&self, x: &[f64]) -> Mat {
        let n = self.dim();
        Mat::from_fn(n, n, |i, j| self.metric[i][j].eval(x))
    }

    /// ∂_k g as `out[k]`.
    pub fn dmetric(&self, x: &[f64]) -> Vec<Mat> {
        let n = self.dim();
        match self.route {
            DerivativeRoute::Symbolic => (0..n)
                .map(|k| Mat::from_fn(n, n, |i, j| self.dmetric[k][i][j].eval(x)))
                .collect(),
            DerivativeRoute::FiniteDifference => (0..n)
                .map(|k| {
                    let h = self.fd_step * (1.0 + x[k].abs());
                    let mut xp = x.to_vec();
                    let mut xm = x.to_vec();
                    xp[k] += h;
                    xm[k] -= h;
                    (self.metric(&xp) - self.metric(&xm)) / (2.0 * h)
                })
                .collect(),
        }
    }

    /// ∂_l ∂_k g as `out[l][k]`.
    pub fn ddmetric(&self, x: &[f64]) -> Vec<Vec<Mat>> {
        let n = self.dim();
        match self.route {
            DerivativeRoute::Symbolic => (0..n)
                .map(|l| {
                    (0..n)
                        .map(|k| Mat::from_fn(n, n, |i, j| self.ddmetric[l][k][i][j].eval(x)))
                        .collect()
                })
                .collect(),
            DerivativeRoute::FiniteDifference => {
                // Four-point stencil on metric values at steps √h and √h/2,
                // Richardson-combined so the truncation error is fourth order.
                let mut out = vec![vec![Mat::zeros(n, n); n]; n];
                for l in 0..n {
                    for k in 0..n {
                        let stencil = |scale: f64| {
                            let hl = scale * self.fd_step.sqrt() * (1.0 + x[l].abs());
                            let hk = scale * self.fd_step.sqrt() * (1.0 + x[k].abs());
                            let at = |sl: f64, sk: f64| {
                                let mut y = x.to_vec();
                                y[l] += sl * hl;
                                y[k] += sk * hk;
                                self.metric(&y)
                            };
                            (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * hl * hk)
                        };
                        out[l][k] = (stencil(0.5) * 4.0 - stencil(1.0)) / 3.0;
                    }
                }
                out
            }
        }
    }

    pub fn metric_inverse(&self, x: &[f64]) -> Result<Mat> {
        let g = self.metric(x);
        let scale = 1.0 + g.norm();
        if linalg::min_singular(&g) < 1e-12 * scale {
            return Err(Error::SingularMetric { point: x.to_vec() });
        }
        linalg::inverse(&g).map_err(|_| Error::SingularMetric { point: x.to_vec() })
    }

    /// Γ^k_ij as `out[k][(i, j)]`, without derivatives.
    pub fn gamma(&self, x: &[f64]) -> Result<Vec<Mat>> {
        let n = self.dim();
        let gi = self.metric_inverse(x)?;
        let dg = self.dmetric(x);
        Ok((0..n)
            .map(|k| {
                Mat::from_fn(n, n, |i, j| {
                    (0..n).map(|m| gi[(k, m)] * 0.5 * (dg[i][(m, j)] + dg[j][(m, i)] - dg[m][(i, j)])).sum()
                })
            })
            .collect())
    }

    pub fn christoffel(&self, x: &[f64]) -> Result<Christoffel> {
        let n = self.dim();
        let gi = self.metric_inverse(x)?;
        let dg = self.dmetric(x);
        let ddg = self.ddmetric(x);
        // Γ_{m ij} = ½(∂_i g_mj + ∂_j g_mi − ∂_m g_ij), lowered first index.
        let lower = |dg: &[Mat]| -> Vec<Mat> {
            (0..n)
                .map(|m| Mat::from_fn(n, n, |i, j| 0.5 * (dg[i][(m, j)] + dg[j][(m, i)] - dg[m][(i, j)])))
                .collect()
        };
        let raise = |gi: &Mat, low: &[Mat]| -> Vec<Mat> {
            (0..n)
                .map(|k| {
                    let mut out = Mat::zeros(n, n);
                    for m in 0..n {
                        out += &low[m] * gi[(k, m)];
                    }
                    out
                })
                .collect()
        };
        let low = lower(&dg);
        let gamma = raise(&gi, &low);
        let dgamma = (0..n)
            .map(|l| {
                // ∂_l g⁻¹ = −g⁻¹ (∂_l g) g⁻¹
                let dgi = -(&gi * &dg[l] * &gi);
                let dlow: Vec<Mat> = lower(&(0..n).map(|k| ddg[l][k].clone()).collect::<Vec<_>>());
                let a = raise(&dgi, &low);
                let b = raise(&gi, &dlow);
                (0..n).map(|k| &a[k] + &b[k]).collect()
            })
            .collect();
        Ok(Christoffel { gamma, dgamma })
    }

    pub fn killing(&self, x: &[f64]) -> Option<DVector<f64>> {
        self.killing
            .as_ref()
            .map(|y| DVector::from_iterator(self.dim(), y.iter().map(|e| e.eval(x))))
    }

    /// ∂_k Yⁱ as matrix entry (i, k).
    pub fn killing_jacobian(&self, x: &[f64]) -> Option<Mat> {
        let n = self.dim();
        self.dkilling.as_ref().map(|d| Mat::from_fn(n, n, |i, k| d[i][k].eval(x)))
    }

    /// Frobenius norm of the Lie derivative L_Y g at x.
    pub fn killing_residual(&self, x: &[f64]) -> Option<f64> {
        let y = self.killing(x)?;
        let dy = self.killing_jacobian(x)?;
        let g = self.metric(x);
        let dg = self.dmetric(x);
        let n = self.dim();
        let mut lie = Mat::zeros(n, n);
        for k in 0..n {
            lie += &dg[k] * y[k];
        }
        lie += dy.transpose() * &g + &g * &dy;
        Some(lie.norm())
    }

    /// Probe points around the geodesic guesses (or the origin), spread
    /// over whole periods in periodic coordinates.
    pub fn probe_points(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = if self.geodesics.is_empty() {
            vec![vec![0.0; self.dim()]]
        } else {
            self.geodesics.iter().map(|g| g.x0.clone()).collect()
        };
        (0..count)
            .map(|i| {
                let c = &centers[i % centers.len()];
                (0..self.dim())
                    .map(|k| match self.periods[k] {
                        Some(p) => rng.gen_range(0.0..p),
                        None => c[k] + rng.gen_range(-0.2..0.2),
                    })
                    .collect()
            })
            .collect()
    }

    /// Checks invertibility, declared signature, Killing equation and
    /// timelike Killing field at probe points.
    pub fn validate(&self, probes: usize) -> Result<ValidationReport> {
        let mut report = ValidationReport::default();
        for x in self.probe_points(probes, 0x5eed) {
            let g = self.metric(&x);
            let ev = linalg::sym_eigenvalues(&g);
            let scale = 1.0 + g.norm();
            if ev.iter().any(|l| l.abs() < 1e-10 * scale) {
                return Err(Error::SingularMetric { point: x });
            }
            let neg = ev.iter().filter(|&&l| l < 0.0).count();
            if let Some(k) = self.metric_index {
                if neg != k {
                    return Err(Error::Spec(format!(
                        "metric has {neg} negative directions at {x:?}, declared {k}"
                    )));
                }
            }
            if let Some(r) = self.killing_residual(&x) {
                report.max_killing_residual = report.max_killing_residual.max(r);
                let y = self.killing(&x).unwrap();
                let yy = (y.transpose() * &g * &y)[(0, 0)];
                report.max_killing_norm = report.max_killing_norm.max(yy);
                if yy >= 0.0 {
                    return Err(Error::NotTimelike { point: x, value: yy });
                }
            }
            report.probes += 1;
        }
        if report.max_killing_residual > 1e-8 {
            return Err(Error::Spec(format!(
                "Killing equation residual {:.3e} exceeds 1e-8",
                report.max_killing_residual
            )));
        }
        Ok(report)
    }

    /// g_R(v, w) = g(v, w) − 2 g(v, Y) g(w, Y) / g(Y, Y), built symbolically.
    pub fn auxiliary_riemannian(&self) -> Result<ManifoldSpec> {
        let y = self
            .killing
            .as_ref()
            .ok_or_else(|| Error::Spec("auxiliary metric needs a Killing field".into()))?;
        for x in self.probe_points(32, 0xa11) {
            let g = self.metric(&x);
            let yv = self.killing(&x).unwrap();
            let yy = (yv.transpose() * &g * &yv)[(0, 0)];
            if yy >= 0.0 {
                return Err(Error::NotTimelike { point: x, value: yy });
            }
        }
        let n = self.dim();
        use Expr::*;
        let sum = |terms: Vec<Expr>| -> Expr {
            terms
                .into_iter()
                .filter(|t| !t.is_zero())
                .reduce(|a, b| Add(Box::new(a), Box::new(b)))
                .unwrap_or(Num(0.0))
        };
        let prod = |a: &Expr, b: &Expr| -> Expr {
            if a.is_zero() || b.is_zero() {
                Num(0.0)
            } else {
                Mul(Box::new(a.clone()), Box::new(b.clone()))
            }
        };
        let gy: Vec<Expr> = (0..n).map(|i| sum((0..n).map(|j| prod(&self.metric[i][j], &y[j])).collect())).collect();
        let yy = sum((0..n).map(|i| prod(&y[i], &gy[i])).collect());
        let metric: Vec<Vec<Expr>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let corr = prod(&gy[i], &gy[j]);
                        if corr.is_zero() {
                            self.metric[i][j].clone()
                        } else {
                            Sub(
                                Box::new(self.metric[i][j].clone()),
                                Box::new(Div(Box::new(Mul(Box::new(Num(2.0)), Box::new(corr))), Box::new(yy.clone()))),
                            )
                        }
                    })
                    .collect()
            })
            .collect();
        let mut out = self.clone();
        out.name = format!("{}-riemannian", self.name);
        out.metric_index = Some(0);
        out.set_metric(metric);
        Ok(out)
    }

    /// Reduces periodic coordinates into [0, period), applying declared
    /// flips to positions and velocities.
    pub fn wrap(&self, x: &mut [f64], v: &mut [f64]) {
        for k in 0..self.dim() {
            if let Some(p) = self.periods[k] {
                let m = (x[k] / p).floor();
                if m != 0.0 {
                    x[k] -= m * p;
                    if (m as i64).rem_euclid(2) == 1 {
                        for &f in &self.flips[k] {
                            x[f] = -x[f];
                            v[f] = -v[f];
                        }
                    }
                }
            }
        }
    }

    /// Compares (x1, v1) with (x0, v0) modulo periods. Returns the residual
    /// vector, the number of periods crossed per coordinate, and the
    /// differential of the identification (diagonal ±1).
    pub fn closure(&self, x0: &[f64], v0: &[f64], x1: &[f64], v1: &[f64]) -> Closure {
        let n = self.dim();
        let mut x = x1.to_vec();
        let mut v = v1.to_vec();
        let mut windings = vec![0i64; n];
        let mut sign = vec![1.0; n];
        for k in 0..n {
            if let Some(p) = self.periods[k] {
                let m = ((x[k] - x0[k]) / p).round();
                windings[k] = m as i64;
                x[k] -= m * p;
                if (m as i64).rem_euclid(2) == 1 {
                    for &f in &self.flips[k] {
                        sign[f] = -sign[f];
                    }
                }
            }
        }
        for k in 0..n {
            x[k] = if sign[k] < 0.0 { -x[k] } else { x[k] };
            v[k] *= sign[k];
        }
        let residual: Vec<f64> = (0..n).map(|k| x[k] - x0[k]).chain((0..n).map(|k| v[k] - v0[k])).collect();
        Closure { residual, windings, identification: sign }
    }

    pub fn geodesic(&self, name: &str) -> Result<&GeodesicGuess> {
        self.geodesics
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::Spec(format!("no geodesic named '{name}' in spec '{}'", self.name)))
    }

    /// Coordinate index along which the Killing field is largest at x.
    pub fn killing_time_coordinate(&self, x: &[f64]) -> Option<usize> {
        let y = self.killing(x)?;
        (0..self.dim()).max_by(|&a, &b| y[a].abs().partial_cmp(&y[b].abs()).unwrap())
    }
}

#[derive(Debug, Clone)]
pub struct Closure {
    pub residual: Vec<f64>,
    pub windings: Vec<i64>,
    /// Diagonal of the differential of the deck identification.
    pub identification: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub probes: usize,
    pub max_killing_residual: f64,
    /// Largest (least negative) value of g(Y, Y) seen.
    pub max_killing_norm: f64,
}

/// Loads every `[section] key = value` pair of a spec as raw strings; used by
/// tooling that wants to inspect a spec without building expressions.
pub fn raw_sections(text: &str) -> BTreeMap<String, Vec<(String, String)>> {
    let mut out: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    let mut current = String::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') && line.ends_with(']') {
            current = line[1..line.len() - 1].trim().to_string();
        } else if let Some((k, v)) = line.split_once('=') {
            out.entry(current.clone()).or_default().push((k.trim().into(), v.trim().into()));
        }
    }
    out
}
