//! Geodesic integration and Newton refinement of closed geodesics.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::manifold::ManifoldSpec;
use crate::ode::{dopri5, DenseSolution, OdeOptions};

/// Relative drift allowed in g(γ̇, γ̇) and g(γ̇, Y).
pub const DRIFT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct GeodesicOptions {
    pub ode: OdeOptions,
    pub closure_tol: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        GeodesicOptions {
            ode: OdeOptions { rtol: 1e-12, atol: 1e-13, ..OdeOptions::default() },
            closure_tol: 1e-9,
            max_iterations: 25,
            fd_step: 1e-7,
        }
    }
}

/// Right-hand side of the geodesic equation on (x, v).
pub fn geodesic_rhs(spec: &ManifoldSpec, y: &[f64], dy: &mut [f64]) -> Result<()> {
    let n = spec.dim();
    let (x, v) = y.split_at(n);
    let gamma = spec.gamma(x)?;
    dy[..n].copy_from_slice(v);
    for k in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += gamma[k][(i, j)] * v[i] * v[j];
            }
        }
        dy[n + k] = -s;
    }
    Ok(())
}

fn quadratic(g: &Mat, a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += g[(i, j)] * a[i] * b[j];
        }
    }
    s
}

fn abs_quadratic(g: &Mat, a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += (g[(i, j)] * a[i] * b[j]).abs();
        }
    }
    s
}

/// An integrated geodesic segment with its first integrals.
#[derive(Debug, Clone)]
pub struct Trajectory {
    sol: DenseSolution,
    dim: usize,
    pub energy: f64,
    pub energy_drift: f64,
    pub c_gamma: Option<f64>,
    pub killing_drift: Option<f64>,
}

impl Trajectory {
    pub fn state(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let mut y = self.sol.eval(t);
        let v = y.split_off(self.dim);
        (y, v)
    }

    pub fn start(&self) -> f64 {
        self.sol.start()
    }

    pub fn end(&self) -> f64 {
        self.sol.end()
    }

    pub fn steps(&self) -> usize {
        self.sol.step_count()
    }
}

/// Integrates the geodesic through (x0, v0) over [t0, t1] and checks that
/// g(γ̇, γ̇) and, when a Killing field is present, g(γ̇, Y) are conserved to
/// `DRIFT_TOL` relative.
pub fn integrate_geodesic(
    spec: &ManifoldSpec,
    x0: &[f64],
    v0: &[f64],
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
) -> Result<Trajectory> {
    let n = spec.dim();
    if x0.len() != n || v0.len() != n {
        return Err(Error::Dimension(format!("initial data must have {n} components")));
    }
    let y0: Vec<f64> = x0.iter().chain(v0).cloned().collect();
    let sol = dopri5(|_, y, dy| geodesic_rhs(spec, y, dy), t0, t1, &y0, opts)?;
    let mut traj = Trajectory { sol, dim: n, energy: 0.0, energy_drift: 0.0, c_gamma: None, killing_drift: None };

    let g0 = spec.metric(x0);
    let e0 = quadratic(&g0, v0, v0);
    let e_scale = abs_quadratic(&g0, v0, v0).max(f64::MIN_POSITIVE);
    let c0 = spec.killing(x0).map(|y| quadratic(&g0, v0, y.as_slice()));
    let c_scale = spec
        .killing(x0)
        .map(|y| abs_quadratic(&g0, v0, y.as_slice()).max(abs_quadratic(&g0, y.as_slice(), y.as_slice()).sqrt() * e_scale.sqrt()));
    let mut times = traj.sol.mesh();
    times.extend((0..=64).map(|i| t0 + (t1 - t0) * i as f64 / 64.0));
    let mut e_drift: f64 = 0.0;
    let mut c_drift: f64 = 0.0;
    for &t in &times {
        let (x, v) = traj.state(t);
        let g = spec.metric(&x);
        e_drift = e_drift.max((quadratic(&g, &v, &v) - e0).abs() / e_scale);
        if let (Some(c0), Some(y)) = (c0, spec.killing(&x)) {
            c_drift = c_drift.max((quadratic(&g, &v, y.as_slice()) - c0).abs() / c_scale.unwrap());
        }
    }
    traj.energy = e0;
    traj.energy_drift = e_drift;
    traj.c_gamma = c0;
    traj.killing_drift = c0.map(|_| c_drift);
    if e_drift > DRIFT_TOL || c_drift > DRIFT_TOL {
        let (x, v) = traj.state(t1);
        return Err(Error::Integration {
            t: t1,
            reason: format!("first integral drift: energy {e_drift:.3e}, killing {c_drift:.3e}"),
            last_state: x.into_iter().chain(v).collect(),
        });
    }
    Ok(traj)
}

/// A closed geodesic parametrized on [0, 1].
#[derive(Debug, Clone)]
pub struct ClosedGeodesic {
    spec: Arc<ManifoldSpec>,
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    traj: Trajectory,
    pub closure_residual: f64,
    pub windings: Vec<i64>,
    /// Diagonal of the differential of the deck identification from γ(1) to γ(0).
    pub identification: Vec<f64>,
    pub newton_history: Vec<f64>,
    pub frozen: Vec<usize>,
    ode: OdeOptions,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeodesicSummary {
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    pub closure_residual: f64,
    pub energy: f64,
    pub energy_drift: f64,
    pub c_gamma: Option<f64>,
    pub killing_drift: Option<f64>,
    pub windings: Vec<i64>,
    pub newton_iterations: usize,
    pub newton_history: Vec<f64>,
    pub frozen_coordinates: Vec<String>,
}

impl ClosedGeodesic {
    /// Wraps given initial data without refinement; fails if the orbit does
    /// not close within `opts.closure_tol`.
    pub fn from_initial_data(spec: Arc<ManifoldSpec>, x0: &[f64], v0: &[f64], opts: &GeodesicOptions) -> Result<Self> {
        let traj = integrate_geodesic(&spec, x0, v0, 0.0, 1.0, &opts.ode)?;
        let (x1, v1) = traj.state(1.0);
        let c = spec.closure(x0, v0, &x1, &v1);
        let r = norm(&c.residual);
        if r > opts.closure_tol {
            return Err(Error::NotClosed { distance: r });
        }
        Ok(ClosedGeodesic {
            spec,
            x0: x0.to_vec(),
            v0: v0.to_vec(),
            traj,
            closure_residual: r,
            windings: c.windings,
            identification: c.identification,
            newton_history: vec![r],
            frozen: Vec::new(),
            ode: opts.ode,
        })
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> Arc<ManifoldSpec> {
        self.spec.clone()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn ode_options(&self) -> &OdeOptions {
        &self.ode
    }

    /// (γ(s), γ̇(s)) for s ∈ [0, 1].
    pub fn state(&self, s: f64) -> (Vec<f64>, Vec<f64>) {
        self.traj.state(s)
    }

    pub fn energy(&self) -> f64 {
        self.traj.energy
    }

    pub fn c_gamma(&self) -> Option<f64> {
        self.traj.c_gamma
    }

    pub fn energy_drift(&self) -> f64 {
        self.traj.energy_drift
    }

    pub fn killing_drift(&self) -> Option<f64> {
        self.traj.killing_drift
    }

    pub fn newton_iterations(&self) -> usize {
        self.newton_history.len().saturating_sub(1)
    }

    /// Uniform samples (s, x, v) with `count` intervals.
    pub fn samples(&self, count: usize) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
        (0..=count)
            .map(|i| {
                let s = i as f64 / count as f64;
                let (x, v) = self.state(s);
                (s, x, v)
            })
            .collect()
    }

    /// The orbit traversed twice, reparametrized on [0, 1].
    pub fn doubled(&self) -> Result<ClosedGeodesic> {
        let v0: Vec<f64> = self.v0.iter().map(|v| 2.0 * v).collect();
        let opts = GeodesicOptions { ode: self.ode, closure_tol: f64::INFINITY, ..GeodesicOptions::default() };
        let mut g = ClosedGeodesic::from_initial_data(self.spec.clone(), &self.x0, &v0, &opts)?;
        g.frozen = self.frozen.clone();
        Ok(g)
    }

    pub fn summary(&self) -> GeodesicSummary {
        GeodesicSummary {
            x0: self.x0.clone(),
            v0: self.v0.clone(),
            closure_residual: self.closure_residual,
            energy: self.energy(),
            energy_drift: self.energy_drift(),
            c_gamma: self.c_gamma(),
            killing_drift: self.killing_drift(),
            windings: self.windings.clone(),
            newton_iterations: self.newton_iterations(),
            newton_history: self.newton_history.clone(),
            frozen_coordinates: self.frozen.iter().map(|&k| self.spec.coords[k].clone()).collect(),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Coordinates of x0 held fixed during refinement: the one along which the
/// orbit moves fastest (phase of the affine parameter) and, for stationary
/// specs, the one along which Y is largest (phase of the Y-flow).
pub fn gauge_coordinates(spec: &ManifoldSpec, x0: &[f64], v0: &[f64]) -> Vec<usize> {
    let n = spec.dim();
    let mut by_speed: Vec<usize> = (0..n).collect();
    by_speed.sort_by(|&a, &b| v0[b].abs().partial_cmp(&v0[a].abs()).unwrap().then(a.cmp(&b)));
    let mut frozen = Vec::new();
    if let Some(t) = spec.killing_time_coordinate(x0) {
        frozen.push(t);
    }
    if let Some(&k) = by_speed.iter().find(|k| !frozen.contains(k)) {
        frozen.push(k);
    }
    frozen.sort();
    frozen
}

/// Gauss–Newton on F(x0, v0) = flow₁(x0, v0) − (x0, v0) modulo periods,
/// with a forward-difference Jacobian, a truncated pseudo-inverse step and
/// backtracking.
pub fn refine_closed(spec: Arc<ManifoldSpec>, x0: &[f64], v0: &[f64], opts: &GeodesicOptions) -> Result<ClosedGeodesic> {
    let n = spec.dim();
    let frozen = gauge_coordinates(&spec, x0, v0);
    let free: Vec<usize> = (0..2 * n).filter(|i| !(*i < n && frozen.contains(i))).collect();
    let mut z: Vec<f64> = x0.iter().chain(v0).cloned().collect();

    let residual = |z: &[f64]| -> Result<Vec<f64>> {
        let traj = integrate_geodesic(&spec, &z[..n], &z[n..], 0.0, 1.0, &opts.ode)?;
        let (x1, v1) = traj.state(1.0);
        Ok(spec.closure(&z[..n], &z[n..], &x1, &v1).residual)
    };

    let mut f = residual(&z)?;
    let mut history = vec![norm(&f)];
    while *history.last().unwrap() > opts.closure_tol {
        if history.len() > opts.max_iterations {
            return Err(Error::NoConvergence { history });
        }
        let mut jac = Mat::zeros(2 * n, free.len());
        for (c, &i) in free.iter().enumerate() {
            let h = opts.fd_step * (1.0 + z[i].abs());
            let mut zp = z.clone();
            zp[i] += h;
            let fp = residual(&zp)?;
            for r in 0..2 * n {
                jac[(r, c)] = (fp[r] - f[r]) / h;
            }
        }
        // Minimum-norm least-squares step, truncating tiny singular values.
        let d = linalg::svd(&jac);
        let smax = d.s.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        let rhs = Mat::from_column_slice(2 * n, 1, &f);
        let mut step = Mat::zeros(free.len(), 1);
        for (k, &sk) in d.s.iter().enumerate() {
            if sk > 1e-10 * smax {
                let coef = (d.u.column(k).transpose() * &rhs)[(0, 0)] / sk;
                step += d.v.column(k) * coef;
            }
        }
        let current = *history.last().unwrap();
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let mut zn = z.clone();
            for (c, &i) in free.iter().enumerate() {
                zn[i] -= lambda * step[(c, 0)];
            }
            if let Ok(fn_) = residual(&zn) {
                if norm(&fn_) < current {
                    accepted = Some((zn, fn_));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((zn, fn_)) => {
                z = zn;
                f = fn_;
                history.push(norm(&f));
            }
            None => return Err(Error::NoConvergence { history }),
        }
    }
    let mut g = ClosedGeodesic::from_initial_data(
        spec.clone(),
        &z[..n],
        &z[n..],
        &GeodesicOptions { closure_tol: f64::INFINITY, ..*opts },
    )?;
    g.newton_history = history;
    g.frozen = frozen;
    Ok(g)
}

/// Residual of the Levi-Civita compatibility ∂_k g_ij = Γ^m_ki g_mj + Γ^m_kj g_im.
pub fn metric_compatibility_residual(spec: &ManifoldSpec, x: &[f64]) -> Result<f64> {
    let n = spec.dim();
    let g = spec.metric(x);
    let dg = spec.dmetric(x);
    let gamma = spec.gamma(x)?;
    let mut worst: f64 = 0.0;
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for m in 0..n {
                    s += gamma[m][(k, i)] * g[(m, j)] + gamma[m][(k, j)] * g[(i, m)];
                }
                worst = worst.max((dg[k][(i, j)] - s).abs());
            }
        }
    }
    Ok(worst / (1.0 + linalg::spectral_norm(&g)))
}
