use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{orthonormalize, LagrangianFrame, SympSpace, MEMBERSHIP_TOL};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    Symplectic,
    Lagrangian,
}

type EvalFn = Arc<dyn Fn(f64) -> Mat + Send + Sync>;

/// A continuous path of symplectic matrices or of Lagrangian bases on [a, b].
///
/// `tol` is the relative zero band used for chart-form eigenvalues when the
/// path is fed to an index computation; analytic paths use 1e-9, paths built
/// from integrated samples a looser value.
#[derive(Clone)]
pub struct SympPath {
    space: SympSpace,
    kind: PathKind,
    a: f64,
    b: f64,
    grid: Vec<f64>,
    eval: EvalFn,
    tol: f64,
}

impl std::fmt::Debug for SympPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SympPath")
            .field("kind", &self.kind)
            .field("a", &self.a)
            .field("b", &self.b)
            .field("grid_len", &self.grid.len())
            .field("tol", &self.tol)
            .finish()
    }
}

impl SympPath {
    /// Path given by a closure, with a uniform initial grid of `segments`
    /// intervals.
    pub fn from_fn<F>(space: SympSpace, kind: PathKind, a: f64, b: f64, segments: usize, f: F) -> Self
    where
        F: Fn(f64) -> Mat + Send + Sync + 'static,
    {
        let segments = segments.max(1);
        let grid = (0..=segments).map(|i| a + (b - a) * i as f64 / segments as f64).collect();
        SympPath { space, kind, a, b, grid, eval: Arc::new(f), tol: 1e-9 }
    }

    /// Path through samples (tₖ, Mₖ). Symplectic samples are joined by
    /// one-parameter subgroups Φₖ exp(s log(Φₖ⁻¹Φₖ₊₁)); Lagrangian samples by
    /// straight lines in a chart transverse to both endpoints.
    pub fn from_samples(space: SympSpace, kind: PathKind, samples: Vec<(f64, Mat)>, tol: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Dimension("a path needs at least two samples".into()));
        }
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Dimension("sample times must be strictly increasing".into()));
            }
        }
        let grid: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let (a, b) = (grid[0], *grid.last().unwrap());
        let eval: EvalFn = match kind {
            PathKind::Symplectic => {
                for (_, m) in &samples {
                    let r = space.symplectic_residual(m);
                    if r > tol.max(MEMBERSHIP_TOL) {
                        return Err(Error::NotSymplectic { residual: r });
                    }
                }
                let mut logs = Vec::with_capacity(samples.len() - 1);
                for w in samples.windows(2) {
                    let step = space.symplectic_inverse(&w[0].1) * &w[1].1;
                    let l = linalg::logm(&step).map_err(|_| Error::Sampling { start: w[0].0, end: w[1].0 })?;
                    logs.push(l);
                }
                let times = grid.clone();
                let mats: Vec<Mat> = samples.into_iter().map(|s| s.1).collect();
                Arc::new(move |t| {
                    let k = interval_index(&times, t);
                    let s = (t - times[k]) / (times[k + 1] - times[k]);
                    &mats[k] * linalg::expm(&(&logs[k] * s))
                })
            }
            PathKind::Lagrangian => {
                let pool = space.lagrangian_pool(32, 0x1a9);
                let mut pieces = Vec::with_capacity(samples.len() - 1);
                for w in samples.windows(2) {
                    let l0 = LagrangianFrame::with_tol(space.clone(), w[0].1.clone(), tol.max(MEMBERSHIP_TOL))?;
                    let l1 = LagrangianFrame::with_tol(space.clone(), w[1].1.clone(), tol.max(MEMBERSHIP_TOL))?;
                    pieces.push(ChartSegment::through(&space, &pool, &l0, &l1)?);
                }
                let times = grid.clone();
                Arc::new(move |t| {
                    let k = interval_index(&times, t);
                    let s = (t - times[k]) / (times[k + 1] - times[k]);
                    pieces[k].at(s)
                })
            }
        };
        Ok(SympPath { space, kind, a, b, grid, eval, tol })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.grid = grid;
        self
    }

    pub fn space(&self) -> &SympSpace {
        &self.space
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn start(&self) -> f64 {
        self.a
    }

    pub fn end(&self) -> f64 {
        self.b
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn eval(&self, t: f64) -> Mat {
        (self.eval)(t.clamp(self.a, self.b))
    }

    /// Checks membership (symplectic or Lagrangian) at every grid point.
    pub fn validate(&self) -> Result<()> {
        let tol = self.tol.max(MEMBERSHIP_TOL);
        for &t in &self.grid {
            let m = self.eval(t);
            match self.kind {
                PathKind::Symplectic => {
                    let r = self.space.symplectic_residual(&m);
                    if r > tol {
                        return Err(Error::NotSymplectic { residual: r });
                    }
                }
                PathKind::Lagrangian => {
                    LagrangianFrame::with_tol(self.space.clone(), m, tol)?;
                }
            }
        }
        Ok(())
    }

    fn require(&self, kind: PathKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Dimension(format!("expected a {kind:?} path, got {:?}", self.kind)));
        }
        Ok(())
    }

    /// t ↦ Φ(t)[L].
    pub fn image_of(&self, l: &LagrangianFrame) -> Result<SympPath> {
        self.require(PathKind::Symplectic)?;
        let basis = l.basis().clone();
        let f = self.eval.clone();
        Ok(SympPath {
            space: self.space.clone(),
            kind: PathKind::Lagrangian,
            a: self.a,
            b: self.b,
            grid: self.grid.clone(),
            eval: Arc::new(move |t| f(t) * &basis),
            tol: self.tol,
        })
    }

    /// t ↦ Gr(Φ(t)) in the doubled space.
    pub fn graph(&self) -> Result<SympPath> {
        self.require(PathKind::Symplectic)?;
        let d = self.space.dim2n();
        let f = self.eval.clone();
        Ok(SympPath {
            space: self.space.doubled(),
            kind: PathKind::Lagrangian,
            a: self.a,
            b: self.b,
            grid: self.grid.clone(),
            eval: Arc::new(move |t| linalg::vcat(&Mat::identity(d, d), &f(t))),
            tol: self.tol,
        })
    }

    /// t ↦ Φ(t)⁻¹.
    pub fn inverse(&self) -> Result<SympPath> {
        self.require(PathKind::Symplectic)?;
        let f = self.eval.clone();
        let space = self.space.clone();
        let sp = self.space.clone();
        Ok(SympPath {
            space,
            kind: PathKind::Symplectic,
            a: self.a,
            b: self.b,
            grid: self.grid.clone(),
            eval: Arc::new(move |t| sp.symplectic_inverse(&f(t))),
            tol: self.tol,
        })
    }

    /// t ↦ Id ⊕ Φ(t) acting on the doubled space.
    pub fn doubled(&self) -> Result<SympPath> {
        self.require(PathKind::Symplectic)?;
        let d = self.space.dim2n();
        let f = self.eval.clone();
        Ok(SympPath {
            space: self.space.doubled(),
            kind: PathKind::Symplectic,
            a: self.a,
            b: self.b,
            grid: self.grid.clone(),
            eval: Arc::new(move |t| linalg::block_diag(&Mat::identity(d, d), &f(t))),
            tol: self.tol,
        })
    }

    /// Concatenation; `other` is shifted to start where `self` ends.
    pub fn concat(&self, other: &SympPath) -> Result<SympPath> {
        if self.kind != other.kind || self.space.dim2n() != other.space.dim2n() {
            return Err(Error::Dimension("cannot concatenate paths of different kinds".into()));
        }
        let shift = self.b - other.a;
        let mid = self.b;
        let f = self.eval.clone();
        let g = other.eval.clone();
        let mut grid = self.grid.clone();
        grid.extend(other.grid.iter().skip(1).map(|t| t + shift));
        Ok(SympPath {
            space: self.space.clone(),
            kind: self.kind,
            a: self.a,
            b: other.b + shift,
            grid,
            eval: Arc::new(move |t| if t <= mid { f(t) } else { g(t - shift) }),
            tol: self.tol.max(other.tol),
        })
    }

    /// The same path traversed backwards on the same interval.
    pub fn reverse(&self) -> SympPath {
        let (a, b) = (self.a, self.b);
        let f = self.eval.clone();
        let mut grid: Vec<f64> = self.grid.iter().map(|t| a + b - t).collect();
        grid.reverse();
        SympPath {
            space: self.space.clone(),
            kind: self.kind,
            a,
            b,
            grid,
            eval: Arc::new(move |t| f(a + b - t)),
            tol: self.tol,
        }
    }

    /// Composition with a monotone increasing map h of [a, b] onto itself.
    pub fn reparametrize<H>(&self, h: H) -> SympPath
    where
        H: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let f = self.eval.clone();
        SympPath {
            space: self.space.clone(),
            kind: self.kind,
            a: self.a,
            b: self.b,
            grid: self.grid.clone(),
            eval: Arc::new(move |t| f(h(t))),
            tol: self.tol,
        }
    }

    /// Restriction to [s, e] ⊂ [a, b].
    pub fn restrict(&self, s: f64, e: f64) -> SympPath {
        let mut grid = vec![s];
        grid.extend(self.grid.iter().cloned().filter(|&t| t > s && t < e));
        grid.push(e);
        SympPath {
            space: self.space.clone(),
            kind: self.kind,
            a: s,
            b: e,
            grid,
            eval: self.eval.clone(),
            tol: self.tol,
        }
    }

    /// N-fold iterate Φ⁽ᴺ⁾(t) = Φ(t − k)Φ(end)ᵏ for t ∈ [a + k, a + k + 1]
    /// (in units of the period b − a), for a path starting at the identity.
    pub fn iterate(&self, n: usize) -> Result<SympPath> {
        self.require(PathKind::Symplectic)?;
        let n = n.max(1);
        let period = self.b - self.a;
        let a = self.a;
        let p = self.eval(self.b);
        let mut powers = vec![Mat::identity(p.nrows(), p.nrows())];
        for k in 1..n {
            powers.push(&powers[k - 1] * &p);
        }
        let f = self.eval.clone();
        let mut grid = Vec::new();
        for k in 0..n {
            let off = k as f64 * period;
            let skip = if k == 0 { 0 } else { 1 };
            grid.extend(self.grid.iter().skip(skip).map(|t| t + off));
        }
        Ok(SympPath {
            space: self.space.clone(),
            kind: PathKind::Symplectic,
            a,
            b: a + n as f64 * period,
            grid,
            eval: Arc::new(move |t| {
                let k = (((t - a) / period).floor() as usize).min(n - 1);
                f(t - k as f64 * period) * &powers[k]
            }),
            tol: self.tol,
        })
    }
}

fn interval_index(times: &[f64], t: f64) -> usize {
    let k = times.partition_point(|&x| x <= t);
    k.saturating_sub(1).min(times.len() - 2)
}

/// Straight line in the chart {H + K S} of a Lagrangian K transverse to both
/// endpoints. Lagrangian bases of this form satisfy a linear condition on S,
/// so every convex combination of admissible S stays Lagrangian.
pub(crate) struct ChartSegment {
    h: Mat,
    k: Mat,
    s0: Mat,
    s1: Mat,
}

impl ChartSegment {
    pub(crate) fn through(
        space: &SympSpace,
        pool: &[LagrangianFrame],
        from: &LagrangianFrame,
        to: &LagrangianFrame,
    ) -> Result<Self> {
        let k = pool
            .iter()
            .max_by(|x, y| {
                let tx = x.transversality(from).min(x.transversality(to));
                let ty = y.transversality(from).min(y.transversality(to));
                tx.partial_cmp(&ty).unwrap()
            })
            .ok_or(Error::NoChart { start: 0.0, end: 1.0 })?;
        let tk = k.transversality(from).min(k.transversality(to));
        if tk < 1e-3 {
            return Err(Error::NoChart { start: 0.0, end: 1.0 });
        }
        let h = pool
            .iter()
            .max_by(|x, y| x.transversality(k).partial_cmp(&y.transversality(k)).unwrap())
            .expect("non-empty pool");
        Self::with_reference(space, h.basis(), k.basis(), from, to)
    }

    pub(crate) fn with_reference(
        _space: &SympSpace,
        h: &Mat,
        k: &Mat,
        from: &LagrangianFrame,
        to: &LagrangianFrame,
    ) -> Result<Self> {
        let hk = linalg::hcat(h, k);
        let n = h.ncols();
        let coords = |l: &LagrangianFrame| -> Result<Mat> {
            let c = linalg::solve(&hk, l.basis())?;
            let x = c.rows(0, n).into_owned();
            let y = c.rows(n, n).into_owned();
            let xi = x.try_inverse().ok_or(Error::NotTransverse { intersection_dim: 1 })?;
            Ok(y * xi)
        };
        Ok(ChartSegment { h: h.clone(), k: k.clone(), s0: coords(from)?, s1: coords(to)? })
    }

    pub(crate) fn at(&self, s: f64) -> Mat {
        let sm = &self.s0 * (1.0 - s) + &self.s1 * s;
        orthonormalize(&(&self.h + &self.k * sm))
    }
}
