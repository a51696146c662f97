//! Galerkin index and nullity of the index form on the constrained tangent
//! space, and the boundary quantities of the index theorem.
//!
//! Fields along γ^(N) live on the base parameter s ∈ [0, N] and are written
//! in the periodic frame F. A trial field W is moved into the constrained
//! space by V = W + λ_W·Y, where
//!
//!   h_W = g(DW, Y) − g(W, DY),
//!   C_W = ∫ h_W/g(Y,Y) / ∫ 1/g(Y,Y),
//!   λ_W' = (C_W − h_W)/g(Y,Y),
//!
//! so that g(DV, Y) − g(V, DY) ≡ C_W and λ_W is periodic. Gram matrices are
//! reported in the [0, 1] parametrization of γ^(N), i.e. N times the
//! base-parameter integral.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bilinear::{decade_margin, Inertia, SymForm, MARGINAL_DECADES};
use crate::error::{Error, Result};
use crate::geodesic::ClosedGeodesic;
use crate::linalg::{self, Mat};
use crate::manifold::{DerivativeRoute, ManifoldSpec};
use crate::transport::{jacobi_transfer, periodic_trivialization, JacobiTransfer, PoincareMap, TrivializationOptions};

#[derive(Debug, Clone, Copy)]
pub struct MorseOptions {
    /// Quadrature points per period of the base orbit (even).
    pub samples_per_unit: usize,
    /// Relative zero band for Galerkin eigenvalues.
    pub zero_band: f64,
    /// Relative cutoff on mass-matrix eigenvalues.
    pub rank_tol: f64,
    /// Relative zero band for singular values of blocks of P.
    pub poincare_tol: f64,
    /// Number of truncation levels K0, 2K0, 4K0, ... tried.
    pub max_levels: usize,
    /// Starting number of Fourier modes; defaults to 2N + 2.
    pub initial_modes: Option<usize>,
}

impl Default for MorseOptions {
    fn default() -> Self {
        MorseOptions {
            samples_per_unit: 256,
            zero_band: 1e-7,
            rank_tol: 1e-12,
            poincare_tol: 1e-7,
            max_levels: 5,
            initial_modes: None,
        }
    }
}

/// Frame data on the grid s = i/m, i = 0..m, of one period.
#[derive(Debug, Clone)]
pub struct FrameSamples {
    m: usize,
    eta: Vec<f64>,
    /// η·K_F, symmetric.
    eta_tidal: Vec<Mat>,
    /// R = M⁻¹·exp(sL)·exp(sX): trial fields are R times Fourier modes, so
    /// they follow the linearly interpolated frame rather than the bump.
    trial: Vec<Mat>,
    /// exp(−sX)·L·exp(sX) + X, so that D(R f e_a) = R (f' e_a + f·this·e_a).
    trial_conn: Vec<Mat>,
    killing: Option<KillingSamples>,
}

#[derive(Debug, Clone)]
struct KillingSamples {
    y: Vec<DVector<f64>>,
    dy: Vec<DVector<f64>>,
    gyy: Vec<f64>,
}

impl FrameSamples {
    pub fn new(transfer: &JacobiTransfer, m: usize) -> Result<Self> {
        let frame = &transfer.frame;
        if !frame.periodic {
            return Err(if frame.orientation_preserving {
                Error::Logarithm(frame.note.clone().unwrap_or_default())
            } else {
                Error::OrientationReversing
            });
        }
        if m < 8 || m % 2 != 0 {
            return Err(Error::Dimension(format!("samples per unit must be even and at least 8, got {m}")));
        }
        let eta = frame.eta().to_vec();
        let eta_m = frame.eta_matrix();
        let l = frame.generator();
        let x = frame.twist_generator();
        type Row = (Mat, Mat, Mat, Option<(Vec<f64>, Vec<f64>)>);
        let rows: Vec<Result<Row>> = (0..=m)
            .into_par_iter()
            .map(|i| {
                let s = i as f64 / m as f64;
                let k = frame.tidal(s)?;
                let twist = linalg::expm(&(x * s));
                let untwist = linalg::expm(&(x * (-s)));
                let trial = linalg::solve(&frame.correction(s), &(linalg::expm(&(l * s)) * &twist))?;
                let trial_conn = &untwist * l * &twist + x;
                Ok((
                    linalg::symmetrize(&(&eta_m * k)),
                    trial,
                    trial_conn,
                    frame.killing_components(s)?,
                ))
            })
            .collect();
        let mut eta_tidal = Vec::with_capacity(m + 1);
        let mut trial = Vec::with_capacity(m + 1);
        let mut trial_conn = Vec::with_capacity(m + 1);
        let mut ks: Option<KillingSamples> = None;
        for r in rows {
            let (k, r, ra, y) = r?;
            eta_tidal.push(k);
            trial.push(r);
            trial_conn.push(ra);
            if let Some((y, dy)) = y {
                let y = DVector::from_vec(y);
                let gyy = (0..y.len()).map(|a| eta[a] * y[a] * y[a]).sum();
                let e = ks.get_or_insert(KillingSamples { y: Vec::new(), dy: Vec::new(), gyy: Vec::new() });
                e.y.push(y);
                e.dy.push(DVector::from_vec(dy));
                e.gyy.push(gyy);
            }
        }
        Ok(FrameSamples { m, eta, eta_tidal, trial, trial_conn, killing: ks })
    }

    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    pub fn has_killing(&self) -> bool {
        self.killing.is_some()
    }

    pub fn samples_per_unit(&self) -> usize {
        self.m
    }

    fn idx(&self, p: usize) -> usize {
        p % self.m
    }

    /// Number of grid points on [0, N].
    pub fn points(&self, n_iter: usize) -> usize {
        n_iter * self.m + 1
    }

    fn step(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Composite Simpson weights on [0, N].
    pub fn weights(&self, n_iter: usize) -> Vec<f64> {
        let p = self.points(n_iter);
        let h = self.step();
        (0..p)
            .map(|i| {
                let c = if i == 0 || i == p - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * h / 3.0
            })
            .collect()
    }
}

/// Fourth-order cumulative integral on a uniform grid (at least 4 points).
fn cumulative(f: &[f64], h: f64) -> Vec<f64> {
    let p = f.len();
    let mut out = vec![0.0; p];
    for i in 0..p - 1 {
        let piece = if i == 0 {
            h / 24.0 * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
        } else if i == p - 2 {
            h / 24.0 * (9.0 * f[p - 1] + 19.0 * f[p - 2] - 5.0 * f[p - 3] + f[p - 4])
        } else {
            h / 24.0 * (-f[i - 1] + 13.0 * f[i] + 13.0 * f[i + 1] - f[i + 2])
        };
        out[i + 1] = out[i] + piece;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    Cos,
    Sin,
    /// sin(πks/N), odd k: vanishes at the endpoints but is not smooth across them.
    HalfSine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Mode {
    pub kind: ModeKind,
    pub k: usize,
    pub direction: usize,
}

impl Mode {
    fn eval(&self, s: f64, n_iter: usize) -> (f64, f64) {
        let period = n_iter as f64;
        match self.kind {
            ModeKind::Cos => {
                let w = 2.0 * std::f64::consts::PI * self.k as f64 / period;
                ((w * s).cos(), -w * (w * s).sin())
            }
            ModeKind::Sin => {
                let w = 2.0 * std::f64::consts::PI * self.k as f64 / period;
                ((w * s).sin(), w * (w * s).cos())
            }
            ModeKind::HalfSine => {
                let w = std::f64::consts::PI * self.k as f64 / period;
                ((w * s).sin(), w * (w * s).cos())
            }
        }
    }
}

/// Sampled fields V and DV (frame components) on the grid of [0, N], one
/// column per field; row p·n + a holds component a at grid point p.
#[derive(Debug, Clone)]
pub struct ConstraintBasis {
    pub iterate: usize,
    pub modes: usize,
    pub labels: Vec<Mode>,
    pub v: Mat,
    pub dv: Mat,
    /// C_V of each column.
    pub c: Vec<f64>,
    /// Largest |g(DV,Y) − g(V,DY) − C_V| relative to the size of the trial field.
    pub constraint_residual: f64,
}

impl ConstraintBasis {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows of V at s = 0.
    pub fn initial_values(&self, n: usize) -> Mat {
        self.v.rows(0, n).into_owned()
    }
}

/// Fourier modes cos/sin(2πks/N) for k ≤ K in every frame direction,
/// optionally with the odd half-sine modes up to 2K + 1, each corrected
/// into the constrained space.
pub fn build_constraint_basis(fs: &FrameSamples, n_iter: usize, modes: usize, half_sines: bool) -> ConstraintBasis {
    let n = fs.dim();
    let mut labels = Vec::new();
    for k in 0..=modes {
        for a in 0..n {
            labels.push(Mode { kind: ModeKind::Cos, k, direction: a });
            if k > 0 {
                labels.push(Mode { kind: ModeKind::Sin, k, direction: a });
            }
        }
    }
    if half_sines {
        for k in (1..=2 * modes + 1).step_by(2) {
            for a in 0..n {
                labels.push(Mode { kind: ModeKind::HalfSine, k, direction: a });
            }
        }
    }
    let p = fs.points(n_iter);
    let h = fs.step();
    let wq = fs.weights(n_iter);
    let length = n_iter as f64;
    let cols: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = labels
        .par_iter()
        .map(|mode| {
            let mut v = vec![0.0; p * n];
            let mut dv = vec![0.0; p * n];
            for i in 0..p {
                let s = i as f64 * h;
                let (f, df) = mode.eval(s, n_iter);
                let j = fs.idx(i);
                let (rm, ra) = (&fs.trial[j], &fs.trial_conn[j]);
                for r in 0..n {
                    v[i * n + r] = rm[(r, mode.direction)] * f;
                    let mut d = rm[(r, mode.direction)] * df;
                    for c in 0..n {
                        d += rm[(r, c)] * ra[(c, mode.direction)] * f;
                    }
                    dv[i * n + r] = d;
                }
            }
            let ks = match &fs.killing {
                None => return (v, dv, 0.0, 0.0),
                Some(ks) => ks,
            };
            let eta = &fs.eta;
            let pair = |x: &[f64], y: &DVector<f64>| -> f64 { (0..n).map(|a| eta[a] * x[a] * y[a]).sum() };
            let hw: Vec<f64> = (0..p)
                .map(|i| {
                    let j = fs.idx(i);
                    pair(&dv[i * n..(i + 1) * n], &ks.y[j]) - pair(&v[i * n..(i + 1) * n], &ks.dy[j])
                })
                .collect();
            let num: f64 = (0..p).map(|i| wq[i] * hw[i] / ks.gyy[fs.idx(i)]).sum();
            let den: f64 = (0..p).map(|i| wq[i] / ks.gyy[fs.idx(i)]).sum();
            let c = num / den;
            let dl: Vec<f64> = (0..p).map(|i| (c - hw[i]) / ks.gyy[fs.idx(i)]).collect();
            let scale = v.iter().chain(&dv).fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
            let mut lam = cumulative(&dl, h);
            let mean = (0..p).map(|i| wq[i] * lam[i]).sum::<f64>() / length;
            for l in lam.iter_mut() {
                *l -= mean;
            }
            for i in 0..p {
                let j = fs.idx(i);
                for r in 0..n {
                    v[i * n + r] += lam[i] * ks.y[j][r];
                    dv[i * n + r] += dl[i] * ks.y[j][r] + lam[i] * ks.dy[j][r];
                }
            }
            let resid = (0..p)
                .map(|i| {
                    let j = fs.idx(i);
                    let hv = pair(&dv[i * n..(i + 1) * n], &ks.y[j]) - pair(&v[i * n..(i + 1) * n], &ks.dy[j]);
                    (hv - c).abs()
                })
                .fold(0.0f64, f64::max)
                / scale;
            (v, dv, c, resid)
        })
        .collect();
    let b = labels.len();
    let mut v = Mat::zeros(p * n, b);
    let mut dv = Mat::zeros(p * n, b);
    let mut c = Vec::with_capacity(b);
    let mut worst: f64 = 0.0;
    for (j, (vc, dvc, cc, r)) in cols.into_iter().enumerate() {
        v.set_column(j, &DVector::from_vec(vc));
        dv.set_column(j, &DVector::from_vec(dvc));
        c.push(cc);
        worst = worst.max(r);
    }
    ConstraintBasis { iterate: n_iter, modes, labels, v, dv, c, constraint_residual: worst }
}

/// Gram matrices of the index form and of the H¹ inner product on sampled
/// fields over [0, N], both in the [0, 1] parametrization of γ^(N).
pub fn index_form_of_fields(fs: &FrameSamples, n_iter: usize, v: &Mat, dv: &Mat) -> (Mat, Mat) {
    let n = fs.dim();
    let p = fs.points(n_iter);
    assert_eq!(v.nrows(), p * n, "field samples do not match the grid");
    let wq = fs.weights(n_iter);
    let mut x1 = dv.clone();
    let mut x2 = Mat::zeros(v.nrows(), v.ncols());
    let mut xm = v.clone();
    for i in 0..p {
        let j = fs.idx(i);
        for a in 0..n {
            x1.row_mut(i * n + a).scale_mut(wq[i] * fs.eta[a]);
            xm.row_mut(i * n + a).scale_mut(wq[i]);
        }
        let block = &fs.eta_tidal[j] * v.rows(i * n, n) * wq[i];
        x2.rows_mut(i * n, n).copy_from(&block);
    }
    let nf = n_iter as f64;
    let index = linalg::symmetrize(&((dv.transpose() * &x1 - v.transpose() * &x2) * nf));
    let mut x3 = dv.clone();
    for i in 0..p {
        for a in 0..n {
            x3.row_mut(i * n + a).scale_mut(wq[i]);
        }
    }
    let mass = linalg::symmetrize(&(dv.transpose() * &x3 * nf + v.transpose() * &xm / nf));
    (index, mass)
}

pub fn index_form_matrix(fs: &FrameSamples, basis: &ConstraintBasis) -> Result<SymForm> {
    let (i, _) = index_form_of_fields(fs, basis.iterate, &basis.v, &basis.dv);
    let tol = 1e-9 * (1.0 + linalg::spectral_norm(&i));
    SymForm::with_tol(i, tol)
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub modes: usize,
    pub basis_size: usize,
    pub rank: usize,
    pub index: usize,
    pub nullity: usize,
    pub margin: f64,
}

/// Index and nullity of (I, mass) on the span of the columns of `z` (all
/// columns when `z` is None), after discarding mass eigenvalues below
/// rank_tol·max.
fn reduced_inertia(index: &Mat, mass: &Mat, z: Option<&Mat>, opts: &MorseOptions) -> (Inertia, usize) {
    let (i, m) = match z {
        Some(z) => (z.transpose() * index * z, z.transpose() * mass * z),
        None => (index.clone(), mass.clone()),
    };
    let (vals, vecs) = linalg::sym_eigen_sorted(&linalg::symmetrize(&m));
    let top = vals.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] > opts.rank_tol * top).collect();
    let mut basis = Mat::zeros(vals.len(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        basis.set_column(c, &(vecs.column(k) / vals[k].sqrt()));
    }
    let s = linalg::symmetrize(&(basis.transpose() * linalg::symmetrize(&i) * &basis));
    let band = opts.zero_band * (1.0 + linalg::spectral_norm(&s));
    let form = SymForm::with_tol(s, band).expect("symmetrized reduced form");
    (form.inertia(), keep.len())
}

/// Everything needed to run Galerkin computations on the iterates of one orbit.
pub struct MorseContext {
    pub transfer: JacobiTransfer,
    pub samples: FrameSamples,
    pub options: MorseOptions,
    metric_index: usize,
    route: DerivativeRoute,
}

#[derive(Debug, Clone, Serialize)]
pub struct GalerkinResult {
    pub index: usize,
    pub nullity: usize,
    pub converged: bool,
    pub margin: f64,
    pub levels: Vec<LevelSummary>,
    pub constraint_residual: f64,
}

/// Which subspace of the constrained space a Galerkin run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restriction {
    /// T_γN: periodic constrained fields.
    None,
    /// W_γ: constrained fields with V(0) = 0.
    VanishingAtBase,
    /// W°_γ: V(0) = 0 and C_V = 0.
    VanishingAndFree,
}

/// Boundary quantities from the Poincaré map of γ^(N).
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryData {
    pub n_minus_b0: usize,
    pub b0_dim: usize,
    pub b0_asymmetry: f64,
    pub b0_margin: f64,
    pub n1: usize,
    pub n1_margin: f64,
    pub n0: usize,
    pub n0_margin: f64,
    pub poincare_nullity: usize,
    pub poincare_nullity_margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexReport {
    pub iterate: usize,
    pub mu: usize,
    pub nullity: usize,
    pub mu_bar: usize,
    /// n₋(I|W_γ).
    pub w_index: usize,
    pub i_m: i64,
    pub i_cz: i64,
    pub n_minus_b0: usize,
    pub n1: usize,
    pub n0: usize,
    pub a_gamma: i64,
    pub b_gamma: i64,
    pub converged: bool,
    pub metric_index: usize,
    /// i_M + ind(g) + n₋(B₀) − n₁.
    pub theorem_rhs: i64,
    pub theorem_holds: bool,
    pub nullity_agrees: bool,
    pub boundary: BoundaryData,
    pub galerkin: GalerkinResult,
    pub restricted: GalerkinResult,
    pub vanishing: GalerkinResult,
    pub maslov_margin: f64,
    pub maslov_marginal: bool,
    pub cz_marginal: bool,
    pub derivative_route: DerivativeRoute,
}

impl IndexReport {
    /// 0 ≤ A_γ ≤ dim − 1 and B_γ ∈ {0, 1}.
    pub fn sandwich_holds(&self, dim: usize) -> bool {
        self.a_gamma >= 0 && self.a_gamma <= dim as i64 - 1 && (self.b_gamma == 0 || self.b_gamma == 1)
    }

    /// 0 ≤ n₋(B₀) + n₀ − n₁ ≤ dim.
    pub fn boundary_bound_holds(&self, dim: usize) -> bool {
        let v = self.n_minus_b0 as i64 + self.n0 as i64 - self.n1 as i64;
        v >= 0 && v <= dim as i64
    }

    /// n₋(I|W_γ) = i_M + ind(g) − n₀.
    pub fn vanishing_identity_holds(&self) -> bool {
        self.w_index as i64 == self.i_m + self.metric_index as i64 - self.n0 as i64
    }
}

pub fn matrix_power(p: &Mat, k: usize) -> Mat {
    let mut out = linalg::identity(p.nrows());
    for _ in 0..k {
        out = &out * p;
    }
    out
}

/// n₋(B₀), n₁, n₀ and dim ker(P − I) for the given Poincaré map.
pub fn boundary_data(p: &PoincareMap, tol: f64) -> Result<BoundaryData> {
    let n = p.dim();
    let (p11, p12, _p21, p22) = p.blocks();
    let abs_tol = tol * (1.0 + linalg::spectral_norm(&p.matrix));
    let id = linalg::identity(n);
    // Padded singular values of wide matrices are exact zeros and carry no margin.
    let margin_of = |m: &Mat| -> f64 {
        let (sv, _) = linalg::full_right_svd(m);
        sv.iter().map(|&s| decade_margin(s, abs_tol)).fold(f64::INFINITY, f64::min)
    };

    let top = linalg::hcat(&(&p11 - &id), &p12);
    let s_basis = linalg::null_space(&top, abs_tol);
    let jump = {
        // α(1) − α(0) for (u, α) ∈ S_γ.
        let bottom = p.matrix.rows(n, n).into_owned() - linalg::hcat(&Mat::zeros(n, n), &id);
        bottom * &s_basis
    };
    let u = s_basis.rows(0, n).into_owned();
    let b0 = jump.transpose() * &u;
    let b0_asym = linalg::asymmetry(&b0);
    let band = tol * (1.0 + linalg::spectral_norm(&b0));
    let form = SymForm::with_tol(linalg::symmetrize(&b0), band.max(b0_asym))?;
    let b0_inertia = form.inertia();

    let n1_m = linalg::vcat(&p12, &(&p22 - &id));
    let n1 = linalg::null_space(&n1_m, abs_tol).ncols();
    let n0 = linalg::null_space(&p12, abs_tol).ncols();
    let pm = &p.matrix - linalg::identity(2 * n);
    let pn = linalg::null_space(&pm, abs_tol).ncols();
    Ok(BoundaryData {
        n_minus_b0: b0_inertia.n_minus,
        b0_dim: s_basis.ncols(),
        b0_asymmetry: b0_asym,
        b0_margin: b0_inertia.margin.min(margin_of(&top)),
        n1,
        n1_margin: margin_of(&n1_m),
        n0,
        n0_margin: margin_of(&p12),
        poincare_nullity: pn,
        poincare_nullity_margin: margin_of(&pm),
    })
}

impl MorseContext {
    pub fn new(g: &ClosedGeodesic, opts: MorseOptions) -> Result<Self> {
        Self::with_trivialization(g, TrivializationOptions::default(), opts)
    }

    pub fn with_trivialization(g: &ClosedGeodesic, triv: TrivializationOptions, opts: MorseOptions) -> Result<Self> {
        let transfer = jacobi_transfer(periodic_trivialization(g, triv)?)?;
        let samples = FrameSamples::new(&transfer, opts.samples_per_unit)?;
        let metric_index = transfer.frame.eta().iter().filter(|&&e| e < 0.0).count();
        let route = g.spec().derivative_route();
        Ok(MorseContext { transfer, samples, options: opts, metric_index, route })
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    pub fn metric_index(&self) -> usize {
        self.metric_index
    }

    pub fn poincare(&self) -> &PoincareMap {
        &self.transfer.poincare
    }

    /// Linear constraints selecting the requested subspace, as rows acting on
    /// basis coefficients.
    fn constraints(&self, basis: &ConstraintBasis, restriction: Restriction) -> Option<Mat> {
        let n = self.dim();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        if restriction != Restriction::None {
            let v0 = basis.initial_values(n);
            for a in 0..n {
                rows.push(v0.row(a).iter().cloned().collect());
            }
        }
        if restriction == Restriction::VanishingAndFree && self.samples.has_killing() {
            rows.push(basis.c.clone());
        }
        if rows.is_empty() {
            return None;
        }
        let b = basis.len();
        let mut m = Mat::zeros(rows.len(), b);
        for (r, row) in rows.iter().enumerate() {
            let scale = row.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if scale > 0.0 {
                for c in 0..b {
                    m[(r, c)] = row[c] / scale;
                }
            }
        }
        Some(m)
    }

    /// Galerkin index and nullity of I on the requested subspace for γ^(N),
    /// doubling the number of modes until two successive levels agree and
    /// no eigenvalue is marginal.
    pub fn galerkin(&self, n_iter: usize, restriction: Restriction) -> GalerkinResult {
        let k0 = self.options.initial_modes.unwrap_or(2 * n_iter + 2);
        let mut levels: Vec<LevelSummary> = Vec::new();
        let mut converged = false;
        let mut worst_resid: f64 = 0.0;
        for level in 0..self.options.max_levels {
            let k = k0 << level;
            let basis = build_constraint_basis(&self.samples, n_iter, k, restriction != Restriction::None);
            worst_resid = worst_resid.max(basis.constraint_residual);
            let (index, mass) = index_form_of_fields(&self.samples, n_iter, &basis.v, &basis.dv);
            let z = self.constraints(&basis, restriction).map(|c| linalg::null_space(&c, 1e-10));
            let (inertia, rank) = reduced_inertia(&index, &mass, z.as_ref(), &self.options);
            levels.push(LevelSummary {
                modes: k,
                basis_size: basis.len(),
                rank,
                index: inertia.n_minus,
                nullity: inertia.n_zero,
                margin: inertia.margin,
            });
            if levels.len() >= 2 {
                let a = &levels[levels.len() - 2];
                let b = &levels[levels.len() - 1];
                if a.index == b.index
                    && a.nullity == b.nullity
                    && a.margin >= MARGINAL_DECADES
                    && b.margin >= MARGINAL_DECADES
                {
                    converged = true;
                    break;
                }
            }
        }
        let last = levels.last().expect("at least one level");
        GalerkinResult {
            index: last.index,
            nullity: last.nullity,
            converged,
            margin: last.margin,
            levels: levels.clone(),
            constraint_residual: worst_resid,
        }
    }

    pub fn boundary(&self, n_iter: usize) -> Result<BoundaryData> {
        let pn = PoincareMap::new(matrix_power(&self.transfer.poincare.matrix, n_iter));
        boundary_data(&pn, self.options.poincare_tol)
    }

    /// Full report for γ^(N).
    pub fn index_report(&self, n_iter: usize) -> Result<IndexReport> {
        let galerkin = self.galerkin(n_iter, Restriction::None);
        let restricted = self.galerkin(n_iter, Restriction::VanishingAndFree);
        let vanishing = self.galerkin(n_iter, Restriction::VanishingAtBase);
        let maslov = self.transfer.maslov_iterate(n_iter)?;
        let cz = self.transfer.cz_iterate(n_iter)?;
        let boundary = self.boundary(n_iter)?;
        let i_m = maslov.index;
        let theorem_rhs =
            i_m + self.metric_index as i64 + boundary.n_minus_b0 as i64 - boundary.n1 as i64;
        Ok(IndexReport {
            iterate: n_iter,
            mu: galerkin.index,
            nullity: galerkin.nullity,
            mu_bar: restricted.index,
            w_index: vanishing.index,
            i_m,
            i_cz: cz.index,
            n_minus_b0: boundary.n_minus_b0,
            n1: boundary.n1,
            n0: boundary.n0,
            a_gamma: galerkin.index as i64 - i_m,
            b_gamma: i_m - restricted.index as i64,
            converged: galerkin.converged && restricted.converged && vanishing.converged,
            metric_index: self.metric_index,
            theorem_rhs,
            theorem_holds: galerkin.index as i64 == theorem_rhs,
            nullity_agrees: galerkin.nullity == boundary.poincare_nullity,
            boundary,
            galerkin,
            restricted,
            vanishing,
            maslov_margin: maslov.detail.interior_margin.min(maslov.detail.endpoint_margin),
            maslov_marginal: maslov.detail.marginal,
            cz_marginal: cz.marginal,
            derivative_route: self.route,
        })
    }

    /// μ̄(γ^(N)).
    pub fn restricted_index(&self, n_iter: usize) -> GalerkinResult {
        self.galerkin(n_iter, Restriction::VanishingAndFree)
    }

    /// Basis of W°_{γ^(N)} at the given truncation: sampled (V, DV) with
    /// orthonormal coefficient columns.
    pub fn restricted_fields(&self, n_iter: usize, modes: usize) -> (Mat, Mat) {
        let basis = build_constraint_basis(&self.samples, n_iter, modes, true);
        let c = self.constraints(&basis, Restriction::VanishingAndFree).expect("restricted constraints");
        let z = linalg::null_space(&c, 1e-10);
        (&basis.v * &z, &basis.dv * &z)
    }

    /// Largest relative deviation in I_{γ^(M)}(E V, E W) = (M/N)·I_{γ^(N)}(V, W)
    /// over a truncated basis of W°_{γ^(N)}, where E extends by zero.
    pub fn scaling_check(&self, n_iter: usize, m_iter: usize, modes: usize) -> Result<f64> {
        if m_iter < n_iter {
            return Err(Error::Dimension(format!("embedding needs M ≥ N, got N = {n_iter}, M = {m_iter}")));
        }
        let (v, dv) = self.restricted_fields(n_iter, modes);
        let (i_n, _) = index_form_of_fields(&self.samples, n_iter, &v, &dv);
        // E V has a derivative jump at s = N, so γ^(M) is integrated one period
        // at a time with one-sided samples.
        let rows = self.samples.points(1) * self.dim();
        let stride = self.samples.samples_per_unit() * self.dim();
        let zero = Mat::zeros(rows, v.ncols());
        let mut i_m = Mat::zeros(v.ncols(), v.ncols());
        for k in 0..m_iter {
            let (vk, dvk) = if k < n_iter {
                (v.rows(k * stride, rows).into_owned(), dv.rows(k * stride, rows).into_owned())
            } else {
                (zero.clone(), zero.clone())
            };
            i_m += index_form_of_fields(&self.samples, 1, &vk, &dvk).0;
        }
        i_m *= m_iter as f64;
        let expected = i_n * (m_iter as f64 / n_iter as f64);
        Ok((&i_m - &expected).norm() / (1.0 + expected.norm()))
    }
}

/// Convenience wrapper: report for the orbit itself.
pub fn morse_index(g: &ClosedGeodesic) -> Result<IndexReport> {
    MorseContext::new(g, MorseOptions::default())?.index_report(1)
}

pub fn restricted_index(g: &ClosedGeodesic) -> Result<usize> {
    Ok(MorseContext::new(g, MorseOptions::default())?.restricted_index(1).index)
}

/// Discrete energy ½∫g(γ̇, γ̇) of a loop in the constraint set. The loop is
/// γ(s) = base(s) + δ(s) in every coordinate except the Killing time, with
/// δ a random trigonometric polynomial of the given amplitude; the time
/// coordinate is then solved from g(γ̇, Y) = c with c chosen so that it closes.
/// Requires Y to be a coordinate field.
pub fn constrained_loop_energy<R: Rng>(
    spec: &ManifoldSpec,
    base: &ClosedGeodesic,
    rng: &mut R,
    amplitude: f64,
    harmonics: usize,
    points: usize,
) -> Result<(f64, f64)> {
    let n = spec.dim();
    let (x0, _) = base.state(0.0);
    let y0 = spec.killing(&x0).ok_or_else(|| Error::Spec("loop energy needs a Killing field".into()))?;
    let t = spec.killing_time_coordinate(&x0).unwrap();
    if (y0[t] - 1.0).abs() > 1e-12 || (0..n).any(|k| k != t && y0[k] != 0.0) {
        return Err(Error::Spec("loop energy needs Y to be a coordinate field".into()));
    }
    let mut coef = vec![vec![(0.0, 0.0); harmonics + 1]; n];
    for (k, row) in coef.iter_mut().enumerate() {
        if k == t {
            continue;
        }
        for (j, c) in row.iter_mut().enumerate().skip(1) {
            let damp = amplitude / (j * j) as f64;
            *c = (rng.gen_range(-damp..damp), rng.gen_range(-damp..damp));
        }
    }
    let h = 1.0 / points as f64;
    let mut xs = Vec::with_capacity(points + 1);
    let mut vs = Vec::with_capacity(points + 1);
    for i in 0..=points {
        let s = i as f64 * h;
        let (mut x, mut v) = base.state(s);
        for k in 0..n {
            if k == t {
                continue;
            }
            for (j, &(a, b)) in coef[k].iter().enumerate().skip(1) {
                let w = 2.0 * std::f64::consts::PI * j as f64;
                x[k] += a * (w * s).cos() + b * (w * s).sin();
                v[k] += -a * w * (w * s).sin() + b * w * (w * s).cos();
            }
        }
        xs.push(x);
        vs.push(v);
    }
    // γ̇^t = (c − Σ_{j≠t} g_tj γ̇^j)/g_tt; the metric does not depend on the time coordinate.
    let mut rest = Vec::with_capacity(points + 1);
    let mut inv = Vec::with_capacity(points + 1);
    for i in 0..=points {
        let g = spec.metric(&xs[i]);
        let r: f64 = (0..n).filter(|&j| j != t).map(|j| g[(t, j)] * vs[i][j]).sum();
        rest.push(r / g[(t, t)]);
        inv.push(1.0 / g[(t, t)]);
    }
    let simpson = |f: &[f64]| -> f64 {
        let p = f.len();
        (0..p)
            .map(|i| {
                let c = if i == 0 || i == p - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * f[i] * h / 3.0
            })
            .sum()
    };
    let c = simpson(&rest) / simpson(&inv);
    let mut energy = Vec::with_capacity(points + 1);
    for i in 0..=points {
        let mut v = vs[i].clone();
        v[t] = c * inv[i] - rest[i];
        let g = spec.metric(&xs[i]);
        let mut e = 0.0;
        for a in 0..n {
            for b in 0..n {
                e += g[(a, b)] * v[a] * v[b];
            }
        }
        energy.push(0.5 * e);
    }
    Ok((simpson(&energy), c))
}
