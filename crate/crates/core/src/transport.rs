//! Periodic frames along closed geodesics and the linearized flow in frame
//! coordinates.
//!
//! A Jacobi field J with frame components w and covector components
//! α = η·(components of DJ) evolves by w' = ηα − A w, α' = −ηK w − Aᵀα, where
//! η is the frame Gram matrix, K the tidal operator V ↦ R(V, γ̇)γ̇ and A the
//! connection of the frame. For the parallel frame A = 0; a periodic frame
//! F = E·M differs from the parallel frame E by M(s) ∈ O(η), so its
//! fundamental solution is diag(M⁻¹, Mᵀ)·Φ_par.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geodesic::ClosedGeodesic;
use crate::linalg::{self, Mat};
use crate::ode::{dopri5, DenseSolution};
use crate::symplectic::{
    conley_zehnder_detail, maslov_detail, LagrangianFrame, MaslovDetail, PathKind, SympPath, SympSpace,
};

/// Zero band used for chart forms of integrated paths.
pub const INTEGRATED_PATH_TOL: f64 = 1e-7;

/// Interpolation profile β: [0, 1] → [0, 1] with β − β(0), β − β(1) vanishing
/// to second order at the ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BumpProfile {
    /// ψ(s)/(ψ(s) + ψ(1 − s)) with ψ(t) = exp(−1/t); flat to all orders.
    Smooth,
    /// 6s⁵ − 15s⁴ + 10s³.
    Quintic,
}

impl BumpProfile {
    pub fn value(self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        match self {
            BumpProfile::Smooth => {
                let psi = |t: f64| if t <= 0.0 { 0.0 } else { (-1.0 / t).exp() };
                let (a, b) = (psi(s), psi(1.0 - s));
                a / (a + b)
            }
            BumpProfile::Quintic => s * s * s * (10.0 - 15.0 * s + 6.0 * s * s),
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        if s <= 0.0 || s >= 1.0 {
            return 0.0;
        }
        match self {
            BumpProfile::Smooth => {
                // β = 1/(1 + exp(1/s − 1/(1−s))).
                let u = 1.0 / s - 1.0 / (1.0 - s);
                let du = -1.0 / (s * s) - 1.0 / ((1.0 - s) * (1.0 - s));
                if u > 700.0 || u < -700.0 {
                    return 0.0;
                }
                let e = u.exp();
                -e * du / ((1.0 + e) * (1.0 + e))
            }
            BumpProfile::Quintic => 30.0 * s * s * (1.0 - s) * (1.0 - s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Twist {
    /// Two spacelike frame directions spanning the rotation plane.
    pub plane: (usize, usize),
    pub turns: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrivializationOptions {
    pub profile: BumpProfile,
    pub twist: Option<Twist>,
}

impl Default for TrivializationOptions {
    fn default() -> Self {
        TrivializationOptions { profile: BumpProfile::Smooth, twist: None }
    }
}

/// Frame along a closed geodesic, with the parallel frame and the parallel
/// fundamental solution integrated together.
#[derive(Debug, Clone)]
pub struct TransferFrame {
    geodesic: ClosedGeodesic,
    sol: DenseSolution,
    eta: Vec<f64>,
    holonomy: Mat,
    generator: Mat,
    twist_generator: Mat,
    pub options: TrivializationOptions,
    pub periodic: bool,
    pub orientation_preserving: bool,
    /// Why no periodic correction was built, when `periodic` is false.
    pub note: Option<String>,
    /// ‖D F(1) − F(0)‖ for the corrected frame.
    pub frame_closure: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameSummary {
    pub eta: Vec<f64>,
    pub holonomy: Vec<Vec<f64>>,
    pub holonomy_det: f64,
    pub periodic: bool,
    pub orientation_preserving: bool,
    pub frame_closure: f64,
    pub options: TrivializationOptions,
    pub note: Option<String>,
}

pub(crate) fn mat_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

/// η-orthonormal basis at x with ascending signature: EᵀG E = diag(η).
pub fn orthonormal_frame(g: &Mat) -> (Mat, Vec<f64>) {
    let (vals, vecs) = linalg::sym_eigen_sorted(g);
    let n = vals.len();
    let mut e = vecs.clone();
    for j in 0..n {
        let s = 1.0 / vals[j].abs().sqrt();
        for i in 0..n {
            e[(i, j)] *= s;
        }
    }
    (e, vals.iter().map(|l| l.signum()).collect())
}

/// Integrates x, v, the parallel frame E and Φ_par over [0, t1].
fn transport_solution(g: &ClosedGeodesic, e0: &Mat, eta: &[f64], t1: f64) -> Result<DenseSolution> {
    let spec = g.spec_arc();
    let n = spec.dim();
    let mut y0: Vec<f64> = g.x0.iter().chain(&g.v0).cloned().collect();
    y0.extend(e0.iter());
    y0.extend(linalg::identity(2 * n).iter());
    let eta_m = Mat::from_diagonal(&nalgebra::DVector::from_column_slice(eta));
    let rhs = |_: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let (x, rest) = y.split_at(n);
        let (v, rest) = rest.split_at(n);
        let (ev, ph) = rest.split_at(n * n);
        let c = spec.christoffel(x)?;
        dy[..n].copy_from_slice(v);
        let acc = c.contract(v, v);
        for k in 0..n {
            dy[n + k] = -acc[k];
        }
        let e = Mat::from_column_slice(n, n, ev);
        let de = -(c.along(v) * &e);
        dy[2 * n..2 * n + n * n].copy_from_slice(de.as_slice());
        let t = c.tidal(v);
        let k = linalg::solve(&e, &(t * &e))?;
        let gen = linalg::blocks(&Mat::zeros(n, n), &eta_m, &(-(&eta_m * k)), &Mat::zeros(n, n));
        let phi = Mat::from_column_slice(2 * n, 2 * n, ph);
        let dphi = gen * phi;
        dy[2 * n + n * n..].copy_from_slice(dphi.as_slice());
        Ok(())
    };
    dopri5(rhs, 0.0, t1, &y0, g.ode_options())
}

/// Parallel frame corrected by exp(β(s)·log(H⁻¹)) so that it closes up,
/// where H is the holonomy. Orientation-reversing orbits (det H < 0) and
/// holonomies without a real principal logarithm get the uncorrected
/// parallel frame and `periodic = false`.
pub fn periodic_trivialization(g: &ClosedGeodesic, opts: TrivializationOptions) -> Result<TransferFrame> {
    let spec = g.spec();
    let n = spec.dim();
    let (e0, eta) = orthonormal_frame(&spec.metric(&g.x0));
    let sol = transport_solution(g, &e0, &eta, 1.0)?;
    let y1 = sol.final_state();
    let e1 = Mat::from_column_slice(n, n, &y1[2 * n..2 * n + n * n]);
    let d = Mat::from_diagonal(&nalgebra::DVector::from_column_slice(&g.identification));
    let holonomy = linalg::solve(&e0, &(d * &e1))?;
    let det = holonomy.determinant();
    let orientation_preserving = det > 0.0;

    let mut twist_generator = Mat::zeros(n, n);
    if let Some(tw) = opts.twist {
        let (i, j) = tw.plane;
        if i >= n || j >= n || i == j || eta[i] < 0.0 || eta[j] < 0.0 {
            return Err(Error::Dimension(format!("twist plane ({i}, {j}) must span two spacelike frame directions")));
        }
        twist_generator[(i, j)] = -2.0 * std::f64::consts::PI * tw.turns as f64;
        twist_generator[(j, i)] = 2.0 * std::f64::consts::PI * tw.turns as f64;
    }

    let (generator, periodic, note) = if !orientation_preserving {
        (Mat::zeros(n, n), false, Some(format!("holonomy determinant {det:.6} is negative")))
    } else {
        let hinv = linalg::inverse(&holonomy)?;
        match linalg::logm(&hinv) {
            Ok(l) => (l, true, None),
            Err(e) => (Mat::zeros(n, n), false, Some(e.to_string())),
        }
    };
    let mut frame = TransferFrame {
        geodesic: g.clone(),
        sol,
        eta,
        holonomy,
        generator,
        twist_generator,
        options: opts,
        periodic,
        orientation_preserving,
        note,
        frame_closure: 0.0,
    };
    let d = Mat::from_diagonal(&nalgebra::DVector::from_column_slice(&g.identification));
    frame.frame_closure = (d * frame.frame(1.0) - frame.frame(0.0)).norm();
    Ok(frame)
}

impl TransferFrame {
    pub fn geodesic(&self) -> &ClosedGeodesic {
        &self.geodesic
    }

    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn eta_matrix(&self) -> Mat {
        Mat::from_diagonal(&nalgebra::DVector::from_column_slice(&self.eta))
    }

    pub fn holonomy(&self) -> &Mat {
        &self.holonomy
    }

    /// log(H⁻¹), or zero when no correction is applied.
    pub fn generator(&self) -> &Mat {
        &self.generator
    }

    pub fn twist_generator(&self) -> &Mat {
        &self.twist_generator
    }

    fn raw(&self, s: f64) -> Vec<f64> {
        self.sol.eval(s)
    }

    pub fn state(&self, s: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.dim();
        let y = self.raw(s);
        (y[..n].to_vec(), y[n..2 * n].to_vec())
    }

    /// Parallel frame E(s) (columns are frame vectors).
    pub fn parallel(&self, s: f64) -> Mat {
        let n = self.dim();
        Mat::from_column_slice(n, n, &self.raw(s)[2 * n..2 * n + n * n])
    }

    /// Fundamental solution in the parallel frame.
    pub fn phi_parallel(&self, s: f64) -> Mat {
        let n = self.dim();
        Mat::from_column_slice(2 * n, 2 * n, &self.raw(s)[2 * n + n * n..])
    }

    /// M(s) = exp(β(s)·L)·exp(s·X) with L = log(H⁻¹) and X the twist generator.
    pub fn correction(&self, s: f64) -> Mat {
        let b = self.options.profile.value(s);
        linalg::expm(&(&self.generator * b)) * linalg::expm(&(&self.twist_generator * s))
    }

    /// Connection A = M⁻¹M' of the corrected frame relative to the parallel one.
    pub fn connection(&self, s: f64) -> Mat {
        let db = self.options.profile.derivative(s);
        let t = linalg::expm(&(&self.twist_generator * s));
        let tinv = linalg::expm(&(&self.twist_generator * (-s)));
        &tinv * (&self.generator * db) * &t + &self.twist_generator
    }

    /// Frame F(s) = E(s)·M(s).
    pub fn frame(&self, s: f64) -> Mat {
        self.parallel(s) * self.correction(s)
    }

    /// Fundamental solution Φ_F(s) = diag(M⁻¹, Mᵀ)·Φ_par(s).
    pub fn phi(&self, s: f64) -> Mat {
        let m = self.correction(s);
        let minv = linalg::inverse(&m).expect("frame correction is invertible");
        linalg::block_diag(&minv, &m.transpose()) * self.phi_parallel(s)
    }

    /// Tidal operator in frame components, K_F = F⁻¹ T F.
    pub fn tidal(&self, s: f64) -> Result<Mat> {
        let (x, v) = self.state(s);
        let c = self.geodesic.spec().christoffel(&x)?;
        let f = self.frame(s);
        linalg::solve(&f, &(c.tidal(&v) * &f))
    }

    /// Frame components of Y and of ∇_γ̇ Y at γ(s).
    pub fn killing_components(&self, s: f64) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let spec = self.geodesic.spec();
        let (x, v) = self.state(s);
        let (y, dy) = match (spec.killing(&x), spec.killing_jacobian(&x)) {
            (Some(y), Some(dy)) => (y, dy),
            _ => return Ok(None),
        };
        let gamma = spec.gamma(&x)?;
        let n = self.dim();
        let cov: Vec<f64> = (0..n)
            .map(|k| {
                let mut s = 0.0;
                for i in 0..n {
                    s += dy[(k, i)] * v[i];
                    for j in 0..n {
                        s += gamma[k][(i, j)] * v[i] * y[j];
                    }
                }
                s
            })
            .collect();
        let f = self.frame(s);
        let yc = linalg::solve(&f, &Mat::from_column_slice(n, 1, y.as_slice()))?;
        let dc = linalg::solve(&f, &Mat::from_column_slice(n, 1, &cov))?;
        Ok(Some((yc.iter().cloned().collect(), dc.iter().cloned().collect())))
    }

    /// The linearized return map diag(H, H⁻ᵀ)·Φ_par(1).
    pub fn poincare(&self) -> PoincareMap {
        let hinvt = linalg::inverse(&self.holonomy).expect("holonomy is invertible").transpose();
        let m = linalg::block_diag(&self.holonomy, &hinvt) * self.phi_parallel(1.0);
        PoincareMap::new(m)
    }

    pub fn summary(&self) -> FrameSummary {
        FrameSummary {
            eta: self.eta.clone(),
            holonomy: mat_rows(&self.holonomy),
            holonomy_det: self.holonomy.determinant(),
            periodic: self.periodic,
            orientation_preserving: self.orientation_preserving,
            frame_closure: self.frame_closure,
            options: self.options,
            note: self.note.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoincareMap {
    pub matrix: Mat,
}

impl PoincareMap {
    pub fn new(matrix: Mat) -> Self {
        PoincareMap { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows() / 2
    }

    pub fn symplectic_residual(&self) -> f64 {
        SympSpace::canonical(self.dim()).symplectic_residual(&self.matrix)
    }

    /// Blocks (P11, P12, P21, P22).
    pub fn blocks(&self) -> (Mat, Mat, Mat, Mat) {
        let n = self.dim();
        let b = |r, c| self.matrix.view((r, c), (n, n)).into_owned();
        (b(0, 0), b(0, n), b(n, 0), b(n, n))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        mat_rows(&self.matrix)
    }
}

/// Output of the Jacobi transfer: the Lagrangian path ℓ = Φ_F·L_vert, the
/// symplectic path Φ_F and the Poincaré map.
#[derive(Debug, Clone)]
pub struct JacobiTransfer {
    pub frame: Arc<TransferFrame>,
    pub ell_path: SympPath,
    pub phi_path: SympPath,
    pub poincare: PoincareMap,
    pub symplectic_residual: f64,
    pub lagrangian_residual: f64,
    /// Relative residuals ‖Pz − z‖/‖z‖ for z = (γ̇, 0) and z = (Y, g∇_γ̇Y).
    pub fixed_vector_residuals: Vec<(String, f64)>,
}

pub fn jacobi_transfer(frame: TransferFrame) -> Result<JacobiTransfer> {
    let n = frame.dim();
    let frame = Arc::new(frame);
    let space = SympSpace::canonical(n);
    let f1 = frame.clone();
    let phi_path = SympPath::from_fn(space.clone(), PathKind::Symplectic, 0.0, 1.0, 64, move |s| f1.phi(s))
        .with_tol(INTEGRATED_PATH_TOL);
    let f2 = frame.clone();
    let vertical = LagrangianFrame::vertical(&space).basis().clone();
    let ell_path = SympPath::from_fn(space.clone(), PathKind::Lagrangian, 0.0, 1.0, 64, move |s| f2.phi(s) * &vertical)
        .with_tol(INTEGRATED_PATH_TOL);

    let mut symplectic_residual: f64 = 0.0;
    let mut lagrangian_residual: f64 = 0.0;
    for i in 0..=128 {
        let s = i as f64 / 128.0;
        let p = frame.phi(s);
        symplectic_residual = symplectic_residual.max(space.symplectic_residual(&p) / (1.0 + p.norm() * p.norm()));
        let l = crate::symplectic::orthonormalize(&ell_path.eval(s));
        lagrangian_residual = lagrangian_residual.max(space.form(&l, &l).norm());
    }

    let poincare = frame.poincare();
    let e0 = frame.parallel(0.0);
    let eta = frame.eta_matrix();
    let g = frame.geodesic();
    let mut fixed = Vec::new();
    let mut check = |name: &str, w: Mat, a: Mat| {
        let z = linalg::vcat(&w, &a);
        let r = (&poincare.matrix * &z - &z).norm() / z.norm().max(f64::MIN_POSITIVE);
        fixed.push((name.to_string(), r));
    };
    let c = linalg::solve(&e0, &Mat::from_column_slice(n, 1, &g.v0))?;
    check("geodesic-velocity", c, Mat::zeros(n, 1));
    if let Some((y, dy)) = frame.killing_components(0.0)? {
        let y = Mat::from_column_slice(n, 1, &y);
        let dy = &eta * Mat::from_column_slice(n, 1, &dy);
        check("killing-field", y, dy);
    }
    Ok(JacobiTransfer {
        frame,
        ell_path,
        phi_path,
        poincare: poincare.clone(),
        symplectic_residual,
        lagrangian_residual,
        fixed_vector_residuals: fixed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GeodesicMaslov {
    pub index: i64,
    pub detail: MaslovDetail,
    /// True when computed with a non-periodic frame.
    pub fixed_endpoint_reading: bool,
}

impl JacobiTransfer {
    fn require_periodic(&self) -> Result<()> {
        if self.frame.periodic {
            Ok(())
        } else if !self.frame.orientation_preserving {
            Err(Error::OrientationReversing)
        } else {
            Err(Error::Logarithm(self.frame.note.clone().unwrap_or_default()))
        }
    }

    /// i_M(γ^(N)): L_vert-Maslov index of Φ_F^(N)·L_vert on [0, N], initial
    /// endpoint included.
    pub fn maslov_iterate(&self, n_iter: usize) -> Result<GeodesicMaslov> {
        let space = SympSpace::canonical(self.frame.dim());
        let l0 = LagrangianFrame::vertical(&space);
        if n_iter == 1 {
            let detail = maslov_detail(&self.ell_path, &l0)?;
            return Ok(GeodesicMaslov { index: detail.index, detail, fixed_endpoint_reading: !self.frame.periodic });
        }
        self.require_periodic()?;
        let path = self.phi_path.iterate(n_iter)?.image_of(&l0)?;
        let detail = maslov_detail(&path, &l0)?;
        Ok(GeodesicMaslov { index: detail.index, detail, fixed_endpoint_reading: false })
    }

    /// i_CZ of Φ_F on [0, N].
    pub fn cz_iterate(&self, n_iter: usize) -> Result<MaslovDetail> {
        if n_iter > 1 {
            self.require_periodic()?;
        }
        let p = if n_iter == 1 { self.phi_path.clone() } else { self.phi_path.iterate(n_iter)? };
        conley_zehnder_detail(&p)
    }
}

/// i_M(γ) for a closed geodesic, with the default periodic trivialization.
pub fn geodesic_maslov(g: &ClosedGeodesic) -> Result<GeodesicMaslov> {
    let t = jacobi_transfer(periodic_trivialization(g, TrivializationOptions::default())?)?;
    t.maslov_iterate(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_profiles() {
        for p in [BumpProfile::Smooth, BumpProfile::Quintic] {
            assert_eq!(p.value(0.0), 0.0);
            assert!((p.value(1.0) - 1.0).abs() < 1e-15);
            assert!((p.value(0.5) - 0.5).abs() < 1e-15);
            for i in 1..20 {
                let s = i as f64 / 20.0;
                let h = 1e-6;
                let fd = (p.value(s + h) - p.value(s - h)) / (2.0 * h);
                assert!((fd - p.derivative(s)).abs() < 1e-6, "{p:?} at {s}");
            }
        }
    }
}
