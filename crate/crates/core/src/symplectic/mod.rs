//! Linear symplectic geometry: spaces, Lagrangian frames, Lagrangian
//! Grassmannian charts and the path indices built on them.

mod indices;
mod path;

pub use indices::*;
pub use path::{PathKind, SympPath};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bilinear::{random::standard_normal, SymForm};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Relative tolerance for membership tests (symplectic matrices, Lagrangian
/// bases) on analytically constructed data.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

/// Sine of the smallest admissible principal angle between a chart's
/// reference Lagrangian and the point being charted.
pub const MIN_TRANSVERSALITY: f64 = 1e-6;

/// Canonical 2n×2n form [[0, I], [−I, 0]].
pub fn canonical_omega(n: usize) -> Mat {
    let mut o = Mat::zeros(2 * n, 2 * n);
    for i in 0..n {
        o[(i, n + i)] = 1.0;
        o[(n + i, i)] = -1.0;
    }
    o
}

#[derive(Debug, Clone)]
pub struct SympSpace {
    omega: Mat,
    darboux: Mat,
}

impl SympSpace {
    pub fn canonical(n: usize) -> Self {
        SympSpace { omega: canonical_omega(n), darboux: Mat::identity(2 * n, 2 * n) }
    }

    pub fn new(omega: Mat) -> Result<Self> {
        let d = omega.nrows();
        if d == 0 || d % 2 != 0 || omega.ncols() != d {
            return Err(Error::Dimension(format!("symplectic form must be even square, got {}x{}", d, omega.ncols())));
        }
        let scale = 1.0 + omega.norm();
        if (&omega + omega.transpose()).norm() > MEMBERSHIP_TOL * scale {
            return Err(Error::Dimension("symplectic form is not antisymmetric".into()));
        }
        if linalg::min_singular(&omega) < MEMBERSHIP_TOL * scale {
            return Err(Error::Degenerate { kernel_dim: d - linalg::rank(&omega, MEMBERSHIP_TOL * scale) });
        }
        let darboux = darboux_basis(&omega);
        Ok(SympSpace { omega, darboux })
    }

    /// V ⊕ V with the form ω ⊕ (−ω).
    pub fn doubled(&self) -> SympSpace {
        let omega = linalg::block_diag(&self.omega, &(-&self.omega));
        let darboux = darboux_basis(&omega);
        SympSpace { omega, darboux }
    }

    pub fn omega(&self) -> &Mat {
        &self.omega
    }

    /// Columns e₁..eₙ, f₁..fₙ with Dᵀ ω D equal to the canonical form.
    pub fn darboux(&self) -> &Mat {
        &self.darboux
    }

    pub fn dim2n(&self) -> usize {
        self.omega.nrows()
    }

    pub fn n(&self) -> usize {
        self.omega.nrows() / 2
    }

    pub fn form(&self, x: &Mat, y: &Mat) -> Mat {
        x.transpose() * &self.omega * y
    }

    pub fn symplectic_residual(&self, phi: &Mat) -> f64 {
        (phi.transpose() * &self.omega * phi - &self.omega).norm() / (1.0 + phi.norm_squared())
    }

    pub fn is_symplectic(&self, phi: &Mat, tol: f64) -> bool {
        phi.shape() == self.omega.shape() && self.symplectic_residual(phi) <= tol
    }

    /// Φ⁻¹ = ω⁻¹ Φᵀ ω.
    pub fn symplectic_inverse(&self, phi: &Mat) -> Mat {
        let oi = linalg::inverse(&self.omega).expect("symplectic form is invertible");
        oi * phi.transpose() * &self.omega
    }

    /// Random symplectic matrix D exp(Ω S) D⁻¹ with S symmetric of the given scale.
    pub fn random_symplectic<R: Rng>(&self, rng: &mut R, scale: f64) -> Mat {
        let x = self.random_algebra_element(rng, scale);
        linalg::expm(&x)
    }

    /// Random element of the Lie algebra sp(V, ω).
    pub fn random_algebra_element<R: Rng>(&self, rng: &mut R, scale: f64) -> Mat {
        let d = self.dim2n();
        let g = crate::bilinear::random::gaussian_matrix(rng, d, d);
        let s = linalg::symmetrize(&g) * scale;
        let x = canonical_omega(self.n()) * s;
        let di = linalg::inverse(&self.darboux).expect("Darboux basis is invertible");
        &self.darboux * x * di
    }

    /// Random Lagrangian D·[X; Y] with X + iY a Haar-distributed unitary.
    pub fn random_lagrangian<R: Rng>(&self, rng: &mut R) -> LagrangianFrame {
        let n = self.n();
        let z = DMatrix::from_fn(n, n, |_, _| Complex64::new(standard_normal(rng), standard_normal(rng)));
        let q = z.qr().q();
        let mut b = Mat::zeros(2 * n, n);
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] = q[(i, j)].re;
                b[(n + i, j)] = q[(i, j)].im;
            }
        }
        LagrangianFrame::from_orthonormal(self.clone(), orthonormalize(&(&self.darboux * b)))
    }

    /// Deterministic pool of Lagrangians used as chart references.
    pub fn lagrangian_pool(&self, count: usize, seed: u64) -> Vec<LagrangianFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (self.dim2n() as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        (0..count).map(|_| self.random_lagrangian(&mut rng)).collect()
    }
}

/// Symplectic Gram–Schmidt: returns D = [e₁..eₙ, f₁..fₙ] with ω(eᵢ, fⱼ) = δᵢⱼ
/// and all other pairings zero.
pub fn darboux_basis(omega: &Mat) -> Mat {
    let d = omega.nrows();
    let n = d / 2;
    let mut rest: Vec<Mat> = (0..d).map(|i| Mat::from_fn(d, 1, |r, _| if r == i { 1.0 } else { 0.0 })).collect();
    let mut es = Vec::with_capacity(n);
    let mut fs = Vec::with_capacity(n);
    let w = |x: &Mat, y: &Mat| (x.transpose() * omega * y)[(0, 0)];
    while es.len() < n {
        let (ei, e) = rest
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .map(|(i, v)| (i, v.clone()))
            .expect("remaining vectors");
        rest.remove(ei);
        let e = &e / e.norm();
        let (fi, _) = rest
            .iter()
            .enumerate()
            .max_by(|a, b| w(&e, a.1).abs().partial_cmp(&w(&e, b.1).abs()).unwrap())
            .expect("a partner vector exists for a nondegenerate form");
        let f = rest.remove(fi);
        let f = &f / w(&e, &f);
        for v in rest.iter_mut() {
            let a = w(v, &f);
            let b = w(v, &e);
            *v = &*v - &e * a + &f * b;
        }
        es.push(e);
        fs.push(f);
    }
    let mut out = Mat::zeros(d, d);
    for i in 0..n {
        out.set_column(i, &es[i].column(0));
        out.set_column(n + i, &fs[i].column(0));
    }
    out
}

/// Thin-QR orthonormal basis of the column span (columns assumed independent).
pub fn orthonormalize(m: &Mat) -> Mat {
    m.clone().qr().q()
}

/// A Lagrangian subspace stored by an orthonormal basis.
#[derive(Debug, Clone)]
pub struct LagrangianFrame {
    space: SympSpace,
    basis: Mat,
}

impl LagrangianFrame {
    pub fn new(space: SympSpace, basis: Mat) -> Result<Self> {
        Self::with_tol(space, basis, MEMBERSHIP_TOL)
    }

    pub fn with_tol(space: SympSpace, basis: Mat, tol: f64) -> Result<Self> {
        let n = space.n();
        if basis.nrows() != space.dim2n() || basis.ncols() != n {
            return Err(Error::Dimension(format!(
                "Lagrangian basis must be {}x{}, got {}x{}",
                space.dim2n(),
                n,
                basis.nrows(),
                basis.ncols()
            )));
        }
        let scale = 1.0 + linalg::spectral_norm(&basis);
        let r = linalg::rank(&basis, 1e-10 * scale);
        if r != n {
            return Err(Error::NotLagrangian { residual: f64::NAN, rank: r });
        }
        let q = orthonormalize(&basis);
        let residual = space.form(&q, &q).norm();
        if residual > tol * (1.0 + space.omega().norm()) {
            return Err(Error::NotLagrangian { residual, rank: r });
        }
        Ok(LagrangianFrame { space, basis: q })
    }

    pub(crate) fn from_orthonormal(space: SympSpace, basis: Mat) -> Self {
        LagrangianFrame { space, basis }
    }

    /// {0} ⊕ Rⁿ in (q, p) coordinates.
    pub fn vertical(space: &SympSpace) -> Self {
        let n = space.n();
        let mut b = Mat::zeros(2 * n, n);
        b.view_mut((n, 0), (n, n)).fill_with_identity();
        LagrangianFrame { space: space.clone(), basis: b }
    }

    /// Rⁿ ⊕ {0} in (q, p) coordinates.
    pub fn horizontal(space: &SympSpace) -> Self {
        let n = space.n();
        let mut b = Mat::zeros(2 * n, n);
        b.view_mut((0, 0), (n, n)).fill_with_identity();
        LagrangianFrame { space: space.clone(), basis: b }
    }

    /// Diagonal {(v, v)} of the doubled space of `base`.
    pub fn diagonal(base: &SympSpace) -> Self {
        Self::graph(base, &Mat::identity(base.dim2n(), base.dim2n()))
    }

    /// Gr(Φ) = {(v, Φv)} in the doubled space of `base`.
    pub fn graph(base: &SympSpace, phi: &Mat) -> Self {
        let d = base.dim2n();
        let b = linalg::vcat(&Mat::identity(d, d), phi);
        LagrangianFrame { space: base.doubled(), basis: orthonormalize(&b) }
    }

    /// L ⊕ L' in the doubled space.
    pub fn direct_sum(&self, other: &LagrangianFrame) -> Self {
        let b = linalg::block_diag(&self.basis, &other.basis);
        LagrangianFrame { space: self.space.doubled(), basis: b }
    }

    /// Image Φ[L].
    pub fn image(&self, phi: &Mat) -> Self {
        LagrangianFrame { space: self.space.clone(), basis: orthonormalize(&(phi * &self.basis)) }
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    pub fn space(&self) -> &SympSpace {
        &self.space
    }

    /// Sine of the smallest principal angle to `other`; zero iff they meet.
    pub fn transversality(&self, other: &LagrangianFrame) -> f64 {
        linalg::transversality(&self.basis, &other.basis)
    }

    pub fn intersection_dim(&self, other: &LagrangianFrame, tol: f64) -> usize {
        let stacked = linalg::hcat(&self.basis, &other.basis);
        let (sv, _) = linalg::full_right_svd(&stacked);
        sv.iter().filter(|&&s| s <= tol).count()
    }

    pub fn same_as(&self, other: &LagrangianFrame, tol: f64) -> bool {
        (linalg::projector(&self.basis) - linalg::projector(&other.basis)).norm() <= tol
    }
}

/// φ_{L0,L1}(L): the form ω(T·,·) on L0, where L is the graph of T: L0 → L1.
/// Expressed in the orthonormal basis of L0.
pub fn chart_form(l: &LagrangianFrame, l0: &LagrangianFrame, l1: &LagrangianFrame) -> Result<SymForm> {
    let tol = 1e-10;
    let d01 = l0.intersection_dim(l1, tol);
    if d01 > 0 || l0.transversality(l1) < MIN_TRANSVERSALITY {
        return Err(Error::NotTransverse { intersection_dim: d01.max(1) });
    }
    let d1 = l.intersection_dim(l1, tol);
    if d1 > 0 || l.transversality(l1) < MIN_TRANSVERSALITY {
        return Err(Error::NotTransverse { intersection_dim: d1.max(1) });
    }
    let chart = Chart::new(l0.space(), l0.basis(), l1.basis())?;
    let f = chart.form(l.basis())?;
    let tol = 1e-9 * (1.0 + linalg::spectral_norm(&f));
    SymForm::with_tol(f, tol)
}

/// Precomputed data for evaluating φ_{L0,L1} repeatedly.
pub(crate) struct Chart {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pairing: Mat,
    n: usize,
}

impl Chart {
    pub(crate) fn new(space: &SympSpace, a: &Mat, c: &Mat) -> Result<Self> {
        let n = a.ncols();
        let ac = linalg::hcat(a, c);
        let lu = ac.lu();
        if !lu.is_invertible() {
            return Err(Error::NotTransverse { intersection_dim: 1 });
        }
        // Cᵀ ω A pairs L1 coordinates with L0 coordinates.
        let pairing = c.transpose() * space.omega() * a;
        Ok(Chart { lu, pairing, n })
    }

    /// Chart form of the Lagrangian with basis `m`, unsymmetrized.
    pub(crate) fn raw_form(&self, m: &Mat) -> Result<Mat> {
        let coeffs = self.lu.solve(m).ok_or(Error::NotTransverse { intersection_dim: 1 })?;
        let a = coeffs.rows(0, self.n).into_owned();
        let c = coeffs.rows(self.n, self.n).into_owned();
        let ai = a.try_inverse().ok_or(Error::NotTransverse { intersection_dim: 1 })?;
        let k = c * ai;
        Ok(k.transpose() * &self.pairing)
    }

    pub(crate) fn form(&self, m: &Mat) -> Result<Mat> {
        Ok(linalg::symmetrize(&self.raw_form(m)?))
    }
}

/// Random path factory shared by the self-test and the test suites.
pub mod random {
    use super::*;
    use std::f64::consts::PI;

    /// t ↦ P₀ exp(c₁ t X₁ + c₂ sin(2πt) X₂) on [0, 1].
    pub fn open_path<R: Rng>(rng: &mut R, space: &SympSpace, scale: f64) -> SympPath {
        let p0 = space.random_symplectic(rng, 0.5);
        let x1 = space.random_algebra_element(rng, scale);
        let x2 = space.random_algebra_element(rng, scale);
        let c1 = rng.gen_range(0.5..2.0);
        let c2 = rng.gen_range(-1.0..1.0);
        SympPath::from_fn(space.clone(), PathKind::Symplectic, 0.0, 1.0, 64, move |t| {
            &p0 * linalg::expm(&(&x1 * (c1 * t) + &x2 * (c2 * (2.0 * PI * t).sin())))
        })
    }

    /// Loop based at the identity: exp(sin(2πt) X) composed with a product of
    /// planar rotations by 2π kᵢ t.
    pub fn loop_path<R: Rng>(rng: &mut R, space: &SympSpace, scale: f64) -> SympPath {
        let n = space.n();
        let x = space.random_algebra_element(rng, scale);
        let ks: Vec<f64> = (0..n).map(|_| rng.gen_range(-2i32..=2) as f64).collect();
        let d = space.darboux().clone();
        let di = linalg::inverse(&d).expect("Darboux basis is invertible");
        SympPath::from_fn(space.clone(), PathKind::Symplectic, 0.0, 1.0, 64, move |t| {
            let u = &d * rotation_blocks(&ks, 2.0 * PI * t) * &di;
            linalg::expm(&(&x * (2.0 * PI * t).sin())) * u
        })
    }

    /// Block rotation acting on each (qᵢ, pᵢ) plane by angle kᵢ θ.
    pub fn rotation_blocks(ks: &[f64], theta: f64) -> Mat {
        let n = ks.len();
        let mut r = Mat::zeros(2 * n, 2 * n);
        for (i, k) in ks.iter().enumerate() {
            let (s, c) = (k * theta).sin_cos();
            r[(i, i)] = c;
            r[(i, n + i)] = -s;
            r[(n + i, i)] = s;
            r[(n + i, n + i)] = c;
        }
        r
    }
}
