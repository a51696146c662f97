//! Index calculus for finite-dimensional real symmetric bilinear forms.
//!
//! Every eigenvalue or singular-value decision records how far it was from the
//! threshold (in decades) so that borderline integer answers can be surfaced.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// A decision is marginal when its deciding quantity is within one decade of
/// the threshold.
pub const MARGINAL_DECADES: f64 = 1.0;

/// Relative tolerance used for singular-value decisions on orthonormal
/// subspace bases (intersections, spans).
pub const SUBSPACE_TOL: f64 = 1e-7;

/// Distance, in decades, between `value` and `tol`. Values of exactly zero are
/// treated as infinitely far below.
pub fn decade_margin(value: f64, tol: f64) -> f64 {
    let v = value.abs();
    if v == 0.0 {
        return f64::INFINITY;
    }
    (v / tol).log10().abs()
}

#[derive(Debug, Clone)]
pub struct SymForm {
    matrix: Mat,
    tol: f64,
}

impl SymForm {
    /// Builds a form with the default tolerance 1e-9·(1 + ‖B‖₂).
    pub fn new(matrix: Mat) -> Result<Self> {
        let tol = 1e-9 * (1.0 + linalg::spectral_norm(&matrix));
        Self::with_tol(matrix, tol)
    }

    pub fn with_tol(matrix: Mat, tol: f64) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension(format!(
                "form matrix is {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !(tol > 0.0) {
            return Err(Error::Dimension(format!("tolerance must be positive, got {tol}")));
        }
        let asym = linalg::asymmetry(&matrix);
        if asym > tol {
            return Err(Error::NotSymmetric { asymmetry: asym, tol });
        }
        Ok(SymForm { matrix: linalg::symmetrize(&matrix), tol })
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eval(&self, x: &Mat, y: &Mat) -> Mat {
        x.transpose() * &self.matrix * y
    }

    /// Restriction to a subspace, expressed in its orthonormal basis and
    /// keeping the parent tolerance.
    pub fn restrict(&self, s: &Subspace) -> SymForm {
        let m = s.basis.transpose() * &self.matrix * &s.basis;
        SymForm { matrix: linalg::symmetrize(&m), tol: self.tol }
    }

    /// Congruence transform GᵀBG.
    pub fn congruent(&self, g: &Mat) -> Result<SymForm> {
        let m = g.transpose() * &self.matrix * g;
        let tol = 1e-9 * (1.0 + linalg::spectral_norm(&m));
        SymForm::with_tol(linalg::symmetrize(&m), tol)
    }

    pub fn inertia(&self) -> Inertia {
        let ev = linalg::sym_eigenvalues(&self.matrix);
        let mut out = Inertia { n_minus: 0, n_plus: 0, n_zero: 0, margin: f64::INFINITY };
        for &l in &ev {
            if l < -self.tol {
                out.n_minus += 1;
            } else if l > self.tol {
                out.n_plus += 1;
            } else {
                out.n_zero += 1;
            }
            out.margin = out.margin.min(decade_margin(l, self.tol));
        }
        out
    }

    pub fn kernel(&self) -> Subspace {
        let (vals, vecs) = linalg::sym_eigen_sorted(&self.matrix);
        let cols: Vec<usize> = (0..vals.len()).filter(|&i| vals[i].abs() <= self.tol).collect();
        let mut basis = Mat::zeros(self.dim(), cols.len());
        for (j, &i) in cols.iter().enumerate() {
            basis.set_column(j, &vecs.column(i));
        }
        Subspace { basis }
    }

    pub fn is_nondegenerate(&self) -> bool {
        self.inertia().n_zero == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Inertia {
    pub n_minus: usize,
    pub n_plus: usize,
    pub n_zero: usize,
    /// Smallest distance in decades of any eigenvalue from the zero band edge.
    pub margin: f64,
}

impl Inertia {
    pub fn marginal(&self) -> bool {
        self.margin < MARGINAL_DECADES
    }
}

/// Counts of negative, positive and null eigenvalues of `b`.
pub fn index_coindex_nullity(b: &SymForm) -> (usize, usize, usize) {
    let i = b.inertia();
    (i.n_minus, i.n_plus, i.n_zero)
}

/// A linear subspace stored by an orthonormal basis.
#[derive(Debug, Clone)]
pub struct Subspace {
    basis: Mat,
}

impl Subspace {
    /// Orthonormalizes the columns of `basis`; rejects rank-deficient input.
    pub fn new(basis: Mat) -> Result<Self> {
        let scale = 1.0 + linalg::spectral_norm(&basis);
        let q = linalg::column_space(&basis, SUBSPACE_TOL * scale);
        if q.ncols() != basis.ncols() {
            return Err(Error::Dimension(format!(
                "basis has {} columns but rank {}",
                basis.ncols(),
                q.ncols()
            )));
        }
        Ok(Subspace { basis: q })
    }

    /// Column span of an arbitrary matrix, dropping dependent directions.
    pub fn span(m: &Mat) -> Self {
        let scale = 1.0 + linalg::spectral_norm(m);
        Subspace { basis: linalg::column_space(m, SUBSPACE_TOL * scale) }
    }

    pub fn zero(ambient: usize) -> Self {
        Subspace { basis: Mat::zeros(ambient, 0) }
    }

    pub fn full(ambient: usize) -> Self {
        Subspace { basis: Mat::identity(ambient, ambient) }
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }

    pub fn intersection(&self, other: &Subspace) -> Subspace {
        if self.dim() == 0 || other.dim() == 0 {
            return Subspace::zero(self.ambient());
        }
        let stacked = linalg::hcat(&self.basis, &(-&other.basis));
        let coeffs = linalg::null_space(&stacked, SUBSPACE_TOL);
        let a = coeffs.rows(0, self.dim()).into_owned();
        Subspace::span(&(&self.basis * a))
    }

    pub fn sum(&self, other: &Subspace) -> Subspace {
        Subspace::span(&linalg::hcat(&self.basis, &other.basis))
    }

    pub fn contains(&self, other: &Subspace) -> bool {
        let p = linalg::projector(&self.basis);
        (&other.basis - p * &other.basis).norm() <= SUBSPACE_TOL * (1.0 + other.dim() as f64)
    }

    pub fn same_span(&self, other: &Subspace) -> bool {
        self.dim() == other.dim() && self.contains(other) && other.contains(self)
    }

    /// Euclidean orthogonal complement.
    pub fn orthogonal_complement(&self) -> Subspace {
        if self.dim() == 0 {
            return Subspace::full(self.ambient());
        }
        Subspace { basis: linalg::null_space(&self.basis.transpose(), SUBSPACE_TOL) }
    }
}

/// B-orthogonal complement {x : B(x, s) = 0 for all s ∈ S}.
pub fn b_orthogonal(b: &SymForm, s: &Subspace) -> Subspace {
    if s.dim() == 0 {
        return Subspace::full(b.dim());
    }
    let m = s.basis.transpose() * b.matrix();
    Subspace { basis: linalg::null_space(&m, b.tol()) }
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitReport {
    pub n_b: usize,
    pub n_w: usize,
    pub n_s: usize,
    pub dim_ws: usize,
    pub dim_wk: usize,
    pub holds: bool,
    pub marginal: bool,
    pub margin: f64,
}

/// Checks n₋(B) = n₋(B|W) + n₋(B|S) + dim(W∩S) − dim(W∩Ker B) for
/// S = W^{⊥B}.
pub fn splitting_check(b: &SymForm, w: &Subspace) -> SplitReport {
    let s = b_orthogonal(b, w);
    let ib = b.inertia();
    let iw = b.restrict(w).inertia();
    let is = b.restrict(&s).inertia();
    let ws = w.intersection(&s);
    let wk = w.intersection(&b.kernel());
    let margin = ib.margin.min(iw.margin).min(is.margin).min(orthogonality_margin(b, w));
    let lhs = ib.n_minus as i64;
    let rhs = iw.n_minus as i64 + is.n_minus as i64 + ws.dim() as i64 - wk.dim() as i64;
    SplitReport {
        n_b: ib.n_minus,
        n_w: iw.n_minus,
        n_s: is.n_minus,
        dim_ws: ws.dim(),
        dim_wk: wk.dim(),
        holds: lhs == rhs,
        marginal: margin < MARGINAL_DECADES,
        margin,
    }
}

/// Decade margin of the rank decision behind the B-orthogonal complement.
fn orthogonality_margin(b: &SymForm, w: &Subspace) -> f64 {
    if w.dim() == 0 {
        return f64::INFINITY;
    }
    let m = w.basis.transpose() * b.matrix();
    linalg::singular_values(&m)
        .iter()
        .map(|&s| decade_margin(s, b.tol()))
        .fold(f64::INFINITY, f64::min)
}

/// Checks n₋(B) = n₋(B|Z^{⊥B}) + dim Z for an isotropic Z of a nondegenerate B.
pub fn isotropic_reduction_check(b: &SymForm, z: &Subspace) -> Result<bool> {
    let zbz = b.eval(z.basis(), z.basis()).norm();
    if zbz > b.tol() {
        return Err(Error::NotIsotropic { norm: zbz });
    }
    let nb = b.inertia();
    if nb.n_zero != 0 {
        return Err(Error::Degenerate { kernel_dim: nb.n_zero });
    }
    let zp = b_orthogonal(b, z);
    let nz = b.restrict(&zp).inertia();
    Ok(nb.n_minus == nz.n_minus + z.dim())
}

/// Random instance generators used by the self-test and the test suites.
pub mod random {
    use super::*;

    pub fn gaussian_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> Mat {
        DMatrix::from_fn(r, c, |_, _| standard_normal(rng))
    }

    pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
        rng.sample(rand_distr::StandardNormal)
    }

    /// GᵀDG with a random invertible G and prescribed inertia. Diagonal
    /// magnitudes are kept in [0.5, 2] so signs stay far from the zero band.
    pub fn form_with_inertia<R: Rng>(rng: &mut R, n_minus: usize, n_plus: usize, n_zero: usize) -> Mat {
        let d = n_minus + n_plus + n_zero;
        let mut diag = Vec::with_capacity(d);
        for _ in 0..n_minus {
            diag.push(-rng.gen_range(0.5..2.0));
        }
        for _ in 0..n_plus {
            diag.push(rng.gen_range(0.5..2.0));
        }
        diag.extend(std::iter::repeat(0.0).take(n_zero));
        let q = random_orthogonal(rng, d);
        let dm = Mat::from_diagonal(&nalgebra::DVector::from_vec(diag));
        linalg::symmetrize(&(q.transpose() * dm * q))
    }

    pub fn random_orthogonal<R: Rng>(rng: &mut R, d: usize) -> Mat {
        if d == 0 {
            return Mat::zeros(0, 0);
        }
        let g = gaussian_matrix(rng, d, d);
        g.qr().q()
    }

    pub fn random_subspace<R: Rng>(rng: &mut R, d: usize, k: usize) -> Subspace {
        Subspace::span(&gaussian_matrix(rng, d, k))
    }

    /// A subspace W with W ∩ W^{⊥B} ≠ {0}: it contains a B-isotropic vector x
    /// and is otherwise drawn from x^{⊥B}. Requires B indefinite or degenerate.
    pub fn subspace_with_isotropic_overlap<R: Rng>(rng: &mut R, b: &SymForm, k: usize) -> Option<Subspace> {
        let d = b.dim();
        let (vals, vecs) = linalg::sym_eigen_sorted(b.matrix());
        let neg: Vec<usize> = (0..d).filter(|&i| vals[i] < -b.tol()).collect();
        let pos: Vec<usize> = (0..d).filter(|&i| vals[i] > b.tol()).collect();
        let zero: Vec<usize> = (0..d).filter(|&i| vals[i].abs() <= b.tol()).collect();
        let x = if !neg.is_empty() && !pos.is_empty() {
            let i = neg[rng.gen_range(0..neg.len())];
            let j = pos[rng.gen_range(0..pos.len())];
            let a = (vals[j] / -vals[i]).sqrt();
            vecs.column(i) * a + vecs.column(j)
        } else if !zero.is_empty() {
            vecs.column(zero[rng.gen_range(0..zero.len())]).into_owned()
        } else {
            return None;
        };
        let x = Mat::from_column_slice(d, 1, x.as_slice());
        let xperp = b_orthogonal(b, &Subspace::span(&x));
        let extra = k.saturating_sub(1).min(xperp.dim().saturating_sub(1));
        let coeffs = gaussian_matrix(rng, xperp.dim(), extra);
        let w = linalg::hcat(&x, &(xperp.basis() * coeffs));
        Some(Subspace::span(&w))
    }
}
