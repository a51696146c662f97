//! Dense linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vec64 = DVector<f64>;

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    // Only used for scaling tolerances, so the squared Gram matrix is accurate enough.
    let g = if m.nrows() < m.ncols() { m * m.transpose() } else { m.transpose() * m };
    sym_eigenvalues(&g).last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Mat) -> f64 {
    (m - m.transpose()).norm()
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Eigen-decomposition with ascending eigenvalues; columns of the returned
/// matrix are the matching eigenvectors.
pub fn sym_eigen_sorted(m: &Mat) -> (Vec<f64>, Mat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), Mat::zeros(0, 0));
    }
    let se = SymmetricEigen::new(symmetrize(m));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let vals = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = Mat::zeros(n, n);
    for (j, &i) in idx.iter().enumerate() {
        vecs.set_column(j, &se.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Thin singular value decomposition m = U diag(s) Vᵀ with s descending.
/// U is r×k and V is c×k with orthonormal columns, k = min(r, c).
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

/// One-sided Jacobi SVD. nalgebra's bidiagonal SVD returns wrong factors on
/// a noticeable fraction of rank-deficient inputs, which breaks null-space
/// and rank decisions; Jacobi rotations are slower but accurate to working
/// precision relative to each singular value.
pub fn svd(m: &Mat) -> Svd {
    let (r, c) = m.shape();
    if r < c {
        let t = svd(&m.transpose());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let mut a = m.clone();
    let mut v = Mat::identity(c, c);
    let eps = f64::EPSILON;
    // Rotates columns p < q of a column-major buffer with `len` rows.
    fn rotate(buf: &mut [f64], len: usize, p: usize, q: usize, cs: f64, sn: f64) {
        let (head, tail) = buf.split_at_mut(q * len);
        let (x, y) = (&mut head[p * len..(p + 1) * len], &mut tail[..len]);
        for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
            let (u, w) = (*xi, *yi);
            *xi = cs * u - sn * w;
            *yi = sn * u + cs * w;
        }
    }
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..c {
            for q in p + 1..c {
                let (alpha, beta, gamma) = {
                    let (x, y) = (a.column(p), a.column(q));
                    (x.norm_squared(), y.norm_squared(), x.dot(&y))
                };
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate(a.as_mut_slice(), r, p, q, cs, sn);
                rotate(v.as_mut_slice(), c, p, q, cs, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..c).map(|j| a.column(j).norm()).collect();
    let mut idx: Vec<usize> = (0..c).collect();
    idx.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());
    let mut u = Mat::zeros(r, c);
    let mut vs = Mat::zeros(c, c);
    let mut s = Vec::with_capacity(c);
    let mut filled = 0;
    for (j, &i) in idx.iter().enumerate() {
        if norms[i] > 0.0 {
            u.set_column(j, &(a.column(i) / norms[i]));
            filled = j + 1;
        }
        vs.set_column(j, &v.column(i));
        s.push(norms[i]);
    }
    complete_orthonormal(&mut u, filled);
    Svd { u, s, v: vs }
}

/// Fills columns `from..` of `q` so that all columns are orthonormal, taking
/// the trailing columns of a full Householder Q of the first `from` columns.
fn complete_orthonormal(q: &mut Mat, from: usize) {
    let (r, c) = q.shape();
    if from == c {
        return;
    }
    let full = full_q(&q.columns(0, from).into_owned(), r);
    for j in from..c {
        q.set_column(j, &full.column(j));
    }
}

/// r×r orthogonal Q from the Householder QR of `a` (r×k, k ≤ r). When the
/// columns of `a` are orthonormal, the first k columns of Q span them.
fn full_q(a: &Mat, r: usize) -> Mat {
    if a.ncols() == 0 {
        return Mat::identity(r, r);
    }
    let qr = a.clone().qr();
    let mut qt = Mat::identity(r, r);
    qr.q_tr_mul(&mut qt);
    qt.transpose()
}

/// Singular values in descending order.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    svd(m).s
}

/// Full SVD with all right singular vectors: returns (singular values padded
/// with zeros to the column count, V with columns in matching order).
pub fn full_right_svd(m: &Mat) -> (Vec<f64>, Mat) {
    let (r, c) = m.shape();
    if c == 0 {
        return (Vec::new(), Mat::zeros(0, 0));
    }
    if r >= c {
        let d = svd(m);
        return (d.s, d.v);
    }
    // Wide: right singular vectors are the left ones of mᵀ, completed to a
    // basis of Rᶜ.
    let d = svd(&m.transpose());
    let mut v = full_q(&d.u, c);
    v.columns_mut(0, r).copy_from(&d.u);
    let mut s = d.s;
    s.resize(c, 0.0);
    (s, v)
}

/// Orthonormal basis of the null space of `m`, using an absolute singular
/// value threshold.
pub fn null_space(m: &Mat, tol: f64) -> Mat {
    let c = m.ncols();
    if c == 0 {
        return Mat::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return Mat::identity(c, c);
    }
    let (sv, v) = full_right_svd(m);
    let rank = sv.iter().filter(|&&s| s > tol).count();
    v.columns(rank, c - rank).into_owned()
}

/// Orthonormal basis of the column space of `m`.
pub fn column_space(m: &Mat, tol: f64) -> Mat {
    let (r, c) = m.shape();
    if c == 0 || r == 0 {
        return Mat::zeros(r, 0);
    }
    let d = svd(m);
    let k = d.s.iter().filter(|&&s| s > tol).count();
    d.u.columns(0, k).into_owned()
}

pub fn rank(m: &Mat, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    singular_values(m).iter().filter(|&&s| s > tol).count()
}

/// Smallest singular value (0 for an empty matrix).
pub fn min_singular(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m).last().copied().unwrap_or(0.0)
}

pub fn hcat(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn vcat(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.ncols(), b.ncols());
    let mut out = Mat::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

pub fn block_diag(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

/// 2×2 block matrix [[a, b], [c, d]].
pub fn blocks(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Mat {
    vcat(&hcat(a, b), &hcat(c, d))
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Dimension(format!("singular {}x{} matrix", m.nrows(), m.ncols())))
}

/// Solve `a x = b` through an LU factorization.
pub fn solve(a: &Mat, b: &Mat) -> Result<Mat> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Dimension("singular system".into()))
}

/// Matrix exponential.
pub fn expm(m: &Mat) -> Mat {
    m.clone().exp()
}

/// Square root of a matrix with no eigenvalues on the closed negative real
/// axis, by the product form of the Denman–Beavers iteration.
pub fn sqrtm(a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let id = Mat::identity(n, n);
    let mut y = a.clone();
    let mut z = id.clone();
    for _ in 0..100 {
        let zi = inverse(&z).map_err(|_| Error::Logarithm("square-root iteration broke down".into()))?;
        let yi = inverse(&y).map_err(|_| Error::Logarithm("square-root iteration broke down".into()))?;
        let y_next = (&y + &zi) * 0.5;
        let z_next = (&z + &yi) * 0.5;
        let delta = (&y_next - &y).norm() / (1.0 + y_next.norm());
        y = y_next;
        z = z_next;
        if delta < 1e-15 {
            return Ok(y);
        }
    }
    let residual = (&y * &y - a).norm() / (1.0 + a.norm());
    if residual < 1e-10 {
        Ok(y)
    } else {
        Err(Error::Logarithm(format!("square root did not converge (residual {residual:.3e})")))
    }
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Fails when `a` has an eigenvalue on the closed negative real axis, where no
/// real principal logarithm exists.
pub fn logm(a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let id = Mat::identity(n, n);
    let eig = a.complex_eigenvalues();
    for ev in eig.iter() {
        if ev.re <= 0.0 && ev.im.abs() < 1e-8 * (1.0 + ev.re.abs()) {
            return Err(Error::Logarithm(format!(
                "eigenvalue {:.6} on the negative real axis",
                ev.re
            )));
        }
    }
    let mut x = a.clone();
    let mut k = 0;
    while (&x - &id).norm() > 0.25 {
        x = sqrtm(&x)?;
        k += 1;
        if k > 60 {
            return Err(Error::Logarithm("scaling stage did not reach the identity".into()));
        }
    }
    let e = &x - &id;
    // log(I + E) via its Taylor series; |E| <= 0.25 so 60 terms reach round-off.
    let mut term = e.clone();
    let mut sum = e.clone();
    for j in 2..80 {
        term = &term * &e;
        let c = if j % 2 == 0 { -1.0 } else { 1.0 } / j as f64;
        sum += &term * c;
        if term.norm() / (j as f64) < 1e-18 {
            break;
        }
    }
    Ok(sum * 2f64.powi(k))
}

/// Unitary factor of the polar decomposition M = U P.
pub fn polar_unitary(m: &Mat) -> Mat {
    let d = svd(m);
    d.u * d.v.transpose()
}

/// Orthogonal projector onto the column space of an orthonormal basis.
pub fn projector(q: &Mat) -> Mat {
    q * q.transpose()
}

/// Sine of the smallest principal angle between two subspaces given by
/// orthonormal bases of complementary dimension. Zero means they intersect.
pub fn transversality(qa: &Mat, qb: &Mat) -> f64 {
    let d = qa.nrows();
    let id = Mat::identity(d, d);
    let comp = &id - projector(qb);
    min_singular(&(comp * qa))
}

pub fn identity(n: usize) -> Mat {
    Mat::identity(n, n)
}
