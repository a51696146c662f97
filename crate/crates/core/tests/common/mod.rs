//! Independent oracles for the integration tests.
//!
//! Nothing here calls into the library's eigen-solvers or index routines: sign
//! counts come from Sturm sequences on a Householder tridiagonalization, and
//! Maslov indices from a uniform partition with a fixed family of reference
//! Lagrangians and a closed-form chart. Geometric oracles use only the metric
//! components, their own RK4 integrator and finite differences.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use std::sync::Arc;

use symgeo::geodesic::{refine_closed, ClosedGeodesic, GeodesicOptions};
use symgeo::manifold::ManifoldSpec;
use symgeo::symplectic::{LagrangianFrame, SympPath};

pub type Mat = DMatrix<f64>;

/// Householder reduction of a symmetric matrix to tridiagonal form; returns
/// (diagonal, off-diagonal).
pub fn tridiagonalize(m: &Mat) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows();
    let mut a = (m + m.transpose()) * 0.5;
    for k in 0..n.saturating_sub(2) {
        let x: Vec<f64> = (k + 1..n).map(|i| a[(i, k)]).collect();
        let alpha = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha == 0.0 {
            continue;
        }
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut v = x.clone();
        v[0] += sign * alpha;
        let vn = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if vn == 0.0 {
            continue;
        }
        for t in v.iter_mut() {
            *t /= vn;
        }
        // A ← H A H with H = I − 2vvᵀ acting on rows/cols k+1..n.
        let mut h = Mat::identity(n, n);
        for i in 0..v.len() {
            for j in 0..v.len() {
                h[(k + 1 + i, k + 1 + j)] -= 2.0 * v[i] * v[j];
            }
        }
        a = &h * a * &h;
    }
    let d = (0..n).map(|i| a[(i, i)]).collect();
    let e = (0..n.saturating_sub(1)).map(|i| a[(i + 1, i)]).collect();
    (d, e)
}

/// Number of eigenvalues strictly below `x` (Sturm count via LDLᵀ pivots).
pub fn count_below(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..d.len() {
        let off = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] };
        q = d[i] - x - if i == 0 { 0.0 } else { off / q };
        if q == 0.0 {
            q = -f64::EPSILON * (1.0 + x.abs());
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// (n₋, n₊, n₀) with zero band [−tol, tol].
pub fn sturm_inertia(m: &Mat, tol: f64) -> (usize, usize, usize) {
    let n = m.nrows();
    if n == 0 {
        return (0, 0, 0);
    }
    let (d, e) = tridiagonalize(m);
    let neg = count_below(&d, &e, -tol);
    let nonpos = count_below(&d, &e, tol);
    (neg, n - nonpos, nonpos - neg)
}

/// Frobenius-scaled zero band, deliberately different from the library's
/// spectral-norm scaling.
pub fn band(m: &Mat, rel: f64) -> f64 {
    rel * (1.0 + m.norm())
}

fn reference_slopes() -> Vec<f64> {
    let k = 23;
    (0..k)
        .map(|i| (std::f64::consts::PI * ((i as f64 + 0.5) / k as f64 - 0.5)).tan())
        .collect()
}

fn orthonormal(m: &Mat) -> Mat {
    m.clone().qr().q()
}

/// Chart of the reference Lagrangian span(N + cA), N = ωA. With A orthonormal
/// and ω orthogonal, a Lagrangian M = Ax + (N + cA)y has chart form (y x⁻¹)ᵀ.
struct OracleChart {
    a: Mat,
    n: Mat,
    c: f64,
}

impl OracleChart {
    fn coords(&self, m: &Mat) -> (Mat, Mat) {
        let y = self.n.transpose() * m;
        let x = self.a.transpose() * m - &y * self.c;
        (x, y)
    }

    fn transversality(&self, m: &Mat) -> f64 {
        let (x, _) = self.coords(m);
        let s = x.singular_values();
        s.iter().cloned().fold(f64::INFINITY, f64::min) / (1.0 + self.c * self.c).sqrt()
    }

    fn extended_coindex(&self, m: &Mat, rel: f64) -> i64 {
        let (x, y) = self.coords(m);
        let xi = x.try_inverse().expect("transverse sample");
        let f = (y * xi).transpose();
        let f = (&f + f.transpose()) * 0.5;
        let (neg, _, _) = sturm_inertia(&f, band(&f, rel));
        (f.nrows() - neg) as i64
    }
}

/// μ_{L0} evaluated on a uniform partition with `samples` intervals, using
/// the closed-form chart family above. Requires an orthogonal ω.
pub fn maslov_oracle(path: &SympPath, l0: &LagrangianFrame, samples: usize, rel: f64) -> i64 {
    let omega = path.space().omega().clone();
    assert!((omega.transpose() * &omega - Mat::identity(omega.nrows(), omega.nrows())).norm() < 1e-12);
    let a = l0.basis().clone();
    let n = &omega * &a;
    let charts: Vec<OracleChart> = reference_slopes()
        .into_iter()
        .map(|c| OracleChart { a: a.clone(), n: n.clone(), c })
        .collect();
    let (t0, t1) = (path.start(), path.end());
    let pts: Vec<Mat> = (0..=samples)
        .map(|i| orthonormal(&path.eval(t0 + (t1 - t0) * i as f64 / samples as f64)))
        .collect();
    let good = 0.05;
    let mut total = 0;
    let mut start = 0;
    while start < samples {
        let (ci, end) = charts
            .iter()
            .enumerate()
            .map(|(ci, ch)| {
                let mut e = start;
                while e < samples && ch.transversality(&pts[e + 1]) > good {
                    e += 1;
                }
                (ci, if ch.transversality(&pts[start]) > good { e } else { start })
            })
            .max_by_key(|&(ci, e)| (e, usize::MAX - ci))
            .unwrap();
        assert!(end > start, "oracle found no chart at sample {start}");
        let ch = &charts[ci];
        total += ch.extended_coindex(&pts[end], rel) - ch.extended_coindex(&pts[start], rel);
        start = end;
    }
    total
}

/// i_CZ by the uniform-partition oracle on the graph path.
pub fn cz_oracle(path: &SympPath, samples: usize, rel: f64) -> i64 {
    let g = path.graph().unwrap();
    let delta = LagrangianFrame::diagonal(path.space());
    maslov_oracle(&g, &delta, samples, rel)
}

/// Orthonormal range basis by pivoted Gram–Schmidt with reorthogonalization:
/// the column with the largest residual is taken while that residual exceeds
/// rel·(1 + ‖a‖_F).
pub fn range_basis(a: &Mat, rel: f64) -> Vec<nalgebra::DVector<f64>> {
    let tol = rel * (1.0 + a.norm());
    let mut rest: Vec<nalgebra::DVector<f64>> = (0..a.ncols()).map(|j| a.column(j).into_owned()).collect();
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
    loop {
        let Some((i, n)) = rest.iter().map(|v| v.norm()).enumerate().max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
        else {
            break;
        };
        if n <= tol {
            break;
        }
        let q = rest.swap_remove(i) / n;
        for v in rest.iter_mut() {
            for _ in 0..2 {
                let c = q.dot(v);
                *v -= &q * c;
            }
        }
        basis.push(q);
    }
    basis
}

/// Numerical rank from `range_basis`.
pub fn gs_rank(m: &Mat, rel: f64) -> usize {
    range_basis(m, rel).len()
}

/// Γ^k_ij as `out[k][(i, j)]` from central differences of the metric alone.
pub fn christoffel_fd(spec: &ManifoldSpec, x: &[f64], h: f64) -> Vec<Mat> {
    let n = x.len();
    let dg: Vec<Mat> = (0..n)
        .map(|l| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[l] += h;
            xm[l] -= h;
            (spec.metric(&xp) - spec.metric(&xm)) / (2.0 * h)
        })
        .collect();
    let gi = spec.metric(x).try_inverse().expect("invertible metric");
    (0..n)
        .map(|k| {
            Mat::from_fn(n, n, |i, j| {
                (0..n).map(|m| 0.5 * gi[(k, m)] * (dg[i][(m, j)] + dg[j][(m, i)] - dg[m][(i, j)])).sum()
            })
        })
        .collect()
}

/// Classical RK4 on the geodesic equation with Christoffel symbols from
/// `christoffel_fd`; returns positions at `steps + 1` uniform times on [0, t_end].
pub fn rk4_positions(spec: &ManifoldSpec, x0: &[f64], v0: &[f64], t_end: f64, steps: usize) -> Vec<Vec<f64>> {
    let n = x0.len();
    let rhs = |y: &[f64]| -> Vec<f64> {
        let (x, v) = y.split_at(n);
        let g = christoffel_fd(spec, x, 1e-5);
        let mut out = v.to_vec();
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += g[k][(i, j)] * v[i] * v[j];
                }
            }
            out.push(-s);
        }
        out
    };
    let h = t_end / steps as f64;
    let mut y: Vec<f64> = x0.iter().chain(v0).cloned().collect();
    let mut out = vec![x0.to_vec()];
    let axpy = |a: &[f64], b: &[f64], c: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + c * q).collect() };
    for _ in 0..steps {
        let k1 = rhs(&y);
        let k2 = rhs(&axpy(&y, &k1, h / 2.0));
        let k3 = rhs(&axpy(&y, &k2, h / 2.0));
        let k4 = rhs(&axpy(&y, &k3, h));
        for i in 0..2 * n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(y[..n].to_vec());
    }
    out
}

/// Fixed-endpoint conjugate-point count on (0, t_end] for a Riemannian
/// geodesic: sign changes of det ∂x(s)/∂v₀ (finite differences of RK4
/// trajectories) in the interior, plus the rank drop of ∂x/∂v₀ at t_end.
/// Interior conjugate instants must be simple.
pub fn conjugate_count(spec: &ManifoldSpec, x0: &[f64], v0: &[f64], t_end: f64, steps: usize) -> usize {
    let n = x0.len();
    let h = 1e-5;
    let columns: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|j| {
            let mut vp = v0.to_vec();
            let mut vm = v0.to_vec();
            vp[j] += h;
            vm[j] -= h;
            let a = rk4_positions(spec, x0, &vp, t_end, steps);
            let b = rk4_positions(spec, x0, &vm, t_end, steps);
            a.iter().zip(&b).map(|(p, q)| p.iter().zip(q).map(|(u, w)| (u - w) / (2.0 * h)).collect()).collect()
        })
        .collect();
    let jac = |i: usize| Mat::from_fn(n, n, |r, c| columns[c][i][r]);
    let skip = steps / 100;
    let dets: Vec<f64> = (skip..=steps - skip).map(|i| jac(i).determinant()).collect();
    let interior = dets.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    let end = jac(steps);
    let rank = gs_rank(&(&end / end.norm().max(t_end)), 1e-5);
    interior + (n - rank)
}

/// Index and nullity of −d²/ds² − ω² on periodic functions of period `len`,
/// counted over Fourier modes, plus `flat` directions contributing constants
/// to the kernel.
pub fn fourier_index(omega: f64, len: f64, flat: usize) -> (usize, usize) {
    let mut index = 0;
    let mut nullity = flat;
    for k in 0.. {
        let lam = (2.0 * std::f64::consts::PI * k as f64 / len).powi(2) - omega * omega;
        let mult = if k == 0 { 1 } else { 2 };
        if lam.abs() < 1e-9 * (1.0 + omega * omega) {
            nullity += mult;
        } else if lam < 0.0 {
            index += mult;
        } else {
            break;
        }
    }
    (index, nullity)
}

/// dim ker(Pᴺ − I) from repeated multiplication and a Gram–Schmidt rank.
pub fn iterate_kernel_oracle(p: &Mat, n_iter: usize, rel: f64) -> usize {
    let d = p.nrows();
    let mut q = Mat::identity(d, d);
    for _ in 0..n_iter {
        q = &q * p;
    }
    d - gs_rank(&(q - Mat::identity(d, d)), rel)
}

/// Groups 1..=n_max by the set of denominators dividing each N.
pub fn divisibility_classes(denominators: &[u64], n_max: usize) -> Vec<Vec<usize>> {
    let mut groups: std::collections::BTreeMap<Vec<u64>, Vec<usize>> = Default::default();
    for n in 1..=n_max {
        let key: Vec<u64> = denominators.iter().copied().filter(|&q| n as u64 % q == 0).collect();
        groups.entry(key).or_default().push(n);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

/// Strong relations by exact division of Σ(μ_k − β_k)tᵏ by (1 + t): they hold
/// when the value at t = −1 vanishes and every coefficient of the quotient,
/// evaluated as an explicit alternating sum, is nonnegative.
pub fn morse_relations_oracle(mu: &[u64], beta: &[u64]) -> (bool, bool) {
    let len = mu.len().max(beta.len());
    let c: Vec<i64> = (0..len)
        .map(|k| mu.get(k).copied().unwrap_or(0) as i64 - beta.get(k).copied().unwrap_or(0) as i64)
        .collect();
    let at_minus_one: i64 = c.iter().enumerate().map(|(k, &x)| if k % 2 == 0 { x } else { -x }).sum();
    let quotient_ok = (0..len).all(|k| {
        let qk: i64 = (0..=k).map(|i| if (k - i) % 2 == 0 { c[i] } else { -c[i] }).sum();
        qk >= 0
    });
    (at_minus_one == 0 && quotient_ok, c.iter().all(|&x| x >= 0))
}

/// A spec from the shared `specs/` directory or the test fixtures.
pub fn spec_path(file: &str) -> std::path::PathBuf {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let shared = root.join("../../specs").join(file);
    if shared.exists() {
        shared
    } else {
        root.join("tests/fixtures").join(file)
    }
}

pub fn load_spec(file: &str) -> Arc<ManifoldSpec> {
    Arc::new(ManifoldSpec::from_file(spec_path(file)).expect("spec parses"))
}

/// The first named orbit of a spec, refined with default options.
pub fn orbit(file: &str) -> ClosedGeodesic {
    let spec = load_spec(file);
    let guess = spec.geodesics[0].clone();
    refine_closed(spec, &guess.x0, &guess.v0, &GeodesicOptions::default()).expect("orbit closes")
}

/// One (q_i, p_i) plane of a synthetic Poincaré map.
#[derive(Clone, Copy)]
pub enum Block {
    /// Rotation by 2π·turns.
    Rot(f64),
    Shear,
    Hyperbolic(f64),
}

pub fn synthetic(blocks: &[Block]) -> Mat {
    let n = blocks.len();
    let mut p = Mat::zeros(2 * n, 2 * n);
    for (i, b) in blocks.iter().enumerate() {
        let plane = match *b {
            Block::Rot(turns) => symgeo::symplectic::random::rotation_blocks(&[turns], 2.0 * std::f64::consts::PI),
            Block::Shear => Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            Block::Hyperbolic(l) => Mat::from_row_slice(2, 2, &[l, 0.0, 0.0, 1.0 / l]),
        };
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            p[(i + r * n, i + c * n)] = plane[(r, c)];
        }
    }
    p
}

pub fn conjugate(p: &Mat, seed: u64) -> Mat {
    let space = symgeo::symplectic::SympSpace::canonical(p.nrows() / 2);
    let a = space.random_symplectic(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed), 0.3);
    &a * p * space.symplectic_inverse(&a)
}

/// Sequence pair (μ, β) for the Morse-relations checks. Even instances are
/// β + (1 + t)Q with Q ≥ 0, every fourth one perturbed by one unit; odd
/// instances are unrelated random sequences.
pub fn morse_pair<R: Rng>(rng: &mut R, i: usize) -> (Vec<u64>, Vec<u64>) {
    let len = rng.gen_range(1..=6);
    let beta: Vec<u64> = (0..len).map(|_| rng.gen_range(0..4)).collect();
    if i % 2 == 1 {
        return ((0..len).map(|_| rng.gen_range(0..4)).collect(), beta);
    }
    let q: Vec<u64> = (0..len - 1).map(|_| rng.gen_range(0..3)).collect();
    let mut mu: Vec<u64> =
        (0..len).map(|k| beta[k] + q.get(k).copied().unwrap_or(0) + if k > 0 { q[k - 1] } else { 0 }).collect();
    if i % 4 == 0 {
        let k = rng.gen_range(0..len);
        mu[k] += 1;
    }
    (mu, beta)
}
