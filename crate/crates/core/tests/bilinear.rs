mod common;

use common::{band, gs_rank, range_basis, sturm_inertia, Mat};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symgeo::bilinear::{
    b_orthogonal, index_coindex_nullity, isotropic_reduction_check, random as brand, splitting_check, Subspace,
    SymForm,
};

fn diag(v: &[f64]) -> Mat {
    Mat::from_diagonal(&DVector::from_vec(v.to_vec()))
}

fn oracle_rank(m: &Mat, rel: f64) -> usize {
    gs_rank(m, rel)
}

/// Orthonormal basis of the orthogonal complement of span(a), completing the
/// range basis by pivoted Gram–Schmidt over the standard basis.
fn complement(a: &Mat, rel: f64) -> Mat {
    let d = a.nrows();
    let mut basis = range_basis(a, rel);
    let range = basis.len();
    let project_out = |v: &mut DVector<f64>, basis: &[DVector<f64>]| {
        for _ in 0..2 {
            for b in basis {
                let c = b.dot(v);
                *v -= b * c;
            }
        }
    };
    while basis.len() < d {
        let best = (0..d)
            .map(|i| {
                let mut e = DVector::zeros(d);
                e[i] = 1.0;
                project_out(&mut e, &basis);
                e
            })
            .max_by(|x, y| x.norm().partial_cmp(&y.norm()).unwrap())
            .unwrap();
        let n = best.norm();
        basis.push(best / n);
    }
    Mat::from_fn(d, d - range, |r, c| basis[range + c][r])
}

fn orthonormal(a: &Mat) -> Mat {
    complement(&complement(a, 1e-9), 1e-9)
}

struct SplitOracle {
    n_b: usize,
    n_w: usize,
    n_s: usize,
    dim_ws: usize,
    dim_wk: usize,
}

fn split_oracle(b: &Mat, w: &Mat) -> SplitOracle {
    let w = orthonormal(w);
    let s = complement(&(b * &w), 1e-9);
    let neg = |m: &Mat| sturm_inertia(m, band(m, 1e-9)).0;
    let ws = oracle_rank(&symgeo::linalg::hcat(&w, &s), 1e-7);
    SplitOracle {
        n_b: neg(b),
        n_w: neg(&(w.transpose() * b * &w)),
        n_s: neg(&(s.transpose() * b * &s)),
        dim_ws: w.ncols() + s.ncols() - ws,
        dim_wk: w.ncols() - oracle_rank(&(b * &w), 1e-9),
    }
}

#[test]
fn sturm_oracle_on_a_diagonal_form() {
    assert_eq!(sturm_inertia(&diag(&[3.0, -1.0, 0.0, 2.0, -5.0]), 1e-9), (2, 2, 1));
}

#[test]
fn inertia_of_simple_forms() {
    assert_eq!(index_coindex_nullity(&SymForm::new(Mat::identity(3, 3)).unwrap()), (0, 3, 0));
    assert_eq!(index_coindex_nullity(&SymForm::new(diag(&[1.0, -1.0, -1.0, 0.0])).unwrap()), (2, 1, 1));
}

#[test]
fn inertia_matches_sturm_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..200 {
        let (a, b, c) = (rng.gen_range(0..5), rng.gen_range(0..5), rng.gen_range(0..3));
        if a + b + c == 0 {
            continue;
        }
        let m = brand::form_with_inertia(&mut rng, a, b, c);
        let f = SymForm::new(m.clone()).unwrap();
        let (n, p, z) = index_coindex_nullity(&f);
        assert_eq!((n, p, z), sturm_inertia(&m, band(&m, 1e-9)));
        assert_eq!((n, p, z), (a, b, c));
    }
}

#[test]
fn b_orthogonal_simple_cases() {
    let e1 = Mat::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]);
    let s = Subspace::new(e1.clone()).unwrap();
    let c = b_orthogonal(&SymForm::new(Mat::identity(4, 4)).unwrap(), &s);
    assert_eq!(c.dim(), 3);
    assert!(c.basis().row(0).norm() < 1e-12);
    let z = b_orthogonal(&SymForm::new(Mat::zeros(4, 4)).unwrap(), &s);
    assert_eq!(z.dim(), 4);
}

#[test]
fn double_complement_is_span_plus_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..50 {
        let m = brand::form_with_inertia(&mut rng, 3, 4, 3);
        let b = SymForm::new(m.clone()).unwrap();
        let k = rng.gen_range(1..=5);
        let s = brand::random_subspace(&mut rng, 10, k);
        let dd = b_orthogonal(&b, &b_orthogonal(&b, &s));
        // Oracle: kernel of B as the complement of its range, then span comparison.
        let kernel = complement(&m, 1e-9);
        let expected = symgeo::linalg::hcat(s.basis(), &kernel);
        let both = symgeo::linalg::hcat(dd.basis(), &expected);
        assert_eq!(oracle_rank(&expected, 1e-7), dd.dim(), "k {k} kernel {} s {}", kernel.ncols(), s.dim());
        assert_eq!(oracle_rank(&both, 1e-7), dd.dim());
    }
}

#[test]
fn splitting_hand_cases() {
    let b = SymForm::new(Mat::identity(3, 3)).unwrap();
    let w = brand::random_subspace(&mut ChaCha8Rng::seed_from_u64(1), 3, 2);
    let r = splitting_check(&b, &w);
    assert!(r.holds);
    assert_eq!((r.n_b, r.n_w, r.n_s, r.dim_ws, r.dim_wk), (0, 0, 0, 0, 0));

    let b = SymForm::new(diag(&[1.0, -1.0])).unwrap();
    let w = Subspace::new(Mat::from_column_slice(2, 1, &[1.0, 1.0])).unwrap();
    let r = splitting_check(&b, &w);
    assert!(r.holds);
    assert_eq!((r.n_b, r.n_w, r.n_s, r.dim_ws, r.dim_wk), (1, 0, 0, 1, 0));
    let o = split_oracle(b.matrix(), w.basis());
    assert_eq!((o.n_b, o.n_w, o.n_s, o.dim_ws, o.dim_wk), (1, 0, 0, 1, 0));
}

#[test]
fn splitting_terms_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut compared = 0;
    for i in 0..300 {
        let d = rng.gen_range(1..=12);
        let nz = if i % 2 == 0 { rng.gen_range(1..=d) } else { 0 };
        let nm = rng.gen_range(0..=d - nz);
        let m = brand::form_with_inertia(&mut rng, nm, d - nz - nm, nz);
        let b = SymForm::new(m.clone()).unwrap();
        let k = rng.gen_range(0..=d);
        let w = if i % 3 == 0 {
            match brand::subspace_with_isotropic_overlap(&mut rng, &b, k.max(1)) {
                Some(w) => w,
                None => continue,
            }
        } else {
            brand::random_subspace(&mut rng, d, k)
        };
        let r = splitting_check(&b, &w);
        if r.marginal {
            continue;
        }
        let o = split_oracle(&m, w.basis());
        assert_eq!(
            (r.n_b, r.n_w, r.n_s, r.dim_ws, r.dim_wk),
            (o.n_b, o.n_w, o.n_s, o.dim_ws, o.dim_wk),
            "instance {i}: d {d} nz {nz} k {k} dimw {}", w.dim()
        );
        assert_eq!(o.n_b as i64, (o.n_w + o.n_s + o.dim_ws) as i64 - o.dim_wk as i64);
        assert!(r.holds);
        compared += 1;
    }
    assert!(compared > 250);
}

#[test]
fn isotropic_reduction_cases() {
    let b = SymForm::new(diag(&[1.0, -1.0])).unwrap();
    let z = Subspace::new(Mat::from_column_slice(2, 1, &[1.0, 1.0])).unwrap();
    assert!(isotropic_reduction_check(&b, &z).unwrap());
    assert_eq!(sturm_inertia(b.matrix(), 1e-9).0, 1);

    assert!(isotropic_reduction_check(&b, &Subspace::zero(2)).unwrap());

    // Hyperbolic form on R⁴ pairing (e1, e3) and (e2, e4); Z = span(e1, e2).
    let mut h = Mat::zeros(4, 4);
    h[(0, 2)] = 1.0;
    h[(2, 0)] = 1.0;
    h[(1, 3)] = 1.0;
    h[(3, 1)] = 1.0;
    let b = SymForm::new(h.clone()).unwrap();
    let z = Subspace::new(Mat::from_column_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])).unwrap();
    assert!(isotropic_reduction_check(&b, &z).unwrap());
    assert_eq!(sturm_inertia(&h, 1e-9).0, 2);

    let bad = Subspace::new(Mat::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
    assert!(isotropic_reduction_check(&SymForm::new(diag(&[1.0, -1.0])).unwrap(), &bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dimension_is_sum_of_counts(seed in 0u64..10_000, d in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nz = rng.gen_range(0..=d);
        let nm = rng.gen_range(0..=d - nz);
        let b = SymForm::new(brand::form_with_inertia(&mut rng, nm, d - nz - nm, nz)).unwrap();
        let (n, p, z) = index_coindex_nullity(&b);
        prop_assert_eq!(n + p + z, d);
    }

    #[test]
    fn congruence_preserves_inertia(seed in 0u64..10_000, d in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nz = rng.gen_range(0..=d);
        let nm = rng.gen_range(0..=d - nz);
        let b = SymForm::new(brand::form_with_inertia(&mut rng, nm, d - nz - nm, nz)).unwrap();
        let g = brand::gaussian_matrix(&mut rng, d, d) + Mat::identity(d, d) * 3.0;
        let c = b.congruent(&g).unwrap();
        prop_assume!(!b.inertia().marginal() && !c.inertia().marginal());
        prop_assert_eq!(index_coindex_nullity(&b), index_coindex_nullity(&c));
    }

    #[test]
    fn orthogonal_sums_are_additive(seed in 0u64..10_000, d1 in 1usize..6, d2 in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = rng.gen_range(0..=d1);
        let n2 = rng.gen_range(0..=d2);
        let b1 = brand::form_with_inertia(&mut rng, n1, d1 - n1, 0);
        let b2 = brand::form_with_inertia(&mut rng, n2, d2 - n2, 0);
        let sum = SymForm::new(symgeo::linalg::block_diag(&b1, &b2)).unwrap();
        let (a, b, _) = index_coindex_nullity(&sum);
        prop_assert_eq!((a, b), (n1 + n2, d1 + d2 - n1 - n2));
    }

    #[test]
    fn restriction_to_larger_subspace_never_lowers_index(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(2..=10);
        let nm = rng.gen_range(0..=d);
        let b = SymForm::new(brand::form_with_inertia(&mut rng, nm, d - nm, 0)).unwrap();
        let k = rng.gen_range(1..d);
        let big = brand::random_subspace(&mut rng, d, k + 1);
        let small = Subspace::span(&(big.basis() * brand::gaussian_matrix(&mut rng, k + 1, k)));
        let ib = b.restrict(&big).inertia();
        let is = b.restrict(&small).inertia();
        prop_assume!(!ib.marginal() && !is.marginal());
        prop_assert!(is.n_minus <= ib.n_minus && ib.n_minus <= is.n_minus + 1);
    }
}
