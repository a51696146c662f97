mod common;

use std::f64::consts::PI;

use common::{cz_oracle, maslov_oracle, Mat};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use symgeo::symplectic::{
    self, chart_form, conley_zehnder, cz_maslov_bridge_check, hormander_detail, iteration_bound_check,
    loop_winding, maslov_index, reference_change_check, BoundKind, LagrangianFrame, PathKind, SympPath,
    SympSpace,
};

fn rotation(theta: f64) -> Mat {
    let (s, c) = theta.sin_cos();
    Mat::from_row_slice(2, 2, &[c, -s, s, c])
}

fn rotating_line(total: f64) -> SympPath {
    SympPath::from_fn(SympSpace::canonical(1), PathKind::Lagrangian, 0.0, 1.0, 16, move |t| {
        let th = 0.3 + total * t;
        Mat::from_column_slice(2, 1, &[th.cos(), th.sin()])
    })
}

#[test]
fn slope_chart_form_matches_hand_solution() {
    // L0 = q-axis, L1 = p-axis, L = {p = m q}: T(q) = m q, ω(T e, e) = −m.
    let v = SympSpace::canonical(1);
    for m in [-2.0, -0.3, 0.0, 0.5, 4.0] {
        let l = LagrangianFrame::new(v.clone(), Mat::from_column_slice(2, 1, &[1.0, m])).unwrap();
        let f = chart_form(&l, &LagrangianFrame::horizontal(&v), &LagrangianFrame::vertical(&v)).unwrap();
        assert!((f.matrix()[(0, 0)] + m).abs() < 1e-12);
    }
}

#[test]
fn random_chart_form_matches_graph_solve() {
    let v = SympSpace::canonical(3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let l0 = v.random_lagrangian(&mut rng);
        let l1 = v.random_lagrangian(&mut rng);
        let l = v.random_lagrangian(&mut rng);
        let f = chart_form(&l, &l0, &l1).unwrap();
        // Oracle: L = {a + T a}; solve a least-squares system for T column by column.
        let a = l0.basis();
        let c = l1.basis();
        let m = l.basis();
        let ac = symgeo::linalg::hcat(a, c);
        let coef = ac.clone().svd(true, true).solve(m, 1e-14).unwrap();
        let x = coef.rows(0, 3).into_owned();
        let y = coef.rows(3, 3).into_owned();
        let t = y * x.try_inverse().unwrap();
        let expected = (c * t).transpose() * v.omega() * a;
        assert!((f.matrix() - &expected).norm() < 1e-8 * (1.0 + expected.norm()));
        assert!((&expected - expected.transpose()).norm() < 1e-8 * (1.0 + expected.norm()));
    }
}

#[test]
fn half_turn_matches_definition() {
    let v = SympSpace::canonical(1);
    let l0 = LagrangianFrame::horizontal(&v);
    let p = rotating_line(PI);
    let fast = maslov_index(&p, &l0).unwrap();
    assert_eq!(fast.abs(), 1);
    assert_eq!(fast, maslov_oracle(&p, &l0, 10_000, 1e-9));
    let rev = rotating_line(-PI);
    assert_eq!(maslov_index(&rev, &l0).unwrap(), -fast);
}

#[test]
fn rotation_loop_matches_definition() {
    let v = SympSpace::canonical(1);
    let p = SympPath::from_fn(v, PathKind::Symplectic, 0.0, 1.0, 32, |t| rotation(2.0 * PI * t));
    let cz = conley_zehnder(&p).unwrap();
    assert_eq!(cz.abs(), 2);
    assert_eq!(cz, cz_oracle(&p, 10_000, 1e-9));
    assert_eq!(loop_winding(&p, true).unwrap(), 1);
}

#[test]
fn block_loop_has_trivial_winding() {
    let v = SympSpace::canonical(2);
    let p = SympPath::from_fn(v, PathKind::Symplectic, 0.0, 1.0, 64, |t| {
        let s = (2.0 * PI * t).sin();
        let eta = Mat::from_row_slice(2, 2, &[1.0 + 0.5 * s, 2.0 * s, -0.3 * s, 1.0]) * rotation(2.0 * PI * t);
        let inv_t = eta.clone().try_inverse().unwrap().transpose();
        symgeo::linalg::block_diag(&eta, &inv_t)
    });
    assert_eq!(loop_winding(&p, true).unwrap(), 0);
}

#[test]
fn open_path_winding_requires_closure() {
    let v = SympSpace::canonical(1);
    let p = SympPath::from_fn(v, PathKind::Symplectic, 0.0, 1.0, 8, |t| rotation(t));
    assert!(loop_winding(&p, true).is_err());
}

#[test]
fn loop_property_on_random_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in [1, 2] {
        let v = SympSpace::canonical(n);
        for _ in 0..6 {
            let p = symplectic::random::loop_path(&mut rng, &v, 0.4);
            let l0 = v.random_lagrangian(&mut rng);
            let ell0 = v.random_lagrangian(&mut rng);
            let cz = conley_zehnder(&p).unwrap();
            let mu = maslov_index(&p.image_of(&ell0).unwrap(), &l0).unwrap();
            assert_eq!(cz, -mu, "n = {n}");
        }
    }
}

#[test]
fn bridge_identity_on_open_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for n in [1, 2] {
        let v = SympSpace::canonical(n);
        for _ in 0..6 {
            let p = symplectic::random::open_path(&mut rng, &v, 0.4);
            let l0 = v.random_lagrangian(&mut rng);
            let ell0 = v.random_lagrangian(&mut rng);
            let r = cz_maslov_bridge_check(&p, &l0, &ell0).unwrap();
            assert!(r.holds, "n = {n}: {r:?}");
        }
    }
}

#[test]
fn reference_change_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for n in [1, 2] {
        let v = SympSpace::canonical(n);
        for _ in 0..6 {
            let p = symplectic::random::open_path(&mut rng, &v, 0.4);
            let l0 = v.random_lagrangian(&mut rng);
            let l1 = v.random_lagrangian(&mut rng);
            let l1p = v.random_lagrangian(&mut rng);
            let r = reference_change_check(&p, &l0, &l1, &l1p).unwrap();
            assert!(r.holds, "n = {n}: {r:?}");
        }
    }
}

#[test]
fn hormander_constructions_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let v = SympSpace::canonical(2);
    for _ in 0..10 {
        let q: Vec<_> = (0..4).map(|_| v.random_lagrangian(&mut rng)).collect();
        let d = hormander_detail(&q[0], &q[1], &q[2], &q[3]).unwrap();
        assert_eq!(d.straight, Some(d.two_segment));
    }
}

#[test]
fn elliptic_iteration_bounds() {
    let alpha = 2f64.sqrt();
    let v = SympSpace::canonical(1);
    let base = SympPath::from_fn(v, PathKind::Symplectic, 0.0, 1.0, 32, move |t| rotation(2.0 * PI * alpha * t));
    for n in 1..=20 {
        let cz = iteration_bound_check(&base, n, BoundKind::Cz, None).unwrap();
        assert!(cz.within_bound, "{cz:?}");
        let m = iteration_bound_check(&base, n, BoundKind::Maslov, None).unwrap();
        assert!(m.within_bound, "{m:?}");
        if n == 1 {
            assert_eq!(cz.difference, 0);
            assert_eq!(m.difference, 0);
        }
    }
}

#[test]
fn adaptive_matches_definition_on_random_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for n in [1, 2] {
        let v = SympSpace::canonical(n);
        for _ in 0..4 {
            let p = symplectic::random::open_path(&mut rng, &v, 0.4);
            let l0 = v.random_lagrangian(&mut rng);
            let lp = p.image_of(&v.random_lagrangian(&mut rng)).unwrap();
            assert_eq!(maslov_index(&lp, &l0).unwrap(), maslov_oracle(&lp, &l0, 10_000, 1e-9));
            assert_eq!(conley_zehnder(&p).unwrap(), cz_oracle(&p, 10_000, 1e-9));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn concatenation_is_additive(seed in 0u64..1000, split in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = SympSpace::canonical(2);
        let p = symplectic::random::open_path(&mut rng, &v, 0.4);
        let l0 = v.random_lagrangian(&mut rng);
        let lp = p.image_of(&v.random_lagrangian(&mut rng)).unwrap();
        let whole = maslov_index(&lp, &l0).unwrap();
        let a = maslov_index(&lp.restrict(0.0, split), &l0).unwrap();
        let b = maslov_index(&lp.restrict(split, 1.0), &l0).unwrap();
        prop_assert_eq!(whole, a + b);
    }

    #[test]
    fn symplectic_invariance(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = SympSpace::canonical(2);
        let p = symplectic::random::open_path(&mut rng, &v, 0.4);
        let l0 = v.random_lagrangian(&mut rng);
        let ell = v.random_lagrangian(&mut rng);
        let psi = v.random_symplectic(&mut rng, 0.5);
        let lp = p.image_of(&ell).unwrap();
        let psi2 = psi.clone();
        let moved = SympPath::from_fn(v.clone(), PathKind::Lagrangian, 0.0, 1.0, 64, move |t| &psi2 * lp.eval(t));
        let lp = p.image_of(&ell).unwrap();
        prop_assert_eq!(maslov_index(&lp, &l0).unwrap(), maslov_index(&moved, &l0.image(&psi)).unwrap());
    }

    #[test]
    fn reparametrization_invariance(seed in 0u64..1000, k in 0.3f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = SympSpace::canonical(1);
        let p = symplectic::random::open_path(&mut rng, &v, 0.6);
        let q = p.reparametrize(move |t| t.powf(k));
        prop_assert_eq!(conley_zehnder(&p).unwrap(), conley_zehnder(&q).unwrap());
        let l0 = v.random_lagrangian(&mut rng);
        let ell = v.random_lagrangian(&mut rng);
        prop_assert_eq!(
            maslov_index(&p.image_of(&ell).unwrap(), &l0).unwrap(),
            maslov_index(&q.image_of(&ell).unwrap(), &l0).unwrap()
        );
    }
}
