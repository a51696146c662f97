mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use common::{christoffel_fd, conjugate_count, gs_rank, iterate_kernel_oracle, load_spec, orbit, sturm_inertia, Mat};
use symgeo::geodesic::{integrate_geodesic, refine_closed, GeodesicOptions};
use symgeo::manifold::{DerivativeRoute, ManifoldSpec};
use symgeo::morse::{MorseContext, MorseOptions};
use symgeo::ode::OdeOptions;
use symgeo::transport::{jacobi_transfer, periodic_trivialization, BumpProfile, TrivializationOptions, Twist};

const SPECS: [&str; 7] =
    ["cylinder.spec", "s2xr.spec", "s2xr-twisted.spec", "torus.spec", "sphere.spec", "screw.spec", "mobius.spec"];

fn ode() -> OdeOptions {
    GeodesicOptions::default().ode
}

fn transfer(file: &str, opts: TrivializationOptions) -> symgeo::transport::JacobiTransfer {
    jacobi_transfer(periodic_trivialization(&orbit(file), opts).unwrap()).unwrap()
}

#[test]
fn christoffel_symbols_match_finite_differences() {
    for file in SPECS {
        let spec = load_spec(file);
        for x in spec.probe_points(8, 7) {
            let exact = spec.gamma(&x).unwrap();
            let fd = christoffel_fd(&spec, &x, 1e-5);
            for k in 0..spec.dim() {
                let err = (&exact[k] - &fd[k]).norm();
                assert!(err < 1e-6 * (1.0 + exact[k].norm()), "{file} at {x:?}: Γ^{k} off by {err:e}");
            }
        }
    }
}

#[test]
fn sphere_christoffel_closed_form() {
    let spec = load_spec("sphere.spec");
    let x = [0.7, 1.3];
    let g = spec.gamma(&x).unwrap();
    assert!((g[0][(1, 1)] + x[0].sin() * x[0].cos()).abs() < 1e-13);
    assert!((g[1][(0, 1)] - x[0].cos() / x[0].sin()).abs() < 1e-13);
    assert!((g[1][(1, 0)] - g[1][(0, 1)]).abs() < 1e-15);
}

#[test]
fn flat_metric_has_no_christoffel_symbols() {
    let spec = ManifoldSpec::parse("[manifold]\nname = flat\ncoords = t, x\nmetric_index = 1\n\n[metric]\ng.t.t = -1\ng.x.x = 1\n")
        .unwrap();
    for k in spec.gamma(&[0.3, -2.0]).unwrap() {
        assert_eq!(k.norm(), 0.0);
    }
    let tr = integrate_geodesic(&spec, &[0.0, 1.0], &[0.5, 2.0], 0.0, 3.0, &ode()).unwrap();
    let (x, v) = tr.state(3.0);
    assert!((x[0] - 1.5).abs() < 1e-12 && (x[1] - 7.0).abs() < 1e-12);
    assert!((v[0] - 0.5).abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-12);
}

#[test]
fn unit_speed_equator_returns_after_two_pi() {
    let spec = load_spec("sphere.spec");
    let (x0, v0) = ([PI / 2.0, 0.0], [0.0, 1.0]);
    let tr = integrate_geodesic(&spec, &x0, &v0, 0.0, 2.0 * PI, &ode()).unwrap();
    let (x, v) = tr.state(2.0 * PI);
    let c = spec.closure(&x0, &v0, &x, &v);
    assert!(c.residual.iter().all(|r| r.abs() < 1e-9), "{:?}", c.residual);
    assert_eq!(c.windings, vec![0, 1]);
}

#[test]
fn cylinder_circle_closes() {
    let g = orbit("cylinder.spec");
    assert!(g.closure_residual < 1e-9);
    assert!(g.c_gamma().unwrap().abs() < 1e-12);
    assert!(g.newton_iterations() <= 1);
}

#[test]
fn perturbed_equator_refines_to_a_closed_great_circle() {
    let spec = load_spec("sphere.spec");
    let g = refine_closed(spec, &[PI / 2.0 + 1e-2, 0.0], &[1e-2, 2.0 * PI * 1.01], &GeodesicOptions::default()).unwrap();
    assert!(g.closure_residual < 1e-9);
    // Every closed great circle of period 1 has speed 2π.
    assert!((g.energy() - 4.0 * PI * PI).abs() < 1e-7, "energy {}", g.energy());
}

#[test]
fn auxiliary_metrics() {
    let cyl = load_spec("cylinder.spec").auxiliary_riemannian().unwrap();
    let s2 = load_spec("s2xr.spec").auxiliary_riemannian().unwrap();
    let tw = load_spec("s2xr-twisted.spec").auxiliary_riemannian().unwrap();
    for x in cyl.probe_points(10, 1) {
        assert!((cyl.metric(&x) - Mat::identity(2, 2)).norm() < 1e-14);
    }
    for x in s2.probe_points(10, 2) {
        let expected = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, x[0].sin().powi(2), 1.0]));
        assert!((s2.metric(&x) - expected).norm() < 1e-14);
    }
    for x in tw.probe_points(100, 3) {
        let g = tw.metric(&x);
        assert_eq!(sturm_inertia(&g, 1e-12).1, 3, "g_R not positive at {x:?}");
    }
    assert!(load_spec("sphere.spec").auxiliary_riemannian().is_err());
}

#[test]
fn screw_holonomy_is_a_third_turn() {
    let t = periodic_trivialization(&orbit("screw.spec"), TrivializationOptions::default()).unwrap();
    let h = t.holonomy();
    assert!((h.trace() - 1.0).abs() < 1e-8, "trace {}", h.trace());
    assert!((h.determinant() - 1.0).abs() < 1e-8);
    assert_eq!(4 - gs_rank(&(h - Mat::identity(4, 4)), 1e-8), 2);
    assert!(t.periodic && t.frame_closure < 1e-8);
}

#[test]
fn mobius_core_is_flagged_non_periodic() {
    let t = periodic_trivialization(&orbit("mobius.spec"), TrivializationOptions::default()).unwrap();
    assert!(!t.periodic && !t.orientation_preserving);
    let j = jacobi_transfer(t).unwrap();
    assert!(j.maslov_iterate(1).unwrap().fixed_endpoint_reading);
    assert!(j.maslov_iterate(2).is_err());
    assert!(MorseContext::new(&orbit("mobius.spec"), MorseOptions::default()).is_err());
}

#[test]
fn torus_and_cylinder_poincare_maps_are_unit_shears() {
    for (file, eta) in [("torus.spec", vec![1.0, 1.0]), ("cylinder.spec", vec![-1.0, 1.0])] {
        let j = transfer(file, TrivializationOptions::default());
        assert_eq!(j.frame.eta(), eta.as_slice());
        let n = eta.len();
        let mut shear = Mat::identity(2 * n, 2 * n);
        for i in 0..n {
            shear[(i, n + i)] = eta[i];
        }
        assert!((&j.poincare.matrix - &shear).norm() < 1e-9, "{file}: {}", j.poincare.matrix);
        assert_eq!(iterate_kernel_oracle(&j.poincare.matrix, 1, 1e-8), 2);
        assert!(j.fixed_vector_residuals.iter().all(|(_, r)| *r < 1e-8));
    }
}

#[test]
fn sphere_maslov_index_counts_conjugate_points() {
    let g = orbit("sphere.spec");
    let j = jacobi_transfer(periodic_trivialization(&g, TrivializationOptions::default()).unwrap()).unwrap();
    let spec = g.spec();
    for n in [1usize, 2] {
        let v0: Vec<f64> = g.v0.clone();
        let oracle = conjugate_count(spec, &g.x0, &v0, n as f64, 2000 * n);
        assert_eq!(oracle, 2 * n);
        assert_eq!(j.maslov_iterate(n).unwrap().index, oracle as i64, "N = {n}");
    }
    let t = orbit("torus.spec");
    let jt = jacobi_transfer(periodic_trivialization(&t, TrivializationOptions::default()).unwrap()).unwrap();
    assert_eq!(conjugate_count(t.spec(), &t.x0, &t.v0, 1.0, 500), 0);
    assert_eq!(jt.maslov_iterate(1).unwrap().index, 0);
}

#[test]
fn short_arc_has_no_conjugate_points() {
    let spec = load_spec("sphere.spec");
    let g = refine_closed(spec.clone(), &[PI / 2.0, 0.0], &[0.0, 2.0 * PI], &GeodesicOptions::default()).unwrap();
    let j = jacobi_transfer(periodic_trivialization(&g, TrivializationOptions::default()).unwrap()).unwrap();
    let arc = j.ell_path.restrict(0.0, 0.3);
    let l0 = symgeo::symplectic::LagrangianFrame::vertical(arc.space());
    let fast = symgeo::symplectic::maslov_index(&arc, &l0).unwrap();
    assert_eq!(fast, common::maslov_oracle(&arc, &l0, 4000, 1e-9));
    assert_eq!(conjugate_count(&spec, &g.x0, &g.v0, 0.3, 600), 0);
}

#[test]
fn sphere_poincare_map_has_a_three_dimensional_fixed_space() {
    let j = transfer("sphere.spec", TrivializationOptions::default());
    assert_eq!(iterate_kernel_oracle(&j.poincare.matrix, 1, 1e-8), 3);
    assert!(j.symplectic_residual < 1e-9 && j.lagrangian_residual < 1e-9);
}

#[test]
fn indices_do_not_depend_on_the_periodic_trivialization() {
    for file in ["s2xr.spec", "s2xr-twisted.spec", "screw.spec"] {
        let g = orbit(file);
        let base = MorseContext::new(&g, MorseOptions::default()).unwrap();
        let spacelike: Vec<usize> = (0..g.dim()).filter(|&i| base.transfer.frame.eta()[i] > 0.0).collect();
        let variants = [
            TrivializationOptions { profile: BumpProfile::Quintic, twist: None },
            TrivializationOptions {
                profile: BumpProfile::Smooth,
                twist: Some(Twist { plane: (spacelike[0], spacelike[1]), turns: 1 }),
            },
        ];
        let r0 = base.index_report(1).unwrap();
        for opts in variants {
            let ctx = MorseContext::with_trivialization(&g, opts, MorseOptions::default()).unwrap();
            let r = ctx.index_report(1).unwrap();
            assert_eq!((r.i_m, r.mu, r.nullity, r.mu_bar), (r0.i_m, r0.mu, r0.nullity, r0.mu_bar), "{file} {opts:?}");
            assert!(r.theorem_holds);
        }
    }
}

#[test]
fn finite_difference_route_gives_the_same_integers() {
    for file in ["s2xr.spec", "s2xr-twisted.spec"] {
        let spec = Arc::new(load_spec(file).with_finite_differences(1e-6));
        assert_eq!(spec.derivative_route(), DerivativeRoute::FiniteDifference);
        let guess = spec.geodesics[0].clone();
        let g = refine_closed(spec, &guess.x0, &guess.v0, &GeodesicOptions::default()).unwrap();
        let fd = MorseContext::new(&g, MorseOptions::default()).unwrap().index_report(1).unwrap();
        let sym = MorseContext::new(&orbit(file), MorseOptions::default()).unwrap().index_report(1).unwrap();
        assert_eq!(fd.derivative_route, DerivativeRoute::FiniteDifference);
        assert_eq!((fd.mu, fd.nullity, fd.i_m, fd.n1, fd.n_minus_b0), (sym.mu, sym.nullity, sym.i_m, sym.n1, sym.n_minus_b0));
    }
}

#[test]
fn spec_validation_reports_killing_residuals() {
    for file in ["cylinder.spec", "s2xr.spec", "s2xr-twisted.spec", "screw.spec"] {
        let spec = load_spec(file);
        spec.validate(16).unwrap();
        for x in spec.probe_points(16, 5) {
            assert!(spec.killing_residual(&x).unwrap() < 1e-10);
        }
    }
}
