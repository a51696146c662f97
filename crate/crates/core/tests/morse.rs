mod common;

use std::f64::consts::PI;

use common::{fourier_index, iterate_kernel_oracle, orbit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use symgeo::morse::{constrained_loop_energy, matrix_power, morse_index, MorseContext, MorseOptions, Restriction};

fn context(file: &str) -> MorseContext {
    MorseContext::new(&orbit(file), MorseOptions::default()).unwrap()
}

#[test]
fn cylinder_circle_report() {
    let ctx = context("cylinder.spec");
    let r = ctx.index_report(1).unwrap();
    assert_eq!((r.mu, r.nullity, r.mu_bar), (0, 2, 0));
    assert_eq!(r.i_m + 1 + r.n_minus_b0 as i64 - r.n1 as i64, 0);
    assert!(r.theorem_holds && r.nullity_agrees && r.converged);
    let g = ctx.galerkin(1, Restriction::None);
    assert!(g.levels.iter().all(|l| l.index == 0 && l.nullity == 2), "{:?}", g.levels);
}

#[test]
fn flat_orbits_match_the_fourier_count() {
    for (file, flat) in [("cylinder.spec", 1), ("torus.spec", 1), ("torus-lorentz.spec", 2)] {
        let ctx = context(file);
        for n in 1..=3 {
            let r = ctx.index_report(n).unwrap();
            assert_eq!((r.mu, r.nullity), fourier_index(0.0, n as f64, flat), "{file} N = {n}");
        }
    }
}

#[test]
fn round_equators_match_the_fourier_count() {
    // Normal Jacobi fields solve w'' + (2π)² w = 0 on loops of length N.
    // The static warp is critical along the equator, so the time direction
    // stays flat.
    for (file, flat) in [("s2xr.spec", 2), ("sphere.spec", 1), ("warped.spec", 2)] {
        let ctx = context(file);
        for n in 1..=4 {
            let r = ctx.index_report(n).unwrap();
            assert_eq!((r.mu, r.nullity), fourier_index(2.0 * PI, n as f64, flat), "{file} N = {n}");
        }
    }
}

#[test]
fn index_theorem_and_nullity_routes_on_test_orbits() {
    for file in [
        "cylinder.spec",
        "s2xr.spec",
        "s2xr-twisted.spec",
        "screw.spec",
        "sphere.spec",
        "torus.spec",
        "warped.spec",
        "torus-lorentz.spec",
    ] {
        let ctx = context(file);
        for n in 1..=3 {
            let r = ctx.index_report(n).unwrap();
            assert!(r.converged, "{file} N = {n}");
            let p = matrix_power(&ctx.poincare().matrix, n);
            let rhs = r.i_m + ctx.metric_index() as i64 + r.n_minus_b0 as i64 - r.n1 as i64;
            assert_eq!(r.mu as i64, rhs, "{file} N = {n}: {r:?}");
            assert_eq!(r.nullity, iterate_kernel_oracle(&ctx.poincare().matrix, n, 1e-7), "{file} N = {n}");
            assert_eq!(r.boundary.poincare_nullity, iterate_kernel_oracle(&p, 1, 1e-7));
            assert!(r.vanishing_identity_holds(), "{file} N = {n}");
            assert!(r.galerkin.constraint_residual < 1e-8);
        }
    }
}

#[test]
fn screw_nullity_jumps_at_multiples_of_three() {
    let ctx = context("screw.spec");
    let got: Vec<usize> = (1..=6).map(|n| ctx.index_report(n).unwrap().nullity).collect();
    assert_eq!(got, vec![2, 2, 4, 2, 2, 4]);
}

#[test]
fn stationary_orbits_have_nullity_at_least_two() {
    for file in ["cylinder.spec", "s2xr.spec", "s2xr-twisted.spec", "screw.spec"] {
        let r = morse_index(&orbit(file)).unwrap();
        assert!(r.nullity >= 2, "{file}: {}", r.nullity);
    }
}

#[test]
fn restricted_index_against_maslov_index() {
    let r = context("s2xr.spec").index_report(1).unwrap();
    assert!(r.mu_bar as i64 == r.i_m || r.mu_bar as i64 == r.i_m - 1, "{r:?}");
    assert_eq!(context("cylinder.spec").restricted_index(1).index, 0);
}

#[test]
fn restricted_index_is_nondecreasing_on_the_twisted_orbit() {
    let ctx = context("s2xr-twisted.spec");
    let mu_bar: Vec<usize> = (1..=5).map(|n| ctx.restricted_index(n).index).collect();
    assert!(mu_bar.windows(2).all(|w| w[0] <= w[1]), "{mu_bar:?}");
    for r in 1..=2 {
        for s in r..=5 - r {
            assert!(mu_bar[r + s - 1] >= mu_bar[r - 1] + mu_bar[s - 1], "{mu_bar:?} r {r} s {s}");
        }
    }
}

#[test]
fn embedding_scales_the_index_form() {
    for file in ["s2xr.spec", "s2xr-twisted.spec"] {
        let ctx = context(file);
        for (n, m) in [(1, 2), (1, 3), (2, 3)] {
            let err = ctx.scaling_check(n, m, 4).unwrap();
            assert!(err < 1e-10, "{file} N = {n} M = {m}: {err:e}");
        }
    }
}

#[test]
fn constrained_loops_have_nonnegative_energy() {
    for file in ["cylinder.spec", "s2xr-twisted.spec"] {
        let g = orbit(file);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let (f, _) = constrained_loop_energy(g.spec(), &g, &mut rng, 0.3, 4, 400).unwrap();
            assert!(f >= -1e-10, "{file}: {f}");
        }
    }
}

#[test]
fn constrained_loop_energy_needs_a_coordinate_killing_field() {
    let g = orbit("sphere.spec");
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    assert!(constrained_loop_energy(g.spec(), &g, &mut rng, 0.1, 2, 100).is_err());
}
