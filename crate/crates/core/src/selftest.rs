//! Deterministic randomized suites over the linear-algebra and symplectic
//! layers. Every instance draws from its own ChaCha stream keyed by the seed
//! and the instance number, so results do not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bilinear::{self, random as brand, splitting_check, SymForm, Subspace};
use crate::linalg::{self, Mat};
use crate::report::InvariantCheck;
use crate::symplectic::{
    self, conley_zehnder, cz_maslov_bridge_check, maslov_index, reference_change_check, SympSpace,
};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SelftestConfig {
    pub seed: u64,
    pub splitting: usize,
    pub identities: usize,
    pub symplectic: usize,
    pub loops: usize,
}

impl SelftestConfig {
    pub fn quick(seed: u64) -> Self {
        SelftestConfig { seed, splitting: 200, identities: 100, symplectic: 20, loops: 20 }
    }

    pub fn full(seed: u64) -> Self {
        SelftestConfig { seed, splitting: 1000, identities: 500, symplectic: 200, loops: 100 }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    pub marginal: usize,
    /// Instances whose construction was impossible (e.g. no isotropic vector).
    pub skipped: usize,
    pub degenerate: usize,
    pub isotropic_overlap: usize,
    pub smallest_margin: Option<f64>,
}

impl SuiteResult {
    pub fn marginal_rate(&self) -> f64 {
        if self.instances == 0 {
            0.0
        } else {
            self.marginal as f64 / self.instances as f64
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub config: SelftestConfig,
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn checks(&self) -> Vec<InvariantCheck> {
        self.suites
            .iter()
            .flat_map(|s| {
                let mut v = vec![InvariantCheck::exact(format!("{}:no-failures", s.name), s.failures == 0)];
                if s.name == "splitting" {
                    v.push(InvariantCheck::exact("splitting:marginal-rate-below-1%", s.marginal_rate() < 0.01));
                }
                v
            })
            .collect()
    }
}

fn rng_for(seed: u64, suite: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (suite << 48) ^ i as u64)
}

struct Outcome {
    ok: bool,
    marginal: bool,
    skipped: bool,
    degenerate: bool,
    overlap: bool,
    margin: f64,
}

impl Outcome {
    fn exact(ok: bool) -> Self {
        Outcome { ok, marginal: false, skipped: false, degenerate: false, overlap: false, margin: f64::INFINITY }
    }
}

fn collect(name: &str, outcomes: Vec<Outcome>) -> SuiteResult {
    let mut r = SuiteResult { name: name.to_string(), ..Default::default() };
    let mut smallest = f64::INFINITY;
    for o in outcomes {
        r.instances += 1;
        if o.skipped {
            r.skipped += 1;
            continue;
        }
        r.degenerate += o.degenerate as usize;
        r.isotropic_overlap += o.overlap as usize;
        smallest = smallest.min(o.margin);
        if o.marginal {
            r.marginal += 1;
        } else if !o.ok {
            r.failures += 1;
        }
    }
    r.smallest_margin = smallest.is_finite().then_some(smallest);
    r
}

/// Gaussian plus `shift`·I, redrawn until its smallest singular value is at
/// least 1/2, so congruences do not push eigenvalues into the zero band.
fn congruence(rng: &mut ChaCha8Rng, d: usize, shift: f64) -> Mat {
    loop {
        let g = brand::gaussian_matrix(rng, d, d) + Mat::identity(d, d) * shift;
        if linalg::min_singular(&g) >= 0.5 {
            return g;
        }
    }
}

fn random_form(rng: &mut ChaCha8Rng, d: usize, force_zero: bool) -> SymForm {
    random_form_with(rng, d, force_zero, false)
}

/// With `indefinite`, B is degenerate or has both signs, so isotropic
/// vectors exist.
fn random_form_with(rng: &mut ChaCha8Rng, d: usize, force_zero: bool, indefinite: bool) -> SymForm {
    let force_zero = force_zero || (indefinite && d == 1);
    let n_zero = if force_zero { rng.gen_range(1..=d) } else { rng.gen_range(0..=d / 3) };
    let mut n_minus = rng.gen_range(0..=d - n_zero);
    if indefinite && n_zero == 0 {
        n_minus = n_minus.clamp(1, d - 1);
    }
    let n_plus = d - n_zero - n_minus;
    let g = congruence(rng, d, 2.0);
    let m = brand::form_with_inertia(rng, n_minus, n_plus, n_zero);
    let m = linalg::symmetrize(&(g.transpose() * m * &g));
    let tol = 1e-9 * (1.0 + linalg::spectral_norm(&m));
    SymForm::with_tol(m, tol).expect("symmetric by construction")
}

/// Splitting identity n₋(B) = n₋(B|W) + n₋(B|W^⊥B) + dim(W ∩ W^⊥B) − dim(W ∩ Ker B)
/// on instances of dimension ≤ 12; two in five have forced-degenerate B and
/// two in five a W meeting its B-orthogonal.
pub fn splitting_suite(seed: u64, count: usize) -> SuiteResult {
    let outcomes = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, 1, i);
            let d = rng.gen_range(1..=12);
            let degenerate = i % 5 == 0 || i % 5 == 2;
            let overlap = i % 5 == 1 || i % 5 == 2;
            let b = random_form_with(&mut rng, d, degenerate, overlap);
            let k = rng.gen_range(0..=d);
            let w = if overlap {
                match brand::subspace_with_isotropic_overlap(&mut rng, &b, k.max(1)) {
                    Some(w) => w,
                    None => return Outcome { skipped: true, ..Outcome::exact(true) },
                }
            } else {
                brand::random_subspace(&mut rng, d, k)
            };
            let ws = w.intersection(&bilinear::b_orthogonal(&b, &w));
            let r = splitting_check(&b, &w);
            Outcome {
                ok: r.holds,
                marginal: r.marginal,
                skipped: false,
                degenerate: b.inertia().n_zero > 0,
                overlap: ws.dim() > 0,
                margin: r.margin,
            }
        })
        .collect();
    collect("splitting", outcomes)
}

/// n₋(B₁ ⊕ B₂) = n₋(B₁) + n₋(B₂) after a random congruence.
pub fn additivity_suite(seed: u64, count: usize) -> SuiteResult {
    let outcomes = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, 2, i);
            let (d1, d2) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
            let b1 = random_form(&mut rng, d1, i % 3 == 0);
            let b2 = random_form(&mut rng, d2, i % 4 == 0);
            let g = congruence(&mut rng, d1 + d2, 3.0);
            let sum = linalg::block_diag(b1.matrix(), b2.matrix());
            let c = linalg::symmetrize(&(g.transpose() * sum * &g));
            let tol = 1e-9 * (1.0 + linalg::spectral_norm(&c));
            let bc = SymForm::with_tol(c, tol).expect("symmetric");
            let (i1, i2, ic) = (b1.inertia(), b2.inertia(), bc.inertia());
            let margin = i1.margin.min(i2.margin).min(ic.margin);
            Outcome {
                ok: ic.n_minus == i1.n_minus + i2.n_minus && ic.n_zero == i1.n_zero + i2.n_zero,
                marginal: margin < bilinear::MARGINAL_DECADES,
                margin,
                ..Outcome::exact(true)
            }
        })
        .collect();
    collect("orthogonal-sum-additivity", outcomes)
}

/// n₋(B|W) ≤ n₋(B) ≤ n₋(B|W) + codim W.
pub fn codimension_suite(seed: u64, count: usize) -> SuiteResult {
    let outcomes = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, 3, i);
            let d = rng.gen_range(1..=12);
            let b = random_form(&mut rng, d, i % 3 == 0);
            let k = rng.gen_range(0..=d);
            let w = brand::random_subspace(&mut rng, d, k);
            let (ib, iw) = (b.inertia(), b.restrict(&w).inertia());
            let margin = ib.margin.min(iw.margin);
            Outcome {
                ok: iw.n_minus <= ib.n_minus && ib.n_minus <= iw.n_minus + (d - w.dim()),
                marginal: margin < bilinear::MARGINAL_DECADES,
                margin,
                ..Outcome::exact(true)
            }
        })
        .collect();
    collect("codimension-monotonicity", outcomes)
}

/// n₊ + n₋ + n₀ = dim.
pub fn dimension_suite(seed: u64, count: usize) -> SuiteResult {
    let outcomes = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, 4, i);
            let d = rng.gen_range(1..=12);
            let b = random_form(&mut rng, d, i % 2 == 0);
            let ib = b.inertia();
            Outcome { ok: ib.n_minus + ib.n_plus + ib.n_zero == d, margin: ib.margin, ..Outcome::exact(true) }
        })
        .collect();
    collect("dimension-count", outcomes)
}

/// For an isotropic Z: dim Z ≤ min(n₊, n₋) + n₀, and for nondegenerate B,
/// n₋(B) = n₋(B|Z^⊥B) + dim Z.
pub fn isotropic_suite(seed: u64, count: usize) -> SuiteResult {
    let outcomes = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, 5, i);
            let d = rng.gen_range(2..=12);
            let degenerate = i % 2 == 0;
            let n_zero = if degenerate { rng.gen_range(1..=d / 2) } else { 0 };
            let n_minus = rng.gen_range(1..=(d - n_zero).max(2) - 1);
            let n_plus = d - n_zero - n_minus;
            let diag: Vec<f64> = (0..d)
                .map(|j| {
                    if j < n_minus {
                        -rng.gen_range(0.5..2.0)
                    } else if j < n_minus + n_plus {
                        rng.gen_range(0.5..2.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            // Z spanned by pairs e_neg·a + e_pos and by kernel directions.
            let pairs = rng.gen_range(0..=n_minus.min(n_plus));
            let zk = rng.gen_range(0..=n_zero);
            let mut z = Mat::zeros(d, pairs + zk);
            for p in 0..pairs {
                let (a, b) = (p, n_minus + p);
                z[(a, p)] = (diag[b] / -diag[a]).sqrt();
                z[(b, p)] = 1.0;
            }
            for k in 0..zk {
                z[(n_minus + n_plus + k, pairs + k)] = 1.0;
            }
            let g = brand::gaussian_matrix(&mut rng, d, d) + Mat::identity(d, d) * 3.0;
            let ginv = match linalg::inverse(&g) {
                Ok(x) => x,
                Err(_) => return Outcome { skipped: true, ..Outcome::exact(true) },
            };
            let dm = Mat::from_diagonal(&nalgebra::DVector::from_vec(diag));
            // Z in the new coordinates is G⁻¹Z for the form GᵀDG.
            let m = linalg::symmetrize(&(g.transpose() * dm * &g));
            let tol = 1e-9 * (1.0 + linalg::spectral_norm(&m)) * (1.0 + linalg::spectral_norm(&ginv)).powi(2);
            let b = SymForm::with_tol(m, tol).expect("symmetric");
            let zs = Subspace::span(&(&ginv * z));
            let ib = b.inertia();
            let bound = zs.dim() <= ib.n_minus.min(ib.n_plus) + ib.n_zero;
            let reduction = if ib.n_zero == 0 && zs.dim() > 0 {
                bilinear::isotropic_reduction_check(&b, &zs).unwrap_or(false)
            } else {
                true
            };
            Outcome { ok: bound && reduction, margin: ib.margin, degenerate, ..Outcome::exact(true) }
        })
        .collect();
    collect("isotropic-bounds", outcomes)
}

/// Bridge identity and reference-change identity on open paths in Sp(2)
/// and Sp(4).
pub fn symplectic_suite(seed: u64, count: usize) -> SuiteResult {
    let outcomes = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, 6, i);
            let v = SympSpace::canonical(1 + i % 2);
            let p = symplectic::random::open_path(&mut rng, &v, 0.4);
            let l0 = v.random_lagrangian(&mut rng);
            let ell0 = v.random_lagrangian(&mut rng);
            let l1 = v.random_lagrangian(&mut rng);
            let l1p = v.random_lagrangian(&mut rng);
            let bridge = cz_maslov_bridge_check(&p, &l0, &ell0).map(|r| r.holds);
            let transfer = reference_change_check(&p, &l0, &l1, &l1p).map(|r| r.holds);
            Outcome::exact(matches!((bridge, transfer), (Ok(true), Ok(true))))
        })
        .collect();
    collect("symplectic-identities", outcomes)
}

/// i_CZ(loop) = −μ_{L0}(loop·ℓ0) on loops based at the identity.
pub fn loop_suite(seed: u64, count: usize) -> SuiteResult {
    let outcomes = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, 7, i);
            let v = SympSpace::canonical(1 + i % 2);
            let p = symplectic::random::loop_path(&mut rng, &v, 0.4);
            let l0 = v.random_lagrangian(&mut rng);
            let ell0 = v.random_lagrangian(&mut rng);
            let cz = conley_zehnder(&p);
            let mu = p.image_of(&ell0).and_then(|q| maslov_index(&q, &l0));
            Outcome::exact(matches!((cz, mu), (Ok(c), Ok(m)) if c == -m))
        })
        .collect();
    collect("loop-property", outcomes)
}

pub fn run(config: SelftestConfig) -> SelftestReport {
    let s = config.seed;
    let suites = vec![
        splitting_suite(s, config.splitting),
        additivity_suite(s, config.identities),
        codimension_suite(s, config.identities),
        dimension_suite(s, config.identities),
        isotropic_suite(s, config.identities),
        symplectic_suite(s, config.symplectic),
        loop_suite(s, config.loops),
    ];
    SelftestReport { config, suites }
}
