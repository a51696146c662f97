//! Iterates of a closed geodesic: per-N index tables and their bounds, the
//! nullity partition from the spectrum of the Poincaré map, and the abstract
//! Morse-relations checker.

use std::collections::BTreeMap;

use nalgebra::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::morse::{matrix_power, IndexReport, MorseContext};
use crate::transport::PoincareMap;

/// Largest denominator accepted for eigenvalue angles.
pub const MAX_DENOMINATOR: u64 = 64;
/// Tolerance on |θ − p/q| for θ = arg(λ)/2π.
pub const ANGLE_TOL: f64 = 1e-8;
/// Eigenvalues with ||λ| − 1| below this are treated as lying on the unit circle.
const CIRCLE_TOL: f64 = 1e-6;
/// Eigenvalues closer than this are grouped; a perturbed Jordan block of
/// size k spreads by about ε^(1/k).
const CLUSTER_TOL: f64 = 1e-3;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Reduced p/q ∈ [0, 1) with q ≤ max_den and |x − p/q| < tol, where x is
/// taken mod 1. Two distinct such rationals are an error.
pub fn rational_angle(x: f64, max_den: u64, tol: f64) -> Result<Option<(u64, u64)>> {
    let x = x.rem_euclid(1.0);
    // Convergents of the continued fraction are the best approximations; the
    // candidate set also includes every fraction within tol, to detect ties.
    let mut found: Option<(u64, u64)> = None;
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        let (h2, k2) = (a as i64 * h1 + h0, a as i64 * k1 + k0);
        if k2 as u64 > max_den {
            break;
        }
        if (x - h2 as f64 / k2 as f64).abs() < tol {
            let (p, q) = ((h2 as u64) % (k2 as u64), k2 as u64);
            found = Some((p, q));
            break;
        }
        let frac = r - a;
        if frac < 1e-15 {
            break;
        }
        r = 1.0 / frac;
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
    }
    for q in 1..=max_den {
        let p = (x * q as f64).round() as u64;
        if (x - p as f64 / q as f64).abs() >= tol {
            continue;
        }
        let g = gcd(p, q).max(1);
        let cand = ((p / g) % (q / g), q / g);
        match found {
            None => found = Some(cand),
            Some(f) if f != cand => {
                return Err(Error::AmbiguousAngle {
                    angle: x,
                    first: format!("{}/{}", f.0, f.1),
                    second: format!("{}/{}", cand.0, cand.1),
                });
            }
            _ => {}
        }
    }
    Ok(found)
}

/// A group of numerically coincident eigenvalues of P on the unit circle.
#[derive(Debug, Clone, Serialize)]
pub struct UnitEigenvalue {
    /// arg(λ)/2π ∈ [0, 1).
    pub angle: f64,
    /// (p, q) when the angle is rational within tolerance.
    pub rational: Option<(u64, u64)>,
    pub algebraic: usize,
    pub geometric: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitSpectrum {
    pub eigenvalues: Vec<UnitEigenvalue>,
    /// Some cluster has fewer eigenvectors than eigenvalues.
    pub defective: bool,
    /// A defective cluster has no rational angle: its perturbed eigenvalues
    /// cannot be placed reliably relative to the roots of unity.
    pub unresolved: bool,
}

fn complex_rank_deficiency(p: &Mat, lambda: Complex<f64>, tol: f64) -> usize {
    let n = p.nrows();
    // A + iB embedded as [[A, −B], [B, A]]: every singular value of the
    // complex matrix appears twice.
    let mut a = p.clone();
    for i in 0..n {
        a[(i, i)] -= lambda.re;
    }
    let b = -Mat::identity(n, n) * lambda.im;
    let real = linalg::blocks(&a, &(-&b), &b, &a);
    let small = linalg::singular_values(&real).iter().filter(|&&s| s <= tol).count();
    small / 2
}

/// Unit-circle part of the spectrum of P, grouped and classified.
pub fn unit_spectrum(p: &Mat) -> Result<UnitSpectrum> {
    let eig = p.complex_eigenvalues();
    let mut on_circle: Vec<Complex<f64>> =
        eig.iter().cloned().filter(|z| (z.norm() - 1.0).abs() < CIRCLE_TOL.sqrt()).collect();
    on_circle.sort_by(|a, b| a.arg().partial_cmp(&b.arg()).unwrap());
    let mut clusters: Vec<Vec<Complex<f64>>> = Vec::new();
    for z in on_circle {
        match clusters.iter_mut().find(|c| (c[0] - z).norm() < CLUSTER_TOL) {
            Some(c) => c.push(z),
            None => clusters.push(vec![z]),
        }
    }
    let tol = 1e-7 * (1.0 + linalg::spectral_norm(p));
    let mut out = Vec::new();
    let mut defective = false;
    let mut unresolved = false;
    for c in clusters {
        let mean = c.iter().sum::<Complex<f64>>() / c.len() as f64;
        if (mean.norm() - 1.0).abs() > CIRCLE_TOL {
            continue;
        }
        let angle = (mean.arg() / (2.0 * std::f64::consts::PI)).rem_euclid(1.0);
        let rational = rational_angle(angle, MAX_DENOMINATOR, ANGLE_TOL)?;
        let lambda = match rational {
            Some((pp, q)) => Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * pp as f64 / q as f64),
            None => mean,
        };
        let geometric = complex_rank_deficiency(p, lambda, tol);
        if geometric < c.len() {
            defective = true;
            unresolved |= rational.is_none();
        }
        out.push(UnitEigenvalue { angle, rational, algebraic: c.len(), geometric });
    }
    out.sort_by(|a, b| a.angle.partial_cmp(&b.angle).unwrap());
    Ok(UnitSpectrum { eigenvalues: out, defective, unresolved })
}

#[derive(Debug, Clone, Serialize)]
pub struct IterateNullity {
    pub nullity: usize,
    /// Computed from rank(P^N − I) because a defective unit-circle cluster
    /// could not be resolved.
    pub fallback: bool,
}

/// dim ker(P^N − I): the sum of geometric multiplicities of eigenvalues of P
/// that are N-th roots of unity. Jordan blocks at a root of unity do not
/// change the count; a defective cluster off the roots of unity sends the
/// computation to P^N directly, flagged.
pub fn nullity_of_iterate(p: &PoincareMap, n_iter: usize) -> Result<IterateNullity> {
    if n_iter == 0 {
        return Err(Error::Dimension("iterate count must be positive".into()));
    }
    let spec = unit_spectrum(&p.matrix)?;
    if spec.unresolved {
        let pn = power_by_squaring(&p.matrix, n_iter);
        let m = &pn - linalg::identity(pn.nrows());
        let tol = 1e-7 * (1.0 + linalg::spectral_norm(&pn));
        return Ok(IterateNullity { nullity: linalg::null_space(&m, tol).ncols(), fallback: true });
    }
    let nullity = spec
        .eigenvalues
        .iter()
        .filter(|e| matches!(e.rational, Some((_, q)) if n_iter as u64 % q == 0))
        .map(|e| e.geometric)
        .sum();
    Ok(IterateNullity { nullity, fallback: false })
}

fn power_by_squaring(p: &Mat, mut k: usize) -> Mat {
    let mut base = p.clone();
    let mut out = linalg::identity(p.nrows());
    while k > 0 {
        if k & 1 == 1 {
            out = &out * &base;
        }
        base = &base * &base;
        k >>= 1;
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionClass {
    pub m: u64,
    /// Members within 1..=N_max: N with m the largest m-value dividing N.
    pub members: Vec<usize>,
    /// Proper multiples of m among the m-values; N ∈ class iff m | N and
    /// none of these divides N.
    pub excluded_multiples: Vec<u64>,
    pub nullity: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct NullityPartition {
    pub denominators: Vec<u64>,
    pub m_values: Vec<u64>,
    pub classes: Vec<PartitionClass>,
    pub s: usize,
    pub n_max: usize,
    pub s_bound_holds: bool,
    /// Every N in 1..=N_max lies in exactly one class.
    pub is_partition: bool,
    /// n(γ^(N)) = n(γ^(m)) for every tabulated member N of the class of m.
    pub nullity_constant: bool,
    pub fallback_used: bool,
}

/// Distinct lcms over all subsets of `d`, ascending; the empty subset gives 1.
pub fn lcm_closure(d: &[u64]) -> Vec<u64> {
    let mut vals = vec![1u64];
    for &q in d {
        let more: Vec<u64> = vals.iter().map(|&v| lcm(v, q)).collect();
        vals.extend(more);
        vals.sort_unstable();
        vals.dedup();
    }
    vals
}

pub fn nullity_partition(p: &PoincareMap, dim_m: usize, n_max: usize) -> Result<NullityPartition> {
    let spec = unit_spectrum(&p.matrix)?;
    let mut denominators: Vec<u64> =
        spec.eigenvalues.iter().filter_map(|e| e.rational.map(|(_, q)| q)).filter(|&q| q > 1).collect();
    denominators.sort_unstable();
    denominators.dedup();
    let m_values = lcm_closure(&denominators);
    let mut nullities = Vec::with_capacity(n_max);
    let mut fallback_used = false;
    for n in 1..=n_max {
        let r = nullity_of_iterate(p, n)?;
        fallback_used |= r.fallback;
        nullities.push(r.nullity);
    }
    let mut classes: Vec<PartitionClass> = m_values
        .iter()
        .map(|&m| PartitionClass {
            m,
            members: Vec::new(),
            excluded_multiples: m_values.iter().cloned().filter(|&k| k != m && k % m == 0).collect(),
            nullity: 0,
        })
        .collect();
    let mut is_partition = true;
    for n in 1..=n_max {
        let hits: Vec<usize> = classes
            .iter()
            .enumerate()
            .filter(|(_, c)| n as u64 % c.m == 0 && c.excluded_multiples.iter().all(|&k| n as u64 % k != 0))
            .map(|(i, _)| i)
            .collect();
        if hits.len() != 1 {
            is_partition = false;
        }
        for i in hits {
            classes[i].members.push(n);
        }
    }
    let mut nullity_constant = true;
    for c in classes.iter_mut() {
        c.nullity = match usize::try_from(c.m).ok().filter(|&m| m <= n_max) {
            Some(m) => nullities[m - 1],
            None => nullity_of_iterate(p, c.m as usize)?.nullity,
        };
        if c.members.iter().any(|&n| nullities[n - 1] != c.nullity) {
            nullity_constant = false;
        }
    }
    let s = m_values.len();
    let s_bound_holds = dim_m < 63 && s as u64 <= 1u64 << dim_m;
    Ok(NullityPartition {
        denominators,
        m_values,
        classes,
        s,
        n_max,
        s_bound_holds,
        is_partition,
        nullity_constant,
        fallback_used,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MorseRelations {
    pub holds: bool,
    /// q_k = Σ_{i≤k} (−1)^{k−i} (μ_i − β_i), one entry past the longer input.
    pub q: Vec<i64>,
    pub weak_holds: bool,
}

/// Checks μ(t) = β(t) + (1 + t)Q(t) with Q having nonnegative coefficients.
pub fn morse_relations_check(mu: &[u64], beta: &[u64]) -> MorseRelations {
    let len = mu.len().max(beta.len()) + 1;
    let at = |s: &[u64], k: usize| s.get(k).copied().unwrap_or(0) as i64;
    let mut q = Vec::with_capacity(len);
    let mut prev = 0i64;
    for k in 0..len {
        let qk = at(mu, k) - at(beta, k) - prev;
        q.push(qk);
        prev = qk;
    }
    let holds = q.iter().all(|&x| x >= 0);
    let weak_holds = (0..len).all(|k| at(mu, k) >= at(beta, k));
    assert!(!holds || weak_holds, "strong Morse relations hold but weak ones fail: {mu:?} {beta:?}");
    MorseRelations { holds, q, weak_holds }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthClass {
    Bounded,
    Superlinear,
    Undetermined,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub iterate: usize,
    /// |i_M(γ^(N)) − N·i_M(γ)| and the bound dim(M)(7N + 5).
    pub maslov_deviation: i64,
    pub maslov_bound: i64,
    pub maslov_holds: bool,
    /// |i_CZ(N) − N·i_CZ(1)| ≤ n(N − 1); absent for orientation-reversing orbits.
    pub cz_deviation: Option<i64>,
    pub cz_bound: i64,
    pub cz_holds: Option<bool>,
    /// μ̄(γ^(N)) ≥ μ̄(γ^(N−1)).
    pub mu_bar_monotone: bool,
    /// dim ker(P^N − I) from the spectrum of P.
    pub spectral_nullity: usize,
    pub nullity_agrees: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuperadditivityRow {
    pub r: usize,
    pub s: usize,
    pub holds: bool,
    /// e_r + e_s with e_N = μ − μ̄, and whether it is at most 2·dim(M).
    pub defect: i64,
    pub defect_holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthEvidence {
    pub threshold: usize,
    /// First N with μ(γ^(N)) > 8·dim(M) + 1, if reached.
    pub k_star: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// μ(r + s) ≥ μ(r) + s·ᾱ − β̄ on every tabulated pair with s ≥ k*.
    pub line_holds: Option<bool>,
    /// Smallest N with μ̄(γ^(N)) ≥ 1; by superadditivity μ(γ^(m)) ≥ ⌊m/N⌋·μ̄(γ^(N)).
    pub witness: Option<usize>,
    pub witness_slope: Option<f64>,
    pub witness_line_holds: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationTable {
    pub dim: usize,
    pub n_max: usize,
    pub reports: BTreeMap<usize, IndexReport>,
    pub bounds: Vec<BoundRow>,
    pub superadditivity: Vec<SuperadditivityRow>,
    pub growth_class: GrowthClass,
    pub growth: GrowthEvidence,
    pub all_converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row_seconds: Option<Vec<f64>>,
}

impl IterationTable {
    pub fn bounds_hold(&self) -> bool {
        self.bounds.iter().all(|b| b.maslov_holds && b.cz_holds.unwrap_or(true) && b.mu_bar_monotone)
            && self.superadditivity.iter().all(|r| r.holds)
    }
}

/// Index reports for N = 1..=N_max (rows in parallel) with the iteration
/// bounds, superadditivity of μ̄ and the growth classification.
pub fn iterate_analysis(ctx: &MorseContext, n_max: usize, timings: bool) -> Result<IterationTable> {
    if n_max == 0 {
        return Err(Error::Dimension("N_max must be positive".into()));
    }
    let dim = ctx.dim();
    let rows: Vec<Result<(IndexReport, f64)>> = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let t = std::time::Instant::now();
            let r = ctx.index_report(n)?;
            Ok((r, t.elapsed().as_secs_f64()))
        })
        .collect();
    let mut reports = BTreeMap::new();
    let mut seconds = Vec::with_capacity(n_max);
    for (n, r) in (1..=n_max).zip(rows) {
        let (r, s) = r?;
        reports.insert(n, r);
        seconds.push(s);
    }
    let base = &reports[&1];
    let orientation_preserving = ctx.transfer.frame.orientation_preserving;
    let mut bounds = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let r = &reports[&n];
        let nn = n as i64;
        let dm = (r.i_m - nn * base.i_m).abs();
        let mb = dim as i64 * (7 * nn + 5);
        let cz_bound = dim as i64 * (nn - 1);
        let cz_dev = orientation_preserving.then(|| (r.i_cz - nn * base.i_cz).abs());
        let spectral = nullity_of_iterate(ctx.poincare(), n)?.nullity;
        bounds.push(BoundRow {
            iterate: n,
            maslov_deviation: dm,
            maslov_bound: mb,
            maslov_holds: dm <= mb,
            cz_deviation: cz_dev,
            cz_bound,
            cz_holds: cz_dev.map(|d| d <= cz_bound),
            mu_bar_monotone: n == 1 || r.mu_bar >= reports[&(n - 1)].mu_bar,
            spectral_nullity: spectral,
            nullity_agrees: spectral == r.nullity,
        });
    }
    let mut superadditivity = Vec::new();
    for r in 1..=n_max {
        for s in r..=n_max.saturating_sub(r) {
            let e = |k: usize| reports[&k].mu as i64 - reports[&k].mu_bar as i64;
            let defect = e(r) + e(s);
            superadditivity.push(SuperadditivityRow {
                r,
                s,
                holds: reports[&(r + s)].mu_bar >= reports[&r].mu_bar + reports[&s].mu_bar,
                defect,
                defect_holds: defect <= 2 * dim as i64,
            });
        }
    }
    let all_converged = reports.values().all(|r| r.converged);
    let (growth_class, growth) = classify_growth(&reports, dim, all_converged);
    Ok(IterationTable {
        dim,
        n_max,
        reports,
        bounds,
        superadditivity,
        growth_class,
        growth,
        all_converged,
        row_seconds: timings.then_some(seconds),
    })
}

fn classify_growth(reports: &BTreeMap<usize, IndexReport>, dim: usize, converged: bool) -> (GrowthClass, GrowthEvidence) {
    let n_max = reports.len();
    let threshold = 8 * dim + 1;
    let mu = |k: usize| reports[&k].mu as f64;
    let k_star = (1..=n_max).find(|&k| reports[&k].mu > threshold);
    let (alpha, beta, line_holds) = match k_star {
        Some(k) => {
            let a = (mu(k) - threshold as f64) / k as f64;
            let b = mu(k) + 1.0;
            let mut ok = true;
            for r in 1..=n_max {
                for s in k..=n_max.saturating_sub(r) {
                    ok &= mu(r + s) >= mu(r) + s as f64 * a - b;
                }
            }
            (Some(a), Some(b), Some(ok))
        }
        None => (None, None, None),
    };
    let witness = (1..=n_max).find(|&k| reports[&k].mu_bar >= 1);
    let (witness_slope, witness_line_holds) = match witness {
        Some(k) => {
            let mb = reports[&k].mu_bar as f64;
            let ok = (k..=n_max).all(|m| mu(m) >= (m / k) as f64 * mb);
            (Some(mb / k as f64), Some(ok && 2 * k <= n_max))
        }
        None => (None, None),
    };
    let evidence = GrowthEvidence {
        threshold,
        k_star,
        alpha,
        beta,
        line_holds,
        witness,
        witness_slope,
        witness_line_holds,
    };
    let class = if !converged {
        GrowthClass::Undetermined
    } else if line_holds == Some(true) || witness_line_holds == Some(true) {
        GrowthClass::Superlinear
    } else if k_star.is_none() && witness.is_none() {
        GrowthClass::Bounded
    } else {
        GrowthClass::Undetermined
    };
    (class, evidence)
}

/// P^N, for callers that need the iterate's Poincaré map itself.
pub fn poincare_iterate(p: &PoincareMap, n_iter: usize) -> PoincareMap {
    PoincareMap::new(if n_iter < 8 { matrix_power(&p.matrix, n_iter) } else { power_by_squaring(&p.matrix, n_iter) })
}
