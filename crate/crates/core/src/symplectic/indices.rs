//! Maslov, Conley–Zehnder and Hörmander indices of paths, and the identities
//! relating them.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::path::ChartSegment;
use super::{orthonormalize, Chart, LagrangianFrame, PathKind, SympPath, SympSpace, MIN_TRANSVERSALITY};
use crate::bilinear::{decade_margin, MARGINAL_DECADES};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Largest Frobenius distance between projectors of adjacent samples.
const MAX_STEP: f64 = 0.1;
const POOL_SIZE: usize = 48;
const POOL_SEED: u64 = 0x6d61_736c_6f76;
const MAX_SAMPLES: usize = 400_000;
const MIN_REFERENCE_ANGLE: f64 = 0.05;

/// Integer index together with the audit trail of its float decisions.
#[derive(Debug, Clone, Serialize)]
pub struct MaslovDetail {
    pub index: i64,
    pub segments: usize,
    pub samples: usize,
    /// Smallest decade margin of a chart-form eigenvalue at an interior
    /// breakpoint.
    pub interior_margin: f64,
    /// Smallest decade margin at the two path endpoints.
    pub endpoint_margin: f64,
    pub marginal: bool,
}

struct Candidate {
    basis: Mat,
    complement: Mat,
}

impl Candidate {
    fn new(l: &LagrangianFrame) -> Self {
        let complement = linalg::null_space(&l.basis().transpose(), 1e-12);
        Candidate { basis: l.basis().clone(), complement }
    }

    fn transversality(&self, q: &Mat) -> f64 {
        linalg::min_singular(&(self.complement.transpose() * q))
    }
}

struct Samples {
    t: Vec<f64>,
    q: Vec<Mat>,
}

fn projector_distance(a: &Mat, b: &Mat) -> f64 {
    let k = a.ncols() as f64;
    let overlap = (a.transpose() * b).norm_squared();
    (2.0 * k - 2.0 * overlap).max(0.0).sqrt()
}

impl Samples {
    fn new(path: &SympPath) -> Result<Self> {
        let (a, b) = (path.start(), path.end());
        let mut t: Vec<f64> = path.grid().to_vec();
        if t.len() < 33 {
            t = (0..=32).map(|i| a + (b - a) * i as f64 / 32.0).collect();
        }
        let q = t.iter().map(|&s| orthonormalize(&path.eval(s))).collect();
        let mut out = Samples { t, q };
        let mut i = 0;
        while i + 1 < out.t.len() {
            if projector_distance(&out.q[i], &out.q[i + 1]) > MAX_STEP {
                out.split(path, i)?;
            } else {
                i += 1;
            }
        }
        Ok(out)
    }

    fn split(&mut self, path: &SympPath, i: usize) -> Result<()> {
        let (l, r) = (self.t[i], self.t[i + 1]);
        if r - l < 1e-13 * (1.0 + (path.end() - path.start()).abs()) || self.t.len() > MAX_SAMPLES {
            return Err(Error::Sampling { start: l, end: r });
        }
        let m = 0.5 * (l + r);
        self.t.insert(i + 1, m);
        self.q.insert(i + 1, orthonormalize(&path.eval(m)));
        Ok(())
    }

    fn len(&self) -> usize {
        self.t.len()
    }

    fn threshold(&self, i: usize) -> f64 {
        let mut d: f64 = 0.0;
        if i > 0 {
            d = d.max(projector_distance(&self.q[i - 1], &self.q[i]));
        }
        if i + 1 < self.len() {
            d = d.max(projector_distance(&self.q[i], &self.q[i + 1]));
        }
        d + MIN_TRANSVERSALITY
    }
}

fn candidates(space: &SympSpace, l0: &LagrangianFrame) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = space
        .lagrangian_pool(POOL_SIZE, POOL_SEED)
        .iter()
        .filter(|c| c.transversality(l0) >= MIN_REFERENCE_ANGLE)
        .map(Candidate::new)
        .collect();
    // The Euclidean complement ω[L0] is always transverse when ω is orthogonal.
    let comp = orthonormalize(&(space.omega() * l0.basis()));
    if linalg::transversality(&comp, l0.basis()) >= MIN_REFERENCE_ANGLE {
        out.push(Candidate { basis: comp.clone(), complement: linalg::null_space(&comp.transpose(), 1e-12) });
    }
    out
}

/// Extended coindex n₊ + n₀ = n − n₋ of a chart form, with its decade margin.
fn extended_coindex(chart: &Chart, q: &Mat, tol: f64) -> Result<(usize, f64)> {
    let f = chart.form(q)?;
    let band = tol * (1.0 + linalg::spectral_norm(&f));
    let ev = linalg::sym_eigenvalues(&f);
    let neg = ev.iter().filter(|&&l| l < -band).count();
    let margin = ev.iter().map(|&l| decade_margin(l, band)).fold(f64::INFINITY, f64::min);
    Ok((ev.len() - neg, margin))
}

struct Segment {
    start: usize,
    end: usize,
    cand: usize,
}

fn cover(path: &SympPath, s: &mut Samples, cands: &[Candidate], l0: &LagrangianFrame, shift: usize) -> Result<Vec<Segment>> {
    'restart: loop {
        let last = s.len() - 1;
        let thr: Vec<f64> = (0..s.len()).map(|i| s.threshold(i)).collect();
        let mut segs = Vec::new();
        let mut start = 0;
        while start < last {
            let mut best: Option<(usize, usize)> = None;
            for (ci, c) in cands.iter().enumerate() {
                let mut e = None;
                for i in start..=last {
                    if c.transversality(&s.q[i]) >= thr[i] {
                        e = Some(i);
                    } else {
                        break;
                    }
                }
                if let Some(e) = e {
                    if best.map_or(true, |(_, be)| e > be) {
                        best = Some((ci, e));
                    }
                }
            }
            match best {
                Some((ci, e)) if e > start => {
                    let end = if e == last {
                        last
                    } else {
                        let lo = start + ((e - start) / 2).max(1);
                        let mut idx: Vec<usize> = (lo..=e).collect();
                        idx.sort_by(|&x, &y| {
                            let tx = linalg::transversality(&s.q[x], l0.basis());
                            let ty = linalg::transversality(&s.q[y], l0.basis());
                            ty.partial_cmp(&tx).unwrap()
                        });
                        idx[shift % idx.len()]
                    };
                    segs.push(Segment { start, end, cand: ci });
                    start = end;
                }
                _ => {
                    s.split(path, start).map_err(|_| Error::NoChart { start: s.t[start], end: s.t[start + 1] })?;
                    continue 'restart;
                }
            }
        }
        return Ok(segs);
    }
}

/// μ_{L0} of a Lagrangian path with its decision margins.
pub fn maslov_detail(path: &SympPath, l0: &LagrangianFrame) -> Result<MaslovDetail> {
    if path.kind() != PathKind::Lagrangian {
        return Err(Error::Dimension("maslov index needs a Lagrangian path".into()));
    }
    if path.space().dim2n() != l0.space().dim2n() {
        return Err(Error::Dimension("path and reference live in different spaces".into()));
    }
    let space = path.space();
    let cands = candidates(space, l0);
    if cands.is_empty() {
        return Err(Error::NoChart { start: path.start(), end: path.end() });
    }
    let mut samples = Samples::new(path)?;
    let mut best: Option<MaslovDetail> = None;
    for shift in 0..3 {
        let segs = cover(path, &mut samples, &cands, l0, shift)?;
        let last = samples.len() - 1;
        let mut index: i64 = 0;
        let mut interior = f64::INFINITY;
        let mut endpoint = f64::INFINITY;
        for seg in &segs {
            let chart = Chart::new(space, l0.basis(), &cands[seg.cand].basis)?;
            let (e0, m0) = extended_coindex(&chart, &samples.q[seg.start], path.tol())?;
            let (e1, m1) = extended_coindex(&chart, &samples.q[seg.end], path.tol())?;
            index += e1 as i64 - e0 as i64;
            for (pos, m) in [(seg.start, m0), (seg.end, m1)] {
                if pos == 0 || pos == last {
                    endpoint = endpoint.min(m);
                } else {
                    interior = interior.min(m);
                }
            }
        }
        let detail = MaslovDetail {
            index,
            segments: segs.len(),
            samples: samples.len(),
            interior_margin: interior,
            endpoint_margin: endpoint,
            marginal: interior.min(endpoint) < MARGINAL_DECADES,
        };
        if interior >= MARGINAL_DECADES {
            return Ok(detail);
        }
        if best.as_ref().map_or(true, |b| detail.interior_margin > b.interior_margin) {
            best = Some(detail);
        }
    }
    Ok(best.expect("at least one attempt"))
}

/// μ_{L0} of a Lagrangian path.
pub fn maslov_index(path: &SympPath, l0: &LagrangianFrame) -> Result<i64> {
    Ok(maslov_detail(path, l0)?.index)
}

/// i_CZ(Φ) = μ_Δ(t ↦ Gr(Φ(t))).
pub fn conley_zehnder_detail(path: &SympPath) -> Result<MaslovDetail> {
    let g = path.graph()?;
    let delta = LagrangianFrame::diagonal(path.space());
    maslov_detail(&g, &delta)
}

pub fn conley_zehnder(path: &SympPath) -> Result<i64> {
    Ok(conley_zehnder_detail(path)?.index)
}

#[derive(Debug, Clone, Serialize)]
pub struct HormanderDetail {
    /// Value along a straight line in one chart, when such a chart exists.
    pub straight: Option<i64>,
    /// Value along two chart segments through an intermediate Lagrangian.
    pub two_segment: i64,
}

fn chart_path(space: &SympSpace, seg: ChartSegment) -> SympPath {
    SympPath::from_fn(space.clone(), PathKind::Lagrangian, 0.0, 1.0, 32, move |t| seg.at(t))
}

/// q(L0, L1; L0', L1') computed along two differently constructed paths.
pub fn hormander_detail(
    l0: &LagrangianFrame,
    l1: &LagrangianFrame,
    l0p: &LagrangianFrame,
    l1p: &LagrangianFrame,
) -> Result<HormanderDetail> {
    let space = l0.space();
    let pool = space.lagrangian_pool(POOL_SIZE, POOL_SEED ^ 0x4855);
    let q_along = |p: &SympPath| -> Result<i64> { Ok(maslov_index(p, l1)? - maslov_index(p, l0)?) };

    let straight = match ChartSegment::through(space, &pool, l0p, l1p) {
        Ok(seg) => Some(q_along(&chart_path(space, seg))?),
        Err(Error::NoChart { .. }) => None,
        Err(e) => return Err(e),
    };

    let generic = |m: &LagrangianFrame| {
        [l0, l1, l0p, l1p].iter().map(|x| x.transversality(m)).fold(f64::INFINITY, f64::min)
    };
    let mid = space
        .lagrangian_pool(16, POOL_SEED ^ 0x6d69)
        .into_iter()
        .max_by(|a, b| generic(a).partial_cmp(&generic(b)).unwrap())
        .expect("non-empty pool");
    let first = chart_path(space, ChartSegment::through(space, &pool, l0p, &mid)?);
    let second = chart_path(space, ChartSegment::through(space, &pool, &mid, l1p)?);
    let two_segment = q_along(&first.concat(&second)?)?;
    Ok(HormanderDetail { straight, two_segment })
}

/// Hörmander index of the quadruple (L0, L1; L0', L1'); the two internal
/// constructions must agree.
pub fn hormander_index(
    l0: &LagrangianFrame,
    l1: &LagrangianFrame,
    l0p: &LagrangianFrame,
    l1p: &LagrangianFrame,
) -> Result<i64> {
    let d = hormander_detail(l0, l1, l0p, l1p)?;
    match d.straight {
        Some(s) if s != d.two_segment => Err(Error::Inconsistent(format!(
            "Hörmander index along straight path {s} but along two-segment path {}",
            d.two_segment
        ))),
        _ => Ok(d.two_segment),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BridgeReport {
    pub cz: i64,
    pub maslov: i64,
    pub hormander: i64,
    pub holds: bool,
}

/// Checks i_CZ(Φ) + μ_{L0}(Φ[ℓ0]) = q(Δ, L0 ⊕ ℓ0; Gr(Φ(a)⁻¹), Gr(Φ(b)⁻¹)).
pub fn cz_maslov_bridge_check(path: &SympPath, l0: &LagrangianFrame, ell0: &LagrangianFrame) -> Result<BridgeReport> {
    let space = path.space();
    let cz = conley_zehnder(path)?;
    let maslov = maslov_index(&path.image_of(ell0)?, l0)?;
    let delta = LagrangianFrame::diagonal(space);
    let sum = l0.direct_sum(ell0);
    let ga = LagrangianFrame::graph(space, &space.symplectic_inverse(&path.eval(path.start())));
    let gb = LagrangianFrame::graph(space, &space.symplectic_inverse(&path.eval(path.end())));
    let hormander = hormander_index(&delta, &sum, &ga, &gb)?;
    Ok(BridgeReport { cz, maslov, hormander, holds: cz + maslov == hormander })
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub maslov_l1: i64,
    pub maslov_l1p: i64,
    pub hormander: i64,
    pub holds: bool,
}

/// Checks μ_{L0}(Φ[L1]) − μ_{L0}(Φ[L1']) = q(L1, L1'; Φ(a)⁻¹L0, Φ(b)⁻¹L0).
pub fn reference_change_check(
    path: &SympPath,
    l0: &LagrangianFrame,
    l1: &LagrangianFrame,
    l1p: &LagrangianFrame,
) -> Result<TransferReport> {
    let space = path.space();
    let maslov_l1 = maslov_index(&path.image_of(l1)?, l0)?;
    let maslov_l1p = maslov_index(&path.image_of(l1p)?, l0)?;
    let a = l0.image(&space.symplectic_inverse(&path.eval(path.start())));
    let b = l0.image(&space.symplectic_inverse(&path.eval(path.end())));
    let hormander = hormander_index(l1, l1p, &a, &b)?;
    Ok(TransferReport { maslov_l1, maslov_l1p, hormander, holds: maslov_l1 - maslov_l1p == hormander })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Cz,
    Maslov,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub iterations: usize,
    pub kind: BoundKind,
    pub base_index: i64,
    pub iterate_index: i64,
    pub difference: i64,
    pub bound: i64,
    pub within_bound: bool,
}

/// Compares the index of the N-fold iterate with N times the base index
/// against n(N − 1) (Conley–Zehnder) or n(7N + 5) (Maslov).
pub fn iteration_bound_check(
    base: &SympPath,
    iterations: usize,
    kind: BoundKind,
    l0: Option<&LagrangianFrame>,
) -> Result<BoundReport> {
    let n = base.space().n() as i64;
    let it = base.iterate(iterations)?;
    let nn = iterations as i64;
    let (base_index, iterate_index, bound) = match kind {
        BoundKind::Cz => (conley_zehnder(base)?, conley_zehnder(&it)?, n * (nn - 1)),
        BoundKind::Maslov => {
            let v = LagrangianFrame::vertical(base.space());
            let l0 = l0.unwrap_or(&v);
            (
                maslov_index(&base.image_of(l0)?, l0)?,
                maslov_index(&it.image_of(l0)?, l0)?,
                n * (7 * nn + 5),
            )
        }
    };
    let difference = iterate_index - nn * base_index;
    Ok(BoundReport {
        iterations,
        kind,
        base_index,
        iterate_index,
        difference,
        bound,
        within_bound: difference.abs() <= bound,
    })
}

/// Phase of det(X − iY) for the unitary polar factor [[X, Y], [−Y, X]] of Φ
/// written in Darboux coordinates.
fn unitary_phase(space: &SympSpace, phi: &Mat, dinv: &Mat) -> f64 {
    let n = space.n();
    let m = dinv * phi * space.darboux();
    let u = linalg::polar_unitary(&m);
    let c = DMatrix::from_fn(n, n, |i, j| Complex64::new(u[(i, j)], -u[(i, n + j)]));
    c.determinant().arg()
}

/// Winding number of det of the unitary polar factor along the path. With
/// `closed` set, endpoints must agree and the result is exact; otherwise the
/// accumulated phase is rounded.
pub fn loop_winding(path: &SympPath, closed: bool) -> Result<i64> {
    if path.kind() != PathKind::Symplectic {
        return Err(Error::Dimension("loop winding needs a symplectic path".into()));
    }
    let space = path.space();
    let (a, b) = (path.start(), path.end());
    let pa = path.eval(a);
    let pb = path.eval(b);
    if closed {
        let distance = (&pa - &pb).norm();
        if distance > 1e-8 * (1.0 + pa.norm()) {
            return Err(Error::NotClosed { distance });
        }
    }
    let dinv = linalg::inverse(space.darboux())?;
    let mut t: Vec<f64> = path.grid().to_vec();
    if t.len() < 65 {
        t = (0..=64).map(|i| a + (b - a) * i as f64 / 64.0).collect();
    }
    let mut ph: Vec<f64> = t.iter().map(|&s| unitary_phase(space, &path.eval(s), &dinv)).collect();
    let wrap = |d: f64| {
        let tau = std::f64::consts::TAU;
        d - tau * (d / tau).round()
    };
    let mut total = 0.0;
    let mut i = 0;
    while i + 1 < t.len() {
        let d = wrap(ph[i + 1] - ph[i]);
        if d.abs() > 0.5 {
            if t[i + 1] - t[i] < 1e-12 * (b - a) {
                return Err(Error::Sampling { start: t[i], end: t[i + 1] });
            }
            let m = 0.5 * (t[i] + t[i + 1]);
            t.insert(i + 1, m);
            ph.insert(i + 1, unitary_phase(space, &path.eval(m), &dinv));
            continue;
        }
        total += d;
        i += 1;
    }
    Ok((total / std::f64::consts::TAU).round() as i64)
}
