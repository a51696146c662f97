//! Versioned JSON reports shared by the command-line front end and the tests.
//! Serialization is deterministic: structs serialize in field order, maps
//! are ordered, and nothing time-dependent is included unless requested.

use serde::Serialize;
use serde_json::Value;

use crate::bilinear::MARGINAL_DECADES;
use crate::iteration::{IterationTable, MorseRelations, NullityPartition};
use crate::morse::IndexReport;

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct InvariantCheck {
    pub name: String,
    pub holds: bool,
    /// Decades between the deciding quantity and its tolerance; null for
    /// exact integer checks or when nothing was close to a threshold.
    pub margin: Option<f64>,
}

impl InvariantCheck {
    pub fn exact(name: impl Into<String>, holds: bool) -> Self {
        InvariantCheck { name: name.into(), holds, margin: None }
    }

    pub fn with_margin(name: impl Into<String>, holds: bool, margin: f64) -> Self {
        InvariantCheck { name: name.into(), holds, margin: margin.is_finite().then_some(margin) }
    }

    /// A numerical decision that holds when its margin clears the marginal band.
    pub fn decided(name: impl Into<String>, margin: f64) -> Self {
        Self::with_margin(name, margin >= MARGINAL_DECADES, margin)
    }

    /// |value| ≤ tol, with the margin in decades.
    pub fn residual(name: impl Into<String>, value: f64, tol: f64) -> Self {
        let margin = if value == 0.0 { f64::INFINITY } else { (tol / value.abs()).log10() };
        Self::with_margin(name, value.abs() <= tol, margin)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub symgeo: &'static str,
    pub schema: &'static str,
}

impl Default for Versions {
    fn default() -> Self {
        Versions { symgeo: env!("CARGO_PKG_VERSION"), schema: SCHEMA_VERSION }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: &'static str,
    pub command: String,
    pub inputs: Value,
    pub results: Value,
    pub invariant_checks: Vec<InvariantCheck>,
    pub versions: Versions,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Value>,
}

impl Report {
    pub fn new(command: &str, inputs: Value, results: Value, checks: Vec<InvariantCheck>, seed: u64) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            inputs,
            results,
            invariant_checks: checks,
            versions: Versions::default(),
            seed,
            timings: None,
        }
    }

    pub fn all_hold(&self) -> bool {
        self.invariant_checks.iter().all(|c| c.holds)
    }

    pub fn failed(&self) -> Vec<&InvariantCheck> {
        self.invariant_checks.iter().filter(|c| !c.holds).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Checks attached to an index report. The bounds on A_γ and B_γ are only
/// asserted for Lorentzian orbits.
pub fn index_checks(r: &IndexReport, dim: usize) -> Vec<InvariantCheck> {
    let n = r.iterate;
    let mut c = vec![
        InvariantCheck::exact(format!("galerkin-converged[N={n}]"), r.converged),
        InvariantCheck::decided(format!("galerkin-margin[N={n}]"), r.galerkin.margin),
        InvariantCheck::decided(format!("restricted-margin[N={n}]"), r.restricted.margin),
        InvariantCheck::exact(format!("index-theorem[N={n}]"), r.theorem_holds),
        InvariantCheck::exact(format!("nullity-two-routes[N={n}]"), r.nullity_agrees),
        InvariantCheck::decided(format!("poincare-nullity-margin[N={n}]"), r.boundary.poincare_nullity_margin),
        InvariantCheck::decided(format!("b0-margin[N={n}]"), r.boundary.b0_margin),
        InvariantCheck::decided(format!("n1-margin[N={n}]"), r.boundary.n1_margin),
        InvariantCheck::decided(format!("n0-margin[N={n}]"), r.boundary.n0_margin),
        InvariantCheck::exact(format!("maslov-not-marginal[N={n}]"), !r.maslov_marginal),
        InvariantCheck::exact(format!("vanishing-index-identity[N={n}]"), r.vanishing_identity_holds()),
        InvariantCheck::exact(format!("boundary-term-bound[N={n}]"), r.boundary_bound_holds(dim)),
        InvariantCheck::residual(format!("constraint-residual[N={n}]"), r.galerkin.constraint_residual, 1e-8),
    ];
    if r.metric_index == 1 {
        c.push(InvariantCheck::exact(format!("nullity-at-least-two[N={n}]"), r.nullity >= 2));
        c.push(InvariantCheck::exact(format!("a-gamma-range[N={n}]"), r.a_gamma >= 0 && r.a_gamma < dim as i64));
        c.push(InvariantCheck::exact(format!("b-gamma-range[N={n}]"), r.b_gamma == 0 || r.b_gamma == 1));
    }
    c
}

pub fn iteration_checks(t: &IterationTable) -> Vec<InvariantCheck> {
    let mut c = vec![InvariantCheck::exact("all-rows-converged", t.all_converged)];
    c.push(InvariantCheck::exact("maslov-iteration-bound", t.bounds.iter().all(|b| b.maslov_holds)));
    c.push(InvariantCheck::exact("cz-iteration-bound", t.bounds.iter().all(|b| b.cz_holds.unwrap_or(true))));
    c.push(InvariantCheck::exact("restricted-index-nondecreasing", t.bounds.iter().all(|b| b.mu_bar_monotone)));
    c.push(InvariantCheck::exact("restricted-index-superadditive", t.superadditivity.iter().all(|r| r.holds)));
    c.push(InvariantCheck::exact("superadditivity-defect-bound", t.superadditivity.iter().all(|r| r.defect_holds)));
    c.push(InvariantCheck::exact("spectral-nullity-agrees", t.bounds.iter().all(|b| b.nullity_agrees)));
    for r in t.reports.values() {
        c.extend(index_checks(r, t.dim));
    }
    c
}

pub fn partition_checks(p: &NullityPartition, symplectic_residual: f64) -> Vec<InvariantCheck> {
    vec![
        InvariantCheck::residual("poincare-symplectic", symplectic_residual, 1e-8),
        InvariantCheck::exact("class-count-bound", p.s_bound_holds),
        InvariantCheck::exact("classes-partition", p.is_partition),
        InvariantCheck::exact("nullity-constant-on-classes", p.nullity_constant),
    ]
}

pub fn morse_relations_checks(r: &MorseRelations) -> Vec<InvariantCheck> {
    vec![
        InvariantCheck::exact("strong-relations", r.holds),
        InvariantCheck::exact("weak-relations", r.weak_holds),
    ]
}
