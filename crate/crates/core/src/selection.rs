//! Variable selection from the dual coefficients of a fit.
//!
//! At the minimizer, `‖v̄ₐ‖ₙ < τ/σ` forces `D̂ₐf̂ = 0`; variables whose dual
//! block reaches the ball boundary (up to a relative slack `δ`) are selected.

use serde::{Deserialize, Serialize};

use crate::data::norm_n;
use crate::error::{Error, Result};
use crate::operators::DerivativeSystem;
use crate::solver::{derivative_values, FitState};

pub const DEFAULT_DELTA: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub dual_norms: Vec<f64>,
    pub deriv_norms: Vec<f64>,
    /// `(1 − δ) τ/σ`
    pub threshold: f64,
    /// Sorted, 0-based.
    pub selected: Vec<usize>,
    pub margin: Vec<f64>,
    pub empty: bool,
    pub tau: f64,
    pub sigma: f64,
    pub delta: f64,
    pub diagnostics: SlackDiagnostics,
}

/// Plug-in evaluation of the exact selection slack `(ε̃ᵗ)²/(2m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackDiagnostics {
    /// Smallest positive derivative norm.
    pub m: Option<f64>,
    /// `t² |Eₜ₋₁ − Eₜ|` from the last two trace entries.
    pub c_hat: Option<f64>,
    pub eps_tilde_sq: Option<f64>,
    /// `τ/σ − (ε̃ᵗ)²/(2m)`
    pub exact_threshold: Option<f64>,
}

/// One JSON row per variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionRow {
    pub name: String,
    pub dual_norm: f64,
    pub deriv_norm: f64,
    pub margin: f64,
    pub selected: bool,
}

impl SelectionReport {
    pub fn rows(&self, names: &[String]) -> Vec<SelectionRow> {
        (0..self.dual_norms.len())
            .map(|a| SelectionRow {
                name: names.get(a).cloned().unwrap_or_else(|| format!("x{}", a + 1)),
                dual_norm: self.dual_norms[a],
                deriv_norm: self.deriv_norms[a],
                margin: self.margin[a],
                selected: self.selected.binary_search(&a).is_ok(),
            })
            .collect()
    }

    pub fn is_selected(&self, a: usize) -> bool {
        self.selected.binary_search(&a).is_ok()
    }
}

/// Selected set `{a : ‖v̄ₐ‖ₙ ≥ (1 − δ) τ/σ}` plus derivative norms and diagnostics.
pub fn select(sys: &DerivativeSystem, st: &FitState, delta: f64) -> Result<SelectionReport> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidConfig(format!("delta must lie in [0, 1), got {delta}")));
    }
    let (n, d) = (sys.n(), sys.d());
    if st.vbar.len() != n * d {
        return Err(Error::DimensionMismatch {
            expected: n * d,
            got: st.vbar.len(),
        });
    }
    if !(st.sigma > 0.0) {
        return Err(Error::InvalidConfig("fit state carries no step size".into()));
    }
    let radius = st.tau / st.sigma;
    let threshold = (1.0 - delta) * radius;
    let dual_norms = st.dual_norms();
    let deriv = derivative_values(sys, st.alpha.view(), st.beta.view())?;
    let deriv_norms: Vec<f64> = deriv.exact_chunks(n).into_iter().map(norm_n).collect();
    let selected: Vec<usize> = (0..d).filter(|&a| dual_norms[a] >= threshold).collect();
    let margin = dual_norms.iter().map(|v| v - threshold).collect();
    let diagnostics = slack(sys, st, radius, &deriv_norms);
    Ok(SelectionReport {
        dual_norms,
        deriv_norms,
        threshold,
        empty: selected.is_empty(),
        selected,
        margin,
        tau: st.tau,
        sigma: st.sigma,
        delta,
        diagnostics,
    })
}

fn slack(sys: &DerivativeSystem, st: &FitState, radius: f64, deriv_norms: &[f64]) -> SlackDiagnostics {
    let top = deriv_norms.iter().cloned().fold(0.0, f64::max);
    let m = deriv_norms
        .iter()
        .cloned()
        .filter(|&v| v > 1e-12 * top && v > 0.0)
        .reduce(f64::min);
    let (c_hat, eps_sq, t) = match st.trace.as_slice() {
        [.., a, b] => {
            let t = b.t as f64;
            (Some(t * t * (a.objective - b.objective).abs()), b.gap_tol, t)
        }
        _ => (None, 0.0, 1.0),
    };
    let eps_tilde_sq = match c_hat {
        Some(c) if st.tau * st.nu > 0.0 => {
            let l_sum: f64 = sys.diagonal_block_norms().iter().map(|v| v.sqrt()).sum();
            Some(eps_sq + (c / (st.tau * st.nu)).sqrt() * (radius * l_sum + 1.0) * 4.0 / t)
        }
        _ => None,
    };
    let exact_threshold = match (eps_tilde_sq, m) {
        (Some(e), Some(m)) => Some(radius - e / (2.0 * m)),
        _ => None,
    };
    SlackDiagnostics {
        m,
        c_hat,
        eps_tilde_sq,
        exact_threshold,
    }
}

/// Unselected variables whose derivative norm is non-negligible and exceeds what
/// the last certified inner gap allows.
///
/// For an unselected block the gap bounds `2 (τ/σ − ‖v̄ₐ‖ₙ) ‖D̂ₐf‖ₙ`, so at an
/// inexact iterate a small derivative is consistent with an unselected variable.
pub fn safe_filter_violations(report: &SelectionReport, st: &FitState) -> Vec<usize> {
    let top = report.deriv_norms.iter().cloned().fold(0.0, f64::max);
    let radius = report.tau / report.sigma;
    let gap = st.trace.last().map_or(0.0, |r| r.gap.max(0.0));
    let rounding = 1e-12 * (top + radius);
    (0..report.deriv_norms.len())
        .filter(|&a| !report.is_selected(a))
        .filter(|&a| {
            let dn = report.deriv_norms[a];
            let room = radius - report.dual_norms[a];
            let certified = if room > 0.0 { gap / (2.0 * room) } else { f64::INFINITY };
            dn > 1e-6 * top && dn > certified * (1.0 + 1e-9) + rounding
        })
        .collect()
}

/// Mean of the false-negative and false-positive rates. Indices are 0-based.
pub fn selection_error(selected: &[usize], truth: &[usize], d: usize) -> f64 {
    let fneg = truth.iter().filter(|a| !selected.contains(a)).count();
    let fpos = selected.iter().filter(|a| !truth.contains(a)).count();
    let fnr = if truth.is_empty() {
        0.0
    } else {
        fneg as f64 / truth.len() as f64
    };
    let fpr = if d > truth.len() {
        fpos as f64 / (d - truth.len()) as f64
    } else {
        0.0
    };
    0.5 * (fnr + fpr)
}
