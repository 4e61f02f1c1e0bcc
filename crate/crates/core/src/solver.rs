//! Inexact accelerated forward–backward splitting for the derivative-penalized
//! least-squares objective
//!
//! `Ê(f) = ‖y − Ŝf‖ₙ² + τ (2 Σₐ ‖D̂ₐf‖ₙ + ν ‖f‖²_H)`.
//!
//! The outer loop is a FISTA iteration on the expansion coefficients `(α, β)`.
//! The proximity operator of the derivative penalty has no closed form; it is
//! computed through the Moreau identity as a projection, itself obtained by
//! projected gradient on the dual blocks `v̄ₐ ∈ (τ/σ) Bₙ`. Each inner solve is
//! stopped by a duality-gap certificate whose tolerance shrinks as `t^{-2l}`.

use ndarray::{s, Array1, ArrayView1, ArrayViewMut1, Zip};
use serde::{Deserialize, Serialize};

use crate::data::{inner_n, norm_n, Dataset};
use crate::error::{Error, Result};
use crate::operators::DerivativeSystem;
use crate::selection::{self, SelectionReport};

/// Inner tolerance schedule `εᵗ = C_ε · t^{-l}`; the gap must fall below `(εᵗ)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSchedule {
    /// `None` means `1e-2 · √(initial objective)`.
    pub c_eps: Option<f64>,
    pub exponent: f64,
}

impl Default for InnerSchedule {
    fn default() -> Self {
        Self {
            c_eps: None,
            exponent: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub tau: f64,
    pub nu: f64,
    /// Outer step; defaults to `‖K‖ + τν`.
    pub sigma: Option<f64>,
    /// Inner step; defaults to `‖L‖`.
    pub eta: Option<f64>,
    pub ext_tol: f64,
    pub inner: InnerSchedule,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Required to run with `ν = 0`.
    pub allow_nonstrict: bool,
    pub warm_start: Option<FitState>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: 1e-2,
            nu: 1.0,
            sigma: None,
            eta: None,
            ext_tol: 1e-6,
            inner: InnerSchedule::default(),
            max_outer: 100_000,
            max_inner: 10_000,
            allow_nonstrict: false,
            warm_start: None,
        }
    }
}

impl SolverConfig {
    pub fn with_tau(tau: f64) -> Self {
        Self {
            tau,
            ..Default::default()
        }
    }
}

/// Per outer step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub inner_iters: usize,
    /// Duality gap of the accepted prox and the tolerance it was certified against.
    pub gap: f64,
    pub gap_tol: f64,
    pub objective: f64,
    /// `‖fᵗ − fᵗ⁻¹‖_H`
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitState {
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    /// Dual coefficients, one `n`-block per variable.
    pub vbar: Array1<f64>,
    /// Momentum scalar `s_t`.
    pub s: f64,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub objective: f64,
    pub converged: bool,
    pub tau: f64,
    pub nu: f64,
    pub sigma: f64,
    pub eta: f64,
    pub trace: Vec<StepRecord>,
}

impl FitState {
    pub fn zeros(n: usize, d: usize) -> Self {
        FitState {
            alpha: Array1::zeros(n),
            beta: Array1::zeros(n * d),
            vbar: Array1::zeros(n * d),
            s: 1.0,
            outer_iters: 0,
            inner_iters_total: 0,
            objective: f64::NAN,
            converged: false,
            tau: 0.0,
            nu: 0.0,
            sigma: 0.0,
            eta: 0.0,
            trace: Vec::new(),
        }
    }

    /// `‖v̄ₐ‖ₙ` per variable.
    pub fn dual_norms(&self) -> Vec<f64> {
        let n = self.alpha.len();
        self.vbar
            .exact_chunks(n)
            .into_iter()
            .map(norm_n)
            .collect()
    }
}

/// Result of one inner prox solve.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub vbar: Array1<f64>,
    /// `L v̄`, reused by the outer update.
    pub l_vbar: Array1<f64>,
    pub inner_iters: usize,
    pub gap: f64,
    pub gap_tol: f64,
}

/// Coefficients plus cached products `Kα`, `Zβ`, `Lβ`.
#[derive(Debug, Clone)]
struct Iterate {
    alpha: Array1<f64>,
    beta: Array1<f64>,
    vbar: Array1<f64>,
    k_alpha: Array1<f64>,
    z_beta: Array1<f64>,
    l_beta: Array1<f64>,
}

/// Objective terms of an expansion.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveParts {
    pub risk: f64,
    pub penalty: f64,
    pub h_norm_sq: f64,
    pub total: f64,
}

const REFRESH_EVERY: usize = 100;

pub struct Solver<'a> {
    sys: &'a DerivativeSystem,
    y: ArrayView1<'a, f64>,
    cfg: &'a SolverConfig,
    sigma: f64,
    eta: f64,
}

impl<'a> Solver<'a> {
    pub fn new(sys: &'a DerivativeSystem, y: ArrayView1<'a, f64>, cfg: &'a SolverConfig) -> Result<Self> {
        if y.len() != sys.n() {
            return Err(Error::DimensionMismatch {
                expected: sys.n(),
                got: y.len(),
            });
        }
        if !(cfg.tau.is_finite() && cfg.tau > 0.0) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", cfg.tau)));
        }
        if !(cfg.nu.is_finite() && cfg.nu >= 0.0) {
            return Err(Error::InvalidConfig(format!("nu must be nonnegative, got {}", cfg.nu)));
        }
        if cfg.nu == 0.0 {
            if !cfg.allow_nonstrict {
                return Err(Error::NonStrict);
            }
            log::warn!("nu = 0: objective is not strongly convex, iterates may not converge in H");
        }
        if cfg.inner.exponent <= 1.5 {
            return Err(Error::InvalidConfig(format!(
                "inner schedule exponent must exceed 3/2, got {}",
                cfg.inner.exponent
            )));
        }
        if !(cfg.ext_tol >= 0.0) {
            return Err(Error::InvalidConfig("ext_tol must be nonnegative".into()));
        }
        let min_sigma = sys.norm_k.value + cfg.tau * cfg.nu;
        let sigma = match cfg.sigma {
            Some(s) if s < min_sigma => {
                return Err(Error::InvalidConfig(format!(
                    "sigma = {s} is below ‖K‖ + τν = {min_sigma}"
                )))
            }
            Some(s) => s,
            None => sys.norm_k.step_bound() + cfg.tau * cfg.nu,
        };
        let eta = match cfg.eta {
            Some(e) if e < sys.norm_l.value => {
                return Err(Error::InvalidConfig(format!(
                    "eta = {e} is below ‖L‖ = {}",
                    sys.norm_l.value
                )))
            }
            Some(e) => e,
            None => sys.norm_l.step_bound(),
        };
        if !(sigma > 0.0) {
            return Err(Error::InvalidConfig("outer step sigma must be positive".into()));
        }
        // L = 0 only for degenerate inputs; any positive step is then exact
        let eta = if eta > 0.0 { eta } else { 1.0 };
        Ok(Solver {
            sys,
            y,
            cfg,
            sigma,
            eta,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Radius `τ/σ` of each dual ball.
    pub fn radius(&self) -> f64 {
        self.cfg.tau / self.sigma
    }

    fn shrink(&self) -> f64 {
        1.0 - self.cfg.tau * self.cfg.nu / self.sigma
    }

    fn n(&self) -> usize {
        self.sys.n()
    }

    fn check_state(&self, alpha: ArrayView1<f64>, beta: ArrayView1<f64>) -> Result<()> {
        let (n, nd) = (self.n(), self.n() * self.sys.d());
        if alpha.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: alpha.len(),
            });
        }
        if beta.len() != nd {
            return Err(Error::DimensionMismatch {
                expected: nd,
                got: beta.len(),
            });
        }
        Ok(())
    }

    fn iterate_from(&self, alpha: &Array1<f64>, beta: &Array1<f64>, vbar: &Array1<f64>) -> Iterate {
        iterate_of(self.sys, alpha, beta, vbar)
    }

    fn parts_cached(&self, it: &Iterate) -> ObjectiveParts {
        parts_of(self.sys, self.y, self.cfg.tau, self.cfg.nu, it)
    }

    /// Objective terms of the expansion with coefficients `(α, β)`.
    pub fn objective_parts(&self, alpha: ArrayView1<f64>, beta: ArrayView1<f64>) -> Result<ObjectiveParts> {
        self.check_state(alpha, beta)?;
        let it = self.iterate_from(&alpha.to_owned(), &beta.to_owned(), &Array1::zeros(beta.len()));
        Ok(self.parts_cached(&it))
    }

    pub fn objective(&self, alpha: ArrayView1<f64>, beta: ArrayView1<f64>) -> Result<f64> {
        Ok(self.objective_parts(alpha, beta)?.total)
    }

    fn project(&self, mut v: ArrayViewMut1<f64>) {
        let n = self.n();
        let radius = self.radius();
        for mut blk in v.exact_chunks_mut(n) {
            let norm = norm_n(blk.view());
            if norm > radius {
                let scale = radius / norm;
                blk.mapv_inplace(|x| x * scale);
            }
        }
    }

    fn eps_sq(&self, c_eps: f64, t: usize) -> f64 {
        let e = c_eps * (t as f64).powf(-self.cfg.inner.exponent);
        e * e
    }

    /// Duality gap `2 Σₐ [(τ/σ) ‖Dₐ‖ₙ − ⟨vₐ, Dₐ⟩ₙ]` of a candidate prox whose
    /// derivative values are `D = b − Lv`, plus the magnitude the rounding error
    /// of that gap scales with. `D` comes out of a cancellation, so the
    /// magnitude uses `‖b‖ + ‖Lv‖` rather than `‖D‖`.
    fn gap(&self, v: &Array1<f64>, deriv: &Array1<f64>, b: &Array1<f64>, lv: &Array1<f64>) -> (f64, f64) {
        let n = self.n();
        let radius = self.radius();
        let mut gap = 0.0;
        let mut scale = 0.0;
        for (a, (vb, db)) in v.exact_chunks(n).into_iter().zip(deriv.exact_chunks(n)).enumerate() {
            let dn = radius * norm_n(db);
            let ip = inner_n(vb, db);
            gap += dn - ip;
            let parts = norm_n(block(b, n, a)) + norm_n(block(lv, n, a));
            scale += dn + ip.abs() + (radius + norm_n(vb)) * parts;
        }
        (2.0 * gap, 2.0 * scale)
    }

    /// Projected-gradient solve of the dual problem defining the prox.
    /// `b = Zᵀ g_α + L g_β` is the derivative data of the forward point.
    fn inner_core(&self, b: &Array1<f64>, v0: ArrayView1<f64>, eps_sq: f64, t: usize) -> Result<InnerResult> {
        let mut v = v0.to_owned();
        self.project(v.view_mut());
        let mut lv = self.sys.apply_l_unchecked(v.view());
        let step = 1.0 / self.eta;
        let mut last = (f64::INFINITY, eps_sq);
        for q in 1..=self.cfg.max_inner {
            let mut next = v.clone();
            Zip::from(&mut next)
                .and(&lv)
                .and(b)
                .for_each(|x, &lvi, &bi| *x -= step * (lvi - bi));
            self.project(next.view_mut());
            let l_next = self.sys.apply_l_unchecked(next.view());
            let deriv = b - &l_next;
            let (gap, scale) = self.gap(&next, &deriv, b, &l_next);
            // below this the gap is rounding noise
            let tol = eps_sq.max(64.0 * f64::EPSILON * scale);
            let fixed = next == v;
            v = next;
            lv = l_next;
            last = (gap, tol);
            if gap <= tol || fixed {
                return Ok(InnerResult {
                    vbar: v,
                    l_vbar: lv,
                    inner_iters: q,
                    gap,
                    gap_tol: tol,
                });
            }
        }
        Err(Error::InnerNotCertified {
            outer: t,
            inner: self.cfg.max_inner,
            gap: last.0,
            tol: last.1,
        })
    }

    /// Inner prox solve for the forward point with coefficients `(g_α, g_β)`,
    /// warm-started at `v0`, at outer step `t`.
    pub fn inner_prox(
        &self,
        g_alpha: ArrayView1<f64>,
        g_beta: ArrayView1<f64>,
        v0: ArrayView1<f64>,
        t: usize,
        c_eps: f64,
    ) -> Result<InnerResult> {
        self.check_state(g_alpha, g_beta)?;
        if v0.len() != g_beta.len() {
            return Err(Error::DimensionMismatch {
                expected: g_beta.len(),
                got: v0.len(),
            });
        }
        let b = self.sys.z().t().dot(&g_alpha) + self.sys.apply_l_unchecked(g_beta);
        self.inner_core(&b, v0, self.eps_sq(c_eps, t), t)
    }

    fn step(&self, prev: &Iterate, prev2: &Iterate, s_prev: f64, t: usize, c_eps: f64) -> Result<(Iterate, f64, InnerResult)> {
        let s_t = 0.5 * (1.0 + (1.0 + 4.0 * s_prev * s_prev).sqrt());
        let c1 = 1.0 + (s_prev - 1.0) / s_t;
        let c2 = (1.0 - s_prev) / s_t;
        let comb = |a: &Array1<f64>, b: &Array1<f64>| -> Array1<f64> {
            let mut out = a * c1;
            out.scaled_add(c2, b);
            out
        };
        let alpha_t = comb(&prev.alpha, &prev2.alpha);
        let beta_t = comb(&prev.beta, &prev2.beta);
        let fitted_t = comb(&(&prev.k_alpha + &prev.z_beta), &(&prev2.k_alpha + &prev2.z_beta));
        let l_beta_t = comb(&prev.l_beta, &prev2.l_beta);

        let shrink = self.shrink();
        let mut alpha = &alpha_t * shrink;
        alpha.scaled_add(-1.0 / self.sigma, &(&fitted_t - &self.y));

        let g_beta = &beta_t * shrink;
        let l_g_beta = &l_beta_t * shrink;
        let b = self.sys.z().t().dot(&alpha) + &l_g_beta;
        let inner = self.inner_core(&b, prev.vbar.view(), self.eps_sq(c_eps, t), t)?;

        let beta = &g_beta - &inner.vbar;
        let l_beta = &l_g_beta - &inner.l_vbar;
        let k_alpha = self.sys.k().dot(&alpha);
        let z_beta = self.sys.z().dot(&beta);
        let next = Iterate {
            alpha,
            beta,
            vbar: inner.vbar.clone(),
            k_alpha,
            z_beta,
            l_beta,
        };
        Ok((next, s_t, inner))
    }

    fn state_from(&self, it: &Iterate, s: f64) -> FitState {
        FitState {
            alpha: it.alpha.clone(),
            beta: it.beta.clone(),
            vbar: it.vbar.clone(),
            s,
            outer_iters: 0,
            inner_iters_total: 0,
            objective: self.parts_cached(it).total,
            converged: false,
            tau: self.cfg.tau,
            nu: self.cfg.nu,
            sigma: self.sigma,
            eta: self.eta,
            trace: Vec::new(),
        }
    }

    fn default_c_eps(&self, initial_objective: f64) -> f64 {
        self.cfg
            .inner
            .c_eps
            .unwrap_or_else(|| 1e-2 * initial_objective.max(0.0).sqrt())
    }

    /// One outer iteration from `fᵗ⁻¹ = prev` and `fᵗ⁻² = prev2`; `prev.s` is `s_{t−1}`.
    pub fn outer_step(&self, prev: &FitState, prev2: &FitState, t: usize, c_eps: f64) -> Result<FitState> {
        if t < 2 {
            return Err(Error::InvalidConfig("outer steps start at t = 2".into()));
        }
        for st in [prev, prev2] {
            self.check_state(st.alpha.view(), st.beta.view())?;
            if st.vbar.len() != st.beta.len() {
                return Err(Error::DimensionMismatch {
                    expected: st.beta.len(),
                    got: st.vbar.len(),
                });
            }
        }
        let p1 = self.iterate_from(&prev.alpha, &prev.beta, &prev.vbar);
        let p2 = self.iterate_from(&prev2.alpha, &prev2.beta, &prev2.vbar);
        let (next, s_t, inner) = self.step(&p1, &p2, prev.s, t, c_eps)?;
        let mut st = self.state_from(&next, s_t);
        st.outer_iters = prev.outer_iters + 1;
        st.inner_iters_total = prev.inner_iters_total + inner.inner_iters;
        Ok(st)
    }

    /// Run outer steps until `‖fᵗ − fᵗ⁻¹‖_H ≤ ε_ext · max(1, ‖fᵗ‖_H)` or `max_outer`.
    pub fn fit(&self) -> Result<FitState> {
        let (n, d) = (self.n(), self.sys.d());
        let start = match &self.cfg.warm_start {
            Some(w) => {
                self.check_state(w.alpha.view(), w.beta.view())?;
                if w.vbar.len() != n * d {
                    return Err(Error::DimensionMismatch {
                        expected: n * d,
                        got: w.vbar.len(),
                    });
                }
                self.iterate_from(&w.alpha, &w.beta, &w.vbar)
            }
            None => {
                let z = FitState::zeros(n, d);
                self.iterate_from(&z.alpha, &z.beta, &z.vbar)
            }
        };
        let obj0 = self.parts_cached(&start).total;
        let c_eps = self.default_c_eps(obj0);

        let mut trace = vec![StepRecord {
            t: 1,
            inner_iters: 0,
            gap: 0.0,
            gap_tol: 0.0,
            objective: obj0,
            step_norm: 0.0,
        }];
        let mut prev2 = start.clone();
        let mut prev = start;
        let mut s = 1.0;
        let mut inner_total = 0usize;
        let mut converged = false;
        let mut outer = 0usize;

        for t in 2..=self.cfg.max_outer.saturating_add(1) {
            let (mut next, s_t, inner) = self.step(&prev, &prev2, s, t, c_eps)?;
            if t % REFRESH_EVERY == 0 {
                // Both iterates feed the momentum step. Refreshing only one turns
                // the other's drift into a velocity that grows between refreshes.
                next = self.iterate_from(&next.alpha, &next.beta, &next.vbar);
                prev = self.iterate_from(&prev.alpha, &prev.beta, &prev.vbar);
            }
            outer += 1;
            inner_total += inner.inner_iters;

            let d_alpha = &next.alpha - &prev.alpha;
            let d_beta = &next.beta - &prev.beta;
            let step_sq = inner_n(d_alpha.view(), (&next.k_alpha - &prev.k_alpha).view())
                + 2.0 * inner_n(d_alpha.view(), (&next.z_beta - &prev.z_beta).view())
                + d_beta.dot(&(&next.l_beta - &prev.l_beta)) / n as f64;
            let step_norm = step_sq.max(0.0).sqrt();
            let parts = self.parts_cached(&next);
            if !parts.total.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "objective became non-finite at outer step {t}"
                )));
            }
            trace.push(StepRecord {
                t,
                inner_iters: inner.inner_iters,
                gap: inner.gap,
                gap_tol: inner.gap_tol,
                objective: parts.total,
                step_norm,
            });

            prev2 = std::mem::replace(&mut prev, next);
            s = s_t;
            if step_norm <= self.cfg.ext_tol * parts.h_norm_sq.max(1.0).sqrt() {
                converged = true;
                break;
            }
        }

        let mut st = self.state_from(&prev, s);
        st.outer_iters = outer;
        st.inner_iters_total = inner_total;
        st.converged = converged;
        st.trace = trace;
        Ok(st)
    }

    /// Default `C_ε` for a cold start from the zero function.
    pub fn cold_c_eps(&self) -> f64 {
        self.default_c_eps(inner_n(self.y, self.y))
    }
}

fn iterate_of(sys: &DerivativeSystem, alpha: &Array1<f64>, beta: &Array1<f64>, vbar: &Array1<f64>) -> Iterate {
    Iterate {
        alpha: alpha.clone(),
        beta: beta.clone(),
        vbar: vbar.clone(),
        k_alpha: sys.k().dot(alpha),
        z_beta: sys.z().dot(beta),
        l_beta: sys.apply_l_unchecked(beta.view()),
    }
}

fn parts_of(sys: &DerivativeSystem, y: ArrayView1<f64>, tau: f64, nu: f64, it: &Iterate) -> ObjectiveParts {
    let n = sys.n();
    let fitted = &it.k_alpha + &it.z_beta;
    let resid = &y - &fitted;
    let risk = inner_n(resid.view(), resid.view());
    let deriv = sys.z().t().dot(&it.alpha) + &it.l_beta;
    let omega: f64 = deriv.exact_chunks(n).into_iter().map(norm_n).sum();
    let h_norm_sq = inner_n(it.alpha.view(), it.k_alpha.view())
        + 2.0 * inner_n(it.alpha.view(), it.z_beta.view())
        + it.beta.dot(&it.l_beta) / n as f64;
    let penalty = tau * (2.0 * omega + nu * h_norm_sq);
    ObjectiveParts {
        risk,
        penalty,
        h_norm_sq,
        total: risk + penalty,
    }
}

/// Objective terms for arbitrary `τ ≥ 0`, `ν ≥ 0`.
pub fn objective_terms(
    sys: &DerivativeSystem,
    y: ArrayView1<f64>,
    tau: f64,
    nu: f64,
    alpha: ArrayView1<f64>,
    beta: ArrayView1<f64>,
) -> Result<ObjectiveParts> {
    let (n, nd) = (sys.n(), sys.n() * sys.d());
    for (want, got) in [(n, y.len()), (n, alpha.len()), (nd, beta.len())] {
        if want != got {
            return Err(Error::DimensionMismatch { expected: want, got });
        }
    }
    let it = iterate_of(sys, &alpha.to_owned(), &beta.to_owned(), &Array1::zeros(nd));
    Ok(parts_of(sys, y, tau, nu, &it))
}

/// Objective value of the expansion stored in `st`.
pub fn objective(sys: &DerivativeSystem, data: &Dataset, cfg: &SolverConfig, st: &FitState) -> Result<f64> {
    Ok(objective_terms(sys, data.y.view(), cfg.tau, cfg.nu, st.alpha.view(), st.beta.view())?.total)
}

pub fn fit(sys: &DerivativeSystem, data: &Dataset, cfg: &SolverConfig) -> Result<FitState> {
    Solver::new(sys, data.y.view(), cfg)?.fit()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathEntry {
    pub tau: f64,
    pub state: Option<FitState>,
    pub selection: Option<SelectionReport>,
    pub error: Option<String>,
    pub validation_rmse: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathResult {
    pub entries: Vec<PathEntry>,
}

/// Fit a strictly descending sequence of `τ`, each warm-started from the
/// previous solution (coefficients and dual blocks; momentum restarts).
pub fn fit_path(sys: &DerivativeSystem, y: ArrayView1<f64>, taus: &[f64], template: &SolverConfig, delta: f64) -> Result<PathResult> {
    if taus.is_empty() {
        return Err(Error::InvalidConfig("empty tau grid".into()));
    }
    if taus.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::InvalidConfig("tau grid must be strictly descending".into()));
    }
    let mut entries = Vec::with_capacity(taus.len());
    let mut warm = template.warm_start.clone();
    for &tau in taus {
        let cfg = SolverConfig {
            tau,
            warm_start: warm.clone(),
            ..template.clone()
        };
        let res = Solver::new(sys, y.reborrow(), &cfg).and_then(|s| s.fit());
        match res {
            Ok(st) => {
                let selection = selection::select(sys, &st, delta).ok();
                warm = Some(st.clone());
                entries.push(PathEntry {
                    tau,
                    state: Some(st),
                    selection,
                    error: None,
                    validation_rmse: None,
                });
            }
            Err(e) => entries.push(PathEntry {
                tau,
                state: None,
                selection: None,
                error: Some(e.to_string()),
                validation_rmse: None,
            }),
        }
    }
    Ok(PathResult { entries })
}

/// Values of `∂f/∂xᵃ` at the training inputs, block-wise: `Zₐᵀα + Lₐβ`.
pub fn derivative_values(sys: &DerivativeSystem, alpha: ArrayView1<f64>, beta: ArrayView1<f64>) -> Result<Array1<f64>> {
    Ok(sys.apply_zt(alpha)? + sys.apply_l(beta)?)
}

/// Values of `f` at the training inputs: `Kα + Zβ`.
pub fn fitted_values(sys: &DerivativeSystem, alpha: ArrayView1<f64>, beta: ArrayView1<f64>) -> Result<Array1<f64>> {
    Ok(sys.apply_k(alpha)? + sys.apply_z(beta)?)
}

/// `‖f‖²_H` of an expansion.
pub fn h_norm_sq(sys: &DerivativeSystem, alpha: ArrayView1<f64>, beta: ArrayView1<f64>) -> Result<f64> {
    let n = sys.n() as f64;
    let ka = sys.apply_k(alpha)?;
    let zb = sys.apply_z(beta)?;
    let lb = sys.apply_l(beta)?;
    Ok((alpha.dot(&ka) + 2.0 * alpha.dot(&zb) + beta.dot(&lb)) / n)
}

/// Blocks of a block-wise vector.
pub fn block(v: &Array1<f64>, n: usize, a: usize) -> ArrayView1<'_, f64> {
    v.slice(s![a * n..(a + 1) * n])
}
