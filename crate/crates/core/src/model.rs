//! Fitted kernel expansions and the regularized least-squares refit.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{rmse, Dataset};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::solver::FitState;

pub const MODEL_FORMAT: &str = "denovas-model";
pub const MODEL_VERSION: u32 = 1;

/// Solver summary stored with a model so that selection can be redone offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub tau: f64,
    pub nu: f64,
    pub sigma: f64,
    pub vbar: Array1<f64>,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub objective: f64,
    pub converged: bool,
}

/// `f(x) = (1/n) Σᵢ αᵢ k(xᵢ, x) + (1/n) Σᵢ Σₐ βₐᵢ ∂ₐk(xᵢ, x)`,
/// where `∂ₐ` differentiates the first argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub kernel: Kernel,
    pub anchors: Array2<f64>,
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    /// Sorted, 0-based.
    pub selected: Option<Vec<usize>>,
    pub names: Option<Vec<String>>,
    pub fit_info: Option<FitInfo>,
}

#[derive(Serialize, Deserialize)]
struct Document<T> {
    format: String,
    version: u32,
    kind: String,
    model: T,
}

fn to_document<T: Serialize>(kind: &str, model: &T) -> Result<String> {
    let doc = Document {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        kind: kind.into(),
        model,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

fn from_document<T: for<'de> Deserialize<'de>>(kind: &str, text: &str) -> Result<T> {
    let doc: Document<T> = serde_json::from_str(text)?;
    if doc.format != MODEL_FORMAT {
        return Err(Error::InvalidConfig(format!("not a model document: format '{}'", doc.format)));
    }
    if doc.version != MODEL_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported model version {} (expected {MODEL_VERSION})",
            doc.version
        )));
    }
    if doc.kind != kind {
        return Err(Error::InvalidConfig(format!("expected a '{kind}' model, found '{}'", doc.kind)));
    }
    Ok(doc.model)
}

fn check_point(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    Ok(())
}

fn check_rows(x: ArrayView2<f64>, d: usize) -> Result<()> {
    if x.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.ncols(),
        });
    }
    Ok(())
}

impl FittedModel {
    pub fn from_fit(kernel: &Kernel, data: &Dataset, st: &FitState, selected: Option<Vec<usize>>) -> Result<Self> {
        let (n, d) = (data.n(), data.d());
        if st.alpha.len() != n || st.beta.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * (d + 1),
                got: st.alpha.len() + st.beta.len(),
            });
        }
        let model = FittedModel {
            kernel: *kernel,
            anchors: data.x.as_standard_layout().into_owned(),
            alpha: st.alpha.clone(),
            beta: st.beta.clone(),
            selected,
            names: data.names.clone(),
            fit_info: Some(FitInfo {
                tau: st.tau,
                nu: st.nu,
                sigma: st.sigma,
                vbar: st.vbar.clone(),
                outer_iters: st.outer_iters,
                inner_iters_total: st.inner_iters_total,
                objective: st.objective,
                converged: st.converged,
            }),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn d(&self) -> usize {
        self.anchors.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        let (n, d) = self.anchors.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidConfig("model has no anchors".into()));
        }
        if self.alpha.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.alpha.len(),
            });
        }
        if self.beta.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: self.beta.len(),
            });
        }
        if let Some(sel) = &self.selected {
            if let Some(&a) = sel.iter().find(|&&a| a >= d) {
                return Err(Error::IndexOutOfRange { index: a, dim: d });
            }
            if sel.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidConfig("selected set must be sorted and unique".into()));
            }
        }
        if let Some(names) = &self.names {
            if names.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: names.len(),
                });
            }
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.d())?;
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let (n, d) = (self.n(), self.d());
        let mut acc = 0.0;
        let anchors = self.anchors.as_standard_layout();
        for (i, anchor) in anchors.outer_iter().enumerate() {
            let s = anchor.as_slice().expect("standard layout");
            acc += self.alpha[i] * self.kernel.eval_unchecked(s, x);
            for a in 0..d {
                let b = self.beta[a * n + i];
                if b != 0.0 {
                    acc += b * self.kernel.d1_unchecked(a, s, x);
                }
            }
        }
        acc / n as f64
    }

    pub fn predict_many(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_rows(x, self.d())?;
        let x = x.as_standard_layout();
        Ok(x.outer_iter()
            .map(|row| self.predict_unchecked(row.as_slice().expect("standard layout")))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        to_document("expansion", self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: FittedModel = from_document("expansion", text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Kernel ridge regression on a subset of the variables:
/// `f(x) = Σᵢ cᵢ k(xᵢ|S, x|S)` with `(G + λ n I) c = y` on the raw Gram `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlsModel {
    pub kernel: Kernel,
    /// Sorted, 0-based, into the full input dimension `d`.
    pub selected: Vec<usize>,
    pub d: usize,
    /// Training inputs restricted to `selected`.
    pub anchors: Array2<f64>,
    pub coeffs: Array1<f64>,
    pub lambda: f64,
    /// Set when nothing is selected; the model then predicts this constant.
    pub constant: Option<f64>,
    pub validation_rmse: Option<f64>,
}

pub const LAMBDA_FLOOR: f64 = 1e-10;
const JITTER: f64 = 1e-10;

fn gram(kernel: &Kernel, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let mut g = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.outer_iter().enumerate() {
        let ra = ra.to_slice().expect("standard layout");
        for (j, rb) in b.outer_iter().enumerate() {
            g[[i, j]] = kernel.eval_unchecked(ra, rb.to_slice().expect("standard layout"));
        }
    }
    g
}

fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Solve `(G + λ n I) c = y` by Cholesky, retrying once with diagonal jitter.
pub fn rls_solve(g: &Array2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<Array1<f64>> {
    let n = g.nrows();
    let lambda = lambda.max(LAMBDA_FLOOR);
    let rhs = DVector::from_iterator(n, y.iter().cloned());
    for jitter in [0.0, JITTER] {
        let mut a = to_na(g);
        for i in 0..n {
            a[(i, i)] += lambda * n as f64 + jitter;
        }
        if let Some(ch) = a.cholesky() {
            let c = ch.solve(&rhs);
            return Ok(Array1::from_iter(c.iter().cloned()));
        }
    }
    Err(Error::Factorization(format!("RLS system not positive definite at lambda = {lambda:e}")))
}

/// Default grid: 30 geometric points over `[1e-6, 10] · trace(G)/n`.
pub fn default_lambda_grid(g: &Array2<f64>) -> Vec<f64> {
    let n = g.nrows() as f64;
    let scale = (g.diag().sum() / n).max(LAMBDA_FLOOR);
    geometric_grid(1e-6 * scale, 10.0 * scale, 30)
}

/// `count` geometric points from `lo` to `hi` inclusive, ascending.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (l0, l1) = (lo.ln(), hi.ln());
            (0..count)
                .map(|k| (l0 + (l1 - l0) * k as f64 / (count - 1) as f64).exp())
                .collect()
        }
    }
}

impl RlsModel {
    fn restrict(&self, x: &[f64]) -> Vec<f64> {
        self.selected.iter().map(|&a| x[a]).collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.d)?;
        if let Some(c) = self.constant {
            return Ok(c);
        }
        let xs = self.restrict(x);
        let anchors = self.anchors.as_standard_layout();
        Ok(anchors
            .outer_iter()
            .zip(self.coeffs.iter())
            .map(|(row, c)| c * self.kernel.eval_unchecked(row.as_slice().expect("standard layout"), &xs))
            .sum())
    }

    pub fn predict_many(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_rows(x, self.d)?;
        if let Some(c) = self.constant {
            return Ok(Array1::from_elem(x.nrows(), c));
        }
        let g = gram(&self.kernel, x.select(Axis(1), &self.selected).view(), self.anchors.view());
        Ok(g.dot(&self.coeffs))
    }

    pub fn is_constant(&self) -> bool {
        self.constant.is_some()
    }

    pub fn to_json(&self) -> Result<String> {
        to_document("rls", self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_document("rls", text)
    }
}

fn check_selected(selected: &[usize], d: usize) -> Result<Vec<usize>> {
    if let Some(&a) = selected.iter().find(|&&a| a >= d) {
        return Err(Error::IndexOutOfRange { index: a, dim: d });
    }
    let mut sel = selected.to_vec();
    sel.sort_unstable();
    sel.dedup();
    Ok(sel)
}

fn constant_model(kernel: &Kernel, data: &Dataset, holdout: Option<&Dataset>) -> RlsModel {
    let mean = data.y_mean();
    let validation_rmse = holdout.map(|h| rmse(Array1::from_elem(h.n(), mean).view(), h.y.view()));
    RlsModel {
        kernel: *kernel,
        selected: vec![],
        d: data.d(),
        anchors: Array2::zeros((0, 0)),
        coeffs: Array1::zeros(0),
        lambda: 0.0,
        constant: Some(mean),
        validation_rmse,
    }
}

/// RLS with a fixed `λ`.
pub fn rls_fit_fixed(kernel: &Kernel, data: &Dataset, selected: &[usize], lambda: f64) -> Result<RlsModel> {
    kernel.validate()?;
    let sel = check_selected(selected, data.d())?;
    if sel.is_empty() {
        return Ok(constant_model(kernel, data, None));
    }
    let anchors = data.select_columns(&sel);
    let g = gram(kernel, anchors.view(), anchors.view());
    let coeffs = rls_solve(&g, data.y.view(), lambda)?;
    Ok(RlsModel {
        kernel: *kernel,
        selected: sel,
        d: data.d(),
        anchors,
        coeffs,
        lambda: lambda.max(LAMBDA_FLOOR),
        constant: None,
        validation_rmse: None,
    })
}

/// RLS on the selected variables with `λ` chosen by hold-out RMSE over the grid
/// (default grid when `None`). Ties keep the larger `λ`.
pub fn rls_fit(
    kernel: &Kernel,
    data: &Dataset,
    selected: &[usize],
    lambda_grid: Option<&[f64]>,
    holdout: &Dataset,
) -> Result<RlsModel> {
    kernel.validate()?;
    if holdout.d() != data.d() {
        return Err(Error::DimensionMismatch {
            expected: data.d(),
            got: holdout.d(),
        });
    }
    let sel = check_selected(selected, data.d())?;
    if sel.is_empty() {
        log::debug!("empty selection: falling back to the training mean");
        return Ok(constant_model(kernel, data, Some(holdout)));
    }
    let n = data.n();
    let anchors = data.select_columns(&sel);
    let g = gram(kernel, anchors.view(), anchors.view());
    let grid: Vec<f64> = match lambda_grid {
        Some([]) => return Err(Error::InvalidConfig("empty lambda grid".into())),
        Some(gr) => gr.iter().map(|l| l.max(LAMBDA_FLOOR)).collect(),
        None => default_lambda_grid(&g),
    };

    // one eigendecomposition scores the whole grid
    let eig = to_na(&g).symmetric_eigen();
    let q = &eig.eigenvectors;
    let qty = q.transpose() * DVector::from_iterator(n, data.y.iter().cloned());
    let g_val = gram(kernel, holdout.select_columns(&sel).view(), anchors.view());
    let gq = to_na(&g_val) * q;
    let mut best: Option<(f64, f64)> = None;
    let mut sorted = grid.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    for &lam in &sorted {
        let w = DVector::from_fn(n, |i, _| qty[i] / (eig.eigenvalues[i].max(0.0) + lam * n as f64));
        let pred = &gq * w;
        let score = (pred
            .iter()
            .zip(holdout.y.iter())
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / holdout.n() as f64)
            .sqrt();
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, lam));
        }
    }
    let (_, lambda) = best.expect("grid is non-empty");
    let coeffs = rls_solve(&g, data.y.view(), lambda)?;
    let validation_rmse = Some(rmse(g_val.dot(&coeffs).view(), holdout.y.view()));
    Ok(RlsModel {
        kernel: *kernel,
        selected: sel,
        d: data.d(),
        anchors,
        coeffs,
        lambda,
        constant: None,
        validation_rmse,
    })
}
