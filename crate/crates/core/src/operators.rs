//! Empirical Gram operators of the kernel, its derivative sections and their
//! cross terms, all carrying the `1/n` sample normalization.
//!
//! With `f = (1/n) Σᵢ αᵢ k_{xᵢ} + (1/n) Σᵢ Σₐ β_{a,i} (∂ₐk)_{xᵢ}` the operators act as
//!
//! * `K α + Z β`: values of `f` at the training inputs,
//! * `Zₐᵀ α + Lₐ β`: values of `∂f/∂xᵃ` at the training inputs,
//!
//! where `[Zₐ]_{i,i'} = (1/n) ∂k(u, xᵢ)/∂uᵃ |_{u = x_{i'}}` and
//! `[L_{a,b}]_{i,i'} = (1/n) ∂²k(u, w)/∂uᵃ∂wᵇ |_{u = xᵢ, w = x_{i'}}`.
//! Coefficient vectors over variables are stored block-wise: entry `a·n + i`.

use std::sync::OnceLock;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{Kernel, Profile};

/// How the `nd × nd` derivative Gram `L` is held in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramStorage {
    /// Dense when `d ≤ 3` and within the byte cap, structured otherwise.
    Auto,
    Dense,
    /// Matrix-free product in `O(n²d)` using the radial / dot-product form of the kernel.
    Structured,
}

#[derive(Debug, Clone)]
pub struct AssembleOptions {
    pub storage: GramStorage,
    pub max_dense_bytes: usize,
    pub norm_tol: f64,
    pub norm_max_iter: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            storage: GramStorage::Auto,
            max_dense_bytes: 512 << 20,
            norm_tol: 1e-6,
            norm_max_iter: 1000,
        }
    }
}

/// Power-iteration estimate of a spectral norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl NormEstimate {
    /// Value usable as a step-size bound: inflated by 10% when power iteration
    /// did not converge.
    pub fn step_bound(&self) -> f64 {
        if self.converged {
            self.value
        } else {
            1.1 * self.value
        }
    }
}

enum LOperator {
    Dense(Array2<f64>),
    Structured {
        /// `A/n` and `B/n` of the profile form, symmetric `n × n`.
        a: Array2<f64>,
        b: Array2<f64>,
    },
}

pub struct DerivativeSystem {
    kernel: Kernel,
    x: Array2<f64>,
    k: Array2<f64>,
    z: Array2<f64>,
    l: LOperator,
    pub norm_k: NormEstimate,
    pub norm_l: NormEstimate,
    block_norms: OnceLock<Vec<f64>>,
}

impl std::fmt::Debug for DerivativeSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DerivativeSystem")
            .field("kernel", &self.kernel)
            .field("n", &self.n())
            .field("d", &self.d())
            .field("dense_l", &self.is_dense())
            .field("norm_k", &self.norm_k)
            .field("norm_l", &self.norm_l)
            .finish()
    }
}

impl DerivativeSystem {
    pub fn assemble(kernel: &Kernel, x: ArrayView2<f64>) -> Result<Self> {
        Self::assemble_with(kernel, x, &AssembleOptions::default())
    }

    pub fn assemble_with(kernel: &Kernel, x: ArrayView2<f64>, opts: &AssembleOptions) -> Result<Self> {
        kernel.validate()?;
        let (n, d) = x.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidDataset(format!("empty input matrix {n}×{d}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite input".into()));
        }
        let nd = n * d;
        let dense_bytes = nd.saturating_mul(nd).saturating_mul(std::mem::size_of::<f64>());
        let dense = match opts.storage {
            GramStorage::Dense => {
                if dense_bytes > opts.max_dense_bytes {
                    return Err(Error::MemoryBudget {
                        required_bytes: dense_bytes,
                        cap_bytes: opts.max_dense_bytes,
                    });
                }
                true
            }
            GramStorage::Structured => false,
            GramStorage::Auto => d <= 3 && dense_bytes <= opts.max_dense_bytes,
        };

        let x = x.as_standard_layout().into_owned();
        let inv_n = 1.0 / n as f64;
        let profile = kernel.profile();

        // pairwise profile terms, row-major n × n
        let terms: Vec<_> = (0..n * n)
            .into_par_iter()
            .map(|p| {
                let (i, j) = (p / n, p % n);
                let xi = x.row(i);
                let xj = x.row(j);
                kernel.pair_terms(kernel.pair_arg(xi.as_slice().unwrap(), xj.as_slice().unwrap()))
            })
            .collect();

        let k = Array2::from_shape_fn((n, n), |(i, j)| terms[i * n + j].value * inv_n);
        let z = Array2::from_shape_fn((n, nd), |(i, col)| {
            let (a, j) = (col / n, col % n);
            let t = &terms[j * n + i];
            // (∂ₐk)_{x_j}(x_i)
            let v = match profile {
                Profile::Radial => t.first * (x[[j, a]] - x[[i, a]]),
                Profile::Dot => t.first * x[[i, a]],
            };
            v * inv_n
        });

        let l = if dense {
            let mut l = Array2::<f64>::zeros((nd, nd));
            l.axis_iter_mut(Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(|(row, mut out)| {
                    let (a, i) = (row / n, row % n);
                    for b in 0..d {
                        for j in 0..n {
                            let t = &terms[i * n + j];
                            let diag = if a == b { t.a } else { 0.0 };
                            let v = match profile {
                                Profile::Radial => {
                                    diag + t.b * ((x[[i, a]] - x[[j, a]]) * (x[[i, b]] - x[[j, b]]))
                                }
                                Profile::Dot => diag + t.b * (x[[j, a]] * x[[i, b]]),
                            };
                            out[b * n + j] = v * inv_n;
                        }
                    }
                });
            LOperator::Dense(l)
        } else {
            LOperator::Structured {
                a: Array2::from_shape_fn((n, n), |(i, j)| terms[i * n + j].a * inv_n),
                b: Array2::from_shape_fn((n, n), |(i, j)| terms[i * n + j].b * inv_n),
            }
        };

        let mut sys = DerivativeSystem {
            kernel: *kernel,
            x,
            k,
            z,
            l,
            norm_k: NormEstimate {
                value: 0.0,
                converged: true,
                iterations: 0,
            },
            norm_l: NormEstimate {
                value: 0.0,
                converged: true,
                iterations: 0,
            },
            block_norms: OnceLock::new(),
        };
        sys.norm_k = symmetric_norm(n, |v| sys.k.dot(&v), opts.norm_tol, opts.norm_max_iter);
        sys.norm_l = symmetric_norm(nd, |v| sys.apply_l_unchecked(v), opts.norm_tol, opts.norm_max_iter);
        Ok(sys)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.l, LOperator::Dense(_))
    }

    pub fn k(&self) -> ArrayView2<'_, f64> {
        self.k.view()
    }

    /// The full `n × nd` matrix `Z = (Z₁, …, Z_d)`.
    pub fn z(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }

    pub fn z_block(&self, a: usize) -> ArrayView2<'_, f64> {
        let n = self.n();
        self.z.slice(s![.., a * n..(a + 1) * n])
    }

    /// `L_{a,b}` as an owned `n × n` matrix.
    pub fn l_block(&self, a: usize, b: usize) -> Array2<f64> {
        let n = self.n();
        match &self.l {
            LOperator::Dense(l) => l.slice(s![a * n..(a + 1) * n, b * n..(b + 1) * n]).to_owned(),
            LOperator::Structured { a: am, b: bm } => {
                let x = &self.x;
                let radial = self.kernel.profile() == Profile::Radial;
                Array2::from_shape_fn((n, n), |(i, j)| {
                    let diag = if a == b { am[[i, j]] } else { 0.0 };
                    if radial {
                        diag + bm[[i, j]] * ((x[[i, a]] - x[[j, a]]) * (x[[i, b]] - x[[j, b]]))
                    } else {
                        diag + bm[[i, j]] * (x[[j, a]] * x[[i, b]])
                    }
                })
            }
        }
    }

    /// Materialize `L` (`nd × nd`). Intended for diagnostics and tests.
    pub fn dense_l(&self) -> Array2<f64> {
        match &self.l {
            LOperator::Dense(l) => l.clone(),
            LOperator::Structured { .. } => {
                let (n, d) = (self.n(), self.d());
                let mut out = Array2::zeros((n * d, n * d));
                for a in 0..d {
                    for b in 0..d {
                        out.slice_mut(s![a * n..(a + 1) * n, b * n..(b + 1) * n])
                            .assign(&self.l_block(a, b));
                    }
                }
                out
            }
        }
    }

    fn check_len(expected: usize, got: usize) -> Result<()> {
        if expected != got {
            return Err(Error::DimensionMismatch { expected, got });
        }
        Ok(())
    }

    pub fn apply_k(&self, alpha: ArrayView1<f64>) -> Result<Array1<f64>> {
        Self::check_len(self.n(), alpha.len())?;
        Ok(self.k.dot(&alpha))
    }

    /// `Z β = Σₐ Zₐ βₐ`
    pub fn apply_z(&self, beta: ArrayView1<f64>) -> Result<Array1<f64>> {
        Self::check_len(self.n() * self.d(), beta.len())?;
        Ok(self.z.dot(&beta))
    }

    /// `Zᵀ α = (Zₐᵀ α)ₐ`
    pub fn apply_zt(&self, alpha: ArrayView1<f64>) -> Result<Array1<f64>> {
        Self::check_len(self.n(), alpha.len())?;
        Ok(self.z.t().dot(&alpha))
    }

    /// `L β = (Lₐ β)ₐ`
    pub fn apply_l(&self, beta: ArrayView1<f64>) -> Result<Array1<f64>> {
        Self::check_len(self.n() * self.d(), beta.len())?;
        Ok(self.apply_l_unchecked(beta))
    }

    pub(crate) fn apply_l_unchecked(&self, v: ArrayView1<f64>) -> Array1<f64> {
        match &self.l {
            LOperator::Dense(l) => l.dot(&v),
            LOperator::Structured { a, b } => {
                let (n, d) = (self.n(), self.d());
                let v = v.as_standard_layout();
                let vm = v.view().into_shape_with_order((d, n)).expect("block layout");
                // row a of vm·A is (A vₐ)ᵀ since A is symmetric
                let mut out = vm.dot(a);
                // P[i, j] = Σ_b x_iᵇ v_b[j]
                let p = self.x.dot(&vm);
                let xt = self.x.t();
                match self.kernel.profile() {
                    Profile::Radial => {
                        // W = B ∘ (P − 1 cᵀ) with c = diag(P)
                        let c = p.diag().to_owned();
                        let mut w = p;
                        Zip::indexed(&mut w).and(b).for_each(|(_, j), wij, &bij| *wij = bij * (*wij - c[j]));
                        let w1 = w.sum_axis(Axis(1));
                        let q = xt.dot(&w.t());
                        Zip::indexed(&mut out).for_each(|(ai, i), o| {
                            *o += xt[[ai, i]] * w1[i] - q[[ai, i]];
                        });
                    }
                    Profile::Dot => {
                        let mut w = p;
                        Zip::from(&mut w).and(b).for_each(|w, &bij| *w *= bij);
                        out += &xt.dot(&w.t());
                    }
                }
                out.into_shape_with_order(n * d).expect("contiguous")
            }
        }
    }

    /// Spectral norms `‖L_{a,a}‖`, one per variable, computed once.
    pub fn diagonal_block_norms(&self) -> &[f64] {
        self.block_norms.get_or_init(|| {
            (0..self.d())
                .map(|a| {
                    let blk = self.l_block(a, a);
                    symmetric_norm(self.n(), |v| blk.dot(&v), 1e-6, 1000).step_bound()
                })
                .collect()
        })
    }
}

/// Largest singular value of an arbitrary matrix by power iteration on `MᵀM`.
///
/// Converged when the eigen-residual `‖MᵀMv − λv‖` is at most `tol · λ`.
pub fn spectral_norm(m: ArrayView2<f64>, tol: f64, max_iter: usize) -> NormEstimate {
    assert!(tol > 0.0, "tolerance must be positive");
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return NormEstimate {
            value: 0.0,
            converged: true,
            iterations: 0,
        };
    }
    let est = power_iteration(cols, |v| m.t().dot(&m.dot(&v)), tol, max_iter);
    NormEstimate {
        value: est.value.sqrt(),
        ..est
    }
}

/// Spectral norm of a symmetric operator given only its action.
pub fn symmetric_norm(
    dim: usize,
    apply: impl Fn(ArrayView1<f64>) -> Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> NormEstimate {
    assert!(tol > 0.0, "tolerance must be positive");
    power_iteration(dim, apply, tol, max_iter)
}

/// Dominant eigenvalue magnitude of a symmetric operator. The Rayleigh quotient
/// error is quadratic in the residual, so a residual test at `tol` is much
/// tighter than `tol` on the returned value.
fn power_iteration(
    dim: usize,
    apply: impl Fn(ArrayView1<f64>) -> Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> NormEstimate {
    if dim == 0 {
        return NormEstimate {
            value: 0.0,
            converged: true,
            iterations: 0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x005e_ed0f_90e5);
    let mut v = Array1::from_shape_fn(dim, |_| rng.gen_range(0.5f64..1.5));
    let nv = v.dot(&v).sqrt();
    v /= nv;
    let mut lambda = 0.0;
    for it in 1..=max_iter.max(1) {
        let w = apply(v.view());
        lambda = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return NormEstimate {
                value: 0.0,
                converged: true,
                iterations: it,
            };
        }
        let mut r = w.clone();
        r.scaled_add(-lambda, &v);
        if r.dot(&r).sqrt() <= tol * lambda.abs() {
            return NormEstimate {
                value: lambda.abs(),
                converged: true,
                iterations: it,
            };
        }
        v = w / wn;
    }
    NormEstimate {
        value: lambda.abs(),
        converged: false,
        iterations: max_iter,
    }
}
