//! Independent dense-matrix oracles shared by the integration tests.
#![allow(dead_code)]

use denovas::{FitState, Kernel};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// K, Z and L written entry by entry from the kernel, with the 1/n factor.
pub struct Dense {
    pub n: usize,
    pub d: usize,
    pub k: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

impl Dense {
    pub fn new(kernel: &Kernel, x: &Array2<f64>) -> Self {
        let (n, d) = x.dim();
        let inv = 1.0 / n as f64;
        let p = |i: usize| x.row(i).to_vec();
        // column (a, j) of Z holds the section (∂ₐk)_{x_j} evaluated at x_i
        Dense {
            n,
            d,
            k: DMatrix::from_fn(n, n, |i, j| inv * kernel.eval(&p(i), &p(j)).unwrap()),
            z: DMatrix::from_fn(n, n * d, |i, c| inv * kernel.d1(c / n, &p(c % n), &p(i)).unwrap()),
            l: DMatrix::from_fn(n * d, n * d, |r, c| inv * kernel.d2(r / n, c / n, &p(r % n), &p(c % n)).unwrap()),
        }
    }

    pub fn block_norm(&self, v: &DVector<f64>, a: usize) -> f64 {
        (v.rows(a * self.n, self.n).norm_squared() / self.n as f64).sqrt()
    }

    pub fn project(&self, v: &mut DVector<f64>, radius: f64) {
        for a in 0..self.d {
            let norm = self.block_norm(v, a);
            if norm > radius {
                v.rows_mut(a * self.n, self.n).scale_mut(radius / norm);
            }
        }
    }

    pub fn lmax(m: &DMatrix<f64>) -> f64 {
        SymmetricEigen::new(m.clone()).eigenvalues.max()
    }
}

pub struct Literal<'a> {
    pub o: &'a Dense,
    pub tau: f64,
    pub nu: f64,
    pub sigma: f64,
    pub eta: f64,
}

impl Literal<'_> {
    /// Projection iteration for the prox of the forward point `(g_α, g_β)`,
    /// stopped by the duality-gap test against `ε²`.
    pub fn inner(&self, ga: &DVector<f64>, gb: &DVector<f64>, v0: &DVector<f64>, eps_sq: f64, max: usize) -> (DVector<f64>, usize) {
        let o = self.o;
        let r = self.tau / self.sigma;
        let mut v = v0.clone();
        o.project(&mut v, r);
        let target = o.z.transpose() * ga + &o.l * gb;
        for q in 1..=max {
            v = &v - (&o.l * &v - &target) / self.eta;
            o.project(&mut v, r);
            let beta = gb - &v;
            let deriv = o.z.transpose() * ga + &o.l * &beta;
            let mut gap = 0.0;
            for a in 0..o.d {
                let da = deriv.rows(a * o.n, o.n);
                gap += 2.0 * r * o.block_norm(&deriv, a) - 2.0 * v.rows(a * o.n, o.n).dot(&da) / o.n as f64;
            }
            if gap <= eps_sq {
                return (v, q);
            }
        }
        panic!("oracle inner loop did not meet its tolerance");
    }

    /// One outer iteration. Returns `(αᵗ, βᵗ, v̄ᵗ, sₜ, inner iterations)`.
    #[allow(clippy::too_many_arguments)]
    pub fn outer(
        &self,
        y: &DVector<f64>,
        prev: (&DVector<f64>, &DVector<f64>, &DVector<f64>, f64),
        prev2: (&DVector<f64>, &DVector<f64>),
        eps_sq: f64,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>, f64, usize) {
        let o = self.o;
        let (a1, b1, v1, s1) = prev;
        let (a2, b2) = prev2;
        let s = (1.0 + (1.0 + 4.0 * s1 * s1).sqrt()) / 2.0;
        let at = a1 + (a1 - a2) * ((s1 - 1.0) / s);
        let bt = b1 + (b1 - b2) * ((s1 - 1.0) / s);
        let shrink = 1.0 - self.tau * self.nu / self.sigma;
        let alpha = &at * shrink - (&o.k * &at + &o.z * &bt - y) / self.sigma;
        let gb = &bt * shrink;
        let (vbar, q) = self.inner(&alpha, &gb, v1, eps_sq, 1_000_000);
        let beta = &gb - &vbar;
        (alpha, beta, vbar, s, q)
    }
}

pub fn small_instance(seed: u64, n: usize, d: usize) -> (Array2<f64>, Array1<f64>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let x: Array2<f64> = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
    let y = Array1::from_shape_fn(n, |i| x[[i, 0]].sin() + 0.3 * rng.gen_range(-1.0..1.0));
    (x, y)
}

pub fn dv(a: &Array1<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.iter().cloned())
}

pub fn max_abs_diff(a: &Array1<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

pub fn random_state(rng: &mut ChaCha20Rng, n: usize, d: usize, radius: f64, s: f64) -> FitState {
    let mut st = FitState::zeros(n, d);
    st.alpha = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));
    st.beta = Array1::from_shape_fn(n * d, |_| rng.gen_range(-1.0..1.0));
    st.vbar = Array1::from_shape_fn(n * d, |_| rng.gen_range(-1.0..1.0) * radius);
    st.s = s;
    st
}

pub fn rate_instance() -> (Array2<f64>, Array1<f64>) {
    let mut rng = ChaCha20Rng::seed_from_u64(41);
    let (n, d) = (40, 5);
    let x: Array2<f64> = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
    let y = Array1::from_shape_fn(n, |i| (2.0 * x[[i, 0]]).sin() + x[[i, 1]] * x[[i, 1]] - 0.3 + 0.1 * rng.gen_range(-1.0..1.0));
    (x, y)
}

/// Cyclic coordinate descent for `(1/n)‖y − Xw‖² + τ(2‖w‖₁ + ν‖w‖²)`.
pub fn elastic_net(x: &Array2<f64>, y: &Array1<f64>, tau: f64, nu: f64) -> Array1<f64> {
    let (n, d) = x.dim();
    let nf = n as f64;
    let mut w = Array1::<f64>::zeros(d);
    let mut r = y.clone();
    for _ in 0..100_000 {
        let mut change = 0.0f64;
        for a in 0..d {
            let col = x.column(a);
            let rho = (col.dot(&r) + col.dot(&col) * w[a]) / nf;
            let denom = col.dot(&col) / nf + tau * nu;
            let new = rho.signum() * (rho.abs() - tau).max(0.0) / denom;
            r.scaled_add(w[a] - new, &col);
            change = change.max((new - w[a]).abs());
            w[a] = new;
        }
        if change < 1e-15 {
            break;
        }
    }
    w
}
