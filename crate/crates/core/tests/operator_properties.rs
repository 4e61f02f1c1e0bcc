use approx::assert_relative_eq;
use denovas::operators::{spectral_norm, symmetric_norm};
use denovas::{AssembleOptions, DerivativeSystem, GramStorage, Kernel};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn random_x(rng: &mut ChaCha20Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.5..1.5))
}

fn random_kernel(rng: &mut ChaCha20Rng, family: usize) -> Kernel {
    match family {
        0 => Kernel::gaussian(rng.gen_range(0.3..2.0)).unwrap(),
        1 => Kernel::polynomial(rng.gen_range(1..=4), rng.gen_range(0.0..2.0)).unwrap(),
        _ => Kernel::Linear,
    }
}

fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn min_eig(m: &Array2<f64>) -> f64 {
    SymmetricEigen::new(to_na(m)).eigenvalues.min()
}

#[test]
fn gram_matrices_are_psd_and_block_symmetric() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for trial in 0..30 {
        let family = trial % 3;
        let n = rng.gen_range(1..=30);
        let d = rng.gen_range(1..=4);
        let kernel = random_kernel(&mut rng, family);
        let x = random_x(&mut rng, n, d);
        let sys = DerivativeSystem::assemble(&kernel, x.view()).unwrap();
        let k = sys.k().to_owned();
        let l = sys.dense_l();
        assert_eq!(k, k.t(), "K symmetric");
        let tk = k.diag().sum().abs().max(f64::MIN_POSITIVE);
        let tl = l.diag().sum().abs().max(f64::MIN_POSITIVE);
        assert!(min_eig(&k) >= -1e-8 * tk, "{kernel} n={n} d={d}: K eig {}", min_eig(&k));
        assert!(min_eig(&l) >= -1e-8 * tl, "{kernel} n={n} d={d}: L eig {}", min_eig(&l));
        for a in 0..d {
            for b in 0..d {
                assert_eq!(sys.l_block(a, b).t(), sys.l_block(b, a), "{kernel}: L_{a}{b}");
            }
        }
    }
}

#[test]
fn structured_storage_is_psd_and_block_symmetric() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let opts = AssembleOptions {
        storage: GramStorage::Structured,
        ..Default::default()
    };
    for family in 0..3 {
        let kernel = random_kernel(&mut rng, family);
        let x = random_x(&mut rng, 25, 4);
        let sys = DerivativeSystem::assemble_with(&kernel, x.view(), &opts).unwrap();
        assert!(!sys.is_dense());
        let l = sys.dense_l();
        assert!(min_eig(&l) >= -1e-8 * l.diag().sum());
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(sys.l_block(a, b).t(), sys.l_block(b, a));
            }
        }
    }
}

#[test]
fn z_is_adjoint_under_scaled_inner_product() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for family in 0..3 {
        let (n, d) = (12, 3);
        let kernel = random_kernel(&mut rng, family);
        let x = random_x(&mut rng, n, d);
        let sys = DerivativeSystem::assemble(&kernel, x.view()).unwrap();
        let alpha = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));
        let beta = Array1::from_shape_fn(n * d, |_| rng.gen_range(-1.0..1.0));
        let lhs = sys.apply_z(beta.view()).unwrap().dot(&alpha) / n as f64;
        let rhs = beta.dot(&sys.apply_zt(alpha.view()).unwrap()) / n as f64;
        assert_relative_eq!(lhs, rhs, epsilon = 1e-13, max_relative = 1e-12);
    }
}

#[test]
fn products_match_materialized_matrices() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let (n, d) = (5, 2);
    let kernel = Kernel::gaussian(0.8).unwrap();
    let x = random_x(&mut rng, n, d);
    let sys = DerivativeSystem::assemble(&kernel, x.view()).unwrap();
    // entries straight from the kernel, 1/n included
    let inv = 1.0 / n as f64;
    let row = |i: usize| x.row(i).to_vec();
    let z = Array2::from_shape_fn((n, n * d), |(i, c)| inv * kernel.d1(c / n, &row(c % n), &row(i)).unwrap());
    let l = Array2::from_shape_fn((n * d, n * d), |(r, c)| {
        inv * kernel.d2(r / n, c / n, &row(r % n), &row(c % n)).unwrap()
    });
    let beta = Array1::from_shape_fn(n * d, |_| rng.gen_range(-1.0..1.0));
    let alpha = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));
    let close = |u: &Array1<f64>, v: &Array1<f64>| (u - v).iter().all(|e| e.abs() <= 1e-12);
    assert!(close(&sys.apply_z(beta.view()).unwrap(), &z.dot(&beta)));
    assert!(close(&sys.apply_zt(alpha.view()).unwrap(), &z.t().dot(&alpha)));
    assert!(close(&sys.apply_l(beta.view()).unwrap(), &l.dot(&beta)));
    assert!(sys.apply_z(Array1::zeros(n * d).view()).unwrap().iter().all(|&v| v == 0.0));

    // d = 1 reduces to the single block
    let x1 = random_x(&mut rng, n, 1);
    let s1 = DerivativeSystem::assemble(&kernel, x1.view()).unwrap();
    let b1 = beta.slice(ndarray::s![..n]).to_owned();
    assert!(close(&s1.apply_z(b1.view()).unwrap(), &s1.z_block(0).dot(&b1)));
}

/// Explicit features of `(c + ⟨x, s⟩)²`: `c`, `√(2c) xᵢ`, `xᵢ xⱼ`.
fn poly2_features(x: &[f64], c: f64) -> Vec<f64> {
    let mut f = vec![c];
    f.extend(x.iter().map(|v| (2.0 * c).sqrt() * v));
    for &xi in x {
        for &xj in x {
            f.push(xi * xj);
        }
    }
    f
}

fn poly2_feature_derivative(x: &[f64], c: f64, a: usize) -> Vec<f64> {
    let d = x.len();
    let mut f = vec![0.0];
    f.extend((0..d).map(|i| if i == a { (2.0 * c).sqrt() } else { 0.0 }));
    for i in 0..d {
        for j in 0..d {
            let di = if i == a { x[j] } else { 0.0 };
            let dj = if j == a { x[i] } else { 0.0 };
            f.push(di + dj);
        }
    }
    f
}

#[test]
fn polynomial_operators_match_feature_map() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let (n, d, c) = (9, 3, 0.7);
    let x = random_x(&mut rng, n, d);
    let sys = DerivativeSystem::assemble(&Kernel::polynomial(2, c).unwrap(), x.view()).unwrap();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let row = |i: usize| x.row(i).to_vec();
    for i in 0..n {
        for j in 0..n {
            let (fi, fj) = (poly2_features(&row(i), c), poly2_features(&row(j), c));
            assert!((sys.k()[[i, j]] - dot(&fi, &fj)).abs() <= 1e-10);
            for a in 0..d {
                let da = poly2_feature_derivative(&row(j), c, a);
                assert!((sys.z_block(a)[[i, j]] - dot(&fi, &da)).abs() <= 1e-10);
                for b in 0..d {
                    let (ga, gb) = (poly2_feature_derivative(&row(i), c, a), poly2_feature_derivative(&row(j), c, b));
                    assert!((sys.l_block(a, b)[[i, j]] - dot(&ga, &gb)).abs() <= 1e-10);
                }
            }
        }
    }
}

#[test]
fn power_iteration_matches_eigendecomposition() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let b = Array2::from_shape_fn((20, 20), |_| rng.gen_range(-1.0..1.0));
    let m = b.t().dot(&b);
    let exact = SymmetricEigen::new(to_na(&m)).eigenvalues.max();

    let est = spectral_norm(m.view(), 1e-6, 1000);
    assert!(est.converged);
    assert!((est.value - exact).abs() <= 1e-8 * exact, "{} vs {exact}", est.value);

    let sym = symmetric_norm(20, |v| m.dot(&v), 1e-6, 1000);
    assert!((sym.value - exact).abs() <= 1e-8 * exact, "{} vs {exact}", sym.value);
}

#[test]
fn norm_estimates_bound_operators() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let x = random_x(&mut rng, 20, 3);
    let sys = DerivativeSystem::assemble(&Kernel::gaussian(1.0).unwrap(), x.view()).unwrap();
    let kmax = SymmetricEigen::new(to_na(&sys.k().to_owned())).eigenvalues.max();
    let lmax = SymmetricEigen::new(to_na(&sys.dense_l())).eigenvalues.max();
    assert!(sys.norm_k.step_bound() >= kmax * (1.0 - 1e-6));
    assert!(sys.norm_l.step_bound() >= lmax * (1.0 - 1e-6));
}
