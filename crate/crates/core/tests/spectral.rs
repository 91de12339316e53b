use nalgebra::{DMatrix, SymmetricEigen};
use qksdp::sparse::SymCsr;
use qksdp::spectral::{
    eigh, eigvalsh, smallest_eigenpair, smallest_eigenpairs_k, EigenOptions, LowRankTerm, StructuredOperator,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sparse(n: usize, density: f64, rng: &mut ChaCha8Rng) -> SymCsr {
    let mut trip = Vec::new();
    for i in 0..n {
        for j in i..n {
            if rng.random::<f64>() < density {
                trip.push((i, j, rng.random_range(-1.0..1.0)));
            }
        }
    }
    SymCsr::from_triplets(n, &trip).unwrap()
}

fn random_operator<'a>(c: &'a SymCsr, rng: &mut ChaCha8Rng) -> StructuredOperator<'a> {
    let n = c.n();
    let diag: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) / (n as f64).sqrt()).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) / (n as f64).sqrt()).collect();
    StructuredOperator::new(n)
        .with_sparse(c, -1.3, 0)
        .with_diagonal(diag)
        .with_term(LowRankTerm::symmetric(2.5, u.clone()))
        .with_term(LowRankTerm { w: -1.0, u, z })
}

fn oracle(op: &StructuredOperator<'_>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let n = op.dim();
    DMatrix::from_row_slice(n, n, &op.to_dense()).symmetric_eigen()
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

#[test]
fn matvec_matches_dense_assembly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let n = 5 + trial;
        let c = random_sparse(n, 0.4, &mut rng);
        let op = random_operator(&c, &mut rng);
        let dense = DMatrix::from_row_slice(n, n, &op.to_dense());
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = &dense * nalgebra::DVector::from_column_slice(&x);
        let got = op.matvec(&x).unwrap();
        for i in 0..n {
            assert!((got[i] - want[i]).abs() < 1e-14 * (1.0 + want[i].abs()) * 10.0);
        }
    }
}

#[test]
fn dense_solver_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [1usize, 2, 3, 10, 60, 200] {
        let c = random_sparse(n, 0.3, &mut rng);
        let op = random_operator(&c, &mut rng);
        let want = sorted(oracle(&op).eigenvalues.as_slice());
        let (w, v) = eigh(n, op.to_dense()).unwrap();
        let w2 = eigvalsh(n, op.to_dense()).unwrap();
        for i in 0..n {
            assert!((w[i] - want[i]).abs() < 1e-10, "n={n} i={i}");
            assert!((w2[i] - want[i]).abs() < 1e-10, "n={n} i={i}");
            let u = &v[i * n..(i + 1) * n];
            let mut au = op.matvec(u).unwrap();
            qksdp::linalg::axpy(-w[i], u, &mut au);
            assert!(qksdp::linalg::norm(&au) < 1e-10);
        }
    }
}

#[test]
fn lanczos_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let opts = EigenOptions {
        dense_threshold: 0,
        ..EigenOptions::default()
    };
    for (trial, n) in [50usize, 120, 200, 200].into_iter().enumerate() {
        let c = random_sparse(n, 0.1, &mut rng);
        let op = random_operator(&c, &mut rng);
        let want = sorted(oracle(&op).eigenvalues.as_slice());
        let (lam, u, ok) = smallest_eigenpair(&op, &EigenOptions { seed: trial as u64, ..opts.clone() }).unwrap();
        assert!(ok);
        assert!((lam - want[0]).abs() < 1e-8, "n={n}: {lam} vs {}", want[0]);
        let mut au = op.matvec(&u).unwrap();
        qksdp::linalg::axpy(-lam, &u, &mut au);
        assert!(qksdp::linalg::norm(&au) <= 1e-9 * lam.abs().max(1.0));

        let pairs = smallest_eigenpairs_k(&op, 3, &opts).unwrap();
        for i in 0..3 {
            assert!((pairs.values[i] - want[i]).abs() < 1e-8, "n={n} i={i}");
            for j in 0..3 {
                let g = qksdp::linalg::dot(&pairs.vectors[i], &pairs.vectors[j]);
                assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
        assert!((pairs.values[0] - lam).abs() <= 2e-9 * lam.abs().max(1.0));
    }
}

#[test]
fn lanczos_resolves_repeated_bottom_eigenvalue() {
    // diag with a double eigenvalue at -3 plus a rank-one perturbation that
    // does not touch the first two coordinates
    let n = 300;
    let mut diag: Vec<f64> = (0..n).map(|i| i as f64 / 10.0).collect();
    diag[0] = -3.0;
    diag[1] = -3.0;
    let mut u = vec![0.0; n];
    for (i, x) in u.iter_mut().enumerate().skip(2) {
        *x = ((i % 7) as f64 - 3.0) / 20.0;
    }
    let op = StructuredOperator::from_diagonal(diag).with_term(LowRankTerm::symmetric(1.0, u));
    let want = sorted(oracle(&op).eigenvalues.as_slice());
    let opts = EigenOptions {
        dense_threshold: 0,
        ..EigenOptions::default()
    };
    let pairs = smallest_eigenpairs_k(&op, 2, &opts).unwrap();
    for i in 0..2 {
        assert!((pairs.values[i] - want[i]).abs() < 1e-8);
        let mut au = op.matvec(&pairs.vectors[i]).unwrap();
        qksdp::linalg::axpy(-pairs.values[i], &pairs.vectors[i], &mut au);
        assert!(qksdp::linalg::norm(&au) < 1e-8);
    }
    assert!(qksdp::linalg::dot(&pairs.vectors[0], &pairs.vectors[1]).abs() < 1e-9);
}

#[test]
fn psd_operator_has_nonnegative_bottom() {
    let n = 500;
    let u: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
    let op = StructuredOperator::from_diagonal(vec![0.0; n]).with_term(LowRankTerm::symmetric(1.0, u));
    let (lam, _, ok) = smallest_eigenpair(&op, &EigenOptions::default()).unwrap();
    assert!(ok);
    assert!(lam >= -1e-9);
}
