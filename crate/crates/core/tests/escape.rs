use nalgebra::DMatrix;
use qksdp::escape::{dual_value, escape_curve, escape_step, solve_escape_sdp, EscapeKind, EscapeProblem, EscapeSettings};
use qksdp::geometry::{objective, NonRegularPoint, Variety};
use qksdp::instance::{generate, Family, GeneratorSpec, QkpInstance};
use qksdp::oracle::{dense_phi, escape_dual_grid};
use qksdp::sparse::SymCsr;
use qksdp::spectral::EigenOptions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random scaled instance and a random non-regular point of it: either
/// the zero point or a subset whose weight is made to equal the capacity.
fn random_problem(n: usize, rng: &mut ChaCha8Rng) -> (QkpInstance, NonRegularPoint) {
    let mut trip = Vec::new();
    for i in 0..n {
        for j in i..n {
            if rng.random::<f64>() < 0.5 {
                trip.push((i, j, rng.random_range(-5.0..5.0)));
            }
        }
    }
    let c = SymCsr::from_triplets(n, &trip).unwrap();
    // every weight fits and the items do not all fit together
    loop {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let sum: f64 = a.iter().sum();
        let max = a.iter().cloned().fold(0.0, f64::max);
        let v: Vec<bool> = if rng.random::<f64>() < 0.3 {
            vec![false; n]
        } else {
            (0..n).map(|_| rng.random::<f64>() < 0.5).collect()
        };
        let w: f64 = v.iter().zip(&a).filter(|(b, _)| **b).map(|(_, x)| x).sum();
        let tau = if w == 0.0 { rng.random_range(max..sum) } else { w };
        if tau > max && tau < sum {
            return (QkpInstance::new(c, a, tau).unwrap(), NonRegularPoint::new(v));
        }
    }
}

fn dense_lambda_min(prob: &EscapeProblem<'_>, alpha: f64) -> f64 {
    let n = prob.n();
    let m = DMatrix::from_row_slice(n, n, &prob.operator(alpha).to_dense());
    m.symmetric_eigenvalues().min()
}

#[test]
fn zero_profit_zero_point_has_zero_phi() {
    let c = SymCsr::zeros(5);
    let a = [0.2, 0.3, 0.4, 0.5, 0.6];
    let prob = EscapeProblem::new(&c, &a, 1.0, NonRegularPoint::new(vec![false; 5]), 3).unwrap();
    let (phi, _) = dual_value(&prob, 0.0, &EigenOptions::default()).unwrap();
    assert_eq!(phi, 0.0);
    // σ = −1 and d = −e, so A = aaᵀ − τ·diag(a) at the zero point
    let dense = prob.a_operator().to_dense();
    for i in 0..5 {
        for j in 0..5 {
            let want = a[i] * a[j] - if i == j { a[i] } else { 0.0 };
            assert!((dense[i * 5 + j] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn phi_matches_dense_eigensolve() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..40 {
        let n = rng.random_range(4..=50);
        let (inst, pt) = random_problem(n, &mut rng);
        let prob = EscapeProblem::new(inst.c(), inst.a(), inst.tau(), pt, 3).unwrap();
        let alpha = rng.random_range(-20.0..20.0);
        let (phi, u) = dual_value(&prob, alpha, &EigenOptions::default()).unwrap();
        let want = dense_lambda_min(&prob, alpha);
        assert!((phi - want).abs() <= 1e-8 * (1.0 + want.abs()), "phi {phi} want {want}");
        let au = prob.operator(alpha).matvec(&u).unwrap();
        let res: f64 = au.iter().zip(&u).map(|(x, y)| (x - phi * y).powi(2)).sum::<f64>().sqrt();
        assert!(res <= 1e-6 * (1.0 + phi.abs()));
    }
}

#[test]
fn phi_is_concave_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0;
    for _ in 0..1000 {
        let n = rng.random_range(3..=10);
        let (inst, pt) = random_problem(n, &mut rng);
        let prob = EscapeProblem::new(inst.c(), inst.a(), inst.tau(), pt, 3).unwrap();
        let mut al = [0.0; 3];
        al.iter_mut().for_each(|x| *x = rng.random_range(-50.0..50.0));
        al.sort_by(f64::total_cmp);
        let phi: Vec<f64> = al.iter().map(|&x| dense_phi(&prob, x).unwrap()).collect();
        let w = (al[2] - al[1]) / (al[2] - al[0]);
        let chord = w * phi[0] + (1.0 - w) * phi[2];
        if phi[1] < chord - 1e-9 * (1.0 + chord.abs()) {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}

#[test]
fn escape_dual_matches_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..100 {
        let n = rng.random_range(3..=12);
        let (inst, pt) = random_problem(n, &mut rng);
        let prob = EscapeProblem::new(inst.c(), inst.a(), inst.tau(), pt, 3).unwrap();
        let out = solve_escape_sdp(&prob, &EscapeSettings::default()).unwrap();
        let grid = escape_dual_grid(&prob).unwrap();
        let diff = (out.dual_value - grid.phi).abs() / grid.phi.abs().max(1.0);
        assert!(diff <= 1e-6, "trial {trial}: solver {} grid {}", out.dual_value, grid.phi);
        assert!(out.dual_upper >= out.dual_value);
    }
}

#[test]
fn outcomes_satisfy_their_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let settings = EscapeSettings::default();
    let (mut certs, mut escapes) = (0, 0);
    for _ in 0..200 {
        let n = rng.random_range(3..=15);
        let (inst, pt) = random_problem(n, &mut rng);
        let r = rng.random_range(3..=5);
        let prob = EscapeProblem::new(inst.c(), inst.a(), inst.tau(), pt, r).unwrap();
        let out = solve_escape_sdp(&prob, &settings).unwrap();
        let tol = settings.cert_tol_for(inst.c());
        match out.kind {
            EscapeKind::StationaryCertificate => {
                certs += 1;
                assert!(out.dual_value >= -tol);
            }
            EscapeKind::EscapingDirection => {
                escapes += 1;
                let h = out.direction.unwrap();
                assert_eq!(h.shape(), (n, r - 1));
                assert!((h.frob_norm() - 1.0).abs() <= 1e-9);
                assert!(prob.a_inner(&h).abs() <= 1e-9);
                assert!(prob.m_inner(&h) <= -tol);
                assert!((prob.m_inner(&h) - out.m_value).abs() <= 1e-9 * (1.0 + out.m_value.abs()));
            }
        }
    }
    assert!(certs > 0 && escapes > 0, "certs {certs} escapes {escapes}");
}

#[test]
fn construction_escapes_from_the_odd_point() {
    let n = 40;
    let inst = generate(&GeneratorSpec::new(Family::NonregularConstruction, n, 0.5, 0.5, 7))
        .unwrap()
        .scale();
    let var = Variety::knapsack(&inst);
    let v1 = NonRegularPoint::new((0..n).map(|i| i % 2 == 0).collect());
    let settings = EscapeSettings::default();
    let prob = EscapeProblem::new(inst.c(), inst.a(), inst.tau(), v1.clone(), 3).unwrap();
    let out = solve_escape_sdp(&prob, &settings).unwrap();
    assert_eq!(out.kind, EscapeKind::EscapingDirection);
    let h = out.direction.unwrap();
    assert!(prob.a_inner(&h).abs() <= 1e-9);
    assert!(out.m_value < 0.0);

    let f0 = objective(inst.c(), &v1.to_mat(3));
    assert_eq!(f0, 0.0);
    let step = escape_step(&var, inst.c(), &v1, &h, out.m_value, &settings).unwrap();
    assert!(step.f < f0 - step.decrease);
    assert!(var.is_feasible(&step.point));

    let v2 = NonRegularPoint::new((0..n).map(|i| i % 2 == 1).collect());
    let prob2 = EscapeProblem::new(inst.c(), inst.a(), inst.tau(), v2, 3).unwrap();
    assert_eq!(solve_escape_sdp(&prob2, &settings).unwrap().kind, EscapeKind::StationaryCertificate);
}

#[test]
fn escape_decrease_follows_the_quadratic_model() {
    let n = 20;
    let inst = generate(&GeneratorSpec::new(Family::NonregularConstruction, n, 0.5, 0.5, 2))
        .unwrap()
        .scale();
    let var = Variety::knapsack(&inst);
    let v1 = NonRegularPoint::new((0..n).map(|i| i % 2 == 0).collect());
    let prob = EscapeProblem::new(inst.c(), inst.a(), inst.tau(), v1.clone(), 3).unwrap();
    let out = solve_escape_sdp(&prob, &EscapeSettings::default()).unwrap();
    let h = out.direction.unwrap();
    let f0 = objective(inst.c(), &v1.to_mat(3));
    let ratios: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&t| {
            let p = var.restore(escape_curve(&v1, &h, t)).unwrap();
            (f0 - objective(inst.c(), p.r())) / (t * t)
        })
        .collect();
    let target = out.m_value.abs();
    for (k, q) in ratios.iter().enumerate() {
        let tol = [1e-1, 1e-2, 1e-3][k];
        assert!((q - target).abs() <= tol * target, "ratios {ratios:?} target {target}");
    }
}

#[test]
fn zero_step_is_rejected() {
    let n = 20;
    let inst = generate(&GeneratorSpec::new(Family::NonregularConstruction, n, 0.5, 0.5, 2))
        .unwrap()
        .scale();
    let var = Variety::knapsack(&inst);
    let v1 = NonRegularPoint::new((0..n).map(|i| i % 2 == 0).collect());
    let prob = EscapeProblem::new(inst.c(), inst.a(), inst.tau(), v1.clone(), 3).unwrap();
    let out = solve_escape_sdp(&prob, &EscapeSettings::default()).unwrap();
    let settings = EscapeSettings {
        t0: 0.0,
        ..Default::default()
    };
    assert!(escape_step(&var, inst.c(), &v1, &out.direction.unwrap(), out.m_value, &settings).is_err());
}
