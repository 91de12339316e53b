use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use qksdp::geometry::{
    in_delta_neighborhood, is_nonregular, objective, objective_and_gradient, round_point, FactorPoint, NonRegularPoint,
    Variety, VarietyKind,
};
use qksdp::instance::{generate, Family, GeneratorSpec};
use qksdp::linalg::Mat;
use qksdp::solver::initial_point;
use qksdp::sparse::SymCsr;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: usize = 1000;

fn random_variety(kind: VarietyKind, n: usize, rng: &mut ChaCha8Rng) -> Variety {
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let tau = rng.random_range(0.3..0.7) * a.iter().sum::<f64>();
    Variety::new(kind, a, tau)
}

fn random_mat(n: usize, r: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0))
}

fn random_sparse(n: usize, rng: &mut ChaCha8Rng) -> SymCsr {
    let mut trip = Vec::new();
    for i in 0..n {
        for j in i..n {
            if rng.random::<f64>() < 0.5 {
                trip.push((i, j, rng.random_range(-5.0..5.0)));
            }
        }
    }
    SymCsr::from_triplets(n, &trip).unwrap()
}

/// A random feasible point with a random shape and variety.
fn random_case(rng: &mut ChaCha8Rng) -> (Variety, FactorPoint) {
    let n = rng.random_range(3..=12);
    let r = rng.random_range(3..=6);
    let kind = if rng.random::<f64>() < 0.8 { VarietyKind::Knapsack } else { VarietyKind::Oblique };
    let var = random_variety(kind, n, rng);
    let p = initial_point(&var, r, rng.random()).unwrap();
    (var, p)
}

/// Constraint Jacobian, rows `g_1..g_n` then `h`, columns `vec(R)` row-major.
fn jacobian(var: &Variety, p: &FactorPoint) -> DMatrix<f64> {
    let (n, r) = p.r().shape();
    let rows = if var.kind() == VarietyKind::Knapsack { n + 1 } else { n };
    let mut j = DMatrix::zeros(rows, n * r);
    for i in 0..n {
        for k in 0..r {
            j[(i, i * r + k)] = 2.0 * p.r()[(i, k)] - if k == 0 { 1.0 } else { 0.0 };
        }
    }
    if rows > n {
        let a = var.a();
        let atr: Vec<f64> = (0..r).map(|k| (0..n).map(|i| a[i] * p.r()[(i, k)]).sum()).collect();
        for i in 0..n {
            for k in 0..r {
                let w = 2.0 * atr[k] - if k == 0 { var.tau() } else { 0.0 };
                j[(n, i * r + k)] = a[i] * w;
            }
        }
    }
    j
}

fn dense_projection(var: &Variety, p: &FactorPoint, g: &Mat) -> Mat {
    let j = jacobian(var, p);
    let gv = DVector::from_row_slice(g.as_slice());
    let gram = &j * j.transpose();
    let y = gram.lu().solve(&(&j * &gv)).unwrap();
    let h = gv - j.transpose() * y;
    Mat::from_row_major(g.rows(), g.cols(), h.as_slice().to_vec())
}

fn max_abs_diff(x: &Mat, y: &Mat) -> f64 {
    x.as_slice().iter().zip(y.as_slice()).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

#[test]
fn residual_matches_naive_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.random_range(2..10);
        let r = rng.random_range(2..5);
        let var = random_variety(VarietyKind::Knapsack, n, &mut rng);
        let m = random_mat(n, r, &mut rng);
        let (g, h) = var.residual(&var.point(m.clone()));
        for i in 0..n {
            let want: f64 = (0..r).map(|k| m[(i, k)] * m[(i, k)]).sum::<f64>() - m[(i, 0)];
            assert!((g[i] - want).abs() < 1e-13);
        }
        let mut atr_sq = 0.0;
        for k in 0..r {
            let s: f64 = (0..n).map(|i| var.a()[i] * m[(i, k)]).sum();
            atr_sq += s * s;
        }
        let ate1: f64 = (0..n).map(|i| var.a()[i] * m[(i, 0)]).sum();
        assert!((h - (atr_sq - var.tau() * ate1)).abs() < 1e-12);
    }
}

#[test]
fn nonregular_construction_points_are_feasible_and_nonregular() {
    let inst = generate(&GeneratorSpec::new(Family::NonregularConstruction, 20, 0.5, 0.5, 4)).unwrap();
    let var = Variety::knapsack(&inst);
    let v2 = NonRegularPoint::new((0..20).map(|i| i % 2 == 1).collect());
    let p = var.point(v2.to_mat(3));
    let (g, h) = var.residual(&p);
    assert!(g.iter().all(|&x| x == 0.0));
    assert_eq!(h, 0.0);
    assert!(is_nonregular(&v2.v, &inst));
    assert!(is_nonregular(&vec![false; 20], &inst));
    assert!(!is_nonregular(&vec![true; 20], &inst));
}

#[test]
fn projection_matches_dense_jacobian_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (var, p) = random_case(&mut rng);
        let g = random_mat(p.n(), p.rank(), &mut rng);
        let got = var.project(&p, &g).unwrap().h;
        let want = dense_projection(&var, &p, &g);
        assert!(max_abs_diff(&got, &want) < 1e-10, "diff {}", max_abs_diff(&got, &want));
    }
}

#[test]
fn projection_properties_over_random_trials() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    for _ in 0..TRIALS {
        let (var, p) = random_case(&mut rng);
        let g1 = random_mat(p.n(), p.rank(), &mut rng);
        let g2 = random_mat(p.n(), p.rank(), &mut rng);
        let p1 = var.project(&p, &g1).unwrap().h;
        let p2 = var.project(&p, &g2).unwrap().h;
        let pp1 = var.project(&p, &p1).unwrap().h;
        let idempotent = max_abs_diff(&pp1, &p1) <= 1e-12 * (1.0 + g1.frob_norm());
        let adjoint = (g1.inner(&p2) - p1.inner(&g2)).abs() <= 1e-10;
        let (rows, k) = var.tangent_defect(&p, &p1);
        let tangent = rows.iter().all(|x| x.abs() <= 1e-12) && k.abs() <= 1e-11;
        if !(idempotent && adjoint && tangent) {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}

#[test]
fn tangent_vector_is_left_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let (var, p) = random_case(&mut rng);
        let h = var.project(&p, &random_mat(p.n(), p.rank(), &mut rng)).unwrap().h;
        let again = var.project(&p, &h).unwrap().h;
        assert!(max_abs_diff(&again, &h) < 1e-12);
    }
}

#[test]
fn zero_profit_gives_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (var, p) = random_case(&mut rng);
    let g = var.riemannian_gradient(&p, &SymCsr::zeros(p.n())).unwrap();
    assert_eq!(g.norm, 0.0);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..100 {
        let (var, p) = random_case(&mut rng);
        let n = p.n();
        let c = if trial % 2 == 0 {
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..10.0)).collect();
            SymCsr::from_diagonal(&d)
        } else {
            random_sparse(n, &mut rng)
        };
        let grad = var.riemannian_gradient(&p, &c).unwrap().grad;
        let mut h = var.project(&p, &random_mat(n, p.rank(), &mut rng)).unwrap().h;
        h.scale(1.0 / h.frob_norm());
        let t = 1e-5;
        let fp = objective(&c, var.retract(&p, &h, t).unwrap().r());
        let fm = objective(&c, var.retract(&p, &h, -t).unwrap().r());
        let fd = (fp - fm) / (2.0 * t);
        let exact = grad.inner(&h);
        assert!((fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()), "fd {fd} exact {exact}");
    }
}

#[test]
fn gradient_residual_is_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (var, p) = random_case(&mut rng);
        let c = random_sparse(p.n(), &mut rng);
        let (_, egrad) = objective_and_gradient(&c, p.r());
        let rgrad = var.gradient_from_euclidean(&p, &egrad).unwrap().grad;
        let normal = egrad.sub(&rgrad);
        for _ in 0..5 {
            let z = var.project(&p, &random_mat(p.n(), p.rank(), &mut rng)).unwrap().h;
            assert!(normal.inner(&z).abs() <= 1e-10 * (1.0 + egrad.frob_norm()) * z.frob_norm());
        }
    }
}

#[test]
fn euclidean_gradient_is_minus_two_cr() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let c = random_sparse(6, &mut rng);
    let m = random_mat(6, 3, &mut rng);
    let (f, g) = objective_and_gradient(&c, &m);
    let cd = DMatrix::from_fn(6, 6, |i, j| c.get(i, j));
    let md = DMatrix::from_row_slice(6, 3, m.as_slice());
    let cr = &cd * &md;
    assert!((f + (md.transpose() * &cr).trace()).abs() < 1e-12);
    for i in 0..6 {
        for k in 0..3 {
            assert!((g[(i, k)] + 2.0 * cr[(i, k)]).abs() < 1e-12);
        }
    }
}

#[test]
fn retraction_is_feasible_over_random_trials() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = 0;
    let mut diverged = 0;
    for _ in 0..TRIALS {
        let (var, p) = random_case(&mut rng);
        let mut h = var.project(&p, &random_mat(p.n(), p.rank(), &mut rng)).unwrap().h;
        h.scale(1.0 / h.frob_norm());
        let t = 10f64.powf(rng.random_range(-4.0..-0.5));
        match var.retract(&p, &h, t) {
            Ok(q) => {
                if !var.is_feasible(&q) {
                    failures += 1;
                }
            }
            Err(_) => diverged += 1,
        }
    }
    assert_eq!(failures, 0);
    // divergence is allowed (the caller shrinks t), but should be rare at these steps
    assert!(diverged <= TRIALS / 100, "{diverged} retractions diverged");
}

#[test]
fn feasible_points_have_unit_shifted_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..TRIALS {
        let (var, p) = random_case(&mut rng);
        let (tol, _) = var.tolerances(&p);
        for row in p.r().row_iter() {
            // ‖2R_i − e1‖² = 4g_i + 1
            let s: f64 = row.iter().enumerate().map(|(k, &x)| if k == 0 { (2.0 * x - 1.0).powi(2) } else { 4.0 * x * x }).sum();
            assert!((s - 1.0).abs() <= 4.0 * tol + 1e-15);
            assert!(row[0] >= -tol && row[0] <= 1.0 + tol);
        }
    }
}

#[test]
fn retraction_second_order_ratio_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (var, p) = random_case(&mut rng);
        let mut h = var.project(&p, &random_mat(p.n(), p.rank(), &mut rng)).unwrap().h;
        h.scale(1.0 / h.frob_norm());
        let ratios: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&t| {
                let q = var.retract(&p, &h, t).unwrap();
                q.r().sub(&p.r().add_scaled(t, &h)).frob_norm() / (t * t)
            })
            .collect();
        // the limit is half the norm of the second fundamental form at (H, H)
        let lim = ratios[3];
        assert!(ratios.iter().all(|&q| q <= 2.0 * lim + 1.0), "ratios {ratios:?}");
        assert!((ratios[2] - ratios[3]).abs() <= 0.05 * (1.0 + lim), "ratios {ratios:?}");
    }
}

#[test]
fn rounding_and_neighborhood() {
    let var = Variety::new(VarietyKind::Knapsack, vec![1.0, 2.0, 3.0], 3.0);
    let v = NonRegularPoint::new(vec![true, true, false]);
    let p = var.point(v.to_mat(3));
    let (w, d) = round_point(&p);
    assert_eq!(w.v, v.v);
    assert_eq!(d, 0.0);
    assert!(in_delta_neighborhood(&p, 1e-12));
    let zero = var.point(Mat::zeros(3, 3));
    assert!(round_point(&zero).0.is_zero());

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let var = random_variety(VarietyKind::Knapsack, 10, &mut rng);
    let p = qksdp::solver::constructed_point(&var, 4, 1).unwrap();
    let (_, dist) = round_point(&p);
    assert!(dist > 0.1);
    assert!(!in_delta_neighborhood(&p, 0.1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn projection_agrees_with_oracle(seed in any::<u64>(), n in 3usize..9, r in 3usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let var = random_variety(VarietyKind::Knapsack, n, &mut rng);
        let p = initial_point(&var, r, seed).unwrap();
        let g = random_mat(n, r, &mut rng);
        let got = var.project(&p, &g).unwrap().h;
        let want = dense_projection(&var, &p, &g);
        prop_assert!(max_abs_diff(&got, &want) < 1e-9);
    }

    #[test]
    fn oblique_projection_is_rowwise(seed in any::<u64>(), n in 2usize..9, r in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let var = random_variety(VarietyKind::Oblique, n, &mut rng);
        let p = initial_point(&var, r, seed).unwrap();
        let g = random_mat(n, r, &mut rng);
        let h = var.project(&p, &g).unwrap().h;
        // each row loses its component along n_i = 2R_i − e1
        for i in 0..n {
            let ni: Vec<f64> = (0..r).map(|k| 2.0 * p.r()[(i, k)] - if k == 0 { 1.0 } else { 0.0 }).collect();
            let dot: f64 = (0..r).map(|k| ni[k] * h[(i, k)]).sum();
            prop_assert!(dot.abs() < 1e-12);
        }
    }
}
