use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SolverError;
use crate::geometry::{FactorPoint, Variety, VarietyKind};
use crate::linalg::{axpy, dot, norm, Mat};

const MAX_TRIES: usize = 10;

/// A random feasible starting point: a Gaussian matrix with entries of size
/// `1/√(nr)`, first column shifted by ½, retracted onto the variety. If
/// that keeps failing, falls back to [`constructed_point`].
pub fn initial_point(var: &Variety, r: usize, seed: u64) -> Result<FactorPoint, SolverError> {
    assert!(r >= 2, "rank must be at least 2");
    let n = var.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / ((n * r) as f64).sqrt();
    for _ in 0..MAX_TRIES {
        let mut g = Mat::from_fn(n, r, |_, _| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
        for i in 0..n {
            g.row_mut(i)[0] += 0.5;
        }
        if let Ok(p) = var.restore(g) {
            let x = p.first_col();
            if x.iter().all(|&v| v > 0.0 && v < 1.0) {
                return Ok(p);
            }
        }
    }
    log::debug!("random start did not retract; using the constructed start");
    constructed_point(var, r, seed)
}

/// A random feasible point with every `x_i` equal.
///
/// Row `i` is `(ρ, √(ρ − ρ²)·g_i)` with `g_i` a random unit vector, so each
/// row constraint holds exactly. On the knapsack variety `ρ` solves
/// `ρS² + (1 − ρ)K = τS` with `S = Σ a_i` and `K = ‖Σ a_i g_i‖²`; on the
/// oblique variety `ρ = ½`. Rounding errors are removed by a final
/// retraction.
pub fn constructed_point(var: &Variety, r: usize, seed: u64) -> Result<FactorPoint, SolverError> {
    assert!(r >= 2, "rank must be at least 2");
    let n = var.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_TRIES {
        let mut dirs = Mat::zeros(n, r - 1);
        for i in 0..n {
            let row = dirs.row_mut(i);
            row.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
            let len = norm(row);
            if len == 0.0 {
                row[0] = 1.0;
            } else {
                row.iter_mut().for_each(|x| *x /= len);
            }
        }
        let rho = match var.kind() {
            VarietyKind::Oblique => 0.5,
            VarietyKind::Knapsack => {
                let a = var.a();
                let s: f64 = a.iter().sum();
                let ag = dirs.tr_mul_vec(a);
                let k = dot(&ag, &ag);
                (var.tau() * s - k) / (s * s - k)
            }
        };
        if !(rho > 0.0 && rho < 1.0) {
            continue;
        }
        let spread = (rho - rho * rho).sqrt();
        let mut r0 = Mat::zeros(n, r);
        for i in 0..n {
            let row = r0.row_mut(i);
            row[0] = rho;
            axpy(spread, dirs.row(i), &mut row[1..]);
        }
        if let Ok(p) = var.restore(r0) {
            return Ok(p);
        }
    }
    Err(SolverError::InitializationFailed(MAX_TRIES))
}
