//! Thick-restart block Lanczos for the bottom of the spectrum.
//!
//! The basis `V` and its image `AV` are stored explicitly and every new
//! vector is orthogonalized against the whole basis twice (classical
//! Gram–Schmidt, repeated), so the projected matrix `T = VᵀAV` is computed
//! directly rather than through the three-term recurrence. At a restart the
//! basis collapses to the wanted Ritz vectors plus a few extras, and the
//! search continues from their residuals.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dense, EigenOptions, EigenPairs, SpectralError, StructuredOperator};
use crate::linalg::{axpy, dot, norm, scale_in_place};

struct Basis {
    v: Vec<Vec<f64>>,
    av: Vec<Vec<f64>>,
    /// Upper triangle of `T`, `t[j][i] = ⟨v_i, A v_j⟩` for `i ≤ j`.
    t: Vec<Vec<f64>>,
}

impl Basis {
    fn len(&self) -> usize {
        self.v.len()
    }

    fn projected(&self) -> Vec<f64> {
        let s = self.len();
        let mut m = vec![0.0; s * s];
        for j in 0..s {
            for i in 0..=j {
                m[i * s + j] = self.t[j][i];
                m[j * s + i] = self.t[j][i];
            }
        }
        m
    }

    /// Orthogonalizes `x` against the basis; returns false if nothing is left.
    fn orthogonalize(&self, x: &mut [f64]) -> bool {
        let before = norm(x);
        if before == 0.0 {
            return false;
        }
        for _ in 0..2 {
            for vi in &self.v {
                let c = dot(vi, x);
                axpy(-c, vi, x);
            }
        }
        let after = norm(x);
        if after <= 1e-10 * before || after == 0.0 {
            return false;
        }
        scale_in_place(1.0 / after, x);
        true
    }
}

struct Ritz {
    values: Vec<f64>,
    /// Row `i` holds the coefficients of Ritz vector `i` in the basis.
    coef: Vec<f64>,
    s: usize,
}

impl Ritz {
    fn combine(&self, i: usize, vecs: &[Vec<f64>]) -> Vec<f64> {
        let n = vecs[0].len();
        let mut out = vec![0.0; n];
        for (j, vj) in vecs.iter().enumerate() {
            let c = self.coef[i * self.s + j];
            if c != 0.0 {
                axpy(c, vj, &mut out);
            }
        }
        out
    }
}

pub(super) fn block_lanczos(
    op: &StructuredOperator<'_>,
    k: usize,
    opts: &EigenOptions,
) -> Result<EigenPairs, SpectralError> {
    let n = op.dim();
    let b = k;
    let m = opts.restart_dim.max(k + 3 * b + 4).min(n);
    let keep = (k + b + 3).min(m - b);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let random_vec = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };

    let mut basis = Basis {
        v: Vec::with_capacity(m),
        av: Vec::with_capacity(m),
        t: Vec::with_capacity(m),
    };
    let mut queue: VecDeque<Vec<f64>> = (0..b).map(|_| random_vec(&mut rng)).collect();
    let mut matvecs = 0usize;

    loop {
        // grow by one block
        for _ in 0..b {
            if basis.len() >= m {
                break;
            }
            let mut x = queue.pop_front().unwrap_or_else(|| random_vec(&mut rng));
            let mut ok = basis.orthogonalize(&mut x);
            let mut tries = 0;
            while !ok && tries < 5 {
                x = random_vec(&mut rng);
                ok = basis.orthogonalize(&mut x);
                tries += 1;
            }
            if !ok {
                break;
            }
            let ax = op.matvec(&x)?;
            matvecs += 1;
            let col: Vec<f64> = basis.v.iter().map(|vi| dot(vi, &ax)).chain(std::iter::once(dot(&x, &ax))).collect();
            basis.t.push(col);
            queue.push_back(ax.clone());
            basis.v.push(x);
            basis.av.push(ax);
        }

        let s = basis.len();
        if s < k {
            continue;
        }
        let ritz = rayleigh_ritz(&basis)?;
        let pairs = ritz_pairs(&ritz, &basis, k);
        let worst = pairs
            .values
            .iter()
            .zip(&pairs.residuals)
            .map(|(lam, r)| r / (opts.tol * opts.floor.max(lam.abs())))
            .fold(0.0f64, f64::max);
        let exhausted = s == n;
        if worst <= 1.0 || exhausted {
            return Ok(EigenPairs {
                converged: true,
                matvecs,
                ..pairs
            });
        }
        if matvecs >= opts.max_matvecs {
            let residual = pairs.residuals.iter().cloned().fold(0.0, f64::max);
            return Err(SpectralError::NotConverged {
                matvecs,
                residual,
                best: Box::new(EigenPairs { matvecs, ..pairs }),
            });
        }

        if s + b > m {
            // thick restart on the `keep` smallest Ritz vectors
            let mut v = Vec::with_capacity(m);
            let mut av = Vec::with_capacity(m);
            let mut t = Vec::with_capacity(m);
            for i in 0..keep.min(s) {
                v.push(ritz.combine(i, &basis.v));
                av.push(ritz.combine(i, &basis.av));
                let mut col = vec![0.0; i + 1];
                col[i] = ritz.values[i];
                t.push(col);
            }
            queue.clear();
            for i in 0..k {
                let tol_i = opts.tol * opts.floor.max(pairs.values[i].abs());
                if pairs.residuals[i] > tol_i && queue.len() < b {
                    let mut r = av[i].clone();
                    axpy(-ritz.values[i], &v[i], &mut r);
                    queue.push_back(r);
                }
            }
            basis = Basis { v, av, t };
        }
    }
}

fn rayleigh_ritz(basis: &Basis) -> Result<Ritz, SpectralError> {
    let s = basis.len();
    let (values, coef) = dense::eigh(s, basis.projected())?;
    Ok(Ritz { values, coef, s })
}

fn ritz_pairs(ritz: &Ritz, basis: &Basis, k: usize) -> EigenPairs {
    let mut vectors = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for i in 0..k {
        let x = ritz.combine(i, &basis.v);
        let mut r = ritz.combine(i, &basis.av);
        axpy(-ritz.values[i], &x, &mut r);
        residuals.push(norm(&r));
        vectors.push(x);
    }
    EigenPairs {
        values: ritz.values[..k].to_vec(),
        vectors,
        residuals,
        converged: false,
        matvecs: 0,
    }
}
