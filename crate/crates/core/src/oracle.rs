//! Brute-force references for small instances: exhaustive enumeration of
//! the knapsack problem and a dense grid search for the escape dual.

use crate::escape::EscapeProblem;
use crate::instance::QkpInstance;
use crate::spectral::{self, SpectralError};

pub const ORACLE_MAX_N: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("n = {n} is too large for the exhaustive oracle (max {max})")]
    TooLarge { n: usize, max: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Exhaustive {
    pub x: Vec<bool>,
    pub value: f64,
    pub weight: f64,
    /// Number of feasible binary vectors.
    pub feasible: u64,
}

/// Maximizes `xᵀCx` subject to `aᵀx ≤ τ` over all `2ⁿ` binary vectors,
/// walking them in Gray-code order with incremental updates.
pub fn exhaustive_qkp(inst: &QkpInstance) -> Result<Exhaustive, OracleError> {
    let n = inst.n();
    if n > ORACLE_MAX_N {
        return Err(OracleError::TooLarge { n, max: ORACLE_MAX_N });
    }
    let c = inst.c();
    let a = inst.a();
    let diag = c.diagonal();
    let mut x = vec![false; n];
    // cx = C·x
    let mut cx = vec![0.0; n];
    let (mut value, mut weight) = (0.0, 0.0);
    let mut best = Exhaustive {
        x: x.clone(),
        value: 0.0,
        weight: 0.0,
        feasible: 1,
    };
    for k in 1u64..(1u64 << n) {
        let i = k.trailing_zeros() as usize;
        let sign = if x[i] { -1.0 } else { 1.0 };
        // (x ± e_i)ᵀC(x ± e_i) = xᵀCx ± 2(Cx)_i + C_ii, with (Cx)_i taken before the flip
        value += sign * 2.0 * cx[i] + diag[i];
        weight += sign * a[i];
        x[i] = !x[i];
        for (j, v) in c.row(i) {
            cx[j] += sign * v;
        }
        if inst.fits(&x) {
            best.feasible += 1;
            if value > best.value {
                best.value = value;
                best.x.copy_from_slice(&x);
                best.weight = weight;
            }
        }
    }
    // recompute from scratch to shed accumulated rounding
    best.value = inst.profit(&best.x);
    best.weight = inst.weight_of(&best.x);
    Ok(best)
}

/// Dense `φ(α) = λ_min(M − αA)`.
pub fn dense_phi(prob: &EscapeProblem<'_>, alpha: f64) -> Result<f64, OracleError> {
    let n = prob.n();
    let vals = spectral::eigvalsh(n, prob.operator(alpha).to_dense())?;
    Ok(vals[0])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridMax {
    pub alpha: f64,
    pub phi: f64,
}

/// Maximizes the concave `φ` by a coarse logarithmic grid over
/// `±10^[−4, 6]` followed by golden-section refinement around the best
/// sample.
pub fn escape_dual_grid(prob: &EscapeProblem<'_>) -> Result<GridMax, OracleError> {
    let mut grid = vec![0.0];
    for k in -16..=24 {
        let m = 10f64.powf(k as f64 / 4.0);
        grid.push(m);
        grid.push(-m);
    }
    grid.sort_by(f64::total_cmp);
    let vals: Vec<f64> = grid.iter().map(|&al| dense_phi(prob, al)).collect::<Result<_, _>>()?;
    let (ib, _) = vals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let mut lo = grid[ib.saturating_sub(1)];
    let mut hi = grid[(ib + 1).min(grid.len() - 1)];
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = dense_phi(prob, x1)?;
    let mut f2 = dense_phi(prob, x2)?;
    for _ in 0..200 {
        if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = dense_phi(prob, x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = dense_phi(prob, x1)?;
        }
    }
    let (alpha, phi) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    let best = if vals[ib] > phi { GridMax { alpha: grid[ib], phi: vals[ib] } } else { GridMax { alpha, phi } };
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SymCsr;

    #[test]
    fn three_item_example() {
        let c = SymCsr::from_triplets(3, &[(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
        let inst = QkpInstance::new(c, vec![1.0, 1.0, 1.0], 2.0).unwrap();
        let best = exhaustive_qkp(&inst).unwrap();
        assert_eq!(best.x, vec![false, true, true]);
        assert_eq!(best.value, 4.0);
    }

    #[test]
    fn rejects_large() {
        let inst = QkpInstance::new(SymCsr::zeros(25), vec![1.0; 25], 2.0).unwrap();
        assert!(matches!(exhaustive_qkp(&inst), Err(OracleError::TooLarge { n: 25, .. })));
    }
}
