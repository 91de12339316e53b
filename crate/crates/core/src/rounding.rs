//! Sort-and-fill rounding of a relaxed solution to a feasible knapsack
//! solution.

use crate::geometry::objective;
use crate::linalg::Mat;
use crate::instance::QkpInstance;
use crate::sparse::SymCsr;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoundedSolution {
    pub x: Vec<bool>,
    /// `xᵀCx`
    pub value: f64,
    pub weight: f64,
    /// Relative gap to the relaxation bound `⟨C, RRᵀ⟩`.
    pub relgap: f64,
    pub feasible: bool,
}

/// Takes items in decreasing order of `scores` (ties to the smaller index)
/// while the cumulative weight stays within the capacity.
pub fn sort_and_fill(scores: &[f64], inst: &QkpInstance) -> Vec<bool> {
    let n = inst.n();
    assert_eq!(scores.len(), n);
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps equal scores in index order
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let mut x = vec![false; n];
    let mut load = 0.0;
    for i in order {
        let next = load + inst.a()[i];
        if next > inst.tau() {
            break;
        }
        load = next;
        x[i] = true;
    }
    x
}

/// Rounds `Re1` and measures the result against the bound of `R`.
/// `inst` should be the unscaled instance so that the capacity test is exact
/// on integer data.
pub fn round_solution(r: &Mat, inst: &QkpInstance) -> RoundedSolution {
    let x = sort_and_fill(&r.col(0), inst);
    let bound = -objective(inst.c(), r);
    evaluate(&x, bound, inst)
}

pub fn evaluate(x: &[bool], bound: f64, inst: &QkpInstance) -> RoundedSolution {
    let value = inst.profit(x);
    let weight = inst.weight_of(x);
    RoundedSolution {
        x: x.to_vec(),
        value,
        weight,
        relgap: relgap(bound, value),
        feasible: weight <= inst.tau(),
    }
}

/// `|bound − value| / (1 + |value|)`
pub fn relgap(bound: f64, value: f64) -> f64 {
    (bound - value).abs() / (1.0 + value.abs())
}

/// `xᵀCx` on a bare matrix.
pub fn quadratic_value(c: &SymCsr, x: &[bool]) -> f64 {
    let xf: Vec<f64> = x.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    c.quad_form(&xf)
}
