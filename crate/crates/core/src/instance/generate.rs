//! Seeded generators for the experimental instance families.
//!
//! Linear families use coefficient range `R = 1000`:
//!
//! * uncorrelated: `w ~ U{1..R}`, `p ~ U{1..R}`
//! * weakly correlated: `w ~ U{1..R}`, `p ~ U{w - R/10 .. w + R/10}`, clipped to `p ≥ 1`
//! * strongly correlated: `w ~ U{1..R}`, `p = w + R/10`
//!
//! Quadratic families draw every upper-triangle entry (diagonal included)
//! nonzero with probability `p`, values `U{1..100}`, and weights `U{1..50}`.
//! Nonzeros are placed by geometric skipping, so the cost is proportional to
//! the number of nonzeros rather than to `n²`.
//!
//! The capacity is `β·Σa`. When that would put some weight at or above the
//! capacity (tiny `n` or small `β`), it is raised to `max(a) + 1/2`
//! (`max(a) + 1` in integer-capacity mode) so every generated instance
//! satisfies the knapsack assumptions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use super::{InstanceError, Provenance, QkpInstance};
use crate::sparse::SymCsr;

const LINEAR_RANGE: i64 = 1000;
const QKP_PROFIT_MAX: i64 = 100;
const QKP_WEIGHT_MAX: i64 = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    UncorrelatedLinear,
    WeaklyCorrelatedLinear,
    StronglyCorrelatedLinear,
    RandomQkp,
    SparseQkp,
    NonregularConstruction,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::UncorrelatedLinear,
        Family::WeaklyCorrelatedLinear,
        Family::StronglyCorrelatedLinear,
        Family::RandomQkp,
        Family::SparseQkp,
        Family::NonregularConstruction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::UncorrelatedLinear => "uncorrelated-linear",
            Family::WeaklyCorrelatedLinear => "weakly-correlated-linear",
            Family::StronglyCorrelatedLinear => "strongly-correlated-linear",
            Family::RandomQkp => "random-qkp",
            Family::SparseQkp => "sparse-qkp",
            Family::NonregularConstruction => "nonregular-construction",
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(
            self,
            Family::UncorrelatedLinear | Family::WeaklyCorrelatedLinear | Family::StronglyCorrelatedLinear
        )
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = InstanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| InstanceError::InvalidSpec(format!("unknown family '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub family: Family,
    pub n: usize,
    /// Density of the profit matrix; ignored by the linear and sparse families.
    pub p: f64,
    pub beta: f64,
    pub seed: u64,
    /// Ceil the capacity to an integer (rounding-comparison mode).
    pub integer_capacity: bool,
}

impl GeneratorSpec {
    pub fn new(family: Family, n: usize, p: f64, beta: f64, seed: u64) -> Self {
        Self {
            family,
            n,
            p,
            beta,
            seed,
            integer_capacity: false,
        }
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(InstanceError::InvalidSpec(format!("density p = {} not in (0, 1]", self.p)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(InstanceError::InvalidSpec(format!("beta = {} not in (0, 1)", self.beta)));
        }
        if self.n < 2 {
            return Err(InstanceError::DegenerateSize(self.n));
        }
        if self.family == Family::NonregularConstruction && (self.n % 2 == 1 || self.n < 4) {
            return Err(InstanceError::OddNForConstruction(self.n));
        }
        Ok(())
    }

    /// Density actually used when drawing the profit matrix.
    pub fn effective_density(&self) -> f64 {
        match self.family {
            Family::SparseQkp => ((self.n as f64).ln() / self.n as f64).clamp(f64::MIN_POSITIVE, 1.0),
            _ => self.p,
        }
    }
}

/// Draws an instance; deterministic in `spec.seed`.
pub fn generate(spec: &GeneratorSpec) -> Result<QkpInstance, InstanceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let inst = match spec.family {
        Family::UncorrelatedLinear | Family::WeaklyCorrelatedLinear | Family::StronglyCorrelatedLinear => {
            let (profits, a, tau) = loop {
                let weights: Vec<i64> = (0..n).map(|_| rng.random_range(1..=LINEAR_RANGE)).collect();
                let profits: Vec<i64> = weights
                    .iter()
                    .map(|&w| linear_profit(spec.family, w, &mut rng))
                    .collect();
                if let Some(tau) = capacity(&weights, spec) {
                    break (profits, weights, tau);
                }
            };
            let diag: Vec<f64> = profits.iter().map(|&p| p as f64).collect();
            QkpInstance::new(SymCsr::from_diagonal(&diag), to_f64(&a), tau)?
        }
        Family::RandomQkp | Family::SparseQkp => {
            let (c, a, tau) = random_qkp(n, spec.effective_density(), spec, &mut rng)?;
            QkpInstance::new(c, to_f64(&a), tau)?
        }
        Family::NonregularConstruction => {
            let (c, a, _) = random_qkp(n, spec.p, spec, &mut rng)?;
            nonregular_construction(&c, &a)?
        }
    };
    Ok(inst.with_provenance(Provenance::Generated {
        family: spec.family,
        seed: spec.seed,
        p: spec.effective_density(),
        beta: spec.beta,
    }))
}

fn to_f64(v: &[i64]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn linear_profit(family: Family, w: i64, rng: &mut impl Rng) -> i64 {
    let spread = LINEAR_RANGE / 10;
    match family {
        Family::UncorrelatedLinear => rng.random_range(1..=LINEAR_RANGE),
        Family::WeaklyCorrelatedLinear => rng.random_range(w - spread..=w + spread).max(1),
        _ => w + spread,
    }
}

/// Capacity for integer weights, or `None` when no valid integer capacity
/// exists and the weights must be redrawn.
fn capacity(weights: &[i64], spec: &GeneratorSpec) -> Option<f64> {
    let sum: i64 = weights.iter().sum();
    let max = *weights.iter().max()?;
    if spec.integer_capacity {
        let tau = ((spec.beta * sum as f64).ceil() as i64).max(max + 1);
        (tau < sum).then_some(tau as f64)
    } else {
        let tau = (spec.beta * sum as f64).max(max as f64 + 0.5);
        (tau < sum as f64).then_some(tau)
    }
}

fn random_qkp(
    n: usize,
    density: f64,
    spec: &GeneratorSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(SymCsr, Vec<i64>, f64), InstanceError> {
    let (a, tau) = loop {
        let a: Vec<i64> = (0..n).map(|_| rng.random_range(1..=QKP_WEIGHT_MAX)).collect();
        if let Some(tau) = capacity(&a, spec) {
            break (a, tau);
        }
    };
    let skip = Geometric::new(density).map_err(|e| InstanceError::InvalidSpec(e.to_string()))?;
    let total = (n as u64) * (n as u64 + 1) / 2;
    let mut trip = Vec::with_capacity(((total as f64) * density * 1.05) as usize + 16);
    // walk the upper triangle row by row; `pos` is the linear index into it
    let mut pos: u64 = 0;
    let mut row = 0usize;
    let mut row_start: u64 = 0;
    loop {
        pos = pos.saturating_add(skip.sample(rng));
        if pos >= total {
            break;
        }
        while pos >= row_start + (n - row) as u64 {
            row_start += (n - row) as u64;
            row += 1;
        }
        let col = row + (pos - row_start) as usize;
        let v = rng.random_range(1..=QKP_PROFIT_MAX) as f64;
        trip.push((row, col, v));
        pos += 1;
    }
    Ok((SymCsr::from_triplets(n, &trip)?, a, tau))
}

/// Keeps only profits between even (1-based) items, pairs each odd item
/// with the weight of its even partner, and sets `τ' = Σa'/2`. Both the odd
/// and the even index sets then fill the knapsack exactly.
fn nonregular_construction(c: &SymCsr, a: &[i64]) -> Result<QkpInstance, InstanceError> {
    let n = a.len();
    // 1-based even ⇔ 0-based odd
    let even = |i: usize| i % 2 == 1;
    let trip: Vec<_> = c.upper_triplets().filter(|&(i, j, _)| even(i) && even(j)).collect();
    let a2: Vec<i64> = (0..n).map(|i| a[2 * (i / 2) + 1]).collect();
    let tau = a2.iter().sum::<i64>() as f64 / 2.0;
    QkpInstance::new(SymCsr::from_triplets(n, &trip)?, to_f64(&a2), tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_duplicates_even_weights() {
        let c = SymCsr::from_triplets(4, &[(0, 0, 3.0), (0, 1, 1.0), (1, 3, 7.0), (3, 3, 2.0)]).unwrap();
        let inst = nonregular_construction(&c, &[5, 6, 7, 8]).unwrap();
        assert_eq!(inst.a(), &[6.0, 6.0, 8.0, 8.0]);
        assert_eq!(inst.tau(), 14.0);
        assert_eq!(inst.c().get(1, 3), 7.0);
        assert_eq!(inst.c().get(3, 3), 2.0);
        assert_eq!(inst.c().get(0, 0), 0.0);
        assert_eq!(inst.c().get(0, 1), 0.0);
    }

    #[test]
    fn construction_rejects_odd_n() {
        let spec = GeneratorSpec::new(Family::NonregularConstruction, 5, 0.5, 0.5, 1);
        assert_eq!(generate(&spec), Err(InstanceError::OddNForConstruction(5)));
    }

    #[test]
    fn density_one_fills_upper_triangle() {
        let spec = GeneratorSpec::new(Family::RandomQkp, 6, 1.0, 0.5, 3);
        let inst = generate(&spec).unwrap();
        assert_eq!(inst.c().nnz(), 36);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GeneratorSpec::new(Family::RandomQkp, 40, 0.3, 0.4, 99);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = GeneratorSpec { seed: 100, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn integer_capacity_is_ceiled() {
        let mut spec = GeneratorSpec::new(Family::RandomQkp, 200, 0.1, 0.1, 5);
        spec.integer_capacity = true;
        let inst = generate(&spec).unwrap();
        let sum: f64 = inst.a().iter().sum();
        assert_eq!(inst.tau(), (0.1 * sum).ceil());
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
    }
}
