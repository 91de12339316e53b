//! Quadratic knapsack instances: validation, scaling, generation and I/O.

mod generate;
mod io;

pub use generate::{generate, Family, GeneratorSpec};
pub use io::{read_instance, read_instance_str, write_instance, write_instance_string, Format};

use std::fmt;

use thiserror::Error;

use crate::sparse::{SparseError, SymCsr};

#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("profit matrix is not symmetric at ({row}, {col})")]
    NonSymmetricC { row: usize, col: usize },
    #[error("weight a[{index}] = {value} must satisfy 0 < a_i < tau = {tau}")]
    WeightOutOfRange { index: usize, value: f64, tau: f64 },
    #[error("sum of weights {sum} must exceed the capacity {tau}")]
    CapacityTooLarge { sum: f64, tau: f64 },
    #[error("instance needs at least two items, got {0}")]
    DegenerateSize(usize),
    #[error("weight vector has length {got}, profit matrix has dimension {n}")]
    LengthMismatch { n: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("nonregular construction needs an even item count of at least 4, got {0}")]
    OddNForConstruction(usize),
    #[error("invalid generator parameters: {0}")]
    InvalidSpec(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("format {0} cannot represent this instance: {1}")]
    Unrepresentable(&'static str, &'static str),
}

/// Where an instance came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Provenance {
    #[default]
    Manual,
    File(String),
    Generated {
        family: Family,
        seed: u64,
        p: f64,
        beta: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceMeta {
    pub provenance: Provenance,
    /// Factor the weights and capacity were divided by; 1 for unscaled data.
    pub scale: f64,
}

impl Default for InstanceMeta {
    fn default() -> Self {
        Self {
            provenance: Provenance::Manual,
            scale: 1.0,
        }
    }
}

/// Binary quadratic knapsack data: maximize `xᵀCx` subject to `aᵀx ≤ τ`.
///
/// Integer profits and weights are held in `f64`, which represents every
/// integer below 2^53 exactly; [`QkpInstance::is_integral`] tells callers
/// when exact comparisons are meaningful.
#[derive(Clone, Debug, PartialEq)]
pub struct QkpInstance {
    c: SymCsr,
    a: Vec<f64>,
    tau: f64,
    pub meta: InstanceMeta,
}

impl QkpInstance {
    /// Builds and validates an instance.
    pub fn new(c: SymCsr, a: Vec<f64>, tau: f64) -> Result<Self, InstanceError> {
        let inst = Self::new_unchecked(c, a, tau);
        inst.validate()?;
        Ok(inst)
    }

    /// Builds an instance without checking the knapsack assumptions.
    /// Call [`QkpInstance::validate`] before handing it to the solver.
    pub fn new_unchecked(c: SymCsr, a: Vec<f64>, tau: f64) -> Self {
        Self {
            c,
            a,
            tau,
            meta: InstanceMeta::default(),
        }
    }

    /// Builds an instance from a dense row-major profit matrix, rejecting
    /// asymmetric input instead of silently symmetrizing it.
    pub fn from_dense(n: usize, c: &[f64], a: Vec<f64>, tau: f64) -> Result<Self, InstanceError> {
        if c.len() != n * n {
            return Err(InstanceError::LengthMismatch { n, got: c.len() / n.max(1) });
        }
        let mut trip = Vec::new();
        for i in 0..n {
            for j in i..n {
                if c[i * n + j] != c[j * n + i] {
                    return Err(InstanceError::NonSymmetricC { row: i, col: j });
                }
                if c[i * n + j] != 0.0 {
                    trip.push((i, j, c[i * n + j]));
                }
            }
        }
        Self::new(SymCsr::from_triplets(n, &trip)?, a, tau)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.meta.provenance = provenance;
        self
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.a.len()
    }

    #[inline]
    pub fn c(&self) -> &SymCsr {
        &self.c
    }

    #[inline]
    pub fn a(&self) -> &[f64] {
        &self.a
    }

    #[inline]
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Checks n > 1, exact symmetry of C, and Assumption-1 style bounds
    /// `0 < a_i < τ`, `Σa > τ`.
    pub fn validate(&self) -> Result<(), InstanceError> {
        let n = self.a.len();
        if n <= 1 {
            return Err(InstanceError::DegenerateSize(n));
        }
        if self.c.n() != n {
            return Err(InstanceError::LengthMismatch { n: self.c.n(), got: n });
        }
        for i in 0..n {
            for (j, v) in self.c.row(i) {
                if self.c.get(j, i) != v {
                    return Err(InstanceError::NonSymmetricC { row: i, col: j });
                }
            }
        }
        if !self.tau.is_finite() || self.a.iter().any(|v| !v.is_finite()) {
            return Err(InstanceError::NonFinite("weights or capacity"));
        }
        for (index, &value) in self.a.iter().enumerate() {
            if value <= 0.0 || value >= self.tau {
                return Err(InstanceError::WeightOutOfRange {
                    index,
                    value,
                    tau: self.tau,
                });
            }
        }
        let sum: f64 = self.a.iter().sum();
        if sum <= self.tau {
            return Err(InstanceError::CapacityTooLarge { sum, tau: self.tau });
        }
        Ok(())
    }

    /// Returns the instance with `a ← a/τ` and `τ ← 1`; `C` is untouched.
    pub fn scale(&self) -> QkpInstance {
        if self.tau == 1.0 {
            return self.clone();
        }
        let tau = self.tau;
        let mut out = self.clone();
        out.a.iter_mut().for_each(|v| *v /= tau);
        out.tau = 1.0;
        out.meta.scale = self.meta.scale * tau;
        out
    }

    /// True when all profits, weights and the capacity are integers.
    pub fn is_integral(&self) -> bool {
        let int = |v: f64| v.fract() == 0.0 && v.abs() < 9.0e15;
        int(self.tau) && self.a.iter().all(|&v| int(v)) && self.c.upper_triplets().all(|(_, _, v)| int(v))
    }

    pub fn weight_of(&self, x: &[bool]) -> f64 {
        self.a.iter().zip(x).filter(|(_, &on)| on).map(|(w, _)| *w).sum()
    }

    /// `aᵀx ≤ τ`; exact on integral data, otherwise with a relative slack of a
    /// few ulps so that the feasible set does not depend on the scaling.
    pub fn fits(&self, x: &[bool]) -> bool {
        let w = self.weight_of(x);
        if self.is_integral() {
            w <= self.tau
        } else {
            w <= self.tau * (1.0 + 4.0 * (self.n() as f64) * f64::EPSILON)
        }
    }

    /// `xᵀCx` for a binary vector.
    pub fn profit(&self, x: &[bool]) -> f64 {
        let mut total = 0.0;
        for i in (0..self.n()).filter(|&i| x[i]) {
            for (j, v) in self.c.row(i) {
                if x[j] {
                    total += v;
                }
            }
        }
        total
    }
}

impl fmt::Display for QkpInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "QKP(n={}, nnz={}, tau={}, sum(a)={})",
            self.n(),
            self.c.nnz(),
            self.tau,
            self.a.iter().sum::<f64>()
        )
    }
}
