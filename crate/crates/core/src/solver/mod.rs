//! Low-rank Riemannian solver for the semidefinite relaxation.

mod algorithm;
mod init;
mod pipeline;
mod rgd;

use std::fmt;
use std::str::FromStr;

use crate::certify::{CertifyError, KktCertificate, RdMode};
use crate::escape::{EscapeError, EscapeSettings};
use crate::geometry::{GeometryError, VarietyKind};
use crate::instance::{InstanceError, QkpInstance};
use crate::linalg::Mat;
use crate::rounding::RoundedSolution;
use crate::spectral::EigenOptions;

pub use algorithm::{solve_sqkelr, solve_on_variety};
pub use init::{constructed_point, initial_point};
pub use pipeline::solve_pipeline;
pub use rgd::{LineSearch, Rgd, RgdError, RgdStep};

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("initial point has shape {got:?}, expected {expected:?}")]
    BadInitialPoint { expected: (usize, usize), got: (usize, usize) },
    #[error("could not construct a feasible starting point after {0} attempts")]
    InitializationFailed(usize),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Escape(#[from] EscapeError),
}

/// How the factorization rank is chosen when not given explicitly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankMode {
    /// Structural bound for diagonal and banded profits, generic otherwise.
    #[default]
    Auto,
    Generic,
    /// Generic bound capped at 20.
    Capped,
}

impl FromStr for RankMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Self::Auto),
            "generic" => Ok(Self::Generic),
            "capped" => Ok(Self::Capped),
            _ => Err(format!("unknown rank mode `{s}` (auto, generic, capped)")),
        }
    }
}

/// `⌈√(2(n+1))⌉ + 2`
pub fn generic_rank(n: usize) -> usize {
    (2.0 * (n as f64 + 1.0)).sqrt().ceil() as usize + 2
}

pub fn select_rank(inst: &QkpInstance, mode: RankMode) -> usize {
    let generic = generic_rank(inst.n());
    match mode {
        RankMode::Generic => generic,
        RankMode::Capped => generic.min(20),
        RankMode::Auto => {
            let bw = inst.c().bandwidth();
            if bw + 3 < generic {
                bw + 3
            } else {
                generic
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Factorization rank; `None` selects it from `rank_mode`.
    pub rank: Option<usize>,
    pub rank_mode: RankMode,
    /// Threshold on the largest KKT residue for `Converged`.
    pub tol_kkt: f64,
    /// Initial threshold on the normalized gradient that triggers a KKT check.
    pub tolg0: f64,
    /// Multiply the gradient threshold by `max(1, ‖C‖_F)`, the same scale
    /// that normalizes the dual residue.
    pub tolg_relative: bool,
    pub delta0: f64,
    pub max_time_s: f64,
    /// Cap on visits to non-regular points.
    pub max_outer: usize,
    /// Cap on RGD iterations over the whole run.
    pub max_iters: usize,
    pub line_search: LineSearch,
    pub seed: u64,
    pub rd_mode: RdMode,
    pub feas_tol: f64,
    pub max_gn: usize,
    pub escape: EscapeSettings,
    pub eig: EigenOptions,
    /// Round the final point to a knapsack solution.
    pub round: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rank: None,
            rank_mode: RankMode::Auto,
            tol_kkt: 1e-6,
            tolg0: 1e-6,
            tolg_relative: true,
            delta0: 0.1,
            max_time_s: 3600.0,
            max_outer: 100,
            max_iters: 200_000,
            line_search: LineSearch::default(),
            seed: 0,
            rd_mode: RdMode::Auto,
            feas_tol: 1e-12,
            max_gn: 20,
            escape: EscapeSettings::default(),
            eig: EigenOptions::default(),
            round: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.to_string()));
        if let Some(r) = self.rank {
            if r < 3 {
                return bad("rank must be at least 3 for non-regular point handling");
            }
        }
        if !(self.tol_kkt > 0.0) || !(self.tolg0 > 0.0) || !(self.delta0 > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.max_time_s > 0.0) {
            return bad("time limit must be positive");
        }
        if !(self.feas_tol > 0.0) || self.max_gn == 0 {
            return bad("retraction settings must be positive");
        }
        self.line_search.validate().map_err(SolverError::InvalidConfig)
    }

    pub fn rank_for(&self, inst: &QkpInstance) -> usize {
        self.rank.unwrap_or_else(|| select_rank(inst, self.rank_mode))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    /// KKT residues below `tol_kkt` at a regular point.
    Converged,
    /// Second-order stationary non-regular point, hence optimal.
    NonRegularOptimal,
    TimeLimit,
    Inconclusive,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Converged => "converged",
            Self::NonRegularOptimal => "non-regular-optimal",
            Self::TimeLimit => "time-limit",
            Self::Inconclusive => "inconclusive",
        })
    }
}

impl FromStr for SolveStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "converged" => Ok(Self::Converged),
            "non-regular-optimal" => Ok(Self::NonRegularOptimal),
            "time-limit" => Ok(Self::TimeLimit),
            "inconclusive" => Ok(Self::Inconclusive),
            _ => Err(format!("unknown status `{s}`")),
        }
    }
}

/// Which problems the pipeline solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// Equality-constrained problem directly (nonnegative profits).
    Equality,
    /// Inequality-free problem whose solution satisfied the capacity.
    Relaxed,
    /// Inequality-free problem first, equality-constrained problem second.
    RelaxedThenEquality,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Equality => "equality",
            Self::Relaxed => "relaxed",
            Self::RelaxedThenEquality => "relaxed-then-equality",
        })
    }
}

/// Counters of one run of the outer loop.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub outer_iterations: usize,
    pub escapes: usize,
    /// Neighborhood visits that only shrank the radius.
    pub radius_shrinks: usize,
    pub kkt_checks: usize,
    pub backtracks: usize,
    /// Largest constraint violation over accepted iterates.
    pub max_violation: f64,
    /// Objective at the start of each outer iteration, in order.
    pub outer_objectives: Vec<f64>,
    /// Non-regular points visited, as item index sets.
    pub visited: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub variety: VarietyKind,
    pub branch: Branch,
    pub rank: usize,
    /// Final factor on the (scaled) variety.
    pub r: Mat,
    pub certificate: Option<KktCertificate>,
    pub stats: SolveStats,
    pub wall_time_s: f64,
    pub rounded: Option<RoundedSolution>,
    pub message: String,
}

impl SolveReport {
    /// `−f(R)`, the relaxation bound.
    pub fn bound(&self) -> Option<f64> {
        self.certificate.as_ref().map(|c| -c.obj)
    }
}
