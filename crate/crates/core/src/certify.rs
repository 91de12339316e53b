//! Dual recovery and KKT residues.
//!
//! The dual slack of the relaxation at multipliers `(μ, λ)` is the
//! `(n+1) × (n+1)` matrix
//!
//! ```text
//! S = [ −y            (μ + λτa)ᵀ/2      ]
//!     [ (μ + λτa)/2   −C − diag(μ) − λaaᵀ ]
//! ```
//!
//! with `y = ½(μ + λτa)ᵀRe1`. It is never formed densely for large `n`: it is
//! a sparse block plus a diagonal plus two low-rank terms.

use thiserror::Error;

use crate::geometry::{objective, FactorPoint, GeometryError, NonRegularPoint, Variety, VarietyKind};
use crate::linalg::dot;
use crate::sparse::SymCsr;
use crate::spectral::{self, EigenOptions, LowRankTerm, SpectralError, StructuredOperator};

/// Largest `n + 1` for which the automatic mode uses a dense eigensolve.
pub const FULL_EIG_MAX_DIM: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("dual normal equations are singular (pivot {pivot:.3e}); the point is close to a non-regular point")]
    SingularNormalEquations { pivot: f64 },
    #[error("dual vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RdMode {
    /// Full-eig up to [`FULL_EIG_MAX_DIM`], lambda-min above.
    #[default]
    Auto,
    /// `‖Π₋(S)‖_F / (1 + ‖S‖_F)` from a dense eigendecomposition.
    FullEig,
    /// `max(0, −λ_min(S)) / (1 + ‖S‖_F)` from the iterative eigensolver.
    LambdaMin,
}

impl RdMode {
    pub fn resolve(self, n: usize) -> RdMode {
        match self {
            RdMode::Auto if n + 1 <= FULL_EIG_MAX_DIM => RdMode::FullEig,
            RdMode::Auto => RdMode::LambdaMin,
            m => m,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RdMode::Auto => "auto",
            RdMode::FullEig => "full-eig",
            RdMode::LambdaMin => "lambda-min",
        }
    }
}

impl std::str::FromStr for RdMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(RdMode::Auto),
            "full-eig" => Ok(RdMode::FullEig),
            "lambda-min" => Ok(RdMode::LambdaMin),
            other => Err(format!("unknown rd mode '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KktCertificate {
    pub mu: Vec<f64>,
    pub lambda: f64,
    pub y: f64,
    pub rp: f64,
    pub rd: f64,
    pub pdgap: f64,
    /// `⟨−C, RRᵀ⟩`
    pub obj: f64,
    /// Mode actually used (never `Auto`).
    pub rd_mode: RdMode,
    /// False when the iterative eigensolver stopped on its budget.
    pub rd_converged: bool,
    /// Smallest eigenvalue of `S` (or its estimate).
    pub s_min_eig: f64,
    pub s_norm: f64,
}

impl KktCertificate {
    pub fn max_residue(&self) -> f64 {
        self.rp.max(self.rd).max(self.pdgap)
    }
}

/// Least-squares multipliers of the first-order system
/// `−2CR = Σ μ_i ∇g_i + λ∇h` at a regular point.
pub fn recover_dual_regular(var: &Variety, p: &FactorPoint, c: &SymCsr) -> Result<(Vec<f64>, f64), CertifyError> {
    match var.riemannian_gradient(p, c) {
        Ok(g) => Ok((g.mu, g.lambda)),
        Err(GeometryError::SingularProjection { pivot }) => Err(CertifyError::SingularNormalEquations { pivot }),
        Err(e) => unreachable!("shapes are consistent by construction: {e}"),
    }
}

/// Closed-form multipliers at a non-regular point `v·e1ᵀ` certified with
/// escape multiplier `α`: `μ = −2(Cv)∘d − ασ_vτ·(a∘d)`, `λ = α`.
pub fn recover_dual_nonregular(pt: &NonRegularPoint, alpha: f64, c: &SymCsr, a: &[f64], tau: f64) -> (Vec<f64>, f64) {
    let cv = c.mul_vec(&pt.indicator());
    let mu = (0..a.len())
        .map(|i| -2.0 * cv[i] * pt.d[i] - alpha * pt.sigma * tau * a[i] * pt.d[i])
        .collect();
    (mu, alpha)
}

/// `y = ½(μ + λτa)ᵀRe1`
pub fn dual_y(p: &FactorPoint, mu: &[f64], lambda: f64, a: &[f64], tau: f64) -> f64 {
    let x = p.first_col();
    0.5 * (0..mu.len()).map(|i| (mu[i] + lambda * tau * a[i]) * x[i]).sum::<f64>()
}

/// The dual slack as a structured operator of dimension `n + 1`.
pub fn dual_slack<'a>(c: &'a SymCsr, a: &[f64], tau: f64, mu: &[f64], lambda: f64, y: f64) -> StructuredOperator<'a> {
    let n = a.len();
    let mut diag = Vec::with_capacity(n + 1);
    diag.push(-y);
    diag.extend(mu.iter().map(|m| -m));
    let mut border = vec![0.0; n + 1];
    for i in 0..n {
        border[i + 1] = 0.5 * (mu[i] + lambda * tau * a[i]);
    }
    let mut e0 = vec![0.0; n + 1];
    e0[0] = 1.0;
    let mut a_ext = vec![0.0; n + 1];
    a_ext[1..].copy_from_slice(a);
    let mut op = StructuredOperator::new(n + 1)
        .with_sparse(c, -1.0, 1)
        .with_diagonal(diag)
        .with_term(LowRankTerm {
            w: 2.0,
            u: e0,
            z: border,
        });
    if lambda != 0.0 {
        op = op.with_term(LowRankTerm::symmetric(-lambda, a_ext));
    }
    op
}

/// Eigen-solver settings for the large-scale dual residue. The residual
/// tolerance is made relative to `‖S‖_F`, which is also the normalization of
/// the reported residue.
pub fn rd_eigen_options(s_norm: f64, base: &EigenOptions) -> EigenOptions {
    EigenOptions {
        floor: base.floor.max(1e-3 * s_norm),
        ..base.clone()
    }
}

/// Residues of the KKT system at `p` for the given multipliers.
pub fn kkt_residues(
    var: &Variety,
    p: &FactorPoint,
    c: &SymCsr,
    mu: &[f64],
    lambda: f64,
    rd_mode: RdMode,
    eig: &EigenOptions,
) -> Result<KktCertificate, CertifyError> {
    let n = p.n();
    if mu.len() != n {
        return Err(CertifyError::DimensionMismatch {
            expected: n,
            got: mu.len(),
        });
    }
    let lambda = if var.kind() == VarietyKind::Oblique { 0.0 } else { lambda };
    let (a, tau) = (var.a(), var.tau());
    let (g, h) = var.residual(p);
    let rp = 0.5 * (dot(&g, &g) + h * h).sqrt();

    let obj = objective(c, p.r());
    let y = dual_y(p, mu, lambda, a, tau);
    let pdgap = (obj - y).abs() / (1.0 + obj.abs() + y.abs());

    let s = dual_slack(c, a, tau, mu, lambda, y);
    let s_norm = s.frob_norm();
    let mode = rd_mode.resolve(n);
    let (rd, s_min_eig, rd_converged) = match mode {
        RdMode::FullEig => {
            let evals = spectral::eigvalsh(n + 1, s.to_dense())?;
            let neg: f64 = evals.iter().filter(|&&l| l < 0.0).map(|l| l * l).sum();
            (neg.sqrt() / (1.0 + s_norm) + 0.0, evals[0], true)
        }
        _ => {
            let opts = rd_eigen_options(s_norm, eig);
            let (lam, _, ok) = spectral::smallest_eigenpair(&s, &opts)?;
            ((-lam).max(0.0) / (1.0 + s_norm) + 0.0, lam, ok)
        }
    };
    Ok(KktCertificate {
        mu: mu.to_vec(),
        lambda,
        y,
        rp,
        rd,
        pdgap,
        obj,
        rd_mode: mode,
        rd_converged,
        s_min_eig,
        s_norm,
    })
}

/// Recovers the regular duals and evaluates the residues in one call.
pub fn certify_regular(
    var: &Variety,
    p: &FactorPoint,
    c: &SymCsr,
    rd_mode: RdMode,
    eig: &EigenOptions,
) -> Result<KktCertificate, CertifyError> {
    let (mu, lambda) = recover_dual_regular(var, p, c)?;
    kkt_residues(var, p, c, &mu, lambda, rd_mode, eig)
}

/// `‖S·[e1ᵀ; R]‖_F / (1 + ‖S‖_F)`, the complementarity defect.
pub fn complementarity_defect(var: &Variety, p: &FactorPoint, c: &SymCsr, mu: &[f64], lambda: f64) -> f64 {
    let (a, tau) = (var.a(), var.tau());
    let y = dual_y(p, mu, lambda, a, tau);
    let s = dual_slack(c, a, tau, mu, lambda, y);
    let n = p.n();
    let mut total = 0.0;
    let mut col = vec![0.0; n + 1];
    for j in 0..p.rank() {
        col[0] = if j == 0 { 1.0 } else { 0.0 };
        for i in 0..n {
            col[i + 1] = p.r()[(i, j)];
        }
        let sc = s.matvec(&col).expect("dimensions match");
        total += dot(&sc, &sc);
    }
    total.sqrt() / (1.0 + s.frob_norm())
}

/// Euclidean norm of the residual of the first-order system
/// `−2CR − Σ μ_i ∇g_i − λ∇h`.
pub fn stationarity_residual(var: &Variety, p: &FactorPoint, c: &SymCsr, mu: &[f64], lambda: f64) -> f64 {
    let r = p.r();
    let cr = c.mul_dense(r);
    let mut w: Vec<f64> = p.at_r().iter().map(|x| 2.0 * x).collect();
    w[0] -= var.tau();
    let knap = var.kind() == VarietyKind::Knapsack;
    let mut total = 0.0;
    let mut row = vec![0.0; p.rank()];
    for i in 0..p.n() {
        for j in 0..p.rank() {
            let ni = 2.0 * r[(i, j)] - if j == 0 { 1.0 } else { 0.0 };
            row[j] = -2.0 * cr[(i, j)] - mu[i] * ni - if knap { lambda * var.a()[i] * w[j] } else { 0.0 };
        }
        total += dot(&row, &row);
    }
    total.sqrt()
}
