//! Second-order test and escape at a non-regular point `v·e1ᵀ`.
//!
//! With `d = 2v − e` and `σ = ±1` the escape problem is
//!
//! ```text
//! min ⟨M, X⟩  s.t.  ⟨A, X⟩ = 0,  tr X = 1,  X ⪰ 0
//! M = 2·diag((Cv)∘d) − C,   A = aaᵀ − στ·diag(a∘d)
//! ```
//!
//! Its dual is `max_α φ(α)` with `φ(α) = λ_min(M − αA)`, a concave function
//! of one variable whose supergradient at `α` is `−uᵀAu` for a bottom
//! eigenvector `u`. The maximization is a bisection on the sign of the
//! supergradient. When the maximum is negative, the eigenvectors at the two
//! ends of the final bracket have `uᵀAu` of opposite signs and a convex
//! combination of their outer products is a rank-two primal solution with
//! negative objective.

use thiserror::Error;

use crate::geometry::{objective, FactorPoint, GeometryError, NonRegularPoint, Variety};
use crate::linalg::{dot, Mat};
use crate::sparse::SymCsr;
use crate::spectral::{self, EigenOptions, LowRankTerm, SpectralError, StructuredOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EscapeError {
    #[error("second-order test needs factor rank r ≥ 3, got {0}")]
    RankTooSmall(usize),
    #[error("eigensolver failed: {0}")]
    Eig(#[from] SpectralError),
    #[error("escape problem inconclusive: {0}")]
    Inconclusive(String),
    #[error("escape step failed: t fell below {t_min:e} without sufficient decrease (best f {best:.6e}, target {target:.6e})")]
    StepFailed { t_min: f64, best: f64, target: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Data of the escape problem at one non-regular point.
#[derive(Clone, Debug)]
pub struct EscapeProblem<'a> {
    c: &'a SymCsr,
    a: Vec<f64>,
    tau: f64,
    point: NonRegularPoint,
    /// `(Cv)∘d`
    cvd: Vec<f64>,
    r: usize,
}

impl<'a> EscapeProblem<'a> {
    pub fn new(c: &'a SymCsr, a: &[f64], tau: f64, point: NonRegularPoint, r: usize) -> Result<Self, EscapeError> {
        if r < 3 {
            return Err(EscapeError::RankTooSmall(r));
        }
        let cv = c.mul_vec(&point.indicator());
        let cvd = cv.iter().zip(&point.d).map(|(x, d)| x * d).collect();
        Ok(Self {
            c,
            a: a.to_vec(),
            tau,
            point,
            cvd,
            r,
        })
    }

    pub fn point(&self) -> &NonRegularPoint {
        &self.point
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// `M − αA = −C + diag(2(Cv)∘d + αστ·a∘d) − α·aaᵀ`
    pub fn operator(&self, alpha: f64) -> StructuredOperator<'a> {
        let st = self.point.sigma * self.tau;
        let diag = (0..self.n())
            .map(|i| 2.0 * self.cvd[i] + alpha * st * self.a[i] * self.point.d[i])
            .collect();
        let mut op = StructuredOperator::new(self.n()).with_sparse(self.c, -1.0, 0).with_diagonal(diag);
        if alpha != 0.0 {
            op = op.with_term(LowRankTerm::symmetric(-alpha, self.a.clone()));
        }
        op
    }

    /// `M` alone.
    pub fn m_operator(&self) -> StructuredOperator<'a> {
        self.operator(0.0)
    }

    /// `A` alone.
    pub fn a_operator(&self) -> StructuredOperator<'static> {
        let st = self.point.sigma * self.tau;
        let diag = (0..self.n()).map(|i| -st * self.a[i] * self.point.d[i]).collect();
        StructuredOperator::from_diagonal(diag).with_term(LowRankTerm::symmetric(1.0, self.a.clone()))
    }

    /// `uᵀAu`
    pub fn a_quad(&self, u: &[f64]) -> f64 {
        let au = dot(&self.a, u);
        let st = self.point.sigma * self.tau;
        let diag: f64 = (0..self.n()).map(|i| self.a[i] * self.point.d[i] * u[i] * u[i]).sum();
        au * au - st * diag
    }

    /// `⟨M, HHᵀ⟩` for `H` with any number of columns.
    pub fn m_inner(&self, h: &Mat) -> f64 {
        let ch = self.c.mul_dense(h);
        let rows = h.row_norms_sq();
        let diag: f64 = rows.iter().zip(&self.cvd).map(|(s, c)| 2.0 * c * s).sum();
        diag - ch.inner(h)
    }

    /// `⟨A, HHᵀ⟩`
    pub fn a_inner(&self, h: &Mat) -> f64 {
        let at_h = h.tr_mul_vec(&self.a);
        let st = self.point.sigma * self.tau;
        let rows = h.row_norms_sq();
        let diag: f64 = (0..self.n()).map(|i| self.a[i] * self.point.d[i] * rows[i]).sum();
        dot(&at_h, &at_h) - st * diag
    }
}

/// Settings of the escape solver.
#[derive(Clone, Debug)]
pub struct EscapeSettings {
    /// Certification tolerance on the dual value; `1e−8·(1 + ‖C‖_F)` when
    /// `None`.
    pub cert_tol: Option<f64>,
    pub max_bisect: usize,
    pub max_doublings: usize,
    pub eig: EigenOptions,
    /// Relative width under which bottom eigenvalues count as one cluster.
    pub cluster_tol: f64,
    /// Sufficient-decrease constant of the escape step.
    pub decrease_c: f64,
    pub t0: f64,
    pub t_min: f64,
}

impl Default for EscapeSettings {
    fn default() -> Self {
        Self {
            cert_tol: None,
            max_bisect: 200,
            max_doublings: 80,
            eig: EigenOptions::default(),
            cluster_tol: 1e-7,
            decrease_c: 0.25,
            t0: 1.0,
            t_min: 1e-8,
        }
    }
}

impl EscapeSettings {
    pub fn cert_tol_for(&self, c: &SymCsr) -> f64 {
        self.cert_tol.unwrap_or_else(|| 1e-8 * (1.0 + c.frob_norm_sq().sqrt()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EscapeKind {
    StationaryCertificate,
    EscapingDirection,
}

#[derive(Clone, Debug)]
pub struct EscapeOutcome {
    pub kind: EscapeKind,
    /// Best dual multiplier found.
    pub dual_alpha: f64,
    /// `φ(dual_alpha)`
    pub dual_value: f64,
    /// Upper bound on `max φ` from the final bracket.
    pub dual_upper: f64,
    /// `n × (r−1)` with `‖H‖ = 1`, `⟨A, HHᵀ⟩ = 0`, `⟨M, HHᵀ⟩ < 0`.
    pub direction: Option<Mat>,
    /// `⟨M, HHᵀ⟩` of the direction.
    pub m_value: f64,
    pub eig_solves: usize,
}

struct Sample {
    alpha: f64,
    phi: f64,
    /// `uᵀAu`; the supergradient is its negative
    aq: f64,
    u: Vec<f64>,
}

/// `φ(α) = λ_min(M − αA)` and a bottom eigenvector.
pub fn dual_value(prob: &EscapeProblem<'_>, alpha: f64, eig: &EigenOptions) -> Result<(f64, Vec<f64>), EscapeError> {
    let op = prob.operator(alpha);
    let opts = EigenOptions {
        floor: eig.floor.max(1e-3 * op.frob_norm()),
        ..eig.clone()
    };
    let (lam, u, _) = spectral::smallest_eigenpair(&op, &opts)?;
    Ok((lam, u))
}

fn sample(prob: &EscapeProblem<'_>, alpha: f64, eig: &EigenOptions, count: &mut usize) -> Result<Sample, EscapeError> {
    let (phi, u) = dual_value(prob, alpha, eig)?;
    *count += 1;
    Ok(Sample {
        alpha,
        phi,
        aq: prob.a_quad(&u),
        u,
    })
}

/// Decides second-order stationarity at the problem's point.
pub fn solve_escape_sdp(prob: &EscapeProblem<'_>, settings: &EscapeSettings) -> Result<EscapeOutcome, EscapeError> {
    let cert_tol = settings.cert_tol_for(prob.c);
    let eig = &settings.eig;
    let mut solves = 0usize;

    // bracket: lo with supergradient ≥ 0 (uᵀAu ≤ 0), hi with ≤ 0 (uᵀAu ≥ 0)
    let mut lo = sample(prob, -1.0, eig, &mut solves)?;
    let mut hi = sample(prob, 1.0, eig, &mut solves)?;
    let mut width = 2.0;
    let mut doublings = 0;
    // φ decreasing at lo: the maximizer lies further left
    while lo.aq > 0.0 || hi.aq < 0.0 {
        if doublings >= settings.max_doublings {
            return Err(EscapeError::Inconclusive(format!(
                "no bracket for the dual maximizer after {doublings} doublings (interval [{:.3e}, {:.3e}])",
                lo.alpha, hi.alpha
            )));
        }
        doublings += 1;
        width *= 2.0;
        if lo.aq > 0.0 {
            let s = sample(prob, lo.alpha - width, eig, &mut solves)?;
            hi = std::mem::replace(&mut lo, s);
        } else {
            let s = sample(prob, hi.alpha + width, eig, &mut solves)?;
            lo = std::mem::replace(&mut hi, s);
        }
    }
    let mut best = if lo.phi >= hi.phi { (lo.alpha, lo.phi) } else { (hi.alpha, hi.phi) };

    let upper_bound = |lo: &Sample, hi: &Sample| -> f64 {
        // tangent lines φ_lo − aq_lo(α − lo) and φ_hi − aq_hi(α − hi)
        let (g1, g2) = (-lo.aq, -hi.aq);
        if g1 - g2 <= 0.0 {
            return lo.phi.max(hi.phi);
        }
        let x = (hi.phi - lo.phi + g1 * lo.alpha - g2 * hi.alpha) / (g1 - g2);
        (lo.phi + g1 * (x - lo.alpha)).max(lo.phi.max(hi.phi))
    };
    let scale = 1.0 + best.1.abs().max(prob.c.frob_norm_sq().sqrt());
    let mut upper = upper_bound(&lo, &hi);
    for _ in 0..settings.max_bisect {
        if upper - best.1 <= 1e-13 * scale {
            break;
        }
        let mid = 0.5 * (lo.alpha + hi.alpha);
        if mid <= lo.alpha || mid >= hi.alpha {
            break;
        }
        let s = sample(prob, mid, eig, &mut solves)?;
        if s.phi > best.1 {
            best = (s.alpha, s.phi);
        }
        if s.aq <= 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        upper = upper_bound(&lo, &hi);
    }

    if best.1 >= -cert_tol {
        return Ok(EscapeOutcome {
            kind: EscapeKind::StationaryCertificate,
            dual_alpha: best.0,
            dual_value: best.1,
            dual_upper: upper,
            direction: None,
            m_value: best.1,
            eig_solves: solves,
        });
    }

    let r1 = prob.r - 1;
    if let Some((h, mval)) = straddle_direction(prob, &lo, &hi, r1) {
        if mval <= -cert_tol {
            return Ok(EscapeOutcome {
                kind: EscapeKind::EscapingDirection,
                dual_alpha: best.0,
                dual_value: best.1,
                dual_upper: upper,
                direction: Some(h),
                m_value: mval,
                eig_solves: solves,
            });
        }
    }
    // rotations inside the bottom eigenspace at the best multiplier
    let k = 4.min(prob.n());
    let op = prob.operator(best.0);
    let opts = EigenOptions {
        floor: eig.floor.max(1e-3 * op.frob_norm()),
        ..eig.clone()
    };
    let pairs = match spectral::smallest_eigenpairs_k(&op, k, &opts) {
        Ok(p) => p,
        Err(SpectralError::NotConverged { best, .. }) => *best,
        Err(e) => return Err(e.into()),
    };
    solves += 1;
    if let Some((h, mval)) = rotation_direction(prob, &pairs.vectors, r1) {
        if mval <= -cert_tol {
            return Ok(EscapeOutcome {
                kind: EscapeKind::EscapingDirection,
                dual_alpha: best.0,
                dual_value: best.1,
                dual_upper: upper,
                direction: Some(h),
                m_value: mval,
                eig_solves: solves,
            });
        }
    }
    Err(EscapeError::Inconclusive(format!(
        "dual value {:.3e} below -{cert_tol:.1e} but no feasible negative direction was found",
        best.1
    )))
}

/// `X = θ u_lo u_loᵀ + (1−θ) u_hi u_hiᵀ` with `⟨A, X⟩ = 0`.
fn straddle_direction(prob: &EscapeProblem<'_>, lo: &Sample, hi: &Sample, cols: usize) -> Option<(Mat, f64)> {
    let n = prob.n();
    let (alo, ahi) = (lo.aq, hi.aq);
    if !(alo <= 0.0 && ahi >= 0.0) {
        return None;
    }
    let theta = if ahi - alo > 0.0 { ahi / (ahi - alo) } else { 1.0 };
    let mut h = Mat::zeros(n, cols);
    let (s1, s2) = (theta.sqrt(), (1.0 - theta).max(0.0).sqrt());
    for i in 0..n {
        h[(i, 0)] = s1 * lo.u[i];
        h[(i, 1)] = s2 * hi.u[i];
    }
    normalize(prob, h)
}

/// Searches `cos θ·u_i + sin θ·u_j` with `⟨A, xxᵀ⟩ = 0` over pairs of
/// eigenvectors, keeping the most negative `⟨M, xxᵀ⟩`.
fn rotation_direction(prob: &EscapeProblem<'_>, vecs: &[Vec<f64>], cols: usize) -> Option<(Mat, f64)> {
    let n = prob.n();
    let a_op = prob.a_operator();
    let m_op = prob.m_operator();
    let av: Vec<Vec<f64>> = vecs.iter().map(|u| a_op.matvec(u).expect("dimension")).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut consider = |x: Vec<f64>| {
        let mx = dot(&x, &m_op.matvec(&x).expect("dimension"));
        if best.as_ref().is_none_or(|(_, b)| mx < *b) {
            best = Some((x, mx));
        }
    };
    for (i, ui) in vecs.iter().enumerate() {
        if dot(ui, &av[i]).abs() <= 1e-14 {
            consider(ui.clone());
        }
        for (j, uj) in vecs.iter().enumerate().skip(i + 1) {
            // A_jj t² + 2A_ij t + A_ii = 0 with t = tan θ
            let (aii, ajj, aij) = (dot(ui, &av[i]), dot(uj, &av[j]), dot(ui, &av[j]));
            let roots: Vec<f64> = if ajj.abs() < 1e-300 {
                if aij != 0.0 {
                    vec![-aii / (2.0 * aij)]
                } else {
                    Vec::new()
                }
            } else {
                let disc = aij * aij - aii * ajj;
                if disc < 0.0 {
                    Vec::new()
                } else {
                    let sq = disc.sqrt();
                    vec![(-aij + sq) / ajj, (-aij - sq) / ajj]
                }
            };
            for t in roots {
                let (c, s) = (1.0 / (1.0 + t * t).sqrt(), t / (1.0 + t * t).sqrt());
                consider((0..n).map(|k| c * ui[k] + s * uj[k]).collect());
            }
        }
    }
    let (x, _) = best?;
    let mut h = Mat::zeros(n, cols);
    for i in 0..n {
        h[(i, 0)] = x[i];
    }
    normalize(prob, h)
}

fn normalize(prob: &EscapeProblem<'_>, mut h: Mat) -> Option<(Mat, f64)> {
    let nrm = h.frob_norm();
    if !(nrm > 0.0) || !nrm.is_finite() {
        return None;
    }
    h.scale(1.0 / nrm);
    let m = prob.m_inner(&h);
    Some((h, m))
}

/// The curve `[v − t²·(diag(HHᵀ)∘d), tH]` before retraction.
pub fn escape_curve(pt: &NonRegularPoint, h: &Mat, t: f64) -> Mat {
    let n = h.rows();
    let r = h.cols() + 1;
    let rows = h.row_norms_sq();
    let mut out = Mat::zeros(n, r);
    for i in 0..n {
        let v = if pt.v[i] { 1.0 } else { 0.0 };
        out[(i, 0)] = v - t * t * rows[i] * pt.d[i];
        for j in 0..h.cols() {
            out[(i, j + 1)] = t * h[(i, j)];
        }
    }
    out
}

/// Result of an accepted escape step.
#[derive(Clone, Debug)]
pub struct EscapeStep {
    pub point: FactorPoint,
    pub f: f64,
    pub t: f64,
    /// Guaranteed decrease `c·t²·|⟨MH, H⟩|`.
    pub decrease: f64,
}

/// Moves along the escape curve from `v·e1ᵀ`, retracting onto the variety,
/// and halves `t` until `f < f(v·e1ᵀ) − c·t²·|⟨MH, H⟩|`.
pub fn escape_step(
    var: &Variety,
    c: &SymCsr,
    pt: &NonRegularPoint,
    h: &Mat,
    m_value: f64,
    settings: &EscapeSettings,
) -> Result<EscapeStep, EscapeError> {
    let n = pt.v.len();
    let f0 = objective(c, &pt.to_mat(h.cols() + 1));
    let mut t = settings.t0;
    let mut best = f64::INFINITY;
    while t >= settings.t_min {
        let curve = escape_curve(pt, h, t);
        if let Ok(p) = var.restore(curve) {
            debug_assert_eq!(p.n(), n);
            let f = objective(c, p.r());
            best = best.min(f);
            let decrease = settings.decrease_c * t * t * m_value.abs();
            if f < f0 - decrease {
                return Ok(EscapeStep { point: p, f, t, decrease });
            }
        }
        t *= 0.5;
    }
    Err(EscapeError::StepFailed {
        t_min: settings.t_min,
        best,
        target: f0,
    })
}
