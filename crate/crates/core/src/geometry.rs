//! The feasible variety of the factorized problem and its local geometry.
//!
//! A point is an `n × r` matrix `R` (the pinned first row `e1ᵀ` of the full
//! factor is implicit). The knapsack variety is cut out by
//!
//! ```text
//! g_i(R) = ‖R_i‖² − R_i1 = 0          (i = 1..n)
//! h(R)   = ‖aᵀR‖² − τ·aᵀRe1 = 0
//! ```
//!
//! and the oblique variety keeps only the `g_i`. The gradient of `g_i` is the
//! matrix with row `i` equal to `n_i = 2R_i − e1` and zeros elsewhere, the
//! gradient of `h` is `a·wᵀ` with `w = 2Rᵀa − τe1`. The Gram matrix of these
//! `n + 1` gradients is an arrow matrix, so projections and Gauss–Newton steps
//! cost `O(nr)`.

use thiserror::Error;

use crate::instance::QkpInstance;
use crate::linalg::{axpy, dot, Mat};
use crate::sparse::SymCsr;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    /// The constraint gradients are (numerically) linearly dependent; the
    /// point is at or next to a non-regular point.
    #[error("constraint Gram matrix is singular (Schur pivot {pivot:.3e})")]
    SingularProjection { pivot: f64 },
    #[error("Gauss-Newton retraction stalled after {iterations} iterations (residual {residual:.3e})")]
    RetractionDiverged { residual: f64, iterations: usize },
    #[error("matrix has shape {got:?}, expected {expected:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarietyKind {
    /// `diag(RRᵀ) = Re1` and `‖aᵀR‖² = τ·aᵀRe1`.
    Knapsack,
    /// `diag(RRᵀ) = Re1` only.
    Oblique,
}

/// A factor matrix with the products every geometric operation needs.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPoint {
    r: Mat,
    at_r: Vec<f64>,
    row_sq: Vec<f64>,
}

impl FactorPoint {
    #[inline]
    pub fn r(&self) -> &Mat {
        &self.r
    }

    pub fn into_mat(self) -> Mat {
        self.r
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.r.rows()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.r.cols()
    }

    /// `Rᵀa`
    #[inline]
    pub fn at_r(&self) -> &[f64] {
        &self.at_r
    }

    /// `diag(RRᵀ)`
    #[inline]
    pub fn row_sq(&self) -> &[f64] {
        &self.row_sq
    }

    /// `Re1`, the relaxed item indicator `x`.
    pub fn first_col(&self) -> Vec<f64> {
        self.r.col(0)
    }
}

/// Result of projecting a matrix onto the tangent space.
#[derive(Clone, Debug)]
pub struct Projection {
    pub h: Mat,
    /// Multipliers of the row-norm constraints.
    pub mu: Vec<f64>,
    /// Multiplier of the knapsack constraint; 0 on the oblique variety.
    pub lambda: f64,
}

/// Riemannian gradient of `f(R) = −⟨C, RRᵀ⟩` together with the multipliers
/// of the Euclidean gradient's normal component.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub grad: Mat,
    pub norm: f64,
    /// `‖grad‖ / max(1, ‖R‖)`
    pub normalized: f64,
    pub mu: Vec<f64>,
    pub lambda: f64,
}

/// A candidate non-regular point `v·e1ᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct NonRegularPoint {
    pub v: Vec<bool>,
    /// `2v − e`
    pub d: Vec<f64>,
    /// `+1` for `v ≠ 0`, `−1` for the zero point.
    pub sigma: f64,
}

impl NonRegularPoint {
    pub fn new(v: Vec<bool>) -> Self {
        let d = v.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        let sigma = if v.iter().any(|&b| b) { 1.0 } else { -1.0 };
        Self { v, d, sigma }
    }

    pub fn indicator(&self) -> Vec<f64> {
        self.v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.sigma < 0.0
    }

    /// `v·e1ᵀ` with `r` columns.
    pub fn to_mat(&self, r: usize) -> Mat {
        Mat::outer_e1(&self.indicator(), r)
    }
}

/// Constraint set and numerical settings shared by all points of a solve.
#[derive(Clone, Debug)]
pub struct Variety {
    kind: VarietyKind,
    a: Vec<f64>,
    tau: f64,
    a_norm_sq: f64,
    a_l1: f64,
    /// Relative feasibility tolerance.
    pub feas_tol: f64,
    /// Gauss–Newton iteration cap of the retraction.
    pub max_gn: usize,
    /// Relative Schur pivot below which the Gram matrix counts as singular.
    pub pivot_tol: f64,
}

impl Variety {
    pub fn new(kind: VarietyKind, a: Vec<f64>, tau: f64) -> Self {
        let a_norm_sq = dot(&a, &a);
        let a_l1 = a.iter().map(|x| x.abs()).sum();
        Self {
            kind,
            a,
            tau,
            a_norm_sq,
            a_l1,
            feas_tol: 1e-12,
            max_gn: 20,
            pivot_tol: 1e-14,
        }
    }

    pub fn knapsack(inst: &QkpInstance) -> Self {
        Self::new(VarietyKind::Knapsack, inst.a().to_vec(), inst.tau())
    }

    pub fn oblique(inst: &QkpInstance) -> Self {
        Self::new(VarietyKind::Oblique, inst.a().to_vec(), inst.tau())
    }

    #[inline]
    pub fn kind(&self) -> VarietyKind {
        self.kind
    }

    #[inline]
    pub fn a(&self) -> &[f64] {
        &self.a
    }

    #[inline]
    pub fn tau(&self) -> f64 {
        self.tau
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.a.len()
    }

    fn knapsack_active(&self) -> bool {
        self.kind == VarietyKind::Knapsack
    }

    /// Wraps `r`, computing the cached products. Panics if the row count
    /// does not match the instance.
    pub fn point(&self, r: Mat) -> FactorPoint {
        assert_eq!(r.rows(), self.n(), "factor has the wrong number of rows");
        let at_r = r.tr_mul_vec(&self.a);
        let row_sq = r.row_norms_sq();
        FactorPoint { r, at_r, row_sq }
    }

    /// `(diag(RRᵀ) − Re1, ‖aᵀR‖² − τ·aᵀRe1)`; the scalar is 0 on the oblique
    /// variety.
    pub fn residual(&self, p: &FactorPoint) -> (Vec<f64>, f64) {
        let g = p.row_sq.iter().zip(p.r.row_iter()).map(|(s, row)| s - row[0]).collect();
        let h = if self.knapsack_active() {
            dot(&p.at_r, &p.at_r) - self.tau * p.at_r[0]
        } else {
            0.0
        };
        (g, h)
    }

    /// Absolute tolerances `(tol_g, tol_h)` at `p`. The knapsack residual is
    /// a sum over all items, so its tolerance also scales with `τ‖a‖₁`.
    pub fn tolerances(&self, p: &FactorPoint) -> (f64, f64) {
        let base = self.feas_tol * p.r.frob_norm_sq().max(1.0);
        (base, base * (self.tau * self.a_l1).max(1.0))
    }

    pub fn is_feasible(&self, p: &FactorPoint) -> bool {
        let (g, h) = self.residual(p);
        let (tol_g, tol_h) = self.tolerances(p);
        g.iter().all(|x| x.abs() <= tol_g) && h.abs() <= tol_h
    }

    /// Largest residual relative to its tolerance; feasible iff `≤ 1`.
    pub fn violation(&self, p: &FactorPoint) -> f64 {
        let (g, h) = self.residual(p);
        let (tol_g, tol_h) = self.tolerances(p);
        let gi = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        (gi / tol_g).max(h.abs() / tol_h)
    }

    /// Tangent-space defect of `h` at `p`: `(2·diag(RHᵀ) − He1, 2⟨aaᵀR, H⟩ − τ·aᵀHe1)`.
    pub fn tangent_defect(&self, p: &FactorPoint, h: &Mat) -> (Vec<f64>, f64) {
        let rows = p
            .r
            .row_iter()
            .zip(h.row_iter())
            .map(|(ri, hi)| 2.0 * dot(ri, hi) - hi[0])
            .collect();
        let k = if self.knapsack_active() {
            let at_h = h.tr_mul_vec(&self.a);
            2.0 * dot(&p.at_r, &at_h) - self.tau * at_h[0]
        } else {
            0.0
        };
        (rows, k)
    }

    fn arrow<'p>(&self, p: &'p FactorPoint) -> Result<Arrow<'p>, GeometryError> {
        let r = p.rank();
        // n_i = 2R_i − e1 is never formed explicitly
        let diag: Vec<f64> = p
            .r
            .row_iter()
            .map(|row| {
                let x0 = 2.0 * row[0] - 1.0;
                x0 * x0 + 4.0 * row[1..].iter().map(|x| x * x).sum::<f64>()
            })
            .collect();
        if let Some(&bad) = diag.iter().find(|&&d| !(d > 0.0)) {
            return Err(GeometryError::SingularProjection { pivot: bad });
        }
        if !self.knapsack_active() {
            return Ok(Arrow {
                r: &p.r,
                diag,
                w: Vec::new(),
                nw: Vec::new(),
                schur: 0.0,
            });
        }
        let mut w: Vec<f64> = p.at_r.iter().map(|x| 2.0 * x).collect();
        w[0] -= self.tau;
        let ww = dot(&w, &w);
        let corner = self.a_norm_sq * ww;
        let nw: Vec<f64> = p.r.row_iter().map(|ri| 2.0 * dot(ri, &w) - w[0]).collect();
        // s = c − Σ b_i²/D_i written as a sum of nonnegative terms, which
        // keeps the pivot accurate when it is tiny
        let mut schur = 0.0;
        for (i, ri) in p.r.row_iter().enumerate() {
            let ai = self.a[i];
            if ai == 0.0 {
                continue;
            }
            let coef = nw[i] / diag[i];
            let mut sq = 0.0;
            for k in 0..r {
                let nik = if k == 0 { 2.0 * ri[0] - 1.0 } else { 2.0 * ri[k] };
                let d = w[k] - coef * nik;
                sq += d * d;
            }
            schur += ai * ai * sq;
        }
        if !(corner > 0.0) || schur <= self.pivot_tol * corner {
            return Err(GeometryError::SingularProjection {
                pivot: if corner > 0.0 { schur / corner } else { 0.0 },
            });
        }
        Ok(Arrow {
            r: &p.r,
            diag,
            w,
            nw,
            schur,
        })
    }

    /// Orthogonal projection of `g` onto the tangent space at `p`.
    pub fn project(&self, p: &FactorPoint, g: &Mat) -> Result<Projection, GeometryError> {
        check_shape(p, g)?;
        let arrow = self.arrow(p)?;
        let rhs: Vec<f64> = p
            .r
            .row_iter()
            .zip(g.row_iter())
            .map(|(ri, gi)| 2.0 * dot(ri, gi) - gi[0])
            .collect();
        let rhs_k = if self.knapsack_active() {
            dot(&arrow.w, &g.tr_mul_vec(&self.a))
        } else {
            0.0
        };
        let (mu, lambda) = arrow.solve(&self.a, &rhs, rhs_k);
        let h = arrow.combine(&self.a, g, &mu, lambda, -1.0);
        Ok(Projection { h, mu, lambda })
    }

    /// Riemannian gradient of `−⟨C, RRᵀ⟩`.
    pub fn riemannian_gradient(&self, p: &FactorPoint, c: &SymCsr) -> Result<Gradient, GeometryError> {
        let (_, egrad) = objective_and_gradient(c, p.r());
        self.gradient_from_euclidean(p, &egrad)
    }

    pub fn gradient_from_euclidean(&self, p: &FactorPoint, egrad: &Mat) -> Result<Gradient, GeometryError> {
        let proj = self.project(p, egrad)?;
        let norm = proj.h.frob_norm();
        Ok(Gradient {
            normalized: norm / p.r.frob_norm().max(1.0),
            norm,
            grad: proj.h,
            mu: proj.mu,
            lambda: proj.lambda,
        })
    }

    /// Newton retraction of `R + tH`.
    pub fn retract(&self, p: &FactorPoint, h: &Mat, t: f64) -> Result<FactorPoint, GeometryError> {
        check_shape(p, h)?;
        if t == 0.0 {
            return Ok(p.clone());
        }
        self.restore(p.r.add_scaled(t, h))
    }

    /// Gauss–Newton on the constraint system from an arbitrary `r`: each step
    /// is the minimum-norm solution of the linearized equations, halved until
    /// the squared residual decreases.
    pub fn restore(&self, r: Mat) -> Result<FactorPoint, GeometryError> {
        let mut p = self.point(r);
        let mut merit = self.merit(&p);
        for iter in 0..=self.max_gn {
            if self.is_feasible(&p) {
                return Ok(p);
            }
            if iter == self.max_gn {
                break;
            }
            let (g, h) = self.residual(&p);
            let arrow = self.arrow(&p).map_err(|_| GeometryError::RetractionDiverged {
                residual: merit.sqrt(),
                iterations: iter,
            })?;
            let (nu, nu_k) = arrow.solve(&self.a, &g, h);
            let step = arrow.combine(&self.a, &Mat::zeros(p.n(), p.rank()), &nu, nu_k, 1.0);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..12 {
                let trial = self.point(p.r.add_scaled(-alpha, &step));
                let m = self.merit(&trial);
                if m < merit {
                    accepted = Some((trial, m));
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((trial, m)) => {
                    p = trial;
                    merit = m;
                }
                None => {
                    return Err(GeometryError::RetractionDiverged {
                        residual: merit.sqrt(),
                        iterations: iter,
                    })
                }
            }
        }
        Err(GeometryError::RetractionDiverged {
            residual: merit.sqrt(),
            iterations: self.max_gn,
        })
    }

    fn merit(&self, p: &FactorPoint) -> f64 {
        let (g, h) = self.residual(p);
        dot(&g, &g) + h * h
    }
}

fn check_shape(p: &FactorPoint, m: &Mat) -> Result<(), GeometryError> {
    if p.r.shape() != m.shape() {
        return Err(GeometryError::DimensionMismatch {
            expected: p.r.shape(),
            got: m.shape(),
        });
    }
    Ok(())
}

/// Gram matrix of the constraint gradients:
/// `[diag(D) b; bᵀ c]` with `D_i = ‖n_i‖²`, `b_i = a_i⟨n_i, w⟩`, `c = ‖a‖²‖w‖²`.
struct Arrow<'p> {
    r: &'p Mat,
    diag: Vec<f64>,
    w: Vec<f64>,
    nw: Vec<f64>,
    schur: f64,
}

impl Arrow<'_> {
    fn solve(&self, a: &[f64], rhs: &[f64], rhs_k: f64) -> (Vec<f64>, f64) {
        if self.w.is_empty() {
            let mu = rhs.iter().zip(&self.diag).map(|(p, d)| p / d).collect();
            return (mu, 0.0);
        }
        let mut q = rhs_k;
        for i in 0..rhs.len() {
            q -= a[i] * self.nw[i] * rhs[i] / self.diag[i];
        }
        let lambda = q / self.schur;
        let mu = (0..rhs.len())
            .map(|i| (rhs[i] - a[i] * self.nw[i] * lambda) / self.diag[i])
            .collect();
        (mu, lambda)
    }

    /// `base + sign·(Σ μ_i e_i n_iᵀ + λ a wᵀ)`
    fn combine(&self, a: &[f64], base: &Mat, mu: &[f64], lambda: f64, sign: f64) -> Mat {
        let mut out = base.clone();
        let knap = !self.w.is_empty();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            axpy(2.0 * sign * mu[i], self.r.row(i), row);
            row[0] -= sign * mu[i];
            if knap {
                axpy(sign * lambda * a[i], &self.w, row);
            }
        }
        out
    }
}

/// `(f(R), ∇f(R)) = (−⟨CR, R⟩, −2CR)`.
pub fn objective_and_gradient(c: &SymCsr, r: &Mat) -> (f64, Mat) {
    let cr = c.mul_dense(r);
    let f = -cr.inner(r);
    (f, cr.scaled(-2.0))
}

pub fn objective(c: &SymCsr, r: &Mat) -> f64 {
    -c.mul_dense(r).inner(r)
}

/// `Round(R)`: `v_i = 1` iff `(Re1)_i ≥ 0.5`, with the distance `‖R − v·e1ᵀ‖`.
pub fn round_point(p: &FactorPoint) -> (NonRegularPoint, f64) {
    let mut v = Vec::with_capacity(p.n());
    let mut dist_sq = 0.0;
    for row in p.r.row_iter() {
        let on = row[0] >= 0.5;
        v.push(on);
        let x0 = row[0] - if on { 1.0 } else { 0.0 };
        dist_sq += x0 * x0 + row[1..].iter().map(|x| x * x).sum::<f64>();
    }
    (NonRegularPoint::new(v), dist_sq.sqrt())
}

/// `‖R − Round(R)·e1ᵀ‖ < δ`
pub fn in_delta_neighborhood(p: &FactorPoint, delta: f64) -> bool {
    round_point(p).1 < delta
}

/// `v = 0` or `aᵀv = τ`; exact on integral data, relative tolerance `1e−9`
/// otherwise.
pub fn is_nonregular(v: &[bool], inst: &QkpInstance) -> bool {
    if !v.iter().any(|&b| b) {
        return true;
    }
    let w = inst.weight_of(v);
    if inst.is_integral() {
        w == inst.tau()
    } else {
        (w - inst.tau()).abs() <= 1e-9 * inst.tau()
    }
}
