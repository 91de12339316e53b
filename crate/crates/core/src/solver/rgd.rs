//! Riemannian gradient descent with Barzilai–Borwein steps and a
//! nonmonotone Armijo line search.

use std::collections::VecDeque;

use crate::geometry::{objective_and_gradient, FactorPoint, GeometryError, Gradient, Variety};
use crate::linalg::Mat;
use crate::sparse::SymCsr;

#[derive(Clone, Debug)]
pub struct LineSearch {
    pub armijo_c: f64,
    pub rho: f64,
    /// Number of past objective values in the nonmonotone reference.
    pub memory: usize,
    pub max_backtracks: usize,
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            armijo_c: 1e-4,
            rho: 0.5,
            memory: 10,
            max_backtracks: 30,
            min_step: 1e-10,
            max_step: 1e10,
        }
    }
}

impl LineSearch {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err("armijo constant must lie in (0, 1)".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err("backtracking factor must lie in (0, 1)".into());
        }
        if self.memory == 0 || self.max_backtracks == 0 {
            return Err("line search memory and backtracks must be positive".into());
        }
        if !(self.min_step > 0.0 && self.min_step <= self.max_step) {
            return Err("step bounds must satisfy 0 < min ≤ max".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RgdError {
    #[error("line search failed after {backtracks} backtracks (last step {step:e})")]
    LineSearchFailed { step: f64, backtracks: usize },
    #[error("gradient unavailable: {0}")]
    NoGradient(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug)]
pub struct RgdStep {
    pub step: f64,
    pub backtracks: usize,
    pub f: f64,
}

pub struct Rgd<'a> {
    var: &'a Variety,
    c: &'a SymCsr,
    ls: LineSearch,
    p: FactorPoint,
    f: f64,
    grad: Result<Gradient, GeometryError>,
    /// Previous point and gradient, for the BB quotients.
    prev: Option<(Mat, Mat)>,
    hist: VecDeque<f64>,
    alpha: Option<f64>,
    iters: usize,
}

impl<'a> Rgd<'a> {
    pub fn new(var: &'a Variety, c: &'a SymCsr, p: FactorPoint, ls: LineSearch) -> Self {
        let (f, egrad) = objective_and_gradient(c, p.r());
        let grad = var.gradient_from_euclidean(&p, &egrad);
        let mut hist = VecDeque::with_capacity(ls.memory);
        hist.push_back(f);
        Self {
            var,
            c,
            ls,
            p,
            f,
            grad,
            prev: None,
            hist,
            alpha: None,
            iters: 0,
        }
    }

    /// Restarts from `p`, forgetting the step history.
    pub fn reset(&mut self, p: FactorPoint) {
        let iters = self.iters;
        *self = Self::new(self.var, self.c, p, self.ls.clone());
        self.iters = iters;
    }

    pub fn point(&self) -> &FactorPoint {
        &self.p
    }

    pub fn f(&self) -> f64 {
        self.f
    }

    pub fn gradient(&self) -> Result<&Gradient, &GeometryError> {
        self.grad.as_ref()
    }

    pub fn iterations(&self) -> usize {
        self.iters
    }

    fn safe_step(&self, g: &Gradient) -> f64 {
        (0.1 * self.p.r().frob_norm().max(1.0) / g.norm).clamp(self.ls.min_step, self.ls.max_step)
    }

    fn bb_step(&self, g: &Gradient) -> Option<f64> {
        let (r_prev, g_prev) = self.prev.as_ref()?;
        // plain differences in the ambient space
        let s = self.p.r().sub(r_prev);
        let y = g.grad.sub(g_prev);
        let sy = s.inner(&y);
        if !(sy > 0.0) {
            return None;
        }
        let step = if self.iters % 2 == 1 {
            s.frob_norm_sq() / sy
        } else {
            sy / y.frob_norm_sq()
        };
        step.is_finite().then(|| step.clamp(self.ls.min_step, self.ls.max_step))
    }

    /// One iteration. The accepted objective never exceeds `f_bound`
    /// (nor the maximum of the recent history).
    pub fn step(&mut self, f_bound: f64) -> Result<RgdStep, RgdError> {
        let g = match &self.grad {
            Ok(g) => g.clone(),
            Err(e) => return Err(RgdError::NoGradient(e.clone())),
        };
        let safe = self.safe_step(&g);
        let first = self.bb_step(&g).or(self.alpha).unwrap_or(safe);
        let hist_max = self.hist.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let reference = hist_max.min(f_bound);
        let gsq = g.norm * g.norm;
        let dir = g.grad.scaled(-1.0);

        let mut total_backtracks = 0;
        let mut last = first;
        // a BB step that fails outright is retried once from the safe step
        let starts: &[f64] = if first > safe { &[first, safe] } else { &[first] };
        for &start in starts {
            let mut t = start;
            for k in 0..=self.ls.max_backtracks {
                last = t;
                if let Ok(trial) = self.var.retract(&self.p, &dir, t) {
                    let (f, egrad) = objective_and_gradient(self.c, trial.r());
                    if f <= reference - self.ls.armijo_c * t * gsq {
                        log::trace!(
                            "rgd {}: start {start:.3e} safe {safe:.3e} accepted {t:.3e} f {f:.10e} ref {reference:.10e} g {:.3e}",
                            self.iters,
                            g.norm
                        );
                        self.accept(trial, f, &egrad, g, t);
                        return Ok(RgdStep {
                            step: t,
                            backtracks: total_backtracks + k,
                            f,
                        });
                    }
                }
                t *= self.ls.rho;
            }
            total_backtracks += self.ls.max_backtracks;
        }
        Err(RgdError::LineSearchFailed {
            step: last,
            backtracks: total_backtracks,
        })
    }

    fn accept(&mut self, p: FactorPoint, f: f64, egrad: &Mat, g_old: Gradient, t: f64) {
        let r_old = std::mem::replace(&mut self.p, p);
        self.prev = Some((r_old.into_mat(), g_old.grad));
        self.f = f;
        self.grad = self.var.gradient_from_euclidean(&self.p, egrad);
        self.alpha = Some(t);
        if self.hist.len() == self.ls.memory {
            self.hist.pop_front();
        }
        self.hist.push_back(f);
        self.iters += 1;
    }
}
