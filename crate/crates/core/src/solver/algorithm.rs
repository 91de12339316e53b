//! Outer loop: gradient descent on the variety, interrupted near non-regular
//! points to either certify them or escape along a second-order direction.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::init::initial_point;
use super::rgd::{Rgd, RgdError};
use super::{Branch, SolveReport, SolveStats, SolveStatus, SolverConfig, SolverError};
use crate::certify::{certify_regular, kkt_residues, recover_dual_nonregular, KktCertificate};
use crate::escape::{escape_step, solve_escape_sdp, EscapeKind, EscapeProblem};
use crate::geometry::{in_delta_neighborhood, is_nonregular, round_point, FactorPoint, Variety, VarietyKind};
use crate::instance::QkpInstance;
use crate::linalg::Mat;
use crate::rounding::round_solution;

const MAX_STALLS: usize = 3;
const MAX_NUDGES: usize = 5;
const LOG_EVERY: usize = 100;

/// Solves the equality-constrained rank-`r` problem. The instance is scaled
/// to unit capacity internally; the returned factor and certificate refer to
/// the scaled data, the rounded solution to the original.
pub fn solve_sqkelr(inst: &QkpInstance, cfg: &SolverConfig, r0: Option<Mat>) -> Result<SolveReport, SolverError> {
    let start = Instant::now();
    let scaled = inst.scale();
    let mut report = solve_on_variety(&scaled, VarietyKind::Knapsack, cfg, r0, start)?;
    if cfg.round {
        report.rounded = Some(round_solution(&report.r, inst));
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Runs the outer loop on `kind` for an already scaled instance. Non-regular
/// handling is only active on the knapsack variety; the oblique variety has
/// no non-regular points.
pub fn solve_on_variety(
    inst: &QkpInstance,
    kind: VarietyKind,
    cfg: &SolverConfig,
    r0: Option<Mat>,
    start: Instant,
) -> Result<SolveReport, SolverError> {
    cfg.validate()?;
    let n = inst.n();
    let r = match &r0 {
        Some(m) => m.cols(),
        None => cfg.rank_for(inst),
    };
    if r < 3 {
        return Err(SolverError::InvalidConfig(format!("rank {r} is below 3")));
    }
    let mut var = Variety::new(kind, inst.a().to_vec(), inst.tau());
    var.feas_tol = cfg.feas_tol;
    var.max_gn = cfg.max_gn;
    let c = inst.c();
    let knapsack = kind == VarietyKind::Knapsack;
    let deadline = start + Duration::from_secs_f64(cfg.max_time_s.min(1e9));

    let p0 = match r0 {
        Some(m) => {
            if m.rows() != n {
                return Err(SolverError::BadInitialPoint {
                    expected: (n, r),
                    got: m.shape(),
                });
            }
            starting_point(&var, inst, m)?
        }
        None => initial_point(&var, r, cfg.seed)?,
    };

    let mut run = Run {
        var: &var,
        inst,
        cfg,
        r,
        stats: SolveStats::default(),
        start,
    };
    let mut rgd = Rgd::new(&var, c, p0, cfg.line_search.clone());
    let mut delta = cfg.delta0;
    let mut tolg = cfg.tolg0;
    if cfg.tolg_relative {
        tolg *= c.frob_norm_sq().sqrt().max(1.0);
    }
    let mut f_k = rgd.f();
    run.stats.outer_objectives.push(f_k);
    let mut visited: HashSet<Vec<bool>> = HashSet::new();
    let mut stalls = 0;
    let mut nudges = 0;
    let mut last_logged = usize::MAX;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);

    loop {
        run.stats.iterations = rgd.iterations();
        run.stats.max_violation = run.stats.max_violation.max(var.violation(rgd.point()));
        if Instant::now() >= deadline {
            return Ok(run.finish_regular(rgd.point().clone(), SolveStatus::TimeLimit, "time limit reached".into()));
        }
        if rgd.iterations() >= cfg.max_iters {
            // the gradient trigger may sit below the gradient's rounding floor
            if let Some(cert) = run.check(rgd.point()) {
                return Ok(run.finish(rgd.point().clone().into_mat(), SolveStatus::Converged, Some(cert), String::new()));
            }
            return Ok(run.finish_regular(
                rgd.point().clone(),
                SolveStatus::Inconclusive,
                format!("iteration cap {} reached", cfg.max_iters),
            ));
        }

        let singular = rgd.gradient().is_err();
        if knapsack && (singular || in_delta_neighborhood(rgd.point(), delta)) {
            let (v, dist) = round_point(rgd.point());
            if !is_nonregular(&v.v, inst) || visited.contains(&v.v) {
                delta *= 0.5;
                run.stats.radius_shrinks += 1;
                log::trace!("near regular binary point (dist {dist:.3e}); radius now {delta:.3e}");
                if !singular {
                    // fall through to the gradient step
                } else if nudges < MAX_NUDGES {
                    nudges += 1;
                    rgd.reset(nudge(&var, rgd.point(), &mut rng)?);
                    continue;
                } else {
                    return Ok(run.finish_regular(
                        rgd.point().clone(),
                        SolveStatus::Inconclusive,
                        "projection stays singular away from non-regular points".into(),
                    ));
                }
            } else {
                visited.insert(v.v.clone());
                run.stats.visited.push(v.v.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect());
                run.stats.outer_iterations += 1;
                if run.stats.outer_iterations > cfg.max_outer {
                    return Ok(run.finish_regular(
                        rgd.point().clone(),
                        SolveStatus::Inconclusive,
                        format!("outer iteration cap {} reached", cfg.max_outer),
                    ));
                }
                log::debug!(
                    "outer {}: non-regular point with {} items at distance {dist:.3e}",
                    run.stats.outer_iterations,
                    run.stats.visited.last().map_or(0, |s| s.len())
                );
                let prob = EscapeProblem::new(c, inst.a(), inst.tau(), v.clone(), r)?;
                let outcome = solve_escape_sdp(&prob, &cfg.escape);
                let failure = match outcome {
                    Ok(out) if out.kind == EscapeKind::StationaryCertificate => {
                        let pv = var.point(v.to_mat(r));
                        let (mu, lambda) = recover_dual_nonregular(&v, out.dual_alpha, c, inst.a(), inst.tau());
                        let cert = kkt_residues(&var, &pv, c, &mu, lambda, cfg.rd_mode, &cfg.eig)?;
                        run.stats.kkt_checks += 1;
                        return Ok(run.finish(
                            pv.into_mat(),
                            SolveStatus::NonRegularOptimal,
                            Some(cert),
                            format!("second-order stationary non-regular point (dual {:.3e})", out.dual_value),
                        ));
                    }
                    Ok(out) => {
                        let h = out.direction.expect("escaping outcome carries a direction");
                        match escape_step(&var, c, &v, &h, out.m_value, &cfg.escape) {
                            Ok(step) => {
                                run.stats.escapes += 1;
                                log::debug!("escaped with t = {:.3e} to f = {:.6e}", step.t, step.f);
                                if step.f < rgd.f() {
                                    rgd.reset(step.point);
                                }
                                None
                            }
                            Err(e) => Some(e.to_string()),
                        }
                    }
                    Err(e) => Some(e.to_string()),
                };
                if let Some(msg) = failure {
                    log::warn!("escape at non-regular point failed: {msg}");
                    if singular {
                        return Ok(run.finish_regular(rgd.point().clone(), SolveStatus::Inconclusive, msg));
                    }
                }
                delta *= 0.5;
                f_k = rgd.f();
                run.stats.outer_objectives.push(f_k);
                continue;
            }
        } else if singular {
            if nudges >= MAX_NUDGES {
                return Ok(run.finish_regular(
                    rgd.point().clone(),
                    SolveStatus::Inconclusive,
                    "singular projection".into(),
                ));
            }
            nudges += 1;
            rgd.reset(nudge(&var, rgd.point(), &mut rng)?);
            continue;
        }

        let normalized = rgd.gradient().map(|g| g.normalized).unwrap_or(f64::INFINITY);
        if rgd.iterations() % LOG_EVERY == 0 && rgd.iterations() != last_logged {
            last_logged = rgd.iterations();
            log::info!(
                "iter {:>6}  f {:.10e}  grad {:.3e}  delta {:.2e}  tolg {:.2e}  escapes {}",
                rgd.iterations(),
                rgd.f(),
                normalized,
                delta,
                tolg,
                run.stats.escapes
            );
        }
        if normalized < tolg {
            if let Some(cert) = run.check(rgd.point()) {
                return Ok(run.finish(rgd.point().clone().into_mat(), SolveStatus::Converged, Some(cert), String::new()));
            }
            tolg = tolg.min(normalized) / 10.0;
            log::debug!("KKT check failed at gradient {normalized:.3e}; threshold now {tolg:.1e}");
        }

        match rgd.step(f_k) {
            Ok(step) => {
                stalls = 0;
                run.stats.backtracks += step.backtracks;
            }
            Err(RgdError::LineSearchFailed { step, .. }) => {
                log::debug!("line search failed (step {step:.3e}, gradient {normalized:.3e})");
                if let Some(cert) = run.check(rgd.point()) {
                    return Ok(run.finish(rgd.point().clone().into_mat(), SolveStatus::Converged, Some(cert), String::new()));
                }
                stalls += 1;
                if stalls >= MAX_STALLS {
                    return Ok(run.finish_regular(
                        rgd.point().clone(),
                        SolveStatus::Inconclusive,
                        format!("line search stalled at gradient {normalized:.3e}"),
                    ));
                }
                let p = rgd.point().clone();
                rgd.reset(p);
            }
            Err(RgdError::NoGradient(_)) => unreachable!("gradient checked above"),
        }
    }
}

/// Retracts a supplied starting factor. If that fails next to a non-regular
/// point, the run starts at the point itself.
fn starting_point(var: &Variety, inst: &QkpInstance, m: Mat) -> Result<FactorPoint, SolverError> {
    match var.restore(m.clone()) {
        Ok(p) => Ok(p),
        Err(e) => {
            let r = m.cols();
            let (v, _) = round_point(&var.point(m));
            if var.kind() == VarietyKind::Knapsack && is_nonregular(&v.v, inst) {
                Ok(var.point(v.to_mat(r)))
            } else {
                Err(e.into())
            }
        }
    }
}

/// A tiny random displacement off a point where the projection is singular.
fn nudge(var: &Variety, p: &FactorPoint, rng: &mut ChaCha8Rng) -> Result<FactorPoint, SolverError> {
    let (n, r) = (p.n(), p.rank());
    let eps = 1e-7 * p.r().frob_norm().max(1.0) / ((n * r) as f64).sqrt();
    let noise = Mat::from_fn(n, r, |_, _| eps * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
    Ok(var.restore(p.r().add_scaled(1.0, &noise))?)
}

struct Run<'a> {
    var: &'a Variety,
    inst: &'a QkpInstance,
    cfg: &'a SolverConfig,
    r: usize,
    stats: SolveStats,
    start: Instant,
}

impl Run<'_> {
    /// Certificate at a regular point if it passes the KKT tolerance.
    fn check(&mut self, p: &FactorPoint) -> Option<KktCertificate> {
        self.stats.kkt_checks += 1;
        match certify_regular(self.var, p, self.inst.c(), self.cfg.rd_mode, &self.cfg.eig) {
            Ok(cert) => {
                log::debug!(
                    "KKT check: rp {:.2e} rd {:.2e} gap {:.2e}",
                    cert.rp,
                    cert.rd,
                    cert.pdgap
                );
                (cert.max_residue() < self.cfg.tol_kkt).then_some(cert)
            }
            Err(e) => {
                log::debug!("KKT check unavailable: {e}");
                None
            }
        }
    }

    fn finish_regular(&mut self, p: FactorPoint, status: SolveStatus, message: String) -> SolveReport {
        let cert = certify_regular(self.var, &p, self.inst.c(), self.cfg.rd_mode, &self.cfg.eig).ok();
        self.finish(p.into_mat(), status, cert, message)
    }

    fn finish(&mut self, r: Mat, status: SolveStatus, certificate: Option<KktCertificate>, message: String) -> SolveReport {
        log::info!("{:?} variety, {} iterations: {status}", self.var.kind(), self.stats.iterations);
        SolveReport {
            status,
            variety: self.var.kind(),
            branch: Branch::Equality,
            rank: self.r,
            r,
            certificate,
            stats: std::mem::take(&mut self.stats),
            wall_time_s: self.start.elapsed().as_secs_f64(),
            rounded: None,
            message,
        }
    }
}
