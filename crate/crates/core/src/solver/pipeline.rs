use std::time::Instant;

use super::algorithm::solve_on_variety;
use super::{Branch, SolveReport, SolverConfig, SolverError};
use crate::geometry::{Variety, VarietyKind};
use crate::instance::QkpInstance;
use crate::linalg::Mat;
use crate::rounding::round_solution;

/// Solves the relaxation of `inst`.
///
/// Nonnegative profits go straight to the equality-constrained problem.
/// Otherwise the capacity constraint is first dropped; if the solution of
/// that problem happens to satisfy it, it is optimal, and if not the
/// equality-constrained problem is solved instead.
pub fn solve_pipeline(inst: &QkpInstance, cfg: &SolverConfig, r0: Option<Mat>) -> Result<SolveReport, SolverError> {
    let start = Instant::now();
    let scaled = inst.scale();
    let mut report = if inst.c().is_nonnegative() {
        solve_on_variety(&scaled, VarietyKind::Knapsack, cfg, r0, start)?
    } else {
        let relaxed = solve_on_variety(&scaled, VarietyKind::Oblique, cfg, r0.clone(), start)?;
        let var = Variety::knapsack(&scaled);
        let p = var.point(relaxed.r.clone());
        let (_, h) = var.residual(&p);
        let (_, tol_h) = var.tolerances(&p);
        log::info!("relaxed problem: capacity residual {h:.3e} (tolerance {tol_h:.1e})");
        if h <= tol_h {
            SolveReport {
                branch: Branch::Relaxed,
                ..relaxed
            }
        } else {
            let mut eq = solve_on_variety(&scaled, VarietyKind::Knapsack, cfg, r0, start)?;
            eq.branch = Branch::RelaxedThenEquality;
            eq.stats.iterations += relaxed.stats.iterations;
            eq.stats.kkt_checks += relaxed.stats.kkt_checks;
            eq
        }
    };
    if cfg.round {
        report.rounded = Some(round_solution(&report.r, inst));
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}
