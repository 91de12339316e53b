//! Run records and the plain-text solve report.
//!
//! The report stores everything needed to re-check a certificate: the final
//! factor (row-major, 17 significant digits, so it parses back bit for bit),
//! the multipliers and the residue mode.

use std::fmt::Write as _;

use crate::certify::RdMode;
use crate::geometry::VarietyKind;
use crate::instance::{Family, Provenance, QkpInstance};
use crate::linalg::Mat;
use crate::solver::{Branch, SolveReport, SolveStatus};

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunRecord {
    pub instance: String,
    pub n: usize,
    pub p: Option<f64>,
    pub beta: Option<f64>,
    pub r: usize,
    pub obj: f64,
    pub rp: f64,
    pub rd: f64,
    pub pdgap: f64,
    pub time_s: f64,
    pub status: String,
    pub escapes: usize,
    pub relgap: Option<f64>,
    pub rounded_value: Option<f64>,
}

impl RunRecord {
    /// Column names, in serialization order.
    pub const HEADER: [&'static str; 14] = [
        "instance", "n", "p", "beta", "r", "obj", "rp", "rd", "pdgap", "time_s", "status", "escapes", "relgap", "rounded_value",
    ];

    pub fn new(instance: impl Into<String>, inst: &QkpInstance, rep: &SolveReport) -> Self {
        let (p, beta) = match &inst.meta.provenance {
            Provenance::Generated { family, p, beta, .. } => {
                let uses_p = !family.is_linear() && *family != Family::SparseQkp;
                (uses_p.then_some(*p), Some(*beta))
            }
            _ => (None, None),
        };
        let cert = rep.certificate.as_ref();
        Self {
            instance: instance.into(),
            n: inst.n(),
            p,
            beta,
            r: rep.rank,
            obj: cert.map_or(f64::NAN, |c| c.obj),
            rp: cert.map_or(f64::NAN, |c| c.rp),
            rd: cert.map_or(f64::NAN, |c| c.rd),
            pdgap: cert.map_or(f64::NAN, |c| c.pdgap),
            time_s: rep.wall_time_s,
            status: rep.status.to_string(),
            escapes: rep.stats.escapes,
            relgap: rep.rounded.as_ref().map(|r| r.relgap),
            rounded_value: rep.rounded.as_ref().map(|r| r.value),
        }
    }

    pub fn max_residue(&self) -> f64 {
        self.rp.max(self.rd).max(self.pdgap)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("report line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("report is missing `{0}`")]
    Missing(&'static str),
}

/// Contents of a report file. Rounded items are listed 1-based, as in the
/// instance formats.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFile {
    pub status: SolveStatus,
    pub variety: VarietyKind,
    pub branch: Branch,
    /// Capacity the weights were divided by before solving.
    pub scale: f64,
    pub obj: f64,
    pub rp: f64,
    pub rd: f64,
    pub pdgap: f64,
    pub rd_mode: RdMode,
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub r: Mat,
    pub rounded: Option<Vec<bool>>,
    pub rounded_value: Option<f64>,
    pub relgap: Option<f64>,
}

fn variety_name(v: VarietyKind) -> &'static str {
    match v {
        VarietyKind::Knapsack => "knapsack",
        VarietyKind::Oblique => "oblique",
    }
}

fn fmt_f(out: &mut String, key: &str, v: f64) {
    let _ = writeln!(out, "{key} {v:.16e}");
}

/// Renders the report. `scale` is the capacity of the original instance.
pub fn write_report(rep: &SolveReport, scale: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# qksdp solve report");
    let _ = writeln!(out, "status {}", rep.status);
    let _ = writeln!(out, "variety {}", variety_name(rep.variety));
    let _ = writeln!(out, "branch {}", rep.branch);
    let _ = writeln!(out, "n {}", rep.r.rows());
    let _ = writeln!(out, "r {}", rep.r.cols());
    fmt_f(&mut out, "scale", scale);
    if let Some(c) = &rep.certificate {
        fmt_f(&mut out, "obj", c.obj);
        fmt_f(&mut out, "rp", c.rp);
        fmt_f(&mut out, "rd", c.rd);
        fmt_f(&mut out, "pdgap", c.pdgap);
        let _ = writeln!(out, "rd_mode {}", c.rd_mode.name());
        fmt_f(&mut out, "lambda", c.lambda);
    }
    let _ = writeln!(out, "time_s {:.3}", rep.wall_time_s);
    let _ = writeln!(out, "iterations {}", rep.stats.iterations);
    let _ = writeln!(out, "escapes {}", rep.stats.escapes);
    if !rep.message.is_empty() {
        let _ = writeln!(out, "message {}", rep.message);
    }
    let x = rep.r.col(0);
    let (mn, mx) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let _ = writeln!(out, "# Re1 range [{mn:.6e}, {mx:.6e}], ‖R‖_F = {:.6e}", rep.r.frob_norm());
    if let Some(rs) = &rep.rounded {
        fmt_f(&mut out, "rounded_value", rs.value);
        fmt_f(&mut out, "relgap", rs.relgap);
        let items: Vec<String> = rs.x.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| (i + 1).to_string()).collect();
        let _ = writeln!(out, "rounded_items {}", items.join(" "));
    }
    if let Some(c) = &rep.certificate {
        let _ = writeln!(out, "[mu]");
        for m in &c.mu {
            let _ = writeln!(out, "{m:.16e}");
        }
    }
    let _ = writeln!(out, "[R]");
    for row in rep.r.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

pub fn parse_report(text: &str) -> Result<ReportFile, ReportError> {
    let err = |line: usize, message: String| ReportError::Parse { line: line + 1, message };
    let num = |line: usize, s: &str| -> Result<f64, ReportError> {
        s.trim().parse::<f64>().map_err(|e| err(line, format!("bad number `{s}`: {e}")))
    };
    let mut status = None;
    let mut variety = None;
    let mut branch = None;
    let mut n = None;
    let mut r = None;
    let mut scalars: std::collections::HashMap<String, f64> = Default::default();
    let mut rd_mode = None;
    let mut rounded = None;
    let mut mu = Vec::new();
    let mut rows = Vec::new();
    let mut section = "";
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[mu]" => "mu",
                "[R]" => "R",
                _ => return Err(err(ln, format!("unknown section {line}"))),
            };
            continue;
        }
        match section {
            "mu" => mu.push(num(ln, line)?),
            "R" => {
                let row = line.split_whitespace().map(|t| num(ln, t)).collect::<Result<Vec<_>, _>>()?;
                rows.push(row);
            }
            _ => {
                let (key, val) = line.split_once(' ').unwrap_or((line, ""));
                match key {
                    "status" => status = Some(val.parse::<SolveStatus>().map_err(|e| err(ln, e))?),
                    "variety" => {
                        variety = Some(match val {
                            "knapsack" => VarietyKind::Knapsack,
                            "oblique" => VarietyKind::Oblique,
                            _ => return Err(err(ln, format!("unknown variety `{val}`"))),
                        })
                    }
                    "branch" => {
                        branch = Some(match val {
                            "equality" => Branch::Equality,
                            "relaxed" => Branch::Relaxed,
                            "relaxed-then-equality" => Branch::RelaxedThenEquality,
                            _ => return Err(err(ln, format!("unknown branch `{val}`"))),
                        })
                    }
                    "n" => n = Some(val.parse::<usize>().map_err(|e| err(ln, e.to_string()))?),
                    "r" => r = Some(val.parse::<usize>().map_err(|e| err(ln, e.to_string()))?),
                    "rd_mode" => rd_mode = Some(val.parse::<RdMode>().map_err(|e| err(ln, e))?),
                    "rounded_items" => {
                        let idx = val
                            .split_whitespace()
                            .map(|t| t.parse::<usize>().map_err(|e| err(ln, e.to_string())))
                            .collect::<Result<Vec<_>, _>>()?;
                        rounded = Some(idx);
                    }
                    "scale" | "obj" | "rp" | "rd" | "pdgap" | "lambda" | "rounded_value" | "relgap" | "time_s" => {
                        scalars.insert(key.to_string(), num(ln, val)?);
                    }
                    "iterations" | "escapes" | "message" => {}
                    _ => return Err(err(ln, format!("unknown key `{key}`"))),
                }
            }
        }
    }
    let n = n.ok_or(ReportError::Missing("n"))?;
    let r = r.ok_or(ReportError::Missing("r"))?;
    if rows.len() != n || rows.iter().any(|row| row.len() != r) {
        return Err(ReportError::Parse {
            line: 0,
            message: format!("[R] section is not {n} × {r}"),
        });
    }
    if mu.len() != n {
        return Err(ReportError::Missing("mu"));
    }
    let get = |k: &'static str| scalars.get(k).copied().ok_or(ReportError::Missing(k));
    Ok(ReportFile {
        status: status.ok_or(ReportError::Missing("status"))?,
        variety: variety.ok_or(ReportError::Missing("variety"))?,
        branch: branch.ok_or(ReportError::Missing("branch"))?,
        scale: get("scale")?,
        obj: get("obj")?,
        rp: get("rp")?,
        rd: get("rd")?,
        pdgap: get("pdgap")?,
        rd_mode: rd_mode.ok_or(ReportError::Missing("rd_mode"))?,
        lambda: get("lambda")?,
        mu,
        r: Mat::from_row_major(n, r, rows.concat()),
        rounded: rounded.map(|idx| {
            let mut x = vec![false; n];
            idx.into_iter().filter(|&i| i >= 1 && i <= n).for_each(|i| x[i - 1] = true);
            x
        }),
        rounded_value: scalars.get("rounded_value").copied(),
        relgap: scalars.get("relgap").copied(),
    })
}
