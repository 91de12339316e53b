use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use qksdp::certify::{kkt_residues, RdMode};
use qksdp::escape::{solve_escape_sdp, EscapeProblem};
use qksdp::geometry::{round_point, NonRegularPoint, Variety, VarietyKind};
use qksdp::instance::{generate as generate_instance, read_instance, write_instance, Family, GeneratorSpec, QkpInstance};
use qksdp::oracle::{escape_dual_grid, exhaustive_qkp};
use qksdp::report::{parse_report, write_report, RunRecord};
use qksdp::solver::{solve_pipeline, SolveStatus, SolverConfig};

use crate::{BenchArgs, CertifyArgs, GenFlags, GenerateArgs, InputFlags, OracleArgs, SolveArgs, SolverFlags};

/// Residues recomputed from a report must agree with the stored ones to this.
const RECERTIFY_TOL: f64 = 1e-12;
/// Agreement between the escape dual and the grid oracle.
const ESCAPE_GRID_TOL: f64 = 1e-6;
/// Slack in the sandwich `rounded ≤ OPT ≤ bound`, relative to `1 + |OPT|`.
const SANDWICH_TOL: f64 = 1e-6;

fn spec_of(family: Family, g: &GenFlags) -> GeneratorSpec {
    let mut spec = GeneratorSpec::new(family, g.n, g.p, g.beta, g.seed);
    spec.integer_capacity = g.integer_capacity;
    spec
}

fn generated_id(family: Family, n: usize, p: f64, beta: f64, seed: u64) -> String {
    if family.is_linear() {
        format!("{}-n{n}-b{beta}-s{seed}", family.name())
    } else {
        format!("{}-n{n}-p{p}-b{beta}-s{seed}", family.name())
    }
}

fn load(input: &InputFlags) -> Result<(String, QkpInstance)> {
    match (&input.input, input.generate) {
        (Some(path), _) => {
            let inst = read_instance(path, input.format).with_context(|| format!("reading {}", path.display()))?;
            let id = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((id, inst))
        }
        (None, Some(family)) => {
            let g = &input.gen;
            let inst = generate_instance(&spec_of(family, g)).context("generating instance")?;
            Ok((generated_id(family, g.n, g.p, g.beta, g.seed), inst))
        }
        (None, None) => bail!("either --in FILE or --generate FAMILY is required"),
    }
}

fn config(flags: &SolverFlags, seed: u64) -> Result<SolverConfig> {
    let cfg = SolverConfig {
        rank: flags.r,
        rank_mode: flags.rank_mode,
        tol_kkt: flags.tol,
        delta0: flags.delta0,
        max_time_s: flags.max_time,
        rd_mode: flags.rd_mode,
        round: flags.round,
        seed,
        ..SolverConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn success(status: SolveStatus) -> bool {
    matches!(status, SolveStatus::Converged | SolveStatus::NonRegularOptimal)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let exists = path.metadata().map(|m| m.len() > 0).unwrap_or(false);
    let file = File::options()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    Ok(csv::WriterBuilder::new().has_headers(!exists).from_writer(file))
}

pub fn generate(args: GenerateArgs) -> Result<ExitCode> {
    let inst = generate_instance(&spec_of(args.family, &args.gen)).context("generating instance")?;
    write_instance(&inst, &args.out, args.format).with_context(|| format!("writing {}", args.out.display()))?;
    log::info!("wrote {} items to {}", inst.n(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn solve(args: SolveArgs) -> Result<ExitCode> {
    let (id, inst) = load(&args.input)?;
    let cfg = config(&args.solver, args.input.gen.seed)?;
    let rep = solve_pipeline(&inst, &cfg, None)?;
    let record = RunRecord::new(id, &inst, &rep);
    println!(
        "{} n={} r={} status={} obj={:.10e} rp={:.3e} rd={:.3e} pdgap={:.3e} time={:.2}s escapes={}",
        record.instance, record.n, record.r, record.status, record.obj, record.rp, record.rd, record.pdgap, record.time_s, record.escapes
    );
    if let Some(rs) = &rep.rounded {
        println!("rounded value {:.10e} relgap {:.3e}", rs.value, rs.relgap);
    }
    if !rep.message.is_empty() {
        println!("{}", rep.message);
    }
    if let Some(path) = &args.csv_out {
        let mut w = csv_writer(path)?;
        w.serialize(&record)?;
        w.flush()?;
    }
    if let Some(path) = &args.report_out {
        std::fs::write(path, write_report(&rep, inst.tau())).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if success(rep.status) { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

pub fn certify(args: CertifyArgs) -> Result<ExitCode> {
    let (_, inst) = load(&args.input)?;
    let text = std::fs::read_to_string(&args.report).with_context(|| format!("reading {}", args.report.display()))?;
    let report = parse_report(&text)?;
    if report.r.rows() != inst.n() {
        bail!("report has {} rows but the instance has {} items", report.r.rows(), inst.n());
    }
    if report.scale != inst.tau() {
        bail!("report was written for capacity {} but the instance has {}", report.scale, inst.tau());
    }
    let scaled = inst.scale();
    let var = match report.variety {
        VarietyKind::Knapsack => Variety::knapsack(&scaled),
        VarietyKind::Oblique => Variety::oblique(&scaled),
    };
    let p = var.point(report.r.clone());
    let mode = args.rd_mode.unwrap_or(report.rd_mode);
    let cert = kkt_residues(&var, &p, scaled.c(), &report.mu, report.lambda, mode, &Default::default())?;
    println!("obj   {:.16e} (report {:.16e})", cert.obj, report.obj);
    let pairs = [("rp", cert.rp, report.rp), ("rd", cert.rd, report.rd), ("pdgap", cert.pdgap, report.pdgap)];
    let mut ok = true;
    for (name, got, stored) in pairs {
        let diff = (got - stored).abs();
        println!("{name:<5} {got:.16e} (report {stored:.16e}, diff {diff:.2e})");
        if mode == report.rd_mode && diff > RECERTIFY_TOL {
            ok = false;
        }
    }
    let max = cert.max_residue();
    println!("max residue {max:.3e}");
    if !ok {
        println!("FAIL: recomputed residues differ from the report by more than {RECERTIFY_TOL:e}");
        return Ok(ExitCode::from(2));
    }
    println!("OK");
    Ok(ExitCode::SUCCESS)
}

pub fn oracle(args: OracleArgs) -> Result<ExitCode> {
    let (id, inst) = load(&args.input)?;
    let cfg = config(&args.solver, args.input.gen.seed)?;
    let best = exhaustive_qkp(&inst)?;
    let items: Vec<String> = best.x.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| (i + 1).to_string()).collect();
    println!("{id}: n={} exhaustive optimum {} at items [{}] (weight {}, {} feasible)", inst.n(), best.value, items.join(" "), best.weight, best.feasible);

    let mut ok = true;
    let rep = solve_pipeline(&inst, &cfg, None)?;
    println!("solver: status={} branch={} rank={}", rep.status, rep.branch, rep.rank);
    let slack = SANDWICH_TOL * (1.0 + best.value.abs());
    match rep.bound() {
        Some(bound) => {
            let upper = best.value <= bound + slack;
            println!("bound {bound:.10e} ≥ optimum: {}", if upper { "yes" } else { "NO" });
            ok &= upper;
        }
        None => {
            println!("no bound available");
            ok = false;
        }
    }
    if let Some(rs) = &rep.rounded {
        let lower = rs.feasible && rs.value <= best.value + slack;
        println!("rounded {:.10e} ≤ optimum: {}", rs.value, if lower { "yes" } else { "NO" });
        ok &= lower;
    }
    if inst.c().is_nonnegative() && rep.branch != qksdp::solver::Branch::Equality {
        println!("nonnegative profits should use the equality branch, got {}", rep.branch);
        ok = false;
    }

    // dense KKT at the final point
    let scaled = inst.scale();
    let var = match rep.variety {
        VarietyKind::Knapsack => Variety::knapsack(&scaled),
        VarietyKind::Oblique => Variety::oblique(&scaled),
    };
    if let Some(cert) = &rep.certificate {
        let p = var.point(rep.r.clone());
        let dense = kkt_residues(&var, &p, scaled.c(), &cert.mu, cert.lambda, RdMode::FullEig, &cfg.eig)?;
        println!(
            "dense KKT: rp {:.3e} rd {:.3e} pdgap {:.3e} (smallest slack eigenvalue {:.3e})",
            dense.rp, dense.rd, dense.pdgap, dense.s_min_eig
        );
        if success(rep.status) && dense.max_residue() > cfg.tol_kkt {
            ok = false;
        }
    }

    // escape dual at the zero point and at the rounded final point when it is non-regular
    let mut points = vec![NonRegularPoint::new(vec![false; inst.n()])];
    let (rounded, _) = round_point(&var.point(rep.r.clone()));
    if !rounded.is_zero() && qksdp::geometry::is_nonregular(&rounded.v, &scaled) {
        points.push(rounded);
    }
    for pt in points {
        let label = if pt.is_zero() { "zero point".to_string() } else { "rounded point".to_string() };
        let prob = EscapeProblem::new(scaled.c(), scaled.a(), scaled.tau(), pt, rep.rank.max(3))?;
        let out = solve_escape_sdp(&prob, &cfg.escape)?;
        let grid = escape_dual_grid(&prob)?;
        let diff = (out.dual_value - grid.phi).abs() / grid.phi.abs().max(1.0);
        let agree = diff <= ESCAPE_GRID_TOL;
        println!(
            "escape dual at {label}: solver {:.10e} (α {:.6e}), grid {:.10e} (α {:.6e}), diff {diff:.2e} {}",
            out.dual_value,
            out.dual_alpha,
            grid.phi,
            grid.alpha,
            if agree { "ok" } else { "MISMATCH" }
        );
        ok &= agree;
    }
    println!("{}", if ok { "OK" } else { "FAIL" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn split_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} `{t}`: {e}")))
        .collect()
}

fn worker_slots() -> Result<usize> {
    match std::env::var("QKSDP_THREADS") {
        Ok(v) => {
            let k: usize = v.trim().parse().with_context(|| format!("QKSDP_THREADS=`{v}` is not a count"))?;
            Ok(k.max(1))
        }
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

struct Job {
    family: Family,
    n: usize,
    beta: f64,
    seed: u64,
}

/// Rows finish out of order; they are written in suite order as soon as
/// every earlier row is in.
struct OrderedSink {
    next: usize,
    pending: BTreeMap<usize, Option<RunRecord>>,
    out: csv::Writer<Box<dyn Write + Send>>,
}

impl OrderedSink {
    fn push(&mut self, idx: usize, rec: Option<RunRecord>) -> Result<()> {
        self.pending.insert(idx, rec);
        while let Some(rec) = self.pending.remove(&self.next) {
            if let Some(rec) = rec {
                self.out.serialize(&rec)?;
                self.out.flush()?;
            }
            self.next += 1;
        }
        Ok(())
    }
}

pub fn bench(args: BenchArgs) -> Result<ExitCode> {
    let families: Vec<Family> = split_list(&args.families, "family")?;
    let sizes: Vec<usize> = split_list(&args.sizes, "size")?;
    let seeds: Vec<u64> = split_list(&args.seeds, "seed")?;
    let betas: Vec<f64> = split_list(&args.betas, "beta")?;
    let mut jobs = Vec::new();
    for &family in &families {
        for &n in &sizes {
            for &beta in &betas {
                for &seed in &seeds {
                    jobs.push(Job { family, n, beta, seed });
                }
            }
        }
    }
    config(&args.solver, 0)?;

    let out: Box<dyn Write + Send> = match &args.csv_out {
        Some(path) => Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut writer = csv::Writer::from_writer(out);
    if jobs.is_empty() {
        // serde only emits a header with the first record
        writer.write_record(RunRecord::HEADER)?;
        writer.flush()?;
        return Ok(ExitCode::SUCCESS);
    }
    let sink = Mutex::new(OrderedSink {
        next: 0,
        pending: BTreeMap::new(),
        out: writer,
    });

    let slots = worker_slots()?;
    log::info!("bench: {} runs on {slots} worker slots", jobs.len());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(slots).build()?;
    let start = Instant::now();
    let results: Vec<Result<bool>> = pool.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(idx, job)| {
                let run = || -> Result<Option<RunRecord>> {
                    if args.budget.is_some_and(|b| start.elapsed().as_secs_f64() >= b) {
                        log::warn!("bench budget exhausted; skipping run {idx}");
                        return Ok(None);
                    }
                    let spec = GeneratorSpec::new(job.family, job.n, args.p, job.beta, job.seed);
                    let inst = generate_instance(&spec)?;
                    let cfg = config(&args.solver, job.seed)?;
                    let rep = solve_pipeline(&inst, &cfg, None)?;
                    let id = generated_id(job.family, job.n, args.p, job.beta, job.seed);
                    log::info!("{id}: {} in {:.2}s", rep.status, rep.wall_time_s);
                    Ok(Some(RunRecord::new(id, &inst, &rep)))
                };
                let rec = run();
                let (row, ok) = match rec {
                    Ok(Some(r)) => {
                        let ok = r.status.parse().map(success).unwrap_or(false);
                        (Some(r), Ok(ok))
                    }
                    Ok(None) => (None, Ok(false)),
                    Err(e) => (None, Err(e)),
                };
                sink.lock().expect("csv sink poisoned").push(idx, row)?;
                ok
            })
            .collect()
    });
    let mut all_ok = true;
    for r in results {
        all_ok &= r?;
    }
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
