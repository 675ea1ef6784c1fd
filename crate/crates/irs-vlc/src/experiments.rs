//! Single runs, parameter sweeps and BER curves over the configured schemes.
//!
//! Work items (schemes, random draws, sweep points, Monte Carlo chunks) run
//! on the ambient rayon pool. Results are collected in a fixed order before
//! anything is written, so output files do not depend on the thread count.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use irs_vlc_core::association::{distance_greedy, random_assignment};
use irs_vlc_core::baselines::{mmse_precoding_baseline, no_irs_design, zf_precoding_baseline};
use irs_vlc_core::channel::build_channels;
use irs_vlc_core::montecarlo::{chunk_count, condition_number, simulate_chunk, LinkCounts};
use irs_vlc_core::objective::{feasibility, mse, normalized_mse};
use irs_vlc_core::scene::build_scene;
use irs_vlc_core::solver::{alternating_optimize, fixed_assignment_design, SolverOptions};
use irs_vlc_core::{
    Assignment, BerEstimate, ChannelSet, Design, PamConfig, PowerBudget, Scene, SignalStats, SolverReport,
};

use crate::config::{Bias, ExperimentConfig, Scheme, SweepAxis};
use crate::csvio::{fmt_f64, write_assignment, write_matrix, Table};
use crate::error::{CliError, Result};

/// Everything derived from one configuration.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub scene: Scene,
    pub chans: ChannelSet,
    pub stats: SignalStats,
    pub budget: PowerBudget,
    pub opts: SolverOptions,
}

impl Context {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let scene = build_scene(&cfg.scene_config())?;
        let chans = build_channels(&scene)?;
        Ok(Self {
            cfg: cfg.clone(),
            scene,
            chans,
            stats: cfg.stats()?,
            budget: cfg.budget()?,
            opts: cfg.solver_options(),
        })
    }
}

/// Result of one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    /// Design of the scheme; for `random`, the one of the first draw.
    pub design: Design,
    /// Channel the design was computed for.
    pub channel: DMatrix<f64>,
    pub assignment: Option<Assignment>,
    /// Final MSE; for `random`, the mean over all draws.
    pub mse: f64,
    pub normalized_mse: f64,
    pub condition_number: f64,
    pub converged: bool,
    pub constraint_residual: f64,
    /// Solver report of the (first) optimization, if the scheme iterates.
    pub report: Option<SolverReport>,
    pub draws: u32,
}

/// Deterministic seed for a sub-task, via the SplitMix64 finalizer.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut z = seed;
    for &p in path {
        z = z.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const RANDOM_STREAM: u64 = 1;
const BER_STREAM: u64 = 2;

fn from_report(ctx: &Context, scheme: Scheme, report: SolverReport, draws: u32) -> Result<SchemeOutcome> {
    let assignment = (scheme != Scheme::NoIrs).then(|| report.final_assignment.clone());
    Ok(SchemeOutcome {
        scheme,
        design: report.final_design.clone(),
        channel: report.final_channel.clone(),
        assignment,
        mse: report.final_mse,
        normalized_mse: normalized_mse(&report.final_channel, &report.final_design, &ctx.stats)?,
        condition_number: condition_number(&report.final_channel),
        converged: report.converged,
        constraint_residual: report.constraint_residuals,
        report: Some(report),
        draws,
    })
}

fn closed_form(ctx: &Context, scheme: Scheme, design: Design, h: DMatrix<f64>, a: Assignment) -> Result<SchemeOutcome> {
    Ok(SchemeOutcome {
        scheme,
        mse: mse(&h, &design, &ctx.stats)?,
        normalized_mse: normalized_mse(&h, &design, &ctx.stats)?,
        condition_number: condition_number(&h),
        converged: true,
        constraint_residual: feasibility(&design.w, &ctx.stats, &ctx.budget).max_violation(),
        design,
        channel: h,
        assignment: Some(a),
        report: None,
        draws: 1,
    })
}

/// Runs one scheme on `ctx`.
pub fn run_scheme(ctx: &Context, scheme: Scheme, seed: u64) -> Result<SchemeOutcome> {
    let (chans, stats, budget, opts) = (&ctx.chans, &ctx.stats, &ctx.budget, &ctx.opts);
    match scheme {
        Scheme::Proposed => {
            let r = alternating_optimize(&ctx.scene, chans, stats, budget, opts)?;
            from_report(ctx, scheme, r, 1)
        }
        Scheme::Greedy => {
            let r = fixed_assignment_design(chans, stats, budget, &distance_greedy(&ctx.scene), opts)?;
            from_report(ctx, scheme, r, 1)
        }
        Scheme::NoIrs => {
            let r = no_irs_design(chans, stats, budget, opts)?;
            from_report(ctx, scheme, r, 1)
        }
        Scheme::Random => {
            let draws = ctx.cfg.random_draws.max(1);
            let reports = (0..draws)
                .into_par_iter()
                .map(|k| {
                    let a = random_assignment(&ctx.scene, derive_seed(seed, &[RANDOM_STREAM, k as u64]));
                    fixed_assignment_design(chans, stats, budget, &a, opts)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let mean = reports.iter().map(|r| r.final_mse).sum::<f64>() / reports.len() as f64;
            let all_converged = reports.iter().all(|r| r.converged);
            let worst = reports.iter().map(|r| r.constraint_residuals).fold(0.0, f64::max);
            let first = reports.into_iter().next().expect("at least one draw");
            let mut out = from_report(ctx, scheme, first, draws)?;
            out.mse = mean;
            out.normalized_mse = mean / stats.n_s as f64 / stats.sigma_x2;
            out.converged = all_converged;
            out.constraint_residual = worst;
            Ok(out)
        }
        Scheme::Zf | Scheme::Mmse => {
            let a = distance_greedy(&ctx.scene);
            let h = chans.assemble_h(&a.to_v())?;
            let d = if scheme == Scheme::Zf {
                zf_precoding_baseline(&h, stats, budget)?
            } else {
                mmse_precoding_baseline(&h, stats, budget)?
            };
            closed_form(ctx, scheme, d, h, a)
        }
    }
}

/// Runs every configured scheme, in the configuration's fixed order.
pub fn run_schemes(ctx: &Context, seed: u64) -> Result<Vec<SchemeOutcome>> {
    ctx.cfg.ordered_schemes().into_par_iter().map(|s| run_scheme(ctx, s, seed)).collect()
}

/// Monte Carlo BER of a design, chunks in parallel.
pub fn estimate_ber(
    design: &Design,
    h: &DMatrix<f64>,
    stats: &SignalStats,
    trials: u64,
    seed: u64,
) -> Result<BerEstimate> {
    if trials == 0 {
        return Err(CliError::Config("BER needs at least one trial".into()));
    }
    let cfg = PamConfig::from_stats(stats)?;
    let parts = (0..chunk_count(trials))
        .into_par_iter()
        .map(|i| simulate_chunk(design, h, &cfg, stats, trials, seed, i))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut total = LinkCounts::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(BerEstimate::from_counts(&total))
}

/// Summary of a command run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub files: Vec<String>,
    /// `(label, scheme)` of every iterative run that hit its iteration cap.
    pub not_converged: Vec<(String, Scheme)>,
}

impl RunSummary {
    pub fn all_converged(&self) -> bool {
        self.not_converged.is_empty()
    }
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))
}

fn dump_design(out: &Path, o: &SchemeOutcome, hash: &str, files: &mut Vec<String>) -> Result<()> {
    let dir = out.join("matrices");
    ensure_dir(&dir)?;
    let name = o.scheme.name();
    let r = DMatrix::from_column_slice(o.design.r.len(), 1, o.design.r.as_slice());
    for (tag, m, units) in [
        ("W", &o.design.w, "precoder, amplitude per unit symbol"),
        ("Q", &o.design.q, "detector, per unit gain"),
        ("r", &r, "DC bias, amplitude"),
        ("H", &o.channel, "channel gain, dimensionless"),
    ] {
        let file = format!("matrices/{tag}_{name}.csv");
        write_matrix(&out.join(&file), m, hash, units)?;
        files.push(file);
    }
    Ok(())
}

/// Single optimization of every scheme: `trace.csv`, `summary.csv`,
/// `assignment.csv`, and `matrices/` on request.
pub fn run_optimize(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    ensure_dir(out)?;
    let ctx = Context::new(cfg)?;
    let hash = cfg.hash();
    let outcomes = run_schemes(&ctx, cfg.seed)?;
    let mut files = Vec::new();

    let mut trace = Table::create(
        &out.join("trace.csv"),
        &hash,
        "mse in signal-power units (sigma_x2), residual in constraint units",
        &["scheme", "phase", "iteration", "mse", "residual"],
    )?;
    for o in &outcomes {
        let Some(rep) = &o.report else { continue };
        for (i, m) in rep.mse_trace.iter().enumerate() {
            let res = rep.residual_trace.get(i).copied().unwrap_or(f64::NAN);
            trace.row([o.scheme.name().to_string(), "relaxed".into(), i.to_string(), fmt_f64(*m), fmt_f64(res)])?;
        }
        for (i, m) in rep.polish_trace.iter().enumerate() {
            trace.row([o.scheme.name().to_string(), "rounded".into(), i.to_string(), fmt_f64(*m), String::new()])?;
        }
    }
    trace.finish()?;
    files.push("trace.csv".into());

    let mut summary = Table::create(
        &out.join("summary.csv"),
        &hash,
        "mse in sigma_x2 units, normalized_mse dimensionless, condition_number dimensionless",
        &[
            "scheme",
            "mse",
            "normalized_mse",
            "condition_number",
            "outer_iterations",
            "converged",
            "constraint_residual",
            "null_space_dim",
            "draws",
        ],
    )?;
    for o in &outcomes {
        let (iters, null_dim) = o.report.as_ref().map_or((0, 0), |r| (r.outer_iterations, r.null_space_dim));
        summary.row([
            o.scheme.name().to_string(),
            fmt_f64(o.mse),
            fmt_f64(o.normalized_mse),
            fmt_f64(o.condition_number),
            iters.to_string(),
            o.converged.to_string(),
            fmt_f64(o.constraint_residual),
            null_dim.to_string(),
            o.draws.to_string(),
        ])?;
    }
    summary.finish()?;
    files.push("summary.csv".into());

    let assignment = outcomes
        .iter()
        .find(|o| o.scheme == Scheme::Proposed)
        .and_then(|o| o.assignment.clone())
        .unwrap_or_else(|| distance_greedy(&ctx.scene));
    write_assignment(&out.join("assignment.csv"), &assignment, &hash)?;
    files.push("assignment.csv".into());

    if cfg.dump_matrices {
        let bank = [
            ("matrices/H1.csv", ctx.chans.h1(), "line-of-sight gain, dimensionless"),
            ("matrices/H_nlos.csv", ctx.chans.h_nlos(), "NLoS gain bank, dimensionless"),
        ];
        ensure_dir(&out.join("matrices"))?;
        for (file, m, units) in bank {
            write_matrix(&out.join(file), m, &hash, units)?;
            files.push(file.into());
        }
        for o in &outcomes {
            dump_design(out, o, &hash, &mut files)?;
        }
    }

    let not_converged = outcomes.iter().filter(|o| !o.converged).map(|o| ("optimize".to_string(), o.scheme)).collect();
    Ok(RunSummary { files, not_converged })
}

/// Configuration at one point of a one-dimensional sweep.
pub fn sweep_point(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    c.sweep = None;
    match axis {
        SweepAxis::Snr => {
            c.signal.snr_db = Some(value);
        }
        SweepAxis::IrsCount => {
            let rows = c.scene.irs_grid[1];
            let n = value as usize;
            c.scene.irs_grid = if n == 0 { [0, rows] } else { [n / rows, rows] };
            if let Some(counts) = &mut c.scene.counts {
                counts[2] = n;
            }
        }
        SweepAxis::DcBias => {
            c.budget.dc_bias = Bias::Uniform(value);
        }
        SweepAxis::PositionGrid => {
            return Err(CliError::Config("position_grid points are (x, y) pairs".into()));
        }
    }
    Ok(c)
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub y: Option<f64>,
    pub outcome: SchemeOutcome,
    pub ber: Option<BerEstimate>,
}

fn ber_for(ctx: &Context, o: &SchemeOutcome, seed: u64, point: u64) -> Result<BerEstimate> {
    let s = derive_seed(seed, &[BER_STREAM, point, o.scheme as u64]);
    estimate_ber(&o.design, &o.channel, &ctx.stats, ctx.cfg.ber.trials, s)
}

fn sweep_rows(cfg: &ExperimentConfig) -> Result<(SweepAxis, Vec<SweepRow>)> {
    let sw = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("sweep command needs a [sweep] section".into()))?;
    let points: Vec<(f64, Option<f64>, ExperimentConfig)> = if sw.axis == SweepAxis::PositionGrid {
        let mut v = Vec::new();
        for &y in &sw.y {
            for &x in &sw.x {
                let mut c = cfg.clone();
                c.sweep = None;
                c.scene.pd_center[0] = x;
                c.scene.pd_center[1] = y;
                v.push((x, Some(y), c));
            }
        }
        v
    } else {
        if sw.values.is_empty() {
            return Err(CliError::Config("sweep values must not be empty".into()));
        }
        sw.values.iter().map(|&x| sweep_point(cfg, sw.axis, x).map(|c| (x, None, c))).collect::<Result<_>>()?
    };
    let with_ber = sw.with_ber;
    let per_point = points
        .par_iter()
        .enumerate()
        .map(|(k, (x, y, c))| -> Result<Vec<SweepRow>> {
            let ctx = Context::new(c)?;
            let outcomes = run_schemes(&ctx, cfg.seed)?;
            outcomes
                .into_iter()
                .map(|o| {
                    let ber = if with_ber { Some(ber_for(&ctx, &o, cfg.seed, k as u64)?) } else { None };
                    Ok(SweepRow { value: *x, y: *y, outcome: o, ber })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((sw.axis, per_point.into_iter().flatten().collect()))
}

/// Parameter sweep: `sweep.csv`, or `position_grid.csv` for position maps.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    ensure_dir(out)?;
    let hash = cfg.hash();
    let (axis, rows) = sweep_rows(cfg)?;
    let with_ber = rows.iter().any(|r| r.ber.is_some());
    let mut header: Vec<&str> =
        if axis == SweepAxis::PositionGrid { vec!["x_m", "y_m", "scheme"] } else { vec!["axis", "value", "scheme"] };
    header.extend(["mse", "condition_number", "outer_iterations", "converged"]);
    if with_ber {
        header.extend(["ber", "ci95"]);
    }
    let units = match axis {
        SweepAxis::Snr => "value in dB",
        SweepAxis::IrsCount => "value in IRS units",
        SweepAxis::DcBias => "value is the DC bias r0 in amplitude units",
        SweepAxis::PositionGrid => "PD-array center in meters",
    };
    let file = if axis == SweepAxis::PositionGrid { "position_grid.csv" } else { "sweep.csv" };
    let mut t = Table::create(&out.join(file), &hash, &format!("{units}; mse in sigma_x2 units"), &header)?;
    let mut not_converged = Vec::new();
    for r in &rows {
        let o = &r.outcome;
        let mut rec = match r.y {
            Some(y) => vec![fmt_f64(r.value), fmt_f64(y), o.scheme.name().to_string()],
            None => vec![axis.name().to_string(), fmt_f64(r.value), o.scheme.name().to_string()],
        };
        rec.push(fmt_f64(o.mse));
        rec.push(fmt_f64(o.condition_number));
        rec.push(o.report.as_ref().map_or(0, |x| x.outer_iterations).to_string());
        rec.push(o.converged.to_string());
        if let Some(b) = &r.ber {
            rec.push(fmt_f64(b.ber));
            rec.push(fmt_f64(b.ci95_halfwidth));
        }
        t.row(rec)?;
        if !o.converged {
            let label = match r.y {
                Some(y) => format!("x={} y={}", r.value, y),
                None => format!("{}={}", axis.name(), r.value),
            };
            not_converged.push((label, o.scheme));
        }
    }
    t.finish()?;
    Ok(RunSummary { files: vec![file.into()], not_converged })
}

/// SNR points used by the `ber` command.
pub fn ber_points(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    if !cfg.ber.snr_db.is_empty() {
        return Ok(cfg.ber.snr_db.clone());
    }
    if let Some(sw) = &cfg.sweep {
        if sw.axis == SweepAxis::Snr && !sw.values.is_empty() {
            return Ok(sw.values.clone());
        }
    }
    let db = match cfg.signal.snr_db {
        Some(db) => db,
        None => 10.0 * (1e-13 * cfg.signal.sigma_x2 / cfg.sigma_w2()?).log10(),
    };
    Ok(vec![db])
}

/// One BER point.
#[derive(Debug, Clone, PartialEq)]
pub struct BerRow {
    pub snr_db: f64,
    pub scheme: Scheme,
    pub estimate: BerEstimate,
    pub seed: u64,
    pub converged: bool,
}

/// BER of every scheme at every SNR point, designs re-optimized per point.
pub fn ber_rows(cfg: &ExperimentConfig) -> Result<Vec<BerRow>> {
    if cfg.ber.trials == 0 {
        return Err(CliError::Config("ber.trials must be at least 1".into()));
    }
    let points = ber_points(cfg)?;
    let per_point = points
        .par_iter()
        .enumerate()
        .map(|(k, &db)| -> Result<Vec<BerRow>> {
            let c = sweep_point(cfg, SweepAxis::Snr, db)?;
            let ctx = Context::new(&c)?;
            run_schemes(&ctx, cfg.seed)?
                .into_iter()
                .map(|o| {
                    let seed = derive_seed(cfg.seed, &[BER_STREAM, k as u64, o.scheme as u64]);
                    let estimate = estimate_ber(&o.design, &o.channel, &ctx.stats, cfg.ber.trials, seed)?;
                    Ok(BerRow { snr_db: db, scheme: o.scheme, estimate, seed, converged: o.converged })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_point.into_iter().flatten().collect())
}

/// BER-versus-SNR curves: `ber.csv`.
pub fn run_ber(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    ensure_dir(out)?;
    let rows = ber_rows(cfg)?;
    let mut t = Table::create(
        &out.join("ber.csv"),
        &cfg.hash(),
        "snr_db in dB, ber and ci95 dimensionless, trials in symbol vectors",
        &["snr_db", "scheme", "ber", "ci95", "trials", "seed"],
    )?;
    let mut not_converged = Vec::new();
    for r in &rows {
        t.row([
            fmt_f64(r.snr_db),
            r.scheme.name().to_string(),
            fmt_f64(r.estimate.ber),
            fmt_f64(r.estimate.ci95_halfwidth),
            r.estimate.trials.to_string(),
            r.seed.to_string(),
        ])?;
        if !r.converged {
            not_converged.push((format!("snr_db={}", r.snr_db), r.scheme));
        }
    }
    t.finish()?;
    Ok(RunSummary { files: vec!["ber.csv".into()], not_converged })
}

/// Uniform DC bias vector, for callers building budgets by hand.
pub fn uniform_bias(n_t: usize, r0: f64) -> DVector<f64> {
    DVector::from_element(n_t, r0)
}
