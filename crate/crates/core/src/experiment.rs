//! End-to-end runs: problem → Landweber → estimate → validation, with CSV and
//! JSON output. Used by the command-line tool.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ProblemKind};
use crate::error::{Error, Result};
use crate::estimator::{estimate_track, mu_to_model, EstimateTrack};
use crate::exec::Execution;
use crate::io;
use crate::landweber::{
    fmt_value, landweber_run, log_thinned_rows, write_trace_csv, InitialGuess, IterationTrace,
    LandweberConfig, TraceColumns,
};
use crate::operator::{LinearOperator, DEFAULT_SVD_FLOOR};
use crate::problems::{self, add_noise, NoisyData, ProblemSpec};
use crate::validation::{
    bound_curves, default_mu_grid, max_mu_spectral, rate_experiment, verify_smoothness,
    BoundCurves, RateExperimentResult, SmoothnessVerdict,
};

/// Observed and predicted rate exponents further apart than this are a misfit.
pub const MISFIT_TOLERANCE: f64 = 0.1;

pub fn build_problem(cfg: &ExperimentConfig) -> Result<ProblemSpec> {
    let p = &cfg.problem;
    let mut spec = match p.kind {
        ProblemKind::PowerLaw => problems::make_power_law(p.n, p.eta, p.beta)?,
        ProblemKind::ExpSolution => problems::make_exp_solution(p.n, p.beta)?,
        ProblemKind::ExpOperator => problems::make_exp_operator(p.n, p.eta)?,
        ProblemKind::Deriv2 => problems::make_deriv2(p.n)?,
        ProblemKind::Gravity => problems::make_gravity(p.n, p.depth)?,
        ProblemKind::External => {
            let missing =
                || Error::Config("external problems need problem.matrix and problem.rhs".into());
            let matrix = cfg.resolve(p.matrix.as_deref().ok_or_else(missing)?);
            let rhs = cfg.resolve(p.rhs.as_deref().ok_or_else(missing)?);
            let x_true = p.x_true.as_deref().map(|x| cfg.resolve(x));
            problems::load_external(&matrix, &rhs, x_true.as_deref())?
        }
    };
    spec.operator = spec.operator.with_execution(cfg.execution());
    Ok(spec)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub rank: usize,
    pub smoothness: SmoothnessVerdict,
    pub max_mu: Option<f64>,
}

/// Summability test on the singular system of the problem's operator.
pub fn spectral_report(
    p: &ProblemSpec,
    data: &[f64],
    threshold: f64,
    exec: Execution,
) -> Result<SpectralReport> {
    let dense;
    let op: &LinearOperator =
        if p.operator.diagonal_sigmas().is_some() || p.operator.dense_matrix().is_none() {
            &p.operator
        } else {
            dense = p.operator.to_dense()?;
            &dense
        };
    let sd = op.svd(DEFAULT_SVD_FLOOR)?;
    let smoothness = verify_smoothness(&sd, data, &default_mu_grid(), threshold, exec)?;
    let max_mu = max_mu_spectral(&sd, data, threshold)?;
    Ok(SpectralReport {
        rank: sd.rank(),
        smoothness,
        max_mu,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub problem: ProblemSpec,
    pub noisy: Option<NoisyData>,
    pub trace: IterationTrace,
    pub track: EstimateTrack,
    pub bounds: BoundCurves,
    pub tikhonov: Option<std::result::Result<RateExperimentResult, String>>,
    pub spectral: Option<SpectralReport>,
}

impl RunOutput {
    pub fn data(&self) -> &[f64] {
        self.noisy
            .as_ref()
            .map_or(&self.problem.y_clean, |n| &n.y_delta)
    }
}

/// Run the full pipeline without writing anything.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let exec = cfg.execution();
    let problem = build_problem(cfg)?;
    let noisy = if cfg.noise.level > 0.0 {
        Some(add_noise(&problem, cfg.noise.level, cfg.noise.seed)?)
    } else {
        None
    };
    let data = noisy.as_ref().map_or(&problem.y_clean, |n| &n.y_delta);

    let x0 = match &cfg.landweber.x0 {
        None => InitialGuess::Zero,
        Some(path) => InitialGuess::Vector(io::read_vector(&cfg.resolve(path))?),
    };
    let lw = LandweberConfig {
        step: cfg.landweber.step,
        max_iters: cfg.landweber.iters,
        x0,
        record_iterates: cfg.landweber.record_iterates,
    };
    let mut trace = landweber_run(&problem, data, &lw)?;
    trace.noise = noisy.as_ref().map(NoisyData::summary);
    let track = estimate_track(&trace, &cfg.estimator)?;

    let bounds = match (problem.mu_exact, problem.source_w_norm()) {
        (Some(mu), Some(w)) if mu > 0.0 => bound_curves(&trace, &mu_to_model(mu, 1.0)?, Some(w)),
        _ => {
            let mu = track
                .mu_hat
                .or(problem.mu_exact)
                .filter(|m| *m > 0.0)
                .unwrap_or(1.0);
            bound_curves(&trace, &mu_to_model(mu, 1.0)?, None)
        }
    };

    let tikhonov = if cfg.validation.tikhonov {
        Some(match (track.mu_hat, problem.x_true.is_some()) {
            (Some(mu), true) => rate_experiment(
                &problem,
                mu,
                &cfg.validation.levels,
                &cfg.validation.seeds,
                exec,
            )
            .map_err(|e| e.to_string()),
            (None, _) => Err("no stable window, so no mu_hat to test".to_string()),
            (_, false) => Err("exact solution unknown".to_string()),
        })
    } else {
        None
    };
    let spectral = if cfg.validation.svd_check {
        Some(spectral_report(
            &problem,
            data,
            cfg.validation.growth_threshold,
            exec,
        )?)
    } else {
        None
    };

    Ok(RunOutput {
        problem,
        noisy,
        trace,
        track,
        bounds,
        tikhonov,
        spectral,
    })
}

/// Structured summary of a run.
pub fn report_json(cfg: &ExperimentConfig, out: &RunOutput) -> Value {
    let t = &out.track;
    let tr = &out.trace;
    let tikhonov = match &out.tikhonov {
        None => Value::Null,
        Some(Ok(r)) => json!({
            "result": r,
            "misfit": (r.observed_exponent - r.predicted_exponent).abs() > MISFIT_TOLERANCE,
        }),
        Some(Err(msg)) => json!({ "error": msg }),
    };
    json!({
        "mu_hat": t.mu_hat,
        "c_hat": t.c_hat,
        "window": t.stable_window.map(|(a, b)| [a, b]),
        "verdict": t.verdict.as_str(),
        "noise_takeover_k": t.noise_takeover_k,
        "saturation_k": t.saturation_k,
        "lower_bound_cycles": t.lower_bound_cycles,
        "skipped_prefixes": t.skipped.len(),
        "config": cfg.echo(),
        "problem": {
            "label": out.problem.label,
            "params": out.problem.params,
            "m": out.problem.operator.rows(),
            "n": out.problem.operator.cols(),
            "operator": out.problem.operator.kind_name(),
            "mu_exact": out.problem.mu_exact,
            "source_w_norm": out.problem.source_w_norm(),
        },
        "noise": out.noisy.as_ref().map(NoisyData::summary),
        "landweber": {
            "iterations": tr.len(),
            "step_beta": tr.step_beta,
            "operator_norm": tr.operator_norm,
            "operator_norm_converged": tr.norm_converged,
            "stop": tr.stop,
            "x0": if cfg.landweber.x0.is_some() { "file" } else { "zero" },
            "final_residual": tr.residuals.last(),
            "final_error": tr.errors.as_ref().and_then(|e| e.last()),
        },
        "tikhonov": tikhonov,
        "spectral": out.spectral,
    })
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    create_parent(path)?;
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Full trace with every column.
pub fn write_full_trace(path: &Path, out: &RunOutput, max_rows: usize) -> Result<()> {
    create_parent(path)?;
    let len = out.trace.len();
    let mu = out.track.aligned(&out.track.mu_k, len);
    let c = out.track.aligned(&out.track.c_k, len);
    let cols = TraceColumns {
        mu_k: Some(&mu),
        c_k: Some(&c),
        upper_bound: out.bounds.upper.as_deref(),
    };
    let f = std::io::BufWriter::new(fs::File::create(path)?);
    write_trace_csv(f, &out.trace, &cols, &log_thinned_rows(len, max_rows))
}

/// `estimate <config>`: run and write the trace CSV and the JSON report.
pub fn run_estimate(cfg: &ExperimentConfig) -> Result<Value> {
    let out = run_pipeline(cfg)?;
    let report = report_json(cfg, &out);
    write_full_trace(&cfg.resolve(&cfg.output.trace), &out, cfg.output.max_rows)?;
    write_json(&cfg.resolve(&cfg.output.report), &report)?;
    Ok(report)
}

pub const FIGURES: [&str; 10] = [
    "diag1", "diag2", "diag3", "diag4", "expon", "expon_op", "noise1", "noise2", "deriv2",
    "gravity",
];

/// Canonical configuration of a named figure.
pub fn figure_config(name: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let pairs: &[(&str, &str)] = match name {
        "diag1" => &[("problem.eta", "1"), ("problem.beta", "2.5")],
        "diag2" => &[("problem.eta", "2"), ("problem.beta", "2")],
        "diag3" => &[
            ("problem.eta", "2"),
            ("problem.beta", "1"),
            ("problem.n", "1000"),
            ("landweber.iters", "2000000"),
            ("output.max_rows", "5000"),
        ],
        "diag4" => &[("problem.eta", "3"), ("problem.beta", "1.5")],
        "expon" => &[("problem.kind", "exp_solution"), ("problem.beta", "1.5")],
        "expon_op" => &[
            ("problem.kind", "exp_operator"),
            ("problem.n", "400"),
            ("problem.eta", "2"),
        ],
        "noise1" => &[("noise.level", "0.01"), ("noise.seed", "0")],
        "noise2" => &[("noise.level", "0.001"), ("noise.seed", "0")],
        "deriv2" => &[("problem.kind", "deriv2"), ("problem.n", "256")],
        "gravity" => &[
            ("problem.kind", "gravity"),
            ("problem.n", "256"),
            ("problem.depth", "0.25"),
        ],
        other => {
            return Err(Error::Config(format!(
                "unknown figure {other:?}; available: {}, all",
                FIGURES.join(", ")
            )))
        }
    };
    for (k, v) in pairs {
        cfg.set(k, v)?;
    }
    cfg.output.trace = PathBuf::from(format!("{name}_trace.csv"));
    cfg.output.report = PathBuf::from(format!("{name}_report.json"));
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct FigureOutput {
    pub name: String,
    pub track_csv: PathBuf,
    pub bounds_csv: PathBuf,
    pub report_path: PathBuf,
    pub report: Value,
}

/// Run one figure and write `<name>_track.csv`, `<name>_bounds.csv` and
/// `<name>_report.json` into `out_dir`.
pub fn run_figure(name: &str, out_dir: &Path, exec: Execution) -> Result<FigureOutput> {
    let mut cfg = figure_config(name)?;
    cfg.parallel = exec.is_parallel();
    cfg.set_base_dir(out_dir);
    let out = run_pipeline(&cfg)?;
    let report = report_json(&cfg, &out);
    fs::create_dir_all(out_dir)?;

    let track_csv = out_dir.join(format!("{name}_track.csv"));
    let bounds_csv = out_dir.join(format!("{name}_bounds.csv"));
    let report_path = out_dir.join(format!("{name}_report.json"));

    let t = &out.track;
    let rows = log_thinned_rows(t.k_values.len(), cfg.output.max_rows);
    let mut w = csv::Writer::from_path(&track_csv)?;
    w.write_record(["k", "mu_k", "c_k"])?;
    for i in rows {
        w.write_record([
            t.k_values[i].to_string(),
            fmt_value(t.mu_k[i]),
            fmt_value(t.c_k[i]),
        ])?;
    }
    w.flush()?;

    let tr = &out.trace;
    let mut w = csv::Writer::from_path(&bounds_csv)?;
    w.write_record(["k", "residual", "error", "lower_bound", "upper_bound"])?;
    for i in log_thinned_rows(tr.len(), cfg.output.max_rows) {
        let get = |v: Option<&Vec<f64>>| v.map_or_else(String::new, |v| fmt_value(v[i]));
        w.write_record([
            (i + 1).to_string(),
            fmt_value(tr.residuals[i]),
            get(tr.errors.as_ref()),
            fmt_value(out.bounds.lower[i]),
            get(out.bounds.upper.as_ref()),
        ])?;
    }
    w.flush()?;

    write_json(&report_path, &report)?;
    Ok(FigureOutput {
        name: name.to_string(),
        track_csv,
        bounds_csv,
        report_path,
        report,
    })
}

/// Run several figures, in parallel under `Execution::Parallel`.
pub fn run_figures(names: &[&str], out_dir: &Path, exec: Execution) -> Vec<Result<FigureOutput>> {
    for n in names {
        if let Err(e) = figure_config(n) {
            return vec![Err(e)];
        }
    }
    exec.map(names, |n| run_figure(n, out_dir, exec))
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub problem: String,
    pub mu_hat: Option<f64>,
    pub predicted_rate_exponent: Option<f64>,
    pub observed_rate_exponent: Option<f64>,
    pub abs_difference: Option<f64>,
    pub misfit: Option<bool>,
    pub note: String,
}

fn table_row(cfg: &ExperimentConfig) -> TableRow {
    let mut row = TableRow {
        problem: cfg.problem.kind.to_string(),
        mu_hat: None,
        predicted_rate_exponent: None,
        observed_rate_exponent: None,
        abs_difference: None,
        misfit: None,
        note: String::new(),
    };
    let mut plain = cfg.clone();
    plain.validation.tikhonov = false;
    plain.validation.svd_check = false;
    let out = match run_pipeline(&plain) {
        Ok(o) => o,
        Err(e) => {
            row.note = format!("pipeline failed: {e}");
            return row;
        }
    };
    row.problem = out.problem.label.clone();
    let Some(mu) = out.track.mu_hat else {
        row.note = format!("no stable window (verdict {})", out.track.verdict.as_str());
        return row;
    };
    row.mu_hat = Some(mu);
    match rate_experiment(
        &out.problem,
        mu,
        &cfg.validation.levels,
        &cfg.validation.seeds,
        cfg.execution(),
    ) {
        Ok(r) => {
            let d = (r.observed_exponent - r.predicted_exponent).abs();
            row.predicted_rate_exponent = Some(r.predicted_exponent);
            row.observed_rate_exponent = Some(r.observed_exponent);
            row.abs_difference = Some(d);
            row.misfit = Some(d > MISFIT_TOLERANCE);
            row.note = r.notes.join("; ");
        }
        Err(e) => row.note = format!("rate experiment failed: {e}"),
    }
    row
}

/// One row per config; failures are recorded in the row.
pub fn tikhonov_table(cfgs: &[ExperimentConfig], exec: Execution) -> Vec<TableRow> {
    exec.map(cfgs, table_row)
}

pub fn write_tikhonov_table<W: Write>(out: W, rows: &[TableRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "problem",
        "mu_hat",
        "predicted_rate_exponent",
        "observed_rate_exponent",
        "abs_difference",
        "misfit",
        "note",
    ])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, fmt_value);
    for r in rows {
        w.write_record([
            r.problem.clone(),
            opt(r.mu_hat),
            opt(r.predicted_rate_exponent),
            opt(r.observed_rate_exponent),
            opt(r.abs_difference),
            r.misfit.map_or_else(String::new, |m| m.to_string()),
            r.note.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `svd-check <config>`: spectral summability report for the configured data.
pub fn svd_check(cfg: &ExperimentConfig) -> Result<Value> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    let noisy = if cfg.noise.level > 0.0 {
        Some(add_noise(&problem, cfg.noise.level, cfg.noise.seed)?)
    } else {
        None
    };
    let data = noisy.as_ref().map_or(&problem.y_clean, |n| &n.y_delta);
    let report = spectral_report(
        &problem,
        data,
        cfg.validation.growth_threshold,
        cfg.execution(),
    )?;
    Ok(json!({
        "problem": {
            "label": problem.label,
            "params": problem.params,
            "mu_exact": problem.mu_exact,
        },
        "noise": noisy.as_ref().map(NoisyData::summary),
        "spectral": report,
        "config": cfg.echo(),
    }))
}
