//! Experiment dispatch: compute everything first, then write the output
//! directory, then summarise.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use wpt_core::certificate::{verify_allocation, OptimalityCertificate, TOL_CERT};
use wpt_core::experiments::report::{
    emit_heatmap, fmt_sig, read_heatmap, write_certificate_csv, write_fading_realizations_csv,
    write_fading_summary_csv, write_scheme_csv, write_sweep_csv, write_table, HeatmapMeta,
};
use wpt_core::experiments::{
    run_fading_ensemble, run_lod_sweep, run_scheme_comparison, solve_instance, Instance, SchemeRow, SolvedInstance,
};
use wpt_core::geometry::LatticeGrid;
use wpt_core::schemes::{compare_schemes, evaluate_min_power, SchemeId, SchemeResult};
use wpt_core::solver::PowerAllocation;

use crate::config::{ConfigError, Experiment, Resolved};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CERTIFICATE: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failed: {0}")]
    Solver(wpt_core::Error),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

fn config_err(e: wpt_core::Error) -> CliError {
    CliError::Config(ConfigError::Invalid(e.to_string()))
}

fn solver_err(e: wpt_core::Error) -> CliError {
    match e {
        wpt_core::Error::Io(_) | wpt_core::Error::Csv(_) | wpt_core::Error::Serialization(_) => {
            CliError::Io(e.to_string())
        }
        e => CliError::Solver(e),
    }
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: Experiment,
    pub environment: String,
    pub lod: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_power_watts: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub antennas: Option<usize>,
    /// `None` when the experiment certifies nothing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate_passed: Option<bool>,
    pub output_dir: PathBuf,
    pub details: serde_json::Value,
    #[serde(skip)]
    pub lines: Vec<String>,
}

impl Summary {
    pub fn exit_code(&self) -> i32 {
        if self.certificate_passed == Some(false) {
            EXIT_CERTIFICATE
        } else {
            EXIT_OK
        }
    }
}

pub fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

fn headline(antennas: usize, watts: f64, passed: bool) -> String {
    format!("antennas: {antennas}, min power: {watts:.3e} W, certificate: {}", verdict(passed))
}

/// `""` for M-OPT, `_m-uni` etc. otherwise.
fn scheme_suffix(id: SchemeId) -> String {
    match id {
        SchemeId::MOpt => String::new(),
        other => format!("_{}", other.label().to_ascii_lowercase()),
    }
}

/// Files computed in memory before anything touches the disk.
enum Output {
    Sweep(wpt_core::experiments::LodSweepSeries),
    Schemes(Vec<SchemeRow>),
    Certificate(String, OptimalityCertificate),
    Heatmap(String, PowerAllocation, Arc<LatticeGrid>, HeatmapMeta),
    SolveRow(SolveRow),
    CertifyRows(Vec<CertifyRow>),
    Fading(Box<wpt_core::experiments::FadingEnsembleReport>),
}

#[derive(Debug, Clone, Serialize)]
struct SolveRow {
    environment: String,
    dimensionality: String,
    lod: usize,
    objective_m: f64,
    min_power_watts: f64,
    antennas: usize,
    dual_bound: f64,
    certificate_passed: bool,
}

#[derive(Debug, Clone, Serialize)]
struct CertifyRow {
    source: String,
    objective_m: f64,
    dual_bound: f64,
    max_fbar_excess: f64,
    support_deviation: f64,
    passed: bool,
}

pub fn execute(cfg: &Resolved) -> Result<Summary, CliError> {
    let (summary, outputs) = match cfg.experiment {
        Experiment::Solve => solve(cfg)?,
        Experiment::Sweep => sweep(cfg)?,
        Experiment::Compare => compare(cfg)?,
        Experiment::Fading => fading(cfg)?,
        Experiment::Heatmap => heatmap(cfg)?,
        Experiment::Certify => certify(cfg)?,
    };
    write_outputs(cfg, &outputs).map_err(solver_err)?;
    Ok(summary)
}

fn base_summary(cfg: &Resolved) -> Summary {
    Summary {
        experiment: cfg.experiment,
        environment: cfg.label.clone(),
        lod: cfg.layout.lod,
        objective_m: None,
        min_power_watts: None,
        antennas: None,
        certificate_passed: None,
        output_dir: cfg.output_dir(),
        details: serde_json::Value::Null,
        lines: Vec::new(),
    }
}

fn solved(cfg: &Resolved) -> Result<SolvedInstance, CliError> {
    let instance = Instance::with_layout(cfg.room, cfg.layout).map_err(config_err)?;
    solve_instance(instance, &cfg.solve).map_err(solver_err)
}

fn solve(cfg: &Resolved) -> Result<(Summary, Vec<Output>), CliError> {
    let s = solved(cfg)?;
    let watts = evaluate_min_power(&s.solution.allocation, &s.instance.gains, &cfg.params).map_err(solver_err)?;
    let row = SolveRow {
        environment: cfg.label.clone(),
        dimensionality: cfg.layout.dimensionality.to_string(),
        lod: cfg.layout.lod,
        objective_m: s.solution.objective_m,
        min_power_watts: watts,
        antennas: s.antennas,
        dual_bound: s.certificate.dual_bound,
        certificate_passed: s.certificate.passed,
    };
    let mut summary = base_summary(cfg);
    summary.objective_m = Some(s.solution.objective_m);
    summary.min_power_watts = Some(watts);
    summary.antennas = Some(s.antennas);
    summary.certificate_passed = Some(s.certificate.passed);
    summary.details = serde_json::json!({ "certificate": s.certificate, "stats": s.solution.stats });
    summary.lines.push(headline(s.antennas, watts, s.certificate.passed));
    let meta = heatmap_meta(cfg, SchemeId::MOpt, &s.solution.allocation, &s)?;
    let outputs = vec![
        Output::SolveRow(row),
        Output::Certificate(format!("certificate_{}.csv", cfg.label), s.certificate.clone()),
        Output::Heatmap(
            format!("heatmap_{}.csv", cfg.label),
            s.solution.allocation.clone(),
            s.instance.tx_grid.clone(),
            meta,
        ),
    ];
    Ok((summary, outputs))
}

fn heatmap_meta(
    cfg: &Resolved,
    scheme: SchemeId,
    allocation: &PowerAllocation,
    s: &SolvedInstance,
) -> Result<HeatmapMeta, CliError> {
    Ok(HeatmapMeta {
        environment: cfg.label.clone(),
        room: cfg.room,
        dimensionality: cfg.layout.dimensionality,
        lod: cfg.layout.lod,
        scheme: scheme.label().to_string(),
        objective_m: s.instance.gains.min_received(allocation.weights()).map_err(solver_err)?,
        antennas: wpt_core::certificate::allocation_structure(allocation, &s.instance.tx_grid)
            .map_err(solver_err)?
            .nonzero_count,
    })
}

fn sweep(cfg: &Resolved) -> Result<(Summary, Vec<Output>), CliError> {
    Instance::with_layout(cfg.room, wpt_core::geometry::ArrayLayout { lod: cfg.lods[0], ..cfg.layout })
        .map_err(config_err)?;
    let series = run_lod_sweep(&cfg.room, cfg.layout.dimensionality, &cfg.lods, &cfg.solve).map_err(solver_err)?;
    let mut summary = base_summary(cfg);
    summary.lod = *cfg.lods.last().expect("lods are nonempty");
    summary.objective_m = series.objectives.last().copied();
    summary.antennas = series.antenna_counts.last().copied();
    summary.certificate_passed = Some(series.certified.iter().all(|c| *c));
    summary.details = serde_json::to_value(&series).map_err(io_err)?;
    for i in 0..series.lods.len() {
        let diff = series.rel_diffs[i].map_or("-".to_string(), |d| format!("{d:.4}%"));
        summary.lines.push(format!(
            "lod {:>4}: m = {:.10}, rel diff {diff}, antennas {}, certificate {}",
            series.lods[i],
            series.objectives[i],
            series.antenna_counts[i],
            verdict(series.certified[i])
        ));
    }
    Ok((summary, vec![Output::Sweep(series)]))
}

fn compare(cfg: &Resolved) -> Result<(Summary, Vec<Output>), CliError> {
    let rooms: Vec<_> = cfg
        .environments
        .iter()
        .map(|e| (e.label().to_string(), e.room()))
        .collect();
    for (_, room) in &rooms {
        let layout = wpt_core::geometry::ArrayLayout::full_ceiling(room, cfg.layout.dimensionality, cfg.layout.lod);
        layout.validate(room).map_err(config_err)?;
    }
    let cmp = run_scheme_comparison(
        &rooms,
        cfg.layout.dimensionality,
        cfg.layout.lod,
        &cfg.params,
        cfg.percentile,
        &cfg.solve,
    )
    .map_err(solver_err)?;
    let rows: Vec<SchemeRow> = cmp
        .rows
        .into_iter()
        .filter(|r| cfg.schemes.contains(&r.result.scheme))
        .collect();
    let mut summary = base_summary(cfg);
    summary.environment = rooms.iter().map(|r| r.0.as_str()).collect::<Vec<_>>().join(",");
    summary.certificate_passed = Some(cmp.certificates.iter().all(|(_, c)| c.passed));
    summary.details = serde_json::json!({
        "rows": rows.iter().map(|r| serde_json::json!({
            "environment": r.environment,
            "scheme": r.result.scheme,
            "min_power_watts": r.result.min_power_watts,
            "loss_vs_opt": r.result.loss_vs_opt,
            "antennas": r.antennas,
        })).collect::<Vec<_>>(),
    });
    for r in &rows {
        summary.lines.push(format!(
            "{} {:<6} min power {:.4e} W, loss {:.3}, antennas {}",
            r.environment, r.result.scheme, r.result.min_power_watts, r.result.loss_vs_opt, r.antennas
        ));
    }
    for (env, c) in &cmp.certificates {
        summary.lines.push(format!("{env} M-OPT certificate: {}", verdict(c.passed)));
    }
    let mut outputs = vec![Output::Schemes(rows)];
    outputs.extend(
        cmp.certificates
            .into_iter()
            .map(|(env, c)| Output::Certificate(format!("certificate_{env}.csv"), c)),
    );
    Ok((summary, outputs))
}

fn fading(cfg: &Resolved) -> Result<(Summary, Vec<Output>), CliError> {
    Instance::with_layout(cfg.room, cfg.layout).map_err(config_err)?;
    let report = run_fading_ensemble(&cfg.room, cfg.layout.dimensionality, &cfg.params, &cfg.fading, &cfg.solve)
        .map_err(solver_err)?;
    let mut summary = base_summary(cfg);
    summary.antennas = Some(report.los_antennas);
    summary.lines.push(format!(
        "{} realizations at lod {}: relative performance {:.3}% (CoV {:.3}%)",
        report.realizations, report.lod, report.mean_relative_performance, report.performance_cov
    ));
    summary.lines.push(format!(
        "support fraction: LoS {:.3}%, fading {:.3}% (CoV {:.3}%)",
        report.los_support_fraction, report.mean_support_fraction, report.support_cov
    ));
    summary.details = serde_json::json!({
        "realizations": report.realizations,
        "mode": report.mode,
        "seed_base": report.seed_base,
        "rician_k": report.rician_k,
        "los_support_fraction": report.los_support_fraction,
        "mean_support_fraction": report.mean_support_fraction,
        "support_cov": report.support_cov,
        "mean_relative_performance": report.mean_relative_performance,
        "performance_cov": report.performance_cov,
    });
    Ok((summary, vec![Output::Fading(Box::new(report))]))
}

fn scheme_results(cfg: &Resolved, s: &SolvedInstance) -> Result<Vec<SchemeResult>, CliError> {
    let all = compare_schemes(&s.instance.gains, &s.instance.tx_grid, &s.solution, &cfg.params, cfg.percentile)
        .map_err(solver_err)?;
    Ok(all.into_iter().filter(|r| cfg.schemes.contains(&r.scheme)).collect())
}

fn heatmap(cfg: &Resolved) -> Result<(Summary, Vec<Output>), CliError> {
    let s = solved(cfg)?;
    let results = scheme_results(cfg, &s)?;
    let mut summary = base_summary(cfg);
    summary.objective_m = Some(s.solution.objective_m);
    summary.antennas = Some(s.antennas);
    summary.certificate_passed = Some(s.certificate.passed);
    let mut outputs = vec![Output::Certificate(format!("certificate_{}.csv", cfg.label), s.certificate.clone())];
    let mut rows = Vec::new();
    for r in &results {
        let meta = heatmap_meta(cfg, r.scheme, &r.allocation, &s)?;
        summary.lines.push(format!(
            "{:<6} antennas {}, min power {:.4e} W",
            r.scheme, meta.antennas, r.min_power_watts
        ));
        rows.push(SchemeRow {
            environment: cfg.label.clone(),
            height_to_width: cfg.room.height_to_width(),
            result: r.clone(),
            antennas: meta.antennas,
        });
        outputs.push(Output::Heatmap(
            format!("heatmap_{}{}.csv", cfg.label, scheme_suffix(r.scheme)),
            r.allocation.clone(),
            s.instance.tx_grid.clone(),
            meta,
        ));
    }
    summary.details = serde_json::json!({ "schemes": results.iter().map(|r| r.scheme).collect::<Vec<_>>() });
    outputs.push(Output::Schemes(rows));
    Ok((summary, outputs))
}

fn allocation_from_heatmap(path: &Path, n_tx: usize) -> Result<PowerAllocation, CliError> {
    let cells: Vec<f64> = read_heatmap(path).map_err(config_err)?.into_iter().flatten().collect();
    if cells.len() != n_tx {
        return Err(CliError::Config(ConfigError::Invalid(format!(
            "allocation {} has {} cells, the transmit grid has {n_tx}",
            path.display(),
            cells.len()
        ))));
    }
    PowerAllocation::normalized(cells).map_err(config_err)
}

fn certify(cfg: &Resolved) -> Result<(Summary, Vec<Output>), CliError> {
    let mut summary = base_summary(cfg);
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    let mut record = |source: String, file: String, c: OptimalityCertificate, lines: &mut Vec<String>| {
        lines.push(format!(
            "{source}: m = {:.10}, bound {:.10}, excess {:.3e}, certificate: {}",
            c.objective_m,
            c.dual_bound,
            c.max_fbar_excess,
            verdict(c.passed)
        ));
        rows.push(CertifyRow {
            source,
            objective_m: c.objective_m,
            dual_bound: c.dual_bound,
            max_fbar_excess: c.max_fbar_excess,
            support_deviation: c.support_deviation,
            passed: c.passed,
        });
        outputs.push(Output::Certificate(file, c));
    };
    if let Some(path) = &cfg.allocation {
        let instance = Instance::with_layout(cfg.room, cfg.layout).map_err(config_err)?;
        let alloc = allocation_from_heatmap(path, instance.gains.n_tx())?;
        let c = verify_allocation(&alloc, &instance.gains, TOL_CERT).map_err(solver_err)?;
        record(
            path.display().to_string(),
            format!("certificate_{}.csv", cfg.label),
            c,
            &mut summary.lines,
        );
    } else {
        let s = solved(cfg)?;
        for r in scheme_results(cfg, &s)? {
            // The solver's own duals certify M-OPT; other allocations get
            // the uniform weights on their worst receivers.
            let c = if r.scheme == SchemeId::MOpt {
                s.certificate.clone()
            } else {
                verify_allocation(&r.allocation, &s.instance.gains, TOL_CERT).map_err(solver_err)?
            };
            record(
                r.scheme.label().to_string(),
                format!("certificate_{}{}.csv", cfg.label, scheme_suffix(r.scheme)),
                c,
                &mut summary.lines,
            );
        }
    }
    summary.certificate_passed = Some(rows.iter().all(|r| r.passed));
    summary.details = serde_json::to_value(&rows).map_err(io_err)?;
    outputs.push(Output::CertifyRows(rows));
    Ok((summary, outputs))
}

fn write_outputs(cfg: &Resolved, outputs: &[Output]) -> wpt_core::Result<()> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    let report = dir.join("report.csv");
    for out in outputs {
        match out {
            Output::Sweep(series) => write_sweep_csv(series, &report)?,
            Output::Schemes(rows) => write_scheme_csv(rows, &report)?,
            Output::Certificate(name, c) => write_certificate_csv(c, &dir.join(name))?,
            Output::Heatmap(name, alloc, grid, meta) => emit_heatmap(alloc, grid, meta, &dir.join(name))?,
            Output::SolveRow(row) => write_table(
                &report,
                &[
                    "environment",
                    "dimensionality",
                    "lod",
                    "objective_m",
                    "min_power_watts",
                    "antennas",
                    "dual_bound",
                    "certificate_passed",
                ],
                &[vec![
                    row.environment.clone(),
                    row.dimensionality.clone(),
                    row.lod.to_string(),
                    fmt_sig(row.objective_m),
                    fmt_sig(row.min_power_watts),
                    row.antennas.to_string(),
                    fmt_sig(row.dual_bound),
                    row.certificate_passed.to_string(),
                ]],
            )?,
            Output::CertifyRows(rows) => write_table(
                &report,
                &[
                    "source",
                    "objective_m",
                    "dual_bound",
                    "max_fbar_excess",
                    "support_deviation",
                    "passed",
                ],
                &rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.source.clone(),
                            fmt_sig(r.objective_m),
                            fmt_sig(r.dual_bound),
                            fmt_sig(r.max_fbar_excess),
                            fmt_sig(r.support_deviation),
                            r.passed.to_string(),
                        ]
                    })
                    .collect::<Vec<_>>(),
            )?,
            Output::Fading(r) => {
                write_fading_summary_csv(r, &report)?;
                write_fading_realizations_csv(r, &dir.join("realizations.csv"))?;
            }
        }
    }
    fs::write(dir.join("config.toml"), cfg.echo.to_toml_string())?;
    Ok(())
}
