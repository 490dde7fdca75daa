//! CSV and JSON output for experiment results.
//!
//! Every number is written with 12 significant digits via [`fmt_sig`], so
//! reruns with the same configuration produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FadingEnsembleReport, LodSweepSeries, SchemeRow};
use crate::certificate::OptimalityCertificate;
use crate::error::{invalid, Result};
use crate::geometry::{Dimensionality, LatticeGrid, RoomGeometry};
use crate::solver::PowerAllocation;

const SIG_DIGITS: i32 = 12;

/// `%.12g`-style formatting without trailing zeros.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..SIG_DIGITS).contains(&exp) {
        let decimals = (SIG_DIGITS - 1 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{:.*e}", (SIG_DIGITS - 1) as usize, x);
        let (mantissa, exponent) = s.split_once('e').expect("scientific format has an exponent");
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}e{exponent}")
    }
}

fn opt_sig(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Plain CSV table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(invalid("table row length differs from its header"));
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `lod, objective_m, rel_diff_percent, antennas, certified`.
pub fn write_sweep_csv(series: &LodSweepSeries, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lod", "objective_m", "rel_diff_percent", "antennas", "certified"])?;
    for i in 0..series.lods.len() {
        w.write_record([
            series.lods[i].to_string(),
            fmt_sig(series.objectives[i]),
            opt_sig(series.rel_diffs[i]),
            series.antenna_counts[i].to_string(),
            series.certified[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `environment, height_to_width, scheme, min_power_watts, loss_vs_opt, antennas`.
pub fn write_scheme_csv(rows: &[SchemeRow], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "environment",
        "height_to_width",
        "scheme",
        "min_power_watts",
        "loss_vs_opt",
        "antennas",
    ])?;
    for row in rows {
        w.write_record([
            row.environment.clone(),
            fmt_sig(row.height_to_width),
            row.result.scheme.to_string(),
            fmt_sig(row.result.min_power_watts),
            fmt_sig(row.result.loss_vs_opt),
            row.antennas.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column `metric, value` summary of an ensemble.
pub fn write_fading_summary_csv(report: &FadingEnsembleReport, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mode = serde_json::to_value(report.mode)?;
    let rows = [
        ("realizations", report.realizations.to_string()),
        ("lod", report.lod.to_string()),
        ("nlos_mode", mode.as_str().unwrap_or_default().to_string()),
        ("seed_base", report.seed_base.to_string()),
        ("rician_k", fmt_sig(report.rician_k)),
        ("avg_distance_m", fmt_sig(report.avg_distance)),
        ("grid_cells", report.grid_cells.to_string()),
        ("los_antennas", report.los_antennas.to_string()),
        ("los_support_fraction_percent", fmt_sig(report.los_support_fraction)),
        ("mean_support_fraction_percent", fmt_sig(report.mean_support_fraction)),
        ("support_cov_percent", fmt_sig(report.support_cov)),
        ("mean_relative_performance_percent", fmt_sig(report.mean_relative_performance)),
        ("performance_cov_percent", fmt_sig(report.performance_cov)),
    ];
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "value"])?;
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `index, los_allocation_m, reoptimized_m, ratio, reoptimized_antennas`.
pub fn write_fading_realizations_csv(report: &FadingEnsembleReport, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "index",
        "los_allocation_m",
        "reoptimized_m",
        "ratio",
        "reoptimized_antennas",
    ])?;
    for o in &report.outcomes {
        w.write_record([
            o.index.to_string(),
            fmt_sig(o.los_allocation_m),
            fmt_sig(o.reoptimized_m),
            fmt_sig(o.los_allocation_m / o.reoptimized_m),
            o.reoptimized_antennas.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_certificate_csv(cert: &OptimalityCertificate, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let rows = [
        ("objective_m", fmt_sig(cert.objective_m)),
        ("dual_bound", fmt_sig(cert.dual_bound)),
        ("max_fbar_excess", fmt_sig(cert.max_fbar_excess)),
        ("support_deviation", fmt_sig(cert.support_deviation)),
        ("symmetry_residual", fmt_sig(cert.symmetry_residual)),
        ("complementarity", fmt_sig(cert.complementarity)),
        ("support_threshold", fmt_sig(cert.support_threshold)),
        ("tol_cert", fmt_sig(cert.tol_cert)),
        ("tol_sym", fmt_sig(cert.tol_sym)),
        ("passed", cert.passed.to_string()),
    ];
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "value"])?;
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Sidecar describing a heatmap CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub environment: String,
    pub room: RoomGeometry,
    pub dimensionality: Dimensionality,
    pub lod: usize,
    pub scheme: String,
    pub objective_m: f64,
    pub antennas: usize,
}

/// Where [`emit_heatmap`] puts the metadata for `csv_path`.
pub fn heatmap_sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Grid-shaped CSV (row = `a_z` index, column = `a_x` index, cell = percent
/// of total power) and a JSON sidecar next to it.
pub fn emit_heatmap(
    allocation: &PowerAllocation,
    tx_grid: &LatticeGrid,
    meta: &HeatmapMeta,
    path: &Path,
) -> Result<()> {
    let (nz, nx) = tx_grid
        .shape()
        .ok_or_else(|| invalid("heatmaps need a rectangular transmit lattice"))?;
    if allocation.len() != nz * nx {
        return Err(invalid("allocation does not match the transmit lattice"));
    }
    ensure_parent(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for iz in 0..nz {
        let row: Vec<String> = allocation.weights()[iz * nx..(iz + 1) * nx]
            .iter()
            .map(|p| fmt_sig(100.0 * p))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    fs::write(heatmap_sidecar_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Reads a heatmap CSV back as percent values, `[row][col]`.
pub fn read_heatmap(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    r.records()
        .map(|rec| {
            rec?.iter()
                .map(|c| c.parse::<f64>().map_err(|e| invalid(format!("bad heatmap cell {c:?}: {e}"))))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_formatting() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(100.0), "100");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig(1.6491147090e-6), "1.649114709e-6");
        assert_eq!(fmt_sig(-2.5), "-2.5");
        assert_eq!(fmt_sig(123456789012345.0), "1.23456789012e14");
        assert_eq!(fmt_sig(100.0 / 9.0), "11.1111111111");
    }
}
