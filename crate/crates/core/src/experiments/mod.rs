//! Reproduction studies: LoD convergence and antenna counts, scheme
//! comparison, fading ensembles, and the volume check of the critical
//! receiver plane. File output lives in [`report`].

pub mod report;

use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::certificate::{allocation_structure, verify_optimality, OptimalityCertificate, TOL_CERT};
use crate::channel::{gain_matrix_shared, GainMatrix, PhysicalParams, RicianSampler};
use crate::error::{invalid, Result};
use crate::geometry::{
    build_rx_grid, build_tx_grid, critical_plane_grid, ArrayLayout, Dimensionality, LatticeGrid, RoomGeometry,
    RxMode,
};
use crate::schemes::{compare_schemes, SchemeResult};
use crate::solver::{mirror_group, solve_maxmin_with, solve_symmetric_reduced_with, MaxMinSolution, SolveOptions};

/// Grids and LoS gains for one room and array layout.
#[derive(Debug, Clone)]
pub struct Instance {
    pub room: RoomGeometry,
    pub layout: ArrayLayout,
    pub tx_grid: Arc<LatticeGrid>,
    pub rx_grid: Arc<LatticeGrid>,
    pub gains: GainMatrix,
}

impl Instance {
    /// Full-ceiling array; receivers on the floor at the same lod.
    pub fn new(room: RoomGeometry, dimensionality: Dimensionality, lod: usize) -> Result<Self> {
        Self::with_layout(room, ArrayLayout::full_ceiling(&room, dimensionality, lod))
    }

    pub fn with_layout(room: RoomGeometry, layout: ArrayLayout) -> Result<Self> {
        layout.validate(&room)?;
        let tx_grid = Arc::new(build_tx_grid(&layout, &room)?);
        let rx_grid = Arc::new(critical_plane_grid(&room, layout.lod)?);
        let gains = gain_matrix_shared(tx_grid.clone(), rx_grid.clone())?;
        Ok(Self {
            room,
            layout,
            tx_grid,
            rx_grid,
            gains,
        })
    }
}

/// Solves with the symmetry-reduced path when the instance admits it.
pub fn solve_gains(gains: &GainMatrix, opts: &SolveOptions) -> Result<MaxMinSolution> {
    if opts.symmetrize && mirror_group(gains).is_some() {
        solve_symmetric_reduced_with(gains, opts)
    } else {
        solve_maxmin_with(gains, opts)
    }
}

/// Solution, certificate and thresholded antenna count for one instance.
#[derive(Debug, Clone)]
pub struct SolvedInstance {
    pub instance: Instance,
    pub solution: MaxMinSolution,
    pub certificate: OptimalityCertificate,
    pub antennas: usize,
}

pub fn solve_instance(instance: Instance, opts: &SolveOptions) -> Result<SolvedInstance> {
    let solution = solve_gains(&instance.gains, opts)?;
    let certificate = verify_optimality(&solution, &instance.gains, TOL_CERT)?;
    let antennas = allocation_structure(&solution.allocation, &instance.tx_grid)?.nonzero_count;
    Ok(SolvedInstance {
        instance,
        solution,
        certificate,
        antennas,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodSweepSeries {
    pub lods: Vec<usize>,
    /// Normalised optimum `m` per lod.
    pub objectives: Vec<f64>,
    /// `|m_i - m_{i-1}| / m_i * 100`; `None` for the first lod.
    pub rel_diffs: Vec<Option<f64>>,
    pub antenna_counts: Vec<usize>,
    pub certified: Vec<bool>,
}

pub fn run_lod_sweep(
    room: &RoomGeometry,
    dimensionality: Dimensionality,
    lods: &[usize],
    opts: &SolveOptions,
) -> Result<LodSweepSeries> {
    if lods.is_empty() || lods.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("lods must be nonempty and strictly increasing"));
    }
    let mut series = LodSweepSeries {
        lods: lods.to_vec(),
        objectives: Vec::with_capacity(lods.len()),
        rel_diffs: Vec::with_capacity(lods.len()),
        antenna_counts: Vec::with_capacity(lods.len()),
        certified: Vec::with_capacity(lods.len()),
    };
    for &lod in lods {
        let solved = solve_instance(Instance::new(*room, dimensionality, lod)?, opts)?;
        let m = solved.solution.objective_m;
        series
            .rel_diffs
            .push(series.objectives.last().map(|prev| (m - prev).abs() / m * 100.0));
        series.objectives.push(m);
        series.antenna_counts.push(solved.antennas);
        series.certified.push(solved.certificate.passed);
    }
    Ok(series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRow {
    pub environment: String,
    pub height_to_width: f64,
    pub result: SchemeResult,
    /// Antennas at or above the support threshold.
    pub antennas: usize,
}

/// Scheme rows for every room plus the certificate of each room's optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeComparison {
    /// Ordered by room, then scheme.
    pub rows: Vec<SchemeRow>,
    pub certificates: Vec<(String, OptimalityCertificate)>,
}

/// Solves each room on its own thread and evaluates every scheme against
/// its optimum.
pub fn run_scheme_comparison(
    rooms: &[(String, RoomGeometry)],
    dimensionality: Dimensionality,
    lod: usize,
    params: &PhysicalParams,
    percentile: f64,
    opts: &SolveOptions,
) -> Result<SchemeComparison> {
    params.validate()?;
    let compare_room = |label: &String, room: &RoomGeometry| -> Result<(Vec<SchemeRow>, OptimalityCertificate)> {
        let solved = solve_instance(Instance::new(*room, dimensionality, lod)?, opts)?;
        let results = compare_schemes(
            &solved.instance.gains,
            &solved.instance.tx_grid,
            &solved.solution,
            params,
            percentile,
        )?;
        let rows = results
            .into_iter()
            .map(|result| {
                let antennas = allocation_structure(&result.allocation, &solved.instance.tx_grid)?.nonzero_count;
                Ok(SchemeRow {
                    environment: label.clone(),
                    height_to_width: room.height_to_width(),
                    result,
                    antennas,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((rows, solved.certificate))
    };
    let per_room: Vec<Result<_>> = thread::scope(|s| {
        let handles: Vec<_> = rooms
            .iter()
            .map(|(label, room)| s.spawn(move || compare_room(label, room)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scheme comparison worker panicked"))
            .collect()
    });
    let mut out = SchemeComparison {
        rows: Vec::new(),
        certificates: Vec::new(),
    };
    for ((label, _), result) in rooms.iter().zip(per_room) {
        let (rows, cert) = result?;
        out.rows.extend(rows);
        out.certificates.push((label.clone(), cert));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlosMode {
    /// One scattered component per realization, common to all receivers.
    Shared,
    /// A fresh scattered component for every receiver position.
    Independent,
}

impl NlosMode {
    pub fn is_shared(self) -> bool {
        self == NlosMode::Shared
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingConfig {
    pub lod: usize,
    pub realizations: usize,
    pub seed_base: u64,
    pub mode: NlosMode,
    /// Worker threads; 0 means all available cores.
    pub threads: usize,
}

impl Default for FadingConfig {
    fn default() -> Self {
        Self {
            lod: 41,
            realizations: 200,
            seed_base: 0,
            mode: NlosMode::Shared,
            threads: 0,
        }
    }
}

/// Outcome of one fading draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizationOutcome {
    pub index: usize,
    /// Normalised worst-receiver gain of the LoS-optimal allocation.
    pub los_allocation_m: f64,
    /// Optimum re-solved on the faded gains.
    pub reoptimized_m: f64,
    pub reoptimized_antennas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingEnsembleReport {
    pub realizations: usize,
    pub lod: usize,
    pub mode: NlosMode,
    pub seed_base: u64,
    pub rician_k: f64,
    pub avg_distance: f64,
    pub grid_cells: usize,
    pub los_antennas: usize,
    pub los_support_fraction: f64,
    /// Percent of grid cells, averaged over realizations.
    pub mean_support_fraction: f64,
    /// Percent.
    pub support_cov: f64,
    /// `100 * mean(LoS-allocation power) / mean(re-optimised power)`.
    pub mean_relative_performance: f64,
    /// CoV of the per-realization ratios, percent.
    pub performance_cov: f64,
    pub outcomes: Vec<RealizationOutcome>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n - 1) standard deviation over mean.
pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
    var.sqrt() / mu
}

fn worker_count(requested: usize, jobs: usize) -> usize {
    let available = thread::available_parallelism().map_or(1, |n| n.get());
    let n = if requested == 0 { available } else { requested };
    n.clamp(1, jobs.max(1))
}

pub fn run_fading_ensemble(
    room: &RoomGeometry,
    dimensionality: Dimensionality,
    params: &PhysicalParams,
    cfg: &FadingConfig,
    opts: &SolveOptions,
) -> Result<FadingEnsembleReport> {
    if cfg.realizations < 2 {
        return Err(invalid("a fading ensemble needs at least two realizations"));
    }
    params.validate()?;
    let los = solve_instance(Instance::new(*room, dimensionality, cfg.lod)?, opts)?;
    let sampler = RicianSampler::new(&los.instance.gains, params)?;
    let weights = los.solution.allocation.weights();
    let tx_grid = &los.instance.tx_grid;

    let run_one = |index: usize| -> Result<RealizationOutcome> {
        let faded = sampler
            .sample(cfg.seed_base, index as u64, cfg.mode.is_shared())
            .faded_gains;
        let los_allocation_m = faded.min_received(weights)?;
        let reopt = solve_gains(&faded, opts)?;
        Ok(RealizationOutcome {
            index,
            los_allocation_m,
            reoptimized_m: reopt.objective_m,
            reoptimized_antennas: allocation_structure(&reopt.allocation, tx_grid)?.nonzero_count,
        })
    };

    let workers = worker_count(cfg.threads, cfg.realizations);
    let mut slots: Vec<Option<Result<RealizationOutcome>>> = (0..cfg.realizations).map(|_| None).collect();
    thread::scope(|s| {
        let chunks: Vec<_> = slots
            .chunks_mut(cfg.realizations.div_ceil(workers))
            .enumerate()
            .collect();
        let chunk_len = cfg.realizations.div_ceil(workers);
        for (c, chunk) in chunks {
            let run_one = &run_one;
            s.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run_one(c * chunk_len + k));
                }
            });
        }
    });
    let outcomes = slots
        .into_iter()
        .map(|s| s.expect("every realization slot is filled"))
        .collect::<Result<Vec<_>>>()?;

    let cells = tx_grid.len() as f64;
    let fractions: Vec<f64> = outcomes
        .iter()
        .map(|o| 100.0 * o.reoptimized_antennas as f64 / cells)
        .collect();
    let los_powers: Vec<f64> = outcomes.iter().map(|o| o.los_allocation_m).collect();
    let reopt_powers: Vec<f64> = outcomes.iter().map(|o| o.reoptimized_m).collect();
    let ratios: Vec<f64> = outcomes
        .iter()
        .map(|o| o.los_allocation_m / o.reoptimized_m)
        .collect();
    let support_cov = if mean(&fractions) > 0.0 {
        100.0 * coefficient_of_variation(&fractions)
    } else {
        0.0
    };
    Ok(FadingEnsembleReport {
        realizations: cfg.realizations,
        lod: cfg.lod,
        mode: cfg.mode,
        seed_base: cfg.seed_base,
        rician_k: params.rician_k,
        avg_distance: sampler.avg_distance(),
        grid_cells: tx_grid.len(),
        los_antennas: los.antennas,
        los_support_fraction: 100.0 * los.antennas as f64 / cells,
        mean_support_fraction: mean(&fractions),
        support_cov,
        mean_relative_performance: 100.0 * mean(&los_powers) / mean(&reopt_powers),
        performance_cov: 100.0 * coefficient_of_variation(&ratios),
        outcomes,
    })
}

/// Worst received gain over a stack of receiver planes next to the
/// critical-plane value, for one allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeCheck {
    pub critical_plane_min: f64,
    pub volume_min: f64,
    /// Height of the plane attaining the volume minimum.
    pub argmin_height: f64,
    pub rel_diff: f64,
}

pub fn volume_check(
    instance: &Instance,
    weights: &[f64],
    levels: usize,
    lowest_y: f64,
) -> Result<VolumeCheck> {
    let critical = instance.gains.min_received(weights)?;
    let planes = build_rx_grid(&instance.room, instance.layout.lod, RxMode::Volume { levels, lowest_y })?;
    let mut volume_min = f64::INFINITY;
    let mut argmin_height = f64::NAN;
    for plane in planes {
        let y = plane.plane_y();
        let g = gain_matrix_shared(instance.tx_grid.clone(), Arc::new(plane))?;
        let v = g.min_received(weights)?;
        if v < volume_min {
            volume_min = v;
            argmin_height = y;
        }
    }
    Ok(VolumeCheck {
        critical_plane_min: critical,
        volume_min,
        argmin_height,
        rel_diff: (volume_min - critical).abs() / critical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Environment;
    use approx::assert_relative_eq;

    #[test]
    fn cov_uses_sample_deviation() {
        // mean 2, sample variance 1
        assert_relative_eq!(coefficient_of_variation(&[1.0, 2.0, 3.0]), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn sweep_rejects_unsorted_lods() {
        let room = Environment::Ratio1To1.room();
        assert!(run_lod_sweep(&room, Dimensionality::TwoD, &[41, 21], &SolveOptions::default()).is_err());
    }

    #[test]
    fn sweep_reports_consecutive_differences() {
        let room = Environment::Ratio1To3.room();
        let s = run_lod_sweep(&room, Dimensionality::OneD, &[11, 21], &SolveOptions::default()).unwrap();
        assert_eq!(s.rel_diffs[0], None);
        let expected = (s.objectives[1] - s.objectives[0]).abs() / s.objectives[1] * 100.0;
        assert_eq!(s.rel_diffs[1], Some(expected));
    }
}
