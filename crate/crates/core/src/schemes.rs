//! Benchmark allocations and physical received-power evaluation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{GainMatrix, PhysicalParams};
use crate::error::{invalid, Error, Result};
use crate::geometry::LatticeGrid;
use crate::solver::{MaxMinSolution, PowerAllocation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeId {
    /// Max-min optimal allocation.
    #[serde(rename = "M-OPT")]
    MOpt,
    /// One antenna at the ceiling centre.
    #[serde(rename = "M-FF")]
    MFf,
    /// Equal power on every grid point.
    #[serde(rename = "M-UNI")]
    MUni,
    /// Optimal allocation pruned below the 75th percentile.
    #[serde(rename = "M-S75")]
    MS75,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [SchemeId::MOpt, SchemeId::MFf, SchemeId::MUni, SchemeId::MS75];

    pub fn label(self) -> &'static str {
        match self {
            SchemeId::MOpt => "M-OPT",
            SchemeId::MFf => "M-FF",
            SchemeId::MUni => "M-UNI",
            SchemeId::MS75 => "M-S75",
        }
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('_', "-");
        let key = key.strip_prefix("M-").unwrap_or(&key);
        match key {
            "OPT" => Ok(SchemeId::MOpt),
            "FF" => Ok(SchemeId::MFf),
            "UNI" => Ok(SchemeId::MUni),
            "S75" => Ok(SchemeId::MS75),
            _ => Err(invalid(format!("unknown scheme '{s}'"))),
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: SchemeId,
    pub allocation: PowerAllocation,
    pub min_power_watts: f64,
    pub loss_vs_opt: f64,
}

/// All power on the grid point nearest the ceiling centre.
pub fn scheme_far_field(tx_grid: &LatticeGrid) -> Result<PowerAllocation> {
    let i = tx_grid
        .nearest(0.0, 0.0)
        .ok_or_else(|| invalid("far-field scheme needs a nonempty grid"))?;
    PowerAllocation::single(tx_grid.len(), i)
}

pub fn scheme_uniform(tx_grid: &LatticeGrid) -> Result<PowerAllocation> {
    PowerAllocation::uniform(tx_grid.len())
}

/// Nearest-rank percentile of the nonzero weights; antennas strictly below
/// it are removed and the rest renormalised.
pub fn scheme_percentile_prune(opt: &PowerAllocation, percentile: f64) -> Result<PowerAllocation> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(invalid(format!("percentile must lie in (0, 100], got {percentile}")));
    }
    let mut nonzero: Vec<f64> = opt.weights().iter().copied().filter(|w| *w > 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::Degenerate("allocation has empty support".into()));
    }
    nonzero.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * nonzero.len() as f64).ceil().max(1.0) as usize;
    let cut = nonzero[rank - 1];
    let kept = opt
        .weights()
        .iter()
        .map(|&w| if w >= cut { w } else { 0.0 })
        .collect();
    PowerAllocation::normalized(kept)
}

/// Worst-receiver power in watts: `P_tx * calibration * min_r (F p)_r`.
pub fn evaluate_min_power(allocation: &PowerAllocation, gains: &GainMatrix, params: &PhysicalParams) -> Result<f64> {
    Ok(params.total_tx_power * params.gain_calibration * gains.min_received(allocation.weights())?)
}

pub fn loss_ratio(scheme_power: f64, opt_power: f64) -> Result<f64> {
    if !(opt_power > 0.0) {
        return Err(invalid("optimal power must be positive"));
    }
    Ok(scheme_power / opt_power)
}

/// Evaluates all four schemes against a solved optimum.
///
/// M-OPT is the solver's allocation as returned, and M-S75 prunes that same
/// allocation: the percentile is taken over every nonzero weight the solver
/// produced, including residue far below the support threshold.
pub fn compare_schemes(
    gains: &GainMatrix,
    tx_grid: &LatticeGrid,
    opt: &MaxMinSolution,
    params: &PhysicalParams,
    percentile: f64,
) -> Result<Vec<SchemeResult>> {
    if tx_grid.len() != gains.n_tx() {
        return Err(Error::DimensionMismatch {
            expected: gains.n_tx(),
            actual: tx_grid.len(),
        });
    }
    let allocations = [
        (SchemeId::MOpt, opt.allocation.clone()),
        (SchemeId::MFf, scheme_far_field(tx_grid)?),
        (SchemeId::MUni, scheme_uniform(tx_grid)?),
        (SchemeId::MS75, scheme_percentile_prune(&opt.allocation, percentile)?),
    ];
    let opt_power = evaluate_min_power(&opt.allocation, gains, params)?;
    allocations
        .into_iter()
        .map(|(scheme, allocation)| {
            let min_power_watts = evaluate_min_power(&allocation, gains, params)?;
            Ok(SchemeResult {
                scheme,
                loss_vs_opt: loss_ratio(min_power_watts, opt_power)?,
                min_power_watts,
                allocation,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::gain_matrix;
    use crate::geometry::{LatticeGrid, PlanePoint};
    use approx::assert_relative_eq;

    #[test]
    fn percentile_nearest_rank() {
        let a = PowerAllocation::new(vec![0.4, 0.0, 0.3, 0.2, 0.1]).unwrap();
        let p = scheme_percentile_prune(&a, 75.0).unwrap();
        assert_relative_eq!(p.weights()[0], 4.0 / 7.0, max_relative = 1e-15);
        assert_relative_eq!(p.weights()[2], 3.0 / 7.0, max_relative = 1e-15);
        assert_eq!(p.nonzero_count(), 2);
    }

    #[test]
    fn percentile_single_antenna_unchanged() {
        let a = PowerAllocation::single(3, 1).unwrap();
        assert_eq!(scheme_percentile_prune(&a, 75.0).unwrap(), a);
    }

    #[test]
    fn uniform_weights() {
        let g = LatticeGrid::from_points(
            (0..4).map(|i| PlanePoint { x: i as f64, z: 0.0 }).collect(),
            0.0,
            1.0,
        )
        .unwrap();
        assert_eq!(scheme_uniform(&g).unwrap().weights(), &[0.25; 4]);
    }

    #[test]
    fn far_field_picks_lowest_index_on_ties() {
        let g = LatticeGrid::from_points(
            vec![PlanePoint { x: 0.5, z: 0.0 }, PlanePoint { x: -0.5, z: 0.0 }],
            0.0,
            1.0,
        )
        .unwrap();
        assert_eq!(scheme_far_field(&g).unwrap().weights(), &[1.0, 0.0]);
    }

    #[test]
    fn single_pair_power() {
        let origin = vec![PlanePoint { x: 0.0, z: 0.0 }];
        let tx = LatticeGrid::from_points(origin.clone(), 0.0, 0.0).unwrap();
        let rx = LatticeGrid::from_points(origin, 2.0, 0.0).unwrap();
        let g = gain_matrix(&tx, &rx).unwrap();
        let params = PhysicalParams::reference();
        let a = PowerAllocation::new(vec![1.0]).unwrap();
        let expected = 10.0 * (0.0125 / (4.0 * std::f64::consts::PI)).powi(2) * 0.25;
        assert_relative_eq!(evaluate_min_power(&a, &g, &params).unwrap(), expected, max_relative = 1e-14);
        assert_relative_eq!(expected, 2.4736e-6, max_relative = 1e-4);
    }

    #[test]
    fn scheme_names_round_trip() {
        for id in SchemeId::ALL {
            assert_eq!(id.label().parse::<SchemeId>().unwrap(), id);
            assert_eq!(serde_json::to_string(&id).unwrap(), format!("\"{}\"", id.label()));
        }
        assert_eq!("m_s75".parse::<SchemeId>().unwrap(), SchemeId::MS75);
        assert!("M-X".parse::<SchemeId>().is_err());
    }

    #[test]
    fn loss_ratio_guards_zero() {
        assert_eq!(loss_ratio(1.0, 1.0).unwrap(), 1.0);
        assert!(loss_ratio(1.0, 0.0).is_err());
    }
}
