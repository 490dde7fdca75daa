//! Run configuration: TOML file, command-line overrides, and the resolved
//! form written back out as the config echo.
//!
//! Precedence is flags > file > built-in defaults. Every section and key is
//! optional in the file; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use wpt_core::channel::{friis_calibration, AverageDistance, PhysicalParams};
use wpt_core::experiments::{FadingConfig, NlosMode};
use wpt_core::geometry::{ArrayLayout, Dimensionality, Environment, RoomGeometry};
use wpt_core::schemes::SchemeId;
use wpt_core::solver::{SolveOptions, DEFAULT_TOL};

/// Environment variable naming the output root when neither the file nor
/// `--out` sets one.
pub const OUTPUT_ROOT_VAR: &str = "WPT_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "results";
pub const DEFAULT_LOD: usize = 81;
pub const DEFAULT_FADING_LOD: usize = 41;
pub const DEFAULT_SWEEP_LODS: [usize; 7] = [21, 31, 41, 51, 61, 71, 81];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Solve,
    Sweep,
    Compare,
    Fading,
    Heatmap,
    Certify,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::Sweep => "sweep",
            Experiment::Compare => "compare",
            Experiment::Fading => "fading",
            Experiment::Heatmap => "heatmap",
            Experiment::Certify => "certify",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomConfig {
    pub len_x: f64,
    pub len_y: f64,
    pub len_z: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dimensionality: Option<Dimensionality>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lod: Option<usize>,
    /// Array extents in metres; default is the whole ceiling.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extent_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extent_z: Option<f64>,
}

/// Unset entries follow from the wavelength as in [`PhysicalParams::for_wavelength`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_tx_power: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wavelength: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rx_aperture: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rician_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub element_area: Option<f64>,
    /// Overrides the free-space calibration `(lambda / 4 pi)^2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_calibration: Option<f64>,
    /// Fixed NLoS reference distance in metres; default is the mean pair distance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_distance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symmetrize: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lods: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub environments: Option<Vec<Environment>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub percentile: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FadingSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realizations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<NlosMode>,
    /// Worker threads; 0 uses every core. Not part of the results.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyConfig {
    /// Heatmap CSV (percent of total power per cell) to certify instead of
    /// a scheme's allocation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allocation: Option<PathBuf>,
}

/// On-disk configuration. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    /// Preset room; ignored when `room` is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub environment: Option<Environment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub room: Option<RoomConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schemes: Option<Vec<SchemeId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub layout: LayoutConfig,
    pub physical: PhysicalConfig,
    pub solver: SolverConfig,
    pub sweep: SweepConfig,
    pub compare: CompareConfig,
    pub fading: FadingSection,
    pub certify: CertifyConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    /// Fills every unset field, validating as it goes. `env_output_root`
    /// is consulted only when no output directory is set.
    pub fn resolve(&self, env_output_root: Option<PathBuf>) -> Result<Resolved, ConfigError> {
        let invalid = |e: wpt_core::Error| ConfigError::Invalid(e.to_string());
        let experiment = self
            .experiment
            .ok_or_else(|| ConfigError::Invalid("no experiment selected".into()))?;
        let environment = self.environment.unwrap_or(Environment::Ratio1To1);
        let room = match &self.room {
            Some(r) => RoomGeometry::new(r.len_x, r.len_y, r.len_z).map_err(invalid)?,
            None => environment.room(),
        };
        let label = match &self.room {
            Some(r) => format!("{}x{}x{}", r.len_x, r.len_y, r.len_z),
            None => environment.label().to_string(),
        };
        let default_lod = if experiment == Experiment::Fading {
            DEFAULT_FADING_LOD
        } else {
            DEFAULT_LOD
        };
        let layout = ArrayLayout {
            dimensionality: self.layout.dimensionality.unwrap_or(Dimensionality::TwoD),
            extent_x: self.layout.extent_x.unwrap_or(room.len_x),
            extent_z: self.layout.extent_z.unwrap_or(room.len_z),
            lod: self.layout.lod.unwrap_or(default_lod),
        };
        layout.validate(&room).map_err(invalid)?;

        let p = &self.physical;
        let mut params = PhysicalParams::for_wavelength(p.wavelength.unwrap_or(0.0125));
        if let Some(v) = p.total_tx_power {
            params.total_tx_power = v;
        }
        if let Some(v) = p.rx_aperture {
            params.rx_aperture = v;
        }
        if let Some(v) = p.rician_k {
            params.rician_k = v;
        }
        if let Some(v) = p.element_area {
            params.element_area = v;
        }
        params.gain_calibration = p.gain_calibration.unwrap_or(friis_calibration(params.wavelength));
        if let Some(d) = p.avg_distance {
            params.avg_distance = AverageDistance::Fixed(d);
        }
        params.validate().map_err(invalid)?;

        let tol = self.solver.tol.unwrap_or(DEFAULT_TOL);
        if !(tol > 0.0 && tol < 1.0) {
            return Err(ConfigError::Invalid(format!("solver tol must lie in (0, 1), got {tol}")));
        }
        let mut solve = SolveOptions::with_tol(tol);
        solve.symmetrize = self.solver.symmetrize.unwrap_or(true);

        let lods = self
            .sweep
            .lods
            .clone()
            .unwrap_or_else(|| DEFAULT_SWEEP_LODS.to_vec());
        if lods.is_empty() || lods.windows(2).any(|w| w[0] >= w[1]) || lods[0] == 0 {
            return Err(ConfigError::Invalid(
                "sweep lods must be positive and strictly increasing".into(),
            ));
        }
        let environments = self
            .compare
            .environments
            .clone()
            .unwrap_or_else(|| Environment::ALL.to_vec());
        if environments.is_empty() {
            return Err(ConfigError::Invalid("compare needs at least one environment".into()));
        }
        let percentile = self.compare.percentile.unwrap_or(75.0);
        if !(percentile > 0.0 && percentile <= 100.0) {
            return Err(ConfigError::Invalid(format!(
                "percentile must lie in (0, 100], got {percentile}"
            )));
        }
        let fading = FadingConfig {
            lod: layout.lod,
            realizations: self.fading.realizations.unwrap_or(200),
            seed_base: self.seed.unwrap_or(0),
            mode: self.fading.mode.unwrap_or(NlosMode::Shared),
            threads: self.fading.threads.unwrap_or(0),
        };
        if fading.realizations < 2 {
            return Err(ConfigError::Invalid("fading needs at least two realizations".into()));
        }
        // Certification defaults to the optimum alone; the other experiments
        // evaluate every scheme.
        let schemes = self.schemes.clone().unwrap_or_else(|| match experiment {
            Experiment::Certify => vec![SchemeId::MOpt],
            _ => SchemeId::ALL.to_vec(),
        });
        if schemes.is_empty() {
            return Err(ConfigError::Invalid("scheme list is empty".into()));
        }
        if let Some(path) = &self.certify.allocation {
            if !path.is_file() {
                return Err(ConfigError::Invalid(format!(
                    "allocation file {} does not exist",
                    path.display()
                )));
            }
        }
        let output_root = self
            .output_dir
            .clone()
            .or(env_output_root)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));

        let echo = RunConfig {
            experiment: Some(experiment),
            environment: self.room.is_none().then_some(environment),
            room: self.room.clone(),
            schemes: Some(schemes.clone()),
            seed: Some(fading.seed_base),
            output_dir: Some(output_root.clone()),
            layout: LayoutConfig {
                dimensionality: Some(layout.dimensionality),
                lod: Some(layout.lod),
                extent_x: Some(layout.extent_x),
                extent_z: Some(layout.extent_z),
            },
            physical: PhysicalConfig {
                total_tx_power: Some(params.total_tx_power),
                wavelength: Some(params.wavelength),
                rx_aperture: Some(params.rx_aperture),
                rician_k: Some(params.rician_k),
                element_area: Some(params.element_area),
                gain_calibration: Some(params.gain_calibration),
                avg_distance: p.avg_distance,
            },
            solver: SolverConfig {
                tol: Some(tol),
                symmetrize: Some(solve.symmetrize),
            },
            sweep: SweepConfig { lods: Some(lods.clone()) },
            compare: CompareConfig {
                environments: Some(environments.clone()),
                percentile: Some(percentile),
            },
            fading: FadingSection {
                realizations: Some(fading.realizations),
                mode: Some(fading.mode),
                threads: Some(fading.threads),
            },
            certify: self.certify.clone(),
        };

        Ok(Resolved {
            experiment,
            label,
            room,
            layout,
            params,
            solve,
            lods,
            environments,
            percentile,
            fading,
            schemes,
            allocation: self.certify.allocation.clone(),
            output_root,
            echo,
        })
    }
}

/// Fully validated run parameters.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub experiment: Experiment,
    /// Preset name, or `LxxLyxLz` for a custom room.
    pub label: String,
    pub room: RoomGeometry,
    pub layout: ArrayLayout,
    pub params: PhysicalParams,
    pub solve: SolveOptions,
    pub lods: Vec<usize>,
    pub environments: Vec<Environment>,
    pub percentile: f64,
    pub fading: FadingConfig,
    pub schemes: Vec<SchemeId>,
    pub allocation: Option<PathBuf>,
    pub output_root: PathBuf,
    /// The configuration with every default made explicit.
    pub echo: RunConfig,
}

impl Resolved {
    /// One subdirectory per experiment (and room, where there is one).
    pub fn output_dir(&self) -> PathBuf {
        match self.experiment {
            Experiment::Compare => self.output_root.join("compare"),
            e => self.output_root.join(format!("{}-{}", e, self.label)),
        }
    }
}

/// Comma-separated list parsing for flags such as `--lods 21,41,61`.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<T>().map_err(|e| format!("'{}': {e}", t.trim())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_experiment(e: Experiment) -> RunConfig {
        RunConfig {
            experiment: Some(e),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_match_reference_parameters() {
        let r = with_experiment(Experiment::Solve).resolve(None).unwrap();
        assert_eq!(r.params, PhysicalParams::reference());
        assert_eq!(r.layout.lod, 81);
        assert_eq!(r.layout.dimensionality, Dimensionality::TwoD);
        assert_eq!(r.room, Environment::Ratio1To1.room());
        assert_eq!(r.output_root, PathBuf::from(DEFAULT_OUTPUT_ROOT));
    }

    #[test]
    fn fading_defaults_to_coarser_lod() {
        let r = with_experiment(Experiment::Fading).resolve(None).unwrap();
        assert_eq!(r.layout.lod, 41);
        assert_eq!(r.fading.realizations, 200);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("experiment = \"solve\"\nlod = 81\n", Path::new("x.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
        let err = RunConfig::from_toml_str("[layout]\nlevel = 3\n", Path::new("x.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
    }

    #[test]
    fn echo_resolves_to_itself() {
        let mut cfg = with_experiment(Experiment::Sweep);
        cfg.environment = Some(Environment::Ratio1To4);
        cfg.sweep.lods = Some(vec![11, 21]);
        cfg.physical.rician_k = Some(f64::INFINITY);
        let r = cfg.resolve(Some(PathBuf::from("/tmp/out"))).unwrap();
        let text = r.echo.to_toml_string();
        let again = RunConfig::from_toml_str(&text, Path::new("echo.toml")).unwrap();
        assert_eq!(again, r.echo);
        let r2 = again.resolve(None).unwrap();
        assert_eq!(r2.echo, r.echo);
        assert_eq!(r2.params, r.params);
        assert_eq!(r2.output_root, PathBuf::from("/tmp/out"));
    }

    #[test]
    fn output_dir_precedence() {
        let mut cfg = with_experiment(Experiment::Solve);
        assert_eq!(cfg.resolve(Some("env".into())).unwrap().output_root, PathBuf::from("env"));
        cfg.output_dir = Some("file".into());
        assert_eq!(cfg.resolve(Some("env".into())).unwrap().output_root, PathBuf::from("file"));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut cfg = with_experiment(Experiment::Solve);
        cfg.layout.lod = Some(0);
        assert!(matches!(cfg.resolve(None), Err(ConfigError::Invalid(_))));
        let mut cfg = with_experiment(Experiment::Sweep);
        cfg.sweep.lods = Some(vec![41, 21]);
        assert!(matches!(cfg.resolve(None), Err(ConfigError::Invalid(_))));
        let mut cfg = with_experiment(Experiment::Solve);
        cfg.physical.wavelength = Some(-1.0);
        assert!(matches!(cfg.resolve(None), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list::<usize>("21, 41,61").unwrap(), vec![21, 41, 61]);
        assert!(parse_list::<usize>("21,x").is_err());
    }
}
