//! Line-of-sight gains under the spherical-wavefront model and correlated
//! Rician fading on top of them.
//!
//! All gains are normalised by the reference channel gain `c`, so the LoS
//! entry for a transmitter at `(a_x, 0, a_z)` and a receiver at `(x, y, z)` is
//! simply `1 / D^2`. Physical powers are recovered in [`crate::schemes`]
//! through [`PhysicalParams::gain_calibration`].

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{LatticeGrid, PlanePoint, Point3};

/// Normalised LoS gain `1 / D^2` between a ceiling transmitter and a receiver.
pub fn los_gain(tx: PlanePoint, rx: Point3) -> Result<f64> {
    if !(rx.y > 0.0) {
        return Err(invalid(format!("receiver height must be positive, got {}", rx.y)));
    }
    Ok(inverse_square_distance(tx, rx))
}

#[inline]
fn squared_distance(tx: PlanePoint, rx: Point3) -> f64 {
    let dx = rx.x - tx.x;
    let dz = rx.z - tx.z;
    dx * dx + rx.y * rx.y + dz * dz
}

#[inline]
fn inverse_square_distance(tx: PlanePoint, rx: Point3) -> f64 {
    1.0 / squared_distance(tx, rx)
}

/// Receiver-by-transmitter matrix of normalised gains.
#[derive(Debug, Clone)]
pub struct GainMatrix {
    entries: DMatrix<f64>,
    rx_grid: Option<Arc<LatticeGrid>>,
    tx_grid: Option<Arc<LatticeGrid>>,
}

impl GainMatrix {
    /// Gains without geometry, e.g. synthetic test instances.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(invalid("gain matrix must be nonempty"));
        }
        if entries.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("gain entries must be finite and nonnegative"));
        }
        Ok(Self {
            entries,
            rx_grid: None,
            tx_grid: None,
        })
    }

    /// Row-major convenience constructor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(invalid("ragged gain rows"));
        }
        Self::from_matrix(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
    }

    pub(crate) fn with_grids(
        entries: DMatrix<f64>,
        rx_grid: Arc<LatticeGrid>,
        tx_grid: Arc<LatticeGrid>,
    ) -> Self {
        debug_assert_eq!(entries.nrows(), rx_grid.len());
        debug_assert_eq!(entries.ncols(), tx_grid.len());
        Self {
            entries,
            rx_grid: Some(rx_grid),
            tx_grid: Some(tx_grid),
        }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n_rx(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.entries.ncols()
    }

    pub fn get(&self, rx: usize, tx: usize) -> f64 {
        self.entries[(rx, tx)]
    }

    pub fn rx_grid(&self) -> Option<&Arc<LatticeGrid>> {
        self.rx_grid.as_ref()
    }

    pub fn tx_grid(&self) -> Option<&Arc<LatticeGrid>> {
        self.tx_grid.as_ref()
    }

    /// Received (normalised) power at every receiver: `F p`.
    pub fn received(&self, weights: &[f64]) -> Result<DVector<f64>> {
        if weights.len() != self.n_tx() {
            return Err(Error::DimensionMismatch {
                expected: self.n_tx(),
                actual: weights.len(),
            });
        }
        Ok(&self.entries * DVector::from_column_slice(weights))
    }

    /// Worst receiver value `min_r (F p)_r`.
    pub fn min_received(&self, weights: &[f64]) -> Result<f64> {
        Ok(self.received(weights)?.min())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: &self.entries * factor,
            ..self.clone()
        }
    }

    /// Same geometry, different entries (faded gains).
    pub(crate) fn replace_entries(&self, entries: DMatrix<f64>) -> Self {
        Self {
            entries,
            rx_grid: self.rx_grid.clone(),
            tx_grid: self.tx_grid.clone(),
        }
    }
}

pub fn gain_matrix(tx_grid: &LatticeGrid, rx_grid: &LatticeGrid) -> Result<GainMatrix> {
    gain_matrix_shared(Arc::new(tx_grid.clone()), Arc::new(rx_grid.clone()))
}

/// Like [`gain_matrix`] but keeps the caller's grid handles.
pub fn gain_matrix_shared(tx_grid: Arc<LatticeGrid>, rx_grid: Arc<LatticeGrid>) -> Result<GainMatrix> {
    if tx_grid.is_empty() || rx_grid.is_empty() {
        return Err(invalid("gain matrix needs nonempty grids"));
    }
    if !(rx_grid.plane_y() > tx_grid.plane_y()) {
        return Err(invalid("receiver plane must lie below the ceiling (plane_y > 0)"));
    }
    let tx = tx_grid.positions();
    let entries = DMatrix::from_fn(rx_grid.len(), tx_grid.len(), |r, t| {
        inverse_square_distance(tx[t], rx_grid.point3(r))
    });
    Ok(GainMatrix::with_grids(entries, rx_grid, tx_grid))
}

/// How the "average transmitter-receiver distance" of the NLoS variance is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum AverageDistance {
    /// Mean Euclidean distance over every (tx, rx) pair of the instance.
    MeanPairDistance,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    /// Watts.
    pub total_tx_power: f64,
    /// Metres.
    pub wavelength: f64,
    /// Receive aperture `S_RX` in m^2.
    pub rx_aperture: f64,
    /// `c * S_RX` in m^2: maps a normalised gain to a power ratio.
    pub gain_calibration: f64,
    /// Transmit element area `A` in m^2.
    pub element_area: f64,
    /// Rician K-factor; `f64::INFINITY` means pure LoS.
    pub rician_k: f64,
    pub avg_distance: AverageDistance,
}

impl PhysicalParams {
    /// Reference set: 10 W at 12.5 mm, `S_RX = lambda^2/4`, `A = (lambda/2)^2`, `K = 10`.
    pub fn reference() -> Self {
        Self::for_wavelength(0.0125)
    }

    pub fn for_wavelength(wavelength: f64) -> Self {
        Self {
            total_tx_power: 10.0,
            wavelength,
            rx_aperture: wavelength * wavelength / 4.0,
            gain_calibration: friis_calibration(wavelength),
            element_area: (wavelength / 2.0).powi(2),
            rician_k: 10.0,
            avg_distance: AverageDistance::MeanPairDistance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("total_tx_power", self.total_tx_power),
            ("wavelength", self.wavelength),
            ("rx_aperture", self.rx_aperture),
            ("gain_calibration", self.gain_calibration),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.element_area.is_finite() && self.element_area >= 0.0) {
            return Err(invalid("element_area must be nonnegative"));
        }
        if self.rician_k.is_nan() || self.rician_k < 0.0 {
            return Err(invalid("rician_k must be nonnegative"));
        }
        if let AverageDistance::Fixed(d) = self.avg_distance {
            if !(d.is_finite() && d > 0.0) {
                return Err(invalid("fixed average distance must be positive"));
            }
        }
        Ok(())
    }
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// `(lambda / (4 pi))^2`: free-space calibration of `c * S_RX`.
pub fn friis_calibration(wavelength: f64) -> f64 {
    (wavelength / (4.0 * PI)).powi(2)
}

pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Spatial correlation of isotropic scattering across the transmit grid.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    entries: DMatrix<f64>,
}

impl CorrelationMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// `L` with `L L^T = R` after clipping eigenvalues below
    /// `rel_clip * lambda_max` to zero. Only the retained columns are kept.
    pub fn psd_factor(&self, rel_clip: f64) -> Result<DMatrix<f64>> {
        let eig = SymmetricEigen::try_new(self.entries.clone(), f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("eigendecomposition of correlation matrix failed".into()))?;
        let max = eig.eigenvalues.max();
        if !(max > 0.0) {
            return Err(Error::Numerical("correlation matrix has no positive eigenvalue".into()));
        }
        let keep: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&k| eig.eigenvalues[k] >= rel_clip * max)
            .collect();
        let n = self.dim();
        let mut factor = DMatrix::zeros(n, keep.len());
        for (col, &k) in keep.iter().enumerate() {
            let s = eig.eigenvalues[k].sqrt();
            for i in 0..n {
                factor[(i, col)] = eig.eigenvectors[(i, k)] * s;
            }
        }
        Ok(factor)
    }
}

pub fn correlation_matrix(tx_grid: &LatticeGrid, wavelength: f64) -> Result<CorrelationMatrix> {
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(invalid("wavelength must be positive"));
    }
    let pts = tx_grid.positions();
    let n = pts.len();
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        entries[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let d = ((pts[i].x - pts[j].x).powi(2) + (pts[i].z - pts[j].z).powi(2)).sqrt();
            let v = sinc(2.0 * d / wavelength);
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(CorrelationMatrix { entries })
}

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_CLIP: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FadingRealization {
    /// `|g~|^2 / c` for every (rx, tx) pair.
    pub faded_gains: GainMatrix,
    pub seed: u64,
    pub stream: u64,
    pub shared_nlos: bool,
}

/// Mean Euclidean distance over all (tx, rx) pairs.
pub fn mean_pair_distance(tx_grid: &LatticeGrid, rx_grid: &LatticeGrid) -> f64 {
    let tx = tx_grid.positions();
    let mut sum = 0.0;
    for r in 0..rx_grid.len() {
        let p = rx_grid.point3(r);
        sum += tx.iter().map(|&t| squared_distance(t, p).sqrt()).sum::<f64>();
    }
    sum / (tx.len() * rx_grid.len()) as f64
}

/// Draws Rician-faded gain matrices for one LoS instance. The correlation
/// factor and the complex LoS channels are computed once and reused.
pub struct RicianSampler {
    base: GainMatrix,
    los: Option<DMatrix<Complex64>>,
    factor: Option<DMatrix<f64>>,
    los_weight: f64,
    nlos_weight: f64,
    /// `sqrt(A) / D~`: standard deviation scale of the NLoS term.
    nlos_scale: f64,
    avg_distance: f64,
}

impl RicianSampler {
    pub fn new(base: &GainMatrix, params: &PhysicalParams) -> Result<Self> {
        params.validate()?;
        let (rx_grid, tx_grid) = match (base.rx_grid(), base.tx_grid()) {
            (Some(r), Some(t)) => (r.clone(), t.clone()),
            _ => return Err(invalid("fading needs a gain matrix built from grids")),
        };
        let avg_distance = match params.avg_distance {
            AverageDistance::MeanPairDistance => mean_pair_distance(&tx_grid, &rx_grid),
            AverageDistance::Fixed(d) => d,
        };
        let nlos_scale = params.element_area.sqrt() / avg_distance;
        if params.rician_k.is_infinite() {
            return Ok(Self {
                base: base.clone(),
                los: None,
                factor: None,
                los_weight: 1.0,
                nlos_weight: 0.0,
                nlos_scale,
                avg_distance,
            });
        }
        let k = params.rician_k;
        let wavenumber = 2.0 * PI / params.wavelength;
        let tx = tx_grid.positions();
        let los = DMatrix::from_fn(rx_grid.len(), tx_grid.len(), |r, t| {
            let d = squared_distance(tx[t], rx_grid.point3(r)).sqrt();
            Complex64::from_polar(1.0 / d, -wavenumber * d)
        });
        let factor = correlation_matrix(&tx_grid, params.wavelength)?.psd_factor(EIGEN_CLIP)?;
        Ok(Self {
            base: base.clone(),
            los: Some(los),
            factor: Some(factor),
            los_weight: (k / (k + 1.0)).sqrt(),
            nlos_weight: (1.0 / (k + 1.0)).sqrt(),
            nlos_scale,
            avg_distance,
        })
    }

    pub fn avg_distance(&self) -> f64 {
        self.avg_distance
    }

    /// Variance of the normalised NLoS entry, `A / D~^2`.
    pub fn nlos_variance(&self) -> f64 {
        self.nlos_scale * self.nlos_scale
    }

    /// One correlated NLoS vector `h / sqrt(c)` over the transmit grid.
    fn draw_nlos(&self, factor: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<Complex64> {
        let rank = factor.ncols();
        let z = DVector::from_fn(rank, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        });
        let re = factor * z.map(|c| c.re);
        let im = factor * z.map(|c| c.im);
        DVector::from_fn(factor.nrows(), |i, _| {
            Complex64::new(re[i], im[i]) * self.nlos_scale
        })
    }

    /// Deterministic draw for `(seed, stream)`.
    pub fn sample(&self, seed: u64, stream: u64, shared_nlos: bool) -> FadingRealization {
        let faded = match (&self.los, &self.factor) {
            (Some(los), Some(factor)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                let (n_rx, n_tx) = los.shape();
                let mut out = DMatrix::zeros(n_rx, n_tx);
                let a = self.los_weight;
                let b = self.nlos_weight;
                if shared_nlos {
                    let h = self.draw_nlos(factor, &mut rng);
                    for t in 0..n_tx {
                        let bh = h[t] * b;
                        for r in 0..n_rx {
                            out[(r, t)] = (los[(r, t)] * a + bh).norm_sqr();
                        }
                    }
                } else {
                    for r in 0..n_rx {
                        let h = self.draw_nlos(factor, &mut rng);
                        for t in 0..n_tx {
                            out[(r, t)] = (los[(r, t)] * a + h[t] * b).norm_sqr();
                        }
                    }
                }
                self.base.replace_entries(out)
            }
            _ => self.base.clone(),
        };
        FadingRealization {
            faded_gains: faded,
            seed,
            stream,
            shared_nlos,
        }
    }
}

pub fn sample_rician_gains(
    base: &GainMatrix,
    params: &PhysicalParams,
    seed: u64,
    shared_nlos: bool,
) -> Result<FadingRealization> {
    Ok(RicianSampler::new(base, params)?.sample(seed, 0, shared_nlos))
}
