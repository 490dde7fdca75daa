//! Room model, transmit/receiver lattices and near-field distance bounds.
//!
//! Coordinates follow the room convention: the ceiling is the plane `y = 0`,
//! the floor is `y = len_y`, and the floor plane is centred on the `x`/`z`
//! origin so every lattice spans `[-L/2, L/2]` along each lateral axis.
//! Lattices include both endpoints, so `lod` points are spaced `L / (lod - 1)`
//! apart.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Cuboid room. `len_y` is the height (ceiling to floor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomGeometry {
    pub len_x: f64,
    pub len_y: f64,
    pub len_z: f64,
}

impl RoomGeometry {
    pub fn new(len_x: f64, len_y: f64, len_z: f64) -> Result<Self> {
        let room = Self { len_x, len_y, len_z };
        room.validate()?;
        Ok(room)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("len_x", self.len_x), ("len_y", self.len_y), ("len_z", self.len_z)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Longest straight line inside the room.
    pub fn diagonal(&self) -> f64 {
        (self.len_x * self.len_x + self.len_y * self.len_y + self.len_z * self.len_z).sqrt()
    }

    pub fn height_to_width(&self) -> f64 {
        self.len_y / self.len_x
    }
}

/// The four reference rooms: 2 m high with square floors of 2, 6, 8 and 10 m.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Environment {
    #[serde(rename = "1-1")]
    Ratio1To1,
    #[serde(rename = "1-3")]
    Ratio1To3,
    #[serde(rename = "1-4")]
    Ratio1To4,
    #[serde(rename = "1-5")]
    Ratio1To5,
}

impl Environment {
    pub const ALL: [Environment; 4] = [
        Environment::Ratio1To1,
        Environment::Ratio1To3,
        Environment::Ratio1To4,
        Environment::Ratio1To5,
    ];

    pub fn room(self) -> RoomGeometry {
        let width = match self {
            Environment::Ratio1To1 => 2.0,
            Environment::Ratio1To3 => 6.0,
            Environment::Ratio1To4 => 8.0,
            Environment::Ratio1To5 => 10.0,
        };
        RoomGeometry {
            len_x: width,
            len_y: 2.0,
            len_z: width,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Environment::Ratio1To1 => "1-1",
            Environment::Ratio1To3 => "1-3",
            Environment::Ratio1To4 => "1-4",
            Environment::Ratio1To5 => "1-5",
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Environment {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1-1" | "1/1" => Ok(Environment::Ratio1To1),
            "1-3" | "1/3" => Ok(Environment::Ratio1To3),
            "1-4" | "1/4" => Ok(Environment::Ratio1To4),
            "1-5" | "1/5" => Ok(Environment::Ratio1To5),
            other => Err(invalid(format!("unknown environment preset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimensionality {
    #[serde(alias = "1d", alias = "1D")]
    OneD,
    #[serde(alias = "2d", alias = "2D")]
    TwoD,
}

impl FromStr for Dimensionality {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1d" | "one_d" => Ok(Dimensionality::OneD),
            "2d" | "two_d" => Ok(Dimensionality::TwoD),
            other => Err(invalid(format!("unknown dimensionality '{other}'"))),
        }
    }
}

impl fmt::Display for Dimensionality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimensionality::OneD => "1D",
            Dimensionality::TwoD => "2D",
        })
    }
}

/// Ceiling-mounted transmit array. `lod` is the number of samples per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayLayout {
    pub dimensionality: Dimensionality,
    pub extent_x: f64,
    pub extent_z: f64,
    pub lod: usize,
}

impl ArrayLayout {
    /// Array covering the whole ceiling.
    pub fn full_ceiling(room: &RoomGeometry, dimensionality: Dimensionality, lod: usize) -> Self {
        Self {
            dimensionality,
            extent_x: room.len_x,
            extent_z: room.len_z,
            lod,
        }
    }

    pub fn validate(&self, room: &RoomGeometry) -> Result<()> {
        room.validate()?;
        if self.lod == 0 {
            return Err(invalid("lod must be at least 1"));
        }
        if !(self.extent_x.is_finite() && self.extent_x >= 0.0) || self.extent_x > room.len_x {
            return Err(invalid(format!(
                "array extent_x {} must lie in [0, {}]",
                self.extent_x, room.len_x
            )));
        }
        if self.dimensionality == Dimensionality::TwoD
            && (!(self.extent_z.is_finite() && self.extent_z >= 0.0) || self.extent_z > room.len_z)
        {
            return Err(invalid(format!(
                "array extent_z {} must lie in [0, {}]",
                self.extent_z, room.len_z
            )));
        }
        Ok(())
    }
}

/// Lateral position in a plane of constant `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Which mirror reflections map the point set onto itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SymmetryAxes {
    /// Closed under `x -> -x`.
    pub x: bool,
    /// Closed under `z -> -z`.
    pub z: bool,
}

/// Ordered sample positions in the plane `y = plane_y`.
///
/// Grids built by [`build_tx_grid`] / [`build_rx_grid`] are stored
/// `z`-major: index `iz * nx + ix`, so a reshape to `(nz, nx)` yields the
/// heatmap layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGrid {
    positions: Vec<PlanePoint>,
    plane_y: f64,
    spacing: f64,
    shape: Option<(usize, usize)>,
    mirror_x: Option<Vec<usize>>,
    mirror_z: Option<Vec<usize>>,
}

const KEY_SCALE: f64 = 1e9;

fn key(x: f64, z: f64) -> (i64, i64) {
    ((x * KEY_SCALE).round() as i64, (z * KEY_SCALE).round() as i64)
}

impl LatticeGrid {
    /// Grid from an arbitrary point list. Mirror symmetries are detected.
    pub fn from_points(positions: Vec<PlanePoint>, plane_y: f64, spacing: f64) -> Result<Self> {
        if !plane_y.is_finite() || plane_y < 0.0 {
            return Err(invalid(format!("plane_y must be nonnegative, got {plane_y}")));
        }
        let mut lookup = HashMap::with_capacity(positions.len());
        for (i, p) in positions.iter().enumerate() {
            if !(p.x.is_finite() && p.z.is_finite()) {
                return Err(invalid("grid positions must be finite"));
            }
            if lookup.insert(key(p.x, p.z), i).is_some() {
                return Err(invalid(format!("duplicate grid position ({}, {})", p.x, p.z)));
            }
        }
        let mirror = |fx: f64, fz: f64| -> Option<Vec<usize>> {
            positions
                .iter()
                .map(|p| lookup.get(&key(fx * p.x, fz * p.z)).copied())
                .collect()
        };
        let mirror_x = mirror(-1.0, 1.0);
        let mirror_z = mirror(1.0, -1.0);
        Ok(Self {
            positions,
            plane_y,
            spacing,
            shape: None,
            mirror_x,
            mirror_z,
        })
    }

    fn rectangular(xs: &[f64], zs: &[f64], plane_y: f64, spacing: f64) -> Self {
        let nx = xs.len();
        let nz = zs.len();
        let positions = zs
            .iter()
            .flat_map(|&z| xs.iter().map(move |&x| PlanePoint { x, z }))
            .collect();
        let mirror_x = (0..nz)
            .flat_map(|iz| (0..nx).map(move |ix| iz * nx + (nx - 1 - ix)))
            .collect();
        let mirror_z = (0..nz)
            .flat_map(|iz| (0..nx).map(move |ix| (nz - 1 - iz) * nx + ix))
            .collect();
        Self {
            positions,
            plane_y,
            spacing,
            shape: Some((nz, nx)),
            mirror_x: Some(mirror_x),
            mirror_z: Some(mirror_z),
        }
    }

    pub fn positions(&self) -> &[PlanePoint] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn plane_y(&self) -> f64 {
        self.plane_y
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// `(rows, cols)` = `(nz, nx)` for rectangular lattices.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.shape
    }

    pub fn symmetry_axes(&self) -> SymmetryAxes {
        SymmetryAxes {
            x: self.mirror_x.is_some(),
            z: self.mirror_z.is_some(),
        }
    }

    pub fn is_fully_symmetric(&self) -> bool {
        self.mirror_x.is_some() && self.mirror_z.is_some()
    }

    /// Index permutation induced by `x -> -x`, if the grid is closed under it.
    pub fn mirror_x(&self) -> Option<&[usize]> {
        self.mirror_x.as_deref()
    }

    pub fn mirror_z(&self) -> Option<&[usize]> {
        self.mirror_z.as_deref()
    }

    pub fn point3(&self, i: usize) -> Point3 {
        let p = self.positions[i];
        Point3 {
            x: p.x,
            y: self.plane_y,
            z: p.z,
        }
    }

    /// Index of the point closest to `(x, z)`; ties go to the lowest index.
    pub fn nearest(&self, x: f64, z: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.positions.iter().enumerate() {
            let d = (p.x - x).powi(2) + (p.z - z).powi(2);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Same lateral positions moved to another plane.
    pub fn at_height(&self, plane_y: f64) -> Self {
        Self {
            plane_y,
            ..self.clone()
        }
    }
}

/// `lod` samples spanning `[-extent/2, extent/2]`, endpoints included.
/// The values are exactly antisymmetric, so mirrored points compare equal.
pub fn axis_samples(extent: f64, lod: usize) -> Vec<f64> {
    if lod == 1 {
        return vec![0.0];
    }
    let denom = (lod - 1) as f64;
    (0..lod)
        .map(|i| {
            let numer = 2 * i as i64 - (lod as i64 - 1);
            0.5 * extent * (numer as f64 / denom)
        })
        .collect()
}

fn axis_spacing(extent: f64, lod: usize) -> f64 {
    if lod <= 1 {
        0.0
    } else {
        extent / (lod - 1) as f64
    }
}

pub fn build_tx_grid(layout: &ArrayLayout, room: &RoomGeometry) -> Result<LatticeGrid> {
    layout.validate(room)?;
    let xs = axis_samples(layout.extent_x, layout.lod);
    let spacing = axis_spacing(layout.extent_x, layout.lod);
    let grid = match layout.dimensionality {
        Dimensionality::TwoD => {
            let zs = axis_samples(layout.extent_z, layout.lod);
            LatticeGrid::rectangular(&xs, &zs, 0.0, spacing)
        }
        Dimensionality::OneD => LatticeGrid::rectangular(&xs, &[0.0], 0.0, spacing),
    };
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RxMode {
    /// The floor plane `y = len_y`, where the received power is lowest.
    CriticalPlane,
    /// `levels` planes, geometrically spaced from `lowest_y` up to and
    /// including the floor.
    Volume { levels: usize, lowest_y: f64 },
}

/// Floor-plane receiver grid covering the whole floor.
pub fn critical_plane_grid(room: &RoomGeometry, lod: usize) -> Result<LatticeGrid> {
    room.validate()?;
    if lod == 0 {
        return Err(invalid("lod must be at least 1"));
    }
    let xs = axis_samples(room.len_x, lod);
    let zs = axis_samples(room.len_z, lod);
    Ok(LatticeGrid::rectangular(
        &xs,
        &zs,
        room.len_y,
        axis_spacing(room.len_x, lod),
    ))
}

pub fn build_rx_grid(room: &RoomGeometry, lod: usize, mode: RxMode) -> Result<Vec<LatticeGrid>> {
    let floor = critical_plane_grid(room, lod)?;
    match mode {
        RxMode::CriticalPlane => Ok(vec![floor]),
        RxMode::Volume { levels, lowest_y } => {
            let heights = volume_heights(room, levels, lowest_y)?;
            Ok(heights.into_iter().map(|y| floor.at_height(y)).collect())
        }
    }
}

/// Geometric sequence of `levels` heights from `lowest_y` to `len_y`.
pub fn volume_heights(room: &RoomGeometry, levels: usize, lowest_y: f64) -> Result<Vec<f64>> {
    if levels == 0 {
        return Err(invalid("volume mode needs at least one level"));
    }
    if !(lowest_y > 0.0 && lowest_y <= room.len_y) {
        return Err(invalid(format!(
            "lowest receiver height {lowest_y} must lie in (0, {}]",
            room.len_y
        )));
    }
    if levels == 1 {
        return Ok(vec![room.len_y]);
    }
    let ratio = (room.len_y / lowest_y).powf(1.0 / (levels - 1) as f64);
    let mut heights: Vec<f64> = (0..levels).map(|k| lowest_y * ratio.powi(k as i32)).collect();
    heights[levels - 1] = room.len_y;
    Ok(heights)
}

/// Default lower end of the validation volume: `max(d_fresnel, 0.1 * len_y)`.
pub fn default_volume_floor(room: &RoomGeometry, bounds: &NearFieldBounds) -> f64 {
    bounds.d_fresnel.max(0.1 * room.len_y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearFieldBounds {
    /// `2 L^2 / lambda` for the array aperture `L`.
    pub d_fraunhofer: f64,
    /// `(L_element^4 / (8 lambda))^(1/3)`: reactive region around one element.
    pub d_fresnel: f64,
}

pub fn near_field_bounds(aperture: f64, element_size: f64, wavelength: f64) -> Result<NearFieldBounds> {
    for (name, v) in [
        ("aperture", aperture),
        ("element_size", element_size),
        ("wavelength", wavelength),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(invalid(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(NearFieldBounds {
        d_fraunhofer: 2.0 * aperture * aperture / wavelength,
        d_fresnel: (element_size.powi(4) / (8.0 * wavelength)).cbrt(),
    })
}
