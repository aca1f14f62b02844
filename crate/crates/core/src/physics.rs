//! Closed-form Kirchhoff-Love computations for a square, free-edge plate:
//! bending stiffness, natural frequency, antisymmetric mode shapes, the
//! damped amplitude field and the nodal (sand) mask derived from it.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("invalid plate: {0}")]
    InvalidPlate(String),
    #[error("invalid mode order ({n}, {m}): orders must be positive and distinct")]
    InvalidOrder { n: u32, m: u32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("amplitude field is identically zero")]
    ZeroField,
    #[error("field is constant; the amplitude quantile is degenerate")]
    DegenerateField,
    #[error("non-finite result: {0}")]
    NonFinite(String),
}

/// Material and geometry of the square plate, SI units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateSpec {
    pub elastic_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    pub thickness: f64,
    pub side_length: f64,
}

impl Default for PlateSpec {
    /// 160 mm stainless-steel plate, 0.8 mm thick.
    fn default() -> Self {
        Self { elastic_modulus: 200e9, poisson_ratio: 0.3, density: 7850.0, thickness: 0.8e-3, side_length: 0.16 }
    }
}

/// Radius of the clamped center region, in metres.
pub const CENTER_CLAMP_RADIUS_M: f64 = 3e-3;

impl PlateSpec {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let fields = [
            ("elastic_modulus", self.elastic_modulus),
            ("density", self.density),
            ("thickness", self.thickness),
            ("side_length", self.side_length),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(PhysicsError::InvalidPlate(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return Err(PhysicsError::InvalidPlate(format!(
                "poisson_ratio must lie in (0, 0.5), got {}",
                self.poisson_ratio
            )));
        }
        Ok(())
    }

    /// Clamp radius in normalised coordinates, where the half-side maps to 1.
    pub fn center_exclusion_radius(&self) -> f64 {
        CENTER_CLAMP_RADIUS_M / (self.side_length / 2.0)
    }
}

/// Modal order `(n, m)` with `n, m ≥ 1` and `n ≠ m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "(u32, u32)", into = "(u32, u32)")]
pub struct ModeOrder {
    n: u32,
    m: u32,
}

impl ModeOrder {
    pub fn new(n: u32, m: u32) -> Result<Self, PhysicsError> {
        if n == 0 || m == 0 || n == m {
            return Err(PhysicsError::InvalidOrder { n, m });
        }
        Ok(Self { n, m })
    }

    pub fn n(self) -> u32 {
        self.n
    }

    pub fn m(self) -> u32 {
        self.m
    }

    pub fn swapped(self) -> Self {
        Self { n: self.m, m: self.n }
    }
}

impl TryFrom<(u32, u32)> for ModeOrder {
    type Error = PhysicsError;

    fn try_from((n, m): (u32, u32)) -> Result<Self, Self::Error> {
        Self::new(n, m)
    }
}

impl From<ModeOrder> for (u32, u32) {
    fn from(o: ModeOrder) -> Self {
        (o.n, o.m)
    }
}

impl std::fmt::Display for ModeOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.n, self.m)
    }
}

/// Center-decay exponent `α` (in `e^{-α r}`) and edge damping `γ` (in
/// `e^{-γ(|x|+|y|)}`). Zero values disable the correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    pub central_decay: f64,
    pub edge_damping: f64,
}

impl Default for DecayParams {
    fn default() -> Self {
        Self { central_decay: 0.5, edge_damping: 0.3 }
    }
}

impl DecayParams {
    pub const NONE: Self = Self { central_decay: 0.0, edge_damping: 0.0 };

    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !(self.central_decay >= 0.0 && self.edge_damping >= 0.0)
            || !self.central_decay.is_finite()
            || !self.edge_damping.is_finite()
        {
            return Err(PhysicsError::InvalidArgument(format!("decay parameters must be finite and ≥ 0, got {self:?}")));
        }
        Ok(())
    }
}

/// Square grid of field samples over `[-1, 1]²`, row-major. Row `i` is the
/// `y` coordinate and column `j` the `x` coordinate, both at cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    resolution: usize,
    values: Vec<f64>,
}

/// Cell-center coordinate of index `i` on a grid of `resolution` cells.
pub fn cell_center(i: usize, resolution: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / resolution as f64
}

impl FieldGrid {
    pub fn from_values(resolution: usize, values: Vec<f64>) -> Result<Self, PhysicsError> {
        if resolution == 0 || values.len() != resolution * resolution {
            return Err(PhysicsError::InvalidArgument(format!(
                "{} values do not fill a {resolution}x{resolution} grid",
                values.len()
            )));
        }
        Ok(Self { resolution, values })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.resolution + col]
    }
}

/// Cells where sand settles.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalMask {
    resolution: usize,
    cells: Vec<bool>,
    quantile: f64,
    center_radius_norm: f64,
}

impl NodalMask {
    pub fn from_cells(resolution: usize, cells: Vec<bool>, quantile: f64, center_radius_norm: f64) -> Result<Self, PhysicsError> {
        if resolution == 0 || cells.len() != resolution * resolution {
            return Err(PhysicsError::InvalidArgument(format!(
                "{} cells do not fill a {resolution}x{resolution} mask",
                cells.len()
            )));
        }
        Ok(Self { resolution, cells, quantile, center_radius_norm })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.resolution + col]
    }

    pub fn quantile(&self) -> f64 {
        self.quantile
    }

    pub fn center_radius_norm(&self) -> f64 {
        self.center_radius_norm
    }

    pub fn true_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// `true` when the cell center lies inside the clamped disk.
    pub fn in_exclusion(&self, row: usize, col: usize) -> bool {
        let (x, y) = (cell_center(col, self.resolution), cell_center(row, self.resolution));
        (x * x + y * y).sqrt() < self.center_radius_norm
    }

    pub(crate) fn cells_mut(&mut self) -> &mut [bool] {
        &mut self.cells
    }
}

/// Everything needed to turn a mode order into a sand mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodalSettings {
    pub decay: DecayParams,
    pub quantile: f64,
    pub center_radius_norm: f64,
}

impl Default for NodalSettings {
    fn default() -> Self {
        Self::for_plate(&PlateSpec::default())
    }
}

impl NodalSettings {
    pub fn for_plate(spec: &PlateSpec) -> Self {
        Self { decay: DecayParams::default(), quantile: 0.15, center_radius_norm: spec.center_exclusion_radius() }
    }

    pub fn mask(&self, order: ModeOrder, resolution: usize) -> Result<NodalMask, PhysicsError> {
        let field = amplitude_field(order, resolution, self.decay)?;
        nodal_mask(&field, self.quantile, self.center_radius_norm)
    }
}

/// `D = E·h³ / (12·(1 − ν²))`, in N·m.
pub fn bending_stiffness(spec: &PlateSpec) -> f64 {
    spec.elastic_modulus * spec.thickness * spec.thickness * spec.thickness / (12.0 * (1.0 - spec.poisson_ratio * spec.poisson_ratio))
}

/// `f = λ / (2π a²) · sqrt(D / (ρ h))`, in Hz.
pub fn natural_frequency(spec: &PlateSpec, lambda: f64) -> Result<f64, PhysicsError> {
    if !(lambda >= 0.0) {
        return Err(PhysicsError::InvalidArgument(format!("frequency coefficient must be ≥ 0, got {lambda}")));
    }
    let d = bending_stiffness(spec);
    let f = 1.0 / (2.0 * PI * spec.side_length * spec.side_length) * (d / (spec.density * spec.thickness)).sqrt() * lambda;
    if !f.is_finite() {
        return Err(PhysicsError::NonFinite(format!("natural frequency for λ = {lambda}")));
    }
    Ok(f)
}

/// `sin(nπx)·sin(mπy) − sin(mπx)·sin(nπy)`; vanishes identically when `n = m`.
pub fn antisymmetric_shape(n: u32, m: u32, x: f64, y: f64) -> f64 {
    let (nf, mf) = (n as f64 * PI, m as f64 * PI);
    (nf * x).sin() * (mf * y).sin() - (mf * x).sin() * (nf * y).sin()
}

pub fn mode_shape(order: ModeOrder, x: f64, y: f64) -> f64 {
    antisymmetric_shape(order.n, order.m, x, y)
}

/// Samples the decayed, edge-damped mode shape on a `resolution²` grid and
/// normalises it so that `max |w| = 1`.
pub fn amplitude_field(order: ModeOrder, resolution: usize, decay: DecayParams) -> Result<FieldGrid, PhysicsError> {
    if resolution < 16 {
        return Err(PhysicsError::InvalidArgument(format!("resolution must be ≥ 16, got {resolution}")));
    }
    decay.validate()?;
    let coords: Vec<f64> = (0..resolution).map(|i| cell_center(i, resolution)).collect();
    let mut values = Vec::with_capacity(resolution * resolution);
    for &y in &coords {
        for &x in &coords {
            let r = (x * x + y * y).sqrt();
            let w = mode_shape(order, x, y)
                * (-decay.central_decay * r).exp()
                * (-decay.edge_damping * (x.abs() + y.abs())).exp();
            values.push(w);
        }
    }
    let peak = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if peak == 0.0 {
        return Err(PhysicsError::ZeroField);
    }
    values.iter_mut().for_each(|v| *v /= peak);
    Ok(FieldGrid { resolution, values })
}

/// Empirical quantile by linear interpolation of the empirical CDF: with
/// `h = q·N` (1-based), `Q = x₍⌊h⌋₎ + (h − ⌊h⌋)(x₍⌊h⌋+1₎ − x₍⌊h⌋₎)`.
///
/// Under this definition at most `⌊q·N⌋` samples lie strictly below `Q`.
pub fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = q * n as f64;
    let k = h.floor() as usize;
    if k == 0 {
        return sorted[0];
    }
    if k >= n {
        return sorted[n - 1];
    }
    let lo = sorted[k - 1];
    lo + (h - k as f64) * (sorted[k] - lo)
}

/// Marks cells with `|w|` strictly below the `quantile` of `|w|`, excluding
/// every cell whose center lies within `center_radius_norm` of the origin.
pub fn nodal_mask(field: &FieldGrid, quantile: f64, center_radius_norm: f64) -> Result<NodalMask, PhysicsError> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(PhysicsError::InvalidArgument(format!("quantile must lie in (0, 1), got {quantile}")));
    }
    if !(0.0..1.0).contains(&center_radius_norm) {
        return Err(PhysicsError::InvalidArgument(format!(
            "center radius must lie in [0, 1), got {center_radius_norm}"
        )));
    }
    let mut magnitudes: Vec<f64> = field.values.iter().map(|v| v.abs()).collect();
    magnitudes.sort_by(f64::total_cmp);
    if magnitudes.first() == magnitudes.last() {
        return Err(PhysicsError::DegenerateField);
    }
    let threshold = interpolated_quantile(&magnitudes, quantile);
    let res = field.resolution;
    let mut mask = NodalMask {
        resolution: res,
        cells: vec![false; res * res],
        quantile,
        center_radius_norm,
    };
    for row in 0..res {
        for col in 0..res {
            let below = field.get(row, col).abs() < threshold;
            mask.cells[row * res + col] = below && !mask.in_exclusion(row, col);
        }
    }
    Ok(mask)
}

/// Number of 8-connected components of true cells.
pub fn nodal_line_count(mask: &NodalMask) -> usize {
    let res = mask.resolution;
    let mut seen = vec![false; res * res];
    let mut queue = VecDeque::new();
    let mut components = 0;
    for start in 0..res * res {
        if !mask.cells[start] || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            let (r, c) = ((idx / res) as isize, (idx % res) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= res as isize || nc >= res as isize {
                        continue;
                    }
                    let n = nr as usize * res + nc as usize;
                    if mask.cells[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
    }
    components
}
