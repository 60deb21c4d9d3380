//! Uniform space-time grids and the dense fields that live on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest spatial grid that still fits a five-point stencil.
pub const MIN_NX: usize = 5;
pub const MIN_NT: usize = 3;

/// Endpoint-inclusive uniform grid on `[0, length] x [0, duration]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    length: f64,
    nx: usize,
    duration: f64,
    nt: usize,
}

impl Grid1D {
    pub fn new(length: f64, nx: usize, duration: f64, nt: usize) -> Result<Self> {
        if nx < MIN_NX {
            return Err(Error::InvalidGrid(format!("nx = {nx} < {MIN_NX}")));
        }
        if nt < MIN_NT {
            return Err(Error::InvalidGrid(format!("nt = {nt} < {MIN_NT}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("length = {length}")));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::InvalidGrid(format!("duration = {duration}")));
        }
        Ok(Self {
            length,
            nx,
            duration,
            nt,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.nx - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.duration / (self.nt - 1) as f64
    }

    /// Position of spatial node `i`.
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    /// Same spacing, same time axis, `nx` replaced. The length grows with it.
    pub fn with_nx(&self, nx: usize) -> Result<Self> {
        Self::new(self.dx() * (nx - 1) as f64, nx, self.duration, self.nt)
    }
}

/// One real value per spatial node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "field entry {i} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self(vec![value; len])
    }

    pub fn from_fn(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid.positions().into_iter().map(f).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn mean_abs(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|v| v.abs()).sum::<f64>() / self.0.len() as f64
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn check_len(&self, nx: usize, what: &str) -> Result<()> {
        if self.0.len() != nx {
            return Err(Error::ShapeMismatch(format!(
                "{what} has {} entries, grid has {nx}",
                self.0.len()
            )));
        }
        Ok(())
    }
}

impl AsRef<[f64]> for Field {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Dense `nt x nx` displacement array, one row per time snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Wavefield {
    nt: usize,
    nx: usize,
    data: Vec<f64>,
}

impl Wavefield {
    pub fn zeros(nt: usize, nx: usize) -> Self {
        Self {
            nt,
            nx,
            data: vec![0.0; nt * nx],
        }
    }

    /// Wraps row-major data. Entries must be finite.
    pub fn from_rows(nt: usize, nx: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nt * nx {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {nt}x{nx} wavefield",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Unstable { step: k / nx });
        }
        Ok(Self { nt, nx, data })
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.nx..(t + 1) * self.nx]
    }

    pub fn get(&self, t: usize, x: usize) -> f64 {
        self.data[t * self.nx + x]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, x: usize) -> Vec<f64> {
        (0..self.nt).map(|t| self.get(t, x)).collect()
    }

    /// Values on the lattice `time_indices x space_indices`, row-major.
    pub fn sample(&self, time_indices: &[usize], space_indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(time_indices.len() * space_indices.len());
        for &t in time_indices {
            let row = self.row(t);
            out.extend(space_indices.iter().map(|&x| row[x]));
        }
        out
    }
}

impl AsRef<[f64]> for Wavefield {
    fn as_ref(&self) -> &[f64] {
        &self.data
    }
}
