//! Coarse measurement lattices, additive noise and relative errors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Wavefield;

/// Samples of the fine wavefield on a lattice of time and space indices.
/// This is the measurement operator: predictions are compared only at
/// these points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub time_indices: Vec<usize>,
    pub space_indices: Vec<usize>,
    /// Row-major `time_indices.len() x space_indices.len()`.
    pub values: Vec<f64>,
    pub noise_level: f64,
    pub seed: Option<u64>,
}

impl MeasurementSet {
    pub fn new(time_indices: Vec<usize>, space_indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let m = Self {
            time_indices,
            space_indices,
            values,
            noise_level: 0.0,
            seed: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, idx) in [("time", &self.time_indices), ("space", &self.space_indices)] {
            if idx.is_empty() {
                return Err(Error::ShapeMismatch(format!("no {name} indices")));
            }
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParameter(format!(
                    "{name} indices must be strictly increasing"
                )));
            }
        }
        if self.values.len() != self.nt() * self.nx() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} lattice",
                self.values.len(),
                self.nt(),
                self.nx()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite measurement".into()));
        }
        Ok(())
    }

    pub fn nt(&self) -> usize {
        self.time_indices.len()
    }

    pub fn nx(&self) -> usize {
        self.space_indices.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fraction of the fine grid that is observed.
    pub fn coverage(&self, fine_nt: usize, fine_nx: usize) -> f64 {
        self.len() as f64 / (fine_nt * fine_nx) as f64
    }

    /// Checks that every index addresses a node of an `nt x nx` wavefield.
    pub fn check_bounds(&self, nt: usize, nx: usize) -> Result<()> {
        let t_ok = self.time_indices.last().is_some_and(|&t| t < nt);
        let x_ok = self.space_indices.last().is_some_and(|&x| x < nx);
        if t_ok && x_ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "measurement lattice exceeds a {nt}x{nx} wavefield"
            )))
        }
    }

    /// Uniform stride along each axis, if the lattice is regular.
    pub fn strides(&self) -> Option<(usize, usize)> {
        fn stride(idx: &[usize]) -> Option<usize> {
            match idx {
                [] => None,
                [_] => Some(1),
                [a, b, ..] => {
                    let s = b - a;
                    idx.windows(2).all(|w| w[1] - w[0] == s).then_some(s)
                }
            }
        }
        Some((stride(&self.time_indices)?, stride(&self.space_indices)?))
    }
}

/// Keeps every `stride_t`-th snapshot and every `stride_x`-th node,
/// starting from index 0.
pub fn downsample(w: &Wavefield, stride_x: usize, stride_t: usize) -> Result<MeasurementSet> {
    if stride_x == 0 || stride_t == 0 {
        return Err(Error::InvalidParameter("strides must be at least 1".into()));
    }
    if stride_x >= w.nx() || stride_t >= w.nt() {
        return Err(Error::InvalidParameter(format!(
            "strides ({stride_x}, {stride_t}) exceed the {}x{} wavefield",
            w.nt(),
            w.nx()
        )));
    }
    let time_indices: Vec<usize> = (0..w.nt()).step_by(stride_t).collect();
    let space_indices: Vec<usize> = (0..w.nx()).step_by(stride_x).collect();
    let values = w.sample(&time_indices, &space_indices);
    MeasurementSet::new(time_indices, space_indices, values)
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Adds `level * std(values) * g` with `g` i.i.d. standard normal draws
/// from a ChaCha8 generator seeded with `seed`.
pub fn add_noise(m: &MeasurementSet, level: f64, seed: u64) -> Result<MeasurementSet> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise level must be non-negative, got {level}"
        )));
    }
    let mut out = m.clone();
    out.noise_level = level;
    out.seed = Some(seed);
    if level == 0.0 {
        return Ok(out);
    }
    let sigma = level * std_dev(&m.values);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.values {
        let g: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * g;
    }
    Ok(out)
}

/// `||a - b|| / ||b||` over all entries.
pub fn rel_l2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} entries",
            a.len(),
            b.len()
        )));
    }
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let nd = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    Ok(nd / nb)
}
