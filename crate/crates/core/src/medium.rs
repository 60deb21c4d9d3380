//! Source, boundary and medium descriptions plus the stability guard.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid1D};

/// Ricker wavelet laid out in space as the initial displacement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Central frequency.
    pub f0: f64,
}

impl SourceSpec {
    pub fn new(f0: f64) -> Result<Self> {
        let s = Self { f0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f0.is_finite() && self.f0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "central frequency must be positive, got {}",
                self.f0
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// `u = 0` on the boundary node.
    Dirichlet,
    /// `u_x = 0`, enforced through mirrored ghost points.
    Neumann,
    /// Multi-transmitting formula absorbing boundary.
    Mtf {
        order: usize,
        /// Artificial wave velocity; `None` means the local wave speed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        artificial_velocity: Option<f64>,
    },
}

impl BoundaryCondition {
    pub fn mtf(order: usize) -> Self {
        BoundaryCondition::Mtf {
            order,
            artificial_velocity: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let BoundaryCondition::Mtf {
            order,
            artificial_velocity,
        } = *self
        {
            if !(1..=3).contains(&order) {
                return Err(Error::InvalidParameter(format!(
                    "MTF order must be 1, 2 or 3, got {order}"
                )));
            }
            if let Some(ca) = artificial_velocity {
                if !(ca.is_finite() && ca > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "MTF artificial velocity must be positive, got {ca}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub left: BoundaryCondition,
    pub right: BoundaryCondition,
}

impl BoundarySpec {
    pub fn new(left: BoundaryCondition, right: BoundaryCondition) -> Result<Self> {
        let b = Self { left, right };
        b.validate()?;
        Ok(b)
    }

    pub fn dirichlet() -> Self {
        Self {
            left: BoundaryCondition::Dirichlet,
            right: BoundaryCondition::Dirichlet,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.left.validate()?;
        self.right.validate()
    }

    /// Fills unset MTF artificial velocities with the local wave speed of
    /// `medium` at the corresponding boundary node.
    pub fn resolved(&self, medium: &MediumSpec) -> Self {
        let fill = |bc: BoundaryCondition, node: usize| match bc {
            BoundaryCondition::Mtf {
                order,
                artificial_velocity: None,
            } => BoundaryCondition::Mtf {
                order,
                artificial_velocity: Some(medium.csq.values()[node].sqrt()),
            },
            other => other,
        };
        Self {
            left: fill(self.left, 0),
            right: fill(self.right, medium.csq.len() - 1),
        }
    }
}

/// Squared wave speed and viscous factor per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    pub csq: Field,
    pub eta: Field,
}

impl MediumSpec {
    pub fn new(csq: Field, eta: Field) -> Result<Self> {
        let m = Self { csq, eta };
        m.validate()?;
        Ok(m)
    }

    /// Constant wave speed `c` and viscous factor `eta`.
    pub fn uniform(grid: &Grid1D, c: f64, eta: f64) -> Result<Self> {
        Self::new(
            Field::constant(grid.nx(), c * c),
            Field::constant(grid.nx(), eta),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.csq.len() != self.eta.len() {
            return Err(Error::ShapeMismatch(format!(
                "csq has {} entries, eta has {}",
                self.csq.len(),
                self.eta.len()
            )));
        }
        if let Some(i) = self.csq.values().iter().position(|&v| v <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "csq must be positive, entry {i} is {}",
                self.csq.values()[i]
            )));
        }
        Ok(())
    }

    pub fn wave_speed(&self) -> Vec<f64> {
        self.csq.values().iter().map(|v| v.sqrt()).collect()
    }

    pub fn is_homogeneous(&self) -> bool {
        let first = self.csq.values()[0];
        self.csq.values().iter().all(|&v| v == first)
    }
}

/// Ricker wavelet centred at `x = 1 / f0`, sampled on every grid node.
pub fn ricker_profile(grid: &Grid1D, src: &SourceSpec) -> Result<Field> {
    src.validate()?;
    Field::from_fn(grid, |x| ricker(x, src.f0))
}

pub(crate) fn ricker(x: f64, f0: f64) -> f64 {
    let arg = PI * f0 * (x - 1.0 / f0);
    let a2 = arg * arg;
    (2.0 * a2 - 1.0) * (-a2).exp()
}

/// `dt * max(c) / dx`. Values above 1 indicate an unstable explicit scheme.
pub fn cfl_margin(grid: &Grid1D, medium: &MediumSpec) -> Result<f64> {
    if let Some(i) = medium.csq.values().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "csq must be positive, entry {i} is {}",
            medium.csq.values()[i]
        )));
    }
    let cmax = medium
        .csq
        .values()
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.sqrt()));
    Ok(grid.dt() * cmax / grid.dx())
}
