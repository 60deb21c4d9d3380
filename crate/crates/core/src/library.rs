//! The 60-term candidate library and the regression system built from it.
//!
//! Every candidate is `u^p * m` with `p` in `0..=3` and `m` one of the 15
//! monomials of degree at most two over `u_x, u_xx, u_xxx, u_t`. The
//! enumeration is power-major, monomial-minor, in the order of [`FACTORS`].

use std::fmt;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::stencil::{kernel, Axis};

/// Derivative appearing in a candidate monomial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Deriv {
    Ux = 0,
    Uxx = 1,
    Uxxx = 2,
    Ut = 3,
}

impl Deriv {
    pub fn name(self) -> &'static str {
        match self {
            Deriv::Ux => "u_x",
            Deriv::Uxx => "u_xx",
            Deriv::Uxxx => "u_xxx",
            Deriv::Ut => "u_t",
        }
    }
}

/// A monomial of degree at most two over the derivatives.
pub type Factor = [Option<Deriv>; 2];

use Deriv::*;

pub const FACTORS: [Factor; 15] = [
    [None, None],
    [Some(Ux), None],
    [Some(Uxx), None],
    [Some(Uxxx), None],
    [Some(Ut), None],
    [Some(Ux), Some(Ux)],
    [Some(Uxx), Some(Uxx)],
    [Some(Uxxx), Some(Uxxx)],
    [Some(Ut), Some(Ut)],
    [Some(Ux), Some(Uxx)],
    [Some(Ux), Some(Uxxx)],
    [Some(Ux), Some(Ut)],
    [Some(Uxx), Some(Uxxx)],
    [Some(Uxx), Some(Ut)],
    [Some(Uxxx), Some(Ut)],
];

pub const MAX_POWER: u8 = 3;
pub const LIBRARY_SIZE: usize = FACTORS.len() * (MAX_POWER as usize + 1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TermDescriptor {
    pub poly_power: u8,
    pub factor: Factor,
}

impl TermDescriptor {
    pub const fn new(poly_power: u8, factor: Factor) -> Self {
        Self { poly_power, factor }
    }

    /// The pure second spatial derivative `u_xx`.
    pub const UXX: Self = Self::new(0, [Some(Uxx), None]);
    /// The viscous term `u_t`.
    pub const UT: Self = Self::new(0, [Some(Ut), None]);

    pub fn is_viscous(&self) -> bool {
        *self == Self::UT
    }

    /// Position in the canonical enumeration.
    pub fn index(&self) -> usize {
        let f = FACTORS
            .iter()
            .position(|f| *f == self.factor)
            .expect("factor outside the canonical list");
        self.poly_power as usize * FACTORS.len() + f
    }

    pub fn involves(&self, d: Deriv) -> bool {
        self.factor.contains(&Some(d))
    }

    pub fn name(&self) -> String {
        let poly = match self.poly_power {
            0 => None,
            1 => Some("u".to_string()),
            p => Some(format!("u^{p}")),
        };
        let factor = match self.factor {
            [None, _] => None,
            [Some(a), None] => Some(a.name().to_string()),
            [Some(a), Some(b)] if a == b => Some(format!("{}^2", a.name())),
            [Some(a), Some(b)] => Some(format!("{}*{}", a.name(), b.name())),
        };
        match (poly, factor) {
            (None, None) => "1".to_string(),
            (Some(p), None) => p,
            (None, Some(f)) => f,
            (Some(p), Some(f)) => format!("{p}*{f}"),
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        enumerate_terms()
            .iter()
            .find(|t| t.name() == name)
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("unknown library term '{name}'")))
    }

    /// Value of the term given `u` and `d = [u_x, u_xx, u_xxx, u_t]`.
    #[inline]
    pub fn eval(&self, u: f64, d: &[f64; 4]) -> f64 {
        let mut v = powi(u, self.poly_power);
        for f in self.factor.iter().flatten() {
            v *= d[*f as usize];
        }
        v
    }

    /// Partial derivatives of [`Self::eval`] with respect to `u` and each
    /// entry of `d`.
    #[inline]
    pub fn partials(&self, u: f64, d: &[f64; 4]) -> (f64, [f64; 4]) {
        let p = self.poly_power;
        let poly = powi(u, p);
        let mono: f64 = self.factor.iter().flatten().map(|f| d[*f as usize]).product();
        let du = if p == 0 {
            0.0
        } else {
            p as f64 * powi(u, p - 1) * mono
        };
        let mut dd = [0.0; 4];
        match self.factor {
            [None, _] => {}
            [Some(a), None] => dd[a as usize] = poly,
            [Some(a), Some(b)] => {
                dd[a as usize] += poly * d[b as usize];
                dd[b as usize] += poly * d[a as usize];
            }
        }
        (du, dd)
    }
}

#[inline]
fn powi(u: f64, p: u8) -> f64 {
    match p {
        0 => 1.0,
        1 => u,
        2 => u * u,
        _ => u * u * u,
    }
}

impl fmt::Display for TermDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Serialize for TermDescriptor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for TermDescriptor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        TermDescriptor::from_name(&name).map_err(serde::de::Error::custom)
    }
}

/// The canonical 60 candidates.
pub fn enumerate_terms() -> &'static [TermDescriptor] {
    static TERMS: OnceLock<Vec<TermDescriptor>> = OnceLock::new();
    TERMS.get_or_init(|| {
        (0..=MAX_POWER)
            .flat_map(|p| FACTORS.iter().map(move |&f| TermDescriptor::new(p, f)))
            .collect()
    })
}

/// `target ~ theta * xi` with unit-norm columns and a unit-norm target.
#[derive(Clone, Debug)]
pub struct RegressionProblem {
    /// Normalized candidate matrix, one column per library term.
    pub theta: DMatrix<f64>,
    /// Normalized `u_tt`.
    pub target: DVector<f64>,
    /// Raw column norms; all-zero columns keep scale 1.
    pub column_scales: Vec<f64>,
    /// Raw target norm (1 for an all-zero target).
    pub target_scale: f64,
    /// `(t, x)` lattice index of each row, lexicographically sorted.
    pub row_map: Vec<(usize, usize)>,
}

impl RegressionProblem {
    pub fn n_rows(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_terms(&self) -> usize {
        self.theta.ncols()
    }

    /// Un-normalized candidate matrix.
    pub fn raw_theta(&self) -> DMatrix<f64> {
        let mut m = self.theta.clone();
        for (j, s) in self.column_scales.iter().enumerate() {
            m.column_mut(j).scale_mut(*s);
        }
        m
    }

    pub fn raw_target(&self) -> DVector<f64> {
        &self.target * self.target_scale
    }

    /// Maps coefficients of the normalized system to physical coefficients.
    pub fn denormalize(&self, xi_scaled: &[f64]) -> Vec<f64> {
        xi_scaled
            .iter()
            .zip(&self.column_scales)
            .map(|(x, s)| x * self.target_scale / s)
            .collect()
    }

    pub fn normalize(&self, xi_raw: &[f64]) -> Vec<f64> {
        xi_raw
            .iter()
            .zip(&self.column_scales)
            .map(|(x, s)| x * s / self.target_scale)
            .collect()
    }
}

/// Builds the library matrix and `u_tt` target from lattice data.
///
/// `data` is row-major `nt x nx` on a uniform lattice with spacings
/// `dx_eff` and `dt_eff`. Rows whose five-point spatial or three-point
/// temporal receptive field leaves the lattice are dropped.
pub fn build_system(data: &[f64], nt: usize, nx: usize, dx_eff: f64, dt_eff: f64) -> Result<RegressionProblem> {
    if data.len() != nt * nx {
        return Err(Error::ShapeMismatch(format!(
            "{} values for a {nt}x{nx} lattice",
            data.len()
        )));
    }
    if nx < 5 || nt < 3 {
        return Err(Error::ShapeMismatch(format!(
            "a {nt}x{nx} lattice is too small for the stencils"
        )));
    }
    if !(dx_eff > 0.0 && dt_eff > 0.0) {
        return Err(Error::InvalidParameter("lattice spacings must be positive".into()));
    }
    let ks = [
        kernel(1, Axis::Space)?,
        kernel(2, Axis::Space)?,
        kernel(3, Axis::Space)?,
    ];
    let kt = kernel(1, Axis::Time)?;
    let ktt = kernel(2, Axis::Time)?;
    let at = |t: usize, x: usize| data[t * nx + x];

    let row_map: Vec<(usize, usize)> = (1..nt - 1)
        .flat_map(|t| (2..nx - 2).map(move |x| (t, x)))
        .collect();
    let n_rows = row_map.len();
    let terms = enumerate_terms();

    let mut theta = DMatrix::<f64>::zeros(n_rows, terms.len());
    let mut target = DVector::<f64>::zeros(n_rows);
    let mut d = [0.0; 4];
    for (r, &(t, x)) in row_map.iter().enumerate() {
        let row = &data[t * nx..(t + 1) * nx];
        for (m, k) in ks.iter().enumerate() {
            d[m] = k.apply(&row[x - 2..=x + 2], dx_eff);
        }
        let col = [at(t - 1, x), at(t, x), at(t + 1, x)];
        d[3] = kt.apply(&col, dt_eff);
        target[r] = ktt.apply(&col, dt_eff);
        let u = at(t, x);
        for (j, term) in terms.iter().enumerate() {
            theta[(r, j)] = term.eval(u, &d);
        }
    }
    if theta.iter().chain(target.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite library entry".into()));
    }

    let mut column_scales = Vec::with_capacity(terms.len());
    for j in 0..terms.len() {
        let norm = theta.column(j).norm();
        let s = if norm > 0.0 { norm } else { 1.0 };
        theta.column_mut(j).unscale_mut(s);
        column_scales.push(s);
    }
    let tn = target.norm();
    let target_scale = if tn > 0.0 { tn } else { 1.0 };
    target.unscale_mut(target_scale);

    Ok(RegressionProblem {
        theta,
        target,
        column_scales,
        target_scale,
        row_map,
    })
}
