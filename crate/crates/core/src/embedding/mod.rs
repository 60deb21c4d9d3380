//! The trainable recurrence: the discovered equation is unrolled with the
//! simulator's finite-difference update, its coefficient fields are fitted
//! to coarse measurements by discrete-adjoint gradients (Adam, then
//! L-BFGS), and terms whose coefficients collapse are pruned.

mod adjoint;
mod check;
pub mod optim;
mod rollout;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Wavefield};
use crate::library::TermDescriptor;
use crate::sampling::MeasurementSet;

pub use adjoint::{gradient, EquationGradient};
pub use rollout::{effective_cfl, rollout, RecurrentState, TapeCheckpoint};
pub use check::{gradcheck, GradcheckReport, GradcheckTrial, GRADCHECK_TOLERANCE};
pub use optim::{AdamConfig, LbfgsConfig};
pub use train::{
    filter_terms, optimize, CoefficientMode, Optimized, OptimizerConfig, Phase, TraceEntry,
    DEFAULT_FILTER_THRESHOLD,
};

/// One right-hand-side term and its coefficient at every node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveTerm {
    pub term: TermDescriptor,
    pub coeff: Field,
}

/// `u_tt = sum_k coeff_k(x) * term_k(u) + eta(x) * u_t`.
///
/// The viscous term is kept apart from `terms` because the recurrence
/// treats it implicitly (centred in time).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveredEquation {
    pub terms: Vec<ActiveTerm>,
    pub eta: Option<Field>,
}

impl DiscoveredEquation {
    pub fn new(terms: Vec<ActiveTerm>, eta: Option<Field>) -> Result<Self> {
        let eq = Self { terms, eta };
        eq.validate()?;
        Ok(eq)
    }

    /// Spatially constant coefficients on `nx` nodes.
    pub fn uniform(nx: usize, terms: &[(TermDescriptor, f64)], eta: Option<f64>) -> Result<Self> {
        Self::new(
            terms
                .iter()
                .map(|&(term, c)| ActiveTerm {
                    term,
                    coeff: Field::constant(nx, c),
                })
                .collect(),
            eta.map(|e| Field::constant(nx, e)),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let nx = self.nx();
        for (i, t) in self.terms.iter().enumerate() {
            if t.term.is_viscous() {
                return Err(Error::InvalidParameter(
                    "the viscous term belongs in `eta`, not `terms`".into(),
                ));
            }
            if self.terms[..i].iter().any(|o| o.term == t.term) {
                return Err(Error::InvalidParameter(format!("duplicate term {}", t.term)));
            }
            t.coeff.check_len(nx, "coefficient field")?;
        }
        if let Some(e) = &self.eta {
            e.check_len(nx, "eta field")?;
        }
        Ok(())
    }

    /// Node count, or 0 for an equation with no fields at all.
    pub fn nx(&self) -> usize {
        self.terms
            .first()
            .map(|t| t.coeff.len())
            .or_else(|| self.eta.as_ref().map(Field::len))
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty() && self.eta.is_none()
    }

    pub fn coefficient(&self, term: &TermDescriptor) -> Option<&Field> {
        if term.is_viscous() {
            return self.eta.as_ref();
        }
        self.terms.iter().find(|t| t.term == *term).map(|t| &t.coeff)
    }

    /// Every term including the viscous one, in library order.
    pub fn support(&self) -> Vec<TermDescriptor> {
        let mut all: Vec<TermDescriptor> = self.terms.iter().map(|t| t.term).collect();
        if self.eta.is_some() {
            all.push(TermDescriptor::UT);
        }
        all.sort_by_key(TermDescriptor::index);
        all
    }

    /// `(name, field)` pairs in library order, viscous term included.
    pub fn named_fields(&self) -> Vec<(String, &Field)> {
        self.support()
            .into_iter()
            .map(|t| (t.name(), self.coefficient(&t).expect("term in support")))
            .collect()
    }

    pub(crate) fn uses_time_derivative(&self) -> bool {
        self.terms.iter().any(|t| t.term.involves(crate::library::Deriv::Ut))
    }
}

/// Mean squared misfit over the measurement lattice.
pub fn loss(prediction: &Wavefield, m: &MeasurementSet) -> Result<f64> {
    m.check_bounds(prediction.nt(), prediction.nx())?;
    let mut sum = 0.0;
    let mut k = 0;
    for &t in &m.time_indices {
        let row = prediction.row(t);
        for &x in &m.space_indices {
            let r = row[x] - m.values[k];
            sum += r * r;
            k += 1;
        }
    }
    Ok(sum / m.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice() -> (Wavefield, MeasurementSet) {
        let w = Wavefield::from_rows(4, 5, (0..20).map(|k| k as f64 * 0.1).collect()).unwrap();
        let m = crate::sampling::downsample(&w, 2, 1).unwrap();
        (w, m)
    }

    #[test]
    fn loss_examples() {
        let (w, m) = lattice();
        assert_eq!(loss(&w, &m).unwrap(), 0.0);
        let mut shifted = m.clone();
        shifted.values.iter_mut().for_each(|v| *v -= 1.0);
        assert!((loss(&w, &shifted).unwrap() - 1.0).abs() < 1e-12);
        let mut one = m.clone();
        one.values[3] += 0.5;
        assert!((loss(&w, &one).unwrap() - 0.25 / m.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn loss_rejects_out_of_bounds_lattice() {
        let (w, mut m) = lattice();
        m.space_indices = vec![0, 2, 7];
        assert!(loss(&w, &m).is_err());
    }

    #[test]
    fn equation_validation() {
        assert!(DiscoveredEquation::uniform(8, &[(TermDescriptor::UT, 1.0)], None).is_err());
        assert!(DiscoveredEquation::uniform(
            8,
            &[(TermDescriptor::UXX, 1.0), (TermDescriptor::UXX, 2.0)],
            None
        )
        .is_err());
        let eq = DiscoveredEquation::uniform(8, &[(TermDescriptor::UXX, 1.0)], Some(-0.1)).unwrap();
        assert_eq!(eq.support(), vec![TermDescriptor::UXX, TermDescriptor::UT]);
        assert_eq!(eq.named_fields()[1].0, "u_t");
    }
}
