//! Adjoint gradients against central finite differences on random small
//! problems.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::grid::{Field, Grid1D};
use crate::library::TermDescriptor;
use crate::medium::{BoundaryCondition, BoundarySpec};
use crate::sampling::{downsample, MeasurementSet};

use super::adjoint::gradient;
use super::rollout::rollout;
use super::{loss, ActiveTerm, DiscoveredEquation};

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
/// Relative finite-difference step. The oracle is the fourth-order
/// central difference, so truncation error stays far below rounding.
const FD_STEP: f64 = 1e-3;

/// Fraction of the gradient max-norm below which errors are measured
/// absolutely.
const RELATIVE_FLOOR: f64 = 1e-5;

const EXTRA_TERMS: [&str; 8] = ["u", "u_x", "u_xxx", "u*u_xx", "u^2*u_x", "u_x^2", "u*u_t", "u_x*u_t"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckTrial {
    pub seed: u64,
    pub nx: usize,
    pub nt: usize,
    pub terms: Vec<TermDescriptor>,
    pub boundaries: BoundarySpec,
    pub entries: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub trials: Vec<GradcheckTrial>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.trials.iter().fold(0.0, |m, t| m.max(t.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.trials.iter().all(|t| t.max_rel_error <= self.tolerance)
    }
}

struct Instance {
    grid: Grid1D,
    u0: Field,
    bc: BoundarySpec,
    eq: DiscoveredEquation,
    m: MeasurementSet,
}

fn random_field(rng: &mut ChaCha8Rng, nx: usize, lo: f64, hi: f64) -> Field {
    Field::new((0..nx).map(|_| rng.gen_range(lo..hi)).collect()).expect("finite")
}

fn random_boundary(rng: &mut ChaCha8Rng) -> BoundaryCondition {
    match rng.gen_range(0..3) {
        0 => BoundaryCondition::Dirichlet,
        1 => BoundaryCondition::Neumann,
        _ => BoundaryCondition::Mtf {
            order: rng.gen_range(1..=3),
            artificial_velocity: Some(rng.gen_range(0.5..1.5)),
        },
    }
}

fn instance(seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = rng.gen_range(10..=16);
    let nt = rng.gen_range(12..=20);
    let length = rng.gen_range(1.0..2.0);
    let dx = length / (nx - 1) as f64;
    // Courant number 0.5 at the largest admissible speed sqrt(2).
    let dt = 0.5 * dx / 2f64.sqrt();
    let grid = Grid1D::new(length, nx, dt * (nt - 1) as f64, nt)?;

    let centre = rng.gen_range(0.3..0.7) * length;
    let width = rng.gen_range(0.15..0.3) * length;
    let tilt = rng.gen_range(-0.3..0.3);
    let u0 = Field::from_fn(&grid, |x| (-((x - centre) / width).powi(2)).exp() + tilt * x / length)?;
    let bc = BoundarySpec {
        left: random_boundary(&mut rng),
        right: random_boundary(&mut rng),
    };

    let mut terms = vec![ActiveTerm {
        term: TermDescriptor::UXX,
        coeff: random_field(&mut rng, nx, 0.5, 2.0),
    }];
    // Nonlinear terms stay small so that the short rollouts remain bounded.
    let extra = rng.gen_range(0..=2);
    for name in EXTRA_TERMS.choose_multiple(&mut rng, extra) {
        terms.push(ActiveTerm {
            term: TermDescriptor::from_name(name).expect("known term"),
            coeff: random_field(&mut rng, nx, 0.05, 0.2),
        });
    }
    let eta = rng.gen_bool(0.75).then(|| random_field(&mut rng, nx, -2.0, -0.5));
    let eq = DiscoveredEquation::new(terms, eta)?;

    // Measurements from a perturbed copy, so the residual is non-zero.
    let mut truth = eq.clone();
    for t in &mut truth.terms {
        t.coeff = Field::new(t.coeff.values().iter().map(|c| c * rng.gen_range(0.8..1.2)).collect())?;
    }
    let w = rollout(&truth, &u0, &bc, &grid)?;
    let m = downsample(&w, rng.gen_range(1..=3), rng.gen_range(1..=3))?;
    Ok(Instance { grid, u0, bc, eq, m })
}

fn trial(seed: u64) -> Result<GradcheckTrial> {
    let Instance { grid, u0, bc, eq, m } = instance(seed)?;
    let g = gradient(&eq, &u0, &bc, &grid, &m)?;
    let eval = |e: &DiscoveredEquation| -> Result<f64> { loss(&rollout(e, &u0, &bc, &grid)?, &m) };
    let scale = g.flatten().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut worst: f64 = 0.0;
    let mut entries = 0;

    let mut compare = |perturb: &dyn Fn(f64) -> DiscoveredEquation, c: f64, adj: f64| -> Result<()> {
        let h = FD_STEP * c.abs().max(1e-3);
        let (p1, m1) = (eval(&perturb(h))?, eval(&perturb(-h))?);
        let (p2, m2) = (eval(&perturb(2.0 * h))?, eval(&perturb(-2.0 * h))?);
        let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        // Entries far below the gradient's max-norm are compared against that
        // scale instead: the finite difference cannot resolve them further.
        let denom = fd.abs().max(adj.abs()).max(RELATIVE_FLOOR * scale);
        if denom > 0.0 {
            worst = worst.max((fd - adj).abs() / denom);
        }
        entries += 1;
        Ok(())
    };
    let nudge = |f: &Field, i: usize, d: f64| {
        let mut v = f.values().to_vec();
        v[i] += d;
        Field::new(v).expect("finite")
    };
    for (k, t) in eq.terms.iter().enumerate() {
        for i in 0..grid.nx() {
            let perturb = |d: f64| {
                let mut e = eq.clone();
                e.terms[k].coeff = nudge(&t.coeff, i, d);
                e
            };
            compare(&perturb, t.coeff.values()[i], g.terms[k][i])?;
        }
    }
    if let (Some(eta), Some(ge)) = (&eq.eta, &g.eta) {
        for i in 0..grid.nx() {
            let perturb = |d: f64| {
                let mut e = eq.clone();
                e.eta = Some(nudge(eta, i, d));
                e
            };
            compare(&perturb, eta.values()[i], ge[i])?;
        }
    }
    Ok(GradcheckTrial {
        seed,
        nx: grid.nx(),
        nt: grid.nt(),
        terms: eq.terms.iter().map(|t| t.term).collect(),
        boundaries: bc,
        entries,
        max_rel_error: worst,
    })
}

/// Runs `trials` random instances seeded from `seed`, `seed + 1`, ...
pub fn gradcheck(seed: u64, trials: usize) -> Result<GradcheckReport> {
    Ok(GradcheckReport {
        tolerance: GRADCHECK_TOLERANCE,
        trials: (0..trials as u64)
            .map(|k| trial(seed.wrapping_add(k)))
            .collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_reproducible() {
        let a = instance(9).unwrap();
        let b = instance(9).unwrap();
        assert_eq!(a.eq, b.eq);
        assert_eq!(a.m, b.m);
    }

    #[test]
    fn small_suite_passes() {
        let r = gradcheck(100, 6).unwrap();
        assert!(r.passed(), "{:?}", r.trials);
    }
}
