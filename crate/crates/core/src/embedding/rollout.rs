use crate::error::{Error, Result};
use crate::grid::{Field, Grid1D, Wavefield};
use crate::library::TermDescriptor;
use crate::medium::BoundarySpec;
use crate::simulator::{check_finite, Recurrence, Workspace};

use super::DiscoveredEquation;

/// Hidden state of the recurrence: the two most recent snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub u_next: Field,
    pub u_curr: Field,
}

/// Every forward snapshot, which is all the adjoint sweep needs to replay
/// intermediate values exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TapeCheckpoint {
    pub snapshots: Wavefield,
}

impl TapeCheckpoint {
    pub fn state(&self, t: usize) -> Option<RecurrentState> {
        let w = &self.snapshots;
        (t + 1 < w.nt()).then(|| RecurrentState {
            u_next: Field::new(w.row(t + 1).to_vec()).expect("finite tape"),
            u_curr: Field::new(w.row(t).to_vec()).expect("finite tape"),
        })
    }
}

/// The equation bound to a recurrence.
pub(crate) struct Model<'a> {
    pub rec: Recurrence,
    pub eq: &'a DiscoveredEquation,
    pub need: [bool; 3],
    pub eta: Vec<f64>,
}

impl<'a> Model<'a> {
    pub(crate) fn new(eq: &'a DiscoveredEquation, bc: &BoundarySpec, grid: Grid1D) -> Result<Self> {
        eq.validate()?;
        if !eq.is_empty() && eq.nx() != grid.nx() {
            return Err(Error::ShapeMismatch(format!(
                "equation fields have {} nodes, grid has {}",
                eq.nx(),
                grid.nx()
            )));
        }
        let rec = Recurrence::new(grid, bc)?;
        let mut need = [false; 3];
        for t in &eq.terms {
            for f in t.term.factor.iter().flatten() {
                if (*f as usize) < 3 {
                    need[*f as usize] = true;
                }
            }
        }
        let eta = eq
            .eta
            .as_ref()
            .map(|e| e.values().to_vec())
            .unwrap_or_else(|| vec![0.0; grid.nx()]);
        Ok(Self { rec, eq, need, eta })
    }

    /// Evaluates `R = sum_k coeff_k * term_k(u)` on the formula nodes.
    /// `ws` must hold the spatial derivatives of `u`; `velocity` is the
    /// backward difference `(u - u_prev) / dt`, or `None` at rest.
    pub(crate) fn rhs(&self, u: &[f64], ws: &Workspace, velocity: Option<&[f64]>, out: &mut [f64]) {
        for i in self.rec.formula_nodes() {
            let d = node_derivs(ws, velocity, i);
            let mut acc: Option<f64> = None;
            for t in &self.eq.terms {
                let v = t.coeff.values()[i] * t.term.eval(u[i], &d);
                acc = Some(acc.map_or(v, |a| a + v));
            }
            out[i] = acc.unwrap_or(0.0);
        }
    }

    pub(crate) fn velocity(&self, prev: &[f64], curr: &[f64], out: &mut [f64]) {
        let dt = self.rec.grid.dt();
        for ((o, c), p) in out.iter_mut().zip(curr).zip(prev) {
            *o = (c - p) / dt;
        }
    }
}

#[inline]
pub(crate) fn node_derivs(ws: &Workspace, velocity: Option<&[f64]>, i: usize) -> [f64; 4] {
    [
        ws.d[0][i],
        ws.d[1][i],
        ws.d[2][i],
        velocity.map_or(0.0, |v| v[i]),
    ]
}

/// Largest wave speed implied by a `u_xx` coefficient, as a CFL number.
pub fn effective_cfl(eq: &DiscoveredEquation, grid: &Grid1D) -> Option<f64> {
    let f = eq.coefficient(&TermDescriptor::UXX)?;
    let cmax = f.values().iter().fold(0.0f64, |m, &v| m.max(v.max(0.0).sqrt()));
    Some(grid.dt() * cmax / grid.dx())
}

/// Unrolls `eq` from the displacement `u0` at rest.
///
/// MTF artificial velocities in `bc` must be resolved.
pub fn rollout(eq: &DiscoveredEquation, u0: &Field, bc: &BoundarySpec, grid: &Grid1D) -> Result<Wavefield> {
    let model = Model::new(eq, bc, *grid)?;
    forward(&model, u0)
}

pub(crate) fn forward(model: &Model<'_>, u0: &Field) -> Result<Wavefield> {
    let rec = &model.rec;
    let (nt, nx) = (rec.grid.nt(), rec.grid.nx());
    u0.check_len(nx, "initial field")?;
    if let Some(margin) = effective_cfl(model.eq, &rec.grid).filter(|&m| m > 1.0) {
        log::warn!("rollout coefficients imply a CFL number of {margin:.3}");
    }
    let uses_ut = model.eq.uses_time_derivative();

    let mut data = vec![0.0; nt * nx];
    data[..nx].copy_from_slice(u0.values());
    rec.constrain_initial(&mut data[..nx]);
    let mut hist = rec.histories();
    for h in [hist.0.as_mut(), hist.1.as_mut()].into_iter().flatten() {
        h.prime(&data[..nx]);
    }

    let mut ws = Workspace::new(nx);
    let mut rhs = vec![0.0; nx];
    let mut vel = vec![0.0; nx];
    for t in 0..nt - 1 {
        let (done, rest) = data.split_at_mut((t + 1) * nx);
        let curr = &done[t * nx..];
        let out = &mut rest[..nx];
        rec.derivatives(curr, &mut ws, model.need);
        if t == 0 {
            model.rhs(curr, &ws, None, &mut rhs);
            rec.bootstrap(curr, &rhs, out);
        } else {
            let prev = &done[(t - 1) * nx..t * nx];
            let v = if uses_ut {
                model.velocity(prev, curr, &mut vel);
                Some(vel.as_slice())
            } else {
                None
            };
            model.rhs(curr, &ws, v, &mut rhs);
            rec.advance(prev, curr, &rhs, &model.eta, out);
        }
        rec.close_boundaries(out, &mut hist);
        check_finite(out, t + 1)?;
    }
    Wavefield::from_rows(nt, nx, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{BoundaryCondition, MediumSpec, SourceSpec};
    use crate::simulator::{simulate, SimConfig};

    fn config(length: f64, nx: usize, duration: f64, nt: usize, c: f64, eta: f64, f0: f64, bc: BoundarySpec) -> SimConfig {
        let grid = Grid1D::new(length, nx, duration, nt).unwrap();
        SimConfig::new(grid, MediumSpec::uniform(&grid, c, eta).unwrap(), SourceSpec { f0 }, bc).unwrap()
    }

    fn replay(cfg: &SimConfig, coeff: f64, eta: Option<f64>) -> Wavefield {
        let eq = DiscoveredEquation::uniform(cfg.grid.nx(), &[(TermDescriptor::UXX, coeff)], eta).unwrap();
        rollout(&eq, &cfg.initial_field().unwrap(), &cfg.resolved_boundaries(), &cfg.grid).unwrap()
    }

    #[test]
    fn case1_rollout_is_bit_identical() {
        let cfg = config(6.0, 128, 5.0, 420, 2.5, 0.0, 0.5, BoundarySpec::dirichlet());
        assert_eq!(replay(&cfg, 6.25, Some(0.0)), simulate(&cfg).unwrap());
        assert_eq!(replay(&cfg, 6.25, None), simulate(&cfg).unwrap());
    }

    #[test]
    fn case2_rollout_is_bit_identical() {
        let bc = BoundarySpec::new(BoundaryCondition::mtf(2), BoundaryCondition::Neumann).unwrap();
        let cfg = config(6.0, 128, 5.0, 420, 2.5, 0.0, 0.5, bc);
        assert_eq!(replay(&cfg, 6.25, None), simulate(&cfg).unwrap());
    }

    #[test]
    fn case3_rollout_matches_simulation() {
        let cfg = config(3.0, 128, 3.0, 242, 1.2, -1.0, 1.0, BoundarySpec::dirichlet());
        let a = replay(&cfg, 1.44, Some(-1.0));
        let b = simulate(&cfg).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_equation_drifts_freely() {
        let grid = Grid1D::new(1.0, 12, 1.0, 15).unwrap();
        let bc = BoundarySpec::new(BoundaryCondition::Neumann, BoundaryCondition::Neumann).unwrap();
        let u0 = Field::new((0..12).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap();
        let eq = DiscoveredEquation::uniform(12, &[(TermDescriptor::UXX, 0.0)], Some(0.0)).unwrap();
        let w = rollout(&eq, &u0, &bc, &grid).unwrap();
        // At rest with no forcing, u^{t+1} = 2u^t - u^{t-1} keeps u0.
        for t in 0..15 {
            for (a, b) in w.row(t).iter().zip(u0.values()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        let empty = DiscoveredEquation::new(vec![], None).unwrap();
        assert_eq!(rollout(&empty, &u0, &bc, &grid).unwrap(), w);
    }

    #[test]
    fn tape_exposes_recurrent_state() {
        let cfg = config(3.0, 40, 1.0, 20, 1.2, -1.0, 1.0, BoundarySpec::dirichlet());
        let tape = TapeCheckpoint {
            snapshots: replay(&cfg, 1.44, Some(-1.0)),
        };
        let s = tape.state(3).unwrap();
        assert_eq!(s.u_curr.values(), tape.snapshots.row(3));
        assert_eq!(s.u_next.values(), tape.snapshots.row(4));
        assert!(tape.state(19).is_none());
    }

    #[test]
    fn blow_up_reports_step() {
        let grid = Grid1D::new(1.0, 20, 10.0, 60).unwrap();
        let u0 = Field::new((0..20).map(|i| (i as f64).sin()).collect()).unwrap();
        let eq = DiscoveredEquation::uniform(20, &[(TermDescriptor::UXX, 1e6)], None).unwrap();
        assert!(effective_cfl(&eq, &grid).unwrap() > 1.0);
        match rollout(&eq, &u0, &BoundarySpec::dirichlet(), &grid) {
            Err(Error::Unstable { step }) => assert!(step > 1 && step < 60),
            other => panic!("expected instability, got {other:?}"),
        }
    }
}
