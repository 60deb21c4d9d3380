//! Forward finite-difference time stepping of
//! `u_tt = c^2(x) u_xx + eta(x) u_t` with Dirichlet, Neumann or
//! multi-transmitting (MTF) boundaries.
//!
//! The recurrence itself lives in [`Recurrence`] and is shared with the
//! trainable rollout in [`crate::embedding`], so a rollout of the true
//! equation reproduces [`simulate`] bit for bit.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid1D, Wavefield};
use crate::medium::{cfl_margin, ricker_profile, BoundaryCondition, BoundarySpec, MediumSpec, SourceSpec};
use crate::stencil::{kernel, pad_into, Axis, GhostRule, Kernel, MAX_PAD};

/// Ghost points next to an MTF boundary node. Only the first interior node
/// reads them; cubic extrapolation keeps its stencil consistent.
const MTF_GHOSTS: GhostRule = GhostRule::Extrapolate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub grid: Grid1D,
    pub medium: MediumSpec,
    pub source: SourceSpec,
    pub boundaries: BoundarySpec,
}

impl SimConfig {
    pub fn new(
        grid: Grid1D,
        medium: MediumSpec,
        source: SourceSpec,
        boundaries: BoundarySpec,
    ) -> Result<Self> {
        let cfg = Self {
            grid,
            medium,
            source,
            boundaries,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.medium.validate()?;
        self.medium.csq.check_len(self.grid.nx(), "csq")?;
        self.source.validate()?;
        self.boundaries.validate()?;
        let margin = cfl_margin(&self.grid, &self.medium)?;
        if margin > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "CFL margin {margin:.4} exceeds 1"
            )));
        }
        Ok(())
    }

    /// Boundary spec with MTF artificial velocities filled in.
    pub fn resolved_boundaries(&self) -> BoundarySpec {
        self.boundaries.resolved(&self.medium)
    }

    pub fn initial_field(&self) -> Result<Field> {
        ricker_profile(&self.grid, &self.source)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Side {
    Left,
    Right,
}

/// Interpolation geometry and signed binomial weights of an MTF boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct MtfPlan {
    side: Side,
    /// Inward distances `j c_a dt`, in grid units, for `j = 1..=order`.
    offsets: Vec<f64>,
    /// Per `j`: three (inward node offset, Lagrange weight) pairs.
    points: Vec<[(usize, f64); 3]>,
    /// `(-1)^(j+1) C(N, j)`.
    coeffs: Vec<f64>,
}

impl MtfPlan {
    pub(crate) fn new(side: Side, order: usize, ca: f64, grid: &Grid1D) -> Result<Self> {
        let mut offsets = Vec::with_capacity(order);
        let mut points = Vec::with_capacity(order);
        let mut coeffs = Vec::with_capacity(order);
        for j in 1..=order {
            let r = j as f64 * ca * grid.dt() / grid.dx();
            let centre = (r.round() as usize).max(1);
            if centre + 1 > grid.nx() - 1 {
                return Err(Error::InvalidParameter(format!(
                    "MTF interpolation point {r:.3} cells inward lies outside the grid"
                )));
            }
            let nodes = [centre - 1, centre, centre + 1];
            let mut pts = [(0usize, 0.0f64); 3];
            for (a, &na) in nodes.iter().enumerate() {
                let mut w = 1.0;
                for (b, &nb) in nodes.iter().enumerate() {
                    if a != b {
                        w *= (r - nb as f64) / (na as f64 - nb as f64);
                    }
                }
                pts[a] = (na, w);
            }
            offsets.push(r);
            points.push(pts);
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            coeffs.push(sign * binomial(order, j));
        }
        Ok(Self {
            side,
            offsets,
            points,
            coeffs,
        })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Number of nodes, counted inward from the boundary, that the formula reads.
    fn width(&self) -> usize {
        self.points
            .iter()
            .map(|p| p[2].0 + 1)
            .max()
            .unwrap_or(1)
    }

    pub(crate) fn node_index(&self, inward: usize, nx: usize) -> usize {
        match self.side {
            Side::Left => inward,
            Side::Right => nx - 1 - inward,
        }
    }

    /// `(j, grid node, weight)` for every history value the formula reads.
    pub(crate) fn taps(&self, nx: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.points.iter().enumerate().flat_map(move |(jm1, pts)| {
            let c = self.coeffs[jm1];
            pts.iter()
                .map(move |&(o, w)| (jm1 + 1, self.node_index(o, nx), c * w))
        })
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * (n + 1 - i) as f64 / i as f64)
}

/// The last `order` snapshots near one MTF boundary, most recent first.
/// Times before the start of the simulation read as zero.
#[derive(Clone, Debug)]
pub struct MtfHistory {
    plan: MtfPlan,
    snapshots: VecDeque<Vec<f64>>,
}

impl MtfHistory {
    pub fn new(plan: MtfPlan) -> Self {
        let depth = plan.order();
        let width = plan.width();
        Self {
            snapshots: (0..depth).map(|_| vec![0.0; width]).collect(),
            plan,
        }
    }

    pub fn plan(&self) -> &MtfPlan {
        &self.plan
    }

    /// Records a full snapshot as the newest history entry.
    pub fn push(&mut self, row: &[f64]) {
        let width = self.plan.width();
        let nx = row.len();
        let mut local = self.snapshots.pop_back().unwrap_or_else(|| vec![0.0; width]);
        for (o, v) in local.iter_mut().enumerate() {
            *v = row[self.plan.node_index(o, nx)];
        }
        self.snapshots.push_front(local);
    }

    /// Fills every history level with `row`: the field has been at rest in
    /// that state since before the start.
    pub fn prime(&mut self, row: &[f64]) {
        for _ in 0..self.snapshots.len() {
            self.push(row);
        }
    }

    /// Boundary value at the next time level.
    pub fn boundary_value(&self) -> f64 {
        self.plan
            .points
            .iter()
            .zip(&self.plan.coeffs)
            .zip(&self.snapshots)
            .map(|((pts, c), snap)| c * pts.iter().map(|&(o, w)| w * snap[o]).sum::<f64>())
            .sum()
    }
}

/// Next boundary value from an MTF history.
pub fn mtf_boundary(history: &MtfHistory) -> f64 {
    history.boundary_value()
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum SidePlan {
    Dirichlet,
    Neumann,
    Mtf(MtfPlan),
}

impl SidePlan {
    pub(crate) fn ghost_rule(&self) -> GhostRule {
        match self {
            SidePlan::Dirichlet => GhostRule::Zero,
            SidePlan::Neumann => GhostRule::Mirror,
            SidePlan::Mtf(_) => MTF_GHOSTS,
        }
    }

    /// Whether the boundary node is updated by the interior formula.
    fn uses_formula(&self) -> bool {
        matches!(self, SidePlan::Neumann)
    }

    pub(crate) fn mtf(&self) -> Option<&MtfPlan> {
        match self {
            SidePlan::Mtf(p) => Some(p),
            _ => None,
        }
    }
}

/// Scratch buffers for one spatial-derivative evaluation.
#[derive(Clone, Debug)]
pub(crate) struct Workspace {
    pub padded: Vec<f64>,
    /// `u_x`, `u_xx`, `u_xxx` at every node.
    pub d: [Vec<f64>; 3],
}

impl Workspace {
    pub(crate) fn new(nx: usize) -> Self {
        Self {
            padded: vec![0.0; nx + 2 * MAX_PAD],
            d: [vec![0.0; nx], vec![0.0; nx], vec![0.0; nx]],
        }
    }
}

/// The explicit three-level update shared by the simulator and the rollout:
///
/// `u+ = (4 u + 2 dt^2 R - (2 + eta dt) u-) / (2 - eta dt)`
///
/// for nodes governed by the interior formula, with boundary nodes pinned
/// (Dirichlet) or predicted by MTF.
#[derive(Clone, Debug)]
pub(crate) struct Recurrence {
    pub grid: Grid1D,
    pub left: SidePlan,
    pub right: SidePlan,
    kernels: [Kernel; 3],
}

impl Recurrence {
    /// `bc` must have its MTF artificial velocities resolved.
    pub(crate) fn new(grid: Grid1D, bc: &BoundarySpec) -> Result<Self> {
        bc.validate()?;
        let plan = |c: BoundaryCondition, side: Side| -> Result<SidePlan> {
            Ok(match c {
                BoundaryCondition::Dirichlet => SidePlan::Dirichlet,
                BoundaryCondition::Neumann => SidePlan::Neumann,
                BoundaryCondition::Mtf {
                    order,
                    artificial_velocity,
                } => {
                    let ca = artificial_velocity.ok_or_else(|| {
                        Error::InvalidParameter("MTF artificial velocity not resolved".into())
                    })?;
                    SidePlan::Mtf(MtfPlan::new(side, order, ca, &grid)?)
                }
            })
        };
        Ok(Self {
            grid,
            left: plan(bc.left, Side::Left)?,
            right: plan(bc.right, Side::Right)?,
            kernels: [
                kernel(1, Axis::Space)?,
                kernel(2, Axis::Space)?,
                kernel(3, Axis::Space)?,
            ],
        })
    }

    pub(crate) fn nx(&self) -> usize {
        self.grid.nx()
    }

    pub(crate) fn kernels(&self) -> &[Kernel; 3] {
        &self.kernels
    }

    /// Inclusive range of nodes updated by the interior formula.
    pub(crate) fn formula_nodes(&self) -> std::ops::RangeInclusive<usize> {
        let lo = if self.left.uses_formula() { 0 } else { 1 };
        let hi = if self.right.uses_formula() {
            self.nx() - 1
        } else {
            self.nx() - 2
        };
        lo..=hi
    }

    pub(crate) fn histories(&self) -> (Option<MtfHistory>, Option<MtfHistory>) {
        (
            self.left.mtf().cloned().map(MtfHistory::new),
            self.right.mtf().cloned().map(MtfHistory::new),
        )
    }

    /// Applies pinned boundary values to an initial snapshot.
    pub(crate) fn constrain_initial(&self, u: &mut [f64]) {
        let n = u.len();
        if self.left == SidePlan::Dirichlet {
            u[0] = 0.0;
        }
        if self.right == SidePlan::Dirichlet {
            u[n - 1] = 0.0;
        }
    }

    /// Fills `ws.d[m]` for every requested derivative order `m + 1`.
    pub(crate) fn derivatives(&self, u: &[f64], ws: &mut Workspace, need: [bool; 3]) {
        pad_into(u, self.left.ghost_rule(), self.right.ghost_rule(), &mut ws.padded);
        let dx = self.grid.dx();
        let Workspace { padded, d } = ws;
        for (m, out) in d.iter_mut().enumerate() {
            if !need[m] {
                continue;
            }
            let k = &self.kernels[m];
            for (i, o) in out.iter_mut().enumerate() {
                *o = k.apply(&padded[i..i + 2 * MAX_PAD + 1], dx);
            }
        }
    }

    /// First step from rest: `u1 = u0 + dt^2/2 R(u0)`.
    pub(crate) fn bootstrap(&self, u0: &[f64], rhs: &[f64], out: &mut [f64]) {
        let half = 0.5 * self.grid.dt() * self.grid.dt();
        out.copy_from_slice(u0);
        for i in self.formula_nodes() {
            out[i] = u0[i] + half * rhs[i];
        }
    }

    pub(crate) fn advance(&self, prev: &[f64], curr: &[f64], rhs: &[f64], eta: &[f64], out: &mut [f64]) {
        let dt = self.grid.dt();
        let two_dt2 = 2.0 * dt * dt;
        for i in self.formula_nodes() {
            let e = eta[i] * dt;
            out[i] = (4.0 * curr[i] + two_dt2 * rhs[i] - (2.0 + e) * prev[i]) / (2.0 - e);
        }
    }

    /// Sets pinned and MTF boundary nodes of the new snapshot `out`, then
    /// pushes it onto the MTF histories.
    pub(crate) fn close_boundaries(
        &self,
        out: &mut [f64],
        histories: &mut (Option<MtfHistory>, Option<MtfHistory>),
    ) {
        let n = out.len();
        match (&self.left, &histories.0) {
            (SidePlan::Dirichlet, _) => out[0] = 0.0,
            (SidePlan::Mtf(_), Some(h)) => out[0] = h.boundary_value(),
            _ => {}
        }
        match (&self.right, &histories.1) {
            (SidePlan::Dirichlet, _) => out[n - 1] = 0.0,
            (SidePlan::Mtf(_), Some(h)) => out[n - 1] = h.boundary_value(),
            _ => {}
        }
        if let Some(h) = histories.0.as_mut() {
            h.push(out);
        }
        if let Some(h) = histories.1.as_mut() {
            h.push(out);
        }
    }
}

pub(crate) fn check_finite(row: &[f64], step: usize) -> Result<()> {
    if row.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Unstable { step })
    }
}

/// Ground-truth wavefield: Ricker initial displacement at rest.
pub fn simulate(cfg: &SimConfig) -> Result<Wavefield> {
    cfg.validate()?;
    let u0 = cfg.initial_field()?;
    simulate_from(cfg, &u0)
}

/// Same as [`simulate`] with an explicit initial displacement.
pub fn simulate_from(cfg: &SimConfig, u0: &Field) -> Result<Wavefield> {
    let grid = cfg.grid;
    let (nt, nx) = (grid.nt(), grid.nx());
    u0.check_len(nx, "initial field")?;
    let rec = Recurrence::new(grid, &cfg.resolved_boundaries())?;
    let csq = cfg.medium.csq.values();
    let eta = cfg.medium.eta.values();

    let mut data = vec![0.0; nt * nx];
    data[..nx].copy_from_slice(u0.values());
    rec.constrain_initial(&mut data[..nx]);
    let mut hist = rec.histories();
    for h in [hist.0.as_mut(), hist.1.as_mut()].into_iter().flatten() {
        h.prime(&data[..nx]);
    }

    let mut ws = Workspace::new(nx);
    let mut rhs = vec![0.0; nx];
    for t in 0..nt - 1 {
        let (done, rest) = data.split_at_mut((t + 1) * nx);
        let curr = &done[t * nx..];
        let out = &mut rest[..nx];
        rec.derivatives(curr, &mut ws, [false, true, false]);
        for ((r, c), d2) in rhs.iter_mut().zip(csq).zip(&ws.d[1]) {
            *r = c * d2;
        }
        if t == 0 {
            rec.bootstrap(curr, &rhs, out);
        } else {
            let prev = &done[(t - 1) * nx..t * nx];
            rec.advance(prev, curr, &rhs, eta, out);
        }
        rec.close_boundaries(out, &mut hist);
        check_finite(out, t + 1)?;
    }
    Wavefield::from_rows(nt, nx, data)
}

/// Taylor bootstrap `u1 = u0 + dt^2/2 c^2 u0_xx` (zero initial velocity),
/// boundaries applied.
pub fn bootstrap_first_step(u0: &Field, cfg: &SimConfig) -> Result<Field> {
    // A three-level grid with the same dt runs exactly the bootstrap first.
    let grid = Grid1D::new(cfg.grid.length(), cfg.grid.nx(), 2.0 * cfg.grid.dt(), 3)?;
    let short = SimConfig {
        grid,
        ..cfg.clone()
    };
    let field = simulate_from(&short, u0)?;
    Field::new(field.row(1).to_vec())
}

/// One update `u_next` from `(u_prev, u_curr)`. MTF sides treat `u_prev`
/// and `u_curr` as the entire history.
pub fn step(u_prev: &Field, u_curr: &Field, cfg: &SimConfig) -> Result<Field> {
    let nx = cfg.grid.nx();
    u_prev.check_len(nx, "u_prev")?;
    u_curr.check_len(nx, "u_curr")?;
    let rec = Recurrence::new(cfg.grid, &cfg.resolved_boundaries())?;
    let mut hist = rec.histories();
    for h in [hist.0.as_mut(), hist.1.as_mut()].into_iter().flatten() {
        h.prime(u_prev.values());
        h.push(u_curr.values());
    }
    let mut ws = Workspace::new(nx);
    rec.derivatives(u_curr.values(), &mut ws, [false, true, false]);
    let rhs: Vec<f64> = cfg
        .medium
        .csq
        .values()
        .iter()
        .zip(&ws.d[1])
        .map(|(c, d)| c * d)
        .collect();
    let mut out = vec![0.0; nx];
    rec.advance(
        u_prev.values(),
        u_curr.values(),
        &rhs,
        cfg.medium.eta.values(),
        &mut out,
    );
    rec.close_boundaries(&mut out, &mut hist);
    check_finite(&out, 0)?;
    Field::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::ricker;
    use crate::stencil::{pad, Side as PadSide};

    fn uniform(length: f64, nx: usize, duration: f64, nt: usize, c: f64, eta: f64, f0: f64, bc: BoundarySpec) -> SimConfig {
        let grid = Grid1D::new(length, nx, duration, nt).unwrap();
        SimConfig::new(grid, MediumSpec::uniform(&grid, c, eta).unwrap(), SourceSpec { f0 }, bc).unwrap()
    }

    fn case1() -> SimConfig {
        uniform(6.0, 128, 5.0, 420, 2.5, 0.0, 0.5, BoundarySpec::dirichlet())
    }

    fn case2_boundaries() -> BoundarySpec {
        BoundarySpec {
            left: BoundaryCondition::mtf(2),
            right: BoundaryCondition::Neumann,
        }
    }

    fn case3() -> SimConfig {
        uniform(3.0, 128, 3.0, 242, 1.2, -1.0, 1.0, BoundarySpec::dirichlet())
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn bootstrap_of_zero_is_zero() {
        let cfg = case3();
        let u1 = bootstrap_first_step(&Field::constant(128, 0.0), &cfg).unwrap();
        assert!(u1.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bootstrap_of_constant_with_neumann_ends() {
        let bc = BoundarySpec::new(BoundaryCondition::Neumann, BoundaryCondition::Neumann).unwrap();
        let cfg = uniform(3.0, 40, 1.0, 30, 1.2, -1.0, 1.0, bc);
        let u0 = Field::constant(40, 0.7);
        assert_eq!(bootstrap_first_step(&u0, &cfg).unwrap(), u0);
    }

    #[test]
    fn bootstrap_matches_hand_stepped_taylor() {
        let cfg = case3();
        let u1 = bootstrap_first_step(&cfg.initial_field().unwrap(), &cfg).unwrap();
        for (i, expected) in [(20, 0.28820276932669485412), (42, -0.99157888117461012921), (64, 0.31413082083997807733)] {
            assert!((u1.values()[i] - expected).abs() < 1e-12, "node {i}: {}", u1.values()[i]);
        }
    }

    #[test]
    fn undamped_step_is_leapfrog() {
        let cfg = uniform(2.0, 30, 1.0, 40, 1.1, 0.0, 1.0, BoundarySpec::dirichlet());
        let prev = Field::from_fn(&cfg.grid, |x| (3.0 * x).sin() * x * (2.0 - x)).unwrap();
        let curr = Field::from_fn(&cfg.grid, |x| (3.1 * x).sin() * x * (2.0 - x)).unwrap();
        let next = step(&prev, &curr, &cfg).unwrap();
        let k = kernel(2, Axis::Space).unwrap();
        let padded = pad(curr.values(), 2, PadSide::Left, GhostRule::Zero).unwrap();
        let padded = pad(&padded, 2, PadSide::Right, GhostRule::Zero).unwrap();
        let dt = cfg.grid.dt();
        for i in 1..29 {
            let d2 = k.apply(&padded[i..i + 5], cfg.grid.dx());
            let expected = 2.0 * curr.values()[i] - prev.values()[i] + dt * dt * 1.21 * d2;
            assert!((next.values()[i] - expected).abs() < 1e-13);
        }
        assert_eq!(next.values()[0], 0.0);
        assert_eq!(next.values()[29], 0.0);
    }

    #[test]
    fn constant_state_is_stationary_under_neumann() {
        let bc = BoundarySpec::new(BoundaryCondition::Neumann, BoundaryCondition::Neumann).unwrap();
        let cfg = uniform(2.0, 20, 1.0, 20, 0.9, -0.8, 1.0, bc);
        let u = Field::constant(20, -1.5);
        let next = step(&u, &u, &cfg).unwrap();
        for v in next.values() {
            assert!((v + 1.5).abs() < 1e-14);
        }
    }

    #[test]
    fn impulse_splits_per_five_point_stencil() {
        // csq = 1, dt = dx, u_prev = 0: u_next = 2 u + K u with K = (-1, 16, -30, 16, -1) / 12.
        let grid = Grid1D::new(1.0, 11, 1.0, 11).unwrap();
        let cfg = SimConfig::new(
            grid,
            MediumSpec::uniform(&grid, 1.0, 0.0).unwrap(),
            SourceSpec { f0: 1.0 },
            BoundarySpec::dirichlet(),
        )
        .unwrap();
        let mut u = vec![0.0; 11];
        u[5] = 1.0;
        let next = step(&Field::constant(11, 0.0), &Field::new(u).unwrap(), &cfg).unwrap();
        let expected = [0.0, 0.0, 0.0, -1.0 / 12.0, 4.0 / 3.0, -0.5, 4.0 / 3.0, -1.0 / 12.0, 0.0, 0.0, 0.0];
        for (a, b) in next.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn mtf_transmits_constant_history() {
        let grid = Grid1D::new(1.0, 21, 0.5, 21).unwrap();
        for order in 1..=3 {
            let plan = MtfPlan::new(Side::Left, order, 1.3, &grid).unwrap();
            let mut h = MtfHistory::new(plan);
            for _ in 0..order {
                h.push(&[0.4; 21]);
            }
            assert!((mtf_boundary(&h) - 0.4).abs() < 1e-14);
        }
    }

    #[test]
    fn mtf_at_unit_courant_reads_first_node() {
        let grid = Grid1D::new(1.0, 11, 1.0, 11).unwrap();
        let row: Vec<f64> = (0..11).map(|i| (i as f64).sqrt()).collect();
        let plan = MtfPlan::new(Side::Left, 1, 1.0, &grid).unwrap();
        let mut h = MtfHistory::new(plan);
        h.push(&row);
        assert_eq!(h.boundary_value(), row[1]);
        let plan = MtfPlan::new(Side::Right, 1, 1.0, &grid).unwrap();
        let mut h = MtfHistory::new(plan);
        h.push(&row);
        assert_eq!(h.boundary_value(), row[9]);
    }

    #[test]
    fn mtf_order_two_matches_formula() {
        // u_0 = 2 u_{1a}^p - u_{2a}^{p-1}; history before the start is zero.
        let grid = Grid1D::new(1.0, 11, 0.25, 6).unwrap();
        let plan = MtfPlan::new(Side::Left, 2, 1.5, &grid).unwrap();
        let r = 1.5 * 0.05 / 0.1;
        assert!((plan.offsets()[0] - r).abs() < 1e-15);
        let lagrange = |row: &[f64], r: f64| {
            // Quadratic through nodes 0, 1, 2 (or 1, 2, 3 for r >= 1.5).
            let c = (r.round() as usize).max(1);
            let (a, b, d) = ((c - 1) as f64, c as f64, (c + 1) as f64);
            row[c - 1] * (r - b) * (r - d) / ((a - b) * (a - d))
                + row[c] * (r - a) * (r - d) / ((b - a) * (b - d))
                + row[c + 1] * (r - a) * (r - b) / ((d - a) * (d - b))
        };
        let older: Vec<f64> = (0..11).map(|i| (0.3 * i as f64).cos()).collect();
        let newer: Vec<f64> = (0..11).map(|i| (0.5 * i as f64).sin()).collect();
        let mut h = MtfHistory::new(plan);
        h.push(&older);
        assert!((h.boundary_value() - 2.0 * lagrange(&older, r)).abs() < 1e-14);
        h.push(&newer);
        let expected = 2.0 * lagrange(&newer, r) - lagrange(&older, 2.0 * r);
        assert!((h.boundary_value() - expected).abs() < 1e-14);
    }

    #[test]
    fn mtf_rejects_points_outside_the_grid() {
        let grid = Grid1D::new(1.0, 6, 1.0, 3).unwrap();
        assert!(MtfPlan::new(Side::Left, 3, 1.0, &grid).is_err());
    }

    #[test]
    fn case1_shape_and_dirichlet_columns() {
        let w = simulate(&case1()).unwrap();
        assert_eq!((w.nt(), w.nx()), (420, 128));
        assert!(w.column(0).iter().all(|&v| v == 0.0));
        assert!(w.column(127).iter().all(|&v| v == 0.0));
        assert_eq!(simulate(&case1()).unwrap(), w);
    }

    #[test]
    fn zero_source_gives_zero_wavefield() {
        let cfg = case3();
        let w = simulate_from(&cfg, &Field::constant(128, 0.0)).unwrap();
        assert!(w.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn neumann_boundary_derivative_vanishes() {
        let cfg = uniform(6.0, 128, 5.0, 420, 2.5, 0.0, 0.5, case2_boundaries());
        let w = simulate(&cfg).unwrap();
        let kx = kernel(1, Axis::Space).unwrap();
        for t in 0..w.nt() {
            let p = pad(w.row(t), 2, PadSide::Right, GhostRule::Mirror).unwrap();
            assert_eq!(kx.apply(&p[125..130], cfg.grid.dx()), 0.0, "row {t}");
        }
    }

    #[test]
    fn case1_energy_drift() {
        let cfg = case1();
        let w = simulate(&cfg).unwrap();
        let (dt, dx) = (cfg.grid.dt(), cfg.grid.dx());
        let kx = kernel(1, Axis::Space).unwrap();
        let energy = |t: usize| {
            let (a, b) = (w.row(t), w.row(t + 1));
            let half: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
            let p = pad(&half, 2, PadSide::Left, GhostRule::Zero).unwrap();
            let p = pad(&p, 2, PadSide::Right, GhostRule::Zero).unwrap();
            let kinetic: f64 = a.iter().zip(b).map(|(x, y)| ((y - x) / dt).powi(2)).sum();
            let strain: f64 = (0..128).map(|i| (2.5 * kx.apply(&p[i..i + 5], dx)).powi(2)).sum();
            kinetic + strain
        };
        let e0 = energy(0);
        let drift = (1..419).map(|t| (energy(t) - e0).abs() / e0).fold(0.0, f64::max);
        assert!(drift < 0.01, "drift {drift}");
    }

    #[test]
    fn case3_decays() {
        let w = simulate(&case3()).unwrap();
        let n: Vec<f64> = (0..w.nt()).map(|t| norm(w.row(t))).collect();
        assert!(n[241] < n[0]);
        // Pulse fully developed once the halves separate.
        assert!(n[241] < n[60]);
    }

    #[test]
    fn damped_discrete_energy_never_grows() {
        // (u+ - u-)(u+ - 2u + u-) form: E^{t+1/2} - E^{t-1/2} = eta/(2dt) |u+ - u-|^2.
        let cfg = case3();
        let w = simulate(&cfg).unwrap();
        let rec = Recurrence::new(cfg.grid, &cfg.resolved_boundaries()).unwrap();
        let dt = cfg.grid.dt();
        let mut ws = Workspace::new(128);
        let energy = |t: usize, ws: &mut Workspace| {
            let (a, b) = (w.row(t), w.row(t + 1));
            rec.derivatives(a, ws, [false, true, false]);
            let kinetic: f64 = a.iter().zip(b).map(|(x, y)| ((y - x) / dt).powi(2)).sum();
            let coupling: f64 = (1..127).map(|i| b[i] * 1.44 * ws.d[1][i]).sum();
            kinetic - coupling
        };
        let mut last = energy(1, &mut ws);
        for t in 2..241 {
            let e = energy(t, &mut ws);
            assert!(e <= last * (1.0 + 1e-12), "step {t}: {e} > {last}");
            last = e;
        }
    }

    #[test]
    fn undamped_run_is_time_reversible() {
        let cfg = case1();
        let w = simulate(&cfg).unwrap();
        let rec = Recurrence::new(cfg.grid, &cfg.resolved_boundaries()).unwrap();
        let dt = cfg.grid.dt();
        let mut ws = Workspace::new(128);
        let (mut next, mut curr) = (w.row(419).to_vec(), w.row(418).to_vec());
        for _ in (0..418).rev() {
            rec.derivatives(&curr, &mut ws, [false, true, false]);
            let prev: Vec<f64> = (0..128)
                .map(|i| {
                    if i == 0 || i == 127 {
                        0.0
                    } else {
                        2.0 * curr[i] - next[i] + dt * dt * 6.25 * ws.d[1][i]
                    }
                })
                .collect();
            next = std::mem::replace(&mut curr, prev);
        }
        let u0 = w.row(0);
        let err: f64 = curr.iter().zip(u0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm(u0);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn mtf_reflection_against_enlarged_domain() {
        let cfg = uniform(6.0, 128, 5.0, 420, 2.5, 0.0, 0.5, case2_boundaries());
        let w = simulate(&cfg).unwrap();

        // Reference: the same medium extended far to the left, where nothing
        // can return to the original window before the end of the run.
        let dx = cfg.grid.dx();
        let ext = 149;
        let big_grid = Grid1D::new(dx * (127 + ext) as f64, 128 + ext, 5.0, 420).unwrap();
        let big = SimConfig::new(
            big_grid,
            MediumSpec::uniform(&big_grid, 2.5, 0.0).unwrap(),
            SourceSpec { f0: 0.5 },
            BoundarySpec::new(BoundaryCondition::Dirichlet, BoundaryCondition::Neumann).unwrap(),
        )
        .unwrap();
        let shift = dx * ext as f64;
        let u0 = Field::from_fn(&big_grid, |x| ricker(x - shift, 0.5)).unwrap();
        let r = simulate_from(&big, &u0).unwrap();

        // The left-going half has exited once the energy it carries into
        // the extension plateaus (before it reaches the far wall).
        let outside = |t: usize| r.row(t)[..ext].iter().map(|v| v * v).sum::<f64>();
        let peak = (0..200).map(outside).fold(0.0, f64::max);
        let t_exit = (0..200).find(|&t| outside(t) >= (1.0 - 1e-4) * peak).unwrap();
        let incident = outside(t_exit);
        let reflected: f64 = w.row(t_exit).iter().zip(&r.row(t_exit)[ext..]).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(reflected <= 0.02 * incident, "t = {t_exit}: ratio {}", reflected / incident);
    }
}
