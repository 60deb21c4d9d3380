//! Reverse-mode differentiation of the unrolled recurrence.
//!
//! The forward pass is taped in full; the backward sweep walks the steps in
//! reverse, pushing each snapshot's adjoint into its two predecessors, the
//! MTF history it was extrapolated from, and the coefficient fields.

use crate::error::Result;
use crate::grid::{Field, Grid1D, Wavefield};
use crate::medium::BoundarySpec;
use crate::sampling::MeasurementSet;
use crate::simulator::{SidePlan, Workspace};
use crate::stencil::{unpad_adjoint, MAX_PAD};

use super::rollout::{forward, node_derivs, Model};
use super::{loss, DiscoveredEquation};

/// Loss gradient with respect to every coefficient entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EquationGradient {
    /// Parallel to `DiscoveredEquation::terms`.
    pub terms: Vec<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    pub loss: f64,
}

impl EquationGradient {
    /// All entries flattened, terms first, then eta.
    pub fn flatten(&self) -> Vec<f64> {
        self.terms
            .iter()
            .flatten()
            .chain(self.eta.iter().flatten())
            .copied()
            .collect()
    }
}

/// Loss and its exact gradient for the discrete forward computation.
pub fn gradient(
    eq: &DiscoveredEquation,
    u0: &Field,
    bc: &BoundarySpec,
    grid: &Grid1D,
    m: &MeasurementSet,
) -> Result<EquationGradient> {
    let model = Model::new(eq, bc, *grid)?;
    let tape = forward(&model, u0)?;
    backward(&model, &tape, m)
}

pub(crate) fn backward(model: &Model<'_>, tape: &Wavefield, m: &MeasurementSet) -> Result<EquationGradient> {
    let rec = &model.rec;
    let eq = model.eq;
    let (nt, nx) = (tape.nt(), tape.nx());
    let dt = rec.grid.dt();
    let value = loss(tape, m)?;

    let mut adj = vec![0.0; nt * nx];
    let scale = 2.0 / m.len() as f64;
    let mut k = 0;
    for &t in &m.time_indices {
        for &x in &m.space_indices {
            adj[t * nx + x] += scale * (tape.get(t, x) - m.values[k]);
            k += 1;
        }
    }

    let mut g_terms = vec![vec![0.0; nx]; eq.terms.len()];
    let mut g_eta = vec![0.0; nx];
    let uses_ut = eq.uses_time_derivative();
    let nodes = rec.formula_nodes();
    let mtf_taps: Vec<(usize, usize, usize, f64)> = [(&rec.left, 0), (&rec.right, nx - 1)]
        .into_iter()
        .filter_map(|(side, b)| match side {
            SidePlan::Mtf(p) => Some((b, p)),
            _ => None,
        })
        .flat_map(|(b, p)| p.taps(nx).map(move |(j, node, w)| (b, j, node, w)))
        .collect();

    let mut ws = Workspace::new(nx);
    let mut vel = vec![0.0; nx];
    let mut g_r = vec![0.0; nx];
    let mut u_bar = vec![0.0; nx];
    let mut v_bar = vec![0.0; nx];
    let mut d_bar = [vec![0.0; nx], vec![0.0; nx], vec![0.0; nx]];
    let mut pad_bar = vec![0.0; nx + 2 * MAX_PAD];

    for s in (0..nt - 1).rev() {
        // Step s produces snapshot s + 1 from s (and s - 1 when s > 0).
        let (before, after) = adj.split_at_mut((s + 1) * nx);
        let g = &after[..nx];

        for &(b, j, node, w) in &mtf_taps {
            if j <= s + 1 {
                before[(s + 1 - j) * nx + node] += g[b] * w;
            }
        }

        let curr = tape.row(s);
        if s == 0 {
            let half = 0.5 * dt * dt;
            for i in nodes.clone() {
                g_r[i] = g[i] * half;
            }
        } else {
            let prev = tape.row(s - 1);
            let next = tape.row(s + 1);
            let (pre, cur) = before.split_at_mut(s * nx);
            let adj_prev = &mut pre[(s - 1) * nx..];
            for i in nodes.clone() {
                let e = model.eta[i] * dt;
                let denom = 2.0 - e;
                g_r[i] = g[i] * 2.0 * dt * dt / denom;
                cur[i] += g[i] * 4.0 / denom;
                adj_prev[i] -= g[i] * (2.0 + e) / denom;
                g_eta[i] += g[i] * dt * (next[i] - prev[i]) / denom;
            }
        }

        if eq.terms.is_empty() {
            continue;
        }
        rec.derivatives(curr, &mut ws, model.need);
        let velocity = if s > 0 && uses_ut {
            model.velocity(tape.row(s - 1), curr, &mut vel);
            Some(vel.as_slice())
        } else {
            None
        };
        for i in nodes.clone() {
            let d = node_derivs(&ws, velocity, i);
            let (mut ub, mut vb, mut db) = (0.0, 0.0, [0.0; 3]);
            for (t, gt) in eq.terms.iter().zip(g_terms.iter_mut()) {
                let c = t.coeff.values()[i];
                gt[i] += g_r[i] * t.term.eval(curr[i], &d);
                let (du, dd) = t.term.partials(curr[i], &d);
                let w = g_r[i] * c;
                ub += w * du;
                for q in 0..3 {
                    db[q] += w * dd[q];
                }
                vb += w * dd[3];
            }
            u_bar[i] = ub;
            v_bar[i] = vb;
            for q in 0..3 {
                d_bar[q][i] = db[q];
            }
        }
        if s == 0 {
            // The initial displacement is not trainable.
            continue;
        }

        pad_bar.iter_mut().for_each(|v| *v = 0.0);
        for (q, k) in rec.kernels().iter().enumerate() {
            if !model.need[q] {
                continue;
            }
            let f = k.factor(rec.grid.dx());
            for i in nodes.clone() {
                let w = d_bar[q][i] * f;
                if w != 0.0 {
                    for (j, tap) in k.taps().iter().enumerate() {
                        pad_bar[i + j] += w * tap;
                    }
                }
            }
        }
        let (pre, cur) = before.split_at_mut(s * nx);
        let adj_curr = &mut cur[..nx];
        unpad_adjoint(&pad_bar, rec.left.ghost_rule(), rec.right.ghost_rule(), adj_curr);
        let adj_prev = &mut pre[(s - 1) * nx..];
        for i in nodes.clone() {
            adj_curr[i] += u_bar[i] + v_bar[i] / dt;
            adj_prev[i] -= v_bar[i] / dt;
        }
    }

    Ok(EquationGradient {
        terms: g_terms,
        eta: eq.eta.as_ref().map(|_| g_eta),
        loss: value,
    })
}
