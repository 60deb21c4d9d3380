use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid1D};
use crate::medium::BoundarySpec;
use crate::sampling::MeasurementSet;

use super::adjoint::{gradient, EquationGradient};
use super::optim::{adam, lbfgs, AdamConfig, LbfgsConfig, Minimized};
use super::{ActiveTerm, DiscoveredEquation};

/// Terms whose coefficient field has a smaller mean magnitude are pruned.
pub const DEFAULT_FILTER_THRESHOLD: f64 = 1e-3;

/// How many free parameters a coefficient field carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientMode {
    /// One value shared by every node.
    #[default]
    Scalar,
    /// One value per node.
    Field,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub adam: AdamConfig,
    pub lbfgs: LbfgsConfig,
    pub coefficient_mode: CoefficientMode,
    pub eta_mode: CoefficientMode,
    pub filter_threshold: f64,
    /// Width, in nodes, of the Gaussian that smooths updates to field-mode
    /// coefficients. 0 leaves every node independent.
    pub field_smoothing: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            coefficient_mode: CoefficientMode::Scalar,
            eta_mode: CoefficientMode::Scalar,
            filter_threshold: DEFAULT_FILTER_THRESHOLD,
            field_smoothing: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.lbfgs.validate()?;
        if !(self.filter_threshold >= 0.0) {
            return Err(Error::InvalidParameter("filter threshold must be non-negative".into()));
        }
        if !(self.field_smoothing >= 0.0 && self.field_smoothing.is_finite()) {
            return Err(Error::InvalidParameter("field smoothing must be a finite width >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Adam,
    Lbfgs,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Adam => "adam",
            Phase::Lbfgs => "lbfgs",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub phase: Phase,
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimized {
    /// Fitted and filtered equation.
    pub equation: DiscoveredEquation,
    /// Loss of the fitted equation before filtering.
    pub loss: f64,
    pub trace: Vec<TraceEntry>,
}

/// The shared value of a constant field, else its mean.
fn scalar_value(f: &Field) -> f64 {
    match f.values() {
        [first, rest @ ..] if rest.iter().all(|v| v == first) => *first,
        _ => f.mean(),
    }
}

/// Maps an equation's coefficient fields to a flat parameter vector.
struct Layout {
    terms: CoefficientMode,
    eta: CoefficientMode,
    nx: usize,
}

impl Layout {
    fn width(mode: CoefficientMode, nx: usize) -> usize {
        match mode {
            CoefficientMode::Scalar => 1,
            CoefficientMode::Field => nx,
        }
    }

    fn pack(&self, eq: &DiscoveredEquation) -> Vec<f64> {
        let mut x = Vec::new();
        let mut push = |f: &Field, mode| match mode {
            CoefficientMode::Scalar => x.push(scalar_value(f)),
            CoefficientMode::Field => x.extend_from_slice(f.values()),
        };
        for t in &eq.terms {
            push(&t.coeff, self.terms);
        }
        if let Some(e) = &eq.eta {
            push(e, self.eta);
        }
        x
    }

    fn unpack(&self, template: &DiscoveredEquation, x: &[f64]) -> Result<DiscoveredEquation> {
        let mut rest = x;
        let mut take = |mode| -> Result<Field> {
            let w = Self::width(mode, self.nx);
            let (head, tail) = rest.split_at(w);
            rest = tail;
            match mode {
                CoefficientMode::Scalar => {
                    Field::new(vec![head[0]; self.nx]).map_err(|_| Error::InvalidParameter("non-finite coefficient".into()))
                }
                CoefficientMode::Field => Field::new(head.to_vec()),
            }
        };
        let terms = template
            .terms
            .iter()
            .map(|t| {
                Ok(ActiveTerm {
                    term: t.term,
                    coeff: take(self.terms)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let eta = match template.eta {
            Some(_) => Some(take(self.eta)?),
            None => None,
        };
        Ok(DiscoveredEquation { terms, eta })
    }

    fn reduce(&self, g: &EquationGradient) -> Vec<f64> {
        let mut out = Vec::new();
        let mut push = |v: &[f64], mode| match mode {
            CoefficientMode::Scalar => out.push(v.iter().sum()),
            CoefficientMode::Field => out.extend_from_slice(v),
        };
        for t in &g.terms {
            push(t, self.terms);
        }
        if let Some(e) = &g.eta {
            push(e, self.eta);
        }
        out
    }
}

/// Row-normalized Gaussian over node indices, truncated at four widths.
/// Constant vectors are fixed points.
struct Smoother {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Smoother {
    fn new(nx: usize, width: f64) -> Self {
        let reach = (4.0 * width).ceil() as usize;
        let rows = (0..nx)
            .map(|i| {
                let lo = i.saturating_sub(reach);
                let hi = (i + reach).min(nx - 1);
                let mut row: Vec<(usize, f64)> = (lo..=hi)
                    .map(|j| {
                        let d = (j as f64 - i as f64) / width;
                        (j, (-0.5 * d * d).exp())
                    })
                    .collect();
                let total: f64 = row.iter().map(|&(_, w)| w).sum();
                row.iter_mut().for_each(|(_, w)| *w /= total);
                row
            })
            .collect();
        Self { rows }
    }

    fn apply(&self, z: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(j, w)| w * z[j]).sum();
        }
    }

    fn apply_transpose(&self, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (gi, row) in g.iter().zip(&self.rows) {
            for &(j, w) in row {
                out[j] += w * gi;
            }
        }
    }
}

/// Field-mode coefficients optimized as `x0 + S z`, starting from `z = 0`.
/// Scalar parameters pass through unchanged.
struct Smoothed {
    x0: Vec<f64>,
    /// `(offset, width)` of each parameter block.
    blocks: Vec<(usize, usize)>,
    smoother: Smoother,
}

impl Smoothed {
    fn new(layout: &Layout, eq: &DiscoveredEquation, x0: Vec<f64>, width: f64) -> Self {
        let modes = eq
            .terms
            .iter()
            .map(|_| layout.terms)
            .chain(eq.eta.as_ref().map(|_| layout.eta));
        let mut blocks = Vec::new();
        let mut offset = 0;
        for mode in modes {
            let w = Layout::width(mode, layout.nx);
            blocks.push((offset, w));
            offset += w;
        }
        Self {
            x0,
            blocks,
            smoother: Smoother::new(layout.nx, width),
        }
    }

    fn to_x(&self, z: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; z.len()];
        for &(o, w) in &self.blocks {
            if w == 1 {
                x[o] = z[o];
            } else {
                self.smoother.apply(&z[o..o + w], &mut x[o..o + w]);
            }
        }
        x.iter_mut().zip(&self.x0).for_each(|(xi, x0)| *xi += x0);
        x
    }

    fn pull_back(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.len()];
        for &(o, w) in &self.blocks {
            if w == 1 {
                out[o] = g[o];
            } else {
                self.smoother.apply_transpose(&g[o..o + w], &mut out[o..o + w]);
            }
        }
        out
    }
}

/// Fits the coefficient fields of `eq` to `m` with Adam then L-BFGS, and
/// prunes negligible terms.
pub fn optimize(
    eq: &DiscoveredEquation,
    u0: &Field,
    bc: &BoundarySpec,
    grid: &Grid1D,
    m: &MeasurementSet,
    cfg: &OptimizerConfig,
) -> Result<Optimized> {
    cfg.validate()?;
    eq.validate()?;
    m.check_bounds(grid.nt(), grid.nx())?;
    let layout = Layout {
        terms: cfg.coefficient_mode,
        eta: cfg.eta_mode,
        nx: grid.nx(),
    };
    let packed = layout.pack(eq);
    let any_field = layout.terms == CoefficientMode::Field || layout.eta == CoefficientMode::Field;
    let smoothed = (any_field && cfg.field_smoothing > 0.0)
        .then(|| Smoothed::new(&layout, eq, packed.clone(), cfg.field_smoothing));
    let to_x = |p: &[f64]| match &smoothed {
        Some(s) => s.to_x(p),
        None => p.to_vec(),
    };
    let x0 = match &smoothed {
        Some(_) => vec![0.0; packed.len()],
        None => packed,
    };
    let mut objective = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        let e = layout.unpack(eq, &to_x(p))?;
        let g = gradient(&e, u0, bc, grid, m)?;
        let reduced = layout.reduce(&g);
        let reduced = match &smoothed {
            Some(s) => s.pull_back(&reduced),
            None => reduced,
        };
        Ok((g.loss, reduced))
    };

    let mut trace = Vec::new();
    let mut x = x0.clone();
    let mut loss = None;
    if !x.is_empty() && cfg.adam.epochs > 0 {
        let Minimized { x: xa, loss: la, trace: ta, .. } = adam(&mut objective, &x, &cfg.adam)?;
        trace.extend(ta[..cfg.adam.epochs].iter().enumerate().map(|(i, &l)| TraceEntry {
            phase: Phase::Adam,
            iteration: i,
            loss: l,
        }));
        x = xa;
        loss = Some(la);
    }
    if !x.is_empty() && cfg.lbfgs.max_iters > 0 {
        let out = lbfgs(&mut objective, &x, &cfg.lbfgs).map_err(|e| match e {
            Error::Diverged { iteration, trace: t, .. } => Error::Diverged {
                phase: "lbfgs",
                iteration,
                trace: trace.iter().map(|e: &TraceEntry| e.loss).chain(t).collect(),
            },
            e => e,
        })?;
        log::debug!("L-BFGS stopped after {} iterations: {:?}", out.trace.len() - 1, out.termination);
        trace.extend(out.trace.iter().enumerate().map(|(i, &l)| TraceEntry {
            phase: Phase::Lbfgs,
            iteration: i,
            loss: l,
        }));
        x = out.x;
        loss = Some(out.loss);
    }
    // The first trace entry is the loss at the starting point; never hand
    // back something worse than what we were given.
    if let (Some(l), Some(first)) = (loss, trace.first()) {
        if l > first.loss {
            log::debug!("training ended above its starting loss ({l:e} > {:e}); keeping the start", first.loss);
            x = x0;
            loss = Some(first.loss);
        }
    }
    let fitted = layout.unpack(eq, &to_x(&x))?;
    let loss = match loss {
        Some(l) => l,
        None => gradient(&fitted, u0, bc, grid, m)?.loss,
    };
    Ok(Optimized {
        equation: filter_terms(&fitted, cfg.filter_threshold),
        loss,
        trace,
    })
}

/// Drops every term, the viscous one included, whose coefficient field has
/// mean absolute value below `threshold`.
pub fn filter_terms(eq: &DiscoveredEquation, threshold: f64) -> DiscoveredEquation {
    DiscoveredEquation {
        terms: eq
            .terms
            .iter()
            .filter(|t| t.coeff.mean_abs() >= threshold)
            .cloned()
            .collect(),
        eta: eq.eta.clone().filter(|e| e.mean_abs() >= threshold),
    }
}
