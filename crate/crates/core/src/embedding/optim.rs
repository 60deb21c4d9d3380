//! Full-batch first- and quasi-second-order optimizers over a flat
//! parameter vector.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A differentiable scalar function of a parameter vector.
pub trait Objective {
    /// Loss and gradient at `x`. An `Err` marks `x` as infeasible.
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 200,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad Adam settings {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once the gradient max-norm falls below this.
    pub grad_tol: f64,
    /// Stop once the loss decreased by less than this fraction over
    /// `stall_window` iterations.
    pub rel_decrease_tol: f64,
    pub stall_window: usize,
    /// Armijo slope parameter.
    pub c1: f64,
    /// Backtracking step contraction.
    pub contraction: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 100,
            grad_tol: 1e-9,
            rel_decrease_tol: 1e-12,
            stall_window: 5,
            c1: 1e-4,
            contraction: 0.5,
            max_backtracks: 40,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.memory >= 1
            && self.grad_tol >= 0.0
            && self.rel_decrease_tol >= 0.0
            && self.stall_window >= 1
            && self.c1 > 0.0
            && self.c1 < 1.0
            && self.contraction > 0.0
            && self.contraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad L-BFGS settings {self:?}")))
        }
    }
}

/// Why an L-BFGS run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIterations,
    GradientNorm,
    Stalled,
    LineSearch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimized {
    pub x: Vec<f64>,
    pub loss: f64,
    /// Loss at the start of every iteration, then the final loss.
    pub trace: Vec<f64>,
    pub termination: Option<Termination>,
}

fn diverged(phase: &'static str, iteration: usize, trace: &[f64]) -> Error {
    Error::Diverged {
        phase,
        iteration,
        trace: trace.to_vec(),
    }
}

fn finite_eval<O: Objective + ?Sized>(obj: &mut O, x: &[f64]) -> Option<(f64, Vec<f64>)> {
    match obj.evaluate(x) {
        Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => Some((f, g)),
        _ => None,
    }
}

/// Runs `cfg.epochs` Adam steps from `x0`.
pub fn adam<O: Objective + ?Sized>(obj: &mut O, x0: &[f64], cfg: &AdamConfig) -> Result<Minimized> {
    cfg.validate()?;
    let mut x = x0.to_vec();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for epoch in 0..cfg.epochs {
        let (f, g) = finite_eval(obj, &x).ok_or_else(|| diverged("adam", epoch, &trace))?;
        trace.push(f);
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for ((xi, gi), (mi, vi)) in x.iter_mut().zip(&g).zip(m.iter_mut().zip(v.iter_mut())) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / (1.0 - b1t);
            let vhat = *vi / (1.0 - b2t);
            *xi -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    let (loss, _) = finite_eval(obj, &x).ok_or_else(|| diverged("adam", cfg.epochs, &trace))?;
    trace.push(loss);
    Ok(Minimized {
        x,
        loss,
        trace,
        termination: None,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Limited-memory BFGS with backtracking Armijo line search.
///
/// Trial points whose evaluation fails or is non-finite count as an
/// infinite loss and are backtracked from.
pub fn lbfgs<O: Objective + ?Sized>(obj: &mut O, x0: &[f64], cfg: &LbfgsConfig) -> Result<Minimized> {
    cfg.validate()?;
    let mut x = x0.to_vec();
    let (mut f, mut g) = finite_eval(obj, &x).ok_or_else(|| diverged("lbfgs", 0, &[]))?;
    let mut trace = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut termination = Termination::MaxIterations;

    for iter in 0..cfg.max_iters {
        if max_abs(&g) < cfg.grad_tol || f == 0.0 {
            termination = Termination::GradientNorm;
            break;
        }
        if trace.len() > cfg.stall_window {
            let old = trace[trace.len() - 1 - cfg.stall_window];
            if old - f <= cfg.rel_decrease_tol * old.abs() {
                termination = Termination::Stalled;
                break;
            }
        }

        // Two-loop recursion for d = -H g.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let h0 = pairs
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or_else(|| 1.0 / max_abs(&g).max(1.0));
        q.iter_mut().for_each(|v| *v *= h0);
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            let scale = 1.0 / max_abs(&g).max(1.0);
            d = g.iter().map(|v| -v * scale).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            if let Some((ft, gt)) = finite_eval(obj, &trial) {
                if ft <= f + cfg.c1 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= cfg.contraction;
        }
        let Some((xn, fn_, gn)) = accepted else {
            log::debug!("L-BFGS line search failed at iteration {iter}");
            termination = Termination::LineSearch;
            break;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        f = fn_;
        g = gn;
        trace.push(f);
    }
    Ok(Minimized {
        x,
        loss: f,
        trace,
        termination: Some(termination),
    })
}
