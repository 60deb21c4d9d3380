//! Frozen finite-difference convolution kernels and ghost-point padding.
//!
//! Space kernels are five-point, fourth-order central differences; time
//! kernels are three-point, second-order. Taps are stored as small integers
//! with a separate rational scale so the moment conditions can be checked
//! exactly.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Time,
    Space,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Time => "time",
            Axis::Space => "space",
        }
    }
}

const TIME_1: [f64; 3] = [-1.0, 0.0, 1.0];
const TIME_2: [f64; 3] = [1.0, -2.0, 1.0];
const SPACE_1: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
const SPACE_2: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];
const SPACE_3: [f64; 5] = [-1.0, 2.0, 0.0, -2.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel {
    taps: &'static [f64],
    scale: f64,
    axis: Axis,
    order: usize,
}

/// Canonical central-difference kernel for `order` along `axis`.
pub fn kernel(order: usize, axis: Axis) -> Result<Kernel> {
    let (taps, scale): (&'static [f64], f64) = match (axis, order) {
        (Axis::Time, 1) => (&TIME_1, 0.5),
        (Axis::Time, 2) => (&TIME_2, 1.0),
        (Axis::Space, 1) => (&SPACE_1, 1.0 / 12.0),
        (Axis::Space, 2) => (&SPACE_2, 1.0 / 12.0),
        (Axis::Space, 3) => (&SPACE_3, 0.5),
        _ => {
            return Err(Error::UnsupportedKernel {
                order,
                axis: axis.name(),
            })
        }
    };
    Ok(Kernel {
        taps,
        scale,
        axis,
        order,
    })
}

impl Kernel {
    pub fn taps(&self) -> &[f64] {
        self.taps
    }

    /// Per-unit-spacing multiplier applied to the tap sum.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn radius(&self) -> usize {
        self.taps.len() / 2
    }

    /// Multiplier for the dot product at the given grid spacing.
    #[inline]
    pub fn factor(&self, spacing: f64) -> f64 {
        self.scale / spacing.powi(self.order as i32)
    }

    /// Dot product with a receptive field centred on the target node.
    #[inline]
    pub fn apply(&self, window: &[f64], spacing: f64) -> f64 {
        debug_assert_eq!(window.len(), self.taps.len());
        // Symmetric taps are summed in pairs, so mirrored data cancels exactly
        // under odd kernels.
        let r = self.radius();
        let mut dot = self.taps[r] * window[r];
        for k in 1..=r {
            dot += self.taps[r - k] * window[r - k] + self.taps[r + k] * window[r + k];
        }
        dot * self.factor(spacing)
    }

    /// `sum_k taps[k] * (k - r)^p * scale`, the p-th discrete moment.
    pub fn moment(&self, p: u32) -> f64 {
        let r = self.radius() as i64;
        self.taps
            .iter()
            .enumerate()
            .map(|(k, &w)| w * ((k as i64 - r) as f64).powi(p as i32))
            .sum::<f64>()
            * self.scale
    }
}

/// Applies `kernel` at every position of `values`. Positions without a full
/// receptive field are `None`.
pub fn derivative(values: &[f64], kernel: &Kernel, spacing: f64) -> Result<Vec<Option<f64>>> {
    if values.len() < kernel.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values is shorter than a {}-tap kernel",
            values.len(),
            kernel.len()
        )));
    }
    let r = kernel.radius();
    let n = values.len();
    Ok((0..n)
        .map(|i| {
            (i >= r && i + r < n).then(|| kernel.apply(&values[i - r..=i + r], spacing))
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// How ghost points beyond a boundary node are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GhostRule {
    /// Constant zero.
    Zero,
    /// `u[-k] = u[k]`: zero centred first derivative at the boundary node.
    Mirror,
    /// Cubic extrapolation from the four nodes nearest the boundary.
    Extrapolate,
}

pub const MAX_PAD: usize = 2;

/// Ghost `k` (1-based, counted outward) as a linear combination of nodes,
/// with node offsets counted inward from the boundary node.
pub(crate) fn ghost_weights(rule: GhostRule, k: usize) -> &'static [(usize, f64)] {
    match (rule, k) {
        (GhostRule::Zero, _) => &[],
        (GhostRule::Mirror, 1) => &[(1, 1.0)],
        (GhostRule::Mirror, _) => &[(2, 1.0)],
        (GhostRule::Extrapolate, 1) => &[(0, 4.0), (1, -6.0), (2, 4.0), (3, -1.0)],
        (GhostRule::Extrapolate, _) => &[(0, 10.0), (1, -20.0), (2, 15.0), (3, -4.0)],
    }
}

/// Extends `field` by `width` ghost points on `side`.
///
/// The returned list is the field with the ghosts prepended (left) or
/// appended (right), in spatial order.
pub fn pad(field: &[f64], width: usize, side: Side, rule: GhostRule) -> Result<Vec<f64>> {
    if width > MAX_PAD {
        return Err(Error::InvalidParameter(format!(
            "pad width {width} exceeds stencil radius {MAX_PAD}"
        )));
    }
    let needed = if rule == GhostRule::Extrapolate { 4 } else { width + 1 };
    if field.len() < needed {
        return Err(Error::ShapeMismatch(format!(
            "field of length {} too short to pad by {width}",
            field.len()
        )));
    }
    let n = field.len();
    let node = |offset: usize| match side {
        Side::Left => field[offset],
        Side::Right => field[n - 1 - offset],
    };
    let ghost = |k: usize| {
        ghost_weights(rule, k)
            .iter()
            .map(|&(o, w)| w * node(o))
            .sum::<f64>()
    };
    let mut out = Vec::with_capacity(n + width);
    match side {
        Side::Left => {
            out.extend((1..=width).rev().map(ghost));
            out.extend_from_slice(field);
        }
        Side::Right => {
            out.extend_from_slice(field);
            out.extend((1..=width).map(ghost));
        }
    }
    Ok(out)
}

/// Two-sided padding by the full space-stencil radius into `out`
/// (length `field.len() + 4`).
pub(crate) fn pad_into(field: &[f64], left: GhostRule, right: GhostRule, out: &mut [f64]) {
    let n = field.len();
    debug_assert_eq!(out.len(), n + 2 * MAX_PAD);
    out[MAX_PAD..MAX_PAD + n].copy_from_slice(field);
    for k in 1..=MAX_PAD {
        out[MAX_PAD - k] = ghost_weights(left, k)
            .iter()
            .map(|&(o, w)| w * field[o])
            .sum();
        out[MAX_PAD + n - 1 + k] = ghost_weights(right, k)
            .iter()
            .map(|&(o, w)| w * field[n - 1 - o])
            .sum();
    }
}

/// Transpose of [`pad_into`]: folds ghost adjoints back onto the nodes.
pub(crate) fn unpad_adjoint(padded: &[f64], left: GhostRule, right: GhostRule, out: &mut [f64]) {
    let n = out.len();
    debug_assert_eq!(padded.len(), n + 2 * MAX_PAD);
    for (o, p) in out.iter_mut().zip(&padded[MAX_PAD..MAX_PAD + n]) {
        *o += p;
    }
    for k in 1..=MAX_PAD {
        let gl = padded[MAX_PAD - k];
        for &(o, w) in ghost_weights(left, k) {
            out[o] += w * gl;
        }
        let gr = padded[MAX_PAD + n - 1 + k];
        for &(o, w) in ghost_weights(right, k) {
            out[n - 1 - o] += w * gr;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_kernels() -> Vec<Kernel> {
        vec![
            kernel(1, Axis::Time).unwrap(),
            kernel(2, Axis::Time).unwrap(),
            kernel(1, Axis::Space).unwrap(),
            kernel(2, Axis::Space).unwrap(),
            kernel(3, Axis::Space).unwrap(),
        ]
    }

    #[test]
    fn unsupported_combinations() {
        assert!(kernel(3, Axis::Time).is_err());
        assert!(kernel(4, Axis::Space).is_err());
        assert!(kernel(0, Axis::Space).is_err());
    }

    #[test]
    fn symmetry_matches_parity() {
        for k in all_kernels() {
            let t = k.taps();
            let n = t.len();
            for i in 0..n {
                let mirrored = t[n - 1 - i];
                if k.order() % 2 == 1 {
                    assert_eq!(t[i], -mirrored);
                } else {
                    assert_eq!(t[i], mirrored);
                }
            }
        }
    }

    #[test]
    fn moments() {
        let fact = [1.0, 1.0, 2.0, 6.0];
        for k in all_kernels() {
            assert_eq!(k.taps().iter().sum::<f64>(), 0.0);
            for p in 0..k.order() as u32 {
                assert_eq!(k.moment(p), 0.0, "{:?} moment {p}", k);
            }
            assert_eq!(k.moment(k.order() as u32), fact[k.order()]);
        }
    }

    #[test]
    fn exact_on_low_degree_polynomials() {
        let kx = kernel(1, Axis::Space).unwrap();
        let line: Vec<f64> = (0..5).map(|i| i as f64).collect();
        assert_eq!(derivative(&line, &kx, 1.0).unwrap()[2], Some(1.0));

        let dx = 0.1;
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * dx).collect();
        let lin: Vec<f64> = xs.clone();
        for d in derivative(&lin, &kx, dx).unwrap().into_iter().flatten() {
            assert!((d - 1.0).abs() < 1e-12);
        }
        let quad: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let kxx = kernel(2, Axis::Space).unwrap();
        for d in derivative(&quad, &kxx, dx).unwrap().into_iter().flatten() {
            assert!((d - 2.0).abs() < 1e-10);
        }
        let dx = 0.05;
        let cubic: Vec<f64> = (0..30).map(|i| (i as f64 * dx).powi(3)).collect();
        let kxxx = kernel(3, Axis::Space).unwrap();
        for d in derivative(&cubic, &kxxx, dx).unwrap().into_iter().flatten() {
            assert!((d - 6.0).abs() < 1e-7);
        }
    }

    #[test]
    fn constant_data_gives_zero() {
        let c = vec![3.5; 9];
        let kxx = kernel(2, Axis::Space).unwrap();
        for d in derivative(&c, &kxx, 0.3).unwrap().into_iter().flatten() {
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn invalid_edges_are_marked() {
        let kx = kernel(1, Axis::Space).unwrap();
        let d = derivative(&[0.0; 7], &kx, 1.0).unwrap();
        assert_eq!(d.iter().filter(|v| v.is_none()).count(), 4);
        assert!(d[0].is_none() && d[1].is_none() && d[5].is_none() && d[6].is_none());
        assert!(derivative(&[0.0; 4], &kx, 1.0).is_err());
    }

    #[test]
    fn fourth_order_convergence_on_sine() {
        let kx = kernel(1, Axis::Space).unwrap();
        let err = |dx: f64| {
            let n = (6.0 / dx) as usize;
            let u: Vec<f64> = (0..n).map(|i| (i as f64 * dx).sin()).collect();
            derivative(&u, &kx, dx)
                .unwrap()
                .iter()
                .enumerate()
                .filter_map(|(i, d)| d.map(|d| (d - (i as f64 * dx).cos()).abs()))
                .fold(0.0, f64::max)
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio >= 12.0, "ratio {ratio}");
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn pad_examples() {
        let f = [1.0, 2.0, 3.0];
        assert_eq!(
            pad(&f, 2, Side::Right, GhostRule::Mirror).unwrap(),
            vec![1.0, 2.0, 3.0, 2.0, 1.0]
        );
        assert_eq!(
            pad(&f, 2, Side::Left, GhostRule::Zero).unwrap(),
            vec![0.0, 0.0, 1.0, 2.0, 3.0]
        );
        assert_eq!(
            pad(&f, 2, Side::Left, GhostRule::Mirror).unwrap(),
            vec![3.0, 2.0, 1.0, 2.0, 3.0]
        );
        assert!(pad(&f, 3, Side::Left, GhostRule::Zero).is_err());
        assert!(pad(&f[..2], 2, Side::Left, GhostRule::Mirror).is_err());
    }

    #[test]
    fn extrapolation_is_exact_on_cubics() {
        let f: Vec<f64> = (0..6).map(|i| (i as f64 - 1.3).powi(3)).collect();
        let p = pad(&f, 2, Side::Left, GhostRule::Extrapolate).unwrap();
        assert!((p[1] - (-2.3f64).powi(3)).abs() < 1e-9);
        assert!((p[0] - (-3.3f64).powi(3)).abs() < 1e-9);
    }

    #[test]
    fn mirror_kills_boundary_first_derivative() {
        let kx = kernel(1, Axis::Space).unwrap();
        let f = [0.3, -1.2, 4.0, 2.5, 0.1, 7.0];
        let p = pad(&f, 2, Side::Left, GhostRule::Mirror).unwrap();
        assert_eq!(kx.apply(&p[0..5], 0.1), 0.0);
        let p = pad(&f, 2, Side::Right, GhostRule::Mirror).unwrap();
        assert_eq!(kx.apply(&p[3..8], 0.1), 0.0);
    }

    #[test]
    fn unpad_is_the_transpose_of_pad() {
        let n = 7;
        for &(l, r) in &[
            (GhostRule::Zero, GhostRule::Mirror),
            (GhostRule::Extrapolate, GhostRule::Zero),
            (GhostRule::Mirror, GhostRule::Extrapolate),
        ] {
            let u: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 5) as f64 - 1.5).collect();
            let w: Vec<f64> = (0..n + 4).map(|i| ((i * 3 + 1) % 7) as f64 * 0.25).collect();
            let mut pu = vec![0.0; n + 4];
            pad_into(&u, l, r, &mut pu);
            let mut ptw = vec![0.0; n];
            unpad_adjoint(&w, l, r, &mut ptw);
            let lhs: f64 = pu.iter().zip(&w).map(|(a, b)| a * b).sum();
            let rhs: f64 = u.iter().zip(&ptw).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
