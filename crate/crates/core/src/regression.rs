//! Sequential-threshold ridge regression (STRidge) and the Pareto-style
//! selection of its ridge weight and threshold.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::RegressionProblem;

pub const MAX_THRESHOLD_ITERS: usize = 25;

/// Rows `r` with `(r / VALIDATION_BLOCK) % 5 == 4` form the validation split.
pub const VALIDATION_BLOCK: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseSolution {
    /// Physical-scale coefficients, zero off the support.
    pub xi: Vec<f64>,
    /// Coefficients of the normalized system.
    pub xi_scaled: Vec<f64>,
    pub support: Vec<usize>,
    /// Relative residual on the rows the solution was fitted to.
    pub train_error: f64,
    pub n_terms: usize,
    pub gamma: f64,
    pub tol: f64,
}

/// Solves `(T^T T + lambda I) xi = T^T y`.
pub fn ridge(theta: &DMatrix<f64>, target: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if theta.nrows() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows vs {} targets",
            theta.nrows(),
            target.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("ridge weight {lambda} < 0")));
    }
    let gram = theta.tr_mul(theta);
    let rhs = theta.tr_mul(target);
    solve_spd(gram, &rhs, lambda)
}

fn solve_spd(mut gram: DMatrix<f64>, rhs: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("normal equations with lambda = {lambda}")))?;
    Ok(chol.solve(rhs))
}

/// Rows of a problem together with their Gram matrix, shared by the many
/// STRidge runs of a grid search.
struct Prepared {
    theta: DMatrix<f64>,
    target: DVector<f64>,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl Prepared {
    fn new(theta: DMatrix<f64>, target: DVector<f64>) -> Self {
        let gram = theta.tr_mul(&theta);
        let rhs = theta.tr_mul(&target);
        Self {
            theta,
            target,
            gram,
            rhs,
        }
    }

    fn rows(problem: &RegressionProblem, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..problem.n_rows()).filter(|&r| keep(r)).collect();
        let theta = problem.theta.select_rows(idx.iter());
        let target = DVector::from_iterator(idx.len(), idx.iter().map(|&r| problem.target[r]));
        Self::new(theta, target)
    }

    fn ridge_on(&self, support: &[usize], lambda: f64) -> Result<Vec<f64>> {
        let k = support.len();
        let gram = DMatrix::from_fn(k, k, |a, b| self.gram[(support[a], support[b])]);
        let rhs = DVector::from_fn(k, |a, _| self.rhs[support[a]]);
        match solve_spd(gram.clone(), &rhs, lambda) {
            Ok(x) => Ok(x.iter().copied().collect()),
            // Rank-deficient support at lambda = 0: fall back to least squares.
            Err(_) if lambda == 0.0 => self.least_squares(support),
            Err(e) => Err(e),
        }
    }

    /// Minimum-norm least squares restricted to `support`, via QR of the
    /// tall column block and an SVD of the small triangular factor.
    fn least_squares(&self, support: &[usize]) -> Result<Vec<f64>> {
        if support.is_empty() {
            return Ok(Vec::new());
        }
        let a = self.theta.select_columns(support.iter());
        let qr = a.qr();
        let qtb = qr.q().tr_mul(&self.target);
        let r = qr.r();
        let svd = r.svd(true, true);
        let x = svd
            .solve(&qtb, 1e-12 * svd.singular_values.max())
            .map_err(|e| Error::Singular(e.to_string()))?;
        Ok(x.iter().copied().collect())
    }

    fn residual(&self, xi: &[f64]) -> f64 {
        relative_residual(&self.theta, &self.target, xi)
    }
}

fn relative_residual(theta: &DMatrix<f64>, target: &DVector<f64>, xi: &[f64]) -> f64 {
    let pred = theta * DVector::from_column_slice(xi);
    let tn = target.norm();
    let rn = (target - pred).norm();
    if tn > 0.0 {
        rn / tn
    } else {
        rn
    }
}

fn stridge_prepared(
    data: &Prepared,
    gamma: f64,
    tol: f64,
    protected: &[usize],
    start: &[usize],
) -> Result<(Vec<f64>, Vec<usize>)> {
    let n = data.theta.ncols();
    let mut support: Vec<usize> = start.to_vec();
    for &p in protected {
        if !support.contains(&p) {
            support.push(p);
        }
    }
    support.sort_unstable();
    for _ in 0..MAX_THRESHOLD_ITERS {
        if support.is_empty() {
            break;
        }
        let coef = data.ridge_on(&support, gamma)?;
        let next: Vec<usize> = support
            .iter()
            .zip(&coef)
            .filter(|&(i, c)| c.abs() >= tol || protected.contains(i))
            .map(|(&i, _)| i)
            .collect();
        if next == support {
            break;
        }
        support = next;
    }
    let mut xi = vec![0.0; n];
    for (&i, c) in support.iter().zip(data.least_squares(&support)?) {
        xi[i] = c;
    }
    Ok((xi, support))
}

fn check_tol(tol: f64, protected: &[usize], n: usize) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("threshold {tol} must be positive")));
    }
    if let Some(p) = protected.iter().find(|&&p| p >= n) {
        return Err(Error::InvalidParameter(format!("protected index {p} out of range")));
    }
    Ok(())
}

/// STRidge on the full problem, starting from every non-degenerate column.
pub fn stridge(problem: &RegressionProblem, gamma: f64, tol: f64, protected: &[usize]) -> Result<SparseSolution> {
    let start: Vec<usize> = (0..problem.n_terms())
        .filter(|&j| problem.theta.column(j).iter().any(|&v| v != 0.0))
        .collect();
    stridge_from(problem, gamma, tol, protected, &start)
}

/// STRidge restricted to the columns in `start`.
pub fn stridge_from(
    problem: &RegressionProblem,
    gamma: f64,
    tol: f64,
    protected: &[usize],
    start: &[usize],
) -> Result<SparseSolution> {
    check_tol(tol, protected, problem.n_terms())?;
    let data = Prepared::new(problem.theta.clone(), problem.target.clone());
    let (xi_scaled, support) = stridge_prepared(&data, gamma, tol, protected, start)?;
    Ok(solution(problem, &data, xi_scaled, support, gamma, tol))
}

fn solution(
    problem: &RegressionProblem,
    data: &Prepared,
    xi_scaled: Vec<f64>,
    support: Vec<usize>,
    gamma: f64,
    tol: f64,
) -> SparseSolution {
    SparseSolution {
        xi: problem.denormalize(&xi_scaled),
        train_error: data.residual(&xi_scaled),
        n_terms: support.len(),
        xi_scaled,
        support,
        gamma,
        tol,
    }
}

/// Score of one grid cell: validation error penalized by model size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoCell {
    pub gamma: f64,
    pub tol: f64,
    pub validation_error: f64,
    pub n_terms: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoChoice {
    pub gamma: f64,
    pub tol: f64,
    pub cells: Vec<ParetoCell>,
}

/// Validation errors below this are rounding noise on an exactly
/// representable system; they all score alike so the sparsest such model wins.
pub const VALIDATION_FLOOR: f64 = 1e-8;

fn knee_score(validation_error: f64, n_terms: usize, complexity_weight: f64) -> f64 {
    validation_error.max(VALIDATION_FLOOR) * (1.0 + complexity_weight * n_terms as f64)
}

fn is_validation_row(r: usize) -> bool {
    (r / VALIDATION_BLOCK) % 5 == 4
}

/// Picks the `(gamma, tol)` pair minimizing
/// `validation_error * (1 + complexity_weight * n_terms)` on a fixed
/// 80/20 block split of the rows, with validation errors floored at
/// [`VALIDATION_FLOOR`]. Ties keep the earliest grid cell.
pub fn pareto_gamma(
    problem: &RegressionProblem,
    gamma_grid: &[f64],
    tol_grid: &[f64],
    complexity_weight: f64,
    protected: &[usize],
) -> Result<ParetoChoice> {
    if gamma_grid.is_empty() || tol_grid.is_empty() {
        return Err(Error::InvalidParameter("empty regression grid".into()));
    }
    for &tol in tol_grid {
        check_tol(tol, protected, problem.n_terms())?;
    }
    if gamma_grid.len() == 1 && tol_grid.len() == 1 {
        return Ok(ParetoChoice {
            gamma: gamma_grid[0],
            tol: tol_grid[0],
            cells: Vec::new(),
        });
    }
    let train = Prepared::rows(problem, |r| !is_validation_row(r));
    let valid = Prepared::rows(problem, is_validation_row);
    // Tiny problems can lack a validation block; score on the training rows.
    let scorer = if valid.theta.nrows() > 0 { &valid } else { &train };
    let start: Vec<usize> = (0..problem.n_terms())
        .filter(|&j| train.gram[(j, j)] > 0.0)
        .collect();

    let mut cells = Vec::with_capacity(gamma_grid.len() * tol_grid.len());
    for &gamma in gamma_grid {
        for &tol in tol_grid {
            let (xi, support) = stridge_prepared(&train, gamma, tol, protected, &start)?;
            let validation_error = scorer.residual(&xi);
            let n_terms = support.len();
            cells.push(ParetoCell {
                gamma,
                tol,
                validation_error,
                n_terms,
                score: knee_score(validation_error, n_terms, complexity_weight),
            });
        }
    }
    let best = cells
        .iter()
        .enumerate()
        .fold(0, |b, (i, c)| if c.score < cells[b].score { i } else { b });
    Ok(ParetoChoice {
        gamma: cells[best].gamma,
        tol: cells[best].tol,
        cells,
    })
}

/// Default log-spaced ridge weights `1e-6 ..= 1`.
pub fn default_gamma_grid() -> Vec<f64> {
    (0..=6).map(|k| 10f64.powi(k - 6)).collect()
}

pub fn default_tol_grid() -> Vec<f64> {
    vec![0.01, 0.05, 0.1, 0.5, 1.0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem_from(theta: DMatrix<f64>, target: DVector<f64>) -> RegressionProblem {
        let n = theta.nrows();
        let k = theta.ncols();
        RegressionProblem {
            theta,
            target,
            column_scales: vec![1.0; k],
            target_scale: 1.0,
            row_map: (0..n).map(|r| (r, 0)).collect(),
        }
    }

    fn random_normalized(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
        for j in 0..cols {
            let n = m.column(j).norm();
            m.column_mut(j).unscale_mut(n);
        }
        m
    }

    #[test]
    fn ridge_orthonormal() {
        let q = random_normalized(40, 5, 1).qr().q();
        let y = DVector::from_fn(40, |i, _| (i as f64 * 0.3).sin());
        let xi = ridge(&q, &y, 0.0).unwrap();
        let expect = q.tr_mul(&y);
        assert!((xi - expect).norm() < 1e-12);
    }

    #[test]
    fn ridge_exact_column() {
        let t = random_normalized(30, 6, 2);
        let y = t.column(3) * 3.0;
        let xi = ridge(&t, &y, 0.0).unwrap();
        for j in 0..6 {
            let e = if j == 3 { 3.0 } else { 0.0 };
            assert!((xi[j] - e).abs() < 1e-10);
        }
    }

    #[test]
    fn ridge_shrinks() {
        let t = random_normalized(30, 6, 3);
        let y = DVector::from_fn(30, |i, _| (i as f64).cos());
        let bound = t.tr_mul(&y).norm();
        for lambda in [1e2, 1e4, 1e8] {
            let xi = ridge(&t, &y, lambda).unwrap();
            assert!(xi.norm() <= bound / lambda + 1e-15);
        }
        assert!(ridge(&t, &y, -1.0).is_err());
    }

    #[test]
    fn ridge_rank_deficient() {
        let mut t = random_normalized(10, 3, 4);
        let c = t.column(0).clone_owned();
        t.set_column(2, &c);
        let y = DVector::from_element(10, 1.0);
        assert!(matches!(ridge(&t, &y, 0.0), Err(Error::Singular(_))));
        assert!(ridge(&t, &y, 1e-3).is_ok());
    }

    #[test]
    fn zero_target_keeps_only_protected() {
        let t = random_normalized(50, 8, 5);
        let p = problem_from(t, DVector::zeros(50));
        let s = stridge(&p, 1e-5, 0.01, &[4]).unwrap();
        assert_eq!(s.support, vec![4]);
        assert!(s.xi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn planted_recovery() {
        let t = random_normalized(200, 20, 6);
        let y = t.column(2) * 0.8 - t.column(4) * 0.3 + t.column(11) * 0.5;
        let p = problem_from(t, y);
        let s = stridge(&p, 1e-6, 0.05, &[4]).unwrap();
        assert_eq!(s.support, vec![2, 4, 11]);
        assert!((s.xi[2] - 0.8).abs() < 1e-10);
        assert!((s.xi[4] + 0.3).abs() < 1e-10);
        assert!((s.xi[11] - 0.5).abs() < 1e-10);
        assert!(s.train_error < 1e-12);
    }

    #[test]
    fn support_is_a_fixed_point() {
        let t = random_normalized(120, 15, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = DVector::from_fn(120, |_, _| rng.gen_range(-0.05..0.05));
        let y = t.column(1) * 0.6 + t.column(7) * 0.4 + noise;
        let p = problem_from(t, y);
        let s = stridge(&p, 1e-3, 0.1, &[4]).unwrap();
        let again = stridge_from(&p, 1e-3, 0.1, &[4], &s.support).unwrap();
        assert_eq!(again.support, s.support);
        for (a, b) in again.xi.iter().zip(&s.xi) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn larger_threshold_never_grows_support() {
        let t = random_normalized(150, 20, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let noise = DVector::from_fn(150, |_, _| rng.gen_range(-0.2..0.2));
        let y = t.column(0) * 1.0 + t.column(5) * 0.3 + t.column(9) * 0.08 + noise;
        let p = problem_from(t, y);
        let mut last = usize::MAX;
        for tol in [0.001, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0] {
            let s = stridge(&p, 1e-4, tol, &[4]).unwrap();
            assert!(s.n_terms <= last, "tol {tol}");
            assert!(s.support.contains(&4));
            last = s.n_terms;
        }
    }

    #[test]
    fn pareto_single_cell() {
        let t = random_normalized(60, 5, 11);
        let p = problem_from(t.clone(), t.column(0).clone_owned());
        let c = pareto_gamma(&p, &[0.1], &[0.5], 0.05, &[]).unwrap();
        assert_eq!((c.gamma, c.tol), (0.1, 0.5));
        assert!(pareto_gamma(&p, &[], &[0.5], 0.05, &[]).is_err());
    }

    #[test]
    fn pareto_prefers_exact_sparse_model() {
        let t = random_normalized(300, 20, 12);
        let y = t.column(2) * 0.9 + t.column(4) * 0.2;
        let p = problem_from(t, y);
        let c = pareto_gamma(&p, &default_gamma_grid(), &default_tol_grid(), 0.05, &[4]).unwrap();
        let best = c
            .cells
            .iter()
            .find(|x| x.gamma == c.gamma && x.tol == c.tol)
            .unwrap();
        assert!(best.validation_error < 1e-8);
        let min_k = c
            .cells
            .iter()
            .filter(|x| x.validation_error < 1e-8)
            .map(|x| x.n_terms)
            .min()
            .unwrap();
        assert_eq!(best.n_terms, min_k);
        assert_eq!(best.n_terms, 2);
    }

    #[test]
    fn round_off_level_errors_tie() {
        assert_eq!(knee_score(1e-14, 2, 0.05), knee_score(3e-15, 2, 0.05));
        assert!(knee_score(1.3e-14, 2, 0.05) < knee_score(1.2e-14, 3, 0.05));
        assert!(knee_score(2e-8, 1, 0.05) > knee_score(1e-8, 2, 0.05));
    }

    #[test]
    fn pareto_on_pure_noise_keeps_protected_only() {
        for seed in 0..5 {
            let t = random_normalized(300, 20, 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let y = DVector::from_fn(300, |_, _| rng.gen_range(-1.0..1.0));
            let p = problem_from(t, y);
            let c = pareto_gamma(&p, &default_gamma_grid(), &default_tol_grid(), 0.05, &[4]).unwrap();
            let s = stridge(&p, c.gamma, c.tol, &[4]).unwrap();
            assert!(s.n_terms <= 1, "seed {seed}: {:?}", s.support);
        }
    }

    #[test]
    fn denormalization_preserves_predictions() {
        let mut t = random_normalized(80, 6, 13);
        let scales = [2.0, 0.5, 10.0, 1.0, 3.0, 0.1];
        for (j, s) in scales.iter().enumerate() {
            t.column_mut(j).scale_mut(*s);
        }
        let y = t.column(1) * 4.0 + t.column(2) * 0.7;
        let mut p = problem_from(t.clone(), y.clone());
        for j in 0..6 {
            let n = p.theta.column(j).norm();
            p.theta.column_mut(j).unscale_mut(n);
            p.column_scales[j] = n;
        }
        p.target_scale = y.norm();
        p.target.unscale_mut(p.target_scale);
        let s = stridge(&p, 1e-8, 0.01, &[]).unwrap();
        let raw = &t * DVector::from_column_slice(&s.xi);
        let scaled = (&p.theta * DVector::from_column_slice(&s.xi_scaled)) * p.target_scale;
        assert!((raw - scaled).norm() < 1e-9);
        assert!((s.xi[1] - 4.0).abs() < 1e-9 && (s.xi[2] - 0.7).abs() < 1e-9);
    }
}
