//! Dual coordinate descent for the bias-free L1-loss SVC and a grid search
//! over `C` that reports cross-validation error.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualSvcConfig {
    pub max_epochs: usize,
    /// Bound on the largest projected-gradient entry.
    pub tol: f64,
    pub shrink: bool,
    pub seed: u64,
}

impl Default for DualSvcConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            tol: 1e-8,
            shrink: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualStatus {
    Converged,
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct DualSolution<T> {
    pub alpha: Vec<T>,
    pub w: Vec<T>,
    pub epochs: usize,
    pub max_violation: T,
    pub status: DualStatus,
}

impl<T: Scalar> DualSolution<T> {
    /// `½αᵀQα − 1ᵀα`.
    pub fn dual_objective(&self) -> T {
        T::lit(0.5) * dot(&self.w, &self.w) - self.alpha.iter().copied().sum::<T>()
    }
}

/// `½‖w‖² + C Σ max(0, 1 − rowᵢ·w)`.
pub fn primal_objective<T: Scalar>(rows: &CsrMatrix<T>, c: T, w: &[T]) -> T {
    let hinge: T = (0..rows.nrows())
        .map(|i| (T::one() - rows.row_dot(i, w)).max(T::zero()))
        .sum();
    T::lit(0.5) * dot(w, w) + c * hinge
}

#[inline]
fn projected<T: Scalar>(g: T, a: T, c: T) -> T {
    if a <= T::zero() && a >= c {
        T::zero()
    } else if a <= T::zero() {
        g.min(T::zero())
    } else if a >= c {
        g.max(T::zero())
    } else {
        g
    }
}

/// Solves `min ½αᵀQα − 1ᵀα, 0 ≤ α ≤ C` with `Q = R Rᵀ`, where the rows of `R`
/// are the label-signed points `yᵢxᵢ`.
pub fn solve_l1svc_dual<T: Scalar>(rows: &CsrMatrix<T>, c: T, cfg: &DualSvcConfig) -> Result<DualSolution<T>> {
    if !(c >= T::zero()) {
        return Err(Error::Config(format!("C must be nonnegative, got {c}")));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::Config("dual tolerance must be positive".into()));
    }
    let n = rows.nrows();
    let tol = T::lit(cfg.tol);
    let qd: Vec<T> = (0..n).map(|i| rows.row_norm_sq(i)).collect();
    let mut alpha = vec![T::zero(); n];
    let mut w = vec![T::zero(); rows.ncols()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut active: Vec<usize> = (0..n).filter(|&i| qd[i] > T::zero()).collect();
    let all = active.clone();
    // shrinking thresholds from the previous epoch
    let (mut pg_max_old, mut pg_min_old) = (T::infinity(), T::neg_infinity());
    let mut epochs = 0;
    let mut violation = T::zero();
    let mut status = DualStatus::MaxEpochs;

    while epochs < cfg.max_epochs {
        epochs += 1;
        active.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (T::neg_infinity(), T::infinity());
        let mut keep = Vec::with_capacity(active.len());
        for &i in &active {
            let g = rows.row_dot(i, &w) - T::one();
            if cfg.shrink {
                if alpha[i] <= T::zero() && g > pg_max_old {
                    continue;
                }
                if alpha[i] >= c && g < pg_min_old {
                    continue;
                }
            }
            keep.push(i);
            let pg = projected(g, alpha[i], c);
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != T::zero() {
                let old = alpha[i];
                let new = (old - g / qd[i]).max(T::zero()).min(c);
                let delta = new - old;
                if delta != T::zero() {
                    alpha[i] = new;
                    for (j, v) in rows.row(i) {
                        w[j] += delta * v;
                    }
                }
            }
        }
        violation = if keep.is_empty() { T::zero() } else { pg_max.max(-pg_min) };
        if violation <= tol {
            if !cfg.shrink || keep.len() == all.len() {
                // updates within the epoch move earlier gradients slightly
                violation = max_violation(rows, &alpha, &w, c);
                if violation <= tol {
                    status = DualStatus::Converged;
                    break;
                }
                active = all.clone();
                pg_max_old = T::infinity();
                pg_min_old = T::neg_infinity();
                continue;
            }
            // confirm on the full set before stopping
            active = all.clone();
            pg_max_old = T::infinity();
            pg_min_old = T::neg_infinity();
            continue;
        }
        active = keep;
        pg_max_old = if pg_max <= T::zero() { T::infinity() } else { pg_max };
        pg_min_old = if pg_min >= T::zero() { T::neg_infinity() } else { pg_min };
    }
    if status == DualStatus::MaxEpochs {
        violation = max_violation(rows, &alpha, &w, c);
        if violation <= tol {
            status = DualStatus::Converged;
        }
    }
    Ok(DualSolution {
        alpha,
        w,
        epochs,
        max_violation: violation,
        status,
    })
}

/// Largest projected-gradient magnitude over rows with nonzero norm.
pub fn max_violation<T: Scalar>(rows: &CsrMatrix<T>, alpha: &[T], w: &[T], c: T) -> T {
    (0..rows.nrows())
        .filter(|&i| rows.row_norm_sq(i) > T::zero())
        .map(|i| projected(rows.row_dot(i, w) - T::one(), alpha[i], c).abs())
        .fold(T::zero(), T::max)
}

/// `n` values spaced evenly in log10 between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || n == 0 {
        return Err(Error::Config(format!("bad grid [{lo}, {hi}] with {n} points")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..n)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub c: f64,
    pub e_cv: f64,
    /// Status of each fold's training solve.
    pub statuses: Vec<DualStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTable {
    pub rows: Vec<GridRow>,
    /// Index of the first row attaining the minimum `E_cv`.
    pub best: usize,
}

impl GridTable {
    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }
}

fn signed_rows<T: Scalar>(ds: &Dataset<T>, idx: &[usize]) -> CsrMatrix<T> {
    let rows: Vec<_> = idx.iter().map(|&i| ds.signed_row(i)).collect();
    CsrMatrix::from_rows(ds.n_features(), rows.iter().map(Vec::as_slice))
}

/// Percentage of rows with `rowᵢ·w ≤ 0`; a zero margin counts as an error.
pub fn misclassified_percent<T: Scalar>(rows: &CsrMatrix<T>, w: &[T]) -> f64 {
    if rows.nrows() == 0 {
        return 0.0;
    }
    let errs = (0..rows.nrows()).filter(|&i| rows.row_dot(i, w) <= T::zero()).count();
    100.0 * errs as f64 / rows.nrows() as f64
}

/// For every `C` in `grid`, trains on each fold's complement and averages the
/// validation misclassification rate over folds.
pub fn grid_search<T: Scalar>(ds: &Dataset<T>, plan: &SplitPlan, grid: &[f64], cfg: &DualSvcConfig) -> Result<GridTable> {
    if grid.is_empty() {
        return Err(Error::Config("grid must not be empty".into()));
    }
    if let Some(c) = grid.iter().find(|c| !(**c >= 0.0)) {
        return Err(Error::Config(format!("grid value {c} is negative")));
    }
    let nf = plan.n_folds();
    if nf == 0 {
        return Err(Error::Split("no folds".into()));
    }
    let folds: Vec<(CsrMatrix<T>, CsrMatrix<T>)> = (0..nf)
        .map(|t| (signed_rows(ds, &plan.training_indices(t)), signed_rows(ds, &plan.folds[t])))
        .collect();
    let mut rows = Vec::with_capacity(grid.len());
    for &c in grid {
        let mut total = 0.0;
        let mut statuses = Vec::with_capacity(nf);
        for (train, valid) in &folds {
            let sol = solve_l1svc_dual(train, T::lit(c), cfg)?;
            total += misclassified_percent(valid, &sol.w);
            statuses.push(sol.status);
        }
        rows.push(GridRow {
            c,
            e_cv: total / nf as f64,
            statuses,
        });
    }
    let best = rows
        .iter()
        .enumerate()
        .fold(0, |b, (k, r)| if r.e_cv < rows[b].e_cv { k } else { b });
    Ok(GridTable { rows, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn csr(rows: &[Vec<(usize, f64)>], n: usize) -> CsrMatrix<f64> {
        CsrMatrix::from_rows(n, rows.iter().map(Vec::as_slice))
    }

    fn dense_q(r: &CsrMatrix<f64>) -> DMatrix<f64> {
        let n = r.nrows();
        let d = DMatrix::from_row_slice(n, r.ncols(), &r.to_dense());
        &d * d.transpose()
    }

    /// Minimum of the box QP over all faces: each coordinate is fixed at a
    /// bound or free, with the free block solved exactly.
    fn brute_force(q: &DMatrix<f64>, c: f64) -> f64 {
        let n = q.nrows();
        let obj = |a: &DVector<f64>| 0.5 * a.dot(&(q * a)) - a.sum();
        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(n as u32) {
            let mut kind = vec![0u8; n];
            let mut x = code;
            for k in kind.iter_mut() {
                *k = (x % 3) as u8;
                x /= 3;
            }
            let mut a = DVector::from_fn(n, |i, _| if kind[i] == 1 { c } else { 0.0 });
            let free: Vec<usize> = (0..n).filter(|&i| kind[i] == 2).collect();
            if !free.is_empty() {
                let k = free.len();
                let qff = DMatrix::from_fn(k, k, |i, j| q[(free[i], free[j])]);
                let rhs = DVector::from_fn(k, |i, _| {
                    1.0 - (0..n).filter(|j| kind[*j] == 1).map(|j| q[(free[i], j)] * c).sum::<f64>()
                });
                let Some(sol) = qff.lu().solve(&rhs) else { continue };
                if sol.iter().any(|&v| v < -1e-12 || v > c + 1e-12) {
                    continue;
                }
                for (i, &f) in free.iter().enumerate() {
                    a[f] = sol[i];
                }
            }
            best = best.min(obj(&a));
        }
        best
    }

    #[test]
    fn zero_c_gives_zero() {
        let r = csr(&[vec![(0, 1.0)], vec![(0, -2.0), (1, 1.0)]], 2);
        let s = solve_l1svc_dual(&r, 0.0, &DualSvcConfig::default()).unwrap();
        assert!(s.alpha.iter().all(|&a| a == 0.0));
        assert!(s.w.iter().all(|&a| a == 0.0));
        assert_eq!(s.status, DualStatus::Converged);
    }

    #[test]
    fn single_point() {
        let r = csr(&[vec![(0, 1.0)]], 1);
        let s = solve_l1svc_dual(&r, 10.0, &DualSvcConfig::default()).unwrap();
        assert_eq!(s.alpha, vec![1.0]);
        assert_eq!(s.w, vec![1.0]);
    }

    #[test]
    fn empty_rows_stay_at_zero() {
        let r = csr(&[vec![], vec![(0, 2.0)]], 1);
        let s = solve_l1svc_dual(&r, 1.0, &DualSvcConfig::default()).unwrap();
        assert_eq!(s.alpha[0], 0.0);
        assert!((s.alpha[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_and_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for shrink in [false, true] {
            for _ in 0..20 {
                let n = rng.gen_range(1..=5);
                let d = rng.gen_range(1..=4);
                let rows: Vec<Vec<(usize, f64)>> = (0..n)
                    .map(|_| (0..d).map(|j| (j, rng.gen_range(-1.0..1.0))).collect())
                    .collect();
                let r = csr(&rows, d);
                let c = 10f64.powf(rng.gen_range(-2.0..2.0));
                let cfg = DualSvcConfig {
                    shrink,
                    max_epochs: 100_000,
                    ..DualSvcConfig::default()
                };
                let s = solve_l1svc_dual(&r, c, &cfg).unwrap();
                assert_eq!(s.status, DualStatus::Converged);
                let bf = brute_force(&dense_q(&r), c);
                assert!((s.dual_objective() - bf).abs() <= 1e-6, "{} vs {bf}", s.dual_objective());
                for i in 0..n {
                    let g = r.row_dot(i, &s.w) - 1.0;
                    let a = s.alpha[i];
                    assert!((0.0..=c).contains(&a));
                    if a == 0.0 {
                        assert!(g >= -cfg.tol);
                    } else if a == c {
                        assert!(g <= cfg.tol);
                    } else {
                        assert!(g.abs() <= cfg.tol);
                    }
                }
                let gap = primal_objective(&r, c, &s.w) + s.dual_objective();
                assert!(gap >= -1e-9 && gap <= 1e-6 * (1.0 + s.dual_objective().abs()), "gap {gap}");
            }
        }
    }

    #[test]
    fn grid_spacing() {
        let g = log_grid(1e-3, 1e3, 25).unwrap();
        assert_eq!(g.len(), 25);
        assert!((g[0] - 1e-3).abs() < 1e-18 && (g[24] - 1e3).abs() < 1e-9 && (g[12] - 1.0).abs() < 1e-12);
        assert_eq!(log_grid(2.0, 2.0, 1).unwrap(), vec![2.0]);
        assert!(log_grid(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn misclassification_counts_zero_margin() {
        let r = csr(&[vec![(0, 1.0)], vec![(0, -1.0)], vec![]], 1);
        assert!((misclassified_percent(&r, &[1.0]) - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(misclassified_percent(&r, &[0.0]), 100.0);
    }
}
