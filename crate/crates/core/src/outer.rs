//! Smoothing continuation over `ε` and the cross-validation pipeline around it.

use log::info;
use serde::{Deserialize, Serialize};

use crate::baseline::{misclassified_percent, solve_l1svc_dual, DualStatus, DualSvcConfig};
use crate::data_io::{Dataset, SplitPlan};
use crate::diagnostics::{complementarity, Complementarity};
use crate::error::{Error, Result};
use crate::kkt::{residual, KktPoint};
use crate::linalg::norm2;
use crate::newton::{solve_subproblem, NewtonConfig, NewtonStatus, NewtonTrace};
use crate::problem::{MpecProblem, PrimalPoint};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterConfig {
    pub eps0: f64,
    pub eps_min: f64,
    pub kappa: f64,
    pub initial_c: f64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            eps0: 1.0,
            eps_min: 1e-6,
            kappa: 0.5,
            initial_c: 1.0,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_min > 0.0 && self.eps0 >= self.eps_min && self.eps0.is_finite()) {
            return Err(Error::Config("need eps0 >= eps_min > 0".into()));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::Config("kappa must lie in (0, 1)".into()));
        }
        if !(self.initial_c > 0.0) {
            return Err(Error::Config("initial C must be positive".into()));
        }
        Ok(())
    }

    /// `eps0·κ^t` for `t = 0, 1, …`, ending with the first value at or below `eps_min`.
    pub fn schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in 0.. {
            let eps = self.eps0 * self.kappa.powi(t);
            out.push(eps);
            if eps <= self.eps_min {
                break;
            }
        }
        out
    }
}

/// `v = (C0, ½·1, ½·1, ½·min(1, C0)·1, ½·1)` and `λ = 0`.
pub fn initial_point<T: Scalar>(p: &MpecProblem<T>, c0: T, eps: T) -> Result<KktPoint<T>> {
    if !(c0 > T::zero()) {
        return Err(Error::Config(format!("initial C must be positive, got {c0}")));
    }
    let half = T::lit(0.5);
    let mut v = PrimalPoint::zeros(p.tm1(), p.tm2());
    v.set_c(c0);
    v.zeta_mut().fill(half);
    v.z_mut().fill(half);
    v.alpha_mut().fill(half * c0.min(T::one()));
    v.xi_mut().fill(half);
    KktPoint::new(v, vec![T::zero(); p.m()], eps)
}

/// Summary of one subproblem of the continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub outer_t: usize,
    pub eps: f64,
    pub f_tol: f64,
    /// `‖F_ε‖` at the warm start.
    pub warm_norm_f: f64,
    pub final_norm_f: f64,
    pub status: NewtonStatus,
    pub complementarity: Complementarity,
    pub trace: NewtonTrace,
}

#[derive(Debug, Clone)]
pub struct SmoothingRun<T> {
    pub point: KktPoint<T>,
    pub segments: Vec<Segment>,
}

impl<T> SmoothingRun<T> {
    pub fn outer_iters(&self) -> usize {
        self.segments.len()
    }

    pub fn inner_iters(&self) -> usize {
        self.segments.iter().map(|s| s.trace.iterations()).sum()
    }

    pub fn all_converged(&self) -> bool {
        self.segments.iter().all(|s| s.status == NewtonStatus::Converged)
    }
}

/// Runs the continuation from [`initial_point`], warm-starting every
/// subproblem at the previous solution. A failed subproblem does not stop the
/// loop; the next one starts from its last accepted iterate.
pub fn run_smoothing<T: Scalar>(p: &MpecProblem<T>, ocfg: &OuterConfig, ncfg: &NewtonConfig) -> Result<SmoothingRun<T>> {
    ocfg.validate()?;
    ncfg.validate()?;
    let schedule = ocfg.schedule();
    let mut r = initial_point(p, T::lit(ocfg.initial_c), T::lit(schedule[0]))?;
    let mut segments = Vec::with_capacity(schedule.len());
    for (t, &eps) in schedule.iter().enumerate() {
        r.set_eps(T::lit(eps));
        let cfg = ncfg.for_eps(eps);
        let warm = norm2(&residual(p, &r)?).as_f64();
        let out = solve_subproblem(p, r, &cfg)?;
        let comp = complementarity(p, out.point.v(), T::lit(eps))?;
        info!(
            "t={t} eps={eps:.3e} iters={} |F|={:.3e} status={:?}",
            out.trace.iterations(),
            out.norm_f.as_f64(),
            out.status
        );
        segments.push(Segment {
            outer_t: t,
            eps,
            f_tol: cfg.f_tol,
            warm_norm_f: warm,
            final_norm_f: out.norm_f.as_f64(),
            status: out.status,
            complementarity: comp,
            trace: out.trace,
        });
        r = out.point;
    }
    Ok(SmoothingRun { point: r, segments })
}

/// `C·T/(T−1)`.
pub fn rescale_c(c: f64, n_folds: usize) -> Result<f64> {
    if n_folds < 2 {
        return Err(Error::Config("rescaling needs at least two folds".into()));
    }
    Ok(c * n_folds as f64 / (n_folds - 1) as f64)
}

#[derive(Debug, Clone)]
pub struct Postprocessed<T> {
    pub c_raw: f64,
    pub c_hat: f64,
    pub w: Vec<T>,
    pub dual_status: DualStatus,
}

/// Rescales `C` and retrains on the whole cross-validation set.
pub fn postprocess<T: Scalar>(
    v: &PrimalPoint<T>,
    ds: &Dataset<T>,
    plan: &SplitPlan,
    dual: &DualSvcConfig,
) -> Result<Postprocessed<T>> {
    let c_raw = v.c().as_f64();
    let c_hat = rescale_c(c_raw, plan.n_folds())?;
    let rows = signed_rows(ds, &plan.cv_indices);
    let sol = solve_l1svc_dual(&rows, T::lit(c_hat.max(0.0)), dual)?;
    Ok(Postprocessed {
        c_raw,
        c_hat,
        w: sol.w,
        dual_status: sol.status,
    })
}

fn signed_rows<T: Scalar>(ds: &Dataset<T>, idx: &[usize]) -> CsrMatrix<T> {
    let rows: Vec<_> = idx.iter().map(|&i| ds.signed_row(i)).collect();
    CsrMatrix::from_rows(ds.n_features(), rows.iter().map(Vec::as_slice))
}

/// `100·f(v) = 100·1ᵀζ/(T m1)`.
pub fn cv_error<T: Scalar>(p: &MpecProblem<T>, v: &PrimalPoint<T>) -> f64 {
    100.0 * p.objective(v).as_f64()
}

/// Misclassification percentage of `w` on the listed points; `None` when the
/// list is empty.
pub fn test_error<T: Scalar>(w: &[T], ds: &Dataset<T>, idx: &[usize]) -> Option<f64> {
    if idx.is_empty() {
        return None;
    }
    Some(misclassified_percent(&signed_rows(ds, idx), w))
}

/// Validation misclassification averaged over folds for the per-fold
/// classifiers `wᵗ = Bᵗᵀαᵗ` encoded in `v`.
pub fn fold_classifier_error<T: Scalar>(p: &MpecProblem<T>, v: &PrimalPoint<T>) -> f64 {
    let ws = p.fold_weights(v.alpha());
    let total: f64 = ws
        .iter()
        .enumerate()
        .map(|(t, w)| misclassified_percent(p.a_block(t), w))
        .sum();
    total / p.n_folds() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_counts() {
        assert_eq!(OuterConfig::default().schedule().len(), 21);
        let half = OuterConfig {
            eps0: 0.5,
            ..OuterConfig::default()
        };
        assert_eq!(half.schedule().len(), 20);
        let single = OuterConfig {
            eps0: 1e-6,
            ..OuterConfig::default()
        };
        assert_eq!(single.schedule(), vec![1e-6]);
        let s = OuterConfig::default().schedule();
        assert!(s[19] > 1e-6 && s[20] < 1e-6);
        assert!(s.iter().enumerate().all(|(t, &e)| e == 0.5f64.powi(t as i32)));
    }

    #[test]
    fn outer_config_ranges() {
        assert!(OuterConfig::default().validate().is_ok());
        for bad in [
            OuterConfig { kappa: 1.0, ..Default::default() },
            OuterConfig { eps0: 1e-7, ..Default::default() },
            OuterConfig { eps_min: 0.0, ..Default::default() },
            OuterConfig { initial_c: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn rescaling() {
        assert_eq!(rescale_c(0.5, 3).unwrap(), 0.75);
        assert_eq!(rescale_c(1.0, 2).unwrap(), 2.0);
        assert!(rescale_c(1.0, 1).is_err());
    }
}
