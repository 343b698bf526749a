//! Damped Newton iteration on `F_ε(r) = 0` with Armijo backtracking on
//! `g_ε = ½‖F_ε‖²`.

use log::{debug, trace};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kkt::{KktOperator, KktPoint};
use crate::krylov::{bicgstab, jacobi_inverse, Diagonal, FnOperator, KrylovConfig, KrylovResult, KrylovStatus};
use crate::linalg::{dot, norm2};
use crate::nullspace::{NullspaceSolver, ShiftedKktInverse};
use crate::problem::MpecProblem;
use crate::reduced::reduced_descent;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    None,
    Jacobi,
    /// Exact inverse of the KKT matrix with only the Hessian block shifted.
    #[default]
    Nullspace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub sigma: f64,
    pub rho: f64,
    /// Absolute tolerance on `‖F‖`.
    pub f_tol: f64,
    pub max_iters: usize,
    pub max_backtracks: usize,
    pub reg_mu: f64,
    pub reg_mu_max: f64,
    /// Give up when `‖F‖` has not dropped below 0.99 of its value this many
    /// iterations earlier.
    pub stall_window: usize,
    /// Fall back to descent on the reduced objective when Newton fails.
    pub reduced_fallback: bool,
    pub krylov: KrylovConfig,
    pub precond: Preconditioner,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            sigma: 1e-4,
            rho: 0.5,
            f_tol: 1e-8,
            max_iters: 200,
            max_backtracks: 40,
            reg_mu: 1e-8,
            reg_mu_max: 1e-2,
            stall_window: 30,
            reduced_fallback: true,
            krylov: KrylovConfig::default(),
            precond: Preconditioner::Nullspace,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return bad("sigma must lie in (0, 1/2)");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(self.f_tol > 0.0) {
            return bad("f_tol must be positive");
        }
        if self.max_iters == 0 {
            return bad("newton max_iters must be at least 1");
        }
        if !(self.reg_mu > 0.0 && self.reg_mu <= self.reg_mu_max) {
            return bad("need 0 < reg_mu <= reg_mu_max");
        }
        if self.stall_window == 0 {
            return bad("stall window must be at least 1");
        }
        self.krylov.validate().map_err(Error::Config)
    }

    /// Same config with the stopping tolerance tightened for a given `ε`:
    /// `min(f_tol, 1e-2·ε²)`.
    pub fn for_eps(&self, eps: f64) -> Self {
        Self {
            f_tol: self.f_tol.min(1e-2 * eps * eps),
            ..*self
        }
    }
}

/// How the accepted search direction was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    Newton,
    Regularized { mu: f64 },
    SteepestDescent,
    /// Step of the reduced-space safeguard.
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonRecord {
    pub k: usize,
    /// `‖F‖` at iterate `k`.
    pub norm_f: f64,
    /// Step length that produced iterate `k` (zero for the starting point).
    pub step: f64,
    pub lin_iters: usize,
    pub backtracks: usize,
    pub direction: Option<DirectionKind>,
}

/// One row per iterate; the first row is the starting point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonTrace {
    pub records: Vec<NewtonRecord>,
}

impl NewtonTrace {
    /// Number of accepted steps.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn lin_iters(&self) -> usize {
        self.records.iter().map(|r| r.lin_iters).sum()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.norm_f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewtonStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
    /// `‖F‖` stopped decreasing, typically at a local minimum of the merit
    /// function that is not a zero of `F`.
    Stagnated,
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome<T> {
    pub point: KktPoint<T>,
    pub trace: NewtonTrace,
    pub status: NewtonStatus,
    pub norm_f: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoStep<T> {
    pub step: T,
    pub backtracks: usize,
    pub merit: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmijoError {
    NotDescent,
    TooManyBacktracks,
}

/// Finds the largest `s = ρ^i`, `i ≤ max_backtracks`, with
/// `g(s) ≤ g0 + σ s ∇g·d`. `merit_at(s)` evaluates the merit at `r + s d`.
pub fn armijo_search<T: Scalar, F: FnMut(T) -> T>(
    mut merit_at: F,
    g0: T,
    grad_dot_d: T,
    cfg: &NewtonConfig,
) -> std::result::Result<ArmijoStep<T>, ArmijoError> {
    if !(grad_dot_d < T::zero()) {
        return Err(ArmijoError::NotDescent);
    }
    let (sigma, rho) = (T::lit(cfg.sigma), T::lit(cfg.rho));
    let mut step = T::one();
    for i in 0..=cfg.max_backtracks {
        let g = merit_at(step);
        if g.is_finite() && g <= g0 + sigma * step * grad_dot_d {
            return Ok(ArmijoStep {
                step,
                backtracks: i,
                merit: g,
            });
        }
        step *= rho;
    }
    Err(ArmijoError::TooManyBacktracks)
}

fn is_descent<T: Scalar>(grad: &[T], d: &[T]) -> bool {
    let gd = dot(grad, d);
    gd.is_finite() && gd < -T::lit(1e-12) * norm2(grad) * norm2(d)
}

struct Direction<T> {
    d: Vec<T>,
    lin_iters: usize,
    kind: DirectionKind,
}

const STRUCTURED_STAGNATION_WINDOW: usize = 20;

fn newton_direction<T: Scalar>(op: &KktOperator<'_, T>, f: &[T], grad: &[T], cfg: &NewtonConfig) -> Direction<T> {
    let n = op.dim();
    let nv = op.problem().n_vars();
    let rhs: Vec<T> = f.iter().map(|&x| -x).collect();
    let x0 = vec![T::zero(); n];
    // near the roundoff floor an absolute tolerance would accept x = 0
    let mut kcfg = cfg.krylov;
    kcfg.abs_tol = kcfg.abs_tol.min(kcfg.rel_tol * norm2(f).as_f64());
    let diag = match cfg.precond {
        Preconditioner::Jacobi => Some(op.diagonal()),
        _ => None,
    };
    let structured = match cfg.precond {
        Preconditioner::Nullspace => NullspaceSolver::new(op)
            .map_err(|e| debug!("no structured preconditioner: {e}"))
            .ok(),
        _ => None,
    };
    if structured.is_some() {
        // with a near-exact preconditioner BiCGStab either converges in a
        // few steps or not at all
        kcfg.stagnation_window = kcfg.stagnation_window.min(STRUCTURED_STAGNATION_WINDOW);
    }
    let mut lin_iters = 0;

    let solve = |mu: T, lin_iters: &mut usize| -> Option<KrylovResult<T>> {
        // shift only the Hessian block; J has full row rank, so the
        // multiplier block needs no regularization
        let a = FnOperator::new(n, |x: &[T], y: &mut [T]| {
            let z = op.kkt_apply(x);
            for ((yi, zi), &xi) in y[..nv].iter_mut().zip(&z[..nv]).zip(&x[..nv]) {
                *yi = *zi + mu * xi;
            }
            y[nv..].copy_from_slice(&z[nv..]);
        });
        let res = if let Some(s) = &structured {
            if !s.is_regular(mu) {
                return None;
            }
            let m = ShiftedKktInverse { solver: s, mu };
            bicgstab(&a, &rhs, &x0, Some(&m), &kcfg)
        } else if let Some(d) = &diag {
            let shifted: Vec<T> = d.iter().enumerate().map(|(i, &x)| if i < nv { x + mu } else { x }).collect();
            let m = Diagonal(jacobi_inverse(&shifted, T::lit(1e-300)));
            bicgstab(&a, &rhs, &x0, Some(&m), &kcfg)
        } else {
            bicgstab(&a, &rhs, &x0, None, &kcfg)
        };
        *lin_iters += res.iterations;
        Some(res)
    };

    match solve(T::zero(), &mut lin_iters) {
        Some(res) if res.status == KrylovStatus::Converged && is_descent(grad, &res.x) => {
            return Direction {
                d: res.x,
                lin_iters,
                kind: DirectionKind::Newton,
            };
        }
        Some(res) => debug!(
            "newton system: {:?} after {} its, rel residual {:.2e}, |x|={:.2e}, regularizing",
            res.status,
            res.iterations,
            (res.residual_norm / norm2(f)).as_f64(),
            norm2(&res.x).as_f64()
        ),
        None => debug!("newton system singular along the null direction, regularizing"),
    }

    let mut mu = cfg.reg_mu;
    while mu <= cfg.reg_mu_max * (1.0 + 1e-12) {
        if let Some(res) = solve(T::lit(mu), &mut lin_iters) {
            if res.status == KrylovStatus::Converged && is_descent(grad, &res.x) {
                return Direction {
                    d: res.x,
                    lin_iters,
                    kind: DirectionKind::Regularized { mu },
                };
            }
            trace!(
                "mu={mu:.1e}: {:?} after {} its, descent={}",
                res.status,
                res.iterations,
                is_descent(grad, &res.x)
            );
        }
        mu *= 2.0;
    }
    debug!("regularization exhausted, steepest descent");
    Direction {
        d: grad.iter().map(|&x| -x).collect(),
        lin_iters,
        kind: DirectionKind::SteepestDescent,
    }
}

/// Solves one smoothed subproblem at `r0.eps()` starting from `r0`.
pub fn solve_subproblem<T: Scalar>(p: &MpecProblem<T>, r0: KktPoint<T>, cfg: &NewtonConfig) -> Result<NewtonOutcome<T>> {
    cfg.validate()?;
    let f_tol = T::lit(cfg.f_tol);
    let warm = r0.v().clone();
    let mut r = r0;
    let mut op = KktOperator::new(p, &r)?;
    let mut f = op.residual();
    let mut norm_f = norm2(&f);
    let mut trace = NewtonTrace::default();
    trace.records.push(NewtonRecord {
        k: 0,
        norm_f: norm_f.as_f64(),
        step: 0.0,
        lin_iters: 0,
        backtracks: 0,
        direction: None,
    });

    let mut status = NewtonStatus::MaxIters;
    for k in 1..=cfg.max_iters {
        if norm_f <= f_tol {
            status = NewtonStatus::Converged;
            break;
        }
        let grad = op.merit_grad_from(&f);
        let dir = newton_direction(&op, &f, &grad, cfg);
        let g0 = T::lit(0.5) * norm_f * norm_f;
        let gd = dot(&grad, &dir.d);

        let mut candidate = None;
        let search = armijo_search(
            |s| {
                let trial = r.stepped(s, &dir.d);
                match KktOperator::new(p, &trial) {
                    Ok(o) => {
                        let ft = o.residual();
                        let g = T::lit(0.5) * dot(&ft, &ft);
                        candidate = Some((trial, o, ft));
                        g
                    }
                    Err(_) => T::nan(),
                }
            },
            g0,
            gd,
            cfg,
        );
        let accepted = match search {
            Ok(a) => a,
            Err(e) => {
                debug!("line search failed at k={k}: {e:?}, |F|={norm_f}");
                status = NewtonStatus::LineSearchFailure;
                break;
            }
        };
        let (nr, nop, nf) = candidate.expect("merit evaluated at least once");
        r = nr;
        op = nop;
        f = nf;
        norm_f = norm2(&f);
        trace!("k={k} |F|={:e} s={} lin={} bt={}", norm_f.as_f64(), accepted.step, dir.lin_iters, accepted.backtracks);
        trace.records.push(NewtonRecord {
            k,
            norm_f: norm_f.as_f64(),
            step: accepted.step.as_f64(),
            lin_iters: dir.lin_iters,
            backtracks: accepted.backtracks,
            direction: Some(dir.kind),
        });
        if norm_f > f_tol && k >= cfg.stall_window {
            let earlier = trace.records[k - cfg.stall_window].norm_f;
            if !(norm_f.as_f64() < 0.99 * earlier) {
                debug!("stalled at k={k}: |F|={norm_f} vs {earlier:e}");
                status = NewtonStatus::Stagnated;
                break;
            }
        }
    }
    if status == NewtonStatus::MaxIters && norm_f <= f_tol {
        status = NewtonStatus::Converged;
    }
    if status != NewtonStatus::Converged && cfg.reduced_fallback {
        let start = if r.v().c() > T::zero() { r.v() } else { &warm };
        if start.c() > T::zero() {
            debug!("newton {status:?} at |F|={:e}, switching to reduced descent", norm_f.as_f64());
            let red = reduced_descent(p, start, r.eps(), cfg, trace.records.len())?;
            trace.records.extend(red.records);
            if red.norm_f < norm_f || !(r.v().c() > T::zero()) {
                r = red.point;
                status = red.status;
                norm_f = red.norm_f;
            } else {
                // keep the Newton iterate, but the trace must end on it
                let last = *trace.records.last().expect("nonempty");
                trace.records.push(NewtonRecord {
                    k: last.k + 1,
                    norm_f: norm_f.as_f64(),
                    step: 0.0,
                    lin_iters: 0,
                    backtracks: 0,
                    direction: None,
                });
            }
        }
    }
    Ok(NewtonOutcome {
        point: r,
        trace,
        status,
        norm_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn armijo_accepts_full_step_on_quadratic() {
        // g(t) = ½(1 − t)², d = 1, ∇g·d = −1
        let cfg = NewtonConfig::default();
        let a = armijo_search(|s: f64| 0.5 * (1.0 - s) * (1.0 - s), 0.5, -1.0, &cfg).unwrap();
        assert_eq!(a.step, 1.0);
        assert_eq!(a.backtracks, 0);
        assert_eq!(a.merit, 0.0);
    }

    #[test]
    fn armijo_rejects_ascent() {
        let cfg = NewtonConfig::default();
        assert_eq!(armijo_search(|s: f64| s, 0.0, 0.0, &cfg), Err(ArmijoError::NotDescent));
        assert_eq!(armijo_search(|s: f64| s, 0.0, 1.0, &cfg), Err(ArmijoError::NotDescent));
    }

    #[test]
    fn armijo_backtracks() {
        // overshooting direction: g(s) = ½(1 − 4s)², ∇g·d = −4
        let cfg = NewtonConfig::default();
        let a = armijo_search(|s: f64| 0.5 * (1.0 - 4.0 * s).powi(2), 0.5, -4.0, &cfg).unwrap();
        assert_eq!(a.backtracks, 2);
        assert_eq!(a.step, 0.25);
    }

    #[test]
    fn armijo_gives_up() {
        let cfg = NewtonConfig {
            max_backtracks: 3,
            ..NewtonConfig::default()
        };
        let r = armijo_search(|_s: f64| 1.0, 0.5, -1.0, &cfg);
        assert_eq!(r, Err(ArmijoError::TooManyBacktracks));
    }

    #[test]
    fn tolerance_tightening() {
        let c = NewtonConfig::default();
        assert_eq!(c.for_eps(1.0).f_tol, 1e-8);
        assert!((c.for_eps(1e-4).f_tol - 1e-10).abs() < 1e-24);
    }

    #[test]
    fn config_ranges() {
        assert!(NewtonConfig::default().validate().is_ok());
        for bad in [
            NewtonConfig { sigma: 0.5, ..Default::default() },
            NewtonConfig { rho: 1.0, ..Default::default() },
            NewtonConfig { f_tol: 0.0, ..Default::default() },
            NewtonConfig { max_iters: 0, ..Default::default() },
            NewtonConfig { reg_mu: 1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
