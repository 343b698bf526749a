//! Safeguard for a smoothed subproblem on which the Newton iteration fails.
//!
//! For fixed `C > 0` the constraints `Φ_ε(C, y) = 0` have exactly one
//! solution `y_ε(C)`: each fold is a smoothed monotone complementarity
//! system. The subproblem is therefore the scalar problem
//! `min_{C > 0} f(C, y_ε(C))`. With `λ` solving `J_yᵀλ = ∇_y f` every
//! component of `F_ε` except the first vanishes, the first is the derivative
//! of the reduced objective and `Zᵀ∇²L Z` is its second derivative.

use log::{debug, trace};

use crate::error::Result;
use crate::kkt::{KktOperator, KktPoint, PhiJacobian};
use crate::linalg::norm2;
use crate::newton::{DirectionKind, NewtonConfig, NewtonRecord, NewtonStatus};
use crate::nullspace::NullspaceSolver;
use crate::problem::{MpecProblem, PrimalPoint};
use crate::scalar::Scalar;

/// Largest factor by which one reduced step may change `C`.
const MAX_C_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Restored {
    pub phi_norm: f64,
    pub iters: usize,
}

/// Damped Newton on `½‖Φ_ε(C, ·)‖²` with `C` held fixed. Stops at
/// `‖Φ‖ ≤ tol`, after `max_iters` steps, or when no decrease is possible.
pub fn restore<T: Scalar>(
    p: &MpecProblem<T>,
    v: &mut PrimalPoint<T>,
    eps: T,
    tol: T,
    max_iters: usize,
) -> Result<Restored> {
    let mut phi = PhiJacobian::new(p, v, eps)?.phi();
    let mut n0 = norm2(&phi);
    let mut iters = 0;
    while n0 > tol && iters < max_iters {
        iters += 1;
        let r = KktPoint::new(v.clone(), vec![T::zero(); p.m()], eps)?;
        let op = KktOperator::new(p, &r)?;
        let dy = NullspaceSolver::new(&op)?.solve_jy(&phi);
        let mut step = T::one();
        let mut moved = false;
        for _ in 0..40 {
            let mut t = v.clone();
            for (x, &d) in t.as_mut_slice()[1..].iter_mut().zip(&dy) {
                *x -= step * d;
            }
            let tphi = PhiJacobian::new(p, &t, eps)?.phi();
            let n1 = norm2(&tphi);
            if n1.is_finite() && n1 <= (T::one() - T::lit(1e-4) * step) * n0 {
                *v = t;
                phi = tphi;
                n0 = n1;
                moved = true;
                break;
            }
            step *= T::lit(0.5);
        }
        if !moved {
            break;
        }
    }
    Ok(Restored {
        phi_norm: n0.as_f64(),
        iters,
    })
}

/// `(v, λ)` with `λ = J_y⁻ᵀ ∇_y f`.
pub fn with_adjoint<T: Scalar>(p: &MpecProblem<T>, v: PrimalPoint<T>, eps: T) -> Result<KktPoint<T>> {
    let r = KktPoint::new(v, vec![T::zero(); p.m()], eps)?;
    let op = KktOperator::new(p, &r)?;
    let lambda = NullspaceSolver::new(&op)?.solve_jy_t(&p.obj_grad()[1..]);
    let v = r.v().clone();
    KktPoint::new(v, lambda, eps)
}

#[derive(Debug, Clone)]
pub struct ReducedOutcome<T> {
    pub point: KktPoint<T>,
    pub records: Vec<NewtonRecord>,
    pub status: NewtonStatus,
    pub norm_f: T,
}

/// Descent on the reduced objective from `start`, which needs `C > 0`.
/// Uses the Newton step `−f'/f''` when the curvature is positive, otherwise a
/// move of `C` by the largest allowed factor downhill, backtracked with the
/// Armijo rule of `cfg`. Records are numbered from `k0`.
pub fn reduced_descent<T: Scalar>(
    p: &MpecProblem<T>,
    start: &PrimalPoint<T>,
    eps: T,
    cfg: &NewtonConfig,
    k0: usize,
) -> Result<ReducedOutcome<T>> {
    let f_tol = T::lit(cfg.f_tol);
    let restore_tol = T::lit(1e-2) * f_tol;
    let max_restore = 50;
    let mut v = start.clone();
    let first = restore(p, &mut v, eps, restore_tol, max_restore)?;
    let mut r = with_adjoint(p, v, eps)?;
    let mut op = KktOperator::new(p, &r)?;
    let mut f = op.residual();
    let mut norm_f = norm2(&f);
    let mut records = vec![NewtonRecord {
        k: k0,
        norm_f: norm_f.as_f64(),
        step: 0.0,
        lin_iters: first.iters,
        backtracks: 0,
        direction: Some(DirectionKind::Reduced),
    }];
    let mut status = NewtonStatus::MaxIters;
    for k in k0 + 1..=k0 + cfg.max_iters {
        if norm_f <= f_tol {
            status = NewtonStatus::Converged;
            break;
        }
        let ns = NullspaceSolver::new(&op)?;
        let (c, slope, curv) = (r.v().c(), f[0], ns.null_curvature());
        let (lo, hi) = (c / T::lit(MAX_C_FACTOR), c * T::lit(MAX_C_FACTOR));
        let target = if curv > T::zero() {
            c - slope / curv
        } else if slope > T::zero() {
            lo
        } else {
            hi
        };
        let dc = target.max(lo).min(hi) - c;
        let tangent: Vec<T> = ns.null_direction()[1..].to_vec();
        let f0 = p.objective(r.v());
        let gd = slope * dc;

        let mut step = T::one();
        let mut accepted = None;
        let mut restore_iters = 0;
        for bt in 0..=cfg.max_backtracks {
            let mut t = r.v().clone();
            t.set_c(c + step * dc);
            for (x, &z) in t.as_mut_slice()[1..].iter_mut().zip(&tangent) {
                *x += step * dc * z;
            }
            let rs = restore(p, &mut t, eps, restore_tol, max_restore)?;
            restore_iters += rs.iters;
            let ft = p.objective(&t);
            if rs.phi_norm <= 10.0 * restore_tol.as_f64().max(first.phi_norm)
                && ft <= f0 + T::lit(cfg.sigma) * step * gd
            {
                accepted = Some((t, bt));
                break;
            }
            step *= T::lit(cfg.rho);
        }
        let Some((nv, bt)) = accepted else {
            debug!("reduced step failed at k={k}, C={c}, f'={slope}");
            status = NewtonStatus::LineSearchFailure;
            break;
        };
        r = with_adjoint(p, nv, eps)?;
        op = KktOperator::new(p, &r)?;
        f = op.residual();
        norm_f = norm2(&f);
        trace!("reduced k={k} C={} |F|={:e} s={}", r.v().c(), norm_f.as_f64(), step);
        records.push(NewtonRecord {
            k,
            norm_f: norm_f.as_f64(),
            step: step.as_f64(),
            lin_iters: restore_iters,
            backtracks: bt,
            direction: Some(DirectionKind::Reduced),
        });
        let j = records.len() - 1;
        if norm_f > f_tol && j >= cfg.stall_window && !(norm_f.as_f64() < 0.99 * records[j - cfg.stall_window].norm_f) {
            status = NewtonStatus::Stagnated;
            break;
        }
    }
    if status == NewtonStatus::MaxIters && norm_f <= f_tol {
        status = NewtonStatus::Converged;
    }
    Ok(ReducedOutcome {
        point: r,
        records,
        status,
        norm_f,
    })
}
