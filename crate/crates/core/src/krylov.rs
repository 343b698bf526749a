//! Krylov solvers over an abstract linear operator.

use serde::{Deserialize, Serialize};

use crate::linalg::{axpy, dot, norm2};
use crate::scalar::Scalar;

pub trait LinearOperator<T> {
    fn dim(&self) -> usize;
    /// y = A x
    fn apply(&self, x: &[T], y: &mut [T]);
}

/// Adapts a closure into a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T, F: Fn(&[T], &mut [T])> LinearOperator<T> for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[T], y: &mut [T]) {
        (self.f)(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Defaults to ten times the system dimension.
    pub max_iters: Option<usize>,
    pub breakdown_eps: f64,
    /// Stop once this many iterations pass without the residual dropping
    /// below 0.9 of the best value so far.
    pub stagnation_window: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_iters: None,
            breakdown_eps: 1e-30,
            stagnation_window: 200,
        }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.breakdown_eps > 0.0) {
            return Err("Krylov tolerances must be positive".into());
        }
        if self.max_iters == Some(0) {
            return Err("Krylov max_iters must be at least 1".into());
        }
        if self.stagnation_window == 0 {
            return Err("Krylov stagnation window must be at least 1".into());
        }
        Ok(())
    }

    fn iteration_cap(&self, dim: usize) -> usize {
        self.max_iters.unwrap_or(10 * dim.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KrylovStatus {
    Converged,
    MaxIters,
    Breakdown,
    Stagnated,
}

#[derive(Debug, Clone)]
pub struct KrylovResult<T> {
    pub x: Vec<T>,
    /// `‖A x − b‖` recomputed from scratch for the returned iterate.
    pub residual_norm: T,
    pub iterations: usize,
    pub status: KrylovStatus,
}

fn true_residual<T: Scalar, A: LinearOperator<T> + ?Sized>(a: &A, b: &[T], x: &[T], r: &mut [T]) -> T {
    a.apply(x, r);
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm2(r)
}

/// Diagonal scaling `y = d ∘ x`, typically holding an inverse diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagonal<T>(pub Vec<T>);

impl<T: Scalar> LinearOperator<T> for Diagonal<T> {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn apply(&self, x: &[T], y: &mut [T]) {
        for ((yi, &xi), &di) in y.iter_mut().zip(x).zip(&self.0) {
            *yi = xi * di;
        }
    }
}

/// BiCGStab with shadow residual `r̂ = r₀` and an optional right
/// preconditioner `M⁻¹`.
///
/// Recursive residuals are re-checked against the true residual before
/// declaring convergence; a drifted iteration restarts from the current iterate.
/// On breakdown or when the iteration budget runs out, the iterate with the
/// smallest true residual seen at a restart boundary or the final one is returned.
pub fn bicgstab<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    b: &[T],
    x0: &[T],
    precond: Option<&dyn LinearOperator<T>>,
    cfg: &KrylovConfig,
) -> KrylovResult<T> {
    let n = a.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x0.len(), n);
    let max_iters = cfg.iteration_cap(n);
    let bnorm = norm2(b);
    let target = (T::lit(cfg.rel_tol) * bnorm).max(T::lit(cfg.abs_tol));
    let brk = T::lit(cfg.breakdown_eps);

    let precond = |x: &[T], out: &mut [T]| match precond {
        Some(m) => m.apply(x, out),
        None => out.copy_from_slice(x),
    };

    let mut x = x0.to_vec();
    let mut r = vec![T::zero(); n];
    let mut rnorm = true_residual(a, b, &x, &mut r);
    let mut best_x = x.clone();
    let mut best_norm = rnorm;
    if rnorm <= target {
        return KrylovResult {
            x,
            residual_norm: rnorm,
            iterations: 0,
            status: KrylovStatus::Converged,
        };
    }

    let mut r_hat = r.clone();
    let mut p = vec![T::zero(); n];
    let mut v = vec![T::zero(); n];
    let mut p_hat = vec![T::zero(); n];
    let mut s_hat = vec![T::zero(); n];
    let mut t = vec![T::zero(); n];
    let (mut rho_prev, mut alpha, mut omega) = (T::one(), T::one(), T::one());
    let mut fresh = true;
    let mut iters = 0;
    let mut status = KrylovStatus::MaxIters;
    let (mut watch, mut watch_iter) = (rnorm, 0);

    while iters < max_iters {
        iters += 1;
        if iters - watch_iter > cfg.stagnation_window {
            status = KrylovStatus::Stagnated;
            break;
        }
        let rho = dot(&r_hat, &r);
        if rho.abs() < brk {
            status = KrylovStatus::Breakdown;
            break;
        }
        if fresh {
            p.copy_from_slice(&r);
            fresh = false;
        } else {
            let beta = (rho / rho_prev) * (alpha / omega);
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
        }
        precond(&p, &mut p_hat);
        a.apply(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom.abs() < brk {
            status = KrylovStatus::Breakdown;
            break;
        }
        alpha = rho / denom;
        axpy(alpha, &p_hat, &mut x);
        // r now holds s = r − α v
        axpy(-alpha, &v, &mut r);
        let snorm = norm2(&r);
        if snorm <= target {
            rnorm = true_residual(a, b, &x, &mut r);
            if rnorm <= target {
                status = KrylovStatus::Converged;
                break;
            }
            restart(&r, &mut r_hat, &mut fresh, rnorm, &x, &mut best_norm, &mut best_x);
            continue;
        }
        precond(&r, &mut s_hat);
        a.apply(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt < brk {
            status = KrylovStatus::Breakdown;
            break;
        }
        omega = dot(&t, &r) / tt;
        axpy(omega, &s_hat, &mut x);
        axpy(-omega, &t, &mut r);
        rho_prev = rho;
        let rn = norm2(&r);
        if rn <= target {
            rnorm = true_residual(a, b, &x, &mut r);
            if rnorm <= target {
                status = KrylovStatus::Converged;
                break;
            }
            restart(&r, &mut r_hat, &mut fresh, rnorm, &x, &mut best_norm, &mut best_x);
            continue;
        }
        if omega.abs() < brk {
            status = KrylovStatus::Breakdown;
            break;
        }
        if !rn.is_finite() {
            status = KrylovStatus::Breakdown;
            break;
        }
        if rn < T::lit(0.9) * watch {
            watch = rn;
            watch_iter = iters;
        }
    }

    if status != KrylovStatus::Converged {
        rnorm = true_residual(a, b, &x, &mut r);
        if !(rnorm <= best_norm) {
            x = best_x;
            rnorm = best_norm;
        }
    }
    KrylovResult {
        x,
        residual_norm: rnorm,
        iterations: iters,
        status,
    }
}

fn restart<T: Scalar>(
    r: &[T],
    r_hat: &mut [T],
    fresh: &mut bool,
    rnorm: T,
    x: &[T],
    best_norm: &mut T,
    best_x: &mut Vec<T>,
) {
    r_hat.copy_from_slice(r);
    *fresh = true;
    if rnorm < *best_norm {
        *best_norm = rnorm;
        best_x.copy_from_slice(x);
    }
}

/// Conjugate gradients for symmetric positive definite operators.
pub fn conjugate_gradient<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    b: &[T],
    x0: &[T],
    cfg: &KrylovConfig,
) -> KrylovResult<T> {
    let n = a.dim();
    let max_iters = cfg.iteration_cap(n);
    let target = (T::lit(cfg.rel_tol) * norm2(b)).max(T::lit(cfg.abs_tol));
    let mut x = x0.to_vec();
    let mut r = vec![T::zero(); n];
    let mut rnorm = true_residual(a, b, &x, &mut r);
    let mut p = r.clone();
    let mut ap = vec![T::zero(); n];
    let mut rr = dot(&r, &r);
    let mut iters = 0;
    let mut status = KrylovStatus::MaxIters;
    if rnorm <= target {
        status = KrylovStatus::Converged;
    }
    while status != KrylovStatus::Converged && iters < max_iters {
        iters += 1;
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::lit(cfg.breakdown_eps)) {
            status = KrylovStatus::Breakdown;
            break;
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            rnorm = true_residual(a, b, &x, &mut r);
            if rnorm <= target {
                status = KrylovStatus::Converged;
                break;
            }
            p.copy_from_slice(&r);
            rr = dot(&r, &r);
            continue;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if status != KrylovStatus::Converged {
        rnorm = true_residual(a, b, &x, &mut r);
    }
    KrylovResult {
        x,
        residual_norm: rnorm,
        iterations: iters,
        status,
    }
}

/// Inverse of a diagonal for Jacobi preconditioning; entries with magnitude
/// below `floor` are replaced by one.
pub fn jacobi_inverse<T: Scalar>(diag: &[T], floor: T) -> Vec<T> {
    diag.iter()
        .map(|&d| if d.abs() > floor { T::one() / d } else { T::one() })
        .collect()
}
