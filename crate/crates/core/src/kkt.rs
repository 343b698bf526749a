//! Smoothed KKT system of the subproblem `min f(v) s.t. Φ_ε(G(v), H(v)) = 0`.
//!
//! With `L_ε(v, λ) = f(v) − λᵀΦ_ε` the residual is
//! `F_ε(v, λ) = (∇f − J_vΦᵀλ; −Φ_ε)` and its Jacobian is the symmetric
//! saddle-point operator `[∇²_vv L, −J_vΦᵀ; −J_vΦ, 0]`. Everything is applied
//! matrix-free on top of [`MpecProblem`].

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::krylov::{conjugate_gradient, FnOperator, KrylovConfig};
use crate::linalg::{dot, norm2, scale};
use crate::nullspace::NullspaceSolver;
use crate::problem::{MpecProblem, PrimalPoint};
use crate::scalar::Scalar;
use crate::smoothing::{curvature_from_weights, fb_value, fb_weights, CurvatureCoeffs, SmoothingWeights};
use crate::sparse::CsrMatrix;

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn next_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

/// `r = (v, λ)` together with the smoothing parameter it is evaluated at.
///
/// Every mutation stamps a fresh revision so that operators linearized at an
/// older state can be detected.
#[derive(Debug, Clone)]
pub struct KktPoint<T> {
    v: PrimalPoint<T>,
    lambda: Vec<T>,
    eps: T,
    revision: u64,
}

impl<T: Scalar> PartialEq for KktPoint<T> {
    fn eq(&self, other: &Self) -> bool {
        self.v == other.v && self.lambda == other.lambda && self.eps == other.eps
    }
}

impl<T: Scalar> KktPoint<T> {
    pub fn new(v: PrimalPoint<T>, lambda: Vec<T>, eps: T) -> Result<Self> {
        check_len("multiplier", v.len() - 1, lambda.len())?;
        Ok(Self {
            v,
            lambda,
            eps,
            revision: next_revision(),
        })
    }

    /// Splits a flat `(v; λ)` vector of length `2m + 1`.
    pub fn from_flat(p: &MpecProblem<T>, flat: &[T], eps: T) -> Result<Self> {
        check_len("kkt point", 2 * p.m() + 1, flat.len())?;
        let v = p.point(flat[..p.n_vars()].to_vec())?;
        Self::new(v, flat[p.n_vars()..].to_vec(), eps)
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(self.v.as_slice());
        out.extend_from_slice(&self.lambda);
        out
    }

    pub fn len(&self) -> usize {
        self.v.len() + self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn v(&self) -> &PrimalPoint<T> {
        &self.v
    }
    pub fn lambda(&self) -> &[T] {
        &self.lambda
    }
    pub fn eps(&self) -> T {
        self.eps
    }
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn v_mut(&mut self) -> &mut PrimalPoint<T> {
        self.revision = next_revision();
        &mut self.v
    }
    pub fn lambda_mut(&mut self) -> &mut [T] {
        self.revision = next_revision();
        &mut self.lambda
    }
    pub fn set_eps(&mut self, eps: T) {
        self.revision = next_revision();
        self.eps = eps;
    }

    /// `self + step·d` for a flat direction `d`.
    pub fn stepped(&self, step: T, d: &[T]) -> Self {
        let mut out = self.clone();
        out.revision = next_revision();
        let nv = self.v.len();
        for (x, &di) in out.v.as_mut_slice().iter_mut().zip(&d[..nv]) {
            *x += step * di;
        }
        for (x, &di) in out.lambda.iter_mut().zip(&d[nv..]) {
            *x += step * di;
        }
        out
    }
}

/// `J_vΦ_ε = W^G L^G + W^H L^H` at a fixed `v`, applied through the problem's
/// block operators.
#[derive(Debug, Clone)]
pub struct PhiJacobian<'p, T> {
    problem: &'p MpecProblem<T>,
    pub g: Vec<T>,
    pub h: Vec<T>,
    pub weights: SmoothingWeights<T>,
}

impl<'p, T: Scalar> PhiJacobian<'p, T> {
    pub fn new(problem: &'p MpecProblem<T>, v: &PrimalPoint<T>, eps: T) -> Result<Self> {
        if !(eps > T::zero()) {
            return Err(Error::Config(format!("smoothing parameter must be positive, got {eps}")));
        }
        let g = problem.eval_g(v)?;
        let h = problem.eval_h(v)?;
        let weights = fb_weights(&g, &h, eps);
        Ok(Self { problem, g, h, weights })
    }

    pub fn problem(&self) -> &'p MpecProblem<T> {
        self.problem
    }

    /// `Φ_ε(G(v), H(v))`
    pub fn phi(&self) -> Vec<T> {
        let eps = self.weights.eps;
        self.g.iter().zip(&self.h).map(|(&a, &b)| fb_value(a, b, eps)).collect()
    }

    /// `J_vΦ d = W^G (L^G d) + W^H (L^H d)`.
    pub fn apply(&self, d: &[T]) -> Vec<T> {
        let gd = self.problem.lg_apply(d);
        let hd = self.problem.lh_apply(d);
        gd.iter()
            .zip(&hd)
            .zip(self.weights.wg.iter().zip(&self.weights.wh))
            .map(|((&a, &b), (&wg, &wh))| wg * a + wh * b)
            .collect()
    }

    /// `J_vΦᵀ μ = (L^G)ᵀ(W^G μ) + (L^H)ᵀ(W^H μ)`.
    pub fn apply_t(&self, mu: &[T]) -> Vec<T> {
        let ug: Vec<T> = mu.iter().zip(&self.weights.wg).map(|(&a, &w)| a * w).collect();
        let uh: Vec<T> = mu.iter().zip(&self.weights.wh).map(|(&a, &w)| a * w).collect();
        let mut out = self.problem.lg_t_apply(&ug);
        for (o, x) in out.iter_mut().zip(self.problem.lh_t_apply(&uh)) {
            *o += x;
        }
        out
    }

    /// Explicit sparse `J_vΦ`, built from the explicit `L^G`, `L^H`.
    pub fn explicit(&self) -> CsrMatrix<T> {
        let lg = self.problem.explicit_lg();
        let lh = self.problem.explicit_lh();
        let rows: Vec<Vec<(usize, T)>> = (0..self.problem.m())
            .map(|i| {
                let mut row: Vec<(usize, T)> = lg
                    .row(i)
                    .map(|(j, v)| (j, v * self.weights.wg[i]))
                    .chain(lh.row(i).map(|(j, v)| (j, v * self.weights.wh[i])))
                    .collect();
                row.sort_by_key(|e| e.0);
                let mut merged: Vec<(usize, T)> = Vec::with_capacity(row.len());
                for (j, v) in row {
                    match merged.last_mut() {
                        Some(last) if last.0 == j => last.1 += v,
                        _ => merged.push((j, v)),
                    }
                }
                merged
            })
            .collect();
        CsrMatrix::from_rows(self.problem.n_vars(), rows.iter().map(Vec::as_slice))
    }
}

/// Linearization of `F_ε` at a point: cached weights and curvature.
#[derive(Debug, Clone)]
pub struct KktOperator<'p, T> {
    jac: PhiJacobian<'p, T>,
    curvature: CurvatureCoeffs<T>,
    lambda: Vec<T>,
    revision: u64,
}

impl<'p, T: Scalar> KktOperator<'p, T> {
    pub fn new(problem: &'p MpecProblem<T>, r: &KktPoint<T>) -> Result<Self> {
        check_len("multiplier", problem.m(), r.lambda.len())?;
        let jac = PhiJacobian::new(problem, &r.v, r.eps)?;
        let curvature = curvature_from_weights(&jac.g, &jac.h, &r.lambda, &jac.weights);
        Ok(Self {
            jac,
            curvature,
            lambda: r.lambda.clone(),
            revision: r.revision,
        })
    }

    pub fn problem(&self) -> &'p MpecProblem<T> {
        self.jac.problem
    }
    pub fn jacobian(&self) -> &PhiJacobian<'p, T> {
        &self.jac
    }
    pub fn weights(&self) -> &SmoothingWeights<T> {
        &self.jac.weights
    }
    pub fn curvature(&self) -> &CurvatureCoeffs<T> {
        &self.curvature
    }
    pub fn g(&self) -> &[T] {
        &self.jac.g
    }
    pub fn h(&self) -> &[T] {
        &self.jac.h
    }

    pub fn is_current(&self, r: &KktPoint<T>) -> bool {
        self.revision == r.revision
    }

    pub fn ensure_current(&self, r: &KktPoint<T>) -> Result<()> {
        if self.is_current(r) {
            Ok(())
        } else {
            Err(Error::StaleCache)
        }
    }

    /// Dimension of the full system, `2m + 1`.
    pub fn dim(&self) -> usize {
        2 * self.problem().m() + 1
    }

    /// `F_ε` at the linearization point.
    pub fn residual(&self) -> Vec<T> {
        let p = self.problem();
        let mut out = p.obj_grad();
        for (o, x) in out.iter_mut().zip(self.jac.apply_t(&self.lambda)) {
            *o -= x;
        }
        out.extend(self.jac.phi().into_iter().map(|x| -x));
        out
    }

    pub fn jac_v_phi_apply(&self, d: &[T]) -> Vec<T> {
        self.jac.apply(d)
    }

    /// `∇²_vv L_ε d` as `(L^G)ᵀ(M^G L^G d + M^{GH} L^H d) + (L^H)ᵀ(M^H L^H d + M^{GH} L^G d)`.
    pub fn hessian_apply(&self, d: &[T]) -> Vec<T> {
        let p = self.problem();
        let gd = p.lg_apply(d);
        let hd = p.lh_apply(d);
        let c = &self.curvature;
        let mut u = Vec::with_capacity(gd.len());
        let mut q = Vec::with_capacity(gd.len());
        for i in 0..gd.len() {
            u.push(c.mg[i] * gd[i] + c.mgh[i] * hd[i]);
            q.push(c.mh[i] * hd[i] + c.mgh[i] * gd[i]);
        }
        let mut out = p.lg_t_apply(&u);
        for (o, x) in out.iter_mut().zip(p.lh_t_apply(&q)) {
            *o += x;
        }
        out
    }

    /// `J_rF d = (∇²L d_v − J_vΦᵀ d_λ; −J_vΦ d_v)`.
    pub fn kkt_apply(&self, d: &[T]) -> Vec<T> {
        let nv = self.problem().n_vars();
        let (dv, dl) = d.split_at(nv);
        let mut top = self.hessian_apply(dv);
        for (o, x) in top.iter_mut().zip(self.jac.apply_t(dl)) {
            *o -= x;
        }
        top.extend(self.jac.apply(dv).into_iter().map(|x| -x));
        top
    }

    /// `∇g_ε = J_rFᵀ F = J_rF F` (the Jacobian is symmetric).
    pub fn merit_grad_from(&self, f: &[T]) -> Vec<T> {
        self.kkt_apply(f)
    }

    /// Diagonal of `J_rF`; zero on the multiplier block.
    pub fn diagonal(&self) -> Vec<T> {
        let p = self.problem();
        let c = &self.curvature;
        let (tm1, tm2) = (p.tm1(), p.tm2());
        let (b1, b2, b3, b4) = (p.block1().start, p.block2().start, p.block3().start, p.block4().start);
        let mut d = vec![T::zero(); self.dim()];
        d[0] = p.block4().map(|i| c.mh[i]).sum();
        for k in 0..tm1 {
            d[1 + k] = c.mg[b1 + k] + c.mh[b2 + k];
            d[1 + tm1 + k] = c.mg[b2 + k] + c.mh[b1 + k];
        }
        let (m1, m2) = (p.m1(), p.m2());
        for t in 0..p.n_folds() {
            let (a, b) = (p.a_block(t), p.b_block(t));
            let dense_b: Vec<Vec<T>> = (0..m2)
                .map(|j| {
                    let mut row = vec![T::zero(); p.n_features()];
                    b.row(j).for_each(|(c, v)| row[c] = v);
                    row
                })
                .collect();
            for j in 0..m2 {
                let k = t * m2 + j;
                let mut s = c.mg[b3 + k] + c.mh[b4 + k];
                for i in 0..m1 {
                    let e = a.row_dot(i, &dense_b[j]);
                    s += c.mh[b1 + t * m1 + i] * e * e;
                }
                for i in 0..m2 {
                    let e = b.row_dot(i, &dense_b[j]);
                    s += c.mh[b3 + t * m2 + i] * e * e;
                    if i == j {
                        s += T::lit(2.0) * c.mgh[b3 + k] * e;
                    }
                }
                d[1 + 2 * tm1 + k] = s;
            }
        }
        for k in 0..tm2 {
            d[1 + 2 * tm1 + tm2 + k] = c.mg[b4 + k] + c.mh[b3 + k];
        }
        d
    }
}

/// `F_ε(r)`, length `2m + 1`.
pub fn residual<T: Scalar>(p: &MpecProblem<T>, r: &KktPoint<T>) -> Result<Vec<T>> {
    check_len("multiplier", p.m(), r.lambda.len())?;
    let jac = PhiJacobian::new(p, &r.v, r.eps)?;
    let mut out = p.obj_grad();
    for (o, x) in out.iter_mut().zip(jac.apply_t(&r.lambda)) {
        *o -= x;
    }
    out.extend(jac.phi().into_iter().map(|x| -x));
    Ok(out)
}

/// `g_ε(r) = ½‖F_ε(r)‖²`.
pub fn merit<T: Scalar>(p: &MpecProblem<T>, r: &KktPoint<T>) -> Result<T> {
    let f = residual(p, r)?;
    Ok(T::lit(0.5) * dot(&f, &f))
}

pub fn merit_grad<T: Scalar>(p: &MpecProblem<T>, r: &KktPoint<T>) -> Result<Vec<T>> {
    let op = KktOperator::new(p, r)?;
    Ok(op.merit_grad_from(&op.residual()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LicqEstimate {
    /// Estimate of the smallest singular value of `J_vΦ`.
    pub sigma_min: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LicqConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for LicqConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-12,
            seed: 0,
        }
    }
}

/// Smallest singular value of `J_vΦ` by inverse power iteration on `J Jᵀ`.
/// With `J = J_y [g | I]`, `g = J_y⁻¹ j_C`, each inner system is solved as
/// `J_y⁻ᵀ (I − g gᵀ/(1 + gᵀg)) J_y⁻¹ x`; conjugate gradients are the fallback
/// when `J_y` cannot be factored.
pub fn licq_probe<T: Scalar>(p: &MpecProblem<T>, v: &PrimalPoint<T>, eps: T, cfg: &LicqConfig) -> Result<LicqEstimate> {
    let jac = PhiJacobian::new(p, v, eps)?;
    let m = p.m();
    let jjt = FnOperator::new(m, |x: &[T], y: &mut [T]| {
        let z = jac.apply(&jac.apply_t(x));
        y.copy_from_slice(&z);
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x: Vec<T> = (0..m).map(|_| T::lit(rng.gen_range(0.5..1.5))).collect();
    let nx = norm2(&x);
    scale(T::one() / nx, &mut x);

    let inner = KrylovConfig {
        rel_tol: 1e-14,
        abs_tol: 1e-300,
        max_iters: Some(20 * m),
        breakdown_eps: 1e-300,
        stagnation_window: 20 * m,
    };
    let r = KktPoint::new(v.clone(), vec![T::zero(); m], eps)?;
    let op = KktOperator::new(p, &r)?;
    let structured = NullspaceSolver::new(&op).ok();
    let g: Vec<T> = structured
        .as_ref()
        .map(|s| s.null_direction()[1..].iter().map(|&z| -z).collect())
        .unwrap_or_default();
    let gg = T::one() + dot(&g, &g);
    let solve = |x: &[T]| -> Vec<T> {
        match &structured {
            Some(s) => {
                let mut u = s.solve_jy(x);
                let c = dot(&g, &u) / gg;
                u.iter_mut().zip(&g).for_each(|(ui, &gi)| *ui -= c * gi);
                s.solve_jy_t(&u)
            }
            None => conjugate_gradient(&jjt, x, x, &inner).x,
        }
    };

    let tol = T::lit(cfg.tol);
    let mut theta_prev = T::infinity();
    let mut theta = T::zero();
    for it in 1..=cfg.max_iters {
        let mut y = solve(&x);
        let ny = norm2(&y);
        if !(ny > T::zero()) || !ny.is_finite() {
            break;
        }
        scale(T::one() / ny, &mut y);
        x = y;
        // Rayleigh quotient xᵀ J Jᵀ x = ‖Jᵀx‖²
        let jt = jac.apply_t(&x);
        theta = dot(&jt, &jt);
        if (theta - theta_prev).abs() <= tol * theta {
            return Ok(LicqEstimate {
                sigma_min: theta.sqrt().as_f64(),
                iterations: it,
                converged: true,
            });
        }
        theta_prev = theta;
    }
    Ok(LicqEstimate {
        sigma_min: theta.sqrt().as_f64(),
        iterations: cfg.max_iters,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{make_split, parse_libsvm_str};
    use crate::linalg::{norm_inf, sub};
    use crate::problem::assemble;
    use crate::smoothing::fb_value;

    fn small() -> MpecProblem<f64> {
        let text = "+1 1:0.5 2:-1\n-1 1:1 3:0.25\n+1 2:2\n-1 1:-0.5 3:1\n+1 1:0.3 2:0.1 3:0.2\n-1 3:-2\n";
        let ds = parse_libsvm_str(text).unwrap();
        let plan = make_split(&ds, 6, 3, 7).unwrap();
        assemble(&ds, &plan).unwrap()
    }

    fn random_r(p: &MpecProblem<f64>, seed: u64, eps: f64) -> KktPoint<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat: Vec<f64> = (0..2 * p.m() + 1).map(|_| rng.gen_range(0.05..1.0)).collect();
        KktPoint::from_flat(p, &flat, eps).unwrap()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        norm2(&sub(a, b)) / norm2(b).max(1e-300)
    }

    #[test]
    fn residual_at_feasible_point_with_zero_multiplier() {
        let p = small();
        let eps = 0.3;
        let mut r = random_r(&p, 1, eps);
        r.lambda_mut().iter_mut().for_each(|x| *x = 0.0);
        let f = residual(&p, &r).unwrap();
        assert_eq!(f.len(), 2 * p.m() + 1);
        assert_eq!(&f[..p.n_vars()], p.obj_grad().as_slice());
        let g = p.eval_g(r.v()).unwrap();
        let h = p.eval_h(r.v()).unwrap();
        for i in 0..p.m() {
            assert_eq!(f[p.n_vars() + i], -fb_value(g[i], h[i], eps));
        }
        let grad_norm = norm2(&p.obj_grad());
        assert!((grad_norm - 1.0 / (p.tm1() as f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_point_residual_tail() {
        let p = small();
        let r = KktPoint::new(p.zero_point(), vec![0.0; p.m()], 0.5).unwrap();
        let f = residual(&p, &r).unwrap();
        let bh = p.b_h();
        for i in 0..p.m() {
            assert_eq!(f[p.n_vars() + i], -fb_value(0.0, bh[i], 0.5));
        }
    }

    #[test]
    fn block_structure_of_jacobian() {
        let p = small();
        let r = random_r(&p, 3, 0.2);
        let op = KktOperator::new(&p, &r).unwrap();
        let mut e = vec![0.0; p.n_vars()];
        e[0] = 1.0;
        let out = op.jac_v_phi_apply(&e);
        for i in 0..p.m() {
            if p.block4().contains(&i) {
                assert_eq!(out[i], op.weights().wh[i]);
            } else {
                assert_eq!(out[i], 0.0);
            }
        }
        assert!(op.jac_v_phi_apply(&vec![0.0; p.n_vars()]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn explicit_jacobian_agrees() {
        let p = small();
        let r = random_r(&p, 4, 0.7);
        let op = KktOperator::new(&p, &r).unwrap();
        let j = op.jacobian().explicit();
        let d: Vec<f64> = random_r(&p, 5, 1.0).to_flat()[..p.n_vars()].to_vec();
        assert!(rel(&op.jac_v_phi_apply(&d), &j.matvec(&d)) < 1e-13);
        let mu: Vec<f64> = d[1..].to_vec();
        assert!(rel(&op.jacobian().apply_t(&mu), &j.tmatvec(&mu)) < 1e-13);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = small();
        for (seed, eps) in [(10u64, 1.0), (11, 1e-2), (12, 1e-4)] {
            let r = random_r(&p, seed, eps);
            let op = KktOperator::new(&p, &r).unwrap();
            let d = random_r(&p, seed + 50, eps).to_flat();
            let h = 1e-6 * (1.0 + norm2(&r.to_flat()));

            let fp = residual(&p, &r.stepped(h, &d)).unwrap();
            let fm = residual(&p, &r.stepped(-h, &d)).unwrap();
            let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            assert!(rel(&op.kkt_apply(&d), &fd) < 1e-6, "kkt eps={eps}");

            let nv = p.n_vars();
            let mut dv = d.clone();
            dv[nv..].iter_mut().for_each(|x| *x = 0.0);
            let fp = residual(&p, &r.stepped(h, &dv)).unwrap();
            let fm = residual(&p, &r.stepped(-h, &dv)).unwrap();
            let hess_fd: Vec<f64> = fp[..nv].iter().zip(&fm[..nv]).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            assert!(rel(&op.hessian_apply(&d[..nv]), &hess_fd) < 1e-5, "hess eps={eps}");
            let jac_fd: Vec<f64> = fp[nv..].iter().zip(&fm[nv..]).map(|(a, b)| -(a - b) / (2.0 * h)).collect();
            assert!(rel(&op.jac_v_phi_apply(&d[..nv]), &jac_fd) < 1e-6, "jac eps={eps}");

            let gp = merit(&p, &r.stepped(h, &d)).unwrap();
            let gm = merit(&p, &r.stepped(-h, &d)).unwrap();
            let dd = dot(&merit_grad(&p, &r).unwrap(), &d);
            assert!(((gp - gm) / (2.0 * h) - dd).abs() <= 1e-6 * dd.abs().max(1e-12), "merit eps={eps}");
        }
    }

    #[test]
    fn operator_is_symmetric() {
        let p = small();
        let r = random_r(&p, 20, 0.05);
        let op = KktOperator::new(&p, &r).unwrap();
        let d = random_r(&p, 21, 1.0).to_flat();
        let e = random_r(&p, 22, 1.0).to_flat();
        let (a, b) = (dot(&e, &op.kkt_apply(&d)), dot(&d, &op.kkt_apply(&e)));
        assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
        let nv = p.n_vars();
        let (a, b) = (dot(&e[..nv], &op.hessian_apply(&d[..nv])), dot(&d[..nv], &op.hessian_apply(&e[..nv])));
        assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
    }

    #[test]
    fn hessian_vanishes_without_multipliers() {
        let p = small();
        let mut r = random_r(&p, 30, 0.5);
        r.lambda_mut().iter_mut().for_each(|x| *x = 0.0);
        let op = KktOperator::new(&p, &r).unwrap();
        let d = random_r(&p, 31, 1.0).to_flat();
        assert!(op.hessian_apply(&d[..p.n_vars()]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn diagonal_matches_unit_vector_probes() {
        let p = small();
        let r = random_r(&p, 40, 0.3);
        let op = KktOperator::new(&p, &r).unwrap();
        let diag = op.diagonal();
        let n = op.dim();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = op.kkt_apply(&e);
            assert!((col[j] - diag[j]).abs() <= 1e-12 * (1.0 + diag[j].abs()), "j={j}");
        }
    }

    #[test]
    fn merit_is_zero_exactly_when_residual_is() {
        let p = small();
        let r = random_r(&p, 50, 0.5);
        assert!(merit(&p, &r).unwrap() > 0.0);
    }

    #[test]
    fn stale_cache_detected() {
        let p = small();
        let mut r = random_r(&p, 60, 0.5);
        let op = KktOperator::new(&p, &r).unwrap();
        assert!(op.ensure_current(&r).is_ok());
        r.lambda_mut()[0] += 1.0;
        assert!(matches!(op.ensure_current(&r), Err(Error::StaleCache)));
        let stepped = r.stepped(0.0, &vec![0.0; r.len()]);
        assert!(!op.is_current(&stepped));
    }

    #[test]
    fn licq_probe_against_dense_svd() {
        let p = small();
        assert!(p.m() <= 40);
        for (seed, eps) in [(70u64, 1.0), (71, 1e-2), (72, 10.0)] {
            let r = random_r(&p, seed, eps);
            let est = licq_probe(&p, r.v(), eps, &LicqConfig::default()).unwrap();
            let j = PhiJacobian::new(&p, r.v(), eps).unwrap().explicit();
            let dense = nalgebra::DMatrix::from_row_slice(j.nrows(), j.ncols(), &j.to_dense());
            let sv = dense.singular_values();
            let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(est.sigma_min > 0.0);
            assert!((est.sigma_min - smin).abs() <= 1e-6 * smin.max(1e-12) || (est.sigma_min - smin).abs() <= 1e-6,
                "est {} dense {smin}", est.sigma_min);
        }
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let p = small();
        let r = random_r(&p, 80, 0.0);
        assert!(KktOperator::new(&p, &r).is_err());
        assert!(norm_inf(&p.obj_grad()) > 0.0);
    }
}
