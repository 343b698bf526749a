//! Self-checks of the derivative code and structural invariants on a given
//! problem instance: finite differences, symmetry, LICQ and the zero set of
//! the smoothing function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diagnostics::dense_sigma_min;
use crate::error::Result;
use crate::kkt::{licq_probe, merit, merit_grad, residual, KktOperator, KktPoint, LicqConfig};
use crate::linalg::{dot, norm2, norm_inf};
use crate::problem::{MpecProblem, PrimalPoint};
use crate::scalar::Scalar;
use crate::smoothing::fb_value;

/// Uniform point in `[-scale, 1.5·scale]` for every primal and dual entry.
pub fn random_point<T: Scalar>(p: &MpecProblem<T>, seed: u64, eps: T, scale: f64) -> Result<KktPoint<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<T> = (0..p.n_vars() + p.m())
        .map(|_| T::lit(scale * rng.gen_range(-1.0..1.5)))
        .collect();
    KktPoint::from_flat(p, &flat, eps)
}

/// Primal point with `G(v) > 0` and `H(v) > 0` componentwise.
pub fn random_interior_point<T: Scalar>(p: &MpecProblem<T>, seed: u64) -> PrimalPoint<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| T::lit(rng.gen_range(lo..hi));
    let mut v = p.zero_point();
    let c = u(0.5, 2.0);
    v.set_c(c);
    for a in v.alpha_mut() {
        *a = c * u(0.05, 0.95);
    }
    for x in v.zeta_mut() {
        *x = u(0.05, 0.95);
    }
    let (abt, bbt) = p.apply_abt_bbt(v.alpha());
    let zs: Vec<T> = abt.iter().map(|&a| (-a).max(T::zero()) + u(0.05, 1.0)).collect();
    let xs: Vec<T> = bbt.iter().map(|&b| (T::one() - b).max(T::zero()) + u(0.05, 1.0)).collect();
    v.z_mut().copy_from_slice(&zs);
    v.xi_mut().copy_from_slice(&xs);
    v
}

/// Relative difference `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_diff<T: Scalar>(a: &[T], b: &[T], floor: f64) -> f64 {
    let d: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let scale = norm2(a).as_f64().max(norm2(b).as_f64()).max(floor);
    norm2(&d).as_f64() / scale
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub passed: bool,
}

impl CheckResult {
    fn at_most(name: &str, value: f64, tol: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            tol,
            passed: value <= tol,
        }
    }

    fn at_least(name: &str, value: f64, tol: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            tol,
            passed: value > tol,
        }
    }
}

/// Directional finite-difference errors at one point, all relative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdErrors {
    pub jacobian: f64,
    pub hessian: f64,
    pub kkt: f64,
    pub merit_grad: f64,
}

/// Richardson-extrapolated central differences along a random direction,
/// `(4 D(h/2) − D(h))/3` with `h = 1e-3·min(1, ε)/‖d‖∞`. The step is tied to
/// `ε` because the curvature of the smoothed terms grows like `1/ε`.
pub fn fd_errors<T: Scalar>(p: &MpecProblem<T>, r: &KktPoint<T>, dir_seed: u64) -> Result<FdErrors> {
    let op = KktOperator::new(p, r)?;
    let nv = p.n_vars();
    let mut rng = ChaCha8Rng::seed_from_u64(dir_seed);
    let d: Vec<T> = (0..op.dim()).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
    let h = T::lit(1e-3) * r.eps().min(T::one()) / norm_inf(&d);
    let half = T::lit(0.5) * h;
    let (four, three) = (T::lit(4.0), T::lit(3.0));
    let central = |dir: &[T]| -> Result<Vec<T>> {
        let diff = |s: T| -> Result<Vec<T>> {
            let fp = residual(p, &r.stepped(s, dir))?;
            let fm = residual(p, &r.stepped(-s, dir))?;
            Ok(fp.iter().zip(&fm).map(|(&a, &b)| (a - b) / (s + s)).collect())
        };
        let (coarse, fine) = (diff(h)?, diff(half)?);
        Ok(fine.iter().zip(&coarse).map(|(&f, &c)| (four * f - c) / three).collect())
    };

    let kkt = rel_diff(&op.kkt_apply(&d), &central(&d)?, 1e-300);

    let mut dv = d.clone();
    dv[nv..].iter_mut().for_each(|x| *x = T::zero());
    let fd = central(&dv)?;
    let hessian = rel_diff(&op.hessian_apply(&d[..nv]), &fd[..nv], 1e-300);
    let jac_fd: Vec<T> = fd[nv..].iter().map(|&x| -x).collect();
    let jacobian = rel_diff(&op.jac_v_phi_apply(&d[..nv]), &jac_fd, 1e-300);

    let merit_diff = |s: T| -> Result<T> { Ok((merit(p, &r.stepped(s, &d))? - merit(p, &r.stepped(-s, &d))?) / (s + s)) };
    let fd_dd = (four * merit_diff(half)? - merit_diff(h)?) / three;
    let dd = dot(&merit_grad(p, r)?, &d);
    let merit_err = (fd_dd - dd).abs().as_f64() / dd.abs().as_f64().max(1e-300);
    Ok(FdErrors {
        jacobian,
        hessian,
        kkt,
        merit_grad: merit_err,
    })
}

/// `|⟨e, K d⟩ − ⟨d, K e⟩| / max(|⟨e, K d⟩|, |⟨d, K e⟩|)` for the KKT operator `K`.
pub fn symmetry_error<T: Scalar>(p: &MpecProblem<T>, r: &KktPoint<T>, seed: u64) -> Result<f64> {
    let op = KktOperator::new(p, r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<T> { (0..op.dim()).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect() };
    let (d, e) = (draw(), draw());
    let a = dot(&e, &op.kkt_apply(&d)).as_f64();
    let b = dot(&d, &op.kkt_apply(&e)).as_f64();
    Ok((a - b).abs() / a.abs().max(b.abs()).max(1e-300))
}

#[derive(Debug, Clone, Copy)]
pub struct CheckConfig {
    pub eps: f64,
    pub point_seed: u64,
    pub scale: f64,
    pub fd_tol: f64,
    pub symmetry_tol: f64,
    pub licq_floor: f64,
    /// Largest `m` for which the LICQ estimate is compared against a dense SVD.
    pub dense_svd_max_m: usize,
    pub dense_svd_tol: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            point_seed: 0,
            scale: 1.0,
            fd_tol: 1e-5,
            symmetry_tol: 1e-10,
            licq_floor: 1e-10,
            dense_svd_max_m: 200,
            dense_svd_tol: 1e-6,
        }
    }
}

/// Runs every check on one random point of `p`.
pub fn run_checks<T: Scalar>(p: &MpecProblem<T>, cfg: &CheckConfig) -> Result<Vec<CheckResult>> {
    let eps = T::lit(cfg.eps);
    let r = random_point(p, cfg.point_seed, eps, cfg.scale)?;
    let fd = fd_errors(p, &r, cfg.point_seed.wrapping_add(1))?;
    let mut out = vec![
        CheckResult::at_most("jacobian_fd", fd.jacobian, cfg.fd_tol),
        CheckResult::at_most("hessian_fd", fd.hessian, cfg.fd_tol),
        CheckResult::at_most("kkt_fd", fd.kkt, cfg.fd_tol),
        CheckResult::at_most("merit_grad_fd", fd.merit_grad, cfg.fd_tol),
        CheckResult::at_most("kkt_symmetry", symmetry_error(p, &r, cfg.point_seed.wrapping_add(2))?, cfg.symmetry_tol),
    ];

    let interior = random_interior_point(p, cfg.point_seed);
    let licq = licq_probe(p, &interior, eps, &LicqConfig::default())?;
    out.push(CheckResult::at_least("licq_sigma_min", licq.sigma_min, cfg.licq_floor));
    if p.m() <= cfg.dense_svd_max_m {
        let dense = dense_sigma_min(p, &interior, eps)?;
        let rel = (licq.sigma_min - dense).abs() / dense.max(1e-300);
        out.push(CheckResult::at_most("licq_vs_dense_svd", rel, cfg.dense_svd_tol));
    }

    // zeros of φ_ε lie exactly on GH = ε²/2 with G, H > 0
    let g = p.eval_g(r.v())?;
    let half_e2 = T::lit(0.5) * eps * eps;
    let worst = g
        .iter()
        .filter(|&&a| a > T::zero())
        .map(|&a| {
            let b = half_e2 / a;
            (fb_value(a, b, eps).abs() / (T::one() + a + b)).as_f64()
        })
        .fold(0.0, f64::max);
    out.push(CheckResult::at_most("complementarity_zero_set", worst, 1e-12));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{make_split, parse_libsvm_str};
    use crate::problem::assemble;

    fn tiny() -> MpecProblem<f64> {
        let text = "+1 1:0.5 2:-1\n-1 1:1 3:0.25\n+1 2:2\n-1 1:-0.5 3:1\n+1 1:0.3 2:0.1 3:0.2\n-1 3:-2\n";
        let ds = parse_libsvm_str(text).unwrap();
        let plan = make_split(&ds, 6, 3, 1).unwrap();
        assemble(&ds, &plan).unwrap()
    }

    #[test]
    fn interior_point_is_interior() {
        let p = tiny();
        let v = random_interior_point(&p, 3);
        assert!(p.eval_g(&v).unwrap().iter().all(|&x| x > 0.0));
        assert!(p.eval_h(&v).unwrap().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn all_checks_pass_on_tiny_instance() {
        let p = tiny();
        for eps in [1.0, 1e-2] {
            let res = run_checks(&p, &CheckConfig { eps, ..CheckConfig::default() }).unwrap();
            assert!(res.iter().any(|c| c.name == "licq_vs_dense_svd"));
            for c in &res {
                assert!(c.passed, "{c:?} at eps={eps}");
            }
        }
    }
}
