//! Post-solve diagnostics: complementarity residuals, the second-order
//! quantities along the critical direction, and active index sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kkt::{KktOperator, KktPoint, PhiJacobian};
use crate::linalg::{dot, norm2, DenseLu};
use crate::problem::{MpecProblem, PrimalPoint};
use crate::scalar::Scalar;

/// How far `(G, H)` is from the smoothed complementarity curve `GH = ε²/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complementarity {
    pub max_abs_gap: f64,
    pub min_g: f64,
    pub min_h: f64,
}

pub fn complementarity<T: Scalar>(p: &MpecProblem<T>, v: &PrimalPoint<T>, eps: T) -> Result<Complementarity> {
    let g = p.eval_g(v)?;
    let h = p.eval_h(v)?;
    let half_e2 = T::lit(0.5) * eps * eps;
    let max_abs_gap = g
        .iter()
        .zip(&h)
        .map(|(&a, &b)| (a * b - half_e2).abs())
        .fold(T::zero(), T::max)
        .as_f64();
    let min = |x: &[T]| x.iter().copied().fold(T::infinity(), T::min).as_f64();
    Ok(Complementarity {
        max_abs_gap,
        min_g: min(&g),
        min_h: min(&h),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assumption2 {
    /// `vᵀ ∇²_vv L v` at the primal part of the point.
    pub a2_paper: f64,
    /// `Uᵀ ∇²_vv L U` along the critical direction `U` (with `U_C = 1`).
    pub a2_cone: f64,
    /// Same quadratic form evaluated as
    /// `(U^G)ᵀM^G U^G + (U^H)ᵀM^H U^H + 2(U^G)ᵀM^{GH}U^H`.
    pub a2_cone_split: f64,
    /// `|a2_cone − a2_cone_split| / max(|a2_cone|, tiny)`.
    pub split_rel_diff: f64,
    /// `‖J_vΦ U‖`, zero up to rounding when `U` spans the critical cone.
    pub ju_norm: f64,
    pub u_norm: f64,
}

/// Critical direction `U` with `J_vΦ U = 0` and `U_C = 1`, obtained by
/// eliminating ζ, z, ξ and solving a dense system for α per fold.
pub fn critical_direction<T: Scalar>(op: &KktOperator<'_, T>) -> Result<Vec<T>> {
    let p = op.problem();
    let w = op.weights();
    let (tm1, tm2, m2) = (p.tm1(), p.tm2(), p.m2());
    let (b1, b2, b3, b4) = (p.block1().start, p.block2().start, p.block3().start, p.block4().start);

    let mut ua = vec![T::zero(); tm2];
    for t in 0..p.n_folds() {
        let b = p.b_block(t);
        let dense: Vec<Vec<T>> = (0..m2)
            .map(|j| {
                let mut row = vec![T::zero(); p.n_features()];
                b.row(j).for_each(|(c, v)| row[c] = v);
                row
            })
            .collect();
        let mut k = vec![T::zero(); m2 * m2];
        let mut rhs = vec![T::zero(); m2];
        for i in 0..m2 {
            let (i3, i4) = (b3 + t * m2 + i, b4 + t * m2 + i);
            for j in 0..m2 {
                k[i * m2 + j] = w.wg[i4] * b.row_dot(i, &dense[j]);
            }
            k[i * m2 + i] += w.wh[i4] + w.wg[i4] * w.wg[i3] / w.wh[i3];
            rhs[i] = w.wh[i4];
        }
        let lu = DenseLu::factor(k, m2, T::epsilon())
            .ok_or_else(|| Error::Singular(format!("critical-direction system of fold {t}")))?;
        ua[t * m2..(t + 1) * m2].copy_from_slice(&lu.solve(&rhs));
    }

    let (abt, bbt) = p.apply_abt_bbt(&ua);
    let mut u = Vec::with_capacity(p.n_vars());
    u.push(T::one());
    let mut uz = vec![T::zero(); tm1];
    let mut uzeta = vec![T::zero(); tm1];
    for i in 0..tm1 {
        let (i1, i2) = (b1 + i, b2 + i);
        let r2 = w.wg[i2] / w.wh[i2];
        uz[i] = -w.wh[i1] * abt[i] / (w.wg[i1] * r2 + w.wh[i1]);
        uzeta[i] = r2 * uz[i];
    }
    u.extend(uzeta);
    u.extend(uz);
    u.extend_from_slice(&ua);
    u.extend((0..tm2).map(|i| -(w.wg[b3 + i] / w.wh[b3 + i]) * ua[i] - bbt[i]));
    Ok(u)
}

pub fn assumption2_value<T: Scalar>(p: &MpecProblem<T>, r: &KktPoint<T>) -> Result<Assumption2> {
    let op = KktOperator::new(p, r)?;
    let u = critical_direction(&op)?;
    let a2_cone = dot(&u, &op.hessian_apply(&u)).as_f64();

    let (tm1, tm2) = (p.tm1(), p.tm2());
    let (uzeta, rest) = u[1..].split_at(tm1);
    let (uz, rest) = rest.split_at(tm1);
    let (ua, uxi) = rest.split_at(tm2);
    let (abt, bbt) = p.apply_abt_bbt(ua);
    let ug = &u[1..];
    let mut uh = Vec::with_capacity(p.m());
    uh.extend(uz.iter().zip(&abt).map(|(&a, &b)| a + b));
    uh.extend(uzeta.iter().map(|&a| -a));
    uh.extend(bbt.iter().zip(uxi).map(|(&a, &b)| a + b));
    uh.extend(ua.iter().map(|&a| u[0] - a));
    let c = op.curvature();
    let split: T = (0..p.m())
        .map(|i| c.mg[i] * ug[i] * ug[i] + c.mh[i] * uh[i] * uh[i] + T::lit(2.0) * c.mgh[i] * ug[i] * uh[i])
        .sum();
    let a2_cone_split = split.as_f64();

    let v = r.v().as_slice();
    let a2_paper = dot(v, &op.hessian_apply(v)).as_f64();
    Ok(Assumption2 {
        a2_paper,
        a2_cone,
        a2_cone_split,
        split_rel_diff: (a2_cone - a2_cone_split).abs() / a2_cone.abs().max(f64::MIN_POSITIVE),
        ju_norm: norm2(&op.jac_v_phi_apply(&u)).as_f64(),
        u_norm: norm2(&u).as_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSets {
    /// `G ≈ 0 < H`
    pub zero_pos: usize,
    /// `G > 0 ≈ H`
    pub pos_zero: usize,
    /// `G ≈ 0 ≈ H`
    pub biactive: usize,
    pub biactive_indices: Vec<usize>,
}

/// Counts the index sets at `v`; a value counts as zero when
/// `|x| ≤ tol·(1 + |x|)`.
pub fn classify_index_sets<T: Scalar>(p: &MpecProblem<T>, v: &PrimalPoint<T>, tol: f64) -> Result<IndexSets> {
    let g = p.eval_g(v)?;
    let h = p.eval_h(v)?;
    let zero = |x: T| {
        let x = x.as_f64().abs();
        x <= tol * (1.0 + x)
    };
    let mut out = IndexSets {
        zero_pos: 0,
        pos_zero: 0,
        biactive: 0,
        biactive_indices: Vec::new(),
    };
    for (i, (&a, &b)) in g.iter().zip(&h).enumerate() {
        match (zero(a), zero(b)) {
            (true, true) => {
                out.biactive += 1;
                out.biactive_indices.push(i);
            }
            (true, false) if b > T::zero() => out.zero_pos += 1,
            (false, true) if a > T::zero() => out.pos_zero += 1,
            _ => {}
        }
    }
    Ok(out)
}

/// Smallest singular value of the explicitly assembled `J_vΦ` (small problems).
pub fn dense_sigma_min<T: Scalar>(p: &MpecProblem<T>, v: &PrimalPoint<T>, eps: T) -> Result<f64> {
    let jac = PhiJacobian::new(p, v, eps)?;
    let j = jac.explicit();
    let dense: Vec<f64> = j.to_dense().into_iter().map(Scalar::as_f64).collect();
    let mat = nalgebra::DMatrix::from_row_slice(j.nrows(), j.ncols(), &dense);
    let sv = mat.singular_values();
    Ok(sv.iter().copied().fold(f64::INFINITY, f64::min))
}
