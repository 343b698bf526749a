//! The cross-validation MPEC instance.
//!
//! Variables are laid out as `v = (C, ζ, z, α, ξ)` with `ζ, z ∈ R^{T·m1}` and
//! `α, ξ ∈ R^{T·m2}`. The complementarity pairs are `0 ≤ G(v) ⊥ H(v) ≥ 0` with
//!
//! ```text
//! G(v) = (ζ; z; α; ξ)
//! H(v) = (A Bᵀα + z; 1 − ζ; B Bᵀα − 1 + ξ; C·1 − α)
//! ```
//!
//! where `A = Diag(A¹..Aᵀ)` holds the signed validation rows `y_i x_iᵀ` of each
//! fold and `B = Diag(B¹..Bᵀ)` the signed training rows. `A Bᵀ` and `B Bᵀ` are
//! only ever applied as two sparse products through the per-fold weight
//! vectors `wᵗ = (Bᵗ)ᵀ αᵗ`.

use std::ops::Range;

use serde::Serialize;

use crate::data_io::{Dataset, SplitPlan};
use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct MpecProblem<T> {
    n_folds: usize,
    m1: usize,
    m2: usize,
    n: usize,
    a_blocks: Vec<CsrMatrix<T>>,
    b_blocks: Vec<CsrMatrix<T>>,
    validation: Vec<Vec<usize>>,
    training: Vec<Vec<usize>>,
}

/// Dimensions and sparsity, as written by `--dump-problem`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProblemStats {
    pub n_folds: usize,
    pub m1: usize,
    pub m2: usize,
    pub n_features: usize,
    pub m: usize,
    pub n_variables: usize,
    pub nnz_a: usize,
    pub nnz_b: usize,
}

/// Builds the MPEC blocks for the folds in `plan`.
pub fn assemble<T: Scalar>(ds: &Dataset<T>, plan: &SplitPlan) -> Result<MpecProblem<T>> {
    let n_folds = plan.folds.len();
    if n_folds == 0 {
        return Err(Error::Assembly("split has no folds".into()));
    }
    let m1 = plan.folds[0].len();
    if m1 == 0 {
        return Err(Error::Assembly("validation folds are empty".into()));
    }
    if plan.folds.iter().any(|f| f.len() != m1) {
        return Err(Error::Assembly("folds have unequal sizes".into()));
    }
    let p1 = m1 * n_folds;
    let m2 = p1 - m1;
    if m2 == 0 {
        return Err(Error::Assembly(
            "a single fold leaves no training points (m2 = 0)".into(),
        ));
    }
    let mut seen = vec![false; ds.len()];
    for &i in plan.folds.iter().flatten() {
        if i >= ds.len() {
            return Err(Error::Assembly(format!(
                "point index {i} out of range for {} points",
                ds.len()
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Assembly(format!("point {i} appears in two folds")));
        }
    }

    let n = ds.n_features();
    let rows = |idx: &[usize]| -> CsrMatrix<T> {
        let signed: Vec<_> = idx.iter().map(|&i| ds.signed_row(i)).collect();
        CsrMatrix::from_rows(n, signed.iter().map(Vec::as_slice))
    };
    let validation: Vec<Vec<usize>> = plan.folds.clone();
    let training: Vec<Vec<usize>> = (0..n_folds).map(|t| plan.training_indices(t)).collect();
    let a_blocks = validation.iter().map(|f| rows(f)).collect();
    let b_blocks = training.iter().map(|f| rows(f)).collect();
    Ok(MpecProblem {
        n_folds,
        m1,
        m2,
        n,
        a_blocks,
        b_blocks,
        validation,
        training,
    })
}

impl<T: Scalar> MpecProblem<T> {
    pub fn n_folds(&self) -> usize {
        self.n_folds
    }
    pub fn m1(&self) -> usize {
        self.m1
    }
    pub fn m2(&self) -> usize {
        self.m2
    }
    pub fn n_features(&self) -> usize {
        self.n
    }
    /// Number of complementarity pairs, `2T(m1 + m2)`.
    pub fn m(&self) -> usize {
        2 * self.n_folds * (self.m1 + self.m2)
    }
    /// Length of `v`, `m + 1`.
    pub fn n_vars(&self) -> usize {
        self.m() + 1
    }
    /// `T·m1`
    pub fn tm1(&self) -> usize {
        self.n_folds * self.m1
    }
    /// `T·m2`
    pub fn tm2(&self) -> usize {
        self.n_folds * self.m2
    }

    pub fn a_block(&self, t: usize) -> &CsrMatrix<T> {
        &self.a_blocks[t]
    }
    pub fn b_block(&self, t: usize) -> &CsrMatrix<T> {
        &self.b_blocks[t]
    }
    /// Dataset indices of the validation points of fold `t`, in row order of `Aᵗ`.
    pub fn validation_indices(&self, t: usize) -> &[usize] {
        &self.validation[t]
    }
    /// Dataset indices of the training points of fold `t`, in row order of `Bᵗ`.
    pub fn training_indices(&self, t: usize) -> &[usize] {
        &self.training[t]
    }

    pub fn stats(&self) -> ProblemStats {
        ProblemStats {
            n_folds: self.n_folds,
            m1: self.m1,
            m2: self.m2,
            n_features: self.n,
            m: self.m(),
            n_variables: self.n_vars(),
            nnz_a: self.a_blocks.iter().map(CsrMatrix::nnz).sum(),
            nnz_b: self.b_blocks.iter().map(CsrMatrix::nnz).sum(),
        }
    }

    // Ranges of the four complementarity blocks inside an m-vector.
    pub fn block1(&self) -> Range<usize> {
        0..self.tm1()
    }
    pub fn block2(&self) -> Range<usize> {
        self.tm1()..2 * self.tm1()
    }
    pub fn block3(&self) -> Range<usize> {
        2 * self.tm1()..2 * self.tm1() + self.tm2()
    }
    pub fn block4(&self) -> Range<usize> {
        2 * self.tm1() + self.tm2()..self.m()
    }

    /// Constant part of `H`: `(0; 1; −1; 0)`.
    pub fn b_h(&self) -> Vec<T> {
        let mut b = vec![T::zero(); self.m()];
        b[self.block2()].iter_mut().for_each(|x| *x = T::one());
        b[self.block3()].iter_mut().for_each(|x| *x = -T::one());
        b
    }

    /// Objective `f(v) = 1ᵀζ / (T·m1)`.
    pub fn objective(&self, v: &PrimalPoint<T>) -> T {
        v.zeta().iter().copied().sum::<T>() / T::from_count(self.tm1())
    }

    /// `∇f`: `1/(T·m1)` on the ζ block, zero elsewhere.
    pub fn obj_grad(&self) -> Vec<T> {
        let mut g = vec![T::zero(); self.n_vars()];
        let w = T::one() / T::from_count(self.tm1());
        g[1..1 + self.tm1()].iter_mut().for_each(|x| *x = w);
        g
    }

    /// Per-fold classifier weights `wᵗ = (Bᵗ)ᵀ αᵗ` for a stacked `α`.
    pub fn fold_weights(&self, alpha: &[T]) -> Vec<Vec<T>> {
        debug_assert_eq!(alpha.len(), self.tm2());
        self.b_blocks
            .iter()
            .zip(alpha.chunks(self.m2))
            .map(|(b, a)| b.tmatvec(a))
            .collect()
    }

    /// `(A Bᵀα, B Bᵀα)` computed through the fold weights.
    pub fn apply_abt_bbt(&self, alpha: &[T]) -> (Vec<T>, Vec<T>) {
        let mut abt = vec![T::zero(); self.tm1()];
        let mut bbt = vec![T::zero(); self.tm2()];
        for (t, w) in self.fold_weights(alpha).iter().enumerate() {
            self.a_blocks[t].matvec_into(w, &mut abt[t * self.m1..(t + 1) * self.m1]);
            self.b_blocks[t].matvec_into(w, &mut bbt[t * self.m2..(t + 1) * self.m2]);
        }
        (abt, bbt)
    }

    /// `B Aᵀ u + B Bᵀ s`, the α-column transpose action of `[A Bᵀ; B Bᵀ]`.
    pub fn apply_bat_bbt(&self, u: &[T], s: &[T]) -> Vec<T> {
        debug_assert_eq!(u.len(), self.tm1());
        debug_assert_eq!(s.len(), self.tm2());
        let mut out = vec![T::zero(); self.tm2()];
        let mut w = vec![T::zero(); self.n];
        let mut w2 = vec![T::zero(); self.n];
        for t in 0..self.n_folds {
            self.a_blocks[t].tmatvec_into(&u[t * self.m1..(t + 1) * self.m1], &mut w);
            self.b_blocks[t].tmatvec_into(&s[t * self.m2..(t + 1) * self.m2], &mut w2);
            for (a, b) in w.iter_mut().zip(&w2) {
                *a += *b;
            }
            self.b_blocks[t].matvec_into(&w, &mut out[t * self.m2..(t + 1) * self.m2]);
        }
        out
    }

    fn check_point(&self, v: &PrimalPoint<T>) -> Result<()> {
        check_len("primal point", self.n_vars(), v.len())?;
        check_len("zeta block", self.tm1(), v.tm1)
    }

    /// `G(v) = L^G v = (ζ; z; α; ξ)`.
    pub fn eval_g(&self, v: &PrimalPoint<T>) -> Result<Vec<T>> {
        self.check_point(v)?;
        Ok(v.as_slice()[1..].to_vec())
    }

    /// `H(v) = L^H v + b^H`, matrix-free.
    pub fn eval_h(&self, v: &PrimalPoint<T>) -> Result<Vec<T>> {
        self.check_point(v)?;
        let mut h = self.lh_apply(v.as_slice());
        for (hi, bi) in h.iter_mut().zip(self.b_h()) {
            *hi += bi;
        }
        Ok(h)
    }

    /// `L^G d`, for any `d ∈ R^{m+1}`.
    pub fn lg_apply(&self, d: &[T]) -> Vec<T> {
        d[1..].to_vec()
    }

    /// `L^H d = (A Bᵀdα + dz; −dζ; B Bᵀdα + dξ; dC·1 − dα)`.
    pub fn lh_apply(&self, d: &[T]) -> Vec<T> {
        let (tm1, tm2) = (self.tm1(), self.tm2());
        let dc = d[0];
        let dzeta = &d[1..1 + tm1];
        let dz = &d[1 + tm1..1 + 2 * tm1];
        let dalpha = &d[1 + 2 * tm1..1 + 2 * tm1 + tm2];
        let dxi = &d[1 + 2 * tm1 + tm2..];
        let (abt, bbt) = self.apply_abt_bbt(dalpha);
        let mut out = Vec::with_capacity(self.m());
        out.extend(abt.iter().zip(dz).map(|(&a, &b)| a + b));
        out.extend(dzeta.iter().map(|&x| -x));
        out.extend(bbt.iter().zip(dxi).map(|(&a, &b)| a + b));
        out.extend(dalpha.iter().map(|&a| dc - a));
        out
    }

    /// `(L^G)ᵀ u`.
    pub fn lg_t_apply(&self, u: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_vars());
        out.push(T::zero());
        out.extend_from_slice(u);
        out
    }

    /// `(L^H)ᵀ u = (1ᵀu₄; −u₂; u₁; B Aᵀu₁ + B Bᵀu₃ − u₄; u₃)`.
    pub fn lh_t_apply(&self, u: &[T]) -> Vec<T> {
        let (u1, u2, u3, u4) = (
            &u[self.block1()],
            &u[self.block2()],
            &u[self.block3()],
            &u[self.block4()],
        );
        let mut out = Vec::with_capacity(self.n_vars());
        out.push(u4.iter().copied().sum());
        out.extend(u2.iter().map(|&x| -x));
        out.extend_from_slice(u1);
        let alpha = self.apply_bat_bbt(u1, u3);
        out.extend(alpha.iter().zip(u4).map(|(&a, &b)| a - b));
        out.extend_from_slice(u3);
        out
    }

    /// Explicit sparse `L^G`, an `m × (m+1)` selection matrix.
    pub fn explicit_lg(&self) -> CsrMatrix<T> {
        let rows: Vec<Vec<(usize, T)>> = (0..self.m()).map(|i| vec![(i + 1, T::one())]).collect();
        CsrMatrix::from_rows(self.n_vars(), rows.iter().map(Vec::as_slice))
    }

    /// Explicit sparse `L^H` with the `A Bᵀ` and `B Bᵀ` blocks formed entry by
    /// entry from row inner products. Quadratic in the fold sizes; meant for
    /// diagnostics and as an independent check of the matrix-free path.
    pub fn explicit_lh(&self) -> CsrMatrix<T> {
        let (tm1, tm2) = (self.tm1(), self.tm2());
        let (m1, m2) = (self.m1, self.m2);
        let col_zeta = 1;
        let col_z = 1 + tm1;
        let col_alpha = 1 + 2 * tm1;
        let col_xi = 1 + 2 * tm1 + tm2;
        let dense_b: Vec<Vec<T>> = self
            .b_blocks
            .iter()
            .flat_map(|b| (0..b.nrows()).map(move |j| sparse_row_dense(b, j, self.n)))
            .collect();
        let mut rows: Vec<Vec<(usize, T)>> = Vec::with_capacity(self.m());
        for t in 0..self.n_folds {
            for i in 0..m1 {
                let mut r = vec![(col_z + t * m1 + i, T::one())];
                for j in 0..m2 {
                    let val = self.a_blocks[t].row_dot(i, &dense_b[t * m2 + j]);
                    if val != T::zero() {
                        r.push((col_alpha + t * m2 + j, val));
                    }
                }
                rows.push(r);
            }
        }
        for k in 0..tm1 {
            rows.push(vec![(col_zeta + k, -T::one())]);
        }
        for t in 0..self.n_folds {
            for i in 0..m2 {
                let mut r = Vec::new();
                for j in 0..m2 {
                    let val = self.b_blocks[t].row_dot(i, &dense_b[t * m2 + j]);
                    if val != T::zero() {
                        r.push((col_alpha + t * m2 + j, val));
                    }
                }
                r.push((col_xi + t * m2 + i, T::one()));
                rows.push(r);
            }
        }
        for k in 0..tm2 {
            rows.push(vec![(0, T::one()), (col_alpha + k, -T::one())]);
        }
        CsrMatrix::from_rows(self.n_vars(), rows.iter().map(Vec::as_slice))
    }

    /// Wraps a flat vector as a primal point for this problem.
    pub fn point(&self, data: Vec<T>) -> Result<PrimalPoint<T>> {
        check_len("primal point", self.n_vars(), data.len())?;
        Ok(PrimalPoint {
            data,
            tm1: self.tm1(),
            tm2: self.tm2(),
        })
    }

    pub fn zero_point(&self) -> PrimalPoint<T> {
        PrimalPoint::zeros(self.tm1(), self.tm2())
    }
}

fn sparse_row_dense<T: Scalar>(m: &CsrMatrix<T>, i: usize, n: usize) -> Vec<T> {
    let mut d = vec![T::zero(); n];
    for (j, v) in m.row(i) {
        d[j] = v;
    }
    d
}

/// `v = (C, ζ, z, α, ξ)` stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalPoint<T> {
    data: Vec<T>,
    tm1: usize,
    tm2: usize,
}

impl<T: Scalar> PrimalPoint<T> {
    pub fn zeros(tm1: usize, tm2: usize) -> Self {
        Self {
            data: vec![T::zero(); 1 + 2 * tm1 + 2 * tm2],
            tm1,
            tm2,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn c(&self) -> T {
        self.data[0]
    }
    pub fn set_c(&mut self, c: T) {
        self.data[0] = c;
    }
    pub fn zeta(&self) -> &[T] {
        &self.data[1..1 + self.tm1]
    }
    pub fn z(&self) -> &[T] {
        &self.data[1 + self.tm1..1 + 2 * self.tm1]
    }
    pub fn alpha(&self) -> &[T] {
        &self.data[1 + 2 * self.tm1..1 + 2 * self.tm1 + self.tm2]
    }
    pub fn xi(&self) -> &[T] {
        &self.data[1 + 2 * self.tm1 + self.tm2..]
    }
    pub fn zeta_mut(&mut self) -> &mut [T] {
        &mut self.data[1..1 + self.tm1]
    }
    pub fn z_mut(&mut self) -> &mut [T] {
        let tm1 = self.tm1;
        &mut self.data[1 + tm1..1 + 2 * tm1]
    }
    pub fn alpha_mut(&mut self) -> &mut [T] {
        let (tm1, tm2) = (self.tm1, self.tm2);
        &mut self.data[1 + 2 * tm1..1 + 2 * tm1 + tm2]
    }
    pub fn xi_mut(&mut self) -> &mut [T] {
        let (tm1, tm2) = (self.tm1, self.tm2);
        &mut self.data[1 + 2 * tm1 + tm2..]
    }
}
