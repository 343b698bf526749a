//! Direct solver for the KKT matrix with a shifted Hessian block,
//! `[∇²L + μI, −Jᵀ; −J, 0]`, used as a preconditioner for the Newton system.
//!
//! Split `J_vΦ = [j_C | J_y]` with `y = (ζ, z, α, ξ)`. `J_y` is block upper
//! triangular: the (ζ, z) part is a 2×2 diagonal system per index and the
//! (α, ξ) part reduces, after eliminating ξ, to one dense `m2 × m2` system per
//! fold. The null space of `J` is spanned by `Z = (1; −J_y⁻¹ j_C)`, so a
//! solve costs two triangular sweeps, one Hessian product and a scalar
//! division by `Zᵀ(∇²L + μI)Z`.

use crate::error::{Error, Result};
use crate::kkt::KktOperator;
use crate::krylov::LinearOperator;
use crate::linalg::{dot, DenseLu};
use crate::scalar::Scalar;

pub struct NullspaceSolver<'a, 'p, T> {
    op: &'a KktOperator<'p, T>,
    folds: Vec<DenseLu<T>>,
    z: Vec<T>,
    hz: Vec<T>,
    ztz: T,
    zthz: T,
    curv_scale: T,
}

impl<'a, 'p, T: Scalar> NullspaceSolver<'a, 'p, T> {
    pub fn new(op: &'a KktOperator<'p, T>) -> Result<Self> {
        let p = op.problem();
        let w = op.weights();
        let m2 = p.m2();
        let (b3, b4) = (p.block3().start, p.block4().start);
        let mut folds = Vec::with_capacity(p.n_folds());
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
            for i in 0..m2 {
                let (i3, i4) = (b3 + t * m2 + i, b4 + t * m2 + i);
                for j in 0..m2 {
                    k[i * m2 + j] = w.wh[i3] * b.row_dot(i, &dense[j]);
                }
                k[i * m2 + i] += w.wg[i3] + w.wh[i3] * w.wh[i4] / w.wg[i4];
            }
            let lu = DenseLu::factor(k, m2, T::epsilon())
                .ok_or_else(|| Error::Singular(format!("constraint Jacobian block of fold {t}")))?;
            folds.push(lu);
        }
        let mut s = Self {
            op,
            folds,
            z: Vec::new(),
            hz: Vec::new(),
            ztz: T::zero(),
            zthz: T::zero(),
            curv_scale: T::zero(),
        };
        let mut jc = vec![T::zero(); p.m()];
        for i in p.block4() {
            jc[i] = w.wh[i];
        }
        let y = s.solve_jy(&jc);
        let mut z = Vec::with_capacity(p.n_vars());
        z.push(T::one());
        z.extend(y.into_iter().map(|x| -x));
        s.hz = op.hessian_apply(&z);
        s.ztz = dot(&z, &z);
        s.zthz = dot(&z, &s.hz);
        let c = op.curvature();
        s.curv_scale = c
            .mg
            .iter()
            .chain(&c.mh)
            .chain(&c.mgh)
            .fold(T::zero(), |a, &x| a.max(x.abs()));
        s.z = z;
        Ok(s)
    }

    /// `Z`, the null direction of `J_vΦ` normalized to `Z_C = 1`.
    pub fn null_direction(&self) -> &[T] {
        &self.z
    }

    /// Whether the shifted system is solvable, i.e. `Zᵀ(∇²L + μI)Z` is not
    /// negligible.
    pub fn is_regular(&self, mu: T) -> bool {
        let den = self.zthz + mu * self.ztz;
        let floor = T::lit(1e-13) * self.ztz * (self.curv_scale + mu);
        den.is_finite() && den.abs() > floor
    }

    /// `Zᵀ ∇²L Z`.
    pub fn null_curvature(&self) -> T {
        self.zthz
    }

    /// Solves `J_y y = b` for `b ∈ R^m`.
    pub fn solve_jy(&self, b: &[T]) -> Vec<T> {
        let p = self.op.problem();
        let w = self.op.weights();
        let (tm1, tm2, m2) = (p.tm1(), p.tm2(), p.m2());
        let (b1, b2, b3, b4) = (p.block1().start, p.block2().start, p.block3().start, p.block4().start);
        let mut alpha = vec![T::zero(); tm2];
        for (t, lu) in self.folds.iter().enumerate() {
            let rhs: Vec<T> = (0..m2)
                .map(|i| {
                    let (i3, i4) = (b3 + t * m2 + i, b4 + t * m2 + i);
                    b[i3] - w.wh[i3] * b[i4] / w.wg[i4]
                })
                .collect();
            alpha[t * m2..(t + 1) * m2].copy_from_slice(&lu.solve(&rhs));
        }
        let (abt, _) = p.apply_abt_bbt(&alpha);
        let mut y = vec![T::zero(); p.m()];
        for i in 0..tm1 {
            let (i1, i2) = (b1 + i, b2 + i);
            let c1 = b[i1] - w.wh[i1] * abt[i];
            let c2 = b[i2];
            let det = w.wg[i1] * w.wg[i2] + w.wh[i1] * w.wh[i2];
            y[i] = (w.wg[i2] * c1 - w.wh[i1] * c2) / det;
            y[tm1 + i] = (w.wh[i2] * c1 + w.wg[i1] * c2) / det;
        }
        for i in 0..tm2 {
            let i4 = b4 + i;
            y[2 * tm1 + i] = alpha[i];
            y[2 * tm1 + tm2 + i] = (b[i4] + w.wh[i4] * alpha[i]) / w.wg[i4];
        }
        y
    }

    /// Solves `J_yᵀ x = c` for `c ∈ R^m`.
    pub fn solve_jy_t(&self, c: &[T]) -> Vec<T> {
        let p = self.op.problem();
        let w = self.op.weights();
        let (tm1, tm2, m2) = (p.tm1(), p.tm2(), p.m2());
        let (b1, b2, b3, b4) = (p.block1().start, p.block2().start, p.block3().start, p.block4().start);
        let mut x = vec![T::zero(); p.m()];
        let mut u = vec![T::zero(); tm1];
        for i in 0..tm1 {
            let (i1, i2) = (b1 + i, b2 + i);
            let (cz, cw) = (c[i], c[tm1 + i]);
            let det = w.wg[i1] * w.wg[i2] + w.wh[i1] * w.wh[i2];
            x[i1] = (w.wg[i2] * cz + w.wh[i2] * cw) / det;
            x[i2] = (w.wg[i1] * cw - w.wh[i1] * cz) / det;
            u[i] = w.wh[i1] * x[i1];
        }
        let q = p.apply_bat_bbt(&u, &vec![T::zero(); tm2]);
        let (ca, cx) = c[2 * tm1..].split_at(tm2);
        for (t, lu) in self.folds.iter().enumerate() {
            let rhs: Vec<T> = (0..m2)
                .map(|j| {
                    let k = t * m2 + j;
                    ca[k] - q[k] + w.wh[b4 + k] * cx[k] / w.wg[b4 + k]
                })
                .collect();
            let x3 = lu.solve_transpose(&rhs);
            for (j, &v) in x3.iter().enumerate() {
                let k = t * m2 + j;
                x[b3 + k] = v;
                x[b4 + k] = (cx[k] - w.wh[b3 + k] * v) / w.wg[b4 + k];
            }
        }
        x
    }

    /// Solves `[∇²L + μI, −Jᵀ; −J, 0] d = rhs`. Returns `None` when
    /// `Zᵀ(∇²L + μI)Z` vanishes to working precision.
    pub fn solve(&self, rhs: &[T], mu: T) -> Option<Vec<T>> {
        let nv = self.op.problem().n_vars();
        let (r1, r2) = rhs.split_at(nv);
        if !self.is_regular(mu) {
            return None;
        }
        let den = self.zthz + mu * self.ztz;
        let mut dv = Vec::with_capacity(nv);
        dv.push(T::zero());
        dv.extend(self.solve_jy(r2).into_iter().map(|x| -x));
        // any multiple of Z is also a particular solution; removing the Z
        // component keeps dv small when J_y is nearly singular
        let c0 = dot(&self.z, &dv) / self.ztz;
        for (d, &z) in dv.iter_mut().zip(&self.z) {
            *d -= c0 * z;
        }
        let mut hdv = self.op.hessian_apply(&dv);
        for (h, &d) in hdv.iter_mut().zip(&dv) {
            *h += mu * d;
        }
        let proj: T = self.z.iter().zip(r1.iter().zip(&hdv)).map(|(&z, (&r, &h))| z * (r - h)).sum();
        let dc = proj / den;
        for (d, &z) in dv.iter_mut().zip(&self.z) {
            *d += dc * z;
        }
        // (∇²L + μ) dv − r1, whose y-part equals J_yᵀ dλ
        let t: Vec<T> = (0..nv)
            .map(|i| hdv[i] + dc * (self.hz[i] + mu * self.z[i]) - r1[i])
            .collect();
        let dl = self.solve_jy_t(&t[1..]);
        dv.extend(dl);
        Some(dv)
    }
}

/// [`NullspaceSolver::solve`] at a fixed shift, as a preconditioner.
pub struct ShiftedKktInverse<'s, 'a, 'p, T> {
    pub solver: &'s NullspaceSolver<'a, 'p, T>,
    pub mu: T,
}

impl<T: Scalar> LinearOperator<T> for ShiftedKktInverse<'_, '_, '_, T> {
    fn dim(&self) -> usize {
        self.solver.op.dim()
    }
    fn apply(&self, x: &[T], y: &mut [T]) {
        match self.solver.solve(x, self.mu) {
            Some(d) => y.copy_from_slice(&d),
            None => y.copy_from_slice(x),
        }
    }
}
