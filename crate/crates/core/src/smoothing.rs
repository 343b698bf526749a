//! Smoothed Fischer–Burmeister function `φ_ε(a, b) = a + b − √(a² + b² + ε²)`
//! and its first and second derivatives, evaluated componentwise.

use crate::scalar::Scalar;

/// Uses `(2ab − ε²)/(a + b + s)` when `a + b > 0` to avoid cancellation near
/// the curve `ab = ε²/2`.
#[inline]
pub fn fb_value<T: Scalar>(a: T, b: T, eps: T) -> T {
    let s = (a * a + b * b + eps * eps).sqrt();
    let sum = a + b;
    if sum > T::zero() {
        (T::lit(2.0) * a * b - eps * eps) / (sum + s)
    } else {
        sum - s
    }
}

/// `1 − a/s`, rewritten as `(b² + ε²)/(s(s + a))` for `a > 0`.
#[inline]
fn one_minus_ratio<T: Scalar>(a: T, b: T, eps: T, s: T) -> T {
    if a > T::zero() {
        (b * b + eps * eps) / (s * (s + a))
    } else {
        T::one() - a / s
    }
}

/// `Φ_ε(G, H)` componentwise.
pub fn fb_vector<T: Scalar>(g: &[T], h: &[T], eps: T) -> Vec<T> {
    g.iter().zip(h).map(|(&a, &b)| fb_value(a, b, eps)).collect()
}

/// Diagonals of `W^G` and `W^H`, i.e. `∂φ/∂a` and `∂φ/∂b`, together with the
/// shared denominator `√(G² + H² + ε²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingWeights<T> {
    pub wg: Vec<T>,
    pub wh: Vec<T>,
    pub denom: Vec<T>,
    pub eps: T,
}

pub fn fb_weights<T: Scalar>(g: &[T], h: &[T], eps: T) -> SmoothingWeights<T> {
    assert_eq!(g.len(), h.len());
    let n = g.len();
    let mut wg = Vec::with_capacity(n);
    let mut wh = Vec::with_capacity(n);
    let mut denom = Vec::with_capacity(n);
    for (&a, &b) in g.iter().zip(h) {
        let s = (a * a + b * b + eps * eps).sqrt();
        wg.push(one_minus_ratio(a, b, eps, s));
        wh.push(one_minus_ratio(b, a, eps, s));
        denom.push(s);
    }
    SmoothingWeights { wg, wh, denom, eps }
}

/// Diagonals of `M^G`, `M^H`, `M^{GH}`, scaled by the multipliers. With
/// `s = √(G² + H² + ε²)`:
/// `mG = λ(H² + ε²)/s³`, `mH = λ(G² + ε²)/s³`, `mGH = −λ G H / s³`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureCoeffs<T> {
    pub mg: Vec<T>,
    pub mh: Vec<T>,
    pub mgh: Vec<T>,
}

pub fn fb_curvature<T: Scalar>(g: &[T], h: &[T], lambda: &[T], eps: T) -> CurvatureCoeffs<T> {
    let w = fb_weights(g, h, eps);
    curvature_from_weights(g, h, lambda, &w)
}

/// Same as [`fb_curvature`] but reuses the cached denominators.
pub fn curvature_from_weights<T: Scalar>(
    g: &[T],
    h: &[T],
    lambda: &[T],
    w: &SmoothingWeights<T>,
) -> CurvatureCoeffs<T> {
    assert_eq!(g.len(), lambda.len());
    let e2 = w.eps * w.eps;
    let n = g.len();
    let (mut mg, mut mh, mut mgh) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let s = w.denom[i];
        let f = lambda[i] / (s * s * s);
        mg.push(f * (h[i] * h[i] + e2));
        mh.push(f * (g[i] * g[i] + e2));
        mgh.push(-f * g[i] * h[i]);
    }
    CurvatureCoeffs { mg, mh, mgh }
}
