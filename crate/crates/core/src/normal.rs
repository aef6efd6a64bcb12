//! Univariate and bivariate standard normal primitives.
//!
//! Infinite arguments are legal everywhere and are handled by exact sentinel
//! rules (`φ(±∞) = 0`, `Φ(-∞) = 0`, `Φ(+∞) = 1`), so category boundaries at
//! the ends of an ordinal scale never need finite stand-ins.

use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Largest admissible |ρ| for any bivariate evaluation and for estimation.
pub const RHO_BOUND: f64 = 0.999;

/// Number of Gauss-Legendre nodes used to integrate `∂Φ₂/∂ρ = φ₂` over `[0, ρ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LegendreOrder {
    Second,
    #[default]
    Third,
}

impl LegendreOrder {
    /// `(weight, node)` pairs on `[0, 1]`; the integral is `ρ·Σ wᵢ φ₂(x, y; nodeᵢ·ρ)`.
    fn rule(self) -> &'static [(f64, f64)] {
        // (3 ∓ √3)/6 and (1 ∓ √(3/5))/2
        const SECOND: [(f64, f64); 2] = [
            (0.5, 0.211_324_865_405_187_1),
            (0.5, 0.788_675_134_594_812_9),
        ];
        const THIRD: [(f64, f64); 3] = [
            (5.0 / 18.0, 0.112_701_665_379_258_3),
            (8.0 / 18.0, 0.5),
            (5.0 / 18.0, 0.887_298_334_620_741_7),
        ];
        match self {
            LegendreOrder::Second => &SECOND,
            LegendreOrder::Third => &THIRD,
        }
    }

    pub fn as_number(self) -> u8 {
        match self {
            LegendreOrder::Second => 2,
            LegendreOrder::Third => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            2 => Some(LegendreOrder::Second),
            3 => Some(LegendreOrder::Third),
            _ => None,
        }
    }
}

#[inline]
fn frac_1_sqrt_2pi<T: Real>() -> T {
    T::FRAC_2_SQRT_PI() * T::FRAC_1_SQRT_2() / T::lit(2.0)
}

/// Standard normal density.
#[inline]
pub fn norm_pdf<T: Real>(z: T) -> T {
    if z.is_infinite() {
        return T::zero();
    }
    frac_1_sqrt_2pi::<T>() * (-(z * z) / T::lit(2.0)).exp()
}

/// Standard normal distribution function, accurate in both tails.
#[inline]
pub fn norm_cdf<T: Real>(z: T) -> T {
    if z == T::infinity() {
        return T::one();
    }
    if z == T::neg_infinity() {
        return T::zero();
    }
    T::lit(0.5) * (-z * T::FRAC_1_SQRT_2()).erfc()
}

/// Inverse of [`norm_cdf`] on the open unit interval.
///
/// Rational starting point (Acklam) followed by two Halley corrections against
/// the accurate `norm_cdf`, which brings the result to working precision.
pub fn norm_quantile<T: Real>(p: T) -> Result<T> {
    if p.is_nan() || p <= T::zero() || p >= T::one() {
        return Err(Error::OutOfRange(p.as_f64()));
    }
    let pf = p.as_f64();
    let mut x = T::lit(acklam(pf));
    if pf > 0.5 {
        // Refine in the lower tail where 1 - p carries no cancellation.
        let q = T::one() - p;
        let mut y = -x;
        for _ in 0..2 {
            y = halley_step(y, q);
        }
        x = -y;
    } else {
        for _ in 0..2 {
            x = halley_step(x, p);
        }
    }
    Ok(x)
}

#[inline]
fn halley_step<T: Real>(x: T, p: T) -> T {
    let e = norm_cdf(x) - p;
    let u = e / frac_1_sqrt_2pi::<T>() * (x * x / T::lit(2.0)).exp();
    x - u / (T::one() + x * u / T::lit(2.0))
}

fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Standard bivariate normal density with correlation `rho`.
pub fn binorm_pdf<T: Real>(x: T, y: T, rho: T) -> Result<T> {
    if rho.is_nan() || rho.abs() >= T::one() {
        return Err(Error::SingularCorrelation(rho.as_f64()));
    }
    Ok(phi2(x, y, rho))
}

/// Unchecked bivariate density; any infinite coordinate gives 0.
#[inline]
pub(crate) fn phi2<T: Real>(x: T, y: T, rho: T) -> T {
    if x.is_infinite() || y.is_infinite() {
        return T::zero();
    }
    let one_m = T::one() - rho * rho;
    let q = x * x - T::lit(2.0) * rho * x * y + y * y;
    (-q / (T::lit(2.0) * one_m)).exp() / (T::lit(2.0) * T::PI() * one_m.sqrt())
}

/// `∂φ₂/∂ρ`, finite coordinates only.
#[inline]
fn phi2_drho<T: Real>(x: T, y: T, rho: T) -> T {
    let one_m = T::one() - rho * rho;
    let q = x * x - T::lit(2.0) * rho * x * y + y * y;
    phi2(x, y, rho) * ((rho + x * y) / one_m - rho * q / (one_m * one_m))
}

fn check_rho<T: Real>(rho: T) -> Result<()> {
    if rho.is_nan() || rho.abs() > T::lit(RHO_BOUND) {
        Err(Error::SingularCorrelation(rho.as_f64()))
    } else {
        Ok(())
    }
}

/// Resolves the degenerate cases of `P(X ≤ x, Y ≤ y)` with an infinite limit.
#[inline]
fn cdf_sentinel<T: Real>(x: T, y: T) -> Option<T> {
    if x == T::neg_infinity() || y == T::neg_infinity() {
        Some(T::zero())
    } else if x == T::infinity() {
        Some(norm_cdf(y))
    } else if y == T::infinity() {
        Some(norm_cdf(x))
    } else {
        None
    }
}

/// Bivariate normal CDF by Gauss-Legendre quadrature of `φ₂` along ρ.
pub fn binorm_cdf_legendre<T: Real>(x: T, y: T, rho: T, order: LegendreOrder) -> Result<T> {
    check_rho(rho)?;
    Ok(CdfKernel::Legendre(order).cdf(x, y, rho))
}

/// High-accuracy bivariate normal CDF used as a reference.
///
/// Integrates `Φ₂(x, y; ρ) = Φ(x)Φ(y) + ∫₀^ρ φ₂(x, y; r) dr` after the
/// substitution `r = sin θ`, which removes the `1/√(1 - r²)` singularity.
/// Adaptive Simpson to an absolute error well below 1e-10 in `f64`.
pub fn binorm_cdf_oracle<T: Real>(x: T, y: T, rho: T) -> Result<T> {
    check_rho(rho)?;
    Ok(oracle_unchecked(x, y, rho))
}

fn oracle_unchecked<T: Real>(x: T, y: T, rho: T) -> T {
    if let Some(v) = cdf_sentinel(x, y) {
        return v;
    }
    let base = norm_cdf(x) * norm_cdf(y);
    if rho == T::zero() {
        return base;
    }
    let two_pi = T::lit(2.0) * T::PI();
    let xx_yy = x * x + y * y;
    let two_xy = T::lit(2.0) * x * y;
    let f = |t: T| {
        let c = t.cos();
        (-(xx_yy - two_xy * t.sin()) / (T::lit(2.0) * c * c)).exp() / two_pi
    };
    let upper = rho.asin();
    let tol = T::lit(1e-13).max(T::epsilon() * T::lit(16.0));
    base + adaptive_simpson(&f, T::zero(), upper, tol)
}

fn adaptive_simpson<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T, tol: T) -> T {
    let fa = f(a);
    let fb = f(b);
    let m = (a + b) / T::lit(2.0);
    let fm = f(m);
    let whole = (b - a) / T::lit(6.0) * (fa + T::lit(4.0) * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<T: Real, F: Fn(T) -> T>(
    f: &F,
    a: T,
    b: T,
    fa: T,
    fm: T,
    fb: T,
    whole: T,
    tol: T,
    depth: u32,
) -> T {
    let m = (a + b) / T::lit(2.0);
    let lm = (a + m) / T::lit(2.0);
    let rm = (m + b) / T::lit(2.0);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / T::lit(6.0) * (fa + T::lit(4.0) * flm + fm);
    let right = (b - m) / T::lit(6.0) * (fm + T::lit(4.0) * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || !(delta.abs() > T::lit(15.0) * tol) {
        return left + right + delta / T::lit(15.0);
    }
    // Below a few ulps the error test can no longer be met.
    let half = (tol / T::lit(2.0)).max(T::epsilon());
    simpson_rec(f, a, m, fa, flm, fm, left, half, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, half, depth - 1)
}

/// The bivariate CDF used inside the moment system, together with its exact
/// partial derivatives.
///
/// `Legendre` differentiates the quadrature formula itself, so the gradient is
/// consistent with the moments it is paired with. `Exact` uses the reference
/// integral, whose derivatives are the closed forms
/// `∂Φ₂/∂x = φ(x)Φ((y - ρx)/√(1 - ρ²))` and `∂Φ₂/∂ρ = φ₂(x, y; ρ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CdfKernel {
    Legendre(LegendreOrder),
    Exact,
}

impl Default for CdfKernel {
    fn default() -> Self {
        CdfKernel::Legendre(LegendreOrder::Third)
    }
}

impl From<LegendreOrder> for CdfKernel {
    fn from(order: LegendreOrder) -> Self {
        CdfKernel::Legendre(order)
    }
}

impl CdfKernel {
    /// `P(X ≤ x, Y ≤ y)`. Callers guarantee `|rho| ≤ RHO_BOUND`.
    pub fn cdf<T: Real>(self, x: T, y: T, rho: T) -> T {
        if let Some(v) = cdf_sentinel(x, y) {
            return v;
        }
        match self {
            CdfKernel::Exact => oracle_unchecked(x, y, rho),
            CdfKernel::Legendre(order) => {
                let mut acc = T::zero();
                for &(w, c) in order.rule() {
                    acc += T::lit(w) * phi2(x, y, T::lit(c) * rho);
                }
                rho * acc + norm_cdf(x) * norm_cdf(y)
            }
        }
    }

    /// Partial derivative of [`CdfKernel::cdf`] in its first argument.
    pub fn d_dx<T: Real>(self, x: T, y: T, rho: T) -> T {
        if x.is_infinite() || y == T::neg_infinity() {
            return T::zero();
        }
        if y == T::infinity() {
            return norm_pdf(x);
        }
        match self {
            CdfKernel::Exact => {
                let s = (T::one() - rho * rho).sqrt();
                norm_pdf(x) * norm_cdf((y - rho * x) / s)
            }
            CdfKernel::Legendre(order) => {
                let mut acc = T::zero();
                for &(w, c) in order.rule() {
                    let r = T::lit(c) * rho;
                    acc += T::lit(w) * phi2(x, y, r) * (r * y - x) / (T::one() - r * r);
                }
                rho * acc + norm_pdf(x) * norm_cdf(y)
            }
        }
    }

    /// Partial derivative of [`CdfKernel::cdf`] in `rho`.
    pub fn d_drho<T: Real>(self, x: T, y: T, rho: T) -> T {
        if x.is_infinite() || y.is_infinite() {
            return T::zero();
        }
        match self {
            CdfKernel::Exact => phi2(x, y, rho),
            CdfKernel::Legendre(order) => {
                let mut acc = T::zero();
                for &(w, c) in order.rule() {
                    let r = T::lit(c) * rho;
                    acc += T::lit(w) * (phi2(x, y, r) + r * phi2_drho(x, y, r));
                }
                acc
            }
        }
    }
}
