//! Scalar float math that works with and without `std`.
//!
//! `core` has no transcendental functions; route everything through here so the
//! crate body never calls `f64` inherent math methods directly.

#![allow(dead_code)]

macro_rules! unary {
    ($name:ident, $method:ident, $libm:ident) => {
        #[cfg(feature = "std")]
        #[inline(always)]
        pub(crate) fn $name(x: f64) -> f64 {
            x.$method()
        }
        #[cfg(not(feature = "std"))]
        #[inline(always)]
        pub(crate) fn $name(x: f64) -> f64 {
            libm::$libm(x)
        }
    };
}

unary!(exp, exp, exp);
unary!(ln, ln, log);
unary!(ln_1p, ln_1p, log1p);
unary!(sqrt, sqrt, sqrt);
unary!(sin, sin, sin);
unary!(cos, cos, cos);
unary!(tanh, tanh, tanh);
unary!(abs, abs, fabs);
unary!(floor, floor, floor);
unary!(round, round, round);

#[cfg(feature = "std")]
#[inline(always)]
pub(crate) fn atan2(y: f64, x: f64) -> f64 {
    y.atan2(x)
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub(crate) fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub(crate) fn hypot(x: f64, y: f64) -> f64 {
    x.hypot(y)
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub(crate) fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

/// Numerically stable `ln(1 + exp(x))`.
#[inline(always)]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + ln_1p(exp(-x))
    } else {
        ln_1p(exp(x))
    }
}

#[inline(always)]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}
