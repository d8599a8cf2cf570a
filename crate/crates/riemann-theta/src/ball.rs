//! Midpoint–radius interval ("ball") arithmetic over arbitrary-precision floats.
//!
//! A `RealBall` is an exact dyadic midpoint together with a nonnegative radius
//! kept at a fixed low precision and always rounded upward, so that every
//! operation returns a set guaranteed to contain the exact image set.
//! A `ComplexBall` is a complex disk: exact dyadic midpoint (re, im) plus a
//! single radius bounding |x − mid|.
//!
//! Midpoints are computed at the working precision with round-to-nearest and
//! the rounding error is absorbed into the radius (1 ulp bound via the result
//! exponent). Radii saturate to +∞ on overflow; a ball with infinite radius
//! carries no information but is still sound.

use std::cmp::Ordering;
use std::fmt;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering as AtOrd};

use rug::float::Round;
use rug::ops::NegAssign;
use rug::{Float, Integer};

use crate::Error;

/// Number of mantissa bits kept for radii. Radius arithmetic always rounds up.
pub const RAD_PREC: u32 = 30;

// ---------------------------------------------------------------------------
// Precision
// ---------------------------------------------------------------------------

/// How a precision figure is to be interpreted by the caller.
///
/// The kind does not change how midpoints are rounded (that is always governed
/// by `bits`); it documents which error contract the caller is tracking:
/// plain absolute error 2^{-bits}, relative error, or absolute error scaled by
/// the natural magnitude exp(−Dist²) of the value ("shifted").
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrecisionKind {
    Absolute,
    Relative,
    ShiftedAbsolute,
}

/// Working precision for ball operations: a bit count plus its interpretation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Precision {
    pub bits: u32,
    pub kind: PrecisionKind,
}

impl Precision {
    pub fn relative(bits: u32) -> Self {
        assert!(bits >= 2, "precision must be at least 2 bits");
        Precision { bits, kind: PrecisionKind::Relative }
    }

    pub fn absolute(bits: u32) -> Self {
        assert!(bits >= 2, "precision must be at least 2 bits");
        Precision { bits, kind: PrecisionKind::Absolute }
    }

    pub fn shifted(bits: u32) -> Self {
        assert!(bits >= 2, "precision must be at least 2 bits");
        Precision { bits, kind: PrecisionKind::ShiftedAbsolute }
    }
}

// ---------------------------------------------------------------------------
// Multiplication counter (used to verify the <1 mult/point property)
// ---------------------------------------------------------------------------

static MUL_COUNT: AtomicU64 = AtomicU64::new(0);
static MUL_THRESHOLD: AtomicU32 = AtomicU32::new(u32::MAX);

/// Instrumentation for counting full-precision complex midpoint
/// multiplications. Disabled (threshold = u32::MAX) by default.
pub mod mulcount {
    use super::*;

    /// Reset the counter and count multiplications at precision ≥ `threshold`.
    pub fn reset(threshold: u32) {
        MUL_COUNT.store(0, AtOrd::Relaxed);
        MUL_THRESHOLD.store(threshold, AtOrd::Relaxed);
    }

    pub fn disable() {
        MUL_THRESHOLD.store(u32::MAX, AtOrd::Relaxed);
    }

    pub fn get() -> u64 {
        MUL_COUNT.load(AtOrd::Relaxed)
    }

    pub(super) fn tick(prec: u32) {
        if prec >= MUL_THRESHOLD.load(AtOrd::Relaxed) {
            MUL_COUNT.fetch_add(1, AtOrd::Relaxed);
        }
    }
}

// ---------------------------------------------------------------------------
// Radius helpers: RAD_PREC bits, always rounded up
// ---------------------------------------------------------------------------

pub(crate) fn rad_zero() -> Float {
    Float::new(RAD_PREC)
}

pub(crate) fn rad_inf() -> Float {
    Float::with_val(RAD_PREC, rug::float::Special::Infinity)
}

/// 2^e as a radius float (exact).
pub(crate) fn rad_pow2(e: i64) -> Float {
    let mut f = Float::with_val(RAD_PREC, 1);
    f <<= e as i32;
    f
}

pub(crate) fn radd(a: &Float, b: &Float) -> Float {
    Float::with_val_round(RAD_PREC, a + b, Round::Up).0
}

pub(crate) fn radd3(a: &Float, b: &Float, c: &Float) -> Float {
    radd(&radd(a, b), c)
}

pub(crate) fn rmul(a: &Float, b: &Float) -> Float {
    Float::with_val_round(RAD_PREC, a * b, Round::Up).0
}

/// a / b rounded up; +∞ if b ≤ 0.
pub(crate) fn rdiv(a: &Float, b: &Float) -> Float {
    if b.cmp0() != Some(Ordering::Greater) {
        return rad_inf();
    }
    Float::with_val_round(RAD_PREC, a / b, Round::Up).0
}

/// |x| rounded up to radius precision.
pub(crate) fn abs_up(x: &Float) -> Float {
    Float::with_val_round(RAD_PREC, x.abs_ref(), Round::Up).0
}

/// |x| rounded down to radius precision.
pub(crate) fn abs_down(x: &Float) -> Float {
    Float::with_val_round(RAD_PREC, x.abs_ref(), Round::Down).0
}

/// 1-ulp bound on the rounding error committed when `mid` was produced at
/// precision `prec` with the given inexactness ternary. Zero when exact.
fn ulp_err(mid: &Float, prec: u32, ternary: Ordering) -> Float {
    if ternary == Ordering::Equal {
        return rad_zero();
    }
    if mid.is_infinite() || mid.is_nan() {
        return rad_inf();
    }
    match mid.get_exp() {
        Some(e) => rad_pow2(e as i64 - prec as i64),
        // An inexact zero cannot occur with MPFR's huge exponent range,
        // but stay sound if it somehow does.
        None => rad_inf(),
    }
}

/// Round an exact computation to `prec` bits (nearest) and return the value
/// together with an upward bound on the committed rounding error.
macro_rules! round_mid {
    ($prec:expr, $expr:expr) => {{
        let (val, t) = Float::with_val_round($prec, $expr, Round::Nearest);
        let err = ulp_err(&val, $prec, t);
        (val, err)
    }};
}

// ---------------------------------------------------------------------------
// RealBall
// ---------------------------------------------------------------------------

/// Real interval with exact dyadic midpoint and low-precision upward radius.
#[derive(Clone, PartialEq)]
pub struct RealBall {
    mid: Float,
    rad: Float,
}

impl fmt::Debug for RealBall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.6e} ± {:.3e}]", self.mid.to_f64(), self.rad.to_f64())
    }
}

impl RealBall {
    pub fn zero() -> Self {
        RealBall { mid: Float::new(8), rad: rad_zero() }
    }

    pub fn one() -> Self {
        RealBall { mid: Float::with_val(8, 1), rad: rad_zero() }
    }

    /// Exact ball from any dyadic float (radius 0).
    pub fn exact(mid: Float) -> Self {
        debug_assert!(!mid.is_nan());
        RealBall { mid, rad: rad_zero() }
    }

    pub fn from_i64(v: i64) -> Self {
        RealBall::exact(Float::with_val(64, v))
    }

    /// f64 values are dyadic, hence exact.
    pub fn from_f64(v: f64) -> Self {
        RealBall::exact(Float::with_val(53, v))
    }

    pub fn from_mid_rad(mid: Float, rad: Float) -> Self {
        debug_assert!(rad.cmp0() != Some(Ordering::Less));
        let rad = Float::with_val_round(RAD_PREC, &rad, Round::Up).0;
        RealBall { mid, rad }
    }

    /// The interval [lo, hi] as a ball.
    pub fn from_endpoints(lo: &Float, hi: &Float, prec: u32) -> Self {
        let (mid, t) = Float::with_val_round(prec, lo + hi, Round::Nearest);
        let mut mid = mid;
        let e1 = ulp_err(&mid, prec, t);
        mid >>= 1;
        let half_width = {
            let d = Float::with_val_round(RAD_PREC, hi - lo, Round::Up).0;
            Float::with_val_round(RAD_PREC, &d >> 1, Round::Up).0
        };
        RealBall { mid, rad: radd(&half_width, &e1) }
    }

    /// Parse a decimal string into a ball at `prec` bits (outward 1-ulp pad
    /// when the value is not exactly representable).
    pub fn from_decimal(s: &str, prec: u32) -> Result<Self, Error> {
        let incomplete = Float::parse(s).map_err(|e| Error::Parse(format!("bad number `{s}`: {e}")))?;
        let (mid, t) = Float::with_val_round(prec, incomplete, Round::Nearest);
        let rad = ulp_err(&mid, prec, t);
        Ok(RealBall { mid, rad })
    }

    /// π as a ball at `prec` bits.
    pub fn pi(prec: u32) -> Self {
        let (mid, t) = Float::with_val_round(prec, rug::float::Constant::Pi, Round::Nearest);
        let rad = ulp_err(&mid, prec, t);
        RealBall { mid, rad }
    }

    pub fn mid(&self) -> &Float {
        &self.mid
    }

    pub fn rad(&self) -> &Float {
        &self.rad
    }

    pub fn is_finite(&self) -> bool {
        self.mid.is_finite() && self.rad.is_finite()
    }

    /// Upper endpoint, rounded up (midpoint precision).
    pub fn upper(&self) -> Float {
        let p = self.mid.prec().max(RAD_PREC);
        Float::with_val_round(p, &self.mid + &self.rad, Round::Up).0
    }

    /// Lower endpoint, rounded down (midpoint precision).
    pub fn lower(&self) -> Float {
        let p = self.mid.prec().max(RAD_PREC);
        Float::with_val_round(p, &self.mid - &self.rad, Round::Down).0
    }

    pub fn to_f64(&self) -> f64 {
        self.mid.to_f64()
    }

    pub fn contains_zero(&self) -> bool {
        let a = Float::with_val_round(RAD_PREC, self.mid.abs_ref(), Round::Down).0;
        a <= self.rad
    }

    pub fn contains(&self, x: &Float) -> bool {
        let p = x.prec().max(self.mid.prec()) + 8;
        let d = Float::with_val_round(RAD_PREC, Float::with_val(p, x - &self.mid).abs(), Round::Down).0;
        d <= self.rad
    }

    /// Entirely positive?
    pub fn is_positive(&self) -> bool {
        self.lower().cmp0() == Some(Ordering::Greater)
    }

    /// Entirely negative?
    pub fn is_negative(&self) -> bool {
        self.upper().cmp0() == Some(Ordering::Less)
    }

    pub fn overlaps(&self, other: &RealBall) -> bool {
        let p = self.mid.prec().max(other.mid.prec()) + 8;
        let d = Float::with_val_round(RAD_PREC, Float::with_val(p, &self.mid - &other.mid).abs(), Round::Down).0;
        d <= radd(&self.rad, &other.rad)
    }

    pub fn neg(&self) -> RealBall {
        let mut mid = self.mid.clone();
        mid.neg_assign();
        RealBall { mid, rad: self.rad.clone() }
    }

    pub fn add(&self, other: &RealBall, prec: u32) -> RealBall {
        let (mid, e) = round_mid!(prec, &self.mid + &other.mid);
        RealBall { mid, rad: radd3(&self.rad, &other.rad, &e) }
    }

    pub fn sub(&self, other: &RealBall, prec: u32) -> RealBall {
        let (mid, e) = round_mid!(prec, &self.mid - &other.mid);
        RealBall { mid, rad: radd3(&self.rad, &other.rad, &e) }
    }

    pub fn mul(&self, other: &RealBall, prec: u32) -> RealBall {
        let (mid, e) = round_mid!(prec, &self.mid * &other.mid);
        // |a||rb| + |b||ra| + ra rb
        let p1 = rmul(&abs_up(&self.mid), &other.rad);
        let p2 = rmul(&abs_up(&other.mid), &self.rad);
        let p3 = rmul(&self.rad, &other.rad);
        RealBall { mid, rad: radd(&radd3(&p1, &p2, &p3), &e) }
    }

    pub fn sqr(&self, prec: u32) -> RealBall {
        self.mul(self, prec)
    }

    /// Multiply by 2^k (exact).
    pub fn scale_pow2(&self, k: i32) -> RealBall {
        let mut mid = self.mid.clone();
        mid <<= k;
        let mut rad = self.rad.clone();
        rad <<= k;
        RealBall { mid, rad }
    }

    pub fn mul_i64(&self, k: i64, prec: u32) -> RealBall {
        self.mul(&RealBall::from_i64(k), prec)
    }

    /// Reciprocal; infinite-radius ball when 0 is contained.
    pub fn inv(&self, prec: u32) -> RealBall {
        let lo = {
            let a = abs_down(&self.mid);
            Float::with_val_round(RAD_PREC, &a - &self.rad, Round::Down).0
        };
        if lo.cmp0() != Some(Ordering::Greater) {
            return RealBall { mid: Float::new(8), rad: rad_inf() };
        }
        let (mid, e) = round_mid!(prec, self.mid.recip_ref());
        // |1/x - 1/m| ≤ r / (|m| (|m| - r))
        let denom = rmul(&abs_down(&self.mid), &lo);
        let rad = radd(&rdiv(&self.rad, &denom), &e);
        RealBall { mid, rad }
    }

    pub fn div(&self, other: &RealBall, prec: u32) -> RealBall {
        self.mul(&other.inv(prec), prec)
    }

    /// Monotone-function enclosure helper: midpoint f(mid) at `prec`, radius
    /// from endpoint images (f must be monotone on the interval; f_lo/f_hi
    /// must be directed roundings of the images at full precision).
    fn monotone_rad(&self, mid: &Float, e: &Float, f_lo: Float, f_hi: Float) -> Float {
        let d1 = Float::with_val_round(RAD_PREC, &f_hi - mid, Round::Up).0;
        let d2 = Float::with_val_round(RAD_PREC, mid - &f_lo, Round::Up).0;
        let m = if d1 > d2 { d1 } else { d2 };
        let m = if m.cmp0() == Some(Ordering::Less) { rad_zero() } else { m };
        radd(&m, e)
    }

    /// Square root. The ball must not extend below 0 unless it touches it,
    /// in which case the enclosure is widened to cover [0, hi].
    pub fn sqrt(&self, prec: u32) -> Result<RealBall, Error> {
        let hi = self.upper();
        if hi.cmp0() == Some(Ordering::Less) {
            return Err(Error::OutOfDomain("sqrt of negative interval".into()));
        }
        let lo = {
            let l = self.lower();
            if l.cmp0() == Some(Ordering::Less) {
                Float::new(RAD_PREC)
            } else {
                l
            }
        };
        let m = if self.mid.cmp0() == Some(Ordering::Less) { Float::new(prec) } else { self.mid.clone() };
        let (mid, t) = Float::with_val_round(prec, m.sqrt_ref(), Round::Nearest);
        let e = ulp_err(&mid, prec, t);
        let f_lo = Float::with_val_round(prec, lo.sqrt_ref(), Round::Down).0;
        let f_hi = Float::with_val_round(prec, hi.sqrt_ref(), Round::Up).0;
        let rad = self.monotone_rad(&mid, &e, f_lo, f_hi);
        Ok(RealBall { mid, rad })
    }

    pub fn exp(&self, prec: u32) -> RealBall {
        let (mid, t) = Float::with_val_round(prec, self.mid.exp_ref(), Round::Nearest);
        let e = ulp_err(&mid, prec, t);
        let f_lo = Float::with_val_round(prec, self.lower().exp_ref(), Round::Down).0;
        let f_hi = Float::with_val_round(prec, self.upper().exp_ref(), Round::Up).0;
        let rad = self.monotone_rad(&mid, &e, f_lo, f_hi);
        RealBall { mid, rad }
    }

    /// Natural logarithm; requires the ball to be entirely positive.
    pub fn ln(&self, prec: u32) -> Result<RealBall, Error> {
        let lo = self.lower();
        if lo.cmp0() != Some(Ordering::Greater) {
            return Err(Error::OutOfDomain("log of interval touching 0".into()));
        }
        let (mid, t) = Float::with_val_round(prec, self.mid.ln_ref(), Round::Nearest);
        let e = ulp_err(&mid, prec, t);
        let f_lo = Float::with_val_round(prec, lo.ln_ref(), Round::Down).0;
        let f_hi = Float::with_val_round(prec, self.upper().ln_ref(), Round::Up).0;
        let rad = self.monotone_rad(&mid, &e, f_lo, f_hi);
        Ok(RealBall { mid, rad })
    }

    /// cos(π·self): derivative bound |(cos πx)'| ≤ π folded into the radius.
    pub fn cos_pi(&self, prec: u32) -> RealBall {
        let pi = RealBall::pi(prec + 8);
        let t = self.mul(&pi, prec + 8);
        let (mid, tern) = Float::with_val_round(prec, t.mid.cos_ref(), Round::Nearest);
        let e = ulp_err(&mid, prec, tern);
        let mut rad = radd(&t.rad, &e);
        if rad > 2f64 {
            rad = Float::with_val(RAD_PREC, 2);
        }
        RealBall { mid, rad }
    }

    /// sin(π·self).
    pub fn sin_pi(&self, prec: u32) -> RealBall {
        let pi = RealBall::pi(prec + 8);
        let t = self.mul(&pi, prec + 8);
        let (mid, tern) = Float::with_val_round(prec, t.mid.sin_ref(), Round::Nearest);
        let e = ulp_err(&mid, prec, tern);
        let mut rad = radd(&t.rad, &e);
        if rad > 2f64 {
            rad = Float::with_val(RAD_PREC, 2);
        }
        RealBall { mid, rad }
    }

    /// Absolute value as a ball.
    pub fn abs(&self) -> RealBall {
        let mut mid = self.mid.clone();
        mid.abs_mut();
        let b = RealBall { mid, rad: self.rad.clone() };
        if b.contains_zero() {
            // fold to [0, hi]
            let hi = b.upper();
            RealBall::from_endpoints(&Float::new(RAD_PREC), &hi, b.mid.prec())
        } else {
            b
        }
    }

    /// Ball hull (smallest ball containing both).
    pub fn union(&self, other: &RealBall, prec: u32) -> RealBall {
        let lo1 = self.lower();
        let lo2 = other.lower();
        let hi1 = self.upper();
        let hi2 = other.upper();
        let lo = if lo1 < lo2 { lo1 } else { lo2 };
        let hi = if hi1 > hi2 { hi1 } else { hi2 };
        RealBall::from_endpoints(&lo, &hi, prec)
    }

    /// Widen the radius by `extra` (rounded up).
    pub fn pad(&self, extra: &Float) -> RealBall {
        RealBall { mid: self.mid.clone(), rad: radd(&self.rad, extra) }
    }
}

// ---------------------------------------------------------------------------
// ComplexBall
// ---------------------------------------------------------------------------

/// Complex disk {x : |x − (re + i·im)| ≤ rad} with exact dyadic midpoint.
#[derive(Clone, PartialEq)]
pub struct ComplexBall {
    re: Float,
    im: Float,
    rad: Float,
}

impl fmt::Debug for ComplexBall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{:.6e} {:+.6e}i ± {:.3e}]",
            self.re.to_f64(),
            self.im.to_f64(),
            self.rad.to_f64()
        )
    }
}

impl ComplexBall {
    pub fn zero() -> Self {
        ComplexBall { re: Float::new(8), im: Float::new(8), rad: rad_zero() }
    }

    pub fn one() -> Self {
        ComplexBall { re: Float::with_val(8, 1), im: Float::new(8), rad: rad_zero() }
    }

    pub fn i() -> Self {
        ComplexBall { re: Float::new(8), im: Float::with_val(8, 1), rad: rad_zero() }
    }

    pub fn exact(re: Float, im: Float) -> Self {
        ComplexBall { re, im, rad: rad_zero() }
    }

    pub fn from_f64s(re: f64, im: f64) -> Self {
        ComplexBall::exact(Float::with_val(53, re), Float::with_val(53, im))
    }

    pub fn from_real(r: &RealBall) -> Self {
        ComplexBall { re: r.mid.clone(), im: Float::new(8), rad: r.rad.clone() }
    }

    pub fn from_parts(re: &RealBall, im: &RealBall) -> Self {
        ComplexBall { re: re.mid.clone(), im: im.mid.clone(), rad: radd(&re.rad, &im.rad) }
    }

    pub fn from_mid_rad(re: Float, im: Float, rad: Float) -> Self {
        debug_assert!(rad.cmp0() != Some(Ordering::Less));
        let rad = Float::with_val_round(RAD_PREC, &rad, Round::Up).0;
        ComplexBall { re, im, rad }
    }

    pub fn re_mid(&self) -> &Float {
        &self.re
    }

    pub fn im_mid(&self) -> &Float {
        &self.im
    }

    pub fn rad(&self) -> &Float {
        &self.rad
    }

    /// The real part as a ball (projection of the disk).
    pub fn re_ball(&self) -> RealBall {
        RealBall { mid: self.re.clone(), rad: self.rad.clone() }
    }

    pub fn im_ball(&self) -> RealBall {
        RealBall { mid: self.im.clone(), rad: self.rad.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite() && self.rad.is_finite()
    }

    /// |midpoint| rounded up at radius precision.
    pub(crate) fn mid_abs_up(&self) -> Float {
        let h = Float::with_val_round(RAD_PREC, self.re.hypot_ref(&self.im), Round::Up).0;
        h
    }

    /// |midpoint| rounded down at radius precision.
    pub(crate) fn mid_abs_down(&self) -> Float {
        Float::with_val_round(RAD_PREC, self.re.hypot_ref(&self.im), Round::Down).0
    }

    /// Enclosure of |x| over the disk.
    pub fn abs(&self) -> RealBall {
        let (m, t) = Float::with_val_round(RAD_PREC + 23, self.re.hypot_ref(&self.im), Round::Nearest);
        let e = ulp_err(&m, RAD_PREC + 23, t);
        let b = RealBall { mid: m, rad: radd(&self.rad, &e) };
        if b.contains_zero() {
            let hi = b.upper();
            RealBall::from_endpoints(&Float::new(RAD_PREC), &hi, RAD_PREC + 23)
        } else {
            b
        }
    }

    pub fn contains_zero(&self) -> bool {
        self.mid_abs_down() <= self.rad
    }

    /// Does the disk contain the exact point (re, im)?
    pub fn contains_point(&self, re: &Float, im: &Float) -> bool {
        let p = re.prec().max(im.prec()).max(self.re.prec()).max(self.im.prec()) + 8;
        let dr = Float::with_val(p, re - &self.re);
        let di = Float::with_val(p, im - &self.im);
        let d = Float::with_val_round(RAD_PREC, dr.hypot_ref(&di), Round::Down).0;
        d <= self.rad
    }

    pub fn overlaps(&self, other: &ComplexBall) -> bool {
        let p = self.re.prec().max(other.re.prec()).max(self.im.prec()).max(other.im.prec()) + 8;
        let dr = Float::with_val(p, &self.re - &other.re);
        let di = Float::with_val(p, &self.im - &other.im);
        let d = Float::with_val_round(RAD_PREC, dr.hypot_ref(&di), Round::Down).0;
        d <= radd(&self.rad, &other.rad)
    }

    pub fn neg(&self) -> ComplexBall {
        let mut re = self.re.clone();
        let mut im = self.im.clone();
        re.neg_assign();
        im.neg_assign();
        ComplexBall { re, im, rad: self.rad.clone() }
    }

    pub fn conj(&self) -> ComplexBall {
        let mut im = self.im.clone();
        im.neg_assign();
        ComplexBall { re: self.re.clone(), im, rad: self.rad.clone() }
    }

    /// Multiply by i (exact).
    pub fn mul_i(&self) -> ComplexBall {
        let mut re = self.im.clone();
        re.neg_assign();
        ComplexBall { re, im: self.re.clone(), rad: self.rad.clone() }
    }

    /// Multiply by 2^k (exact).
    pub fn scale_pow2(&self, k: i32) -> ComplexBall {
        let mut re = self.re.clone();
        let mut im = self.im.clone();
        re <<= k;
        im <<= k;
        let mut rad = self.rad.clone();
        rad <<= k;
        ComplexBall { re, im, rad }
    }

    pub fn add(&self, other: &ComplexBall, prec: u32) -> ComplexBall {
        let (re, e1) = round_mid!(prec, &self.re + &other.re);
        let (im, e2) = round_mid!(prec, &self.im + &other.im);
        let rad = radd(&radd(&self.rad, &other.rad), &radd(&e1, &e2));
        ComplexBall { re, im, rad }
    }

    pub fn sub(&self, other: &ComplexBall, prec: u32) -> ComplexBall {
        let (re, e1) = round_mid!(prec, &self.re - &other.re);
        let (im, e2) = round_mid!(prec, &self.im - &other.im);
        let rad = radd(&radd(&self.rad, &other.rad), &radd(&e1, &e2));
        ComplexBall { re, im, rad }
    }

    /// Complex midpoint product with rounding errors tracked per component.
    ///
    /// Each of the four real products is rounded once and the two sums once;
    /// the error bound uses the product exponents (not the cancelled result)
    /// so catastrophic cancellation stays sound.
    fn mid_mul(a: &ComplexBall, b: &ComplexBall, prec: u32) -> (Float, Float, Float) {
        let (p1, e1) = round_mid!(prec, &a.re * &b.re);
        let (p2, e2) = round_mid!(prec, &a.im * &b.im);
        let (p3, e3) = round_mid!(prec, &a.re * &b.im);
        let (p4, e4) = round_mid!(prec, &a.im * &b.re);
        let (re, e5) = round_mid!(prec, &p1 - &p2);
        let (im, e6) = round_mid!(prec, &p3 + &p4);
        let err = radd(&radd3(&e1, &e2, &e5), &radd3(&e3, &e4, &e6));
        (re, im, err)
    }

    pub fn mul(&self, other: &ComplexBall, prec: u32) -> ComplexBall {
        mulcount::tick(prec);
        let (re, im, e) = Self::mid_mul(self, other, prec);
        let p1 = rmul(&self.mid_abs_up(), &other.rad);
        let p2 = rmul(&other.mid_abs_up(), &self.rad);
        let p3 = rmul(&self.rad, &other.rad);
        ComplexBall { re, im, rad: radd(&radd3(&p1, &p2, &p3), &e) }
    }

    pub fn sqr(&self, prec: u32) -> ComplexBall {
        mulcount::tick(prec);
        // (re+im)(re-im), 2·re·im
        let (s, es) = round_mid!(prec, &self.re + &self.im);
        let (d, ed) = round_mid!(prec, &self.re - &self.im);
        let (re, e1) = round_mid!(prec, &s * &d);
        let (mut im, e2) = round_mid!(prec, &self.re * &self.im);
        im <<= 1;
        // error from s,d roundings: es·(|d̂|+ed) + ed·|s| ≤ (es+ed)·(mag+ed)
        let mag = radd(&abs_up(&self.re), &abs_up(&self.im));
        let mag2 = radd(&mag, &ed);
        let cross = radd(&rmul(&es, &mag2), &rmul(&ed, &mag));
        let e2twice = radd(&e2, &e2);
        let m = self.mid_abs_up();
        let p1 = rmul(&m, &self.rad);
        let p1 = radd(&p1, &p1);
        let p3 = rmul(&self.rad, &self.rad);
        ComplexBall { re, im, rad: radd(&radd3(&p1, &p3, &cross), &radd3(&e1, &e2twice, &rad_zero())) }
    }

    pub fn mul_real(&self, other: &RealBall, prec: u32) -> ComplexBall {
        let (re, e1) = round_mid!(prec, &self.re * &other.mid);
        let (im, e2) = round_mid!(prec, &self.im * &other.mid);
        let p1 = rmul(&self.mid_abs_up(), &other.rad);
        let p2 = rmul(&abs_up(&other.mid), &self.rad);
        let p3 = rmul(&self.rad, &other.rad);
        ComplexBall { re, im, rad: radd(&radd3(&p1, &p2, &p3), &radd(&e1, &e2)) }
    }

    pub fn mul_i64(&self, k: i64, prec: u32) -> ComplexBall {
        self.mul_real(&RealBall::from_i64(k), prec)
    }

    /// Reciprocal. Infinite-radius ball when the disk contains 0.
    pub fn inv(&self, prec: u32) -> ComplexBall {
        let lo = Float::with_val_round(RAD_PREC, &self.mid_abs_down() - &self.rad, Round::Down).0;
        if lo.cmp0() != Some(Ordering::Greater) {
            return ComplexBall { re: Float::new(8), im: Float::new(8), rad: rad_inf() };
        }
        mulcount::tick(prec);
        // 1/(re+i·im) = (re − i·im)/(re²+im²)
        let (n, tn) = Float::with_val_round(prec + 8, {
            let r2 = self.re.square_ref();
            let i2 = self.im.square_ref();
            Float::with_val(prec + 8, r2) + Float::with_val(prec + 8, i2)
        }, Round::Nearest);
        let en = ulp_err(&n, prec + 8, tn);
        let _ = en; // absorbed by the derivative bound below
        let (re, e1) = round_mid!(prec, &self.re / &n);
        let (mut im, e2) = round_mid!(prec, &self.im / &n);
        im.neg_assign();
        // |1/x − 1/m| ≤ r/(|m|(|m|−r)); plus n's own rounding is ≤ 2 ulp of n,
        // which perturbs 1/m by ≤ 4·2^{-prec-8}/|m| — fold via one extra ulp pad.
        let denom = rmul(&self.mid_abs_down(), &lo);
        let prop = rdiv(&self.rad, &denom);
        let inv_up = rdiv(&Float::with_val(RAD_PREC, 1), &lo);
        let fold = rmul(&inv_up, &rad_pow2(-(prec as i64) - 4));
        ComplexBall { re, im, rad: radd(&radd3(&prop, &e1, &e2), &fold) }
    }

    pub fn div(&self, other: &ComplexBall, prec: u32) -> ComplexBall {
        self.mul(&other.inv(prec), prec)
    }

    /// The analytic square-root branch through the principal root of the
    /// midpoint, with certified radius. The enclosure covers the continuous
    /// branch over the whole disk; it agrees with the pointwise principal
    /// square root iff the disk avoids the cut (−∞, 0].
    pub fn sqrt_principal(&self, prec: u32) -> Result<ComplexBall, Error> {
        let lo = Float::with_val_round(RAD_PREC, &self.mid_abs_down() - &self.rad, Round::Down).0;
        if lo.cmp0() != Some(Ordering::Greater) {
            return Err(Error::AmbiguousRoot);
        }
        let p = prec + 8;
        // s = sqrt((|m| + |re|)/2); branch on sign of re for stability.
        let hyp = Float::with_val(p, self.re.hypot_ref(&self.im));
        let re_abs = Float::with_val(p, self.re.abs_ref());
        let mut t = Float::with_val(p, &hyp + &re_abs);
        t >>= 1;
        let s = Float::with_val(p, t.sqrt_ref());
        let (sr, si);
        if self.re.cmp0() != Some(Ordering::Less) {
            sr = s.clone();
            let mut q = Float::with_val(p, &self.im / &s);
            q >>= 1;
            si = q;
        } else {
            let mut v = s.clone();
            if self.im.cmp0() == Some(Ordering::Less) {
                v.neg_assign();
            }
            let mut q = Float::with_val(p, &self.im / &v);
            q >>= 1;
            sr = q;
            si = v;
        }
        let (re, _t1) = Float::with_val_round(prec, &sr, Round::Nearest);
        let (im, _t2) = Float::with_val_round(prec, &si, Round::Nearest);
        // derivative bound: |(√z)'| ≤ 1/(2√lo) on the disk
        let slo = Float::with_val_round(RAD_PREC, lo.sqrt_ref(), Round::Down).0;
        let two_slo = radd(&slo, &slo);
        let prop = rdiv(&self.rad, &two_slo);
        // composed midpoint ops at prec+8 plus the final rounding to prec commit
        // ≤ 2^{-prec+1} relative error per component; bound via sqrt(hyp) rounded up
        let mag = Float::with_val_round(RAD_PREC, hyp.sqrt_ref(), Round::Up).0;
        let fold = rmul(&mag, &rad_pow2(-(prec as i64) + 2));
        Ok(ComplexBall { re, im, rad: radd(&prop, &fold) })
    }

    /// Square root on the branch overlapping `hint`.
    ///
    /// Fails with `AmbiguousRoot` when the input disk contains 0, when both
    /// candidate roots overlap the hint, or when neither does.
    pub fn sqrt_with_hint(&self, hint: &ComplexBall, prec: u32) -> Result<ComplexBall, Error> {
        let r = self.sqrt_principal(prec)?;
        let rneg = r.neg();
        let o1 = r.overlaps(hint);
        let o2 = rneg.overlaps(hint);
        match (o1, o2) {
            (true, false) => Ok(r),
            (false, true) => Ok(rneg),
            _ => Err(Error::AmbiguousRoot),
        }
    }

    /// Integer power by square-and-multiply.
    pub fn pow_int(&self, n: i64, prec: u32) -> Result<ComplexBall, Error> {
        if n < 0 {
            let lo = Float::with_val_round(RAD_PREC, &self.mid_abs_down() - &self.rad, Round::Down).0;
            if lo.cmp0() != Some(Ordering::Greater) {
                return Err(Error::DivisionByZeroBall);
            }
        }
        let mut e = n.unsigned_abs();
        let mut base = self.clone();
        let mut acc = ComplexBall::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base, prec);
            }
            e >>= 1;
            if e > 0 {
                base = base.sqr(prec);
            }
        }
        if n < 0 {
            acc = acc.inv(prec);
        }
        Ok(acc)
    }

    /// e(x) := exp(πi·x).
    ///
    /// Uses the period-2 reduction of the real part (exact for dyadic
    /// midpoints) and the product form exp(−π·Im x)·(cos π·u + i·sin π·u).
    pub fn exp_pi_i(&self, prec: u32) -> ComplexBall {
        // reduce Re(x) mod 2 into [−1, 1]
        let two = Float::with_val(8, 2);
        let (u, t) = Float::with_val_round(self.re.prec().max(8), self.re.remainder_ref(&two), Round::Nearest);
        let ue = ulp_err(&u, self.re.prec().max(8), t);
        let u_ball = RealBall { mid: u, rad: radd(&self.rad, &ue) };
        let v_ball = RealBall { mid: self.im.clone(), rad: self.rad.clone() };

        let pi = RealBall::pi(prec + 8);
        let minus_pi_v = v_ball.mul(&pi, prec + 8).neg();
        let a = minus_pi_v.exp(prec + 8);
        let c = u_ball.cos_pi(prec + 8);
        let s = u_ball.sin_pi(prec + 8);
        let re = a.mul(&c, prec);
        let im = a.mul(&s, prec);
        ComplexBall { re: re.mid, im: im.mid, rad: radd(&re.rad, &im.rad) }
    }

    /// Widen the radius by `extra`.
    pub fn pad(&self, extra: &Float) -> ComplexBall {
        ComplexBall { re: self.re.clone(), im: self.im.clone(), rad: radd(&self.rad, extra) }
    }

    /// Round the midpoint to `prec` bits, folding the displacement into the radius.
    pub fn round_to(&self, prec: u32) -> ComplexBall {
        let (re, t1) = Float::with_val_round(prec, &self.re, Round::Nearest);
        let (im, t2) = Float::with_val_round(prec, &self.im, Round::Nearest);
        let e1 = ulp_err(&re, prec, t1);
        let e2 = ulp_err(&im, prec, t2);
        ComplexBall { re, im, rad: radd(&self.rad, &radd(&e1, &e2)) }
    }

    /// The exact midpoint as a zero-radius ball.
    pub fn mid_ball(&self) -> ComplexBall {
        ComplexBall { re: self.re.clone(), im: self.im.clone(), rad: rad_zero() }
    }
}

// ---------------------------------------------------------------------------
// Hex-dyadic serialization: ±0xH.Hp±E (exact round-trip)
// ---------------------------------------------------------------------------

/// Serialize a float exactly as `±0xH.HH…p±E` (value = 0xH.HH… × 2^E).
pub fn float_to_hex(x: &Float) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x.cmp0() == Some(Ordering::Less) { "-inf".into() } else { "inf".into() };
    }
    if x.cmp0() == Some(Ordering::Equal) {
        return "0x0p+0".into();
    }
    let (mant, exp) = x.to_integer_exp().expect("finite float");
    let neg = mant.cmp0() == Ordering::Less;
    let mut m = mant.abs();
    // strip trailing zero bits so the form is canonical
    let tz = m.find_one(0).unwrap_or(0);
    m >>= tz;
    let exp = exp as i64 + tz as i64;
    let hex = format!("{m:x}");
    let ndigits = hex.len() as i64;
    // value = 0x(hex) × 2^exp = 0xh.hhh × 2^{exp + 4(ndigits−1)}
    let pexp = exp + 4 * (ndigits - 1);
    let (head, tail) = hex.split_at(1);
    let sign = if neg { "-" } else { "" };
    if tail.is_empty() {
        format!("{sign}0x{head}p{pexp:+}")
    } else {
        format!("{sign}0x{head}.{tail}p{pexp:+}")
    }
}

/// Parse the exact hex-dyadic form produced by [`float_to_hex`].
pub fn float_from_hex(s: &str) -> Result<Float, Error> {
    let t = s.trim();
    match t {
        "inf" | "+inf" => return Ok(Float::with_val(RAD_PREC, rug::float::Special::Infinity)),
        "-inf" => return Ok(Float::with_val(RAD_PREC, rug::float::Special::NegInfinity)),
        "0x0p+0" | "0" => return Ok(Float::new(8)),
        _ => {}
    }
    let (neg, t) = match t.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let t = t.strip_prefix("0x").ok_or_else(|| Error::Parse(format!("expected 0x prefix in `{s}`")))?;
    let (mant_str, exp_str) = t
        .split_once(['p', 'P'])
        .ok_or_else(|| Error::Parse(format!("expected p exponent in `{s}`")))?;
    let pexp: i64 = exp_str
        .parse()
        .map_err(|_| Error::Parse(format!("bad exponent in `{s}`")))?;
    let digits: String = mant_str.chars().filter(|c| *c != '.').collect();
    let frac_digits = match mant_str.split_once('.') {
        Some((_, f)) => f.len() as i64,
        None => 0,
    };
    let m = Integer::from_str_radix(&digits, 16).map_err(|_| Error::Parse(format!("bad mantissa in `{s}`")))?;
    let bits = m.significant_bits().max(1);
    let mut f = Float::with_val(bits, &m);
    if neg {
        f.neg_assign();
    }
    let shift = pexp - 4 * frac_digits;
    f <<= shift as i32;
    Ok(f)
}

/// Serialize a complex ball as (re, im, rad) hex-dyadic strings.
pub fn ball_to_hex(x: &ComplexBall) -> (String, String, String) {
    (float_to_hex(x.re_mid()), float_to_hex(x.im_mid()), float_to_hex(x.rad()))
}

/// Parse a complex ball from (re, im, rad) hex-dyadic strings.
pub fn ball_from_hex(re: &str, im: &str, rad: &str) -> Result<ComplexBall, Error> {
    let re = float_from_hex(re)?;
    let im = float_from_hex(im)?;
    let rad = float_from_hex(rad)?;
    if rad.cmp0() == Some(Ordering::Less) {
        return Err(Error::Parse("negative radius".into()));
    }
    Ok(ComplexBall::from_mid_rad(re, im, rad))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
