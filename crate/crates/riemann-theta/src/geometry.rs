//! Lattice geometry underlying theta summation.
//!
//! Everything here lives in the metric ‖x‖ = ‖Cx‖₂ given by an upper-triangular
//! Cholesky factor C with positive diagonal c_1..c_g (for theta series, C is
//! the factor of π·Im τ). The module provides:
//!
//! * squared distances from a point to the integer lattice ([`dist_sq`]) and
//!   the squared length of a shortest nonzero vector ([`shortest_sq`]),
//! * certified upper bounds for the series tails left out when summation is
//!   truncated to an ellipsoid ([`tail_bound_new`], [`tail_bound_old`],
//!   [`tail_bound_shifted`]),
//! * selection of a truncation radius achieving a target precision
//!   ([`choose_radius`], [`radius_for_sum`], [`radius_for_jets`]),
//! * the recursive tree of lattice points inside an ellipsoid
//!   ([`EllipsoidTree`], [`build_ellipsoid`]).

use rug::float::Round;
use rug::Float;

use crate::ball::RealBall;
use crate::mat::RMat;
use crate::siegel::SiegelContext;
use crate::Error;

/// Working precision for ellipsoid enumeration; the tree only has to place
/// integer points on the right side of interval endpoints, so a few bits of
/// slack beyond f64 are plenty.
pub const ELLIPSOID_WORKPREC: u32 = 32;

// ---------------------------------------------------------------------------
// Small interval helpers
// ---------------------------------------------------------------------------

fn ball_min(a: &RealBall, b: &RealBall, prec: u32) -> RealBall {
    let lo = {
        let (x, y) = (a.lower(), b.lower());
        if x < y { x } else { y }
    };
    let hi = {
        let (x, y) = (a.upper(), b.upper());
        if x < y { x } else { y }
    };
    RealBall::from_endpoints(&lo, &hi, prec)
}

fn ball_max(a: &RealBall, b: &RealBall, prec: u32) -> RealBall {
    let lo = {
        let (x, y) = (a.lower(), b.lower());
        if x > y { x } else { y }
    };
    let hi = {
        let (x, y) = (a.upper(), b.upper());
        if x > y { x } else { y }
    };
    RealBall::from_endpoints(&lo, &hi, prec)
}

fn ball_powi(x: &RealBall, k: usize, prec: u32) -> RealBall {
    let mut acc = RealBall::one();
    let mut base = x.clone();
    let mut k = k;
    while k > 0 {
        if k & 1 == 1 {
            acc = acc.mul(&base, prec);
        }
        k >>= 1;
        if k > 0 {
            base = base.sqr(prec);
        }
    }
    acc
}

fn ceil_to_i64(x: &Float) -> i64 {
    x.clone()
        .ceil()
        .to_integer()
        .and_then(|z| z.to_i64())
        .expect("lattice bound out of i64 range")
}

fn floor_to_i64(x: &Float) -> i64 {
    x.clone()
        .floor()
        .to_integer()
        .and_then(|z| z.to_i64())
        .expect("lattice bound out of i64 range")
}

fn round_to_i64(x: &Float) -> i64 {
    x.clone()
        .round()
        .to_integer()
        .and_then(|z| z.to_i64())
        .expect("lattice coordinate out of i64 range")
}

/// Enclosure of { dist(w, Z)² : w ∈ ball }, the squared distance to the
/// nearest integer. Handles wide input intervals: the minimum is 0 when the
/// interval contains an integer and the maximum saturates at 1/4 when it
/// contains a half-integer.
fn frac_dist_sq(w: &RealBall, prec: u32) -> RealBall {
    let lo = w.lower();
    let hi = w.upper();
    let frac = |x: &Float| -> Float {
        let r = x.clone().round();
        let mut d = Float::with_val(prec, x - &r);
        d.abs_mut();
        d
    };
    let d_lo = frac(&lo);
    let d_hi = frac(&hi);
    let has_integer = {
        let k = lo.clone().ceil();
        k <= hi
    };
    let has_half = {
        // a half-integer m + 1/2 lies inside iff some odd integer is in [2lo, 2hi]
        let two_lo = Float::with_val(lo.prec() + 1, &lo * 2u32);
        let two_hi = Float::with_val(hi.prec() + 1, &hi * 2u32);
        let mut k = two_lo.clone().ceil().to_integer().expect("finite endpoint");
        if k.is_even() {
            k += 1;
        }
        Float::with_val(two_hi.prec(), &k) <= two_hi
    };
    let dmin = if has_integer {
        Float::new(32)
    } else if d_lo < d_hi {
        d_lo.clone()
    } else {
        d_hi.clone()
    };
    let dmax = if has_half {
        Float::with_val(32, 0.5)
    } else if d_lo > d_hi {
        d_lo
    } else {
        d_hi
    };
    let (lo2, _) = Float::with_val_round(prec, dmin.square_ref(), Round::Down);
    let (hi2, _) = Float::with_val_round(prec, dmax.square_ref(), Round::Up);
    RealBall::from_endpoints(&lo2, &hi2, prec)
}

// ---------------------------------------------------------------------------
// Lattice distances
// ---------------------------------------------------------------------------

/// For each level d = 2..g, the back-substituted column X_d = C'⁻¹ Ξ, where C'
/// is the leading (d−1)×(d−1) block of C and Ξ its column above c_d. Shifting
/// the center by −X_d·(n_d − v_d) turns the d-dimensional problem into a
/// (d−1)-dimensional one with the same leading block.
pub(crate) fn projection_columns(c: &RMat, prec: u32) -> Vec<Vec<RealBall>> {
    let g = c.rows;
    let mut cols = Vec::new();
    for d in 2..=g {
        let m = d - 1;
        let mut x: Vec<RealBall> = (0..m).map(|i| c.at(i, m).clone()).collect();
        for i in (0..m).rev() {
            let mut s = x[i].clone();
            for j in i + 1..m {
                s = s.sub(&c.at(i, j).mul(&x[j], prec), prec);
            }
            x[i] = s.div(c.at(i, i), prec);
        }
        cols.push(x);
    }
    cols
}

fn offset_norm_sq(c: &RMat, v: &[RealBall], n: &[i64], prec: u32) -> RealBall {
    let g = v.len();
    let mut acc = RealBall::zero();
    for i in 0..g {
        let mut row = RealBall::zero();
        for j in i..g {
            let dj = RealBall::from_i64(n[j]).sub(&v[j], prec);
            row = row.add(&c.at(i, j).mul(&dj, prec), prec);
        }
        acc = acc.add(&row.sqr(prec), prec);
    }
    acc
}

struct DistSearch<'a> {
    c: &'a RMat,
    proj: &'a [Vec<RealBall>],
    prec: u32,
    best: RealBall,
}

impl<'a> DistSearch<'a> {
    /// Explore level d with current center `w` (length d) and accumulated
    /// squared mass `acc` from the already-fixed coordinates. `exclude_origin`
    /// forbids the all-zero point (used for shortest-vector search); it stays
    /// set only while every fixed coordinate is 0 and the center is exactly 0.
    fn run(&mut self, w: &[RealBall], acc: &RealBall, exclude_origin: bool) {
        let prec = self.prec;
        let d = w.len();
        let cd = self.c.at(d - 1, d - 1);
        if d == 1 {
            let val = if exclude_origin {
                // nearest admissible points are ±1 (center is exactly 0 here)
                acc.add(&cd.sqr(prec), prec)
            } else {
                acc.add(&cd.sqr(prec).mul(&frac_dist_sq(&w[0], prec), prec), prec)
            };
            self.best = ball_min(&self.best, &val, prec);
            return;
        }
        let m0 = round_to_i64(w[d - 1].mid());
        let mut dir_open = [true, true]; // [right (≥ m0), left (< m0)]
        for delta in 0..1_000_000i64 {
            if !dir_open[0] && !dir_open[1] {
                break;
            }
            for (which, nd) in [(0usize, m0 + delta), (1usize, m0 - delta - 1)] {
                if !dir_open[which] {
                    continue;
                }
                let nd_ball = RealBall::from_i64(nd);
                let q = cd.sqr(prec).mul(&nd_ball.sub(&w[d - 1], prec).sqr(prec), prec);
                let total = acc.add(&q, prec);
                if total.lower() > self.best.upper() {
                    // provably worse for every instance: close this direction
                    // once the distance term is monotone along it
                    let monotone = if which == 0 {
                        nd_ball.lower() >= w[d - 1].upper()
                    } else {
                        nd_ball.upper() <= w[d - 1].lower()
                    };
                    if monotone {
                        dir_open[which] = false;
                    }
                    continue;
                }
                let step = nd_ball.sub(&w[d - 1], prec);
                let wnext: Vec<RealBall> = (0..d - 1)
                    .map(|j| w[j].sub(&self.proj[d - 2][j].mul(&step, prec), prec))
                    .collect();
                self.run(&wnext, &total, exclude_origin && nd == 0);
            }
        }
    }
}

/// Squared distance from `v` to the integer lattice: the enclosure of
/// min over n ∈ Z^g of ‖C(n−v)‖₂². Branch-and-bound over the last coordinate,
/// nearest integers first, seeded with the entry-wise rounding of `v` and
/// pruning branches whose fixed-coordinate mass already exceeds the best
/// candidate.
pub fn dist_sq(c: &RMat, v: &[RealBall], prec: u32) -> RealBall {
    let g = v.len();
    assert_eq!((c.rows, c.cols), (g, g));
    let proj = projection_columns(c, prec);
    let n0: Vec<i64> = v.iter().map(|t| round_to_i64(t.mid())).collect();
    let best = offset_norm_sq(c, v, &n0, prec);
    let mut search = DistSearch { c, proj: &proj, prec, best };
    let acc = RealBall::zero();
    search.run(v, &acc, false);
    search.best
}

/// Squared length of a shortest nonzero lattice vector: the enclosure of
/// min over n ∈ Z^g \ {0} of ‖Cn‖₂². Same search as [`dist_sq`] with the
/// origin excluded and the unit vectors as initial candidates.
pub fn shortest_sq(c: &RMat, prec: u32) -> RealBall {
    let g = c.rows;
    assert_eq!(c.cols, g);
    let proj = projection_columns(c, prec);
    let mut best: Option<RealBall> = None;
    for j in 0..g {
        let mut col = RealBall::zero();
        for i in 0..=j {
            col = col.add(&c.at(i, j).sqr(prec), prec);
        }
        best = Some(match best {
            None => col,
            Some(b) => ball_min(&b, &col, prec),
        });
    }
    let zero_center: Vec<RealBall> = (0..g).map(|_| RealBall::zero()).collect();
    let mut search = DistSearch { c, proj: &proj, prec, best: best.expect("g ≥ 1") };
    let acc = RealBall::zero();
    search.run(&zero_center, &acc, true);
    search.best
}

/// Squared lattice distances Dist(v, Z^g + a/2)² for all 2^g half-integer
/// shifts a, computed both for the ellipsoid center v of a context and for
/// v = 0. Shift index convention matches `Characteristic`: bit g−1−j of the
/// index is a_j.
pub struct DistanceProfile {
    pub g: usize,
    at_v: Vec<RealBall>,
    at_zero: Vec<RealBall>,
}

impl DistanceProfile {
    pub fn new(ctx: &SiegelContext, prec: u32) -> Self {
        let g = ctx.g;
        let mut at_v = Vec::with_capacity(1 << g);
        let mut at_zero = Vec::with_capacity(1 << g);
        let half = RealBall::one().scale_pow2(-1);
        for idx in 0..(1usize << g) {
            let shift: Vec<RealBall> = (0..g)
                .map(|j| {
                    if (idx >> (g - 1 - j)) & 1 == 1 {
                        half.clone()
                    } else {
                        RealBall::zero()
                    }
                })
                .collect();
            let centered_v: Vec<RealBall> =
                (0..g).map(|j| ctx.v[j].sub(&shift[j], prec)).collect();
            let centered_zero: Vec<RealBall> = (0..g).map(|j| shift[j].neg()).collect();
            at_v.push(dist_sq(&ctx.cho, &centered_v, prec));
            at_zero.push(dist_sq(&ctx.cho, &centered_zero, prec));
        }
        DistanceProfile { g, at_v, at_zero }
    }

    /// Dist(v, Z^g + a/2)² for the shift encoded by `a_index`.
    pub fn at_v(&self, a_index: usize) -> &RealBall {
        &self.at_v[a_index]
    }

    /// Dist(0, Z^g + a/2)² for the shift encoded by `a_index`.
    pub fn at_zero(&self, a_index: usize) -> &RealBall {
        &self.at_zero[a_index]
    }
}

// ---------------------------------------------------------------------------
// Tail bounds
// ---------------------------------------------------------------------------

fn kappa(prec: u32) -> RealBall {
    // 1 + √(8/π)
    let pi = RealBall::pi(prec);
    RealBall::from_i64(8)
        .div(&pi, prec)
        .sqrt(prec)
        .expect("positive")
        .add(&RealBall::one(), prec)
}

fn cho_product(c_diag: &[RealBall], prec: u32) -> RealBall {
    // ∏_j (1 + √(2π)/c_j)
    let s2pi = RealBall::pi(prec)
        .scale_pow2(1)
        .sqrt(prec)
        .expect("positive");
    let mut acc = RealBall::one();
    for cj in c_diag {
        acc = acc.mul(&s2pi.div(cj, prec).add(&RealBall::one(), prec), prec);
    }
    acc
}

/// The constant B(g) = 2^{10(1 + g·log₂ g)} appearing in the shifted tail
/// bound.
pub fn shifted_tail_constant(g: usize, prec: u32) -> RealBall {
    let ln2 = RealBall::from_i64(2).ln(prec).expect("positive");
    let lg = if g <= 1 {
        RealBall::zero()
    } else {
        RealBall::from_i64(g as i64)
            .ln(prec)
            .expect("positive")
            .div(&ln2, prec)
    };
    let e = RealBall::one()
        .add(&lg.mul_i64(g as i64, prec), prec)
        .mul_i64(10, prec);
    e.mul(&ln2, prec).exp(prec)
}

/// Tail bound with main factor exp(−R²): for any center v, any A ≥ 0 with
/// A + R² ≥ p,
///
///   Σ_{n ∉ E(v,R)} (A + ‖n−v‖²)^{p/2} exp(−‖n−v‖²)
///     ≤ (1+√(8/π)) · max{2,R}^{g−1} · (A+R²)^{p/2} · exp(−R²) · ∏(1+√(2π)/c_j),
///
/// where c_j are the diagonal entries of the Cholesky factor. The returned
/// ball encloses the right-hand side; use its upper end as the bound.
pub fn tail_bound_new(
    c_diag: &[RealBall],
    r: &RealBall,
    p: usize,
    a: &RealBall,
    prec: u32,
) -> Result<RealBall, Error> {
    let g = c_diag.len();
    let rsq = r.sqr(prec);
    let s = a.add(&rsq, prec);
    if !(s.lower() >= Float::with_val(32, p as f64)) {
        return Err(Error::OutOfDomain(format!(
            "tail bound requires A + R² ≥ p (p = {p})"
        )));
    }
    let shifted = {
        // clamp to ≥ 0 before the square root; the ball may dip below 0 by
        // rounding when p = 0 and A = R = 0
        let lo = s.lower();
        let lo = if lo < 0 { Float::new(32) } else { lo };
        RealBall::from_endpoints(&lo, &s.upper(), prec)
    };
    let power = ball_powi(&shifted.sqrt(prec)?, p, prec);
    let m = ball_powi(&ball_max(&RealBall::from_i64(2), r, prec), g - 1, prec);
    let val = kappa(prec)
        .mul(&m, prec)
        .mul(&power, prec)
        .mul(&rsq.neg().exp(prec), prec)
        .mul(&cho_product(c_diag, prec), prec);
    Ok(val)
}

/// Certified upper bound for the upper incomplete gamma function Γ(s, x).
/// For s ≥ 1 and x > s−1 the integrand satisfies t^{s−1} ≤ x^{s−1}
/// e^{(s−1)(t−x)/x}, giving Γ(s,x) ≤ x^{s−1} e^{−x} / (1 − (s−1)/x); for
/// s < 1 integration by parts has a nonpositive correction term, so
/// Γ(s,x) ≤ x^{s−1} e^{−x} directly.
fn gamma_upper(s: &RealBall, x: &RealBall, prec: u32) -> Result<RealBall, Error> {
    let one = RealBall::one();
    let main = s
        .sub(&one, prec)
        .mul(&x.ln(prec)?, prec)
        .exp(prec)
        .mul(&x.neg().exp(prec), prec);
    if s.upper() <= 1 {
        return Ok(main);
    }
    let denom = x.sub(s, prec).add(&one, prec);
    if !(denom.lower() > 0) {
        return Err(Error::OutOfDomain("incomplete gamma requires x > s − 1".into()));
    }
    Ok(main.mul(&x.div(&denom, prec), prec))
}

/// Tail bound in terms of the packing radius ρ = min_{n≠0} ‖Cn‖₂:
///
///   Σ_{n ∉ E(v,R)} ‖n−v‖^p exp(−‖n−v‖²) ≤ g·2^{g−1}·ρ^{−g}·Γ((g+p)/2, (R−ρ/2)²),
///
/// valid when (R − ρ/2)² > (g + 2p + √(g²+8p))/4; returns `OutOfDomain`
/// otherwise (the estimate says nothing for small R).
pub fn tail_bound_old(
    g: usize,
    rho: &RealBall,
    r: &RealBall,
    p: usize,
    prec: u32,
) -> Result<RealBall, Error> {
    let x = r.sub(&rho.scale_pow2(-1), prec).sqr(prec);
    let threshold = RealBall::from_i64((g * g + 8 * p) as i64)
        .sqrt(prec)?
        .add(&RealBall::from_i64((g + 2 * p) as i64), prec)
        .scale_pow2(-2);
    if !(x.lower() > threshold.upper()) {
        return Err(Error::OutOfDomain(
            "tail bound requires (R − ρ/2)² > (g + 2p + √(g²+8p))/4".into(),
        ));
    }
    let s = RealBall::from_i64((g + p) as i64).scale_pow2(-1);
    let gam = gamma_upper(&s, &x, prec)?;
    let scale = RealBall::from_i64(g as i64)
        .scale_pow2(g as i32 - 1)
        .div(&ball_powi(rho, g, prec), prec);
    Ok(scale.mul(&gam, prec))
}

/// Tail bound for shifted ellipsoids around a reduced matrix: if
/// R² = Dist(v, Z^g)² + δ², then
///
///   Σ_{n ∉ E(v,R)} exp(−‖n−v‖²) ≤ B(g) · max{2,δ}^{g−1} · exp(−R²)
///
/// with B(g) = 2^{10(1+g·log₂ g)}. The main factor decays with δ rather than
/// R, which is what makes radius selection near a far-away center cheap.
pub fn tail_bound_shifted(g: usize, delta: &RealBall, r: &RealBall, prec: u32) -> RealBall {
    let m = ball_powi(&ball_max(&RealBall::from_i64(2), delta, prec), g - 1, prec);
    shifted_tail_constant(g, prec)
        .mul(&m, prec)
        .mul(&r.sqr(prec).neg().exp(prec), prec)
}

/// The smaller of [`tail_bound_new`] and (when its precondition holds)
/// [`tail_bound_old`]; pass the packing radius when available.
pub fn tail_bound_best(
    c_diag: &[RealBall],
    rho: Option<&RealBall>,
    r: &RealBall,
    p: usize,
    a: &RealBall,
    prec: u32,
) -> Result<RealBall, Error> {
    let new = tail_bound_new(c_diag, r, p, a, prec)?;
    if a.upper() != 0 {
        return Ok(new);
    }
    match rho {
        Some(rho) => match tail_bound_old(c_diag.len(), rho, r, p, prec) {
            Ok(old) => Ok(ball_min(&new, &old, prec)),
            Err(_) => Ok(new),
        },
        None => Ok(new),
    }
}

// ---------------------------------------------------------------------------
// Radius selection
// ---------------------------------------------------------------------------

fn f_radius(p: usize, x: &RealBall, prec: u32) -> Result<RealBall, Error> {
    // f_p(x) = x − (p/2)·log x, the negated log of x^{p/2} e^{−x}
    if p == 0 {
        return Ok(x.clone());
    }
    let half_p = RealBall::from_i64(p as i64).scale_pow2(-1);
    Ok(x.sub(&half_p.mul(&x.ln(prec)?, prec), prec))
}

/// Smallest convenient R ≥ 2 with R^p·exp(−R²) ≤ eps, via Newton iteration on
/// f_p(x) = x − (p/2)log x against log(1/eps) in x = R². The function is
/// convex with minimum at x₀ = p/2; starting from an over-estimate and
/// rounding each step up keeps the iterate above the root, and the final
/// value is certified before use.
pub fn choose_radius(p: usize, eps: &RealBall, prec: u32) -> Result<Float, Error> {
    let eps_lo = eps.lower();
    if !(eps_lo > 0) {
        return Err(Error::OutOfDomain("radius target must be positive".into()));
    }
    // L = log(1/eps), from a strictly positive lower bound on eps
    let l = RealBall::exact(eps_lo).ln(prec)?.neg();
    let x0 = RealBall::from_i64(p as i64).scale_pow2(-1);
    let f_x0 = if p == 0 {
        RealBall::zero()
    } else {
        f_radius(p, &x0, prec)?
    };
    let ln2 = RealBall::from_i64(2).ln(prec)?;
    let start = l
        .sub(&f_x0, prec)
        .scale_pow2(1)
        .add(&ln2.mul_i64(p as i64, prec), prec)
        .upper();
    let mut x = {
        let mut t = Float::with_val(prec, 4);
        if t < Float::with_val(32, p as f64) {
            t = Float::with_val(prec, p as f64);
        }
        if t < start {
            t = start;
        }
        t
    };
    for _ in 0..10 {
        let xb = RealBall::exact(x.clone());
        let fx = f_radius(p, &xb, prec)?;
        let fpx = if p == 0 {
            RealBall::one()
        } else {
            RealBall::one().sub(&RealBall::from_i64(p as i64).div(&xb.scale_pow2(1), prec), prec)
        };
        if !(fpx.lower() > 0) {
            break; // at the minimum; x ≥ root already holds
        }
        let next = xb.sub(&fx.sub(&l, prec).div(&fpx, prec), prec).upper();
        x = if next < x0.upper() { x0.upper() } else { next };
    }
    // certify f_p(x) ≥ L (Newton from above cannot cross the root, but the
    // output contract should not depend on that argument)
    let mut guard = 0;
    while !(f_radius(p, &RealBall::exact(x.clone()), prec)?.lower() >= l.upper()) {
        x = Float::with_val(prec, &x * 2u32) + 1u32;
        guard += 1;
        if guard > 64 {
            return Err(Error::OutOfDomain("radius certification failed".into()));
        }
    }
    let r = RealBall::exact(x).sqrt(prec)?.upper();
    Ok(if r < 2 { Float::with_val(prec, 2) } else { r })
}

/// Which tail estimate drives radius selection for plain theta values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RadiusVariant {
    /// Center-independent: absorb the max{2,R}^{g−1} prefactor by solving
    /// with p = g−1 and the ε scaled by the Cholesky product.
    A,
    /// Distance-shifted: solve for the excess δ over the lattice distance and
    /// return √(δ² + Dist²); requires Dist(v, Z^g)².
    B,
}

/// Truncation radius R such that dropping all lattice points outside E(v,R)
/// changes every normalized value θ̃_{0,b}(z,τ) by at most 2^{−n}.
pub fn radius_for_sum(
    ctx: &SiegelContext,
    n: u32,
    variant: RadiusVariant,
    dist: Option<&RealBall>,
) -> Result<Float, Error> {
    let prec = 64;
    let g = ctx.g;
    let two_n = RealBall::one().scale_pow2(-(n as i32));
    match variant {
        RadiusVariant::A => {
            let eps = two_n
                .div(&kappa(prec), prec)
                .div(&cho_product(&ctx.c_diag(), prec), prec);
            choose_radius(g - 1, &eps, prec)
        }
        RadiusVariant::B => {
            let dist = dist.ok_or_else(|| {
                Error::OutOfDomain("shifted radius selection needs Dist(v, Z^g)²".into())
            })?;
            // smaller ε (distance rounded down) → larger δ → safe
            let dist_lo = {
                let lo = dist.lower();
                if lo < 0 { Float::new(32) } else { lo }
            };
            let eps = two_n
                .div(&shifted_tail_constant(g, prec), prec)
                .mul(&RealBall::exact(dist_lo).exp(prec), prec);
            let delta = choose_radius(g - 1, &eps, prec)?;
            // R² = δ² + Dist², distance rounded up this time
            let r = RealBall::exact(delta)
                .sqr(prec)
                .add(&RealBall::exact(dist.upper()), prec)
                .sqrt(prec)?
                .upper();
            Ok(r)
        }
    }
}

/// Truncation radius for derivative summation: R such that for every b and
/// every order vector ν with |ν| ≤ b_max,
///
///   |∂^ν θ_{0,b}(z,τ) − (2πi)^{|ν|} Σ_{n ∈ E(v,R)} (−1)^{nᵀb} n^ν e(nᵀτn + 2nᵀz)| ≤ 2^{−n}.
///
/// Two-phase selection: first try the radius that works when the derivative
/// weight is dominated by ‖v‖_∞ (test ‖C⁻¹‖_∞·R ≤ ‖v‖_∞), otherwise resolve
/// with the weight dominated by ‖C⁻¹‖_∞·R, absorbing R^{|ν|} into the solve
/// exponent; both phases clamp R² ≥ b_max at the end.
pub fn radius_for_jets(ctx: &SiegelContext, n: u32, b_max: usize) -> Result<Float, Error> {
    let prec = 64;
    let g = ctx.g;
    let eps_base = RealBall::one()
        .scale_pow2(-(n as i32))
        .mul(&ctx.theta_tilde_factor(), prec)
        .div(&kappa(prec), prec)
        .div(&cho_product(&ctx.c_diag(), prec), prec);
    let c_inv_norm = {
        let inv = ctx
            .cho
            .inverse(prec)
            .ok_or_else(|| Error::OutOfDomain("Cholesky factor not invertible".into()))?;
        inv.inf_norm_upper()
    };
    let v_norm = {
        let mut m = Float::new(32);
        for t in &ctx.v {
            let u = t.abs().upper();
            if u > m {
                m = u;
            }
        }
        m
    };
    let four_pi = RealBall::pi(prec).scale_pow2(2);
    let clamp = RealBall::from_i64(b_max as i64)
        .sqrt(prec)?
        .upper();
    let apply_clamp = |r: Float| -> Float {
        if r < clamp {
            clamp.clone()
        } else {
            r
        }
    };

    // Phase 1: derivative weight (2π(‖C⁻¹‖R + ‖v‖))^{|ν|} ≤ max{1, 4π‖v‖}^{|ν|}
    // whenever ‖C⁻¹‖R ≤ ‖v‖.
    let w1 = ball_max(
        &RealBall::one(),
        &four_pi.mul(&RealBall::exact(v_norm.clone()), prec),
        prec,
    );
    let eps1 = eps_base.div(&ball_powi(&w1, b_max, prec), prec);
    let r1 = apply_clamp(choose_radius(g - 1, &eps1, prec)?);
    let lhs = RealBall::exact(c_inv_norm.clone())
        .mul(&RealBall::exact(r1.clone()), prec)
        .upper();
    if lhs <= v_norm {
        return Ok(r1);
    }

    // Phase 2: with R ≥ 2 the weight is ≤ max{1, 2π‖C⁻¹‖ + π‖v‖}^{|ν|}·R^{|ν|};
    // the R^{|ν|} part joins the max{2,R}^{g−1} prefactor in the exponent.
    let w2 = ball_max(
        &RealBall::one(),
        &RealBall::pi(prec)
            .scale_pow2(1)
            .mul(&RealBall::exact(c_inv_norm), prec)
            .add(&RealBall::pi(prec).mul(&RealBall::exact(v_norm), prec), prec),
        prec,
    );
    let eps2 = eps_base.div(&ball_powi(&w2, b_max, prec), prec);
    let r2 = apply_clamp(choose_radius(g - 1 + b_max, &eps2, prec)?);
    Ok(r2)
}

// ---------------------------------------------------------------------------
// Ellipsoid enumeration
// ---------------------------------------------------------------------------

/// Recursive layer tree of the lattice points inside an ellipsoid
/// E(v, R) = { x : ‖C(x − v)‖₂ ≤ R }.
///
/// A node of dimension d fixes the trailing coordinates (n_{d+1}, …, n_g) and
/// records the admissible integer range [lo, hi] for n_d; for d > 1 it owns
/// one child per value of n_d in that range, in increasing order. A node with
/// lo > hi is empty. The cached point count and per-coordinate magnitude
/// bounds drive buffer sizing in the summation phase.
///
/// The tree is built with outward rounding: it contains every lattice point
/// of E(v, R) and possibly a few points just outside (all within radius
/// √(R² + 2^{−workprec}·g)). The center may be a vector of genuine intervals,
/// in which case the tree covers every center in the box at once.
#[derive(Clone, Debug)]
pub struct EllipsoidTree {
    g: usize,
    d: usize,
    lo: i64,
    hi: i64,
    coords: Vec<i64>,
    children: Vec<EllipsoidTree>,
    count: u64,
    bj: Vec<i64>,
}

impl EllipsoidTree {
    pub fn ambient(&self) -> usize {
        self.g
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Admissible range (lo, hi) for coordinate n_d; empty when lo > hi.
    pub fn bounds(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    /// The fixed trailing coordinates (n_{d+1}, …, n_g).
    pub fn common_coords(&self) -> &[i64] {
        &self.coords
    }

    /// Children in increasing n_d order (only for dimension > 1); the child
    /// at index k has n_d = lo + k.
    pub fn children(&self) -> &[EllipsoidTree] {
        &self.children
    }

    /// Number of contained lattice points.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Upper bound on |n_{j+1}| over all contained points (0-based `j`).
    pub fn coord_bound(&self, j: usize) -> i64 {
        self.bj[j]
    }

    /// Whether the lattice point `n` (full ambient coordinates) is contained.
    pub fn contains_point(&self, n: &[i64]) -> bool {
        debug_assert_eq!(n.len(), self.g);
        let nd = n[self.d - 1];
        if nd < self.lo || nd > self.hi {
            return false;
        }
        if self.d == 1 {
            return true;
        }
        self.children[(nd - self.lo) as usize].contains_point(n)
    }

    /// All contained points, each as a full ambient coordinate vector.
    pub fn points(&self) -> Vec<Vec<i64>> {
        let mut out = Vec::with_capacity(self.count as usize);
        self.collect_points(&mut out);
        out
    }

    fn collect_points(&self, out: &mut Vec<Vec<i64>>) {
        if self.d == 1 {
            for n1 in self.lo..=self.hi {
                let mut p = Vec::with_capacity(self.g);
                p.push(n1);
                p.extend_from_slice(&self.coords);
                out.push(p);
            }
        } else {
            for ch in &self.children {
                ch.collect_points(out);
            }
        }
    }

    /// The non-empty 1-dimensional descendants (the summation layers).
    pub fn layers(&self) -> Vec<&EllipsoidTree> {
        let mut out = Vec::new();
        self.collect_layers(&mut out);
        out
    }

    fn collect_layers<'a>(&'a self, out: &mut Vec<&'a EllipsoidTree>) {
        if self.d == 1 {
            if !self.is_empty() {
                out.push(self);
            }
        } else {
            for ch in &self.children {
                ch.collect_layers(out);
            }
        }
    }

    fn empty(g: usize, d: usize, coords: Vec<i64>) -> EllipsoidTree {
        EllipsoidTree {
            g,
            d,
            lo: 0,
            hi: -1,
            coords,
            children: Vec::new(),
            count: 0,
            bj: vec![0; g],
        }
    }
}

/// Builds the layer tree of E(v, √r_sq) ∩ Z^g. `v` may be a box of centers
/// (per-coordinate intervals); the tree then covers the union of the
/// ellipsoids over all centers in the box. Negative `r_sq` yields an empty
/// tree. `workprec` is the ball precision used for the interval endpoints
/// ([`ELLIPSOID_WORKPREC`] is plenty).
pub fn build_ellipsoid(c: &RMat, v: &[RealBall], r_sq: &RealBall, workprec: u32) -> EllipsoidTree {
    let g = v.len();
    assert_eq!((c.rows, c.cols), (g, g));
    let proj = projection_columns(c, workprec);
    build_rec(c, &proj, v, r_sq, g, Vec::new(), workprec)
}

fn build_rec(
    c: &RMat,
    proj: &[Vec<RealBall>],
    w: &[RealBall],
    rsq: &RealBall,
    g: usize,
    coords: Vec<i64>,
    prec: u32,
) -> EllipsoidTree {
    let d = w.len();
    let rsq_up = rsq.upper();
    if rsq_up < 0 {
        return EllipsoidTree::empty(g, d, coords);
    }
    let cd = c.at(d - 1, d - 1);
    let r = RealBall::exact(rsq_up).sqrt(prec).expect("nonnegative");
    let half_width = r.div(cd, prec);
    let lo = ceil_to_i64(&w[d - 1].sub(&half_width, prec).lower());
    let hi = floor_to_i64(&w[d - 1].add(&half_width, prec).upper());
    if hi < lo {
        return EllipsoidTree::empty(g, d, coords);
    }

    let mut bj = vec![0i64; g];
    for (k, &nc) in coords.iter().enumerate() {
        bj[d + k] = nc.abs();
    }
    if d == 1 {
        bj[0] = lo.abs().max(hi.abs());
        return EllipsoidTree {
            g,
            d,
            lo,
            hi,
            coords,
            children: Vec::new(),
            count: (hi - lo + 1) as u64,
            bj,
        };
    }

    let mut children = Vec::with_capacity((hi - lo + 1) as usize);
    let mut count = 0u64;
    for nd in lo..=hi {
        let step = RealBall::from_i64(nd).sub(&w[d - 1], prec);
        let child_rsq = rsq.sub(&cd.sqr(prec).mul(&step.sqr(prec), prec), prec);
        let child_w: Vec<RealBall> = (0..d - 1)
            .map(|j| w[j].sub(&proj[d - 2][j].mul(&step, prec), prec))
            .collect();
        let mut child_coords = Vec::with_capacity(coords.len() + 1);
        child_coords.push(nd);
        child_coords.extend_from_slice(&coords);
        let child = build_rec(c, proj, &child_w, &child_rsq, g, child_coords, prec);
        count += child.count;
        for j in 0..d {
            bj[j] = bj[j].max(child.bj[j]);
        }
        children.push(child);
    }
    EllipsoidTree {
        g,
        d,
        lo,
        hi,
        coords,
        children,
        count,
        bj,
    }
}

// ---------------------------------------------------------------------------
