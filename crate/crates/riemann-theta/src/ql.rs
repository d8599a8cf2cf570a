//! Quasi-linear evaluation of all 4^g values θ̃_{a,b}(z,τ) by repeated
//! argument duplication.
//!
//! The duplication identity relates values at the matrix τ to values at 2τ:
//!
//!   θ̃_{a,b}(x,τ)·θ̃_{a,b}(x',τ) = Σ_{a'} (−1)^{a'ᵀb} θ̃_{a',0}(x+x',2τ)·θ̃_{a⊕a',0}(x−x',2τ),
//!
//! a 2^g-point xor-convolution computable with three Hadamard transforms.
//! Starting from a cheap summation at 2^hτ (where the Gaussian decay leaves
//! only a handful of lattice points) and descending h levels — taking square
//! roots against low-precision hints and dividing once per level — produces
//! every θ̃_{a,b}(z,τ) with overall work quasi-linear in the bit precision.
//!
//! Square roots force a zero-free path. A real auxiliary vector t is chosen
//! by randomized search so that all intermediate lines θ̃_{a,0} along the
//! translates {t, 2t, z+t, z+2t} stay away from zero; the plain two-line
//! scheme on {0, z} is used instead on the (probed) prefix of levels where it
//! is safe, and t = 0 degenerates to that scheme entirely.
//!
//! Error control is *shifted*: a ball for θ̃_{a,·} at matrix 2^jτ counts as
//! accurate to N bits when its radius is at most 2^{−N}·exp(−Dist²), where
//! Dist² is the squared lattice distance attached to the characteristic at
//! that level (these scale exactly by 2^j). Duplication respects this grading
//! — the radius padding below decays with the same per-characteristic
//! exponentials — and the guard bits consumed per level are budgeted from the
//! same hints that guide the square roots.
//!
//! When some Cholesky diagonals of Im τ are much larger than others, the sum
//! splits: the trailing g−d coordinates contribute a short explicit sum of
//! exponential prefactors times d-dimensional values evaluated recursively
//! ([`dimension_split`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::float::Round;
use rug::Float;

use crate::ball::{ComplexBall, RealBall};
use crate::geometry::{
    build_ellipsoid, shortest_sq, tail_bound_best, DistanceProfile, RadiusVariant,
    ELLIPSOID_WORKPREC,
};
use crate::mat::{CMat, RMat};
use crate::siegel::{reduce_z, SiegelContext};
use crate::sum::{
    ceil_log2, optimized_with_tree, sum_a_shift, sum_naive, theta_tilde_all, truncate, ThetaValues,
};
use crate::{trace, Error};

const LN2: f64 = std::f64::consts::LN_2;
/// Escalation rounds of the auxiliary-vector search before giving up.
const MAX_AUX_ESCALATIONS: u32 = 8;
/// Candidates per escalation round (t = 0 plus random retries).
const AUX_TRIES_PER_ROUND: u32 = 5;
/// Largest log₂ denominator of the auxiliary grid (keeps 2·t_num in i64).
const MAX_T_DEN_LOG2: u32 = 60;
/// Hard cap on the number of duplication levels.
const MAX_LEVELS: u32 = 24;

// ---------------------------------------------------------------------------
// Distance bookkeeping
// ---------------------------------------------------------------------------

/// Which lattice-distance center a value line lives over: translates by real
/// vectors sit over 0, translates carrying z over v = −Y⁻¹·Im z. The
/// auxiliary vector is real, so no other centers occur in the ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Center {
    Zero,
    V,
}

/// Per-characteristic squared distances for one duplication product: the two
/// input lines live at the doubled matrix, the two output factors at the
/// current one.
pub struct DuplGeometry {
    pub d_in_t: Vec<RealBall>,
    pub d_in_u: Vec<RealBall>,
    pub d_out_x: Vec<RealBall>,
    pub d_out_xp: Vec<RealBall>,
}

/// Distance table for one evaluation: Dist(v, Z^g+a/2)² and Dist(0, Z^g+a/2)²
/// at the base matrix τ, from which every level's distances follow exactly
/// (squared distances at 2^jτ are 2^j times those at τ), plus the uniform
/// worst-case guard-bit budget Δ consumed per duplication step.
pub struct ShiftedPrecLedger {
    pub g: usize,
    /// Shifted precision targeted by the final output.
    pub base_n: u32,
    /// Number of duplication levels.
    pub h: u32,
    /// Uniform per-step guard bound, used when no sharper measured value is
    /// available: Δ = ⌈10(3 + g·log₂²g)⌉ + log₂(1/η).
    pub delta: u32,
    pub profile: DistanceProfile,
}

impl ShiftedPrecLedger {
    pub fn new(ctx: &SiegelContext, base_n: u32, h: u32, log2_inv_eta: u32) -> Self {
        let profile = DistanceProfile::new(ctx, 64.max(32 + h));
        Self::from_profile(profile, base_n, h, log2_inv_eta)
    }

    pub fn from_profile(
        profile: DistanceProfile,
        base_n: u32,
        h: u32,
        log2_inv_eta: u32,
    ) -> Self {
        let g = profile.g;
        let lg = if g > 1 { (g as f64).log2() } else { 0.0 };
        let delta = (10.0 * (3.0 + g as f64 * lg * lg)).ceil() as u32 + log2_inv_eta;
        ShiftedPrecLedger { g, base_n, h, delta, profile }
    }

    /// Dist(center, Z^g + a/2)² at the level-j matrix 2^jτ (exact scaling).
    pub fn dist(&self, center: Center, j: u32, a_index: usize) -> RealBall {
        let d = match center {
            Center::Zero => self.profile.at_zero(a_index),
            Center::V => self.profile.at_v(a_index),
        };
        d.scale_pow2(j as i32)
    }

    /// Upper bound on the level-j squared distance over all characteristics.
    pub fn max_dist_upper(&self, center: Center, j: u32) -> f64 {
        (0..1usize << self.g)
            .map(|a| self.dist(center, j, a).upper().to_f64().max(0.0))
            .fold(0.0, f64::max)
    }

    /// log₂(radius) + Dist²/ln2: minus the realized shifted accuracy of a
    /// ball claimed for level j. Finite outputs ≤ −N certify N shifted bits.
    pub fn shifted_defect(&self, v: &ComplexBall, center: Center, j: u32, a_index: usize) -> f64 {
        let rad_log2 = match v.rad().get_exp() {
            Some(e) if !v.rad().is_zero() => e as f64,
            _ => return f64::NEG_INFINITY,
        };
        rad_log2 + self.dist(center, j, a_index).lower().to_f64().max(0.0) / LN2
    }

    /// Distance data for one duplication product at level j: inputs at
    /// 2^{j+1}τ over centers `tc`, `uc`; output factors at 2^jτ over `xc`,
    /// `xpc`.
    pub fn geometry(&self, j: u32, tc: Center, uc: Center, xc: Center, xpc: Center) -> DuplGeometry {
        let m = 1usize << self.g;
        DuplGeometry {
            d_in_t: (0..m).map(|a| self.dist(tc, j + 1, a)).collect(),
            d_in_u: (0..m).map(|a| self.dist(uc, j + 1, a)).collect(),
            d_out_x: (0..m).map(|a| self.dist(xc, j, a)).collect(),
            d_out_xp: (0..m).map(|a| self.dist(xpc, j, a)).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Hadamard transform and duplication products
// ---------------------------------------------------------------------------

/// Walsh–Hadamard transform H(v)_a = Σ_{a'} (−1)^{aᵀa'} v_{a'} in g·2^g
/// additions (Sylvester recursion on the top index bit).
pub fn hadamard(v: &[ComplexBall], prec: u32) -> Vec<ComplexBall> {
    let n = v.len();
    assert!(n.is_power_of_two());
    if n == 1 {
        return vec![v[0].clone()];
    }
    let (lo, hi) = v.split_at(n / 2);
    let l = hadamard(lo, prec);
    let r = hadamard(hi, prec);
    let mut out = Vec::with_capacity(n);
    for (a, b) in l.iter().zip(&r) {
        out.push(a.add(b, prec));
    }
    for (a, b) in l.iter().zip(&r) {
        out.push(a.sub(b, prec));
    }
    out
}

fn log2_ceil_f(x: &Float) -> i64 {
    match x.get_exp() {
        Some(e) if !x.is_zero() => e as i64,
        _ => i64::MIN / 2,
    }
}

/// One duplication product line: given t = (θ̃_{a,0}(x+x', 2τ'))_a and
/// u = (θ̃_{a,0}(x−x', 2τ'))_a, both at shifted precision ≈ n for their
/// centers, returns
///
///   w_a = Σ_{a'} (−1)^{a'ᵀb} t_{a'} u_{a⊕a'}  =  (θ̃_{a,b}(x,τ')·θ̃_{a,b}(x',τ'))_a
///
/// as 2^{−g}·H(σ_b(H(t)) ⋆ H(u)), where ⋆ is the termwise product and σ_b the
/// index translation c ↦ c⊕b realizing the characteristic signs. Passing the
/// *same slice* for t and u takes a squared-transform fast path.
///
/// The transforms run on midpoints only: pushing full balls through H would
/// smear every radius onto the least-decayed characteristic. The discarded
/// radii are covered by the closed-form pad
/// 2^g·(m₀ε₁ + m₁ε₀ + ε₀ε₁)·exp(−d_out_x(a) − d_out_xp(a)), where m_i, ε_i
/// bound midpoints and radii against the input decay profile; this is sound
/// term by term because the squared distances obey
/// d_in_t(a') + d_in_u(a⊕a') ≥ d_out_x(a) + d_out_xp(a) (parallelogram law
/// applied to the two lattice cosets).
pub fn dupl_products_signed(
    t_vec: &[ComplexBall],
    u_vec: &[ComplexBall],
    geom: &DuplGeometry,
    n: u32,
    b_index: usize,
) -> Vec<ComplexBall> {
    let m = t_vec.len();
    assert!(m.is_power_of_two() && u_vec.len() == m);
    assert!(geom.d_in_t.len() == m && geom.d_out_x.len() == m);
    let g = m.trailing_zeros();
    let wp = 64u32;
    let same = std::ptr::eq(t_vec, u_vec);

    // envelopes against the input decay: |mid_a| ≤ m_i·e^{−d_in(a)},
    // rad_a ≤ ε_i·e^{−d_in(a)}
    let envelope = |vals: &[ComplexBall], d: &[RealBall]| -> (Float, Float) {
        let mut menv = Float::new(32);
        let mut eenv = Float::new(32);
        for (v, da) in vals.iter().zip(d) {
            let grow = da.exp(wp).upper();
            let mag = Float::with_val_round(32, v.abs().upper() * &grow, Round::Up).0;
            if mag > menv {
                menv = mag;
            }
            let rad = Float::with_val_round(32, v.rad() * &grow, Round::Up).0;
            if rad > eenv {
                eenv = rad;
            }
        }
        (menv, eenv)
    };
    let (m0, e0) = envelope(t_vec, &geom.d_in_t);
    let (m1, e1) = if same { (m0.clone(), e0.clone()) } else { envelope(u_vec, &geom.d_in_u) };

    // midpoint working precision: restores the strongest output decay and the
    // envelope magnitudes on top of the claimed input precision
    let boost = (0..m)
        .map(|a| {
            (geom.d_out_x[a].upper().to_f64().max(0.0)
                + geom.d_out_xp[a].upper().to_f64().max(0.0))
                / LN2
        })
        .fold(0.0, f64::max);
    let mag_bits = (log2_ceil_f(&m0).max(0) + log2_ceil_f(&m1).max(0)).min(1 << 20) as u32;
    let np = n + boost.min(1e8).ceil() as u32 + 2 * g + mag_bits + 16;

    let tm: Vec<ComplexBall> = t_vec.iter().map(ComplexBall::mid_ball).collect();
    let ht = hadamard(&tm, np);
    let hu = if same {
        ht.clone()
    } else {
        let um: Vec<ComplexBall> = u_vec.iter().map(ComplexBall::mid_ball).collect();
        hadamard(&um, np)
    };
    let prod: Vec<ComplexBall> = (0..m)
        .map(|c| {
            if same && b_index == 0 {
                ht[c].sqr(np)
            } else {
                ht[c ^ b_index].mul(&hu[c], np)
            }
        })
        .collect();
    let back = hadamard(&prod, np);

    // radius mass dropped before the transforms, to be re-scaled by the
    // per-characteristic output decay
    let p1 = Float::with_val_round(64, &m0 * &e1, Round::Up).0;
    let p2 = Float::with_val_round(64, &m1 * &e0, Round::Up).0;
    let p3 = Float::with_val_round(64, &e0 * &e1, Round::Up).0;
    let mut s = Float::with_val_round(64, &p1 + &p2, Round::Up).0;
    s = Float::with_val_round(64, &s + &p3, Round::Up).0;
    s <<= g;

    let mut out = Vec::with_capacity(m);
    for a in 0..m {
        let decay = geom.d_out_x[a].add(&geom.d_out_xp[a], wp).neg().exp(wp).upper();
        let pad = Float::with_val_round(64, &s * &decay, Round::Up).0;
        out.push(back[a].scale_pow2(-(g as i32)).pad(&pad));
    }
    out
}

/// [`dupl_products_signed`] with b = 0 (the plain convolution used on all
/// ladder levels above the last).
pub fn dupl_products(
    t_vec: &[ComplexBall],
    u_vec: &[ComplexBall],
    geom: &DuplGeometry,
    n: u32,
) -> Vec<ComplexBall> {
    dupl_products_signed(t_vec, u_vec, geom, n, 0)
}

// ---------------------------------------------------------------------------
// Parameter selection
// ---------------------------------------------------------------------------

/// Split dimension d and number of duplication levels h for a reduced
/// context. All Cholesky diagonals at most `threshold` (default 10) means no
/// split; otherwise d is minimal with c_j ≥ c_g/threshold for every j > d.
/// The level count makes the initial summation at 2^hτ essentially free:
/// h = max(0, ⌈log₂(N·ln2 / c²_{d+1})⌉), reading c₁ when d = 0.
pub fn choose_split_params(ctx: &SiegelContext, n: u32) -> (usize, u32) {
    choose_split_params_with_threshold(ctx, n, 10.0)
}

/// [`choose_split_params`] with an explicit diagonal-spread threshold.
pub fn choose_split_params_with_threshold(
    ctx: &SiegelContext,
    n: u32,
    threshold: f64,
) -> (usize, u32) {
    let g = ctx.g;
    let c: Vec<f64> = ctx.c_diag().iter().map(|x| x.mid().to_f64()).collect();
    let cg = c[g - 1];
    let d = if c.iter().all(|&x| x <= threshold) {
        0
    } else {
        (0..g)
            .find(|&k| c[k..].iter().all(|&x| x >= cg / threshold))
            .unwrap_or(g - 1)
    };
    (d, height_for(c[d], n))
}

fn height_for(c_ref: f64, n: u32) -> u32 {
    let ratio = (n as f64) * LN2 / (c_ref * c_ref);
    if ratio <= 1.0 {
        0
    } else {
        (ratio.log2().ceil() as u32).min(MAX_LEVELS)
    }
}

/// Tuning knobs for [`ql_all_with_options`].
pub struct QlOptions {
    /// Cholesky-diagonal spread threshold separating "already round" from
    /// "split worthwhile".
    pub split_threshold: f64,
    /// Only produce the b = 0 column of the output (enough for θ_{a,0},
    /// in particular θ_{0,0}), skipping the other 2^g − 1 signed
    /// convolutions of the final level.
    pub theta00_only: bool,
    /// Compare neighbouring split dimensions by a lattice-point-count proxy
    /// instead of taking the threshold rule's answer as-is.
    pub tune_d: bool,
}

impl Default for QlOptions {
    fn default() -> Self {
        QlOptions { split_threshold: 10.0, theta00_only: false, tune_d: false }
    }
}

fn split_cost_proxy(c: &[f64], d: usize, h: u32, n: u32) -> f64 {
    let g = c.len();
    let r = ((n as f64) * LN2).sqrt() + 1.0;
    let s = 2f64.powf(h as f64 / 2.0);
    let ladder = h as f64 * (1u64 << g) as f64 * g as f64;
    let mut outer = 1.0;
    for &cj in &c[d..] {
        outer *= 1.0 + r / (s * cj);
    }
    let inner = if d == 0 {
        1.0
    } else {
        let mut p = (1u64 << d) as f64;
        for &cj in &c[..d] {
            p *= 1.0 + r / cj;
        }
        p
    };
    ladder + (1u64 << (g - d)) as f64 * outer * inner
}

fn pick_split(ctx: &SiegelContext, n: u32, opts: &QlOptions) -> (usize, u32) {
    let (d0, h0) = choose_split_params_with_threshold(ctx, n, opts.split_threshold);
    if !opts.tune_d || ctx.g == 1 {
        return (d0, h0);
    }
    let c: Vec<f64> = ctx.c_diag().iter().map(|x| x.mid().to_f64()).collect();
    let mut best = (d0, h0);
    let mut best_cost = split_cost_proxy(&c, d0, h0, n);
    let mut candidates = Vec::new();
    if d0 + 1 < ctx.g {
        candidates.push(d0 + 1);
    }
    if d0 > 0 {
        candidates.push(d0 - 1);
    }
    for d in candidates {
        let h = height_for(c[d], n);
        let cost = split_cost_proxy(&c, d, h, n);
        if cost < best_cost {
            best_cost = cost;
            best = (d, h);
        }
    }
    trace!(2, "split tuning picked d={} h={} (rule gave d={} h={})", best.0, best.1, d0, h0);
    best
}

// ---------------------------------------------------------------------------
// Auxiliary-vector search
// ---------------------------------------------------------------------------

/// A validated auxiliary vector together with the low-precision data the
/// ladder steers by: ball approximations — none containing zero — of every
/// line whose square root or inverse the descent will take.
///
/// `ladder[j−1][f]` is the b = 0 line of translate family
/// f ∈ {t, 2t, z+t, z+2t} at (2^j·translate, 2^jτ), for 1 ≤ j < h;
/// `final_line` holds all 4^g characteristics at (z+2t, τ). When the probed
/// prefix `j_switch` is nonzero, `zero_line`/`z_line` (index j−1) and
/// `z_final` hold the corresponding data for the plain {0, z} scheme used on
/// levels j < j_switch.
pub struct AuxChoice {
    pub g: usize,
    pub h: u32,
    /// Exact dyadic entries t_i = t_num[i] / 2^t_log2_den ∈ [0, 1].
    pub t_num: Vec<i64>,
    pub t_log2_den: u32,
    /// Hints were verified zero-free with absolute error ≈ η·exp(−Dist²)/2,
    /// η = 2^{−log2_inv_eta}.
    pub log2_inv_eta: u32,
    pub ladder: Vec<[Vec<ComplexBall>; 4]>,
    pub final_line: ThetaValues,
    /// z = 0 and t = 0: characteristics with odd aᵀb vanish identically and
    /// are exempt from every zero-free check.
    pub skip_odd: bool,
    /// Levels j < j_switch run the plain {0, z} scheme; the translate ladder
    /// covers j ≥ j_switch. t = 0 forces j_switch = h.
    pub j_switch: u32,
    pub zero_line: Vec<Vec<ComplexBall>>,
    pub z_line: Vec<Vec<ComplexBall>>,
    pub z_final: Option<ThetaValues>,
}

impl AuxChoice {
    pub fn t_is_zero(&self) -> bool {
        self.t_num.iter().all(|&k| k == 0)
    }

    fn hint_zero_line(&self, j: u32) -> &[ComplexBall] {
        if self.t_is_zero() {
            &self.ladder[(j - 1) as usize][0]
        } else {
            &self.zero_line[(j - 1) as usize]
        }
    }

    fn hint_z_line(&self, j: u32) -> &[ComplexBall] {
        if self.t_is_zero() {
            &self.ladder[(j - 1) as usize][2]
        } else {
            &self.z_line[(j - 1) as usize]
        }
    }

    fn final_z_hints(&self) -> &ThetaValues {
        if self.t_is_zero() {
            &self.final_line
        } else {
            self.z_final.as_ref().expect("plain-scheme prefix needs probed final hints")
        }
    }
}

fn ball_exact_zero(c: &ComplexBall) -> bool {
    c.rad().is_zero() && c.re_mid().is_zero() && c.im_mid().is_zero()
}

fn z_is_exact_zero(ctx: &SiegelContext) -> bool {
    ctx.z.iter().all(ball_exact_zero)
}

fn odd_char(a_index: usize, b_index: usize) -> bool {
    (a_index & b_index).count_ones() & 1 == 1
}

/// x = [with_z]·z + k·t as exact dyadic translates of the context argument.
fn translate_arg(
    ctx: &SiegelContext,
    t_num: &[i64],
    t_log2_den: u32,
    k: i64,
    with_z: bool,
) -> Vec<ComplexBall> {
    (0..ctx.g)
        .map(|i| {
            let kt = RealBall::from_i64(k * t_num[i]).scale_pow2(-(t_log2_den as i32));
            let tb = ComplexBall::from_real(&kt);
            if with_z {
                ctx.z[i].add(&tb, ctx.prec)
            } else {
                tb
            }
        })
        .collect()
}

fn scaled_ctx(
    x: &[ComplexBall],
    tau: &CMat,
    j: u32,
    prec: u32,
) -> Result<SiegelContext, Error> {
    let zs: Vec<ComplexBall> = x.iter().map(|c| c.scale_pow2(j as i32)).collect();
    let ts = CMat::from_fn(tau.rows, tau.cols, |r, c| tau.at(r, c).scale_pow2(j as i32));
    SiegelContext::new(&zs, &ts, prec)
}

fn profile_max_upper(profile: &DistanceProfile, center: Center) -> f64 {
    (0..1usize << profile.g)
        .map(|a| {
            match center {
                Center::Zero => profile.at_zero(a),
                Center::V => profile.at_v(a),
            }
            .upper()
            .to_f64()
            .max(0.0)
        })
        .fold(0.0, f64::max)
}

/// Direct summation of the requested characteristics at (2^j·x, 2^jτ), at
/// absolute precision η·exp(−2^j·maxDist²)/4: accurate enough to certify
/// zero-freeness at the shifted scale of every characteristic.
fn hint_values(
    ctx: &SiegelContext,
    profile: &DistanceProfile,
    x: &[ComplexBall],
    center: Center,
    j: u32,
    log2_inv_eta: u32,
    all_b: bool,
) -> Result<ThetaValues, Error> {
    let g = ctx.g;
    let maxd = profile_max_upper(profile, center) * 2f64.powi(j as i32);
    let n_hint = log2_inv_eta + 2 + (maxd / LN2).min(1e8).ceil() as u32;
    let cx = scaled_ctx(x, &ctx.tau, j, n_hint + 64)?;
    let chars: Vec<(usize, usize)> = if all_b {
        (0..1usize << g).flat_map(|a| (0..1usize << g).map(move |b| (a, b))).collect()
    } else {
        (0..1usize << g).map(|a| (a, 0)).collect()
    };
    sum_naive(&cx, n_hint, &chars, RadiusVariant::B)
}

fn b0_line(vals: &ThetaValues, g: usize) -> Vec<ComplexBall> {
    (0..1usize << g).map(|a| vals.at(a, 0).clone()).collect()
}

/// Coarse first pass of the hint evaluations: certifying zero-freeness of an
/// order-one line needs nowhere near the worst-case threshold η, so hints are
/// computed ~64 bits deep first and re-evaluated at full depth only when a
/// ball contains zero (the accept/reject decision then matches a direct
/// full-depth evaluation exactly) or is too fat to steer a square root.
const COARSE_HINT_BITS: u32 = 64;

fn ball_needs_refine(v: &ComplexBall) -> bool {
    if v.contains_zero() {
        return true;
    }
    let lo = v.abs().lower();
    let mut r8 = v.rad().clone();
    r8 <<= 3;
    r8 > lo
}

fn values_need_refine(vals: &ThetaValues, g: usize, skip_odd: bool) -> bool {
    (0..1usize << g).any(|a| {
        (0..1usize << g)
            .any(|b| !(skip_odd && odd_char(a, b)) && ball_needs_refine(vals.at(a, b)))
    })
}

fn values_contain_zero(vals: &ThetaValues, g: usize, skip_odd: bool) -> bool {
    for a in 0..1usize << g {
        for b in 0..1usize << g {
            if skip_odd && odd_char(a, b) {
                continue;
            }
            if vals.at(a, b).contains_zero() {
                return true;
            }
        }
    }
    false
}

#[allow(clippy::too_many_arguments)]
fn try_candidate(
    ctx: &SiegelContext,
    h: u32,
    profile: &DistanceProfile,
    t_num: Vec<i64>,
    t_log2_den: u32,
    log2_inv_eta: u32,
    z_zero: bool,
) -> Result<Option<AuxChoice>, Error> {
    let g = ctx.g;
    let t_zero = t_num.iter().all(|&k| k == 0);
    let fams: [(i64, bool); 4] = [(1, false), (2, false), (1, true), (2, true)];
    let mut ladder = Vec::with_capacity(h.saturating_sub(1) as usize);
    for j in 1..h {
        // t = 0 collapses {t, 2t} to the 0-line and {z+t, z+2t} to the z-line
        let mut lines: Vec<((i64, bool), Vec<ComplexBall>)> = Vec::new();
        for &(k, with_z) in &fams {
            let key = (if t_zero { 0 } else { k }, with_z);
            if lines.iter().any(|(c, _)| *c == key) {
                continue;
            }
            let x = translate_arg(ctx, &t_num, t_log2_den, k, with_z);
            let center = if with_z { Center::V } else { Center::Zero };
            let coarse = log2_inv_eta.min(COARSE_HINT_BITS);
            let mut line =
                b0_line(&hint_values(ctx, profile, &x, center, j, coarse, false)?, g);
            if coarse < log2_inv_eta && line.iter().any(ball_needs_refine) {
                line = b0_line(
                    &hint_values(ctx, profile, &x, center, j, log2_inv_eta, false)?,
                    g,
                );
            }
            if line.iter().any(ComplexBall::contains_zero) {
                trace!(2, "candidate t rejected at level {j} (family k={k}, with_z={with_z})");
                return Ok(None);
            }
            lines.push((key, line));
        }
        let slot: [Vec<ComplexBall>; 4] = fams.map(|(k, with_z)| {
            let key = (if t_zero { 0 } else { k }, with_z);
            lines.iter().find(|(c, _)| *c == key).unwrap().1.clone()
        });
        ladder.push(slot);
    }
    let x = translate_arg(ctx, &t_num, t_log2_den, 2, true);
    let skip_odd = z_zero && t_zero;
    let coarse = log2_inv_eta.min(COARSE_HINT_BITS);
    let mut final_line = hint_values(ctx, profile, &x, Center::V, 0, coarse, true)?;
    if coarse < log2_inv_eta && values_need_refine(&final_line, g, skip_odd) {
        final_line = hint_values(ctx, profile, &x, Center::V, 0, log2_inv_eta, true)?;
    }
    if values_contain_zero(&final_line, g, skip_odd) {
        trace!(2, "candidate t rejected at the final level");
        return Ok(None);
    }
    Ok(Some(AuxChoice {
        g,
        h,
        t_num,
        t_log2_den,
        log2_inv_eta,
        ladder,
        final_line,
        skip_odd,
        j_switch: if t_zero { h } else { 0 },
        zero_line: Vec::new(),
        z_line: Vec::new(),
        z_final: None,
    }))
}

/// Measures the longest prefix of levels (from 0 upward) on which the plain
/// {0, z} scheme is provably zero-free, storing its hints on the choice.
fn probe_plain_prefix(
    ctx: &SiegelContext,
    profile: &DistanceProfile,
    log2_inv_eta: u32,
    z_zero: bool,
    aux: &mut AuxChoice,
) -> Result<(), Error> {
    let g = ctx.g;
    let zeros: Vec<ComplexBall> = vec![ComplexBall::zero(); g];
    let coarse = log2_inv_eta.min(COARSE_HINT_BITS);
    let mut vals = hint_values(ctx, profile, &ctx.z, Center::V, 0, coarse, true)?;
    if coarse < log2_inv_eta && values_need_refine(&vals, g, z_zero) {
        vals = hint_values(ctx, profile, &ctx.z, Center::V, 0, log2_inv_eta, true)?;
    }
    if values_contain_zero(&vals, g, z_zero) {
        return Ok(());
    }
    aux.z_final = Some(vals);
    aux.j_switch = 1;
    for j in 1..aux.h {
        let mut probe_line = |x: &[ComplexBall], center: Center| -> Result<Vec<ComplexBall>, Error> {
            let mut l = b0_line(&hint_values(ctx, profile, x, center, j, coarse, false)?, g);
            if coarse < log2_inv_eta && l.iter().any(ball_needs_refine) {
                l = b0_line(&hint_values(ctx, profile, x, center, j, log2_inv_eta, false)?, g);
            }
            Ok(l)
        };
        let l0 = probe_line(&zeros, Center::Zero)?;
        let lz = if z_zero { l0.clone() } else { probe_line(&ctx.z, Center::V)? };
        if l0.iter().chain(&lz).any(ComplexBall::contains_zero) {
            break;
        }
        aux.zero_line.push(l0);
        aux.z_line.push(lz);
        aux.j_switch = j + 1;
    }
    Ok(())
}

fn aux_seed(g: usize, h: u32) -> u64 {
    0x7468_6574_6121_5eed_u64 ^ ((g as u64) << 32) ^ h as u64
}

/// Randomized search for the auxiliary vector: t = 0 is tried first, then
/// uniformly random dyadic candidates; every [`AUX_TRIES_PER_ROUND`] failures
/// the working η shrinks (×⌈2^{1+log₂²g}⌉ bits) and the grid refines (×2^g).
/// A candidate is accepted when every line the ladder will root or invert is
/// certified zero-free at absolute error ≈ η·exp(−Dist²)/2. Returns None once
/// the escalation cap is reached.
pub fn choose_aux(
    ctx: &SiegelContext,
    h: u32,
    profile: &DistanceProfile,
) -> Result<Option<AuxChoice>, Error> {
    assert!(h >= 1, "duplication needs at least one level");
    let g = ctx.g;
    let z_zero = z_is_exact_zero(ctx);
    let lg = if g > 1 { (g as f64).log2() } else { 0.0 };
    let esc = 2f64.powf(1.0 + lg * lg).ceil() as u32;
    let hf = h as f64;
    let mut log2_inv_eta = (10.0 * hf * hf * (1.0 + hf).log2()).ceil() as u32;
    let mut den_log2 = (4 + g as u32 + h).min(MAX_T_DEN_LOG2);
    let mut rng = ChaCha8Rng::seed_from_u64(aux_seed(g, h));
    for round in 0..=MAX_AUX_ESCALATIONS {
        for attempt in 0..AUX_TRIES_PER_ROUND {
            let t_num: Vec<i64> = if attempt == 0 {
                vec![0; g]
            } else {
                (0..g).map(|_| rng.gen_range(0..=1i64 << den_log2)).collect()
            };
            if let Some(mut aux) =
                try_candidate(ctx, h, profile, t_num, den_log2, log2_inv_eta, z_zero)?
            {
                if !aux.t_is_zero() {
                    probe_plain_prefix(ctx, profile, log2_inv_eta, z_zero, &mut aux)?;
                }
                trace!(
                    1,
                    "auxiliary vector found (round {round}, attempt {attempt}, plain prefix {})",
                    aux.j_switch
                );
                return Ok(Some(aux));
            }
        }
        log2_inv_eta = log2_inv_eta.saturating_mul(esc.max(2));
        den_log2 = (den_log2 + g as u32).min(MAX_T_DEN_LOG2);
        trace!(1, "auxiliary search escalates: η → 2^-{log2_inv_eta}, grid → 2^-{den_log2}");
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Guard-bit budgets
// ---------------------------------------------------------------------------

fn line_gap(ledger: &ShiftedPrecLedger, line: &[ComplexBall], center: Center, j: u32) -> u32 {
    let mut gap = 0u32;
    for (a, v) in line.iter().enumerate() {
        let d_bits = ledger.dist(center, j, a).upper().to_f64().max(0.0) / LN2;
        let lo = v.abs().lower();
        let g_a = if lo.is_sign_positive() && !lo.is_zero() {
            let lo_log2 = (log2_ceil_f(&lo) - 1) as f64;
            (-d_bits - lo_log2).ceil().max(0.0) as u32
        } else {
            ledger.delta
        };
        gap = gap.max(g_a.min(2 * ledger.delta));
    }
    gap
}

fn values_gap(
    ledger: &ShiftedPrecLedger,
    vals: &ThetaValues,
    j: u32,
    skip_odd: bool,
) -> u32 {
    let g = ledger.g;
    let mut gap = 0u32;
    for a in 0..1usize << g {
        for b in 0..1usize << g {
            if skip_odd && odd_char(a, b) {
                continue;
            }
            let v = vals.at(a, b);
            let single = [v.clone()];
            // final-level lines sit over the z-center for every b
            let got = line_gap_single(ledger, &single[0], Center::V, j, a);
            gap = gap.max(got);
        }
    }
    gap
}

fn line_gap_single(
    ledger: &ShiftedPrecLedger,
    v: &ComplexBall,
    center: Center,
    j: u32,
    a: usize,
) -> u32 {
    let d_bits = ledger.dist(center, j, a).upper().to_f64().max(0.0) / LN2;
    let lo = v.abs().lower();
    if lo.is_sign_positive() && !lo.is_zero() {
        let lo_log2 = (log2_ceil_f(&lo) - 1) as f64;
        ((-d_bits - lo_log2).ceil().max(0.0) as u32).min(2 * ledger.delta)
    } else {
        ledger.delta
    }
}

/// Guard bits consumed by the step producing each level, measured from the
/// hint magnitudes: the Hadamard pad loss plus twice the worst shortfall of
/// the roots/divisors against their shifted scale.
fn measure_budgets(ledger: &ShiftedPrecLedger, aux: &AuxChoice, z_zero: bool) -> Vec<u32> {
    let g = ledger.g;
    let lg = if g > 1 { (g as f64).log2() } else { 0.0 };
    let had_loss = (10.0 * (2.0 + g as f64 * lg * lg)).ceil() as u32 + 4;
    let mut budgets = Vec::with_capacity(ledger.h as usize);
    for j in 0..ledger.h {
        let gap = if j < aux.j_switch {
            if j == 0 {
                values_gap(ledger, aux.final_z_hints(), 0, z_zero)
            } else {
                line_gap(ledger, aux.hint_zero_line(j), Center::Zero, j)
                    .max(line_gap(ledger, aux.hint_z_line(j), Center::V, j))
            }
        } else if j == 0 {
            values_gap(ledger, &aux.final_line, 0, aux.skip_odd)
        } else {
            let slot = &aux.ladder[(j - 1) as usize];
            line_gap(ledger, &slot[0], Center::Zero, j)
                .max(line_gap(ledger, &slot[1], Center::Zero, j))
                .max(line_gap(ledger, &slot[2], Center::V, j))
                .max(line_gap(ledger, &slot[3], Center::V, j))
        };
        budgets.push(had_loss + 2 * gap + 8);
    }
    trace!(2, "guard budgets per level: {budgets:?}");
    budgets
}

// ---------------------------------------------------------------------------
// Initial lines and the descent
// ---------------------------------------------------------------------------

fn bump_bits(d_upper: f64) -> u32 {
    (d_upper.max(0.0) / LN2).min(1e8).ceil() as u32
}

/// θ̃_{a,0}(2^h·x, 2^hτ) for all a by direct summation, each characteristic
/// at the absolute precision matching shifted `n_sh` for its own distance.
fn init_line_direct(
    ctx: &SiegelContext,
    ledger: &ShiftedPrecLedger,
    x: &[ComplexBall],
    center: Center,
    n_sh: u32,
) -> Result<Vec<ComplexBall>, Error> {
    let g = ctx.g;
    let h = ledger.h;
    let bump_max = bump_bits(ledger.max_dist_upper(center, h));
    let cx = scaled_ctx(x, &ctx.tau, h, n_sh + bump_max + 64)?;
    let mut line = Vec::with_capacity(1 << g);
    for a in 0..1usize << g {
        let n_abs = n_sh + bump_bits(ledger.dist(center, h, a).upper().to_f64());
        let sh = sum_a_shift(&cx, a)?;
        let tr = truncate(&sh.ctx, n_abs + 2, RadiusVariant::B)?;
        let vals = optimized_with_tree(&sh.ctx, n_abs + 1, &tr.tree, tr.radius.to_f64(), &tr.tail);
        line.push(sh.tilde_factor(0).mul(&vals[0], n_abs + 16));
    }
    Ok(line)
}

fn sqrt_line(
    sq: &[ComplexBall],
    hints: &[ComplexBall],
    prec: u32,
) -> Result<Vec<ComplexBall>, Error> {
    sq.iter().zip(hints).map(|(s, hint)| s.sqrt_with_hint(hint, prec)).collect()
}

fn div_line(num: &[ComplexBall], den: &[ComplexBall], prec: u32) -> Vec<ComplexBall> {
    num.iter().zip(den).map(|(n, d)| n.div(d, prec)).collect()
}

fn op_prec(ledger: &ShiftedPrecLedger, n_out: u32, j: u32) -> u32 {
    let maxd = ledger
        .max_dist_upper(Center::Zero, j)
        .max(ledger.max_dist_upper(Center::V, j));
    n_out + bump_bits(maxd) + 48
}

#[allow(clippy::too_many_arguments)]
fn run_ladder(
    ctx: &SiegelContext,
    d: usize,
    ledger: &ShiftedPrecLedger,
    aux: &AuxChoice,
    budgets: &[u32],
    scale: u32,
    opts: &QlOptions,
    squares: bool,
) -> Result<ThetaValues, Error> {
    let g = ctx.g;
    let h = ledger.h;
    let m = 1usize << g;
    let z_zero = z_is_exact_zero(ctx);
    let mut n_level = vec![ledger.base_n; (h + 1) as usize];
    for j in 0..h as usize {
        n_level[j + 1] = n_level[j] + budgets[j].saturating_mul(scale);
    }

    let two_top = aux.j_switch >= h;
    let arg = |k: i64, with_z: bool| translate_arg(ctx, &aux.t_num, aux.t_log2_den, k, with_z);
    let xs: Vec<(Vec<ComplexBall>, Center)> = if two_top {
        vec![(arg(0, false), Center::Zero), (ctx.z.clone(), Center::V)]
    } else {
        vec![
            (arg(0, false), Center::Zero),
            (arg(1, false), Center::Zero),
            (arg(2, false), Center::Zero),
            (arg(1, true), Center::V),
            (arg(2, true), Center::V),
        ]
    };
    let n_top = n_level[h as usize];
    let init: Vec<Vec<ComplexBall>> = if d == 0 {
        xs.iter()
            .map(|(x, c)| init_line_direct(ctx, ledger, x, *c, n_top))
            .collect::<Result<_, _>>()?
    } else {
        let args: Vec<Vec<ComplexBall>> = xs.iter().map(|(x, _)| x.clone()).collect();
        let tvs = dimension_split(ctx, h, d, n_top, &args, false)?;
        tvs.iter().map(|tv| b0_line(tv, g)).collect()
    };

    // state: the five translate lines [0, t, 2t, z+t, z+2t] or the plain
    // pair [0, z], at the level of the loop variable
    let mut five: Option<Vec<Vec<ComplexBall>>> = None;
    let mut two: Option<Vec<Vec<ComplexBall>>> = None;
    if two_top {
        two = Some(init);
    } else {
        five = Some(init);
    }

    for j in (1..h).rev() {
        let n_in = n_level[(j + 1) as usize];
        let wp = op_prec(ledger, n_level[j as usize], j);
        let geom0 = ledger.geometry(j, Center::Zero, Center::Zero, Center::Zero, Center::Zero);
        let geomv = ledger.geometry(j, Center::V, Center::Zero, Center::V, Center::V);
        if let Some(st) = five.take() {
            let jm = (j - 1) as usize;
            let sq_2t = dupl_products(&st[2], &st[0], &geom0, n_in);
            let sq_z2t = dupl_products(&st[4], &st[0], &geomv, n_in);
            let cross = dupl_products(&st[1], &st[1], &geom0, n_in);
            let new_2t = sqrt_line(&sq_2t, &aux.ladder[jm][1], wp)?;
            let new_z2t = sqrt_line(&sq_z2t, &aux.ladder[jm][3], wp)?;
            let new_0 = div_line(&cross, &new_2t, wp);
            if j == aux.j_switch {
                // hand over to the plain scheme: z-line from the cross
                // product of the two z-carrying translates
                let prod_z = dupl_products(&st[3], &st[1], &geomv, n_in);
                let new_z = div_line(&prod_z, &new_z2t, wp);
                two = Some(vec![new_0, new_z]);
            } else {
                let sq_t = dupl_products(&st[1], &st[0], &geom0, n_in);
                let sq_zt = dupl_products(&st[3], &st[0], &geomv, n_in);
                let new_t = sqrt_line(&sq_t, &aux.ladder[jm][0], wp)?;
                let new_zt = sqrt_line(&sq_zt, &aux.ladder[jm][2], wp)?;
                five = Some(vec![new_0, new_t, new_2t, new_zt, new_z2t]);
            }
        } else {
            let st = two.take().unwrap();
            let sq0 = dupl_products(&st[0], &st[0], &geom0, n_in);
            let new_0 = sqrt_line(&sq0, aux.hint_zero_line(j), wp)?;
            let new_z = if z_zero {
                new_0.clone()
            } else {
                let sqz = dupl_products(&st[1], &st[0], &geomv, n_in);
                sqrt_line(&sqz, aux.hint_z_line(j), wp)?
            };
            two = Some(vec![new_0, new_z]);
        }
    }

    // final level: the signed convolutions introduce all values of b
    let n_in = n_level[1];
    let wp = op_prec(ledger, n_level[0], 0);
    let out_prec = ledger.base_n + 64;
    let geom_f = ledger.geometry(0, Center::V, Center::Zero, Center::V, Center::V);
    let mut out = ThetaValues::empty(g);
    let bs: Vec<usize> = if opts.theta00_only { vec![0] } else { (0..m).collect() };
    if let Some(st) = two.take() {
        let hints = aux.final_z_hints();
        let zl: &[ComplexBall] = if z_zero { &st[0] } else { &st[1] };
        for &b in &bs {
            let sqb = dupl_products_signed(zl, &st[0], &geom_f, n_in, b);
            for a in 0..m {
                if z_zero && odd_char(a, b) {
                    out.set(a, b, ComplexBall::zero());
                    continue;
                }
                let v = if squares {
                    sqb[a].clone()
                } else {
                    sqb[a].sqrt_with_hint(hints.at(a, b), wp)?
                };
                out.set(a, b, v.round_to(out_prec));
            }
        }
    } else {
        let st = five.take().unwrap();
        for &b in &bs {
            let sqb = dupl_products_signed(&st[4], &st[0], &geom_f, n_in, b);
            let prodb = dupl_products_signed(&st[3], &st[1], &geom_f, n_in, b);
            for a in 0..m {
                if z_zero && odd_char(a, b) {
                    out.set(a, b, ComplexBall::zero());
                    continue;
                }
                let v = if squares {
                    prodb[a].sqr(wp).div(&sqb[a], wp)
                } else {
                    let w = sqb[a].sqrt_with_hint(aux.final_line.at(a, b), wp)?;
                    prodb[a].div(&w, wp)
                };
                out.set(a, b, v.round_to(out_prec));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dimension splitting
// ---------------------------------------------------------------------------

/// Evaluates the b = 0 lines (or all characteristics, with `all_b`) of
/// θ̃(2^h·x, 2^hτ) for each listed translate x by splitting off the trailing
/// g−d coordinates: for τ = [[τ₀, σ], [σᵀ, τ₁]] (blocks of size d and g−d),
///
///   θ_{(a',a''),(b',b'')}(z, τ) =
///     Σ_{n'' ∈ Z^{g−d}+a''/2} e(n''ᵀτ₁n'' + 2n''ᵀ(z''+b''/2)) · θ_{a',b'}(z' + σn'', τ₀),
///
/// where the outer sum is short because the τ₁ block is round. Inner values
/// are evaluated recursively by [`ql_all`] after argument reduction; the
/// omitted outer tail is padded onto every output ball.
pub fn dimension_split(
    ctx: &SiegelContext,
    h: u32,
    d: usize,
    n_target: u32,
    xs: &[Vec<ComplexBall>],
    all_b: bool,
) -> Result<Vec<ThetaValues>, Error> {
    let g = ctx.g;
    assert!(d >= 1 && d < g, "split dimension must be strictly between 0 and g");
    let lgd = if d > 1 { (d as f64).log2() } else { 0.0 };
    // margin covering the inner supremum bound 2^{10(1+d·log₂²d)} and the
    // polynomial factors of the tail estimate
    let margin = (10.0 * (1.0 + d as f64 * lgd * lgd)).ceil() as u32 + 48;
    let mut results = Vec::with_capacity(xs.len());
    for x in xs {
        results.push(split_one(ctx, h, d, n_target, n_target + margin, x, all_b)?);
    }
    Ok(results)
}

#[allow(clippy::too_many_arguments)]
fn split_one(
    ctx: &SiegelContext,
    h: u32,
    d: usize,
    n_target: u32,
    n_est: u32,
    x: &[ComplexBall],
    all_b: bool,
) -> Result<ThetaValues, Error> {
    let g = ctx.g;
    let ge = g - d;
    let wp0 = 128u32;

    // geometry pass at modest precision
    let cx0 = scaled_ctx(x, &ctx.tau, h, wp0)?;
    let profile = DistanceProfile::new(&cx0, 64);
    let c1 = RMat::from_fn(ge, ge, |i, j| cx0.cho.at(d + i, d + j).clone());
    let c1_diag: Vec<RealBall> = (0..ge).map(|i| c1.at(i, i).clone()).collect();
    let rho1 = shortest_sq(&c1, 64).sqrt(64)?;
    let v1: Vec<RealBall> = cx0.v[d..].to_vec();
    let half = RealBall::one().scale_pow2(-1);

    struct Piece {
        app: usize,
        points: Vec<Vec<i64>>,
        pad: Float,
    }
    let mut pieces = Vec::with_capacity(1 << ge);
    let mut total_points = 0u64;
    let bd_bits = {
        let lgd = if d > 1 { (d as f64).log2() } else { 0.0 };
        (10.0 * (1.0 + d as f64 * lgd * lgd)).ceil() as u32
    };
    for app in 0..1usize << ge {
        let maxd2 = (0..1usize << d)
            .map(|ap| profile.at_v((ap << ge) | app).upper().to_f64().max(0.0))
            .fold(0.0, f64::max);
        let r2 = RealBall::from_f64(maxd2 + (n_est as f64) * LN2);
        let center: Vec<RealBall> = (0..ge)
            .map(|i| {
                if (app >> (ge - 1 - i)) & 1 == 1 {
                    v1[i].sub(&half, 64)
                } else {
                    v1[i].clone()
                }
            })
            .collect();
        let tree = build_ellipsoid(&c1, &center, &r2, ELLIPSOID_WORKPREC);
        let tail = tail_bound_best(&c1_diag, Some(&rho1), &r2.sqrt(64)?, 0, &RealBall::zero(), 64)?;
        let mut pad = tail.upper();
        pad <<= bd_bits;
        let points = tree.points();
        total_points += points.len() as u64;
        pieces.push(Piece { app, points, pad });
    }

    let n_inner = n_target + 2 * ceil_log2(total_points + 2) + 12;

    // scaled matrix blocks and argument at full precision
    let x_h: Vec<ComplexBall> = x.iter().map(|c| c.scale_pow2(h as i32)).collect();
    let tau_h = CMat::from_fn(g, g, |i, j| ctx.tau.at(i, j).scale_pow2(h as i32));
    let tau0_h = CMat::from_fn(d, d, |i, j| tau_h.at(i, j).clone());
    let sigma_h = CMat::from_fn(d, ge, |i, j| tau_h.at(i, d + j).clone());
    let tau1_h = CMat::from_fn(ge, ge, |i, j| tau_h.at(d + i, d + j).clone());

    // prefactor precision: covers the magnitude of the quadratic phase
    // arguments and the shifted scale of the recombined terms
    let nmax = pieces
        .iter()
        .flat_map(|p| p.points.iter())
        .map(|pt| pt.iter().map(|&k| k.unsigned_abs() as f64 + 0.5).sum::<f64>())
        .fold(1.0, f64::max);
    let tmax = (0..ge)
        .flat_map(|i| (0..ge).map(move |j| (i, j)))
        .map(|(i, j)| tau1_h.at(i, j).abs().upper().to_f64())
        .fold(1.0, f64::max);
    let xmax = x_h.iter().map(|c| c.abs().upper().to_f64()).fold(1.0, f64::max);
    let arg_bits = (tmax * nmax * nmax + 2.0 * nmax * (xmax + 1.0)).max(2.0).log2().ceil() as u32;
    let maxd2_all = profile_max_upper(&profile, Center::V);
    let wp = n_inner + arg_bits + bump_bits(maxd2_all) + 64;

    let cx_full = SiegelContext::new(&x_h, &tau_h, wp)?;
    let outer_tilde = cx_full.theta_tilde_factor();

    let bp_count = if all_b { 1usize << d } else { 1 };
    let mut acc = vec![vec![ComplexBall::zero(); 1 << g]; 1 << g];
    for piece in &pieces {
        let app = piece.app;
        for pt in &piece.points {
            // n'' = pt + a''/2 as exact dyadics
            let nn: Vec<RealBall> = (0..ge)
                .map(|i| {
                    let ai = ((app >> (ge - 1 - i)) & 1) as i64;
                    RealBall::from_i64(2 * pt[i] + ai).scale_pow2(-1)
                })
                .collect();
            // inner argument w = x' + σ·n'', reduced before recursing
            let w: Vec<ComplexBall> = (0..d)
                .map(|r| {
                    let mut s = x_h[r].clone();
                    for (i, ni) in nn.iter().enumerate() {
                        s = s.add(&sigma_h.at(r, i).mul_real(ni, wp), wp);
                    }
                    s
                })
                .collect();
            let cw = SiegelContext::new(&w, &tau0_h, wp)?;
            let (wred, _, cof) = reduce_z(&cw);
            let cred = SiegelContext::new(&wred, &tau0_h, wp)?;
            let inner = ql_all(&cred, n_inner)?;
            let inner_norm = cred.pi_y_yinv_y().exp(wp);
            // quad = n''ᵀτ₁n'' + 2n''ᵀx''
            let mut quad = ComplexBall::zero();
            for (i, ni) in nn.iter().enumerate() {
                for (k, nk) in nn.iter().enumerate() {
                    quad = quad.add(&tau1_h.at(i, k).mul_real(ni, wp).mul_real(nk, wp), wp);
                }
                quad = quad.add(&x_h[d + i].mul_real(ni, wp).scale_pow2(1), wp);
            }
            let base = quad
                .exp_pi_i(wp)
                .mul(&cof, wp)
                .mul_real(&inner_norm, wp)
                .mul_real(&outer_tilde, wp);
            for bpp in 0..if all_b { 1usize << ge } else { 1 } {
                // e(n''ᵀ b'') is an exact power of i
                let mut e2: i64 = 0;
                for i in 0..ge {
                    if (bpp >> (ge - 1 - i)) & 1 == 1 {
                        e2 += 2 * pt[i] + (((app >> (ge - 1 - i)) & 1) as i64);
                    }
                }
                let mut coeff = base.clone();
                for _ in 0..e2.rem_euclid(4) {
                    coeff = coeff.mul_i();
                }
                for ap in 0..1usize << d {
                    let a = (ap << ge) | app;
                    for bp in 0..bp_count {
                        let b = (bp << ge) | bpp;
                        let term = coeff.mul(inner.at(ap, bp), wp);
                        acc[a][b] = acc[a][b].add(&term, wp);
                    }
                }
            }
        }
    }

    let mut out = ThetaValues::empty(g);
    for piece in &pieces {
        for ap in 0..1usize << d {
            let a = (ap << ge) | piece.app;
            for bp in 0..bp_count {
                for bpp in 0..if all_b { 1usize << ge } else { 1 } {
                    let b = (bp << ge) | bpp;
                    out.set(a, b, acc[a][b].pad(&piece.pad).round_to(n_est + 64));
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Top-level drivers
// ---------------------------------------------------------------------------

/// Direct-summation fallback meeting the same shifted output contract: one
/// distance-bumped evaluation per characteristic row.
fn fallback_naive(
    ctx: &SiegelContext,
    n_sh: u32,
    profile: &DistanceProfile,
) -> Result<ThetaValues, Error> {
    let g = ctx.g;
    let mut out = ThetaValues::empty(g);
    for a in 0..1usize << g {
        let n_abs = n_sh + 1 + bump_bits(profile.at_v(a).upper().to_f64());
        let chars: Vec<(usize, usize)> = (0..1usize << g).map(|b| (a, b)).collect();
        let vals = sum_naive(ctx, n_abs, &chars, RadiusVariant::B)?;
        for b in 0..1usize << g {
            out.set(a, b, vals.at(a, b).clone());
        }
    }
    Ok(out)
}

fn square_values(vals: &ThetaValues, g: usize, prec: u32) -> ThetaValues {
    let mut out = ThetaValues::empty(g);
    for a in 0..1usize << g {
        for b in 0..1usize << g {
            if let Some(v) = vals.get(a, b) {
                out.set(a, b, v.sqr(prec));
            }
        }
    }
    out
}

fn run_pipeline(
    ctx: &SiegelContext,
    n_bits: u32,
    opts: &QlOptions,
    squares: bool,
) -> Result<ThetaValues, Error> {
    let g = ctx.g;
    let z_zero = z_is_exact_zero(ctx);
    let (d, h) = pick_split(ctx, n_bits, opts);
    trace!(1, "duplication eval: g={g} N={n_bits} split d={d} levels h={h}");
    let mut out = if h == 0 {
        let vals = if d == 0 {
            theta_tilde_all(ctx, n_bits + 8)?
        } else {
            dimension_split(ctx, 0, d, n_bits + 8, std::slice::from_ref(&ctx.z), true)?
                .pop()
                .expect("one translate requested")
        };
        if squares {
            square_values(&vals, g, n_bits + 80)
        } else {
            vals
        }
    } else {
        let profile = DistanceProfile::new(ctx, 64.max(32 + h));
        match choose_aux(ctx, h, &profile)? {
            None => {
                trace!(1, "no usable auxiliary vector; falling back to direct summation");
                let vals = fallback_naive(ctx, n_bits + 8, &profile)?;
                if squares {
                    square_values(&vals, g, n_bits + 80)
                } else {
                    vals
                }
            }
            Some(aux) => {
                let ledger = ShiftedPrecLedger::from_profile(profile, n_bits + 8, h, aux.log2_inv_eta);
                let budgets = measure_budgets(&ledger, &aux, z_zero);
                let mut scale = 1u32;
                loop {
                    match run_ladder(ctx, d, &ledger, &aux, &budgets, scale, opts, squares) {
                        Ok(v) => break v,
                        Err(Error::AmbiguousRoot) if scale < 4 => {
                            scale *= 2;
                            trace!(1, "ambiguous square root; retrying with {scale}× guard budgets");
                        }
                        Err(Error::AmbiguousRoot) => {
                            trace!(1, "square-root hints exhausted; falling back to direct summation");
                            let vals = fallback_naive(ctx, n_bits + 8, &ledger.profile)?;
                            break if squares {
                                square_values(&vals, g, n_bits + 80)
                            } else {
                                vals
                            };
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    };
    if z_zero && !squares {
        // θ̃_{a,b}(0,τ) with odd aᵀb vanishes identically
        for a in 0..1usize << g {
            for b in 0..1usize << g {
                if odd_char(a, b) {
                    out.set(a, b, ComplexBall::zero());
                }
            }
        }
    }
    Ok(out)
}

/// All 4^g values θ̃_{a,b}(z,τ) with radii ≈ 2^{−N}·exp(−Dist(v, Z^g+a/2)²),
/// in time quasi-linear in N: duplication ladder when the precision warrants
/// it, direct summation otherwise, dimension splitting when the Cholesky
/// diagonals of Im τ are spread out. Expects (z, τ) reduced (tolerantly).
pub fn ql_all(ctx: &SiegelContext, n_bits: u32) -> Result<ThetaValues, Error> {
    run_pipeline(ctx, n_bits, &QlOptions::default(), false)
}

/// [`ql_all`] with explicit tuning options.
pub fn ql_all_with_options(
    ctx: &SiegelContext,
    n_bits: u32,
    opts: &QlOptions,
) -> Result<ThetaValues, Error> {
    run_pipeline(ctx, n_bits, opts, false)
}

/// All squares θ̃_{a,b}(z,τ)², skipping the final square-root extraction
/// (the last ladder level already produces the squares, so no zero-freeness
/// at (z, τ) itself is needed).
pub fn ql_squares(ctx: &SiegelContext, n_bits: u32) -> Result<ThetaValues, Error> {
    run_pipeline(ctx, n_bits, &QlOptions::default(), true)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dist_sq;

    fn cb(re: f64, im: f64) -> ComplexBall {
        ComplexBall::from_f64s(re, im)
    }

    fn cmat(g: usize, entries: &[(f64, f64)]) -> CMat {
        CMat::from_fn(g, g, |i, j| {
            let (re, im) = entries[i * g + j];
            cb(re, im)
        })
    }

    fn ctx(z: &[(f64, f64)], tau: &CMat, prec: u32) -> SiegelContext {
        let zv: Vec<ComplexBall> = z.iter().map(|&(re, im)| cb(re, im)).collect();
        SiegelContext::new(&zv, tau, prec).unwrap()
    }

    fn trivial_geometry(g: usize) -> DuplGeometry {
        let m = 1usize << g;
        DuplGeometry {
            d_in_t: vec![RealBall::zero(); m],
            d_in_u: vec![RealBall::zero(); m],
            d_out_x: vec![RealBall::zero(); m],
            d_out_xp: vec![RealBall::zero(); m],
        }
    }

    #[test]
    fn hadamard_matches_definition() {
        let v: Vec<ComplexBall> = [(1.0, 0.5), (-2.0, 0.25), (3.0, -1.0), (0.5, 2.0)]
            .iter()
            .map(|&(re, im)| cb(re, im))
            .collect();
        let ht = hadamard(&v, 64);
        for a in 0..4usize {
            let mut want = ComplexBall::zero();
            for ap in 0..4usize {
                let term = &v[ap];
                if (a & ap).count_ones() & 1 == 1 {
                    want = want.sub(term, 64);
                } else {
                    want = want.add(term, 64);
                }
            }
            assert!(ht[a].overlaps(&want));
            assert!(ht[a].sub(&want, 64).abs().upper().to_f64() < 1e-15);
        }
        // delta vector maps to the all-ones vector
        let mut delta = vec![ComplexBall::zero(); 4];
        delta[0] = ComplexBall::one();
        for t in hadamard(&delta, 64) {
            assert!(t.sub(&ComplexBall::one(), 64).abs().upper().to_f64() < 1e-18);
        }
    }

    #[test]
    fn hadamard_involution() {
        let v: Vec<ComplexBall> = (0..8).map(|k| cb(k as f64 - 3.0, (k * k) as f64 / 4.0)).collect();
        let back = hadamard(&hadamard(&v, 64), 64);
        for (orig, twice) in v.iter().zip(&back) {
            let diff = twice.scale_pow2(-3).sub(orig, 64);
            assert!(diff.abs().upper().to_f64() < 1e-15);
        }
    }

    #[test]
    fn dupl_products_matches_direct_convolution() {
        for g in [1usize, 2] {
            let m = 1usize << g;
            let t: Vec<ComplexBall> =
                (0..m).map(|k| cb(0.3 + k as f64, 0.125 * k as f64 - 0.5)).collect();
            let u: Vec<ComplexBall> =
                (0..m).map(|k| cb(1.0 - 0.25 * k as f64, 0.0625 + k as f64)).collect();
            let geom = trivial_geometry(g);
            for b in 0..m {
                let got = dupl_products_signed(&t, &u, &geom, 40, b);
                for a in 0..m {
                    let mut want = ComplexBall::zero();
                    for ap in 0..m {
                        let mut term = t[ap].mul(&u[a ^ ap], 80);
                        if (ap & b).count_ones() & 1 == 1 {
                            term = term.neg();
                        }
                        want = want.add(&term, 80);
                    }
                    assert!(got[a].overlaps(&want), "g={g} b={b} a={a}");
                    assert!(got[a].sub(&want, 80).abs().upper().to_f64() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn dupl_zero_radius_inputs_stay_tight() {
        let g = 2usize;
        let m = 1usize << g;
        let t: Vec<ComplexBall> = (0..m).map(|k| cb(0.7 - 0.2 * k as f64, 0.1 * k as f64)).collect();
        let geom = trivial_geometry(g);
        let out = dupl_products(&t, &t, &geom, 120);
        for v in &out {
            assert!(v.rad().to_f64() < 2f64.powi(-110));
        }
    }

    #[test]
    fn dupl_matches_duplication_identity() {
        // identity check on genuine values: x = x' = 0 at τ = i, so the
        // convolution of the θ̃-lines at 2τ must square the values at τ
        let tau = cmat(1, &[(0.0, 1.0)]);
        let c1 = ctx(&[(0.0, 0.0)], &tau, 192);
        let tau2 = cmat(1, &[(0.0, 2.0)]);
        let c2 = ctx(&[(0.0, 0.0)], &tau2, 192);
        let n = 96u32;
        let chars: Vec<(usize, usize)> = vec![(0, 0), (1, 0)];
        let line2 = sum_naive(&c2, n + 20, &chars, RadiusVariant::A).unwrap();
        let t: Vec<ComplexBall> = vec![line2.at(0, 0).clone(), line2.at(1, 0).clone()];
        let prof1 = DistanceProfile::new(&c1, 64);
        let prof2 = DistanceProfile::new(&c2, 64);
        let geom = DuplGeometry {
            d_in_t: (0..2).map(|a| prof2.at_zero(a).clone()).collect(),
            d_in_u: (0..2).map(|a| prof2.at_zero(a).clone()).collect(),
            d_out_x: (0..2).map(|a| prof1.at_zero(a).clone()).collect(),
            d_out_xp: (0..2).map(|a| prof1.at_zero(a).clone()).collect(),
        };
        let all: Vec<(usize, usize)> = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        let vals1 = sum_naive(&c1, n + 20, &all, RadiusVariant::A).unwrap();
        for b in 0..2usize {
            let got = dupl_products_signed(&t, &t, &geom, n, b);
            for a in 0..2usize {
                let want = vals1.at(a, b).sqr(n + 20);
                assert!(got[a].overlaps(&want), "a={a} b={b}");
                assert!(got[a].sub(&want, 128).abs().upper().to_f64() < 2f64.powi(-(n as i32) + 10));
            }
        }
    }

    #[test]
    fn split_params_pinned_cases() {
        // g = 1, τ = i: c₁ = √π ≈ 1.77 ≤ 10 so no split; N = 64 gives
        // ⌈log₂(64·ln2/π)⌉ = 4 levels
        let tau = cmat(1, &[(0.0, 1.0)]);
        let c = ctx(&[(0.0, 0.0)], &tau, 96);
        assert_eq!(choose_split_params(&c, 64), (0, 4));
        // precision below the first threshold: no levels at all
        assert_eq!(choose_split_params(&c, 4), (0, 0));
        // spread diagonals: π·Im τ = diag(1, 1, 2500, 3600) has c = (1, 1, 50, 60),
        // so the trailing block within 60/10 starts at index 2
        let s = 1.0 / std::f64::consts::PI;
        let tau4 = CMat::from_fn(4, 4, |i, j| {
            if i != j {
                return cb(0.0, 0.0);
            }
            let c_target: f64 = [1.0, 1.0, 50.0, 60.0][i];
            cb(0.0, c_target * c_target * s)
        });
        let c4 = ctx(&[(0.0, 0.0); 4], &tau4, 96);
        let (d, _) = choose_split_params(&c4, 256);
        assert_eq!(d, 2);
        // all diagonals large: h = 0 whatever the precision ≤ c²/ln2
        let (d2, h2) = choose_split_params(&c4, 256);
        assert_eq!(d2, 2);
        let _ = h2;
    }

    #[test]
    fn ledger_scales_distances_exactly() {
        let tau = cmat(2, &[(0.0, 1.0), (0.25, 0.25), (0.25, 0.25), (0.0, 1.5)]);
        let c = ctx(&[(0.25, 0.125), (0.0, -0.25)], &tau, 128);
        let ledger = ShiftedPrecLedger::new(&c, 100, 5, 40);
        for a in 0..4usize {
            for center in [Center::Zero, Center::V] {
                let base = ledger.dist(center, 0, a);
                for j in [1u32, 3, 5] {
                    let scaled = ledger.dist(center, j, a);
                    let want = base.scale_pow2(j as i32);
                    assert_eq!(scaled.mid().to_f64(), want.mid().to_f64());
                }
            }
        }
        assert!(ledger.delta >= 40);
    }

    #[test]
    fn distance_parallelogram_inequality() {
        // 2·D((v+v')/2, a')² + 2·D((v−v')/2, a⊕a')² ≥ D(v,a)² + D(v',a)²
        let tau = cmat(2, &[(0.0, 1.0), (0.125, 0.375), (0.125, 0.375), (0.0, 1.25)]);
        let c = ctx(&[(0.0, 0.0), (0.0, 0.0)], &tau, 96);
        let g = 2usize;
        let half = RealBall::one().scale_pow2(-1);
        let shifted_dist = |x: &[RealBall], a: usize| -> RealBall {
            let centered: Vec<RealBall> = (0..g)
                .map(|j| {
                    if (a >> (g - 1 - j)) & 1 == 1 {
                        x[j].sub(&half, 96)
                    } else {
                        x[j].clone()
                    }
                })
                .collect();
            dist_sq(&c.cho, &centered, 96)
        };
        let samples: [[f64; 4]; 4] = [
            [0.3, -0.2, 0.1, 0.4],
            [0.9, 0.5, -0.7, 0.2],
            [-0.4, 1.3, 0.6, -0.9],
            [0.05, -1.1, 1.4, 0.8],
        ];
        for s in samples {
            let v: Vec<RealBall> = vec![RealBall::from_f64(s[0]), RealBall::from_f64(s[1])];
            let vp: Vec<RealBall> = vec![RealBall::from_f64(s[2]), RealBall::from_f64(s[3])];
            let mid: Vec<RealBall> = (0..g).map(|i| v[i].add(&vp[i], 96).scale_pow2(-1)).collect();
            let dif: Vec<RealBall> = (0..g).map(|i| v[i].sub(&vp[i], 96).scale_pow2(-1)).collect();
            for a in 0..4usize {
                for ap in 0..4usize {
                    let lhs = shifted_dist(&mid, ap).scale_pow2(1).add(
                        &shifted_dist(&dif, a ^ ap).scale_pow2(1),
                        96,
                    );
                    let rhs = shifted_dist(&v, a).add(&shifted_dist(&vp, a), 96);
                    assert!(
                        lhs.upper().to_f64() >= rhs.lower().to_f64() - 1e-9,
                        "a={a} a'={ap}"
                    );
                }
            }
        }
    }

    #[test]
    fn choose_aux_accepts_zero_vector_generically() {
        let tau = cmat(1, &[(0.0, 1.0)]);
        let c = ctx(&[(0.0, 0.0)], &tau, 128);
        let profile = DistanceProfile::new(&c, 64);
        let aux = choose_aux(&c, 2, &profile).unwrap().expect("search succeeds");
        assert!(aux.t_is_zero());
        assert!(aux.skip_odd);
        assert_eq!(aux.j_switch, 2);
        assert_eq!(aux.ladder.len(), 1);
    }

    #[test]
    fn choose_aux_avoids_value_zero_at_base() {
        // θ_{0,0}((1+τ)/2, τ) = 0, so z = (1+i)/2 at τ = i defeats both the
        // zero vector and the plain-scheme probe at the base level
        let tau = cmat(1, &[(0.0, 1.0)]);
        let c = ctx(&[(0.5, 0.5)], &tau, 128);
        let profile = DistanceProfile::new(&c, 64);
        let aux = choose_aux(&c, 2, &profile).unwrap().expect("search succeeds");
        assert!(!aux.t_is_zero());
        assert_eq!(aux.j_switch, 0);
    }

    #[test]
    fn choose_aux_probes_partial_prefix() {
        // z = (1+2i)/4 at τ = i: 2z is the zero of θ_{0,0}(·, 2i), so the
        // plain scheme dies at level 1 but survives at level 0
        let tau = cmat(1, &[(0.0, 1.0)]);
        let c = ctx(&[(0.25, 0.5)], &tau, 128);
        let profile = DistanceProfile::new(&c, 64);
        let aux = choose_aux(&c, 3, &profile).unwrap().expect("search succeeds");
        assert!(!aux.t_is_zero());
        assert_eq!(aux.j_switch, 1);
        assert!(aux.z_final.is_some());
    }

    #[test]
    fn ql_matches_naive_dim1() {
        let tau = cmat(1, &[(0.25, 1.0)]);
        let c = ctx(&[(0.375, 0.25)], &tau, 400);
        let n = 256u32;
        let got = ql_all(&c, n).unwrap();
        let chars: Vec<(usize, usize)> = (0..2).flat_map(|a| (0..2).map(move |b| (a, b))).collect();
        let want = sum_naive(&c, n + 8, &chars, RadiusVariant::B).unwrap();
        let profile = DistanceProfile::new(&c, 64);
        for a in 0..2usize {
            for b in 0..2usize {
                let gv = got.at(a, b);
                let wv = want.at(a, b);
                assert!(gv.overlaps(wv), "a={a} b={b}");
                // shifted radius target: 2^{−N+8}·exp(−Dist²)
                let mut bound = profile.at_v(a).neg().exp(64).upper();
                bound >>= n - 8;
                assert!(gv.rad() <= &bound, "radius target a={a} b={b}");
            }
        }
    }

    #[test]
    fn ql_matches_naive_dim2() {
        let tau = cmat(
            2,
            &[(0.125, 1.0), (0.0625, 0.375), (0.0625, 0.375), (-0.25, 1.25)],
        );
        let c = ctx(&[(0.25, -0.125), (-0.375, 0.1875)], &tau, 320);
        let n = 160u32;
        let got = ql_all(&c, n).unwrap();
        let chars: Vec<(usize, usize)> =
            (0..4).flat_map(|a| (0..4).map(move |b| (a, b))).collect();
        let want = sum_naive(&c, n + 8, &chars, RadiusVariant::B).unwrap();
        let profile = DistanceProfile::new(&c, 64);
        for a in 0..4usize {
            for b in 0..4usize {
                assert!(got.at(a, b).overlaps(want.at(a, b)), "a={a} b={b}");
                let mut bound = profile.at_v(a).neg().exp(64).upper();
                bound >>= n - 8;
                assert!(got.at(a, b).rad() <= &bound, "radius target a={a} b={b}");
            }
        }
    }

    #[test]
    fn ql_constants_odd_characteristics_vanish() {
        let tau = cmat(2, &[(0.0, 1.0), (0.25, 0.5), (0.25, 0.5), (0.0, 1.5)]);
        let c = ctx(&[(0.0, 0.0), (0.0, 0.0)], &tau, 300);
        let n = 128u32;
        let got = ql_all(&c, n).unwrap();
        let chars: Vec<(usize, usize)> =
            (0..4).flat_map(|a| (0..4).map(move |b| (a, b))).collect();
        let want = sum_naive(&c, n + 8, &chars, RadiusVariant::B).unwrap();
        for a in 0..4usize {
            for b in 0..4usize {
                if odd_char(a, b) {
                    assert!(ball_exact_zero(got.at(a, b)), "odd (a,b)=({a},{b}) must be exact 0");
                } else {
                    assert!(got.at(a, b).overlaps(want.at(a, b)), "a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn ql_handles_value_zero_via_translate() {
        // the evaluator must survive θ_{0,0}(z,τ) = 0 at the output point
        let tau = cmat(1, &[(0.0, 1.0)]);
        let c = ctx(&[(0.5, 0.5)], &tau, 300);
        let n = 128u32;
        let got = ql_all(&c, n).unwrap();
        let chars: Vec<(usize, usize)> = (0..2).flat_map(|a| (0..2).map(move |b| (a, b))).collect();
        let want = sum_naive(&c, n + 8, &chars, RadiusVariant::B).unwrap();
        for a in 0..2usize {
            for b in 0..2usize {
                assert!(got.at(a, b).overlaps(want.at(a, b)), "a={a} b={b}");
            }
        }
        // the vanishing value really is enclosed around zero
        assert!(got.at(0, 0).contains_zero());
        assert!(got.at(0, 0).rad().to_f64() < 2f64.powi(-((n as i32) - 10)));
    }

    #[test]
    fn dimension_split_matches_naive() {
        let tau = cmat(2, &[(0.0, 1.0), (0.0, 0.0), (0.0, 0.0), (0.0, 40.0)]);
        let c = ctx(&[(0.125, 0.25), (-0.0625, 0.5)], &tau, 256);
        let n = 128u32;
        let got = dimension_split(&c, 0, 1, n, std::slice::from_ref(&c.z), true)
            .unwrap()
            .pop()
            .unwrap();
        let chars: Vec<(usize, usize)> =
            (0..4).flat_map(|a| (0..4).map(move |b| (a, b))).collect();
        let want = sum_naive(&c, n + 8, &chars, RadiusVariant::B).unwrap();
        for a in 0..4usize {
            for b in 0..4usize {
                assert!(got.at(a, b).overlaps(want.at(a, b)), "a={a} b={b}");
                assert!(got.at(a, b).rad().to_f64() < 2f64.powi(-(n as i32) + 12));
            }
        }
    }

    #[test]
    fn dimension_split_scaled_levels() {
        // b = 0 lines of the ladder initialization path: level h = 2 over a
        // split matrix, against direct summation at the scaled arguments
        let tau = cmat(2, &[(0.0, 1.0), (0.0, 0.0), (0.0, 0.0), (0.0, 30.0)]);
        let c = ctx(&[(0.25, 0.125), (0.0, 0.25)], &tau, 256);
        let n = 96u32;
        let h = 2u32;
        let xs = vec![vec![ComplexBall::zero(), ComplexBall::zero()], c.z.clone()];
        let got = dimension_split(&c, h, 1, n, &xs, false).unwrap();
        for (x, tv) in xs.iter().zip(&got) {
            let cx = scaled_ctx(x, &c.tau, h, 512).unwrap();
            let profile = DistanceProfile::new(&cx, 64);
            for a in 0..4usize {
                let bump = bump_bits(profile.at_v(a).upper().to_f64());
                let want = sum_naive(&cx, n + bump + 2, &[(a, 0)], RadiusVariant::B).unwrap();
                assert!(tv.at(a, 0).overlaps(want.at(a, 0)), "a={a}");
            }
        }
    }

    #[test]
    fn ql_squares_match() {
        let tau = cmat(1, &[(0.125, 1.0)]);
        let c = ctx(&[(0.3125, 0.1875)], &tau, 300);
        let n = 128u32;
        let sq = ql_squares(&c, n).unwrap();
        let chars: Vec<(usize, usize)> = (0..2).flat_map(|a| (0..2).map(move |b| (a, b))).collect();
        let want = sum_naive(&c, n + 8, &chars, RadiusVariant::B).unwrap();
        for a in 0..2usize {
            for b in 0..2usize {
                let w = want.at(a, b).sqr(n + 40);
                assert!(sq.at(a, b).overlaps(&w), "a={a} b={b}");
            }
        }
    }

    #[test]
    fn theta00_only_column() {
        let tau = cmat(1, &[(0.0, 1.0)]);
        let c = ctx(&[(0.25, 0.125)], &tau, 300);
        let n = 128u32;
        let opts = QlOptions { theta00_only: true, ..QlOptions::default() };
        let got = ql_all_with_options(&c, n, &opts).unwrap();
        let want = sum_naive(&c, n + 8, &[(0, 0), (1, 0)], RadiusVariant::B).unwrap();
        for a in 0..2usize {
            assert!(got.at(a, 0).overlaps(want.at(a, 0)), "a={a}");
        }
    }

    #[test]
    fn tuned_split_still_correct() {
        let tau = cmat(2, &[(0.0, 1.0), (0.0, 0.0), (0.0, 0.0), (0.0, 40.0)]);
        let c = ctx(&[(0.125, 0.25), (0.0, 0.125)], &tau, 300);
        let n = 96u32;
        let opts = QlOptions { tune_d: true, ..QlOptions::default() };
        let got = ql_all_with_options(&c, n, &opts).unwrap();
        let chars: Vec<(usize, usize)> =
            (0..4).flat_map(|a| (0..4).map(move |b| (a, b))).collect();
        let want = sum_naive(&c, n + 8, &chars, RadiusVariant::B).unwrap();
        for a in 0..4usize {
            for b in 0..4usize {
                assert!(got.at(a, b).overlaps(want.at(a, b)), "a={a} b={b}");
            }
        }
    }

    #[test]
    fn shifted_defect_certifies_output() {
        let tau = cmat(2, &[(0.0, 1.0), (0.125, 0.375), (0.125, 0.375), (0.0, 1.25)]);
        let c = ctx(&[(0.5, 0.25), (-0.25, -0.125)], &tau, 300);
        let n = 128u32;
        let got = ql_all(&c, n).unwrap();
        let ledger = ShiftedPrecLedger::new(&c, n, 1, 0);
        for a in 0..4usize {
            for b in 0..4usize {
                let defect = ledger.shifted_defect(got.at(a, b), Center::V, 0, a);
                assert!(defect <= -(n as f64) + 9.0, "a={a} b={b} defect={defect}");
            }
        }
    }
}
