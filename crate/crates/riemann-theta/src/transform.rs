//! The action of Sp_2g(Z) on theta values.
//!
//! The transformation formula reads, for σ ∈ Sp_2g(Z) with lower blocks γ, δ
//! and a fixed square root f of τ ↦ det(γτ+δ),
//!
//!   Θ(σ·(z,τ)) = e(zᵀ(γτ+δ)⁻¹γz) · f(τ) · φ(σ,f) · Θ(z,τ),
//!
//! where Θ is the vector of all 2^{2g} values θ_{a,b} and φ(σ,f) is a
//! permutation matrix with eighth-root-of-unity signs. This module constructs
//! metaplectic lifts (σ, f) factor by factor from the elementary
//! decomposition, evaluates f along the orbit, determines φ for each factor
//! (by direct character algebra for block-diagonal factors and by numeric
//! matching at a random anchor point for the others), and applies the formula
//! to whole value vectors.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Mutex;

use once_cell::sync::Lazy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::{Float, Integer, Rational};

use crate::ball::{ComplexBall, RealBall};
use crate::mat::CMat;
use crate::siegel::{
    act, act_tau, cocycle, decompose, imat_to_cmat_mul, recompose, ElementaryMatrix,
    SiegelContext, SymplecticMatrix,
};
use crate::sum::{theta_tilde_all, ThetaValues};
use crate::zmat::IMat;
use crate::{trace, Error};

/// ζ₈^k where ζ₈ = e(1/4) = exp(πi/4).
pub fn zeta8_pow(k: u8, prec: u32) -> ComplexBall {
    let k = k % 8;
    if k % 2 == 0 {
        let one = RealBall::one();
        let zero = RealBall::zero();
        return match k / 2 {
            0 => ComplexBall::from_parts(&one, &zero),
            1 => ComplexBall::from_parts(&zero, &one),
            2 => ComplexBall::from_parts(&one.neg(), &zero),
            _ => ComplexBall::from_parts(&zero, &one.neg()),
        };
    }
    let h = RealBall::from_i64(2)
        .sqrt(prec)
        .expect("√2")
        .scale_pow2(-1);
    let (re, im) = match k {
        1 => (h.clone(), h),
        3 => (h.neg(), h),
        5 => (h.clone().neg(), h.neg()),
        _ => (h.clone(), h.neg()),
    };
    ComplexBall::from_parts(&re, &im)
}

// ---------------------------------------------------------------------------
// Signed characteristic permutations
// ---------------------------------------------------------------------------

/// One row per output characteristic: θ_{c'}(σ·(z,τ)) equals
/// e(zᵀ(γτ+δ)⁻¹γz)·f(τ)·ζ₈^k·θ_c(z,τ) where (c, k) = map[c'].
/// Characteristic indices follow [`crate::siegel::Characteristic::index`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharAction {
    pub g: usize,
    map: Vec<(usize, u8)>,
}

impl CharAction {
    pub fn identity(g: usize) -> Self {
        CharAction { g, map: (0..1 << (2 * g)).map(|c| (c, 0)).collect() }
    }

    fn from_map(g: usize, map: Vec<(usize, u8)>) -> Self {
        assert_eq!(map.len(), 1 << (2 * g));
        let mut seen = vec![false; map.len()];
        for &(c, _) in &map {
            assert!(!seen[c], "characteristic action must be a bijection");
            seen[c] = true;
        }
        CharAction { g, map }
    }

    /// The (input characteristic, eighth-root exponent) feeding the output
    /// characteristic `out_index`.
    pub fn source(&self, out_index: usize) -> (usize, u8) {
        self.map[out_index]
    }

    /// φ(σ₁)·φ(σ₂) where self = φ(σ₁), inner = φ(σ₂) — the action of σ₁σ₂.
    pub fn compose(&self, inner: &CharAction) -> CharAction {
        assert_eq!(self.g, inner.g);
        let map = (0..self.map.len())
            .map(|c2| {
                let (c1, k1) = self.map[c2];
                let (c0, k0) = inner.map[c1];
                (c0, (k1 + k0) % 8)
            })
            .collect();
        CharAction { g: self.g, map }
    }
}

// ---------------------------------------------------------------------------
// Lift tokens
// ---------------------------------------------------------------------------

/// The choice of square root f attached to one elementary factor.
#[derive(Clone, Debug)]
pub enum LiftToken {
    /// f is the constant ζ₈^k with k ∈ {0, 2} (squaring to det U = ±1).
    DiagConst(u8),
    /// f ≡ 1.
    TrigOne,
    /// f(τ) = the square root of det(−τ₀) over the embedded block τ₀, on the
    /// branch with ζ₈^r·f(iY) > 0 for positive definite Y.
    JBranch,
}

/// An elementary symplectic matrix together with its chosen lift.
#[derive(Clone, Debug)]
pub struct LiftedFactor {
    pub matrix: ElementaryMatrix,
    pub token: LiftToken,
}

impl LiftedFactor {
    pub fn to_symplectic(&self, g: usize) -> SymplecticMatrix {
        self.matrix.to_symplectic(g)
    }

    /// f(τ) for this factor's lift.
    pub fn eval_f(&self, tau: &CMat, prec: u32) -> Result<ComplexBall, Error> {
        match (&self.token, &self.matrix) {
            (LiftToken::DiagConst(k), _) => Ok(zeta8_pow(*k, prec)),
            (LiftToken::TrigOne, _) => Ok(ComplexBall::one()),
            (LiftToken::JBranch, ElementaryMatrix::EmbeddedJ(idx)) => {
                let sub = CMat::from_fn(idx.len(), idx.len(), |i, j| {
                    tau.at(idx[i], idx[j]).clone()
                });
                eval_f_jg(&sub, prec)
            }
            _ => unreachable!("token does not match factor shape"),
        }
    }

    /// The signed characteristic permutation φ for this factor's lift.
    pub fn char_action(&self, g: usize) -> Result<CharAction, Error> {
        match &self.matrix {
            ElementaryMatrix::Diag(u) => {
                let LiftToken::DiagConst(k) = self.token else {
                    unreachable!()
                };
                Ok(diag_action(u, g, k))
            }
            _ => cached_numeric_action(self, g),
        }
    }
}

/// Deterministic lift(s) of one elementary matrix. Block-diagonal and
/// block-trigonal matrices and embedded J_r each produce a single factor;
/// embedded SL₂(Z) matrices are expanded into a word of trigonal and J₁
/// factors (continued-fraction peeling), each with its own lift.
pub fn lift_elementary(m: &ElementaryMatrix, g: usize) -> Vec<LiftedFactor> {
    match m {
        ElementaryMatrix::Diag(u) => {
            let det = u.det();
            let k = if det == 1u32 { 0 } else { 2 };
            vec![LiftedFactor { matrix: m.clone(), token: LiftToken::DiagConst(k) }]
        }
        ElementaryMatrix::Trig(_) => {
            vec![LiftedFactor { matrix: m.clone(), token: LiftToken::TrigOne }]
        }
        ElementaryMatrix::EmbeddedJ(_) => {
            vec![LiftedFactor { matrix: m.clone(), token: LiftToken::JBranch }]
        }
        ElementaryMatrix::EmbeddedSL2(s) => sl2_word(*s, g)
            .iter()
            .flat_map(|f| lift_elementary(f, g))
            .collect(),
    }
}

/// Writes an SL₂(Z) matrix as a word in T^q = [[1,q],[0,1]], J₁ and −I₂,
/// embedded at the first coordinate. Word length is O(log max|entry|).
fn sl2_word(m: [[i64; 2]; 2], g: usize) -> Vec<ElementaryMatrix> {
    let (mut a, mut b, mut c, mut d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
    assert_eq!(a * d - b * c, 1, "matrix must be in SL2(Z)");
    let trig1 = |q: i64| {
        ElementaryMatrix::Trig(IMat::from_fn(g, g, |i, j| {
            if i == 0 && j == 0 {
                q
            } else {
                0
            }
        }))
    };
    let mut out = Vec::new();
    // peel σ = T^q · J · σ₁ with σ₁ = J⁻¹T^{−q}σ until the lower-left entry
    // vanishes; |c| at least halves per round
    while c != 0 {
        let q = (a as f64 / c as f64).round() as i64;
        if q != 0 {
            out.push(trig1(q));
        }
        out.push(ElementaryMatrix::EmbeddedJ(vec![0]));
        // σ₁ = J⁻¹T^{−q}σ = [[−c, −d], [a−qc, b−qd]]
        let (a1, b1) = (-c, -d);
        let (c1, d1) = (a - q * c, b - q * d);
        a = a1;
        b = b1;
        c = c1;
        d = d1;
    }
    // remainder [[±1, b], [0, ±1]]
    assert!(a == d && (a == 1 || a == -1));
    if a == 1 {
        if b != 0 {
            out.push(trig1(b));
        }
    } else {
        // [[−1, b], [0, −1]] = DiagSp(diag(−1,1,…)) · T^{−b} embedded
        out.push(ElementaryMatrix::Diag(IMat::from_fn(g, g, |i, j| {
            if i != j {
                0
            } else if i == 0 {
                -1
            } else {
                1
            }
        })));
        if b != 0 {
            out.push(trig1(-b));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Block-diagonal action by direct substitution
// ---------------------------------------------------------------------------

/// φ(DiagSp(U), ζ₈^k): reindexing n ↦ Uᵀn in the series gives
/// θ_{a',b'}(Uz, UτUᵀ) = (−1)^{aᵀs}·θ_{a,b}(z,τ) where a ≡ Uᵀa' and
/// b ≡ U⁻¹b' (mod 2), and s = (U⁻¹b' − b)/2.
fn diag_action(u: &IMat, g: usize, f_exp: u8) -> CharAction {
    let ut = u.transpose();
    let uinv = u.inverse_unimodular();
    let bit = |idx: usize, j: usize| ((idx >> (g - 1 - j)) & 1) as i64;
    let map = (0..1usize << (2 * g))
        .map(|cout| {
            let a_out = cout >> g;
            let b_out = cout & ((1 << g) - 1);
            let mut a_in = 0usize;
            let mut parity = 0u8;
            let mut a_bits = vec![0u8; g];
            for j in 0..g {
                let mut x = Integer::new();
                for k in 0..g {
                    if bit(a_out, k) != 0 {
                        x += ut.at(j, k);
                    }
                }
                let aj = if x.is_odd() { 1u8 } else { 0 };
                a_bits[j] = aj;
                a_in |= (aj as usize) << (g - 1 - j);
            }
            let mut b_in = 0usize;
            for j in 0..g {
                let mut v = Integer::new();
                for k in 0..g {
                    if bit(b_out, k) != 0 {
                        v += uinv.at(j, k);
                    }
                }
                let bj = if v.is_odd() { 1u8 } else { 0 };
                b_in |= (bj as usize) << (g - 1 - j);
                let s = (v - bj) / Integer::from(2);
                if s.is_odd() && a_bits[j] == 1 {
                    parity ^= 1;
                }
            }
            // f·ζ₈^k must equal (−1)^{parity}
            let k = (4 * parity as u32 + 8 - f_exp as u32) % 8;
            ((a_in << g) | b_in, k as u8)
        })
        .collect();
    CharAction::from_map(g, map)
}

// ---------------------------------------------------------------------------
// Numeric determination of φ at an anchor point
// ---------------------------------------------------------------------------

static ACTION_CACHE: Lazy<Mutex<HashMap<String, CharAction>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Cache key. Trigonal factors are keyed modulo 8: the action only depends on
/// S mod 8 (permutation part on S mod 2, the phase e(aᵀSa/4) on aᵀSa mod 8).
fn action_key(factor: &LiftedFactor, g: usize) -> String {
    match &factor.matrix {
        ElementaryMatrix::Trig(s) => {
            let mut key = format!("T:{g}");
            for i in 0..g {
                for j in 0..g {
                    key.push_str(&format!(":{}", s.at(i, j).mod_u(8)));
                }
            }
            key
        }
        ElementaryMatrix::EmbeddedJ(idx) => {
            let mut key = format!("J:{g}");
            for i in idx {
                key.push_str(&format!(":{i}"));
            }
            key
        }
        _ => unreachable!("only trigonal and embedded-J actions are matched numerically"),
    }
}

fn cached_numeric_action(factor: &LiftedFactor, g: usize) -> Result<CharAction, Error> {
    let key = action_key(factor, g);
    let mut cache = ACTION_CACHE.lock().unwrap();
    if let Some(a) = cache.get(&key) {
        return Ok(a.clone());
    }
    trace!(1, "determining characteristic action for {}", key);
    let action = determine_action(factor, g, &key)?;
    cache.insert(key, action.clone());
    Ok(action)
}

/// All 2^{2g} unnormalized values θ_{a,b}(z,τ), indexed by characteristic.
fn raw_theta_vector(ctx: &SiegelContext, n_bits: u32) -> Result<Vec<ComplexBall>, Error> {
    let g = ctx.g;
    let vals = theta_tilde_all(ctx, n_bits)?;
    let unnorm = ctx.pi_y_yinv_y().exp(ctx.prec);
    Ok((0..1usize << (2 * g))
        .map(|c| vals.at(c >> g, c & ((1 << g) - 1)).mul_real(&unnorm, ctx.prec))
        .collect())
}

fn to_c64(v: &ComplexBall) -> (f64, f64) {
    (v.re_mid().to_f64(), v.im_mid().to_f64())
}

/// e(zᵀ(γτ+δ)⁻¹γz), the scalar prefactor of the transformation formula.
fn transform_prefactor(
    sigma: &SymplecticMatrix,
    z: &[ComplexBall],
    tau: &CMat,
    prec: u32,
) -> Result<ComplexBall, Error> {
    let gamma = sigma.gamma();
    if gamma.is_zero() {
        return Ok(ComplexBall::one());
    }
    let g = tau.rows;
    let zmat = CMat::from_fn(g, 1, |i, _| z[i].clone());
    let gz = imat_to_cmat_mul(&gamma, &zmat, prec);
    let minv = cocycle(sigma, tau, prec)
        .inverse(prec)
        .ok_or(Error::SingularCocycle)?;
    let u = minv.mul(&gz, prec);
    let mut q = ComplexBall::zero();
    for i in 0..g {
        q = q.add(&z[i].mul(u.at(i, 0), prec), prec);
    }
    Ok(q.exp_pi_i(prec))
}

/// Determines φ(σ, f) for one lifted factor by evaluating both sides of the
/// transformation formula at a random well-conditioned anchor (z₀, τ₀) and
/// matching every output characteristic to the unique input characteristic
/// and eighth root of unity that reproduce it within 2^{−40}.
fn determine_action(factor: &LiftedFactor, g: usize, key: &str) -> Result<CharAction, Error> {
    let sigma = factor.to_symplectic(g);
    let n4 = 1usize << (2 * g);
    let prec = 224u32;
    let n_bits = 96;
    let tol = Float::with_val(32, Float::i_exp(1, -40));
    let floor = Float::with_val(32, Float::i_exp(1, -12));

    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    key.hash(&mut hasher);
    let mut rng = ChaCha8Rng::seed_from_u64(hasher.finish());

    'attempt: for _ in 0..12 {
        // anchor: τ₀ = i·I + small symmetric perturbation, z₀ small random
        let mut xre = vec![vec![0.0f64; g]; g];
        let mut xim = vec![vec![0.0f64; g]; g];
        for i in 0..g {
            for j in 0..=i {
                let re = rng.gen_range(-0.12..0.12);
                xre[i][j] = re;
                xre[j][i] = re;
                let im = if i == j {
                    1.0 + rng.gen_range(0.0..0.3)
                } else {
                    rng.gen_range(-0.05..0.05)
                };
                xim[i][j] = im;
                xim[j][i] = im;
            }
        }
        let tau0 = CMat::from_fn(g, g, |i, j| ComplexBall::from_f64s(xre[i][j], xim[i][j]));
        let z0: Vec<ComplexBall> = (0..g)
            .map(|_| ComplexBall::from_f64s(rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25)))
            .collect();

        let ctx0 = SiegelContext::new(&z0, &tau0, prec)?;
        let th0 = raw_theta_vector(&ctx0, n_bits)?;
        if th0.iter().any(|t| t.abs().lower() < floor) {
            continue; // degenerate anchor: some value too close to 0
        }
        let (z1, tau1) = act(&sigma, &z0, &tau0, prec)?;
        let ctx1 = SiegelContext::new(&z1, &tau1, prec)?;
        let th1 = raw_theta_vector(&ctx1, n_bits)?;

        let fv = factor.eval_f(&tau0, prec)?;
        let pref = transform_prefactor(&sigma, &z0, &tau0, prec)?;
        let scale = pref.mul(&fv, prec);
        let zetas: Vec<ComplexBall> = (0..8).map(|k| zeta8_pow(k, prec)).collect();

        // f64 prefilter: candidates = scale·ζ₈^k·θ_c, matched by coarse
        // distance; each survivor is then verified in ball arithmetic
        let s64 = to_c64(&scale);
        let cands: Vec<Vec<(f64, f64)>> = (0..8)
            .map(|k| {
                let zr = (k as f64) * std::f64::consts::FRAC_PI_4;
                let (zc, zs) = (zr.cos(), zr.sin());
                let rot = (s64.0 * zc - s64.1 * zs, s64.0 * zs + s64.1 * zc);
                th0.iter()
                    .map(|t| {
                        let t = to_c64(t);
                        (rot.0 * t.0 - rot.1 * t.1, rot.0 * t.1 + rot.1 * t.0)
                    })
                    .collect()
            })
            .collect();

        let mut map = Vec::with_capacity(n4);
        for (cout, target) in th1.iter().enumerate() {
            let t64 = to_c64(target);
            let mut hit: Option<(usize, u8)> = None;
            let mut hits = 0usize;
            for k in 0..8usize {
                for cin in 0..n4 {
                    let c = cands[k][cin];
                    let d2 = (t64.0 - c.0).powi(2) + (t64.1 - c.1).powi(2);
                    if d2 > 1e-4 {
                        continue;
                    }
                    let rhs = scale.mul(&zetas[k], prec).mul(&th0[cin], prec);
                    if target.sub(&rhs, prec).abs().upper() < tol {
                        hits += 1;
                        hit = Some((cin, k as u8));
                    }
                }
            }
            if hits != 1 {
                trace!(1, "anchor rejected: {} matches for output {}", hits, cout);
                continue 'attempt;
            }
            map.push(hit.unwrap());
        }
        let action = CharAction::from_map(g, map);

        // cross-checks pinned by the classical anchor relations
        match &factor.matrix {
            ElementaryMatrix::EmbeddedJ(idx) => {
                // θ_{0,0}(0, σ'τ') = ζ₈^r f'(τ') θ_{0,0}(0, τ')
                assert_eq!(
                    action.source(0),
                    (0, (idx.len() % 8) as u8),
                    "embedded-J action contradicts the predicted anchor entry"
                );
            }
            ElementaryMatrix::Trig(s) => {
                // θ_{0,0}(0, τ+S) = θ_{0,b}(0, τ), b = diag(S) mod 2
                let mut b_idx = 0usize;
                for j in 0..g {
                    if s.at(j, j).is_odd() {
                        b_idx |= 1 << (g - 1 - j);
                    }
                }
                assert_eq!(
                    action.source(0),
                    (b_idx, 0),
                    "trigonal action contradicts the diagonal-shift anchor"
                );
            }
            _ => {}
        }
        return Ok(action);
    }
    Err(Error::ToleranceExceeded)
}

// ---------------------------------------------------------------------------
// f(τ) for J_g: certified square root of det(−τ)
// ---------------------------------------------------------------------------

fn rational_ball(p: &Integer, q: &Integer, prec: u32) -> RealBall {
    let r = Rational::from((p.clone(), q.clone()));
    let lo = Float::with_val_round(prec, &r, rug::float::Round::Down).0;
    let hi = Float::with_val_round(prec, &r, rug::float::Round::Up).0;
    RealBall::from_endpoints(&lo, &hi, prec)
}

/// Coefficients c_0..c_g of P(t) = det(A + tB) by Lagrange interpolation at
/// the integer nodes 0, 1, −1, 2, −2, …
fn pencil_coefficients(a: &CMat, b: &CMat, wp: u32) -> Vec<ComplexBall> {
    let g = a.rows;
    let nodes: Vec<i64> = (0..=g as i64)
        .map(|i| if i % 2 == 0 { i / 2 } else { -(i + 1) / 2 })
        .collect();
    let vals: Vec<ComplexBall> = nodes
        .iter()
        .map(|&t| {
            let m = CMat::from_fn(g, g, |i, j| {
                a.at(i, j).add(&b.at(i, j).mul_i64(t, wp), wp)
            });
            m.det(wp)
        })
        .collect();
    let mut coeffs = vec![ComplexBall::zero(); g + 1];
    for (i, &ti) in nodes.iter().enumerate() {
        // numerator Π_{m≠i}(t − t_m), denominator Π_{m≠i}(t_i − t_m)
        let mut num = vec![Integer::from(1)];
        let mut den = Integer::from(1);
        for (m, &tm) in nodes.iter().enumerate() {
            if m == i {
                continue;
            }
            let mut next = vec![Integer::new(); num.len() + 1];
            for (k, c) in num.iter().enumerate() {
                next[k] -= Integer::from(c * tm);
                next[k + 1] += c;
            }
            num = next;
            den *= ti - tm;
        }
        for (k, c) in num.iter().enumerate() {
            let w = rational_ball(c, &den, wp);
            coeffs[k] = coeffs[k].add(&vals[i].mul_real(&w, wp), wp);
        }
    }
    coeffs
}

fn horner(coeffs: &[ComplexBall], x: &ComplexBall, prec: u32) -> ComplexBall {
    let mut acc = coeffs.last().unwrap().clone();
    for c in coeffs.iter().rev().skip(1) {
        acc = acc.mul(x, prec).add(c, prec);
    }
    acc
}

/// Simultaneous (Durand–Kerner) iteration on midpoints followed by a rigorous
/// inclusion step: the Weierstrass corrections W_j certify that the disks
/// D(x_j, deg·|W_j|) jointly contain all roots; when pairwise disjoint, each
/// contains exactly one.
fn isolate_roots(coeffs: &[ComplexBall], wp: u32) -> Result<Vec<ComplexBall>, Error> {
    let deg = coeffs.len() - 1;
    let lc = coeffs[deg].clone();
    if !(lc.abs().lower().cmp0() == Some(std::cmp::Ordering::Greater)) {
        return Err(Error::ToleranceExceeded);
    }
    let mids: Vec<ComplexBall> = coeffs.iter().map(|c| c.mid_ball()).collect();
    let lc_lo = lc.abs().lower().to_f64();
    let mut r0 = 1.0f64;
    for c in coeffs.iter().take(deg) {
        let q = c.abs().upper().to_f64() / lc_lo;
        if q.is_finite() {
            r0 = r0.max(1.0 + q);
        }
    }

    let mut xs: Vec<ComplexBall> = (0..deg)
        .map(|j| {
            let ang = 2.0 * std::f64::consts::PI * (j as f64) / (deg as f64) + 0.7;
            ComplexBall::from_f64s(r0 * 0.8 * ang.cos(), r0 * 0.8 * ang.sin())
        })
        .collect();

    let stop = Float::with_val(32, Float::i_exp(1, -(wp as i32) + 12));
    for _ in 0..400 {
        let mut maxd = Float::with_val(32, 0);
        for j in 0..deg {
            let mut den = mids[deg].mid_ball();
            for k in 0..deg {
                if k != j {
                    den = den.mul(&xs[j].sub(&xs[k], wp), wp).mid_ball();
                }
            }
            if den.contains_zero() {
                // collision: nudge and keep iterating
                xs[j] = xs[j].add(&ComplexBall::from_f64s(1e-3, 2e-3), wp).mid_ball();
                maxd = Float::with_val(32, 1);
                continue;
            }
            let num = horner(&mids, &xs[j], wp);
            let delta = num.div(&den, wp);
            let d = delta.abs().upper();
            if d > maxd {
                maxd = d;
            }
            xs[j] = xs[j].sub(&delta, wp).mid_ball();
        }
        if maxd < stop {
            break;
        }
    }

    // rigorous inclusion disks
    let mut roots = Vec::with_capacity(deg);
    for j in 0..deg {
        let mut den = lc.clone();
        for k in 0..deg {
            if k != j {
                den = den.mul(&xs[j].sub(&xs[k], wp), wp);
            }
        }
        if den.contains_zero() {
            return Err(Error::ToleranceExceeded);
        }
        let w = horner(coeffs, &xs[j], wp).div(&den, wp);
        let mut rad = w.abs().upper();
        rad *= deg as u32;
        let ball = ComplexBall::from_mid_rad(
            xs[j].re_mid().clone(),
            xs[j].im_mid().clone(),
            rad,
        );
        roots.push(ball);
    }
    // pairwise disjointness ⇒ one root per disk
    for j in 0..deg {
        for k in j + 1..deg {
            let gap = roots[j].sub(&roots[k], wp).abs().lower();
            if !(gap.cmp0() == Some(std::cmp::Ordering::Greater)) {
                return Err(Error::ToleranceExceeded);
            }
        }
    }
    Ok(roots)
}

fn excludes_cut(z: &ComplexBall) -> bool {
    z.re_ball().is_positive() || !z.im_ball().contains_zero()
}

/// f(τ) for the normalized lift of J_g: the square root of det(−τ) on the
/// branch with ζ₈^g·f(iY) real positive for every positive definite Y.
///
/// The value is carried along a path from some iY to τ: the polynomial
/// P(t) = det(−iY + (t+1)/2·(iY−τ)) interpolates det at the two endpoints,
/// its roots are isolated as complex balls, and the analytic square root
/// Q(t) = Π √±(t−λ_j) (principal branches chosen per root by sign of Re λ_j)
/// is continuous on [−1,1] as long as no root meets the segment. The sign is
/// fixed at t = −1 against √det Y and read off at t = 1.
pub fn eval_f_jg(tau: &CMat, prec: u32) -> Result<ComplexBall, Error> {
    let g = tau.rows;
    let mut lcg = 0x2545f4914f6cdd1du64;
    for attempt in 0..10 {
        // diagonal Y near the identity; vary it per attempt
        let y: Vec<f64> = (0..g)
            .map(|_| {
                lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                if attempt == 0 {
                    1.0 + 0.125 * (((lcg >> 33) % 1024) as f64) / 1024.0
                } else {
                    0.7 + 0.6 * (((lcg >> 33) % 1024) as f64) / 1024.0
                }
            })
            .collect();
        match eval_f_attempt(tau, &y, prec) {
            Ok(v) => return Ok(v),
            Err(Error::PathThroughRoot) | Err(Error::ToleranceExceeded) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::PathThroughRoot)
}

fn eval_f_attempt(tau: &CMat, y_diag: &[f64], prec: u32) -> Result<ComplexBall, Error> {
    let g = tau.rows;
    let mut wp = prec + 64 + 16 * g as u32;
    for _ in 0..2 {
        match eval_f_once(tau, y_diag, prec, wp) {
            Err(Error::ToleranceExceeded) => {
                wp *= 2;
                continue;
            }
            other => return other,
        }
    }
    Err(Error::ToleranceExceeded)
}

fn eval_f_once(tau: &CMat, y_diag: &[f64], prec: u32, wp: u32) -> Result<ComplexBall, Error> {
    let g = tau.rows;
    // A = (−iY − τ)/2, B = (iY − τ)/2: P(t) = det(A + tB), P(−1) = det(−iY),
    // P(1) = det(−τ)
    let iy = |i: usize, j: usize| -> ComplexBall {
        if i == j {
            ComplexBall::from_f64s(0.0, y_diag[i])
        } else {
            ComplexBall::zero()
        }
    };
    let a = CMat::from_fn(g, g, |i, j| {
        iy(i, j).neg().sub(tau.at(i, j), wp).scale_pow2(-1)
    });
    let b = CMat::from_fn(g, g, |i, j| {
        iy(i, j).sub(tau.at(i, j), wp).scale_pow2(-1)
    });
    let coeffs = pencil_coefficients(&a, &b, wp);
    let roots = isolate_roots(&coeffs, wp)?;

    // no root may touch the path [−1, 1]
    let fat = Float::with_val(32, Float::i_exp(1, -20));
    for r in &roots {
        let x = r.re_mid().to_f64();
        let yv = r.im_mid().to_f64();
        let rad = r.rad().to_f64() + 1e-13;
        let dist = if x.abs() <= 1.0 {
            yv.abs()
        } else {
            ((x.abs() - 1.0).powi(2) + yv * yv).sqrt()
        };
        if dist <= rad + 1e-13 {
            if *r.rad() < fat {
                return Err(Error::PathThroughRoot);
            }
            return Err(Error::ToleranceExceeded); // inconclusive: tighten
        }
        if *r.rad() > fat {
            return Err(Error::ToleranceExceeded);
        }
    }

    // branch split: √(t−λ) for roots left of the imaginary axis, √(λ−t) for
    // roots right of it; either works in the overlap band |Re λ| ≤ 0.01.
    // Q(t)² = (−1)^{g−r}/lc · P(t), so scale by a fixed square root of
    // (−1)^{g−r}·lc to make Q² = P; the residual sign is absorbed by λ.
    let mut n_left = 0usize;
    let one = ComplexBall::one();
    let mut q_plus = ComplexBall::one(); // Q(1)
    let mut q_minus = ComplexBall::one(); // Q(−1)
    for r in &roots {
        let left = r.re_mid().cmp0() != Some(std::cmp::Ordering::Greater);
        let (arg_p, arg_m) = if left {
            n_left += 1;
            (one.sub(r, wp), one.neg().sub(r, wp))
        } else {
            (r.sub(&one, wp), r.add(&one, wp))
        };
        if !excludes_cut(&arg_p) || !excludes_cut(&arg_m) {
            return Err(Error::ToleranceExceeded);
        }
        q_plus = q_plus.mul(&arg_p.sqrt_principal(wp)?, wp);
        q_minus = q_minus.mul(&arg_m.sqrt_principal(wp)?, wp);
    }
    let mut lc = coeffs[g].clone();
    if (g - n_left) % 2 == 1 {
        lc = lc.neg();
    }
    let s = lc.sqrt_principal(wp)?;
    q_plus = q_plus.mul(&s, wp);
    q_minus = q_minus.mul(&s, wp);

    // fix the sign: λ ζ₈^g Q(−1) = √det Y > 0
    let xi = zeta8_pow((g % 8) as u8, wp).mul(&q_minus, wp);
    let re = xi.re_ball();
    let flip = if re.is_positive() {
        false
    } else if re.is_negative() {
        true
    } else {
        return Err(Error::ToleranceExceeded);
    };
    let out = if flip { q_plus.neg() } else { q_plus };
    Ok(out.round_to(prec + 16))
}

// ---------------------------------------------------------------------------
// Composed lifts and value transformation
// ---------------------------------------------------------------------------

/// A metaplectic lift of σ: an ordered factorization into lifted elementary
/// matrices whose product is exactly σ.
#[derive(Clone, Debug)]
pub struct MetaplecticLift {
    pub factors: Vec<LiftedFactor>,
    pub product: SymplecticMatrix,
}

impl MetaplecticLift {
    /// Lift σ by decomposing it into elementary factors.
    pub fn new(sigma: &SymplecticMatrix) -> Self {
        let g = sigma.g;
        let factors: Vec<LiftedFactor> = decompose(sigma)
            .iter()
            .flat_map(|m| lift_elementary(m, g))
            .collect();
        debug_assert_eq!(
            &recompose(&factors.iter().map(|f| f.matrix.clone()).collect::<Vec<_>>(), g),
            sigma,
            "lift factors must recompose to σ"
        );
        MetaplecticLift { factors, product: sigma.clone() }
    }

    /// Concatenation: the lift of the product σ₁·σ₂·… with f composed along
    /// the orbit.
    pub fn compose_lifts(parts: &[MetaplecticLift]) -> MetaplecticLift {
        assert!(!parts.is_empty());
        let g = parts[0].product.g;
        let mut factors = Vec::new();
        let mut product = SymplecticMatrix::identity(g);
        for p in parts {
            factors.extend(p.factors.iter().cloned());
            product = product.mul(&p.product);
        }
        MetaplecticLift { factors, product }
    }

    /// The composed signed characteristic permutation φ(σ, f).
    pub fn char_action(&self) -> Result<CharAction, Error> {
        let g = self.product.g;
        let mut acc = CharAction::identity(g);
        for f in &self.factors {
            acc = acc.compose(&f.char_action(g)?);
        }
        Ok(acc)
    }

    /// f(τ) for the composed lift: with σ = m₁⋯m_k, walk the orbit right to
    /// left, f(τ) = Π_j f_{m_j}(m_{j+1}⋯m_k·τ).
    pub fn eval_f(&self, tau: &CMat, prec: u32) -> Result<ComplexBall, Error> {
        let g = self.product.g;
        let mut cur = tau.clone();
        let mut acc = ComplexBall::one();
        for f in self.factors.iter().rev() {
            acc = acc.mul(&f.eval_f(&cur, prec)?, prec);
            cur = act_tau(&f.to_symplectic(g), &cur, prec)?;
        }
        Ok(acc)
    }
}

/// Transports a full vector of values θ̃_{a,b}(z,τ) to the transformed point
/// σ·(z,τ). Returns the context at the new point together with the values
/// θ̃_{a,b}(σ·(z,τ)). All 2^{2g} characteristics of the input must be
/// populated.
pub fn transform_values(
    sigma: &SymplecticMatrix,
    ctx: &SiegelContext,
    values: &ThetaValues,
    prec: u32,
) -> Result<(SiegelContext, ThetaValues), Error> {
    let g = ctx.g;
    assert_eq!(sigma.g, g);
    let n4 = 1usize << (2 * g);
    assert_eq!(values.populated(), n4, "all characteristics must be populated");

    let lift = MetaplecticLift::new(sigma);
    let action = lift.char_action()?;
    let f = lift.eval_f(&ctx.tau, prec)?;
    let pref = transform_prefactor(sigma, &ctx.z, &ctx.tau, prec)?;
    let (z2, tau2) = act(sigma, &ctx.z, &ctx.tau, prec)?;
    let ctx2 = SiegelContext::new(&z2, &tau2, prec)?;

    // θ = exp(πyᵀY⁻¹y)·θ̃ on the way in, back to θ̃ at the new point
    let descale = ctx.pi_y_yinv_y().exp(prec).mul(&ctx2.theta_tilde_factor(), prec);
    let scale = pref.mul(&f, prec).mul_real(&descale, prec);
    let zetas: Vec<ComplexBall> = (0..8).map(|k| zeta8_pow(k, prec)).collect();

    let mut out = ThetaValues::empty(g);
    for cout in 0..n4 {
        let (cin, k) = action.source(cout);
        let v = values
            .at(cin >> g, cin & ((1 << g) - 1))
            .mul(&scale, prec)
            .mul(&zetas[k as usize], prec);
        out.set(cout >> g, cout & ((1 << g) - 1), v);
    }
    Ok((ctx2, out))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RadiusVariant;
    use crate::sum::sum_naive;

    fn cmat_f64(re: &[&[f64]], im: &[&[f64]]) -> CMat {
        let g = re.len();
        CMat::from_fn(g, g, |i, j| ComplexBall::from_f64s(re[i][j], im[i][j]))
    }

    fn random_reduced(g: usize, prec: u32, rng: &mut ChaCha8Rng) -> SiegelContext {
        let mut xre = vec![vec![0.0f64; g]; g];
        let mut xim = vec![vec![0.0f64; g]; g];
        for i in 0..g {
            for j in 0..=i {
                let re = rng.gen_range(-0.3..0.3);
                xre[i][j] = re;
                xre[j][i] = re;
                let im = if i == j {
                    rng.gen_range(1.0..1.5)
                } else {
                    rng.gen_range(-0.2..0.2)
                };
                xim[i][j] = im;
                xim[j][i] = im;
            }
        }
        let tau = CMat::from_fn(g, g, |i, j| ComplexBall::from_f64s(xre[i][j], xim[i][j]));
        let z: Vec<ComplexBall> = (0..g)
            .map(|_| ComplexBall::from_f64s(rng.gen_range(-0.4..0.4), rng.gen_range(-0.3..0.3)))
            .collect();
        SiegelContext::new(&z, &tau, prec).unwrap()
    }

    /// random word in the standard generators, entries kept below `cap`
    fn random_symplectic(g: usize, rng: &mut ChaCha8Rng, steps: usize, cap: i64) -> SymplecticMatrix {
        let mut acc = SymplecticMatrix::identity(g);
        for _ in 0..steps {
            let pick = rng.gen_range(0..3u32);
            let m = match pick {
                0 => SymplecticMatrix::j(g),
                1 => {
                    let mut s = IMat::zeros(g, g);
                    for i in 0..g {
                        for j in 0..=i {
                            let e = rng.gen_range(-2i64..=2);
                            *s.at_mut(i, j) = Integer::from(e);
                            *s.at_mut(j, i) = Integer::from(e);
                        }
                    }
                    SymplecticMatrix::trig(&s)
                }
                _ => {
                    // transvection or permutation-with-sign
                    if g == 1 || rng.gen_bool(0.4) {
                        let mut u = IMat::identity(g);
                        *u.at_mut(0, 0) = Integer::from(-1);
                        SymplecticMatrix::diag(&u)
                    } else {
                        let i = rng.gen_range(0..g);
                        let mut j = rng.gen_range(0..g);
                        if j == i {
                            j = (j + 1) % g;
                        }
                        let mut u = IMat::identity(g);
                        *u.at_mut(i, j) = Integer::from(rng.gen_range(1..=2i64));
                        SymplecticMatrix::diag(&u)
                    }
                }
            };
            let next = acc.mul(&m);
            let big = (0..2 * g)
                .flat_map(|i| (0..2 * g).map(move |j| (i, j)))
                .any(|(i, j)| next.m.at(i, j).clone().abs() > cap);
            if big {
                break;
            }
            acc = next;
        }
        acc
    }

    fn all_chars(g: usize) -> Vec<(usize, usize)> {
        (0..1usize << g)
            .flat_map(|a| (0..1usize << g).map(move |b| (a, b)))
            .collect()
    }

    fn all_values(ctx: &SiegelContext, n_bits: u32) -> ThetaValues {
        sum_naive(ctx, n_bits, &all_chars(ctx.g), RadiusVariant::A).unwrap()
    }

    #[test]
    fn zeta8_powers_are_consistent() {
        let z = zeta8_pow(1, 96);
        let mut acc = ComplexBall::one();
        for k in 0..8u8 {
            assert!(acc.overlaps(&zeta8_pow(k, 96)), "k={k}");
            acc = acc.mul(&z, 96);
        }
        assert!(acc.overlaps(&ComplexBall::one()));
        assert!(zeta8_pow(2, 96).overlaps(&ComplexBall::i()));
        assert!(zeta8_pow(4, 96).overlaps(&ComplexBall::one().neg()));
    }

    #[test]
    fn f_jg_reference_points() {
        // τ = i·I_g forces f = ζ₈^{−g}
        for g in 1..=3usize {
            let tau = CMat::from_fn(g, g, |i, j| {
                if i == j {
                    ComplexBall::i()
                } else {
                    ComplexBall::zero()
                }
            });
            let f = eval_f_jg(&tau, 128).unwrap();
            let expect = zeta8_pow(((8 - g % 8) % 8) as u8, 160);
            assert!(f.overlaps(&expect), "g={g}: {f:?}");
        }
        // τ = 2i: f = ζ₈^{−1}·√2
        let tau = CMat::from_fn(1, 1, |_, _| ComplexBall::from_f64s(0.0, 2.0));
        let f = eval_f_jg(&tau, 128).unwrap();
        let sqrt2 = ComplexBall::from_real(&RealBall::from_i64(2).sqrt(160).unwrap());
        let expect = zeta8_pow(7, 160).mul(&sqrt2, 160);
        assert!(f.overlaps(&expect), "{f:?} vs {expect:?}");
        // g = 2, τ = i·diag(1,2): f = ζ₈^{−2}·√2
        let tau = cmat_f64(&[&[0.0, 0.0], &[0.0, 0.0]], &[&[1.0, 0.0], &[0.0, 2.0]]);
        let f = eval_f_jg(&tau, 128).unwrap();
        let expect = zeta8_pow(6, 160).mul(&sqrt2, 160);
        assert!(f.overlaps(&expect), "{f:?} vs {expect:?}");
    }

    #[test]
    fn f_jg_squares_to_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xf2);
        for g in 1..=3usize {
            for _ in 0..4 {
                let ctx = random_reduced(g, 160, &mut rng);
                let f = eval_f_jg(&ctx.tau, 128).unwrap();
                let neg_tau = CMat::from_fn(g, g, |i, j| ctx.tau.at(i, j).neg());
                let det = neg_tau.det(160);
                assert!(f.sqr(160).overlaps(&det), "g={g}");
            }
        }
    }

    #[test]
    fn trig_action_anchor_rows() {
        // θ_{0,0}(0, τ+S) = θ_{0,b}(0, τ) with b = diag(S) mod 2
        let s = IMat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => 1,
            (1, 1) => 2,
            _ => 1,
        });
        let factors = lift_elementary(&ElementaryMatrix::Trig(s), 2);
        assert_eq!(factors.len(), 1);
        let action = factors[0].char_action(2).unwrap();
        // b = (1, 0) → index 0b10 = 2
        assert_eq!(action.source(0), (2, 0));
    }

    #[test]
    fn j_action_anchor_rows() {
        for (g, idx) in [(1usize, vec![0usize]), (2, vec![0, 1]), (2, vec![1]), (3, vec![0, 2])] {
            let factors = lift_elementary(&ElementaryMatrix::EmbeddedJ(idx.clone()), g);
            let action = factors[0].char_action(g).unwrap();
            assert_eq!(action.source(0), (0, (idx.len() % 8) as u8), "g={g} idx={idx:?}");
        }
    }

    #[test]
    fn diag_action_of_minus_identity_is_parity() {
        // θ_{a,b}(−z, τ) = (−1)^{aᵀb} θ_{a,b}(z, τ)
        for g in 1..=2usize {
            let u = IMat::identity(g).neg();
            let factors = lift_elementary(&ElementaryMatrix::Diag(u), g);
            let action = factors[0].char_action(g).unwrap();
            let LiftToken::DiagConst(fk) = factors[0].token else { panic!() };
            for c in 0..1usize << (2 * g) {
                let (cin, k) = action.source(c);
                assert_eq!(cin, c, "−I fixes all characteristics");
                let a = c >> g;
                let b = c & ((1 << g) - 1);
                let par = ((a & b).count_ones() & 1) as u32;
                // f·ζ₈^k = (−1)^{aᵀb}
                assert_eq!((fk as u32 + k as u32) % 8, 4 * par, "c={c}");
            }
        }
    }

    #[test]
    fn sl2_words_recompose() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x51);
        for _ in 0..40 {
            // random SL2 via products of T and J
            let mut m = [[1i64, 0], [0, 1]];
            for _ in 0..8 {
                let q = rng.gen_range(-9i64..=9);
                m = [
                    [m[0][0] + q * m[1][0], m[0][1] + q * m[1][1]],
                    [m[1][0], m[1][1]],
                ];
                m = [[m[1][0], m[1][1]], [-m[0][0], -m[0][1]]];
            }
            for g in [1usize, 3] {
                let word = sl2_word(m, g);
                let prod = recompose(&word, g);
                let direct = ElementaryMatrix::EmbeddedSL2(m).to_symplectic(g);
                assert_eq!(prod, direct, "m={m:?} g={g}");
            }
        }
    }

    #[test]
    fn transform_under_identity_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ctx = random_reduced(2, 192, &mut rng);
        let vals = all_values(&ctx, 96);
        let (_, out) = transform_values(&SymplecticMatrix::identity(2), &ctx, &vals, 192).unwrap();
        for (a, b) in all_chars(2) {
            assert!(out.at(a, b).overlaps(vals.at(a, b)));
        }
    }

    #[test]
    fn transform_j1_at_tau_2i() {
        // θ_{0,0}(0, i/2) = ζ₈ f(2i) θ_{0,0}(0, 2i) = √2·θ_{0,0}(0, 2i)
        let tau = CMat::from_fn(1, 1, |_, _| ComplexBall::from_f64s(0.0, 2.0));
        let z = [ComplexBall::zero()];
        let ctx = SiegelContext::new(&z, &tau, 192).unwrap();
        let vals = all_values(&ctx, 96);
        let (ctx2, out) = transform_values(&SymplecticMatrix::j(1), &ctx, &vals, 192).unwrap();
        // the image point is τ' = −1/(2i) = i/2
        assert!(ctx2.tau.at(0, 0).contains_point(
            &Float::with_val(32, 0),
            &Float::with_val(32, 0.5)
        ));
        let direct = all_values(&ctx2, 96);
        assert!(out.at(0, 0).overlaps(direct.at(0, 0)));
        // and the scalar relation against the other side
        let sqrt2 = RealBall::from_i64(2).sqrt(192).unwrap();
        let rhs = vals.at(0, 0).mul_real(&sqrt2, 192);
        assert!(out.at(0, 0).overlaps(&rhs));
    }

    #[test]
    fn transform_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xbead);
        for g in 1..=2usize {
            for trial in 0..4 {
                let ctx = random_reduced(g, 224, &mut rng);
                let sigma = random_symplectic(g, &mut rng, 3 + trial, 40);
                let vals = all_values(&ctx, 96);
                let (ctx2, out) = transform_values(&sigma, &ctx, &vals, 224).unwrap();
                let direct = all_values(&ctx2, 80);
                for (a, b) in all_chars(g) {
                    assert!(
                        out.at(a, b).overlaps(direct.at(a, b)),
                        "g={g} trial={trial} ({a},{b})\n{:?}\n{:?}",
                        out.at(a, b),
                        direct.at(a, b)
                    );
                }
            }
        }
    }

    #[test]
    fn transform_composes_as_group_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0);
        let g = 2usize;
        let ctx = random_reduced(g, 224, &mut rng);
        let s1 = random_symplectic(g, &mut rng, 3, 30);
        let s2 = random_symplectic(g, &mut rng, 3, 30);
        let vals = all_values(&ctx, 96);
        let (mid, v1) = transform_values(&s2, &ctx, &vals, 224).unwrap();
        let (_, chained) = transform_values(&s1, &mid, &v1, 224).unwrap();
        let (_, at_once) = transform_values(&s1.mul(&s2), &ctx, &vals, 224).unwrap();
        for (a, b) in all_chars(g) {
            assert!(
                chained.at(a, b).overlaps(at_once.at(a, b)),
                "({a},{b})"
            );
        }
    }

    #[test]
    fn lift_factors_recompose_to_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x11f7);
        for g in 1..=3usize {
            for _ in 0..6 {
                let sigma = random_symplectic(g, &mut rng, 6, 2000);
                let lift = MetaplecticLift::new(&sigma);
                let word: Vec<ElementaryMatrix> =
                    lift.factors.iter().map(|f| f.matrix.clone()).collect();
                assert_eq!(recompose(&word, g), sigma);
            }
        }
    }
}
