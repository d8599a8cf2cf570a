//! Partial sums of theta series over ellipsoid point sets.
//!
//! Everything here evaluates the normalized series
//!
//!   θ̃_{0,b}(z,τ) = exp(−πyᵀY⁻¹y) Σ_{n ∈ Z^g} (−1)^{nᵀb} e(nᵀτn + 2nᵀz)
//!
//! (and its derivative-weighted variants) by summing over the lattice points
//! of an ellipsoid around v = −Y⁻¹y and padding the result with a certified
//! tail bound. Three evaluators are provided:
//!
//! * [`sum_naive`] — one product per lattice point; best for small point sets,
//! * [`sum_optimized`] — the recursive scheme that shares partial products
//!   along tree layers and lowers the working precision for points far from
//!   the center, so that on average less than one full-precision complex
//!   multiplication is spent per lattice point,
//! * [`sum_jets`] — sums weighted by (2πi)^{|ν|} n^ν for all derivative
//!   orders |ν| ≤ B at once.
//!
//! Characteristics a ≠ 0 reduce to the a = 0 case by shifting z to z + τa/2
//! ([`sum_a_shift`]); for the normalized values the leftover cofactor is a
//! pure phase.

use std::collections::BTreeMap;

use rug::{Float, Integer};

use crate::ball::{ComplexBall, RealBall};
use crate::geometry::{
    build_ellipsoid, dist_sq, projection_columns, radius_for_jets, radius_for_sum, shortest_sq,
    tail_bound_best, EllipsoidTree, RadiusVariant, ELLIPSOID_WORKPREC,
};
use crate::siegel::SiegelContext;
use crate::Error;

const LN2: f64 = std::f64::consts::LN_2;
/// Per-term working precision never drops below this many bits.
const MIN_TERM_PREC: u32 = 8;

pub(crate) fn ceil_log2(x: u64) -> u32 {
    debug_assert!(x >= 1);
    64 - (x - 1).leading_zeros()
}

fn cpow(base: &ComplexBall, k: u64, prec: u32) -> ComplexBall {
    let mut acc = ComplexBall::one();
    let mut b = base.clone();
    let mut k = k;
    while k > 0 {
        if k & 1 == 1 {
            acc = acc.mul(&b, prec);
        }
        k >>= 1;
        if k > 0 {
            b = b.sqr(prec);
        }
    }
    acc
}

fn i_pow(v: &ComplexBall, k: u32) -> ComplexBall {
    match k % 4 {
        0 => v.clone(),
        1 => v.mul_i(),
        2 => v.neg(),
        _ => v.mul_i().neg(),
    }
}

// ---------------------------------------------------------------------------
// Result containers
// ---------------------------------------------------------------------------

/// Evaluated theta values, indexed by characteristic. The entry at (a, b)
/// holds θ̃_{a,b}(z,τ); only the populated subset is meaningful. Index
/// convention: bit g−1−j of `a_index` is a_j (and likewise for b).
#[derive(Clone, Debug)]
pub struct ThetaValues {
    pub g: usize,
    values: Vec<Option<ComplexBall>>,
}

impl ThetaValues {
    pub fn empty(g: usize) -> Self {
        ThetaValues { g, values: vec![None; 1 << (2 * g)] }
    }

    pub fn set(&mut self, a_index: usize, b_index: usize, v: ComplexBall) {
        self.values[(a_index << self.g) | b_index] = Some(v);
    }

    pub fn get(&self, a_index: usize, b_index: usize) -> Option<&ComplexBall> {
        self.values[(a_index << self.g) | b_index].as_ref()
    }

    /// The value at (a, b); panics when that characteristic was not requested.
    pub fn at(&self, a_index: usize, b_index: usize) -> &ComplexBall {
        self.get(a_index, b_index).expect("characteristic not populated")
    }

    pub fn populated(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

/// Derivative values ∂^ν θ_{a,b}(z,τ) for all multi-indices |ν| ≤ order,
/// stored per characteristic. Unlike [`ThetaValues`] these are values of θ
/// itself, not of the normalized θ̃.
#[derive(Clone, Debug)]
pub struct ThetaJet {
    pub g: usize,
    pub order: usize,
    /// All ν ≥ 0 with |ν| ≤ order, graded lexicographic.
    pub orders: Vec<Vec<u32>>,
    blocks: Vec<Option<Vec<ComplexBall>>>,
}

impl ThetaJet {
    pub fn empty(g: usize, order: usize) -> Self {
        ThetaJet {
            g,
            order,
            orders: multi_indices(g, order),
            blocks: vec![None; 1 << (2 * g)],
        }
    }

    pub fn set_block(&mut self, a_index: usize, b_index: usize, vals: Vec<ComplexBall>) {
        assert_eq!(vals.len(), self.orders.len());
        self.blocks[(a_index << self.g) | b_index] = Some(vals);
    }

    /// All derivatives at one characteristic, in `orders` order.
    pub fn block(&self, a_index: usize, b_index: usize) -> Option<&[ComplexBall]> {
        self.blocks[(a_index << self.g) | b_index].as_deref()
    }

    pub fn order_index(&self, nu: &[u32]) -> Option<usize> {
        self.orders.iter().position(|o| o == nu)
    }

    /// ∂^ν θ_{a,b}; panics when the block or order is absent.
    pub fn value(&self, a_index: usize, b_index: usize, nu: &[u32]) -> &ComplexBall {
        let i = self.order_index(nu).expect("order out of range");
        &self.block(a_index, b_index).expect("characteristic not populated")[i]
    }
}

/// All multi-indices ν ∈ Z_{≥0}^g with |ν| ≤ max_total, graded lexicographic
/// (total order first, then lexicographic within each grade).
pub fn multi_indices(g: usize, max_total: usize) -> Vec<Vec<u32>> {
    fn fill(out: &mut Vec<Vec<u32>>, prefix: &mut Vec<u32>, slots: usize, left: u32) {
        if slots == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=left).rev() {
            prefix.push(first);
            fill(out, prefix, slots - 1, left - first);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=max_total as u32 {
        fill(&mut out, &mut Vec::new(), g, total);
    }
    out
}

// ---------------------------------------------------------------------------
// Characteristic shift
// ---------------------------------------------------------------------------

/// The context for z + τa/2 together with the exact cofactors that recover
/// θ_{a,b}(z,τ) from a = 0 sums at the shifted argument:
///
///   θ_{a,b}(z,τ)  = cof  · i^{aᵀb} · Σ_n (−1)^{nᵀb} e(nᵀτn + 2nᵀ(z+τa/2)),
///   θ̃_{a,b}(z,τ) = phase · i^{aᵀb} · θ̃_{0,b}(z+τa/2, τ),
///
/// with cof = e(aᵀτa/4 + aᵀz) and phase = e(aᵀ(Re τ)a/4 + aᵀ(Re z)). The
/// normalization factors of the two θ̃ cancel against |cof| exactly, which is
/// why the θ̃ relation only involves a unit-modulus phase.
pub struct ShiftedChar {
    pub a_index: usize,
    pub ctx: SiegelContext,
    pub phase: ComplexBall,
    pub cof: ComplexBall,
}

impl ShiftedChar {
    /// i^{aᵀb} · phase, the θ̃ cofactor for characteristic (a, b).
    pub fn tilde_factor(&self, b_index: usize) -> ComplexBall {
        i_pow(&self.phase, (self.a_index & b_index).count_ones())
    }

    /// i^{aᵀb} · cof, the unnormalized cofactor for characteristic (a, b).
    pub fn raw_factor(&self, b_index: usize) -> ComplexBall {
        i_pow(&self.cof, (self.a_index & b_index).count_ones())
    }
}

/// Builds the shifted context for the characteristic row `a_index`.
pub fn sum_a_shift(ctx: &SiegelContext, a_index: usize) -> Result<ShiftedChar, Error> {
    let g = ctx.g;
    let prec = ctx.prec;
    let a_bit = |j: usize| (a_index >> (g - 1 - j)) & 1 == 1;
    if a_index == 0 {
        return Ok(ShiftedChar {
            a_index,
            ctx: ctx.clone(),
            phase: ComplexBall::one(),
            cof: ComplexBall::one(),
        });
    }
    let z_shift: Vec<ComplexBall> = (0..g)
        .map(|k| {
            let mut s = ctx.z[k].clone();
            for j in 0..g {
                if a_bit(j) {
                    s = s.add(&ctx.tau.at(k, j).scale_pow2(-1), prec);
                }
            }
            s
        })
        .collect();
    let shifted = SiegelContext::new(&z_shift, &ctx.tau, prec)?;
    // arg = aᵀτa/4 + aᵀz
    let mut arg = ComplexBall::zero();
    for j in 0..g {
        if !a_bit(j) {
            continue;
        }
        for k in 0..g {
            if a_bit(k) {
                arg = arg.add(&ctx.tau.at(j, k).scale_pow2(-2), prec);
            }
        }
        arg = arg.add(&ctx.z[j], prec);
    }
    let cof = arg.exp_pi_i(prec);
    let phase = ComplexBall::from_real(&arg.re_ball()).exp_pi_i(prec);
    Ok(ShiftedChar { a_index, ctx: shifted, phase, cof })
}

// ---------------------------------------------------------------------------
// Precomputed exponentials
// ---------------------------------------------------------------------------

/// The exponential quantities shared by all terms of the series:
/// q_{j,k} = e((2−δ_{jk})τ_{jk}) and w_j = e(2z_j), their inverses, and the
/// square-power tables q_{j,j}^{k²} for 0 ≤ k ≤ B_j.
pub struct ExpTable {
    pub g: usize,
    prec: u32,
    q: Vec<ComplexBall>,
    qinv: Vec<ComplexBall>,
    qsq: Vec<Vec<ComplexBall>>,
    w: Vec<ComplexBall>,
    winv: Vec<ComplexBall>,
}

impl ExpTable {
    /// Builds the table at working precision `prec`; `coord_bounds[j]` is the
    /// largest |n_j| that will be requested from the square-power table.
    pub fn new(ctx: &SiegelContext, prec: u32, coord_bounds: &[i64]) -> Self {
        let g = ctx.g;
        let mut q = vec![ComplexBall::zero(); g * g];
        let mut qinv = vec![ComplexBall::zero(); g * g];
        for j in 0..g {
            for k in j..g {
                let arg = if j == k {
                    ctx.tau.at(j, k).clone()
                } else {
                    ctx.tau.at(j, k).scale_pow2(1)
                };
                q[j * g + k] = arg.exp_pi_i(prec);
                qinv[j * g + k] = arg.neg().exp_pi_i(prec);
            }
        }
        let qsq = (0..g)
            .map(|j| {
                let bj = coord_bounds.get(j).copied().unwrap_or(0).max(0) as usize;
                let qj = &q[j * g + j];
                let q2 = qj.sqr(prec);
                let mut tab = Vec::with_capacity(bj + 1);
                tab.push(ComplexBall::one());
                let mut odd = qj.clone(); // q^{2k+1}
                for _ in 0..bj {
                    let last = tab.last().unwrap();
                    tab.push(last.mul(&odd, prec));
                    odd = odd.mul(&q2, prec);
                }
                tab
            })
            .collect();
        let (w, winv) = Self::w_tables(ctx, prec);
        ExpTable { g, prec, q, qinv, qsq, w, winv }
    }

    /// Reuses the τ-dependent part for a new z over the same τ (the expensive
    /// q tables are shared across the translates used by the duplication
    /// ladder).
    pub fn rebind_z(&self, ctx: &SiegelContext) -> Self {
        let (w, winv) = Self::w_tables(ctx, self.prec);
        ExpTable {
            g: self.g,
            prec: self.prec,
            q: self.q.clone(),
            qinv: self.qinv.clone(),
            qsq: self.qsq.clone(),
            w,
            winv,
        }
    }

    fn w_tables(ctx: &SiegelContext, prec: u32) -> (Vec<ComplexBall>, Vec<ComplexBall>) {
        let w = (0..ctx.g)
            .map(|j| ctx.z[j].scale_pow2(1).exp_pi_i(prec))
            .collect();
        let winv = (0..ctx.g)
            .map(|j| ctx.z[j].scale_pow2(1).neg().exp_pi_i(prec))
            .collect();
        (w, winv)
    }

    pub fn q(&self, j: usize, k: usize) -> &ComplexBall {
        let (j, k) = if j <= k { (j, k) } else { (k, j) };
        &self.q[j * self.g + k]
    }

    pub fn q_inv(&self, j: usize, k: usize) -> &ComplexBall {
        let (j, k) = if j <= k { (j, k) } else { (k, j) };
        &self.qinv[j * self.g + k]
    }

    pub fn w(&self, j: usize) -> &ComplexBall {
        &self.w[j]
    }

    pub fn w_inv(&self, j: usize) -> &ComplexBall {
        &self.winv[j]
    }

    /// q_{j,j}^{k²} from the precomputed table.
    pub fn q_square(&self, j: usize, k: u64) -> &ComplexBall {
        &self.qsq[j][k as usize]
    }

    /// q_{j,k}^e for a signed exponent, via the inverse table for e < 0.
    pub fn q_pow(&self, j: usize, k: usize, e: i64, prec: u32) -> ComplexBall {
        let base = if e >= 0 { self.q(j, k) } else { self.q_inv(j, k) };
        cpow(base, e.unsigned_abs(), prec)
    }

    pub fn w_pow(&self, j: usize, e: i64, prec: u32) -> ComplexBall {
        let base = if e >= 0 { self.w(j) } else { self.w_inv(j) };
        cpow(base, e.unsigned_abs(), prec)
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

pub(crate) struct Truncation {
    pub(crate) tree: EllipsoidTree,
    pub(crate) radius: Float,
    /// Upper bound on the sum of exp(−‖n−v‖²) over all omitted lattice points.
    pub(crate) tail: Float,
}

/// Chooses a radius so the tail is below 2^{−n_bits}, builds the ellipsoid
/// tree, and evaluates the tail bound actually achieved (the smaller of the
/// two available estimates).
pub(crate) fn truncate(
    ctx: &SiegelContext,
    n_bits: u32,
    variant: RadiusVariant,
) -> Result<Truncation, Error> {
    let wp = 64;
    let radius = match variant {
        RadiusVariant::A => radius_for_sum(ctx, n_bits, RadiusVariant::A, None)?,
        RadiusVariant::B => {
            let d = dist_sq(&ctx.cho, &ctx.v, wp);
            radius_for_sum(ctx, n_bits, RadiusVariant::B, Some(&d))?
        }
    };
    let r_ball = RealBall::exact(radius.clone());
    let r_sq = r_ball.sqr(wp);
    let tree = build_ellipsoid(&ctx.cho, &ctx.v, &r_sq, ELLIPSOID_WORKPREC);
    let rho = shortest_sq(&ctx.cho, wp).sqrt(wp)?;
    let tail = tail_bound_best(&ctx.c_diag(), Some(&rho), &r_ball, 0, &RealBall::zero(), wp)?;
    Ok(Truncation { tree, radius, tail: tail.upper() })
}

fn parity_mask(g: usize, n: &[i64]) -> usize {
    let mut mask = 0usize;
    for (j, &nj) in n.iter().enumerate() {
        if nj & 1 != 0 {
            mask |= 1 << (g - 1 - j);
        }
    }
    mask
}

fn add_signed(acc: &mut ComplexBall, term: &ComplexBall, negative: bool, prec: u32) {
    *acc = if negative { acc.sub(term, prec) } else { acc.add(term, prec) };
}

fn coord_bounds_of(tree: &EllipsoidTree) -> Vec<i64> {
    (0..tree.ambient()).map(|j| tree.coord_bound(j)).collect()
}

// ---------------------------------------------------------------------------
// Naive summation
// ---------------------------------------------------------------------------

/// θ̃_{0,b}(z,τ) for all b as plain per-point sums over the tree; returns the
/// raw vector indexed by b. Working precision N₀ = N + 2·log₂|E| + 1.
fn naive_tilde(ctx: &SiegelContext, n_bits: u32, variant: RadiusVariant) -> Result<Vec<ComplexBall>, Error> {
    let g = ctx.g;
    let tr = truncate(ctx, n_bits + 1, variant)?;
    let n0 = n_bits + 2 * ceil_log2(tr.tree.count() + 2) + 1;
    let table = ExpTable::new(ctx, n0, &coord_bounds_of(&tr.tree));
    let mut s = vec![ComplexBall::zero(); 1 << g];
    for n in tr.tree.points() {
        let mut u = ComplexBall::one();
        for j in 0..g {
            for k in j..g {
                let e = n[j] * n[k];
                if e != 0 {
                    u = u.mul(&table.q_pow(j, k, e, n0), n0);
                }
            }
            if n[j] != 0 {
                u = u.mul(&table.w_pow(j, n[j], n0), n0);
            }
        }
        let mask = parity_mask(g, &n);
        for (b, sb) in s.iter_mut().enumerate() {
            add_signed(sb, &u, (mask & b).count_ones() & 1 == 1, n0);
        }
    }
    let factor = ctx.theta_tilde_factor();
    Ok(s
        .into_iter()
        .map(|sb| sb.mul_real(&factor, n0).pad(&tr.tail))
        .collect())
}

/// Evaluates θ̃_{a,b}(z,τ) to absolute precision ~2^{−N} for each requested
/// characteristic by direct summation, one term product per lattice point.
/// Rows with a ≠ 0 go through the shifted context of [`sum_a_shift`].
/// `variant` selects the truncation radius rule; the distance-shifted rule
/// assumes τ is reduced.
pub fn sum_naive(
    ctx: &SiegelContext,
    n_bits: u32,
    chars: &[(usize, usize)],
    variant: RadiusVariant,
) -> Result<ThetaValues, Error> {
    let g = ctx.g;
    let mut by_a: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in chars {
        assert!(a < (1 << g) && b < (1 << g));
        by_a.entry(a).or_default().push(b);
    }
    let mut out = ThetaValues::empty(g);
    for (a, bs) in by_a {
        let sh = sum_a_shift(ctx, a)?;
        let vals = naive_tilde(&sh.ctx, n_bits + 1, variant)?;
        for b in bs {
            out.set(a, b, sh.tilde_factor(b).mul(&vals[b], n_bits + 16));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Optimized summation
// ---------------------------------------------------------------------------

struct OptSum<'a> {
    g: usize,
    table: &'a ExpTable,
    /// c_j² midpoints, for the per-layer precision drop.
    c_sq: Vec<f64>,
    /// Center-projection columns as approximate reals (used only for choosing
    /// starting points and precisions, never for membership or enclosures).
    proj: Vec<Vec<f64>>,
    /// fixed[k][j] = (q_{j,k}^{n_k}, q_{j,k}^{−n_k}) for the currently fixed
    /// coordinate value n_k at each level above the active one.
    fixed: Vec<Vec<(ComplexBall, ComplexBall)>>,
    s: Vec<ComplexBall>,
    n0: u32,
}

impl<'a> OptSum<'a> {
    fn drop_prec(&self, nrel: u32, coord: usize, n: i64, w: f64) -> u32 {
        let d = n as f64 - w;
        let drop = (self.c_sq[coord] * d * d / LN2).floor();
        if !drop.is_finite() || drop >= (nrel as f64) {
            MIN_TERM_PREC
        } else {
            (nrel - drop as u32).max(MIN_TERM_PREC)
        }
    }

    /// u = w_d · ∏_{k>d} q_{d,k}^{n_k} and its inverse, from the fixed powers.
    fn line_base(&self, coord: usize, nrel: u32) -> (ComplexBall, ComplexBall) {
        let mut u = self.table.w(coord).clone();
        let mut uinv = self.table.w_inv(coord).clone();
        for k in coord + 1..self.g {
            u = u.mul(&self.fixed[k][coord].0, nrel);
            uinv = uinv.mul(&self.fixed[k][coord].1, nrel);
        }
        (u, uinv)
    }

    fn spow(u: &ComplexBall, uinv: &ComplexBall, e: i64, prec: u32) -> ComplexBall {
        let base = if e >= 0 { u } else { uinv };
        cpow(base, e.unsigned_abs(), prec)
    }

    fn node(&mut self, node: &EllipsoidTree, w: &[f64], nrel: u32, pi_prod: &ComplexBall) {
        if node.is_empty() {
            return;
        }
        let coord = node.dim() - 1;
        if coord == 0 {
            self.line(node, w, nrel, pi_prod);
            return;
        }
        let (lo, hi) = node.bounds();
        let (u, uinv) = self.line_base(coord, nrel);
        let m0 = (w[coord].round() as i64).clamp(lo, hi);

        // powers at the starting index m0
        let base_pi = pi_prod.mul(&Self::spow(&u, &uinv, m0, nrel), nrel);
        let base_rows: Vec<(ComplexBall, ComplexBall)> = (0..coord)
            .map(|j| {
                (
                    self.table.q_pow(j, coord, m0, nrel),
                    self.table.q_pow(j, coord, -m0, nrel),
                )
            })
            .collect();

        let mut pi_u = base_pi.clone();
        let mut rows = base_rows.clone();
        for n in m0..=hi {
            let np = self.drop_prec(nrel, coord, n, w[coord]);
            if n > m0 {
                pi_u = pi_u.mul(&u, np);
                for (j, row) in rows.iter_mut().enumerate() {
                    row.0 = row.0.mul(self.table.q(j, coord), np);
                    row.1 = row.1.mul(self.table.q_inv(j, coord), np);
                }
            }
            self.child(node, w, coord, n, np, &pi_u, &rows);
        }
        let mut pi_u = base_pi;
        let mut rows = base_rows;
        for n in (lo..m0).rev() {
            let np = self.drop_prec(nrel, coord, n, w[coord]);
            pi_u = pi_u.mul(&uinv, np);
            for (j, row) in rows.iter_mut().enumerate() {
                row.0 = row.0.mul(self.table.q_inv(j, coord), np);
                row.1 = row.1.mul(self.table.q(j, coord), np);
            }
            self.child(node, w, coord, n, np, &pi_u, &rows);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn child(
        &mut self,
        node: &EllipsoidTree,
        w: &[f64],
        coord: usize,
        n: i64,
        np: u32,
        pi_u: &ComplexBall,
        rows: &[(ComplexBall, ComplexBall)],
    ) {
        let (lo, _) = node.bounds();
        let ch = &node.children()[(n - lo) as usize];
        if ch.is_empty() {
            return;
        }
        let pi_child = self.table.q_square(coord, n.unsigned_abs()).mul(pi_u, np);
        let step = n as f64 - w[coord];
        let w_child: Vec<f64> = (0..coord)
            .map(|j| w[j] - self.proj[coord - 1][j] * step)
            .collect();
        self.fixed[coord] = rows.to_vec();
        self.node(ch, &w_child, np, &pi_child);
    }

    /// Base case: a one-dimensional layer. Computes u^{n} for the whole range
    /// with one multiplication (or cheaper squaring) per point at that point's
    /// own precision, splits the layer sum by parity of n, and folds the two
    /// partial sums into all 2^g accumulators.
    fn line(&mut self, node: &EllipsoidTree, w: &[f64], nrel: u32, pi_prod: &ComplexBall) {
        let g = self.g;
        let (lo, hi) = node.bounds();
        let (u, uinv) = self.line_base(0, nrel);
        let m0 = (w[0].round() as i64).clamp(lo, hi);
        let len = (hi - lo + 1) as usize;
        let idx = |n: i64| (n - lo) as usize;

        let mut pows: Vec<Option<ComplexBall>> = vec![None; len];
        pows[idx(m0)] = Some(Self::spow(&u, &uinv, m0, self.drop_prec(nrel, 0, m0, w[0])));
        for n in m0 + 1..=hi {
            let np = self.drop_prec(nrel, 0, n, w[0]);
            let half_ready = n % 2 == 0 && lo <= n / 2 && pows[idx(n / 2)].is_some();
            let val = if half_ready {
                pows[idx(n / 2)].as_ref().unwrap().sqr(np)
            } else {
                pows[idx(n - 1)].as_ref().unwrap().mul(&u, np)
            };
            pows[idx(n)] = Some(val);
        }
        for n in (lo..m0).rev() {
            let np = self.drop_prec(nrel, 0, n, w[0]);
            let half_ready = n % 2 == 0 && n / 2 <= hi && pows[idx(n / 2)].is_some();
            let val = if half_ready {
                pows[idx(n / 2)].as_ref().unwrap().sqr(np)
            } else {
                pows[idx(n + 1)].as_ref().unwrap().mul(&uinv, np)
            };
            pows[idx(n)] = Some(val);
        }

        let mut even = ComplexBall::zero();
        let mut odd = ComplexBall::zero();
        for n in lo..=hi {
            let np = self.drop_prec(nrel, 0, n, w[0]);
            let t = self
                .table
                .q_square(0, n.unsigned_abs())
                .mul(pows[idx(n)].as_ref().unwrap(), np);
            if n & 1 == 0 {
                even = even.add(&t, nrel);
            } else {
                odd = odd.add(&t, nrel);
            }
        }
        let even = pi_prod.mul(&even, nrel);
        let odd = pi_prod.mul(&odd, nrel);
        let plus = even.add(&odd, self.n0);
        let minus = even.sub(&odd, self.n0);

        // (−1)^{Σ_{j≥1} b_j n_j} from the fixed coordinates; the varying
        // coordinate's parity is already captured by the even/odd split
        let mut mask = 0usize;
        for (k, &nc) in node.common_coords().iter().enumerate() {
            if nc & 1 != 0 {
                mask |= 1 << (g - 1 - (1 + k));
            }
        }
        for b in 0..1usize << g {
            let val = if (b >> (g - 1)) & 1 == 0 { &plus } else { &minus };
            add_signed(&mut self.s[b], val, (mask & b).count_ones() & 1 == 1, self.n0);
        }
    }
}

/// θ̃_{0,b}(z,τ) for all b via the layered product-sharing scheme, over a
/// caller-provided truncation. `radius` only tunes the guard-bit count;
/// `tail_pad` must bound the omitted-point sum Σ exp(−‖n−v‖²).
pub(crate) fn optimized_with_tree(
    ctx: &SiegelContext,
    n_bits: u32,
    tree: &EllipsoidTree,
    radius: f64,
    tail_pad: &Float,
) -> Vec<ComplexBall> {
    let g = ctx.g;
    let guard_a = (10.0 * (g as f64 * radius.max(2.0)).ln()).floor() as u32;
    let guard_b = 2 * ceil_log2(tree.count() + 2) + 1;
    let n0 = n_bits + guard_a.max(guard_b);
    let table = ExpTable::new(ctx, n0, &coord_bounds_of(tree));
    let s = optimized_core(ctx, &table, tree, n0);
    let factor = ctx.theta_tilde_factor();
    s.into_iter()
        .map(|sb| sb.mul_real(&factor, n0).pad(tail_pad))
        .collect()
}

pub(crate) fn optimized_core(
    ctx: &SiegelContext,
    table: &ExpTable,
    tree: &EllipsoidTree,
    n0: u32,
) -> Vec<ComplexBall> {
    let g = ctx.g;
    let mut worker = OptSum {
        g,
        table,
        c_sq: (0..g)
            .map(|j| {
                let c = ctx.cho.at(j, j).to_f64();
                c * c
            })
            .collect(),
        proj: projection_columns(&ctx.cho, ELLIPSOID_WORKPREC)
            .iter()
            .map(|col| col.iter().map(|x| x.to_f64()).collect())
            .collect(),
        fixed: vec![Vec::new(); g],
        s: vec![ComplexBall::zero(); 1 << g],
        n0,
    };
    let w0: Vec<f64> = ctx.v.iter().map(|t| t.to_f64()).collect();
    worker.node(tree, &w0, n0, &ComplexBall::one());
    worker.s
}

/// Evaluates θ̃_{0,b}(z,τ) for all 2^g values of b to absolute precision
/// ~2^{−N}, sharing partial products across the ellipsoid layers and lowering
/// the working precision for terms that are provably small.
pub fn sum_optimized(ctx: &SiegelContext, n_bits: u32) -> Result<ThetaValues, Error> {
    let tr = truncate(ctx, n_bits + 1, RadiusVariant::A)?;
    let vals = optimized_with_tree(ctx, n_bits, &tr.tree, tr.radius.to_f64(), &tr.tail);
    let mut out = ThetaValues::empty(ctx.g);
    for (b, v) in vals.into_iter().enumerate() {
        out.set(0, b, v);
    }
    Ok(out)
}

/// All 4^g normalized values θ̃_{a,b}(z,τ): one optimized a = 0 run per
/// characteristic row a over the corresponding shifted context.
pub fn theta_tilde_all(ctx: &SiegelContext, n_bits: u32) -> Result<ThetaValues, Error> {
    let g = ctx.g;
    let mut out = ThetaValues::empty(g);
    for a in 0..1usize << g {
        let sh = sum_a_shift(ctx, a)?;
        let tr = truncate(&sh.ctx, n_bits + 2, RadiusVariant::A)?;
        let vals = optimized_with_tree(&sh.ctx, n_bits + 1, &tr.tree, tr.radius.to_f64(), &tr.tail);
        for (b, v) in vals.into_iter().enumerate() {
            out.set(a, b, sh.tilde_factor(b).mul(&v, n_bits + 16));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Derivative sums
// ---------------------------------------------------------------------------

/// Raw jet block at a = 0: for every b and every |ν| ≤ order, an enclosure of
/// ∂^ν θ_{0,b}(z,τ) = (2πi)^{|ν|} Σ_n (−1)^{nᵀb} n^ν e(nᵀτn + 2nᵀz) + tail.
fn jet_block(ctx: &SiegelContext, n_bits: u32, order: usize) -> Result<Vec<Vec<ComplexBall>>, Error> {
    let g = ctx.g;
    let wp = 64;
    let radius = radius_for_jets(ctx, n_bits + 1, order)?;
    let r_sq = RealBall::exact(radius).sqr(wp);
    let tree = build_ellipsoid(&ctx.cho, &ctx.v, &r_sq, ELLIPSOID_WORKPREC);
    let bounds = coord_bounds_of(&tree);

    // unnormalized terms can be as large as exp(πyᵀY⁻¹y)·B^{|ν|}; widen the
    // working precision accordingly
    let pyy = ctx.pi_y_yinv_y().to_f64().max(0.0);
    let max_b = bounds.iter().copied().max().unwrap_or(0).max(1) as f64;
    let slop = (pyy / LN2).ceil() as u32
        + (order as f64 * (std::f64::consts::TAU * (max_b + 1.0)).log2()).ceil() as u32;
    let n0 = n_bits + 2 * ceil_log2(tree.count() + 2) + 1 + slop + 8;

    let table = ExpTable::new(ctx, n0, &bounds);
    let orders = multi_indices(g, order);
    let mut sums = vec![vec![ComplexBall::zero(); orders.len()]; 1 << g];
    for n in tree.points() {
        let mut u = ComplexBall::one();
        for j in 0..g {
            for k in j..g {
                let e = n[j] * n[k];
                if e != 0 {
                    u = u.mul(&table.q_pow(j, k, e, n0), n0);
                }
            }
            if n[j] != 0 {
                u = u.mul(&table.w_pow(j, n[j], n0), n0);
            }
        }
        let mask = parity_mask(g, &n);
        for (mi, nu) in orders.iter().enumerate() {
            let mut coeff = Integer::from(1);
            let mut zero = false;
            for j in 0..g {
                for _ in 0..nu[j] {
                    if n[j] == 0 {
                        zero = true;
                        break;
                    }
                    coeff *= n[j];
                }
            }
            if zero {
                continue;
            }
            let t = if nu.iter().all(|&x| x == 0) {
                u.clone()
            } else {
                u.mul_real(&RealBall::exact(Float::with_val(n0, &coeff)), n0)
            };
            for b in 0..1usize << g {
                add_signed(&mut sums[b][mi], &t, (mask & b).count_ones() & 1 == 1, n0);
            }
        }
    }

    // scale by (2πi)^{|ν|} and pad with the tail bound 2^{−N−1}
    let pad = Float::with_val(32, Float::i_exp(1, -(n_bits as i32) - 1));
    let two_pi = RealBall::pi(n0).scale_pow2(1);
    let mut pows = vec![RealBall::one()];
    for k in 1..=order {
        pows.push(pows[k - 1].mul(&two_pi, n0));
    }
    Ok(sums
        .into_iter()
        .map(|row| {
            row.into_iter()
                .zip(orders.iter())
                .map(|(v, nu)| {
                    let k: u32 = nu.iter().sum();
                    i_pow(&v.mul_real(&pows[k as usize], n0), k).pad(&pad)
                })
                .collect()
        })
        .collect())
}

/// Derivatives ∂^ν θ_{0,b}(z,τ) for all b and all |ν| ≤ order, to absolute
/// precision ~2^{−N}. These are values of θ itself (no θ̃ normalization).
pub fn sum_jets(ctx: &SiegelContext, n_bits: u32, order: usize) -> Result<ThetaJet, Error> {
    sum_jets_char(ctx, n_bits, order, 0)
}

fn binom(n: u32, k: u32) -> u64 {
    let mut r = 1u64;
    for i in 0..k.min(n - k) {
        r = r * (n - i) as u64 / (i + 1) as u64;
    }
    r
}

/// Derivatives ∂^ν θ_{a,b}(z,τ) for one characteristic row a (all b), via the
/// shifted context and the product rule applied to the exponential cofactor.
pub fn sum_jets_char(
    ctx: &SiegelContext,
    n_bits: u32,
    order: usize,
    a_index: usize,
) -> Result<ThetaJet, Error> {
    let g = ctx.g;
    let mut out = ThetaJet::empty(g, order);
    let sh = sum_a_shift(ctx, a_index)?;
    // Leibniz mixing multiplies blocks by π^k binomials; a few extra bits
    let slop = 8 + (order as f64 * 2.0 + g as f64).ceil() as u32;
    let raw = jet_block(&sh.ctx, n_bits + slop, order)?;
    if a_index == 0 {
        for (b, block) in raw.into_iter().enumerate() {
            out.set_block(0, b, block);
        }
        return Ok(out);
    }

    let wp = n_bits + slop + 32;
    let a_bit = |j: usize| (a_index >> (g - 1 - j)) & 1 == 1;
    let pi = RealBall::pi(wp);
    let orders = out.orders.clone();
    for b in 0..1usize << g {
        let cof = sh.raw_factor(b);
        let block: Vec<ComplexBall> = orders
            .iter()
            .map(|nu| {
                // ∂^ν (cof(z)·S(z+τa/2)) with ∂_j cof = πi·a_j·cof:
                // Σ_{μ≤ν} C(ν,μ)·(πi)^{|ν−μ|}·cof·∂^μS, restricted to the
                // orders μ that differ from ν only where a_j = 1
                let mut acc = ComplexBall::zero();
                for (mi, mu) in orders.iter().enumerate() {
                    let ok = (0..g).all(|j| mu[j] <= nu[j] && (mu[j] == nu[j] || a_bit(j)));
                    if !ok {
                        continue;
                    }
                    let k: u32 = (0..g).map(|j| nu[j] - mu[j]).sum();
                    let mut c = 1u64;
                    for j in 0..g {
                        c *= binom(nu[j], mu[j]);
                    }
                    let mut term = raw[b][mi].mul_real(&RealBall::from_i64(c as i64), wp);
                    if k > 0 {
                        let mut pik = pi.clone();
                        for _ in 1..k {
                            pik = pik.mul(&pi, wp);
                        }
                        term = i_pow(&term.mul_real(&pik, wp), k);
                    }
                    acc = acc.add(&term, wp);
                }
                acc.mul(&cof, wp)
            })
            .collect();
        out.set_block(a_index, b, block);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::mulcount;
    use crate::mat::CMat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx_from_f64(
        zre: &[f64],
        zim: &[f64],
        tre: &[&[f64]],
        tim: &[&[f64]],
        prec: u32,
    ) -> SiegelContext {
        let g = zre.len();
        let tau = CMat::from_fn(g, g, |i, j| ComplexBall::from_f64s(tre[i][j], tim[i][j]));
        let z: Vec<ComplexBall> = (0..g)
            .map(|j| ComplexBall::from_f64s(zre[j], zim[j]))
            .collect();
        SiegelContext::new(&z, &tau, prec).unwrap()
    }

    fn ctx_i_g1(prec: u32) -> SiegelContext {
        ctx_from_f64(&[0.0], &[0.0], &[&[0.0]], &[&[1.0]], prec)
    }

    /// random reduced-enough (z, τ): Y diagonally dominant near the identity,
    /// |Re τ| ≤ 0.45, v ∈ [−0.4, 0.4]^g
    fn random_ctx(g: usize, prec: u32, rng: &mut ChaCha8Rng) -> SiegelContext {
        let mut x = vec![vec![0.0f64; g]; g];
        let mut y = vec![vec![0.0f64; g]; g];
        for i in 0..g {
            for j in 0..=i {
                let xe = rng.gen_range(-0.45..0.45);
                x[i][j] = xe;
                x[j][i] = xe;
                let ye = if i == j {
                    rng.gen_range(1.0..1.6)
                } else {
                    rng.gen_range(-0.25..0.25)
                };
                y[i][j] = ye;
                y[j][i] = ye;
            }
        }
        let v: Vec<f64> = (0..g).map(|_| rng.gen_range(-0.4..0.4)).collect();
        // y_vec = −Y·v so that the ellipsoid center is exactly v
        let zre: Vec<f64> = (0..g).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let zim: Vec<f64> = (0..g)
            .map(|i| -(0..g).map(|j| y[i][j] * v[j]).sum::<f64>())
            .collect();
        let trows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let yrows: Vec<&[f64]> = y.iter().map(|r| r.as_slice()).collect();
        ctx_from_f64(&zre, &zim, &trows, &yrows, prec)
    }

    fn theta1_series_f64(shift: f64, phase_half: bool) -> f64 {
        // Σ_{n∈Z+shift} e^{−πn²}·(−1)^{n−shift if phase_half}
        let mut s = 0.0;
        for k in -40i64..=40 {
            let n = k as f64 + shift;
            let t = (-std::f64::consts::PI * n * n).exp();
            s += if phase_half && k.rem_euclid(2) == 1 { -t } else { t };
        }
        s
    }

    #[test]
    fn naive_g1_reference_values() {
        let ctx = ctx_i_g1(160);
        let vals = sum_naive(&ctx, 64, &[(0, 0), (0, 1), (1, 0), (1, 1)], RadiusVariant::A).unwrap();
        assert_eq!(vals.populated(), 4);

        let t00 = vals.at(0, 0);
        assert!((t00.re_mid().to_f64() - 1.086434811213308).abs() < 1e-13);
        assert!(t00.rad().to_f64() < 2f64.powi(-64));
        assert!(t00.im_mid().to_f64().abs() < 1e-18);

        // θ_{0,1}(0,i) = Σ(−1)^n e^{−πn²}
        let t01 = vals.at(0, 1);
        let expect = theta1_series_f64(0.0, true);
        assert!((t01.re_mid().to_f64() - expect).abs() < 1e-13);

        // θ_{1,0}(0,i) = Σ_{n∈Z+1/2} e^{−πn²}
        let t10 = vals.at(1, 0);
        let expect = theta1_series_f64(0.5, false);
        assert!((t10.re_mid().to_f64() - expect).abs() < 1e-13);
        assert!((t10.re_mid().to_f64() - 0.913579).abs() < 1e-6);

        // odd characteristic vanishes identically
        let t11 = vals.at(1, 1);
        assert!(t11.contains_zero());
        assert!(t11.abs().upper().to_f64() < 2f64.powi(-60));
    }

    #[test]
    fn naive_g2_diagonal_product_structure() {
        let ctx = ctx_from_f64(
            &[0.0, 0.0],
            &[0.0, 0.0],
            &[&[0.0, 0.0], &[0.0, 0.0]],
            &[&[1.0, 0.0], &[0.0, 1.0]],
            192,
        );
        let vals = sum_naive(&ctx, 64, &[(0, 0)], RadiusVariant::A).unwrap();
        let t = vals.at(0, 0);
        assert!((t.re_mid().to_f64() - 1.180340599).abs() < 1e-9);

        let c1 = ctx_i_g1(160);
        let v1 = sum_naive(&c1, 80, &[(0, 0)], RadiusVariant::A).unwrap();
        let sq = v1.at(0, 0).sqr(160);
        assert!(sq.overlaps(t));
    }

    #[test]
    fn shift_identity_at_a_zero() {
        let ctx = ctx_i_g1(96);
        let sh = sum_a_shift(&ctx, 0).unwrap();
        assert!(sh.phase.sub(&ComplexBall::one(), 96).contains_zero());
        assert!(sh.ctx.z[0].sub(&ctx.z[0], 96).contains_zero());
    }

    #[test]
    fn optimized_matches_naive_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for trial in 0..10 {
            let g = 2 + (trial % 2);
            let n = if trial % 3 == 0 { 256 } else { 64 };
            let ctx = random_ctx(g, n + 96, &mut rng);
            let fast = sum_optimized(&ctx, n).unwrap();
            let slow = sum_naive(
                &ctx,
                n,
                &(0..1 << g).map(|b| (0, b)).collect::<Vec<_>>(),
                RadiusVariant::A,
            )
            .unwrap();
            for b in 0..1usize << g {
                let f = fast.at(0, b);
                let s = slow.at(0, b);
                assert!(f.overlaps(s), "g={g} N={n} b={b}\n{f:?}\n{s:?}");
                assert!(f.rad().to_f64() <= 2f64.powi(-(n as i32) + 2));
                assert!(s.rad().to_f64() <= 2f64.powi(-(n as i32) + 2));
            }
        }
    }

    #[test]
    fn optimized_real_z_gives_real_values() {
        // conjugating the series maps (z, τ) to (−z̄, −τ̄); with z real and
        // τ purely imaginary each term pairs with its conjugate
        let ctx = ctx_from_f64(
            &[0.3, -0.2],
            &[0.0, 0.0],
            &[&[0.0, 0.0], &[0.0, 0.0]],
            &[&[1.2, 0.3], &[0.3, 1.4]],
            160,
        );
        let vals = sum_optimized(&ctx, 64).unwrap();
        for b in 0..4 {
            let v = vals.at(0, b);
            assert!(
                v.im_mid().to_f64().abs() <= v.rad().to_f64(),
                "b={b}: {v:?}"
            );
        }
    }

    #[test]
    fn jacobi_identity_g1() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1ac0);
        for _ in 0..20 {
            let x = rng.gen_range(-0.5..0.5);
            let y = rng.gen_range(0.9..2.0);
            let ctx = ctx_from_f64(&[0.0], &[0.0], &[&[x]], &[&[y]], 320);
            let vals = sum_naive(&ctx, 256, &[(0, 0), (0, 1), (1, 0)], RadiusVariant::A).unwrap();
            let p4 = |v: &ComplexBall| v.sqr(320).sqr(320);
            let lhs = p4(vals.at(0, 0));
            let rhs = p4(vals.at(0, 1)).add(&p4(vals.at(1, 0)), 320);
            assert!(lhs.overlaps(&rhs), "τ={x}+{y}i");
        }
    }

    #[test]
    fn duplication_identity_for_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xd09);
        for g in 1..=2usize {
            for _ in 0..3 {
                let ctx = random_ctx(g, 256, &mut rng);
                // same τ doubled
                let tau2 = CMat::from_fn(g, g, |i, j| ctx.tau.at(i, j).scale_pow2(1));
                let z0: Vec<ComplexBall> = (0..g).map(|_| ComplexBall::zero()).collect();
                let ctx0 = SiegelContext::new(&z0, &ctx.tau, 256).unwrap();
                let ctx2 = SiegelContext::new(&z0, &tau2, 256).unwrap();
                let chars: Vec<(usize, usize)> = (0..1 << g).map(|a| (a, 0)).collect();
                let at1 = sum_naive(&ctx0, 192, &chars, RadiusVariant::A).unwrap();
                let at2 = sum_naive(&ctx2, 192, &chars, RadiusVariant::A).unwrap();
                for a in 0..1usize << g {
                    let lhs = at1.at(a, 0).sqr(256);
                    let mut rhs = ComplexBall::zero();
                    for ap in 0..1usize << g {
                        rhs = rhs.add(&at2.at(ap, 0).mul(at2.at(a ^ ap, 0), 256), 256);
                    }
                    assert!(lhs.overlaps(&rhs), "g={g} a={a}");
                }
            }
        }
    }

    #[test]
    fn quasi_periodicity_even_shift() {
        // θ(z + τw) · e(wᵀτw + 2wᵀz) = θ(z) for even integer w
        let x = 0.21;
        let y = 1.3;
        let ctx = ctx_from_f64(&[0.17], &[0.0], &[&[x]], &[&[y]], 256);
        let w = 2i64;
        let zs = ComplexBall::from_f64s(0.17, 0.0).add(
            &ComplexBall::from_f64s(x, y).mul_i64(w, 256),
            256,
        );
        let ctxs = SiegelContext::new(&[zs], &ctx.tau, 256).unwrap();

        let v0 = sum_naive(&ctx, 128, &[(0, 0)], RadiusVariant::A).unwrap();
        let vs = sum_naive(&ctxs, 128, &[(0, 0)], RadiusVariant::A).unwrap();

        // unnormalize: θ = exp(+πyᵀY⁻¹y)·θ̃; here Im z = 0 on the left
        let unnorm = ctxs.pi_y_yinv_y().exp(256);
        let theta_shifted = vs.at(0, 0).mul_real(&unnorm, 256);
        // e(wᵀτw + 2wᵀz)
        let arg = ComplexBall::from_f64s(x, y)
            .mul_i64(w * w, 256)
            .add(&ComplexBall::from_f64s(0.17, 0.0).mul_i64(2 * w, 256), 256);
        let lhs = theta_shifted.mul(&arg.exp_pi_i(256), 256);
        assert!(lhs.overlaps(v0.at(0, 0)), "{lhs:?} vs {:?}", v0.at(0, 0));
    }

    #[test]
    fn jets_order_zero_matches_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x06e7);
        let ctx = random_ctx(2, 192, &mut rng);
        let jet = sum_jets(&ctx, 96, 0).unwrap();
        let vals = sum_optimized(&ctx, 96).unwrap();
        let factor = ctx.theta_tilde_factor();
        for b in 0..4usize {
            let tilde = jet.value(0, b, &[0, 0]).mul_real(&factor, 192);
            assert!(tilde.overlaps(vals.at(0, b)), "b={b}");
        }
    }

    #[test]
    fn jets_even_function_derivative_vanishes() {
        let ctx = ctx_i_g1(160);
        let jet = sum_jets(&ctx, 64, 1).unwrap();
        let d = jet.value(0, 0, &[1]);
        assert!(d.contains_zero());
        assert!(d.abs().upper().to_f64() < 2f64.powi(-60));
    }

    #[test]
    fn jets_match_finite_differences() {
        let prec = 256;
        let ctx = ctx_from_f64(&[0.1], &[0.0], &[&[0.0]], &[&[1.0]], prec);
        let jet = sum_jets(&ctx, 128, 1).unwrap();
        let d = jet.value(0, 0, &[1]);

        let eps = 2f64.powi(-20);
        let cp = ctx_from_f64(&[0.1 + eps], &[0.0], &[&[0.0]], &[&[1.0]], prec);
        let cm = ctx_from_f64(&[0.1 - eps], &[0.0], &[&[0.0]], &[&[1.0]], prec);
        let vp = sum_naive(&cp, 128, &[(0, 0)], RadiusVariant::A).unwrap();
        let vm = sum_naive(&cm, 128, &[(0, 0)], RadiusVariant::A).unwrap();
        // Im z = 0 here so θ̃ = θ
        let fd = vp
            .at(0, 0)
            .sub(vm.at(0, 0), prec)
            .mul_real(&RealBall::from_f64(0.5 / eps), prec);
        let diff = d.sub(&fd, prec).abs().upper().to_f64();
        assert!(diff < 1e-9, "jet {} fd {} diff {diff}", d.re_mid().to_f64(), fd.re_mid().to_f64());
    }

    #[test]
    fn jets_shifted_characteristic_matches_finite_differences() {
        let prec = 256;
        let ctx = ctx_from_f64(&[0.07], &[0.0], &[&[0.15]], &[&[1.1]], prec);
        let jet = sum_jets_char(&ctx, 96, 1, 1).unwrap();
        let d = jet.value(1, 0, &[1]);

        let eps = 2f64.powi(-20);
        let cp = ctx_from_f64(&[0.07 + eps], &[0.0], &[&[0.15]], &[&[1.1]], prec);
        let cm = ctx_from_f64(&[0.07 - eps], &[0.0], &[&[0.15]], &[&[1.1]], prec);
        let vp = sum_naive(&cp, 128, &[(1, 0)], RadiusVariant::A).unwrap();
        let vm = sum_naive(&cm, 128, &[(1, 0)], RadiusVariant::A).unwrap();
        let fd = vp
            .at(1, 0)
            .sub(vm.at(1, 0), prec)
            .mul_real(&RealBall::from_f64(0.5 / eps), prec);
        let diff = d.sub(&fd, prec).abs().upper().to_f64();
        assert!(diff < 1e-8, "jet vs fd diff {diff}");
    }

    #[test]
    fn table_inverse_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7ab1e);
        let ctx = random_ctx(2, 128, &mut rng);
        let table = ExpTable::new(&ctx, 128, &[3, 3]);
        let one = ComplexBall::one();
        for j in 0..2 {
            for k in j..2 {
                let prod = table.q(j, k).mul(table.q_inv(j, k), 128);
                assert!(prod.sub(&one, 128).contains_zero());
            }
            let prod = table.w(j).mul(table.w_inv(j), 128);
            assert!(prod.sub(&one, 128).contains_zero());
        }
        // square-power table against direct powering
        let direct = table.q_pow(1, 1, 9, 128);
        assert!(table.q_square(1, 3).overlaps(&direct));
    }

    #[test]
    fn variant_b_matches_variant_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xab);
        for _ in 0..5 {
            let ctx = random_ctx(2, 160, &mut rng);
            let va = sum_naive(&ctx, 64, &[(0, 0), (0, 3)], RadiusVariant::A).unwrap();
            let vb = sum_naive(&ctx, 64, &[(0, 0), (0, 3)], RadiusVariant::B).unwrap();
            for b in [0usize, 3] {
                assert!(va.at(0, b).overlaps(vb.at(0, b)), "b={b}");
            }
        }
    }

    #[test]
    fn less_than_one_full_precision_mul_per_point() {
        let n = 4096u32;
        let ctx = ctx_from_f64(
            &[0.1, -0.3],
            &[0.0, 0.0],
            &[&[0.2, 0.1], &[0.1, -0.15]],
            &[&[1.1, 0.2], &[0.2, 1.3]],
            n + 128,
        );
        let tr = truncate(&ctx, n + 2, RadiusVariant::A).unwrap();
        let points = tr.tree.count();
        assert!(points > 500, "expected a large ellipsoid, got {points}");

        mulcount::reset(n);
        let vals = optimized_with_tree(&ctx, n + 1, &tr.tree, tr.radius.to_f64(), &tr.tail);
        let muls = mulcount::get();
        mulcount::disable();

        let cap = Float::with_val(32, Float::i_exp(1, -(n as i32) + 2));
        assert!(*vals[0].rad() < cap, "radius {:?}", vals[0].rad());
        assert!(
            (muls as f64) < points as f64,
            "{muls} full-precision multiplications for {points} points"
        );
    }

    #[test]
    fn multi_index_enumeration() {
        let idx = multi_indices(2, 2);
        assert_eq!(
            idx,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
        assert_eq!(multi_indices(3, 1).len(), 4);
    }
}
