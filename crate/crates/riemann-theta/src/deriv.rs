//! Partial derivatives of θ_{a,b} in quasi-linear time via finite differences
//! at roots of unity, and τ-derivatives through the heat equation.
//!
//! Writing the Taylor expansion θ_{a,b}(z+h,τ) = Σ_ν a_ν h^ν, the coefficient
//! a_ν is recovered from values at the (B+1)^g offset nodes
//! h_n = (ε ζ^{n_1}, …, ε ζ^{n_g}), ζ a primitive (B+1)st root of unity:
//!
//!   Σ_n ζ^{−νᵀn} θ_{a,b}(z+h_n,τ) = (B+1)^g (a_ν ε^{|ν|} + T),
//!
//! a g-dimensional discrete Fourier transform whose aliasing tail T is
//! bounded by the Cauchy integral formula: if |θ_{a,b}| ≤ γ on the polydisk
//! ‖x−z‖_∞ ≤ ρ and ε ≤ (2g)^{−1/(B+1)}ρ, then |T| ≤ 2γg(ε/ρ)^{|ν|+B+1}.
//! Choosing ε as a power of two small enough that the resulting radius pad
//! η_ν stays below 2^{−N−1} yields certified derivatives at cost
//! (B+1)^g evaluations of all theta values at roughly doubled precision.

use rug::{Float, Integer};

use crate::ball::{ComplexBall, RealBall};
use crate::ql::ql_all;
use crate::siegel::SiegelContext;
use crate::sum::{ceil_log2, multi_indices, ThetaJet};
use crate::{trace, Error};

const LN2: f64 = std::f64::consts::LN_2;

/// Parameters of one finite-difference run: the uniform bound γ on |θ_{a,b}|
/// over the ρ-polydisk around z, the node scale ε = 2^{eps_log2}, the
/// internal evaluation precision, and the per-order aliasing pads η_ν.
pub struct JetPlan {
    pub g: usize,
    pub order: usize,
    pub gamma: RealBall,
    /// Exact dyadic polydisk radius, 0 < ρ ≤ 1.
    pub rho: Float,
    pub eps_log2: i32,
    pub n_prime: u32,
    /// All ν with |ν| ≤ order, graded lexicographic (matches [`ThetaJet`]).
    pub orders: Vec<Vec<u32>>,
    /// Aliasing pad η_ν per entry of `orders`; all ≤ 2^{−N−1}.
    pub pads: Vec<Float>,
}

fn up(prec: u32, f: Float) -> Float {
    Float::with_val_round(prec, f, rug::float::Round::Up).0
}

/// Uniform bound pair (γ, ρ): |θ_{a,b}(x,τ)| ≤ γ whenever ‖x−z‖_∞ ≤ ρ.
///
/// γ = γ₀·exp((γ₁+γ₂ρ)²) with γ₀ the uniform series bound
/// (1+√(8/π))·2^{g−1}·∏(1+√(2π)/c_j), γ₁ = √(πyᵀY⁻¹y), and
/// γ₂ = sup_{‖x‖_∞≤1}√(πxᵀY⁻¹x) bounded by the column norms of the Cholesky
/// factor of πY⁻¹. ρ is the minimum of 1 and the positive root of
/// 2γ₂ρ(γ₁+γ₂ρ) = 2B+1, which minimizes exp((γ₁+γ₂ρ)²)/ρ^{2B+1}.
pub fn jet_bounds(ctx: &SiegelContext, order: usize) -> Result<(RealBall, Float), Error> {
    let g = ctx.g;
    let wp = 96u32;
    let pi = RealBall::pi(wp);
    let sqrt_8_over_pi = RealBall::from_i64(8).div(&pi, wp).sqrt(wp)?;
    let sqrt_2pi = pi.scale_pow2(1).sqrt(wp)?;
    let mut gamma0 = RealBall::one().add(&sqrt_8_over_pi, wp).scale_pow2(g as i32 - 1);
    for c in ctx.c_diag() {
        let f = RealBall::one().add(&sqrt_2pi.div(&c, wp), wp);
        gamma0 = gamma0.mul(&f, wp);
    }
    let gamma1 = ctx.pi_y_yinv_y().sqrt(wp)?;
    let y_inv = ctx
        .y_mat
        .inverse(wp)
        .ok_or_else(|| Error::OutOfDomain("imaginary part not invertible".into()))?;
    let mut gamma2 = RealBall::zero();
    for j in 0..g {
        gamma2 = gamma2.add(&y_inv.at(j, j).mul(&pi, wp).sqrt(wp)?, wp);
    }

    // ρ = min(1, (−γ₁ + √(γ₁² + 2(2B+1))) / (2γ₂)), snapped to a dyadic
    let g1 = gamma1.mid().to_f64();
    let g2 = gamma2.mid().to_f64();
    let rhs = 2.0 * (2 * order + 1) as f64;
    let root = (-g1 + (g1 * g1 + rhs).sqrt()) / (2.0 * g2);
    let rho_f = root.min(1.0);
    assert!(rho_f > 0.0, "polydisk radius must be positive");
    let rho = Float::with_val(53, rho_f);

    let rho_ball = RealBall::exact(rho.clone());
    let s = gamma1.add(&gamma2.mul(&rho_ball, wp), wp);
    let gamma = gamma0.mul(&s.sqr(wp).exp(wp), wp);
    Ok((gamma, rho))
}

/// Builds the full plan: chooses ε as the largest power of two satisfying
/// both ε ≤ (2g)^{−1/(B+1)}ρ and 2γgB!(B+1)^{−g}ε^{B+1} ≤ 2^{−N−1}ρ^{2B+1}
/// (verified with outward rounding), derives the pads η_ν, and sets the
/// internal precision N' = N + ⌈log₂(1/η_0)⌉ + 32.
pub fn jet_plan(ctx: &SiegelContext, n_bits: u32, order: usize) -> Result<JetPlan, Error> {
    let g = ctx.g;
    let b1 = (order + 1) as u32;
    let (gamma, rho) = jet_bounds(ctx, order)?;
    let wp = 128u32;

    let rho_f = rho.to_f64();
    let gamma_up = gamma.upper();
    let mut bfact = Integer::from(1);
    for k in 2..=order as u64 {
        bfact *= k;
    }
    // 2γg·B!·(B+1)^{−g}, rounded up
    let mut lead = up(wp, Float::with_val(wp, &gamma_up) * (2 * g) as f64);
    lead = up(wp, lead * Float::with_val(wp, &bfact));
    for _ in 0..g {
        lead = up(wp, lead / b1);
    }
    let lead_log2 = lead.to_f64().log2();

    // first guesses from f64 logs, then rigorous verification
    let e1 = (((2 * g) as f64).log2() / b1 as f64 - rho_f.log2()).ceil() as i64;
    let e2 = ((n_bits as f64 + 1.0 + (2 * order + 1) as f64 * (1.0 / rho_f).log2() + lead_log2)
        / b1 as f64)
        .ceil() as i64;
    let mut e = e1.max(e2).max(1);
    let rho_pow = |k: u32| -> Float {
        // ρ^k rounded down (ρ exact)
        let mut p = Float::with_val(wp, 1);
        for _ in 0..k {
            p = Float::with_val_round(wp, &p * &rho, rug::float::Round::Down).0;
        }
        p
    };
    loop {
        // 2g·ε^{B+1} ≤ ρ^{B+1}
        let mut lhs1 = Float::with_val(wp, 2 * g);
        lhs1 >>= (e * b1 as i64) as u32;
        let ok1 = lhs1 <= rho_pow(b1);
        // lead·ε^{B+1} ≤ 2^{−N−1}·ρ^{2B+1}
        let mut lhs2 = lead.clone();
        lhs2 >>= (e * b1 as i64) as u32;
        let mut rhs2 = rho_pow(2 * order as u32 + 1);
        rhs2 >>= n_bits + 1;
        if ok1 && lhs2 <= rhs2 {
            break;
        }
        e += 1;
        assert!(e < 1 << 24, "node scale selection diverged");
    }
    let eps_log2 = -(e as i32);

    let orders = multi_indices(g, order);
    let mut pads = Vec::with_capacity(orders.len());
    for nu in &orders {
        let total: u32 = nu.iter().sum();
        let mut nf = Integer::from(1);
        for &c in nu {
            for k in 2..=c as u64 {
                nf *= k;
            }
        }
        // η_ν = ν!·(B+1)^{−g}·2γg·ε^{B+1}/ρ^{|ν|+B+1}
        let mut eta = up(wp, Float::with_val(wp, &gamma_up) * (2 * g) as f64);
        eta = up(wp, eta * Float::with_val(wp, &nf));
        for _ in 0..g {
            eta = up(wp, eta / b1);
        }
        eta >>= (e * b1 as i64) as u32;
        let denom = rho_pow(total + b1);
        eta = up(wp, eta / denom);
        pads.push(eta);
    }

    let eta0_exp = pads[0].get_exp().expect("pad is positive and finite");
    let n_prime = n_bits + (1 - eta0_exp).max(0) as u32 + 32;
    trace!(
        1,
        "jet plan: g={g} B={order} ρ≈{rho_f:.4} ε=2^{eps_log2} N'={n_prime}"
    );
    Ok(JetPlan { g, order, gamma, rho, eps_log2, n_prime, orders, pads })
}

fn mixed_radix_digits(mut idx: usize, g: usize, b1: usize) -> Vec<usize> {
    let mut d = vec![0usize; g];
    for j in (0..g).rev() {
        d[j] = idx % b1;
        idx /= b1;
    }
    d
}

/// In-place 1-D DFTs of length b1 along `axis` of the g-dimensional cube:
/// out[k] = Σ_t ζ^{−kt}·in[t] with ζ^{−m} supplied in `zneg`.
fn dft_axis(data: &mut [ComplexBall], g: usize, b1: usize, axis: usize, zneg: &[ComplexBall], wp: u32) {
    let stride = b1.pow((g - 1 - axis) as u32);
    let block = stride * b1;
    let mut line = vec![ComplexBall::zero(); b1];
    for base in (0..data.len()).step_by(block) {
        for off in 0..stride {
            for (t, l) in line.iter_mut().enumerate() {
                *l = data[base + off + t * stride].clone();
            }
            for k in 0..b1 {
                let mut acc = line[0].clone();
                for (t, l) in line.iter().enumerate().skip(1) {
                    acc = acc.add(&l.mul(&zneg[(k * t) % b1], wp), wp);
                }
                data[base + off + k * stride] = acc;
            }
        }
    }
}

/// All partial derivatives ∂^ν θ_{a,b}(z,τ) for |ν| ≤ order, every
/// characteristic, to absolute precision ≈ 2^{−n_bits}. Values of θ itself
/// (matching [`crate::sum::sum_jets`]), computed from (order+1)^g evaluations
/// of all theta values via [`ql_all`] at the plan's internal precision.
pub fn jet_all(ctx: &SiegelContext, n_bits: u32, order: usize) -> Result<ThetaJet, Error> {
    let g = ctx.g;
    let m = 1usize << g;
    let plan = jet_plan(ctx, n_bits, order)?;
    let b1 = order + 1;
    let total = b1.pow(g as u32);
    let wp = plan.n_prime + 2 * ceil_log2(total as u64 + 2) + 32;

    // ζ^k and ζ^{−k}: e(2k/(B+1)) as balls containing the exact roots
    let den = RealBall::from_i64(b1 as i64);
    let zpow: Vec<ComplexBall> = (0..b1)
        .map(|k| {
            let x = RealBall::from_i64(2 * k as i64).div(&den, wp);
            ComplexBall::from_real(&x).exp_pi_i(wp)
        })
        .collect();
    let zneg: Vec<ComplexBall> = zpow.iter().map(ComplexBall::conj).collect();

    // evaluate θ_{a,b}(z + h_n, τ) on the node cube
    let mut samples: Vec<Vec<ComplexBall>> = vec![Vec::with_capacity(total); m * m];
    for idx in 0..total {
        let digits = mixed_radix_digits(idx, g, b1);
        let zn: Vec<ComplexBall> = (0..g)
            .map(|j| {
                let h = zpow[digits[j]].scale_pow2(plan.eps_log2);
                ctx.z[j].add(&h, wp)
            })
            .collect();
        let cn = SiegelContext::new(&zn, &ctx.tau, wp)?;
        // extra bits absorb the un-normalization by exp(+πyᵀY⁻¹y)
        let norm = cn.pi_y_yinv_y();
        let bump = (norm.upper().to_f64().max(0.0) / LN2).ceil() as u32;
        let vals = ql_all(&cn, plan.n_prime + bump + 8)?;
        let factor = norm.exp(wp);
        for a in 0..m {
            for b in 0..m {
                samples[(a << g) | b].push(vals.at(a, b).mul_real(&factor, wp));
            }
        }
    }

    // g passes of 1-D transforms, then per-order scaling and pads
    let b1g = RealBall::from_i64((total) as i64);
    let mut out = ThetaJet::empty(g, order);
    for a in 0..m {
        for b in 0..m {
            let data = &mut samples[(a << g) | b];
            for axis in 0..g {
                dft_axis(data, g, b1, axis, &zneg, wp);
            }
            let mut block = Vec::with_capacity(plan.orders.len());
            for (oi, nu) in plan.orders.iter().enumerate() {
                let idx: usize =
                    nu.iter().fold(0usize, |acc, &c| acc * b1 + c as usize);
                let total_deg: u32 = nu.iter().sum();
                let mut nf = Integer::from(1);
                for &c in nu {
                    for k in 2..=c as u64 {
                        nf *= k;
                    }
                }
                let num = RealBall::exact(Float::with_val(wp, &nf));
                let v = data[idx]
                    .mul_real(&num, wp)
                    .mul_real(&b1g.inv(wp), wp)
                    .scale_pow2(-(plan.eps_log2) * total_deg as i32)
                    .pad(&plan.pads[oi])
                    .round_to(n_bits + 64);
                block.push(v);
            }
            out.set_block(a, b, block);
        }
    }
    Ok(out)
}

/// Matrix derivatives ∂θ_{a,b}/∂τ_{jk} for j ≤ k, read off a jet of order
/// ≥ 2 through the heat equation ∂θ/∂τ_{jk} = (2πi(1+δ_{jk}))^{−1}·∂²θ/∂z_j∂z_k.
pub struct TauDerivatives {
    pub g: usize,
    /// Index pairs (j,k), j ≤ k, row-major upper triangle.
    pub pairs: Vec<(usize, usize)>,
    blocks: Vec<Option<Vec<ComplexBall>>>,
}

impl TauDerivatives {
    pub fn value(&self, a_index: usize, b_index: usize, j: usize, k: usize) -> Option<&ComplexBall> {
        let (lo, hi) = if j <= k { (j, k) } else { (k, j) };
        let p = self.pairs.iter().position(|&q| q == (lo, hi))?;
        self.blocks[(a_index << self.g) | b_index].as_ref().map(|v| &v[p])
    }
}

/// Extracts all τ-derivatives from a jet containing the second z-derivatives.
pub fn tau_derivatives(jet: &ThetaJet, prec: u32) -> Result<TauDerivatives, Error> {
    if jet.order < 2 {
        return Err(Error::MissingOrder);
    }
    let g = jet.g;
    let pairs: Vec<(usize, usize)> =
        (0..g).flat_map(|j| (j..g).map(move |k| (j, k))).collect();
    let two_pi = RealBall::pi(prec).scale_pow2(1);
    let mut blocks = Vec::with_capacity(1 << (2 * g));
    for a in 0..1usize << g {
        for b in 0..1usize << g {
            let Some(src) = jet.block(a, b) else {
                blocks.push(None);
                continue;
            };
            let vals: Vec<ComplexBall> = pairs
                .iter()
                .map(|&(j, k)| {
                    let mut nu = vec![0u32; g];
                    nu[j] += 1;
                    nu[k] += 1;
                    let i = jet.order_index(&nu).expect("order 2 present");
                    let d2 = &src[i];
                    // divide by 2πi(1+δ_{jk}): multiply by −i/(2π(1+δ))
                    let denom = if j == k { two_pi.scale_pow2(1) } else { two_pi.clone() };
                    d2.mul_i().neg().mul_real(&denom.inv(prec), prec)
                })
                .collect();
            blocks.push(Some(vals));
        }
    }
    Ok(TauDerivatives { g, pairs, blocks })
}

// ---------------------------------------------------------------------------
