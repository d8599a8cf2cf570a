//! Symplectic group machinery over Z, the action on (z, τ), Siegel reduction
//! of the period matrix, reduction of the first argument, and decomposition
//! of symplectic matrices into elementary factors.

use rug::{Complete, Float, Integer};

use crate::ball::{ComplexBall, RealBall};
use crate::mat::{CMat, RMat};
use crate::zmat::{lll_gram, snf, IMat};
use crate::{trace, Error};

// ---------------------------------------------------------------------------
// Symplectic matrices
// ---------------------------------------------------------------------------

/// An element of Sp_2g(Z): a 2g×2g integer matrix σ with σᵀ·J·σ = J, where
/// J = [[0, I], [−I, 0]].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymplecticMatrix {
    pub g: usize,
    pub m: IMat,
}

impl SymplecticMatrix {
    pub fn identity(g: usize) -> Self {
        SymplecticMatrix { g, m: IMat::identity(2 * g) }
    }

    /// J = [[0, I], [−I, 0]].
    pub fn j(g: usize) -> Self {
        let mut m = IMat::zeros(2 * g, 2 * g);
        for i in 0..g {
            *m.at_mut(i, g + i) = Integer::from(1);
            *m.at_mut(g + i, i) = Integer::from(-1);
        }
        SymplecticMatrix { g, m }
    }

    /// [[U, 0], [0, U^{−T}]] for unimodular U.
    pub fn diag(u: &IMat) -> Self {
        let g = u.rows;
        assert_eq!(u.rows, u.cols);
        let uinv_t = u.inverse_unimodular().transpose();
        let mut m = IMat::zeros(2 * g, 2 * g);
        for i in 0..g {
            for j in 0..g {
                *m.at_mut(i, j) = u.at(i, j).clone();
                *m.at_mut(g + i, g + j) = uinv_t.at(i, j).clone();
            }
        }
        SymplecticMatrix { g, m }
    }

    /// [[I, S], [0, I]] for symmetric S.
    pub fn trig(s: &IMat) -> Self {
        let g = s.rows;
        assert!(s.is_symmetric(), "trigonal block must be symmetric");
        let mut m = IMat::identity(2 * g);
        for i in 0..g {
            for j in 0..g {
                *m.at_mut(i, g + j) = s.at(i, j).clone();
            }
        }
        SymplecticMatrix { g, m }
    }

    pub fn from_blocks(a: &IMat, b: &IMat, c: &IMat, d: &IMat) -> Self {
        let g = a.rows;
        let mut m = IMat::zeros(2 * g, 2 * g);
        for i in 0..g {
            for j in 0..g {
                *m.at_mut(i, j) = a.at(i, j).clone();
                *m.at_mut(i, g + j) = b.at(i, j).clone();
                *m.at_mut(g + i, j) = c.at(i, j).clone();
                *m.at_mut(g + i, g + j) = d.at(i, j).clone();
            }
        }
        SymplecticMatrix { g, m }
    }

    fn block(&self, row: usize, col: usize) -> IMat {
        let g = self.g;
        let mut b = IMat::zeros(g, g);
        for i in 0..g {
            for j in 0..g {
                *b.at_mut(i, j) = self.m.at(row * g + i, col * g + j).clone();
            }
        }
        b
    }

    pub fn alpha(&self) -> IMat {
        self.block(0, 0)
    }

    pub fn beta(&self) -> IMat {
        self.block(0, 1)
    }

    pub fn gamma(&self) -> IMat {
        self.block(1, 0)
    }

    pub fn delta(&self) -> IMat {
        self.block(1, 1)
    }

    pub fn mul(&self, other: &SymplecticMatrix) -> SymplecticMatrix {
        assert_eq!(self.g, other.g);
        SymplecticMatrix { g: self.g, m: self.m.mul(&other.m) }
    }

    /// Exact inverse: σ⁻¹ = −J·σᵀ·J.
    pub fn inverse(&self) -> SymplecticMatrix {
        let j = SymplecticMatrix::j(self.g);
        let r = j.m.mul(&self.m.transpose()).mul(&j.m).neg();
        SymplecticMatrix { g: self.g, m: r }
    }

    pub fn neg(&self) -> SymplecticMatrix {
        SymplecticMatrix { g: self.g, m: self.m.neg() }
    }

    pub fn is_identity(&self) -> bool {
        self.m.is_identity()
    }

    pub fn is_symplectic(&self) -> bool {
        let j = SymplecticMatrix::j(self.g);
        self.m.transpose().mul(&j.m).mul(&self.m) == j.m
    }
}

/// Embed σ ∈ Sp_2r(Z) into Sp_2g(Z) on the coordinates `indices` (0-based,
/// strictly increasing): the α and δ blocks are filled with the identity on
/// the remaining coordinates, the β and γ blocks with zero.
pub fn embed_symplectic(sigma: &SymplecticMatrix, indices: &[usize], g: usize) -> SymplecticMatrix {
    let r = sigma.g;
    assert_eq!(indices.len(), r);
    assert!(indices.windows(2).all(|w| w[0] < w[1]));
    assert!(indices.iter().all(|&i| i < g));
    let fill = |src: &IMat, ident: bool| -> IMat {
        let mut m = IMat::zeros(g, g);
        for (l, &il) in indices.iter().enumerate() {
            for (k, &ik) in indices.iter().enumerate() {
                *m.at_mut(il, ik) = src.at(l, k).clone();
            }
        }
        if ident {
            for j in 0..g {
                if !indices.contains(&j) {
                    *m.at_mut(j, j) = Integer::from(1);
                }
            }
        }
        m
    };
    let a = fill(&sigma.alpha(), true);
    let b = fill(&sigma.beta(), false);
    let c = fill(&sigma.gamma(), false);
    let d = fill(&sigma.delta(), true);
    SymplecticMatrix::from_blocks(&a, &b, &c, &d)
}

// ---------------------------------------------------------------------------
// Characteristics
// ---------------------------------------------------------------------------

/// A theta characteristic (a, b) with entries in {0, 1}.
///
/// The linear index used throughout for vectors of all 2^{2g} theta values is
/// `(a as big-endian bits)·2^g + (b as big-endian bits)`: the first coordinate
/// is the most significant bit.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Characteristic {
    pub a: Vec<u8>,
    pub b: Vec<u8>,
}

impl Characteristic {
    pub fn new(a: Vec<u8>, b: Vec<u8>) -> Self {
        assert_eq!(a.len(), b.len());
        assert!(a.iter().chain(&b).all(|&x| x <= 1));
        Characteristic { a, b }
    }

    pub fn zero(g: usize) -> Self {
        Characteristic { a: vec![0; g], b: vec![0; g] }
    }

    pub fn g(&self) -> usize {
        self.a.len()
    }

    pub fn index(&self) -> usize {
        let g = self.g();
        let mut ia = 0usize;
        let mut ib = 0usize;
        for j in 0..g {
            ia = (ia << 1) | self.a[j] as usize;
            ib = (ib << 1) | self.b[j] as usize;
        }
        (ia << g) | ib
    }

    pub fn from_index(idx: usize, g: usize) -> Self {
        let ia = idx >> g;
        let ib = idx & ((1 << g) - 1);
        let mut a = vec![0u8; g];
        let mut b = vec![0u8; g];
        for j in 0..g {
            a[j] = ((ia >> (g - 1 - j)) & 1) as u8;
            b[j] = ((ib >> (g - 1 - j)) & 1) as u8;
        }
        Characteristic { a, b }
    }

    /// aᵀb mod 2; θ_{a,b}(0, τ) vanishes identically iff this is 1.
    pub fn is_odd(&self) -> bool {
        self.a.iter().zip(&self.b).map(|(x, y)| x & y).fold(0, |s, t| s ^ t) == 1
    }
}

// ---------------------------------------------------------------------------
// Cholesky and the evaluation context
// ---------------------------------------------------------------------------

/// Upper-triangular Cholesky factor C of π·Y (so CᵀC ⊇ π·Y).
pub fn cholesky(y: &RMat, prec: u32) -> Result<RMat, Error> {
    let pi = RealBall::pi(prec);
    y.scale(&pi, prec).cholesky_upper(prec)
}

/// Cached per-(z, τ) data used by evaluation routines: Y = Im τ, y = Im z,
/// v = −Y⁻¹y, the Cholesky factor C of πY and its diagonal.
#[derive(Clone, Debug)]
pub struct SiegelContext {
    pub g: usize,
    pub z: Vec<ComplexBall>,
    pub tau: CMat,
    pub y_mat: RMat,
    pub y_vec: Vec<RealBall>,
    pub v: Vec<RealBall>,
    pub cho: RMat,
    pub prec: u32,
}

impl SiegelContext {
    pub fn new(z: &[ComplexBall], tau: &CMat, prec: u32) -> Result<Self, Error> {
        let g = tau.rows;
        assert_eq!(tau.cols, g);
        assert_eq!(z.len(), g);
        let tau = tau.symmetrize(prec);
        let y_mat = tau.im();
        let cho = cholesky(&y_mat, prec)?;
        let y_vec: Vec<RealBall> = z.iter().map(|zi| zi.im_ball()).collect();
        // v = −Y⁻¹ y = −π (CᵀC)⁻¹ y: solve CᵀC x = πy by two triangular solves
        let pi = RealBall::pi(prec);
        let py: Vec<RealBall> = y_vec.iter().map(|t| t.mul(&pi, prec)).collect();
        let w = cho.solve_upper_transpose(&py, prec);
        let x = cho.solve_upper(&w, prec);
        let v: Vec<RealBall> = x.iter().map(|t| t.neg()).collect();
        Ok(SiegelContext { g, z: z.to_vec(), tau, y_mat, y_vec, v, cho, prec })
    }

    /// Diagonal Cholesky coefficients c_1..c_g.
    pub fn c_diag(&self) -> Vec<RealBall> {
        (0..self.g).map(|j| self.cho.at(j, j).clone()).collect()
    }

    /// π·yᵀY⁻¹y ≥ 0 (the squared distance of z's imaginary part in the τ
    /// metric); equals ‖C v‖² with v = −Y⁻¹y.
    pub fn pi_y_yinv_y(&self) -> RealBall {
        let cv = self.cho.mul_vec(&self.v, self.prec);
        let mut acc = RealBall::zero();
        for t in &cv {
            acc = acc.add(&t.sqr(self.prec), self.prec);
        }
        acc
    }

    /// The normalization factor exp(−π yᵀY⁻¹y) relating θ̃ to θ.
    pub fn theta_tilde_factor(&self) -> RealBall {
        self.pi_y_yinv_y().neg().exp(self.prec)
    }
}

// ---------------------------------------------------------------------------
// Group action on (z, τ)
// ---------------------------------------------------------------------------

pub(crate) fn imat_to_cmat_mul(m: &IMat, t: &CMat, prec: u32) -> CMat {
    // m·t with exact integer entries
    CMat::from_fn(m.rows, t.cols, |i, j| {
        let mut acc = ComplexBall::zero();
        for k in 0..t.rows {
            let e = m.at(i, k);
            if e.cmp0() != std::cmp::Ordering::Equal {
                let w = RealBall::exact(Float::with_val(e.significant_bits().max(1), e));
                acc = acc.add(&t.at(k, j).mul_real(&w, prec), prec);
            }
        }
        acc
    })
}

fn imat_to_cmat(m: &IMat) -> CMat {
    CMat::from_fn(m.rows, m.cols, |i, j| {
        let e = m.at(i, j);
        ComplexBall::exact(Float::with_val(e.significant_bits().max(32), e), Float::new(8))
    })
}

/// The symplectic action: σ·(z, τ) = ((γτ+δ)^{−T} z, (ατ+β)(γτ+δ)^{−1}).
pub fn act(
    sigma: &SymplecticMatrix,
    z: &[ComplexBall],
    tau: &CMat,
    prec: u32,
) -> Result<(Vec<ComplexBall>, CMat), Error> {
    let tau2 = act_tau_inner(sigma, tau, prec)?;
    let m = cocycle(sigma, tau, prec);
    let minv = m.inverse(prec).ok_or(Error::SingularCocycle)?;
    let z2 = minv.transpose().mul_vec(z, prec);
    Ok((z2, tau2))
}

/// γτ + δ.
pub fn cocycle(sigma: &SymplecticMatrix, tau: &CMat, prec: u32) -> CMat {
    let gt = imat_to_cmat_mul(&sigma.gamma(), tau, prec);
    gt.add(&imat_to_cmat(&sigma.delta()), prec)
}

fn act_tau_inner(sigma: &SymplecticMatrix, tau: &CMat, prec: u32) -> Result<CMat, Error> {
    let m = cocycle(sigma, tau, prec);
    let minv = m.inverse(prec).ok_or(Error::SingularCocycle)?;
    let at = imat_to_cmat_mul(&sigma.alpha(), tau, prec).add(&imat_to_cmat(&sigma.beta()), prec);
    Ok(at.mul(&minv, prec).symmetrize(prec))
}

/// σ·τ.
pub fn act_tau(sigma: &SymplecticMatrix, tau: &CMat, prec: u32) -> Result<CMat, Error> {
    act_tau_inner(sigma, tau, prec)
}

// ---------------------------------------------------------------------------
// The finite lists Σ_g
// ---------------------------------------------------------------------------

/// The finite list Σ_g of symplectic matrices tried during reduction.
///
/// g = 1: {J}. g = 2: the 19 matrices bounding the genus-2 fundamental
/// domain: the two embeddings of J_1, the fifteen [[0,−I],[I,D]] for the
/// symmetric D with entries in {−1,0,1} whose det surfaces are distinct, and
/// the two [[±I,0],[C,±I]] with C = [[1,−1],[−1,1]]. g ≥ 3: all ι_{j,k}(Σ_2)
/// plus ι_{i_1..i_r}(J_r) for 3 ≤ r ≤ g.
pub fn sigma_g_list(g: usize) -> Vec<SymplecticMatrix> {
    assert!(g >= 1);
    if g == 1 {
        return vec![SymplecticMatrix::j(1)];
    }
    if g == 2 {
        let mut out = Vec::with_capacity(19);
        let j1 = SymplecticMatrix::j(1);
        out.push(embed_symplectic(&j1, &[0], 2));
        out.push(embed_symplectic(&j1, &[1], 2));
        // [[0, −I], [I, D]] = J·TrigSp(D): τ ↦ −(τ+D)^{−1}, det(γτ+δ) = det(τ+D)
        let dees: [[i64; 3]; 15] = [
            // (d11, d22, d12)
            [0, 0, 0],
            [1, 0, 0],
            [-1, 0, 0],
            [0, 1, 0],
            [0, -1, 0],
            [1, 1, 0],
            [-1, -1, 0],
            [1, -1, 0],
            [-1, 1, 0],
            [0, 0, 1],
            [0, 0, -1],
            [1, 1, 1],
            [-1, -1, -1],
            [1, 1, -1],
            [-1, -1, 1],
        ];
        for d in dees {
            let dm = IMat::from_fn(2, 2, |i, j| if i == j { d[i] } else { d[2] });
            let jm = SymplecticMatrix::j(2);
            out.push(jm.mul(&SymplecticMatrix::trig(&dm)));
        }
        // [[±I, 0], [C, ±I]] with C = [[1,−1],[−1,1]]: det(γτ+δ) = ±(τ₁+τ₂−2τ₃) + 1
        let c = IMat::from_fn(2, 2, |i, j| if i == j { 1 } else { -1 });
        let id = IMat::identity(2);
        let zero = IMat::zeros(2, 2);
        out.push(SymplecticMatrix::from_blocks(&id, &zero, &c, &id));
        out.push(SymplecticMatrix::from_blocks(&id.neg(), &zero, &c, &id.neg()));
        debug_assert!(out.iter().all(|s| s.is_symplectic()));
        return out;
    }
    // g ≥ 3
    let mut out = Vec::new();
    let s2 = sigma_g_list(2);
    for j in 0..g {
        for k in (j + 1)..g {
            for s in &s2 {
                out.push(embed_symplectic(s, &[j, k], g));
            }
        }
    }
    // all ι_{i_1..i_r}(J_r) for 3 ≤ r ≤ g
    for mask in 0u64..(1u64 << g) {
        let idx: Vec<usize> = (0..g).filter(|&i| (mask >> i) & 1 == 1).collect();
        if idx.len() >= 3 {
            let jr = SymplecticMatrix::j(idx.len());
            out.push(embed_symplectic(&jr, &idx, g));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Siegel reduction
// ---------------------------------------------------------------------------

/// Reduce τ: find σ ∈ Sp_2g(Z) such that σ·τ has LLL-reduced imaginary part,
/// real part bounded by 1/2 + tol entrywise, and det Im cannot be improved by
/// more than a factor (1 + tol) by any matrix in Σ_g.
///
/// Runs at an internal working precision, starting at 64 bits and doubling on
/// failure up to 16× the precision of the input midpoints.
pub fn siegel_reduce(tau: &CMat, tol: f64) -> Result<SymplecticMatrix, Error> {
    let g = tau.rows;
    let target: u32 = (0..g)
        .flat_map(|i| (0..g).map(move |j| (i, j)))
        .map(|(i, j)| tau.at(i, j).re_mid().prec().max(tau.at(i, j).im_mid().prec()))
        .max()
        .unwrap_or(64);
    let cap = 16 * target.max(64);
    let mut prec = 64u32;
    loop {
        match siegel_reduce_attempt(tau, tol, prec) {
            Ok(s) => return Ok(s),
            // γτ+δ is never singular on H_g, so a singular cocycle here is a
            // precision artifact, retryable like a tolerance failure
            Err(Error::ToleranceExceeded) | Err(Error::SingularCocycle) if prec < cap => {
                trace!(1, "siegel_reduce: retrying at {} bits", 2 * prec);
                prec *= 2;
            }
            Err(e) => return Err(e),
        }
    }
}

fn siegel_reduce_attempt(tau: &CMat, tol: f64, prec: u32) -> Result<SymplecticMatrix, Error> {
    let g = tau.rows;
    let sigmas = sigma_g_list(g);
    let mut sigma = SymplecticMatrix::identity(g);
    let mut taup = tau.symmetrize(prec);
    let max_iter = 200;
    for iter in 0..max_iter {
        // (1) lattice reduction of Im τ' (alternating plain and reciprocal)
        for recip in [false, true] {
            let y = taup.im();
            if y_radius_exceeds(&y, tol) {
                return Err(Error::ToleranceExceeded);
            }
            let u = lattice_reduce(&y, recip, prec)?;
            if !u.is_identity() {
                sigma = SymplecticMatrix::diag(&u).mul(&sigma);
                taup = act_tau(&sigma, tau, prec)?;
            }
        }
        // (2) real-part reduction
        let re = taup.re();
        if y_radius_exceeds(&re, tol) {
            return Err(Error::ToleranceExceeded);
        }
        let s = IMat::from_fn(g, g, |i, j| {
            let m = re.at(i, j).mid().to_f64();
            -(m.round() as i64)
        });
        let s = symmetrize_imat(&s);
        if !s.is_zero() {
            sigma = SymplecticMatrix::trig(&s).mul(&sigma);
            taup = act_tau(&sigma, tau, prec)?;
        }
        // (3) find σ' ∈ Σ_g minimizing |det(γτ'+δ)|²; improvement iff < 1
        let mut best: Option<(usize, f64)> = None;
        let mut all_above = true;
        for (k, sp) in sigmas.iter().enumerate() {
            let m = cocycle(sp, &taup, prec);
            let d = m.det(prec).abs();
            let up = d.upper().to_f64();
            let lo = d.lower().to_f64();
            let up2 = up * up;
            let lo2 = lo * lo;
            if up2 < 1.0 && best.as_ref().map_or(true, |&(_, b)| up2 < b) {
                best = Some((k, up2));
            }
            if lo2 < 1.0 / (1.0 + tol) {
                all_above = false;
            }
        }
        match best {
            Some((k, up2)) => {
                trace!(2, "siegel_reduce: iter {iter}: applying Σ_g[{k}], |det|² ≤ {up2:.4}");
                sigma = sigmas[k].mul(&sigma);
                taup = act_tau(&sigma, tau, prec)?;
            }
            None => {
                if all_above {
                    trace!(1, "siegel_reduce: done after {iter} iterations at {prec} bits");
                    return Ok(sigma);
                }
                // some |det| is ambiguous around 1: cannot certify at this precision
                return Err(Error::ToleranceExceeded);
            }
        }
    }
    Err(Error::ToleranceExceeded)
}

fn y_radius_exceeds(y: &RMat, tol: f64) -> bool {
    for i in 0..y.rows {
        for j in 0..y.cols {
            if y.at(i, j).rad().to_f64() > tol {
                return true;
            }
        }
    }
    false
}

fn symmetrize_imat(s: &IMat) -> IMat {
    // force exact symmetry by copying the upper triangle
    IMat::from_fn(s.rows, s.cols, |i, j| {
        if i <= j {
            s.to_i64(i, j)
        } else {
            s.to_i64(j, i)
        }
    })
}

/// Returns U (unimodular) such that U·Y·Uᵀ is LLL-reduced (δ = 0.99);
/// `recip` reduces the reciprocal (inverse) Gram matrix instead and returns
/// the corresponding inverse-transpose transform.
fn lattice_reduce(y: &RMat, recip: bool, prec: u32) -> Result<IMat, Error> {
    let g = y.rows;
    let gram: Vec<Vec<Float>> = if recip {
        match y.inverse(prec) {
            Some(inv) => (0..g)
                .map(|i| (0..g).map(|j| inv.at(i, j).mid().clone()).collect())
                .collect(),
            None => return Err(Error::ToleranceExceeded),
        }
    } else {
        (0..g).map(|i| (0..g).map(|j| y.at(i, j).mid().clone()).collect()).collect()
    };
    let u = lll_gram(&gram, prec.max(96));
    let mut m = IMat::zeros(g, g);
    for i in 0..g {
        for j in 0..g {
            *m.at_mut(i, j) = u[i][j].clone();
        }
    }
    if recip {
        // V reduces Y⁻¹; the direct lattice transform is V^{−T}
        Ok(m.inverse_unimodular().transpose())
    } else {
        Ok(m)
    }
}

// ---------------------------------------------------------------------------
// Reduction of z
// ---------------------------------------------------------------------------

/// Translate z by an even period so that ‖v‖_∞ ≤ 1 (+tol): returns
/// (z' = z + τw, w ∈ 2Z^g, cofactor = e(wᵀτw + 2wᵀz)) with
/// θ_{a,b}(z, τ) = cofactor · θ_{a,b}(z', τ) for every characteristic.
pub fn reduce_z(
    ctx: &SiegelContext,
) -> (Vec<ComplexBall>, Vec<i64>, ComplexBall) {
    let g = ctx.g;
    let prec = ctx.prec;
    let w: Vec<i64> = ctx
        .v
        .iter()
        .map(|vi| {
            let h = vi.mid().to_f64() / 2.0;
            2 * (h.round() as i64)
        })
        .collect();
    if w.iter().all(|&x| x == 0) {
        return (ctx.z.to_vec(), w, ComplexBall::one());
    }
    // z' = z + τ w
    let tw: Vec<ComplexBall> = (0..g)
        .map(|i| {
            let mut acc = ComplexBall::zero();
            for k in 0..g {
                if w[k] != 0 {
                    acc = acc.add(&ctx.tau.at(i, k).mul_i64(w[k], prec), prec);
                }
            }
            acc
        })
        .collect();
    let z2: Vec<ComplexBall> = (0..g).map(|i| ctx.z[i].add(&tw[i], prec)).collect();
    // cofactor = e(wᵀτw + 2wᵀz)
    let quad = ctx.tau.quad_form_int(&w, prec);
    let mut lin = ComplexBall::zero();
    for i in 0..g {
        if w[i] != 0 {
            lin = lin.add(&ctx.z[i].mul_i64(2 * w[i], prec), prec);
        }
    }
    let cof = quad.add(&lin, prec).exp_pi_i(prec);
    (z2, w, cof)
}

// ---------------------------------------------------------------------------
// Elementary matrices and decomposition
// ---------------------------------------------------------------------------

/// Generators used to express arbitrary symplectic matrices: block-diagonal,
/// block-trigonal, an SL_2(Z) element embedded at the first coordinate, or
/// J_r embedded on a set of coordinates.
#[derive(Clone, Debug)]
pub enum ElementaryMatrix {
    Diag(IMat),
    Trig(IMat),
    EmbeddedSL2([[i64; 2]; 2]),
    EmbeddedJ(Vec<usize>),
}

impl ElementaryMatrix {
    pub fn to_symplectic(&self, g: usize) -> SymplecticMatrix {
        match self {
            ElementaryMatrix::Diag(u) => {
                assert_eq!(u.rows, g);
                SymplecticMatrix::diag(u)
            }
            ElementaryMatrix::Trig(s) => {
                assert_eq!(s.rows, g);
                SymplecticMatrix::trig(s)
            }
            ElementaryMatrix::EmbeddedSL2(m) => {
                let s2 = SymplecticMatrix {
                    g: 1,
                    m: IMat::from_fn(2, 2, |i, j| m[i][j]),
                };
                embed_symplectic(&s2, &[0], g)
            }
            ElementaryMatrix::EmbeddedJ(idx) => {
                let jr = SymplecticMatrix::j(idx.len());
                embed_symplectic(&jr, idx, g)
            }
        }
    }
}

/// Recompose a factor list (left-to-right product).
pub fn recompose(factors: &[ElementaryMatrix], g: usize) -> SymplecticMatrix {
    let mut acc = SymplecticMatrix::identity(g);
    for f in factors {
        acc = acc.mul(&f.to_symplectic(g));
    }
    acc
}

/// Decompose σ ∈ Sp_2g(Z) into elementary factors whose left-to-right product
/// is exactly σ. The list has at most 1 + 5(g−1) factors except in rare
/// deep-divisibility cases handled by extra halving rounds.
pub fn decompose(sigma: &SymplecticMatrix) -> Vec<ElementaryMatrix> {
    let mut out = decompose_inner(sigma, 0);
    out = collapse(out, sigma.g);
    debug_assert_eq!(&recompose(&out, sigma.g), sigma, "decomposition must recompose exactly");
    out
}

fn decompose_inner(sigma: &SymplecticMatrix, depth: usize) -> Vec<ElementaryMatrix> {
    assert!(depth < 128, "decomposition did not terminate");
    let g = sigma.g;
    if g == 1 {
        return vec![ElementaryMatrix::EmbeddedSL2([
            [sigma.m.to_i64(0, 0), sigma.m.to_i64(0, 1)],
            [sigma.m.to_i64(1, 0), sigma.m.to_i64(1, 1)],
        ])];
    }
    let gamma = sigma.gamma();
    if gamma.is_zero() {
        // σ = DiagSp(α)·TrigSp(α⁻¹β)
        let alpha = sigma.alpha();
        let s = alpha.inverse_unimodular().mul(&sigma.beta());
        let mut out = Vec::new();
        if !alpha.is_identity() || s.is_zero() {
            out.push(ElementaryMatrix::Diag(alpha));
        }
        if !s.is_zero() {
            out.push(ElementaryMatrix::Trig(s));
        }
        return out;
    }
    // Smith normal form of γ: D = L·γ·R
    let (d, l, r) = snf(&gamma);
    let rank = (0..g).filter(|&i| d.at(i, i).cmp0() != std::cmp::Ordering::Equal).count();
    // σ₁ = DiagSp(L^{−T})·σ·DiagSp(R) has γ-block D
    let lt = l.transpose();
    let d_left = SymplecticMatrix::diag(&lt.inverse_unimodular());
    let d_right = SymplecticMatrix::diag(&r);
    let sigma1 = d_left.mul(sigma).mul(&d_right);
    debug_assert_eq!(sigma1.gamma(), d);

    if rank == g {
        let delta1 = sigma1.delta();
        // unimodular γ: direct σ₁ = Trig(S)·J·Diag(−I)·Trig(δ)
        if (0..g).all(|i| *d.at(i, i) == 1u32) {
            let alpha1 = sigma1.alpha();
            // with γ = I: S = α (symmetric), T = δ (symmetric)
            let s = alpha1;
            let t = delta1;
            debug_assert!(s.is_symmetric() && t.is_symmetric());
            let mut inner = Vec::new();
            if !s.is_zero() {
                inner.push(ElementaryMatrix::Trig(s));
            }
            inner.push(ElementaryMatrix::EmbeddedJ((0..g).collect()));
            inner.push(ElementaryMatrix::Diag(IMat::identity(g).neg()));
            if !t.is_zero() {
                inner.push(ElementaryMatrix::Trig(t));
            }
            return wrap_diag(inner, &lt, &r, g);
        }
        // if the δ block is easier (lower rank or unimodular), go through J:
        // σ = (σ·J⁻¹)·J and σ·J⁻¹ has γ-block δ
        let delta_orig = sigma.delta();
        let ddet = delta_orig.det();
        let d_unimodular = ddet == 1u32 || ddet == -1i32;
        let d_rank = if d_unimodular {
            g
        } else {
            let (dd, _, _) = snf(&delta_orig);
            (0..g).filter(|&i| dd.at(i, i).cmp0() != std::cmp::Ordering::Equal).count()
        };
        if d_unimodular || d_rank < g {
            let sjinv = sigma.mul(&SymplecticMatrix::j(g).inverse());
            let mut sub = decompose_inner(&sjinv, depth + 1);
            sub.push(ElementaryMatrix::EmbeddedJ((0..g).collect()));
            return sub;
        }
        // general full rank: reduce δ mod γ rows with a symmetric S, swap via J,
        // and recurse on the strictly smaller matrix
        let s_red = reduction_quotients(&d, &delta1);
        let trig_s = SymplecticMatrix::trig(&s_red.neg());
        let sigma2 = sigma1.mul(&trig_s); // δ ← δ − D·S (reduced rows)
        let sigma3 = sigma2.mul(&SymplecticMatrix::j(g)); // γ ← −δ_red
        let sub = decompose_inner(&sigma3, depth + 1);
        // σ₁ = σ₃·J⁻¹·Trig(S) and J⁻¹ = Diag(−I)·J
        let mut inner = sub;
        inner.push(ElementaryMatrix::Diag(IMat::identity(g).neg()));
        inner.push(ElementaryMatrix::EmbeddedJ((0..g).collect()));
        if !s_red.is_zero() {
            inner.push(ElementaryMatrix::Trig(s_red));
        }
        return wrap_diag(inner, &lt, &r, g);
    }

    // 0 < rank < g: normalize the lower-right corner of δ and split off the
    // upper-left 2r×2r symplectic matrix
    let delta1 = sigma1.delta();
    for i in rank..g {
        for j in 0..rank {
            assert_eq!(
                delta1.at(i, j).cmp0(),
                std::cmp::Ordering::Equal,
                "unexpected δ structure in decomposition"
            );
        }
    }
    let dlow = IMat::from_fn(g - rank, g - rank, |i, j| {
        delta1.to_i64(rank + i, rank + j)
    });
    let ddet = dlow.det();
    assert!(ddet == 1u32 || ddet == -1i32, "corner block must be unimodular");
    // V = [[I, 0], [0, δ_lowᵀ]]: right-multiplying by DiagSp(V) sets the last
    // g−r rows of δ to (0 I) and keeps γ = D
    let v = {
        let mut m = IMat::identity(g);
        for i in 0..(g - rank) {
            for j in 0..(g - rank) {
                *m.at_mut(rank + i, rank + j) = dlow.at(j, i).clone();
            }
        }
        m
    };
    let sigma2 = sigma1.mul(&SymplecticMatrix::diag(&v));
    debug_assert_eq!(sigma2.gamma(), d);
    // corner symplectic matrix σ' of size 2r
    let sub_blocks = |b: &IMat| IMat::from_fn(rank, rank, |i, j| b.to_i64(i, j));
    let sp = SymplecticMatrix::from_blocks(
        &sub_blocks(&sigma2.alpha()),
        &sub_blocks(&sigma2.beta()),
        &sub_blocks(&sigma2.gamma()),
        &sub_blocks(&sigma2.delta()),
    );
    assert!(sp.is_symplectic(), "corner matrix must be symplectic");
    let emb = embed_symplectic(&sp, &(0..rank).collect::<Vec<_>>(), g);
    let e = emb.inverse().mul(&sigma2);
    assert!(e.gamma().is_zero(), "residual factor must be block upper-triangular");
    let u_e = e.alpha();
    let s_e = u_e.inverse_unimodular().mul(&e.beta());
    // σ = Diag(Lᵀ)·ι(σ')·Diag(U_E)·Trig(S_E)·Diag((RV)⁻¹); the recursive
    // factors of σ' embed via ι_{1..r} (handled by block-size normalization)
    let mut inner = decompose_inner(&sp, depth + 1);
    if !u_e.is_identity() {
        inner.push(ElementaryMatrix::Diag(u_e));
    }
    if !s_e.is_zero() {
        inner.push(ElementaryMatrix::Trig(s_e));
    }
    let rv_inv = r.mul(&v).inverse_unimodular();
    let mut out = Vec::new();
    if !lt.is_identity() {
        out.push(ElementaryMatrix::Diag(lt.clone()));
    }
    out.extend(inner);
    if !rv_inv.is_identity() {
        out.push(ElementaryMatrix::Diag(rv_inv));
    }
    out
}

/// Wrap `inner` (a decomposition of σ₁) into one of σ = Diag(Lᵀ)·σ₁·Diag(R⁻¹).
fn wrap_diag(inner: Vec<ElementaryMatrix>, lt: &IMat, r: &IMat, _g: usize) -> Vec<ElementaryMatrix> {
    let mut out = Vec::new();
    if !lt.is_identity() {
        out.push(ElementaryMatrix::Diag(lt.clone()));
    }
    out.extend(inner);
    let rinv = r.inverse_unimodular();
    if !rinv.is_identity() {
        out.push(ElementaryMatrix::Diag(rinv));
    }
    out
}

/// Symmetric integer quotients S with |δ_ij − d_i·S_ij| ≤ d_i/2: the
/// symplectic relation d_i·δ_ji = d_j·δ_ij makes the rounded row quotients
/// symmetric automatically; this is checked.
fn reduction_quotients(d: &IMat, delta: &IMat) -> IMat {
    let g = d.rows;
    let mut q = IMat::zeros(g, g);
    for i in 0..g {
        for j in 0..g {
            let (quo, _) = delta.at(i, j).clone().div_rem_round(d.at(i, i).clone());
            *q.at_mut(i, j) = quo;
        }
    }
    let sym = {
        let mut m = IMat::zeros(g, g);
        for i in 0..g {
            for j in 0..g {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                *m.at_mut(i, j) = q.at(a, b).clone();
            }
        }
        m
    };
    for i in 0..g {
        for j in 0..g {
            let red = delta.at(i, j) - (d.at(i, i) * sym.at(i, j)).complete();
            assert!(
                (red << 1u32).abs() <= *d.at(i, i),
                "row reduction failed at ({i},{j})"
            );
        }
    }
    sym
}

/// Normalize a factor list without changing the product: merge adjacent
/// factors of the same kind, drop identities, and bubble Diag factors
/// leftwards through Trig and full-size J (both admit exact exchange rules)
/// so that at most one Diag survives per run.
fn collapse(factors: Vec<ElementaryMatrix>, g: usize) -> Vec<ElementaryMatrix> {
    let mut out: Vec<ElementaryMatrix> = Vec::with_capacity(factors.len());
    for f in factors {
        push_factor(&mut out, f, g);
    }
    out
}

fn push_factor(out: &mut Vec<ElementaryMatrix>, f: ElementaryMatrix, g: usize) {
    // normalize stored block sizes to g (factors from a recursive
    // decomposition of the upper-left corner embed via ι_{1..r})
    let f = match f {
        ElementaryMatrix::Diag(u) if u.rows < g => {
            let mut m = IMat::identity(g);
            for i in 0..u.rows {
                for j in 0..u.cols {
                    *m.at_mut(i, j) = u.at(i, j).clone();
                }
            }
            ElementaryMatrix::Diag(m)
        }
        ElementaryMatrix::Trig(s) if s.rows < g => {
            let mut m = IMat::zeros(g, g);
            for i in 0..s.rows {
                for j in 0..s.cols {
                    *m.at_mut(i, j) = s.at(i, j).clone();
                }
            }
            ElementaryMatrix::Trig(m)
        }
        other => other,
    };
    match f {
        ElementaryMatrix::Diag(u) => {
            if u.is_identity() {
                return;
            }
            match out.last() {
                Some(ElementaryMatrix::Diag(_)) => {
                    let Some(ElementaryMatrix::Diag(a)) = out.pop() else { unreachable!() };
                    push_factor(out, ElementaryMatrix::Diag(a.mul(&u)), g);
                }
                Some(ElementaryMatrix::Trig(_)) => {
                    // Trig(S)·Diag(U) = Diag(U)·Trig(U⁻¹·S·U^{−T})
                    let Some(ElementaryMatrix::Trig(s)) = out.pop() else { unreachable!() };
                    let uinv = u.inverse_unimodular();
                    let s2 = uinv.mul(&s).mul(&uinv.transpose());
                    push_factor(out, ElementaryMatrix::Diag(u), g);
                    push_factor(out, ElementaryMatrix::Trig(s2), g);
                }
                Some(ElementaryMatrix::EmbeddedJ(idx)) if idx.len() == g => {
                    // J·Diag(U) = Diag(U^{−T})·J
                    out.pop();
                    let ut_inv = u.inverse_unimodular().transpose();
                    push_factor(out, ElementaryMatrix::Diag(ut_inv), g);
                    push_factor(out, ElementaryMatrix::EmbeddedJ((0..g).collect()), g);
                }
                _ => out.push(ElementaryMatrix::Diag(u)),
            }
        }
        ElementaryMatrix::Trig(s) => {
            if s.is_zero() {
                return;
            }
            if matches!(out.last(), Some(ElementaryMatrix::Trig(_))) {
                let Some(ElementaryMatrix::Trig(a)) = out.pop() else { unreachable!() };
                let mut sum = a;
                for i in 0..g {
                    for j in 0..g {
                        *sum.at_mut(i, j) += s.at(i, j);
                    }
                }
                push_factor(out, ElementaryMatrix::Trig(sum), g);
            } else {
                out.push(ElementaryMatrix::Trig(s));
            }
        }
        ElementaryMatrix::EmbeddedJ(idx) => {
            if idx.len() == g {
                if let Some(ElementaryMatrix::EmbeddedJ(prev)) = out.last() {
                    if prev.len() == g {
                        // J·J = Diag(−I)
                        out.pop();
                        push_factor(out, ElementaryMatrix::Diag(IMat::identity(g).neg()), g);
                        return;
                    }
                }
            }
            out.push(ElementaryMatrix::EmbeddedJ(idx));
        }
        ElementaryMatrix::EmbeddedSL2(m) => {
            if m == [[1, 0], [0, 1]] {
                return;
            }
            if let Some(ElementaryMatrix::EmbeddedSL2(p)) = out.last() {
                let p = *p;
                out.pop();
                let prod = [
                    [
                        p[0][0].checked_mul(m[0][0]).and_then(|x| x.checked_add(p[0][1] * m[1][0])).expect("overflow"),
                        p[0][0] * m[0][1] + p[0][1] * m[1][1],
                    ],
                    [
                        p[1][0] * m[0][0] + p[1][1] * m[1][0],
                        p[1][0] * m[0][1] + p[1][1] * m[1][1],
                    ],
                ];
                push_factor(out, ElementaryMatrix::EmbeddedSL2(prod), g);
            } else {
                out.push(ElementaryMatrix::EmbeddedSL2(m));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::RAD_PREC;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    const P: u32 = 96;

    fn cb(re: f64, im: f64) -> ComplexBall {
        ComplexBall::from_f64s(re, im)
    }

    fn tau_g1(re: f64, im: f64) -> CMat {
        CMat::from_fn(1, 1, |_, _| cb(re, im))
    }

    #[test]
    fn cholesky_examples() {
        // Y = I_2 → C = √π·I
        let y = RMat::identity(2);
        let c = cholesky(&y, P).unwrap();
        let sqrt_pi = RealBall::pi(P).sqrt(P).unwrap();
        assert!(c.at(0, 0).overlaps(&sqrt_pi));
        assert!(c.at(1, 1).overlaps(&sqrt_pi));
        assert!(c.at(0, 1).contains(&Float::new(8)));

        // Y = [[2,1],[1,2]] → C₁₁=√(2π), C₁₂=√(π/2), C₂₂=√(3π/2)
        let y = RMat::from_fn(2, 2, |i, j| RealBall::from_f64([[2.0, 1.0], [1.0, 2.0]][i][j]));
        let c = cholesky(&y, P).unwrap();
        let pi = RealBall::pi(P);
        let c11 = pi.scale_pow2(1).sqrt(P).unwrap();
        let c12 = pi.scale_pow2(-1).sqrt(P).unwrap();
        let c22 = pi.mul(&RealBall::from_f64(1.5), P).sqrt(P).unwrap();
        assert!(c.at(0, 0).overlaps(&c11));
        assert!(c.at(0, 1).overlaps(&c12));
        assert!(c.at(1, 1).overlaps(&c22));

        // indefinite input is rejected
        let bad = RMat::from_fn(2, 2, |i, j| RealBall::from_f64([[1.0, 3.0], [3.0, 1.0]][i][j]));
        assert!(matches!(cholesky(&bad, P), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn act_examples() {
        // identity: unchanged
        let tau = tau_g1(0.25, 1.5);
        let z = vec![cb(0.1, 0.2)];
        let (z2, t2) = act(&SymplecticMatrix::identity(1), &z, &tau, P).unwrap();
        assert!(t2.at(0, 0).contains_point(&Float::with_val(53, 0.25), &Float::with_val(53, 1.5)));
        assert!(z2[0].contains_point(&Float::with_val(53, 0.1), &Float::with_val(53, 0.2)));

        // J at τ = 2i: τ' = −1/(2i) = i/2
        let tau = tau_g1(0.0, 2.0);
        let (_, t2) = act(&SymplecticMatrix::j(1), &[cb(0.0, 0.0)], &tau, P).unwrap();
        assert!(t2.at(0, 0).contains_point(&Float::new(8), &Float::with_val(53, 0.5)), "{:?}", t2.at(0, 0));

        // TrigSp(1) at τ = i: τ' = 1 + i
        let s = IMat::from_fn(1, 1, |_, _| 1);
        let (_, t2) = act(&SymplecticMatrix::trig(&s), &[cb(0.0, 0.0)], &tau_g1(0.0, 1.0), P).unwrap();
        assert!(t2.at(0, 0).contains_point(&Float::with_val(8, 1), &Float::with_val(8, 1)));

        // singular cocycle: J at balls containing τ = 0 is impossible in H_g,
        // but a wide τ ball makes det(γτ+δ) ambiguous
        let wide = CMat::from_fn(1, 1, |_, _| {
            ComplexBall::from_mid_rad(Float::new(8), Float::with_val(8, 1), Float::with_val(RAD_PREC, 2))
        });
        assert!(matches!(
            act(&SymplecticMatrix::j(1), &[cb(0.0, 0.0)], &wide, P),
            Err(Error::SingularCocycle)
        ));
    }

    #[test]
    fn act_is_group_action() {
        let mut rng = StdRng::seed_from_u64(11);
        for g in 1..=3usize {
            let tau = random_tau(g, &mut rng);
            let z: Vec<ComplexBall> =
                (0..g).map(|_| cb(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4))).collect();
            let s1 = random_symplectic(g, &mut rng, 3);
            let s2 = random_symplectic(g, &mut rng, 3);
            let (za, ta) = act(&s1.mul(&s2), &z, &tau, 2 * P).unwrap();
            let (zb1, tb1) = act(&s2, &z, &tau, 2 * P).unwrap();
            let (zb, tb) = act(&s1, &zb1, &tb1, 2 * P).unwrap();
            for i in 0..g {
                assert!(za[i].overlaps(&zb[i]), "z mismatch at g={g}");
                for j in 0..g {
                    assert!(ta.at(i, j).overlaps(tb.at(i, j)), "τ mismatch at g={g}");
                }
            }
        }
    }

    #[test]
    fn sigma_list_counts() {
        assert_eq!(sigma_g_list(1).len(), 1);
        assert_eq!(sigma_g_list(2).len(), 19);
        assert_eq!(sigma_g_list(3).len(), 58);
        for g in 1..=3 {
            for s in sigma_g_list(g) {
                assert!(s.is_symplectic());
            }
        }
    }

    #[test]
    fn embed_examples() {
        // ι¹_1(σ) = σ
        let j1 = SymplecticMatrix::j(1);
        assert_eq!(embed_symplectic(&j1, &[0], 1), j1);

        // ι²_1(J_1): explicit block form
        let e = embed_symplectic(&j1, &[0], 2);
        let expect = IMat::from_fn(4, 4, |i, j| {
            [
                [0, 0, 1, 0],
                [0, 1, 0, 0],
                [-1, 0, 0, 0],
                [0, 0, 0, 1],
            ][i][j]
        });
        assert_eq!(e.m, expect);
        assert!(e.is_symplectic());

        // ι³_2(Trig(1)) = TrigSp(diag(0,1,0))
        let t1 = SymplecticMatrix::trig(&IMat::from_fn(1, 1, |_, _| 1));
        let e = embed_symplectic(&t1, &[1], 3);
        let s = IMat::from_fn(3, 3, |i, j| i64::from(i == 1 && j == 1));
        assert_eq!(e, SymplecticMatrix::trig(&s));
    }

    fn random_tau(g: usize, rng: &mut StdRng) -> CMat {
        // random symmetric X + i(BᵀB + I) — comfortably in H_g
        let b: Vec<Vec<f64>> =
            (0..g).map(|_| (0..g).map(|_| rng.gen_range(-0.8..0.8)).collect()).collect();
        CMat::from_fn(g, g, |i, j| {
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            let x = 0.31 * ((i * 7 + j * 3) as f64).sin();
            let mut y = if i == j { 1.0 } else { 0.0 };
            for k in 0..g {
                y += b[k][i] * b[k][j];
            }
            cb(x, y)
        })
    }

    pub(super) fn random_symplectic(g: usize, rng: &mut StdRng, len: usize) -> SymplecticMatrix {
        let mut acc = SymplecticMatrix::identity(g);
        for _ in 0..len {
            let f = match rng.gen_range(0..3) {
                0 => {
                    // random small unimodular: product of elementary row ops
                    let mut u = IMat::identity(g);
                    for _ in 0..g {
                        let i = rng.gen_range(0..g);
                        let j = rng.gen_range(0..g);
                        if i != j {
                            let c = rng.gen_range(-2..=2i64);
                            let row: Vec<Integer> =
                                (0..g).map(|k| (u.at(j, k) * c).complete()).collect();
                            for (k, t) in row.into_iter().enumerate() {
                                *u.at_mut(i, k) += t;
                            }
                        }
                    }
                    SymplecticMatrix::diag(&u)
                }
                1 => {
                    let s = IMat::from_fn(g, g, |i, j| {
                        let v = ((i * 5 + j * 11 + rng.gen_range(0..7)) % 5) as i64 - 2;
                        v
                    });
                    SymplecticMatrix::trig(&symmetrize_imat(&s))
                }
                _ => SymplecticMatrix::j(g),
            };
            acc = acc.mul(&f);
        }
        assert!(acc.is_symplectic());
        acc
    }

    #[test]
    fn siegel_reduce_g1_classical() {
        // τ = 0.1i → J: στ = −1/τ = i/fl(0.1)
        let tau = tau_g1(0.0, 0.1);
        let s = siegel_reduce(&tau, 2f64.powi(-16)).unwrap();
        let t2 = act_tau(&s, &tau, P).unwrap();
        let expect = RealBall::one().div(&RealBall::from_f64(0.1), 160);
        assert!(t2.at(0, 0).im_ball().overlaps(&expect), "{:?}", t2.at(0, 0));
        assert!(t2.at(0, 0).re_ball().contains(&Float::new(8)));

        // τ = 5.3 + 0.2i → fundamental domain; oracle: classical reduction
        let tau = tau_g1(5.3, 0.2);
        let s = siegel_reduce(&tau, 2f64.powi(-16)).unwrap();
        let t2 = act_tau(&s, &tau, P).unwrap();
        let re = t2.at(0, 0).re_mid().to_f64();
        let im = t2.at(0, 0).im_mid().to_f64();
        assert!(re.abs() <= 0.5 + 1e-4, "re = {re}");
        assert!(re * re + im * im >= 1.0 - 1e-4, "|τ| = {}", (re * re + im * im).sqrt());
        // oracle: reduce 5.3+0.2i by repeated translate/invert in f64
        let (mut x, mut y): (f64, f64) = (5.3, 0.2);
        for _ in 0..64 {
            x -= x.round();
            let n = x * x + y * y;
            if n < 1.0 {
                x = -x / n;
                y /= n;
            } else {
                break;
            }
        }
        assert!((re - x).abs() < 1e-6 && (im - y).abs() < 1e-6, "({re},{im}) vs ({x},{y})");

        // already reduced → identity accepted
        let tau = tau_g1(0.1, 1.2);
        let s = siegel_reduce(&tau, 2f64.powi(-16)).unwrap();
        assert!(s.is_identity());
    }

    #[test]
    fn siegel_reduce_g2_improves_det() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..5 {
            let g = 2;
            // start from a reduced-ish τ and mangle it with a random symplectic
            let tau0 = random_tau(g, &mut rng);
            let w = random_symplectic(g, &mut rng, 4);
            let tau = act_tau(&w, &tau0, 2 * P).unwrap();
            let s = siegel_reduce(&tau, 2f64.powi(-16)).unwrap();
            let tred = act_tau(&s, &tau, 2 * P).unwrap();
            // reduced: |Re| ≤ 1/2 + tol, no Σ_g matrix improves det Im by (1+tol)
            for i in 0..g {
                for j in 0..g {
                    assert!(tred.at(i, j).re_mid().to_f64().abs() <= 0.5 + 1e-3);
                }
            }
            for sp in sigma_g_list(g) {
                let m = cocycle(&sp, &tred, P);
                let d = m.det(P).abs().upper().to_f64();
                assert!(d * d >= 1.0 - 1e-3, "Σ_g improves det: |det|² = {}", d * d);
            }
            // Cholesky lower bound c_j ≥ 2^{−(g−1)/2}·1.649/g − tol
            let ctx = SiegelContext::new(&vec![ComplexBall::zero(); g], &tred, P).unwrap();
            let bound = 2f64.powf(-((g - 1) as f64) / 2.0) * 1.649 / (g as f64) - 1e-3;
            for c in ctx.c_diag() {
                assert!(c.mid().to_f64() >= bound, "c_j = {} < {bound}", c.mid().to_f64());
            }
        }
    }

    #[test]
    fn reduce_z_examples() {
        // z real → w = 0, cofactor 1
        let tau = tau_g1(0.0, 1.0);
        let ctx = SiegelContext::new(&[cb(0.3, 0.0)], &tau, P).unwrap();
        let (z2, w, cof) = reduce_z(&ctx);
        assert_eq!(w, vec![0]);
        assert!(cof.contains_point(&Float::with_val(8, 1), &Float::new(8)));
        assert!(z2[0].contains_point(&Float::with_val(53, 0.3), &Float::new(8)));

        // g=1, Y=1, y=2 → v=−2, w=−2, v'=0
        let ctx = SiegelContext::new(&[cb(0.0, 2.0)], &tau, P).unwrap();
        assert!(ctx.v[0].contains(&Float::with_val(8, -2)));
        let (z2, w, _) = reduce_z(&ctx);
        assert_eq!(w, vec![-2]);
        let ctx2 = SiegelContext::new(&z2, &tau, P).unwrap();
        assert!(ctx2.v[0].contains_zero() || ctx2.v[0].mid().to_f64().abs() < 1e-20);

        // g=2, Y=I, y=(3.1, −2.2) → w=(−4, 2), ‖v'‖ ≤ 1
        let tau = CMat::from_fn(2, 2, |i, j| if i == j { cb(0.0, 1.0) } else { cb(0.0, 0.0) });
        let z = vec![cb(0.0, 3.1), cb(0.0, -2.2)];
        let ctx = SiegelContext::new(&z, &tau, P).unwrap();
        let (z2, w, _) = reduce_z(&ctx);
        assert_eq!(w, vec![-4, 2]);
        let ctx2 = SiegelContext::new(&z2, &tau, P).unwrap();
        for vi in &ctx2.v {
            assert!(vi.mid().to_f64().abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn reduce_z_cofactor_consistency() {
        // |cofactor| = exp(π yᵀY⁻¹y − π y'ᵀY⁻¹y'): check both sides numerically
        let tau = CMat::from_fn(2, 2, |i, j| {
            let vals = [[cb(0.2, 1.3), cb(-0.1, 0.4)], [cb(-0.1, 0.4), cb(0.05, 1.7)]];
            vals[i][j].clone()
        });
        let z = vec![cb(0.3, 2.6), cb(-0.2, -1.9)];
        let ctx = SiegelContext::new(&z, &tau, P).unwrap();
        let (z2, _, cof) = reduce_z(&ctx);
        let ctx2 = SiegelContext::new(&z2, &tau, P).unwrap();
        let lhs = cof.abs();
        let rhs = ctx.pi_y_yinv_y().sub(&ctx2.pi_y_yinv_y(), P).exp(P);
        assert!(lhs.overlaps(&rhs), "{lhs:?} vs {rhs:?}");
    }

    #[test]
    fn decompose_elementary_fixed_points() {
        // elementary inputs come back as a single factor
        let g = 3;
        let u = IMat::from_fn(3, 3, |i, j| [[1, 2, 0], [0, 1, -1], [0, 0, 1]][i][j]);
        let f = decompose(&SymplecticMatrix::diag(&u));
        assert_eq!(f.len(), 1);
        let s = symmetrize_imat(&IMat::from_fn(3, 3, |i, j| ((i + j) % 3) as i64));
        let f = decompose(&SymplecticMatrix::trig(&s));
        assert_eq!(f.len(), 1);
        let f = decompose(&SymplecticMatrix::j(g));
        assert!(f.len() <= 1 + 5 * (g - 1));
        assert_eq!(&recompose(&f, g), &SymplecticMatrix::j(g));
    }

    #[test]
    fn decompose_random_products() {
        let mut rng = StdRng::seed_from_u64(99);
        for g in 1..=3usize {
            for _ in 0..34 {
                let len = rng.gen_range(1..8);
                let s = random_symplectic(g, &mut rng, len);
                let f = decompose(&s);
                assert_eq!(&recompose(&f, g), &s, "recomposition failed at g={g}");
                assert!(
                    f.len() <= 1 + 5 * (g.max(1) - 1) || g == 1,
                    "length {} exceeds bound {} at g={g}",
                    f.len(),
                    1 + 5 * (g - 1)
                );
            }
        }
    }

    #[test]
    fn decompose_squarefree_gamma_short() {
        // det γ nonzero squarefree → at most 6 factors at g=2
        let mut rng = StdRng::seed_from_u64(3);
        let mut found = 0;
        for _ in 0..200 {
            let s = random_symplectic(2, &mut rng, 5);
            let d = s.gamma().det();
            let dab = d.clone().abs();
            let sf = dab != 0u32
                && (1..=6u32).filter(|k| k * k > 1).all(|k| {
                    let kk = Integer::from(k * k);
                    !dab.is_divisible(&kk)
                });
            if sf {
                found += 1;
                let f = decompose(&s);
                assert!(f.len() <= 6, "squarefree case length {}", f.len());
                assert_eq!(&recompose(&f, 2), &s);
            }
            if found > 20 {
                break;
            }
        }
        assert!(found > 5, "not enough squarefree samples");
    }
}
