//! Dense ball matrices and the small amount of linear algebra the evaluator
//! needs: products, Cholesky factorization, triangular solves, inverses and
//! certified determinants. Everything is O(n³) and meant for small n.

use rug::Float;

use crate::ball::{radd, rmul, ComplexBall, RealBall, RAD_PREC};
use crate::Error;

/// Rectangular matrix of real balls, row-major.
#[derive(Clone, Debug)]
pub struct RMat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<RealBall>,
}

impl RMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RMat { rows, cols, data: vec![RealBall::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = RMat::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = RealBall::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> RealBall) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        RMat { rows, cols, data }
    }

    pub fn at(&self, i: usize, j: usize) -> &RealBall {
        &self.data[i * self.cols + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut RealBall {
        &mut self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> RMat {
        RMat::from_fn(self.cols, self.rows, |i, j| self.at(j, i).clone())
    }

    pub fn add(&self, other: &RMat, prec: u32) -> RMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        RMat::from_fn(self.rows, self.cols, |i, j| self.at(i, j).add(other.at(i, j), prec))
    }

    pub fn sub(&self, other: &RMat, prec: u32) -> RMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        RMat::from_fn(self.rows, self.cols, |i, j| self.at(i, j).sub(other.at(i, j), prec))
    }

    pub fn mul(&self, other: &RMat, prec: u32) -> RMat {
        assert_eq!(self.cols, other.rows);
        RMat::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = RealBall::zero();
            for k in 0..self.cols {
                acc = acc.add(&self.at(i, k).mul(other.at(k, j), prec), prec);
            }
            acc
        })
    }

    pub fn mul_vec(&self, v: &[RealBall], prec: u32) -> Vec<RealBall> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut acc = RealBall::zero();
                for k in 0..self.cols {
                    acc = acc.add(&self.at(i, k).mul(&v[k], prec), prec);
                }
                acc
            })
            .collect()
    }

    pub fn scale(&self, s: &RealBall, prec: u32) -> RMat {
        RMat::from_fn(self.rows, self.cols, |i, j| self.at(i, j).mul(s, prec))
    }

    /// Replace each pair (i,j),(j,i) by their ball hull, enforcing symmetry.
    pub fn symmetrize(&self, prec: u32) -> RMat {
        assert_eq!(self.rows, self.cols);
        let mut m = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let u = self.at(i, j).union(self.at(j, i), prec);
                *m.at_mut(i, j) = u.clone();
                *m.at_mut(j, i) = u;
            }
        }
        m
    }

    /// Upper-triangular Cholesky factor: self = CᵀC with C_jj > 0.
    ///
    /// Fails with `NotPositiveDefinite` when a pivot ball is not provably
    /// positive (which covers genuinely indefinite matrices as well as balls
    /// too wide to certify).
    pub fn cholesky_upper(&self, prec: u32) -> Result<RMat, Error> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut c = RMat::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let mut s = self.at(i, j).clone();
                for k in 0..i {
                    s = s.sub(&c.at(k, i).mul(c.at(k, j), prec), prec);
                }
                if i == j {
                    if !s.is_positive() {
                        return Err(Error::NotPositiveDefinite);
                    }
                    *c.at_mut(j, j) = s.sqrt(prec)?;
                } else {
                    *c.at_mut(i, j) = s.div(c.at(i, i), prec);
                }
            }
        }
        Ok(c)
    }

    /// Back substitution for upper-triangular self: solve self·x = b.
    pub fn solve_upper(&self, b: &[RealBall], prec: u32) -> Vec<RealBall> {
        let n = self.rows;
        let mut x = vec![RealBall::zero(); n];
        for i in (0..n).rev() {
            let mut s = b[i].clone();
            for k in (i + 1)..n {
                s = s.sub(&self.at(i, k).mul(&x[k], prec), prec);
            }
            x[i] = s.div(self.at(i, i), prec);
        }
        x
    }

    /// Forward substitution: solve selfᵀ·x = b for upper-triangular self.
    pub fn solve_upper_transpose(&self, b: &[RealBall], prec: u32) -> Vec<RealBall> {
        let n = self.rows;
        let mut x = vec![RealBall::zero(); n];
        for i in 0..n {
            let mut s = b[i].clone();
            for k in 0..i {
                s = s.sub(&self.at(k, i).mul(&x[k], prec), prec);
            }
            x[i] = s.div(self.at(i, i), prec);
        }
        x
    }

    /// Gauss–Jordan inverse. `None` when no provably nonzero pivot exists.
    pub fn inverse(&self, prec: u32) -> Option<RMat> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = RMat::identity(n);
        for col in 0..n {
            // pivot: row with the largest certified lower bound on |entry|
            let mut best: Option<(usize, Float)> = None;
            for r in col..n {
                let e = a.at(r, col);
                let lo = {
                    let l = e.abs().lower();
                    l
                };
                if lo.is_sign_positive() && lo.cmp0() == Some(std::cmp::Ordering::Greater) {
                    if best.as_ref().map_or(true, |(_, b)| lo > *b) {
                        best = Some((r, lo));
                    }
                }
            }
            let (piv, _) = best?;
            if piv != col {
                for j in 0..n {
                    let tmp = a.at(piv, j).clone();
                    *a.at_mut(piv, j) = a.at(col, j).clone();
                    *a.at_mut(col, j) = tmp;
                    let tmp = inv.at(piv, j).clone();
                    *inv.at_mut(piv, j) = inv.at(col, j).clone();
                    *inv.at_mut(col, j) = tmp;
                }
            }
            let d = a.at(col, col).clone();
            for j in 0..n {
                *a.at_mut(col, j) = a.at(col, j).div(&d, prec);
                *inv.at_mut(col, j) = inv.at(col, j).div(&d, prec);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a.at(r, col).clone();
                for j in 0..n {
                    let t = a.at(col, j).mul(&f, prec);
                    *a.at_mut(r, j) = a.at(r, j).sub(&t, prec);
                    let t = inv.at(col, j).mul(&f, prec);
                    *inv.at_mut(r, j) = inv.at(r, j).sub(&t, prec);
                }
            }
        }
        Some(inv)
    }

    /// Upper bound (rounded up) on the ∞-norm max_i Σ_j |a_ij|.
    pub fn inf_norm_upper(&self) -> Float {
        let mut best = Float::new(RAD_PREC);
        for i in 0..self.rows {
            let mut row = Float::new(RAD_PREC);
            for j in 0..self.cols {
                row = radd(&row, &self.at(i, j).abs().upper());
            }
            if row > best {
                best = row;
            }
        }
        best
    }

    /// xᵀ·self·x as a ball.
    pub fn quad_form(&self, x: &[RealBall], prec: u32) -> RealBall {
        let ax = self.mul_vec(x, prec);
        dot_real(x, &ax, prec)
    }
}

pub fn dot_real(a: &[RealBall], b: &[RealBall], prec: u32) -> RealBall {
    assert_eq!(a.len(), b.len());
    let mut acc = RealBall::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc.add(&x.mul(y, prec), prec);
    }
    acc
}

/// Rectangular matrix of complex balls, row-major.
#[derive(Clone, Debug)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<ComplexBall>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: vec![ComplexBall::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = ComplexBall::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> ComplexBall) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMat { rows, cols, data }
    }

    pub fn from_parts(re: &RMat, im: &RMat) -> Self {
        assert_eq!((re.rows, re.cols), (im.rows, im.cols));
        CMat::from_fn(re.rows, re.cols, |i, j| ComplexBall::from_parts(re.at(i, j), im.at(i, j)))
    }

    /// Real part, as balls (projection of each disk).
    pub fn re(&self) -> RMat {
        RMat::from_fn(self.rows, self.cols, |i, j| self.at(i, j).re_ball())
    }

    pub fn im(&self) -> RMat {
        RMat::from_fn(self.rows, self.cols, |i, j| self.at(i, j).im_ball())
    }

    pub fn at(&self, i: usize, j: usize) -> &ComplexBall {
        &self.data[i * self.cols + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut ComplexBall {
        &mut self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |i, j| self.at(j, i).clone())
    }

    pub fn add(&self, other: &CMat, prec: u32) -> CMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        CMat::from_fn(self.rows, self.cols, |i, j| self.at(i, j).add(other.at(i, j), prec))
    }

    pub fn sub(&self, other: &CMat, prec: u32) -> CMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        CMat::from_fn(self.rows, self.cols, |i, j| self.at(i, j).sub(other.at(i, j), prec))
    }

    pub fn mul(&self, other: &CMat, prec: u32) -> CMat {
        assert_eq!(self.cols, other.rows);
        CMat::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = ComplexBall::zero();
            for k in 0..self.cols {
                acc = acc.add(&self.at(i, k).mul(other.at(k, j), prec), prec);
            }
            acc
        })
    }

    pub fn mul_vec(&self, v: &[ComplexBall], prec: u32) -> Vec<ComplexBall> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut acc = ComplexBall::zero();
                for k in 0..self.cols {
                    acc = acc.add(&self.at(i, k).mul(&v[k], prec), prec);
                }
                acc
            })
            .collect()
    }

    /// Multiply by an integer matrix on the left: u·self (exact integer weights).
    pub fn mul_int_left(&self, u: &[Vec<i64>], prec: u32) -> CMat {
        let rows = u.len();
        assert_eq!(u[0].len(), self.rows);
        CMat::from_fn(rows, self.cols, |i, j| {
            let mut acc = ComplexBall::zero();
            for k in 0..self.rows {
                if u[i][k] != 0 {
                    acc = acc.add(&self.at(k, j).mul_i64(u[i][k], prec), prec);
                }
            }
            acc
        })
    }

    pub fn symmetrize(&self, prec: u32) -> CMat {
        assert_eq!(self.rows, self.cols);
        let re = self.re().symmetrize(prec);
        let im = self.im().symmetrize(prec);
        CMat::from_parts(&re, &im)
    }

    /// Gauss–Jordan inverse; `None` when no provably nonzero pivot exists.
    pub fn inverse(&self, prec: u32) -> Option<CMat> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = CMat::identity(n);
        for col in 0..n {
            let mut best: Option<(usize, Float)> = None;
            for r in col..n {
                let lo = a.at(r, col).abs().lower();
                if lo.cmp0() == Some(std::cmp::Ordering::Greater)
                    && best.as_ref().map_or(true, |(_, b)| lo > *b)
                {
                    best = Some((r, lo));
                }
            }
            let (piv, _) = best?;
            if piv != col {
                for j in 0..n {
                    let tmp = a.at(piv, j).clone();
                    *a.at_mut(piv, j) = a.at(col, j).clone();
                    *a.at_mut(col, j) = tmp;
                    let tmp = inv.at(piv, j).clone();
                    *inv.at_mut(piv, j) = inv.at(col, j).clone();
                    *inv.at_mut(col, j) = tmp;
                }
            }
            let d = a.at(col, col).inv(prec);
            for j in 0..n {
                *a.at_mut(col, j) = a.at(col, j).mul(&d, prec);
                *inv.at_mut(col, j) = inv.at(col, j).mul(&d, prec);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a.at(r, col).clone();
                for j in 0..n {
                    let t = a.at(col, j).mul(&f, prec);
                    *a.at_mut(r, j) = a.at(r, j).sub(&t, prec);
                    let t = inv.at(col, j).mul(&f, prec);
                    *inv.at_mut(r, j) = inv.at(r, j).sub(&t, prec);
                }
            }
        }
        Some(inv)
    }

    /// Certified determinant.
    ///
    /// LU elimination with the best certified pivot; if at some stage no
    /// remaining pivot is provably nonzero, the determinant of the remaining
    /// block is enclosed by 0 ± its Hadamard bound, keeping the result sound
    /// (if wide).
    pub fn det(&self, prec: u32) -> ComplexBall {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut acc = ComplexBall::one();
        let mut sign = false;
        for col in 0..n {
            let mut best: Option<(usize, Float)> = None;
            for r in col..n {
                let lo = a.at(r, col).abs().lower();
                if lo.cmp0() == Some(std::cmp::Ordering::Greater)
                    && best.as_ref().map_or(true, |(_, b)| lo > *b)
                {
                    best = Some((r, lo));
                }
            }
            let piv = match best {
                Some((piv, _)) => piv,
                None => {
                    // Hadamard bound on the remaining (n-col)² block
                    let mut had = Float::with_val(RAD_PREC, 1);
                    for r in col..n {
                        let mut row2 = RealBall::zero();
                        for j in col..n {
                            let m = a.at(r, j).abs();
                            row2 = row2.add(&m.mul(&m, RAD_PREC + 23), RAD_PREC + 23);
                        }
                        let norm = row2.sqrt(RAD_PREC + 23).map(|b| b.upper()).unwrap_or_else(|_| Float::with_val(RAD_PREC, rug::float::Special::Infinity));
                        had = rmul(&had, &norm);
                    }
                    let mag = acc.abs().upper();
                    return ComplexBall::from_mid_rad(Float::new(8), Float::new(8), rmul(&mag, &had));
                }
            };
            if piv != col {
                sign = !sign;
                for j in 0..n {
                    let tmp = a.at(piv, j).clone();
                    *a.at_mut(piv, j) = a.at(col, j).clone();
                    *a.at_mut(col, j) = tmp;
                }
            }
            let d = a.at(col, col).clone();
            acc = acc.mul(&d, prec);
            let dinv = d.inv(prec);
            for r in (col + 1)..n {
                let f = a.at(r, col).mul(&dinv, prec);
                for j in (col + 1)..n {
                    let t = a.at(col, j).mul(&f, prec);
                    *a.at_mut(r, j) = a.at(r, j).sub(&t, prec);
                }
            }
        }
        if sign {
            acc.neg()
        } else {
            acc
        }
    }

    /// xᵀ·self·x for an exact integer vector x.
    pub fn quad_form_int(&self, x: &[i64], prec: u32) -> ComplexBall {
        assert_eq!(self.rows, x.len());
        let mut acc = ComplexBall::zero();
        for i in 0..self.rows {
            for j in 0..self.cols {
                if x[i] != 0 && x[j] != 0 {
                    acc = acc.add(&self.at(i, j).mul_i64(x[i] * x[j], prec), prec);
                }
            }
        }
        acc
    }
}

pub fn dot_complex(a: &[ComplexBall], b: &[ComplexBall], prec: u32) -> ComplexBall {
    assert_eq!(a.len(), b.len());
    let mut acc = ComplexBall::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc.add(&x.mul(y, prec), prec);
    }
    acc
}

/// Σ x_i · v_i with exact integer weights.
pub fn dot_int_complex(x: &[i64], v: &[ComplexBall], prec: u32) -> ComplexBall {
    assert_eq!(x.len(), v.len());
    let mut acc = ComplexBall::zero();
    for (k, b) in x.iter().zip(v) {
        if *k != 0 {
            acc = acc.add(&b.mul_i64(*k, prec), prec);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: u32 = 64;

    fn rb(x: f64) -> RealBall {
        RealBall::from_f64(x)
    }

    #[test]
    fn cholesky_of_known_matrix() {
        // oracle: A = [[4,2],[2,5]] = CᵀC with C = [[2,1],[0,2]]
        let a = RMat::from_fn(2, 2, |i, j| rb([[4.0, 2.0], [2.0, 5.0]][i][j]));
        let c = a.cholesky_upper(P).unwrap();
        assert!(c.at(0, 0).contains(&Float::with_val(8, 2)));
        assert!(c.at(0, 1).contains(&Float::with_val(8, 1)));
        assert!(c.at(1, 1).contains(&Float::with_val(8, 2)));
        assert!(c.at(1, 0).contains(&Float::new(8)));

        // reconstruct
        let r = c.transpose().mul(&c, P);
        for i in 0..2 {
            for j in 0..2 {
                assert!(r.at(i, j).overlaps(a.at(i, j)));
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = RMat::from_fn(2, 2, |i, j| rb([[1.0, 3.0], [3.0, 1.0]][i][j]));
        assert!(matches!(a.cholesky_upper(P), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn triangular_solves() {
        let c = RMat::from_fn(2, 2, |i, j| rb([[2.0, 1.0], [0.0, 2.0]][i][j]));
        // C x = (5, 6) → x = (1.75, 3)... check: 2x0 + x1 = 5, 2x1 = 6 → x1=3, x0=1
        let x = c.solve_upper(&[rb(5.0), rb(6.0)], P);
        assert!(x[0].contains(&Float::with_val(8, 1)));
        assert!(x[1].contains(&Float::with_val(8, 3)));
        // Cᵀ y = (2, 7): 2y0 = 2 → y0=1; y0 + 2y1 = 7 → y1=3
        let y = c.solve_upper_transpose(&[rb(2.0), rb(7.0)], P);
        assert!(y[0].contains(&Float::with_val(8, 1)));
        assert!(y[1].contains(&Float::with_val(8, 3)));
    }

    #[test]
    fn real_inverse_roundtrip() {
        let a = RMat::from_fn(3, 3, |i, j| {
            rb([[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]][i][j])
        });
        let inv = a.inverse(P).unwrap();
        let prod = a.mul(&inv, P);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(prod.at(i, j).contains(&Float::with_val(8, expect)), "({i},{j})");
            }
        }
    }

    #[test]
    fn complex_det_and_inverse() {
        // oracle: det [[1+i, 2], [3, 4-i]] = (1+i)(4-i) − 6 = 4−i+4i+1 − 6 = −1+3i
        let m = CMat::from_fn(2, 2, |i, j| {
            let vals = [
                [ComplexBall::from_f64s(1.0, 1.0), ComplexBall::from_f64s(2.0, 0.0)],
                [ComplexBall::from_f64s(3.0, 0.0), ComplexBall::from_f64s(4.0, -1.0)],
            ];
            vals[i][j].clone()
        });
        let d = m.det(P);
        assert!(d.contains_point(&Float::with_val(8, -1), &Float::with_val(8, 3)), "{d:?}");

        let inv = m.inverse(P).unwrap();
        let prod = m.mul(&inv, P);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    prod.at(i, j).contains_point(&Float::with_val(8, expect), &Float::new(8)),
                    "({i},{j}): {:?}",
                    prod.at(i, j)
                );
            }
        }
    }

    #[test]
    fn det_singular_is_enclosed() {
        // rank-1 matrix: det must contain 0
        let m = CMat::from_fn(2, 2, |i, j| {
            ComplexBall::from_f64s([[1.0, 2.0], [2.0, 4.0]][i][j], 0.0)
        });
        let d = m.det(P);
        assert!(d.contains_point(&Float::new(8), &Float::new(8)));
    }

    #[test]
    fn quad_form_int_matches_manual() {
        // τ = [[i, 1/2],[1/2, 2i]], n = (2, −1):
        // nᵀτn = 4·i + 2·(2·(−1)·1/2) + 1·2i = 4i − 2 + 2i = −2 + 6i
        let m = CMat::from_fn(2, 2, |i, j| {
            let vals = [
                [ComplexBall::from_f64s(0.0, 1.0), ComplexBall::from_f64s(0.5, 0.0)],
                [ComplexBall::from_f64s(0.5, 0.0), ComplexBall::from_f64s(0.0, 2.0)],
            ];
            vals[i][j].clone()
        });
        let q = m.quad_form_int(&[2, -1], P);
        assert!(q.contains_point(&Float::with_val(8, -2), &Float::with_val(8, 6)), "{q:?}");
    }

    #[test]
    fn inf_norm_bound() {
        let a = RMat::from_fn(2, 2, |i, j| rb([[1.0, -2.0], [0.25, 0.5]][i][j]));
        let n = a.inf_norm_upper();
        assert!(n.to_f64() >= 3.0 && n.to_f64() < 3.0 + 1e-6);
    }
}
