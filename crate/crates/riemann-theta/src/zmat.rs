//! Exact integer matrices: Hermite and Smith normal forms with unimodular
//! transforms, determinants, unimodular inverses, and LLL reduction of a
//! positive-definite Gram matrix.

use rug::{Complete, Float, Integer, Rational};

/// Dense matrix of arbitrary-precision integers, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IMat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<Integer>,
}

impl IMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        IMat { rows, cols, data: vec![Integer::new(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = IMat::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = Integer::from(1);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> i64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(Integer::from(f(i, j)));
            }
        }
        IMat { rows, cols, data }
    }

    pub fn at(&self, i: usize, j: usize) -> &Integer {
        &self.data[i * self.cols + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut Integer {
        &mut self.data[i * self.cols + j]
    }

    pub fn to_i64(&self, i: usize, j: usize) -> i64 {
        self.at(i, j).to_i64().expect("entry exceeds i64")
    }

    pub fn transpose(&self) -> IMat {
        let mut m = IMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *m.at_mut(j, i) = self.at(i, j).clone();
            }
        }
        m
    }

    pub fn mul(&self, other: &IMat) -> IMat {
        assert_eq!(self.cols, other.rows);
        let mut m = IMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = Integer::new();
                for k in 0..self.cols {
                    acc += (self.at(i, k) * other.at(k, j)).complete();
                }
                *m.at_mut(i, j) = acc;
            }
        }
        m
    }

    pub fn neg(&self) -> IMat {
        let mut m = self.clone();
        for e in &mut m.data {
            *e = (-&*e).complete();
        }
        m
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|e| e.cmp0() == std::cmp::Ordering::Equal)
    }

    pub fn is_identity(&self) -> bool {
        self.rows == self.cols && (0..self.rows).all(|i| (0..self.cols).all(|j| *self.at(i, j) == i64::from(i == j)))
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && (0..self.rows).all(|i| (0..self.cols).all(|j| self.at(i, j) == self.at(j, i)))
    }

    /// Determinant by fraction-free Bareiss elimination.
    pub fn det(&self) -> Integer {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        if n == 0 {
            return Integer::from(1);
        }
        let mut a = self.clone();
        let mut sign = 1i32;
        let mut prev = Integer::from(1);
        for k in 0..n - 1 {
            if a.at(k, k).cmp0() == std::cmp::Ordering::Equal {
                let piv = ((k + 1)..n).find(|&r| a.at(r, k).cmp0() != std::cmp::Ordering::Equal);
                match piv {
                    Some(r) => {
                        for j in 0..n {
                            let tmp = a.at(r, j).clone();
                            *a.at_mut(r, j) = a.at(k, j).clone();
                            *a.at_mut(k, j) = tmp;
                        }
                        sign = -sign;
                    }
                    None => return Integer::new(),
                }
            }
            for i in (k + 1)..n {
                for j in (k + 1)..n {
                    let t = (a.at(k, k) * a.at(i, j)).complete() - (a.at(i, k) * a.at(k, j)).complete();
                    let (q, r) = t.div_rem(prev.clone());
                    debug_assert_eq!(r.cmp0(), std::cmp::Ordering::Equal);
                    *a.at_mut(i, j) = q;
                }
            }
            prev = a.at(k, k).clone();
            for j in 0..n {
                if j != k {
                    // row k stays; zero the column below for clarity
                }
            }
        }
        let d = a.at(n - 1, n - 1).clone();
        if sign < 0 {
            -d
        } else {
            d
        }
    }

    /// Exact inverse of a matrix with det = ±1.
    pub fn inverse_unimodular(&self) -> IMat {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        // Gauss–Jordan over the rationals
        let mut a: Vec<Vec<Rational>> =
            (0..n).map(|i| (0..n).map(|j| Rational::from(self.at(i, j))).collect()).collect();
        let mut inv: Vec<Vec<Rational>> =
            (0..n).map(|i| (0..n).map(|j| Rational::from(i64::from(i == j))).collect()).collect();
        for col in 0..n {
            let piv = (col..n)
                .find(|&r| a[r][col].cmp0() != std::cmp::Ordering::Equal)
                .expect("matrix is singular");
            a.swap(col, piv);
            inv.swap(col, piv);
            let d = a[col][col].clone();
            for j in 0..n {
                a[col][j] /= &d;
                inv[col][j] /= &d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r][col].clone();
                if f.cmp0() == std::cmp::Ordering::Equal {
                    continue;
                }
                for j in 0..n {
                    let t = (&a[col][j] * &f).complete();
                    a[r][j] -= t;
                    let t = (&inv[col][j] * &f).complete();
                    inv[r][j] -= t;
                }
            }
        }
        IMat {
            rows: n,
            cols: n,
            data: inv
                .into_iter()
                .flatten()
                .map(|q| {
                    let (num, den) = q.into_numer_denom();
                    assert_eq!(den, 1u32, "matrix is not unimodular");
                    num
                })
                .collect(),
        }
    }
}

/// Row-style Hermite normal form: returns (H, L) with L unimodular,
/// H = L·A, H in row echelon form with positive pivots and entries above a
/// pivot reduced modulo it.
pub fn hnf_rows(a: &IMat) -> (IMat, IMat) {
    let mut h = a.clone();
    let mut l = IMat::identity(a.rows);
    let (rows, cols) = (a.rows, a.cols);
    let mut pivot_row = 0usize;
    for col in 0..cols {
        if pivot_row >= rows {
            break;
        }
        // find a nonzero entry in this column at or below pivot_row
        if (pivot_row..rows).all(|r| h.at(r, col).cmp0() == std::cmp::Ordering::Equal) {
            continue;
        }
        // eliminate via extended-gcd row ops until one nonzero remains
        loop {
            let mut idx: Vec<usize> = (pivot_row..rows)
                .filter(|&r| h.at(r, col).cmp0() != std::cmp::Ordering::Equal)
                .collect();
            if idx.len() <= 1 {
                break;
            }
            idx.sort_by(|&x, &y| h.at(x, col).as_abs().cmp(&h.at(y, col).as_abs()));
            let (small, big) = (idx[0], idx[1]);
            let q = Integer::from(h.at(big, col) / h.at(small, col));
            // row_big -= q · row_small
            for j in 0..cols {
                let t = (&q * h.at(small, j)).complete();
                *h.at_mut(big, j) -= t;
            }
            for j in 0..rows {
                let t = (&q * l.at(small, j)).complete();
                *l.at_mut(big, j) -= t;
            }
        }
        let r = (pivot_row..rows)
            .find(|&r| h.at(r, col).cmp0() != std::cmp::Ordering::Equal)
            .unwrap();
        if r != pivot_row {
            for j in 0..cols {
                let tmp = h.at(r, j).clone();
                *h.at_mut(r, j) = h.at(pivot_row, j).clone();
                *h.at_mut(pivot_row, j) = tmp;
            }
            for j in 0..rows {
                let tmp = l.at(r, j).clone();
                *l.at_mut(r, j) = l.at(pivot_row, j).clone();
                *l.at_mut(pivot_row, j) = tmp;
            }
        }
        if h.at(pivot_row, col).cmp0() == std::cmp::Ordering::Less {
            for j in 0..cols {
                let t = (-h.at(pivot_row, j)).complete();
                *h.at_mut(pivot_row, j) = t;
            }
            for j in 0..rows {
                let t = (-l.at(pivot_row, j)).complete();
                *l.at_mut(pivot_row, j) = t;
            }
        }
        // reduce entries above the pivot
        let p = h.at(pivot_row, col).clone();
        for r in 0..pivot_row {
            let q = h.at(r, col).div_rem_floor_ref(&p).complete().0;
            if q.cmp0() != std::cmp::Ordering::Equal {
                for j in 0..cols {
                    let t = (&q * h.at(pivot_row, j)).complete();
                    *h.at_mut(r, j) -= t;
                }
                for j in 0..rows {
                    let t = (&q * l.at(pivot_row, j)).complete();
                    *l.at_mut(r, j) -= t;
                }
            }
        }
        pivot_row += 1;
    }
    (h, l)
}

/// Smith normal form: returns (D, L, R) with D = L·A·R diagonal,
/// d_1 | d_2 | … , and L, R unimodular.
pub fn snf(a: &IMat) -> (IMat, IMat, IMat) {
    let mut d = a.clone();
    let mut l = IMat::identity(a.rows);
    let mut r = IMat::identity(a.cols);
    // iterate row-HNF and column-HNF (HNF of the transpose) until diagonal
    for _ in 0..64 {
        let (h, l1) = hnf_rows(&d);
        l = l1.mul(&l);
        d = h;
        let (h, r1) = hnf_rows(&d.transpose());
        r = r.mul(&r1.transpose());
        d = h.transpose();
        if is_diagonal(&d) {
            break;
        }
    }
    assert!(is_diagonal(&d), "SNF iteration did not converge");
    // enforce the divisibility chain d_i | d_{i+1}
    let n = d.rows.min(d.cols);
    loop {
        let mut changed = false;
        for i in 0..n.saturating_sub(1) {
            let (di, dj) = (d.at(i, i).clone(), d.at(i + 1, i + 1).clone());
            if dj.cmp0() != std::cmp::Ordering::Equal
                && di.cmp0() != std::cmp::Ordering::Equal
                && !dj.is_divisible(&di)
            {
                // fold column i+1 into column i and re-diagonalize the 2×2 block
                // add column i+1 to column i
                for row in 0..d.rows {
                    let t = d.at(row, i + 1).clone();
                    *d.at_mut(row, i) += t;
                }
                for row in 0..r.rows {
                    let t = r.at(row, i + 1).clone();
                    *r.at_mut(row, i) += t;
                }
                let (h, l1) = hnf_rows(&d);
                l = l1.mul(&l);
                d = h;
                let (h, r1) = hnf_rows(&d.transpose());
                r = r.mul(&r1.transpose());
                d = h.transpose();
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (d, l, r)
}

fn is_diagonal(m: &IMat) -> bool {
    (0..m.rows).all(|i| (0..m.cols).all(|j| i == j || m.at(i, j).cmp0() == std::cmp::Ordering::Equal))
}

/// LLL reduction (δ = 0.99) of a positive-definite Gram matrix given by
/// float midpoints. Returns a unimodular U such that U·G·Uᵀ is the Gram
/// matrix of the reduced basis (row i of U expresses the i-th reduced vector
/// in the original basis).
///
/// Floating-point GSO at `prec` bits; the caller is expected to verify any
/// reduction-quality claims downstream, so occasional numerical slop here is
/// harmless for soundness.
pub fn lll_gram(g0: &[Vec<Float>], prec: u32) -> Vec<Vec<Integer>> {
    let n = g0.len();
    let delta = Float::with_val(prec, 0.99);
    let mut u: Vec<Vec<Integer>> = (0..n)
        .map(|i| (0..n).map(|j| Integer::from(i64::from(i == j))).collect())
        .collect();
    if n <= 1 {
        return u;
    }

    let gram = |u: &Vec<Vec<Integer>>, i: usize, j: usize| -> Float {
        let mut acc = Float::new(prec);
        for a in 0..n {
            if u[i][a].cmp0() == std::cmp::Ordering::Equal {
                continue;
            }
            for b in 0..n {
                if u[j][b].cmp0() == std::cmp::Ordering::Equal {
                    continue;
                }
                let t = Float::with_val(prec, &g0[a][b] * &u[i][a]);
                acc += t * &u[j][b];
            }
        }
        acc
    };

    // full GSO recompute: μ[i][j] for j<i and B[i] = ‖b*_i‖²
    let gso = |u: &Vec<Vec<Integer>>| -> (Vec<Vec<Float>>, Vec<Float>) {
        let mut mu = vec![vec![Float::new(prec); n]; n];
        let mut b = vec![Float::new(prec); n];
        for i in 0..n {
            for j in 0..i {
                let mut t = gram(u, i, j);
                for k in 0..j {
                    let s = Float::with_val(prec, &mu[i][k] * &mu[j][k]);
                    t -= s * &b[k];
                }
                mu[i][j] = t / &b[j];
            }
            let mut t = gram(u, i, i);
            for k in 0..i {
                let s = Float::with_val(prec, &mu[i][k] * &mu[i][k]);
                t -= s * &b[k];
            }
            b[i] = t;
        }
        (mu, b)
    };

    let (mut mu, mut b) = gso(&u);
    let mut k = 1usize;
    let mut iter = 0usize;
    while k < n {
        iter += 1;
        if iter > 10_000 {
            break; // quality is checked by the caller; bail out rather than loop
        }
        // size-reduce row k
        let mut dirty = false;
        for j in (0..k).rev() {
            let half = Float::with_val(prec, 0.5);
            if mu[k][j].clone().abs() > half {
                let q = mu[k][j]
                    .to_integer_round(rug::float::Round::Nearest)
                    .map(|(i, _)| i)
                    .unwrap_or_default();
                if q.cmp0() != std::cmp::Ordering::Equal {
                    for a in 0..n {
                        let t = (&q * &u[j][a]).complete();
                        u[k][a] -= t;
                    }
                    dirty = true;
                }
            }
        }
        if dirty {
            let r = gso(&u);
            mu = r.0;
            b = r.1;
        }
        let lhs = b[k].clone();
        let mut rhs = Float::with_val(prec, &delta);
        let m2 = Float::with_val(prec, &mu[k][k - 1] * &mu[k][k - 1]);
        rhs -= m2;
        rhs *= &b[k - 1];
        if lhs >= rhs {
            k += 1;
        } else {
            u.swap(k, k - 1);
            let r = gso(&u);
            mu = r.0;
            b = r.1;
            k = k.max(2) - 1;
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_known_values() {
        let m = IMat::from_fn(3, 3, |i, j| [[2, 0, 1], [1, 1, 0], [3, 2, 1]][i][j]);
        // oracle: cofactor expansion = 2(1·1−0·2) − 0 + 1(1·2−1·3) = 2 − 1 = 1
        assert_eq!(m.det(), 1);
        let id = IMat::identity(4);
        assert_eq!(id.det(), 1);
        let sing = IMat::from_fn(2, 2, |i, j| [[2, 4], [1, 2]][i][j]);
        assert_eq!(sing.det(), 0);
    }

    #[test]
    fn unimodular_inverse_roundtrip() {
        let m = IMat::from_fn(3, 3, |i, j| [[2, 0, 1], [1, 1, 0], [3, 2, 1]][i][j]);
        let inv = m.inverse_unimodular();
        assert!(m.mul(&inv).is_identity());
        assert!(inv.mul(&m).is_identity());
    }

    #[test]
    fn hnf_properties() {
        let a = IMat::from_fn(3, 3, |i, j| [[4, 6, 2], [2, 8, 4], [6, 4, 8]][i][j]);
        let (h, l) = hnf_rows(&a);
        // L is unimodular and L·A = H
        let d = l.det();
        assert!(d == 1 || d == -1);
        assert_eq!(l.mul(&a), h);
        // upper triangular with positive pivots
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(h.at(i, j).cmp0(), std::cmp::Ordering::Equal, "H not upper triangular");
            }
        }
    }

    #[test]
    fn snf_divisibility_chain() {
        let a = IMat::from_fn(3, 3, |i, j| [[2, 4, 4], [-6, 6, 12], [10, -4, -16]][i][j]);
        let (d, l, r) = snf(&a);
        assert_eq!(l.mul(&a).mul(&r), d);
        assert!(is_diagonal(&d));
        let ld = l.det();
        let rd = r.det();
        assert!(ld == 1 || ld == -1);
        assert!(rd == 1 || rd == -1);
        // oracle for this classic example: diag(2, 6, 12)
        let mut diag: Vec<Integer> = (0..3).map(|i| d.at(i, i).clone().abs()).collect();
        diag.sort();
        assert_eq!(diag, vec![Integer::from(2), Integer::from(6), Integer::from(12)]);
    }

    #[test]
    fn lll_reduces_skewed_gram() {
        // basis (1,0), (100, 1): Gram [[1, 100], [100, 10001]]
        let p = 128;
        let g0 = vec![
            vec![Float::with_val(p, 1), Float::with_val(p, 100)],
            vec![Float::with_val(p, 100), Float::with_val(p, 10001)],
        ];
        let u = lll_gram(&g0, p);
        // resulting Gram must be far shorter: both diagonal entries ≤ 2
        let mut g = vec![vec![Float::new(p); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = Float::new(p);
                for a in 0..2 {
                    for b in 0..2 {
                        let t = Float::with_val(p, &g0[a][b] * &u[i][a]);
                        acc += t * &u[j][b];
                    }
                }
                g[i][j] = acc;
            }
        }
        assert!(g[0][0].to_f64() <= 2.0, "‖b1‖² = {}", g[0][0].to_f64());
        assert!(g[1][1].to_f64() <= 2.0, "‖b2‖² = {}", g[1][1].to_f64());
        // U unimodular
        let ui = IMat {
            rows: 2,
            cols: 2,
            data: u.into_iter().flatten().collect(),
        };
        let d = ui.det();
        assert!(d == 1 || d == -1);
    }

    #[test]
    fn lll_identity_on_reduced() {
        let p = 96;
        let g0 = vec![
            vec![Float::with_val(p, 1), Float::with_val(p, 0)],
            vec![Float::with_val(p, 0), Float::with_val(p, 2)],
        ];
        let u = lll_gram(&g0, p);
        assert_eq!(u[0][0], 1i32);
        assert_eq!(u[1][1], 1i32);
        assert_eq!(u[0][1], 0i32);
        assert_eq!(u[1][0], 0i32);
    }
}
