//! Small dense linear algebra: row-major matrices, cyclic Jacobi eigen-solve for symmetric
//! matrices, one-sided Jacobi SVD and pseudoinverse solves, LU with partial pivoting.
//!
//! Everything here is deterministic and platform independent (no BLAS), which keeps
//! eigenvalue and pseudoinverse outputs reproducible.

use crate::error::{Error, Result};

/// Relative off-diagonal tolerance for the Jacobi eigen-solve.
pub const EIGEN_TOL: f64 = 1e-14;
/// Relative singular-value cutoff for pseudoinverse solves.
pub const SVD_CUTOFF: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other` without forming the transpose.
    pub fn t_mul(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "({}x{})^T times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                for (o, &bj) in out.row_mut(i).iter_mut().zip(b) {
                    *o += ai * bj;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "{}x{} times vector of {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `self^T * v`.
    pub fn t_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::Dimension(format!(
                "({}x{})^T times vector of {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension("matrix difference".into()));
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector of `values[k]`.
    pub vectors: Mat,
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm is below
/// `EIGEN_TOL * ||A||_F`.
pub fn symmetric_eigen(a: &Mat) -> Result<SymmetricEigen> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::Dimension("eigen-solve needs a square matrix".into()));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("eigen-solve input"));
    }
    let mut m = a.clone();
    // symmetrize exactly so rounding in the input cannot bias the rotations
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let mut v = Mat::identity(n);
    let scale = m.frobenius();
    if scale > 0.0 {
        for _ in 0..MAX_SWEEPS {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)] * m[(i, j)])
                .sum::<f64>()
                .sqrt();
            if off <= EIGEN_TOL * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m[(p, q)];
                    if apq.abs() <= f64::MIN_POSITIVE {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, k)] = v[(r, i)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Thin singular value decomposition `A = U diag(s) V^T`, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

/// One-sided (Hestenes) Jacobi SVD for `rows >= cols`.
pub fn svd(a: &Mat) -> Result<Svd> {
    let (m, n) = (a.rows, a.cols);
    if m < n {
        let t = svd(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    let mut u = a.clone();
    let mut v = Mat::identity(n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let up = u[(i, p)];
                    let uq = u[(i, q)];
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let up = u[(i, p)];
                    let uq = u[(i, q)];
                    u[(i, p)] = c * up - s * uq;
                    u[(i, q)] = s * up + c * uq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| norm2(&u.column(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let mut uu = Mat::zeros(m, n);
    let mut vv = Mat::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        for i in 0..m {
            uu[(i, k)] = if sigma > 0.0 { u[(i, j)] / sigma } else { 0.0 };
        }
        for i in 0..n {
            vv[(i, k)] = v[(i, j)];
        }
    }
    Ok(Svd { u: uu, s, v: vv })
}

/// Solution of a pseudoinverse solve.
#[derive(Debug, Clone)]
pub struct PinvSolution {
    pub x: Vec<f64>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

/// `x = A^+ b`, discarding singular values below `rel_cutoff * s_max`. Minimum-norm when
/// `A` is rank deficient.
pub fn pinv_solve(a: &Mat, b: &[f64], rel_cutoff: f64) -> Result<PinvSolution> {
    if b.len() != a.rows {
        return Err(Error::Dimension("pseudoinverse right-hand side".into()));
    }
    let d = svd(a)?;
    let smax = d.s.first().copied().unwrap_or(0.0);
    let threshold = rel_cutoff * smax;
    let utb = d.u.t_mul_vec(b)?;
    let mut x = vec![0.0; a.cols];
    let mut rank = 0;
    for (k, &sigma) in d.s.iter().enumerate() {
        if sigma <= threshold || sigma == 0.0 {
            continue;
        }
        rank += 1;
        let coef = utb[k] / sigma;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += coef * d.v[(i, k)];
        }
    }
    Ok(PinvSolution {
        x,
        rank,
        singular_values: d.s,
    })
}

/// Solves the square system `A x = b` by LU with partial pivoting.
pub fn lu_solve(mut a: Mat, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = a.rows;
    if a.cols != n || b.len() != n {
        return Err(Error::Dimension("LU solve needs a square system".into()));
    }
    for k in 0..n {
        let pivot = (k..n)
            .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()).then(j.cmp(&i)))
            .expect("non-empty range");
        if a[(pivot, k)] == 0.0 {
            return Err(Error::Dimension("singular system".into()));
        }
        if pivot != k {
            for j in 0..n {
                a.data.swap(k * n + j, pivot * n + j);
            }
            b.swap(k, pivot);
        }
        let akk = a[(k, k)];
        for i in k + 1..n {
            let f = a[(i, k)] / akk;
            if f == 0.0 {
                continue;
            }
            a[(i, k)] = 0.0;
            for j in k + 1..n {
                a.data[i * n + j] -= f * a.data[k * n + j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[(i, j)] * x[j]).sum();
        x[i] = (b[i] - s) / a[(i, i)];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn to_na(m: &Mat) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
    }

    #[test]
    fn eigen_matches_nalgebra() {
        for seed in 0..10 {
            let x = random_mat(12, 7, seed);
            let g = x.t_mul(&x).unwrap();
            let ours = symmetric_eigen(&g).unwrap();
            let mut theirs: Vec<f64> = to_na(&g).symmetric_eigen().eigenvalues.iter().copied().collect();
            theirs.sort_by(f64::total_cmp);
            for (a, b) in ours.values.iter().zip(&theirs) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            // A v = lambda v
            for k in 0..7 {
                let vk = ours.vectors.column(k);
                let av = g.mul_vec(&vk).unwrap();
                for (x, y) in av.iter().zip(&vk) {
                    assert!((x - ours.values[k] * y).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn svd_reconstructs() {
        for seed in 0..10 {
            let a = random_mat(9, 6, 100 + seed);
            let d = svd(&a).unwrap();
            assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
            let mut us = d.u.clone();
            for i in 0..us.rows() {
                for k in 0..us.cols() {
                    us[(i, k)] *= d.s[k];
                }
            }
            let back = us.mul(&d.v.transpose()).unwrap();
            assert!(back.sub(&a).unwrap().frobenius() < 1e-12);
            let theirs = to_na(&a).singular_values();
            let mut theirs: Vec<f64> = theirs.iter().copied().collect();
            theirs.sort_by(|a, b| b.total_cmp(a));
            for (x, y) in d.s.iter().zip(&theirs) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pinv_nonsingular_is_inverse() {
        let a = random_mat(6, 6, 7);
        let b: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        let sol = pinv_solve(&a, &b, SVD_CUTOFF).unwrap();
        assert_eq!(sol.rank, 6);
        let lu = lu_solve(a.clone(), b.clone()).unwrap();
        for (x, y) in sol.x.iter().zip(&lu) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn pinv_rank_deficient_minimum_norm() {
        // duplicated column: minimum-norm solution splits the weight evenly
        let a = Mat::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let sol = pinv_solve(&a, &[1.0, 2.0], SVD_CUTOFF).unwrap();
        assert_eq!(sol.rank, 1);
        assert!((sol.x[0] - 0.5).abs() < 1e-14 && (sol.x[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn lu_rejects_singular() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(lu_solve(a, vec![1.0, 1.0]).is_err());
    }
}
