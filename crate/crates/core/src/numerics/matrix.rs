use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Condition-number bound above which [`solve_linear`] refuses to answer.
pub const DEFAULT_MAX_CONDITION: f64 = 1e12;

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
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
            return Err(Error::dims("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Induced infinity norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Induced 1-norm (maximum absolute column sum).
    pub fn norm_1(&self) -> f64 {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self[(r, c)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, "Matrix::add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, "Matrix::sub", |a, b| a - b)
    }

    fn zip(&self, other: &Matrix, ctx: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::dims(ctx, format!("{:?}", self.shape()), format!("{:?}", other.shape())));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    /// `(A + Aᵀ) / 2`; panics if not square.
    pub fn symmetrized(&self) -> Matrix {
        assert_eq!(self.rows, self.cols);
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    pub(crate) fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::dims(
            "matmul",
            format!("lhs cols = rhs rows = {}", a.cols),
            format!("rhs rows = {}", b.rows),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

pub fn solve_linear(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    solve_linear_with(a, b, DEFAULT_MAX_CONDITION)
}

/// Solves `a X = b` by LU with partial pivoting and one round of iterative
/// refinement. The 1-norm condition number is estimated from the explicit
/// inverse and compared against `max_condition`.
pub fn solve_linear_with(a: &Matrix, b: &Matrix, max_condition: f64) -> Result<Matrix> {
    if a.rows != a.cols {
        return Err(Error::dims("solve_linear", "square matrix", format!("{}x{}", a.rows, a.cols)));
    }
    if b.rows != a.rows {
        return Err(Error::dims("solve_linear", format!("rhs rows {}", a.rows), b.rows));
    }
    let lu = Lu::factor(a)?;
    let inv = lu.solve(&Matrix::identity(a.rows));
    let condition = a.norm_1() * inv.norm_1();
    if !condition.is_finite() || condition > max_condition {
        return Err(Error::Singular { condition });
    }
    let mut x = lu.solve(b);
    let residual = b.sub(&matmul(a, &x)?)?;
    let correction = lu.solve(&residual);
    for (xv, cv) in x.data.iter_mut().zip(&correction.data) {
        *xv += cv;
    }
    Ok(x)
}

struct Lu {
    n: usize,
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(a: &Matrix) -> Result<Self> {
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs();
        if scale == 0.0 && n > 0 {
            return Err(Error::Singular {
                condition: f64::INFINITY,
            });
        }
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|r| (r, lu[(r, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= scale * 1e-14 {
                return Err(Error::Singular {
                    condition: f64::INFINITY,
                });
            }
            if p != k {
                for c in 0..n {
                    lu.data.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let d = lu[(k, k)];
            for r in (k + 1)..n {
                let f = lu[(r, k)] / d;
                lu[(r, k)] = f;
                if f != 0.0 {
                    for c in (k + 1)..n {
                        lu[(r, c)] -= f * lu[(k, c)];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    fn solve(&self, b: &Matrix) -> Matrix {
        let n = self.n;
        let m = b.cols;
        let mut x = Matrix::zeros(n, m);
        for (i, &p) in self.perm.iter().enumerate() {
            x.row_mut(i).copy_from_slice(b.row(p));
        }
        for j in 0..m {
            for i in 0..n {
                let mut s = x[(i, j)];
                for k in 0..i {
                    s -= self.lu[(i, k)] * x[(k, j)];
                }
                x[(i, j)] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, j)];
                for k in (i + 1)..n {
                    s -= self.lu[(i, k)] * x[(k, j)];
                }
                x[(i, j)] = s / self.lu[(i, i)];
            }
        }
        x
    }
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    if a.rows != a.cols {
        return Err(Error::dims("spectral_radius", "square matrix", format!("{}x{}", a.rows, a.cols)));
    }
    if a.rows == 0 {
        return Ok(0.0);
    }
    if !a.is_finite() {
        return Err(Error::InvalidArgument("spectral_radius of a non-finite matrix".into()));
    }
    match nalgebra::linalg::Schur::try_new(a.to_nalgebra(), f64::EPSILON, SCHUR_MAX_ITER) {
        Some(schur) => Ok(schur.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)),
        None => Ok(gelfand_radius(a)),
    }
}

const SCHUR_MAX_ITER: usize = 10_000;

/// `‖A^(2^j)‖^(1/2^j)` after 40 squarings, renormalized each step. Converges
/// to the spectral radius from above.
fn gelfand_radius(a: &Matrix) -> f64 {
    let mut log_scale = 0.0;
    let mut power = a.clone();
    let mut exponent = 1.0;
    for _ in 0..40 {
        let n = power.norm_inf();
        if n == 0.0 {
            return 0.0;
        }
        log_scale += n.ln() / exponent;
        power = power.scale(1.0 / n);
        power = matmul(&power, &power).expect("square");
        exponent *= 2.0;
    }
    let n = power.norm_inf();
    if n == 0.0 {
        return 0.0;
    }
    (log_scale + n.ln() / exponent).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn identity_product_is_noop() {
        let mut rng = Rng::new(3);
        let m = random(&mut rng, 3, 4);
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn hand_multiplication() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[0.0], &[1.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), Matrix::from_rows(&[&[2.0], &[4.0]]));
    }

    #[test]
    fn zero_product() {
        let mut rng = Rng::new(4);
        let m = random(&mut rng, 3, 3);
        let z = matmul(&Matrix::zeros(2, 3), &m).unwrap();
        assert_eq!(z, Matrix::zeros(2, 3));
    }

    #[test]
    fn matmul_dimension_error() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn associativity_on_random_8x8() {
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let (a, b, c) = (random(&mut rng, 8, 8), random(&mut rng, 8, 8), random(&mut rng, 8, 8));
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = a.max_abs() * b.max_abs() * c.max_abs() * 64.0;
            assert!(left.sub(&right).unwrap().max_abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let v = Matrix::column(&[1.5, -2.0, 3.0]);
        assert_eq!(solve_linear(&Matrix::identity(3), &v).unwrap(), v);
        let a = Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 4.0]]);
        let x = solve_linear(&a, &Matrix::column(&[2.0, 8.0])).unwrap();
        assert_eq!(x, Matrix::column(&[1.0, 2.0]));
    }

    #[test]
    fn solve_rejects_singular() {
        let a = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let err = solve_linear(&a, &Matrix::column(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn solve_rejects_ill_conditioned() {
        let a = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0 + 1e-13]]);
        assert!(solve_linear(&a, &Matrix::column(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn solve_residual_bound_on_random_systems() {
        let mut rng = Rng::new(99);
        for _ in 0..100 {
            let n = 1 + (rng.next_u64() % 12) as usize;
            // Diagonally dominated random matrices are well conditioned.
            let mut a = random(&mut rng, n, n);
            for i in 0..n {
                a[(i, i)] += 2.0 * n as f64;
            }
            let b = random(&mut rng, n, 2);
            let x = solve_linear(&a, &b).unwrap();
            let r = matmul(&a, &x).unwrap().sub(&b).unwrap();
            assert!(r.max_abs() <= 1e-9 * b.max_abs());
        }
    }

    #[test]
    fn spectral_radius_of_rotation_and_diagonal() {
        let rot = Matrix::from_rows(&[&[0.0, -0.5], &[0.5, 0.0]]);
        assert!((spectral_radius(&rot).unwrap() - 0.5).abs() < 1e-12);
        let d = Matrix::diagonal(&[0.2, -0.9, 0.4]);
        assert!((spectral_radius(&d).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn power_bound_matches_eigenvalues() {
        let mut rng = Rng::new(21);
        for _ in 0..20 {
            let a = random(&mut rng, 5, 5);
            let exact = spectral_radius(&a).unwrap();
            assert!((gelfand_radius(&a) - exact).abs() <= 1e-6 * exact.max(1.0), "{exact}");
        }
        let jordan = Matrix::from_rows(&[&[0.5, 1.0], &[0.0, 0.5]]);
        assert!((gelfand_radius(&jordan) - 0.5).abs() < 1e-6);
        assert_eq!(gelfand_radius(&Matrix::zeros(3, 3)), 0.0);
    }
}
