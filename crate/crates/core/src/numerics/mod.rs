//! Dense matrices, densities, random streams and a scalar autodiff tape.

pub mod dist;
pub mod real;
pub mod rng;

pub use dist::DistParams;
pub use real::{Real, Tape, Var};
pub use rng::Stream;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is {rows}x{cols}, expected a square matrix")]
    NotSquare { rows: usize, cols: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("inverse temperature must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("{value} is outside the support of the {kind} distribution")]
    Support { kind: &'static str, value: f64 },
    #[error("invalid {kind} parameters: {reason}")]
    InvalidParams { kind: &'static str, reason: String },
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "entry count must equal rows*cols");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows
            .iter()
            .flat_map(|row| {
                assert_eq!(row.len(), c, "ragged rows");
                row.iter().copied()
            })
            .collect();
        Matrix::from_vec(r, c, data)
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.shape() != other.shape() {
            return Err(NumericsError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix { data, ..*self })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            data: self.data.iter().map(|x| x * s).collect(),
            ..*self
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Matrix exponential `Σ_k A^k / k!`.
///
/// Nilpotent inputs (every DAG adjacency matrix) are summed exactly up to the
/// vanishing power. Everything else goes through scaling and squaring with a
/// Taylor series on the scaled matrix, truncated once a term drops below `tol`.
pub fn mat_exp(a: &Matrix, tol: f64) -> Result<Matrix, NumericsError> {
    let n = a.rows;
    if a.rows != a.cols {
        return Err(NumericsError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if let Some(exact) = terminating_series(a) {
        return Ok(exact);
    }
    let norm = a.norm_one();
    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm > 0.5 {
        scaled_norm /= 2.0;
        squarings += 1;
    }
    let scaled = a.scale(0.5f64.powi(squarings as i32));
    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    // With ||X|| <= 1/2 the remainder after a term is at most that term's norm.
    let rel = tol.min(f64::EPSILON);
    for k in 1..=40 {
        term = term.matmul(&scaled)?.scale(1.0 / k as f64);
        sum = sum.add(&term)?;
        if term.norm_one() <= rel * sum.norm_one() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum)?;
    }
    Ok(sum)
}

fn terminating_series(a: &Matrix) -> Option<Matrix> {
    let n = a.rows;
    // A matrix whose sparsity pattern is acyclic is nilpotent: A^n = 0.
    if !pattern_is_acyclic(a) {
        return None;
    }
    let mut power = Matrix::identity(n);
    let mut sum = Matrix::identity(n);
    let mut factorial = 1.0;
    for k in 1..=n {
        power = power.matmul(a).ok()?;
        if power.is_zero() {
            break;
        }
        factorial *= k as f64;
        for (s, p) in sum.data.iter_mut().zip(&power.data) {
            *s += p / factorial;
        }
    }
    Some(sum)
}

fn pattern_is_acyclic(a: &Matrix) -> bool {
    let n = a.rows;
    let mut indegree = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if a[(i, j)] != 0.0 {
                indegree[j] += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&j| indegree[j] == 0).collect();
    let mut seen = 0;
    while let Some(i) = ready.pop() {
        seen += 1;
        for j in 0..n {
            if a[(i, j)] != 0.0 {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(j);
                }
            }
        }
    }
    seen == n
}

/// Row-wise softmax of `m / beta`, stabilised by subtracting each row's maximum.
pub fn softmax_rows(m: &Matrix, beta: f64) -> Result<Matrix, NumericsError> {
    if !(beta > 0.0) {
        return Err(NumericsError::NonPositiveBeta(beta));
    }
    let mut out = Matrix::zeros(m.rows, m.cols);
    for i in 0..m.rows {
        let row = m.row(i);
        let max = row
            .iter()
            .map(|x| x / beta)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (j, &x) in row.iter().enumerate() {
            let e = (x / beta - max).exp();
            out[(i, j)] = e;
            z += e;
        }
        for j in 0..m.cols {
            out[(i, j)] /= z;
        }
    }
    Ok(out)
}

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}
