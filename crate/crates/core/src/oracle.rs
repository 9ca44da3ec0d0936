//! Dense-matrix reference implementations for cross-checking the stencil and
//! spectral code on tiny grids. Matrices are assembled entry by entry from
//! the stencil definitions and solved with Gaussian elimination.

use crate::error::{FilmError, Result};
use crate::field::{CellField, FaceField};
use crate::grid::Grid;
use crate::poisson::PrecondCoeffs;

/// Largest points-per-axis accepted by the dense oracle.
pub const MAX_N: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &DenseMatrix, beta: f64) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| alpha * a + beta * b).collect(),
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.data[i * self.cols..(i + 1) * self.cols].iter().sum()
    }

    /// Solves `self x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&p, &q| a[p * n + col].abs().total_cmp(&a[q * n + col].abs()))
                .expect("nonempty range");
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                x.swap(col, piv);
            }
            let d = a[col * n + col];
            assert!(d != 0.0, "singular matrix");
            for row in col + 1..n {
                let factor = a[row * n + col] / d;
                if factor == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[row * n + j] -= factor * a[col * n + j];
                }
                x[row] -= factor * x[col];
            }
        }
        for row in (0..n).rev() {
            let mut s = x[row];
            for j in row + 1..n {
                s -= a[row * n + j] * x[j];
            }
            x[row] = s / a[row * n + row];
        }
        x
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

fn check_size(grid: &Grid) -> Result<()> {
    if grid.n() > MAX_N {
        Err(FilmError::GridTooLarge { max: MAX_N.pow(grid.dim() as u32), got: grid.len() })
    } else {
        Ok(())
    }
}

fn shifted(grid: &Grid, idx: usize, axis: usize, offset: i64) -> usize {
    let c = grid.coords(idx);
    let mut ci = [c[0] as i64, c[1] as i64, c[2] as i64];
    ci[axis] += offset;
    grid.index_wrapped(ci)
}

/// Matrix of `D_axis`: cells to faces on `axis`.
pub fn grad_matrix(grid: &Grid, axis: usize) -> Result<DenseMatrix> {
    check_size(grid)?;
    let n = grid.len();
    let mut m = DenseMatrix::zeros(n, n);
    let inv_h = 1.0 / grid.h();
    for i in 0..n {
        m[(i, shifted(grid, i, axis, 1))] += inv_h;
        m[(i, i)] -= inv_h;
    }
    Ok(m)
}

/// Matrix of `d_axis`: faces on `axis` to cells.
pub fn div_matrix(grid: &Grid, axis: usize) -> Result<DenseMatrix> {
    check_size(grid)?;
    let n = grid.len();
    let mut m = DenseMatrix::zeros(n, n);
    let inv_h = 1.0 / grid.h();
    for i in 0..n {
        m[(i, i)] += inv_h;
        m[(i, shifted(grid, i, axis, -1))] -= inv_h;
    }
    Ok(m)
}

/// Matrix of `-Δ_h` from the `2 dim + 1` point stencil.
pub fn neg_lap_matrix(grid: &Grid) -> Result<DenseMatrix> {
    check_size(grid)?;
    let n = grid.len();
    let mut m = DenseMatrix::zeros(n, n);
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    for i in 0..n {
        for axis in 0..grid.dim() {
            m[(i, i)] += 2.0 * inv_h2;
            m[(i, shifted(grid, i, axis, 1))] -= inv_h2;
            m[(i, shifted(grid, i, axis, -1))] -= inv_h2;
        }
    }
    Ok(m)
}

pub fn apply_grad(u: &CellField) -> Result<FaceField> {
    let g = *u.grid();
    let comps = (0..g.dim())
        .map(|axis| Ok(grad_matrix(&g, axis)?.matvec(u.values())))
        .collect::<Result<Vec<_>>>()?;
    FaceField::from_components(g, comps)
}

pub fn apply_div(f: &FaceField) -> Result<CellField> {
    let g = *f.grid();
    let mut out = vec![0.0; g.len()];
    for axis in 0..g.dim() {
        for (o, v) in out.iter_mut().zip(div_matrix(&g, axis)?.matvec(f.component(axis))) {
            *o += v;
        }
    }
    CellField::from_values(g, out)
}

pub fn apply_lap(u: &CellField) -> Result<CellField> {
    let g = *u.grid();
    let v = neg_lap_matrix(&g)?.matvec(u.values());
    CellField::from_values(g, v.into_iter().map(|x| -x).collect())
}

/// Minimum-norm solution of `-Δ_h ψ = f` through the bordered system
/// `[A 1; 1ᵀ 0] [ψ; c] = [f; 0]`.
pub fn solve_neg_lap(f: &CellField) -> Result<CellField> {
    let g = *f.grid();
    let a = neg_lap_matrix(&g)?;
    let n = g.len();
    let mut b = DenseMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = a[(i, j)];
        }
        b[(i, n)] = 1.0;
        b[(n, i)] = 1.0;
    }
    let mut rhs = f.values().to_vec();
    rhs.push(0.0);
    let mut x = b.solve(&rhs);
    x.truncate(n);
    CellField::from_values(g, x)
}

/// Mean-zero solution of `(a0 A^+ + a1 I + a2 A) d = r` with `A = -Δ_h`.
/// Multiplying through by `A` gives the nonsingular system
/// `(a0 I + a1 A + a2 A²) d = A r`.
pub fn solve_precond(r: &CellField, c: PrecondCoeffs) -> Result<CellField> {
    c.validate()?;
    let g = *r.grid();
    let a = neg_lap_matrix(&g)?;
    let a2 = a.matmul(&a);
    let m = DenseMatrix::identity(g.len()).combine(c.a0, &a, c.a1).combine(1.0, &a2, c.a2);
    let rhs = a.matvec(r.values());
    CellField::from_values(g, m.solve(&rhs))
}
