use crate::error::{FilmError, Result};

/// Uniform periodic cell-centered lattice on `(0, L)^dim`.
///
/// Cells are stored row-major with the x index fastest: the flat index of
/// cell `(i, j, k)` is `i + n * (j + n * k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    l: f64,
    h: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, l: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(FilmError::InvalidGrid(format!("dim must be 1, 2 or 3, got {dim}")));
        }
        if n < 2 {
            return Err(FilmError::InvalidGrid(format!("need n >= 2, got {n}")));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(FilmError::InvalidGrid(format!("domain length must be positive, got {l}")));
        }
        Ok(Self { dim, n, l, h: l / n as f64 })
    }

    /// Unit square (or cube) with `n` cells per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, n, 1.0)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn l(&self) -> f64 {
        self.l
    }

    /// Number of cells, `n^dim`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// `|Ω| = L^dim`.
    pub fn volume(&self) -> f64 {
        self.l.powi(self.dim as i32)
    }

    /// Quadrature weight `h^dim` of one cell.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Flat-index stride of `axis`.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow(axis as u32)
    }

    /// Per-axis integer coordinates of a flat index (unused axes are 0).
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let mut c = [0; 3];
        let mut rem = idx;
        for slot in c.iter_mut().take(self.dim) {
            *slot = rem % self.n;
            rem /= self.n;
        }
        c
    }

    /// Flat index of integer coordinates, wrapped periodically.
    pub fn index_wrapped(&self, coords: [i64; 3]) -> usize {
        let n = self.n as i64;
        let mut idx = 0usize;
        for axis in (0..self.dim).rev() {
            idx = idx * self.n + coords[axis].rem_euclid(n) as usize;
        }
        idx
    }

    /// Physical position of the cell center, `(i + 1/2) h` per axis.
    pub fn center(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = (c[axis] as f64 + 0.5) * self.h;
        }
        x
    }

    /// Flat index of the periodic neighbour of `idx` at offset `+1` along `axis`.
    #[inline]
    pub fn plus(&self, idx: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        let c = (idx / s) % self.n;
        if c + 1 == self.n {
            idx + s - self.n * s
        } else {
            idx + s
        }
    }

    /// Flat index of the periodic neighbour of `idx` at offset `-1` along `axis`.
    #[inline]
    pub fn minus(&self, idx: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        let c = (idx / s) % self.n;
        if c == 0 {
            idx + self.n * s - s
        } else {
            idx - s
        }
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(FilmError::GridMismatch)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_times_n_is_length() {
        for &(n, l) in &[(8usize, 1.0), (128, 12.8), (96, 1.0), (7, 3.3)] {
            let g = Grid::new(2, n, l).unwrap();
            assert!((g.h() * n as f64 - l).abs() <= 4.0 * f64::EPSILON * l);
        }
    }

    #[test]
    fn rejects_bad_descriptors() {
        assert!(Grid::new(0, 8, 1.0).is_err());
        assert!(Grid::new(4, 8, 1.0).is_err());
        assert!(Grid::new(2, 1, 1.0).is_err());
        assert!(Grid::new(2, 8, -1.0).is_err());
        assert!(Grid::new(2, 8, f64::NAN).is_err());
    }

    #[test]
    fn neighbours_wrap() {
        let g = Grid::new(2, 4, 1.0).unwrap();
        assert_eq!(g.plus(3, 0), 0);
        assert_eq!(g.minus(0, 0), 3);
        assert_eq!(g.plus(12, 1), 0);
        assert_eq!(g.minus(1, 1), 13);
        assert_eq!(g.index_wrapped([-1, 5, 0]), 3 + 4);
        for idx in 0..g.len() {
            for axis in 0..2 {
                assert_eq!(g.minus(g.plus(idx, axis), axis), idx);
            }
            let c = g.coords(idx);
            assert_eq!(g.index_wrapped([c[0] as i64, c[1] as i64, 0]), idx);
        }
    }

    #[test]
    fn centers_are_offset_by_half_cell() {
        let g = Grid::new(3, 4, 2.0).unwrap();
        assert_eq!(g.center(0), [0.25, 0.25, 0.25]);
        assert_eq!(g.center(g.len() - 1), [1.75, 1.75, 1.75]);
        assert_eq!(g.volume(), 8.0);
        assert_eq!(g.cell_volume(), 0.125);
    }
}
