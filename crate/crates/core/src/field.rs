use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{FilmError, Result};
use crate::grid::Grid;
use crate::par;

/// Periodic cell-centered grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    grid: Grid,
    values: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FilmError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at the cell centers.
    pub fn from_fn<F>(grid: Grid, f: F) -> Self
    where
        F: Fn([f64; 3]) -> f64 + Sync + Send,
    {
        Self { grid, values: par::collect_indexed(grid.len(), |i| f(grid.center(i))) }
    }

    /// Builds a field entry by entry from its flat index.
    pub fn from_index_fn<F>(grid: Grid, f: F) -> Self
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        Self { grid, values: par::collect_indexed(grid.len(), f) }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at integer coordinates, with periodic wrap.
    pub fn at(&self, coords: [i64; 3]) -> f64 {
        self.values[self.grid.index_wrapped(coords)]
    }

    pub fn map<F>(&self, f: F) -> CellField
    where
        F: Fn(f64) -> f64 + Sync + Send,
    {
        let v = &self.values;
        Self::from_index_fn(self.grid, |i| f(v[i]))
    }

    pub fn zip_map<F>(&self, other: &CellField, f: F) -> CellField
    where
        F: Fn(f64, f64) -> f64 + Sync + Send,
    {
        debug_assert_eq!(self.grid, other.grid);
        let (a, b) = (&self.values, &other.values);
        Self::from_index_fn(self.grid, |i| f(a[i], b[i]))
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &CellField) -> CellField {
        self.zip_map(other, |a, b| a + alpha * b)
    }

    pub fn scaled(&self, s: f64) -> CellField {
        self.map(|a| s * a)
    }

    /// `h^dim Σ u`.
    pub fn integral(&self) -> f64 {
        let v = &self.values;
        par::sum_indexed(v.len(), |i| v[i]) * self.grid.cell_volume()
    }

    /// Spatial average `⟨u, 1⟩ / |Ω|`.
    pub fn mean(&self) -> f64 {
        let v = &self.values;
        par::sum_indexed(v.len(), |i| v[i]) / v.len() as f64
    }

    /// Copy with the spatial mean removed.
    pub fn minus_mean(&self) -> CellField {
        let m = self.mean();
        self.map(|a| a - m)
    }

    /// Smallest entry and its flat index.
    pub fn min_with_index(&self) -> (f64, usize) {
        let v = &self.values;
        par::min_indexed(v.len(), |i| v[i])
    }

    pub fn min(&self) -> f64 {
        self.min_with_index().0
    }

    pub fn max(&self) -> f64 {
        let v = &self.values;
        -par::min_indexed(v.len(), |i| -v[i]).0
    }

    /// Errors with `NonPositiveField` unless every entry is strictly positive.
    pub fn ensure_positive(&self) -> Result<()> {
        let v = &self.values;
        // NaN fails the comparison, so it is caught by the slow path
        if v.iter().all(|&x| x > 0.0) {
            return Ok(());
        }
        let (key, index) = par::min_indexed(v.len(), |i| if v[i].is_nan() { f64::NEG_INFINITY } else { v[i] });
        if key > 0.0 {
            Ok(())
        } else {
            Err(FilmError::NonPositiveField { index, value: v[index] })
        }
    }

    /// Cyclic shift by integer offsets: `out(x) = self(x - shift)`.
    pub fn shifted(&self, shift: [i64; 3]) -> CellField {
        let g = self.grid;
        Self::from_index_fn(g, |i| {
            let c = g.coords(i);
            self.at([
                c[0] as i64 - shift[0],
                c[1] as i64 - shift[1],
                c[2] as i64 - shift[2],
            ])
        })
    }
}

impl Index<usize> for CellField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl IndexMut<usize> for CellField {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.values[i]
    }
}

impl Add<&CellField> for &CellField {
    type Output = CellField;
    fn add(self, rhs: &CellField) -> CellField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub<&CellField> for &CellField {
    type Output = CellField;
    fn sub(self, rhs: &CellField) -> CellField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<&CellField> for f64 {
    type Output = CellField;
    fn mul(self, rhs: &CellField) -> CellField {
        rhs.scaled(self)
    }
}

/// Face-centered vector field: component `d` lives on the faces normal to
/// axis `d`. Entry `idx` of component `d` is the face at `+1/2` from cell
/// `idx` along `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    grid: Grid,
    components: Vec<Vec<f64>>,
}

impl FaceField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, components: vec![vec![0.0; grid.len()]; grid.dim()] }
    }

    pub fn from_components(grid: Grid, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim() {
            return Err(FilmError::InvalidGrid(format!(
                "expected {} face components, got {}",
                grid.dim(),
                components.len()
            )));
        }
        for c in &components {
            if c.len() != grid.len() {
                return Err(FilmError::LengthMismatch { expected: grid.len(), got: c.len() });
            }
        }
        Ok(Self { grid, components })
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.components[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn scaled(&self, s: f64) -> FaceField {
        Self {
            grid: self.grid,
            components: self.components.iter().map(|c| c.iter().map(|v| s * v).collect()).collect(),
        }
    }

    pub fn axpy(&self, alpha: f64, other: &FaceField) -> FaceField {
        Self {
            grid: self.grid,
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + alpha * y).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_lookup() {
        let g = Grid::new(2, 4, 1.0).unwrap();
        let u = CellField::from_index_fn(g, |i| i as f64);
        for (i, j) in [(0i64, 0i64), (3, 1), (2, 3)] {
            let base = u.at([i, j, 0]);
            assert_eq!(u.at([i + 4, j, 0]), base);
            assert_eq!(u.at([i - 8, j + 4, 0]), base);
        }
    }

    #[test]
    fn positivity_check_reports_offender() {
        let g = Grid::new(1, 4, 1.0).unwrap();
        let u = CellField::from_values(g, vec![1.0, 2.0, 0.0, 3.0]).unwrap();
        match u.ensure_positive() {
            Err(FilmError::NonPositiveField { index, value }) => {
                assert_eq!(index, 2);
                assert_eq!(value, 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        let nan = CellField::from_values(g, vec![1.0, f64::NAN, 1.0, 1.0]).unwrap();
        assert!(nan.ensure_positive().is_err());
    }

    #[test]
    fn length_checked() {
        let g = Grid::new(2, 3, 1.0).unwrap();
        assert!(CellField::from_values(g, vec![0.0; 8]).is_err());
        assert!(FaceField::from_components(g, vec![vec![0.0; 9]]).is_err());
    }

    #[test]
    fn mean_and_integral() {
        let g = Grid::new(2, 4, 2.0).unwrap();
        let one = CellField::constant(g, 1.0);
        assert_eq!(one.integral(), 4.0);
        assert_eq!(one.mean(), 1.0);
        let u = CellField::from_index_fn(g, |i| i as f64);
        assert!(u.minus_mean().mean().abs() < 1e-15);
    }
}
