//! Spectral solves with `-Δ_h` on the periodic lattice.
//!
//! The periodic stencil Laplacian is diagonal in the discrete Fourier basis
//! with eigenvalues `λ_k = Σ_d (4/h²) sin²(π k_d / n)`. Every operator here is
//! a per-mode multiplier applied between a forward and an inverse FFT, with
//! the constant mode pinned to zero.

use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{FilmError, Result};
use crate::field::CellField;
use crate::grid::Grid;
use crate::ops;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Default relative tolerance on the mean of inputs that must be mean-zero.
pub const DEFAULT_MEAN_TOL: f64 = 1e-10;

/// Coefficients of `L = a0 (-Δ_h)^{-1} + a1 I + a2 (-Δ_h)` acting on
/// mean-zero grid functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecondCoeffs {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl PrecondCoeffs {
    pub fn new(a0: f64, a1: f64, a2: f64) -> Result<Self> {
        let c = Self { a0, a1, a2 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.a0 > 0.0 && self.a2 > 0.0 && self.a1 >= 0.0 && self.a1.is_finite();
        if ok && self.a0.is_finite() && self.a2.is_finite() {
            Ok(())
        } else {
            Err(FilmError::InvalidCoefficients { a0: self.a0, a1: self.a1, a2: self.a2 })
        }
    }

    /// Symbol of `L` at eigenvalue `λ > 0` of `-Δ_h`.
    #[inline]
    pub fn symbol(&self, lambda: f64) -> f64 {
        self.a0 / lambda + self.a1 + self.a2 * lambda
    }
}

/// FFT-diagonalized inverse Laplacian and preconditioner solves.
///
/// Fields are transformed real-to-complex along axis 0, which keeps the
/// `n/2 + 1` nonnegative frequencies, and complex-to-complex along the
/// remaining axes.
#[derive(Clone)]
pub struct SpectralSolver {
    grid: Grid,
    eig: Vec<f64>,
    /// Eigenvalues in the half-spectrum layout.
    eig_half: Vec<f64>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    mean_tol: f64,
}

impl std::fmt::Debug for SpectralSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralSolver")
            .field("grid", &self.grid)
            .field("mean_tol", &self.mean_tol)
            .finish()
    }
}

impl SpectralSolver {
    pub fn new(grid: Grid) -> Self {
        let n = grid.n();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut real_planner = RealFftPlanner::new();
        let r2c = real_planner.plan_fft_forward(n);
        let c2r = real_planner.plan_fft_inverse(n);
        let eig = (0..grid.len())
            .map(|idx| ops::neg_lap_eigenvalue(&grid, grid.coords(idx)))
            .collect();
        let m0 = n / 2 + 1;
        let eig_half = (0..grid.len() / n * m0)
            .map(|k| {
                let (k0, rest) = (k % m0, k / m0);
                ops::neg_lap_eigenvalue(&grid, [k0, rest % n, rest / n])
            })
            .collect();
        Self { grid, eig, eig_half, r2c, c2r, forward, inverse, mean_tol: DEFAULT_MEAN_TOL }
    }

    /// Overrides the relative mean tolerance (default `1e-10`).
    pub fn with_mean_tol(mut self, tol: f64) -> Self {
        self.mean_tol = tol;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Eigenvalues of `-Δ_h` in flat mode order (same layout as fields).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig
    }

    /// Errors with `NonZeroMean` when `|mean f| > tol · ‖f‖∞ · |Ω|`.
    pub fn check_mean_zero(&self, f: &CellField) -> Result<()> {
        let mean = f.mean();
        let tol = self.mean_tol * ops::norm_linf(f) * self.grid.volume();
        if mean.abs() <= tol {
            Ok(())
        } else {
            Err(FilmError::NonZeroMean { mean, tol })
        }
    }

    /// `ψ = (-Δ_h)^{-1} f` with `mean ψ = 0`. `f` must be mean-zero.
    pub fn inv_neg_lap(&self, f: &CellField) -> Result<CellField> {
        self.check_same_grid(f)?;
        self.check_mean_zero(f)?;
        Ok(self.apply_symbol(f, |lam| 1.0 / lam))
    }

    /// Like [`Self::inv_neg_lap`], but silently projects out the mean of `f`.
    pub fn inv_neg_lap_projected(&self, f: &CellField) -> CellField {
        self.apply_symbol(f, |lam| 1.0 / lam)
    }

    /// `⟨f, g⟩_{-1,h} = ⟨f, (-Δ_h)^{-1} g⟩`.
    pub fn hminus1_inner(&self, f: &CellField, g: &CellField) -> Result<f64> {
        self.check_same_grid(f)?;
        self.check_mean_zero(f)?;
        let psi = self.inv_neg_lap(g)?;
        Ok(ops::inner_cell(f, &psi))
    }

    pub fn hminus1_norm(&self, f: &CellField) -> Result<f64> {
        Ok(self.hminus1_inner(f, f)?.max(0.0).sqrt())
    }

    /// `‖f - f̄‖_{-1,h}`, for callers that track the mean separately.
    pub fn hminus1_norm_projected(&self, f: &CellField) -> f64 {
        let f0 = f.minus_mean();
        let psi = self.inv_neg_lap_projected(&f0);
        ops::inner_cell(&f0, &psi).max(0.0).sqrt()
    }

    /// Solves `L[d] = r` on the mean-zero subspace.
    pub fn solve_preconditioner(&self, r: &CellField, c: PrecondCoeffs) -> Result<CellField> {
        c.validate()?;
        self.check_same_grid(r)?;
        self.check_mean_zero(r)?;
        Ok(self.solve_preconditioner_projected(r, c))
    }

    /// Like [`Self::solve_preconditioner`] without validation; projects `r`.
    pub fn solve_preconditioner_projected(&self, r: &CellField, c: PrecondCoeffs) -> CellField {
        self.apply_symbol(r, |lam| 1.0 / c.symbol(lam))
    }

    /// Applies `L` to a mean-zero field (the mean is projected out).
    pub fn apply_preconditioner(&self, u: &CellField, c: PrecondCoeffs) -> CellField {
        self.apply_symbol(u, |lam| c.symbol(lam))
    }

    /// Applies the Fourier multiplier `m(λ_k)` to every nonconstant mode and
    /// zeroes the constant mode.
    pub fn apply_symbol<M>(&self, f: &CellField, m: M) -> CellField
    where
        M: Fn(f64) -> f64 + Sync + Send,
    {
        let mut spec = self.forward_real(f.values());
        let scale = 1.0 / self.grid.len() as f64;
        let eig = &self.eig_half;
        let apply = |(k, z): (usize, &mut Complex64)| {
            *z = if k == 0 { Complex64::new(0.0, 0.0) } else { *z * (m(eig[k]) * scale) };
        };
        #[cfg(feature = "parallel")]
        spec.par_iter_mut().enumerate().with_min_len(4096).for_each(apply);
        #[cfg(not(feature = "parallel"))]
        spec.iter_mut().enumerate().for_each(apply);
        CellField::from_values(self.grid, self.inverse_real(spec)).expect("transform preserves length")
    }

    fn check_same_grid(&self, f: &CellField) -> Result<()> {
        self.grid.check_same(f.grid())
    }

    /// Unnormalized forward transform into the half-spectrum layout.
    fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let n = self.grid.n();
        let m0 = n / 2 + 1;
        let mut spec = vec![Complex64::new(0.0, 0.0); values.len() / n * m0];
        let r2c = &self.r2c;
        let row = |buf: &mut (Vec<f64>, Vec<Complex64>), (r, out): (usize, &mut [Complex64])| {
            buf.0.copy_from_slice(&values[r * n..(r + 1) * n]);
            r2c.process_with_scratch(&mut buf.0, out, &mut buf.1).expect("row lengths match the plan");
        };
        let init = || (vec![0.0; n], r2c.make_scratch_vec());
        #[cfg(feature = "parallel")]
        if values.len() >= 64 * n {
            spec.par_chunks_mut(m0).enumerate().for_each_init(init, row);
        } else {
            let mut buf = init();
            spec.chunks_mut(m0).enumerate().for_each(|item| row(&mut buf, item));
        }
        #[cfg(not(feature = "parallel"))]
        {
            let mut buf = init();
            spec.chunks_mut(m0).enumerate().for_each(|item| row(&mut buf, item));
        }
        for axis in 1..self.grid.dim() {
            self.fft_axis(&mut spec, axis, &self.forward);
        }
        spec
    }

    /// Unnormalized inverse of [`Self::forward_real`].
    fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        let n = self.grid.n();
        let m0 = n / 2 + 1;
        for axis in (1..self.grid.dim()).rev() {
            self.fft_axis(&mut spec, axis, &self.inverse);
        }
        let mut out = vec![0.0; spec.len() / m0 * n];
        let c2r = &self.c2r;
        let row = |scratch: &mut Vec<Complex64>, (line, out): (&mut [Complex64], &mut [f64])| {
            // these bins of a real row are real; drop the roundoff
            line[0].im = 0.0;
            if n.is_multiple_of(2) {
                line[n / 2].im = 0.0;
            }
            c2r.process_with_scratch(line, out, scratch).expect("row lengths match the plan");
        };
        #[cfg(feature = "parallel")]
        if out.len() >= 64 * n {
            spec.par_chunks_mut(m0).zip(out.par_chunks_mut(n)).for_each_init(|| c2r.make_scratch_vec(), row);
            return out;
        }
        let mut scratch = c2r.make_scratch_vec();
        spec.chunks_mut(m0).zip(out.chunks_mut(n)).for_each(|item| row(&mut scratch, item));
        out
    }

    /// Complex transform along `axis >= 1` of the half-spectrum array.
    fn fft_axis(&self, buf: &mut [Complex64], axis: usize, fft: &Arc<dyn Fft<f64>>) {
        let n = self.grid.n();
        let inner = (n / 2 + 1) * n.pow(axis as u32 - 1);
        let outer = buf.len() / (inner * n);
        // gather lines along `axis` into contiguous rows, transform, scatter back
        let mut lines = vec![Complex64::new(0.0, 0.0); buf.len()];
        for o in 0..outer {
            for a in 0..n {
                let src = (o * n + a) * inner;
                for (i, z) in buf[src..src + inner].iter().enumerate() {
                    lines[(o * inner + i) * n + a] = *z;
                }
            }
        }
        fft_lines(&mut lines, n, fft);
        for o in 0..outer {
            for a in 0..n {
                let dst = (o * n + a) * inner;
                for (i, z) in buf[dst..dst + inner].iter_mut().enumerate() {
                    *z = lines[(o * inner + i) * n + a];
                }
            }
        }
    }
}

/// Transforms consecutive length-`n` lines of `buf`.
fn fft_lines(buf: &mut [Complex64], n: usize, fft: &Arc<dyn Fft<f64>>) {
    let scratch_len = fft.get_inplace_scratch_len();
    #[cfg(feature = "parallel")]
    if buf.len() >= 64 * n {
        let per_task = n * 16;
        buf.par_chunks_mut(per_task).for_each_init(
            || vec![Complex64::new(0.0, 0.0); scratch_len],
            |scratch, chunk| fft.process_with_scratch(chunk, scratch),
        );
        return;
    }
    let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
    fft.process_with_scratch(buf, &mut scratch);
}
