//! Staggered-grid calculus on periodic lattices: center-to-face differences
//! and averages, face-to-center differences and averages, the discrete
//! Laplacian, inner products and norms.
//!
//! All stencils use modular neighbour lookup; there are no ghost layers.
//! Sums over axes are accumulated in axis order 0, 1, 2.

use crate::field::{CellField, FaceField};
use crate::grid::Grid;
use crate::par;

/// Periodic neighbours of one cell, by axis. Entries for unused axes are
/// meaningless.
#[derive(Clone, Copy)]
struct Neighbours {
    plus: [usize; 3],
    minus: [usize; 3],
}

/// `out[i] = f(i, neighbours of i)`, walking rows along axis 0 so that the
/// wrap-around logic runs once per row instead of once per cell.
fn fill_stencil<F>(g: &Grid, out: &mut [f64], f: F)
where
    F: Fn(usize, &Neighbours) -> f64 + Sync + Send,
{
    let n = g.n();
    let (n2, n3) = (n * n, n * n * n);
    par::fill_rows(out, n, |r, row| {
        let (c1, c2) = (r % n, r / n);
        let base = r * n;
        let p1 = if c1 + 1 == n { base + n - n2 } else { base + n };
        let m1 = if c1 == 0 { base + n2 - n } else { base - n };
        let p2 = if c2 + 1 == n { base + n2 - n3 } else { base + n2 };
        let m2 = if c2 == 0 { base + n3 - n2 } else { base - n2 };
        for (i0, slot) in row.iter_mut().enumerate() {
            let ip = if i0 + 1 == n { 0 } else { i0 + 1 };
            let im = if i0 == 0 { n - 1 } else { i0 - 1 };
            let nb = Neighbours {
                plus: [base + ip, p1.wrapping_add(i0), p2.wrapping_add(i0)],
                minus: [base + im, m1.wrapping_add(i0), m2.wrapping_add(i0)],
            };
            *slot = f(base + i0, &nb);
        }
    });
}

/// Center-to-face difference along every axis:
/// `(D_d u)_{i+1/2} = (u_{i+1} - u_i) / h`.
pub fn grad(u: &CellField) -> FaceField {
    let g = *u.grid();
    let inv_h = 1.0 / g.h();
    let v = u.values();
    let mut out = FaceField::zeros(g);
    for axis in 0..g.dim() {
        fill_stencil(&g, out.component_mut(axis), |i, nb| (v[nb.plus[axis]] - v[i]) * inv_h);
    }
    out
}

/// Face-to-center difference summed over axes:
/// `(d_d f)_i = (f_{i+1/2} - f_{i-1/2}) / h`.
pub fn div(f: &FaceField) -> CellField {
    let g = *f.grid();
    let inv_h = 1.0 / g.h();
    let mut out = CellField::zeros(g);
    fill_stencil(&g, out.values_mut(), |i, nb| {
        let mut acc = 0.0;
        for axis in 0..g.dim() {
            let c = f.component(axis);
            acc += (c[i] - c[nb.minus[axis]]) * inv_h;
        }
        acc
    });
    out
}

/// Standard `2 dim + 1` point periodic Laplacian.
pub fn lap(u: &CellField) -> CellField {
    let g = *u.grid();
    let inv_h = 1.0 / g.h();
    let v = u.values();
    let mut out = CellField::zeros(g);
    fill_stencil(&g, out.values_mut(), |i, nb| {
        let vi = v[i];
        let mut acc = 0.0;
        for axis in 0..g.dim() {
            // written as a difference of face gradients so that lap == div(grad)
            let fp = (v[nb.plus[axis]] - vi) * inv_h;
            let fm = (vi - v[nb.minus[axis]]) * inv_h;
            acc += (fp - fm) * inv_h;
        }
        acc
    });
    out
}

/// Center-to-face arithmetic mean `(u_{i+1} + u_i) / 2` along every axis.
pub fn face_avg(u: &CellField) -> FaceField {
    let g = *u.grid();
    let v = u.values();
    let mut out = FaceField::zeros(g);
    for axis in 0..g.dim() {
        fill_stencil(&g, out.component_mut(axis), |i, nb| 0.5 * (v[nb.plus[axis]] + v[i]));
    }
    out
}

/// Face-to-center arithmetic mean of one face component.
pub fn cell_avg_axis(f: &FaceField, axis: usize) -> CellField {
    let g = *f.grid();
    let c = f.component(axis);
    CellField::from_index_fn(g, |i| 0.5 * (c[i] + c[g.minus(i, axis)]))
}

/// Face-to-center mean averaged over the axes, so that constants map to
/// themselves.
pub fn cell_avg(f: &FaceField) -> CellField {
    let g = *f.grid();
    let dim = g.dim() as f64;
    CellField::from_index_fn(g, |i| {
        let mut acc = 0.0;
        for axis in 0..g.dim() {
            let c = f.component(axis);
            acc += 0.5 * (c[i] + c[g.minus(i, axis)]);
        }
        acc / dim
    })
}

/// `⟨u, v⟩ = h^dim Σ u v`.
pub fn inner_cell(u: &CellField, v: &CellField) -> f64 {
    debug_assert_eq!(u.grid(), v.grid());
    let (a, b) = (u.values(), v.values());
    par::sum_indexed(a.len(), |i| a[i] * b[i]) * u.grid().cell_volume()
}

/// `[f, g] = Σ_d ⟨a_d(f_d g_d), 1⟩`, using the face-to-center average of
/// the face product. On a periodic lattice the average only relabels the
/// faces, so this equals `h^dim Σ_d Σ f_d g_d` (see [`inner_face_direct`]).
pub fn inner_face(f: &FaceField, g: &FaceField) -> f64 {
    let grid = *f.grid();
    let mut acc = 0.0;
    for axis in 0..grid.dim() {
        let (a, b) = (f.component(axis), g.component(axis));
        acc += par::sum_indexed(grid.len(), |i| {
            let m = grid.minus(i, axis);
            0.5 * (a[i] * b[i] + a[m] * b[m])
        });
    }
    acc * grid.cell_volume()
}

/// Plain weighted face sum `h^dim Σ_d Σ f_d g_d`.
pub fn inner_face_direct(f: &FaceField, g: &FaceField) -> f64 {
    let grid = *f.grid();
    let mut acc = 0.0;
    for axis in 0..grid.dim() {
        let (a, b) = (f.component(axis), g.component(axis));
        acc += par::sum_indexed(a.len(), |i| a[i] * b[i]);
    }
    acc * grid.cell_volume()
}

/// `‖u‖_p = ⟨|u|^p, 1⟩^{1/p}` for `p ≥ 1`.
pub fn norm_lp(u: &CellField, p: f64) -> f64 {
    assert!(p >= 1.0, "p must be at least 1");
    let v = u.values();
    let s = if p == 2.0 {
        par::sum_indexed(v.len(), |i| v[i] * v[i])
    } else {
        par::sum_indexed(v.len(), |i| v[i].abs().powf(p))
    };
    (s * u.grid().cell_volume()).powf(1.0 / p)
}

pub fn norm_l2(u: &CellField) -> f64 {
    inner_cell(u, u).sqrt()
}

pub fn norm_linf(u: &CellField) -> f64 {
    let v = u.values();
    -par::min_indexed(v.len(), |i| -v[i].abs()).0
}

/// `‖∇_h u‖_2`.
pub fn grad_norm(u: &CellField) -> f64 {
    let gr = grad(u);
    inner_face_direct(&gr, &gr).sqrt()
}

/// `‖u‖_{H^1_h} = (‖u‖_2^2 + ‖∇_h u‖_2^2)^{1/2}`.
pub fn norm_h1(u: &CellField) -> f64 {
    let g = grad_norm(u);
    (inner_cell(u, u) + g * g).sqrt()
}

/// Bundle of the usual norms of a cell field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub h1: f64,
    pub mean: f64,
}

pub fn norms(u: &CellField) -> Norms {
    Norms {
        l1: norm_lp(u, 1.0),
        l2: norm_l2(u),
        linf: norm_linf(u),
        h1: norm_h1(u),
        mean: u.mean(),
    }
}

/// Eigenvalue of `-Δ_h` for the Fourier mode with integer wavevector `k`:
/// `Σ_d (4 / h^2) sin^2(π k_d / n)`.
pub fn neg_lap_eigenvalue(grid: &Grid, k: [usize; 3]) -> f64 {
    let h2 = grid.h() * grid.h();
    let n = grid.n() as f64;
    (0..grid.dim())
        .map(|d| {
            let s = (std::f64::consts::PI * k[d] as f64 / n).sin();
            4.0 / h2 * s * s
        })
        .sum()
}

/// Real Fourier mode `Π_d cos(2π k_d x_d / L + phase_d)` sampled at cell centers.
pub fn fourier_mode(grid: Grid, k: [usize; 3], phase: [f64; 3]) -> CellField {
    let l = grid.l();
    let dim = grid.dim();
    CellField::from_fn(grid, move |x| {
        (0..dim)
            .map(|d| (2.0 * std::f64::consts::PI * k[d] as f64 * x[d] / l + phase[d]).cos())
            .product()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_face, random_field};

    fn g1(n: usize, l: f64) -> Grid {
        Grid::new(1, n, l).unwrap()
    }

    #[test]
    fn row_walk_neighbours_match_grid_lookup() {
        for (dim, n) in [(1, 5), (2, 2), (2, 7), (3, 3), (3, 4)] {
            let g = Grid::new(dim, n, 1.0).unwrap();
            let mut seen = vec![0.0; g.len()];
            for axis in 0..dim {
                fill_stencil(&g, &mut seen, |i, nb| {
                    assert_eq!(nb.plus[axis], g.plus(i, axis));
                    assert_eq!(nb.minus[axis], g.minus(i, axis));
                    i as f64
                });
            }
            assert!(seen.iter().enumerate().all(|(i, &v)| v == i as f64));
        }
    }

    #[test]
    fn grad_of_alternating_1d() {
        let g = g1(4, 1.0);
        let u = CellField::from_values(g, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(grad(&u).component(0), &[4.0, -4.0, 4.0, -4.0]);
        assert_eq!(face_avg(&u).component(0), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn constants_are_annihilated() {
        for dim in 1..=3 {
            let g = Grid::new(dim, 5, 2.0).unwrap();
            let c = CellField::constant(g, 3.25);
            assert!(grad(&c).components().iter().flatten().all(|&v| v == 0.0));
            assert!(lap(&c).values().iter().all(|&v| v == 0.0));
            assert!(div(&FaceField::zeros(g)).values().iter().all(|&v| v == 0.0));
            let fa = face_avg(&c);
            assert!(fa.components().iter().flatten().all(|&v| v == 3.25));
            assert!(cell_avg(&fa).values().iter().all(|&v| (v - 3.25).abs() < 1e-15));
        }
    }

    #[test]
    fn lap_is_div_grad() {
        for dim in 1..=3 {
            let g = Grid::new(dim, 6, 1.3).unwrap();
            let u = random_field(g, 11 + dim as u64, -1.0, 1.0);
            let a = lap(&u);
            let b = div(&grad(&u));
            let scale = norm_linf(&a);
            for i in 0..g.len() {
                assert!((a[i] - b[i]).abs() <= 1e-14 * scale);
            }
        }
    }

    #[test]
    fn fourier_mode_eigenvalue() {
        let g = Grid::new(2, 16, 2.0).unwrap();
        let k = [3, 5, 0];
        let u = fourier_mode(g, k, [0.3, -0.7, 0.0]);
        let lam = neg_lap_eigenvalue(&g, k);
        let lu = lap(&u);
        for i in 0..g.len() {
            assert!((lu[i] + lam * u[i]).abs() < 1e-11 * lam);
        }
        // ‖∇u‖ = sqrt(λ) ‖u‖
        let rel = (grad_norm(&u) - lam.sqrt() * norm_l2(&u)).abs() / (lam.sqrt() * norm_l2(&u));
        assert!(rel < 1e-12, "{rel}");
    }

    #[test]
    fn unit_field_norms() {
        let g = Grid::new(2, 8, 3.0).unwrap();
        let one = CellField::constant(g, 1.0);
        assert!((inner_cell(&one, &one) - 9.0).abs() < 1e-13);
        let n = norms(&one);
        assert!((n.l2 - 3.0).abs() < 1e-14);
        assert_eq!(n.mean, 1.0);
        assert!((n.h1 - 3.0).abs() < 1e-14);
        let u = CellField::from_values(g1(2, 1.0), vec![-3.0, 2.0]).unwrap();
        assert_eq!(norm_linf(&u), 3.0);
        assert!((norm_lp(&u, 1.0) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn face_inner_reduces_to_weighted_sum() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let f = random_face(g, 1);
        let h = random_face(g, 2);
        let a = inner_face(&f, &h);
        // direct oracle: h^2 times the sum over both axes, written out
        let mut s = 0.0;
        for axis in 0..2 {
            for i in 0..g.len() {
                s += f.component(axis)[i] * h.component(axis)[i];
            }
        }
        let b = s * g.h() * g.h();
        assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        assert!(inner_face(&f, &f) >= 0.0);
    }

    #[test]
    fn inner_cell_matches_compensated_sum() {
        let g = Grid::new(2, 8, 1.7).unwrap();
        let u = random_field(g, 5, -2.0, 2.0);
        let v = random_field(g, 6, -2.0, 2.0);
        // Neumaier summation as an extended-precision stand-in
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for i in 0..g.len() {
            let x = u[i] * v[i];
            let t = sum + x;
            if sum.abs() >= x.abs() {
                comp += (sum - t) + x;
            } else {
                comp += (x - t) + sum;
            }
            sum = t;
        }
        let exact = (sum + comp) * g.cell_volume();
        let got = inner_cell(&u, &v);
        assert!((got - exact).abs() <= 1e-14 * exact.abs().max(1e-300));
    }

    #[test]
    fn summation_by_parts_is_exact() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let u = random_field(g, 3, -1.0, 1.0);
        let gu = grad(&u);
        let lhs = inner_face(&gu, &gu);
        let rhs = -inner_cell(&u, &lap(&u));
        assert!((lhs - rhs).abs() < 1e-13 * lhs.max(1.0));
    }
}
