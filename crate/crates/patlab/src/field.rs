//! Scalar, complex and symmetric-tensor fields on a [`GridSpec`].
//!
//! Tensor fields store the six independent components of a symmetric 3x3
//! matrix per cell in the order `[xx, yy, zz, xy, xz, yz]`, so symmetry is
//! exact by construction. Ellipticity is checked through the closed-form
//! eigenvalues of a symmetric 3x3 matrix.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::parallel;
use num_complex::Complex64;

/// Real scalar field: one value per cell.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        ScalarField { grid, values: vec![0.0; grid.cell_count()] }
    }

    pub fn constant(grid: GridSpec, v: f64) -> Self {
        ScalarField { grid, values: vec![v; grid.cell_count()] }
    }

    /// Sample `f` at every cell center.
    pub fn from_fn<F>(grid: GridSpec, f: F) -> Self
    where
        F: Fn([f64; 3]) -> f64 + Sync,
    {
        let mut values = vec![0.0; grid.cell_count()];
        parallel::fill(&mut values, |c| f(grid.center(c)));
        ScalarField { grid, values }
    }

    /// Discrete L2 norm over the whole grid, `sqrt(sum v^2 h^dim)`.
    pub fn norm_l2(&self) -> f64 {
        (parallel::sum_indexed(self.values.len(), |i| self.values[i] * self.values[i])
            * self.grid.cell_volume())
        .sqrt()
    }

    /// Discrete L2 norm over a cell subset.
    pub fn norm_l2_on(&self, cells: &[usize]) -> f64 {
        (parallel::sum_indexed(cells.len(), |i| {
            let v = self.values[cells[i]];
            v * v
        }) * self.grid.cell_volume())
        .sqrt()
    }

    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ScalarField) {
        assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    /// Indices of cells carrying a nonzero value.
    pub fn support(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&c| self.values[c] != 0.0).collect()
    }
}

/// Complex scalar field (Laplace-transformed data, transmission pairs).
#[derive(Clone, Debug)]
pub struct ComplexField {
    pub grid: GridSpec,
    pub values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: GridSpec) -> Self {
        ComplexField { grid, values: vec![Complex64::new(0.0, 0.0); grid.cell_count()] }
    }

    pub fn norm_l2(&self) -> f64 {
        (parallel::sum_indexed(self.values.len(), |i| self.values[i].norm_sqr())
            * self.grid.cell_volume())
        .sqrt()
    }

    pub fn norm_l2_on(&self, cells: &[usize]) -> f64 {
        (parallel::sum_indexed(cells.len(), |i| self.values[cells[i]].norm_sqr())
            * self.grid.cell_volume())
        .sqrt()
    }

    /// Real and imaginary parts as scalar fields.
    pub fn split(&self) -> (ScalarField, ScalarField) {
        let re = ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|z| z.re).collect(),
        };
        let im = ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|z| z.im).collect(),
        };
        (re, im)
    }
}

/// Symmetric-tensor field: per-cell `[xx, yy, zz, xy, xz, yz]`.
#[derive(Clone, Debug)]
pub struct TensorField {
    pub grid: GridSpec,
    pub comps: Vec<[f64; 6]>,
}

pub const T_XX: usize = 0;
pub const T_YY: usize = 1;
pub const T_ZZ: usize = 2;
pub const T_XY: usize = 3;
pub const T_XZ: usize = 4;
pub const T_YZ: usize = 5;

/// Component index of the diagonal entry for `axis`.
#[inline]
pub fn diag_comp(axis: usize) -> usize {
    axis
}

/// Component index of the off-diagonal entry coupling `axis_a != axis_b`.
#[inline]
pub fn off_comp(axis_a: usize, axis_b: usize) -> usize {
    match axis_a + axis_b {
        1 => T_XY,
        2 => T_XZ,
        3 => T_YZ,
        _ => unreachable!("off_comp needs two distinct axes"),
    }
}

impl TensorField {
    pub fn identity(grid: GridSpec) -> Self {
        TensorField {
            grid,
            comps: vec![[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]; grid.cell_count()],
        }
    }

    pub fn from_fn<F>(grid: GridSpec, f: F) -> Self
    where
        F: Fn([f64; 3]) -> [f64; 6] + Sync,
    {
        let comps: Vec<[f64; 6]> = (0..grid.cell_count()).map(|c| f(grid.center(c))).collect();
        TensorField { grid, comps }
    }

    #[inline]
    pub fn at(&self, cell: usize) -> &[f64; 6] {
        &self.comps[cell]
    }

    /// True when every off-diagonal component vanishes (7-point stencil path).
    pub fn is_diagonal(&self) -> bool {
        self.comps.iter().all(|c| c[T_XY] == 0.0 && c[T_XZ] == 0.0 && c[T_YZ] == 0.0)
    }

    /// True when every cell is exactly the identity.
    pub fn is_identity(&self) -> bool {
        self.comps
            .iter()
            .all(|c| c[..3] == [1.0, 1.0, 1.0] && c[3..] == [0.0, 0.0, 0.0])
    }

    /// Smallest eigenvalue over all cells: the discrete ellipticity constant.
    pub fn ellipticity_floor(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| sym3_eigenvalues(*c)[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Verify the tensor is exactly the identity on every cell with center
    /// outside radius `r`.
    pub fn identity_outside(&self, r: f64) -> bool {
        (0..self.grid.cell_count()).all(|cell| {
            self.grid.radius(cell) <= r || {
                let c = &self.comps[cell];
                c[..3] == [1.0, 1.0, 1.0] && c[3..] == [0.0, 0.0, 0.0]
            }
        })
    }
}

/// Eigenvalues of a symmetric 3x3 matrix `[xx, yy, zz, xy, xz, yz]`, ascending.
///
/// Trigonometric closed form: with `q = tr/3`, `p = sqrt(sum (a_ii-q)^2/6 +
/// sum a_ij^2/3)`, the eigenvalues are `q + 2 p cos(phi + 2 pi k / 3)` where
/// `3 phi = acos(det((A - qI)/p) / 2)`.
pub fn sym3_eigenvalues(m: [f64; 6]) -> [f64; 3] {
    let [xx, yy, zz, xy, xz, yz] = m;
    let p1 = xy * xy + xz * xz + yz * yz;
    if p1 == 0.0 {
        let mut d = [xx, yy, zz];
        d.sort_by(f64::total_cmp);
        return d;
    }
    let q = (xx + yy + zz) / 3.0;
    let p2 = (xx - q).powi(2) + (yy - q).powi(2) + (zz - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = [
        (xx - q) / p,
        (yy - q) / p,
        (zz - q) / p,
        xy / p,
        xz / p,
        yz / p,
    ];
    let det_b = b[0] * (b[1] * b[2] - b[5] * b[5]) - b[3] * (b[3] * b[2] - b[5] * b[4])
        + b[4] * (b[3] * b[5] - b[1] * b[4]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    // phi lies in [0, pi/3]: cos(phi) gives the largest root and
    // cos(phi + 2 pi / 3) the smallest.
    let e_max = q + 2.0 * p * phi.cos();
    let e_min = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let e_mid = 3.0 * q - e_max - e_min;
    [e_min, e_mid, e_max]
}

/// Linear interpolation helpers for radial fields sampled at `(i + 1/2) h`.
///
/// Quadratic (three-point) interpolation of `values` at radius `r`; used for
/// traces of the radial reduction and for radial-versus-3d comparisons.
pub fn radial_interp(grid: &GridSpec, values: &[f64], r: f64) -> f64 {
    debug_assert_eq!(grid.dim, 1);
    let x = r / grid.h - 0.5; // fractional cell index
    let n = grid.n;
    let i1 = (x.round() as i64).clamp(1, n as i64 - 2) as usize;
    let t = x - i1 as f64;
    let (a, b, c) = (values[i1 - 1], values[i1], values[i1 + 1]);
    // Newton form on nodes -1, 0, +1.
    b + t * 0.5 * (c - a) + t * t * 0.5 * (c - 2.0 * b + a)
}

/// Error if the support of `f` pokes outside Omega.
pub fn check_support_in_omega(f: &ScalarField) -> Result<()> {
    for c in 0..f.grid.cell_count() {
        if f.values[c] != 0.0 && !f.grid.inside_omega(c) {
            return Err(Error::InvalidInitialData(format!(
                "initial data is nonzero at radius {:.4}, outside Omega (r_omega = {})",
                f.grid.radius(c),
                f.grid.r_omega
            )));
        }
    }
    Ok(())
}
