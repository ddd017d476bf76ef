//! Discretization of the elliptic principal part
//! `A u = -sum_ij d_i(a_ij d_j u)` and the solvers built on it.
//!
//! The diagonal part uses a conservative 7-point flux stencil with
//! harmonic-mean face coefficients; off-diagonal tensor entries use nested
//! central differences `-D_i^c(a_ij D_j^c u)`. Both pieces are exactly
//! symmetric, so the discrete operator inherits the self-adjointness the
//! analysis relies on, and the flux part is a weighted graph Laplacian
//! (positive semidefinite, positive definite under Dirichlet masking).
//!
//! [`BallOperator`] restricts the operator to the cells inside a sphere with
//! Dirichlet conditions *on the sphere itself*: boundary-crossing legs are
//! shortened to the exact sphere crossing (transmissibility `a / (theta h^2)`
//! with `theta h` the cut length). The cut legs only touch the diagonal, so
//! symmetry is preserved, and they restore second-order accuracy of Dirichlet
//! eigenvalues that plain staircase masking (first order) would lose.

use crate::error::{Error, Result};
use crate::field::{diag_comp, ScalarField};
use crate::grid::GridSpec;
use crate::medium::MediumSpec;
use crate::parallel;
use crate::solver::{solve_cg, LinearOp, SolveReport};

/// `integral over one grid cell of 1/(4 pi |y - x_c|) dy = SELF_CELL * h^2`
/// with `x_c` the cell center: the self-interaction weight of the Newtonian
/// kernel under midpoint quadrature. Computed by the shell-decomposition
/// quadrature in this module's tests, which re-derives it to 13 digits.
pub const SELF_CELL: f64 = 0.189_400_538_709_237_1;

/// `integral over the unit cube [-1/2,1/2]^3 of |y|^-1 dy`; equals
/// `4 pi * SELF_CELL`. Kept as an independent frozen value for the oracle.
pub const UNIT_CUBE_KERNEL_INTEGRAL: f64 = 2.380_077_363_979_554;

#[inline]
fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Unordered pair slot for off-diagonal components `[xy, xz, yz]`.
#[inline]
fn off_slot(i: usize, j: usize) -> usize {
    i + j - 1
}

/// Apply the full-grid operator (values beyond the box edge are treated as
/// zero; with the nesting hypotheses the interesting fields vanish there).
pub fn apply_elliptic(m: &MediumSpec, u: &[f64], out: &mut [f64]) {
    let grid = m.grid;
    assert_eq!(u.len(), grid.cell_count());
    assert_eq!(out.len(), grid.cell_count());
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let diagonal_only = m.a.is_diagonal();
    let a = &m.a;
    parallel::fill(out, |c| {
        let ac = a.at(c);
        let mut acc = 0.0;
        for axis in 0..3 {
            let aii = ac[diag_comp(axis)];
            for dir in [-1i64, 1] {
                match grid.neighbor(c, axis, dir) {
                    Some(d) => {
                        let face = harmonic_mean(aii, a.at(d)[diag_comp(axis)]);
                        acc += face * (u[c] - u[d]);
                    }
                    None => acc += aii * u[c],
                }
            }
        }
        acc *= inv_h2;
        if !diagonal_only {
            let uget = |d: Option<usize>| d.map_or(0.0, |k| u[k]);
            for i in 0..3 {
                for j in 0..3 {
                    if i == j {
                        continue;
                    }
                    let slot = 3 + off_slot(i, j);
                    let g = |d: Option<usize>| -> f64 {
                        let Some(d) = d else { return 0.0 };
                        a.at(d)[slot] * (uget(grid.neighbor(d, j, 1)) - uget(grid.neighbor(d, j, -1)))
                    };
                    let gp = g(grid.neighbor(c, i, 1));
                    let gm = g(grid.neighbor(c, i, -1));
                    acc -= (gp - gm) * 0.25 * inv_h2;
                }
            }
        }
        acc
    });
}

/// Gershgorin bound on the largest eigenvalue of `c^2 A` over the full grid,
/// used to pick stable leapfrog steps. For identity tensor and constant speed
/// it evaluates to `12 c^2 / h^2`, i.e. the classical `dt <= h / (c sqrt(3))`.
pub fn gershgorin_lambda_max(m: &MediumSpec) -> f64 {
    let grid = m.grid;
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let diagonal_only = m.a.is_diagonal();
    let a = &m.a;
    let mut rows = vec![0.0; grid.cell_count()];
    parallel::fill(&mut rows, |c| {
        let ac = a.at(c);
        let mut row = 0.0;
        for axis in 0..3 {
            let aii = ac[diag_comp(axis)];
            for dir in [-1i64, 1] {
                match grid.neighbor(c, axis, dir) {
                    // diagonal + |off-diagonal| contribution of one leg
                    Some(d) => row += 2.0 * harmonic_mean(aii, a.at(d)[diag_comp(axis)]),
                    None => row += aii,
                }
            }
        }
        if !diagonal_only {
            for i in 0..3 {
                for j in 0..3 {
                    if i == j {
                        continue;
                    }
                    let slot = 3 + off_slot(i, j);
                    let ap = grid.neighbor(c, i, 1).map_or(0.0, |d| a.at(d)[slot].abs());
                    let am = grid.neighbor(c, i, -1).map_or(0.0, |d| a.at(d)[slot].abs());
                    row += 0.5 * (ap + am);
                }
            }
        }
        let ci = m.c.values[c];
        ci * ci * row * inv_h2
    });
    rows.iter().copied().fold(0.0, f64::max)
}

/// One Dirichlet leg cut by the sphere.
#[derive(Clone, Copy, Debug)]
struct CutLeg {
    unknown: u32,
    coef: f64,
    /// Exact sphere crossing, for evaluating boundary data.
    point: [f64; 3],
}

/// The elliptic operator restricted to the open ball `|x| < radius` with
/// homogeneous (or folded inhomogeneous) Dirichlet data on the sphere.
pub struct BallOperator {
    pub grid: GridSpec,
    pub radius: f64,
    /// Unknown index -> grid cell (ascending cell order).
    pub cells: Vec<usize>,
    /// Grid cell -> unknown index or -1.
    index: Vec<i32>,
    /// Per unknown, per directed leg (axis * 2 + (dir + 1) / 2): neighbor
    /// unknown or -1 for a cut leg.
    nbrs: Vec<[i32; 6]>,
    /// Face coefficients already divided by h^2; cut legs hold `a / (theta h^2)`.
    coefs: Vec<[f64; 6]>,
    diag: Vec<f64>,
    cuts: Vec<CutLeg>,
    /// Off-diagonal tensor components `[xy, xz, yz]` per grid cell, if any.
    off: Option<Vec<[f64; 3]>>,
}

impl BallOperator {
    /// Build the operator. `theta_min` floors the cut fraction: small values
    /// (1e-3) keep eigenvalues sharp; 0.5 keeps the spectral radius within a
    /// factor two of the interior stencil so explicit time stepping stays
    /// affordable.
    pub fn new(m: &MediumSpec, radius: f64, theta_min: f64) -> Result<Self> {
        let grid = m.grid;
        if grid.dim != 3 {
            return Err(Error::BadRegions("ball operator needs a 3-d grid".into()));
        }
        if radius > grid.half_extent() + 1e-12 {
            return Err(Error::BadRegions(format!(
                "ball radius {radius} exceeds the box half-extent {}",
                grid.half_extent()
            )));
        }
        if !(theta_min > 0.0 && theta_min <= 1.0) {
            return Err(Error::BadRegions("theta_min must lie in (0, 1]".into()));
        }
        let h = grid.h;
        let off = if m.a.is_diagonal() {
            None
        } else {
            // Off-diagonal entries must vanish wherever the mixed stencil could
            // touch the sphere; otherwise zero-extension would lose consistency.
            for c in 0..grid.cell_count() {
                let r = grid.radius(c);
                if r >= radius - 2.5 * h && r <= radius + 1.5 * h {
                    let a = m.a.at(c);
                    if a[3] != 0.0 || a[4] != 0.0 || a[5] != 0.0 {
                        return Err(Error::RequiresDiagonalTensor(
                            "off-diagonal tensor entries must vanish near the sphere boundary",
                        ));
                    }
                }
            }
            Some(m.a.comps.iter().map(|c| [c[3], c[4], c[5]]).collect())
        };
        let cells = grid.cells_within(radius);
        if cells.is_empty() {
            return Err(Error::BadRegions("ball contains no cell centers".into()));
        }
        let mut index = vec![-1i32; grid.cell_count()];
        for (u, &c) in cells.iter().enumerate() {
            index[c] = u as i32;
        }
        let n_unknowns = cells.len();
        let mut nbrs = vec![[-1i32; 6]; n_unknowns];
        let mut coefs = vec![[0.0f64; 6]; n_unknowns];
        let mut diag = vec![0.0f64; n_unknowns];
        let mut cuts = Vec::new();
        let inv_h2 = 1.0 / (h * h);
        for (u, &c) in cells.iter().enumerate() {
            let xc = grid.center(c);
            let rho2 = xc[0] * xc[0] + xc[1] * xc[1] + xc[2] * xc[2];
            let ac = m.a.at(c);
            for axis in 0..3 {
                let aii = ac[diag_comp(axis)];
                for (s, dir) in [(-1.0f64, -1i64), (1.0, 1)] {
                    let leg = axis * 2 + ((dir + 1) / 2) as usize;
                    let inside = grid
                        .neighbor(c, axis, dir)
                        .filter(|&d| index[d] >= 0);
                    match inside {
                        Some(d) => {
                            let face = harmonic_mean(aii, m.a.at(d)[diag_comp(axis)]) * inv_h2;
                            nbrs[u][leg] = index[d];
                            coefs[u][leg] = face;
                            diag[u] += face;
                        }
                        None => {
                            // Fraction of the leg inside the sphere: solve
                            // |x_c + t s h e_axis| = radius for t in (0, 1].
                            let t = ((xc[axis] * xc[axis] + radius * radius - rho2).sqrt()
                                - s * xc[axis])
                                / h;
                            let theta = t.clamp(theta_min, 1.0);
                            let coef = aii / theta * inv_h2;
                            coefs[u][leg] = coef;
                            diag[u] += coef;
                            let mut point = xc;
                            point[axis] += t.min(1.0).max(0.0) * s * h;
                            // Keep the fold point exactly on the sphere.
                            let pr = (point[0] * point[0] + point[1] * point[1] + point[2] * point[2]).sqrt();
                            if pr > 0.0 {
                                let scale = radius / pr;
                                point = [point[0] * scale, point[1] * scale, point[2] * scale];
                            }
                            cuts.push(CutLeg { unknown: u as u32, coef, point });
                        }
                    }
                }
            }
        }
        Ok(BallOperator { grid, radius, cells, index, nbrs, coefs, diag, cuts, off })
    }

    pub fn unknowns(&self) -> usize {
        self.cells.len()
    }

    /// Unknown index of a grid cell, if the cell is inside the ball.
    pub fn unknown_of(&self, cell: usize) -> Option<usize> {
        let u = self.index[cell];
        (u >= 0).then_some(u as usize)
    }

    /// Gather a full-grid vector onto the unknowns.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.cells.iter().map(|&c| full[c]).collect()
    }

    /// Scatter unknowns back to the full grid, filling the exterior from
    /// `background(center)`.
    pub fn extend_with(&self, x: &[f64], background: impl Fn([f64; 3]) -> f64 + Sync) -> ScalarField {
        let grid = self.grid;
        let mut values = vec![0.0; grid.cell_count()];
        parallel::fill(&mut values, |c| {
            let u = self.index[c];
            if u >= 0 {
                x[u as usize]
            } else {
                background(grid.center(c))
            }
        });
        ScalarField { grid, values }
    }

    /// Fold inhomogeneous Dirichlet data into a right-hand side: each cut leg
    /// contributes `coef * g(sphere crossing)`.
    pub fn fold_boundary(&self, g: impl Fn([f64; 3]) -> f64, rhs: &mut [f64]) {
        for cut in &self.cuts {
            rhs[cut.unknown as usize] += cut.coef * g(cut.point);
        }
    }

    /// Solve `A x = rhs` on the ball with Jacobi-preconditioned CG.
    pub fn solve(&self, rhs: &[f64], tol: f64, max_iters: usize) -> Result<(Vec<f64>, SolveReport)> {
        let mut x = vec![0.0; self.unknowns()];
        let report = solve_cg(self, rhs, &mut x, tol, max_iters)?;
        Ok((x, report))
    }

    /// Gershgorin bound on the largest eigenvalue of `c^2 A` restricted to
    /// the ball (cut legs included), for explicit stepping on the masked grid.
    pub fn lambda_max_bound(&self, c: &ScalarField) -> f64 {
        let mut best = 0.0f64;
        for u in 0..self.unknowns() {
            let mut row = self.diag[u];
            for leg in 0..6 {
                if self.nbrs[u][leg] >= 0 {
                    row += self.coefs[u][leg];
                }
            }
            if let Some(off) = &self.off {
                let grid = self.grid;
                let cell = self.cells[u];
                let inv_h2 = 1.0 / (grid.h * grid.h);
                for i in 0..3 {
                    for j in 0..3 {
                        if i == j {
                            continue;
                        }
                        let slot = off_slot(i, j);
                        let ap = grid.neighbor(cell, i, 1).map_or(0.0, |d| off[d][slot].abs());
                        let am = grid.neighbor(cell, i, -1).map_or(0.0, |d| off[d][slot].abs());
                        row += 0.5 * (ap + am) * inv_h2;
                    }
                }
            }
            let ci = c.values[self.cells[u]];
            best = best.max(ci * ci * row);
        }
        best
    }
}

impl LinearOp for BallOperator {
    fn dim(&self) -> usize {
        self.cells.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let grid = self.grid;
        let inv_h2 = 1.0 / (grid.h * grid.h);
        parallel::fill(y, |u| {
            let mut acc = self.diag[u] * x[u];
            for leg in 0..6 {
                let nb = self.nbrs[u][leg];
                if nb >= 0 {
                    acc -= self.coefs[u][leg] * x[nb as usize];
                }
            }
            if let Some(off) = &self.off {
                let cell = self.cells[u];
                let xget = |d: Option<usize>| -> f64 {
                    match d {
                        Some(k) => {
                            let w = self.index[k];
                            if w >= 0 {
                                x[w as usize]
                            } else {
                                0.0
                            }
                        }
                        None => 0.0,
                    }
                };
                for i in 0..3 {
                    for j in 0..3 {
                        if i == j {
                            continue;
                        }
                        let slot = off_slot(i, j);
                        let g = |d: Option<usize>| -> f64 {
                            let Some(d) = d else { return 0.0 };
                            off[d][slot] * (xget(grid.neighbor(d, j, 1)) - xget(grid.neighbor(d, j, -1)))
                        };
                        let gp = g(grid.neighbor(cell, i, 1));
                        let gm = g(grid.neighbor(cell, i, -1));
                        acc -= (gp - gm) * 0.25 * inv_h2;
                    }
                }
            }
            acc
        });
    }

    fn diagonal(&self) -> Vec<f64> {
        self.diag.clone()
    }
}

/// One trial function of the harmonic catalog.
pub struct HarmonicFn {
    pub label: &'static str,
    pub degree: usize,
    pub field: ScalarField,
}

/// The sixteen harmonic polynomials of degree at most three: a basis of
/// `ker Delta` restricted to polynomials of that degree.
pub fn harmonic_catalog() -> Vec<(&'static str, usize, fn([f64; 3]) -> f64)> {
    vec![
        ("1", 0, |_x| 1.0),
        ("x", 1, |x| x[0]),
        ("y", 1, |x| x[1]),
        ("z", 1, |x| x[2]),
        ("xy", 2, |x| x[0] * x[1]),
        ("xz", 2, |x| x[0] * x[2]),
        ("yz", 2, |x| x[1] * x[2]),
        ("x^2-y^2", 2, |x| x[0] * x[0] - x[1] * x[1]),
        ("2z^2-x^2-y^2", 2, |x| 2.0 * x[2] * x[2] - x[0] * x[0] - x[1] * x[1]),
        ("xyz", 3, |x| x[0] * x[1] * x[2]),
        ("z(x^2-y^2)", 3, |x| x[2] * (x[0] * x[0] - x[1] * x[1])),
        ("x(x^2-3y^2)", 3, |x| x[0] * (x[0] * x[0] - 3.0 * x[1] * x[1])),
        ("y(3x^2-y^2)", 3, |x| x[1] * (3.0 * x[0] * x[0] - x[1] * x[1])),
        ("z(2z^2-3x^2-3y^2)", 3, |x| {
            x[2] * (2.0 * x[2] * x[2] - 3.0 * (x[0] * x[0] + x[1] * x[1]))
        }),
        ("x(4z^2-x^2-y^2)", 3, |x| {
            x[0] * (4.0 * x[2] * x[2] - x[0] * x[0] - x[1] * x[1])
        }),
        ("y(4z^2-x^2-y^2)", 3, |x| {
            x[1] * (4.0 * x[2] * x[2] - x[0] * x[0] - x[1] * x[1])
        }),
    ]
}

/// Trial functions in the kernel of the principal part on the recovery ball.
///
/// For the identity tensor the catalog polynomials are *exactly* in the
/// kernel of the discrete operator (the 7-point stencil differentiates
/// cubics exactly), so they are sampled directly. For a variable tensor each
/// polynomial provides Dirichlet data on the sphere `|x| = r0` and the
/// kernel element is computed by a masked solve; outside the ball the field
/// is the polynomial itself, so integrals over Omega and its boundary only
/// ever see kernel values.
pub fn harmonic_basis(m: &MediumSpec, tol: f64) -> Result<Vec<HarmonicFn>> {
    let grid = m.grid;
    let catalog = harmonic_catalog();
    if m.a.is_identity() {
        return Ok(catalog
            .into_iter()
            .map(|(label, degree, p)| HarmonicFn {
                label,
                degree,
                field: ScalarField::from_fn(grid, move |x| p(x)),
            })
            .collect());
    }
    let op = BallOperator::new(m, grid.r0, 1e-3)?;
    let mut out = Vec::with_capacity(catalog.len());
    for (label, degree, p) in catalog {
        let mut rhs = vec![0.0; op.unknowns()];
        op.fold_boundary(p, &mut rhs);
        let (x, _) = op.solve(&rhs, tol, 20_000)?;
        let field = op.extend_with(&x, p);
        out.push(HarmonicFn { label, degree, field });
    }
    Ok(out)
}

/// Newtonian potential `N[s](x) = integral of s(y) / (4 pi |x - y|) dy` of a
/// gridded source, evaluated at the given target cells by direct summation
/// (midpoint quadrature; the singular self-cell uses the exact cell integral
/// `SELF_CELL * h^2`).
pub fn newtonian_potential(source: &ScalarField, targets: &[usize]) -> Vec<f64> {
    let grid = source.grid;
    let h3 = grid.cell_volume();
    let inv_4pi = 1.0 / (4.0 * std::f64::consts::PI);
    let sources: Vec<(usize, [f64; 3], f64)> = (0..grid.cell_count())
        .filter(|&c| source.values[c] != 0.0)
        .map(|c| (c, grid.center(c), source.values[c]))
        .collect();
    let mut out = vec![0.0; targets.len()];
    parallel::fill(&mut out, |ti| {
        let t = targets[ti];
        let xt = grid.center(t);
        let mut acc = 0.0;
        for &(c, xs, v) in &sources {
            if c == t {
                acc += v * SELF_CELL * grid.h * grid.h;
            } else {
                let d = [xt[0] - xs[0], xt[1] - xs[1], xt[2] - xs[2]];
                let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                acc += v * inv_4pi / dist * h3;
            }
        }
        acc
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{build_medium, MediumRecipe, TensorRecipe};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn medium(n: usize, tensor: TensorRecipe) -> MediumSpec {
        let grid = GridSpec::cube(n, 6.0 / n as f64, 1.0, 1.5, 3.0).unwrap();
        build_medium(grid, &MediumRecipe::Uniform { c0: 1.0 }, &tensor).unwrap()
    }

    fn random_field(grid: GridSpec, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..grid.cell_count()).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn full_grid_operator_is_symmetric_with_cross_terms() {
        let m = medium(16, TensorRecipe::CrossBump { amplitude: 0.35, radius: 1.1 });
        let g = m.grid;
        let u = random_field(g, 1);
        let v = random_field(g, 2);
        let mut au = vec![0.0; g.cell_count()];
        let mut av = vec![0.0; g.cell_count()];
        apply_elliptic(&m, &u, &mut au);
        apply_elliptic(&m, &v, &mut av);
        let uav = parallel::dot(&u, &av);
        let vau = parallel::dot(&v, &au);
        assert_relative_eq!(uav, vau, max_relative = 1e-12);
    }

    #[test]
    fn identity_operator_is_exact_on_quadratics() {
        let m = medium(16, TensorRecipe::Identity);
        let g = m.grid;
        let u: Vec<f64> = (0..g.cell_count())
            .map(|c| {
                let x = g.center(c);
                x[0] * x[0] + 2.0 * x[1] * x[1] - x[2] * x[2] + 0.5 * x[0] * x[1]
            })
            .collect();
        let mut au = vec![0.0; g.cell_count()];
        apply_elliptic(&m, &u, &mut au);
        // -Laplacian of the quadratic is -(2 + 4 - 2) = -4, exactly, away from
        // the box edge where the zero-extension interferes.
        for c in 0..g.cell_count() {
            let ijk = g.decode(c);
            if ijk.iter().all(|&i| i >= 2 && i + 2 < g.n) {
                assert_relative_eq!(au[c], -4.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn catalog_polynomials_are_discretely_harmonic() {
        let m = medium(16, TensorRecipe::Identity);
        let g = m.grid;
        for (label, _deg, p) in harmonic_catalog() {
            let u: Vec<f64> = (0..g.cell_count()).map(|c| p(g.center(c))).collect();
            let mut au = vec![0.0; g.cell_count()];
            apply_elliptic(&m, &u, &mut au);
            let scale = u.iter().fold(0.0f64, |a, &b| a.max(b.abs())) / (g.h * g.h);
            for c in 0..g.cell_count() {
                let ijk = g.decode(c);
                if ijk.iter().all(|&i| i >= 2 && i + 2 < g.n) {
                    assert!(
                        au[c].abs() <= 1e-11 * scale,
                        "catalog entry {label} has interior residual {} at cell {c}",
                        au[c]
                    );
                }
            }
        }
    }

    #[test]
    fn ball_operator_is_symmetric_and_positive() {
        let m = medium(20, TensorRecipe::CrossBump { amplitude: 0.3, radius: 0.7 });
        let op = BallOperator::new(&m, m.grid.r0, 1e-3).unwrap();
        let n = op.unknowns();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut au = vec![0.0; n];
        let mut av = vec![0.0; n];
        op.apply(&u, &mut au);
        op.apply(&v, &mut av);
        assert_relative_eq!(parallel::dot(&u, &av), parallel::dot(&v, &au), max_relative = 1e-12);
        assert!(parallel::dot(&u, &au) > 0.0);
        assert!(parallel::dot(&v, &av) > 0.0);
    }

    #[test]
    fn ball_solve_reproduces_linear_dirichlet_data_exactly() {
        // u = 2 + x + 0.5 y - 0.3 z is in the kernel of the operator and the
        // one-sided cut legs differentiate linears exactly, so the discrete
        // solution matches the polynomial to solver precision.
        let m = medium(20, TensorRecipe::Identity);
        let op = BallOperator::new(&m, m.grid.r0, 1e-3).unwrap();
        let p = |x: [f64; 3]| 2.0 + x[0] + 0.5 * x[1] - 0.3 * x[2];
        let mut rhs = vec![0.0; op.unknowns()];
        op.fold_boundary(p, &mut rhs);
        let (x, report) = op.solve(&rhs, 1e-12, 10_000).unwrap();
        assert!(report.relative_residual <= 1e-12);
        for (u, &cell) in op.cells.iter().enumerate() {
            assert_relative_eq!(x[u], p(m.grid.center(cell)), epsilon = 1e-8);
        }
    }

    #[test]
    fn ball_ground_eigenvalue_approaches_dirichlet_laplacian_value() {
        // lambda_1 of the Dirichlet Laplacian on a ball of radius R is
        // (pi / R)^2; inverse power iteration on the cut-cell operator should
        // land within a few percent already on a coarse grid.
        let m = medium(24, TensorRecipe::Identity);
        let r0 = m.grid.r0;
        let op = BallOperator::new(&m, r0, 1e-3).unwrap();
        let n = op.unknowns();
        let mut x: Vec<f64> = op.cells.iter().map(|&c| 1.0 - m.grid.radius(c) / r0).collect();
        let mut lambda = 0.0;
        for _ in 0..30 {
            let norm = parallel::dot(&x, &x).sqrt();
            for v in x.iter_mut() {
                *v /= norm;
            }
            let (y, _) = op.solve(&x, 1e-11, 20_000).unwrap();
            let xy = parallel::dot(&x, &y);
            lambda = 1.0 / xy * parallel::dot(&x, &x);
            x = y;
        }
        let exact = (std::f64::consts::PI / r0).powi(2);
        assert_relative_eq!(lambda, exact, max_relative = 0.05);
        assert_eq!(n, op.unknowns());
    }

    #[test]
    fn theta_floor_caps_the_spectral_bound() {
        let m = medium(24, TensorRecipe::Identity);
        let sharp = BallOperator::new(&m, m.grid.r0, 1e-3).unwrap();
        let capped = BallOperator::new(&m, m.grid.r0, 0.5).unwrap();
        let b_sharp = sharp.lambda_max_bound(&m.c);
        let b_capped = capped.lambda_max_bound(&m.c);
        let interior = 12.0 / (m.grid.h * m.grid.h);
        assert!(b_capped <= 2.0 * interior + 1e-9);
        assert!(b_sharp >= b_capped);
    }

    #[test]
    fn gershgorin_reproduces_the_classical_identity_bound() {
        let m = medium(16, TensorRecipe::Identity);
        let bound = gershgorin_lambda_max(&m);
        assert_relative_eq!(bound, 12.0 / (m.grid.h * m.grid.h), max_relative = 1e-12);
    }

    /// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
    fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for k in 0..n {
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for j in 2..=n {
                    let jf = j as f64;
                    let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[k] = x;
            weights[k] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    }

    #[test]
    fn self_cell_constant_matches_shell_quadrature_oracle() {
        // integral over [-1/2,1/2]^3 of |r|^-1: by self-similarity the integral
        // over the half-size cube is 1/4 of the whole, so I = (4/3) S with S
        // the integral over the shell between the two cubes, which is smooth
        // and splits into 56 subcubes of side 1/4.
        let (nodes, weights) = gauss_legendre(24);
        let quarter = 0.25;
        let mut shell = 0.0;
        for bi in 0..4 {
            for bj in 0..4 {
                for bk in 0..4 {
                    let central = |b: usize| b == 1 || b == 2;
                    if central(bi) && central(bj) && central(bk) {
                        continue;
                    }
                    let base = [
                        -0.5 + bi as f64 * quarter,
                        -0.5 + bj as f64 * quarter,
                        -0.5 + bk as f64 * quarter,
                    ];
                    let mut sub = 0.0;
                    for (i, &xi) in nodes.iter().enumerate() {
                        let x = base[0] + 0.5 * quarter * (xi + 1.0);
                        for (j, &xj) in nodes.iter().enumerate() {
                            let y = base[1] + 0.5 * quarter * (xj + 1.0);
                            for (k, &xk) in nodes.iter().enumerate() {
                                let z = base[2] + 0.5 * quarter * (xk + 1.0);
                                let r = (x * x + y * y + z * z).sqrt();
                                sub += weights[i] * weights[j] * weights[k] / r;
                            }
                        }
                    }
                    shell += sub * (0.5 * quarter).powi(3);
                }
            }
        }
        let integral = 4.0 / 3.0 * shell;
        assert_relative_eq!(integral, UNIT_CUBE_KERNEL_INTEGRAL, epsilon = 1e-12);
        assert_relative_eq!(
            integral / (4.0 * std::f64::consts::PI),
            SELF_CELL,
            epsilon = 1e-13
        );
    }

    #[test]
    fn potential_of_a_compact_source_has_the_monopole_far_field() {
        let grid = GridSpec::cube(32, 6.0 / 32.0, 1.0, 1.5, 3.0).unwrap();
        let source = ScalarField::from_fn(grid, |x| {
            crate::medium::bump((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() / 0.5)
        });
        let mass: f64 = source.values.iter().sum::<f64>() * grid.cell_volume();
        let targets: Vec<usize> = (0..grid.cell_count())
            .filter(|&c| {
                let r = grid.radius(c);
                (2.0..2.3).contains(&r)
            })
            .collect();
        let pot = newtonian_potential(&source, &targets);
        for (i, &t) in targets.iter().enumerate() {
            let exact = mass / (4.0 * std::f64::consts::PI * grid.radius(t));
            assert_relative_eq!(pot[i], exact, max_relative = 2e-3);
        }
    }

    #[test]
    fn variable_tensor_harmonic_basis_has_small_interior_residual() {
        let grid = GridSpec::cube(24, 6.0 / 24.0, 1.0, 1.5, 3.0).unwrap();
        let m = build_medium(
            grid,
            &MediumRecipe::Uniform { c0: 1.0 },
            &TensorRecipe::IsotropicBump { amplitude: 0.4, radius: 0.8 },
        )
        .unwrap();
        let basis = harmonic_basis(&m, 1e-11).unwrap();
        assert_eq!(basis.len(), 16);
        let mut au = vec![0.0; grid.cell_count()];
        for hf in &basis {
            apply_elliptic(&m, &hf.field.values, &mut au);
            let scale = hf.field.inf_norm() / (grid.h * grid.h);
            for c in grid.cells_within(grid.r0 - 2.5 * grid.h) {
                assert!(
                    au[c].abs() <= 1e-6 * scale,
                    "{}: interior residual {} too large",
                    hf.label,
                    au[c]
                );
            }
        }
    }
}
