//! Weighted orthogonality integrals and mismatch functionals comparing two
//! recorded waves whose boundary traces agree.
//!
//! When two media `(c_1, a)` and `(c_2, a)` radiate identical boundary data,
//! the weighted initial data and every time moment are orthogonal to the
//! kernel of the principal part:
//! `integral over Omega of (c_1^-2 u_1^(k) - c_2^-2 u_2^(k)) phi dx = 0`.
//! Taking `phi = u_1^(2 k0)` at the leading even index `k0` collapses the
//! family to the sign-definite mismatch functional
//! `D = integral over Omega of (c_1^-2 - c_2^-2) |u_1^(2 k0)|^2 dx`,
//! whose vanishing forces the speeds to agree wherever the moment is active.
//! When the speed contrast is confined to marked compact regions, the same
//! integral localizes region by region through a smooth cutoff and an
//! integration by parts that moves the operator onto the cutoff, so only the
//! transition band - where both media agree - is ever differenced.
//!
//! Every comparison first verifies that the two boundary traces coincide in
//! relative L2 over the recording; the identities are not asserted for
//! mismatched data, so such pairs are refused rather than silently compared.

use crate::elliptic::{apply_elliptic, HarmonicFn};
use crate::error::{Error, Result};
use crate::field::{ScalarField, T_XX, T_XY, T_XZ, T_YY, T_YZ, T_ZZ};
use crate::grid::GridSpec;
use crate::io::fmt_f64;
use crate::medium::MediumSpec;
use crate::moments::{time_moments, MomentTable, MOMENT_ORDER_MAX, MOMENT_ORDER_MIN};
use crate::parallel;
use crate::wave::SimulationRecord;

/// Relative L2 gap above which two boundary traces are considered different
/// data and the orthogonality identities are refused.
pub const EPS_TRACE: f64 = 1e-6;

/// Speed contrast below which two cells are treated as acoustically equal
/// when measuring the violation set.
pub const EPS_SPEED_GAP: f64 = 1e-6;

/// Relative moment magnitude below which a cell does not count as active
/// support when measuring the violation set.
pub const EPS_MOMENT_SUPPORT: f64 = 1e-6;

/// Float dust allowed when requiring the two speeds to coincide outside the
/// marked regions (relative to the background speed).
const SPEED_MATCH_DUST: f64 = 1e-12;

/// One evaluated identity: a test function, the moment order it was paired
/// with, and the value of the integral (zero in exact arithmetic whenever the
/// boundary traces agree).
#[derive(Clone, Debug)]
pub struct DiscriminatorReport {
    /// Identifier of the test function the moment was integrated against.
    pub phi_label: String,
    /// Value of the weighted integral.
    pub value: f64,
    /// Moment order entering the integrand (`0` = the initial data row).
    pub k_used: usize,
    /// Index of the marked region for localized evaluations.
    pub localized_region: Option<usize>,
    /// Volume of the cells where the speeds differ while the squared moment
    /// is active: the set the vanishing integral forces to be empty.
    pub violation_measure: Option<f64>,
}

/// Relative L2 distance between the boundary traces of two records over the
/// common recording window.
///
/// Identical sampling is compared row by row; different time steps are
/// compared at the instants of the coarser record with the finer trace
/// linearly interpolated. The result is normalized by the larger of the two
/// trace norms, so a silent pair scores `0` and a silent/active pair `1`.
pub fn trace_gap(rec1: &SimulationRecord, rec2: &SimulationRecord) -> Result<f64> {
    if rec1.grid != rec2.grid {
        return Err(Error::Degenerate("records live on different grids".into()));
    }
    if rec1.times.is_empty() || rec2.times.is_empty() {
        return Err(Error::Degenerate("record carries an empty boundary trace".into()));
    }
    let faces = rec1.boundary_trace[0].len();
    if rec2.boundary_trace[0].len() != faces {
        return Err(Error::Degenerate("records sample different boundary faces".into()));
    }
    let (coarse, fine) =
        if rec1.times.len() <= rec2.times.len() { (rec1, rec2) } else { (rec2, rec1) };
    let weights = trapezoid(&coarse.times);
    let sums: Vec<(f64, f64, f64)> = {
        let mut rows = vec![(0.0, 0.0, 0.0); coarse.times.len()];
        let aligned = coarse.times.len() == fine.times.len();
        for (i, row) in rows.iter_mut().enumerate() {
            let t = coarse.times[i];
            let a = &coarse.boundary_trace[i];
            let mut gap2 = 0.0;
            let mut na2 = 0.0;
            let mut nb2 = 0.0;
            let eval = |j: usize| -> f64 {
                if aligned {
                    fine.boundary_trace[i][j]
                } else {
                    interp_trace(&fine.times, &fine.boundary_trace, t, j)
                }
            };
            for (j, &av) in a.iter().enumerate() {
                let bv = eval(j);
                gap2 += (av - bv) * (av - bv);
                na2 += av * av;
                nb2 += bv * bv;
            }
            *row = (gap2, na2, nb2);
        }
        rows
    };
    let num = parallel::sum_indexed(sums.len(), |i| weights[i] * sums[i].0);
    let den_a = parallel::sum_indexed(sums.len(), |i| weights[i] * sums[i].1);
    let den_b = parallel::sum_indexed(sums.len(), |i| weights[i] * sums[i].2);
    let den = den_a.max(den_b);
    if den <= 0.0 {
        return Ok(if num > 0.0 { 1.0 } else { 0.0 });
    }
    Ok((num / den).sqrt())
}

/// Linear interpolation of one trace column at instant `t` (clamped to the
/// recorded window).
fn interp_trace(times: &[f64], rows: &[Vec<f64>], t: f64, col: usize) -> f64 {
    let hi = times.partition_point(|&s| s < t);
    if hi == 0 {
        return rows[0][col];
    }
    if hi >= times.len() {
        return rows[times.len() - 1][col];
    }
    let (t0, t1) = (times[hi - 1], times[hi]);
    let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
    rows[hi - 1][col] + w * (rows[hi][col] - rows[hi - 1][col])
}

fn trapezoid(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for i in 0..n {
        let left = if i > 0 { times[i] - times[i - 1] } else { 0.0 };
        let right = if i + 1 < n { times[i + 1] - times[i] } else { 0.0 };
        w[i] = 0.5 * (left + right);
    }
    w
}

/// Refuse record pairs whose boundary traces differ by more than `tol`.
fn require_matching_traces(
    rec1: &SimulationRecord,
    rec2: &SimulationRecord,
    tol: f64,
) -> Result<()> {
    let gap = trace_gap(rec1, rec2)?;
    if gap > tol {
        return Err(Error::TraceMismatch { gap, tol });
    }
    Ok(())
}

fn require_same_grid(grid: GridSpec, others: &[GridSpec]) -> Result<()> {
    if others.iter().any(|&g| g != grid) {
        return Err(Error::Degenerate("all inputs must share one grid".into()));
    }
    Ok(())
}

/// Weighted orthogonality integrals of two matched records against a family
/// of test functions, at the default trace tolerance [`EPS_TRACE`].
///
/// Row `k = 0` integrates the weighted initial data
/// `(c_1^-2 f_1 - c_2^-2 f_2) phi` over Omega; rows `k = 1..=k_max` integrate
/// the weighted moment gaps `(c_1^-2 u_1^(k) - c_2^-2 u_2^(k)) phi`. All rows
/// vanish in exact arithmetic when the boundary traces agree.
#[allow(clippy::too_many_arguments)]
pub fn orthogonality_test(
    rec1: &SimulationRecord,
    rec2: &SimulationRecord,
    m1: &MediumSpec,
    m2: &MediumSpec,
    f1: &ScalarField,
    f2: &ScalarField,
    basis: &[HarmonicFn],
    k_max: usize,
) -> Result<Vec<DiscriminatorReport>> {
    orthogonality_test_with_tolerance(rec1, rec2, m1, m2, f1, f2, basis, k_max, EPS_TRACE)
}

/// [`orthogonality_test`] with an explicit trace tolerance, for comparing
/// independent discretizations of the same data (different time steps differ
/// at the truncation-error level, far above the tolerance used for repeated
/// identical runs).
#[allow(clippy::too_many_arguments)]
pub fn orthogonality_test_with_tolerance(
    rec1: &SimulationRecord,
    rec2: &SimulationRecord,
    m1: &MediumSpec,
    m2: &MediumSpec,
    f1: &ScalarField,
    f2: &ScalarField,
    basis: &[HarmonicFn],
    k_max: usize,
    trace_tol: f64,
) -> Result<Vec<DiscriminatorReport>> {
    let grid = rec1.grid;
    require_same_grid(grid, &[rec2.grid, m1.grid, m2.grid, f1.grid, f2.grid])?;
    if k_max > MOMENT_ORDER_MAX {
        return Err(Error::Degenerate(format!(
            "k_max = {k_max} exceeds the supported moment order {MOMENT_ORDER_MAX}"
        )));
    }
    if basis.iter().any(|phi| phi.field.grid != grid) {
        return Err(Error::Degenerate("test functions sampled on a different grid".into()));
    }
    require_matching_traces(rec1, rec2, trace_tol)?;
    let order = k_max.max(MOMENT_ORDER_MIN);
    let t1 = time_moments(rec1, order)?;
    let t2 = time_moments(rec2, order)?;
    let omega: Vec<usize> = (0..grid.cell_count()).filter(|&c| grid.inside_omega(c)).collect();
    let w1 = inverse_square_speed(m1);
    let w2 = inverse_square_speed(m2);
    let vol = grid.cell_volume();

    let mut reports = Vec::with_capacity((k_max + 1) * basis.len());
    for k in 0..=k_max {
        let (a1, a2): (&[f64], &[f64]) = if k == 0 {
            (&f1.values, &f2.values)
        } else {
            (&t1.moments[k].values, &t2.moments[k].values)
        };
        for phi in basis {
            let p = &phi.field.values;
            let value = vol
                * parallel::sum_indexed(omega.len(), |i| {
                    let c = omega[i];
                    (w1[c] * a1[c] - w2[c] * a2[c]) * p[c]
                });
            reports.push(DiscriminatorReport {
                phi_label: phi.label.to_string(),
                value,
                k_used: k,
                localized_region: None,
                violation_measure: None,
            });
        }
    }
    Ok(reports)
}

/// The sign-definite speed-mismatch functional of a matched record pair.
///
/// Detects the leading even moment index `k0` from the first record, then
/// evaluates `D = integral over Omega of (c_1^-2 - c_2^-2) |u_1^(2 k0)|^2 dx`
/// together with the volume of the violation set
/// `{|c_1 - c_2| > eps} intersected with {|u_1^(2 k0)| > eps_rel * max}`.
/// When one speed dominates the other pointwise, `D = 0` forces the speeds
/// to agree on the active support, so a matched pair must report both a
/// near-zero value and a near-empty violation set.
pub fn discriminator(
    rec1: &SimulationRecord,
    rec2: &SimulationRecord,
    m1: &MediumSpec,
    m2: &MediumSpec,
    k_max: usize,
) -> Result<DiscriminatorReport> {
    require_same_grid(rec1.grid, &[rec2.grid, m1.grid, m2.grid])?;
    require_matching_traces(rec1, rec2, EPS_TRACE)?;
    let table = time_moments(rec1, k_max)?;
    let k0 = table.k0_even.ok_or(Error::K0Undetectable)?;
    discriminator_from_table(&table, m1, m2, k0)
}

/// [`discriminator`] evaluated on an existing moment table at an explicit
/// leading index, so synthetic moment fields (for which no record exists) can
/// be analyzed the same way as recorded ones.
pub fn discriminator_from_table(
    table: &MomentTable,
    m1: &MediumSpec,
    m2: &MediumSpec,
    k0: usize,
) -> Result<DiscriminatorReport> {
    require_same_grid(table.grid, &[m1.grid, m2.grid])?;
    if k0 == 0 {
        return Err(Error::Degenerate("the leading even index must be at least one".into()));
    }
    if 2 * k0 > table.order() {
        return Err(Error::Degenerate(format!(
            "moment u^({}) is beyond the table order {}",
            2 * k0,
            table.order()
        )));
    }
    let grid = table.grid;
    let omega: Vec<usize> = table.cells.iter().copied().filter(|&c| grid.inside_omega(c)).collect();
    let u = &table.moments[2 * k0].values;
    let w1 = inverse_square_speed(m1);
    let w2 = inverse_square_speed(m2);
    let vol = grid.cell_volume();
    let value = vol
        * parallel::sum_indexed(omega.len(), |i| {
            let c = omega[i];
            (w1[c] - w2[c]) * u[c] * u[c]
        });
    let violation = violation_volume(grid, &omega, u, m1, m2);
    Ok(DiscriminatorReport {
        phi_label: format!("|u^({})|^2", 2 * k0),
        value,
        k_used: 2 * k0,
        localized_region: None,
        violation_measure: Some(violation),
    })
}

/// Volume of `{|c_1 - c_2| > eps} intersected with the active support of
/// `u` over the given cells.
fn violation_volume(
    grid: GridSpec,
    cells: &[usize],
    u: &[f64],
    m1: &MediumSpec,
    m2: &MediumSpec,
) -> f64 {
    let u_max = cells.iter().map(|&c| u[c].abs()).fold(0.0, f64::max);
    let threshold = EPS_MOMENT_SUPPORT * u_max;
    grid.cell_volume()
        * parallel::sum_indexed(cells.len(), |i| {
            let c = cells[i];
            let differs = (m1.c.values[c] - m2.c.values[c]).abs() > EPS_SPEED_GAP;
            if differs && u[c].abs() > threshold {
                1.0
            } else {
                0.0
            }
        })
}

fn inverse_square_speed(m: &MediumSpec) -> Vec<f64> {
    m.c.values.iter().map(|&c| 1.0 / (c * c)).collect()
}

/// The mismatch functional restricted to one marked region, evaluated through
/// a cutoff and integration by parts.
///
/// The first medium's labeled regions are taken as the marked compacts; they
/// must be pairwise disjoint, sit inside Omega, leave a connected complement
/// in the recovery ball, and carry the whole speed contrast. With `sep` the
/// smallest of the region-to-boundary and region-to-region distances, the
/// cutoff is the quintic smoothstep of `dist(x, K_j)` falling from `1` below
/// `sep/6` to `0` above `sep/3`, and the reported value is
///
/// `- integral of (u^(2 k0 + 2)_1 - u^(2 k0 + 2)_2) *
///    (u_1^(2 k0) A chi - 2 sum a_mn d_n u_1^(2 k0) d_m chi) dx`,
///
/// which equals the sharp integral of `(c_1^-2 - c_2^-2) |u_1^(2 k0)|^2` over
/// the region whenever the traces agree. The integrand lives only on the
/// transition band, where both media coincide.
pub fn localized_discriminator(
    rec1: &SimulationRecord,
    rec2: &SimulationRecord,
    m1: &MediumSpec,
    m2: &MediumSpec,
    region_j: usize,
) -> Result<DiscriminatorReport> {
    require_same_grid(rec1.grid, &[rec2.grid, m1.grid, m2.grid])?;
    require_matching_traces(rec1, rec2, EPS_TRACE)?;
    let t1 = time_moments(rec1, MOMENT_ORDER_MAX)?;
    let t2 = time_moments(rec2, MOMENT_ORDER_MAX)?;
    localized_from_tables(&t1, &t2, m1, m2, region_j)
}

/// [`localized_discriminator`] on precomputed moment tables.
pub fn localized_from_tables(
    t1: &MomentTable,
    t2: &MomentTable,
    m1: &MediumSpec,
    m2: &MediumSpec,
    region_j: usize,
) -> Result<DiscriminatorReport> {
    let grid = t1.grid;
    require_same_grid(grid, &[t2.grid, m1.grid, m2.grid])?;
    let k0 = t1.k0_even.ok_or(Error::K0Undetectable)?;
    let need = 2 * k0 + 2;
    if need > t1.order() || need > t2.order() {
        return Err(Error::Degenerate(format!(
            "localized identity needs moments to order {need}; tables stop at {} and {}",
            t1.order(),
            t2.order()
        )));
    }
    let geom = region_geometry(m1, m2)?;
    if region_j >= m1.regions.len() {
        return Err(Error::BadRegions(format!(
            "region index {region_j} out of range ({} regions)",
            m1.regions.len()
        )));
    }
    let cutoff = cutoff_field(grid, &geom, region_j);
    verify_cutoff(grid, &geom, region_j, &cutoff)?;

    let v = &t1.moments[2 * k0].values;
    let w_hi1 = &t1.moments[need].values;
    let w_hi2 = &t2.moments[need].values;
    let mut a_chi = vec![0.0; grid.cell_count()];
    apply_elliptic(m1, &cutoff.chi, &mut a_chi);

    // The bracket vanishes wherever the cutoff is locally constant, so the
    // quadrature only needs the transition band plus one stencil cell.
    let reach = 2.0 * grid.h;
    let support: Vec<usize> = (0..grid.cell_count())
        .filter(|&c| {
            let d = cutoff.dist[c];
            d > cutoff.lo - reach && d < cutoff.hi + reach
        })
        .collect();
    let inv_2h = 1.0 / (2.0 * grid.h);
    let chi = &cutoff.chi;
    let value = -grid.cell_volume()
        * parallel::sum_indexed(support.len(), |i| {
            let c = support[i];
            let w = w_hi1[c] - w_hi2[c];
            if w == 0.0 {
                return 0.0;
            }
            let mut g_chi = [0.0; 3];
            let mut g_v = [0.0; 3];
            for axis in 0..3 {
                let plus = grid.neighbor(c, axis, 1);
                let minus = grid.neighbor(c, axis, -1);
                let cp = plus.map_or(0.0, |d| chi[d]);
                let cm = minus.map_or(0.0, |d| chi[d]);
                let vp = plus.map_or(0.0, |d| v[d]);
                let vm = minus.map_or(0.0, |d| v[d]);
                g_chi[axis] = (cp - cm) * inv_2h;
                g_v[axis] = (vp - vm) * inv_2h;
            }
            let a = m1.a.at(c);
            let a_g_chi = [
                a[T_XX] * g_chi[0] + a[T_XY] * g_chi[1] + a[T_XZ] * g_chi[2],
                a[T_XY] * g_chi[0] + a[T_YY] * g_chi[1] + a[T_YZ] * g_chi[2],
                a[T_XZ] * g_chi[0] + a[T_YZ] * g_chi[1] + a[T_ZZ] * g_chi[2],
            ];
            let grad_term = g_v[0] * a_g_chi[0] + g_v[1] * a_g_chi[1] + g_v[2] * a_g_chi[2];
            w * (v[c] * a_chi[c] - 2.0 * grad_term)
        });

    let region_cells = &m1.regions[region_j].cells;
    let omega: Vec<usize> = t1.cells.iter().copied().filter(|&c| grid.inside_omega(c)).collect();
    let u_max = omega.iter().map(|&c| v[c].abs()).fold(0.0, f64::max);
    let threshold = EPS_MOMENT_SUPPORT * u_max;
    let violation = grid.cell_volume()
        * parallel::sum_indexed(region_cells.len(), |i| {
            let c = region_cells[i];
            let differs = (m1.c.values[c] - m2.c.values[c]).abs() > EPS_SPEED_GAP;
            if differs && v[c].abs() > threshold {
                1.0
            } else {
                0.0
            }
        });
    Ok(DiscriminatorReport {
        phi_label: format!("chi[{}]*u^({})", m1.regions[region_j].label, 2 * k0),
        value,
        k_used: 2 * k0,
        localized_region: Some(region_j),
        violation_measure: Some(violation),
    })
}

/// Validated geometry of the marked regions: ownership mask, physical
/// distance field to each region, and the governing separation.
#[derive(Debug)]
struct RegionGeometry {
    /// Region index + 1 per cell, `0` for unmarked cells.
    owner: Vec<u32>,
    /// Distance from every cell center to the nearest cell of each region.
    dists: Vec<Vec<f64>>,
    /// `min` of all region-to-boundary and pairwise region distances.
    sep: f64,
}

fn region_geometry(m1: &MediumSpec, m2: &MediumSpec) -> Result<RegionGeometry> {
    let grid = m1.grid;
    let regions = &m1.regions;
    if regions.is_empty() {
        return Err(Error::BadRegions("the first medium declares no marked regions".into()));
    }
    let cells = grid.cell_count();
    let mut owner = vec![0u32; cells];
    for (ri, region) in regions.iter().enumerate() {
        if region.cells.is_empty() {
            return Err(Error::BadRegions(format!("region '{}' holds no cells", region.label)));
        }
        for &c in &region.cells {
            if c >= cells {
                return Err(Error::BadRegions(format!(
                    "region '{}' references cell {c} beyond the grid",
                    region.label
                )));
            }
            if !grid.inside_omega(c) {
                return Err(Error::BadRegions(format!(
                    "region '{}' leaves the source domain",
                    region.label
                )));
            }
            if owner[c] != 0 {
                return Err(Error::BadRegions(format!(
                    "regions '{}' and '{}' overlap at cell {c}",
                    regions[owner[c] as usize - 1].label,
                    region.label
                )));
            }
            owner[c] = ri as u32 + 1;
        }
    }

    let dust = SPEED_MATCH_DUST * m1.c0.abs().max(m2.c0.abs());
    if let Some(c) =
        (0..cells).find(|&c| owner[c] == 0 && (m1.c.values[c] - m2.c.values[c]).abs() > dust)
    {
        return Err(Error::BadRegions(format!(
            "the wave speeds differ outside the marked regions (first at cell {c}); \
             the regions must carry the whole speed contrast"
        )));
    }

    let universe: Vec<bool> =
        (0..cells).map(|c| grid.radius(c) < grid.r0 && owner[c] == 0).collect();
    let seed = (0..cells)
        .filter(|&c| universe[c])
        .max_by(|&a, &b| grid.radius(a).total_cmp(&grid.radius(b)))
        .ok_or_else(|| Error::BadRegions("regions cover the whole recovery ball".into()))?;
    if !grid.connected(&universe, seed) {
        return Err(Error::DisconnectedComplement);
    }

    let dists: Vec<Vec<f64>> = regions
        .iter()
        .map(|region| {
            distance_sq_cells(grid, &region.cells)
                .into_iter()
                .map(|d2| d2.sqrt() * grid.h)
                .collect()
        })
        .collect();

    let mut sep = f64::INFINITY;
    for region in regions {
        let reach = region.cells.iter().map(|&c| grid.radius(c)).fold(0.0, f64::max);
        sep = sep.min(grid.r0 - reach);
    }
    for i in 0..regions.len() {
        for l in (i + 1)..regions.len() {
            let gap =
                regions[i].cells.iter().map(|&c| dists[l][c]).fold(f64::INFINITY, f64::min);
            sep = sep.min(gap);
        }
    }
    if !(sep >= 2.0 * grid.h) {
        return Err(Error::BadRegions(format!(
            "separation {sep:.3e} is below twice the grid spacing {:.3e}; \
             the cutoff band cannot be resolved",
            grid.h
        )));
    }
    Ok(RegionGeometry { owner, dists, sep })
}

/// The smooth cutoff of one region: `1` within `sep/6` of the region, `0`
/// beyond `sep/3`, quintic smoothstep in between.
struct CutoffData {
    chi: Vec<f64>,
    /// `dists[region_j]`, kept for support bookkeeping.
    dist: Vec<f64>,
    lo: f64,
    hi: f64,
}

fn cutoff_field(grid: GridSpec, geom: &RegionGeometry, region_j: usize) -> CutoffData {
    let lo = geom.sep / 6.0;
    let hi = geom.sep / 3.0;
    let dist = geom.dists[region_j].clone();
    let mut chi = vec![0.0; grid.cell_count()];
    parallel::fill(&mut chi, |c| {
        let d = dist[c];
        if d <= lo {
            1.0
        } else if d >= hi {
            0.0
        } else {
            smoothstep((hi - d) / (hi - lo))
        }
    });
    CutoffData { chi, dist, lo, hi }
}

/// Quintic smoothstep `t^3 (10 - 15 t + 6 t^2)`: `0 -> 0`, `1 -> 1`, with two
/// vanishing derivatives at both ends.
fn smoothstep(t: f64) -> f64 {
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// Cellwise verification of the cutoff properties: plateau value `1` on the
/// thickened region, `0` outside the transition shell, range `[0, 1]`, and a
/// transition band that avoids every marked region and stays inside the
/// recovery ball.
fn verify_cutoff(
    grid: GridSpec,
    geom: &RegionGeometry,
    region_j: usize,
    cutoff: &CutoffData,
) -> Result<()> {
    let bad = (0..grid.cell_count()).find(|&c| {
        let d = cutoff.dist[c];
        let x = cutoff.chi[c];
        if !(0.0..=1.0).contains(&x) {
            return true;
        }
        if d <= cutoff.lo && x != 1.0 {
            return true;
        }
        if d >= cutoff.hi && x != 0.0 {
            return true;
        }
        if x > 0.0 && x < 1.0 && (geom.owner[c] != 0 || grid.radius(c) >= grid.r0) {
            return true;
        }
        // The thickened neighborhoods of the other regions must not meet the
        // cutoff's support.
        if x > 0.0 {
            for (ri, dist_i) in geom.dists.iter().enumerate() {
                if ri != region_j && dist_i[c] <= cutoff.lo {
                    return true;
                }
            }
        }
        false
    });
    match bad {
        Some(c) => Err(Error::BadRegions(format!(
            "cutoff property violated at cell {c} (distance {:.3e}, value {:.3e})",
            cutoff.dist[c], cutoff.chi[c]
        ))),
        None => Ok(()),
    }
}

/// Exact squared Euclidean distance (in cell-index units) from every cell to
/// the nearest seed cell: the separable lower-envelope-of-parabolas
/// transform, one pass per axis.
fn distance_sq_cells(grid: GridSpec, seeds: &[usize]) -> Vec<f64> {
    let n = grid.n;
    let mut d = vec![f64::INFINITY; grid.cell_count()];
    for &c in seeds {
        d[c] = 0.0;
    }
    let mut line = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut hull = vec![0usize; n];
    let mut breaks = vec![0.0; n + 1];
    for axis in 0..3 {
        for a in 0..n {
            for b in 0..n {
                let at = |q: usize| match axis {
                    0 => grid.idx(q, a, b),
                    1 => grid.idx(a, q, b),
                    _ => grid.idx(a, b, q),
                };
                for (q, slot) in line.iter_mut().enumerate() {
                    *slot = d[at(q)];
                }
                envelope_1d(&line, &mut out, &mut hull, &mut breaks);
                for (q, &val) in out.iter().enumerate() {
                    d[at(q)] = val;
                }
            }
        }
    }
    d
}

/// One-dimensional pass of the squared-distance transform:
/// `out[p] = min over q of (line[q] + (p - q)^2)`.
fn envelope_1d(line: &[f64], out: &mut [f64], hull: &mut [usize], breaks: &mut [f64]) {
    let n = line.len();
    let Some(first) = (0..n).find(|&q| line[q].is_finite()) else {
        out[..n].fill(f64::INFINITY);
        return;
    };
    let intersect = |q: usize, r: usize| -> f64 {
        let (qf, rf) = (q as f64, r as f64);
        ((line[q] + qf * qf) - (line[r] + rf * rf)) / (2.0 * (qf - rf))
    };
    let mut k = 0usize;
    hull[0] = first;
    breaks[0] = f64::NEG_INFINITY;
    breaks[1] = f64::INFINITY;
    for q in (first + 1)..n {
        if !line[q].is_finite() {
            continue;
        }
        let mut s = intersect(q, hull[k]);
        while k > 0 && s <= breaks[k] {
            k -= 1;
            s = intersect(q, hull[k]);
        }
        k += 1;
        hull[k] = q;
        breaks[k] = s;
        breaks[k + 1] = f64::INFINITY;
    }
    let mut k = 0usize;
    for (p, slot) in out.iter_mut().enumerate().take(n) {
        while breaks[k + 1] < p as f64 {
            k += 1;
        }
        let dq = p as f64 - hull[k] as f64;
        *slot = dq * dq + line[hull[k]];
    }
}

/// CSV export: one row per report, blank fields for absent options.
pub fn reports_to_csv(reports: &[DiscriminatorReport]) -> String {
    let mut csv = String::from("phi,k,region,value,violation_measure\n");
    for r in reports {
        let region = r.localized_region.map(|j| j.to_string()).unwrap_or_default();
        let violation = r.violation_measure.map(fmt_f64).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.phi_label,
            r.k_used,
            region,
            fmt_f64(r.value),
            violation
        ));
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::harmonic_basis;
    use crate::medium::{
        build_initial, build_medium, InitialRecipe, MediumRecipe, Region, TensorRecipe,
    };
    use crate::moments::EPS_MOM;
    use crate::wave::{record_simulation, BoundaryKind, RecordConfig, SimConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reflecting(t_max: f64) -> SimConfig {
        SimConfig { boundary: BoundaryKind::ReflectingBall, ..SimConfig::open(t_max) }
    }

    fn uniform_medium(n: usize) -> MediumSpec {
        let grid = GridSpec::cube(n, 6.0 / n as f64, 1.0, 1.5, 3.0).unwrap();
        build_medium(grid, &MediumRecipe::Uniform { c0: 1.0 }, &TensorRecipe::Identity).unwrap()
    }

    fn bump_record(m: &MediumSpec, cfg: &SimConfig) -> SimulationRecord {
        let init =
            build_initial(m.grid, &InitialRecipe::RadialBump { amplitude: 1.0, radius: 0.7 })
                .unwrap();
        record_simulation(m, &init, cfg, &RecordConfig::default()).unwrap()
    }

    fn ball_region(grid: GridSpec, center: [f64; 3], radius: f64, label: &str) -> Region {
        let cells: Vec<usize> = (0..grid.cell_count())
            .filter(|&c| {
                let x = grid.center(c);
                let d = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() < radius
            })
            .collect();
        Region { label: label.into(), cells }
    }

    /// Moment table holding a single synthetic even moment, for analyses that
    /// inject fields rather than quadratures of a run.
    fn synthetic_table(grid: GridSpec, u2: ScalarField, order: usize) -> MomentTable {
        let cells = grid.cells_within(grid.r0);
        let mut moments = Vec::with_capacity(order + 1);
        let mut norms = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let field = if k == 2 { u2.clone() } else { ScalarField::zeros(grid) };
            norms.push(field.norm_l2_on(&cells));
            moments.push(field);
        }
        MomentTable {
            grid,
            cells,
            moments,
            norms,
            tail_bounds: vec![0.0; order + 1],
            k0_even: Some(1),
            delta_hat: 1.0,
            c_fit: 0.0,
        }
    }

    #[test]
    fn orthogonality_vanishes_exactly_for_identical_records() {
        let m = uniform_medium(24);
        let rec = bump_record(&m, &reflecting(3.4));
        let init =
            build_initial(m.grid, &InitialRecipe::RadialBump { amplitude: 1.0, radius: 0.7 })
                .unwrap();
        let basis = harmonic_basis(&m, 1e-8).unwrap();
        let reports =
            orthogonality_test(&rec, &rec, &m, &m, &init.f, &init.f, &basis, 6).unwrap();
        assert_eq!(reports.len(), 7 * basis.len());
        for r in &reports {
            assert_eq!(r.value, 0.0, "phi = {}, k = {}", r.phi_label, r.k_used);
            assert!(r.localized_region.is_none());
        }
        let k_zero_rows = reports.iter().filter(|r| r.k_used == 0).count();
        assert_eq!(k_zero_rows, basis.len());
    }

    #[test]
    fn mismatched_boundary_traces_are_refused() {
        let m = uniform_medium(24);
        let rec = bump_record(&m, &reflecting(3.4));
        let scaled = rec.scaled(1.01);
        let init =
            build_initial(m.grid, &InitialRecipe::RadialBump { amplitude: 1.0, radius: 0.7 })
                .unwrap();
        let basis = harmonic_basis(&m, 1e-8).unwrap();
        let err = orthogonality_test(&rec, &scaled, &m, &m, &init.f, &init.f, &basis, 4)
            .unwrap_err();
        match err {
            Error::TraceMismatch { gap, tol } => {
                assert!(gap > 5e-3 && gap < 2e-2, "gap = {gap}");
                assert_eq!(tol, EPS_TRACE);
            }
            other => panic!("expected a trace mismatch, got {other:?}"),
        }
    }

    #[test]
    fn independent_time_steps_satisfy_the_identity_within_tolerance() {
        let m = uniform_medium(32);
        let rec_fast = bump_record(&m, &reflecting(3.4));
        let rec_slow = bump_record(&m, &SimConfig { cfl: 0.45, ..reflecting(3.4) });
        assert_ne!(rec_fast.times.len(), rec_slow.times.len());
        let init =
            build_initial(m.grid, &InitialRecipe::RadialBump { amplitude: 1.0, radius: 0.7 })
                .unwrap();
        let basis = harmonic_basis(&m, 1e-8).unwrap();
        let reports = orthogonality_test_with_tolerance(
            &rec_fast, &rec_slow, &m, &m, &init.f, &init.f, &basis, 4, 0.1,
        )
        .unwrap();

        // Scale each row by the unsigned integral of the first record's
        // integrand, so the assertion measures cancellation, not magnitude.
        let grid = m.grid;
        let table = time_moments(&rec_fast, 4).unwrap();
        let omega: Vec<usize> =
            (0..grid.cell_count()).filter(|&c| grid.inside_omega(c)).collect();
        for r in &reports {
            let a: &[f64] =
                if r.k_used == 0 { &init.f.values } else { &table.moments[r.k_used].values };
            let phi = &basis.iter().find(|p| p.label == r.phi_label).unwrap().field.values;
            let scale: f64 =
                omega.iter().map(|&c| (a[c] * phi[c]).abs()).sum::<f64>() * grid.cell_volume();
            if scale > 0.0 {
                assert!(
                    r.value.abs() <= 0.1 * scale,
                    "phi = {}, k = {}: |{:.3e}| > 0.1 * {:.3e}",
                    r.phi_label,
                    r.k_used,
                    r.value,
                    scale
                );
            }
        }
    }

    #[test]
    fn discriminator_is_zero_with_empty_violation_set_on_self_comparison() {
        let m = uniform_medium(24);
        let rec = bump_record(&m, &reflecting(3.4));
        let report = discriminator(&rec, &rec, &m, &m, 4).unwrap();
        assert_eq!(report.value, 0.0);
        assert_eq!(report.violation_measure, Some(0.0));
        assert_eq!(report.k_used, 2);
        assert_eq!(report.phi_label, "|u^(2)|^2");
    }

    #[test]
    fn injected_speed_bump_forces_a_sign_definite_mismatch() {
        let grid = GridSpec::cube(16, 6.0 / 16.0, 1.0, 1.5, 3.0).unwrap();
        let m1 =
            build_medium(grid, &MediumRecipe::Uniform { c0: 1.0 }, &TensorRecipe::Identity)
                .unwrap();
        let m2 = build_medium(
            grid,
            &MediumRecipe::RadialBump { c0: 1.0, amplitude: 0.3, radius: 0.7 },
            &TensorRecipe::Identity,
        )
        .unwrap();
        let u2 = ScalarField::from_fn(grid, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            (1.0 - r2).max(0.0)
        });
        let table = synthetic_table(grid, u2.clone(), 4);
        let report = discriminator_from_table(&table, &m1, &m2, 1).unwrap();

        // c2 >= c1 everywhere, so the weight c1^-2 - c2^-2 is nonnegative and
        // strictly positive where the bump overlaps the active moment; the
        // mismatch integral must come out strictly positive and the violation
        // set must have positive volume.
        assert!(report.value > 0.0, "D = {:.3e}", report.value);
        assert!(report.violation_measure.unwrap() > 0.0);

        let mut direct = 0.0;
        let mut cells_in_violation = 0usize;
        let u_max = (0..grid.cell_count())
            .filter(|&c| grid.inside_omega(c))
            .map(|c| u2.values[c].abs())
            .fold(0.0, f64::max);
        for c in 0..grid.cell_count() {
            if !grid.inside_omega(c) {
                continue;
            }
            let (c1, c2) = (m1.c.values[c], m2.c.values[c]);
            direct += (1.0 / (c1 * c1) - 1.0 / (c2 * c2)) * u2.values[c] * u2.values[c];
            if (c1 - c2).abs() > EPS_SPEED_GAP
                && u2.values[c].abs() > EPS_MOMENT_SUPPORT * u_max
            {
                cells_in_violation += 1;
            }
        }
        direct *= grid.cell_volume();
        assert!((report.value - direct).abs() <= 1e-12 * direct.abs());
        let expected = grid.cell_volume() * cells_in_violation as f64;
        assert!((report.violation_measure.unwrap() - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn zero_initial_data_reports_k0_undetectable() {
        let m = uniform_medium(16);
        let init = build_initial(m.grid, &InitialRecipe::Zero).unwrap();
        let rec =
            record_simulation(&m, &init, &reflecting(1.0), &RecordConfig::default()).unwrap();
        let err = discriminator(&rec, &rec, &m, &m, 4).unwrap_err();
        assert!(matches!(err, Error::K0Undetectable));
    }

    #[test]
    fn localized_self_comparison_vanishes_and_matches_the_global_path() {
        let mut m = uniform_medium(32);
        m.regions = vec![ball_region(m.grid, [0.0, 0.0, 0.0], 0.3, "core")];
        let rec = bump_record(&m, &reflecting(3.4));
        let local = localized_discriminator(&rec, &rec, &m, &m, 0).unwrap();
        assert_eq!(local.value, 0.0);
        assert_eq!(local.localized_region, Some(0));
        assert_eq!(local.k_used, 2);
        assert_eq!(local.violation_measure, Some(0.0));
        assert!(local.phi_label.contains("core"));

        let global = discriminator(&rec, &rec, &m, &m, 4).unwrap();
        assert_eq!(global.value, local.value);
    }

    #[test]
    fn cutoff_has_plateau_band_and_support_inside_the_complement() {
        let m = uniform_medium(32);
        let grid = m.grid;
        let mut marked = m.clone();
        marked.regions = vec![ball_region(grid, [0.0, 0.0, 0.0], 0.3, "core")];
        let geom = region_geometry(&marked, &marked).unwrap();
        assert!((geom.sep - (grid.r0 - 0.3)).abs() < 2.0 * grid.h);
        let cutoff = cutoff_field(grid, &geom, 0);
        verify_cutoff(grid, &geom, 0, &cutoff).unwrap();

        let center = grid.idx(grid.n / 2, grid.n / 2, grid.n / 2);
        assert_eq!(cutoff.chi[center], 1.0);
        let band_cells = (0..grid.cell_count())
            .filter(|&c| cutoff.chi[c] > 0.0 && cutoff.chi[c] < 1.0)
            .count();
        assert!(band_cells > 0, "transition band resolved by no cell");
        for c in 0..grid.cell_count() {
            let d = cutoff.dist[c];
            if d > cutoff.lo && d < cutoff.hi {
                let expected = smoothstep((cutoff.hi - d) / (cutoff.hi - cutoff.lo));
                assert_eq!(cutoff.chi[c], expected);
            }
            if grid.radius(c) >= grid.r0 {
                assert_eq!(cutoff.chi[c], 0.0);
            }
        }
    }

    #[test]
    fn two_marked_regions_validate_and_both_vanish_on_self_comparison() {
        let mut m = uniform_medium(32);
        m.regions = vec![
            ball_region(m.grid, [-0.5, 0.0, 0.0], 0.2, "left"),
            ball_region(m.grid, [0.5, 0.0, 0.0], 0.2, "right"),
        ];
        let rec = bump_record(&m, &reflecting(3.4));
        let left = localized_discriminator(&rec, &rec, &m, &m, 0).unwrap();
        let right = localized_discriminator(&rec, &rec, &m, &m, 1).unwrap();
        assert_eq!(left.value, 0.0);
        assert_eq!(right.value, 0.0);
        assert_eq!(left.localized_region, Some(0));
        assert_eq!(right.localized_region, Some(1));
        assert!(left.phi_label.contains("left") && right.phi_label.contains("right"));
    }

    #[test]
    fn overlapping_regions_are_rejected() {
        let mut m = uniform_medium(16);
        m.regions = vec![
            ball_region(m.grid, [0.0, 0.0, 0.0], 0.4, "a"),
            ball_region(m.grid, [0.2, 0.0, 0.0], 0.4, "b"),
        ];
        let err = region_geometry(&m, &m).unwrap_err();
        assert!(matches!(err, Error::BadRegions(_)));
    }

    #[test]
    fn enclosing_shell_disconnects_the_complement() {
        let mut m = uniform_medium(32);
        let grid = m.grid;
        let shell: Vec<usize> = (0..grid.cell_count())
            .filter(|&c| {
                let r = grid.radius(c);
                r >= 0.55 && r <= 0.9
            })
            .collect();
        m.regions = vec![Region { label: "shell".into(), cells: shell }];
        let err = region_geometry(&m, &m).unwrap_err();
        assert!(matches!(err, Error::DisconnectedComplement));
    }

    #[test]
    fn speed_contrast_outside_the_marked_regions_is_rejected() {
        let grid = GridSpec::cube(16, 6.0 / 16.0, 1.0, 1.5, 3.0).unwrap();
        let mut m1 =
            build_medium(grid, &MediumRecipe::Uniform { c0: 1.0 }, &TensorRecipe::Identity)
                .unwrap();
        let m2 = build_medium(
            grid,
            &MediumRecipe::RadialBump { c0: 1.0, amplitude: 0.2, radius: 0.7 },
            &TensorRecipe::Identity,
        )
        .unwrap();
        m1.regions = vec![ball_region(grid, [0.0, 0.0, 0.0], 0.2, "core")];
        let err = region_geometry(&m1, &m2).unwrap_err();
        assert!(matches!(err, Error::BadRegions(_)));
    }

    #[test]
    fn equal_injected_moments_with_unequal_speeds_break_the_identity() {
        let grid = GridSpec::cube(16, 6.0 / 16.0, 1.0, 1.5, 3.0).unwrap();
        let m2 = build_medium(
            grid,
            &MediumRecipe::RadialBump { c0: 1.0, amplitude: 0.3, radius: 0.7 },
            &TensorRecipe::Identity,
        )
        .unwrap();
        let mut m1 =
            build_medium(grid, &MediumRecipe::Uniform { c0: 1.0 }, &TensorRecipe::Identity)
                .unwrap();
        m1.regions = m2.regions.clone();
        let u2 = ScalarField::from_fn(grid, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            (1.0 - r2).max(0.0)
        });
        let t = synthetic_table(grid, u2, 4);

        // With the two moment tables forced equal, the localized
        // integration-by-parts value is exactly zero while the sharp mismatch
        // integral is strictly positive: no admissible pair can satisfy both,
        // which is precisely the contradiction that forces equal speeds.
        let local = localized_from_tables(&t, &t, &m1, &m2, 0).unwrap();
        assert_eq!(local.value, 0.0);
        assert!(local.violation_measure.unwrap() > 0.0);
        let global = discriminator_from_table(&t, &m1, &m2, 1).unwrap();
        assert!(global.value > 0.0);
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let grid = GridSpec::cube(12, 0.5, 1.0, 1.5, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seeds: Vec<usize> =
            (0..25).map(|_| rng.gen_range(0..grid.cell_count())).collect();
        let d2 = distance_sq_cells(grid, &seeds);
        for c in (0..grid.cell_count()).step_by(7) {
            let [ci, cj, ck] = grid.decode(c);
            let brute = seeds
                .iter()
                .map(|&s| {
                    let [si, sj, sk] = grid.decode(s);
                    let di = ci as f64 - si as f64;
                    let dj = cj as f64 - sj as f64;
                    let dk = ck as f64 - sk as f64;
                    di * di + dj * dj + dk * dk
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(d2[c], brute, "cell {c}");
        }
    }

    #[test]
    fn trace_gap_interpolates_between_different_step_counts() {
        let m = uniform_medium(16);
        let rec = bump_record(&m, &reflecting(1.2));
        let halved = bump_record(&m, &SimConfig { cfl: 0.45, ..reflecting(1.2) });
        let gap = trace_gap(&rec, &halved).unwrap();
        assert!(gap > 0.0 && gap < 0.2, "gap = {gap}");
        assert_eq!(trace_gap(&rec, &rec).unwrap(), 0.0);
    }

    #[test]
    fn moment_threshold_keeps_the_detected_index_stable_under_scaling() {
        let m = uniform_medium(24);
        let rec = bump_record(&m, &reflecting(3.4));
        let t = time_moments(&rec, 4).unwrap();
        let t_scaled = time_moments(&rec.scaled(1e-6), 4).unwrap();
        assert_eq!(t.k0_even, t_scaled.k0_even);
        assert!(t.norms[2] > EPS_MOM * t.norms[1]);
    }

    #[test]
    fn reports_export_one_csv_row_per_entry() {
        let reports = vec![
            DiscriminatorReport {
                phi_label: "x".into(),
                value: 0.25,
                k_used: 3,
                localized_region: None,
                violation_measure: None,
            },
            DiscriminatorReport {
                phi_label: "chi[core]*u^(2)".into(),
                value: -1.5e-9,
                k_used: 2,
                localized_region: Some(1),
                violation_measure: Some(0.125),
            },
        ];
        let csv = reports_to_csv(&reports);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "phi,k,region,value,violation_measure");
        assert_eq!(lines[1], "x,3,,0.25,");
        assert_eq!(lines[2], "chi[core]*u^(2),2,1,-0.0000000015,0.125");
    }
}
