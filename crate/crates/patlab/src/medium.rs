//! Acoustic media (wave speed + principal tensor), initial states, and the
//! recipes the experiments are built from.
//!
//! Every medium obeys the standing hypotheses of the recovery theory:
//! the wave speed `c` is bounded below by a positive floor and equals the
//! background `c0` outside Omega; the principal part `a` is symmetric,
//! uniformly elliptic, and exactly the identity outside a ball contained in
//! the recovery ball `B_r0`. Initial data is supported inside Omega.

use crate::error::{Error, Result};
use crate::field::{check_support_in_omega, ScalarField, TensorField, T_XY};
use crate::grid::GridSpec;
use crate::parallel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Compactly supported C^2 bump: `(1 - s^2)^3` on `|s| < 1`, zero outside.
#[inline]
pub fn bump(s: f64) -> f64 {
    let t = 1.0 - s * s;
    if t > 0.0 {
        t * t * t
    } else {
        0.0
    }
}

/// Compactly supported C^infinity bump: `exp(1 - 1/(1 - s^2))` on `|s| < 1`,
/// zero outside, equal to 1 at the center. Its spectrum decays faster than
/// any power, so waves launched from it leave almost no dispersion trail.
#[inline]
pub fn smooth_bump(s: f64) -> f64 {
    let t = 1.0 - s * s;
    if t > 1e-12 {
        (1.0 - 1.0 / t).exp()
    } else {
        0.0
    }
}

/// A labeled cell set (inclusion, layer, annulus, ...) carried along with a
/// medium so localized comparisons know where the speeds may differ.
#[derive(Clone, Debug)]
pub struct Region {
    pub label: String,
    pub cells: Vec<usize>,
}

/// Wave speed plus principal tensor on a grid.
#[derive(Clone, Debug)]
pub struct MediumSpec {
    pub grid: GridSpec,
    /// Wave speed per cell, `>= floor > 0`, equal to `c0` outside Omega.
    pub c: ScalarField,
    /// Symmetric elliptic principal part, identity outside `identity_radius`.
    pub a: TensorField,
    /// Background speed.
    pub c0: f64,
    /// Positive lower bound actually attained by `c`.
    pub floor: f64,
    /// Radius outside which `a` is exactly the identity.
    pub identity_radius: f64,
    pub regions: Vec<Region>,
}

/// Wave-speed recipes. All deviations from `c0` are supported inside Omega.
#[derive(Clone, Debug, PartialEq)]
pub enum MediumRecipe {
    /// Constant speed everywhere.
    Uniform { c0: f64 },
    /// Smooth radial bump: `c = c0 + amplitude * bump(r / radius)`.
    RadialBump { c0: f64, amplitude: f64, radius: f64 },
    /// Piecewise-constant concentric layers: `(outer_radius, speed)` from the
    /// center outwards, `c0` beyond the last layer. Pairs with the
    /// transmission-eigenvalue oracle.
    RadialLayers { c0: f64, layers: Vec<(f64, f64)> },
    /// Smooth annular dip to `speed` between the two radii (trapping-prone
    /// when the dip is deep).
    SlowAnnulus { c0: f64, r_inner: f64, r_outer: f64, speed: f64 },
    /// Radial-bump base plus a harmonically factored perturbation
    /// `amplitude * x_axis * bump(|x| / radius)`: the difference from the
    /// base medium is (coordinate polynomial) x (nonnegative envelope).
    LinearContrast {
        c0: f64,
        base_amplitude: f64,
        base_radius: f64,
        axis: usize,
        amplitude: f64,
        radius: f64,
    },
}

/// Principal-tensor recipes; the tensor is the identity outside `radius`.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorRecipe {
    Identity,
    /// `a = (1 + amplitude * bump(r / radius)) I` (diagonal, 7-point stencil).
    IsotropicBump { amplitude: f64, radius: f64 },
    /// `a = I + amplitude * bump(r / radius) (e_x e_y^T + e_y e_x^T)`
    /// (full tensor, 19-point stencil); needs `|amplitude| < 1`.
    CrossBump { amplitude: f64, radius: f64 },
}

fn sample_speed(grid: GridSpec, recipe: &MediumRecipe) -> Result<(ScalarField, f64, Vec<Region>)> {
    let (field, c0) = match recipe {
        MediumRecipe::Uniform { c0 } => (ScalarField::constant(grid, *c0), *c0),
        MediumRecipe::RadialBump { c0, amplitude, radius } => {
            check_deviation_radius(*radius, grid)?;
            let (c0v, amp, rad) = (*c0, *amplitude, *radius);
            (
                ScalarField::from_fn(grid, move |x| {
                    c0v + amp * bump(norm(x) / rad)
                }),
                c0v,
            )
        }
        MediumRecipe::RadialLayers { c0, layers } => {
            let mut prev = 0.0;
            for &(r, _) in layers {
                if r <= prev {
                    return Err(Error::InvalidMedium("layer radii must increase".into()));
                }
                prev = r;
            }
            check_deviation_radius(prev, grid)?;
            let (c0v, ls) = (*c0, layers.clone());
            (
                ScalarField::from_fn(grid, move |x| {
                    let r = norm(x);
                    for &(rad, speed) in &ls {
                        if r < rad {
                            return speed;
                        }
                    }
                    c0v
                }),
                c0v,
            )
        }
        MediumRecipe::SlowAnnulus { c0, r_inner, r_outer, speed } => {
            if !(*r_inner < *r_outer) {
                return Err(Error::InvalidMedium("annulus needs r_inner < r_outer".into()));
            }
            check_deviation_radius(*r_outer, grid)?;
            let (c0v, sp) = (*c0, *speed);
            let mid = 0.5 * (r_inner + r_outer);
            let half = 0.5 * (r_outer - r_inner);
            (
                ScalarField::from_fn(grid, move |x| {
                    c0v + (sp - c0v) * bump((norm(x) - mid) / half)
                }),
                c0v,
            )
        }
        MediumRecipe::LinearContrast {
            c0,
            base_amplitude,
            base_radius,
            axis,
            amplitude,
            radius,
        } => {
            check_deviation_radius(*base_radius, grid)?;
            check_deviation_radius(*radius, grid)?;
            if *axis > 2 {
                return Err(Error::InvalidMedium("axis must be 0, 1 or 2".into()));
            }
            let (c0v, ba, br, ax, amp, rad) = (*c0, *base_amplitude, *base_radius, *axis, *amplitude, *radius);
            (
                ScalarField::from_fn(grid, move |x| {
                    c0v + ba * bump(norm(x) / br) + amp * x[ax] * bump(norm(x) / rad)
                }),
                c0v,
            )
        }
    };
    let regions = deviation_regions(&field, c0);
    Ok((field, c0, regions))
}

fn norm(x: [f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

fn check_deviation_radius(r: f64, grid: GridSpec) -> Result<()> {
    if r > grid.r_omega + 1e-12 {
        return Err(Error::InvalidMedium(format!(
            "speed deviation radius {r} exceeds r_omega = {}; the medium must equal c0 outside Omega",
            grid.r_omega
        )));
    }
    Ok(())
}

fn deviation_regions(c: &ScalarField, c0: f64) -> Vec<Region> {
    let cells: Vec<usize> = (0..c.values.len()).filter(|&i| c.values[i] != c0).collect();
    if cells.is_empty() {
        Vec::new()
    } else {
        vec![Region { label: "speed-deviation".into(), cells }]
    }
}

fn sample_tensor(grid: GridSpec, recipe: &TensorRecipe) -> Result<(TensorField, f64)> {
    match recipe {
        TensorRecipe::Identity => Ok((TensorField::identity(grid), 0.0)),
        TensorRecipe::IsotropicBump { amplitude, radius } => {
            check_tensor_radius(*radius, grid)?;
            if *amplitude <= -1.0 {
                return Err(Error::InvalidMedium("isotropic bump would lose ellipticity".into()));
            }
            let (amp, rad) = (*amplitude, *radius);
            let t = TensorField::from_fn(grid, move |x| {
                let d = 1.0 + amp * bump(norm(x) / rad);
                [d, d, d, 0.0, 0.0, 0.0]
            });
            Ok((t, *radius))
        }
        TensorRecipe::CrossBump { amplitude, radius } => {
            check_tensor_radius(*radius, grid)?;
            if amplitude.abs() >= 1.0 {
                return Err(Error::InvalidMedium("cross bump needs |amplitude| < 1".into()));
            }
            let (amp, rad) = (*amplitude, *radius);
            let t = TensorField::from_fn(grid, move |x| {
                let mut m = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
                m[T_XY] = amp * bump(norm(x) / rad);
                m
            });
            Ok((t, *radius))
        }
    }
}

fn check_tensor_radius(r: f64, grid: GridSpec) -> Result<()> {
    if r >= grid.r0 {
        return Err(Error::InvalidMedium(format!(
            "tensor deviation radius {r} must stay inside the recovery ball r0 = {}",
            grid.r0
        )));
    }
    Ok(())
}

/// Build and validate a medium from recipes.
pub fn build_medium(grid: GridSpec, speed: &MediumRecipe, tensor: &TensorRecipe) -> Result<MediumSpec> {
    if grid.dim != 3 {
        return Err(Error::InvalidMedium("full media need a 3-d grid".into()));
    }
    let (c, c0, regions) = sample_speed(grid, speed)?;
    let (a, identity_radius) = sample_tensor(grid, tensor)?;
    let floor = c.values.iter().copied().fold(f64::INFINITY, f64::min);
    let m = MediumSpec { grid, c, a, c0, floor, identity_radius, regions };
    let report = validate_medium(&m);
    if !report.pass() {
        return Err(Error::InvalidMedium(report.violations.join("; ")));
    }
    Ok(m)
}

/// Validation result for a medium; empty `violations` means all hypotheses hold.
#[derive(Debug)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub ellipticity_floor: f64,
    pub speed_min: f64,
    pub speed_max: f64,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every standing hypothesis on a medium and report violations.
pub fn validate_medium(m: &MediumSpec) -> ValidationReport {
    let mut violations = Vec::new();
    let speed_min = m.c.values.iter().copied().fold(f64::INFINITY, f64::min);
    let speed_max = m.c.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(speed_min > 0.0) || !speed_min.is_finite() || !speed_max.is_finite() {
        violations.push(format!("wave speed must be positive and finite (min {speed_min})"));
    }
    for cell in 0..m.grid.cell_count() {
        if !m.grid.inside_omega(cell) && m.c.values[cell] != m.c0 {
            violations.push(format!(
                "speed differs from c0 outside Omega (cell radius {:.4})",
                m.grid.radius(cell)
            ));
            break;
        }
    }
    let ellipticity_floor = m.a.ellipticity_floor();
    if !(ellipticity_floor > 0.0) {
        violations.push(format!("principal tensor loses ellipticity (floor {ellipticity_floor})"));
    }
    if !m.a.identity_outside(m.identity_radius) {
        violations.push("principal tensor differs from the identity outside its stated radius".into());
    }
    if m.identity_radius >= m.grid.r0 {
        violations.push("tensor deviation must stay inside the recovery ball".into());
    }
    ValidationReport { violations, ellipticity_floor, speed_min, speed_max }
}

/// Weighted inner product `sum_{cells in B_r0} u v c^-2 h^dim`, the discrete
/// counterpart of the weighted L2 space the spectral theory lives in.
pub fn weighted_inner_product(u: &ScalarField, v: &ScalarField, m: &MediumSpec) -> f64 {
    let grid = m.grid;
    let r0 = grid.r0;
    let s = parallel::sum_indexed(grid.cell_count(), |cell| {
        if grid.radius(cell) < r0 {
            let ci = m.c.values[cell];
            u.values[cell] * v.values[cell] / (ci * ci)
        } else {
            0.0
        }
    });
    s * grid.cell_volume()
}

/// Initial state of the wave problem: pressure `f` and velocity `g`, both
/// supported inside Omega.
#[derive(Clone, Debug)]
pub struct InitialState {
    pub f: ScalarField,
    pub g: ScalarField,
}

impl InitialState {
    pub fn new(f: ScalarField, g: ScalarField) -> Result<Self> {
        check_support_in_omega(&f)?;
        check_support_in_omega(&g)?;
        Ok(InitialState { f, g })
    }

    pub fn pressure_only(f: ScalarField) -> Result<Self> {
        let g = ScalarField::zeros(f.grid);
        Self::new(f, g)
    }
}

/// Initial-pressure recipes.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialRecipe {
    Zero,
    /// Nonnegative smooth radial bump `amplitude * bump(r / radius)`.
    RadialBump { amplitude: f64, radius: f64 },
    /// Nonnegative C^infinity radial bump `amplitude * smooth_bump(r / radius)`
    /// for runs that need a dispersion-quiet wake.
    SmoothRadialBump { amplitude: f64, radius: f64 },
    /// Nonnegative radial bump `amplitude * (1 - (r/radius)^2)^power`: higher
    /// powers are smoother at the edge (C^{power-1}), trading peak width for
    /// a weaker grid-scale wake.
    PowerBump { amplitude: f64, radius: f64, power: u32 },
    /// Bump centered at `center`.
    OffsetBump { center: [f64; 3], amplitude: f64, radius: f64 },
    /// Central bump minus an annular bump, rescaled so the discrete total
    /// mass vanishes exactly. With a uniform speed this zeroes the weighted
    /// mass as well, while the radial second moment stays nonzero.
    BalancedShells { amplitude: f64, r_core: f64, r_inner: f64, r_outer: f64 },
    /// Sum of `count` random interior bumps (seeded, reproducible).
    RandomBumps { seed: u64, count: usize, amplitude: f64, radius: f64 },
}

/// Sample an initial pressure from a recipe (velocity is zero).
pub fn build_initial(grid: GridSpec, recipe: &InitialRecipe) -> Result<InitialState> {
    let f = match recipe {
        InitialRecipe::Zero => ScalarField::zeros(grid),
        InitialRecipe::RadialBump { amplitude, radius } => {
            let (amp, rad) = (*amplitude, *radius);
            ScalarField::from_fn(grid, move |x| amp * bump(norm(x) / rad))
        }
        InitialRecipe::SmoothRadialBump { amplitude, radius } => {
            let (amp, rad) = (*amplitude, *radius);
            ScalarField::from_fn(grid, move |x| amp * smooth_bump(norm(x) / rad))
        }
        InitialRecipe::PowerBump { amplitude, radius, power } => {
            if *power == 0 {
                return Err(Error::InvalidInitialData("power bump needs power >= 1".into()));
            }
            let (amp, rad, pow) = (*amplitude, *radius, *power as i32);
            ScalarField::from_fn(grid, move |x| {
                let t = 1.0 - (norm(x) / rad).powi(2);
                if t > 0.0 {
                    amp * t.powi(pow)
                } else {
                    0.0
                }
            })
        }
        InitialRecipe::OffsetBump { center, amplitude, radius } => {
            let (c, amp, rad) = (*center, *amplitude, *radius);
            ScalarField::from_fn(grid, move |x| {
                let d = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
                amp * bump(norm(d) / rad)
            })
        }
        InitialRecipe::BalancedShells { amplitude, r_core, r_inner, r_outer } => {
            if !(0.0 < *r_core && r_core <= r_inner && r_inner < r_outer) {
                return Err(Error::InvalidInitialData(
                    "balanced shells need 0 < r_core <= r_inner < r_outer".into(),
                ));
            }
            let mid = 0.5 * (r_inner + r_outer);
            let half = 0.5 * (r_outer - r_inner);
            let (amp, rc) = (*amplitude, *r_core);
            let core = ScalarField::from_fn(grid, move |x| amp * bump(norm(x) / rc));
            let shell = ScalarField::from_fn(grid, move |x| bump((norm(x) - mid) / half));
            let core_mass = parallel::sum(&core.values);
            let shell_mass = parallel::sum(&shell.values);
            if shell_mass.abs() < 1e-300 {
                return Err(Error::InvalidInitialData("annular shell missed the grid".into()));
            }
            let beta = core_mass / shell_mass;
            let mut f = core;
            f.axpy(-beta, &shell);
            f
        }
        InitialRecipe::RandomBumps { seed, count, amplitude, radius } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut centers = Vec::with_capacity(*count);
            let reach = (grid.r_omega - radius).max(0.1 * grid.r_omega);
            while centers.len() < *count {
                let c = [
                    rng.gen_range(-reach..reach),
                    rng.gen_range(-reach..reach),
                    rng.gen_range(-reach..reach),
                ];
                if norm(c) > reach {
                    continue; // keep the whole bump inside Omega
                }
                let a = rng.gen_range(0.2..1.0) * amplitude;
                centers.push((c, a));
            }
            let rad = *radius;
            ScalarField::from_fn(grid, move |x| {
                centers
                    .iter()
                    .map(|(c, a)| {
                        let d = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
                        a * bump(norm(d) / rad)
                    })
                    .sum()
            })
        }
    };
    InitialState::pressure_only(f)
}

/// Radial medium for the 1-d reduction: speed sampled at `r_i = (i + 1/2) h`.
#[derive(Clone, Debug)]
pub struct RadialMedium {
    pub grid: GridSpec,
    pub c: Vec<f64>,
    pub c0: f64,
}

/// Sample a radially symmetric recipe on a 1-d grid.
pub fn build_radial_medium(grid: GridSpec, recipe: &MediumRecipe) -> Result<RadialMedium> {
    if grid.dim != 1 {
        return Err(Error::InvalidMedium("radial media need a 1-d grid".into()));
    }
    let eval: Box<dyn Fn(f64) -> f64> = match recipe {
        MediumRecipe::Uniform { c0 } => {
            let c0 = *c0;
            Box::new(move |_| c0)
        }
        MediumRecipe::RadialBump { c0, amplitude, radius } => {
            check_deviation_radius(*radius, grid)?;
            let (c0, amp, rad) = (*c0, *amplitude, *radius);
            Box::new(move |r| c0 + amp * bump(r / rad))
        }
        MediumRecipe::RadialLayers { c0, layers } => {
            check_deviation_radius(layers.last().map(|l| l.0).unwrap_or(0.0), grid)?;
            let (c0, ls) = (*c0, layers.clone());
            Box::new(move |r| {
                for &(rad, speed) in &ls {
                    if r < rad {
                        return speed;
                    }
                }
                c0
            })
        }
        MediumRecipe::SlowAnnulus { c0, r_inner, r_outer, speed } => {
            check_deviation_radius(*r_outer, grid)?;
            let mid = 0.5 * (r_inner + r_outer);
            let half = 0.5 * (r_outer - r_inner);
            let (c0, sp) = (*c0, *speed);
            Box::new(move |r| c0 + (sp - c0) * bump((r - mid) / half))
        }
        MediumRecipe::LinearContrast { .. } => {
            return Err(Error::InvalidMedium("linear contrast is not radially symmetric".into()))
        }
    };
    let c0 = match recipe {
        MediumRecipe::Uniform { c0 }
        | MediumRecipe::RadialBump { c0, .. }
        | MediumRecipe::RadialLayers { c0, .. }
        | MediumRecipe::SlowAnnulus { c0, .. }
        | MediumRecipe::LinearContrast { c0, .. } => *c0,
    };
    let c: Vec<f64> = (0..grid.n).map(|i| eval(grid.coord(i))).collect();
    if c.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidMedium("radial speed must stay positive".into()));
    }
    Ok(RadialMedium { grid, c, c0 })
}

/// Sample an initial pressure radially (recipes must be centered).
pub fn build_radial_initial(grid: GridSpec, recipe: &InitialRecipe) -> Result<Vec<f64>> {
    let eval: Box<dyn Fn(f64) -> f64> = match recipe {
        InitialRecipe::Zero => Box::new(|_| 0.0),
        InitialRecipe::RadialBump { amplitude, radius } => {
            let (amp, rad) = (*amplitude, *radius);
            Box::new(move |r| amp * bump(r / rad))
        }
        InitialRecipe::BalancedShells { amplitude, r_core, r_inner, r_outer } => {
            // Balance against the continuum radial measure; the exact discrete
            // balance is grid-specific and only needed for the 3-d runs.
            let mid = 0.5 * (r_inner + r_outer);
            let half = 0.5 * (r_outer - r_inner);
            let (amp, rc) = (*amplitude, *r_core);
            let quad = |f: &dyn Fn(f64) -> f64| -> f64 {
                let m = 4000;
                let hh = grid.r_omega / m as f64;
                (0..m).map(|i| {
                    let r = (i as f64 + 0.5) * hh;
                    f(r) * r * r * hh
                }).sum()
            };
            let core_mass = quad(&|r| bump(r / rc));
            let shell_mass = quad(&|r| bump((r - mid) / half));
            let beta = amp * core_mass / shell_mass;
            Box::new(move |r| amp * bump(r / rc) - beta * bump((r - mid) / half))
        }
        _ => {
            return Err(Error::InvalidInitialData(
                "recipe is not radially symmetric".into(),
            ))
        }
    };
    let f: Vec<f64> = (0..grid.n).map(|i| eval(grid.coord(i))).collect();
    for i in 0..grid.n {
        if f[i] != 0.0 && grid.coord(i) >= grid.r_omega {
            return Err(Error::InvalidInitialData("radial data leaks outside Omega".into()));
        }
    }
    Ok(f)
}
