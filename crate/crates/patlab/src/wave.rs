//! Leapfrog simulation of the acoustic initial-value problem
//! `c^-2 u_tt + A u = 0`, `u(0) = f`, `u_t(0) = g`.
//!
//! The second-order update is `u^{m+1} = 2 u^m - u^{m-1} - dt^2 c^2 A u^m`,
//! started with `u^1 = u^0 - (dt^2/2) c^2 A u^0 + dt g` (exact to the same
//! order). Open boundaries add a quadratic-profile sponge absorbed through
//! the implicitly damped update
//! `(1 + s dt/2) u^{m+1} = 2 u^m - (1 - s dt/2) u^{m-1} - dt^2 c^2 A u^m`.
//! Time steps come from a Gershgorin bound on `c^2 A`, which for identity
//! tensor and constant speed reduces to the classical `dt <= h / (c sqrt 3)`.
//!
//! Observers see every accepted state, so time integrals (moments, Laplace
//! and Fourier transforms, boundary traces, local energies) accumulate
//! online without storing the history.

use crate::elliptic::{apply_elliptic, gershgorin_lambda_max, BallOperator};
use crate::error::{Error, Result};
use crate::field::{diag_comp, radial_interp, ScalarField};
use crate::grid::{face_trace, Face, GridSpec};
use crate::medium::{InitialState, MediumSpec, RadialMedium};
use crate::parallel;
use crate::solver::LinearOp;

/// Spatial truncation of the unbounded problem.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryKind {
    /// Absorbing sponge: damping `sigma = strength * clamp((|x| - (r_sim -
    /// width)) / width, 0, 1)^2`, zero strictly inside `r_sim - width`.
    Open { sponge_width: f64, sponge_strength: f64 },
    /// Hard sound wall on the sphere `|x| = r_sim` (cut-cell Dirichlet).
    ReflectingBall,
    /// Hard wall on the box edge.
    ReflectingBox,
}

impl BoundaryKind {
    /// Sponge defaults: a layer one unit thick absorbing to roughly 1e-3
    /// amplitude, leaving the recovery ball untouched. The strength keeps
    /// `sigma dt` well below one so the layer absorbs instead of reflecting.
    pub fn default_open() -> Self {
        BoundaryKind::Open { sponge_width: 1.0, sponge_strength: 8.0 }
    }
}

/// Simulation parameters.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub t_max: f64,
    /// Courant fraction in (0, 1]; `dt = cfl * 2 / sqrt(lambda_max)`.
    pub cfl: f64,
    pub boundary: BoundaryKind,
}

impl SimConfig {
    pub fn open(t_max: f64) -> Self {
        SimConfig { t_max, cfl: 0.9, boundary: BoundaryKind::default_open() }
    }
}

/// One accepted state handed to observers.
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    /// Current state on the full grid.
    pub u: &'a [f64],
    /// State one step earlier (equals `u` at step 0).
    pub u_prev: &'a [f64],
    /// Whether this is the final state of the run.
    pub last: bool,
}

/// Anything that watches the wave as it runs.
pub trait StepObserver {
    fn observe(&mut self, view: &StepView);
}

/// Final state of a run.
pub struct SimSummary {
    pub dt: f64,
    pub steps: usize,
    pub u_last: ScalarField,
    pub u_prev: ScalarField,
}

/// Largest stable step for the configured boundary.
pub fn stable_dt(m: &MediumSpec, boundary: &BoundaryKind, cfl: f64) -> Result<f64> {
    let lambda = match boundary {
        BoundaryKind::Open { .. } | BoundaryKind::ReflectingBox => gershgorin_lambda_max(m),
        BoundaryKind::ReflectingBall => {
            // theta_min = 0.5 keeps the cut-leg spectral radius within a
            // factor two of the interior stencil.
            let op = BallOperator::new(m, m.grid.r_sim, 0.5)?;
            op.lambda_max_bound(&m.c)
        }
    };
    Ok(cfl * 2.0 / lambda.sqrt())
}

fn sponge_profile(grid: GridSpec, boundary: &BoundaryKind) -> Option<Vec<f64>> {
    match boundary {
        BoundaryKind::Open { sponge_width, sponge_strength } => {
            let (w, s) = (*sponge_width, *sponge_strength);
            let start = grid.r_sim - w;
            let mut sigma = vec![0.0; grid.cell_count()];
            parallel::fill(&mut sigma, |c| {
                let x = ((grid.radius(c) - start) / w).clamp(0.0, 1.0);
                s * x * x
            });
            Some(sigma)
        }
        _ => None,
    }
}

/// Run the initial-value problem, invoking every observer on every state
/// (including the initial one).
pub fn simulate(
    m: &MediumSpec,
    init: &InitialState,
    cfg: &SimConfig,
    observers: &mut [&mut dyn StepObserver],
) -> Result<SimSummary> {
    let grid = m.grid;
    if grid.dim != 3 {
        return Err(Error::InvalidGrid("3-d simulation needs a 3-d grid".into()));
    }
    if !(cfg.cfl > 0.0 && cfg.cfl <= 1.0) {
        return Err(Error::InvalidGrid(format!("courant fraction {} outside (0, 1]", cfg.cfl)));
    }
    if !(cfg.t_max > 0.0) {
        return Err(Error::InvalidGrid("t_max must be positive".into()));
    }
    let dt_max = stable_dt(m, &cfg.boundary, cfg.cfl)?;
    let steps = (cfg.t_max / dt_max).ceil() as usize;
    let dt = cfg.t_max / steps as f64;

    match &cfg.boundary {
        BoundaryKind::ReflectingBall => simulate_masked(m, init, cfg, dt, steps, observers),
        _ => simulate_full(m, init, cfg, dt, steps, observers),
    }
}

fn notify(observers: &mut [&mut dyn StepObserver], view: &StepView) {
    for obs in observers.iter_mut() {
        obs.observe(view);
    }
}

fn check_finite(u: &[f64], step: usize) -> Result<()> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step });
    }
    Ok(())
}

fn simulate_full(
    m: &MediumSpec,
    init: &InitialState,
    cfg: &SimConfig,
    dt: f64,
    steps: usize,
    observers: &mut [&mut dyn StepObserver],
) -> Result<SimSummary> {
    let grid = m.grid;
    let n = grid.cell_count();
    let sigma = sponge_profile(grid, &cfg.boundary);
    let c2: Vec<f64> = m.c.values.iter().map(|&c| c * c).collect();

    let mut u_prev = init.f.values.clone();
    let mut au = vec![0.0; n];
    apply_elliptic(m, &u_prev, &mut au);
    let mut u_cur = vec![0.0; n];
    // u^1 = u^0 - (dt^2 / 2) c^2 A u^0 + dt g.
    parallel::fill(&mut u_cur, |i| {
        u_prev[i] - 0.5 * dt * dt * c2[i] * au[i] + dt * init.g.values[i]
    });

    notify(observers, &StepView { step: 0, t: 0.0, dt, u: &u_prev, u_prev: &u_prev, last: steps == 0 });
    notify(observers, &StepView { step: 1, t: dt, dt, u: &u_cur, u_prev: &u_prev, last: steps == 1 });

    let mut u_next = vec![0.0; n];
    for step in 2..=steps {
        apply_elliptic(m, &u_cur, &mut au);
        match &sigma {
            Some(sig) => parallel::fill(&mut u_next, |i| {
                let half = 0.5 * sig[i] * dt;
                (2.0 * u_cur[i] - (1.0 - half) * u_prev[i] - dt * dt * c2[i] * au[i]) / (1.0 + half)
            }),
            None => parallel::fill(&mut u_next, |i| {
                2.0 * u_cur[i] - u_prev[i] - dt * dt * c2[i] * au[i]
            }),
        }
        std::mem::swap(&mut u_prev, &mut u_cur);
        std::mem::swap(&mut u_cur, &mut u_next);
        if step % 25 == 0 || step == steps {
            check_finite(&u_cur, step)?;
        }
        notify(observers, &StepView {
            step,
            t: step as f64 * dt,
            dt,
            u: &u_cur,
            u_prev: &u_prev,
            last: step == steps,
        });
    }
    Ok(SimSummary {
        dt,
        steps,
        u_last: ScalarField { grid, values: u_cur },
        u_prev: ScalarField { grid, values: u_prev },
    })
}

fn simulate_masked(
    m: &MediumSpec,
    init: &InitialState,
    _cfg: &SimConfig,
    dt: f64,
    steps: usize,
    observers: &mut [&mut dyn StepObserver],
) -> Result<SimSummary> {
    let grid = m.grid;
    let op = BallOperator::new(m, grid.r_sim, 0.5)?;
    let nu = op.unknowns();
    let c2: Vec<f64> = op.cells.iter().map(|&c| m.c.values[c] * m.c.values[c]).collect();

    let mut u_prev = op.restrict(&init.f.values);
    let mut au = vec![0.0; nu];
    op.apply(&u_prev, &mut au);
    let g = op.restrict(&init.g.values);
    let mut u_cur = vec![0.0; nu];
    parallel::fill(&mut u_cur, |i| u_prev[i] - 0.5 * dt * dt * c2[i] * au[i] + dt * g[i]);

    // Full-grid mirrors for the observers (exterior cells stay zero).
    let n = grid.cell_count();
    let mut full_prev = vec![0.0; n];
    let mut full_cur = vec![0.0; n];
    let scatter = |x: &[f64], full: &mut [f64]| {
        for (i, &c) in op.cells.iter().enumerate() {
            full[c] = x[i];
        }
    };
    scatter(&u_prev, &mut full_prev);
    scatter(&u_cur, &mut full_cur);
    notify(observers, &StepView { step: 0, t: 0.0, dt, u: &full_prev, u_prev: &full_prev, last: steps == 0 });
    notify(observers, &StepView { step: 1, t: dt, dt, u: &full_cur, u_prev: &full_prev, last: steps == 1 });

    let mut u_next = vec![0.0; nu];
    for step in 2..=steps {
        op.apply(&u_cur, &mut au);
        parallel::fill(&mut u_next, |i| 2.0 * u_cur[i] - u_prev[i] - dt * dt * c2[i] * au[i]);
        std::mem::swap(&mut u_prev, &mut u_cur);
        std::mem::swap(&mut u_cur, &mut u_next);
        if step % 25 == 0 || step == steps {
            check_finite(&u_cur, step)?;
        }
        scatter(&u_prev, &mut full_prev);
        scatter(&u_cur, &mut full_cur);
        notify(observers, &StepView {
            step,
            t: step as f64 * dt,
            dt,
            u: &full_cur,
            u_prev: &full_prev,
            last: step == steps,
        });
    }
    scatter(&u_prev, &mut full_prev);
    scatter(&u_cur, &mut full_cur);
    Ok(SimSummary {
        dt,
        steps,
        u_last: ScalarField { grid, values: full_cur },
        u_prev: ScalarField { grid, values: full_prev },
    })
}

/// Records the averaged field on the Omega boundary faces at every step.
pub struct TraceRecorder {
    pub faces: Vec<Face>,
    pub times: Vec<f64>,
    /// One row per step, one column per face.
    pub rows: Vec<Vec<f64>>,
}

impl TraceRecorder {
    pub fn new(grid: GridSpec) -> Self {
        TraceRecorder { faces: grid.boundary_faces(), times: Vec::new(), rows: Vec::new() }
    }

    /// Spatial mean of the trace at each recorded time.
    pub fn means(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }
}

impl StepObserver for TraceRecorder {
    fn observe(&mut self, view: &StepView) {
        let mut row = vec![0.0; self.faces.len()];
        face_trace(view.u, &self.faces, &mut row);
        self.times.push(view.t);
        self.rows.push(row);
    }
}

/// Stores full-grid snapshots every `stride` steps.
pub struct FrameRecorder {
    pub stride: usize,
    pub times: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl FrameRecorder {
    pub fn new(stride: usize) -> Self {
        FrameRecorder { stride: stride.max(1), times: Vec::new(), frames: Vec::new() }
    }
}

impl StepObserver for FrameRecorder {
    fn observe(&mut self, view: &StepView) {
        if view.step % self.stride == 0 || view.last {
            self.times.push(view.t);
            self.frames.push(view.u.to_vec());
        }
    }
}

/// Discrete energy inside `|x| < radius` at the half step: kinetic part from
/// the backward difference, potential part from the *staggered* Dirichlet
/// form `1/2 B(u, u_prev)` with harmonic-mean faces. This is the invariant
/// the undamped leapfrog conserves exactly, so conservative runs hold it to
/// roundoff instead of oscillating at first order in `dt`.
pub fn local_energy(m: &MediumSpec, u: &[f64], u_prev: &[f64], dt: f64, radius: f64) -> f64 {
    let grid = m.grid;
    let h3 = grid.cell_volume();
    let inv_h = 1.0 / grid.h;
    let a = &m.a;
    let diagonal_only = a.is_diagonal();
    let total = parallel::sum_indexed(grid.cell_count(), |c| {
        if grid.radius(c) >= radius {
            return 0.0;
        }
        let ci = m.c.values[c];
        let ut = (u[c] - u_prev[c]) / dt;
        let mut e = 0.5 * ut * ut / (ci * ci);
        let ac = a.at(c);
        for axis in 0..3 {
            if let Some(d) = grid.neighbor(c, axis, 1) {
                let face = 2.0 * ac[diag_comp(axis)] * a.at(d)[diag_comp(axis)]
                    / (ac[diag_comp(axis)] + a.at(d)[diag_comp(axis)]);
                let du = (u[d] - u[c]) * inv_h;
                let dv = (u_prev[d] - u_prev[c]) * inv_h;
                e += 0.5 * face * du * dv;
            }
        }
        if !diagonal_only {
            let grad = |w: &[f64], axis: usize| -> f64 {
                let p = grid.neighbor(c, axis, 1).map_or(0.0, |d| w[d]);
                let mm = grid.neighbor(c, axis, -1).map_or(0.0, |d| w[d]);
                (p - mm) * 0.5 * inv_h
            };
            let gu = [grad(u, 0), grad(u, 1), grad(u, 2)];
            let gv = [grad(u_prev, 0), grad(u_prev, 1), grad(u_prev, 2)];
            e += 0.5
                * (ac[3] * (gu[0] * gv[1] + gu[1] * gv[0])
                    + ac[4] * (gu[0] * gv[2] + gu[2] * gv[0])
                    + ac[5] * (gu[1] * gv[2] + gu[2] * gv[1]));
        }
        e
    });
    total * h3
}

/// Tracks the local energy over time.
pub struct EnergyRecorder<'a> {
    m: &'a MediumSpec,
    pub radius: f64,
    pub every: usize,
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
}

impl<'a> EnergyRecorder<'a> {
    pub fn new(m: &'a MediumSpec, radius: f64, every: usize) -> Self {
        EnergyRecorder { m, radius, every: every.max(1), times: Vec::new(), energies: Vec::new() }
    }
}

impl StepObserver for EnergyRecorder<'_> {
    fn observe(&mut self, view: &StepView) {
        if view.step % self.every == 0 || view.last {
            self.times.push(view.t);
            self.energies
                .push(local_energy(self.m, view.u, view.u_prev, view.dt, self.radius));
        }
    }
}

/// Decay classification of a local-energy history.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayClass {
    /// Clean exponential decay observed over several e-folds.
    Normal,
    /// Too slow or too short to certify decay; trapping is possible.
    PossiblyTrapping,
    /// Energy collapsed to the floating-point floor (strong Huygens behavior).
    FiniteExtinction,
}

/// Result of fitting `E(t) ~ E0 exp(-2 delta t)`.
#[derive(Clone, Copy, Debug)]
pub struct DecayFit {
    /// Estimated decay rate of the *field* (half the energy log-slope over
    /// the fitted window). `INFINITY` when the collapse happened faster than
    /// the energy sampling could resolve.
    pub delta_hat: f64,
    pub class: DecayClass,
    pub samples_used: usize,
    /// Post-peak minimum of the energy history. On a discretized run this is
    /// the numerical residue level (grid dispersion, boundary leakage); it
    /// reaches zero only when the late field vanishes identically.
    pub noise_floor: f64,
}

pub(crate) const DECAY_WINDOW_HIGH: f64 = 1e-2;
pub(crate) const DECAY_WINDOW_LOW: f64 = 1e-10;
/// Energy must fall by this factor from its peak (a factor ~17 in field
/// amplitude) before the fit certifies exponential decay. Lingering energy
/// stays within a decade of its peak over any practical horizon, while decay
/// runs only stop falling at the grid-dispersion floor, which even coarse
/// grids put nearly three decades down.
const CERTIFIED_DROP: f64 = 3e2;
/// Post-peak samples within one decade of the noise floor are excluded from
/// the slope fit: once the history flattens onto the residue level the flat
/// segment only dilutes the slope of the genuine dive.
const FLOOR_GUARD: f64 = 10.0;

/// Least-squares fit of the energy log-slope over the window
/// `[1e-10, 1e-2] * peak` after the peak, trimmed of samples that sit on the
/// post-peak noise floor.
///
/// Classification: energy that falls through the bottom of the window
/// (`1e-10 * peak`) counts as finite-time extinction; a total post-peak drop
/// of at least `1e4` with a positive rate certifies normal decay; anything
/// shallower is flagged as possibly trapping (with the shallow rate reported,
/// near zero for genuinely lingering energy).
pub fn fit_decay(times: &[f64], energies: &[f64]) -> Result<DecayFit> {
    if times.len() != energies.len() || times.len() < 4 {
        return Err(Error::BadRegions("decay fit needs at least 4 energy samples".into()));
    }
    let (peak_idx, peak) = energies
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &e)| if e > acc.1 { (i, e) } else { acc });
    if !(peak > 0.0) {
        return Err(Error::BadRegions("energy history is identically zero".into()));
    }
    let floor = energies[peak_idx..].iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
    let extinct = floor <= DECAY_WINDOW_LOW * peak;
    let lo_threshold = (DECAY_WINDOW_LOW * peak).max(FLOOR_GUARD * floor);
    let window: Vec<(f64, f64)> = (peak_idx..times.len())
        .filter(|&i| energies[i] > lo_threshold && energies[i] <= DECAY_WINDOW_HIGH * peak)
        .map(|i| (times[i], energies[i].ln()))
        .collect();
    let fit_slope = |pts: &[(f64, f64)]| -> f64 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    };
    let delta_hat = if window.len() >= 2 {
        -0.5 * fit_slope(&window)
    } else {
        // The dive crossed the whole window between successive samples (or
        // never entered it). Fall back to the two-point slope across the
        // drop, or to the full positive tail when nothing dropped.
        let a = (peak_idx..times.len())
            .rev()
            .find(|&i| energies[i] > DECAY_WINDOW_HIGH * peak)
            .unwrap_or(peak_idx);
        match (a + 1..times.len()).find(|&i| energies[i] <= lo_threshold) {
            Some(b) if energies[b] > 0.0 => {
                (energies[a] / energies[b]).ln() / (2.0 * (times[b] - times[a]))
            }
            Some(_) => f64::INFINITY,
            None => {
                let tail: Vec<(f64, f64)> = (peak_idx..times.len())
                    .filter(|&i| energies[i] > 0.0)
                    .map(|i| (times[i], energies[i].ln()))
                    .collect();
                if tail.len() >= 2 { -0.5 * fit_slope(&tail) } else { 0.0 }
            }
        }
    };
    let class = if extinct {
        DecayClass::FiniteExtinction
    } else if delta_hat > 0.0 && peak >= CERTIFIED_DROP * floor {
        DecayClass::Normal
    } else {
        DecayClass::PossiblyTrapping
    };
    Ok(DecayFit { delta_hat, class, samples_used: window.len(), noise_floor: floor })
}

/// What [`record_simulation`] keeps while the wave runs.
#[derive(Clone, Debug)]
pub struct RecordConfig {
    /// Keep an interior snapshot every this many steps (1 = every step).
    pub frame_stride: usize,
    /// Whether to keep interior frames at all. Boundary traces and energies
    /// are always kept; frames dominate memory, so long runs that only need
    /// decay classification switch them off.
    pub keep_frames: bool,
    /// Evaluate the local energy every this many steps.
    pub energy_every: usize,
}

impl Default for RecordConfig {
    fn default() -> Self {
        RecordConfig { frame_stride: 1, keep_frames: true, energy_every: 5 }
    }
}

/// Time-sampled output of a run: the field trace on the Omega boundary at
/// every step, optional interior snapshots restricted to the recovery ball
/// `|x| < r0`, and the local-energy history inside that ball.
#[derive(Clone, Debug)]
pub struct SimulationRecord {
    pub grid: GridSpec,
    pub dt: f64,
    /// Instants of the boundary-trace rows (every accepted step).
    pub times: Vec<f64>,
    pub faces: Vec<Face>,
    /// One row per instant, one column per boundary face.
    pub boundary_trace: Vec<Vec<f64>>,
    /// Cells with `|x| < r0`, the columns of `interior_frames`.
    pub interior_cells: Vec<usize>,
    /// Instants of the kept interior frames.
    pub frame_times: Vec<f64>,
    /// One row per kept instant, one column per interior cell.
    pub interior_frames: Option<Vec<Vec<f64>>>,
    pub energy_times: Vec<f64>,
    pub energy_history: Vec<f64>,
}

impl SimulationRecord {
    /// Fit the exponential decay of the stored energy history.
    pub fn decay_fit(&self) -> Result<DecayFit> {
        fit_decay(&self.energy_times, &self.energy_history)
    }

    /// Same record with every stored sample multiplied by `alpha`
    /// (energies by `alpha^2`), as produced by scaling the initial data.
    pub fn scaled(&self, alpha: f64) -> SimulationRecord {
        let mut out = self.clone();
        for row in &mut out.boundary_trace {
            row.iter_mut().for_each(|v| *v *= alpha);
        }
        if let Some(frames) = &mut out.interior_frames {
            for row in frames {
                row.iter_mut().for_each(|v| *v *= alpha);
            }
        }
        out.energy_history.iter_mut().for_each(|e| *e *= alpha * alpha);
        out
    }
}

struct RecordObserver<'a> {
    m: &'a MediumSpec,
    cfg: RecordConfig,
    rec: SimulationRecord,
}

impl StepObserver for RecordObserver<'_> {
    fn observe(&mut self, view: &StepView) {
        let mut row = vec![0.0; self.rec.faces.len()];
        face_trace(view.u, &self.rec.faces, &mut row);
        self.rec.times.push(view.t);
        self.rec.boundary_trace.push(row);
        if self.cfg.keep_frames && (view.step % self.cfg.frame_stride == 0 || view.last) {
            let frame = self.rec.interior_cells.iter().map(|&c| view.u[c]).collect();
            self.rec.frame_times.push(view.t);
            self.rec.interior_frames.as_mut().unwrap().push(frame);
        }
        if view.step % self.cfg.energy_every == 0 || view.last {
            self.rec.energy_times.push(view.t);
            self.rec.energy_history.push(local_energy(
                self.m,
                view.u,
                view.u_prev,
                view.dt,
                self.m.grid.r0,
            ));
        }
    }
}

/// Run the initial-value problem and package boundary trace, interior frames
/// and energy history into one record.
pub fn record_simulation(
    m: &MediumSpec,
    init: &InitialState,
    cfg: &SimConfig,
    rc: &RecordConfig,
) -> Result<SimulationRecord> {
    let rc = RecordConfig {
        frame_stride: rc.frame_stride.max(1),
        energy_every: rc.energy_every.max(1),
        ..rc.clone()
    };
    let rec = SimulationRecord {
        grid: m.grid,
        dt: 0.0,
        times: Vec::new(),
        faces: m.grid.boundary_faces(),
        boundary_trace: Vec::new(),
        interior_cells: m.grid.cells_within(m.grid.r0),
        frame_times: Vec::new(),
        interior_frames: if rc.keep_frames { Some(Vec::new()) } else { None },
        energy_times: Vec::new(),
        energy_history: Vec::new(),
    };
    let mut obs = RecordObserver { m, cfg: rc, rec };
    let summary = simulate(m, init, cfg, &mut [&mut obs])?;
    obs.rec.dt = summary.dt;
    Ok(obs.rec)
}

/// Radial reduction `v = r u` of the constant-tensor problem:
/// `v_tt = c(r)^2 v_rr` with `v(-r) = -v(r)` at the origin and a
/// characteristic (transparent) outflow at the outer edge basing the update
/// on `v(t, R - c0 dt)`.
pub struct RadialSummary {
    pub dt: f64,
    pub steps: usize,
    /// Final `u = v / r` at the radial cells.
    pub u_last: Vec<f64>,
}

/// Run the radial reduction; the observer sees `(step, t, u)` with
/// `u = v / r` at the radial cells.
pub fn simulate_radial(
    rm: &RadialMedium,
    f: &[f64],
    t_max: f64,
    cfl: f64,
    mut observe: impl FnMut(usize, f64, &[f64]),
) -> Result<RadialSummary> {
    let grid = rm.grid;
    if grid.dim != 1 {
        return Err(Error::InvalidGrid("radial run needs a 1-d grid".into()));
    }
    let n = grid.n;
    assert_eq!(f.len(), n);
    let h = grid.h;
    let c_max = rm.c.iter().copied().fold(0.0, f64::max);
    let dt_max = cfl * h / c_max;
    let steps = (t_max / dt_max).ceil() as usize;
    let dt = t_max / steps as f64;

    let r: Vec<f64> = (0..n).map(|i| grid.coord(i)).collect();
    let mut v_prev: Vec<f64> = (0..n).map(|i| r[i] * f[i]).collect();
    // v^1 = v^0 + (dt^2 / 2) c^2 v_rr (zero initial velocity).
    let vrr = |v: &[f64], i: usize| -> f64 {
        let left = if i == 0 { -v[0] } else { v[i - 1] };
        let right = if i + 1 < n { v[i + 1] } else { 0.0 };
        (left - 2.0 * v[i] + right) / (h * h)
    };
    let mut v_cur = vec![0.0; n];
    for i in 0..n - 1 {
        v_cur[i] = v_prev[i] + 0.5 * dt * dt * rm.c[i] * rm.c[i] * vrr(&v_prev, i);
    }
    v_cur[n - 1] = radial_interp(&grid, &v_prev, r[n - 1] - rm.c0 * dt);

    let emit = |v: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.extend((0..n).map(|i| v[i] / r[i]));
    };
    let mut u_buf = Vec::with_capacity(n);
    emit(&v_prev, &mut u_buf);
    observe(0, 0.0, &u_buf);
    emit(&v_cur, &mut u_buf);
    observe(1, dt, &u_buf);

    let mut v_next = vec![0.0; n];
    for step in 2..=steps {
        for i in 0..n - 1 {
            v_next[i] = 2.0 * v_cur[i] - v_prev[i] + dt * dt * rm.c[i] * rm.c[i] * vrr(&v_cur, i);
        }
        v_next[n - 1] = radial_interp(&grid, &v_cur, r[n - 1] - rm.c0 * dt);
        std::mem::swap(&mut v_prev, &mut v_cur);
        std::mem::swap(&mut v_cur, &mut v_next);
        if step % 50 == 0 && v_cur.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        emit(&v_cur, &mut u_buf);
        observe(step, step as f64 * dt, &u_buf);
    }
    emit(&v_cur, &mut u_buf);
    Ok(RadialSummary { dt, steps, u_last: u_buf })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{build_initial, build_medium, build_radial_medium, InitialRecipe, MediumRecipe, TensorRecipe};
    use approx::assert_relative_eq;

    fn setup(n: usize, speed: MediumRecipe) -> (MediumSpec, InitialState) {
        let grid = GridSpec::cube(n, 6.0 / n as f64, 1.0, 1.5, 3.0).unwrap();
        let m = build_medium(grid, &speed, &TensorRecipe::Identity).unwrap();
        let init = build_initial(grid, &InitialRecipe::RadialBump { amplitude: 1.0, radius: 0.5 }).unwrap();
        (m, init)
    }

    #[test]
    fn stable_dt_matches_the_classical_formula() {
        let (m, _) = setup(16, MediumRecipe::Uniform { c0: 2.0 });
        let dt = stable_dt(&m, &BoundaryKind::ReflectingBox, 0.9).unwrap();
        let classical = 0.9 * m.grid.h / (2.0 * 3.0f64.sqrt());
        assert_relative_eq!(dt, classical, max_relative = 1e-12);
    }

    #[test]
    fn leapfrog_is_time_reversible() {
        let (m, init) = setup(24, MediumRecipe::RadialBump { c0: 1.0, amplitude: 0.2, radius: 0.8 });
        let cfg = SimConfig { t_max: 0.8, cfl: 0.9, boundary: BoundaryKind::ReflectingBox };
        let fwd = simulate(&m, &init, &cfg, &mut []).unwrap();
        // Swap the last two states and step the same number of times.
        let back_init = InitialState { f: fwd.u_last.clone(), g: ScalarField::zeros(m.grid) };
        // Rebuild the reversed run manually: v^0 = u^N, v^1 = u^{N-1}.
        let grid = m.grid;
        let c2: Vec<f64> = m.c.values.iter().map(|&c| c * c).collect();
        let mut v_prev = fwd.u_last.values.clone();
        let mut v_cur = fwd.u_prev.values.clone();
        let mut av = vec![0.0; grid.cell_count()];
        let mut v_next = vec![0.0; grid.cell_count()];
        for _ in 0..fwd.steps - 1 {
            apply_elliptic(&m, &v_cur, &mut av);
            for i in 0..grid.cell_count() {
                v_next[i] = 2.0 * v_cur[i] - v_prev[i] - fwd.dt * fwd.dt * c2[i] * av[i];
            }
            std::mem::swap(&mut v_prev, &mut v_cur);
            std::mem::swap(&mut v_cur, &mut v_next);
        }
        let scale = init.f.inf_norm();
        for i in 0..grid.cell_count() {
            assert!(
                (v_cur[i] - init.f.values[i]).abs() <= 1e-9 * scale,
                "time reversal drifted at cell {i}"
            );
        }
        drop(back_init);
    }

    #[test]
    fn wavefront_respects_the_causal_cone() {
        let (m, init) = setup(32, MediumRecipe::Uniform { c0: 1.0 });
        let t_max = 1.0;
        let cfg = SimConfig { t_max, cfl: 0.9, boundary: BoundaryKind::default_open() };
        let out = simulate(&m, &init, &cfg, &mut []).unwrap();
        let peak = init.f.inf_norm();
        // Beyond support + c t the continuum field vanishes; the scheme leaves
        // an evanescent dispersive precursor that dies off over a few cells.
        let mut shells = [0.0f64; 4];
        for c in 0..m.grid.cell_count() {
            let r = m.grid.radius(c);
            for (s, shell) in shells.iter_mut().enumerate() {
                if r > 0.5 + t_max + 0.2 * (s as f64 + 1.0) {
                    *shell = shell.max(out.u_last.values[c].abs());
                }
            }
        }
        assert!(shells[0] <= 2e-3 * peak, "{:.3e} just beyond the cone", shells[0]);
        assert!(
            shells[3] <= 1e-3 * shells[0],
            "no evanescent falloff: {shells:?}"
        );
        assert!(shells[3] <= 5e-7 * peak, "{:.3e} far beyond the cone", shells[3]);
    }

    #[test]
    fn reflecting_box_conserves_energy() {
        let (m, init) = setup(24, MediumRecipe::Uniform { c0: 1.0 });
        let mut energy = EnergyRecorder::new(&m, 100.0, 5); // whole box
        let cfg = SimConfig { t_max: 1.5, cfl: 0.5, boundary: BoundaryKind::ReflectingBox };
        {
            let mut obs: Vec<&mut dyn StepObserver> = vec![&mut energy];
            simulate(&m, &init, &cfg, &mut obs).unwrap();
        }
        let e0 = energy.energies[1]; // t = 0 samples the unstaggered form
        for &e in &energy.energies[1..] {
            assert_relative_eq!(e, e0, max_relative = 1e-10);
        }
    }

    #[test]
    fn sponge_drains_the_local_energy() {
        // By t = 9 the primary wave and its first sponge echo have both left
        // the recovery ball. What remains is the grid's dispersive floor:
        // near-Nyquist modes with vanishing group velocity, whose energy at
        // this resolution sits around 2e-5 of the peak and shrinks with h.
        let (m, init) = setup(32, MediumRecipe::Uniform { c0: 1.0 });
        let mut energy = EnergyRecorder::new(&m, m.grid.r0, 2);
        let cfg = SimConfig::open(9.0);
        {
            let mut obs: Vec<&mut dyn StepObserver> = vec![&mut energy];
            simulate(&m, &init, &cfg, &mut obs).unwrap();
        }
        let peak = energy.energies.iter().copied().fold(0.0, f64::max);
        let last = *energy.energies.last().unwrap();
        assert!(
            last <= 1e-4 * peak,
            "local energy only decayed to {last:.3e} of peak {peak:.3e}"
        );
    }

    #[test]
    fn decay_fit_recovers_a_synthetic_rate() {
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let energies: Vec<f64> = times.iter().map(|&t| 3.0 * (-2.0 * 0.8 * t).exp()).collect();
        let fit = fit_decay(&times, &energies).unwrap();
        assert_eq!(fit.class, DecayClass::Normal);
        assert_relative_eq!(fit.delta_hat, 0.8, max_relative = 1e-6);
    }

    #[test]
    fn decay_fit_flags_lingering_energy() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.05).collect();
        let energies: Vec<f64> = times.iter().map(|&t| 1.0 / (1.0 + 0.01 * t)).collect();
        let fit = fit_decay(&times, &energies).unwrap();
        assert_eq!(fit.class, DecayClass::PossiblyTrapping);
    }

    #[test]
    fn decay_fit_flags_extinction() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let energies: Vec<f64> = times
            .iter()
            .map(|&t| if t < 4.0 { (-6.0 * t).exp() } else { 1e-30 })
            .collect();
        let fit = fit_decay(&times, &energies).unwrap();
        assert_eq!(fit.class, DecayClass::FiniteExtinction);
    }

    #[test]
    fn radial_run_matches_the_3d_run_on_the_measurement_sphere() {
        let n = 64;
        let grid = GridSpec::cube(n, 6.0 / n as f64, 1.0, 1.5, 3.0).unwrap();
        let speed = MediumRecipe::RadialBump { c0: 1.0, amplitude: 0.2, radius: 0.8 };
        let m = build_medium(grid, &speed, &TensorRecipe::Identity).unwrap();
        let init = build_initial(grid, &InitialRecipe::RadialBump { amplitude: 1.0, radius: 0.7 }).unwrap();

        let t_max = 1.6;
        let mut trace = TraceRecorder::new(grid);
        {
            let mut obs: Vec<&mut dyn StepObserver> = vec![&mut trace];
            simulate(&m, &init, &SimConfig::open(t_max), &mut obs).unwrap();
        }
        let means = trace.means();

        let rgrid = GridSpec::radial(512, 3.0 / 512.0, 1.0, 1.5, 2.95).unwrap();
        let rm = build_radial_medium(rgrid, &speed).unwrap();
        let rf: Vec<f64> = (0..rgrid.n)
            .map(|i| crate::medium::bump(rgrid.coord(i) / 0.7))
            .collect();
        // The trace faces straddle the sphere, so compare the radial solution
        // at each face's own midpoint radius, averaged the same way.
        let face_radii: Vec<f64> = trace
            .faces
            .iter()
            .map(|f| (f.midpoint[0].powi(2) + f.midpoint[1].powi(2) + f.midpoint[2].powi(2)).sqrt())
            .collect();
        let mut radial_at: Vec<(f64, f64)> = Vec::new();
        simulate_radial(&rm, &rf, t_max, 0.9, |_s, t, u| {
            let mean = face_radii.iter().map(|&r| radial_interp(&rgrid, u, r)).sum::<f64>()
                / face_radii.len() as f64;
            radial_at.push((t, mean));
        })
        .unwrap();

        // Compare on a common time grid by nearest-sample lookup.
        let peak = means.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let mut worst: f64 = 0.0;
        for (i, &t) in trace.times.iter().enumerate() {
            let j = radial_at
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    (a.1 .0 - t).abs().partial_cmp(&(b.1 .0 - t).abs()).unwrap()
                })
                .unwrap()
                .0;
            worst = worst.max((means[i] - radial_at[j].1).abs() / peak);
        }
        // Observed 0.044 at this resolution; the gap is 3-d mesh dispersion.
        assert!(worst <= 0.06, "3-d vs radial mismatch {worst:.3}");
    }

    #[test]
    fn radial_outflow_is_transparent() {
        let rgrid = GridSpec::radial(400, 2.5 / 400.0, 1.0, 1.5, 2.45).unwrap();
        let rm = build_radial_medium(rgrid, &MediumRecipe::Uniform { c0: 1.0 }).unwrap();
        let f: Vec<f64> = (0..rgrid.n)
            .map(|i| crate::medium::bump(rgrid.coord(i) / 0.5))
            .collect();
        // After c t >> R the bump has left; u should be tiny everywhere.
        let out = simulate_radial(&rm, &f, 8.0, 0.9, |_, _, _| {}).unwrap();
        let peak = f.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let residual = out.u_last.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(residual <= 2e-3 * peak, "outflow reflected {residual:.3e}");
    }
}
