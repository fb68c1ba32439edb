//! Time integration by Lie splitting: explicit, upwinded, flux-form
//! chemotactic advection and reactions, then an implicit backward-Euler
//! diffusion solve for each unknown. The explicit stage is held positive by
//! the time-step choice and the implicit stage preserves positivity and mass
//! (M-matrix), which the monitor suite leans on.

use crate::elliptic::shifted_diffusion_solve;
use crate::grid::{divergence, face_gradient, integrate, Field, FaceData};
use crate::model::{compute_z, sample_source, validate_assumption1, ModelParams, Scenario, ValidationReport};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("scenario fails admissibility: {0}")]
    AssumptionViolated(String),
    #[error("initial v is not above the positivity floor (min v0 = {min_v0}, floor = {floor})")]
    InitialFloor { min_v0: f64, floor: f64 },
    #[error("quadrature requires lambda < 1, got {0}")]
    LambdaOne(f64),
}

/// Simulation state at one instant.
#[derive(Debug, Clone)]
pub struct State {
    pub t: f64,
    pub u: Field,
    pub v: Field,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepStatus {
    Ok,
    Blowup(String),
    PositivityFailure(String),
    FloorHit(String),
}

impl StepStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, StepStatus::Ok)
    }
}

/// Per-step diagnostics; `mass_sink` and `mass_source` are evaluated at the
/// exact stage values the explicit update used, so the discrete mass ledger
/// closes to rounding.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub t: f64,
    pub dt_used: f64,
    pub mass_u: f64,
    pub mass_sink: f64,
    pub mass_source: f64,
    pub min_v: f64,
    pub min_v_pos: [f64; 2],
    pub max_u: f64,
    pub max_u_pos: [f64; 2],
    pub max_z: f64,
    pub max_z_pos: [f64; 2],
    pub cfl_ratio: f64,
    pub status: StepStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrajectoryStatus {
    Completed,
    Blowup(String),
    PositivityFailure(String),
    FloorHit(String),
    StepLimitExceeded,
}

impl TrajectoryStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, TrajectoryStatus::Completed)
    }
}

/// Time history of a run: diagnostics for every accepted step (row 0 is the
/// initial state) plus full snapshots at the configured stride. The final
/// state is always the last snapshot.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub rows: Vec<StepReport>,
    pub snapshots: Vec<State>,
    pub status: TrajectoryStatus,
    pub horizon: f64,
    pub mean_dt: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.snapshots.last().expect("trajectory always holds the initial state")
    }

    pub fn initial_row(&self) -> &StepReport {
        &self.rows[0]
    }
}

/// Solver knobs the stepper needs beyond the model parameters.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    pub floor: f64,
    pub u_blow: f64,
    pub cg_tol: f64,
    pub cg_jacobi: bool,
}

impl StepOptions {
    pub fn from_scenario(s: &Scenario) -> StepOptions {
        StepOptions {
            floor: s.solver.v_floor,
            u_blow: s.solver.u_blow,
            cg_tol: s.solver.cg_tol,
            cg_jacobi: s.solver.cg_jacobi,
        }
    }
}

/// Upwind face flux chi * u_up * (grad log v)_face for the chemotactic term.
/// Boundary faces carry zero flux.
pub fn advection_flux(u: &Field, v: &Field, chi: f64) -> FaceData {
    let log_v = v.map(f64::ln);
    let drift = face_gradient(&log_v);
    upwind_flux(u, &drift, chi)
}

fn upwind_flux(u: &Field, drift: &FaceData, chi: f64) -> FaceData {
    let g = *u.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let mut flux = FaceData::zeros(&g);
    for j in 0..ny {
        for i in 1..nx {
            let d = chi * drift.x[j * (nx + 1) + i];
            let up = if d >= 0.0 { u.at(i - 1, j) } else { u.at(i, j) };
            flux.x[j * (nx + 1) + i] = d * up;
        }
    }
    if g.dim() == 2 {
        for j in 1..ny {
            for i in 0..nx {
                let d = chi * drift.y[j * nx + i];
                let up = if d >= 0.0 { u.at(i, j - 1) } else { u.at(i, j) };
                flux.y[j * nx + i] = d * up;
            }
        }
    }
    flux
}

/// Largest admissible step: safety * min of the advective CFL bound
/// h / (2 d max|chi grad log v|), the reaction bound 1 / (2 (1 + sigma max v)),
/// and dt_max. Returns the raw value; the caller treats anything below
/// dt_min as a collapse.
pub fn choose_dt(state: &State, params: &ModelParams, solver: &crate::model::SolverSettings) -> f64 {
    let g = state.v.grid();
    if !(state.v.min() > solver.v_floor) {
        return 0.0;
    }
    let log_v = state.v.map(f64::ln);
    let drift = face_gradient(&log_v);
    let max_drift = params.chi * drift.max_abs();
    let adv_bound = if max_drift > 0.0 {
        g.h_min() / (2.0 * g.dim() as f64 * max_drift)
    } else {
        f64::INFINITY
    };
    let rate = 1.0 + params.sigma * state.v.max();
    let react_bound = 0.5 / rate;
    solver.safety * adv_bound.min(react_bound).min(solver.dt_max)
}

fn pow_lambda(v: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        1.0
    } else if lambda == 1.0 {
        v
    } else {
        v.powf(lambda)
    }
}

/// One Lie-split step: explicit advection + reactions, then implicit
/// diffusion for u and v. Returns the old state unchanged when the step is
/// rejected (non-ok status).
pub fn step(
    state: &State,
    params: &ModelParams,
    phi_t: &Field,
    psi_t: &Field,
    dt: f64,
    opts: &StepOptions,
) -> (State, StepReport) {
    let g = *state.u.grid();
    let n = g.n_cells();

    let mut report = StepReport {
        t: state.t + dt,
        dt_used: dt,
        mass_u: f64::NAN,
        mass_sink: f64::NAN,
        mass_source: f64::NAN,
        min_v: f64::NAN,
        min_v_pos: [0.0, 0.0],
        max_u: f64::NAN,
        max_u_pos: [0.0, 0.0],
        max_z: f64::NAN,
        max_z_pos: [0.0, 0.0],
        cfl_ratio: f64::NAN,
        status: StepStatus::Ok,
    };

    if !(state.v.min() > opts.floor) {
        report.status = StepStatus::FloorHit(format!(
            "v at or below floor before step: min v = {}",
            state.v.min()
        ));
        return (state.clone(), report);
    }

    let log_v = state.v.map(f64::ln);
    let drift = face_gradient(&log_v);
    let max_drift = params.chi * drift.max_abs();
    report.cfl_ratio = dt * 2.0 * g.dim() as f64 * max_drift / g.h_min();

    let flux = upwind_flux(&state.u, &drift, params.chi);
    let div_adv = divergence(&flux);

    // Explicit stage; the ledger terms are frozen here.
    let sink_field = state.u.zip_with(&state.v, |a, b| a * b);
    report.mass_sink = params.sigma * integrate(&sink_field);
    report.mass_source = integrate(phi_t);

    let mut u_star = Field::zeros(&g);
    let mut v_star = Field::zeros(&g);
    for k in 0..n {
        let u = state.u.values()[k];
        let v = state.v.values()[k];
        u_star.values_mut()[k] =
            u + dt * (-div_adv.values()[k] - params.sigma * u * v + phi_t.values()[k]);
        v_star.values_mut()[k] =
            v + dt * (-v + u * pow_lambda(v, params.lambda) + psi_t.values()[k]);
    }

    let min_u_star = u_star.min();
    if !(min_u_star >= 0.0) {
        report.status = StepStatus::PositivityFailure(format!(
            "explicit stage drove u negative: min u* = {min_u_star}"
        ));
        return (state.clone(), report);
    }
    let min_v_star = v_star.min();
    if !(min_v_star >= opts.floor) {
        report.status = StepStatus::FloorHit(format!(
            "explicit stage drove v to the floor: min v* = {min_v_star}"
        ));
        return (state.clone(), report);
    }

    // Implicit diffusion; order-preserving, so positivity survives.
    let u_new = match shifted_diffusion_solve(&u_star, dt, opts.cg_tol) {
        Ok(f) => f,
        Err(e) => {
            report.status = StepStatus::Blowup(format!("diffusion solve failed for u: {e}"));
            return (state.clone(), report);
        }
    };
    let v_new = match shifted_diffusion_solve(&v_star, dt, opts.cg_tol) {
        Ok(f) => f,
        Err(e) => {
            report.status = StepStatus::Blowup(format!("diffusion solve failed for v: {e}"));
            return (state.clone(), report);
        }
    };

    let new_state = State { t: state.t + dt, u: u_new, v: v_new };

    report.mass_u = integrate(&new_state.u);
    let (min_v, min_v_pos) = new_state.v.min_with_pos();
    report.min_v = min_v;
    report.min_v_pos = min_v_pos;
    let (max_u, max_u_pos) = new_state.u.max_with_pos();
    report.max_u = max_u;
    report.max_u_pos = max_u_pos;

    if !max_u.is_finite() || !min_v.is_finite() {
        report.status = StepStatus::Blowup("non-finite state".into());
        return (state.clone(), report);
    }
    if max_u > opts.u_blow {
        report.status = StepStatus::Blowup(format!("max u = {max_u} exceeds U_blow = {}", opts.u_blow));
        return (new_state, report);
    }
    if !(min_v > opts.floor) {
        report.status = StepStatus::FloorHit(format!("diffused v at the floor: min v = {min_v}"));
        return (state.clone(), report);
    }

    match compute_z(&new_state.u, &new_state.v, params, opts.floor) {
        Ok(z) => {
            let (max_z, max_z_pos) = z.max_with_pos();
            report.max_z = max_z;
            report.max_z_pos = max_z_pos;
        }
        Err(e) => {
            report.status = StepStatus::FloorHit(format!("z undefined: {e}"));
            return (state.clone(), report);
        }
    }

    (new_state, report)
}

fn initial_row(state: &State, params: &ModelParams, floor: f64) -> StepReport {
    let (min_v, min_v_pos) = state.v.min_with_pos();
    let (max_u, max_u_pos) = state.u.max_with_pos();
    let (max_z, max_z_pos) = match compute_z(&state.u, &state.v, params, floor) {
        Ok(z) => z.max_with_pos(),
        Err(_) => (f64::NAN, [0.0, 0.0]),
    };
    StepReport {
        t: state.t,
        dt_used: 0.0,
        mass_u: integrate(&state.u),
        mass_sink: 0.0,
        mass_source: 0.0,
        min_v,
        min_v_pos,
        max_u,
        max_u_pos,
        max_z,
        max_z_pos,
        cfl_ratio: 0.0,
        status: StepStatus::Ok,
    }
}

/// Drive the stepper from t = 0 to the horizon or the first failure.
pub fn run(scenario: &Scenario) -> Result<Trajectory, RunError> {
    let validation = validate_assumption1(scenario);
    if !validation.pass() {
        return Err(RunError::AssumptionViolated(describe_failures(&validation)));
    }

    let grid = &scenario.grid;
    let params = &scenario.params;
    let solver = &scenario.solver;
    let opts = StepOptions::from_scenario(scenario);

    let u0 = sample_source(grid, &scenario.u0, 0.0);
    let v0 = sample_source(grid, &scenario.v0, 0.0);
    if !(v0.min() > solver.v_floor) {
        return Err(RunError::InitialFloor { min_v0: v0.min(), floor: solver.v_floor });
    }

    let mut state = State { t: 0.0, u: u0, v: v0 };
    let mut rows = vec![initial_row(&state, params, opts.floor)];
    let mut snapshots = vec![state.clone()];
    let horizon = scenario.horizon;
    let end_slack = 1e-14 * horizon.max(1.0);
    let mut status = TrajectoryStatus::Completed;
    let mut steps = 0usize;

    while horizon - state.t > end_slack {
        if steps >= solver.max_steps {
            status = TrajectoryStatus::StepLimitExceeded;
            break;
        }
        let dt_raw = match solver.fixed_dt {
            Some(dt) => dt,
            None => choose_dt(&state, params, solver),
        };
        if dt_raw < solver.dt_min {
            status = TrajectoryStatus::Blowup(format!(
                "time step collapsed: dt = {dt_raw:e} < dt_min = {:e}",
                solver.dt_min
            ));
            break;
        }
        let dt = dt_raw.min(horizon - state.t);
        let phi_t = sample_source(grid, &scenario.phi, state.t);
        let psi_t = sample_source(grid, &scenario.psi, state.t);
        let (new_state, report) = step(&state, params, &phi_t, &psi_t, dt, &opts);
        let step_status = report.status.clone();
        rows.push(report);
        match step_status {
            StepStatus::Ok => {}
            StepStatus::Blowup(msg) => {
                status = TrajectoryStatus::Blowup(msg);
                state = new_state;
                break;
            }
            StepStatus::PositivityFailure(msg) => {
                status = TrajectoryStatus::PositivityFailure(msg);
                break;
            }
            StepStatus::FloorHit(msg) => {
                status = TrajectoryStatus::FloorHit(msg);
                break;
            }
        }
        state = new_state;
        steps += 1;
        if solver.snapshot_stride > 0 && steps % solver.snapshot_stride == 0 {
            snapshots.push(state.clone());
        }
    }

    if snapshots.last().map(|s| s.t) != Some(state.t) {
        snapshots.push(state.clone());
    }
    let mean_dt = if rows.len() > 1 {
        (rows.last().unwrap().t - rows[0].t) / (rows.len() - 1) as f64
    } else {
        0.0
    };
    Ok(Trajectory { rows, snapshots, status, horizon, mean_dt })
}

fn describe_failures(report: &ValidationReport) -> String {
    report
        .failures()
        .iter()
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Heat-kernel lower-bound quadrature from the uniform-lower-bound argument:
/// f(t) = [ mass_u0 * Int_0^t (4 pi r)^{-d/2} exp(-(diam^2/(4r) + r)) dr ]^{1/(1-lambda)}.
/// Monotone non-decreasing in t; undefined at lambda = 1.
pub fn lemma2_quadrature(
    t: f64,
    d: usize,
    diam: f64,
    mass_u0: f64,
    lambda: f64,
) -> Result<f64, RunError> {
    if lambda >= 1.0 {
        return Err(RunError::LambdaOne(lambda));
    }
    if t <= 0.0 || mass_u0 == 0.0 {
        return Ok(0.0);
    }
    let integral = adaptive_simpson(&|r| heat_kernel_floor(r, d, diam), 0.0, t, 1e-13, 60);
    Ok((integral * mass_u0).max(0.0).powf(1.0 / (1.0 - lambda)))
}

/// (4 pi r)^{-d/2} exp(-(diam^2/(4 r) + r)); 0 at r = 0 (the exponential
/// dominates the algebraic singularity).
pub fn heat_kernel_floor(r: f64, d: usize, diam: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let amp = (4.0 * std::f64::consts::PI * r).powf(-(d as f64) / 2.0);
    amp * (-(diam * diam / (4.0 * r) + r)).exp()
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, right, 0.5 * tol, depth - 1)
        }
    }
    let whole = simpson(f, a, b);
    let scale = whole.abs().max(1e-300);
    recurse(f, a, b, whole, tol * scale.max(1.0), depth)
}
