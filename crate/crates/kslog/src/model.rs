//! Model parameters, given functions, the sensitivity threshold, the
//! transformed variable z, and machine-checked evaluation of the small-data
//! certificate hypotheses.

use crate::grid::{grad_log_sq, Field, GridError, GridSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    BadParam(String),
    #[error("chi = {chi} is not below the threshold {threshold}")]
    AboveThreshold { chi: f64, threshold: f64 },
    #[error("invalid source specification: {0}")]
    BadSource(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// The non-negative triple (chi, sigma, lambda); theta = lambda + chi/2 is
/// always derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub chi: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl ModelParams {
    pub fn new(chi: f64, sigma: f64, lambda: f64) -> Result<Self, ModelError> {
        if !chi.is_finite() || chi < 0.0 {
            return Err(ModelError::BadParam(format!("chi must be >= 0, got {chi}")));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(ModelError::BadParam(format!("sigma must be >= 0, got {sigma}")));
        }
        if !lambda.is_finite() || !(0.0..=1.0).contains(&lambda) {
            return Err(ModelError::BadParam(format!("lambda must be in [0, 1], got {lambda}")));
        }
        Ok(ModelParams { chi, sigma, lambda })
    }

    pub fn theta(&self) -> f64 {
        self.lambda + 0.5 * self.chi
    }
}

/// Global-existence threshold for the chemotactic sensitivity,
/// chi(d, lambda) = (2/d) (1 - lambda + sqrt(2 d lambda (1 - lambda) + (1 - lambda)^2)).
pub fn chi_threshold(d: usize, lambda: f64) -> f64 {
    let s = 1.0 - lambda;
    let d_f = d as f64;
    (2.0 / d_f) * (s + (2.0 * d_f * lambda * s + s * s).sqrt())
}

/// The coefficient d chi^2 / (8 lambda + 4 chi), taken as 0 at chi = 0 where
/// the formula is the 0/0 limit.
pub fn drift_coupling(d: usize, chi: f64, lambda: f64) -> f64 {
    if chi == 0.0 {
        0.0
    } else {
        d as f64 * chi * chi / (8.0 * lambda + 4.0 * chi)
    }
}

/// Explicit comparison constant for the below-threshold maximum-principle
/// bound: the coefficient-wise minimum
/// min{ (1-lambda) - d chi^2/(8 lambda + 4 chi), (1-lambda)(lambda+chi)/theta },
/// positive exactly when chi < chi(d, lambda). For theta = 0 (chi = lambda = 0)
/// only the first branch constrains z.
pub fn prop1_epsilon(params: &ModelParams, d: usize) -> Result<f64, ModelError> {
    if params.lambda >= 1.0 {
        return Err(ModelError::BadParam("epsilon requires lambda < 1".into()));
    }
    let threshold = chi_threshold(d, params.lambda);
    if params.chi >= threshold {
        return Err(ModelError::AboveThreshold { chi: params.chi, threshold });
    }
    let s = 1.0 - params.lambda;
    let first = s - drift_coupling(d, params.chi, params.lambda);
    let theta = params.theta();
    let eps = if theta > 0.0 {
        first.min(s * (params.lambda + params.chi) / theta)
    } else {
        first
    };
    Ok(eps)
}

/// The transformed variable z = u / v^{1-lambda} + theta |grad log v|^2.
pub fn compute_z(u: &Field, v: &Field, params: &ModelParams, floor: f64) -> Result<Field, GridError> {
    let gls = grad_log_sq(v, floor)?;
    let theta = params.theta();
    let ratio = if params.lambda == 1.0 {
        u.clone()
    } else if params.lambda == 0.0 {
        u.zip_with(v, |a, b| a / b)
    } else {
        let p = 1.0 - params.lambda;
        u.zip_with(v, move |a, b| a / b.powf(p))
    };
    Ok(ratio.zip_with(&gls, move |r, g| r + theta * g))
}

/// Declarative given function of (x, t). Every kind evaluates to a
/// non-negative value for admissible parameters, has an analytic spatial
/// gradient, and is monotone non-increasing in time, so its envelope over
/// t >= 0 is attained at t = 0 (sup) and t -> infinity (inf).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Constant {
        value: f64,
    },
    GaussianBump {
        amplitude: f64,
        #[serde(default)]
        center: [f64; 2],
        width: f64,
        #[serde(default)]
        offset: f64,
    },
    CosineMode {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        mode: [u32; 2],
    },
    SeparableTimeDecay {
        target: f64,
        amplitude: f64,
        #[serde(default)]
        center: [f64; 2],
        width: f64,
        rate: f64,
    },
}

impl SourceSpec {
    pub fn zero() -> SourceSpec {
        SourceSpec::Constant { value: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let chk = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ModelError::BadSource(format!("{what} must be finite, got {v}")))
            }
        };
        match self {
            SourceSpec::Constant { value } => chk(*value, "value"),
            SourceSpec::GaussianBump { amplitude, center, width, offset } => {
                chk(*amplitude, "amplitude")?;
                chk(center[0], "center")?;
                chk(center[1], "center")?;
                chk(*offset, "offset")?;
                if !(*width > 0.0) {
                    return Err(ModelError::BadSource(format!("width must be > 0, got {width}")));
                }
                Ok(())
            }
            SourceSpec::CosineMode { offset, amplitude, .. } => {
                chk(*offset, "offset")?;
                chk(*amplitude, "amplitude")
            }
            SourceSpec::SeparableTimeDecay { target, amplitude, center, width, rate } => {
                chk(*target, "target")?;
                chk(*amplitude, "amplitude")?;
                chk(center[0], "center")?;
                chk(center[1], "center")?;
                if !(*width > 0.0) {
                    return Err(ModelError::BadSource(format!("width must be > 0, got {width}")));
                }
                if !(*rate >= 0.0) {
                    return Err(ModelError::BadSource(format!("rate must be >= 0, got {rate}")));
                }
                Ok(())
            }
        }
    }

    fn bump(x: [f64; 2], center: [f64; 2], width: f64, dim: usize) -> f64 {
        let mut r2 = (x[0] - center[0]) * (x[0] - center[0]);
        if dim == 2 {
            r2 += (x[1] - center[1]) * (x[1] - center[1]);
        }
        (-r2 / (2.0 * width * width)).exp()
    }

    pub fn value(&self, grid: &GridSpec, x: [f64; 2], t: f64) -> f64 {
        match self {
            SourceSpec::Constant { value } => *value,
            SourceSpec::GaussianBump { amplitude, center, width, offset } => {
                offset + amplitude * Self::bump(x, *center, *width, grid.dim())
            }
            SourceSpec::CosineMode { offset, amplitude, mode } => {
                let lengths = grid.lengths();
                let mut c = (mode[0] as f64 * std::f64::consts::PI * x[0] / lengths[0]).cos();
                if grid.dim() == 2 {
                    c *= (mode[1] as f64 * std::f64::consts::PI * x[1] / lengths[1]).cos();
                }
                offset + amplitude * c
            }
            SourceSpec::SeparableTimeDecay { target, amplitude, center, width, rate } => {
                target + amplitude * Self::bump(x, *center, *width, grid.dim()) * (-rate * t).exp()
            }
        }
    }

    /// Analytic spatial gradient, consistent with `value` (cross-checked by
    /// finite differences in the tests).
    pub fn gradient(&self, grid: &GridSpec, x: [f64; 2], t: f64) -> [f64; 2] {
        match self {
            SourceSpec::Constant { .. } => [0.0, 0.0],
            SourceSpec::GaussianBump { amplitude, center, width, .. } => {
                let b = amplitude * Self::bump(x, *center, *width, grid.dim());
                let w2 = width * width;
                let gx = -b * (x[0] - center[0]) / w2;
                let gy = if grid.dim() == 2 { -b * (x[1] - center[1]) / w2 } else { 0.0 };
                [gx, gy]
            }
            SourceSpec::CosineMode { amplitude, mode, .. } => {
                let lengths = grid.lengths();
                let kx = mode[0] as f64 * std::f64::consts::PI / lengths[0];
                let cx = (kx * x[0]).cos();
                let sx = (kx * x[0]).sin();
                if grid.dim() == 2 {
                    let ky = mode[1] as f64 * std::f64::consts::PI / lengths[1];
                    let cy = (ky * x[1]).cos();
                    let sy = (ky * x[1]).sin();
                    [-amplitude * kx * sx * cy, -amplitude * ky * cx * sy]
                } else {
                    [-amplitude * kx * sx, 0.0]
                }
            }
            SourceSpec::SeparableTimeDecay { amplitude, center, width, rate, .. } => {
                let decay = (-rate * t).exp();
                let b = amplitude * Self::bump(x, *center, *width, grid.dim()) * decay;
                let w2 = width * width;
                let gx = -b * (x[0] - center[0]) / w2;
                let gy = if grid.dim() == 2 { -b * (x[1] - center[1]) / w2 } else { 0.0 };
                [gx, gy]
            }
        }
    }

    /// Pointwise infimum over t >= 0 (the t -> infinity limit for decaying
    /// kinds, the value itself otherwise).
    pub fn value_time_inf(&self, grid: &GridSpec, x: [f64; 2]) -> f64 {
        match self {
            SourceSpec::SeparableTimeDecay { target, amplitude, .. } => {
                if *amplitude >= 0.0 {
                    *target
                } else {
                    self.value(grid, x, 0.0)
                }
            }
            _ => self.value(grid, x, 0.0),
        }
    }

    /// Pointwise supremum over t >= 0.
    pub fn value_time_sup(&self, grid: &GridSpec, x: [f64; 2]) -> f64 {
        match self {
            SourceSpec::SeparableTimeDecay { target, amplitude, .. } => {
                if *amplitude >= 0.0 {
                    self.value(grid, x, 0.0)
                } else {
                    *target
                }
            }
            _ => self.value(grid, x, 0.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SourceSpec::Constant { value } => *value == 0.0,
            SourceSpec::GaussianBump { amplitude, offset, .. } => *amplitude == 0.0 && *offset == 0.0,
            SourceSpec::CosineMode { offset, amplitude, .. } => *offset == 0.0 && *amplitude == 0.0,
            SourceSpec::SeparableTimeDecay { target, amplitude, .. } => {
                *target == 0.0 && *amplitude == 0.0
            }
        }
    }

    /// True when the function does not vary in x (it may still vary in t).
    pub fn is_spatially_constant(&self) -> bool {
        match self {
            SourceSpec::Constant { .. } => true,
            SourceSpec::GaussianBump { amplitude, .. } => *amplitude == 0.0,
            SourceSpec::CosineMode { amplitude, mode, .. }
                if *amplitude == 0.0 || *mode == [0, 0] =>
            {
                true
            }
            SourceSpec::CosineMode { .. } => false,
            SourceSpec::SeparableTimeDecay { amplitude, .. } => *amplitude == 0.0,
        }
    }

    pub fn is_time_constant(&self) -> bool {
        match self {
            SourceSpec::SeparableTimeDecay { amplitude, rate, .. } => {
                *amplitude == 0.0 || *rate == 0.0
            }
            _ => true,
        }
    }
}

/// Sample a source onto the cell centers of a grid at a fixed time.
pub fn sample_source(grid: &GridSpec, src: &SourceSpec, t: f64) -> Field {
    Field::from_fn(grid, |x| src.value(grid, x, t))
}

/// Time-step controls and guards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub dt_max: f64,
    pub dt_min: f64,
    pub safety: f64,
    pub u_blow: f64,
    pub v_floor: f64,
    pub max_steps: usize,
    pub cg_tol: f64,
    pub cg_jacobi: bool,
    /// When set, overrides the adaptive choice with a fixed dt (used by the
    /// convergence studies); positivity checks still apply.
    pub fixed_dt: Option<f64>,
    /// Keep a full (u, v) snapshot every this many steps; 0 keeps only the
    /// initial and final states.
    pub snapshot_stride: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            dt_max: 2e-3,
            dt_min: 1e-12,
            safety: 0.5,
            u_blow: 1e8,
            v_floor: 1e-300,
            max_steps: 5_000_000,
            cg_tol: 1e-10,
            cg_jacobi: false,
            fixed_dt: None,
            snapshot_stride: 0,
        }
    }
}

/// Which monitors to attach and their tolerances. The c1/c2 pair scales the
/// refinement-aware tolerance tol = (c1 h^2 + c2 dt) * scale used by the
/// bound monitors; the discrete identities keep their own fixed budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSettings {
    pub mass_ledger: bool,
    pub v_lower_bound: bool,
    pub z_bound: bool,
    pub barrier: bool,
    pub asymptotics: bool,
    pub c1: f64,
    pub c2: f64,
    pub lemma1_rel_tol: f64,
    pub ledger_rel_tol: f64,
    pub l1_bound_rel_tol: f64,
    pub growth_slack: f64,
    pub plateau_factor: f64,
    pub eps_target_u: f64,
    pub eps_target_v: f64,
    pub gronwall_slack: f64,
    pub transient_fraction: f64,
}

impl Default for MonitorSettings {
    fn default() -> Self {
        MonitorSettings {
            mass_ledger: true,
            v_lower_bound: true,
            z_bound: true,
            barrier: true,
            asymptotics: false,
            c1: 1.0,
            c2: 1.0,
            lemma1_rel_tol: 1e-3,
            ledger_rel_tol: 1e-10,
            l1_bound_rel_tol: 1e-8,
            growth_slack: 10.0,
            plateau_factor: 1.05,
            eps_target_u: 1e-3,
            eps_target_v: 1e-4,
            gronwall_slack: 1.05,
            transient_fraction: 0.25,
        }
    }
}

/// A full problem instance: domain, parameters, data, horizon, and solver /
/// monitor settings.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: GridSpec,
    pub params: ModelParams,
    pub u0: SourceSpec,
    pub v0: SourceSpec,
    pub phi: SourceSpec,
    pub psi: SourceSpec,
    pub psi_inf: Option<SourceSpec>,
    pub horizon: f64,
    pub solver: SolverSettings,
    pub monitors: MonitorSettings,
}

impl Scenario {
    pub fn validate_sources(&self) -> Result<(), ModelError> {
        self.u0.validate()?;
        self.v0.validate()?;
        self.phi.validate()?;
        self.psi.validate()?;
        if let Some(p) = &self.psi_inf {
            p.validate()?;
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(ModelError::BadParam(format!("horizon must be >= 0, got {}", self.horizon)));
        }
        Ok(())
    }
}

/// One clause of the admissibility check.
#[derive(Debug, Clone)]
pub struct ValidationClause {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub clauses: Vec<ValidationClause>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.clauses.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&ValidationClause> {
        self.clauses.iter().filter(|c| !c.pass).collect()
    }
}

/// Check non-negativity of the data quadruple, strict positivity of v0, and
/// finiteness on the grid (time handled through the per-kind envelopes).
/// Discrete Neumann compatibility is automatic for cell-centered sampling
/// and reported as satisfied.
pub fn validate_assumption1(s: &Scenario) -> ValidationReport {
    let grid = &s.grid;
    let mut clauses = Vec::new();

    let sampled_min = |src: &SourceSpec| {
        let mut min = f64::INFINITY;
        let mut finite = true;
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let v = src.value_time_inf(grid, grid.cell_center(i, j));
                if !v.is_finite() {
                    finite = false;
                }
                min = min.min(v);
            }
        }
        (min, finite)
    };

    let (u0_min, u0_fin) = sampled_min(&s.u0);
    clauses.push(ValidationClause {
        name: "u0_nonnegative",
        pass: u0_fin && u0_min >= 0.0,
        detail: format!("min u0 = {u0_min}"),
    });
    let (v0_min, v0_fin) = sampled_min(&s.v0);
    clauses.push(ValidationClause {
        name: "v0_strictly_positive",
        pass: v0_fin && v0_min > 0.0,
        detail: format!("min v0 = {v0_min}"),
    });
    let (phi_min, phi_fin) = sampled_min(&s.phi);
    clauses.push(ValidationClause {
        name: "phi_nonnegative",
        pass: phi_fin && phi_min >= 0.0,
        detail: format!("inf phi = {phi_min}"),
    });
    let (psi_min, psi_fin) = sampled_min(&s.psi);
    clauses.push(ValidationClause {
        name: "psi_nonnegative",
        pass: psi_fin && psi_min >= 0.0,
        detail: format!("inf psi = {psi_min}"),
    });
    clauses.push(ValidationClause {
        name: "finite_samples",
        pass: u0_fin && v0_fin && phi_fin && psi_fin,
        detail: "all sampled values finite".into(),
    });
    clauses.push(ValidationClause {
        name: "neumann_compatibility",
        pass: true,
        detail: "cell-centered sampling satisfies the discrete zero-flux condition by construction"
            .into(),
    });
    ValidationReport { clauses }
}

/// Which theorem a certificate claims.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertifiedTheorem {
    Theorem2,
    Theorem3,
}

/// One evaluated hypothesis with both sides of its inequality.
#[derive(Debug, Clone)]
pub struct ConditionEval {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    /// Comparison used, as printed: "<", "<=", or ">=".
    pub cmp: &'static str,
    pub holds: bool,
}

/// Evaluated small-data certificate. Conditions written strictly in the
/// source statements stay strict here: equality fails.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub theorem: CertifiedTheorem,
    pub applies: bool,
    pub not_applicable: Option<String>,
    pub eta: f64,
    pub delta: Option<f64>,
    pub mu: Option<f64>,
    pub delta0: Option<f64>,
    pub mu0: Option<f64>,
    pub eta_ordering: bool,
    pub initial_z_small: bool,
    pub source_small: bool,
    pub sigma_eta_large: Option<bool>,
    pub conditions: Vec<ConditionEval>,
    /// Per-axis oversampling factor used for the sup-norm evaluations.
    pub oversample: usize,
    /// The barrier level the proof propagates (delta or delta0).
    pub barrier_level: Option<f64>,
}

impl Certificate {
    fn not_applicable(theorem: CertifiedTheorem, reason: String) -> Certificate {
        Certificate {
            theorem,
            applies: false,
            not_applicable: Some(reason),
            eta: f64::NAN,
            delta: None,
            mu: None,
            delta0: None,
            mu0: None,
            eta_ordering: false,
            initial_z_small: false,
            source_small: false,
            sigma_eta_large: None,
            conditions: Vec::new(),
            oversample: 0,
            barrier_level: None,
        }
    }
}

const CERT_OVERSAMPLE: usize = 4;

/// Extrema of pointwise expressions over an oversampled cell-center set.
struct SampledNorms<'a> {
    grid: GridSpec,
    fine: GridSpec,
    scenario: &'a Scenario,
}

impl<'a> SampledNorms<'a> {
    fn new(s: &'a Scenario) -> Self {
        let g = s.grid;
        let fine = if g.dim() == 1 {
            GridSpec::new_1d(g.lengths()[0], g.nx() * CERT_OVERSAMPLE).expect("refined grid")
        } else {
            GridSpec::new_2d(
                g.lengths(),
                [g.nx() * CERT_OVERSAMPLE, g.ny() * CERT_OVERSAMPLE],
            )
            .expect("refined grid")
        };
        SampledNorms { grid: g, fine, scenario: s }
    }

    fn fold(&self, init: f64, combine: impl Fn(f64, f64) -> f64, f: impl Fn(&GridSpec, [f64; 2]) -> f64) -> f64 {
        let mut acc = init;
        for g in [&self.grid, &self.fine] {
            for j in 0..g.ny() {
                for i in 0..g.nx() {
                    acc = combine(acc, f(g, g.cell_center(i, j)));
                }
            }
        }
        acc
    }

    fn sup(&self, f: impl Fn(&GridSpec, [f64; 2]) -> f64) -> f64 {
        self.fold(f64::NEG_INFINITY, f64::max, f)
    }

    fn inf(&self, f: impl Fn(&GridSpec, [f64; 2]) -> f64) -> f64 {
        self.fold(f64::INFINITY, f64::min, f)
    }

    /// inf over space and time of psi.
    fn eta(&self) -> f64 {
        let psi = &self.scenario.psi;
        self.inf(|g, x| psi.value_time_inf(g, x))
    }

    fn min_v0(&self) -> f64 {
        let v0 = &self.scenario.v0;
        self.inf(|g, x| v0.value(g, x, 0.0))
    }

    fn sup_v0(&self) -> f64 {
        let v0 = &self.scenario.v0;
        self.sup(|g, x| v0.value(g, x, 0.0))
    }

    fn sup_psi(&self) -> f64 {
        let psi = &self.scenario.psi;
        self.sup(|g, x| psi.value_time_sup(g, x))
    }

    /// sup_x of u0 + theta |grad log v0|^2, from the analytic gradients.
    fn initial_z_norm(&self, theta: f64) -> f64 {
        let (u0, v0) = (&self.scenario.u0, &self.scenario.v0);
        self.sup(|g, x| {
            let v = v0.value(g, x, 0.0);
            let gr = v0.gradient(g, x, 0.0);
            let glog2 = (gr[0] * gr[0] + gr[1] * gr[1]) / (v * v);
            u0.value(g, x, 0.0) + theta * glog2
        })
    }

    /// |grad sqrt(psi)|^2 = |grad psi|^2 / (4 psi), at the t = 0 envelope.
    fn grad_sqrt_psi_sq(g: &GridSpec, psi: &SourceSpec, x: [f64; 2]) -> f64 {
        let gr = psi.gradient(g, x, 0.0);
        let g2 = gr[0] * gr[0] + gr[1] * gr[1];
        if g2 == 0.0 {
            0.0
        } else {
            g2 / (4.0 * psi.value(g, x, 0.0))
        }
    }
}

/// Evaluate the lambda = 1 small-data certificate.
pub fn certify_theorem2(s: &Scenario) -> Certificate {
    if !(s.params.sigma > 0.0) {
        return Certificate::not_applicable(CertifiedTheorem::Theorem2, "requires sigma > 0".into());
    }
    if s.params.lambda != 1.0 {
        return Certificate::not_applicable(
            CertifiedTheorem::Theorem2,
            format!("requires lambda = 1, got {}", s.params.lambda),
        );
    }
    let d = s.grid.dim();
    let chi = s.params.chi;
    let sigma = s.params.sigma;
    let theta = 1.0 + 0.5 * chi;
    let norms = SampledNorms::new(s);

    let eta = norms.eta();
    let min_v0 = norms.min_v0();
    let delta = if chi == 0.0 {
        0.5
    } else {
        (0.5f64).min(sigma * eta * (4.0 + 2.0 * chi) / (d as f64 * chi * chi))
    };
    let mu = (1.0 / sigma).max(norms.sup_v0()).max(norms.sup_psi());

    let z0 = norms.initial_z_norm(theta);
    let psi = &s.psi;
    let phi = &s.phi;
    let source_norm = norms.sup(|g, x| {
        phi.value_time_sup(g, x)
            + (4.0 + 2.0 * chi) / eta * SampledNorms::grad_sqrt_psi_sq(g, psi, x)
    });
    let source_bound = eta * delta / (2.0 * mu);

    let eta_ordering = eta > 0.0 && eta <= min_v0;
    let initial_z_small = z0 < delta;
    let source_small = source_norm < source_bound;

    let conditions = vec![
        ConditionEval { name: "eta_positive", lhs: 0.0, rhs: eta, cmp: "<", holds: eta > 0.0 },
        ConditionEval { name: "eta_ordering", lhs: eta, rhs: min_v0, cmp: "<=", holds: eta <= min_v0 },
        ConditionEval { name: "initial_z_small", lhs: z0, rhs: delta, cmp: "<", holds: initial_z_small },
        ConditionEval {
            name: "source_small",
            lhs: source_norm,
            rhs: source_bound,
            cmp: "<",
            holds: source_small,
        },
    ];
    let applies = eta_ordering && initial_z_small && source_small;
    Certificate {
        theorem: CertifiedTheorem::Theorem2,
        applies,
        not_applicable: None,
        eta,
        delta: Some(delta),
        mu: Some(mu),
        delta0: None,
        mu0: None,
        eta_ordering,
        initial_z_small,
        source_small,
        sigma_eta_large: None,
        conditions,
        oversample: CERT_OVERSAMPLE,
        barrier_level: applies.then_some(delta),
    }
}

/// Evaluate the lambda in [0, 1) above-threshold small-data certificate.
pub fn certify_theorem3(s: &Scenario) -> Certificate {
    if !(s.params.sigma > 0.0) {
        return Certificate::not_applicable(CertifiedTheorem::Theorem3, "requires sigma > 0".into());
    }
    if s.params.lambda >= 1.0 {
        return Certificate::not_applicable(
            CertifiedTheorem::Theorem3,
            format!("requires lambda < 1, got {}", s.params.lambda),
        );
    }
    let d = s.grid.dim();
    let chi = s.params.chi;
    let lambda = s.params.lambda;
    let threshold = chi_threshold(d, lambda);
    if chi <= threshold {
        return Certificate::not_applicable(
            CertifiedTheorem::Theorem3,
            format!("requires chi > threshold {threshold}, got {chi} (large-data regime)"),
        );
    }
    let sigma = s.params.sigma;
    let theta = lambda + 0.5 * chi;
    let norms = SampledNorms::new(s);

    let eta = norms.eta();
    let min_v0 = norms.min_v0();
    // chi > threshold makes the drift coupling strictly exceed 1 - lambda.
    let denom = drift_coupling(d, chi, lambda) - (1.0 - lambda);
    debug_assert!(denom > 0.0);
    let delta0 = (0.5f64).min(sigma * eta / (2.0 * denom));
    let mu0 = (2.0 / sigma).max(norms.sup_v0()).max(norms.sup_psi());

    let z0 = norms.initial_z_norm(theta);
    let psi = &s.psi;
    let phi = &s.phi;
    let eta_pow = eta.powf(1.0 - lambda);
    let source_norm = norms.sup(|g, x| {
        phi.value_time_sup(g, x) / eta_pow
            + (4.0 * lambda + 2.0 * chi) / eta * SampledNorms::grad_sqrt_psi_sq(g, psi, x)
    });
    let source_bound = eta * delta0 / (2.0 * mu0);

    let eta_ordering = eta > 0.0 && eta <= min_v0;
    let sigma_eta_large = sigma * eta >= 4.0 * (1.0 - lambda);
    let initial_z_small = z0 < delta0;
    let source_small = source_norm < source_bound;

    let conditions = vec![
        ConditionEval { name: "eta_positive", lhs: 0.0, rhs: eta, cmp: "<", holds: eta > 0.0 },
        ConditionEval { name: "eta_ordering", lhs: eta, rhs: min_v0, cmp: "<=", holds: eta <= min_v0 },
        ConditionEval {
            name: "sigma_eta_large",
            lhs: sigma * eta,
            rhs: 4.0 * (1.0 - lambda),
            cmp: ">=",
            holds: sigma_eta_large,
        },
        ConditionEval { name: "initial_z_small", lhs: z0, rhs: delta0, cmp: "<", holds: initial_z_small },
        ConditionEval {
            name: "source_small",
            lhs: source_norm,
            rhs: source_bound,
            cmp: "<",
            holds: source_small,
        },
    ];
    let applies = eta_ordering && sigma_eta_large && initial_z_small && source_small;
    Certificate {
        theorem: CertifiedTheorem::Theorem3,
        applies,
        not_applicable: None,
        eta,
        delta: None,
        mu: None,
        delta0: Some(delta0),
        mu0: Some(mu0),
        eta_ordering,
        initial_z_small,
        source_small,
        sigma_eta_large: Some(sigma_eta_large),
        conditions,
        oversample: CERT_OVERSAMPLE,
        barrier_level: applies.then_some(delta0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square(n: usize) -> GridSpec {
        GridSpec::new_2d([1.0, 1.0], [n, n]).unwrap()
    }

    fn basic_scenario(grid: GridSpec, params: ModelParams) -> Scenario {
        Scenario {
            grid,
            params,
            u0: SourceSpec::zero(),
            v0: SourceSpec::Constant { value: 1.0 },
            phi: SourceSpec::zero(),
            psi: SourceSpec::Constant { value: 1.0 },
            psi_inf: None,
            horizon: 1.0,
            solver: SolverSettings::default(),
            monitors: MonitorSettings::default(),
        }
    }

    #[test]
    fn threshold_known_values() {
        assert_eq!(chi_threshold(2, 0.0), 2.0);
        for d in 2..=8 {
            assert_eq!(chi_threshold(d, 0.0), 4.0 / d as f64);
            assert_eq!(chi_threshold(d, 1.0), 0.0);
        }
    }

    #[test]
    fn threshold_monotone_nonincreasing_in_lambda() {
        for d in 2..=8 {
            let mut prev = f64::INFINITY;
            for k in 0..=100 {
                let lambda = k as f64 / 100.0;
                let chi = chi_threshold(d, lambda);
                assert!(chi <= prev + 1e-14, "d={d} lambda={lambda}: {chi} > {prev}");
                assert!(chi.is_finite());
                prev = chi;
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(1.0, 1.0, 0.5).is_ok());
        assert!(ModelParams::new(-0.1, 1.0, 0.5).is_err());
        assert!(ModelParams::new(1.0, -1.0, 0.5).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.5).is_err());
        let p = ModelParams::new(3.0, 0.0, 0.25).unwrap();
        assert!((p.theta() - 1.75).abs() < 1e-15);
    }

    #[test]
    fn compute_z_trivial_cases() {
        let g = unit_square(8);
        let params = ModelParams::new(1.0, 0.0, 0.0).unwrap();
        let u = Field::zeros(&g);
        let v = Field::constant(&g, 2.0);
        let z = compute_z(&u, &v, &params, 1e-300).unwrap();
        assert_eq!(z.max_abs(), 0.0);

        // lambda = 1: z = u + (1 + chi/2) |grad log v|^2, no v power.
        let params1 = ModelParams::new(2.0, 1.0, 1.0).unwrap();
        let u1 = Field::from_fn(&g, |x| 0.3 + x[0]);
        let v1 = Field::from_fn(&g, |x| 1.0 + 0.2 * x[1]);
        let z1 = compute_z(&u1, &v1, &params1, 1e-300).unwrap();
        let gls = grad_log_sq(&v1, 1e-300).unwrap();
        let expect = u1.zip_with(&gls, |a, b| a + 2.0 * b);
        assert!(z1.zip_with(&expect, |a, b| a - b).max_abs() < 1e-14);
    }

    #[test]
    fn compute_z_matches_closed_form() {
        // u Gaussian, v = 1 + small cosine, chi = 1, lambda = 0.
        let params = ModelParams::new(1.0, 0.0, 0.0).unwrap();
        let err_at = |n: usize| {
            let g = unit_square(n);
            let u_src = SourceSpec::GaussianBump {
                amplitude: 1.0,
                center: [0.5, 0.5],
                width: 0.2,
                offset: 0.0,
            };
            let v_src = SourceSpec::CosineMode { offset: 1.0, amplitude: 0.05, mode: [1, 1] };
            let u = sample_source(&g, &u_src, 0.0);
            let v = sample_source(&g, &v_src, 0.0);
            let z = compute_z(&u, &v, &params, 1e-300).unwrap();
            let exact = Field::from_fn(&g, |x| {
                let uv = u_src.value(&g, x, 0.0);
                let vv = v_src.value(&g, x, 0.0);
                let gr = v_src.gradient(&g, x, 0.0);
                uv / vv + params.theta() * (gr[0] * gr[0] + gr[1] * gr[1]) / (vv * vv)
            });
            z.zip_with(&exact, |a, b| a - b).max_abs()
        };
        let e32 = err_at(32);
        let e64 = err_at(64);
        assert!(e64 < 1e-3, "error at 64 cells: {e64}");
        assert!(e32 / e64 > 3.0, "second-order refinement, got ratio {}", e32 / e64);
    }

    #[test]
    fn source_gradients_match_finite_differences() {
        let g = unit_square(8);
        let sources = [
            SourceSpec::Constant { value: 2.0 },
            SourceSpec::GaussianBump { amplitude: 1.3, center: [0.4, 0.6], width: 0.17, offset: 0.2 },
            SourceSpec::CosineMode { offset: 1.0, amplitude: 0.4, mode: [2, 1] },
            SourceSpec::SeparableTimeDecay {
                target: 0.5,
                amplitude: 0.8,
                center: [0.3, 0.3],
                width: 0.25,
                rate: 1.5,
            },
        ];
        let eps = 1e-6;
        for src in &sources {
            for &(x, y, t) in &[(0.31, 0.47, 0.0), (0.72, 0.18, 0.9), (0.5, 0.5, 2.0)] {
                let grad = src.gradient(&g, [x, y], t);
                let fd_x = (src.value(&g, [x + eps, y], t) - src.value(&g, [x - eps, y], t))
                    / (2.0 * eps);
                let fd_y = (src.value(&g, [x, y + eps], t) - src.value(&g, [x, y - eps], t))
                    / (2.0 * eps);
                assert!((grad[0] - fd_x).abs() < 1e-6, "{src:?} d/dx: {} vs {}", grad[0], fd_x);
                assert!((grad[1] - fd_y).abs() < 1e-6, "{src:?} d/dy: {} vs {}", grad[1], fd_y);
            }
        }
    }

    #[test]
    fn validate_assumption1_clauses() {
        let g = unit_square(8);
        let params = ModelParams::new(1.0, 1.0, 1.0).unwrap();
        let good = basic_scenario(g, params);
        assert!(validate_assumption1(&good).pass());

        let mut zero_v0 = good.clone();
        zero_v0.v0 = SourceSpec::Constant { value: 0.0 };
        let rep = validate_assumption1(&zero_v0);
        assert!(!rep.pass());
        assert!(rep.failures().iter().any(|c| c.name == "v0_strictly_positive"));

        let mut neg_phi = good.clone();
        neg_phi.phi = SourceSpec::CosineMode { offset: 0.0, amplitude: 1.0, mode: [1, 0] };
        let rep = validate_assumption1(&neg_phi);
        assert!(rep.failures().iter().any(|c| c.name == "phi_nonnegative"));
    }

    #[test]
    fn theorem2_delta_hand_value() {
        // sigma = 1, eta = 1, chi = 2, d = 2: delta = min(1/2, 8/8) = 1/2.
        let g = unit_square(8);
        let params = ModelParams::new(2.0, 1.0, 1.0).unwrap();
        let cert = certify_theorem2(&basic_scenario(g, params));
        assert!((cert.eta - 1.0).abs() < 1e-14);
        assert_eq!(cert.delta, Some(0.5));
        assert_eq!(cert.mu, Some(1.0));
    }

    #[test]
    fn theorem2_near_constant_vector_passes() {
        // (u0, v0, phi, psi) = (0, a, 0, b) with a >= b > 0.
        let g = unit_square(8);
        let params = ModelParams::new(2.0, 1.0, 1.0).unwrap();
        let mut s = basic_scenario(g, params);
        s.v0 = SourceSpec::Constant { value: 2.0 };
        s.psi = SourceSpec::Constant { value: 1.0 };
        let cert = certify_theorem2(&s);
        assert!(cert.applies, "{:?}", cert.conditions);
        assert_eq!(cert.barrier_level, cert.delta);
    }

    #[test]
    fn theorem2_strictness_at_equality() {
        let g = unit_square(8);
        let params = ModelParams::new(2.0, 1.0, 1.0).unwrap();
        let mut s = basic_scenario(g, params);
        // u0 identically delta = 1/2: (1.7) must fail on equality.
        s.u0 = SourceSpec::Constant { value: 0.5 };
        let cert = certify_theorem2(&s);
        assert!(!cert.initial_z_small);
        assert!(!cert.applies);
    }

    #[test]
    fn theorem2_not_applicable_markers() {
        let g = unit_square(8);
        let sigma0 = ModelParams::new(2.0, 0.0, 1.0).unwrap();
        assert!(certify_theorem2(&basic_scenario(g, sigma0)).not_applicable.is_some());
        let lam_half = ModelParams::new(2.0, 1.0, 0.5).unwrap();
        assert!(certify_theorem2(&basic_scenario(g, lam_half)).not_applicable.is_some());
    }

    #[test]
    fn theorem3_hand_value_and_flags() {
        // lambda = 0, d = 2, chi = 4 > 2, sigma = 4, eta = 1:
        // d chi^2/(8 lambda + 4 chi) - 1 = 1, delta0 = min(1/2, 2) = 1/2.
        let g = unit_square(8);
        let params = ModelParams::new(4.0, 4.0, 0.0).unwrap();
        let cert = certify_theorem3(&basic_scenario(g, params));
        assert_eq!(cert.delta0, Some(0.5));
        assert_eq!(cert.mu0, Some(1.0));
        assert_eq!(cert.sigma_eta_large, Some(true));
        assert!(cert.applies, "{:?}", cert.conditions);

        // sigma * eta = 3.9 < 4 (1 - lambda) fails.
        let weak = ModelParams::new(4.0, 3.9, 0.0).unwrap();
        let cert = certify_theorem3(&basic_scenario(g, weak));
        assert_eq!(cert.sigma_eta_large, Some(false));
        assert!(!cert.applies);

        // chi <= threshold is the large-data regime: not applicable.
        let below = ModelParams::new(2.0, 4.0, 0.0).unwrap();
        assert!(certify_theorem3(&basic_scenario(g, below)).not_applicable.is_some());
    }

    #[test]
    fn certificate_monotone_in_phi() {
        let g = unit_square(8);
        let params = ModelParams::new(2.0, 1.0, 1.0).unwrap();
        let mut s = basic_scenario(g, params);
        s.v0 = SourceSpec::Constant { value: 2.0 };
        // Pick phi just inside the bound, then scale down: must stay passing.
        let bound = {
            let c = certify_theorem2(&s);
            c.eta * c.delta.unwrap() / (2.0 * c.mu.unwrap())
        };
        s.phi = SourceSpec::Constant { value: 0.9 * bound };
        assert!(certify_theorem2(&s).source_small);
        for scale in [0.5, 0.1, 0.0] {
            s.phi = SourceSpec::Constant { value: 0.9 * bound * scale };
            assert!(certify_theorem2(&s).source_small, "scale {scale}");
        }
    }

    #[test]
    fn certified_initial_z_stays_below_delta_on_grid() {
        let g = unit_square(32);
        let params = ModelParams::new(2.0, 1.0, 1.0).unwrap();
        let mut s = basic_scenario(g, params);
        s.u0 = SourceSpec::GaussianBump { amplitude: 0.05, center: [0.5, 0.5], width: 0.15, offset: 0.0 };
        let cert = certify_theorem2(&s);
        assert!(cert.applies);
        let u = sample_source(&g, &s.u0, 0.0);
        let v = sample_source(&g, &s.v0, 0.0);
        let z0 = compute_z(&u, &v, &s.params, s.solver.v_floor).unwrap();
        assert!(z0.max() < cert.delta.unwrap());
    }

    #[test]
    fn prop1_epsilon_hand_values() {
        // lambda = 0, d = 2, chi = 1: branches (1 - 2/4, 1*1/0.5) -> 0.5.
        let p = ModelParams::new(1.0, 0.0, 0.0).unwrap();
        assert!((prop1_epsilon(&p, 2).unwrap() - 0.5).abs() < 1e-15);

        // Equality case chi = threshold is rejected.
        let eq = ModelParams::new(2.0, 0.0, 0.0).unwrap();
        assert!(matches!(prop1_epsilon(&eq, 2), Err(ModelError::AboveThreshold { .. })));

        // chi -> threshold from below: first branch vanishes.
        let near = ModelParams::new(2.0 - 1e-8, 0.0, 0.0).unwrap();
        let eps = prop1_epsilon(&near, 2).unwrap();
        assert!(eps > 0.0 && eps < 1e-7, "eps {eps}");
    }

    #[test]
    fn prop1_epsilon_linear_combination_bound() {
        // eps * z <= (1-l)(l+chi)|grad log v|^2 + [(1-l) - d chi^2/(8l+4chi)] u/v^{1-l}
        // cellwise for random positive fields.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = unit_square(6);
        for trial in 0..1000 {
            let lambda = rng.gen_range(0.0..0.95);
            let chi = rng.gen_range(0.0..1.0) * chi_threshold(2, lambda) * 0.999;
            let params = ModelParams::new(chi, 0.0, lambda).unwrap();
            let eps = prop1_epsilon(&params, 2).unwrap();
            let u = Field::from_values(&g, (0..g.n_cells()).map(|_| rng.gen_range(0.0..5.0)).collect())
                .unwrap();
            let v = Field::from_values(&g, (0..g.n_cells()).map(|_| rng.gen_range(0.1..5.0)).collect())
                .unwrap();
            let gls = grad_log_sq(&v, 1e-300).unwrap();
            let ratio = u.zip_with(&v, |a, b| a / b.powf(1.0 - lambda));
            let z = ratio.zip_with(&gls, |r, gl| r + params.theta() * gl);
            let coef_u = (1.0 - lambda) - drift_coupling(2, chi, lambda);
            let rhs = ratio.zip_with(&gls, |r, gl| {
                (1.0 - lambda) * (lambda + chi) * gl + coef_u * r
            });
            let worst = z
                .values()
                .iter()
                .zip(rhs.values())
                .map(|(zi, ri)| eps * zi - ri)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(worst <= 1e-12, "trial {trial}: eps*z exceeds bound by {worst}");
        }
    }

    #[test]
    fn sample_source_mass_sanity() {
        let g = unit_square(64);
        let src = SourceSpec::Constant { value: 2.0 };
        assert!((integrate(&sample_source(&g, &src, 0.0)) - 2.0).abs() < 1e-12);
    }
}
