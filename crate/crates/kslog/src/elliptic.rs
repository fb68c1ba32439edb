//! Linear solves for the shifted Neumann operator (I - s * Lap_h): the
//! stationary problem v_inf - Lap v_inf = psi_inf (s = 1) and the implicit
//! diffusion stage (I - dt * Lap_h) of the time stepper (s = dt).
//!
//! 1-D grids use direct tridiagonal elimination; 2-D grids use conjugate
//! gradient on the symmetric positive definite operator. CG starts from the
//! right-hand side itself, which keeps every iterate's integral equal to the
//! integral of the data (the operator has unit column sums), so the discrete
//! mass ledger holds to rounding rather than to the iteration tolerance.

use crate::grid::{Field, GridSpec};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("conjugate gradient hit the iteration cap ({iterations}) at relative residual {residual:e}")]
    IterationCap { iterations: usize, residual: f64 },
    #[error("solver tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

/// Diagnostics from one linear solve.
#[derive(Debug, Clone)]
pub struct EllipticSolveStats {
    pub iterations: usize,
    pub final_rel_residual: f64,
    pub wall_seconds: f64,
}

/// Apply (I - s * Lap_h) with mirrored-ghost Neumann boundaries.
pub fn apply_shifted(f: &Field, s: f64) -> Field {
    let g = *f.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let vals = f.values();
    let mut out = Field::zeros(&g);
    let cx = s / (g.spacing()[0] * g.spacing()[0]);
    let cy = s / (g.spacing()[1] * g.spacing()[1]);
    for j in 0..ny {
        for i in 0..nx {
            let k = g.idx(i, j);
            let c = vals[k];
            let mut acc = 0.0;
            if i > 0 {
                acc += (vals[k - 1] - c) * cx;
            }
            if i + 1 < nx {
                acc += (vals[k + 1] - c) * cx;
            }
            if g.dim() == 2 {
                if j > 0 {
                    acc += (vals[k - nx] - c) * cy;
                }
                if j + 1 < ny {
                    acc += (vals[k + nx] - c) * cy;
                }
            }
            out.values_mut()[k] = c - acc;
        }
    }
    out
}

/// Solve (I - Lap_h) w = rhs under homogeneous Neumann conditions.
pub fn solve_helmholtz_neumann(
    rhs: &Field,
    tol: f64,
) -> Result<(Field, EllipticSolveStats), SolveError> {
    solve_shifted(rhs, 1.0, tol, false)
}

/// Solve (I - dt * Lap_h) w = rhs; the diffusion half-step. Preserves
/// nonnegativity of the data (M-matrix) and its integral.
pub fn shifted_diffusion_solve(rhs: &Field, dt: f64, tol: f64) -> Result<Field, SolveError> {
    solve_shifted(rhs, dt, tol, false).map(|(w, _)| w)
}

/// Shared kernel. `jacobi` enables diagonal preconditioning, which only
/// matters for large shifts where the boundary/interior diagonal contrast
/// grows.
pub fn solve_shifted(
    rhs: &Field,
    s: f64,
    tol: f64,
    jacobi: bool,
) -> Result<(Field, EllipticSolveStats), SolveError> {
    if !(tol > 0.0) {
        return Err(SolveError::BadTolerance(tol));
    }
    let start = Instant::now();
    if rhs.grid().dim() == 1 {
        let w = solve_tridiagonal(rhs, s);
        let stats = EllipticSolveStats {
            iterations: 0,
            final_rel_residual: 0.0,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        return Ok((w, stats));
    }
    let (w, iterations, final_rel_residual) = conjugate_gradient(rhs, s, tol, jacobi)?;
    Ok((
        w,
        EllipticSolveStats {
            iterations,
            final_rel_residual,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Thomas elimination for the 1-D operator. diag_i = 1 + s*(neighbors)/h^2,
/// off-diagonals -s/h^2; boundary rows have a single neighbor.
fn solve_tridiagonal(rhs: &Field, s: f64) -> Field {
    let g = *rhs.grid();
    let n = g.nx();
    let r = s / (g.spacing()[0] * g.spacing()[0]);
    let mut diag = vec![0.0; n];
    let off = -r;
    for (i, d) in diag.iter_mut().enumerate() {
        let neighbors = if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
        *d = 1.0 + neighbors * r;
    }
    let b = rhs.values();
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    c_prime[0] = off / diag[0];
    d_prime[0] = b[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - off * c_prime[i - 1];
        c_prime[i] = off / m;
        d_prime[i] = (b[i] - off * d_prime[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d_prime[i] - c_prime[i] * x[i + 1];
    }
    Field::from_values(&g, x).expect("solution sized like rhs")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let term = x * y - comp;
        let t = sum + term;
        comp = (t - sum) - term;
        sum = t;
    }
    sum
}

fn conjugate_gradient(
    rhs: &Field,
    s: f64,
    tol: f64,
    jacobi: bool,
) -> Result<(Field, usize, f64), SolveError> {
    let g = *rhs.grid();
    let n = g.n_cells();
    let b = rhs.values();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok((Field::zeros(&g), 0, 0.0));
    }

    let inv_diag: Option<Vec<f64>> = jacobi.then(|| {
        let cx = s / (g.spacing()[0] * g.spacing()[0]);
        let cy = s / (g.spacing()[1] * g.spacing()[1]);
        let (nx, ny) = (g.nx(), g.ny());
        let mut d = vec![0.0; n];
        for j in 0..ny {
            for i in 0..nx {
                let mut diag = 1.0;
                if i > 0 {
                    diag += cx;
                }
                if i + 1 < nx {
                    diag += cx;
                }
                if j > 0 {
                    diag += cy;
                }
                if j + 1 < ny {
                    diag += cy;
                }
                d[g.idx(i, j)] = 1.0 / diag;
            }
        }
        d
    });
    let precondition = |r: &[f64]| -> Vec<f64> {
        match &inv_diag {
            Some(d) => r.iter().zip(d).map(|(x, m)| x * m).collect(),
            None => r.to_vec(),
        }
    };

    // x0 = rhs keeps sum(x_k) = sum(b) for every iterate.
    let mut x = rhs.clone();
    let ax = apply_shifted(&x, s);
    let mut r: Vec<f64> = b.iter().zip(ax.values()).map(|(bi, ai)| bi - ai).collect();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let max_iter = 20 * n + 100;

    for iter in 0..max_iter {
        let res = dot(&r, &r).sqrt() / b_norm;
        if res <= tol {
            return Ok((x, iter, res));
        }
        let p_field = Field::from_values(&g, p.clone()).expect("sized");
        let ap = apply_shifted(&p_field, s);
        let p_ap = dot(&p, ap.values());
        let alpha = rz / p_ap;
        for k in 0..n {
            x.values_mut()[k] += alpha * p[k];
            r[k] -= alpha * ap.values()[k];
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    let res = dot(&r, &r).sqrt() / b_norm;
    Err(SolveError::IterationCap { iterations: max_iter, residual: res })
}
