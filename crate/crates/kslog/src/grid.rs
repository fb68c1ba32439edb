//! Uniform rectangular cell-centered grids in one and two dimensions, with
//! second-order discrete operators under homogeneous Neumann boundary
//! conditions (mirrored ghost cells) and midpoint quadrature.
//!
//! Layout convention: values are stored row-major with the x index fastest,
//! cell `(i, j) -> j * nx + i`. Snapshot files rely on this ordering being
//! fixed.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("field touches the positivity floor: min value {min} <= floor {floor}")]
    FloorViolation { min: f64, floor: f64 },
    #[error("field contains a non-finite value at cell {index}")]
    NonFinite { index: usize },
}

/// Axis-aligned box domain discretized by a uniform cell-centered grid.
///
/// Dimension is 1 or 2. For 1-D grids the y axis is collapsed to a single
/// cell of unit extent so that `spacing[0] * spacing[1]` is always the cell
/// volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    lengths: [f64; 2],
    cells: [usize; 2],
    spacing: [f64; 2],
}

impl GridSpec {
    pub fn new_1d(length: f64, nx: usize) -> Result<Self, GridError> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(GridError::InvalidSpec(format!("length must be positive, got {length}")));
        }
        if nx < 4 {
            return Err(GridError::InvalidSpec(format!("need >= 4 cells per axis, got {nx}")));
        }
        Ok(GridSpec {
            dim: 1,
            lengths: [length, 1.0],
            cells: [nx, 1],
            spacing: [length / nx as f64, 1.0],
        })
    }

    pub fn new_2d(lengths: [f64; 2], cells: [usize; 2]) -> Result<Self, GridError> {
        for a in 0..2 {
            if !(lengths[a] > 0.0) || !lengths[a].is_finite() {
                return Err(GridError::InvalidSpec(format!(
                    "axis {a} length must be positive, got {}",
                    lengths[a]
                )));
            }
            if cells[a] < 4 {
                return Err(GridError::InvalidSpec(format!(
                    "axis {a} needs >= 4 cells, got {}",
                    cells[a]
                )));
            }
        }
        Ok(GridSpec {
            dim: 2,
            lengths,
            cells,
            spacing: [lengths[0] / cells[0] as f64, lengths[1] / cells[1] as f64],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    pub fn lengths(&self) -> [f64; 2] {
        self.lengths
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    /// Smallest spacing over active axes.
    pub fn h_min(&self) -> f64 {
        if self.dim == 1 {
            self.spacing[0]
        } else {
            self.spacing[0].min(self.spacing[1])
        }
    }

    pub fn n_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    /// Cell volume h^d.
    pub fn cell_volume(&self) -> f64 {
        if self.dim == 1 {
            self.spacing[0]
        } else {
            self.spacing[0] * self.spacing[1]
        }
    }

    /// |Omega|.
    pub fn domain_volume(&self) -> f64 {
        if self.dim == 1 {
            self.lengths[0]
        } else {
            self.lengths[0] * self.lengths[1]
        }
    }

    /// Euclidean diagonal of the box, the diameter of a convex rectangle.
    pub fn diameter(&self) -> f64 {
        if self.dim == 1 {
            self.lengths[0]
        } else {
            self.lengths[0].hypot(self.lengths[1])
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.cells[0] && j < self.cells[1]);
        j * self.cells[0] + i
    }

    /// Center coordinates of cell (i, j). The y coordinate is 0 for 1-D grids.
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        let x = (i as f64 + 0.5) * self.spacing[0];
        let y = if self.dim == 2 { (j as f64 + 0.5) * self.spacing[1] } else { 0.0 };
        [x, y]
    }

    pub fn cell_center_flat(&self, index: usize) -> [f64; 2] {
        let i = index % self.cells[0];
        let j = index / self.cells[0];
        self.cell_center(i, j)
    }
}

/// Scalar grid function, one value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn constant(grid: &GridSpec, value: f64) -> Field {
        Field { grid: *grid, values: vec![value; grid.n_cells()] }
    }

    pub fn zeros(grid: &GridSpec) -> Field {
        Field::constant(grid, 0.0)
    }

    pub fn from_values(grid: &GridSpec, values: Vec<f64>) -> Result<Field, GridError> {
        if values.len() != grid.n_cells() {
            return Err(GridError::InvalidSpec(format!(
                "value count {} does not match cell count {}",
                values.len(),
                grid.n_cells()
            )));
        }
        Ok(Field { grid: *grid, values })
    }

    /// Sample a pointwise function of the cell centers.
    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 2]) -> f64) -> Field {
        let mut values = Vec::with_capacity(grid.n_cells());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                values.push(f(grid.cell_center(i, j)));
            }
        }
        Field { grid: *grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn check_finite(&self) -> Result<(), GridError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(GridError::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Minimum value together with the cell-center coordinates where it is
    /// attained (first occurrence).
    pub fn min_with_pos(&self) -> (f64, [f64; 2]) {
        let mut best = f64::INFINITY;
        let mut at = 0;
        for (k, &v) in self.values.iter().enumerate() {
            if v < best {
                best = v;
                at = k;
            }
        }
        (best, self.grid.cell_center_flat(at))
    }

    pub fn max_with_pos(&self) -> (f64, [f64; 2]) {
        let mut best = f64::NEG_INFINITY;
        let mut at = 0;
        for (k, &v) in self.values.iter().enumerate() {
            if v > best {
                best = v;
                at = k;
            }
        }
        (best, self.grid.cell_center_flat(at))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        let values =
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Field { grid: self.grid, values }
    }
}

/// Per-face scalar data on the staggered face grid.
///
/// `x` holds x-directed faces, `(nx + 1) * ny` entries indexed
/// `j * (nx + 1) + i`; face `i` sits between cells `i - 1` and `i`.
/// `y` holds y-directed faces, `nx * (ny + 1)` entries indexed `j * nx + i`.
/// Boundary faces are the ones with `i` in `{0, nx}` (resp. `j` in `{0, ny}`).
#[derive(Debug, Clone, PartialEq)]
pub struct FaceData {
    grid: GridSpec,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FaceData {
    pub fn zeros(grid: &GridSpec) -> FaceData {
        FaceData {
            grid: *grid,
            x: vec![0.0; (grid.nx() + 1) * grid.ny()],
            y: vec![0.0; grid.nx() * (grid.ny() + 1)],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn idx_x(&self, i: usize, j: usize) -> usize {
        j * (self.grid.nx() + 1) + i
    }

    #[inline]
    pub fn idx_y(&self, i: usize, j: usize) -> usize {
        j * self.grid.nx() + i
    }

    pub fn max_abs(&self) -> f64 {
        let mx = self.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.y.iter().fold(mx, |m, v| m.max(v.abs()))
    }
}

/// Per-face differences (f_right - f_left) / h. Boundary faces carry zero
/// gradient, which is the mirrored-ghost Neumann condition.
pub fn face_gradient(f: &Field) -> FaceData {
    let g = f.grid;
    let (nx, ny) = (g.nx(), g.ny());
    let mut faces = FaceData::zeros(&g);
    let inv_hx = 1.0 / g.spacing()[0];
    for j in 0..ny {
        for i in 1..nx {
            faces.x[j * (nx + 1) + i] = (f.values[g.idx(i, j)] - f.values[g.idx(i - 1, j)]) * inv_hx;
        }
    }
    if g.dim() == 2 {
        let inv_hy = 1.0 / g.spacing()[1];
        for j in 1..ny {
            for i in 0..nx {
                faces.y[j * nx + i] = (f.values[g.idx(i, j)] - f.values[g.idx(i, j - 1)]) * inv_hy;
            }
        }
    }
    faces
}

/// Flux-form divergence: cell value is the net outflux divided by h per axis.
pub fn divergence(flux: &FaceData) -> Field {
    let g = flux.grid;
    let (nx, ny) = (g.nx(), g.ny());
    let mut out = Field::zeros(&g);
    let inv_hx = 1.0 / g.spacing()[0];
    for j in 0..ny {
        for i in 0..nx {
            out.values[g.idx(i, j)] =
                (flux.x[j * (nx + 1) + i + 1] - flux.x[j * (nx + 1) + i]) * inv_hx;
        }
    }
    if g.dim() == 2 {
        let inv_hy = 1.0 / g.spacing()[1];
        for j in 0..ny {
            for i in 0..nx {
                out.values[g.idx(i, j)] +=
                    (flux.y[(j + 1) * nx + i] - flux.y[j * nx + i]) * inv_hy;
            }
        }
    }
    out
}

/// Standard second-order Laplacian with mirrored ghost cells (homogeneous
/// Neumann). Missing neighbors contribute nothing, matching
/// `divergence(face_gradient(f))` up to rounding.
pub fn laplacian_neumann(f: &Field) -> Field {
    let g = f.grid;
    let (nx, ny) = (g.nx(), g.ny());
    let mut out = Field::zeros(&g);
    let inv_hx2 = 1.0 / (g.spacing()[0] * g.spacing()[0]);
    for j in 0..ny {
        for i in 0..nx {
            let c = f.values[g.idx(i, j)];
            let mut acc = 0.0;
            if i > 0 {
                acc += f.values[g.idx(i - 1, j)] - c;
            }
            if i + 1 < nx {
                acc += f.values[g.idx(i + 1, j)] - c;
            }
            out.values[g.idx(i, j)] = acc * inv_hx2;
        }
    }
    if g.dim() == 2 {
        let inv_hy2 = 1.0 / (g.spacing()[1] * g.spacing()[1]);
        for j in 0..ny {
            for i in 0..nx {
                let c = f.values[g.idx(i, j)];
                let mut acc = 0.0;
                if j > 0 {
                    acc += f.values[g.idx(i, j - 1)] - c;
                }
                if j + 1 < ny {
                    acc += f.values[g.idx(i, j + 1)] - c;
                }
                out.values[g.idx(i, j)] += acc * inv_hy2;
            }
        }
    }
    out
}

/// Midpoint quadrature of a cell-centered field: sum f_i h^d, exact for
/// cellwise data. Kahan-compensated so telescoping sums cancel to well below
/// the 1e-12 relative budget the conservation checks assume.
pub fn integrate(f: &Field) -> f64 {
    let vol = f.grid.cell_volume();
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in &f.values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum * vol
}

/// Cell-centered |grad log v|^2: the arithmetic mean of squared face
/// gradients of log v, per axis. `floor` guards the logarithm; any value at
/// or below it invalidates the computation rather than being clamped.
pub fn grad_log_sq(v: &Field, floor: f64) -> Result<Field, GridError> {
    let min = v.min();
    if !(min > floor) {
        return Err(GridError::FloorViolation { min, floor });
    }
    let log_v = v.map(f64::ln);
    let faces = face_gradient(&log_v);
    Ok(face_sq_mean(&faces))
}

/// Mean of squared face values per cell, summed over axes. Shared by
/// `grad_log_sq` and the diagnostics that reuse precomputed face gradients.
pub fn face_sq_mean(faces: &FaceData) -> Field {
    let g = *faces.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let mut out = Field::zeros(&g);
    for j in 0..ny {
        for i in 0..nx {
            let gl = faces.x[j * (nx + 1) + i];
            let gr = faces.x[j * (nx + 1) + i + 1];
            let mut acc = 0.5 * (gl * gl + gr * gr);
            if g.dim() == 2 {
                let gd = faces.y[j * nx + i];
                let gu = faces.y[(j + 1) * nx + i];
                acc += 0.5 * (gd * gd + gu * gu);
            }
            out.values[g.idx(i, j)] = acc;
        }
    }
    out
}
