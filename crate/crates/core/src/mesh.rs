//! Uniform grids on the truncated box `[-L, L]^d` with homogeneous Dirichlet
//! boundary, staggered (face-centred) differences and the discrete norms of
//! the Gelfand triple `Y ⊂ L² ⊂ Y'`.
//!
//! Gradients live on faces between neighbouring nodes. The divergence is the
//! exact negative adjoint of the gradient for fields vanishing on the
//! boundary, so summation by parts holds to rounding.
//!
//! For `dim = 2` the magnitude `|∇u|` is sampled at four quadrature points per
//! cell: each pairs one horizontal face with one vertical face of the cell,
//! with weight 1/4. At `p = 2` this reproduces the 5-point Laplacian exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, n: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 points per axis, got {n}")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("half width must be positive, got {half_width}")));
        }
        Ok(Self { dim, half_width, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn node_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Quadrature weight `Δx^dim` attached to every node and face.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Axis indices of a node, `x` fastest.
    pub fn node_indices(&self, idx: usize) -> [usize; 2] {
        match self.dim {
            1 => [idx, 0],
            _ => [idx % self.n, idx / self.n],
        }
    }

    pub fn node_coordinates(&self, idx: usize) -> [f64; 2] {
        let [i, j] = self.node_indices(idx);
        match self.dim {
            1 => [self.coordinate(i), 0.0],
            _ => [self.coordinate(i), self.coordinate(j)],
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let last = self.n - 1;
        let [i, j] = self.node_indices(idx);
        match self.dim {
            1 => i == 0 || i == last,
            _ => i == 0 || i == last || j == 0 || j == last,
        }
    }

    pub fn interior_count(&self) -> usize {
        (self.n - 2).pow(self.dim as u32)
    }

    /// Lengths of the face arrays, one per axis.
    pub fn face_counts(&self) -> Vec<usize> {
        match self.dim {
            1 => vec![self.n - 1],
            _ => vec![(self.n - 1) * self.n, self.n * (self.n - 1)],
        }
    }

    /// Number of quadrature points used for `|∇u|`-dependent integrals.
    pub fn quadrature_count(&self) -> usize {
        match self.dim {
            1 => self.n - 1,
            _ => 4 * (self.n - 1) * (self.n - 1),
        }
    }

    /// Visits every gradient quadrature point as `(weight fraction, x-face, y-face)`.
    /// In 1D the y-face is unused and reported as `usize::MAX`.
    pub(crate) fn for_each_quadrature<F: FnMut(f64, usize, usize)>(&self, mut f: F) {
        let n = self.n;
        match self.dim {
            1 => {
                for face in 0..n - 1 {
                    f(1.0, face, usize::MAX);
                }
            }
            _ => {
                for cj in 0..n - 1 {
                    for ci in 0..n - 1 {
                        let bottom = cj * (n - 1) + ci;
                        let top = (cj + 1) * (n - 1) + ci;
                        let left = cj * n + ci;
                        let right = cj * n + ci + 1;
                        for xf in [bottom, top] {
                            for yf in [left, right] {
                                f(0.25, xf, yf);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn zeros(&self) -> Field {
        Field {
            grid: *self,
            values: vec![0.0; self.node_count()],
        }
    }

    /// Samples `f` at every node; boundary nodes are set to zero.
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> Field {
        let values = (0..self.node_count())
            .map(|idx| {
                if self.is_boundary(idx) {
                    0.0
                } else {
                    let [x, y] = self.node_coordinates(idx);
                    f(x, y)
                }
            })
            .collect();
        Field { grid: *self, values }
    }

    /// Zero gradient field with the staggered layout of this grid.
    pub fn zero_gradient(&self) -> GradientField {
        GradientField {
            grid: *self,
            components: self.face_counts().into_iter().map(|c| vec![0.0; c]).collect(),
        }
    }
}

/// Node values of a grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::LengthMismatch {
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn zero_boundary(&mut self) {
        let grid = self.grid;
        for (idx, v) in self.values.iter_mut().enumerate() {
            if grid.is_boundary(idx) {
                *v = 0.0;
            }
        }
    }

    pub fn scaled(&self, alpha: f64) -> Field {
        self.map(|v| alpha * v)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &Field) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &Field) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.add_scaled(-1.0, other)
    }

    pub fn add(&self, other: &Field) -> Field {
        self.add_scaled(1.0, other)
    }

    /// Discrete `L²` inner product with weight `Δx^dim`.
    pub fn dot(&self, other: &Field) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.grid.cell_volume() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `(Δx^dim Σ_q |∇u|^p)^{1/p}` over the gradient quadrature points.
    pub fn lp_grad_norm(&self, p: f64) -> Result<f64> {
        check_exponent(p)?;
        let g = gradient(self);
        let mut acc = 0.0;
        match self.grid.dim {
            1 => {
                for &gx in &g.components[0] {
                    acc += gx.abs().powf(p);
                }
            }
            _ => {
                let (gx, gy) = (&g.components[0], &g.components[1]);
                self.grid.for_each_quadrature(|frac, xf, yf| {
                    acc += frac * (gx[xf] * gx[xf] + gy[yf] * gy[yf]).powf(0.5 * p);
                });
            }
        }
        Ok((self.grid.cell_volume() * acc).powf(1.0 / p))
    }

    /// `‖u‖_Y = ‖u‖_{L²} + ‖∇u‖_{L^p}`.
    pub fn y_norm(&self, p: f64) -> Result<f64> {
        Ok(self.l2_norm() + self.lp_grad_norm(p)?)
    }

    /// CSV rows `index,x[,y],value` with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        match self.grid.dim {
            1 => writeln!(out, "index,x,value")?,
            _ => writeln!(out, "index,x,y,value")?,
        }
        for (idx, v) in self.values.iter().enumerate() {
            let [x, y] = self.grid.node_coordinates(idx);
            match self.grid.dim {
                1 => writeln!(out, "{idx},{x},{v}")?,
                _ => writeln!(out, "{idx},{x},{y},{v}")?,
            }
        }
        Ok(())
    }

    /// Row-major little-endian `f64` dump of the node values.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(grid: Grid, mut input: R) -> Result<Field> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * grid.node_count() {
            return Err(Error::LengthMismatch {
                expected: 8 * grid.node_count(),
                got: bytes.len(),
            });
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Field::new(grid, values)
    }
}

pub(crate) fn check_exponent(p: f64) -> Result<()> {
    if p.is_finite() && p > 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("p must exceed 1, got {p}")))
    }
}

/// Face-centred gradient: one array per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    grid: Grid,
    components: Vec<Vec<f64>>,
}

impl GradientField {
    pub fn new(grid: Grid, components: Vec<Vec<f64>>) -> Result<Self> {
        let counts = grid.face_counts();
        if components.len() != counts.len() {
            return Err(Error::LengthMismatch {
                expected: counts.len(),
                got: components.len(),
            });
        }
        for (c, &expected) in components.iter().zip(&counts) {
            if c.len() != expected {
                return Err(Error::LengthMismatch { expected, got: c.len() });
            }
        }
        Ok(Self { grid, components })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.components
    }

    /// Face inner product with weight `Δx^dim`.
    pub fn dot(&self, other: &GradientField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let s: f64 = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        self.grid.cell_volume() * s
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Forward differences on faces. Boundary nodes enter with their stored value,
/// which solvers keep at zero.
pub fn gradient(u: &Field) -> GradientField {
    let grid = u.grid;
    let n = grid.n;
    let inv = 1.0 / grid.spacing();
    let v = &u.values;
    let components = match grid.dim {
        1 => vec![(0..n - 1).map(|i| (v[i + 1] - v[i]) * inv).collect()],
        _ => {
            let mut gx = Vec::with_capacity((n - 1) * n);
            for j in 0..n {
                for i in 0..n - 1 {
                    gx.push((v[j * n + i + 1] - v[j * n + i]) * inv);
                }
            }
            let mut gy = Vec::with_capacity(n * (n - 1));
            for j in 0..n - 1 {
                for i in 0..n {
                    gy.push((v[(j + 1) * n + i] - v[j * n + i]) * inv);
                }
            }
            vec![gx, gy]
        }
    };
    GradientField { grid, components }
}

/// Negative adjoint of [`gradient`] on interior nodes; zero on the boundary.
pub fn divergence(g: &GradientField) -> Field {
    let grid = g.grid;
    let n = grid.n;
    let inv = 1.0 / grid.spacing();
    let mut values = vec![0.0; grid.node_count()];
    match grid.dim {
        1 => {
            let gx = &g.components[0];
            for i in 1..n - 1 {
                values[i] = (gx[i] - gx[i - 1]) * inv;
            }
        }
        _ => {
            let (gx, gy) = (&g.components[0], &g.components[1]);
            for j in 1..n - 1 {
                for i in 1..n - 1 {
                    let dx = gx[j * (n - 1) + i] - gx[j * (n - 1) + i - 1];
                    let dy = gy[j * n + i] - gy[(j - 1) * n + i];
                    values[j * n + i] = (dx + dy) * inv;
                }
            }
        }
    }
    Field { grid, values }
}
