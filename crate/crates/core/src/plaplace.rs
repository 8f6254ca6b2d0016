//! Discrete p-Laplacian `Δ_p u = div(|∇u|^{p-2} ∇u)`.
//!
//! The operator is built as the exact negative `L²` gradient of the convex
//! energy
//!
//! ```text
//! E(u) = (1/p) Σ_q w_q (|∇u|_q² + δ²)^{p/2} Δx^d
//! ```
//!
//! where `q` runs over gradient quadrature points (faces in 1D, four
//! face pairs per cell in 2D). The regularisation `δ ≥ 0` smooths the
//! singular (`p < 2`) or degenerate (`p > 2`) behaviour at `∇u = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{check_exponent, divergence, gradient, Field, GradientField};

/// Floor for `|∇u|² + δ²` in the linearisation, only reached when `δ = 0`.
const HESSIAN_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PLaplaceOperator {
    p: f64,
    delta: f64,
}

impl PLaplaceOperator {
    /// `delta = 0` gives the exact p-Laplacian; Newton-type minimisation then
    /// loses smoothness at vanishing gradients.
    pub fn new(p: f64, delta: f64) -> Result<Self> {
        check_exponent(p)?;
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "regularization must be finite and nonnegative, got {delta}"
            )));
        }
        Ok(Self { p, delta })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn unregularized(&self) -> Self {
        Self { p: self.p, delta: 0.0 }
    }

    #[inline]
    fn coefficient(&self, s: f64) -> f64 {
        let base = s + self.delta * self.delta;
        if base == 0.0 {
            // multiplies a zero gradient
            if self.p == 2.0 {
                1.0
            } else {
                0.0
            }
        } else {
            base.powf(0.5 * (self.p - 2.0))
        }
    }

    #[inline]
    fn density(&self, s: f64) -> f64 {
        (s + self.delta * self.delta).powf(0.5 * self.p) / self.p
    }

    /// Pointwise linearised flux `D φ(w) · dw`, where `φ(w) = (|w|² + δ²)^{(p-2)/2} w`.
    #[inline]
    fn linearized(&self, w: [f64; 2], dw: [f64; 2]) -> [f64; 2] {
        let s = w[0] * w[0] + w[1] * w[1];
        let base = (s + self.delta * self.delta).max(HESSIAN_FLOOR);
        let c = base.powf(0.5 * (self.p - 2.0));
        if self.p == 2.0 || s == 0.0 {
            return [c * dw[0], c * dw[1]];
        }
        let c2 = (self.p - 2.0) * base.powf(0.5 * (self.p - 4.0));
        let dot = w[0] * dw[0] + w[1] * dw[1];
        [c * dw[0] + c2 * dot * w[0], c * dw[1] + c2 * dot * w[1]]
    }

    /// Face fluxes `Φ` with `⟨Φ, ∇v⟩ = dE(u)[v]`.
    pub fn flux(&self, g: &GradientField) -> GradientField {
        let grid = *g.grid();
        let mut out = grid.zero_gradient();
        match grid.dim() {
            1 => {
                let gx = &g.components()[0];
                for (o, &a) in out.components_mut()[0].iter_mut().zip(gx) {
                    *o = self.coefficient(a * a) * a;
                }
            }
            _ => {
                let (gx, gy) = (&g.components()[0], &g.components()[1]);
                let (mut fx, mut fy) = (vec![0.0; gx.len()], vec![0.0; gy.len()]);
                grid.for_each_quadrature(|frac, xf, yf| {
                    let (a, b) = (gx[xf], gy[yf]);
                    let c = frac * self.coefficient(a * a + b * b);
                    fx[xf] += c * a;
                    fy[yf] += c * b;
                });
                out.components_mut()[0] = fx;
                out.components_mut()[1] = fy;
            }
        }
        out
    }

    pub fn energy(&self, u: &Field) -> f64 {
        let grid = *u.grid();
        let g = gradient(u);
        let mut acc = 0.0;
        match grid.dim() {
            1 => {
                for &a in &g.components()[0] {
                    acc += self.density(a * a);
                }
            }
            _ => {
                let (gx, gy) = (&g.components()[0], &g.components()[1]);
                grid.for_each_quadrature(|frac, xf, yf| {
                    acc += frac * self.density(gx[xf] * gx[xf] + gy[yf] * gy[yf]);
                });
            }
        }
        acc * grid.cell_volume()
    }

    /// `div(φ(∇u))`, the negative `L²` gradient of [`energy`](Self::energy).
    pub fn apply(&self, u: &Field) -> Field {
        divergence(&self.flux(&gradient(u)))
    }

    /// Directional derivative of [`apply`](Self::apply) at `u` along `v`.
    /// `-linearized_apply(u, ·)` is symmetric positive semidefinite.
    pub fn linearized_apply(&self, u_grad: &GradientField, v: &Field) -> Field {
        let grid = *v.grid();
        let dv = gradient(v);
        let mut out = grid.zero_gradient();
        match grid.dim() {
            1 => {
                let (gx, dx) = (&u_grad.components()[0], &dv.components()[0]);
                for (f, o) in out.components_mut()[0].iter_mut().enumerate() {
                    *o = self.linearized([gx[f], 0.0], [dx[f], 0.0])[0];
                }
            }
            _ => {
                let (gx, gy) = (&u_grad.components()[0], &u_grad.components()[1]);
                let (dx, dy) = (&dv.components()[0], &dv.components()[1]);
                let (mut fx, mut fy) = (vec![0.0; gx.len()], vec![0.0; gy.len()]);
                grid.for_each_quadrature(|frac, xf, yf| {
                    let l = self.linearized([gx[xf], gy[yf]], [dx[xf], dy[yf]]);
                    fx[xf] += frac * l[0];
                    fy[yf] += frac * l[1];
                });
                out.components_mut()[0] = fx;
                out.components_mut()[1] = fy;
            }
        }
        divergence(&out)
    }

    /// `-⟨Δ_p u - Δ_p v, u - v⟩`, nonnegative by monotonicity.
    pub fn monotonicity_gap(&self, u: &Field, v: &Field) -> Result<f64> {
        u.same_grid(v)?;
        let diff = self.apply(u).sub(&self.apply(v));
        Ok(-diff.dot(&u.sub(v)))
    }
}

/// `⟨|η|^{p-2}η - |ζ|^{p-2}ζ, η - ζ⟩` for two vectors of equal length.
pub fn monotone_pairing(eta: &[f64], zeta: &[f64], p: f64) -> f64 {
    assert_eq!(eta.len(), zeta.len());
    let weight = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            0.0
        } else {
            n.powf(p - 2.0)
        }
    };
    let (we, wz) = (weight(eta), weight(zeta));
    eta.iter()
        .zip(zeta)
        .map(|(e, z)| (we * e - wz * z) * (e - z))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Grid;
    use approx::assert_abs_diff_eq;

    struct Lcg(u64);
    impl Lcg {
        fn next(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
        fn field(&mut self, grid: Grid, scale: f64) -> Field {
            let mut u = Field::new(grid, (0..grid.node_count()).map(|_| scale * self.next()).collect()).unwrap();
            u.zero_boundary();
            u
        }
    }

    fn laplacian_stencil(u: &Field) -> Field {
        let grid = *u.grid();
        let n = grid.points_per_axis();
        let h2 = grid.spacing().powi(2);
        let v = u.values();
        let mut out = grid.zeros();
        for idx in 0..grid.node_count() {
            if grid.is_boundary(idx) {
                continue;
            }
            let val = match grid.dim() {
                1 => (v[idx - 1] - 2.0 * v[idx] + v[idx + 1]) / h2,
                _ => (v[idx - 1] + v[idx + 1] + v[idx - n] + v[idx + n] - 4.0 * v[idx]) / h2,
            };
            out.values_mut()[idx] = val;
        }
        out
    }

    #[test]
    fn energy_examples() {
        let grid = Grid::new(1, 1.0, 3).unwrap();
        let u = Field::new(grid, vec![0.0, 1.0, 0.0]).unwrap();
        let op = PLaplaceOperator::new(3.0, 0.0).unwrap();
        assert_abs_diff_eq!(op.energy(&u), 2.0 / 3.0, epsilon = 1e-15);

        let c = Field::new(grid, vec![2.0; 3]).unwrap();
        assert_eq!(op.energy(&c), 0.0);

        let reg = PLaplaceOperator::new(3.0, 0.1).unwrap();
        let e0 = reg.energy(&grid.zeros());
        assert_abs_diff_eq!(e0, 0.1f64.powi(3) / 3.0 * 2.0 * grid.cell_volume(), epsilon = 1e-18);

        let op2 = PLaplaceOperator::new(2.0, 0.0).unwrap();
        let g2 = Grid::new(2, 1.0, 7).unwrap();
        let w = g2.sample(|x, y| x.cos() * (y + 0.3));
        let gw = gradient(&w);
        assert_abs_diff_eq!(op2.energy(&w), 0.5 * gw.dot(&gw), epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PLaplaceOperator::new(1.0, 0.0).is_err());
        assert!(PLaplaceOperator::new(2.0, -1.0).is_err());
        assert!(PLaplaceOperator::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn apply_of_zero_is_zero() {
        for p in [1.5, 2.0, 3.0] {
            let grid = Grid::new(2, 1.0, 5).unwrap();
            let op = PLaplaceOperator::new(p, 0.0).unwrap();
            assert!(op.apply(&grid.zeros()).values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn p2_matches_linear_stencil() {
        let mut rng = Lcg(3);
        let op = PLaplaceOperator::new(2.0, 0.0).unwrap();
        for dim in [1, 2] {
            let grid = Grid::new(dim, 2.0, 9).unwrap();
            for _ in 0..5 {
                let u = rng.field(grid, 1.0);
                let a = op.apply(&u);
                let b = laplacian_stencil(&u);
                let scale = b.max_abs().max(1.0);
                for (x, y) in a.values().iter().zip(b.values()) {
                    assert!((x - y).abs() <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn apply_is_negative_energy_gradient() {
        let mut rng = Lcg(11);
        for dim in [1, 2] {
            let grid = Grid::new(dim, 1.0, 7).unwrap();
            for p in [1.5, 2.0, 3.0, 4.0] {
                let op = PLaplaceOperator::new(p, 1e-3).unwrap();
                for _ in 0..5 {
                    let u = rng.field(grid, 1.0);
                    let a = op.apply(&u);
                    let mut diff_sq = 0.0;
                    for idx in 0..grid.node_count() {
                        if grid.is_boundary(idx) {
                            continue;
                        }
                        let h = 1e-6;
                        let (mut up, mut um) = (u.clone(), u.clone());
                        up.values_mut()[idx] += h;
                        um.values_mut()[idx] -= h;
                        let d = (op.energy(&up) - op.energy(&um)) / (2.0 * h) / grid.cell_volume();
                        diff_sq += (a.values()[idx] + d).powi(2);
                    }
                    let rel = diff_sq.sqrt() / a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
                    assert!(rel <= 1e-5, "p={p} dim={dim} rel={rel}");
                }
            }
        }
    }

    #[test]
    fn linearization_matches_difference_quotient() {
        let mut rng = Lcg(5);
        for dim in [1, 2] {
            let grid = Grid::new(dim, 1.0, 6).unwrap();
            for p in [1.5, 3.0] {
                let op = PLaplaceOperator::new(p, 1e-2).unwrap();
                let u = rng.field(grid, 1.0);
                let v = rng.field(grid, 1.0);
                let h = 1e-6;
                let fd = op.apply(&u.add_scaled(h, &v)).sub(&op.apply(&u.add_scaled(-h, &v))).scaled(0.5 / h);
                let lin = op.linearized_apply(&gradient(&u), &v);
                let err = fd.sub(&lin).l2_norm() / lin.l2_norm();
                assert!(err < 1e-6, "p={p} dim={dim} err={err}");
                // symmetric negative semidefinite
                let w = rng.field(grid, 1.0);
                let vw = lin.dot(&w);
                let wv = op.linearized_apply(&gradient(&u), &w).dot(&v);
                assert!((vw - wv).abs() <= 1e-9 * (1.0 + vw.abs()));
                assert!(lin.dot(&v) <= 1e-12);
            }
        }
    }

    #[test]
    fn monotone_pairing_hand_example() {
        assert_abs_diff_eq!(monotone_pairing(&[1.0, 0.0], &[0.0, 1.0], 3.0), 2.0, epsilon = 1e-15);
        assert_eq!(monotone_pairing(&[0.3, -0.2], &[0.3, -0.2], 1.5), 0.0);
    }

    #[test]
    fn monotonicity_gap_is_nonnegative() {
        let mut rng = Lcg(17);
        for p in [1.5, 3.0, 4.0, 6.0] {
            for dim in [1, 2] {
                let grid = Grid::new(dim, 1.0, 8).unwrap();
                let op = PLaplaceOperator::new(p, 0.0).unwrap();
                for _ in 0..100 {
                    let u = rng.field(grid, 2.0);
                    let v = rng.field(grid, 0.5);
                    let gap = op.monotonicity_gap(&u, &v).unwrap();
                    let scale = (1.0 + u.l2_norm() + v.l2_norm()).powi(2);
                    assert!(gap >= -1e-12 * scale);
                }
                let u = rng.field(grid, 1.0);
                assert_eq!(op.monotonicity_gap(&u, &u).unwrap(), 0.0);
            }
        }
        let other = Grid::new(1, 2.0, 8).unwrap().zeros();
        let op = PLaplaceOperator::new(3.0, 0.0).unwrap();
        assert_eq!(
            op.monotonicity_gap(&Grid::new(1, 1.0, 8).unwrap().zeros(), &other),
            Err(Error::GridMismatch)
        );
    }

    #[test]
    fn odd_symmetry_without_regularization() {
        let mut rng = Lcg(23);
        let grid = Grid::new(2, 1.0, 7).unwrap();
        for p in [1.5, 3.0] {
            let op = PLaplaceOperator::new(p, 0.0).unwrap();
            let u = rng.field(grid, 1.0);
            let a = op.apply(&u);
            let b = op.apply(&u.scaled(-1.0));
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_eq!(*x, -*y);
            }
        }
    }
}
