//! Vector fields and jump maps used by tests, the corpus and the demos.

use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use super::hybrid::Jump;
use super::Field;

/// `x' = a x` with `p = (a)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Linear;

impl Field for Linear {
    fn dim(&self) -> usize {
        1
    }
    fn n_params(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        dvector![p[0] * x[0]]
    }
    fn dx(&self, _x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        dmatrix![p[0]]
    }
    fn dp(&self, x: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        dmatrix![x[0]]
    }
}

/// Hopf normal form in Cartesian coordinates,
/// `r' = r(β - r²)`, `θ' = ω + s(r² - β)`.
///
/// `p = (β, ω)` without shear and `p = (β, ω, s)` with it. The limit
/// cycle `r = √β` has period `2π/ω` in both cases.
#[derive(Clone, Copy, Debug, Default)]
pub struct Hopf {
    pub shear: bool,
}

impl Hopf {
    pub fn sheared() -> Self {
        Hopf { shear: true }
    }

    fn s(&self, p: &DVector<f64>) -> f64 {
        if self.shear {
            p[2]
        } else {
            0.0
        }
    }
}

impl Field for Hopf {
    fn dim(&self) -> usize {
        2
    }
    fn n_params(&self) -> usize {
        if self.shear {
            3
        } else {
            2
        }
    }
    fn eval(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        let (u, v) = (x[0], x[1]);
        let r2 = u * u + v * v;
        let a = p[0] - r2;
        let b = p[1] + self.s(p) * (r2 - p[0]);
        dvector![u * a - v * b, v * a + u * b]
    }
    fn dx(&self, x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        let (u, v) = (x[0], x[1]);
        let s = self.s(p);
        let r2 = u * u + v * v;
        let a = p[0] - r2;
        let b = p[1] + s * (r2 - p[0]);
        dmatrix![
            a - 2.0 * u * u - 2.0 * s * u * v, -2.0 * u * v - b - 2.0 * s * v * v;
            -2.0 * u * v + b + 2.0 * s * u * u, a - 2.0 * v * v + 2.0 * s * u * v
        ]
    }
    fn dp(&self, x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        let (u, v) = (x[0], x[1]);
        let s = self.s(p);
        let mut m = DMatrix::zeros(2, self.n_params());
        m[(0, 0)] = u + v * s;
        m[(1, 0)] = v - u * s;
        m[(0, 1)] = -v;
        m[(1, 1)] = u;
        if self.shear {
            let d = u * u + v * v - p[0];
            m[(0, 2)] = -v * d;
            m[(1, 2)] = u * d;
        }
        m
    }
}

impl Hopf {
    /// Closed-form `∇ψ / ω` of the asymptotic phase `ψ = θ + s ln(r/√β)`.
    pub fn phase_gradient(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let s = self.s(p);
        dvector![-x[1] + s * x[0], x[0] + s * x[1]] / (p[1] * r2)
    }
}

/// Free flight under gravity, `x = (height, velocity)`, `p = (γ, r)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Ballistic;

impl Field for Ballistic {
    fn dim(&self) -> usize {
        2
    }
    fn n_params(&self) -> usize {
        2
    }
    fn eval(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        dvector![x[1], -p[0]]
    }
    fn dx(&self, _x: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        dmatrix![0.0, 1.0; 0.0, 0.0]
    }
    fn dp(&self, _x: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        dmatrix![0.0, 0.0; -1.0, 0.0]
    }
}

/// Van der Pol oscillator `x'' - μ(1 - x²)x' + x = 0`, `p = (μ, r)`.
/// The restitution coefficient `r` only enters the impact law.
#[derive(Clone, Copy, Debug, Default)]
pub struct VanDerPol;

impl Field for VanDerPol {
    fn dim(&self) -> usize {
        2
    }
    fn n_params(&self) -> usize {
        2
    }
    fn eval(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        dvector![x[1], p[0] * (1.0 - x[0] * x[0]) * x[1] - x[0]]
    }
    fn dx(&self, x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        dmatrix![
            0.0, 1.0;
            -2.0 * p[0] * x[0] * x[1] - 1.0, p[0] * (1.0 - x[0] * x[0])
        ]
    }
    fn dp(&self, x: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        dmatrix![0.0, 0.0; (1.0 - x[0] * x[0]) * x[1], 0.0]
    }
}

/// Velocity reversal `(x, v) ↦ (x, -r v)` with `r = p[index]`.
#[derive(Clone, Copy, Debug)]
pub struct Impact {
    pub index: usize,
}

impl Jump for Impact {
    fn eval(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        dvector![x[0], -p[self.index] * x[1]]
    }
    fn dx(&self, _x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        dmatrix![1.0, 0.0; 0.0, -p[self.index]]
    }
    fn dp(&self, x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(2, p.len());
        m[(1, self.index)] = -x[1];
        m
    }
}

/// `g(x, p) = x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityJump;

impl Jump for IdentityJump {
    fn eval(&self, x: &DVector<f64>, _p: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn dx(&self, x: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len())
    }
    fn dp(&self, x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), p.len())
    }
}

#[cfg(test)]
mod tests {
    use super::super::fd_columns;
    use super::*;

    fn check(field: &dyn Field, x: DVector<f64>, p: DVector<f64>) {
        let jx = fd_columns(|y| field.eval(y, &p), &x);
        let jp = fd_columns(|q| field.eval(&x, q), &p);
        assert!((jx - field.dx(&x, &p)).amax() < 1e-5);
        assert!((jp - field.dp(&x, &p)).amax() < 1e-5);
    }

    #[test]
    fn jacobians_match_differences() {
        check(&Linear, dvector![0.7], dvector![-1.3]);
        check(&Hopf::default(), dvector![0.4, -1.1], dvector![0.8, 2.0]);
        check(&Hopf::sheared(), dvector![0.4, -1.1], dvector![0.8, 2.0, 0.6]);
        check(&Ballistic, dvector![1.0, -2.0], dvector![9.81, 0.8]);
        check(&VanDerPol, dvector![1.5, 0.3], dvector![1.0, 0.8]);
    }

    #[test]
    fn jump_jacobians_match_differences() {
        let x = dvector![0.2, -1.7];
        let p = dvector![1.0, 0.7];
        let g = Impact { index: 1 };
        let jx = fd_columns(|y| g.eval(y, &p), &x);
        let jp = fd_columns(|q| g.eval(&x, q), &p);
        assert!((jx - g.dx(&x, &p)).amax() < 1e-8);
        assert!((jp - g.dp(&x, &p)).amax() < 1e-8);
    }

    #[test]
    fn hopf_phase_gradient_is_normalized() {
        let h = Hopf::sheared();
        let p = dvector![1.0, 2.0, 0.5];
        let x = dvector![0.6, 0.8];
        let g = h.phase_gradient(&x, &p);
        assert!((g.dot(&h.eval(&x, &p)) - 1.0).abs() < 1e-14);
    }
}
