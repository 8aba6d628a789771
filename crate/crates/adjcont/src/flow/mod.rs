//! Sensitivities of ODE segments, Poincaré sections, periodic orbits and
//! hybrid junctions by direct differentiation.
//!
//! Segments use rescaled time `τ ∈ [0, 1]`: `x' = T f(x, p)`. The variational
//! equations for `X = ∂x/∂x0` and `P = ∂x/∂p` are integrated alongside `x`
//! with fixed-step RK4.
//!
//! ```
//! use adjcont::flow::{fields::Hopf, segment_sensitivities, Segment};
//! use nalgebra::dvector;
//!
//! let hopf = Hopf::default();
//! let p = dvector![1.0, 2.0];
//! let seg = Segment::new(&hopf, dvector![1.0, 0.0], std::f64::consts::FRAC_PI_2, p, 400);
//! let s = segment_sensitivities(&seg).unwrap();
//! // half a period on the unit circle
//! assert!((s.x1[0] + 1.0).abs() < 1e-9);
//! ```

pub mod corpus;
pub mod fields;
pub mod hybrid;

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::problem::fd_step;

pub use hybrid::{hybrid_monodromy, hybrid_period_sensitivity, saltation, HybridJunction, HybridOrbit, Saltation};

/// Smooth vector field `f(x, p)`. Jacobians default to central differences.
pub trait Field: Sync {
    fn dim(&self) -> usize;
    fn n_params(&self) -> usize;
    fn eval(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64>;

    fn dx(&self, x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        fd_columns(|y| self.eval(y, p), x)
    }

    fn dp(&self, x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        fd_columns(|q| self.eval(x, q), p)
    }
}

/// Scalar function `h(x, p)` defining a section or event surface.
pub trait Surface: Sync {
    fn eval(&self, x: &DVector<f64>, p: &DVector<f64>) -> f64;
    /// `∂ₓh` as a column.
    fn dx(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64>;
    /// `∂ₚh` as a column.
    fn dp(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64>;
}

/// `h(x, p) = nᵀx - c - wᵀp`.
#[derive(Clone, Debug)]
pub struct Hyperplane {
    pub normal: DVector<f64>,
    pub offset: f64,
    pub param_weights: DVector<f64>,
}

impl Hyperplane {
    pub fn new(normal: DVector<f64>, offset: f64, n_params: usize) -> Self {
        Hyperplane {
            normal,
            offset,
            param_weights: DVector::zeros(n_params),
        }
    }

    /// Coordinate plane `x[i] = c`.
    pub fn coordinate(n: usize, i: usize, c: f64, n_params: usize) -> Self {
        let mut normal = DVector::zeros(n);
        normal[i] = 1.0;
        Self::new(normal, c, n_params)
    }

    pub fn with_param_weights(mut self, w: DVector<f64>) -> Self {
        self.param_weights = w;
        self
    }
}

impl Surface for Hyperplane {
    fn eval(&self, x: &DVector<f64>, p: &DVector<f64>) -> f64 {
        self.normal.dot(x) - self.offset - self.param_weights.dot(p)
    }

    fn dx(&self, _x: &DVector<f64>, _p: &DVector<f64>) -> DVector<f64> {
        self.normal.clone()
    }

    fn dp(&self, _x: &DVector<f64>, _p: &DVector<f64>) -> DVector<f64> {
        -self.param_weights.clone()
    }
}

pub(crate) fn fd_columns(mut f: impl FnMut(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let m = f(x).len();
    let mut out = DMatrix::zeros(m, x.len());
    let mut y = x.clone();
    for k in 0..x.len() {
        let h = fd_step(x[k]);
        y[k] = x[k] + h;
        let fp = f(&y);
        y[k] = x[k] - h;
        let fm = f(&y);
        y[k] = x[k];
        out.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    out
}

/// Trajectory segment `x' = T f(x, p)` on `τ ∈ [0, 1]`.
pub struct Segment<'a> {
    pub field: &'a dyn Field,
    pub x0: DVector<f64>,
    pub t: f64,
    pub p: DVector<f64>,
    pub n_steps: usize,
}

impl<'a> Segment<'a> {
    pub fn new(field: &'a dyn Field, x0: DVector<f64>, t: f64, p: DVector<f64>, n_steps: usize) -> Self {
        Segment { field, x0, t, p, n_steps }
    }

    fn check(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Invalid("a segment needs at least one step".into()));
        }
        if self.x0.len() != self.field.dim() {
            return Err(Error::dim("segment initial state", self.field.dim(), self.x0.len()));
        }
        if self.p.len() != self.field.n_params() {
            return Err(Error::dim("segment parameters", self.field.n_params(), self.p.len()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SegmentSensitivity {
    pub x1: DVector<f64>,
    pub fx1: DVector<f64>,
    /// `∂x(1)/∂x(0)`.
    pub x_mat: DMatrix<f64>,
    /// `∂x(1)/∂p` at fixed `T`.
    pub p_mat: DMatrix<f64>,
}

struct Aug {
    x: DVector<f64>,
    xm: DMatrix<f64>,
    pm: DMatrix<f64>,
}

impl Aug {
    fn axpy(&self, a: f64, d: &Aug) -> Aug {
        Aug {
            x: &self.x + &d.x * a,
            xm: &self.xm + &d.xm * a,
            pm: &self.pm + &d.pm * a,
        }
    }
}

fn aug_rhs(field: &dyn Field, t: f64, p: &DVector<f64>, s: &Aug) -> Aug {
    let fx = field.dx(&s.x, p);
    Aug {
        x: field.eval(&s.x, p) * t,
        xm: &fx * &s.xm * t,
        pm: (&fx * &s.pm + field.dp(&s.x, p)) * t,
    }
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Integrates `x`, `X` and `P` jointly with `X(0) = I`, `P(0) = 0`.
pub fn segment_sensitivities(seg: &Segment) -> Result<SegmentSensitivity> {
    seg.check()?;
    let n = seg.field.dim();
    let mut s = Aug {
        x: seg.x0.clone(),
        xm: DMatrix::identity(n, n),
        pm: DMatrix::zeros(n, seg.p.len()),
    };
    let dt = 1.0 / seg.n_steps as f64;
    for _ in 0..seg.n_steps {
        let k1 = aug_rhs(seg.field, seg.t, &seg.p, &s);
        let k2 = aug_rhs(seg.field, seg.t, &seg.p, &s.axpy(dt / 2.0, &k1));
        let k3 = aug_rhs(seg.field, seg.t, &seg.p, &s.axpy(dt / 2.0, &k2));
        let k4 = aug_rhs(seg.field, seg.t, &seg.p, &s.axpy(dt, &k3));
        s = Aug {
            x: &s.x + (k1.x + k2.x * 2.0 + k3.x * 2.0 + k4.x) * (dt / 6.0),
            xm: &s.xm + (k1.xm + k2.xm * 2.0 + k3.xm * 2.0 + k4.xm) * (dt / 6.0),
            pm: &s.pm + (k1.pm + k2.pm * 2.0 + k3.pm * 2.0 + k4.pm) * (dt / 6.0),
        };
        if !finite(&s.x) || s.xm.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("segment integration".into()));
        }
    }
    Ok(SegmentSensitivity {
        fx1: seg.field.eval(&s.x, &seg.p),
        x1: s.x,
        x_mat: s.xm,
        p_mat: s.pm,
    })
}

/// One classical RK4 step of `x' = f(x, p)` with (possibly negative) step `h`.
pub fn rk4_step(field: &dyn Field, x: &DVector<f64>, p: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = field.eval(x, p);
    let k2 = field.eval(&(x + &k1 * (h / 2.0)), p);
    let k3 = field.eval(&(x + &k2 * (h / 2.0)), p);
    let k4 = field.eval(&(x + &k3 * h), p);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Flow over physical time `t` in `n_steps` equal steps.
pub fn flow(field: &dyn Field, x: &DVector<f64>, p: &DVector<f64>, t: f64, n_steps: usize) -> DVector<f64> {
    let h = t / n_steps.max(1) as f64;
    (0..n_steps.max(1)).fold(x.clone(), |y, _| rk4_step(field, &y, p, h))
}

/// Bracket width at which event bisection stops.
pub const EVENT_TOL: f64 = 1e-12;

/// Integrates with step `dt` until `h` changes sign, then bisects inside the
/// step using partial RK4 steps. Returns the event time and state.
pub fn flow_until(
    field: &dyn Field,
    x0: &DVector<f64>,
    p: &DVector<f64>,
    surf: &dyn Surface,
    dt: f64,
    t_max: f64,
) -> Result<(f64, DVector<f64>)> {
    let mut t = 0.0;
    let mut x = x0.clone();
    let mut hx = surf.eval(&x, p);
    while t < t_max {
        let xn = rk4_step(field, &x, p, dt);
        let hn = surf.eval(&xn, p);
        if !finite(&xn) {
            return Err(Error::Evaluation("event search".into()));
        }
        if hx != 0.0 && hx * hn <= 0.0 {
            let g = |s: f64| surf.eval(&rk4_step(field, &x, p, s), p);
            let s = bisect_root(g, 0.0, dt, hx, hn);
            return Ok((t + s, rk4_step(field, &x, p, s)));
        }
        t += dt;
        x = xn;
        hx = hn;
    }
    Err(Error::NoConvergence(format!("no event before t = {t_max}")))
}

/// Bisection with a final secant through the bracket ends.
pub(crate) fn bisect_root(g: impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut ga: f64, mut gb: f64) -> f64 {
    while (b - a).abs() > EVENT_TOL {
        let m = 0.5 * (a + b);
        let gm = g(m);
        if gm == 0.0 {
            return m;
        }
        if ga * gm < 0.0 {
            b = m;
            gb = gm;
        } else {
            a = m;
            ga = gm;
        }
    }
    if gb == ga {
        0.5 * (a + b)
    } else {
        a - ga * (b - a) / (gb - ga)
    }
}

/// Sensitivities of the terminal point and duration of a segment that
/// ends on a section `h = 0`.
#[derive(Clone, Debug)]
pub struct SectionSensitivity {
    /// `Π = I - f ∂ₓh / L_f h`.
    pub projection: DMatrix<f64>,
    pub lie: f64,
    pub dx1_dx0: DMatrix<f64>,
    pub dx1_dp: DMatrix<f64>,
    pub dx1_dh: DVector<f64>,
    pub dt_dx0: DVector<f64>,
    pub dt_dp: DVector<f64>,
    pub dt_dh: f64,
}

/// Smallest admissible `|L_f h|`.
pub const TANGENCY_TOL: f64 = 1e-10;

pub fn section_sensitivities(seg: &Segment, sec: &dyn Surface) -> Result<SectionSensitivity> {
    let s = segment_sensitivities(seg)?;
    section_from(&s, sec, &seg.p)
}

pub fn section_from(s: &SegmentSensitivity, sec: &dyn Surface, p: &DVector<f64>) -> Result<SectionSensitivity> {
    let hx = sec.dx(&s.x1, p);
    let hp = sec.dp(&s.x1, p);
    let lie = hx.dot(&s.fx1);
    if lie.abs() < TANGENCY_TOL {
        return Err(Error::Tangency(lie));
    }
    let n = s.x1.len();
    let proj = DMatrix::identity(n, n) - &s.fx1 * hx.transpose() / lie;
    let dt_dx0 = -(s.x_mat.transpose() * &hx) / lie;
    let dt_dp = -(s.p_mat.transpose() * &hx + &hp) / lie;
    Ok(SectionSensitivity {
        dx1_dx0: &proj * &s.x_mat,
        dx1_dp: &proj * &s.p_mat - &s.fx1 * hp.transpose() / lie,
        dx1_dh: &s.fx1 / lie,
        dt_dx0,
        dt_dp,
        dt_dh: 1.0 / lie,
        projection: proj,
        lie,
    })
}

/// Terminal-point sensitivities from the adjoint side: with `η_{x(1)}`
/// given, `η_{x(0)}ᵀ = -η_{x(1)}ᵀX(1)`, `η_T = -η_{x(1)}ᵀf(x(1))` and
/// `η_pᵀ = -η_{x(1)}ᵀP(1)`. Rows index the monitored combinations.
#[derive(Clone, Debug)]
pub struct SegmentAdjoint {
    pub eta_x0: DMatrix<f64>,
    pub eta_t: DVector<f64>,
    pub eta_p: DMatrix<f64>,
}

pub fn segment_adjoint(s: &SegmentSensitivity, eta_x1: &DMatrix<f64>) -> SegmentAdjoint {
    SegmentAdjoint {
        eta_x0: -(eta_x1 * &s.x_mat),
        eta_t: -(eta_x1 * &s.fx1),
        eta_p: -(eta_x1 * &s.p_mat),
    }
}

/// Simplicity threshold on the second-smallest singular value of `X(1) - I`.
const SIMPLE_TOL: f64 = 1e-8;

/// Left eigenvector `w` of `X(1)` for eigenvalue 1, scaled so that
/// `wᵀf(x(1)) = -1`.
pub fn periodic_left_eigenvector(s: &SegmentSensitivity) -> Result<DVector<f64>> {
    let w = unit_left_eigenvector(&s.x_mat)?;
    let c = w.dot(&s.fx1);
    if c.abs() < TANGENCY_TOL {
        return Err(Error::Tangency(c));
    }
    Ok(w / -c)
}

/// Unnormalized left eigenvector of `m` for eigenvalue 1 by inverse
/// iteration on `(m - I)ᵀ` with one Rayleigh refinement.
pub(crate) fn unit_left_eigenvector(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = m.nrows();
    let a = (m - DMatrix::identity(n, n)).transpose();
    let sv = SVD::new(a.clone(), false, false).singular_values;
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|x, y| x.total_cmp(y));
    let scale = sorted.last().copied().unwrap_or(0.0).max(1.0);
    if n > 1 && sorted[1] < SIMPLE_TOL * scale {
        return Err(Error::Invalid("eigenvalue 1 is not simple".into()));
    }
    let solve = |shift: f64, v: &DVector<f64>| -> DVector<f64> {
        let shifted = &a - DMatrix::identity(n, n) * shift;
        let mut eps = 0.0;
        loop {
            let lu = (&shifted - DMatrix::identity(n, n) * eps).lu();
            if let Some(y) = lu.solve(v) {
                if finite(&y) {
                    return y;
                }
            }
            eps = if eps == 0.0 { 1e-14 * scale } else { eps * 10.0 };
        }
    };
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    for _ in 0..3 {
        let y = solve(0.0, &v);
        v = &y / y.norm();
    }
    let mu = v.dot(&(&a * &v));
    let y = solve(mu, &v);
    Ok(&y / y.norm())
}

/// `∂T/∂p = wᵀP(1)` with `wᵀf(x(1)) = -1`.
pub fn period_sensitivity(w: &DVector<f64>, p_mat: &DMatrix<f64>) -> DVector<f64> {
    p_mat.transpose() * w
}

/// `lim fᵀX(1)^k / ‖f‖²` on a transversally stable orbit, doubling `k`
/// until successive iterates differ by less than `1e-10`. Each iterate is
/// scaled to `λᵀf = 1`.
pub fn asymptotic_phase_gradient(s: &SegmentSensitivity, k_max: usize) -> Result<DVector<f64>> {
    let f = &s.fx1;
    let nf2 = f.norm_squared();
    if nf2 == 0.0 {
        return Err(Error::Invalid("equilibrium point: f = 0".into()));
    }
    // rescaling to λᵀf = 1 removes drift from an eigenvalue 1 + O(integration error)
    let iterate = |m: &DMatrix<f64>| {
        let l = m.transpose() * f / nf2;
        let c = l.dot(f);
        l / c
    };
    let mut mk = s.x_mat.clone();
    let mut prev = iterate(&mk);
    let mut k = 1;
    while 2 * k <= k_max {
        mk = &mk * &mk;
        k *= 2;
        let next = iterate(&mk);
        if !finite(&next) {
            break;
        }
        let diff = (&next - &prev).norm();
        prev = next;
        if diff < 1e-10 {
            return Ok(prev);
        }
    }
    Err(Error::NoConvergence(format!(
        "asymptotic phase did not settle within k = {k_max} periods"
    )))
}

#[cfg(test)]
mod tests {
    use super::fields::{Hopf, Linear};
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn scalar_growth() {
        let f = Linear;
        let seg = Segment::new(&f, dvector![1.0], 1.0, dvector![1.0], 100);
        let s = segment_sensitivities(&seg).unwrap();
        assert!((s.x_mat[(0, 0)] - 1f64.exp()).abs() < 1e-8);
        // d/da of e^{aT} x0 at a = T = 1
        assert!((s.p_mat[(0, 0)] - 1f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn zero_steps_rejected() {
        let f = Linear;
        let seg = Segment::new(&f, dvector![1.0], 1.0, dvector![1.0], 0);
        assert!(segment_sensitivities(&seg).is_err());
    }

    #[test]
    fn unit_speed_crossing() {
        struct Drift;
        impl Field for Drift {
            fn dim(&self) -> usize {
                2
            }
            fn n_params(&self) -> usize {
                0
            }
            fn eval(&self, _x: &DVector<f64>, _p: &DVector<f64>) -> DVector<f64> {
                dvector![1.0, 0.0]
            }
        }
        let sec = Hyperplane::coordinate(2, 0, 1.0, 0);
        let seg = Segment::new(&Drift, dvector![0.0, 0.3], 1.0, DVector::zeros(0), 10);
        let s = section_sensitivities(&seg, &sec).unwrap();
        assert!((s.dt_dh - 1.0).abs() < 1e-14);
        assert!((&s.projection * &s.projection - &s.projection).norm() < 1e-14);
    }

    #[test]
    fn tangent_section_is_an_error() {
        let f = Hopf::default();
        let sec = Hyperplane::coordinate(2, 0, 1.0, 2);
        let seg = Segment::new(&f, dvector![1.0, 0.0], std::f64::consts::PI, dvector![1.0, 2.0], 4000);
        assert!(matches!(section_sensitivities(&seg, &sec), Err(Error::Tangency(_))));
    }

    #[test]
    fn identity_has_no_simple_unit_eigenvalue() {
        let s = SegmentSensitivity {
            x1: dvector![1.0, 0.0],
            fx1: dvector![0.0, 1.0],
            x_mat: DMatrix::identity(2, 2),
            p_mat: DMatrix::zeros(2, 0),
        };
        assert!(periodic_left_eigenvector(&s).is_err());
    }
}
