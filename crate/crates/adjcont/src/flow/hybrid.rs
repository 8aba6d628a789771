//! Zero-time discontinuity mappings and two-segment hybrid periodic orbits.

use nalgebra::{DMatrix, DVector};

use super::{
    bisect_root, flow, flow_until, segment_sensitivities, unit_left_eigenvector, Field, Hyperplane, Segment,
    SegmentSensitivity, Surface, TANGENCY_TOL,
};
use crate::error::{Error, Result};

/// Jump map `g(x, p)` applied at an event.
pub trait Jump: Sync {
    fn eval(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64>;
    fn dx(&self, x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64>;
    fn dp(&self, x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64>;
}

/// Transversal crossing of `h_es = 0` at `(x0, p0)` followed by the jump `g`
/// and a switch from `f1` to `f2`.
pub struct HybridJunction<'a> {
    pub f1: &'a dyn Field,
    pub f2: &'a dyn Field,
    pub g: &'a dyn Jump,
    pub h_es: &'a dyn Surface,
    pub x0: DVector<f64>,
    pub p0: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct Saltation {
    pub dx_d: DMatrix<f64>,
    pub dp_d: DMatrix<f64>,
    /// `(f2(g) - ∂ₓg f1) / (∂ₓh f1)`.
    pub lam_es: DVector<f64>,
}

pub fn saltation(j: &HybridJunction) -> Result<Saltation> {
    let (x, p) = (&j.x0, &j.p0);
    let f1 = j.f1.eval(x, p);
    let hx = j.h_es.dx(x, p);
    let lie = hx.dot(&f1);
    if lie.abs() < TANGENCY_TOL {
        return Err(Error::Tangency(lie));
    }
    let gx = j.g.dx(x, p);
    let lam = (j.f2.eval(&j.g.eval(x, p), p) - &gx * &f1) / lie;
    Ok(Saltation {
        dx_d: gx + &lam * hx.transpose(),
        dp_d: j.g.dp(x, p) + &lam * j.h_es.dp(x, p).transpose(),
        lam_es: lam,
    })
}

/// `D(x, p) = F2(-σ, g(F1(σ, x, p), p), p)` with `σ ≈ 0` solving
/// `h_es(F1(σ, x, p), p) = 0`. Flows use `n_sub` RK4 steps.
pub fn discontinuity_map(j: &HybridJunction, x: &DVector<f64>, p: &DVector<f64>, n_sub: usize) -> Result<DVector<f64>> {
    let h = |s: f64| j.h_es.eval(&flow(j.f1, x, p, s, n_sub), p);
    let lie = j.h_es.dx(x, p).dot(&j.f1.eval(x, p));
    if lie.abs() < TANGENCY_TOL {
        return Err(Error::Tangency(lie));
    }
    let guess = -j.h_es.eval(x, p) / lie;
    let mut w = 10.0 * guess.abs() + 1e-8;
    let (a, b, ha, hb) = loop {
        let (a, b) = (guess - w, guess + w);
        let (ha, hb) = (h(a), h(b));
        if ha * hb <= 0.0 {
            break (a, b, ha, hb);
        }
        w *= 2.0;
        if w > 1.0 {
            return Err(Error::NoConvergence("event time near zero not bracketed".into()));
        }
    };
    let sigma = bisect_root(h, a, b, ha, hb);
    let x1 = flow(j.f1, x, p, sigma, n_sub);
    Ok(flow(j.f2, &j.g.eval(&x1, p), p, -sigma, n_sub))
}

/// Two-segment periodic orbit: `x1(0) = x0` flows under `f1` for `σ` to
/// `h_es = 0`, jumps by `g`, and flows under `f2` for `T - σ` back to `x0`.
pub struct HybridOrbit<'a> {
    pub f1: &'a dyn Field,
    pub f2: &'a dyn Field,
    pub g: &'a dyn Jump,
    pub h_es: &'a dyn Surface,
    pub x0: DVector<f64>,
    pub sigma: f64,
    pub period: f64,
    pub p: DVector<f64>,
    pub n_steps: usize,
}

#[derive(Clone, Debug)]
pub struct HybridMonodromy {
    pub seg1: SegmentSensitivity,
    pub seg2: SegmentSensitivity,
    pub saltation: Saltation,
    /// `∂ₓG_T = ∂ₓF(T-σ) ∂ₓD ∂ₓF(σ)`.
    pub g_x: DMatrix<f64>,
    /// `∂ₚG_T` at fixed `σ` and `T`.
    pub g_p: DMatrix<f64>,
}

pub fn hybrid_monodromy(o: &HybridOrbit) -> Result<HybridMonodromy> {
    let seg1 = segment_sensitivities(&Segment::new(o.f1, o.x0.clone(), o.sigma, o.p.clone(), o.n_steps))?;
    let junction = HybridJunction {
        f1: o.f1,
        f2: o.f2,
        g: o.g,
        h_es: o.h_es,
        x0: seg1.x1.clone(),
        p0: o.p.clone(),
    };
    let salt = saltation(&junction)?;
    let x2 = o.g.eval(&seg1.x1, &o.p);
    let seg2 = segment_sensitivities(&Segment::new(o.f2, x2, o.period - o.sigma, o.p.clone(), o.n_steps))?;
    let g_x = &seg2.x_mat * &salt.dx_d * &seg1.x_mat;
    let g_p = &seg2.x_mat * &salt.dx_d * &seg1.p_mat + &seg2.x_mat * &salt.dp_d + &seg2.p_mat;
    Ok(HybridMonodromy {
        seg1,
        seg2,
        saltation: salt,
        g_x,
        g_p,
    })
}

#[derive(Clone, Debug)]
pub struct HybridPeriod {
    /// Left eigenvector of `∂ₓG_T` with `λᵀf1(x0) = 1`.
    pub lambda_po: DVector<f64>,
    /// `λᵀ∂ₚG_T`.
    pub eta_p: DVector<f64>,
    /// `∂T/∂p = -η_p`.
    pub dt_dp: DVector<f64>,
}

pub fn hybrid_period_sensitivity(o: &HybridOrbit) -> Result<HybridPeriod> {
    let m = hybrid_monodromy(o)?;
    let w = unit_left_eigenvector(&m.g_x)?;
    let c = w.dot(&o.f1.eval(&o.x0, &o.p));
    if c.abs() < TANGENCY_TOL {
        return Err(Error::Tangency(c));
    }
    let lambda = w / c;
    let eta_p = m.g_p.transpose() * &lambda;
    Ok(HybridPeriod {
        dt_dp: -&eta_p,
        eta_p,
        lambda_po: lambda,
    })
}

/// Van der Pol oscillator with a rigid wall at `x = wall`. The orbit
/// starts at the left turning point (`v = 0`), hits the wall, reverses with
/// restitution `r`, and returns to the turning point.
#[derive(Clone, Debug)]
pub struct ImpactingVdp {
    pub wall: f64,
    /// Integration step for event-detected simulation.
    pub dt: f64,
}

impl Default for ImpactingVdp {
    fn default() -> Self {
        ImpactingVdp { wall: 1.0, dt: 1e-3 }
    }
}

/// Fixed point of the turning-point return map.
#[derive(Clone, Debug)]
pub struct ImpactCycle {
    pub x_left: f64,
    pub sigma: f64,
    pub period: f64,
}

impl ImpactingVdp {
    pub fn wall_surface(&self) -> Hyperplane {
        Hyperplane::coordinate(2, 0, self.wall, 2)
    }

    fn turning_surface(&self) -> Hyperplane {
        Hyperplane::coordinate(2, 1, 0.0, 2)
    }

    /// One revolution from `(x_left, 0)`: returns `(next x_left, σ, T)`.
    pub fn return_map(&self, x_left: f64, p: &DVector<f64>) -> Result<(f64, f64, f64)> {
        let f = super::fields::VanDerPol;
        let g = super::fields::Impact { index: 1 };
        let x0 = DVector::from_vec(vec![x_left, 0.0]);
        let (sigma, xw) = flow_until(&f, &x0, p, &self.wall_surface(), self.dt, 100.0)?;
        if xw[1] <= 0.0 {
            return Err(Error::Invalid("wall reached with non-positive velocity".into()));
        }
        let x2 = g.eval(&xw, p);
        let (t2, xl) = flow_until(&f, &x2, p, &self.turning_surface(), self.dt, 100.0)?;
        Ok((xl[0], sigma, sigma + t2))
    }

    /// Converges the return map by iteration followed by secant steps.
    pub fn cycle(&self, p: &DVector<f64>) -> Result<ImpactCycle> {
        let mut x = -2.0;
        for _ in 0..30 {
            x = self.return_map(x, p)?.0;
        }
        let r = |x: f64| self.return_map(x, p).map(|v| v.0 - x);
        let (mut a, mut b) = (x, x + 1e-4);
        let (mut ra, mut rb) = (r(a)?, r(b)?);
        for _ in 0..50 {
            if rb.abs() < 1e-13 || ra == rb {
                break;
            }
            let c = b - rb * (b - a) / (rb - ra);
            a = b;
            ra = rb;
            b = c;
            rb = r(b)?;
        }
        if rb.abs() > 1e-10 {
            return Err(Error::NoConvergence(format!("impact cycle residual {rb:.3e}")));
        }
        let (_, sigma, period) = self.return_map(b, p)?;
        Ok(ImpactCycle {
            x_left: b,
            sigma,
            period,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::fields::{Ballistic, Hopf, IdentityJump, Impact};
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn no_jump_no_switch() {
        let f = Hopf::default();
        let h = Hyperplane::coordinate(2, 1, 0.0, 2);
        let j = HybridJunction {
            f1: &f,
            f2: &f,
            g: &IdentityJump,
            h_es: &h,
            x0: dvector![1.0, 0.0],
            p0: dvector![1.0, 2.0],
        };
        let s = saltation(&j).unwrap();
        assert!(s.lam_es.norm() < 1e-15);
        assert!((s.dx_d - DMatrix::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn bouncing_ball_closed_form() {
        let (g0, r, v0) = (9.81, 0.8, 3.0);
        let h = Hyperplane::coordinate(2, 0, 0.0, 2);
        let jump = Impact { index: 1 };
        let j = HybridJunction {
            f1: &Ballistic,
            f2: &Ballistic,
            g: &jump,
            h_es: &h,
            x0: dvector![0.0, -v0],
            p0: dvector![g0, r],
        };
        let s = saltation(&j).unwrap();
        let want = dmatrix![-r, 0.0; (1.0 + r) * g0 / v0, -r];
        assert!((s.dx_d - want).amax() < 1e-14);
    }

    #[test]
    fn grazing_is_a_tangency() {
        let h = Hyperplane::coordinate(2, 0, 0.0, 2);
        let jump = Impact { index: 1 };
        let j = HybridJunction {
            f1: &Ballistic,
            f2: &Ballistic,
            g: &jump,
            h_es: &h,
            x0: dvector![0.0, 0.0],
            p0: dvector![9.81, 0.8],
        };
        assert!(matches!(saltation(&j), Err(Error::Tangency(_))));
    }
}
