//! Invariant curves of a Neimark–Sacker normal-form map.
//!
//! The curve is sampled at `q` points and the rotation number is fixed at
//! `p/q`. Every mesh point gets its own copy of the map residual; coupling
//! blocks wire `M(v_i) = v_{i+p}` up to the offset `δ_ρ`, glue blocks share
//! `(r2, b, δ_ρ)` across copies, and a phase condition removes the shift
//! symmetry. With `η_ρ = 1` the complementary parameters `e.r2` and `e.b`
//! are sensitivities of the rotation number.
//!
//! ```
//! use adjcont::invc::NsMap;
//! use nalgebra::Vector2;
//!
//! let m = NsMap::new(233, 377);
//! let x = Vector2::new(0.6, 0.8);
//! assert!((m.eval(&x, 0.0, 0.0).norm() - 1.0).abs() < 1e-14);
//! ```

pub mod analysis;

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, Matrix2, Vector2};

use crate::continuation::{continue_branch, read_chart, save_run, ActiveSet, Chart, RunStore, Settings};
use crate::error::{Error, Result};
use crate::problem::{AdjointSpec, Func, Point, Problem, ProblemBuilder};

pub use analysis::{
    adjoint_shift_residual, cycle_multipliers, discrete_tangent, eigenvalues, fiber_mismatch, gamma_hat_matrix,
    gamma_hat_radius, gamma_hat_spectrum, gamma_rho_defect, gamma_rho_matrix, perturbation_ring,
    phase_decay_experiment, phase_decay_ring, q_phi_from_adjoint, q_phi_limit, rotation_permutation,
    small_divisor_diagnostic, write_curve_csv, write_decay_csv, write_spectrum_csv, Difference, Divisor,
    FiberData, Spectrum, SpectrumMode,
};

pub const ALPHA: f64 = 0.25;
pub const A: f64 = -0.25;
pub const R1: f64 = 0.0;

/// Supported Fibonacci meshes `(p, q)`.
pub const FIBONACCI_MESHES: [(usize, usize); 3] = [(34, 55), (89, 144), (233, 377)];

/// `M(x) = ((1+α)R + |x|²R[[a,-b],[b,a]] + diag(r1, r2)) x` with `R` the
/// rotation by `θ = 2πp/q`.
#[derive(Clone, Copy, Debug)]
pub struct NsMap {
    pub theta: f64,
    pub alpha: f64,
    pub a: f64,
    pub r1: f64,
    rot: Matrix2<f64>,
}

impl NsMap {
    pub fn new(p_rot: usize, q: usize) -> Self {
        Self::with_angle(2.0 * PI * p_rot as f64 / q as f64)
    }

    pub fn with_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        NsMap {
            theta,
            alpha: ALPHA,
            a: A,
            r1: R1,
            rot: Matrix2::new(c, -s, s, c),
        }
    }

    fn ab(&self, b: f64) -> Matrix2<f64> {
        Matrix2::new(self.a, -b, b, self.a)
    }

    fn linear(&self, x: &Vector2<f64>, r2: f64, b: f64) -> Matrix2<f64> {
        self.rot * (1.0 + self.alpha) + self.rot * self.ab(b) * x.norm_squared() + Matrix2::new(self.r1, 0.0, 0.0, r2)
    }

    pub fn eval(&self, x: &Vector2<f64>, r2: f64, b: f64) -> Vector2<f64> {
        self.linear(x, r2, b) * x
    }

    pub fn dmx(&self, x: &Vector2<f64>, r2: f64, b: f64) -> Matrix2<f64> {
        self.linear(x, r2, b) + self.rot * self.ab(b) * x * x.transpose() * 2.0
    }

    pub fn dmr2(&self, x: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(0.0, x[1])
    }

    pub fn dmb(&self, x: &Vector2<f64>) -> Vector2<f64> {
        self.rot * Matrix2::new(0.0, -1.0, 1.0, 0.0) * x * x.norm_squared()
    }

    pub fn iterate(&self, x: &Vector2<f64>, r2: f64, b: f64, k: usize) -> Vector2<f64> {
        (0..k).fold(*x, |y, _| self.eval(&y, r2, b))
    }
}

/// Positions inside the seven variables of each map copy.
pub const MX: [usize; 2] = [0, 1];
pub const MY: [usize; 2] = [2, 3];
pub const MR2: usize = 4;
pub const MB: usize = 5;
pub const MDRHO: usize = 6;

/// Index bookkeeping of an assembled curve problem.
#[derive(Clone, Debug)]
pub struct CurveIndex {
    pub q: usize,
    pub p_rot: usize,
    /// `muidx[i]`: the seven u-indices of map copy `i` (0-based).
    pub muidx: Vec<[usize; 7]>,
    pub v0: Vec<Vector2<f64>>,
}

impl CurveIndex {
    /// `mod(i+p-1, q)+1` in 0-based form.
    pub fn irot(&self, i: usize) -> usize {
        (i + self.p_rot) % self.q
    }

    /// `mod(i+p, q)+1` in 0-based form.
    pub fn inext(&self, i: usize) -> usize {
        (i + self.p_rot + 1) % self.q
    }

    pub fn map_block(i: usize) -> String {
        format!("M{}", i + 1)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Unit circle samples `√(-α/a)(cos φ_i, sin φ_i)`, `φ_i = 2π i/q`.
pub fn circle(q: usize) -> Vec<Vector2<f64>> {
    let r = (-ALPHA / A).sqrt();
    (0..q)
        .map(|i| {
            let phi = 2.0 * PI * i as f64 / q as f64;
            Vector2::new(phi.cos(), phi.sin()) * r
        })
        .collect()
}

fn map_residual(m: NsMap) -> Func {
    Func::new(2, move |u: &[f64]| {
        let x = Vector2::new(u[0], u[1]);
        let y = m.eval(&x, u[MR2], u[MB]);
        vec![y[0] - u[2], y[1] - u[3]]
    })
    .with_matrix_jacobian(move |u: &[f64]| {
        let x = Vector2::new(u[0], u[1]);
        let d = m.dmx(&x, u[MR2], u[MB]);
        let r2 = m.dmr2(&x);
        let b = m.dmb(&x);
        DMatrix::from_row_slice(
            2,
            7,
            &[
                d[(0, 0)], d[(0, 1)], -1.0, 0.0, r2[0], b[0], 0.0,
                d[(1, 0)], d[(1, 1)], 0.0, -1.0, r2[1], b[1], 0.0,
            ],
        )
    })
}

fn coupling(q: usize) -> Func {
    let qf = q as f64;
    Func::new(2, move |u: &[f64]| {
        let d = u[6];
        (0..2).map(|k| u[k] + d * qf * (u[2 + k] - u[k]) - u[4 + k]).collect::<Vec<_>>()
    })
    .with_matrix_jacobian(move |u: &[f64]| {
        let d = u[6];
        let c = 1.0 - qf * d;
        let e = qf * d;
        DMatrix::from_row_slice(
            2,
            7,
            &[
                c, 0.0, e, 0.0, -1.0, 0.0, qf * (u[2] - u[0]),
                0.0, c, 0.0, e, 0.0, -1.0, qf * (u[3] - u[1]),
            ],
        )
    })
}

fn phase_condition(v0: &[Vector2<f64>]) -> Func {
    let q = v0.len();
    let flat: Vec<f64> = v0.iter().flat_map(|v| [v[0], v[1]]).collect();
    let dx0: Vec<f64> = (0..q)
        .flat_map(|i| {
            let d = (v0[(i + 1) % q] - v0[i]) * q as f64;
            [d[0], d[1]]
        })
        .collect();
    let jac = dx0.clone();
    Func::new(1, move |u: &[f64]| vec![dx0.iter().zip(u.iter().zip(&flat)).map(|(d, (x, y))| d * (x - y)).sum::<f64>()])
        .with_matrix_jacobian(move |_| DMatrix::from_row_slice(1, jac.len(), &jac))
}

/// Assembles the discretized invariant-curve problem around the unit circle
/// at `(r2, b, δ_ρ) = (0, 0, 0)`. Without adjoints when `with_adjoint` is
/// false.
pub fn build_curve_problem(q: usize, p_rot: usize, with_adjoint: bool) -> Result<(Problem, CurveIndex)> {
    if q < 3 || p_rot == 0 || gcd(p_rot, q) != 1 {
        return Err(Error::Invalid(format!("rotation {p_rot}/{q} must be coprime with q ≥ 3")));
    }
    let map = NsMap::new(p_rot, q);
    let v0 = circle(q);
    let mut b = ProblemBuilder::new();
    let mut idx = CurveIndex {
        q,
        p_rot,
        muidx: Vec::with_capacity(q),
        v0: v0.clone(),
    };
    for i in 0..q {
        let irot = idx.irot(i);
        let u0 = [v0[i][0], v0[i][1], v0[irot][0], v0[irot][1], 0.0, 0.0, 0.0];
        let name = CurveIndex::map_block(i);
        let u = b.add_zero(&name, map_residual(map), &[], &u0)?;
        if with_adjoint {
            b.add_adjoint(&name, AdjointSpec::default())?;
        }
        idx.muidx.push(u.try_into().expect("seven variables"));
    }
    for i in 0..q {
        let (mi, mr, mn) = (idx.muidx[i], idx.muidx[idx.irot(i)], idx.muidx[idx.inext(i)]);
        let uidx = [mr[0], mr[1], mn[0], mn[1], mi[MY[0]], mi[MY[1]], mi[MDRHO]];
        let name = format!("bc{}", i + 1);
        b.add_zero(&name, coupling(q), &uidx, &[])?;
        if with_adjoint {
            b.add_adjoint(&name, AdjointSpec::default())?;
        }
    }
    let shared = |m: &[usize; 7]| [m[MR2], m[MB], m[MDRHO]];
    for i in 1..q {
        let name = format!("pglue{}", i + 1);
        let (u1, ui) = (shared(&idx.muidx[0]), shared(&idx.muidx[i]));
        b.add_glue(&name, &u1, &ui)?;
        if with_adjoint {
            b.add_adjoint(&name, AdjointSpec::default())?;
        }
    }
    let xs: Vec<usize> = idx.muidx.iter().flat_map(|m| [m[0], m[1]]).collect();
    b.add_zero("phasecond", phase_condition(&v0), &xs, &[])?;
    if with_adjoint {
        b.add_adjoint("phasecond", AdjointSpec::default())?;
    }
    let pars = shared(&idx.muidx[0]);
    b.add_parameters("pars", &pars, &["r2", "b", "drho"])?;
    if with_adjoint {
        b.add_adjoint(
            "pars",
            AdjointSpec::default()
                .labels(&["e.r2", "e.b", "e.drho"])
                .aidx(&pars)
                .l0(&[0.0, 0.0, 1.0]),
        )?;
    }
    b.add_event("A", "r2", -0.16)?;
    Ok((b.build(), idx))
}

pub fn curve_active() -> ActiveSet {
    ActiveSet::new(&["r2", "b", "e.r2", "e.b"]).window("r2", -0.9, 0.0)
}

/// Step sizes scaled to the `14q`-dimensional run.
pub fn curve_settings(q: usize) -> Settings {
    let scale = (q as f64 / 377.0).sqrt();
    Settings {
        h0: 2.0 * scale,
        hmax: 8.0 * scale,
        ..Settings::default()
    }
}

/// Sweeps `r2 ∈ [-0.9, 0]` releasing `(r2, b, e.r2, e.b)` with `δ_ρ` and
/// `η_ρ = 1` fixed.
pub fn run_curve_continuation(prob: &Problem, s: &Settings, run_name: &str) -> Result<RunStore> {
    continue_branch(prob, prob.initial_point(), &curve_active(), s, run_name)
}

/// Curve samples, parameters and adjoint data at one chart.
#[derive(Clone, Debug)]
pub struct CurveState {
    pub q: usize,
    pub p_rot: usize,
    pub map: NsMap,
    pub v: Vec<Vector2<f64>>,
    pub r2: f64,
    pub b: f64,
    pub drho: f64,
    /// `λ_map,i`: adjoint variables of map copy `i`.
    pub lam_map: Vec<Vector2<f64>>,
    pub lam_ps: f64,
    /// `(η_r2, η_b, η_ρ)`.
    pub eta: [f64; 3],
}

impl CurveState {
    pub fn from_point(prob: &Problem, idx: &CurveIndex, p: &Point) -> Result<Self> {
        let v = idx.muidx.iter().map(|m| Vector2::new(p.u[m[0]], p.u[m[1]])).collect();
        let m0 = idx.muidx[0];
        let (lam_map, lam_ps, eta) = if prob.has_adjoint() {
            let lam = (0..idx.q)
                .map(|i| {
                    let a = prob.block_adjoint_vars(&CurveIndex::map_block(i))?;
                    Ok(Vector2::new(p.lam_eta[a[0]], p.lam_eta[a[1]]))
                })
                .collect::<Result<Vec<_>>>()?;
            let ps = p.lam_eta[prob.block_adjoint_vars("phasecond")?[0]];
            let eta = [prob.value(p, "e.r2")?, prob.value(p, "e.b")?, prob.value(p, "e.drho")?];
            (lam, ps, eta)
        } else {
            (vec![Vector2::zeros(); idx.q], 0.0, [0.0; 3])
        };
        Ok(CurveState {
            q: idx.q,
            p_rot: idx.p_rot,
            map: NsMap::new(idx.p_rot, idx.q),
            v,
            r2: p.u[m0[MR2]],
            b: p.u[m0[MB]],
            drho: p.u[m0[MDRHO]],
            lam_map,
            lam_ps,
            eta,
        })
    }

    pub fn from_chart(prob: &Problem, idx: &CurveIndex, c: &Chart) -> Result<Self> {
        Self::from_point(prob, idx, &c.point)
    }

    /// `V_i = ∂ₓM(v_i)`.
    pub fn jacobians(&self) -> Vec<Matrix2<f64>> {
        self.v.iter().map(|x| self.map.dmx(x, self.r2, self.b)).collect()
    }

    /// Largest `|M(v_i) - v_{i+p}|` with `δ_ρ = 0`.
    pub fn invariance_residual(&self) -> f64 {
        (0..self.q)
            .map(|i| (self.map.eval(&self.v[i], self.r2, self.b) - self.v[(i + self.p_rot) % self.q]).norm())
            .fold(0.0, f64::max)
    }
}

/// Re-corrects the primal problem at `(r2, b)` shifted by `(d_r2, d_b)` with
/// one of `b`, `drho` released, returning `(b, drho)` after correction.
pub fn recorrect_shifted(state: &CurveState, idx: &CurveIndex, d_r2: f64, d_b: f64, release: &str) -> Result<(f64, f64)> {
    let (prob, _) = build_curve_problem(idx.q, idx.p_rot, false)?;
    let mut p = prob.initial_point().clone();
    for (i, m) in idx.muidx.iter().enumerate() {
        let irot = idx.irot(i);
        p.u[m[0]] = state.v[i][0];
        p.u[m[1]] = state.v[i][1];
        p.u[m[2]] = state.v[irot][0];
        p.u[m[3]] = state.v[irot][1];
        p.u[m[MR2]] = state.r2 + d_r2;
        p.u[m[MB]] = state.b + d_b;
        p.u[m[MDRHO]] = state.drho;
    }
    prob.set_value(&mut p, "r2", state.r2 + d_r2)?;
    prob.set_value(&mut p, "b", state.b + d_b)?;
    prob.set_value(&mut p, "drho", state.drho)?;
    let s = Settings {
        tol: 1e-12,
        ..Settings::default()
    };
    let (chart, _) = crate::continuation::correct(&prob, &p, &ActiveSet::new(&[release]), &s)?;
    Ok((prob.value(&chart.point, "b")?, prob.value(&chart.point, "drho")?))
}

pub const CURVE_RUN: &str = "invc";

/// An assembled curve problem with its continuation run.
pub struct CurveRun {
    pub prob: Problem,
    pub idx: CurveIndex,
    pub store: RunStore,
}

impl CurveRun {
    pub fn state(&self, label: usize) -> Result<CurveState> {
        CurveState::from_chart(&self.prob, &self.idx, self.store.chart(label)?)
    }

    /// State at the first chart tagged `tag`.
    pub fn state_at(&self, tag: &str) -> Result<CurveState> {
        let c = self
            .store
            .with_type(tag)
            .first()
            .copied()
            .ok_or_else(|| Error::Invalid(format!("no chart tagged `{tag}` in run `{}`", self.store.run_name)))?;
        CurveState::from_chart(&self.prob, &self.idx, c)
    }
}

/// Builds and continues the curve problem; persists the run under `dir`
/// when given.
pub fn run_curve(dir: Option<&Path>, q: usize, p_rot: usize, s: &Settings) -> Result<CurveRun> {
    let (prob, idx) = build_curve_problem(q, p_rot, true)?;
    let store = run_curve_continuation(&prob, s, CURVE_RUN)?;
    if let Some(d) = dir {
        save_run(&store, &prob, d)?;
    }
    Ok(CurveRun { prob, idx, store })
}

/// Reloads a stored chart of a curve run on the `(p_rot, q)` mesh.
pub fn load_curve_state(dir: &Path, run_name: &str, label: usize, q: usize, p_rot: usize) -> Result<CurveState> {
    let (prob, idx) = build_curve_problem(q, p_rot, true)?;
    let chart = read_chart(dir, run_name, label)?;
    CurveState::from_chart(&prob, &idx, &chart)
}

/// Central difference of `g` with one Richardson extrapolation,
/// `(4 D(h/2) - D(h)) / 3`.
pub fn richardson<F: Fn(f64) -> Result<f64>>(g: F, h: f64) -> Result<f64> {
    let d = |h: f64| -> Result<f64> { Ok((g(h)? - g(-h)?) / (2.0 * h)) };
    Ok((4.0 * d(h / 2.0)? - d(h)?) / 3.0)
}

/// `∂δ_ρ/∂(r2, b)` by re-correcting with `drho` released. The adjoint
/// predicts `-(η_r2, η_b)`.
pub fn rotation_sensitivity_fd(state: &CurveState, idx: &CurveIndex, h: f64) -> Result<[f64; 2]> {
    let dr2 = richardson(|e| recorrect_shifted(state, idx, e, 0.0, "drho").map(|v| v.1), h)?;
    let db = richardson(|e| recorrect_shifted(state, idx, 0.0, e, "drho").map(|v| v.1), h)?;
    Ok([dr2, db])
}

/// `db/dr2` along the fixed-rotation family by re-correcting with `b`
/// released. The adjoint predicts `-η_r2/η_b`.
pub fn branch_slope_fd(state: &CurveState, idx: &CurveIndex, h: f64) -> Result<f64> {
    richardson(|e| recorrect_shifted(state, idx, e, 0.0, "b").map(|v| v.0), h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_fixed() {
        let m = NsMap::new(233, 377);
        assert_eq!(m.eval(&Vector2::zeros(), -0.3, 0.2), Vector2::zeros());
    }

    #[test]
    fn circle_rotates_by_theta() {
        let m = NsMap::new(233, 377);
        let x = Vector2::new(1.0, 0.0);
        let y = m.eval(&x, 0.0, 0.0);
        assert!((y[1].atan2(y[0]).rem_euclid(2.0 * PI) - m.theta).abs() < 1e-12);
    }

    #[test]
    fn jacobians_match_differences() {
        let m = NsMap::new(233, 377);
        let (x, r2, b) = (Vector2::new(0.3, -0.8), -0.4, 0.15);
        let h = 1e-6;
        for k in 0..2 {
            let mut e = Vector2::zeros();
            e[k] = h;
            let fd = (m.eval(&(x + e), r2, b) - m.eval(&(x - e), r2, b)) / (2.0 * h);
            assert!((fd - m.dmx(&x, r2, b).column(k)).norm() < 1e-6);
        }
        let fd = (m.eval(&x, r2 + h, b) - m.eval(&x, r2 - h, b)) / (2.0 * h);
        assert!((fd - m.dmr2(&x)).norm() < 1e-6);
        let fd = (m.eval(&x, r2, b + h) - m.eval(&x, r2, b - h)) / (2.0 * h);
        assert!((fd - m.dmb(&x)).norm() < 1e-6);
    }

    #[test]
    fn non_coprime_mesh_rejected() {
        assert!(build_curve_problem(10, 4, true).is_err());
    }

    #[test]
    fn variable_count() {
        let (prob, idx) = build_curve_problem(13, 8, true).unwrap();
        assert_eq!(prob.n_u(), 7 * 13);
        assert_eq!(idx.muidx.len(), 13);
        assert_eq!(idx.irot(12), 7);
        assert_eq!(idx.inext(12), 8);
    }

    #[test]
    fn circle_solves_the_primal_problem() {
        let (prob, _) = build_curve_problem(13, 8, false).unwrap();
        let r = prob.residual(prob.initial_point()).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-14));
    }
}
