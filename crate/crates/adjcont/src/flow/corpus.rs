//! Declarative test corpus for the flow sensitivities.
//!
//! Each case is checked either against a closed form listed in the file or
//! against finite differences of an event-detecting simulation.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use super::fields::{Ballistic, Hopf, IdentityJump, Impact, Linear, VanDerPol};
use super::hybrid::{discontinuity_map, hybrid_period_sensitivity, saltation, HybridJunction, HybridOrbit, ImpactingVdp, Jump};
use super::{
    asymptotic_phase_gradient, flow_until, fd_columns, period_sensitivity, periodic_left_eigenvector,
    section_sensitivities, segment_sensitivities, Field, Hyperplane, Segment,
};
use crate::error::{Error, Result};

pub const DEFAULT_CORPUS: &str = include_str!("../../corpus/flow.toml");

#[derive(Clone, Debug, Deserialize)]
pub struct Corpus {
    pub case: Vec<Case>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct SectionSpec {
    pub normal: Vec<f64>,
    pub offset: f64,
    pub param_weights: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct Case {
    pub name: String,
    pub field: String,
    pub params: Vec<f64>,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub duration: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    pub check: String,
    #[serde(default)]
    pub expected: Vec<f64>,
    pub tolerance: f64,
    pub source: String,
    pub section: Option<SectionSpec>,
}

fn default_steps() -> usize {
    1000
}

#[derive(Clone, Debug)]
pub struct CaseOutcome {
    pub name: String,
    pub check: String,
    pub source: String,
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub message: Option<String>,
}

pub fn parse(text: &str) -> Result<Corpus> {
    toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
}

fn field(name: &str) -> Result<Box<dyn Field>> {
    Ok(match name {
        "linear" => Box::new(Linear),
        "hopf" => Box::new(Hopf::default()),
        "hopf-shear" => Box::new(Hopf::sheared()),
        "ballistic" => Box::new(Ballistic),
        "vdp" => Box::new(VanDerPol),
        other => return Err(Error::Invalid(format!("unknown field `{other}`"))),
    })
}

/// Runs every case on its own thread.
pub fn run(corpus: &Corpus) -> Vec<CaseOutcome> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = corpus.case.iter().map(|c| scope.spawn(move || run_case(c))).collect();
        handles.into_iter().map(|h| h.join().expect("corpus case panicked")).collect()
    })
}

pub fn run_case(c: &Case) -> CaseOutcome {
    let (error, message) = match evaluate(c) {
        Ok(e) => (e, None),
        Err(e) => (f64::INFINITY, Some(e.to_string())),
    };
    CaseOutcome {
        name: c.name.clone(),
        check: c.check.clone(),
        source: c.source.clone(),
        error,
        tolerance: c.tolerance,
        passed: error <= c.tolerance,
        message,
    }
}

/// Largest deviation relative to `max(1, max |expected|)`.
fn max_diff(a: impl IntoIterator<Item = f64>, b: &[f64]) -> Result<f64> {
    let a: Vec<f64> = a.into_iter().collect();
    if a.len() != b.len() {
        return Err(Error::dim("expected values", a.len(), b.len()));
    }
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn evaluate(c: &Case) -> Result<f64> {
    let f = field(&c.field)?;
    let x0 = DVector::from_vec(c.x0.clone());
    let p = DVector::from_vec(c.params.clone());
    let seg = || Segment::new(f.as_ref(), x0.clone(), c.duration, p.clone(), c.steps);
    match c.check.as_str() {
        "monodromy" => max_diff(row_major(&segment_sensitivities(&seg())?.x_mat), &c.expected),
        "parameter" => max_diff(row_major(&segment_sensitivities(&seg())?.p_mat), &c.expected),
        "transport" => {
            let s = segment_sensitivities(&seg())?;
            let f0 = f.eval(&x0, &p);
            Ok((&s.x_mat * f0 - &s.fx1).norm() / s.fx1.norm())
        }
        "period" => {
            let s = segment_sensitivities(&seg())?;
            let w = periodic_left_eigenvector(&s)?;
            max_diff(period_sensitivity(&w, &s.p_mat).iter().copied(), &c.expected)
        }
        "phase" => {
            let hopf = match c.field.as_str() {
                "hopf" => Hopf::default(),
                "hopf-shear" => Hopf::sheared(),
                _ => return Err(Error::Invalid("phase check needs a Hopf field".into())),
            };
            let s = segment_sensitivities(&seg())?;
            let lam = asymptotic_phase_gradient(&s, 1 << 20)?;
            Ok((lam - hopf.phase_gradient(&x0, &p)).amax())
        }
        "section" => {
            let spec = c.section.as_ref().ok_or_else(|| Error::Invalid("section case without section".into()))?;
            let sec = Hyperplane::new(DVector::from_vec(spec.normal.clone()), spec.offset, p.len())
                .with_param_weights(DVector::from_vec(spec.param_weights.clone()));
            section_fd_error(f.as_ref(), &x0, &p, &sec, c.steps)
        }
        "saltation" => {
            let h = Hyperplane::coordinate(2, 0, x0[0], p.len());
            let g = Impact { index: 1 };
            let j = junction(f.as_ref(), &g, &h, &x0, &p);
            max_diff(row_major(&saltation(&j)?.dx_d), &c.expected)
        }
        "saltation-fd" => {
            let h = Hyperplane::coordinate(2, 0, x0[0], p.len());
            let g = Impact { index: 1 };
            saltation_fd_error(&junction(f.as_ref(), &g, &h, &x0, &p))
        }
        "hybrid-period" => hybrid_period_fd_error(&p, c.steps),
        other => Err(Error::Invalid(format!("unknown check `{other}`"))),
    }
}

fn junction<'a>(
    f: &'a dyn Field,
    g: &'a dyn Jump,
    h: &'a Hyperplane,
    x0: &DVector<f64>,
    p: &DVector<f64>,
) -> HybridJunction<'a> {
    HybridJunction {
        f1: f,
        f2: f,
        g,
        h_es: h,
        x0: x0.clone(),
        p0: p.clone(),
    }
}

const EVENT_DT: f64 = 1e-3;

/// Compares all six section sensitivities against central differences
/// of the event-detected map `(x0, p, H) ↦ (T, x(T))`.
pub fn section_fd_error(f: &dyn Field, x0: &DVector<f64>, p: &DVector<f64>, sec: &Hyperplane, steps: usize) -> Result<f64> {
    let map = |x: &DVector<f64>, q: &DVector<f64>, shift: f64| -> Result<DVector<f64>> {
        let mut s = sec.clone();
        s.offset += shift;
        let (t, x1) = flow_until(f, x, q, &s, EVENT_DT, 100.0)?;
        Ok(DVector::from_iterator(x1.len() + 1, std::iter::once(t).chain(x1.iter().copied())))
    };
    let base = map(x0, p, 0.0)?;
    let seg = Segment::new(f, x0.clone(), base[0], p.clone(), steps);
    let s = section_sensitivities(&seg, sec)?;
    let h = 1e-5;
    let col = |g: &dyn Fn(f64) -> Result<DVector<f64>>| -> Result<DVector<f64>> { Ok((g(h)? - g(-h)?) / (2.0 * h)) };
    let n = x0.len();
    let mut dx0 = DMatrix::zeros(n + 1, n);
    for k in 0..n {
        let v = col(&|e| {
            let mut y = x0.clone();
            y[k] += e;
            map(&y, p, 0.0)
        })?;
        dx0.set_column(k, &v);
    }
    let mut dp = DMatrix::zeros(n + 1, p.len());
    for k in 0..p.len() {
        let v = col(&|e| {
            let mut q = p.clone();
            q[k] += e;
            map(x0, &q, 0.0)
        })?;
        dp.set_column(k, &v);
    }
    let dh = col(&|e| map(x0, p, e))?;
    let stack = |t: &DVector<f64>, x: &DMatrix<f64>| {
        let mut m = DMatrix::zeros(n + 1, x.ncols());
        m.row_mut(0).copy_from(&t.transpose());
        m.rows_mut(1, n).copy_from(x);
        m
    };
    let a_x0 = stack(&s.dt_dx0, &s.dx1_dx0);
    let a_p = stack(&s.dt_dp, &s.dx1_dp);
    let mut a_h = DVector::zeros(n + 1);
    a_h[0] = s.dt_dh;
    a_h.rows_mut(1, n).copy_from(&s.dx1_dh);
    let dh = DMatrix::from_column_slice(n + 1, 1, dh.as_slice());
    let a_h = DMatrix::from_column_slice(n + 1, 1, a_h.as_slice());
    Ok(rel(&a_x0, &dx0).max(rel(&a_p, &dp)).max(rel(&a_h, &dh)))
}

/// Saltation matrices against central differences of the zero-time map.
pub fn saltation_fd_error(j: &HybridJunction) -> Result<f64> {
    let s = saltation(j)?;
    let n_sub = 8;
    let mut err: Option<Error> = None;
    let mut record = |r: Result<DVector<f64>>| match r {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            DVector::zeros(j.x0.len())
        }
    };
    let dx = fd_columns(|y| record(discontinuity_map(j, y, &j.p0, n_sub)), &j.x0);
    let dp = fd_columns(|q| record(discontinuity_map(j, &j.x0, q, n_sub)), &j.p0);
    if let Some(e) = err {
        return Err(e);
    }
    Ok(rel(&s.dx_d, &dx).max(rel(&s.dp_d, &dp)))
}

/// Relative error of the adjoint period sensitivity of the impacting Van der
/// Pol cycle against central differences of the simulated period.
pub fn hybrid_period_fd_error(p: &DVector<f64>, steps: usize) -> Result<f64> {
    let sys = ImpactingVdp::default();
    let cyc = sys.cycle(p)?;
    let wall = sys.wall_surface();
    let g = Impact { index: 1 };
    let orbit = HybridOrbit {
        f1: &VanDerPol,
        f2: &VanDerPol,
        g: &g,
        h_es: &wall,
        x0: DVector::from_vec(vec![cyc.x_left, 0.0]),
        sigma: cyc.sigma,
        period: cyc.period,
        p: p.clone(),
        n_steps: steps,
    };
    let sens = hybrid_period_sensitivity(&orbit)?;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        let mut q = p.clone();
        q[k] += h;
        let up = sys.cycle(&q)?.period;
        q[k] -= 2.0 * h;
        let down = sys.cycle(&q)?.period;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((sens.dt_dp[k] - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}

/// Degenerate hybrid orbit: identity jump across a plane the field crosses
/// transversally. Its monodromy must equal the smooth one.
pub fn smooth_limit_error(steps: usize) -> Result<f64> {
    let f = Hopf::default();
    let p = DVector::from_vec(vec![1.0, 2.0]);
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let t = std::f64::consts::PI;
    let sigma = 0.4 * t;
    let mid = segment_sensitivities(&Segment::new(&f, x0.clone(), sigma, p.clone(), steps))?.x1;
    let n = DVector::from_vec(vec![-mid[1], mid[0]]);
    let plane = Hyperplane::new(n.clone(), n.dot(&mid), 2);
    let orbit = HybridOrbit {
        f1: &f,
        f2: &f,
        g: &IdentityJump,
        h_es: &plane,
        x0: x0.clone(),
        sigma,
        period: t,
        p: p.clone(),
        n_steps: steps,
    };
    let m = super::hybrid::hybrid_monodromy(&orbit)?;
    let full = segment_sensitivities(&Segment::new(&f, x0, t, p, 2 * steps))?;
    Ok((m.g_x - full.x_mat).amax())
}
