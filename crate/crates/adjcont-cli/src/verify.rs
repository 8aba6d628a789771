//! Invariant suites behind `adjcont verify`.

use std::f64::consts::PI;

use adjcont::continuation::{solve_adjoint_direct, Settings};
use adjcont::flow::corpus::{self, smooth_limit_error, DEFAULT_CORPUS};
use adjcont::flow::fields::Hopf;
use adjcont::flow::{period_sensitivity, periodic_left_eigenvector, segment_sensitivities, Field, Segment};
use adjcont::invc::{self, CurveState, Difference};
use adjcont::osc;
use clap::ValueEnum;
use nalgebra::DVector;

use crate::table::sci;

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Flow,
    Saltation,
    AdjointFd,
    Curve,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Flow => "flow",
            Suite::Saltation => "saltation",
            Suite::AdjointFd => "adjoint-fd",
            Suite::Curve => "curve",
        }
    }
}

struct Report {
    ok: bool,
}

impl Report {
    fn check(&mut self, name: &str, value: f64, bound: f64) {
        let pass = value <= bound;
        self.ok &= pass;
        println!("{} {name}: {} (bound {})", if pass { "PASS" } else { "FAIL" }, sci(value), sci(bound));
    }

    fn error(&mut self, name: &str, e: impl std::fmt::Display) {
        self.ok = false;
        println!("FAIL {name}: {e}");
    }
}

/// Runs `suite` and prints one line per property; `true` if all passed.
pub fn run(suite: Suite, q: usize, p_rot: usize) -> bool {
    let mut r = Report { ok: true };
    match suite {
        Suite::Flow => flow(&mut r, &["monodromy", "parameter", "transport", "period", "phase", "section"]),
        Suite::Saltation => {
            flow(&mut r, &["saltation", "saltation-fd", "hybrid-period"]);
            match smooth_limit_error(2000) {
                Ok(e) => r.check("identity jump reproduces smooth monodromy", e, 1e-8),
                Err(e) => r.error("identity jump reproduces smooth monodromy", e),
            }
        }
        Suite::AdjointFd => {
            if let Err(e) = adjoint_fd(&mut r) {
                r.error("oscillator homotopy", e);
            }
        }
        Suite::Curve => {
            if let Err(e) = curve(&mut r, q, p_rot) {
                r.error("curve run", e);
            }
        }
    }
    r.ok
}

fn flow(r: &mut Report, checks: &[&str]) {
    let corpus = match corpus::parse(DEFAULT_CORPUS) {
        Ok(c) => c,
        Err(e) => return r.error("corpus", e),
    };
    let cases: Vec<_> = corpus.case.into_iter().filter(|c| checks.contains(&c.check.as_str())).collect();
    for o in corpus::run(&corpus::Corpus { case: cases }) {
        match &o.message {
            Some(m) => r.error(&o.name, m),
            None => r.check(&o.name, o.error, o.tolerance),
        }
    }
    if checks.contains(&"period") {
        let hopf = Hopf::default();
        for omega in [0.5, 2.0] {
            let p = DVector::from_vec(vec![1.0, omega]);
            let x0 = DVector::from_vec(vec![1.0, 0.0]);
            let name = format!("Hopf dT/domega = -2 pi/omega^2 at omega = {omega}");
            let res = segment_sensitivities(&Segment::new(&hopf, x0, 2.0 * PI / omega, p, 2000))
                .and_then(|s| periodic_left_eigenvector(&s).map(|w| period_sensitivity(&w, &s.p_mat)));
            match res {
                Ok(dt) => r.check(&name, (dt[1] + 2.0 * PI / (omega * omega)).abs(), 1e-6),
                Err(e) => r.error(&name, e),
            }
        }
        let hopf = Hopf::sheared();
        let p = DVector::from_vec(vec![1.0, 2.0, 0.7]);
        let x0 = DVector::from_vec(vec![0.4, -1.2]);
        match segment_sensitivities(&Segment::new(&hopf, x0.clone(), 1.0, p.clone(), 2000)) {
            Ok(s) => r.check("transport X(1) f(x0) = f(x1)", (&s.x_mat * hopf.eval(&x0, &p) - &s.fx1).norm(), 1e-8),
            Err(e) => r.error("transport X(1) f(x0) = f(x1)", e),
        }
    }
}

fn richardson(g: impl Fn(f64) -> adjcont::Result<f64>, h: f64) -> adjcont::Result<f64> {
    let d = |h: f64| -> adjcont::Result<f64> { Ok((g(h)? - g(-h)?) / (2.0 * h)) };
    Ok((4.0 * d(h / 2.0)? - d(h)?) / 3.0)
}

fn adjoint_fd(r: &mut Report) -> adjcont::Result<()> {
    let (prob, run) = osc::run_homotopy(&Settings::default())?;
    let end = &run.chart(osc::homotopy_end_label(&run)?)?.point;
    let direct = solve_adjoint_direct(&prob, end, &[("e.da", 1.0)])?;
    let gap = end
        .lam_eta
        .iter()
        .zip(&direct.lam_eta)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    r.check("homotopy endpoint equals direct adjoint solve", gap, 1e-8);
    let da0 = prob.value(end, "da")?;
    for (mu, eta) in [("av", "e.av"), ("ep", "e.ep"), ("ze", "e.ze")] {
        let fd = richardson(|h| Ok(osc::recorrected_da(end, mu, h)? - da0), 1e-5)?;
        let want = -prob.value(end, eta)?;
        r.check(&format!("d(da)/d({mu}) = -{eta} (relative)"), ((fd - want) / want).abs(), 1e-3);
    }
    let av = prob.value(end, "av")?;
    let slope = richardson(|h| osc::delta_closed_form(av + h, 0.01, 0.1), 1e-4)?;
    let eta = prob.value(end, "e.av")?;
    r.check("closed-form slope = -e.av (relative)", ((slope + eta) / eta).abs(), 1e-3);
    Ok(())
}

fn curve(r: &mut Report, q: usize, p_rot: usize) -> adjcont::Result<()> {
    let run = invc::run_curve(None, q, p_rot, &invc::curve_settings(q))?;
    let states = run
        .store
        .charts
        .iter()
        .map(|c| CurveState::from_chart(&run.prob, &run.idx, c))
        .collect::<adjcont::Result<Vec<_>>>()?;
    let worst = |f: &dyn Fn(&CurveState) -> f64| states.iter().map(f).fold(0.0, f64::max);
    r.check("invariance |M(v_i) - v_(i+p)|", worst(&|s| s.invariance_residual()), 1e-6);
    r.check(
        "phase multiplier |lambda_ps| for r2 > -0.6",
        worst(&|s| if s.r2 > -0.6 { s.lam_ps.abs() } else { 0.0 }),
        1e-8,
    );
    r.check(
        "adjoint shift identity beyond lambda_ps dx0",
        worst(&|s| invc::adjoint_shift_residual(s) - 7.0 * s.lam_ps.abs()),
        1e-8,
    );
    let mut radius: f64 = 0.0;
    for s in &states {
        let fiber = invc::q_phi_limit(s, 10_000, Difference::Central)?;
        radius = radius.max(invc::gamma_hat_radius(s, &fiber, 200)?);
    }
    r.check("max|1+z| of the transversal operator < 1 on every chart", radius, 1.0 - 1e-9);
    let a = run.state_at("A")?;
    let fiber = invc::q_phi_limit(&a, 10_000, Difference::Central)?;
    let adj = invc::q_phi_from_adjoint(&a, Difference::Central);
    r.check("fiber tangents: limit vs adjoint (relative)", invc::fiber_mismatch(&fiber.q_phi, &adj), 1e-3);
    let v = a.jacobians();
    let comm = (0..q)
        .map(|i| (fiber.tangential((i + p_rot) % q) * v[i] - v[i] * fiber.tangential(i)).norm())
        .fold(0.0, f64::max);
    r.check("projection commutation q_tg(phi+rho) V = V q_tg", comm, 50.0 / (q * q) as f64);
    let fd = invc::rotation_sensitivity_fd(&a, &run.idx, 1e-5)?;
    for (k, name) in ["r2", "b"].iter().enumerate() {
        let want = -a.eta[k];
        r.check(&format!("d(drho)/d({name}) = -e.{name} (relative)"), ((fd[k] - want) / want).abs(), 1e-3);
    }
    let slope = invc::branch_slope_fd(&a, &run.idx, 1e-5)?;
    let pred = -a.eta[0] / a.eta[1];
    r.check("branch slope db/dr2 = -e.r2/e.b (relative)", ((slope - pred) / pred).abs(), 1e-2);
    Ok(())
}
