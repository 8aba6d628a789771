//! Two forced linear oscillators with excitation frequencies `ω̄ ± ε/2`.
//!
//! The response amplitude difference `Δ = c1 - c2` is monitored together
//! with `ω̄`, `ε` and `ζ`. Its adjoint sensitivities are obtained by a
//! homotopy in `e.da` from 0 to 1, and then continued in `ω̄`.
//!
//! ```
//! use adjcont::osc;
//!
//! let d = osc::delta_closed_form(1.005, 0.01, 0.1).unwrap();
//! assert!((d + 7.3832e-2).abs() < 1e-6);
//! assert_eq!(osc::delta_closed_form(0.7, 0.0, 0.2).unwrap(), 0.0);
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::continuation::{
    continue_branch, read_adjoint, read_solution, save_run, ActiveSet, RunStore, Settings,
};
use crate::error::{Error, Result};
use crate::problem::{AdjointSpec, Func, Kind, Point, Problem, ProblemBuilder};

/// Initial guess `(a1, b1, c1, a2, b2, c2, o1, o2, ze, ep)`.
pub const U0: [f64; 10] = [-0.49, 4.9, 4.9, 0.0, 5.0, 5.0, 1.01, 1.0, 0.1, 0.01];

pub const MU_LABELS: [&str; 4] = ["da", "av", "ep", "ze"];
pub const ETA_LABELS: [&str; 4] = ["e.da", "e.av", "e.ep", "e.ze"];

pub fn phi_osc(u: &[f64]) -> Vec<f64> {
    let [a1, b1, c1, a2, b2, c2, o1, o2, ze, ep] = unpack(u);
    vec![
        c1 * c1 - a1 * a1 - b1 * b1,
        c2 * c2 - a2 * a2 - b2 * b2,
        o1 - o2 - ep,
        (1.0 - o1 * o1) * a1 + 2.0 * ze * o1 * b1 - 1.0,
        (1.0 - o1 * o1) * b1 - 2.0 * ze * o1 * a1,
        (1.0 - o2 * o2) * a2 + 2.0 * ze * o2 * b2 - 1.0,
        (1.0 - o2 * o2) * b2 - 2.0 * ze * o2 * a2,
    ]
}

/// The `ze` entries of the two quadrature rows carry a minus sign.
pub fn dphi_osc(u: &[f64]) -> Vec<Vec<f64>> {
    let [a1, b1, c1, a2, b2, c2, o1, o2, ze, _ep] = unpack(u);
    vec![
        vec![-2.0 * a1, -2.0 * b1, 2.0 * c1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, -2.0 * a2, -2.0 * b2, 2.0 * c2, 0.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, -1.0],
        vec![
            1.0 - o1 * o1,
            2.0 * ze * o1,
            0.0,
            0.0,
            0.0,
            0.0,
            -2.0 * o1 * a1 + 2.0 * ze * b1,
            0.0,
            2.0 * o1 * b1,
            0.0,
        ],
        vec![
            -2.0 * ze * o1,
            1.0 - o1 * o1,
            0.0,
            0.0,
            0.0,
            0.0,
            -2.0 * o1 * b1 - 2.0 * ze * a1,
            0.0,
            -2.0 * o1 * a1,
            0.0,
        ],
        vec![
            0.0,
            0.0,
            0.0,
            1.0 - o2 * o2,
            2.0 * ze * o2,
            0.0,
            0.0,
            -2.0 * o2 * a2 + 2.0 * ze * b2,
            2.0 * o2 * b2,
            0.0,
        ],
        vec![
            0.0,
            0.0,
            0.0,
            -2.0 * ze * o2,
            1.0 - o2 * o2,
            0.0,
            0.0,
            -2.0 * o2 * b2 - 2.0 * ze * a2,
            -2.0 * o2 * a2,
            0.0,
        ],
    ]
}

pub fn psi_osc(u: &[f64]) -> Vec<f64> {
    let [_, _, c1, _, _, c2, o1, o2, ze, ep] = unpack(u);
    vec![c1 - c2, (o1 + o2) / 2.0, ep, ze]
}

pub fn dpsi_osc(_u: &[f64]) -> Vec<Vec<f64>> {
    let mut j = vec![vec![0.0; 10]; 4];
    j[0][2] = 1.0;
    j[0][5] = -1.0;
    j[1][6] = 0.5;
    j[1][7] = 0.5;
    j[2][9] = 1.0;
    j[3][8] = 1.0;
    j
}

fn unpack(u: &[f64]) -> [f64; 10] {
    let mut v = [0.0; 10];
    v.copy_from_slice(&u[..10]);
    v
}

fn amplitude(w: f64, ze: f64) -> Result<f64> {
    let d = (1.0 - w * w).powi(2) + 4.0 * ze * ze * w * w;
    if d == 0.0 {
        return Err(Error::Invalid(format!("resonance at w = {w}, ze = {ze}")));
    }
    Ok(d.powf(-0.5))
}

/// Closed-form amplitude difference between the two oscillators.
pub fn delta_closed_form(av: f64, ep0: f64, ze0: f64) -> Result<f64> {
    Ok(amplitude(av + ep0 / 2.0, ze0)? - amplitude(av - ep0 / 2.0, ze0)?)
}

fn amplitude_slope(w: f64, ze: f64) -> f64 {
    let d = (1.0 - w * w).powi(2) + 4.0 * ze * ze * w * w;
    let dd = -4.0 * w * (1.0 - w * w) + 8.0 * ze * ze * w;
    -0.5 * d.powf(-1.5) * dd
}

/// `∂Δ/∂ω̄` of the closed form.
pub fn delta_slope(av: f64, ep0: f64, ze0: f64) -> f64 {
    amplitude_slope(av + ep0 / 2.0, ze0) - amplitude_slope(av - ep0 / 2.0, ze0)
}

/// Sextic whose roots are inflection points of the single-oscillator
/// response curve, the `ε → 0` limit of the fold condition.
pub fn inflection_residual(av: f64, ze0: f64) -> f64 {
    let z2 = ze0 * ze0;
    let w2 = av * av;
    3.0 * w2.powi(3) + 5.0 * (2.0 * z2 - 1.0) * w2 * w2 + (16.0 * z2 * z2 - 16.0 * z2 + 1.0) * w2 + 1.0 - 2.0 * z2
}

/// Bisection to an absolute bracket width of `xtol`.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, xtol: f64) -> Result<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo * fhi > 0.0 {
        return Err(Error::Invalid(format!("no sign change on [{lo}, {hi}]")));
    }
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm * flo < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Roots of `∂Δ/∂ω̄` near the two inflection points, ascending.
pub fn fold_roots(ep0: f64, ze0: f64) -> Result<[f64; 2]> {
    let f = |w| delta_slope(w, ep0, ze0);
    Ok([bisect(f, 0.85, 0.99, 1e-13)?, bisect(f, 1.0, 1.15, 1e-13)?])
}

/// Roots of the inflection sextic near the folds, ascending.
pub fn sextic_roots(ze0: f64) -> Result<[f64; 2]> {
    let f = |w| inflection_residual(w, ze0);
    Ok([bisect(f, 0.85, 0.99, 1e-13)?, bisect(f, 1.0, 1.15, 1e-13)?])
}

/// The ten adjoint equations written out by hand, in the order
/// ∂/∂(c1, c2, a1, a2, b1, b2, o1, o2, ze, ep).
pub fn adjoint_equations(u: &[f64], lam: &[f64], eta: &[f64]) -> [f64; 10] {
    let [a1, b1, c1, a2, b2, c2, o1, o2, ze, _] = unpack(u);
    let [am1, am2, fr, d1r, d1i, d2r, d2i]: [f64; 7] = lam[..7].try_into().expect("seven multipliers");
    let [eda, eav, eep, eze]: [f64; 4] = eta[..4].try_into().expect("four multipliers");
    [
        2.0 * c1 * am1 + eda,
        2.0 * c2 * am2 - eda,
        -2.0 * a1 * am1 + (1.0 - o1 * o1) * d1r - 2.0 * ze * o1 * d1i,
        -2.0 * a2 * am2 + (1.0 - o2 * o2) * d2r - 2.0 * ze * o2 * d2i,
        -2.0 * b1 * am1 + 2.0 * ze * o1 * d1r + (1.0 - o1 * o1) * d1i,
        -2.0 * b2 * am2 + 2.0 * ze * o2 * d2r + (1.0 - o2 * o2) * d2i,
        fr + 2.0 * (ze * b1 - o1 * a1) * d1r - 2.0 * (ze * a1 + o1 * b1) * d1i + eav / 2.0,
        -fr + 2.0 * (ze * b2 - o2 * a2) * d2r - 2.0 * (ze * a2 + o2 * b2) * d2i + eav / 2.0,
        2.0 * o1 * b1 * d1r - 2.0 * o1 * a1 * d1i + 2.0 * o2 * b2 * d2r - 2.0 * o2 * a2 * d2i + eze,
        -fr + eep,
    ]
}

/// Builds the problem: `phi` on ten fresh variables, `psi` monitoring
/// `(da, av, ep, ze)`, and, when `with_adjoint`, both adjoint blocks.
pub fn build_osc_problem(u0: &[f64], lam0: Option<&[f64]>, eta0: Option<&[f64]>, with_adjoint: bool) -> Result<Problem> {
    let mut b = ProblemBuilder::new();
    let phi = Func::new(7, phi_osc).with_jacobian(dphi_osc);
    let psi = Func::new(4, psi_osc).with_jacobian(dpsi_osc);
    let uidx = b.add_zero("phi", phi, &[], u0)?;
    b.add_monitor("psi", psi, &uidx, &MU_LABELS, Kind::Inactive)?;
    if with_adjoint {
        let mut spec = AdjointSpec::default();
        if let Some(l) = lam0 {
            spec = spec.l0(l);
        }
        b.add_adjoint("phi", spec)?;
        let mut spec = AdjointSpec::default().labels(&ETA_LABELS).aidx(&uidx);
        if let Some(l) = eta0 {
            spec = spec.l0(l);
        }
        b.add_adjoint("psi", spec)?;
    }
    Ok(b.build())
}

pub fn homotopy_active() -> ActiveSet {
    ActiveSet::new(&["da", "e.da", "e.av", "e.ep", "e.ze"]).window("e.da", 0.0, 1.0)
}

pub fn sweep_active() -> ActiveSet {
    ActiveSet::new(&["da", "av", "e.av", "e.ep", "e.ze"]).window("av", 0.5, 2.5)
}

pub fn sweep_settings(base: &Settings) -> Settings {
    Settings {
        itmx: 500,
        ..base.clone()
    }
}

/// Homotopy `e.da: 0 → 1` from the stored initial guess.
pub fn run_homotopy(s: &Settings) -> Result<(Problem, RunStore)> {
    let prob = build_osc_problem(&U0, None, None, true)?;
    let run = continue_branch(&prob, prob.initial_point(), &homotopy_active(), s, "osc_adjoint")?;
    Ok((prob, run))
}

/// Label of the homotopy chart with `e.da = 1`.
pub fn homotopy_end_label(run: &RunStore) -> Result<usize> {
    let col = run.column("e.da")?;
    run.charts
        .iter()
        .filter(|c| c.type_tag == "EP" && (c.values[col] - 1.0).abs() < 1e-9)
        .map(|c| c.label)
        .next_back()
        .ok_or_else(|| Error::Invalid("homotopy did not reach e.da = 1".into()))
}

/// Restarts from a stored homotopy endpoint and sweeps `av` over `[0.5, 2.5]`.
/// The demo uses [`sweep_settings`].
pub fn run_sweep(dir: &Path, homotopy_run: &str, label: usize, s: &Settings) -> Result<(Problem, RunStore)> {
    let u0 = read_solution(dir, homotopy_run, "phi", label)?;
    let lam0 = read_adjoint(dir, homotopy_run, "phi", label)?;
    let eta0 = read_adjoint(dir, homotopy_run, "psi", label)?;
    let prob = build_osc_problem(&u0, Some(&lam0), Some(&eta0), true)?;
    let run = continue_branch(&prob, prob.initial_point(), &sweep_active(), s, "osc_sweep")?;
    Ok((prob, run))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OscSummary {
    pub fold_locations: Vec<f64>,
    pub endpoint_sensitivities: Vec<(String, f64)>,
}

/// Both runs, persisted under `dir`, plus a summary written to `osc_summary.json`.
pub fn run_osc_demo(dir: &Path, s: &Settings) -> Result<(RunStore, RunStore, OscSummary)> {
    let (prob1, run1) = run_homotopy(s)?;
    save_run(&run1, &prob1, dir)?;
    let end = homotopy_end_label(&run1)?;
    let (prob2, run2) = run_sweep(dir, &run1.run_name, end, &sweep_settings(s))?;
    save_run(&run2, &prob2, dir)?;
    let av = run2.column("av")?;
    let endpoint = run1.chart(end)?;
    let summary = OscSummary {
        fold_locations: run2.with_type("FP").iter().map(|c| c.values[av]).collect(),
        endpoint_sensitivities: ETA_LABELS
            .iter()
            .map(|l| Ok((l.to_string(), prob1.value(&endpoint.point, l)?)))
            .collect::<Result<_>>()?,
    };
    let path = dir.join("osc_summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok((run1, run2, summary))
}

/// Re-corrects the primal problem with one fixed parameter shifted and
/// returns the monitor `da`.
pub fn recorrected_da(base: &Point, label: &str, shift: f64) -> Result<f64> {
    let prob = build_osc_problem(&base.u, None, None, false)?;
    let mut p = prob.initial_point().clone();
    p.mu.copy_from_slice(&base.mu);
    let v = prob.value(&p, label)?;
    prob.set_value(&mut p, label, v + shift)?;
    let s = Settings {
        tol: 1e-12,
        ..Settings::default()
    };
    let (chart, _) = crate::continuation::correct(&prob, &p, &ActiveSet::new(&["da"]), &s)?;
    prob.value(&chart.point, "da")
}
