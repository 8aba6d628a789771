use std::sync::OnceLock;

use adjcont::continuation::Settings;
use adjcont::invc::*;
use nalgebra::Matrix2;

fn curve(q: usize) -> &'static CurveRun {
    static Q55: OnceLock<CurveRun> = OnceLock::new();
    static Q144: OnceLock<CurveRun> = OnceLock::new();
    let (cell, p) = match q {
        55 => (&Q55, 34),
        144 => (&Q144, 89),
        _ => unreachable!(),
    };
    cell.get_or_init(|| run_curve(None, q, p, &curve_settings(q)).unwrap())
}

fn fiber(cs: &CurveState) -> FiberData {
    q_phi_limit(cs, 10_000, Difference::Central).unwrap()
}

#[test]
fn every_chart_solves_the_curve_problem() {
    for q in [55, 144] {
        let run = curve(q);
        assert_eq!(run.store.with_type("A").len(), 1);
        for c in &run.store.charts {
            let cs = CurveState::from_chart(&run.prob, &run.idx, c).unwrap();
            assert!(cs.invariance_residual() < 1e-6);
            // λ_ps vanishes only with the mesh; coarse meshes lose it near r2 = -0.9
            let bound = if cs.r2 > -0.6 { 1e-8 } else { 1e-5 };
            assert!(cs.lam_ps.abs() <= bound, "label {}: {:.3e}", c.label, cs.lam_ps);
            assert!(cs.drho.abs() < 1e-10);
            assert!((cs.eta[2] - 1.0).abs() < 1e-12);
            // the phase condition enters the shift identity through λ_ps·dx0, with |dx0_i| ≈ 2π
            assert!(adjoint_shift_residual(&cs) < 1e-8 + 7.0 * cs.lam_ps.abs());
        }
        let a = run.state_at("A").unwrap();
        assert!((a.r2 + 0.16).abs() < 1e-8);
    }
}

#[test]
fn coarse_meshes_approach_the_fine_values() {
    let a = curve(144).state_at("A").unwrap();
    for (got, want) in [(a.b, 4.8149e-2), (a.eta[0], -5.4033e-2), (a.eta[1], -1.9790e-1)] {
        assert!(((got - want) / want).abs() < 5e-3, "{got} vs {want}");
    }
}

#[test]
fn refinement_shrinks_the_sensitivity_error() {
    let fine = [-5.4033e-2, -1.9790e-1];
    let err = |q| {
        let a = curve(q).state_at("A").unwrap();
        (a.eta[0] - fine[0]).abs() + (a.eta[1] - fine[1]).abs()
    };
    assert!(err(144) < 0.5 * err(55));
}

#[test]
fn gamma_rho_defect_is_first_order() {
    let d: Vec<f64> = [55, 144]
        .iter()
        .map(|&q| gamma_rho_defect(&curve(q).state_at("A").unwrap(), Difference::Forward))
        .collect();
    let slope = (d[0] / d[1]).ln() / (144f64 / 55.0).ln();
    assert!((0.8..=1.2).contains(&slope), "exponent {slope}");
    assert!(d[1] * 144.0 < 20.0);
}

#[test]
fn fibers_from_limit_and_adjoint_agree() {
    for q in [55, 144] {
        let cs = curve(q).state_at("A").unwrap();
        let f = fiber(&cs);
        let a = q_phi_from_adjoint(&cs, Difference::Central);
        assert!(fiber_mismatch(&f.q_phi, &a) < 1e-3);
        for i in 0..q {
            assert!(((f.q_phi[i] * f.tangent[i])[0] - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn tangential_projection_commutes_with_the_map() {
    let mut worst = vec![];
    for q in [55, 144] {
        let cs = curve(q).state_at("A").unwrap();
        let f = fiber(&cs);
        let v = cs.jacobians();
        let comm = (0..q)
            .map(|i| (f.tangential((i + cs.p_rot) % q) * v[i] - v[i] * f.tangential(i)).norm())
            .fold(0.0, f64::max);
        let idem = (0..q)
            .map(|i| {
                let t: Matrix2<f64> = f.tangential(i);
                (t * t - t).norm()
            })
            .fold(0.0, f64::max);
        assert!(idem < 1e-8);
        worst.push(comm);
    }
    assert!(worst[1] < 1e-3);
    assert!(worst[1] < worst[0] / 4.0);
}

#[test]
fn transversal_stability_along_the_branch() {
    let run = curve(55);
    for c in &run.store.charts {
        let cs = CurveState::from_chart(&run.prob, &run.idx, c).unwrap();
        let r = gamma_hat_radius(&cs, &fiber(&cs), 200).unwrap();
        assert!(r < 1.0, "label {}: {r}", c.label);
    }
    let first = run.state(1).unwrap();
    let r = gamma_hat_radius(&first, &fiber(&first), 200).unwrap();
    assert!((r - 0.5).abs() < 1e-3);
}

#[test]
fn full_spectrum_contains_the_radius() {
    let cs = curve(55).state_at("A").unwrap();
    let f = fiber(&cs);
    let sp = gamma_hat_spectrum(&cs, &f, SpectrumMode::Full).unwrap();
    assert_eq!(sp.gamma_hat.len(), 110);
    let max = sp.gamma_hat.iter().map(|(re, im)| (re + 1.0).hypot(*im)).fold(0.0, f64::max);
    assert!((max - sp.radius).abs() < 1e-6);
    // the tangential direction is projected out
    assert!(sp.gamma_hat.iter().any(|(re, im)| (re + 1.0).hypot(*im) < 1e-8));
}

#[test]
fn asymptotic_phase_decays_to_a_plateau() {
    let cs = curve(144).state_at("A").unwrap();
    let f = fiber(&cs);
    for i0 in [0, 50] {
        let curves = phase_decay_ring(&cs, &f, i0, &perturbation_ring(20, 1e-4), 200);
        for c in &curves {
            assert!(c[0] > 1e-6);
            assert!(*c.last().unwrap() <= 1e-6);
        }
    }
    let zero = phase_decay_experiment(&cs, &f, 3, nalgebra::Vector2::zeros(), 50);
    assert!(zero.iter().all(|g| *g == 0.0));
}

#[test]
fn tangent_perturbation_is_a_pure_phase_shift() {
    let cs = curve(144).state_at("A").unwrap();
    let f = fiber(&cs);
    let t = f.tangent[7].normalize();
    let gaps: Vec<f64> = [1e-3, 1e-4]
        .iter()
        .map(|eps| phase_decay_experiment(&cs, &f, 7, t * *eps, 0)[0])
        .collect();
    assert!(gaps[0] < 1e-12 && gaps[1] < 1e-12);
}

#[test]
fn sensitivities_match_recorrected_differences() {
    let run = curve(55);
    let cs = run.state_at("A").unwrap();
    let fd = rotation_sensitivity_fd(&cs, &run.idx, 1e-5).unwrap();
    for k in 0..2 {
        let want = -cs.eta[k];
        assert!(((fd[k] - want) / want).abs() < 1e-3, "{k}: {} vs {want}", fd[k]);
    }
    let slope = branch_slope_fd(&cs, &run.idx, 1e-5).unwrap();
    let pred = -cs.eta[0] / cs.eta[1];
    assert!(((slope - pred) / pred).abs() < 1e-2);
}

#[test]
fn stored_chart_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (prob, idx) = build_curve_problem(55, 34, true).unwrap();
    let store = run_curve_continuation(&prob, &curve_settings(55), CURVE_RUN).unwrap();
    adjcont::continuation::save_run(&store, &prob, dir.path()).unwrap();
    let label = store.with_type("A")[0].label;
    let back = load_curve_state(dir.path(), CURVE_RUN, label, 55, 34).unwrap();
    let mem = CurveState::from_chart(&prob, &idx, store.chart(label).unwrap()).unwrap();
    assert_eq!(back.v, mem.v);
    assert_eq!(back.lam_map, mem.lam_map);
    assert_eq!(back.eta, mem.eta);
}

#[test]
fn csv_exports() {
    let dir = tempfile::tempdir().unwrap();
    let cs = curve(55).state_at("A").unwrap();
    let f = fiber(&cs);
    let path = dir.path().join("curve.csv");
    write_curve_csv(&path, &cs, &f).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 56);
    assert!(text.starts_with("phi,v1,v2,qphi1,qphi2"));
    let sp = gamma_hat_spectrum(&cs, &f, SpectrumMode::Radius).unwrap();
    let path = dir.path().join("spectrum.csv");
    write_spectrum_csv(&path, &sp).unwrap();
    assert!(std::fs::read_to_string(&path).unwrap().contains("max_abs_1_plus_z"));
    let curves = phase_decay_ring(&cs, &f, 0, &perturbation_ring(20, 1e-4), 10);
    let path = dir.path().join("decay.csv");
    write_decay_csv(&path, &curves).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap().split(',').count(), 21);
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn settings_scale_with_the_mesh() {
    let s = curve_settings(377);
    assert_eq!(s.h0, 2.0);
    assert!(curve_settings(55).hmax < s.hmax);
    let _ = Settings::default();
}
