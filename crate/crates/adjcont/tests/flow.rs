use std::f64::consts::PI;

use adjcont::flow::corpus::{self, hybrid_period_fd_error, smooth_limit_error, DEFAULT_CORPUS};
use adjcont::flow::fields::{Hopf, VanDerPol};
use adjcont::flow::*;
use nalgebra::{dvector, DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn every_corpus_case_passes() {
    let outcomes = corpus::run(&corpus::parse(DEFAULT_CORPUS).unwrap());
    for o in &outcomes {
        assert!(o.passed, "{}: {:.3e} > {:.1e} {:?}", o.name, o.error, o.tolerance, o.message);
    }
}

#[test]
fn hopf_period_sensitivity_in_frequency() {
    let hopf = Hopf::default();
    for omega in [0.5, 1.0, 2.0, 3.7] {
        let p = dvector![1.0, omega];
        let seg = Segment::new(&hopf, dvector![1.0, 0.0], 2.0 * PI / omega, p, 2000);
        let s = segment_sensitivities(&seg).unwrap();
        let w = periodic_left_eigenvector(&s).unwrap();
        let dt = period_sensitivity(&w, &s.p_mat);
        assert!(dt[0].abs() < 1e-6, "dT/dbeta = {}", dt[0]);
        assert!((dt[1] + 2.0 * PI / (omega * omega)).abs() < 1e-6, "omega {omega}: {}", dt[1]);
    }
}

#[test]
fn phase_gradient_of_the_shear_free_cycle() {
    let f = Hopf::default();
    let p = dvector![1.0, 2.0];
    for theta in [0.0f64, 0.7, 2.5] {
        let x0 = dvector![theta.cos(), theta.sin()];
        let s = segment_sensitivities(&Segment::new(&f, x0.clone(), PI, p.clone(), 2000)).unwrap();
        let lam = asymptotic_phase_gradient(&s, 1 << 20).unwrap();
        let fx = f.eval(&x0, &p);
        assert!((lam.dot(&fx) - 1.0).abs() < 1e-6);
        assert!((&lam - &fx / fx.norm_squared()).amax() < 1e-6);
    }
}

#[test]
fn sheared_phase_gradient_is_not_tangent() {
    let f = Hopf::sheared();
    let p = dvector![1.0, 2.0, 0.5];
    let x0 = dvector![1.0, 0.0];
    let s = segment_sensitivities(&Segment::new(&f, x0.clone(), PI, p.clone(), 2000)).unwrap();
    let lam = asymptotic_phase_gradient(&s, 1 << 20).unwrap();
    assert!((&lam - f.phase_gradient(&x0, &p)).amax() < 1e-6);
    assert!(lam[0].abs() > 0.1);
}

#[test]
fn adjoint_row_is_constant_along_the_segment() {
    // λ(τ)ᵀX(τ) = λ(1)ᵀX(1) with λ(τ)ᵀ = λ(1)ᵀX(1)X(τ)⁻¹
    let f = VanDerPol;
    let p = dvector![1.0, 0.8];
    let x0 = dvector![0.3, -1.1];
    let full = segment_sensitivities(&Segment::new(&f, x0.clone(), 2.0, p.clone(), 2000)).unwrap();
    let half = segment_sensitivities(&Segment::new(&f, x0.clone(), 1.0, p.clone(), 1000)).unwrap();
    let rest = segment_sensitivities(&Segment::new(&f, half.x1.clone(), 1.0, p.clone(), 1000)).unwrap();
    let eta = DMatrix::from_row_slice(1, 2, &[0.4, -1.3]);
    let whole = segment_adjoint(&full, &eta);
    let tail = segment_adjoint(&rest, &eta);
    let head = segment_adjoint(&half, &(-&tail.eta_x0));
    assert!((&whole.eta_x0 - &head.eta_x0).amax() < 1e-8);
    assert!((&whole.eta_p - (&head.eta_p + &tail.eta_p)).amax() < 1e-8);
}

#[test]
fn hybrid_identities() {
    assert!(smooth_limit_error(2000).unwrap() < 1e-8);
    assert!(hybrid_period_fd_error(&dvector![1.0, 0.8], 4000).unwrap() < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn transport_identity(x in -2.0f64..2.0, y in -2.0f64..2.0, t in 0.2f64..3.0) {
        let f = Hopf::sheared();
        let p = dvector![1.0, 2.0, 0.7];
        let x0 = DVector::from_vec(vec![x, y]);
        prop_assume!(x0.norm() > 0.1);
        let s = segment_sensitivities(&Segment::new(&f, x0.clone(), t, p.clone(), 2000)).unwrap();
        let err = (&s.x_mat * f.eval(&x0, &p) - &s.fx1).norm() / s.fx1.norm();
        prop_assert!(err < 1e-8, "{err:.3e}");
    }
}
