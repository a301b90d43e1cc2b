use hetshadow::enclosure::*;
use num_complex::Complex64;
use proptest::prelude::*;
use SaddleVar::*;

const Y_X2: MonomialIndex = MonomialIndex::new(0, 1, 2, 0, 0);
const Y2_X: MonomialIndex = MonomialIndex::new(0, 2, 1, 0, 0);

fn params() -> WTubeParams {
    WTubeParams::new(12.0, 0.01, 1.0, 1, 0).unwrap()
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

#[test]
fn constants_by_hand() {
    let c = monomial_constants(&Y_X2, 1, 0);
    assert_eq!((c.lambda, c.kappa, c.theta), (1, 2, 3));
    let c = monomial_constants(&Y2_X, 1, 0);
    assert_eq!((c.lambda, c.kappa, c.theta), (-1, 1, 3));
    let c = monomial_constants(&MonomialIndex::default(), 4, 5);
    assert_eq!((c.lambda, c.kappa, c.theta, c.s), (0, 0, 0, 0));
    // s = k m_x- + m_y+ + k_c m_c
    assert_eq!(monomial_constants(&MonomialIndex::new(2, 0, 0, 1, 3), 4, 5).s, 8 + 1 + 15);
}

#[test]
fn resonance() {
    assert!(is_resonant(&Y_X2, Xm));
    assert!(!is_resonant(&Y_X2, Yp));
    assert!(!is_resonant(&MonomialIndex::new(0, 0, 0, 0, 4), Ym));
    assert!(is_resonant(&MonomialIndex::new(0, 1, 0, 0, 3), Ym));
}

#[test]
fn suitability_of_named_monomials() {
    let p = params();
    assert_eq!(suitability(Xm, &Y_X2, &p).unwrap(), Suitability::PotentiallySuitable);
    assert_eq!(suitability(Yp, &Y2_X, &p).unwrap(), Suitability::PotentiallySuitable);
    assert!(matches!(suitability(Yp, &Y_X2, &p), Err(EnclosureError::NotResonant { .. })));
}

#[test]
fn low_degree_tables() {
    let p = params();
    let count = |v, s| enumerate_and_classify(5, v, &p).unwrap().iter().filter(|r| r.suitability == s).count();
    assert_eq!(count(Ym, Suitability::VerySuitable), enumerate_and_classify(5, Ym, &p).unwrap().len());
    assert_eq!(count(Xp, Suitability::VerySuitable), enumerate_and_classify(5, Xp, &p).unwrap().len());
    assert_eq!(count(Xm, Suitability::PotentiallySuitable), 1);
    assert!(matches!(enumerate_and_classify(10, Xm, &p), Err(EnclosureError::Degree(10))));
}

#[test]
fn degree_nine_table() {
    let p = params();
    let mut potential = vec![];
    for v in SaddleVar::ALL {
        for r in enumerate_and_classify(9, v, &p).unwrap() {
            assert_ne!(r.suitability, Suitability::Unsuitable);
            if r.class == MonoClass::M2 {
                assert_eq!(r.suitability, Suitability::VerySuitable);
            }
            if r.suitability == Suitability::PotentiallySuitable {
                assert_eq!(r.class, MonoClass::M1);
                potential.push((v, r.m));
            }
        }
    }
    assert_eq!(potential, vec![(Xm, Y_X2), (Yp, Y2_X)]);
}

#[test]
fn m2_placements_very_suitable() {
    let p = params();
    for mc in 3..=5 {
        for slot in 0..4 {
            let mut e = [0u32; 4];
            e[slot] = 1;
            let m = MonomialIndex::new(e[0], e[1], e[2], e[3], mc);
            for v in SaddleVar::ALL {
                if is_resonant(&m, v) {
                    assert_eq!(suitability(v, &m, &p).unwrap(), Suitability::VerySuitable);
                }
            }
        }
    }
}

#[test]
fn bound_examples() {
    assert_eq!(enclosure_bound(1.0, 1.0, &[], 5.0).unwrap(), 1.0);
    assert!((enclosure_bound(1.0, 0.0, &[(3.0, 1.0)], 2.0).unwrap() - 4f64.exp()).abs() < 1e-12);
    assert_eq!(enclosure_bound(1.0, 0.0, &[(0.0, 2.0)], 2.0).unwrap(), 2.0);
    assert_eq!(enclosure_bound(1.0, 0.0, &[(0.0, 2.0)], 9.0).unwrap(), 2.0);
    assert!(matches!(enclosure_bound(1.0, 0.0, &[(1.0, 2.0)], 2.0), Err(EnclosureError::DegenerateForcing(_))));
}

#[test]
fn ode_enclosure_contained() {
    let modes = [ForcingMode::Plus, ForcingMode::Minus, ForcingMode::Switching];
    let r = verify_ode_enclosure(1.0, 0.5, &[(3.0, 0.2), (-1.0, 0.3)], 3.0, &[0.0, 0.1, -0.2], &modes, 0).unwrap();
    assert!(r.contained && r.runs == 9);
    let r = verify_ode_enclosure(1.0, 0.0, &[], 3.0, &[0.3], &[ForcingMode::Plus], 0).unwrap();
    assert!(r.contained && r.worst_ratio == 0.0);
}

#[test]
fn constant_forcing_is_tight() {
    // y' = y + D e^t has y − e^t y0 = D t e^t exactly
    let r = verify_ode_enclosure(1.0, 0.7, &[], 2.0, &[0.0], &[ForcingMode::Plus], 0).unwrap();
    assert!((r.worst_ratio - 1.0).abs() < 1e-6);
}

#[test]
fn synthetic_system_construction() {
    let empty = build_synthetic_nf_system(vec![], vec![CenterSpec { nu: 2.0, coupling: [zero(); 4] }]).unwrap();
    let y = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let mut o = [0.0; 6];
    empty.field(1.0, &y, &mut o);
    assert_eq!(o, [0.1, -0.2, 0.3, -0.4, -2.0 * 0.6, 2.0 * 0.5]);
    let one = build_synthetic_nf_system(vec![NfTerm { v: Xm, m: Y_X2, g: 1.0 }], vec![]).unwrap();
    let mut o = [0.0; 4];
    one.field(0.5, &y[..4], &mut o);
    assert!((o[0] - (0.1 + 0.5 * 0.2 * 0.3 * 0.3)).abs() < 1e-15);
    assert_eq!(&o[1..], &[-0.2, 0.3, -0.4]);
    assert!(build_synthetic_nf_system(vec![NfTerm { v: Yp, m: Y_X2, g: 1.0 }], vec![]).is_err());
    assert!(build_synthetic_nf_system(vec![NfTerm { v: Xm, m: MonomialIndex::new(0, 0, 1, 0, 0), g: 1.0 }], vec![]).is_err());
    // half of the resonant cubics are even in the other saddle block
    let all = build_synthetic_nf_system(all_resonant_cubics(), vec![]).unwrap();
    assert_eq!(all.terms.len(), 24);
    assert!(all.terms.iter().all(|t| t.g.abs() == 1.0));
    assert!(!all.sign_symmetric());
    let odd: Vec<NfTerm> = all.terms.iter().filter(|t| build_synthetic_nf_system(vec![(*t).clone()], vec![]).unwrap().sign_symmetric()).cloned().collect();
    assert_eq!(odd.len(), 12);
    assert!(odd.iter().any(|t| t.v == Xm && t.m == Y_X2));
    assert!(odd.iter().any(|t| t.v == Yp && t.m == Y2_X));
    assert!(build_synthetic_nf_system(odd, vec![]).unwrap().sign_symmetric());
}

fn cubic_system() -> NfSystem {
    let one = Complex64::new(1.0, 0.0);
    build_synthetic_nf_system(all_resonant_cubics(), vec![CenterSpec { nu: 1.0, coupling: [one, -one, one, -one] }]).unwrap()
}

#[test]
fn linear_tubes_have_analytic_slack() {
    let p = params();
    let sys = cubic_system();
    let ics = sample_ics(&p, 1, 5, 1);
    let r = verify_theorem_fen(&sys, &p, &ics, &[0.0]).unwrap();
    assert!(r.contained);
    let tk = p.t / p.a;
    assert!((r.worst_slack[0] - tk).abs() < 1e-6 * tk);
    assert!((r.worst_slack[1] - p.sigma / p.a).abs() < 1e-9);
    assert!((r.worst_slack[2] - p.sigma / p.a).abs() < 1e-9);
}

#[test]
fn cubic_tubes_contained() {
    let p = params();
    let sys = cubic_system();
    let ics = sample_ics(&p, 1, 20, 0);
    let r = verify_theorem_fen(&sys, &p, &ics, &[0.0, 0.5, 1.0]).unwrap();
    assert_eq!(r.runs.len(), 60);
    assert!(r.contained, "{:?}", r.worst_slack);
    let c = verify_center_modulus(&sys, &p, &ics, None).unwrap();
    assert!(c.contained && c.worst_log_ratio < 1.0);
}

#[test]
fn large_sigma_is_reported_not_errored() {
    let p = WTubeParams::new(12.0, 0.5, 1.0, 1, 0).unwrap();
    let sys = cubic_system();
    let ics = sample_ics(&p, 1, 6, 0);
    // either outcome is acceptable outside the small-sigma regime, as long as it is a report
    if let Ok(r) = verify_theorem_fen(&sys, &p, &ics, &[1.0]) {
        assert_eq!(r.runs.len(), 6);
        assert_eq!(r.contained, r.runs.iter().all(|x| x.contained));
    }
}

#[test]
fn center_band_cases() {
    let p = params();
    let ics = sample_ics(&p, 1, 6, 2);
    let silent = build_synthetic_nf_system(all_resonant_cubics(), vec![CenterSpec { nu: 1.0, coupling: [zero(); 4] }]).unwrap();
    let r = verify_center_modulus(&silent, &p, &ics, Some(1.0)).unwrap();
    assert!(r.contained && r.worst_log_ratio < 1e-6);
    let xp = Complex64::new(1.0, 0.0);
    let g_xp = build_synthetic_nf_system(all_resonant_cubics(), vec![CenterSpec { nu: 1.0, coupling: [zero(), zero(), xp, zero()] }]).unwrap();
    let r = verify_center_modulus(&g_xp, &p, &ics, Some(1.0)).unwrap();
    // drift factor at most e^{2Gd} with d = 2σ
    assert!(r.contained && r.worst_log_ratio * r.band <= 4.0 * p.sigma + 1e-12);
}

#[test]
fn params_rejected() {
    assert!(WTubeParams::new(0.5, 0.01, 1.0, 1, 0).is_err());
    assert!(WTubeParams::new(12.0, 0.0, 1.0, 1, 0).is_err());
    assert!(WTubeParams::new(12.0, 0.01, 0.0, 1, 0).is_err());
}

proptest! {
    #[test]
    fn bound_monotone(d in 0.0f64..2.0, d1 in 0.0f64..2.0, extra in 0.0f64..1.0, t in 1.0f64..5.0, dt in 0.0f64..2.0) {
        let f = |d1: f64, t: f64| enclosure_bound(1.0, d, &[(2.5, d1), (-1.0, 0.3)], t).unwrap();
        prop_assert!(f(d1 + extra, t) >= f(d1, t));
        prop_assert!(f(d1, t + dt) >= f(d1, t));
    }

    #[test]
    fn constants_formulae(a in 0u32..4, b in 0u32..4, c in 0u32..4, d in 0u32..4, e in 0u32..4, k in 0u32..5, kc in 0u32..5) {
        let m = MonomialIndex::new(a, b, c, d, e);
        let q = monomial_constants(&m, k, kc);
        let (a, b, c, d, e) = (a as i32, b as i32, c as i32, d as i32, e as i32);
        prop_assert_eq!(q.lambda, a - b + c - d);
        prop_assert_eq!(q.kappa, e + 2 * a + c + d);
        prop_assert_eq!(q.theta, c + b + d);
        prop_assert_eq!(q.s, k as i32 * a + d + kc as i32 * e);
    }
}
