use hetshadow::chart::Chart;
use hetshadow::hset::Membership;
use hetshadow::model::LatticeModel;
use hetshadow::shadow::*;

#[test]
fn exponent_recurrence() {
    assert_eq!(exponent_sequence(0), (1, 0));
    assert_eq!(exponent_sequence(1), (3, 1));
    assert_eq!(exponent_sequence(3), (15, 7));
    for j in 0..12 {
        let (k, kc) = exponent_sequence(j);
        assert_eq!(exponent_sequence(j + 1), (2 * k + 1, 2 * kc + 1));
        assert_eq!((k, kc), ((1 << (j + 1)) - 1, (1 << j) - 1));
    }
}

#[test]
fn config_validation() {
    assert!(ChainConfig::new(3, 0.05, 10.0).validate().is_ok());
    assert!(ChainConfig::new(2, 0.05, 10.0).validate().is_err());
    assert!(ChainConfig::new(3, 0.3, 10.0).validate().is_err());
    assert!(ChainConfig::new(3, 0.05, 0.5).validate().is_err());
}

#[test]
fn ledger_examples() {
    let c = ConstantsEstimate::identity_like();
    let (sigma, t) = (0.05, 11.0);
    let r = radii_ledger(0, 4, sigma, t, &c);
    assert_eq!(r.g_in_xm, t / 2.0);
    assert_eq!(r.g_in_ym, t);
    assert_eq!(r.g_in_cp, 1.0);
    for s in 0..4 {
        let r = radii_ledger(s, 4, sigma, t, &c);
        assert_eq!(r.out_xp(), sigma / 100.0);
        assert_eq!(r.r_in_zp, 1.5 * sigma);
        assert!((r.g_out_cp - c.lc_phi * r.g_in_cp).abs() <= 1e-15 * r.g_out_cp);
        assert!((r.r_out_cf * c.lc_phi - r.r_in_cf).abs() <= 1e-15 * r.r_in_cf);
        let tk = t.powi(r.k as i32);
        assert!((r.out_zm() - r.k1 * tk * (-t).exp()).abs() <= 1e-14 * r.out_zm());
        assert!((r.out_yp() - r.k1 * t * (-2.0 * t).exp()).abs() <= 1e-14 * r.out_yp());
    }
    let small = ConstantsEstimate { l_ct: 0.5, big_l: 1.3, lc_phi: 1.2, ..c.clone() };
    let r = radii_ledger(0, 4, sigma, t, &small);
    assert!((r.r_in_cf - 1.3 * 1.2 * 1.5 * sigma).abs() < 1e-15);
    let r2 = radii_ledger(2, 4, sigma, t, &small);
    assert!((r2.r_in_cf - r.r_in_cf / 0.25).abs() < 1e-12);
}

fn separation(n: usize, sigma: f64, t: f64) -> f64 {
    let c = ConstantsEstimate::identity_like();
    let rs: Vec<Radii> = (0..n).map(|s| radii_ledger(s, n, sigma, t, &c)).collect();
    let nano = rs.iter().map(|r| r.in_xm().max(r.in_ym()).max(r.out_yp())).fold(0.0, f64::max);
    let micro = rs
        .iter()
        .flat_map(|r| {
            let mut v = vec![r.in_zp(), r.out_zm(), r.out_cp()];
            if r.j + 2 <= n {
                v.extend([r.in_cf(), r.out_cf()]);
            }
            if r.j > 2 {
                v.push(r.in_cp());
            }
            v
        })
        .fold(f64::INFINITY, f64::min);
    nano / micro
}

#[test]
fn micro_nano_separation() {
    // the T^k factors of late stages push the threshold well past T = 10
    assert!(separation(3, 0.05, 10.0) > 1e-3);
    assert!(separation(4, 0.05, 10.0) > 1e-3);
    for t in [40.0, 60.0, 100.0] {
        assert!(separation(3, 0.01, t) < 1e-3, "T = {t}");
    }
    for t in [80.0, 100.0, 150.0] {
        assert!(separation(4, 0.01, t) < 1e-3, "T = {t}");
    }
}

#[test]
fn identity_constants() {
    let c = ConstantsEstimate::identity_like();
    assert!(c.big_l >= c.l && c.big_lc >= c.lc);
    assert_eq!(c.d2, 0.0);
    assert_eq!(c.lc_phi, 1.0);
}

#[test]
fn linear_chain_passes_for_any_t() {
    let c = ConstantsEstimate::identity_like();
    for n in [3, 4] {
        for t in [1.0, 3.0, 10.0] {
            let sys = LinearChain::new(n, 0.05);
            let r = verify_chain_with(&sys, &ChainConfig::new(n, 0.05, t), &c).unwrap();
            assert_eq!(r.links.len(), 2 * n - 1);
            assert!(r.pass, "n = {n}, T = {t}: {:?}", r.first_failure().map(|l| &l.name));
            assert!(r.worst_margin() > 0.0);
        }
    }
}

#[test]
fn linear_chain_without_expansion_fails() {
    let c = ConstantsEstimate::identity_like();
    let sys = LinearChain { exit_gain: 0.5, ..LinearChain::new(4, 0.05) };
    let r = verify_chain_with(&sys, &ChainConfig::new(4, 0.05, 5.0), &c).unwrap();
    assert!(!r.pass);
    assert!(r.first_failure().unwrap().name.starts_with("T["));
    assert!(r.suggestion.as_ref().unwrap().contains("increase T"));
}

#[test]
fn contracted_sets() {
    let c = ConstantsEstimate::identity_like();
    let sys = LinearChain::new(4, 0.05);
    let (_, anchors, sets, _, _, _) = construct(&sys, &ChainConfig::new(4, 0.05, 10.0), &c).unwrap();
    for (s, a) in sets.iter().zip(&anchors) {
        let l = Layout::new(4, s.j);
        match l.plus {
            Some(p) => {
                let ni = s.n_in_c.as_ref().unwrap();
                assert_eq!(ni.fixed, vec![p + 1]);
                assert_eq!(ni.value, vec![0.0]);
                let no = s.n_out_c.as_ref().unwrap();
                assert_eq!(no.fixed, vec![p]);
                assert_eq!(no.membership(&a.b).unwrap(), Membership::Interior);
                assert_eq!(a.b[p], 0.05);
                let mut off = a.b.clone();
                off[p] += 1e-4;
                assert_eq!(no.membership(&off).unwrap(), Membership::Outside);
            }
            None => assert!(s.n_in_c.is_none() && s.n_out_c.is_none()),
        }
        assert_eq!(s.n_in.membership(&a.a).unwrap(), Membership::Interior);
    }
}

#[test]
fn ck_anchors() {
    let m = LatticeModel::ck(3);
    let chain = LatticeChain::new(&m, 0.05).unwrap();
    for j in 1..=3 {
        let a = chain.anchors(j).unwrap();
        assert!(a.line_residual < 1e-10);
        let p = chain.chart(j).plus_idx();
        if let Some(p) = p {
            assert_eq!(a.b[p], 0.05);
            assert!(a.b.iter().enumerate().all(|(i, v)| i == p || *v == 0.0));
            assert!(a.arrival_residual.unwrap() < 1e-8);
            assert!(a.transit_time.unwrap() > 0.0);
            // the transition of B_j lies on the ingoing line of chart j + 1
            let img = chain.transition_point(j, &a.b).unwrap();
            assert!(img.iter().enumerate().all(|(i, v)| i == 1 || v.abs() < 1e-12), "{img:?}");
            assert!(img[1] > 0.0);
        }
        if chain.chart(j).minus_idx().is_some() {
            assert_eq!(a.a[1], 0.05);
        }
    }
}

#[test]
fn ck_constants_are_finite() {
    let m = LatticeModel::ck(3);
    let chain = LatticeChain::new(&m, 0.05).unwrap();
    let c = estimate_constants(&chain, 10.0, 8, 0).unwrap();
    for v in [c.l, c.big_l, c.big_lc, c.lc, c.d2, c.g, c.k, c.lc_phi, c.l_ct] {
        assert!(v.is_finite() && v >= 0.0);
    }
    assert!(c.l > 0.0 && c.big_l >= c.l && c.big_lc >= c.lc);
    assert!((c.lc_phi - (10.0 * c.g * 0.05).exp()).abs() < 1e-12);
    assert!((c.l_ct - c.lc_phi * c.big_lc).abs() < 1e-12);
    assert_eq!(c.r_t, R_TRANSIT);
}

#[test]
fn tiny_t_fails_with_diagnostic() {
    let m = LatticeModel::ck(3);
    let cfg = ChainConfig { samples: 8, ..ChainConfig::new(3, 0.05, 2.0) };
    let r = verify_chain(&m, &cfg).unwrap();
    assert!(!r.pass);
    assert_eq!(r.links.len(), 5);
    assert!(r.suggestion.unwrap().contains("increase T"));
    assert!(verify_chain(&m, &ChainConfig::new(4, 0.05, 10.0)).is_err());
}

#[test]
fn shooting_needs_a_lattice_report() {
    let m = LatticeModel::ck(3);
    let sys = LinearChain::new(3, 0.05);
    let r = verify_chain_with(&sys, &ChainConfig::new(3, 0.05, 10.0), &ConstantsEstimate::identity_like()).unwrap();
    assert!(matches!(shoot_shadowing_orbit(&m, &r, &ShootConfig::default()), Err(ShadowError::Precondition(_))));
    let cfg = ChainConfig { samples: 8, ..ChainConfig::new(3, 0.05, 2.0) };
    let r = verify_chain(&m, &cfg).unwrap();
    assert!(!r.construction.is_empty());
    assert!(matches!(shoot_shadowing_orbit(&m, &r, &ShootConfig::default()), Err(ShadowError::Precondition(_))));
}

#[test]
fn three_mode_shadowing_orbit() {
    let m = LatticeModel::ck(3);
    let (t, _) = min_constructible_t(&m, 0.01, 10.0, 40.0, 24, 0).unwrap().unwrap();
    let cfg = ChainConfig { grid: hetshadow::hset::GridSpec { face: 2, interior: 2 }, ..ChainConfig::new(3, 0.01, t) };
    let r = verify_chain(&m, &cfg).unwrap();
    assert!(r.construction.is_empty());
    let o = shoot_shadowing_orbit(&m, &r, &ShootConfig::default()).unwrap();
    assert!(o.entered_in_order && o.sequential, "{:?}", o.dominance);
    assert_eq!(o.dominance, vec![1, 2, 3]);
    assert!(o.max_last_mass >= 0.8);
    assert!(o.max_mass_drift < 1e-8);
    for st in &o.stages {
        for sec in &st.sections {
            if sec.set.starts_with("N_in") {
                assert_eq!(sec.membership, Membership::Interior, "{}", sec.set);
            }
        }
    }
    let csv = o.mass_csv();
    assert!(csv.lines().all(|l| l.split(',').count() == 5));
}

#[test]
fn chart_dims_match_layout() {
    let m = LatticeModel::ck(5);
    for j in 1..=5 {
        let c = Chart::new(&m, j).unwrap();
        let l = Layout::new(5, j);
        assert_eq!(c.dim(), l.dim());
        assert_eq!(c.minus_idx(), l.minus);
        assert_eq!(c.plus_idx(), l.plus);
        assert_eq!(l.cp().len() + l.cf().len(), l.centers.len());
    }
}
