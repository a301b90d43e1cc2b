use approx::assert_relative_eq;
use hetshadow::chart::*;
use hetshadow::model::{self, LatticeModel};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn quad_params_of_ck() {
    let m = LatticeModel::ck(5);
    for j in 1..5 {
        let q = quad_params(&m, j, j + 1).unwrap();
        assert_eq!((q.alpha, q.a), (1.0, c(-2.0, 0.0)));
        assert_eq!(q.constant, 0.0);
    }
    let q = quad_params(&m, 1, 3).unwrap();
    assert_eq!((q.alpha, q.a), (1.0, c(0.0, 0.0)));
}

#[test]
fn classification_values() {
    let s = classify_pair(1.0, c(-2.0, 0.0)).unwrap();
    assert_eq!(s.kind, PairKind::Saddle);
    assert!((s.lambda_or_nu - 3f64.sqrt()).abs() < 1e-12);
    let f = classify_pair(1.0, c(0.0, 0.0)).unwrap();
    assert_eq!(f.kind, PairKind::Center);
    assert!((f.lambda_or_nu - 1.0).abs() < 1e-12);
    assert_eq!(classify_pair(1.0, Complex64::from_polar(1.0, PI / 7.0)), Err(ChartError::Degenerate));
}

#[test]
fn omega_for_ck_pair() {
    let w = conformal_omega(1.0, c(-2.0, 0.0)).unwrap();
    let w2 = w * w;
    assert!((w2 - c(-0.5, -0.5 * 3f64.sqrt())).norm() < 1e-14);
    assert!((w.norm() - 1.0).abs() < 1e-14);
    assert!((omega_a1(w) - 1.0).abs() < 1e-14);
    assert!(w.re >= 0.0);
    assert_eq!(conformal_omega(1.0, c(0.0, 0.0)), Err(ChartError::NotSaddle));
}

#[test]
fn line_pairs() {
    let d = line_directions(1.0, c(-2.0, 0.0)).unwrap();
    let h = 0.5 * 3f64.sqrt();
    assert!((d[0][0] - 0.5).abs() < 1e-14 && (d[0][1] - h).abs() < 1e-14);
    assert!((d[1][0] + 0.5).abs() < 1e-14 && (d[1][1] - h).abs() < 1e-14);
    // (0, 1): Re c² = 0
    let d = line_directions(0.0, c(1.0, 0.0)).unwrap();
    for v in d {
        let z = c(v[0], v[1]);
        assert!((z * z).re.abs() < 1e-14);
    }
    // a -> -a rotates both lines by π/2
    let a = line_directions(1.0, c(2.0, 0.0)).unwrap();
    let b = line_directions(1.0, c(-2.0, 0.0)).unwrap();
    for v in a {
        let r = [-v[1], v[0]];
        assert!(b.iter().any(|u| (u[0] * r[1] - u[1] * r[0]).abs() < 1e-14));
    }
}

#[test]
fn ck_lines_match_closed_form() {
    let m = LatticeModel::ck(4);
    for j in 1..4 {
        let d = heteroclinic_lines(&m, j).unwrap();
        for v in d {
            // 3x² − y² = 0
            assert!((3.0 * v[0] * v[0] - v[1] * v[1]).abs() < 1e-14);
        }
    }
    let mut a = LatticeModel::ck(3).a.clone();
    a[4] = c(1.5, 0.0);
    let bent = LatticeModel::new(3, a, model::Kind::Hamiltonian).unwrap();
    assert_eq!(heteroclinic_lines(&bent, 1), Err(ChartError::NoStraightLine(1)));
}

#[test]
fn reduced_field_invariants() {
    let m = LatticeModel::ck(3);
    assert_eq!(reduced_field(&m, 1, 2, c(0.0, 0.0)).unwrap(), c(0.0, 0.0));
    assert!(matches!(reduced_field(&m, 1, 2, c(1.1, 0.0)), Err(ChartError::Domain(_))));
    for model in [LatticeModel::ck(3), LatticeModel::ck_dissipative(3)] {
        for i in 0..16 {
            let z = Complex64::from_polar(1.0, 0.4 * i as f64);
            let f = reduced_field(&model, 1, 2, z).unwrap();
            assert!((z.conj() * f).re.abs() < 1e-12);
        }
    }
}

#[test]
fn lines_are_invariant() {
    for model in [LatticeModel::ck(3), LatticeModel::ck_dissipative(3)] {
        for d in heteroclinic_lines(&model, 1).unwrap() {
            for i in 0..50 {
                let s = -0.98 + 1.96 * i as f64 / 49.0;
                let z = c(s * d[0], s * d[1]);
                let f = reduced_field(&model, 1, 2, z).unwrap();
                assert!((d[0] * f.im - d[1] * f.re).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn origin_linearization_matches_classification() {
    let m = LatticeModel::ck(4);
    let h = 1e-6;
    for (k, want) in [(2usize, 3f64.sqrt()), (3, 1.0)] {
        let col = |e: Complex64| (reduced_field(&m, 1, k, e * h).unwrap() - reduced_field(&m, 1, k, -e * h).unwrap()) / (2.0 * h);
        let (cx, cy) = (col(c(1.0, 0.0)), col(c(0.0, 1.0)));
        let tr = cx.re + cy.im;
        let det = cx.re * cy.im - cy.re * cx.im;
        assert!(tr.abs() < 1e-8);
        if k == 2 {
            assert!(((-det).sqrt() - want).abs() < 1e-8);
        } else {
            assert!((det.sqrt() - want).abs() < 1e-8);
        }
    }
}

#[test]
fn circle_maps_to_origin() {
    let m = LatticeModel::ck(4);
    let phi = 0.7;
    let b = vec![Complex64::from_polar(1.0, phi), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
    let s = to_chart(&m, 1, &b).unwrap();
    assert!(s.flat().iter().all(|v| v.abs() < 1e-15));
    assert!((s.theta - phi).abs() < 1e-15);
}

#[test]
fn chart_errors() {
    let m = LatticeModel::ck(3);
    let b = vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)];
    assert!(matches!(to_chart(&m, 1, &b), Err(ChartError::Singular { .. })));
    let b = vec![c(1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0)];
    assert!(matches!(to_chart(&m, 1, &b), Err(ChartError::OffSphere(_))));
}

#[test]
fn round_trip_random_states() {
    let m = LatticeModel::ck(5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut done = 0;
    while done < 100 {
        let b = model::random_sphere_state(5, &mut rng);
        let j = 1 + done % 5;
        if b[j - 1].norm() <= 0.3 {
            continue;
        }
        let s = to_chart(&m, j, &b).unwrap();
        let back = from_chart(&m, &s).unwrap();
        for (u, v) in b.iter().zip(&back) {
            assert!((u - v).norm() < 1e-10);
        }
        done += 1;
    }
}

#[test]
fn outgoing_line_point() {
    let m = LatticeModel::ck(4);
    let sigma = 0.05;
    let chart = Chart::new(&m, 2).unwrap();
    let p = chart.plus.as_ref().unwrap();
    let cp = p.u * sigma;
    let mut b = vec![c(0.0, 0.0); 4];
    b[1] = c((1.0 - cp.norm_sqr()).sqrt(), 0.0);
    b[2] = cp;
    let s = to_chart(&m, 2, &b).unwrap();
    let zp = s.z_plus.unwrap();
    assert!((zp[0] - sigma).abs() < 1e-15 && zp[1].abs() < 1e-15);
    assert!(s.z_minus.unwrap().iter().all(|v| v.abs() < 1e-15));
    assert!(s.c_star.iter().all(|(_, z)| z.norm() < 1e-15));
    // |ωx + ω̄y|² = x² + 2Re(ω²)xy + y² = x² − a₁xy + y²
    let w = conformal_omega(1.0, c(-2.0, 0.0)).unwrap();
    let (x, y) = (0.3, -0.2);
    let z = w * x + w.conj() * y;
    assert!((z.norm_sqr() - (x * x - omega_a1(w) * x * y + y * y)).abs() < 1e-15);
}

#[test]
fn transition_of_outgoing_line() {
    let m = LatticeModel::ck(4);
    for sigma in [0.01, 0.05, 0.1] {
        for j in 1..3 {
            let chart = Chart::new(&m, j).unwrap();
            let mut flat = vec![0.0; chart.dim()];
            flat[chart.plus_idx().unwrap()] = sigma;
            let s = ChartState::from_flat(&chart, &flat, 0.0);
            let t = transition_map(&m, &s).unwrap();
            let zm = t.z_minus.unwrap();
            assert!(zm[0].abs() < 1e-10);
            assert!((zm[1] - (1.0 - sigma * sigma).sqrt()).abs() < 1e-10);
            assert!(t.z_plus.map_or(true, |z| z.iter().all(|v| v.abs() < 1e-15)));
            assert!(t.c_star.iter().all(|(_, z)| z.norm() < 1e-15));
        }
    }
    let chart = Chart::new(&m, 1).unwrap();
    let s = ChartState::from_flat(&chart, &vec![0.0; chart.dim()], 0.0);
    assert_eq!(transition_map(&m, &s), Err(ChartError::TransitionSingular));
}

#[test]
fn transition_jacobian_blocks() {
    let m = LatticeModel::ck(5);
    let (a, b) = (Chart::new(&m, 2).unwrap(), Chart::new(&m, 3).unwrap());
    let mut p = vec![0.0; a.dim()];
    p[a.plus_idx().unwrap()] = 0.05;
    let f = |s: &[f64]| a.transition(&b, s).unwrap().0;
    let jac = fd_jacobian(&f, &p, 1e-5);
    let (src, dst) = (block_names(&a), block_names(&b));
    // allowed: z- -> c(j-1), z+ -> z-, c(j+2) -> z+, far c -> same c
    let allowed = |to: &str, from: &str| match (from, to) {
        ("z-", "c1") | ("z+", "z-") | ("c4", "z+") => true,
        (x, y) => x == y && x.starts_with('c'),
    };
    for (i, row) in jac.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if !allowed(&dst[i], &src[k]) {
                assert!(v.abs() < 1e-7, "{} <- {}: {v}", dst[i], src[k]);
            }
        }
    }
}

#[test]
fn block_diagonal_both_kinds() {
    for m in [LatticeModel::ck(4), LatticeModel::ck_dissipative(4)] {
        for j in 1..=4 {
            let r = block_diagonal_check(&m, j, 10).unwrap();
            assert!(r.pass && r.max_forbidden < 1e-7, "j = {j}: {}", r.max_forbidden);
        }
    }
}

#[test]
fn block_diagonal_negative_control() {
    let m = LatticeModel::ck(3);
    let chart = Chart::new(&m, 2).unwrap();
    let (im, ip) = (chart.minus_idx().unwrap(), chart.plus_idx().unwrap());
    let f = |s: &[f64]| {
        let mut out = vec![0.0; s.len()];
        chart.field(&m, s, &mut out);
        out[im + 1] += 0.01 * s[ip];
        out
    };
    let r = block_diagonal_check_with(&chart, &f, &heteroclinic_samples(&chart, 10), 1e-6);
    assert!(!r.pass && r.max_forbidden > 1e-3);
}

proptest! {
    #[test]
    fn transition_agrees_with_ambient_composition(seed in 0u64..500) {
        let m = LatticeModel::ck(4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = model::random_sphere_state(4, &mut rng);
        prop_assume!(b[1].norm() > 0.2 && b[2].norm() > 0.2);
        let s = to_chart(&m, 2, &b).unwrap();
        let t = transition_map(&m, &s).unwrap();
        let back = from_chart(&m, &t).unwrap();
        for (u, v) in b.iter().zip(&back) {
            prop_assert!((u - v).norm() < 1e-9);
        }
    }

    #[test]
    fn classification_ignores_phase(phi in 0.0f64..6.28, r in 0.0f64..3.0) {
        prop_assume!((r - 1.0).abs() > 1e-3);
        let a = classify_pair(1.0, Complex64::new(r, 0.0)).unwrap();
        let b = classify_pair(1.0, Complex64::from_polar(r, phi)).unwrap();
        prop_assert_eq!(a.kind, b.kind);
        assert_relative_eq!(a.lambda_or_nu, b.lambda_or_nu, max_relative = 1e-12);
    }
}
