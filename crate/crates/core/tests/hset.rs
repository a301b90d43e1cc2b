use hetshadow::hset::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn square(r: f64) -> HSet {
    HSet::new(
        "sq",
        vec![0.0, 0.0],
        vec![Block::new("x", &[0], &["x"], r, BlockNorm::Max)],
        vec![Block::new("y", &[1], &["y"], r, BlockNorm::Max)],
    )
    .unwrap()
}

fn cube(name: &str) -> HSet {
    HSet::new(
        name,
        vec![0.0; 3],
        vec![Block::new("x1", &[0], &["x1"], 1.0, BlockNorm::Max), Block::new("x2", &[1], &["x2"], 1.0, BlockNorm::Max)],
        vec![Block::new("y", &[2], &["y"], 1.0, BlockNorm::Max)],
    )
    .unwrap()
}

fn linear(a: f64, b: f64) -> PointMap<impl Fn(&[f64]) -> Vec<f64> + Sync> {
    PointMap { f: move |p: &[f64]| vec![a * p[0], b * p[1]], from: vec![0.0; 2], to: vec![0.0; 2] }
}

fn cover(f: &dyn CoverMap, n: &HSet, m: &HSet) -> CoveringVerdict {
    check_covering(f, &Domain::from_hset(n), m, GridSpec::default(), JacobianMode::FiniteDifference).unwrap()
}

#[test]
fn three_linear_maps() {
    let s = square(1.0);
    let v = cover(&linear(3.0, 1.0 / 3.0), &s, &s);
    assert!(v.pass && v.w == 1, "{:?}", v.failures);
    assert!((v.exit_margin - 2.0).abs() < 1e-9);
    assert!((v.entry_margin - 2.0 / 3.0).abs() < 1e-9);

    let v = cover(&linear(0.5, 1.0 / 3.0), &s, &s);
    assert!(!v.pass);
    assert!(v.exit_margin < 0.0);
    assert!(v.failures.iter().any(|f| f.contains("exit")));

    let v = cover(&linear(-3.0, 1.0 / 3.0), &s, &s);
    assert!(v.pass && v.w == -1);
    assert!(v.exit_dets[0] < 0.0);
}

#[test]
fn singular_exit_block() {
    let s = square(1.0);
    let r = check_covering(&linear(0.0, 0.5), &Domain::from_hset(&s), &s, GridSpec::default(), JacobianMode::FiniteDifference);
    assert!(matches!(r, Err(HSetError::DegreeUndefined(0, _))));
}

#[test]
fn membership_examples() {
    let h = cube("h");
    assert_eq!(h.u(), 2);
    assert_eq!(h.s(), 1);
    assert_eq!(h.membership(&[0.0; 3]).unwrap(), Membership::Interior);
    assert_eq!(h.membership(&[1.0, 0.2, 0.3]).unwrap(), Membership::Boundary(Side::Exit));
    assert_eq!(h.membership(&[0.1, 0.2, -1.0]).unwrap(), Membership::Boundary(Side::Entry));
    assert_eq!(h.membership(&[1.0, 0.0, 1.0]).unwrap(), Membership::Boundary(Side::Exit));
    assert_eq!(h.membership(&[0.0, 1.1, 0.0]).unwrap(), Membership::Outside);
    assert!(matches!(h.membership(&[0.0; 2]), Err(HSetError::Dimension(_))));

    let c = contract(&h, "x2", &[0.0]).unwrap();
    assert_eq!(c.u(), 1);
    assert_eq!(c.membership(&[0.3, 0.0, 0.2]).unwrap(), Membership::Interior);
    assert_eq!(c.membership(&[0.3, 0.1, 0.2]).unwrap(), Membership::Outside);
    assert_eq!(Domain::from_contracted(&c).exit.len(), 1);
}

#[test]
fn membership_with_center_and_radii() {
    let h = HSet::new(
        "off",
        vec![1.0, -2.0],
        vec![Block::new("x", &[0], &["x"], 1e-3, BlockNorm::Max)],
        vec![Block::new("y", &[1], &["y"], 1e-6, BlockNorm::Max)],
    )
    .unwrap();
    assert_eq!(h.membership(&[1.0005, -2.0]).unwrap(), Membership::Interior);
    assert_eq!(h.membership(&[1.0, -2.0 + 2e-6]).unwrap(), Membership::Outside);
    assert_eq!(h.membership_offset(&[-1e-3, 0.0]).unwrap(), Membership::Boundary(Side::Exit));
}

#[test]
fn contract_errors() {
    let h = cube("h");
    assert!(matches!(contract(&h, "y", &[0.0]), Err(HSetError::ContractEntry(_))));
    assert!(matches!(contract(&h, "x1", &[1.5]), Err(HSetError::OutOfBall(_))));
    assert!(matches!(contract(&h, "nope", &[0.0]), Err(HSetError::UnknownBlock(_))));
    assert!(matches!(contract(&h, "x1", &[0.0, 0.0]), Err(HSetError::Dimension(_))));
    let e = HSet::new(
        "e",
        vec![0.0; 3],
        vec![Block::new("x", &[0, 1], &["a", "b"], 1.0, BlockNorm::Euclid)],
        vec![Block::new("y", &[2], &["y"], 1.0, BlockNorm::Max)],
    )
    .unwrap();
    assert!(matches!(contract(&e, "b", &[0.0]), Err(HSetError::PartialEuclid(_))));
    assert!(contract(&e, "x", &[0.6, 0.8]).is_ok());
}

#[test]
fn invalid_sets_rejected() {
    let b = |c: &[usize], r| Block::new("b", c, &vec!["l"; c.len()], r, BlockNorm::Max);
    assert!(HSet::new("a", vec![0.0; 2], vec![b(&[0], 1.0)], vec![]).is_err());
    assert!(HSet::new("a", vec![0.0; 2], vec![b(&[0], 1.0)], vec![b(&[0], 1.0)]).is_err());
    assert!(HSet::new("a", vec![0.0; 2], vec![b(&[0], 0.0)], vec![b(&[1], 1.0)]).is_err());
}

#[test]
fn slice_containment_on_random_points() {
    let h = HSet::new(
        "h",
        vec![0.5, -0.5, 2.0, 0.0],
        vec![Block::new("x", &[0, 1], &["x1", "x2"], 0.3, BlockNorm::Max), Block::new("z", &[2], &["z"], 0.1, BlockNorm::Max)],
        vec![Block::new("y", &[3], &["y"], 0.2, BlockNorm::Max)],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut interior = 0;
    for _ in 0..1000 {
        let v = [rng.gen_range(-1.0..=1.0)];
        let c = contract(&h, "x2", &v).unwrap();
        let mut q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.2..1.2)).collect();
        if rng.gen_bool(0.5) {
            q[1] = v[0];
        }
        let p: Vec<f64> = h.offset_of(&q).iter().zip(&h.center).map(|(o, c)| o + c).collect();
        let m = c.membership(&p).unwrap();
        if m == Membership::Interior {
            interior += 1;
            assert!(matches!(h.membership(&p).unwrap(), Membership::Interior | Membership::Boundary(Side::Exit)));
        }
        if (q[1] - v[0]).abs() > 1e-9 {
            assert_eq!(m, Membership::Outside);
        }
    }
    assert!(interior > 50);
}

#[test]
fn two_link_chain_with_contraction() {
    let a = cube("A");
    let b = cube("B");
    let c = HSet::new(
        "C",
        vec![0.0; 3],
        vec![Block::new("x1", &[0], &["x1"], 1.0, BlockNorm::Max)],
        vec![Block::new("x2", &[1], &["x2"], 1.0, BlockNorm::Max), Block::new("y", &[2], &["y"], 1.0, BlockNorm::Max)],
    )
    .unwrap();
    let f1 = PointMap { f: |p: &[f64]| vec![3.0 * p[0], 2.0 * p[1], p[2] / 3.0], from: vec![0.0; 3], to: vec![0.0; 3] };
    let f2 = PointMap { f: |p: &[f64]| vec![-2.5 * p[0], p[1] / 2.0, 0.1 * p[0] + p[2] / 4.0], from: vec![0.0; 3], to: vec![0.0; 3] };
    let cb = contract(&b, "x2", &[0.0]).unwrap();
    let links = vec![
        Link { name: "A->B".into(), domain: Domain::from_hset(&a), map: &f1, target: b.clone() },
        Link { name: "RB->C".into(), domain: Domain::from_contracted(&cb), map: &f2, target: c.clone() },
    ];
    let v = check_chain(&links, GridSpec::default()).unwrap();
    assert!(v.pass, "{:?}", v.links.iter().map(|l| l.verdict.as_ref().map(|v| v.failures.clone())).collect::<Vec<_>>());
    assert_eq!(v.links[1].verdict.as_ref().unwrap().w, -1);
    let js: ChainVerdict = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
    assert!(js.pass && js.links.len() == 2);

    // the uncontracted B has two exit blocks, C only one
    let bad = vec![
        Link { name: "A->B".into(), domain: Domain::from_hset(&a), map: &f1, target: b.clone() },
        Link { name: "B->C".into(), domain: Domain::from_hset(&b), map: &f2, target: c.clone() },
    ];
    assert!(matches!(check_chain(&bad, GridSpec::default()), Err(HSetError::Shape(_))));
    let gap = vec![
        Link { name: "A->B".into(), domain: Domain::from_hset(&a), map: &f1, target: b.clone() },
        Link { name: "RA->C".into(), domain: Domain::from_contracted(&contract(&a, "x2", &[0.0]).unwrap()), map: &f2, target: c },
    ];
    assert!(matches!(check_chain(&gap, GridSpec::default()), Err(HSetError::Shape(_))));
}

#[test]
fn failing_link_is_pinpointed() {
    let s = square(1.0);
    let good = linear(3.0, 0.2);
    let weak = linear(1.5, 2.0);
    let links = vec![
        Link { name: "first".into(), domain: Domain::from_hset(&s), map: &good, target: s.clone() },
        Link { name: "second".into(), domain: Domain::from_hset(&s), map: &weak, target: s.clone() },
        Link { name: "third".into(), domain: Domain::from_hset(&s), map: &good, target: s.clone() },
    ];
    let v = check_chain(&links, GridSpec::default()).unwrap();
    assert!(!v.pass);
    assert_eq!(v.first_failure, Some(1));
    assert!(v.links[1].verdict.as_ref().unwrap().failures.iter().any(|f| f.contains("entry")));
    assert!(v.links[2].pass());
}

#[test]
fn empty_chain_passes() {
    let v = check_chain(&[], GridSpec::default()).unwrap();
    assert!(v.pass && v.links.is_empty() && v.first_failure.is_none());
}

#[test]
fn hset_json_round_trip() {
    let h = cube("h");
    let back: HSet = serde_json::from_str(&h.to_json()).unwrap();
    assert_eq!(back, h);
    let v = cover(&linear(3.0, 0.3), &square(1.0), &square(1.0));
    let s = serde_json::to_string(&v).unwrap();
    assert!(s.contains("\"w\":1"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn linear_hyperbolic_always_covers(a in 1.05f64..10.0, b in 0.0f64..0.95, neg in any::<bool>(), face in 2usize..6, inner in 2usize..5) {
        let a = if neg { -a } else { a };
        let s = square(1.0);
        let v = check_covering(&linear(a, b), &Domain::from_hset(&s), &s, GridSpec { face, interior: inner }, JacobianMode::FiniteDifference).unwrap();
        prop_assert!(v.pass);
        prop_assert_eq!(v.w, if neg { -1 } else { 1 });
    }

    #[test]
    fn rescaling_invariance(r in 1e-6f64..1e3, a in 0.5f64..4.0, b in 0.1f64..1.5, q in -0.3f64..0.3) {
        // f(x, y) = (a x + q y², b y + q x²) conjugated by the radius scaling
        let f = move |p: &[f64]| vec![a * p[0] + q * p[1] * p[1], b * p[1] + q * p[0] * p[0]];
        let g = move |p: &[f64]| { let u = f(&[p[0] / r, p[1] / r]); vec![r * u[0], r * u[1]] };
        let v1 = cover(&PointMap { f, from: vec![0.0; 2], to: vec![0.0; 2] }, &square(1.0), &square(1.0));
        let v2 = cover(&PointMap { f: g, from: vec![0.0; 2], to: vec![0.0; 2] }, &square(r), &square(r));
        prop_assert_eq!(v1.pass, v2.pass);
        prop_assert_eq!(v1.w, v2.w);
        prop_assert!((v1.entry_margin - v2.entry_margin).abs() < 1e-6);
        prop_assert!((v1.exit_margin - v2.exit_margin).abs() < 1e-6);
    }
}
