use hetshadow::chart::Chart;
use hetshadow::hp::*;
use hetshadow::model::LatticeModel;
use hetshadow::qd::Qd;
use hetshadow::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn qv(v: &[f64]) -> Vec<Qd> {
    v.iter().map(|&x| Qd::cst(x)).collect()
}

fn small_state(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-0.2..0.2)).collect()
}

#[test]
fn field_matches_double_chart() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in [LatticeModel::ck(4), LatticeModel::ck_dissipative(4)] {
        for j in 1..=4 {
            let c = Chart::new(&m, j).unwrap();
            let h = HpChart::new(&m, j).unwrap();
            assert_eq!(h.dim(), c.dim());
            for _ in 0..20 {
                let s = small_state(c.dim(), &mut rng);
                let mut a = vec![0.0; c.dim()];
                c.field(&m, &s, &mut a);
                let mut b = vec![Qd::cst(0.0); c.dim()];
                h.field(&m, &qv(&s), &mut b);
                for (x, y) in a.iter().zip(HpChart::to_f64(&b)) {
                    assert!((x - y).abs() < 1e-13, "chart {j}: {x} vs {y}");
                }
            }
        }
    }
}

#[test]
fn transition_matches_double_chart() {
    let m = LatticeModel::ck(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for j in 1..4 {
        let (c, cn) = (Chart::new(&m, j).unwrap(), Chart::new(&m, j + 1).unwrap());
        let (h, hn) = (HpChart::new(&m, j).unwrap(), HpChart::new(&m, j + 1).unwrap());
        for _ in 0..20 {
            let mut s = small_state(c.dim(), &mut rng);
            s[c.plus_idx().unwrap()] += 0.3;
            let (a, _) = c.transition(&cn, &s).unwrap();
            let b = HpChart::to_f64(&h.transition(&hn, &qv(&s)).unwrap());
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn quad_solver_beats_double_precision() {
    // y' = y from 1 to t = 1
    let o = HpOptions { rtol: 1e-22, ..Default::default() };
    let r = solve(|y: &[Qd], out: &mut [Qd]| out[0] = y[0], &[Qd::cst(1.0)], 1.0, None::<(fn(&[Qd]) -> Qd, Crossing)>, &o).unwrap();
    let e = Qd([2.718281828459045, 1.4456468917292502e-16, -2.1277171080381768e-33, 1.515630159841219e-49]);
    assert!(!r.hit);
    assert!((r.y[0] - e).val().abs() < 1e-21);
}

#[test]
fn quad_event_location() {
    let o = HpOptions { rtol: 1e-22, event_tol: 1e-26, ..Default::default() };
    let g = |y: &[Qd]| y[0] - Qd::cst(2.0);
    let r = solve(|y: &[Qd], out: &mut [Qd]| out[0] = y[0], &[Qd::cst(1.0)], 5.0, Some((g, Crossing::Rising)), &o).unwrap();
    assert!(r.hit);
    assert!((r.t - Qd([0.6931471805599453, 2.3190468138462996e-17, 5.707708438416212e-34, -3.5824322106018114e-50])).val().abs() < 1e-21);
}
