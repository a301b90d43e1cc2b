//! Dormand–Prince 5(4) with dense output, events and conservation monitors.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, Kind, LatticeModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    Stiff { t: f64, h: f64 },
    #[error("state left the safety ball at t = {t} (|y| = {norm})")]
    Divergence { t: f64, norm: f64 },
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("step budget exhausted at t = {0}")]
    Budget(f64),
    #[error("no crossing before t = {0}")]
    NotFound(f64),
    #[error("invalid options: {0}")]
    Options(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Options {
    pub rtol: f64,
    pub atol: f64,
    /// Per-component absolute tolerances; overrides `atol` when present.
    /// This is how block scaling enters: components that live at `e^{−2T}` get
    /// tolerances at that scale, which is the same as integrating the exactly
    /// rescaled system.
    pub atol_vec: Option<Vec<f64>>,
    /// Measure errors of consecutive pairs by complex modulus.
    pub pair_norm: bool,
    pub safety_radius: f64,
    pub h_init: Option<f64>,
    pub max_steps: usize,
    pub dense: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options { rtol: 1e-10, atol: 1e-12, atol_vec: None, pair_norm: false, safety_radius: 10.0, h_init: None, max_steps: 2_000_000, dense: true }
    }
}

impl Options {
    pub fn tol(rtol: f64, atol: f64) -> Self {
        Options { rtol, atol, ..Default::default() }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evals: usize,
    pub scale: Option<Vec<f64>>,
    pub mass_drift: Option<f64>,
    pub energy_drift: Option<f64>,
}

#[derive(Clone, Debug)]
struct Segment {
    t: f64,
    h: f64,
    rc: [Vec<f64>; 5],
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: Stats,
    segs: Vec<Segment>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    /// Dense-output value at `t` inside the integrated span.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        if self.segs.is_empty() {
            return self.states[0].clone();
        }
        let fwd = self.segs[0].h > 0.0;
        let i = self
            .segs
            .partition_point(|s| if fwd { s.t + s.h < t } else { s.t + s.h > t })
            .min(self.segs.len() - 1);
        interp(&self.segs[i], t)
    }
}

fn interp(s: &Segment, t: f64) -> Vec<f64> {
    let th = (t - s.t) / s.h;
    let th1 = 1.0 - th;
    let [r1, r2, r3, r4, r5] = &s.rc;
    (0..r1.len()).map(|i| r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])))).collect()
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

pub enum Control {
    Continue,
    Stop,
}

/// Core loop. `on_step(t_old, t_new, y_new, segment)` is called after every
/// accepted step and may stop the integration.
fn run<F, S>(mut f: F, y0: &[f64], t0: f64, t1: f64, opts: &Options, mut on_step: S) -> Result<Trajectory, IntegrateError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: FnMut(&Segment, &[f64]) -> Control,
{
    let n = y0.len();
    if !(opts.rtol > 0.0) || !(opts.atol > 0.0 || opts.atol_vec.is_some()) {
        return Err(IntegrateError::Options("rtol and atol must be positive".into()));
    }
    if let Some(v) = &opts.atol_vec {
        if v.len() != n || v.iter().any(|&a| !(a > 0.0)) {
            return Err(IntegrateError::Options("atol_vec must be positive with state length".into()));
        }
    }
    let mut stats = Stats { scale: opts.atol_vec.clone(), ..Default::default() };
    let mut traj = Trajectory { times: vec![t0], states: vec![y0.to_vec()], stats: Stats::default(), segs: vec![] };
    let span = t1 - t0;
    if span == 0.0 {
        traj.stats = stats;
        return Ok(traj);
    }
    let dir = span.signum();
    let h_min = 1e-14 * span.abs();
    let h_max = span.abs() / 10.0;
    let atol = |i: usize| opts.atol_vec.as_ref().map_or(opts.atol, |v| v[i]);

    let err_norm = |y: &[f64], yn: &[f64], e: &[f64]| -> f64 {
        let mut acc = 0.0;
        if opts.pair_norm {
            for i in (0..n).step_by(2) {
                let m0 = (y[i] * y[i] + y[i + 1] * y[i + 1]).sqrt();
                let m1 = (yn[i] * yn[i] + yn[i + 1] * yn[i + 1]).sqrt();
                let sc = atol(i) + opts.rtol * m0.max(m1);
                acc += (e[i] / sc).powi(2) + (e[i + 1] / sc).powi(2);
            }
        } else {
            for i in 0..n {
                let sc = atol(i) + opts.rtol * y[i].abs().max(yn[i].abs());
                acc += (e[i] / sc).powi(2);
            }
        }
        (acc / n as f64).sqrt()
    };

    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k1 = vec![0.0; n];
    f(t, &y, &mut k1);
    stats.evals += 1;
    let mut h = match opts.h_init {
        Some(h) => h.abs().min(h_max),
        None => {
            let sc: Vec<f64> = (0..n).map(|i| atol(i) + opts.rtol * y[i].abs()).collect();
            let d0 = (y.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt();
            let d1 = (k1.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt();
            let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
            h0.min(h_max).max(h_min * 10.0)
        }
    };
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut yt = vec![0.0; n];
    let mut yn = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut last_reject = false;
    loop {
        let remaining = (t1 - t) * dir;
        if remaining <= 1e-15 * span.abs() {
            break;
        }
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(IntegrateError::Budget(t));
        }
        let mut hs = h.min(remaining);
        if remaining - hs < 1e-3 * hs {
            hs = remaining;
        }
        let hh = dir * hs;
        for i in 0..n {
            yt[i] = y[i] + hh * A21 * k1[i];
        }
        f(t + C2 * hh, &yt, &mut k2);
        for i in 0..n {
            yt[i] = y[i] + hh * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * hh, &yt, &mut k3);
        for i in 0..n {
            yt[i] = y[i] + hh * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * hh, &yt, &mut k4);
        for i in 0..n {
            yt[i] = y[i] + hh * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * hh, &yt, &mut k5);
        for i in 0..n {
            yt[i] = y[i] + hh * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + hh, &yt, &mut k6);
        for i in 0..n {
            yn[i] = y[i] + hh * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + hh, &yn, &mut k7);
        stats.evals += 6;
        for i in 0..n {
            e[i] = hh * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let err = err_norm(&y, &yn, &e);
        if !err.is_finite() {
            if hs <= h_min {
                return Err(IntegrateError::NonFinite(t));
            }
            h = hs * 0.1;
            stats.rejected += 1;
            last_reject = true;
            continue;
        }
        if err <= 1.0 {
            let tn = t + hh;
            let seg = if opts.dense {
                let rc2: Vec<f64> = (0..n).map(|i| yn[i] - y[i]).collect();
                let rc3: Vec<f64> = (0..n).map(|i| hh * k1[i] - rc2[i]).collect();
                let rc4: Vec<f64> = (0..n).map(|i| rc2[i] - hh * k7[i] - rc3[i]).collect();
                let rc5: Vec<f64> = (0..n)
                    .map(|i| hh * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]))
                    .collect();
                Segment { t, h: hh, rc: [y.clone(), rc2, rc3, rc4, rc5] }
            } else {
                Segment { t, h: hh, rc: [y.clone(), vec![], vec![], vec![], vec![]] }
            };
            let norm = yn.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(IntegrateError::NonFinite(tn));
            }
            if norm > opts.safety_radius {
                return Err(IntegrateError::Divergence { t: tn, norm });
            }
            std::mem::swap(&mut y, &mut yn);
            std::mem::swap(&mut k1, &mut k7);
            t = tn;
            stats.accepted += 1;
            traj.times.push(t);
            traj.states.push(y.clone());
            let ctl = on_step(&seg, &y);
            if opts.dense {
                traj.segs.push(seg);
            }
            if let Control::Stop = ctl {
                break;
            }
            let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, 5.0);
            if last_reject {
                fac = fac.min(1.0);
            }
            last_reject = false;
            h = (hs * fac).min(h_max);
        } else {
            stats.rejected += 1;
            last_reject = true;
            h = hs * (0.9 * err.powf(-0.2)).max(0.2);
            if h < h_min {
                return Err(IntegrateError::Stiff { t, h });
            }
        }
    }
    traj.stats = stats;
    Ok(traj)
}

/// Integrate `ẏ = f(t, y)` from `t0` to `t1` (either direction).
pub fn integrate<F>(f: F, y0: &[f64], t0: f64, t1: f64, opts: &Options) -> Result<Trajectory, IntegrateError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    run(f, y0, t0, t1, opts, |_, _| Control::Continue)
}

pub fn flow_map<F>(f: F, y0: &[f64], t: f64, opts: &Options) -> Result<Vec<f64>, IntegrateError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let o = Options { dense: false, ..opts.clone() };
    Ok(integrate(f, y0, 0.0, t, &o)?.last().to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Rising,
    Falling,
    Either,
}

/// First zero of `g(y)` along the orbit of `y0` within `[t0, t_max]`.
///
/// The crossing is located by bisection on the dense interpolant of the step
/// where the sign change happens.
pub fn event_crossing<F, G>(f: F, y0: &[f64], t0: f64, t_max: f64, g: G, dir: Direction, opts: &Options) -> Result<(f64, Vec<f64>), IntegrateError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    G: Fn(&[f64]) -> f64,
{
    let o = Options { dense: true, ..opts.clone() };
    let mut g_prev = g(y0);
    let mut hit: Option<(f64, Vec<f64>)> = None;
    let hits = |a: f64, b: f64| match dir {
        Direction::Rising => a < 0.0 && b >= 0.0,
        Direction::Falling => a > 0.0 && b <= 0.0,
        Direction::Either => (a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0),
    };
    run(f, y0, t0, t_max, &o, |seg, y| {
        let gn = g(y);
        if hits(g_prev, gn) {
            let (mut lo, mut hi) = (seg.t, seg.t + seg.h);
            let mut glo = g_prev;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                let gm = g(&interp(seg, mid));
                if (gm < 0.0) == (glo < 0.0) && gm != 0.0 {
                    lo = mid;
                    glo = gm;
                } else {
                    hi = mid;
                }
            }
            let ylo = interp(seg, lo);
            let yhi = interp(seg, hi);
            let (ts, ys) = if g(&ylo).abs() <= g(&yhi).abs() { (lo, ylo) } else { (hi, yhi) };
            hit = Some((ts, ys));
            return Control::Stop;
        }
        g_prev = gn;
        Control::Continue
    })?;
    hit.ok_or(IntegrateError::NotFound(t_max))
}

/// Ambient field on interleaved `[Re b_1, Im b_1, …]`.
pub fn ambient_field(model: &LatticeModel) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
    move |_t, y, out| {
        let b = model::from_flat(y);
        let f = model.eval_unchecked(&b);
        for (i, z) in f.iter().enumerate() {
            out[2 * i] = z.re;
            out[2 * i + 1] = z.im;
        }
    }
}

/// Integrate the lattice itself, recording mass and (Hamiltonian) energy drift.
pub fn integrate_model(model: &LatticeModel, b0: &[Complex64], t0: f64, t1: f64, rtol: f64, atol: f64) -> Result<Trajectory, IntegrateError> {
    let opts = Options { rtol, atol, pair_norm: true, ..Default::default() };
    let mut tr = integrate(ambient_field(model), &model::to_flat(b0), t0, t1, &opts)?;
    let m0 = model::mass(b0);
    let h0 = model.energy(b0);
    let mut dm: f64 = 0.0;
    let mut de: f64 = 0.0;
    for y in &tr.states {
        let b = model::from_flat(y);
        dm = dm.max((model::mass(&b) - m0).abs());
        de = de.max((model.energy(&b) - h0).abs());
    }
    tr.stats.mass_drift = Some(dm);
    tr.stats.energy_drift = if model.kind == Kind::Hamiltonian { Some(de) } else { None };
    Ok(tr)
}

/// CSV rows `t, Re b_1, Im b_1, …, M, H`.
pub fn trajectory_csv(model: &LatticeModel, tr: &Trajectory) -> String {
    let n = model.n;
    let mut s = String::from("t");
    for l in 1..=n {
        s.push_str(&format!(",re_b{l},im_b{l}"));
    }
    s.push_str(",M,H\n");
    for (t, y) in tr.times.iter().zip(&tr.states) {
        let b = model::from_flat(y);
        s.push_str(&format!("{t:.12e}"));
        for v in y {
            s.push_str(&format!(",{v:.12e}"));
        }
        s.push_str(&format!(",{:.12e},{:.12e}\n", model::mass(&b), model.energy(&b)));
    }
    s
}
