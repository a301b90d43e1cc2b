//! High-precision chart dynamics for the shooting search.
//!
//! At the passage times the chain needs, radii of size `e^{−2T}` sit next to
//! O(1) coordinates. Evaluating the chart field in double precision then leaks
//! rounding noise from the large coordinates into the small ones (the split of
//! a complex mode into saddle coordinates cancels). [`HpChart`] redoes the
//! chart with quad-double bases so the invariant lines stay invariant to about
//! 1e-62, and [`solve`] integrates it with a DOPRI5 whose events are located
//! in quad-double time.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::chart::{theta_rate, Chart, ChartError};
use crate::integrate::IntegrateError;
use crate::model::{Kind, LatticeModel};
use crate::qd::Qd;
use crate::scalar::{Cx, Real};

type C = Cx<Qd>;

fn q(x: f64) -> Qd {
    Qd::cst(x)
}

fn cdiv(a: C, b: C) -> C {
    let d = b.norm_sqr();
    let n = a * b.conj();
    Cx::new(n.re / d, n.im / d)
}

fn psqrt(z: C) -> C {
    let r = z.norm_sqr().sqrt();
    if z.re.val() >= 0.0 {
        let re = ((r + z.re) * q(0.5)).sqrt();
        if re.val() == 0.0 {
            return Cx::zero();
        }
        Cx::new(re, z.im / (re * q(2.0)))
    } else {
        let mut im = ((r - z.re) * q(0.5)).sqrt();
        if z.im.val() < 0.0 {
            im = -im;
        }
        Cx::new(z.im / (im * q(2.0)), im)
    }
}

fn inv2(m: [[Qd; 2]; 2]) -> [[Qd; 2]; 2] {
    let d = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

fn linear_coeffs(model: &LatticeModel, j: usize, k: usize) -> (C, C) {
    let mut p = Cx::new(q(0.0), q(model.a(j, j).re));
    if model.kind == Kind::NonHamiltonian && model.c.is_some() {
        p.re = q(model.rho) * (q(model.cmat(j, k)) - q(model.cmat(j, j)));
    }
    let a = model.a(k, j);
    (p, Cx::new(q(a.im), q(-a.re)))
}

#[derive(Clone, Debug)]
pub struct HpSaddle {
    pub k: usize,
    pub u: C,
    pub v: C,
    pub lambda: Qd,
    inv: [[Qd; 2]; 2],
}

impl HpSaddle {
    fn new(model: &LatticeModel, j: usize, k: usize) -> HpSaddle {
        let (p, qq) = linear_coeffs(model, j, k);
        let beta = p.im;
        let lambda = (qq.norm_sqr() - beta * beta).sqrt();
        let u = psqrt(cdiv(qq, Cx::new(lambda, -beta)));
        let v = psqrt(cdiv(qq, Cx::new(-lambda, -beta)));
        let inv = inv2([[u.re, v.re], [u.im, v.im]]);
        HpSaddle { k, u, v, lambda, inv }
    }

    fn compose(&self, x: Qd, y: Qd) -> C {
        Cx::new(x * self.u.re + y * self.v.re, x * self.u.im + y * self.v.im)
    }

    fn split(&self, c: C) -> (Qd, Qd) {
        let m = &self.inv;
        (c.re * m[0][0] + c.im * m[0][1], c.re * m[1][0] + c.im * m[1][1])
    }
}

#[derive(Clone, Debug)]
pub struct HpCenter {
    pub l: usize,
    u: [[Qd; 2]; 2],
    uinv: [[Qd; 2]; 2],
}

impl HpCenter {
    fn new(model: &LatticeModel, j: usize, l: usize) -> HpCenter {
        let (p, qq) = linear_coeffs(model, j, l);
        let beta = p.im;
        let b = [[qq.re, -beta + qq.im], [beta + qq.im, -qq.re]];
        let nu = (b[0][0] * b[1][1] - b[0][1] * b[1][0]).sqrt();
        let sn = if b[1][0].val() >= 0.0 { nu } else { -nu };
        let c2 = [b[0][0] / sn, b[1][0] / sn];
        let f = q(1.0) / c2[1].abs().sqrt();
        let u = [[f, c2[0] * f], [q(0.0), c2[1] * f]];
        HpCenter { l, u, uinv: inv2(u) }
    }

    fn compose(&self, x: Qd, y: Qd) -> C {
        let m = &self.u;
        Cx::new(x * m[0][0] + y * m[0][1], x * m[1][0] + y * m[1][1])
    }

    fn split(&self, c: C) -> (Qd, Qd) {
        let m = &self.uinv;
        (c.re * m[0][0] + c.im * m[0][1], c.re * m[1][0] + c.im * m[1][1])
    }
}

/// Quad-double twin of [`Chart`] with the same flat layout.
#[derive(Clone, Debug)]
pub struct HpChart {
    pub j: usize,
    pub n: usize,
    pub minus: Option<HpSaddle>,
    pub plus: Option<HpSaddle>,
    pub centers: Vec<HpCenter>,
    pub lambda: Qd,
}

impl HpChart {
    pub fn new(model: &LatticeModel, j: usize) -> Result<HpChart, ChartError> {
        // the double chart validates the classification
        let c = Chart::new(model, j)?;
        let minus = c.minus.as_ref().map(|b| HpSaddle::new(model, j, b.k));
        let plus = c.plus.as_ref().map(|b| HpSaddle::new(model, j, b.k));
        let centers = c.centers.iter().map(|m| HpCenter::new(model, j, m.l)).collect();
        let lambda = plus.as_ref().or(minus.as_ref()).map(|b| b.lambda).unwrap();
        Ok(HpChart { j, n: c.n, minus, plus, centers, lambda })
    }

    pub fn dim(&self) -> usize {
        2 * (self.n - 1)
    }

    pub fn modes(&self, s: &[Qd]) -> Vec<C> {
        let mut c = vec![C::zero(); self.n];
        let mut i = 0;
        if let Some(m) = &self.minus {
            c[m.k - 1] = m.compose(s[i], s[i + 1]);
            i += 2;
        }
        if let Some(p) = &self.plus {
            c[p.k - 1] = p.compose(s[i], s[i + 1]);
            i += 2;
        }
        for cm in &self.centers {
            c[cm.l - 1] = cm.compose(s[i], s[i + 1]);
            i += 2;
        }
        c
    }

    pub fn flat(&self, c: &[C]) -> Vec<Qd> {
        let mut s = Vec::with_capacity(self.dim());
        if let Some(m) = &self.minus {
            let (x, y) = m.split(c[m.k - 1]);
            s.extend([x, y]);
        }
        if let Some(p) = &self.plus {
            let (x, y) = p.split(c[p.k - 1]);
            s.extend([x, y]);
        }
        for cm in &self.centers {
            let (x, y) = cm.split(c[cm.l - 1]);
            s.extend([x, y]);
        }
        s
    }

    pub fn radicand(&self, c: &[C]) -> Qd {
        let mut m = q(0.0);
        for (k, z) in c.iter().enumerate() {
            if k + 1 != self.j {
                m += z.norm_sqr();
            }
        }
        q(1.0) - m
    }

    /// Field on `[flat…, θ]`, original time.
    pub fn field(&self, model: &LatticeModel, s: &[Qd], out: &mut [Qd]) {
        let d = self.dim();
        let mut b = self.modes(&s[..d]);
        let r2 = self.radicand(&b);
        b[self.j - 1] = Cx::new(r2.sqrt(), q(0.0));
        let mut f = vec![C::zero(); self.n];
        model.field_into(&b, &mut f);
        let th = theta_rate(model, &b, self.j);
        for k in 0..self.n {
            f[k] = f[k] - b[k].scale(th).mul_i();
        }
        out[..d].copy_from_slice(&self.flat(&f));
        if out.len() > d {
            out[d] = th;
        }
    }

    /// Mode amplitudes with the chart mode restored, phase frame of `b_j`.
    pub fn ambient_modes(&self, s: &[Qd]) -> Vec<C> {
        let mut b = self.modes(&s[..self.dim()]);
        let r2 = self.radicand(&b);
        b[self.j - 1] = Cx::new(r2.sqrt(), q(0.0));
        b
    }

    /// State of chart `j + 1` and the phase shift, θ carried along when present.
    pub fn transition(&self, next: &HpChart, s: &[Qd]) -> Result<Vec<Qd>, ChartError> {
        let d = self.dim();
        let kp = self.plus.as_ref().ok_or(ChartError::TransitionSingular)?.k;
        let c = self.modes(&s[..d]);
        let cp = c[kp - 1];
        let m2 = cp.norm_sqr();
        if !(m2.val() > 1e-300) {
            return Err(ChartError::TransitionSingular);
        }
        let m = m2.sqrt();
        let rj = self.radicand(&c).sqrt();
        let g = Cx::new(cp.re / m, -(cp.im / m));
        let mut nc = vec![C::zero(); self.n];
        for k in 0..self.n {
            if k + 1 == kp {
                continue;
            }
            nc[k] = if k + 1 == self.j { g.scale(rj) } else { c[k] * g };
        }
        let mut out = next.flat(&nc);
        if s.len() > d {
            let shift = cp.im.val().atan2(cp.re.val());
            out.push(s[d] + q(shift));
        }
        Ok(out)
    }

    pub fn to_f64(s: &[Qd]) -> Vec<f64> {
        s.iter().map(|v| v.val()).collect()
    }

    pub fn ambient_f64(&self, s: &[Qd]) -> Vec<Complex64> {
        let th = if s.len() > self.dim() { s[self.dim()].val() } else { 0.0 };
        let ph = Complex64::from_polar(1.0, th);
        self.ambient_modes(s).iter().map(|z| z.to_c() * ph).collect()
    }
}

// Dormand-Prince tableau as exact fractions; f64 literals would cap the
// quad-double steps at double accuracy.
const A: [[(f64, f64); 6]; 6] = [
    [(1.0, 5.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
    [(3.0, 40.0), (9.0, 40.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
    [(44.0, 45.0), (-56.0, 15.0), (32.0, 9.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
    [(19372.0, 6561.0), (-25360.0, 2187.0), (64448.0, 6561.0), (-212.0, 729.0), (0.0, 1.0), (0.0, 1.0)],
    [(9017.0, 3168.0), (-355.0, 33.0), (46732.0, 5247.0), (49.0, 176.0), (-5103.0, 18656.0), (0.0, 1.0)],
    [(35.0, 384.0), (0.0, 1.0), (500.0, 1113.0), (125.0, 192.0), (-2187.0, 6784.0), (11.0, 84.0)],
];
const E: [(f64, f64); 7] = [(71.0, 57600.0), (0.0, 1.0), (-71.0, 16695.0), (71.0, 1920.0), (-17253.0, 339200.0), (22.0, 525.0), (-1.0, 40.0)];

struct Tableau {
    a: [[Qd; 6]; 6],
    e: [Qd; 7],
}

fn tableau() -> &'static Tableau {
    static T: OnceLock<Tableau> = OnceLock::new();
    T.get_or_init(|| {
        let fr = |(p, d): (f64, f64)| q(p) / q(d);
        Tableau { a: A.map(|row| row.map(fr)), e: E.map(fr) }
    })
}

/// Error control: per-component absolute floors, a relative tolerance, and
/// index pairs whose error is measured by the pair's modulus.
#[derive(Clone, Debug)]
pub struct HpOptions {
    pub rtol: f64,
    pub atol: f64,
    pub pairs: Vec<(usize, usize)>,
    pub max_steps: usize,
    pub h_init: f64,
    /// Residual at which event location stops.
    pub event_tol: f64,
}

impl Default for HpOptions {
    fn default() -> Self {
        HpOptions { rtol: 1e-12, atol: 1e-62, pairs: vec![], max_steps: 400_000, h_init: 1e-3, event_tol: 0.0 }
    }
}

fn rk_step<F>(f: &mut F, y: &[Qd], k1: &[Qd], h: Qd) -> (Vec<Qd>, Vec<Qd>, Vec<Qd>)
where
    F: FnMut(&[Qd], &mut [Qd]),
{
    let n = y.len();
    let mut ks: Vec<Vec<Qd>> = vec![k1.to_vec()];
    let tb = tableau();
    let mut tmp = vec![Qd::ZERO; n];
    for (s, row) in tb.a.iter().enumerate() {
        for i in 0..n {
            let mut acc = Qd::ZERO;
            for (r, &a) in row.iter().enumerate().take(s + 1) {
                if a.val() != 0.0 {
                    acc += ks[r][i] * a;
                }
            }
            tmp[i] = y[i] + h * acc;
        }
        let mut k = vec![Qd::ZERO; n];
        f(&tmp, &mut k);
        ks.push(k);
    }
    // row 6 of A is the 5th-order solution, evaluated last (FSAL)
    let y5 = tmp;
    let err: Vec<Qd> = (0..n)
        .map(|i| {
            let mut acc = Qd::ZERO;
            for (r, &e) in tb.e.iter().enumerate() {
                if e.val() != 0.0 {
                    acc += ks[r][i] * e;
                }
            }
            h * acc
        })
        .collect();
    let k7 = ks.pop().unwrap();
    (y5, err, k7)
}

fn err_norm(o: &HpOptions, y: &[Qd], yn: &[Qd], err: &[Qd], floor: &[f64]) -> f64 {
    let n = y.len();
    let mut scale: Vec<f64> = (0..n).map(|i| y[i].val().abs().max(yn[i].val().abs()).max(floor[i])).collect();
    for &(a, b) in &o.pairs {
        let m = (y[a].val().hypot(y[b].val())).max(yn[a].val().hypot(yn[b].val()));
        scale[a] = scale[a].max(m);
        scale[b] = scale[b].max(m);
    }
    let mut s = 0.0;
    for i in 0..n {
        let w = o.atol + o.rtol * scale[i];
        let e = err[i].val() / w;
        s += e * e;
    }
    (s / n as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Crossing {
    Rising,
    Falling,
}

/// Result of [`solve`]: the end state, its time, whether the event fired,
/// and the accepted steps as doubles for plotting.
#[derive(Clone, Debug)]
pub struct HpRun {
    pub t: Qd,
    pub y: Vec<Qd>,
    pub hit: bool,
    pub event_residual: f64,
    pub steps: usize,
    pub samples: Vec<(f64, Vec<f64>)>,
}

/// Integrate from `t = 0` up to `t_max`, or until `event` crosses zero in
/// the given direction, whichever comes first.
pub fn solve<F, G>(mut f: F, y0: &[Qd], t_max: f64, event: Option<(G, Crossing)>, o: &HpOptions) -> Result<HpRun, IntegrateError>
where
    F: FnMut(&[Qd], &mut [Qd]),
    G: Fn(&[Qd]) -> Qd,
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = Qd::ZERO;
    let mut k1 = vec![Qd::ZERO; n];
    f(&y, &mut k1);
    let mut h = o.h_init.min(t_max);
    let mut floor: Vec<f64> = y.iter().map(|v| 1e-8 * v.val().abs()).collect();
    let mut samples = vec![(0.0, HpChart::to_f64(&y))];
    let mut g_prev = event.as_ref().map(|(g, _)| g(&y).val());
    let mut steps = 0;
    let mut last_reject = false;
    while t.val() < t_max {
        if steps >= o.max_steps {
            return Err(IntegrateError::Budget(t.val()));
        }
        let rest = t_max - t.val();
        let last = h >= rest;
        let hq = if last { q(t_max) - t } else { q(h) };
        let (yn, err, k7) = rk_step(&mut f, &y, &k1, hq);
        if yn.iter().any(|v| !v.is_finite()) {
            h *= 0.25;
            if h < 1e-14 {
                return Err(IntegrateError::NonFinite(t.val()));
            }
            continue;
        }
        let e = err_norm(o, &y, &yn, &err, &floor);
        if e <= 1.0 {
            steps += 1;
            if let Some((g, dir)) = &event {
                let gn = g(&yn).val();
                let gp = g_prev.unwrap();
                let crossed = match dir {
                    Crossing::Rising => gp < 0.0 && gn >= 0.0,
                    Crossing::Falling => gp > 0.0 && gn <= 0.0,
                };
                if crossed {
                    let (tau, ye, res) = locate(&mut f, &y, &k1, hq, g, o.event_tol);
                    samples.push(((t + tau).val(), HpChart::to_f64(&ye)));
                    return Ok(HpRun { t: t + tau, y: ye, hit: true, event_residual: res, steps, samples });
                }
                g_prev = Some(gn);
            }
            t = t + hq;
            y = yn;
            k1 = k7;
            for i in 0..n {
                floor[i] = floor[i].max(1e-8 * y[i].val().abs());
            }
            samples.push((t.val(), HpChart::to_f64(&y)));
            if last {
                break;
            }
            let mut fac = 0.9 * e.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, 5.0);
            if last_reject {
                fac = fac.min(1.0);
            }
            last_reject = false;
            h = (hq.val() * fac).min(t_max / 10.0).max(1e-12);
        } else {
            last_reject = true;
            h = hq.val() * (0.9 * e.powf(-0.2)).max(0.2);
            if h < 1e-14 {
                return Err(IntegrateError::Stiff { t: t.val(), h });
            }
        }
    }
    Ok(HpRun { t, y, hit: false, event_residual: f64::NAN, steps, samples })
}

/// Root of `g(step(y, τ))` for `τ ∈ (0, h]` by Illinois iterations in
/// quad-double time; every trial state is a fresh step from `y`.
fn locate<F, G>(f: &mut F, y: &[Qd], k1: &[Qd], h: Qd, g: &G, tol: f64) -> (Qd, Vec<Qd>, f64)
where
    F: FnMut(&[Qd], &mut [Qd]),
    G: Fn(&[Qd]) -> Qd,
{
    let mut a = Qd::ZERO;
    let mut ga = g(y);
    let mut b = h;
    let mut yb = rk_step(f, y, k1, b).0;
    let mut gb = g(&yb);
    let mut side = 0i32;
    for _ in 0..200 {
        if gb.val().abs() <= tol || ga.val() == gb.val() {
            break;
        }
        let c = b - gb * (b - a) / (gb - ga);
        let yc = rk_step(f, y, k1, c).0;
        let gc = g(&yc);
        if (gc.val() < 0.0) == (gb.val() < 0.0) {
            if side == 1 {
                ga = ga * q(0.5);
            }
            side = 1;
        } else {
            a = b;
            ga = gb;
            side = -1;
        }
        b = c;
        yb = yc;
        gb = gc;
        if (b - a).val().abs() <= 1e-60 * h.val() {
            break;
        }
    }
    let res = gb.val().abs();
    (b, yb, res)
}
