//! Monomial calculus for resonant normal forms and numerical checks of the
//! saddle-passage enclosures on synthetic systems.
//!
//! Time is normalized so that the saddle rates are ±1.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{self, IntegrateError, Options};

#[derive(Debug, Error)]
pub enum EnclosureError {
    #[error("monomial {m:?} is not resonant for {v:?}")]
    NotResonant { v: SaddleVar, m: MonomialIndex },
    #[error("monomial {0:?} is in neither M1 nor M2")]
    WrongClass(MonomialIndex),
    #[error("forcing rate equals the linear rate {0}")]
    DegenerateForcing(f64),
    #[error("max_degree {0} exceeds 9")]
    Degree(u32),
    #[error("bad parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SaddleVar {
    Xm,
    Ym,
    Xp,
    Yp,
}

impl SaddleVar {
    pub const ALL: [SaddleVar; 4] = [SaddleVar::Xm, SaddleVar::Ym, SaddleVar::Xp, SaddleVar::Yp];

    pub fn rate(self) -> i32 {
        match self {
            SaddleVar::Xm | SaddleVar::Xp => 1,
            SaddleVar::Ym | SaddleVar::Yp => -1,
        }
    }

    /// Exponent `d(v)` of `e^{−T}` in the tube width of `v`.
    pub fn d(self) -> i32 {
        match self {
            SaddleVar::Xm => 2,
            SaddleVar::Ym => 0,
            SaddleVar::Xp | SaddleVar::Yp => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SaddleVar::Xm => "x-",
            SaddleVar::Ym => "y-",
            SaddleVar::Xp => "x+",
            SaddleVar::Yp => "y+",
        }
    }

    fn idx(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct MonomialIndex {
    pub m_xm: u32,
    pub m_ym: u32,
    pub m_xp: u32,
    pub m_yp: u32,
    pub m_c: u32,
}

impl MonomialIndex {
    pub const fn new(m_xm: u32, m_ym: u32, m_xp: u32, m_yp: u32, m_c: u32) -> Self {
        MonomialIndex { m_xm, m_ym, m_xp, m_yp, m_c }
    }

    pub fn saddle_degree(&self) -> u32 {
        self.m_xm + self.m_ym + self.m_xp + self.m_yp
    }

    pub fn degree(&self) -> u32 {
        self.saddle_degree() + self.m_c
    }

    pub fn class(&self) -> Option<MonoClass> {
        let ms = self.saddle_degree();
        if ms >= 3 && self.m_c == 0 {
            Some(MonoClass::M1)
        } else if ms == 1 && self.m_c >= 3 {
            Some(MonoClass::M2)
        } else {
            None
        }
    }

    /// `x₋^a y₋^b x₊^c y₊^d` with `x₋` written first.
    pub fn label(&self) -> String {
        let mut s = String::new();
        for (e, n) in [(self.m_xm, "x-"), (self.m_ym, "y-"), (self.m_xp, "x+"), (self.m_yp, "y+"), (self.m_c, "c")] {
            match e {
                0 => {}
                1 => s.push_str(n),
                _ => s.push_str(&format!("{n}^{e}")),
            }
        }
        if s.is_empty() {
            s.push('1');
        }
        s
    }

    /// Value at `(x₋, y₋, x₊, y₊)` with center factor `cr`.
    pub fn eval(&self, z: &[f64; 4], cr: f64) -> f64 {
        z[0].powi(self.m_xm as i32) * z[1].powi(self.m_ym as i32) * z[2].powi(self.m_xp as i32) * z[3].powi(self.m_yp as i32) * cr.powi(self.m_c as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonoClass {
    M1,
    M2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonoConstants {
    pub lambda: i32,
    pub kappa: i32,
    pub theta: i32,
    pub s: i32,
}

pub fn monomial_constants(m: &MonomialIndex, k: u32, k_c: u32) -> MonoConstants {
    let (a, b, c, d, e) = (m.m_xm as i32, m.m_ym as i32, m.m_xp as i32, m.m_yp as i32, m.m_c as i32);
    MonoConstants {
        lambda: a - b + c - d,
        kappa: e + 2 * a + c + d,
        theta: c + b + d,
        s: k as i32 * a + d + k_c as i32 * e,
    }
}

pub fn is_resonant(m: &MonomialIndex, v: SaddleVar) -> bool {
    monomial_constants(m, 0, 0).lambda == v.rate()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Suitability {
    Unsuitable,
    PotentiallySuitable,
    VerySuitable,
}

/// Tube parameters; the horizon is also the passage time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WTubeParams {
    pub t: f64,
    pub sigma: f64,
    pub k_bound: f64,
    pub k: u32,
    pub k_c: u32,
    pub q_yplus: f64,
    pub a: f64,
}

impl WTubeParams {
    pub fn new(t: f64, sigma: f64, k_bound: f64, k: u32, k_c: u32) -> Result<Self, EnclosureError> {
        if !(t >= 1.0) || !(sigma > 0.0) || !(k_bound > 0.0) {
            return Err(EnclosureError::Params(format!("need T >= 1, sigma > 0, K > 0 (got {t}, {sigma}, {k_bound})")));
        }
        Ok(WTubeParams { t, sigma, k_bound, k, k_c, q_yplus: 1.0, a: 3.0 })
    }
}

/// `a(v, m)`: the power of `e^{−T}` the monomial contributes after integration.
pub fn a_exponent(v: SaddleVar, m: &MonomialIndex) -> i32 {
    let c = monomial_constants(m, 0, 0);
    if c.lambda > v.rate() {
        c.kappa - c.lambda + v.rate()
    } else {
        c.kappa
    }
}

pub fn suitability(v: SaddleVar, m: &MonomialIndex, _params: &WTubeParams) -> Result<Suitability, EnclosureError> {
    if !is_resonant(m, v) {
        return Err(EnclosureError::NotResonant { v, m: *m });
    }
    let a = a_exponent(v, m);
    Ok(match a.cmp(&v.d()) {
        std::cmp::Ordering::Greater => Suitability::VerySuitable,
        std::cmp::Ordering::Equal => Suitability::PotentiallySuitable,
        std::cmp::Ordering::Less => Suitability::Unsuitable,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassRow {
    pub v: SaddleVar,
    pub m: MonomialIndex,
    pub label: String,
    pub class: MonoClass,
    pub a: i32,
    pub suitability: Suitability,
}

/// Every resonant monomial for `v` in `M₁ ∪ M₂` up to `max_degree`.
pub fn enumerate_and_classify(max_degree: u32, v: SaddleVar, params: &WTubeParams) -> Result<Vec<ClassRow>, EnclosureError> {
    if max_degree > 9 {
        return Err(EnclosureError::Degree(max_degree));
    }
    let mut rows = vec![];
    let d = max_degree;
    for a in 0..=d {
        for b in 0..=d - a {
            for c in 0..=d - a - b {
                for e in 0..=d - a - b - c {
                    for mc in 0..=d - a - b - c - e {
                        let m = MonomialIndex::new(a, b, c, e, mc);
                        let Some(class) = m.class() else { continue };
                        if !is_resonant(&m, v) {
                            continue;
                        }
                        let s = suitability(v, &m, params)?;
                        rows.push(ClassRow { v, m, label: m.label(), class, a: a_exponent(v, &m), suitability: s });
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Coefficient `c(T)` with `E_y(t) = t e^{λt} c(T)`.
pub fn enclosure_bound(lambda: f64, d: f64, forcing: &[(f64, f64)], t: f64) -> Result<f64, EnclosureError> {
    let mut c = d;
    for &(li, di) in forcing {
        if li == lambda {
            return Err(EnclosureError::DegenerateForcing(li));
        }
        c += if li < lambda { di } else { di * ((li - lambda) * t).exp() };
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForcingMode {
    Plus,
    Minus,
    Switching,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OdeEnclosureReport {
    pub worst_ratio: f64,
    pub contained: bool,
    pub runs: usize,
}

/// Integrates `ẏ = λy + s₀(t) D e^{λt} + Σ sᵢ(t) Dᵢ e^{λᵢ t}` with `|sᵢ| ≤ 1` and
/// compares `|y − e^{λt}y(0)|` with `E_y(t)`.
pub fn verify_ode_enclosure(lambda: f64, d: f64, forcing: &[(f64, f64)], t: f64, ics: &[f64], modes: &[ForcingMode], seed: u64) -> Result<OdeEnclosureReport, EnclosureError> {
    let c = enclosure_bound(lambda, d, forcing, t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for &y0 in ics {
        for &mode in modes {
            let phases: Vec<(f64, f64)> = (0..=forcing.len()).map(|_| (rng.gen_range(0.5..4.0), rng.gen_range(0.0..6.3))).collect();
            let sgn = |i: usize, s: f64| -> f64 {
                match mode {
                    ForcingMode::Plus => 1.0,
                    ForcingMode::Minus => -1.0,
                    ForcingMode::Switching => (5.0 * (phases[i].0 * s + phases[i].1).sin()).tanh(),
                }
            };
            let f = |s: f64, y: &[f64], out: &mut [f64]| {
                let mut v = lambda * y[0] + sgn(0, s) * d * (lambda * s).exp();
                for (i, &(li, di)) in forcing.iter().enumerate() {
                    v += sgn(i + 1, s) * di * (li * s).exp();
                }
                out[0] = v;
            };
            let tr = integrate::integrate(f, &[y0], 0.0, t, &Options { rtol: 1e-12, atol: 1e-14, safety_radius: f64::INFINITY, ..Default::default() })?;
            for k in 0..=400 {
                let s = t * k as f64 / 400.0;
                if s == 0.0 {
                    continue;
                }
                let y = tr.eval(s)[0];
                let dev = (y - (lambda * s).exp() * y0).abs();
                let e = s * (lambda * s).exp() * c;
                let ratio = if e > 0.0 {
                    dev / e
                } else if dev <= 1e-12 * (lambda * s).exp() * (1.0 + y0.abs()) {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst = worst.max(ratio);
            }
            runs += 1;
        }
    }
    Ok(OdeEnclosureReport { worst_ratio: worst, contained: worst <= 1.0 + 1e-6, runs })
}

/// One resonant nonlinearity `g · z^m` in the equation for `v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NfTerm {
    pub v: SaddleVar,
    pub m: MonomialIndex,
    pub g: f64,
}

/// Far mode `ċ = i c (ν + ρ g(z))` with `g(z) = Σ κ_v v` over the saddle variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterSpec {
    pub nu: f64,
    pub coupling: [Complex64; 4],
}

/// Synthetic chart system in normal-form shape. State layout
/// `[x₋, y₋, x₊, y₊, Re c₁, Im c₁, …]`; center factors of `M₂` monomials use `Re c₁`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NfSystem {
    pub terms: Vec<NfTerm>,
    pub centers: Vec<CenterSpec>,
}

pub fn build_synthetic_nf_system(terms: Vec<NfTerm>, centers: Vec<CenterSpec>) -> Result<NfSystem, EnclosureError> {
    for t in &terms {
        if t.m.class().is_none() {
            return Err(EnclosureError::WrongClass(t.m));
        }
        if !is_resonant(&t.m, t.v) {
            return Err(EnclosureError::NotResonant { v: t.v, m: t.m });
        }
        if t.m.m_c > 0 && centers.is_empty() {
            return Err(EnclosureError::Params("center monomial without a center mode".into()));
        }
    }
    Ok(NfSystem { terms, centers })
}

impl NfSystem {
    pub fn dim(&self) -> usize {
        4 + 2 * self.centers.len()
    }

    pub fn coupling(&self, l: usize, z: &[f64]) -> Complex64 {
        let c = &self.centers[l];
        (0..4).map(|i| c.coupling[i] * z[i]).sum()
    }

    pub fn field(&self, rho: f64, y: &[f64], out: &mut [f64]) {
        let z = [y[0], y[1], y[2], y[3]];
        let cr = if self.centers.is_empty() { 0.0 } else { y[4] };
        for v in SaddleVar::ALL {
            out[v.idx()] = v.rate() as f64 * z[v.idx()];
        }
        for t in &self.terms {
            out[t.v.idx()] += rho * t.g * t.m.eval(&z, cr);
        }
        for (l, cs) in self.centers.iter().enumerate() {
            let c = Complex64::new(y[4 + 2 * l], y[5 + 2 * l]);
            let w = Complex64::i() * c * (cs.nu + rho * self.coupling(l, &z));
            out[4 + 2 * l] = w.re;
            out[5 + 2 * l] = w.im;
        }
    }

    /// Whether `f_v(s z) = s_v f_v(z)` for flips of whole saddle blocks.
    pub fn sign_symmetric(&self) -> bool {
        self.terms.iter().all(|t| {
            let own_minus = matches!(t.v, SaddleVar::Xm | SaddleVar::Ym);
            let pm = (t.m.m_xm + t.m.m_ym) % 2;
            let pp = (t.m.m_xp + t.m.m_yp) % 2;
            if own_minus { pm == 1 && pp == 0 } else { pm == 0 && pp == 1 }
        })
    }
}

/// All resonant saddle cubics for every variable, coefficient signs alternating.
pub fn all_resonant_cubics() -> Vec<NfTerm> {
    let p = WTubeParams::new(1.0, 1.0, 1.0, 1, 0).unwrap();
    let mut out = vec![];
    let mut sign = 1.0;
    for v in SaddleVar::ALL {
        for r in enumerate_and_classify(3, v, &p).unwrap() {
            if r.class == MonoClass::M1 {
                out.push(NfTerm { v, m: r.m, g: sign });
                sign = -sign;
            }
        }
    }
    out
}

/// Initial condition `x₋ = a₀e^{−2T}, y₋ = η, x₊ = d₀e^{−T}, y₊ = 0, c_ℓ = u_ℓ e^{−T}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeIc {
    pub a0: f64,
    pub eta: f64,
    pub d0: f64,
    pub u: Vec<Complex64>,
}

impl TubeIc {
    pub fn state(&self, p: &WTubeParams) -> Vec<f64> {
        let e1 = (-p.t).exp();
        let mut y = vec![self.a0 * e1 * e1, self.eta, self.d0 * e1, 0.0];
        for u in &self.u {
            y.push(u.re * e1);
            y.push(u.im * e1);
        }
        y
    }
}

/// Random admissible ICs: `|d₀|, |η| ≤ 3σ/2`, `|a₀| ≤ T^k/2`, `0 < |u_ℓ| ≤ T^{k_c}`.
pub fn sample_ics(p: &WTubeParams, n_centers: usize, count: usize, seed: u64) -> Vec<TubeIc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = 1.5 * p.sigma;
    let ak = 0.5 * p.t.powi(p.k as i32);
    let uc = p.t.powi(p.k_c as i32);
    (0..count)
        .map(|_| TubeIc {
            a0: rng.gen_range(-ak..=ak),
            eta: rng.gen_range(-s..=s),
            d0: rng.gen_range(-s..=s),
            u: (0..n_centers).map(|_| Complex64::from_polar(rng.gen_range(0.05 * uc..=uc), rng.gen_range(0.0..std::f64::consts::TAU))).collect(),
        })
        .collect()
}

/// Normalized slack of each saddle variable's tube at time `t`.
///
/// Entries are `halfwidth − |deviation|` after dividing out the exponential
/// factors, so a linear run returns `(T^k/A, σK/A, σ/A, KσT/A·t/T)`.
pub fn tube_slack(p: &WTubeParams, ic: &TubeIc, t: f64, y: &[f64]) -> [f64; 4] {
    let (tt, a) = (p.t, p.a);
    let xm = y[0] * (2.0 * tt - t).exp() - ic.a0;
    let ym = y[1] * t.exp() - ic.eta;
    let xp = y[2] * (tt - t).exp() - ic.d0;
    let yp = y[3] * (t + p.q_yplus * tt).exp();
    [
        tt.powi(p.k as i32) / a - xm.abs(),
        p.sigma * p.k_bound / a - ym.abs(),
        p.sigma / a - xp.abs(),
        p.k_bound * p.sigma * t / a - yp.abs(),
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TubeRun {
    pub ic: usize,
    pub rho: f64,
    /// Minimum slack per variable over the run.
    pub slack: [f64; 4],
    pub contained: bool,
    pub witness: Option<(f64, Vec<f64>)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TubeReport {
    pub params: WTubeParams,
    pub runs: Vec<TubeRun>,
    pub worst_slack: [f64; 4],
    pub contained: bool,
}

fn tube_options(p: &WTubeParams, dim: usize, ic: &TubeIc) -> Options {
    let e1 = (-p.t).exp();
    let mut at = vec![1e-13 * p.t.powi(p.k as i32) * e1 * e1, 1e-13 * p.sigma, 1e-13 * p.sigma * e1, 1e-13 * p.sigma * e1 * e1];
    for u in &ic.u {
        let s = 1e-12 * u.norm().max(1e-300) * e1;
        at.push(s);
        at.push(s);
    }
    at.resize(dim, 1e-14);
    Options { rtol: 1e-11, atol: 1e-14, atol_vec: Some(at), safety_radius: 1e3, ..Default::default() }
}

fn sample_times(t: f64, count: usize) -> impl Iterator<Item = f64> {
    (0..=count).map(move |i| t * i as f64 / count as f64)
}

/// Checks the saddle tubes for every `(ic, ρ)` pair on `[0, T]`.
pub fn verify_theorem_fen(sys: &NfSystem, p: &WTubeParams, ics: &[TubeIc], rhos: &[f64]) -> Result<TubeReport, EnclosureError> {
    let jobs: Vec<(usize, f64)> = (0..ics.len()).flat_map(|i| rhos.iter().map(move |&r| (i, r))).collect();
    let runs: Vec<Result<TubeRun, EnclosureError>> = jobs
        .par_iter()
        .map(|&(i, rho)| {
            let ic = &ics[i];
            let y0 = ic.state(p);
            let opts = tube_options(p, sys.dim(), ic);
            let tr = integrate::integrate(|_, y, o| sys.field(rho, y, o), &y0, 0.0, p.t, &opts)?;
            let mut slack = [f64::INFINITY; 4];
            let mut witness = None;
            let ts: Vec<f64> = sample_times(p.t, 600).chain(tr.times.iter().copied()).collect();
            for t in ts {
                let y = tr.eval(t);
                let s = tube_slack(p, ic, t, &y);
                for k in 0..4 {
                    slack[k] = slack[k].min(s[k]);
                }
                // y₊ has zero width at t = 0, allow rounding there
                let tol_yp = 1e-9 * p.k_bound * p.sigma / p.a;
                if witness.is_none() && (s[0] < 0.0 || s[1] < 0.0 || s[2] < 0.0 || s[3] < -tol_yp) {
                    witness = Some((t, y));
                }
            }
            Ok(TubeRun { ic: i, rho, slack, contained: witness.is_none(), witness })
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut worst = [f64::INFINITY; 4];
    for r in &runs {
        for k in 0..4 {
            worst[k] = worst[k].min(r.slack[k]);
        }
    }
    let contained = runs.iter().all(|r| r.contained);
    Ok(TubeReport { params: *p, runs, worst_slack: worst, contained })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CenterReport {
    pub g: f64,
    pub band: f64,
    /// Worst `ln(|c(t)|²/|c(0)|²) / (10Gσ)` over all runs; below 1 means inside the band.
    pub worst_log_ratio: f64,
    pub contained: bool,
}

/// `max |g_ℓ(z)| / |z|` over states of the given trajectories, `|z|` the sum norm.
pub fn sample_g(sys: &NfSystem, states: &[Vec<f64>]) -> f64 {
    let mut g: f64 = 0.0;
    for y in states {
        let mut nz = y[0].abs() + y[1].abs() + y[2].abs() + y[3].abs();
        for l in 0..sys.centers.len() {
            nz += Complex64::new(y[4 + 2 * l], y[5 + 2 * l]).norm();
        }
        if nz == 0.0 {
            continue;
        }
        for l in 0..sys.centers.len() {
            g = g.max(sys.coupling(l, y).norm() / nz);
        }
    }
    g
}

/// Checks `|c(0)|² e^{−10Gσ} < |c(t)|² < |c(0)|² e^{10Gσ}` at `ρ = 1`.
///
/// `g_override` replaces the sampled `G` (used to test the band against a
/// prescribed bound).
pub fn verify_center_modulus(sys: &NfSystem, p: &WTubeParams, ics: &[TubeIc], g_override: Option<f64>) -> Result<CenterReport, EnclosureError> {
    let trs: Vec<_> = ics
        .par_iter()
        .map(|ic| {
            let opts = tube_options(p, sys.dim(), ic);
            integrate::integrate(|_, y, o| sys.field(1.0, y, o), &ic.state(p), 0.0, p.t, &opts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let g = match g_override {
        Some(g) => g,
        None => {
            let all: Vec<Vec<f64>> = trs.iter().flat_map(|t| t.states.iter().cloned()).collect();
            sample_g(sys, &all)
        }
    };
    let band = 10.0 * g * p.sigma;
    let mut worst: f64 = 0.0;
    for (ic, tr) in ics.iter().zip(&trs) {
        let y0 = ic.state(p);
        let ts: Vec<f64> = sample_times(p.t, 600).chain(tr.times.iter().copied()).collect();
        for t in ts {
            let y = tr.eval(t);
            for l in 0..sys.centers.len() {
                let m0 = y0[4 + 2 * l].powi(2) + y0[5 + 2 * l].powi(2);
                if m0 == 0.0 {
                    continue;
                }
                let m = y[4 + 2 * l].powi(2) + y[5 + 2 * l].powi(2);
                let r = (m / m0).ln().abs();
                worst = worst.max(if band > 0.0 { r / band } else if r > 1e-12 { f64::INFINITY } else { 0.0 });
            }
        }
    }
    let contained = if band > 0.0 { worst < 1.0 } else { worst == 0.0 };
    Ok(CenterReport { g, band, worst_log_ratio: worst, contained })
}
