//! Chart coordinates around the circles `T_j`, the reduced two-mode dynamics,
//! and the transition between neighbouring charts.
//!
//! Chart `j` quotients out the phase of `b_j`: `b_j = r_j e^{iθ}`, `b_k = c_k e^{iθ}`.
//! The neighbours `c_{j∓1}` are split along the unstable and stable directions of
//! the linearization at `c = 0`, `c = u x + v y`, and the remaining modes are
//! brought to rotation form by a real 2×2 change. All of this is stored in a
//! flat real vector laid out as
//!
//! `[x₋, y₋]? [x₊, y₊]? [X_ℓ, Y_ℓ] for each far mode ℓ (ascending)`
//!
//! where the minus block is absent in chart 1 and the plus block in chart n.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::LatticeModel;
use crate::scalar::{Cx, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChartError {
    #[error("chart singularity: |b_{j}| = {value:e}")]
    Singular { j: usize, value: f64 },
    #[error("state is off the unit sphere (M - 1 = {0:e})")]
    OffSphere(f64),
    #[error("negative radicand {0:e} for r_j")]
    NegativeRadicand(f64),
    #[error("degenerate spectrum: |a|^2 = alpha^2")]
    Degenerate,
    #[error("pair is not a saddle")]
    NotSaddle,
    #[error("chart {j}: pair ({j},{k}) has the wrong type for its position")]
    Classification { j: usize, k: usize },
    #[error("transition singular: z+ = 0")]
    TransitionSingular,
    #[error("|c| = {0} exceeds 1")]
    Domain(f64),
    #[error("diagonals are not constant near mode {0}; heteroclinics are not straight lines")]
    NoStraightLine(usize),
    #[error("index out of range: {0}")]
    Index(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairKind {
    Saddle,
    Center,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadParams {
    pub alpha: f64,
    pub a: Complex64,
    pub lambda_or_nu: f64,
    pub kind: PairKind,
}

/// `(α, a)` of the reduced quadratic form for modes `j` (chart) and `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadPair {
    pub alpha: f64,
    pub a: Complex64,
    /// `(a_kk − a_jj)/4`.
    pub constant: f64,
}

pub fn quad_params(model: &LatticeModel, j: usize, k: usize) -> Result<QuadPair, ChartError> {
    if j == k || j == 0 || k == 0 || j > model.n || k > model.n {
        return Err(ChartError::Index(format!("pair ({j},{k})")));
    }
    let ajj = model.a(j, j).re;
    let akk = model.a(k, k).re;
    Ok(QuadPair { alpha: 0.5 * (akk + ajj), a: model.a(k, j), constant: 0.25 * (akk - ajj) })
}

pub fn classify_pair(alpha: f64, a: Complex64) -> Result<QuadParams, ChartError> {
    let d = a.norm_sqr() - alpha * alpha;
    if d.abs() <= 1e-12 {
        return Err(ChartError::Degenerate);
    }
    let kind = if d > 0.0 { PairKind::Saddle } else { PairKind::Center };
    Ok(QuadParams { alpha, a, lambda_or_nu: d.abs().sqrt(), kind })
}

fn principal_sqrt(z: Complex64) -> Complex64 {
    let mut w = z.sqrt();
    if w.re < 0.0 || (w.re == 0.0 && w.im < 0.0) {
        w = -w;
    }
    w
}

/// `ω` with `ω² = i ā / (λ + iα)`.
pub fn conformal_omega(alpha: f64, a: Complex64) -> Result<Complex64, ChartError> {
    let q = classify_pair(alpha, a)?;
    if q.kind != PairKind::Saddle {
        return Err(ChartError::NotSaddle);
    }
    let w2 = Complex64::i() * a.conj() / Complex64::new(q.lambda_or_nu, alpha);
    Ok(principal_sqrt(w2))
}

/// `a₁ = −2 Re ω²`.
pub fn omega_a1(omega: Complex64) -> f64 {
    -2.0 * (omega * omega).re
}

/// Directions of the two real lines `α|c|² = Re(a c²)` through the origin,
/// angles taken in `[0, π)` and sorted.
pub fn line_directions(alpha: f64, a: Complex64) -> Result<[[f64; 2]; 2], ChartError> {
    let q = classify_pair(alpha, a)?;
    if q.kind != PairKind::Saddle {
        return Err(ChartError::NotSaddle);
    }
    let base = (alpha / a.norm()).acos();
    let arg = a.arg();
    let pi = std::f64::consts::PI;
    let mut phis: Vec<f64> = [base, -base].iter().map(|&s| (0.5 * (s - arg)).rem_euclid(pi)).collect();
    phis.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok([[phis[0].cos(), phis[0].sin()], [phis[1].cos(), phis[1].sin()]])
}

pub fn heteroclinic_lines(model: &LatticeModel, j: usize) -> Result<[[f64; 2]; 2], ChartError> {
    if j == 0 || j >= model.n {
        return Err(ChartError::Index(format!("chart {j} has no forward neighbour")));
    }
    let (ajj, akk) = (model.a(j, j), model.a(j + 1, j + 1));
    if (ajj - akk).norm() > 1e-14 * (1.0 + ajj.norm()) {
        return Err(ChartError::NoStraightLine(j));
    }
    line_directions(ajj.re, model.a(j + 1, j))
}

/// ċ of the two-mode system `b_j = sqrt(1 − |c|²)`, `b_k = c`, others zero.
pub fn reduced_field(model: &LatticeModel, j: usize, k: usize, c: Complex64) -> Result<Complex64, ChartError> {
    if j == k || j == 0 || k == 0 || j > model.n || k > model.n {
        return Err(ChartError::Index(format!("pair ({j},{k})")));
    }
    let m = c.norm_sqr();
    if m.sqrt() > 1.0 + 1e-9 {
        return Err(ChartError::Domain(m.sqrt()));
    }
    let mut b = vec![Cx::<f64>::zero(); model.n];
    b[j - 1] = Cx::new((1.0 - m).max(0.0).sqrt(), 0.0);
    b[k - 1] = Cx::new(c.re, c.im);
    let mut f = vec![Cx::<f64>::zero(); model.n];
    model.field_into(&b, &mut f);
    let th = theta_rate(model, &b, j);
    Ok((f[k - 1] - b[k - 1].scale(th).mul_i()).to_c())
}

/// θ̇ for `b_j` real and positive: `−Re S_j − 2ε ∂P/∂|b_j|²`, free of division by `r_j`.
pub fn theta_rate<T: Real>(model: &LatticeModel, b: &[Cx<T>], j: usize) -> T {
    let n = model.n;
    let mut s = T::cst(0.0);
    for m in 0..n {
        let a = model.a(j, m + 1);
        if a.re != 0.0 || a.im != 0.0 {
            s += (b[m] * b[m]).mul_c(a).re;
        }
    }
    let mut th = -s;
    if model.eps != 0.0 {
        let ms: Vec<T> = b.iter().map(|z| z.norm_sqr()).collect();
        let l = j - 1;
        for t in &model.perturbation {
            let e = t.exps[l];
            if e == 0 {
                continue;
            }
            let mut p = T::cst(t.coeff * e as f64);
            for (i, &ei) in t.exps.iter().enumerate() {
                let pw = if i == l { ei - 1 } else { ei };
                for _ in 0..pw {
                    p = p * ms[i];
                }
            }
            th = th - T::cst(2.0 * model.eps) * p;
        }
    }
    th
}

/// Unstable/stable split `c = u x + v y` of a neighbouring mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleBasis {
    pub k: usize,
    pub u: Complex64,
    pub v: Complex64,
    pub lambda: f64,
    /// Eigenvalues of the linear part: `δ + λ` along `u`, `δ − λ` along `v`.
    pub rate_u: f64,
    pub rate_s: f64,
    inv: [[f64; 2]; 2],
}

impl SaddleBasis {
    #[inline]
    pub fn compose<T: Real>(&self, x: T, y: T) -> Cx<T> {
        Cx::new(
            x * T::cst(self.u.re) + y * T::cst(self.v.re),
            x * T::cst(self.u.im) + y * T::cst(self.v.im),
        )
    }
    #[inline]
    pub fn split<T: Real>(&self, c: Cx<T>) -> (T, T) {
        let m = &self.inv;
        (
            c.re * T::cst(m[0][0]) + c.im * T::cst(m[0][1]),
            c.re * T::cst(m[1][0]) + c.im * T::cst(m[1][1]),
        )
    }
}

/// Real change `c = U (X, Y)` that turns the linear part into a rotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterMode {
    pub l: usize,
    pub u: [[f64; 2]; 2],
    uinv: [[f64; 2]; 2],
    /// Signed frequency: the linear part is `Ċ = i ν C`.
    pub nu: f64,
}

impl CenterMode {
    #[inline]
    pub fn compose<T: Real>(&self, x: T, y: T) -> Cx<T> {
        let m = &self.u;
        Cx::new(x * T::cst(m[0][0]) + y * T::cst(m[0][1]), x * T::cst(m[1][0]) + y * T::cst(m[1][1]))
    }
    #[inline]
    pub fn split<T: Real>(&self, c: Cx<T>) -> (T, T) {
        let m = &self.uinv;
        (
            c.re * T::cst(m[0][0]) + c.im * T::cst(m[0][1]),
            c.re * T::cst(m[1][0]) + c.im * T::cst(m[1][1]),
        )
    }
}

fn inv2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let d = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

/// Linear part `ċ = p c + q c̄` of mode `k` at the origin of chart `j`.
fn linear_coeffs(model: &LatticeModel, j: usize, k: usize) -> (Complex64, Complex64) {
    let mut p = Complex64::i() * model.a(j, j).re;
    if model.kind == crate::model::Kind::NonHamiltonian && model.c.is_some() {
        p += model.rho * (model.cmat(j, k) - model.cmat(j, j));
    }
    (p, -Complex64::i() * model.a(k, j))
}

fn saddle_basis(model: &LatticeModel, j: usize, k: usize) -> Result<SaddleBasis, ChartError> {
    let (p, q) = linear_coeffs(model, j, k);
    let beta = p.im;
    let d = q.norm_sqr() - beta * beta;
    if d.abs() <= 1e-12 {
        return Err(ChartError::Degenerate);
    }
    if d < 0.0 {
        return Err(ChartError::Classification { j, k });
    }
    let lambda = d.sqrt();
    let u = principal_sqrt(q / Complex64::new(lambda, -beta));
    let v = principal_sqrt(q / Complex64::new(-lambda, -beta));
    let inv = inv2([[u.re, v.re], [u.im, v.im]]);
    Ok(SaddleBasis { k, u, v, lambda, rate_u: p.re + lambda, rate_s: p.re - lambda, inv })
}

fn center_mode(model: &LatticeModel, j: usize, l: usize) -> Result<CenterMode, ChartError> {
    let (p, q) = linear_coeffs(model, j, l);
    let beta = p.im;
    // traceless part of the real matrix of c ↦ p c + q c̄
    let b = [[q.re, -beta + q.im], [beta + q.im, -q.re]];
    let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
    if det.abs() <= 1e-12 {
        return Err(ChartError::Degenerate);
    }
    if det < 0.0 {
        return Err(ChartError::Classification { j, k: l });
    }
    let nu = det.sqrt();
    let s = if b[1][0] >= 0.0 { 1.0 } else { -1.0 };
    let col2 = [b[0][0] / (s * nu), b[1][0] / (s * nu)];
    let mut u = [[1.0, col2[0]], [0.0, col2[1]]];
    let du = u[0][0] * u[1][1] - u[0][1] * u[1][0];
    let f = 1.0 / du.abs().sqrt();
    for r in u.iter_mut() {
        for x in r.iter_mut() {
            *x *= f;
        }
    }
    Ok(CenterMode { l, u, uinv: inv2(u), nu: s * nu })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub j: usize,
    pub n: usize,
    pub minus: Option<SaddleBasis>,
    pub plus: Option<SaddleBasis>,
    pub centers: Vec<CenterMode>,
    /// Saddle rate used to normalize time in chain computations.
    pub lambda: f64,
}

impl Chart {
    pub fn new(model: &LatticeModel, j: usize) -> Result<Chart, ChartError> {
        let n = model.n;
        if j == 0 || j > n {
            return Err(ChartError::Index(format!("chart {j} for n = {n}")));
        }
        let minus = if j > 1 { Some(saddle_basis(model, j, j - 1)?) } else { None };
        let plus = if j < n { Some(saddle_basis(model, j, j + 1)?) } else { None };
        let mut centers = vec![];
        for l in 1..=n {
            if l + 1 < j || l > j + 1 {
                centers.push(center_mode(model, j, l)?);
            }
        }
        let lambda = plus.as_ref().or(minus.as_ref()).map(|b| b.lambda).unwrap();
        Ok(Chart { j, n, minus, plus, centers, lambda })
    }

    pub fn dim(&self) -> usize {
        2 * (self.n - 1)
    }

    pub fn minus_idx(&self) -> Option<usize> {
        self.minus.as_ref().map(|_| 0)
    }

    pub fn plus_idx(&self) -> Option<usize> {
        self.plus.as_ref().map(|_| if self.minus.is_some() { 2 } else { 0 })
    }

    /// Offset of far mode `l` in the flat vector.
    pub fn center_idx(&self, l: usize) -> Option<usize> {
        let base = 2 * (self.minus.is_some() as usize + self.plus.is_some() as usize);
        self.centers.iter().position(|c| c.l == l).map(|p| base + 2 * p)
    }

    pub fn labels(&self) -> Vec<String> {
        let mut v = vec![];
        if self.minus.is_some() {
            v.push("x-".to_string());
            v.push("y-".to_string());
        }
        if self.plus.is_some() {
            v.push("x+".to_string());
            v.push("y+".to_string());
        }
        for c in &self.centers {
            v.push(format!("c{}.x", c.l));
            v.push(format!("c{}.y", c.l));
        }
        v
    }

    /// Mode amplitudes `c_k` (index `k − 1`); slot `j − 1` is left at zero.
    pub fn modes<T: Real>(&self, s: &[T]) -> Vec<Cx<T>> {
        let mut c = vec![Cx::<T>::zero(); self.n];
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

    pub fn flat<T: Real>(&self, c: &[Cx<T>]) -> Vec<T> {
        let mut s = Vec::with_capacity(self.dim());
        if let Some(m) = &self.minus {
            let (x, y) = m.split(c[m.k - 1]);
            s.push(x);
            s.push(y);
        }
        if let Some(p) = &self.plus {
            let (x, y) = p.split(c[p.k - 1]);
            s.push(x);
            s.push(y);
        }
        for cm in &self.centers {
            let (x, y) = cm.split(c[cm.l - 1]);
            s.push(x);
            s.push(y);
        }
        s
    }

    /// `r_j² = 1 − Σ|c_k|²`.
    pub fn radicand<T: Real>(&self, c: &[Cx<T>]) -> T {
        let mut m = T::cst(0.0);
        for (k, z) in c.iter().enumerate() {
            if k + 1 != self.j {
                m += z.norm_sqr();
            }
        }
        T::cst(1.0) - m
    }

    /// Vector field in flat chart coordinates, original time.
    pub fn field<T: Real>(&self, model: &LatticeModel, s: &[T], out: &mut [T]) {
        let mut b = self.modes(s);
        let r2 = self.radicand(&b);
        b[self.j - 1] = Cx::new(r2.sqrt(), T::cst(0.0));
        let mut f = vec![Cx::<T>::zero(); self.n];
        model.field_into(&b, &mut f);
        let th = theta_rate(model, &b, self.j);
        for k in 0..self.n {
            f[k] = f[k] - b[k].scale(th).mul_i();
        }
        let d = self.flat(&f);
        out.copy_from_slice(&d);
    }

    /// θ̇ at a flat chart state.
    pub fn theta_dot(&self, model: &LatticeModel, s: &[f64]) -> f64 {
        let mut b = self.modes(s);
        let r2 = self.radicand(&b);
        b[self.j - 1] = Cx::new(r2.max(0.0).sqrt(), 0.0);
        theta_rate(model, &b, self.j)
    }

    /// Flat state of chart `j + 1` for a flat state of this chart, plus the
    /// phase shift `arg c_{j+1}`.
    pub fn transition<T: Real>(&self, next: &Chart, s: &[T]) -> Result<(Vec<T>, f64), ChartError> {
        let kp = match &self.plus {
            Some(p) => p.k,
            None => return Err(ChartError::TransitionSingular),
        };
        let c = self.modes(s);
        let cp = c[kp - 1];
        let m2 = cp.norm_sqr();
        if !(m2.val() > 1e-20) {
            return Err(ChartError::TransitionSingular);
        }
        let m = m2.sqrt();
        let rj = self.radicand(&c).sqrt();
        let g = Cx::new(cp.re / m, -(cp.im / m));
        let mut nc = vec![Cx::<T>::zero(); self.n];
        for k in 0..self.n {
            if k + 1 == kp {
                continue;
            }
            nc[k] = if k + 1 == self.j { g.scale(rj) } else { c[k] * g };
        }
        let shift = cp.im.val().atan2(cp.re.val());
        Ok((next.flat(&nc), shift))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartState {
    pub j: usize,
    pub z_minus: Option<[f64; 2]>,
    pub z_plus: Option<[f64; 2]>,
    /// Far modes in rotation coordinates `X + iY`, ascending mode index.
    pub c_star: Vec<(usize, Complex64)>,
    pub theta: f64,
}

impl ChartState {
    pub fn from_flat(chart: &Chart, s: &[f64], theta: f64) -> ChartState {
        let mut i = 0;
        let z_minus = chart.minus.as_ref().map(|_| {
            i += 2;
            [s[i - 2], s[i - 1]]
        });
        let z_plus = chart.plus.as_ref().map(|_| {
            i += 2;
            [s[i - 2], s[i - 1]]
        });
        let c_star = chart
            .centers
            .iter()
            .map(|cm| {
                i += 2;
                (cm.l, Complex64::new(s[i - 2], s[i - 1]))
            })
            .collect();
        ChartState { j: chart.j, z_minus, z_plus, c_star, theta: theta.rem_euclid(std::f64::consts::TAU) }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = vec![];
        if let Some(z) = self.z_minus {
            v.extend(z);
        }
        if let Some(z) = self.z_plus {
            v.extend(z);
        }
        for (_, c) in &self.c_star {
            v.push(c.re);
            v.push(c.im);
        }
        v
    }
}

pub fn to_chart(model: &LatticeModel, j: usize, b: &[Complex64]) -> Result<ChartState, ChartError> {
    let chart = Chart::new(model, j)?;
    to_chart_with(&chart, b)
}

pub fn to_chart_with(chart: &Chart, b: &[Complex64]) -> Result<ChartState, ChartError> {
    let j = chart.j;
    if b.len() != chart.n {
        return Err(ChartError::Index(format!("state has {} modes", b.len())));
    }
    let bj = b[j - 1];
    if bj.norm() <= 1e-8 {
        return Err(ChartError::Singular { j, value: bj.norm() });
    }
    let m = crate::model::mass(b);
    if (m - 1.0).abs() > 1e-8 {
        return Err(ChartError::OffSphere(m - 1.0));
    }
    let theta = bj.arg();
    let ph = Complex64::from_polar(1.0, -theta);
    let c: Vec<Cx<f64>> = b.iter().map(|&z| {
        let w = z * ph;
        Cx::new(w.re, w.im)
    }).collect();
    Ok(ChartState::from_flat(chart, &chart.flat(&c), theta))
}

pub fn from_chart(model: &LatticeModel, s: &ChartState) -> Result<Vec<Complex64>, ChartError> {
    let chart = Chart::new(model, s.j)?;
    from_chart_with(&chart, s)
}

pub fn from_chart_with(chart: &Chart, s: &ChartState) -> Result<Vec<Complex64>, ChartError> {
    let c = chart.modes(&s.flat());
    let r2 = chart.radicand(&c);
    if r2 < 0.0 {
        return Err(ChartError::NegativeRadicand(r2));
    }
    let ph = Complex64::from_polar(1.0, s.theta);
    let mut b: Vec<Complex64> = c.iter().map(|z| z.to_c() * ph).collect();
    b[chart.j - 1] = ph * r2.sqrt();
    Ok(b)
}

pub fn transition_map(model: &LatticeModel, s: &ChartState) -> Result<ChartState, ChartError> {
    let a = Chart::new(model, s.j)?;
    if s.j >= model.n {
        return Err(ChartError::TransitionSingular);
    }
    let b = Chart::new(model, s.j + 1)?;
    let (f, shift) = a.transition(&b, &s.flat())?;
    Ok(ChartState::from_flat(&b, &f, s.theta + shift))
}

/// Central-difference Jacobian, `jac[i][k] = ∂f_i/∂s_k`.
pub fn fd_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, s: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = s.len();
    let m = f(s).len();
    let mut jac = vec![vec![0.0; n]; m];
    let mut p = s.to_vec();
    for k in 0..n {
        p[k] = s[k] + h;
        let fp = f(&p);
        p[k] = s[k] - h;
        let fm = f(&p);
        p[k] = s[k];
        for i in 0..m {
            jac[i][k] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockReport {
    pub j: usize,
    /// `(row block, column block, max |entry|)` for every off-diagonal block pair.
    pub blocks: Vec<(String, String, f64)>,
    pub max_forbidden: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Block names per flat index: `z-`, `z+`, `c<l>`.
pub fn block_names(chart: &Chart) -> Vec<String> {
    let mut v = vec![];
    if chart.minus.is_some() {
        v.extend(["z-".to_string(), "z-".to_string()]);
    }
    if chart.plus.is_some() {
        v.extend(["z+".to_string(), "z+".to_string()]);
    }
    for c in &chart.centers {
        v.push(format!("c{}", c.l));
        v.push(format!("c{}", c.l));
    }
    v
}

/// Points on the two heteroclinic segments through the origin of chart `j`:
/// `(x₋, y₋) = (0, s)` and `(x₊, y₊) = (s, 0)`.
pub fn heteroclinic_samples(chart: &Chart, count: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![];
    for i in 0..count {
        let s = 0.05 + 0.85 * (i as f64) / ((count.max(2) - 1) as f64);
        if let Some(k) = chart.minus_idx() {
            let mut p = vec![0.0; chart.dim()];
            p[k + 1] = s;
            pts.push(p);
        }
        if let Some(k) = chart.plus_idx() {
            let mut p = vec![0.0; chart.dim()];
            p[k] = s;
            pts.push(p);
        }
    }
    pts
}

/// Off-diagonal Jacobian blocks of `field` at `points`.
pub fn block_diagonal_check_with(chart: &Chart, field: &dyn Fn(&[f64]) -> Vec<f64>, points: &[Vec<f64>], tol: f64) -> BlockReport {
    let names = block_names(chart);
    let mut uniq: Vec<String> = vec![];
    for n in &names {
        if !uniq.contains(n) {
            uniq.push(n.clone());
        }
    }
    let mut worst = vec![vec![0.0f64; uniq.len()]; uniq.len()];
    let pos = |n: &String| uniq.iter().position(|u| u == n).unwrap();
    for p in points {
        let jac = fd_jacobian(field, p, 1e-5);
        for (i, row) in jac.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                let (a, b) = (pos(&names[i]), pos(&names[k]));
                if a != b {
                    worst[a][b] = worst[a][b].max(v.abs());
                }
            }
        }
    }
    let mut blocks = vec![];
    let mut max_forbidden: f64 = 0.0;
    for a in 0..uniq.len() {
        for b in 0..uniq.len() {
            if a != b {
                blocks.push((uniq[a].clone(), uniq[b].clone(), worst[a][b]));
                max_forbidden = max_forbidden.max(worst[a][b]);
            }
        }
    }
    BlockReport { j: chart.j, blocks, max_forbidden, tol, pass: max_forbidden < tol }
}

pub fn block_diagonal_check(model: &LatticeModel, j: usize, samples: usize) -> Result<BlockReport, ChartError> {
    let chart = Chart::new(model, j)?;
    let pts = heteroclinic_samples(&chart, samples);
    let f = |s: &[f64]| {
        let mut out = vec![0.0; s.len()];
        chart.field(model, s, &mut out);
        out
    };
    Ok(block_diagonal_check_with(&chart, &f, &pts, 1e-6))
}
