//! Lattice vector fields on ℂⁿ and numerical checks of their structural hypotheses.
//!
//! Mode indices in the public API are 1-based, matching the usual `b_1 … b_n`
//! labelling; storage is 0-based.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{Cx, Real};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Hamiltonian,
    NonHamiltonian,
}

/// One term `coeff · Π |b_i|^{2 e_i}` of the optional perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbTerm {
    pub coeff: f64,
    pub exps: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeModel {
    pub n: usize,
    /// Row-major `n × n`.
    pub a: Vec<Complex64>,
    /// Row-major `n × n`, `c[j*n + l] = C_{jl}`.
    pub c: Option<Vec<f64>>,
    pub rho: f64,
    pub kind: Kind,
    pub eps: f64,
    pub perturbation: Vec<PerturbTerm>,
}

impl LatticeModel {
    pub fn new(n: usize, a: Vec<Complex64>, kind: Kind) -> Result<Self, ModelError> {
        let m = LatticeModel { n, a, c: None, rho: 0.0, kind, eps: 0.0, perturbation: vec![] };
        m.validate()?;
        Ok(m)
    }

    pub fn with_dissipation(mut self, c: Vec<f64>, rho: f64) -> Result<Self, ModelError> {
        self.c = Some(c);
        self.rho = rho;
        self.kind = Kind::NonHamiltonian;
        self.validate()?;
        Ok(self)
    }

    pub fn with_perturbation(mut self, eps: f64, terms: Vec<PerturbTerm>) -> Result<Self, ModelError> {
        self.eps = eps;
        self.perturbation = terms;
        self.validate()?;
        Ok(self)
    }

    /// Tridiagonal matrix with 1 on the diagonal and −2 next to it.
    pub fn ck(n: usize) -> Self {
        let mut a = vec![Complex64::new(0.0, 0.0); n * n];
        for l in 0..n {
            a[l * n + l] = Complex64::new(1.0, 0.0);
            if l + 1 < n {
                a[l * n + l + 1] = Complex64::new(-2.0, 0.0);
                a[(l + 1) * n + l] = Complex64::new(-2.0, 0.0);
            }
        }
        LatticeModel::new(n, a, Kind::Hamiltonian).expect("ck matrix is valid for n >= 3")
    }

    /// The dissipative variant used for the attracting-node portrait:
    /// ρ = 0.03, `C_{jj} = C_{j,j+1} = (−1)^j`, `C_{j+1,j} = 2`.
    pub fn ck_dissipative(n: usize) -> Self {
        let mut c = vec![0.0; n * n];
        for j in 1..=n {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            c[(j - 1) * n + (j - 1)] = s;
            if j < n {
                c[(j - 1) * n + j] = s;
                c[j * n + (j - 1)] = 2.0;
            }
        }
        LatticeModel::ck(n).with_dissipation(c, 0.03).expect("valid")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.n;
        if n < 3 {
            return Err(ModelError::Invalid(format!("need n >= 3, got {n}")));
        }
        if self.a.len() != n * n {
            return Err(ModelError::Invalid(format!("A has {} entries, expected {}", self.a.len(), n * n)));
        }
        if self.a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(ModelError::Invalid("A has non-finite entries".into()));
        }
        if let Some(c) = &self.c {
            if c.len() != n * n || c.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::Invalid("C must be a finite n x n matrix".into()));
            }
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(ModelError::Invalid("rho must be finite and >= 0".into()));
        }
        for t in &self.perturbation {
            if t.exps.len() != n {
                return Err(ModelError::Invalid("perturbation exponent vector must have length n".into()));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn a(&self, l: usize, m: usize) -> Complex64 {
        self.a[(l - 1) * self.n + (m - 1)]
    }

    #[inline]
    pub fn cmat(&self, j: usize, l: usize) -> f64 {
        match &self.c {
            Some(c) => c[(j - 1) * self.n + (l - 1)],
            None => 0.0,
        }
    }

    fn dissipative(&self) -> bool {
        self.kind == Kind::NonHamiltonian && self.rho != 0.0 && self.c.is_some()
    }

    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n;
        let mut w: f64 = 0.0;
        for l in 1..=n {
            for m in 1..=n {
                w = w.max((self.a(l, m) - self.a(m, l).conj()).norm());
            }
        }
        w
    }

    /// `|a_{lm}| < |a_{ll}| < |a_{l,l+1}|` whenever `|l − m| ≥ 2`.
    pub fn dominance_ok(&self) -> bool {
        let n = self.n;
        for l in 1..=n {
            let d = self.a(l, l).norm();
            let nb = if l < n { self.a(l, l + 1).norm() } else { self.a(l, l - 1).norm() };
            if !(d < nb) {
                return false;
            }
            for m in 1..=n {
                if l.abs_diff(m) >= 2 && !(self.a(l, m).norm() < d) {
                    return false;
                }
            }
        }
        true
    }

    /// `(α, a)` when `a_{jj} = α` and `a_{j+1,j} = a` for every `j`.
    pub fn constant_diagonals(&self) -> Option<(Complex64, Complex64)> {
        let alpha = self.a(1, 1);
        let a = self.a(2, 1);
        let same = |x: Complex64, y: Complex64| (x - y).norm() <= 1e-14 * (1.0 + y.norm());
        for j in 1..=self.n {
            if !same(self.a(j, j), alpha) {
                return None;
            }
            if j < self.n && !same(self.a(j + 1, j), a) {
                return None;
            }
        }
        Some((alpha, a))
    }

    /// Generic evaluation used by the chart code.
    pub fn field_into<T: Real>(&self, b: &[Cx<T>], out: &mut [Cx<T>]) {
        let n = self.n;
        let sq: Vec<Cx<T>> = b.iter().map(|&z| z * z).collect();
        let ms: Vec<T> = b.iter().map(|&z| z.norm_sqr()).collect();
        let diss = self.dissipative();
        let mut r = T::cst(0.0);
        let mut gcol = vec![T::cst(0.0); if diss { n } else { 0 }];
        if diss {
            for l in 0..n {
                let mut g = T::cst(0.0);
                for j in 0..n {
                    let cjl = self.cmat(j + 1, l + 1);
                    if cjl != 0.0 {
                        g += ms[j] * T::cst(cjl);
                    }
                }
                gcol[l] = g;
                r = r - g * ms[l];
            }
        }
        for l in 0..n {
            let mut s = Cx::<T>::zero();
            for m in 0..n {
                let alm = self.a[l * n + m];
                if alm.re != 0.0 || alm.im != 0.0 {
                    s = s + sq[m].mul_c(alm);
                }
            }
            // −i S_l b̄_l
            let mut f = (s * b[l].conj()).mul_i();
            f = -f;
            if diss {
                let g = T::cst(self.rho) * (gcol[l] + r);
                f = f + b[l].scale(g);
            }
            if self.eps != 0.0 {
                let mut dp = T::cst(0.0);
                for t in &self.perturbation {
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
                    dp += p;
                }
                // −2iε ∂P/∂|b_l|² · b_l
                f = f - b[l].scale(T::cst(2.0 * self.eps) * dp).mul_i();
            }
            out[l] = f;
        }
    }

    /// ḃ for an ambient state.
    pub fn eval_field(&self, b: &[Complex64]) -> Result<Vec<Complex64>, ModelError> {
        if b.len() != self.n {
            return Err(ModelError::InvalidState(format!("state has {} modes, model has {}", b.len(), self.n)));
        }
        if b.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(ModelError::InvalidState("non-finite amplitude".into()));
        }
        Ok(self.eval_unchecked(b))
    }

    pub fn eval_unchecked(&self, b: &[Complex64]) -> Vec<Complex64> {
        let bb: Vec<Cx<f64>> = b.iter().map(|&z| Cx::new(z.re, z.im)).collect();
        let mut out = vec![Cx::<f64>::zero(); self.n];
        self.field_into(&bb, &mut out);
        out.into_iter().map(|z| Complex64::new(z.re, z.im)).collect()
    }

    /// `R = −Σ C_{jl}|b_j|²|b_l|²`.
    pub fn r_quartic(&self, b: &[Complex64]) -> f64 {
        let n = self.n;
        let mut r = 0.0;
        for j in 1..=n {
            for l in 1..=n {
                r -= self.cmat(j, l) * b[j - 1].norm_sqr() * b[l - 1].norm_sqr();
            }
        }
        r
    }

    /// Ṁ from the closed form `2ρR(M − 1)`.
    pub fn mass_derivative(&self, b: &[Complex64]) -> f64 {
        if !self.dissipative() {
            return 0.0;
        }
        2.0 * self.rho * self.r_quartic(b) * (mass(b) - 1.0)
    }

    /// `H = ¼ Σ b̄_l² a_{lm} b_m² + εP`. Only meaningful for Hermitian `A`.
    pub fn energy(&self, b: &[Complex64]) -> f64 {
        let n = self.n;
        let mut h = Complex64::new(0.0, 0.0);
        for l in 0..n {
            let bl = b[l].conj() * b[l].conj();
            for m in 0..n {
                h += bl * self.a[l * n + m] * b[m] * b[m];
            }
        }
        let mut p = 0.0;
        for t in &self.perturbation {
            let mut v = t.coeff;
            for (i, &e) in t.exps.iter().enumerate() {
                v *= b[i].norm_sqr().powi(e as i32);
            }
            p += v;
        }
        0.25 * h.re + self.eps * p
    }

    pub fn check_hypotheses(&self, samples: usize, seed: u64) -> HypothesisReport {
        let n = self.n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rep = HypothesisReport {
            samples,
            phase_equivariance: 0.0,
            hyperplane_invariance: 0.0,
            sign_symmetry: 0.0,
            sphere_invariance: 0.0,
            hermitian_defect: self.hermitian_defect(),
            hermitian_required: self.kind == Kind::Hamiltonian,
        };
        for _ in 0..samples.max(1) {
            let b = random_sphere_state(n, &mut rng);
            let f = self.eval_unchecked(&b);
            let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let ph = Complex64::from_polar(1.0, th);
            let rb: Vec<Complex64> = b.iter().map(|&z| z * ph).collect();
            let rf = self.eval_unchecked(&rb);
            for l in 0..n {
                rep.phase_equivariance = rep.phase_equivariance.max((rf[l] - f[l] * ph).norm());
            }
            let k = rng.gen_range(0..n);
            let mut hb = b.clone();
            hb[k] = Complex64::new(0.0, 0.0);
            rep.hyperplane_invariance = rep.hyperplane_invariance.max(self.eval_unchecked(&hb)[k].norm());
            let s: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            let sb: Vec<Complex64> = b.iter().zip(&s).map(|(&z, &si)| z * si).collect();
            let sf = self.eval_unchecked(&sb);
            for l in 0..n {
                rep.sign_symmetry = rep.sign_symmetry.max((sf[l] - f[l] * s[l]).norm());
            }
            let md: f64 = 2.0 * b.iter().zip(&f).map(|(z, w)| (z.conj() * w).re).sum::<f64>();
            rep.sphere_invariance = rep.sphere_invariance.max(md.abs());
        }
        rep
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub samples: usize,
    pub phase_equivariance: f64,
    pub hyperplane_invariance: f64,
    pub sign_symmetry: f64,
    pub sphere_invariance: f64,
    pub hermitian_defect: f64,
    pub hermitian_required: bool,
}

impl HypothesisReport {
    /// Names of the checks whose violation exceeds `tol`.
    pub fn failures(&self, tol: f64) -> Vec<&'static str> {
        let mut out = vec![];
        if self.hermitian_required && self.hermitian_defect > 1e-12 {
            out.push("hermitian");
        }
        if self.phase_equivariance > tol {
            out.push("phase_equivariance");
        }
        if self.hyperplane_invariance > tol {
            out.push("hyperplane_invariance");
        }
        if self.sign_symmetry > tol {
            out.push("sign_symmetry");
        }
        if self.sphere_invariance > tol {
            out.push("sphere_invariance");
        }
        out
    }

    pub fn max_violation(&self) -> f64 {
        self.phase_equivariance
            .max(self.hyperplane_invariance)
            .max(self.sign_symmetry)
            .max(self.sphere_invariance)
    }
}

pub fn mass(b: &[Complex64]) -> f64 {
    b.iter().map(|z| z.norm_sqr()).sum()
}

/// Gaussian amplitudes normalized to `M = 1`.
pub fn random_sphere_state<R: Rng>(n: usize, rng: &mut R) -> Vec<Complex64> {
    loop {
        let b: Vec<Complex64> = (0..n)
            .map(|_| {
                let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
                let r = (-2.0 * u1.ln()).sqrt();
                let (v1, v2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
                let s = (-2.0 * v1.ln()).sqrt();
                Complex64::new(r * (std::f64::consts::TAU * u2).cos(), s * (std::f64::consts::TAU * v2).cos())
            })
            .collect();
        let m = mass(&b).sqrt();
        if m > 1e-6 {
            return b.into_iter().map(|z| z / m).collect();
        }
    }
}

/// `[Re b_1, Im b_1, Re b_2, …]`.
pub fn to_flat(b: &[Complex64]) -> Vec<f64> {
    b.iter().flat_map(|z| [z.re, z.im]).collect()
}

pub fn from_flat(y: &[f64]) -> Vec<Complex64> {
    y.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MatrixSpec<T> {
    Rows(Vec<Vec<T>>),
    Flat(Vec<T>),
}

impl<T: Clone> MatrixSpec<T> {
    fn flatten(self, n: usize, what: &str) -> Result<Vec<T>, ModelError> {
        let v = match self {
            MatrixSpec::Rows(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(ModelError::Config(format!("{what} must be {n} x {n}")));
                }
                rows.into_iter().flatten().collect()
            }
            MatrixSpec::Flat(v) => v,
        };
        if v.len() != n * n {
            return Err(ModelError::Config(format!("{what} must have {} entries", n * n)));
        }
        Ok(v)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    n: usize,
    kind: Option<Kind>,
    rho: Option<f64>,
    #[serde(rename = "A")]
    a: MatrixSpec<String>,
    #[serde(rename = "C")]
    c: Option<MatrixSpec<f64>>,
    eps: Option<f64>,
    #[serde(default)]
    perturbation: Vec<PerturbTerm>,
}

fn parse_pair(s: &str) -> Result<Complex64, ModelError> {
    let mut it = s.split(',');
    let re = it.next().map(str::trim);
    let im = it.next().map(str::trim);
    match (re, im, it.next()) {
        (Some(re), Some(im), None) => {
            let re: f64 = re.parse().map_err(|_| ModelError::Config(format!("bad entry '{s}'")))?;
            let im: f64 = im.parse().map_err(|_| ModelError::Config(format!("bad entry '{s}'")))?;
            Ok(Complex64::new(re, im))
        }
        _ => Err(ModelError::Config(format!("entry '{s}' is not a \"re,im\" pair"))),
    }
}

impl LatticeModel {
    /// Parse the TOML model description.
    ///
    /// ```toml
    /// n = 3
    /// kind = "hamiltonian"
    /// A = [["1,0", "-2,0", "0,0"], ["-2,0", "1,0", "-2,0"], ["0,0", "-2,0", "1,0"]]
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let f: ModelFile = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        let n = f.n;
        let a = f.a.flatten(n, "A")?.iter().map(|s| parse_pair(s)).collect::<Result<Vec<_>, _>>()?;
        let c = match f.c {
            Some(c) => Some(c.flatten(n, "C")?),
            None => None,
        };
        let kind = f.kind.unwrap_or(if c.is_some() { Kind::NonHamiltonian } else { Kind::Hamiltonian });
        let m = LatticeModel { n, a, c, rho: f.rho.unwrap_or(0.0), kind, eps: f.eps.unwrap_or(0.0), perturbation: f.perturbation };
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        let n = self.n;
        let mut s = format!("n = {n}\nkind = \"{}\"\nrho = {:?}\n", match self.kind {
            Kind::Hamiltonian => "hamiltonian",
            Kind::NonHamiltonian => "non_hamiltonian",
        }, self.rho);
        s.push_str("A = [\n");
        for l in 0..n {
            let row: Vec<String> = (0..n).map(|m| format!("\"{:?},{:?}\"", self.a[l * n + m].re, self.a[l * n + m].im)).collect();
            s.push_str(&format!("  [{}],\n", row.join(", ")));
        }
        s.push_str("]\n");
        if let Some(c) = &self.c {
            s.push_str("C = [\n");
            for l in 0..n {
                let row: Vec<String> = (0..n).map(|m| format!("{:?}", c[l * n + m])).collect();
                s.push_str(&format!("  [{}],\n", row.join(", ")));
            }
            s.push_str("]\n");
        }
        s
    }
}
