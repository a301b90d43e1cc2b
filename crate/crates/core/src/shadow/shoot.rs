//! Shooting for an orbit that follows the chain.
//!
//! The orbit starts in chart 1 at `x₊ = σe^{−T}`, `y₊ = 0`, with far modes
//! `c_ℓ = u_ℓ e^{−T}` for `ℓ = 3, …, n`. The complex seeds `u_ℓ` are the
//! controls: seed `u_{j+2}` becomes the saddle coordinate `z̃₊` of chart
//! `j + 1` after the transition, and is solved for so that the orbit arrives
//! there at `x̃₊ = σe^{−T}`, `ỹ₊ = 0`, the centre line of `Ñ_in^{j+1}`.
//!
//! All of this runs in quad-double arithmetic ([`crate::hp`]): the targets are
//! `e^{−T}`-sized offsets measured next to O(σ) coordinates, and the sets they
//! must land in have `e^{−2T}` widths.

use num_complex::Complex64;

use crate::chart::{from_chart_with, ChartState};
use crate::hp::{self, Crossing, HpChart, HpOptions};
use crate::hset::Membership;
use crate::qd::Qd;
use crate::scalar::Real;

use super::*;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootConfig {
    pub max_iter: usize,
    /// Accepted target residual, in units of `σe^{−T}`.
    pub tol: f64,
    /// Relative tolerance of the quad-double integrator.
    pub rtol: f64,
    /// Relative finite-difference step on the seeds.
    pub fd_step: f64,
}

impl Default for ShootConfig {
    fn default() -> Self {
        ShootConfig { max_iter: 20, tol: 1e-12, rtol: 1e-14, fd_step: 1e-7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionCheck {
    pub set: String,
    pub membership: Membership,
    /// Largest internal block norm of the offset.
    pub worst_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub j: usize,
    /// Normalized time from the entry section to `x₊ = σ` (or `T` in the last chart).
    pub t_passage: f64,
    pub t_transit: Option<f64>,
    /// Offset from `A_j` at entry.
    pub entry: Vec<f64>,
    /// Offset from `B_j` at exit.
    pub exit: Vec<f64>,
    pub sections: Vec<SectionCheck>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShadowOrbit {
    pub n: usize,
    pub sigma: f64,
    #[serde(rename = "T")]
    pub t: f64,
    /// `u_ℓ` for `ℓ = 3, …, n`.
    pub seeds: Vec<[f64; 2]>,
    pub residual: f64,
    pub iterations: usize,
    pub stages: Vec<StageRecord>,
    pub entered_in_order: bool,
    /// Index of the largest mode along the orbit, repeats removed.
    pub dominance: Vec<usize>,
    pub sequential: bool,
    /// `max_t |b_n(t)|²`.
    pub max_last_mass: f64,
    /// Largest distance from the chain's heteroclinic lines, in chart coordinates.
    pub deviation: f64,
    pub max_mass_drift: f64,
    pub runtime_s: f64,
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub modes: Vec<Vec<Complex64>>,
}

impl ShadowOrbit {
    pub fn success(&self) -> bool {
        self.entered_in_order && self.sequential && self.max_last_mass >= 0.8
    }

    /// `t, Re b_1, Im b_1, …` per sample.
    pub fn orbit_csv(&self) -> String {
        let mut s = String::from("t");
        for l in 1..=self.n {
            s += &format!(",re_b{l},im_b{l}");
        }
        s.push('\n');
        for (t, b) in self.times.iter().zip(&self.modes) {
            s += &format!("{t}");
            for z in b {
                s += &format!(",{:.15e},{:.15e}", z.re, z.im);
            }
            s.push('\n');
        }
        s
    }

    /// `t, |b_1|², …, |b_n|², M` per sample.
    pub fn mass_csv(&self) -> String {
        let mut s = String::from("t");
        for l in 1..=self.n {
            s += &format!(",mass{l}");
        }
        s += ",total\n";
        for (t, b) in self.times.iter().zip(&self.modes) {
            s += &format!("{t}");
            for z in b {
                s += &format!(",{:.15e}", z.norm_sqr());
            }
            s += &format!(",{:.15e}\n", crate::model::mass(b));
        }
        s
    }

    /// Mass profile series for plotting: one `(t, |b_ℓ|²)` list per mode.
    pub fn mass_series(&self) -> Vec<Vec<(f64, f64)>> {
        (0..self.n).map(|l| self.times.iter().zip(&self.modes).map(|(t, b)| (*t, b[l].norm_sqr())).collect()).collect()
    }
}

struct Leg {
    /// Entry state (with θ) of the chart.
    entry: Vec<Qd>,
    /// State at `x₊ = σ`, or after `T` in the last chart.
    exit: Vec<Qd>,
    t_passage: f64,
    t_transit: Option<f64>,
    samples: Vec<(f64, Vec<f64>)>,
}

struct Shooter<'m> {
    model: &'m LatticeModel,
    charts: Vec<HpChart>,
    fcharts: Vec<Chart>,
    sigma: f64,
    t: f64,
    rtol: f64,
}

impl<'m> Shooter<'m> {
    fn new(model: &'m LatticeModel, sigma: f64, t: f64, rtol: f64) -> Result<Shooter<'m>, ShadowError> {
        let charts = (1..=model.n).map(|j| HpChart::new(model, j)).collect::<Result<Vec<_>, _>>()?;
        let fcharts = (1..=model.n).map(|j| Chart::new(model, j)).collect::<Result<Vec<_>, _>>()?;
        Ok(Shooter { model, charts, fcharts, sigma, t, rtol })
    }

    fn opts(&self, j: usize) -> HpOptions {
        let c = &self.fcharts[j - 1];
        let pairs = c.centers.iter().map(|m| {
            let i = c.center_idx(m.l).unwrap();
            (i, i + 1)
        });
        HpOptions { rtol: self.rtol, pairs: pairs.collect(), ..Default::default() }
    }

    fn start(&self, seeds: &[[f64; 2]]) -> Vec<Qd> {
        let c = &self.fcharts[0];
        let e = qd_exp_neg(self.t);
        let mut s = vec![Qd::ZERO; c.dim() + 1];
        s[c.plus_idx().unwrap()] = Qd::cst(self.sigma) * e;
        for (q, u) in seeds.iter().enumerate() {
            let i = c.center_idx(q + 3).unwrap();
            s[i] = Qd::cst(u[0]) * e;
            s[i + 1] = Qd::cst(u[1]) * e;
        }
        s
    }

    /// Follow the orbit through charts `1..=upto`; the last leg stops at the
    /// entry of chart `upto` unless `upto = n`, where chart `n` runs for `T`.
    fn run(&self, seeds: &[[f64; 2]], upto: usize, record: bool) -> Result<Vec<Leg>, ShadowError> {
        let n = self.model.n;
        let sigma = Qd::cst(self.sigma);
        let mut s = self.start(seeds);
        let mut legs = vec![];
        for j in 1..=upto {
            let c = &self.charts[j - 1];
            let lam = c.lambda.val();
            let mut o = self.opts(j);
            if !record {
                o.max_steps = 200_000;
            }
            let f = |y: &[Qd], out: &mut [Qd]| c.field(self.model, y, out);
            if j == upto && upto < n {
                legs.push(Leg { entry: s.clone(), exit: s.clone(), t_passage: 0.0, t_transit: None, samples: vec![] });
                break;
            }
            if j == n {
                let r = hp::solve(f, &s, self.t / lam, None::<(fn(&[Qd]) -> Qd, Crossing)>, &o)?;
                legs.push(Leg { entry: s.clone(), exit: r.y.clone(), t_passage: r.t.val() * lam, t_transit: None, samples: r.samples });
                break;
            }
            let p = self.fcharts[j - 1].plus_idx().unwrap();
            let pass = hp::solve(f, &s, 3.0 * self.t / lam, Some((|y: &[Qd]| y[p] - sigma, Crossing::Rising)), &o)?;
            if !pass.hit {
                return Err(ShadowError::SearchFailed { iterations: 0, residual: f64::INFINITY, best: seeds.iter().flatten().copied().collect() });
            }
            let next = &self.charts[j];
            let g = |y: &[Qd]| match c.transition(next, y) {
                Ok(z) => z[1] - sigma,
                Err(_) => Qd::cst(1.0),
            };
            let tr = hp::solve(f, &pass.y, 20.0 / lam, Some((g, Crossing::Falling)), &o)?;
            if !tr.hit {
                return Err(ShadowError::SearchFailed { iterations: 0, residual: f64::INFINITY, best: seeds.iter().flatten().copied().collect() });
            }
            let mut samples = pass.samples;
            if record {
                let t0 = pass.t.val();
                samples.extend(tr.samples.into_iter().skip(1).map(|(t, y)| (t + t0, y)));
            }
            legs.push(Leg {
                entry: s.clone(),
                exit: pass.y.clone(),
                t_passage: pass.t.val() * lam,
                t_transit: Some(tr.t.val() * lam),
                samples: if record { samples } else { vec![] },
            });
            s = c.transition(next, &tr.y)?;
        }
        Ok(legs)
    }

    /// `(x̃₊ − σe^{−T}, ỹ₊)/(σe^{−T})` at the entry of chart `j + 1`.
    fn target(&self, legs: &[Leg], j: usize) -> [f64; 2] {
        let c = &self.fcharts[j];
        let p = c.plus_idx().unwrap();
        let s = &legs[j].entry;
        let scale = Qd::cst(self.sigma) * qd_exp_neg(self.t);
        [((s[p] - scale) / scale).val(), (s[p + 1] / scale).val()]
    }
}

/// `e^{−t}` in quad-double via argument halving and a Taylor series.
pub fn qd_exp_neg(t: f64) -> Qd {
    let mut halvings = 0;
    let mut x = t;
    while x > 1e-3 {
        x *= 0.5;
        halvings += 1;
    }
    let xq = Qd::cst(-t) * Qd::cst(0.5f64.powi(halvings));
    let mut term = Qd::cst(1.0);
    let mut sum = Qd::cst(1.0);
    for k in 1..30 {
        term = term * xq / Qd::cst(k as f64);
        sum += term;
    }
    for _ in 0..halvings {
        sum = sum * sum;
    }
    sum
}

fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let d = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if !(d.abs() > 0.0) {
        return None;
    }
    Some([(b[0] * a[1][1] - b[1] * a[0][1]) / d, (a[0][0] * b[1] - a[1][0] * b[0]) / d])
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &k| a[i][c].abs().total_cmp(&a[k][c].abs()))?;
        if a[p][c] == 0.0 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest internal block norm of an offset, and its membership.
fn check_offset(h: &HSet, c: Option<&ContractedHSet>, off: &[f64]) -> Result<SectionCheck, ShadowError> {
    let q = h.internal_of(off);
    let worst = h.exit.iter().chain(&h.entry).map(|b| b.norm_of(&b.comps.iter().map(|&i| q[i]).collect::<Vec<_>>())).fold(0.0, f64::max);
    let (set, membership) = match c {
        Some(c) => (format!("~{}", h.name), c.membership_offset(off)?),
        None => (h.name.clone(), h.membership_offset(off)?),
    };
    Ok(SectionCheck { set, membership, worst_norm: worst })
}

fn offset(s: &[Qd], center: &[f64]) -> Vec<f64> {
    center.iter().enumerate().map(|(i, &c)| (s[i] - Qd::cst(c)).val()).collect()
}

/// Search for a chain-following orbit and report how it meets every set of
/// `report`, which must be built for the same model, `n`, `σ` and `T`, with
/// all sets inside the transition domain.
pub fn shoot_shadowing_orbit(model: &LatticeModel, report: &ChainReport, sc: &ShootConfig) -> Result<ShadowOrbit, ShadowError> {
    let start = Instant::now();
    let cfg = &report.config;
    cfg.validate()?;
    if report.model.as_ref() != Some(model) || model.n != cfg.n {
        return Err(ShadowError::Precondition("chain report was built for a different model".into()));
    }
    if !report.construction.is_empty() {
        return Err(ShadowError::Precondition(format!("chain sets are not constructible at T = {}: {}", cfg.t, report.construction.join("; "))));
    }
    if report.sets.len() != cfg.n {
        return Err(ShadowError::Precondition("chain report has no sets".into()));
    }
    let n = cfg.n;
    let sh = Shooter::new(model, cfg.sigma, cfg.t, sc.rtol)?;
    let mut seeds = vec![[0.0f64; 2]; n - 2];
    let mut iterations = 0;

    // stage by stage: seed u_{j+2} against the entry of chart j + 1
    for j in 1..=n - 2 {
        let q = j - 1;
        let mut u = seeds[q];
        if u == [0.0, 0.0] {
            u = [cfg.sigma, 0.0];
        }
        for _ in 0..sc.max_iter {
            iterations += 1;
            seeds[q] = u;
            let base = sh.target(&sh.run(&seeds, j + 1, false)?, j);
            let r = norm(&base);
            if r < sc.tol * 1e-2 {
                break;
            }
            let h = sc.fd_step * (u[0].hypot(u[1])).max(cfg.sigma);
            let cols: Vec<[f64; 2]> = (0..2)
                .into_par_iter()
                .map(|k| {
                    let mut s2 = seeds.clone();
                    s2[q][k] += h;
                    Ok(sh.target(&sh.run(&s2, j + 1, false)?, j))
                })
                .collect::<Result<_, ShadowError>>()?;
            let a = [[(cols[0][0] - base[0]) / h, (cols[1][0] - base[0]) / h], [(cols[0][1] - base[1]) / h, (cols[1][1] - base[1]) / h]];
            let d = solve2(a, [-base[0], -base[1]]).ok_or(ShadowError::SearchFailed { iterations, residual: r, best: seeds.iter().flatten().copied().collect() })?;
            u = [u[0] + d[0], u[1] + d[1]];
            if d[0].hypot(d[1]) < 1e-15 * u[0].hypot(u[1]) {
                seeds[q] = u;
                break;
            }
        }
        seeds[q] = u;
    }

    // polish all seeds together
    let eval_all = |s: &[[f64; 2]]| -> Result<Vec<f64>, ShadowError> {
        let legs = sh.run(s, n - 1, false)?;
        Ok((1..=n - 2).flat_map(|j| sh.target(&legs, j)).collect())
    };
    let mut r = eval_all(&seeds)?;
    for _ in 0..sc.max_iter {
        if norm(&r) < sc.tol * 1e-2 {
            break;
        }
        iterations += 1;
        let m = 2 * (n - 2);
        let flat: Vec<f64> = seeds.iter().flatten().copied().collect();
        let cols: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|k| {
                let h = sc.fd_step * flat[k].abs().max(cfg.sigma);
                let mut s2 = seeds.clone();
                s2[k / 2][k % 2] += h;
                Ok(eval_all(&s2)?.iter().zip(&r).map(|(a, b)| (a - b) / h).collect())
            })
            .collect::<Result<_, ShadowError>>()?;
        let a: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|k| cols[k][i]).collect()).collect();
        let d = solve_dense(a, r.iter().map(|v| -v).collect()).ok_or(ShadowError::SearchFailed { iterations, residual: norm(&r), best: flat.clone() })?;
        let trial: Vec<[f64; 2]> = seeds.iter().enumerate().map(|(q, u)| [u[0] + d[2 * q], u[1] + d[2 * q + 1]]).collect();
        let rt = eval_all(&trial)?;
        if norm(&rt) >= norm(&r) {
            break;
        }
        seeds = trial;
        r = rt;
    }
    let residual = norm(&r);
    if !(residual < sc.tol) {
        return Err(ShadowError::SearchFailed { iterations, residual, best: seeds.iter().flatten().copied().collect() });
    }

    // final run with samples
    let legs = sh.run(&seeds, n, true)?;
    let mut stages = vec![];
    let mut entered = true;
    for (k, leg) in legs.iter().enumerate() {
        let j = k + 1;
        let sets = &report.sets[k];
        let a = &report.anchors[k];
        let entry = offset(&leg.entry, &a.a);
        let exit = offset(&leg.exit, &a.b);
        let mut sections = vec![check_offset(&sets.n_in, None, &entry)?];
        if let Some(c) = &sets.n_in_c {
            sections.push(check_offset(&sets.n_in, Some(c), &entry)?);
        }
        sections.push(check_offset(&sets.n_out, None, &exit)?);
        if let Some(c) = &sets.n_out_c {
            sections.push(check_offset(&sets.n_out, Some(c), &exit)?);
        }
        entered &= sections.iter().all(|s| s.membership != Membership::Outside);
        stages.push(StageRecord { j, t_passage: leg.t_passage, t_transit: leg.t_transit, entry, exit, sections });
    }

    // ambient samples and diagnostics
    let mut times = vec![];
    let mut modes = vec![];
    let mut deviation: f64 = 0.0;
    let mut t0 = 0.0;
    for (k, leg) in legs.iter().enumerate() {
        let fc = &sh.fcharts[k];
        let lam = fc.lambda;
        let d = fc.dim();
        for (t, s) in &leg.samples {
            let st = ChartState::from_flat(fc, &s[..d], s[d]);
            modes.push(from_chart_with(fc, &st)?);
            times.push(t0 + t * lam);
            deviation = deviation.max(line_distance(fc, &s[..d]));
        }
        t0 += leg.t_passage + leg.t_transit.unwrap_or(0.0);
    }
    let mut dominance: Vec<usize> = vec![];
    for b in &modes {
        let k = (0..n).max_by(|&a, &c| b[a].norm_sqr().total_cmp(&b[c].norm_sqr())).unwrap() + 1;
        if dominance.last() != Some(&k) {
            dominance.push(k);
        }
    }
    let sequential = dominance == (1..=n).collect::<Vec<_>>();
    let max_last_mass = modes.iter().map(|b| b[n - 1].norm_sqr()).fold(0.0, f64::max);
    let max_mass_drift = modes.iter().map(|b| (crate::model::mass(b) - 1.0).abs()).fold(0.0, f64::max);
    Ok(ShadowOrbit {
        n,
        sigma: cfg.sigma,
        t: cfg.t,
        seeds,
        residual,
        iterations,
        stages,
        entered_in_order: entered,
        dominance,
        sequential,
        max_last_mass,
        deviation,
        max_mass_drift,
        runtime_s: start.elapsed().as_secs_f64(),
        times,
        modes,
    })
}

/// `min(‖(x₋, z₊, c)‖, ‖(z₋, y₊, c)‖)`: distance to the nearer heteroclinic line.
fn line_distance(c: &Chart, s: &[f64]) -> f64 {
    let mut centers = 0.0;
    for m in &c.centers {
        let i = c.center_idx(m.l).unwrap();
        centers += s[i] * s[i] + s[i + 1] * s[i + 1];
    }
    let (mut din, mut dout) = (centers, centers);
    if let Some(m) = c.minus_idx() {
        din += s[m] * s[m];
        dout += s[m] * s[m] + s[m + 1] * s[m + 1];
    }
    if let Some(p) = c.plus_idx() {
        din += s[p] * s[p] + s[p + 1] * s[p + 1];
        dout += s[p + 1] * s[p + 1];
    }
    din.min(dout).sqrt()
}
