//! Phase portraits of the reduced two-mode system on the unit disk.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::TAU;
use std::fmt::Write;

use crate::chart::{heteroclinic_lines, reduced_field, ChartError};
use crate::model::LatticeModel;
use crate::plot::Svg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EqKind {
    Saddle,
    Center,
    Attractor,
    Repeller,
    Degenerate,
}

impl EqKind {
    pub fn name(self) -> &'static str {
        match self {
            EqKind::Saddle => "saddle",
            EqKind::Center => "center",
            EqKind::Attractor => "attractor",
            EqKind::Repeller => "repeller",
            EqKind::Degenerate => "degenerate",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Equilibrium {
    pub c: [f64; 2],
    pub kind: EqKind,
    pub trace: f64,
    pub det: f64,
    pub on_boundary: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Portrait {
    pub j: usize,
    pub k: usize,
    /// Isolated equilibria.
    pub equilibria: Vec<Equilibrium>,
    /// Newton limits with singular Jacobian, i.e. points of a curve of equilibria.
    pub degenerate: Vec<[f64; 2]>,
    pub lines: Option<[[f64; 2]; 2]>,
    #[serde(skip)]
    pub streamlines: Vec<Vec<[f64; 2]>>,
}

impl Portrait {
    pub fn count(&self, kind: EqKind) -> usize {
        self.equilibria.iter().filter(|e| e.kind == kind).count()
    }
}

fn field(model: &LatticeModel, j: usize, k: usize, p: [f64; 2]) -> Result<[f64; 2], ChartError> {
    let v = reduced_field(model, j, k, Complex64::new(p[0], p[1]))?;
    Ok([v.re, v.im])
}

/// Finite-difference Jacobian; steps that would leave the disk are taken inward.
fn jacobian(model: &LatticeModel, j: usize, k: usize, p: [f64; 2]) -> Result<[[f64; 2]; 2], ChartError> {
    let h = 1e-6;
    let f0 = field(model, j, k, p)?;
    let mut jac = [[0.0; 2]; 2];
    for d in 0..2 {
        let mut a = p;
        let mut b = p;
        a[d] += h;
        b[d] -= h;
        let inside = |q: [f64; 2]| q[0].hypot(q[1]) <= 1.0;
        let col = match (inside(a), inside(b)) {
            (true, true) => {
                let (fa, fb) = (field(model, j, k, a)?, field(model, j, k, b)?);
                [(fa[0] - fb[0]) / (2.0 * h), (fa[1] - fb[1]) / (2.0 * h)]
            }
            (true, false) => {
                let fa = field(model, j, k, a)?;
                [(fa[0] - f0[0]) / h, (fa[1] - f0[1]) / h]
            }
            _ => {
                let fb = field(model, j, k, b)?;
                [(f0[0] - fb[0]) / h, (f0[1] - fb[1]) / h]
            }
        };
        jac[0][d] = col[0];
        jac[1][d] = col[1];
    }
    Ok(jac)
}

fn classify(jac: [[f64; 2]; 2]) -> (EqKind, f64, f64) {
    let tr = jac[0][0] + jac[1][1];
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let scale = jac.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let kind = if det.abs() < 1e-7 * scale * scale {
        EqKind::Degenerate
    } else if det < 0.0 {
        EqKind::Saddle
    } else if tr.abs() < 1e-5 * scale {
        EqKind::Center
    } else if tr < 0.0 {
        EqKind::Attractor
    } else {
        EqKind::Repeller
    };
    (kind, tr, det)
}

fn newton(model: &LatticeModel, j: usize, k: usize, mut p: [f64; 2]) -> Option<[f64; 2]> {
    for _ in 0..60 {
        let f = field(model, j, k, p).ok()?;
        if f[0].hypot(f[1]) < 1e-14 {
            return Some(p);
        }
        let jac = jacobian(model, j, k, p).ok()?;
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det.abs() < 1e-300 {
            return None;
        }
        let dx = (jac[1][1] * f[0] - jac[0][1] * f[1]) / det;
        let dy = (jac[0][0] * f[1] - jac[1][0] * f[0]) / det;
        p = [p[0] - dx, p[1] - dy];
        if p[0].hypot(p[1]) > 1.0 {
            return None;
        }
    }
    let f = field(model, j, k, p).ok()?;
    (f[0].hypot(f[1]) < 1e-11).then_some(p)
}

/// Zeros of the tangential component on the invariant circle `|c| = 1`.
fn boundary_zeros(model: &LatticeModel, j: usize, k: usize) -> Vec<[f64; 2]> {
    let g = |phi: f64| {
        let c = [phi.cos(), phi.sin()];
        field(model, j, k, c).map(|v| -c[1] * v[0] + c[0] * v[1]).unwrap_or(f64::NAN)
    };
    let m = 1440;
    let mut out = vec![];
    for i in 0..m {
        let (mut a, mut b) = (TAU * i as f64 / m as f64, TAU * (i + 1) as f64 / m as f64);
        let (mut ga, gb) = (g(a), g(b));
        if ga == 0.0 {
            out.push(a);
            continue;
        }
        if ga * gb >= 0.0 {
            continue;
        }
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            let gm = g(mid);
            if gm == 0.0 {
                a = mid;
                b = mid;
                break;
            }
            if ga * gm < 0.0 {
                b = mid;
            } else {
                a = mid;
                ga = gm;
            }
        }
        out.push(0.5 * (a + b));
    }
    out.into_iter().map(|phi| [phi.cos(), phi.sin()]).collect()
}

pub fn equilibria(model: &LatticeModel, j: usize, k: usize) -> Result<Vec<Equilibrium>, ChartError> {
    field(model, j, k, [0.0, 0.0])?;
    let mut pts: Vec<([f64; 2], bool)> = vec![];
    let push = |pts: &mut Vec<([f64; 2], bool)>, p: [f64; 2], b: bool| {
        if !pts.iter().any(|(q, _)| (q[0] - p[0]).hypot(q[1] - p[1]) < 1e-6) {
            pts.push((p, b));
        }
    };
    for p in boundary_zeros(model, j, k) {
        push(&mut pts, p, true);
    }
    let g = 24;
    for ix in 0..=g {
        for iy in 0..=g {
            let p = [-1.0 + 2.0 * ix as f64 / g as f64, -1.0 + 2.0 * iy as f64 / g as f64];
            if p[0].hypot(p[1]) > 0.98 {
                continue;
            }
            if let Some(q) = newton(model, j, k, p) {
                if q[0].hypot(q[1]) < 1.0 - 1e-7 {
                    push(&mut pts, q, false);
                }
            }
        }
    }
    let mut out = vec![];
    for (p, on_boundary) in pts {
        let (kind, trace, det) = classify(jacobian(model, j, k, p)?);
        out.push(Equilibrium { c: p, kind, trace, det, on_boundary });
    }
    out.sort_by(|a, b| (a.c[0].hypot(a.c[1]), a.c[1].atan2(a.c[0])).partial_cmp(&(b.c[0].hypot(b.c[1]), b.c[1].atan2(b.c[0]))).unwrap());
    Ok(out)
}

fn rk4_step(model: &LatticeModel, j: usize, k: usize, p: [f64; 2], h: f64) -> Option<[f64; 2]> {
    let f = |q: [f64; 2]| field(model, j, k, q).ok();
    let k1 = f(p)?;
    let k2 = f([p[0] + 0.5 * h * k1[0], p[1] + 0.5 * h * k1[1]])?;
    let k3 = f([p[0] + 0.5 * h * k2[0], p[1] + 0.5 * h * k2[1]])?;
    let k4 = f([p[0] + h * k3[0], p[1] + h * k3[1]])?;
    Some([p[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]), p[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])])
}

/// Arc-length parametrised streamline through `p`, traced both ways.
fn streamline(model: &LatticeModel, j: usize, k: usize, p: [f64; 2], ds: f64, steps: usize) -> Vec<[f64; 2]> {
    let trace = |dir: f64| {
        let mut v = vec![];
        let mut q = p;
        for _ in 0..steps {
            let f = match field(model, j, k, q) {
                Ok(f) => f,
                Err(_) => break,
            };
            let speed = f[0].hypot(f[1]);
            if speed < 1e-9 {
                break;
            }
            match rk4_step(model, j, k, q, dir * ds / speed) {
                Some(n) if n[0].hypot(n[1]) <= 1.0 => q = n,
                _ => break,
            }
            v.push(q);
            if v.len() > 20 && (q[0] - p[0]).hypot(q[1] - p[1]) < 0.5 * ds {
                break;
            }
        }
        v
    };
    let mut back = trace(-1.0);
    back.reverse();
    back.push(p);
    back.extend(trace(1.0));
    back
}

pub fn portrait(model: &LatticeModel, j: usize, k: usize, grid: usize) -> Result<Portrait, ChartError> {
    let (degenerate, equilibria): (Vec<_>, Vec<_>) = equilibria(model, j, k)?.into_iter().partition(|e| e.kind == EqKind::Degenerate);
    let degenerate = degenerate.into_iter().map(|e| e.c).collect();
    let lines = if k == j + 1 { heteroclinic_lines(model, j).ok() } else { None };
    let g = grid.max(2);
    let mut streamlines = vec![];
    for ix in 0..g {
        for iy in 0..g {
            let p = [-1.0 + (2 * ix + 1) as f64 / g as f64, -1.0 + (2 * iy + 1) as f64 / g as f64];
            if p[0].hypot(p[1]) >= 0.97 {
                continue;
            }
            let s = streamline(model, j, k, p, 0.01, 150);
            if s.len() > 2 {
                streamlines.push(s);
            }
        }
    }
    Ok(Portrait { j, k, equilibria, degenerate, lines, streamlines })
}

pub fn to_svg(p: &Portrait) -> String {
    let size = 600.0;
    let r = 260.0;
    let o = size / 2.0;
    let m = |q: [f64; 2]| (o + r * q[0], o - r * q[1]);
    let mut svg = Svg::new(size, size);
    svg.circle((o, o), r, "none", "black");
    svg.text((o, 24.0), &format!("reduced field, pair ({}, {})", p.j, p.k), 15.0, "middle");
    for s in &p.streamlines {
        let pts: Vec<(f64, f64)> = s.iter().map(|&q| m(q)).collect();
        svg.polyline(&pts, "#9ab", 0.8);
    }
    if let Some(ls) = p.lines {
        for d in ls {
            svg.line(m([-d[0], -d[1]]), m(d), "#d62728", 2.0);
        }
    }
    for &q in &p.degenerate {
        svg.circle(m(q), 2.0, "#777", "none");
    }
    for e in &p.equilibria {
        let at = m(e.c);
        match e.kind {
            EqKind::Saddle => svg.rect(at, 9.0, "#1f77b4"),
            EqKind::Center => svg.circle(at, 5.0, "white", "#2ca02c"),
            EqKind::Attractor => svg.circle(at, 5.0, "#2ca02c", "black"),
            EqKind::Repeller => svg.circle(at, 5.0, "#ff7f0e", "black"),
            EqKind::Degenerate => svg.circle(at, 5.0, "#777", "black"),
        }
    }
    svg.finish()
}

/// Columns: `kind,id,re_c,im_c,re_dc,im_dc`.
pub fn to_csv(model: &LatticeModel, p: &Portrait) -> String {
    let mut s = String::from("kind,id,re_c,im_c,re_dc,im_dc\n");
    let mut row = |kind: &str, id: usize, q: [f64; 2]| {
        let f = field(model, p.j, p.k, q).unwrap_or([f64::NAN; 2]);
        let _ = writeln!(s, "{kind},{id},{:.12e},{:.12e},{:.12e},{:.12e}", q[0], q[1], f[0], f[1]);
    };
    for (i, e) in p.equilibria.iter().enumerate() {
        row(e.kind.name(), i, e.c);
    }
    for (i, &q) in p.degenerate.iter().enumerate() {
        row("degenerate", i, q);
    }
    if let Some(ls) = p.lines {
        for (i, d) in ls.iter().enumerate() {
            for t in 0..=20 {
                let u = -1.0 + 0.1 * t as f64;
                row("line", i, [u * d[0], u * d[1]]);
            }
        }
    }
    for (i, l) in p.streamlines.iter().enumerate() {
        for q in l.iter().step_by(5) {
            row("stream", i, *q);
        }
    }
    s
}
