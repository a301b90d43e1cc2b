//! h-sets with product structure, contraction along exit blocks, and
//! grid-sampled verification of covering relations.
//!
//! Maps are handled in offset form: a [`CoverMap`] receives the offset of a
//! point from the domain's center and returns the offset of its image from the
//! target's center. This keeps tiny block radii meaningful when the centers
//! themselves are O(1).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BOUNDARY_TOL: f64 = 1e-12;
pub const MARGIN_MIN: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HSetError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no block or component named '{0}'")]
    UnknownBlock(String),
    #[error("'{0}' is an entry block and cannot be contracted")]
    ContractEntry(String),
    #[error("contraction value outside the unit ball (norm {0})")]
    OutOfBall(f64),
    #[error("partial contraction of a Euclidean block '{0}' is not supported")]
    PartialEuclid(String),
    #[error("singular exit block {0} at the center (det = {1:e})")]
    DegreeUndefined(usize, f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid h-set: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockNorm {
    Max,
    Euclid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    /// Ambient coordinate indices.
    pub comps: Vec<usize>,
    pub labels: Vec<String>,
    pub radius: f64,
    pub norm: BlockNorm,
}

impl Block {
    pub fn new(name: &str, comps: &[usize], labels: &[&str], radius: f64, norm: BlockNorm) -> Block {
        Block { name: name.into(), comps: comps.to_vec(), labels: labels.iter().map(|s| s.to_string()).collect(), radius, norm }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn norm_of(&self, q: &[f64]) -> f64 {
        match self.norm {
            BlockNorm::Max => q.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            BlockNorm::Euclid => q.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    /// Internal norm of the block part of an offset vector.
    pub fn internal_norm(&self, off: &[f64]) -> f64 {
        let q: Vec<f64> = self.comps.iter().map(|&i| off[i] / self.radius).collect();
        self.norm_of(&q)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HSet {
    pub name: String,
    pub center: Vec<f64>,
    pub exit: Vec<Block>,
    pub entry: Vec<Block>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Exit,
    Entry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Membership {
    Interior,
    Boundary(Side),
    Outside,
}

impl HSet {
    pub fn new(name: &str, center: Vec<f64>, exit: Vec<Block>, entry: Vec<Block>) -> Result<HSet, HSetError> {
        let h = HSet { name: name.into(), center, exit, entry };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), HSetError> {
        let d = self.center.len();
        let mut seen = vec![false; d];
        for b in self.exit.iter().chain(&self.entry) {
            if b.comps.is_empty() || b.labels.len() != b.comps.len() {
                return Err(HSetError::Invalid(format!("block '{}' malformed", b.name)));
            }
            if !(b.radius > 0.0) || !b.radius.is_finite() {
                return Err(HSetError::Invalid(format!("block '{}' has radius {}", b.name, b.radius)));
            }
            for &i in &b.comps {
                if i >= d || seen[i] {
                    return Err(HSetError::Invalid(format!("component {i} of block '{}' out of range or repeated", b.name)));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(HSetError::Invalid("blocks do not cover every coordinate".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn u(&self) -> usize {
        self.exit.iter().map(Block::dim).sum()
    }

    pub fn s(&self) -> usize {
        self.entry.iter().map(Block::dim).sum()
    }

    pub fn block(&self, name: &str) -> Option<(&Block, Side)> {
        self.exit
            .iter()
            .find(|b| b.name == name)
            .map(|b| (b, Side::Exit))
            .or_else(|| self.entry.iter().find(|b| b.name == name).map(|b| (b, Side::Entry)))
    }

    pub fn membership_offset(&self, off: &[f64]) -> Result<Membership, HSetError> {
        if off.len() != self.dim() {
            return Err(HSetError::Dimension(format!("point has {} coordinates, set has {}", off.len(), self.dim())));
        }
        let ex: Vec<f64> = self.exit.iter().map(|b| b.internal_norm(off)).collect();
        let en: Vec<f64> = self.entry.iter().map(|b| b.internal_norm(off)).collect();
        if ex.iter().chain(&en).any(|&v| !(v <= 1.0 + BOUNDARY_TOL)) {
            return Ok(Membership::Outside);
        }
        if ex.iter().any(|&v| v >= 1.0 - BOUNDARY_TOL) {
            return Ok(Membership::Boundary(Side::Exit));
        }
        if en.iter().any(|&v| v >= 1.0 - BOUNDARY_TOL) {
            return Ok(Membership::Boundary(Side::Entry));
        }
        Ok(Membership::Interior)
    }

    pub fn membership(&self, p: &[f64]) -> Result<Membership, HSetError> {
        if p.len() != self.dim() {
            return Err(HSetError::Dimension(format!("point has {} coordinates, set has {}", p.len(), self.dim())));
        }
        let off: Vec<f64> = p.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        self.membership_offset(&off)
    }

    /// Offset of an internal point.
    pub fn offset_of(&self, q: &[f64]) -> Vec<f64> {
        let mut off = vec![0.0; self.dim()];
        for b in self.exit.iter().chain(&self.entry) {
            for &i in &b.comps {
                off[i] = q[i] * b.radius;
            }
        }
        off
    }

    pub fn internal_of(&self, off: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.dim()];
        for b in self.exit.iter().chain(&self.entry) {
            for &i in &b.comps {
                q[i] = off[i] / b.radius;
            }
        }
        q
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractedHSet {
    pub parent: HSet,
    pub dropped_block: String,
    /// Ambient indices of the fixed components.
    pub fixed: Vec<usize>,
    /// Internal values of the fixed components.
    pub value: Vec<f64>,
}

/// Fix an exit block (or a single component of one) at internal value `v`.
pub fn contract(h: &HSet, block: &str, v: &[f64]) -> Result<ContractedHSet, HSetError> {
    let (b, side) = match h.block(block) {
        Some(x) => (x.0.clone(), Some(x.1)),
        None => {
            let found = h
                .exit
                .iter()
                .map(|b| (b, Side::Exit))
                .chain(h.entry.iter().map(|b| (b, Side::Entry)))
                .find_map(|(b, s)| b.labels.iter().position(|l| l == block).map(|p| (b, s, p)));
            match found {
                Some((b, s, p)) => {
                    if s == Side::Entry {
                        return Err(HSetError::ContractEntry(block.into()));
                    }
                    if b.norm == BlockNorm::Euclid && b.dim() > 1 {
                        return Err(HSetError::PartialEuclid(b.name.clone()));
                    }
                    (Block::new(block, &[b.comps[p]], &[block], b.radius, BlockNorm::Max), None)
                }
                None => return Err(HSetError::UnknownBlock(block.into())),
            }
        }
    };
    if side == Some(Side::Entry) {
        return Err(HSetError::ContractEntry(block.into()));
    }
    if v.len() != b.dim() {
        return Err(HSetError::Dimension(format!("value has {} entries, block '{}' has {}", v.len(), block, b.dim())));
    }
    let nv = b.norm_of(v);
    if nv > 1.0 {
        return Err(HSetError::OutOfBall(nv));
    }
    Ok(ContractedHSet { parent: h.clone(), dropped_block: block.into(), fixed: b.comps.clone(), value: v.to_vec() })
}

impl ContractedHSet {
    pub fn membership_offset(&self, off: &[f64]) -> Result<Membership, HSetError> {
        if off.len() != self.parent.dim() {
            return Err(HSetError::Dimension(format!("point has {} coordinates, set has {}", off.len(), self.parent.dim())));
        }
        let q = self.parent.internal_of(off);
        for (&i, &v) in self.fixed.iter().zip(&self.value) {
            if (q[i] - v).abs() > BOUNDARY_TOL {
                return Ok(Membership::Outside);
            }
        }
        self.parent.membership_offset(off)
    }

    pub fn membership(&self, p: &[f64]) -> Result<Membership, HSetError> {
        if p.len() != self.parent.dim() {
            return Err(HSetError::Dimension(format!("point has {} coordinates, set has {}", p.len(), self.parent.dim())));
        }
        let off: Vec<f64> = p.iter().zip(&self.parent.center).map(|(a, c)| a - c).collect();
        self.membership_offset(&off)
    }

    pub fn u(&self) -> usize {
        self.parent.u() - self.fixed.len()
    }

    pub fn as_domain(&self) -> Domain {
        Domain::from_contracted(self)
    }
}

/// Sampling view of an h-set or a contraction: free blocks plus fixed offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub parent: HSet,
    pub exit: Vec<Block>,
    pub entry: Vec<Block>,
    pub fixed: Vec<(usize, f64)>,
}

impl Domain {
    pub fn from_hset(h: &HSet) -> Domain {
        Domain { parent: h.clone(), exit: h.exit.clone(), entry: h.entry.clone(), fixed: vec![] }
    }

    pub fn from_contracted(c: &ContractedHSet) -> Domain {
        let strip = |bs: &[Block]| -> Vec<Block> {
            bs.iter()
                .filter_map(|b| {
                    let keep: Vec<usize> = (0..b.dim()).filter(|&k| !c.fixed.contains(&b.comps[k])).collect();
                    if keep.is_empty() {
                        None
                    } else {
                        Some(Block {
                            name: b.name.clone(),
                            comps: keep.iter().map(|&k| b.comps[k]).collect(),
                            labels: keep.iter().map(|&k| b.labels[k].clone()).collect(),
                            radius: b.radius,
                            norm: b.norm,
                        })
                    }
                })
                .collect()
        };
        let fixed = c
            .fixed
            .iter()
            .zip(&c.value)
            .map(|(&i, &v)| {
                let r = c.parent.exit.iter().find(|b| b.comps.contains(&i)).unwrap().radius;
                (i, v * r)
            })
            .collect();
        Domain { parent: c.parent.clone(), exit: strip(&c.parent.exit), entry: strip(&c.parent.entry), fixed }
    }

    pub fn dim(&self) -> usize {
        self.parent.dim()
    }

    fn base_offset(&self) -> Vec<f64> {
        let mut off = vec![0.0; self.dim()];
        for &(i, v) in &self.fixed {
            off[i] = v;
        }
        off
    }

    fn free_blocks(&self) -> Vec<&Block> {
        self.exit.iter().chain(&self.entry).collect()
    }
}

impl From<&HSet> for Domain {
    fn from(h: &HSet) -> Domain {
        Domain::from_hset(h)
    }
}

impl From<&ContractedHSet> for Domain {
    fn from(c: &ContractedHSet) -> Domain {
        Domain::from_contracted(c)
    }
}

/// A map between h-sets in offset form.
pub trait CoverMap: Sync {
    /// Image offset (from the target center) of the domain offset `p`.
    fn eval(&self, p: &[f64]) -> Result<Vec<f64>, String>;

    /// Optional custom homotopy `H_t`, `t ∈ [0, 1]`, with `H_0 = eval`.
    /// `None` selects the straight line to the block-diagonal affinization.
    fn homotopy(&self, _t: f64, _p: &[f64]) -> Option<Result<Vec<f64>, String>> {
        None
    }
}

/// A plain point map `f` between sets with centers `c_n` and `c_m`.
pub struct PointMap<F> {
    pub f: F,
    pub from: Vec<f64>,
    pub to: Vec<f64>,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> CoverMap for PointMap<F> {
    fn eval(&self, p: &[f64]) -> Result<Vec<f64>, String> {
        let x: Vec<f64> = p.iter().zip(&self.from).map(|(a, c)| a + c).collect();
        let y = (self.f)(&x);
        Ok(y.iter().zip(&self.to).map(|(a, c)| a - c).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub face: usize,
    pub interior: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { face: 5, interior: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JacobianMode {
    /// Central differences in internal coordinates.
    FiniteDifference,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageMargins {
    pub t: f64,
    /// `1 − max internal entry norm` of images over the whole set.
    pub entry: f64,
    /// `min internal exit norm − 1` of images over the exit faces.
    pub exit: f64,
    pub entry_worst: Option<Vec<f64>>,
    pub exit_worst: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoveringVerdict {
    pub pass: bool,
    pub w: i32,
    pub exit_dets: Vec<f64>,
    /// `1 − ‖L_j⁻¹ b_j‖` for the affine end of the homotopy (target exit center hit inside the face).
    pub center_margin: f64,
    /// Largest exit-row coupling outside the paired exit block at the affine end.
    pub h1_offdiag: f64,
    pub stages: Vec<StageMargins>,
    pub entry_margin: f64,
    pub exit_margin: f64,
    pub samples: usize,
    pub failures: Vec<String>,
}

fn cube_grid(dim: usize, g: usize) -> Vec<Vec<f64>> {
    let g = g.max(2);
    let vals: Vec<f64> = (0..g).map(|i| -1.0 + 2.0 * i as f64 / (g - 1) as f64).collect();
    let mut out = vec![vec![]];
    for _ in 0..dim {
        let mut next = vec![];
        for p in &out {
            for &v in &vals {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

fn squash(p: &mut [f64]) {
    let inf = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let two = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if two > 0.0 {
        for v in p.iter_mut() {
            *v *= inf / two;
        }
    }
}

/// Grid over a block's unit ball (or its boundary sphere when `face`).
fn block_grid(b: &Block, g: usize, face: bool) -> Vec<Vec<f64>> {
    if face && b.dim() == 2 && b.norm == BlockNorm::Euclid {
        let m = 4 * (g.max(2) - 1);
        return (0..m)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / m as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
    }
    let mut pts: Vec<Vec<f64>> = {
        cube_grid(b.dim(), g)
            .into_iter()
            .filter(|p| !face || p.iter().any(|v| (v.abs() - 1.0).abs() < 1e-15))
            .collect()
    };
    if b.norm == BlockNorm::Euclid {
        for p in pts.iter_mut() {
            squash(p);
        }
    }
    pts
}

fn product(parts: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<Vec<f64>>> = vec![vec![]];
    for part in parts {
        let mut next = vec![];
        for p in &out {
            for q in part {
                let mut r = p.clone();
                r.push(q.clone());
                next.push(r);
            }
        }
        out = next;
    }
    out
}

fn assemble(dom: &Domain, blocks: &[&Block], pieces: &[Vec<f64>]) -> Vec<f64> {
    let mut off = dom.base_offset();
    for (b, q) in blocks.iter().zip(pieces) {
        for (k, &i) in b.comps.iter().enumerate() {
            off[i] = q[k] * b.radius;
        }
    }
    off
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())?;
        if a[p][c].abs() < 1e-300 {
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

fn det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = a.to_vec();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap()).unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(c, p);
            d = -d;
        }
        d *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    d
}

struct EndOf<'a>(&'a dyn CoverMap);

impl CoverMap for EndOf<'_> {
    fn eval(&self, p: &[f64]) -> Result<Vec<f64>, String> {
        self.0.homotopy(1.0, p).unwrap()
    }
}

struct Affine {
    /// Image offset of the domain center, in target internal units.
    b: Vec<f64>,
    /// Internal Jacobian restricted to the free domain coordinates: `jac[i][k]`, `k` over ambient indices.
    jac: Vec<Vec<f64>>,
}

fn target_internal(m: &HSet, img: &[f64]) -> Vec<f64> {
    m.internal_of(img)
}

fn affinize(f: &dyn CoverMap, dom: &Domain, m: &HSet) -> Result<Affine, String> {
    let d = dom.dim();
    let base = dom.base_offset();
    let b = target_internal(m, &f.eval(&base)?);
    let mut jac = vec![vec![0.0; d]; d];
    let h = 1e-4;
    for blk in dom.free_blocks() {
        for &k in &blk.comps {
            let mut p = base.clone();
            p[k] = base[k] + h * blk.radius;
            let fp = target_internal(m, &f.eval(&p)?);
            p[k] = base[k] - h * blk.radius;
            let fm = target_internal(m, &f.eval(&p)?);
            for i in 0..d {
                jac[i][k] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
    }
    Ok(Affine { b, jac })
}

/// Exit rows keep only their paired exit block.
fn diagonalize(aff: &Affine, dom: &Domain, m: &HSet) -> Vec<Vec<f64>> {
    let mut j = aff.jac.clone();
    for (bn, bm) in dom.exit.iter().zip(&m.exit) {
        for &i in &bm.comps {
            for k in 0..j[i].len() {
                if !bn.comps.contains(&k) {
                    j[i][k] = 0.0;
                }
            }
        }
    }
    j
}

fn stage_eval(f: &dyn CoverMap, aff: &Affine, diag: &[Vec<f64>], dom: &Domain, m: &HSet, t: f64, off: &[f64]) -> Result<Vec<f64>, String> {
    if t == 0.0 {
        return Ok(target_internal(m, &f.eval(off)?));
    }
    if let Some(r) = f.homotopy(t, off) {
        return Ok(target_internal(m, &r?));
    }
    let q = dom.parent.internal_of(off);
    let base_q = dom.parent.internal_of(&dom.base_offset());
    let lin: Vec<f64> = (0..q.len())
        .map(|i| aff.b[i] + diag[i].iter().zip(q.iter().zip(&base_q)).map(|(a, (x, x0))| a * (x - x0)).sum::<f64>())
        .collect();
    if t == 1.0 {
        return Ok(lin);
    }
    let fx = target_internal(m, &f.eval(off)?);
    Ok(fx.iter().zip(&lin).map(|(a, b)| (1.0 - t) * a + t * b).collect())
}

fn check_shapes(dom: &Domain, m: &HSet) -> Result<(), HSetError> {
    if dom.dim() != m.dim() {
        return Err(HSetError::Shape(format!("domain dimension {} vs target {}", dom.dim(), m.dim())));
    }
    if dom.exit.len() != m.exit.len() {
        return Err(HSetError::Shape(format!("{} exit blocks vs {}", dom.exit.len(), m.exit.len())));
    }
    for (a, b) in dom.exit.iter().zip(&m.exit) {
        if a.dim() != b.dim() {
            return Err(HSetError::Shape(format!("exit block '{}' ({}) vs '{}' ({})", a.name, a.dim(), b.name, b.dim())));
        }
    }
    Ok(())
}

fn block_internal_norm(b: &Block, q: &[f64]) -> f64 {
    let v: Vec<f64> = b.comps.iter().map(|&i| q[i]).collect();
    b.norm_of(&v)
}

/// Homotopy parameters sampled by [`check_covering`].
pub const HOMOTOPY_TS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

pub fn check_covering(f: &dyn CoverMap, n: &Domain, m: &HSet, grid: GridSpec, _mode: JacobianMode) -> Result<CoveringVerdict, HSetError> {
    check_shapes(n, m)?;
    let mut failures = vec![];
    let aff = match affinize(f, n, m) {
        Ok(a) => a,
        Err(e) => {
            return Ok(CoveringVerdict {
                pass: false,
                w: 0,
                exit_dets: vec![],
                center_margin: f64::NEG_INFINITY,
                h1_offdiag: 0.0,
                stages: vec![],
                entry_margin: f64::NEG_INFINITY,
                exit_margin: f64::NEG_INFINITY,
                samples: 0,
                failures: vec![format!("map undefined near the center: {e}")],
            })
        }
    };
    let custom = f.homotopy(1.0, &n.base_offset()).is_some();
    let end = if custom {
        match affinize(&EndOf(f), n, m) {
            Ok(a) => a,
            Err(e) => return Err(HSetError::Shape(format!("homotopy end undefined: {e}"))),
        }
    } else {
        Affine { b: aff.b.clone(), jac: aff.jac.clone() }
    };
    let diag = diagonalize(&end, n, m);
    let mut h1_offdiag: f64 = 0.0;
    for i in 0..diag.len() {
        for k in 0..diag.len() {
            h1_offdiag = h1_offdiag.max((diag[i][k] - end.jac[i][k]).abs());
        }
    }
    // degree data and the affine center condition
    let mut dets = vec![];
    let mut w = 1;
    let mut center_margin = f64::INFINITY;
    for (idx, (bn, bm)) in n.exit.iter().zip(&m.exit).enumerate() {
        let a: Vec<Vec<f64>> = bm.comps.iter().map(|&i| bn.comps.iter().map(|&k| diag[i][k]).collect()).collect();
        let dt = det(&a);
        let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
        if dt.abs() <= 1e-12 * scale.powi(a.len() as i32) || dt == 0.0 {
            return Err(HSetError::DegreeUndefined(idx, dt));
        }
        dets.push(dt);
        if dt < 0.0 {
            w = -w;
        }
        let rhs: Vec<f64> = bm.comps.iter().map(|&i| -end.b[i]).collect();
        let x = solve(a, rhs).ok_or(HSetError::DegreeUndefined(idx, dt))?;
        let nx = bn.norm_of(&x);
        center_margin = center_margin.min(1.0 - nx);
    }
    if n.exit.is_empty() {
        center_margin = 1.0;
    }
    if !(center_margin > MARGIN_MIN) {
        failures.push(format!("affine exit image misses the target center (margin {center_margin:.3e})"));
    }

    let blocks = n.free_blocks();
    let interior: Vec<Vec<f64>> = product(&blocks.iter().map(|b| block_grid(b, grid.interior, false)).collect::<Vec<_>>())
        .into_iter()
        .map(|pieces| assemble(n, &blocks, &pieces))
        .collect();
    let mut faces: Vec<(usize, Vec<f64>)> = vec![];
    for (fi, fb) in n.exit.iter().enumerate() {
        let parts: Vec<Vec<Vec<f64>>> = blocks
            .iter()
            .map(|b| if b.name == fb.name && b.comps == fb.comps { block_grid(b, grid.face, true) } else { block_grid(b, grid.face, false) })
            .collect();
        for pieces in product(&parts) {
            faces.push((fi, assemble(n, &blocks, &pieces)));
        }
    }
    let samples = interior.len() + faces.len();
    let mut stages = vec![];
    for &t in &HOMOTOPY_TS {
        let ent: Vec<(f64, Vec<f64>)> = interior
            .par_iter()
            .map(|off| match stage_eval(f, &aff, &diag, n, m, t, off) {
                Ok(q) => {
                    let worst = m.entry.iter().map(|b| block_internal_norm(b, &q)).fold(0.0f64, f64::max);
                    let bad = q.iter().any(|v| !v.is_finite());
                    (if bad { f64::NEG_INFINITY } else { 1.0 - worst }, off.clone())
                }
                Err(_) => (f64::NEG_INFINITY, off.clone()),
            })
            .collect();
        let ext: Vec<(f64, Vec<f64>)> = faces
            .par_iter()
            .map(|(fi, off)| match stage_eval(f, &aff, &diag, n, m, t, off) {
                Ok(q) => {
                    let nn = block_internal_norm(&m.exit[*fi], &q);
                    (if nn.is_finite() { nn - 1.0 } else { f64::NEG_INFINITY }, off.clone())
                }
                Err(_) => (f64::NEG_INFINITY, off.clone()),
            })
            .collect();
        let (em, ew) = ent.into_iter().fold((f64::INFINITY, None), |(m0, w0), (v, p)| if v < m0 { (v, Some(p)) } else { (m0, w0) });
        let (xm, xw) = ext.into_iter().fold((f64::INFINITY, None), |(m0, w0), (v, p)| if v < m0 { (v, Some(p)) } else { (m0, w0) });
        let em = if m.entry.is_empty() { 1.0 } else { em };
        let xm = if n.exit.is_empty() { 1.0 } else { xm };
        if !(em > MARGIN_MIN) {
            failures.push(format!("entry condition fails at t = {t} (margin {em:.3e})"));
        }
        if !(xm > MARGIN_MIN) {
            failures.push(format!("exit condition fails at t = {t} (margin {xm:.3e})"));
        }
        stages.push(StageMargins { t, entry: em, exit: xm, entry_worst: ew, exit_worst: xw });
    }
    let entry_margin = stages.iter().map(|s| s.entry).fold(f64::INFINITY, f64::min);
    let exit_margin = stages.iter().map(|s| s.exit).fold(f64::INFINITY, f64::min);
    Ok(CoveringVerdict { pass: failures.is_empty(), w, exit_dets: dets, center_margin, h1_offdiag, stages, entry_margin, exit_margin, samples, failures })
}

pub struct Link<'a> {
    pub name: String,
    pub domain: Domain,
    pub map: &'a dyn CoverMap,
    pub target: HSet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinkResult {
    pub name: String,
    pub verdict: Option<CoveringVerdict>,
    pub error: Option<String>,
}

impl LinkResult {
    pub fn pass(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.pass)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainVerdict {
    pub pass: bool,
    pub links: Vec<LinkResult>,
    pub first_failure: Option<usize>,
}

/// Shapes compose when each domain is the previous target or a contraction of it.
pub fn check_chain_shapes(links: &[Link]) -> Result<(), HSetError> {
    for w in links.windows(2) {
        if w[1].domain.parent != w[0].target {
            return Err(HSetError::Shape(format!("link '{}' does not start where '{}' ends", w[1].name, w[0].name)));
        }
    }
    for l in links {
        check_shapes(&l.domain, &l.target)?;
    }
    Ok(())
}

pub fn check_chain(links: &[Link], grid: GridSpec) -> Result<ChainVerdict, HSetError> {
    check_chain_shapes(links)?;
    let results: Vec<LinkResult> = links
        .par_iter()
        .map(|l| match check_covering(l.map, &l.domain, &l.target, grid, JacobianMode::FiniteDifference) {
            Ok(v) => LinkResult { name: l.name.clone(), verdict: Some(v), error: None },
            Err(e) => LinkResult { name: l.name.clone(), verdict: None, error: Some(e.to_string()) },
        })
        .collect();
    let first_failure = results.iter().position(|r| !r.pass());
    Ok(ChainVerdict { pass: first_failure.is_none(), links: results, first_failure })
}
