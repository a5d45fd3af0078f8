//! Three-layer CSG-Stump assembly: complement, intersection, union.
//!
//! For `K` primitive occupancies `O_k` and `J` intersection nodes:
//!
//! ```text
//! comp_k  = c_k (1 − O_k) + (1 − c_k) O_k
//! inter_j = min_k (1 − s_kj (1 − comp_k))
//! final   = max_j u_j · inter_j
//! ```
//!
//! Unselected primitives contribute the neutral value 1 to an intersection
//! and unselected nodes contribute 0 to the union, so the soft layers reduce
//! to boolean algebra on binary inputs. In hard mode a node that selects no
//! primitive is the empty set.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StumpMode {
    #[default]
    Soft,
    Hard,
}

/// Connection weights of a CSG-Stump. `inter_select` is row-major `K × J`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StumpRepr", into = "StumpRepr")]
pub struct StumpParams {
    n_prims: usize,
    n_nodes: usize,
    complement: Vec<f64>,
    inter_select: Vec<f64>,
    union_select: Vec<f64>,
    mode: StumpMode,
}

#[derive(Serialize, Deserialize)]
struct StumpRepr {
    complement: Vec<f64>,
    inter_select: Vec<Vec<f64>>,
    union_select: Vec<f64>,
    mode: StumpMode,
}

impl TryFrom<StumpRepr> for StumpParams {
    type Error = Error;

    fn try_from(r: StumpRepr) -> Result<Self> {
        let j = r.union_select.len();
        if r.inter_select.iter().any(|row| row.len() != j) {
            return Err(invalid(
                "every inter_select row needs one entry per intersection node",
            ));
        }
        let flat = r.inter_select.into_iter().flatten().collect();
        StumpParams::new(r.complement, flat, r.union_select, r.mode)
    }
}

impl From<StumpParams> for StumpRepr {
    fn from(s: StumpParams) -> Self {
        let j = s.n_nodes;
        StumpRepr {
            complement: s.complement,
            inter_select: s
                .inter_select
                .chunks(j.max(1))
                .map(<[f64]>::to_vec)
                .collect(),
            union_select: s.union_select,
            mode: s.mode,
        }
    }
}

/// Adjoints of one point's final occupancy.
#[derive(Clone, Debug)]
pub struct StumpGrad {
    pub complement: Vec<f64>,
    pub inter_select: Vec<f64>,
    pub union_select: Vec<f64>,
}

impl StumpGrad {
    pub fn zeros(k: usize, j: usize) -> Self {
        Self {
            complement: vec![0.0; k],
            inter_select: vec![0.0; k * j],
            union_select: vec![0.0; j],
        }
    }

    pub fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.complement.iter_mut().zip(&other.complement) {
            *a += b;
        }
        for (a, b) in self.inter_select.iter_mut().zip(&other.inter_select) {
            *a += b;
        }
        for (a, b) in self.union_select.iter_mut().zip(&other.union_select) {
            *a += b;
        }
        self
    }
}

impl StumpParams {
    pub fn new(
        complement: Vec<f64>,
        inter_select: Vec<f64>,
        union_select: Vec<f64>,
        mode: StumpMode,
    ) -> Result<Self> {
        let k = complement.len();
        let j = union_select.len();
        if j == 0 {
            return Err(invalid("a stump needs at least one intersection node"));
        }
        if inter_select.len() != k * j {
            return Err(Error::DimensionMismatch(format!(
                "inter_select has {} entries, expected {k}×{j}",
                inter_select.len()
            )));
        }
        let all = complement.iter().chain(&inter_select).chain(&union_select);
        match mode {
            StumpMode::Soft => {
                if let Some(v) = all.clone().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(invalid(format!(
                        "soft stump entries must lie in [0, 1], got {v}"
                    )));
                }
            }
            StumpMode::Hard => {
                if let Some(v) = all.clone().find(|v| **v != 0.0 && **v != 1.0) {
                    return Err(invalid(format!(
                        "hard stump entries must be 0 or 1, got {v}"
                    )));
                }
            }
        }
        Ok(Self {
            n_prims: k,
            n_nodes: j,
            complement,
            inter_select,
            union_select,
            mode,
        })
    }

    /// Union of all primitives, one per node.
    pub fn plain_union(k: usize) -> Result<Self> {
        let mut sel = vec![0.0; k * k];
        for i in 0..k {
            sel[i * k + i] = 1.0;
        }
        Self::new(vec![0.0; k], sel, vec![1.0; k.max(1)], StumpMode::Hard)
    }

    pub fn n_prims(&self) -> usize {
        self.n_prims
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn mode(&self) -> StumpMode {
        self.mode
    }

    pub fn complement(&self) -> &[f64] {
        &self.complement
    }

    pub fn inter_select(&self) -> &[f64] {
        &self.inter_select
    }

    pub fn select(&self, k: usize, j: usize) -> f64 {
        self.inter_select[k * self.n_nodes + j]
    }

    pub fn union_select(&self) -> &[f64] {
        &self.union_select
    }

    fn node_is_empty(&self, j: usize) -> bool {
        self.mode == StumpMode::Hard && (0..self.n_prims).all(|k| self.select(k, j) == 0.0)
    }

    /// Final occupancy of one point from its primitive occupancies.
    pub fn evaluate_point(&self, occ: &[f64]) -> f64 {
        let mut best = 0.0f64;
        for j in 0..self.n_nodes {
            let u = self.union_select[j];
            if u == 0.0 || self.node_is_empty(j) {
                continue;
            }
            let mut inter = 1.0f64;
            for (k, &o) in occ.iter().enumerate() {
                let c = self.complement[k];
                let comp = c * (1.0 - o) + (1.0 - c) * o;
                inter = inter.min(1.0 - self.select(k, j) * (1.0 - comp));
            }
            best = best.max(u * inter);
        }
        best
    }

    /// Value and backward pass of [`Self::evaluate_point`] scaled by `upstream`.
    /// Gradients flow through the active branch of every min and max.
    pub fn backward_point(
        &self,
        occ: &[f64],
        upstream: f64,
        grad: &mut StumpGrad,
        d_occ: &mut [f64],
    ) -> f64 {
        let mut best = 0.0f64;
        let mut arg: Option<(usize, usize, f64)> = None;
        for j in 0..self.n_nodes {
            let u = self.union_select[j];
            if u == 0.0 || self.node_is_empty(j) {
                continue;
            }
            let mut inter = 1.0f64;
            let mut kmin = usize::MAX;
            for (k, &o) in occ.iter().enumerate() {
                let c = self.complement[k];
                let comp = c * (1.0 - o) + (1.0 - c) * o;
                let v = 1.0 - self.select(k, j) * (1.0 - comp);
                if v < inter {
                    inter = v;
                    kmin = k;
                }
            }
            if u * inter > best || arg.is_none() {
                best = u * inter;
                arg = Some((j, kmin, inter));
            }
        }
        if let Some((j, k, inter)) = arg {
            if best > 0.0 || self.union_select[j] > 0.0 {
                grad.union_select[j] += upstream * inter;
                let g_inter = upstream * self.union_select[j];
                if k != usize::MAX {
                    let o = occ[k];
                    let c = self.complement[k];
                    let comp = c * (1.0 - o) + (1.0 - c) * o;
                    let s = self.select(k, j);
                    grad.inter_select[k * self.n_nodes + j] += -g_inter * (1.0 - comp);
                    let g_comp = g_inter * s;
                    grad.complement[k] += g_comp * (1.0 - 2.0 * o);
                    d_occ[k] += g_comp * (1.0 - 2.0 * c);
                }
            }
        }
        best
    }

    /// Final occupancy of every row of `occ` (`points × K`).
    pub fn evaluate(&self, occ: &DMatrix<f64>) -> Result<Vec<f64>> {
        if occ.ncols() != self.n_prims {
            return Err(Error::DimensionMismatch(format!(
                "occupancy has {} columns, stump expects {}",
                occ.ncols(),
                self.n_prims
            )));
        }
        let mut row = vec![0.0; self.n_prims];
        Ok((0..occ.nrows())
            .map(|r| {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = occ[(r, k)];
                }
                self.evaluate_point(&row)
            })
            .collect())
    }

    /// Entries `≥ threshold` become 1, the rest 0.
    pub fn binarize(&self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(invalid(format!(
                "binarization threshold must lie in (0, 1), got {threshold}"
            )));
        }
        let b = |v: &Vec<f64>| {
            v.iter()
                .map(|&x| if x >= threshold { 1.0 } else { 0.0 })
                .collect()
        };
        Ok(Self {
            n_prims: self.n_prims,
            n_nodes: self.n_nodes,
            complement: b(&self.complement),
            inter_select: b(&self.inter_select),
            union_select: b(&self.union_select),
            mode: StumpMode::Hard,
        })
    }

    /// CSG expression of a hard stump in terms of primitive indices.
    pub fn extract_csg(&self) -> Result<CsgNode> {
        if self.mode != StumpMode::Hard {
            return Err(invalid("extract_csg needs a binarized stump"));
        }
        let mut terms = Vec::new();
        for j in 0..self.n_nodes {
            if self.union_select[j] == 0.0 || self.node_is_empty(j) {
                continue;
            }
            let (neg, pos): (Vec<usize>, Vec<usize>) = (0..self.n_prims)
                .filter(|&k| self.select(k, j) == 1.0)
                .partition(|&k| self.complement[k] == 1.0);
            let pos = CsgNode::intersection(pos.into_iter().map(CsgNode::Primitive).collect());
            let neg = CsgNode::union(neg.into_iter().map(CsgNode::Primitive).collect());
            terms.push(match (pos, neg) {
                (Some(p), None) => p,
                (Some(p), Some(n)) => CsgNode::Difference(Box::new(p), Box::new(n)),
                (None, Some(n)) => CsgNode::Complement(Box::new(n)),
                (None, None) => unreachable!("node has at least one selected primitive"),
            });
        }
        Ok(CsgNode::union(terms).unwrap_or(CsgNode::Empty))
    }
}

/// Boolean expression over primitive indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CsgNode {
    Empty,
    Primitive(usize),
    Union(Vec<CsgNode>),
    Intersection(Vec<CsgNode>),
    Difference(Box<CsgNode>, Box<CsgNode>),
    /// Everything outside the child; only produced for nodes made of
    /// complemented primitives alone.
    Complement(Box<CsgNode>),
}

impl CsgNode {
    fn union(mut items: Vec<CsgNode>) -> Option<CsgNode> {
        match items.len() {
            0 => None,
            1 => items.pop(),
            _ => Some(CsgNode::Union(items)),
        }
    }

    fn intersection(mut items: Vec<CsgNode>) -> Option<CsgNode> {
        match items.len() {
            0 => None,
            1 => items.pop(),
            _ => Some(CsgNode::Intersection(items)),
        }
    }

    /// Membership given per-primitive membership.
    pub fn contains(&self, inside: &[bool]) -> bool {
        match self {
            CsgNode::Empty => false,
            CsgNode::Primitive(k) => inside[*k],
            CsgNode::Union(c) => c.iter().any(|n| n.contains(inside)),
            CsgNode::Intersection(c) => c.iter().all(|n| n.contains(inside)),
            CsgNode::Difference(a, b) => a.contains(inside) && !b.contains(inside),
            CsgNode::Complement(a) => !a.contains(inside),
        }
    }

    /// Signed value of the expression given per-primitive signed distances
    /// (positive inside): union is max, intersection min, difference
    /// `min(a, -b)` and complement negation. Nonnegative exactly where
    /// [`CsgNode::contains`] holds for `inside[k] = sdf[k] >= 0`, up to ties
    /// on primitive boundaries.
    pub fn signed_value(&self, sdf: &[f64]) -> f64 {
        match self {
            CsgNode::Empty => f64::NEG_INFINITY,
            CsgNode::Primitive(k) => sdf[*k],
            CsgNode::Union(c) => c
                .iter()
                .map(|n| n.signed_value(sdf))
                .fold(f64::NEG_INFINITY, f64::max),
            CsgNode::Intersection(c) => c
                .iter()
                .map(|n| n.signed_value(sdf))
                .fold(f64::INFINITY, f64::min),
            CsgNode::Difference(a, b) => a.signed_value(sdf).min(-b.signed_value(sdf)),
            CsgNode::Complement(a) => -a.signed_value(sdf),
        }
    }

    /// Primitive indices referenced by the expression, ascending.
    pub fn primitives(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect(&self, out: &mut Vec<usize>) {
        match self {
            CsgNode::Empty => {}
            CsgNode::Primitive(k) => out.push(*k),
            CsgNode::Union(c) | CsgNode::Intersection(c) => c.iter().for_each(|n| n.collect(out)),
            CsgNode::Difference(a, b) => {
                a.collect(out);
                b.collect(out);
            }
            CsgNode::Complement(a) => a.collect(out),
        }
    }
}

impl fmt::Display for CsgNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, op: &str, c: &[CsgNode]| {
            write!(f, "{op}(")?;
            for (i, n) in c.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{n}")?;
            }
            write!(f, ")")
        };
        match self {
            CsgNode::Empty => write!(f, "empty"),
            CsgNode::Primitive(k) => write!(f, "p{k}"),
            CsgNode::Union(c) => list(f, "union", c),
            CsgNode::Intersection(c) => list(f, "intersection", c),
            CsgNode::Difference(a, b) => write!(f, "difference({a}, {b})"),
            CsgNode::Complement(a) => write!(f, "complement({a})"),
        }
    }
}
