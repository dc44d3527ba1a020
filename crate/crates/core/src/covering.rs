//! Good coverings `(U_i, U*_i, U#_i)` of a set `A` inside `A#`, the weighted
//! graph they induce, and the closed-form patching constants that turn local
//! Sobolev/Poincaré inequalities plus a discrete one into a global one.
//!
//! Sets are finite collections of atoms of a common measure space. Closures
//! are modelled through an optional atom adjacency: two cells have
//! intersecting closures when an atom of one equals or neighbours an atom of
//! the other. Without adjacency, closures are the sets themselves.

use std::collections::HashMap;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::graph::{Vertex, WeightedGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub id: i64,
    pub measure: f64,
}

/// One indexed triple of the covering, as bitsets over atom indices.
#[derive(Debug, Clone)]
pub struct Cell {
    pub inner: FixedBitSet,
    pub buffer: FixedBitSet,
    pub outer: FixedBitSet,
}

#[derive(Debug, Clone)]
pub struct GoodCovering {
    atoms: Vec<Atom>,
    cells: Vec<Cell>,
    target: FixedBitSet,
    target_sharp: FixedBitSet,
    /// Neighbour lists over atom indices, when closures are dilated.
    adjacency: Option<Vec<Vec<usize>>>,
}

#[derive(Serialize, Deserialize)]
struct CellFile {
    #[serde(rename = "U")]
    u: Vec<i64>,
    #[serde(rename = "Ustar")]
    ustar: Vec<i64>,
    #[serde(rename = "Usharp")]
    usharp: Vec<i64>,
}

#[derive(Serialize, Deserialize)]
struct CoveringFile {
    atoms: Vec<Atom>,
    cells: Vec<CellFile>,
    #[serde(rename = "A")]
    a: Vec<i64>,
    #[serde(rename = "Asharp")]
    asharp: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adjacency: Option<Vec<[i64; 2]>>,
}

/// Cell sets given by atom index, used to build a covering in code.
#[derive(Debug, Clone, Default)]
pub struct CellSpec {
    pub inner: Vec<usize>,
    pub buffer: Vec<usize>,
    pub outer: Vec<usize>,
}

impl GoodCovering {
    /// Builds a covering over atoms `0..measures.len()`.
    pub fn new(
        measures: &[f64],
        cells: Vec<CellSpec>,
        target: &[usize],
        target_sharp: &[usize],
        adjacency: Option<&[(usize, usize)]>,
    ) -> Result<Self> {
        let n = measures.len();
        let atoms: Vec<Atom> = measures
            .iter()
            .enumerate()
            .map(|(i, &m)| Atom { id: i as i64, measure: m })
            .collect();
        for a in &atoms {
            if !(a.measure.is_finite() && a.measure >= 0.0) {
                return domain(format!("atom {} has invalid measure {}", a.id, a.measure));
            }
        }
        let to_set = |idx: &[usize]| -> Result<FixedBitSet> {
            let mut s = FixedBitSet::with_capacity(n);
            for &i in idx {
                if i >= n {
                    return domain(format!("atom index {i} out of range"));
                }
                s.insert(i);
            }
            Ok(s)
        };
        let cells = cells
            .iter()
            .map(|c| {
                Ok(Cell { inner: to_set(&c.inner)?, buffer: to_set(&c.buffer)?, outer: to_set(&c.outer)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let adjacency = match adjacency {
            Some(pairs) => {
                let mut adj = vec![Vec::new(); n];
                for &(a, b) in pairs {
                    if a >= n || b >= n {
                        return domain("adjacency names unknown atom");
                    }
                    adj[a].push(b);
                    adj[b].push(a);
                }
                Some(adj)
            }
            None => None,
        };
        Ok(Self { atoms, cells, target: to_set(target)?, target_sharp: to_set(target_sharp)?, adjacency })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CoveringFile = serde_json::from_str(text)?;
        let index: HashMap<i64, usize> = file.atoms.iter().enumerate().map(|(k, a)| (a.id, k)).collect();
        if index.len() != file.atoms.len() {
            return domain("duplicate atom id");
        }
        let lookup = |ids: &[i64]| -> Result<Vec<usize>> {
            ids.iter()
                .map(|id| index.get(id).copied().ok_or_else(|| Error::Domain(format!("unknown atom id {id}"))))
                .collect()
        };
        let cells = file
            .cells
            .iter()
            .map(|c| Ok(CellSpec { inner: lookup(&c.u)?, buffer: lookup(&c.ustar)?, outer: lookup(&c.usharp)? }))
            .collect::<Result<Vec<_>>>()?;
        let adjacency = match &file.adjacency {
            Some(pairs) => Some(
                pairs
                    .iter()
                    .map(|p| Ok((lookup(&[p[0]])?[0], lookup(&[p[1]])?[0])))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        let measures: Vec<f64> = file.atoms.iter().map(|a| a.measure).collect();
        let mut cov = Self::new(&measures, cells, &lookup(&file.a)?, &lookup(&file.asharp)?, adjacency.as_deref())?;
        for (slot, atom) in cov.atoms.iter_mut().zip(&file.atoms) {
            slot.id = atom.id;
        }
        Ok(cov)
    }

    pub fn to_json(&self) -> String {
        let ids = |s: &FixedBitSet| -> Vec<i64> { s.ones().map(|i| self.atoms[i].id).collect() };
        let file = CoveringFile {
            atoms: self.atoms.clone(),
            cells: self
                .cells
                .iter()
                .map(|c| CellFile { u: ids(&c.inner), ustar: ids(&c.buffer), usharp: ids(&c.outer) })
                .collect(),
            a: ids(&self.target),
            asharp: ids(&self.target_sharp),
            adjacency: self.adjacency.as_ref().map(|adj| {
                let mut pairs = Vec::new();
                for (a, nbrs) in adj.iter().enumerate() {
                    for &b in nbrs {
                        if a < b {
                            pairs.push([self.atoms[a].id, self.atoms[b].id]);
                        }
                    }
                }
                pairs
            }),
        };
        serde_json::to_string(&file).expect("covering serializes")
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn target(&self) -> &FixedBitSet {
        &self.target
    }

    pub fn target_sharp(&self) -> &FixedBitSet {
        &self.target_sharp
    }

    pub fn measure_of(&self, set: &FixedBitSet) -> f64 {
        set.ones().map(|i| self.atoms[i].measure).sum()
    }

    /// Returns the covering with cells listed in the given order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = self.clone();
        out.cells = order.iter().map(|&i| self.cells[i].clone()).collect();
        out
    }

    fn closure(&self, set: &FixedBitSet) -> FixedBitSet {
        let mut out = set.clone();
        if let Some(adj) = &self.adjacency {
            for i in set.ones() {
                for &j in &adj[i] {
                    out.insert(j);
                }
            }
        }
        out
    }

    /// Pairs `i < j` whose closures intersect.
    pub fn touching_pairs(&self) -> Vec<(usize, usize)> {
        let closures: Vec<FixedBitSet> = self.cells.iter().map(|c| self.closure(&c.inner)).collect();
        let mut pairs = Vec::new();
        for i in 0..self.cells.len() {
            for j in i + 1..self.cells.len() {
                if !closures[i].is_disjoint(&self.cells[j].inner) {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    /// Checks the five good-covering conditions and computes `Q₁`, `Q₂` and
    /// a witness `k(i, j)` for every touching pair.
    pub fn validate(&self) -> CoveringValidation {
        let mut violations = Vec::new();
        let n_cells = self.cells.len();

        // (i)
        let mut union_inner = FixedBitSet::with_capacity(self.atoms.len());
        let mut union_outer = FixedBitSet::with_capacity(self.atoms.len());
        for c in &self.cells {
            union_inner.union_with(&c.inner);
            union_outer.union_with(&c.outer);
        }
        if !self.target.is_subset(&union_inner) {
            let missing: Vec<i64> = self.target.difference(&union_inner).map(|i| self.atoms[i].id).collect();
            violations.push(Violation::NotCovered { atoms: missing });
        }
        if !union_inner.is_subset(&union_outer) {
            violations.push(Violation::InnerEscapesOuter);
        }
        if !union_outer.is_subset(&self.target_sharp) {
            let extra: Vec<i64> =
                union_outer.difference(&self.target_sharp).map(|i| self.atoms[i].id).collect();
            violations.push(Violation::OuterEscapesTarget { atoms: extra });
        }

        // (ii) and positivity of cell measures
        for (i, c) in self.cells.iter().enumerate() {
            if !c.inner.is_subset(&c.buffer) || !c.buffer.is_subset(&c.outer) {
                violations.push(Violation::NotNested { cell: i });
            }
            let m = self.measure_of(&c.inner);
            if !(m > 0.0 && m.is_finite()) {
                violations.push(Violation::NonPositiveMeasure { cell: i });
            }
        }

        // (iii)
        let mut q1 = 0usize;
        for i0 in 0..n_cells {
            let count = (0..n_cells)
                .filter(|&i| !self.cells[i0].outer.is_disjoint(&self.cells[i].outer))
                .count();
            q1 = q1.max(count);
        }

        // (iv) and (v)
        let measures: Vec<f64> = self.cells.iter().map(|c| self.measure_of(&c.inner)).collect();
        let buffer_measures: Vec<f64> = self.cells.iter().map(|c| self.measure_of(&c.buffer)).collect();
        let mut q2: f64 = 0.0;
        for i in 0..n_cells {
            if measures[i] > 0.0 {
                q2 = q2.max(buffer_measures[i] / measures[i]);
            }
        }
        let mut witnesses = Vec::new();
        for (i, j) in self.touching_pairs() {
            let mut both = self.cells[i].inner.clone();
            both.union_with(&self.cells[j].inner);
            let candidates = [i, j].into_iter().chain((0..n_cells).filter(|&k| k != i && k != j));
            let mut found = None;
            for k in candidates {
                if both.is_subset(&self.cells[k].buffer) {
                    found = Some(k);
                    break;
                }
            }
            match found {
                Some(k) => {
                    let denom = measures[i].min(measures[j]);
                    if denom > 0.0 {
                        q2 = q2.max(buffer_measures[k] / denom);
                    }
                    witnesses.push(Witness { i, j, k });
                }
                None => violations.push(Violation::NoWitness { i, j }),
            }
        }
        CoveringValidation { q1, q2, witnesses, violations }
    }

    /// The associated weighted graph: one vertex per cell with `m(i) = μ(U_i)`
    /// and an edge whenever two closures intersect.
    pub fn associated_graph(&self) -> Result<WeightedGraph> {
        let report = self.validate();
        if !report.violations.is_empty() {
            return Err(Error::Precondition(format!(
                "not a good covering: {} violation(s), first: {:?}",
                report.violations.len(),
                report.violations[0]
            )));
        }
        Ok(self.nerve())
    }

    /// The nerve graph without validating the covering first.
    pub(crate) fn nerve(&self) -> WeightedGraph {
        let vertices: Vec<Vertex> = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| Vertex { id: i as i64, measure: self.measure_of(&c.inner) })
            .collect();
        let edges: Vec<(i64, i64)> =
            self.touching_pairs().into_iter().map(|(i, j)| (i as i64, j as i64)).collect();
        WeightedGraph::new(vertices, &edges).expect("cell measures checked positive")
    }
}

/// A failed good-covering condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "condition")]
pub enum Violation {
    /// (i): `A ⊄ ∪U_i`
    NotCovered { atoms: Vec<i64> },
    /// (i): `∪U_i ⊄ ∪U#_i`
    InnerEscapesOuter,
    /// (i): `∪U#_i ⊄ A#`
    OuterEscapesTarget { atoms: Vec<i64> },
    /// (ii): `U_i ⊄ U*_i` or `U*_i ⊄ U#_i`
    NotNested { cell: usize },
    /// (iv): no `k` with `U_i ∪ U_j ⊆ U*_k`
    NoWitness { i: usize, j: usize },
    /// Cells must carry positive finite measure.
    NonPositiveMeasure { cell: usize },
}

impl Violation {
    /// Roman numeral of the condition this violation belongs to.
    pub fn condition(&self) -> &'static str {
        match self {
            Violation::NotCovered { .. }
            | Violation::InnerEscapesOuter
            | Violation::OuterEscapesTarget { .. } => "i",
            Violation::NotNested { .. } => "ii",
            Violation::NoWitness { .. } => "iv",
            Violation::NonPositiveMeasure { .. } => "v",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoveringValidation {
    pub q1: usize,
    pub q2: f64,
    pub witnesses: Vec<Witness>,
    pub violations: Vec<Violation>,
}

impl CoveringValidation {
    pub fn is_good(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Integrability exponent `ν ∈ (p, ∞]` of a Sobolev inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Exponent {
    Finite(f64),
    Infinite,
}

/// Inputs of the patching theorems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchingInput {
    /// Continuous (per-cell) constant.
    pub s_c: f64,
    /// Discrete constant of the associated graph.
    pub s_d: f64,
    pub q1: u32,
    pub q2: f64,
    pub p: f64,
    pub nu: Exponent,
}

impl PatchingInput {
    fn check(&self) -> Result<()> {
        for (name, v) in [("S_c", self.s_c), ("S_d", self.s_d), ("Q2", self.q2)] {
            if !(v > 0.0 && v.is_finite()) {
                return domain(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.q1 == 0 {
            return domain("Q1 must be positive");
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return domain(format!("p must lie in [1, ∞), got {}", self.p));
        }
        if let Exponent::Finite(nu) = self.nu {
            if !(nu > self.p) {
                return domain(format!("need p < ν, got p = {}, ν = {nu}", self.p));
            }
        }
        Ok(())
    }

    /// `(p/ν, ν/(ν−p), (ν−p)/ν)` with their limits at `ν = ∞`.
    fn exponents(&self) -> (f64, f64, f64) {
        match self.nu {
            Exponent::Infinite => (0.0, 1.0, 1.0),
            Exponent::Finite(nu) => (self.p / nu, nu / (nu - self.p), (nu - self.p) / nu),
        }
    }

    /// Shared factor `(1 + S_d Q₂ (2^p Q₁²)^{ν/(ν−p)})^{(ν−p)/ν}`.
    fn discrete_factor(&self) -> f64 {
        let (_, inner, outer) = self.exponents();
        let q1 = self.q1 as f64;
        (1.0 + self.s_d * self.q2 * (2f64.powf(self.p) * q1 * q1).powf(inner)).powf(outer)
    }
}

/// Global Sobolev–Dirichlet constant
/// `S = S_c Q₁ 2^{p−1+p/ν} (1 + S_d Q₂ (2^p Q₁²)^{ν/(ν−p)})^{(ν−p)/ν}`.
pub fn patch_dirichlet(inp: &PatchingInput) -> Result<f64> {
    inp.check()?;
    let (p_over_nu, _, _) = inp.exponents();
    Ok(inp.s_c * inp.q1 as f64 * 2f64.powf(inp.p - 1.0 + p_over_nu) * inp.discrete_factor())
}

/// Global Sobolev–Neumann constant; the Dirichlet one times `2^p`.
pub fn patch_neumann(inp: &PatchingInput) -> Result<f64> {
    inp.check()?;
    let (p_over_nu, _, _) = inp.exponents();
    Ok(inp.s_c * inp.q1 as f64 * 2f64.powf(2.0 * inp.p - 1.0 + p_over_nu) * inp.discrete_factor())
}
