//! Finite weighted graphs `(G, m)` and their discrete functional-inequality
//! constants.
//!
//! Vertex measures are stored; edge measures never are. The measure of an
//! edge `{i, j}` is always `max(m(i), m(j))`. Cheeger and isoperimetric
//! constants are computed by exact subset enumeration, refusing graphs above
//! an enumeration cap instead of approximating.

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::{self, CsrMatrix, SubspaceOptions};

/// Largest vertex count accepted by the exact subset enumerations.
pub const DEFAULT_ENUMERATION_CAP: usize = 22;

/// Above this many vertices the spectral gap switches to the iterative solver.
pub const DENSE_SOLVER_LIMIT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: i64,
    pub measure: f64,
}

/// A finite vertex-weighted graph.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    vertices: Vec<Vertex>,
    /// Index pairs `(a, b)` with `a < b`, sorted.
    edges: Vec<(usize, usize)>,
    index: HashMap<i64, usize>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    vertices: Vec<Vertex>,
    edges: Vec<[i64; 2]>,
}

impl WeightedGraph {
    /// Builds a graph from vertex measures and edges given by vertex id.
    ///
    /// Rejects non-positive or non-finite measures, duplicate ids, self-loops,
    /// duplicate edges and edges naming unknown vertices.
    pub fn new(vertices: Vec<Vertex>, edges: &[(i64, i64)]) -> Result<Self> {
        let mut index = HashMap::with_capacity(vertices.len());
        for (k, v) in vertices.iter().enumerate() {
            if !(v.measure.is_finite() && v.measure > 0.0) {
                return domain(format!("vertex {} has non-positive measure {}", v.id, v.measure));
            }
            if index.insert(v.id, k).is_some() {
                return domain(format!("duplicate vertex id {}", v.id));
            }
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            let ia = *index
                .get(&a)
                .ok_or_else(|| Error::Domain(format!("edge names unknown vertex {a}")))?;
            let ib = *index
                .get(&b)
                .ok_or_else(|| Error::Domain(format!("edge names unknown vertex {b}")))?;
            if ia == ib {
                return domain(format!("self-loop at vertex {a}"));
            }
            if !set.insert((ia.min(ib), ia.max(ib))) {
                return domain(format!("duplicate edge {{{a}, {b}}}"));
            }
        }
        Ok(Self { vertices, edges: set.into_iter().collect(), index })
    }

    /// Convenience constructor: vertices `0..n` with the given measures.
    pub fn from_measures(measures: &[f64], edges: &[(usize, usize)]) -> Result<Self> {
        let vertices = measures
            .iter()
            .enumerate()
            .map(|(i, &m)| Vertex { id: i as i64, measure: m })
            .collect();
        let edges: Vec<(i64, i64)> = edges.iter().map(|&(a, b)| (a as i64, b as i64)).collect();
        Self::new(vertices, &edges)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        let edges: Vec<(i64, i64)> = file.edges.iter().map(|e| (e[0], e[1])).collect();
        Self::new(file.vertices, &edges)
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            vertices: self.vertices.clone(),
            edges: self
                .edges
                .iter()
                .map(|&(a, b)| [self.vertices[a].id, self.vertices[b].id])
                .collect(),
        };
        serde_json::to_string(&file).expect("graph serializes")
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    /// Edges as index pairs `(a, b)`, `a < b`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn index_of(&self, id: i64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn measure(&self, i: usize) -> f64 {
        self.vertices[i].measure
    }

    /// `m(i, j) = max(m(i), m(j))`.
    pub fn edge_measure(&self, i: usize, j: usize) -> f64 {
        self.vertices[i].measure.max(self.vertices[j].measure)
    }

    pub fn total_measure(&self) -> f64 {
        self.vertices.iter().map(|v| v.measure).sum()
    }

    /// Returns a copy with one more edge (by index); no-op if present.
    pub fn with_edge(&self, i: usize, j: usize) -> Result<Self> {
        if i == j {
            return domain("self-loop");
        }
        let mut edges: Vec<(i64, i64)> = self
            .edges
            .iter()
            .map(|&(a, b)| (self.vertices[a].id, self.vertices[b].id))
            .collect();
        let key = (i.min(j), i.max(j));
        if !self.edges.contains(&key) {
            edges.push((self.vertices[i].id, self.vertices[j].id));
        }
        Self::new(self.vertices.clone(), &edges)
    }

    /// Uniformly rescales every vertex measure by `t > 0`.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        let vertices = self
            .vertices
            .iter()
            .map(|v| Vertex { id: v.id, measure: v.measure * t })
            .collect();
        let edges: Vec<(i64, i64)> = self
            .edges
            .iter()
            .map(|&(a, b)| (self.vertices[a].id, self.vertices[b].id))
            .collect();
        Self::new(vertices, &edges)
    }

    /// Connected components as sorted index lists, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for v in 0..n {
            let r = find(&mut parent, v);
            groups.entry(r).or_default().push(v);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort_by_key(|c| c[0]);
        out
    }

    pub fn is_connected(&self) -> bool {
        self.len() <= 1 || self.components().len() == 1
    }

    /// Measures of `Ω` and of its edge boundary `∂Ω`.
    pub fn cut(&self, subset: &[usize]) -> SubsetCut {
        let mut inside = vec![false; self.len()];
        for &i in subset {
            inside[i] = true;
        }
        let interior_measure = subset.iter().map(|&i| self.measure(i)).sum();
        let boundary_measure = self
            .edges
            .iter()
            .filter(|&&(a, b)| inside[a] != inside[b])
            .map(|&(a, b)| self.edge_measure(a, b))
            .sum();
        let mut ids: Vec<i64> = subset.iter().map(|&i| self.vertices[i].id).collect();
        ids.sort_unstable();
        SubsetCut { subset: ids, interior_measure, boundary_measure }
    }

    fn check_cap(&self, cap: usize) -> Result<()> {
        if self.is_empty() {
            return domain("empty graph");
        }
        if self.len() > cap || self.len() > 62 {
            return Err(Error::Capacity { vertices: self.len(), cap });
        }
        Ok(())
    }

    /// `(m(Ω), m(∂Ω))` for the subset encoded by `mask`, summed in canonical
    /// order so the value does not depend on how the enumeration was split.
    fn cut_of_mask(&self, mask: u64) -> (f64, f64) {
        let mut interior = 0.0;
        for (i, v) in self.vertices.iter().enumerate() {
            if mask >> i & 1 == 1 {
                interior += v.measure;
            }
        }
        let mut boundary = 0.0;
        for &(a, b) in &self.edges {
            if (mask >> a & 1) != (mask >> b & 1) {
                boundary += self.edge_measure(a, b);
            }
        }
        (interior, boundary)
    }

    fn mask_to_indices(&self, mask: u64) -> Vec<usize> {
        (0..self.len()).filter(|&i| mask >> i & 1 == 1).collect()
    }

    /// Enumerates every nonempty subset of `allowed` and keeps the extreme
    /// score. Ties resolve to the smallest mask, so the answer is independent
    /// of the parallel split.
    fn extreme_subset<F>(&self, allowed: u64, maximize: bool, score: F) -> Option<(f64, u64)>
    where
        F: Fn(f64, f64) -> Option<f64> + Sync,
    {
        let bits: Vec<usize> = (0..self.len()).filter(|&i| allowed >> i & 1 == 1).collect();
        let count: usize = 1usize << bits.len();
        let better = |a: (f64, u64), b: (f64, u64)| -> (f64, u64) {
            let ord = if maximize { b.0.total_cmp(&a.0) } else { a.0.total_cmp(&b.0) };
            match ord {
                std::cmp::Ordering::Less => a,
                std::cmp::Ordering::Greater => b,
                std::cmp::Ordering::Equal => {
                    if a.1 <= b.1 {
                        a
                    } else {
                        b
                    }
                }
            }
        };
        (1..count)
            .into_par_iter()
            .with_min_len(1 << 12)
            .filter_map(|k| {
                let mut mask = 0u64;
                for (pos, &bit) in bits.iter().enumerate() {
                    if k >> pos & 1 == 1 {
                        mask |= 1 << bit;
                    }
                }
                let (mi, mb) = self.cut_of_mask(mask);
                score(mi, mb).map(|s| (s, mask))
            })
            .reduce_with(better)
    }

    /// Cheeger constant `h = inf m(∂U)/m(U)` over `0 < m(U) ≤ m(V)/2`, with
    /// the default enumeration cap.
    pub fn cheeger_constant(&self) -> Result<f64> {
        self.cheeger_cut(DEFAULT_ENUMERATION_CAP).map(|c| c.ratio())
    }

    /// The optimal Cheeger cut, enumerating subsets up to `cap` vertices.
    pub fn cheeger_cut(&self, cap: usize) -> Result<SubsetCut> {
        self.check_cap(cap)?;
        let half = 0.5 * self.total_measure();
        let all = full_mask(self.len());
        let best = self.extreme_subset(all, false, |mi, mb| {
            (mi > 0.0 && mi <= half * (1.0 + 1e-12)).then(|| mb / mi)
        });
        match best {
            Some((_, mask)) => Ok(self.cut(&self.mask_to_indices(mask))),
            // A single vertex has no admissible subset; its infimum is over
            // the empty family.
            None => Ok(SubsetCut {
                subset: Vec::new(),
                interior_measure: 0.0,
                boundary_measure: f64::INFINITY,
            }),
        }
    }

    /// Spectral gap: the smallest nonzero eigenvalue of `L f = λ M f`, i.e.
    /// the infimum of the edge energy over the `m`-weighted variance across
    /// nonconstant `f`. Zero for disconnected graphs.
    pub fn spectral_gap(&self) -> Result<f64> {
        if self.is_empty() {
            return domain("empty graph");
        }
        if self.len() == 1 || !self.is_connected() {
            return Ok(0.0);
        }
        let n = self.len();
        let weighted: Vec<(usize, usize, f64)> = self
            .edges
            .iter()
            .map(|&(a, b)| (a, b, self.edge_measure(a, b)))
            .collect();
        let lap = CsrMatrix::laplacian(n, &weighted, None);
        let mass: Vec<f64> = self.vertices.iter().map(|v| v.measure).collect();
        if n <= DENSE_SOLVER_LIMIT {
            let vals = linalg::dense_generalized_eigenvalues(
                &lap.to_dense(),
                &DMatrix::from_diagonal(&linalg::dvec(&mass)),
            )?;
            Ok(vals[1].max(0.0))
        } else {
            let top = variance_over_energy(&lap, &mass)?;
            Ok(1.0 / top)
        }
    }

    /// `m₀ = max_i (1/m(i)) Σ_{j ~ i} m(i, j)`.
    pub fn degree_bound(&self) -> Result<f64> {
        if self.is_empty() {
            return domain("empty graph");
        }
        let mut sums = vec![0.0; self.len()];
        for &(a, b) in &self.edges {
            let w = self.edge_measure(a, b);
            sums[a] += w;
            sums[b] += w;
        }
        Ok(sums
            .iter()
            .zip(&self.vertices)
            .map(|(s, v)| s / v.measure)
            .fold(0.0, f64::max))
    }

    /// Evaluates both sides of `h²/(8 m₀) ≤ λ ≤ h`.
    pub fn cheeger_gap_report(&self) -> Result<CheegerGapReport> {
        let h = self.cheeger_constant()?;
        let lambda = self.spectral_gap()?;
        let m0 = self.degree_bound()?;
        let lower_ok = if h == 0.0 { lambda >= 0.0 } else { h * h / (8.0 * m0) <= lambda * (1.0 + 1e-12) };
        let upper_ok = lambda <= h * (1.0 + 1e-12);
        Ok(CheegerGapReport { h, lambda, m0, lower_ok, upper_ok })
    }

    /// Best isoperimetric constant of order `order`, enumerating subsets up
    /// to the default cap.
    pub fn isoperimetric_constant(&self, order: Order, mode: IsoMode) -> Result<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.isoperimetric_constant_within(&all, order, mode, DEFAULT_ENUMERATION_CAP)
    }

    /// As [`Self::isoperimetric_constant`] with `Ω` restricted to subsets of
    /// `allowed`. Restricting the range models a finite truncation of an
    /// infinite graph: the vertices outside `allowed` act as the frontier that
    /// `Ω` may not absorb.
    pub fn isoperimetric_constant_within(
        &self,
        allowed: &[usize],
        order: Order,
        mode: IsoMode,
        cap: usize,
    ) -> Result<f64> {
        self.check_cap(cap)?;
        let mut mask = 0u64;
        for &i in allowed {
            if i >= self.len() {
                return domain(format!("vertex index {i} out of range"));
            }
            mask |= 1 << i;
        }
        if mask == 0 {
            return domain("no admissible vertices");
        }
        let exponent = order.volume_exponent();
        let half = 0.5 * self.total_measure();
        let best = self.extreme_subset(mask, true, |mi, mb| {
            if mode == IsoMode::Neumann && mi > half * (1.0 + 1e-12) {
                return None;
            }
            if mb == 0.0 {
                return Some(f64::INFINITY);
            }
            Some(mi.powf(exponent) / mb)
        });
        Ok(best.map_or(0.0, |b| b.0))
    }
}

fn full_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Largest value of `Var_m(f) / E(f)` for a connected energy form, i.e. the
/// reciprocal of the spectral gap, by subspace iteration. The constant mode
/// is lifted out of the kernel with a rank-one shift.
pub(crate) fn variance_over_energy(energy: &CsrMatrix, mass: &[f64]) -> Result<f64> {
    let n = mass.len();
    let total: f64 = mass.iter().sum();
    let diag = energy.diagonal();
    let shift = diag.iter().sum::<f64>() / n as f64;
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let apply_q = |x: &[f64], y: &mut [f64]| {
        let mean = linalg::dot(mass, x) / total;
        for i in 0..n {
            y[i] = mass[i] * (x[i] - mean);
        }
    };
    let apply_b = |x: &[f64], y: &mut [f64]| {
        energy.mul_vec(x, y);
        let s = shift * inv_sqrt_n * x.iter().sum::<f64>() * inv_sqrt_n;
        y.iter_mut().for_each(|v| *v += s);
    };
    let precond: Vec<f64> = diag.iter().map(|d| d + shift / n as f64).collect();
    linalg::max_generalized_eigenvalue(n, apply_q, apply_b, &precond, SubspaceOptions::default())
}

/// A subset `Ω` with its interior and boundary measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetCut {
    pub subset: Vec<i64>,
    pub interior_measure: f64,
    pub boundary_measure: f64,
}

impl SubsetCut {
    pub fn ratio(&self) -> f64 {
        if self.interior_measure == 0.0 {
            f64::INFINITY
        } else {
            self.boundary_measure / self.interior_measure
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheegerGapReport {
    pub h: f64,
    pub lambda: f64,
    pub m0: f64,
    /// `h²/(8 m₀) ≤ λ`
    pub lower_ok: bool,
    /// `λ ≤ h`; reported only, known to fail on some graphs.
    pub upper_ok: bool,
}

/// Order `ν ∈ (1, ∞]` of an isoperimetric inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Order {
    Finite(f64),
    Infinite,
}

impl Order {
    pub fn new(nu: f64) -> Result<Self> {
        if nu.is_infinite() && nu > 0.0 {
            Ok(Order::Infinite)
        } else if nu > 1.0 && nu.is_finite() {
            Ok(Order::Finite(nu))
        } else {
            domain(format!("order must lie in (1, ∞], got {nu}"))
        }
    }

    /// `(ν − 1)/ν`, equal to 1 at `ν = ∞`.
    pub fn volume_exponent(self) -> f64 {
        match self {
            Order::Finite(nu) => (nu - 1.0) / nu,
            Order::Infinite => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsoMode {
    /// `Ω` ranges over all nonempty subsets.
    Dirichlet,
    /// `Ω` ranges over subsets carrying at most half the total measure.
    Neumann,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize, edges: &[(usize, usize)]) -> WeightedGraph {
        WeightedGraph::from_measures(&vec![1.0; n], edges).unwrap()
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(WeightedGraph::from_measures(&[1.0, 0.0], &[]).is_err());
        assert!(WeightedGraph::from_measures(&[1.0, 1.0], &[(0, 0)]).is_err());
        assert!(WeightedGraph::from_measures(&[1.0, 1.0], &[(0, 1), (1, 0)]).is_err());
        assert!(WeightedGraph::from_measures(&[1.0], &[(0, 3)]).is_err());
    }

    #[test]
    fn edge_measure_is_max_rule() {
        let g = WeightedGraph::from_measures(&[1.0, 3.0], &[(0, 1)]).unwrap();
        assert_eq!(g.edge_measure(0, 1), 3.0);
        assert_eq!(g.cut(&[0]).boundary_measure, 3.0);
    }

    #[test]
    fn cheeger_examples() {
        assert_eq!(unit(2, &[(0, 1)]).cheeger_constant().unwrap(), 1.0);
        assert_eq!(unit(3, &[(0, 1), (1, 2)]).cheeger_constant().unwrap(), 1.0);
        assert_eq!(unit(2, &[]).cheeger_constant().unwrap(), 0.0);
    }

    #[test]
    fn cheeger_errors() {
        let empty = WeightedGraph::from_measures(&[], &[]).unwrap();
        assert!(matches!(empty.cheeger_constant(), Err(Error::Domain(_))));
        let big = unit(23, &[]);
        assert!(matches!(big.cheeger_constant(), Err(Error::Capacity { vertices: 23, cap: 22 })));
    }

    #[test]
    fn spectral_gap_examples() {
        assert!((unit(2, &[(0, 1)]).spectral_gap().unwrap() - 2.0).abs() < 1e-12);
        assert!((unit(3, &[(0, 1), (1, 2)]).spectral_gap().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(unit(2, &[]).spectral_gap().unwrap(), 0.0);
    }

    #[test]
    fn degree_bound_examples() {
        assert_eq!(unit(2, &[(0, 1)]).degree_bound().unwrap(), 1.0);
        assert_eq!(unit(3, &[(0, 1), (1, 2)]).degree_bound().unwrap(), 2.0);
        assert_eq!(unit(4, &[(0, 1), (0, 2), (0, 3)]).degree_bound().unwrap(), 3.0);
    }

    #[test]
    fn report_examples() {
        let r = unit(3, &[(0, 1), (1, 2)]).cheeger_gap_report().unwrap();
        assert_eq!((r.h, r.m0), (1.0, 2.0));
        assert!((r.lambda - 1.0).abs() < 1e-12);
        assert!(r.lower_ok && r.upper_ok);

        let r = unit(2, &[(0, 1)]).cheeger_gap_report().unwrap();
        assert!(r.lower_ok && !r.upper_ok);

        let r = unit(2, &[]).cheeger_gap_report().unwrap();
        assert_eq!((r.h, r.lambda), (0.0, 0.0));
        assert!(r.lower_ok && r.upper_ok);
    }

    #[test]
    fn isoperimetric_examples() {
        // Geometric weights 2^i on a path; Ω restricted away from the frontier.
        let measures: Vec<f64> = (0..6).map(|i| 2f64.powi(i)).collect();
        let edges: Vec<(usize, usize)> = (0..5).map(|i| (i, i + 1)).collect();
        let g = WeightedGraph::from_measures(&measures, &edges).unwrap();
        for j in 0..5usize {
            let down: Vec<usize> = (0..=j).collect();
            let c = g.cut(&down);
            let expected = (2f64.powi(j as i32 + 1) - 1.0) / 2f64.powi(j as i32 + 1);
            assert!((c.interior_measure / c.boundary_measure - expected).abs() < 1e-15);
            assert!(expected < 1.0);
        }
        let c = g
            .isoperimetric_constant_within(&[0, 1, 2, 3, 4], Order::Infinite, IsoMode::Dirichlet, 22)
            .unwrap();
        assert!((c - 31.0 / 32.0).abs() < 1e-15);

        let k2 = unit(2, &[(0, 1)]);
        assert_eq!(k2.isoperimetric_constant(Order::Infinite, IsoMode::Neumann).unwrap(), 1.0);

        let single = unit(1, &[]);
        for nu in [Order::Infinite, Order::Finite(2.0), Order::Finite(3.5)] {
            assert_eq!(single.isoperimetric_constant(nu, IsoMode::Dirichlet).unwrap(), f64::INFINITY);
        }
    }

    #[test]
    fn finite_order_uses_volume_exponent() {
        // Ω = {0} in K₂ with measures (4, 1): m(Ω)^{1/2} / m(∂Ω) = 2/4.
        let g = WeightedGraph::from_measures(&[4.0, 1.0], &[(0, 1)]).unwrap();
        let c = g
            .isoperimetric_constant_within(&[0], Order::new(2.0).unwrap(), IsoMode::Dirichlet, 22)
            .unwrap();
        assert!((c - 0.5).abs() < 1e-15);
        assert!(Order::new(1.0).is_err());
    }

    #[test]
    fn json_round_trip_keeps_edges_derived() {
        let text = r#"{"vertices":[{"id":0,"measure":1.0},{"id":5,"measure":2.5}],"edges":[[0,5]]}"#;
        let g = WeightedGraph::from_json(text).unwrap();
        assert_eq!(g.edge_measure(0, 1), 2.5);
        assert!(!g.to_json().contains("2.5,"));
        assert_eq!(WeightedGraph::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn iterative_gap_matches_dense() {
        // Cycle on 240 unit vertices: λ = 2 − 2 cos(2π/n) per unit edge measure.
        let n = 240;
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let g = unit(n, &edges);
        let gap = g.spectral_gap().unwrap();
        let exact = 2.0 - 2.0 * (2.0 * std::f64::consts::PI / n as f64).cos();
        assert!((gap - exact).abs() < 1e-8 * exact, "{gap} vs {exact}");
    }
}
