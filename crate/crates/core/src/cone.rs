//! Discretized metric cones `C(S) = (r_min, r_max] × S` with `g = dr² + r² g_S`.
//!
//! A cone is a product grid: radial cells times the nodes of a discretized
//! link. Vertex measures are exact integrals of `r^{n−1} dr` times the link
//! cell volume; edge conductances are interface measure over node spacing,
//! so the graph Laplacian is the finite-volume Laplacian of the cone metric.
//!
//! Distances use the metric-cone law of cosines
//! `d² = r₁² + r₂² − 2 r₁ r₂ cos(min(d_S, π))` with `d_S` the link distance.

use std::collections::BinaryHeap;
use std::f64::consts::PI;

use fixedbitset::FixedBitSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covering::{CellSpec, GoodCovering};
use crate::error::{domain, Error, Result};
use crate::linalg::CsrMatrix;

/// Default annulus growth factor.
pub const DEFAULT_KAPPA: f64 = 2.0;
/// Default remote parameter.
pub const DEFAULT_EPSILON: f64 = 0.5;
/// Default relative width of annulus buffers (`δR`).
pub const DEFAULT_DELTA: f64 = 0.1;

/// An edge of a discretized link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkEdge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
    /// Interface measure divided by `length`, on the unit link.
    pub conductance: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum LinkMetric {
    /// Shortest paths along link edges.
    Table(Vec<f64>),
    /// Great-circle distance between unit vectors.
    Sphere(Vec<[f64; 3]>),
}

/// A link `(S, g_S)` given as a graph with node volumes and edge
/// conductances/lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGraph {
    dim: usize,
    measures: Vec<f64>,
    edges: Vec<LinkEdge>,
    metric: LinkMetric,
}

#[derive(Serialize, Deserialize)]
struct LinkFile {
    dim: usize,
    measures: Vec<f64>,
    edges: Vec<LinkEdge>,
}

impl LinkGraph {
    /// A link of dimension `dim` from node volumes and edges. Distances are
    /// shortest paths along the edges.
    pub fn new(dim: usize, measures: Vec<f64>, edges: Vec<LinkEdge>) -> Result<Self> {
        let n = measures.len();
        if n == 0 {
            return domain("link has no nodes");
        }
        if measures.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return domain("link node volumes must be positive");
        }
        for e in &edges {
            if e.a >= n || e.b >= n || e.a == e.b {
                return domain(format!("bad link edge {}–{}", e.a, e.b));
            }
            if !(e.length > 0.0 && e.conductance > 0.0) {
                return domain("link edges need positive length and conductance");
            }
        }
        let table = all_pairs_shortest(n, &edges);
        if table.iter().any(|d| d.is_infinite()) {
            return domain("link graph is disconnected");
        }
        Ok(Self { dim, measures, edges, metric: LinkMetric::Table(table) })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: LinkFile = serde_json::from_str(text)?;
        Self::new(f.dim, f.measures, f.edges)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&LinkFile { dim: self.dim, measures: self.measures.clone(), edges: self.edges.clone() })
            .expect("link serializes")
    }

    /// The 0-dimensional link: its cone is a half-line.
    pub fn point() -> Self {
        Self { dim: 0, measures: vec![1.0], edges: Vec::new(), metric: LinkMetric::Table(vec![0.0]) }
    }

    /// Round unit `S²` from a subdivided icosahedron: barycentric node
    /// areas normalized to `4π`, cotangent conductances, great-circle
    /// lengths and exact great-circle link distances.
    pub fn round_sphere(subdivisions: usize) -> Self {
        let (points, faces) = icosphere(subdivisions);
        let n = points.len();
        let mut area = vec![0.0; n];
        let mut cot: std::collections::HashMap<(usize, usize), f64> = std::collections::HashMap::new();
        for f in &faces {
            let [a, b, c] = *f;
            let (pa, pb, pc) = (points[a], points[b], points[c]);
            let tri = 0.5 * norm(cross(sub(pb, pa), sub(pc, pa)));
            for v in f {
                area[*v] += tri / 3.0;
            }
            // Angle at each corner contributes to the opposite edge.
            for (corner, (u, w)) in [(a, (b, c)), (b, (c, a)), (c, (a, b))] {
                let e1 = sub(points[u], points[corner]);
                let e2 = sub(points[w], points[corner]);
                let cotangent = dotv(e1, e2) / norm(cross(e1, e2));
                *cot.entry((u.min(w), u.max(w))).or_insert(0.0) += 0.5 * cotangent;
            }
        }
        let scale = 4.0 * PI / area.iter().sum::<f64>();
        let measures: Vec<f64> = area.iter().map(|a| a * scale).collect();
        let mut keys: Vec<_> = cot.keys().copied().collect();
        keys.sort_unstable();
        let edges = keys
            .into_iter()
            .map(|(a, b)| LinkEdge {
                a,
                b,
                length: dotv(points[a], points[b]).clamp(-1.0, 1.0).acos(),
                conductance: cot[&(a, b)],
            })
            .collect();
        Self { dim: 2, measures, edges, metric: LinkMetric::Sphere(points) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn volume(&self) -> f64 {
        self.measures.iter().sum()
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn edges(&self) -> &[LinkEdge] {
        &self.edges
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        match &self.metric {
            LinkMetric::Table(t) => t[a * self.len() + b],
            LinkMetric::Sphere(p) => dotv(p[a], p[b]).clamp(-1.0, 1.0).acos(),
        }
    }

    /// Conductance Laplacian spectrum of the link (ascending), against the
    /// node volumes.
    pub fn laplacian_eigenvalues(&self) -> Result<Vec<f64>> {
        let trip: Vec<(usize, usize, f64)> = self.edges.iter().map(|e| (e.a, e.b, e.conductance)).collect();
        let lap = CsrMatrix::laplacian(self.len(), &trip, None);
        let mass = nalgebra::DMatrix::from_diagonal(&crate::linalg::dvec(&self.measures));
        crate::linalg::dense_generalized_eigenvalues(&lap.to_dense(), &mass)
    }
}

fn all_pairs_shortest(n: usize, edges: &[LinkEdge]) -> Vec<f64> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.a].push((e.b, e.length));
        adj[e.b].push((e.a, e.length));
    }
    let mut table = vec![f64::INFINITY; n * n];
    #[derive(PartialEq)]
    struct Item(f64, usize);
    impl Eq for Item {}
    impl PartialOrd for Item {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Item {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
        }
    }
    for s in 0..n {
        let row = &mut table[s * n..(s + 1) * n];
        row[s] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Item(0.0, s));
        while let Some(Item(d, v)) = heap.pop() {
            if d > row[v] {
                continue;
            }
            for &(w, len) in &adj[v] {
                let nd = d + len;
                if nd < row[w] {
                    row[w] = nd;
                    heap.push(Item(nd, w));
                }
            }
        }
    }
    table
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
fn dotv(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn norm(a: [f64; 3]) -> f64 {
    dotv(a, a).sqrt()
}
fn unit(a: [f64; 3]) -> [f64; 3] {
    let l = norm(a);
    [a[0] / l, a[1] / l, a[2] / l]
}

fn icosphere(subdivisions: usize) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut points: Vec<[f64; 3]> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&p| unit(p))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid = std::collections::HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, pts: &mut Vec<[f64; 3]>| -> usize {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let p = unit([
                    (pts[a][0] + pts[b][0]) / 2.0,
                    (pts[a][1] + pts[b][1]) / 2.0,
                    (pts[a][2] + pts[b][2]) / 2.0,
                ]);
                pts.push(p);
                pts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut points);
            let bc = midpoint(b, c, &mut points);
            let ca = midpoint(c, a, &mut points);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (points, faces)
}

/// The link of a cone.
#[derive(Debug, Clone, PartialEq)]
pub enum ConeLink {
    /// Circle of length `L`, discretized into `angular_steps` arcs.
    Circle { length: f64 },
    Graph(LinkGraph),
}

/// Serializable cone description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub link: LinkSpec,
    pub r_min: f64,
    pub r_max: f64,
    pub radial_steps: usize,
    #[serde(default = "default_angular")]
    pub angular_steps: usize,
}

fn default_angular() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkSpec {
    Circle { length: f64 },
    /// Round unit sphere `S²` from an icosahedron subdivided this many times.
    Sphere { subdivisions: usize },
    Point,
    /// Link graph stored in a separate file (resolved by the caller).
    Graph { file: String },
}

/// A cone discretized as a product grid.
#[derive(Debug, Clone)]
pub struct DiscretizedCone {
    link: LinkGraph,
    circle_length: Option<f64>,
    dim: usize,
    apex: bool,
    /// Radius of each ring's nodes.
    ring_radii: Vec<f64>,
    /// Ring cell boundaries; ring `k` spans `[bounds[k], bounds[k+1]]`.
    bounds: Vec<f64>,
    measures: Vec<f64>,
    edges: Vec<(usize, usize, f64)>,
    neighbors: Vec<Vec<usize>>,
    laplacian: CsrMatrix,
}

impl DiscretizedCone {
    /// Builds the grid. A circle link with `r_min = 0` gets a single apex
    /// vertex holding the innermost disc; graph links require `r_min > 0`.
    pub fn build(
        link: ConeLink,
        r_min: f64,
        r_max: f64,
        radial_steps: usize,
        angular_steps: usize,
    ) -> Result<Self> {
        if !(r_min >= 0.0 && r_max > r_min && r_max.is_finite()) {
            return domain(format!("need 0 ≤ r_min < r_max, got [{r_min}, {r_max}]"));
        }
        if radial_steps == 0 {
            return domain("radial_steps must be positive");
        }
        let (link, circle_length) = match link {
            ConeLink::Circle { length } => {
                if !(length > 0.0 && length.is_finite()) {
                    return domain(format!("circle length must be positive, got {length}"));
                }
                if angular_steps < 3 {
                    return domain("a circle link needs at least 3 angular steps");
                }
                (circle_link(length, angular_steps), Some(length))
            }
            ConeLink::Graph(g) => {
                if r_min == 0.0 {
                    return Err(Error::Unsupported(
                        "apex gluing is only defined for circle links; use r_min > 0".into(),
                    ));
                }
                (g, None)
            }
        };
        let dim = link.dim() + 1;
        let apex = r_min == 0.0;
        let (ring_radii, bounds) = if apex {
            let dr = r_max / (radial_steps as f64 + 0.5);
            let radii: Vec<f64> = (1..=radial_steps).map(|k| k as f64 * dr).collect();
            let mut b: Vec<f64> = (0..=radial_steps).map(|k| (k as f64 + 0.5) * dr).collect();
            *b.last_mut().unwrap() = r_max;
            (radii, b)
        } else {
            let dr = (r_max - r_min) / radial_steps as f64;
            let radii = (0..radial_steps).map(|k| r_min + (k as f64 + 0.5) * dr).collect();
            let mut b: Vec<f64> = (0..=radial_steps).map(|k| r_min + k as f64 * dr).collect();
            *b.last_mut().unwrap() = r_max;
            (radii, b)
        };
        let nl = link.len();
        let offset = usize::from(apex);
        let total = offset + radial_steps * nl;
        let nf = dim as f64;
        let mut measures = vec![0.0; total];
        if apex {
            measures[0] = bounds[0].powf(nf) / nf * link.volume();
        }
        for k in 0..radial_steps {
            let shell = (bounds[k + 1].powf(nf) - bounds[k].powf(nf)) / nf;
            for v in 0..nl {
                measures[offset + k * nl + v] = shell * link.measures[v];
            }
        }
        let mut edges = Vec::new();
        if apex {
            let face = bounds[0].powf(nf - 1.0);
            for v in 0..nl {
                edges.push((0, offset + v, face * link.measures[v] / ring_radii[0]));
            }
        }
        for k in 0..radial_steps {
            // Radial edges to the next ring.
            if k + 1 < radial_steps {
                let face = bounds[k + 1].powf(nf - 1.0);
                let gap = ring_radii[k + 1] - ring_radii[k];
                for v in 0..nl {
                    edges.push((offset + k * nl + v, offset + (k + 1) * nl + v, face * link.measures[v] / gap));
                }
            }
            // Angular edges within the ring: κ_vw ∫ r^{n−3} dr.
            let (lo, hi) = (bounds[k], bounds[k + 1]);
            let radial_weight = if dim == 2 {
                (hi / lo).ln()
            } else {
                (hi.powf(nf - 2.0) - lo.powf(nf - 2.0)) / (nf - 2.0)
            };
            for e in &link.edges {
                edges.push((offset + k * nl + e.a, offset + k * nl + e.b, e.conductance * radial_weight));
            }
        }
        let mut neighbors = vec![Vec::new(); total];
        for &(a, b, _) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        let laplacian = CsrMatrix::laplacian(total, &edges, None);
        Ok(Self { link, circle_length, dim, apex, ring_radii, bounds, measures, edges, neighbors, laplacian })
    }

    /// Builds from a [`ConeSpec`]; `Graph` links must be resolved by the
    /// caller through [`Self::build`].
    pub fn from_spec(spec: &ConeSpec) -> Result<Self> {
        let link = match &spec.link {
            LinkSpec::Circle { length } => ConeLink::Circle { length: *length },
            LinkSpec::Sphere { subdivisions } => ConeLink::Graph(LinkGraph::round_sphere(*subdivisions)),
            LinkSpec::Point => ConeLink::Graph(LinkGraph::point()),
            LinkSpec::Graph { file } => {
                let text = std::fs::read_to_string(file)?;
                ConeLink::Graph(LinkGraph::from_json(&text)?)
            }
        };
        Self::build(link, spec.r_min, spec.r_max, spec.radial_steps, spec.angular_steps)
    }

    /// Cone dimension `n = dim S + 1`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn link(&self) -> &LinkGraph {
        &self.link
    }

    pub fn circle_length(&self) -> Option<f64> {
        self.circle_length
    }

    pub fn apex(&self) -> Option<usize> {
        self.apex.then_some(0)
    }

    pub fn rings(&self) -> usize {
        self.ring_radii.len()
    }

    pub fn r_inner(&self) -> f64 {
        if self.apex {
            0.0
        } else {
            self.bounds[0]
        }
    }

    pub fn r_outer(&self) -> f64 {
        *self.bounds.last().unwrap()
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn total_measure(&self) -> f64 {
        self.measures.iter().sum()
    }

    /// Conductance edges `(a, b, c_ab)`.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }

    /// Vertex index of ring `k`, link node `v`.
    pub fn vertex(&self, ring: usize, node: usize) -> usize {
        usize::from(self.apex) + ring * self.link.len() + node
    }

    /// `(ring, link node)` of a non-apex vertex.
    pub fn ring_and_node(&self, v: usize) -> Option<(usize, usize)> {
        let off = usize::from(self.apex);
        (v >= off).then(|| ((v - off) / self.link.len(), (v - off) % self.link.len()))
    }

    pub fn radius(&self, v: usize) -> f64 {
        match self.ring_and_node(v) {
            None => 0.0,
            Some((k, _)) => self.ring_radii[k],
        }
    }

    pub fn ring_radius(&self, k: usize) -> f64 {
        self.ring_radii[k]
    }

    /// Cone distance between two vertices.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        match (self.ring_and_node(a), self.ring_and_node(b)) {
            (None, None) => 0.0,
            (None, Some(_)) => self.radius(b),
            (Some(_), None) => self.radius(a),
            (Some((ka, va)), Some((kb, vb))) => {
                let (r1, r2) = (self.ring_radii[ka], self.ring_radii[kb]);
                let angle = self.link.distance(va, vb).min(PI);
                (r1 * r1 + r2 * r2 - 2.0 * r1 * r2 * angle.cos()).max(0.0).sqrt()
            }
        }
    }

    pub fn distances_from(&self, x: usize) -> Vec<f64> {
        (0..self.len()).map(|y| self.distance(x, y)).collect()
    }

    /// Longest edge, measured in cone distance.
    pub fn max_edge_length(&self) -> f64 {
        self.edges.iter().map(|&(a, b, _)| self.distance(a, b)).fold(0.0, f64::max)
    }

    /// Vertices with `lo ≤ r < hi`.
    pub fn shell(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.len()).filter(|&v| (lo..hi).contains(&self.radius(v))).collect()
    }

    /// Whether `B(x, r)` reaches past the truncation.
    pub fn is_clipped(&self, x: usize, r: f64) -> bool {
        let rx = self.radius(x);
        rx + r > self.r_outer() || (!self.apex && rx - r < self.r_inner())
    }

    /// `V(x, r)`: measure of the vertices within distance `r` of `x`.
    pub fn ball_volume(&self, x: usize, r: f64) -> Result<BallVolume> {
        if !(r > 0.0) {
            return domain(format!("ball radius must be positive, got {r}"));
        }
        let tol = 1e-12 * r;
        let volume = (0..self.len())
            .filter(|&y| self.distance(x, y) <= r + tol)
            .map(|y| self.measures[y])
            .sum();
        Ok(BallVolume { volume, clipped: self.is_clipped(x, r) })
    }

    /// Vertices of the closed ball `B(x, r)`.
    pub fn ball(&self, x: usize, r: f64) -> Vec<usize> {
        let tol = 1e-12 * r;
        (0..self.len()).filter(|&y| self.distance(x, y) <= r + tol).collect()
    }

    /// Greedy maximal `s`-separated subset of `region`, scanned in index
    /// order. Every region vertex ends up within distance `< s` of the net.
    pub fn separated_net(&self, region: &[usize], s: f64) -> Result<Vec<usize>> {
        if region.is_empty() {
            return domain("empty region");
        }
        if !(s > 0.0) {
            return domain("separation must be positive");
        }
        let mut sorted = region.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut net: Vec<usize> = Vec::new();
        for &v in &sorted {
            if net.iter().all(|&w| self.distance(v, w) >= s) {
                net.push(v);
            }
        }
        Ok(net)
    }

    /// Annular covering `A₀ = D_R`, `A_i = A(κ^{i−1}R, κ^i R)` for
    /// `i = 1..=levels`, buffers `A*_i` (cells whose closure meets `Ā_i`) and
    /// outers `A#_i` (cells whose closure meets `Ā*_i`). The covered set and
    /// its target are both `D_{κ^levels R}`.
    pub fn annular_covering(&self, r: f64, kappa: f64, levels: usize) -> Result<AnnularCovering> {
        if !(kappa > 1.0) {
            return domain(format!("κ must exceed 1, got {kappa}"));
        }
        if !(r > self.r_inner()) {
            return domain(format!("R = {r} must exceed the inner radius {}", self.r_inner()));
        }
        let radii: Vec<f64> = (0..=levels).map(|i| r * kappa.powi(i as i32)).collect();
        let top = *radii.last().unwrap();
        if top > self.r_outer() * (1.0 + 1e-12) {
            return domain(format!("outermost annulus radius {top} exceeds the truncation {}", self.r_outer()));
        }
        let mut cells: Vec<Vec<usize>> = Vec::with_capacity(levels + 1);
        cells.push(self.shell(f64::NEG_INFINITY, radii[0]));
        for i in 1..=levels {
            let hi = if i == levels && top >= self.r_outer() { f64::INFINITY } else { radii[i] };
            cells.push(self.shell(radii[i - 1], hi));
        }
        if let Some(i) = cells.iter().position(|c| c.is_empty()) {
            return domain(format!("annulus {i} contains no grid vertex; refine the grid"));
        }
        let n = self.len();
        let closure = |set: &[usize]| -> FixedBitSet {
            let mut out = FixedBitSet::with_capacity(n);
            for &v in set {
                out.insert(v);
                for &w in &self.neighbors[v] {
                    out.insert(w);
                }
            }
            out
        };
        let as_set = |set: &[usize]| -> FixedBitSet {
            let mut out = FixedBitSet::with_capacity(n);
            for &v in set {
                out.insert(v);
            }
            out
        };
        let cell_sets: Vec<FixedBitSet> = cells.iter().map(|c| as_set(c)).collect();
        let closures: Vec<FixedBitSet> = cells.iter().map(|c| closure(c)).collect();
        let mut buffers = Vec::with_capacity(cells.len());
        for i in 0..cells.len() {
            let mut b: Vec<usize> = Vec::new();
            for j in 0..cells.len() {
                if !closures[i].is_disjoint(&cell_sets[j]) {
                    b.extend(&cells[j]);
                }
            }
            b.sort_unstable();
            buffers.push(b);
        }
        let mut outers = Vec::with_capacity(cells.len());
        for b in &buffers {
            let cb = closure(b);
            let mut o: Vec<usize> = Vec::new();
            for j in 0..cells.len() {
                if !cb.is_disjoint(&cell_sets[j]) {
                    o.extend(&cells[j]);
                }
            }
            o.sort_unstable();
            outers.push(o);
        }
        let target: Vec<usize> = cells.iter().flatten().copied().collect();
        let specs: Vec<CellSpec> = (0..cells.len())
            .map(|i| CellSpec { inner: cells[i].clone(), buffer: buffers[i].clone(), outer: outers[i].clone() })
            .collect();
        let covering = GoodCovering::new(&self.measures, specs, &target, &target, Some(&self.adjacency_pairs()))?;
        Ok(AnnularCovering { radii, covering })
    }

    /// Net covering of `region` inside `target`: `U_i = B(x_i, s)`,
    /// `U*_i = U#_i = B(x_i, 3s + h)`, all clipped to `target`, where `x_i`
    /// is a maximal `s`-net of `region` and `h` the longest grid edge inside
    /// `target`. The slack `h` keeps `k(i, j) = i` valid when closures meet
    /// across an edge.
    pub fn net_covering(&self, region: &[usize], target: &[usize], s: f64) -> Result<GoodCovering> {
        let net = self.separated_net(region, s)?;
        let mut in_target = vec![false; self.len()];
        for &v in target {
            in_target[v] = true;
        }
        let h = self
            .edges
            .iter()
            .filter(|&&(a, b, _)| in_target[a] && in_target[b])
            .map(|&(a, b, _)| self.distance(a, b))
            .fold(0.0, f64::max);
        let specs: Vec<CellSpec> = net
            .iter()
            .map(|&x| {
                let mut inner = Vec::new();
                let mut outer = Vec::new();
                for y in 0..self.len() {
                    if !in_target[y] {
                        continue;
                    }
                    let d = self.distance(x, y);
                    if d <= s * (1.0 + 1e-12) {
                        inner.push(y);
                    }
                    if d <= (3.0 * s + h) * (1.0 + 1e-12) {
                        outer.push(y);
                    }
                }
                CellSpec { inner, buffer: outer.clone(), outer }
            })
            .collect();
        GoodCovering::new(&self.measures, specs, region, target, Some(&self.adjacency_pairs()))
    }

    fn adjacency_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&(a, b, _)| (a, b)).collect()
    }

    /// Remote / anchored classification of `B(x, r)` relative to base `o`.
    pub fn classify_ball(&self, x: usize, r: f64, o: usize, epsilon: f64) -> Result<BallClass> {
        classify_by_distance(x == o, self.distance(o, x), r, epsilon)
    }

    /// Radius function `ρ = max(1, r)` with base point `o`.
    pub fn radius_field(&self, base: usize) -> RadiusField {
        let values: Vec<f64> = (0..self.len()).map(|v| self.radius(v).max(1.0)).collect();
        let mut c: f64 = 1.0;
        for (v, &rho) in values.iter().enumerate() {
            let w = (1.0 + self.distance(base, v).powi(2)).sqrt();
            c = c.max(rho / w).max(w / rho);
        }
        RadiusField { base, values, equivalence_constant: c }
    }

    /// Volume-doubling scan: `max V(x, 2r)/V(x, r)` over sampled unclipped
    /// balls.
    pub fn doubling_scan(&self, spec: &SampleSpec) -> Result<DoublingScan> {
        let (samples, excluded) = self.sample_balls(spec, 2.0)?;
        let mut out = Vec::with_capacity(samples.len());
        for (x, r) in samples {
            let dist = self.distances_from(x);
            let tol = 1e-12 * r;
            let mut v1 = 0.0;
            let mut v2 = 0.0;
            for (y, &d) in dist.iter().enumerate() {
                if d <= r + tol {
                    v1 += self.measures[y];
                }
                if d <= 2.0 * r + 2.0 * tol {
                    v2 += self.measures[y];
                }
            }
            let ell = self.distance(spec.base, x);
            out.push(BallSample {
                center: x,
                radius: r,
                ratio: v2 / v1,
                case: DoublingCase::classify(x == spec.base, ell, r, spec.epsilon),
            });
        }
        let worst = out
            .iter()
            .copied()
            .reduce(|a, b| match a.ratio.total_cmp(&b.ratio) {
                std::cmp::Ordering::Less => b,
                std::cmp::Ordering::Greater => a,
                std::cmp::Ordering::Equal => {
                    if (b.center, b.radius.to_bits()) < (a.center, a.radius.to_bits()) {
                        b
                    } else {
                        a
                    }
                }
            })
            .ok_or_else(|| Error::Domain("no admissible (unclipped) ball was sampled".into()))?;
        Ok(DoublingScan { c_d: worst.ratio, worst, samples: out, excluded })
    }

    /// Draws `spec.count` balls whose `growth`-fold enlargement is unclipped.
    /// Returns the balls and how many draws were rejected.
    pub(crate) fn sample_balls(&self, spec: &SampleSpec, growth: f64) -> Result<(Vec<(usize, f64)>, usize)> {
        let (lo, hi) = spec.radius_range;
        if !(lo > 0.0 && hi >= lo) {
            return domain(format!("bad radius range [{lo}, {hi}]"));
        }
        if !(spec.epsilon > 0.0 && spec.epsilon <= 1.0) {
            return domain("remote parameter must lie in (0, 1]");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut out = Vec::with_capacity(spec.count);
        let mut excluded = 0usize;
        let max_draws = spec.count.max(1) * 200;
        let mut draws = 0;
        while out.len() < spec.count && draws < max_draws {
            draws += 1;
            let x = match spec.centers {
                CenterMode::Base => spec.base,
                CenterMode::Any | CenterMode::Remote => rng.random_range(0..self.len()),
            };
            let r_hi = match spec.centers {
                CenterMode::Remote => hi.min(spec.epsilon * self.distance(spec.base, x) / 2.0),
                _ => hi,
            };
            if r_hi < lo {
                excluded += 1;
                continue;
            }
            let r = if r_hi > lo { rng.random_range(lo..=r_hi) } else { lo };
            if self.is_clipped(x, growth * r) {
                excluded += 1;
                continue;
            }
            out.push((x, r));
        }
        Ok((out, excluded))
    }

    /// Conductance Laplacian restricted to the edges inside `subset`,
    /// re-indexed to `0..subset.len()`, with the matching vertex measures.
    pub fn restricted_energy(&self, subset: &[usize]) -> (CsrMatrix, Vec<f64>) {
        let mut local = vec![usize::MAX; self.len()];
        for (k, &v) in subset.iter().enumerate() {
            local[v] = k;
        }
        let edges: Vec<(usize, usize, f64)> = self
            .edges
            .iter()
            .filter(|&&(a, b, _)| local[a] != usize::MAX && local[b] != usize::MAX)
            .map(|&(a, b, c)| (local[a], local[b], c))
            .collect();
        let m = subset.iter().map(|&v| self.measures[v]).collect();
        (CsrMatrix::laplacian(subset.len(), &edges, None), m)
    }

    /// Measure of the outer truncation face carried by each vertex (zero
    /// away from the last ring).
    pub fn outer_face(&self) -> Vec<f64> {
        let mut face = vec![0.0; self.len()];
        let k = self.rings() - 1;
        let area = self.r_outer().powi(self.dim as i32 - 1);
        for v in 0..self.link.len() {
            face[self.vertex(k, v)] = area * self.link.measures[v];
        }
        face
    }
}

fn circle_link(length: f64, steps: usize) -> LinkGraph {
    let h = length / steps as f64;
    let edges = (0..steps)
        .map(|i| LinkEdge { a: i, b: (i + 1) % steps, length: h, conductance: 1.0 / h })
        .collect();
    let mut table = vec![0.0; steps * steps];
    for a in 0..steps {
        for b in 0..steps {
            let k = a.abs_diff(b);
            table[a * steps + b] = k.min(steps - k) as f64 * h;
        }
    }
    LinkGraph { dim: 1, measures: vec![h; steps], edges, metric: LinkMetric::Table(table) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BallVolume {
    pub volume: f64,
    /// The ball reaches past the truncation; its volume is of the clipped set.
    pub clipped: bool,
}

#[derive(Debug, Clone)]
pub struct AnnularCovering {
    /// `R_i = κ^i R` for `i = 0..=levels`.
    pub radii: Vec<f64>,
    pub covering: GoodCovering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BallClass {
    Remote,
    Anchored,
    Neither,
}

/// Anchored iff centred at the base point, remote iff `r ≤ ε d(o, x)/2`.
pub fn classify_by_distance(at_base: bool, dist_to_base: f64, r: f64, epsilon: f64) -> Result<BallClass> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return domain(format!("remote parameter must lie in (0, 1], got {epsilon}"));
    }
    Ok(if at_base {
        BallClass::Anchored
    } else if r <= epsilon * dist_to_base / 2.0 {
        BallClass::Remote
    } else {
        BallClass::Neither
    })
}

/// `δ = ε δ₀² / 8`: the Poincaré parameter valid for all balls once it holds
/// for remote and anchored balls with parameter `δ₀`.
pub fn combine_parameter(epsilon: f64, delta0: f64) -> Result<f64> {
    for (name, v) in [("ε", epsilon), ("δ₀", delta0)] {
        if !(v > 0.0 && v <= 1.0) {
            return domain(format!("{name} must lie in (0, 1], got {v}"));
        }
    }
    Ok(epsilon * delta0 * delta0 / 8.0)
}

/// The case split of the doubling argument for a ball `B(x, r)` at distance
/// `ℓ = d(o, x)` from the base point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DoublingCase {
    /// `r ≤ εℓ/2` (or anchored).
    Remote,
    /// `r ≥ 3ℓ/2`.
    Large,
    /// `εℓ/2 < r < 3ℓ/2`.
    Intermediate,
}

impl DoublingCase {
    fn classify(at_base: bool, ell: f64, r: f64, epsilon: f64) -> Self {
        if !at_base && r <= epsilon * ell / 2.0 {
            DoublingCase::Remote
        } else if r >= 1.5 * ell {
            DoublingCase::Large
        } else {
            DoublingCase::Intermediate
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterMode {
    /// Uniform over all vertices.
    Any,
    /// Always the base point (anchored balls).
    Base,
    /// Uniform centres, radii capped so the ball is remote.
    Remote,
}

/// How balls are drawn for scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub count: usize,
    pub seed: u64,
    pub radius_range: (f64, f64),
    pub centers: CenterMode,
    pub base: usize,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BallSample {
    pub center: usize,
    pub radius: f64,
    pub ratio: f64,
    pub case: DoublingCase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoublingScan {
    pub c_d: f64,
    pub worst: BallSample,
    pub samples: Vec<BallSample>,
    /// Draws rejected because the doubled ball was clipped or no admissible
    /// radius existed.
    pub excluded: usize,
}

/// Weight function `ρ` with its measured equivalence constant against
/// `(1 + d(o, x)²)^{1/2}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusField {
    pub base: usize,
    pub values: Vec<f64>,
    pub equivalence_constant: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(l: f64, r_max: f64, radial: usize, angular: usize) -> DiscretizedCone {
        DiscretizedCone::build(ConeLink::Circle { length: l }, 0.0, r_max, radial, angular).unwrap()
    }

    #[test]
    fn total_measure_matches_cone_volume() {
        for l in [PI, 2.0 * PI, 3.0 * PI] {
            let c = circle(l, 4.0, 40, 32);
            assert!((c.total_measure() - l * 16.0 / 2.0).abs() < 1e-9 * l * 8.0);
        }
        let c = DiscretizedCone::build(ConeLink::Graph(LinkGraph::round_sphere(1)), 1.0, 2.0, 10, 0).unwrap();
        let exact = 4.0 * PI * (8.0 - 1.0) / 3.0;
        assert!((c.total_measure() - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn build_rejects_bad_parameters() {
        let sphere = ConeLink::Graph(LinkGraph::round_sphere(0));
        assert!(matches!(DiscretizedCone::build(sphere, 0.0, 2.0, 4, 0), Err(Error::Unsupported(_))));
        assert!(DiscretizedCone::build(ConeLink::Circle { length: 1.0 }, 0.0, 2.0, 0, 8).is_err());
        assert!(DiscretizedCone::build(ConeLink::Circle { length: 1.0 }, 0.0, 2.0, 4, 2).is_err());
        assert!(DiscretizedCone::build(ConeLink::Circle { length: 1.0 }, 2.0, 1.0, 4, 8).is_err());
        assert!(DiscretizedCone::build(ConeLink::Circle { length: -1.0 }, 0.0, 1.0, 4, 8).is_err());
    }

    #[test]
    fn flat_cone_distance_is_euclidean() {
        let c = circle(2.0 * PI, 4.0, 40, 64);
        let a = c.vertex(9, 0);
        let b = c.vertex(19, 16);
        let (r1, r2) = (c.radius(a), c.radius(b));
        let euclid = (r1 * r1 + r2 * r2).sqrt();
        assert!((c.distance(a, b) - euclid).abs() < 1e-12);
        // Across more than half a turn, the shortest path goes the other way
        // around; opposite points are at distance r₁ + r₂.
        let opp = c.vertex(19, 32);
        assert!((c.distance(c.vertex(19, 0), opp) - 2.0 * c.radius(opp)).abs() < 1e-12);
    }

    #[test]
    fn anchored_ball_area() {
        // L r²/2 on every circle cone.
        for l in [PI, 2.0 * PI, 3.0 * PI] {
            let c = circle(l, 4.0, 200, 64);
            let v = c.ball_volume(0, 1.0).unwrap();
            assert!(!v.clipped);
            assert!((v.volume - l / 2.0).abs() < 0.02 * l / 2.0, "{} vs {}", v.volume, l / 2.0);
        }
        let c = circle(2.0 * PI, 4.0, 200, 64);
        assert!((c.ball_volume(0, 1.0).unwrap().volume - PI).abs() < 0.02 * PI);
    }

    #[test]
    fn oversized_ball_is_whole_truncation() {
        let c = circle(2.0 * PI, 2.0, 20, 16);
        let v = c.ball_volume(c.vertex(5, 3), 100.0).unwrap();
        assert!(v.clipped);
        assert!((v.volume - c.total_measure()).abs() < 1e-12);
        assert!(c.ball_volume(0, 0.0).is_err());
    }

    #[test]
    fn separated_net_examples() {
        // Radial segment 0..3 with unit spacing.
        let c = circle(2.0 * PI, 3.5, 3, 8);
        let segment: Vec<usize> = std::iter::once(0).chain((0..3).map(|k| c.vertex(k, 0))).collect();
        let net = c.separated_net(&segment, 1.0).unwrap();
        assert_eq!(net.len(), 4);
        assert_eq!(c.separated_net(&segment, 10.0).unwrap().len(), 1);
        assert!(c.separated_net(&[], 1.0).is_err());

        let c = circle(2.0 * PI, 4.0, 20, 32);
        let region = c.shell(1.0, 3.0);
        let net = c.separated_net(&region, 0.7).unwrap();
        for (i, &a) in net.iter().enumerate() {
            for &b in &net[i + 1..] {
                assert!(c.distance(a, b) >= 0.7);
            }
        }
        for &v in &region {
            assert!(net.iter().any(|&w| c.distance(v, w) < 0.7));
        }
    }

    #[test]
    fn annular_covering_example() {
        let c = circle(2.0 * PI, 8.0, 160, 64);
        let ac = c.annular_covering(1.0, 2.0, 3).unwrap();
        assert_eq!(ac.radii, vec![1.0, 2.0, 4.0, 8.0]);
        let v = ac.covering.validate();
        assert!(v.is_good(), "{:?}", v.violations);
        assert!(v.q1 <= 9);
        // A*_2 = A_1 ∪ A_2 ∪ A_3.
        let cells = ac.covering.cells();
        let mut expected = cells[1].inner.clone();
        expected.union_with(&cells[2].inner);
        expected.union_with(&cells[3].inner);
        assert_eq!(cells[2].buffer, expected);
        // Only consecutive annuli touch.
        let g = ac.covering.associated_graph().unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (2, 3)]);
        // μ(A_{i+1})/μ(A_i) = κ² for the exact cone.
        for i in 1..3 {
            let ratio = g.measure(i + 1) / g.measure(i);
            assert!((ratio - 4.0).abs() < 0.05 * 4.0, "ratio {ratio}");
        }
        assert!(c.annular_covering(1.0, 2.0, 4).is_err());
        assert!(c.annular_covering(1.0, 1.0, 2).is_err());
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_by_distance(false, 10.0, 1.0, 0.5).unwrap(), BallClass::Remote);
        assert_eq!(classify_by_distance(true, 0.0, 3.0, 0.5).unwrap(), BallClass::Anchored);
        assert_eq!(classify_by_distance(false, 10.0, 4.0, 0.5).unwrap(), BallClass::Neither);
        assert!(classify_by_distance(false, 10.0, 4.0, 0.0).is_err());
        let c = circle(2.0 * PI, 4.0, 10, 8);
        assert_eq!(c.classify_ball(0, 1.0, 0, 0.5).unwrap(), BallClass::Anchored);
    }

    #[test]
    fn combine_parameter_examples() {
        assert_eq!(combine_parameter(1.0, 1.0).unwrap(), 0.125);
        assert_eq!(combine_parameter(0.5, 0.5).unwrap(), 1.0 / 64.0);
        assert_eq!(combine_parameter(0.3, 1.0).unwrap(), 0.3 / 8.0);
        assert!(combine_parameter(1.5, 1.0).is_err());
        assert!(combine_parameter(0.5, 0.0).is_err());
    }

    #[test]
    fn radius_field_is_equivalent_to_distance_weight() {
        let c = circle(2.0 * PI, 6.0, 30, 16);
        let rf = c.radius_field(0);
        assert!(rf.values.iter().all(|&v| v >= 1.0));
        for v in 0..c.len() {
            if c.radius(v) >= 1.0 {
                assert_eq!(rf.values[v], c.radius(v));
            }
        }
        assert!(rf.equivalence_constant < 1.5);
    }

    #[test]
    fn sphere_link_is_round() {
        let s = LinkGraph::round_sphere(2);
        assert!((s.volume() - 4.0 * PI).abs() < 1e-12);
        // First nonzero eigenvalue of the round S² Laplacian is 2.
        let eig = s.laplacian_eigenvalues().unwrap();
        assert!(eig[0].abs() < 1e-9);
        assert!((eig[1] - 2.0).abs() < 0.05, "{}", eig[1]);
        let json = s.to_json();
        let again = LinkGraph::from_json(&json).unwrap();
        assert_eq!(again.len(), s.len());
    }
}
