//! Toric Kähler cone data: Gorenstein covector, the cross-section polytope
//! `P_Δ`, basic lattice triangulations, support functions and the invariant
//! `A` of a compactly supported Kähler class.
//!
//! Lattice geometry is exact (integers and `BigRational`); floating point
//! appears only in the reported class coefficients and in `A`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

type Q = BigRational;

fn q(v: i64) -> Q {
    Q::from_integer(BigInt::from(v))
}

fn q_of(v: f64) -> Result<Q> {
    Q::from_float(v).ok_or_else(|| Error::Domain(format!("non-finite value {v}")))
}

fn to_f64(v: &Q) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

fn gcd(a: i64, b: i64) -> i64 {
    num::integer::gcd(a, b)
}

fn idot(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn qdot_int(a: &[Q], b: &[i64]) -> Q {
    a.iter().zip(b).fold(Q::zero(), |acc, (x, &y)| acc + x * q(y))
}

/// Integer determinant by Bareiss elimination.
pub fn det(rows: &[Vec<i64>]) -> i64 {
    let n = rows.len();
    if n == 0 {
        return 1;
    }
    let mut m: Vec<Vec<i128>> = rows.iter().map(|r| r.iter().map(|&v| v as i128).collect()).collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if m[k][k] == 0 {
            match (k + 1..n).find(|&i| m[i][k] != 0) {
                Some(i) => {
                    m.swap(i, k);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
            }
        }
        prev = m[k][k];
    }
    (sign * m[n - 1][n - 1]) as i64
}

/// Generalized cross product of `m − 1` vectors in `ℤᵐ`: the vector of
/// signed maximal minors, orthogonal to all inputs.
fn cross(vs: &[&[i64]], m: usize) -> Vec<i64> {
    (0..m)
        .map(|i| {
            let minor: Vec<Vec<i64>> = vs
                .iter()
                .map(|v| v.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x).collect())
                .collect();
            let s = if (i + m - 1) % 2 == 0 { 1 } else { -1 };
            s * det(&minor)
        })
        .collect()
}

fn primitive(v: Vec<i64>) -> Vec<i64> {
    let g = v.iter().fold(0, |a, &b| gcd(a, b));
    if g <= 1 {
        v
    } else {
        v.into_iter().map(|x| x / g).collect()
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Row-reduces `rows` in place; returns pivot columns.
fn row_reduce(rows: &mut [Vec<Q>], cols: usize) -> Vec<usize> {
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows.len()).find(|&i| !rows[i][c].is_zero()) else {
            continue;
        };
        rows.swap(r, p);
        let inv = rows[r][c].recip();
        for x in rows[r].iter_mut() {
            *x = &*x * &inv;
        }
        for i in 0..rows.len() {
            if i != r && !rows[i][c].is_zero() {
                let f = rows[i][c].clone();
                let (head, tail) = if i < r { rows.split_at_mut(r) } else { rows.split_at_mut(i) };
                let (src, dst) = if i < r { (&tail[0], &mut head[i]) } else { (&head[r], &mut tail[0]) };
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d = &*d - &f * s;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    pivots
}

/// Solves a square nonsingular rational system.
fn solve_square(a: &[Vec<Q>], b: &[Q]) -> Option<Vec<Q>> {
    let n = b.len();
    let mut rows: Vec<Vec<Q>> = a.iter().zip(b).map(|(r, v)| r.iter().cloned().chain([v.clone()]).collect()).collect();
    let piv = row_reduce(&mut rows, n);
    if piv.len() < n {
        return None;
    }
    Some(rows.into_iter().map(|r| r[n].clone()).collect())
}

fn rank(vs: &[Vec<i64>], m: usize) -> usize {
    let mut rows: Vec<Vec<Q>> = vs.iter().map(|v| v.iter().map(|&x| q(x)).collect()).collect();
    row_reduce(&mut rows, m).len()
}

/// A rational polyhedral cone in `ℤᵐ` spanned by primitive rays `u_j`; its
/// dual `𝒞 = {y : ⟨u_j, y⟩ ≥ 0}` is the moment cone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToricCone {
    dim: usize,
    rays: Vec<Vec<i64>>,
}

impl ToricCone {
    pub fn new(rays: Vec<Vec<i64>>) -> Result<Self> {
        let Some(first) = rays.first() else {
            return domain("no rays");
        };
        let dim = first.len();
        if dim < 2 {
            return domain("dimension must be at least 2");
        }
        for r in &rays {
            if r.len() != dim {
                return domain("rays have different lengths");
            }
            let g = r.iter().fold(0, |a, &b| gcd(a, b));
            if g != 1 {
                return domain(format!("ray {r:?} is not primitive"));
            }
        }
        let mut seen = rays.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != rays.len() {
            return domain("repeated ray");
        }
        Ok(Self { dim, rays })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rays(&self) -> &[Vec<i64>] {
        &self.rays
    }

    /// Primitive inward normals of the facets of `cone(u_j)`.
    pub fn facet_normals(&self) -> Vec<Vec<i64>> {
        let m = self.dim;
        let mut out: Vec<Vec<i64>> = Vec::new();
        for idx in combinations(self.rays.len(), m - 1) {
            let vs: Vec<&[i64]> = idx.iter().map(|&i| self.rays[i].as_slice()).collect();
            let n = cross(&vs, m);
            if n.iter().all(|&x| x == 0) {
                continue;
            }
            let n = primitive(n);
            let signs: Vec<i64> = self.rays.iter().map(|u| idot(u, &n).signum()).collect();
            let cand = if signs.iter().all(|&s| s >= 0) {
                n
            } else if signs.iter().all(|&s| s <= 0) {
                n.into_iter().map(|x| -x).collect()
            } else {
                continue;
            };
            if !out.contains(&cand) {
                out.push(cand);
            }
        }
        out.sort();
        out
    }

    /// Full-dimensional and containing no line.
    pub fn is_strictly_convex(&self) -> bool {
        rank(&self.rays, self.dim) == self.dim && rank(&self.facet_normals(), self.dim) == self.dim
    }
}

/// Why no Gorenstein covector exists.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GorensteinObstruction {
    /// Integer weights `y` with `Σ y_j u_j = 0` but `Σ y_j ≠ 0`.
    Inconsistent { combination: Vec<i64> },
    /// The unique rational solution is not integral.
    NonIntegral { solution: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GorensteinData {
    pub covector: Option<Vec<i64>>,
    pub obstruction: Option<GorensteinObstruction>,
}

/// Solves `γ · u_j = 1` for all rays over `ℤ`.
pub fn gorenstein_covector(cone: &ToricCone) -> Result<GorensteinData> {
    if !cone.is_strictly_convex() {
        return domain("ray cone is not strictly convex");
    }
    let m = cone.dim;
    let d = cone.rays.len();
    // Rows [u_j | 1 | e_j]: the e-block tracks row combinations.
    let mut rows: Vec<Vec<Q>> = cone
        .rays
        .iter()
        .enumerate()
        .map(|(j, u)| {
            let mut r: Vec<Q> = u.iter().map(|&x| q(x)).collect();
            r.push(Q::one());
            r.extend((0..d).map(|k| if k == j { Q::one() } else { Q::zero() }));
            r
        })
        .collect();
    let piv = row_reduce(&mut rows, m);
    for r in &rows[piv.len()..] {
        if !r[m].is_zero() {
            let comb: Vec<Q> = r[m + 1..].to_vec();
            let denom = comb.iter().fold(BigInt::one(), |acc, c| num::integer::lcm(acc, c.denom().clone()));
            let ints = comb
                .iter()
                .map(|c| (c * Q::from_integer(denom.clone())).to_integer().to_i64().unwrap_or(0))
                .collect();
            return Ok(GorensteinData {
                covector: None,
                obstruction: Some(GorensteinObstruction::Inconsistent { combination: primitive(ints) }),
            });
        }
    }
    // Full rank (strict convexity), so the solution is unique.
    let mut gamma = vec![Q::zero(); m];
    for (k, &c) in piv.iter().enumerate() {
        gamma[c] = rows[k][m].clone();
    }
    if gamma.iter().all(|g| g.is_integer()) {
        Ok(GorensteinData {
            covector: Some(gamma.iter().map(|g| g.to_integer().to_i64().unwrap()).collect()),
            obstruction: None,
        })
    } else {
        Ok(GorensteinData {
            covector: None,
            obstruction: Some(GorensteinObstruction::NonIntegral {
                solution: gamma.iter().map(|g| g.to_string()).collect(),
            }),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    /// Vertex of `P_Δ` (a boundary ray of the cone).
    Vertex,
    /// Non-vertex point on the relative boundary.
    Boundary,
    Interior,
}

/// `P_Δ = {x ∈ cone(u_j) : γ(x) = 1}` with its lattice points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossSection {
    pub dim: usize,
    pub gamma: Vec<i64>,
    pub vertices: Vec<Vec<i64>>,
    /// Every lattice point of `P_Δ`: the input rays first, then the other
    /// points in lexicographic order.
    pub points: Vec<Vec<i64>>,
    pub kinds: Vec<PointKind>,
    pub normals: Vec<Vec<i64>>,
}

impl CrossSection {
    pub fn interior_points(&self) -> Vec<&[i64]> {
        self.points
            .iter()
            .zip(&self.kinds)
            .filter(|(_, k)| **k == PointKind::Interior)
            .map(|(p, _)| p.as_slice())
            .collect()
    }
}

pub fn cross_section(cone: &ToricCone, gamma: &[i64]) -> Result<CrossSection> {
    let m = cone.dim;
    if gamma.len() != m || cone.rays.iter().any(|u| idot(u, gamma) != 1) {
        return domain("γ is not a Gorenstein covector of this cone");
    }
    let normals = cone.facet_normals();
    let lo: Vec<i64> = (0..m).map(|i| cone.rays.iter().map(|u| u[i]).min().unwrap()).collect();
    let hi: Vec<i64> = (0..m).map(|i| cone.rays.iter().map(|u| u[i]).max().unwrap()).collect();
    let mut found: Vec<Vec<i64>> = Vec::new();
    let mut cur = lo.clone();
    'scan: loop {
        if idot(&cur, gamma) == 1 && normals.iter().all(|n| idot(n, &cur) >= 0) {
            found.push(cur.clone());
        }
        for i in (0..m).rev() {
            if cur[i] < hi[i] {
                cur[i] += 1;
                for (k, c) in cur.iter_mut().enumerate().skip(i + 1) {
                    *c = lo[k];
                }
                continue 'scan;
            }
        }
        break;
    }
    let vertices: Vec<Vec<i64>> =
        cone.rays.iter().filter(|u| normals.iter().filter(|n| idot(n, u) == 0).count() >= m - 1).cloned().collect();
    let mut points: Vec<Vec<i64>> = cone.rays.clone();
    points.extend(found.into_iter().filter(|p| !cone.rays.contains(p)));
    let kinds = points
        .iter()
        .map(|p| {
            if vertices.contains(p) {
                PointKind::Vertex
            } else if normals.iter().all(|n| idot(n, p) > 0) {
                PointKind::Interior
            } else {
                PointKind::Boundary
            }
        })
        .collect();
    Ok(CrossSection { dim: m - 1, gamma: gamma.to_vec(), vertices, points, kinds, normals })
}

/// A lattice triangulation of `P_Δ`, i.e. a simplicial subdivision of the
/// fan. Simplices index into `rays`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FanTriangulation {
    pub dim: usize,
    pub rays: Vec<Vec<i64>>,
    pub kinds: Vec<PointKind>,
    pub simplices: Vec<Vec<usize>>,
    pub determinants: Vec<i64>,
    pub maximal: bool,
    pub basic: bool,
}

impl FanTriangulation {
    pub fn interior_rays(&self) -> Vec<usize> {
        (0..self.rays.len()).filter(|&i| self.kinds[i] == PointKind::Interior).collect()
    }
}

fn simplex_det(rays: &[Vec<i64>], s: &[usize]) -> i64 {
    det(&s.iter().map(|&i| rays[i].clone()).collect::<Vec<_>>())
}

/// Barycentric coordinates of `p` in the cone over simplex `s` (exact).
fn barycentric(rays: &[Vec<i64>], s: &[usize], p: &[i64]) -> Vec<Q> {
    let d = simplex_det(rays, s);
    (0..s.len())
        .map(|k| {
            let mut rows: Vec<Vec<i64>> = s.iter().map(|&i| rays[i].clone()).collect();
            rows[k] = p.to_vec();
            Q::new(BigInt::from(det(&rows)), BigInt::from(d))
        })
        .collect()
}

/// Triangulation using every lattice point of `P_Δ` as a vertex: a fan from
/// the first interior point (or the first vertex), then each remaining
/// point is inserted by replacing, in every simplex containing it, each
/// vertex with positive barycentric weight.
pub fn maximal_triangulation(p: &CrossSection) -> Result<FanTriangulation> {
    if p.dim >= 3 {
        return Err(Error::Unsupported(format!(
            "triangulating a {}-dimensional polytope: maximal need not be basic",
            p.dim
        )));
    }
    let rays = p.points.clone();
    let vidx: Vec<usize> = (0..rays.len()).filter(|&i| p.kinds[i] == PointKind::Vertex).collect();
    // Vertices in cyclic order (for a segment: its two ends).
    let ordered: Vec<usize> = {
        let v0 = vidx[0];
        let mut rest: Vec<usize> = vidx[1..].to_vec();
        if p.dim == 2 {
            rest.sort_by(|&a, &b| {
                // Orientation of (v0, a, b) inside the plane γ = 1.
                let s = det(&[rays[v0].clone(), rays[a].clone(), rays[b].clone()]);
                0.cmp(&s)
            });
        }
        std::iter::once(v0).chain(rest).collect()
    };
    let first_interior = (0..rays.len()).find(|&i| p.kinds[i] == PointKind::Interior);
    let mut simplices: Vec<Vec<usize>> = match (p.dim, first_interior) {
        (1, _) => vec![vec![ordered[0], ordered[1]]],
        (_, Some(c)) => (0..ordered.len()).map(|i| vec![c, ordered[i], ordered[(i + 1) % ordered.len()]]).collect(),
        (_, None) => (1..ordered.len() - 1).map(|i| vec![ordered[0], ordered[i], ordered[i + 1]]).collect(),
    };
    let placed: Vec<usize> = match (p.dim, first_interior) {
        (1, _) => ordered.clone(),
        (_, Some(c)) => ordered.iter().copied().chain([c]).collect(),
        _ => ordered.clone(),
    };
    for k in 0..rays.len() {
        if placed.contains(&k) {
            continue;
        }
        let mut next = Vec::with_capacity(simplices.len() + 2);
        for s in simplices {
            let bary = barycentric(&rays, &s, &rays[k]);
            if bary.iter().any(|b| b.is_negative()) {
                next.push(s);
                continue;
            }
            for (pos, b) in bary.iter().enumerate() {
                if b.is_positive() {
                    let mut t = s.clone();
                    t[pos] = k;
                    next.push(t);
                }
            }
        }
        simplices = next;
    }
    // Orient each simplex positively and sort for a canonical output.
    for s in simplices.iter_mut() {
        if simplex_det(&rays, s) < 0 {
            s.swap(0, 1);
        }
    }
    simplices.sort();
    let determinants: Vec<i64> = simplices.iter().map(|s| simplex_det(&rays, s)).collect();
    let maximal = simplices.iter().all(|s| {
        (0..rays.len()).filter(|k| !s.contains(k)).all(|k| {
            let b = barycentric(&rays, s, &rays[k]);
            b.iter().any(|x| x.is_negative())
        })
    });
    let basic = determinants.iter().all(|d| d.abs() == 1);
    Ok(FanTriangulation { dim: p.dim + 1, rays, kinds: p.kinds.clone(), simplices, determinants, maximal, basic })
}

/// A failure of strict convexity: `⟨l_σ, u⟩ − h(u)` at a ray off `σ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityWitness {
    pub simplex: usize,
    pub ray: usize,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportCheck {
    pub strictly_convex: bool,
    pub convex: bool,
    pub compactly_supported: bool,
    /// `l_σ` per simplex.
    pub forms: Vec<Vec<f64>>,
    pub witnesses: Vec<ConvexityWitness>,
}

fn exact_values(tri: &FanTriangulation, values: &[f64]) -> Result<Vec<Q>> {
    if values.len() != tri.rays.len() {
        return domain(format!("{} support values for {} rays", values.len(), tri.rays.len()));
    }
    values.iter().map(|&v| q_of(v)).collect()
}

fn linear_forms(tri: &FanTriangulation, lam: &[Q]) -> Result<Vec<Vec<Q>>> {
    tri.simplices
        .iter()
        .map(|s| {
            let a: Vec<Vec<Q>> = s.iter().map(|&i| tri.rays[i].iter().map(|&x| q(x)).collect()).collect();
            let b: Vec<Q> = s.iter().map(|&i| lam[i].clone()).collect();
            solve_square(&a, &b).ok_or_else(|| Error::Domain(format!("degenerate cone {s:?}")))
        })
        .collect()
}

/// Computes `l_σ` on every top cone and checks `⟨l_σ, u⟩ ≥ h(u)` at every
/// ray, with equality exactly on `σ` for strict convexity.
pub fn support_function_check(tri: &FanTriangulation, values: &[f64]) -> Result<SupportCheck> {
    let lam = exact_values(tri, values)?;
    let forms = linear_forms(tri, &lam)?;
    let mut convex = true;
    let mut strict = true;
    let mut witnesses = Vec::new();
    for (si, (s, l)) in tri.simplices.iter().zip(&forms).enumerate() {
        for (k, u) in tri.rays.iter().enumerate() {
            if s.contains(&k) {
                continue;
            }
            let slack = qdot_int(l, u) - &lam[k];
            if !slack.is_positive() {
                strict = false;
                if slack.is_negative() {
                    convex = false;
                }
                witnesses.push(ConvexityWitness { simplex: si, ray: k, slack: to_f64(&slack) });
            }
        }
    }
    let compactly_supported = tri.kinds.iter().zip(&lam).all(|(k, v)| *k == PointKind::Interior || v.is_zero());
    Ok(SupportCheck {
        strictly_convex: strict,
        convex,
        compactly_supported,
        forms: forms.iter().map(|l| l.iter().map(to_f64).collect()).collect(),
        witnesses,
    })
}

/// `[ω_h] = −2π Σ λ_j c_j` over the interior rays, with the moment set
/// `𝒞_h = ∩{⟨u_j, y⟩ ≥ λ_j}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KahlerClass {
    pub interior_rays: Vec<Vec<i64>>,
    pub lambdas: Vec<f64>,
    /// Coefficients `−2πλ_j` on the classes `c_j` dual to the exceptional
    /// divisors.
    pub coefficients: Vec<f64>,
    /// Half-spaces `(u_j, λ_j)` cutting out `𝒞_h`.
    pub moment_halfspaces: Vec<(Vec<i64>, f64)>,
    pub compactly_supported: bool,
    /// False for the zero class.
    pub kahler: bool,
}

pub fn kahler_class(tri: &FanTriangulation, values: &[f64]) -> Result<KahlerClass> {
    let check = support_function_check(tri, values)?;
    let zero = values.iter().all(|&v| v == 0.0);
    if !zero && !check.strictly_convex {
        return Err(Error::Precondition("support function is not strictly convex".into()));
    }
    let interior = tri.interior_rays();
    Ok(KahlerClass {
        interior_rays: interior.iter().map(|&i| tri.rays[i].clone()).collect(),
        lambdas: interior.iter().map(|&i| values[i]).collect(),
        coefficients: interior.iter().map(|&i| -2.0 * PI * values[i]).collect(),
        moment_halfspaces: tri.rays.iter().cloned().zip(values.iter().copied()).collect(),
        compactly_supported: check.compactly_supported,
        kahler: !zero && check.strictly_convex,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AMethod {
    /// `−2π Σ λ_j ∫_{E_j} [ω]^{m−1}` from lattice volumes of the compact
    /// faces of `𝒞_h`.
    DivisorSum,
    /// `−(2π)^m m! vol(𝒞 ∖ 𝒞_h)`.
    PolytopeVolume,
}

/// `[ω]^m` by the chosen method. Requires a strictly convex, compactly
/// supported class.
pub fn class_power(tri: &FanTriangulation, values: &[f64], method: AMethod) -> Result<f64> {
    let check = support_function_check(tri, values)?;
    if !check.compactly_supported {
        return Err(Error::Precondition("class is not compactly supported".into()));
    }
    let interior = tri.interior_rays();
    if interior.is_empty() {
        return Ok(0.0);
    }
    if !check.strictly_convex {
        return Err(Error::Precondition("support function is not strictly convex".into()));
    }
    let m = tri.dim;
    let lam = exact_values(tri, values)?;
    let forms = linear_forms(tri, &lam)?;
    let vol = match method {
        AMethod::DivisorSum => {
            // vol(𝒞∖𝒞_h) = (1/m) Σ_j λ_j latticevol(F_j).
            let mut acc = Q::zero();
            for &j in &interior {
                acc += &lam[j] * face_lattice_volume(tri, &forms, j)?;
            }
            acc / q(m as i64)
        }
        AMethod::PolytopeVolume => complement_volume(tri, &lam, &forms)?,
    };
    let mut fact = 1.0;
    for k in 2..=m {
        fact *= k as f64;
    }
    Ok(-(2.0 * PI).powi(m as i32) * fact * to_f64(&vol))
}

/// Lattice volume of the compact face `F_j = 𝒞_h ∩ {⟨u_j, y⟩ = λ_j}`,
/// whose vertices are the `l_σ` with `j ∈ σ`.
fn face_lattice_volume(tri: &FanTriangulation, forms: &[Vec<Q>], j: usize) -> Result<Q> {
    let u = &tri.rays[j];
    let unorm2 = q(idot(u, u));
    let star: Vec<usize> = (0..tri.simplices.len()).filter(|&s| tri.simplices[s].contains(&j)).collect();
    match tri.dim {
        2 => {
            if star.len() != 2 {
                return domain(format!("ray {j} is not interior to the fan"));
            }
            let w: Vec<Q> = forms[star[0]].iter().zip(&forms[star[1]]).map(|(a, b)| a - b).collect();
            let d = &w[0] * q(u[1]) - &w[1] * q(u[0]);
            Ok(d.abs() / unorm2)
        }
        3 => {
            // Orient each star triangle (j, a, b) positively; the edges a→b
            // then form the link cycle of j.
            let mut next: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
            for &s in &star {
                let t = &tri.simplices[s];
                let pos = t.iter().position(|&x| x == j).unwrap();
                let (a, b) = (t[(pos + 1) % 3], t[(pos + 2) % 3]);
                let (a, b) = if simplex_det(&tri.rays, &[j, a, b]) > 0 { (a, b) } else { (b, a) };
                next.insert(a, (b, s));
            }
            let start = *next.keys().next().ok_or_else(|| Error::Domain("empty star".into()))?;
            let mut cyc = Vec::new();
            let mut a = start;
            loop {
                let (b, s) = *next.get(&a).ok_or_else(|| Error::Domain(format!("ray {j} has an open star")))?;
                cyc.push(s);
                a = b;
                if a == start {
                    break;
                }
            }
            let mut area = [Q::zero(), Q::zero(), Q::zero()];
            for i in 0..cyc.len() {
                let p = &forms[cyc[i]];
                let r = &forms[cyc[(i + 1) % cyc.len()]];
                area[0] += &p[1] * &r[2] - &p[2] * &r[1];
                area[1] += &p[2] * &r[0] - &p[0] * &r[2];
                area[2] += &p[0] * &r[1] - &p[1] * &r[0];
            }
            let dotu = &area[0] * q(u[0]) + &area[1] * q(u[1]) + &area[2] * q(u[2]);
            Ok(dotu.abs() / (q(2) * unorm2))
        }
        d => Err(Error::Unsupported(format!("face volumes in dimension {d}"))),
    }
}

/// `vol(𝒞 ∖ 𝒞_h)` as `vol(𝒞 ∩ {ξ ≤ T}) − vol(𝒞_h ∩ {ξ ≤ T})` with
/// `ξ = Σ u_j` and `T` beyond every vertex of `𝒞_h`.
fn complement_volume(tri: &FanTriangulation, lam: &[Q], forms: &[Vec<Q>]) -> Result<Q> {
    let m = tri.dim;
    let xi: Vec<i64> = (0..m).map(|i| tri.rays.iter().map(|u| u[i]).sum()).collect();
    let t = forms.iter().map(|l| qdot_int(l, &xi)).max().unwrap_or_else(Q::zero) + Q::one();
    let cap: (Vec<Q>, Q) = (xi.iter().map(|&x| q(-x)).collect(), -t);
    let boundary: Vec<(Vec<Q>, Q)> = tri
        .rays
        .iter()
        .zip(&tri.kinds)
        .filter(|(_, k)| **k != PointKind::Interior)
        .map(|(u, _)| (u.iter().map(|&x| q(x)).collect(), Q::zero()))
        .chain([cap.clone()])
        .collect();
    let shifted: Vec<(Vec<Q>, Q)> = tri
        .rays
        .iter()
        .zip(lam)
        .map(|(u, l)| (u.iter().map(|&x| q(x)).collect(), l.clone()))
        .chain([cap])
        .collect();
    Ok(polytope_volume(&boundary, m)? - polytope_volume(&shifted, m)?)
}

/// Volume of the bounded polytope `{y : ⟨a, y⟩ ≥ b}` in dimension 2 or 3.
fn polytope_volume(halfspaces: &[(Vec<Q>, Q)], m: usize) -> Result<Q> {
    let feasible = |y: &[Q]| halfspaces.iter().all(|(a, b)| &a.iter().zip(y).fold(Q::zero(), |s, (x, z)| s + x * z) >= b);
    let tight = |y: &[Q], h: &(Vec<Q>, Q)| h.0.iter().zip(y).fold(Q::zero(), |s, (x, z)| s + x * z) == h.1;
    let mut verts: Vec<Vec<Q>> = Vec::new();
    for idx in combinations(halfspaces.len(), m) {
        let a: Vec<Vec<Q>> = idx.iter().map(|&i| halfspaces[i].0.clone()).collect();
        let b: Vec<Q> = idx.iter().map(|&i| halfspaces[i].1.clone()).collect();
        if let Some(y) = solve_square(&a, &b) {
            if feasible(&y) && !verts.contains(&y) {
                verts.push(y);
            }
        }
    }
    if verts.len() <= m {
        return Ok(Q::zero());
    }
    let nv = q(verts.len() as i64);
    let c: Vec<Q> = (0..m).map(|i| verts.iter().fold(Q::zero(), |s, v| s + &v[i]) / &nv).collect();
    let sub = |a: &[Q], b: &[Q]| -> Vec<Q> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    match m {
        2 => {
            let cyc = convex_order(&verts, None);
            let mut area = Q::zero();
            for i in 0..cyc.len() {
                let p = sub(&verts[cyc[i]], &c);
                let r = sub(&verts[cyc[(i + 1) % cyc.len()]], &c);
                area += &p[0] * &r[1] - &p[1] * &r[0];
            }
            Ok(area.abs() / q(2))
        }
        3 => {
            let mut vol = Q::zero();
            for h in halfspaces {
                let on: Vec<Vec<Q>> = verts.iter().filter(|v| tight(v, h)).cloned().collect();
                if on.len() < 3 {
                    continue;
                }
                let cyc = convex_order(&on, Some(&h.0));
                let p0 = sub(&on[cyc[0]], &c);
                let mut acc = Q::zero();
                for i in 1..cyc.len() - 1 {
                    let p1 = sub(&on[cyc[i]], &c);
                    let p2 = sub(&on[cyc[i + 1]], &c);
                    acc += det3(&p0, &p1, &p2);
                }
                vol += acc.abs();
            }
            Ok(vol / q(6))
        }
        d => Err(Error::Unsupported(format!("polytope volume in dimension {d}"))),
    }
}

fn det3(a: &[Q], b: &[Q], c: &[Q]) -> Q {
    &a[0] * (&b[1] * &c[2] - &b[2] * &c[1]) - &a[1] * (&b[0] * &c[2] - &b[2] * &c[0])
        + &a[2] * (&b[0] * &c[1] - &b[1] * &c[0])
}

/// Cyclic order of the vertices of a convex polygon (planar, or lying in a
/// plane with the given normal), by exact orientation tests around the
/// first vertex.
fn convex_order(pts: &[Vec<Q>], normal: Option<&[Q]>) -> Vec<usize> {
    let orient = |o: &[Q], a: &[Q], b: &[Q]| -> Q {
        let (ax, bx): (Vec<Q>, Vec<Q>) =
            (a.iter().zip(o).map(|(x, y)| x - y).collect(), b.iter().zip(o).map(|(x, y)| x - y).collect());
        match normal {
            None => &ax[0] * &bx[1] - &ax[1] * &bx[0],
            Some(n) => det3(&ax, &bx, n),
        }
    };
    let mut rest: Vec<usize> = (1..pts.len()).collect();
    rest.sort_by(|&a, &b| {
        let s = orient(&pts[0], &pts[a], &pts[b]);
        if s.is_positive() {
            std::cmp::Ordering::Less
        } else if s.is_negative() {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    std::iter::once(0).chain(rest).collect()
}

/// `A = [ω]^m / ((m−1) · m! · Ω)`.
pub fn invariant_a(tri: &FanTriangulation, values: &[f64], omega: f64, method: AMethod) -> Result<f64> {
    if !(omega > 0.0 && omega.is_finite()) {
        return domain(format!("link volume must be positive, got {omega}"));
    }
    let m = tri.dim;
    let mut fact = 1.0;
    for k in 2..=m {
        fact *= k as f64;
    }
    Ok(class_power(tri, values, method)? / ((m as f64 - 1.0) * fact * omega))
}

/// Both evaluations of `A` and whether they agree to `1e−9` relative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantA {
    pub divisor_sum: f64,
    pub polytope_volume: f64,
    pub agree: bool,
}

pub fn invariant_a_both(tri: &FanTriangulation, values: &[f64], omega: f64) -> Result<InvariantA> {
    let a = invariant_a(tri, values, omega, AMethod::DivisorSum)?;
    let b = invariant_a(tri, values, omega, AMethod::PolytopeVolume)?;
    let agree = (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) || (a == 0.0 && b == 0.0);
    Ok(InvariantA { divisor_sum: a, polytope_volume: b, agree })
}

/// Fan description: `{"dim", "rays", "support_values": {"[1,0,1]": 0.0},
/// "omega_link"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanSpec {
    pub dim: usize,
    pub rays: Vec<Vec<i64>>,
    #[serde(default)]
    pub support_values: BTreeMap<String, f64>,
    pub omega_link: f64,
}

impl FanSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: FanSpec = serde_json::from_str(text)?;
        if spec.rays.iter().any(|r| r.len() != spec.dim) {
            return Err(Error::Parse(format!("rays must have length dim = {}", spec.dim)));
        }
        Ok(spec)
    }

    /// Support values keyed by ray, with keys parsed as integer vectors.
    pub fn values_by_ray(&self) -> Result<BTreeMap<Vec<i64>, f64>> {
        self.support_values
            .iter()
            .map(|(k, &v)| {
                let ray: Vec<i64> =
                    serde_json::from_str(k).map_err(|_| Error::Parse(format!("bad ray key {k:?}")))?;
                Ok((ray, v))
            })
            .collect()
    }

    /// Values aligned with the rays of `tri`; missing rays are an error.
    pub fn values_for(&self, tri: &FanTriangulation) -> Result<Vec<f64>> {
        let map = self.values_by_ray()?;
        tri.rays
            .iter()
            .map(|r| map.get(r).copied().ok_or_else(|| Error::Domain(format!("no support value for ray {r:?}"))))
            .collect()
    }
}
