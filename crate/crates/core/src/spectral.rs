//! Heat kernels, Green's functions, Gaussian-bound fits, Poincaré constants of
//! domain pairs and the indicial roots of conical Laplacians.
//!
//! All solvers act on the conductance Laplacian `A` and the diagonal mass
//! `M` of a [`DiscretizedCone`]; functions are densities with respect to the
//! vertex measure.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::{classify_by_distance, BallClass, DiscretizedCone, SampleSpec};
use crate::covering::{patch_neumann, Exponent, GoodCovering, PatchingInput};
use crate::error::{domain, Error, Result};
use crate::linalg::{self, CsrMatrix, SparseCholesky, SubspaceOptions};

/// Largest `U'` handled by the dense Schur-complement path.
pub const DENSE_POINCARE_LIMIT: usize = 120;

const GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;

/// Condition imposed on the outer truncation face. The inner face of an
/// apex-free cone is always free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    Neumann,
    /// Outward flux `coefficient · u` per unit face measure.
    Robin { coefficient: f64 },
}

impl Boundary {
    /// Robin condition `∂_r u = −(n−2)u/r` satisfied by `r^{2−n}`: the outer
    /// face then absorbs like the untruncated cone seen from the apex.
    pub fn radiating(cone: &DiscretizedCone) -> Self {
        Boundary::Robin { coefficient: (cone.dim() as f64 - 2.0).max(0.0) / cone.r_outer() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatOptions {
    pub boundary: Boundary,
    /// Refinement stops once probe values change by less than this.
    pub rel_tol: f64,
    /// Time steps per doubling of `t` in the first pass.
    pub steps_per_doubling: usize,
    pub max_steps_per_doubling: usize,
}

impl Default for HeatOptions {
    fn default() -> Self {
        Self { boundary: Boundary::Neumann, rel_tol: 0.005, steps_per_doubling: 4, max_steps_per_doubling: 256 }
    }
}

/// `h(t, source, ·)` as a density with respect to the vertex measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelSample {
    pub t: f64,
    pub source: usize,
    pub values: Vec<f64>,
}

impl HeatKernelSample {
    /// `Σ_y h(t, x, y) μ(y)`.
    pub fn mass(&self, measures: &[f64]) -> f64 {
        self.values.iter().zip(measures).map(|(h, m)| h * m).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatSolution {
    pub samples: Vec<HeatKernelSample>,
    pub steps_per_doubling: usize,
    /// Largest relative change at probe nodes between the last two passes.
    pub probe_change: f64,
}

/// TR-BDF2 integrator for `M u' = −A u`. With `γ = 2 − √2` both stages use
/// the matrix `M + (γ/2) Δt A`, so one factorization serves a whole step.
struct Propagator<'a> {
    cone: &'a DiscretizedCone,
    stiffness: CsrMatrix,
}

impl<'a> Propagator<'a> {
    fn new(cone: &'a DiscretizedCone, boundary: Boundary) -> Result<Self> {
        Ok(Self { cone, stiffness: stiffness(cone, boundary)? })
    }

    fn factor(&self, dt: f64) -> Result<SparseCholesky> {
        let c = GAMMA / 2.0 * dt;
        let mut trip: Vec<(usize, usize, f64)> =
            self.stiffness.triplets().into_iter().map(|(i, j, v)| (i, j, c * v)).collect();
        trip.extend(self.cone.measures().iter().enumerate().map(|(i, &m)| (i, i, m)));
        SparseCholesky::new(self.cone.len(), &trip)
    }

    fn step(&self, chol: &SparseCholesky, dt: f64, u: &mut [f64], work: &mut [f64]) {
        let m = self.cone.measures();
        let c = GAMMA / 2.0 * dt;
        self.stiffness.mul_vec(u, work);
        let mut stage: Vec<f64> = (0..u.len()).map(|i| m[i] * u[i] - c * work[i]).collect();
        chol.solve(&mut stage);
        let denom = GAMMA * (2.0 - GAMMA);
        let a = 1.0 / denom;
        let b = (1.0 - GAMMA).powi(2) / denom;
        for i in 0..u.len() {
            work[i] = m[i] * (a * stage[i] - b * u[i]);
        }
        chol.solve(work);
        u.copy_from_slice(work);
    }

    /// Marches from a unit point mass at `source`. Steps have size
    /// `τ 2^e` in epoch `e`, with `spd` steps per epoch and `τ·spd = t0`, so
    /// `Δt ≈ t / spd`. Steps are shortened to land on each landmark. `visit`
    /// sees every state and returns `true` to stop.
    fn march(
        &self,
        source: usize,
        t0: f64,
        spd: usize,
        landmarks: &[f64],
        max_epochs: usize,
        mut visit: impl FnMut(f64, &[f64]) -> bool,
    ) -> Result<()> {
        let n = self.cone.len();
        let mut u = vec![0.0; n];
        u[source] = 1.0 / self.cone.measures()[source];
        let mut work = vec![0.0; n];
        let tau = t0 / spd as f64;
        let mut cache: Vec<Option<SparseCholesky>> = Vec::new();
        let mut t = 0.0;
        let mut next_mark = 0;
        loop {
            let epoch = ((t / t0 + 1.0).log2() + 1e-9).floor() as usize;
            if epoch > max_epochs {
                return Err(Error::Convergence("heat propagation did not reach its end time".into()));
            }
            let dt = tau * 2f64.powi(epoch as i32);
            let target = landmarks.get(next_mark).copied();
            match target {
                Some(tm) if t + dt >= tm * (1.0 - 1e-12) => {
                    let short = tm - t;
                    if short > 0.0 {
                        let chol = self.factor(short)?;
                        self.step(&chol, short, &mut u, &mut work);
                    }
                    t = tm;
                    next_mark += 1;
                }
                _ => {
                    if cache.len() <= epoch {
                        cache.resize_with(epoch + 1, || None);
                    }
                    if cache[epoch].is_none() {
                        cache[epoch] = Some(self.factor(dt)?);
                    }
                    self.step(cache[epoch].as_ref().unwrap(), dt, &mut u, &mut work);
                    t += dt;
                }
            }
            if visit(t, &u) {
                return Ok(());
            }
        }
    }
}

fn stiffness(cone: &DiscretizedCone, boundary: Boundary) -> Result<CsrMatrix> {
    match boundary {
        Boundary::Neumann => Ok(cone.laplacian().clone()),
        Boundary::Robin { coefficient } => {
            if !(coefficient >= 0.0 && coefficient.is_finite()) {
                return domain("Robin coefficient must be nonnegative");
            }
            let diag: Vec<f64> = cone.outer_face().iter().map(|f| f * coefficient).collect();
            Ok(CsrMatrix::laplacian(cone.len(), cone.edges(), Some(&diag)))
        }
    }
}

fn check_source(cone: &DiscretizedCone, source: usize) -> Result<()> {
    if source >= cone.len() {
        return domain(format!("source {source} is not a vertex"));
    }
    Ok(())
}

/// Heat kernel `h(t, source, ·)` at the requested times. The step size is
/// halved until values at the probe nodes (those carrying at least 10⁻³ of
/// the peak) move by less than `opts.rel_tol`.
pub fn heat_kernel(
    cone: &DiscretizedCone,
    source: usize,
    times: &[f64],
    opts: &HeatOptions,
) -> Result<HeatSolution> {
    check_source(cone, source)?;
    if times.is_empty() {
        return domain("no times requested");
    }
    if let Some(t) = times.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return domain(format!("times must be positive, got {t}"));
    }
    let mut sorted: Vec<f64> = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let prop = Propagator::new(cone, opts.boundary)?;
    let t0 = 1e-3 * sorted[0];
    let run = |spd: usize| -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(sorted.len());
        let mut k = 0;
        prop.march(source, t0, spd, &sorted, 200, |t, u| {
            if k < sorted.len() && t == sorted[k] {
                out.push(u.to_vec());
                k += 1;
            }
            k == sorted.len()
        })?;
        Ok(out)
    };
    let mut spd = opts.steps_per_doubling.max(1);
    let mut prev = run(spd)?;
    let (finest, change) = loop {
        if spd * 2 > opts.max_steps_per_doubling {
            return Err(Error::Convergence(format!(
                "heat kernel not settled at {spd} steps per doubling"
            )));
        }
        spd *= 2;
        let cur = run(spd)?;
        let change = probe_change(&prev, &cur);
        if change < opts.rel_tol {
            break (cur, change);
        }
        prev = cur;
    };
    let samples = times
        .iter()
        .map(|&t| {
            let k = sorted.iter().position(|&s| s == t).unwrap();
            HeatKernelSample { t, source, values: finest[k].clone() }
        })
        .collect();
    Ok(HeatSolution { samples, steps_per_doubling: spd, probe_change: change })
}

fn probe_change(prev: &[Vec<f64>], cur: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (p, c) in prev.iter().zip(cur) {
        let peak = c.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        for (a, b) in p.iter().zip(c) {
            if b.abs() >= 1e-3 * peak {
                worst = worst.max((a - b).abs() / b.abs());
            }
        }
    }
    worst
}

/// `∫₀^∞ h(t, source, ·) dt`, by the trapezoid rule on the stepping times.
/// Needs an absorbing outer face; stops once the remaining tail is below
/// `10⁻⁴` of the accumulated integral at every vertex.
pub fn time_integrated_kernel(
    cone: &DiscretizedCone,
    source: usize,
    boundary: Boundary,
    steps_per_doubling: usize,
) -> Result<Vec<f64>> {
    check_source(cone, source)?;
    match boundary {
        Boundary::Robin { coefficient } if coefficient > 0.0 => {}
        _ => return domain("the time integral diverges without an absorbing boundary"),
    }
    let prop = Propagator::new(cone, boundary)?;
    let h = cone.max_edge_length().min(cone.r_outer());
    let t0 = 1e-4 * h * h;
    let settle = cone.r_outer().powi(2);
    let n = cone.len();
    let mut integral = vec![0.0; n];
    let mut prev = vec![0.0; n];
    prev[source] = 1.0 / cone.measures()[source];
    let mut t_prev = 0.0;
    prop.march(source, t0, steps_per_doubling.max(1), &[], 120, |t, u| {
        let dt = t - t_prev;
        for i in 0..n {
            integral[i] += 0.5 * dt * (prev[i] + u[i]);
        }
        prev.copy_from_slice(u);
        t_prev = t;
        t >= settle && u.iter().zip(&integral).all(|(v, s)| v.abs() * t <= 1e-4 * s.abs())
    })?;
    Ok(integral)
}

/// Heat kernel samples as CSV rows `t,source,node,radius,distance,value`.
pub fn kernel_csv(cone: &DiscretizedCone, samples: &[HeatKernelSample]) -> String {
    let mut out = String::from("t,source,node,radius,distance,value\n");
    for s in samples {
        for (y, v) in s.values.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:e}",
                s.t,
                s.source,
                y,
                cone.radius(y),
                cone.distance(s.source, y),
                v
            );
        }
    }
    out
}

/// Constants of a two-sided Gaussian bound
/// `c₁e^{−C₁d²/t}/V(x,√t) ≤ h ≤ C₂e^{−c₂d²/t}/V(x,√t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianConstants {
    pub c1: f64,
    #[serde(rename = "C1")]
    pub big_c1: f64,
    pub c2: f64,
    #[serde(rename = "C2")]
    pub big_c2: f64,
}

/// The sample point that sets (or breaks) one side of the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianWitness {
    pub t: f64,
    pub source: usize,
    pub node: usize,
    pub distance: f64,
    /// `h · V(x, √t)`.
    pub normalized: f64,
    /// The bound evaluated at this point, in the same normalization.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianFit {
    pub constants: GaussianConstants,
    pub pass: bool,
    pub admissible: usize,
    pub upper_witness: GaussianWitness,
    pub lower_witness: GaussianWitness,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianCheck {
    pub pass: bool,
    /// Point with the largest `h / upper bound`.
    pub upper_witness: GaussianWitness,
    /// Point with the largest `lower bound / h`.
    pub lower_witness: GaussianWitness,
}

struct GaussPoint {
    group: usize,
    t: f64,
    source: usize,
    node: usize,
    distance: f64,
    s: f64,
    normalized: f64,
}

/// Points of the sandwich region `√t ≤ d ≤ 4√t` whose endpoints keep
/// `2√t` away from the truncation.
fn admissible_points(samples: &[HeatKernelSample], cone: &DiscretizedCone) -> Result<Vec<GaussPoint>> {
    let mut out = Vec::new();
    let clear = |v: usize, margin: f64| -> bool {
        let r = cone.radius(v);
        cone.r_outer() - r >= margin && (cone.apex().is_some() || r - cone.r_inner() >= margin)
    };
    for (g, s) in samples.iter().enumerate() {
        if s.values.len() != cone.len() {
            return domain("sample does not match the cone");
        }
        check_source(cone, s.source)?;
        let rt = s.t.sqrt();
        if !clear(s.source, 2.0 * rt) {
            continue;
        }
        let vol = cone.ball_volume(s.source, rt)?.volume;
        for (y, &h) in s.values.iter().enumerate() {
            let d = cone.distance(s.source, y);
            if d < rt * (1.0 - 1e-12) || d > 4.0 * rt * (1.0 + 1e-12) || !clear(y, 2.0 * rt) {
                continue;
            }
            out.push(GaussPoint {
                group: g,
                t: s.t,
                source: s.source,
                node: y,
                distance: d,
                s: d * d / s.t,
                normalized: h * vol,
            });
        }
    }
    if out.is_empty() {
        return domain("no admissible (t, x, y) samples");
    }
    Ok(out)
}

fn witness(p: &GaussPoint, bound: f64) -> GaussianWitness {
    GaussianWitness { t: p.t, source: p.source, node: p.node, distance: p.distance, normalized: p.normalized, bound }
}

/// Fits both sides of the Gaussian bound. The common exponent `b` is the
/// within-sample log-linear regression slope of `h·V(x,√t)` against `d²/t`;
/// then `c₂ = C₁ = b`, `C₂` is the least and `c₁` the greatest prefactor
/// valid at every admissible point. `pass` requires `b > 0`, `c₁ > 0` and
/// the pointwise check.
pub fn gaussian_fit(samples: &[HeatKernelSample], cone: &DiscretizedCone) -> Result<GaussianFit> {
    let pts = admissible_points(samples, cone)?;
    let groups = samples.len();
    let mut sum = vec![(0.0, 0.0, 0usize); groups];
    for p in pts.iter().filter(|p| p.normalized > 0.0) {
        let e = &mut sum[p.group];
        e.0 += p.s;
        e.1 += p.normalized.ln();
        e.2 += 1;
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in pts.iter().filter(|p| p.normalized > 0.0) {
        let (ss, sl, k) = sum[p.group];
        let ds = p.s - ss / k as f64;
        sxy += ds * (p.normalized.ln() - sl / k as f64);
        sxx += ds * ds;
    }
    let b = if sxx > 0.0 { -sxy / sxx } else { f64::NAN };
    let slope = if b.is_finite() { b } else { 0.0 };
    let mut upper = (f64::NEG_INFINITY, 0usize);
    let mut lower = (f64::INFINITY, 0usize);
    for (k, p) in pts.iter().enumerate() {
        let pref = p.normalized * (slope * p.s).exp();
        if pref > upper.0 {
            upper = (pref, k);
        }
        if pref < lower.0 {
            lower = (pref, k);
        }
    }
    let constants = GaussianConstants { c1: lower.0, big_c1: slope, c2: slope, big_c2: upper.0 };
    let check = verify_points(&pts, &constants);
    let pass = b.is_finite() && b > 0.0 && constants.c1 > 0.0 && constants.big_c2.is_finite() && check.pass;
    let up = &pts[upper.1];
    let lo = &pts[lower.1];
    Ok(GaussianFit {
        constants,
        pass,
        admissible: pts.len(),
        upper_witness: witness(up, constants.big_c2 * (-slope * up.s).exp()),
        lower_witness: witness(lo, constants.c1 * (-slope * lo.s).exp()),
    })
}

/// Checks given constants at every admissible point.
pub fn verify_gaussian(
    samples: &[HeatKernelSample],
    cone: &DiscretizedCone,
    constants: &GaussianConstants,
) -> Result<GaussianCheck> {
    let pts = admissible_points(samples, cone)?;
    Ok(verify_points(&pts, constants))
}

fn verify_points(pts: &[GaussPoint], k: &GaussianConstants) -> GaussianCheck {
    let mut worst_up = (f64::NEG_INFINITY, 0usize);
    let mut worst_lo = (f64::NEG_INFINITY, 0usize);
    for (i, p) in pts.iter().enumerate() {
        let up = k.big_c2 * (-k.c2 * p.s).exp();
        let lo = k.c1 * (-k.big_c1 * p.s).exp();
        let ru = if p.normalized > 0.0 { p.normalized / up } else { 0.0 };
        let rl = if p.normalized > 0.0 { lo / p.normalized } else { f64::INFINITY };
        if ru > worst_up.0 {
            worst_up = (ru, i);
        }
        if rl > worst_lo.0 {
            worst_lo = (rl, i);
        }
    }
    let slack = 1.0 + 1e-12;
    let pass = worst_up.0 <= slack && worst_lo.0 <= slack;
    let pu = &pts[worst_up.1];
    let pl = &pts[worst_lo.1];
    GaussianCheck {
        pass,
        upper_witness: witness(pu, k.big_c2 * (-k.c2 * pu.s).exp()),
        lower_witness: witness(pl, k.c1 * (-k.big_c1 * pl.s).exp()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenOptions {
    pub boundary: Option<Boundary>,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for GreenOptions {
    fn default() -> Self {
        Self { boundary: None, rel_tol: 1e-10, max_iter: 200_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenFunction {
    pub source: usize,
    pub values: Vec<f64>,
    /// `max G(x, y) d(x, y)^{n−2}` over interior `y ≠ x`.
    pub bound_constant: f64,
    pub bound_witness: usize,
    pub positive: bool,
    pub iterations: usize,
}

/// Solves `A G = e_x` (point mass at `source`) with the radiating outer
/// condition unless another boundary is given.
pub fn greens_function(cone: &DiscretizedCone, source: usize, opts: &GreenOptions) -> Result<GreenFunction> {
    let n = cone.dim();
    if n <= 2 {
        return domain(format!("the Green bound needs dimension n > 2, cone has n = {n}"));
    }
    check_source(cone, source)?;
    let boundary = opts.boundary.unwrap_or_else(|| Boundary::radiating(cone));
    if boundary == Boundary::Neumann {
        return domain("a Neumann-truncated cone has no Green's function");
    }
    let a = stiffness(cone, boundary)?;
    let mut rhs = vec![0.0; cone.len()];
    rhs[source] = 1.0;
    let mut g = vec![0.0; cone.len()];
    let iterations =
        linalg::conjugate_gradient(|x, y| a.mul_vec(x, y), &a.diagonal(), &rhs, &mut g, opts.rel_tol, opts.max_iter)?;
    let last = cone.rings() - 1;
    let mut best = (0.0, source);
    for (y, &v) in g.iter().enumerate() {
        if y == source {
            continue;
        }
        if let Some((k, _)) = cone.ring_and_node(y) {
            if k == last || (cone.apex().is_none() && k == 0) {
                continue;
            }
        }
        let c = v * cone.distance(source, y).powi(n as i32 - 2);
        if c > best.0 {
            best = (c, y);
        }
    }
    let positive = g.iter().all(|&v| v > 0.0);
    Ok(GreenFunction { source, values: g, bound_constant: best.0, bound_witness: best.1, positive, iterations })
}

/// `Λ(U, U')`, or `+∞` when `U` meets several components of `U'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoincareConstant {
    pub value: f64,
    pub finite: bool,
}

/// Best `Λ` with `∫_U |f − f_U|² dμ ≤ Λ ∫_{U'} |∇f|² dμ` for discrete `f`
/// on `U'`: the largest eigenvalue of the `U`-variance form against the
/// Dirichlet energy of the edges inside `U'`.
pub fn poincare_constant(cone: &DiscretizedCone, u: &[usize], u_prime: &[usize]) -> Result<PoincareConstant> {
    if u.is_empty() {
        return domain("U is empty");
    }
    let mut up: Vec<usize> = u_prime.to_vec();
    up.sort_unstable();
    up.dedup();
    let mut in_u = vec![false; up.len()];
    for &v in u {
        match up.binary_search(&v) {
            Ok(k) => in_u[k] = true,
            Err(_) => return domain(format!("vertex {v} of U is not in U'")),
        }
    }
    let (energy, mass) = cone.restricted_energy(&up);
    pair_poincare(&energy, &mass, &in_u)
}

/// Pair Poincaré constant on an abstract weighted graph given by its energy
/// (Laplacian) matrix, vertex masses and the indicator of `U`.
pub fn pair_poincare(energy: &CsrMatrix, mass: &[f64], in_u: &[bool]) -> Result<PoincareConstant> {
    let n = mass.len();
    let trip = energy.triplets();
    let mut adj = vec![Vec::new(); n];
    for &(i, j, v) in &trip {
        if i != j && v != 0.0 {
            adj[i].push(j);
        }
    }
    // Component of U' containing the first vertex of U.
    let first = in_u.iter().position(|&b| b).ok_or_else(|| Error::Domain("U is empty".into()))?;
    let mut comp = vec![usize::MAX; n];
    comp[first] = 0;
    let mut stack = vec![first];
    let mut members = vec![first];
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if comp[w] == usize::MAX {
                comp[w] = 0;
                stack.push(w);
                members.push(w);
            }
        }
    }
    if (0..n).any(|v| in_u[v] && comp[v] == usize::MAX) {
        return Ok(PoincareConstant { value: f64::INFINITY, finite: false });
    }
    let u_count = in_u.iter().filter(|&&b| b).count();
    if u_count == 1 {
        return Ok(PoincareConstant { value: 0.0, finite: true });
    }
    members.sort_unstable();
    // Ground the first U vertex: both forms kill constants, so fixing f there
    // leaves the extremal ratio unchanged and makes the energy definite.
    let free: Vec<usize> = members.iter().copied().filter(|&v| v != first).collect();
    let mut local = vec![usize::MAX; n];
    for (k, &v) in free.iter().enumerate() {
        local[v] = k;
    }
    let m = free.len();
    let red: Vec<(usize, usize, f64)> = trip
        .iter()
        .filter(|&&(i, j, _)| local[i] != usize::MAX && local[j] != usize::MAX)
        .map(|&(i, j, v)| (local[i], local[j], v))
        .collect();
    let u_mass: f64 = (0..n).filter(|&v| in_u[v]).map(|v| mass[v]).sum();
    let w: Vec<f64> = free.iter().map(|&v| if in_u[v] { mass[v] } else { 0.0 }).collect();
    let value = if members.len() <= DENSE_POINCARE_LIMIT {
        dense_pair(m, &red, &w, u_mass, &free, in_u)?
    } else {
        let chol = SparseCholesky::new(m, &red)?;
        let e = CsrMatrix::from_triplets(m, &red);
        let apply_q = |x: &[f64], y: &mut [f64]| {
            let mean = linalg::dot(&w, x) / u_mass;
            for i in 0..m {
                y[i] = w[i] * (x[i] - mean);
            }
        };
        let solve = |rhs: &[f64], x: &mut [f64]| {
            x.copy_from_slice(rhs);
            chol.solve(x);
            Ok(())
        };
        let opts = SubspaceOptions { rel_tol: 1e-9, max_iter: 2000, ..SubspaceOptions::default() };
        linalg::max_generalized_eigenvalue_with(m, apply_q, |x: &[f64], y: &mut [f64]| e.mul_vec(x, y), solve, opts)?
    };
    Ok(PoincareConstant { value, finite: true })
}

/// Dense path: Schur complement of the grounded energy onto `U`, then the
/// generalized eigenproblem of the variance form against it.
fn dense_pair(
    m: usize,
    red: &[(usize, usize, f64)],
    w: &[f64],
    u_mass: f64,
    free: &[usize],
    in_u: &[bool],
) -> Result<f64> {
    let mut e = DMatrix::zeros(m, m);
    for &(i, j, v) in red {
        e[(i, j)] += v;
    }
    let us: Vec<usize> = (0..m).filter(|&k| in_u[free[k]]).collect();
    let vs: Vec<usize> = (0..m).filter(|&k| !in_u[free[k]]).collect();
    let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |a, b| e[(rows[a], cols[b])]);
    let mut s = pick(&us, &us);
    if !vs.is_empty() {
        let evv = pick(&vs, &vs);
        let evu = pick(&vs, &us);
        let chol = nalgebra::Cholesky::new(evv)
            .ok_or_else(|| Error::Domain("interior energy block is not definite".into()))?;
        let x = chol.solve(&evu);
        s -= evu.transpose() * x;
    }
    let s = (&s + s.transpose()) * 0.5;
    let wu: Vec<f64> = us.iter().map(|&k| w[k]).collect();
    let q = DMatrix::from_fn(us.len(), us.len(), |a, b| {
        let diag = if a == b { wu[a] } else { 0.0 };
        diag - wu[a] * wu[b] / u_mass
    });
    let eig = linalg::dense_generalized_eigenvalues(&q, &s)?;
    Ok(eig.last().copied().unwrap_or(0.0).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoincareSample {
    pub center: usize,
    pub radius: f64,
    pub lambda: f64,
    /// `Λ(B(x, δr), B(x, r)) / r²`.
    pub normalized: f64,
    pub class: BallClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoincareScan {
    pub c_p: f64,
    pub worst: PoincareSample,
    pub samples: Vec<PoincareSample>,
    pub excluded: usize,
}

/// `max Λ(B(x, δr), B(x, r)) / r²` over sampled unclipped balls.
pub fn scale_invariant_poincare_scan(cone: &DiscretizedCone, spec: &SampleSpec, delta: f64) -> Result<PoincareScan> {
    if !(delta > 0.0 && delta <= 1.0) {
        return domain(format!("δ must lie in (0, 1], got {delta}"));
    }
    let (balls, excluded) = cone.sample_balls(spec, 1.0)?;
    let samples = balls
        .par_iter()
        .map(|&(x, r)| {
            let inner = cone.ball(x, delta * r);
            let outer = cone.ball(x, r);
            let lambda = poincare_constant(cone, &inner, &outer)?.value;
            let class = classify_by_distance(x == spec.base, cone.distance(spec.base, x), r, spec.epsilon)?;
            Ok(PoincareSample { center: x, radius: r, lambda, normalized: lambda / (r * r), class })
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = samples
        .iter()
        .copied()
        .reduce(|a, b| match a.normalized.total_cmp(&b.normalized) {
            std::cmp::Ordering::Less => b,
            std::cmp::Ordering::Greater => a,
            std::cmp::Ordering::Equal if (b.center, b.radius.to_bits()) < (a.center, a.radius.to_bits()) => b,
            std::cmp::Ordering::Equal => a,
        })
        .ok_or_else(|| Error::Domain("no admissible (unclipped) ball was sampled".into()))?;
    Ok(PoincareScan { c_p: worst.normalized, worst, samples, excluded })
}

/// Local Poincaré constants of one cell of a covering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellConstant {
    pub cell: usize,
    /// `Λ(U_i, U*_i)`.
    pub inner: f64,
    /// `Λ(U*_i, U#_i)`.
    pub outer: f64,
}

fn members(set: &fixedbitset::FixedBitSet) -> Vec<usize> {
    set.ones().collect()
}

/// Per-cell constants of a covering whose atoms are the cone's vertices.
pub fn cell_constants(cone: &DiscretizedCone, covering: &GoodCovering) -> Result<Vec<CellConstant>> {
    if covering.atoms().len() != cone.len() {
        return domain("covering atoms are not the cone vertices");
    }
    covering
        .cells()
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let (u, us, uh) = (members(&c.inner), members(&c.buffer), members(&c.outer));
            Ok(CellConstant {
                cell: i,
                inner: poincare_constant(cone, &u, &us)?.value,
                outer: poincare_constant(cone, &us, &uh)?.value,
            })
        })
        .collect()
}

/// Direct and patched Poincaré constants of a pair `(A, A#)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchingCheck {
    pub direct: f64,
    pub cells: usize,
    pub s_c: f64,
    pub graph_gap: f64,
    pub s_d: f64,
    pub q1: usize,
    pub q2: f64,
    pub patched: f64,
    pub sound: bool,
}

/// Builds the net covering of `region` inside `target` at scale `s`,
/// measures its cell constants and the Neumann constant `1/λ` of the
/// associated graph, patches them (`p = 2`, `ν = ∞`) and compares with the
/// directly computed `Λ(region, target)`.
pub fn patching_check(cone: &DiscretizedCone, region: &[usize], target: &[usize], s: f64) -> Result<PatchingCheck> {
    let covering = cone.net_covering(region, target, s)?;
    let validation = covering.validate();
    if !validation.is_good() {
        return Err(Error::Precondition(format!("net covering is not good: {:?}", validation.violations)));
    }
    let consts = cell_constants(cone, &covering)?;
    let s_c = consts.iter().map(|c| c.inner.max(c.outer)).fold(0.0, f64::max);
    let graph = covering.associated_graph()?;
    let graph_gap = if graph.len() > 1 { graph.spectral_gap()? } else { f64::INFINITY };
    let s_d = 1.0 / graph_gap;
    let patched = patch_neumann(&PatchingInput {
        s_c,
        s_d,
        q1: validation.q1 as u32,
        q2: validation.q2,
        p: 2.0,
        nu: Exponent::Infinite,
    })?;
    let direct = poincare_constant(cone, region, target)?.value;
    Ok(PatchingCheck {
        direct,
        cells: consts.len(),
        s_c,
        graph_gap,
        s_d,
        q1: validation.q1,
        q2: validation.q2,
        patched,
        sound: direct <= patched,
    })
}

/// The pair of indicial roots attached to one link eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndicialRoot {
    pub lambda: f64,
    pub mu_plus: f64,
    pub mu_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndicialSpectrum {
    pub m: u32,
    pub link_eigenvalues: Vec<f64>,
    pub roots: Vec<IndicialRoot>,
    /// `{0, 2m−2} ∪ {μ_j^±}`, sorted and deduplicated: decay exponents.
    pub exceptional_weights: Vec<f64>,
    /// The same set negated, for weights `δ` read as `−μ`.
    pub negated_weights: Vec<f64>,
    /// `(−μ₁⁺, 2−2m)`: weights between the first nonconstant root and the
    /// Green's-function decay, free of exceptional values.
    pub fredholm_gap: Option<(f64, f64)>,
    /// `λ₁ ≥ 2m − 1`.
    pub gap_condition: bool,
}

/// Roots of `μ² − (2m−2)μ − λ = 0`, with `μ⁻ = −λ/μ⁺` to avoid
/// cancellation.
pub fn indicial_roots(m: u32, lambda: f64) -> IndicialRoot {
    let b = 2.0 * m as f64 - 2.0;
    let mu_plus = (b + (b * b + 4.0 * lambda).sqrt()) / 2.0;
    let mu_minus = if mu_plus == 0.0 { 0.0 } else { -lambda / mu_plus };
    IndicialRoot { lambda, mu_plus, mu_minus }
}

/// Indicial roots of the Laplacian on a complex `m`-dimensional cone whose
/// link has the given Laplace eigenvalues.
pub fn indicial_spectrum(m: u32, link_eigenvalues: &[f64]) -> Result<IndicialSpectrum> {
    if m < 2 {
        return domain(format!("complex dimension must be at least 2, got {m}"));
    }
    if let Some(l) = link_eigenvalues.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return domain(format!("link eigenvalues must be nonnegative, got {l}"));
    }
    let mut eig = link_eigenvalues.to_vec();
    eig.sort_by(f64::total_cmp);
    let roots: Vec<IndicialRoot> = eig.iter().map(|&l| indicial_roots(m, l)).collect();
    let b = 2.0 * m as f64 - 2.0;
    let mut weights = vec![0.0, b];
    for r in &roots {
        weights.push(r.mu_plus);
        weights.push(r.mu_minus);
    }
    let weights = sorted_unique(weights);
    let negated = sorted_unique(weights.iter().map(|w| -w).collect());
    let first = roots.iter().find(|r| r.lambda > 0.0);
    let fredholm_gap = first.map(|r| (-r.mu_plus, 2.0 - 2.0 * m as f64));
    let gap_condition = first.is_some_and(|r| r.lambda >= 2.0 * m as f64 - 1.0);
    Ok(IndicialSpectrum {
        m,
        link_eigenvalues: eig,
        roots,
        exceptional_weights: weights,
        negated_weights: negated,
        fredholm_gap,
        gap_condition,
    })
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    for x in v.iter_mut() {
        if *x == 0.0 {
            *x = 0.0; // fold −0 into +0
        }
    }
    v.sort_by(f64::total_cmp);
    // Degenerate link eigenvalues only agree up to rounding.
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{ConeLink, LinkGraph};
    use std::f64::consts::PI;

    #[test]
    fn indicial_examples() {
        let s = indicial_spectrum(3, &[0.0, 5.0]).unwrap();
        assert_eq!(s.roots[1].mu_plus, 5.0);
        assert_eq!(s.roots[1].mu_minus, -1.0);
        assert_eq!(s.exceptional_weights, vec![-1.0, 0.0, 4.0, 5.0]);
        assert!(s.gap_condition);
        assert_eq!(s.fredholm_gap, Some((-5.0, -4.0)));
        let r = indicial_roots(2, 3.0);
        assert_eq!((r.mu_plus, r.mu_minus), (3.0, -1.0));
        let z = indicial_roots(4, 0.0);
        assert_eq!((z.mu_plus, z.mu_minus), (6.0, 0.0));
        assert!(indicial_spectrum(1, &[1.0]).is_err());
        assert!(indicial_spectrum(2, &[-1.0]).is_err());
    }

    #[test]
    fn unit_segment_poincare() {
        // A half-line cone is a segment; U = U' = (0, 1].
        for (steps, tol) in [(50, 2e-3), (200, 2e-4)] {
            let c = DiscretizedCone::build(ConeLink::Graph(LinkGraph::point()), 1.0, 2.0, steps, 0).unwrap();
            let all: Vec<usize> = (0..c.len()).collect();
            let v = poincare_constant(&c, &all, &all).unwrap();
            assert!(v.finite);
            assert!((v.value * PI * PI - 1.0).abs() < tol, "{}", v.value * PI * PI);
        }
    }

    #[test]
    fn dense_and_iterative_paths_agree() {
        let c = DiscretizedCone::build(ConeLink::Circle { length: 2.0 * PI }, 0.0, 3.0, 14, 40).unwrap();
        let up = c.shell(0.0, 2.5);
        let u = c.shell(0.0, 1.2);
        assert!(up.len() > DENSE_POINCARE_LIMIT);
        let iterative = poincare_constant(&c, &u, &up).unwrap().value;
        let (energy, mass) = c.restricted_energy(&up);
        let in_u: Vec<bool> = up.iter().map(|v| u.contains(v)).collect();
        // Force the dense path on the same data.
        let trip = energy.triplets();
        let n = mass.len();
        let first = in_u.iter().position(|&b| b).unwrap();
        let free: Vec<usize> = (0..n).filter(|&v| v != first).collect();
        let mut local = vec![usize::MAX; n];
        for (k, &v) in free.iter().enumerate() {
            local[v] = k;
        }
        let red: Vec<_> = trip
            .iter()
            .filter(|&&(i, j, _)| local[i] != usize::MAX && local[j] != usize::MAX)
            .map(|&(i, j, v)| (local[i], local[j], v))
            .collect();
        let u_mass: f64 = (0..n).filter(|&v| in_u[v]).map(|v| mass[v]).sum();
        let w: Vec<f64> = free.iter().map(|&v| if in_u[v] { mass[v] } else { 0.0 }).collect();
        let dense = dense_pair(free.len(), &red, &w, u_mass, &free, &in_u).unwrap();
        assert!((dense - iterative).abs() < 1e-6 * dense, "{dense} vs {iterative}");
    }

    #[test]
    fn disconnected_pair_is_infinite() {
        let c = DiscretizedCone::build(ConeLink::Circle { length: 2.0 * PI }, 0.0, 3.0, 10, 16).unwrap();
        let a = c.vertex(5, 0);
        let b = c.vertex(5, 8);
        let v = poincare_constant(&c, &[a, b], &[a, b]).unwrap();
        assert!(!v.finite && v.value.is_infinite());
        assert!(poincare_constant(&c, &[a], &[b]).is_err());
    }

    #[test]
    fn poincare_monotone_in_outer_set() {
        let c = DiscretizedCone::build(ConeLink::Circle { length: PI }, 0.0, 4.0, 20, 24).unwrap();
        let u = c.shell(1.0, 2.0);
        let mut prev = f64::INFINITY;
        for hi in [2.0, 2.5, 3.0, 4.0] {
            let up = c.shell(0.8, hi);
            let v = poincare_constant(&c, &u, &up).unwrap().value;
            assert!(v <= prev * (1.0 + 1e-8));
            prev = v;
        }
    }

    #[test]
    fn heat_rejects_bad_times_and_starts_as_point_mass() {
        let c = DiscretizedCone::build(ConeLink::Circle { length: 2.0 * PI }, 0.0, 4.0, 20, 16).unwrap();
        let opts = HeatOptions::default();
        assert!(heat_kernel(&c, 0, &[0.0], &opts).is_err());
        assert!(heat_kernel(&c, 0, &[-1.0], &opts).is_err());
        let x = c.vertex(5, 3);
        let s = heat_kernel(&c, x, &[1e-8], &opts).unwrap();
        let h = &s.samples[0];
        assert!((h.values[x] * c.measures()[x] - 1.0).abs() < 1e-3);
        assert!((h.mass(c.measures()) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn heat_kernel_is_symmetric_and_mass_preserving() {
        let c = DiscretizedCone::build(ConeLink::Circle { length: PI }, 0.0, 5.0, 25, 16).unwrap();
        let (x, y) = (c.vertex(6, 2), c.vertex(9, 11));
        let opts = HeatOptions::default();
        let hx = heat_kernel(&c, x, &[0.5, 1.0], &opts).unwrap();
        let hy = heat_kernel(&c, y, &[0.5, 1.0], &opts).unwrap();
        for k in 0..2 {
            let a = hx.samples[k].values[y];
            let b = hy.samples[k].values[x];
            assert!((a - b).abs() < 1e-6 * a.abs().max(b.abs()), "{a} vs {b}");
            assert!((hx.samples[k].mass(c.measures()) - 1.0).abs() < 1e-9);
            assert!(hx.samples[k].values.iter().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn green_rejects_planar_cones() {
        let c = DiscretizedCone::build(ConeLink::Circle { length: 2.0 * PI }, 0.0, 4.0, 10, 16).unwrap();
        assert!(greens_function(&c, 3, &GreenOptions::default()).is_err());
    }

    #[test]
    fn gaussian_fit_flags_adversarial_samples() {
        let c = DiscretizedCone::build(ConeLink::Circle { length: 2.0 * PI }, 0.0, 8.0, 80, 32).unwrap();
        let t = 0.5;
        let exact: Vec<f64> = (0..c.len())
            .map(|y| (-c.distance(0, y).powi(2) / (4.0 * t)).exp() / (4.0 * PI * t))
            .collect();
        let good = vec![HeatKernelSample { t, source: 0, values: exact.clone() }];
        let fit = gaussian_fit(&good, &c).unwrap();
        assert!(fit.pass);
        assert!((fit.constants.c2 - 0.25).abs() < 1e-9);
        // Zero at one admissible node breaks the lower bound.
        let victim = c.vertex(19, 5);
        let d = c.distance(0, victim);
        assert!(d >= t.sqrt() && d <= 4.0 * t.sqrt());
        let mut bad = exact.clone();
        bad[victim] = 0.0;
        let fit = gaussian_fit(&[HeatKernelSample { t, source: 0, values: bad }], &c).unwrap();
        assert!(!fit.pass);
        assert_eq!(fit.lower_witness.node, victim);
        // A spike above given constants breaks the upper bound.
        let mut spiked = exact;
        spiked[victim] *= 10.0;
        let k = GaussianConstants { c1: 0.0, big_c1: 1.0, c2: 0.25, big_c2: 0.3 };
        let chk = verify_gaussian(&[HeatKernelSample { t, source: 0, values: spiked }], &c, &k).unwrap();
        assert!(!chk.pass);
        assert_eq!(chk.upper_witness.node, victim);
        assert!(gaussian_fit(&[], &c).is_err());
    }
}
