//! Small sparse/dense linear algebra kit used by the spectral routines.
//!
//! Everything here works with symmetric positive (semi-)definite operators:
//! conductance Laplacians, mass matrices and the low-rank variance forms built
//! on top of them.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};

/// Compressed sparse row matrix. Only what the solvers need.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles an `n × n` matrix, summing duplicate entries.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            let slot = cursor[i];
            cols[slot] = j;
            vals[slot] = v;
            cursor[i] += 1;
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let (j, mut v) = row[k];
                k += 1;
                while k < row.len() && row[k].0 == j {
                    v += row[k].1;
                    k += 1;
                }
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self { n, indptr, indices, values }
    }

    /// Weighted graph Laplacian `Σ c_ij (e_i − e_j)(e_i − e_j)ᵀ` plus an
    /// optional diagonal term (used for absorbing boundaries).
    pub fn laplacian(n: usize, edges: &[(usize, usize, f64)], diagonal: Option<&[f64]>) -> Self {
        let mut trip = Vec::with_capacity(4 * edges.len() + n);
        for &(i, j, c) in edges {
            trip.push((i, i, c));
            trip.push((j, j, c));
            trip.push((i, j, -c));
            trip.push((j, i, -c));
        }
        for i in 0..n {
            let d = diagonal.map_or(0.0, |d| d[i]);
            trip.push((i, i, d));
        }
        Self::from_triplets(n, &trip)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.indptr[i]..self.indptr[i + 1])
                    .find(|&k| self.indices[k] == i)
                    .map_or(0.0, |k| self.values[k])
            })
            .collect()
    }

    /// Stored entries as `(row, col, value)`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.values.len());
        for i in 0..self.n {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out.push((i, self.indices[k], self.values[k]));
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.indptr[i]..self.indptr[i + 1] {
                m[(i, self.indices[k])] += self.values[k];
            }
        }
        m
    }
}

/// Sparse Cholesky factor of a symmetric positive definite matrix.
///
/// No fill-reducing reordering is applied; the cone grids are numbered ring
/// by ring, which keeps the factor banded.
pub struct SparseCholesky {
    n: usize,
    factor: CscCholesky<f64>,
}

impl SparseCholesky {
    pub fn new(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut coo = CooMatrix::new(n, n);
        for &(i, j, v) in triplets {
            coo.push(i, j, v);
        }
        let csc = CscMatrix::from(&coo);
        let factor = CscCholesky::factor(&csc)
            .map_err(|e| Error::Domain(format!("matrix is not positive definite: {e}")))?;
        Ok(Self { n, factor })
    }

    /// Overwrites `b` with `A⁻¹ b`.
    pub fn solve(&self, b: &mut [f64]) {
        let mut m = DMatrix::from_column_slice(self.n, 1, b);
        self.factor.solve_mut(&mut m);
        b.copy_from_slice(m.as_slice());
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients for an SPD operator.
///
/// `x` holds the initial guess and receives the solution. Returns the number
/// of iterations used. Consistent singular systems (right-hand side orthogonal
/// to the kernel) also converge.
pub fn conjugate_gradient<F>(
    apply: F,
    precond_diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let inv: Vec<f64> = precond_diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if dot(&r, &r).sqrt() <= rel_tol * bnorm {
            return Ok(it);
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Convergence("operator is not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if dot(&r, &r).sqrt() <= rel_tol * bnorm {
        Ok(max_iter)
    } else {
        Err(Error::Convergence(format!(
            "CG stalled after {max_iter} iterations (residual {:.3e})",
            dot(&r, &r).sqrt() / bnorm
        )))
    }
}

/// Eigenvalues of the symmetric pencil `A v = θ B v` with `B` positive
/// definite, in ascending order.
pub fn dense_generalized_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = Cholesky::new(b.clone())
        .ok_or_else(|| Error::Domain("mass form is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("singular Cholesky factor".into()))?;
    let mut c = &linv * a * linv.transpose();
    c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| x.total_cmp(y));
    Ok(vals)
}

/// Tolerances for [`max_generalized_eigenvalue`].
#[derive(Debug, Clone, Copy)]
pub struct SubspaceOptions {
    pub block: usize,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        Self { block: 4, rel_tol: 1e-10, max_iter: 400, cg_tol: 1e-11, cg_max_iter: 20_000 }
    }
}

/// Largest eigenvalue of `Q v = θ B v` for PSD `Q` and SPD `B`, both given
/// as operators. Subspace iteration on `B⁻¹Q` with Rayleigh–Ritz projection;
/// `B` is inverted by preconditioned CG.
pub fn max_generalized_eigenvalue<FQ, FB>(
    n: usize,
    apply_q: FQ,
    apply_b: FB,
    b_diag: &[f64],
    opts: SubspaceOptions,
) -> Result<f64>
where
    FQ: Fn(&[f64], &mut [f64]),
    FB: Fn(&[f64], &mut [f64]),
{
    let solve = |rhs: &[f64], x: &mut [f64]| {
        conjugate_gradient(&apply_b, b_diag, rhs, x, opts.cg_tol, opts.cg_max_iter).map(|_| ())
    };
    max_generalized_eigenvalue_with(n, apply_q, &apply_b, solve, opts)
}

/// As [`max_generalized_eigenvalue`], with a caller-supplied solver for `B`.
/// `solve(rhs, x)` receives the previous solution in `x` as a warm start.
pub fn max_generalized_eigenvalue_with<FQ, FB, FS>(
    n: usize,
    apply_q: FQ,
    apply_b: FB,
    solve: FS,
    opts: SubspaceOptions,
) -> Result<f64>
where
    FQ: Fn(&[f64], &mut [f64]),
    FB: Fn(&[f64], &mut [f64]),
    FS: Fn(&[f64], &mut [f64]) -> Result<()>,
{
    let k = opts.block.min(n).max(1);
    // Deterministic, well-spread start vectors.
    let mut basis: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            (0..n)
                .map(|i| {
                    let t = (i as f64 + 1.0) * (0.618_033_988_749_895 + c as f64 * 0.414_213_562);
                    (t * 12.9898 + c as f64).sin() + 0.1 * ((i * (c + 3)) % 7) as f64
                })
                .collect()
        })
        .collect();
    let mut qx = vec![0.0; n];
    let mut prev = f64::NAN;
    let mut solves: Vec<Vec<f64>> = vec![vec![0.0; n]; k];
    for iter in 0..opts.max_iter {
        for (c, x) in basis.iter().enumerate() {
            apply_q(x, &mut qx);
            let y = &mut solves[c];
            solve(&qx, y)?;
        }
        // Rayleigh–Ritz on span(solves).
        for y in solves.iter_mut() {
            let nrm = dot(y, y).sqrt();
            if nrm > 0.0 {
                y.iter_mut().for_each(|v| *v /= nrm);
            }
        }
        let mut qs = DMatrix::zeros(k, k);
        let mut bs = DMatrix::zeros(k, k);
        let mut by = vec![0.0; n];
        let qys: Vec<Vec<f64>> = solves
            .iter()
            .map(|y| {
                let mut out = vec![0.0; n];
                apply_q(y, &mut out);
                out
            })
            .collect();
        for a in 0..k {
            apply_b(&solves[a], &mut by);
            for b in 0..k {
                bs[(a, b)] = dot(&by, &solves[b]);
                qs[(a, b)] = dot(&qys[a], &solves[b]);
            }
        }
        let qs = (&qs + qs.transpose()) * 0.5;
        let bs = (&bs + bs.transpose()) * 0.5;
        let (theta, vecs) = match ritz(&qs, &bs) {
            Some(r) => r,
            None => {
                // Collapsed subspace (Q has rank < k); fall back to the best
                // single Rayleigh quotient.
                let mut best: f64 = 0.0;
                for a in 0..k {
                    if bs[(a, a)] > 0.0 {
                        best = best.max(qs[(a, a)] / bs[(a, a)]);
                    }
                }
                return Ok(best);
            }
        };
        let top = theta[0];
        let mut next = vec![vec![0.0; n]; k];
        for (c, col) in next.iter_mut().enumerate() {
            for (a, y) in solves.iter().enumerate() {
                let w = vecs[(a, c)];
                for i in 0..n {
                    col[i] += w * y[i];
                }
            }
        }
        basis = next;
        if iter > 1 && (top - prev).abs() <= opts.rel_tol * top.abs().max(f64::MIN_POSITIVE) {
            return Ok(top);
        }
        prev = top;
    }
    Err(Error::Convergence("subspace iteration did not settle".into()))
}

/// Ritz values (descending) and vectors of a small pencil; `None` when the
/// projected mass form is numerically singular.
fn ritz(q: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let k = q.nrows();
    let beig = SymmetricEigen::new(b.clone());
    let bmax = beig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if beig.eigenvalues.iter().any(|&v| v <= 1e-13 * bmax) {
        return None;
    }
    // B^{-1/2}
    let mut inv_sqrt = DMatrix::zeros(k, k);
    for i in 0..k {
        inv_sqrt[(i, i)] = 1.0 / beig.eigenvalues[i].sqrt();
    }
    let w = &beig.eigenvectors * inv_sqrt * beig.eigenvectors.transpose();
    let c = &w * q * &w;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let theta: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(k, k);
    for (c_new, &c_old) in order.iter().enumerate() {
        let v = &w * eig.eigenvectors.column(c_old);
        vecs.set_column(c_new, &v);
    }
    Some((theta, vecs))
}

pub(crate) fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
