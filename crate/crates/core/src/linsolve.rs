//! Direct solvers: banded LU with partial pivoting for the space–time
//! operator and a small dense LU used for collocation problems.

use log::debug;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::assembly::KronOperator;
use crate::error::{Error, Result};
use crate::sparse::{norm2, SparseMatrix};

/// Relative pivot threshold below which a system is declared singular.
pub const PIVOT_TOLERANCE: f64 = 1e-14;

/// Dense LU with partial pivoting.
#[derive(Debug, Clone)]
pub struct DenseLu {
    lu: Vec<Vec<f64>>,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(mut a: Vec<Vec<f64>>) -> Result<Self> {
        let n = a.len();
        let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let thresh = PIVOT_TOLERANCE * scale;
        let mut piv = vec![0; n];
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            if !(a[p][k].abs() > thresh) {
                return Err(Error::SingularSystem {
                    step: k,
                    pivot: a[p][k].abs(),
                    threshold: thresh,
                });
            }
            piv[k] = p;
            a.swap(k, p);
            let (top, bottom) = a.split_at_mut(k + 1);
            let rk = &top[k];
            for ri in bottom.iter_mut() {
                let l = ri[k] / rk[k];
                ri[k] = l;
                for j in k + 1..n {
                    ri[j] -= l * rk[j];
                }
            }
        }
        Ok(DenseLu { lu: a, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.len();
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
        }
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[i][j] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[i][j] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[i][i];
        }
        x
    }
}

/// Fill statistics of a banded factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorStats {
    pub n: usize,
    pub lower_bandwidth: usize,
    pub upper_bandwidth: usize,
    /// Stored entries of the factor band.
    pub band_entries: usize,
}

/// Result of a solve with its residual diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    /// `‖b − A x‖₂` after refinement.
    pub residual: f64,
    /// `‖b − A x‖₂` before refinement.
    pub residual_before_refinement: f64,
    /// `‖b − A x‖₂ / (‖A‖_max ‖x‖₂ + ‖b‖₂)`.
    pub relative_residual: f64,
}

/// Banded LU factors `P_r (Q A Qᵀ) = L U` of a symmetrically permuted
/// operator. Row `i` of the band stores columns `i - kl ..= i + ku + kl`,
/// leaving room for the fill created by row interchanges.
#[derive(Debug, Clone)]
pub struct Factorization {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    band: Vec<f64>,
    piv: Vec<usize>,
    /// `perm[old] = new`
    perm: Vec<usize>,
    operator: SparseMatrix,
    refinement_steps: usize,
}

/// Permutation (`perm[old] = new`) that renumbers a tensor-product index
/// space with sizes `dims` (fastest first) so that `axes[0]` runs fastest.
pub fn axis_permutation(dims: &[usize], axes: &[usize]) -> Vec<usize> {
    let n: usize = dims.iter().product();
    let mut strides = vec![0; dims.len()];
    let mut s = 1;
    for &a in axes {
        strides[a] = s;
        s *= dims[a];
    }
    (0..n)
        .map(|old| {
            let mut rest = old;
            let mut new = 0;
            for (a, &d) in dims.iter().enumerate() {
                new += (rest % d) * strides[a];
                rest /= d;
            }
            new
        })
        .collect()
}

fn all_orders(k: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for sub in all_orders(k - 1) {
        for pos in 0..=sub.len() {
            let mut v = sub.clone();
            v.insert(pos, k - 1);
            out.push(v);
        }
    }
    // identity order first so that it wins ties
    out.sort();
    out
}

/// Factor `op`. When `dims` gives the tensor-product structure of the DOF
/// numbering (fastest first), every axis ordering is tried and the one with
/// the smallest band cost `kl (kl + ku)` is used.
pub fn factorize(op: &SparseMatrix, dims: Option<&[usize]>) -> Result<Factorization> {
    let n = op.rows();
    if op.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: op.cols(),
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let (mut kl, mut ku) = op.bandwidths(None);
    if let Some(dims) = dims {
        if dims.iter().product::<usize>() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: dims.iter().product(),
            });
        }
        let mut best = kl * (kl + ku);
        for order in all_orders(dims.len()) {
            let p = axis_permutation(dims, &order);
            let (l, u) = op.bandwidths(Some(&p));
            if l * (l + u) < best {
                best = l * (l + u);
                kl = l;
                ku = u;
                perm = p;
            }
        }
    }
    let width = 2 * kl + ku + 1;
    debug!("band LU: n = {n}, kl = {kl}, ku = {ku}");
    let mut band = vec![0.0; n * width];
    for i in 0..n {
        let pi = perm[i];
        let (c, v) = op.row(i);
        for (&j, &x) in c.iter().zip(v) {
            let pj = perm[j];
            band[pi * width + pj + kl - pi] += x;
        }
    }
    let scale = op.max_abs();
    let thresh = PIVOT_TOLERANCE * scale;
    let mut piv = vec![0; n];
    for k in 0..n {
        let last_row = (k + kl).min(n - 1);
        let last_col = (k + ku + kl).min(n - 1);
        let mut p = k;
        let mut pmax = band[k * width + kl].abs();
        for i in k + 1..=last_row {
            let v = band[i * width + k + kl - i].abs();
            if v > pmax {
                pmax = v;
                p = i;
            }
        }
        if !(pmax > thresh) {
            return Err(Error::SingularSystem {
                step: k,
                pivot: pmax,
                threshold: thresh,
            });
        }
        piv[k] = p;
        if p != k {
            for j in k..=last_col {
                band.swap(k * width + j + kl - k, p * width + j + kl - p);
            }
        }
        let (head, tail) = band.split_at_mut((k + 1) * width);
        let rk = &head[k * width..];
        let diag = rk[kl];
        let urow = &rk[kl + 1..kl + 1 + (last_col - k)];
        for i in k + 1..=last_row {
            let ri = &mut tail[(i - k - 1) * width..(i - k) * width];
            let off = k + kl - i;
            let l = ri[off] / diag;
            ri[off] = l;
            if l != 0.0 {
                let dst = &mut ri[off + 1..off + 1 + urow.len()];
                for (d, &u) in dst.iter_mut().zip(urow) {
                    *d -= l * u;
                }
            }
        }
    }
    Ok(Factorization {
        n,
        kl,
        ku,
        width,
        band,
        piv,
        perm,
        operator: op.clone(),
        refinement_steps: 1,
    })
}

impl Factorization {
    pub fn stats(&self) -> FactorStats {
        FactorStats {
            n: self.n,
            lower_bandwidth: self.kl,
            upper_bandwidth: self.ku,
            band_entries: self.band.len(),
        }
    }

    pub fn operator(&self) -> &SparseMatrix {
        &self.operator
    }

    /// Number of iterative refinement rounds applied by [`Self::solve`].
    pub fn with_refinement_steps(mut self, steps: usize) -> Self {
        self.refinement_steps = steps;
        self
    }

    /// Solve with the factors only (no refinement), in original numbering.
    pub fn solve_unrefined(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: rhs.len(),
            });
        }
        let (n, kl, w) = (self.n, self.kl, self.width);
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[self.perm[i]] = rhs[i];
        }
        for k in 0..n {
            y.swap(k, self.piv[k]);
            let yk = y[k];
            if yk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    y[i] -= self.band[i * w + k + kl - i] * yk;
                }
            }
        }
        for i in (0..n).rev() {
            let row = &self.band[i * w..(i + 1) * w];
            let last = (i + w - 1 - kl).min(n - 1);
            let mut s = y[i];
            for j in i + 1..=last {
                s -= row[j + kl - i] * y[j];
            }
            y[i] = s / row[kl];
        }
        Ok((0..n).map(|i| y[self.perm[i]]).collect())
    }

    /// Solve `A x = rhs` with iterative refinement and residual report.
    pub fn solve(&self, rhs: &[f64]) -> Result<Solution> {
        let mut x = self.solve_unrefined(rhs)?;
        let residual_of = |x: &[f64]| -> Result<Vec<f64>> {
            let ax = self.operator.matvec(x)?;
            Ok(rhs.iter().zip(&ax).map(|(b, a)| b - a).collect())
        };
        let mut r = residual_of(&x)?;
        let before = norm2(&r);
        let mut after = before;
        for _ in 0..self.refinement_steps {
            let d = self.solve_unrefined(&r)?;
            let candidate: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
            let rc = residual_of(&candidate)?;
            let nc = norm2(&rc);
            if nc.is_finite() && nc <= after {
                x = candidate;
                r = rc;
                after = nc;
            } else {
                break;
            }
        }
        let denom = self.operator.max_abs() * norm2(&x) + norm2(rhs);
        let relative_residual = if denom > 0.0 { after / denom } else { after };
        Ok(Solution {
            x,
            residual: after,
            residual_before_refinement: before,
            relative_residual,
        })
    }
}

/// Direct solver for a three-axis [`KronOperator`] whose middle-axis factors
/// are all either `mass` or `stiff` (symmetric, `mass` positive definite).
/// The generalized eigenvectors of `(stiff, mass)` decouple the system into
/// one two-axis problem per eigenvalue, each factored with the banded LU.
pub fn solve_separable(
    op: &KronOperator,
    rhs: &[f64],
    mass: &SparseMatrix,
    stiff: &SparseMatrix,
) -> Result<Solution> {
    let dims = op.col_dims().to_vec();
    if dims.len() != 3 || op.row_dims() != dims.as_slice() {
        return Err(Error::Unsupported(
            "separable solve needs a square operator with three axes".into(),
        ));
    }
    if rhs.len() != op.rows() {
        return Err(Error::DimensionMismatch {
            expected: op.rows(),
            got: rhs.len(),
        });
    }
    let (n0, n1, nt) = (dims[0], dims[1], dims[2]);
    let mut mass_terms = Vec::new();
    let mut stiff_terms = Vec::new();
    for t in op.terms() {
        let outer = SparseMatrix::kron(&t.factors[0], &t.factors[2]);
        if t.factors[1] == *mass {
            mass_terms.push((t.coef, outer));
        } else if t.factors[1] == *stiff {
            stiff_terms.push((t.coef, outer));
        } else {
            return Err(Error::Unsupported(
                "middle-axis factor is neither the mass nor the stiffness matrix".into(),
            ));
        }
    }
    let combine = |terms: &[(f64, SparseMatrix)]| -> Result<SparseMatrix> {
        if terms.is_empty() {
            return Ok(SparseMatrix::zeros(n0 * nt, n0 * nt));
        }
        SparseMatrix::linear_combination(&terms.iter().map(|(c, m)| (*c, m)).collect::<Vec<_>>())
    };
    let k_mass = combine(&mass_terms)?;
    let k_stiff = combine(&stiff_terms)?;
    let (lambda, v) = generalized_eigen(stiff, mass)?;

    // b̂ = (I ⊗ Vᵀ ⊗ I) b, stored per eigenvalue as contiguous (n0, nt) blocks
    let plane = n0 * nt;
    let mut bhat = vec![0.0; n1 * plane];
    for it in 0..nt {
        for i1 in 0..n1 {
            let src = &rhs[n0 * (i1 + n1 * it)..n0 * (i1 + 1 + n1 * it)];
            for j in 0..n1 {
                let w = v[(i1, j)];
                if w == 0.0 {
                    continue;
                }
                let dst = &mut bhat[j * plane + n0 * it..j * plane + n0 * (it + 1)];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    let blocks: Vec<Vec<f64>> = (0..n1)
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            let kj = SparseMatrix::linear_combination(&[(1.0, &k_mass), (lambda[j], &k_stiff)])?;
            let f = factorize(&kj, Some(&[n0, nt])).map_err(|e| match e {
                Error::SingularSystem { step, pivot, threshold } => Error::SingularSystem {
                    step: step + j * plane,
                    pivot,
                    threshold,
                },
                other => other,
            })?;
            Ok(f.solve(&bhat[j * plane..(j + 1) * plane])?.x)
        })
        .collect::<Result<_>>()?;
    let mut x = vec![0.0; rhs.len()];
    for it in 0..nt {
        for (j, y) in blocks.iter().enumerate() {
            let src = &y[n0 * it..n0 * (it + 1)];
            for i1 in 0..n1 {
                let w = v[(i1, j)];
                if w == 0.0 {
                    continue;
                }
                let dst = &mut x[n0 * (i1 + n1 * it)..n0 * (i1 + 1 + n1 * it)];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    let ax = op.apply(&x)?;
    let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let residual = norm2(&r);
    let denom = op.max_abs_bound() * norm2(&x) + norm2(rhs);
    debug!("separable solve: {n1} blocks of size {plane}, residual {residual:e}");
    Ok(Solution {
        x,
        residual,
        residual_before_refinement: residual,
        relative_residual: if denom > 0.0 { residual / denom } else { residual },
    })
}

/// `(λ, V)` with `A V = M V diag(λ)`, `Vᵀ M V = I`.
fn generalized_eigen(a: &SparseMatrix, m: &SparseMatrix) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.rows();
    let dense = |s: &SparseMatrix| {
        let d = s.to_dense();
        DMatrix::from_fn(n, n, |i, j| 0.5 * (d[i][j] + d[j][i]))
    };
    let chol = dense(m)
        .cholesky()
        .ok_or_else(|| Error::Numerical("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let c = &linv * dense(a) * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let v = linv.transpose() * eig.eigenvectors;
    Ok((eig.eigenvalues.iter().copied().collect(), v))
}
