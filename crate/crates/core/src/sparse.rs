//! Compressed sparse row matrices with Kronecker products and deterministic
//! triplet assembly.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    /// Sum duplicate `(row, col, value)` entries. Duplicates are added in
    /// the order they appear, so the result does not depend on how the
    /// triplets were produced as long as their sequence is fixed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        // stable sort keeps the insertion order of duplicates
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < rows && c < cols);
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            data,
        }
    }

    /// Matrix with a given sparsity pattern (sorted column lists per row) and
    /// zero values.
    pub fn from_pattern(rows: usize, cols: usize, pattern: Vec<Vec<usize>>) -> Self {
        debug_assert_eq!(pattern.len(), rows);
        let mut indptr = Vec::with_capacity(rows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        for row in pattern {
            indices.extend(row);
            indptr.push(indices.len());
        }
        let data = vec![0.0; indices.len()];
        SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            data,
        }
    }

    pub fn from_dense(dense: &[Vec<f64>]) -> Self {
        let rows = dense.len();
        let cols = dense.first().map_or(0, |r| r.len());
        let triplets = dense
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(move |(j, &v)| (i, j, v))
            })
            .collect();
        Self::from_triplets(rows, cols, triplets)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.data[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Position of `(i, j)` in the data array, if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.indptr[i];
        self.indices[start..self.indptr[i + 1]]
            .binary_search(&j)
            .ok()
            .map(|k| start + k)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (i, row) in out.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                row[j] += x;
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect())
    }

    /// `A ⊗ B`: entry `(ia * rows(B) + ib, ja * cols(B) + jb) = A[ia,ja] B[ib,jb]`.
    pub fn kron(a: &SparseMatrix, b: &SparseMatrix) -> SparseMatrix {
        let rows = a.rows * b.rows;
        let cols = a.cols * b.cols;
        let mut indptr = Vec::with_capacity(rows + 1);
        indptr.push(0);
        let mut indices = Vec::with_capacity(a.nnz() * b.nnz());
        let mut data = Vec::with_capacity(a.nnz() * b.nnz());
        for ia in 0..a.rows {
            let (ca, va) = a.row(ia);
            for ib in 0..b.rows {
                let (cb, vb) = b.row(ib);
                for (&ja, &x) in ca.iter().zip(va) {
                    for (&jb, &y) in cb.iter().zip(vb) {
                        indices.push(ja * b.cols + jb);
                        data.push(x * y);
                    }
                }
                indptr.push(indices.len());
            }
        }
        SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            data,
        }
    }

    /// Kronecker product of a list of factors, outermost (slowest index)
    /// first.
    pub fn kron_all(factors: &[&SparseMatrix]) -> SparseMatrix {
        let mut acc = factors[0].clone();
        for f in &factors[1..] {
            acc = SparseMatrix::kron(&acc, f);
        }
        acc
    }

    /// `Σ α_k A_k` over matrices of equal shape. Entries are summed in the
    /// order of `terms`.
    pub fn linear_combination(terms: &[(f64, &SparseMatrix)]) -> Result<SparseMatrix> {
        let (rows, cols) = match terms.first() {
            Some((_, m)) => (m.rows, m.cols),
            None => return Err(Error::InvalidSize("empty linear combination".into())),
        };
        for (_, m) in terms {
            if m.rows != rows || m.cols != cols {
                return Err(Error::DimensionMismatch {
                    expected: rows * cols,
                    got: m.rows * m.cols,
                });
            }
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for i in 0..rows {
            acc.clear();
            for (alpha, m) in terms {
                let (c, v) = m.row(i);
                acc.extend(c.iter().zip(v).map(|(&j, &x)| (j, alpha * x)));
            }
            acc.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < acc.len() {
                let j = acc[k].0;
                let mut s = 0.0;
                while k < acc.len() && acc[k].0 == j {
                    s += acc[k].1;
                    k += 1;
                }
                indices.push(j);
                data.push(s);
            }
            indptr.push(indices.len());
        }
        Ok(SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            data,
        })
    }

    /// Largest entrywise difference against a matrix of the same shape
    /// (patterns may differ).
    pub fn max_abs_diff(&self, other: &SparseMatrix) -> Result<f64> {
        let d = SparseMatrix::linear_combination(&[(1.0, self), (-1.0, other)])?;
        Ok(d.max_abs())
    }

    /// Lower and upper bandwidths under the symmetric permutation `perm`
    /// (`perm[old] = new`), or the identity when `None`.
    pub fn bandwidths(&self, perm: Option<&[usize]>) -> (usize, usize) {
        let map = |k: usize| perm.map_or(k, |p| p[k]);
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.rows {
            let pi = map(i);
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                if x == 0.0 {
                    continue;
                }
                let pj = map(j);
                if pi > pj {
                    kl = kl.max(pi - pj);
                } else {
                    ku = ku.max(pj - pi);
                }
            }
        }
        (kl, ku)
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m = SparseMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 0, 2.0), (1, 2, 0.5), (0, 1, -1.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.get(1, 0), 0.0);
    }

    #[test]
    fn kron_matches_dense_definition() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 2.0], vec![0.0, 3.0]]);
        let b = SparseMatrix::from_dense(&[vec![4.0, 0.0, 1.0], vec![0.0, 5.0, 0.0]]);
        let k = SparseMatrix::kron(&a, &b).to_dense();
        let ad = a.to_dense();
        let bd = b.to_dense();
        for ia in 0..2 {
            for ib in 0..2 {
                for ja in 0..2 {
                    for jb in 0..3 {
                        assert_eq!(k[ia * 2 + ib][ja * 3 + jb], ad[ia][ja] * bd[ib][jb]);
                    }
                }
            }
        }
    }

    #[test]
    fn linear_combination_and_matvec() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 2.0], vec![0.0, 3.0]]);
        let i = SparseMatrix::identity(2);
        let c = SparseMatrix::linear_combination(&[(2.0, &a), (-1.0, &i)]).unwrap();
        assert_eq!(c.to_dense(), vec![vec![1.0, 4.0], vec![0.0, 5.0]]);
        assert_eq!(c.matvec(&[1.0, 1.0]).unwrap(), vec![5.0, 5.0]);
        assert!(c.matvec(&[1.0]).is_err());
        assert_eq!(a.bandwidths(None), (0, 1));
        assert_eq!(a.bandwidths(Some(&[1, 0])), (1, 0));
    }
}
