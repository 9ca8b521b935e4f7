//! Compressed sparse row storage, a Jacobi-preconditioned conjugate gradient
//! solver, and a rank check for constraint blocks.
//!
//! Factorizations themselves are delegated to `faer`; this module keeps the
//! pieces that need to be inspectable (residuals, redundant constraint rows).

use faer::sparse::{SparseColMat, Triplet};

#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds the matrix from `(row, col, value)` triplets, summing duplicates.
    /// Explicit zeros produced by cancellation are kept so the pattern is
    /// independent of the values.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) outside {nrows}x{ncols}");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut s = 0.0;
                while k < row.len() && row[k].0 == c {
                    s += row[k].1;
                    k += 1;
                }
                indices.push(c);
                values.push(s);
            }
            indptr.push(indices.len());
        }
        Self { nrows, ncols, indptr, indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let s = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        match s.binary_search(&j) {
            Ok(k) => self.values[self.indptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for (i, &yi) in y.iter().enumerate() {
            for (j, v) in self.row(i) {
                out[j] += v * yi;
            }
        }
        out
    }

    pub fn transpose(&self) -> Csr {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                t.push((j, i, v));
            }
        }
        Csr::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_faer(&self) -> SparseColMat<usize, f64> {
        let t: Vec<Triplet<usize, usize, f64>> =
            self.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .expect("valid triplets always form a matrix")
    }

    /// Largest absolute asymmetry `|a_ij − a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, j, v) in self.triplets() {
            worst = worst.max((v - self.get(j, i)).abs());
        }
        worst
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Clone, Debug)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for an SPD matrix.
pub fn conjugate_gradient(a: &Csr, b: &[f64], rtol: f64, max_iter: usize) -> (Vec<f64>, CgReport) {
    let n = b.len();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return (x, CgReport { iterations: 0, relative_residual: 0.0 });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut it = 0;
    let mut rel = 1.0;
    while it < max_iter {
        let ap = a.matvec(&p);
        let alpha = rz / dot(&p, &ap);
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        it += 1;
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= rtol {
            break;
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    (x, CgReport { iterations: it, relative_residual: rel })
}

/// Rows of `b` that are (numerically) linear combinations of earlier rows.
///
/// Factorizes `B·Bᵀ = L·D·Lᵀ` in profile (skyline) storage without pivoting;
/// a pivot below `rel_tol` times the original diagonal entry marks a redundant
/// row, which is then decoupled so the factorization can continue.
pub fn redundant_rows(b: &Csr, rel_tol: f64) -> Vec<usize> {
    let m = b.nrows;
    let bt = b.transpose();
    // first column touched by row i of B·Bᵀ
    let mut first = vec![0usize; m];
    let mut gram: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for i in 0..m {
        let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for (c, v) in b.row(i) {
            for (k, w) in bt.row(c) {
                if k <= i {
                    *acc.entry(k).or_insert(0.0) += v * w;
                }
            }
        }
        first[i] = acc.keys().next().copied().unwrap_or(i);
        gram[i] = acc.into_iter().collect();
    }
    // skyline rows: row i stores columns first[i]..=i
    let mut rows: Vec<Vec<f64>> = (0..m).map(|i| vec![0.0; i - first[i] + 1]).collect();
    for i in 0..m {
        for &(k, v) in &gram[i] {
            rows[i][k - first[i]] = v;
        }
    }
    let mut d = vec![0.0; m];
    let mut redundant = Vec::new();
    for i in 0..m {
        let fi = first[i];
        let orig_diag = rows[i][i - fi];
        // L[i][j] for j < i, computed in place: rows[i][j] holds L_ij * d_j progressively
        for j in fi..i {
            let fj = first[j];
            let lo = fi.max(fj);
            let mut s = rows[i][j - fi];
            for k in lo..j {
                s -= rows[i][k - fi] * rows[j][k - fj] * d[k];
            }
            rows[i][j - fi] = if d[j] != 0.0 { s / d[j] } else { 0.0 };
        }
        let mut s = rows[i][i - fi];
        for k in fi..i {
            let l = rows[i][k - fi];
            s -= l * l * d[k];
        }
        if s <= rel_tol * orig_diag.abs() || orig_diag == 0.0 {
            redundant.push(i);
            d[i] = 0.0;
            for v in rows[i].iter_mut() {
                *v = 0.0;
            }
        } else {
            d[i] = s;
        }
    }
    redundant
}
