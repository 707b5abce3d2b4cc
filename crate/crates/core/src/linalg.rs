//! Dense patch matrices and a thin SVD specialised for short, wide matrices.
//!
//! Patch matrices are `m x n` with `m <= n` (`m` pixels per patch, `n`
//! patches per group), `m` at most ~100. The SVD is computed from the
//! `m x m` Gram matrix `Y Y^T`: Householder tridiagonalization followed by
//! implicit QL gives the left singular vectors, `B = U^T Y` is then refined
//! by one-sided Jacobi rotations until its rows are orthogonal to working
//! precision, and the rows of `B` yield the singular values and the right
//! singular vectors. The Jacobi pass restores the accuracy of small
//! singular values that the Gram matrix route alone would lose.

use crate::error::{Error, Result};

/// Column-major dense matrix; column `l` is the `l`-th patch of a group.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PatchMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_column_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(
                format!("{} entries ({rows}x{cols})", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[col * self.rows + row] = value;
    }

    #[inline]
    pub fn column(&self, col: usize) -> &[f64] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    #[inline]
    pub fn column_mut(&mut self, col: usize) -> &mut [f64] {
        &mut self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn same_shape(&self, other: &PatchMatrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    /// Frobenius inner product `<self, other>_F`.
    pub fn inner(&self, other: &PatchMatrix) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &PatchMatrix, b: f64) -> PatchMatrix {
        debug_assert!(self.same_shape(other));
        PatchMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> PatchMatrix {
        PatchMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Squared Frobenius distance `||self - other||_F^2`.
    pub fn distance_sq(&self, other: &PatchMatrix) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Mean of the columns (the mean patch), length `rows`.
    pub fn column_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.rows];
        for c in 0..self.cols {
            for (m, v) in mean.iter_mut().zip(self.column(c)) {
                *m += v;
            }
        }
        let inv = 1.0 / self.cols as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        mean
    }

    /// Adds `scale * vector` to every column.
    pub fn add_to_columns(&mut self, vector: &[f64], scale: f64) {
        debug_assert_eq!(vector.len(), self.rows);
        for c in 0..self.cols {
            for (y, v) in self.column_mut(c).iter_mut().zip(vector) {
                *y += scale * v;
            }
        }
    }

    pub fn transpose(&self) -> PatchMatrix {
        PatchMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }
}

/// Thin SVD `Y = U diag(sigma) V^T` of an `m x n` matrix with `m <= n`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    rows: usize,
    cols: usize,
    /// `m x m`, column-major.
    u: Vec<f64>,
    /// Nonincreasing, nonnegative.
    sigma: Vec<f64>,
    /// `n x m`, column-major.
    v: Vec<f64>,
}

impl SvdFactors {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    /// Left singular vector `i` (length `m`).
    pub fn u_col(&self, i: usize) -> &[f64] {
        &self.u[i * self.rows..(i + 1) * self.rows]
    }

    /// Right singular vector `i` (length `n`).
    pub fn v_col(&self, i: usize) -> &[f64] {
        &self.v[i * self.cols..(i + 1) * self.cols]
    }

    pub fn u_matrix(&self) -> PatchMatrix {
        PatchMatrix {
            rows: self.rows,
            cols: self.rows,
            data: self.u.clone(),
        }
    }

    pub fn v_matrix(&self) -> PatchMatrix {
        PatchMatrix {
            rows: self.cols,
            cols: self.rows,
            data: self.v.clone(),
        }
    }

    /// `U diag(values) V^T`; `values.len()` must equal `m`.
    pub fn compose(&self, values: &[f64]) -> PatchMatrix {
        assert_eq!(values.len(), self.rows);
        let (m, n) = (self.rows, self.cols);
        let mut out = PatchMatrix::zeros(m, n);
        for (i, &s) in values.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            let u = self.u_col(i);
            let v = self.v_col(i);
            for c in 0..n {
                let w = s * v[c];
                if w == 0.0 {
                    continue;
                }
                for (y, &ur) in out.column_mut(c).iter_mut().zip(u) {
                    *y += w * ur;
                }
            }
        }
        out
    }

    /// `u_i^T M v_i` for every `i`: the diagonal of `U^T M V`.
    pub fn project_diagonal(&self, mat: &PatchMatrix) -> Vec<f64> {
        assert_eq!(mat.rows(), self.rows);
        assert_eq!(mat.cols(), self.cols);
        (0..self.rows)
            .map(|i| {
                let u = self.u_col(i);
                let v = self.v_col(i);
                (0..self.cols)
                    .map(|c| v[c] * dot(mat.column(c), u))
                    .sum::<f64>()
            })
            .collect()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent lanes so the loop vectorizes
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// Relative level below which singular values are snapped to zero.
pub const SINGULAR_VALUE_SNAP: f64 = 1e-12;

const MAX_QL_ITERATIONS: usize = 64;
const MAX_JACOBI_SWEEPS: usize = 60;

/// Thin SVD of a short, wide matrix (`rows <= cols`).
pub fn svd(y: &PatchMatrix) -> Result<SvdFactors> {
    let (m, n) = (y.rows(), y.cols());
    if m > n {
        return Err(Error::dims(
            format!("rows <= cols for a {m}-row matrix"),
            format!("{m}x{n}"),
        ));
    }
    if m == 0 {
        return Ok(SvdFactors {
            rows: 0,
            cols: n,
            u: Vec::new(),
            sigma: Vec::new(),
            v: Vec::new(),
        });
    }
    if y.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("svd input", "matrix has non-finite entries"));
    }

    // Gram matrix G = Y Y^T, row-major m x m.
    let mut gram = vec![0.0; m * m];
    for c in 0..n {
        let col = y.column(c);
        for i in 0..m {
            let yi = col[i];
            if yi == 0.0 {
                continue;
            }
            let row = &mut gram[i * m..i * m + i + 1];
            for (g, &yj) in row.iter_mut().zip(&col[..=i]) {
                *g += yi * yj;
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            gram[j * m + i] = gram[i * m + j];
        }
    }

    // Eigenvectors of G, row-major: column i of `evec` is eigenvector i.
    let (evals, evec) = symmetric_eigen(gram, m)?;

    // Descending eigenvalue order; stable so equal eigenvalues keep QL order.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| evals[b].total_cmp(&evals[a]));

    // U column-major m x m, B = U^T Y row-major m x n.
    let mut u = vec![0.0; m * m];
    for (k, &src) in order.iter().enumerate() {
        for r in 0..m {
            u[k * m + r] = evec[r * m + src];
        }
    }
    let mut b = vec![0.0; m * n];
    for k in 0..m {
        let uk = &u[k * m..(k + 1) * m];
        let row = &mut b[k * n..(k + 1) * n];
        for (c, out) in row.iter_mut().enumerate() {
            *out = dot(uk, y.column(c));
        }
    }

    one_sided_jacobi(&mut b, &mut u, m, n)?;

    let norms: Vec<f64> = (0..m)
        .map(|k| dot(&b[k * n..(k + 1) * n], &b[k * n..(k + 1) * n]).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let top = norms[order[0]];
    let snap = SINGULAR_VALUE_SNAP * top;
    let mut sigma = Vec::with_capacity(m);
    let mut u_sorted = vec![0.0; m * m];
    let mut v = vec![0.0; n * m];
    let mut filled = 0;
    for (k, &src) in order.iter().enumerate() {
        u_sorted[k * m..(k + 1) * m].copy_from_slice(&u[src * m..(src + 1) * m]);
        let s = norms[src];
        if s > 0.0 && s >= snap {
            sigma.push(s);
            let inv = 1.0 / s;
            for (dst, &bv) in v[k * n..(k + 1) * n].iter_mut().zip(&b[src * n..(src + 1) * n]) {
                *dst = bv * inv;
            }
            filled = k + 1;
        } else {
            sigma.push(0.0);
        }
    }
    complete_orthonormal(&mut v, n, m, filled);

    Ok(SvdFactors {
        rows: m,
        cols: n,
        u: u_sorted,
        sigma,
        v,
    })
}

/// Rotates rows of `b` (row-major `m x n`) until mutually orthogonal,
/// applying the same rotations to the columns of `u` (column-major `m x m`).
fn one_sided_jacobi(b: &mut [f64], u: &mut [f64], m: usize, n: usize) -> Result<()> {
    let tol = 2.0 * (n as f64).sqrt() * f64::EPSILON;
    // rows below the snap level become zero singular values; pairing them with
    // large rows gives rotation angles that underflow
    let top = (0..m)
        .map(|k| dot(&b[k * n..(k + 1) * n], &b[k * n..(k + 1) * n]))
        .fold(0.0, f64::max);
    let floor = (SINGULAR_VALUE_SNAP * SINGULAR_VALUE_SNAP * top).max(f64::MIN_POSITIVE);
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for i in 0..m {
            for j in i + 1..m {
                let (head, tail) = b.split_at_mut(j * n);
                let bi = &mut head[i * n..(i + 1) * n];
                let bj = &mut tail[..n];
                let alpha = dot(bi, bi);
                let beta = dot(bj, bj);
                let gamma = dot(bi, bj);
                if alpha <= floor || beta <= floor {
                    continue;
                }
                if gamma.abs() <= tol * (alpha.sqrt() * beta.sqrt()) {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                if t == 0.0 || !t.is_finite() {
                    continue;
                }
                rotated = true;
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in bi.iter_mut().zip(bj.iter_mut()) {
                    let (xi, yj) = (*x, *y);
                    *x = c * xi - s * yj;
                    *y = s * xi + c * yj;
                }
                let (uh, ut) = u.split_at_mut(j * m);
                let ui = &mut uh[i * m..(i + 1) * m];
                let uj = &mut ut[..m];
                for (x, y) in ui.iter_mut().zip(uj.iter_mut()) {
                    let (xi, yj) = (*x, *y);
                    *x = c * xi - s * yj;
                    *y = s * xi + c * yj;
                }
            }
        }
        if !rotated {
            return Ok(());
        }
    }
    Err(Error::NoConvergence {
        sweeps: MAX_JACOBI_SWEEPS,
    })
}

/// Fills columns `filled..m` of `v` (column-major `n x m`) with unit vectors
/// orthogonal to all earlier columns, drawn from the standard basis.
fn complete_orthonormal(v: &mut [f64], n: usize, m: usize, filled: usize) {
    let residual = |v: &[f64], next: usize, e: usize| {
        let mut candidate = vec![0.0; n];
        candidate[e] = 1.0;
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for k in 0..next {
                let col = &v[k * n..(k + 1) * n];
                let p = dot(col, &candidate);
                for (c, &q) in candidate.iter_mut().zip(col) {
                    *c -= p * q;
                }
            }
        }
        let norm = dot(&candidate, &candidate).sqrt();
        (candidate, norm)
    };
    let push = |v: &mut [f64], next: usize, candidate: &[f64], norm: f64| {
        for (d, &c) in v[next * n..(next + 1) * n].iter_mut().zip(candidate) {
            *d = c / norm;
        }
    };
    let mut next = filled;
    for e in 0..n {
        if next == m {
            return;
        }
        let (candidate, norm) = residual(v, next, e);
        if norm > 0.5 {
            push(v, next, &candidate, norm);
            next += 1;
        }
    }
    // Some complement direction always has a basis residual of at least
    // 1/sqrt(n); take the largest one.
    while next < m {
        let (candidate, norm) = (0..n)
            .map(|e| residual(v, next, e))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("n >= m > 0");
        push(v, next, &candidate, norm);
        next += 1;
    }
}

/// Eigen-decomposition of a symmetric matrix (row-major, `n x n`):
/// Householder tridiagonalization and implicit QL with shifts.
///
/// Returns eigenvalues (unsorted) and the eigenvector matrix, row-major,
/// with eigenvector `i` in column `i`.
pub(crate) fn symmetric_eigen(mut a: Vec<f64>, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut a, &mut d, &mut e, n);
    tridiagonal_ql(&mut a, &mut d, &mut e, n)?;
    Ok((d, a))
}

#[inline]
fn at(n: usize, r: usize, c: usize) -> usize {
    r * n + c
}

fn tridiagonalize(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    d.copy_from_slice(&v[at(n, n - 1, 0)..at(n, n - 1, 0) + n]);
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(n, i - 1, j)];
                v[at(n, i, j)] = 0.0;
                v[at(n, j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(n, j, i)] = f;
                g = e[j] + v[at(n, j, j)] * f;
                for k in j + 1..i {
                    g += v[at(n, k, j)] * d[k];
                    e[k] += v[at(n, k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(n, k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(n, i - 1, j)];
                v[at(n, i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    // accumulate transformations
    for i in 0..n - 1 {
        v[at(n, n - 1, i)] = v[at(n, i, i)];
        v[at(n, i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(n, k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(n, k, i + 1)] * v[at(n, k, j)];
                }
                for k in 0..=i {
                    v[at(n, k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(n, k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n, n - 1, j)];
        v[at(n, n - 1, j)] = 0.0;
    }
    v[at(n, n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

fn tridiagonal_ql(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) -> Result<()> {
    // rotations act on columns; work on the transpose so they are contiguous
    transpose_square(v, n);
    let r = tridiagonal_ql_rows(v, d, e, n);
    transpose_square(v, n);
    r
}

fn transpose_square(v: &mut [f64], n: usize) {
    for r in 0..n {
        for c in r + 1..n {
            v.swap(at(n, r, c), at(n, c, r));
        }
    }
}

fn tridiagonal_ql_rows(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERATIONS {
                    return Err(Error::NoConvergence { sweeps: iter });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (head, tail) = v.split_at_mut((i + 1) * n);
                    let col_i = &mut head[i * n..];
                    let col_i1 = &mut tail[..n];
                    for (vk, vk1) in col_i.iter_mut().zip(col_i1.iter_mut()) {
                        let (a, b) = (*vk, *vk1);
                        *vk1 = s * a + c * b;
                        *vk = c * a - s * b;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}
