//! Dense complex tensors and matrices.
//!
//! Everything here is small (matrices of dimension at most `D^Δ`), so the
//! routines favour determinism and accuracy over speed: the SVD is a
//! one-sided Jacobi sweep and the Hermitian eigensolver is cyclic Jacobi.
//! Both produce bit-identical output for bit-identical input.

use std::cell::Cell;
use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Entry-wise tolerance for treating a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 80;

thread_local! {
    static MULS: Cell<u64> = const { Cell::new(0) };
}

/// Record `n` complex multiplications against the current thread's counter.
pub fn add_muls(n: u64) {
    MULS.with(|c| c.set(c.get() + n));
}

/// Run `f` and return its result together with the number of complex
/// multiplications it performed on this thread.
pub fn counted<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = MULS.with(|c| c.get());
    let out = f();
    let after = MULS.with(|c| c.get());
    (out, after - before)
}

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Row-major complex matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for col in 0..self.cols {
                let z = self[(r, col)];
                write!(f, "{:+.6}{:+.6}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = C64;
    #[inline]
    fn index(&self, (r, col): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + col]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, col): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + col]
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!("{} entries for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for col in 0..cols {
                data.push(f(r, col));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_real_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = C64::new(x, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, col| self[(col, r)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, col| self[(col, r)])
    }

    pub fn conj(&self) -> Self {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let row = &self.data[i * k..(i + 1) * k];
            let dst = &mut out.data[i * m..(i + 1) * m];
            for (l, &a) in row.iter().enumerate() {
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let src = &other.data[l * m..(l + 1) * m];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        add_muls((n * k * m) as u64);
        Ok(out)
    }

    /// Matrix product that panics on shape mismatch; for internal use where
    /// shapes are fixed by construction.
    pub fn mul(&self, other: &Matrix) -> Matrix {
        self.matmul(other).expect("matrix shapes fixed by construction")
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * s).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// `(M + M†)/2`.
    pub fn hermitian_part(&self) -> Matrix {
        assert!(self.is_square());
        Matrix::from_fn(self.rows, self.cols, |r, col| (self[(r, col)] + self[(col, r)].conj()) * 0.5)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|r| (0..self.cols).all(|col| (self[(r, col)] - self[(col, r)].conj()).norm() <= tol))
    }

    pub fn kron(&self, other: &Matrix) -> Matrix {
        let (r2, c2) = (other.rows, other.cols);
        add_muls((self.data.len() * other.data.len()) as u64);
        Matrix::from_fn(self.rows * r2, self.cols * c2, |r, col| self[(r / r2, col / c2)] * other[(r % r2, col % c2)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `Σ_ij A_ij B_ij`: the bilinear pairing of two objects living on the
    /// same edge space (equal to `Tr(A Bᵀ)`).
    pub fn pair(&self, other: &Matrix) -> C64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        add_muls(self.data.len() as u64);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayRepr {
    shape: Vec<usize>,
    data: Vec<[f64; 2]>,
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ArrayRepr { shape: vec![self.rows, self.cols], data: self.data.iter().map(|z| [z.re, z.im]).collect() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ArrayRepr::deserialize(d)?;
        if repr.shape.len() != 2 {
            return Err(serde::de::Error::custom("matrix shape must have two entries"));
        }
        Matrix::from_vec(repr.shape[0], repr.shape[1], repr.data.iter().map(|&[re, im]| c(re, im)).collect())
            .map_err(serde::de::Error::custom)
    }
}

/// Dense row-major tensor with optional leg labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<C64>,
    labels: Option<Vec<String>>,
}

impl Serialize for DenseTensor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ArrayRepr { shape: self.shape.clone(), data: self.data.iter().map(|z| [z.re, z.im]).collect() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DenseTensor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ArrayRepr::deserialize(d)?;
        DenseTensor::new(repr.shape, repr.data.iter().map(|&[re, im]| c(re, im)).collect())
            .map_err(serde::de::Error::custom)
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch(format!("shape {shape:?} needs {n} entries, got {}", data.len())));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Invalid("tensor entries must be finite".into()));
        }
        Ok(DenseTensor { shape, data, labels: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        DenseTensor { shape, data: vec![C64::new(0.0, 0.0); n], labels: None }
    }

    pub fn scalar(z: C64) -> Self {
        DenseTensor { shape: vec![], data: vec![z], labels: None }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        DenseTensor { shape: vec![m.rows(), m.cols()], data: m.data().to_vec(), labels: None }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.shape.len() {
            return Err(Error::DimensionMismatch(format!("{} labels for {} legs", labels.len(), self.shape.len())));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        let st = strides(&self.shape);
        self.data[idx.iter().zip(&st).map(|(i, s)| i * s).sum::<usize>()]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn conj(&self) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z.conj()).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z * s).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn add(&self, other: &DenseTensor) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::DimensionMismatch(format!("add {:?} and {:?}", self.shape, other.shape)));
        }
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            labels: self.labels.clone(),
        })
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::DimensionMismatch(format!("reshape {:?} -> {shape:?}", self.shape)));
        }
        Ok(DenseTensor { shape, data: self.data.clone(), labels: None })
    }

    /// Reorder legs: output leg `k` is input leg `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Invalid(format!("{perm:?} is not a permutation of {r} legs")));
        }
        let in_strides = strides(&self.shape);
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let moved_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; r];
        let mut offset = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[offset]);
            for k in (0..r).rev() {
                idx[k] += 1;
                offset += moved_strides[k];
                if idx[k] < new_shape[k] {
                    break;
                }
                offset -= moved_strides[k] * new_shape[k];
                idx[k] = 0;
            }
        }
        let labels = self.labels.as_ref().map(|l| perm.iter().map(|&p| l[p].clone()).collect());
        Ok(DenseTensor { shape: new_shape, data, labels })
    }
}

/// Contract `a` and `b` over the listed leg pairs. The result carries the
/// free legs of `a` followed by the free legs of `b`, each in original order.
pub fn contract(a: &DenseTensor, b: &DenseTensor, pairs: &[(usize, usize)]) -> Result<DenseTensor> {
    let mut used_a = vec![false; a.rank()];
    let mut used_b = vec![false; b.rank()];
    for &(la, lb) in pairs {
        if la >= a.rank() || lb >= b.rank() {
            return Err(Error::Invalid(format!("leg pair ({la}, {lb}) out of range")));
        }
        if std::mem::replace(&mut used_a[la], true) || std::mem::replace(&mut used_b[lb], true) {
            return Err(Error::Invalid(format!("leg pair ({la}, {lb}) contracted twice")));
        }
        if a.shape[la] != b.shape[lb] {
            return Err(Error::DimensionMismatch(format!(
                "leg {la} of a has dimension {} but leg {lb} of b has dimension {}",
                a.shape[la], b.shape[lb]
            )));
        }
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|&l| !used_a[l]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&l| !used_b[l]).collect();
    let perm_a: Vec<usize> = free_a.iter().copied().chain(pairs.iter().map(|p| p.0)).collect();
    let perm_b: Vec<usize> = pairs.iter().map(|p| p.1).chain(free_b.iter().copied()).collect();
    let at = a.permute(&perm_a)?;
    let bt = b.permute(&perm_b)?;
    let rows: usize = free_a.iter().map(|&l| a.shape[l]).product();
    let inner: usize = pairs.iter().map(|p| a.shape[p.0]).product();
    let cols: usize = free_b.iter().map(|&l| b.shape[l]).product();
    let ma = Matrix::from_vec(rows, inner, at.data)?;
    let mb = Matrix::from_vec(inner, cols, bt.data)?;
    let prod = ma.matmul(&mb)?;
    let shape: Vec<usize> = free_a.iter().map(|&l| a.shape[l]).chain(free_b.iter().map(|&l| b.shape[l])).collect();
    let labels = match (&a.labels, &b.labels) {
        (Some(la), Some(lb)) => {
            Some(free_a.iter().map(|&l| la[l].clone()).chain(free_b.iter().map(|&l| lb[l].clone())).collect())
        }
        _ => None,
    };
    Ok(DenseTensor { shape, data: prod.data, labels })
}

/// Group `row_legs` (in the given order) into rows and the remaining legs
/// (in ascending order) into columns.
pub fn matricize(t: &DenseTensor, row_legs: &[usize]) -> Result<Matrix> {
    let mut is_row = vec![false; t.rank()];
    for &l in row_legs {
        if l >= t.rank() || std::mem::replace(&mut is_row[l], true) {
            return Err(Error::Invalid(format!("row legs {row_legs:?} invalid for rank {}", t.rank())));
        }
    }
    let col_legs: Vec<usize> = (0..t.rank()).filter(|&l| !is_row[l]).collect();
    let perm: Vec<usize> = row_legs.iter().copied().chain(col_legs.iter().copied()).collect();
    let p = t.permute(&perm)?;
    let rows: usize = row_legs.iter().map(|&l| t.shape[l]).product();
    let cols: usize = col_legs.iter().map(|&l| t.shape[l]).product();
    Matrix::from_vec(rows, cols, p.data)
}

/// Thin singular value decomposition `m = u · diag(s) · v†` with `s`
/// descending, `u` of shape `rows × k` and `v` of shape `cols × k`,
/// `k = min(rows, cols)`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.s.len();
        let us = Matrix::from_fn(self.u.rows(), k, |r, col| self.u[(r, col)] * self.s[col]);
        us.mul(&self.v.adjoint())
    }
}

/// `(x_p, x_q) ← (x_p·c − x_q·φ·s, x_p·s + x_q·φ·c)` on two columns.
fn rotate_pair(cols: &mut [Vec<C64>], p: usize, q: usize, ph: C64, cs: f64, sn: f64) {
    let (left, right) = cols.split_at_mut(q);
    for (xp, xq) in left[p].iter_mut().zip(right[0].iter_mut()) {
        let (ap, bq) = (*xp, *xq * ph);
        *xp = ap * cs - bq * sn;
        *xq = ap * sn + bq * cs;
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(m: &Matrix) -> Result<Svd> {
    if !m.is_finite() {
        return Err(Error::Invalid("svd input has non-finite entries".into()));
    }
    if m.rows() < m.cols() {
        let t = svd(&m.adjoint())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u });
    }
    let (rows, cols) = (m.rows(), m.cols());
    // Work column-major for cache-friendly column rotations.
    let mut a: Vec<Vec<C64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<C64>> =
        (0..cols).map(|j| (0..cols).map(|i| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) }).collect()).collect();
    let scale = m.frobenius_norm();
    let mut converged = scale == 0.0 || cols < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence { routine: "one-sided Jacobi SVD", sweeps });
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = a[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma: C64 = a[p].iter().zip(&a[q]).map(|(x, y)| x.conj() * y).sum();
                add_muls(3 * rows as u64);
                let g = gamma.norm();
                if g <= 1e-15 * (alpha * beta).sqrt() || g < 1e-300 {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                // b_q = a_q · conj(phase) makes the overlap real and positive.
                let ph = phase.conj();
                rotate_pair(&mut a, p, q, ph, cs, sn);
                rotate_pair(&mut v, p, q, ph, cs, sn);
                add_muls(6 * (rows + cols) as u64);
            }
        }
        converged = !rotated;
    }
    let norms: Vec<f64> = a.iter().map(|col| col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));
    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let floor = s.first().copied().unwrap_or(0.0) * 1e-14;
    let mut ucols: Vec<Vec<C64>> = Vec::with_capacity(cols);
    for (k, &j) in order.iter().enumerate() {
        if s[k] > floor && s[k] > 0.0 {
            ucols.push(a[j].iter().map(|z| z / s[k]).collect());
        } else {
            ucols.push(complete_orthonormal(&ucols, rows));
        }
    }
    let u = Matrix::from_fn(rows, cols, |r, col| ucols[col][r]);
    let vm = Matrix::from_fn(cols, cols, |r, col| v[order[col]][r]);
    Ok(Svd { u, s, v: vm })
}

/// A unit vector orthogonal to every vector in `basis` (deterministic:
/// the first standard basis vector with a usable residual).
fn complete_orthonormal(basis: &[Vec<C64>], n: usize) -> Vec<C64> {
    for e in 0..n {
        let mut x = vec![c(0.0, 0.0); n];
        x[e] = c(1.0, 0.0);
        for _ in 0..2 {
            for b in basis {
                let ov: C64 = b.iter().zip(&x).map(|(bi, xi)| bi.conj() * xi).sum();
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi -= ov * bi;
                }
            }
        }
        let nrm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm > 1e-6 {
            return x.into_iter().map(|z| z / nrm).collect();
        }
    }
    unreachable!("basis cannot span the whole space while a column is still missing")
}

/// Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi.
/// Returns ascending eigenvalues and the unitary whose columns are the
/// corresponding eigenvectors. The input is symmetrized first.
pub fn eigh(h: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch(format!("eigh on {}x{}", h.rows(), h.cols())));
    }
    let n = h.rows();
    let mut a = h.hermitian_part();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    let mut sweeps = 0;
    loop {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum();
        if off.sqrt() <= 1e-15 * scale || scale == 0.0 {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence { routine: "Hermitian Jacobi eigensolver", sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let g = apq.norm();
                if g < 1e-300 {
                    continue;
                }
                let phase = apq / g;
                let tau = (a[(q, q)].re - a[(p, p)].re) / (2.0 * g);
                let t = if tau == 0.0 { 1.0 } else { tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt()) };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                let ph = phase.conj();
                // Columns: J = [[cs, sn], [-sn·ph, cs·ph]] on (p, q).
                for k in 0..n {
                    let hp = a[(k, p)];
                    let hq = a[(k, q)];
                    a[(k, p)] = hp * cs - hq * ph * sn;
                    a[(k, q)] = hp * sn + hq * ph * cs;
                }
                for k in 0..n {
                    let hp = a[(p, k)];
                    let hq = a[(q, k)];
                    a[(p, k)] = hp * cs - hq * phase * sn;
                    a[(q, k)] = hp * sn + hq * phase * cs;
                }
                for k in 0..n {
                    let vp = v[(k, p)];
                    let vq = v[(k, q)];
                    v[(k, p)] = vp * cs - vq * ph * sn;
                    v[(k, q)] = vp * sn + vq * ph * cs;
                }
                add_muls(12 * n as u64);
                a[(p, q)] = c(0.0, 0.0);
                a[(q, p)] = c(0.0, 0.0);
                a[(p, p)] = c(a[(p, p)].re, 0.0);
                a[(q, q)] = c(a[(q, q)].re, 0.0);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.partial_cmp(&a[(j, j)].re).unwrap().then(i.cmp(&j)));
    let vals = order.iter().map(|&i| a[(i, i)].re).collect();
    let vecs = Matrix::from_fn(n, n, |r, col| v[(r, order[col])]);
    Ok((vals, vecs))
}

/// Which Schatten norm to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schatten {
    One,
    Two,
    Inf,
}

pub fn schatten_norm(m: &Matrix, p: Schatten) -> f64 {
    if p == Schatten::Two {
        return m.frobenius_norm();
    }
    let s = svd(m).expect("Jacobi SVD converges on finite input").s;
    match p {
        Schatten::One => s.iter().sum(),
        Schatten::Inf => s.first().copied().unwrap_or(0.0),
        Schatten::Two => unreachable!(),
    }
}

/// Trace norm of a (nominally) Hermitian matrix via its eigenvalues.
pub fn trace_norm_hermitian(h: &Matrix) -> f64 {
    let (vals, _) = eigh(h).expect("Jacobi eigensolver converges on finite input");
    vals.iter().map(|x| x.abs()).sum()
}

/// Smallest eigenvalue of the Hermitian part of `h`.
pub fn min_eigenvalue(h: &Matrix) -> f64 {
    let (vals, _) = eigh(h).expect("Jacobi eigensolver converges on finite input");
    vals[0]
}
