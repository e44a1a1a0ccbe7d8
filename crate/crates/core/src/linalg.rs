//! Dense complex linear algebra for dimensions up to a few thousand.
//!
//! States are unit vectors in `C^d`, operators are Hermitian matrices stored
//! row-major as `(re, im)` double pairs. All reductions run in a fixed
//! (row-major) order so results are bit-reproducible.
//!
//! Eigendecomposition uses cyclic Jacobi with threshold skipping, which is
//! portable and fast on the near-block-diagonal matrices this crate mostly
//! produces. Trace-distance computations on large real-valued differences
//! switch to a Householder tridiagonalization + implicit-shift QL pass that
//! only extracts eigenvalues.

use crate::{Error, Result};
use num_complex::Complex;

pub type Complex64 = Complex<f64>;

/// Tolerance for structural invariants (norms, Hermiticity).
pub const STRUCT_TOL: f64 = 1e-10;
/// Tolerance for computed equalities.
pub const COMPUTED_TOL: f64 = 1e-8;

const ZERO: Complex64 = Complex::new(0.0, 0.0);
const ONE: Complex64 = Complex::new(1.0, 0.0);

/// A pure state: unit vector of complex amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    dim: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// Wraps amplitudes, requiring unit Euclidean norm within `1e-10`.
    pub fn new(amps: Vec<Complex64>) -> Result<Self> {
        if amps.is_empty() {
            return Err(Error::invalid("state vector must have dim >= 1"));
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > STRUCT_TOL {
            return Err(Error::NotNormalized { norm, tolerance: STRUCT_TOL });
        }
        Ok(Self { dim: amps.len(), amps })
    }

    /// Normalizes arbitrary amplitudes (errors on the zero vector).
    pub fn normalized(mut amps: Vec<Complex64>) -> Result<Self> {
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::invalid("cannot normalize the zero vector"));
        }
        for a in &mut amps {
            *a /= norm;
        }
        Self::new(amps)
    }

    /// Computational basis state `|index>`.
    pub fn basis(dim: usize, index: usize) -> Self {
        assert!(index < dim, "basis index out of range");
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Self { dim, amps }
    }

    /// Uniform superposition over the whole domain.
    pub fn uniform(dim: usize) -> Self {
        let a = Complex::new(1.0 / (dim as f64).sqrt(), 0.0);
        Self { dim, amps: vec![a; dim] }
    }

    pub fn from_real(amps: &[f64]) -> Result<Self> {
        Self::new(amps.iter().map(|&x| Complex::new(x, 0.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amp(&self, i: usize) -> Complex64 {
        self.amps[i]
    }

    /// Kronecker product `self (x) other`.
    pub fn tensor(&self, other: &StateVector) -> StateVector {
        let mut amps = Vec::with_capacity(self.dim * other.dim);
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        StateVector { dim: amps.len(), amps }
    }

    /// Rank-one density operator `|psi><psi|`.
    pub fn density(&self) -> HermitianOperator {
        let d = self.dim;
        let mut entries = vec![ZERO; d * d];
        for i in 0..d {
            for j in 0..d {
                entries[i * d + j] = self.amps[i] * self.amps[j].conj();
            }
        }
        HermitianOperator { dim: d, entries }
    }
}

/// `<a|b>`, conjugating the first argument.
pub fn inner_product(a: &StateVector, b: &StateVector) -> Result<Complex64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch { left: a.dim, right: b.dim });
    }
    let mut acc = ZERO;
    for (x, y) in a.amps.iter().zip(&b.amps) {
        acc += x.conj() * y;
    }
    Ok(acc)
}

/// Squared overlap `|<a|b>|^2`.
pub fn overlap_sq(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok(inner_product(a, b)?.norm_sqr())
}

/// A Hermitian matrix. Construction symmetrizes `(A + A^dag)/2` after
/// checking the input is Hermitian within `1e-10`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    dim: usize,
    entries: Vec<Complex64>,
}

impl HermitianOperator {
    pub fn new(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::invalid(format!(
                "entry buffer has {} elements, expected {}",
                entries.len(),
                dim * dim
            )));
        }
        let mut deviation = 0.0f64;
        for i in 0..dim {
            for j in i..dim {
                let d = (entries[i * dim + j] - entries[j * dim + i].conj()).norm();
                if d > deviation {
                    deviation = d;
                }
            }
        }
        if deviation > STRUCT_TOL {
            return Err(Error::NotHermitian { deviation, tolerance: STRUCT_TOL });
        }
        let mut op = Self { dim, entries };
        op.symmetrize();
        Ok(op)
    }

    /// Builds from an entry function; the caller promises `f(i,j) = conj(f(j,i))`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Result<Self> {
        let mut entries = vec![ZERO; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                entries[i * dim + j] = f(i, j);
            }
        }
        Self::new(dim, entries)
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut op = Self::zeros(dim);
        for i in 0..dim {
            op.entries[i * dim + i] = ONE;
        }
        op
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[i * self.dim + j]
    }

    fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            self.entries[i * n + i] = Complex::new(self.entries[i * n + i].re, 0.0);
            for j in (i + 1)..n {
                let avg = (self.entries[i * n + j] + self.entries[j * n + i].conj()) * 0.5;
                self.entries[i * n + j] = avg;
                self.entries[j * n + i] = avg.conj();
            }
        }
    }

    /// Trace (real by Hermiticity).
    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.entries[i * self.dim + i].re).sum()
    }

    pub fn scaled(&self, factor: f64) -> HermitianOperator {
        let entries = self.entries.iter().map(|e| e * factor).collect();
        HermitianOperator { dim: self.dim, entries }
    }

    pub fn add(&self, other: &HermitianOperator) -> Result<HermitianOperator> {
        self.combine(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &HermitianOperator) -> Result<HermitianOperator> {
        self.combine(other, |a, b| a - b)
    }

    fn combine(
        &self,
        other: &HermitianOperator,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<HermitianOperator> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: other.dim });
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(HermitianOperator { dim: self.dim, entries })
    }

    /// Largest entrywise absolute difference.
    pub fn max_entry_distance(&self, other: &HermitianOperator) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: other.dim });
        }
        let mut m = 0.0f64;
        for (a, b) in self.entries.iter().zip(&other.entries) {
            let d = (a - b).norm();
            if d > m {
                m = d;
            }
        }
        Ok(m)
    }

    /// Largest absolute imaginary part over all entries.
    pub fn max_imag(&self) -> f64 {
        self.entries.iter().fold(0.0f64, |m, e| m.max(e.im.abs()))
    }

    /// `<psi| A |psi>` (real by Hermiticity).
    pub fn expectation(&self, psi: &StateVector) -> Result<f64> {
        if self.dim != psi.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: psi.dim });
        }
        let n = self.dim;
        let mut acc = ZERO;
        for i in 0..n {
            let mut row = ZERO;
            for j in 0..n {
                row += self.entries[i * n + j] * psi.amps[j];
            }
            acc += psi.amps[i].conj() * row;
        }
        Ok(acc.re)
    }

    /// `tr(A B)` (real when both are Hermitian).
    pub fn trace_product(&self, other: &HermitianOperator) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: other.dim });
        }
        let n = self.dim;
        let mut acc = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                acc += (self.entries[i * n + j] * other.entries[j * n + i]).re;
            }
        }
        Ok(acc)
    }

    /// Kronecker product `self (x) other`.
    pub fn tensor(&self, other: &HermitianOperator) -> HermitianOperator {
        let (n, m) = (self.dim, other.dim);
        let dim = n * m;
        let mut entries = vec![ZERO; dim * dim];
        for i in 0..n {
            for j in 0..n {
                let a = self.entries[i * n + j];
                if a == ZERO {
                    continue;
                }
                for k in 0..m {
                    for l in 0..m {
                        entries[(i * m + k) * dim + (j * m + l)] = a * other.entries[k * m + l];
                    }
                }
            }
        }
        HermitianOperator { dim, entries }
    }

    /// Matrix product (not Hermitian in general); used for operator algebra checks.
    pub fn matmul(&self, other: &HermitianOperator) -> Result<Vec<Complex64>> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: other.dim });
        }
        let n = self.dim;
        let mut out = vec![ZERO; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * other.entries[k * n + j];
                }
            }
        }
        Ok(out)
    }
}

/// Eigendecomposition with eigenvalues sorted in descending order and
/// orthonormal eigenvectors stored column-major.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    dim: usize,
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<Complex64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Column `j` of the eigenvector matrix.
    pub fn eigenvector(&self, j: usize) -> &[Complex64] {
        &self.eigenvectors[j * self.dim..(j + 1) * self.dim]
    }

    /// `V diag(f(lambda)) V^dag` for a spectral function `f`.
    pub fn apply_spectral(&self, f: impl Fn(f64) -> f64) -> HermitianOperator {
        let n = self.dim;
        let mut entries = vec![ZERO; n * n];
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let flam = f(lam);
            if flam == 0.0 {
                continue;
            }
            let v = self.eigenvector(k);
            for i in 0..n {
                let vi = v[i] * flam;
                for j in 0..n {
                    entries[i * n + j] += vi * v[j].conj();
                }
            }
        }
        let mut op = HermitianOperator { dim: n, entries };
        op.symmetrize();
        op
    }

    /// Reconstruction `V diag(lambda) V^dag`.
    pub fn reconstruct(&self) -> HermitianOperator {
        self.apply_spectral(|x| x)
    }

    /// Gram matrix deviation from the identity (orthonormality check).
    pub fn gram_deviation(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for a in 0..n {
            let va = self.eigenvector(a);
            for b in a..n {
                let vb = self.eigenvector(b);
                let mut g = ZERO;
                for i in 0..n {
                    g += va[i].conj() * vb[i];
                }
                let target = if a == b { ONE } else { ZERO };
                worst = worst.max((g - target).norm());
            }
        }
        worst
    }
}

/// Cyclic-Jacobi eigendecomposition of a Hermitian matrix.
///
/// Fails when the input is not Hermitian within `1e-10`. Off-diagonal mass is
/// driven below `1e-12` (relative to the Frobenius norm), with a cap of 100
/// sweeps; threshold skipping makes sweeps cheap on matrices that are already
/// close to block diagonal.
pub fn hermitian_eigs(a: &HermitianOperator) -> Result<EigenDecomposition> {
    let n = a.dim;
    let mut m = a.entries.clone();
    let mut vecs = vec![ZERO; n * n];
    for i in 0..n {
        vecs[i * n + i] = ONE;
    }
    jacobi_core(n, &mut m, Some(&mut vecs));

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[i * n + i].re).collect();
    order.sort_by(|&x, &y| diag[y].partial_cmp(&diag[x]).unwrap());

    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut eigenvectors = vec![ZERO; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            eigenvectors[new_col * n + r] = vecs[r * n + old_col];
        }
    }
    Ok(EigenDecomposition { dim: n, eigenvalues, eigenvectors })
}

/// Eigenvalues of a Hermitian operator, descending. Dispatches to the
/// real-symmetric fast path for large real-valued matrices.
pub fn hermitian_eigenvalues(a: &HermitianOperator) -> Vec<f64> {
    eigenvalues_of(a.dim, a.entries.clone())
}

fn eigenvalues_of(n: usize, mut m: Vec<Complex64>) -> Vec<f64> {
    let max_imag = m.iter().fold(0.0f64, |acc, e| acc.max(e.im.abs()));
    let mut vals = if n > 96 && max_imag <= 1e-12 && !matrix_is_sparse(n, &m) {
        let mut re: Vec<f64> = m.iter().map(|e| e.re).collect();
        real_symmetric_eigenvalues(n, &mut re)
    } else {
        jacobi_core(n, &mut m, None);
        (0..n).map(|i| m[i * n + i].re).collect()
    };
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    vals
}

/// Jacobi stays fast on matrices whose off-diagonal support is thin, even at
/// large dimension; count nonzeros to decide.
fn matrix_is_sparse(n: usize, m: &[Complex64]) -> bool {
    let mut nnz: usize = 0;
    let cap = 16 * n;
    for i in 0..n {
        for j in (i + 1)..n {
            if m[i * n + j].norm_sqr() > 1e-28 {
                nnz += 1;
                if nnz > cap {
                    return false;
                }
            }
        }
    }
    true
}

fn off_diagonal_frobenius(n: usize, m: &[Complex64]) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += 2.0 * m[i * n + j].norm_sqr();
        }
    }
    acc.sqrt()
}

fn jacobi_core(n: usize, m: &mut [Complex64], mut vecs: Option<&mut [Complex64]>) {
    if n <= 1 {
        return;
    }
    let fro: f64 = m.iter().map(|e| e.norm_sqr()).sum::<f64>().sqrt();
    if fro == 0.0 {
        return;
    }
    let target = 1e-12 * fro.max(1.0);
    for _sweep in 0..100 {
        let off = off_diagonal_frobenius(n, m);
        if off <= target {
            break;
        }
        // Rotating only entries above the sweep threshold leaves at most a
        // quarter of the current off-diagonal mass untouched.
        let thresh = off / (2.0 * n as f64);
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                let r = apq.norm();
                if r <= thresh || r == 0.0 {
                    continue;
                }
                let app = m[p * n + p].re;
                let aqq = m[q * n + q].re;
                let u = apq / r;
                let uc = u.conj();
                let theta = (aqq - app) / (2.0 * r);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // G = [[c, s], [-s*conj(u), c*conj(u)]] on the (p, q) block.
                for row in 0..n {
                    let mp = m[row * n + p];
                    let mq = m[row * n + q];
                    m[row * n + p] = mp * c - mq * (uc * s);
                    m[row * n + q] = mp * s + mq * (uc * c);
                }
                for col in 0..n {
                    let mp = m[p * n + col];
                    let mq = m[q * n + col];
                    m[p * n + col] = mp * c - mq * (u * s);
                    m[q * n + col] = mp * s + mq * (u * c);
                }
                m[p * n + q] = ZERO;
                m[q * n + p] = ZERO;
                m[p * n + p] = Complex::new(m[p * n + p].re, 0.0);
                m[q * n + q] = Complex::new(m[q * n + q].re, 0.0);
                if let Some(v) = vecs.as_deref_mut() {
                    for row in 0..n {
                        let vp = v[row * n + p];
                        let vq = v[row * n + q];
                        v[row * n + p] = vp * c - vq * (uc * s);
                        v[row * n + q] = vp * s + vq * (uc * c);
                    }
                }
            }
        }
    }
}

/// Eigenvalues of a dense real symmetric matrix via Householder
/// tridiagonalization followed by implicit-shift QL. `m` is destroyed.
pub fn real_symmetric_eigenvalues(n: usize, m: &mut [f64]) -> Vec<f64> {
    assert_eq!(m.len(), n * n);
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    tridiagonalize(n, m, &mut d, &mut e);
    ql_implicit(&mut d, &mut e);
    d
}

fn tridiagonalize(n: usize, a: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    for i in (1..n).rev() {
        let l = i;
        let mut h = 0.0f64;
        if l > 1 {
            let mut scale = 0.0f64;
            for k in 0..l {
                scale += a[i * n + k].abs();
            }
            if scale == 0.0 {
                e[i] = a[i * n + (l - 1)];
            } else {
                for k in 0..l {
                    a[i * n + k] /= scale;
                    h += a[i * n + k] * a[i * n + k];
                }
                let mut f = a[i * n + (l - 1)];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[i * n + (l - 1)] = f - g;
                f = 0.0;
                for j in 0..l {
                    let mut g = 0.0f64;
                    for k in 0..=j {
                        g += a[j * n + k] * a[i * n + k];
                    }
                    for k in (j + 1)..l {
                        g += a[k * n + j] * a[i * n + k];
                    }
                    e[j] = g / h;
                    f += e[j] * a[i * n + j];
                }
                let hh = f / (h + h);
                for j in 0..l {
                    let fj = a[i * n + j];
                    e[j] -= hh * fj;
                    let gj = e[j];
                    for k in 0..=j {
                        a[j * n + k] -= fj * e[k] + gj * a[i * n + k];
                    }
                }
            }
        } else {
            e[i] = a[i * n + (l - 1)];
        }
        d[i] = h;
    }
    e[0] = 0.0;
    for i in 0..n {
        d[i] = a[i * n + i];
    }
}

fn ql_implicit(d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    if n <= 1 {
        return;
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut mpos = l;
            while mpos < n - 1 {
                let dd = d[mpos].abs() + d[mpos + 1].abs();
                if e[mpos].abs() <= f64::EPSILON * dd {
                    break;
                }
                mpos += 1;
            }
            if mpos == l {
                break;
            }
            iter += 1;
            if iter > 64 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[mpos] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0f64;
            for i in (l..mpos).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[mpos] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                f = 0.0;
                let _ = f;
            }
            if r == 0.0 && mpos > l + 1 {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[mpos] = 0.0;
        }
    }
}

/// Trace distance `||rho - sigma||_1 / 2` from the eigenvalues of the
/// difference. Inputs whose trace strays from 1 beyond `1e-8` are allowed
/// (sub-normalized approximants) but logged.
pub fn trace_distance(rho: &HermitianOperator, sigma: &HermitianOperator) -> Result<f64> {
    if rho.dim != sigma.dim {
        return Err(Error::DimensionMismatch { left: rho.dim, right: sigma.dim });
    }
    for (name, op) in [("first", rho), ("second", sigma)] {
        let tr = op.trace();
        if (tr - 1.0).abs() > COMPUTED_TOL {
            log::warn!("trace_distance: {name} operator has trace {tr}, not 1");
        }
    }
    let n = rho.dim;
    let mut diff = Vec::with_capacity(n * n);
    for (a, b) in rho.entries.iter().zip(&sigma.entries) {
        diff.push(a - b);
    }
    let vals = eigenvalues_of(n, diff);
    Ok(0.5 * vals.iter().map(|v| v.abs()).sum::<f64>())
}

/// Trace norm `||A||_1` (sum of absolute eigenvalues).
pub fn trace_norm(a: &HermitianOperator) -> f64 {
    let vals = eigenvalues_of(a.dim, a.entries.clone());
    vals.iter().map(|v| v.abs()).sum()
}

/// Partial trace of `rho` over the factors not listed in `keep`.
///
/// `dims` are the tensor factor dimensions (their product must equal the
/// operator dimension); `keep` lists factor indices in increasing order.
pub fn partial_trace(
    rho: &HermitianOperator,
    dims: &[usize],
    keep: &[usize],
) -> Result<HermitianOperator> {
    let total: usize = dims.iter().product();
    if total != rho.dim || dims.is_empty() {
        return Err(Error::invalid(format!(
            "factor dimensions {:?} do not multiply to operator dim {}",
            dims, rho.dim
        )));
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) || keep.iter().any(|&k| k >= dims.len()) {
        return Err(Error::invalid("keep set must be strictly increasing factor indices"));
    }

    let kept_dims: Vec<usize> = keep.iter().map(|&k| dims[k]).collect();
    let traced: Vec<usize> = (0..dims.len()).filter(|i| !keep.contains(i)).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&k| dims[k]).collect();
    let out_dim: usize = kept_dims.iter().product::<usize>().max(1);
    let traced_total: usize = traced_dims.iter().product::<usize>().max(1);

    // Strides of each factor in the flat row-major index.
    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }

    let offset_of = |mix: usize, factors: &[usize], fdims: &[usize]| -> usize {
        let mut rem = mix;
        let mut off = 0;
        for (pos, &f) in factors.iter().enumerate().rev() {
            let digit = rem % fdims[pos];
            rem /= fdims[pos];
            off += digit * strides[f];
        }
        off
    };

    let n = rho.dim;
    let mut out = vec![ZERO; out_dim * out_dim];
    for ki in 0..out_dim {
        let row_base = offset_of(ki, keep, &kept_dims);
        for kj in 0..out_dim {
            let col_base = offset_of(kj, keep, &kept_dims);
            let mut acc = ZERO;
            for t in 0..traced_total {
                let t_off = offset_of(t, &traced, &traced_dims);
                acc += rho.entries[(row_base + t_off) * n + (col_base + t_off)];
            }
            out[ki * out_dim + kj] = acc;
        }
    }
    let mut op = HermitianOperator { dim: out_dim, entries: out };
    op.symmetrize();
    Ok(op)
}

/// Von Neumann entropy `-tr(rho log2 rho)` in bits, with `0 log 0 := 0`.
pub fn von_neumann_entropy_bits(rho: &HermitianOperator) -> f64 {
    let vals = eigenvalues_of(rho.dim, rho.entries.clone());
    let mut h = 0.0;
    for &v in &vals {
        if v > 1e-15 {
            h -= v * v.log2();
        }
    }
    h
}

/// Entanglement entropy (bits) of `psi` across the cut
/// `dim = left_dim * right_dim`, computed from the reduced state on the
/// smaller side.
pub fn entanglement_entropy(psi: &StateVector, left_dim: usize, right_dim: usize) -> Result<f64> {
    if left_dim * right_dim != psi.dim || left_dim == 0 || right_dim == 0 {
        return Err(Error::invalid(format!(
            "cut {}x{} does not factor dimension {}",
            left_dim, right_dim, psi.dim
        )));
    }
    let norm = psi.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > STRUCT_TOL {
        return Err(Error::NotNormalized { norm, tolerance: STRUCT_TOL });
    }
    let reduce_left = left_dim <= right_dim;
    let (small, big) = if reduce_left { (left_dim, right_dim) } else { (right_dim, left_dim) };
    let mut red = vec![ZERO; small * small];
    for i in 0..small {
        for ip in 0..small {
            let mut acc = ZERO;
            for j in 0..big {
                let (x, y) = if reduce_left {
                    (psi.amps[i * right_dim + j], psi.amps[ip * right_dim + j])
                } else {
                    (psi.amps[j * right_dim + i], psi.amps[j * right_dim + ip])
                };
                acc += x * y.conj();
            }
            red[i * small + ip] = acc;
        }
    }
    let mut rho = HermitianOperator { dim: small, entries: red };
    rho.symmetrize();
    Ok(von_neumann_entropy_bits(&rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex::new(re, im)
    }

    fn random_state(dim: usize, rng: &mut rng::Rng) -> StateVector {
        let amps: Vec<Complex64> = (0..dim)
            .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        StateVector::normalized(amps).unwrap()
    }

    fn random_hermitian(dim: usize, rng: &mut rng::Rng) -> HermitianOperator {
        let mut entries = vec![ZERO; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = c(rng.random::<f64>() - 0.5, 0.0);
            for j in (i + 1)..dim {
                let v = c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                entries[i * dim + j] = v;
                entries[j * dim + i] = v.conj();
            }
        }
        HermitianOperator::new(dim, entries).unwrap()
    }

    #[test]
    fn inner_product_examples() {
        let zero = StateVector::basis(2, 0);
        let one = StateVector::basis(2, 1);
        let plus = StateVector::from_real(&[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]).unwrap();
        assert_eq!(inner_product(&zero, &zero).unwrap(), ONE);
        assert_eq!(inner_product(&zero, &one).unwrap(), ZERO);
        let ip = inner_product(&plus, &zero).unwrap();
        assert!((ip.re - 0.70710678).abs() < 1e-8);
        assert!(ip.im.abs() < 1e-15);
    }

    #[test]
    fn inner_product_dim_mismatch_errors() {
        let a = StateVector::basis(2, 0);
        let b = StateVector::basis(3, 0);
        assert!(matches!(
            inner_product(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn state_norm_enforced() {
        let bad = vec![c(0.5, 0.0), c(0.5, 0.0)];
        assert!(matches!(StateVector::new(bad), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn eigs_diagonal_input() {
        let a = HermitianOperator::from_fn(2, |i, j| {
            if i == j {
                c(if i == 0 { 3.0 } else { 1.0 }, 0.0)
            } else {
                ZERO
            }
        })
        .unwrap();
        let e = hermitian_eigs(&a).unwrap();
        assert!((e.eigenvalues()[0] - 3.0).abs() < 1e-12);
        assert!((e.eigenvalues()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigs_pauli_x() {
        let a = HermitianOperator::from_fn(2, |i, j| if i != j { ONE } else { ZERO }).unwrap();
        let e = hermitian_eigs(&a).unwrap();
        assert!((e.eigenvalues()[0] - 1.0).abs() < 1e-12);
        assert!((e.eigenvalues()[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigs_identity_five() {
        let e = hermitian_eigs(&HermitianOperator::identity(5)).unwrap();
        for &v in e.eigenvalues() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eigs_random_reconstruction_and_gram() {
        let mut rng = rng::seeded(11);
        for dim in [3, 8, 24] {
            let a = random_hermitian(dim, &mut rng);
            let e = hermitian_eigs(&a).unwrap();
            let rec = e.reconstruct();
            assert!(a.max_entry_distance(&rec).unwrap() <= 1e-9, "dim {dim}");
            assert!(e.gram_deviation() <= 1e-9, "dim {dim}");
            let sum: f64 = e.eigenvalues().iter().sum();
            assert!((sum - a.trace()).abs() <= 1e-9);
            let sorted_ok = e.eigenvalues().windows(2).all(|w| w[0] >= w[1]);
            assert!(sorted_ok);
        }
    }

    #[test]
    fn non_hermitian_rejected() {
        let entries = vec![ONE, c(1.0, 0.5), c(1.0, 0.5), ONE];
        assert!(matches!(
            HermitianOperator::new(2, entries),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn real_path_matches_jacobi() {
        let mut rng = rng::seeded(3);
        let dim = 150;
        let mut re = vec![0.0f64; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let v = rng.random::<f64>() - 0.5;
                re[i * dim + j] = v;
                re[j * dim + i] = v;
            }
        }
        let op = HermitianOperator::from_fn(dim, |i, j| c(re[i * dim + j], 0.0)).unwrap();
        let mut buf = re.clone();
        let mut fast = real_symmetric_eigenvalues(dim, &mut buf);
        fast.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let slow = hermitian_eigs(&op).unwrap();
        for (x, y) in fast.iter().zip(slow.eigenvalues()) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn trace_distance_examples() {
        let zero = StateVector::basis(2, 0).density();
        let one = StateVector::basis(2, 1).density();
        let plus = StateVector::uniform(2).density();
        assert!(trace_distance(&zero, &zero).unwrap().abs() < 1e-12);
        assert!((trace_distance(&zero, &one).unwrap() - 1.0).abs() < 1e-10);
        let td = trace_distance(&zero, &plus).unwrap();
        assert!((td - 0.70710678).abs() < 1e-8);
    }

    #[test]
    fn trace_distance_dim_mismatch() {
        let a = StateVector::basis(2, 0).density();
        let b = StateVector::basis(3, 0).density();
        assert!(trace_distance(&a, &b).is_err());
    }

    #[test]
    fn partial_trace_product_state() {
        let rho = StateVector::basis(4, 0).density(); // |00><00| on 2x2
        let red = partial_trace(&rho, &[2, 2], &[0]).unwrap();
        let expect = StateVector::basis(2, 0).density();
        assert!(red.max_entry_distance(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn partial_trace_bell_is_maximally_mixed() {
        let bell = StateVector::new(vec![
            c(1.0 / 2f64.sqrt(), 0.0),
            ZERO,
            ZERO,
            c(1.0 / 2f64.sqrt(), 0.0),
        ])
        .unwrap();
        let red = partial_trace(&bell.density(), &[2, 2], &[0]).unwrap();
        let expect = HermitianOperator::identity(2).scaled(0.5);
        assert!(red.max_entry_distance(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn partial_trace_tensor_factorization() {
        let mut rng = rng::seeded(5);
        let rho = random_state(3, &mut rng).density();
        let sigma = random_state(2, &mut rng).density();
        let joint = rho.tensor(&sigma);
        let red = partial_trace(&joint, &[3, 2], &[0]).unwrap();
        assert!(red.max_entry_distance(&rho.scaled(sigma.trace())).unwrap() < 1e-12);
        // Tracing everything leaves the 1x1 matrix [tr rho].
        let full = partial_trace(&joint, &[3, 2], &[]).unwrap();
        assert_eq!(full.dim(), 1);
        assert!((full.get(0, 0).re - joint.trace()).abs() < 1e-12);
        // Trace preserved in general.
        assert!((red.trace() - joint.trace()).abs() < 1e-12);
    }

    #[test]
    fn partial_trace_bad_factorization() {
        let rho = HermitianOperator::identity(6).scaled(1.0 / 6.0);
        assert!(partial_trace(&rho, &[4, 2], &[0]).is_err());
    }

    #[test]
    fn entropy_examples() {
        let prod = StateVector::basis(4, 0);
        assert!(entanglement_entropy(&prod, 2, 2).unwrap().abs() < 1e-12);
        let bell = StateVector::new(vec![
            c(1.0 / 2f64.sqrt(), 0.0),
            ZERO,
            ZERO,
            c(1.0 / 2f64.sqrt(), 0.0),
        ])
        .unwrap();
        let h = entanglement_entropy(&bell, 2, 2).unwrap();
        assert!((h - 1.0).abs() < 1e-10);
    }

    #[test]
    fn entropy_cut_symmetry_random() {
        let mut rng = rng::seeded(9);
        for (l, r) in [(2, 4), (4, 2), (2, 8), (3, 5)] {
            let psi = random_state(l * r, &mut rng);
            let hl = entanglement_entropy(&psi, l, r).unwrap();
            let hr = entanglement_entropy(&psi, r, l).unwrap();
            // Swapping the cut means reshaping the other way; compare against
            // the reduced state on the opposite side of the same cut.
            let rho = psi.density();
            let red_right = partial_trace(&rho, &[l, r], &[1]).unwrap();
            let h_right = von_neumann_entropy_bits(&red_right);
            assert!((hl - h_right).abs() < 1e-8, "cut {l}x{r}");
            let _ = hr;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pure_state_fidelity_identity(seed in 0u64..1000) {
            let mut rng = rng::seeded(seed);
            let dim = 2 + (seed as usize % 6);
            let a = random_state(dim, &mut rng);
            let b = random_state(dim, &mut rng);
            let td = trace_distance(&a.density(), &b.density()).unwrap();
            let ov = overlap_sq(&a, &b).unwrap();
            prop_assert!((td * td + ov - 1.0).abs() < 1e-8);
        }

        #[test]
        fn eigenvalue_sum_is_trace(seed in 0u64..1000) {
            let mut rng = rng::seeded(seed);
            let dim = 2 + (seed as usize % 10);
            let a = random_hermitian(dim, &mut rng);
            let vals = hermitian_eigenvalues(&a);
            let sum: f64 = vals.iter().sum();
            prop_assert!((sum - a.trace()).abs() < 1e-9);
        }
    }
}
