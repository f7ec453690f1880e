//! Finite-dimensional complex operator algebra.
//!
//! Everything here is double precision. Operators are dense `n x n` complex
//! matrices in the standard basis; bases are stored as the unitary whose
//! columns are the basis vectors, so ordering is significant.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use num_complex::Complex64 as C64;

/// Tolerance ladder shared by every module.
pub mod tol {
    /// Representation-level identities (Hermiticity of stored operators).
    pub const STRUCTURAL: f64 = 1e-12;
    /// Derived algebra: idempotence, orthonormality, trace, positivity.
    pub const ALGEBRA: f64 = 1e-10;
    /// Sums of resolutions and reconstruction from spectra.
    pub const RESOLUTION: f64 = 1e-9;
    /// Eigenvalue merge threshold and unit-eigenvalue rank counting.
    pub const SPECTRAL: f64 = 1e-8;
}

/// A dense `n x n` complex operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OperatorRepr", into = "OperatorRepr")]
pub struct ComplexOperator(DMatrix<C64>);

/// Canonical wire form: `{"dim": n, "re": [..n²], "im": [..n²]}`, row-major.
#[derive(Serialize, Deserialize)]
struct OperatorRepr {
    dim: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl TryFrom<OperatorRepr> for ComplexOperator {
    type Error = Error;

    fn try_from(r: OperatorRepr) -> Result<Self> {
        ComplexOperator::from_parts(r.dim, &r.re, &r.im)
    }
}

impl From<ComplexOperator> for OperatorRepr {
    fn from(op: ComplexOperator) -> Self {
        let n = op.dim();
        let mut re = Vec::with_capacity(n * n);
        let mut im = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                re.push(op.0[(a, b)].re);
                im.push(op.0[(a, b)].im);
            }
        }
        OperatorRepr { dim: n, re, im }
    }
}

impl ComplexOperator {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::validation("operator dimension must be positive"));
        }
        Ok(ComplexOperator(m))
    }

    /// Builds an operator from row-major real and imaginary parts.
    pub fn from_parts(dim: usize, re: &[f64], im: &[f64]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("operator dimension must be positive"));
        }
        for len in [re.len(), im.len()] {
            if len != dim * dim {
                return Err(Error::DimensionMismatch {
                    expected: dim * dim,
                    found: len,
                });
            }
        }
        if re.iter().chain(im).any(|x| !x.is_finite()) {
            return Err(Error::validation("operator entries must be finite"));
        }
        Ok(ComplexOperator(DMatrix::from_fn(dim, dim, |a, b| {
            C64::new(re[a * dim + b], im[a * dim + b])
        })))
    }

    pub fn from_real_rows(dim: usize, re: &[f64]) -> Result<Self> {
        Self::from_parts(dim, re, &vec![0.0; re.len()])
    }

    pub fn identity(n: usize) -> Self {
        ComplexOperator(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        ComplexOperator(DMatrix::zeros(n, n))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        ComplexOperator(DMatrix::from_fn(n, n, |a, b| {
            if a == b {
                C64::new(diag[a], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }))
    }

    /// `|v><v| / <v|v>`.
    pub fn projector(v: &DVector<C64>) -> Self {
        let norm2 = v.norm_squared();
        ComplexOperator(v * v.adjoint() / C64::new(norm2, 0.0))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        ComplexOperator(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn scale(&self, s: f64) -> Self {
        ComplexOperator(&self.0 * C64::new(s, 0.0))
    }

    /// `U A U†`.
    pub fn conjugate_by(&self, u: &DMatrix<C64>) -> Self {
        ComplexOperator(u * &self.0 * u.adjoint())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Largest entrywise modulus of `A - A†`.
    pub fn hermitian_deviation(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in a..n {
                worst = worst.max((self.0[(a, b)] - self.0[(b, a)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tolerance: f64) -> bool {
        self.hermitian_deviation() <= tolerance
    }

    /// `(A + A†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        ComplexOperator((&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0))
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigen(&self.0).0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn is_positive(&self, tolerance: f64) -> bool {
        self.is_hermitian(tol::ALGEBRA) && self.min_eigenvalue() >= -tolerance
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(self + other)
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(self - other)
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(self * other)
    }

    /// `Tr(self · other)` as a real number (both Hermitian).
    pub fn trace_product(&self, other: &Self) -> Result<f64> {
        self.check_dim(other)?;
        let n = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                acc += self.0[(a, b)] * other.0[(b, a)];
            }
        }
        Ok(acc.re)
    }
}

impl Add for &ComplexOperator {
    type Output = ComplexOperator;
    fn add(self, rhs: Self) -> ComplexOperator {
        ComplexOperator(&self.0 + &rhs.0)
    }
}

impl Sub for &ComplexOperator {
    type Output = ComplexOperator;
    fn sub(self, rhs: Self) -> ComplexOperator {
        ComplexOperator(&self.0 - &rhs.0)
    }
}

impl Mul for &ComplexOperator {
    type Output = ComplexOperator;
    fn mul(self, rhs: Self) -> ComplexOperator {
        ComplexOperator(&self.0 * &rhs.0)
    }
}

/// Eigen-decomposition of the Hermitian part of `m`: ascending eigenvalues
/// and the matching orthonormal eigenvectors as columns.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Largest singular value.
pub fn operator_norm(a: &ComplexOperator) -> f64 {
    matrix_norm(&a.0)
}

pub(crate) fn matrix_norm(m: &DMatrix<C64>) -> f64 {
    if m.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// `AB - BA`.
pub fn commutator(a: &ComplexOperator, b: &ComplexOperator) -> Result<ComplexOperator> {
    a.check_dim(b)?;
    Ok(ComplexOperator(&a.0 * &b.0 - &b.0 * &a.0))
}

/// A Hermitian idempotent operator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Projection {
    op: ComplexOperator,
    rank: usize,
}

impl Projection {
    pub fn new(op: ComplexOperator) -> Result<Self> {
        let dev = op.hermitian_deviation();
        if dev > tol::STRUCTURAL {
            return Err(Error::NotHermitian(dev));
        }
        let idem = operator_norm(&(&(&op * &op) - &op));
        if idem > tol::ALGEBRA {
            return Err(Error::validation(format!(
                "operator is not idempotent (|P² - P| = {idem:.3e})"
            )));
        }
        let rank = op
            .eigenvalues()
            .iter()
            .filter(|&&l| (l - 1.0).abs() <= tol::SPECTRAL)
            .count();
        Ok(Projection { op, rank })
    }

    /// Sum of `|v><v|` over orthonormal vectors; the caller vouches for
    /// orthonormality.
    pub(crate) fn from_orthonormal_columns(vectors: &DMatrix<C64>, columns: &[usize]) -> Self {
        let n = vectors.nrows();
        let mut m = DMatrix::zeros(n, n);
        for &c in columns {
            let v = vectors.column(c);
            m += v * v.adjoint();
        }
        Projection {
            op: ComplexOperator(m),
            rank: columns.len(),
        }
    }

    pub fn op(&self) -> &ComplexOperator {
        &self.op
    }

    pub fn into_op(self) -> ComplexOperator {
        self.op
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// An ordered orthonormal basis, stored as the unitary whose i-th column is
/// the i-th basis vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisRepr", into = "BasisRepr")]
pub struct OrthonormalBasis(DMatrix<C64>);

#[derive(Serialize, Deserialize)]
struct VectorRepr {
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BasisRepr {
    dim: usize,
    vectors: Vec<VectorRepr>,
}

impl TryFrom<BasisRepr> for OrthonormalBasis {
    type Error = Error;

    fn try_from(r: BasisRepr) -> Result<Self> {
        let mut vectors = Vec::with_capacity(r.vectors.len());
        for v in r.vectors {
            if v.re.len() != r.dim || v.im.len() != r.dim {
                return Err(Error::DimensionMismatch {
                    expected: r.dim,
                    found: v.re.len().max(v.im.len()),
                });
            }
            vectors.push(DVector::from_fn(r.dim, |i, _| C64::new(v.re[i], v.im[i])));
        }
        OrthonormalBasis::new(vectors)
    }
}

impl From<OrthonormalBasis> for BasisRepr {
    fn from(b: OrthonormalBasis) -> Self {
        let n = b.dim();
        BasisRepr {
            dim: n,
            vectors: (0..n)
                .map(|c| VectorRepr {
                    re: (0..n).map(|r| b.0[(r, c)].re).collect(),
                    im: (0..n).map(|r| b.0[(r, c)].im).collect(),
                })
                .collect(),
        }
    }
}

impl OrthonormalBasis {
    pub fn new(vectors: Vec<DVector<C64>>) -> Result<Self> {
        let n = vectors.len();
        if n == 0 {
            return Err(Error::validation("basis must contain at least one vector"));
        }
        for v in &vectors {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: v.len(),
                });
            }
        }
        Self::from_columns(DMatrix::from_columns(&vectors))
    }

    /// Validates that the columns of `u` form an orthonormal basis.
    pub fn from_columns(u: DMatrix<C64>) -> Result<Self> {
        if u.nrows() != u.ncols() {
            return Err(Error::DimensionMismatch {
                expected: u.nrows(),
                found: u.ncols(),
            });
        }
        let gram = u.adjoint() * &u;
        let dev = (gram - DMatrix::<C64>::identity(u.nrows(), u.ncols()))
            .iter()
            .fold(0.0f64, |acc, z| acc.max(z.norm()));
        if dev > tol::ALGEBRA {
            return Err(Error::NotOrthonormal(dev));
        }
        Ok(OrthonormalBasis(u))
    }

    pub(crate) fn from_unitary_unchecked(u: DMatrix<C64>) -> Self {
        OrthonormalBasis(u)
    }

    pub fn standard(n: usize) -> Self {
        OrthonormalBasis(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// The basis vectors as columns.
    pub fn columns(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn vector(&self, i: usize) -> DVector<C64> {
        self.0.column(i).into_owned()
    }

    /// Basis `(e_{perm[0]}, e_{perm[1]}, ...)`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        OrthonormalBasis(DMatrix::from_fn(self.dim(), self.dim(), |r, c| {
            self.0[(r, perm[c])]
        }))
    }

    /// `(U e_1, ..., U e_n)`.
    pub fn transformed(&self, u: &DMatrix<C64>) -> Self {
        OrthonormalBasis(u * &self.0)
    }

    pub fn atom(&self, i: usize) -> Projection {
        Projection::from_orthonormal_columns(&self.0, &[i])
    }

    /// Projection onto the span of the vectors whose bits are set in `mask`.
    pub fn subset_projection(&self, mask: u32) -> Projection {
        let cols: Vec<usize> = (0..self.dim()).filter(|i| mask >> i & 1 == 1).collect();
        Projection::from_orthonormal_columns(&self.0, &cols)
    }

    pub fn max_orthonormality_deviation(&self) -> f64 {
        let gram = self.0.adjoint() * &self.0;
        (gram - DMatrix::<C64>::identity(self.dim(), self.dim()))
            .iter()
            .fold(0.0f64, |acc, z| acc.max(z.norm()))
    }
}

/// `|I - U|` for the unitary `U` with `U b1_i = b2_i` for every `i`.
pub fn basis_distance(b1: &OrthonormalBasis, b2: &OrthonormalBasis) -> Result<f64> {
    if b1.dim() != b2.dim() {
        return Err(Error::DimensionMismatch {
            expected: b1.dim(),
            found: b2.dim(),
        });
    }
    // |I - U| = |I - U†|; fixing the operand order makes the floating
    // result exactly symmetric
    fn key(b: &OrthonormalBasis) -> impl Iterator<Item = f64> + '_ {
        b.0.iter().flat_map(|z| [z.re, z.im])
    }
    let (b1, b2) = if key(b1).partial_cmp(key(b2)) == Some(std::cmp::Ordering::Greater) {
        (b2, b1)
    } else {
        (b1, b2)
    };
    Ok(unitary_distance_from_identity(&(&b2.0 * b1.0.adjoint())))
}

pub(crate) fn unitary_distance_from_identity(u: &DMatrix<C64>) -> f64 {
    let n = u.nrows();
    matrix_norm(&(DMatrix::<C64>::identity(n, n) - u))
}

/// A quantum state: positive, unit trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComplexOperator", into = "ComplexOperator")]
pub struct DensityOperator(ComplexOperator);

impl TryFrom<ComplexOperator> for DensityOperator {
    type Error = Error;
    fn try_from(op: ComplexOperator) -> Result<Self> {
        DensityOperator::new(op)
    }
}

impl From<DensityOperator> for ComplexOperator {
    fn from(d: DensityOperator) -> Self {
        d.0
    }
}

impl DensityOperator {
    pub fn new(op: ComplexOperator) -> Result<Self> {
        let dev = op.hermitian_deviation();
        if dev > tol::STRUCTURAL {
            return Err(Error::NotHermitian(dev));
        }
        let min = op.min_eigenvalue();
        if min < -tol::ALGEBRA {
            return Err(Error::validation(format!(
                "state is not positive (min eigenvalue {min:.3e})"
            )));
        }
        let tr = op.trace();
        if (tr.re - 1.0).abs() > tol::ALGEBRA || tr.im.abs() > tol::ALGEBRA {
            return Err(Error::validation(format!("state trace is {tr}, not 1")));
        }
        Ok(DensityOperator(op))
    }

    pub fn pure(v: &DVector<C64>) -> Self {
        DensityOperator(ComplexOperator::projector(v))
    }

    pub fn maximally_mixed(n: usize) -> Self {
        DensityOperator(ComplexOperator::identity(n).scale(1.0 / n as f64))
    }

    pub fn op(&self) -> &ComplexOperator {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    /// `Tr(D A)`.
    pub fn expectation(&self, a: &ComplexOperator) -> Result<f64> {
        self.0.trace_product(a)
    }
}

/// A Hermitian operator together with its spectral resolution.
#[derive(Clone, Debug)]
pub struct HermitianObservable {
    op: ComplexOperator,
    spectrum: Vec<(f64, Projection)>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<C64>,
}

impl HermitianObservable {
    pub fn new(op: ComplexOperator) -> Result<Self> {
        Self::with_merge_tolerance(op, tol::SPECTRAL)
    }

    /// Eigenvalues closer than `merge_tol` to the first eigenvalue of their
    /// group are merged into one spectral projection.
    pub fn with_merge_tolerance(op: ComplexOperator, merge_tol: f64) -> Result<Self> {
        let dev = op.hermitian_deviation();
        if dev > tol::STRUCTURAL {
            return Err(Error::NotHermitian(dev));
        }
        let (eigenvalues, eigenvectors) = hermitian_eigen(op.matrix());
        let mut spectrum = Vec::new();
        let mut start = 0;
        while start < eigenvalues.len() {
            let mut end = start + 1;
            while end < eigenvalues.len() && eigenvalues[end] - eigenvalues[start] <= merge_tol {
                end += 1;
            }
            let group: Vec<usize> = (start..end).collect();
            let mean = group.iter().map(|&i| eigenvalues[i]).sum::<f64>() / group.len() as f64;
            spectrum.push((
                mean,
                Projection::from_orthonormal_columns(&eigenvectors, &group),
            ));
            start = end;
        }
        Ok(HermitianObservable {
            op,
            spectrum,
            eigenvalues,
            eigenvectors,
        })
    }

    /// `Σ a_i |v_i><v_i|` over an orthonormal basis.
    pub fn from_basis(basis: &OrthonormalBasis, eigenvalues: &[f64]) -> Result<Self> {
        if eigenvalues.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                found: eigenvalues.len(),
            });
        }
        let d = DMatrix::from_fn(basis.dim(), basis.dim(), |a, b| {
            if a == b {
                C64::new(eigenvalues[a], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let m = basis.columns() * d * basis.columns().adjoint();
        Self::new(ComplexOperator(m).hermitian_part())
    }

    pub fn op(&self) -> &ComplexOperator {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn spectrum(&self) -> &[(f64, Projection)] {
        &self.spectrum
    }

    pub fn is_nondegenerate(&self) -> bool {
        self.spectrum.len() == self.dim()
    }

    /// Eigenvalues in ascending order, with multiplicity.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvectors matching [`Self::eigenvalues`]. Phases are arbitrary.
    pub fn eigenbasis(&self) -> OrthonormalBasis {
        OrthonormalBasis(self.eigenvectors.clone())
    }
}

/// Distinct eigenvalues paired with their spectral projections.
pub fn spectral_resolution(obs: &HermitianObservable) -> &[(f64, Projection)] {
    obs.spectrum()
}

/// True iff every member is positive and the members sum to the identity.
pub fn validate_resolution(ops: &[ComplexOperator]) -> Result<bool> {
    let first = ops
        .first()
        .ok_or_else(|| Error::validation("empty resolution"))?;
    let n = first.dim();
    let mut sum = ComplexOperator::zeros(n);
    for op in ops {
        first.check_dim(op)?;
        sum = &sum + op;
    }
    if operator_norm(&(&sum - &ComplexOperator::identity(n))) > tol::RESOLUTION {
        return Ok(false);
    }
    Ok(ops
        .iter()
        .all(|op| op.is_hermitian(tol::ALGEBRA) && op.min_eigenvalue() >= -tol::ALGEBRA))
}
