//! Exact complex-rational matrices and positivity certificates.

use std::str::FromStr;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opcore::{ComplexOperator, C64};

pub type QComplex = Complex<BigRational>;

pub fn q(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn qc(re: BigRational, im: BigRational) -> QComplex {
    Complex::new(re, im)
}

fn qzero() -> QComplex {
    Complex::new(BigRational::zero(), BigRational::zero())
}

/// A square matrix of complex rationals, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RationalRepr", into = "RationalRepr")]
pub struct RationalOperator {
    n: usize,
    entries: Vec<QComplex>,
}

impl RationalOperator {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> QComplex) -> Self {
        let mut entries = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                entries.push(f(a, b));
            }
        }
        RationalOperator { n, entries }
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_fn(n, |_, _| qzero())
    }

    pub fn identity(n: usize) -> Self {
        Self::scalar(n, &BigRational::one())
    }

    /// `s · I`.
    pub fn scalar(n: usize, s: &BigRational) -> Self {
        Self::from_fn(n, |a, b| {
            if a == b {
                qc(s.clone(), BigRational::zero())
            } else {
                qzero()
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, a: usize, b: usize) -> &QComplex {
        &self.entries[a * self.n + b]
    }

    pub fn entries(&self) -> &[QComplex] {
        &self.entries
    }

    /// Exact image of a floating operator, if every component is a dyadic
    /// rational with denominator at most `den_cap`.
    pub fn from_f64_exact(op: &ComplexOperator, den_cap: &BigInt) -> Option<Self> {
        let n = op.dim();
        let mut entries = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                let z = op.entry(a, b);
                let re = BigRational::from_float(z.re)?;
                let im = BigRational::from_float(z.im)?;
                if re.denom() > den_cap || im.denom() > den_cap {
                    return None;
                }
                entries.push(qc(re, im));
            }
        }
        Some(RationalOperator { n, entries })
    }

    /// Rounds every real and imaginary part to the nearest multiple of
    /// `1/den`.
    pub fn round_matrix(m: &DMatrix<C64>, den: u64) -> Self {
        let d = BigInt::from(den);
        let round = |x: f64| {
            let scaled = (x * den as f64).round();
            BigRational::new(BigInt::from_str(&format!("{scaled:.0}")).expect("integer"), d.clone())
        };
        Self::from_fn(m.nrows(), |a, b| qc(round(m[(a, b)].re), round(m[(a, b)].im)))
    }

    pub fn to_float(&self) -> ComplexOperator {
        let n = self.n;
        let m = DMatrix::from_fn(n, n, |a, b| {
            let z = self.entry(a, b);
            C64::new(rat_to_f64(&z.re), rat_to_f64(&z.im))
        });
        ComplexOperator::new(m).expect("square")
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(RationalOperator {
            n: self.n,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(x, y)| x + y)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(RationalOperator {
            n: self.n,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(x, y)| x - y)
                .collect(),
        })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let n = self.n;
        Ok(Self::from_fn(n, |a, b| {
            (0..n).fold(qzero(), |acc, k| acc + self.entry(a, k) * other.entry(k, b))
        }))
    }

    pub fn scale(&self, s: &BigRational) -> Self {
        RationalOperator {
            n: self.n,
            entries: self.entries.iter().map(|z| z.scale(s.clone())).collect(),
        }
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |a, b| self.entry(b, a).conj())
    }

    pub fn is_hermitian(&self) -> bool {
        (0..self.n).all(|a| (a..self.n).all(|b| *self.entry(a, b) == self.entry(b, a).conj()))
    }

    pub fn all_entries_nonzero(&self) -> bool {
        self.entries.iter().all(|z| !z.is_zero())
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity(self.n)
    }

    /// Largest denominator among all real and imaginary parts.
    pub fn max_denominator(&self) -> BigInt {
        self.entries
            .iter()
            .flat_map(|z| [z.re.denom().clone(), z.im.denom().clone()])
            .max()
            .unwrap_or_else(BigInt::one)
    }

    /// Determinants of the leading `k x k` submatrices, `k = 1..=n`.
    /// For a Hermitian matrix these are real; the real parts are returned.
    pub fn leading_principal_minors(&self) -> Vec<BigRational> {
        (1..=self.n).map(|k| self.leading_determinant(k).re).collect()
    }

    fn leading_determinant(&self, k: usize) -> QComplex {
        let mut w: Vec<Vec<QComplex>> = (0..k)
            .map(|a| (0..k).map(|b| self.entry(a, b).clone()).collect())
            .collect();
        let mut det = qc(BigRational::one(), BigRational::zero());
        for col in 0..k {
            let Some(pivot) = (col..k).find(|&r| !w[r][col].is_zero()) else {
                return qzero();
            };
            if pivot != col {
                w.swap(pivot, col);
                det = -det;
            }
            let p = w[col][col].clone();
            det *= &p;
            for r in col + 1..k {
                if w[r][col].is_zero() {
                    continue;
                }
                let f = &w[r][col] / &p;
                for c in col..k {
                    let delta = &f * &w[col][c];
                    w[r][c] = &w[r][c] - delta;
                }
            }
        }
        det
    }

    /// Exact LDL† elimination. Returns the diagonal pivots when the matrix
    /// is Hermitian positive semidefinite, `None` otherwise.
    pub fn psd_certificate(&self) -> Option<PsdCertificate> {
        if !self.is_hermitian() {
            return None;
        }
        let n = self.n;
        let mut w: Vec<Vec<QComplex>> = (0..n)
            .map(|a| (0..n).map(|b| self.entry(a, b).clone()).collect())
            .collect();
        let mut pivots = Vec::with_capacity(n);
        for k in 0..n {
            let d = w[k][k].re.clone();
            if d.is_negative() {
                return None;
            }
            if d.is_zero() {
                // a zero pivot needs a zero column below it
                if (k + 1..n).any(|i| !w[i][k].is_zero()) {
                    return None;
                }
                pivots.push(d);
                continue;
            }
            for i in k + 1..n {
                if w[i][k].is_zero() {
                    continue;
                }
                let f = w[i][k].unscale(d.clone());
                for j in k + 1..n {
                    let delta = &f * &w[k][j];
                    w[i][j] = &w[i][j] - delta;
                }
            }
            pivots.push(d);
        }
        Some(PsdCertificate { pivots })
    }
}

/// Nonnegative LDL† pivots witnessing positive semidefiniteness.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PsdCertificate {
    pub pivots: Vec<BigRational>,
}

impl PsdCertificate {
    pub fn is_definite(&self) -> bool {
        self.pivots.iter().all(|p| p.is_positive())
    }
}

pub fn rat_to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Largest rational with denominator `2^bits` that does not exceed `x`.
pub fn dyadic_floor(x: f64, bits: u32) -> BigRational {
    let den = BigInt::one() << bits;
    let scaled = (x * 2f64.powi(bits as i32)).floor();
    BigRational::new(BigInt::from_str(&format!("{scaled:.0}")).expect("integer"), den)
}

#[derive(Serialize, Deserialize)]
struct RatRepr {
    num: serde_json::Number,
    den: serde_json::Number,
}

#[derive(Serialize, Deserialize)]
struct EntryRepr {
    re: RatRepr,
    im: RatRepr,
}

#[derive(Serialize, Deserialize)]
struct RationalRepr {
    dim: usize,
    entries: Vec<EntryRepr>,
}

fn rat_to_repr(x: &BigRational) -> RatRepr {
    let num = serde_json::Number::from_str(&x.numer().to_string()).expect("integer literal");
    let den = serde_json::Number::from_str(&x.denom().to_string()).expect("integer literal");
    RatRepr { num, den }
}

fn repr_to_rat(r: &RatRepr) -> Result<BigRational> {
    let parse = |n: &serde_json::Number| {
        BigInt::from_str(&n.to_string())
            .map_err(|_| Error::validation(format!("{n} is not an integer")))
    };
    let den = parse(&r.den)?;
    if den.is_zero() {
        return Err(Error::validation("zero denominator"));
    }
    Ok(BigRational::new(parse(&r.num)?, den))
}

impl From<RationalOperator> for RationalRepr {
    fn from(op: RationalOperator) -> Self {
        RationalRepr {
            dim: op.n,
            entries: op
                .entries
                .iter()
                .map(|z| EntryRepr {
                    re: rat_to_repr(&z.re),
                    im: rat_to_repr(&z.im),
                })
                .collect(),
        }
    }
}

impl TryFrom<RationalRepr> for RationalOperator {
    type Error = Error;

    fn try_from(r: RationalRepr) -> Result<Self> {
        if r.entries.len() != r.dim * r.dim {
            return Err(Error::DimensionMismatch {
                expected: r.dim * r.dim,
                found: r.entries.len(),
            });
        }
        let entries = r
            .entries
            .iter()
            .map(|e| Ok(qc(repr_to_rat(&e.re)?, repr_to_rat(&e.im)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(RationalOperator { n: r.dim, entries })
    }
}
