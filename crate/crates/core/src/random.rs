//! Seeded random matrices: Ginibre, Haar unitaries, Hermitian generators,
//! random states.
//!
//! Every stochastic component draws from a [`ChaCha8Rng`] addressed by a
//! `(seed, stream)` pair so independent consumers never share a sequence.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::opcore::{hermitian_eigen, ComplexOperator, DensityOperator, C64};

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard complex normal: `E|z|² = 1`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn ginibre<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |_, _| complex_normal(rng))
}

/// Haar-distributed unitary: QR of a Ginibre matrix with the phases of
/// `diag(R)` moved into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<C64> {
    let qr = ginibre(n, rng).qr();
    let (mut q, r) = qr.unpack();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// `(G + G†) / 2` for a Ginibre `G`.
pub fn random_hermitian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<C64> {
    let g = ginibre(n, rng);
    (&g + g.adjoint()) * C64::new(0.5, 0.0)
}

/// `exp(i t H)` for Hermitian `H`, via its eigen-decomposition.
pub fn unitary_exp(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let (values, vectors) = hermitian_eigen(h);
    let n = values.len();
    let phases = DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            C64::from_polar(1.0, t * values[a])
        } else {
            C64::new(0.0, 0.0)
        }
    });
    &vectors * phases * vectors.adjoint()
}

/// Mixed state `G G† / Tr(G G†)`.
pub fn random_density<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DensityOperator {
    let g = ginibre(n, rng);
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    let op = ComplexOperator::new(m / C64::new(tr, 0.0))
        .expect("square")
        .hermitian_part();
    DensityOperator::new(op).expect("Ginibre state is a density operator")
}

pub fn random_pure_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DensityOperator {
    let v = DVector::from_fn(n, |_, _| complex_normal(rng));
    DensityOperator::pure(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opcore::{operator_norm, tol, OrthonormalBasis};

    #[test]
    fn haar_is_unitary_and_reproducible() {
        let u = haar_unitary(4, &mut stream_rng(7, 0));
        assert!(OrthonormalBasis::from_columns(u.clone()).is_ok());
        let v = haar_unitary(4, &mut stream_rng(7, 0));
        assert_eq!(u, v);
        let w = haar_unitary(4, &mut stream_rng(7, 1));
        assert_ne!(u, w);
    }

    #[test]
    fn exp_of_hermitian_is_unitary() {
        let mut rng = stream_rng(3, 0);
        let h = random_hermitian(3, &mut rng);
        let u = unitary_exp(&h, 0.7);
        let dev = operator_norm(
            &ComplexOperator::new(u.adjoint() * &u - DMatrix::<C64>::identity(3, 3)).unwrap(),
        );
        assert!(dev < tol::ALGEBRA);
    }

    #[test]
    fn random_density_valid() {
        let mut rng = stream_rng(11, 0);
        for n in 1..6 {
            let d = random_density(n, &mut rng);
            assert!(d.op().min_eigenvalue() > -1e-12);
            let p = random_pure_state(n, &mut rng);
            assert!((p.op().trace().re - 1.0).abs() < 1e-12);
        }
    }
}
