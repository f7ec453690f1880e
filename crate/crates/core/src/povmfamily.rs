//! Exact-arithmetic construction of a dense, pairwise disjoint family of
//! finite positive-operator resolutions of the identity.
//!
//! Pipeline: [`rationalize_po`] moves a floating positive operator to a
//! nearby positive operator with exact complex-rational entries, none of
//! them zero. [`snap_resolution`] does this for every member of a target
//! resolution and renormalizes so the members sum to `I` exactly.
//! [`phase_tag`] conjugates a snapped resolution by
//! `U_m = diag(e^{iθ_m}, 1, ..., 1)` with `sin θ_m = (π/4)^m`; distinct `m`
//! can never produce a shared member, which is what the
//! [`ResolutionRegistry`] relies on.
//!
//! Matrix entries are taken relative to the standard basis.

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_4;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::born;
use crate::error::{Error, Result};
use crate::opcore::{
    hermitian_eigen, matrix_norm, operator_norm, tol, validate_resolution, ComplexOperator,
    DensityOperator, C64,
};
use crate::rational::{dyadic_floor, q, rat_to_f64, QComplex, RationalOperator};

pub const DEFAULT_DENOMINATOR_CAP: u64 = 1 << 32;

/// Members of distinct registrations closer than this are a collision.
pub const COLLISION_DISTANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct ExactConfig {
    /// Largest rounding denominator allowed when rationalizing.
    pub denominator_cap: u64,
}

impl Default for ExactConfig {
    fn default() -> Self {
        ExactConfig {
            denominator_cap: DEFAULT_DENOMINATOR_CAP,
        }
    }
}

/// `I + J / (2n)` with `J` the all-ones matrix: positive definite
/// (eigenvalues 1 and 3/2) and every entry nonzero.
pub fn anchor_operator(n: usize) -> RationalOperator {
    let off = q(1, 2 * n as i64);
    RationalOperator::from_fn(n, |a, b| {
        let re = if a == b {
            BigRational::one() + off.clone()
        } else {
            off.clone()
        };
        QComplex::new(re, BigRational::zero())
    })
}

const ANCHOR_NORM: f64 = 1.5;

/// True when `op` is Hermitian, exactly positive semidefinite and has no
/// zero entry.
pub fn in_admissible_set(op: &RationalOperator) -> bool {
    op.all_entries_nonzero() && op.psd_certificate().is_some()
}

/// An exact complex-rational positive operator with all entries nonzero,
/// within `delta` (operator norm) of the positive operator `a`.
///
/// If `a` is already such an operator at representable precision it is
/// returned as is. Otherwise a square-root factor `X` with `X†X = a` is
/// rounded to a dyadic grid (so `X_r† X_r` is exactly positive), and a small
/// rational multiple of [`anchor_operator`] is added to clear zero entries.
pub fn rationalize_po(a: &ComplexOperator, delta: f64, cfg: &ExactConfig) -> Result<RationalOperator> {
    if !(delta > 0.0) {
        return Err(Error::validation("rationalization tolerance must be positive"));
    }
    let dev = a.hermitian_deviation();
    if dev > tol::ALGEBRA {
        return Err(Error::NotHermitian(dev));
    }
    let n = a.dim();
    let (values, vectors) = hermitian_eigen(a.matrix());
    if values[0] < -tol::ALGEBRA {
        return Err(Error::validation(format!(
            "operator is not positive (min eigenvalue {:.3e})",
            values[0]
        )));
    }
    let cap = BigInt::from(cfg.denominator_cap);
    if let Some(exact) = RationalOperator::from_f64_exact(a, &cap) {
        if in_admissible_set(&exact) {
            return Ok(exact);
        }
    }

    let root = DMatrix::from_fn(n, n, |r, c| {
        C64::new(values[r].max(0.0).sqrt(), 0.0) * vectors[(c, r)].conj()
    });
    let mut bits = 4u32;
    let gram = loop {
        let den = 1u64
            .checked_shl(bits)
            .filter(|&d| d <= cfg.denominator_cap && bits < 63)
            .ok_or_else(|| {
                Error::Precision(format!(
                    "tolerance {delta:.3e} needs a denominator above the cap {}",
                    cfg.denominator_cap
                ))
            })?;
        let xr = RationalOperator::round_matrix(&root, den);
        let gram = xr.adjoint().mul(&xr)?;
        if operator_norm(&(&gram.to_float() - a)) < delta / 2.0 {
            break gram;
        }
        bits += 1;
    };

    // |t A'| <= delta / 4; each entry vanishes for at most one t, so one of
    // n² + 1 distinct candidates works
    let t_bits = ((6.0 / delta).log2().ceil().max(0.0) as u32) + 8;
    let t0 = dyadic_floor(delta / (4.0 * ANCHOR_NORM), t_bits);
    let anchor = anchor_operator(n);
    for a_idx in 0..=n * n {
        let t = &t0 / BigRational::from_integer(BigInt::from(a_idx + 1));
        let cand = gram.add(&anchor.scale(&t))?;
        if cand.all_entries_nonzero() {
            if cand.psd_certificate().is_none() {
                return Err(Error::validation("rationalized operator failed its positivity certificate"));
            }
            let err = operator_norm(&(&cand.to_float() - a));
            if err >= delta {
                return Err(Error::Precision(format!(
                    "rationalized operator is {err:.3e} from its target (tolerance {delta:.3e})"
                )));
            }
            return Ok(cand);
        }
    }
    Err(Error::Precision("no perturbation cleared every zero entry".into()))
}

/// A finite positive-operator resolution of the identity in exact
/// arithmetic, each member admissible (exactly positive, no zero entry).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RationalOperator>", into = "Vec<RationalOperator>")]
pub struct RationalResolution {
    members: Vec<RationalOperator>,
}

impl TryFrom<Vec<RationalOperator>> for RationalResolution {
    type Error = Error;
    fn try_from(members: Vec<RationalOperator>) -> Result<Self> {
        RationalResolution::new(members)
    }
}

impl From<RationalResolution> for Vec<RationalOperator> {
    fn from(r: RationalResolution) -> Self {
        r.members
    }
}

impl RationalResolution {
    pub fn new(members: Vec<RationalOperator>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::validation("empty resolution"))?;
        let n = first.dim();
        let mut sum = RationalOperator::zeros(n);
        for (i, m) in members.iter().enumerate() {
            sum = sum.add(m)?;
            if !in_admissible_set(m) {
                return Err(Error::validation(format!(
                    "member {i} is not an exact positive operator with nonzero entries"
                )));
            }
        }
        if !sum.is_identity() {
            return Err(Error::validation("members do not sum exactly to the identity"));
        }
        Ok(RationalResolution { members })
    }

    pub fn members(&self) -> &[RationalOperator] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn to_float(&self) -> Vec<ComplexOperator> {
        self.members.iter().map(RationalOperator::to_float).collect()
    }
}

/// Result of [`snap_resolution`] with the quantities its error bound is
/// built from.
#[derive(Clone, Debug)]
pub struct Snap {
    pub resolution: RationalResolution,
    /// Rational in `(0, eps)` bounding every member's displacement.
    pub r: BigRational,
    /// `r / (5 + k)`: tolerance for the per-member rationalization.
    pub delta: BigRational,
    /// Mixing weights, positive, summing to one, each below `2/k`.
    pub weights: Vec<BigRational>,
    /// `|H - I|` where `H` is the sum of the rationalized members.
    pub h_deviation: f64,
    /// `max_i |A_i - A''_i|`.
    pub max_deviation: f64,
}

impl Snap {
    pub fn delta_f64(&self) -> f64 {
        rat_to_f64(&self.delta)
    }

    pub fn r_f64(&self) -> f64 {
        rat_to_f64(&self.r)
    }
}

/// Replaces a floating resolution `{A_i}` by an exact admissible one
/// `{A''_i}` with `max_i |A_i - A''_i| < eps`.
///
/// With `δ = r/(5+k)` each `A_i` is rationalized to `A'_i` within `δ`; with
/// `H = Σ A'_i` the output is
/// `A''_i = (1+kδ)^{-1} [A'_i + t_i ((1+kδ) I - H)]`,
/// which sums to `I` exactly and stays within `δ(5+k) = r` of `A_i`.
pub fn snap_resolution(targets: &[ComplexOperator], eps: f64, cfg: &ExactConfig) -> Result<Snap> {
    if !(eps > 0.0) {
        return Err(Error::validation("eps must be positive"));
    }
    let k = targets.len();
    if k < 2 {
        return Err(Error::validation("a resolution to snap needs at least two members"));
    }
    if !validate_resolution(targets)? {
        return Err(Error::validation("targets are not a positive resolution of the identity"));
    }
    let n = targets[0].dim();

    let r_bits = ((1.0 / eps).log2().ceil().max(0.0) as u32) + 20;
    let r = dyadic_floor(0.9 * eps, r_bits);
    let kq = BigRational::from_integer(BigInt::from(k));
    let delta = &r / (BigRational::from_integer(BigInt::from(5)) + &kq);
    let delta_f = rat_to_f64(&delta);

    let primed = targets
        .iter()
        .map(|a| rationalize_po(a, delta_f, cfg))
        .collect::<Result<Vec<_>>>()?;
    let h = primed
        .iter()
        .try_fold(RationalOperator::zeros(n), |acc, a| acc.add(a))?;
    let h_deviation = operator_norm(&(&h.to_float() - &ComplexOperator::identity(n)));

    let scale = BigRational::one() + &kq * &delta;
    let gap = RationalOperator::scalar(n, &scale).sub(&h)?;
    let inv_scale = scale.recip();

    // t_i = 1/k + c_i η with distinct nonzero c_i summing to zero and
    // |c_i η| <= 1/(2k²); each A''_i has at most n² bad values of η
    let coeffs: Vec<i64> = (1..k as i64)
        .chain(std::iter::once(-((k * (k - 1) / 2) as i64)))
        .collect();
    let base_eta = q(1, (k * k * k * (k - 1)) as i64);
    let one_over_k = q(1, k as i64);
    let mut chosen = None;
    for attempt in 0..=k * n * n {
        let eta = &base_eta / BigRational::from_integer(BigInt::from(attempt + 1));
        let weights: Vec<BigRational> = coeffs
            .iter()
            .map(|&c| &one_over_k + &eta * BigRational::from_integer(BigInt::from(c)))
            .collect();
        let members = primed
            .iter()
            .zip(&weights)
            .map(|(a, t)| Ok(a.add(&gap.scale(t))?.scale(&inv_scale)))
            .collect::<Result<Vec<_>>>()?;
        if members.iter().all(RationalOperator::all_entries_nonzero) {
            chosen = Some((weights, members));
            break;
        }
    }
    let (weights, members) =
        chosen.ok_or_else(|| Error::Precision("no mixing weights cleared every zero entry".into()))?;
    let resolution = RationalResolution::new(members)?;

    let max_deviation = resolution
        .members()
        .iter()
        .zip(targets)
        .map(|(m, a)| operator_norm(&(&m.to_float() - a)))
        .fold(0.0, f64::max);
    if max_deviation >= eps {
        return Err(Error::Precision(format!(
            "snapped resolution is {max_deviation:.3e} from its target (eps {eps:.3e})"
        )));
    }
    Ok(Snap {
        resolution,
        r,
        delta,
        weights,
        h_deviation,
        max_deviation,
    })
}

/// The phase `θ_m` with `sin θ_m = (π/4)^m`, `cos θ_m >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTag {
    pub m: usize,
    pub sin_theta: f64,
    pub cos_theta: f64,
    pub theta: f64,
}

impl PhaseTag {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::validation("tag index starts at 1"));
        }
        let sin_theta = FRAC_PI_4.powi(m.min(i32::MAX as usize) as i32);
        let cos_theta = (1.0 - sin_theta * sin_theta).sqrt();
        Ok(PhaseTag {
            m,
            sin_theta,
            cos_theta,
            theta: sin_theta.asin(),
        })
    }

    /// `|I - U_m| = |1 - e^{iθ_m}| = 2 sin(θ_m / 2)`.
    pub fn identity_distance(&self) -> f64 {
        2.0 * (self.theta / 2.0).sin()
    }

    /// `4 (π/4)^m`, an upper bound on `|U A U† - A|` for `|A| <= 1`.
    pub fn displacement_bound(&self) -> f64 {
        4.0 * self.sin_theta
    }

    pub fn unitary(&self, n: usize) -> DMatrix<C64> {
        let mut u = DMatrix::identity(n, n);
        u[(0, 0)] = C64::from_polar(1.0, self.theta);
        u
    }
}

/// A snapped resolution conjugated by its phase tag.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedResolution {
    pub tag: PhaseTag,
    pub base: RationalResolution,
    /// Floating images `U_m A_i U_m†`.
    pub members: Vec<ComplexOperator>,
}

impl TaggedResolution {
    pub fn index(&self) -> usize {
        self.tag.m
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// The authoritative identity: exact base and tag index.
    pub fn identity_key(&self) -> (&RationalResolution, usize) {
        (&self.base, self.tag.m)
    }

    /// `max_i |A_i - Â_i|` against a floating resolution of the same length.
    pub fn max_distance_to(&self, targets: &[ComplexOperator]) -> Result<f64> {
        if targets.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: targets.len(),
            });
        }
        let mut worst = 0.0f64;
        for (m, t) in self.members.iter().zip(targets) {
            worst = worst.max(operator_norm(&m.checked_sub(t)?));
        }
        Ok(worst)
    }
}

/// Conjugates every member of `base` by `diag(e^{iθ_m}, 1, ..., 1)`.
pub fn phase_tag(base: &RationalResolution, m: usize) -> Result<TaggedResolution> {
    let tag = PhaseTag::new(m)?;
    let u = tag.unitary(base.dim());
    let members = base
        .members()
        .iter()
        .map(|a| a.to_float().conjugate_by(&u))
        .collect();
    Ok(TaggedResolution {
        tag,
        base: base.clone(),
        members,
    })
}

/// Smallest `m >= 1` with `4 (π/4)^m <= eps`.
pub fn min_tag_index(eps: f64) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::validation("tag budget must be positive"));
    }
    let mut m = 1usize;
    while 4.0 * FRAC_PI_4.powi(m as i32) > eps {
        m += 1;
    }
    Ok(m)
}

/// Registered tagged resolutions, each with its own tag index.
#[derive(Clone, Debug, Default)]
pub struct ResolutionRegistry {
    entries: Vec<TaggedResolution>,
    used: BTreeSet<usize>,
}

#[derive(Serialize, Deserialize)]
struct TaggedRepr {
    m: usize,
    theta: f64,
    sin_theta: f64,
    members: RationalResolution,
}

#[derive(Serialize, Deserialize)]
struct RegistryRepr {
    basis: String,
    entries: Vec<TaggedRepr>,
}

impl Serialize for ResolutionRegistry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RegistryRepr {
            basis: "standard".into(),
            entries: self
                .entries
                .iter()
                .map(|e| TaggedRepr {
                    m: e.tag.m,
                    theta: e.tag.theta,
                    sin_theta: e.tag.sin_theta,
                    members: e.base.clone(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ResolutionRegistry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = RegistryRepr::deserialize(d)?;
        if repr.basis != "standard" {
            return Err(D::Error::custom(format!("unsupported basis {:?}", repr.basis)));
        }
        let mut reg = ResolutionRegistry::default();
        for e in repr.entries {
            if !reg.used.insert(e.m) {
                return Err(D::Error::custom(format!("duplicate tag index {}", e.m)));
            }
            reg.entries
                .push(phase_tag(&e.members, e.m).map_err(D::Error::custom)?);
        }
        Ok(reg)
    }
}

impl ResolutionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[TaggedResolution] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, pos: usize) -> Option<&TaggedResolution> {
        self.entries.get(pos)
    }

    /// Smallest tag index not yet taken.
    pub fn next_free_index(&self) -> usize {
        (1..).find(|m| !self.used.contains(m)).expect("unbounded")
    }

    /// Tags `base` with the smallest unused index whose displacement bound
    /// `4(π/4)^m` fits in `eps_remaining`, checks it against every existing
    /// registration, and stores it. Returns the position of the new entry.
    pub fn register(&mut self, base: &RationalResolution, eps_remaining: f64) -> Result<usize> {
        let mut m = min_tag_index(eps_remaining)?;
        while self.used.contains(&m) {
            m += 1;
        }
        let tagged = phase_tag(base, m)?;
        for other in &self.entries {
            if other.dim() != tagged.dim() {
                continue;
            }
            for (i, a) in tagged.members.iter().enumerate() {
                for b in &other.members {
                    let diff = (a - b).into_matrix();
                    let fro = diff.norm();
                    // |X| >= |X|_F / sqrt(n) settles most pairs without an SVD
                    if fro / (a.dim() as f64).sqrt() > COLLISION_DISTANCE {
                        continue;
                    }
                    let d = matrix_norm(&diff);
                    if d <= COLLISION_DISTANCE {
                        return Err(Error::RegistryCollision {
                            m,
                            other: other.tag.m,
                            member: i,
                            distance: d,
                        });
                    }
                }
            }
        }
        self.used.insert(m);
        self.entries.push(tagged);
        Ok(self.entries.len() - 1)
    }

    /// Positions of registrations of the same length whose members are all
    /// within `eps` (strictly) of the targets.
    pub fn find_within(&self, targets: &[ComplexOperator], eps: f64) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (pos, e) in self.entries.iter().enumerate() {
            if e.len() == targets.len()
                && e.dim() == targets[0].dim()
                && e.max_distance_to(targets)? < eps
            {
                out.push(pos);
            }
        }
        Ok(out)
    }

    /// Smallest distance between members of different registrations.
    pub fn min_cross_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.entries.iter().enumerate() {
            for b in &self.entries[i + 1..] {
                if a.dim() != b.dim() {
                    continue;
                }
                for x in &a.members {
                    for y in &b.members {
                        best = best.min(operator_norm(&(x - y)));
                    }
                }
            }
        }
        best
    }
}

/// Draws outcome `i` with probability `Tr(D Â_i)`.
pub fn sample_povm_outcome<R: Rng + ?Sized>(
    state: &DensityOperator,
    tagged: &TaggedResolution,
    rng: &mut R,
) -> Result<usize> {
    Ok(born::sample_index(&povm_weights(state, tagged)?, rng))
}

pub fn povm_weights(state: &DensityOperator, tagged: &TaggedResolution) -> Result<Vec<f64>> {
    if state.dim() != tagged.dim() {
        return Err(Error::DimensionMismatch {
            expected: tagged.dim(),
            found: state.dim(),
        });
    }
    born::normalize(born::raw_weights(state, &tagged.members)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{haar_unitary, random_density, stream_rng};
    use num_traits::Signed;

    fn halves(n: usize) -> Vec<ComplexOperator> {
        let h = ComplexOperator::identity(n).scale(0.5);
        vec![h.clone(), h]
    }

    fn cfg() -> ExactConfig {
        ExactConfig::default()
    }

    #[test]
    fn rationalize_examples() {
        // already admissible: dyadic entries, PD, nonzero
        let a = ComplexOperator::from_real_rows(2, &[0.5, 0.25, 0.25, 0.5]).unwrap();
        let r = rationalize_po(&a, 10.0, &cfg()).unwrap();
        assert_eq!(operator_norm(&(&r.to_float() - &a)), 0.0);

        let half = ComplexOperator::identity(2).scale(0.5);
        let r = rationalize_po(&half, 0.01, &cfg()).unwrap();
        assert!(r.all_entries_nonzero());
        assert!(r.psd_certificate().is_some());
        assert!(operator_norm(&(&r.to_float() - &half)) < 0.01);

        let zero = ComplexOperator::zeros(3);
        let r = rationalize_po(&zero, 0.01, &cfg()).unwrap();
        assert!(in_admissible_set(&r));
        assert!(operator_norm(&r.to_float()) < 0.01);
    }

    #[test]
    fn rationalize_errors() {
        let neg = ComplexOperator::from_real_diagonal(&[1.0, -0.5]);
        assert!(matches!(rationalize_po(&neg, 0.1, &cfg()), Err(Error::Validation(_))));
        let half = ComplexOperator::identity(2).scale(0.5 + 1e-3 / 3.0);
        let tight = ExactConfig {
            denominator_cap: 1 << 8,
        };
        assert!(matches!(rationalize_po(&half, 1e-9, &tight), Err(Error::Precision(_))));
        assert!(matches!(rationalize_po(&half, 1e-13, &cfg()), Err(Error::Precision(_))));
    }

    #[test]
    fn snap_halves() {
        let targets = halves(2);
        let snap = snap_resolution(&targets, 0.1, &cfg()).unwrap();
        let members = snap.resolution.members();
        assert_eq!(members.len(), 2);
        let sum = members[0].add(&members[1]).unwrap();
        assert!(sum.is_identity());
        for (m, t) in members.iter().zip(&targets) {
            assert!(m.all_entries_nonzero());
            assert!(m.psd_certificate().is_some());
            assert!(operator_norm(&(&m.to_float() - t)) < 0.1);
        }
        assert!(snap.max_deviation <= snap.r_f64());
        assert!(snap.h_deviation <= 2.0 * snap.delta_f64());
        let total: BigRational = snap.weights.iter().sum();
        assert!(total.is_one());
        for t in &snap.weights {
            assert!(t.is_positive() && *t < q(2, 2));
        }
    }

    #[test]
    fn snap_exact_input_keeps_contract() {
        let first = snap_resolution(&halves(2), 0.1, &cfg()).unwrap();
        let exact = first.resolution.to_float();
        let again = snap_resolution(&exact, 1e-6, &cfg()).unwrap();
        let sum = again.resolution.members()[0]
            .add(&again.resolution.members()[1])
            .unwrap();
        assert!(sum.is_identity());
        assert!(again.max_deviation < 1e-6);
    }

    #[test]
    fn snap_random_projective_resolution() {
        let mut rng = stream_rng(10, 0);
        let u = haar_unitary(3, &mut rng);
        let targets: Vec<ComplexOperator> = (0..3)
            .map(|i| ComplexOperator::projector(&u.column(i).into_owned()))
            .collect();
        let snap = snap_resolution(&targets, 0.05, &cfg()).unwrap();
        assert!(snap.max_deviation < 0.05);
        assert!(snap.max_deviation <= snap.r_f64());
    }

    #[test]
    fn snap_rejects_bad_input() {
        let p = ComplexOperator::from_real_diagonal(&[1.0, 0.0]);
        assert!(snap_resolution(&[p.clone(), p.clone()], 0.1, &cfg()).is_err());
        assert!(snap_resolution(&[ComplexOperator::identity(2)], 0.1, &cfg()).is_err());
        assert!(snap_resolution(&halves(2), 0.0, &cfg()).is_err());
    }

    #[test]
    fn phase_tag_values() {
        let t1 = PhaseTag::new(1).unwrap();
        // sin θ_1 = π/4, with π/4 taken independently as atan(1)
        assert!((t1.sin_theta - 1f64.atan()).abs() < 1e-15);
        assert!(t1.cos_theta > 0.0);
        // |1 - e^{iθ}| by direct complex arithmetic
        let direct = (C64::new(1.0, 0.0) - C64::from_polar(1.0, t1.theta)).norm();
        assert!((t1.identity_distance() - direct).abs() < 1e-14);
        assert!((t1.identity_distance() - 0.8729).abs() < 1e-4);
        assert!(PhaseTag::new(0).is_err());
    }

    #[test]
    fn tagging_preserves_spectra_and_sum() {
        let snap = snap_resolution(&halves(3), 0.1, &cfg()).unwrap();
        let tagged = phase_tag(&snap.resolution, 2).unwrap();
        let sum = tagged
            .members
            .iter()
            .fold(ComplexOperator::zeros(3), |acc, m| &acc + m);
        assert!(operator_norm(&(&sum - &ComplexOperator::identity(3))) <= 1e-12);
        for (orig, img) in snap.resolution.to_float().iter().zip(&tagged.members) {
            for (x, y) in orig.eigenvalues().iter().zip(img.eigenvalues()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tag_index_selection() {
        assert_eq!(min_tag_index(0.5).unwrap(), 9);
        // direct evaluation of the inequality at the boundary
        assert!(4.0 * FRAC_PI_4.powi(9) <= 0.5);
        assert!(4.0 * FRAC_PI_4.powi(8) > 0.5);
        assert!(min_tag_index(0.0).is_err());
    }

    #[test]
    fn registry_disjointness() {
        let snap = snap_resolution(&halves(2), 0.1, &cfg()).unwrap();
        let mut reg = ResolutionRegistry::new();
        let a = reg.register(&snap.resolution, 0.5).unwrap();
        let b = reg.register(&snap.resolution, 0.5).unwrap();
        let (ea, eb) = (&reg.entries()[a], &reg.entries()[b]);
        assert_eq!(ea.index(), 9);
        assert_eq!(eb.index(), 10);
        assert_eq!(ea.identity_key().0, eb.identity_key().0);
        assert!(reg.min_cross_distance() > COLLISION_DISTANCE);
        assert_eq!(reg.next_free_index(), 1);

        let json = serde_json::to_string(&reg).unwrap();
        let back: ResolutionRegistry = serde_json::from_str(&json).unwrap();
        assert_eq!(back.entries(), reg.entries());
    }

    #[test]
    fn registry_tag_stays_within_budget() {
        let targets = halves(2);
        let snap = snap_resolution(&targets, 0.05, &cfg()).unwrap();
        let mut reg = ResolutionRegistry::new();
        let pos = reg.register(&snap.resolution, 0.05).unwrap();
        let e = &reg.entries()[pos];
        let shift = e
            .members
            .iter()
            .zip(snap.resolution.to_float())
            .map(|(x, y)| operator_norm(&(x - &y)))
            .fold(0.0, f64::max);
        assert!(shift <= e.tag.displacement_bound());
        assert!(e.tag.displacement_bound() <= 0.05);
        assert!(e.max_distance_to(&targets).unwrap() < 0.1);
    }

    #[test]
    fn povm_sampling() {
        let snap = snap_resolution(&halves(2), 0.1, &cfg()).unwrap();
        let tagged = phase_tag(&snap.resolution, 3).unwrap();
        let w = povm_weights(&DensityOperator::maximally_mixed(2), &tagged).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (wi, m) in w.iter().zip(&tagged.members) {
            assert!((wi - m.trace().re / 2.0).abs() < 1e-9);
            assert!((wi - 0.5).abs() < 0.1);
        }

        // a resolution concentrated on e_1 for the first outcome
        let p = ComplexOperator::from_real_diagonal(&[1.0, 0.0]);
        let targets = vec![p.clone(), &ComplexOperator::identity(2) - &p];
        let snap = snap_resolution(&targets, 0.01, &cfg()).unwrap();
        let tagged = phase_tag(&snap.resolution, 20).unwrap();
        let d = DensityOperator::new(p).unwrap();
        let mut rng = stream_rng(5, 5);
        let hits = (0..10_000)
            .filter(|_| sample_povm_outcome(&d, &tagged, &mut rng).unwrap() == 0)
            .count();
        assert!(hits as f64 / 1e4 >= 0.99);

        let d3 = random_density(3, &mut rng);
        assert!(sample_povm_outcome(&d3, &tagged, &mut rng).is_err());
    }
}
