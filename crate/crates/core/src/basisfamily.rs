//! Finite prefixes of a dense sequence of pairwise totally incompatible
//! orthonormal bases.
//!
//! Two ordered bases are totally incompatible when no projection onto the
//! span of a nonempty proper subset of one commutes with any such projection
//! of the other. Generation walks a seeded Haar sequence and nudges each raw
//! candidate (within `2^-m` for the m-th member) until it is totally
//! incompatible with everything before it.

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opcore::{basis_distance, matrix_norm, OrthonormalBasis, C64};
use crate::random::{haar_unitary, random_hermitian, stream_rng, unitary_exp};

/// Default numeric threshold for "the commutator is nonzero".
pub const DEFAULT_FLOOR: f64 = 1e-8;

/// Largest dimension the family generator accepts.
pub const MAX_DIM: usize = 8;

/// Nontrivial subset projections of one basis, flattened row-major.
///
/// Only masks with the top bit clear are kept: `[I - P, Q] = -[P, Q]`, so a
/// projection and its complement have commutators of identical norm against
/// everything.
#[derive(Clone, Debug)]
struct SubsetProjections {
    n: usize,
    mats: Vec<Vec<C64>>,
}

impl SubsetProjections {
    fn new(basis: &OrthonormalBasis) -> Self {
        let n = basis.dim();
        let top = 1u32 << (n - 1);
        let mats = (1..(1u32 << n) - 1)
            .filter(|mask| mask & top == 0)
            .map(|mask| {
                let p = basis.subset_projection(mask);
                let m = p.op().matrix();
                let mut flat = Vec::with_capacity(n * n);
                for a in 0..n {
                    for b in 0..n {
                        flat.push(m[(a, b)]);
                    }
                }
                flat
            })
            .collect();
        SubsetProjections { n, mats }
    }

    fn totally_incompatible_with(&self, other: &SubsetProjections, floor: f64) -> bool {
        let mut scratch = vec![C64::new(0.0, 0.0); self.n * self.n];
        self.mats.iter().all(|p| {
            other
                .mats
                .iter()
                .all(|q| commutator_exceeds(p, q, self.n, floor, &mut scratch))
        })
    }
}

/// `|PQ - QP| > floor`, deciding from the Frobenius norm when it is
/// conclusive (`|C|_F / sqrt(n) <= |C| <= |C|_F`) and from the SVD otherwise.
fn commutator_exceeds(p: &[C64], q: &[C64], n: usize, floor: f64, c: &mut [C64]) -> bool {
    let mut fro2 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += p[a * n + k] * q[k * n + b] - q[a * n + k] * p[k * n + b];
            }
            c[a * n + b] = acc;
            fro2 += acc.norm_sqr();
        }
    }
    let floor2 = floor * floor;
    if fro2 > floor2 * n as f64 {
        return true;
    }
    if fro2 <= floor2 {
        return false;
    }
    matrix_norm(&DMatrix::from_row_slice(n, n, c)) > floor
}

/// True iff every nonempty proper subset projection of `b1` fails to commute
/// with every nonempty proper subset projection of `b2`, with "fails to
/// commute" meaning commutator norm strictly above `floor`.
pub fn totally_incompatible(b1: &OrthonormalBasis, b2: &OrthonormalBasis, floor: f64) -> Result<bool> {
    if b1.dim() != b2.dim() {
        return Err(Error::DimensionMismatch {
            expected: b1.dim(),
            found: b2.dim(),
        });
    }
    check_floor(floor)?;
    if b1.dim() > MAX_DIM {
        return Err(Error::validation(format!("dimension {} exceeds {MAX_DIM}", b1.dim())));
    }
    Ok(SubsetProjections::new(b1).totally_incompatible_with(&SubsetProjections::new(b2), floor))
}

fn check_floor(floor: f64) -> Result<()> {
    if !(floor > 0.0) {
        return Err(Error::validation("commutator floor must be positive"));
    }
    Ok(())
}

/// `(U e_1, ..., U e_n)` with `U = exp(i t H)`, `H` a random Hermitian and
/// `t` scaled so that `|I - U| < radius`.
pub fn random_nearby_basis<R: Rng + ?Sized>(
    basis: &OrthonormalBasis,
    radius: f64,
    rng: &mut R,
) -> OrthonormalBasis {
    let n = basis.dim();
    let h = random_hermitian(n, rng);
    let spread = h
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, l| acc.max(l.abs()));
    if spread == 0.0 || radius <= 0.0 {
        return basis.clone();
    }
    // every eigenphase has |phi| < radius, and |1 - e^{i phi}| < |phi|
    let t = radius * (0.5 + 0.5 * rng.random::<f64>()) / spread;
    OrthonormalBasis::from_unitary_unchecked(unitary_exp(&h, t) * basis.columns())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Nearby draws tried before one was accepted (0 when the raw candidate
    /// was kept).
    pub replacements: usize,
    /// `basis_distance(raw candidate, member)`.
    pub displacement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    /// 1-based position in the family.
    pub index: usize,
    pub basis: OrthonormalBasis,
    pub provenance: Provenance,
}

#[derive(Clone, Debug)]
pub struct RepairPolicy {
    pub attempts_per_radius: usize,
    pub max_radii: usize,
    pub shrink: f64,
}

impl Default for RepairPolicy {
    fn default() -> Self {
        RepairPolicy {
            attempts_per_radius: 64,
            max_radii: 10,
            shrink: 0.5,
        }
    }
}

/// Returns `candidate` if it is already totally incompatible with every
/// predecessor, otherwise a random nearby basis within `budget` that is.
/// The result is indexed as the next member after `predecessors`.
pub fn repair_member<R: Rng + ?Sized>(
    candidate: &OrthonormalBasis,
    predecessors: &[FamilyMember],
    budget: f64,
    floor: f64,
    rng: &mut R,
    policy: &RepairPolicy,
) -> Result<FamilyMember> {
    let cache: Vec<SubsetProjections> = predecessors
        .iter()
        .map(|m| SubsetProjections::new(&m.basis))
        .collect();
    repair_cached(candidate, predecessors.len() + 1, &cache, budget, floor, rng, policy)
}

fn repair_cached<R: Rng + ?Sized>(
    candidate: &OrthonormalBasis,
    index: usize,
    predecessors: &[SubsetProjections],
    budget: f64,
    floor: f64,
    rng: &mut R,
    policy: &RepairPolicy,
) -> Result<FamilyMember> {
    check_floor(floor)?;
    // 2^-m underflows to zero for large m: then only the raw candidate may be kept
    if !(budget >= 0.0) {
        return Err(Error::validation("repair budget must be nonnegative"));
    }
    let passes = |b: &SubsetProjections| {
        predecessors
            .iter()
            .all(|p| b.totally_incompatible_with(p, floor))
    };
    let member = |basis: OrthonormalBasis, replacements, displacement| FamilyMember {
        index,
        basis,
        provenance: Provenance {
            seed: 0,
            replacements,
            displacement,
        },
    };
    if passes(&SubsetProjections::new(candidate)) {
        return Ok(member(candidate.clone(), 0, 0.0));
    }
    let mut radius = budget;
    let mut draws = 0;
    let radii = if budget > 0.0 { policy.max_radii } else { 0 };
    for _ in 0..radii {
        for _ in 0..policy.attempts_per_radius {
            draws += 1;
            let nearby = random_nearby_basis(candidate, radius, rng);
            let moved = basis_distance(candidate, &nearby)?;
            if moved <= budget && passes(&SubsetProjections::new(&nearby)) {
                return Ok(member(nearby, draws, moved));
            }
        }
        radius *= policy.shrink;
    }
    Err(Error::RepairExhausted {
        index,
        budget,
        attempts: draws,
    })
}

#[derive(Clone, Debug)]
pub struct FamilyParams {
    pub n: usize,
    pub count: usize,
    pub seed: u64,
    pub net_bound: f64,
    pub floor: f64,
}

impl FamilyParams {
    /// Displacement allowed when repairing member `m`: `min(net_bound, 2^-m)`.
    pub fn budget(&self, m: usize) -> f64 {
        self.net_bound.min(0.5f64.powi(m.min(i32::MAX as usize) as i32))
    }
}

/// A generated family together with the parameters that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyRepr")]
pub struct BasisFamily {
    pub n: usize,
    pub net_bound: f64,
    pub floor: f64,
    pub seed: u64,
    pub members: Vec<FamilyMember>,
}

#[derive(Deserialize)]
struct FamilyRepr {
    n: usize,
    net_bound: f64,
    floor: f64,
    seed: u64,
    members: Vec<FamilyMember>,
}

impl TryFrom<FamilyRepr> for BasisFamily {
    type Error = Error;

    fn try_from(r: FamilyRepr) -> Result<Self> {
        for (i, m) in r.members.iter().enumerate() {
            if m.index != i + 1 {
                return Err(Error::validation(format!(
                    "member at position {} has index {}",
                    i + 1,
                    m.index
                )));
            }
            if m.basis.dim() != r.n {
                return Err(Error::DimensionMismatch {
                    expected: r.n,
                    found: m.basis.dim(),
                });
            }
        }
        Ok(BasisFamily {
            n: r.n,
            net_bound: r.net_bound,
            floor: r.floor,
            seed: r.seed,
            members: r.members,
        })
    }
}

impl BasisFamily {
    pub fn params(&self) -> FamilyParams {
        FamilyParams {
            n: self.n,
            count: self.members.len(),
            seed: self.seed,
            net_bound: self.net_bound,
            floor: self.floor,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Member with 1-based index `m`.
    pub fn member(&self, m: usize) -> Option<&FamilyMember> {
        m.checked_sub(1).and_then(|i| self.members.get(i))
    }

    /// Extends the family to `count` members. Members already present are
    /// untouched and the result equals `generate_family` with the larger
    /// count.
    pub fn grow(&mut self, count: usize) -> Result<()> {
        let params = FamilyParams {
            count,
            ..self.params()
        };
        let policy = RepairPolicy::default();
        let mut cache: Vec<SubsetProjections> = self
            .members
            .iter()
            .map(|m| SubsetProjections::new(&m.basis))
            .collect();
        for m in self.members.len() + 1..=count {
            let candidate = OrthonormalBasis::from_unitary_unchecked(haar_unitary(
                params.n,
                &mut stream_rng(params.seed, 2 * m as u64),
            ));
            let mut rng = stream_rng(params.seed, 2 * m as u64 + 1);
            let mut member = repair_cached(
                &candidate,
                m,
                &cache,
                params.budget(m),
                params.floor,
                &mut rng,
                &policy,
            )?;
            member.provenance.seed = params.seed;
            cache.push(SubsetProjections::new(&member.basis));
            self.members.push(member);
        }
        Ok(())
    }
}

/// Deterministic family of `count` pairwise totally incompatible bases.
///
/// Member `m` starts from a Haar draw on stream `2m` of `seed` and is
/// repaired (if needed) with stream `2m + 1`, so prefixes are stable across
/// counts.
pub fn generate_family(params: &FamilyParams) -> Result<BasisFamily> {
    if params.n < 2 || params.n > MAX_DIM {
        return Err(Error::validation(format!(
            "family dimension must lie in 2..={MAX_DIM}, got {}",
            params.n
        )));
    }
    if params.count == 0 {
        return Err(Error::validation("family count must be at least 1"));
    }
    if !(params.net_bound > 0.0) {
        return Err(Error::validation("net_bound must be positive"));
    }
    check_floor(params.floor)?;
    let mut family = BasisFamily {
        n: params.n,
        net_bound: params.net_bound,
        floor: params.floor,
        seed: params.seed,
        members: Vec::with_capacity(params.count),
    };
    family.grow(params.count)?;
    Ok(family)
}

/// `(index, distance)` of the member closest to `target`. With
/// `order_insensitive` every ordering of the target's vectors is tried.
/// Ties go to the lowest index.
pub fn nearest_member(
    family: &BasisFamily,
    target: &OrthonormalBasis,
    order_insensitive: bool,
) -> Result<(usize, f64)> {
    if family.members.is_empty() {
        return Err(Error::EmptyFamily);
    }
    if target.dim() != family.n {
        return Err(Error::DimensionMismatch {
            expected: family.n,
            found: target.dim(),
        });
    }
    let targets: Vec<OrthonormalBasis> = if order_insensitive {
        (0..target.dim())
            .permutations(target.dim())
            .map(|p| target.permuted(&p))
            .collect()
    } else {
        vec![target.clone()]
    };
    let mut best = (0, f64::INFINITY);
    for member in &family.members {
        for t in &targets {
            let d = basis_distance(&member.basis, t)?;
            if d < best.1 {
                best = (member.index, d);
            }
        }
    }
    Ok(best)
}
