//! The partial Boolean algebra generated by a basis family, and truth
//! valuations on it.
//!
//! Each family member contributes one block: the `2^n` projections onto
//! spans of subsets of its vectors, keyed by bitmask (bit `i` set means
//! vector `i` is included). Distinct blocks share only `0` and `I`.
//!
//! A valuation is stored as the atom chosen in each block, sampled lazily
//! with probability `Tr(D · atom)` and independently across blocks.

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basisfamily::{BasisFamily, FamilyMember};
use crate::born;
use crate::error::{Error, Result};
use crate::opcore::{commutator, operator_norm, tol, ComplexOperator, DensityOperator, OrthonormalBasis};

/// One maximal Boolean block.
#[derive(Clone, Debug)]
pub struct ProjectionBlock {
    index: usize,
    basis: OrthonormalBasis,
    elements: Vec<ComplexOperator>,
    structure: BlockStructure,
}

/// Lattice operations of a block, discovered from the operators themselves
/// rather than from mask arithmetic.
#[derive(Clone, Debug)]
pub struct BlockStructure {
    /// `product[a][b]` is the element equal to `element(a) · element(b)`.
    pub product: Vec<Vec<usize>>,
    /// `complement[a]` is the element equal to `I - element(a)`.
    pub complement: Vec<usize>,
    /// Every set of pairwise orthogonal nonzero elements summing to `I`.
    pub resolutions: Vec<Vec<usize>>,
    pub zero: usize,
    pub identity: usize,
}

fn find_element(elements: &[ComplexOperator], target: &ComplexOperator) -> Result<usize> {
    elements
        .iter()
        .position(|e| operator_norm(&(e - target)) <= tol::ALGEBRA)
        .ok_or_else(|| Error::validation("block is not closed under its lattice operations"))
}

impl BlockStructure {
    fn discover(elements: &[ComplexOperator]) -> Result<Self> {
        let n = elements[0].dim();
        let id = ComplexOperator::identity(n);
        let zero = find_element(elements, &ComplexOperator::zeros(n))?;
        let identity = find_element(elements, &id)?;
        let product = elements
            .iter()
            .map(|a| {
                elements
                    .iter()
                    .map(|b| find_element(elements, &(a * b)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let complement = elements
            .iter()
            .map(|a| find_element(elements, &(&id - a)))
            .collect::<Result<Vec<_>>>()?;

        let mut resolutions = Vec::new();
        let mut chosen = Vec::new();
        collect_resolutions(elements, &product, zero, 0, &mut chosen, &mut resolutions, &id);
        Ok(BlockStructure {
            product,
            complement,
            resolutions,
            zero,
            identity,
        })
    }
}

fn collect_resolutions(
    elements: &[ComplexOperator],
    product: &[Vec<usize>],
    zero: usize,
    start: usize,
    chosen: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
    id: &ComplexOperator,
) {
    if !chosen.is_empty() {
        let sum = chosen
            .iter()
            .fold(ComplexOperator::zeros(id.dim()), |acc, &i| &acc + &elements[i]);
        if operator_norm(&(&sum - id)) <= tol::ALGEBRA {
            out.push(chosen.clone());
            return;
        }
    }
    for next in start..elements.len() {
        if next == zero || chosen.iter().any(|&c| product[c][next] != zero) {
            continue;
        }
        chosen.push(next);
        collect_resolutions(elements, product, zero, next + 1, chosen, out, id);
        chosen.pop();
    }
}

/// Builds the block of all `2^n` subset projections of a family member.
pub fn build_block(member: &FamilyMember) -> Result<ProjectionBlock> {
    ProjectionBlock::new(member.index, member.basis.clone())
}

impl ProjectionBlock {
    pub fn new(index: usize, basis: OrthonormalBasis) -> Result<Self> {
        let n = basis.dim();
        if n > crate::basisfamily::MAX_DIM {
            return Err(Error::validation(format!("block dimension {n} too large")));
        }
        let elements: Vec<ComplexOperator> = (0..1u32 << n)
            .map(|mask| basis.subset_projection(mask).into_op())
            .collect();
        let structure = BlockStructure::discover(&elements)?;
        Ok(ProjectionBlock {
            index,
            basis,
            elements,
            structure,
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn basis(&self) -> &OrthonormalBasis {
        &self.basis
    }

    pub fn full_mask(&self) -> u32 {
        (1u32 << self.dim()) - 1
    }

    pub fn element(&self, mask: u32) -> &ComplexOperator {
        &self.elements[mask as usize]
    }

    pub fn elements(&self) -> &[ComplexOperator] {
        &self.elements
    }

    pub fn atom(&self, i: usize) -> &ComplexOperator {
        self.element(1 << i)
    }

    pub fn atoms(&self) -> Vec<ComplexOperator> {
        (0..self.dim()).map(|i| self.atom(i).clone()).collect()
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    /// Checks a full `{0,1}` assignment to the block's elements (indexed by
    /// mask) against the two-valued homomorphism laws: products,
    /// complements, and exactly one 1 in every resolution.
    pub fn verify_values(&self, values: &[u8]) -> bool {
        let s = &self.structure;
        if values.len() != self.elements.len() || values.iter().any(|&v| v > 1) {
            return false;
        }
        let products = (0..values.len())
            .cartesian_product(0..values.len())
            .all(|(a, b)| values[s.product[a][b]] == values[a] * values[b]);
        let complements = (0..values.len()).all(|a| values[s.complement[a]] == 1 - values[a]);
        let resolutions = s
            .resolutions
            .iter()
            .all(|r| r.iter().map(|&i| values[i] as u32).sum::<u32>() == 1);
        products && complements && resolutions
    }

    /// Block element values induced by choosing `atom`: an element is 1
    /// iff it contains the atom, i.e. `element · atom = atom`.
    pub fn values_for_atom(&self, atom: usize) -> Vec<u8> {
        let a = 1usize << atom;
        (0..self.elements.len())
            .map(|e| (self.structure.product[e][a] == a) as u8)
            .collect()
    }
}

/// A disjoint union of blocks sharing only `0` and `I`.
#[derive(Clone, Debug)]
pub struct PartialBooleanAlgebra {
    n: usize,
    blocks: Vec<ProjectionBlock>,
}

/// An element of the algebra: block index (1-based) and subset mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ElementRef {
    pub block: usize,
    pub mask: u32,
}

impl PartialBooleanAlgebra {
    pub fn from_family(family: &BasisFamily) -> Result<Self> {
        Self::from_members(family.n, &family.members)
    }

    pub fn from_members(n: usize, members: &[FamilyMember]) -> Result<Self> {
        let blocks = members.iter().map(build_block).collect::<Result<Vec<_>>>()?;
        Ok(PartialBooleanAlgebra { n, blocks })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[ProjectionBlock] {
        &self.blocks
    }

    pub fn block(&self, m: usize) -> Result<&ProjectionBlock> {
        self.blocks
            .iter()
            .find(|b| b.index == m)
            .ok_or(Error::UnknownBlock(m))
    }

    pub fn operator(&self, e: ElementRef) -> Result<&ComplexOperator> {
        Ok(self.block(e.block)?.element(e.mask))
    }

    /// Nontrivial elements (neither `0` nor `I`), block by block.
    pub fn nontrivial_elements(&self) -> Vec<ElementRef> {
        let full = (1u32 << self.n) - 1;
        self.blocks
            .iter()
            .flat_map(|b| (1..full).map(move |mask| ElementRef { block: b.index, mask }))
            .collect()
    }

    pub fn atom_elements(&self) -> Vec<ElementRef> {
        self.blocks
            .iter()
            .flat_map(|b| (0..self.n).map(move |i| ElementRef { block: b.index, mask: 1 << i }))
            .collect()
    }

    /// Commutator norms of every nontrivial pair, split into within-block and
    /// cross-block populations.
    pub fn compatibility_audit(&self, floor: f64) -> Result<CompatibilityAudit> {
        let elems = self.nontrivial_elements();
        let mut audit = CompatibilityAudit {
            within_max: 0.0,
            cross_min: f64::INFINITY,
            within_violations: 0,
            cross_violations: 0,
            pairs: 0,
        };
        for (a, b) in elems.iter().tuple_combinations() {
            let norm = operator_norm(&commutator(self.operator(*a)?, self.operator(*b)?)?);
            audit.pairs += 1;
            if a.block == b.block {
                audit.within_max = audit.within_max.max(norm);
                if norm > tol::ALGEBRA {
                    audit.within_violations += 1;
                }
            } else {
                audit.cross_min = audit.cross_min.min(norm);
                if norm <= floor {
                    audit.cross_violations += 1;
                }
            }
        }
        Ok(audit)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CompatibilityAudit {
    pub within_max: f64,
    pub cross_min: f64,
    pub within_violations: usize,
    pub cross_violations: usize,
    pub pairs: usize,
}

/// `Tr(D · atom_i)` for each atom of the block, clamped and renormalized.
pub fn block_weights(state: &DensityOperator, block: &ProjectionBlock) -> Result<Vec<f64>> {
    if state.dim() != block.dim() {
        return Err(Error::DimensionMismatch {
            expected: block.dim(),
            found: state.dim(),
        });
    }
    born::normalize(born::raw_weights(state, &block.atoms())?)
}

/// Draws the atom that a fresh valuation assigns 1 in this block.
pub fn sample_block_valuation<R: Rng + ?Sized>(
    state: &DensityOperator,
    block: &ProjectionBlock,
    rng: &mut R,
) -> Result<usize> {
    Ok(born::sample_index(&block_weights(state, block)?, rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValuationProvenance {
    pub state: ComplexOperator,
    pub stream: u64,
}

/// A two-valued homomorphism on the algebra, represented by the atom chosen
/// in each block that has been queried so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthValuation {
    /// block index -> chosen atom (0-based)
    pub choices: BTreeMap<usize, usize>,
    pub provenance: ValuationProvenance,
    #[serde(skip)]
    state: Option<DensityOperator>,
}

impl TruthValuation {
    pub fn new(state: &DensityOperator, stream: u64) -> Self {
        TruthValuation {
            choices: BTreeMap::new(),
            provenance: ValuationProvenance {
                state: state.op().clone(),
                stream,
            },
            state: Some(state.clone()),
        }
    }

    /// Valuation with prescribed choices; used for constructed witnesses.
    pub fn from_choices(state: &DensityOperator, choices: BTreeMap<usize, usize>) -> Self {
        TruthValuation {
            choices,
            ..TruthValuation::new(state, 0)
        }
    }

    pub fn chosen_atom(&self, block: usize) -> Option<usize> {
        self.choices.get(&block).copied()
    }

    fn state(&self) -> Result<DensityOperator> {
        match &self.state {
            Some(s) => Ok(s.clone()),
            None => DensityOperator::new(self.provenance.state.clone()),
        }
    }

    /// Samples block `m` if it has not been queried yet.
    pub fn populate<R: Rng + ?Sized>(
        &mut self,
        pba: &PartialBooleanAlgebra,
        m: usize,
        rng: &mut R,
    ) -> Result<usize> {
        if let Some(&atom) = self.choices.get(&m) {
            return Ok(atom);
        }
        let block = pba.block(m)?;
        let atom = sample_block_valuation(&self.state()?, block, rng)?;
        self.choices.insert(m, atom);
        Ok(atom)
    }

    /// `t(element)`; samples the element's block on first use.
    pub fn evaluate<R: Rng + ?Sized>(
        &mut self,
        pba: &PartialBooleanAlgebra,
        element: ElementRef,
        rng: &mut R,
    ) -> Result<bool> {
        let atom = self.populate(pba, element.block, rng)?;
        Ok(element.mask >> atom & 1 == 1)
    }

    /// Values of every element of a populated block, by mask.
    pub fn block_values(&self, block: &ProjectionBlock) -> Option<Vec<u8>> {
        self.chosen_atom(block.index).map(|a| block.values_for_atom(a))
    }
}

/// Audits a valuation on one block against the homomorphism laws. Returns
/// false for an unpopulated block.
pub fn verify_homomorphism(t: &TruthValuation, block: &ProjectionBlock) -> bool {
    t.block_values(block).is_some_and(|v| block.verify_values(&v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FullnessScope {
    /// Rank-one elements only.
    Atoms,
    /// Every element other than `0` and `I`.
    AllNontrivial,
}

#[derive(Clone, Debug, Serialize)]
pub struct FullnessWitness {
    pub first: ElementRef,
    pub second: ElementRef,
    /// Block -> chosen atom, for the blocks involved.
    pub valuation: BTreeMap<usize, usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FullnessReport {
    pub full: bool,
    pub pairs_checked: usize,
    pub witnesses: Vec<FullnessWitness>,
    pub undistinguished: Vec<(ElementRef, ElementRef)>,
}

/// For every ordered pair of distinct elements in `scope`, constructs a
/// valuation that tells them apart and confirms it through the block
/// structure.
pub fn verify_fullness(pba: &PartialBooleanAlgebra, scope: FullnessScope) -> Result<FullnessReport> {
    let elems = match scope {
        FullnessScope::Atoms => pba.atom_elements(),
        FullnessScope::AllNontrivial => pba.nontrivial_elements(),
    };
    let n = pba.dim();
    let mut report = FullnessReport {
        full: true,
        pairs_checked: 0,
        witnesses: Vec::new(),
        undistinguished: Vec::new(),
    };
    for (&a, &b) in elems.iter().cartesian_product(elems.iter()) {
        if a == b {
            continue;
        }
        report.pairs_checked += 1;
        let mut valuation = BTreeMap::new();
        if a.block == b.block {
            let bit = (a.mask ^ b.mask).trailing_zeros() as usize;
            valuation.insert(a.block, bit);
        } else {
            // a gets 1 from an atom it contains, b gets 0 from one it lacks
            let inside = a.mask.trailing_zeros() as usize;
            let outside = (0..n).find(|i| b.mask >> i & 1 == 0).unwrap_or(0);
            valuation.insert(a.block, inside);
            valuation.insert(b.block, outside);
        }
        let value = |e: ElementRef| -> Result<u8> {
            let block = pba.block(e.block)?;
            Ok(block.values_for_atom(valuation[&e.block])[e.mask as usize])
        };
        if value(a)? != value(b)? {
            report.witnesses.push(FullnessWitness {
                first: a,
                second: b,
                valuation,
            });
        } else {
            report.full = false;
            report.undistinguished.push((a, b));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basisfamily::{generate_family, FamilyParams, Provenance};
    use crate::random::{random_density, stream_rng};
    use nalgebra::DVector;

    fn member(index: usize, basis: OrthonormalBasis) -> FamilyMember {
        FamilyMember {
            index,
            basis,
            provenance: Provenance {
                seed: 0,
                replacements: 0,
                displacement: 0.0,
            },
        }
    }

    fn family(n: usize, count: usize, seed: u64) -> BasisFamily {
        generate_family(&FamilyParams {
            n,
            count,
            seed,
            net_bound: 1.0,
            floor: 1e-8,
        })
        .unwrap()
    }

    fn hadamard_block() -> ProjectionBlock {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let b = OrthonormalBasis::new(vec![
            DVector::from_vec(vec![crate::C64::new(s, 0.0), crate::C64::new(s, 0.0)]),
            DVector::from_vec(vec![crate::C64::new(s, 0.0), crate::C64::new(-s, 0.0)]),
        ])
        .unwrap();
        build_block(&member(1, b)).unwrap()
    }

    #[test]
    fn block_shapes() {
        let b2 = build_block(&member(1, OrthonormalBasis::standard(2))).unwrap();
        assert_eq!(b2.elements().len(), 4);
        assert_eq!(b2.structure().resolutions.len(), 2); // {I}, {P1, P2}

        let fam = family(3, 1, 2);
        let b3 = build_block(&fam.members[0]).unwrap();
        assert_eq!(b3.elements().len(), 8);
        // Bell(3) = 5 partitions of the atom set
        assert_eq!(b3.structure().resolutions.len(), 5);
        for i in 0..3 {
            let atom = 1u32 << i;
            let co = b3.full_mask() ^ atom;
            assert_eq!(b3.structure().complement[atom as usize], co as usize);
            let sum = b3.atom(i) + b3.element(co);
            assert!(operator_norm(&(&sum - &ComplexOperator::identity(3))) < 1e-10);
        }
        let atom_sum = b3
            .atoms()
            .iter()
            .fold(ComplexOperator::zeros(3), |acc, a| &acc + a);
        assert!(operator_norm(&(&atom_sum - &ComplexOperator::identity(3))) < 1e-10);
    }

    #[test]
    fn element_products_follow_mask_intersection() {
        let fam = family(3, 1, 5);
        let b = build_block(&fam.members[0]).unwrap();
        for a in 0..8u32 {
            for c in 0..8u32 {
                let prod = b.element(a) * b.element(c);
                assert!(operator_norm(&(&prod - b.element(a & c))) < 1e-10);
                assert_eq!(b.structure().product[a as usize][c as usize], (a & c) as usize);
            }
        }
    }

    #[test]
    fn block_sampling_examples() {
        let fam = family(3, 1, 9);
        let block = build_block(&fam.members[0]).unwrap();
        let pure = DensityOperator::pure(&fam.members[0].basis.vector(1));
        let mut rng = stream_rng(1, 0);
        for _ in 0..200 {
            assert_eq!(sample_block_valuation(&pure, &block, &mut rng).unwrap(), 1);
        }
        let w = block_weights(&DensityOperator::maximally_mixed(3), &block).unwrap();
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        let e1 = DensityOperator::pure(&OrthonormalBasis::standard(2).vector(0));
        let w = block_weights(&e1, &hadamard_block()).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
        assert!(block_weights(&DensityOperator::maximally_mixed(2), &block).is_err());
    }

    #[test]
    fn evaluation_is_consistent() {
        let fam = family(3, 3, 4);
        let pba = PartialBooleanAlgebra::from_family(&fam).unwrap();
        let d = random_density(3, &mut stream_rng(2, 2));
        let mut rng = stream_rng(3, 3);
        for _ in 0..50 {
            let mut t = TruthValuation::new(&d, 0);
            assert!(t.evaluate(&pba, ElementRef { block: 2, mask: 0b111 }, &mut rng).unwrap());
            assert!(!t.evaluate(&pba, ElementRef { block: 2, mask: 0 }, &mut rng).unwrap());
            for mask in 0..8u32 {
                let e = ElementRef { block: 3, mask };
                let c = ElementRef { block: 3, mask: 7 ^ mask };
                let v1 = t.evaluate(&pba, e, &mut rng).unwrap();
                let v2 = t.evaluate(&pba, c, &mut rng).unwrap();
                assert_ne!(v1, v2);
                assert_eq!(t.evaluate(&pba, e, &mut rng).unwrap(), v1);
            }
        }
        let mut t = TruthValuation::new(&d, 0);
        assert!(matches!(
            t.evaluate(&pba, ElementRef { block: 9, mask: 1 }, &mut rng),
            Err(Error::UnknownBlock(9))
        ));
    }

    #[test]
    fn homomorphism_audit() {
        let fam = family(3, 2, 6);
        let pba = PartialBooleanAlgebra::from_family(&fam).unwrap();
        let d = random_density(3, &mut stream_rng(4, 0));
        let mut rng = stream_rng(4, 1);
        let block = pba.block(1).unwrap();
        let mut t = TruthValuation::new(&d, 0);
        assert!(!verify_homomorphism(&t, block));
        t.populate(&pba, 1, &mut rng).unwrap();
        assert!(verify_homomorphism(&t, block));

        // two disjoint atoms both valued 1
        let mut bad = block.values_for_atom(0);
        bad[0b010] = 1;
        assert!(!block.verify_values(&bad));
    }

    #[test]
    fn exactly_three_valid_assignments_on_n3_block() {
        let fam = family(3, 1, 12);
        let block = build_block(&fam.members[0]).unwrap();
        let mut passing = Vec::new();
        for bits in 0u32..256 {
            let values: Vec<u8> = (0..8).map(|i| (bits >> i & 1) as u8).collect();
            if block.verify_values(&values) {
                passing.push(values);
            }
        }
        assert_eq!(passing.len(), 3);
        for atom in 0..3 {
            assert!(passing.contains(&block.values_for_atom(atom)));
        }
    }

    #[test]
    fn fullness_examples() {
        let fam = family(3, 10, 1);
        let pba = PartialBooleanAlgebra::from_family(&fam).unwrap();
        let atoms = verify_fullness(&pba, FullnessScope::Atoms).unwrap();
        assert!(atoms.full);
        assert_eq!(atoms.pairs_checked, 870);
        assert_eq!(atoms.witnesses.len(), 870);
        let all = verify_fullness(&pba, FullnessScope::AllNontrivial).unwrap();
        assert!(all.full);
        assert_eq!(all.pairs_checked, 60 * 59);

        let same_block = atoms
            .witnesses
            .iter()
            .find(|w| w.first == ElementRef { block: 1, mask: 1 } && w.second.block == 1)
            .unwrap();
        assert_eq!(same_block.valuation[&1], 0);
    }

    #[test]
    fn compatible_pairs_share_a_block() {
        let fam = family(3, 6, 8);
        let pba = PartialBooleanAlgebra::from_family(&fam).unwrap();
        let audit = pba.compatibility_audit(1e-8).unwrap();
        assert_eq!(audit.within_violations, 0);
        assert_eq!(audit.cross_violations, 0);
        assert!(audit.within_max <= 1e-10);
        assert!(audit.cross_min > 1e-8);
    }

    #[test]
    fn valuation_dump_roundtrip() {
        let fam = family(2, 2, 1);
        let pba = PartialBooleanAlgebra::from_family(&fam).unwrap();
        let d = DensityOperator::maximally_mixed(2);
        let mut t = TruthValuation::new(&d, 7);
        t.populate(&pba, 2, &mut stream_rng(0, 0)).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        let back: TruthValuation = serde_json::from_str(&json).unwrap();
        assert_eq!(back.choices, t.choices);
        assert_eq!(back.provenance, t.provenance);
    }
}
