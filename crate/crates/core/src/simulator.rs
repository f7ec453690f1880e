//! The finite-precision measurement pipeline: an apparatus draw realizes
//! the requested observable as some nearby family member (or registered PO
//! resolution), then the system's hidden state decides the outcome.
//!
//! Two seeds drive everything. The apparatus stream is a single sequential
//! stream; the system stream for trial `t` is `stream_rng(seed_system, t)`,
//! so trials are independent of execution order.

use std::collections::BTreeMap;

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basisfamily::{BasisFamily, FamilyMember};
use crate::born;
use crate::error::{Error, Result};
use crate::opcore::{
    basis_distance, commutator, operator_norm, tol, validate_resolution, ComplexOperator, DensityOperator,
    HermitianObservable, OrthonormalBasis, C64,
};
use crate::pba::{block_weights, ElementRef, PartialBooleanAlgebra, ProjectionBlock, TruthValuation};
use crate::povmfamily::{povm_weights, sample_povm_outcome, snap_resolution, ExactConfig, ResolutionRegistry};
use crate::random::{stream_rng, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementKind {
    Pvm,
    Povm,
}

#[derive(Clone, Debug)]
pub enum Target {
    Pvm(HermitianObservable),
    Povm(Vec<ComplexOperator>),
}

#[derive(Clone, Debug)]
pub struct MeasurementRequest {
    pub target: Target,
    pub eps: f64,
    pub seed_apparatus: u64,
    pub seed_system: u64,
}

impl MeasurementRequest {
    pub fn pvm(target: HermitianObservable, eps: f64, seed_apparatus: u64, seed_system: u64) -> Result<Self> {
        check_eps(eps)?;
        Ok(MeasurementRequest {
            target: Target::Pvm(target),
            eps,
            seed_apparatus,
            seed_system,
        })
    }

    pub fn povm(target: Vec<ComplexOperator>, eps: f64, seed_apparatus: u64, seed_system: u64) -> Result<Self> {
        check_eps(eps)?;
        if !validate_resolution(&target)? {
            return Err(Error::validation("POVM target is not a resolution of the identity"));
        }
        Ok(MeasurementRequest {
            target: Target::Povm(target),
            eps,
            seed_apparatus,
            seed_system,
        })
    }

    pub fn kind(&self) -> MeasurementKind {
        match self.target {
            Target::Pvm(_) => MeasurementKind::Pvm,
            Target::Povm(_) => MeasurementKind::Povm,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.target {
            Target::Pvm(o) => o.dim(),
            Target::Povm(ops) => ops[0].dim(),
        }
    }

    fn outcome_labels(&self) -> Vec<OutcomeLabel> {
        match &self.target {
            Target::Pvm(o) => o.eigenvalues().iter().map(|&a| OutcomeLabel::Eigenvalue(a)).collect(),
            Target::Povm(ops) => (1..=ops.len()).map(OutcomeLabel::Member).collect(),
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::validation(format!("precision must be positive, got {eps}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeLabel {
    /// Eigenvalue of the target observable.
    Eigenvalue(f64),
    /// 1-based member of the target resolution.
    Member(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasurementOutcome {
    /// Index into the target's outcome list.
    pub outcome: usize,
    pub label: OutcomeLabel,
    /// Family member index (PVM) or registry tag index (POVM).
    pub realized: usize,
    pub distance: f64,
    pub trial: u64,
}

/// Aligns `target` to `member`: the outcome assignment maximizing total
/// overlap `Σ |<b_π(i)|t_i>|²` (ties to the lexicographically first
/// permutation), with each target vector's phase rotated onto its partner.
/// Returns `(atom_of_target, distance)`.
pub fn match_basis(member: &OrthonormalBasis, target: &OrthonormalBasis) -> Result<(Vec<usize>, f64)> {
    let n = member.dim();
    if target.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: target.dim(),
        });
    }
    let overlap = member.columns().adjoint() * target.columns();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in (0..n).permutations(n) {
        let score: f64 = perm.iter().enumerate().map(|(i, &a)| overlap[(a, i)].norm_sqr()).sum();
        if best.as_ref().is_none_or(|(_, s)| score > *s + tol::STRUCTURAL) {
            best = Some((perm, score));
        }
    }
    let (atom_of, _) = best.expect("n >= 1");
    // column a of the aligned target is t_i with atom_of[i] = a, phase-matched
    let mut aligned = DMatrix::<C64>::zeros(n, n);
    for (i, &a) in atom_of.iter().enumerate() {
        let z = overlap[(a, i)];
        let phase = if z.norm() > 0.0 { z.conj() / z.norm() } else { C64::new(1.0, 0.0) };
        aligned.set_column(a, &(target.columns().column(i) * phase));
    }
    let aligned = OrthonormalBasis::from_columns(aligned)?;
    let distance = basis_distance(member, &aligned)?;
    Ok((atom_of, distance))
}

/// A family member that realizes the target within precision.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PvmCandidate {
    pub member: usize,
    pub distance: f64,
    /// `outcome_of_atom[a]` is the target outcome reported when atom `a`
    /// of the member's block is true.
    pub outcome_of_atom: Vec<usize>,
}

fn candidate_for(member: &FamilyMember, target: &OrthonormalBasis) -> Result<PvmCandidate> {
    let (atom_of, distance) = match_basis(&member.basis, target)?;
    let mut outcome_of_atom = vec![0; atom_of.len()];
    for (i, &a) in atom_of.iter().enumerate() {
        outcome_of_atom[a] = i;
    }
    Ok(PvmCandidate {
        member: member.index,
        distance,
        outcome_of_atom,
    })
}

/// Every family member within `eps` of the target eigenbasis, in index
/// order. Fails with [`Error::NoCandidate`] carrying the nearest distance.
pub fn pvm_candidates(family: &BasisFamily, target: &HermitianObservable, eps: f64) -> Result<Vec<PvmCandidate>> {
    if !target.is_nondegenerate() {
        return Err(Error::DegenerateTarget);
    }
    if target.dim() != family.n {
        return Err(Error::DimensionMismatch {
            expected: family.n,
            found: target.dim(),
        });
    }
    if family.members.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let basis = target.eigenbasis();
    let mut nearest = f64::INFINITY;
    let mut found = Vec::new();
    for member in &family.members {
        let c = candidate_for(member, &basis)?;
        nearest = nearest.min(c.distance);
        if c.distance < eps {
            found.push(c);
        }
    }
    if found.is_empty() {
        return Err(Error::NoCandidate { eps, nearest });
    }
    Ok(found)
}

/// Apparatus draw: a uniformly chosen in-range family member.
pub fn realize_pvm<R: Rng + ?Sized>(
    request: &MeasurementRequest,
    family: &BasisFamily,
    rng: &mut R,
) -> Result<PvmCandidate> {
    let Target::Pvm(obs) = &request.target else {
        return Err(Error::validation("PVM realization needs an observable target"));
    };
    let mut candidates = pvm_candidates(family, obs, request.eps)?;
    let pick = rng.random_range(0..candidates.len());
    Ok(candidates.swap_remove(pick))
}

/// Realized observable `O' = Σ a_i P'_i` for a candidate.
pub fn realized_observable(block: &ProjectionBlock, target: &HermitianObservable, c: &PvmCandidate) -> ComplexOperator {
    let n = block.dim();
    (0..n).fold(ComplexOperator::zeros(n), |acc, a| {
        &acc + &block.atom(a).scale(target.eigenvalues()[c.outcome_of_atom[a]])
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PovmRealization {
    /// Position in the registry.
    pub position: usize,
    /// Tag index `m` of the realized resolution.
    pub index: usize,
    pub distance: f64,
    /// The call created a new registration.
    pub registered: bool,
}

/// Uses a registered resolution within `eps` of the targets if one exists
/// (uniformly among them), otherwise snaps at `eps/2` and registers with the
/// remaining `eps/2`.
pub fn realize_povm<R: Rng + ?Sized>(
    targets: &[ComplexOperator],
    eps: f64,
    registry: &mut ResolutionRegistry,
    cfg: &ExactConfig,
    rng: &mut R,
) -> Result<PovmRealization> {
    check_eps(eps)?;
    let hits = registry.find_within(targets, eps)?;
    let (position, registered) = if hits.is_empty() {
        let snap = snap_resolution(targets, eps / 2.0, cfg)?;
        (registry.register(&snap.resolution, eps / 2.0)?, true)
    } else {
        (hits[rng.random_range(0..hits.len())], false)
    };
    let tagged = registry.get(position).expect("registered position");
    let distance = tagged.max_distance_to(targets)?;
    if distance >= eps {
        return Err(Error::Precision(format!(
            "realized resolution at distance {distance} exceeds {eps}"
        )));
    }
    Ok(PovmRealization {
        position,
        index: tagged.index(),
        distance,
        registered,
    })
}

/// `(Tr(D A_1), ..., Tr(D A_k))`.
pub fn born_probabilities(state: &DensityOperator, resolution: &[ComplexOperator]) -> Result<Vec<f64>> {
    for a in resolution {
        if a.dim() != state.dim() {
            return Err(Error::DimensionMismatch {
                expected: state.dim(),
                found: a.dim(),
            });
        }
    }
    born::raw_weights(state, resolution)
}

/// `Tr(D P Q)` for commuting projections.
pub fn joint_probability(state: &DensityOperator, p: &ComplexOperator, q: &ComplexOperator) -> Result<f64> {
    if operator_norm(&commutator(p, q)?) > tol::ALGEBRA {
        return Err(Error::validation("joint probability needs compatible projections"));
    }
    state.expectation(&(p * q).hermitian_part())
}

/// Counts evaluations of a valuation that disagree across the partitions of
/// a block: an element taking different values in two resolutions, or a
/// resolution without exactly one true element.
pub fn noncontextuality_violations<R: Rng + ?Sized>(
    valuation: &mut TruthValuation,
    pba: &PartialBooleanAlgebra,
    block: usize,
    rng: &mut R,
) -> Result<usize> {
    let structure = pba.block(block)?.structure().clone();
    let mut seen: BTreeMap<usize, bool> = BTreeMap::new();
    let mut violations = 0;
    for resolution in &structure.resolutions {
        let mut ones = 0;
        for &e in resolution {
            let v = valuation.evaluate(pba, ElementRef { block, mask: e as u32 }, rng)?;
            ones += usize::from(v);
            if *seen.entry(e).or_insert(v) != v {
                violations += 1;
            }
        }
        if ones != 1 {
            violations += 1;
        }
    }
    Ok(violations)
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct TrialOptions {
    /// Realize the apparatus once and reuse it for every trial.
    pub fixed_apparatus: bool,
}

/// One PVM trial with the valuation that produced it, for audits.
#[derive(Clone, Debug)]
pub struct PvmTrial {
    pub outcome: MeasurementOutcome,
    pub valuation: TruthValuation,
    /// Born weights of the realized block, by target outcome.
    pub born: Vec<f64>,
    /// The trial's system stream, positioned after the realized block's
    /// draw; audits keep sampling other blocks from it.
    pub system: StreamRng,
}

/// Runs PVM trials one at a time.
pub struct PvmSession<'a> {
    request: &'a MeasurementRequest,
    pba: &'a PartialBooleanAlgebra,
    state: &'a DensityOperator,
    candidates: Vec<PvmCandidate>,
    born: Vec<Vec<f64>>,
    options: TrialOptions,
    apparatus: StreamRng,
    fixed: Option<usize>,
    labels: Vec<OutcomeLabel>,
    trial: u64,
}

impl<'a> PvmSession<'a> {
    pub fn new(
        request: &'a MeasurementRequest,
        family: &BasisFamily,
        pba: &'a PartialBooleanAlgebra,
        state: &'a DensityOperator,
        options: TrialOptions,
    ) -> Result<Self> {
        let Target::Pvm(obs) = &request.target else {
            return Err(Error::validation("PVM session needs an observable target"));
        };
        if state.dim() != obs.dim() {
            return Err(Error::DimensionMismatch {
                expected: obs.dim(),
                found: state.dim(),
            });
        }
        let candidates = pvm_candidates(family, obs, request.eps)?;
        let born = candidates
            .iter()
            .map(|c| {
                let w = block_weights(state, pba.block(c.member)?)?;
                let mut by_outcome = vec![0.0; w.len()];
                for (a, &p) in w.iter().enumerate() {
                    by_outcome[c.outcome_of_atom[a]] = p;
                }
                Ok(by_outcome)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PvmSession {
            request,
            pba,
            state,
            candidates,
            born,
            options,
            apparatus: stream_rng(request.seed_apparatus, 0),
            fixed: None,
            labels: request.outcome_labels(),
            trial: 0,
        })
    }

    pub fn candidates(&self) -> &[PvmCandidate] {
        &self.candidates
    }

    fn draw(&mut self) -> usize {
        match self.fixed {
            Some(i) if self.options.fixed_apparatus => i,
            _ => {
                let i = self.apparatus.random_range(0..self.candidates.len());
                self.fixed = Some(i);
                i
            }
        }
    }

    pub fn next_trial(&mut self) -> Result<PvmTrial> {
        let pick = self.draw();
        let candidate = &self.candidates[pick];
        let trial = self.trial;
        self.trial += 1;
        let mut system = stream_rng(self.request.seed_system, trial);
        let mut valuation = TruthValuation::new(self.state, trial);
        let atom = valuation.populate(self.pba, candidate.member, &mut system)?;
        let outcome = candidate.outcome_of_atom[atom];
        if candidate.distance >= self.request.eps {
            return Err(Error::Precision(format!(
                "realized distance {} not below {}",
                candidate.distance, self.request.eps
            )));
        }
        Ok(PvmTrial {
            outcome: MeasurementOutcome {
                outcome,
                label: self.labels[outcome],
                realized: candidate.member,
                distance: candidate.distance,
                trial,
            },
            valuation,
            born: self.born[pick].clone(),
            system,
        })
    }

    /// Atom chosen in `block` by the trial's valuation, sampling it if the
    /// block has not been queried.
    pub fn reference_atom(&self, trial: &mut PvmTrial, block: usize) -> Result<usize> {
        trial.valuation.populate(self.pba, block, &mut trial.system)
    }
}

/// Empirical joint of apparatus index and a system variable, compared to
/// the product of its marginals.
#[derive(Clone, Debug, Serialize)]
pub struct IndependenceAudit {
    pub reference_block: usize,
    pub max_deviation: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl IndependenceAudit {
    pub fn from_pairs(reference_block: usize, pairs: &[(usize, usize)]) -> Self {
        let n = pairs.len() as f64;
        let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut left: BTreeMap<usize, f64> = BTreeMap::new();
        let mut right: BTreeMap<usize, f64> = BTreeMap::new();
        for &(a, b) in pairs {
            *joint.entry((a, b)).or_default() += 1.0 / n;
            *left.entry(a).or_default() += 1.0 / n;
            *right.entry(b).or_default() += 1.0 / n;
        }
        let mut max_deviation: f64 = 0.0;
        for (&a, &pa) in &left {
            for (&b, &pb) in &right {
                let pj = joint.get(&(a, b)).copied().unwrap_or(0.0);
                max_deviation = max_deviation.max((pj - pa * pb).abs());
            }
        }
        let threshold = 4.0 / n.sqrt();
        IndependenceAudit {
            reference_block,
            max_deviation,
            threshold,
            passed: max_deviation < threshold,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReportConfig {
    pub kind: MeasurementKind,
    pub eps: f64,
    pub trials: u64,
    pub seed_apparatus: u64,
    pub seed_system: u64,
    pub fixed_apparatus: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialReport {
    pub trials: u64,
    pub labels: Vec<OutcomeLabel>,
    pub counts: Vec<u64>,
    pub empirical: Vec<f64>,
    pub born: Vec<f64>,
    pub total_variation: f64,
    /// `None` where the Born variance vanishes.
    pub z_scores: Vec<Option<f64>>,
    /// Realized index -> number of trials.
    pub realized: BTreeMap<usize, u64>,
    pub max_realized_distance: f64,
    pub independence: Option<IndependenceAudit>,
    pub config: ReportConfig,
}

/// Accumulates trial results; count vectors add, so partial tallies merge.
#[derive(Clone, Debug)]
pub struct Tally {
    pub counts: Vec<u64>,
    pub born_sum: Vec<f64>,
    pub realized: BTreeMap<usize, u64>,
    pub max_distance: f64,
}

impl Tally {
    pub fn new(k: usize) -> Self {
        Tally {
            counts: vec![0; k],
            born_sum: vec![0.0; k],
            realized: BTreeMap::new(),
            max_distance: 0.0,
        }
    }

    pub fn record(&mut self, outcome: &MeasurementOutcome, born: &[f64]) {
        self.counts[outcome.outcome] += 1;
        for (s, p) in self.born_sum.iter_mut().zip(born) {
            *s += p;
        }
        *self.realized.entry(outcome.realized).or_default() += 1;
        self.max_distance = self.max_distance.max(outcome.distance);
    }

    pub fn merge(&mut self, other: &Tally) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.born_sum.iter_mut().zip(&other.born_sum) {
            *a += b;
        }
        for (k, v) in &other.realized {
            *self.realized.entry(*k).or_default() += v;
        }
        self.max_distance = self.max_distance.max(other.max_distance);
    }

    pub fn report(&self, labels: Vec<OutcomeLabel>, config: ReportConfig) -> TrialReport {
        let trials: u64 = self.counts.iter().sum();
        let n = trials as f64;
        let empirical: Vec<f64> = self.counts.iter().map(|&c| c as f64 / n).collect();
        let born: Vec<f64> = self.born_sum.iter().map(|s| s / n).collect();
        let total_variation = 0.5 * empirical.iter().zip(&born).map(|(e, b)| (e - b).abs()).sum::<f64>();
        let z_scores = self
            .counts
            .iter()
            .zip(&born)
            .map(|(&c, &p)| {
                let var = n * p * (1.0 - p);
                (var > 0.0).then(|| (c as f64 - n * p) / var.sqrt())
            })
            .collect();
        TrialReport {
            trials,
            labels,
            counts: self.counts.clone(),
            empirical,
            born,
            total_variation,
            z_scores,
            realized: self.realized.clone(),
            max_realized_distance: self.max_distance,
            independence: None,
            config,
        }
    }
}

impl TrialReport {
    /// One row per outcome.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("outcome,label,count,empirical,born,z\n");
        for i in 0..self.counts.len() {
            let label = match self.labels[i] {
                OutcomeLabel::Eigenvalue(a) => a.to_string(),
                OutcomeLabel::Member(m) => m.to_string(),
            };
            let z = self.z_scores[i].map(|z| z.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i + 1,
                label,
                self.counts[i],
                self.empirical[i],
                self.born[i],
                z
            ));
        }
        out
    }
}

fn config_for(request: &MeasurementRequest, trials: u64, options: TrialOptions) -> ReportConfig {
    ReportConfig {
        kind: request.kind(),
        eps: request.eps,
        trials,
        seed_apparatus: request.seed_apparatus,
        seed_system: request.seed_system,
        fixed_apparatus: options.fixed_apparatus,
    }
}

/// Runs `trials` PVM trials. The report's Born distribution averages the
/// realized blocks' Born weights; the independence audit pairs the
/// apparatus draw with block 1's atom in the same valuation.
pub fn run_pvm_trials(
    request: &MeasurementRequest,
    state: &DensityOperator,
    trials: u64,
    family: &BasisFamily,
    pba: &PartialBooleanAlgebra,
    options: TrialOptions,
) -> Result<TrialReport> {
    if trials == 0 {
        return Err(Error::validation("at least one trial is required"));
    }
    let mut session = PvmSession::new(request, family, pba, state, options)?;
    let labels = request.outcome_labels();
    let mut tally = Tally::new(labels.len());
    let reference = pba.blocks()[0].index();
    let mut pairs = Vec::with_capacity(trials as usize);
    for _ in 0..trials {
        let mut trial = session.next_trial()?;
        tally.record(&trial.outcome, &trial.born);
        let atom = session.reference_atom(&mut trial, reference)?;
        pairs.push((trial.outcome.realized, atom));
    }
    let mut report = tally.report(labels, config_for(request, trials, options));
    report.independence = Some(IndependenceAudit::from_pairs(reference, &pairs));
    Ok(report)
}

/// Runs `trials` POVM trials, realizing against `registry` on every trial
/// (once with `fixed_apparatus`).
pub fn run_povm_trials(
    request: &MeasurementRequest,
    state: &DensityOperator,
    trials: u64,
    registry: &mut ResolutionRegistry,
    cfg: &ExactConfig,
    options: TrialOptions,
) -> Result<TrialReport> {
    let Target::Povm(targets) = &request.target else {
        return Err(Error::validation("POVM trials need a resolution target"));
    };
    if trials == 0 {
        return Err(Error::validation("at least one trial is required"));
    }
    if state.dim() != request.dim() {
        return Err(Error::DimensionMismatch {
            expected: request.dim(),
            found: state.dim(),
        });
    }
    let labels = request.outcome_labels();
    let mut tally = Tally::new(labels.len());
    let mut apparatus = stream_rng(request.seed_apparatus, 0);
    let mut fixed: Option<PovmRealization> = None;
    for trial in 0..trials {
        let realization = match &fixed {
            Some(r) if options.fixed_apparatus => r.clone(),
            _ => realize_povm(targets, request.eps, registry, cfg, &mut apparatus)?,
        };
        let tagged = registry.get(realization.position).expect("registered position");
        let mut system = stream_rng(request.seed_system, trial);
        let outcome = sample_povm_outcome(state, tagged, &mut system)?;
        let born = povm_weights(state, tagged)?;
        tally.record(
            &MeasurementOutcome {
                outcome,
                label: labels[outcome],
                realized: realization.index,
                distance: realization.distance,
                trial,
            },
            &born,
        );
        fixed = Some(realization);
    }
    Ok(tally.report(labels, config_for(request, trials, options)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basisfamily::{generate_family, FamilyParams};
    use crate::random::{haar_unitary, random_density};
    use nalgebra::DVector;

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

    fn observable_on(basis: &OrthonormalBasis, values: &[f64]) -> HermitianObservable {
        HermitianObservable::from_basis(basis, values).unwrap()
    }

    #[test]
    fn exact_member_is_a_candidate() {
        let fam = family(3, 5, 1);
        let obs = observable_on(&fam.members[2].basis, &[-1.0, 0.5, 2.0]);
        let c = pvm_candidates(&fam, &obs, 0.1).unwrap();
        let hit = c.iter().find(|c| c.member == 3).unwrap();
        assert!(hit.distance < 1e-9);
        // relabeling sends each atom to the eigenvalue of its own vector
        let pba = PartialBooleanAlgebra::from_family(&fam).unwrap();
        let realized = realized_observable(pba.block(3).unwrap(), &obs, hit);
        assert!(operator_norm(&(&realized - obs.op())) < 1e-9);
    }

    #[test]
    fn matching_ignores_order_and_phase() {
        let mut rng = stream_rng(4, 0);
        let u = haar_unitary(3, &mut rng);
        let b = OrthonormalBasis::from_columns(u.clone()).unwrap();
        let mut shuffled = DMatrix::<C64>::zeros(3, 3);
        let phases = [C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::from_polar(1.0, 0.3)];
        for (i, &src) in [2, 0, 1].iter().enumerate() {
            shuffled.set_column(i, &(u.column(src) * phases[i]));
        }
        let t = OrthonormalBasis::from_columns(shuffled).unwrap();
        let (atom_of, d) = match_basis(&b, &t).unwrap();
        assert_eq!(atom_of, vec![2, 0, 1]);
        assert!(d < 1e-12);
    }

    #[test]
    fn sparse_family_reports_nearest() {
        let fam = family(3, 3, 2);
        let mut rng = stream_rng(9, 0);
        let b = OrthonormalBasis::from_columns(haar_unitary(3, &mut rng)).unwrap();
        match pvm_candidates(&fam, &observable_on(&b, &[1.0, 2.0, 3.0]), 1e-3) {
            Err(Error::NoCandidate { eps, nearest }) => {
                assert_eq!(eps, 1e-3);
                assert!(nearest.is_finite() && nearest >= 1e-3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_target_rejected() {
        let fam = family(3, 2, 2);
        let obs = HermitianObservable::new(ComplexOperator::from_real_diagonal(&[1.0, 1.0, 2.0])).unwrap();
        assert!(matches!(pvm_candidates(&fam, &obs, 0.5), Err(Error::DegenerateTarget)));
    }

    #[test]
    fn apparatus_draw_is_deterministic() {
        let fam = family(3, 6, 3);
        let obs = observable_on(&fam.members[0].basis, &[0.0, 1.0, 2.0]);
        let req = MeasurementRequest::pvm(obs, 2.0, 17, 1).unwrap();
        let a = realize_pvm(&req, &fam, &mut stream_rng(17, 0)).unwrap();
        let b = realize_pvm(&req, &fam, &mut stream_rng(17, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn born_examples() {
        let n = 3;
        let fam = family(n, 2, 5);
        let pba = PartialBooleanAlgebra::from_family(&fam).unwrap();
        let block = pba.block(1).unwrap();
        let mixed = DensityOperator::maximally_mixed(n);
        for p in born_probabilities(&mixed, &block.atoms()).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        let mut rng = stream_rng(1, 1);
        let d = random_density(n, &mut rng);
        let a0 = block.atom(0);
        let marginal = d.expectation(a0).unwrap();
        assert!((joint_probability(&d, a0, a0).unwrap() - marginal).abs() < 1e-12);
        assert!(joint_probability(&d, a0, block.atom(1)).unwrap().abs() < 1e-10);
        assert!(joint_probability(&d, a0, pba.block(2).unwrap().atom(0)).is_err());
        assert!(born_probabilities(&mixed, &[ComplexOperator::identity(2)]).is_err());
    }

    #[test]
    fn pure_state_on_realized_atom() {
        let fam = family(3, 4, 6);
        let pba = PartialBooleanAlgebra::from_family(&fam).unwrap();
        let basis = &fam.members[1].basis;
        let obs = observable_on(basis, &[1.0, 2.0, 3.0]);
        let state = DensityOperator::pure(&basis.vector(1));
        let req = MeasurementRequest::pvm(obs, 1e-6, 1, 2).unwrap();
        let report = run_pvm_trials(&req, &state, 1000, &fam, &pba, TrialOptions::default()).unwrap();
        assert_eq!(report.counts, vec![0, 1000, 0]);
        assert_eq!(report.empirical.iter().sum::<f64>(), 1.0);
        assert!(report.total_variation < 1e-9);
        assert_eq!(report.realized.keys().copied().collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn hadamard_like_member_splits_evenly() {
        // n = 2: a member close to the Hadamard basis, measured on |e_1>
        let fam = family(2, 30, 8);
        let pba = PartialBooleanAlgebra::from_family(&fam).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let h = OrthonormalBasis::from_columns(DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(s, 0.0), C64::new(s, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0)],
        ))
        .unwrap();
        let obs = observable_on(&h, &[-1.0, 1.0]);
        let state = DensityOperator::pure(&DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]));
        let req = MeasurementRequest::pvm(obs, 2.0, 3, 4).unwrap();
        let opts = TrialOptions { fixed_apparatus: true };
        let report = run_pvm_trials(&req, &state, 100_000, &fam, &pba, opts).unwrap();
        let member = *report.realized.keys().next().unwrap();
        // Born oracle on the realized block, computed from basis vectors
        let b = &fam.member(member).unwrap().basis;
        let candidates = pvm_candidates(&fam, req_obs(&req), 2.0).unwrap();
        let c = candidates.iter().find(|c| c.member == member).unwrap();
        let mut expected = [0.0; 2];
        for a in 0..2 {
            expected[c.outcome_of_atom[a]] = b.vector(a)[0].norm_sqr();
        }
        for i in 0..2 {
            assert!((report.empirical[i] - expected[i]).abs() < 0.01);
            assert!((report.born[i] - expected[i]).abs() < 1e-12);
        }
    }

    fn req_obs(req: &MeasurementRequest) -> &HermitianObservable {
        match &req.target {
            Target::Pvm(o) => o,
            Target::Povm(_) => unreachable!(),
        }
    }

    #[test]
    fn mixed_state_matches_uniform() {
        let fam = family(3, 10, 7);
        let pba = PartialBooleanAlgebra::from_family(&fam).unwrap();
        let obs = observable_on(&fam.members[4].basis, &[1.0, 2.0, 3.0]);
        let req = MeasurementRequest::pvm(obs, 1.5, 5, 6).unwrap();
        let report = run_pvm_trials(&req, &DensityOperator::maximally_mixed(3), 100_000, &fam, &pba, TrialOptions::default())
            .unwrap();
        assert!(report.total_variation < 0.01);
        assert!(report.realized.len() > 1);
        assert!(report.max_realized_distance < 1.5);
        assert!(report.independence.as_ref().unwrap().passed);
        assert!(report.to_csv().lines().count() == 4);
    }

    #[test]
    fn trials_are_audited_noncontextually() {
        let fam = family(3, 4, 12);
        let pba = PartialBooleanAlgebra::from_family(&fam).unwrap();
        let obs = observable_on(&fam.members[0].basis, &[1.0, 2.0, 3.0]);
        let mut rng = stream_rng(2, 2);
        let state = random_density(3, &mut rng);
        let req = MeasurementRequest::pvm(obs, 2.0, 1, 1).unwrap();
        let mut session = PvmSession::new(&req, &fam, &pba, &state, TrialOptions::default()).unwrap();
        for _ in 0..200 {
            let mut t = session.next_trial().unwrap();
            let m = t.outcome.realized;
            assert_eq!(noncontextuality_violations(&mut t.valuation, &pba, m, &mut rng).unwrap(), 0);
        }
        // a forged valuation whose block lookup is inconsistent is caught
        // through the resolution sum check
        let mut bad = TruthValuation::from_choices(&state, [(1, 7usize)].into_iter().collect());
        assert!(noncontextuality_violations(&mut bad, &pba, 1, &mut rng).unwrap() > 0);
    }

    #[test]
    fn povm_cache_hit_and_halves() {
        let half = ComplexOperator::identity(2).scale(0.5);
        let targets = vec![half.clone(), half.clone()];
        let mut registry = ResolutionRegistry::new();
        let cfg = ExactConfig::default();
        let mut rng = stream_rng(1, 0);
        let first = realize_povm(&targets, 0.1, &mut registry, &cfg, &mut rng).unwrap();
        assert!(first.registered);
        for op in registry.get(first.position).unwrap().members.iter() {
            assert!(operator_norm(&(op - &half)) < 0.1);
        }
        let second = realize_povm(&targets, 0.1, &mut registry, &cfg, &mut rng).unwrap();
        assert!(!second.registered);
        assert_eq!(second.position, first.position);
        assert_eq!(registry.len(), 1);
        assert!(realize_povm(&targets, 1e-14, &mut ResolutionRegistry::new(), &cfg, &mut rng).is_err());
    }

    #[test]
    fn povm_trials_match_born() {
        let mut rng = stream_rng(3, 3);
        let state = random_density(3, &mut rng);
        let mut targets = Vec::new();
        let u = haar_unitary(3, &mut rng);
        let b = OrthonormalBasis::from_columns(u).unwrap();
        for i in 0..3 {
            targets.push(b.atom(i).into_op());
        }
        let req = MeasurementRequest::povm(targets, 0.2, 1, 2).unwrap();
        let mut registry = ResolutionRegistry::new();
        let report = run_povm_trials(&req, &state, 20_000, &mut registry, &ExactConfig::default(), TrialOptions::default())
            .unwrap();
        assert!(report.total_variation < 0.02);
        assert!(report.max_realized_distance < 0.2);
        assert!((report.born.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(registry.len(), 1);
    }

    #[test]
    fn request_validation() {
        assert!(MeasurementRequest::povm(vec![ComplexOperator::identity(2).scale(0.5)], 0.1, 0, 0).is_err());
        let obs = HermitianObservable::new(ComplexOperator::from_real_diagonal(&[1.0, 2.0])).unwrap();
        assert!(MeasurementRequest::pvm(obs, 0.0, 0, 0).is_err());
    }

    #[test]
    fn tallies_merge_associatively() {
        let o = |outcome, realized| MeasurementOutcome {
            outcome,
            label: OutcomeLabel::Member(outcome + 1),
            realized,
            distance: 0.1,
            trial: 0,
        };
        let mut a = Tally::new(2);
        a.record(&o(0, 1), &[0.5, 0.5]);
        let mut b = Tally::new(2);
        b.record(&o(1, 2), &[0.25, 0.75]);
        let mut whole = Tally::new(2);
        whole.record(&o(0, 1), &[0.5, 0.5]);
        whole.record(&o(1, 2), &[0.25, 0.75]);
        a.merge(&b);
        assert_eq!(a.counts, whole.counts);
        assert_eq!(a.born_sum, whole.born_sum);
        assert_eq!(a.realized, whole.realized);
    }
}
