//! Truth-function existence for arbitrary finite sets of projections or
//! positive operators.
//!
//! A truth function assigns 0 or 1 to every operator in the universe so that
//! every resolution of the identity drawn from the universe contains exactly
//! one 1. [`find_truth_functions`] enumerates them exhaustively; an empty,
//! exhausted result proves none exists (a Kochen-Specker set).

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opcore::{commutator, matrix_norm, operator_norm, ComplexOperator, Projection, C64};

#[derive(Clone, Debug)]
pub struct ProblemConfig {
    /// Operators closer than this are the same universe element.
    pub dedup_tol: f64,
    /// Tolerance for "sums to the identity".
    pub sum_tol: f64,
    /// Largest resolution searched for; `None` means `2n`.
    pub max_resolution_size: Option<usize>,
    /// Nodes the resolution search may visit before giving up.
    pub node_budget: u64,
    /// Largest universe the closure may produce.
    pub max_universe: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            dedup_tol: 1e-9,
            sum_tol: 1e-9,
            max_resolution_size: None,
            node_budget: 10_000_000,
            max_universe: 4096,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ValuationProblem {
    dim: usize,
    universe: Vec<ComplexOperator>,
    resolutions: Vec<Vec<usize>>,
    projective: bool,
}

impl ValuationProblem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn universe(&self) -> &[ComplexOperator] {
        &self.universe
    }

    pub fn resolutions(&self) -> &[Vec<usize>] {
        &self.resolutions
    }

    pub fn is_projective(&self) -> bool {
        self.projective
    }

    /// Universe index of the element equal to `op`, if any.
    pub fn find(&self, op: &ComplexOperator, tolerance: f64) -> Option<usize> {
        self.universe.iter().position(|u| close(u, op, tolerance))
    }

    /// Same universe with one more resolution.
    pub fn with_resolution(&self, members: Vec<usize>) -> Result<Self> {
        if members.iter().any(|&i| i >= self.universe.len()) {
            return Err(Error::validation("resolution references an unknown element"));
        }
        let mut next = self.clone();
        next.resolutions.push(members);
        Ok(next)
    }
}

fn close(a: &ComplexOperator, b: &ComplexOperator, tolerance: f64) -> bool {
    let diff = (a - b).into_matrix();
    // |X| <= |X|_F
    diff.norm() <= tolerance || matrix_norm(&diff) <= tolerance
}

fn dedup(ops: &[ComplexOperator], tolerance: f64) -> (Vec<ComplexOperator>, Vec<usize>) {
    let mut universe: Vec<ComplexOperator> = Vec::new();
    let mut map = Vec::with_capacity(ops.len());
    for op in ops {
        match universe.iter().position(|u| close(u, op, tolerance)) {
            Some(i) => map.push(i),
            None => {
                map.push(universe.len());
                universe.push(op.clone());
            }
        }
    }
    (universe, map)
}

fn check_dims(ops: &[ComplexOperator]) -> Result<usize> {
    let n = ops
        .first()
        .ok_or_else(|| Error::validation("no operators supplied"))?
        .dim();
    for op in ops {
        if op.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: op.dim(),
            });
        }
    }
    Ok(n)
}

fn is_projection(op: &ComplexOperator) -> bool {
    Projection::new(op.hermitian_part()).is_ok()
}

/// Closes a set of projections under complements and products of
/// commuting pairs.
fn close_projections(
    mut universe: Vec<ComplexOperator>,
    cfg: &ProblemConfig,
) -> Result<Vec<ComplexOperator>> {
    let n = universe[0].dim();
    let id = ComplexOperator::identity(n);
    let mut done = 0;
    while done < universe.len() {
        let current = universe.len();
        let mut fresh = Vec::new();
        for i in done..current {
            fresh.push(&id - &universe[i]);
            for j in 0..current {
                let (p, q) = (&universe[i], &universe[j]);
                if operator_norm(&commutator(p, q)?) <= cfg.dedup_tol {
                    fresh.push((p * q).hermitian_part());
                }
            }
        }
        done = current;
        for op in fresh {
            if !universe.iter().any(|u| close(u, &op, cfg.dedup_tol)) {
                universe.push(op);
                if universe.len() > cfg.max_universe {
                    return Err(Error::validation(format!(
                        "closure exceeded {} elements",
                        cfg.max_universe
                    )));
                }
            }
        }
    }
    Ok(universe)
}

struct ResolutionSearch<'a> {
    universe: &'a [ComplexOperator],
    id: ComplexOperator,
    orthogonal: Option<Vec<Vec<bool>>>,
    traces: Vec<f64>,
    max_size: usize,
    cfg: &'a ProblemConfig,
    nodes: u64,
    found: Vec<Vec<usize>>,
}

impl ResolutionSearch<'_> {
    fn run(&mut self, start: usize, chosen: &mut Vec<usize>, sum: &ComplexOperator) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.cfg.node_budget {
            return Err(Error::SearchCap(self.cfg.node_budget));
        }
        if !chosen.is_empty() && operator_norm(&(sum - &self.id)) <= self.cfg.sum_tol {
            self.found.push(chosen.clone());
        }
        if chosen.len() == self.max_size {
            return Ok(());
        }
        let n = self.id.dim() as f64;
        let partial_trace: f64 = chosen.iter().map(|&i| self.traces[i]).sum();
        for next in start..self.universe.len() {
            if partial_trace + self.traces[next] > n + self.cfg.sum_tol {
                continue;
            }
            if let Some(orth) = &self.orthogonal {
                if chosen.iter().any(|&c| !orth[c][next]) {
                    continue;
                }
            }
            let extended = sum + &self.universe[next];
            if self.orthogonal.is_none() {
                // the remaining members are positive, so I - sum must stay positive
                let slack = &self.id - &extended;
                if slack.min_eigenvalue() < -self.cfg.sum_tol {
                    continue;
                }
            }
            chosen.push(next);
            self.run(next + 1, chosen, &extended)?;
            chosen.pop();
        }
        Ok(())
    }
}

fn discover_resolutions(
    universe: &[ComplexOperator],
    projective: bool,
    cfg: &ProblemConfig,
) -> Result<Vec<Vec<usize>>> {
    let n = universe[0].dim();
    let orthogonal = projective.then(|| {
        universe
            .iter()
            .map(|p| {
                universe
                    .iter()
                    .map(|q| operator_norm(&(p * q)) <= cfg.sum_tol)
                    .collect()
            })
            .collect()
    });
    let mut search = ResolutionSearch {
        universe,
        id: ComplexOperator::identity(n),
        orthogonal,
        traces: universe.iter().map(|u| u.trace().re).collect(),
        max_size: cfg.max_resolution_size.unwrap_or(2 * n),
        cfg,
        nodes: 0,
        found: Vec::new(),
    };
    search.run(0, &mut Vec::new(), &ComplexOperator::zeros(n))?;
    Ok(search.found)
}

/// Deduplicates `ops`, optionally closes a projective set under complements
/// and compatible products, and discovers every resolution of the identity
/// among subsets of the universe (up to the configured size).
pub fn build_problem(ops: &[ComplexOperator], auto_close: bool, cfg: &ProblemConfig) -> Result<ValuationProblem> {
    let n = check_dims(ops)?;
    let (mut universe, _) = dedup(ops, cfg.dedup_tol);
    let projective = universe.iter().all(is_projection);
    if auto_close {
        if !projective {
            return Err(Error::validation("closure applies to projections only"));
        }
        universe = close_projections(universe, cfg)?;
    }
    let resolutions = discover_resolutions(&universe, projective, cfg)?;
    Ok(ValuationProblem {
        dim: n,
        universe,
        resolutions,
        projective,
    })
}

/// A problem with caller-supplied resolutions (indices into `ops`). No
/// further resolutions are inferred.
pub fn explicit_problem(
    ops: &[ComplexOperator],
    resolutions: &[Vec<usize>],
    cfg: &ProblemConfig,
) -> Result<ValuationProblem> {
    let n = check_dims(ops)?;
    let (universe, map) = dedup(ops, cfg.dedup_tol);
    let id = ComplexOperator::identity(n);
    let mut mapped = Vec::with_capacity(resolutions.len());
    for r in resolutions {
        if r.iter().any(|&i| i >= ops.len()) {
            return Err(Error::validation("resolution references an unknown operator"));
        }
        let sum = r
            .iter()
            .fold(ComplexOperator::zeros(n), |acc, &i| &acc + &ops[i]);
        if operator_norm(&(&sum - &id)) > cfg.sum_tol {
            return Err(Error::validation(format!("resolution {r:?} does not sum to I")));
        }
        mapped.push(r.iter().map(|&i| map[i]).collect());
    }
    let projective = universe.iter().all(is_projection);
    Ok(ValuationProblem {
        dim: n,
        universe,
        resolutions: mapped,
        projective,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct ValuationSolution {
    /// Universe index -> value.
    pub assignment: Vec<bool>,
    /// Every universe element is assigned.
    pub complete: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchOutcome {
    pub solutions: Vec<ValuationSolution>,
    /// The search space was fully explored (not cut short by the limit).
    pub exhausted: bool,
    pub nodes: u64,
}

struct Solver<'a> {
    resolutions: &'a [Vec<usize>],
    occurs: Vec<Vec<usize>>,
    assign: Vec<Option<bool>>,
    trail: Vec<usize>,
    limit: usize,
    nodes: u64,
    solutions: Vec<ValuationSolution>,
    stopped: bool,
}

impl Solver<'_> {
    fn set(&mut self, var: usize, value: bool, queue: &mut Vec<usize>) {
        self.assign[var] = Some(value);
        self.trail.push(var);
        queue.extend(self.occurs[var].iter().copied());
    }

    /// Unit propagation: a resolution holding a 1 forces its other members
    /// to 0; one with a single open member and no 1 forces it to 1.
    fn propagate(&mut self, mut queue: Vec<usize>) -> bool {
        while let Some(r) = queue.pop() {
            let mut ones = 0;
            let mut open = Vec::new();
            for &v in &self.resolutions[r] {
                match self.assign[v] {
                    Some(true) => ones += 1,
                    Some(false) => {}
                    None => open.push(v),
                }
            }
            match ones {
                0 if open.is_empty() => return false,
                0 if open.len() == 1 => self.set(open[0], true, &mut queue),
                0 => {}
                1 => {
                    for v in open {
                        self.set(v, false, &mut queue);
                    }
                }
                _ => return false,
            }
        }
        true
    }

    fn undo(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let v = self.trail.pop().expect("trail");
            self.assign[v] = None;
        }
    }

    fn pick(&self) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for r in self.resolutions {
            let open: Vec<usize> = r.iter().copied().filter(|&v| self.assign[v].is_none()).collect();
            if let Some(&first) = open.first() {
                if best.is_none_or(|(count, _)| open.len() < count) {
                    best = Some((open.len(), first));
                }
            }
        }
        best.map(|(_, v)| v)
            .or_else(|| self.assign.iter().position(Option::is_none))
    }

    fn search(&mut self) {
        if self.stopped {
            return;
        }
        self.nodes += 1;
        let Some(var) = self.pick() else {
            self.solutions.push(ValuationSolution {
                assignment: self.assign.iter().map(|v| v.expect("assigned")).collect(),
                complete: true,
            });
            if self.solutions.len() >= self.limit {
                self.stopped = true;
            }
            return;
        };
        for value in [true, false] {
            let mark = self.trail.len();
            let mut queue = Vec::new();
            self.set(var, value, &mut queue);
            if self.propagate(queue) {
                self.search();
            }
            self.undo(mark);
            if self.stopped {
                return;
            }
        }
    }
}

/// Enumerates truth functions by backtracking with unit propagation,
/// returning at most `limit` of them.
pub fn find_truth_functions(problem: &ValuationProblem, limit: usize) -> SearchOutcome {
    let size = problem.universe.len();
    let mut occurs = vec![Vec::new(); size];
    for (r, members) in problem.resolutions.iter().enumerate() {
        for &v in members {
            occurs[v].push(r);
        }
    }
    let mut solver = Solver {
        resolutions: &problem.resolutions,
        occurs,
        assign: vec![None; size],
        trail: Vec::new(),
        limit: limit.max(1),
        nodes: 0,
        solutions: Vec::new(),
        stopped: false,
    };
    if solver.propagate((0..problem.resolutions.len()).collect()) {
        solver.search();
    }
    SearchOutcome {
        solutions: solver.solutions,
        exhausted: !solver.stopped,
        nodes: solver.nodes,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FullnessCheck {
    pub full: bool,
    pub undistinguished: Vec<(usize, usize)>,
}

/// True iff every pair of distinct universe elements takes different values
/// under at least one of `solutions`.
pub fn check_fullness(problem: &ValuationProblem, solutions: &[ValuationSolution]) -> Result<FullnessCheck> {
    if solutions.is_empty() {
        return Err(Error::validation("fullness needs at least one truth function"));
    }
    let size = problem.universe.len();
    let mut undistinguished = Vec::new();
    for i in 0..size {
        for j in i + 1..size {
            if !solutions.iter().any(|s| s.assignment[i] != s.assignment[j]) {
                undistinguished.push((i, j));
            }
        }
    }
    Ok(FullnessCheck {
        full: undistinguished.is_empty(),
        undistinguished,
    })
}

/// On a projective problem, checks `t(PQ) = t(P)t(Q)` for commuting pairs
/// and `t(I - P) = 1 - t(P)` wherever the product or complement lies in the
/// universe.
pub fn audit_homomorphism(problem: &ValuationProblem, solution: &ValuationSolution, tolerance: f64) -> Result<bool> {
    let u = &problem.universe;
    let id = ComplexOperator::identity(problem.dim);
    let t = &solution.assignment;
    for i in 0..u.len() {
        if let Some(c) = problem.find(&(&id - &u[i]), tolerance) {
            if t[c] == t[i] {
                return Ok(false);
            }
        }
        for j in 0..u.len() {
            if operator_norm(&commutator(&u[i], &u[j])?) > tolerance {
                continue;
            }
            if let Some(p) = problem.find(&(&u[i] * &u[j]), tolerance) {
                if t[p] != (t[i] && t[j]) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
/// A fixture vector: plain real components or split real and imaginary parts.
pub enum VectorEntry {
    Real(Vec<f64>),
    Complex { re: Vec<f64>, im: Vec<f64> },
}

/// Fixture file contents: either vectors (resolutions are discovered from
/// orthogonality) or explicit operators with optional resolutions.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Fixture {
    Vectors {
        dim: usize,
        vectors: Vec<VectorEntry>,
    },
    Operators {
        dim: usize,
        operators: Vec<ComplexOperator>,
        #[serde(default)]
        resolutions: Option<Vec<Vec<usize>>>,
    },
}

impl Fixture {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn into_problem(self, auto_close: bool, cfg: &ProblemConfig) -> Result<ValuationProblem> {
        match self {
            Fixture::Vectors { dim, vectors } => {
                let ops = vectors
                    .into_iter()
                    .map(|v| {
                        let (re, im) = match v {
                            VectorEntry::Real(re) => {
                                let im = vec![0.0; re.len()];
                                (re, im)
                            }
                            VectorEntry::Complex { re, im } => (re, im),
                        };
                        if re.len() != dim || im.len() != dim {
                            return Err(Error::DimensionMismatch {
                                expected: dim,
                                found: re.len().max(im.len()),
                            });
                        }
                        let v = DVector::from_fn(dim, |i, _| C64::new(re[i], im[i]));
                        if v.norm() == 0.0 {
                            return Err(Error::validation("zero vector in fixture"));
                        }
                        Ok(ComplexOperator::projector(&v))
                    })
                    .collect::<Result<Vec<_>>>()?;
                build_problem(&ops, auto_close, cfg)
            }
            Fixture::Operators {
                dim,
                operators,
                resolutions,
            } => {
                if let Some(op) = operators.iter().find(|o| o.dim() != dim) {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: op.dim(),
                    });
                }
                match resolutions {
                    Some(r) => explicit_problem(&operators, &r, cfg),
                    None => build_problem(&operators, auto_close, cfg),
                }
            }
        }
    }
}

/// Universe of `k` rank-one projections onto the standard axes of `C^k`,
/// helpful for small synthetic problems.
pub fn axis_projections(k: usize) -> Vec<ComplexOperator> {
    (0..k)
        .map(|i| {
            let mut d = vec![0.0; k];
            d[i] = 1.0;
            ComplexOperator::from_real_diagonal(&d)
        })
        .collect()
}
