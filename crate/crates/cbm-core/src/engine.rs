//! Synchronous round engine: seeded simulation, deterministic replay, and
//! per-round reports that decompose every potential change.
//!
//! One round, in order: (0) active cells at or above an expression
//! threshold express and may suppress neighbors, both on start-of-round
//! potentials; (1) each remaining active cell draws once per event in
//! (vertex, event) order and fires with the probability its firing function
//! assigns to the start-of-round potential; (2) firing adds the event
//! offset and releases one ligand to every neighbor, quiescent neighbors
//! discard it; (3) the membrane function of each active cell maps what it
//! received to an offset; (4) the gradient drifts the start-of-round
//! potential toward the equilibrium; (5) the result clamps to the cell
//! floor.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cell::{
    apply_membrane, evaluate_firing, gradient_delta, validate_cell, CellDefinition, CellError,
    ExpressionRule, GradientMode, LigandId, LigandTable,
};
use crate::rational::{dyadic_lt, Rational};
use crate::topology::Topology;

/// Whether expression rules are evaluated at all.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ExecutionMode {
    /// Threshold crossings express and freeze cells.
    #[default]
    Expression,
    /// Potentials evolve forever; statuses never change.
    RawDynamics,
}

/// A full system: topology, cell definitions, and execution settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemConfig {
    pub topology: Topology,
    pub ligands: LigandTable,
    pub definitions: Vec<CellDefinition>,
    /// Definition index per vertex; length must equal the vertex count.
    pub assignment: Vec<usize>,
    pub expression_rules: Vec<ExpressionRule>,
    pub mode: ExecutionMode,
    pub gradient: GradientMode,
    /// Initial-potential overrides, replacing the definition's `q0`.
    pub initial_potentials: Vec<(usize, Rational)>,
}

/// Structural defect in a system configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    AssignmentLength { expected: usize, found: usize },
    DefinitionOutOfRange { vertex: usize, index: usize },
    LigandOutOfRange { definition: usize, ligand: u32 },
    Cell { definition: usize, error: CellError },
    DuplicateRuleLabel { label: String },
    UnknownRuleScope { label: String, name: String },
    OverrideOutOfRange { vertex: usize },
    DuplicateOverride { vertex: usize },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::AssignmentLength { expected, found } => write!(
                f,
                "assignment covers {found} vertices, topology has {expected}"
            ),
            ConfigError::DefinitionOutOfRange { vertex, index } => {
                write!(f, "vertex {vertex} uses undefined cell index {index}")
            }
            ConfigError::LigandOutOfRange { definition, ligand } => write!(
                f,
                "definition {definition} references ligand id {ligand} outside the namespace"
            ),
            ConfigError::Cell { definition, error } => {
                write!(f, "definition {definition}: {error}")
            }
            ConfigError::DuplicateRuleLabel { label } => {
                write!(f, "expression label {label:?} appears twice")
            }
            ConfigError::UnknownRuleScope { label, name } => write!(
                f,
                "expression rule {label:?} names unknown definition {name:?}"
            ),
            ConfigError::OverrideOutOfRange { vertex } => {
                write!(f, "initial potential override for missing vertex {vertex}")
            }
            ConfigError::DuplicateOverride { vertex } => {
                write!(f, "vertex {vertex} has two initial potential overrides")
            }
        }
    }
}

impl core::error::Error for ConfigError {}

impl SystemConfig {
    /// System with the same cell at every vertex.
    pub fn uniform(
        topology: Topology,
        ligands: LigandTable,
        definition: CellDefinition,
        expression_rules: Vec<ExpressionRule>,
    ) -> Self {
        let n = topology.n();
        Self {
            topology,
            ligands,
            definitions: vec![definition],
            assignment: vec![0; n],
            expression_rules,
            mode: ExecutionMode::Expression,
            gradient: GradientMode::Restoring,
            initial_potentials: Vec::new(),
        }
    }

    /// Validates referential integrity and every cell definition. Returns
    /// accumulated warnings on success.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        let n = self.topology.n();
        if self.assignment.len() != n {
            return Err(ConfigError::AssignmentLength {
                expected: n,
                found: self.assignment.len(),
            });
        }
        for (vertex, &index) in self.assignment.iter().enumerate() {
            if index >= self.definitions.len() {
                return Err(ConfigError::DefinitionOutOfRange { vertex, index });
            }
        }
        let mut warnings = Vec::new();
        for (di, def) in self.definitions.iter().enumerate() {
            warnings.extend(validate_cell(def).map_err(|error| ConfigError::Cell {
                definition: di,
                error,
            })?);
            let ligand_ids = def.events.iter().map(|e| e.ligand).chain(
                def.membrane
                    .rules
                    .iter()
                    .flat_map(|r| r.conditions.iter().map(|c| c.ligand)),
            );
            for ligand in ligand_ids {
                if ligand.0 as usize >= self.ligands.len() {
                    return Err(ConfigError::LigandOutOfRange {
                        definition: di,
                        ligand: ligand.0,
                    });
                }
            }
        }
        for (i, rule) in self.expression_rules.iter().enumerate() {
            if self.expression_rules[..i]
                .iter()
                .any(|r| r.label == rule.label)
            {
                return Err(ConfigError::DuplicateRuleLabel {
                    label: rule.label.clone(),
                });
            }
            if let Some(names) = &rule.applies_to {
                for name in names {
                    if !self.definitions.iter().any(|d| &d.name == name) {
                        return Err(ConfigError::UnknownRuleScope {
                            label: rule.label.clone(),
                            name: name.clone(),
                        });
                    }
                }
            }
        }
        let mut seen = vec![false; n];
        for &(vertex, _) in &self.initial_potentials {
            if vertex >= n {
                return Err(ConfigError::OverrideOutOfRange { vertex });
            }
            if seen[vertex] {
                return Err(ConfigError::DuplicateOverride { vertex });
            }
            seen[vertex] = true;
        }
        Ok(warnings)
    }

    /// Start-of-round-1 state: per-vertex `q0` with overrides applied, all
    /// cells active.
    pub fn initial_state(&self) -> SystemState {
        let mut potentials: Vec<Rational> = self
            .assignment
            .iter()
            .map(|&i| self.definitions[i].q0.clone())
            .collect();
        for (vertex, value) in &self.initial_potentials {
            potentials[*vertex] = value.clone();
        }
        SystemState {
            round: 1,
            potentials,
            statuses: vec![CellStatus::Active; self.topology.n()],
        }
    }

    /// Membership mask of cells that have expressed `label`.
    pub fn expressed_mask(&self, state: &SystemState, label: &str) -> Vec<bool> {
        state
            .statuses
            .iter()
            .map(|s| match s {
                CellStatus::Expressed { rule, .. } => self.expression_rules[*rule].label == label,
                _ => false,
            })
            .collect()
    }
}

/// Lifecycle of one cell. Expressed and suppressed cells are quiescent:
/// their potential freezes and they neither fire nor receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CellStatus {
    Active,
    Expressed { rule: usize, round: u64 },
    Suppressed { rule: usize, round: u64 },
}

impl CellStatus {
    pub fn is_active(&self) -> bool {
        matches!(self, CellStatus::Active)
    }
}

/// Potentials and statuses at the start of `round`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SystemState {
    pub round: u64,
    pub potentials: Vec<Rational>,
    pub statuses: Vec<CellStatus>,
}

/// Source of fire/hold decisions. The engine asks once per active cell and
/// event, in ascending (vertex, event) order, every round.
pub trait FiringDecider {
    fn fires(&mut self, vertex: usize, event: usize, probability: &Rational) -> bool;
}

/// Identifier of the pinned randomized-decider algorithm: ChaCha8 seeded
/// via `seed_from_u64`, one 53-bit draw per decision, fire iff
/// `draw / 2^53 < p` compared exactly.
pub const RNG_ALGORITHM: &str = "chacha8:seed-u64:u53:v1";

/// The production decider: seeded, replayable, one draw per decision
/// whether or not the probability is trivial.
#[derive(Debug, Clone)]
pub struct SeededDecider {
    rng: ChaCha8Rng,
}

impl SeededDecider {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl FiringDecider for SeededDecider {
    fn fires(&mut self, _vertex: usize, _event: usize, probability: &Rational) -> bool {
        let draw = self.rng.next_u64() >> 11;
        dyadic_lt(draw, 53, probability)
    }
}

/// Decider that replays a fixed script of decisions. Intended for tests and
/// for pinning down exact trajectories.
#[derive(Debug, Clone)]
pub struct ScriptedDecider {
    script: Vec<bool>,
    next: usize,
}

impl ScriptedDecider {
    pub fn new(script: Vec<bool>) -> Self {
        Self { script, next: 0 }
    }
}

impl FiringDecider for ScriptedDecider {
    fn fires(&mut self, vertex: usize, event: usize, _probability: &Rational) -> bool {
        let decision = self
            .script
            .get(self.next)
            .unwrap_or_else(|| panic!("script exhausted at vertex {vertex} event {event}"));
        self.next += 1;
        *decision
    }
}

/// An expression at the start of a round, with the neighbors it suppressed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpressionRecord {
    pub vertex: usize,
    pub rule: usize,
    pub label: String,
    pub suppressed: Vec<usize>,
}

/// Received count of one ligand species at one cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LigandCount {
    pub ligand: LigandId,
    /// Raw copies delivered.
    pub count: u32,
    /// Copies that actually bound after the binding cap.
    pub bound: u32,
}

/// Everything that happened to one active cell in one round. The fields
/// decompose the potential change exactly:
/// `end = max(start + event_offset + membrane_offset + gradient_offset, floor)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellRound {
    pub vertex: usize,
    pub start: Rational,
    /// Indices of events that fired.
    pub fired: Vec<usize>,
    pub emitted: Vec<LigandId>,
    pub received: Vec<LigandCount>,
    pub event_offset: Rational,
    pub membrane_offset: Rational,
    pub gradient_offset: Rational,
    pub floor_clamped: bool,
    pub end: Rational,
}

impl CellRound {
    /// Recomputes the decomposition identity against the cell floor.
    pub fn decomposition_holds(&self, omega: &Rational) -> bool {
        let sum = &self.start + &self.event_offset + &self.membrane_offset + &self.gradient_offset;
        if &sum < omega {
            self.floor_clamped && &self.end == omega
        } else {
            !self.floor_clamped && self.end == sum
        }
    }
}

/// Record of one executed round. `cells` covers exactly the cells that were
/// active during the round, ascending by vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundReport {
    pub round: u64,
    pub expressions: Vec<ExpressionRecord>,
    pub cells: Vec<CellRound>,
}

/// Executes one round in place and reports it.
pub fn step<D: FiringDecider + ?Sized>(
    config: &SystemConfig,
    state: &mut SystemState,
    decider: &mut D,
) -> RoundReport {
    let n = config.topology.n();
    let round = state.round;
    let num_ligands = config.ligands.len();

    let mut expressions: Vec<ExpressionRecord> = Vec::new();
    if config.mode == ExecutionMode::Expression && !config.expression_rules.is_empty() {
        let applicable: Vec<Vec<usize>> = config
            .definitions
            .iter()
            .map(|def| {
                config
                    .expression_rules
                    .iter()
                    .enumerate()
                    .filter(|(_, rule)| rule.covers(&def.name))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        let mut crossers: Vec<(usize, usize)> = Vec::new();
        for v in 0..n {
            if !state.statuses[v].is_active() {
                continue;
            }
            for &ri in &applicable[config.assignment[v]] {
                if state.potentials[v] >= config.expression_rules[ri].threshold {
                    crossers.push((v, ri));
                    break;
                }
            }
        }
        // All simultaneous crossers express; only non-crossers can be
        // suppressed.
        for &(v, ri) in &crossers {
            state.statuses[v] = CellStatus::Expressed { rule: ri, round };
        }
        for &(v, ri) in &crossers {
            let rule = &config.expression_rules[ri];
            let mut suppressed = Vec::new();
            if rule.suppress_neighbors {
                for u in config.topology.neighbors(v) {
                    if state.statuses[u].is_active() && state.potentials[u] < rule.threshold {
                        state.statuses[u] = CellStatus::Suppressed { rule: ri, round };
                        suppressed.push(u);
                    }
                }
            }
            expressions.push(ExpressionRecord {
                vertex: v,
                rule: ri,
                label: rule.label.clone(),
                suppressed,
            });
        }
    }

    let mut cells: Vec<CellRound> = Vec::new();
    let mut received = vec![0u32; n * num_ligands];
    let complete = config.topology.is_complete();
    let mut totals = vec![0u32; num_ligands];

    for v in 0..n {
        if !state.statuses[v].is_active() {
            continue;
        }
        let def = &config.definitions[config.assignment[v]];
        let start = state.potentials[v].clone();
        let mut fired = Vec::new();
        let mut emitted = Vec::new();
        let mut event_offset = Rational::from_integer(0.into());
        for (ei, event) in def.events.iter().enumerate() {
            let p = evaluate_firing(&event.firing, &start);
            if decider.fires(v, ei, &p) {
                fired.push(ei);
                emitted.push(event.ligand);
                event_offset += &event.offset;
                let lig = event.ligand.0 as usize;
                if complete {
                    totals[lig] += 1;
                } else {
                    for u in config.topology.neighbors(v) {
                        if state.statuses[u].is_active() {
                            received[u * num_ligands + lig] += 1;
                        }
                    }
                }
            }
        }
        cells.push(CellRound {
            vertex: v,
            start,
            fired,
            emitted,
            received: Vec::new(),
            event_offset,
            membrane_offset: Rational::from_integer(0.into()),
            gradient_offset: Rational::from_integer(0.into()),
            floor_clamped: false,
            end: Rational::from_integer(0.into()),
        });
    }

    if complete && num_ligands > 0 {
        // On a complete graph every active cell receives the global total
        // minus its own emissions.
        for cell in &cells {
            let base = cell.vertex * num_ligands;
            received[base..base + num_ligands].copy_from_slice(&totals);
            for lig in &cell.emitted {
                received[base + lig.0 as usize] -= 1;
            }
        }
    }

    for cell in &mut cells {
        let def = &config.definitions[config.assignment[cell.vertex]];
        let slice = &received[cell.vertex * num_ligands..(cell.vertex + 1) * num_ligands];
        cell.received = slice
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(lig, &count)| LigandCount {
                ligand: LigandId(lig as u32),
                count,
                bound: count.min(def.membrane.binding_bound),
            })
            .collect();
        cell.membrane_offset = apply_membrane(&def.membrane, slice);
        cell.gradient_offset =
            gradient_delta(&cell.start, &def.sigma, &def.lambda, config.gradient);
        let sum = &cell.start + &cell.event_offset + &cell.membrane_offset + &cell.gradient_offset;
        if sum < def.omega {
            cell.floor_clamped = true;
            cell.end = def.omega.clone();
        } else {
            cell.end = sum;
        }
        state.potentials[cell.vertex] = cell.end.clone();
    }

    state.round += 1;
    RoundReport {
        round,
        expressions,
        cells,
    }
}

/// When a run halts before its round budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopCondition {
    /// Run the full budget.
    RoundBudget,
    /// Stop on the first expression of this label.
    FirstExpression(String),
    /// Stop on the first expression of any label.
    AnyExpression,
    /// Stop once no cell is active.
    AllInactive,
    /// Stop once statuses are unchanged for this many consecutive rounds.
    StatusFixedPoint { window: u64 },
}

/// Why a run ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    BudgetExhausted,
    Expressed { label: String, round: u64 },
    AllInactive { round: u64 },
    StatusesFixed { round: u64 },
}

/// A completed run: enough to replay it exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub config: SystemConfig,
    pub seed: u64,
    pub rng_algorithm: String,
    pub max_rounds: u64,
    pub stop: StopCondition,
    pub reports: Vec<RoundReport>,
    pub stop_reason: StopReason,
    pub final_state: SystemState,
}

/// Runs from the initial state with a seeded decider until the stop
/// condition or the round budget hits.
pub fn run(config: &SystemConfig, seed: u64, max_rounds: u64, stop: &StopCondition) -> Trace {
    let mut state = config.initial_state();
    let mut decider = SeededDecider::new(seed);
    let mut reports = Vec::new();
    let mut unchanged: u64 = 0;
    let mut stop_reason = StopReason::BudgetExhausted;
    for _ in 0..max_rounds {
        let report = step(config, &mut state, &mut decider);
        let round = report.round;
        let status_change = !report.expressions.is_empty();
        reports.push(report);
        let last = reports.last().expect("just pushed");
        match stop {
            StopCondition::RoundBudget => {}
            StopCondition::FirstExpression(label) => {
                if last.expressions.iter().any(|e| &e.label == label) {
                    stop_reason = StopReason::Expressed {
                        label: label.clone(),
                        round,
                    };
                    break;
                }
            }
            StopCondition::AnyExpression => {
                if let Some(e) = last.expressions.first() {
                    stop_reason = StopReason::Expressed {
                        label: e.label.clone(),
                        round,
                    };
                    break;
                }
            }
            StopCondition::AllInactive => {}
            StopCondition::StatusFixedPoint { window } => {
                unchanged = if status_change { 0 } else { unchanged + 1 };
                if unchanged >= *window {
                    stop_reason = StopReason::StatusesFixed { round };
                    break;
                }
            }
        }
        // All-inactive always ends the run early: nothing can change after.
        if state.statuses.iter().all(|s| !s.is_active()) {
            stop_reason = StopReason::AllInactive { round };
            break;
        }
    }
    Trace {
        config: config.clone(),
        seed,
        rng_algorithm: String::from(RNG_ALGORITHM),
        max_rounds,
        stop: stop.clone(),
        reports,
        stop_reason,
        final_state: state,
    }
}

/// Replay failure: the run is not a pure function of its inputs, or the
/// trace was produced by a different decider algorithm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayError {
    AlgorithmMismatch { expected: String, found: String },
    ReportMismatch { round: u64 },
    ReportCountMismatch { expected: usize, found: usize },
    FinalStateMismatch,
    StopReasonMismatch,
}

impl fmt::Display for ReplayError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayError::AlgorithmMismatch { expected, found } => {
                write!(
                    f,
                    "trace uses decider {found:?}, this build pins {expected:?}"
                )
            }
            ReplayError::ReportMismatch { round } => {
                write!(f, "replay diverged at round {round}")
            }
            ReplayError::ReportCountMismatch { expected, found } => {
                write!(f, "replay produced {found} rounds, trace has {expected}")
            }
            ReplayError::FinalStateMismatch => write!(f, "replay final state diverged"),
            ReplayError::StopReasonMismatch => write!(f, "replay stop reason diverged"),
        }
    }
}

impl core::error::Error for ReplayError {}

/// Re-executes a trace from its own config and seed and checks that every
/// report matches bit for bit.
pub fn replay(trace: &Trace) -> Result<Trace, ReplayError> {
    if trace.rng_algorithm != RNG_ALGORITHM {
        return Err(ReplayError::AlgorithmMismatch {
            expected: String::from(RNG_ALGORITHM),
            found: trace.rng_algorithm.clone(),
        });
    }
    let again = run(&trace.config, trace.seed, trace.max_rounds, &trace.stop);
    for (a, b) in trace.reports.iter().zip(&again.reports) {
        if a != b {
            return Err(ReplayError::ReportMismatch { round: a.round });
        }
    }
    if trace.reports.len() != again.reports.len() {
        return Err(ReplayError::ReportCountMismatch {
            expected: trace.reports.len(),
            found: again.reports.len(),
        });
    }
    if trace.final_state != again.final_state {
        return Err(ReplayError::FinalStateMismatch);
    }
    if trace.stop_reason != again.stop_reason {
        return Err(ReplayError::StopReasonMismatch);
    }
    Ok(again)
}
