//! Counter machines and their compilation to cell systems.
//!
//! A machine is a set of counters and states with guarded transitions:
//! each non-halt state tests one counter for zero versus positive, and
//! each transition moves to a state while incrementing or decrementing one
//! counter. The compiler lays the machine out as one cell per counter,
//! state, and transition on a complete graph; the simulation alternates
//! announcement rounds (state and counter status broadcast) with actuation
//! rounds (the enabled transition fires), so machine step `t` corresponds
//! to simulation round `2t - 1` and a machine halting after `s` steps
//! expresses `halt` at round `2s + 1`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::One;

use crate::cell::{
    BioelectricEvent, CellDefinition, CountPredicate, ExpressionRule, FiringFunction, LigandTable,
    MembraneCondition, MembraneFunction, MembraneRule,
};
use crate::engine::{ExecutionMode, RoundReport, SystemConfig};
use crate::rational::{as_u64, int, rat, Rational};
use crate::topology::Topology;

/// Label expressed by halt-state cells.
pub const LABEL_HALT: &str = "halt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CmState {
    pub name: String,
    pub halt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterStatus {
    Zero,
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterOp {
    Inc,
    Dec,
}

/// Transition guard: either a concrete (counter, status) test or a
/// wildcard that fires regardless, to be expanded before validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Guard {
    Wildcard,
    Test {
        counter: usize,
        status: CounterStatus,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub state: usize,
    pub guard: Guard,
    pub to: usize,
    pub op_counter: usize,
    pub op: CounterOp,
}

/// A counter machine. Counters hold their initial values; states and
/// counters are referenced by index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterMachine {
    pub counters: Vec<u64>,
    pub states: Vec<CmState>,
    pub start: usize,
    pub transitions: Vec<Transition>,
}

/// Well-formedness violations, collected exhaustively.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CmViolation {
    NoCounters,
    NoStates,
    StartOutOfRange {
        start: usize,
    },
    DuplicateStateName {
        name: String,
    },
    StateOutOfRange {
        transition: usize,
    },
    TargetOutOfRange {
        transition: usize,
    },
    CounterOutOfRange {
        transition: usize,
    },
    WildcardPresent {
        transition: usize,
    },
    HaltStateHasTransitions {
        state: usize,
    },
    /// A state's transitions test more than one counter.
    MultipleCountersTested {
        state: usize,
    },
    /// A non-halt state lacks a transition for this status.
    MissingCase {
        state: usize,
        status: CounterStatus,
    },
    /// A state has two transitions for the same status.
    DuplicateCase {
        state: usize,
        status: CounterStatus,
    },
}

impl fmt::Display for CmViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CmViolation::NoCounters => write!(f, "machine has no counters"),
            CmViolation::NoStates => write!(f, "machine has no states"),
            CmViolation::StartOutOfRange { start } => {
                write!(f, "start state {start} out of range")
            }
            CmViolation::DuplicateStateName { name } => {
                write!(f, "state name {name:?} appears twice")
            }
            CmViolation::StateOutOfRange { transition } => {
                write!(f, "transition {transition} leaves an unknown state")
            }
            CmViolation::TargetOutOfRange { transition } => {
                write!(f, "transition {transition} targets an unknown state")
            }
            CmViolation::CounterOutOfRange { transition } => {
                write!(f, "transition {transition} references an unknown counter")
            }
            CmViolation::WildcardPresent { transition } => {
                write!(f, "transition {transition} is an unexpanded wildcard")
            }
            CmViolation::HaltStateHasTransitions { state } => {
                write!(f, "halt state {state} has outgoing transitions")
            }
            CmViolation::MultipleCountersTested { state } => {
                write!(f, "state {state} tests more than one counter")
            }
            CmViolation::MissingCase { state, status } => {
                write!(f, "state {state} has no transition for status {status:?}")
            }
            CmViolation::DuplicateCase { state, status } => {
                write!(f, "state {state} has two transitions for status {status:?}")
            }
        }
    }
}

/// Replaces every wildcard guard with a zero and a positive test on the
/// first counter. Errors if the machine has no counters.
pub fn expand_wildcards(cm: &CounterMachine) -> Result<CounterMachine, CmViolation> {
    if cm.counters.is_empty() {
        return Err(CmViolation::NoCounters);
    }
    let mut out = cm.clone();
    out.transitions = Vec::with_capacity(cm.transitions.len());
    for t in &cm.transitions {
        match t.guard {
            Guard::Wildcard => {
                for status in [CounterStatus::Zero, CounterStatus::Positive] {
                    out.transitions.push(Transition {
                        guard: Guard::Test { counter: 0, status },
                        ..t.clone()
                    });
                }
            }
            Guard::Test { .. } => out.transitions.push(t.clone()),
        }
    }
    Ok(out)
}

/// A machine that passed [`validate_well_formed`]: wildcards expanded,
/// every non-halt state tests exactly one counter with exactly one
/// transition per status, halt states have no exits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WellFormedCm {
    machine: CounterMachine,
    /// Per non-halt state: (tested counter, transition index for Zero,
    /// transition index for Positive).
    dispatch: Vec<Option<(usize, usize, usize)>>,
}

impl WellFormedCm {
    pub fn machine(&self) -> &CounterMachine {
        &self.machine
    }

    fn transition_for(&self, state: usize, status: CounterStatus) -> usize {
        let (_, zero, positive) = self.dispatch[state].expect("non-halt state");
        match status {
            CounterStatus::Zero => zero,
            CounterStatus::Positive => positive,
        }
    }
}

/// Checks structural well-formedness, collecting every violation.
pub fn validate_well_formed(cm: &CounterMachine) -> Result<WellFormedCm, Vec<CmViolation>> {
    let mut violations = Vec::new();
    if cm.counters.is_empty() {
        violations.push(CmViolation::NoCounters);
    }
    if cm.states.is_empty() {
        violations.push(CmViolation::NoStates);
    }
    if cm.start >= cm.states.len() {
        violations.push(CmViolation::StartOutOfRange { start: cm.start });
    }
    for (i, state) in cm.states.iter().enumerate() {
        if cm.states[..i].iter().any(|s| s.name == state.name) {
            violations.push(CmViolation::DuplicateStateName {
                name: state.name.clone(),
            });
        }
    }
    let mut by_state: Vec<Vec<(usize, usize, CounterStatus)>> = vec![Vec::new(); cm.states.len()];
    for (ti, t) in cm.transitions.iter().enumerate() {
        if t.state >= cm.states.len() {
            violations.push(CmViolation::StateOutOfRange { transition: ti });
            continue;
        }
        if t.to >= cm.states.len() {
            violations.push(CmViolation::TargetOutOfRange { transition: ti });
        }
        if t.op_counter >= cm.counters.len() {
            violations.push(CmViolation::CounterOutOfRange { transition: ti });
        }
        match t.guard {
            Guard::Wildcard => violations.push(CmViolation::WildcardPresent { transition: ti }),
            Guard::Test { counter, status } => {
                if counter >= cm.counters.len() {
                    violations.push(CmViolation::CounterOutOfRange { transition: ti });
                } else {
                    by_state[t.state].push((ti, counter, status));
                }
            }
        }
    }
    let mut dispatch: Vec<Option<(usize, usize, usize)>> = vec![None; cm.states.len()];
    for (si, state) in cm.states.iter().enumerate() {
        let cases = &by_state[si];
        if state.halt {
            if !cases.is_empty() {
                violations.push(CmViolation::HaltStateHasTransitions { state: si });
            }
            continue;
        }
        let counter = match cases.first() {
            Some(&(_, c, _)) => c,
            None => {
                violations.push(CmViolation::MissingCase {
                    state: si,
                    status: CounterStatus::Zero,
                });
                violations.push(CmViolation::MissingCase {
                    state: si,
                    status: CounterStatus::Positive,
                });
                continue;
            }
        };
        if cases.iter().any(|&(_, c, _)| c != counter) {
            violations.push(CmViolation::MultipleCountersTested { state: si });
            continue;
        }
        let mut zero = None;
        let mut positive = None;
        for &(ti, _, status) in cases {
            let slot = match status {
                CounterStatus::Zero => &mut zero,
                CounterStatus::Positive => &mut positive,
            };
            if slot.is_some() {
                violations.push(CmViolation::DuplicateCase { state: si, status });
            } else {
                *slot = Some(ti);
            }
        }
        match (zero, positive) {
            (Some(z), Some(p)) => dispatch[si] = Some((counter, z, p)),
            (z, p) => {
                if z.is_none() {
                    violations.push(CmViolation::MissingCase {
                        state: si,
                        status: CounterStatus::Zero,
                    });
                }
                if p.is_none() {
                    violations.push(CmViolation::MissingCase {
                        state: si,
                        status: CounterStatus::Positive,
                    });
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(WellFormedCm {
            machine: cm.clone(),
            dispatch,
        })
    } else {
        Err(violations)
    }
}

/// Machine configuration before step `step` (so step 0 is the initial
/// configuration).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CmEntry {
    pub step: u64,
    pub state: usize,
    pub counters: Vec<u64>,
}

/// A run of the reference interpreter or of the decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CmTrace {
    pub entries: Vec<CmEntry>,
    pub halted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CmRunError {
    /// The machine decremented a zero counter.
    DecrementAtZero { step: u64, counter: usize },
}

impl fmt::Display for CmRunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CmRunError::DecrementAtZero { step, counter } => {
                write!(f, "step {step} decrements counter {counter} at zero")
            }
        }
    }
}

impl core::error::Error for CmRunError {}

/// Reference interpreter. Runs until a halt state or `max_steps`
/// transitions, recording the configuration before each step.
pub fn interpret(wf: &WellFormedCm, max_steps: u64) -> Result<CmTrace, CmRunError> {
    let cm = &wf.machine;
    let mut counters = cm.counters.clone();
    let mut state = cm.start;
    let mut entries = vec![CmEntry {
        step: 0,
        state,
        counters: counters.clone(),
    }];
    for step in 1..=max_steps {
        if cm.states[state].halt {
            break;
        }
        let (tested, _, _) = wf.dispatch[state].expect("non-halt state has dispatch");
        let status = if counters[tested] == 0 {
            CounterStatus::Zero
        } else {
            CounterStatus::Positive
        };
        let t = &cm.transitions[wf.transition_for(state, status)];
        match t.op {
            CounterOp::Inc => counters[t.op_counter] += 1,
            CounterOp::Dec => {
                if counters[t.op_counter] == 0 {
                    return Err(CmRunError::DecrementAtZero {
                        step,
                        counter: t.op_counter,
                    });
                }
                counters[t.op_counter] -= 1;
            }
        }
        state = t.to;
        entries.push(CmEntry {
            step,
            state,
            counters: counters.clone(),
        });
        if cm.states[state].halt {
            return Ok(CmTrace {
                entries,
                halted: true,
            });
        }
    }
    let halted = cm.states[state].halt;
    Ok(CmTrace { entries, halted })
}

/// Vertex layout of a compiled machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CmLayout {
    pub counter_cells: Vec<usize>,
    pub state_cells: Vec<usize>,
    pub transition_cells: Vec<usize>,
}

impl CmLayout {
    pub fn total_cells(&self) -> usize {
        self.counter_cells.len() + self.state_cells.len() + self.transition_cells.len()
    }
}

/// A compiled machine: the cell system plus the layout needed to read
/// machine configurations back out of its traces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledSystem {
    pub config: SystemConfig,
    pub layout: CmLayout,
}

fn membrane_rule(conditions: Vec<(crate::cell::LigandId, u32)>, offset: Rational) -> MembraneRule {
    MembraneRule {
        conditions: conditions
            .into_iter()
            .map(|(ligand, k)| MembraneCondition {
                ligand,
                predicate: CountPredicate::AtLeast(k),
            })
            .collect(),
        offset,
    }
}

/// Compiles a well-formed machine to a deterministic cell system on a
/// complete graph: one cell per counter, state, and transition.
pub fn compile(wf: &WellFormedCm) -> CompiledSystem {
    let cm = &wf.machine;
    let mut ligands = LigandTable::new();
    let nc = cm.counters.len();
    let ns = cm.states.len();
    let nt = cm.transitions.len();

    let zero_lig: Vec<_> = (0..nc)
        .map(|i| ligands.intern(&format!("ZERO_{}", i + 1)))
        .collect();
    let nonzero_lig: Vec<_> = (0..nc)
        .map(|i| ligands.intern(&format!("NONZERO_{}", i + 1)))
        .collect();
    let inc_lig: Vec<_> = (0..nc)
        .map(|i| ligands.intern(&format!("INC_{}", i + 1)))
        .collect();
    let dec_lig: Vec<_> = (0..nc)
        .map(|i| ligands.intern(&format!("DEC_{}", i + 1)))
        .collect();
    let state_lig: Vec<_> = cm
        .states
        .iter()
        .map(|s| ligands.intern(&format!("STATE_{}", s.name)))
        .collect();
    let astate_lig: Vec<_> = cm
        .states
        .iter()
        .map(|s| ligands.intern(&format!("ASTATE_{}", s.name)))
        .collect();

    let mut definitions = Vec::with_capacity(nc + ns + nt);

    // Counter cells announce their zero/positive status every round and
    // apply increments and decrements through the membrane. The potential
    // is always the counter value, an integer, so a status step at 1/2
    // splits "zero or below" from "positive" exactly and the two
    // announcements are complementary at every potential.
    for (i, &value) in cm.counters.iter().enumerate() {
        let q0 = int(value as i64);
        definitions.push(CellDefinition {
            name: format!("counter_{}", i + 1),
            sigma: q0.clone(),
            q0,
            lambda: int(0),
            omega: int(-1),
            membrane: MembraneFunction {
                binding_bound: 1,
                rules: vec![
                    membrane_rule(vec![(inc_lig[i], 1)], int(1)),
                    membrane_rule(vec![(dec_lig[i], 1)], int(-1)),
                ],
            },
            events: vec![
                BioelectricEvent {
                    firing: FiringFunction::step_down(rat(1, 2), int(1), int(0)),
                    offset: int(0),
                    ligand: zero_lig[i],
                },
                BioelectricEvent {
                    firing: FiringFunction::step_up(rat(1, 2), int(0), int(1)),
                    offset: int(0),
                    ligand: nonzero_lig[i],
                },
            ],
        });
    }

    // State cells hold 1 exactly while current: announcing costs the 1,
    // the activation ligand restores it on the successor.
    for (j, state) in cm.states.iter().enumerate() {
        let q0 = if j == cm.start { int(1) } else { int(0) };
        definitions.push(CellDefinition {
            name: format!("state_{}", state.name),
            sigma: q0.clone(),
            q0,
            lambda: int(0),
            omega: int(-1),
            membrane: MembraneFunction {
                binding_bound: 1,
                rules: vec![membrane_rule(vec![(astate_lig[j], 1)], int(1))],
            },
            events: vec![BioelectricEvent {
                firing: FiringFunction::step_up(int(1), int(0), int(1)),
                offset: int(-1),
                ligand: state_lig[j],
            }],
        });
    }

    // Transition cells gate on hearing both their source state and the
    // matching counter status in the same round; they then activate the
    // successor state and apply the counter operation, and the gradient
    // returns them to rest.
    for (ti, t) in cm.transitions.iter().enumerate() {
        let (counter, status) = match t.guard {
            Guard::Test { counter, status } => (counter, status),
            Guard::Wildcard => unreachable!("well-formed machines have no wildcards"),
        };
        let status_ligand = match status {
            CounterStatus::Zero => zero_lig[counter],
            CounterStatus::Positive => nonzero_lig[counter],
        };
        let op_ligand = match t.op {
            CounterOp::Inc => inc_lig[t.op_counter],
            CounterOp::Dec => dec_lig[t.op_counter],
        };
        definitions.push(CellDefinition {
            name: format!("transition_{ti}"),
            q0: int(0),
            sigma: int(0),
            lambda: int(1),
            omega: int(-1),
            membrane: MembraneFunction {
                binding_bound: 1,
                rules: vec![membrane_rule(
                    vec![(state_lig[t.state], 1), (status_ligand, 1)],
                    int(1),
                )],
            },
            events: vec![
                BioelectricEvent {
                    firing: FiringFunction::step_up(int(1), int(0), int(1)),
                    offset: int(0),
                    ligand: astate_lig[t.to],
                },
                BioelectricEvent {
                    firing: FiringFunction::step_up(int(1), int(0), int(1)),
                    offset: int(0),
                    ligand: op_ligand,
                },
            ],
        });
    }

    let halt_names: Vec<String> = cm
        .states
        .iter()
        .filter(|s| s.halt)
        .map(|s| format!("state_{}", s.name))
        .collect();
    let expression_rules = if halt_names.is_empty() {
        Vec::new()
    } else {
        vec![ExpressionRule {
            label: String::from(LABEL_HALT),
            threshold: Rational::one(),
            suppress_neighbors: false,
            applies_to: Some(halt_names),
        }]
    };

    let total = definitions.len();
    let config = SystemConfig {
        topology: Topology::complete(total),
        ligands,
        assignment: (0..total).collect(),
        definitions,
        expression_rules,
        mode: ExecutionMode::Expression,
        gradient: Default::default(),
        initial_potentials: Vec::new(),
    };
    let layout = CmLayout {
        counter_cells: (0..nc).collect(),
        state_cells: (nc..nc + ns).collect(),
        transition_cells: (nc + ns..total).collect(),
    };
    CompiledSystem { config, layout }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    /// A cell expected to be active is missing from a report.
    MissingCell { round: u64, vertex: usize },
    /// A counter cell's potential is not a non-negative integer.
    BadCounterValue { round: u64, vertex: usize },
    /// Not exactly one state cell held potential >= 1.
    AmbiguousState { round: u64, current: Vec<usize> },
    /// Not exactly one transition cell was primed in an actuation round.
    AmbiguousTransition { round: u64, primed: usize },
    /// A halt expression came from a non-state vertex.
    ForeignHalt { round: u64, vertex: usize },
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeError::MissingCell { round, vertex } => {
                write!(f, "round {round}: cell {vertex} is unexpectedly quiescent")
            }
            DecodeError::BadCounterValue { round, vertex } => {
                write!(
                    f,
                    "round {round}: counter cell {vertex} holds a non-counter value"
                )
            }
            DecodeError::AmbiguousState { round, current } => {
                write!(
                    f,
                    "round {round}: {} state cells are current",
                    current.len()
                )
            }
            DecodeError::AmbiguousTransition { round, primed } => {
                write!(f, "round {round}: {primed} transition cells are primed")
            }
            DecodeError::ForeignHalt { round, vertex } => {
                write!(
                    f,
                    "round {round}: halt expressed by non-state cell {vertex}"
                )
            }
        }
    }
}

impl core::error::Error for DecodeError {}

/// Reads a machine trace back out of simulation round reports.
///
/// Announcement rounds (odd) carry the configuration: the unique state
/// cell at potential 1 and the counter cell potentials. Actuation rounds
/// (even) are checked for exactly one primed transition. Decoding stops at
/// the halt expression.
pub fn decode(reports: &[RoundReport], layout: &CmLayout) -> Result<CmTrace, DecodeError> {
    let total = layout.total_cells();
    let one = Rational::one();
    let mut entries = Vec::new();
    let mut halted = false;

    'rounds: for report in reports {
        let mut start: Vec<Option<&Rational>> = vec![None; total];
        for cell in &report.cells {
            if cell.vertex < total {
                start[cell.vertex] = Some(&cell.start);
            }
        }
        if report.round % 2 == 0 {
            let primed = layout
                .transition_cells
                .iter()
                .filter(|&&v| matches!(start[v], Some(p) if p >= &one))
                .count();
            if primed != 1 {
                return Err(DecodeError::AmbiguousTransition {
                    round: report.round,
                    primed,
                });
            }
            continue;
        }

        let step = (report.round - 1) / 2;
        let halt_vertex = report
            .expressions
            .iter()
            .find(|e| e.label == LABEL_HALT)
            .map(|e| e.vertex);
        let state = match halt_vertex {
            Some(vertex) => {
                halted = true;
                layout.state_cells.iter().position(|&v| v == vertex).ok_or(
                    DecodeError::ForeignHalt {
                        round: report.round,
                        vertex,
                    },
                )?
            }
            None => {
                let current: Vec<usize> = layout
                    .state_cells
                    .iter()
                    .enumerate()
                    .filter(|&(_, &v)| matches!(start[v], Some(p) if p >= &one))
                    .map(|(j, _)| j)
                    .collect();
                if current.len() != 1 {
                    return Err(DecodeError::AmbiguousState {
                        round: report.round,
                        current,
                    });
                }
                current[0]
            }
        };
        let mut counters = Vec::with_capacity(layout.counter_cells.len());
        for &vertex in &layout.counter_cells {
            let potential = start[vertex].ok_or(DecodeError::MissingCell {
                round: report.round,
                vertex,
            })?;
            counters.push(as_u64(potential).ok_or(DecodeError::BadCounterValue {
                round: report.round,
                vertex,
            })?);
        }
        entries.push(CmEntry {
            step,
            state,
            counters,
        });
        if halted {
            break 'rounds;
        }
    }
    Ok(CmTrace { entries, halted })
}

/// Outcome of running the interpreter and the compiled simulation side by
/// side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalenceReport {
    pub agree: bool,
    /// First differing step, with both sides' entries if present.
    pub divergence: Option<(u64, Option<CmEntry>, Option<CmEntry>)>,
    pub steps_compared: usize,
    pub halted: bool,
    /// Simulation round of the halt expression, when halted.
    pub halt_round: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyError {
    Interpreter(CmRunError),
    Decoder(DecodeError),
}

impl fmt::Display for VerifyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyError::Interpreter(e) => write!(f, "interpreter: {e}"),
            VerifyError::Decoder(e) => write!(f, "decoder: {e}"),
        }
    }
}

impl core::error::Error for VerifyError {}

/// Runs a machine through the interpreter and through compilation plus
/// simulation for up to `max_steps` machine steps and compares the traces
/// entry by entry.
pub fn verify_equivalence(
    wf: &WellFormedCm,
    max_steps: u64,
) -> Result<EquivalenceReport, VerifyError> {
    let oracle = interpret(wf, max_steps).map_err(VerifyError::Interpreter)?;
    let compiled = compile(wf);
    let trace = crate::engine::run(
        &compiled.config,
        0,
        2 * max_steps + 1,
        &crate::engine::StopCondition::FirstExpression(String::from(LABEL_HALT)),
    );
    let decoded = decode(&trace.reports, &compiled.layout).map_err(VerifyError::Decoder)?;

    let mut divergence = None;
    let steps = oracle.entries.len().max(decoded.entries.len());
    for i in 0..steps {
        let a = oracle.entries.get(i);
        let b = decoded.entries.get(i);
        if a != b {
            divergence = Some((i as u64, a.cloned(), b.cloned()));
            break;
        }
    }
    let halted = oracle.halted && decoded.halted;
    let halt_round = match &trace.stop_reason {
        crate::engine::StopReason::Expressed { round, .. } => Some(*round),
        _ => None,
    };
    let mut agree = divergence.is_none() && oracle.halted == decoded.halted;
    if let (true, Some(round)) = (halted, halt_round) {
        // A machine halting after s steps must express at round 2s + 1.
        let s = oracle.entries.last().expect("nonempty").step;
        agree &= round == 2 * s + 1;
    } else if halted {
        agree = false;
    }
    Ok(EquivalenceReport {
        agree,
        divergence,
        steps_compared: steps,
        halted,
        halt_round,
    })
}

/// Small machines exercising every structural feature.
pub mod suite {
    use super::*;

    fn state(name: &str) -> CmState {
        CmState {
            name: String::from(name),
            halt: false,
        }
    }

    fn halt_state(name: &str) -> CmState {
        CmState {
            name: String::from(name),
            halt: true,
        }
    }

    fn test(
        state: usize,
        counter: usize,
        status: CounterStatus,
        to: usize,
        op_counter: usize,
        op: CounterOp,
    ) -> Transition {
        Transition {
            state,
            guard: Guard::Test { counter, status },
            to,
            op_counter,
            op,
        }
    }

    fn wild(state: usize, to: usize, op_counter: usize, op: CounterOp) -> Transition {
        Transition {
            state,
            guard: Guard::Wildcard,
            to,
            op_counter,
            op,
        }
    }

    /// Counts `c1` down to zero, then halts with `c1 = 1`. Halts after
    /// `x + 1` steps.
    pub fn decrement_loop(x: u64) -> CounterMachine {
        CounterMachine {
            counters: vec![x],
            states: vec![state("q0"), halt_state("h")],
            start: 0,
            transitions: vec![
                test(0, 0, CounterStatus::Positive, 0, 0, CounterOp::Dec),
                test(0, 0, CounterStatus::Zero, 1, 0, CounterOp::Inc),
            ],
        }
    }

    /// Moves `c1` into `c2` via a wildcard return edge: at halt,
    /// `c2 = a + b` and `c1 = 1`.
    pub fn adder(a: u64, b: u64) -> CounterMachine {
        CounterMachine {
            counters: vec![a, b],
            states: vec![state("take"), state("put"), halt_state("h")],
            start: 0,
            transitions: vec![
                test(0, 0, CounterStatus::Positive, 1, 0, CounterOp::Dec),
                test(0, 0, CounterStatus::Zero, 2, 0, CounterOp::Inc),
                wild(1, 0, 1, CounterOp::Inc),
            ],
        }
    }

    /// Duplicates `c1` into both `c2` and `c3`, flagging `c4` at halt.
    pub fn copier(x: u64) -> CounterMachine {
        CounterMachine {
            counters: vec![x, 0, 0, 0],
            states: vec![
                state("take"),
                state("put_a"),
                state("put_b"),
                halt_state("h"),
            ],
            start: 0,
            transitions: vec![
                test(0, 0, CounterStatus::Positive, 1, 0, CounterOp::Dec),
                test(0, 0, CounterStatus::Zero, 3, 3, CounterOp::Inc),
                wild(1, 2, 1, CounterOp::Inc),
                wild(2, 0, 2, CounterOp::Inc),
            ],
        }
    }

    /// Leaves the parity of `c1` in `c2`, flagging `c3` at halt.
    pub fn parity(x: u64) -> CounterMachine {
        CounterMachine {
            counters: vec![x, 0, 0],
            states: vec![state("even"), state("odd"), state("mark"), halt_state("h")],
            start: 0,
            transitions: vec![
                test(0, 0, CounterStatus::Positive, 1, 0, CounterOp::Dec),
                test(0, 0, CounterStatus::Zero, 3, 2, CounterOp::Inc),
                test(1, 0, CounterStatus::Positive, 0, 0, CounterOp::Dec),
                test(1, 0, CounterStatus::Zero, 2, 1, CounterOp::Inc),
                wild(2, 3, 2, CounterOp::Inc),
            ],
        }
    }

    /// Toggles `c1` between 0 and 1 forever; no halt state.
    pub fn oscillator() -> CounterMachine {
        CounterMachine {
            counters: vec![0],
            states: vec![state("flip"), state("flop")],
            start: 0,
            transitions: vec![
                test(0, 0, CounterStatus::Zero, 1, 0, CounterOp::Inc),
                test(0, 0, CounterStatus::Positive, 1, 0, CounterOp::Dec),
                test(1, 0, CounterStatus::Zero, 0, 0, CounterOp::Inc),
                test(1, 0, CounterStatus::Positive, 0, 0, CounterOp::Dec),
            ],
        }
    }

    /// Named standard instances of every machine in the suite.
    pub fn standard() -> Vec<(String, CounterMachine)> {
        vec![
            (String::from("decrement_loop"), decrement_loop(6)),
            (String::from("adder"), adder(3, 4)),
            (String::from("copier"), copier(5)),
            (String::from("parity_even"), parity(6)),
            (String::from("parity_odd"), parity(7)),
            (String::from("oscillator"), oscillator()),
        ]
    }
}
