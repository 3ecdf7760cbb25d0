//! Exact outcome probabilities by exhaustive branching over coin draws.
//!
//! Evolves the full probability distribution over system states round by
//! round: every state expands into one branch per assignment of its
//! nontrivial coin draws, weighted by the exact probability of that
//! assignment, and identical successor states merge. A classifier maps
//! each executed round to an outcome; branches stop at their first
//! outcome. Masses are exact rationals, so resolved probabilities plus the
//! unresolved remainder always sum to one.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use num_traits::{One, Zero};

use crate::engine::{step, CellStatus, FiringDecider, RoundReport, SystemConfig, SystemState};
use crate::rational::Rational;

/// Result of an exhaustive enumeration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enumeration<O: Ord> {
    /// Exact probability of reaching each outcome within the horizon.
    pub resolved: BTreeMap<O, Rational>,
    /// Probability mass that reached no outcome within the horizon.
    pub unresolved: Rational,
    /// Rounds actually expanded.
    pub rounds: u64,
    /// Total branches stepped, across all rounds and states.
    pub expansions: u64,
}

impl<O: Ord> Enumeration<O> {
    /// Sum of all resolved masses.
    pub fn resolved_total(&self) -> Rational {
        let mut total = Rational::zero();
        for mass in self.resolved.values() {
            total += mass;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnumerateError {
    /// Expanding the next state would exceed the branch budget.
    BranchBudgetExceeded { round: u64, budget: u64 },
}

impl fmt::Display for EnumerateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnumerateError::BranchBudgetExceeded { round, budget } => {
                write!(f, "round {round} exceeds the branch budget of {budget}")
            }
        }
    }
}

impl core::error::Error for EnumerateError {}

/// Decider that reads nontrivial decisions from the bits of a mask and
/// accumulates the exact probability of the decision sequence it produced.
/// Trivial probabilities (0 and 1) consume no bit.
struct MaskDecider {
    mask: u64,
    cursor: u32,
    weight: Rational,
}

impl MaskDecider {
    fn new(mask: u64) -> Self {
        Self {
            mask,
            cursor: 0,
            weight: Rational::one(),
        }
    }
}

impl FiringDecider for MaskDecider {
    fn fires(&mut self, _vertex: usize, _event: usize, probability: &Rational) -> bool {
        if probability.is_zero() {
            return false;
        }
        if probability.is_one() {
            return true;
        }
        let bit = self.mask >> self.cursor & 1 == 1;
        self.cursor += 1;
        self.weight *= if bit {
            probability.clone()
        } else {
            Rational::one() - probability
        };
        bit
    }
}

type StateKey = (Vec<Rational>, Vec<CellStatus>);

/// Expands every coin sequence of `config` for up to `max_rounds` rounds.
///
/// `classify` inspects each executed round (its report and the state after
/// it) and returns `Some(outcome)` to terminate that branch. The number of
/// branches stepped is capped by `branch_budget`; exceeding it is an error
/// rather than a silent truncation.
///
/// Within one round the sequence of decision points is fixed by the
/// start-of-round state, so the branch fanout of a state is discovered by
/// stepping its all-hold branch first and reading how many bits it
/// consumed.
pub fn enumerate<O, F>(
    config: &SystemConfig,
    max_rounds: u64,
    branch_budget: u64,
    classify: F,
) -> Result<Enumeration<O>, EnumerateError>
where
    O: Ord,
    F: Fn(&RoundReport, &SystemState) -> Option<O>,
{
    let initial = config.initial_state();
    let mut states: BTreeMap<StateKey, Rational> = BTreeMap::new();
    states.insert((initial.potentials, initial.statuses), Rational::one());
    let mut resolved: BTreeMap<O, Rational> = BTreeMap::new();
    let mut expansions: u64 = 0;
    let mut rounds_done: u64 = 0;

    for round in 1..=max_rounds {
        if states.is_empty() {
            break;
        }
        rounds_done = round;
        let mut next: BTreeMap<StateKey, Rational> = BTreeMap::new();
        for ((potentials, statuses), mass) in &states {
            let restart = || SystemState {
                round,
                potentials: potentials.clone(),
                statuses: statuses.clone(),
            };
            // All-hold branch doubles as the fanout probe.
            let mut probe = MaskDecider::new(0);
            let mut state = restart();
            let report = step(config, &mut state, &mut probe);
            let bits = probe.cursor;
            let fanout = 1u64
                .checked_shl(bits)
                .filter(|f| expansions.saturating_add(*f) <= branch_budget)
                .ok_or(EnumerateError::BranchBudgetExceeded {
                    round,
                    budget: branch_budget,
                })?;
            expansions += fanout;

            let settle = |weight: Rational,
                          report: RoundReport,
                          state: SystemState,
                          resolved: &mut BTreeMap<O, Rational>,
                          next: &mut BTreeMap<StateKey, Rational>| {
                let share = mass * weight;
                match classify(&report, &state) {
                    Some(outcome) => {
                        *resolved.entry(outcome).or_insert_with(Rational::zero) += share;
                    }
                    None => {
                        *next
                            .entry((state.potentials, state.statuses))
                            .or_insert_with(Rational::zero) += share;
                    }
                }
            };
            settle(probe.weight, report, state, &mut resolved, &mut next);
            for mask in 1..fanout {
                let mut decider = MaskDecider::new(mask);
                let mut state = restart();
                let report = step(config, &mut state, &mut decider);
                debug_assert_eq!(
                    decider.cursor, bits,
                    "decision count must be state-determined"
                );
                settle(decider.weight, report, state, &mut resolved, &mut next);
            }
        }
        states = next;
    }

    let mut unresolved = Rational::zero();
    for mass in states.values() {
        unresolved += mass;
    }
    Ok(Enumeration {
        resolved,
        unresolved,
        rounds: rounds_done,
        expansions,
    })
}
