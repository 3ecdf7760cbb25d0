//! Cell model: firing functions, bioelectric events, membrane functions,
//! gradient dynamics, and expression rules.
//!
//! A cell definition is the sextuple (initial potential, equilibrium,
//! gradient rate, floor, membrane function, events). Definitions are pure
//! data; the engine interprets them round by round.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_traits::{Signed, Zero};

use crate::rational::Rational;

/// Dense handle for a ligand species, an index into a [`LigandTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LigandId(pub u32);

/// Ligand namespace for one system. Names are unique; ids are assigned
/// densely in interning order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LigandTable {
    names: Vec<String>,
}

impl LigandTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `name`, interning it on first use.
    pub fn intern(&mut self, name: &str) -> LigandId {
        if let Some(id) = self.id(name) {
            return id;
        }
        self.names.push(String::from(name));
        LigandId((self.names.len() - 1) as u32)
    }

    pub fn id(&self, name: &str) -> Option<LigandId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| LigandId(i as u32))
    }

    pub fn name(&self, id: LigandId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }
}

/// Declared monotonicity direction of a firing function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    NonDecreasing,
    NonIncreasing,
}

/// Piecewise-constant firing probability over the potential axis.
///
/// `below` is the value on `(-inf, b_0)`; breakpoint `i` gives the value on
/// `[b_i, b_{i+1})`, the last one on `[b_last, inf)`. Thresholds must be
/// strictly increasing and all values must be probabilities, monotone in
/// `direction`; [`validate_cell`] enforces this.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiringFunction {
    pub below: Rational,
    pub breakpoints: Vec<(Rational, Rational)>,
    pub direction: Direction,
}

impl FiringFunction {
    /// Constant probability everywhere.
    pub fn constant(p: Rational) -> Self {
        Self {
            below: p,
            breakpoints: Vec::new(),
            direction: Direction::NonDecreasing,
        }
    }

    /// `low` below `threshold`, `high` on `[threshold, inf)`.
    pub fn step_up(threshold: Rational, low: Rational, high: Rational) -> Self {
        Self {
            below: low,
            breakpoints: alloc::vec![(threshold, high)],
            direction: Direction::NonDecreasing,
        }
    }

    /// `high` below `threshold`, `low` on `[threshold, inf)`.
    pub fn step_down(threshold: Rational, high: Rational, low: Rational) -> Self {
        Self {
            below: high,
            breakpoints: alloc::vec![(threshold, low)],
            direction: Direction::NonIncreasing,
        }
    }
}

/// Evaluates a firing function at potential `x`.
pub fn evaluate_firing(f: &FiringFunction, x: &Rational) -> Rational {
    let idx = f.breakpoints.partition_point(|(t, _)| t <= x);
    if idx == 0 {
        f.below.clone()
    } else {
        f.breakpoints[idx - 1].1.clone()
    }
}

/// First adjacent value pair violating the declared direction. Index 0 names
/// the `below` value, index `i + 1` the value of breakpoint `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonotoneViolation {
    pub left_index: usize,
    pub left: Rational,
    pub right: Rational,
}

impl fmt::Display for MonotoneViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "values {} and {} at positions {} and {} break monotonicity",
            self.left,
            self.right,
            self.left_index,
            self.left_index + 1
        )
    }
}

/// Checks that firing probabilities are monotone in the declared direction.
pub fn validate_monotone(f: &FiringFunction) -> Result<(), MonotoneViolation> {
    let mut prev = &f.below;
    for (i, (_, v)) in f.breakpoints.iter().enumerate() {
        let ok = match f.direction {
            Direction::NonDecreasing => prev <= v,
            Direction::NonIncreasing => prev >= v,
        };
        if !ok {
            return Err(MonotoneViolation {
                left_index: i,
                left: prev.clone(),
                right: v.clone(),
            });
        }
        prev = v;
    }
    Ok(())
}

/// A signalling event: fire with probability `firing(potential)`, add
/// `offset` to own potential, release one `ligand` to every neighbor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioelectricEvent {
    pub firing: FiringFunction,
    pub offset: Rational,
    pub ligand: LigandId,
}

/// Predicate on the bound count of one ligand species.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountPredicate {
    /// At least this many bound (post-cap). Must be >= 1.
    AtLeast(u32),
    /// None bound.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembraneCondition {
    pub ligand: LigandId,
    pub predicate: CountPredicate,
}

/// Conjunction of count predicates; if all hold, `offset` is contributed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembraneRule {
    pub conditions: Vec<MembraneCondition>,
    pub offset: Rational,
}

/// Membrane response to the multiset of ligands received in a round.
///
/// At most `binding_bound` copies of each species bind; surplus is ignored.
/// Offsets of all satisfied rules sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembraneFunction {
    pub binding_bound: u32,
    pub rules: Vec<MembraneRule>,
}

impl MembraneFunction {
    /// Membrane that ignores everything.
    pub fn inert() -> Self {
        Self {
            binding_bound: 1,
            rules: Vec::new(),
        }
    }
}

/// Evaluates a membrane against raw received counts indexed by ligand id.
/// Counts beyond the slice are zero.
pub fn apply_membrane(g: &MembraneFunction, received: &[u32]) -> Rational {
    let mut total = Rational::zero();
    for rule in &g.rules {
        let satisfied = rule.conditions.iter().all(|cond| {
            let raw = received.get(cond.ligand.0 as usize).copied().unwrap_or(0);
            let bound = raw.min(g.binding_bound);
            match cond.predicate {
                CountPredicate::AtLeast(k) => bound >= k,
                CountPredicate::Zero => bound == 0,
            }
        });
        if satisfied {
            total += &rule.offset;
        }
    }
    total
}

/// How the gradient force treats a potential within `lambda` below the
/// equilibrium.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum GradientMode {
    /// Snap to the equilibrium from both sides: the drift never overshoots
    /// and never increases the gap.
    #[default]
    Restoring,
    /// Keep the one-sided case analysis in which a potential slightly below
    /// equilibrium drifts further down. Provided for comparison runs.
    Asymmetric,
}

/// Per-round drift of `current` toward the equilibrium `sigma` at rate
/// `lambda`, returned as a signed offset.
pub fn gradient_delta(
    current: &Rational,
    sigma: &Rational,
    lambda: &Rational,
    mode: GradientMode,
) -> Rational {
    let z = current - sigma;
    if z.is_zero() {
        return Rational::zero();
    }
    if &z >= lambda {
        return -lambda.clone();
    }
    if z <= -lambda.clone() {
        return lambda.clone();
    }
    match mode {
        GradientMode::Restoring => -z,
        GradientMode::Asymmetric => {
            if z.is_positive() {
                -z
            } else {
                z
            }
        }
    }
}

/// Expression rule: an active cell at or above `threshold` at the start of
/// a round expresses `label` and goes quiescent forever. If
/// `suppress_neighbors` is set, its still-active neighbors strictly below
/// `threshold` are suppressed in the same instant.
///
/// `applies_to` limits the rule to cells built from the named definitions;
/// `None` covers every cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpressionRule {
    pub label: String,
    pub threshold: Rational,
    pub suppress_neighbors: bool,
    pub applies_to: Option<Vec<String>>,
}

impl ExpressionRule {
    pub fn covers(&self, definition_name: &str) -> bool {
        match &self.applies_to {
            None => true,
            Some(names) => names.iter().any(|n| n == definition_name),
        }
    }
}

/// Complete description of one cell type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellDefinition {
    pub name: String,
    /// Initial potential.
    pub q0: Rational,
    /// Gradient equilibrium.
    pub sigma: Rational,
    /// Gradient rate, >= 0.
    pub lambda: Rational,
    /// Potential floor; end-of-round potentials clamp to at least this.
    pub omega: Rational,
    pub membrane: MembraneFunction,
    pub events: Vec<BioelectricEvent>,
}

/// Hard cap on events per cell.
pub const MAX_EVENTS: usize = 8;
/// Event counts above this validate with a warning.
pub const EVENT_WARN_THRESHOLD: usize = 4;

/// Structural defect in a cell definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellError {
    NegativeLambda,
    TooManyEvents {
        count: usize,
    },
    ThresholdsNotIncreasing {
        event: usize,
        index: usize,
    },
    ProbabilityOutOfRange {
        event: usize,
        /// 0 names the `below` value, i + 1 the value of breakpoint i.
        index: usize,
    },
    NotMonotone {
        event: usize,
        violation: MonotoneViolation,
    },
    ZeroBindingBound,
    BadRuleCount {
        rule: usize,
        count: u32,
        bound: u32,
    },
}

impl fmt::Display for CellError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellError::NegativeLambda => write!(f, "gradient rate must be non-negative"),
            CellError::TooManyEvents { count } => {
                write!(f, "{count} events exceed the cap of {MAX_EVENTS}")
            }
            CellError::ThresholdsNotIncreasing { event, index } => write!(
                f,
                "event {event}: breakpoint {index} does not increase the threshold"
            ),
            CellError::ProbabilityOutOfRange { event, index } => {
                write!(f, "event {event}: firing value {index} is outside [0, 1]")
            }
            CellError::NotMonotone { event, violation } => {
                write!(f, "event {event}: {violation}")
            }
            CellError::ZeroBindingBound => write!(f, "binding bound must be at least 1"),
            CellError::BadRuleCount { rule, count, bound } => write!(
                f,
                "membrane rule {rule}: count {count} must be in 1..={bound}"
            ),
        }
    }
}

impl core::error::Error for CellError {}

fn is_probability(p: &Rational) -> bool {
    !p.is_negative() && p <= &Rational::from_integer(1.into())
}

/// Validates a cell definition. Returns human-readable warnings for legal
/// but suspicious shapes.
pub fn validate_cell(def: &CellDefinition) -> Result<Vec<String>, CellError> {
    let mut warnings = Vec::new();
    if def.lambda.is_negative() {
        return Err(CellError::NegativeLambda);
    }
    if def.events.len() > MAX_EVENTS {
        return Err(CellError::TooManyEvents {
            count: def.events.len(),
        });
    }
    if def.events.len() > EVENT_WARN_THRESHOLD {
        warnings.push(alloc::format!(
            "cell {:?} declares {} events; more than {EVENT_WARN_THRESHOLD} is unusual",
            def.name,
            def.events.len()
        ));
    }
    for (ei, event) in def.events.iter().enumerate() {
        let f = &event.firing;
        if !is_probability(&f.below) {
            return Err(CellError::ProbabilityOutOfRange {
                event: ei,
                index: 0,
            });
        }
        for (bi, (threshold, value)) in f.breakpoints.iter().enumerate() {
            if bi > 0 && threshold <= &f.breakpoints[bi - 1].0 {
                return Err(CellError::ThresholdsNotIncreasing {
                    event: ei,
                    index: bi,
                });
            }
            if !is_probability(value) {
                return Err(CellError::ProbabilityOutOfRange {
                    event: ei,
                    index: bi + 1,
                });
            }
        }
        if let Err(violation) = validate_monotone(f) {
            return Err(CellError::NotMonotone {
                event: ei,
                violation,
            });
        }
    }
    if def.membrane.binding_bound == 0 {
        return Err(CellError::ZeroBindingBound);
    }
    for (ri, rule) in def.membrane.rules.iter().enumerate() {
        for cond in &rule.conditions {
            if let CountPredicate::AtLeast(k) = cond.predicate {
                if k == 0 || k > def.membrane.binding_bound {
                    return Err(CellError::BadRuleCount {
                        rule: ri,
                        count: k,
                        bound: def.membrane.binding_bound,
                    });
                }
            }
        }
    }
    Ok(warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, rat};

    fn staircase() -> FiringFunction {
        FiringFunction {
            below: int(0),
            breakpoints: alloc::vec![(rat(1, 2), rat(1, 2)), (int(1), int(1))],
            direction: Direction::NonDecreasing,
        }
    }

    #[test]
    fn firing_evaluates_half_open_pieces() {
        let f = staircase();
        assert_eq!(evaluate_firing(&f, &rat(-7, 2)), int(0));
        assert_eq!(evaluate_firing(&f, &rat(499, 1000)), int(0));
        assert_eq!(evaluate_firing(&f, &rat(1, 2)), rat(1, 2));
        assert_eq!(evaluate_firing(&f, &rat(999, 1000)), rat(1, 2));
        assert_eq!(evaluate_firing(&f, &int(1)), int(1));
        assert_eq!(evaluate_firing(&f, &int(50)), int(1));
    }

    #[test]
    fn firing_constant_and_empty() {
        let f = FiringFunction::constant(rat(1, 3));
        assert_eq!(evaluate_firing(&f, &int(-9)), rat(1, 3));
        assert_eq!(evaluate_firing(&f, &int(9)), rat(1, 3));
    }

    #[test]
    fn monotone_violation_reports_first_pair() {
        let f = FiringFunction {
            below: rat(1, 2),
            breakpoints: alloc::vec![(int(0), rat(3, 4)), (int(1), rat(1, 4))],
            direction: Direction::NonDecreasing,
        };
        let v = validate_monotone(&f).unwrap_err();
        assert_eq!(v.left_index, 1);
        assert_eq!(v.left, rat(3, 4));
        assert_eq!(v.right, rat(1, 4));
    }

    #[test]
    fn membrane_caps_before_testing() {
        let g = MembraneFunction {
            binding_bound: 2,
            rules: alloc::vec![MembraneRule {
                conditions: alloc::vec![MembraneCondition {
                    ligand: LigandId(0),
                    predicate: CountPredicate::AtLeast(2),
                }],
                offset: int(5),
            }],
        };
        assert_eq!(apply_membrane(&g, &[0]), int(0));
        assert_eq!(apply_membrane(&g, &[1]), int(0));
        assert_eq!(apply_membrane(&g, &[2]), int(5));
        assert_eq!(apply_membrane(&g, &[100]), int(5));
        assert_eq!(apply_membrane(&g, &[]), int(0));
    }

    #[test]
    fn membrane_conjunction_and_sum() {
        let g = MembraneFunction {
            binding_bound: 1,
            rules: alloc::vec![
                MembraneRule {
                    conditions: alloc::vec![
                        MembraneCondition {
                            ligand: LigandId(0),
                            predicate: CountPredicate::AtLeast(1),
                        },
                        MembraneCondition {
                            ligand: LigandId(1),
                            predicate: CountPredicate::Zero,
                        },
                    ],
                    offset: int(1),
                },
                MembraneRule {
                    conditions: alloc::vec![MembraneCondition {
                        ligand: LigandId(0),
                        predicate: CountPredicate::AtLeast(1),
                    }],
                    offset: int(10),
                },
            ],
        };
        assert_eq!(apply_membrane(&g, &[1, 0]), int(11));
        assert_eq!(apply_membrane(&g, &[1, 3]), int(10));
        assert_eq!(apply_membrane(&g, &[0, 1]), int(0));
    }

    #[test]
    fn gradient_five_cases() {
        let sigma = int(2);
        let lambda = rat(1, 2);
        let d = |c: Rational| gradient_delta(&c, &sigma, &lambda, GradientMode::Restoring);
        assert_eq!(d(int(4)), rat(-1, 2));
        assert_eq!(d(rat(5, 2)), rat(-1, 2));
        assert_eq!(d(rat(9, 4)), rat(-1, 4));
        assert_eq!(d(int(2)), int(0));
        assert_eq!(d(rat(7, 4)), rat(1, 4));
        assert_eq!(d(rat(3, 2)), rat(1, 2));
        assert_eq!(d(int(-3)), rat(1, 2));
    }

    #[test]
    fn gradient_asymmetric_differs_only_just_below() {
        let sigma = int(2);
        let lambda = rat(1, 2);
        let d = |c: Rational| gradient_delta(&c, &sigma, &lambda, GradientMode::Asymmetric);
        assert_eq!(d(rat(9, 4)), rat(-1, 4));
        assert_eq!(d(rat(7, 4)), rat(-1, 4));
        assert_eq!(d(rat(3, 2)), rat(1, 2));
    }

    #[test]
    fn gradient_zero_rate_is_inert() {
        let d = gradient_delta(&int(7), &int(0), &int(0), GradientMode::Restoring);
        assert_eq!(d, int(0));
    }

    #[test]
    fn validate_rejects_bad_probability() {
        let def = CellDefinition {
            name: "bad".into(),
            q0: int(0),
            sigma: int(0),
            lambda: int(0),
            omega: int(-1),
            membrane: MembraneFunction::inert(),
            events: alloc::vec![BioelectricEvent {
                firing: FiringFunction::step_up(int(0), int(0), int(2)),
                offset: int(0),
                ligand: LigandId(0),
            }],
        };
        assert_eq!(
            validate_cell(&def),
            Err(CellError::ProbabilityOutOfRange { event: 0, index: 1 })
        );
    }

    #[test]
    fn validate_rejects_count_above_bound() {
        let def = CellDefinition {
            name: "bad".into(),
            q0: int(0),
            sigma: int(0),
            lambda: int(0),
            omega: int(-1),
            membrane: MembraneFunction {
                binding_bound: 2,
                rules: alloc::vec![MembraneRule {
                    conditions: alloc::vec![MembraneCondition {
                        ligand: LigandId(0),
                        predicate: CountPredicate::AtLeast(3),
                    }],
                    offset: int(1),
                }],
            },
            events: alloc::vec![],
        };
        assert_eq!(
            validate_cell(&def),
            Err(CellError::BadRuleCount {
                rule: 0,
                count: 3,
                bound: 2
            })
        );
    }

    #[test]
    fn ligand_table_interns_densely() {
        let mut t = LigandTable::new();
        let a = t.intern("m_a");
        let b = t.intern("m_b");
        assert_eq!(t.intern("m_a"), a);
        assert_eq!(a, LigandId(0));
        assert_eq!(b, LigandId(1));
        assert_eq!(t.name(b), "m_b");
        assert_eq!(t.len(), 2);
    }
}
