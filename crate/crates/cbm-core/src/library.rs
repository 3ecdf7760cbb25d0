//! Stock cell definitions: KnockBack leader election, small and general
//! threshold detectors, and the two-type majority pair.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::cell::{
    BioelectricEvent, CellDefinition, CountPredicate, Direction, ExpressionRule, FiringFunction,
    LigandTable, MembraneCondition, MembraneFunction, MembraneRule,
};
use crate::rational::{int, pow2, rat, Rational};

/// Label expressed by an elected KnockBack cell.
pub const LABEL_LEADER: &str = "leader";
/// Label expressed by threshold detectors.
pub const LABEL_THRESHOLD: &str = "threshold-exceeded";
/// Labels expressed by the majority pair.
pub const LABEL_MAJORITY_A: &str = "majority-a";
pub const LABEL_MAJORITY_B: &str = "majority-b";

/// Largest quorum a small-threshold membrane may count to.
pub const MAX_SMALL_THRESHOLD: u32 = 64;

/// A cell definition together with the expression rules it is meant to run
/// under. Rules are scoped to the definition by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellBundle {
    pub definition: CellDefinition,
    pub rules: Vec<ExpressionRule>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LibraryError {
    /// Quorum outside `1..=MAX_SMALL_THRESHOLD`.
    BadQuorum { k: u32 },
    /// Rate parameter must be at least 1.
    BadRate { k: u64 },
    /// Tolerance must lie strictly between 0 and 1.
    BadTolerance { epsilon: f64 },
    /// Population bound must be at least 2.
    BadPopulation { n: u64 },
}

impl fmt::Display for LibraryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LibraryError::BadQuorum { k } => {
                write!(f, "quorum {k} outside 1..={MAX_SMALL_THRESHOLD}")
            }
            LibraryError::BadRate { k } => write!(f, "rate divisor {k} must be at least 1"),
            LibraryError::BadTolerance { epsilon } => {
                write!(f, "tolerance {epsilon} must be in (0, 1)")
            }
            LibraryError::BadPopulation { n } => {
                write!(f, "population bound {n} must be at least 2")
            }
        }
    }
}

impl core::error::Error for LibraryError {}

/// KnockBack cell: randomized mutual-knockout leader election.
///
/// Rests at equilibrium 2 but expresses at 2, so a cell only wins by
/// climbing while its neighbors are knocked down. Fires with probability
/// 1/2 on `[1/2, 1)` and always on `[1, inf)`; each received knock costs
/// 3/2; the floor is -2.
pub fn knockback(ligands: &mut LigandTable) -> CellBundle {
    let m = ligands.intern("m");
    let definition = CellDefinition {
        name: String::from("knockback"),
        q0: int(0),
        sigma: int(2),
        lambda: rat(1, 2),
        omega: int(-2),
        membrane: MembraneFunction {
            binding_bound: 1,
            rules: vec![MembraneRule {
                conditions: vec![MembraneCondition {
                    ligand: m,
                    predicate: CountPredicate::AtLeast(1),
                }],
                offset: rat(-3, 2),
            }],
        },
        events: vec![BioelectricEvent {
            firing: FiringFunction {
                below: int(0),
                breakpoints: vec![(rat(1, 2), rat(1, 2)), (int(1), int(1))],
                direction: Direction::NonDecreasing,
            },
            offset: rat(1, 2),
            ligand: m,
        }],
    };
    let rules = vec![ExpressionRule {
        label: String::from(LABEL_LEADER),
        threshold: int(2),
        suppress_neighbors: true,
        applies_to: Some(vec![definition.name.clone()]),
    }];
    CellBundle { definition, rules }
}

/// Small-threshold cell: expresses iff more than `k` cells are present on a
/// complete graph, by counting up to a quorum of `k` bound ligands.
///
/// Deterministic: every cell fires at potential 1, so with at least `k`
/// neighbors the membrane adds 2 and the potential lands exactly on the
/// expression threshold of 2 in one round.
pub fn small_threshold(k: u32, ligands: &mut LigandTable) -> Result<CellBundle, LibraryError> {
    if k == 0 || k > MAX_SMALL_THRESHOLD {
        return Err(LibraryError::BadQuorum { k });
    }
    let m = ligands.intern("m");
    let definition = CellDefinition {
        name: format!("small_threshold_{k}"),
        q0: int(1),
        sigma: int(0),
        lambda: int(1),
        // Potentials never drop below 0; the floor is an inert sentinel.
        omega: int(-1),
        membrane: MembraneFunction {
            binding_bound: k,
            rules: vec![MembraneRule {
                conditions: vec![MembraneCondition {
                    ligand: m,
                    predicate: CountPredicate::AtLeast(k),
                }],
                offset: int(2),
            }],
        },
        events: vec![BioelectricEvent {
            firing: FiringFunction::step_up(int(1), int(0), int(1)),
            offset: int(0),
            ligand: m,
        }],
    };
    let rules = vec![ExpressionRule {
        label: String::from(LABEL_THRESHOLD),
        threshold: int(2),
        suppress_neighbors: false,
        applies_to: Some(vec![definition.name.clone()]),
    }];
    Ok(CellBundle { definition, rules })
}

/// General-threshold cell: expresses with probability `1 - (1 - 1/k)^n` on
/// a complete graph of `n` cells, regardless of how large `k` is.
///
/// Every cell fires round 1 with probability `1/k`; a single firing lifts
/// the firer by its own offset and everyone else through the membrane, so
/// the outcome is decided in one round.
pub fn general_threshold(k: u64, ligands: &mut LigandTable) -> Result<CellBundle, LibraryError> {
    if k == 0 {
        return Err(LibraryError::BadRate { k });
    }
    let m = ligands.intern("m");
    let definition = CellDefinition {
        name: format!("general_threshold_{k}"),
        q0: int(1),
        sigma: int(0),
        lambda: int(1),
        omega: int(-1),
        membrane: MembraneFunction {
            binding_bound: 1,
            rules: vec![MembraneRule {
                conditions: vec![MembraneCondition {
                    ligand: m,
                    predicate: CountPredicate::AtLeast(1),
                }],
                offset: int(2),
            }],
        },
        events: vec![BioelectricEvent {
            firing: FiringFunction::step_up(int(1), int(0), Rational::new(1.into(), k.into())),
            offset: int(2),
            ligand: m,
        }],
    };
    let rules = vec![ExpressionRule {
        label: String::from(LABEL_THRESHOLD),
        threshold: int(2),
        suppress_neighbors: false,
        applies_to: Some(vec![definition.name.clone()]),
    }];
    Ok(CellBundle { definition, rules })
}

/// Derived scale of a majority pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MajorityParams {
    /// Rounds spent per firing-probability level.
    pub alpha: u64,
    /// `n_max` rounded up to a power of two.
    pub n_rounded: u64,
    /// Base-2 log of `n_rounded`.
    pub log_n: u32,
}

impl MajorityParams {
    /// Expression threshold, `3 * alpha * log_n`.
    pub fn threshold(&self) -> u64 {
        3 * self.alpha * self.log_n as u64
    }
}

/// Majority pair: two antagonistic cell types that race to express, each
/// knocking the other type down on every fire.
///
/// `n_max` bounds the total population, `epsilon` the error tolerance. The
/// firing probability doubles from `1/N` to 1 in `alpha`-round stages as a
/// cell climbs toward the expression threshold; one received opposing
/// ligand costs two-thirds of the threshold.
pub fn majority_pair(
    n_max: u64,
    epsilon: f64,
    ligands: &mut LigandTable,
) -> Result<(CellBundle, CellBundle, MajorityParams), LibraryError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(LibraryError::BadTolerance { epsilon });
    }
    if n_max < 2 {
        return Err(LibraryError::BadPopulation { n: n_max });
    }
    let alpha = ceil_pos(2.0 * libm::log(2.0 / epsilon));
    let n_rounded = n_max.next_power_of_two();
    let log_n = n_rounded.trailing_zeros();
    let params = MajorityParams {
        alpha,
        n_rounded,
        log_n,
    };

    let m_a = ligands.intern("m_a");
    let m_b = ligands.intern("m_b");
    let scale = i64::try_from(alpha * log_n as u64).expect("scale fits");
    let firing = || {
        let mut breakpoints = Vec::with_capacity(log_n as usize + 1);
        for j in 0..log_n {
            breakpoints.push((int(j as i64 * alpha as i64), pow2(j as i32 - log_n as i32)));
        }
        breakpoints.push((int(scale), int(1)));
        FiringFunction {
            below: int(0),
            breakpoints,
            direction: Direction::NonDecreasing,
        }
    };
    let build =
        |name: String, own: crate::cell::LigandId, other: crate::cell::LigandId| CellDefinition {
            name,
            q0: int(0),
            sigma: int(3 * scale),
            lambda: int(1),
            omega: int(-2 * scale),
            membrane: MembraneFunction {
                binding_bound: 1,
                rules: vec![MembraneRule {
                    conditions: vec![MembraneCondition {
                        ligand: other,
                        predicate: CountPredicate::AtLeast(1),
                    }],
                    offset: int(-2 * scale),
                }],
            },
            events: vec![BioelectricEvent {
                firing: firing(),
                offset: int(scale),
                ligand: own,
            }],
        };
    let def_a = build(format!("majority_a_{n_rounded}_{alpha}"), m_a, m_b);
    let def_b = build(format!("majority_b_{n_rounded}_{alpha}"), m_b, m_a);
    let rule = |label: &str, def: &CellDefinition| ExpressionRule {
        label: String::from(label),
        threshold: int(3 * scale),
        suppress_neighbors: true,
        applies_to: Some(vec![def.name.clone()]),
    };
    let bundle_a = CellBundle {
        rules: vec![rule(LABEL_MAJORITY_A, &def_a)],
        definition: def_a,
    };
    let bundle_b = CellBundle {
        rules: vec![rule(LABEL_MAJORITY_B, &def_b)],
        definition: def_b,
    };
    Ok((bundle_a, bundle_b, params))
}

/// Ceiling of a positive float as an integer.
fn ceil_pos(x: f64) -> u64 {
    let c = libm::ceil(x);
    if c < 1.0 {
        1
    } else {
        c as u64
    }
}
