//! Randomized invariants: monotonicity, binding caps, gradient behaviour,
//! the per-round decomposition identity, replay, and mass conservation.

use proptest::prelude::*;

use cbm_core::{
    apply_membrane, enumerate, evaluate_firing, gradient_delta, replay, run, BioelectricEvent,
    CellDefinition, CellStatus, CountPredicate, Direction, ExecutionMode, ExpressionRule,
    FiringFunction, GradientMode, LigandId, LigandTable, MembraneCondition, MembraneFunction,
    MembraneRule, Rational, StopCondition, SystemConfig, Topology,
};

fn rat(num: i64, den: i64) -> Rational {
    Rational::new(num.into(), den.into())
}

fn int(n: i64) -> Rational {
    Rational::from_integer(n.into())
}

fn arb_rational() -> impl Strategy<Value = Rational> {
    (-24i64..=24, 1i64..=4).prop_map(|(n, d)| rat(n, d))
}

fn arb_prob() -> impl Strategy<Value = Rational> {
    (0i64..=8).prop_map(|k| rat(k, 8))
}

fn arb_firing() -> impl Strategy<Value = FiringFunction> {
    (
        any::<bool>(),
        arb_prob(),
        proptest::collection::vec((1i64..=12, arb_prob()), 0..=3),
    )
        .prop_map(|(up, below, raw)| {
            let direction = if up {
                Direction::NonDecreasing
            } else {
                Direction::NonIncreasing
            };
            let mut thresholds: Vec<i64> = raw.iter().map(|&(t, _)| t).collect();
            thresholds.sort_unstable();
            thresholds.dedup();
            let mut value = below.clone();
            let mut breakpoints = Vec::new();
            for (i, t) in thresholds.into_iter().enumerate() {
                let v = raw[i].1.clone();
                value = if up { value.max(v) } else { value.min(v) };
                breakpoints.push((int(t), value.clone()));
            }
            FiringFunction {
                below,
                breakpoints,
                direction,
            }
        })
}

const NUM_LIGANDS: u32 = 2;

fn arb_membrane() -> impl Strategy<Value = MembraneFunction> {
    (
        1u32..=3,
        proptest::collection::vec(
            (0u32..NUM_LIGANDS, any::<bool>(), 1u32..=2, arb_rational()),
            0..=2,
        ),
    )
        .prop_map(|(binding_bound, raw)| MembraneFunction {
            binding_bound,
            rules: raw
                .into_iter()
                .map(|(ligand, zero, k, offset)| MembraneRule {
                    conditions: vec![MembraneCondition {
                        ligand: LigandId(ligand),
                        predicate: if zero {
                            CountPredicate::Zero
                        } else {
                            CountPredicate::AtLeast(k.min(binding_bound))
                        },
                    }],
                    offset,
                })
                .collect(),
        })
}

fn arb_definition(name: String, max_events: usize) -> impl Strategy<Value = CellDefinition> {
    (
        arb_rational(),
        arb_rational(),
        (0i64..=2, 1i64..=2),
        -12i64..=-1,
        arb_membrane(),
        proptest::collection::vec(
            (arb_firing(), arb_rational(), 0u32..NUM_LIGANDS),
            0..=max_events,
        ),
    )
        .prop_map(
            move |(q0, sigma, (ln, ld), omega, membrane, raw_events)| CellDefinition {
                name: name.clone(),
                q0,
                sigma,
                lambda: rat(ln, ld),
                omega: int(omega),
                membrane,
                events: raw_events
                    .into_iter()
                    .map(|(firing, offset, ligand)| BioelectricEvent {
                        firing,
                        offset,
                        ligand: LigandId(ligand),
                    })
                    .collect(),
            },
        )
}

fn arb_topology(max_n: usize) -> impl Strategy<Value = Topology> {
    (1..=max_n).prop_flat_map(|n| {
        prop_oneof![
            Just(Topology::complete(n)),
            proptest::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |mask| {
                let mut edges = Vec::new();
                let mut k = 0;
                for u in 0..n {
                    for v in u + 1..n {
                        if mask[k] {
                            edges.push((u, v));
                        }
                        k += 1;
                    }
                }
                Topology::from_edges(n, &edges).expect("valid edges")
            }),
        ]
    })
}

fn arb_config(max_n: usize, max_events: usize) -> impl Strategy<Value = SystemConfig> {
    let defs = prop_oneof![
        arb_definition(String::from("a"), max_events).prop_map(|d| vec![d]),
        (
            arb_definition(String::from("a"), max_events),
            arb_definition(String::from("b"), max_events)
        )
            .prop_map(|(a, b)| vec![a, b]),
    ];
    (arb_topology(max_n), defs, any::<bool>(), arb_rational())
        .prop_flat_map(|(topology, definitions, suppress, threshold)| {
            let n = topology.n();
            let k = definitions.len();
            let rules = prop_oneof![
                Just(Vec::new()),
                Just(vec![ExpressionRule {
                    label: String::from("done"),
                    threshold: threshold.clone(),
                    suppress_neighbors: suppress,
                    applies_to: None,
                }]),
            ];
            (
                Just(topology),
                Just(definitions),
                proptest::collection::vec(0..k, n),
                rules,
                any::<bool>(),
            )
        })
        .prop_map(
            |(topology, definitions, assignment, expression_rules, raw)| {
                let mut ligands = LigandTable::new();
                ligands.intern("x");
                ligands.intern("y");
                SystemConfig {
                    topology,
                    ligands,
                    definitions,
                    assignment,
                    expression_rules,
                    mode: if raw {
                        ExecutionMode::RawDynamics
                    } else {
                        ExecutionMode::Expression
                    },
                    gradient: GradientMode::Restoring,
                    initial_potentials: Vec::new(),
                }
            },
        )
}

proptest! {
    #[test]
    fn firing_respects_direction(f in arb_firing(), a in arb_rational(), b in arb_rational()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let at_lo = evaluate_firing(&f, &lo);
        let at_hi = evaluate_firing(&f, &hi);
        match f.direction {
            Direction::NonDecreasing => prop_assert!(at_lo <= at_hi),
            Direction::NonIncreasing => prop_assert!(at_lo >= at_hi),
        }
        prop_assert!(at_lo >= int(0) && at_lo <= int(1));
    }

    #[test]
    fn membrane_ignores_copies_beyond_the_binding_cap(
        g in arb_membrane(),
        counts in proptest::collection::vec(0u32..10, NUM_LIGANDS as usize),
    ) {
        let capped: Vec<u32> = counts.iter().map(|&c| c.min(g.binding_bound)).collect();
        prop_assert_eq!(apply_membrane(&g, &counts), apply_membrane(&g, &capped));
    }

    #[test]
    fn gradient_moves_toward_rest_without_overshoot(
        current in arb_rational(),
        sigma in arb_rational(),
        (ln, ld) in (0i64..=3, 1i64..=3),
    ) {
        let lambda = rat(ln, ld);
        let delta = gradient_delta(&current, &sigma, &lambda, GradientMode::Restoring);
        let next = &current + &delta;
        prop_assert!(delta <= lambda && delta >= -lambda.clone());
        if current < sigma {
            prop_assert!(next >= current && next <= sigma);
        } else {
            prop_assert!(next <= current && next >= sigma);
        }
    }

    #[test]
    fn rounds_satisfy_decomposition_floor_and_freezing(
        config in arb_config(4, 2),
        seed in any::<u64>(),
    ) {
        prop_assert!(config.validate().is_ok());
        let trace = run(&config, seed, 8, &StopCondition::RoundBudget);
        let mut statuses = vec![CellStatus::Active; config.topology.n()];
        let mut potentials = config.initial_state().potentials;
        for report in &trace.reports {
            for cell in &report.cells {
                let def = &config.definitions[config.assignment[cell.vertex]];
                prop_assert!(cell.decomposition_holds(&def.omega));
                prop_assert!(cell.end >= def.omega);
                prop_assert_eq!(&cell.start, &potentials[cell.vertex]);
                prop_assert_eq!(statuses[cell.vertex], CellStatus::Active);
                potentials[cell.vertex] = cell.end.clone();
            }
            for record in &report.expressions {
                statuses[record.vertex] = CellStatus::Expressed {
                    rule: record.rule,
                    round: report.round,
                };
                for &v in &record.suppressed {
                    statuses[v] = CellStatus::Suppressed {
                        rule: record.rule,
                        round: report.round,
                    };
                }
            }
        }
        prop_assert_eq!(&potentials, &trace.final_state.potentials);
        prop_assert_eq!(&statuses, &trace.final_state.statuses);
    }

    #[test]
    fn replay_reproduces_any_trace(config in arb_config(4, 2), seed in any::<u64>()) {
        let trace = run(&config, seed, 6, &StopCondition::RoundBudget);
        prop_assert!(replay(&trace).is_ok());
    }

    #[test]
    fn enumeration_conserves_probability_mass(config in arb_config(3, 1)) {
        let result = enumerate(&config, 3, 1 << 20, |_, _| None::<()>)
            .expect("budget is ample");
        prop_assert!(result.resolved.is_empty());
        prop_assert_eq!(result.unresolved, int(1));
    }
}
