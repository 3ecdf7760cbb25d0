//! Versioned JSON file formats: systems, graphs, counter machines,
//! experiment specs, and JSON Lines traces.
//!
//! Every file is an object with a `kind` tag and a `format_version`.
//! Rationals are strings, `"num/den"` or plain `"num"`.

use std::io::{BufRead, Write};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use cbm_core::cell::{
    BioelectricEvent, CellDefinition, CountPredicate, Direction, ExpressionRule, FiringFunction,
    LigandId, LigandTable, MembraneCondition, MembraneFunction, MembraneRule,
};
use cbm_core::cm::{
    CmLayout, CmState, CounterMachine, CounterOp, CounterStatus, Guard, Transition,
};
use cbm_core::engine::{
    CellRound, CellStatus, ExecutionMode, ExpressionRecord, LigandCount, RoundReport,
    StopCondition, StopReason, SystemConfig, SystemState, Trace,
};
use cbm_core::rational::{format_rational, parse_rational};
use cbm_core::topology::{ConnectPolicy, Topology, UbgParams};
use cbm_core::{library, GradientMode, Rational};

pub const FORMAT_VERSION: u32 = 1;

/// Exact rational carried as a string in JSON.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Rat(pub Rational);

impl From<Rational> for Rat {
    fn from(x: Rational) -> Self {
        Rat(x)
    }
}

impl Serialize for Rat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(&self.0))
    }
}

impl<'de> Deserialize<'de> for Rat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_rational(&text)
            .map(Rat)
            .map_err(serde::de::Error::custom)
    }
}

fn check_version(found: u32, kind: &str) -> Result<()> {
    if found != FORMAT_VERSION {
        bail!("{kind} file has format_version {found}, this build reads {FORMAT_VERSION}");
    }
    Ok(())
}

/// Any recognized file, dispatched on the `kind` tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnyFile {
    System(SystemFile),
    Graph(GraphFile),
    Cm(CmFile),
    Experiment(ExperimentFile),
}

pub fn read_file(path: &std::path::Path) -> Result<AnyFile> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(value: &T, path: &std::path::Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// System files

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub format_version: u32,
    pub topology: TopologyDto,
    /// Uniform stock-cell population; mutually exclusive with the inline
    /// fields below.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<TemplateDto>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ligands: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub definitions: Vec<CellDefDto>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assignment: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expression_rules: Vec<ExpressionRuleDto>,
    #[serde(default, skip_serializing_if = "is_default_mode")]
    pub mode: ModeDto,
    #[serde(default, skip_serializing_if = "is_default_gradient")]
    pub gradient: GradientDto,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial_potentials: Vec<InitialPotentialDto>,
    /// Present on `compile-cm` output; lets traces be decoded back into
    /// machine configurations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cm_layout: Option<CmLayoutDto>,
}

fn is_default_mode(m: &ModeDto) -> bool {
    *m == ModeDto::Expression
}

fn is_default_gradient(g: &GradientDto) -> bool {
    *g == GradientDto::Restoring
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyDto {
    Complete {
        n: usize,
    },
    Explicit {
        n: usize,
        edges: Vec<(usize, usize)>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coordinates: Option<Vec<Vec<Rat>>>,
    },
    /// Seeded unit-ball graph sampled at load time.
    UnitBall {
        n: usize,
        dimension: usize,
        side: Rat,
        seed: u64,
        #[serde(default = "default_resample_limit")]
        resample_limit: u32,
    },
}

fn default_resample_limit() -> u32 {
    10_000
}

impl TopologyDto {
    pub fn build(&self) -> Result<Topology> {
        match self {
            TopologyDto::Complete { n } => {
                if *n == 0 {
                    bail!("complete topology needs n >= 1");
                }
                Ok(Topology::complete(*n))
            }
            TopologyDto::Explicit {
                n,
                edges,
                coordinates,
            } => {
                let topology = Topology::from_edges(*n, edges)?;
                if let Some(coords) = coordinates {
                    let points: Vec<Vec<Rational>> = coords
                        .iter()
                        .map(|p| p.iter().map(|r| r.0.clone()).collect())
                        .collect();
                    let embedded = Topology::from_embedding(points)?;
                    if embedded.edge_list() != topology.edge_list() {
                        bail!("edge list disagrees with the unit-distance rule on the coordinates");
                    }
                    return Ok(embedded);
                }
                Ok(topology)
            }
            TopologyDto::UnitBall {
                n,
                dimension,
                side,
                seed,
                resample_limit,
            } => {
                let sample = cbm_core::topology::ubg_random(&UbgParams {
                    n: *n,
                    dimension: *dimension,
                    side: side.0.clone(),
                    seed: *seed,
                    policy: ConnectPolicy::Resample {
                        limit: *resample_limit,
                    },
                })?;
                Ok(sample.topology)
            }
        }
    }

    pub fn from_topology(topology: &Topology) -> Self {
        if topology.is_complete() {
            TopologyDto::Complete { n: topology.n() }
        } else {
            TopologyDto::Explicit {
                n: topology.n(),
                edges: topology.edge_list(),
                coordinates: topology.embedding().map(|points| {
                    points
                        .iter()
                        .map(|p| p.iter().cloned().map(Rat).collect())
                        .collect()
                }),
            }
        }
    }
}

/// Stock-cell templates; the whole population shares one definition
/// except `majority_pair`, which splits it in two.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TemplateDto {
    Knockback,
    SmallThreshold {
        k: u32,
    },
    GeneralThreshold {
        k: u64,
    },
    MajorityPair {
        n_max: u64,
        epsilon: f64,
        count_a: usize,
        count_b: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellDefDto {
    pub name: String,
    pub q0: Rat,
    pub sigma: Rat,
    pub lambda: Rat,
    pub omega: Rat,
    pub membrane: MembraneDto,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventDto>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembraneDto {
    pub binding_bound: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<MembraneRuleDto>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembraneRuleDto {
    pub conditions: Vec<ConditionDto>,
    pub offset: Rat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionDto {
    pub ligand: String,
    pub predicate: PredicateDto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateDto {
    AtLeast(u32),
    Zero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventDto {
    pub firing: FiringDto,
    pub offset: Rat,
    pub ligand: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiringDto {
    pub below: Rat,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub breakpoints: Vec<(Rat, Rat)>,
    pub direction: DirectionDto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionDto {
    NonDecreasing,
    NonIncreasing,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpressionRuleDto {
    pub label: String,
    pub threshold: Rat,
    pub suppress_neighbors: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applies_to: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeDto {
    #[default]
    Expression,
    RawDynamics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientDto {
    #[default]
    Restoring,
    Asymmetric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPotentialDto {
    pub vertex: usize,
    pub potential: Rat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmLayoutDto {
    pub counter_cells: Vec<usize>,
    pub state_cells: Vec<usize>,
    pub transition_cells: Vec<usize>,
}

impl CmLayoutDto {
    pub fn to_layout(&self) -> CmLayout {
        CmLayout {
            counter_cells: self.counter_cells.clone(),
            state_cells: self.state_cells.clone(),
            transition_cells: self.transition_cells.clone(),
        }
    }

    pub fn from_layout(layout: &CmLayout) -> Self {
        CmLayoutDto {
            counter_cells: layout.counter_cells.clone(),
            state_cells: layout.state_cells.clone(),
            transition_cells: layout.transition_cells.clone(),
        }
    }
}

fn direction_to_core(d: DirectionDto) -> Direction {
    match d {
        DirectionDto::NonDecreasing => Direction::NonDecreasing,
        DirectionDto::NonIncreasing => Direction::NonIncreasing,
    }
}

fn direction_from_core(d: Direction) -> DirectionDto {
    match d {
        Direction::NonDecreasing => DirectionDto::NonDecreasing,
        Direction::NonIncreasing => DirectionDto::NonIncreasing,
    }
}

fn firing_to_core(f: &FiringDto) -> FiringFunction {
    FiringFunction {
        below: f.below.0.clone(),
        breakpoints: f
            .breakpoints
            .iter()
            .map(|(t, p)| (t.0.clone(), p.0.clone()))
            .collect(),
        direction: direction_to_core(f.direction),
    }
}

fn firing_from_core(f: &FiringFunction) -> FiringDto {
    FiringDto {
        below: Rat(f.below.clone()),
        breakpoints: f
            .breakpoints
            .iter()
            .map(|(t, p)| (Rat(t.clone()), Rat(p.clone())))
            .collect(),
        direction: direction_from_core(f.direction),
    }
}

fn definition_to_core(dto: &CellDefDto, ligands: &mut LigandTable) -> CellDefinition {
    CellDefinition {
        name: dto.name.clone(),
        q0: dto.q0.0.clone(),
        sigma: dto.sigma.0.clone(),
        lambda: dto.lambda.0.clone(),
        omega: dto.omega.0.clone(),
        membrane: MembraneFunction {
            binding_bound: dto.membrane.binding_bound,
            rules: dto
                .membrane
                .rules
                .iter()
                .map(|rule| MembraneRule {
                    conditions: rule
                        .conditions
                        .iter()
                        .map(|c| MembraneCondition {
                            ligand: ligands.intern(&c.ligand),
                            predicate: match c.predicate {
                                PredicateDto::AtLeast(k) => CountPredicate::AtLeast(k),
                                PredicateDto::Zero => CountPredicate::Zero,
                            },
                        })
                        .collect(),
                    offset: rule.offset.0.clone(),
                })
                .collect(),
        },
        events: dto
            .events
            .iter()
            .map(|e| BioelectricEvent {
                firing: firing_to_core(&e.firing),
                offset: e.offset.0.clone(),
                ligand: ligands.intern(&e.ligand),
            })
            .collect(),
    }
}

fn definition_from_core(def: &CellDefinition, ligands: &LigandTable) -> CellDefDto {
    CellDefDto {
        name: def.name.clone(),
        q0: Rat(def.q0.clone()),
        sigma: Rat(def.sigma.clone()),
        lambda: Rat(def.lambda.clone()),
        omega: Rat(def.omega.clone()),
        membrane: MembraneDto {
            binding_bound: def.membrane.binding_bound,
            rules: def
                .membrane
                .rules
                .iter()
                .map(|rule| MembraneRuleDto {
                    conditions: rule
                        .conditions
                        .iter()
                        .map(|c| ConditionDto {
                            ligand: ligands.name(c.ligand).to_string(),
                            predicate: match c.predicate {
                                CountPredicate::AtLeast(k) => PredicateDto::AtLeast(k),
                                CountPredicate::Zero => PredicateDto::Zero,
                            },
                        })
                        .collect(),
                    offset: Rat(rule.offset.clone()),
                })
                .collect(),
        },
        events: def
            .events
            .iter()
            .map(|e| EventDto {
                firing: firing_from_core(&e.firing),
                offset: Rat(e.offset.clone()),
                ligand: ligands.name(e.ligand).to_string(),
            })
            .collect(),
    }
}

fn rule_to_core(dto: &ExpressionRuleDto) -> ExpressionRule {
    ExpressionRule {
        label: dto.label.clone(),
        threshold: dto.threshold.0.clone(),
        suppress_neighbors: dto.suppress_neighbors,
        applies_to: dto.applies_to.clone(),
    }
}

fn rule_from_core(rule: &ExpressionRule) -> ExpressionRuleDto {
    ExpressionRuleDto {
        label: rule.label.clone(),
        threshold: Rat(rule.threshold.clone()),
        suppress_neighbors: rule.suppress_neighbors,
        applies_to: rule.applies_to.clone(),
    }
}

/// Expands a template into definitions, assignment, and rules for `n`
/// vertices.
fn apply_template(
    template: &TemplateDto,
    n: usize,
) -> Result<(
    LigandTable,
    Vec<CellDefinition>,
    Vec<usize>,
    Vec<ExpressionRule>,
)> {
    let mut ligands = LigandTable::new();
    match template {
        TemplateDto::Knockback => {
            let bundle = library::knockback(&mut ligands);
            Ok((ligands, vec![bundle.definition], vec![0; n], bundle.rules))
        }
        TemplateDto::SmallThreshold { k } => {
            let bundle = library::small_threshold(*k, &mut ligands)?;
            Ok((ligands, vec![bundle.definition], vec![0; n], bundle.rules))
        }
        TemplateDto::GeneralThreshold { k } => {
            let bundle = library::general_threshold(*k, &mut ligands)?;
            Ok((ligands, vec![bundle.definition], vec![0; n], bundle.rules))
        }
        TemplateDto::MajorityPair {
            n_max,
            epsilon,
            count_a,
            count_b,
        } => {
            if count_a + count_b != n {
                bail!(
                    "majority_pair counts {} + {} must equal the vertex count {n}",
                    count_a,
                    count_b
                );
            }
            let (a, b, _) = library::majority_pair(*n_max, *epsilon, &mut ligands)?;
            let mut rules = a.rules;
            rules.extend(b.rules);
            let mut assignment = vec![0; *count_a];
            assignment.extend(std::iter::repeat(1).take(*count_b));
            Ok((ligands, vec![a.definition, b.definition], assignment, rules))
        }
    }
}

impl SystemFile {
    pub fn to_config(&self) -> Result<SystemConfig> {
        check_version(self.format_version, "system")?;
        let topology = self.topology.build()?;
        let n = topology.n();
        let (ligands, definitions, assignment, expression_rules) = match &self.cell {
            Some(template) => {
                if !self.definitions.is_empty()
                    || !self.assignment.is_empty()
                    || !self.expression_rules.is_empty()
                    || !self.ligands.is_empty()
                {
                    bail!("a templated system must not also carry inline definitions");
                }
                apply_template(template, n)?
            }
            None => {
                let mut ligands = LigandTable::new();
                for name in &self.ligands {
                    ligands.intern(name);
                }
                let definitions: Vec<CellDefinition> = self
                    .definitions
                    .iter()
                    .map(|d| definition_to_core(d, &mut ligands))
                    .collect();
                let assignment = if self.assignment.is_empty() && definitions.len() == 1 {
                    vec![0; n]
                } else {
                    self.assignment.clone()
                };
                let rules = self.expression_rules.iter().map(rule_to_core).collect();
                (ligands, definitions, assignment, rules)
            }
        };
        let config = SystemConfig {
            topology,
            ligands,
            definitions,
            assignment,
            expression_rules,
            mode: match self.mode {
                ModeDto::Expression => ExecutionMode::Expression,
                ModeDto::RawDynamics => ExecutionMode::RawDynamics,
            },
            gradient: match self.gradient {
                GradientDto::Restoring => GradientMode::Restoring,
                GradientDto::Asymmetric => GradientMode::Asymmetric,
            },
            initial_potentials: self
                .initial_potentials
                .iter()
                .map(|ip| (ip.vertex, ip.potential.0.clone()))
                .collect(),
        };
        config.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(config)
    }

    pub fn from_config(config: &SystemConfig, cm_layout: Option<&CmLayout>) -> Self {
        SystemFile {
            format_version: FORMAT_VERSION,
            topology: TopologyDto::from_topology(&config.topology),
            cell: None,
            ligands: config.ligands.names().map(String::from).collect(),
            definitions: config
                .definitions
                .iter()
                .map(|d| definition_from_core(d, &config.ligands))
                .collect(),
            assignment: config.assignment.clone(),
            expression_rules: config.expression_rules.iter().map(rule_from_core).collect(),
            mode: match config.mode {
                ExecutionMode::Expression => ModeDto::Expression,
                ExecutionMode::RawDynamics => ModeDto::RawDynamics,
            },
            gradient: match config.gradient {
                GradientMode::Restoring => GradientDto::Restoring,
                GradientMode::Asymmetric => GradientDto::Asymmetric,
            },
            initial_potentials: config
                .initial_potentials
                .iter()
                .map(|(vertex, potential)| InitialPotentialDto {
                    vertex: *vertex,
                    potential: Rat(potential.clone()),
                })
                .collect(),
            cm_layout: cm_layout.map(CmLayoutDto::from_layout),
        }
    }
}

// ---------------------------------------------------------------------------
// Graph files

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub format_version: u32,
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<Vec<Vec<Rat>>>,
    /// Generator parameters echoed for reproducibility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
}

impl GraphFile {
    pub fn to_topology(&self) -> Result<Topology> {
        check_version(self.format_version, "graph")?;
        TopologyDto::Explicit {
            n: self.n,
            edges: self.edges.clone(),
            coordinates: self.coordinates.clone(),
        }
        .build()
    }

    pub fn from_topology(topology: &Topology, params: Option<serde_json::Value>) -> Self {
        GraphFile {
            format_version: FORMAT_VERSION,
            n: topology.n(),
            edges: topology.edge_list(),
            coordinates: topology.embedding().map(|points| {
                points
                    .iter()
                    .map(|p| p.iter().cloned().map(Rat).collect())
                    .collect()
            }),
            params,
        }
    }
}

// ---------------------------------------------------------------------------
// Counter-machine files

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmFile {
    pub format_version: u32,
    pub counters: Vec<u64>,
    pub states: Vec<CmStateDto>,
    pub start: usize,
    pub transitions: Vec<CmTransitionDto>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmStateDto {
    pub name: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub halt: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmTransitionDto {
    pub state: usize,
    /// Counter index, or `"*"` for a wildcard guard.
    pub counter: CounterRefDto,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<StatusDto>,
    pub to: usize,
    pub op_counter: usize,
    pub op: OpDto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CounterRefDto {
    Index(usize),
    Wildcard(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusDto {
    Zero,
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpDto {
    Inc,
    Dec,
}

impl CmFile {
    pub fn to_machine(&self) -> Result<CounterMachine> {
        check_version(self.format_version, "cm")?;
        let mut transitions = Vec::with_capacity(self.transitions.len());
        for (i, t) in self.transitions.iter().enumerate() {
            let guard = match (&t.counter, t.status) {
                (CounterRefDto::Wildcard(star), status) => {
                    if star != "*" {
                        bail!("transition {i}: counter must be an index or \"*\", got {star:?}");
                    }
                    if status.is_some() {
                        bail!("transition {i}: a wildcard guard takes no status");
                    }
                    Guard::Wildcard
                }
                (CounterRefDto::Index(counter), Some(status)) => Guard::Test {
                    counter: *counter,
                    status: match status {
                        StatusDto::Zero => CounterStatus::Zero,
                        StatusDto::Positive => CounterStatus::Positive,
                    },
                },
                (CounterRefDto::Index(_), None) => {
                    bail!("transition {i}: a counter test needs a status")
                }
            };
            transitions.push(Transition {
                state: t.state,
                guard,
                to: t.to,
                op_counter: t.op_counter,
                op: match t.op {
                    OpDto::Inc => CounterOp::Inc,
                    OpDto::Dec => CounterOp::Dec,
                },
            });
        }
        Ok(CounterMachine {
            counters: self.counters.clone(),
            states: self
                .states
                .iter()
                .map(|s| CmState {
                    name: s.name.clone(),
                    halt: s.halt,
                })
                .collect(),
            start: self.start,
            transitions,
        })
    }

    pub fn from_machine(cm: &CounterMachine) -> Self {
        CmFile {
            format_version: FORMAT_VERSION,
            counters: cm.counters.clone(),
            states: cm
                .states
                .iter()
                .map(|s| CmStateDto {
                    name: s.name.clone(),
                    halt: s.halt,
                })
                .collect(),
            start: cm.start,
            transitions: cm
                .transitions
                .iter()
                .map(|t| {
                    let (counter, status) = match t.guard {
                        Guard::Wildcard => (CounterRefDto::Wildcard(String::from("*")), None),
                        Guard::Test { counter, status } => (
                            CounterRefDto::Index(counter),
                            Some(match status {
                                CounterStatus::Zero => StatusDto::Zero,
                                CounterStatus::Positive => StatusDto::Positive,
                            }),
                        ),
                    };
                    CmTransitionDto {
                        state: t.state,
                        counter,
                        status,
                        to: t.to,
                        op_counter: t.op_counter,
                        op: match t.op {
                            CounterOp::Inc => OpDto::Inc,
                            CounterOp::Dec => OpDto::Dec,
                        },
                    }
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Experiment spec files

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentFile {
    pub format_version: u32,
    #[serde(flatten)]
    pub spec: ExperimentSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentSpec {
    LeaderElection(LeaderSpec),
    Mis(MisSpec),
    MisStabilize(MisStabilizeSpec),
    Threshold(ThresholdSpec),
    Majority(MajoritySpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderSpec {
    pub n_values: Vec<usize>,
    pub trials: u64,
    pub base_seed: u64,
    pub round_budget: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisPoint {
    pub n: usize,
    /// Sampling cube side length.
    pub side: Rat,
}

pub fn default_mis_budget_constant() -> f64 {
    crate::experiments::MIS_BUDGET_CONSTANT
}

pub fn default_stabilize_constant() -> f64 {
    crate::experiments::MIS_STABILIZE_CONSTANT
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisSpec {
    pub points: Vec<MisPoint>,
    /// Instances sampled per point; each instance is one trial.
    pub instances: u64,
    pub dimension: usize,
    pub base_seed: u64,
    /// Multiplier c in the round budget ceil(c * log2(max_degree + 2)^2 *
    /// log2(max(n, 2))).
    #[serde(default = "default_mis_budget_constant")]
    pub budget_constant: f64,
}

fn default_window() -> u64 {
    50
}

fn default_init_low() -> Rat {
    Rat(cbm_core::rational::int(-3))
}

fn default_init_high() -> Rat {
    Rat(cbm_core::rational::int(3))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisStabilizeSpec {
    pub points: Vec<MisPoint>,
    pub instances: u64,
    pub dimension: usize,
    pub base_seed: u64,
    #[serde(default = "default_stabilize_constant")]
    pub budget_constant: f64,
    /// Rounds the predicate set must stay valid and unchanged.
    #[serde(default = "default_window")]
    pub window: u64,
    /// Initial potentials are sampled uniformly from the eighths of this
    /// closed range.
    #[serde(default = "default_init_low")]
    pub init_low: Rat,
    #[serde(default = "default_init_high")]
    pub init_high: Rat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSpec {
    pub k: u64,
    pub n_values: Vec<usize>,
    pub trials: u64,
    pub base_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MajorityPoint {
    pub count_a: usize,
    pub count_b: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MajoritySpec {
    pub n_max: u64,
    pub epsilon: f64,
    pub points: Vec<MajorityPoint>,
    pub trials: u64,
    pub base_seed: u64,
    pub round_budget: u64,
}

// ---------------------------------------------------------------------------
// Trace JSON Lines

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TraceLine {
    TraceHeader(TraceHeaderDto),
    Round(RoundDto),
    Stop(StopLineDto),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceHeaderDto {
    pub format_version: u32,
    pub rng_algorithm: String,
    pub seed: u64,
    pub max_rounds: u64,
    pub stop: StopDto,
    pub system: SystemFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopDto {
    RoundBudget,
    FirstExpression(String),
    AnyExpression,
    AllInactive,
    StatusFixedPoint { window: u64 },
}

impl StopDto {
    pub fn to_core(&self) -> StopCondition {
        match self {
            StopDto::RoundBudget => StopCondition::RoundBudget,
            StopDto::FirstExpression(label) => StopCondition::FirstExpression(label.clone()),
            StopDto::AnyExpression => StopCondition::AnyExpression,
            StopDto::AllInactive => StopCondition::AllInactive,
            StopDto::StatusFixedPoint { window } => {
                StopCondition::StatusFixedPoint { window: *window }
            }
        }
    }

    pub fn from_core(stop: &StopCondition) -> Self {
        match stop {
            StopCondition::RoundBudget => StopDto::RoundBudget,
            StopCondition::FirstExpression(label) => StopDto::FirstExpression(label.clone()),
            StopCondition::AnyExpression => StopDto::AnyExpression,
            StopCondition::AllInactive => StopDto::AllInactive,
            StopCondition::StatusFixedPoint { window } => {
                StopDto::StatusFixedPoint { window: *window }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundDto {
    pub round: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expressions: Vec<ExpressionDto>,
    pub cells: Vec<CellRoundDto>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpressionDto {
    pub vertex: usize,
    pub rule: usize,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suppressed: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRoundDto {
    pub vertex: usize,
    pub start: Rat,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fired: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub emitted: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub received: Vec<ReceivedDto>,
    pub event_offset: Rat,
    pub membrane_offset: Rat,
    pub gradient_offset: Rat,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub floor_clamped: bool,
    pub end: Rat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReceivedDto {
    pub ligand: String,
    pub count: u32,
    pub bound: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReasonDto {
    BudgetExhausted,
    Expressed { label: String, round: u64 },
    AllInactive { round: u64 },
    StatusesFixed { round: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatusDto {
    Active,
    Expressed { rule: usize, round: u64 },
    Suppressed { rule: usize, round: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StopLineDto {
    pub reason: StopReasonDto,
    pub final_round: u64,
    pub final_potentials: Vec<Rat>,
    pub final_statuses: Vec<CellStatusDto>,
}

fn round_to_dto(report: &RoundReport, ligands: &LigandTable) -> RoundDto {
    RoundDto {
        round: report.round,
        expressions: report
            .expressions
            .iter()
            .map(|e| ExpressionDto {
                vertex: e.vertex,
                rule: e.rule,
                label: e.label.clone(),
                suppressed: e.suppressed.clone(),
            })
            .collect(),
        cells: report
            .cells
            .iter()
            .map(|c| CellRoundDto {
                vertex: c.vertex,
                start: Rat(c.start.clone()),
                fired: c.fired.clone(),
                emitted: c
                    .emitted
                    .iter()
                    .map(|&l| ligands.name(l).to_string())
                    .collect(),
                received: c
                    .received
                    .iter()
                    .map(|r| ReceivedDto {
                        ligand: ligands.name(r.ligand).to_string(),
                        count: r.count,
                        bound: r.bound,
                    })
                    .collect(),
                event_offset: Rat(c.event_offset.clone()),
                membrane_offset: Rat(c.membrane_offset.clone()),
                gradient_offset: Rat(c.gradient_offset.clone()),
                floor_clamped: c.floor_clamped,
                end: Rat(c.end.clone()),
            })
            .collect(),
    }
}

fn round_from_dto(dto: &RoundDto, ligands: &LigandTable) -> Result<RoundReport> {
    let lookup = |name: &str| -> Result<LigandId> {
        ligands
            .id(name)
            .ok_or_else(|| anyhow::anyhow!("trace references unknown ligand {name:?}"))
    };
    Ok(RoundReport {
        round: dto.round,
        expressions: dto
            .expressions
            .iter()
            .map(|e| ExpressionRecord {
                vertex: e.vertex,
                rule: e.rule,
                label: e.label.clone(),
                suppressed: e.suppressed.clone(),
            })
            .collect(),
        cells: dto
            .cells
            .iter()
            .map(|c| {
                Ok(CellRound {
                    vertex: c.vertex,
                    start: c.start.0.clone(),
                    fired: c.fired.clone(),
                    emitted: c
                        .emitted
                        .iter()
                        .map(|name| lookup(name))
                        .collect::<Result<_>>()?,
                    received: c
                        .received
                        .iter()
                        .map(|r| {
                            Ok(LigandCount {
                                ligand: lookup(&r.ligand)?,
                                count: r.count,
                                bound: r.bound,
                            })
                        })
                        .collect::<Result<_>>()?,
                    event_offset: c.event_offset.0.clone(),
                    membrane_offset: c.membrane_offset.0.clone(),
                    gradient_offset: c.gradient_offset.0.clone(),
                    floor_clamped: c.floor_clamped,
                    end: c.end.0.clone(),
                })
            })
            .collect::<Result<_>>()?,
    })
}

fn status_to_dto(status: &CellStatus) -> CellStatusDto {
    match status {
        CellStatus::Active => CellStatusDto::Active,
        CellStatus::Expressed { rule, round } => CellStatusDto::Expressed {
            rule: *rule,
            round: *round,
        },
        CellStatus::Suppressed { rule, round } => CellStatusDto::Suppressed {
            rule: *rule,
            round: *round,
        },
    }
}

fn status_from_dto(status: &CellStatusDto) -> CellStatus {
    match status {
        CellStatusDto::Active => CellStatus::Active,
        CellStatusDto::Expressed { rule, round } => CellStatus::Expressed {
            rule: *rule,
            round: *round,
        },
        CellStatusDto::Suppressed { rule, round } => CellStatus::Suppressed {
            rule: *rule,
            round: *round,
        },
    }
}

/// Writes a trace as JSON Lines: one header record, one record per round,
/// one stop record.
pub fn write_trace<W: Write>(
    trace: &Trace,
    cm_layout: Option<&CmLayout>,
    mut out: W,
) -> Result<()> {
    let header = TraceLine::TraceHeader(TraceHeaderDto {
        format_version: FORMAT_VERSION,
        rng_algorithm: trace.rng_algorithm.clone(),
        seed: trace.seed,
        max_rounds: trace.max_rounds,
        stop: StopDto::from_core(&trace.stop),
        system: SystemFile::from_config(&trace.config, cm_layout),
    });
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for report in &trace.reports {
        serde_json::to_writer(
            &mut out,
            &TraceLine::Round(round_to_dto(report, &trace.config.ligands)),
        )?;
        out.write_all(b"\n")?;
    }
    let stop = TraceLine::Stop(StopLineDto {
        reason: match &trace.stop_reason {
            StopReason::BudgetExhausted => StopReasonDto::BudgetExhausted,
            StopReason::Expressed { label, round } => StopReasonDto::Expressed {
                label: label.clone(),
                round: *round,
            },
            StopReason::AllInactive { round } => StopReasonDto::AllInactive { round: *round },
            StopReason::StatusesFixed { round } => StopReasonDto::StatusesFixed { round: *round },
        },
        final_round: trace.final_state.round,
        final_potentials: trace
            .final_state
            .potentials
            .iter()
            .cloned()
            .map(Rat)
            .collect(),
        final_statuses: trace
            .final_state
            .statuses
            .iter()
            .map(status_to_dto)
            .collect(),
    });
    serde_json::to_writer(&mut out, &stop)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Reads a JSON Lines trace back; the result replays exactly.
pub fn read_trace<R: BufRead>(reader: R) -> Result<(Trace, Option<CmLayout>)> {
    let mut header: Option<TraceHeaderDto> = None;
    let mut rounds: Vec<RoundDto> = Vec::new();
    let mut stop_line: Option<StopLineDto> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine =
            serde_json::from_str(&line).with_context(|| format!("trace line {}", i + 1))?;
        match parsed {
            TraceLine::TraceHeader(h) => {
                if header.is_some() {
                    bail!("trace has two header records");
                }
                check_version(h.format_version, "trace")?;
                header = Some(h);
            }
            TraceLine::Round(r) => rounds.push(r),
            TraceLine::Stop(s) => {
                if stop_line.is_some() {
                    bail!("trace has two stop records");
                }
                stop_line = Some(s);
            }
        }
    }
    let header = header.ok_or_else(|| anyhow::anyhow!("trace is missing its header record"))?;
    let stop_line = stop_line.ok_or_else(|| anyhow::anyhow!("trace is missing its stop record"))?;
    let config = header.system.to_config()?;
    let cm_layout = header.system.cm_layout.as_ref().map(CmLayoutDto::to_layout);
    let reports = rounds
        .iter()
        .map(|r| round_from_dto(r, &config.ligands))
        .collect::<Result<Vec<_>>>()?;
    let trace = Trace {
        config,
        seed: header.seed,
        rng_algorithm: header.rng_algorithm,
        max_rounds: header.max_rounds,
        stop: header.stop.to_core(),
        reports,
        stop_reason: match stop_line.reason {
            StopReasonDto::BudgetExhausted => StopReason::BudgetExhausted,
            StopReasonDto::Expressed { label, round } => StopReason::Expressed { label, round },
            StopReasonDto::AllInactive { round } => StopReason::AllInactive { round },
            StopReasonDto::StatusesFixed { round } => StopReason::StatusesFixed { round },
        },
        final_state: SystemState {
            round: stop_line.final_round,
            potentials: stop_line
                .final_potentials
                .iter()
                .map(|r| r.0.clone())
                .collect(),
            statuses: stop_line
                .final_statuses
                .iter()
                .map(status_from_dto)
                .collect(),
        },
    };
    Ok((trace, cm_layout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cbm_core::engine::run;
    use cbm_core::rational::{int, rat};

    fn knockback_file(n: usize) -> SystemFile {
        SystemFile {
            format_version: FORMAT_VERSION,
            topology: TopologyDto::Complete { n },
            cell: Some(TemplateDto::Knockback),
            ligands: Vec::new(),
            definitions: Vec::new(),
            assignment: Vec::new(),
            expression_rules: Vec::new(),
            mode: ModeDto::default(),
            gradient: GradientDto::default(),
            initial_potentials: Vec::new(),
            cm_layout: None,
        }
    }

    #[test]
    fn template_system_round_trips_through_json() {
        let file = knockback_file(3);
        let text = serde_json::to_string(&AnyFile::System(file)).unwrap();
        assert!(text.contains("\"kind\":\"system\""));
        assert!(text.contains("\"knockback\""));
        let back: AnyFile = serde_json::from_str(&text).unwrap();
        let AnyFile::System(sys) = back else {
            panic!("expected a system file")
        };
        let config = sys.to_config().unwrap();
        assert_eq!(config.topology.n(), 3);
        assert_eq!(config.definitions.len(), 1);
        assert_eq!(config.expression_rules.len(), 1);
    }

    #[test]
    fn inline_system_survives_config_round_trip() {
        let config = knockback_file(4).to_config().unwrap();
        let file = SystemFile::from_config(&config, None);
        let text = serde_json::to_string_pretty(&file).unwrap();
        let back: SystemFile = serde_json::from_str(&text).unwrap();
        let again = back.to_config().unwrap();
        assert_eq!(config, again);
    }

    #[test]
    fn rationals_serialize_as_fraction_strings() {
        let text = serde_json::to_string(&Rat(rat(-3, 2))).unwrap();
        assert_eq!(text, "\"-3/2\"");
        let text = serde_json::to_string(&Rat(int(7))).unwrap();
        assert_eq!(text, "\"7\"");
        let back: Rat = serde_json::from_str("\"6/4\"").unwrap();
        assert_eq!(back.0, rat(3, 2));
        assert!(serde_json::from_str::<Rat>("\"1/0\"").is_err());
    }

    #[test]
    fn templated_system_rejects_inline_extras() {
        let mut file = knockback_file(2);
        file.assignment = vec![0, 0];
        assert!(file.to_config().is_err());
    }

    #[test]
    fn explicit_topology_checks_coordinate_consistency() {
        let good = TopologyDto::Explicit {
            n: 2,
            edges: vec![(0, 1)],
            coordinates: Some(vec![vec![Rat(int(0))], vec![Rat(int(1))]]),
        };
        assert!(good.build().is_ok());
        let bad = TopologyDto::Explicit {
            n: 2,
            edges: Vec::new(),
            coordinates: Some(vec![vec![Rat(int(0))], vec![Rat(int(1))]]),
        };
        assert!(bad.build().is_err());
    }

    #[test]
    fn cm_file_round_trips_with_wildcards() {
        let machine = cbm_core::cm::suite::adder(2, 3);
        let file = CmFile::from_machine(&machine);
        let text = serde_json::to_string(&AnyFile::Cm(file)).unwrap();
        assert!(text.contains("\"counter\":\"*\""));
        let AnyFile::Cm(back) = serde_json::from_str::<AnyFile>(&text).unwrap() else {
            panic!("expected a cm file")
        };
        assert_eq!(back.to_machine().unwrap(), machine);
    }

    #[test]
    fn cm_file_rejects_contradictory_guards() {
        let mut file = CmFile::from_machine(&cbm_core::cm::suite::adder(1, 1));
        file.transitions[2].status = Some(StatusDto::Zero);
        assert!(file.to_machine().is_err());
        let mut file = CmFile::from_machine(&cbm_core::cm::suite::decrement_loop(1));
        file.transitions[0].status = None;
        assert!(file.to_machine().is_err());
    }

    #[test]
    fn trace_jsonl_round_trips_and_replays() {
        let config = knockback_file(3).to_config().unwrap();
        let trace = run(
            &config,
            42,
            30,
            &StopCondition::FirstExpression(String::from(library::LABEL_LEADER)),
        );
        let mut buf = Vec::new();
        write_trace(&trace, None, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains("\"kind\":\"trace-header\""));
        let (back, layout) = read_trace(buf.as_slice()).unwrap();
        assert!(layout.is_none());
        assert_eq!(back, trace);
        assert!(cbm_core::engine::replay(&back).is_ok());
    }

    #[test]
    fn trace_reader_requires_header_and_stop() {
        let config = knockback_file(2).to_config().unwrap();
        let trace = run(&config, 1, 5, &StopCondition::RoundBudget);
        let mut buf = Vec::new();
        write_trace(&trace, None, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let without_header: String = text.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert!(read_trace(without_header.as_bytes()).is_err());
        let without_stop: String = text
            .lines()
            .take(text.lines().count() - 1)
            .collect::<Vec<_>>()
            .join("\n");
        assert!(read_trace(without_stop.as_bytes()).is_err());
    }

    #[test]
    fn experiment_spec_parses_kebab_case_ids() {
        let text = r#"{
            "kind": "experiment",
            "format_version": 1,
            "experiment": "leader-election",
            "n_values": [2, 4],
            "trials": 10,
            "base_seed": 1,
            "round_budget": 200
        }"#;
        let AnyFile::Experiment(file) = serde_json::from_str::<AnyFile>(text).unwrap() else {
            panic!("expected an experiment file")
        };
        let ExperimentSpec::LeaderElection(spec) = &file.spec else {
            panic!("expected leader-election")
        };
        assert_eq!(spec.n_values, vec![2, 4]);
    }

    #[test]
    fn graph_file_round_trips_ubg() {
        let sample = cbm_core::topology::ubg_random(&UbgParams {
            n: 12,
            dimension: 2,
            side: rat(5, 2),
            seed: 7,
            policy: ConnectPolicy::Resample { limit: 1000 },
        })
        .unwrap();
        let file = GraphFile::from_topology(&sample.topology, None);
        let text = serde_json::to_string(&AnyFile::Graph(file)).unwrap();
        let AnyFile::Graph(back) = serde_json::from_str::<AnyFile>(&text).unwrap() else {
            panic!("expected a graph file")
        };
        let topology = back.to_topology().unwrap();
        assert_eq!(topology, sample.topology);
    }

    #[test]
    fn unit_ball_topology_dto_is_deterministic() {
        let dto = TopologyDto::UnitBall {
            n: 10,
            dimension: 2,
            side: Rat(rat(5, 2)),
            seed: 3,
            resample_limit: 1000,
        };
        assert_eq!(dto.build().unwrap(), dto.build().unwrap());
    }
}
