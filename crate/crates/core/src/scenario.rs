//! Scenario files: a TOML schema for problem instances, validation with
//! field-level error context, and conversion into a runnable [`Scenario`].
//!
//! The file layer is deliberately dumber than the in-memory types: matrices
//! are nested arrays, senses are words, and two-sided bounds are a single
//! `range` entry that expands into two `<=`-constraints at conversion time.
//! Three scenarios ship embedded in the binary (see [`BUILTIN_NAMES`]) so the
//! toolkit works out of the box; they live as plain files under `scenarios/`
//! at the repository root and are compiled in verbatim.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::{zoh_discretize, ContinuousLinearSystem, DiscreteLinearSystem};
use crate::oracle::GridSchedule;
use crate::quadform::{Placement, QuadraticKind, StageSpec};
use crate::sim::Scenario;
use crate::socp::SolverOptions;

/// Names accepted anywhere a scenario file path is expected.
pub const BUILTIN_NAMES: [&str; 3] = ["example1", "double_integrator", "microgrid"];

/// The embedded text of a built-in scenario, if `name` is one.
pub fn builtin(name: &str) -> Option<&'static str> {
    match name {
        "example1" => Some(include_str!("../../../scenarios/example1.toml")),
        "double_integrator" => Some(include_str!("../../../scenarios/double_integrator.toml")),
        "microgrid" => Some(include_str!("../../../scenarios/microgrid.toml")),
        _ => None,
    }
}

/// Top-level scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub horizon: usize,
    pub x0: Vec<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    pub system: SystemBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverBlock>,
    pub objective: StageBlock,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<StageBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleBlock>,
}

fn default_steps() -> usize {
    1
}

/// Either a continuous system (discretized on load) or a discrete one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<ContinuousBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrete: Option<DiscreteBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousBlock {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteBlock {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

/// One quadratic block: cost matrices, an optional placement, and — for
/// constraints — a sense with its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StageBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_cost: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_cost: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_control: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub constant: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<PlacementField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sense: Option<SenseField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundField>,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// `"all"`, `"each"`, `"terminal"`, or a single step index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlacementField {
    Step(usize),
    Named(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SenseField {
    Le,
    Ge,
    Range,
}

/// A scalar for `le`/`ge`, a `[low, high]` pair for `range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundField {
    Scalar(f64),
    Interval([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feas_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

/// Optional grid-search configuration used by the brute-force cross-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OracleBlock {
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub search_box: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_points: Option<usize>,
}

impl ScheduleBlock {
    /// Defaults filled in for every field the file left out.
    pub fn to_schedule(&self) -> GridSchedule {
        let base = GridSchedule::default();
        GridSchedule {
            initial_points: self.initial_points.unwrap_or(base.initial_points),
            rounds: self.rounds.unwrap_or(base.rounds),
            keep: self.keep.unwrap_or(base.keep),
            refine_factor: self.refine_factor.unwrap_or(base.refine_factor),
            local_points: self.local_points.unwrap_or(base.local_points),
        }
    }
}

impl SolverBlock {
    pub fn to_options(&self) -> SolverOptions {
        let base = SolverOptions::default();
        SolverOptions {
            feas_tol: self.feas_tol.unwrap_or(base.feas_tol),
            gap_tol: self.gap_tol.unwrap_or(base.gap_tol),
            max_iter: self.max_iter.unwrap_or(base.max_iter),
        }
    }
}

/// Parses and schema-validates a scenario document.
pub fn load_str(text: &str) -> Result<ScenarioFile> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string().trim().to_string()))?;
    validate(&file)?;
    Ok(file)
}

/// Reads, parses and schema-validates a scenario file.
pub fn load_path(path: &Path) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    load_str(&text)
}

/// Loads a scenario from a path, falling back to the built-in with that name
/// when no such file exists.
pub fn resolve(name_or_path: &str) -> Result<ScenarioFile> {
    let path = Path::new(name_or_path);
    if path.exists() {
        return load_path(path);
    }
    if let Some(text) = builtin(name_or_path) {
        return load_str(text);
    }
    Err(Error::Io(format!(
        "no file or built-in scenario named '{name_or_path}' (built-ins: {})",
        BUILTIN_NAMES.join(", ")
    )))
}

/// Serializes a scenario document back to TOML. Loading the output yields a
/// document equal to the input.
pub fn dump(file: &ScenarioFile) -> Result<String> {
    toml::to_string_pretty(file).map_err(|e| Error::Schema(e.to_string()))
}

fn validate(file: &ScenarioFile) -> Result<()> {
    if file.horizon == 0 {
        return Err(Error::Schema("horizon must be at least 1".into()));
    }
    if file.x0.is_empty() {
        return Err(Error::Schema("x0 must not be empty".into()));
    }
    match (&file.system.continuous, &file.system.discrete) {
        (Some(_), Some(_)) => {
            return Err(Error::Schema(
                "system: give either a continuous or a discrete block, not both".into(),
            ))
        }
        (None, None) => {
            return Err(Error::Schema(
                "system: a continuous or a discrete block is required".into(),
            ))
        }
        (Some(c), None) => {
            if c.dt <= 0.0 || !c.dt.is_finite() {
                return Err(Error::Schema(format!(
                    "system.continuous.dt must be a positive number, got {}",
                    c.dt
                )));
            }
            check_matrix(&c.a, "system.continuous.a")?;
            check_matrix(&c.b, "system.continuous.b")?;
        }
        (None, Some(d)) => {
            check_matrix(&d.a, "system.discrete.a")?;
            check_matrix(&d.b, "system.discrete.b")?;
        }
    }
    validate_block(&file.objective, "objective", true, file.horizon)?;
    for (i, c) in file.constraints.iter().enumerate() {
        validate_block(c, &format!("constraints[{i}]"), false, file.horizon)?;
    }
    if let Some(oracle) = &file.oracle {
        if let Some(bx) = &oracle.search_box {
            for (k, pair) in bx.iter().enumerate() {
                if pair[0] > pair[1] {
                    return Err(Error::Schema(format!(
                        "oracle.box[{k}]: low {} exceeds high {}",
                        pair[0], pair[1]
                    )));
                }
            }
        }
    }
    Ok(())
}

fn check_matrix(rows: &[Vec<f64>], what: &str) -> Result<()> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Schema(format!("{what}: matrix must not be empty")));
    }
    let width = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::Schema(format!(
                "{what}: row {i} has {} entries but row 0 has {width}",
                r.len()
            )));
        }
    }
    Ok(())
}

fn validate_block(
    block: &StageBlock,
    what: &str,
    is_objective: bool,
    horizon: usize,
) -> Result<()> {
    for (field, m) in [
        ("state_cost", &block.state_cost),
        ("control_cost", &block.control_cost),
        ("cross", &block.cross),
    ] {
        if let Some(rows) = m {
            check_matrix(rows, &format!("{what}.{field}"))?;
        }
    }
    match &block.placement {
        None => {}
        Some(PlacementField::Step(k)) => {
            if *k >= horizon {
                return Err(Error::Schema(format!(
                    "{what}.placement: step {k} is past the last step {}",
                    horizon - 1
                )));
            }
        }
        Some(PlacementField::Named(word)) => match word.as_str() {
            "all" | "terminal" => {}
            "each" => {
                if is_objective {
                    return Err(Error::Schema(format!(
                        "{what}.placement: 'each' splits a block per step and only makes \
                         sense for constraints"
                    )));
                }
            }
            other => {
                return Err(Error::Schema(format!(
                    "{what}.placement: expected 'all', 'each', 'terminal' or a step index, \
                     got '{other}'"
                )))
            }
        },
    }
    match (is_objective, &block.sense, &block.bound) {
        (true, None, None) => {}
        (true, _, _) => {
            return Err(Error::Schema(format!(
                "{what}: the objective takes no sense or bound"
            )))
        }
        (false, None, None) => {}
        (false, None, Some(_)) => {
            return Err(Error::Schema(format!(
                "{what}.bound: a bound needs a sense ('le', 'ge' or 'range')"
            )))
        }
        (false, Some(_), None) => {
            return Err(Error::Schema(format!(
                "{what}.sense: a sense needs a bound"
            )))
        }
        (false, Some(sense), Some(bound)) => match (sense, bound) {
            (SenseField::Range, BoundField::Interval(pair)) => {
                if pair[0] > pair[1] {
                    return Err(Error::Schema(format!(
                        "{what}.bound: range low {} exceeds high {}",
                        pair[0], pair[1]
                    )));
                }
            }
            (SenseField::Range, BoundField::Scalar(_)) => {
                return Err(Error::Schema(format!(
                    "{what}.bound: sense 'range' needs a [low, high] pair"
                )))
            }
            (_, BoundField::Interval(_)) => {
                return Err(Error::Schema(format!(
                    "{what}.bound: senses 'le' and 'ge' take a single number"
                )))
            }
            (_, BoundField::Scalar(_)) => {}
        },
    }
    Ok(())
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    DMatrix::from_row_slice(rows.len(), rows[0].len(), &flat)
}

impl ScenarioFile {
    /// Builds the runnable scenario: discretizes a continuous system,
    /// expands `each` placements into per-step blocks and two-sided bounds
    /// into constraint pairs, and fills solver defaults.
    pub fn to_scenario(&self) -> Result<Scenario> {
        let system = match (&self.system.continuous, &self.system.discrete) {
            (Some(c), None) => zoh_discretize(
                &ContinuousLinearSystem::new(to_matrix(&c.a), to_matrix(&c.b))?,
                c.dt,
            )?,
            (None, Some(d)) => DiscreteLinearSystem::new(to_matrix(&d.a), to_matrix(&d.b))?,
            _ => unreachable!("validated on load"),
        };
        let objective = {
            let mut specs = expand_block(&self.objective, QuadraticKind::Objective, self.horizon);
            debug_assert_eq!(specs.len(), 1, "objective blocks never fan out");
            specs.swap_remove(0)
        };
        let mut constraints = Vec::new();
        for block in &self.constraints {
            constraints.extend(expand_block(block, QuadraticKind::Constraint, self.horizon));
        }
        Ok(Scenario {
            system,
            horizon: self.horizon,
            objective,
            constraints,
            x0: DVector::from_vec(self.x0.clone()),
            steps: self.steps,
            solver: self.solver.clone().unwrap_or_default().to_options(),
        })
    }
}

fn base_spec(block: &StageBlock, kind: QuadraticKind, placement: Placement) -> StageSpec {
    StageSpec {
        state_quad: block.state_cost.as_deref().map(to_matrix),
        control_quad: block.control_cost.as_deref().map(to_matrix),
        cross: block.cross.as_deref().map(to_matrix),
        state_lin: block
            .linear_state
            .as_ref()
            .map(|v| DVector::from_vec(v.clone())),
        control_lin: block
            .linear_control
            .as_ref()
            .map(|v| DVector::from_vec(v.clone())),
        constant: block.constant,
        placement,
        kind,
    }
}

fn negated_spec(s: &StageSpec) -> StageSpec {
    StageSpec {
        state_quad: s.state_quad.as_ref().map(|m| -m),
        control_quad: s.control_quad.as_ref().map(|m| -m),
        cross: s.cross.as_ref().map(|m| -m),
        state_lin: s.state_lin.as_ref().map(|v| -v),
        control_lin: s.control_lin.as_ref().map(|v| -v),
        constant: -s.constant,
        placement: s.placement,
        kind: s.kind,
    }
}

/// Expands one file block into concrete stage specs: one per placement
/// instance (`each` fans out over the horizon), times one or two depending
/// on the sense (`range` becomes its lower then its upper constraint).
fn expand_block(block: &StageBlock, kind: QuadraticKind, horizon: usize) -> Vec<StageSpec> {
    let placements: Vec<Placement> = match &block.placement {
        None => vec![Placement::AllSteps],
        Some(PlacementField::Step(k)) => vec![Placement::Step(*k)],
        Some(PlacementField::Named(word)) => match word.as_str() {
            "all" => vec![Placement::AllSteps],
            "terminal" => vec![Placement::Terminal],
            "each" => (0..horizon).map(Placement::Step).collect(),
            _ => unreachable!("validated on load"),
        },
    };
    let mut specs = Vec::new();
    for placement in placements {
        let base = base_spec(block, kind, placement);
        match (&block.sense, &block.bound) {
            (None, None) => specs.push(base),
            (Some(SenseField::Le), Some(BoundField::Scalar(b))) => {
                let mut s = base;
                s.constant -= b;
                specs.push(s);
            }
            (Some(SenseField::Ge), Some(BoundField::Scalar(b))) => {
                let mut s = negated_spec(&base);
                s.constant += b;
                specs.push(s);
            }
            (Some(SenseField::Range), Some(BoundField::Interval(pair))) => {
                let mut lower = negated_spec(&base);
                lower.constant += pair[0];
                specs.push(lower);
                let mut upper = base;
                upper.constant -= pair[1];
                specs.push(upper);
            }
            _ => unreachable!("validated on load"),
        }
    }
    specs
}
