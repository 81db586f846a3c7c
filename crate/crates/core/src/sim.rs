//! Single-shot solves and receding-horizon simulation.
//!
//! [`PreparedScenario`] runs the state-independent half of the pipeline once
//! (assembly, condensation, sign-vector search, admissible regions);
//! [`solve_step`] then classifies an initial state, solves the relaxation,
//! recovers a control sequence, and audits it; [`receding_horizon`] iterates
//! that loop applying only the first control of each solve. Trajectories
//! serialize to CSV for plotting and to JSON with full diagnostics.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linsys::{propagate, DiscreteLinearSystem};
use crate::odnp::{
    admissible_regions, check_family_odnp, classify_state, find_uniform_sign_vector,
    region_violations, AdmissibleRegions, RegionLabel, SignVector,
};
use crate::quadform::{
    assemble, condense, homogenize, CondensedQuadratic, HorizonQuadratic, QuadraticKind,
    StageSpec,
};
use crate::socp::{
    build_relaxation, certify, reconstruct, solve, ExactnessCertificate, SolveStatus,
    SolverOptions,
};

/// Feasibility slack a recovered point must meet for its certificate.
pub const CERT_FEAS_TOL: f64 = 1e-6;
/// Relative objective agreement a recovered point must meet.
pub const CERT_GAP_TOL: f64 = 1e-6;

/// A complete problem instance: dynamics, horizon, cost, constraints, the
/// initial state, and how many receding-horizon rounds to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: DiscreteLinearSystem,
    pub horizon: usize,
    pub objective: StageSpec,
    pub constraints: Vec<StageSpec>,
    pub x0: DVector<f64>,
    pub steps: usize,
    pub solver: SolverOptions,
}

/// A scenario with every state-independent artifact computed once: the
/// assembled and condensed family, the uniform sign vector, and the
/// admissible regions. Repeated [`solve_step`] calls reuse all of it.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    fs: Vec<HorizonQuadratic>,
    gs: Vec<CondensedQuadratic>,
    sigma: SignVector,
    regions: AdmissibleRegions,
}

impl PreparedScenario {
    pub fn new(scenario: Scenario) -> Result<Self> {
        if scenario.x0.len() != scenario.system.n_x() {
            return Err(Error::Dimension(format!(
                "initial state has length {} but the system has {} states",
                scenario.x0.len(),
                scenario.system.n_x()
            )));
        }
        if scenario.objective.kind != QuadraticKind::Objective {
            return Err(Error::InvalidArgument(
                "the scenario objective block must have objective kind".into(),
            ));
        }
        if scenario
            .constraints
            .iter()
            .any(|c| c.kind != QuadraticKind::Constraint)
        {
            return Err(Error::InvalidArgument(
                "scenario constraint blocks must have constraint kind".into(),
            ));
        }
        let (n, n_x, n_u) = (
            scenario.horizon,
            scenario.system.n_x(),
            scenario.system.n_u(),
        );
        let mut fs = vec![assemble(&scenario.objective, n, n_x, n_u)?];
        for c in &scenario.constraints {
            fs.push(assemble(c, n, n_x, n_u)?);
        }
        let pm = crate::linsys::prediction_matrices(&scenario.system, n)?;
        let gs = fs
            .iter()
            .map(|f| condense(f, &pm))
            .collect::<Result<Vec<_>>>()?;
        let mats: Vec<_> = gs.iter().map(|g| g.control_quad.clone()).collect();
        let sigma = find_uniform_sign_vector(&mats).map_err(Error::NotOdnp)?;
        let regions = admissible_regions(&gs, &sigma)?;
        Ok(Self {
            scenario,
            fs,
            gs,
            sigma,
            regions,
        })
    }

    /// The assembled horizon quadratics, objective first.
    pub fn horizon_quadratics(&self) -> &[HorizonQuadratic] {
        &self.fs
    }

    /// The condensed family, objective first.
    pub fn condensed(&self) -> &[CondensedQuadratic] {
        &self.gs
    }

    /// The uniform sign vector over the stacked controls.
    pub fn sigma(&self) -> &SignVector {
        &self.sigma
    }

    pub fn regions(&self) -> &AdmissibleRegions {
        &self.regions
    }
}

/// Everything a single solve produces, for reporting and for the
/// receding-horizon loop.
#[derive(Debug, Clone)]
pub struct StepSolution {
    /// Recovered stacked control over the whole horizon.
    pub u: DVector<f64>,
    /// Relaxation objective (equals the point objective within the
    /// certificate gap when `certificate.exact`).
    pub objective: f64,
    pub region: RegionLabel,
    pub sigma_bar: SignVector,
    pub certificate: ExactnessCertificate,
    /// Stacked predicted states `(x(0), ..., x(N))` under `u`.
    pub predicted: DVector<f64>,
    pub iterations: usize,
    pub solver_message: Option<String>,
    pub solve_ms: f64,
}

/// Solves one instance from `x0`: classify the state, pick the matching
/// sign vector (the plus one when both regions admit the state), solve the
/// relaxation, recover the control sequence, and audit it.
pub fn solve_step(prep: &PreparedScenario, x0: &DVector<f64>) -> Result<StepSolution> {
    let start = Instant::now();
    let region = classify_state(x0, &prep.regions);
    let sigma_bar = match region {
        RegionLabel::Plus | RegionLabel::Both => prep.sigma.prepend_plus(),
        RegionLabel::Minus => prep.sigma.prepend_plus_negated(),
        RegionLabel::Neither => {
            let (plus_violated, minus_violated) = region_violations(x0, &prep.regions);
            return Err(Error::NeitherRegion {
                plus_violated,
                minus_violated,
            });
        }
    };
    let family = homogenize(&prep.gs, x0)?;
    if !check_family_odnp(&family, &sigma_bar) {
        return Err(Error::NumericalFailure(
            "region test and homogenized coupling signs disagree; \
             the state sits on a region boundary beyond tolerance"
                .into(),
        ));
    }
    let prog = build_relaxation(&family);
    let sol = solve(&prog, &prep.scenario.solver);
    if sol.status != SolveStatus::Optimal {
        return Err(Error::SolverFailure(sol.status));
    }
    let u = reconstruct(&sol, &sigma_bar)?;
    let certificate = certify(&family, sol.objective, &u, CERT_FEAS_TOL, CERT_GAP_TOL);
    let predicted = propagate(&prep.scenario.system, x0, &u)?;
    log::debug!(
        "step solve: region {region}, objective {:.9e}, exact {}",
        sol.objective,
        certificate.exact
    );
    Ok(StepSolution {
        u,
        objective: sol.objective,
        region,
        sigma_bar,
        certificate,
        predicted,
        iterations: sol.iterations,
        solver_message: sol.raw.message.clone(),
        solve_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// One accepted round of the receding-horizon loop.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: usize,
    /// State the solve started from.
    pub state: DVector<f64>,
    /// Applied control: the first slice of the solved sequence.
    pub control: DVector<f64>,
    pub objective: f64,
    pub region: RegionLabel,
    pub sigma_bar: SignVector,
    pub certificate: ExactnessCertificate,
    pub solve_ms: f64,
}

/// Why and where a run stopped early.
#[derive(Debug, Clone)]
pub struct StepFailure {
    pub step: usize,
    pub error: Error,
}

/// A receding-horizon run: the accepted steps, the state reached after the
/// last one, and the failure that ended the run early, if any.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub terminal_state: DVector<f64>,
    pub failure: Option<StepFailure>,
}

/// Runs `steps` rounds from the scenario's initial state, applying only the
/// first control of each solve and propagating with the true dynamics. A
/// failing round (including a round whose exactness certificate does not
/// hold) stops the run and is recorded on the returned trajectory rather
/// than swallowed; `steps = 0` returns just the initial state.
pub fn receding_horizon(prep: &PreparedScenario, steps: usize) -> Trajectory {
    let n_u = prep.scenario.system.n_u();
    let mut x = prep.scenario.x0.clone();
    let mut records = Vec::with_capacity(steps);
    let mut failure = None;
    for k in 0..steps {
        let step = match solve_step(prep, &x) {
            Ok(step) => step,
            Err(error) => {
                failure = Some(StepFailure { step: k, error });
                break;
            }
        };
        if !step.certificate.exact {
            failure = Some(StepFailure {
                step: k,
                error: Error::NumericalFailure(format!(
                    "exactness certificate failed: violation {:.3e}, gap {:.3e}",
                    step.certificate.max_violation, step.certificate.gap
                )),
            });
            break;
        }
        let control = step.u.rows(0, n_u).into_owned();
        let next = prep.scenario.system.step(&x, &control);
        records.push(StepRecord {
            k,
            state: x,
            control,
            objective: step.objective,
            region: step.region,
            sigma_bar: step.sigma_bar,
            certificate: step.certificate,
            solve_ms: step.solve_ms,
        });
        x = next;
    }
    Trajectory {
        records,
        terminal_state: x,
        failure,
    }
}

fn push_number(out: &mut String, v: f64) {
    out.push_str(&format!("{v:.9e}"));
}

impl Trajectory {
    fn dims(&self) -> (usize, usize) {
        let n_x = self.terminal_state.len();
        let n_u = self.records.first().map_or(0, |r| r.control.len());
        (n_x, n_u)
    }

    /// One row per accepted step (`k, x..., u..., objective, region,
    /// verdict, solve_ms`) plus a final row holding only the terminal state.
    /// Numbers carry 10 significant digits.
    pub fn to_csv(&self) -> String {
        let (n_x, n_u) = self.dims();
        let mut out = String::from("k");
        for i in 0..n_x {
            out.push_str(&format!(",x{i}"));
        }
        for i in 0..n_u {
            out.push_str(&format!(",u{i}"));
        }
        out.push_str(",objective,region,verdict,solve_ms\n");
        for r in &self.records {
            out.push_str(&r.k.to_string());
            for v in r.state.iter() {
                out.push(',');
                push_number(&mut out, *v);
            }
            for v in r.control.iter() {
                out.push(',');
                push_number(&mut out, *v);
            }
            out.push(',');
            push_number(&mut out, r.objective);
            out.push_str(&format!(",{}", r.region));
            out.push_str(if r.certificate.exact {
                ",exact"
            } else {
                ",inexact"
            });
            out.push(',');
            push_number(&mut out, r.solve_ms);
            out.push('\n');
        }
        out.push_str(&self.records.len().to_string());
        for v in self.terminal_state.iter() {
            out.push(',');
            push_number(&mut out, *v);
        }
        for _ in 0..n_u {
            out.push(',');
        }
        out.push_str(",,,\n");
        out
    }

    /// Full diagnostics as a JSON document.
    pub fn to_json(&self) -> serde_json::Value {
        let steps: Vec<serde_json::Value> = self
            .records
            .iter()
            .map(|r| {
                serde_json::json!({
                    "k": r.k,
                    "state": r.state.iter().copied().collect::<Vec<f64>>(),
                    "control": r.control.iter().copied().collect::<Vec<f64>>(),
                    "objective": r.objective,
                    "region": r.region.to_string(),
                    "sigma_bar": r.sigma_bar.as_slice(),
                    "certificate": {
                        "exact": r.certificate.exact,
                        "max_violation": r.certificate.max_violation,
                        "gap": r.certificate.gap,
                        "point_objective": r.certificate.point_objective,
                        "relaxation_objective": r.certificate.relaxation_objective,
                    },
                    "solve_ms": r.solve_ms,
                })
            })
            .collect();
        serde_json::json!({
            "steps": steps,
            "terminal_state": self.terminal_state.iter().copied().collect::<Vec<f64>>(),
            "failure": self.failure.as_ref().map(|f| serde_json::json!({
                "step": f.step,
                "error": f.error.to_string(),
            })),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::{zoh_discretize, ContinuousLinearSystem};
    use crate::quadform::Placement;
    use nalgebra::DMatrix;

    /// Two-state reference scenario: cross state cost, per-step squared-norm
    /// annulus [0.2, 0.5] on the controls, total energy at most 2/3 of the
    /// horizon length.
    fn reference_scenario(horizon: usize, x0: Vec<f64>, steps: usize) -> Scenario {
        let system = DiscreteLinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.9, -0.2, 0.0, 0.9]),
            DMatrix::from_row_slice(2, 2, &[0.2, -0.05, 0.0, 0.2]),
        )
        .unwrap();
        let objective = StageSpec {
            state_quad: Some(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])),
            placement: Placement::AllSteps,
            kind: QuadraticKind::Objective,
            ..Default::default()
        };
        let mut constraints = Vec::new();
        for step in 0..horizon {
            for (sign, offset) in [(-1.0, 0.2), (1.0, -0.5)] {
                constraints.push(StageSpec {
                    control_quad: Some(DMatrix::identity(2, 2) * sign),
                    constant: offset,
                    placement: Placement::Step(step),
                    ..Default::default()
                });
            }
        }
        constraints.push(StageSpec {
            control_quad: Some(DMatrix::identity(2, 2)),
            constant: -(horizon as f64) / 3.0,
            placement: Placement::AllSteps,
            ..Default::default()
        });
        Scenario {
            system,
            horizon,
            objective,
            constraints,
            x0: DVector::from_vec(x0),
            steps,
            solver: SolverOptions::default(),
        }
    }

    #[test]
    fn reference_step_is_exact_from_the_minus_region() {
        let prep = PreparedScenario::new(reference_scenario(2, vec![0.0, 0.1], 10)).unwrap();
        let step = solve_step(&prep, &prep.scenario.x0.clone()).unwrap();
        assert_eq!(step.region, RegionLabel::Minus);
        assert!(step.certificate.exact, "{:?}", step.certificate);
        // Applied slice satisfies the step-0 annulus.
        let u0 = step.u.rows(0, 2).into_owned();
        let norm2 = u0.norm_squared();
        assert!(
            (0.2 - 1e-6..=0.5 + 1e-6).contains(&norm2),
            "step-0 control norm^2 {norm2}"
        );
        // Predicted states chain from x0 under the recovered controls.
        assert_eq!(step.predicted.len(), 3 * 2);
        let x1 = prep
            .scenario
            .system
            .step(&prep.scenario.x0, &u0);
        assert_eq!(step.predicted.rows(2, 2).column(0), x1.column(0));
    }

    #[test]
    fn far_state_is_rejected_with_the_violated_halfspaces() {
        let prep = PreparedScenario::new(reference_scenario(2, vec![1.0, 0.5], 1)).unwrap();
        match solve_step(&prep, &DVector::from_vec(vec![1.0, 0.5])) {
            Err(Error::NeitherRegion {
                plus_violated,
                minus_violated,
            }) => {
                assert!(!plus_violated.is_empty());
                assert!(!minus_violated.is_empty());
            }
            other => panic!("expected a neither-region error, got {other:?}"),
        }
    }

    #[test]
    fn longer_horizon_recovers_the_far_state() {
        let prep = PreparedScenario::new(reference_scenario(20, vec![1.0, 0.5], 1)).unwrap();
        let step = solve_step(&prep, &DVector::from_vec(vec![1.0, 0.5])).unwrap();
        assert!(step.certificate.exact, "{:?}", step.certificate);
        assert_eq!(step.u.len(), 40);
    }

    #[test]
    fn ten_rounds_chain_exactly_and_stay_exact() {
        let prep = PreparedScenario::new(reference_scenario(2, vec![0.0, 0.1], 10)).unwrap();
        let traj = receding_horizon(&prep, 10);
        assert!(traj.failure.is_none(), "{:?}", traj.failure);
        assert_eq!(traj.records.len(), 10);
        for (i, r) in traj.records.iter().enumerate() {
            assert_eq!(r.k, i);
            assert!(r.certificate.exact);
            let norm2 = r.control.norm_squared();
            assert!((0.2 - 1e-6..=0.5 + 1e-6).contains(&norm2), "round {i}: {norm2}");
            // Bit-exact chain: the recorded next state is the one propagation
            // computes from the recorded state and control.
            let next = prep.scenario.system.step(&r.state, &r.control);
            let recorded = traj
                .records
                .get(i + 1)
                .map(|r| r.state.clone())
                .unwrap_or_else(|| traj.terminal_state.clone());
            assert_eq!(next, recorded, "round {i} breaks the chain");
        }
    }

    #[test]
    fn zero_steps_returns_only_the_initial_state() {
        let prep = PreparedScenario::new(reference_scenario(2, vec![0.0, 0.1], 0)).unwrap();
        let traj = receding_horizon(&prep, 0);
        assert!(traj.records.is_empty());
        assert_eq!(traj.terminal_state, DVector::from_vec(vec![0.0, 0.1]));
        assert!(traj.failure.is_none());
    }

    #[test]
    fn failed_round_is_recorded_not_swallowed() {
        // From (1, 0.5) with the short horizon the very first round fails.
        let prep = PreparedScenario::new(reference_scenario(2, vec![1.0, 0.5], 3)).unwrap();
        let traj = receding_horizon(&prep, 3);
        assert!(traj.records.is_empty());
        let failure = traj.failure.expect("run should fail at round 0");
        assert_eq!(failure.step, 0);
        assert!(matches!(failure.error, Error::NeitherRegion { .. }));
    }

    #[test]
    fn csv_shape_and_precision() {
        let prep = PreparedScenario::new(reference_scenario(2, vec![0.0, 0.1], 10)).unwrap();
        let traj = receding_horizon(&prep, 3);
        let csv = traj.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 1 + 3 + 1, "{csv}");
        assert_eq!(lines[0], "k,x0,x1,u0,u1,objective,region,verdict,solve_ms");
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first.len(), 9);
        assert_eq!(first[0], "0");
        assert_eq!(first[7], "exact");
        // 10 significant digits in scientific notation.
        assert!(first[1].contains('e'), "{}", first[1]);
        let terminal: Vec<&str> = lines[4].split(',').collect();
        assert_eq!(terminal[0], "3");
        assert!(terminal[4].is_empty() && terminal[5].is_empty());

        let json = traj.to_json();
        assert_eq!(json["steps"].as_array().unwrap().len(), 3);
        assert!(json["failure"].is_null());
        assert_eq!(json["terminal_state"].as_array().unwrap().len(), 2);
    }

    /// Three-bus grid: state cost maximizes terminal voltage disagreement,
    /// controls capped at unit squared norm each step.
    fn grid_scenario() -> Scenario {
        let a_c = DMatrix::from_row_slice(
            3,
            3,
            &[-5.625, 5.0, 0.0, 5.0, -15.0, 10.0, 0.0, 10.0, -9.5],
        );
        let b_c = DMatrix::from_row_slice(3, 2, &[5.0, 0.0, 0.0, 0.0, 0.0, 5.0]);
        let system =
            zoh_discretize(&ContinuousLinearSystem::new(a_c, b_c).unwrap(), 0.1).unwrap();
        let horizon = 20;
        // Disagreement Laplacian: J(x) = sum of squared voltage differences.
        let disagreement = DMatrix::from_row_slice(
            3,
            3,
            &[2.0, -1.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0],
        );
        let objective = StageSpec {
            state_quad: Some(sym_neg(&disagreement)),
            placement: Placement::Terminal,
            kind: QuadraticKind::Objective,
            ..Default::default()
        };
        let constraints = (0..horizon)
            .map(|k| StageSpec {
                control_quad: Some(DMatrix::identity(2, 2)),
                constant: -1.0,
                placement: Placement::Step(k),
                ..Default::default()
            })
            .collect();
        Scenario {
            system,
            horizon,
            objective,
            constraints,
            x0: DVector::zeros(3),
            steps: 1,
            solver: SolverOptions::default(),
        }
    }

    fn sym_neg(m: &DMatrix<f64>) -> DMatrix<f64> {
        -(m + m.transpose()) * 0.5
    }

    #[test]
    fn grid_objective_has_two_negative_eigenvalues_and_mixed_sign_controls() {
        let prep = PreparedScenario::new(grid_scenario()).unwrap();
        let m0 = prep.condensed()[0].control_quad.clone();
        let eigen = m0.symmetric_eigen();
        let negative = eigen.eigenvalues.iter().filter(|&&l| l < -1e-8).count();
        let zeroish = eigen
            .eigenvalues
            .iter()
            .filter(|&&l| l.abs() <= 1e-8)
            .count();
        assert_eq!(negative, 2, "eigenvalues: {:?}", eigen.eigenvalues);
        assert_eq!(negative + zeroish, eigen.eigenvalues.len());

        let step = solve_step(&prep, &DVector::zeros(3)).unwrap();
        assert_eq!(step.region, RegionLabel::Both);
        assert!(step.certificate.exact, "{:?}", step.certificate);
        assert!(step.u.iter().any(|&v| v > 1e-6), "no positive entries");
        assert!(step.u.iter().any(|&v| v < -1e-6), "no negative entries");
        for k in 0..20 {
            let cap = step.u.rows(2 * k, 2).norm_squared();
            assert!(cap <= 1.0 + 1e-6, "step {k} control cap violated: {cap}");
        }
    }
}
