//! Closed-loop rollouts, controller synthesis, and the basin and tracking studies.

pub mod basin;
pub mod presets;
pub mod tracking;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{static_balance, step};
use crate::error::{Error, Result};
use crate::linearization::{linearize, LinearizedSystem};
use crate::lqr::{infinite_horizon, CostWeights, GainSet};
use crate::mechanism::{Mechanism, MechanismState};
use crate::minimal::{matched_cost_matrix, MinimalModel};
use crate::systems::SystemKind;
use crate::trajectory::TrajectoryRecord;

/// Which coordinates a controller was designed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Maximal,
    Minimal,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Maximal => "maximal",
            ControllerKind::Minimal => "minimal",
        }
    }
}

pub trait Controller: Sync {
    fn control(&self, k: usize, z: &MechanismState) -> Result<DVector<f64>>;
    /// Feedforward input at step `k`.
    fn nominal_input(&self, k: usize) -> DVector<f64>;
}

fn at<T>(v: &[T], k: usize) -> &T {
    &v[k.min(v.len() - 1)]
}

/// `u = u*_k − K_k (z ⊖ z*_k)`; a single entry makes it time invariant.
#[derive(Debug, Clone)]
pub struct MaximalLqr {
    pub gains: Vec<DMatrix<f64>>,
    pub states: Vec<MechanismState>,
    pub inputs: Vec<DVector<f64>>,
}

impl Controller for MaximalLqr {
    fn control(&self, k: usize, z: &MechanismState) -> Result<DVector<f64>> {
        let dz = z.difference(at(&self.states, k));
        Ok(at(&self.inputs, k) - at(&self.gains, k) * dz)
    }

    fn nominal_input(&self, k: usize) -> DVector<f64> {
        at(&self.inputs, k).clone()
    }
}

/// `u = u*_k − K_k (f(z) − c*_k)` with angle errors wrapped.
#[derive(Debug, Clone)]
pub struct MinimalLqr {
    pub model: MinimalModel,
    pub gains: Vec<DMatrix<f64>>,
    pub coordinates: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Controller for MinimalLqr {
    fn control(&self, k: usize, z: &MechanismState) -> Result<DVector<f64>> {
        let e = self.model.error_to(z, at(&self.coordinates, k))?;
        Ok(at(&self.inputs, k) - at(&self.gains, k) * e)
    }

    fn nominal_input(&self, k: usize) -> DVector<f64> {
        at(&self.inputs, k).clone()
    }
}

/// Replays a fixed input sequence (holding the last entry).
#[derive(Debug, Clone)]
pub struct OpenLoop(pub Vec<DVector<f64>>);

impl Controller for OpenLoop {
    fn control(&self, k: usize, _z: &MechanismState) -> Result<DVector<f64>> {
        Ok(at(&self.0, k).clone())
    }

    fn nominal_input(&self, k: usize) -> DVector<f64> {
        at(&self.0, k).clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Converged { time: f64 },
    Diverged { reason: String },
    Timeout,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Converged { .. } => "converged",
            Outcome::Diverged { .. } => "diverged",
            Outcome::Timeout => "timeout",
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, Outcome::Converged { .. })
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, Outcome::Diverged { .. })
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Converged { time } => write!(f, "converged at {time:.3} s"),
            Outcome::Diverged { reason } => write!(f, "diverged ({reason})"),
            Outcome::Timeout => write!(f, "timeout"),
        }
    }
}

/// Minimal-coordinate reference path used to measure errors and costs.
#[derive(Debug, Clone)]
pub struct ReferencePath {
    pub model: MinimalModel,
    pub coordinates: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl ReferencePath {
    pub fn constant(model: &MinimalModel) -> Self {
        ReferencePath {
            model: model.clone(),
            coordinates: vec![model.reference.clone()],
            inputs: vec![model.input_ref.clone()],
        }
    }

    pub fn error(&self, k: usize, z: &MechanismState) -> Result<DVector<f64>> {
        self.model.error_to(z, at(&self.coordinates, k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    /// Stop as converged once the minimal error norm drops below this radius.
    pub convergence_radius: Option<f64>,
    /// Diverged once any angular velocity component exceeds this value.
    pub blowup_omega: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule { convergence_radius: Some(0.1), blowup_omega: 100.0 * std::f64::consts::PI }
    }
}

/// Quadratic accounting in minimal coordinates: `½(eᵀQe + δuᵀRδu)` with `δu = u − u*`.
#[derive(Debug, Clone)]
pub struct StageCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl StageCost {
    pub fn evaluate(&self, e: &DVector<f64>, du: Option<&DVector<f64>>) -> f64 {
        let mut c = 0.5 * (e.transpose() * &self.q * e)[(0, 0)];
        if let Some(du) = du {
            c += 0.5 * (du.transpose() * &self.r * du)[(0, 0)];
        }
        c.max(0.0)
    }
}

/// Result of one rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub record: TrajectoryRecord,
    pub outcome: Outcome,
    pub max_omega: f64,
}

/// Simulation settings shared by the studies.
pub struct LoopSpec<'a> {
    pub mech: &'a Mechanism,
    pub controller: &'a dyn Controller,
    pub reference: &'a ReferencePath,
    pub dt: f64,
    pub steps: usize,
    pub stop: StopRule,
    pub cost: Option<&'a StageCost>,
}

/// Runs the closed loop from `z0`; `disturbance(k)` is added to the commanded input.
pub fn simulate_closed_loop(
    spec: &LoopSpec<'_>,
    z0: MechanismState,
    disturbance: &mut dyn FnMut(usize) -> Option<DVector<f64>>,
) -> Result<Rollout> {
    let mut record = TrajectoryRecord::start(z0, 0.0);
    let mut max_omega = 0.0f64;
    for k in 0..=spec.steps {
        let z = record.states[k].clone();
        let t = record.times[k];
        max_omega = max_omega.max(z.max_angular_speed());
        if !z.is_finite() {
            return Ok(Rollout { record, outcome: Outcome::Diverged { reason: "non-finite state".into() }, max_omega });
        }
        if z.max_angular_speed() > spec.stop.blowup_omega {
            return Ok(Rollout { record, outcome: Outcome::Diverged { reason: "blowup".into() }, max_omega });
        }
        let e = spec.reference.error(k, &z)?;
        let converged = spec.stop.convergence_radius.is_some_and(|r| e.norm() < r);
        if k == spec.steps || converged {
            if let Some(cost) = spec.cost {
                record.add_cost(cost.evaluate(&e, None));
            }
            let outcome = if converged { Outcome::Converged { time: t } } else { Outcome::Timeout };
            return Ok(Rollout { record, outcome, max_omega });
        }
        let u = spec.controller.control(k, &z)?;
        if let Some(cost) = spec.cost {
            let du = &u - spec.controller.nominal_input(k);
            record.add_cost(cost.evaluate(&e, Some(&du)));
        }
        let applied = match disturbance(k) {
            Some(w) => &u + w,
            None => u.clone(),
        };
        match step(spec.mech, &z, &applied, spec.dt) {
            Ok((next, lambda)) => record.push(applied, lambda, next, spec.dt),
            Err(err) => {
                let reason = match err {
                    Error::NewtonDivergence { .. } => "newton divergence".to_string(),
                    Error::SingularKkt => "singular kkt".to_string(),
                    other => other.to_string(),
                };
                return Ok(Rollout { record, outcome: Outcome::Diverged { reason }, max_omega });
            }
        }
    }
    unreachable!("loop returns at k == steps")
}

/// Rolls the plant open loop under `controls`.
pub fn make_open_loop_nominal(
    mech: &Mechanism,
    controls: &[DVector<f64>],
    z0: &MechanismState,
    dt: f64,
) -> Result<TrajectoryRecord> {
    let mut record = TrajectoryRecord::start(z0.clone(), 0.0);
    for (k, u) in controls.iter().enumerate() {
        let (next, lambda) =
            step(mech, &record.states[k], u, dt).map_err(|e| Error::AtStep { index: k, source: Box::new(e) })?;
        record.push(u.clone(), lambda, next, dt);
    }
    Ok(record)
}

/// Weights shared by both controllers of a comparison, in minimal coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimalWeights {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl MinimalWeights {
    pub fn for_system(kind: SystemKind) -> Self {
        match kind {
            SystemKind::Delta2d => MinimalWeights { q: vec![100.0, 100.0, 1.0, 1.0], r: vec![0.01, 0.01] },
            SystemKind::TripleCartpole => MinimalWeights {
                q: vec![10.0, 10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 1.0],
                r: vec![0.1],
            },
            SystemKind::Pendulum => MinimalWeights { q: vec![1.0, 1.0], r: vec![] },
            SystemKind::DoublePendulum => MinimalWeights { q: vec![1.0; 4], r: vec![] },
            SystemKind::Acrobot | SystemKind::Cartpole => MinimalWeights { q: vec![1.0; 4], r: vec![1.0] },
        }
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.q.clone()))
    }

    pub fn r_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.r.clone()))
    }

    pub fn stage_cost(&self) -> StageCost {
        StageCost { q: self.q_matrix(), r: self.r_matrix() }
    }
}

/// Equilibrium data and linearization of the maximal plant at the model reference.
pub struct Equilibrium {
    pub state: MechanismState,
    pub input: DVector<f64>,
    pub system: LinearizedSystem,
    pub f: DMatrix<f64>,
}

pub fn equilibrium(model: &MinimalModel, dt: f64) -> Result<Equilibrium> {
    let mech = model.mechanism()?;
    let state = model.reference_state()?;
    let (input, lambda) = static_balance(&mech, &state)?;
    let system = linearize(&mech, &state, &input, &lambda, dt)?;
    let (_, f) = model.coordinate_map(&state, &state)?;
    Ok(Equilibrium { state, input, system, f })
}

/// Infinite-horizon maximal-coordinate LQR with matched weights `FᵀQF`.
pub fn maximal_equilibrium_lqr(
    model: &MinimalModel,
    weights: &MinimalWeights,
    dt: f64,
    ridge: f64,
) -> Result<(MaximalLqr, GainSet, usize)> {
    let eq = equilibrium(model, dt)?;
    let q = matched_cost_matrix(&weights.q_matrix(), &eq.f)?;
    let w = CostWeights::stationary(q, weights.r_matrix())?.with_ridge(ridge);
    let res = infinite_horizon(&eq.system, &w, crate::lqr::DEFAULT_TOL, crate::lqr::DEFAULT_MAX_ITERS)?;
    let ctrl = MaximalLqr { gains: vec![res.gains.k.clone()], states: vec![eq.state], inputs: vec![eq.input] };
    Ok((ctrl, res.gains, res.iterations))
}

/// Infinite-horizon LQR on the minimal model's own linearization.
pub fn minimal_equilibrium_lqr(
    model: &MinimalModel,
    weights: &MinimalWeights,
    dt: f64,
) -> Result<(MinimalLqr, GainSet, usize)> {
    let (a, b) = model.linearize(&model.reference, &model.input_ref, dt)?;
    let sys = LinearizedSystem::unconstrained(a, b)?;
    let w = CostWeights::stationary(weights.q_matrix(), weights.r_matrix())?;
    let res = infinite_horizon(&sys, &w, crate::lqr::DEFAULT_TOL, crate::lqr::DEFAULT_MAX_ITERS)?;
    let ctrl = MinimalLqr {
        model: model.clone(),
        gains: vec![res.gains.k.clone()],
        coordinates: vec![model.reference.clone()],
        inputs: vec![model.input_ref.clone()],
    };
    Ok((ctrl, res.gains, res.iterations))
}
