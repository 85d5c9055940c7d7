use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    maximal_equilibrium_lqr, minimal_equilibrium_lqr, simulate_closed_loop, Controller, ControllerKind, LoopSpec,
    MinimalWeights, Outcome, ReferencePath, StopRule,
};
use crate::error::{Error, Result};
use crate::minimal::MinimalModel;
use crate::systems::SystemKind;

/// One grid axis over a minimal configuration coordinate. Values are cell centres, so an
/// odd count always contains the midpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub name: String,
    /// Index into the minimal coordinates.
    pub coordinate: usize,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        let w = (self.max - self.min) / self.count as f64;
        (0..self.count).map(|i| self.min + (i as f64 + 0.5) * w).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasinConfig {
    pub system: SystemKind,
    pub controller: ControllerKind,
    pub axes: Vec<GridAxis>,
    pub horizon: f64,
    pub dt: f64,
    pub stop: StopRule,
    pub weights: MinimalWeights,
    /// Ridge added to the matched maximal state weight.
    #[serde(default)]
    pub ridge: f64,
}

impl BasinConfig {
    /// Full-configuration grid with `count` cells per axis.
    pub fn for_system(system: SystemKind, controller: ControllerKind, count: usize, dt: f64) -> Self {
        let axis = |name: &str, coordinate, min, max| GridAxis { name: name.into(), coordinate, min, max, count };
        let axes = match system {
            SystemKind::Pendulum => vec![axis("theta1", 0, 0.0, 2.0 * PI)],
            SystemKind::Acrobot | SystemKind::DoublePendulum => {
                vec![axis("theta1", 0, 0.0, 2.0 * PI), axis("theta2", 1, -PI, PI)]
            }
            SystemKind::Cartpole => vec![axis("y", 0, -2.0, 2.0), axis("theta", 1, -PI, PI)],
            SystemKind::TripleCartpole => vec![axis("y", 0, -2.0, 2.0), axis("theta1", 1, -PI, PI)],
            SystemKind::Delta2d => vec![axis("y", 0, -1.6, 1.6), axis("z", 1, -1.6, 1.6)],
        };
        BasinConfig {
            system,
            controller,
            axes,
            horizon: 25.0,
            dt,
            stop: StopRule::default(),
            weights: MinimalWeights::for_system(system),
            ridge: 0.0,
        }
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.horizon >= 0.0) {
            return Err(Error::InvalidArgument("dt must be positive and horizon nonnegative".into()));
        }
        let n = self.horizon / self.dt;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::InvalidArgument(format!("horizon {} is not a multiple of dt {}", self.horizon, self.dt)));
        }
        Ok(n.round() as usize)
    }

    pub fn validate(&self, model: &MinimalModel) -> Result<()> {
        self.steps()?;
        let n = model.dim() / 2;
        for a in &self.axes {
            if a.count == 0 {
                return Err(Error::InvalidArgument(format!("axis {} has zero count", a.name)));
            }
            if a.coordinate >= n {
                return Err(Error::InvalidArgument(format!("axis {} indexes coordinate {} of {n}", a.name, a.coordinate)));
            }
            if !(a.min <= a.max) {
                return Err(Error::InvalidArgument(format!("axis {} has min > max", a.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub values: Vec<f64>,
    pub outcome: Outcome,
    pub max_omega: f64,
    /// False when no assembled configuration exists for the point.
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinSummary {
    pub config: BasinConfig,
    pub total: usize,
    pub converged: usize,
    pub diverged: usize,
    pub timeout: usize,
    pub infeasible: usize,
    pub basin_fraction: f64,
    /// Converged share of the feasible points.
    pub feasible_basin_fraction: f64,
    pub gain_iterations: usize,
    pub reference_converged: bool,
}

#[derive(Debug, Clone)]
pub struct BasinResult {
    pub points: Vec<GridPoint>,
    pub summary: BasinSummary,
}

/// Builds the time-invariant controller for a basin or spot check.
pub fn equilibrium_controller(
    model: &MinimalModel,
    kind: ControllerKind,
    weights: &MinimalWeights,
    dt: f64,
    ridge: f64,
) -> Result<(Box<dyn Controller>, usize)> {
    Ok(match kind {
        ControllerKind::Maximal => {
            let (c, _, it) = maximal_equilibrium_lqr(model, weights, dt, ridge)?;
            (Box::new(c), it)
        }
        ControllerKind::Minimal => {
            let (c, _, it) = minimal_equilibrium_lqr(model, weights, dt)?;
            (Box::new(c), it)
        }
    })
}

fn grid(axes: &[GridAxis]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for a in axes {
        let vals = a.values();
        out = out.into_iter().flat_map(|p| vals.iter().map(move |v| [p.clone(), vec![*v]].concat())).collect();
    }
    out
}

/// Runs one rollout from minimal coordinates `c0` (velocities as given).
pub fn run_from(
    model: &MinimalModel,
    controller: &dyn Controller,
    c0: &DVector<f64>,
    dt: f64,
    steps: usize,
    stop: &StopRule,
) -> Result<GridPoint> {
    let z0 = match model.maximal_state(c0) {
        Ok(z) => z,
        Err(Error::Infeasible(_)) => {
            return Ok(GridPoint {
                values: Vec::new(),
                outcome: Outcome::Diverged { reason: "infeasible".into() },
                max_omega: 0.0,
                feasible: false,
            })
        }
        Err(e) => return Err(e),
    };
    let mech = model.mechanism()?;
    let reference = ReferencePath::constant(model);
    let spec = LoopSpec { mech: &mech, controller, reference: &reference, dt, steps, stop: stop.clone(), cost: None };
    let r = simulate_closed_loop(&spec, z0, &mut |_| None)?;
    Ok(GridPoint { values: Vec::new(), outcome: r.outcome, max_omega: r.max_omega, feasible: true })
}

pub fn basin_of_attraction(cfg: &BasinConfig) -> Result<BasinResult> {
    let model = MinimalModel::new(cfg.system)?;
    cfg.validate(&model)?;
    let steps = cfg.steps()?;
    let (controller, gain_iterations) = equilibrium_controller(&model, cfg.controller, &cfg.weights, cfg.dt, cfg.ridge)?;
    let controller = controller.as_ref();

    let at_reference = run_from(&model, controller, &model.reference, cfg.dt, steps, &cfg.stop)?;
    let points = grid(&cfg.axes)
        .into_par_iter()
        .map(|values| {
            let mut c0 = model.reference.clone();
            for (a, v) in cfg.axes.iter().zip(&values) {
                c0[a.coordinate] = *v;
            }
            for i in model.dim() / 2..model.dim() {
                c0[i] = 0.0;
            }
            let p = run_from(&model, controller, &c0, cfg.dt, steps, &cfg.stop).unwrap_or_else(|e| GridPoint {
                values: Vec::new(),
                outcome: Outcome::Diverged { reason: e.to_string() },
                max_omega: f64::NAN,
                feasible: true,
            });
            GridPoint { values, ..p }
        })
        .collect::<Vec<_>>();

    let count = |f: &dyn Fn(&GridPoint) -> bool| points.iter().filter(|p| f(p)).count();
    let total = points.len();
    let converged = count(&|p| p.outcome.is_converged());
    let infeasible = count(&|p| !p.feasible);
    let summary = BasinSummary {
        config: cfg.clone(),
        total,
        converged,
        diverged: count(&|p| p.outcome.is_diverged()),
        timeout: count(&|p| p.outcome == Outcome::Timeout),
        infeasible,
        basin_fraction: converged as f64 / total as f64,
        feasible_basin_fraction: if total > infeasible { converged as f64 / (total - infeasible) as f64 } else { 0.0 },
        gain_iterations,
        reference_converged: at_reference.outcome.is_converged(),
    };
    Ok(BasinResult { points, summary })
}

impl BasinResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for a in &self.summary.config.axes {
            let _ = write!(s, "{},", a.name);
        }
        s.push_str("outcome,time_to_converge,max_omega\n");
        for p in &self.points {
            for v in &p.values {
                let _ = write!(s, "{v:.17e},");
            }
            let t = match p.outcome {
                Outcome::Converged { time } => format!("{time:.17e}"),
                _ => String::new(),
            };
            let label = if p.feasible { p.outcome.label() } else { "infeasible" };
            let _ = writeln!(s, "{label},{t},{:.17e}", p.max_omega);
        }
        s
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let json = serde_json::to_string_pretty(&self.summary).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_centres_include_midpoint() {
        let a = GridAxis { name: "t".into(), coordinate: 0, min: -PI, max: PI, count: 17 };
        assert!(a.values()[8].abs() < 1e-15);
        let one = GridAxis { count: 1, min: 2.0, max: 4.0, ..a };
        assert_eq!(one.values(), vec![3.0]);
    }

    #[test]
    fn single_point_at_reference_is_full_basin() {
        let mut cfg = BasinConfig::for_system(SystemKind::Cartpole, ControllerKind::Minimal, 1, 0.01);
        cfg.horizon = 0.5;
        for a in &mut cfg.axes {
            a.min = 0.0;
            a.max = 0.0;
        }
        let r = basin_of_attraction(&cfg).unwrap();
        assert_eq!(r.summary.total, 1);
        assert_eq!(r.summary.basin_fraction, 1.0);
        assert!(r.summary.reference_converged);
    }

    #[test]
    fn horizon_must_be_multiple_of_dt() {
        let mut cfg = BasinConfig::for_system(SystemKind::Acrobot, ControllerKind::Minimal, 3, 0.01);
        cfg.horizon = 0.015;
        assert!(cfg.steps().is_err());
    }
}
